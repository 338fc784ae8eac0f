//! Synthetic degradation generators. Real pipeline runs take whatever
//! distortion the input carries; these generators exist to build
//! (clean, distorted) validation pairs with known ground truth, plus a
//! procedural aerial-style test image.

use std::fmt;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// One synthetic degradation. `Compose` applies its parts in order.
#[derive(Debug, Clone, PartialEq)]
pub enum DegradationSpec {
    /// Per-channel gain followed by clamping to [0, 1].
    ColorCast { gains: [f64; 3] },
    /// Convolution with a normalized Gaussian kernel, reflect boundary.
    GaussianBlur { sigma: f64 },
    /// `t * img + (1 - t) * airlight`; stays in [0, 1] without clamping.
    Haze { t: f64, airlight: f64 },
    /// Additive zero-mean Gaussian noise, then clamping.
    GaussianNoise { sigma: f64, seed: u64 },
    Compose(Vec<DegradationSpec>),
}

impl DegradationSpec {
    /// The default validation degradation: a green-shifted color cast,
    /// mild blur and haze stacked together.
    pub fn default_compose() -> Self {
        DegradationSpec::Compose(vec![
            DegradationSpec::ColorCast {
                gains: [0.8, 1.1, 0.8],
            },
            DegradationSpec::GaussianBlur { sigma: 1.5 },
            DegradationSpec::Haze {
                t: 0.7,
                airlight: 0.9,
            },
        ])
    }

    /// Parses a spec string such as `cast:0.8,1.1,0.8;blur:1.5;haze:0.7,0.9`.
    /// Multiple `;`-separated parts compose in order.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(';').map(str::trim).filter(|p| !p.is_empty()).collect();
        if parts.is_empty() {
            return Err(Error::Config("empty degradation spec".into()));
        }
        let mut specs = Vec::with_capacity(parts.len());
        for part in parts {
            specs.push(Self::parse_one(part)?);
        }
        let spec = if specs.len() == 1 {
            specs.pop().expect("one element")
        } else {
            DegradationSpec::Compose(specs)
        };
        spec.validate()?;
        Ok(spec)
    }

    fn parse_one(part: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("degradation spec `{part}`: {msg}"));
        let (kind, args) = part
            .split_once(':')
            .ok_or_else(|| bad("expected kind:args".into()))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{a}`")))
            })
            .collect::<Result<_>>()?;
        match kind.trim() {
            "cast" | "color_cast" => {
                if nums.len() != 3 {
                    return Err(bad("cast needs 3 gains".into()));
                }
                Ok(DegradationSpec::ColorCast {
                    gains: [nums[0], nums[1], nums[2]],
                })
            }
            "blur" | "gaussian_blur" => {
                if nums.len() != 1 {
                    return Err(bad("blur needs 1 sigma".into()));
                }
                Ok(DegradationSpec::GaussianBlur { sigma: nums[0] })
            }
            "haze" => {
                if nums.len() != 2 {
                    return Err(bad("haze needs t,airlight".into()));
                }
                Ok(DegradationSpec::Haze {
                    t: nums[0],
                    airlight: nums[1],
                })
            }
            "noise" | "gaussian_noise" => {
                if nums.is_empty() || nums.len() > 2 {
                    return Err(bad("noise needs sigma[,seed]".into()));
                }
                Ok(DegradationSpec::GaussianNoise {
                    sigma: nums[0],
                    seed: nums.get(1).copied().unwrap_or(0.0) as u64,
                })
            }
            other => Err(bad(format!("unknown kind `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("degradation: {msg}")));
        match self {
            DegradationSpec::ColorCast { gains } => {
                if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
                    return bad(format!("cast gains must be >= 0, got {gains:?}"));
                }
            }
            DegradationSpec::GaussianBlur { sigma } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return bad(format!("blur sigma must be >= 0, got {sigma}"));
                }
            }
            DegradationSpec::Haze { t, airlight } => {
                if !(*t > 0.0 && *t <= 1.0) {
                    return bad(format!("haze t must be in (0, 1], got {t}"));
                }
                if !(0.0..=1.0).contains(airlight) {
                    return bad(format!("haze airlight must be in [0, 1], got {airlight}"));
                }
            }
            DegradationSpec::GaussianNoise { sigma, .. } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return bad(format!("noise sigma must be >= 0, got {sigma}"));
                }
            }
            DegradationSpec::Compose(parts) => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationSpec::ColorCast { gains } => {
                write!(f, "cast:{},{},{}", gains[0], gains[1], gains[2])
            }
            DegradationSpec::GaussianBlur { sigma } => write!(f, "blur:{sigma}"),
            DegradationSpec::Haze { t, airlight } => write!(f, "haze:{t},{airlight}"),
            DegradationSpec::GaussianNoise { sigma, seed } => write!(f, "noise:{sigma},{seed}"),
            DegradationSpec::Compose(parts) => {
                let strs: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "{}", strs.join(";"))
            }
        }
    }
}

/// Sampled, normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// edge sample.
fn reflect(i: i64, n: i64) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn blur_channel(src: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = (src.shape()[0], src.shape()[1]);
    let radius = (kernel.len() / 2) as i64;
    // horizontal then vertical pass; the 2-D kernel is separable
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + j as i64 - radius, w as i64);
                acc += kv * src[[y, sx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + j as i64 - radius, h as i64);
                acc += kv * tmp[[sy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Applies a degradation. Deterministic for a fixed spec (noise carries its
/// own seed).
pub fn apply_degradation(img: &ImageTensor, spec: &DegradationSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let (c, h, w) = img.shape();
    match spec {
        DegradationSpec::ColorCast { gains } => {
            let mut data = img.data().clone();
            for ch in 0..c {
                data.index_axis_mut(ndarray::Axis(0), ch)
                    .mapv_inplace(|v| (v * gains[ch]).clamp(0.0, 1.0));
            }
            ImageTensor::new(data)
        }
        DegradationSpec::GaussianBlur { sigma } => {
            let kernel = gaussian_kernel(*sigma);
            let mut data = Array3::<f64>::zeros((c, h, w));
            for ch in 0..c {
                let blurred =
                    blur_channel(&img.data().index_axis(ndarray::Axis(0), ch).to_owned(), &kernel);
                data.index_axis_mut(ndarray::Axis(0), ch).assign(&blurred);
            }
            ImageTensor::from_unclamped(data)
        }
        DegradationSpec::Haze { t, airlight } => {
            let add = (1.0 - t) * airlight;
            ImageTensor::new(img.data().mapv(|v| t * v + add))
        }
        DegradationSpec::GaussianNoise { sigma, seed } => {
            if *sigma == 0.0 {
                return Ok(img.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let normal = Normal::new(0.0, *sigma).expect("positive sigma");
            let mut data = img.data().clone();
            data.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
            ImageTensor::new(data)
        }
        DegradationSpec::Compose(parts) => {
            let mut cur = img.clone();
            for p in parts {
                cur = apply_degradation(&cur, p)?;
            }
            Ok(cur)
        }
    }
}

/// Builds a validation triple from one clean image: a distortion-free
/// reference crop, a ground-truth crop shifted by `offset` (emulating the
/// misalignment between acquisitions), and the degraded ground truth.
/// Returns `(reference, distorted, ground_truth)`.
pub fn make_validation_pair(
    clean: &ImageTensor,
    spec: &DegradationSpec,
    offset: (usize, usize),
    crop: usize,
) -> Result<(ImageTensor, ImageTensor, ImageTensor)> {
    let (_, h, w) = clean.shape();
    if offset.0 + crop > h || offset.1 + crop > w {
        return Err(Error::Shape(format!(
            "clean image {h}x{w} too small for two {crop}x{crop} crops at offset {offset:?}"
        )));
    }
    let reference = clean.crop(0, 0, crop)?;
    let gt = clean.crop(offset.0, offset.1, crop)?;
    let distorted = apply_degradation(&gt, spec)?;
    Ok((reference, distorted, gt))
}

/// Deterministic procedural aerial-style image: low-frequency terrain,
/// rectangular field patches, a few roads, scattered small structures and
/// fine texture noise.
pub fn synthetic_aerial(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // bilinear value noise at a given cell size
    let mut noise_layer = |cell: usize| -> Array2<f64> {
        let gh = height / cell + 2;
        let gw = width / cell + 2;
        let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen::<f64>());
        Array2::from_shape_fn((height, width), |(y, x)| {
            let fy = y as f64 / cell as f64;
            let fx = x as f64 / cell as f64;
            let (y0, x0) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let a = grid[[y0, x0]] * (1.0 - tx) + grid[[y0, x0 + 1]] * tx;
            let b = grid[[y0 + 1, x0]] * (1.0 - tx) + grid[[y0 + 1, x0 + 1]] * tx;
            a * (1.0 - ty) + b * ty
        })
    };

    let coarse = noise_layer(48);
    let mid = noise_layer(12);
    let mut data = Array3::from_shape_fn((3, height, width), |(c, y, x)| {
        let n1 = coarse[[y, x]];
        let n2 = mid[[y, x]];
        match c {
            0 => 0.26 + 0.30 * n1 + 0.08 * n2,
            1 => 0.32 + 0.34 * n1 + 0.06 * n2,
            _ => 0.18 + 0.20 * n1 + 0.05 * n2,
        }
    });

    // rectangular field patches with distinct tints
    let n_fields = 6 + (height * width) / 16384;
    for _ in 0..n_fields {
        let fh = rng.gen_range(height / 8..height / 3);
        let fw = rng.gen_range(width / 8..width / 3);
        let y0 = rng.gen_range(0..height - fh);
        let x0 = rng.gen_range(0..width - fw);
        let tint = [
            rng.gen_range(0.7..1.3),
            rng.gen_range(0.7..1.3),
            rng.gen_range(0.7..1.3),
        ];
        for c in 0..3 {
            for y in y0..y0 + fh {
                for x in x0..x0 + fw {
                    data[[c, y, x]] *= tint[c];
                }
            }
        }
    }

    // gray roads, horizontal and vertical
    let n_roads = 4;
    for i in 0..n_roads {
        let thickness = rng.gen_range(2..4usize);
        if i % 2 == 0 {
            let y0 = rng.gen_range(0..height - thickness);
            for y in y0..y0 + thickness {
                for x in 0..width {
                    for c in 0..3 {
                        data[[c, y, x]] = 0.55;
                    }
                }
            }
        } else {
            let x0 = rng.gen_range(0..width - thickness);
            for x in x0..x0 + thickness {
                for y in 0..height {
                    for c in 0..3 {
                        data[[c, y, x]] = 0.55;
                    }
                }
            }
        }
    }

    // small bright/dark structures
    let n_buildings = 10 + (height * width) / 8192;
    for _ in 0..n_buildings {
        let bh = rng.gen_range(3..9usize);
        let bw = rng.gen_range(3..9usize);
        if bh + 1 >= height || bw + 1 >= width {
            continue;
        }
        let y0 = rng.gen_range(0..height - bh);
        let x0 = rng.gen_range(0..width - bw);
        let shade = if rng.gen_bool(0.5) {
            rng.gen_range(0.65..0.85)
        } else {
            rng.gen_range(0.1..0.25)
        };
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                for c in 0..3 {
                    data[[c, y, x]] = shade + 0.05 * (c as f64 - 1.0);
                }
            }
        }
    }

    // fine texture
    for v in data.iter_mut() {
        *v += rng.gen_range(-0.02..0.02);
        *v = v.clamp(0.0, 1.0);
    }

    ImageTensor::new(data).expect("values clamped")
}
