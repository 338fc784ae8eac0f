//! Full-reference quality metrics (PSNR and luminance SSIM) and the CSV
//! evaluation report.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// PSNR cap reported for identical images, where the raw value diverges.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR in decibels at data range 1.0. `capped` marks the zero-MSE case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub capped: bool,
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<Psnr> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "psnr: images {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mse = crate::losses::mse_raw(a.data(), b.data());
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            capped: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * (1.0 / mse).log10(),
        capped: false,
    })
}

/// BT.601 luminance.
fn luminance(img: &ImageTensor) -> Array2<f64> {
    let (_, h, w) = img.shape();
    let d = img.data();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * d[[0, y, x]] + 0.587 * d[[1, y, x]] + 0.114 * d[[2, y, x]]
    })
}

/// Valid-mode separable Gaussian filtering (no padding; output shrinks by
/// the window size minus one).
fn filter_valid(x: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for ox in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                acc += kv * x[[y, ox + j]];
            }
            rows[[y, ox]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for oy in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                acc += kv * rows[[oy + j, x]];
            }
            out[[oy, x]] = acc;
        }
    }
    out
}

fn ssim_kernel() -> Vec<f64> {
    let radius = (SSIM_WINDOW / 2) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean local SSIM on luminance: Gaussian window 11 with sigma 1.5,
/// stability constants (0.01)^2 and (0.03)^2 at data range 1.0.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ssim: images {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (_, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let x = luminance(a);
    let y = luminance(b);
    let kernel = ssim_kernel();

    let mu_x = filter_valid(&x, &kernel);
    let mu_y = filter_valid(&y, &kernel);
    let xx = filter_valid(&(&x * &x), &kernel);
    let yy = filter_valid(&(&y * &y), &kernel);
    let xy = filter_valid(&(&x * &y), &kernel);

    let mut total = 0.0;
    let n = mu_x.len();
    for ((((&mx, &my), &sxx), &syy), &sxy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter())
        .zip(yy.iter())
        .zip(xy.iter())
    {
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// One evaluated image pair.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub label: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-image rows plus an aggregate (mean) row, serialized as CSV.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn evaluate(pairs: &[(&str, &ImageTensor, &ImageTensor)]) -> Result<EvalReport> {
        let mut rows = Vec::with_capacity(pairs.len());
        for (label, a, b) in pairs {
            rows.push(EvalRow {
                label: label.to_string(),
                psnr: psnr(a, b)?,
                ssim: ssim(a, b)?,
            });
        }
        Ok(EvalReport { rows })
    }

    pub fn mean_psnr_db(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr.db).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// CSV with header `image,psnr_db,psnr_capped,ssim`, one row per image
    /// and a final `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr_db,psnr_capped,ssim\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{},{:.6}\n",
                r.label, r.psnr.db, r.psnr.capped, r.ssim
            ));
        }
        s.push_str(&format!(
            "aggregate,{:.6},,{:.6}\n",
            self.mean_psnr_db(),
            self.mean_ssim()
        ));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradations::{apply_degradation, synthetic_aerial, DegradationSpec};
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(data: Array3<f64>) -> ImageTensor {
        ImageTensor::new(data).unwrap()
    }

    #[test]
    fn identical_images_capped() {
        let a = synthetic_aerial(16, 16, 1);
        let p = psnr(&a, &a).unwrap();
        assert!(p.capped);
        assert_eq!(p.db, PSNR_CAP_DB);
    }

    #[test]
    fn uniform_difference_gives_twenty_db() {
        let a = img(Array3::zeros((3, 4, 4)));
        let b = img(Array3::from_elem((3, 4, 4), 0.1));
        let p = psnr(&a, &b).unwrap();
        assert!(!p.capped);
        assert!((p.db - 20.0).abs() < 1e-12, "{}", p.db);
    }

    #[test]
    fn psnr_matches_independently_scripted_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = img(Array3::from_shape_fn((3, 9, 7), |_| rng.gen()));
        let b = img(Array3::from_shape_fn((3, 9, 7), |_| rng.gen()));
        let p = psnr(&a, &b).unwrap();
        // separate accumulation route
        let mut acc = 0.0;
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            acc += (x - y) * (x - y);
        }
        let want = -10.0 * (acc / (3.0 * 9.0 * 7.0)).log10();
        assert!((p.db - want).abs() < 1e-9);
    }

    #[test]
    fn psnr_invariant_to_shared_pixel_permutation() {
        let a = synthetic_aerial(12, 12, 3);
        let b = apply_degradation(
            &a,
            &DegradationSpec::GaussianNoise { sigma: 0.05, seed: 4 },
        )
        .unwrap();
        let p1 = psnr(&a, &b).unwrap().db;
        // flip both images the same way
        let flip = |i: &ImageTensor| {
            let (c, h, w) = i.shape();
            img(Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
                i.data()[[ch, h - 1 - y, w - 1 - x]]
            }))
        };
        let p2 = psnr(&flip(&a), &flip(&b)).unwrap().db;
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = synthetic_aerial(24, 24, 5);
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn ssim_of_negative_image_is_low() {
        // structured image away from mid-gray, so negation inverts structure
        let a = img(Array3::from_shape_fn((3, 32, 32), |(_, y, x)| {
            if (y / 4 + x / 4) % 2 == 0 {
                0.85
            } else {
                0.15
            }
        }));
        let b = img(a.data().mapv(|v| 1.0 - v));
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.5, "ssim {s}");
    }

    #[test]
    fn ssim_symmetric() {
        let a = synthetic_aerial(20, 20, 6);
        let b = apply_degradation(&a, &DegradationSpec::GaussianBlur { sigma: 1.0 }).unwrap();
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = synthetic_aerial(8, 8, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        let clean = synthetic_aerial(48, 48, 9);
        let mut prev = f64::INFINITY;
        for (i, sigma) in [0.01, 0.03, 0.06, 0.1, 0.2].iter().enumerate() {
            let noisy = apply_degradation(
                &clean,
                &DegradationSpec::GaussianNoise { sigma: *sigma, seed: 100 + i as u64 },
            )
            .unwrap();
            let p = psnr(&clean, &noisy).unwrap().db;
            assert!(p < prev, "sigma {sigma}: {p} !< {prev}");
            prev = p;
        }
    }

    #[test]
    fn report_csv_has_rows_plus_aggregate() {
        let a = synthetic_aerial(16, 16, 1);
        let b = apply_degradation(&a, &DegradationSpec::GaussianBlur { sigma: 1.0 }).unwrap();
        let report = EvalReport::evaluate(&[("restored", &b, &a)]).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3); // header + 1 row + aggregate
        assert!(lines[0].starts_with("image,"));
        assert!(lines[2].starts_with("aggregate,"));
    }

    proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(16))]

        #[test]
        fn ssim_bounded(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = img(Array3::from_shape_fn((3, 12, 12), |_| rng.gen()));
            let b = img(Array3::from_shape_fn((3, 12, 12), |_| rng.gen()));
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s), "ssim {}", s);
        }
    }
}
