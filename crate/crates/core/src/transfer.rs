//! Distortion transfer: decode the reference's content latent plus an
//! alpha-scaled copy of the distorted image's distortion latent, stamping a
//! graded amount of the disentangled distortion onto the clean reference.
//! Grading over alpha = 1..n yields the supervised distillation dataset.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::ddn::DDNBundle;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::image::{load_image, save_image, ImageTensor};

pub const DATASET_MANIFEST: &str = "manifest.txt";
pub const DATASET_CLEAN: &str = "clean.png";

/// One supervised training pair: the reference with grade-`alpha`
/// distortion stamped on, and the clean reference itself.
#[derive(Debug, Clone)]
pub struct DistilledPair {
    pub distorted: ImageTensor,
    pub clean: ImageTensor,
    pub alpha: u32,
}

/// Whole-image latents used by the transfer: the reference through the
/// content encoder, the distorted image through the distortion encoder.
/// Inputs are reflect-padded to the encoder's downsampling factor; the
/// original spatial size is returned for the post-decode crop.
pub fn transfer_latents(
    bundle: &DDNBundle,
    i_r: &ImageTensor,
    i_d: &ImageTensor,
) -> Result<(FeatureMap, FeatureMap, (usize, usize))> {
    if i_r.shape() != i_d.shape() {
        return Err(Error::Shape(format!(
            "reference {:?} and distorted {:?} must share a size for transfer",
            i_r.shape(),
            i_d.shape()
        )));
    }
    let m = bundle.content_encoder.descriptor().downsample;
    let (pad_r, h, w) = i_r.pad_to_multiple(m)?;
    let (pad_d, _, _) = i_d.pad_to_multiple(m)?;
    let (f_rc, _) = bundle.content_encoder.encode(&pad_r)?;
    let (f_dd, _) = bundle.distortion_encoder.encode(&pad_d)?;
    Ok((f_rc, f_dd, (h, w)))
}

/// The graded latent combination: content plus `alpha_scale * alpha` times
/// the distortion latent.
pub fn transfer_latent(
    bundle: &DDNBundle,
    f_rc: &FeatureMap,
    f_dd: &FeatureMap,
    alpha: u32,
) -> Result<FeatureMap> {
    f_rc.add_scaled(f_dd, bundle.config.alpha_scale * alpha as f64)
}

/// Stamps grade-`alpha` distortion onto the reference. `alpha = 0`
/// reproduces the decoded content latent alone.
pub fn transfer_distortion(
    bundle: &DDNBundle,
    i_r: &ImageTensor,
    i_d: &ImageTensor,
    alpha: u32,
) -> Result<ImageTensor> {
    let (f_rc, f_dd, (h, w)) = transfer_latents(bundle, i_r, i_d)?;
    let combined = transfer_latent(bundle, &f_rc, &f_dd, alpha)?;
    bundle.decoder.decode(&combined)?.crop_to(h, w)
}

/// Builds the supervised dataset: one pair per alpha in `1..=n_alpha`,
/// every pair sharing the clean reference. When `out_dir` is given the
/// dataset is also written to disk as `clean.png`, `pairs/alpha_<k>.png`
/// and a `manifest.txt` with `<k> <filename>` lines.
pub fn generate_kd_dataset(
    bundle: &DDNBundle,
    i_r: &ImageTensor,
    i_d: &ImageTensor,
    out_dir: Option<&Path>,
) -> Result<Vec<DistilledPair>> {
    let n = bundle.config.n_alpha;
    let (f_rc, f_dd, (h, w)) = transfer_latents(bundle, i_r, i_d)?;
    // decoding different alpha grades is embarrassingly parallel
    let pairs: Vec<DistilledPair> = (1..=n)
        .into_par_iter()
        .map(|alpha| -> Result<DistilledPair> {
            let combined = transfer_latent(bundle, &f_rc, &f_dd, alpha)?;
            let distorted = bundle.decoder.decode(&combined)?.crop_to(h, w)?;
            Ok(DistilledPair {
                distorted,
                clean: i_r.clone(),
                alpha,
            })
        })
        .collect::<Result<_>>()?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("pairs"))?;
        save_image(i_r, &dir.join(DATASET_CLEAN))?;
        let mut manifest = String::new();
        for pair in &pairs {
            let rel = format!("pairs/alpha_{}.png", pair.alpha);
            save_image(&pair.distorted, &dir.join(&rel))?;
            let _ = writeln!(manifest, "{} {rel}", pair.alpha);
        }
        std::fs::write(dir.join(DATASET_MANIFEST), manifest)?;
    }
    Ok(pairs)
}

/// Reads a dataset directory back. Validates that alphas are exactly
/// `1..=n` with no gaps and that every image decodes to the clean image's
/// shape.
pub fn load_kd_dataset(dir: &Path) -> Result<Vec<DistilledPair>> {
    let manifest_path = dir.join(DATASET_MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let clean = load_image(&dir.join(DATASET_CLEAN))?;
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (alpha_str, rel) = line
            .split_once(' ')
            .ok_or_else(|| Error::Dataset(format!("bad manifest line `{line}`")))?;
        let alpha: u32 = alpha_str
            .parse()
            .map_err(|_| Error::Dataset(format!("bad alpha `{alpha_str}`")))?;
        let distorted = load_image(&dir.join(rel))?;
        if distorted.shape() != clean.shape() {
            return Err(Error::Dataset(format!(
                "pair {alpha} has shape {:?}, clean is {:?}",
                distorted.shape(),
                clean.shape()
            )));
        }
        pairs.push(DistilledPair {
            distorted,
            clean: clean.clone(),
            alpha,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("dataset manifest lists no pairs".into()));
    }
    pairs.sort_by_key(|p| p.alpha);
    for (i, p) in pairs.iter().enumerate() {
        if p.alpha != i as u32 + 1 {
            return Err(Error::Dataset(format!(
                "alphas must cover 1..=n exactly once; found {} at position {i}",
                p.alpha
            )));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::ddn::{train_ddn, TrainArtifacts};
    use crate::degradations::{apply_degradation, synthetic_aerial, DegradationSpec};

    fn untrained_bundle(n_alpha: u32) -> DDNBundle {
        let cfg = RunConfig {
            patch_size: 32,
            ddn_iterations: 0,
            n_alpha,
            ..RunConfig::default()
        };
        let clean = synthetic_aerial(48, 48, 5);
        let distorted = apply_degradation(&clean, &DegradationSpec::default_compose()).unwrap();
        train_ddn(&clean, &distorted, &cfg, TrainArtifacts::none()).unwrap()
    }

    fn pair(h: usize, w: usize) -> (ImageTensor, ImageTensor) {
        let clean = synthetic_aerial(h, w, 9);
        let distorted = apply_degradation(&clean, &DegradationSpec::default_compose()).unwrap();
        (clean, distorted)
    }

    #[test]
    fn combined_latent_is_exact_linear_combination() {
        let bundle = untrained_bundle(4);
        let (i_r, i_d) = pair(48, 48);
        let (f_rc, f_dd, _) = transfer_latents(&bundle, &i_r, &i_d).unwrap();
        for alpha in [0u32, 1, 7, 10] {
            let combined = transfer_latent(&bundle, &f_rc, &f_dd, alpha).unwrap();
            let weight = 0.1 * alpha as f64;
            for ((c, r), d) in combined
                .data()
                .iter()
                .zip(f_rc.data().iter())
                .zip(f_dd.data().iter())
            {
                assert_eq!(*c, r + weight * d);
            }
        }
    }

    #[test]
    fn alpha_ten_at_default_scale_weights_distortion_by_one() {
        let bundle = untrained_bundle(10);
        assert_eq!(bundle.config.alpha_scale * 10.0, 1.0);
        let (i_r, i_d) = pair(48, 48);
        let (f_rc, f_dd, _) = transfer_latents(&bundle, &i_r, &i_d).unwrap();
        let combined = transfer_latent(&bundle, &f_rc, &f_dd, 10).unwrap();
        let direct = f_rc.add(&f_dd).unwrap();
        assert_eq!(combined.data(), direct.data());
    }

    #[test]
    fn output_shape_follows_input_even_when_padding() {
        let bundle = untrained_bundle(2);
        // 50 is not divisible by the x4 downsample factor
        let (i_r, i_d) = pair(50, 46);
        let out = transfer_distortion(&bundle, &i_r, &i_d, 3).unwrap();
        assert_eq!(out.shape(), (3, 50, 46));
    }

    #[test]
    fn mismatched_input_sizes_rejected() {
        let bundle = untrained_bundle(2);
        let (i_r, _) = pair(48, 48);
        let (_, i_d) = pair(32, 32);
        assert!(transfer_latents(&bundle, &i_r, &i_d).is_err());
    }

    #[test]
    fn dataset_has_exactly_n_alpha_pairs() {
        let bundle = untrained_bundle(5);
        let (i_r, i_d) = pair(48, 48);
        let pairs = generate_kd_dataset(&bundle, &i_r, &i_d, None).unwrap();
        assert_eq!(pairs.len(), 5);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.alpha, i as u32 + 1);
            assert_eq!(p.clean, i_r);
            assert_eq!(p.distorted.shape(), i_r.shape());
        }
    }

    #[test]
    fn single_pair_dataset() {
        let bundle = untrained_bundle(1);
        let (i_r, i_d) = pair(48, 48);
        let pairs = generate_kd_dataset(&bundle, &i_r, &i_d, None).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].alpha, 1);
    }

    #[test]
    fn dataset_directory_round_trips_and_is_reproducible() {
        let bundle = untrained_bundle(3);
        let (i_r, i_d) = pair(48, 48);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        generate_kd_dataset(&bundle, &i_r, &i_d, Some(&a)).unwrap();
        generate_kd_dataset(&bundle, &i_r, &i_d, Some(&b)).unwrap();
        for rel in ["manifest.txt", "clean.png", "pairs/alpha_1.png", "pairs/alpha_3.png"] {
            let fa = std::fs::read(a.join(rel)).unwrap();
            let fb = std::fs::read(b.join(rel)).unwrap();
            assert_eq!(fa, fb, "{rel} not byte-identical");
        }
        let loaded = load_kd_dataset(&a).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[2].alpha, 3);
        assert_eq!(loaded[0].clean.shape(), i_r.shape());
    }

    #[test]
    fn manifest_with_gap_rejected() {
        let bundle = untrained_bundle(3);
        let (i_r, i_d) = pair(48, 48);
        let dir = tempfile::tempdir().unwrap();
        generate_kd_dataset(&bundle, &i_r, &i_d, Some(dir.path())).unwrap();
        // drop the alpha=2 line
        let manifest_path = dir.path().join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let filtered: String = text.lines().filter(|l| !l.starts_with("2 ")).fold(
            String::new(),
            |mut acc, l| {
                acc.push_str(l);
                acc.push('\n');
                acc
            },
        );
        std::fs::write(&manifest_path, filtered).unwrap();
        let err = load_kd_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("1..=n"), "{err}");
    }

    #[test]
    fn missing_manifest_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_kd_dataset(dir.path()).unwrap_err(),
            Error::MissingArtifact(_)
        ));
    }
}
