//! Run configuration: every hyperparameter, seed and path governing a
//! pipeline run, stored as flat `key=value` text ('#' starts a comment).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// All knobs for one restoration run.
///
/// The numeric defaults reproduce the published training recipe: loss
/// weights (1, 10, 1, 1), one hundred graded transfer levels at 0.1 per
/// level, 4000 disentanglement iterations, 150 distillation epochs, ADAM
/// with betas 0.9/0.99 at learning rate 1e-4 and patch size 512.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Weight on the feature adversarial (generator) term.
    pub lambda_adv: f64,
    /// Weight on the feature regularization term.
    pub lambda_reg: f64,
    /// Weight on the distorted-image cyclic term.
    pub lambda_dcy: f64,
    /// Weight on the reference-image cyclic term.
    pub lambda_rcy: f64,
    /// Number of graded distortion levels in the KD dataset.
    pub n_alpha: u32,
    /// Latent weight contributed per distortion level.
    pub alpha_scale: f64,
    /// Disentanglement training iterations.
    pub ddn_iterations: u64,
    /// Restoration (distillation) training epochs.
    pub restore_epochs: u32,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Square training patch side, in pixels.
    pub patch_size: usize,
    pub seed: u64,
    /// Channel width of the first encoder stage; later stages double it.
    pub base_width: usize,
    /// Number of encoder stages (and of intermediate feature maps).
    pub depth: usize,
    /// Total spatial downsampling factor of an encoder (power of two).
    pub downsample: usize,

    /// Clean reference image path.
    pub reference: Option<PathBuf>,
    /// Distorted input image path.
    pub distorted: Option<PathBuf>,
    /// Optional aligned ground truth for evaluation.
    pub ground_truth: Option<PathBuf>,
    /// Output root; the `SATRES_OUT` env var is consulted when unset.
    pub out: Option<PathBuf>,

    /// Clean source image for the `synth` stage.
    pub clean: Option<PathBuf>,
    /// Degradation spec string for the `synth` stage.
    pub degrade: Option<String>,
    /// Crop offset (rows, cols) between reference and ground-truth crops.
    pub offset: (usize, usize),
    /// Side of the two square crops taken by `synth`; auto-sized when unset.
    pub crop_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda_adv: 1.0,
            lambda_reg: 10.0,
            lambda_dcy: 1.0,
            lambda_rcy: 1.0,
            n_alpha: 100,
            alpha_scale: 0.1,
            ddn_iterations: 4000,
            restore_epochs: 150,
            learning_rate: 0.0001,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            patch_size: 512,
            seed: 0,
            base_width: 32,
            depth: 3,
            downsample: 4,
            reference: None,
            distorted: None,
            ground_truth: None,
            out: None,
            clean: None,
            degrade: None,
            offset: (16, 16),
            crop_size: None,
        }
    }
}

/// Returns `cfg` unchanged if every field invariant holds; otherwise reports
/// the first violated field with its constraint.
pub fn validate_config(cfg: RunConfig) -> Result<RunConfig> {
    fn fail(msg: String) -> Result<RunConfig> {
        Err(Error::Config(msg))
    }
    for (name, v) in [
        ("lambda_adv", cfg.lambda_adv),
        ("lambda_reg", cfg.lambda_reg),
        ("lambda_dcy", cfg.lambda_dcy),
        ("lambda_rcy", cfg.lambda_rcy),
    ] {
        if !v.is_finite() || v < 0.0 {
            return fail(format!("{name} must be >= 0 (got {v})"));
        }
    }
    if cfg.n_alpha < 1 {
        return fail(format!("n_alpha must be >= 1 (got {})", cfg.n_alpha));
    }
    if !(cfg.alpha_scale.is_finite() && cfg.alpha_scale > 0.0) {
        return fail(format!("alpha_scale must be > 0 (got {})", cfg.alpha_scale));
    }
    if cfg.restore_epochs < 1 {
        return fail(format!("restore_epochs must be >= 1 (got {})", cfg.restore_epochs));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return fail(format!("learning_rate must be > 0 (got {})", cfg.learning_rate));
    }
    for (name, v) in [("adam_beta1", cfg.adam_beta1), ("adam_beta2", cfg.adam_beta2)] {
        if !v.is_finite() || v <= 0.0 || v >= 1.0 {
            return fail(format!("{name} must be in (0, 1) (got {v})"));
        }
    }
    if cfg.patch_size < 1 {
        return fail(format!("patch_size must be >= 1 (got {})", cfg.patch_size));
    }
    if cfg.base_width < 1 {
        return fail(format!("base_width must be >= 1 (got {})", cfg.base_width));
    }
    if cfg.depth < 1 {
        return fail(format!("depth must be >= 1 (got {})", cfg.depth));
    }
    if !cfg.downsample.is_power_of_two() {
        return fail(format!("downsample must be a power of two (got {})", cfg.downsample));
    }
    if (cfg.downsample.trailing_zeros() as usize) > cfg.depth {
        return fail(format!(
            "downsample {} needs more than depth {} stages",
            cfg.downsample, cfg.depth
        ));
    }
    if cfg.patch_size % cfg.downsample != 0 {
        return fail(format!(
            "patch_size {} must be divisible by downsample {}",
            cfg.patch_size, cfg.downsample
        ));
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    /// Parses `key=value` lines. Unknown or duplicate keys are errors.
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{raw}`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate config key `{key}`")));
            }
            cfg.set(key, value)?;
        }
        validate_config(cfg)
    }

    /// Applies a single `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: `{value}`")))
        }
        match key {
            "lambda_adv" => self.lambda_adv = num(key, value)?,
            "lambda_reg" => self.lambda_reg = num(key, value)?,
            "lambda_dcy" => self.lambda_dcy = num(key, value)?,
            "lambda_rcy" => self.lambda_rcy = num(key, value)?,
            "n_alpha" => self.n_alpha = num(key, value)?,
            "alpha_scale" => self.alpha_scale = num(key, value)?,
            "ddn_iterations" => self.ddn_iterations = num(key, value)?,
            "restore_epochs" => self.restore_epochs = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "base_width" => self.base_width = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "downsample" => self.downsample = num(key, value)?,
            "reference" => self.reference = Some(PathBuf::from(value)),
            "distorted" => self.distorted = Some(PathBuf::from(value)),
            "ground_truth" => self.ground_truth = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "clean" => self.clean = Some(PathBuf::from(value)),
            "degrade" => self.degrade = Some(value.to_string()),
            "offset" => {
                let (a, b) = value.split_once(',').ok_or_else(|| {
                    Error::Config(format!("offset must be `rows,cols`, got `{value}`"))
                })?;
                self.offset = (num("offset", a.trim())?, num("offset", b.trim())?);
            }
            "crop_size" => self.crop_size = Some(num(key, value)?),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical serialization: fixed key order, one `key=value` per line.
    /// Optional keys appear only when set.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        let mut w = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        w("lambda_adv", self.lambda_adv.to_string());
        w("lambda_reg", self.lambda_reg.to_string());
        w("lambda_dcy", self.lambda_dcy.to_string());
        w("lambda_rcy", self.lambda_rcy.to_string());
        w("n_alpha", self.n_alpha.to_string());
        w("alpha_scale", self.alpha_scale.to_string());
        w("ddn_iterations", self.ddn_iterations.to_string());
        w("restore_epochs", self.restore_epochs.to_string());
        w("learning_rate", self.learning_rate.to_string());
        w("adam_beta1", self.adam_beta1.to_string());
        w("adam_beta2", self.adam_beta2.to_string());
        w("patch_size", self.patch_size.to_string());
        w("seed", self.seed.to_string());
        w("base_width", self.base_width.to_string());
        w("depth", self.depth.to_string());
        w("downsample", self.downsample.to_string());
        w("offset", format!("{},{}", self.offset.0, self.offset.1));
        if let Some(v) = self.crop_size {
            w("crop_size", v.to_string());
        }
        for (k, v) in [
            ("reference", &self.reference),
            ("distorted", &self.distorted),
            ("ground_truth", &self.ground_truth),
            ("out", &self.out),
            ("clean", &self.clean),
        ] {
            if let Some(p) = v {
                w(k, p.display().to_string());
            }
        }
        if let Some(d) = &self.degrade {
            w("degrade", d.clone());
        }
        s
    }

    /// Hex SHA-256 of the canonical serialization; binds pipeline stages to
    /// one configuration.
    pub fn hash(&self) -> String {
        crate::checkpoint::sha256_hex(self.to_canonical_string().as_bytes())
    }

    /// Output root: the `out` key, else `SATRES_OUT`, else `./satres_out`.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(p) = &self.out {
            return p.clone();
        }
        if let Ok(v) = std::env::var("SATRES_OUT") {
            if !v.is_empty() {
                return PathBuf::from(v);
            }
        }
        PathBuf::from("satres_out")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lambda_adv, 1.0);
        assert_eq!(cfg.lambda_reg, 10.0);
        assert_eq!(cfg.lambda_dcy, 1.0);
        assert_eq!(cfg.lambda_rcy, 1.0);
        assert_eq!(cfg.n_alpha, 100);
        assert_eq!(cfg.alpha_scale, 0.1);
        assert_eq!(cfg.ddn_iterations, 4000);
        assert_eq!(cfg.restore_epochs, 150);
        assert_eq!(cfg.learning_rate, 0.0001);
        assert_eq!(cfg.adam_beta1, 0.9);
        assert_eq!(cfg.adam_beta2, 0.99);
        assert_eq!(cfg.patch_size, 512);
    }

    #[test]
    fn default_config_validates_unchanged() {
        let cfg = RunConfig::default();
        let validated = validate_config(cfg.clone()).unwrap();
        assert_eq!(validated, cfg);
    }

    #[test]
    fn negative_lambda_reg_rejected() {
        let cfg = RunConfig {
            lambda_reg: -1.0,
            ..RunConfig::default()
        };
        let err = validate_config(cfg).unwrap_err();
        assert!(err.to_string().contains("lambda_reg must be >= 0"), "{err}");
    }

    #[test]
    fn zero_n_alpha_rejected() {
        let cfg = RunConfig {
            n_alpha: 0,
            ..RunConfig::default()
        };
        let err = validate_config(cfg).unwrap_err();
        assert!(err.to_string().contains("n_alpha must be >= 1"), "{err}");
    }

    #[test]
    fn beta_outside_open_interval_rejected() {
        let cfg = RunConfig {
            adam_beta1: 1.0,
            ..RunConfig::default()
        };
        assert!(validate_config(cfg).is_err());
    }

    #[test]
    fn parse_handles_comments_and_whitespace() {
        let text = "# comment\nlambda_reg = 5  # trailing\n\nseed=9\n";
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.lambda_reg, 5.0);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn parse_rejects_unknown_key() {
        let err = RunConfig::from_str("lambda_regg=1\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
    }

    #[test]
    fn parse_rejects_duplicate_key() {
        let err = RunConfig::from_str("seed=1\nseed=2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn canonical_string_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("reference", "a/b.png").unwrap();
        cfg.set("degrade", "blur:1.5").unwrap();
        cfg.set("offset", "3,7").unwrap();
        let text = cfg.to_canonical_string();
        let back = RunConfig::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
