//! Pipeline orchestration: the three training/inference steps plus the
//! synthetic-pair and evaluation stages, each runnable in isolation from
//! persisted artifacts. Artifact locations are fixed relative to the
//! output root, and every run appends to a `run_manifest.txt` that pins
//! the configuration hash, so mixing stages from different configs into
//! one output directory fails fast.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::sha256_hex;
use crate::config::{validate_config, RunConfig};
use crate::ddn::{load_ddn_bundle, train_ddn, TrainArtifacts};
use crate::degradations::{make_validation_pair, DegradationSpec};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImageTensor};
use crate::metrics::EvalReport;
use crate::restoration::{
    load_restoration, restore, save_restoration_checkpoint, train_restoration,
};
use crate::transfer::{generate_kd_dataset, load_kd_dataset};

pub const RUN_MANIFEST: &str = "run_manifest.txt";

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ddn,
    Transfer,
    Distill,
    Restore,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ddn => "train-ddn",
            Stage::Transfer => "transfer",
            Stage::Distill => "train-restore",
            Stage::Restore => "restore",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Artifact locations under one output root.
#[derive(Debug, Clone)]
pub struct StagePaths {
    pub root: PathBuf,
    pub synth_dir: PathBuf,
    pub ddn_dir: PathBuf,
    pub ddn_final: PathBuf,
    pub ddn_loss: PathBuf,
    pub dataset_dir: PathBuf,
    pub restore_dir: PathBuf,
    pub restore_final: PathBuf,
    pub restore_loss: PathBuf,
    pub restored_png: PathBuf,
    pub eval_csv: PathBuf,
    pub run_manifest: PathBuf,
}

impl StagePaths {
    pub fn new(cfg: &RunConfig) -> Self {
        let root = cfg.out_dir();
        StagePaths {
            synth_dir: root.join("synth"),
            ddn_dir: root.join("ddn"),
            ddn_final: root.join("ddn").join("ckpt_final"),
            ddn_loss: root.join("ddn").join("ddn_loss.csv"),
            dataset_dir: root.join("dataset"),
            restore_dir: root.join("restore"),
            restore_final: root.join("restore").join("ckpt_final"),
            restore_loss: root.join("restore").join("restore_loss.csv"),
            restored_png: root.join("restored.png"),
            eval_csv: root.join("eval.csv"),
            run_manifest: root.join(RUN_MANIFEST),
            root,
        }
    }
}

fn require_path<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing config field `{name}`")))
}

fn require_artifact(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Guards the output directory against config mixing and appends one stage
/// record with its artifact checksums.
fn record_stage(
    paths: &StagePaths,
    cfg: &RunConfig,
    stage: Stage,
    duration_ms: u128,
    artifacts: &[&Path],
) -> Result<()> {
    std::fs::create_dir_all(&paths.root)?;
    let hash = cfg.hash();
    let mut text = if paths.run_manifest.is_file() {
        let existing = std::fs::read_to_string(&paths.run_manifest)?;
        let first = existing.lines().next().unwrap_or_default();
        let existing_hash = first.strip_prefix("config_hash=").unwrap_or_default();
        if existing_hash != hash {
            return Err(Error::Config(format!(
                "output dir {} was produced with a different config (hash {existing_hash} vs {hash})",
                paths.root.display()
            )));
        }
        existing
    } else {
        format!("config_hash={hash}\nseed={}\n", cfg.seed)
    };
    let _ = writeln!(text, "stage={} duration_ms={duration_ms}", stage.name());
    for artifact in artifacts {
        let bytes = std::fs::read(artifact)?;
        let rel = artifact
            .strip_prefix(&paths.root)
            .unwrap_or(artifact)
            .display();
        let _ = writeln!(text, "artifact={rel} sha256={}", sha256_hex(&bytes));
    }
    std::fs::write(&paths.run_manifest, text)?;
    Ok(())
}

/// Verifies the output directory belongs to this config before heavy work.
fn check_manifest(paths: &StagePaths, cfg: &RunConfig) -> Result<()> {
    if !paths.run_manifest.is_file() {
        return Ok(());
    }
    let existing = std::fs::read_to_string(&paths.run_manifest)?;
    let first = existing.lines().next().unwrap_or_default();
    let existing_hash = first.strip_prefix("config_hash=").unwrap_or_default();
    if existing_hash != cfg.hash() {
        return Err(Error::Config(format!(
            "output dir {} was produced with a different config",
            paths.root.display()
        )));
    }
    Ok(())
}

/// Builds the synthetic validation triple from the configured clean image:
/// `reference.png` (clean crop), `distorted.png` (degraded shifted crop)
/// and `gt.png` (the shifted crop itself), plus a record of the spec used.
pub fn stage_synth(cfg: &RunConfig) -> Result<()> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();

    let clean_path = require_path(&cfg.clean, "clean")?;
    let clean = load_image(clean_path)?;
    let spec = match &cfg.degrade {
        Some(s) => DegradationSpec::parse(s)?,
        None => DegradationSpec::default_compose(),
    };
    let (_, h, w) = clean.shape();
    let crop = match cfg.crop_size {
        Some(c) => c,
        None => {
            let max_off = cfg.offset.0.max(cfg.offset.1);
            let avail = h.min(w).saturating_sub(max_off);
            (avail / cfg.downsample) * cfg.downsample
        }
    };
    if crop == 0 {
        return Err(Error::Shape("clean image too small for synth crops".into()));
    }
    let (i_r, i_d, gt) = make_validation_pair(&clean, &spec, cfg.offset, crop)?;

    std::fs::create_dir_all(&paths.synth_dir)?;
    let r_path = paths.synth_dir.join("reference.png");
    let d_path = paths.synth_dir.join("distorted.png");
    let g_path = paths.synth_dir.join("gt.png");
    save_image(&i_r, &r_path)?;
    save_image(&i_d, &d_path)?;
    save_image(&gt, &g_path)?;
    let record = format!(
        "source={}\ndegrade={spec}\noffset={},{}\ncrop_size={crop}\n",
        clean_path.display(),
        cfg.offset.0,
        cfg.offset.1
    );
    std::fs::write(paths.synth_dir.join("synth_spec.txt"), record)?;

    record_stage(
        &paths,
        &cfg,
        Stage::Synth,
        started.elapsed().as_millis(),
        &[&r_path, &d_path, &g_path],
    )
}

fn load_inputs(cfg: &RunConfig) -> Result<(ImageTensor, ImageTensor)> {
    let i_r = load_image(require_path(&cfg.reference, "reference")?)?;
    let i_d = load_image(require_path(&cfg.distorted, "distorted")?)?;
    Ok((i_r, i_d))
}

/// Step 1: disentanglement training. Writes periodic checkpoints and the
/// loss log under `ddn/`.
pub fn stage_train_ddn(cfg: &RunConfig) -> Result<()> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();
    let (i_r, i_d) = load_inputs(&cfg)?;
    train_ddn(
        &i_r,
        &i_d,
        &cfg,
        TrainArtifacts {
            checkpoint_dir: Some(&paths.ddn_dir),
            loss_log: Some(&paths.ddn_loss),
        },
    )?;
    record_stage(
        &paths,
        &cfg,
        Stage::Ddn,
        started.elapsed().as_millis(),
        &[&paths.ddn_final.join("manifest.txt"), &paths.ddn_loss],
    )
}

/// Step 1 -> 2 bridge: build the graded distortion dataset from the final
/// DDN checkpoint.
pub fn stage_transfer(cfg: &RunConfig) -> Result<()> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();
    require_artifact(&paths.ddn_final.join("manifest.txt"))?;
    let bundle = load_ddn_bundle(&paths.ddn_final)?;
    let (i_r, i_d) = load_inputs(&cfg)?;
    generate_kd_dataset(&bundle, &i_r, &i_d, Some(&paths.dataset_dir))?;
    record_stage(
        &paths,
        &cfg,
        Stage::Transfer,
        started.elapsed().as_millis(),
        &[&paths.dataset_dir.join("manifest.txt")],
    )
}

/// Step 2: distillation training of the restoration decoder over the
/// persisted dataset, with the frozen content encoder.
pub fn stage_train_restore(cfg: &RunConfig) -> Result<()> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();
    require_artifact(&paths.ddn_final.join("manifest.txt"))?;
    require_artifact(&paths.dataset_dir.join("manifest.txt"))?;
    let bundle = load_ddn_bundle(&paths.ddn_final)?;
    let dataset = load_kd_dataset(&paths.dataset_dir)?;
    let trained = train_restoration(&bundle, &dataset, &cfg, Some(&paths.restore_loss))?;
    save_restoration_checkpoint(&trained.net, &paths.restore_final)?;
    record_stage(
        &paths,
        &cfg,
        Stage::Distill,
        started.elapsed().as_millis(),
        &[
            &paths.restore_final.join("manifest.txt"),
            &paths.restore_loss,
        ],
    )
}

/// Step 3: run the distilled network on the distorted input.
pub fn stage_restore(cfg: &RunConfig) -> Result<PathBuf> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();
    require_artifact(&paths.restore_final.join("manifest.txt"))?;
    let net = load_restoration(&paths.restore_final)?;
    let i_d = load_image(require_path(&cfg.distorted, "distorted")?)?;
    let restored = restore(&net, &i_d)?;
    save_image(&restored, &paths.restored_png)?;
    record_stage(
        &paths,
        &cfg,
        Stage::Restore,
        started.elapsed().as_millis(),
        &[&paths.restored_png],
    )?;
    Ok(paths.restored_png)
}

/// Compares the restored output against the configured ground truth and
/// writes `eval.csv`.
pub fn stage_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let cfg = validate_config(cfg.clone())?;
    let paths = StagePaths::new(&cfg);
    check_manifest(&paths, &cfg)?;
    let started = Instant::now();
    require_artifact(&paths.restored_png)?;
    let gt = load_image(require_path(&cfg.ground_truth, "ground_truth")?)?;
    let restored = load_image(&paths.restored_png)?;
    let report = EvalReport::evaluate(&[("restored", &restored, &gt)])?;
    report.write_csv(&paths.eval_csv)?;
    record_stage(
        &paths,
        &cfg,
        Stage::Evaluate,
        started.elapsed().as_millis(),
        &[&paths.eval_csv],
    )?;
    Ok(report)
}

/// Result of a full pipeline run.
#[derive(Debug)]
pub struct RunSummary {
    pub restored_png: PathBuf,
    pub report: Option<EvalReport>,
}

/// Runs disentanglement, transfer, distillation and restoration in order,
/// plus evaluation when a ground truth is configured. Every stage reads its
/// inputs from the persisted artifacts of the previous one, so a monolithic
/// run and a stage-by-stage run produce identical outputs.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let cfg = validate_config(cfg.clone())?;
    stage_train_ddn(&cfg).map_err(|e| e.in_stage(Stage::Ddn.name()))?;
    stage_transfer(&cfg).map_err(|e| e.in_stage(Stage::Transfer.name()))?;
    stage_train_restore(&cfg).map_err(|e| e.in_stage(Stage::Distill.name()))?;
    let restored_png =
        stage_restore(&cfg).map_err(|e| e.in_stage(Stage::Restore.name()))?;
    let report = if cfg.ground_truth.is_some() {
        Some(stage_evaluate(&cfg).map_err(|e| e.in_stage(Stage::Evaluate.name()))?)
    } else {
        None
    };
    Ok(RunSummary {
        restored_png,
        report,
    })
}
