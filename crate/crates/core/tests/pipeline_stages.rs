//! End-to-end pipeline behaviour at toy scale: stage-by-stage execution
//! must byte-match the monolithic run, manifests must pin the config, and
//! missing prerequisites must be reported by name.

use std::path::Path;

use satres_core::config::RunConfig;
use satres_core::degradations::synthetic_aerial;
use satres_core::error::Error;
use satres_core::image::save_image;
use satres_core::pipeline::{self, StagePaths};

/// Small but complete configuration. Training budgets are tiny; this suite
/// checks plumbing, not quality.
fn tiny_cfg(out: &Path, synth_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        patch_size: 32,
        base_width: 16,
        ddn_iterations: 20,
        n_alpha: 3,
        restore_epochs: 3,
        seed: 11,
        ..RunConfig::default()
    };
    cfg.out = Some(out.to_path_buf());
    cfg.reference = Some(synth_dir.join("reference.png"));
    cfg.distorted = Some(synth_dir.join("distorted.png"));
    cfg.ground_truth = Some(synth_dir.join("gt.png"));
    cfg
}

/// Generates the shared synth inputs once per test process.
fn make_inputs(root: &Path) -> std::path::PathBuf {
    let clean_path = root.join("clean.png");
    save_image(&synthetic_aerial(96, 96, 3), &clean_path).unwrap();
    let mut cfg = RunConfig {
        offset: (8, 8),
        crop_size: Some(64),
        ..RunConfig::default()
    };
    cfg.clean = Some(clean_path);
    cfg.out = Some(root.join("synth_out"));
    pipeline::stage_synth(&cfg).unwrap();
    root.join("synth_out").join("synth")
}

#[test]
fn staged_run_matches_monolithic_run_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());

    let cfg_mono = tiny_cfg(&dir.path().join("mono"), &synth);
    let summary = pipeline::run(&cfg_mono).unwrap();
    assert!(summary.restored_png.is_file());
    assert!(summary.report.is_some());

    let cfg_staged = tiny_cfg(&dir.path().join("staged"), &synth);
    pipeline::stage_train_ddn(&cfg_staged).unwrap();
    pipeline::stage_transfer(&cfg_staged).unwrap();
    pipeline::stage_train_restore(&cfg_staged).unwrap();
    pipeline::stage_restore(&cfg_staged).unwrap();
    pipeline::stage_evaluate(&cfg_staged).unwrap();

    let mono = std::fs::read(StagePaths::new(&cfg_mono).restored_png).unwrap();
    let staged = std::fs::read(StagePaths::new(&cfg_staged).restored_png).unwrap();
    assert_eq!(mono, staged, "staged and monolithic restored.png differ");

    // the eval CSVs agree as well
    let eval_mono = std::fs::read(StagePaths::new(&cfg_mono).eval_csv).unwrap();
    let eval_staged = std::fs::read(StagePaths::new(&cfg_staged).eval_csv).unwrap();
    assert_eq!(eval_mono, eval_staged);
}

#[test]
fn run_manifest_records_stages_and_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());
    let cfg = tiny_cfg(&dir.path().join("out"), &synth);
    pipeline::run(&cfg).unwrap();
    let paths = StagePaths::new(&cfg);
    let manifest = std::fs::read_to_string(&paths.run_manifest).unwrap();
    assert!(manifest.starts_with(&format!("config_hash={}", cfg.hash())));
    for stage in ["train-ddn", "transfer", "train-restore", "restore", "evaluate"] {
        assert!(
            manifest.contains(&format!("stage={stage} ")),
            "missing {stage} in manifest:\n{manifest}"
        );
    }
    assert!(manifest.contains("artifact=restored.png sha256="));
}

#[test]
fn mixed_config_in_one_output_dir_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());
    let cfg = tiny_cfg(&dir.path().join("out"), &synth);
    pipeline::stage_train_ddn(&cfg).unwrap();
    let other = RunConfig { seed: 99, ..cfg.clone() };
    let err = pipeline::stage_transfer(&other).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(err.to_string().contains("different config"), "{err}");
}

#[test]
fn transfer_without_ddn_checkpoint_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());
    let cfg = tiny_cfg(&dir.path().join("out"), &synth);
    let err = pipeline::stage_transfer(&cfg).unwrap_err();
    match &err {
        Error::MissingArtifact(path) => {
            assert!(path.to_string_lossy().contains("ckpt_final"), "{err}")
        }
        other => panic!("expected MissingArtifact, got {other}"),
    }
}

#[test]
fn missing_distorted_path_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());
    let mut cfg = tiny_cfg(&dir.path().join("out"), &synth);
    cfg.distorted = None;
    let err = pipeline::run(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("`distorted`"), "{err}");
}

#[test]
fn evaluate_before_restore_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let synth = make_inputs(dir.path());
    let cfg = tiny_cfg(&dir.path().join("out"), &synth);
    let err = pipeline::stage_evaluate(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact(_)), "{err}");
}

#[test]
fn synth_with_aligned_offset_writes_identical_reference_and_gt() {
    let dir = tempfile::tempdir().unwrap();
    let clean_path = dir.path().join("clean.png");
    save_image(&synthetic_aerial(80, 80, 5), &clean_path).unwrap();
    let mut cfg = RunConfig {
        offset: (0, 0),
        crop_size: Some(64),
        ..RunConfig::default()
    };
    cfg.clean = Some(clean_path);
    cfg.out = Some(dir.path().join("out"));
    pipeline::stage_synth(&cfg).unwrap();
    let synth = dir.path().join("out").join("synth");
    let r = std::fs::read(synth.join("reference.png")).unwrap();
    let g = std::fs::read(synth.join("gt.png")).unwrap();
    assert_eq!(r, g);
}

#[test]
fn synth_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let clean_path = dir.path().join("clean.png");
    save_image(&synthetic_aerial(80, 80, 6), &clean_path).unwrap();
    let run_synth = |out: &Path| {
        let mut cfg = RunConfig {
            degrade: Some("cast:0.9,1.0,0.9;noise:0.05,4".into()),
            crop_size: Some(48),
            ..RunConfig::default()
        };
        cfg.clean = Some(clean_path.clone());
        cfg.out = Some(out.to_path_buf());
        pipeline::stage_synth(&cfg).unwrap();
        std::fs::read(out.join("synth").join("distorted.png")).unwrap()
    };
    let a = run_synth(&dir.path().join("a"));
    let b = run_synth(&dir.path().join("b"));
    assert_eq!(a, b);
}
