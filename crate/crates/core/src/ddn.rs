//! Disentanglement training: the two encoders, the decoder and the feature
//! discriminator are trained end-to-end on exactly two images. Content
//! features of the clean reference act as real samples for the
//! discriminator, the distortion encoder is pushed to silence on the
//! reference, and both images must be reconstructable from the sum of
//! their content and distortion latents.

use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, collect_params};
use crate::config::{validate_config, RunConfig};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    adversarial_from_scores, l1_grad_raw, l1_raw, regularization_grad_raw, regularization_raw,
    LossReport,
};
use crate::networks::{
    build_networks, DecoderNet, EncoderNet, FeatureDiscriminatorNet,
};
use crate::nn::Adam;

/// Checkpoints are written every this many iterations, plus a final one.
pub const CHECKPOINT_EVERY: u64 = 500;

/// Seeded RNG streams, one per purpose, so staged and monolithic runs draw
/// identical sequences.
pub(crate) mod streams {
    pub const DDN_PATCHES: u64 = 5;
    pub const RESTORE_DATA: u64 = 6;
}

pub const DDN_CHECKPOINT_KIND: &str = "ddn";

/// The trained disentanglement system plus its configuration.
#[derive(Debug)]
pub struct DDNBundle {
    pub content_encoder: EncoderNet,
    pub distortion_encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub discriminator: FeatureDiscriminatorNet,
    pub config: RunConfig,
    pub iterations_done: u64,
    pub final_report: Option<LossReport>,
}

/// Decoder stages are projected back to at most this multiple of their
/// initialization weight norm after every update; see
/// [`DecoderNet::project_weight_norms`].
pub const DECODER_NORM_FACTOR: f64 = 2.0;

/// The discriminator trains on a faster clock than the generator networks.
/// At the shared published rate the adversarial game never engages within
/// the iteration budget: the score head cannot grow order-one logits while
/// the content encoder counter-adapts, scores stay pinned near 0.5, and no
/// disentanglement pressure reaches the encoders.
pub const DISC_LR_MULTIPLIER: f64 = 10.0;

/// One ADAM instance per trained network.
pub struct OptimState {
    pub content_encoder: Adam,
    pub distortion_encoder: Adam,
    pub decoder: Adam,
    pub discriminator: Adam,
}

impl OptimState {
    pub fn new(cfg: &RunConfig) -> Self {
        let make = || Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        OptimState {
            content_encoder: make(),
            distortion_encoder: make(),
            decoder: make(),
            discriminator: Adam::new(
                cfg.learning_rate * DISC_LR_MULTIPLIER,
                cfg.adam_beta1,
                cfg.adam_beta2,
            ),
        }
    }
}

/// Uniformly random square crop. Patches from the two training images are
/// drawn independently: nothing assumes the pair is aligned.
pub fn sample_patch(
    img: &ImageTensor,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let (_, h, w) = img.shape();
    if h < size || w < size {
        return Err(Error::Shape(format!(
            "image {h}x{w} smaller than patch size {size}"
        )));
    }
    let y = rng.gen_range(0..=h - size);
    let x = rng.gen_range(0..=w - size);
    img.crop(y, x, size)
}

/// One end-to-end iteration: forward both patches through both encoders,
/// compute every loss, then update the discriminator on its own loss and
/// the generator networks on the weighted total. All gradients are taken
/// at the pre-update parameters.
pub fn training_step(
    bundle: &mut DDNBundle,
    patch_r: &ImageTensor,
    patch_d: &ImageTensor,
    opt: &mut OptimState,
) -> Result<LossReport> {
    let cfg = bundle.config.clone();
    let expect = (3, cfg.patch_size, cfg.patch_size);
    if patch_r.shape() != expect || patch_d.shape() != expect {
        return Err(Error::Shape(format!(
            "training patches must be {expect:?}, got {:?} and {:?}",
            patch_r.shape(),
            patch_d.shape()
        )));
    }
    let iteration = bundle.iterations_done + 1;

    // forward: both images through both encoders, then the decoder on the
    // summed latents
    let ((fwd_rc, fwd_dc), (fwd_rd, fwd_dd)) = rayon::join(
        || {
            rayon::join(
                || bundle.content_encoder.forward_train(patch_r.data()),
                || bundle.content_encoder.forward_train(patch_d.data()),
            )
        },
        || {
            rayon::join(
                || bundle.distortion_encoder.forward_train(patch_r.data()),
                || bundle.distortion_encoder.forward_train(patch_d.data()),
            )
        },
    );
    let f_rc = fwd_rc.outputs.last().expect("depth >= 1");
    let f_dc = fwd_dc.outputs.last().expect("depth >= 1");
    let f_rd = fwd_rd.outputs.last().expect("depth >= 1");
    let f_dd = fwd_dd.outputs.last().expect("depth >= 1");
    let sum_d: Array3<f64> = f_dc + f_dd;
    let sum_r: Array3<f64> = f_rc + f_rd;
    let (dec_d, dec_r) = rayon::join(
        || bundle.decoder.forward_train(&sum_d),
        || bundle.decoder.forward_train(&sum_r),
    );

    // losses
    let d_cy = l1_raw(&dec_d.output, patch_d.data());
    let r_cy = l1_raw(&dec_r.output, patch_r.data());
    let reg = regularization_raw(fwd_rd.outputs.iter());
    let disc_r = bundle.discriminator.forward_train(f_rc);
    let disc_d = bundle.discriminator.forward_train(f_dc);
    let (adv_d, adv_g) = adversarial_from_scores(disc_r.score, disc_d.score);
    let report = LossReport::new(adv_d, adv_g, reg, d_cy, r_cy, &cfg);
    if !report.is_finite() {
        return Err(Error::Diverged {
            term: report.non_finite_term().unwrap_or("total"),
            iteration,
        });
    }

    // discriminator gradients on its own loss (reference features real,
    // distorted features fake)
    let (_, disc_grads_real) = bundle.discriminator.backward(&disc_r, -1.0 / disc_r.score);
    let (_, disc_grads_fake) = bundle
        .discriminator
        .backward(&disc_d, 1.0 / (1.0 - disc_d.score));
    let mut disc_grads = disc_grads_real;
    disc_grads.merge(disc_grads_fake);

    // generator-side adversarial gradient, through the pre-update
    // discriminator
    let (g_fdc_adv, _) = bundle.discriminator.backward(&disc_d, -1.0 / disc_d.score);

    // cyclic gradients through the decoder, already loss-weighted
    let mut g_out_d = l1_grad_raw(&dec_d.output, patch_d.data());
    g_out_d.mapv_inplace(|v| v * cfg.lambda_dcy);
    let mut g_out_r = l1_grad_raw(&dec_r.output, patch_r.data());
    g_out_r.mapv_inplace(|v| v * cfg.lambda_rcy);
    let ((g_sum_d, dec_grads_d), (g_sum_r, dec_grads_r)) = rayon::join(
        || bundle.decoder.backward(&dec_d, &g_out_d),
        || bundle.decoder.backward(&dec_r, &g_out_r),
    );
    let mut dec_grads = dec_grads_d;
    dec_grads.merge(dec_grads_r);

    // regularization gradients on every stage output of E_d given the
    // reference
    let mut reg_extras = regularization_grad_raw(&fwd_rd.outputs);
    for g in &mut reg_extras {
        g.mapv_inplace(|v| v * cfg.lambda_reg);
    }

    // latent gradients per encoder pass
    let g_f_dc: Array3<f64> = &g_sum_d + &g_fdc_adv.mapv(|v| v * cfg.lambda_adv);
    let g_f_dd = &g_sum_d;
    let g_f_rc = &g_sum_r;
    let g_f_rd = &g_sum_r;

    let (ec_grads, ed_grads) = rayon::join(
        || {
            let mut g = bundle.content_encoder.backward(&fwd_dc, &g_f_dc, None);
            g.merge(bundle.content_encoder.backward(&fwd_rc, g_f_rc, None));
            g
        },
        || {
            let mut g = bundle.distortion_encoder.backward(&fwd_dd, g_f_dd, None);
            g.merge(
                bundle
                    .distortion_encoder
                    .backward(&fwd_rd, g_f_rd, Some(&reg_extras)),
            );
            g
        },
    );

    for (name, grads) in [
        ("adv_d", &disc_grads),
        ("total", &ec_grads),
        ("total", &ed_grads),
        ("total", &dec_grads),
    ] {
        if !grads.is_finite() {
            return Err(Error::Diverged { term: name, iteration });
        }
    }

    // updates: discriminator first, then the generator networks
    opt.discriminator
        .step(&mut bundle.discriminator, &disc_grads);
    opt.content_encoder
        .step(&mut bundle.content_encoder, &ec_grads);
    opt.distortion_encoder
        .step(&mut bundle.distortion_encoder, &ed_grads);
    opt.decoder.step(&mut bundle.decoder, &dec_grads);
    bundle.decoder.project_weight_norms(DECODER_NORM_FACTOR);

    bundle.iterations_done = iteration;
    bundle.final_report = Some(report);
    Ok(report)
}

/// Where training writes its artifacts. `None` disables writing.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrainArtifacts<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    pub loss_log: Option<&'a Path>,
}

impl TrainArtifacts<'_> {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Trains the disentanglement networks on one (reference, distorted) image
/// pair, sampling one independent random patch from each image per
/// iteration. Emits periodic checkpoints and a per-iteration loss log when
/// artifact paths are given.
pub fn train_ddn(
    i_r: &ImageTensor,
    i_d: &ImageTensor,
    cfg: &RunConfig,
    artifacts: TrainArtifacts<'_>,
) -> Result<DDNBundle> {
    let cfg = validate_config(cfg.clone())?;
    for (name, img) in [("reference", i_r), ("distorted", i_d)] {
        let (_, h, w) = img.shape();
        if h < cfg.patch_size || w < cfg.patch_size {
            return Err(Error::Shape(format!(
                "{name} image {h}x{w} smaller than patch size {}",
                cfg.patch_size
            )));
        }
    }
    let nets = build_networks(&cfg, (cfg.patch_size, cfg.patch_size))?;
    let mut bundle = DDNBundle {
        content_encoder: nets.content_encoder,
        distortion_encoder: nets.distortion_encoder,
        decoder: nets.decoder,
        discriminator: nets.discriminator,
        config: cfg.clone(),
        iterations_done: 0,
        final_report: None,
    };
    let mut opt = OptimState::new(&cfg);
    let mut patch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    patch_rng.set_stream(streams::DDN_PATCHES);

    let mut log = match artifacts.loss_log {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "iteration,adv_d,adv_g,reg,d_cy,r_cy,total")?;
            Some(w)
        }
        None => None,
    };

    for iter in 1..=cfg.ddn_iterations {
        let patch_r = sample_patch(i_r, cfg.patch_size, &mut patch_rng)?;
        let patch_d = sample_patch(i_d, cfg.patch_size, &mut patch_rng)?;
        let report = training_step(&mut bundle, &patch_r, &patch_d, &mut opt)?;
        if let Some(w) = &mut log {
            writeln!(
                w,
                "{iter},{},{},{},{},{},{}",
                report.adv_d, report.adv_g, report.reg, report.d_cy, report.r_cy, report.total
            )?;
        }
        if iter % CHECKPOINT_EVERY == 0 {
            if let Some(dir) = artifacts.checkpoint_dir {
                save_ddn_checkpoint(&bundle, &dir.join(format!("ckpt_iter_{iter:06}")))?;
            }
        }
    }
    if let Some(w) = &mut log {
        w.flush()?;
    }
    if let Some(dir) = artifacts.checkpoint_dir {
        save_ddn_checkpoint(&bundle, &dir.join("ckpt_final"))?;
    }
    Ok(bundle)
}

pub fn save_ddn_checkpoint(bundle: &DDNBundle, dir: &Path) -> Result<()> {
    let tensors = collect_params(&[
        &bundle.content_encoder,
        &bundle.distortion_encoder,
        &bundle.decoder,
        &bundle.discriminator,
    ]);
    checkpoint::save_checkpoint(
        dir,
        DDN_CHECKPOINT_KIND,
        bundle.iterations_done,
        bundle.config.seed,
        &bundle.config.to_canonical_string(),
        &tensors,
    )?;
    Ok(())
}

/// Rebuilds a bundle from a checkpoint directory: the architecture comes
/// from the embedded config snapshot, the parameters from the blobs.
pub fn load_ddn_bundle(dir: &Path) -> Result<DDNBundle> {
    let (manifest, tensors) = checkpoint::read_checkpoint(dir)?;
    if manifest.kind != DDN_CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "expected a {DDN_CHECKPOINT_KIND} checkpoint, found kind `{}`",
            manifest.kind
        )));
    }
    let cfg = RunConfig::from_str(&manifest.config_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let nets = crate::networks::build_like(&cfg)?;
    let mut bundle = DDNBundle {
        content_encoder: nets.content_encoder,
        distortion_encoder: nets.distortion_encoder,
        decoder: nets.decoder,
        discriminator: nets.discriminator,
        config: cfg,
        iterations_done: manifest.iteration,
        final_report: None,
    };
    checkpoint::apply_params(&mut bundle.content_encoder, &tensors)?;
    checkpoint::apply_params(&mut bundle.distortion_encoder, &tensors)?;
    checkpoint::apply_params(&mut bundle.decoder, &tensors)?;
    checkpoint::apply_params(&mut bundle.discriminator, &tensors)?;
    Ok(bundle)
}
