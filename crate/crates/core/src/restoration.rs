//! Distilled restoration: the pretrained content encoder is reused frozen
//! as the restoration network's encoder, and only a fresh decoder is
//! trained with MSE over the graded transfer pairs. Restoring is a single
//! pass of encode-then-decode.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, collect_params, params_checksum};
use crate::config::{validate_config, RunConfig};
use crate::ddn::{streams, DDNBundle};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{mse_grad_raw, mse_raw};
use crate::networks::{build_like, DecoderNet, EncoderNet};
use crate::nn::Adam;
use crate::transfer::DistilledPair;

pub const RESTORATION_CHECKPOINT_KIND: &str = "restoration";

/// Encoder-decoder restoration model. The encoder is the DDN content
/// encoder and stays frozen during distillation.
#[derive(Debug)]
pub struct RestorationNet {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub config: RunConfig,
    pub epochs_done: u32,
}

/// Training result: the model plus the mean training MSE per epoch.
#[derive(Debug)]
pub struct RestorationTraining {
    pub net: RestorationNet,
    pub epoch_mse: Vec<f64>,
}

/// Trains the restoration decoder on the distilled dataset with the frozen
/// pretrained encoder. The encoder's parameters are bit-identical before
/// and after.
pub fn train_restoration(
    bundle: &DDNBundle,
    dataset: &[DistilledPair],
    cfg: &RunConfig,
    loss_log: Option<&Path>,
) -> Result<RestorationTraining> {
    let encoder = bundle.content_encoder.clone();
    let decoder = build_like(cfg)?.restoration_decoder;
    train_decoder_impl(encoder, decoder, false, dataset, cfg, loss_log)
}

/// Baseline for the distillation-speedup claim: identical architecture and
/// data order, but the encoder starts fresh and trains along with the
/// decoder.
pub fn train_restoration_from_scratch(
    dataset: &[DistilledPair],
    cfg: &RunConfig,
    loss_log: Option<&Path>,
) -> Result<RestorationTraining> {
    let nets = build_like(cfg)?;
    train_decoder_impl(
        nets.content_encoder,
        nets.restoration_decoder,
        true,
        dataset,
        cfg,
        loss_log,
    )
}

fn train_decoder_impl(
    mut encoder: EncoderNet,
    mut decoder: DecoderNet,
    train_encoder: bool,
    dataset: &[DistilledPair],
    cfg: &RunConfig,
    loss_log: Option<&Path>,
) -> Result<RestorationTraining> {
    let cfg = validate_config(cfg.clone())?;
    if dataset.is_empty() {
        return Err(Error::Dataset("restoration needs a non-empty dataset".into()));
    }
    let mut opt_dec = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut opt_enc = Adam::new(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(streams::RESTORE_DATA);

    let mut log = match loss_log {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "epoch,mean_mse")?;
            Some(w)
        }
        None => None,
    };

    let m = encoder.descriptor().downsample;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_mse = Vec::with_capacity(cfg.restore_epochs as usize);

    for epoch in 1..=cfg.restore_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &idx in &order {
            let pair = &dataset[idx];
            let (_, h, w) = pair.distorted.shape();
            // co-located crops keep the pair aligned; small images are
            // reflect-padded up to the downsampling factor instead
            let (x_in, target) = if h >= cfg.patch_size && w >= cfg.patch_size {
                let y = rng.gen_range(0..=h - cfg.patch_size);
                let x = rng.gen_range(0..=w - cfg.patch_size);
                (
                    pair.distorted.crop(y, x, cfg.patch_size)?,
                    pair.clean.crop(y, x, cfg.patch_size)?,
                )
            } else {
                let (pd, _, _) = pair.distorted.pad_to_multiple(m)?;
                let (pc, _, _) = pair.clean.pad_to_multiple(m)?;
                (pd, pc)
            };

            let enc_fwd = encoder.forward_train(x_in.data());
            let latent = enc_fwd.outputs.last().expect("depth >= 1");
            let dec_fwd = decoder.forward_train(latent);
            let loss = mse_raw(&dec_fwd.output, target.data());
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    term: "mse",
                    iteration: epoch as u64,
                });
            }
            sum += loss;
            let g_out = mse_grad_raw(&dec_fwd.output, target.data());
            let (g_latent, dec_grads) = decoder.backward(&dec_fwd, &g_out);
            if train_encoder {
                let enc_grads = encoder.backward(&enc_fwd, &g_latent, None);
                opt_enc.step(&mut encoder, &enc_grads);
            }
            opt_dec.step(&mut decoder, &dec_grads);
        }
        let mean = sum / dataset.len() as f64;
        epoch_mse.push(mean);
        if let Some(w) = &mut log {
            writeln!(w, "{epoch},{mean}")?;
        }
    }
    if let Some(w) = &mut log {
        w.flush()?;
    }

    Ok(RestorationTraining {
        net: RestorationNet {
            encoder,
            decoder,
            config: cfg.clone(),
            epochs_done: cfg.restore_epochs,
        },
        epoch_mse,
    })
}

/// Final inference: encode with the frozen content encoder, decode with the
/// distilled decoder. Inputs with awkward sizes are reflect-padded to the
/// downsampling factor and cropped back afterwards.
pub fn restore(net: &RestorationNet, i_d: &ImageTensor) -> Result<ImageTensor> {
    let m = net.encoder.descriptor().downsample;
    let (padded, h, w) = i_d.pad_to_multiple(m)?;
    let (latent, _) = net.encoder.encode(&padded)?;
    net.decoder.decode(&latent)?.crop_to(h, w)
}

pub fn save_restoration_checkpoint(net: &RestorationNet, dir: &Path) -> Result<()> {
    let tensors = collect_params(&[&net.encoder, &net.decoder]);
    checkpoint::save_checkpoint(
        dir,
        RESTORATION_CHECKPOINT_KIND,
        net.epochs_done as u64,
        net.config.seed,
        &net.config.to_canonical_string(),
        &tensors,
    )?;
    Ok(())
}

pub fn load_restoration(dir: &Path) -> Result<RestorationNet> {
    let (manifest, tensors) = checkpoint::read_checkpoint(dir)?;
    if manifest.kind != RESTORATION_CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!(
            "expected a {RESTORATION_CHECKPOINT_KIND} checkpoint, found kind `{}`",
            manifest.kind
        )));
    }
    let cfg = RunConfig::from_str(&manifest.config_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let nets = build_like(&cfg)?;
    let mut net = RestorationNet {
        encoder: nets.content_encoder,
        decoder: nets.restoration_decoder,
        config: cfg,
        epochs_done: manifest.iteration as u32,
    };
    checkpoint::apply_params(&mut net.encoder, &tensors)?;
    checkpoint::apply_params(&mut net.decoder, &tensors)?;
    Ok(net)
}

/// Convenience wrapper for the frozen-encoder contract in tests and the
/// acceptance suite.
pub fn encoder_checksum(encoder: &EncoderNet) -> String {
    params_checksum(encoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddn::{train_ddn, TrainArtifacts};
    use crate::degradations::{apply_degradation, synthetic_aerial, DegradationSpec};
    use crate::transfer::generate_kd_dataset;

    fn fixture(n_alpha: u32, ddn_iters: u64) -> (DDNBundle, Vec<DistilledPair>, ImageTensor) {
        let cfg = RunConfig {
            patch_size: 32,
            ddn_iterations: ddn_iters,
            n_alpha,
            restore_epochs: 2,
            ..RunConfig::default()
        };
        let clean = synthetic_aerial(48, 48, 31);
        let distorted = apply_degradation(&clean, &DegradationSpec::default_compose()).unwrap();
        let bundle = train_ddn(&clean, &distorted, &cfg, TrainArtifacts::none()).unwrap();
        let dataset = generate_kd_dataset(&bundle, &clean, &distorted, None).unwrap();
        (bundle, dataset, distorted)
    }

    #[test]
    fn encoder_frozen_bit_exact() {
        let (bundle, dataset, _) = fixture(3, 0);
        let before = encoder_checksum(&bundle.content_encoder);
        let trained = train_restoration(&bundle, &dataset, &bundle.config, None).unwrap();
        let after = encoder_checksum(&trained.net.encoder);
        assert_eq!(before, after);
    }

    #[test]
    fn empty_dataset_rejected() {
        let (bundle, _, _) = fixture(1, 0);
        let err = train_restoration(&bundle, &[], &bundle.config, None).unwrap_err();
        assert!(err.to_string().contains("non-empty"), "{err}");
    }

    #[test]
    fn training_reduces_mse() {
        let (bundle, dataset, _) = fixture(3, 0);
        let cfg = RunConfig {
            restore_epochs: 25,
            ..bundle.config.clone()
        };
        let trained = train_restoration(&bundle, &dataset, &cfg, None).unwrap();
        let first = trained.epoch_mse.first().unwrap();
        let last = trained.epoch_mse.last().unwrap();
        assert!(last < first, "epoch mse should fall: {first} -> {last}");
        assert_eq!(trained.epoch_mse.len(), 25);
    }

    #[test]
    fn restore_preserves_shape_through_padding() {
        let (bundle, dataset, _) = fixture(2, 0);
        let trained = train_restoration(&bundle, &dataset, &bundle.config, None).unwrap();
        // 50x46 is not divisible by the x4 downsampling factor
        let odd = synthetic_aerial(50, 46, 4);
        let out = restore(&trained.net, &odd).unwrap();
        assert_eq!(out.shape(), (3, 50, 46));
        // restoring a restored image is well-defined and shape-preserving
        let again = restore(&trained.net, &out).unwrap();
        assert_eq!(again.shape(), out.shape());
    }

    #[test]
    fn training_is_deterministic() {
        let (bundle, dataset, _) = fixture(3, 2);
        let run = || {
            let t = train_restoration(&bundle, &dataset, &bundle.config, None).unwrap();
            (
                params_checksum(&t.net.decoder),
                t.epoch_mse.clone(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn scratch_baseline_sees_same_data_but_trains_encoder() {
        let (bundle, dataset, _) = fixture(3, 0);
        let kd = train_restoration(&bundle, &dataset, &bundle.config, None).unwrap();
        let scratch =
            train_restoration_from_scratch(&dataset, &bundle.config, None).unwrap();
        // scratch encoder moves away from its fresh initialization
        let fresh = build_like(&bundle.config).unwrap().content_encoder;
        assert_ne!(
            params_checksum(&scratch.net.encoder),
            params_checksum(&fresh)
        );
        // while the distilled encoder is the bundle's, untouched
        assert_eq!(
            params_checksum(&kd.net.encoder),
            params_checksum(&bundle.content_encoder)
        );
        assert_eq!(kd.epoch_mse.len(), scratch.epoch_mse.len());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (bundle, dataset, distorted) = fixture(2, 0);
        let trained = train_restoration(&bundle, &dataset, &bundle.config, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_restoration_checkpoint(&trained.net, dir.path()).unwrap();
        let loaded = load_restoration(dir.path()).unwrap();
        assert_eq!(
            params_checksum(&trained.net.encoder),
            params_checksum(&loaded.encoder)
        );
        assert_eq!(
            params_checksum(&trained.net.decoder),
            params_checksum(&loaded.decoder)
        );
        // loaded model restores identically
        let a = restore(&trained.net, &distorted).unwrap();
        let b = restore(&loaded, &distorted).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_checkpoint_kind_rejected() {
        let (bundle, _, _) = fixture(1, 0);
        let dir = tempfile::tempdir().unwrap();
        crate::ddn::save_ddn_checkpoint(&bundle, dir.path()).unwrap();
        let err = load_restoration(dir.path()).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
    }
}
