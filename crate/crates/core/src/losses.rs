//! The training objectives: feature adversarial loss, feature
//! regularization loss, the two cyclic reconstruction losses, their
//! weighted total, and the MSE loss used for distillation. Each loss has an
//! explicit gradient so training never depends on an autodiff framework,
//! and every gradient is checked against central finite differences in the
//! tests.

use ndarray::Array3;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::image::ImageTensor;
use crate::networks::FeatureDiscriminatorNet;

/// Per-iteration loss values. `total` is the generator-side composition;
/// the discriminator trains on `adv_d` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub reg: f64,
    pub d_cy: f64,
    pub r_cy: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(adv_d: f64, adv_g: f64, reg: f64, d_cy: f64, r_cy: f64, cfg: &RunConfig) -> Self {
        LossReport {
            adv_d,
            adv_g,
            reg,
            d_cy,
            r_cy,
            total: total_loss(adv_g, reg, d_cy, r_cy, cfg),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.adv_d, self.adv_g, self.reg, self.d_cy, self.r_cy, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// First non-finite term, for divergence diagnostics.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("adv_d", self.adv_d),
            ("adv_g", self.adv_g),
            ("reg", self.reg),
            ("d_cy", self.d_cy),
            ("r_cy", self.r_cy),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

// ---------------------------------------------------------------------------
// Feature adversarial loss

/// Discriminator and generator views of the adversarial objective, given
/// the two scores directly. The discriminator minimizes
/// `-[ln s_real + ln(1 - s_fake)]`; the generator minimizes the
/// non-saturating `-ln s_fake`.
pub fn adversarial_from_scores(score_real: f64, score_fake: f64) -> (f64, f64) {
    let disc = -(score_real.ln() + (1.0 - score_fake).ln());
    let gen = -score_fake.ln();
    (disc, gen)
}

/// Adversarial losses on encoder feature maps: content features of the
/// reference act as real samples, content features of the distorted image
/// as fake ones. Returns `(discriminator_loss, generator_loss)`.
pub fn feature_adversarial_loss(
    f_rc: &FeatureMap,
    f_dc: &FeatureMap,
    disc: &FeatureDiscriminatorNet,
) -> Result<(f64, f64)> {
    if f_rc.shape() != f_dc.shape() {
        return Err(Error::Shape(format!(
            "feature maps {:?} vs {:?}",
            f_rc.shape(),
            f_dc.shape()
        )));
    }
    let s_r = disc.discriminate(f_rc)?;
    let s_d = disc.discriminate(f_dc)?;
    let (d, g) = adversarial_from_scores(s_r, s_d);
    if !(d.is_finite() && g.is_finite()) {
        return Err(Error::Shape("adversarial loss is non-finite".into()));
    }
    Ok((d, g))
}

/// Input-side gradients of both adversarial views.
pub struct AdversarialGrads {
    /// d(discriminator_loss)/d(F_rc)
    pub disc_wrt_real: Array3<f64>,
    /// d(discriminator_loss)/d(F_dc)
    pub disc_wrt_fake: Array3<f64>,
    /// d(generator_loss)/d(F_dc)
    pub gen_wrt_fake: Array3<f64>,
}

pub fn feature_adversarial_grads(
    f_rc: &FeatureMap,
    f_dc: &FeatureMap,
    disc: &FeatureDiscriminatorNet,
) -> Result<AdversarialGrads> {
    if f_rc.shape() != f_dc.shape() {
        return Err(Error::Shape(format!(
            "feature maps {:?} vs {:?}",
            f_rc.shape(),
            f_dc.shape()
        )));
    }
    let fwd_r = disc.forward_train(f_rc.data());
    let fwd_d = disc.forward_train(f_dc.data());
    // d/ds of -ln s, -ln(1-s), -ln s respectively
    let (g_real, _) = disc.backward(&fwd_r, -1.0 / fwd_r.score);
    let (g_fake_disc, _) = disc.backward(&fwd_d, 1.0 / (1.0 - fwd_d.score));
    let (g_fake_gen, _) = disc.backward(&fwd_d, -1.0 / fwd_d.score);
    Ok(AdversarialGrads {
        disc_wrt_real: g_real,
        disc_wrt_fake: g_fake_disc,
        gen_wrt_fake: g_fake_gen,
    })
}

// ---------------------------------------------------------------------------
// Feature regularization loss

/// Mean absolute activation over all of the distortion encoder's stage
/// outputs on the clean reference: the sum of per-map L1 norms divided by
/// the total element count. Zero exactly when every map is identically
/// zero.
pub fn feature_regularization_loss(intermediates: &[FeatureMap]) -> Result<f64> {
    if intermediates.is_empty() {
        return Err(Error::Shape("regularization needs at least one feature map".into()));
    }
    Ok(regularization_raw(
        intermediates.iter().map(|f| f.data()),
    ))
}

pub(crate) fn regularization_raw<'a>(maps: impl Iterator<Item = &'a Array3<f64>>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in maps {
        sum += m.iter().map(|v| v.abs()).sum::<f64>();
        count += m.len();
    }
    sum / count as f64
}

/// Elementwise gradient `sign(x) / N` where N counts elements across all
/// maps; zero entries get zero gradient.
pub fn feature_regularization_grad(intermediates: &[FeatureMap]) -> Result<Vec<Array3<f64>>> {
    if intermediates.is_empty() {
        return Err(Error::Shape("regularization needs at least one feature map".into()));
    }
    Ok(regularization_grad_raw(
        &intermediates.iter().map(|f| f.data().clone()).collect::<Vec<_>>(),
    ))
}

pub(crate) fn regularization_grad_raw(maps: &[Array3<f64>]) -> Vec<Array3<f64>> {
    let n: usize = maps.iter().map(|m| m.len()).sum();
    let inv = 1.0 / n as f64;
    maps.iter()
        .map(|m| m.mapv(|v| v.signum() * if v == 0.0 { 0.0 } else { inv }))
        .collect()
}

// ---------------------------------------------------------------------------
// Cyclic and MSE losses

/// Mean absolute error between a reconstruction and its target.
pub fn cyclic_loss(reconstruction: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    shape_guard(reconstruction, target)?;
    Ok(l1_raw(reconstruction.data(), target.data()))
}

pub(crate) fn l1_raw(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// d(cyclic)/d(reconstruction) = sign(recon - target) / N.
pub fn cyclic_loss_grad(reconstruction: &ImageTensor, target: &ImageTensor) -> Result<Array3<f64>> {
    shape_guard(reconstruction, target)?;
    Ok(l1_grad_raw(reconstruction.data(), target.data()))
}

pub(crate) fn l1_grad_raw(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let inv = 1.0 / a.len() as f64;
    let mut g = a - b;
    g.mapv_inplace(|v| v.signum() * inv);
    g
}

/// Mean squared error.
pub fn mse_loss(prediction: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    shape_guard(prediction, target)?;
    Ok(mse_raw(prediction.data(), target.data()))
}

pub(crate) fn mse_raw(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// d(mse)/d(prediction) = 2 (pred - target) / N.
pub fn mse_loss_grad(prediction: &ImageTensor, target: &ImageTensor) -> Result<Array3<f64>> {
    shape_guard(prediction, target)?;
    Ok(mse_grad_raw(prediction.data(), target.data()))
}

pub(crate) fn mse_grad_raw(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let scale = 2.0 / a.len() as f64;
    let mut g = a - b;
    g.mapv_inplace(|v| v * scale);
    g
}

fn shape_guard(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "images {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Weighted generator-side total.
pub fn total_loss(adv_g: f64, reg: f64, d_cy: f64, r_cy: f64, cfg: &RunConfig) -> f64 {
    cfg.lambda_adv * adv_g + cfg.lambda_reg * reg + cfg.lambda_dcy * d_cy + cfg.lambda_rcy * r_cy
}
