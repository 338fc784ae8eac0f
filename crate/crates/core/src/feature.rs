//! Latent activation grids shared by the encoders, decoder and
//! discriminator.

use ndarray::Array3;

use crate::error::{Error, Result};

/// What a feature map represents. Content and distortion latents share one
/// shape so they can be combined by addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Content,
    Distortion,
    Combined,
}

/// A latent activation grid of shape `(C, H, W)` with finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
    role: FeatureRole,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>, role: FeatureRole) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Shape("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap { data, role })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    /// Elementwise `self + other`; shapes must match exactly.
    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        self.add_scaled(other, 1.0)
    }

    /// Elementwise `self + weight * other`; shapes must match exactly.
    pub fn add_scaled(&self, other: &FeatureMap, weight: f64) -> Result<FeatureMap> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add feature maps of shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = &self.data + &(&other.data * weight);
        FeatureMap::new(data, FeatureRole::Combined)
    }

    /// Mean absolute activation.
    pub fn mean_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_requires_matching_shapes() {
        let a = FeatureMap::new(Array3::zeros((2, 3, 3)), FeatureRole::Content).unwrap();
        let b = FeatureMap::new(Array3::zeros((2, 3, 4)), FeatureRole::Distortion).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn add_scaled_is_elementwise() {
        let a = FeatureMap::new(Array3::from_elem((1, 2, 2), 1.0), FeatureRole::Content).unwrap();
        let b =
            FeatureMap::new(Array3::from_elem((1, 2, 2), 2.0), FeatureRole::Distortion).unwrap();
        let c = a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(c.role(), FeatureRole::Combined);
        assert!(c.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn non_finite_rejected() {
        let mut data = Array3::zeros((1, 1, 1));
        data[[0, 0, 0]] = f64::INFINITY;
        assert!(FeatureMap::new(data, FeatureRole::Content).is_err());
    }
}
