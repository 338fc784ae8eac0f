use std::collections::BTreeMap;

use ndarray::ArrayD;

/// Accumulator for parameter gradients, keyed by parameter name.
/// Insertion of an existing key adds elementwise, so gradients from
/// several loss paths can be merged before one optimizer step.
#[derive(Debug, Default, Clone)]
pub struct GradMap {
    grads: BTreeMap<String, ArrayD<f64>>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, grad: ArrayD<f64>) {
        let name = name.into();
        match self.grads.get_mut(&name) {
            Some(existing) => {
                assert_eq!(
                    existing.shape(),
                    grad.shape(),
                    "gradient shape mismatch for {name}"
                );
                *existing += &grad;
            }
            None => {
                self.grads.insert(name, grad);
            }
        }
    }

    /// Merges another map into this one, accumulating shared keys.
    pub fn merge(&mut self, other: GradMap) {
        for (name, grad) in other.grads {
            self.add(name, grad);
        }
    }

    /// Scales every gradient, e.g. by a loss weight.
    pub fn scale(&mut self, factor: f64) {
        for grad in self.grads.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.grads.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
