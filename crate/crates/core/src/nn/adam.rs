use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::grads::GradMap;
use super::NetParams;

const EPS: f64 = 1e-8;

/// ADAM optimizer over one network's named parameters. First and second
/// moment estimates are allocated lazily per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient entry are left untouched.
    pub fn step(&mut self, net: &mut dyn NetParams, grads: &GradMap) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr) = (self.beta1, self.beta2, self.learning_rate);
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params_mut(&mut |name, mut param| {
            let Some(grad) = grads.get(name) else {
                return;
            };
            assert_eq!(grad.shape(), param.shape(), "grad shape mismatch for {name}");
            let m_t = m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
            let v_t = v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
            ndarray::Zip::from(&mut param)
                .and(m_t)
                .and(v_t)
                .and(grad)
                .for_each(|p, m_e, v_e, &g| {
                    *m_e = b1 * *m_e + (1.0 - b1) * g;
                    *v_e = b2 * *v_e + (1.0 - b2) * g * g;
                    let m_hat = *m_e / bc1;
                    let v_hat = *v_e / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + EPS);
                });
        });
    }
}
