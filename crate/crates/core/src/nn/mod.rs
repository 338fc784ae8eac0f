//! Minimal hand-rolled neural network layers: convolution via im2col and
//! matrix multiply, activations, upsampling, pooling, a dense head, and an
//! ADAM optimizer over named parameter tensors.
//!
//! Everything is `f64` and strictly deterministic: fixed evaluation order,
//! no threading inside a single layer.

pub mod adam;
pub mod conv;
pub mod grads;
pub mod ops;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCtx};
pub use grads::GradMap;

use ndarray::{ArrayViewD, ArrayViewMutD};

/// Visitation over a network's named parameter tensors, in a stable order.
/// Names are unique within a network and prefixed with the network id
/// (e.g. `e_c.stage0.weight`).
pub trait NetParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ArrayViewD<'_, f64>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ArrayViewMutD<'_, f64>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v| n += v.len());
        n
    }
}
