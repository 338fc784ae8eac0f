//! Activations, nearest-neighbour resampling, pooling and the dense
//! discriminator head, each with its backward pass.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Array3<f64>, slope: f64) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

/// dL/dx given the layer input and dL/dy.
pub fn leaky_relu_backward(x: &Array3<f64>, grad_out: &Array3<f64>, slope: f64) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= 0.0 {
            *gv *= slope;
        }
    });
    g
}

/// Sub-pixel upsampling: rearranges `(4C, H, W)` into `(C, 2H, 2W)`, the
/// 2x2 block at each position coming from four consecutive channels.
pub fn pixel_shuffle2(x: &Array3<f64>) -> Array3<f64> {
    let (c4, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(c4 % 4, 0, "pixel shuffle needs a channel multiple of 4");
    let c = c4 / 4;
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, y, xx)| {
        x[[ch * 4 + (y % 2) * 2 + (xx % 2), y / 2, xx / 2]]
    })
}

/// Backward of [`pixel_shuffle2`]: the inverse channel/space permutation.
pub fn pixel_shuffle2_backward(grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    let (h, w) = (h2 / 2, w2 / 2);
    Array3::from_shape_fn((c * 4, h, w), |(ch4, y, x)| {
        let ch = ch4 / 4;
        let (dy, dx) = ((ch4 % 4) / 2, ch4 % 2);
        grad_out[[ch, 2 * y + dy, 2 * x + dx]]
    })
}

pub fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(sigmoid_scalar)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// dL/dx expressed through the layer *output* y = sigmoid(x).
pub fn sigmoid_backward_from_output(y: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| *gv *= yv * (1.0 - yv));
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, y, xx)| x[[ch, y / 2, xx / 2]])
}

/// Backward of [`upsample2`]: each source pixel collects its 2x2 block.
pub fn upsample2_backward(grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    let (h, w) = (h2 / 2, w2 / 2);
    let mut g = Array3::<f64>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                g[[ch, y / 2, x / 2]] += grad_out[[ch, y, x]];
            }
        }
    }
    g
}

/// Mean over the spatial grid, one value per channel.
pub fn global_avg_pool(x: &Array3<f64>) -> Array1<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = (h * w) as f64;
    Array1::from_shape_fn(c, |ch| {
        x.index_axis(ndarray::Axis(0), ch).sum() / n
    })
}

pub fn global_avg_pool_backward(
    grad_out: &Array1<f64>,
    shape: (usize, usize, usize),
) -> Array3<f64> {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    Array3::from_shape_fn((c, h, w), |(ch, _, _)| grad_out[ch] / n)
}

/// Minimal fully connected layer (used by the discriminator's statistics
/// head).
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / c_in as f64).sqrt()).expect("positive std");
        Dense {
            weight: Array2::from_shape_fn((c_out, c_in), |_| normal.sample(rng)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&self, x: &Array1<f64>, grad_out: &Array1<f64>) -> (Array1<f64>, DenseGrads) {
        let d_weight = grad_out
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&x.view().insert_axis(ndarray::Axis(0)));
        (
            self.weight.t().dot(grad_out),
            DenseGrads {
                weight: d_weight,
                bias: grad_out.clone(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{central_diff, rel_err};
    use ndarray::arr1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaky_relu_gradcheck() {
        let x = Array3::from_shape_vec((1, 2, 2), vec![0.7, -0.3, 1.2, -2.0]).unwrap();
        let ones = Array3::ones((1, 2, 2));
        for slope in [0.2, 0.01] {
            let g = leaky_relu_backward(&x, &ones, slope);
            for idx in [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]] {
                let fd = central_diff(
                    |v| {
                        let mut xp = x.clone();
                        xp[idx] = v;
                        leaky_relu(&xp, slope).sum()
                    },
                    x[idx],
                    1e-6,
                );
                assert!(rel_err(g[idx], fd) < 1e-6);
            }
        }
    }

    #[test]
    fn sigmoid_gradcheck() {
        let x = Array3::from_shape_vec((1, 1, 3), vec![-1.0, 0.2, 2.5]).unwrap();
        let y = sigmoid(&x);
        let g = sigmoid_backward_from_output(&y, &Array3::ones((1, 1, 3)));
        for i in 0..3 {
            let fd = central_diff(
                |v| {
                    let mut xp = x.clone();
                    xp[[0, 0, i]] = v;
                    sigmoid(&xp).sum()
                },
                x[[0, 0, i]],
                1e-6,
            );
            assert!(rel_err(g[[0, 0, i]], fd) < 1e-6);
        }
    }

    #[test]
    fn upsample_shapes_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array3::from_shape_fn((2, 3, 4), |_| rng.gen_range(-1.0..1.0f64));
        let y = upsample2(&x);
        assert_eq!(y.shape(), &[2, 6, 8]);
        assert_eq!(y[[1, 5, 7]], x[[1, 2, 3]]);
        // adjoint identity: <upsample(x), g> == <x, upsample_backward(g)>
        let g = Array3::from_shape_fn((2, 6, 8), |_| rng.gen_range(-1.0..1.0f64));
        let lhs = (&y * &g).sum();
        let rhs = (&x * &upsample2_backward(&g)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pixel_shuffle_rearranges_and_adjoint_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array3::from_shape_fn((8, 3, 2), |_| rng.gen_range(-1.0..1.0f64));
        let y = pixel_shuffle2(&x);
        assert_eq!(y.shape(), &[2, 6, 4]);
        assert_eq!(y[[1, 2, 3]], x[[1 * 4 + 0 * 2 + 1, 1, 1]]);
        let g = Array3::from_shape_fn((2, 6, 4), |_| rng.gen_range(-1.0..1.0f64));
        let lhs = (&y * &g).sum();
        let rhs = (&x * &pixel_shuffle2_backward(&g)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // perfect inverse round trip
        assert_eq!(pixel_shuffle2_backward(&y), x);
    }

    #[test]
    fn dense_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dense = Dense::new(3, 2, &mut rng);
        let x = arr1(&[0.5, -1.0, 2.0]);
        let gscale = arr1(&[1.0, -2.0]);
        let loss = |d: &Dense, x: &Array1<f64>| (&d.forward(x) * &gscale).sum();
        let (dx, grads) = dense.backward(&x, &gscale);
        for i in 0..3 {
            let fd = central_diff(
                |v| {
                    let mut xp = x.clone();
                    xp[i] = v;
                    loss(&dense, &xp)
                },
                x[i],
                1e-6,
            );
            assert!(rel_err(dx[i], fd) < 1e-6);
        }
        for idx in [[0, 0], [1, 2]] {
            let fd = central_diff(
                |v| {
                    let mut dp = dense.clone();
                    dp.weight[idx] = v;
                    loss(&dp, &x)
                },
                dense.weight[idx],
                1e-6,
            );
            assert!(rel_err(grads.weight[idx], fd) < 1e-6);
        }
    }

    #[test]
    fn pool_is_channel_mean() {
        let x = Array3::from_shape_vec((2, 1, 2), vec![1.0, 3.0, -2.0, 6.0]).unwrap();
        let p = global_avg_pool(&x);
        assert_eq!(p, arr1(&[2.0, 2.0]));
        let g = global_avg_pool_backward(&arr1(&[4.0, 8.0]), (2, 1, 2));
        assert_eq!(g[[0, 0, 0]], 2.0);
        assert_eq!(g[[1, 0, 1]], 4.0);
    }

}
