use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// 2-D convolution on a single `(C, H, W)` grid. The kernel is stored
/// already flattened to `(c_out, c_in * k * k)` so both inference and
/// training reduce to one matrix multiply over im2col columns.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Cached forward state needed by [`Conv2d::backward`].
#[derive(Debug)]
pub struct ConvCtx {
    cols: Array2<f64>,
    in_shape: (usize, usize, usize),
}

/// Parameter gradients of one convolution.
#[derive(Debug)]
pub struct ConvGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// He-normal weight init scaled by fan-in; zero bias.
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight =
            Array2::from_shape_fn((c_out, c_in * kernel * kernel), |_| normal.sample(rng));
        Conv2d {
            weight,
            bias: Array1::zeros(c_out),
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (y, _) = self.forward_impl(x, false);
        y
    }

    /// Forward pass that keeps the im2col matrix for the backward pass.
    pub fn forward_train(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCtx) {
        let (y, ctx) = self.forward_impl(x, true);
        (y, ctx.expect("ctx requested"))
    }

    fn forward_impl(&self, x: &Array3<f64>, keep_ctx: bool) -> (Array3<f64>, Option<ConvCtx>) {
        let s = x.shape();
        let in_shape = (s[0], s[1], s[2]);
        assert_eq!(in_shape.0, self.c_in, "conv input channel mismatch");
        let (h_o, w_o) = self.out_spatial(in_shape.1, in_shape.2);
        let cols = self.im2col(x, h_o, w_o);
        let mut y2 = self.weight.dot(&cols);
        for (mut row, &b) in y2.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += b;
        }
        let y = y2
            .into_shape_with_order((self.c_out, h_o, w_o))
            .expect("conv output reshape");
        let ctx = keep_ctx.then_some(ConvCtx { cols, in_shape });
        (y, ctx)
    }

    /// Given dL/dy, returns (dL/dx, parameter gradients).
    pub fn backward(&self, ctx: &ConvCtx, grad_out: &Array3<f64>) -> (Array3<f64>, ConvGrads) {
        let s = grad_out.shape();
        let (c_out, h_o, w_o) = (s[0], s[1], s[2]);
        assert_eq!(c_out, self.c_out);
        let g2 = grad_out
            .view()
            .into_shape_with_order((c_out, h_o * w_o))
            .expect("grad reshape");
        let d_weight = g2.dot(&ctx.cols.t());
        let d_bias = g2.sum_axis(Axis(1));
        let d_cols = self.weight.t().dot(&g2);
        let d_x = self.col2im(&d_cols, ctx.in_shape, h_o, w_o);
        (
            d_x,
            ConvGrads {
                weight: d_weight,
                bias: d_bias,
            },
        )
    }

    fn im2col(&self, x: &Array3<f64>, h_o: usize, w_o: usize) -> Array2<f64> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.kernel;
        let mut cols = Array2::<f64>::zeros((c_in * k * k, h_o * w_o));
        let xs = x.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().expect("standard layout");
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let out_base = row * h_o * w_o;
                    for oy in 0..h_o {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue; // zero padding already in place
                        }
                        let in_base = (c * h + iy as usize) * w;
                        let out_row = out_base + oy * w_o;
                        for ox in 0..w_o {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                cs[out_row + ox] = xs[in_base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds column gradients back onto the (padded) input grid.
    fn col2im(
        &self,
        d_cols: &Array2<f64>,
        in_shape: (usize, usize, usize),
        h_o: usize,
        w_o: usize,
    ) -> Array3<f64> {
        let (c_in, h, w) = in_shape;
        let k = self.kernel;
        let mut dx = Array3::<f64>::zeros((c_in, h, w));
        let ds = d_cols.as_slice().expect("standard layout");
        let out = dx.as_slice_mut().expect("standard layout");
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let col_base = row * h_o * w_o;
                    for oy in 0..h_o {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_base = (c * h + iy as usize) * w;
                        let col_row = col_base + oy * w_o;
                        for ox in 0..w_o {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                out[in_base + ix as usize] += ds[col_row + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
