//! Convolution ops: dense 2-D convolution (im2col + GEMM), depthwise
//! convolution, and the stride-2 transposed convolution used for
//! upsampling. Weight layouts follow the usual conventions:
//! dense `(out, in, kh, kw)`, depthwise `(c, 1, kh, kw)`,
//! transposed `(in, out, kh, kw)`. Biases are `(1, out, 1, 1)`.

use super::{BackCtx, Graph, Tensor, Var};
use ndarray::{s, Array2, ArrayView3, Axis};

impl Graph {
    /// Dense 2-D convolution with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (_, c_in, _, _) = self.shape(x);
        let (_, wc, _, _) = self.shape(w);
        assert_eq!(c_in, wc, "conv2d channel mismatch");
        let value = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let mut parents = vec![x, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let (gx, gw, gb) = conv2d_backward(ctx.parents[0], ctx.parents[1], ctx.grad, stride, pad);
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(gb);
                }
                grads
            })),
        )
    }

    /// 1x1 convolution (channel mixing); equivalent to `conv2d` with a 1x1
    /// kernel but skips the im2col step.
    pub fn pointwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (_, _, kh, kw) = self.shape(w);
        assert_eq!((kh, kw), (1, 1), "pointwise kernel must be 1x1");
        self.conv2d(x, w, b, 1, 0)
    }

    /// Per-channel (depthwise) convolution with zero padding.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (_, c_in, _, _) = self.shape(x);
        let (wc, one, _, _) = self.shape(w);
        assert_eq!(c_in, wc, "depthwise channel mismatch");
        assert_eq!(one, 1, "depthwise weight layout is (c, 1, kh, kw)");
        let value = depthwise_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let mut parents = vec![x, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let (gx, gw, gb) =
                    depthwise_backward(ctx.parents[0], ctx.parents[1], ctx.grad, stride, pad);
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(gb);
                }
                grads
            })),
        )
    }

    /// Transposed convolution with a 2x2 kernel and stride 2: exactly
    /// doubles the spatial resolution.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (_, c_in, _, _) = self.shape(x);
        let (wc_in, _, kh, kw) = self.shape(w);
        assert_eq!(c_in, wc_in, "conv_transpose2d channel mismatch");
        assert_eq!((kh, kw), (2, 2), "upsampling kernel must be 2x2");
        let value = conv_transpose_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let mut parents = vec![x, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let (gx, gw, gb) = conv_transpose_backward(ctx.parents[0], ctx.parents[1], ctx.grad);
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(gb);
                }
                grads
            })),
        )
    }
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn pad_zero(x: &Tensor, pad: usize) -> Tensor {
    if pad == 0 {
        return x.clone();
    }
    let (n, c, h, w) = x.dim();
    let mut out = Tensor::zeros((n, c, h + 2 * pad, w + 2 * pad));
    out.slice_mut(s![.., .., pad..pad + h, pad..pad + w]).assign(x);
    out
}

fn unpad(g: Tensor, pad: usize) -> Tensor {
    if pad == 0 {
        return g;
    }
    let (_, _, hp, wp) = g.dim();
    g.slice(s![.., .., pad..hp - pad, pad..wp - pad]).to_owned()
}

/// Gather conv patches of one padded sample into a (c*kh*kw, ho*wo) matrix.
fn im2col(xp: &ArrayView3<f64>, kh: usize, kw: usize, stride: usize, ho: usize, wo: usize) -> Array2<f64> {
    let c = xp.dim().0;
    let mut cols = Array2::zeros((c * kh * kw, ho * wo));
    let mut row = 0;
    for ci in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let mut out_row = cols.row_mut(row);
                let mut idx = 0;
                for oy in 0..ho {
                    let sy = oy * stride + dy;
                    for ox in 0..wo {
                        out_row[idx] = xp[[ci, sy, ox * stride + dx]];
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-add a (c*kh*kw, ho*wo) gradient back into a padded sample.
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    xp_grad: &mut ndarray::ArrayViewMut3<f64>,
) {
    let mut row = 0;
    for ci in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let col_row = cols.row(row);
                let mut idx = 0;
                for oy in 0..ho {
                    let sy = oy * stride + dy;
                    for ox in 0..wo {
                        xp_grad[[ci, sy, ox * stride + dx]] += col_row[idx];
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, win) = x.dim();
    let (o, _, kh, kw) = w.dim();
    let ho = out_extent(h, kh, stride, pad);
    let wo = out_extent(win, kw, stride, pad);
    let w_mat = w
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .expect("weight is contiguous");
    let mut out = Tensor::zeros((n, o, ho, wo));

    // 1x1 stride-1 convolutions skip patch gathering entirely.
    let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    let xp = if pointwise { None } else { Some(pad_zero(x, pad)) };

    for ni in 0..n {
        let out_mat = if pointwise {
            let x_mat = x
                .index_axis(Axis(0), ni)
                .into_shape_with_order((c, h * win))
                .expect("input is contiguous");
            w_mat.dot(&x_mat)
        } else {
            let xp = xp.as_ref().unwrap();
            let cols = im2col(&xp.index_axis(Axis(0), ni), kh, kw, stride, ho, wo);
            w_mat.dot(&cols)
        };
        let mut dst = out.index_axis_mut(Axis(0), ni);
        for oi in 0..o {
            let src = out_mat.row(oi);
            let mut plane = dst.index_axis_mut(Axis(0), oi);
            for oy in 0..ho {
                for ox in 0..wo {
                    plane[[oy, ox]] = src[oy * wo + ox];
                }
            }
        }
    }
    if let Some(b) = b {
        add_bias(&mut out, b);
    }
    out
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, win) = x.dim();
    let (o, _, kh, kw) = w.dim();
    let (_, _, ho, wo) = grad_out.dim();
    let w_mat = w
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .expect("weight is contiguous");

    let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
    let xp = if pointwise { None } else { Some(pad_zero(x, pad)) };
    let mut grad_w_mat = Array2::<f64>::zeros((o, c * kh * kw));
    let mut grad_xp = Tensor::zeros((n, c, h + 2 * pad, win + 2 * pad));

    for ni in 0..n {
        let g_mat = grad_out
            .index_axis(Axis(0), ni)
            .into_shape_with_order((o, ho * wo))
            .expect("grad is contiguous");
        if pointwise {
            let x_mat = x
                .index_axis(Axis(0), ni)
                .into_shape_with_order((c, h * win))
                .expect("input is contiguous");
            grad_w_mat += &g_mat.dot(&x_mat.t());
            let gx = w_mat.t().dot(&g_mat);
            let mut dst = grad_xp.index_axis_mut(Axis(0), ni);
            for ci in 0..c {
                let src = gx.row(ci);
                let mut plane = dst.index_axis_mut(Axis(0), ci);
                for y in 0..h {
                    for xw in 0..win {
                        plane[[y, xw]] = src[y * win + xw];
                    }
                }
            }
        } else {
            let xp = xp.as_ref().unwrap();
            let cols = im2col(&xp.index_axis(Axis(0), ni), kh, kw, stride, ho, wo);
            grad_w_mat += &g_mat.dot(&cols.t());
            let gcols = w_mat.t().dot(&g_mat);
            let mut dst = grad_xp.index_axis_mut(Axis(0), ni);
            col2im(&gcols, c, kh, kw, stride, ho, wo, &mut dst);
        }
    }

    let grad_x = unpad(grad_xp, pad);
    let grad_w = grad_w_mat
        .into_shape_with_order((o, c, kh, kw))
        .expect("reshape grad_w");
    let grad_b = bias_grad(grad_out);
    (grad_x, grad_w, grad_b)
}

fn depthwise_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, win) = x.dim();
    let (_, _, kh, kw) = w.dim();
    let ho = out_extent(h, kh, stride, pad);
    let wo = out_extent(win, kw, stride, pad);
    let xp = pad_zero(x, pad);
    let mut out = Tensor::zeros((n, c, ho, wo));
    for ni in 0..n {
        for ci in 0..c {
            let plane = xp.slice(s![ni, ci, .., ..]);
            let kernel = w.slice(s![ci, 0, .., ..]);
            let mut dst = out.slice_mut(s![ni, ci, .., ..]);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            acc += kernel[[dy, dx]] * plane[[oy * stride + dy, ox * stride + dx]];
                        }
                    }
                    dst[[oy, ox]] = acc;
                }
            }
        }
    }
    if let Some(b) = b {
        add_bias(&mut out, b);
    }
    out
}

fn depthwise_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, h, win) = x.dim();
    let (_, _, kh, kw) = w.dim();
    let (_, _, ho, wo) = grad_out.dim();
    let xp = pad_zero(x, pad);
    let mut grad_xp = Tensor::zeros((n, c, h + 2 * pad, win + 2 * pad));
    let mut grad_w = Tensor::zeros(w.raw_dim());
    for ni in 0..n {
        for ci in 0..c {
            let plane = xp.slice(s![ni, ci, .., ..]);
            let kernel = w.slice(s![ci, 0, .., ..]);
            let g = grad_out.slice(s![ni, ci, .., ..]);
            let mut gx = grad_xp.slice_mut(s![ni, ci, .., ..]);
            let mut gw = grad_w.slice_mut(s![ci, 0, .., ..]);
            for oy in 0..ho {
                for ox in 0..wo {
                    let go = g[[oy, ox]];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let (sy, sx) = (oy * stride + dy, ox * stride + dx);
                            gx[[sy, sx]] += kernel[[dy, dx]] * go;
                            gw[[dy, dx]] += plane[[sy, sx]] * go;
                        }
                    }
                }
            }
        }
    }
    (unpad(grad_xp, pad), grad_w, bias_grad(grad_out))
}

fn conv_transpose_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, c_in, h, win) = x.dim();
    let (_, c_out, kh, kw) = w.dim();
    let mut out = Tensor::zeros((n, c_out, h * 2, win * 2));
    // One channel-mixing GEMM per kernel tap; taps do not overlap at stride 2.
    for ni in 0..n {
        let x_mat = x
            .index_axis(Axis(0), ni)
            .into_shape_with_order((c_in, h * win))
            .expect("input is contiguous");
        for dy in 0..kh {
            for dx in 0..kw {
                let w_tap: Array2<f64> = w.slice(s![.., .., dy, dx]).to_owned();
                let out_mat = w_tap.t().dot(&x_mat); // (c_out, h*win)
                for co in 0..c_out {
                    let src = out_mat.row(co);
                    for iy in 0..h {
                        for ix in 0..win {
                            out[[ni, co, 2 * iy + dy, 2 * ix + dx]] = src[iy * win + ix];
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        add_bias(&mut out, b);
    }
    out
}

fn conv_transpose_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, c_in, h, win) = x.dim();
    let (_, c_out, kh, kw) = w.dim();
    let mut grad_x = Tensor::zeros(x.raw_dim());
    let mut grad_w = Tensor::zeros(w.raw_dim());
    for ni in 0..n {
        let x_mat = x
            .index_axis(Axis(0), ni)
            .into_shape_with_order((c_in, h * win))
            .expect("input is contiguous");
        let mut gx_acc = Array2::<f64>::zeros((c_in, h * win));
        for dy in 0..kh {
            for dx in 0..kw {
                // Gather the strided gradient positions for this tap.
                let mut g_tap = Array2::<f64>::zeros((c_out, h * win));
                for co in 0..c_out {
                    let mut row = g_tap.row_mut(co);
                    for iy in 0..h {
                        for ix in 0..win {
                            row[iy * win + ix] = grad_out[[ni, co, 2 * iy + dy, 2 * ix + dx]];
                        }
                    }
                }
                let w_tap: Array2<f64> = w.slice(s![.., .., dy, dx]).to_owned();
                gx_acc += &w_tap.dot(&g_tap);
                let gw_tap = x_mat.dot(&g_tap.t()); // (c_in, c_out)
                let mut dst = grad_w.slice_mut(s![.., .., dy, dx]);
                dst += &gw_tap;
            }
        }
        let mut dst = grad_x.index_axis_mut(Axis(0), ni);
        for ci in 0..c_in {
            let src = gx_acc.row(ci);
            let mut plane = dst.index_axis_mut(Axis(0), ci);
            for iy in 0..h {
                for ix in 0..win {
                    plane[[iy, ix]] += src[iy * win + ix];
                }
            }
        }
    }
    (grad_x, grad_w, bias_grad(grad_out))
}

fn add_bias(out: &mut Tensor, b: &Tensor) {
    let (n, o, _, _) = out.dim();
    debug_assert_eq!(b.dim(), (1, o, 1, 1));
    for ni in 0..n {
        for oi in 0..o {
            let bv = b[[0, oi, 0, 0]];
            out.slice_mut(s![ni, oi, .., ..]).mapv_inplace(|v| v + bv);
        }
    }
}

fn bias_grad(grad_out: &Tensor) -> Tensor {
    let (n, o, ho, wo) = grad_out.dim();
    let mut gb = Tensor::zeros((1, o, 1, 1));
    for oi in 0..o {
        let mut acc = 0.0;
        for ni in 0..n {
            for y in 0..ho {
                for x in 0..wo {
                    acc += grad_out[[ni, oi, y, x]];
                }
            }
        }
        gb[[0, oi, 0, 0]] = acc;
    }
    gb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn conv_shape_contract() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_elem((1, 3, 8, 8), 0.5));
        let w = g.constant(Tensor::from_elem((4, 3, 3, 3), 0.1));
        let b = g.constant(Tensor::zeros((1, 4, 1, 1)));
        let y = g.conv2d(x, w, Some(b), 1, 1);
        assert_eq!(g.shape(y), (1, 4, 8, 8));
        let y2 = g.conv2d(x, w, None, 2, 1);
        assert_eq!(g.shape(y2), (1, 4, 4, 4));
    }

    #[test]
    fn depthwise_identity_kernel_preserves_input() {
        let mut g = Graph::new();
        let data = Tensor::from_shape_fn((2, 3, 5, 5), |(n, c, y, x)| {
            (n * 100 + c * 25 + y * 5 + x) as f64 * 0.01
        });
        let x = g.constant(data.clone());
        let mut kernel = Tensor::zeros((3, 1, 3, 3));
        for c in 0..3 {
            kernel[[c, 0, 1, 1]] = 1.0;
        }
        let w = g.constant(kernel);
        let y = g.depthwise_conv2d(x, w, None, 1, 1);
        let diff = (g.value(y) - &data).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn conv_matches_direct_summation() {
        // Oracle: naive quadruple loop.
        let mut g = Graph::new();
        let x_data = Tensor::from_shape_fn((1, 2, 4, 4), |(_, c, y, x)| ((c + 1) * (y + 2) * (x + 1)) as f64 * 0.1);
        let w_data = Tensor::from_shape_fn((3, 2, 3, 3), |(o, c, y, x)| ((o + c + y + x) as f64 - 3.0) * 0.05);
        let x = g.constant(x_data.clone());
        let w = g.constant(w_data.clone());
        let y = g.conv2d(x, w, None, 1, 1);
        let out = g.value(y);
        for o in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let sy = oy as isize + dy as isize - 1;
                                let sx = ox as isize + dx as isize - 1;
                                if sy >= 0 && sy < 4 && sx >= 0 && sx < 4 {
                                    acc += w_data[[o, c, dy, dx]] * x_data[[0, c, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    assert!((out[[0, o, oy, ox]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transpose_conv_doubles_resolution() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_elem((1, 4, 3, 3), 1.0));
        let w = g.constant(Tensor::from_elem((4, 2, 2, 2), 0.25));
        let y = g.conv_transpose2d(x, w, None);
        assert_eq!(g.shape(y), (1, 2, 6, 6));
        // Every output position receives exactly one tap: 4 channels * 0.25.
        assert!(g.value(y).iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
