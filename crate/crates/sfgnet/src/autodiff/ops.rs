//! Elementwise, activation, reduction and structural ops.

use super::{BackCtx, Graph, Tensor, Var};
use ndarray::{Axis, Slice};

/// Coefficient of the tanh-based GeLU approximation.
const GELU_COEF: f64 = 0.044_715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

impl Graph {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(
            value,
            vec![a, b],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                vec![ctx.grad.clone(), ctx.grad.clone()]
            })),
        )
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(
            value,
            vec![a, b],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                vec![ctx.grad.clone(), ctx.grad.mapv(|v| -v)]
            })),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(
            value,
            vec![a, b],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                vec![ctx.grad * ctx.parents[1], ctx.grad * ctx.parents[0]]
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).mapv(|v| v + s);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(|ctx: &BackCtx| vec![ctx.grad.clone()])),
        )
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).mapv(|v| v * s);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(move |ctx: &BackCtx| vec![ctx.grad.mapv(|v| v * s)])),
        )
    }

    /// Multiply a tensor by a learnable (1,1,1,1) scalar node.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "scale expects a scalar node");
        let sv = self.value(s)[[0, 0, 0, 0]];
        let value = self.value(a).mapv(|v| v * sv);
        self.push(
            value,
            vec![a, s],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let grad_a = ctx.grad.mapv(|v| v * sv);
                let dot: f64 = ctx
                    .grad
                    .iter()
                    .zip(ctx.parents[0].iter())
                    .map(|(g, x)| g * x)
                    .sum();
                vec![grad_a, Tensor::from_elem((1, 1, 1, 1), dot)]
            })),
        )
    }

    /// GeLU via the tanh approximation; exact at 0 and asymptotically linear.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu_scalar);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let mut grad = ctx.parents[0].mapv(gelu_derivative);
                grad *= ctx.grad;
                vec![grad]
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let mut grad = ctx.out.mapv(|y| y * (1.0 - y));
                grad *= ctx.grad;
                vec![grad]
            })),
        )
    }

    /// Elementwise magnitude `sqrt(a^2 + b^2)` with subgradient 0 where both
    /// inputs are zero.
    pub fn hypot(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| (x * x + y * y).sqrt());
        self.push(
            value,
            vec![a, b],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let grad_a = ndarray::Zip::from(ctx.grad)
                    .and(ctx.parents[0])
                    .and(ctx.out)
                    .map_collect(|&g, &x, &m| if m == 0.0 { 0.0 } else { g * x / m });
                let grad_b = ndarray::Zip::from(ctx.grad)
                    .and(ctx.parents[1])
                    .and(ctx.out)
                    .map_collect(|&g, &y, &m| if m == 0.0 { 0.0 } else { g * y / m });
                vec![grad_a, grad_b]
            })),
        )
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat shape mismatch");
        let channels: Vec<usize> = parts.iter().map(|&v| self.shape(v).1).collect();
        self.push(
            value,
            parts.to_vec(),
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let mut grads = Vec::with_capacity(channels.len());
                let mut start = 0;
                for &c in &channels {
                    let piece = ctx
                        .grad
                        .slice_axis(Axis(1), Slice::from(start..start + c))
                        .to_owned();
                    grads.push(piece);
                    start += c;
                }
                grads
            })),
        )
    }

    /// Sum of all entries, as a (1,1,1,1) scalar node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).sum();
        let value = Tensor::from_elem((1, 1, 1, 1), s);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(|ctx: &BackCtx| {
                let g = ctx.grad[[0, 0, 0, 0]];
                vec![Tensor::from_elem(ctx.parents[0].raw_dim(), g)]
            })),
        )
    }

    /// Mean of all entries.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let m: f64 = self.value(a).sum() / n;
        let value = Tensor::from_elem((1, 1, 1, 1), m);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[0, 0, 0, 0]] / n;
                vec![Tensor::from_elem(ctx.parents[0].raw_dim(), g)]
            })),
        )
    }

    /// Mean absolute value (mean-reduced L1), subgradient 0 at zero.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let m: f64 = self.value(a).iter().map(|v| v.abs()).sum::<f64>() / n;
        let value = Tensor::from_elem((1, 1, 1, 1), m);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[0, 0, 0, 0]] / n;
                vec![ctx.parents[0].mapv(|v| g * sign(v))]
            })),
        )
    }

    /// Root-mean-square (mean-reduced L2), subgradient 0 when the input is
    /// identically zero.
    pub fn rms(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let rms = (self.value(a).iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let value = Tensor::from_elem((1, 1, 1, 1), rms);
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[0, 0, 0, 0]];
                let r = ctx.out[[0, 0, 0, 0]];
                if r == 0.0 {
                    vec![Tensor::zeros(ctx.parents[0].raw_dim())]
                } else {
                    vec![ctx.parents[0].mapv(|v| g * v / (n * r))]
                }
            })),
        )
    }

    /// Reflect-pad the two spatial axes by `pad` on each side (mirror
    /// without repeating the border pixel). Requires `pad < min(H, W)`.
    pub fn reflect_pad2d(&mut self, a: Var, pad: usize) -> Var {
        let (n, c, h, w) = self.shape(a);
        assert!(pad < h && pad < w, "reflect pad must be smaller than the image");
        let src = self.value(a);
        let mut value = Tensor::zeros((n, c, h + 2 * pad, w + 2 * pad));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h + 2 * pad {
                    let sy = reflect_index(y as isize - pad as isize, h);
                    for x in 0..w + 2 * pad {
                        let sx = reflect_index(x as isize - pad as isize, w);
                        value[[ni, ci, y, x]] = src[[ni, ci, sy, sx]];
                    }
                }
            }
        }
        self.push(
            value,
            vec![a],
            false,
            Some(Box::new(move |ctx: &BackCtx| {
                let mut grad = Tensor::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h + 2 * pad {
                            let sy = reflect_index(y as isize - pad as isize, h);
                            for x in 0..w + 2 * pad {
                                let sx = reflect_index(x as isize - pad as isize, w);
                                grad[[ni, ci, sy, sx]] += ctx.grad[[ni, ci, y, x]];
                            }
                        }
                    }
                }
                vec![grad]
            })),
        )
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * len - 2 - i;
    }
    debug_assert!(i >= 0 && i < len);
    i as usize
}

fn gelu_scalar(x: f64) -> f64 {
    let inner = sqrt_2_over_pi() * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let k = sqrt_2_over_pi();
    let inner = k * (x + GELU_COEF * x * x * x);
    let t = inner.tanh();
    let dinner = k * (1.0 + 3.0 * GELU_COEF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
