//! Differentiable operations recorded on a [`Tape`].

use crate::error::{shape_err, AutogradError, Result};
use crate::kernels::{self, Conv2dGeom};
use crate::tape::{BackwardCtx, Tape, Var};
use crate::tensor::Tensor;

/// Logistic function, split on the sign of `x` so neither branch overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Guard added to the norm in [`Tape::l2_normalize`].
pub const L2_EPS: f64 = 1e-12;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("op produced consistent shape")
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(AutogradError::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tape {
    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        let input = self.value(x);
        let data = input.data().iter().map(|&v| f(v)).collect();
        let out = tensor(input.shape(), data);
        self.record(
            out,
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.output.data())
                    .zip(ctx.grad_out)
                    .map(|((&x, &y), &g)| g * dfdx(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `max(0, x)`; the kink at zero gets subgradient 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| c * v, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = tensor(va.shape(), data);
        Ok(self.record(
            out,
            vec![a, b],
            Box::new(|ctx: &BackwardCtx| {
                vec![
                    ctx.needs_grad[0].then(|| ctx.grad_out.to_vec()),
                    ctx.needs_grad[1].then(|| ctx.grad_out.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = tensor(va.shape(), data);
        Ok(self.record(
            out,
            vec![a, b],
            Box::new(|ctx: &BackwardCtx| {
                vec![
                    ctx.needs_grad[0].then(|| ctx.grad_out.to_vec()),
                    ctx.needs_grad[1].then(|| ctx.grad_out.iter().map(|g| -g).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = tensor(va.shape(), data);
        Ok(self.record(
            out,
            vec![a, b],
            Box::new(|ctx: &BackwardCtx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad_out;
                vec![
                    ctx.needs_grad[0]
                        .then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    ctx.needs_grad[1]
                        .then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }),
        ))
    }

    /// Sum over `axis`, or over everything (scalar result) when `None`.
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let input = self.value(x);
        let shape = input.shape().to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, input.numel(), 1, Vec::new()),
            Some(ax) => {
                let (o, l, i) = split_axis(&shape, ax)?;
                let mut s = shape.clone();
                s.remove(ax);
                (o, l, i, s)
            }
        };
        let factor = if mean { 1.0 / len as f64 } else { 1.0 };
        let src = input.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(d, v)| *d += v);
            }
        }
        data.iter_mut().for_each(|d| *d *= factor);
        let out = tensor(&out_shape, data);
        Ok(self.record(
            out,
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let up = &ctx.grad_out[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        g[(o * len + l) * inner..(o * len + l + 1) * inner]
                            .iter_mut()
                            .zip(up)
                            .for_each(|(d, u)| *d = u * factor);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let input = self.value(x);
        let out = input.clone().with_requires_grad(false).reshape(shape)?;
        Ok(self.record(
            out,
            vec![x],
            Box::new(|ctx: &BackwardCtx| vec![Some(ctx.grad_out.to_vec())]),
        ))
    }

    /// Transpose of a 2D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let &[r, c] = input.shape() else {
            return shape_err("transpose", format!("expected 2D, got {:?}", input.shape()));
        };
        let src = input.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = tensor(&[c, r], data);
        Ok(self.record(
            out,
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] = ctx.grad_out[j * r + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let input = self.value(x);
        let (outer, full, inner) = split_axis(input.shape(), axis)?;
        if len == 0 || start + len > full {
            return shape_err("narrow", format!("[{start}, {start}+{len}) of extent {full}"));
        }
        let src = input.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut shape = input.shape().to_vec();
        shape[axis] = len;
        let out = tensor(&shape, data);
        Ok(self.record(
            out,
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut g = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    g[(o * full + start) * inner..(o * full + start + len) * inner]
                        .copy_from_slice(&ctx.grad_out[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Extends `axis` by replicating its first/last slice `before`/`after` times.
    pub fn pad_edge(&mut self, x: Var, axis: usize, before: usize, after: usize) -> Result<Var> {
        let input = self.value(x);
        let (outer, len, inner) = split_axis(input.shape(), axis)?;
        let new_len = len + before + after;
        let source = move |j: usize| j.saturating_sub(before).min(len - 1);
        let src = input.data();
        let mut data = Vec::with_capacity(outer * new_len * inner);
        for o in 0..outer {
            for j in 0..new_len {
                let s = source(j);
                data.extend_from_slice(&src[(o * len + s) * inner..(o * len + s + 1) * inner]);
            }
        }
        let mut shape = input.shape().to_vec();
        shape[axis] = new_len;
        let out = tensor(&shape, data);
        Ok(self.record(
            out,
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..new_len {
                        let s = source(j);
                        let up = &ctx.grad_out[(o * new_len + j) * inner..(o * new_len + j + 1) * inner];
                        g[(o * len + s) * inner..(o * len + s + 1) * inner]
                            .iter_mut()
                            .zip(up)
                            .for_each(|(d, u)| *d += u);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Matrix product of `a: m×k` and `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return shape_err(
                "matmul",
                format!("expected 2D operands, got {:?} and {:?}", self.shape(a), self.shape(b)),
            );
        };
        if k != k2 {
            return shape_err("matmul", format!("inner extents {k} vs {k2}"));
        }
        let mut data = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut data, false);
        let out = tensor(&[m, n], data);
        Ok(self.record(
            out,
            vec![a, b],
            Box::new(move |ctx: &BackwardCtx| {
                let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad_out);
                let da = ctx.needs_grad[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, bv, true, &mut d, false);
                    d
                });
                let db = ctx.needs_grad[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av, true, g, false, &mut d, false);
                    d
                });
                vec![da, db]
            }),
        ))
    }

    /// Affine map `weight · x + bias` for `x: [d_in]` or a batch `x: [B, d_in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let &[d_out, d_in] = self.shape(weight) else {
            return shape_err("linear", format!("weight must be 2D, got {:?}", self.shape(weight)));
        };
        if self.shape(bias) != [d_out] {
            return shape_err("linear", format!("bias {:?} for {d_out} outputs", self.shape(bias)));
        }
        let (batch, out_shape) = match *xs.as_slice() {
            [d] if d == d_in => (1, vec![d_out]),
            [b, d] if d == d_in => (b, vec![b, d_out]),
            _ => return shape_err("linear", format!("input {xs:?} for weight {d_out}x{d_in}")),
        };
        let bias_v = self.value(bias).data();
        let mut data: Vec<f64> = (0..batch).flat_map(|_| bias_v.iter().copied()).collect();
        kernels::gemm(batch, d_in, d_out, self.value(x).data(), false, self.value(weight).data(), true, &mut data, true);
        let out = tensor(&out_shape, data);
        Ok(self.record(
            out,
            vec![x, weight, bias],
            Box::new(move |ctx: &BackwardCtx| {
                let (xv, wv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad_out);
                let dx = ctx.needs_grad[0].then(|| {
                    let mut d = vec![0.0; batch * d_in];
                    kernels::gemm(batch, d_out, d_in, g, false, wv, false, &mut d, false);
                    d
                });
                let dw = ctx.needs_grad[1].then(|| {
                    let mut d = vec![0.0; d_out * d_in];
                    kernels::gemm(d_out, batch, d_in, g, true, xv, false, &mut d, false);
                    d
                });
                let db = ctx.needs_grad[2].then(|| {
                    let mut d = vec![0.0; d_out];
                    for row in g.chunks(d_out) {
                        d.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    d
                });
                vec![dx, dw, db]
            }),
        ))
    }

    /// Zero-padded 2D cross-correlation plus bias.
    ///
    /// `input` is `[C, H, W]` or a batch `[B, C, H, W]`; `kernel` is
    /// `[C_out, C, kH, kW]`; `bias` is `[C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let (batch, c, h, w, batched) = match *xs.as_slice() {
            [c, h, w] => (1, c, h, w, false),
            [b, c, h, w] => (b, c, h, w, true),
            _ => return shape_err("conv2d", format!("input must be 3D or 4D, got {xs:?}")),
        };
        let &[c_out, kc, kh, kw] = self.shape(kernel) else {
            return shape_err("conv2d", format!("kernel must be 4D, got {:?}", self.shape(kernel)));
        };
        let geom = Conv2dGeom {
            c_in: c,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
        };
        self.check_conv(&geom, kc, bias, "conv2d")?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            batch,
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let mut shape = vec![c_out, geom.out_h(), geom.out_w()];
        if batched {
            shape.insert(0, batch);
        }
        Ok(self.record_conv(tensor(&shape, data), [input, kernel, bias], batch, geom))
    }

    /// 1D cross-correlation: `input` `[C, N]` or `[B, C, N]`, `kernel` `[C_out, C, k]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let (batch, c, n, batched) = match *xs.as_slice() {
            [c, n] => (1, c, n, false),
            [b, c, n] => (b, c, n, true),
            _ => return shape_err("conv1d", format!("input must be 2D or 3D, got {xs:?}")),
        };
        let &[c_out, kc, k] = self.shape(kernel) else {
            return shape_err("conv1d", format!("kernel must be 3D, got {:?}", self.shape(kernel)));
        };
        let geom = Conv2dGeom {
            c_in: c,
            h: 1,
            w: n,
            c_out,
            kh: 1,
            kw: k,
            stride: (1, stride),
            padding: (0, padding),
        };
        self.check_conv(&geom, kc, bias, "conv1d")?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            batch,
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let mut shape = vec![c_out, geom.out_w()];
        if batched {
            shape.insert(0, batch);
        }
        Ok(self.record_conv(tensor(&shape, data), [input, kernel, bias], batch, geom))
    }

    fn check_conv(&self, g: &Conv2dGeom, kernel_c: usize, bias: Var, op: &'static str) -> Result<()> {
        if kernel_c != g.c_in {
            return shape_err(op, format!("kernel expects {kernel_c} input channels, input has {}", g.c_in));
        }
        if self.shape(bias) != [g.c_out] {
            return shape_err(op, format!("bias {:?} for {} output channels", self.shape(bias), g.c_out));
        }
        if g.stride.0 == 0 || g.stride.1 == 0 {
            return Err(AutogradError::Invalid(format!("{op}: stride must be >= 1")));
        }
        if g.kh > g.h + 2 * g.padding.0 || g.kw > g.w + 2 * g.padding.1 {
            return shape_err(op, "kernel larger than padded input");
        }
        Ok(())
    }

    fn record_conv(&mut self, out: Tensor, inputs: [Var; 3], batch: usize, geom: Conv2dGeom) -> Var {
        self.record(
            out,
            inputs.to_vec(),
            Box::new(move |ctx: &BackwardCtx| {
                let grads = kernels::conv2d_backward(
                    ctx.inputs[0].data(),
                    batch,
                    ctx.inputs[1].data(),
                    &geom,
                    ctx.grad_out,
                    ctx.needs_grad[0],
                    ctx.needs_grad[1],
                    ctx.needs_grad[2],
                );
                vec![grads.input, grads.kernel, grads.bias]
            }),
        )
    }

    /// Learned upsampling: `input` `[C_in, N]`, `kernel` `[C_in, C_out, k]`,
    /// output `[C_out, (N-1)·stride + k]`.
    pub fn transposed_conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let &[c_in, n] = self.shape(input) else {
            return shape_err("transposed_conv1d", format!("input must be 2D, got {:?}", self.shape(input)));
        };
        let &[kc, c_out, k] = self.shape(kernel) else {
            return shape_err("transposed_conv1d", format!("kernel must be 3D, got {:?}", self.shape(kernel)));
        };
        if kc != c_in {
            return shape_err("transposed_conv1d", format!("kernel expects {kc} input channels, input has {c_in}"));
        }
        if stride == 0 {
            return Err(AutogradError::Invalid("transposed_conv1d: stride must be >= 1".into()));
        }
        let data = kernels::transposed_conv1d_forward(
            self.value(input).data(),
            c_in,
            n,
            self.value(kernel).data(),
            c_out,
            k,
            stride,
        );
        let out = tensor(&[c_out, (n - 1) * stride + k], data);
        Ok(self.record(
            out,
            vec![input, kernel],
            Box::new(move |ctx: &BackwardCtx| {
                let (dx, dk) = kernels::transposed_conv1d_backward(
                    ctx.inputs[0].data(),
                    c_in,
                    n,
                    ctx.inputs[1].data(),
                    c_out,
                    k,
                    stride,
                    ctx.grad_out,
                );
                vec![ctx.needs_grad[0].then_some(dx), ctx.needs_grad[1].then_some(dk)]
            }),
        ))
    }

    /// Max-pool over the last axis. Partial trailing windows are dropped.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&n, lead)) = shape.split_last() else {
            return shape_err("maxpool1d", "scalar input");
        };
        let planes = lead.iter().product();
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = self.pool_extent("maxpool1d", n, window, stride)?;
        self.pool(x, planes, (1, n), (1, window), (1, stride), out_shape)
    }

    /// Max-pool over the last two axes. Partial trailing windows are dropped.
    pub fn maxpool2d(&mut self, x: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("maxpool2d", format!("need at least 2 axes, got {shape:?}"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = shape[..shape.len() - 2].iter().product();
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = self.pool_extent("maxpool2d", h, window.0, stride.0)?;
        out_shape[r - 1] = self.pool_extent("maxpool2d", w, window.1, stride.1)?;
        self.pool(x, planes, (h, w), window, stride, out_shape)
    }

    fn pool_extent(&self, op: &'static str, n: usize, window: usize, stride: usize) -> Result<usize> {
        if window == 0 || stride == 0 {
            return Err(AutogradError::Invalid(format!("{op}: window and stride must be >= 1")));
        }
        if window > n {
            return shape_err(op, format!("window {window} exceeds extent {n}"));
        }
        Ok((n - window) / stride + 1)
    }

    fn pool(
        &mut self,
        x: Var,
        planes: usize,
        (h, w): (usize, usize),
        window: (usize, usize),
        stride: (usize, usize),
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let (data, argmax) = kernels::maxpool2d_forward(self.value(x).data(), planes, h, w, window, stride);
        let in_len = planes * h * w;
        Ok(self.record(
            tensor(&out_shape, data),
            vec![x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut g = vec![0.0; in_len];
                for (&i, &u) in argmax.iter().zip(ctx.grad_out) {
                    g[i] += u;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `v / (‖v‖₂ + ε)` over all entries of `v`.
    pub fn l2_normalize(&mut self, v: Var) -> Var {
        let input = self.value(v);
        let norm = input.l2_norm();
        let s = norm + L2_EPS;
        let data = input.data().iter().map(|x| x / s).collect();
        let out = tensor(input.shape(), data);
        self.record(
            out,
            vec![v],
            Box::new(move |ctx: &BackwardCtx| {
                let (x, g) = (ctx.inputs[0].data(), ctx.grad_out);
                if norm == 0.0 {
                    return vec![Some(g.iter().map(|g| g / s).collect())];
                }
                let dot: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum();
                let coef = dot / (norm * s * s);
                vec![Some(x.iter().zip(g).map(|(x, g)| g / s - x * coef).collect())]
            }),
        )
    }

    /// `‖a − b‖₂` as a scalar. The gradient at `a = b` is taken as zero.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("euclidean_distance", a, b)?;
        let d = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        Ok(self.record(
            Tensor::scalar(d),
            vec![a, b],
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad_out[0];
                let diff: Vec<f64> = if d > 0.0 {
                    ctx.inputs[0]
                        .data()
                        .iter()
                        .zip(ctx.inputs[1].data())
                        .map(|(x, y)| g * (x - y) / d)
                        .collect()
                } else {
                    vec![0.0; ctx.inputs[0].numel()]
                };
                let db = ctx.needs_grad[1].then(|| diff.iter().map(|v| -v).collect());
                vec![ctx.needs_grad[0].then_some(diff), db]
            }),
        ))
    }

    /// Softmax over all entries of a vector.
    pub fn softmax(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let max = input.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = input.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = tensor(input.shape(), exps.into_iter().map(|e| e / total).collect());
        self.record(
            out,
            vec![x],
            Box::new(|ctx: &BackwardCtx| {
                let (y, g) = (ctx.output.data(), ctx.grad_out);
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                vec![Some(y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect())]
            }),
        )
    }

    /// `−log softmax(logits)[label]` via max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let input = self.value(logits);
        if input.ndim() != 1 {
            return shape_err("cross_entropy", format!("logits must be 1D, got {:?}", input.shape()));
        }
        let k = input.numel();
        if label >= k {
            return Err(AutogradError::Invalid(format!("label {label} out of range for {k} classes")));
        }
        let z = input.data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = lse - z[label];
        Ok(self.record(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad_out[0];
                let grad = ctx.inputs[0]
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let p = (v - lse).exp();
                        g * (p - if i == label { 1.0 } else { 0.0 })
                    })
                    .collect();
                vec![Some(grad)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape, data).unwrap().with_requires_grad(true))
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 3, 3], vec![1.0; 9]);
        let k = leaf(&mut t, &[1, 1, 1, 1], vec![1.0]);
        let b = leaf(&mut t, &[1], vec![0.0]);
        let y = t.conv2d(x, k, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(t.shape(y), &[1, 3, 3]);
        assert_eq!(t.value(y).data(), &[1.0; 9]);
    }

    #[test]
    fn conv2d_reference_geometry() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 56, 40]));
        let k = t.constant(Tensor::zeros(&[1, 1, 5, 5]));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d(x, k, b, (1, 1), (4, 4)).unwrap();
        assert_eq!(t.shape(y), &[1, 60, 44]);
    }

    #[test]
    fn conv2d_sliding_sum() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 4, 4], (1..=16).map(f64::from).collect()).unwrap());
        let k = t.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d(x, k, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(
            t.value(y).data(),
            &[14.0, 18.0, 22.0, 30.0, 34.0, 38.0, 46.0, 50.0, 54.0]
        );
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2, 4, 4]));
        let k = t.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let b = t.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            t.conv2d(x, k, b, (1, 1), (0, 0)),
            Err(AutogradError::Shape { .. })
        ));
    }

    #[test]
    fn conv1d_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let k = t.constant(Tensor::full(&[1, 1, 1], 2.0));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv1d(x, k, b, 1, 0).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 4.0, 6.0, 8.0, 10.0]);

        let x = t.constant(Tensor::new(&[1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let k = t.constant(Tensor::full(&[1, 1, 3], 1.0));
        let y = t.conv1d(x, k, b, 1, 1).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);

        let x = t.constant(Tensor::zeros(&[128, 16]));
        let k = t.constant(Tensor::zeros(&[64, 128, 5]));
        let b = t.constant(Tensor::zeros(&[64]));
        let y = t.conv1d(x, k, b, 1, 2).unwrap();
        assert_eq!(t.shape(y), &[64, 16]);
    }

    #[test]
    fn transposed_conv1d_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let k = t.constant(Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.transposed_conv1d(x, k, 4).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = t.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let k = t.constant(Tensor::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = t.transposed_conv1d(x, k, 1).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 1.0]);

        let x = t.constant(Tensor::zeros(&[1, 4]));
        let k = t.constant(Tensor::zeros(&[1, 1, 8]));
        let y = t.transposed_conv1d(x, k, 4).unwrap();
        assert_eq!(t.shape(y), &[1, 20]);
    }

    #[test]
    fn maxpool_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![1.0, 3.0, 2.0, 8.0]));
        let y = t.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 8.0]);

        let x = t.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = t.maxpool2d(x, (2, 2), (2, 2)).unwrap();
        assert_eq!(t.value(y).data(), &[4.0]);

        let x = leaf(&mut t, &[3], vec![5.0, 5.0, 1.0]);
        let y = t.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(t.value(y).data(), &[5.0]);
        let s = t.sum(y, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 0.0]);

        let x = t.constant(Tensor::from_vec(vec![1.0]));
        assert!(t.maxpool1d(x, 2, 2).is_err());
    }

    #[test]
    fn pointwise_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(-700.0);
        assert!(s > 0.0 && s <= 1e-300 && s.is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.value(y).item(), 0.0);
    }

    #[test]
    fn linear_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let w = t.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::zeros(&[2]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);

        let x = t.constant(Tensor::from_vec(vec![2.0, 3.0]));
        let w = t.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let b = t.constant(Tensor::from_vec(vec![1.0]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[6.0]);

        let bad = t.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(t.linear(bad, w, b).is_err());
    }

    #[test]
    fn reductions_and_product_rule() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let m = t.mean(x, None).unwrap();
        assert_eq!(t.value(m).item(), 2.0);

        let x = t.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = t.sum(x, Some(0)).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);
        assert!(matches!(t.sum(x, Some(2)), Err(AutogradError::Axis { .. })));

        let a = leaf(&mut t, &[1], vec![1.0]);
        let b = leaf(&mut t, &[1], vec![2.0]);
        let c = leaf(&mut t, &[1], vec![3.0]);
        let ab = t.add(a, b).unwrap();
        let y = t.mul(ab, c).unwrap();
        let y = t.sum(y, None).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[3.0]);
    }

    #[test]
    fn l2_normalize_cases() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let n = t.l2_normalize(v);
        let d = t.value(n).data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);

        let v = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let n = t.l2_normalize(v);
        assert_eq!(t.value(n).data(), &[0.0, 0.0]);
    }

    #[test]
    fn euclidean_distance_cases() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let d = t.euclidean_distance(a, b).unwrap();
        assert_eq!(t.value(d).item(), 5.0);
        let d = t.euclidean_distance(a, a).unwrap();
        assert_eq!(t.value(d).item(), 0.0);

        let theta = std::f64::consts::PI / 3.0;
        let u = t.constant(Tensor::from_vec(vec![1.0, 0.0]));
        let w = t.constant(Tensor::from_vec(vec![theta.cos(), theta.sin()]));
        let d = t.euclidean_distance(u, w).unwrap();
        let d2 = t.value(d).item().powi(2);
        assert!((d2 - (2.0 - 2.0 * theta.cos())).abs() < 1e-12);
        assert!((d2 - 1.0).abs() < 1e-12);

        let c = t.constant(Tensor::from_vec(vec![1.0]));
        assert!(t.euclidean_distance(a, c).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(t.backward(x), Err(AutogradError::NotScalar(_))));
        let s = t.sum(x, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[], vec![0.0]);
        let y = t.sigmoid(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let l = t.cross_entropy(z, 1).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(t.cross_entropy(z, 2).is_err());
    }

    #[test]
    fn narrow_and_pad_edge() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = t.pad_edge(x, 1, 1, 2).unwrap();
        assert_eq!(
            t.value(p).data(),
            &[1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 4.0, 4.0, 5.0, 6.0, 6.0, 6.0]
        );
        let n = t.narrow(p, 1, 1, 3).unwrap();
        assert_eq!(t.value(n).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = t.sum(p, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 1.0, 3.0, 2.0, 1.0, 3.0]);
    }
}
