//! Raw forward/backward kernels on flat slices.
//!
//! Convolutions are lowered to patch matrices and multiplied with
//! `matrixmultiply::dgemm`. Batched calls fan out over samples with rayon;
//! per-sample partial sums are reduced in sample order so results do not
//! depend on the thread count.

use rayon::prelude::*;

/// Geometry of a 2D cross-correlation on one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding.0 - self.kh) / self.stride.0 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding.1 - self.kw) / self.stride.1 + 1
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.positions()
    }
}

/// Row-major `c = a · b (+ c if accumulate)` for `a: m×k`, `b: k×n`.
/// `a_t`/`b_t` read the operand as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are asserted.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &Conv2dGeom, cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Conv2dGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched forward pass. `x` holds `batch` samples of `c_in×h×w`.
pub fn conv2d_forward(
    x: &[f64],
    batch: usize,
    kernel: &[f64],
    bias: &[f64],
    g: &Conv2dGeom,
) -> Vec<f64> {
    let (in_len, out_len, p, ck) = (g.in_len(), g.out_len(), g.positions(), g.patch_len());
    let mut out = vec![0.0; batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each(|(y, xs)| {
            let mut cols = vec![0.0; ck * p];
            im2col(xs, g, &mut cols);
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[o]);
            }
            gemm(g.c_out, ck, p, kernel, false, &cols, false, y, true);
        });
    out
}

pub struct Conv2dGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

/// Batched backward pass; only the requested gradients are computed.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    batch: usize,
    kernel: &[f64],
    g: &Conv2dGeom,
    grad_out: &[f64],
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> Conv2dGrads {
    let (in_len, out_len, p, ck) = (g.in_len(), g.out_len(), g.positions(), g.patch_len());
    let k_len = g.c_out * ck;

    let per_sample: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..batch)
        .into_par_iter()
        .map(|s| {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let gy = &grad_out[s * out_len..(s + 1) * out_len];
            let mut cols = vec![0.0; ck * p];
            let dk = need_kernel.then(|| {
                im2col(xs, g, &mut cols);
                let mut dk = vec![0.0; k_len];
                gemm(g.c_out, p, ck, gy, false, &cols, true, &mut dk, false);
                dk
            });
            let dx = need_input.then(|| {
                gemm(ck, g.c_out, p, kernel, true, gy, false, &mut cols, false);
                let mut dx = vec![0.0; in_len];
                col2im(&cols, g, &mut dx);
                dx
            });
            (dx, dk)
        })
        .collect();

    let input = need_input.then(|| {
        let mut dx = Vec::with_capacity(batch * in_len);
        for (d, _) in &per_sample {
            dx.extend_from_slice(d.as_ref().expect("input grad computed"));
        }
        dx
    });
    let kernel_grad = need_kernel.then(|| {
        let mut dk = vec![0.0; k_len];
        for (_, d) in &per_sample {
            let d = d.as_ref().expect("kernel grad computed");
            dk.iter_mut().zip(d).for_each(|(a, b)| *a += b);
        }
        dk
    });
    let bias = need_bias.then(|| {
        let mut db = vec![0.0; g.c_out];
        for gy in grad_out.chunks(out_len) {
            for (o, row) in gy.chunks(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        db
    });
    Conv2dGrads {
        input,
        kernel: kernel_grad,
        bias,
    }
}

/// Transposed 1D convolution (scatter form). `x: c_in×n`, `kernel: c_in×c_out×k`.
pub fn transposed_conv1d_forward(
    x: &[f64],
    c_in: usize,
    n: usize,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
) -> Vec<f64> {
    let len = (n - 1) * stride + k;
    let mut out = vec![0.0; c_out * len];
    for ci in 0..c_in {
        for i in 0..n {
            let xv = x[ci * n + i];
            for co in 0..c_out {
                let taps = &kernel[(ci * c_out + co) * k..(ci * c_out + co + 1) * k];
                let dst = &mut out[co * len + i * stride..co * len + i * stride + k];
                dst.iter_mut().zip(taps).for_each(|(o, t)| *o += xv * t);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn transposed_conv1d_backward(
    x: &[f64],
    c_in: usize,
    n: usize,
    kernel: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let len = (n - 1) * stride + k;
    let mut dx = vec![0.0; c_in * n];
    let mut dk = vec![0.0; kernel.len()];
    for ci in 0..c_in {
        for i in 0..n {
            let xv = x[ci * n + i];
            let mut acc = 0.0;
            for co in 0..c_out {
                let base = (ci * c_out + co) * k;
                let gy = &grad_out[co * len + i * stride..co * len + i * stride + k];
                for t in 0..k {
                    acc += gy[t] * kernel[base + t];
                    dk[base + t] += xv * gy[t];
                }
            }
            dx[ci * n + i] = acc;
        }
    }
    (dx, dk)
}

/// Max-pooling over the trailing `h×w` plane of `planes` stacked planes.
/// Returns the pooled values and, per output, the flat index of the winning
/// input. Ties go to the first maximum in row-major window order.
pub fn maxpool2d_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: (usize, usize),
    stride: (usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let oh = (h - window.0) / stride.0 + 1;
    let ow = (w - window.1) / stride.1 + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..window.0 {
                    let row = base + (oy * stride.0 + dy) * w + ox * stride.1;
                    for dx in 0..window.1 {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_i = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn maxpool_first_max_wins() {
        let (v, idx) = maxpool2d_forward(&[5.0, 5.0, 1.0], 1, 1, 3, (1, 2), (1, 2));
        assert_eq!(v, vec![5.0]);
        assert_eq!(idx, vec![0]);
    }
}
