//! Direct-loop reference kernels used as independent oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// out[o][y][x] = b[o] + Σ_c Σ_i Σ_j x[c][y·s+i−p][x·s+j−p] · k[o][c][i][j]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_direct(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    b: &[f64],
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b[oc];
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * sh + i) as isize - ph as isize;
                            let ix = (xx * sw + j) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ic * h + iy as usize) * w + ix as usize]
                                * k[((oc * c + ic) * kh + i) * kw + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn transposed_conv1d_direct(
    x: &[f64],
    (c_in, n): (usize, usize),
    k: &[f64],
    (c_out, klen): (usize, usize),
    stride: usize,
) -> Vec<f64> {
    let len = (n - 1) * stride + klen;
    let mut out = vec![0.0; c_out * len];
    for co in 0..c_out {
        for j in 0..len {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for i in 0..n {
                    if j >= i * stride && j - i * stride < klen {
                        acc += x[ci * n + i] * k[(ci * c_out + co) * klen + (j - i * stride)];
                    }
                }
            }
            out[co * len + j] = acc;
        }
    }
    out
}

pub fn maxpool1d_direct(x: &[f64], window: usize, stride: usize) -> Vec<f64> {
    let out_len = (x.len() - window) / stride + 1;
    (0..out_len)
        .map(|i| {
            x[i * stride..i * stride + window]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

pub fn maxpool2d_direct(x: &[f64], h: usize, w: usize, win: usize, stride: usize) -> Vec<f64> {
    let oh = (h - win) / stride + 1;
    let ow = (w - win) / stride + 1;
    let mut out = Vec::new();
    for y in 0..oh {
        for xx in 0..ow {
            let mut m = f64::NEG_INFINITY;
            for i in 0..win {
                for j in 0..win {
                    m = m.max(x[(y * stride + i) * w + xx * stride + j]);
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
