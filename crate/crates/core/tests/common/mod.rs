//! Fixtures and direct-loop oracles shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempattn::config::TrainConfig;
use tempattn::data::{synth_generate, SynthConfig};
use tempattn::preprocessing::{FrameTensor, FRAME_CHANNELS};
use tempattn_autograd::Tensor;

#[path = "../../../autograd/tests/common/mod.rs"]
pub mod kernels;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

pub fn random_frames(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<FrameTensor> {
    (0..n)
        .map(|_| FrameTensor::new(random_tensor(r, &[FRAME_CHANNELS, h, w])).unwrap())
        .collect()
}

/// `out[o][t] = b[o] + Σ_c Σ_k x[c][t + k − pad] · w[o][c][k]`, zero outside.
pub fn conv1d_direct(x: &[f64], (c, n): (usize, usize), w: &[f64], (o, k): (usize, usize), b: &[f64], pad: usize) -> Vec<f64> {
    let out_len = n + 2 * pad - k + 1;
    let mut out = vec![0.0; o * out_len];
    for oc in 0..o {
        for t in 0..out_len {
            let mut acc = b[oc];
            for ic in 0..c {
                for j in 0..k {
                    let src = (t + j) as isize - pad as isize;
                    if src >= 0 && (src as usize) < n {
                        acc += x[ic * n + src as usize] * w[(oc * c + ic) * k + j];
                    }
                }
            }
            out[oc * out_len + t] = acc;
        }
    }
    out
}

/// `Σᵢ λᵢ zᵢ` over the rows of an `[n, d]` matrix.
pub fn weighted_sum_direct(z: &[f64], lambda: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (i, l) in lambda.iter().enumerate() {
        for j in 0..d {
            out[j] += l * z[i * d + j];
        }
    }
    out
}

pub fn mean_rows_direct(z: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += z[i * d + j];
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A small synthetic dataset at `dir`.
pub fn small_synth(dir: &Path, ids: usize, frames: usize, seed: u64) -> SynthConfig {
    let cfg = SynthConfig {
        num_identities: ids,
        frames_per_track: frames,
        width: 16,
        height: 24,
        occlusion_prob: 0.2,
        seed,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, dir).unwrap();
    cfg
}

/// A narrow network on 16×12 frames that trains in well under a second per
/// epoch.
pub fn toy_config(root: &Path, out: &Path) -> TrainConfig {
    TrainConfig::parse(&format!(
        "dataset_root = {}\noutput_dir = {}\nepochs = 1\nbase_lr = 0.001\nclip_len = 6\n\
         frame_height = 16\nframe_width = 12\ncnn_channels = 4, 4, 4\nattention_hidden = 8, 4\n\
         repetitions = 2\ncheckpoint_every = 1",
        root.display(),
        out.display()
    ))
    .unwrap()
}
