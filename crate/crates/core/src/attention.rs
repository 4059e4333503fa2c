//! Fully convolutional temporal attention.
//!
//! The `N × 128` frame-feature matrix is read as a length-`N` signal with 128
//! channels. Two conv1d → tanh → maxpool(2) blocks encode it at a quarter of
//! the temporal resolution, a 1×1 convolution scores each position, and a
//! single learned transposed convolution (stride 4) upsamples the scores
//! back. The result is center-cropped to `N` raw scores α; λ = sigmoid(α).
//!
//! The video descriptor averages the attention-weighted sum Σ λᵢ zᵢ with the
//! plain temporal mean of the zᵢ and L2-normalizes the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{Tape, Tensor, Var};

use crate::error::{ReidError, Result};
use crate::frame_cnn::{self, CnnVars, FEATURE_DIM};
use crate::params::{fan_in_uniform, ParamSet};
use crate::preprocessing::FrameTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreNormalizer {
    Sigmoid,
    /// Softmax over frames; kept for ablations only.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub feature_dim: usize,
    pub w1: usize,
    pub w2: usize,
    pub hidden: (usize, usize),
    pub upsample_stride: usize,
    pub upsample_kernel: usize,
    pub min_length: usize,
    pub normalizer: ScoreNormalizer,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            w1: 5,
            w2: 5,
            hidden: (64, 32),
            upsample_stride: 4,
            upsample_kernel: 8,
            min_length: 4,
            normalizer: ScoreNormalizer::Sigmoid,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1.is_multiple_of(2) || self.w2.is_multiple_of(2) {
            return Err(ReidError::Invalid(format!(
                "attention windows must be odd, got w1={} w2={}",
                self.w1, self.w2
            )));
        }
        if self.upsample_stride != 4 || self.upsample_kernel != 2 * self.upsample_stride {
            // Two stride-2 pools fix the total stride at 4.
            return Err(ReidError::Invalid(format!(
                "upsampling must be stride 4 with kernel 8, got stride {} kernel {}",
                self.upsample_stride, self.upsample_kernel
            )));
        }
        if self.min_length < 4 {
            return Err(ReidError::Invalid("min_length must be at least 4".into()));
        }
        if self.feature_dim == 0 || self.hidden.0 == 0 || self.hidden.1 == 0 {
            return Err(ReidError::Invalid("attention widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub config: AttentionConfig,
    pub conv1_kernel: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernel: Tensor,
    pub conv2_bias: Tensor,
    pub score_kernel: Tensor,
    pub score_bias: Tensor,
    pub upsample_kernel: Tensor,
}

/// Linear-interpolation taps for a stride-`s`, length-`2s` transposed conv.
pub fn triangular_kernel(stride: usize) -> Vec<f64> {
    let k = 2 * stride;
    let center = (k as f64 - 1.0) / 2.0;
    (0..k)
        .map(|t| 1.0 - (t as f64 - center).abs() / stride as f64)
        .collect()
}

impl AttentionParams {
    pub fn init(seed: u64, config: &AttentionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, (h1, h2)) = (config.feature_dim, config.hidden);
        Ok(Self {
            config: config.clone(),
            conv1_kernel: fan_in_uniform(&mut rng, &[h1, d, config.w1], d * config.w1),
            conv1_bias: Tensor::zeros(&[h1]),
            conv2_kernel: fan_in_uniform(&mut rng, &[h2, h1, config.w2], h1 * config.w2),
            conv2_bias: Tensor::zeros(&[h2]),
            score_kernel: fan_in_uniform(&mut rng, &[1, h2, 1], h2),
            score_bias: Tensor::zeros(&[1]),
            upsample_kernel: Tensor::new(
                &[1, 1, config.upsample_kernel],
                triangular_kernel(config.upsample_stride),
            )?,
        })
    }

    /// All-zero network: every raw score is 0 and every λ is 0.5.
    pub fn zeros(config: &AttentionConfig) -> Result<Self> {
        config.validate()?;
        let (d, (h1, h2)) = (config.feature_dim, config.hidden);
        Ok(Self {
            config: config.clone(),
            conv1_kernel: Tensor::zeros(&[h1, d, config.w1]),
            conv1_bias: Tensor::zeros(&[h1]),
            conv2_kernel: Tensor::zeros(&[h2, h1, config.w2]),
            conv2_bias: Tensor::zeros(&[h2]),
            score_kernel: Tensor::zeros(&[1, h2, 1]),
            score_bias: Tensor::zeros(&[1]),
            upsample_kernel: Tensor::zeros(&[1, 1, config.upsample_kernel]),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionVars {
        let v = self.bind_all(tape);
        AttentionVars {
            config: self.config.clone(),
            conv1: (v[0], v[1]),
            conv2: (v[2], v[3]),
            score: (v[4], v[5]),
            upsample: v[6],
        }
    }
}

impl ParamSet for AttentionParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("attention.conv1.kernel".into(), &self.conv1_kernel),
            ("attention.conv1.bias".into(), &self.conv1_bias),
            ("attention.conv2.kernel".into(), &self.conv2_kernel),
            ("attention.conv2.bias".into(), &self.conv2_bias),
            ("attention.score.kernel".into(), &self.score_kernel),
            ("attention.score.bias".into(), &self.score_bias),
            ("attention.upsample.kernel".into(), &self.upsample_kernel),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("attention.conv1.kernel".into(), &mut self.conv1_kernel),
            ("attention.conv1.bias".into(), &mut self.conv1_bias),
            ("attention.conv2.kernel".into(), &mut self.conv2_kernel),
            ("attention.conv2.bias".into(), &mut self.conv2_bias),
            ("attention.score.kernel".into(), &mut self.score_kernel),
            ("attention.score.bias".into(), &mut self.score_bias),
            ("attention.upsample.kernel".into(), &mut self.upsample_kernel),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub config: AttentionConfig,
    pub conv1: (Var, Var),
    pub conv2: (Var, Var),
    pub score: (Var, Var),
    pub upsample: Var,
}

impl AttentionVars {
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.conv1.0,
            self.conv1.1,
            self.conv2.0,
            self.conv2.1,
            self.score.0,
            self.score.1,
            self.upsample,
        ]
    }
}

/// Raw scores α and normalized scores λ, both `[N]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVector {
    pub alpha: Var,
    pub lambda: Var,
}

fn frame_count(tape: &Tape, features: Var, dim: usize) -> Result<usize> {
    match tape.shape(features) {
        &[n, d] if d == dim && n > 0 => Ok(n),
        s => Err(ReidError::Invalid(format!("frame features must be [N, {dim}], got {s:?}"))),
    }
}

/// Per-frame attention for an `[N, feature_dim]` feature matrix.
///
/// Sequences shorter than `min_length` are edge-replicated up to it and the
/// scores are cropped back to the original frames.
pub fn attention_scores(tape: &mut Tape, att: &AttentionVars, features: Var) -> Result<AttentionVector> {
    let cfg = &att.config;
    let n = frame_count(tape, features, cfg.feature_dim)?;
    let mut x = tape.transpose(features)?;
    let (before, after) = if n < cfg.min_length {
        let missing = cfg.min_length - n;
        (missing / 2, missing - missing / 2)
    } else {
        (0, 0)
    };
    if before + after > 0 {
        x = tape.pad_edge(x, 1, before, after)?;
    }
    let len = n + before + after;

    let h = tape.conv1d(x, att.conv1.0, att.conv1.1, 1, (cfg.w1 - 1) / 2)?;
    let h = tape.tanh(h);
    let h = tape.maxpool1d(h, 2, 2)?;
    let h = tape.conv1d(h, att.conv2.0, att.conv2.1, 1, (cfg.w2 - 1) / 2)?;
    let h = tape.tanh(h);
    let h = tape.maxpool1d(h, 2, 2)?;
    let s = tape.conv1d(h, att.score.0, att.score.1, 1, 0)?;
    let up = tape.transposed_conv1d(s, att.upsample, cfg.upsample_stride)?;

    let up_len = tape.shape(up)[1];
    debug_assert!(up_len >= len);
    let offset = (up_len - len) / 2 + before;
    let alpha = tape.narrow(up, 1, offset, n)?;
    let alpha = tape.reshape(alpha, &[n])?;
    let lambda = match cfg.normalizer {
        ScoreNormalizer::Sigmoid => tape.sigmoid(alpha),
        ScoreNormalizer::Softmax => tape.softmax(alpha),
    };
    Ok(AttentionVector { alpha, lambda })
}

/// `γ = Σᵢ λᵢ zᵢ`, unnormalized.
pub fn attention_pool(tape: &mut Tape, features: Var, lambda: Var) -> Result<Var> {
    let &[n, d] = tape.shape(features) else {
        return Err(ReidError::Invalid(format!(
            "frame features must be 2D, got {:?}",
            tape.shape(features)
        )));
    };
    if tape.shape(lambda) != [n] {
        return Err(ReidError::Invalid(format!(
            "{} attention weights for {n} frames",
            tape.value(lambda).numel()
        )));
    }
    let row = tape.reshape(lambda, &[1, n])?;
    let pooled = tape.matmul(row, features)?;
    Ok(tape.reshape(pooled, &[d])?)
}

/// `(1/N) Σᵢ zᵢ`.
pub fn mean_pool(tape: &mut Tape, features: Var) -> Result<Var> {
    Ok(tape.mean(features, Some(0))?)
}

/// Everything one branch produces for a video.
#[derive(Clone, Copy, Debug)]
pub struct VideoEncoding {
    pub features: Var,
    pub attention: AttentionVector,
    /// L2-normalized video descriptor `F`.
    pub descriptor: Var,
}

/// `F = l2_normalize((attention_pool + mean_pool) / 2)` from a feature matrix.
pub fn descriptor_from_features(tape: &mut Tape, att: &AttentionVars, features: Var) -> Result<VideoEncoding> {
    let attention = attention_scores(tape, att, features)?;
    let gamma = attention_pool(tape, features, attention.lambda)?;
    let mean = mean_pool(tape, features)?;
    let sum = tape.add(gamma, mean)?;
    let fused = tape.scale(sum, 0.5);
    let descriptor = tape.l2_normalize(fused);
    Ok(VideoEncoding {
        features,
        attention,
        descriptor,
    })
}

/// Frames → CNN features → attention → descriptor.
pub fn video_descriptor(
    tape: &mut Tape,
    cnn: &CnnVars,
    att: &AttentionVars,
    frames: &[FrameTensor],
) -> Result<VideoEncoding> {
    let features = frame_cnn::forward_video(tape, cnn, frames)?;
    descriptor_from_features(tape, att, features)
}
