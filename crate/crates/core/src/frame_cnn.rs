//! Per-frame feature extractor: three conv(5×5, pad 4) → tanh → maxpool(2×2)
//! stages, then flatten → affine → tanh down to a 128-d vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{Tape, Tensor, Var};

use crate::error::{ReidError, Result};
use crate::params::{fan_in_uniform, ParamSet};
use crate::preprocessing::{FrameTensor, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH};

pub const FEATURE_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnnConfig {
    /// Channel plan including the input channels, e.g. `[5, 16, 32, 32]`.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub feature_dim: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![FRAME_CHANNELS, 16, 32, 32],
            kernel: 5,
            padding: 4,
            pool: 2,
            input_height: FRAME_HEIGHT,
            input_width: FRAME_WIDTH,
            feature_dim: FEATURE_DIM,
        }
    }
}

impl CnnConfig {
    /// Spatial extents after each conv and each pool, starting from the input.
    pub fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        let mut dims = vec![(self.input_height, self.input_width)];
        let (mut h, mut w) = (self.input_height, self.input_width);
        for _ in 1..self.channels.len() {
            let grow = 2 * self.padding + 1;
            if h + grow <= self.kernel || w + grow <= self.kernel {
                return Err(ReidError::Invalid(format!("input {h}x{w} too small for the kernel")));
            }
            h = h + 2 * self.padding + 1 - self.kernel;
            w = w + 2 * self.padding + 1 - self.kernel;
            dims.push((h, w));
            if h < self.pool || w < self.pool {
                return Err(ReidError::Invalid(format!("feature map {h}x{w} smaller than pool")));
            }
            h /= self.pool;
            w /= self.pool;
            dims.push((h, w));
        }
        Ok(dims)
    }

    /// Length of the flattened last-stage map consumed by the affine layer.
    pub fn flat_dim(&self) -> Result<usize> {
        let &(h, w) = self.spatial_trace()?.last().expect("non-empty trace");
        Ok(self.channels.last().copied().unwrap_or(0) * h * w)
    }

    fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(ReidError::Invalid(format!("bad channel plan {:?}", self.channels)));
        }
        if self.kernel == 0 || self.pool == 0 || self.feature_dim == 0 {
            return Err(ReidError::Invalid("kernel, pool and feature_dim must be positive".into()));
        }
        self.spatial_trace().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub config: CnnConfig,
    pub stages: Vec<ConvStage>,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

/// Fan-in uniform weights, zero biases, fully determined by `seed`.
pub fn init_cnn(seed: u64, config: &CnnConfig) -> Result<CnnParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.kernel;
    let stages = config
        .channels
        .windows(2)
        .map(|io| ConvStage {
            kernel: fan_in_uniform(&mut rng, &[io[1], io[0], k, k], io[0] * k * k),
            bias: Tensor::zeros(&[io[1]]),
        })
        .collect();
    let flat = config.flat_dim()?;
    Ok(CnnParams {
        config: config.clone(),
        stages,
        fc_weight: fan_in_uniform(&mut rng, &[config.feature_dim, flat], flat),
        fc_bias: Tensor::zeros(&[config.feature_dim]),
    })
}

impl ParamSet for CnnParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("cnn.conv{}.kernel", i + 1), &s.kernel));
            out.push((format!("cnn.conv{}.bias", i + 1), &s.bias));
        }
        out.push(("cnn.fc.weight".into(), &self.fc_weight));
        out.push(("cnn.fc.bias".into(), &self.fc_bias));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            out.push((format!("cnn.conv{}.kernel", i + 1), &mut s.kernel));
            out.push((format!("cnn.conv{}.bias", i + 1), &mut s.bias));
        }
        out.push(("cnn.fc.weight".into(), &mut self.fc_weight));
        out.push(("cnn.fc.bias".into(), &mut self.fc_bias));
        out
    }
}

/// CNN parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct CnnVars {
    pub config: CnnConfig,
    pub stages: Vec<(Var, Var)>,
    pub fc_weight: Var,
    pub fc_bias: Var,
}

impl CnnVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.stages.iter().flat_map(|&(k, b)| [k, b]).collect();
        v.extend([self.fc_weight, self.fc_bias]);
        v
    }
}

impl CnnParams {
    pub fn bind(&self, tape: &mut Tape) -> CnnVars {
        let vars = self.bind_all(tape);
        let n = self.stages.len();
        CnnVars {
            config: self.config.clone(),
            stages: (0..n).map(|i| (vars[2 * i], vars[2 * i + 1])).collect(),
            fc_weight: vars[2 * n],
            fc_bias: vars[2 * n + 1],
        }
    }
}

/// Maps `N` frames to the `[N, feature_dim]` frame-feature matrix.
/// Frames are processed independently (batched only for throughput).
pub fn forward_video(tape: &mut Tape, cnn: &CnnVars, frames: &[FrameTensor]) -> Result<Var> {
    let cfg = &cnn.config;
    if frames.is_empty() {
        return Err(ReidError::Invalid("video with no frames".into()));
    }
    let c0 = cfg.channels[0];
    let mut data = Vec::with_capacity(frames.len() * c0 * cfg.input_height * cfg.input_width);
    for f in frames {
        if f.tensor().shape() != [c0, cfg.input_height, cfg.input_width] {
            return Err(ReidError::Invalid(format!(
                "frame shape {:?}, network expects [{c0}, {}, {}]",
                f.tensor().shape(),
                cfg.input_height,
                cfg.input_width
            )));
        }
        data.extend_from_slice(f.tensor().data());
    }
    let n = frames.len();
    let mut x = tape.constant(Tensor::new(
        &[n, c0, cfg.input_height, cfg.input_width],
        data,
    )?);
    let pad = (cfg.padding, cfg.padding);
    for &(k, b) in &cnn.stages {
        x = tape.conv2d(x, k, b, (1, 1), pad)?;
        x = tape.tanh(x);
        x = tape.maxpool2d(x, (cfg.pool, cfg.pool), (cfg.pool, cfg.pool))?;
    }
    let flat = cfg.flat_dim()?;
    let x = tape.reshape(x, &[n, flat])?;
    let z = tape.linear(x, cnn.fc_weight, cnn.fc_bias)?;
    Ok(tape.tanh(z))
}

/// Feature vector `[feature_dim]` of a single frame.
pub fn forward_frame(tape: &mut Tape, cnn: &CnnVars, frame: &FrameTensor) -> Result<Var> {
    let z = forward_video(tape, cnn, std::slice::from_ref(frame))?;
    Ok(tape.reshape(z, &[cnn.config.feature_dim])?)
}
