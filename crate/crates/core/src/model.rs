use tempattn_autograd::{Tape, Tensor, Var};

use crate::attention::{self, AttentionConfig, AttentionParams, AttentionVars, VideoEncoding};
use crate::error::Result;
use crate::frame_cnn::{self, CnnConfig, CnnParams, CnnVars};
use crate::losses::{ClassifierVars, IdentityClassifier};
use crate::params::ParamSet;
use crate::preprocessing::FrameTensor;

/// Shared-weight Siamese model: frame CNN, temporal attention and the
/// identity classifier used by both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct ReidModel {
    pub cnn: CnnParams,
    pub attention: AttentionParams,
    pub classifier: IdentityClassifier,
}

/// The model's parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub cnn: CnnVars,
    pub attention: AttentionVars,
    pub classifier: ClassifierVars,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.cnn.all();
        v.extend(self.attention.all());
        v.extend([self.classifier.weight, self.classifier.bias]);
        v
    }
}

impl ReidModel {
    /// Each component draws from its own stream derived from `seed`.
    pub fn init(seed: u64, num_classes: usize, cnn: &CnnConfig, att: &AttentionConfig) -> Result<Self> {
        let cnn = frame_cnn::init_cnn(seed, cnn)?;
        let attention = AttentionParams::init(seed.wrapping_add(1), att)?;
        let classifier = IdentityClassifier::init(seed.wrapping_add(2), num_classes, cnn.config.feature_dim)?;
        Ok(Self {
            cnn,
            attention,
            classifier,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let vars = self.bind_all(tape);
        self.vars_from(&vars)
    }

    /// Interprets `vars`, given in [`ParamSet::named_params`] order, as this
    /// model's parameters.
    pub fn vars_from(&self, vars: &[Var]) -> ModelVars {
        let n_stages = self.cnn.stages.len();
        let n_cnn = 2 * n_stages + 2;
        let a = &vars[n_cnn..];
        let c = &vars[n_cnn + 7..];
        ModelVars {
            cnn: CnnVars {
                config: self.cnn.config.clone(),
                stages: (0..n_stages).map(|i| (vars[2 * i], vars[2 * i + 1])).collect(),
                fc_weight: vars[2 * n_stages],
                fc_bias: vars[2 * n_stages + 1],
            },
            attention: AttentionVars {
                config: self.attention.config.clone(),
                conv1: (a[0], a[1]),
                conv2: (a[2], a[3]),
                score: (a[4], a[5]),
                upsample: a[6],
            },
            classifier: ClassifierVars {
                weight: c[0],
                bias: c[1],
                num_classes: self.classifier.num_classes(),
            },
        }
    }

    /// Copies gradients from the tape into every parameter's gradient slot.
    pub fn absorb_grads(&mut self, tape: &Tape, vars: &ModelVars) -> Result<()> {
        let all = vars.all();
        let n_cnn = vars.cnn.all().len();
        let n_att = vars.attention.all().len();
        self.cnn.absorb_grads(tape, &all[..n_cnn])?;
        self.attention.absorb_grads(tape, &all[n_cnn..n_cnn + n_att])?;
        self.classifier.absorb_grads(tape, &all[n_cnn + n_att..])
    }

    /// Descriptor computation without keeping the tape around.
    pub fn describe(&self, frames: &[FrameTensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = attention::video_descriptor(&mut tape, &vars.cnn, &vars.attention, frames)?;
        Ok(tape.value(enc.descriptor).data().to_vec())
    }

    /// Raw and normalized attention scores for a video, one per frame.
    pub fn attention_of(&self, frames: &[FrameTensor]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc: VideoEncoding = attention::video_descriptor(&mut tape, &vars.cnn, &vars.attention, frames)?;
        Ok((
            tape.value(enc.attention.alpha).data().to_vec(),
            tape.value(enc.attention.lambda).data().to_vec(),
        ))
    }
}

impl ParamSet for ReidModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.cnn.named_params();
        v.extend(self.attention.named_params());
        v.extend(self.classifier.named_params());
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.cnn.named_params_mut();
        v.extend(self.attention.named_params_mut());
        v.extend(self.classifier.named_params_mut());
        v
    }
}
