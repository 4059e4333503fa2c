//! Named finite-difference gradient checks covering every differentiable
//! primitive and the model's complete training loss.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{grad_check_many, AutogradError, GradCheckReport, Tape, Tensor, Var};

use crate::attention::{self, AttentionConfig};
use crate::error::{ReidError, Result};
use crate::frame_cnn::{self, CnnConfig};
use crate::losses::{self, combined_loss};
use crate::model::{ModelVars, ReidModel};
use crate::params::ParamSet;
use crate::preprocessing::{FrameTensor, FRAME_CHANNELS};

pub const STEP: f64 = 1e-5;
/// Step of the second central difference reported for failing entries.
pub const COARSE_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Seeded random points per primitive.
pub const OP_POINTS: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub points: usize,
    /// Total number of perturbed entries.
    pub checked: usize,
    pub max_relative_error: f64,
    pub failures: Vec<EntryFailure>,
    pub elapsed: Duration,
}

/// An entry above [`TOLERANCE`], with the central difference repeated at
/// [`COARSE_STEP`] for comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryFailure {
    pub point: u64,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coarse_numeric: f64,
}

impl EntryFailure {
    pub fn relative_error(&self) -> f64 {
        tempattn_autograd::relative_error(self.analytic, self.numeric)
    }
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

type AgResult<T> = tempattn_autograd::Result<T>;
type OpBody = fn(&mut Tape, &[Var], u64) -> AgResult<Var>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    body: OpBody,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

/// Weighted sum of `y` against fixed random weights.
fn project(t: &mut Tape, y: Var, seed: u64) -> AgResult<Var> {
    let w = uniform(&mut rng(seed ^ 0xface), t.shape(y), 1.0);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p, None)
}

fn lift<T>(r: Result<T>) -> AgResult<T> {
    r.map_err(|e| match e {
        ReidError::Autograd(inner) => inner,
        other => AutogradError::Invalid(other.to_string()),
    })
}

const OPS: &[OpCase] = &[
    OpCase {
        name: "tanh",
        shapes: &[&[12]],
        body: |t, v, s| {
            let y = t.scale(v[0], 3.0);
            let y = t.tanh(y);
            project(t, y, s)
        },
    },
    OpCase {
        name: "sigmoid",
        shapes: &[&[12]],
        body: |t, v, s| {
            let y = t.scale(v[0], 5.0);
            let y = t.sigmoid(y);
            project(t, y, s)
        },
    },
    OpCase {
        name: "relu",
        shapes: &[&[12]],
        body: |t, v, s| {
            let y = t.add_scalar(v[0], 0.1);
            let y = t.relu(y);
            project(t, y, s)
        },
    },
    OpCase {
        name: "add_sub_mul",
        shapes: &[&[3, 4], &[3, 4], &[3, 4]],
        body: |t, v, s| {
            let ab = t.add(v[0], v[1])?;
            let abc = t.mul(ab, v[2])?;
            let d = t.sub(abc, v[0])?;
            project(t, d, s)
        },
    },
    OpCase {
        name: "sum",
        shapes: &[&[3, 4, 2]],
        body: |t, v, s| {
            let y = t.sum(v[0], Some(1))?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "mean",
        shapes: &[&[5, 4]],
        body: |t, v, s| {
            let y = t.mean(v[0], Some(0))?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "transpose",
        shapes: &[&[3, 5]],
        body: |t, v, s| {
            let y = t.transpose(v[0])?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "pad_narrow_reshape",
        shapes: &[&[3, 5]],
        body: |t, v, s| {
            let y = t.pad_edge(v[0], 1, 2, 1)?;
            let y = t.narrow(y, 1, 1, 6)?;
            let y = t.reshape(y, &[18])?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "matmul",
        shapes: &[&[3, 5], &[5, 2]],
        body: |t, v, s| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "linear",
        shapes: &[&[3, 6], &[4, 6], &[4]],
        body: |t, v, s| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "conv2d",
        shapes: &[&[2, 6, 5], &[3, 2, 5, 5], &[3]],
        body: |t, v, s| {
            let y = t.conv2d(v[0], v[1], v[2], (1, 1), (4, 4))?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "conv1d",
        shapes: &[&[4, 9], &[3, 4, 5], &[3]],
        body: |t, v, s| {
            let y = t.conv1d(v[0], v[1], v[2], 1, 2)?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "transposed_conv1d",
        shapes: &[&[2, 4], &[2, 1, 8]],
        body: |t, v, s| {
            let y = t.transposed_conv1d(v[0], v[1], 4)?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "maxpool1d",
        shapes: &[&[3, 9]],
        body: |t, v, s| {
            let y = t.maxpool1d(v[0], 2, 2)?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "maxpool2d",
        shapes: &[&[2, 7, 6]],
        body: |t, v, s| {
            let y = t.maxpool2d(v[0], (2, 2), (2, 2))?;
            project(t, y, s)
        },
    },
    OpCase {
        name: "l2_normalize",
        shapes: &[&[7]],
        body: |t, v, s| {
            let y = t.l2_normalize(v[0]);
            project(t, y, s)
        },
    },
    OpCase {
        name: "euclidean_distance",
        shapes: &[&[6], &[6]],
        body: |t, v, _| t.euclidean_distance(v[0], v[1]),
    },
    OpCase {
        name: "softmax",
        shapes: &[&[6]],
        body: |t, v, s| {
            let y = t.softmax(v[0]);
            project(t, y, s)
        },
    },
    OpCase {
        name: "cross_entropy",
        shapes: &[&[5]],
        body: |t, v, s| {
            let z = t.scale(v[0], 3.0);
            t.cross_entropy(z, (s % 5) as usize)
        },
    },
];

/// Model-level cases on the toy network (default widths, `N = 4` frames of
/// `8×8×5`, three classes), perturbing evenly spaced entries of every
/// parameter tensor.
const MODEL_CASES: &[&str] = &[
    "frame_cnn",
    "attention_scores",
    "attention_pool",
    "video_descriptor",
    "hinge_positive",
    "hinge_negative",
    "identity_loss",
    "pipeline_positive",
    "pipeline_negative",
];

/// Entries perturbed per parameter tensor in the model-level cases.
const MODEL_ENTRIES: usize = 24;
const TOY_FRAMES: usize = 4;
const TOY_SIDE: usize = 8;
const TOY_CLASSES: usize = 3;
const WEIGHT_GAIN: f64 = 2.0;
const MODEL_POINTS: u64 = 2;

// Parameter groups a model case depends on.
const CNN: &[&str] = &["cnn."];
const DESCRIPTOR: &[&str] = &["cnn.", "attention."];
const ALL: &[&str] = &[""];

pub fn case_names() -> Vec<&'static str> {
    OPS.iter().map(|c| c.name).chain(MODEL_CASES.iter().copied()).collect()
}

fn toy_model(seed: u64) -> Result<ReidModel> {
    let cnn = CnnConfig {
        input_height: TOY_SIDE,
        input_width: TOY_SIDE,
        ..CnnConfig::default()
    };
    let mut m = ReidModel::init(seed, TOY_CLASSES, &cnn, &AttentionConfig::default())?;
    perturb_biases(&mut m, seed);
    Ok(m)
}

/// Checks run away from the literal initialization: biases are moved off
/// zero and weights scaled up so that no layer sits in a regime where
/// gradients shrink below what central differences resolve in `f64`.
fn perturb_biases(m: &mut ReidModel, seed: u64) {
    let mut r = rng(seed ^ 0xb1a5);
    for (name, t) in m.named_params_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = r.random_range(-0.02..0.02);
            }
        } else if !name.starts_with("attention.upsample") {
            for v in t.data_mut() {
                *v *= WEIGHT_GAIN;
            }
        }
    }
}

fn toy_frames(r: &mut ChaCha8Rng) -> Result<Vec<FrameTensor>> {
    (0..TOY_FRAMES)
        .map(|_| FrameTensor::new(uniform(r, &[FRAME_CHANNELS, TOY_SIDE, TOY_SIDE], 1.0)))
        .collect()
}

/// `(f(x + h·e) − f(x − h·e)) / 2h` for entry `index` of input `input`.
fn central<F>(f: &F, points: &[Tensor], input: usize, index: usize, h: f64) -> AgResult<f64>
where
    F: Fn(&mut Tape, &[Var]) -> AgResult<Var>,
{
    let at = |d: f64| {
        let mut work = points.to_vec();
        work[input].data_mut()[index] += d;
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    Ok((at(h)? - at(-h)?) / (2.0 * h))
}

#[derive(Default)]
struct Tally {
    checked: usize,
    worst: f64,
    failures: Vec<EntryFailure>,
}

impl Tally {
    fn add<F>(&mut self, point: u64, rep: &GradCheckReport, names: &[String], f: &F, points: &[Tensor]) -> AgResult<()>
    where
        F: Fn(&mut Tape, &[Var]) -> AgResult<Var>,
    {
        self.checked += rep.checked;
        self.worst = self.worst.max(rep.max_relative_error);
        for e in rep.entries.iter().filter(|e| !(e.relative_error() < TOLERANCE)) {
            self.failures.push(EntryFailure {
                point,
                tensor: names[e.input].clone(),
                index: e.index,
                analytic: e.analytic,
                numeric: e.numeric,
                coarse_numeric: central(f, points, e.input, e.index, COARSE_STEP)?,
            });
        }
        Ok(())
    }
}

fn check_op(case: &OpCase, points: u64) -> Result<Tally> {
    let mut tally = Tally::default();
    let names: Vec<String> = (0..case.shapes.len()).map(|i| format!("input{i}")).collect();
    for seed in 0..points {
        let mut r = rng(seed * 31 + case.name.len() as u64);
        let inputs: Vec<Tensor> = case.shapes.iter().map(|s| uniform(&mut r, s, 1.0)).collect();
        let f = |t: &mut Tape, v: &[Var]| (case.body)(t, v, seed);
        let rep = grad_check_many(f, &inputs, STEP, None)?;
        tally.add(seed, &rep, &names, &f, &inputs)?;
    }
    Ok(tally)
}

/// The two toy videos' frame features: recorded on the tape, or taken from
/// a cache when no CNN parameter is perturbed (the CNN output is then the
/// same for every evaluation).
struct Videos<'a> {
    frames: [&'a [FrameTensor]; 2],
    cached: Option<[Tensor; 2]>,
}

impl Videos<'_> {
    fn features(&self, t: &mut Tape, v: &ModelVars, which: usize) -> Result<Var> {
        match &self.cached {
            Some(c) => Ok(t.constant(c[which].clone())),
            None => frame_cnn::forward_video(t, &v.cnn, self.frames[which]),
        }
    }

    fn descriptor(&self, t: &mut Tape, v: &ModelVars, which: usize) -> Result<Var> {
        let y = self.features(t, v, which)?;
        Ok(attention::descriptor_from_features(t, &v.attention, y)?.descriptor)
    }
}

/// Checks a scalar function of the model parameters whose names start with
/// one of `uses`; the rest enter the tape as constants. CNN parameters and
/// the others are perturbed in separate passes so the second can reuse the
/// frame features.
fn check_model<F>(tally: &mut Tally, point: u64, model: &ReidModel, videos: [&[FrameTensor]; 2], uses: &[&str], f: F) -> Result<()>
where
    F: Fn(&mut Tape, &ModelVars, &Videos) -> Result<Var>,
{
    let params = model.named_params();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut cache = Vec::with_capacity(2);
    for frames in videos {
        let y = frame_cnn::forward_video(&mut tape, &vars.cnn, frames)?;
        cache.push(tape.value(y).clone());
    }
    let cache: [Tensor; 2] = cache.try_into().expect("two videos");

    for cnn_pass in [true, false] {
        let free: Vec<bool> = params
            .iter()
            .map(|(n, _)| uses.iter().any(|u| n.starts_with(u)) && n.starts_with("cnn.") == cnn_pass)
            .collect();
        if !free.contains(&true) {
            continue;
        }
        let (names, points): (Vec<String>, Vec<Tensor>) = params
            .iter()
            .zip(&free)
            .filter(|(_, &c)| c)
            .map(|((n, t), _)| (n.clone(), (*t).clone()))
            .unzip();
        let vids = Videos {
            frames: videos,
            cached: (!cnn_pass).then(|| cache.clone()),
        };
        let g = |t: &mut Tape, v: &[Var]| {
            let mut given = v.iter();
            let all: Vec<Var> = params
                .iter()
                .zip(&free)
                .map(|((_, p), &c)| if c { *given.next().expect("one var per free tensor") } else { t.constant((*p).clone()) })
                .collect();
            lift(f(t, &model.vars_from(&all), &vids))
        };
        let rep = grad_check_many(g, &points, STEP, Some(MODEL_ENTRIES))?;
        tally.add(point, &rep, &names, &g, &points)?;
    }
    Ok(())
}

fn check_model_case(name: &str, points: u64) -> Result<Tally> {
    let mut tally = Tally::default();
    for seed in 0..points.min(MODEL_POINTS) {
        let model = toy_model(seed)?;
        let mut r = rng(0x5eed + seed);
        let a = toy_frames(&mut r)?;
        let b = toy_frames(&mut r)?;
        let videos = [&a[..], &b[..]];
        let positive = name.ends_with("positive");
        let labels = if positive { (1, 1) } else { (0, 2) };
        let tally = &mut tally;
        match name {
            "frame_cnn" => check_model(tally, seed, &model, videos, CNN, |t, v, x| {
                let y = x.features(t, v, 0)?;
                Ok(project(t, y, seed)?)
            })?,
            "attention_scores" => check_model(tally, seed, &model, videos, DESCRIPTOR, |t, v, x| {
                let y = x.features(t, v, 0)?;
                let s = attention::attention_scores(t, &v.attention, y)?;
                Ok(project(t, s.lambda, seed)?)
            })?,
            "attention_pool" => check_model(tally, seed, &model, videos, DESCRIPTOR, |t, v, x| {
                let y = x.features(t, v, 0)?;
                let s = attention::attention_scores(t, &v.attention, y)?;
                let g = attention::attention_pool(t, y, s.lambda)?;
                Ok(project(t, g, seed)?)
            })?,
            "video_descriptor" => check_model(tally, seed, &model, videos, DESCRIPTOR, |t, v, x| {
                let d = x.descriptor(t, v, 0)?;
                Ok(project(t, d, seed)?)
            })?,
            "hinge_positive" | "hinge_negative" => check_model(tally, seed, &model, videos, DESCRIPTOR, |t, v, x| {
                let (f1, f2) = (x.descriptor(t, v, 0)?, x.descriptor(t, v, 1)?);
                losses::hinge_loss(t, f1, f2, positive, losses::DEFAULT_MARGIN)
            })?,
            "identity_loss" => check_model(tally, seed, &model, videos, ALL, |t, v, x| {
                let d = x.descriptor(t, v, 0)?;
                losses::identity_loss(t, d, seed as usize % TOY_CLASSES, &v.classifier)
            })?,
            _ => check_model(tally, seed, &model, videos, ALL, |t, v, x| {
                let (f1, f2) = (x.descriptor(t, v, 0)?, x.descriptor(t, v, 1)?);
                let (total, _) = combined_loss(t, f1, f2, labels, &v.classifier, losses::DEFAULT_MARGIN)?;
                Ok(total)
            })?,
        }
    }
    Ok(tally)
}

/// Runs one named case. Primitives are checked at `points` seeded inputs.
pub fn run_case(name: &str, points: u64) -> Result<CaseReport> {
    let start = Instant::now();
    let (name, tally, n) = if let Some(case) = OPS.iter().find(|c| c.name == name) {
        (case.name, check_op(case, points)?, points as usize)
    } else if let Some(&known) = MODEL_CASES.iter().find(|&&c| c == name) {
        (known, check_model_case(known, points)?, points.min(MODEL_POINTS) as usize)
    } else {
        return Err(ReidError::Invalid(format!(
            "unknown gradient check '{name}'; known: {}",
            case_names().join(", ")
        )));
    };
    Ok(CaseReport {
        name,
        points: n,
        checked: tally.checked,
        max_relative_error: tally.worst,
        failures: tally.failures,
        elapsed: start.elapsed(),
    })
}

pub fn run_all(points: u64) -> Result<Vec<CaseReport>> {
    case_names().into_iter().map(|n| run_case(n, points)).collect()
}
