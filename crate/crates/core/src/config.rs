//! Flat `key = value` configuration files for training and the synthetic
//! generator. Blank lines and `#` comments are ignored; unknown keys are
//! errors so typos never pass silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{AttentionConfig, ScoreNormalizer};
use crate::error::{io_err, ReidError, Result};
use crate::frame_cnn::CnnConfig;
use crate::preprocessing::{FRAME_HEIGHT, FRAME_WIDTH};

/// Parsed `key = value` pairs with consumption tracking.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    base_dir: Option<PathBuf>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ReidError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ReidError::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(ReidError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }
        Ok(Self {
            entries,
            base_dir: None,
        })
    }

    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut kv = Self::parse(&text)?;
        kv.base_dir = path.parent().map(Path::to_path_buf);
        Ok(kv)
    }

    pub(crate) fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ReidError::Config(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub(crate) fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub(crate) fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.entries.remove(key).map(|v| {
            let p = PathBuf::from(v);
            match &self.base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            }
        })
    }

    pub(crate) fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| ReidError::Config(format!("bad list item in {key}: {s:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub(crate) fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(ReidError::Config(format!("unknown key {k}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Train a fresh model on each repetition's split.
    Retrain,
    /// Keep one checkpoint and vary only the test split.
    Fixed,
}

impl FromStr for EvalMode {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "retrain" => Ok(Self::Retrain),
            "fixed" => Ok(Self::Fixed),
            _ => Err(()),
        }
    }
}

impl EvalMode {
    fn as_str(self) -> &'static str {
        match self {
            Self::Retrain => "retrain",
            Self::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShotMode {
    Multi,
    Single,
}

impl FromStr for ShotMode {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "multi" => Ok(Self::Multi),
            "single" => Ok(Self::Single),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_schedule: Vec<(usize, f64)>,
    pub margin: f64,
    pub clip_len: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub repetitions: usize,
    pub eval_mode: EvalMode,
    pub shot_mode: ShotMode,
    pub frame_height: usize,
    pub frame_width: usize,
    pub lk_window: usize,
    pub cnn_channels: Vec<usize>,
    pub attention_w1: usize,
    pub attention_w2: usize,
    pub attention_hidden: (usize, usize),
    pub normalizer: ScoreNormalizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("run"),
            epochs: 1400,
            base_lr: 1e-4,
            lr_schedule: Vec::new(),
            margin: 2.0,
            clip_len: 16,
            seed: 0,
            checkpoint_every: 100,
            repetitions: 10,
            eval_mode: EvalMode::Retrain,
            shot_mode: ShotMode::Multi,
            frame_height: FRAME_HEIGHT,
            frame_width: FRAME_WIDTH,
            lk_window: 5,
            cnn_channels: vec![16, 32, 32],
            attention_w1: 5,
            attention_w2: 5,
            attention_hidden: (64, 32),
            normalizer: ScoreNormalizer::Sigmoid,
        }
    }
}

fn parse_schedule(v: &str) -> Result<Vec<(usize, f64)>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (e, m) = item
                .split_once(':')
                .ok_or_else(|| ReidError::Config(format!("schedule entry {item:?} is not epoch:multiplier")))?;
            let e = e.trim().parse().map_err(|_| ReidError::Config(format!("bad epoch in {item:?}")))?;
            let m = m.trim().parse().map_err(|_| ReidError::Config(format!("bad multiplier in {item:?}")))?;
            Ok((e, m))
        })
        .collect()
}

impl TrainConfig {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = Self::default();
        let schedule = match kv.entries.remove("lr_schedule") {
            Some(v) => parse_schedule(&v)?,
            None => d.lr_schedule.clone(),
        };
        let hidden: Option<Vec<usize>> = kv.take_list("attention_hidden")?;
        let attention_hidden = match hidden.as_deref() {
            None => d.attention_hidden,
            Some(&[a, b]) => (a, b),
            Some(other) => {
                return Err(ReidError::Config(format!("attention_hidden needs two widths, got {other:?}")))
            }
        };
        let normalizer = match kv.entries.remove("attention_normalizer").as_deref() {
            None | Some("sigmoid") => ScoreNormalizer::Sigmoid,
            Some("softmax") => ScoreNormalizer::Softmax,
            Some(other) => return Err(ReidError::Config(format!("unknown attention_normalizer {other:?}"))),
        };
        let cfg = Self {
            dataset_root: kv.take_path("dataset_root").unwrap_or(d.dataset_root),
            output_dir: kv.take_path("output_dir").unwrap_or(d.output_dir),
            epochs: kv.take_or("epochs", d.epochs)?,
            base_lr: kv.take_or("base_lr", d.base_lr)?,
            lr_schedule: schedule,
            margin: kv.take_or("margin", d.margin)?,
            clip_len: kv.take_or("clip_len", d.clip_len)?,
            seed: kv.take_or("seed", d.seed)?,
            checkpoint_every: kv.take_or("checkpoint_every", d.checkpoint_every)?,
            repetitions: kv.take_or("repetitions", d.repetitions)?,
            eval_mode: kv.take_or("eval_mode", d.eval_mode)?,
            shot_mode: kv.take_or("shot_mode", d.shot_mode)?,
            frame_height: kv.take_or("frame_height", d.frame_height)?,
            frame_width: kv.take_or("frame_width", d.frame_width)?,
            lk_window: kv.take_or("lk_window", d.lk_window)?,
            cnn_channels: kv.take_list("cnn_channels")?.unwrap_or(d.cnn_channels),
            attention_w1: kv.take_or("attention_w1", d.attention_w1)?,
            attention_w2: kv.take_or("attention_w2", d.attention_w2)?,
            attention_hidden,
            normalizer,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ReidError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("lr_schedule thresholds must be strictly ascending".into());
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if self.clip_len == 0 || self.repetitions == 0 || self.checkpoint_every == 0 {
            return bad("clip_len, repetitions and checkpoint_every must be positive".into());
        }
        if self.lk_window.is_multiple_of(2) {
            return bad("lk_window must be odd".into());
        }
        self.cnn_config().spatial_trace()?;
        self.attention_config().validate()
    }

    pub fn cnn_config(&self) -> CnnConfig {
        let mut channels = vec![CnnConfig::default().channels[0]];
        channels.extend(&self.cnn_channels);
        CnnConfig {
            channels,
            input_height: self.frame_height,
            input_width: self.frame_width,
            ..CnnConfig::default()
        }
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            w1: self.attention_w1,
            w2: self.attention_w2,
            hidden: self.attention_hidden,
            normalizer: self.normalizer,
            ..AttentionConfig::default()
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let schedule = self
            .lr_schedule
            .iter()
            .map(|(e, m)| format!("{e}:{m:?}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("dataset_root", self.dataset_root.display().to_string());
        line("output_dir", self.output_dir.display().to_string());
        line("epochs", self.epochs.to_string());
        line("base_lr", format!("{:?}", self.base_lr));
        line("lr_schedule", schedule);
        line("margin", format!("{:?}", self.margin));
        line("clip_len", self.clip_len.to_string());
        line("seed", self.seed.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        line("repetitions", self.repetitions.to_string());
        line("eval_mode", self.eval_mode.as_str().into());
        line(
            "shot_mode",
            match self.shot_mode {
                ShotMode::Multi => "multi",
                ShotMode::Single => "single",
            }
            .into(),
        );
        line("frame_height", self.frame_height.to_string());
        line("frame_width", self.frame_width.to_string());
        line("lk_window", self.lk_window.to_string());
        line("cnn_channels", list(&self.cnn_channels));
        line("attention_w1", self.attention_w1.to_string());
        line("attention_w2", self.attention_w2.to_string());
        line("attention_hidden", list(&[self.attention_hidden.0, self.attention_hidden.1]));
        line(
            "attention_normalizer",
            match self.normalizer {
                ScoreNormalizer::Sigmoid => "sigmoid",
                ScoreNormalizer::Softmax => "softmax",
            }
            .into(),
        );
        s
    }
}
