use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::train::{initial_model, loss_csv, train_on, write_text, TrainRun};
use crate::config::{EvalMode, ShotMode, TrainConfig};
use crate::data::{load_dataset, prepare, split_half, DatasetIndex, PreparedDataset};
use crate::error::{ReidError, Result};
use crate::model::ReidModel;
use crate::preprocessing::{FrameTensor, Preprocessor};

/// `accuracy[k − 1]` is the fraction of probes whose true match ranks `≤ k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcCurve {
    pub accuracy: Vec<f64>,
}

impl CmcCurve {
    /// Accuracy at 1-based rank `k`, saturating at the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks start at 1");
        self.accuracy[(k - 1).min(self.accuracy.len() - 1)]
    }

    /// Entry-wise mean of equally long curves.
    pub fn mean(curves: &[CmcCurve]) -> Result<CmcCurve> {
        let first = curves
            .first()
            .ok_or_else(|| ReidError::Invalid("mean of zero curves".into()))?;
        if curves.iter().any(|c| c.accuracy.len() != first.accuracy.len()) {
            return Err(ReidError::Invalid("curves of different lengths".into()));
        }
        let n = curves.len() as f64;
        let accuracy = (0..first.accuracy.len())
            .map(|k| curves.iter().map(|c| c.accuracy[k]).sum::<f64>() / n)
            .collect();
        Ok(CmcCurve { accuracy })
    }
}

/// CMC from a probe × gallery distance matrix whose true matches lie on
/// the diagonal. Ties rank the lower gallery index first.
pub fn cmc_from_distances(d: &[Vec<f64>]) -> Result<CmcCurve> {
    let p = d.len();
    if p == 0 || d.iter().any(|row| row.len() != p) {
        return Err(ReidError::Invalid("distance matrix must be square and non-empty".into()));
    }
    if d.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ReidError::Invalid("distance matrix has non-finite entries".into()));
    }
    let mut hits = vec![0usize; p];
    for (i, row) in d.iter().enumerate() {
        let truth = row[i];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v < truth || (v == truth && j < i))
            .count();
        hits[ahead] += 1;
    }
    let mut acc = 0usize;
    let accuracy = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / p as f64
        })
        .collect();
    Ok(CmcCurve { accuracy })
}

/// Multi-shot descriptors: probes from camera A, gallery from camera B, each
/// computed from the whole track.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub probes: Vec<Vec<f64>>,
    pub gallery: Vec<Vec<f64>>,
}

impl Gallery {
    pub fn distances(&self) -> Vec<Vec<f64>> {
        self.probes
            .iter()
            .map(|p| {
                self.gallery
                    .iter()
                    .map(|g| p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect()
    }
}

pub fn extract_gallery(model: &ReidModel, data: &PreparedDataset) -> Result<Gallery> {
    let tracks: Vec<&[FrameTensor]> = data
        .persons
        .iter()
        .flat_map(|p| [&p.frames_a[..], &p.frames_b[..]])
        .collect();
    let descriptors = tracks
        .par_iter()
        .map(|t| model.describe(t))
        .collect::<Result<Vec<_>>>()?;
    let (mut probes, mut gallery) = (Vec::new(), Vec::new());
    for (i, d) in descriptors.into_iter().enumerate() {
        if i % 2 == 0 {
            probes.push(d);
        } else {
            gallery.push(d);
        }
    }
    Ok(Gallery { probes, gallery })
}

pub fn evaluate_model(model: &ReidModel, data: &PreparedDataset) -> Result<CmcCurve> {
    cmc_from_distances(&extract_gallery(model, data)?.distances())
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub repetitions: usize,
    pub curves: Vec<CmcCurve>,
    pub mean: CmcCurve,
    /// Curves of the freshly initialized models, for reference.
    pub untrained: Vec<CmcCurve>,
    pub untrained_mean: CmcCurve,
    /// Training runs of the repetitions (retrain mode only).
    pub runs: Vec<TrainRun>,
}

pub fn cmc_csv(curves: &[CmcCurve], mean: &CmcCurve) -> String {
    let mut s = String::from("rank");
    for r in 0..curves.len() {
        let _ = write!(s, ",rep{r}");
    }
    s.push_str(",mean\n");
    for k in 0..mean.accuracy.len() {
        let _ = write!(s, "{}", k + 1);
        for c in curves {
            let _ = write!(s, ",{}", c.accuracy[k]);
        }
        let _ = writeln!(s, ",{}", mean.accuracy[k]);
    }
    s
}

impl EvalReport {
    fn assemble(curves: Vec<CmcCurve>, untrained: Vec<CmcCurve>, runs: Vec<TrainRun>) -> Result<Self> {
        Ok(Self {
            repetitions: curves.len(),
            mean: CmcCurve::mean(&curves)?,
            untrained_mean: CmcCurve::mean(&untrained)?,
            curves,
            untrained,
            runs,
        })
    }

    /// `cmc.csv`, `cmc_untrained.csv`, and per repetition `rep<r>/loss.csv`
    /// plus its final checkpoint.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("cmc.csv"), &cmc_csv(&self.curves, &self.mean))?;
        write_text(
            &dir.join("cmc_untrained.csv"),
            &cmc_csv(&self.untrained, &self.untrained_mean),
        )?;
        for (r, run) in self.runs.iter().enumerate() {
            let rep = dir.join(format!("rep{r}"));
            write_text(&rep.join("loss.csv"), &loss_csv(&run.losses))?;
            run.checkpoint.save(&rep.join("checkpoint.bin"))?;
        }
        Ok(())
    }
}

pub fn preprocessor(cfg: &TrainConfig) -> Preprocessor {
    Preprocessor {
        width: cfg.frame_width,
        height: cfg.frame_height,
        lk_window: cfg.lk_window,
    }
}

/// Persons of `prepared` named in `subset`, in `subset` order.
fn select(prepared: &PreparedDataset, subset: &DatasetIndex) -> PreparedDataset {
    let persons = subset
        .persons
        .iter()
        .map(|p| {
            prepared
                .persons
                .iter()
                .find(|q| q.id == p.id)
                .expect("subset drawn from the same index")
                .clone()
        })
        .collect();
    PreparedDataset { persons }
}

/// The train and test halves of repetition `r`, split with seed `seed + r`.
pub fn repetition_split(
    index: &DatasetIndex,
    prepared: &PreparedDataset,
    seed: u64,
    r: usize,
) -> Result<(PreparedDataset, PreparedDataset)> {
    let (train, test) = split_half(index, seed.wrapping_add(r as u64))?;
    Ok((select(prepared, &train), select(prepared, &test)))
}

fn repetition_config(cfg: &TrainConfig, r: usize) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed.wrapping_add(r as u64),
        ..cfg.clone()
    }
}

fn require_multi_shot(cfg: &TrainConfig) -> Result<()> {
    match cfg.shot_mode {
        ShotMode::Multi => Ok(()),
        ShotMode::Single => Err(ReidError::Unsupported(
            "single-shot evaluation: temporal attention needs multi-frame tracks, only multi-shot is supported"
                .into(),
        )),
    }
}

/// Loads, indexes and preprocesses a dataset root.
pub fn load_prepared(cfg: &TrainConfig, root: &Path) -> Result<(DatasetIndex, PreparedDataset)> {
    let index = load_dataset(root)?;
    let prepared = prepare(&index, &preprocessor(cfg))?;
    Ok((index, prepared))
}

/// Trains one model per repetition on that repetition's training half.
pub fn train_repetitions(
    cfg: &TrainConfig,
    index: &DatasetIndex,
    prepared: &PreparedDataset,
) -> Result<Vec<(TrainRun, PreparedDataset)>> {
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let (train, test) = repetition_split(index, prepared, cfg.seed, r)?;
            let run = train_on(&repetition_config(cfg, r), &train, None)?;
            Ok((run, test))
        })
        .collect()
}

/// Repeated evaluation on the dataset at `cfg.dataset_root`.
///
/// Retrain mode trains a fresh model per repetition split. Fixed mode scores
/// `checkpoint` on each repetition's test half.
pub fn evaluate(cfg: &TrainConfig, checkpoint: Option<&Checkpoint>) -> Result<EvalReport> {
    require_multi_shot(cfg)?;
    let (index, prepared) = load_prepared(cfg, &cfg.dataset_root)?;
    evaluate_prepared(cfg, &index, &prepared, checkpoint)
}

pub fn evaluate_prepared(
    cfg: &TrainConfig,
    index: &DatasetIndex,
    prepared: &PreparedDataset,
    checkpoint: Option<&Checkpoint>,
) -> Result<EvalReport> {
    require_multi_shot(cfg)?;
    match cfg.eval_mode {
        EvalMode::Retrain => {
            let runs = train_repetitions(cfg, index, prepared)?;
            let scored = runs
                .par_iter()
                .enumerate()
                .map(|(r, (run, test))| {
                    let n_train = run.checkpoint.model.classifier.num_classes();
                    let fresh = initial_model(&repetition_config(cfg, r), n_train)?;
                    Ok((evaluate_model(&run.checkpoint.model, test)?, evaluate_model(&fresh, test)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (curves, untrained) = scored.into_iter().unzip();
            EvalReport::assemble(curves, untrained, runs.into_iter().map(|(run, _)| run).collect())
        }
        EvalMode::Fixed => {
            let ckpt = checkpoint.ok_or_else(|| {
                ReidError::Config("fixed evaluation mode needs a checkpoint".into())
            })?;
            let model = &ckpt.model;
            let fresh = initial_model(&ckpt.config, model.classifier.num_classes())?;
            let scored = (0..cfg.repetitions)
                .into_par_iter()
                .map(|r| {
                    let (_, test) = repetition_split(index, prepared, cfg.seed, r)?;
                    Ok((evaluate_model(model, &test)?, evaluate_model(&fresh, &test)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (curves, untrained) = scored.into_iter().unzip();
            EvalReport::assemble(curves, untrained, Vec::new())
        }
    }
}

/// Train on halves of dataset A (`cfg_a.dataset_root`) and test on halves
/// of dataset B (`cfg_b.dataset_root`), multi-shot only.
pub fn cross_dataset_eval(cfg_a: &TrainConfig, cfg_b: &TrainConfig) -> Result<EvalReport> {
    require_multi_shot(cfg_a)?;
    require_multi_shot(cfg_b)?;
    let (index_a, prepared_a) = load_prepared(cfg_a, &cfg_a.dataset_root)?;
    let (index_b, prepared_b) = load_prepared(cfg_a, &cfg_b.dataset_root)?;
    let runs: Vec<TrainRun> = train_repetitions(cfg_a, &index_a, &prepared_a)?
        .into_iter()
        .map(|(run, _)| run)
        .collect();
    cross_dataset_from_runs(cfg_a, runs, &index_b, &prepared_b, cfg_b.seed)
}

/// Scores already trained repetitions on the test halves of another dataset.
pub fn cross_dataset_from_runs(
    cfg_a: &TrainConfig,
    runs: Vec<TrainRun>,
    index_b: &DatasetIndex,
    prepared_b: &PreparedDataset,
    seed_b: u64,
) -> Result<EvalReport> {
    require_multi_shot(cfg_a)?;
    let scored = runs
        .par_iter()
        .enumerate()
        .map(|(r, run)| {
            let (_, test) = repetition_split(index_b, prepared_b, seed_b, r)?;
            let n_train = run.checkpoint.model.classifier.num_classes();
            let fresh = initial_model(&repetition_config(cfg_a, r), n_train)?;
            Ok((evaluate_model(&run.checkpoint.model, &test)?, evaluate_model(&fresh, &test)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (curves, untrained) = scored.into_iter().unzip();
    EvalReport::assemble(curves, untrained, runs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionRow {
    pub frame_index: usize,
    pub alpha: f64,
    pub lambda: f64,
}

/// Attention scores of the first `min(n, len)` frames of a track.
pub fn export_attention(model: &ReidModel, frames: &[FrameTensor], n: Option<usize>) -> Result<Vec<AttentionRow>> {
    let take = n.unwrap_or(frames.len()).min(frames.len());
    if take == 0 {
        return Err(ReidError::Invalid("attention export needs at least one frame".into()));
    }
    let (alpha, lambda) = model.attention_of(&frames[..take])?;
    Ok(alpha
        .into_iter()
        .zip(lambda)
        .enumerate()
        .map(|(frame_index, (alpha, lambda))| AttentionRow {
            frame_index,
            alpha,
            lambda,
        })
        .collect())
}

pub fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut s = String::from("frame_index,alpha,lambda\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.frame_index, r.alpha, r.lambda);
    }
    s
}
