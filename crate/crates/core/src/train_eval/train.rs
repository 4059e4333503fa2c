use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{sgd_step, SgdConfig, Tape, Tensor};

use super::checkpoint::{Checkpoint, RngState};
use crate::attention;
use crate::config::TrainConfig;
use crate::data::{sample_pair, PreparedDataset};
use crate::error::{io_err, ReidError, Result};
use crate::losses::{combined_loss, LossBreakdown};
use crate::model::ReidModel;
use crate::params::ParamSet;

/// Offset separating the pair-sampling stream from the initialization seed.
const SAMPLER_STREAM: u64 = 0x5a4d;

/// Mean loss components over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub hinge: f64,
    pub id1: f64,
    pub id2: f64,
    pub total: f64,
}

pub fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,hinge,id1,id2,total\n");
    for l in losses {
        let _ = writeln!(s, "{},{},{},{},{}", l.epoch, l.hinge, l.id1, l.id2, l.total);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLoss>,
}

pub fn sgd_config(cfg: &TrainConfig) -> Result<SgdConfig> {
    Ok(SgdConfig::new(cfg.base_lr, cfg.lr_schedule.clone())?)
}

/// The model training starts from for `cfg` on `num_classes` identities.
pub fn initial_model(cfg: &TrainConfig, num_classes: usize) -> Result<ReidModel> {
    ReidModel::init(cfg.seed, num_classes, &cfg.cnn_config(), &cfg.attention_config())
}

/// Forward both branches, record the combined loss and backpropagate. The
/// parameter gradients are added to `model`'s gradient slots.
pub fn pair_step(
    model: &mut ReidModel,
    seq1: &[crate::preprocessing::FrameTensor],
    seq2: &[crate::preprocessing::FrameTensor],
    labels: (usize, usize),
    margin: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let e1 = attention::video_descriptor(&mut tape, &vars.cnn, &vars.attention, seq1)?;
    let e2 = attention::video_descriptor(&mut tape, &vars.cnn, &vars.attention, seq2)?;
    let (total, breakdown) = combined_loss(&mut tape, e1.descriptor, e2.descriptor, labels, &vars.classifier, margin)?;
    if !breakdown.total.is_finite() {
        return Ok(breakdown);
    }
    tape.backward(total)?;
    model.absorb_grads(&tape, &vars)?;
    Ok(breakdown)
}

/// SGD with batch size one over `2·P` balanced pairs per epoch.
///
/// When `out_dir` is given, `loss.csv` is rewritten after every epoch and
/// checkpoints are written every `checkpoint_every` epochs and at the end.
pub fn train_on(cfg: &TrainConfig, train: &PreparedDataset, out_dir: Option<&Path>) -> Result<TrainRun> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(ReidError::Dataset(format!(
            "training needs at least 2 identities, got {}",
            train.len()
        )));
    }
    let sgd = sgd_config(cfg)?;
    let mut model = initial_model(cfg, train.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_STREAM);
    let steps = 2 * train.len();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let snapshot = |model: &ReidModel, epoch: usize, rng: &ChaCha8Rng| Checkpoint {
        epoch,
        rng: RngState::capture(rng),
        config: cfg.clone(),
        model: model.clone(),
    };

    for epoch in 0..cfg.epochs {
        let mut sum = [0.0; 4];
        for step in 0..steps {
            let pair = sample_pair(train, cfg.clip_len, &mut rng, step)?;
            let b = pair_step(&mut model, pair.seq1, pair.seq2, (pair.x1, pair.x2), cfg.margin)?;
            if !b.total.is_finite() {
                return Err(ReidError::NonFinite {
                    epoch,
                    step,
                    detail: format!(
                        "hinge={} id1={} id2={} (labels {} / {})",
                        b.hinge, b.id1, b.id2, pair.x1, pair.x2
                    ),
                });
            }
            let mut params: Vec<&mut Tensor> = model.named_params_mut().into_iter().map(|(_, t)| t).collect();
            sgd_step(&mut params, &sgd, epoch)?;
            for (acc, v) in sum.iter_mut().zip([b.hinge, b.id1, b.id2, b.total]) {
                *acc += v;
            }
        }
        let n = steps as f64;
        let l = EpochLoss {
            epoch,
            hinge: sum[0] / n,
            id1: sum[1] / n,
            id2: sum[2] / n,
            total: sum[3] / n,
        };
        log::info!(
            "epoch {epoch}: total {:.5} (hinge {:.5}, id {:.5} / {:.5}), lr {:e}",
            l.total,
            l.hinge,
            l.id1,
            l.id2,
            sgd.lr_at(epoch)
        );
        losses.push(l);

        if let Some(dir) = out_dir {
            write_text(&dir.join("loss.csv"), &loss_csv(&losses))?;
            let done = epoch + 1;
            if done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                snapshot(&model, done, &rng).save(&dir.join(format!("checkpoint_epoch{done:05}.bin")))?;
            }
        }
    }

    let checkpoint = snapshot(&model, cfg.epochs, &rng);
    if let Some(dir) = out_dir {
        checkpoint.save(&final_checkpoint_path(dir))?;
    }
    Ok(TrainRun { checkpoint, losses })
}

pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}
