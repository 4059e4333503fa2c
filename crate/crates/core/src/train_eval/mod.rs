//! Training loop, checkpoints, CMC evaluation and attention export.

pub mod checkpoint;
pub mod eval;
pub mod train;

use crate::config::TrainConfig;
use crate::error::Result;

pub use checkpoint::{Checkpoint, RngState};
pub use eval::{
    attention_csv, cmc_csv, cmc_from_distances, cross_dataset_eval, cross_dataset_from_runs, evaluate,
    evaluate_model, evaluate_prepared, export_attention, extract_gallery, load_prepared, preprocessor,
    repetition_split, train_repetitions, AttentionRow, CmcCurve, EvalReport, Gallery,
};
pub use train::{initial_model, loss_csv, pair_step, train_on, EpochLoss, TrainRun};

/// Trains on the first half of `cfg.seed`'s split of `cfg.dataset_root`,
/// writing `loss.csv` and checkpoints under `cfg.output_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainRun> {
    let (index, prepared) = load_prepared(cfg, &cfg.dataset_root)?;
    let (train, _) = repetition_split(&index, &prepared, cfg.seed, 0)?;
    train_on(cfg, &train, Some(&cfg.output_dir))
}
