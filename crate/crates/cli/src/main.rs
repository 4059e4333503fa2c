use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tempattn::config::{EvalMode, TrainConfig};
use tempattn::data::{list_frames, load_png, synth_generate, SynthConfig};
use tempattn::gradcheck;
use tempattn::train_eval::{self, attention_csv, export_attention, Checkpoint, EvalReport};

#[derive(Parser)]
#[command(name = "tempattn", version, about = "Video person re-identification with temporal attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic two-camera dataset.
    Synth { config: PathBuf, out: PathBuf },
    /// Train one model on the training half of the configured dataset.
    Train { config: PathBuf },
    /// Evaluate with CMC curves. With a checkpoint, that model is scored on
    /// every repetition's test half; otherwise the configured mode applies.
    Eval { config: PathBuf, checkpoint: Option<PathBuf> },
    /// Train on dataset A, test on dataset B.
    CrossEval { config_a: PathBuf, config_b: PathBuf },
    /// Write per-frame attention scores of one track directory.
    Attn {
        checkpoint: PathBuf,
        track: PathBuf,
        out: PathBuf,
        /// Only use the first N frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Run a single named check.
        #[arg(long)]
        op: Option<String>,
        /// Seeded points per primitive.
        #[arg(long, default_value_t = gradcheck::OP_POINTS)]
        points: u64,
    },
}

fn summarize(report: &EvalReport) {
    let m = &report.mean;
    let u = &report.untrained_mean;
    println!("repetitions: {}", report.repetitions);
    for k in [1, 5, 10, 20].into_iter().filter(|&k| k <= m.accuracy.len()) {
        println!("rank-{k:<2} {:.4}  (untrained {:.4})", m.rank(k), u.rank(k));
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = SynthConfig::from_file(&config)?;
            synth_generate(&cfg, &out)?;
            println!("wrote {} identities to {}", cfg.num_identities, out.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let run = train_eval::train(&cfg)?;
            if let (Some(first), Some(last)) = (run.losses.first(), run.losses.last()) {
                println!("loss {:.5} -> {:.5} over {} epochs", first.total, last.total, run.losses.len());
            }
            println!("checkpoint: {}", cfg.output_dir.join("checkpoint.bin").display());
        }
        Command::Eval { config, checkpoint } => {
            let mut cfg = TrainConfig::from_file(&config)?;
            let ckpt = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            if ckpt.is_some() {
                cfg.eval_mode = EvalMode::Fixed;
            }
            let report = train_eval::evaluate(&cfg, ckpt.as_ref())?;
            report.write(&cfg.output_dir)?;
            summarize(&report);
            println!("results: {}", cfg.output_dir.join("cmc.csv").display());
        }
        Command::CrossEval { config_a, config_b } => {
            let a = TrainConfig::from_file(&config_a)?;
            let b = TrainConfig::from_file(&config_b)?;
            let report = train_eval::cross_dataset_eval(&a, &b)?;
            report.write(&a.output_dir)?;
            summarize(&report);
            println!("results: {}", a.output_dir.join("cmc.csv").display());
        }
        Command::Attn { checkpoint, track, out, frames } => attn(&checkpoint, &track, &out, frames)?,
        Command::Gradcheck { op, points } => {
            let reports = match op {
                Some(name) => vec![gradcheck::run_case(&name, points)?],
                None => gradcheck::run_all(points)?,
            };
            let mut failed = 0;
            for r in &reports {
                let verdict = if r.passed() { "ok" } else { "FAILED" };
                println!(
                    "{:<30} {:>7} entries  max rel err {:.3e}  {:>7.2}s  {verdict}",
                    r.name,
                    r.checked,
                    r.max_relative_error,
                    r.elapsed.as_secs_f64()
                );
                for e in &r.failures {
                    println!(
                        "    point {} {}[{}]: analytic {:.6e} numeric {:.6e} (h={:e}: {:.6e})",
                        e.point,
                        e.tensor,
                        e.index,
                        e.analytic,
                        e.numeric,
                        gradcheck::COARSE_STEP,
                        e.coarse_numeric
                    );
                }
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient check(s) above tolerance {:e}", gradcheck::TOLERANCE);
            }
        }
    }
    Ok(())
}

fn attn(checkpoint: &Path, track: &Path, out: &Path, n: Option<usize>) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let paths = list_frames(track)?;
    let paths = &paths[..n.unwrap_or(paths.len()).min(paths.len())];
    let raw = paths.iter().map(|p| load_png(p)).collect::<Result<Vec<_>, _>>()?;
    let frames = train_eval::preprocessor(&ckpt.config).build_video_tensor(&raw)?;
    let rows = export_attention(&ckpt.model, &frames, None)?;
    std::fs::write(out, attention_csv(&rows)).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
