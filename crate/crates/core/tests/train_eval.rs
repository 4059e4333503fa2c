mod common;

use common::*;
use proptest::prelude::*;
use tempattn::autograd::sigmoid;
use tempattn::config::{EvalMode, ShotMode, TrainConfig};
use tempattn::data::load_dataset;
use tempattn::params::ParamSet;
use tempattn::train_eval::*;
use tempattn::ReidError;

fn setup(ids: usize, frames: usize) -> (tempfile::TempDir, TrainConfig) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_synth(&data, ids, frames, 0);
    let cfg = toy_config(&data, &dir.path().join("out"));
    (dir, cfg)
}

#[test]
fn one_epoch_smoke_run_writes_loadable_checkpoint() {
    let (_dir, cfg) = setup(8, 8);
    let run = train(&cfg).unwrap();
    assert_eq!(run.losses.len(), 1);
    assert_eq!(run.losses[0].epoch, 0);
    assert!(run.losses[0].total.is_finite());

    let csv = std::fs::read_to_string(cfg.output_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("epoch,hinge,id1,id2,total\n"));
    let ckpt = Checkpoint::load(&cfg.output_dir.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt.epoch, 1);
    let data = |m: &tempattn::ReidModel| -> Vec<Vec<f64>> { m.named_params().iter().map(|(_, t)| t.data().to_vec()).collect() };
    assert_eq!(data(&ckpt.model), data(&run.checkpoint.model));
    assert_eq!(ckpt.config, cfg);
    assert_eq!(ckpt.model.classifier.num_classes(), 4);

    // The same config again gives the same bytes.
    let first = std::fs::read(cfg.output_dir.join("loss.csv")).unwrap();
    train(&cfg).unwrap();
    assert_eq!(std::fs::read(cfg.output_dir.join("loss.csv")).unwrap(), first);
}

#[test]
fn checkpoint_bytes_survive_a_round_trip() {
    let (dir, cfg) = setup(4, 6);
    let run = train(&cfg).unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    run.checkpoint.save(&a).unwrap();
    Checkpoint::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut bytes = std::fs::read(&a).unwrap();
    bytes[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    assert!(Checkpoint::from_bytes(&std::fs::read(&a).unwrap()[..40]).is_err());
}

#[test]
fn gallery_has_unit_descriptors_per_camera() {
    let (_dir, cfg) = setup(6, 6);
    let (index, prepared) = load_prepared(&cfg, &cfg.dataset_root).unwrap();
    let (_, test) = repetition_split(&index, &prepared, cfg.seed, 0).unwrap();
    let model = initial_model(&cfg, 3).unwrap();
    let g = extract_gallery(&model, &test).unwrap();
    assert_eq!((g.probes.len(), g.gallery.len()), (3, 3));
    for d in g.probes.iter().chain(&g.gallery) {
        assert_eq!(d.len(), 128);
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    let again = extract_gallery(&model, &test).unwrap();
    assert_eq!(g.probes, again.probes);
    assert_eq!(g.gallery, again.gallery);
    let c = evaluate_model(&model, &test).unwrap();
    assert_eq!(c.accuracy.len(), 3);
    assert_eq!(c.rank(3), 1.0);
}

#[test]
fn single_repetition_report_is_its_own_mean_and_deterministic() {
    let (_dir, mut cfg) = setup(6, 6);
    cfg.repetitions = 1;
    let report = evaluate(&cfg, None).unwrap();
    assert_eq!(report.repetitions, 1);
    assert_eq!(report.mean, report.curves[0]);
    assert_eq!(report.runs.len(), 1);
    let again = evaluate(&cfg, None).unwrap();
    assert_eq!(report.curves, again.curves);
    assert_eq!(report.untrained, again.untrained);
    assert_eq!(report.runs[0].losses, again.runs[0].losses);
}

#[test]
fn mean_curve_averages_repetitions() {
    let (dir, cfg) = setup(6, 6);
    let report = evaluate(&cfg, None).unwrap();
    assert_eq!(report.curves.len(), 2);
    for k in 0..report.mean.accuracy.len() {
        let m = (report.curves[0].accuracy[k] + report.curves[1].accuracy[k]) / 2.0;
        assert!((report.mean.accuracy[k] - m).abs() < 1e-15);
    }
    report.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("cmc.csv")).unwrap();
    assert!(csv.starts_with("rank,rep0,rep1,mean\n"));
    assert!(dir.path().join("rep1").join("checkpoint.bin").exists());
}

#[test]
fn fixed_mode_needs_a_checkpoint_and_scores_it() {
    let (_dir, mut cfg) = setup(6, 6);
    let run = train(&cfg).unwrap();
    cfg.eval_mode = EvalMode::Fixed;
    assert!(matches!(evaluate(&cfg, None), Err(ReidError::Config(_))));
    let report = evaluate(&cfg, Some(&run.checkpoint)).unwrap();
    assert_eq!(report.curves.len(), 2);
    assert!(report.runs.is_empty());
}

#[test]
fn single_shot_is_unsupported() {
    let (_dir, mut cfg) = setup(4, 4);
    cfg.shot_mode = ShotMode::Single;
    assert!(matches!(evaluate(&cfg, None), Err(ReidError::Unsupported(_))));
    assert!(matches!(cross_dataset_eval(&cfg, &cfg), Err(ReidError::Unsupported(_))));
}

#[test]
fn attention_export_has_one_row_per_frame() {
    let (_dir, cfg) = setup(4, 9);
    let (_, prepared) = load_prepared(&cfg, &cfg.dataset_root).unwrap();
    let model = initial_model(&cfg, 2).unwrap();
    let frames = &prepared.persons[0].frames_a;
    let rows = export_attention(&model, frames, None).unwrap();
    assert_eq!(rows.len(), 9);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.frame_index, i);
        assert!((r.lambda - sigmoid(r.alpha)).abs() < 1e-12);
    }
    assert_eq!(export_attention(&model, frames, Some(4)).unwrap().len(), 4);
    let csv = attention_csv(&rows);
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("frame_index,alpha,lambda\n"));
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    tempattn::data::synth_generate(&tempattn::data::SynthConfig::default(), dir.path()).unwrap();
    let cfg = TrainConfig {
        dataset_root: dir.path().to_path_buf(),
        ..TrainConfig::default()
    };
    let index = load_dataset(dir.path()).unwrap();
    assert_eq!(index.len(), 10);
    let (index, prepared) = load_prepared(&cfg, dir.path()).unwrap();
    let (train, test) = repetition_split(&index, &prepared, 0, 0).unwrap();
    let model = initial_model(&cfg, train.len()).unwrap();
    let curve = evaluate_model(&model, &test).unwrap();
    assert!((0.0..=0.4).contains(&curve.rank(1)), "{:?}", curve.accuracy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cmc_is_monotone_and_ends_at_one(values in prop::collection::vec(0.0f64..4.0, 1..=49)) {
        let p = (values.len() as f64).sqrt() as usize;
        let d: Vec<Vec<f64>> = values[..p * p].chunks(p).map(<[f64]>::to_vec).collect();
        let c = cmc_from_distances(&d).unwrap();
        prop_assert!(c.accuracy.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.accuracy.last().unwrap(), 1.0);
        prop_assert!(c.accuracy.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}
