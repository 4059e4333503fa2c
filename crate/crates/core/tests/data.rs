mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempattn::data::synth::{synth_generate, SynthConfig};
use tempattn::data::*;
use tempattn::preprocessing::{FrameTensor, Preprocessor};
use tempattn::ReidError;

fn ids(index: &DatasetIndex) -> BTreeSet<String> {
    index.persons.iter().map(|p| p.id.clone()).collect()
}

#[test]
fn loader_skips_incomplete_persons() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 4, 3, 0);
    let victim = &load_dataset(dir.path()).unwrap().persons[2].id.clone();
    std::fs::remove_dir_all(dir.path().join("cam_b").join(victim)).unwrap();
    let index = load_dataset(dir.path()).unwrap();
    assert_eq!(index.len(), 3);
    assert_eq!(index.skipped, 1);
    assert!(!ids(&index).contains(victim));
}

#[test]
fn empty_root_has_no_usable_persons() {
    let dir = tempfile::tempdir().unwrap();
    match load_dataset(dir.path()) {
        Err(ReidError::Dataset(msg)) => assert!(msg.contains("zero usable persons"), "{msg}"),
        other => panic!("expected a dataset error, got {other:?}"),
    }
    assert!(load_dataset(&dir.path().join("missing")).is_err());
}

fn file_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generator_round_trips_and_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::default();
    synth_generate(&cfg, a.path()).unwrap();
    synth_generate(&cfg, b.path()).unwrap();

    let index = load_dataset(a.path()).unwrap();
    assert_eq!(index.len(), cfg.num_identities);
    assert_eq!(index.skipped, 0);
    for p in &index.persons {
        assert_eq!(p.track_a.len(), cfg.frames_per_track);
        assert_eq!(p.track_b.len(), cfg.frames_per_track);
    }
    let frame = load_png(&index.persons[0].track_a.frame_paths[0]).unwrap();
    assert_eq!((frame.width(), frame.height()), (cfg.width, cfg.height));
    assert_eq!(file_bytes(a.path()), file_bytes(b.path()));
}

#[test]
fn split_is_half_disjoint_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 10, 2, 0);
    let index = load_dataset(dir.path()).unwrap();
    let mut distinct = BTreeSet::new();
    for seed in 0..10 {
        let (train, test) = split_half(&index, seed).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
        let (a, b) = (ids(&train), ids(&test));
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).count(), 10);
        let again = split_half(&index, seed).unwrap().0;
        assert_eq!(ids(&again), a);
        distinct.insert(a.into_iter().collect::<Vec<_>>());
    }
    assert!(distinct.len() >= 2);
}

#[test]
fn windows_are_consecutive_and_uniform() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(sample_window(16, 16, &mut r), 0..16);
    assert_eq!(sample_window(10, 16, &mut r), 0..10);

    let mut counts = [0usize; 5];
    for _ in 0..1000 {
        let w = sample_window(20, 16, &mut r);
        assert_eq!(w.len(), 16);
        counts[w.start] += 1;
    }
    let expected = 200.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 13.2767, "chi2 = {chi2}, counts {counts:?}");

    let frames = random_frames(&mut rng(0), 20, 4, 4);
    let clip = sample_subsequence(&frames, 16, &mut r);
    let start = frames.iter().position(|f| f == &clip[0]).unwrap();
    assert_eq!(clip, &frames[start..start + 16]);
}

fn fake_dataset(p: usize) -> PreparedDataset {
    let mut r = rng(1);
    PreparedDataset {
        persons: (0..p)
            .map(|i| PreparedPerson {
                id: format!("p{i}"),
                frames_a: random_frames(&mut r, 8, 2, 2),
                frames_b: random_frames(&mut r, 9, 2, 2),
            })
            .collect(),
    }
}

#[test]
fn epochs_are_balanced_between_positive_and_negative_pairs() {
    let data = fake_dataset(7);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _epoch in 0..5 {
        let (mut pos, mut neg) = (0, 0);
        for step in 0..2 * data.len() {
            let s = sample_pair(&data, 4, &mut r, step).unwrap();
            assert_eq!(s.positive, s.x1 == s.x2);
            assert_eq!(s.positive, step % 2 == 0);
            assert_eq!((s.seq1.len(), s.seq2.len()), (4, 4));
            let in_track = |clip: &[FrameTensor], track: &[FrameTensor]| track.windows(4).any(|w| w == clip);
            assert!(in_track(s.seq1, &data.persons[s.x1].frames_a));
            assert!(in_track(s.seq2, &data.persons[s.x2].frames_b));
            if s.positive {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        assert_eq!((pos, neg), (7, 7));
    }
    assert!(sample_pair(&fake_dataset(1), 4, &mut r, 0).is_err());
}

fn mean_colour(track: &PersonTrack) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut count = 0.0;
    for f in track.load_frames().unwrap() {
        for px in f.pixels().chunks(3) {
            for c in 0..3 {
                sum[c] += f64::from(px[c]);
            }
            count += 1.0;
        }
    }
    sum.map(|s| s / count)
}

#[test]
fn mean_colour_baseline_is_informative_but_not_solved() {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(&SynthConfig::default(), dir.path()).unwrap();
    let index = load_dataset(dir.path()).unwrap();
    let probes: Vec<[f64; 3]> = index.persons.iter().map(|p| mean_colour(&p.track_a)).collect();
    let gallery: Vec<[f64; 3]> = index.persons.iter().map(|p| mean_colour(&p.track_b)).collect();
    let d = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
    let hits = probes
        .iter()
        .enumerate()
        .filter(|(i, p)| (0..gallery.len()).min_by(|&a, &b| d(p, &gallery[a]).total_cmp(&d(p, &gallery[b]))) == Some(*i))
        .count();
    let rank1 = hits as f64 / probes.len() as f64;
    assert!(rank1 > 0.1 && rank1 < 0.9, "rank-1 {rank1}");
}

#[test]
fn prepared_tracks_keep_their_length() {
    let dir = tempfile::tempdir().unwrap();
    small_synth(dir.path(), 3, 5, 2);
    let index = load_dataset(dir.path()).unwrap();
    let prepared = prepare(&index, &Preprocessor { width: 12, height: 16, ..Preprocessor::default() }).unwrap();
    assert_eq!(prepared.len(), 3);
    for p in &prepared.persons {
        assert_eq!((p.frames(Camera::A).len(), p.frames(Camera::B).len()), (5, 5));
    }
}
