//! Two-camera dataset index, train/test protocol and Siamese pair sampling.
//!
//! Layout on disk: `<root>/cam_a/<person>/<frame>.png` and the same under
//! `cam_b`. Frames within a track are ordered by numeric file stem when all
//! stems are numbers, by file name otherwise.

pub mod synth;

use std::ffi::OsStr;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{io_err, ReidError, Result};
use crate::preprocessing::{FrameTensor, Preprocessor, RawFrame};

pub use synth::{synth_generate, SynthConfig};

pub const CAMERA_DIRS: [&str; 2] = ["cam_a", "cam_b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Camera {
    A,
    B,
}

impl Camera {
    pub fn dir_name(self) -> &'static str {
        match self {
            Camera::A => CAMERA_DIRS[0],
            Camera::B => CAMERA_DIRS[1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersonTrack {
    pub person_id: String,
    pub camera: Camera,
    pub frame_paths: Vec<PathBuf>,
}

impl PersonTrack {
    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    /// Decodes every frame as 8-bit RGB.
    pub fn load_frames(&self) -> Result<Vec<RawFrame>> {
        self.frame_paths.iter().map(|p| load_png(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Person {
    pub id: String,
    pub track_a: PersonTrack,
    pub track_b: PersonTrack,
}

/// Persons with one track per camera, sorted by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub persons: Vec<Person>,
    /// Persons dropped while loading because a camera was missing or had
    /// fewer than two frames.
    pub skipped: usize,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.persons.iter().map(|p| p.id.as_str()).collect()
    }
}

pub fn load_png(path: &Path) -> Result<RawFrame> {
    let img = image::open(path)
        .map_err(|source| ReidError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RawFrame::new(w as usize, h as usize, img.into_raw())
}

fn list_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err(path))? {
        out.push(entry.map_err(io_err(path))?.path());
    }
    out.sort();
    Ok(out)
}

fn sort_frames(paths: &mut [PathBuf]) {
    let stem_num = |p: &PathBuf| p.file_stem().and_then(OsStr::to_str).and_then(|s| s.parse::<u64>().ok());
    if paths.iter().all(|p| stem_num(p).is_some()) {
        paths.sort_by_key(|p| stem_num(p));
    } else {
        paths.sort();
    }
}

/// PNG frames of one track directory in playback order: numeric stems sort
/// numerically, anything else by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = list_dir(dir)?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(OsStr::to_str)
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    sort_frames(&mut frames);
    Ok(frames)
}

fn read_camera(root: &Path, camera: Camera) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let dir = root.join(camera.dir_name());
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut persons = Vec::new();
    for person_dir in list_dir(&dir)? {
        if !person_dir.is_dir() {
            continue;
        }
        let Some(id) = person_dir.file_name().and_then(OsStr::to_str) else {
            continue;
        };
        persons.push((id.to_string(), list_frames(&person_dir)?));
    }
    Ok(persons)
}

/// Indexes a two-camera dataset directory.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(ReidError::Dataset(format!("{} is not a readable directory", root.display())));
    }
    let cam_a = read_camera(root, Camera::A)?;
    let mut cam_b: std::collections::BTreeMap<String, Vec<PathBuf>> = read_camera(root, Camera::B)?.into_iter().collect();

    let mut persons = Vec::new();
    let mut skipped = 0;
    for (id, frames_a) in cam_a {
        match cam_b.remove(&id) {
            Some(frames_b) if frames_a.len() >= 2 && frames_b.len() >= 2 => persons.push(Person {
                track_a: PersonTrack {
                    person_id: id.clone(),
                    camera: Camera::A,
                    frame_paths: frames_a,
                },
                track_b: PersonTrack {
                    person_id: id.clone(),
                    camera: Camera::B,
                    frame_paths: frames_b,
                },
                id,
            }),
            _ => skipped += 1,
        }
    }
    skipped += cam_b.len();
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} incomplete persons", root.display());
    }
    if persons.is_empty() {
        return Err(ReidError::Dataset(format!(
            "zero usable persons under {}",
            root.display()
        )));
    }
    Ok(DatasetIndex { persons, skipped })
}

/// Seeded identity-disjoint split; the first `⌈P/2⌉` shuffled persons train.
pub fn split_half(index: &DatasetIndex, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if index.len() < 2 {
        return Err(ReidError::Dataset(format!(
            "splitting needs at least 2 persons, got {}",
            index.len()
        )));
    }
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = index.len().div_ceil(2);
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        DatasetIndex {
            persons: ids.iter().map(|&i| index.persons[i].clone()).collect(),
            skipped: 0,
        }
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Preprocessed frames of both tracks of one person.
#[derive(Clone, Debug)]
pub struct PreparedPerson {
    pub id: String,
    pub frames_a: Vec<FrameTensor>,
    pub frames_b: Vec<FrameTensor>,
}

impl PreparedPerson {
    pub fn frames(&self, camera: Camera) -> &[FrameTensor] {
        match camera {
            Camera::A => &self.frames_a,
            Camera::B => &self.frames_b,
        }
    }
}

/// Whole tracks decoded and preprocessed once; labels are positions in
/// `persons`.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub persons: Vec<PreparedPerson>,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }
}

/// Decodes and preprocesses every track, in parallel over tracks.
pub fn prepare(index: &DatasetIndex, pre: &Preprocessor) -> Result<PreparedDataset> {
    let tracks: Vec<&PersonTrack> = index
        .persons
        .iter()
        .flat_map(|p| [&p.track_a, &p.track_b])
        .collect();
    let mut built = tracks
        .par_iter()
        .map(|t| pre.build_video_tensor(&t.load_frames()?))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let persons = index
        .persons
        .iter()
        .map(|p| PreparedPerson {
            id: p.id.clone(),
            frames_a: built.next().expect("two tracks per person"),
            frames_b: built.next().expect("two tracks per person"),
        })
        .collect();
    Ok(PreparedDataset { persons })
}

/// Uniform start of a consecutive window of `min(n, len)` frames.
pub fn sample_window(len: usize, n: usize, rng: &mut impl Rng) -> std::ops::Range<usize> {
    let take = n.min(len);
    let start = rng.random_range(0..=len - take);
    start..start + take
}

/// A consecutive clip of up to `n` frames, or the whole track if shorter.
pub fn sample_subsequence<'a>(frames: &'a [FrameTensor], n: usize, rng: &mut impl Rng) -> &'a [FrameTensor] {
    &frames[sample_window(frames.len(), n, rng)]
}

#[derive(Clone, Copy, Debug)]
pub struct PairSample<'a> {
    pub seq1: &'a [FrameTensor],
    pub seq2: &'a [FrameTensor],
    pub x1: usize,
    pub x2: usize,
    pub positive: bool,
}

/// Identities and camera-B partner chosen for one pair; clip offsets are
/// drawn afterwards from the same stream.
pub fn pair_identities(num_persons: usize, position: usize, rng: &mut impl Rng) -> (usize, usize) {
    let p = rng.random_range(0..num_persons);
    if position.is_multiple_of(2) {
        (p, p)
    } else {
        let q = rng.random_range(0..num_persons - 1);
        (p, if q >= p { q + 1 } else { q })
    }
}

/// Even epoch positions give a positive pair (cam A and cam B of one
/// person), odd positions a negative pair (cam A of `p`, cam B of `q ≠ p`).
pub fn sample_pair<'a>(
    train: &'a PreparedDataset,
    n: usize,
    rng: &mut impl Rng,
    position: usize,
) -> Result<PairSample<'a>> {
    if train.len() < 2 {
        return Err(ReidError::Dataset(format!(
            "pair sampling needs at least 2 persons, got {}",
            train.len()
        )));
    }
    let (x1, x2) = pair_identities(train.len(), position, rng);
    let seq1 = sample_subsequence(&train.persons[x1].frames_a, n, rng);
    let seq2 = sample_subsequence(&train.persons[x2].frames_b, n, rng);
    Ok(PairSample {
        seq1,
        seq2,
        x1,
        x2,
        positive: x1 == x2,
    })
}
