//! Procedural two-camera dataset.
//!
//! Each identity is a small articulated figure (head, striped torso, legs and
//! a side bag) whose colours, torso width and stripe layout come from a
//! per-identity random stream. The figure sways sinusoidally across a
//! textured background. Camera B shows the same figure mirrored, with a
//! global colour cast, its own background and independent noise. Occluded
//! frames get a gray bar across the body; their indices are listed in
//! `occlusion.csv` at the dataset root.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::Camera;
use crate::error::{io_err, ReidError, Result};

pub const OCCLUSION_FILE: &str = "occlusion.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub frames_per_track: usize,
    pub width: usize,
    pub height: usize,
    /// Gaussian pixel noise, in 8-bit units.
    pub noise_sigma: f64,
    pub occlusion_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 10,
            frames_per_track: 24,
            width: 40,
            height: 56,
            noise_sigma: 8.0,
            occlusion_prob: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(ReidError::Config("num_identities must be at least 2".into()));
        }
        if self.frames_per_track < 2 {
            return Err(ReidError::Config("frames_per_track must be at least 2".into()));
        }
        if self.width < 16 || self.height < 24 {
            return Err(ReidError::Config(format!(
                "image size {}x{} below the 16x24 minimum",
                self.width, self.height
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(ReidError::Config(
                "noise_sigma must be non-negative and occlusion_prob within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            num_identities: kv.take_or("num_identities", d.num_identities)?,
            frames_per_track: kv.take_or("frames_per_track", d.frames_per_track)?,
            width: kv.take_or("width", d.width)?,
            height: kv.take_or("height", d.height)?,
            noise_sigma: kv.take_or("noise_sigma", d.noise_sigma)?,
            occlusion_prob: kv.take_or("occlusion_prob", d.occlusion_prob)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }
}

type Rgb = [f64; 3];

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [255.0 * (r + m), 255.0 * (g + m), 255.0 * (b + m)]
}

/// Appearance shared by both cameras.
#[derive(Clone, Debug)]
struct Identity {
    top: Rgb,
    /// Colour of the torso's right half.
    accent: Rgb,
    bottom: Rgb,
    bag: Rgb,
    /// Torso half-width as a fraction of the image width.
    torso: f64,
    stripe_period: usize,
    stripe_phase: usize,
}

fn identity_traits(cfg: &SynthConfig, id: usize) -> Identity {
    let mut rng = stream(cfg.seed, 0, id);
    // Spread hues over the circle so every identity gets a distinct pair.
    let golden = 0.618_033_988_75;
    let h1 = (id as f64 * golden + rng.random_range(0.0..0.08)).fract();
    let h2 = (h1 + rng.random_range(0.25..0.75)).fract();
    Identity {
        top: hsv(h1, rng.random_range(0.55..0.95), rng.random_range(0.55..0.95)),
        bottom: hsv(h2, rng.random_range(0.4..0.9), rng.random_range(0.3..0.8)),
        accent: hsv(h1 + rng.random_range(0.3..0.7), rng.random_range(0.5..0.95), rng.random_range(0.5..0.95)),
        bag: hsv(rng.random(), rng.random_range(0.3..0.9), rng.random_range(0.3..0.9)),
        torso: rng.random_range(0.18..0.28),
        stripe_period: rng.random_range(3..7),
        stripe_phase: rng.random_range(0..6),
    }
}

/// Per-track scene: background texture and motion phase.
#[derive(Clone, Debug)]
struct Scene {
    bg: [Rgb; 2],
    freq: (f64, f64),
    bg_phase: f64,
    sway_amp: f64,
    sway_period: f64,
    sway_phase: f64,
    /// Figure scale and vertical offset (fraction of the height).
    scale: f64,
    lift: f64,
    /// Static coloured blobs: centre, radii and colour.
    clutter: Vec<((f64, f64), (f64, f64), Rgb)>,
}

fn scene(cfg: &SynthConfig, id: usize, camera: Camera) -> Scene {
    let mut rng = stream(cfg.seed, 1 + camera as u64, id);
    // Gratings alternate between complementary tints around a fixed gray,
    // so every background averages to the same neutral colour.
    let level = 0.52 * 255.0;
    let contrast = rng.random_range(0.1..0.25) * 255.0;
    let tint = hsv(rng.random(), 1.0, 1.0);
    let tint_mean = tint.iter().sum::<f64>() / 3.0;
    let chroma = rng.random_range(0.5..1.0) * BG_CHROMA;
    let offset: Rgb = std::array::from_fn(|k| chroma * (tint[k] - tint_mean) / 255.0 + contrast);
    let c0: Rgb = std::array::from_fn(|k| level + offset[k]);
    let c1: Rgb = std::array::from_fn(|k| level - offset[k]);
    let (wf, hf) = (cfg.width as f64, cfg.height as f64);
    let clutter = (0..rng.random_range(CLUTTER_BLOBS.0..=CLUTTER_BLOBS.1))
        .map(|_| {
            let centre = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
            let radii = (rng.random_range(0.08..0.22) * wf, rng.random_range(0.06..0.16) * hf);
            let colour = [level + rng.random_range(-contrast..contrast); 3];
            (centre, radii, colour)
        })
        .collect();
    Scene {
        bg: [c0, c1],
        freq: (rng.random_range(0.15..0.6), rng.random_range(0.05..0.4)),
        bg_phase: rng.random_range(0.0..2.0 * PI),
        sway_amp: rng.random_range(0.08..0.2) * cfg.width as f64,
        sway_period: rng.random_range(10.0..20.0),
        sway_phase: rng.random_range(0.0..2.0 * PI),
        scale: rng.random_range(FIGURE_SCALE.0..FIGURE_SCALE.1),
        lift: rng.random_range(0.0..0.12),
        clutter,
    }
}

/// Range of figure scales; each track draws its own (camera distance).
const FIGURE_SCALE: (f64, f64) = (0.7, 1.0);

/// Largest per-channel tint swing of the background grating, 8-bit units.
const BG_CHROMA: f64 = 70.0;

/// Range of background blob counts per track.
const CLUTTER_BLOBS: (usize, usize) = (2, 4);

fn stream(seed: u64, kind: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | id as u64);
    rng
}

/// Global colour cast of camera B: per-channel gain and offset.
const CAST_GAIN: Rgb = [1.03, 0.985, 0.95];
const CAST_OFFSET: Rgb = [3.0, -1.0, -4.0];

fn render_track(cfg: &SynthConfig, id: usize, camera: Camera) -> (Vec<RgbImage>, Vec<usize>) {
    let person = identity_traits(cfg, id);
    let sc = scene(cfg, id, camera);
    let mut rng = stream(cfg.seed, 3 + camera as u64, id);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);

    let top = (1.0 - sc.scale - sc.lift) * hf;
    let at = |frac: f64| top + frac * sc.scale * hf;
    let head_cy = at(0.14);
    let head_r = 0.07 * sc.scale * hf;
    let torso_top = at(0.23);
    let torso_bottom = at(0.55);
    let legs_bottom = at(0.95);
    let half_torso = person.torso * sc.scale * wf;

    let mut frames = Vec::with_capacity(cfg.frames_per_track);
    let mut occluded = Vec::new();
    for t in 0..cfg.frames_per_track {
        let cx = 0.5 * wf + sc.sway_amp * (2.0 * PI * t as f64 / sc.sway_period + sc.sway_phase).sin();
        let stride = 0.25 * half_torso * (2.0 * PI * t as f64 / 6.0).sin();
        let is_occluded = rng.random::<f64>() < cfg.occlusion_prob;
        let bar = if is_occluded {
            occluded.push(t);
            let top = rng.random_range(0.2..0.5) * hf;
            Some((top, top + 0.3 * hf))
        } else {
            None
        };

        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            let yf = y as f64 + 0.5;
            for x in 0..w {
                // Camera B sees the figure mirrored; backgrounds are
                // independent so mirroring them is irrelevant.
                let xs = match camera {
                    Camera::A => x as f64 + 0.5,
                    Camera::B => wf - (x as f64 + 0.5),
                };
                let dx = xs - cx;
                let mix = 0.5 + 0.5 * (sc.freq.0 * x as f64 + sc.freq.1 * yf + sc.bg_phase).sin();
                let mut c: Rgb = std::array::from_fn(|k| sc.bg[0][k] * (1.0 - mix) + sc.bg[1][k] * mix);
                for &((bx, by), (rx, ry), colour) in &sc.clutter {
                    let (u, v) = ((x as f64 + 0.5 - bx) / rx, (yf - by) / ry);
                    if u * u + v * v < 1.0 {
                        c = colour;
                    }
                }

                if (dx * dx + (yf - head_cy) * (yf - head_cy)).sqrt() < head_r {
                    c = [224.0, 182.0, 150.0];
                } else if yf >= torso_top && yf < torso_bottom && dx.abs() < half_torso {
                    let row = y + person.stripe_phase;
                    let base = if dx < 0.0 { person.top } else { person.accent };
                    c = if row.is_multiple_of(person.stripe_period) {
                        base.map(|v| 0.55 * v)
                    } else {
                        base
                    };
                } else if yf >= torso_top + 0.06 * sc.scale * hf
                    && yf < torso_bottom - 0.04 * sc.scale * hf
                    && dx > half_torso
                    && dx < half_torso + 0.14 * sc.scale * wf
                {
                    c = person.bag;
                } else if yf >= torso_bottom && yf < legs_bottom {
                    let gap = 0.2 * half_torso;
                    let left = dx < -gap + stride && dx > -half_torso + stride;
                    let right = dx > gap - stride && dx < half_torso - stride;
                    if left {
                        c = person.bottom;
                    } else if right {
                        c = person.bottom.map(|v| 0.5 * v);
                    }
                }
                if let Some((b0, b1)) = bar {
                    if yf >= b0 && yf < b1 {
                        c = [128.0, 128.0, 128.0];
                    }
                }
                if camera == Camera::B {
                    c = std::array::from_fn(|k| c[k] * CAST_GAIN[k] + CAST_OFFSET[k]);
                }
                let px = c.map(|v| {
                    let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).round().clamp(0.0, 255.0) as u8
                });
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        frames.push(img);
    }
    (frames, occluded)
}

pub fn person_name(id: usize) -> String {
    format!("person_{id:03}")
}

/// Writes `cam_a/<person>/<frame>.png`, `cam_b/...` and `occlusion.csv`.
/// Output bytes depend only on `cfg`.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let jobs: Vec<(usize, Camera)> = (0..cfg.num_identities)
        .flat_map(|id| [(id, Camera::A), (id, Camera::B)])
        .collect();
    let occlusions = jobs
        .par_iter()
        .map(|&(id, camera)| -> Result<Vec<usize>> {
            let dir = out.join(camera.dir_name()).join(person_name(id));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let (frames, occluded) = render_track(cfg, id, camera);
            for (t, img) in frames.iter().enumerate() {
                let path = dir.join(format!("{t:04}.png"));
                img.save(&path).map_err(|source| ReidError::Image { path, source })?;
            }
            Ok(occluded)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("camera,person,frame\n");
    for (&(id, camera), frames) in jobs.iter().zip(&occlusions) {
        for t in frames {
            let _ = writeln!(csv, "{},{},{t}", camera.dir_name(), person_name(id));
        }
    }
    let path = out.join(OCCLUSION_FILE);
    std::fs::write(&path, csv).map_err(io_err(&path))
}

/// Occluded frame indices per `(camera, person)` from the sidecar file.
pub fn read_occlusions(root: &Path) -> Result<std::collections::BTreeMap<(Camera, String), Vec<usize>>> {
    let path = root.join(OCCLUSION_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out: std::collections::BTreeMap<(Camera, String), Vec<usize>> = Default::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || ReidError::Dataset(format!("{}:{}: malformed row", path.display(), i + 1));
        let mut parts = line.split(',');
        let camera = match parts.next() {
            Some("cam_a") => Camera::A,
            Some("cam_b") => Camera::B,
            _ => return Err(bad()),
        };
        let person = parts.next().ok_or_else(bad)?.to_string();
        let frame = parts.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        out.entry((camera, person)).or_default().push(frame);
    }
    Ok(out)
}
