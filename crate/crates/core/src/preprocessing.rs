//! Raw RGB frames to the five-channel network input: bilinear resize, YUV
//! conversion, per-video channel standardization and Lucas–Kanade flow.

use tempattn_autograd::Tensor;

use crate::error::{ReidError, Result};

pub const FRAME_HEIGHT: usize = 56;
pub const FRAME_WIDTH: usize = 40;
pub const FRAME_CHANNELS: usize = 5;

/// Flow magnitudes are clamped to this many pixels, then divided by it.
pub const FLOW_CLAMP: f64 = 8.0;
/// Smallest structure-tensor eigenvalue for which the LK system is solved.
pub const LK_MIN_EIGENVALUE: f64 = 1e-6;
const STD_FLOOR: f64 = 1e-8;

/// An 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(ReidError::Invalid(format!(
                "{width}x{height} frame with {} bytes",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Three float planes (Y, U, V), each `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct YuvImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl YuvImage {
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Horizontal (`gx`) and vertical (`gy`) displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

/// One preprocessed frame: `[5, H, W]` holding Y, U, V, Γx, Γy.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor {
    data: Tensor,
}

impl FrameTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        match data.shape() {
            [FRAME_CHANNELS, h, w] if *h > 0 && *w > 0 => Ok(Self { data }),
            s => Err(ReidError::Invalid(format!("frame tensor must be [5, H, W], got {s:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height() * self.width();
        &self.data.data()[c * n..(c + 1) * n]
    }
}

/// Bilinear resize with half-pixel-center alignment and edge clamping.
pub fn resize_bilinear(frame: &RawFrame, width: usize, height: usize) -> Result<RawFrame> {
    if frame.width < 2 || frame.height < 2 {
        return Err(ReidError::Invalid(format!(
            "cannot resize degenerate {}x{} frame",
            frame.width, frame.height
        )));
    }
    if width == 0 || height == 0 {
        return Err(ReidError::Invalid("zero target size".into()));
    }
    if width == frame.width && height == frame.height {
        return Ok(frame.clone());
    }
    let sx = frame.width as f64 / width as f64;
    let sy = frame.height as f64 / height as f64;
    let taps = |dst: usize, scale: f64, src_len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, frame.height);
        for x in 0..width {
            let (x0, x1, fx) = taps(x, sx, frame.width);
            let (p00, p01) = (frame.pixel(x0, y0), frame.pixel(x1, y0));
            let (p10, p11) = (frame.pixel(x0, y1), frame.pixel(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawFrame::new(width, height, pixels)
}

/// BT.601 conversion on `[0, 1]`-scaled RGB:
/// `Y = 0.299R + 0.587G + 0.114B`, `U = 0.492(B − Y)`, `V = 0.877(R − Y)`.
pub fn rgb_to_yuv(frame: &RawFrame) -> YuvImage {
    let n = frame.width * frame.height;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in frame.pixels.chunks_exact(3).enumerate() {
        let r = px[0] as f64 / 255.0;
        let g = px[1] as f64 / 255.0;
        let b = px[2] as f64 / 255.0;
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        data[i] = y;
        data[n + i] = 0.492 * (b - y);
        data[2 * n + i] = 0.877 * (r - y);
    }
    YuvImage {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// Standardizes each of Y, U, V with the mean and standard deviation over
/// every pixel of every frame in the video. Channels whose deviation is
/// below 1e−8 are only mean-centered.
pub fn normalize_video_channels(frames: &mut [YuvImage]) {
    let Some(first) = frames.first() else { return };
    let n = first.width * first.height;
    let count = (n * frames.len()) as f64;
    for c in 0..3 {
        let mean = frames
            .iter()
            .map(|f| f.data[c * n..(c + 1) * n].iter().sum::<f64>())
            .sum::<f64>()
            / count;
        let var = frames
            .iter()
            .map(|f| {
                f.data[c * n..(c + 1) * n]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        let inv = if std < STD_FLOOR { 1.0 } else { 1.0 / std };
        for f in frames.iter_mut() {
            f.data[c * n..(c + 1) * n]
                .iter_mut()
                .for_each(|v| *v = (*v - mean) * inv);
        }
    }
}

/// Dense single-level Lucas–Kanade flow from `prev` to `next`.
///
/// Spatial gradients are central differences of the mean of both images
/// (one-sided at the border); the temporal gradient is `next − prev`. The
/// normal equations are summed over a `window × window` neighbourhood,
/// truncated at the image border. Pixels whose structure tensor has a
/// smallest eigenvalue below [`LK_MIN_EIGENVALUE`] get zero flow.
pub fn lucas_kanade(
    prev: &[f64],
    next: &[f64],
    width: usize,
    height: usize,
    window: usize,
) -> Result<FlowField> {
    let n = width * height;
    if prev.len() != n || next.len() != n {
        return Err(ReidError::Invalid(format!(
            "flow inputs of length {} and {} for {width}x{height}",
            prev.len(),
            next.len()
        )));
    }
    if window.is_multiple_of(2) {
        return Err(ReidError::Invalid(format!("LK window must be odd, got {window}")));
    }
    let avg: Vec<f64> = prev.iter().zip(next).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
            if xr > xl {
                ix[y * width + x] = (avg[y * width + xr] - avg[y * width + xl]) / (xr - xl) as f64;
            }
            if yd > yu {
                iy[y * width + x] = (avg[yd * width + x] - avg[yu * width + x]) / (yd - yu) as f64;
            }
        }
    }
    let it: Vec<f64> = next.iter().zip(prev).map(|(a, b)| a - b).collect();

    let r = window / 2;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for y in 0..height {
        for x in 0..width {
            let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in y.saturating_sub(r)..=(y + r).min(height - 1) {
                for wx in x.saturating_sub(r)..=(x + r).min(width - 1) {
                    let i = wy * width + wx;
                    sxx += ix[i] * ix[i];
                    sxy += ix[i] * iy[i];
                    syy += iy[i] * iy[i];
                    sxt += ix[i] * it[i];
                    syt += iy[i] * it[i];
                }
            }
            let trace = sxx + syy;
            let det = sxx * syy - sxy * sxy;
            let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
            let min_eig = 0.5 * (trace - disc);
            if min_eig < LK_MIN_EIGENVALUE {
                continue;
            }
            gx[y * width + x] = (-syy * sxt + sxy * syt) / det;
            gy[y * width + x] = (sxy * sxt - sxx * syt) / det;
        }
    }
    Ok(FlowField {
        width,
        height,
        gx,
        gy,
    })
}

/// Frame geometry and flow settings for [`build_video_tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preprocessor {
    pub width: usize,
    pub height: usize,
    pub lk_window: usize,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            lk_window: 5,
        }
    }
}

impl Preprocessor {
    /// resize → YUV → per-video standardization → LK flow on Y between
    /// consecutive frames (the last frame reuses the previous flow) →
    /// flow clamped to ±8 px and scaled to [−1, 1] → `[Y, U, V, Γx, Γy]`.
    pub fn build_video_tensor(&self, frames: &[RawFrame]) -> Result<Vec<FrameTensor>> {
        if frames.len() < 2 {
            return Err(ReidError::Invalid(format!(
                "a video needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let mut yuv = frames
            .iter()
            .map(|f| resize_bilinear(f, self.width, self.height).map(|r| rgb_to_yuv(&r)))
            .collect::<Result<Vec<_>>>()?;
        normalize_video_channels(&mut yuv);

        let mut flows = yuv
            .windows(2)
            .map(|pair| {
                lucas_kanade(
                    pair[0].plane(0),
                    pair[1].plane(0),
                    self.width,
                    self.height,
                    self.lk_window,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        flows.push(flows.last().expect("at least one flow").clone());

        let scale = |v: f64| v.clamp(-FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP;
        yuv.into_iter()
            .zip(flows)
            .map(|(img, flow)| {
                let mut data = img.data;
                data.extend(flow.gx.iter().map(|&v| scale(v)));
                data.extend(flow.gy.iter().map(|&v| scale(v)));
                FrameTensor::new(Tensor::new(&[FRAME_CHANNELS, self.height, self.width], data)?)
            })
            .collect()
    }
}

/// [`Preprocessor::build_video_tensor`] at the default 56×40 geometry.
pub fn build_video_tensor(frames: &[RawFrame]) -> Result<Vec<FrameTensor>> {
    Preprocessor::default().build_video_tensor(frames)
}
