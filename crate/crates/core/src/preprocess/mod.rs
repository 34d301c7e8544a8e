//! Image-level algorithms: FFT band-pass filtering, zoom-based
//! homologous-image simulation, patch cropping, mixup, label smoothing, and
//! flip test-time augmentation.
//!
//! Images are dense `f64` grids with values in `[0, 1]` ([`ImageGrid`]);
//! 8-bit PNG is supported at the boundary for interchange, JSON for golden
//! fixtures (`ImageGrid` serializes losslessly). All randomized ops take an
//! explicit RNG and are bit-reproducible from its state.

pub mod fft;
pub mod resize;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

pub use fft::{
    band_pass_image, band_pass_images, band_pass_raw, forward_2d, inverse_2d, BandPassKernel,
    FrequencySpectrum, DEFAULT_SIGMA_HIGH, DEFAULT_SIGMA_LOW,
};
pub use resize::{pad_to_square, resize, Interp, ALL_INTERPS};

/// Side length every augmentation pipeline resolves to.
pub const TARGET_SIZE: usize = 224;
/// Input side length required by the patch cropper.
pub const PATCH_SOURCE_SIZE: usize = 256;

/// A dense image: `channels` planes (1 = grayscale, 3 = RGB) of
/// `height`x`width` values in `[0, 1]`, stored plane-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Validating constructor: dimensions positive, 1 or 3 channels, data of
    /// length `height·width·channels`, every value finite in `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(PadError::param("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(PadError::param(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(PadError::ShapeMismatch {
                expected: format!("{} values", height * width * channels),
                got: format!("{}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(PadError::param(format!("image value {v} outside [0, 1]")));
        }
        Ok(ImageGrid { height, width, channels, data })
    }

    /// A constant image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Build from a per-pixel function `(channel, y, x) -> value`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    /// One channel plane, row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
    /// The raw plane-major buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mirror left-right. An exact involution: values are only moved.
    pub fn flip_horizontal(&self) -> ImageGrid {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; self.data.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(ch * h + y) * w + x] = self.data[(ch * h + y) * w + (w - 1 - x)];
                }
            }
        }
        ImageGrid { height: h, width: w, channels: c, data }
    }

    /// Crop rows `y0..y1`, columns `x0..x1` (end-exclusive).
    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<ImageGrid> {
        if y1 <= y0 || x1 <= x0 || y1 > self.height || x1 > self.width {
            return Err(PadError::param(format!(
                "crop box rows {y0}..{y1}, cols {x0}..{x1} invalid for \
                 {}x{}",
                self.height, self.width
            )));
        }
        let (ch, cw) = (y1 - y0, x1 - x0);
        let mut data = Vec::with_capacity(ch * cw * self.channels);
        for c in 0..self.channels {
            for y in y0..y1 {
                for x in x0..x1 {
                    data.push(self.get(c, y, x));
                }
            }
        }
        ImageGrid::new(ch, cw, self.channels, data)
    }

    /// Decode an 8-bit PNG (grayscale → 1 channel, anything else → RGB),
    /// mapping sample values to `[0, 1]` by `v / 255`.
    pub fn from_png(bytes: &[u8]) -> Result<ImageGrid> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        match decoded {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                let data = g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                ImageGrid::new(h, w, 1, data)
            }
            other => {
                let rgb = other.into_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let raw = rgb.into_raw();
                let mut data = vec![0.0; h * w * 3];
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..3 {
                            data[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] as f64 / 255.0;
                        }
                    }
                }
                ImageGrid::new(h, w, 3, data)
            }
        }
    }

    /// Encode as an 8-bit PNG, quantizing by `round(v · 255)`.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let quant = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let (h, w) = (self.height as u32, self.width as u32);
        let mut out = std::io::Cursor::new(Vec::new());
        if self.channels == 1 {
            let buf: Vec<u8> = self.data.iter().map(|v| quant(*v)).collect();
            let img = image::GrayImage::from_raw(w, h, buf)
                .expect("buffer length matches dimensions");
            img.write_to(&mut out, image::ImageFormat::Png)?;
        } else {
            let mut buf = vec![0u8; self.data.len()];
            for y in 0..self.height {
                for x in 0..self.width {
                    for c in 0..3 {
                        buf[(y * self.width + x) * 3 + c] = quant(self.get(c, y, x));
                    }
                }
            }
            let img = image::RgbImage::from_raw(w, h, buf)
                .expect("buffer length matches dimensions");
            img.write_to(&mut out, image::ImageFormat::Png)?;
        }
        Ok(out.into_inner())
    }
}

/// The random draws behind one zoom round trip, in draw order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomDraw {
    /// Uniform in `[0.20, 0.75]`.
    pub scale: f64,
    pub down: Interp,
    pub up: Interp,
}

/// Sample the zoom parameters: scale factor, then the downscale and upscale
/// interpolations, each uniform over [`ALL_INTERPS`].
pub fn zoom_draw<R: Rng>(rng: &mut R) -> ZoomDraw {
    let scale = rng.random_range(0.20..=0.75);
    let down = ALL_INTERPS[rng.random_range(0..ALL_INTERPS.len())];
    let up = ALL_INTERPS[rng.random_range(0..ALL_INTERPS.len())];
    ZoomDraw { scale, down, up }
}

/// Simulate a homologous low-resolution capture: shrink by a random factor
/// in `[0.20, 0.75]` with a random interpolation, then resize back to
/// 224x224 with an independently drawn interpolation.
///
/// Non-square inputs are scaled aspect-preserving (one factor for both axes)
/// and center-padded to square with black before the final resize. Exactly
/// three RNG draws (scale, down, up), so output is a pure function of
/// `(img, rng state)`.
pub fn random_zoom_in_out<R: Rng>(img: &ImageGrid, rng: &mut R) -> Result<ImageGrid> {
    if img.height() < 8 || img.width() < 8 {
        return Err(PadError::param(format!(
            "zoom needs at least 8x8 input, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let draw = zoom_draw(rng);
    let h2 = ((img.height() as f64 * draw.scale).round() as usize).max(1);
    let w2 = ((img.width() as f64 * draw.scale).round() as usize).max(1);
    let small = resize(img, h2, w2, draw.down);
    let square = pad_to_square(&small, 0.0);
    Ok(resize(&square, TARGET_SIZE, TARGET_SIZE, draw.up))
}

/// Fractional crop boxes `(x0, y0, x1, y1)` on the 256-grid, by region name.
pub const PATCH_BOXES: [(&str, f64, f64, f64, f64); 4] = [
    ("face", 0.125, 0.125, 0.875, 0.875),
    ("eyes", 0.15, 0.25, 0.85, 0.50),
    ("nose", 0.30, 0.40, 0.70, 0.75),
    ("chin", 0.20, 0.70, 0.80, 1.00),
];

/// The five streams the patch pipeline feeds to its branches.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePatches {
    pub original: ImageGrid,
    pub face: ImageGrid,
    pub eyes: ImageGrid,
    pub nose: ImageGrid,
    pub chin: ImageGrid,
}

impl FacePatches {
    /// Branch order used everywhere: original, face, eyes, nose, chin.
    pub fn streams(&self) -> [(&'static str, &ImageGrid); 5] {
        [
            ("original", &self.original),
            ("face", &self.face),
            ("eyes", &self.eyes),
            ("nose", &self.nose),
            ("chin", &self.chin),
        ]
    }
}

/// Crop the predefined face/eyes/nose/chin boxes from a 256x256 image and
/// area-resize each crop — and the original — to 224x224.
///
/// Fractional box corners are rounded to pixels on the 256 grid.
pub fn crop_face_patches(img: &ImageGrid) -> Result<FacePatches> {
    if img.height() != PATCH_SOURCE_SIZE || img.width() != PATCH_SOURCE_SIZE {
        return Err(PadError::param(format!(
            "patch cropper needs a {PATCH_SOURCE_SIZE}x{PATCH_SOURCE_SIZE} input, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let side = PATCH_SOURCE_SIZE as f64;
    let mut crops = Vec::with_capacity(4);
    for (_, x0, y0, x1, y1) in PATCH_BOXES {
        let px = |f: f64| (f * side).round() as usize;
        let crop = img.crop(px(y0), px(y1), px(x0), px(x1))?;
        crops.push(resize(&crop, TARGET_SIZE, TARGET_SIZE, Interp::Area));
    }
    let mut it = crops.into_iter();
    Ok(FacePatches {
        original: resize(img, TARGET_SIZE, TARGET_SIZE, Interp::Area),
        face: it.next().unwrap(),
        eyes: it.next().unwrap(),
        nose: it.next().unwrap(),
        chin: it.next().unwrap(),
    })
}

/// Mixup with an explicit mixing coefficient: `x = λ·x1 + (1−λ)·x2`, same
/// for the targets. Inputs may be flattened images or feature vectors.
pub fn mixup_with_lambda(
    x1: &[f64],
    y1: &[f64],
    x2: &[f64],
    y2: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x1.len() != x2.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("x2 of length {}", x1.len()),
            got: format!("{}", x2.len()),
        });
    }
    if y1.len() != y2.len() {
        return Err(PadError::ShapeMismatch {
            expected: format!("y2 of length {}", y1.len()),
            got: format!("{}", y2.len()),
        });
    }
    if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
        return Err(PadError::param(format!("lambda {lambda} outside [0, 1]")));
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect()
    };
    Ok((mix(x1, x2), mix(y1, y2)))
}

/// Mixup: draw `λ ~ Beta(alpha, alpha)` and blend two samples and their
/// targets.
pub fn mixup<R: Rng>(
    x1: &[f64],
    y1: &[f64],
    x2: &[f64],
    y2: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(PadError::param(format!("mixup alpha {alpha} must be positive")));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| PadError::param(format!("beta({alpha}, {alpha}): {e}")))?;
    let lambda: f64 = beta.sample(rng);
    mixup_with_lambda(x1, y1, x2, y2, lambda.clamp(0.0, 1.0))
}

/// Label smoothing: `(1 − ε)·y + ε / num_classes`, with `num_classes`
/// taken from the target's length.
pub fn label_smoothing(y: &[f64], epsilon: f64) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&epsilon), "epsilon {epsilon} outside [0, 1)");
    let uniform = epsilon / y.len() as f64;
    y.iter().map(|v| (1.0 - epsilon) * v + uniform).collect()
}

/// Default flip-TTA weights: plain average.
pub const DEFAULT_TTA_WEIGHTS: (f64, f64) = (0.5, 0.5);

/// Normalized weighted mean of the original and flipped prediction scores.
pub fn tta_flip_average(
    score_original: f64,
    score_flipped: f64,
    weights: (f64, f64),
) -> Result<f64> {
    let (w0, w1) = weights;
    if !(w0.is_finite() && w1.is_finite()) || w0 < 0.0 || w1 < 0.0 || w0 + w1 <= 0.0 {
        return Err(PadError::param(format!(
            "tta weights ({w0}, {w1}) must be nonnegative with positive sum"
        )));
    }
    Ok((w0 * score_original + w1 * score_flipped) / (w0 + w1))
}
