//! 2-D FFT plumbing and the band-pass image (BI) transform.
//!
//! The BI pipeline is: forward FFT → shift the DC bin to the grid center →
//! pointwise multiply by a difference-of-Gaussians kernel
//! `K = G(σ_low) − G(σ_high)` → shift back → inverse FFT → real part. The
//! kernel has unit peak amplitude per Gaussian, so `K` is exactly zero at DC:
//! the filter blocks the overall brightness along with everything outside the
//! chosen frequency annulus. σ is measured in frequency-bin units.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{PadError, Result};
use crate::par;

use super::ImageGrid;

/// Default σ_low for 224x224 inputs.
pub const DEFAULT_SIGMA_LOW: f64 = 40.0;
/// Default σ_high for 224x224 inputs.
pub const DEFAULT_SIGMA_HIGH: f64 = 10.0;

/// A complex frequency grid, same height/width as its source channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpectrum {
    height: usize,
    width: usize,
    /// Whether the DC bin currently sits at the grid center
    /// `(height/2, width/2)` instead of `(0, 0)`.
    centered: bool,
    data: Vec<Complex<f64>>,
}

impl FrequencySpectrum {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn centered(&self) -> bool {
        self.centered
    }
    pub fn at(&self, y: usize, x: usize) -> Complex<f64> {
        self.data[y * self.width + x]
    }

    /// Move the DC bin to the grid center (`fftshift`): a cyclic rotation by
    /// `(height/2, width/2)`.
    pub fn shift(&self) -> FrequencySpectrum {
        assert!(!self.centered, "spectrum is already centered");
        self.rotated(self.height / 2, self.width / 2, true)
    }

    /// Undo [`shift`](Self::shift): rotate by the complementary offsets.
    pub fn unshift(&self) -> FrequencySpectrum {
        assert!(self.centered, "spectrum is not centered");
        self.rotated(
            self.height - self.height / 2,
            self.width - self.width / 2,
            false,
        )
    }

    fn rotated(&self, dy: usize, dx: usize, centered: bool) -> FrequencySpectrum {
        let (h, w) = (self.height, self.width);
        let mut data = vec![Complex::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                data[((y + dy) % h) * w + (x + dx) % w] = self.data[y * w + x];
            }
        }
        FrequencySpectrum { height: h, width: w, centered, data }
    }
}

/// Unnormalized forward 2-D DFT of one channel (row FFTs, then column FFTs).
pub fn forward_2d(values: &[f64], height: usize, width: usize) -> Result<FrequencySpectrum> {
    if values.len() != height * width || height == 0 || width == 0 {
        return Err(PadError::ShapeMismatch {
            expected: format!("{height}x{width} values"),
            got: format!("{}", values.len()),
        });
    }
    let mut data: Vec<Complex<f64>> =
        values.iter().map(|v| Complex::new(*v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(width);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    Ok(FrequencySpectrum { height, width, centered: false, data })
}

/// Inverse 2-D DFT scaled by `1/(height·width)`; returns the real parts.
///
/// The spectrum must be in natural (uncentered) layout.
pub fn inverse_2d(spec: &FrequencySpectrum) -> Result<Vec<f64>> {
    if spec.centered {
        return Err(PadError::param("inverse_2d expects an uncentered spectrum"));
    }
    let (h, w) = (spec.height, spec.width);
    let mut data = spec.data.clone();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_inverse(w);
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_inverse(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    let scale = 1.0 / (h * w) as f64;
    Ok(data.into_iter().map(|c| c.re * scale).collect())
}

/// Difference-of-Gaussians weights over a centered spectrum.
///
/// `weights[y][x] = exp(−D²/2σ_low²) − exp(−D²/2σ_high²)` with `D` the
/// distance to the centered DC bin. Both Gaussians have unit peak, so the
/// weight at DC is exactly zero and, for `σ_low > σ_high`, the kernel passes
/// an annulus of middle frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPassKernel {
    sigma_low: f64,
    sigma_high: f64,
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl BandPassKernel {
    /// Strictly validated constructor: `σ_low > σ_high > 0`.
    pub fn new(height: usize, width: usize, sigma_low: f64, sigma_high: f64) -> Result<Self> {
        if !(sigma_low.is_finite() && sigma_high.is_finite() && sigma_low > sigma_high) {
            return Err(PadError::param(format!(
                "band-pass needs sigma_low > sigma_high, got {sigma_low} vs {sigma_high}"
            )));
        }
        Self::allowing_equal(height, width, sigma_low, sigma_high)
    }

    /// Like [`new`](Self::new) but permitting `σ_low == σ_high`, which makes
    /// the kernel identically zero (`G − G`). Used by [`band_pass_raw`] so
    /// the degenerate case stays observable pre-normalization.
    pub fn allowing_equal(
        height: usize,
        width: usize,
        sigma_low: f64,
        sigma_high: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(PadError::param("kernel grid must be nonempty"));
        }
        if !(sigma_low.is_finite() && sigma_high.is_finite())
            || sigma_low <= 0.0
            || sigma_high <= 0.0
            || sigma_low < sigma_high
        {
            return Err(PadError::param(format!(
                "band-pass sigmas must satisfy sigma_low >= sigma_high > 0, got \
                 {sigma_low} vs {sigma_high}"
            )));
        }
        let (cy, cx) = (height / 2, width / 2);
        let (two_sl2, two_sh2) = (2.0 * sigma_low * sigma_low, 2.0 * sigma_high * sigma_high);
        let mut weights = vec![0.0; height * width];
        for y in 0..height {
            for x in 0..width {
                let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
                // With equal sigmas the two exponentials are the same value,
                // so the difference is exactly 0.0 at every bin.
                weights[y * width + x] = (-d2 / two_sl2).exp() - (-d2 / two_sh2).exp();
            }
        }
        Ok(BandPassKernel { sigma_low, sigma_high, height, width, weights })
    }

    pub fn sigma_low(&self) -> f64 {
        self.sigma_low
    }
    pub fn sigma_high(&self) -> f64 {
        self.sigma_high
    }
    /// The centered DC position `(height/2, width/2)`.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
    pub fn weight(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.width + x]
    }
}

/// Apply the band-pass pipeline to every channel, returning the raw real
/// maps **before** any renormalization. Accepts `σ_low == σ_high` so the
/// identically-zero degenerate case is observable.
pub fn band_pass_raw(
    img: &ImageGrid,
    sigma_low: f64,
    sigma_high: f64,
) -> Result<Vec<Vec<f64>>> {
    let (h, w) = (img.height(), img.width());
    let kernel = BandPassKernel::allowing_equal(h, w, sigma_low, sigma_high)?;
    let channels: Vec<usize> = (0..img.channels()).collect();
    par::try_map_ordered(&channels, |&ch| {
        let spectrum = forward_2d(img.channel(ch), h, w)?;
        let mut shifted = spectrum.shift();
        for (c, k) in shifted.data.iter_mut().zip(&kernel.weights) {
            *c *= *k;
        }
        inverse_2d(&shifted.unshift())
    })
}

/// The band-pass image (BI) map: [`band_pass_raw`] followed by an affine
/// rescale of the real part to `[0, 1]` per image (all channels jointly, so
/// inter-channel structure survives). A flat result (zero dynamic range)
/// renormalizes to all zeros. Requires `σ_low > σ_high` strictly.
pub fn band_pass_image(img: &ImageGrid, sigma_low: f64, sigma_high: f64) -> Result<ImageGrid> {
    if !(sigma_low.is_finite() && sigma_high.is_finite() && sigma_low > sigma_high) {
        return Err(PadError::param(format!(
            "band_pass_image needs sigma_low > sigma_high, got {sigma_low} vs {sigma_high}"
        )));
    }
    let maps = band_pass_raw(img, sigma_low, sigma_high)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for map in &maps {
        for v in map {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let span = hi - lo;
    let data: Vec<f64> = maps
        .into_iter()
        .flatten()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    ImageGrid::new(img.height(), img.width(), img.channels(), data)
}

/// Batch variant of [`band_pass_image`]; images are filtered in parallel
/// under the `parallel` feature.
pub fn band_pass_images(
    images: &[ImageGrid],
    sigma_low: f64,
    sigma_high: f64,
) -> Result<Vec<ImageGrid>> {
    par::try_map_ordered(images, |img| band_pass_image(img, sigma_low, sigma_high))
}
