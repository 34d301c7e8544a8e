//! Resampling kernels used by the geometric augmentations.
//!
//! All four methods share the half-pixel-center convention: destination
//! pixel `i` samples source coordinate `(i + 0.5)·scale − 0.5` with
//! `scale = src/dst`. Resampling is separable (rows, then columns) and each
//! output pixel's weights are normalized to sum to one, so constant images
//! stay constant. "Area" is box-average resampling; "lanczos" is the 3-lobe
//! kernel, stretched by the scale factor when downscaling so it anti-aliases
//! the way image libraries do.

use serde::{Deserialize, Serialize};

use super::ImageGrid;

/// Interpolation method for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Nearest,
    Bilinear,
    Area,
    Lanczos,
}

/// The methods the zoom augmentation draws from, in draw order.
pub const ALL_INTERPS: [Interp; 4] =
    [Interp::Nearest, Interp::Bilinear, Interp::Area, Interp::Lanczos];

/// Per-destination-index source taps `(src index, weight)`; weights sum to 1.
type AxisWeights = Vec<Vec<(usize, f64)>>;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn axis_weights(src_n: usize, dst_n: usize, interp: Interp) -> AxisWeights {
    let scale = src_n as f64 / dst_n as f64;
    let clamp = |j: isize| -> usize { j.clamp(0, src_n as isize - 1) as usize };
    (0..dst_n)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            match interp {
                Interp::Nearest => {
                    // Round half up, then clamp: one tap of weight 1.
                    vec![(clamp((center + 0.5).floor() as isize), 1.0)]
                }
                Interp::Bilinear => {
                    let f = center.floor();
                    let w = center - f;
                    let (j0, j1) = (clamp(f as isize), clamp(f as isize + 1));
                    if j0 == j1 {
                        vec![(j0, 1.0)]
                    } else {
                        vec![(j0, 1.0 - w), (j1, w)]
                    }
                }
                Interp::Area => {
                    // Destination pixel i covers the source interval
                    // [i·scale, (i+1)·scale); each source pixel contributes
                    // its overlap fraction.
                    let lo = i as f64 * scale;
                    let hi = (i as f64 + 1.0) * scale;
                    let j_lo = lo.floor() as usize;
                    let j_hi = (hi.ceil() as usize).min(src_n);
                    let mut taps = Vec::new();
                    let mut total = 0.0;
                    for j in j_lo..j_hi {
                        let overlap =
                            (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                        if overlap > 0.0 {
                            taps.push((j, overlap));
                            total += overlap;
                        }
                    }
                    for t in &mut taps {
                        t.1 /= total;
                    }
                    taps
                }
                Interp::Lanczos => {
                    const A: f64 = 3.0;
                    // Stretch the kernel when downscaling (scale > 1) so it
                    // acts as a low-pass filter, not just an interpolant.
                    let fs = scale.max(1.0);
                    let radius = A * fs;
                    let j_lo = (center - radius).ceil() as isize;
                    let j_hi = (center + radius).floor() as isize;
                    let mut taps: Vec<(usize, f64)> = Vec::new();
                    let mut total = 0.0;
                    for j in j_lo..=j_hi {
                        let d = (j as f64 - center) / fs;
                        if d.abs() >= A {
                            continue;
                        }
                        let w = sinc(d) * sinc(d / A);
                        total += w;
                        let jc = clamp(j);
                        // Edge-clamped taps accumulate on the border pixel.
                        if let Some(last) = taps.last_mut().filter(|t| t.0 == jc) {
                            last.1 += w;
                        } else {
                            taps.push((jc, w));
                        }
                    }
                    for t in &mut taps {
                        t.1 /= total;
                    }
                    taps
                }
            }
        })
        .collect()
}

/// Resize to `dst_h` x `dst_w` with the given interpolation.
///
/// Output values are clamped to `[0, 1]` (lanczos lobes can overshoot).
pub fn resize(img: &ImageGrid, dst_h: usize, dst_w: usize, interp: Interp) -> ImageGrid {
    assert!(dst_h > 0 && dst_w > 0, "resize target must be nonempty");
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let col_w = axis_weights(w, dst_w, interp);
    let row_w = axis_weights(h, dst_h, interp);

    // Pass 1: resample rows (width direction) into h x dst_w.
    let mut mid = vec![0.0; h * dst_w * c];
    for ch in 0..c {
        let plane = img.channel(ch);
        for y in 0..h {
            for (x, taps) in col_w.iter().enumerate() {
                let mut acc = 0.0;
                for (j, wt) in taps {
                    acc += plane[y * w + j] * wt;
                }
                mid[(ch * h + y) * dst_w + x] = acc;
            }
        }
    }
    // Pass 2: resample columns (height direction) into dst_h x dst_w.
    let mut out = vec![0.0; dst_h * dst_w * c];
    for ch in 0..c {
        for (y, taps) in row_w.iter().enumerate() {
            for x in 0..dst_w {
                let mut acc = 0.0;
                for (j, wt) in taps {
                    acc += mid[(ch * h + j) * dst_w + x] * wt;
                }
                out[(ch * dst_h + y) * dst_w + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
    ImageGrid::new(dst_h, dst_w, c, out).expect("resized values are clamped into range")
}

/// Center-pad to a square of the longer side, filling with `value`.
pub fn pad_to_square(img: &ImageGrid, value: f64) -> ImageGrid {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if h == w {
        return img.clone();
    }
    let side = h.max(w);
    let (off_y, off_x) = ((side - h) / 2, (side - w) / 2);
    let mut data = vec![value; side * side * c];
    for ch in 0..c {
        let plane = img.channel(ch);
        for y in 0..h {
            for x in 0..w {
                data[(ch * side + y + off_y) * side + x + off_x] = plane[y * w + x];
            }
        }
    }
    ImageGrid::new(side, side, c, data).expect("padding preserves value range")
}
