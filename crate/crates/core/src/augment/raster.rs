use super::SampleShape;
use crate::numcore::Rng;

fn dims(shape: SampleShape) -> (usize, usize, usize) {
    match shape {
        SampleShape::Raster {
            height,
            width,
            channels,
        } => (height, width, channels),
        SampleShape::Vector(d) => (1, d, 1),
    }
}

/// Random window with area fraction in `[min_area, 1]` and aspect ratio in
/// `[3/4, 4/3]`, bilinearly resampled to the original size.
pub(super) fn crop_resize(x: &[f64], shape: SampleShape, min_area: f64, rng: &mut Rng) -> Vec<f64> {
    let (h, w, c) = dims(shape);
    let area = rng.uniform_range(min_area, 1.0);
    let ratio = rng.uniform_range((3f64 / 4.0).ln(), (4f64 / 3.0).ln()).exp();
    let cw = ((area * ratio).sqrt() * w as f64).round().clamp(1.0, w as f64) as usize;
    let ch = ((area / ratio).sqrt() * h as f64).round().clamp(1.0, h as f64) as usize;
    let x0 = rng.below(w - cw + 1);
    let y0 = rng.below(h - ch + 1);

    let sample_axis = |out: usize, size: usize, crop: usize, start: usize| {
        let pos = ((out as f64 + 0.5) * crop as f64 / size as f64 - 0.5).clamp(0.0, (crop - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(crop - 1);
        (start + lo, start + hi, pos - lo as f64)
    };
    let at = |y: usize, xx: usize, ch: usize| x[(y * w + xx) * c + ch];
    let mut out = vec![0.0; x.len()];
    for oy in 0..h {
        let (ya, yb, fy) = sample_axis(oy, h, ch, y0);
        for ox in 0..w {
            let (xa, xb, fx) = sample_axis(ox, w, cw, x0);
            for k in 0..c {
                let top = at(ya, xa, k) * (1.0 - fx) + at(ya, xb, k) * fx;
                let bottom = at(yb, xa, k) * (1.0 - fx) + at(yb, xb, k) * fx;
                out[(oy * w + ox) * c + k] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub(super) fn flip(x: &mut [f64], shape: SampleShape) {
    let (h, w, c) = dims(shape);
    for y in 0..h {
        for xx in 0..w / 2 {
            for k in 0..c {
                x.swap((y * w + xx) * c + k, (y * w + (w - 1 - xx)) * c + k);
            }
        }
    }
}

/// Scales brightness, then stretches contrast about the mean intensity.
pub(super) fn jitter(x: &mut [f64], strength: f64, rng: &mut Rng) {
    let brightness = rng.uniform_range(1.0 - strength, 1.0 + strength);
    let contrast = rng.uniform_range(1.0 - strength, 1.0 + strength);
    for v in x.iter_mut() {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    for v in x.iter_mut() {
        *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
    }
}

/// Replaces every channel with the luma (RGB) or channel mean (other counts).
pub(super) fn grayscale(x: &mut [f64], shape: SampleShape) {
    let (_, _, c) = dims(shape);
    if c < 2 {
        return;
    }
    for px in x.chunks_mut(c) {
        let y = if c == 3 {
            0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
        } else {
            px.iter().sum::<f64>() / c as f64
        };
        px.fill(y);
    }
}
