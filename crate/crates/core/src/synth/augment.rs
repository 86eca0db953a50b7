//! Random geometric and photometric augmentation.
//!
//! Order is fixed: rotation, shear, shift (composed into one affine map and
//! resampled bilinearly over a white background), then Gaussian blur, then
//! salt-and-pepper noise. Parameters are drawn uniformly from the configured
//! ranges in that order.

use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::rng::Rng64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    /// Rotation in degrees, counter-clockwise as displayed.
    pub rotation: (f64, f64),
    /// Horizontal shear factor: `x' = x + k * (y - cy)`.
    pub shear: (f64, f64),
    /// Translation in pixels (same range for both axes).
    pub shift: (f64, f64),
    /// Gaussian blur sigma in pixels; values below 0.05 skip the blur.
    pub blur: (f64, f64),
    /// Probability of replacing a pixel with black or white.
    pub noise: (f64, f64),
    pub rng_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self { rotation: (0.0, 0.0), shear: (0.0, 0.0), shift: (0.0, 0.0), blur: (0.0, 0.0), noise: (0.0, 0.0), rng_seed: 0 }
    }

    /// Mild variation for the pretraining distribution.
    pub fn pretrain() -> Self {
        Self { rotation: (-8.0, 8.0), shear: (-0.15, 0.15), shift: (-3.0, 3.0), blur: (0.0, 0.6), noise: (0.0, 0.01), rng_seed: 0 }
    }

    /// The exam-domain distribution: slanted, blurred, noisy scans.
    pub fn exam_domain() -> Self {
        Self { rotation: (-18.0, -2.0), shear: (0.4, 0.65), shift: (-5.0, 5.0), blur: (1.0, 1.6), noise: (0.06, 0.11), rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, (lo, hi)) in
            [("rotation", self.rotation), ("shear", self.shear), ("shift", self.shift), ("blur", self.blur), ("noise", self.noise)]
        {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(format!("invalid {name} range [{lo}, {hi}]"));
            }
        }
        if self.blur.0 < 0.0 || self.noise.0 < 0.0 || self.noise.1 > 1.0 {
            return Err("blur and noise ranges must be non-negative, noise <= 1".into());
        }
        Ok(())
    }
}

/// Concrete parameters of one augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub shear: f64,
    pub dx: f64,
    pub dy: f64,
    pub sigma: f64,
    pub noise: f64,
}

impl AugmentDraw {
    pub fn sample(params: &AugmentParams, rng: &mut Rng64) -> Self {
        Self {
            rotation_deg: rng.uniform(params.rotation.0, params.rotation.1),
            shear: rng.uniform(params.shear.0, params.shear.1),
            dx: rng.uniform(params.shift.0, params.shift.1),
            dy: rng.uniform(params.shift.0, params.shift.1),
            sigma: rng.uniform(params.blur.0, params.blur.1),
            noise: rng.uniform(params.noise.0, params.noise.1),
        }
    }
}

/// Draws parameters from `params` with `seed` (mixed with `params.rng_seed`)
/// and applies them.
pub fn augment(img: &GrayImage, params: &AugmentParams, seed: u64) -> GrayImage {
    let mut rng = Rng64::new(seed ^ params.rng_seed);
    let draw = AugmentDraw::sample(params, &mut rng);
    apply(img, &draw, &mut rng)
}

pub fn apply(img: &GrayImage, draw: &AugmentDraw, rng: &mut Rng64) -> GrayImage {
    let mut out = warp_affine(img, draw.rotation_deg, draw.shear, draw.dx, draw.dy);
    if draw.sigma >= 0.05 {
        out = gaussian_blur(&out, draw.sigma);
    }
    if draw.noise > 0.0 {
        for v in out.data_mut() {
            if rng.bernoulli(draw.noise) {
                *v = if rng.bernoulli(0.5) { 0 } else { 255 };
            }
        }
    }
    out
}

/// Rotation about the image center, then shear, then translation, resampled
/// with bilinear interpolation. Out-of-image samples are white.
pub fn warp_affine(img: &GrayImage, rotation_deg: f64, shear: f64, dx: f64, dy: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = rotation_deg.to_radians();
    // counter-clockwise on screen with y pointing down
    let (c, s) = (snap(theta.cos()), snap(theta.sin()));
    // forward: p' = T + Sh * R * (p - center) + center, with
    // R = [[c, s], [-s, c]] and Sh = [[1, k], [0, 1]]; so M = Sh*R.
    let m00 = c - shear * s;
    let m01 = s + shear * c;
    let m10 = -s;
    let m11 = c;
    let det = m00 * m11 - m01 * m10;
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
    let mut out = GrayImage::blank(w, h);
    for y in 0..h {
        for x in 0..w {
            let (qx, qy) = (x as f64 - cx - dx, y as f64 - cy - dy);
            let sx = snap(i00 * qx + i01 * qy) + cx;
            let sy = snap(i10 * qx + i11 * qy) + cy;
            out.set(x, y, bilinear(img, sx, sy));
        }
    }
    out
}

/// Rounds values within 1e-9 of an integer, so exact quarter turns and the
/// identity map land on pixel centers.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> u8 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            255.0
        } else {
            img.get(xi as usize, yi as usize) as f64
        }
    };
    if fx == 0.0 && fy == 0.0 {
        return px(x0, y0) as u8;
    }
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

/// Separable Gaussian blur, radius `ceil(3 sigma)`, replicated borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                acc += kv * src[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc / norm;
        }
    }
    let mut out = GrayImage::blank(img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
            }
            out.set(x as usize, y as usize, (acc / norm).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Bilinear resize (pixel-center aligned), used to fit glyphs into smaller cells.
pub fn resize_bilinear(img: &GrayImage, nw: usize, nh: usize) -> GrayImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut out = GrayImage::blank(nw, nh);
    for y in 0..nh {
        let sy = ((y as f64 + 0.5) * h / nh as f64 - 0.5).max(0.0);
        for x in 0..nw {
            let sx = ((x as f64 + 0.5) * w / nw as f64 - 0.5).max(0.0);
            out.set(x, y, bilinear_clamped(img, sx, sy));
        }
    }
    out
}

fn bilinear_clamped(img: &GrayImage, x: f64, y: f64) -> u8 {
    let (w, h) = (img.width(), img.height());
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |xi, yi| img.get(xi, yi) as f64;
    let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
    let bottom = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::glyph::GlyphAtlas;

    fn glyph() -> GrayImage {
        GlyphAtlas::default().render('F', 3).unwrap()
    }

    #[test]
    fn zero_ranges_are_identity() {
        let img = glyph();
        assert_eq!(augment(&img, &AugmentParams::identity(), 99), img);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let img = glyph();
        let p = AugmentParams::exam_domain();
        assert_eq!(augment(&img, &p, 5), augment(&img, &p, 5));
        assert_ne!(augment(&img, &p, 5), augment(&img, &p, 6));
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let img = glyph();
        let p = AugmentParams { rotation: (90.0, 90.0), ..AugmentParams::identity() };
        let out = augment(&img, &p, 1);
        let n = img.width();
        // counter-clockwise quarter turn: dst(x, y) = src(n-1-y, x)
        for y in 0..n {
            for x in 0..n {
                assert_eq!(out.get(x, y), img.get(n - 1 - y, x), "({x},{y})");
            }
        }
    }

    #[test]
    fn dimensions_preserved() {
        let img = glyph();
        for seed in 0..10 {
            let out = augment(&img, &AugmentParams::exam_domain(), seed);
            assert_eq!((out.width(), out.height()), (64, 64));
        }
    }

    #[test]
    fn blur_keeps_flat_images_flat() {
        let img = GrayImage::filled(16, 16, 200);
        assert_eq!(gaussian_blur(&img, 1.5), img);
    }

    #[test]
    fn validate_rejects_inverted_range() {
        let p = AugmentParams { shift: (2.0, 1.0), ..AugmentParams::identity() };
        assert!(p.validate().is_err());
        assert!(AugmentParams::exam_domain().validate().is_ok());
    }
}
