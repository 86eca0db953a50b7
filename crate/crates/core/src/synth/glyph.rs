//! Procedural glyph atlas standing in for a handwriting database.
//!
//! Every symbol is a list of strokes in a unit box; rendering applies a
//! seed-dependent affine wobble, per-stroke offsets and a smooth warp, then
//! rasterizes anti-aliased strokes into the central 40x40 area of a 64x64
//! white canvas.

use std::f64::consts::PI;

use crate::image::GrayImage;
use crate::rng::{derive_seed, Rng64};

use super::SynthError;

pub const GLYPH_SIZE: usize = 64;
const BOX_ORIGIN: f64 = 12.0;
const BOX_SIZE: f64 = 40.0;

type Pt = (f64, f64);
type Stroke = Vec<Pt>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let steps = (((to_deg - from_deg).abs() / 12.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn poly(pts: &[Pt]) -> Stroke {
    pts.to_vec()
}

fn join(mut a: Stroke, b: Stroke) -> Stroke {
    a.extend(b);
    a
}

/// Stroke program for a built-in symbol; angles are degrees with y down.
fn builtin_strokes(symbol: char) -> Option<Vec<Stroke>> {
    let s = match symbol {
        '0' => vec![arc(0.5, 0.5, 0.3, 0.45, 0.0, 360.0)],
        '1' => vec![poly(&[(0.3, 0.25), (0.5, 0.05), (0.5, 0.95)]), poly(&[(0.3, 0.95), (0.7, 0.95)])],
        '2' => vec![join(arc(0.5, 0.3, 0.3, 0.25, 180.0, 390.0), poly(&[(0.15, 0.95), (0.85, 0.95)]))],
        '3' => vec![arc(0.5, 0.28, 0.3, 0.23, 200.0, 450.0), arc(0.5, 0.72, 0.33, 0.23, 270.0, 520.0)],
        '4' => vec![poly(&[(0.65, 0.95), (0.65, 0.05), (0.15, 0.65), (0.85, 0.65)])],
        '5' => vec![join(poly(&[(0.8, 0.05), (0.3, 0.05)]), arc(0.5, 0.68, 0.3, 0.27, 220.0, 500.0))],
        '6' => vec![poly(&[(0.75, 0.08), (0.4, 0.3), (0.22, 0.7)]), arc(0.5, 0.7, 0.28, 0.25, 0.0, 360.0)],
        '7' => vec![poly(&[(0.2, 0.05), (0.8, 0.05), (0.4, 0.95)])],
        '8' => vec![arc(0.5, 0.27, 0.25, 0.22, 0.0, 360.0), arc(0.5, 0.72, 0.3, 0.23, 0.0, 360.0)],
        '9' => vec![arc(0.5, 0.3, 0.28, 0.25, 0.0, 360.0), poly(&[(0.78, 0.3), (0.7, 0.95)])],
        'A' => vec![poly(&[(0.1, 0.95), (0.5, 0.05), (0.9, 0.95)]), poly(&[(0.3, 0.6), (0.7, 0.6)])],
        'C' => vec![arc(0.55, 0.5, 0.38, 0.45, 40.0, 320.0)],
        'E' => vec![poly(&[(0.8, 0.05), (0.2, 0.05), (0.2, 0.95), (0.8, 0.95)]), poly(&[(0.2, 0.5), (0.7, 0.5)])],
        'F' => vec![poly(&[(0.8, 0.05), (0.2, 0.05), (0.2, 0.95)]), poly(&[(0.2, 0.5), (0.7, 0.5)])],
        'H' => vec![poly(&[(0.2, 0.05), (0.2, 0.95)]), poly(&[(0.8, 0.05), (0.8, 0.95)]), poly(&[(0.2, 0.5), (0.8, 0.5)])],
        'K' => vec![poly(&[(0.2, 0.05), (0.2, 0.95)]), poly(&[(0.8, 0.05), (0.2, 0.55)]), poly(&[(0.4, 0.4), (0.85, 0.95)])],
        'L' => vec![poly(&[(0.25, 0.05), (0.25, 0.95), (0.8, 0.95)])],
        'M' => vec![poly(&[(0.1, 0.95), (0.15, 0.05), (0.5, 0.6), (0.85, 0.05), (0.9, 0.95)])],
        'N' => vec![poly(&[(0.2, 0.95), (0.2, 0.05), (0.8, 0.95), (0.8, 0.05)])],
        'P' => vec![
            poly(&[(0.2, 0.95), (0.2, 0.05)]),
            join(join(poly(&[(0.2, 0.05), (0.55, 0.05)]), arc(0.55, 0.275, 0.27, 0.225, -90.0, 90.0)), poly(&[(0.2, 0.5)])),
        ],
        'R' => vec![
            poly(&[(0.2, 0.95), (0.2, 0.05)]),
            join(join(poly(&[(0.2, 0.05), (0.55, 0.05)]), arc(0.55, 0.275, 0.27, 0.225, -90.0, 90.0)), poly(&[(0.2, 0.5)])),
            poly(&[(0.45, 0.5), (0.85, 0.95)]),
        ],
        'T' => vec![poly(&[(0.1, 0.05), (0.9, 0.05)]), poly(&[(0.5, 0.05), (0.5, 0.95)])],
        'U' => vec![join(join(poly(&[(0.2, 0.05)]), arc(0.5, 0.6, 0.3, 0.35, 180.0, 0.0)), poly(&[(0.8, 0.05)]))],
        'V' => vec![poly(&[(0.1, 0.05), (0.5, 0.95), (0.9, 0.05)])],
        'W' => vec![poly(&[(0.05, 0.05), (0.25, 0.95), (0.5, 0.4), (0.75, 0.95), (0.95, 0.05)])],
        'X' => vec![poly(&[(0.15, 0.05), (0.85, 0.95)]), poly(&[(0.85, 0.05), (0.15, 0.95)])],
        'Y' => vec![poly(&[(0.15, 0.05), (0.5, 0.5), (0.85, 0.05)]), poly(&[(0.5, 0.5), (0.5, 0.95)])],
        'Z' => vec![poly(&[(0.15, 0.05), (0.85, 0.05), (0.15, 0.95), (0.85, 0.95)])],
        'ア' => vec![poly(&[(0.15, 0.15), (0.85, 0.15), (0.6, 0.45)]), poly(&[(0.5, 0.3), (0.45, 0.7), (0.2, 0.95)])],
        'イ' => vec![poly(&[(0.8, 0.05), (0.15, 0.55)]), poly(&[(0.55, 0.3), (0.55, 0.95)])],
        'ウ' => vec![poly(&[(0.5, 0.0), (0.5, 0.2)]), poly(&[(0.15, 0.45), (0.15, 0.25), (0.85, 0.25), (0.8, 0.6), (0.4, 0.95)])],
        'エ' => vec![poly(&[(0.2, 0.15), (0.8, 0.15)]), poly(&[(0.5, 0.15), (0.5, 0.85)]), poly(&[(0.1, 0.85), (0.9, 0.85)])],
        'オ' => vec![poly(&[(0.1, 0.35), (0.9, 0.35)]), poly(&[(0.6, 0.05), (0.6, 0.95), (0.5, 0.88)]), poly(&[(0.55, 0.4), (0.15, 0.8)])],
        'カ' => vec![poly(&[(0.2, 0.3), (0.85, 0.3), (0.75, 0.95), (0.65, 0.88)]), poly(&[(0.5, 0.05), (0.45, 0.5), (0.2, 0.95)])],
        'キ' => vec![poly(&[(0.15, 0.3), (0.85, 0.25)]), poly(&[(0.1, 0.6), (0.9, 0.55)]), poly(&[(0.45, 0.05), (0.6, 0.95)])],
        'ク' => vec![poly(&[(0.45, 0.05), (0.15, 0.45)]), poly(&[(0.35, 0.2), (0.85, 0.2), (0.6, 0.65), (0.25, 0.95)])],
        'コ' => vec![poly(&[(0.15, 0.15), (0.85, 0.15), (0.85, 0.85), (0.15, 0.85)])],
        'サ' => vec![poly(&[(0.05, 0.35), (0.95, 0.35)]), poly(&[(0.3, 0.1), (0.3, 0.6)]), poly(&[(0.7, 0.1), (0.7, 0.6), (0.4, 0.95)])],
        'シ' => vec![poly(&[(0.15, 0.15), (0.3, 0.25)]), poly(&[(0.1, 0.45), (0.25, 0.55)]), poly(&[(0.15, 0.95), (0.55, 0.7), (0.85, 0.2)])],
        'ス' => vec![poly(&[(0.2, 0.15), (0.8, 0.15), (0.15, 0.95)]), poly(&[(0.5, 0.55), (0.9, 0.95)])],
        _ => return None,
    };
    Some(s)
}

/// The 40 built-in symbols: digits, a Latin subset and kana-like compositions.
pub const DEFAULT_SYMBOLS: &str = "0123456789ACEFHKLMNPRTUVWXYZアイウエオカキクコサシス";

/// Ordered alphabet with one stroke program per label.
#[derive(Clone, Debug)]
pub struct GlyphAtlas {
    labels: Vec<char>,
    strokes: Vec<Vec<Stroke>>,
    /// Per-stroke jitter amplitude in unit-box coordinates.
    pub jitter: f64,
    /// Stroke width range in pixels.
    pub stroke_width: (f64, f64),
}

impl Default for GlyphAtlas {
    fn default() -> Self {
        Self::from_symbols(DEFAULT_SYMBOLS).expect("built-in symbols")
    }
}

impl GlyphAtlas {
    /// Builds an atlas over the given symbols; each must have a built-in
    /// stroke program and appear once.
    pub fn from_symbols(symbols: &str) -> Result<Self, SynthError> {
        let mut labels = Vec::new();
        let mut strokes = Vec::new();
        for c in symbols.chars() {
            if labels.contains(&c) {
                return Err(SynthError::Spec(format!("duplicate glyph label {c:?}")));
            }
            let program = builtin_strokes(c).ok_or(SynthError::UnknownLabel(c.to_string()))?;
            labels.push(c);
            strokes.push(program);
        }
        if labels.is_empty() {
            return Err(SynthError::Spec("empty alphabet".into()));
        }
        Ok(Self { labels, strokes, jitter: 0.035, stroke_width: (2.4, 3.8) })
    }

    pub fn labels(&self) -> &[char] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: char) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn alphabet_string(&self) -> String {
        self.labels.iter().collect()
    }

    pub fn render(&self, label: char, seed: u64) -> Result<GrayImage, SynthError> {
        let idx = self.index_of(label).ok_or(SynthError::UnknownLabel(label.to_string()))?;
        Ok(self.render_index(idx, seed))
    }

    pub fn render_index(&self, idx: usize, seed: u64) -> GrayImage {
        let mut rng = Rng64::new(derive_seed(seed, "glyph"));
        let width = rng.uniform(self.stroke_width.0, self.stroke_width.1);
        let sx = rng.uniform(0.88, 1.08);
        let sy = rng.uniform(0.88, 1.08);
        let rot = rng.uniform(-0.06, 0.06);
        let (tx, ty) = (rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04));
        let warp_amp = rng.uniform(0.0, 0.025);
        let warp_phase = rng.uniform(0.0, 2.0 * PI);
        let (cr, sr) = (rot.cos(), rot.sin());

        let mut strokes = Vec::with_capacity(self.strokes[idx].len());
        for stroke in &self.strokes[idx] {
            let (ox, oy) = (rng.uniform(-self.jitter, self.jitter), rng.uniform(-self.jitter, self.jitter));
            let pts: Vec<Pt> = stroke
                .iter()
                .map(|&(u, v)| {
                    let (u, v) = (u + ox + warp_amp * (2.0 * PI * v + warp_phase).sin(), v + oy);
                    let (du, dv) = ((u - 0.5) * sx, (v - 0.5) * sy);
                    let (ru, rv) = (du * cr - dv * sr + 0.5 + tx, du * sr + dv * cr + 0.5 + ty);
                    (BOX_ORIGIN + BOX_SIZE * ru, BOX_ORIGIN + BOX_SIZE * rv)
                })
                .collect();
            strokes.push(pts);
        }
        rasterize(&strokes, width)
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn rasterize(strokes: &[Vec<Pt>], width: f64) -> GrayImage {
    let mut coverage = vec![0f64; GLYPH_SIZE * GLYPH_SIZE];
    let half = width / 2.0;
    for stroke in strokes {
        let segments: Vec<(Pt, Pt)> = if stroke.len() == 1 {
            vec![(stroke[0], stroke[0])]
        } else {
            stroke.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in segments {
            let x0 = (a.0.min(b.0) - half - 1.0).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + half + 1.0).ceil() as usize).min(GLYPH_SIZE - 1);
            let y0 = (a.1.min(b.1) - half - 1.0).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + half + 1.0).ceil() as usize).min(GLYPH_SIZE - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                    let c = (half + 0.5 - d).clamp(0.0, 1.0);
                    let slot = &mut coverage[y * GLYPH_SIZE + x];
                    if c > *slot {
                        *slot = c;
                    }
                }
            }
        }
    }
    let data = coverage.iter().map(|c| (255.0 * (1.0 - c)).round() as u8).collect();
    GrayImage::new(GLYPH_SIZE, GLYPH_SIZE, data).expect("glyph canvas")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_atlas_has_forty_unique_labels() {
        let atlas = GlyphAtlas::default();
        assert_eq!(atlas.len(), 40);
    }

    #[test]
    fn render_is_deterministic() {
        let atlas = GlyphAtlas::default();
        assert_eq!(atlas.render('0', 7).unwrap(), atlas.render('0', 7).unwrap());
    }

    #[test]
    fn seeds_vary_the_glyph() {
        let atlas = GlyphAtlas::default();
        for &c in atlas.labels() {
            assert_ne!(atlas.render(c, 1).unwrap(), atlas.render(c, 2).unwrap(), "{c}");
        }
    }

    #[test]
    fn unknown_label_rejected() {
        let atlas = GlyphAtlas::default();
        assert!(matches!(atlas.render('#', 0), Err(SynthError::UnknownLabel(_))));
        assert!(matches!(GlyphAtlas::from_symbols("01#"), Err(SynthError::UnknownLabel(_))));
    }

    #[test]
    fn glyphs_have_ink_inside_the_canvas() {
        let atlas = GlyphAtlas::default();
        for (i, _) in atlas.labels().iter().enumerate() {
            let img = atlas.render_index(i, 3);
            let frac = img.ink_fraction(128);
            assert!(frac > 0.02 && frac < 0.4, "label {i}: {frac}");
            // outer 3px ring stays white
            for y in 0..GLYPH_SIZE {
                for x in 0..GLYPH_SIZE {
                    if x < 3 || y < 3 || x >= 61 || y >= 61 {
                        assert_eq!(img.get(x, y), 255);
                    }
                }
            }
        }
    }
}
