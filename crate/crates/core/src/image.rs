//! Raster types, binarization and PGM/PNG I/O.
//!
//! Intensities follow the scanned-paper convention: 0 is black ink, 255 is
//! white paper.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("box {bbox:?} exceeds {width}x{height} image")]
    OutOfBounds { bbox: BoundingBox, width: usize, height: usize },
    #[error("invalid dimensions {0}x{1}")]
    InvalidDimensions(usize, usize),
}

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImageError::InvalidDimensions(width, height));
        }
        Ok(Self { width, height, data })
    }

    /// A white (blank paper) image.
    pub fn blank(width: usize, height: usize) -> Self {
        Self::filled(width, height, 255)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox { x: 0, y: 0, w: self.width, h: self.height }
    }

    /// Copies `src` into `self` with its top-left corner at `(x, y)`. Pixels
    /// falling outside `self` are clipped.
    pub fn blit(&mut self, src: &GrayImage, x: usize, y: usize) {
        for sy in 0..src.height {
            let dy = y + sy;
            if dy >= self.height {
                break;
            }
            let n = src.width.min(self.width.saturating_sub(x));
            let d0 = dy * self.width + x;
            self.data[d0..d0 + n].copy_from_slice(&src.row(sy)[..n]);
        }
    }

    /// Fraction of pixels darker than `threshold`.
    pub fn ink_fraction(&self, threshold: u8) -> f64 {
        let ink = self.data.iter().filter(|&&v| v < threshold).count();
        ink as f64 / self.data.len() as f64
    }

    pub fn crop(&self, bbox: BoundingBox) -> Result<GrayImage, ImageError> {
        if !bbox.fits(self.width, self.height) {
            return Err(ImageError::OutOfBounds { bbox, width: self.width, height: self.height });
        }
        let mut data = Vec::with_capacity(bbox.w * bbox.h);
        for y in bbox.y..bbox.y + bbox.h {
            let start = y * self.width + bbox.x;
            data.extend_from_slice(&self.data[start..start + bbox.w]);
        }
        Ok(GrayImage { width: bbox.w, height: bbox.h, data })
    }
}

/// Axis-aligned box; `(x, y)` is the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    /// Shifts a box expressed in a child's coordinates into the parent frame.
    pub fn offset(&self, dx: usize, dy: usize) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn intersection(&self, other: &BoundingBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Ink mask: `true` = ink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size");
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.bits[y * self.width..(y + 1) * self.width]
    }

    pub fn crop(&self, bbox: BoundingBox) -> BinaryImage {
        assert!(bbox.fits(self.width, self.height), "crop out of bounds");
        let mut bits = Vec::with_capacity(bbox.area());
        for y in bbox.y..bbox.bottom() {
            bits.extend_from_slice(&self.row(y)[bbox.x..bbox.right()]);
        }
        BinaryImage { width: bbox.w, height: bbox.h, bits }
    }

    /// Renders the mask as a {0, 255} grayscale image.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.bits.iter().map(|&b| if b { 0 } else { 255 }).collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "threshold")]
#[derive(Default)]
pub enum Threshold {
    Fixed(u8),
    #[default]
    Otsu,
}


/// Pixel is ink iff its intensity is strictly below the threshold.
pub fn binarize(img: &GrayImage, method: Threshold) -> BinaryImage {
    let t = match method {
        Threshold::Fixed(t) => t,
        Threshold::Otsu => otsu_threshold(img).unwrap_or(128),
    };
    let bits = img.data.iter().map(|&v| v < t).collect();
    BinaryImage { width: img.width, height: img.height, bits }
}

/// Otsu's threshold `t` (ink iff `v < t`), maximizing between-class variance
/// over `t` in `1..=255`. Ties go to the smallest `t`. Returns `None` for a
/// uniform image.
pub fn otsu_threshold(img: &GrayImage) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &v in &img.data {
        hist[v as usize] += 1;
    }
    let total = img.data.len() as u64;
    let sum_all: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    // Between-class variance is proportional to (w1*s0 - w0*s1)^2 / (w0*w1);
    // candidates are compared as exact fractions so ties are detected exactly.
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut w0, mut s0) = (0u64, 0u64);
    for t in 1..=255usize {
        w0 += hist[t - 1];
        s0 += (t as u64 - 1) * hist[t - 1];
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        let diff = (w1 as i128 * s0 as i128 - w0 as i128 * s1 as i128).unsigned_abs();
        let num = diff * diff;
        let den = w0 as u128 * w1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => fraction_greater(num, den, bn, bd),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|(t, _, _)| t)
}

/// `a/b > c/d` for non-negative fractions, exact when the cross products fit
/// in 128 bits.
fn fraction_greater(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(l), Some(r)) => l > r,
        _ => (a as f64 / b as f64) > (c as f64 / d as f64),
    }
}

/// Loads a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(ImageError::Format(format!("{}: not a PGM (P5) or PNG file", path.display())))
    }
}

/// Writes PNG when the extension is `.png`, otherwise PGM P5.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let io_err = |source| ImageError::Io { path: path.display().to_string(), source };
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
            .ok_or_else(|| ImageError::Format("raster size mismatch".into()))?;
        let mut file = fs::File::create(path).map_err(io_err)?;
        buf.write_to(&mut std::io::BufWriter::new(&mut file), image::ImageFormat::Png)
            .map_err(|e| ImageError::Format(e.to_string()))?;
        Ok(())
    } else {
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&encode_pgm(img)).map_err(io_err)
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Format("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Format("malformed PGM header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::Format("truncated PGM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::Format("PGM dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| ImageError::Format("truncated PGM raster".into()))?;
    GrayImage::new(width, height, raster.to_vec()).map_err(|_| ImageError::Format("empty PGM raster".into()))
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            GrayImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(ImageError::Format(format!("PNG is not 8-bit grayscale ({:?})", other.color()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GrayImage {
        GrayImage::new(3, 2, vec![0, 128, 255, 10, 20, 30]).unwrap()
    }

    #[test]
    fn pgm_roundtrip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, b"P5\n3 2\n255\n\x00\x80\xff\x0a\x14\x1e").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img, sample());
        let q = dir.path().join("b.pgm");
        save_image(&img, &q).unwrap();
        assert_eq!(load_image(&q).unwrap(), img);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        save_image(&sample(), &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), sample());
    }

    #[test]
    fn color_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(ImageError::Format(_))));
    }

    #[test]
    fn truncated_header_is_format_error() {
        assert!(matches!(decode_pgm(b"P5\n3 "), Err(ImageError::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n3 2\n255\n\x00"), Err(ImageError::Format(_))));
    }

    #[test]
    fn pgm_comments_skipped() {
        let img = decode_pgm(b"P5 # made by hand\n1 1\n255\n\x07").unwrap();
        assert_eq!(img.data(), &[7]);
    }

    #[test]
    fn save_single_black_and_white() {
        let dir = tempfile::tempdir().unwrap();
        for (i, img) in [GrayImage::new(1, 1, vec![0]).unwrap(), GrayImage::blank(2, 2)].iter().enumerate() {
            let p = dir.path().join(format!("{i}.pgm"));
            save_image(img, &p).unwrap();
            assert_eq!(&load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn unwritable_path() {
        let img = GrayImage::blank(1, 1);
        let err = save_image(&img, "/nonexistent-dir/x.pgm").unwrap_err();
        assert!(matches!(err, ImageError::Io { .. }));
        assert!(matches!(load_image("/nonexistent-dir/x.pgm"), Err(ImageError::Io { .. })));
    }

    #[test]
    fn fixed_threshold() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        assert_eq!(binarize(&img, Threshold::Fixed(128)).bits(), &[true, false]);
    }

    #[test]
    fn otsu_uniform_falls_back() {
        let img = GrayImage::blank(5, 5);
        assert_eq!(otsu_threshold(&img), None);
        assert_eq!(binarize(&img, Threshold::Otsu).count(), 0);
    }

    /// Exhaustive sweep oracle written directly from the variance definition,
    /// in exact rational arithmetic.
    fn otsu_oracle(img: &GrayImage) -> Option<u8> {
        let mut best: Option<(u8, i128, i128)> = None;
        for t in 1..=255u32 {
            let lo: Vec<i128> = img.data().iter().filter(|&&v| (v as u32) < t).map(|&v| v as i128).collect();
            let hi: Vec<i128> = img.data().iter().filter(|&&v| (v as u32) >= t).map(|&v| v as i128).collect();
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let (n0, n1) = (lo.len() as i128, hi.len() as i128);
            // n0*n1*(m0-m1)^2 = (n1*S0 - n0*S1)^2 / (n0*n1)
            let d = n1 * lo.iter().sum::<i128>() - n0 * hi.iter().sum::<i128>();
            let (num, den) = (d * d, n0 * n1);
            if best.is_none_or(|(_, bn, bd)| num * bd > bn * den) {
                best = Some((t as u8, num, den));
            }
        }
        best.map(|(t, _, _)| t)
    }

    #[test]
    fn otsu_bimodal_matches_sweep() {
        let mut rng = crate::rng::Rng64::new(11);
        let data: Vec<u8> = (0..400)
            .map(|i| {
                let base = if i % 3 == 0 { 20.0 } else { 230.0 };
                (base + rng.uniform(-8.0, 8.0)).round() as u8
            })
            .collect();
        let img = GrayImage::new(20, 20, data).unwrap();
        let t = otsu_threshold(&img).unwrap();
        assert_eq!(Some(t), otsu_oracle(&img));
        assert!(t > 20 && t < 230);
        let mask = binarize(&img, Threshold::Otsu);
        for (v, b) in img.data().iter().zip(mask.bits()) {
            assert_eq!(*b, *v < 128);
        }
    }

    #[test]
    fn crop_cases() {
        let img = sample();
        assert_eq!(img.crop(img.full_box()).unwrap(), img);
        assert_eq!(img.crop(BoundingBox::new(0, 0, 1, 1)).unwrap().data(), &[0]);
        assert!(matches!(img.crop(BoundingBox::new(1, 0, 3, 1)), Err(ImageError::OutOfBounds { .. })));
    }

    #[test]
    fn iou_basic() {
        let a = BoundingBox::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        let b = BoundingBox::new(5, 0, 10, 10);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn gray() -> impl Strategy<Value = GrayImage> {
            (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
                proptest::collection::vec(any::<u8>(), w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn pgm_encode_decode_identity(img in gray()) {
                prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
            }

            #[test]
            fn fixed_binarize_idempotent(img in gray(), t in 1u8..=255) {
                let once = binarize(&img, Threshold::Fixed(t));
                let twice = binarize(&once.to_gray(), Threshold::Fixed(t));
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn otsu_matches_oracle(img in gray()) {
                prop_assert_eq!(otsu_threshold(&img), otsu_oracle(&img));
            }

            #[test]
            fn crop_composes(img in gray(), a in any::<[u16; 4]>(), b in any::<[u16; 4]>()) {
                let (w, h) = (img.width(), img.height());
                let ax = a[0] as usize % w;
                let ay = a[1] as usize % h;
                let aw = 1 + a[2] as usize % (w - ax);
                let ah = 1 + a[3] as usize % (h - ay);
                let outer = BoundingBox::new(ax, ay, aw, ah);
                let bx = b[0] as usize % aw;
                let by = b[1] as usize % ah;
                let bw = 1 + b[2] as usize % (aw - bx);
                let bh = 1 + b[3] as usize % (ah - by);
                let inner = BoundingBox::new(bx, by, bw, bh);
                let nested = img.crop(outer).unwrap().crop(inner).unwrap();
                prop_assert_eq!(nested, img.crop(inner.offset(ax, ay)).unwrap());
            }
        }
    }
}
