//! Region-of-interest refinement: find the practitioner, crop, resize to 224×224.
//!
//! Segmentation sits behind [`Segmenter`]. Annotations from an external
//! detector are ingested through sidecar files; otherwise a background-difference
//! heuristic is used.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

/// Side length of every refined image.
pub const REFINED_SIZE: usize = 224;

/// Planar RGB image with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    /// `[3, height, width]`, channel-major.
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Data(format!(
                "raster {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, width * height));
        }
        Raster { width, height, data }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (i, p) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = p.0[c] as f64;
            }
        }
        Raster { width: w, height: h, data }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Rounds and clamps to 8-bit.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let plane = self.width * self.height;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Rgb(std::array::from_fn(|c| self.data[c * plane + i].round().clamp(0.0, 255.0) as u8))
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * plane + i] = v;
        }
    }

    pub fn crop(&self, b: &BBox) -> Raster {
        let (w, h) = (b.width(), b.height());
        let mut data = Vec::with_capacity(3 * w * h);
        for plane in self.data.chunks_exact(self.width * self.height) {
            for y in b.y0..b.y1 {
                data.extend_from_slice(&plane[y * self.width + b.x0..y * self.width + b.x1]);
            }
        }
        Raster { width: w, height: h, data }
    }

    pub fn resize(&self, width: usize, height: usize) -> Raster {
        Raster {
            width,
            height,
            data: resize_bilinear(&self.data, 3, self.height, self.width, height, width),
        }
    }
}

/// Pixel box, inclusive-exclusive: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn full(width: usize, height: usize) -> Self {
        BBox { x0: 0, y0: 0, x1: width, y1: height }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let iy = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        let inter = (ix * iy) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiSource {
    External,
    Heuristic,
    None,
}

impl RoiSource {
    pub fn as_str(self) -> &'static str {
        match self {
            RoiSource::External => "external",
            RoiSource::Heuristic => "heuristic",
            RoiSource::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiAnnotation {
    pub bbox: BBox,
    pub mask: Option<Mask>,
    pub confidence: f64,
    pub source: RoiSource,
}

impl RoiAnnotation {
    /// No person found; the box spans the whole frame.
    pub fn none(width: usize, height: usize) -> Self {
        RoiAnnotation { bbox: BBox::full(width, height), mask: None, confidence: 0.0, source: RoiSource::None }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let b = &self.bbox;
        if !(b.x0 < b.x1 && b.x1 <= width && b.y0 < b.y1 && b.y1 <= height) {
            return Err(Error::Data(format!("bbox {b:?} is empty or outside a {width}x{height} image")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Data(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if let Some(m) = &self.mask {
            if (m.width, m.height) != (width, height) {
                return Err(Error::Data(format!("mask is {}x{}, image is {width}x{height}", m.width, m.height)));
            }
        }
        Ok(())
    }
}

pub trait Segmenter {
    fn segment(&self, image: &Raster) -> RoiAnnotation;
}

/// Background-difference segmentation for images with a roughly uniform backdrop.
///
/// The background color is the per-channel median of the border pixels. Pixels
/// whose RGB distance from it exceeds an Otsu threshold are foreground; the
/// largest 4-connected foreground component is the person.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicSegmenter {
    /// Components smaller than this fraction of the frame count as no person.
    pub min_area_fraction: f64,
    /// Total growth of each box side; half is added on either end.
    pub margin_fraction: f64,
}

impl Default for HeuristicSegmenter {
    fn default() -> Self {
        HeuristicSegmenter { min_area_fraction: 0.01, margin_fraction: 0.05 }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Otsu threshold over a 256-bin histogram of `values` in `[0, max]`.
/// Returns the threshold and the separability `between / total variance`.
fn otsu(values: &[f64], max: f64) -> (f64, f64) {
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    let bin = |v: f64| ((v / max * (BINS - 1) as f64).round() as usize).min(BINS - 1);
    for &v in values {
        hist[bin(v)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mean_all = sum_all / total;
    let var_total: f64 = hist.iter().enumerate().map(|(i, &c)| c as f64 * (i as f64 - mean_all).powi(2)).sum::<f64>() / total;
    let (mut best_t, mut best_var) = (0, -1.0);
    let (mut w0, mut sum0) = (0.0, 0.0);
    for (t, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2) / (total * total);
        if between > best_var {
            best_var = between;
            best_t = t;
        }
    }
    let separability = if var_total > 0.0 { (best_var / var_total).clamp(0.0, 1.0) } else { 0.0 };
    // Foreground is strictly above the upper edge of the threshold bin.
    ((best_t as f64 + 0.5) / (BINS - 1) as f64 * max, separability)
}

/// Largest 4-connected component of `fg`; ties keep the first found in raster order.
fn largest_component(fg: &[bool], width: usize, height: usize) -> Vec<usize> {
    let mut seen = vec![false; fg.len()];
    let mut best = Vec::new();
    let mut stack = Vec::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

impl Segmenter for HeuristicSegmenter {
    fn segment(&self, image: &Raster) -> RoiAnnotation {
        let (w, h) = (image.width, image.height);
        let border: Vec<(usize, usize)> = (0..w)
            .flat_map(|x| [(x, 0), (x, h - 1)])
            .chain((1..h.saturating_sub(1)).flat_map(|y| [(0, y), (w - 1, y)]))
            .collect();
        let bg: [f64; 3] = std::array::from_fn(|c| {
            let mut vals: Vec<f64> = border.iter().map(|&(x, y)| image.pixel(x, y)[c]).collect();
            median(&mut vals)
        });
        let dist: Vec<f64> = (0..w * h)
            .map(|i| {
                let p = image.pixel(i % w, i / w);
                p.iter().zip(&bg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let max = dist.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return RoiAnnotation::none(w, h);
        }
        let (threshold, separability) = otsu(&dist, max);
        let fg: Vec<bool> = dist.iter().map(|&d| d > threshold).collect();
        let comp = largest_component(&fg, w, h);
        if (comp.len() as f64) < self.min_area_fraction * (w * h) as f64 {
            return RoiAnnotation::none(w, h);
        }
        let mut mask = vec![false; w * h];
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        for &i in &comp {
            mask[i] = true;
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        let pad_x = (self.margin_fraction / 2.0 * (x1 - x0) as f64).floor() as usize;
        let pad_y = (self.margin_fraction / 2.0 * (y1 - y0) as f64).floor() as usize;
        RoiAnnotation {
            bbox: BBox {
                x0: x0.saturating_sub(pad_x),
                y0: y0.saturating_sub(pad_y),
                x1: (x1 + pad_x).min(w),
                y1: (y1 + pad_y).min(h),
            },
            mask: Some(Mask { width: w, height: h, data: mask }),
            confidence: separability,
            source: RoiSource::Heuristic,
        }
    }
}

/// Sidecar annotation path for an image: `<stem>.roi.txt` beside it.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("roi.txt")
}

/// Optional sidecar mask path: `<stem>.mask.pgm` beside the image.
pub fn sidecar_mask_path(image: &Path) -> PathBuf {
    image.with_extension("mask.pgm")
}

/// Reads `x0 y0 x1 y1 confidence` (and the optional PGM mask) for `image_path`.
/// Returns `None` when no sidecar exists.
pub fn read_sidecar(image_path: &Path, width: usize, height: usize) -> Result<Option<RoiAnnotation>> {
    let path = sidecar_path(image_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    let bad = |msg: String| Error::Manifest { path: path.clone(), row: 1, msg };
    if fields.len() != 5 {
        return Err(bad(format!("expected `x0 y0 x1 y1 confidence`, got {} fields", fields.len())));
    }
    let coord = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad coordinate {s:?}")));
    let bbox = BBox { x0: coord(fields[0])?, y0: coord(fields[1])?, x1: coord(fields[2])?, y1: coord(fields[3])? };
    let confidence = fields[4].parse::<f64>().map_err(|_| bad(format!("bad confidence {:?}", fields[4])))?;
    let mask_path = sidecar_mask_path(image_path);
    let mask = if mask_path.exists() {
        let img = image::open(&mask_path).map_err(|source| Error::Image { path: mask_path.clone(), source })?.to_luma8();
        Some(Mask {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] > 0).collect(),
        })
    } else {
        None
    };
    let ann = RoiAnnotation { bbox, mask, confidence, source: RoiSource::External };
    ann.validate(width, height).map_err(|e| bad(e.to_string()))?;
    Ok(Some(ann))
}

/// Writes a sidecar annotation (and its mask, when present) for `image_path`.
pub fn write_sidecar(image_path: &Path, ann: &RoiAnnotation) -> Result<()> {
    let b = ann.bbox;
    let path = sidecar_path(image_path);
    fs::write(&path, format!("{} {} {} {} {}\n", b.x0, b.y0, b.x1, b.y1, ann.confidence)).map_err(|e| Error::io(&path, e))?;
    if let Some(m) = &ann.mask {
        let img = image::GrayImage::from_fn(m.width as u32, m.height as u32, |x, y| {
            image::Luma([if m.data[y as usize * m.width + x as usize] { 255 } else { 0 }])
        });
        let mp = sidecar_mask_path(image_path);
        img.save(&mp).map_err(|source| Error::Image { path: mp, source })?;
    }
    Ok(())
}

/// External annotation when a sidecar exists, otherwise the given segmenter.
pub fn segment_person(image: &Raster, image_path: Option<&Path>, fallback: &dyn Segmenter) -> Result<RoiAnnotation> {
    if let Some(p) = image_path {
        if let Some(ann) = read_sidecar(p, image.width, image.height)? {
            return Ok(ann);
        }
    }
    Ok(fallback.segment(image))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Cropped,
    BypassSynthetic,
    FallbackFull,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Cropped => "cropped",
            Provenance::BypassSynthetic => "bypass_synthetic",
            Provenance::FallbackFull => "fallback_full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedImage {
    /// `[3, 224, 224]` with intensities in `[0, 255]`.
    pub pixels: Tensor,
    pub provenance: Provenance,
}

impl RefinedImage {
    pub fn to_raster(&self) -> Raster {
        Raster { width: REFINED_SIZE, height: REFINED_SIZE, data: self.pixels.data().to_vec() }
    }
}

/// Crops to the annotated box and resizes to 224×224 without preserving aspect.
/// Synthetic images and images without a person are resized whole.
pub fn refine_image(image: &Raster, annotation: &RoiAnnotation, synthetic: bool) -> Result<RefinedImage> {
    let (source, provenance) = if synthetic {
        (image.clone(), Provenance::BypassSynthetic)
    } else if annotation.source == RoiSource::None {
        (image.clone(), Provenance::FallbackFull)
    } else {
        annotation.validate(image.width, image.height)?;
        (image.crop(&annotation.bbox), Provenance::Cropped)
    };
    let out = source.resize(REFINED_SIZE, REFINED_SIZE);
    Ok(RefinedImage { pixels: Tensor::new(vec![3, REFINED_SIZE, REFINED_SIZE], out.data)?, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: usize, h: usize, b: BBox) -> Raster {
        let mut img = Raster::filled(w, h, [128.0, 128.0, 128.0]);
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                img.set_pixel(x, y, [200.0, 40.0, 60.0]);
            }
        }
        img
    }

    #[test]
    fn rectangle_found_with_high_iou() {
        let truth = BBox { x0: 100, y0: 60, x1: 180, y1: 180 };
        let ann = HeuristicSegmenter::default().segment(&blob(320, 240, truth));
        assert_eq!(ann.source, RoiSource::Heuristic);
        ann.validate(320, 240).unwrap();
        // 80x120 box grows by 2 px horizontally and 3 px vertically on each side.
        assert_eq!(ann.bbox, BBox { x0: 98, y0: 57, x1: 182, y1: 183 });
        assert!(ann.bbox.iou(&truth) >= 0.9);
    }

    #[test]
    fn uniform_image_has_no_person() {
        let ann = HeuristicSegmenter::default().segment(&Raster::filled(50, 40, [10.0, 20.0, 30.0]));
        assert_eq!(ann.source, RoiSource::None);
    }

    #[test]
    fn tiny_component_is_rejected() {
        let ann = HeuristicSegmenter::default().segment(&blob(100, 100, BBox { x0: 10, y0: 10, x1: 19, y1: 19 }));
        assert_eq!(ann.source, RoiSource::None);
    }

    #[test]
    fn largest_of_two_blobs_is_kept() {
        let mut img = blob(200, 200, BBox { x0: 10, y0: 10, x1: 50, y1: 50 });
        for y in 100..190 {
            for x in 100..160 {
                img.set_pixel(x, y, [20.0, 200.0, 30.0]);
            }
        }
        let ann = HeuristicSegmenter::default().segment(&img);
        assert!(ann.bbox.iou(&BBox { x0: 100, y0: 100, x1: 160, y1: 190 }) > 0.85, "{:?}", ann.bbox);
    }

    #[test]
    fn synthetic_bypasses_and_full_box_equals_bypass() {
        let img = blob(64, 48, BBox { x0: 10, y0: 10, x1: 30, y1: 40 });
        let ann = HeuristicSegmenter::default().segment(&img);
        let bypass = refine_image(&img, &ann, true).unwrap();
        assert_eq!(bypass.provenance, Provenance::BypassSynthetic);
        assert_eq!(bypass.pixels.shape(), &[3, 224, 224]);
        let full = RoiAnnotation { bbox: BBox::full(64, 48), mask: None, confidence: 1.0, source: RoiSource::External };
        let cropped = refine_image(&img, &full, false).unwrap();
        assert_eq!(cropped.provenance, Provenance::Cropped);
        assert_eq!(cropped.pixels, bypass.pixels);
        let none = refine_image(&img, &RoiAnnotation::none(64, 48), false).unwrap();
        assert_eq!(none.provenance, Provenance::FallbackFull);
        assert_eq!(none.pixels, bypass.pixels);
    }

    #[test]
    fn invalid_annotations_rejected() {
        let img = Raster::filled(10, 10, [0.0; 3]);
        let bad = RoiAnnotation { bbox: BBox { x0: 5, y0: 5, x1: 5, y1: 8 }, mask: None, confidence: 0.5, source: RoiSource::External };
        assert!(refine_image(&img, &bad, false).is_err());
        let out = RoiAnnotation { bbox: BBox { x0: 0, y0: 0, x1: 11, y1: 8 }, ..bad.clone() };
        assert!(out.validate(10, 10).is_err());
    }

    #[test]
    fn sidecar_round_trip_is_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("pose.png");
        let img = blob(40, 30, BBox { x0: 5, y0: 5, x1: 20, y1: 25 });
        let mut ann = HeuristicSegmenter::default().segment(&img);
        ann.source = RoiSource::External;
        ann.confidence = 0.75;
        write_sidecar(&img_path, &ann).unwrap();
        let got = segment_person(&img, Some(&img_path), &HeuristicSegmenter::default()).unwrap();
        assert_eq!(got, ann);
        fs::write(sidecar_path(&img_path), "1 2 3\n").unwrap();
        assert!(read_sidecar(&img_path, 40, 30).is_err());
    }

    #[test]
    fn rgb8_round_trip() {
        let img = blob(7, 5, BBox { x0: 1, y0: 1, x1: 4, y1: 3 });
        assert_eq!(Raster::from_rgb8(&img.to_rgb8()), img);
    }
}
