//! Generated stand-in corpus: one colored blob per image on a solid background,
//! labelled with a 2/4/8 class hierarchy.
//!
//! The fine class fixes the blob's color and shape, so a small network can
//! memorize it. Blob placement and background vary per image.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{write_manifest, LabelHierarchy, Record};
use crate::error::{Error, Result};
use crate::roi::{BBox, Raster};

/// Blob color per fine class.
const PALETTE: [[f64; 3]; 8] = [
    [220.0, 30.0, 30.0],
    [30.0, 200.0, 40.0],
    [40.0, 60.0, 230.0],
    [235.0, 215.0, 20.0],
    [210.0, 40.0, 220.0],
    [20.0, 210.0, 220.0],
    [250.0, 130.0, 10.0],
    [15.0, 15.0, 15.0],
];

#[derive(Debug, Clone, Copy)]
pub struct ToyCorpusOptions {
    pub images_per_class: usize,
    pub width: usize,
    pub height: usize,
    /// Every n-th image is flagged synthetic; 0 disables the flag.
    pub synthetic_every: usize,
    pub seed: u64,
}

impl Default for ToyCorpusOptions {
    fn default() -> Self {
        ToyCorpusOptions { images_per_class: 8, width: 96, height: 80, synthetic_every: 5, seed: 0 }
    }
}

/// Files of a generated corpus.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub manifest: PathBuf,
    pub hierarchy: PathBuf,
    /// `path,x0,y0,x1,y1` ground-truth blob boxes.
    pub boxes: PathBuf,
    pub records: Vec<Record>,
    pub truth: Vec<BBox>,
}

pub fn toy_hierarchy() -> LabelHierarchy {
    let mut h = LabelHierarchy::new((0..8).map(|f| f / 2).collect(), (0..4).map(|m| m / 2).collect())
        .expect("toy hierarchy is well formed");
    let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
    h.set_names(0, names("group", 2)).expect("two coarse names");
    h.set_names(1, names("family", 4)).expect("four mid names");
    h.set_names(2, names("pose", 8)).expect("eight fine names");
    h
}

/// Draws one image of fine class `class`. Returns the image and the blob's box.
pub fn draw_blob(class: usize, width: usize, height: usize, rng: &mut impl Rng) -> (Raster, BBox) {
    let gray = rng.random_range(90.0..170.0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-12.0..12.0));
    let mut img = Raster::filled(width, height, std::array::from_fn(|c| gray + tint[c]));
    // Tall blobs for even classes, wide ones for odd; between about 8% and 30% of the frame.
    let (fw, fh) = if class % 2 == 0 { (0.3, 0.6) } else { (0.6, 0.3) };
    let bw = ((fw * rng.random_range(0.7..1.0)) * width as f64) as usize;
    let bh = ((fh * rng.random_range(0.7..1.0)) * height as f64) as usize;
    let x0 = rng.random_range(1..width - bw);
    let y0 = rng.random_range(1..height - bh);
    let bbox = BBox { x0, y0, x1: x0 + bw, y1: y0 + bh };
    let ellipse = class % 4 >= 2;
    let (cx, cy) = (x0 as f64 + bw as f64 / 2.0, y0 as f64 + bh as f64 / 2.0);
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let inside = !ellipse || {
                let dx = (x as f64 + 0.5 - cx) / (bw as f64 / 2.0);
                let dy = (y as f64 + 0.5 - cy) / (bh as f64 / 2.0);
                dx * dx + dy * dy <= 1.0
            };
            if inside {
                img.set_pixel(x, y, PALETTE[class % PALETTE.len()]);
            }
        }
    }
    (img, bbox)
}

/// Writes `images_per_class` PNGs for each of `classes` plus the manifest,
/// hierarchy and truth-box CSVs into `dir`.
pub fn generate(dir: &Path, classes: &[usize], opts: &ToyCorpusOptions) -> Result<ToyCorpus> {
    if opts.width < 16 || opts.height < 16 {
        return Err(Error::Config("toy images must be at least 16x16".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= 8) {
        return Err(Error::Config(format!("toy corpus has 8 fine classes, got class {c}")));
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let h = toy_hierarchy();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut n = 0;
    for &class in classes {
        for i in 0..opts.images_per_class {
            let (img, bbox) = draw_blob(class, opts.width, opts.height, &mut rng);
            let path = images.join(format!("pose{class}_{i:03}.png"));
            img.to_rgb8().save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            n += 1;
            let synthetic = opts.synthetic_every > 0 && n % opts.synthetic_every == 0;
            records.push(Record { path, labels: h.labels_for(class), synthetic });
            truth.push(bbox);
        }
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records, dir)?;
    let hierarchy = dir.join("hierarchy.csv");
    h.save(&hierarchy)?;
    let boxes = dir.join("boxes.csv");
    let mut w = csv::Writer::from_path(&boxes).map_err(|source| Error::Csv { path: boxes.clone(), source })?;
    let wr = |w: &mut csv::Writer<fs::File>, row: [String; 5]| w.write_record(&row).map_err(|source| Error::Csv { path: boxes.clone(), source });
    wr(&mut w, ["path", "x0", "y0", "x1", "y1"].map(String::from))?;
    for (r, b) in records.iter().zip(&truth) {
        let p = r.path.strip_prefix(dir).unwrap_or(&r.path).to_string_lossy().into_owned();
        wr(&mut w, [p, b.x0.to_string(), b.y0.to_string(), b.x1.to_string(), b.y1.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&boxes, e))?;
    Ok(ToyCorpus { manifest, hierarchy, boxes, records, truth })
}
