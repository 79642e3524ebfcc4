//! Hierarchical labels, manifests, stratified splits and batching.
//!
//! Labels are carried coarse to fine: index 0 is the 6-class level, 2 the
//! 82-class level (or their toy-corpus counterparts).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::resample::resize_bilinear;
use crate::roi::{refine_image, segment_person, HeuristicSegmenter, Raster, RefinedImage, RoiAnnotation};
use crate::tensor::Tensor;

/// Number of hierarchy levels.
pub const LEVELS: usize = 3;

/// Per-channel standardization applied after scaling pixels to [0, 1].
pub const CHANNEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.into(), source }
}

/// Three-level class tree: fine → mid → coarse.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHierarchy {
    fine_to_mid: Vec<usize>,
    mid_to_coarse: Vec<usize>,
    /// Names per level, coarse to fine.
    names: [Vec<String>; LEVELS],
}

impl LabelHierarchy {
    /// Builds from `fine_to_mid` and `mid_to_coarse` maps, naming classes by id.
    pub fn new(fine_to_mid: Vec<usize>, mid_to_coarse: Vec<usize>) -> Result<Self> {
        let n_coarse = mid_to_coarse.iter().max().map_or(0, |m| m + 1);
        let names = [n_coarse, mid_to_coarse.len(), fine_to_mid.len()].map(|n| (0..n).map(|i| i.to_string()).collect());
        let h = LabelHierarchy { fine_to_mid, mid_to_coarse, names };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let [n1, n2, n3] = self.counts();
        if n3 == 0 {
            return Err(Error::Data("hierarchy has no classes".into()));
        }
        if let Some(&m) = self.fine_to_mid.iter().find(|&&m| m >= n2) {
            return Err(Error::Data(format!("fine class maps to unknown mid class {m}")));
        }
        for (level, map, n) in [("mid", &self.fine_to_mid, n2), ("coarse", &self.mid_to_coarse, n1)] {
            let used: HashSet<_> = map.iter().collect();
            if used.len() != n {
                return Err(Error::Data(format!("some {level} classes have no children")));
            }
        }
        if !(n3 >= n2 && n2 >= n1) {
            return Err(Error::Data(format!("level sizes {n1}/{n2}/{n3} must not shrink toward the fine level")));
        }
        Ok(())
    }

    /// Reads `class82,class20,class6` rows, with optional `name82,name20,name6`
    /// columns. Ids per level must be contiguous from 0.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
        let headers = rdr.headers().map_err(csv_err(path))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let ids = ["class6", "class20", "class82"].map(col);
        let [Some(c6), Some(c20), Some(c82)] = ids else {
            return Err(Error::Manifest { path: path.into(), row: 0, msg: "header must contain class82,class20,class6".into() });
        };
        let name_cols = ["name6", "name20", "name82"].map(col);
        let mut fine: BTreeMap<usize, (usize, [Option<String>; LEVELS])> = BTreeMap::new();
        let mut mid: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(csv_err(path))?;
            let bad = |msg: String| Error::Manifest { path: path.into(), row, msg };
            let num = |c: usize| -> Result<usize> {
                let s = rec.get(c).unwrap_or("");
                s.parse().map_err(|_| bad(format!("bad class id {s:?}")))
            };
            let (f, m, c) = (num(c82)?, num(c20)?, num(c6)?);
            let names = name_cols.map(|nc| nc.and_then(|nc| rec.get(nc)).filter(|s| !s.is_empty()).map(str::to_string));
            if fine.insert(f, (m, names)).is_some() {
                return Err(bad(format!("fine class {f} listed twice")));
            }
            if let Some(&prev) = mid.get(&m) {
                if prev != c {
                    return Err(bad(format!("mid class {m} maps to both {prev} and {c}")));
                }
            }
            mid.insert(m, c);
        }
        let contiguous = |keys: Vec<usize>, level: &str| -> Result<()> {
            if keys.iter().enumerate().any(|(i, &k)| i != k) {
                return Err(Error::Manifest { path: path.into(), row: 0, msg: format!("{level} class ids are not contiguous from 0") });
            }
            Ok(())
        };
        contiguous(fine.keys().copied().collect(), "fine")?;
        contiguous(mid.keys().copied().collect(), "mid")?;
        let mut h = LabelHierarchy::new(fine.values().map(|v| v.0).collect(), mid.values().copied().collect())
            .map_err(|e| Error::Manifest { path: path.into(), row: 0, msg: e.to_string() })?;
        for (f, (m, names)) in &fine {
            let c = h.mid_to_coarse[*m];
            for (level, id) in [(0, c), (1, *m), (2, *f)] {
                if let Some(n) = &names[level] {
                    h.names[level][id] = n.clone();
                }
            }
        }
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record(["class82", "class20", "class6", "name82", "name20", "name6"]).map_err(csv_err(path))?;
        for (f, &m) in self.fine_to_mid.iter().enumerate() {
            let c = self.mid_to_coarse[m];
            let row = [f.to_string(), m.to_string(), c.to_string(), self.names[2][f].clone(), self.names[1][m].clone(), self.names[0][c].clone()];
            w.write_record(&row).map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Class counts coarse to fine.
    pub fn counts(&self) -> [usize; LEVELS] {
        let n1 = self.mid_to_coarse.iter().max().map_or(0, |m| m + 1);
        [n1, self.mid_to_coarse.len(), self.fine_to_mid.len()]
    }

    /// All three labels of a fine class, coarse to fine.
    pub fn labels_for(&self, fine: usize) -> [usize; LEVELS] {
        let mid = self.fine_to_mid[fine];
        [self.mid_to_coarse[mid], mid, fine]
    }

    pub fn name(&self, level: usize, class: usize) -> &str {
        &self.names[level][class]
    }

    pub fn set_names(&mut self, level: usize, names: Vec<String>) -> Result<()> {
        if names.len() != self.counts()[level] {
            return Err(Error::Data(format!("level {level} needs {} names, got {}", self.counts()[level], names.len())));
        }
        self.names[level] = names;
        Ok(())
    }

    /// Hierarchy level served by each head, matched by class count. Heads with
    /// equal counts take the remaining matching levels coarse to fine.
    pub fn head_levels(&self, heads: &[usize]) -> Result<Vec<usize>> {
        let counts = self.counts();
        let mut taken = [false; LEVELS];
        heads
            .iter()
            .map(|&h| {
                let level = (0..LEVELS).find(|&l| counts[l] == h && !taken[l]).ok_or_else(|| {
                    Error::Config(format!("head with {h} classes matches no free hierarchy level (levels have {counts:?})"))
                })?;
                taken[level] = true;
                Ok(level)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub path: PathBuf,
    /// Coarse to fine.
    pub labels: [usize; LEVELS],
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub hierarchy: LabelHierarchy,
    /// Non-fatal problems such as image files that do not exist.
    pub warnings: Vec<String>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Loads `path,label6,label20,label82,synthetic` rows. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_manifest(manifest: &Path, hierarchy_path: &Path) -> Result<DatasetManifest> {
    let hierarchy = LabelHierarchy::load(hierarchy_path)?;
    let [n1, n2, n3] = hierarchy.counts();
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(manifest).map_err(csv_err(manifest))?;
    let headers = rdr.headers().map_err(csv_err(manifest))?.clone();
    let cols = ["path", "label6", "label20", "label82", "synthetic"].map(|n| headers.iter().position(|h| h == n));
    let [Some(cp), Some(c6), Some(c20), Some(c82), Some(cs)] = cols else {
        return Err(Error::Manifest {
            path: manifest.into(),
            row: 0,
            msg: "header must be path,label6,label20,label82,synthetic".into(),
        });
    };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err(manifest))?;
        let bad = |msg: String| Error::Manifest { path: manifest.into(), row, msg };
        let field = |c: usize| rec.get(c).unwrap_or("");
        let label = |c: usize, n: usize| -> Result<usize> {
            let v: usize = field(c).parse().map_err(|_| bad(format!("bad label {:?}", field(c))))?;
            if v >= n {
                return Err(bad(format!("label {v} out of range for {n} classes")));
            }
            Ok(v)
        };
        let labels = [label(c6, n1)?, label(c20, n2)?, label(c82, n3)?];
        let expected = hierarchy.labels_for(labels[2]);
        if labels != expected {
            return Err(bad(format!(
                "labels {labels:?} are inconsistent with the hierarchy, which maps fine class {} to {expected:?}",
                labels[2]
            )));
        }
        let synthetic = parse_flag(field(cs)).ok_or_else(|| bad(format!("bad synthetic flag {:?}", field(cs))))?;
        let raw = field(cp);
        if raw.is_empty() {
            return Err(bad("empty path".into()));
        }
        let path = base.join(raw);
        if !seen.insert(path.clone()) {
            return Err(bad(format!("duplicate path {raw:?}")));
        }
        if !path.exists() {
            let msg = format!("row {row}: image {} does not exist", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        records.push(Record { path, labels, synthetic });
    }
    Ok(DatasetManifest { records, hierarchy, warnings })
}

/// Writes a manifest with paths relative to `base` where possible.
pub fn write_manifest(path: &Path, records: &[Record], base: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["path", "label6", "label20", "label82", "synthetic"]).map_err(csv_err(path))?;
    for r in records {
        let p = r.path.strip_prefix(base).unwrap_or(&r.path);
        let [c, m, f] = r.labels.map(|l| l.to_string());
        w.write_record([p.to_string_lossy().as_ref(), &c, &m, &f, if r.synthetic { "1" } else { "0" }])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.75, val: 0.125, test: 0.125 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {all:?} must lie in [0, 1] and sum to 1")));
        }
        Ok(())
    }
}

/// Split assignment per record, stratified by fine class.
///
/// Each class is shuffled with a class-specific stream derived from `seed`, then
/// `round(n·val)` records go to validation and `round(n·test)` to test (at least
/// one when the class has 8 or more). Classes with fewer than 3 records go
/// entirely to training.
pub fn split_dataset(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<(Vec<Split>, Vec<String>)> {
    ratios.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.labels[2]).or_default().push(i);
    }
    let mut out = vec![Split::Train; manifest.records.len()];
    let mut warnings = Vec::new();
    for (class, mut idx) in by_class {
        let n = idx.len();
        if n < 3 {
            let msg = format!("fine class {class} has only {n} images; all go to train");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        idx.shuffle(&mut rng);
        let mut n_test = (n as f64 * ratios.test).round() as usize;
        if n >= 8 && ratios.test > 0.0 {
            n_test = n_test.max(1);
        }
        let n_val = ((n as f64 * ratios.val).round() as usize).min(n - n_test);
        for &i in &idx[..n_test] {
            out[i] = Split::Test;
        }
        for &i in &idx[n_test..n_test + n_val] {
            out[i] = Split::Val;
        }
    }
    Ok((out, warnings))
}

/// Per-image preprocessing: ROI refinement, resize to the model input, standardize.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline {
    pub input_size: usize,
    /// When false every image is resized whole, as in the no-ROI ablation.
    pub roi_enabled: bool,
    pub segmenter: HeuristicSegmenter,
}

impl Pipeline {
    pub fn new(input_size: usize, roi_enabled: bool) -> Self {
        Pipeline { input_size, roi_enabled, segmenter: HeuristicSegmenter::default() }
    }

    /// Refined 224×224 image and the annotation it was cropped with.
    pub fn refine(&self, record: &Record) -> Result<(RefinedImage, RoiAnnotation)> {
        let raster = Raster::load(&record.path)?;
        let ann = if self.roi_enabled && !record.synthetic {
            segment_person(&raster, Some(&record.path), &self.segmenter)?
        } else {
            RoiAnnotation::none(raster.width(), raster.height())
        };
        let refined = refine_image(&raster, &ann, record.synthetic)?;
        Ok((refined, ann))
    }

    /// Standardized `[3, s, s]` values for one record.
    pub fn load(&self, record: &Record) -> Result<Vec<f64>> {
        let (refined, _) = self.refine(record)?;
        Ok(self.normalize(&refined.to_raster()))
    }

    pub fn normalize(&self, image: &Raster) -> Vec<f64> {
        let s = self.input_size;
        let mut data = if (image.width(), image.height()) == (s, s) {
            image.data().to_vec()
        } else {
            resize_bilinear(image.data(), 3, image.height(), image.width(), s, s)
        };
        for (c, plane) in data.chunks_exact_mut(s * s).enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]);
        }
        data
    }
}

/// One mini-batch. `labels[level][i]` is sample `i`'s class at that level.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: [Vec<usize>; LEVELS],
}

/// Preprocessed, in-memory images of one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    input_size: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<[usize; LEVELS]>,
    paths: Vec<PathBuf>,
    warnings: Vec<String>,
}

impl Dataset {
    /// Loads `records` through `pipeline` in parallel. Unreadable images are
    /// skipped with a warning; the order of the survivors is preserved.
    pub fn load(records: &[&Record], pipeline: &Pipeline) -> Self {
        let loaded: Vec<_> = records.par_iter().map(|r| pipeline.load(r)).collect();
        let mut ds = Dataset { input_size: pipeline.input_size, images: Vec::new(), labels: Vec::new(), paths: Vec::new(), warnings: Vec::new() };
        for (r, img) in records.iter().zip(loaded) {
            match img {
                Ok(img) => {
                    ds.images.push(img);
                    ds.labels.push(r.labels);
                    ds.paths.push(r.path.clone());
                }
                Err(e) => {
                    let msg = format!("skipping {}: {e}", r.path.display());
                    log::warn!("{msg}");
                    ds.warnings.push(msg);
                }
            }
        }
        ds
    }

    /// Records of `manifest` assigned to `split`.
    pub fn from_split(manifest: &DatasetManifest, assignment: &[Split], split: Split, pipeline: &Pipeline) -> Self {
        let records: Vec<&Record> = manifest.records.iter().zip(assignment).filter(|(_, &s)| s == split).map(|(r, _)| r).collect();
        Self::load(&records, pipeline)
    }

    /// Builds a dataset from already standardized images.
    pub fn from_parts(input_size: usize, images: Vec<Vec<f64>>, labels: Vec<[usize; LEVELS]>) -> Result<Self> {
        let expected = 3 * input_size * input_size;
        if images.len() != labels.len() || images.iter().any(|i| i.len() != expected) {
            return Err(Error::Data(format!("every image needs {expected} values and one label triple")));
        }
        let paths = vec![PathBuf::new(); images.len()];
        Ok(Dataset { input_size, images, labels, paths, warnings: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn labels(&self) -> &[[usize; LEVELS]] {
        &self.labels
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Keeps only the samples selected by `keep`.
    pub fn filter(&self, keep: impl Fn(usize, &[usize; LEVELS]) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i, &self.labels[i])).collect();
        Dataset {
            input_size: self.input_size,
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            paths: idx.iter().map(|&i| self.paths[i].clone()).collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let s = self.input_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels: [Vec<usize>; LEVELS] = Default::default();
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
            for (l, v) in labels.iter_mut().zip(self.labels[i]) {
                l.push(v);
            }
        }
        Batch { images: Tensor::new(vec![indices.len(), 3, s, s], data).expect("batch dims match stored images"), labels }
    }

    /// Shuffled batches for one epoch.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
        batch_order(self.len(), batch_size, seed, epoch).into_iter().map(move |b| self.batch(&b))
    }

    /// Batches in stored order, for evaluation.
    pub fn ordered_batches(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect::<Vec<_>>().into_iter()
    }
}

/// Index groups for one epoch: a permutation seeded by `(seed, epoch)` cut into
/// `batch_size` chunks, keeping the final short chunk.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let stream = seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn toy_hierarchy() -> LabelHierarchy {
        LabelHierarchy::new((0..8).map(|f| f / 2).collect(), (0..4).map(|m| m / 2).collect()).unwrap()
    }

    fn manifest_of(classes: &[usize]) -> DatasetManifest {
        let h = toy_hierarchy();
        DatasetManifest {
            records: classes
                .iter()
                .enumerate()
                .map(|(i, &f)| Record { path: PathBuf::from(format!("{i}.png")), labels: h.labels_for(f), synthetic: false })
                .collect(),
            hierarchy: h,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn hierarchy_counts_and_heads() {
        let h = toy_hierarchy();
        assert_eq!(h.counts(), [2, 4, 8]);
        assert_eq!(h.labels_for(5), [1, 2, 5]);
        assert_eq!(h.head_levels(&[2, 4, 8]).unwrap(), vec![0, 1, 2]);
        assert_eq!(h.head_levels(&[8]).unwrap(), vec![2]);
        assert!(h.head_levels(&[3]).is_err());
        assert!(h.head_levels(&[8, 8]).is_err());
        let flat = LabelHierarchy::new(vec![0, 1], vec![0, 1]).unwrap();
        assert_eq!(flat.head_levels(&[2, 2]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn hierarchy_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let mut h = toy_hierarchy();
        h.set_names(0, vec!["standing".into(), "sitting".into()]).unwrap();
        h.save(&p).unwrap();
        assert_eq!(LabelHierarchy::load(&p).unwrap(), h);
        fs::write(&p, "class82,class20,class6\n0,0,0\n1,0,1\n").unwrap();
        assert!(matches!(LabelHierarchy::load(&p), Err(Error::Manifest { row: 2, .. })));
        fs::write(&p, "class82,class20,class6\n0,0,0\n2,0,0\n").unwrap();
        assert!(LabelHierarchy::load(&p).is_err());
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("h.csv");
        toy_hierarchy().save(&hp).unwrap();
        let mp = dir.path().join("m.csv");
        fs::write(&mp, "path,label6,label20,label82,synthetic\n").unwrap();
        let m = load_manifest(&mp, &hp).unwrap();
        assert!(m.records.is_empty());

        fs::write(dir.path().join("a.png"), b"").unwrap();
        fs::write(&mp, "path,label6,label20,label82,synthetic\na.png,0,1,3,0\nb.png,1,3,7,1\n").unwrap();
        let m = load_manifest(&mp, &hp).unwrap();
        assert_eq!(m.records.len(), 2);
        assert!(m.records[1].synthetic);
        assert_eq!(m.warnings.len(), 1, "b.png is missing");

        fs::write(&mp, "path,label6,label20,label82,synthetic\na.png,0,0,3,0\n").unwrap();
        match load_manifest(&mp, &hp) {
            Err(Error::Manifest { row, msg, .. }) => assert!(row == 1 && msg.contains("inconsistent"), "{msg}"),
            other => panic!("{other:?}"),
        }
        fs::write(&mp, "path,label6,label20,label82,synthetic\na.png,0,1,3,0\na.png,0,1,3,0\n").unwrap();
        assert!(matches!(load_manifest(&mp, &hp), Err(Error::Manifest { row: 2, .. })));
    }

    #[test]
    fn split_arithmetic() {
        let m = manifest_of(&[3; 80]);
        let (s, _) = split_dataset(&m, SplitRatios::default(), 1).unwrap();
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (60, 10, 10));
        assert_eq!(split_dataset(&m, SplitRatios::default(), 1).unwrap().0, s);
        let small = manifest_of(&[0, 0, 1, 1, 1]);
        let (s, w) = split_dataset(&small, SplitRatios::default(), 0).unwrap();
        assert_eq!(&s[..2], &[Split::Train, Split::Train]);
        assert_eq!(w.len(), 1);
        assert!(split_dataset(&m, SplitRatios { train: 0.5, val: 0.2, test: 0.2 }, 0).is_err());
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let sizes: Vec<usize> = batch_order(65, 32, 0, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, [32, 32, 1]);
        assert_eq!(batch_order(65, 32, 4, 2), batch_order(65, 32, 4, 2));
        assert_ne!(batch_order(65, 32, 4, 0), batch_order(65, 32, 4, 1));
    }

    proptest! {
        #[test]
        fn splits_are_deterministic_and_exhaustive(classes in proptest::collection::vec(0usize..8, 0..200), seed in any::<u64>()) {
            let m = manifest_of(&classes);
            let (a, _) = split_dataset(&m, SplitRatios::default(), seed).unwrap();
            let (b, _) = split_dataset(&m, SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), classes.len());
            for class in 0..8 {
                let n = classes.iter().filter(|&&c| c == class).count();
                let tests = classes.iter().zip(&a).filter(|(&c, &s)| c == class && s == Split::Test).count();
                if n >= 8 {
                    prop_assert!(tests >= 1);
                }
            }
        }

        #[test]
        fn batch_order_is_a_permutation(n in 0usize..300, bs in 1usize..40, seed in any::<u64>(), epoch in 0usize..5) {
            let mut all: Vec<usize> = batch_order(n, bs, seed, epoch).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn hierarchy_reproduces_coarse_labels(f in 0usize..8) {
            let h = toy_hierarchy();
            let [c, m, ff] = h.labels_for(f);
            prop_assert_eq!(ff, f);
            prop_assert_eq!(m, f / 2);
            prop_assert_eq!(c, m / 2);
        }
    }
}
