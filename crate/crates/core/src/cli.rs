//! Command implementations behind the `ypose` binary.
//!
//! Every command takes a validated [`RunConfig`] and writes its human-facing
//! output to a caller-supplied writer, so the binary stays a thin argument
//! parser and the commands can be driven from tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::data::{load_manifest, split_dataset, write_manifest, Dataset, DatasetManifest, LabelHierarchy, Pipeline, Record, Split, SplitRatios, LEVELS};
use crate::error::{Error, Result};
use crate::metrics::{rank_of, MetricsReport};
use crate::model::{activation_map, count_macs, count_params, layer_table, load_checkpoint, save_checkpoint, write_layer_csv, Model, ModelSpec};
use crate::resample::resize_bilinear;
use crate::roi::{BBox, REFINED_SIZE};
use crate::tensor::Tensor;
use crate::toy::{generate, ToyCorpusOptions};
use crate::train::{evaluate, sweep_refinement_blocks, train_resumable, write_curves_csv, write_sweep_csv, OptimizerConfig, SweepRow, TrainConfig, TrainState};

const SPEC_KEYS: [&str; 11] = [
    "backbone",
    "width",
    "depth",
    "depth_divisor",
    "min_depth",
    "refinement_units",
    "growth_rate",
    "bottleneck_factor",
    "heads",
    "input_size",
    "dropout",
];

const RUN_KEYS: [&str; 17] = [
    "variant",
    "seed",
    "lr",
    "beta1",
    "beta2",
    "epsilon",
    "epochs",
    "batch_size",
    "manifest",
    "hierarchy",
    "train_ratio",
    "val_ratio",
    "test_ratio",
    "roi",
    "refinement",
    "head_mode",
    "head_weights",
];

/// Which heads a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// All heads of the spec, trained together.
    Joint,
    /// One head for the given hierarchy level (0 coarse, 2 fine).
    Single(usize),
}

impl HeadMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(HeadMode::Joint),
            "coarse" => Ok(HeadMode::Single(0)),
            "mid" => Ok(HeadMode::Single(1)),
            "fine" => Ok(HeadMode::Single(2)),
            other => Err(Error::Config(format!("head_mode must be joint, coarse, mid or fine, got {other:?}"))),
        }
    }
}

/// Everything a command needs, merged from the variant preset, the config file
/// and command-line flags (in increasing priority).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    /// Defaults to `hierarchy.csv` beside the manifest.
    pub hierarchy: Option<PathBuf>,
    pub split: SplitRatios,
    pub roi_enabled: bool,
    pub refinement_enabled: bool,
    pub head_mode: HeadMode,
    pub head_weights: Option<Vec<f64>>,
}

impl RunConfig {
    /// Builds and validates a configuration. Unknown keys are rejected.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !SPEC_KEYS.contains(k) && !RUN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let variant = kv.get_str("variant").unwrap_or("ypose");
        let mut spec = ModelSpec::from_key_values(kv, &ModelSpec::preset(variant)?)?;
        let refinement_enabled = kv.get_bool("refinement")?.unwrap_or(true);
        if !refinement_enabled {
            spec.refinement.num_units = 0;
        }
        // The toy preset trains on a handful of images, so it gets a larger step
        // and smaller batches than the full-scale recipe.
        let toy = variant == "toy";
        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            learning_rate: kv.get("lr")?.unwrap_or(if toy { 3e-3 } else { defaults.learning_rate }),
            beta1: kv.get("beta1")?.unwrap_or(defaults.beta1),
            beta2: kv.get("beta2")?.unwrap_or(defaults.beta2),
            eps: kv.get("epsilon")?.unwrap_or(defaults.eps),
        };
        optimizer.validate()?;
        let base_split = SplitRatios::default();
        let split = SplitRatios {
            train: kv.get("train_ratio")?.unwrap_or(base_split.train),
            val: kv.get("val_ratio")?.unwrap_or(base_split.val),
            test: kv.get("test_ratio")?.unwrap_or(base_split.test),
        };
        split.validate()?;
        let batch_size = kv.get("batch_size")?.unwrap_or(if toy { 8 } else { 32 });
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let head_mode = HeadMode::parse(kv.get_str("head_mode").unwrap_or("joint"))?;
        let head_weights: Option<Vec<f64>> = kv.get_list("head_weights")?;
        if let Some(w) = &head_weights {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(format!("head weights must be finite and non-negative, got {w:?}")));
            }
        }
        Ok(RunConfig {
            spec,
            optimizer,
            epochs: kv.get("epochs")?.unwrap_or(if toy { 40 } else { 50 }),
            batch_size,
            seed: kv.get("seed")?.unwrap_or(0),
            manifest: kv.get_str("manifest").map(PathBuf::from),
            hierarchy: kv.get_str("hierarchy").map(PathBuf::from),
            split,
            roi_enabled: kv.get_bool("roi")?.unwrap_or(true),
            refinement_enabled,
            head_mode,
            head_weights,
        })
    }

    /// Reads a config file and lays `overrides` over it.
    pub fn load(config: Option<&Path>, overrides: &KeyValues) -> Result<Self> {
        let mut kv = match config {
            Some(p) => KeyValues::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => KeyValues::default(),
        };
        kv.overlay(overrides);
        Self::from_key_values(&kv)
    }

    fn manifest_path(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| Error::Config("no manifest given (set manifest= or pass --manifest)".into()))
    }

    fn hierarchy_path(&self) -> Result<PathBuf> {
        match &self.hierarchy {
            Some(p) => Ok(p.clone()),
            None => Ok(self.manifest_path()?.parent().unwrap_or(Path::new("")).join("hierarchy.csv")),
        }
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        load_manifest(self.manifest_path()?, &self.hierarchy_path()?)
    }

    fn pipeline(&self, input_size: usize) -> Pipeline {
        Pipeline::new(input_size, self.roi_enabled)
    }

    /// Spec and head-to-level mapping for training against `hierarchy`.
    pub fn training_spec(&self, hierarchy: &LabelHierarchy) -> Result<(ModelSpec, Vec<usize>)> {
        let mut spec = self.spec.clone();
        let levels = match self.head_mode {
            HeadMode::Joint => hierarchy.head_levels(&spec.heads)?,
            HeadMode::Single(level) => {
                spec.heads = vec![hierarchy.counts()[level]];
                vec![level]
            }
        };
        Ok((spec, levels))
    }

    fn train_config(&self, head_levels: Vec<usize>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed: self.seed,
            head_levels,
            head_weights: self.head_weights.clone(),
        }
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn csv_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_file(path, &buf)
}

/// Totals printed by `build`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildSummary {
    pub params: u64,
    pub buffers: u64,
    pub macs: u64,
}

/// Structural report: per-layer CSV (to `layer_csv`, or `out` when absent)
/// followed by totals. Never touches image data.
pub fn build(cfg: &RunConfig, layer_csv: Option<&Path>, out: &mut dyn Write) -> Result<BuildSummary> {
    let model = Model::build(&cfg.spec, cfg.seed)?;
    let rows = layer_table(&model, cfg.spec.input_size)?;
    match layer_csv {
        Some(p) => csv_file(p, |buf| write_layer_csv(buf, &rows))?,
        None => write_layer_csv(&mut *out, &rows)?,
    }
    let params = count_params(&model)?;
    let macs = count_macs(&model, cfg.spec.input_size)?;
    writeln!(out, "# spec: {}", cfg.spec.to_text().trim_end().replace('\n', " ")).map_err(out_err)?;
    writeln!(out, "# total params: {} ({:.2} M)", params.total, params.total as f64 / 1e6).map_err(out_err)?;
    writeln!(out, "# buffers (BN running stats): {}", params.buffers).map_err(out_err)?;
    writeln!(out, "# MACs at {0}x{0}: {1} ({2:.3} G)", cfg.spec.input_size, macs.total, macs.gmacs()).map_err(out_err)?;
    Ok(BuildSummary { params: params.total, buffers: params.buffers, macs: macs.total })
}

/// One row of the preprocessing report.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessRow {
    pub source: PathBuf,
    pub output: PathBuf,
    pub provenance: &'static str,
    pub roi_source: &'static str,
    pub bbox: BBox,
    pub confidence: f64,
    /// IoU against the supplied ground-truth box, for non-synthetic images that have one.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessReport {
    pub rows: Vec<PreprocessRow>,
    pub failures: Vec<String>,
}

impl PreprocessReport {
    pub fn mean_iou(&self) -> Option<f64> {
        let ious: Vec<f64> = self.rows.iter().filter_map(|r| r.iou).collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Reads `path,x0,y0,x1,y1` rows, paths relative to the file's directory.
pub fn read_boxes(path: &Path) -> Result<Vec<(PathBuf, BBox)>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv { path: path.into(), source })?;
        let bad = || Error::Manifest { path: path.into(), row: i + 1, msg: "expected path,x0,y0,x1,y1".into() };
        let num = |c: usize| rec.get(c).and_then(|v| v.trim().parse::<usize>().ok()).ok_or_else(bad);
        let p = rec.get(0).ok_or_else(bad)?;
        out.push((base.join(p.trim()), BBox { x0: num(1)?, y0: num(2)?, x1: num(3)?, y1: num(4)? }));
    }
    Ok(out)
}

/// Refines every manifest image into `out_dir/images`, writing
/// `provenance.csv` and a `manifest.csv` of the refined corpus. Files that
/// fail are logged and skipped.
pub fn preprocess(cfg: &RunConfig, out_dir: &Path, boxes: Option<&Path>, out: &mut dyn Write) -> Result<PreprocessReport> {
    let manifest = cfg.load_manifest()?;
    let truth = boxes.map(read_boxes).transpose()?.unwrap_or_default();
    let images = out_dir.join("images");
    create_dir(&images)?;
    let pipeline = cfg.pipeline(REFINED_SIZE);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut refined_records = Vec::new();
    for (i, record) in manifest.records.iter().enumerate() {
        let stem = record.path.file_stem().map_or_else(|| format!("image{i}"), |s| s.to_string_lossy().into_owned());
        let output = images.join(format!("{i:05}_{stem}.png"));
        let result = pipeline.refine(record).and_then(|(refined, ann)| {
            let raster = refined.to_raster();
            raster.to_rgb8().save(&output).map_err(|source| Error::Image { path: output.clone(), source })?;
            Ok((refined.provenance, ann))
        });
        match result {
            Ok((provenance, ann)) => {
                // Synthetic images are never segmented, so there is no box to score.
                let iou = (!record.synthetic).then(|| truth.iter().find(|(p, _)| *p == record.path).map(|(_, b)| ann.bbox.iou(b))).flatten();
                rows.push(PreprocessRow {
                    source: record.path.clone(),
                    output: output.clone(),
                    provenance: provenance.as_str(),
                    roi_source: ann.source.as_str(),
                    bbox: ann.bbox,
                    confidence: ann.confidence,
                    iou,
                });
                refined_records.push(Record { path: output, ..record.clone() });
            }
            Err(e) => {
                let msg = format!("{}: {e}", record.path.display());
                log::warn!("skipping {msg}");
                failures.push(msg);
            }
        }
    }
    let report_path = out_dir.join("provenance.csv");
    let mut w = csv::Writer::from_path(&report_path).map_err(|source| Error::Csv { path: report_path.clone(), source })?;
    let csv_err = |source| Error::Csv { path: report_path.clone(), source };
    w.write_record(["source", "output", "provenance", "roi_source", "x0", "y0", "x1", "y1", "confidence", "iou"]).map_err(csv_err)?;
    for r in &rows {
        let b = r.bbox;
        w.write_record([
            r.source.display().to_string(),
            r.output.strip_prefix(out_dir).unwrap_or(&r.output).display().to_string(),
            r.provenance.to_string(),
            r.roi_source.to_string(),
            b.x0.to_string(),
            b.y0.to_string(),
            b.x1.to_string(),
            b.y1.to_string(),
            r.confidence.to_string(),
            r.iou.map_or_else(String::new, |v| v.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&report_path, e))?;
    write_manifest(&out_dir.join("manifest.csv"), &refined_records, out_dir)?;
    manifest.hierarchy.save(&out_dir.join("hierarchy.csv"))?;
    let report = PreprocessReport { rows, failures };
    let count = |p: &str| report.rows.iter().filter(|r| r.provenance == p).count();
    writeln!(
        out,
        "refined {} images ({} cropped, {} synthetic bypass, {} full-frame fallback), {} failed",
        report.rows.len(),
        count("cropped"),
        count("bypass_synthetic"),
        count("fallback_full"),
        report.failures.len()
    )
    .map_err(out_err)?;
    if let Some(m) = report.mean_iou() {
        writeln!(out, "mean bbox IoU: {m:.4}").map_err(out_err)?;
    }
    Ok(report)
}

fn split_sets(cfg: &RunConfig, manifest: &DatasetManifest, input_size: usize) -> Result<(Vec<Split>, Pipeline)> {
    let (assignment, _) = split_dataset(manifest, cfg.split, cfg.seed)?;
    Ok((assignment, cfg.pipeline(input_size)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_val_top1: f64,
    /// Eval-mode finest-head top-1 of the final weights on the training split.
    pub final_train_top1: f64,
}

/// Trains on the manifest's train split, validating on its val split.
///
/// Writes `best.ckpt`, `last.ckpt`, `state.ckpt` (resumable, refreshed every
/// epoch) and `curves.csv` into `out_dir`. With `resume`, training continues
/// from a saved `state.ckpt`.
pub fn train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    let manifest = cfg.load_manifest()?;
    let (spec, head_levels) = cfg.training_spec(&manifest.hierarchy)?;
    let (assignment, pipeline) = split_sets(cfg, &manifest, spec.input_size)?;
    let train_set = Dataset::from_split(&manifest, &assignment, Split::Train, &pipeline);
    let val_set = Dataset::from_split(&manifest, &assignment, Split::Val, &pipeline);
    let mut model = Model::build(&spec, cfg.seed)?;
    let state = resume.map(|p| TrainState::from_bytes(&mut model, &read_file(p)?)).transpose()?;
    create_dir(out_dir)?;
    let tcfg = cfg.train_config(head_levels.clone());
    let state_path = out_dir.join("state.ckpt");
    let outcome = train_resumable(&mut model, &train_set, &val_set, &tcfg, state, |m, s| write_file(&state_path, &s.to_bytes(m)))?;
    if !state_path.exists() {
        write_file(&state_path, &outcome.state.to_bytes(&model))?;
    }
    write_file(&out_dir.join("best.ckpt"), &outcome.best_checkpoint)?;
    write_file(&out_dir.join("last.ckpt"), &save_checkpoint(&model))?;
    csv_file(&out_dir.join("curves.csv"), |buf| write_curves_csv(buf, &outcome.curves))?;
    let weights = tcfg.head_weights.clone().unwrap_or_else(|| vec![1.0; head_levels.len()]);
    let report = evaluate(&model, &train_set, &head_levels, &weights, cfg.batch_size)?;
    let summary = TrainSummary {
        epochs_run: outcome.state.epoch,
        steps: outcome.steps,
        best_epoch: outcome.best_epoch,
        best_val_top1: outcome.best_val_top1,
        final_train_top1: report.finest().top1,
    };
    writeln!(out, "trained {} epochs ({} steps) on {} images, validated on {}", summary.epochs_run, summary.steps, train_set.len(), val_set.len()).map_err(out_err)?;
    match summary.best_epoch {
        Some(e) => writeln!(out, "best val top-1 {:.4} at epoch {e}", summary.best_val_top1),
        None => writeln!(out, "no epochs run; best.ckpt holds the initial weights"),
    }
    .map_err(out_err)?;
    writeln!(out, "final train top-1 (eval mode) {:.4}", summary.final_train_top1).map_err(out_err)?;
    writeln!(out, "wrote {}", out_dir.display()).map_err(out_err)?;
    Ok(summary)
}

/// Which records `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    One(Split),
    All,
}

impl EvalSplit {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(EvalSplit::All)
        } else {
            Split::parse(s).map(EvalSplit::One)
        }
    }
}

fn checkpoint_model(path: &Path) -> Result<Model> {
    load_checkpoint(&read_file(path)?)
}

/// Metrics of a checkpoint on one split (recomputed from the config's seed and
/// ratios). Writes `metrics.csv` and one `confusion_level<L>.csv` per head to
/// `out_dir` when given; prints the summary CSV.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, split: EvalSplit, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<MetricsReport> {
    let model = checkpoint_model(checkpoint)?;
    let manifest = cfg.load_manifest()?;
    let head_levels = manifest.hierarchy.head_levels(&model.spec().heads)?;
    let (assignment, pipeline) = split_sets(cfg, &manifest, model.spec().input_size)?;
    let data = match split {
        EvalSplit::One(s) => Dataset::from_split(&manifest, &assignment, s, &pipeline),
        EvalSplit::All => Dataset::load(&manifest.records.iter().collect::<Vec<_>>(), &pipeline),
    };
    let weights = cfg.head_weights.clone().unwrap_or_else(|| vec![1.0; head_levels.len()]);
    let report = evaluate(&model, &data, &head_levels, &weights, cfg.batch_size)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        csv_file(&dir.join("metrics.csv"), |buf| report.write_summary_csv(buf))?;
        for (level, m) in &report.heads {
            csv_file(&dir.join(format!("confusion_level{level}.csv")), |buf| m.write_confusion_csv(buf))?;
        }
    }
    report.write_summary_csv(&mut *out)?;
    writeln!(out, "# loss {:.6} over {} images", report.loss, data.len()).map_err(out_err)?;
    Ok(report)
}

/// Probability vector of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrediction {
    pub level: usize,
    pub probs: Vec<f64>,
}

impl HeadPrediction {
    pub fn top(&self) -> usize {
        crate::metrics::argmax(&self.probs)
    }
}

fn hierarchy_if_available(cfg: &RunConfig) -> Option<LabelHierarchy> {
    let path = cfg.hierarchy.clone().or_else(|| cfg.hierarchy_path().ok())?;
    LabelHierarchy::load(&path).ok()
}

/// Head levels of a loaded model: from the hierarchy when it matches, otherwise
/// heads are assumed to run coarse to fine ending at the finest level.
fn levels_for(model: &Model, hierarchy: Option<&LabelHierarchy>) -> Vec<usize> {
    let n = model.spec().heads.len();
    hierarchy
        .and_then(|h| h.head_levels(&model.spec().heads).ok())
        .unwrap_or_else(|| (0..n).map(|i| LEVELS.saturating_sub(n) + i).collect())
}

fn image_tensor(cfg: &RunConfig, model: &Model, image: &Path, synthetic: bool) -> Result<Tensor> {
    let record = Record { path: image.to_path_buf(), labels: [0; LEVELS], synthetic };
    let s = model.spec().input_size;
    Ok(Tensor::new(vec![1, 3, s, s], cfg.pipeline(s).load(&record)?)?)
}

/// Classifies one image and prints the top classes of every head.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, image: &Path, synthetic: bool, top: usize, out: &mut dyn Write) -> Result<Vec<HeadPrediction>> {
    if !image.exists() {
        return Err(Error::io(image, std::io::ErrorKind::NotFound.into()));
    }
    let model = checkpoint_model(checkpoint)?;
    let hierarchy = hierarchy_if_available(cfg);
    let levels = levels_for(&model, hierarchy.as_ref());
    let x = image_tensor(cfg, &model, image, synthetic)?;
    let output = model.predict(&x)?;
    let preds: Vec<HeadPrediction> = output.probs.iter().zip(&levels).map(|(p, &level)| HeadPrediction { level, probs: p.data().to_vec() }).collect();
    writeln!(out, "level,rank,class,name,probability").map_err(out_err)?;
    for p in &preds {
        let mut order: Vec<usize> = (0..p.probs.len()).collect();
        order.sort_by_key(|&k| rank_of(&p.probs, k));
        for (rank, &k) in order.iter().take(top.max(1)).enumerate() {
            let name = hierarchy.as_ref().map_or_else(|| k.to_string(), |h| h.name(p.level, k).to_string());
            writeln!(out, "{},{},{k},{name},{:.6}", p.level, rank + 1, p.probs[k]).map_err(out_err)?;
        }
    }
    Ok(preds)
}

/// Writes the final-layer activation map of one image as a 224×224 grayscale PNG.
pub fn heatmap(cfg: &RunConfig, checkpoint: &Path, image: &Path, synthetic: bool, dest: &Path, out: &mut dyn Write) -> Result<Tensor> {
    if !image.exists() {
        return Err(Error::io(image, std::io::ErrorKind::NotFound.into()));
    }
    let model = checkpoint_model(checkpoint)?;
    let x = image_tensor(cfg, &model, image, synthetic)?;
    let map = activation_map(&model, &x)?;
    let s = model.spec().input_size;
    let up = resize_bilinear(map.data(), 1, s, s, REFINED_SIZE, REFINED_SIZE);
    let pixels: Vec<u8> = up.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(REFINED_SIZE as u32, REFINED_SIZE as u32, pixels).expect("buffer matches dimensions");
    img.save(dest).map_err(|source| Error::Image { path: dest.into(), source })?;
    writeln!(out, "wrote {}", dest.display()).map_err(out_err)?;
    Ok(map)
}

/// Trains one model per refinement-unit count and prints the table. Writes
/// `sweep.csv` into `out_dir` when given.
pub fn sweep(cfg: &RunConfig, counts: &[usize], out_dir: Option<&Path>, out: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let manifest = cfg.load_manifest()?;
    let (spec, head_levels) = cfg.training_spec(&manifest.hierarchy)?;
    let (assignment, pipeline) = split_sets(cfg, &manifest, spec.input_size)?;
    let train_set = Dataset::from_split(&manifest, &assignment, Split::Train, &pipeline);
    let val_set = Dataset::from_split(&manifest, &assignment, Split::Val, &pipeline);
    let rows = sweep_refinement_blocks(&spec, counts, &train_set, &val_set, &cfg.train_config(head_levels))?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        csv_file(&dir.join("sweep.csv"), |buf| write_sweep_csv(buf, &rows))?;
    }
    write_sweep_csv(&mut *out, &rows)?;
    Ok(rows)
}

/// Generates the toy corpus into `out_dir`.
pub fn toy_corpus(out_dir: &Path, classes: &[usize], opts: &ToyCorpusOptions, out: &mut dyn Write) -> Result<crate::toy::ToyCorpus> {
    let corpus = generate(out_dir, classes, opts)?;
    writeln!(out, "wrote {} images, {}, {} and {}", corpus.records.len(), corpus.manifest.display(), corpus.hierarchy.display(), corpus.boxes.display())
        .map_err(out_err)?;
    Ok(corpus)
}
