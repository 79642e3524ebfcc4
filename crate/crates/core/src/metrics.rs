//! Classification metrics: top-k accuracy, macro precision/recall/F1 and
//! confusion matrices.

use std::io::Write;

use crate::error::{Error, Result};

/// Position of `target` when classes are sorted by descending probability,
/// ties going to the lower class index. A NaN probability ranks last.
pub fn rank_of(probs: &[f64], target: usize) -> usize {
    let pt = probs[target];
    if pt.is_nan() {
        return probs.len();
    }
    probs.iter().enumerate().filter(|&(j, &p)| p > pt || (p == pt && j < target)).count()
}

/// Highest-probability class; ties go to the lower index.
pub fn argmax(probs: &[f64]) -> usize {
    probs.iter().enumerate().fold(0, |best, (j, &p)| if p > probs[best] { j } else { best })
}

/// Running counts for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    classes: usize,
    top1: u64,
    top5: u64,
    /// `confusion[true][predicted]`.
    confusion: Vec<Vec<u64>>,
}

impl Accumulator {
    pub fn new(classes: usize) -> Self {
        Accumulator { classes, top1: 0, top5: 0, confusion: vec![vec![0; classes]; classes] }
    }

    pub fn add(&mut self, probs: &[f64], target: usize) {
        assert_eq!(probs.len(), self.classes, "probability row length");
        let rank = rank_of(probs, target);
        self.top1 += (rank < 1) as u64;
        self.top5 += (rank < 5) as u64;
        self.confusion[target][argmax(probs)] += 1;
    }

    /// Adds every row of a `[n, classes]` probability matrix.
    pub fn add_rows(&mut self, probs: &[f64], targets: &[usize]) {
        for (row, &t) in probs.chunks_exact(self.classes).zip(targets) {
            self.add(row, t);
        }
    }

    pub fn finish(&self) -> LevelMetrics {
        let total: u64 = self.confusion.iter().flatten().sum();
        let c = self.classes;
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let tp = self.confusion[k][k];
            let support: u64 = self.confusion[k].iter().sum();
            let predicted: u64 = self.confusion.iter().map(|row| row[k]).sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, support);
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        LevelMetrics {
            samples: total,
            top1: ratio(self.top1, total),
            top5: ratio(self.top5, total),
            precision: p_sum / c as f64,
            recall: r_sum / c as f64,
            f1: f_sum / c as f64,
            confusion: self.confusion.clone(),
        }
    }
}

/// Metrics of one head. Rates are in [0, 1]; macro averages run over every
/// class, with classes that never occur contributing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMetrics {
    pub samples: u64,
    pub top1: f64,
    pub top5: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl LevelMetrics {
    pub fn confusion_trace(&self) -> u64 {
        (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum()
    }

    /// Confusion matrix as CSV: header `true\pred,0,1,...`, one row per true class.
    pub fn write_confusion_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map = |source| Error::Csv { path: "<confusion matrix>".into(), source };
        let n = self.confusion.len();
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..n).map(|k| k.to_string()));
        w.write_record(&header).map_err(map)?;
        for (k, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(map)?;
        }
        w.flush().map_err(|e| Error::io("<confusion matrix>", e))
    }
}

/// Per-head metrics, heads in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `(hierarchy level, metrics)` per head.
    pub heads: Vec<(usize, LevelMetrics)>,
    /// Weighted cross-entropy averaged over samples.
    pub loss: f64,
}

impl MetricsReport {
    /// Metrics of the head serving the finest level.
    pub fn finest(&self) -> &LevelMetrics {
        &self.heads.iter().max_by_key(|(level, _)| *level).expect("at least one head").1
    }

    /// `level,top1,top5,precision,recall,f1,samples` rows.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let map = |source| Error::Csv { path: "<metrics>".into(), source };
        w.write_record(["level", "top1", "top5", "precision", "recall", "f1", "samples"]).map_err(map)?;
        for (level, m) in &self.heads {
            let row = [level.to_string(), m.top1.to_string(), m.top5.to_string(), m.precision.to_string(), m.recall.to_string(), m.f1.to_string(), m.samples.to_string()];
            w.write_record(&row).map_err(map)?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let mut acc = Accumulator::new(3);
        for t in [0, 1, 2, 2, 1] {
            let mut p = vec![0.1; 3];
            p[t] = 0.8;
            acc.add(&p, t);
        }
        let m = acc.finish();
        assert_eq!((m.top1, m.top5, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn fifth_place_counts_for_top5_only() {
        let probs = [0.30, 0.25, 0.2, 0.1, 0.08, 0.07];
        let mut acc = Accumulator::new(6);
        acc.add(&probs, 4);
        let m = acc.finish();
        assert_eq!((m.top1, m.top5), (0.0, 1.0));
        let mut acc = Accumulator::new(6);
        acc.add(&probs, 5);
        assert_eq!(acc.finish().top5, 0.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(rank_of(&[0.4, 0.4, 0.2], 1), 1);
        assert_eq!(rank_of(&[0.4, 0.4, 0.2], 0), 0);
        assert_eq!(rank_of(&[0.4, f64::NAN, 0.2], 1), 3);
    }

    #[test]
    fn zero_support_classes_pull_macro_down() {
        let mut acc = Accumulator::new(4);
        acc.add(&[0.9, 0.1, 0.0, 0.0], 0);
        acc.add(&[0.1, 0.9, 0.0, 0.0], 1);
        let m = acc.finish();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn confusion_csv_layout() {
        let mut acc = Accumulator::new(2);
        acc.add(&[0.2, 0.8], 0);
        let mut buf = Vec::new();
        acc.finish().write_confusion_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "true\\pred,0,1\n0,0,1\n1,0,0\n");
    }
}
