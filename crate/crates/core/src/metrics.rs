//! Challenge metrics.
//!
//! PQ+ aggregates true positives, false positives, false negatives and the
//! IoU sum of matched pairs over the whole dataset before forming
//! `PQ+ = sum IoU / (TP + FP/2 + FN/2)` per class; mPQ+ is the mean over the
//! nucleus classes. The counting metric is the coefficient of determination
//! between predicted and true per-image instance counts, averaged over
//! classes. Both follow the dataset-aggregation reading of the CoNIC
//! challenge definitions.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::LabeledInstances;
use crate::CLASS_NAMES;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceMatch {
    pub pred: u32,
    pub gt: u32,
    pub class: u8,
    pub iou: f64,
}

/// Per-image matching result. Unmatched instances are listed with their class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageMatches {
    pub matches: Vec<InstanceMatch>,
    pub false_positives: Vec<(u32, u8)>,
    pub false_negatives: Vec<(u32, u8)>,
}

/// Pairs same-class predicted and true instances whose IoU exceeds 0.5.
/// Such a pair is unique per instance: two disjoint predictions cannot both
/// cover more than half of the union with one true instance. Instances of
/// class 0 take no part in matching.
pub fn match_instances(pred: &LabeledInstances, gt: &LabeledInstances) -> Result<ImageMatches> {
    if (pred.map.height(), pred.map.width()) != (gt.map.height(), gt.map.width()) {
        return Err(Error::shape(
            format!("{}x{}", gt.map.height(), gt.map.width()),
            format!("{}x{}", pred.map.height(), pred.map.width()),
        ));
    }
    let pred_area = pred.map.areas();
    let gt_area = gt.map.areas();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pred.map.labels().iter().zip(gt.map.labels()) {
        if p > 0 && g > 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let mut out = ImageMatches::default();
    let mut pred_matched = BTreeMap::new();
    let mut gt_matched = BTreeMap::new();
    for (&(p, g), &n) in &inter {
        let class = pred.class_of(p);
        if class == 0 || class != gt.class_of(g) {
            continue;
        }
        let union = pred_area[&p] + gt_area[&g] - n;
        let iou = n as f64 / union as f64;
        if iou > 0.5 {
            debug_assert!(!pred_matched.contains_key(&p) && !gt_matched.contains_key(&g));
            pred_matched.insert(p, g);
            gt_matched.insert(g, p);
            out.matches.push(InstanceMatch { pred: p, gt: g, class, iou });
        }
    }
    for &p in pred_area.keys() {
        let class = pred.class_of(p);
        if class != 0 && !pred_matched.contains_key(&p) {
            out.false_positives.push((p, class));
        }
    }
    for &g in gt_area.keys() {
        let class = gt.class_of(g);
        if class != 0 && !gt_matched.contains_key(&g) {
            out.false_negatives.push((g, class));
        }
    }
    Ok(out)
}

/// Dataset-level per-class counts; nucleus class `c` lives at index `c - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchStats {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub iou_sum: Vec<f64>,
}

impl MatchStats {
    pub fn new(num_nucleus_classes: usize) -> Self {
        let k = num_nucleus_classes;
        Self { tp: vec![0; k], fp: vec![0; k], fn_: vec![0; k], iou_sum: vec![0.0; k] }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    fn slot(&self, class: u8) -> Option<usize> {
        let i = (class as usize).checked_sub(1)?;
        (i < self.tp.len()).then_some(i)
    }

    pub fn add_image(&mut self, m: &ImageMatches) {
        for mm in &m.matches {
            if let Some(i) = self.slot(mm.class) {
                self.tp[i] += 1;
                self.iou_sum[i] += mm.iou;
            }
        }
        for &(_, c) in &m.false_positives {
            if let Some(i) = self.slot(c) {
                self.fp[i] += 1;
            }
        }
        for &(_, c) in &m.false_negatives {
            if let Some(i) = self.slot(c) {
                self.fn_[i] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MatchStats) {
        for i in 0..self.tp.len().min(other.tp.len()) {
            self.tp[i] += other.tp[i];
            self.fp[i] += other.fp[i];
            self.fn_[i] += other.fn_[i];
            self.iou_sum[i] += other.iou_sum[i];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PqReport {
    pub per_class: Vec<f64>,
    pub mpq: f64,
}

/// A class absent from both prediction and ground truth scores 0.
pub fn pq_plus(stats: &MatchStats) -> PqReport {
    let per_class: Vec<f64> = (0..stats.num_classes())
        .map(|i| {
            let denom = stats.tp[i] as f64 + 0.5 * stats.fp[i] as f64 + 0.5 * stats.fn_[i] as f64;
            if denom > 0.0 {
                stats.iou_sum[i] / denom
            } else {
                0.0
            }
        })
        .collect();
    let mpq = if per_class.is_empty() { 0.0 } else { per_class.iter().sum::<f64>() / per_class.len() as f64 };
    PqReport { per_class, mpq }
}

/// Per-image true and predicted instance counts per nucleus class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountTable {
    pub truth: Vec<Vec<u64>>,
    pub predicted: Vec<Vec<u64>>,
}

impl CountTable {
    pub fn push(&mut self, truth: Vec<u64>, predicted: Vec<u64>) -> Result<()> {
        if truth.len() != predicted.len() || self.truth.first().is_some_and(|r| r.len() != truth.len()) {
            return Err(Error::invalid("count table rows must have the same number of classes"));
        }
        self.truth.push(truth);
        self.predicted.push(predicted);
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.truth.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RSquared {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// `R^2 = 1 - SS_res / SS_tot` per class. A class with zero variance in the
/// truth scores 1 when predicted exactly and 0 otherwise.
pub fn r_squared(counts: &CountTable) -> Result<RSquared> {
    let n = counts.num_images();
    if n < 2 {
        return Err(Error::invalid(format!("R^2 needs at least 2 images, got {n}")));
    }
    let k = counts.truth[0].len();
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let t: Vec<f64> = counts.truth.iter().map(|r| r[c] as f64).collect();
            let p: Vec<f64> = counts.predicted.iter().map(|r| r[c] as f64).collect();
            let mean = t.iter().sum::<f64>() / n as f64;
            let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = t.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot == 0.0 {
                if ss_res == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect();
    let mean = if k == 0 { 0.0 } else { per_class.iter().sum::<f64>() / k as f64 };
    Ok(RSquared { per_class, mean })
}

/// Counts instances per nucleus class that have at least one pixel inside the
/// centered `crop x crop` window (offset `floor((size - crop) / 2)`); `None`
/// counts the whole image.
pub fn count_with_crop(inst: &LabeledInstances, crop: Option<usize>, num_classes: usize) -> Result<Vec<u64>> {
    let (h, w) = (inst.map.height(), inst.map.width());
    let (y0, x0, ch, cw) = match crop {
        None => (0, 0, h, w),
        Some(c) if c <= h && c <= w => ((h - c) / 2, (w - c) / 2, c, c),
        Some(c) => return Err(Error::invalid(format!("crop {c} larger than image {h}x{w}"))),
    };
    let mut seen = std::collections::BTreeSet::new();
    for y in y0..y0 + ch {
        for &l in &inst.map.labels()[y * w + x0..y * w + x0 + cw] {
            if l > 0 {
                seen.insert(l);
            }
        }
    }
    let mut counts = vec![0u64; num_classes.saturating_sub(1)];
    for l in seen {
        let c = inst.class_of(l) as usize;
        if c >= 1 && c < num_classes {
            counts[c - 1] += 1;
        }
    }
    Ok(counts)
}

/// Challenge report for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub pq: PqReport,
    pub stats: MatchStats,
    /// `None` for fewer than two images.
    pub r2: Option<RSquared>,
    pub counts: CountTable,
}

/// Evaluates `(prediction, ground truth)` pairs. Per-image work runs in
/// parallel; merging follows input order.
pub fn evaluate(pairs: &[(LabeledInstances, LabeledInstances)], num_classes: usize, crop: Option<usize>) -> Result<EvaluationReport> {
    let per_image: Vec<Result<(ImageMatches, Vec<u64>, Vec<u64>)>> = pairs
        .par_iter()
        .map(|(pred, gt)| {
            let m = match_instances(pred, gt)?;
            let t = count_with_crop(gt, crop, num_classes)?;
            let p = count_with_crop(pred, crop, num_classes)?;
            Ok((m, t, p))
        })
        .collect();
    let mut stats = MatchStats::new(num_classes.saturating_sub(1));
    let mut counts = CountTable::default();
    for r in per_image {
        let (m, t, p) = r?;
        stats.add_image(&m);
        counts.push(t, p)?;
    }
    let pq = pq_plus(&stats);
    let r2 = if counts.num_images() >= 2 { Some(r_squared(&counts)?) } else { None };
    Ok(EvaluationReport { pq, stats, r2, counts })
}

fn class_column(i: usize) -> String {
    CLASS_NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("c{}", i + 1))
}

impl EvaluationReport {
    fn columns(&self) -> Vec<String> {
        let mut cols = vec!["mPQ+".to_string(), "R2".to_string()];
        cols.extend((0..self.pq.per_class.len()).map(class_column));
        cols
    }

    fn values(&self) -> Vec<String> {
        let mut vals = vec![format!("{:.6}", self.pq.mpq)];
        vals.push(self.r2.as_ref().map_or("nan".to_string(), |r| format!("{:.6}", r.mean)));
        vals.extend(self.pq.per_class.iter().map(|v| format!("{v:.6}")));
        vals
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.columns().join(","), self.values().join(","))
    }

    /// Aligned text table with three-decimal values.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let mut vals = vec![format!("{:.3}", self.pq.mpq)];
        vals.push(self.r2.as_ref().map_or("n/a".to_string(), |r| format!("{:.3}", r.mean)));
        vals.extend(self.pq.per_class.iter().map(|v| format!("{v:.3}")));
        let widths: Vec<usize> = cols.iter().zip(&vals).map(|(c, v)| c.len().max(v.len())).collect();
        let row = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        format!("{}\n{}\n", row(&cols), row(&vals))
    }
}
