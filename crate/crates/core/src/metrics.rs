//! Pixel confusion counts, segmentation metrics and report tables.
//!
//! Empty cases: when `tp + fp + fn = 0` Jaccard and Dice are 1, and a
//! sensitivity or specificity whose denominator is zero is reported as 1.

use std::path::Path;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask};

/// Jaccard cutoff of the thresholded-Jaccard score.
pub const DEFAULT_JACCARD_CUTOFF: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Exact Jaccard index; `1` when prediction and truth are both empty.
    pub fn jaccard_ratio(&self) -> Ratio<u64> {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            Ratio::from_integer(1)
        } else {
            Ratio::new(self.tp, den)
        }
    }

    pub fn dice_ratio(&self) -> Ratio<u64> {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            Ratio::from_integer(1)
        } else {
            Ratio::new(2 * self.tp, den)
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    ensure_same_dims(gt.dims(), pred.dims())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub thresholded_jaccard: f64,
    pub jaccard: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 6] = [
        "thresholded_jaccard",
        "jaccard",
        "dice",
        "accuracy",
        "sensitivity",
        "specificity",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.thresholded_jaccard,
            self.jaccard,
            self.dice,
            self.accuracy,
            self.sensitivity,
            self.specificity,
        ]
    }

    /// Arithmetic mean of each column.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::Data("cannot average an empty list of metric reports".into()));
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let [thresholded_jaccard, jaccard, dice, accuracy, sensitivity, specificity] = acc.map(|v| v / n);
        Ok(MetricReport {
            thresholded_jaccard,
            jaccard,
            dice,
            accuracy,
            sensitivity,
            specificity,
        })
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Jaccard below the cutoff scores zero; at or above it scores itself.
pub fn thresholded_jaccard(jaccard: f64, cutoff: f64) -> f64 {
    if jaccard >= cutoff {
        jaccard
    } else {
        0.0
    }
}

pub fn metrics_from_confusion(c: &ConfusionCounts, jaccard_cutoff: f64) -> MetricReport {
    let jaccard = ratio_f64(c.jaccard_ratio());
    MetricReport {
        thresholded_jaccard: thresholded_jaccard(jaccard, jaccard_cutoff),
        jaccard,
        dice: ratio_f64(c.dice_ratio()),
        accuracy: rate(c.tp + c.tn, c.total()),
        sensitivity: rate(c.tp, c.tp + c.fn_),
        specificity: rate(c.tn, c.tn + c.fp),
    }
}

fn aligned(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

pub fn confusions(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<Vec<ConfusionCounts>> {
    aligned(preds, gts)?;
    preds.par_iter().zip(gts).map(|(p, g)| confusion(p, g)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledScores {
    pub jaccard: f64,
    pub dice: f64,
}

/// Jaccard and Dice of the counts summed over every image.
pub fn pooled_attribute_metrics(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<PooledScores> {
    let total: ConfusionCounts = confusions(preds, gts)?.into_iter().sum();
    Ok(PooledScores {
        jaccard: ratio_f64(total.jaccard_ratio()),
        dice: ratio_f64(total.dice_ratio()),
    })
}

/// Per-image reports and their arithmetic mean.
pub fn evaluate_task1(
    preds: &[BinaryMask],
    gts: &[BinaryMask],
    cutoff: f64,
) -> Result<(Vec<MetricReport>, MetricReport)> {
    if preds.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }
    let per_image: Vec<MetricReport> = confusions(preds, gts)?
        .iter()
        .map(|c| metrics_from_confusion(c, cutoff))
        .collect();
    let mean = MetricReport::mean(&per_image)?;
    Ok((per_image, mean))
}

/// Labelled rows of numeric columns, written as CSV or JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub key: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn new(key: &str, columns: &[&str]) -> Self {
        Self {
            key: key.to_owned(),
            columns: columns.iter().map(|c| (*c).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Data(format!("csv encoding failed: {e}"));
        w.write_record(std::iter::once(&self.key).chain(&self.columns)).map_err(fail)?;
        for (label, values) in &self.rows {
            let fields = std::iter::once(label.clone()).chain(values.iter().map(f64::to_string));
            w.write_record(fields).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|(label, values)| {
                let mut obj = serde_json::Map::new();
                obj.insert(self.key.clone(), label.clone().into());
                for (c, v) in self.columns.iter().zip(values) {
                    obj.insert(c.clone(), (*v).into());
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json values serialize");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
