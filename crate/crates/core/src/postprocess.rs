//! Hysteresis-style post-processing: a strict-threshold marker is grown inside
//! a permissive-threshold mask by morphological reconstruction.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion, metrics_from_confusion, ConfusionCounts, MetricTable, DEFAULT_JACCARD_CUTOFF};
use crate::raster::{ensure_same_dims, pixelwise_multiply, threshold, BinaryMask, ProbMap, ThresholdPair};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::param(format!("connectivity must be 4 or 8, got {other:?}"))),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connectivity::Four => "4",
            Connectivity::Eight => "8",
        })
    }
}

fn neighbours(
    i: usize,
    width: usize,
    height: usize,
    conn: Connectivity,
) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % width) as isize, (i / width) as isize);
    conn.offsets().iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height).then(|| ny as usize * width + nx as usize)
    })
}

/// Component label per pixel (0 = background, labels numbered from 1 in
/// raster order of each component's first pixel) and each component's area.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if data[start] == 0 || labels[start] != 0 {
            continue;
        }
        areas.push(0);
        let label = areas.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            areas[label as usize - 1] += 1;
            for n in neighbours(i, w, h, conn) {
                if data[n] == 1 && labels[n] == 0 {
                    labels[n] = label;
                    queue.push_back(n);
                }
            }
        }
    }
    (labels, areas)
}

/// Keeps the component of maximum area; ties go to the one met first in raster order.
pub fn largest_component(mask: &BinaryMask, conn: Connectivity) -> BinaryMask {
    let (labels, areas) = label_components(mask, conn);
    let Some(best) = areas
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, usize)>, (i, a)| match acc {
            Some((_, best)) if best >= *a => acc,
            _ => Some((i, *a)),
        })
        .map(|(i, _)| i as u32 + 1)
    else {
        return mask.clone();
    };
    let data = labels.iter().map(|l| (*l == best) as u8).collect();
    BinaryMask::from_raw(mask.width(), mask.height(), data)
}

/// Union of the components of `mask` touched by `marker`.
///
/// The marker is intersected with the mask first, so it need not be a subset.
pub fn morphological_reconstruct(marker: &BinaryMask, mask: &BinaryMask, conn: Connectivity) -> Result<BinaryMask> {
    ensure_same_dims(mask.dims(), marker.dims())?;
    let (w, h) = mask.dims();
    let m = mask.data();
    let mut out: Vec<u8> = marker.data().iter().zip(m).map(|(a, b)| a & b).collect();
    let mut queue: VecDeque<usize> = out.iter().enumerate().filter(|(_, v)| **v == 1).map(|(i, _)| i).collect();
    while let Some(i) = queue.pop_front() {
        for n in neighbours(i, w, h, conn) {
            if m[n] == 1 && out[n] == 0 {
                out[n] = 1;
                queue.push_back(n);
            }
        }
    }
    Ok(BinaryMask::from_raw(w, h, out))
}

/// Marker from the largest `t_high` component, grown inside the `t_low` mask.
pub fn lesion_postprocess<T: Real>(prob: &ProbMap<T>, t: ThresholdPair, conn: Connectivity) -> BinaryMask {
    let marker = largest_component(&threshold(prob, t.t_high()).expect("validated pair"), conn);
    let mask = threshold(prob, t.t_low()).expect("validated pair");
    morphological_reconstruct(&marker, &mask, conn).expect("same dims")
}

/// Restricts the map to the lesion, then reconstructs without dropping any component.
pub fn attribute_postprocess<T: Real>(
    prob: &ProbMap<T>,
    lesion: &BinaryMask,
    t: ThresholdPair,
    conn: Connectivity,
) -> Result<BinaryMask> {
    let restricted = pixelwise_multiply(prob, lesion)?;
    Ok(restricted_postprocess(&restricted, t, conn))
}

fn restricted_postprocess<T: Real>(restricted: &ProbMap<T>, t: ThresholdPair, conn: Connectivity) -> BinaryMask {
    let marker = threshold(restricted, t.t_high()).expect("validated pair");
    let mask = threshold(restricted, t.t_low()).expect("validated pair");
    morphological_reconstruct(&marker, &mask, conn).expect("same dims")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MeanThresholdedJaccard,
    MeanJaccard,
    PooledJaccard,
    PooledDice,
}

impl Objective {
    pub fn evaluate(self, counts: &[ConfusionCounts], cutoff: f64) -> f64 {
        let ratio = |r: num_rational::Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
        match self {
            Objective::MeanThresholdedJaccard | Objective::MeanJaccard => {
                let sum: f64 = counts
                    .iter()
                    .map(|c| {
                        let r = metrics_from_confusion(c, cutoff);
                        if self == Objective::MeanJaccard {
                            r.jaccard
                        } else {
                            r.thresholded_jaccard
                        }
                    })
                    .sum();
                sum / counts.len() as f64
            }
            Objective::PooledJaccard => ratio(counts.iter().copied().sum::<ConfusionCounts>().jaccard_ratio()),
            Objective::PooledDice => ratio(counts.iter().copied().sum::<ConfusionCounts>().dice_ratio()),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_thresholded_jaccard" => Ok(Objective::MeanThresholdedJaccard),
            "mean_jaccard" => Ok(Objective::MeanJaccard),
            "pooled_jaccard" => Ok(Objective::PooledJaccard),
            "pooled_dice" => Ok(Objective::PooledDice),
            other => Err(Error::param(format!("unknown objective {other:?}"))),
        }
    }
}

pub const DEFAULT_T_HIGH_GRID: [f64; 7] = [0.8, 0.9, 0.95, 0.975, 0.99, 0.995, 0.996];

/// 0.30, 0.35, ..., 0.85.
pub fn default_t_low_grid() -> Vec<f64> {
    (0..12).map(|i| f64::from(30 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchSpec {
    pub t_high_candidates: Vec<f64>,
    pub t_low_candidates: Vec<f64>,
    pub objective: Objective,
    #[serde(default = "default_cutoff")]
    pub jaccard_cutoff: f64,
}

fn default_cutoff() -> f64 {
    DEFAULT_JACCARD_CUTOFF
}

impl GridSearchSpec {
    pub fn lesion_default() -> Self {
        Self {
            t_high_candidates: DEFAULT_T_HIGH_GRID.to_vec(),
            t_low_candidates: default_t_low_grid(),
            objective: Objective::MeanThresholdedJaccard,
            jaccard_cutoff: DEFAULT_JACCARD_CUTOFF,
        }
    }

    pub fn attribute_default() -> Self {
        Self {
            objective: Objective::PooledJaccard,
            ..Self::lesion_default()
        }
    }

    /// Valid pairs (`t_high >= t_low`) in grid order.
    pub fn pairs(&self) -> Result<Vec<ThresholdPair>> {
        if self.t_high_candidates.is_empty() || self.t_low_candidates.is_empty() {
            return Err(Error::param("threshold grids must be non-empty"));
        }
        for v in self.t_high_candidates.iter().chain(&self.t_low_candidates) {
            if !(*v > 0.0 && *v < 1.0) {
                return Err(Error::param(format!("grid candidate {v} outside (0, 1)")));
            }
        }
        let pairs: Vec<ThresholdPair> = self
            .t_high_candidates
            .iter()
            .flat_map(|h| self.t_low_candidates.iter().map(move |l| (*h, *l)))
            .filter(|(h, l)| h >= l)
            .map(|(h, l)| ThresholdPair::new(h, l))
            .collect::<Result<_>>()?;
        if pairs.is_empty() {
            return Err(Error::param("no grid pair satisfies t_high >= t_low"));
        }
        Ok(pairs)
    }
}

/// Which post-processing chain the grid search scores.
#[derive(Debug, Clone, Copy)]
pub enum GridTarget<'a> {
    Lesion,
    /// Attribute maps restricted to these lesion masks, aligned with the maps.
    Attribute { lesions: &'a [BinaryMask] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub t_high: f64,
    pub t_low: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: ThresholdPair,
    pub value: f64,
    /// Every evaluated pair in grid order.
    pub rows: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn table(&self) -> MetricTable {
        let mut t = MetricTable::new("pair", &["t_high", "t_low", "objective", "selected"]);
        for r in &self.rows {
            let selected = r.t_high == self.best.t_high() && r.t_low == self.best.t_low();
            t.push(
                format!("{}/{}", r.t_high, r.t_low),
                vec![r.t_high, r.t_low, r.objective, f64::from(u8::from(selected))],
            );
        }
        t
    }
}

/// Higher objective wins; ties go to the higher `t_high`, then the higher `t_low`.
pub fn better(a: &GridRow, b: &GridRow) -> bool {
    (a.objective, a.t_high, a.t_low) > (b.objective, b.t_high, b.t_low)
}

/// Exhaustive search over every valid grid pair.
pub fn grid_search<T: Real>(
    probs: &[ProbMap<T>],
    gts: &[BinaryMask],
    spec: &GridSearchSpec,
    target: GridTarget<'_>,
    conn: Connectivity,
) -> Result<GridSearchResult> {
    if probs.is_empty() {
        return Err(Error::Data("grid search needs at least one image".into()));
    }
    if probs.len() != gts.len() {
        return Err(Error::Data(format!("{} maps but {} ground truths", probs.len(), gts.len())));
    }
    for (p, g) in probs.iter().zip(gts) {
        ensure_same_dims(g.dims(), p.dims())?;
    }
    let pairs = spec.pairs()?;
    let restricted: Option<Vec<ProbMap<T>>> = match target {
        GridTarget::Lesion => None,
        GridTarget::Attribute { lesions } => {
            if lesions.len() != probs.len() {
                return Err(Error::Data(format!(
                    "{} maps but {} lesion masks",
                    probs.len(),
                    lesions.len()
                )));
            }
            Some(
                probs
                    .par_iter()
                    .zip(lesions)
                    .map(|(p, l)| pixelwise_multiply(p, l))
                    .collect::<Result<_>>()?,
            )
        }
    };
    let n = probs.len();
    // one job per (pair, image); collected in index order so the reduction is schedule-independent
    let counts: Vec<ConfusionCounts> = (0..pairs.len() * n)
        .into_par_iter()
        .map(|k| {
            let (t, i) = (pairs[k / n], k % n);
            let out = match &restricted {
                None => lesion_postprocess(&probs[i], t, conn),
                Some(r) => restricted_postprocess(&r[i], t, conn),
            };
            confusion(&out, &gts[i]).expect("dims checked")
        })
        .collect();
    let rows: Vec<GridRow> = pairs
        .iter()
        .zip(counts.chunks(n))
        .map(|(t, c)| GridRow {
            t_high: t.t_high(),
            t_low: t.t_low(),
            objective: spec.objective.evaluate(c, spec.jaccard_cutoff),
        })
        .collect();
    let best = rows
        .iter()
        .copied()
        .reduce(|a, b| if better(&b, &a) { b } else { a })
        .expect("at least one pair");
    Ok(GridSearchResult {
        best: ThresholdPair::new(best.t_high, best.t_low)?,
        value: best.objective,
        rows,
    })
}
