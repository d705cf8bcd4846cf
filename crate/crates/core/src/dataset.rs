//! Dataset manifests, cross-validation folds and negative-class subsampling.
//!
//! A manifest is a JSON-lines file. An optional first line carries the header
//! (`{"seed": 7, "folds": 5}`); every other line is one [`DatasetRecord`].
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rasterio::read_mask;
use crate::rng::mix;

pub const DEFAULT_FOLDS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    PigmentNetwork,
    Globules,
    MiliaLikeCyst,
    NegativeNetwork,
    Streaks,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 5] = [
        AttributeKind::PigmentNetwork,
        AttributeKind::Globules,
        AttributeKind::MiliaLikeCyst,
        AttributeKind::NegativeNetwork,
        AttributeKind::Streaks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::PigmentNetwork => "pigment_network",
            AttributeKind::Globules => "globules",
            AttributeKind::MiliaLikeCyst => "milia_like_cyst",
            AttributeKind::NegativeNetwork => "negative_network",
            AttributeKind::Streaks => "streaks",
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttributeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown attribute `{s}`")))
    }
}

/// One value per lesion attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerAttribute<T> {
    pub pigment_network: T,
    pub globules: T,
    pub milia_like_cyst: T,
    pub negative_network: T,
    pub streaks: T,
}

impl<T> PerAttribute<T> {
    pub fn get(&self, kind: AttributeKind) -> &T {
        match kind {
            AttributeKind::PigmentNetwork => &self.pigment_network,
            AttributeKind::Globules => &self.globules,
            AttributeKind::MiliaLikeCyst => &self.milia_like_cyst,
            AttributeKind::NegativeNetwork => &self.negative_network,
            AttributeKind::Streaks => &self.streaks,
        }
    }

    pub fn get_mut(&mut self, kind: AttributeKind) -> &mut T {
        match kind {
            AttributeKind::PigmentNetwork => &mut self.pigment_network,
            AttributeKind::Globules => &mut self.globules,
            AttributeKind::MiliaLikeCyst => &mut self.milia_like_cyst,
            AttributeKind::NegativeNetwork => &mut self.negative_network,
            AttributeKind::Streaks => &mut self.streaks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub case_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_gt_path: Option<PathBuf>,
    #[serde(default)]
    pub attribute_gt_paths: PerAttribute<Option<PathBuf>>,
    #[serde(default)]
    pub attribute_present: PerAttribute<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
}

impl DatasetRecord {
    pub fn new(case_id: impl Into<String>, image_path: impl Into<PathBuf>) -> Self {
        Self {
            case_id: case_id.into(),
            image_path: image_path.into(),
            lesion_gt_path: None,
            attribute_gt_paths: PerAttribute::default(),
            attribute_present: PerAttribute::default(),
            fold: None,
        }
    }

    pub fn is_positive(&self, kind: AttributeKind) -> bool {
        *self.attribute_present.get(kind)
    }

    fn presence_signature(&self) -> u8 {
        AttributeKind::ALL
            .iter()
            .enumerate()
            .fold(0, |acc, (i, k)| acc | ((self.is_positive(*k) as u8) << i))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_folds")]
    folds: u32,
}

fn default_folds() -> u32 {
    DEFAULT_FOLDS
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<DatasetRecord>,
    seed: u64,
    folds: u32,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<DatasetRecord>, seed: u64) -> Result<Self> {
        Self::with_folds(records, seed, DEFAULT_FOLDS)
    }

    pub fn with_folds(records: Vec<DatasetRecord>, seed: u64, folds: u32) -> Result<Self> {
        let m = Self {
            records,
            seed,
            folds,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.folds < 1 {
            return Err(Error::Data("manifest fold count must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.case_id.is_empty() {
                return Err(Error::Data("empty case_id".into()));
            }
            if !seen.insert(r.case_id.as_str()) {
                return Err(Error::Data(format!("duplicate case_id `{}`", r.case_id)));
            }
            if let Some(f) = r.fold {
                if f >= self.folds {
                    return Err(Error::Data(format!(
                        "case `{}` has fold {f}, outside [0, {}]",
                        r.case_id,
                        self.folds - 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn folds(&self) -> u32 {
        self.folds
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Same manifest with every file path made absolute, so it can be written anywhere.
    pub fn absolutized(&self) -> Result<Manifest> {
        let abs = |p: &Path| std::path::absolute(self.resolve(p)).map_err(|e| Error::io(p, e));
        let mut records = self.records.clone();
        for r in &mut records {
            r.image_path = abs(&r.image_path)?;
            if let Some(p) = &r.lesion_gt_path {
                r.lesion_gt_path = Some(abs(p)?);
            }
            for k in AttributeKind::ALL {
                if let Some(p) = r.attribute_gt_paths.get(k).clone() {
                    *r.attribute_gt_paths.get_mut(k) = Some(abs(&p)?);
                }
            }
        }
        Ok(Manifest {
            records,
            seed: self.seed,
            folds: self.folds,
            base_dir: PathBuf::new(),
        })
    }

    pub fn get(&self, case_id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.case_id == case_id)
    }

    /// Number of records per fold; records without a fold are not counted.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds as usize];
        for f in self.records.iter().filter_map(|r| r.fold) {
            sizes[f as usize] += 1;
        }
        sizes
    }

    pub fn positives(&self, kind: AttributeKind) -> usize {
        self.records.iter().filter(|r| r.is_positive(kind)).count()
    }

    pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut header: Option<Header> = None;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: {e}", lineno + 1),
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(parse_err)?;
            let is_record = value.get("case_id").is_some();
            if !is_record && header.is_none() && records.is_empty() {
                header = Some(serde_json::from_value(value).map_err(parse_err)?);
            } else {
                records.push(serde_json::from_value(value).map_err(parse_err)?);
            }
        }
        let header = header.unwrap_or(Header {
            seed: 0,
            folds: DEFAULT_FOLDS,
        });
        let m = Self {
            records,
            seed: header.seed,
            folds: header.folds,
            base_dir: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            seed: self.seed,
            folds: self.folds,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Recomputes every attribute presence flag whose ground truth file is
    /// listed and rejects disagreements with the declared flag.
    pub fn verify_presence(&self) -> Result<()> {
        let checks: Vec<(&DatasetRecord, AttributeKind, &PathBuf)> = self
            .records
            .iter()
            .flat_map(|r| {
                AttributeKind::ALL
                    .into_iter()
                    .filter_map(move |k| r.attribute_gt_paths.get(k).as_ref().map(|p| (r, k, p)))
            })
            .collect();
        checks.par_iter().try_for_each(|(r, k, p)| {
            let present = read_mask(self.resolve(p))?.any();
            if present != r.is_positive(*k) {
                return Err(Error::Contradiction(format!(
                    "case `{}`: {k} declared {} but its ground truth has {} positive pixels",
                    r.case_id,
                    if r.is_positive(*k) { "present" } else { "absent" },
                    if present { "some" } else { "no" },
                )));
            }
            Ok(())
        })
    }
}

/// Reads, validates and presence-checks a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = Manifest::parse_jsonl(&text, path)?;
    m.verify_presence()?;
    Ok(m)
}

fn ordering_key(seed: u64, purpose: &str, case_id: &str) -> (u64, String) {
    (mix(seed, purpose, case_id), case_id.to_string())
}

/// Random partition into `k` folds whose sizes differ by at most one.
///
/// Records are ranked by a seed-derived hash of their case id, so the result
/// does not depend on record order. With `stratify`, records are grouped by
/// their attribute-presence pattern before dealing, which spreads each pattern
/// evenly over the folds.
pub fn assign_folds(manifest: &Manifest, k: u32, seed: u64, stratify: bool) -> Result<Manifest> {
    if k < 2 {
        return Err(Error::param(format!("fold count {k} must be at least 2")));
    }
    if manifest.len() < k as usize {
        return Err(Error::param(format!(
            "{} records cannot fill {k} folds",
            manifest.len()
        )));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    let keys: Vec<_> = manifest
        .records
        .iter()
        .map(|r| ordering_key(seed, "fold", &r.case_id))
        .collect();
    if stratify {
        order.sort_by(|&a, &b| {
            let sa = manifest.records[a].presence_signature();
            let sb = manifest.records[b].presence_signature();
            sa.cmp(&sb).then_with(|| keys[a].cmp(&keys[b]))
        });
    } else {
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    }
    let mut records = manifest.records.clone();
    for (rank, &idx) in order.iter().enumerate() {
        records[idx].fold = Some(rank as u32 % k);
    }
    Ok(Manifest {
        records,
        seed,
        folds: k,
        base_dir: manifest.base_dir.clone(),
    })
}

/// Keeps every positive record for `kind` plus `min(#neg, #pos)` negatives
/// drawn uniformly without replacement. Record order is preserved.
pub fn subsample_negatives(manifest: &Manifest, kind: AttributeKind, seed: u64) -> Result<Manifest> {
    let positives = manifest.positives(kind);
    if positives == 0 {
        return Err(Error::EmptyClass(format!("no record is positive for {kind}")));
    }
    let purpose = format!("subsample:{kind}");
    let mut negatives: Vec<(u64, String)> = manifest
        .records
        .iter()
        .filter(|r| !r.is_positive(kind))
        .map(|r| ordering_key(seed, &purpose, &r.case_id))
        .collect();
    negatives.sort();
    let keep: HashSet<String> = negatives
        .into_iter()
        .take(positives)
        .map(|(_, id)| id)
        .collect();
    let records = manifest
        .records
        .iter()
        .filter(|r| r.is_positive(kind) || keep.contains(&r.case_id))
        .cloned()
        .collect();
    Ok(Manifest {
        records,
        seed: manifest.seed,
        folds: manifest.folds,
        base_dir: manifest.base_dir.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryMask;
    use crate::rasterio::write_mask;

    fn synthetic(n: usize, positive: impl Fn(usize) -> bool) -> Manifest {
        let records = (0..n)
            .map(|i| {
                let mut r = DatasetRecord::new(format!("case_{i:04}"), format!("img/{i}.png"));
                r.attribute_present.streaks = positive(i);
                r
            })
            .collect();
        Manifest::new(records, 0).unwrap()
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = Manifest::parse_jsonl("", Path::new("m.jsonl")).unwrap();
        assert!(m.is_empty());
        let m = Manifest::parse_jsonl("{\"seed\": 3}\n", Path::new("m.jsonl")).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.seed(), 3);
    }

    #[test]
    fn parse_round_trip() {
        let text = r#"{"seed": 11, "folds": 5}
{"case_id": "a", "image_path": "a.jpg", "attribute_present": {"streaks": true}, "fold": 4}
{"case_id": "b", "image_path": "b.jpg", "lesion_gt_path": "b_seg.png", "attribute_gt_paths": {"globules": "b_glob.png"}}
"#;
        let m = Manifest::parse_jsonl(text, Path::new("/data/m.jsonl")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.seed(), 11);
        assert!(m.records()[0].is_positive(AttributeKind::Streaks));
        assert_eq!(m.records()[0].fold, Some(4));
        assert_eq!(
            m.resolve(m.records()[1].attribute_gt_paths.globules.as_ref().unwrap()),
            PathBuf::from("/data/b_glob.png")
        );
        let again = Manifest::parse_jsonl(&m.to_jsonl(), Path::new("/data/m.jsonl")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let o = Path::new("m.jsonl");
        assert!(matches!(Manifest::parse_jsonl("{not json", o), Err(Error::Parse { .. })));
        let dup = "{\"case_id\":\"a\",\"image_path\":\"x\"}\n{\"case_id\":\"a\",\"image_path\":\"y\"}";
        assert!(matches!(Manifest::parse_jsonl(dup, o), Err(Error::Data(_))));
        let bad_fold = "{\"case_id\":\"a\",\"image_path\":\"x\",\"fold\":5}";
        assert!(matches!(Manifest::parse_jsonl(bad_fold, o), Err(Error::Data(_))));
        let bad_attr = "{\"case_id\":\"a\",\"image_path\":\"x\",\"attribute_present\":{\"dots\":true}}";
        assert!(Manifest::parse_jsonl(bad_attr, o).is_err());
        assert!(matches!(load_manifest("/nonexistent/m.jsonl"), Err(Error::Io { .. })));
    }

    #[test]
    fn declared_presence_must_match_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        write_mask(&BinaryMask::zeros(4, 4).unwrap(), dir.path().join("s.png")).unwrap();
        let text = r#"{"case_id": "a", "image_path": "a.jpg", "attribute_gt_paths": {"streaks": "s.png"}, "attribute_present": {"streaks": true}}"#;
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Contradiction(_))));
        std::fs::write(&path, text.replace("true", "false")).unwrap();
        assert_eq!(load_manifest(&path).unwrap().len(), 1);
    }

    #[test]
    fn ten_record_fixture_folds() {
        let folds = [0, 1, 2, 3, 4, 4, 3, 2, 1, 0];
        let records = folds
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut r = DatasetRecord::new(format!("c{i}"), "x.png");
                r.fold = Some(*f);
                r
            })
            .collect();
        let m = Manifest::new(records, 0).unwrap();
        assert_eq!(m.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn fold_sizes_balance() {
        let m = assign_folds(&synthetic(10, |_| false), 5, 1, false).unwrap();
        assert_eq!(m.fold_sizes(), vec![2; 5]);
        let m = assign_folds(&synthetic(11, |_| false), 5, 1, false).unwrap();
        let mut sizes = m.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert!(assign_folds(&synthetic(4, |_| false), 5, 1, false).is_err());
        assert!(assign_folds(&synthetic(4, |_| false), 1, 1, false).is_err());
    }

    #[test]
    fn folds_are_deterministic_and_order_free() {
        let m = synthetic(37, |i| i % 7 == 0);
        let a = assign_folds(&m, 5, 9, false).unwrap();
        let b = assign_folds(&m, 5, 9, false).unwrap();
        assert_eq!(a, b);
        let mut reversed = m.records().to_vec();
        reversed.reverse();
        let r = assign_folds(&Manifest::new(reversed, 0).unwrap(), 5, 9, false).unwrap();
        for rec in a.records() {
            assert_eq!(r.get(&rec.case_id).unwrap().fold, rec.fold);
        }
        let c = assign_folds(&m, 5, 10, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_folds_spread_positives() {
        let m = synthetic(50, |i| i < 10);
        let s = assign_folds(&m, 5, 2, true).unwrap();
        let mut per_fold = [0; 5];
        for r in s.records().iter().filter(|r| r.is_positive(AttributeKind::Streaks)) {
            per_fold[r.fold.unwrap() as usize] += 1;
        }
        assert_eq!(per_fold, [2; 5]);
        assert_eq!(s.fold_sizes(), vec![10; 5]);
    }

    #[test]
    fn subsample_examples() {
        let m = synthetic(20, |i| i % 4 == 0);
        let s = subsample_negatives(&m, AttributeKind::Streaks, 5).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.positives(AttributeKind::Streaks), 5);
        let all = synthetic(6, |_| true);
        assert_eq!(subsample_negatives(&all, AttributeKind::Streaks, 5).unwrap(), all);
        let none = synthetic(6, |_| false);
        assert!(matches!(
            subsample_negatives(&none, AttributeKind::Streaks, 5),
            Err(Error::EmptyClass(_))
        ));
        // more positives than negatives keeps every negative
        let many = synthetic(10, |i| i < 7);
        assert_eq!(subsample_negatives(&many, AttributeKind::Streaks, 1).unwrap().len(), 10);
    }

    #[test]
    fn attribute_names_parse() {
        for k in AttributeKind::ALL {
            assert_eq!(k.as_str().parse::<AttributeKind>().unwrap(), k);
        }
        assert!("dots".parse::<AttributeKind>().is_err());
    }
}
