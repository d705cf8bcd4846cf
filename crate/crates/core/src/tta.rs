//! Test-time augmentation, fold/model ensembling and the predictor boundary.
//!
//! A [`Predictor`] turns a preprocessed image into a probability map of the
//! same size. Any model, neural or classical, plugs in here; the pipeline
//! around it never depends on how maps are produced.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::augment::{apply_photometric, gaussian_blur, Contrast, PhotometricParams, Sharpness};
use crate::error::{Error, Result};
use crate::preprocess::{normalize, NormalizationParams, NormalizationScheme, Resize};
use crate::raster::{BinaryMask, Image, NormImage, Permutation, ProbMap};
use crate::rasterio::{read_probmap, write_image};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtaKind {
    Identity,
    HFlip,
    VFlip,
    /// Contrast enhancement of the counter-clockwise quarter turn.
    Rot90Contrast,
    Sharpen,
}

impl TtaKind {
    pub const ALL: [TtaKind; 5] = [
        TtaKind::Identity,
        TtaKind::HFlip,
        TtaKind::VFlip,
        TtaKind::Rot90Contrast,
        TtaKind::Sharpen,
    ];

    /// Coordinate change applied to the image, if any.
    pub fn geometry(self) -> Option<Permutation> {
        match self {
            TtaKind::HFlip => Some(Permutation::FlipHorizontal),
            TtaKind::VFlip => Some(Permutation::FlipVertical),
            TtaKind::Rot90Contrast => Some(Permutation::Rot90),
            TtaKind::Identity | TtaKind::Sharpen => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TtaKind::Identity => "identity",
            TtaKind::HFlip => "h_flip",
            TtaKind::VFlip => "v_flip",
            TtaKind::Rot90Contrast => "rot90_contrast",
            TtaKind::Sharpen => "sharpen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub variants: Vec<TtaKind>,
    /// Signed contrast strength of the rotated variant.
    pub contrast_strength: f64,
    pub sharpen_amount: f64,
    pub sharpen_sigma: f64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            variants: TtaKind::ALL.to_vec(),
            contrast_strength: 0.5,
            sharpen_amount: 0.5,
            sharpen_sigma: 1.0,
        }
    }
}

impl TtaConfig {
    /// Only the unmodified image; fixtures pass through unchanged.
    pub fn identity_only() -> Self {
        Self {
            variants: vec![TtaKind::Identity],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("tta.variants must not be empty".into()));
        }
        if !(-1.0..=1.0).contains(&self.contrast_strength) {
            return Err(Error::Config(format!(
                "tta.contrast_strength {} outside [-1, 1]",
                self.contrast_strength
            )));
        }
        if !(self.sharpen_amount >= 0.0 && self.sharpen_amount.is_finite()) {
            return Err(Error::Config("tta.sharpen_amount must be finite and >= 0".into()));
        }
        if !(self.sharpen_sigma > 0.0 && self.sharpen_sigma.is_finite()) {
            return Err(Error::Config("tta.sharpen_sigma must be finite and > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaVariant {
    pub kind: TtaKind,
    pub image: Image,
}

/// Transformed copies of `image`, one per configured variant, in config order.
pub fn tta_expand(image: &Image, config: &TtaConfig) -> Result<Vec<TtaVariant>> {
    config.validate()?;
    config
        .variants
        .iter()
        .map(|&kind| {
            let image = match kind {
                TtaKind::Identity => image.clone(),
                TtaKind::HFlip | TtaKind::VFlip => image.permute(kind.geometry().expect("geometric kind")),
                TtaKind::Rot90Contrast => {
                    let p = PhotometricParams {
                        contrast: Contrast::with_delta(config.contrast_strength),
                        ..Default::default()
                    };
                    apply_photometric(&image.permute(Permutation::Rot90), &p)?
                }
                TtaKind::Sharpen => {
                    let p = PhotometricParams {
                        sharpness: Sharpness::Unsharp {
                            amount: config.sharpen_amount,
                            sigma: config.sharpen_sigma,
                        },
                        ..Default::default()
                    };
                    apply_photometric(image, &p)?
                }
            };
            Ok(TtaVariant { kind, image })
        })
        .collect()
}

/// Per-pixel mean that does not depend on the order of `maps`.
fn order_free_mean<T: Real>(maps: &[&ProbMap<T>]) -> ProbMap<T> {
    let (w, h) = maps[0].dims();
    let n = maps.len() as f64;
    let mut column = Vec::with_capacity(maps.len());
    let data = (0..w * h)
        .map(|i| {
            column.clear();
            column.extend(maps.iter().map(|m| m.data()[i].as_f64()));
            column.sort_by(f64::total_cmp);
            let mean = column.iter().sum::<f64>() / n;
            T::of(mean).max(T::zero()).min(T::one())
        })
        .collect();
    ProbMap::from_raw(w, h, data)
}

/// Undoes each variant's geometry, then averages.
pub fn tta_merge<T: Real>(preds: &[ProbMap<T>], kinds: &[TtaKind]) -> Result<ProbMap<T>> {
    if preds.is_empty() || preds.len() != kinds.len() {
        return Err(Error::PredictorContract(format!(
            "{} predictions for {} TTA variants",
            preds.len(),
            kinds.len()
        )));
    }
    let restored: Vec<ProbMap<T>> = preds
        .iter()
        .zip(kinds)
        .map(|(p, k)| match k.geometry() {
            Some(g) => p.permute(g.inverse()),
            None => p.clone(),
        })
        .collect();
    let dims = restored[0].dims();
    if let Some(bad) = restored.iter().find(|m| m.dims() != dims) {
        return Err(Error::PredictorContract(format!(
            "TTA predictions disagree in size after inversion: {:?} vs {:?}",
            dims,
            bad.dims()
        )));
    }
    Ok(order_free_mean(&restored.iter().collect::<Vec<_>>()))
}

/// Pixelwise mean of aligned maps; the result is independent of their order.
pub fn ensemble_mean<T: Real>(maps: &[ProbMap<T>]) -> Result<ProbMap<T>> {
    let Some(first) = maps.first() else {
        return Err(Error::Data("cannot ensemble an empty list of maps".into()));
    };
    for m in maps {
        crate::raster::ensure_same_dims(first.dims(), m.dims())?;
    }
    Ok(order_free_mean(&maps.iter().collect::<Vec<_>>()))
}

/// One prediction request.
#[derive(Debug, Clone, Copy)]
pub struct PredictorInput<'a> {
    pub case_id: &'a str,
    pub fold: u32,
    pub variant: TtaKind,
    /// Transformed 8-bit image.
    pub image: &'a Image,
    /// The same image after the encoder's normalization.
    pub normalized: &'a NormImage<f32>,
}

/// Produces a probability map matching the input's spatial size.
///
/// Implementations must be deterministic and safe to call from several threads.
pub trait Predictor: Send + Sync {
    fn predict(&self, input: &PredictorInput<'_>) -> Result<ProbMap<f32>>;

    fn predict_batch(&self, inputs: &[PredictorInput<'_>]) -> Result<Vec<ProbMap<f32>>> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }
}

/// Normalization and TTA settings shared by every prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSpec {
    pub scheme: NormalizationScheme,
    pub params: NormalizationParams,
    pub tta: TtaConfig,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        Self {
            scheme: NormalizationScheme::Unit,
            params: NormalizationParams::default(),
            tta: TtaConfig::default(),
        }
    }
}

/// Merged map plus the number of raw predictions that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub map: ProbMap<f32>,
    pub raw_predictions: usize,
}

/// Expand, normalize, predict and merge for one fold.
pub fn predict_with_tta(
    predictor: &dyn Predictor,
    case_id: &str,
    fold: u32,
    image: &Image,
    spec: &InferenceSpec,
) -> Result<Prediction> {
    let variants = tta_expand(image, &spec.tta)?;
    let normalized: Vec<NormImage<f32>> = variants
        .iter()
        .map(|v| normalize(&v.image, spec.scheme, &spec.params))
        .collect();
    let inputs: Vec<PredictorInput<'_>> = variants
        .iter()
        .zip(&normalized)
        .map(|(v, n)| PredictorInput {
            case_id,
            fold,
            variant: v.kind,
            image: &v.image,
            normalized: n,
        })
        .collect();
    let preds = predictor.predict_batch(&inputs)?;
    if preds.len() != inputs.len() {
        return Err(Error::PredictorContract(format!(
            "predictor returned {} maps for {} inputs",
            preds.len(),
            inputs.len()
        )));
    }
    for (p, v) in preds.iter().zip(&variants) {
        if p.dims() != v.image.dims() {
            return Err(Error::PredictorContract(format!(
                "case {case_id}, fold {fold}, variant {}: map is {:?}, image is {:?}",
                v.kind.as_str(),
                p.dims(),
                v.image.dims()
            )));
        }
    }
    let kinds: Vec<TtaKind> = variants.iter().map(|v| v.kind).collect();
    Ok(Prediction {
        map: tta_merge(&preds, &kinds)?,
        raw_predictions: preds.len(),
    })
}

/// Averages the TTA-merged maps of every fold; fold `i` is served by `folds[i]`.
pub fn fold_ensemble(
    folds: &[&dyn Predictor],
    expected_folds: usize,
    case_id: &str,
    image: &Image,
    spec: &InferenceSpec,
) -> Result<Prediction> {
    if folds.len() != expected_folds || folds.is_empty() {
        return Err(Error::Config(format!(
            "expected one predictor per fold ({expected_folds}), got {}",
            folds.len()
        )));
    }
    let per_fold: Vec<Prediction> = folds
        .iter()
        .enumerate()
        .map(|(i, p)| predict_with_tta(*p, case_id, i as u32, image, spec))
        .collect::<Result<_>>()?;
    let raw_predictions = per_fold.iter().map(|p| p.raw_predictions).sum();
    let maps: Vec<ProbMap<f32>> = per_fold.into_iter().map(|p| p.map).collect();
    Ok(Prediction {
        map: ensemble_mean(&maps)?,
        raw_predictions,
    })
}

/// Colour distance from the mean border colour, blurred and scaled into `[0, 1]`.
///
/// Lesions sit inside a skin-coloured surround, so strong deviation from the
/// border colour is a usable foreground cue without any trained model.
pub fn baseline_saliency(image: &Image) -> ProbMap<f32> {
    let (w, h) = image.dims();
    let mut border = [0.0f64; 3];
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                let px = image.pixel(x, y);
                for c in 0..3 {
                    border[c] += f64::from(px[c]);
                }
                count += 1;
            }
        }
    }
    let border = border.map(|v| v / count as f64);
    let dist: Vec<f64> = image
        .data()
        .chunks_exact(3)
        .map(|px| {
            px.iter()
                .zip(&border)
                .map(|(v, b)| (f64::from(*v) - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let sigma = (w.min(h) as f64 / 100.0).max(0.5);
    let blurred = gaussian_blur(&dist, w, h, 1, sigma);
    // a floor keeps low-contrast images from being stretched to full range
    let scale = blurred.iter().copied().fold(BASELINE_CONTRAST_FLOOR, f64::max);
    let data = blurred.iter().map(|v| (v / scale).clamp(0.0, 1.0) as f32).collect();
    ProbMap::from_raw(w, h, data)
}

/// Colour distance (8-bit RGB) below which an image is treated as featureless.
pub const BASELINE_CONTRAST_FLOOR: f64 = 48.0;

/// Classical stand-in for a trained network; see [`baseline_saliency`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselinePredictor;

impl Predictor for BaselinePredictor {
    fn predict(&self, input: &PredictorInput<'_>) -> Result<ProbMap<f32>> {
        Ok(baseline_saliency(input.image))
    }
}

/// Serves stored 16-bit maps named `<case_id>.png`.
///
/// Geometric variants receive the stored map moved into the variant's
/// coordinates, so TTA merging returns the stored map. Maps whose size differs
/// from the input are resampled bilinearly.
#[derive(Debug, Clone)]
pub struct FixturePredictor {
    dir: PathBuf,
}

impl FixturePredictor {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::MissingFixture(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        Ok(Self { dir })
    }

    pub fn load(&self, case_id: &str) -> Result<ProbMap<f32>> {
        let path = self.dir.join(format!("{case_id}.png"));
        if !path.is_file() {
            return Err(Error::MissingFixture(format!(
                "no stored map for case {case_id} in {}",
                self.dir.display()
            )));
        }
        read_probmap(&path)
    }
}

impl Predictor for FixturePredictor {
    fn predict(&self, input: &PredictorInput<'_>) -> Result<ProbMap<f32>> {
        let mut map = self.load(input.case_id)?;
        if let Some(g) = input.variant.geometry() {
            map = map.permute(g);
        }
        let (w, h) = input.image.dims();
        if map.dims() != (w, h) {
            map = map.resize_default(w, h)?;
        }
        Ok(map)
    }
}

/// Runs an external program once per (case, fold).
///
/// The program receives one PNG image path per line on standard input and
/// must print one 16-bit map path per line, in the same order, on standard
/// output. `{fold}` and `{case}` in the arguments are substituted.
#[derive(Debug, Clone)]
pub struct CommandPredictor {
    program: PathBuf,
    args: Vec<String>,
}

impl CommandPredictor {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn run(&self, dir: &Path, inputs: &[PredictorInput<'_>]) -> Result<Vec<ProbMap<f32>>> {
        let Some(first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let mut listing = String::new();
        for (i, input) in inputs.iter().enumerate() {
            let path = dir.join(format!("{i}_{}.png", input.variant.as_str()));
            write_image(input.image, &path)?;
            listing.push_str(&path.to_string_lossy());
            listing.push('\n');
        }
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{fold}", &first.fold.to_string())
                    .replace("{case}", first.case_id)
            })
            .collect();
        let contract = |msg: String| Error::PredictorContract(format!("{}: {msg}", self.program.display()));
        let mut child = Command::new(&self.program)
            .args(&args)
            .current_dir(dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| contract(format!("cannot start: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(listing.as_bytes())
            .map_err(|e| contract(format!("cannot write request: {e}")))?;
        let out = child
            .wait_with_output()
            .map_err(|e| contract(format!("did not finish: {e}")))?;
        if !out.status.success() {
            return Err(contract(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let paths: Vec<&str> = stdout.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if paths.len() != inputs.len() {
            return Err(contract(format!(
                "printed {} map paths for {} images",
                paths.len(),
                inputs.len()
            )));
        }
        paths
            .iter()
            .map(|p| {
                let p = Path::new(p);
                let p = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
                read_probmap(&p).map_err(|e| contract(format!("unreadable map: {e}")))
            })
            .collect()
    }
}

impl Predictor for CommandPredictor {
    fn predict(&self, input: &PredictorInput<'_>) -> Result<ProbMap<f32>> {
        Ok(self.predict_batch(std::slice::from_ref(input))?.remove(0))
    }

    fn predict_batch(&self, inputs: &[PredictorInput<'_>]) -> Result<Vec<ProbMap<f32>>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        self.run(dir.path(), inputs)
    }
}

/// Restricts a map to a binary region, e.g. attribute maps to the lesion.
pub fn restrict<T: Real>(map: &ProbMap<T>, region: &BinaryMask) -> Result<ProbMap<T>> {
    crate::raster::pixelwise_multiply(map, region)
}
