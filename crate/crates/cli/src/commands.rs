use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lesionseg::arch::{builtin_graph, read_graph, validate_unet_rules, ArchGraph, Encoder, Shape, Violation};
use lesionseg::augment::{apply_geometric, apply_plan, sample_augmentation, AugmentationPlan};
use lesionseg::config::PipelineConfig;
use lesionseg::dataset::{assign_folds, load_manifest, subsample_negatives, AttributeKind, DatasetRecord, Manifest};
use lesionseg::metrics::{evaluate_task1, pooled_attribute_metrics, MetricReport, MetricTable};
use lesionseg::postprocess::{attribute_postprocess, grid_search, lesion_postprocess, GridTarget};
use lesionseg::preprocess::{Resize, ResizeMode, Task};
use lesionseg::rasterio::{read_image, read_mask, read_probmap, write_image, write_mask, write_probmap};
use lesionseg::rng::mix;
use lesionseg::tta::{ensemble_mean, fold_ensemble, BaselinePredictor, CommandPredictor, FixturePredictor, Predictor};
use lesionseg::{BinaryMask, Error, Image, ProbabilityMap, Result, ThresholdPair};
use rayon::prelude::*;
use serde::Serialize;

use crate::{
    ArchcheckArgs, AugmentArgs, Cli, Command, EnsembleArgs, EvaluateArgs, FoldsArgs, PostprocessArgs, PredictArgs,
    SubsampleArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::param("--jobs must be at least 1"));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Augment(a) => augment(&config, a),
        Command::Predict(a) => predict(&config, a),
        Command::Ensemble(a) => ensemble(a),
        Command::Postprocess(a) => postprocess(&config, a),
        Command::Evaluate(a) => evaluate(&config, a),
        Command::Subsample(a) => subsample(&config, a),
        Command::Folds(a) => folds(&config, a),
        Command::Archcheck(a) => archcheck(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_text(path, &s)
}

/// Command line, then configuration, then manifest header.
fn pick_seed(arg: Option<u64>, config: &PipelineConfig, manifest: &Manifest) -> u64 {
    arg.or(config.seed).unwrap_or(manifest.seed())
}

/// `<case>.png` files of a directory, keyed by case id.
fn png_cases(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned(), path.clone());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no .png files in {}", dir.display())));
    }
    Ok(out)
}

fn fit_mask(mask: BinaryMask, (w, h): (usize, usize)) -> Result<BinaryMask> {
    if mask.dims() == (w, h) {
        Ok(mask)
    } else {
        mask.resize(w, h, ResizeMode::Nearest)
    }
}

fn fit_map(map: ProbabilityMap, (w, h): (usize, usize)) -> Result<ProbabilityMap> {
    if map.dims() == (w, h) {
        Ok(map)
    } else {
        map.resize(w, h, ResizeMode::Bilinear)
    }
}

fn augment(config: &PipelineConfig, a: AugmentArgs) -> Result<()> {
    if a.copies == 0 {
        return Err(Error::param("--copies must be at least 1"));
    }
    let manifest = load_manifest(&a.manifest)?;
    let seed = pick_seed(a.seed, config, &manifest);
    for sub in ["images", "masks", "params"] {
        create_dir(&a.out.join(sub))?;
    }
    let jobs: Vec<(&DatasetRecord, u32)> = manifest
        .records()
        .iter()
        .flat_map(|r| (0..a.copies).map(move |c| (r, c)))
        .collect();
    let records: Vec<DatasetRecord> = jobs
        .par_iter()
        .map(|&(r, copy)| augment_one(config, &manifest, &a, seed, r, copy))
        .collect::<Result<_>>()?;
    Manifest::with_folds(records, seed, manifest.folds())?.write(a.out.join("manifest.jsonl"))
}

#[derive(Serialize)]
struct PlanLog<'a> {
    case_id: &'a str,
    copy: u32,
    seed: u64,
    plan: &'a AugmentationPlan,
}

fn augment_one(
    config: &PipelineConfig,
    manifest: &Manifest,
    a: &AugmentArgs,
    seed: u64,
    r: &DatasetRecord,
    copy: u32,
) -> Result<DatasetRecord> {
    let name = if a.copies == 1 {
        r.case_id.clone()
    } else {
        format!("{}_{copy}", r.case_id)
    };
    let case_seed = mix(seed, "augment", &format!("{}#{copy}", r.case_id));
    let plan = sample_augmentation(case_seed, &config.augment)?;
    let image = read_image(manifest.resolve(&r.image_path))?;
    let lesion = r
        .lesion_gt_path
        .as_ref()
        .map(|p| read_mask(manifest.resolve(p)))
        .transpose()?;
    let (out_image, out_lesion) = apply_plan(&image, lesion.as_ref(), &plan)?;

    let mut rec = DatasetRecord::new(name.clone(), PathBuf::from(format!("images/{name}.png")));
    rec.attribute_present = r.attribute_present.clone();
    rec.fold = r.fold;
    write_image(&out_image, a.out.join(&rec.image_path))?;
    if let Some(m) = out_lesion {
        let rel = PathBuf::from(format!("masks/{name}.png"));
        write_mask(&m, a.out.join(&rel))?;
        rec.lesion_gt_path = Some(rel);
    }
    for kind in AttributeKind::ALL {
        if let Some(p) = r.attribute_gt_paths.get(kind) {
            let mask = read_mask(manifest.resolve(p))?;
            let (_, warped) = apply_geometric(&image, Some(&mask), &plan.geometric)?;
            let rel = PathBuf::from(format!("masks/{name}_{kind}.png"));
            write_mask(&warped.expect("mask was given"), a.out.join(&rel))?;
            *rec.attribute_gt_paths.get_mut(kind) = Some(rel);
        }
    }
    let log = PlanLog {
        case_id: &r.case_id,
        copy,
        seed: case_seed,
        plan: &plan,
    };
    write_json(&a.out.join(format!("params/{name}.json")), &log)?;
    Ok(rec)
}

fn build_predictor(spec: &str, args: &[String]) -> Result<Box<dyn Predictor>> {
    match spec.split_once(':') {
        None if spec == "baseline" => {
            if !args.is_empty() {
                return Err(Error::param("--predictor-arg applies only to command predictors"));
            }
            Ok(Box::new(BaselinePredictor))
        }
        Some(("fixtures", dir)) => Ok(Box::new(FixturePredictor::new(dir)?)),
        Some(("command", program)) => Ok(Box::new(CommandPredictor::new(program, args.to_vec()))),
        _ => Err(Error::param(format!(
            "unknown predictor `{spec}`; expected `baseline`, `fixtures:<dir>` or `command:<program>`"
        ))),
    }
}

fn predict(config: &PipelineConfig, a: PredictArgs) -> Result<()> {
    let task: Task = a.task.parse()?;
    let manifest = load_manifest(&a.manifest)?;
    let n_folds = a.folds.unwrap_or(config.ensemble.folds);
    if n_folds == 0 {
        return Err(Error::param("--folds must be at least 1"));
    }
    let predictor = build_predictor(&a.predictor, &a.predictor_args)?;
    let folds: Vec<&dyn Predictor> = vec![predictor.as_ref(); n_folds as usize];
    let spec = config.inference();
    let (th, tw) = config.preprocess.resize.for_task(task);
    create_dir(&a.out)?;

    let audit: Vec<(String, usize, usize)> = manifest
        .records()
        .par_iter()
        .map(|r| {
            let image = read_image(manifest.resolve(&r.image_path))?;
            let dims = image.dims();
            let input = if dims == (tw, th) { image } else { image.resize_default(tw, th)? };
            let pred = fold_ensemble(&folds, n_folds as usize, &r.case_id, &input, &spec)?;
            let map = fit_map(pred.map, dims)?;
            write_probmap(&map, a.out.join(format!("{}.png", r.case_id)))?;
            Ok((r.case_id.clone(), pred.raw_predictions, spec.tta.variants.len()))
        })
        .collect::<Result<_>>()?;

    let mut table = MetricTable::new("case_id", &["folds", "variants", "raw_predictions"]);
    for (case, raw, variants) in audit {
        table.push(case, vec![f64::from(n_folds), variants as f64, raw as f64]);
    }
    table.write_csv(&a.out.join("audit.csv"))
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    let sources: Vec<BTreeMap<String, PathBuf>> = a.map_dirs.iter().map(|d| png_cases(d)).collect::<Result<_>>()?;
    let cases: Vec<&String> = sources[0].keys().collect();
    for (dir, s) in a.map_dirs.iter().zip(&sources).skip(1) {
        if !s.keys().eq(cases.iter().copied()) {
            return Err(Error::Data(format!(
                "{} and {} hold different case sets",
                a.map_dirs[0].display(),
                dir.display()
            )));
        }
    }
    create_dir(&a.out)?;
    cases.par_iter().try_for_each(|case| {
        let maps: Vec<ProbabilityMap> = sources
            .iter()
            .map(|s| read_probmap(&s[*case]))
            .collect::<Result<_>>()?;
        write_probmap(&ensemble_mean(&maps)?, a.out.join(format!("{case}.png")))
    })
}

fn parse_pair(s: &str) -> Result<ThresholdPair> {
    let parsed = s
        .split_once(',')
        .and_then(|(h, l)| Some((h.trim().parse::<f64>().ok()?, l.trim().parse::<f64>().ok()?)));
    let (h, l) = parsed.ok_or_else(|| Error::param(format!("thresholds `{s}` must look like `0.8,0.45`")))?;
    ThresholdPair::new(h, l)
}

#[derive(Serialize)]
struct ThresholdLog {
    t_high: f64,
    t_low: f64,
    source: &'static str,
    objective: Option<f64>,
}

fn postprocess(config: &PipelineConfig, a: PostprocessArgs) -> Result<()> {
    let task: Task = a.task.parse()?;
    let conn = config.postprocess.connectivity;
    let restrict = task.is_attribute() && config.postprocess.restrict_to_lesion;
    if restrict && a.lesion_masks.is_none() {
        return Err(Error::Config(
            "attribute post-processing restricts to the lesion; pass --lesion-masks or set postprocess.restrict_to_lesion = false".into(),
        ));
    }
    let fixed = a.thresholds.as_deref().map(parse_pair).transpose()?;
    let files = png_cases(&a.maps)?;
    let cases: Vec<&String> = files.keys().collect();
    let maps: Vec<ProbabilityMap> = cases.par_iter().map(|c| read_probmap(&files[*c])).collect::<Result<_>>()?;
    let lesions: Vec<BinaryMask> = cases
        .par_iter()
        .zip(&maps)
        .map(|(c, m)| match (&a.lesion_masks, restrict) {
            (Some(dir), true) => fit_mask(read_mask(dir.join(format!("{c}.png")))?, m.dims()),
            _ => BinaryMask::ones(m.width(), m.height()),
        })
        .collect::<Result<_>>()?;

    create_dir(&a.out)?;
    let (pair, source, objective) = if a.grid_search {
        let manifest = load_manifest(a.manifest.as_ref().expect("clap requires --manifest"))?;
        let gts: Vec<BinaryMask> = cases
            .par_iter()
            .zip(&maps)
            .map(|(c, m)| {
                let gt = ground_truth(&manifest, c, task, m.dims())?;
                fit_mask(gt, m.dims())
            })
            .collect::<Result<_>>()?;
        let target = if task.is_attribute() {
            GridTarget::Attribute { lesions: &lesions }
        } else {
            GridTarget::Lesion
        };
        let result = grid_search(&maps, &gts, config.postprocess.grid(task), target, conn)?;
        result.table().write_csv(&a.out.join("gridsearch.csv"))?;
        (result.best, "grid_search", Some(result.value))
    } else {
        match fixed {
            Some(pair) => (pair, "command_line", None),
            None => (config.postprocess.thresholds(task), "config", None),
        }
    };
    let log = ThresholdLog {
        t_high: pair.t_high(),
        t_low: pair.t_low(),
        source,
        objective,
    };
    write_json(&a.out.join("thresholds.json"), &log)?;

    cases.par_iter().zip(&maps).zip(&lesions).try_for_each(|((c, m), l)| {
        let mask = if task.is_attribute() {
            attribute_postprocess(m, l, pair, conn)?
        } else {
            lesion_postprocess(m, pair, conn)
        };
        write_mask(&mask, a.out.join(format!("{c}.png")))
    })
}

/// Ground truth of one case; an attribute marked absent without a file is an
/// empty mask of `fallback` size.
fn ground_truth(manifest: &Manifest, case: &str, task: Task, fallback: (usize, usize)) -> Result<BinaryMask> {
    let r = manifest
        .get(case)
        .ok_or_else(|| Error::Data(format!("case `{case}` is not in the manifest")))?;
    let (path, present) = match task {
        Task::Lesion => (r.lesion_gt_path.as_ref(), true),
        Task::Attribute(k) => (r.attribute_gt_paths.get(k).as_ref(), r.is_positive(k)),
    };
    match path {
        Some(p) => read_mask(manifest.resolve(p)),
        None if !present => BinaryMask::zeros(fallback.0, fallback.1),
        None => Err(Error::Data(format!("case `{case}` has no {task} ground truth"))),
    }
}

/// Green where both agree on foreground, red for false positives, blue for misses.
fn overlay(pred: &BinaryMask, gt: &BinaryMask) -> Result<Image> {
    Image::from_fn(gt.width(), gt.height(), |x, y| match (pred.get(x, y), gt.get(x, y)) {
        (true, true) => [0, 255, 0],
        (true, false) => [255, 0, 0],
        (false, true) => [0, 0, 255],
        (false, false) => [0, 0, 0],
    })
}

fn evaluate(config: &PipelineConfig, a: EvaluateArgs) -> Result<()> {
    let cutoff = a.cutoff.unwrap_or(config.metrics.jaccard_cutoff);
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::param(format!("cutoff {cutoff} outside [0, 1]")));
    }
    let manifest = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let table = if a.task == "attributes" {
        let mut table = MetricTable::new("attribute", &["jaccard", "dice"]);
        let mut sums = [0.0; 2];
        for kind in AttributeKind::ALL {
            let s = attribute_scores(config, &manifest, &a, kind, &a.pred.join(kind.as_str()))?;
            sums[0] += s[0];
            sums[1] += s[1];
            table.push(kind.as_str(), s.to_vec());
        }
        let n = AttributeKind::ALL.len() as f64;
        table.push("average", vec![sums[0] / n, sums[1] / n]);
        table
    } else {
        match a.task.parse::<Task>()? {
            Task::Lesion => lesion_scores(&manifest, &a, cutoff)?,
            Task::Attribute(kind) => {
                let mut table = MetricTable::new("attribute", &["jaccard", "dice"]);
                table.push(kind.as_str(), attribute_scores(config, &manifest, &a, kind, &a.pred)?.to_vec());
                table
            }
        }
    };
    table.write_csv(&a.out.join("report.csv"))?;
    table.write_json(&a.out.join("report.json"))
}

fn read_prediction(dir: &Path, case: &str) -> Result<BinaryMask> {
    let path = dir.join(format!("{case}.png"));
    if !path.is_file() {
        return Err(Error::Data(format!("missing prediction {}", path.display())));
    }
    read_mask(&path)
}

fn lesion_scores(manifest: &Manifest, a: &EvaluateArgs, cutoff: f64) -> Result<MetricTable> {
    let records: Vec<&DatasetRecord> = manifest.records().iter().filter(|r| r.lesion_gt_path.is_some()).collect();
    if records.is_empty() {
        return Err(Error::Data("no record has a lesion ground truth".into()));
    }
    let pairs: Vec<(BinaryMask, BinaryMask)> = records
        .par_iter()
        .map(|r| {
            let gt = ground_truth(manifest, &r.case_id, Task::Lesion, (1, 1))?;
            let pred = fit_mask(read_prediction(&a.pred, &r.case_id)?, gt.dims())?;
            Ok((pred, gt))
        })
        .collect::<Result<_>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    if a.overlays {
        write_overlays(&a.out.join("overlays"), &records, &preds, &gts)?;
    }
    let (per_image, mean) = evaluate_task1(&preds, &gts, cutoff)?;
    let mut table = MetricTable::new("case_id", &MetricReport::COLUMNS);
    for (r, rep) in records.iter().zip(&per_image) {
        table.push(r.case_id.clone(), rep.values().to_vec());
    }
    table.push("mean", mean.values().to_vec());
    Ok(table)
}

fn attribute_scores(
    config: &PipelineConfig,
    manifest: &Manifest,
    a: &EvaluateArgs,
    kind: AttributeKind,
    dir: &Path,
) -> Result<[f64; 2]> {
    let (h, w) = config.metrics.attribute_eval_size;
    let task = Task::Attribute(kind);
    let records: Vec<&DatasetRecord> = manifest.records().iter().collect();
    let pairs: Vec<(BinaryMask, BinaryMask)> = records
        .par_iter()
        .map(|r| {
            let gt = fit_mask(ground_truth(manifest, &r.case_id, task, (w, h))?, (w, h))?;
            let pred = fit_mask(read_prediction(dir, &r.case_id)?, (w, h))?;
            Ok((pred, gt))
        })
        .collect::<Result<_>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    if a.overlays {
        write_overlays(&a.out.join("overlays").join(kind.as_str()), &records, &preds, &gts)?;
    }
    let s = pooled_attribute_metrics(&preds, &gts)?;
    Ok([s.jaccard, s.dice])
}

fn write_overlays(dir: &Path, records: &[&DatasetRecord], preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<()> {
    create_dir(dir)?;
    records
        .par_iter()
        .zip(preds)
        .zip(gts)
        .try_for_each(|((r, p), g)| write_image(&overlay(p, g)?, dir.join(format!("{}.png", r.case_id))))
}

fn subsample(config: &PipelineConfig, a: SubsampleArgs) -> Result<()> {
    let kind: AttributeKind = a.attribute.parse()?;
    let manifest = load_manifest(&a.manifest)?;
    let seed = pick_seed(a.seed, config, &manifest);
    let out = subsample_negatives(&manifest, kind, seed)?;
    println!(
        "{kind}: kept {} of {} records ({} positive)",
        out.len(),
        manifest.len(),
        out.positives(kind)
    );
    out.absolutized()?.write(&a.out)
}

fn folds(config: &PipelineConfig, a: FoldsArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let seed = pick_seed(a.seed, config, &manifest);
    let k = a.k.unwrap_or(config.folds.k);
    let out = assign_folds(&manifest, k, seed, a.stratify || config.folds.stratify)?;
    let sizes: Vec<String> = out.fold_sizes().iter().map(usize::to_string).collect();
    println!("fold sizes: {}", sizes.join(" "));
    out.absolutized()?.write(&a.out)
}

fn parse_shape(s: &str) -> Result<Shape> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::param(format!("input shape `{s}` must look like `192,256,3`")))?;
    match parts[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(Error::param(format!("input shape `{s}` must be three positive integers"))),
    }
}

#[derive(Serialize)]
struct GraphReport {
    graph: String,
    violations: Vec<Violation>,
}

fn archcheck(a: ArchcheckArgs) -> Result<()> {
    let input = parse_shape(&a.input)?;
    let graphs: Vec<(String, ArchGraph)> = match (&a.graph, &a.builtin) {
        (Some(p), _) => vec![(p.display().to_string(), read_graph(p)?)],
        (None, Some(name)) => {
            let e: Encoder = name.parse()?;
            vec![(e.as_str().to_owned(), builtin_graph(e))]
        }
        (None, None) => Encoder::ALL.iter().map(|e| (e.as_str().to_owned(), builtin_graph(*e))).collect(),
    };
    let mut reports = Vec::new();
    for (name, g) in graphs {
        let violations = validate_unet_rules(&g, input)?;
        if violations.is_empty() {
            println!("{name}: ok");
        }
        for v in &violations {
            println!("{name}: {v}");
        }
        reports.push(GraphReport { graph: name, violations });
    }
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.violations.is_empty()).map(|r| r.graph.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Graph(format!("rule violations in {}", failed.join(", "))))
    }
}
