use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use softcam::io::{self, Provenance};
use softcam::metrics::{
    activation_precision, activation_sensitivity, audc, deletion_curve, random_patch_baseline, random_patch_order,
    topk_localization_precision, DeletionCurve, MetricRecord, MetricReport, PatchGrid,
};
use softcam::model::{BackboneConfig, BlockConfig, InputShape};
use softcam::saliency::{evidence_from_prediction, explain as explain_map, ExplainOptions, MethodId, SaliencyMap};
use softcam::synth::{generate_dataset, Dataset, Sample, Split, SynthConfig};
use softcam::trainer::{self, evaluate as evaluate_model, SweepTable, TrainConfig};
use softcam::{HeadKind, HeadPreset, ModelBundle, ModelConfig};

use crate::overrides;
use crate::{EvaluateArgs, ExplainArgs, GenDataArgs, SweepArgs, TrainArgs};

pub struct Global {
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub force: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
    /// Summary still printed on stdout, for failures that leave outputs behind.
    pub summary: Option<Value>,
}

/// No sample qualified for any metric.
#[derive(Debug)]
struct EmptyEvaluation;

impl std::fmt::Display for EmptyEvaluation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("no sample qualified for evaluation")
    }
}

impl std::error::Error for EmptyEvaluation {}

fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if cause.is::<EmptyEvaluation>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<softcam::Error>() {
            return match e {
                softcam::Error::Diverged { .. } => 3,
                softcam::Error::Shape { .. } | softcam::Error::UnknownNode { .. } | softcam::Error::Misclassified { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self {
            code: exit_code(&error),
            error,
            summary: None,
        }
    }
}

impl From<softcam::Error> for Failure {
    fn from(error: softcam::Error) -> Self {
        anyhow::Error::from(error).into()
    }
}

type CmdResult = std::result::Result<Value, Failure>;

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum HeadArg {
    Blackbox,
    Softcam,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum PresetArg {
    Resnet,
    Vgg,
}

impl From<PresetArg> for HeadPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Resnet => HeadPreset::ResnetStyle,
            PresetArg::Vgg => HeadPreset::VggStyle,
        }
    }
}

/// `train` and `sweep` run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub preset: HeadPreset,
    pub blocks: Vec<BlockConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            preset: HeadPreset::default(),
            blocks: BackboneConfig::default().blocks,
        }
    }
}

/// Reads `path` (or serialises `default`), applies `--set` overrides and
/// deserialises the result.
fn load_config<T: Serialize + for<'de> Deserialize<'de>>(path: Option<&Path>, default: &T, global: &Global) -> anyhow::Result<T> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => serde_json::to_value(default)?,
    };
    overrides::apply(&mut doc, &global.overrides)?;
    serde_json::from_value(doc).context("invalid config")
}

/// Output directory built under a sibling staging name and renamed into
/// place on success.
struct Staging {
    target: PathBuf,
    tmp: PathBuf,
}

impl Staging {
    fn new(target: &Path, force: bool) -> anyhow::Result<Self> {
        if target.exists() && !force && fs::read_dir(target)?.next().is_some() {
            bail!("output directory {} exists and is not empty (use --force)", target.display());
        }
        let name = target
            .file_name()
            .ok_or_else(|| anyhow!("invalid output directory {}", target.display()))?
            .to_string_lossy()
            .into_owned();
        let tmp = target.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            tmp,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.join(rel)
    }

    fn commit(self) -> anyhow::Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.tmp, &self.target).with_context(|| format!("moving outputs to {}", self.target.display()))?;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

fn parse_split(name: &str) -> anyhow::Result<Split> {
    Ok(name.parse::<Split>()?)
}

fn parse_methods(list: &str) -> anyhow::Result<Vec<MethodId>> {
    if list == "all" {
        return Ok(MethodId::ALL.to_vec());
    }
    let mut methods = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: MethodId = name.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        bail!("no methods requested");
    }
    Ok(methods)
}

/// Methods the checkpoint supports; the rest are reported and dropped.
fn applicable(methods: &[MethodId], model: &ModelBundle) -> (Vec<MethodId>, Vec<MethodId>) {
    let (run, skip): (Vec<MethodId>, Vec<MethodId>) = methods.iter().partition(|m| m.supports(model));
    for m in &skip {
        log::warn!("skipping {m}: not applicable to a {:?} head", model.head_kind());
    }
    (run, skip)
}

fn load_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    let (dataset, _) = io::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(dataset)
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(ModelBundle, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let (model, _) = io::decode_checkpoint(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))?;
    Ok((model, io::sha256_hex(&bytes)))
}

fn digest_file(path: &Path) -> anyhow::Result<String> {
    Ok(io::sha256_hex(&fs::read(path)?))
}

fn limited(samples: &[Sample], limit: Option<usize>) -> &[Sample] {
    &samples[..limit.unwrap_or(samples.len()).min(samples.len())]
}

pub fn gen_data(global: &Global, args: &GenDataArgs) -> CmdResult {
    let mut config: SynthConfig = load_config(args.config.as_deref(), &SynthConfig::binary(), global)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    config.validate()?;
    let dataset = generate_dataset(&config)?;
    let staging = Staging::new(&args.out, global.force)?;
    io::save_dataset(&staging.tmp, &dataset, &config)?;
    let manifest = digest_file(&staging.path("manifest.csv"))?;
    staging.commit()?;
    Ok(json!({
        "command": "gen-data",
        "out": args.out,
        "train": dataset.train.len(),
        "val": dataset.val.len(),
        "test": dataset.test.len(),
        "classes": dataset.classes,
        "manifest_sha256": manifest,
    }))
}

/// Variant label recorded in checkpoint provenance.
pub fn variant_label(head: HeadKind, lambda1: f64, lambda2: f64) -> &'static str {
    match (head, lambda1 > 0.0, lambda2 > 0.0) {
        (HeadKind::BlackBox, _, _) => "blackbox",
        (HeadKind::SoftCam, false, false) => "dense",
        (HeadKind::SoftCam, true, false) => "sparse",
        (HeadKind::SoftCam, false, true) => "ridge",
        (HeadKind::SoftCam, true, true) => "elasticnet",
    }
}

fn model_config(run: &RunConfig, dataset: &Dataset, head: HeadKind, seed: u64) -> anyhow::Result<ModelConfig> {
    let shape = dataset
        .image_shape()
        .ok_or_else(|| anyhow!("dataset has no samples"))?
        .to_vec();
    let backbone = BackboneConfig {
        input: InputShape {
            channels: shape[0],
            height: shape[1],
            width: shape[2],
        },
        blocks: run.blocks.clone(),
        seed,
    };
    Ok(ModelConfig::new(backbone, dataset.classes, head, run.preset))
}

fn run_config(global: &Global, path: Option<&Path>, preset: Option<PresetArg>, epochs: Option<usize>) -> anyhow::Result<RunConfig> {
    let mut run: RunConfig = load_config(path, &RunConfig::default(), global)?;
    if let Some(p) = preset {
        run.preset = p.into();
    }
    if let Some(e) = epochs {
        run.train.epochs = e;
    }
    if let Some(seed) = global.seed {
        run.train.seed = seed;
    }
    Ok(run)
}

pub fn train(global: &Global, args: &TrainArgs) -> CmdResult {
    let mut run = run_config(global, args.config.as_deref(), args.preset, args.epochs)?;
    if let Some(l1) = args.lambda1 {
        run.train.lambda1 = l1;
    }
    if let Some(l2) = args.lambda2 {
        run.train.lambda2 = l2;
    }
    let head = match args.head {
        HeadArg::Blackbox => HeadKind::BlackBox,
        HeadArg::Softcam => HeadKind::SoftCam,
    };
    if head == HeadKind::BlackBox && (run.train.lambda1 != 0.0 || run.train.lambda2 != 0.0) {
        return Err(anyhow!("evidence penalties require --head softcam").into());
    }
    run.train.validate()?;
    let dataset = load_dataset(&args.dataset)?;
    let config = model_config(&run, &dataset, head, run.train.seed)?;
    let model = ModelBundle::init(config)?;
    let variant = variant_label(head, run.train.lambda1, run.train.lambda2);
    log::info!("training {variant} model for {} epochs", run.train.epochs);
    let outcome = trainer::train_with(model, &dataset, &run.train, |r| {
        log::info!("epoch {} loss {:.4} val acc {:.4}", r.epoch, r.loss.total, r.val_acc)
    })?;
    let test = evaluate_model(&outcome.model, &dataset.test)?;
    let provenance = Provenance {
        variant: variant.into(),
        seed: run.train.seed,
        lambda1: run.train.lambda1,
        lambda2: run.train.lambda2,
        epoch: outcome.best_epoch,
    };
    let staging = Staging::new(&args.out, global.force)?;
    io::save_checkpoint(staging.path("model.scm"), &outcome.model, &provenance)?;
    io::write_bytes(staging.path("epochs.csv"), io::epoch_log_csv(&outcome.log).as_bytes())?;
    let best = &outcome.log[outcome.best_epoch];
    let summary = json!({
        "command": "train",
        "variant": variant,
        "head": head,
        "lambda1": run.train.lambda1,
        "lambda2": run.train.lambda2,
        "seed": run.train.seed,
        "epochs": run.train.epochs,
        "best_epoch": outcome.best_epoch,
        "val_acc": best.val_acc,
        "val_auc": best.val_auc,
        "sparsity": best.sparsity,
        "test_acc": test.accuracy,
        "test_auc": test.auc,
        "checkpoint_sha256": digest_file(&staging.path("model.scm"))?,
    });
    let mut run_json = serde_json::to_value(&run).map_err(anyhow::Error::from)?;
    run_json["result"] = summary.clone();
    io::write_bytes(staging.path("run.json"), &serde_json::to_vec_pretty(&run_json).map_err(anyhow::Error::from)?)?;
    staging.commit()?;
    Ok(summary)
}

pub fn explain(global: &Global, args: &ExplainArgs) -> CmdResult {
    let split = parse_split(&args.split)?;
    let methods = parse_methods(&args.methods)?;
    let (model, digest) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    let (run, skipped) = applicable(&methods, &model);
    if run.is_empty() {
        return Err(anyhow!("none of the requested methods applies to this checkpoint").into());
    }
    if let Some(c) = args.class {
        if c >= model.classes() {
            return Err(anyhow!("class {c} out of range for a {}-class model", model.classes()).into());
        }
    }
    let samples = limited(dataset.split(split), args.limit);
    let options = ExplainOptions::default();
    let per_sample: Vec<anyhow::Result<Vec<(usize, SaliencyMap)>>> = samples
        .par_iter()
        .map(|s| {
            let prediction = model.predict(&s.image)?;
            let classes: Vec<usize> = if args.all_classes {
                (0..model.classes()).collect()
            } else {
                vec![args.class.unwrap_or_else(|| prediction.predicted_class())]
            };
            let mut maps = Vec::new();
            for &m in &run {
                for &c in &classes {
                    let map = if m == MethodId::SoftCamEvidence {
                        // every class comes from the one forward pass
                        evidence_from_prediction(&prediction, c)?
                    } else {
                        explain_map(&model, &s.image, c, m, &options)?
                    };
                    maps.push((s.id, map));
                }
            }
            Ok(maps)
        })
        .collect();
    let staging = Staging::new(&args.out, global.force)?;
    for m in &run {
        fs::create_dir_all(staging.path(m.as_str())).map_err(anyhow::Error::from)?;
    }
    let mut written = 0usize;
    for maps in per_sample {
        for (id, map) in maps? {
            let stem = staging.path(&format!("{}/{id:05}_c{}", map.method, map.class));
            io::save_saliency(stem, &map, &digest, Some(id))?;
            written += 1;
        }
    }
    staging.commit()?;
    Ok(json!({
        "command": "explain",
        "split": split.as_str(),
        "samples": samples.len(),
        "maps": written,
        "methods": run.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "skipped": skipped.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "checkpoint_sha256": digest,
    }))
}

/// Name of the random patch-ranking control in evaluation outputs.
pub const RANDOM_CONTROL: &str = "random";

struct SampleEval {
    records: Vec<MetricRecord>,
    curves: Vec<(String, DeletionCurve)>,
}

fn evaluate_sample(
    model: &ModelBundle,
    sample: &Sample,
    methods: &[MethodId],
    args: &EvaluateArgs,
    seed: u64,
) -> anyhow::Result<SampleEval> {
    let [_, h, w] = model.input_shape();
    let prediction = model.predict(&sample.image)?;
    let class = sample.label;
    let localize = class != 0 && !sample.mask.is_empty();
    let delete = prediction.predicted_class() == class;
    let mut out = SampleEval {
        records: Vec::new(),
        curves: Vec::new(),
    };
    if !localize && !delete {
        return Ok(out);
    }
    let record = |method: &str| MetricRecord {
        sample_id: sample.id,
        method: method.into(),
        class,
        topk_prec: None,
        topk_prec_alt: None,
        ap: None,
        as_: None,
        audc: None,
    };
    let options = ExplainOptions::default();
    for &m in methods {
        let map = if m == MethodId::SoftCamEvidence {
            evidence_from_prediction(&prediction, class)?
        } else {
            explain_map(model, &sample.image, class, m, &options)?
        };
        let map = map.at_resolution(h, w)?;
        let mut r = record(m.as_str());
        if localize {
            let topk = topk_localization_precision(&map, &sample.mask, args.k, args.patch)?;
            r.topk_prec = Some(topk.precision);
            r.topk_prec_alt = Some(topk.precision_alt);
            r.ap = Some(activation_precision(&map, &sample.mask)?.value);
            r.as_ = Some(activation_sensitivity(&map, &sample.mask)?);
        }
        if delete {
            let curve = deletion_curve(model, &sample.image, class, &map, args.k, args.patch, args.fill)?;
            r.audc = Some(audc(&curve));
            out.curves.push((m.as_str().into(), curve));
        }
        out.records.push(r);
    }
    let seed = seed ^ sample.id as u64;
    let mut r = record(RANDOM_CONTROL);
    if localize {
        let grid = PatchGrid::new(h, w, args.patch)?;
        let map = grid.order_map(&random_patch_order(grid.len(), seed))?;
        let topk = topk_localization_precision(&map, &sample.mask, args.k, args.patch)?;
        r.topk_prec = Some(topk.precision);
        r.topk_prec_alt = Some(topk.precision_alt);
    }
    if delete {
        let curve = random_patch_baseline(model, &sample.image, class, args.k, args.patch, args.fill, seed)?;
        r.audc = Some(audc(&curve));
        out.curves.push((RANDOM_CONTROL.into(), curve));
    }
    out.records.push(r);
    Ok(out)
}

/// Mean normalised deletion curve per method, in first-seen order.
fn mean_curves(curves: &[(String, DeletionCurve)]) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for (method, curve) in curves {
        let norm = curve.normalized();
        let idx = match out.iter().position(|(m, _, _)| m == method) {
            Some(i) => i,
            None => {
                out.push((method.clone(), vec![0.0; norm.len()], 0));
                out.len() - 1
            }
        };
        let (_, sum, n) = &mut out[idx];
        for (s, v) in sum.iter_mut().zip(&norm) {
            *s += v;
        }
        *n += 1;
    }
    out.into_iter()
        .map(|(m, sum, n)| (m, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect()
}

pub fn evaluate(global: &Global, args: &EvaluateArgs) -> CmdResult {
    let split = parse_split(&args.split)?;
    let methods = parse_methods(&args.methods)?;
    if args.k == 0 || args.patch == 0 {
        return Err(anyhow!("k and patch must be positive").into());
    }
    let (model, digest) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    let (run, skipped) = applicable(&methods, &model);
    if run.is_empty() {
        return Err(anyhow!("none of the requested methods applies to this checkpoint").into());
    }
    let seed = global.seed.unwrap_or(0);
    let samples = limited(dataset.split(split), args.limit);
    let evals: Vec<SampleEval> = samples
        .par_iter()
        .map(|s| evaluate_sample(&model, s, &run, args, seed))
        .collect::<anyhow::Result<_>>()?;
    let mut records = Vec::new();
    let mut curves = Vec::new();
    for e in evals {
        records.extend(e.records);
        curves.extend(e.curves);
    }
    if records.is_empty() {
        return Err(anyhow::Error::new(EmptyEvaluation).into());
    }
    let report = MetricReport::new(digest.clone(), records);
    let means = mean_curves(&curves);
    let staging = Staging::new(&args.out, global.force)?;
    io::write_bytes(staging.path("metrics.csv"), io::metric_records_csv(&report.records).as_bytes())?;
    io::write_bytes(staging.path("report.json"), io::report_json(&report)?.as_bytes())?;
    let mut csv = String::from("method,t,normalized\n");
    for (m, curve) in &means {
        for (t, v) in curve.iter().enumerate() {
            csv.push_str(&format!("{m},{t},{v}\n"));
        }
    }
    io::write_bytes(staging.path("curves.csv"), csv.as_bytes())?;
    io::write_bytes(staging.path("curves.svg"), io::curves_svg(&means).as_bytes())?;
    staging.commit()?;
    let aggregates: serde_json::Map<String, Value> = report
        .aggregates
        .iter()
        .map(|(m, a)| {
            let mean = |v: &Option<softcam::metrics::MeanStd>| v.map(|s| s.mean);
            (
                m.clone(),
                json!({
                    "samples": a.samples,
                    "topk_prec": mean(&a.topk_prec),
                    "ap": mean(&a.ap),
                    "as": mean(&a.as_),
                    "audc": mean(&a.audc),
                }),
            )
        })
        .collect();
    Ok(json!({
        "command": "evaluate",
        "split": split.as_str(),
        "records": report.records.len(),
        "skipped": skipped.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "aggregates": aggregates,
        "checkpoint_sha256": digest,
    }))
}

fn parse_grid(list: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    let mut grid = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, b) = item
            .split_once(':')
            .ok_or_else(|| anyhow!("grid point {item:?} is not of the form l1:l2"))?;
        let l1: f64 = a.trim().parse().with_context(|| format!("grid point {item:?}"))?;
        let l2: f64 = b.trim().parse().with_context(|| format!("grid point {item:?}"))?;
        if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
            bail!("grid point {item:?} must be finite and non-negative");
        }
        grid.push((l1, l2));
    }
    if grid.is_empty() {
        bail!("sweep grid is empty");
    }
    Ok(grid)
}

pub fn sweep(global: &Global, args: &SweepArgs) -> CmdResult {
    let grid = parse_grid(&args.grid)?;
    let run = run_config(global, args.config.as_deref(), args.preset, args.epochs)?;
    run.train.validate()?;
    let dataset = load_dataset(&args.dataset)?;
    let config = model_config(&run, &dataset, HeadKind::SoftCam, run.train.seed)?;
    let table: SweepTable = trainer::sweep_lambda(&config, &run.train, &grid, &dataset)?;
    let staging = Staging::new(&args.out, global.force)?;
    io::write_bytes(staging.path("sweep.csv"), io::sweep_csv(&table).as_bytes())?;
    io::write_bytes(
        staging.path("sweep.json"),
        &serde_json::to_vec_pretty(&table).map_err(anyhow::Error::from)?,
    )?;
    staging.commit()?;
    let selected = &table.rows[table.selected];
    let diverged: Vec<usize> = table.rows.iter().filter(|r| r.diverged()).map(|r| r.index).collect();
    let summary = json!({
        "command": "sweep",
        "points": table.rows.len(),
        "selected": {"index": selected.index, "lambda1": selected.lambda1, "lambda2": selected.lambda2, "val_acc": selected.val_acc},
        "diverged": diverged,
    });
    if !diverged.is_empty() {
        return Err(Failure {
            code: 3,
            error: anyhow!("{} grid point(s) diverged", diverged.len()),
            summary: Some(summary),
        });
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_labels() {
        assert_eq!(variant_label(HeadKind::SoftCam, 0.0, 0.0), "dense");
        assert_eq!(variant_label(HeadKind::SoftCam, 1e-4, 0.0), "sparse");
        assert_eq!(variant_label(HeadKind::SoftCam, 0.0, 1e-3), "ridge");
        assert_eq!(variant_label(HeadKind::SoftCam, 1e-4, 1e-3), "elasticnet");
        assert_eq!(variant_label(HeadKind::BlackBox, 0.0, 0.0), "blackbox");
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:0, 1e-4:0").unwrap(), vec![(0.0, 0.0), (1e-4, 0.0)]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1e-4").is_err());
        assert!(parse_grid("-1:0").is_err());
    }

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("all").unwrap().len(), 7);
        assert_eq!(parse_methods("gradcam, softcam,gradcam").unwrap(), vec![MethodId::GradCam, MethodId::SoftCamEvidence]);
        assert!(parse_methods("nope").is_err());
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&anyhow::Error::new(EmptyEvaluation)), 4);
        assert_eq!(exit_code(&softcam::Error::Diverged { epoch: 1 }.into()), 3);
        assert_eq!(exit_code(&softcam::Error::Config("x".into()).into()), 2);
        assert_eq!(exit_code(&anyhow::Error::from(softcam::Error::Diverged { epoch: 0 }).context("training")), 3);
        assert_eq!(exit_code(&anyhow!("bad flag")), 2);
    }

    #[test]
    fn mean_curves_average_per_method() {
        let c = |v: &[f64]| DeletionCurve {
            class: 0,
            c0: v[0],
            points: v.iter().copied().enumerate().collect(),
        };
        let curves = vec![("a".to_string(), c(&[1.0, 0.5])), ("b".into(), c(&[2.0, 2.0])), ("a".into(), c(&[1.0, 0.0]))];
        assert_eq!(mean_curves(&curves), vec![("a".to_string(), vec![1.0, 0.25]), ("b".into(), vec![1.0, 1.0])]);
    }
}
