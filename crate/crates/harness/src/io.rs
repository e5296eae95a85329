//! Files the harness reads and writes: dataset manifests, checkpoint
//! directories, loss logs and metric tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use echoseg_clpu::{ClpuModel, ModelKind};
use echoseg_core::formats::{read_mask_pgm, read_pgm, read_raw, write_mask_pgm, write_pgm, write_raw};
use echoseg_core::Mask;
use echoseg_nn::{load_checkpoint, save_checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SampleMeta, SampleRecord};
use crate::error::{HarnessError, Result};
use crate::folds::FoldPlan;
use crate::metrics::{FoldMetrics, Metrics, MetricsReport, METRIC_NAMES};
use crate::train::{CheckpointMeta, LossRecord, TrainOutcome};

/// One manifest line. Paths are relative to the manifest's directory.
/// `image` may be a raw float32 dump or a PGM; `mask` and `meta` are needed
/// for training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<SampleMeta>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_context(e, "cannot create", path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_context(e, "cannot open", path))
}

fn io_context(e: std::io::Error, what: &str, path: &Path) -> HarnessError {
    HarnessError::Io(std::io::Error::new(e.kind(), format!("{what} {}: {e}", path.display())))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = create(path)?;
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let r = open(path)?;
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Writes lossless images (`images/NNNNN.f32`), 8-bit previews and masks,
/// and the manifest into `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, records: &[SampleRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let image = format!("images/{i:05}.f32");
        let preview = format!("images/{i:05}.pgm");
        let mask = format!("masks/{i:05}.pgm");
        let mut w = create(&dir.join(&image))?;
        write_raw(&mut w, &r.image)?;
        w.flush()?;
        let mut w = create(&dir.join(&preview))?;
        write_pgm(&mut w, &r.image, Some(&r.meta))?;
        w.flush()?;
        let mut w = create(&dir.join(&mask))?;
        write_mask_pgm(&mut w, &r.mask)?;
        w.flush()?;
        entries.push(ManifestEntry {
            image,
            preview: Some(preview),
            mask: Some(mask),
            block: None,
            meta: Some(r.meta.clone()),
        });
    }
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&path, &entries)?;
    Ok(path)
}

pub fn read_image(path: &Path) -> Result<echoseg_core::Image> {
    let mut r = open(path)?;
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    Ok(if is_pgm { read_pgm(&mut r)?.0 } else { read_raw(&mut r)? })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(read_mask_pgm(&mut open(path)?)?)
}

/// Loads every sample of one or more manifests, in order.
pub fn load_dataset(manifests: &[PathBuf]) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    for manifest in manifests {
        let base = manifest.parent().unwrap_or(Path::new("."));
        for (n, e) in read_manifest(manifest)?.into_iter().enumerate() {
            let missing = |what: &str| {
                HarnessError::Data(format!("{} line {}: no {what}", manifest.display(), n + 1))
            };
            let mask_path = e.mask.as_deref().ok_or_else(|| missing("mask"))?;
            let meta = e.meta.ok_or_else(|| missing("meta"))?;
            let image = read_image(&base.join(&e.image))?;
            let mask = read_mask(&base.join(mask_path))?;
            if (image.width, image.height) != (mask.width, mask.height) || image.width != image.height {
                return Err(HarnessError::Data(format!(
                    "{} line {}: image {}x{} and mask {}x{} must be equal squares",
                    manifest.display(),
                    n + 1,
                    image.width,
                    image.height,
                    mask.width,
                    mask.height
                )));
            }
            records.push(SampleRecord { image, mask, meta });
        }
    }
    Ok(records)
}

pub const FOLDS_NAME: &str = "folds.json";
pub const LOSS_NAME: &str = "loss.csv";

pub fn checkpoint_name(fold: usize) -> String {
    format!("fold{fold}.ckpt")
}

/// Checkpoint per fold, the fold plan and the loss log.
pub fn save_training(dir: &Path, outcome: &TrainOutcome, plan: &FoldPlan) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in &outcome.folds {
        let meta = serde_json::to_value(&f.meta)?;
        save_checkpoint(&dir.join(checkpoint_name(f.meta.fold)), &f.model.params, &meta)?;
    }
    let mut w = create(&dir.join(FOLDS_NAME))?;
    serde_json::to_writer_pretty(&mut w, plan)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let mut w = create(&dir.join(LOSS_NAME))?;
    write_loss_csv(&mut w, &outcome.losses)?;
    w.flush()?;
    Ok(())
}

/// Everything needed to evaluate a training run.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub kind: ModelKind,
    pub plan: FoldPlan,
    pub models: BTreeMap<usize, ClpuModel<f32>>,
    pub metas: BTreeMap<usize, CheckpointMeta>,
}

/// Loads a directory written by [`save_training`]. Absent fold checkpoints
/// are reported together.
pub fn load_training(dir: &Path) -> Result<LoadedRun> {
    let plan: FoldPlan = serde_json::from_reader(open(&dir.join(FOLDS_NAME))?)?;
    let missing: Vec<usize> = (0..plan.k).filter(|&f| !dir.join(checkpoint_name(f)).is_file()).collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingCheckpoint(missing));
    }
    let mut models = BTreeMap::new();
    let mut metas = BTreeMap::new();
    let mut kind = None;
    for fold in 0..plan.k {
        let (store, meta) = load_checkpoint(&dir.join(checkpoint_name(fold)))?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        if meta.fold != fold || meta.k != plan.k {
            return Err(HarnessError::Data(format!(
                "{} claims fold {} of {}",
                checkpoint_name(fold),
                meta.fold,
                meta.k
            )));
        }
        if *kind.get_or_insert(meta.kind) != meta.kind {
            return Err(HarnessError::Data("checkpoints mix model kinds".into()));
        }
        // Initial values are overwritten; the seed is irrelevant.
        let mut model = ClpuModel::new(meta.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.params.load_from(&store)?;
        models.insert(fold, model);
        metas.insert(fold, meta);
    }
    Ok(LoadedRun {
        kind: kind.expect("k >= 2 folds were loaded"),
        plan,
        models,
        metas,
    })
}

pub fn write_loss_csv<W: Write>(w: &mut W, records: &[LossRecord]) -> Result<()> {
    writeln!(w, "fold,epoch,step,loss,loss_vae,loss_mse")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.fold, r.epoch, r.step, r.loss, r.loss_vae, r.loss_mse)?;
    }
    Ok(())
}

/// One row of a metrics table; `fold` is a number or `aggregate`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub fold: String,
    pub group: String,
    pub metrics: Metrics,
}

fn write_row<W: Write>(w: &mut W, fold: &str, group: &str, m: &Metrics) -> Result<()> {
    write!(w, "{fold},{group}")?;
    for v in m.values() {
        write!(w, ",{v}")?;
    }
    writeln!(w)?;
    Ok(())
}

fn header<W: Write>(w: &mut W) -> Result<()> {
    writeln!(w, "fold,group,{}", METRIC_NAMES.join(","))?;
    Ok(())
}

/// Per fold an `all` row then group rows; then the same for `aggregate`.
pub fn write_metrics_csv<W: Write>(w: &mut W, report: &MetricsReport) -> Result<()> {
    header(w)?;
    for FoldMetrics { fold, overall, groups, .. } in &report.folds {
        let fold = fold.to_string();
        write_row(w, &fold, "all", overall)?;
        for (g, m) in groups {
            write_row(w, &fold, g, m)?;
        }
    }
    write_row(w, "aggregate", "all", &report.aggregate)?;
    for (g, m) in &report.groups {
        write_row(w, "aggregate", g, m)?;
    }
    Ok(())
}

/// Same columns as the metrics table, one `sample:<index>` row per held-out
/// sample.
pub fn write_sample_csv<W: Write>(w: &mut W, report: &MetricsReport) -> Result<()> {
    header(w)?;
    for s in &report.samples {
        write_row(w, &s.fold.to_string(), &format!("sample:{}", s.index), &s.metrics)?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut lines = BufReader::new(r).lines();
    let expected = format!("fold,group,{}", METRIC_NAMES.join(","));
    let first = lines.next().transpose()?;
    if first.as_deref().map(str::trim) != Some(expected.as_str()) {
        return Err(HarnessError::Data(format!("metrics CSV must start with `{expected}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || HarnessError::Data(format!("metrics CSV line {}: {line:?}", n + 2));
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 2 + METRIC_NAMES.len() {
            return Err(bad());
        }
        let mut values = [0.0; 5];
        for (v, c) in values.iter_mut().zip(&cols[2..]) {
            *v = c.parse().map_err(|_| bad())?;
        }
        rows.push(MetricsRow {
            fold: cols[0].to_string(),
            group: cols[1].to_string(),
            metrics: Metrics::from_values(values),
        });
    }
    Ok(rows)
}

/// The report without per-sample rows, tagged with the model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub model: String,
    pub aggregate: Metrics,
    pub folds: Vec<FoldMetrics>,
    pub groups: BTreeMap<String, Metrics>,
    pub samples: usize,
}

impl MetricsSummary {
    pub fn new(model: &str, report: &MetricsReport) -> Self {
        MetricsSummary {
            model: model.to_string(),
            aggregate: report.aggregate,
            folds: report.folds.clone(),
            groups: report.groups.clone(),
            samples: report.samples.len(),
        }
    }
}

pub const METRICS_NAME: &str = "metrics.csv";
pub const SAMPLES_NAME: &str = "samples.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const PREDICTIONS_NAME: &str = "predictions.jsonl";

/// A predicted mask on disk, keyed by dataset index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub index: usize,
    pub fold: usize,
    pub prediction: String,
}

/// Metrics table, per-sample table, JSON summary and predicted masks.
pub fn save_evaluation(
    dir: &Path,
    model: &str,
    report: &MetricsReport,
    predictions: &[(usize, Mask)],
) -> Result<()> {
    fs::create_dir_all(dir.join("predictions"))?;
    let mut w = create(&dir.join(METRICS_NAME))?;
    write_metrics_csv(&mut w, report)?;
    w.flush()?;
    let mut w = create(&dir.join(SAMPLES_NAME))?;
    write_sample_csv(&mut w, report)?;
    w.flush()?;
    let mut w = create(&dir.join(SUMMARY_NAME))?;
    serde_json::to_writer_pretty(&mut w, &MetricsSummary::new(model, report))?;
    w.write_all(b"\n")?;
    w.flush()?;

    let fold_of: BTreeMap<usize, usize> = report.samples.iter().map(|s| (s.index, s.fold)).collect();
    let mut w = create(&dir.join(PREDICTIONS_NAME))?;
    for (index, mask) in predictions {
        let rel = format!("predictions/{index:05}.pgm");
        let mut pw = create(&dir.join(&rel))?;
        write_mask_pgm(&mut pw, mask)?;
        pw.flush()?;
        let entry = PredictionEntry {
            index: *index,
            fold: fold_of.get(index).copied().unwrap_or_default(),
            prediction: rel,
        };
        serde_json::to_writer(&mut w, &entry)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionEntry>> {
    let r = open(path)?;
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| HarnessError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}
