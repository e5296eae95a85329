use std::fs;
use std::path::{Path, PathBuf};

use echoseg_core::formats::{read_recording, write_mask_pgm, write_pgm, write_raw, write_recording};
use echoseg_core::{render_bursts, render_mask, ArrayGeometry, Backend, MultichannelRecording, PipelineConfig, Preprocessor, Scene};
use echoseg_harness::dataset::{resize_image, resize_mask, CANONICAL_SIZE};
use echoseg_harness::io::{
    load_dataset, load_training, read_image, read_manifest, read_mask, read_metrics_csv, read_predictions,
    save_evaluation, save_training, write_dataset, write_manifest, ManifestEntry, MetricsSummary, MANIFEST_NAME,
};
use echoseg_harness::{
    build_synthetic_dataset, comparison_table, evaluate, kfold_by_subject, train, ExperimentConfig, SampleMeta,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::{Cli, Command, DatasetArgs, EvalArgs, PreprocessArgs, RenderArgs, SimulateArgs, TrainArgs};
use crate::error::{CliError, Result};
use crate::render;

pub fn run(cli: &Cli) -> Result<()> {
    let backend = Backend::default();
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(0)),
        Command::Preprocess(a) => preprocess(a, backend),
        Command::Dataset(a) => dataset(a, cli.seed, backend),
        Command::Train(a) => train_cmd(a, cli.seed, backend),
        Command::Eval(a) => eval_cmd(a, cli.seed, backend),
        Command::Render(a) => render_cmd(a),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_json(p))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(err)?;
    }
    fs::write(path, bytes).map_err(err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("config types serialize");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read_rec(path: &Path) -> Result<MultichannelRecording> {
    let bytes = read_bytes(path)?;
    Ok(read_recording(&mut bytes.as_slice())?)
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let scene: Scene = read_json(&a.scene)?;
    let pipeline: PipelineConfig = load_config(a.config.as_ref())?;
    if a.bursts == 0 {
        return Err(CliError::Usage("--bursts must be at least 1".into()));
    }
    let rec = render_bursts(&scene, &ArrayGeometry::default(), &pipeline.burst, a.bursts, seed)?;
    let mut buf = Vec::new();
    write_recording(&mut buf, &rec)?;
    write_bytes(&a.out, &buf)?;
    log::info!("wrote {} ({} bursts, seed {seed})", a.out.display(), a.bursts);
    Ok(())
}

/// Metadata for a sample simulated from `scene`: the first reflector is the
/// person.
fn scene_meta(scene: &Scene, a: &PreprocessArgs) -> Result<SampleMeta> {
    let person = scene
        .reflectors
        .first()
        .ok_or_else(|| CliError::Usage("--scene has no reflectors to take as the person".into()))?;
    Ok(SampleMeta {
        subject_id: a.subject,
        room_id: a.room,
        distance_m: person.center.range_m,
        motion_tag: a.motion.clone(),
        azimuth_deg: person.center.azimuth_deg,
        polar_deg: person.center.polar_deg,
    })
}

fn preprocess(a: &PreprocessArgs, backend: Backend) -> Result<()> {
    if a.size == 0 || CANONICAL_SIZE % a.size != 0 {
        return Err(CliError::Usage(format!("--size {} must divide {CANONICAL_SIZE}", a.size)));
    }
    let config: PipelineConfig = load_config(a.config.as_ref())?;
    let scene: Option<Scene> = a.scene.as_deref().map(read_json).transpose()?;
    let meta = scene.as_ref().map(|s| scene_meta(s, a)).transpose()?;
    let rec = read_rec(&a.input)?;
    let reference = read_rec(&a.reference)?;

    let pre = Preprocessor::new(config, rec.geometry.clone(), backend)?;
    let refs = pre.reference_maps(&reference)?;
    let images = pre.images(&rec, &refs)?;

    create_dir(&a.out.join("images"))?;
    let mask = match &scene {
        Some(s) => {
            let rel = "masks/mask.pgm".to_string();
            let mut buf = Vec::new();
            write_mask_pgm(&mut buf, &resize_mask(&render_mask(s, &pre.grid), a.size))?;
            write_bytes(&a.out.join(&rel), &buf)?;
            Some(rel)
        }
        None => None,
    };

    #[derive(Serialize)]
    struct PgmComment<'a> {
        block: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        meta: Option<&'a SampleMeta>,
    }

    let mut entries = Vec::with_capacity(images.len());
    for (i, us) in images.iter().enumerate() {
        let img = resize_image(&us.to_image(), a.size)?;
        let pgm = format!("images/block_{i:05}.pgm");
        let mut buf = Vec::new();
        let comment = PgmComment {
            block: i,
            meta: meta.as_ref(),
        };
        write_pgm(&mut buf, &img, Some(&comment))?;
        write_bytes(&a.out.join(&pgm), &buf)?;
        let image = if a.raw {
            let raw = format!("images/block_{i:05}.f32");
            let mut buf = Vec::new();
            write_raw(&mut buf, &img)?;
            write_bytes(&a.out.join(&raw), &buf)?;
            raw
        } else {
            pgm.clone()
        };
        entries.push(ManifestEntry {
            preview: (image != pgm).then_some(pgm),
            image,
            mask: mask.clone(),
            block: Some(i),
            meta: meta.clone(),
        });
    }
    write_manifest(&a.out.join(MANIFEST_NAME), &entries)?;
    log::info!("wrote {} images to {}", entries.len(), a.out.display());
    Ok(())
}

fn dataset(a: &DatasetArgs, seed: Option<u64>, backend: Backend) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(a.config.as_ref())?;
    if let Some(n) = a.scenes {
        cfg.dataset.n_scenes = n;
    }
    if let Some(s) = seed {
        cfg.dataset.seed = s;
    }
    cfg.dataset.validate()?;
    let records = build_synthetic_dataset(&cfg.dataset, backend)?;
    create_dir(&a.out)?;
    write_dataset(&a.out, &records)?;
    write_json(&a.out.join("dataset.json"), &cfg.dataset)?;
    log::info!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>, backend: Backend) -> Result<()> {
    let mut cfg: ExperimentConfig = load_config(a.config.as_ref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.train.validate()?;
    let records = load_dataset(&a.manifest)?;
    if records.is_empty() {
        return Err(CliError::Usage("the manifest lists no samples".into()));
    }
    let plan = kfold_by_subject(&records, cfg.train.folds)?;
    let outcome = train(a.model, &records, &plan, &cfg.train, cfg.seed, backend)?;
    create_dir(&a.out)?;
    save_training(&a.out, &outcome, &plan)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    for fold in 0..plan.k {
        if let Some(last) = outcome.epoch_means(fold).last() {
            log::info!("fold {fold}: final epoch mean loss {last:.6}");
        }
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, seed: Option<u64>, backend: Backend) -> Result<()> {
    let cfg: ExperimentConfig = load_config(a.config.as_ref())?;
    let seed = seed.unwrap_or(cfg.seed);
    let run = load_training(&a.checkpoints)?;
    let records = load_dataset(&a.manifest)?;
    let ev = evaluate(&run.models, &records, &run.plan, &cfg.eval, seed, backend)?;
    create_dir(&a.out)?;
    save_evaluation(&a.out, run.kind.name(), &ev.report, &ev.predictions)?;
    print!("{}", comparison_table(&[(run.kind.name(), ev.report.aggregate)]));
    Ok(())
}

fn write_image(path: &Path, img: &echoseg_core::Image) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm::<_, ()>(&mut buf, img, None)?;
    write_bytes(path, &buf)
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    if a.metrics.is_none() && a.predictions.is_none() && a.summary.is_empty() {
        return Err(CliError::Usage(
            "nothing to render: pass --metrics, --predictions or --summary".into(),
        ));
    }
    create_dir(&a.out)?;

    if let Some(path) = &a.metrics {
        let rows = read_metrics_csv(read_bytes(path)?.as_slice())?;
        let per_sample: Vec<f64> = rows
            .iter()
            .filter(|r| r.group.starts_with("sample:"))
            .map(|r| r.metrics.iou)
            .collect();
        let values = if per_sample.is_empty() {
            rows.iter().map(|r| r.metrics.iou).collect()
        } else {
            per_sample
        };
        let counts = render::histogram(&values);
        write_image(&a.out.join("iou_histogram.pgm"), &render::histogram_image(&counts))?;
        write_json(
            &a.out.join("iou_histogram.json"),
            &serde_json::json!({
                "bin_width": render::BIN_WIDTH,
                "bins": render::BINS,
                "samples": values.len(),
                "counts": counts,
            }),
        )?;
    }

    if let Some(path) = &a.predictions {
        let manifest_path = a.manifest.as_ref().expect("clap enforces --manifest");
        let manifest = read_manifest(manifest_path)?;
        let mbase = manifest_path.parent().unwrap_or(Path::new("."));
        let pbase = path.parent().unwrap_or(Path::new("."));
        let mut rows = Vec::new();
        for p in read_predictions(path)?.into_iter().take(a.max_rows) {
            let entry = manifest.get(p.index).ok_or_else(|| {
                CliError::Usage(format!("prediction for sample {} is not in the manifest", p.index))
            })?;
            let mask = entry
                .mask
                .as_ref()
                .ok_or_else(|| CliError::Usage(format!("sample {} has no ground-truth mask", p.index)))?;
            let shown = entry.preview.as_ref().unwrap_or(&entry.image);
            rows.push((
                read_image(&mbase.join(shown))?,
                read_mask(&mbase.join(mask))?,
                read_mask(&pbase.join(&p.prediction))?,
            ));
        }
        write_image(&a.out.join("prediction_grid.pgm"), &render::prediction_grid(&rows))?;
    }

    if !a.summary.is_empty() {
        let summaries = a
            .summary
            .iter()
            .map(|p| read_json::<MetricsSummary>(p))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<(&str, _)> = summaries.iter().map(|s| (s.model.as_str(), s.aggregate)).collect();
        let table = comparison_table(&rows);
        write_bytes(&a.out.join("comparison.txt"), table.as_bytes())?;
        print!("{table}");
    }
    Ok(())
}
