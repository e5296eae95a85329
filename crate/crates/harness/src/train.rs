use std::collections::BTreeMap;

use echoseg_clpu::{ClpuModel, LossWeights, ModelConfig, ModelKind};
use echoseg_core::par::Backend;
use echoseg_core::Mask;
use echoseg_nn::{Adam, AdamConfig, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{HarnessError, Result};
use crate::folds::FoldPlan;
use crate::metrics::{image_metrics, MetricsReport, SampleScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Fixed budget; there is no early stopping.
    pub epochs: usize,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 50,
            folds: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(HarnessError::Config("batch_size and epochs must be positive".into()));
        }
        if self.folds < 2 {
            return Err(HarnessError::Config(format!("folds = {} leaves no training data", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            batch_size: 16,
        }
    }
}

/// One optimizer step's loss terms. `step` counts from 1 within a fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub fold: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub loss_vae: f64,
    pub loss_mse: f64,
}

/// What is stored next to each fold's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub fold: usize,
    pub k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub test_subjects: Vec<usize>,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
}

#[derive(Debug, Clone)]
pub struct FoldModel {
    pub meta: CheckpointMeta,
    pub model: ClpuModel<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub kind: ModelKind,
    pub folds: Vec<FoldModel>,
    pub losses: Vec<LossRecord>,
}

impl TrainOutcome {
    /// Mean loss per epoch for one fold, in epoch order.
    pub fn epoch_means(&self, fold: usize) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in self.losses.iter().filter(|r| r.fold == fold) {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.loss;
            e.1 += 1;
        }
        sums.values().map(|&(s, n)| s / n as f64).collect()
    }

    pub fn models(&self) -> BTreeMap<usize, ClpuModel<f32>> {
        self.folds.iter().map(|f| (f.meta.fold, f.model.clone())).collect()
    }
}

/// Independent seed for a numbered sub-stream (splitmix64 finalizer).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 1 << 40;
const SHUFFLE_STREAM: u64 = 2 << 40;
const NOISE_STREAM: u64 = 3 << 40;
const EVAL_STREAM: u64 = 4 << 40;

/// Size and finiteness of every image; positions in errors are into `records`.
fn check_images(records: &[&SampleRecord], size: usize) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.image.width != size || r.image.height != size {
            return Err(HarnessError::Data(format!(
                "sample image is {}x{} but the model expects {size}x{size}",
                r.image.width, r.image.height
            )));
        }
        if r.image.data.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Data(format!("sample {i} has non-finite pixels")));
        }
    }
    Ok(())
}

fn image_batch(batch: &[&SampleRecord]) -> Tensor<f32> {
    let s = batch[0].size();
    let data = batch.iter().flat_map(|r| r.image.data.iter().copied()).collect();
    Tensor::new(&[batch.len(), 1, s, s], data).expect("batch images share one size")
}

fn mask_batch(batch: &[&SampleRecord]) -> Tensor<f32> {
    let s = batch[0].size();
    let data = batch
        .iter()
        .flat_map(|r| r.mask.data.iter().map(|&v| if v != 0 { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(&[batch.len(), 1, s, s], data).expect("batch masks share one size")
}

/// Trains one model per fold. Folds run through `backend`; each fold's loop
/// is sequential and fully determined by `seed`.
pub fn train(
    kind: ModelKind,
    records: &[SampleRecord],
    plan: &FoldPlan,
    config: &TrainConfig,
    seed: u64,
    backend: Backend,
) -> Result<TrainOutcome> {
    config.validate()?;
    plan.validate(records)?;
    let all: Vec<&SampleRecord> = records.iter().collect();
    check_images(&all, config.model.input_size())?;
    for fold in 0..plan.k {
        if plan.train_indices(records, fold).is_empty() {
            return Err(HarnessError::Data(format!("fold {fold} has no training samples")));
        }
    }
    let results = backend.map_range(plan.k, |fold| train_fold(kind, records, plan, config, seed, fold));
    let mut folds = Vec::with_capacity(plan.k);
    let mut losses = Vec::new();
    for r in results {
        let (fm, log) = r?;
        folds.push(fm);
        losses.extend(log);
    }
    Ok(TrainOutcome { kind, folds, losses })
}

fn train_fold(
    kind: ModelKind,
    records: &[SampleRecord],
    plan: &FoldPlan,
    config: &TrainConfig,
    seed: u64,
    fold: usize,
) -> Result<(FoldModel, Vec<LossRecord>)> {
    let fold_stream = fold as u64;
    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, INIT_STREAM + fold_stream));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, SHUFFLE_STREAM + fold_stream));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, NOISE_STREAM + fold_stream));

    let mut model: ClpuModel<f32> = ClpuModel::new(config.model.clone(), &mut init_rng)?;
    let mut adam = Adam::new(config.adam)?;
    let mut order = plan.train_indices(records, fold);
    let mut log = Vec::new();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SampleRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let x = image_batch(&batch);
            let y = mask_batch(&batch);
            let g = Graph::with_backend(Backend::Sequential);
            let bound = model.params.bind(&g)?;
            let out = match kind {
                ModelKind::Clpu => model.loss_clpu(&g, &bound, &x, &y, &config.weights, &mut noise_rng),
                ModelKind::ProbUnet => {
                    model.loss_probabilistic_unet(&g, &bound, &x, &y, config.weights.beta, &mut noise_rng)
                }
            };
            let diverged = |loss| HarnessError::Divergence { fold, epoch, batch: batch_no + 1, loss };
            let out = match out {
                Ok(out) if !out.terms.total.is_finite() => return Err(diverged(out.terms.total)),
                Ok(out) => out,
                // Inputs and shapes are the same every step, so a failure after
                // an update comes from the parameters (e.g. a sigma underflowing
                // to zero).
                Err(e) if step > 0 => {
                    log::warn!("fold {fold} epoch {epoch}: loss evaluation failed: {e}");
                    return Err(diverged(f64::NAN));
                }
                Err(e) => return Err(e.into()),
            };
            let grads = g.backward(out.loss)?;
            adam.step(&mut model.params, &bound, &grads)?;
            step += 1;
            log.push(LossRecord {
                fold,
                epoch,
                step,
                loss: out.terms.total,
                loss_vae: out.terms.vae,
                loss_mse: out.terms.mse,
            });
        }
        let this_epoch = log.iter().filter(|r| r.epoch == epoch);
        let (sum, n) = this_epoch.fold((0.0, 0), |(s, n), r| (s + r.loss, n + 1));
        log::info!("{} fold {fold} epoch {epoch}: mean loss {:.5}", kind.name(), sum / n as f64);
    }

    let meta = CheckpointMeta {
        kind,
        fold,
        k: plan.k,
        seed,
        epochs: config.epochs,
        test_subjects: plan.test_subjects(fold),
        model: config.model.clone(),
        weights: config.weights,
        adam: config.adam,
    };
    Ok((FoldModel { meta, model }, log))
}

/// Anything that turns a batch of samples into binary masks.
pub trait Segmenter: Sync {
    fn segment(&self, batch: &[&SampleRecord], threshold: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Mask>>;
}

impl Segmenter for ClpuModel<f32> {
    fn segment(&self, batch: &[&SampleRecord], threshold: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Mask>> {
        check_images(batch, self.config().input_size())?;
        let x = image_batch(batch);
        let g = Graph::with_backend(Backend::Sequential);
        let seg = self.infer_segmentation(&g, &x, rng, threshold)?;
        let s = batch[0].size();
        seg.masks
            .chunks(s * s)
            .map(|m| Ok(Mask::new(s, s, m.to_vec())?))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `(dataset index, predicted mask)` for every held-out sample, sorted by index.
    pub predictions: Vec<(usize, Mask)>,
}

/// Group keys a sample contributes to.
pub fn sample_groups(record: &SampleRecord) -> Vec<String> {
    vec![
        format!("distance:{}", record.meta.distance_band()),
        format!("room:{}", record.meta.room_id),
    ]
}

/// Scores each fold's model on its held-out subjects. Batches are independent
/// jobs with their own seeded latent draws, so the result does not depend on
/// the backend.
pub fn evaluate<S: Segmenter>(
    models: &BTreeMap<usize, S>,
    records: &[SampleRecord],
    plan: &FoldPlan,
    config: &EvalConfig,
    seed: u64,
    backend: Backend,
) -> Result<Evaluation> {
    plan.validate(records)?;
    let missing: Vec<usize> = (0..plan.k).filter(|f| !models.contains_key(f)).collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingCheckpoint(missing));
    }
    if config.batch_size == 0 {
        return Err(HarnessError::Config("eval batch_size must be positive".into()));
    }
    let mut jobs = Vec::new();
    for fold in 0..plan.k {
        let test = plan.test_indices(records, fold);
        for (c, chunk) in test.chunks(config.batch_size).enumerate() {
            jobs.push((fold, c, chunk.to_vec()));
        }
    }
    let results = backend.map_range(jobs.len(), |j| -> Result<Vec<(usize, usize, Mask)>> {
        let (fold, c, ref idx) = jobs[j];
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, EVAL_STREAM + ((fold as u64) << 20) + c as u64));
        let batch: Vec<&SampleRecord> = idx.iter().map(|&i| &records[i]).collect();
        let masks = models[&fold].segment(&batch, config.threshold, &mut rng)?;
        if masks.len() != batch.len() {
            return Err(HarnessError::Data(format!(
                "segmenter returned {} masks for {} samples",
                masks.len(),
                batch.len()
            )));
        }
        Ok(idx.iter().zip(masks).map(|(&i, m)| (fold, i, m)).collect())
    });
    let mut scores = Vec::new();
    let mut predictions = Vec::new();
    for r in results {
        for (fold, index, mask) in r? {
            let rec = &records[index];
            scores.push(SampleScore {
                fold,
                index,
                groups: sample_groups(rec),
                metrics: image_metrics(&mask, &rec.mask)?,
            });
            predictions.push((index, mask));
        }
    }
    predictions.sort_by_key(|p| p.0);
    let report = MetricsReport::from_samples(plan.k, scores)?;
    Ok(Evaluation { report, predictions })
}
