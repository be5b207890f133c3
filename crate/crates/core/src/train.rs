//! Mini-batch training, evaluation and tile inference.
//!
//! Every epoch visits the training samples in a fresh permutation drawn from
//! a ChaCha8 stream seeded by `(shuffle_seed, epoch)`, so resuming from a
//! checkpoint needs no stored RNG state. Batches are `batch_size` samples
//! with the last partial batch kept. Per-sample gradients are computed in
//! parallel and summed in sample order, which makes results independent of
//! the thread count.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_split, normalize_input, slc_features, DatasetManifest, DemImage, NormalizationStats, Sample, SlcImage,
    SplitTag,
};
use crate::error::{Error, Result};
use crate::metrics::{mse_grad, squared_error_sum, EvalReport};
use crate::model::{Architecture, Checkpoint, DemNet, Mode, ModelParams, CHECKPOINT_VERSION, DEFAULT_L2};
use crate::optim::{AdamConfig, AdamState};
use crate::synth::derive_seed;
use crate::tensor::{Scalar, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_rmse,test_rmse,wall_time";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient on convolution kernels.
    pub l2: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    /// Write `checkpoint_eNNNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: u64,
    /// Evaluate the test split every this many epochs; 0 disables.
    pub test_eval_every: u64,
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 128,
            epochs: 500,
            alpha: adam.alpha,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            l2: DEFAULT_L2,
            init_seed: 0,
            shuffle_seed: 0,
            checkpoint_every: 50,
            test_eval_every: 1,
            manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { alpha: self.alpha, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!("l2 must be finite and non-negative, got {}", self.l2)));
        }
        self.adam().validate()
    }

    /// SHA-256 over the settings that shape the optimisation trajectory.
    ///
    /// Epoch count, checkpoint cadence, evaluation cadence and the manifest
    /// path are left out so a run can be resumed with a longer schedule.
    pub fn digest(&self) -> [u8; 32] {
        let key = serde_json::json!({
            "batch_size": self.batch_size,
            "alpha": self.alpha,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "l2": self.l2,
            "init_seed": self.init_seed,
            "shuffle_seed": self.shuffle_seed,
        });
        Sha256::digest(key.to_string().as_bytes()).into()
    }
}

/// Training loss and RMSE of one epoch, measured on the forward passes
/// that produced the epoch's updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: u64,
    /// Sample-weighted mean over batches of `MSE + l2 * sum(w^2)`.
    pub train_loss: f64,
    /// Root of the mean squared error over every training pixel of the epoch.
    pub train_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub stats: EpochStats,
    pub test_rmse: Option<f64>,
    pub wall_time: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let test = self.test_rmse.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{test},{:.3}", self.stats.epoch, self.stats.train_loss, self.stats.train_rmse, self.wall_time)
    }
}

pub struct Trainer<T> {
    pub net: DemNet<T>,
    pub optimizer: AdamState<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: u64,
    pub norm_stats: Option<NormalizationStats>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(arch: Architecture, config: TrainConfig, norm_stats: Option<NormalizationStats>) -> Result<Self> {
        config.validate()?;
        let net = DemNet::new(arch, config.init_seed)?;
        let optimizer = AdamState::new(config.adam(), &net.params.tensors);
        Ok(Self { net, optimizer, config, epoch: 0, norm_stats })
    }

    /// Continue from `ckpt`. The trajectory-shaping part of `config` must
    /// match the one the checkpoint was written under.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if ckpt.config_digest != config.digest() {
            return Err(Error::InvalidArgument(
                "checkpoint was produced under a different training configuration (batch size, optimiser, l2 or seeds)"
                    .into(),
            ));
        }
        let net = DemNet::from_params(ckpt.arch, ckpt.params)?;
        Ok(Self { net, optimizer: ckpt.optimizer, config, epoch: ckpt.epoch, norm_stats: ckpt.norm_stats })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arch: self.net.arch.clone(),
            params: self.net.params.clone(),
            optimizer: self.optimizer.clone(),
            norm_stats: self.norm_stats,
            config_digest: self.config.digest(),
            epoch: self.epoch,
        }
    }

    /// Visiting order of `n` training samples in 1-based `epoch`.
    pub fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        epoch_order(self.config.shuffle_seed, epoch, n)
    }

    /// One pass over `samples`, one Adam step per batch.
    pub fn run_epoch(&mut self, samples: &[Sample<T>]) -> Result<EpochStats> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let epoch = self.epoch + 1;
        let order = self.epoch_order(epoch, samples.len());
        let l2 = T::lit(self.config.l2);
        let (mut loss_sum, mut sq_sum, mut pixel_total) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let (mut grads, sq, pixels) = batch_gradient(&self.net, samples, batch)?;
            let loss = sq / pixels as f64 + self.net.l2_penalty(l2).as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}, batch {}", b + 1)));
            }
            self.net.add_l2_gradient(l2, &mut grads)?;
            self.optimizer
                .step(&mut self.net.params.tensors, &grads.tensors, &self.net.params.names)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {}: {e}", b + 1)))?;
            loss_sum += loss * batch.len() as f64;
            sq_sum += sq;
            pixel_total += pixels;
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            train_loss: loss_sum / samples.len() as f64,
            train_rmse: (sq_sum / pixel_total as f64).sqrt(),
        })
    }

    /// Train until `self.config.epochs` epochs are complete or `on_epoch`
    /// breaks. Test RMSE is filled in every `test_eval_every` epochs.
    pub fn fit(
        &mut self,
        train: &[Sample<T>],
        test: &[Sample<T>],
        mut on_epoch: impl FnMut(&Self, &EpochRecord) -> Result<ControlFlow<()>>,
    ) -> Result<Vec<EpochRecord>> {
        let start = Instant::now();
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(train)?;
            let every = self.config.test_eval_every;
            let test_rmse = if !test.is_empty() && every > 0 && stats.epoch % every == 0 {
                Some(evaluate(&self.net, test)?.mean_rmse)
            } else {
                None
            };
            let record = EpochRecord { stats, test_rmse, wall_time: start.elapsed().as_secs_f64() };
            history.push(record);
            if on_epoch(self, &record)?.is_break() {
                break;
            }
        }
        Ok(history)
    }
}

pub fn epoch_order(shuffle_seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, SHUFFLE_STREAM, epoch)));
    ids
}

/// Data-term gradient of the batch MSE, its squared-error sum and pixel count.
fn batch_gradient<T: Scalar>(
    net: &DemNet<T>,
    samples: &[Sample<T>],
    batch: &[usize],
) -> Result<(ModelParams<T>, f64, usize)> {
    let pixels: usize = batch.iter().map(|&i| samples[i].target.len()).sum();
    let chunk = rayon::current_num_threads().max(1);
    let mut grads = net.params.zeros_like();
    let mut sq = 0.0;
    for ids in batch.chunks(chunk) {
        let parts = ids
            .par_iter()
            .map(|&i| {
                let s = &samples[i];
                let (pred, cache) = net.forward(&s.input, Mode::Train)?;
                let cache = cache.expect("train mode keeps a cache");
                let g_out = mse_grad(&pred, &s.target, pixels)?;
                let mut g = net.params.zeros_like();
                net.accumulate_gradients(&cache, &g_out, &mut g)?;
                Ok((g, squared_error_sum(&pred, &s.target)?))
            })
            .collect::<Result<Vec<_>>>()?;
        // fixed summation order keeps the result independent of scheduling
        for (g, s) in parts {
            grads.add_assign(&g)?;
            sq += s;
        }
    }
    Ok((grads, sq, pixels))
}

/// Inference on every input, in order.
pub fn predict_all<T: Scalar>(net: &DemNet<T>, inputs: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    inputs.par_iter().map(|x| net.forward(x, Mode::Infer).map(|(y, _)| y)).collect()
}

/// Per-image RMSE, its mean and the binned report over `samples`.
pub fn evaluate<T: Scalar>(net: &DemNet<T>, samples: &[Sample<T>]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let inputs: Vec<&Tensor<T>> = samples.iter().map(|s| &s.input).collect();
    let preds = predict_all(net, &inputs)?;
    let gts: Vec<Tensor<T>> = samples.iter().map(|s| s.target.clone()).collect();
    EvalReport::from_predictions(&preds, &gts)
}

/// Evaluate a checkpoint on one split of a manifest.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint<f32>,
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: SplitTag,
) -> Result<(Vec<usize>, EvalReport)> {
    let (ids, samples) = load_split::<f32>(manifest, base_dir, split)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("the {split:?} split is empty")));
    }
    let net = DemNet::from_params(ckpt.arch.clone(), ckpt.params.clone())?;
    Ok((ids, evaluate(&net, &samples)?))
}

/// Wall-clock timing of [`predict_tile`], in milliseconds.
///
/// `preprocess_ms` covers downsampling and normalising the SLC tile once;
/// the forward statistics come from `repeats` inference passes on the
/// prepared input. File I/O is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyReport {
    pub preprocess_ms: f64,
    pub forward_ms_median: f64,
    pub forward_ms_min: f64,
    pub repeats: usize,
}

/// Elevation map in metres for a square SLC tile covering one window.
pub fn predict_tile(ckpt: &Checkpoint<f32>, slc: &SlcImage, repeats: usize) -> Result<(DemImage, LatencyReport)> {
    let stats = ckpt
        .norm_stats
        .ok_or_else(|| Error::InvalidArgument("checkpoint carries no normalisation statistics".into()))?;
    if slc.rows != slc.cols {
        return Err(Error::Shape(format!("prediction needs a square SLC tile, got {}x{}", slc.rows, slc.cols)));
    }
    let net = DemNet::from_params(ckpt.arch.clone(), ckpt.params.clone())?;
    let [n, _, _] = net.arch.input_shape;
    let t0 = Instant::now();
    let (log_amp, phase) = slc_features(slc, 0, 0, slc.rows, n)?;
    let input = normalize_input::<f32>(&log_amp, &phase, &stats)?;
    let preprocess_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut times = Vec::with_capacity(repeats.max(1));
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let (y, _) = net.forward(&input, Mode::Infer)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        out = Some(y);
    }
    times.sort_by(f64::total_cmp);
    let y = out.expect("at least one pass");
    let (h, w, _) = y.hwc()?;
    let dem = DemImage::new(h, w, y.into_data())?;
    let report = LatencyReport {
        preprocess_ms,
        forward_ms_median: times[times.len() / 2],
        forward_ms_min: times[0],
        repeats: times.len(),
    };
    Ok((dem, report))
}

/// Append-only epoch log.
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    /// Opens `path`, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if fresh {
            fs::write(path, format!("{METRICS_HEADER}\n"))
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn append(&self, record: &EpochRecord) -> Result<()> {
        let ctx = || format!("appending to {}", self.path.display());
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(|e| Error::io(ctx(), e))?;
        writeln!(f, "{}", record.csv_row()).map_err(|e| Error::io(ctx(), e))
    }
}

pub fn checkpoint_name(epoch: u64) -> String {
    format!("checkpoint_e{epoch:04}.ckpt")
}

/// Result of [`train_from_manifest`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub history: Vec<EpochRecord>,
    pub final_path: PathBuf,
}

/// Train in `f32` on a manifest's train split, logging to
/// `out_dir/metrics.csv`, saving periodic checkpoints and `out_dir/model.ckpt`.
///
/// With `resume`, training continues from that checkpoint up to `config.epochs`.
pub fn train_from_manifest(
    config: &TrainConfig,
    manifest_path: &Path,
    out_dir: &Path,
    arch: Architecture,
    resume: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (_, train) = load_split::<f32>(&manifest, base, SplitTag::Train)?;
    let (_, test) = load_split::<f32>(&manifest, base, SplitTag::Test)?;
    if train.is_empty() {
        return Err(Error::Manifest("the manifest has no training samples".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(crate::model::load_checkpoint(p)?, config.clone())?,
        None => Trainer::new(arch, config.clone(), manifest.stats)?,
    };
    let log = MetricsLog::open(&out_dir.join(METRICS_FILE))?;
    let history = trainer.fit(&train, &test, |t, rec| {
        log.append(rec)?;
        let every = t.config.checkpoint_every;
        if every > 0 && rec.stats.epoch % every == 0 {
            crate::model::save_checkpoint(&t.checkpoint(), &out_dir.join(checkpoint_name(rec.stats.epoch)))?;
        }
        on_epoch(rec);
        Ok(ControlFlow::Continue(()))
    })?;
    let checkpoint = trainer.checkpoint();
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    crate::model::save_checkpoint(&checkpoint, &final_path)?;
    Ok(TrainOutcome { checkpoint, history, final_path })
}
