//! Decoder training by uniform sampling of (time, node) embedding rows.
//!
//! An anchor `t` pairs the embedding row at `t` (reservoir state after
//! consuming `x_t`) with the targets `x_{t+1} … x_{t+H}`.

mod split;

pub use split::{sample_minibatch, Region, SampleIndex, Split, SplitSpec};

use std::ops::Range;
use std::time::{Duration, Instant};

use ndarray::{s, Array2, Array3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ChannelStats, Dataset};
use crate::decoder::Decoder;
use crate::encoder::{EmbeddingStore, PrecomputeSpec};
use crate::error::{Result, SgpError};
use crate::metrics::{MetricAccumulator, MetricReport, DEFAULT_HORIZON_OFFSETS};
use crate::optim::{Adam, AdamConfig, MultiStepLr};

const EVAL_CHUNK: usize = 1024;
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const VALIDATION_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub lr_gamma: f64,
    /// Epochs at which the rate decays; `None` means 50% and 75% of `max_epochs`.
    pub lr_milestones: Option<Vec<usize>>,
    pub max_epochs: usize,
    pub batches_per_epoch: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_updates: Option<u64>,
    pub max_seconds: Option<f64>,
    /// Upper bound on validation rows scored per epoch.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            adam: AdamConfig::default(),
            lr_gamma: 0.3,
            lr_milestones: None,
            max_epochs: 200,
            batches_per_epoch: 300,
            patience: 50,
            seed: 0,
            max_updates: None,
            max_seconds: None,
            val_samples: 1 << 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.batches_per_epoch == 0 || self.val_samples == 0 {
            return Err(SgpError::Config(
                "batch_size, patience, batches_per_epoch and val_samples must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_gamma > 0.0) {
            return Err(SgpError::Config(format!(
                "learning rate {} and decay {} must be positive",
                self.lr, self.lr_gamma
            )));
        }
        if self.max_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(SgpError::Config("max_seconds must be positive".into()));
        }
        self.adam.validate()
    }

    pub fn schedule(&self) -> MultiStepLr {
        match &self.lr_milestones {
            Some(m) => MultiStepLr {
                base: self.lr,
                milestones: m.clone(),
                gamma: self.lr_gamma,
            },
            None => MultiStepLr::halves(self.lr, self.max_epochs, self.lr_gamma),
        }
    }
}

/// Embedding store together with normalized targets and the original values
/// used for reporting.
#[derive(Debug)]
pub struct TrainingData {
    store: EmbeddingStore,
    targets: Array3<f32>,
    values: Array3<f64>,
    mask: Array3<bool>,
    stats: ChannelStats,
}

impl TrainingData {
    /// Fails with a fingerprint error unless `store` was built from exactly
    /// this dataset, statistics and precompute settings.
    pub fn new(store: EmbeddingStore, dataset: &Dataset, stats: ChannelStats, spec: &PrecomputeSpec) -> Result<Self> {
        let expected = spec.fingerprint(dataset, &stats);
        if store.fingerprint() != expected {
            return Err(SgpError::Fingerprint(format!(
                "store {} has fingerprint {}, the current data and settings give {expected}",
                store.path().display(),
                store.fingerprint()
            )));
        }
        store.check_layout(&spec.layout(dataset.input_width()))?;
        if store.num_steps() != dataset.num_steps() || store.num_nodes() != dataset.num_nodes() {
            return Err(SgpError::Shape("store dimensions differ from the dataset".into()));
        }
        Ok(TrainingData {
            targets: stats.normalize(&dataset.values).mapv(|v| v as f32),
            values: dataset.values.clone(),
            mask: dataset.mask.clone(),
            store,
            stats,
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    pub fn num_nodes(&self) -> usize {
        self.store.num_nodes()
    }

    pub fn num_steps(&self) -> usize {
        self.store.num_steps()
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn region(&self, range: &Range<usize>, horizon: usize) -> Result<Region> {
        Region::new(range, self.store.washout(), horizon, self.num_steps(), self.num_nodes())
    }

    fn check_decoder(&self, decoder: &Decoder<f32>) -> Result<()> {
        self.store.check_layout(decoder.layout())?;
        if decoder.num_nodes() != self.num_nodes() || decoder.channels() != self.channels() {
            return Err(SgpError::Shape(format!(
                "decoder covers {} nodes × {} channels, data has {} × {}",
                decoder.num_nodes(),
                decoder.channels(),
                self.num_nodes(),
                self.channels()
            )));
        }
        Ok(())
    }

    fn fetch(&self, batch: &[SampleIndex], horizon: usize, buf: &mut Batch) -> Result<()> {
        buf.resize(batch.len(), self.store.width(), horizon, self.channels());
        buf.nodes.clear();
        buf.nodes.extend(batch.iter().map(|s| s.node));
        let pairs: Vec<(usize, usize)> = batch.iter().map(|s| (s.t, s.node)).collect();
        self.store.gather(&pairs, buf.z.view_mut())?;
        for (b, s) in batch.iter().enumerate() {
            let window = s![s.t + 1..s.t + 1 + horizon, s.node, ..];
            buf.target.slice_mut(s![b, .., ..]).assign(&self.targets.slice(window));
            buf.mask.slice_mut(s![b, .., ..]).assign(&self.mask.slice(window));
        }
        Ok(())
    }

    /// Masked MAE in normalized units over the given anchors.
    pub fn normalized_mae(&self, decoder: &Decoder<f32>, anchors: &[SampleIndex]) -> Result<f64> {
        self.check_decoder(decoder)?;
        let h = decoder.horizon();
        let parts = anchors
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| -> Result<(f64, u64)> {
                let mut buf = Batch::default();
                self.fetch(chunk, h, &mut buf)?;
                let y = decoder.forward(buf.z.view(), &buf.nodes)?;
                let mut sum = 0.0;
                let mut count = 0;
                Zip::from(&y).and(&buf.target).and(&buf.mask).for_each(|&p, &t, &m| {
                    if m {
                        sum += (p as f64 - t as f64).abs();
                        count += 1;
                    }
                });
                Ok((sum, count))
            })
            .collect::<Result<Vec<_>>>()?;
        let (sum, count) = parts.iter().fold((0.0, 0u64), |(s, c), (ps, pc)| (s + ps, c + pc));
        Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
    }
}

#[derive(Debug, Default)]
struct Batch {
    z: Array2<f32>,
    nodes: Vec<usize>,
    target: Array3<f32>,
    mask: Array3<bool>,
}

impl Batch {
    fn resize(&mut self, b: usize, width: usize, horizon: usize, channels: usize) {
        if self.z.dim() != (b, width) {
            self.z = Array2::zeros((b, width));
        }
        if self.target.dim() != (b, horizon, channels) {
            self.target = Array3::zeros((b, horizon, channels));
            self.mask = Array3::from_elem((b, horizon, channels), false);
        }
    }
}

/// Mean absolute error over observed cells and its cotangent, with the
/// subgradient at zero taken as zero.
pub fn masked_mae(pred: &Array3<f32>, target: &Array3<f32>, mask: &Array3<bool>) -> (f64, Array3<f32>) {
    let count = mask.iter().filter(|&&m| m).count();
    let mut upstream = Array3::zeros(pred.raw_dim());
    if count == 0 {
        return (0.0, upstream);
    }
    let inv = 1.0 / count as f32;
    let mut sum = 0.0f64;
    Zip::from(&mut upstream)
        .and(pred)
        .and(target)
        .and(mask)
        .for_each(|u, &p, &t, &m| {
            if m {
                let e = p - t;
                sum += e.abs() as f64;
                *u = if e > 0.0 {
                    inv
                } else if e < 0.0 {
                    -inv
                } else {
                    0.0
                };
            }
        });
    (sum / count as f64, upstream)
}

/// Optimizer state and random streams for repeated updates.
pub struct Trainer<'a> {
    data: &'a TrainingData,
    region: Region,
    batch_size: usize,
    optimizer: Adam<f32>,
    sampler: ChaCha8Rng,
    dropout: ChaCha8Rng,
    buf: Batch,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainingData, decoder: &Decoder<f32>, cfg: &TrainConfig, region: Region) -> Result<Self> {
        cfg.validate()?;
        data.check_decoder(decoder)?;
        Ok(Trainer {
            data,
            region,
            batch_size: cfg.batch_size,
            optimizer: Adam::new(decoder, cfg.adam)?,
            sampler: ChaCha8Rng::seed_from_u64(cfg.seed),
            dropout: ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM),
            buf: Batch::default(),
        })
    }

    /// Samples one batch and applies one optimizer step; returns the batch loss.
    pub fn update(&mut self, decoder: &mut Decoder<f32>, lr: f64) -> Result<f64> {
        let batch = sample_minibatch(&mut self.sampler, &self.region, self.batch_size);
        debug_assert!(batch.iter().all(|s| self.region.contains(s)));
        self.data.fetch(&batch, decoder.horizon(), &mut self.buf)?;
        let (y, cache) = decoder.forward_train(self.buf.z.view(), &self.buf.nodes, Some(&mut self.dropout))?;
        let (loss, upstream) = masked_mae(&y, &self.buf.target, &self.buf.mask);
        if !loss.is_finite() {
            let shown: Vec<String> = batch.iter().take(8).map(|s| format!("({},{})", s.t, s.node)).collect();
            return Err(SgpError::NonFinite(format!(
                "loss {loss} at update {} with lr {lr}; batch starts {}",
                self.optimizer.steps_taken() + 1,
                shown.join(" ")
            )));
        }
        let grads = decoder.backward(cache, upstream.view())?;
        self.optimizer.step(decoder, &grads, lr)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub batch_per_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    MaxUpdates,
    MaxSeconds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Minimum validation MAE (normalized units); NaN without a validation region.
    pub best_val_mae: f64,
    pub updates: u64,
    pub stop: StopReason,
}

/// Fixed subsample of at most `limit` anchors from `region`, in region order.
pub fn validation_anchors(region: &Region, limit: usize, seed: u64) -> Vec<SampleIndex> {
    if region.len() <= limit {
        return (0..region.len()).map(|k| region.get(k)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VALIDATION_STREAM);
    let mut picks = rand::seq::index::sample(&mut rng, region.len(), limit).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| region.get(k)).collect()
}

/// Trains `decoder` in place. With a validation region the parameters of the
/// epoch with the lowest validation MAE are restored at the end; without one
/// the final parameters are kept.
pub fn train(
    data: &TrainingData,
    decoder: &mut Decoder<f32>,
    cfg: &TrainConfig,
    split: &Split,
) -> Result<TrainOutcome> {
    let horizon = decoder.horizon();
    let region = data.region(&split.train, horizon)?;
    let val_anchors = if split.val.is_empty() {
        Vec::new()
    } else {
        validation_anchors(&data.region(&split.val, horizon)?, cfg.val_samples, cfg.seed)
    };
    let mut trainer = Trainer::new(data, decoder, cfg, region)?;
    let schedule = cfg.schedule();
    let started = Instant::now();
    let budget = cfg.max_seconds.map(Duration::from_secs_f64);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Decoder<f32>)> = None;
    let mut since_best = 0;
    let mut updates = 0u64;
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr_at(epoch);
        let epoch_start = Instant::now();
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for _ in 0..cfg.batches_per_epoch {
            if cfg.max_updates.is_some_and(|m| updates >= m) {
                stop = StopReason::MaxUpdates;
                break;
            }
            if budget.is_some_and(|b| started.elapsed() >= b) {
                stop = StopReason::MaxSeconds;
                break;
            }
            loss_sum += trainer.update(decoder, lr)?;
            batches += 1;
            updates += 1;
        }
        if batches == 0 {
            break;
        }
        let secs = epoch_start.elapsed().as_secs_f64();
        let val_mae = if val_anchors.is_empty() {
            f64::NAN
        } else {
            data.normalized_mae(decoder, &val_anchors)?
        };
        history.push(EpochRecord {
            epoch,
            train_mae: loss_sum / batches as f64,
            val_mae,
            batch_per_sec: batches as f64 / secs.max(f64::MIN_POSITIVE),
        });
        log::debug!("epoch {epoch}: train {:.5} val {val_mae:.5}", loss_sum / batches as f64);

        if !val_anchors.is_empty() {
            if best.as_ref().is_none_or(|(b, _, _)| val_mae < *b) {
                best = Some((val_mae, epoch, decoder.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stop = StopReason::Patience;
                    break 'epochs;
                }
            }
        }
        if stop != StopReason::MaxEpochs {
            break;
        }
    }

    let (best_val_mae, best_epoch) = match best {
        Some((v, e, params)) => {
            *decoder = params;
            (v, Some(e))
        }
        None => (f64::NAN, None),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mae,
        updates,
        stop,
    })
}

/// Scores every anchor of the region, in original units, overall and at the
/// default horizon offsets.
pub fn evaluate(decoder: &Decoder<f32>, data: &TrainingData, range: &Range<usize>) -> Result<MetricReport> {
    data.check_decoder(decoder)?;
    let h = decoder.horizon();
    let region = data.region(range, h)?;
    let anchors: Vec<SampleIndex> = (0..region.len()).map(|k| region.get(k)).collect();
    let parts = anchors
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<MetricAccumulator> {
            let mut buf = Batch::default();
            data.fetch(chunk, h, &mut buf)?;
            let y = decoder.forward(buf.z.view(), &buf.nodes)?;
            let mut acc = MetricAccumulator::new(h);
            for (b, s) in chunk.iter().enumerate() {
                for step in 0..h {
                    for c in 0..data.channels() {
                        let pred = data.stats.denormalize_value(c, y[[b, step, c]] as f64);
                        let t = s.t + 1 + step;
                        acc.add(step, pred, data.values[[t, s.node, c]], data.mask[[t, s.node, c]]);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MetricAccumulator::new(h);
    for p in &parts {
        total.merge(p);
    }
    Ok(total.report(&DEFAULT_HORIZON_OFFSETS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTiming {
    pub median_secs: f64,
    pub batches_per_sec: f64,
    pub measured: usize,
}

/// Times `batches` single updates on a copy of `decoder` and reports the
/// median after dropping the first and last `trim`.
pub fn benchmark_updates(
    data: &TrainingData,
    decoder: &Decoder<f32>,
    cfg: &TrainConfig,
    range: &Range<usize>,
    batches: usize,
    trim: usize,
) -> Result<UpdateTiming> {
    if batches <= 2 * trim {
        return Err(SgpError::Config(format!("{batches} batches leave nothing after trimming {trim} per side")));
    }
    let mut dec = decoder.clone();
    let region = data.region(range, dec.horizon())?;
    let mut trainer = Trainer::new(data, &dec, cfg, region)?;
    let mut times = Vec::with_capacity(batches);
    for _ in 0..batches {
        let t0 = Instant::now();
        trainer.update(&mut dec, cfg.lr)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let mut kept = times[trim..batches - trim].to_vec();
    kept.sort_by(f64::total_cmp);
    let mid = kept.len() / 2;
    let median = if kept.len() % 2 == 0 {
        0.5 * (kept[mid - 1] + kept[mid])
    } else {
        kept[mid]
    };
    Ok(UpdateTiming {
        median_secs: median,
        batches_per_sec: 1.0 / median,
        measured: kept.len(),
    })
}

#[cfg(test)]
mod tests;
