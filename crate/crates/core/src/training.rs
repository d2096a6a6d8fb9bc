//! Schedules and single optimization steps for contrastive pretraining and
//! supervised training. Loops, logging and checkpoints live in the `dimlight`
//! crate; everything here is deterministic given the supplied generators.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{augment, crop_patch, make_contrastive_batch, make_train_batch, AugmentConfig, ImagePair, TrainBatch};
use crate::encoder::{info_nce, ContrastiveConfig, EncoderParams, NegativeQueue, SpectrumStats};
use crate::error::{Error, Result};
use crate::loss::{LossReport, LossWeights, Variant};
use crate::math;
use crate::model::{encoder_crop, ContrastiveInputs, Enhancer};
use crate::optim::{Adam, AdamConfig};
use crate::params::{momentum_update, Parameters};
use crate::spectral::FrequencyLossConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Side of the aligned training crops.
    pub patch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub ablation_variant: Variant,
    /// Step budget replacing `epochs` when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            patch_size: 192,
            base_lr: 1e-3,
            warmup_steps: 500,
            seed: 0,
            ablation_variant: Variant::M3,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "epochs, batch_size and patch_size must be positive, got {}, {}, {}",
                self.epochs, self.batch_size, self.patch_size
            )));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::InvalidConfig(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Batches per epoch over `dataset_len` pairs (at least one).
    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        (dataset_len / self.batch_size.max(1)).max(1)
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.max_steps.unwrap_or(self.epochs * self.steps_per_epoch(dataset_len))
    }
}

/// Linear warm-up from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// reaching `base_lr / 100` at step `total_steps - 1`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig, total_steps: usize) -> f64 {
    let base = cfg.base_lr;
    let floor = base / 100.0;
    let warm = cfg.warmup_steps;
    if step < warm {
        return base * step as f64 / warm as f64;
    }
    let last = total_steps.saturating_sub(1);
    if last <= warm {
        return base;
    }
    let t = ((step - warm) as f64 / (last - warm) as f64).min(1.0);
    floor + (base - floor) * 0.5 * (1.0 + math::cos(core::f64::consts::PI * t))
}

/// Spectrum statistics over centre crops of every low-light image.
pub fn fit_spectrum_stats(pairs: &[ImagePair], patch_size: usize) -> Result<SpectrumStats> {
    let crops = pairs
        .iter()
        .map(|p| encoder_crop(p.low(), patch_size))
        .collect::<Result<Vec<_>>>()?;
    SpectrumStats::fit(crops.iter())
}

/// Outcome of one contrastive pretraining step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub step: usize,
    pub loss: f64,
    pub positive_prob: f64,
}

/// Query encoder, momentum encoder, queue and optimizer of the pretraining stage.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub encoder: EncoderParams,
    pub key_encoder: EncoderParams,
    pub queue: NegativeQueue,
    pub optimizer: Adam,
    pub config: ContrastiveConfig,
    pub augment: AugmentConfig,
    pub step: usize,
}

impl Pretrainer {
    /// The momentum encoder starts as a copy; the queue holds random unit keys.
    pub fn new<R: Rng + ?Sized>(encoder: EncoderParams, config: ContrastiveConfig, augment: AugmentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let queue = NegativeQueue::random(config.queue_size, encoder.feature_dim(), rng);
        Ok(Self {
            key_encoder: encoder.clone(),
            optimizer: Adam::new(&encoder, AdamConfig::default()),
            encoder,
            queue,
            config,
            augment,
            step: 0,
        })
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        (dataset_len / self.config.batch_size.max(1)).max(1)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, pairs: &[ImagePair], rng: &mut R) -> Result<PretrainRecord> {
        let cfg = self.config;
        let batch = make_contrastive_batch(pairs, cfg.batch_size, cfg.patch_size, &self.augment, rng)?;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.encoder.zeros_like();
        let mut keys = Vec::with_capacity(batch.len());
        let (mut loss, mut prob) = (0.0, 0.0);
        for (q_patch, k_patch) in batch.queries.iter().zip(&batch.positives) {
            let (q, cache) = self.encoder.encode_cached(&q_patch.pixels)?;
            let k = self.key_encoder.encode(&k_patch.pixels)?;
            let nce = info_nce(&q, &k, &self.queue, cfg.tau)?;
            if !nce.loss.is_finite() {
                return Err(Error::NonFinite("l_info"));
            }
            loss += nce.loss * scale;
            prob += nce.positive_prob * scale;
            let g: Vec<f64> = nce.grad_q.iter().map(|v| v * scale).collect();
            self.encoder.backward(&cache, &g, &mut grad);
            keys.push(k.vector);
        }
        self.optimizer.step(&mut self.encoder, &grad, cfg.lr)?;
        momentum_update(&mut self.key_encoder, &self.encoder, cfg.momentum)?;
        self.queue.push(&keys)?;
        let record = PretrainRecord {
            step: self.step,
            loss,
            positive_prob: prob,
        };
        self.step += 1;
        Ok(record)
    }
}

/// Outcome of one supervised step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
    pub batch: TrainBatch,
}

/// All mutable state of supervised training.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Enhancer,
    pub key_encoder: EncoderParams,
    pub queue: NegativeQueue,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub weights: LossWeights,
    pub freq: FrequencyLossConfig,
    pub contrastive: ContrastiveConfig,
    pub augment: AugmentConfig,
    pub step: usize,
    pub total_steps: usize,
}

impl Trainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Enhancer,
        key_encoder: EncoderParams,
        queue: NegativeQueue,
        config: TrainConfig,
        weights: LossWeights,
        freq: FrequencyLossConfig,
        contrastive: ContrastiveConfig,
        augment: AugmentConfig,
        dataset_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        freq.validate()?;
        contrastive.validate()?;
        key_encoder.check_compatible(&model.encoder)?;
        if weights.use_info && config.batch_size > queue.capacity() {
            return Err(Error::QueueOverflow {
                capacity: queue.capacity(),
                batch: config.batch_size,
            });
        }
        Ok(Self {
            optimizer: Adam::new(&model, AdamConfig::default()),
            model,
            key_encoder,
            queue,
            config,
            weights,
            freq,
            contrastive,
            augment,
            step: 0,
            total_steps: config.total_steps(dataset_len),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps
    }

    /// Draw a batch from `data_rng`, contrastive crops from `aug_rng`, and
    /// apply one optimizer step.
    pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        pairs: &[ImagePair],
        data_rng: &mut R1,
        aug_rng: &mut R2,
    ) -> Result<StepRecord> {
        let cfg = self.config;
        let batch = make_train_batch(pairs, cfg.batch_size, cfg.patch_size, data_rng)?;
        let scale = 1.0 / batch.low.len() as f64;
        let mut grad = self.model.zeros_like();
        let mut reports = Vec::with_capacity(batch.low.len());
        let mut keys = Vec::new();
        for (i, (low, normal)) in batch.low.iter().zip(&batch.normal).enumerate() {
            let contrastive = if self.weights.use_info {
                let pair = &pairs[batch.indices[i]];
                let size = cfg.patch_size;
                let q = crop_patch(pair.low(), pair.id(), size, aug_rng)?;
                let k = crop_patch(pair.low(), pair.id(), size, aug_rng)?;
                let q = augment(&q, &self.augment, aug_rng);
                let k = augment(&k, &self.augment, aug_rng);
                let k_plus = self.key_encoder.encode(&k.pixels)?;
                Some((q.pixels, k_plus))
            } else {
                None
            };
            let inputs = contrastive.as_ref().map(|(q, k)| ContrastiveInputs {
                query: q,
                k_plus: k,
                queue: &self.queue,
                tau: self.contrastive.tau,
            });
            let report = self.model.accumulate_gradients(
                &low.pixels,
                &normal.pixels,
                inputs,
                &self.weights,
                &self.freq,
                scale,
                &mut grad,
            )?;
            report.ensure_finite()?;
            reports.push(report);
            if let Some((_, k)) = contrastive {
                keys.push(k.vector);
            }
        }
        let report = LossReport::mean(&reports);
        report.ensure_finite()?;
        assert!(
            report.is_consistent(&self.weights),
            "loss total {} disagrees with its weighted parts {}",
            report.total,
            report.weighted_sum(&self.weights)
        );
        let lr = lr_schedule(self.step, &cfg, self.total_steps);
        self.optimizer.step(&mut self.model, &grad, lr)?;
        if self.weights.use_info {
            momentum_update(&mut self.key_encoder, &self.model.encoder, self.contrastive.momentum)?;
            self.queue.push(&keys)?;
        }
        let record = StepRecord {
            step: self.step,
            lr,
            report,
            batch,
        };
        self.step += 1;
        Ok(record)
    }
}
