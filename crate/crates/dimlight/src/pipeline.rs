//! Pretraining, training and ablation loops with their logs and checkpoints.
//!
//! Every run derives independent ChaCha8 streams from one seed: encoder
//! initialization, reconstruction-network initialization, supervised batches,
//! contrastive crops during training, queue initialization and pretraining
//! batches. Variants sharing a seed therefore consume identical batches.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dimlight_core::data::{augment, crop_patch, AugmentConfig, ImagePair, TrainBatch};
use dimlight_core::encoder::{positive_ranks_first, EncoderParams, NegativeQueue};
use dimlight_core::irn::IrnParams;
use dimlight_core::loss::{LossReport, Variant};
use dimlight_core::metrics::{mean_metrics, MetricRecord};
use dimlight_core::model::Enhancer;
use dimlight_core::training::{fit_spectrum_stats, PretrainRecord, Pretrainer, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Manifest, NS_IRN, NS_KEY, NS_QUERY};
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const STREAM_ENCODER_INIT: u64 = 0;
pub const STREAM_IRN_INIT: u64 = 1;
pub const STREAM_BATCHES: u64 = 2;
pub const STREAM_CONTRASTIVE: u64 = 3;
pub const STREAM_QUEUE_INIT: u64 = 4;
pub const STREAM_PRETRAIN: u64 = 5;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn diverged(e: dimlight_core::Error, step: usize) -> Error {
    match e {
        dimlight_core::Error::NonFinite(term) => Error::Diverged { term, step },
        other => other.into(),
    }
}

/// CRC-32 of a batch's indices, crop origins and pixel bits.
pub fn batch_checksum(batch: &TrainBatch) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for &i in &batch.indices {
        h.update(&(i as u64).to_le_bytes());
    }
    for (l, n) in batch.low.iter().zip(&batch.normal) {
        h.update(&(l.origin.0 as u64).to_le_bytes());
        h.update(&(l.origin.1 as u64).to_le_bytes());
        for v in l.pixels.data().iter().chain(n.pixels.data()) {
            h.update(&v.to_bits().to_le_bytes());
        }
    }
    h.finalize()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub positive_prob: f64,
}

pub struct PretrainOutcome {
    pub pretrainer: Pretrainer,
    pub curve: Vec<CurvePoint>,
}

/// Contrastive pretraining of a freshly initialized encoder.
pub fn pretrain(pairs: &[ImagePair], cfg: &RunConfig) -> Result<PretrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Dataset("pretraining needs at least one image".into()));
    }
    let c = cfg.contrastive_config();
    let seed = cfg.train.seed;
    let mut encoder = EncoderParams::init(cfg.encoder_topology(), &mut rng(seed, STREAM_ENCODER_INIT));
    encoder.stats = fit_spectrum_stats(pairs, c.patch_size)?;
    let mut pre = Pretrainer::new(encoder, c, cfg.augment_config()?, &mut rng(seed, STREAM_QUEUE_INIT))?;
    let per_epoch = pre.steps_per_epoch(pairs.len());
    let total = cfg.contrastive.max_steps.unwrap_or(c.pretrain_epochs * per_epoch);
    let mut data = rng(seed, STREAM_PRETRAIN);
    let mut curve = Vec::with_capacity(total);
    for step in 0..total {
        let PretrainRecord {
            loss, positive_prob, ..
        } = pre.step(pairs, &mut data).map_err(|e| diverged(e, step))?;
        let epoch = step / per_epoch;
        if step % per_epoch == per_epoch - 1 {
            log::info!("pretrain epoch {} step {step} loss {loss:.4} p+ {positive_prob:.3}", epoch + 1);
        }
        curve.push(CurvePoint {
            step,
            epoch,
            loss,
            positive_prob,
        });
    }
    Ok(PretrainOutcome { pretrainer: pre, curve })
}

/// Top-1 retrieval rate: for each image, whether the key of a second view
/// outranks `distractors` keys drawn from a pool of `views_per_image`
/// augmented views of every other image. Queries use `query`, keys `key`.
#[allow(clippy::too_many_arguments)]
pub fn retrieval_accuracy<R: Rng + ?Sized>(
    query: &EncoderParams,
    key: &EncoderParams,
    pairs: &[ImagePair],
    patch_size: usize,
    aug: &AugmentConfig,
    views_per_image: usize,
    distractors: usize,
    rng: &mut R,
) -> Result<f64> {
    let available = pairs.len().saturating_sub(1) * views_per_image;
    if available < distractors || distractors == 0 {
        return Err(Error::Dataset(format!(
            "retrieval needs {distractors} distractors but only {available} foreign views exist"
        )));
    }
    let view = |i: usize, rng: &mut R| -> Result<_> {
        let p = &pairs[i];
        Ok(augment(&crop_patch(p.low(), p.id(), patch_size, rng)?, aug, rng).pixels)
    };
    let mut pool: Vec<(usize, Vec<f64>)> = Vec::with_capacity(pairs.len() * views_per_image);
    for i in 0..pairs.len() {
        for _ in 0..views_per_image {
            pool.push((i, key.encode(&view(i, rng)?)?.vector));
        }
    }
    let mut hits = 0;
    for i in 0..pairs.len() {
        let q = query.encode(&view(i, rng)?)?;
        let k = key.encode(&view(i, rng)?)?;
        let foreign: Vec<&Vec<f64>> = pool.iter().filter(|(j, _)| *j != i).map(|(_, v)| v).collect();
        let chosen = rand::seq::index::sample(rng, foreign.len(), distractors);
        let others: Vec<&[f64]> = chosen.iter().map(|c| foreign[c].as_slice()).collect();
        if positive_ranks_first(&q, &k, &others) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Query and momentum encoders, queue and statistics of a pretraining run.
pub fn pretrained_checkpoint(pre: &Pretrainer, cfg: &RunConfig, epoch: usize) -> Checkpoint {
    let mut m = Manifest::new(*pre.encoder.topology(), pre.config.patch_size, cfg.train.seed);
    m.epoch = epoch;
    m.step = pre.step;
    let mut ck = Checkpoint::new(m);
    ck.add_params(NS_QUERY, &pre.encoder);
    ck.add_params(NS_KEY, &pre.key_encoder);
    ck.add_queue(&pre.queue);
    ck.add_stats(&pre.encoder.stats);
    ck
}

/// Run [`pretrain`] and write `pretrained.ckpt` and `pretrain_curve.jsonl` into `out_dir`.
pub fn pretrain_to_dir(pairs: &[ImagePair], cfg: &RunConfig, out_dir: &Path) -> Result<(PretrainOutcome, PathBuf)> {
    let outcome = pretrain(pairs, cfg)?;
    create_dir(out_dir)?;
    let epochs = outcome.curve.last().map_or(0, |p| p.epoch + 1);
    let path = out_dir.join("pretrained.ckpt");
    pretrained_checkpoint(&outcome.pretrainer, cfg, epochs).save(&path)?;
    write_jsonl(&out_dir.join("pretrain_curve.jsonl"), &outcome.curve)?;
    Ok((outcome, path))
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub l_info: f64,
    pub l1: f64,
    pub l_fre: f64,
    pub total: f64,
    pub lr: f64,
    pub batch_checksum: u32,
}

impl StepLog {
    pub fn report(&self) -> LossReport {
        LossReport {
            l_info: self.l_info,
            l1: self.l1,
            l_fre: self.l_fre,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationLog {
    pub step: usize,
    pub epoch: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub struct TrainRun {
    pub trainer: Trainer,
    pub log: Vec<StepLog>,
    pub validations: Vec<ValidationLog>,
    pub best_psnr: Option<f64>,
}

/// Model, momentum encoder and queue at step 0 for `variant`. Variants with
/// the contrastive term continue from `pretrained`; the others start from a
/// random encoder.
pub fn build_trainer(pairs: &[ImagePair], cfg: &RunConfig, variant: Variant, pretrained: Option<&Checkpoint>) -> Result<Trainer> {
    if pairs.is_empty() {
        return Err(Error::Dataset("training needs at least one pair".into()));
    }
    let seed = cfg.train.seed;
    let (encoder, key_encoder, queue) = if variant.pretrained_encoder() {
        let ck = pretrained.ok_or_else(|| {
            Error::Config(format!("variant {variant} needs a pretrained encoder (train.pretrained)"))
        })?;
        (ck.encoder(NS_QUERY)?, ck.encoder(NS_KEY)?, ck.queue()?)
    } else {
        let mut enc = EncoderParams::init(cfg.encoder_topology(), &mut rng(seed, STREAM_ENCODER_INIT));
        enc.stats = fit_spectrum_stats(pairs, cfg.train.patch_size)?;
        let queue = NegativeQueue::random(cfg.contrastive.queue_size, enc.feature_dim(), &mut rng(seed, STREAM_QUEUE_INIT));
        (enc.clone(), enc, queue)
    };
    let mut irn_topo = cfg.irn_topology();
    irn_topo.feature_dim = encoder.feature_dim();
    let irn = IrnParams::init(irn_topo, &mut rng(seed, STREAM_IRN_INIT));
    let model = Enhancer::new(encoder, irn, cfg.train.patch_size)?;
    let mut train_cfg = cfg.train_config()?;
    train_cfg.ablation_variant = variant;
    let weights = cfg.loss_weights()?.with_variant(variant);
    Ok(Trainer::new(
        model,
        key_encoder,
        queue,
        train_cfg,
        weights,
        cfg.frequency_config(),
        cfg.contrastive_config(),
        cfg.augment_config()?,
        pairs.len(),
    )?)
}

/// Mean PSNR/SSIM of the model's full-image output over `pairs`.
pub fn validate(model: &Enhancer, pairs: &[ImagePair]) -> Result<Option<(f64, f64)>> {
    let records = pairs
        .iter()
        .map(|p| Ok(MetricRecord::compute(p.id(), &model.forward(p.low())?, p.normal())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_metrics(&records))
}

pub fn model_checkpoint(trainer: &Trainer, cfg: &RunConfig, epoch: usize, val_psnr: Option<f64>) -> Checkpoint {
    let enc = &trainer.model.encoder;
    let mut m = Manifest::new(*enc.topology(), trainer.model.patch_size, cfg.train.seed);
    m.irn_channels = Some(trainer.model.irn_topology().channels);
    m.epoch = epoch;
    m.step = trainer.step;
    m.variant = Some(trainer.config.ablation_variant.to_string());
    m.val_psnr = val_psnr.filter(|p| p.is_finite());
    let mut ck = Checkpoint::new(m);
    ck.add_params(NS_QUERY, enc);
    ck.add_params(NS_KEY, &trainer.key_encoder);
    ck.add_params(NS_IRN, &trainer.model.irn);
    ck.add_queue(&trainer.queue);
    ck.add_stats(&enc.stats);
    ck
}

struct Outputs {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        create_dir(dir)?;
        let path = dir.join("metrics.jsonl");
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: BufWriter::new(file),
        })
    }

    fn record(&mut self, line: &StepLog) -> Result<()> {
        let path = self.dir.join("metrics.jsonl");
        serde_json::to_writer(&mut self.metrics, line).map_err(|e| Error::io(&path, e.into()))?;
        self.metrics.write_all(b"\n").map_err(|e| Error::io(&path, e))
    }

    fn flush(&mut self) -> Result<()> {
        let path = self.dir.join("metrics.jsonl");
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Supervised training. With `out_dir`, appends `metrics.jsonl`, writes
/// `validation.jsonl`, `latest.ckpt` and (given validation pairs) `best.ckpt`.
pub fn train(
    pairs: &[ImagePair],
    val: &[ImagePair],
    cfg: &RunConfig,
    variant: Variant,
    pretrained: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    let mut trainer = build_trainer(pairs, cfg, variant, pretrained)?;
    let seed = cfg.train.seed;
    let mut data = rng(seed, STREAM_BATCHES);
    let mut aug = rng(seed, STREAM_CONTRASTIVE);
    let per_epoch = trainer.config.steps_per_epoch(pairs.len());
    let mut outputs = out_dir.map(Outputs::open).transpose()?;
    let mut log = Vec::with_capacity(trainer.total_steps);
    let mut validations = Vec::new();
    let mut best: Option<f64> = None;

    while !trainer.is_finished() {
        let step = trainer.step;
        let rec = trainer.step(pairs, &mut data, &mut aug).map_err(|e| diverged(e, step))?;
        let line = StepLog {
            step: rec.step,
            l_info: rec.report.l_info,
            l1: rec.report.l1,
            l_fre: rec.report.l_fre,
            total: rec.report.total,
            lr: rec.lr,
            batch_checksum: batch_checksum(&rec.batch),
        };
        if let Some(o) = outputs.as_mut() {
            o.record(&line)?;
        }
        log.push(line);

        let epoch_done = (step + 1) % per_epoch == 0 || trainer.is_finished();
        let epoch = step / per_epoch + 1;
        if !epoch_done || (epoch % cfg.train.validate_every != 0 && !trainer.is_finished()) {
            continue;
        }
        let scores = validate(&trainer.model, val)?;
        if let Some((psnr, ssim)) = scores {
            log::info!("epoch {epoch} step {step} val psnr {psnr:.3} ssim {ssim:.4} loss {:.5}", line.total);
            validations.push(ValidationLog {
                step,
                epoch,
                psnr,
                ssim,
            });
        } else {
            log::info!("epoch {epoch} step {step} loss {:.5}", line.total);
        }
        if let Some(o) = outputs.as_mut() {
            o.flush()?;
            let psnr = scores.map(|s| s.0);
            model_checkpoint(&trainer, cfg, epoch, psnr).save(&o.dir.join("latest.ckpt"))?;
            if let Some(p) = psnr {
                if best.is_none_or(|b| p > b) {
                    model_checkpoint(&trainer, cfg, epoch, psnr).save(&o.dir.join("best.ckpt"))?;
                }
            }
            write_jsonl(&o.dir.join("validation.jsonl"), &validations)?;
        }
        if let Some((p, _)) = scores {
            if best.is_none_or(|b| p > b) {
                best = Some(p);
            }
        }
    }
    if let Some(o) = outputs.as_mut() {
        o.flush()?;
    }
    Ok(TrainRun {
        trainer,
        log,
        validations,
        best_psnr: best,
    })
}

/// Full-scale published result for the complete objective, kept alongside
/// ablation tables for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferencePoint {
    pub variant: &'static str,
    pub psnr: f64,
    pub ssim: f64,
    pub note: &'static str,
}

pub const FULL_SCALE_REFERENCE: ReferencePoint = ReferencePoint {
    variant: "M3",
    psnr: 24.25,
    ssim: 0.84,
    note: "full-scale LOL result; not expected at probe scale",
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
    pub step0: LossReportRecord,
    pub batch_checksums: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReportRecord {
    pub l_info: f64,
    pub l1: f64,
    pub l_fre: f64,
    pub total: f64,
}

impl From<LossReport> for LossReportRecord {
    fn from(r: LossReport) -> Self {
        Self {
            l_info: r.l_info,
            l1: r.l1,
            l_fre: r.l_fre,
            total: r.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub reference: ReferencePoint,
}

/// Format a PSNR value, writing `inf` for identical images.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,psnr,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.variant, format_metric(r.psnr), format_metric(r.ssim)));
        }
        s
    }

    /// `ablation.csv` plus `ablation.json` with step-0 losses, batch
    /// checksums and the reference point.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        create_dir(out_dir)?;
        let csv = out_dir.join("ablation.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = out_dir.join("ablation.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::io(&json, e.into()))?;
        fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }
}

/// Train each variant with the same seed and schedule and score it on `test`.
/// Pretraining runs once, on `train`, when a variant needs it and no
/// checkpoint is supplied.
pub fn run_ablation(
    train_pairs: &[ImagePair],
    test_pairs: &[ImagePair],
    cfg: &RunConfig,
    variants: &[Variant],
    pretrained: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    if test_pairs.is_empty() {
        return Err(Error::Dataset("ablation needs a non-empty test split".into()));
    }
    let owned;
    let pretrained = match pretrained {
        Some(ck) => Some(ck),
        None if variants.iter().any(|v| v.pretrained_encoder()) => {
            let outcome = pretrain(train_pairs, cfg)?;
            let epochs = outcome.curve.last().map_or(0, |p| p.epoch + 1);
            owned = pretrained_checkpoint(&outcome.pretrainer, cfg, epochs);
            Some(&owned)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let dir = out_dir.map(|d| d.join(v.name()));
        let run = train(train_pairs, &[], cfg, v, pretrained, dir.as_deref())?;
        let (psnr, ssim) = validate(&run.trainer.model, test_pairs)?.expect("non-empty test split");
        log::info!("ablation {v}: psnr {psnr:.3} ssim {ssim:.4}");
        rows.push(AblationRow {
            variant: v.to_string(),
            psnr,
            ssim,
            step0: run.log.first().map(|l| l.report().into()).expect("at least one step"),
            batch_checksums: run.log.iter().map(|l| l.batch_checksum).collect(),
        });
    }
    let report = AblationReport {
        rows,
        reference: FULL_SCALE_REFERENCE,
    };
    if let Some(d) = out_dir {
        report.write(d)?;
    }
    Ok(report)
}
