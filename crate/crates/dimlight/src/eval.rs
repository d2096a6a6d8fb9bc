//! Batch enhancement and paired-directory evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dimlight_core::metrics::{mean_metrics, MetricRecord};
use dimlight_core::model::Enhancer;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::io::{image_id, list_images, load_image, save_png};
use crate::pipeline::format_metric;

/// Enhance every image in `input_dir` into `output_dir` as `<stem>.png`.
/// Unreadable images are skipped with a warning.
pub fn enhance_dir(model: &Enhancer, input_dir: &Path, output_dir: &Path) -> Result<usize> {
    let inputs = list_images(input_dir)?;
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let written: Vec<Result<bool>> = inputs
        .par_iter()
        .map(|path| {
            let low = match load_image(path) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    return Ok(false);
                }
            };
            let out = model.forward(&low)?;
            save_png(&out, &output_dir.join(format!("{}.png", image_id(path))))?;
            Ok(true)
        })
        .collect();
    let mut count = 0;
    for r in written {
        count += usize::from(r?);
    }
    Ok(count)
}

/// Load the checkpoint (fatal when corrupt) and run [`enhance_dir`].
pub fn enhance_batch(input_dir: &Path, checkpoint: &Path, output_dir: &Path) -> Result<usize> {
    let model = Checkpoint::load_enhancer(checkpoint)?;
    enhance_dir(&model, input_dir, output_dir)
}

/// External per-pair scorer (for example a perceptual metric) merged into
/// evaluation records under its name.
pub trait PairScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, pred: &Path, reference: &Path) -> Result<f64>;
}

/// Runs `program args... <pred> <ref>` and parses a number from the last
/// line of its standard output.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl PairScorer for CommandScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, pred: &Path, reference: &Path) -> Result<f64> {
        let fail = |reason: String| Error::Scorer {
            name: self.name.clone(),
            reason,
        };
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(pred)
            .arg(reference)
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        last.trim().parse::<f64>().map_err(|_| fail(format!("unparsable output {last:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub record: MetricRecord,
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Sorted by image id.
    pub records: Vec<ScoredRecord>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_extra: BTreeMap<String, f64>,
}

fn index_by_id(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_images(dir)?.into_iter().map(|p| (image_id(&p), p)).collect())
}

pub fn evaluate(pred_dir: &Path, ref_dir: &Path) -> Result<Evaluation> {
    evaluate_with(pred_dir, ref_dir, &[])
}

/// PSNR/SSIM (plus any scorer) for every predicted image matched by stem in
/// `ref_dir`. Either side lacking a counterpart is an error.
pub fn evaluate_with(pred_dir: &Path, ref_dir: &Path, scorers: &[&dyn PairScorer]) -> Result<Evaluation> {
    let preds = index_by_id(pred_dir)?;
    let refs = index_by_id(ref_dir)?;
    if let Some(id) = preds.keys().find(|k| !refs.contains_key(*k)) {
        return Err(Error::MissingCounterpart {
            name: id.clone(),
            dir: ref_dir.to_path_buf(),
        });
    }
    if let Some(id) = refs.keys().find(|k| !preds.contains_key(*k)) {
        return Err(Error::MissingCounterpart {
            name: id.clone(),
            dir: pred_dir.to_path_buf(),
        });
    }
    let records = preds
        .par_iter()
        .map(|(id, pred_path)| {
            let ref_path = &refs[id];
            let pred = load_image(pred_path)?;
            let reference = load_image(ref_path)?;
            let record = MetricRecord::compute(id.clone(), &pred, &reference)?;
            let mut extra = BTreeMap::new();
            for s in scorers {
                extra.insert(s.name().to_string(), s.score(pred_path, ref_path)?);
            }
            Ok(ScoredRecord { record, extra })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(records))
}

/// Sort by id and aggregate; the result does not depend on input order.
pub fn summarize(mut records: Vec<ScoredRecord>) -> Evaluation {
    records.sort_by(|a, b| a.record.image_id.cmp(&b.record.image_id));
    let plain: Vec<MetricRecord> = records.iter().map(|r| r.record.clone()).collect();
    let (mean_psnr, mean_ssim) = mean_metrics(&plain).unwrap_or((f64::NAN, f64::NAN));
    let names: BTreeSet<&String> = records.iter().flat_map(|r| r.extra.keys()).collect();
    let mean_extra = names
        .into_iter()
        .map(|n| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.extra.get(n).copied()).collect();
            (n.clone(), vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Evaluation {
        records,
        mean_psnr,
        mean_ssim,
        mean_extra,
    }
}

impl Evaluation {
    /// `image_id,psnr,ssim[,extra...]` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let extras: Vec<&String> = self.mean_extra.keys().collect();
        let mut s = String::from("image_id,psnr,ssim");
        for e in &extras {
            s.push(',');
            s.push_str(e);
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{}",
                r.record.image_id,
                format_metric(r.record.psnr),
                format_metric(r.record.ssim)
            ));
            for e in &extras {
                s.push(',');
                if let Some(v) = r.extra.get(*e) {
                    s.push_str(&format_metric(*v));
                }
            }
            s.push('\n');
        }
        s.push_str(&format!("mean,{},{}", format_metric(self.mean_psnr), format_metric(self.mean_ssim)));
        for e in &extras {
            s.push(',');
            s.push_str(&format_metric(self.mean_extra[*e]));
        }
        s.push('\n');
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, psnr: f64, ssim: f64) -> ScoredRecord {
        ScoredRecord {
            record: MetricRecord {
                image_id: id.into(),
                psnr,
                ssim,
            },
            extra: BTreeMap::new(),
        }
    }

    #[test]
    fn summary_is_order_independent() {
        let a = vec![rec("a", 20.0, 0.5), rec("b", 30.0, 0.7), rec("c", 25.0, 0.9)];
        let mut b = a.clone();
        b.reverse();
        b.swap(0, 1);
        let (x, y) = (summarize(a), summarize(b));
        assert_eq!(x, y);
        assert_eq!(x.mean_psnr, 25.0);
    }

    #[test]
    fn csv_writes_inf() {
        let e = summarize(vec![rec("a", f64::INFINITY, 1.0)]);
        assert_eq!(e.to_csv(), "image_id,psnr,ssim\na,inf,1.0000\nmean,inf,1.0000\n");
    }
}
