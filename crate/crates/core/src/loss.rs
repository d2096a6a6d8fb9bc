//! Supervised L1 term and the combined training objective.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::encoder::{info_nce, IlluminationFeature, NegativeQueue};
use crate::error::{Error, Result};
use crate::spectral::{focal_frequency_loss, FrequencyLossConfig};
use crate::tensor::{Image, Tensor};

/// Tolerance between a report's total and its weighted parts.
pub const TOTAL_TOLERANCE: f64 = 1e-9;

/// Mean absolute error and its subgradient (zero at exact ties).
pub fn l1_loss(recon: &Image, target: &Image) -> Result<(f64, Tensor)> {
    recon.check_same_shape(target, "l1_loss")?;
    let n = recon.data().len();
    if n == 0 {
        return Ok((0.0, Tensor::zeros(recon.channels(), recon.height(), recon.width())));
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            sum += d.abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    let grad = Tensor::from_vec(recon.channels(), recon.height(), recon.width(), grad)?;
    Ok((sum * inv, grad))
}

/// Ablation variants of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Variant {
    /// L1 only.
    M0,
    /// L1 + frequency.
    M1,
    /// L1 + InfoNCE.
    M2,
    /// L1 + frequency + InfoNCE.
    #[default]
    M3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::M0, Variant::M1, Variant::M2, Variant::M3];

    pub fn use_info(self) -> bool {
        matches!(self, Variant::M2 | Variant::M3)
    }

    pub fn use_fre(self) -> bool {
        matches!(self, Variant::M1 | Variant::M3)
    }

    /// Whether the encoder starts from contrastive pretraining.
    pub fn pretrained_encoder(self) -> bool {
        self.use_info()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::M0 => "M0",
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M0" => Ok(Variant::M0),
            "M1" => Ok(Variant::M1),
            "M2" => Ok(Variant::M2),
            "M3" => Ok(Variant::M3),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub use_info: bool,
    pub use_fre: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.1,
            use_info: true,
            use_fre: true,
        }
    }
}

impl LossWeights {
    /// Default weights with the flags of `variant`.
    pub fn for_variant(variant: Variant) -> Self {
        Self::default().with_variant(variant)
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        Self {
            use_info: variant.use_info(),
            use_fre: variant.use_fre(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {w}")));
            }
        }
        Ok(())
    }

    fn fre_active(&self) -> bool {
        self.use_fre && self.w2 != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_info: f64,
    pub l1: f64,
    pub l_fre: f64,
    pub total: f64,
}

impl LossReport {
    /// `l_info [use_info] + w1 l1 + w2 l_fre [use_fre]`.
    pub fn weighted_sum(&self, weights: &LossWeights) -> f64 {
        let info = if weights.use_info { self.l_info } else { 0.0 };
        let fre = if weights.use_fre { weights.w2 * self.l_fre } else { 0.0 };
        info + weights.w1 * self.l1 + fre
    }

    pub fn is_consistent(&self, weights: &LossWeights) -> bool {
        (self.total - self.weighted_sum(weights)).abs() <= TOTAL_TOLERANCE
    }

    /// Error naming the first non-finite term.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, v) in [("l_info", self.l_info), ("l1", self.l1), ("l_fre", self.l_fre), ("total", self.total)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Element-wise mean of several reports.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a LossReport>) -> LossReport {
        let mut acc = LossReport::default();
        let mut n = 0usize;
        for r in reports {
            acc.l_info += r.l_info;
            acc.l1 += r.l1;
            acc.l_fre += r.l_fre;
            acc.total += r.total;
            n += 1;
        }
        if n > 0 {
            let s = 1.0 / n as f64;
            acc.l_info *= s;
            acc.l1 *= s;
            acc.l_fre *= s;
            acc.total *= s;
        }
        acc
    }
}

/// Inputs of the contrastive term.
#[derive(Debug, Clone, Copy)]
pub struct InfoTerm<'a> {
    pub q: &'a IlluminationFeature,
    pub k_plus: &'a IlluminationFeature,
    pub queue: &'a NegativeQueue,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub recon: Tensor,
    /// Present only when the contrastive term is enabled.
    pub q: Option<Vec<f64>>,
}

/// Weighted objective and gradients. Disabled terms (flag off or zero weight)
/// are never evaluated: they report 0 and contribute no gradient.
pub fn total_loss(
    recon: &Image,
    target: &Image,
    info: Option<InfoTerm<'_>>,
    weights: &LossWeights,
    freq: &FrequencyLossConfig,
) -> Result<(LossReport, LossGradients)> {
    weights.validate()?;
    let (l1, g1) = l1_loss(recon, target)?;
    if !l1.is_finite() {
        return Err(Error::NonFinite("l1"));
    }
    let mut grad = g1;
    grad.scale(weights.w1);
    let mut report = LossReport {
        l1,
        ..LossReport::default()
    };

    if weights.fre_active() {
        let fl = focal_frequency_loss(recon, target, freq)?;
        if !fl.value.is_finite() {
            return Err(Error::NonFinite("l_fre"));
        }
        let mut g = fl.grad;
        g.scale(weights.w2);
        grad.add_assign(&g);
        report.l_fre = fl.value;
    }

    let mut grad_q = None;
    if weights.use_info {
        let term = info.ok_or_else(|| Error::InvalidConfig(String::from("contrastive term enabled without inputs")))?;
        let nce = info_nce(term.q, term.k_plus, term.queue, term.tau)?;
        if !nce.loss.is_finite() {
            return Err(Error::NonFinite("l_info"));
        }
        report.l_info = nce.loss;
        grad_q = Some(nce.grad_q);
    }

    report.total = report.weighted_sum(weights);
    Ok((report, LossGradients { recon: grad, q: grad_q }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn l1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 5, 7);
        let (v, g) = l1_loss(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        let b = Image::filled(3, 4, 4, 0.25);
        let c = Image::filled(3, 4, 4, 0.75);
        assert_eq!(l1_loss(&c, &b).unwrap().0, 0.5);

        let d = random_image(&mut rng, 6, 3);
        let oracle: f64 = a.window(0, 0, 5, 3).data().iter().zip(d.window(0, 0, 5, 3).data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 45.0;
        let (v, _) = l1_loss(&a.window(0, 0, 5, 3), &d.window(0, 0, 5, 3)).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        assert!(l1_loss(&a, &d).is_err());
    }

    #[test]
    fn variant_parsing_and_flags() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(" m2 ".parse::<Variant>().unwrap(), Variant::M2);
        assert!("M4".parse::<Variant>().is_err());
        let w = LossWeights::for_variant(Variant::M1);
        assert!(w.use_fre && !w.use_info);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            w1: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn m0_total_is_weighted_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let w = LossWeights {
            w1: 0.7,
            ..LossWeights::for_variant(Variant::M0)
        };
        let (r, g) = total_loss(&a, &b, None, &w, &FrequencyLossConfig::default()).unwrap();
        assert_eq!(r.total, 0.7 * r.l1);
        assert_eq!((r.l_info, r.l_fre), (0.0, 0.0));
        assert!(g.q.is_none());
    }

    #[test]
    fn zero_weights_without_info_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let w = LossWeights {
            w1: 0.0,
            w2: 0.0,
            use_info: false,
            use_fre: true,
        };
        let (r, g) = total_loss(&a, &b, None, &w, &FrequencyLossConfig::default()).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(g.recon.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perfect_reconstruction_leaves_only_info() {
        let dim = 4;
        let mut queue = NegativeQueue::empty(2, dim);
        queue.push(&[[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]).unwrap();
        let q = IlluminationFeature::unit(alloc::vec![1.0, 0.0, 0.0, 0.0]);
        let a = Image::filled(3, 8, 8, 0.3);
        let info = InfoTerm {
            q: &q,
            k_plus: &q,
            queue: &queue,
            tau: 0.5,
        };
        let (r, _) = total_loss(&a, &a, Some(info), &LossWeights::default(), &FrequencyLossConfig::default()).unwrap();
        assert_eq!(r.l1, 0.0);
        assert_eq!(r.l_fre, 0.0);
        assert_eq!(r.total, r.l_info);
        let expected = -crate::math::ln(crate::math::exp(2.0) / (crate::math::exp(2.0) + 2.0));
        assert!((r.l_info - expected).abs() < 1e-12);
        assert!(r.is_consistent(&LossWeights::default()));
    }

    #[test]
    fn info_enabled_without_inputs_is_an_error() {
        let a = Image::filled(3, 4, 4, 0.3);
        assert!(total_loss(&a, &a, None, &LossWeights::default(), &FrequencyLossConfig::default()).is_err());
    }

    #[test]
    fn disabled_terms_leave_gradient_bitwise_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let fc = FrequencyLossConfig::default();
        let (_, plain) = l1_loss(&a, &b).unwrap();
        let off = LossWeights {
            use_fre: false,
            use_info: false,
            ..LossWeights::default()
        };
        let zero = LossWeights {
            w2: 0.0,
            use_info: false,
            ..LossWeights::default()
        };
        let (_, g_off) = total_loss(&a, &b, None, &off, &fc).unwrap();
        let (_, g_zero) = total_loss(&a, &b, None, &zero, &fc).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g_off.recon), bits(&plain));
        assert_eq!(bits(&g_zero.recon), bits(&plain));
    }

    #[test]
    fn report_mean_and_finiteness() {
        let a = LossReport {
            l_info: 1.0,
            l1: 2.0,
            l_fre: 3.0,
            total: 4.0,
        };
        let b = LossReport {
            l_info: 3.0,
            l1: 0.0,
            l_fre: 1.0,
            total: 2.0,
        };
        let m = LossReport::mean([&a, &b]);
        assert_eq!(m, LossReport { l_info: 2.0, l1: 1.0, l_fre: 2.0, total: 3.0 });
        let bad = LossReport { l_fre: f64::NAN, ..a };
        assert_eq!(bad.ensure_finite(), Err(Error::NonFinite("l_fre")));
    }
}
