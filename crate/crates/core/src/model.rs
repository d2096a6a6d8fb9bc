//! Full enhancement pipeline: encoder on a centre crop, then reconstruction.

use alloc::vec::Vec;

use crate::encoder::{EncoderParams, IlluminationFeature};
use crate::error::{shape_err, Error, Result};
use crate::irn::{IrnParams, IrnTopology};
use crate::loss::{total_loss, InfoTerm, LossReport, LossWeights};
use crate::params::{join, ParamMut, ParamRef, Parameters};
use crate::spectral::FrequencyLossConfig;
use crate::tensor::Image;

/// Square centre crop of side `patch_size` consumed by the encoder.
pub fn encoder_crop(low: &Image, patch_size: usize) -> Result<Image> {
    let (h, w) = (low.height(), low.width());
    if h < patch_size || w < patch_size {
        return Err(Error::PatchTooLarge {
            size: patch_size,
            height: h,
            width: w,
        });
    }
    if h == patch_size && w == patch_size {
        return Ok(low.clone());
    }
    Ok(low.center_window(patch_size, patch_size))
}

/// `reconstruct(low, encode(crop(low)))`.
pub fn forward(low: &Image, encoder: &EncoderParams, irn: &IrnParams, patch_size: usize) -> Result<Image> {
    let feat = encoder.encode(&encoder_crop(low, patch_size)?)?;
    irn.reconstruct(low, &feat)
}

/// Trainable encoder and reconstruction network.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhancer {
    pub encoder: EncoderParams,
    pub irn: IrnParams,
    pub patch_size: usize,
}

impl Enhancer {
    pub fn new(encoder: EncoderParams, irn: IrnParams, patch_size: usize) -> Result<Self> {
        if encoder.feature_dim() != irn.topology().feature_dim {
            return Err(shape_err("enhancer feature width", encoder.feature_dim(), irn.topology().feature_dim));
        }
        if patch_size < encoder.topology().min_side() {
            return Err(Error::PatchTooLarge {
                size: encoder.topology().min_side(),
                height: patch_size,
                width: patch_size,
            });
        }
        Ok(Self {
            encoder,
            irn,
            patch_size,
        })
    }

    pub fn irn_topology(&self) -> IrnTopology {
        *self.irn.topology()
    }

    pub fn illumination(&self, low: &Image) -> Result<IlluminationFeature> {
        self.encoder.encode(&encoder_crop(low, self.patch_size)?)
    }

    pub fn forward(&self, low: &Image) -> Result<Image> {
        forward(low, &self.encoder, &self.irn, self.patch_size)
    }

    /// Objective for one supervised pair, accumulating `scale` times its
    /// parameter gradient into `grad`. `query` and `info` are consulted only
    /// when the contrastive term is enabled; the query patch is encoded by
    /// this model's encoder.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_gradients(
        &self,
        low: &Image,
        target: &Image,
        contrastive: Option<ContrastiveInputs<'_>>,
        weights: &LossWeights,
        freq: &FrequencyLossConfig,
        scale: f64,
        grad: &mut Enhancer,
    ) -> Result<LossReport> {
        let crop = encoder_crop(low, self.patch_size)?;
        let (feat, enc_cache) = self.encoder.encode_cached(&crop)?;
        let (recon, irn_cache) = self.irn.reconstruct_cached(low, &feat)?;

        let query = match (weights.use_info, contrastive) {
            (true, Some(c)) => Some((c, self.encoder.encode_cached(c.query)?)),
            _ => None,
        };
        let info = query.as_ref().map(|(c, (q, _))| InfoTerm {
            q,
            k_plus: c.k_plus,
            queue: c.queue,
            tau: c.tau,
        });
        let (report, mut g) = total_loss(&recon, target, info, weights, freq)?;

        g.recon.scale(scale);
        let dfeat = self.irn.backward(&irn_cache, &feat, &g.recon, &mut grad.irn);
        self.encoder.backward(&enc_cache, &dfeat, &mut grad.encoder);
        if let (Some(gq), Some((_, (_, q_cache)))) = (g.q, query.as_ref()) {
            let gq: Vec<f64> = gq.iter().map(|v| v * scale).collect();
            self.encoder.backward(q_cache, &gq, &mut grad.encoder);
        }
        Ok(report)
    }
}

/// Query patch, positive key and negatives for the contrastive term.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveInputs<'a> {
    pub query: &'a Image,
    pub k_plus: &'a IlluminationFeature,
    pub queue: &'a crate::encoder::NegativeQueue,
    pub tau: f64,
}

impl Parameters for Enhancer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.irn.collect(&join(prefix, "irn"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.irn.collect_mut(&join(prefix, "irn"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderTopology;
    use crate::loss::l1_loss;
    use crate::nn::Conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_encoder() -> EncoderTopology {
        EncoderTopology {
            channels: [3, 3, 4, 4, 4, 4],
            strides: [2, 1, 1, 1, 1, 1],
            hidden: 6,
            embed_dim: 3,
        }
    }

    fn tiny_model(rng: &mut ChaCha8Rng) -> Enhancer {
        let enc = EncoderParams::init(tiny_encoder(), rng);
        let topo = IrnTopology {
            channels: 4,
            feature_dim: enc.feature_dim(),
        };
        let mut irn = IrnParams::init(topo, rng);
        irn.tail = Conv2d::init(4, 3, 1, 0.5, rng);
        Enhancer::new(enc, irn, 16).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(3, h, w, |_, _, _| rng.random_range(0.1..0.9))
    }

    #[test]
    fn forward_is_deterministic_and_crop_is_identity_at_patch_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = tiny_model(&mut rng);
        let x = random_image(&mut rng, 16, 16);
        assert_eq!(encoder_crop(&x, 16).unwrap(), x);
        let a = model.forward(&x).unwrap();
        assert_eq!(model.forward(&x).unwrap(), a);
        let feat = model.encoder.encode(&x).unwrap();
        assert_eq!(model.irn.reconstruct(&x, &feat).unwrap(), a);
        let black = Image::zeros(3, 16, 16);
        assert!(model.forward(&black).unwrap().is_finite());
    }

    #[test]
    fn non_square_input_uses_center_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = tiny_model(&mut rng);
        let x = random_image(&mut rng, 20, 30);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.shape(), (3, 20, 30));
        let feat = model.encoder.encode(&x.center_window(16, 16)).unwrap();
        assert_eq!(model.irn.reconstruct(&x, &feat).unwrap(), out);
        assert!(model.forward(&random_image(&mut rng, 12, 30)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = tiny_model(&mut rng);
        let x = random_image(&mut rng, 16, 16);
        let y = random_image(&mut rng, 16, 16);
        let weights = LossWeights {
            w1: 1.0,
            w2: 0.0,
            use_info: false,
            use_fre: false,
        };
        let fc = FrequencyLossConfig::default();
        let mut grad = model.zeros_like();
        model.accumulate_gradients(&x, &y, None, &weights, &fc, 1.0, &mut grad).unwrap();
        let analytic = grad.flatten();
        let loss = |m: &Enhancer| l1_loss(&m.forward(&x).unwrap(), &y).unwrap().0;
        let n = analytic.len();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for _ in 0..60 {
            let i = rng.random_range(0..n);
            let mut plus = model.clone();
            let mut minus = model.clone();
            nudge(&mut plus, i, h);
            nudge(&mut minus, i, -h);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic[i];
            let scale = a.abs().max(fd.abs());
            if scale > 1e-6 {
                worst = worst.max((a - fd).abs() / scale);
                checked += 1;
            } else {
                assert!((a - fd).abs() < 1e-8);
            }
        }
        assert!(checked >= 20, "only {checked} informative entries");
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    fn nudge(m: &mut Enhancer, index: usize, delta: f64) {
        let mut offset = 0;
        for p in m.param_muts() {
            if index < offset + p.values.len() {
                p.values[index - offset] += delta;
                return;
            }
            offset += p.values.len();
        }
    }
}
