//! Full-reference image quality metrics.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// `10 log10(peak^2 / MSE)` over every channel jointly; `+inf` when the
/// images are identical.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::ImageTooSmall {
            height: a.height(),
            width: a.width(),
            window: 1,
        });
    }
    let se: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    if se == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = se / n as f64;
    Ok(10.0 * math::log10(peak * peak / mse))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|i| g[i] * x[y * w + ox + i]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean structural similarity of the channel-mean grayscale images
/// (11x11 Gaussian window, sigma 1.5, peak 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW || a.channels() == 0 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let c1 = 0.01 * 0.01;
    let c2 = 0.03 * 0.03;
    let g = gaussian_window();
    let ga = a.channel_mean();
    let gb = b.channel_mean();
    let (xa, xb) = (ga.data(), gb.data());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();

    let mu_a = filter_valid(xa, h, w, &g);
    let mu_b = filter_valid(xb, h, w, &g);
    let e_aa = filter_valid(&prod(xa, xa), h, w, &g);
    let e_bb = filter_valid(&prod(xb, xb), h, w, &g);
    let e_ab = filter_valid(&prod(xa, xb), h, w, &g);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

/// Per-image scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub image_id: String,
    /// `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricRecord {
    pub fn compute(image_id: impl Into<String>, pred: &Image, reference: &Image) -> Result<Self> {
        Ok(Self {
            image_id: image_id.into(),
            psnr: psnr(pred, reference, 1.0)?,
            ssim: ssim(pred, reference)?,
        })
    }
}

/// Mean PSNR and SSIM; any infinite PSNR makes the mean infinite.
pub fn mean_metrics(records: &[MetricRecord]) -> Option<(f64, f64)> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let p = records.iter().map(|r| r.psnr).sum::<f64>() / n;
    let s = records.iter().map(|r| r.ssim).sum::<f64>() / n;
    Some((p, s))
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
    fn psnr_closed_forms() {
        let a = Image::filled(3, 16, 16, 0.2);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 16.0 / 255.0);
        let expected = 10.0 * math::log10(1.0 / ((16.0f64 / 255.0) * (16.0 / 255.0)));
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 24.05).abs() < 0.01);

        let cb = Image::from_fn(3, 8, 8, |_, y, x| ((x + y) % 2) as f64);
        let inv = cb.map(|v| 1.0 - v);
        assert_eq!(psnr(&cb, &inv, 1.0).unwrap(), 0.0);
        assert!(psnr(&cb, &Image::zeros(3, 8, 9), 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 24, 20);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let c = Image::filled(3, 16, 16, 0.4);
        assert_eq!(ssim(&c, &c).unwrap(), 1.0);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.0);
        assert!(ssim(&Image::zeros(3, 10, 30), &Image::zeros(3, 10, 30)).is_err());
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = random_image(&mut rng, 16, 16);
            let b = random_image(&mut rng, 16, 16);
            assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Image::filled(3, 16, 16, 0.5);
        let noise: Vec<f64> = (0..a.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.2] {
            let mut b = a.clone();
            b.data_mut().iter_mut().zip(&noise).for_each(|(v, n)| *v += amp * n);
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_constant_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Image::from_fn(3, 20, 20, |_, y, x| 0.3 + 0.2 * math::cos((x + 2 * y) as f64 * 0.7));
        let b = a.map(|v| v + 0.02 * rng.random_range(-1.0..1.0));
        let base = ssim(&a, &b).unwrap();
        let shifted = ssim(&a.map(|v| v + 0.1), &b.map(|v| v + 0.1)).unwrap();
        assert!((base - shifted).abs() < 1e-3);
    }

    #[test]
    fn aggregate_of_single_record_equals_record() {
        let r = MetricRecord {
            image_id: "a".into(),
            psnr: 21.5,
            ssim: 0.8,
        };
        assert_eq!(mean_metrics(std::slice::from_ref(&r)), Some((21.5, 0.8)));
        assert_eq!(mean_metrics(&[]), None);
    }
}
