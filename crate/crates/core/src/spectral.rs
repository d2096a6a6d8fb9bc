//! Two-dimensional DFT, the focal frequency loss and spectrum diagnostics.
//!
//! The forward transform is unnormalized,
//! `F(u,v) = sum_x sum_y f(x,y) exp(-i 2 pi (u x / M + v y / N))`,
//! and the inverse carries the `1 / (M N)` factor. Multi-channel grids are
//! transformed channel by channel.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, Direction};
use crate::math;
use crate::tensor::Tensor;

/// Largest tolerated conjugate-symmetry defect when a real grid is requested
/// from a spectrum, relative to `max(1, max |F|)`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-6;

/// Complex spectrum of every channel of a grid, `values[c][u * cols + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    channels: usize,
    rows: usize,
    cols: usize,
    values: Vec<Complex64>,
}

impl SpectrumGrid {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            values: vec![Complex64::new(0.0, 0.0); channels * rows * cols],
        }
    }

    pub fn from_values(channels: usize, rows: usize, cols: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != channels * rows * cols || rows == 0 || cols == 0 {
            return Err(crate::error::shape_err(
                "SpectrumGrid::from_values",
                (channels, rows, cols),
                values.len(),
            ));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrum"));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> Complex64 {
        self.values[(c * self.rows + u) * self.cols + v]
    }

    pub fn set(&mut self, c: usize, u: usize, v: usize, z: Complex64) {
        self.values[(c * self.rows + u) * self.cols + v] = z;
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.rows * self.cols;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Largest `|F(u,v) - conj(F(-u,-v))|` relative to `max(1, max |F|)`.
    pub fn hermitian_defect(&self) -> f64 {
        let (m, n) = (self.rows, self.cols);
        let mut scale: f64 = 1.0;
        let mut worst: f64 = 0.0;
        for c in 0..self.channels {
            for u in 0..m {
                for v in 0..n {
                    let z = self.get(c, u, v);
                    let mirror = self.get(c, (m - u) % m, (n - v) % n);
                    scale = scale.max(z.norm());
                    worst = worst.max((z - mirror.conj()).norm());
                }
            }
        }
        worst / scale
    }
}

/// Forward transform of each channel.
pub fn dft2(grid: &Tensor) -> Result<SpectrumGrid> {
    let (c, m, n) = grid.shape();
    if m == 0 || n == 0 {
        return Err(crate::error::shape_err("dft2", "non-empty grid", (c, m, n)));
    }
    grid.ensure_finite("dft2 input")?;
    let mut values: Vec<Complex64> = grid.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for chunk in values.chunks_exact_mut(m * n) {
        fft2_inplace(chunk, m, n, Direction::Forward);
    }
    Ok(SpectrumGrid {
        channels: c,
        rows: m,
        cols: n,
        values,
    })
}

/// Normalized inverse transform, keeping the complex result.
pub fn idft2_complex(spectrum: &SpectrumGrid) -> Vec<Complex64> {
    let (m, n) = (spectrum.rows, spectrum.cols);
    let mut values = spectrum.values.clone();
    let inv = 1.0 / (m * n) as f64;
    for chunk in values.chunks_exact_mut(m * n) {
        fft2_inplace(chunk, m, n, Direction::Inverse);
        chunk.iter_mut().for_each(|z| *z *= inv);
    }
    values
}

/// Normalized inverse transform to a real grid. The spectrum must be
/// conjugate-symmetric, as every spectrum of a real grid is.
pub fn idft2(spectrum: &SpectrumGrid) -> Result<Tensor> {
    let defect = spectrum.hermitian_defect();
    if defect > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian(defect));
    }
    let values = idft2_complex(spectrum);
    Tensor::from_vec(
        spectrum.channels,
        spectrum.rows,
        spectrum.cols,
        values.into_iter().map(|z| z.re).collect(),
    )
}

/// Settings of the weight-adaptive frequency loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyLossConfig {
    /// Exponent applied to the residual magnitude to form the per-bin weight.
    pub alpha: f64,
    /// Divide the weight grid by its maximum.
    pub normalize_weight: bool,
    /// Treat the weight grid as a constant when differentiating.
    pub detach_weight: bool,
}

impl Default for FrequencyLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            normalize_weight: false,
            detach_weight: true,
        }
    }
}

impl FrequencyLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "frequency loss alpha must be a finite non-negative number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss value together with its gradient with respect to the reconstruction.
#[derive(Debug, Clone)]
pub struct FrequencyLoss {
    pub value: f64,
    pub grad: Tensor,
}

/// `(1/MN) sum_{u,v} w(u,v) |F_r - F_f|^2` with `w = |F_r - F_f|^alpha`,
/// averaged over channels.
pub fn focal_frequency_loss(recon: &Tensor, target: &Tensor, cfg: &FrequencyLossConfig) -> Result<FrequencyLoss> {
    cfg.validate()?;
    recon.check_same_shape(target, "focal_frequency_loss")?;
    let (channels, m, n) = recon.shape();
    let mn = (m * n) as f64;

    let mut residual = target.clone();
    for (r, f) in residual.data_mut().iter_mut().zip(recon.data()) {
        *r -= *f;
    }
    let spectrum = dft2(&residual)?;

    let mut value = 0.0;
    let mut grad = Tensor::zeros(channels, m, n);
    let mut coeff = vec![Complex64::new(0.0, 0.0); m * n];
    let half_alpha = 0.5 * cfg.alpha;

    for c in 0..channels {
        let d = spectrum.channel(c);
        let sq: Vec<f64> = d.iter().map(|z| z.norm_sqr()).collect();
        let mut weight: Vec<f64> = sq.iter().map(|&s| math::powf(s, half_alpha)).collect();

        let mut peak = (0usize, 1.0);
        if cfg.normalize_weight {
            let (idx, max) = weight
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc });
            if max == 0.0 {
                continue;
            }
            weight.iter_mut().for_each(|w| *w /= max);
            peak = (idx, max);
        }

        let channel_loss = weight.iter().zip(&sq).map(|(w, s)| w * s).sum::<f64>() / mn;
        value += channel_loss;

        // dL = sum c(u,v) d|D(u,v)|^2  =>  dL/de = 2 Re(unnormalized inverse DFT of c D).
        let slope = if cfg.detach_weight { 1.0 } else { 1.0 + half_alpha };
        for ((k, z), w) in coeff.iter_mut().zip(d).zip(&weight) {
            *k = *z * (slope * w / mn);
        }
        if cfg.normalize_weight && !cfg.detach_weight && cfg.alpha > 0.0 {
            let (idx, _) = peak;
            let extra = -channel_loss * half_alpha / sq[idx];
            coeff[idx] += d[idx] * extra;
        }
        fft2_inplace(&mut coeff, m, n, Direction::Inverse);
        for (g, k) in grad.plane_mut(c).iter_mut().zip(&coeff) {
            // Residual is target - recon, hence the sign flip.
            *g = -2.0 * k.re;
        }
    }

    let inv_c = 1.0 / channels as f64;
    grad.scale(inv_c);
    Ok(FrequencyLoss {
        value: value * inv_c,
        grad,
    })
}

/// Radially binned mean log-magnitude of two spectra and their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    /// Upper edge of each normalized radial-frequency bin.
    pub bin_edges: Vec<f64>,
    pub recon: Vec<f64>,
    pub target: Vec<f64>,
    /// `target - recon` per bin.
    pub gap: Vec<f64>,
}

/// Mean `ln(1 + |F|)` of both spectra binned by `r = sqrt(fu^2 + fv^2)` with
/// `fu, fv` the wrapped frequencies in cycles per sample. Radii beyond 0.5
/// (the corners of the grid) fall into the last bin. Channels are averaged.
pub fn spectrum_gap_profile(recon: &Tensor, target: &Tensor, bins: usize) -> Result<GapProfile> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be at least 1".into()));
    }
    recon.check_same_shape(target, "spectrum_gap_profile")?;
    let (channels, m, n) = recon.shape();
    let fr = dft2(recon)?;
    let ft = dft2(target)?;

    let mut sum_r = vec![0.0; bins];
    let mut sum_t = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for c in 0..channels {
        for u in 0..m {
            let fu = u.min(m - u) as f64 / m as f64;
            for v in 0..n {
                let fv = v.min(n - v) as f64 / n as f64;
                let r = math::sqrt(fu * fu + fv * fv);
                let bin = ((r / 0.5 * bins as f64) as usize).min(bins - 1);
                sum_r[bin] += math::ln_1p(fr.get(c, u, v).norm());
                sum_t[bin] += math::ln_1p(ft.get(c, u, v).norm());
                count[bin] += 1;
            }
        }
    }
    let mean = |s: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(&count)
            .map(|(v, &k)| if k == 0 { 0.0 } else { v / k as f64 })
            .collect()
    };
    let recon_prof = mean(&sum_r);
    let target_prof = mean(&sum_t);
    let gap = target_prof.iter().zip(&recon_prof).map(|(t, r)| t - r).collect();
    Ok(GapProfile {
        bin_edges: (1..=bins).map(|b| 0.5 * b as f64 / bins as f64).collect(),
        recon: recon_prof,
        target: target_prof,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, c: usize, m: usize, n: usize) -> Tensor {
        Tensor::from_fn(c, m, n, |_, _, _| rng.random_range(0.0..1.0))
    }

    /// Direct double-loop evaluation of the forward transform.
    fn brute_dft(grid: &Tensor) -> Vec<Complex64> {
        let (c, m, n) = grid.shape();
        let mut out = Vec::with_capacity(c * m * n);
        for ch in 0..c {
            for u in 0..m {
                for v in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for x in 0..m {
                        for y in 0..n {
                            let phase = -2.0 * PI * ((u * x) as f64 / m as f64 + (v * y) as f64 / n as f64);
                            acc += grid.get(ch, x, y) * Complex64::from_polar(1.0, phase);
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let g = Tensor::filled(1, 5, 6, 0.3);
        let s = dft2(&g).unwrap();
        assert!((s.get(0, 0, 0).re - 30.0 * 0.3).abs() < 1e-12);
        for u in 0..5 {
            for v in 0..6 {
                if (u, v) != (0, 0) {
                    assert!(s.get(0, u, v).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut g = Tensor::zeros(1, 4, 7);
        g.set(0, 0, 0, 1.0);
        let s = dft2(&g).unwrap();
        for z in s.values() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn random_4x4_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(&mut rng, 2, 4, 4);
        let s = dft2(&g).unwrap();
        for (a, b) in s.values().iter().zip(brute_dft(&g)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut g = Tensor::zeros(1, 2, 2);
        g.set(0, 1, 1, f64::NAN);
        assert_eq!(dft2(&g), Err(Error::NonFinite("dft2 input")));
    }

    #[test]
    fn inverse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_grid(&mut rng, 1, 8, 8);
        let back = idft2(&dft2(&g).unwrap()).unwrap();
        let err = g.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);

        let zero = idft2(&SpectrumGrid::zeros(1, 3, 5)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let mut dc = SpectrumGrid::zeros(1, 3, 5);
        dc.set(0, 0, 0, Complex64::new(15.0, 0.0));
        let ones = idft2(&dc).unwrap();
        assert!(ones.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut s = SpectrumGrid::zeros(1, 4, 4);
        s.set(0, 1, 0, Complex64::new(1.0, 0.0));
        assert!(matches!(idft2(&s), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn zero_residual_gives_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_grid(&mut rng, 3, 6, 5);
        for normalize in [false, true] {
            let cfg = FrequencyLossConfig {
                alpha: 1.0,
                normalize_weight: normalize,
                detach_weight: true,
            };
            let out = focal_frequency_loss(&g, &g, &cfg).unwrap();
            assert_eq!(out.value, 0.0);
            assert!(out.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::zeros(1, 4, 4);
        let b = Tensor::zeros(1, 4, 5);
        assert!(matches!(
            focal_frequency_loss(&a, &b, &FrequencyLossConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let a = Tensor::zeros(1, 2, 2);
        let cfg = FrequencyLossConfig {
            alpha: -0.5,
            ..Default::default()
        };
        assert!(focal_frequency_loss(&a, &a, &cfg).is_err());
    }

    #[test]
    fn gap_profile_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_grid(&mut rng, 3, 16, 16);
        let p = spectrum_gap_profile(&g, &g, 8).unwrap();
        assert!(p.gap.iter().all(|&d| d == 0.0));
        assert!(spectrum_gap_profile(&g, &g, 0).is_err());
    }

    #[test]
    fn single_bin_profile_is_global_mean_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_grid(&mut rng, 1, 8, 8);
        let b = random_grid(&mut rng, 1, 8, 8);
        let p = spectrum_gap_profile(&a, &b, 1).unwrap();
        let mean_log = |g: &Tensor| {
            let s = brute_dft(g);
            s.iter().map(|z| z.norm().ln_1p()).sum::<f64>() / s.len() as f64
        };
        assert!((p.gap[0] - (mean_log(&b) - mean_log(&a))).abs() < 1e-9);
    }

    #[test]
    fn checkerboard_gap_lands_in_last_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recon = random_grid(&mut rng, 1, 16, 16).map(|v| 0.4 + 0.2 * v);
        let mut target = recon.clone();
        for y in 0..16 {
            for x in 0..16 {
                let s = if (x + y) % 2 == 0 { 0.2 } else { -0.2 };
                target.set(0, y, x, recon.get(0, y, x) + s);
            }
        }
        let p = spectrum_gap_profile(&recon, &target, 6).unwrap();
        let argmax = p
            .gap
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 5);
    }
}
