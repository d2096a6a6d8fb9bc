//! Procedural datasets for probes, smoke runs and tests.

use std::f64::consts::PI;

use dimlight_core::data::ImagePair;
use dimlight_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of orientations cycled through by [`grating`].
pub const ORIENTATIONS: usize = 8;

/// Coloured sinusoidal grating; `index` selects orientation (mod 8) and
/// spatial frequency (div 8), so the first 64 indices are pairwise distinct.
/// Hues are a permutation of 64 steps that keeps neighbours in orientation
/// or frequency far apart on the colour wheel.
pub fn grating(index: usize, size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let (o, f) = (index % ORIENTATIONS, index / ORIENTATIONS);
    let theta = PI * o as f64 / ORIENTATIONS as f64;
    let freq = 0.03 + 0.022 * f as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let hue_step = ORIENTATIONS * ((3 * o + f) % ORIENTATIONS) + o;
    let color = hue_rgb(hue_step as f64 / (ORIENTATIONS * ORIENTATIONS) as f64);
    let (c, s) = (theta.cos(), theta.sin());
    Image::from_fn(3, size, size, |ch, y, x| {
        let t = 2.0 * PI * freq * (x as f64 * c + y as f64 * s) + phase;
        (color[ch] * (0.55 + 0.35 * t.sin())).clamp(0.0, 1.0)
    })
}

/// Saturated RGB colour in `[0.2, 0.9]` for a hue in `[0, 1)`.
fn hue_rgb(h: f64) -> [f64; 3] {
    std::array::from_fn(|k| {
        let d = ((h * 3.0 - k as f64).rem_euclid(3.0) - 1.5).abs();
        0.2 + 0.7 * (1.5 - d).clamp(0.0, 1.0)
    })
}

/// `n` grating images as pairs with identical low and normal images.
pub fn grating_pairs(n: usize, size: usize, seed: u64) -> Vec<ImagePair> {
    (0..n)
        .map(|i| {
            let g = grating(i, size, seed);
            ImagePair::new(format!("grating{i:03}"), g.clone(), g).expect("grating in range")
        })
        .collect()
}

/// Smooth colourful scene in `[0.05, 0.95]`.
pub fn scene<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Image {
    struct Wave {
        fx: f64,
        fy: f64,
        phase: f64,
        color: [f64; 3],
    }
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            fx: rng.random_range(-0.08..0.08),
            fy: rng.random_range(-0.08..0.08),
            phase: rng.random_range(0.0..2.0 * PI),
            color: std::array::from_fn(|_| rng.random_range(-0.15..0.15)),
        })
        .collect();
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.65));
    Image::from_fn(3, h, w, |c, y, x| {
        let mut v = base[c];
        for wv in &waves {
            v += wv.color[c] * (2.0 * PI * (wv.fx * x as f64 + wv.fy * y as f64) + wv.phase).sin();
        }
        v.clamp(0.05, 0.95)
    })
}

/// Paired scenes whose low-light version is `k * x^g` with per-pair
/// `k` in `[0.1, 0.25]` and `g` in `[1.2, 1.6]`.
pub fn low_light_pairs(n: usize, h: usize, w: usize, seed: u64) -> Vec<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let normal = scene(h, w, &mut rng);
            let k = rng.random_range(0.1..0.25);
            let g = rng.random_range(1.2..1.6);
            let low = normal.map(|v| k * v.powf(g));
            ImagePair::new(format!("scene{i:03}"), low, normal).expect("scene in range")
        })
        .collect()
}
