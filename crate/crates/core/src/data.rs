//! Paired samples, patch cropping, brightness and blur augmentation, and
//! batch assembly for contrastive and supervised training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Image;

/// Below this gain the logarithmic curve is replaced by the identity.
pub const LOG_GAIN_IDENTITY_THRESHOLD: f64 = 1e-6;

/// Aligned low-light / normal-light images of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    id: String,
    low: Image,
    normal: Image,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, low: Image, normal: Image) -> Result<Self> {
        let id = id.into();
        if low.height() != normal.height() || low.width() != normal.width() || low.channels() != normal.channels() {
            return Err(shape_err("ImagePair", low.shape(), normal.shape()));
        }
        for (img, which) in [(&low, "low image"), (&normal, "normal image")] {
            if img.data().iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{which} of pair {id} has values outside [0, 1]"
                )));
            }
        }
        Ok(Self { id, low, normal })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn low(&self) -> &Image {
        &self.low
    }

    pub fn normal(&self) -> &Image {
        &self.normal
    }

    pub fn height(&self) -> usize {
        self.low.height()
    }

    pub fn width(&self) -> usize {
        self.low.width()
    }
}

/// A square window cut from a source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    pub source_id: String,
    /// Top-left corner `(row, col)` in the source image.
    pub origin: (usize, usize),
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.height()
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

/// Random brightness and blur parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    gamma_range: Interval,
    log_gain_range: Interval,
    blur_sigma_range: Interval,
    blur_kernel_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gamma_range: Interval::new(0.4, 2.5),
            log_gain_range: Interval::new(1.0, 10.0),
            blur_sigma_range: Interval::new(0.0, 1.5),
            blur_kernel_size: 5,
        }
    }
}

impl AugmentConfig {
    pub fn new(
        gamma_range: Interval,
        log_gain_range: Interval,
        blur_sigma_range: Interval,
        blur_kernel_size: usize,
    ) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("augmentation: {what}")));
        if !gamma_range.is_valid() || gamma_range.lo <= 0.0 {
            return bad("gamma_range must be a positive interval with lo <= hi");
        }
        if !log_gain_range.is_valid() || log_gain_range.lo < 0.0 {
            return bad("log_gain_range must be a non-negative interval with lo <= hi");
        }
        if !blur_sigma_range.is_valid() || blur_sigma_range.lo < 0.0 {
            return bad("blur_sigma_range must be a non-negative interval with lo <= hi");
        }
        if blur_kernel_size.is_multiple_of(2) {
            return bad("blur_kernel_size must be odd");
        }
        Ok(Self {
            gamma_range,
            log_gain_range,
            blur_sigma_range,
            blur_kernel_size,
        })
    }

    pub fn gamma_range(&self) -> Interval {
        self.gamma_range
    }

    pub fn log_gain_range(&self) -> Interval {
        self.log_gain_range
    }

    pub fn blur_sigma_range(&self) -> Interval {
        self.blur_sigma_range
    }

    pub fn blur_kernel_size(&self) -> usize {
        self.blur_kernel_size
    }
}

/// Uniformly positioned `size x size` window of `image`.
pub fn crop_patch<R: Rng + ?Sized>(image: &Image, source_id: &str, size: usize, rng: &mut R) -> Result<Patch> {
    let (h, w) = (image.height(), image.width());
    if size == 0 || size > h.min(w) {
        return Err(Error::PatchTooLarge {
            size,
            height: h,
            width: w,
        });
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    Ok(Patch {
        pixels: image.window(top, left, size, size),
        source_id: source_id.into(),
        origin: (top, left),
    })
}

/// `x -> x^gamma`, then `x -> ln(1 + g x) / ln(1 + g)`, clamped to `[0, 1]`.
pub fn apply_brightness(patch: &Patch, gamma: f64, gain: f64) -> Patch {
    let log_norm = math::ln_1p(gain);
    let pixels = patch.pixels.map(|x| {
        let mut y = if gamma == 1.0 { x } else { math::powf(x, gamma) };
        if gain >= LOG_GAIN_IDENTITY_THRESHOLD {
            y = math::ln_1p(gain * y) / log_norm;
        }
        y.clamp(0.0, 1.0)
    });
    Patch {
        pixels,
        source_id: patch.source_id.clone(),
        origin: patch.origin,
    }
}

pub fn augment_brightness<R: Rng + ?Sized>(patch: &Patch, cfg: &AugmentConfig, rng: &mut R) -> Patch {
    let gamma = cfg.gamma_range.sample(rng);
    let gain = cfg.log_gain_range.sample(rng);
    apply_brightness(patch, gamma, gain)
}

/// Normalized 1D Gaussian taps; `sigma == 0` yields a delta.
pub fn gaussian_taps(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    if sigma <= 0.0 {
        let mut taps = vec![0.0; size];
        taps[r as usize] = 1.0;
        return taps;
    }
    let taps: Vec<f64> = (-r..=r)
        .map(|i| math::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with reflect padding.
pub fn apply_blur(patch: &Patch, sigma: f64, kernel_size: usize) -> Patch {
    let taps = gaussian_taps(sigma, kernel_size);
    let r = (kernel_size / 2) as isize;
    let (c, h, w) = patch.pixels.shape();
    let src = &patch.pixels;
    let mut horiz = Image::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in taps.iter().zip(-r..=r) {
                    acc += t * src.get(ch, y, crate::nn::reflect(x as isize + k, w));
                }
                horiz.set(ch, y, x, acc);
            }
        }
    }
    let mut out = Image::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in taps.iter().zip(-r..=r) {
                    acc += t * horiz.get(ch, crate::nn::reflect(y as isize + k, h), x);
                }
                out.set(ch, y, x, acc.clamp(0.0, 1.0));
            }
        }
    }
    Patch {
        pixels: out,
        source_id: patch.source_id.clone(),
        origin: patch.origin,
    }
}

pub fn augment_blur<R: Rng + ?Sized>(patch: &Patch, cfg: &AugmentConfig, rng: &mut R) -> Patch {
    let sigma = cfg.blur_sigma_range.sample(rng);
    apply_blur(patch, sigma, cfg.blur_kernel_size)
}

/// Brightness then blur.
pub fn augment<R: Rng + ?Sized>(patch: &Patch, cfg: &AugmentConfig, rng: &mut R) -> Patch {
    let bright = augment_brightness(patch, cfg, rng);
    augment_blur(&bright, cfg, rng)
}

/// Query and positive patches; pair `i` comes from one source image and no
/// source image appears twice in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub queries: Vec<Patch>,
    pub positives: Vec<Patch>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn distinct_indices<R: Rng + ?Sized>(available: usize, requested: usize, rng: &mut R) -> Result<Vec<usize>> {
    if requested > available || requested == 0 {
        return Err(Error::NotEnoughImages {
            requested,
            available,
        });
    }
    Ok(rand::seq::index::sample(rng, available, requested).into_vec())
}

/// Two independent crops of the low-light image of `batch` distinct pairs,
/// each independently augmented.
pub fn make_contrastive_batch<R: Rng + ?Sized>(
    pairs: &[ImagePair],
    batch: usize,
    patch_size: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ContrastiveBatch> {
    let picks = distinct_indices(pairs.len(), batch, rng)?;
    let mut queries = Vec::with_capacity(batch);
    let mut positives = Vec::with_capacity(batch);
    for i in picks {
        let pair = &pairs[i];
        let q = crop_patch(pair.low(), pair.id(), patch_size, rng)?;
        let k = crop_patch(pair.low(), pair.id(), patch_size, rng)?;
        queries.push(augment(&q, cfg, rng));
        positives.push(augment(&k, cfg, rng));
    }
    Ok(ContrastiveBatch { queries, positives })
}

/// Aligned supervised crops.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    /// Index of each sample's pair in the dataset.
    pub indices: Vec<usize>,
    pub low: Vec<Patch>,
    pub normal: Vec<Patch>,
}

/// `batch` distinct pairs, each cropped at one shared offset for both images.
pub fn make_train_batch<R: Rng + ?Sized>(
    pairs: &[ImagePair],
    batch: usize,
    patch_size: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    let picks = distinct_indices(pairs.len(), batch, rng)?;
    let mut low = Vec::with_capacity(batch);
    let mut normal = Vec::with_capacity(batch);
    for &i in &picks {
        let pair = &pairs[i];
        let lp = crop_patch(pair.low(), pair.id(), patch_size, rng)?;
        let (top, left) = lp.origin;
        normal.push(Patch {
            pixels: pair.normal().window(top, left, patch_size, patch_size),
            source_id: pair.id().into(),
            origin: lp.origin,
        });
        low.push(lp);
    }
    Ok(TrainBatch {
        indices: picks,
        low,
        normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Tensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
    }

    fn patch_of(pixels: Image) -> Patch {
        Patch {
            pixels,
            source_id: "p".into(),
            origin: (0, 0),
        }
    }

    fn pairs(n: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<ImagePair> {
        (0..n)
            .map(|i| {
                let low = random_image(rng, h, w).map(|v| 0.2 * v);
                let normal = random_image(rng, h, w);
                ImagePair::new(alloc::format!("{i}"), low, normal).unwrap()
            })
            .collect()
    }

    #[test]
    fn pair_rejects_size_mismatch_and_out_of_range() {
        let a = Image::zeros(3, 4, 4);
        let b = Image::zeros(3, 4, 5);
        assert!(ImagePair::new("x", a.clone(), b).is_err());
        let c = Image::filled(3, 4, 4, 1.5);
        assert!(ImagePair::new("x", a, c).is_err());
    }

    #[test]
    fn crop_shapes_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_image(&mut rng, 400, 600);
        let p = crop_patch(&img, "a", 192, &mut rng).unwrap();
        assert_eq!(p.pixels.shape(), (3, 192, 192));
        assert_eq!(p.pixels, img.window(p.origin.0, p.origin.1, 192, 192));

        let sq = random_image(&mut rng, 8, 8);
        let whole = crop_patch(&sq, "b", 8, &mut rng).unwrap();
        assert_eq!(whole.origin, (0, 0));
        assert_eq!(whole.pixels, sq);

        assert!(matches!(
            crop_patch(&sq, "b", 9, &mut rng),
            Err(Error::PatchTooLarge { size: 9, .. })
        ));
    }

    #[test]
    fn brightness_examples() {
        let p = patch_of(Image::filled(3, 4, 4, 0.25));
        let squared = apply_brightness(&p, 2.0, 0.0);
        assert!(squared.pixels.data().iter().all(|&v| v == 0.0625));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = patch_of(random_image(&mut rng, 5, 5));
        assert_eq!(apply_brightness(&r, 1.0, 1e-7), r);
    }

    #[test]
    fn even_kernel_rejected_at_construction() {
        let d = AugmentConfig::default();
        assert!(AugmentConfig::new(d.gamma_range(), d.log_gain_range(), d.blur_sigma_range(), 4).is_err());
        assert!(AugmentConfig::new(Interval::new(0.0, 1.0), d.log_gain_range(), d.blur_sigma_range(), 5).is_err());
        assert!(AugmentConfig::new(Interval::new(2.0, 1.0), d.log_gain_range(), d.blur_sigma_range(), 5).is_err());
    }

    #[test]
    fn blur_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = patch_of(random_image(&mut rng, 7, 7));
        assert_eq!(apply_blur(&r, 0.0, 5), r);

        let c = patch_of(Image::filled(3, 6, 6, 0.4));
        for sigma in [0.3, 1.0, 2.5] {
            let out = apply_blur(&c, sigma, 5);
            assert!(out.pixels.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        }
    }

    #[test]
    fn impulse_center_equals_gaussian_peak() {
        // Direct evaluation of the normalized 5x5 kernel at sigma = 1.
        let mut total = 0.0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                total += (-((dy * dy + dx * dx) as f64) / 2.0).exp();
            }
        }
        let peak = 1.0 / total;

        let mut img = Image::zeros(1, 9, 9);
        img.set(0, 4, 4, 1.0);
        let out = apply_blur(&patch_of(img), 1.0, 5);
        assert!((out.pixels.get(0, 4, 4) - peak).abs() < 1e-12);
    }

    #[test]
    fn contrastive_batch_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AugmentConfig::default();
        let one = pairs(1, 20, 20, &mut rng);
        let b = make_contrastive_batch(&one, 1, 16, &cfg, &mut rng).unwrap();
        assert_eq!(b.queries[0].source_id, b.positives[0].source_id);
        assert!(matches!(
            make_contrastive_batch(&one, 2, 16, &cfg, &mut rng),
            Err(Error::NotEnoughImages { requested: 2, available: 1 })
        ));

        let many = pairs(40, 12, 12, &mut rng);
        let b = make_contrastive_batch(&many, 16, 8, &cfg, &mut rng).unwrap();
        let mut ids: Vec<_> = b.queries.iter().map(|p| p.source_id.clone()).collect();
        for (q, k) in b.queries.iter().zip(&b.positives) {
            assert_eq!(q.source_id, k.source_id);
        }
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 16);
    }

    #[test]
    fn train_batch_is_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = pairs(4, 30, 40, &mut rng);
        let b = make_train_batch(&ds, 3, 16, &mut rng).unwrap();
        assert_eq!(b.low.len(), 3);
        for ((l, n), &i) in b.low.iter().zip(&b.normal).zip(&b.indices) {
            assert_eq!(l.origin, n.origin);
            let (t, c) = l.origin;
            assert_eq!(l.pixels, ds[i].low().window(t, c, 16, 16));
            assert_eq!(n.pixels, ds[i].normal().window(t, c, 16, 16));
        }

        let img = random_image(&mut rng, 20, 20);
        let same = [ImagePair::new("s", img.clone(), img).unwrap()];
        let b = make_train_batch(&same, 1, 10, &mut rng).unwrap();
        assert_eq!(b.low[0].pixels, b.normal[0].pixels);
        assert!(make_train_batch(&same, 1, 21, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn augmentations_preserve_shape_range_and_id(seed in any::<u64>(), h in 3usize..12, w in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Patch { pixels: random_image(&mut rng, h, w), source_id: "id7".into(), origin: (1, 2) };
            let cfg = AugmentConfig::default();
            let out = augment(&p, &cfg, &mut rng);
            prop_assert_eq!(out.pixels.shape(), p.pixels.shape());
            prop_assert_eq!(&out.source_id, "id7");
            prop_assert!(out.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn blur_preserves_mean_with_constant_border(seed in any::<u64>(), sigma in 0.0f64..3.0, border in 0.0f64..1.0) {
            // Constant rows/columns at the edges (width >= radius + 1) make
            // reflect padding mass-preserving.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 14;
            let p = patch_of(Tensor::from_fn(3, n, n, |_, y, x| {
                if y < 3 || x < 3 || y >= n - 3 || x >= n - 3 { border } else { rng.random_range(0.0..1.0) }
            }));
            let out = apply_blur(&p, sigma, 5);
            prop_assert!((p.pixels.mean() - out.pixels.mean()).abs() < 1e-6);
        }
    }
}
