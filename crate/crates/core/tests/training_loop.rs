use dimlight_core::data::{AugmentConfig, ImagePair};
use dimlight_core::encoder::{ContrastiveConfig, EncoderParams, EncoderTopology, NegativeQueue};
use dimlight_core::irn::{IrnParams, IrnTopology};
use dimlight_core::loss::{LossWeights, Variant};
use dimlight_core::model::Enhancer;
use dimlight_core::spectral::FrequencyLossConfig;
use dimlight_core::training::{fit_spectrum_stats, TrainConfig, Trainer};
use dimlight_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: EncoderTopology = EncoderTopology {
    channels: [3, 3, 4, 4, 4, 4],
    strides: [2, 1, 1, 1, 1, 1],
    hidden: 6,
    embed_dim: 3,
};

fn pairs(n: usize, size: usize) -> Vec<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..n)
        .map(|i| {
            let normal = Image::from_fn(3, size, size, |c, y, x| {
                0.5 + 0.3 * ((x as f64 * 0.3 + c as f64).sin() * (y as f64 * 0.2).cos())
            });
            let k = rng.random_range(0.1..0.3);
            let low = normal.map(|v| k * v);
            ImagePair::new(format!("p{i}"), low, normal).unwrap()
        })
        .collect()
}

fn trainer(data: &[ImagePair], variant: Variant, steps: usize) -> Trainer {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut enc = EncoderParams::init(TINY, &mut rng);
    enc.stats = fit_spectrum_stats(data, 16).unwrap();
    let queue = NegativeQueue::random(8, enc.feature_dim(), &mut rng);
    let irn = IrnParams::init(
        IrnTopology {
            channels: 4,
            feature_dim: enc.feature_dim(),
        },
        &mut rng,
    );
    let config = TrainConfig {
        batch_size: 2,
        patch_size: 16,
        base_lr: 2e-3,
        warmup_steps: 2,
        max_steps: Some(steps),
        ablation_variant: variant,
        ..TrainConfig::default()
    };
    let contrastive = ContrastiveConfig {
        queue_size: 8,
        batch_size: 2,
        patch_size: 16,
        ..ContrastiveConfig::default()
    };
    Trainer::new(
        Enhancer::new(enc.clone(), irn, 16).unwrap(),
        enc,
        queue,
        config,
        LossWeights::default().with_variant(variant),
        FrequencyLossConfig::default(),
        contrastive,
        AugmentConfig::default(),
        data.len(),
    )
    .unwrap()
}

fn run(variant: Variant, steps: usize) -> (Trainer, Vec<f64>) {
    let data = pairs(4, 20);
    let mut t = trainer(&data, variant, steps);
    let mut data_rng = ChaCha8Rng::seed_from_u64(2);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(3);
    let mut totals = Vec::new();
    while !t.is_finished() {
        totals.push(t.step(&data, &mut data_rng, &mut aug_rng).unwrap().report.total);
    }
    (t, totals)
}

#[test]
fn identical_seeds_give_identical_runs() {
    for variant in [Variant::M0, Variant::M3] {
        let (a, la) = run(variant, 4);
        let (b, lb) = run(variant, 4);
        assert_eq!(la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.model, b.model);
        assert_eq!(a.queue, b.queue);
    }
}

#[test]
fn supervised_loss_decreases_on_a_fixed_problem() {
    let (_, totals) = run(Variant::M1, 60);
    let head: f64 = totals[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = totals[totals.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.8 * head, "head {head} tail {tail}");
}

#[test]
fn contrastive_training_advances_queue() {
    let (m3, _) = run(Variant::M3, 3);
    assert_eq!(m3.queue.cursor(), 6);
    let (m1, _) = run(Variant::M1, 3);
    assert_eq!(m1.queue.cursor(), 0);
}

#[test]
fn non_finite_step_is_rejected_without_update() {
    let data = pairs(4, 20);
    let mut t = trainer(&data, Variant::M1, 4);
    t.model.irn.tail.bias[0] = f64::NAN;
    let before = t.model.clone();
    let err = t
        .step(&data, &mut ChaCha8Rng::seed_from_u64(2), &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap_err();
    assert!(matches!(err, dimlight_core::Error::NonFinite(_)), "{err:?}");
    assert_eq!(t.step, 0);
    assert_eq!(format!("{:?}", t.model), format!("{before:?}"));
}
