use ebm_anomaly::nn::{init_params, InitScheme, NetworkTopology};
use ebm_anomaly::sampler::{
    energy_trace, sample_negatives, sample_negatives_persistent, sgld_step, ChainState,
    QuadraticEnergy, ReplayBuffer, ReplayConfig, SamplerConfig,
};
use ebm_anomaly::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn free(step: f64) -> SamplerConfig {
    SamplerConfig {
        step_size: step,
        clamp: false,
        ..Default::default()
    }
}

#[test]
fn langevin_chain_on_quadratic_is_unit_gaussian() {
    let cfg = free(0.15);
    let mut chain = ChainState::new(0, 0, &[2, 2, 1], &cfg);
    let n = 100_000;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        chain.advance(&QuadraticEnergy, &cfg).unwrap();
        for (k, v) in chain.sample.data().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "coord {k}: mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "coord {k}: var {var}");
    }
}

/// Across seeds, chain-mean errors scaled by the AR(1) standard error
/// `sqrt(v·(1+a)/((1−a)·n))`, `a = 1 − λ/2`, `v = 1/(1 − λ/4)`, behave like
/// standard normal draws.
#[test]
fn chain_mean_errors_are_calibrated() {
    let step = 0.15;
    let cfg = free(step);
    let n = 20_000;
    let a = 1.0 - step / 2.0;
    let v = 1.0 / (1.0 - step / 4.0);
    let se = (v * (1.0 + a) / ((1.0 - a) * n as f64)).sqrt();
    let mut z = Vec::new();
    for seed in 0..40 {
        let mut chain = ChainState::new(seed, 0, &[2, 1, 1], &cfg);
        let mut sum = [0.0; 2];
        for _ in 0..n {
            chain.advance(&QuadraticEnergy, &cfg).unwrap();
            sum[0] += chain.sample.data()[0];
            sum[1] += chain.sample.data()[1];
        }
        z.extend(sum.iter().map(|s| s / n as f64 / se));
    }
    let m = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    assert!(m.abs() < 0.5, "z mean {m}");
    assert!((0.7..1.3).contains(&sd), "z std {sd}");
}

#[test]
fn negatives_are_reproducible_and_schedule_free() {
    let t = NetworkTopology::for_input_size(8, 1, 2).unwrap();
    let p = init_params(&t, 1, InitScheme::default());
    let cfg = SamplerConfig {
        n_steps: 10,
        ..Default::default()
    };
    let draw =
        || sample_negatives(&p, &[8, 8, 1], 8, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let a = draw();
    assert_eq!(a, draw());

    let master = rand::RngCore::next_u64(&mut ChaCha8Rng::seed_from_u64(3));
    let serial: Vec<Tensor> = (0..8)
        .map(|i| {
            ChainState::new(master, i, &[8, 8, 1], &cfg)
                .run(&p, &cfg)
                .unwrap()
        })
        .collect();
    assert_eq!(a, serial);
    assert_ne!(a[0], a[1]);
}

#[test]
fn persistent_sampling_is_reproducible() {
    let cfg = SamplerConfig {
        n_steps: 3,
        buffer: ReplayConfig {
            enabled: true,
            capacity: 5,
            reinit_prob: 0.3,
        },
        ..Default::default()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut buf = ReplayBuffer::new(5);
        let mut out = Vec::new();
        for _ in 0..4 {
            out.extend(
                sample_negatives_persistent(
                    &QuadraticEnergy,
                    &[2, 2, 1],
                    3,
                    &cfg,
                    &mut rng,
                    &mut buf,
                )
                .unwrap(),
            );
        }
        assert_eq!(buf.len(), 5);
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn trace_shape() {
    let cfg = SamplerConfig {
        n_steps: 7,
        ..Default::default()
    };
    let trace = energy_trace(
        &QuadraticEnergy,
        &[3, 3, 1],
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(trace.len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clamped_samples_stay_in_range(seed in any::<u64>(), step in 1e-3f64..2.0, lo in -1.0f64..0.4, width in 0.1f64..2.0) {
        let cfg = SamplerConfig {
            step_size: step,
            clamp_low: lo,
            clamp_high: lo + width,
            init_low: lo,
            init_high: lo + width,
            n_steps: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(vec![3, 3, 2], |i| i as f64 - 8.0);
        let y = sgld_step(&QuadraticEnergy, &x, &cfg, &mut rng).unwrap();
        prop_assert!(y.data().iter().all(|&v| v >= lo && v <= lo + width));
        let out = sample_negatives(&QuadraticEnergy, &[2, 2, 1], 3, &cfg, &mut rng).unwrap();
        prop_assert!(out.iter().flat_map(|t| t.data()).all(|&v| v >= lo && v <= lo + width));
    }

    #[test]
    fn noiseless_descent_never_increases_energy(seed in any::<u64>(), step in 1e-3f64..2.0) {
        let cfg = SamplerConfig {
            step_size: step,
            noise_scale: Some(0.0),
            clamp: false,
            n_steps: 30,
            ..Default::default()
        };
        let trace = energy_trace(&QuadraticEnergy, &[4, 4, 1], &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn closed_form_quadratic_step(v in -5.0f64..5.0, step in 1e-3f64..1.0) {
        let cfg = SamplerConfig { step_size: step, noise_scale: Some(0.0), clamp: false, ..Default::default() };
        let x = Tensor::filled(vec![1, 1, 1], v);
        let y = sgld_step(&QuadraticEnergy, &x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(y.data()[0], v - 0.5 * step * v);
    }
}
