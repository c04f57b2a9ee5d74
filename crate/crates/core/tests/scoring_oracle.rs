mod common;

use common::{random_network, two_pass_moments};
use ebm_anomaly::scoring::{
    aggregate, fit_pixel_stats, fit_pixel_stats_parallel, gradient_map, image_score, pixel_scores,
    score_image, standardize, GradientMap, NormOrder, PixelStats, ScoreKind,
};
use ebm_anomaly::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_maps(n: usize, shape: &[usize], seed: u64) -> Vec<GradientMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loc: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    (0..n)
        .map(|_| {
            let t = Tensor::from_fn(shape.to_vec(), |i| {
                loc[i] + rng.random_range(-1.0..1.0) * (1.0 + i as f64 % 3.0)
            });
            GradientMap::new(t, "").unwrap()
        })
        .collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn streaming_stats_match_two_pass() {
    let maps = random_maps(100, &[6, 5, 3], 1);
    let tensors: Vec<Tensor> = maps.iter().map(|m| m.values.clone()).collect();
    let (mean, std) = two_pass_moments(&tensors);
    for stats in [
        fit_pixel_stats(maps.iter(), 1e-8).unwrap(),
        fit_pixel_stats_parallel(&maps, 1e-8, 7).unwrap(),
    ] {
        assert_eq!(stats.count, 100);
        for i in 0..mean.len() {
            assert!(close(stats.mu.data()[i], mean[i], 1e-10), "mu {i}");
            assert!(close(stats.sigma.data()[i], std[i], 1e-10), "sigma {i}");
        }
    }
}

fn self_consistency(maps: &[GradientMap], stats: &PixelStats) -> (f64, f64) {
    let standardized: Vec<GradientMap> = maps
        .iter()
        .map(|m| standardize(m, stats).unwrap())
        .collect();
    let refit = fit_pixel_stats(standardized.iter(), 1e-8).unwrap();
    let floored = stats.floored();
    let mut worst_mu: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    for (i, &f) in floored.iter().enumerate() {
        if f {
            continue;
        }
        worst_mu = worst_mu.max(refit.mu.data()[i].abs());
        worst_sigma = worst_sigma.max((refit.sigma.data()[i] - 1.0).abs());
    }
    (worst_mu, worst_sigma)
}

#[test]
fn standardized_training_maps_refit_to_unit_stats() {
    let mut maps = random_maps(50, &[4, 4, 3], 2);
    // one dead location
    for m in &mut maps {
        m.values.data_mut()[5] = 0.25;
    }
    let stats = fit_pixel_stats(maps.iter(), 1e-8).unwrap();
    assert!(stats.floored()[5]);
    assert_eq!(stats.floored().iter().filter(|&&f| f).count(), 1);
    let (mu, sigma) = self_consistency(&maps, &stats);
    assert!(mu <= 1e-8 && sigma <= 1e-6, "{mu} {sigma}");
}

#[test]
fn real_gradient_maps_refit_to_unit_stats() {
    let (params, image) = random_network(31);
    let shape = image.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let maps: Vec<GradientMap> = (0..40)
        .map(|_| {
            let x = Tensor::from_fn(shape.clone(), |_| rng.random_range(0.0..1.0));
            gradient_map(&params, &x).unwrap()
        })
        .collect();
    let stats = fit_pixel_stats(maps.iter(), 1e-8).unwrap();
    let (mu, sigma) = self_consistency(&maps, &stats);
    assert!(mu <= 1e-8 && sigma <= 1e-6, "{mu} {sigma}");
}

#[test]
fn identity_stats_leave_maps_unchanged() {
    let map = &random_maps(1, &[3, 3, 3], 4)[0];
    let stats = PixelStats {
        mu: Tensor::zeros(vec![3, 3, 3]),
        sigma: Tensor::filled(vec![3, 3, 3], 1.0),
        count: 2,
        epsilon: 1e-8,
    };
    assert_eq!(standardize(map, &stats).unwrap().values, map.values);
}

#[test]
fn pixel_scores_match_direct_loop() {
    let map = &random_maps(1, &[7, 6, 3], 5)[0];
    let out = pixel_scores(map, NormOrder::L2, ScoreKind::Raw).unwrap();
    for y in 0..7 {
        for x in 0..6 {
            let mut s = 0.0;
            for c in 0..3 {
                let v = map.values.data()[(y * 6 + x) * 3 + c];
                s += v * v;
            }
            assert_eq!(out.values.data()[y * 6 + x], s.sqrt());
        }
    }
}

#[test]
fn score_image_is_pure_and_consistent() {
    let (params, image) = random_network(12);
    let maps: Vec<GradientMap> = (0..5)
        .map(|k| gradient_map(&params, &image.map(|v| (v + 0.13 * k as f64).fract())).unwrap())
        .collect();
    let stats = fit_pixel_stats(maps.iter(), 1e-8).unwrap();
    let a = score_image(&params, Some(&stats), &image, NormOrder::L2).unwrap();
    let b = score_image(&params, Some(&stats), &image, NormOrder::L2).unwrap();
    assert_eq!(a.energy.value, b.energy.value);
    assert_eq!(a.raw_map.values, b.raw_map.values);
    assert_eq!(a.energy.value, params.forward_energy(&image).unwrap());
    let g = gradient_map(&params, &image).unwrap();
    assert_eq!(
        a.raw,
        image_score(&g, NormOrder::L2, ScoreKind::Raw).unwrap()
    );
    let l = standardize(&g, &stats).unwrap();
    assert_eq!(
        a.standardized.unwrap(),
        image_score(&l, NormOrder::L2, ScoreKind::Standardized).unwrap()
    );
}

#[test]
fn stats_file_round_trip_is_bit_exact() {
    let maps = random_maps(10, &[4, 3, 3], 6);
    let stats = fit_pixel_stats(maps.iter(), 1e-8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.bin");
    stats.save(&path).unwrap();
    let loaded = PixelStats::load(&path).unwrap();
    assert_eq!(loaded, stats);
    assert_eq!(&std::fs::read(&path).unwrap()[..8], b"EBMSTAT1");
}

fn map_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..6, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(h, w, c)| {
        (
            Just(h),
            Just(w),
            Just(c),
            prop::collection::vec(-1e3f64..1e3, h * w * c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn image_score_is_flattened_norm((h, w, c, data) in map_strategy(), r in prop::sample::select(vec![1u32, 2])) {
        let map = GradientMap::new(Tensor::new(vec![h, w, c], data.clone()).unwrap(), "").unwrap();
        let order = NormOrder::try_from(r).unwrap();
        let score = image_score(&map, order, ScoreKind::Raw).unwrap().value;
        let flat = match order {
            NormOrder::L1 => data.iter().map(|v| v.abs()).sum::<f64>(),
            NormOrder::L2 => data.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        prop_assert!(close(score, flat, 1e-12) || (score == 0.0 && flat == 0.0), "{score} vs {flat}");
    }

    #[test]
    fn l1_dominates_l2_and_scores_are_nonnegative((h, w, c, data) in map_strategy()) {
        let map = GradientMap::new(Tensor::new(vec![h, w, c], data).unwrap(), "").unwrap();
        let l1 = pixel_scores(&map, NormOrder::L1, ScoreKind::Raw).unwrap();
        let l2 = pixel_scores(&map, NormOrder::L2, ScoreKind::Raw).unwrap();
        for (a, b) in l1.values.data().iter().zip(l2.values.data()) {
            prop_assert!(*b >= 0.0);
            prop_assert!(*a >= *b * (1.0 - 1e-12));
        }
        prop_assert!(aggregate(&l1).value >= 0.0);
    }
}
