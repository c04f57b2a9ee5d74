mod common;

use common::{fd_check, naive_energy, random_network};
use ebm_anomaly::nn::{
    forward_energy, init_params, input_gradient, InitScheme, ModelParams, NetworkTopology,
};
use ebm_anomaly::scoring::gradient_map;
use ebm_anomaly::Tensor;

#[test]
fn im2col_engine_matches_direct_convolution() {
    for seed in 0..40 {
        let (params, image) = random_network(seed);
        let fast = forward_energy(&params, &image).unwrap();
        let slow = naive_energy(&params, &image);
        assert!(
            (fast - slow).abs() <= 1e-10 * slow.abs().max(1.0),
            "seed {seed}: {fast} vs {slow}"
        );
    }
}

#[test]
fn reduced_topology_matches_direct_convolution() {
    let t = NetworkTopology::for_input_size(32, 3, 4).unwrap();
    let mut p = init_params(&t, 3, InitScheme::default());
    for layer in p.layers_mut() {
        for (i, b) in layer.bias.data_mut().iter_mut().enumerate() {
            *b = 0.05 * (i as f64 - 1.5);
        }
    }
    let x = Tensor::from_fn(vec![32, 32, 3], |i| ((i * 7) % 31) as f64 / 31.0);
    let fast = forward_energy(&p, &x).unwrap();
    let slow = naive_energy(&p, &x);
    assert!(
        (fast - slow).abs() <= 1e-10 * slow.abs().max(1.0),
        "{fast} vs {slow}"
    );
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 1000..1030 {
        let (params, image) = random_network(seed);
        let (ex, ep) = fd_check(&params, &image);
        assert!(
            ex <= 1e-4 && ep <= 1e-4,
            "seed {seed}: input {ex:e}, params {ep:e}"
        );
    }
}

#[test]
fn canonical_output_is_scalar() {
    let t = NetworkTopology::canonical(3).unwrap();
    let p = init_params(&t, 0, InitScheme::default());
    let x = Tensor::filled(vec![128, 128, 3], 0.5);
    assert!(forward_energy(&p, &x).unwrap().is_finite());
    assert_eq!(input_gradient(&p, &x).unwrap().shape(), &[128, 128, 3]);
}

#[test]
fn init_variance_matches_target() {
    let t = NetworkTopology::canonical(3).unwrap();
    for scheme in [
        InitScheme::FanInUniform { gain: 1.0 },
        InitScheme::FanInNormal { gain: 1.0 },
    ] {
        let p = init_params(&t, 9, scheme);
        // the 128→256 layer and the 256→1 layer
        for (spec, layer) in t
            .layers()
            .iter()
            .zip(p.layers())
            .filter(|(s, _)| s.f_in == 256 || s.f_out == 256)
        {
            let w = layer.weight.data();
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let target = scheme.target_variance(spec.fan_in());
            assert!(
                (var / target - 1.0).abs() < 0.1,
                "{scheme:?}: {var} vs {target}"
            );
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        }
    }
}

#[test]
fn init_and_forward_are_deterministic() {
    let t = NetworkTopology::reduced(1).unwrap();
    let a = init_params(&t, 5, InitScheme::default());
    let b = init_params(&t, 5, InitScheme::default());
    assert_eq!(a, b);
    assert_ne!(a, init_params(&t, 6, InitScheme::default()));
    let x = Tensor::from_fn(vec![32, 32, 1], |i| (i % 13) as f64 / 13.0);
    assert_eq!(
        forward_energy(&a, &x).unwrap().to_bits(),
        forward_energy(&a, &x).unwrap().to_bits()
    );
    assert_eq!(
        input_gradient(&a, &x).unwrap(),
        input_gradient(&a, &x).unwrap()
    );
}

#[test]
fn gradient_map_is_exact_negation() {
    let (params, image) = random_network(77);
    let g = gradient_map(&params, &image).unwrap();
    let d = input_gradient(&params, &image).unwrap();
    for (a, b) in g.values.data().iter().zip(d.data()) {
        assert_eq!(a.to_bits(), (-b).to_bits());
    }
}

#[test]
fn constant_network_has_zero_input_gradient() {
    let (params, image) = random_network(4);
    let mut zeroed = params.clone();
    for layer in zeroed.layers_mut() {
        layer.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
    }
    let g = input_gradient(&zeroed, &image).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
    let _: &ModelParams = &zeroed;
}

#[test]
fn shape_errors_name_the_layer() {
    let t = NetworkTopology::reduced(1).unwrap();
    let p = init_params(&t, 0, InitScheme::default());
    let err = forward_energy(&p, &Tensor::zeros(vec![16, 16, 1])).unwrap_err();
    assert!(err.to_string().contains("layer"), "{err}");
    let err = forward_energy(&p, &Tensor::zeros(vec![32, 32, 3])).unwrap_err();
    assert!(err.to_string().contains("layer 0"), "{err}");
}
