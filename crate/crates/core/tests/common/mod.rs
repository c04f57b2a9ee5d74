//! Test-side oracles shared by the integration suites.
#![allow(dead_code)]

use ebm_anomaly::nn::{
    Activation, ConvLayerSpec, EluActivation, LayerParams, ModelParams, NetworkTopology,
};
use ebm_anomaly::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct nested-loop evaluation of the network on an HWC image.
pub fn naive_energy(params: &ModelParams, image: &Tensor) -> f64 {
    naive_forward(params, image).0
}

/// Energy and the smallest |pre-activation| over ELU units whose alpha is
/// not 1, where the derivative jumps and central differences are invalid.
pub fn naive_forward(params: &ModelParams, image: &Tensor) -> (f64, f64) {
    let mut kink = f64::INFINITY;
    let (mut h, mut w, mut c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    // act[y][x][ch]
    let mut act: Vec<f64> = image.data().to_vec();
    for (spec, p) in params.topology().layers().iter().zip(params.layers()) {
        let (kh, kw) = spec.kernel;
        let (s, pad) = (spec.stride as i64, spec.padding as i64);
        let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
        let ow = (w + 2 * spec.padding - kw) / spec.stride + 1;
        let mut out = vec![0.0; oh * ow * spec.f_out];
        for o in 0..spec.f_out {
            for y in 0..oh {
                for x in 0..ow {
                    let mut sum = p.bias.data()[o];
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as i64 * s + ky as i64 - pad;
                                let ix = x as i64 * s + kx as i64 - pad;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let wv = p.weight.data()[((o * c + i) * kh + ky) * kw + kx];
                                sum += wv * act[(iy as usize * w + ix as usize) * c + i];
                            }
                        }
                    }
                    out[(y * ow + x) * spec.f_out + o] = match spec.activation {
                        Activation::Identity => sum,
                        Activation::Elu(e) => {
                            if e.alpha != 1.0 {
                                kink = kink.min(sum.abs());
                            }
                            if sum > 0.0 {
                                sum
                            } else {
                                e.alpha * (sum.exp() - 1.0)
                            }
                        }
                    };
                }
            }
        }
        act = out;
        h = oh;
        w = ow;
        c = spec.f_out;
    }
    assert_eq!(act.len(), 1);
    (act[0], kink)
}

/// A random small network: 1–3 hidden ELU layers with random kernel,
/// stride and padding, closed by a full-extent identity layer.
pub fn random_network(seed: u64) -> (ModelParams, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_c = if rng.random_bool(0.5) { 1 } else { 3 };
    let size = rng.random_range(5..=9);
    let (mut h, mut w) = (size, size);
    let mut f_in = n_c;
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let k = rng.random_range(1..=3usize);
        let pad = rng.random_range(0..k);
        let stride = rng.random_range(1..=2);
        let f_out = rng.random_range(1..=4);
        let alpha = [1.0, 0.5, 1.7][rng.random_range(0..3)];
        let spec = ConvLayerSpec::new(
            k,
            stride,
            pad,
            f_in,
            f_out,
            Activation::Elu(EluActivation { alpha }),
        );
        let Some((oh, ow)) = spec.output_size(h, w) else {
            break;
        };
        layers.push(spec);
        h = oh;
        w = ow;
        f_in = f_out;
    }
    layers.push(ConvLayerSpec {
        kernel: (h, w),
        stride: 1,
        padding: 0,
        f_in,
        f_out: 1,
        activation: Activation::Identity,
    });
    let topology = NetworkTopology::new(layers).unwrap();
    let layers = topology
        .layers()
        .iter()
        .map(|spec| {
            let bound = 1.5 * (3.0 / spec.fan_in() as f64).sqrt();
            let weight = Tensor::from_fn(spec.weight_shape(), |_| rng.random_range(-bound..bound));
            let bias = Tensor::from_fn(vec![spec.f_out], |_| rng.random_range(-0.3..0.3));
            LayerParams { weight, bias }
        })
        .collect();
    let params = ModelParams::new(topology, layers).unwrap();
    // Redraw inputs that put a unit next to a derivative jump.
    for _ in 0..1000 {
        let image = Tensor::from_fn(vec![size, size, n_c], |_| rng.random_range(0.0..1.0));
        if naive_forward(&params, &image).1 >= KINK_MARGIN {
            return (params, image);
        }
    }
    panic!("seed {seed}: no input clear of the ELU kinks");
}

pub const FD_EPS: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor of the relative error: components whose analytic and
/// numeric values are both below it are compared absolutely against
/// `tol · floor`.
pub const FD_FLOOR: f64 = 1e-7;

pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(FD_FLOOR)
}

/// Worst relative error of input and parameter gradients against central
/// differences.
pub fn fd_check(params: &ModelParams, image: &Tensor) -> (f64, f64) {
    let energy = |p: &ModelParams, x: &Tensor| p.forward_energy(x).unwrap();
    let analytic_x = params.input_gradient(image).unwrap();
    let mut worst_x: f64 = 0.0;
    let mut x = image.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        x.data_mut()[i] = v + FD_EPS;
        let up = energy(params, &x);
        x.data_mut()[i] = v - FD_EPS;
        let down = energy(params, &x);
        x.data_mut()[i] = v;
        worst_x = worst_x.max(rel_err(analytic_x.data()[i], (up - down) / (2.0 * FD_EPS)));
    }

    let analytic_p = params.param_gradient(std::slice::from_ref(image)).unwrap();
    let mut worst_p: f64 = 0.0;
    let mut p = params.clone();
    for l in 0..p.layers().len() {
        for which in 0..2 {
            let n = if which == 0 {
                p.layers()[l].weight.len()
            } else {
                p.layers()[l].bias.len()
            };
            for k in 0..n {
                let v = *slot(&mut p, l, which, k);
                *slot(&mut p, l, which, k) = v + FD_EPS;
                let up = energy(&p, image);
                *slot(&mut p, l, which, k) = v - FD_EPS;
                let down = energy(&p, image);
                *slot(&mut p, l, which, k) = v;
                let g = &analytic_p.layers()[l];
                let a = if which == 0 {
                    g.weight.data()[k]
                } else {
                    g.bias.data()[k]
                };
                worst_p = worst_p.max(rel_err(a, (up - down) / (2.0 * FD_EPS)));
            }
        }
    }
    (worst_x, worst_p)
}

fn slot(p: &mut ModelParams, layer: usize, which: usize, k: usize) -> &mut f64 {
    let layer = &mut p.layers_mut()[layer];
    if which == 0 {
        &mut layer.weight.data_mut()[k]
    } else {
        &mut layer.bias.data_mut()[k]
    }
}

/// O(n²) pair counting: (2·wins + ties) / (2·n_pos·n_neg).
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut np, mut nn) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            np += 1
        } else {
            nn += 1
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * np * nn) as f64
}

/// Two-pass population mean and std per element.
pub fn two_pass_moments(samples: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let len = samples[0].len();
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
}
