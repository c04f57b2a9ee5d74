//! Stability sweep over SGLD step size and learning rate on the synthetic
//! dataset. Prints one CSV row per setting.
//!
//! cargo run --release --example tuning_sweep -- --epochs 3

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ebm_anomaly::data::{synthesize, SampleSet, SyntheticSample, SyntheticSpec};
use ebm_anomaly::eval::{image_level_eval, pixel_level_eval, Mask};
use ebm_anomaly::nn::NetworkTopology;
use ebm_anomaly::sampler::{init_chain, SamplerConfig};
use ebm_anomaly::scoring::{fit_pixel_stats, gradient_map, score_image, NormOrder, ScoreKind};
use ebm_anomaly::trainer::{fit, TrainConfig};
use ebm_anomaly::{EbmError, Tensor};

#[derive(Parser)]
struct Args {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.001,0.003,0.01,0.03,0.1"
    )]
    step_sizes: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001")]
    learning_rates: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    base_width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn tensor(s: &SyntheticSample) -> Tensor {
    Tensor::new(
        vec![s.size, s.size, 1],
        s.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .unwrap()
}

fn main() -> Result<(), EbmError> {
    let args = Args::parse();
    let spec = SyntheticSpec::default();
    let n = spec.image_size;
    let train: Vec<Tensor> = (0..spec.train_count)
        .map(|i| tensor(&synthesize(&spec, SampleSet::Train, i)))
        .collect();
    let good: Vec<SyntheticSample> = (0..spec.test_good_count)
        .map(|i| synthesize(&spec, SampleSet::TestGood, i))
        .collect();
    let bad: Vec<SyntheticSample> = (0..spec.test_defect_count)
        .map(|i| synthesize(&spec, SampleSet::TestDefect, i))
        .collect();
    let topology = NetworkTopology::for_input_size(n, 1, args.base_width)?;

    println!("step_size,learning_rate,status,pos_energy,neg_energy,good_energy,noise_energy,image_auroc_std,pixel_auroc_std,pixel_auroc_raw,seconds");
    for &lr in &args.learning_rates {
        for &step in &args.step_sizes {
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs: args.epochs,
                seed: args.seed,
                ..Default::default()
            };
            let sampler = SamplerConfig {
                step_size: step,
                ..Default::default()
            };
            let (params, history) = match fit(&train, &topology, &cfg, &sampler) {
                Ok(r) => r,
                Err(e) => {
                    println!("{step},{lr},{},,,,,,,,", e.kind());
                    continue;
                }
            };
            let last = history.records.last().unwrap();
            let maps: Vec<_> = train
                .iter()
                .map(|x| gradient_map(&params, x))
                .collect::<Result<_, _>>()?;
            let stats = fit_pixel_stats(maps.iter(), 1e-8)?;

            let mut image_scores = Vec::new();
            let mut labels = Vec::new();
            let (mut std_maps, mut raw_maps, mut masks) = (Vec::new(), Vec::new(), Vec::new());
            let mut good_energy = 0.0;
            for s in good.iter().chain(&bad) {
                let scores = score_image(&params, Some(&stats), &tensor(s), NormOrder::L2)?;
                if s.mask.is_none() {
                    good_energy += scores.energy.value / good.len() as f64;
                }
                image_scores.push(scores.all());
                labels.push(s.mask.is_some());
                masks.push(
                    s.mask
                        .clone()
                        .map_or_else(|| Mask::empty(n, n), |m| Mask::new(n, n, m)),
                );
                std_maps.push(scores.standardized_map.unwrap());
                raw_maps.push(scores.raw_map);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
            let noise_energy = (0..good.len())
                .map(|_| {
                    ebm_anomaly::nn::forward_energy(
                        &params,
                        &init_chain(&mut rng, &[n, n, 1], &sampler),
                    )
                })
                .sum::<Result<f64, _>>()?
                / good.len() as f64;
            let image = image_level_eval(&image_scores, &labels)?;
            println!(
                "{step},{lr},ok,{:.4},{:.4},{good_energy:.4},{noise_energy:.4},{:.4},{:.4},{:.4},{:.1}",
                last.pos_energy,
                last.neg_energy,
                image[&ScoreKind::Standardized],
                pixel_level_eval(&std_maps, &masks)?,
                pixel_level_eval(&raw_maps, &masks)?,
                last.seconds
            );
        }
    }
    Ok(())
}
