use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scdrl_core::ref_network::{
    NetworkSpec, OutputActivation, SeedBlock, TrainConfig, WeightFile, WeightSet,
};
use scdrl_core::sc_network::{ScConfig, ScNetwork};
use scdrl_core::sc_units::ApcVariant;

/// Every network shape the engine trains.
const SHAPES: [&[usize]; 5] = [&[3, 4, 1], &[26, 30, 1], &[26, 26, 1], &[20, 16, 1], &[18, 16, 1]];

fn batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<(Vec<f64>, f64)> {
    (0..size)
        .map(|_| {
            let x = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            (x, rng.gen_range(-1.0..=0.0))
        })
        .collect()
}

fn params_mut(ws: &mut WeightSet) -> Vec<&mut f64> {
    ws.layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
        .collect()
}

fn params(ws: &WeightSet) -> Vec<f64> {
    ws.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

fn max_relative_gradient_error(ws: &WeightSet, data: &[(Vec<f64>, f64)]) -> f64 {
    let (_, grad) = ws.loss_and_gradient(data).unwrap();
    let analytic = params(&grad);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = ws.clone();
        *params_mut(&mut plus)[k] += h;
        let mut minus = ws.clone();
        *params_mut(&mut minus)[k] -= h;
        let numeric = (plus.loss(data).unwrap() - minus.loss(data).unwrap()) / (2.0 * h);
        // relative error with a floor for entries that are zero up to rounding
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for widths in SHAPES {
        for bias in [false, true] {
            for output in [OutputActivation::Tanh, OutputActivation::Linear] {
                let spec = NetworkSpec::new(widths).with_bias(bias).with_output(output);
                let ws = WeightSet::random(&spec, &mut rng).unwrap();
                let data = batch(&mut rng, widths[0], 8);
                let err = max_relative_gradient_error(&ws, &data);
                assert!(err <= 1e-4, "{widths:?} bias {bias} {output:?}: {err}");
            }
        }
    }
}

#[test]
fn forward_matches_explicit_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for widths in SHAPES {
        let spec = NetworkSpec::new(widths).with_bias(true);
        let ws = WeightSet::random(&spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut act = x.clone();
        for layer in &ws.layers {
            act = (0..layer.outputs)
                .map(|o| {
                    let z: f64 = (0..layer.inputs).map(|i| layer.weight(o, i) * act[i]).sum();
                    (z + layer.bias[o]).tanh()
                })
                .collect();
        }
        let got = ws.forward(&x).unwrap();
        assert!((got - act[0]).abs() < 1e-12, "{widths:?}");
    }
}

#[test]
fn training_reduces_mse_tenfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let teacher = WeightSet::random(&NetworkSpec::new(&[3, 4, 1]).with_bias(true), &mut rng).unwrap();
    let data: Vec<(Vec<f64>, f64)> = (0..500)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let y = teacher.forward(&x).unwrap() - 0.4;
            (x, y)
        })
        .collect();
    let mut student = WeightSet::random(&NetworkSpec::new(&[3, 4, 1]).with_bias(true), &mut rng).unwrap();
    let before = student.loss(&data).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 16,
        epochs: 200,
        ..TrainConfig::default()
    };
    let after = student.fit(&data, &cfg, &mut rng).unwrap();
    assert!(after * 10.0 <= before, "{before} -> {after}");
}

#[test]
fn sc_error_shrinks_with_stream_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ws = WeightSet::random(&NetworkSpec::new(&[6, 5, 1]).with_bias(true), &mut rng).unwrap();
    let inputs: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let mean_err = |len: usize| {
        let net = ScNetwork::build(&ws, ScConfig::new(len, 17)).unwrap();
        inputs
            .iter()
            .map(|x| (net.forward_values(x).unwrap()[0] - ws.forward(x).unwrap()).abs())
            .sum::<f64>()
            / inputs.len() as f64
    };
    let (short, long) = (mean_err(128), mean_err(8192));
    assert!(long < short, "{short} {long}");
    assert!(long < 0.06, "{long}");
}

#[test]
fn sc_apc_variants_all_build_and_agree_roughly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ws = WeightSet::random(&NetworkSpec::new(&[26, 30, 1]).with_bias(true), &mut rng).unwrap();
    let x: Vec<f64> = (0..26).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let exact = ws.forward(&x).unwrap();
    for apc in [ApcVariant::Original, ApcVariant::Improved, ApcVariant::Exact] {
        let cfg = ScConfig {
            apc,
            ..ScConfig::new(4096, 8)
        };
        let q = ScNetwork::build(&ws, cfg).unwrap().forward_values(&x).unwrap()[0];
        assert!((q - exact).abs() < 0.35, "{apc}: {q} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_files_round_trip_exactly(
        seed in any::<u64>(),
        hidden in 1usize..12,
        inputs in 1usize..30,
        bias in any::<bool>(),
        root in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ws = WeightSet::random(&NetworkSpec::new(&[inputs, hidden, 1]).with_bias(bias), &mut rng).unwrap();
        let file = WeightFile::from_weights(&ws, SeedBlock { root }).unwrap();
        let back = WeightFile::from_json(&file.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.seeds.root, root);
        prop_assert_eq!(back.to_weights().unwrap(), ws);
    }

    #[test]
    fn outputs_stay_in_tanh_range(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = WeightSet::random(&NetworkSpec::new(&[5, 4, 1]).with_bias(true), &mut rng).unwrap();
        for p in params_mut(&mut ws) {
            *p *= scale;
        }
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let y = ws.forward(&x).unwrap();
        prop_assert!((-1.0..=1.0).contains(&y));
    }
}
