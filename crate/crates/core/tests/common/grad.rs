//! Finite-difference gradient oracle.
//!
//! The loss used here is recomputed from the network's output probabilities
//! (`-ln p_y`), not from the trainer's logit-space loss.

use coln::data::Dataset;
use coln::model::{Activation, ArchitectureDescriptor, LayerSpec, ParameterSet};
use coln::rng::SeededRng;
use coln::trainer::{forward, init_params, loss_and_gradient, Loss, TrainConfig};
use ndarray::Array2;

pub const STEP: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-5;

pub fn oracle_loss(params: &ParameterSet, data: &Dataset, config: &TrainConfig) -> f64 {
    let out = forward(params, data.features()).unwrap();
    let n = data.n_samples() as f64;
    let data_term: f64 = out
        .rows()
        .into_iter()
        .zip(data.labels())
        .map(|(row, &y)| {
            let p = if row.len() == 1 {
                if y == 1 {
                    row[0]
                } else {
                    1.0 - row[0]
                }
            } else {
                row[y]
            };
            -p.ln()
        })
        .sum::<f64>()
        / n;
    let prox = match &config.reference_params {
        Some(r) if config.proximal_mu > 0.0 => {
            let sq: f64 = params
                .flatten()
                .iter()
                .zip(r.flatten())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            0.5 * config.proximal_mu * sq
        }
        _ => 0.0,
    };
    data_term + prox
}

pub fn finite_difference(params: &ParameterSet, data: &Dataset, config: &TrainConfig) -> Vec<f64> {
    let flat = params.flatten();
    (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += STEP;
            minus[i] -= STEP;
            let arch = params.architecture();
            let lp = oracle_loss(&ParameterSet::from_flat(arch, &plus).unwrap(), data, config);
            let lm = oracle_loss(&ParameterSet::from_flat(arch, &minus).unwrap(), data, config);
            (lp - lm) / (2.0 * STEP)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, 1e-4)`; the floor keeps the comparison meaningful
/// for coordinates whose gradient is at the finite-difference noise level.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub fn random_data(rng: &mut SeededRng, n: usize, features: usize, classes: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, features), |_| rng.uniform(-1.5, 1.5));
    let y = (0..n).map(|i| if i < classes { i } else { rng.below(classes) }).collect();
    Dataset::new(x, y, classes).unwrap()
}

pub fn max_error(params: &ParameterSet, data: &Dataset, config: &TrainConfig) -> f64 {
    let (_, grad) = loss_and_gradient(params, data, config).unwrap();
    let numeric = finite_difference(params, data, config);
    grad.flatten()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// A random net of at most three layers and at most 50 parameters, mixing
/// every activation (softmax included as a hidden layer) and bias flags, with
/// a matching batch of 16 samples and a loss config.
pub fn random_case(rng: &mut SeededRng) -> (ParameterSet, Dataset, TrainConfig) {
    let hidden = [
        Activation::Identity,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Softmax,
    ];
    loop {
        let depth = 1 + rng.below(3);
        let bce = rng.below(2) == 0;
        let classes = if bce { 2 } else { 2 + rng.below(2) };
        let out_dim = if bce { 1 } else { classes };
        let mut dims = vec![1 + rng.below(4)];
        for _ in 1..depth {
            dims.push(1 + rng.below(5));
        }
        dims.push(out_dim);
        let layers: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i == depth - 1;
                let act = match (last, bce) {
                    (true, true) => Activation::Sigmoid,
                    (true, false) => Activation::Softmax,
                    _ => hidden[rng.below(hidden.len())],
                };
                LayerSpec::new(format!("l{i}"), w[0], w[1], act, last || rng.below(3) > 0)
            })
            .collect();
        let arch = ArchitectureDescriptor::new(layers).unwrap();
        if arch.param_count() > 50 {
            continue;
        }
        let params = init_params(&arch, rng.next_u64());
        // Random non-zero biases so ReLU kinks are not hit at exactly zero.
        let flat: Vec<f64> = params
            .flatten()
            .iter()
            .map(|&v| if v == 0.0 { rng.uniform(-0.5, 0.5) } else { v })
            .collect();
        let params = ParameterSet::from_flat(&arch, &flat).unwrap();
        let data = random_data(rng, 16, dims[0], classes);
        let loss = if bce { Loss::Bce } else { Loss::SoftmaxCe };
        let mut config = TrainConfig::new(1, 16, 0.1, 0, loss);
        if rng.below(2) == 0 {
            config = config.with_proximal(rng.uniform(0.0, 1.0), init_params(&arch, rng.next_u64()));
        }
        return (params, data, config);
    }
}
