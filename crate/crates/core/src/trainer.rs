//! Minimal feed-forward network: forward pass, analytic backpropagation and
//! mini-batch SGD over a [`ParameterSet`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Activation, ArchitectureDescriptor, ParameterSet};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy on a single sigmoid output.
    Bce,
    /// Categorical cross-entropy on a softmax output.
    SoftmaxCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Weight of the proximal term `μ/2·‖w − w_ref‖²`; 0 disables it.
    #[serde(default)]
    pub proximal_mu: f64,
    #[serde(skip)]
    pub reference_params: Option<ParameterSet>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64, loss: Loss) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            seed,
            loss,
            proximal_mu: 0.0,
            reference_params: None,
        }
    }

    pub fn with_proximal(mut self, mu: f64, reference: ParameterSet) -> Self {
        self.proximal_mu = mu;
        self.reference_params = Some(reference);
        self
    }

    pub fn validate(&self, arch: &ArchitectureDescriptor) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !self.proximal_mu.is_finite() || self.proximal_mu < 0.0 {
            return Err(Error::config("proximal_mu must be finite and non-negative"));
        }
        if self.proximal_mu > 0.0 {
            match &self.reference_params {
                None => return Err(Error::config("proximal_mu > 0 requires reference_params")),
                Some(r) if r.architecture() != arch => {
                    return Err(Error::config("reference_params use a different architecture"))
                }
                Some(_) => {}
            }
        }
        match (self.loss, arch.output_activation(), arch.output_dim()) {
            (Loss::Bce, Activation::Sigmoid, 1) | (Loss::SoftmaxCe, Activation::Softmax, _) => Ok(()),
            (loss, act, dim) => Err(Error::config(format!(
                "loss {loss:?} does not fit a {act} head with {dim} outputs"
            ))),
        }
    }
}

/// Held-out evaluation of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    /// Accuracy over the samples of each class; 0 for classes with no samples.
    pub per_class_accuracy: Vec<f64>,
    pub per_class_support: Vec<usize>,
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases. Values
/// are drawn layer by layer in canonical order from one seeded stream.
pub fn init_params(arch: &ArchitectureDescriptor, seed: u64) -> ParameterSet {
    let mut rng = SeededRng::new(seed);
    let per_layer = arch
        .layers()
        .iter()
        .map(|layer| {
            let limit = (6.0 / (layer.input_dim + layer.output_dim) as f64).sqrt();
            let mut values: Vec<f64> = (0..layer.weight_count()).map(|_| rng.uniform(-limit, limit)).collect();
            values.resize(layer.param_count(), 0.0);
            values
        })
        .collect();
    ParameterSet::new(arch.clone(), per_layer).expect("initial values are finite")
}

/// Per-layer gradient with the same layout as a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub per_layer: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.per_layer.iter().flatten().copied().collect()
    }
}

struct LayerView<'a> {
    weights: ArrayView2<'a, f64>,
    bias: Option<&'a [f64]>,
    activation: Activation,
}

fn layer_views<'a>(arch: &'a ArchitectureDescriptor, layers: &'a [Vec<f64>]) -> Vec<LayerView<'a>> {
    arch.layers()
        .iter()
        .zip(layers)
        .map(|(spec, values)| {
            let (w, b) = values.split_at(spec.weight_count());
            LayerView {
                weights: ArrayView2::from_shape((spec.output_dim, spec.input_dim), w).expect("layer shape"),
                bias: spec.has_bias.then_some(b),
                activation: spec.activation,
            }
        })
        .collect()
}

fn activate(z: &mut Array2<f64>, activation: Activation) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pre-activations and activations of every layer; `activations[0]` is the input.
struct ForwardCache {
    pre: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
}

fn forward_cached(views: &[LayerView<'_>], input: ArrayView2<'_, f64>) -> ForwardCache {
    let mut pre = Vec::with_capacity(views.len());
    let mut activations = vec![input.to_owned()];
    for layer in views {
        let mut z = activations.last().unwrap().dot(&layer.weights.t());
        if let Some(b) = layer.bias {
            z += &ArrayView2::from_shape((1, b.len()), b).unwrap();
        }
        let mut a = z.clone();
        activate(&mut a, layer.activation);
        pre.push(z);
        activations.push(a);
    }
    ForwardCache { pre, activations }
}

fn check_input(arch: &ArchitectureDescriptor, features: &Array2<f64>) -> Result<()> {
    if features.ncols() != arch.input_dim() {
        return Err(Error::argument(format!(
            "model expects {} features, data has {}",
            arch.input_dim(),
            features.ncols()
        )));
    }
    Ok(())
}

/// Network outputs, one row per sample.
pub fn forward(params: &ParameterSet, features: &Array2<f64>) -> Result<Array2<f64>> {
    check_input(params.architecture(), features)?;
    let views = layer_views(params.architecture(), params.layers());
    Ok(forward_cached(&views, features.view()).activations.pop().unwrap())
}

/// Mean data loss from output-layer pre-activations (logits), computed in a
/// numerically stable form.
fn data_loss(logits: &Array2<f64>, labels: &[usize], loss: Loss) -> f64 {
    let n = labels.len() as f64;
    let total: f64 = match loss {
        Loss::Bce => logits
            .column(0)
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p())
            .sum(),
        Loss::SoftmaxCe => logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &y)| {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .sum(),
    };
    total / n
}

fn raw_loss_and_gradient(
    arch: &ArchitectureDescriptor,
    layers: &[Vec<f64>],
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> (f64, Vec<Vec<f64>>) {
    let views = layer_views(arch, layers);
    let cache = forward_cached(&views, features);
    let n = labels.len() as f64;
    let logits = cache.pre.last().unwrap();
    let output = cache.activations.last().unwrap();
    let mut loss = data_loss(logits, labels, config.loss);

    // For both losses the gradient at the logits is (prediction − target)/n.
    let mut delta = output.clone();
    match config.loss {
        Loss::Bce => {
            for (d, &y) in delta.column_mut(0).iter_mut().zip(labels) {
                *d -= y as f64;
            }
        }
        Loss::SoftmaxCe => {
            for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
                row[y] -= 1.0;
            }
        }
    }
    delta /= n;

    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); views.len()];
    for idx in (0..views.len()).rev() {
        let layer = &views[idx];
        let input = &cache.activations[idx];
        let grad_w = delta.t().dot(input);
        let mut g: Vec<f64> = grad_w.iter().copied().collect();
        if layer.bias.is_some() {
            g.extend(delta.sum_axis(Axis(0)).iter());
        }
        grads[idx] = g;
        if idx == 0 {
            break;
        }
        let upstream = delta.dot(&layer.weights);
        delta = activation_backward(upstream, &cache.pre[idx - 1], &cache.activations[idx], views[idx - 1].activation);
    }

    if config.proximal_mu > 0.0 {
        let reference = config.reference_params.as_ref().expect("validated");
        let mut prox = 0.0;
        for ((g, w), r) in grads.iter_mut().zip(layers).zip(reference.layers()) {
            for ((gi, wi), ri) in g.iter_mut().zip(w).zip(r) {
                let d = wi - ri;
                prox += d * d;
                *gi += config.proximal_mu * d;
            }
        }
        loss += 0.5 * config.proximal_mu * prox;
    }
    (loss, grads)
}

/// Multiplies the upstream gradient by the activation's Jacobian.
fn activation_backward(upstream: Array2<f64>, pre: &Array2<f64>, post: &Array2<f64>, activation: Activation) -> Array2<f64> {
    match activation {
        Activation::Identity => upstream,
        Activation::Relu => {
            let mut d = upstream;
            d.zip_mut_with(pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            d
        }
        Activation::Sigmoid => {
            let mut d = upstream;
            d.zip_mut_with(post, |g, &a| *g *= a * (1.0 - a));
            d
        }
        Activation::Tanh => {
            let mut d = upstream;
            d.zip_mut_with(post, |g, &a| *g *= 1.0 - a * a);
            d
        }
        Activation::Softmax => {
            let mut d = upstream;
            for (mut g, a) in d.rows_mut().into_iter().zip(post.rows()) {
                let dot: f64 = g.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                g.zip_mut_with(&a, |gi, &ai| *gi = ai * (*gi - dot));
            }
            d
        }
    }
}

/// Mean batch loss (plus the proximal term when enabled) and its gradient.
pub fn loss_and_gradient(params: &ParameterSet, batch: &Dataset, config: &TrainConfig) -> Result<(f64, Gradient)> {
    let arch = params.architecture();
    config.validate(arch)?;
    check_input(arch, batch.features())?;
    check_labels(arch, batch)?;
    let (loss, per_layer) = raw_loss_and_gradient(arch, params.layers(), batch.features().view(), batch.labels(), config);
    Ok((loss, Gradient { per_layer }))
}

fn check_labels(arch: &ArchitectureDescriptor, data: &Dataset) -> Result<()> {
    let classes = if arch.output_dim() == 1 { 2 } else { arch.output_dim() };
    if data.n_classes() > classes {
        return Err(Error::argument(format!(
            "data has {} classes but the model head distinguishes {classes}",
            data.n_classes()
        )));
    }
    Ok(())
}

/// Mini-batch SGD for `epochs × ⌈n/batch_size⌉` steps.
///
/// The sample order is a Fisher–Yates reshuffle of the previous epoch's order
/// (starting from `0..n`) drawn from a stream seeded with `config.seed`.
pub fn train(params: &ParameterSet, data: &Dataset, config: &TrainConfig) -> Result<ParameterSet> {
    let arch = params.architecture();
    config.validate(arch)?;
    check_input(arch, data.features())?;
    check_labels(arch, data)?;

    let mut layers: Vec<Vec<f64>> = params.layers().to_vec();
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let features = data.features().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let (loss, grads) = raw_loss_and_gradient(arch, &layers, features.view(), &labels, config);
            let diverged = || Error::Diverged {
                epoch,
                step,
                last_finite: Box::new(ParameterSet::new(arch.clone(), layers.clone()).expect("finite")),
            };
            if !loss.is_finite() {
                return Err(diverged());
            }
            let updated: Vec<Vec<f64>> = layers
                .iter()
                .zip(&grads)
                .map(|(w, g)| w.iter().zip(g).map(|(wi, gi)| wi - config.learning_rate * gi).collect())
                .collect();
            if updated.iter().flatten().any(|v| !v.is_finite()) {
                return Err(diverged());
            }
            layers = updated;
        }
    }
    ParameterSet::new(arch.clone(), layers)
}

/// Class predictions: argmax with ties to the lowest index; a single-output
/// head predicts class 1 only when its output exceeds 0.5.
pub fn predict(params: &ParameterSet, features: &Array2<f64>) -> Result<Vec<usize>> {
    let out = forward(params, features)?;
    Ok(predictions(&out))
}

fn predictions(out: &Array2<f64>) -> Vec<usize> {
    if out.ncols() == 1 {
        return out.column(0).iter().map(|&p| usize::from(p > 0.5)).collect();
    }
    out.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Accuracy, mean loss and per-class accuracy on `data`.
///
/// The loss treats the output-layer pre-activations as logits: binary
/// cross-entropy for a single output, softmax cross-entropy otherwise.
pub fn evaluate(params: &ParameterSet, data: &Dataset) -> Result<EvalReport> {
    let arch = params.architecture();
    check_input(arch, data.features())?;
    check_labels(arch, data)?;
    let views = layer_views(arch, params.layers());
    let cache = forward_cached(&views, data.features().view());
    let preds = predictions(cache.activations.last().unwrap());
    let loss_kind = if arch.output_dim() == 1 { Loss::Bce } else { Loss::SoftmaxCe };
    let loss = data_loss(cache.pre.last().unwrap(), data.labels(), loss_kind);

    let k = data.n_classes().max(if arch.output_dim() == 1 { 2 } else { arch.output_dim() });
    let mut hits = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(data.labels()) {
        support[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        accuracy: correct as f64 / data.n_samples() as f64,
        loss,
        per_class_accuracy: hits
            .iter()
            .zip(&support)
            .map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 })
            .collect(),
        per_class_support: support,
    })
}

/// Weight-size telemetry: mean absolute value of all parameters and the
/// population standard deviation of their raw values.
pub fn weight_stats(params: &ParameterSet) -> (f64, f64) {
    let flat = Array1::from(params.flatten());
    let n = flat.len() as f64;
    let mean_abs = flat.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean = flat.sum() / n;
    let std = (flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    (mean_abs, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_blobs;
    use crate::model::LayerSpec;

    fn small_net(seed: u64) -> ParameterSet {
        let arch = ArchitectureDescriptor::dense(&[3, 4, 2], Activation::Tanh, Activation::Softmax).unwrap();
        init_params(&arch, seed)
    }

    fn toy_data(n: usize, features: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        let x = Array2::from_shape_fn((n, features), |_| rng.uniform(-1.0, 1.0));
        let y = (0..n).map(|i| i % 2).collect();
        Dataset::new(x, y, 2).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = small_net(42);
        let b = small_net(42);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), small_net(43).digest());
        for l in 0..a.architecture().layer_count() {
            assert!(a.biases(l).iter().all(|&v| v == 0.0));
            let spec = &a.architecture().layers()[l];
            let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            assert!(a.weights(l).iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn init_mean_is_within_three_standard_errors() {
        // One 400×250 layer: 10⁵ weights uniform on ±√(6/650).
        let arch = ArchitectureDescriptor::dense(&[400, 250], Activation::Identity, Activation::Identity).unwrap();
        let p = init_params(&arch, 2024);
        let w = p.weights(0);
        assert_eq!(w.len(), 100_000);
        let limit = (6.0f64 / 650.0).sqrt();
        let se = limit / 3f64.sqrt() / (w.len() as f64).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3σ {}", 3.0 * se);
    }

    #[test]
    fn zero_params_sigmoid_gives_half() {
        let arch = ArchitectureDescriptor::dense(&[4, 3, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        let p = ParameterSet::zeros(&arch);
        let x = toy_data(10, 4, 1);
        let out = forward(&p, x.features()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = ArchitectureDescriptor::new(vec![LayerSpec::new("id", 3, 3, Activation::Identity, false)]).unwrap();
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let p = ParameterSet::new(arch, vec![eye]).unwrap();
        let x = toy_data(5, 3, 2);
        assert_eq!(&forward(&p, x.features()).unwrap(), x.features());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = small_net(9);
        let x = toy_data(32, 3, 3);
        for row in forward(&p, x.features()).unwrap().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = small_net(1);
        assert!(matches!(forward(&p, toy_data(2, 5, 0).features()), Err(Error::Argument(_))));
    }

    #[test]
    fn proximal_requires_reference() {
        let p = small_net(1);
        let mut cfg = TrainConfig::new(1, 4, 0.1, 0, Loss::SoftmaxCe);
        cfg.proximal_mu = 0.5;
        assert!(matches!(loss_and_gradient(&p, &toy_data(4, 3, 0), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn proximal_zero_matches_plain_gradient_and_vanishes_at_reference() {
        let p = small_net(5);
        let data = toy_data(16, 3, 5);
        let plain = TrainConfig::new(1, 16, 0.1, 0, Loss::SoftmaxCe);
        let (l0, g0) = loss_and_gradient(&p, &data, &plain).unwrap();
        let mut zero_mu = plain.clone().with_proximal(0.0, small_net(6));
        zero_mu.proximal_mu = 0.0;
        let (l1, g1) = loss_and_gradient(&p, &data, &zero_mu).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
        let at_ref = plain.clone().with_proximal(3.0, p.clone());
        let (l2, g2) = loss_and_gradient(&p, &data, &at_ref).unwrap();
        assert_eq!(l0, l2);
        assert_eq!(g0, g2);
    }

    #[test]
    fn mismatched_loss_and_head_is_a_config_error() {
        let p = small_net(1);
        let cfg = TrainConfig::new(1, 4, 0.1, 0, Loss::Bce);
        assert!(matches!(train(&p, &toy_data(4, 3, 0), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let p = small_net(3);
        let cfg = TrainConfig::new(5, 3, 0.0, 8, Loss::SoftmaxCe);
        assert_eq!(train(&p, &toy_data(20, 3, 1), &cfg).unwrap(), p);
    }

    #[test]
    fn training_is_deterministic() {
        let p = small_net(3);
        let data = toy_data(37, 3, 4);
        let cfg = TrainConfig::new(4, 5, 0.3, 99, Loss::SoftmaxCe);
        let a = train(&p, &data, &cfg).unwrap();
        let b = train(&p, &data, &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), p.digest());
        let other_seed = TrainConfig { seed: 100, ..cfg };
        assert_ne!(train(&p, &data, &other_seed).unwrap().digest(), a.digest());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = synth_gaussian_blobs(200, 2, 6.0, 17).unwrap();
        let arch = ArchitectureDescriptor::dense(&[2, 8, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        let p = init_params(&arch, 1);
        let cfg = TrainConfig::new(50, 16, 0.1, 2, Loss::Bce);
        let trained = train(&p, &data, &cfg).unwrap();
        assert!(evaluate(&trained, &data).unwrap().accuracy >= 0.99);
    }

    #[test]
    fn divergence_reports_last_finite_params() {
        let data = synth_gaussian_blobs(50, 2, 2.0, 3).unwrap();
        let arch = ArchitectureDescriptor::dense(&[2, 16, 16, 1], Activation::Identity, Activation::Sigmoid).unwrap();
        let p = init_params(&arch, 1);
        let cfg = TrainConfig::new(200, 100, 1e6, 2, Loss::Bce);
        match train(&p, &data, &cfg) {
            Err(Error::Diverged { last_finite, .. }) => {
                assert!(last_finite.flatten().iter().all(|v| v.is_finite()))
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn proximal_term_keeps_weights_close_to_reference() {
        let data = synth_gaussian_blobs(100, 2, 3.0, 5).unwrap();
        let arch = ArchitectureDescriptor::dense(&[2, 6, 1], Activation::Tanh, Activation::Sigmoid).unwrap();
        let reference = init_params(&arch, 8);
        // lr·μ = 1 keeps the explicit proximal step stable.
        let free = TrainConfig::new(10, 10, 1e-6, 4, Loss::Bce);
        let anchored = free.clone().with_proximal(1e6, reference.clone());
        let a = train(&reference, &data, &free).unwrap();
        let b = train(&reference, &data, &anchored).unwrap();
        assert!(b.l2_distance(&reference) < a.l2_distance(&reference));
    }

    #[test]
    fn zero_params_on_balanced_set_score_half() {
        let arch = ArchitectureDescriptor::dense(&[3, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        let report = evaluate(&ParameterSet::zeros(&arch), &toy_data(40, 3, 7)).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.per_class_accuracy, vec![1.0, 0.0]);

        let softmax = ArchitectureDescriptor::dense(&[3, 2], Activation::Relu, Activation::Softmax).unwrap();
        let report = evaluate(&ParameterSet::zeros(&softmax), &toy_data(40, 3, 7)).unwrap();
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn memorized_training_set_scores_one() {
        let data = synth_gaussian_blobs(30, 2, 5.0, 21).unwrap();
        let arch = ArchitectureDescriptor::dense(&[2, 16, 2], Activation::Tanh, Activation::Softmax).unwrap();
        let cfg = TrainConfig::new(300, 8, 0.1, 5, Loss::SoftmaxCe);
        let trained = train(&init_params(&arch, 3), &data, &cfg).unwrap();
        let report = evaluate(&trained, &data).unwrap();
        assert_eq!(report.accuracy, 1.0);
        let mean_class = report.per_class_accuracy.iter().sum::<f64>() / 2.0;
        assert!((mean_class - report.accuracy).abs() < 1e-12);
    }

    #[test]
    fn weight_stats_of_known_values() {
        let arch = ArchitectureDescriptor::dense(&[1, 2], Activation::Identity, Activation::Identity).unwrap();
        let p = ParameterSet::new(arch, vec![vec![1.0, -1.0, 3.0, -3.0]]).unwrap();
        let (mean_abs, std) = weight_stats(&p);
        assert_eq!(mean_abs, 2.0);
        assert!((std - 5f64.sqrt()).abs() < 1e-15);
    }
}
