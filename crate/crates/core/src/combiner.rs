//! Model combination: the exponential linear combiner with distance-gated
//! shifts, plus size-weighted (FedAvg) and unweighted averaging baselines.
//!
//! For host `h` with relative corpus size `r_h` the combined value of weight
//! `i` in layer `ℓ` is
//!
//! ```text
//! w̄[i,ℓ] = Σ_h e^{c·r_h} · w_h[i,ℓ] + β[i,ℓ]
//! β[i,ℓ] = WeightDistance(i,ℓ)  if WeightDistance(i,ℓ) < LayerDistance(ℓ), else 0
//! WeightDistance(i,ℓ) = √( Σ_{j<k} (w_j[i,ℓ]·r_j − w_k[i,ℓ]·r_k)² )
//! LayerDistance(ℓ)    = √( Σ_i Σ_{j<k} (w_j[i,ℓ] − w_k[i,ℓ])² ) / M_ℓ
//! ```
//!
//! The coefficients are not convex: with `c > 0` they sum to more than one,
//! so identical submissions `w` from `H` equal-sized hosts combine to
//! `H·e^{c/H}·w`.
//!
//! Submissions are sorted by `host_id` before any arithmetic, and every sum
//! over hosts runs in that order, so results are bit-identical under any
//! permutation of the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_same_architecture, HostSubmission, ParameterSet};

pub const RECOMMENDED_RATE_RANGE: (f64, f64) = (1e-6, 1e-3);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Coln,
    Fedavg,
    PlainAverage,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Coln => "coln",
            Strategy::Fedavg => "fedavg",
            Strategy::PlainAverage => "plain_average",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSchedule {
    /// Use `c` in every round.
    #[default]
    Constant,
    /// `c = +1` in odd combination rounds, `-1` in even ones.
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombineConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub rate_schedule: RateSchedule,
    #[serde(default = "default_rate")]
    pub c: f64,
    #[serde(default = "default_true")]
    pub shift_enabled: bool,
    /// Give β the sign of the α-weighted sum instead of always adding it.
    #[serde(default)]
    pub signed_shift: bool,
}

fn default_rate() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

impl Default for CombineConfig {
    fn default() -> Self {
        Self::coln(default_rate())
    }
}

impl CombineConfig {
    pub fn coln(c: f64) -> Self {
        Self {
            strategy: Strategy::Coln,
            rate_schedule: RateSchedule::Constant,
            c,
            shift_enabled: true,
            signed_shift: false,
        }
    }

    pub fn alternating() -> Self {
        Self {
            rate_schedule: RateSchedule::Alternating,
            ..Self::coln(1.0)
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::config(format!("combination rate c = {} is not finite", self.c)));
        }
        Ok(())
    }

    /// True when a constant rate lies outside `[1e-6, 1e-3]`. Such values are
    /// accepted but are known to make weights grow quickly.
    pub fn rate_warning(&self) -> bool {
        self.rate_schedule == RateSchedule::Constant
            && !(RECOMMENDED_RATE_RANGE.0..=RECOMMENDED_RATE_RANGE.1).contains(&self.c)
    }

    /// Combination rate for combination round `round` (the first is round 1).
    pub fn rate_for_round(&self, round: u64) -> f64 {
        match self.rate_schedule {
            RateSchedule::Constant => self.c,
            RateSchedule::Alternating => {
                if round % 2 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per-layer diagnostics of one combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub layer_distances: Vec<f64>,
    pub weight_distance_stats: Vec<DistanceStats>,
    /// Fraction of each layer's weights that received a non-zero shift.
    pub shifted_fraction: Vec<f64>,
}

/// `r_h = T_h / Σ T`.
pub fn relative_sizes(corpus_sizes: &[u64]) -> Result<Vec<f64>> {
    if corpus_sizes.is_empty() {
        return Err(Error::argument("no corpus sizes"));
    }
    if corpus_sizes.contains(&0) {
        return Err(Error::argument("corpus sizes must be positive"));
    }
    let total = corpus_sizes
        .iter()
        .try_fold(0u64, |acc, &t| acc.checked_add(t))
        .ok_or_else(|| Error::argument("corpus sizes overflow"))? as f64;
    Ok(corpus_sizes.iter().map(|&t| t as f64 / total).collect())
}

/// Linear combiner `α = e^{c·r}`.
pub fn alpha(relative_size: f64, c: f64) -> f64 {
    (c * relative_size).exp()
}

/// Rate-scaled pairwise distance of one weight across hosts.
pub fn weight_distance(values: &[f64], rates: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::argument("weight distance needs at least two hosts"));
    }
    if values.len() != rates.len() {
        return Err(Error::argument("one rate per host value is required"));
    }
    Ok(weight_distance_unchecked(values, rates))
}

fn weight_distance_unchecked(values: &[f64], rates: &[f64]) -> f64 {
    let mut sum = 0.0;
    for j in 0..values.len() {
        for k in j + 1..values.len() {
            let d = values[j] * rates[j] - values[k] * rates[k];
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Unscaled pairwise distance of a whole layer, divided by its size. Takes
/// one slice of `M_ℓ` values per host.
pub fn layer_distance(host_layers: &[&[f64]]) -> Result<f64> {
    if host_layers.len() < 2 {
        return Err(Error::argument("layer distance needs at least two hosts"));
    }
    let m = host_layers[0].len();
    if m == 0 {
        return Err(Error::argument("layer has no weights"));
    }
    if host_layers.iter().any(|l| l.len() != m) {
        return Err(Error::argument("host layers differ in length"));
    }
    Ok(layer_distance_unchecked(host_layers))
}

fn layer_distance_unchecked(host_layers: &[&[f64]]) -> f64 {
    let m = host_layers[0].len();
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..host_layers.len() {
            for k in j + 1..host_layers.len() {
                let d = host_layers[j][i] - host_layers[k][i];
                sum += d * d;
            }
        }
    }
    sum.sqrt() / m as f64
}

/// Shift gate: the weight distance when it is strictly below the layer
/// distance, otherwise zero.
pub fn shift(weight_dist: f64, layer_dist: f64) -> f64 {
    if weight_dist < layer_dist {
        weight_dist
    } else {
        0.0
    }
}

/// Checks the common preconditions and returns the submissions sorted by host.
fn prepare(submissions: &[HostSubmission]) -> Result<Vec<&HostSubmission>> {
    if submissions.len() < 2 {
        return Err(Error::argument(format!(
            "combination needs at least two hosts, got {}",
            submissions.len()
        )));
    }
    if !validate_same_architecture(submissions)? {
        return Err(Error::protocol("host submissions use different architectures"));
    }
    let round = submissions[0].round;
    if submissions.iter().any(|s| s.round != round) {
        return Err(Error::protocol("host submissions come from different rounds"));
    }
    let mut sorted: Vec<&HostSubmission> = submissions.iter().collect();
    sorted.sort_by(|a, b| a.host_id.cmp(&b.host_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].host_id == w[1].host_id) {
        return Err(Error::protocol(format!("duplicate submission from host {:?}", w[0].host_id)));
    }
    if sorted.iter().any(|s| s.corpus_size == 0) {
        return Err(Error::argument("corpus sizes must be positive"));
    }
    Ok(sorted)
}

/// Per-layer, per-weight distances for sorted submissions. Returns the
/// layer distances and, per layer, the weight distances.
fn distances(sorted: &[&HostSubmission], rates: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let layer_count = sorted[0].params.architecture().layer_count();
    let mut layer_dists = Vec::with_capacity(layer_count);
    let mut weight_dists = Vec::with_capacity(layer_count);
    let mut column = vec![0.0; sorted.len()];
    for l in 0..layer_count {
        let host_layers: Vec<&[f64]> = sorted.iter().map(|s| s.params.layer(l)).collect();
        layer_dists.push(layer_distance_unchecked(&host_layers));
        let m = host_layers[0].len();
        let mut wd = Vec::with_capacity(m);
        for i in 0..m {
            for (slot, layer) in column.iter_mut().zip(&host_layers) {
                *slot = layer[i];
            }
            wd.push(weight_distance_unchecked(&column, rates));
        }
        weight_dists.push(wd);
    }
    (layer_dists, weight_dists)
}

fn build_report(layer_dists: Vec<f64>, weight_dists: &[Vec<f64>], shifted: Vec<usize>) -> DistanceReport {
    let weight_distance_stats = weight_dists
        .iter()
        .map(|wd| DistanceStats {
            min: wd.iter().copied().fold(f64::INFINITY, f64::min),
            max: wd.iter().copied().fold(0.0, f64::max),
            mean: wd.iter().sum::<f64>() / wd.len() as f64,
        })
        .collect();
    let shifted_fraction = shifted
        .iter()
        .zip(weight_dists)
        .map(|(&n, wd)| n as f64 / wd.len() as f64)
        .collect();
    DistanceReport {
        layer_distances: layer_dists,
        weight_distance_stats,
        shifted_fraction,
    }
}

/// Exponential-combiner combination for combination round `round`.
pub fn combine_coln(
    submissions: &[HostSubmission],
    config: &CombineConfig,
    round: u64,
) -> Result<(ParameterSet, DistanceReport)> {
    config.validate()?;
    let sorted = prepare(submissions)?;
    let sizes: Vec<u64> = sorted.iter().map(|s| s.corpus_size).collect();
    let rates = relative_sizes(&sizes)?;
    let c = config.rate_for_round(round);
    let alphas: Vec<f64> = rates.iter().map(|&r| alpha(r, c)).collect();
    let (layer_dists, weight_dists) = distances(&sorted, &rates);

    let arch = sorted[0].params.architecture();
    let mut per_layer = Vec::with_capacity(arch.layer_count());
    let mut shifted = Vec::with_capacity(arch.layer_count());
    for l in 0..arch.layer_count() {
        let m = arch.layers()[l].param_count();
        let mut values = Vec::with_capacity(m);
        let mut count = 0;
        for (i, &wd) in weight_dists[l].iter().enumerate() {
            let mut w = 0.0;
            for (s, a) in sorted.iter().zip(&alphas) {
                w += a * s.params.layer(l)[i];
            }
            if config.shift_enabled {
                let beta = shift(wd, layer_dists[l]);
                if beta != 0.0 {
                    count += 1;
                    if config.signed_shift {
                        if w != 0.0 {
                            w += beta.copysign(w);
                        }
                    } else {
                        w += beta;
                    }
                }
            }
            values.push(w);
        }
        per_layer.push(values);
        shifted.push(count);
    }
    let combined = ParameterSet::new(arch.clone(), per_layer)
        .map_err(|e| Error::Numeric(format!("combination produced invalid values: {e}")))?;
    Ok((combined, build_report(layer_dists, &weight_dists, shifted)))
}

fn weighted_mean(sorted: &[&HostSubmission], weights: &[f64]) -> Result<ParameterSet> {
    let arch = sorted[0].params.architecture();
    let per_layer = (0..arch.layer_count())
        .map(|l| {
            (0..arch.layers()[l].param_count())
                .map(|i| {
                    sorted
                        .iter()
                        .zip(weights)
                        .fold(0.0, |acc, (s, w)| acc + w * s.params.layer(l)[i])
                })
                .collect()
        })
        .collect();
    ParameterSet::new(arch.clone(), per_layer)
}

/// Size-weighted mean `Σ_h r_h · w_h`.
pub fn combine_fedavg(submissions: &[HostSubmission]) -> Result<ParameterSet> {
    let sorted = prepare(submissions)?;
    let sizes: Vec<u64> = sorted.iter().map(|s| s.corpus_size).collect();
    weighted_mean(&sorted, &relative_sizes(&sizes)?)
}

/// Unweighted mean `Σ_h w_h / H`.
pub fn combine_plain_average(submissions: &[HostSubmission]) -> Result<ParameterSet> {
    let sorted = prepare(submissions)?;
    let share = 1.0 / sorted.len() as f64;
    weighted_mean(&sorted, &vec![share; sorted.len()])
}

/// Distance diagnostics without combining (no shifts are counted).
pub fn distance_report(submissions: &[HostSubmission]) -> Result<DistanceReport> {
    let sorted = prepare(submissions)?;
    let sizes: Vec<u64> = sorted.iter().map(|s| s.corpus_size).collect();
    let rates = relative_sizes(&sizes)?;
    let (layer_dists, weight_dists) = distances(&sorted, &rates);
    let none = vec![0; layer_dists.len()];
    Ok(build_report(layer_dists, &weight_dists, none))
}

/// Dispatches on `config.strategy`. Baselines report distances with a zero
/// shifted fraction.
pub fn combine(
    submissions: &[HostSubmission],
    config: &CombineConfig,
    round: u64,
) -> Result<(ParameterSet, DistanceReport)> {
    match config.strategy {
        Strategy::Coln => combine_coln(submissions, config, round),
        Strategy::Fedavg => Ok((combine_fedavg(submissions)?, distance_report(submissions)?)),
        Strategy::PlainAverage => Ok((combine_plain_average(submissions)?, distance_report(submissions)?)),
    }
}
