//! Shared helpers for the integration tests.
#![allow(dead_code)]

pub mod grad;

use coln::model::{Activation, ArchitectureDescriptor, HostSubmission, LayerSpec, ParameterSet};
use coln::rng::SeededRng;

/// A host as plain nested vectors: id, corpus size, per-layer values.
pub struct PlainHost {
    pub id: String,
    pub size: u64,
    pub layers: Vec<Vec<f64>>,
}

/// Direct transcription of the combination rule, written without reference
/// to the library: hosts are taken in the given order and every quantity is
/// recomputed from scratch per weight.
pub fn oracle_combine(hosts: &[PlainHost], c: f64, shift_enabled: bool) -> Vec<Vec<f64>> {
    let total: f64 = hosts.iter().map(|h| h.size as f64).sum();
    let r: Vec<f64> = hosts.iter().map(|h| h.size as f64 / total).collect();
    let n_layers = hosts[0].layers.len();
    let mut out = Vec::new();
    for l in 0..n_layers {
        let m = hosts[0].layers[l].len();
        let mut layer_sq = 0.0;
        for i in 0..m {
            for j in 0..hosts.len() {
                for k in 0..hosts.len() {
                    if j < k {
                        layer_sq += (hosts[j].layers[l][i] - hosts[k].layers[l][i]).powi(2);
                    }
                }
            }
        }
        let layer_distance = layer_sq.sqrt() / m as f64;
        let mut combined = Vec::new();
        for i in 0..m {
            let mut wd_sq = 0.0;
            for j in 0..hosts.len() {
                for k in 0..hosts.len() {
                    if j < k {
                        wd_sq += (hosts[j].layers[l][i] * r[j] - hosts[k].layers[l][i] * r[k]).powi(2);
                    }
                }
            }
            let weight_distance = wd_sq.sqrt();
            let beta = if shift_enabled && weight_distance < layer_distance {
                weight_distance
            } else {
                0.0
            };
            let sum: f64 = hosts
                .iter()
                .zip(&r)
                .map(|(h, rh)| (c * rh).exp() * h.layers[l][i])
                .sum();
            combined.push(sum + beta);
        }
        out.push(combined);
    }
    out
}

pub fn oracle_fedavg(hosts: &[PlainHost]) -> Vec<Vec<f64>> {
    let total: f64 = hosts.iter().map(|h| h.size as f64).sum();
    (0..hosts[0].layers.len())
        .map(|l| {
            (0..hosts[0].layers[l].len())
                .map(|i| hosts.iter().map(|h| h.size as f64 * h.layers[l][i]).sum::<f64>() / total)
                .collect()
        })
        .collect()
}

pub struct Instance {
    pub hosts: Vec<PlainHost>,
    pub submissions: Vec<HostSubmission>,
    pub c: f64,
}

/// Random combination instance: H ∈ [2,4], L ∈ [1,3], weights in [−1,1],
/// sizes in [1,1000]. Layer sizes are drawn in [1,10] subject to being
/// chainable as dense layers.
pub fn random_instance(rng: &mut SeededRng) -> Instance {
    let h = 2 + rng.below(3);
    let l = 1 + rng.below(3);
    let mut dims = vec![1 + rng.below(10)];
    while dims.len() < l + 1 {
        let prev = *dims.last().unwrap();
        // next output so that prev·out ≤ 10
        let max_out = (10 / prev).max(1);
        dims.push(1 + rng.below(max_out));
    }
    let layers: Vec<LayerSpec> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let bias = w[0] * w[1] + w[1] <= 10 && rng.below(2) == 0;
            LayerSpec::new(format!("l{i}"), w[0], w[1], Activation::Identity, bias)
        })
        .collect();
    let arch = ArchitectureDescriptor::new(layers).unwrap();
    let c = match rng.below(5) {
        0 => 1e-6,
        1 => 1e-3,
        2 => 1.0,
        3 => -1.0,
        _ => rng.uniform(-2.0, 2.0),
    };
    let mut hosts = Vec::new();
    let mut submissions = Vec::new();
    let mut ids: Vec<usize> = (0..h).collect();
    rng.shuffle(&mut ids);
    for id in ids {
        let size = 1 + rng.below(1000) as u64;
        let values: Vec<Vec<f64>> = arch
            .layers()
            .iter()
            .map(|spec| (0..spec.param_count()).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let id = format!("host-{id}");
        let params = ParameterSet::new(arch.clone(), values.clone()).unwrap();
        submissions.push(HostSubmission::new(id.clone(), 0, size, params).unwrap());
        hosts.push(PlainHost { id, size, layers: values });
    }
    Instance { hosts, submissions, c }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &ParameterSet) -> f64 {
    a.iter()
        .zip(b.layers())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
