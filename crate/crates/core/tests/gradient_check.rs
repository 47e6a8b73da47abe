//! Analytic gradients against central finite differences.

mod common;

use coln::model::{Activation, ArchitectureDescriptor};
use coln::rng::SeededRng;
use coln::trainer::{init_params, Loss, TrainConfig};
use common::grad::{max_error, random_case, random_data, MAX_REL_ERR};

#[test]
fn two_layer_net_sixteen_samples() {
    let arch = ArchitectureDescriptor::dense(&[3, 5, 2], Activation::Tanh, Activation::Softmax).unwrap();
    let params = init_params(&arch, 11);
    let mut rng = SeededRng::new(12);
    let data = random_data(&mut rng, 16, 3, 2);
    let config = TrainConfig::new(1, 16, 0.1, 0, Loss::SoftmaxCe);
    let err = max_error(&params, &data, &config);
    assert!(err < MAX_REL_ERR, "max relative error {err}");
}

#[test]
fn bce_head_with_proximal_term() {
    let arch = ArchitectureDescriptor::dense(&[4, 6, 1], Activation::Sigmoid, Activation::Sigmoid).unwrap();
    let params = init_params(&arch, 21);
    let reference = init_params(&arch, 22);
    let mut rng = SeededRng::new(23);
    let data = random_data(&mut rng, 16, 4, 2);
    let config = TrainConfig::new(1, 16, 0.1, 0, Loss::Bce).with_proximal(0.3, reference);
    let err = max_error(&params, &data, &config);
    assert!(err < MAX_REL_ERR, "max relative error {err}");
}

#[test]
fn randomized_small_nets() {
    let mut rng = SeededRng::new(2718);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (params, data, config) = random_case(&mut rng);
        let err = max_error(&params, &data, &config);
        worst = worst.max(err);
        assert!(err < MAX_REL_ERR, "trial {trial}: {:?} error {err}", params.architecture());
    }
    println!("worst relative error over 100 nets: {worst:e}");
}
