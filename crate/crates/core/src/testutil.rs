//! Random instance generators shared by unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{TabularMdp, TransitionModel};
use crate::posterior::ModelEnsemble;

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, s: usize, a: usize) -> TransitionModel {
    let mut probs = Vec::with_capacity(s * a * s);
    for _ in 0..s * a {
        probs.extend(random_simplex(rng, s));
    }
    TransitionModel::new(s, a, probs).unwrap()
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    s: usize,
    a: usize,
    gamma: f64,
) -> (TabularMdp, TransitionModel) {
    let rewards = (0..s * a * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p0 = vec![1.0 / s as f64; s];
    (
        TabularMdp::new(s, a, gamma, p0, rewards).unwrap(),
        random_kernel(rng, s, a),
    )
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, s: usize, a: usize, m: usize) -> ModelEnsemble {
    let models = (0..m).map(|_| random_kernel(rng, s, a)).collect();
    ModelEnsemble::new(models, 0).unwrap()
}
