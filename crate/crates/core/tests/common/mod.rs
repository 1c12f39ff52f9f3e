#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robusttraj::model::{load_model, load_scenario, Model, Scenario};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn model(name: &str) -> Model {
    load_model(data_dir().join("models").join(format!("{name}.json"))).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(data_dir().join("scenarios").join(format!("{name}.json"))).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random configuration with joints inside their limits and `|ψ| < 0.6`.
pub fn random_q(model: &Model, rng: &mut impl Rng) -> Vec<f64> {
    let mut q = Vec::with_capacity(model.nq());
    if model.floating_base {
        for _ in 0..3 {
            q.push(rng.gen_range(-1.0..1.0));
        }
        for _ in 0..3 {
            q.push(rng.gen_range(-0.35..0.35));
        }
    }
    for j in &model.joints {
        q.push(rng.gen_range(j.q_limits.0..j.q_limits.1));
    }
    q
}

pub fn random_vector(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}
