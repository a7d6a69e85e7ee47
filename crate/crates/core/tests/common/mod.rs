#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redlab_core::model::{JobType, Topology};

/// Four servers, redundancy-2 with heterogeneous capacities and arrivals.
pub fn example(lambda: f64) -> Topology {
    let sets = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
    let probs = [0.25, 0.1, 0.1, 0.2, 0.2, 0.15];
    Topology::new(
        vec![1.0, 2.0, 4.0, 5.0],
        sets.iter().zip(probs).map(|(s, p)| JobType::new(s.to_vec(), p)).collect(),
        lambda,
    )
    .unwrap()
}

/// Random topology with `k` servers and up to `max_types` distinct types.
pub fn random_topology(rng: &mut ChaCha8Rng, k: usize, max_types: usize) -> Topology {
    let capacities: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..5.0)).collect();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let n = rng.random_range(1..=max_types);
    while sets.len() < n {
        let size = rng.random_range(1..=k);
        let mut all: Vec<usize> = (0..k).collect();
        all.shuffle(rng);
        let mut set: Vec<usize> = all[..size].to_vec();
        set.sort_unstable();
        if !sets.contains(&set) {
            sets.push(set);
        }
        if sets.len() >= (1 << k) - 1 {
            break;
        }
    }
    let weights: Vec<f64> = sets.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut types: Vec<JobType> = sets.into_iter().zip(&weights).map(|(s, w)| JobType::new(s, w / total)).collect();
    // Absorb rounding so the probabilities sum to one.
    let sum: f64 = types.iter().map(|t| t.p).sum();
    types[0].p += 1.0 - sum;
    Topology::new(capacities, types, 0.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
