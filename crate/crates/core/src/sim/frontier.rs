use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::ols;
use super::{Dispatch, Scheduling, SimConfig, SimError, Simulation};
use crate::model::{ServiceDistribution, Topology};

/// Batches used by the divergence test over the second half of a run.
const BATCHES: usize = 20;
/// Slope t-statistic above which a run counts as diverging.
const T_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierOptions {
    pub service: ServiceDistribution,
    pub seeds: Vec<u64>,
    pub max_events: u64,
}

impl Default for FrontierOptions {
    fn default() -> Self {
        FrontierOptions { service: ServiceDistribution::Exponential, seeds: vec![1, 2, 3, 4, 5], max_events: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub diverged: bool,
    pub votes: usize,
    pub runs: usize,
    pub slopes: Vec<f64>,
    pub t_stats: Vec<f64>,
}

/// Divergence heuristic for one run started empty: the second half of the
/// events is cut into batches, and the time-averaged copy count of each
/// batch is regressed on the batch mid-time. Returns `(slope, t)`.
pub fn divergence_test(cfg: &SimConfig) -> Result<(f64, f64), SimError> {
    let mut sim = Simulation::new(cfg)?;
    let half = cfg.max_events / 2;
    let per_batch = ((cfg.max_events - half) / BATCHES as u64).max(1);
    let mut mids = Vec::with_capacity(BATCHES);
    let mut means = Vec::with_capacity(BATCHES);
    let (mut area, mut start, mut in_batch) = (0.0, 0.0, 0u64);
    while sim.events() < cfg.max_events {
        let (t, ev) = sim.peek();
        if !t.is_finite() {
            break;
        }
        if sim.events() >= half {
            if in_batch == 0 {
                start = sim.now();
                area = 0.0;
            }
            let total: usize = sim.copies_per_server().iter().sum();
            area += total as f64 * (t - sim.now());
        }
        sim.advance(t);
        sim.fire(ev);
        if sim.events() > half {
            in_batch += 1;
            if in_batch == per_batch {
                let span = sim.now() - start;
                mids.push(0.5 * (start + sim.now()));
                means.push(if span > 0.0 { area / span } else { 0.0 });
                in_batch = 0;
            }
        }
    }
    if mids.len() < 3 {
        return Ok((0.0, 0.0));
    }
    let fit = ols(&mids, &means);
    Ok((fit.slope, fit.t_stat))
}

/// Majority vote of the divergence heuristic over seeds, per arrival rate.
pub fn estimate_stability_frontier(
    topology: &Topology,
    dispatch: Dispatch,
    scheduling: Scheduling,
    lambdas: &[f64],
    opts: &FrontierOptions,
) -> Result<Vec<FrontierPoint>, SimError> {
    let jobs: Vec<(usize, u64)> = (0..lambdas.len()).flat_map(|i| opts.seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<(f64, f64), SimError>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let mut cfg = SimConfig::new(topology.clone().with_lambda(lambdas[i]));
            cfg.dispatch = dispatch;
            cfg.scheduling = scheduling;
            cfg.service = opts.service.clone();
            cfg.seed = seed;
            cfg.max_events = opts.max_events;
            divergence_test(&cfg)
        })
        .collect();
    let mut points: Vec<FrontierPoint> = lambdas
        .iter()
        .map(|&lambda| FrontierPoint { lambda, diverged: false, votes: 0, runs: 0, slopes: Vec::new(), t_stats: Vec::new() })
        .collect();
    for ((i, _), r) in jobs.into_iter().zip(results) {
        let (slope, t) = r?;
        let p = &mut points[i];
        p.runs += 1;
        p.slopes.push(slope);
        p.t_stats.push(t);
        if slope > 0.0 && t > T_THRESHOLD {
            p.votes += 1;
        }
    }
    for p in &mut points {
        p.diverged = 2 * p.votes > p.runs;
    }
    Ok(points)
}
