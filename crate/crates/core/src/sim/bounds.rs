use serde::{Deserialize, Serialize};

use super::{Dispatch, Scheduling, SimConfig, SimError, Simulation, Variant};
use crate::stability::{default_lb_stage, subsystem_chain};

/// Kept per report; further violations are only counted.
const MAX_RECORDED: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub event: u64,
    pub ty: usize,
    pub original: usize,
    pub bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub seed: u64,
    pub lb_stage: usize,
    pub events: u64,
    pub ub_violation_count: u64,
    pub lb_violation_count: u64,
    pub ub_violations: Vec<Violation>,
    pub lb_violations: Vec<Violation>,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.ub_violation_count == 0 && self.lb_violation_count == 0
    }
}

/// Runs the original, upper-bound and lower-bound systems on common arrival
/// and size streams and checks `N_LB <= N <= N_UB` per type after every
/// event (lower bound only for the types it keeps).
pub fn run_coupled_bounds(cfg: &SimConfig, seed: u64) -> Result<BoundsReport, SimError> {
    if cfg.dispatch != Dispatch::Redundancy || cfg.scheduling != Scheduling::Ps {
        return Err(SimError::Config("coupled bounds need redundancy dispatch with ps scheduling".into()));
    }
    if cfg.modulation.is_some() {
        return Err(SimError::Config("coupled bounds do not support modulation".into()));
    }
    let mut base = cfg.clone();
    base.seed = seed;
    let lb_stage = cfg.lb_stage.unwrap_or_else(|| default_lb_stage(&cfg.topology));
    let make = |variant| {
        let mut c = base.clone();
        c.variant = variant;
        c.lb_stage = Some(lb_stage);
        Simulation::new(&c)
    };
    let mut sims = [make(Variant::Original)?, make(Variant::UpperBound)?, make(Variant::LowerBound)?];
    let chain = subsystem_chain(&cfg.topology);
    let kept = &chain.stages[lb_stage - 1].types;

    let mut report = BoundsReport {
        seed,
        lb_stage,
        events: 0,
        ub_violation_count: 0,
        lb_violation_count: 0,
        ub_violations: Vec::new(),
        lb_violations: Vec::new(),
    };
    while report.events < cfg.max_events {
        let peeks = [sims[0].peek(), sims[1].peek(), sims[2].peek()];
        let t = peeks.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        if !t.is_finite() {
            break;
        }
        // Events that coincide up to rounding are processed together.
        let tol = 1e-12 * t.max(1.0);
        for (sim, (te, ev)) in sims.iter_mut().zip(peeks) {
            if te <= t + tol {
                sim.advance(te);
                sim.fire(ev);
            }
        }
        report.events += 1;

        let now = sims[0].now();
        let (orig, ub, lb) = (sims[0].jobs_per_type(), sims[1].jobs_per_type(), sims[2].jobs_per_type());
        for ty in 0..orig.len() {
            if orig[ty] > ub[ty] {
                report.ub_violation_count += 1;
                if report.ub_violations.len() < MAX_RECORDED {
                    report.ub_violations.push(Violation { time: now, event: report.events, ty, original: orig[ty], bound: ub[ty] });
                }
            }
            if kept.contains(&ty) && lb[ty] > orig[ty] {
                report.lb_violation_count += 1;
                if report.lb_violations.len() < MAX_RECORDED {
                    report.lb_violations.push(Violation { time: now, event: report.events, ty, original: orig[ty], bound: lb[ty] });
                }
            }
        }
    }
    Ok(report)
}
