//! Discrete-event simulation of redundancy systems with identical copies.
//!
//! Jobs arrive as a Poisson process, receive one size draw, and are placed
//! on compatible servers according to the dispatch policy. Under the
//! original variant a job leaves as soon as one copy completes and its other
//! copies are cancelled.

mod bounds;
mod engine;
mod frontier;
mod stats;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_topology, CapacityModulation, ModelError, ServiceDistribution, Topology};
use crate::round_sig;
use crate::stability::subsystem_chain;

pub use bounds::{run_coupled_bounds, BoundsReport, Violation};
pub use engine::{Event, JobRecord, Simulation};
pub use frontier::{divergence_test, estimate_stability_frontier, FrontierOptions, FrontierPoint};
pub use stats::{ols, Ols};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    #[default]
    Redundancy,
    Bernoulli,
    Jsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    #[default]
    Ps,
    Fcfs,
    Ros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Original,
    UpperBound,
    LowerBound,
}

fn default_seed() -> u64 {
    1
}
fn default_busy_periods() -> u64 {
    100_000
}
fn default_max_events() -> u64 {
    50_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub topology: Topology,
    #[serde(default)]
    pub dispatch: Dispatch,
    #[serde(default)]
    pub scheduling: Scheduling,
    #[serde(default)]
    pub service: ServiceDistribution,
    #[serde(default)]
    pub modulation: Option<CapacityModulation>,
    #[serde(default)]
    pub variant: Variant,
    /// 1-based stage for the lower-bound variant; defaults to the first
    /// stage whose CAR is exceeded, else the one with the smallest CAR.
    #[serde(default)]
    pub lb_stage: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_busy_periods")]
    pub busy_periods: u64,
    #[serde(default)]
    pub warmup_periods: u64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    /// Jobs present at time 0, per type index.
    #[serde(default)]
    pub initial_state: Option<Vec<u64>>,
}

impl SimConfig {
    pub fn new(topology: Topology) -> Self {
        SimConfig {
            topology,
            dispatch: Dispatch::default(),
            scheduling: Scheduling::default(),
            service: ServiceDistribution::default(),
            modulation: None,
            variant: Variant::default(),
            lb_stage: None,
            seed: default_seed(),
            busy_periods: default_busy_periods(),
            warmup_periods: 0,
            max_events: default_max_events(),
            initial_state: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        validate_topology(self.topology.clone())?;
        self.service.validate()?;
        if let Some(m) = &self.modulation {
            m.validate()?;
        }
        if self.busy_periods < 1 {
            return Err(SimError::Config("busy_periods must be at least 1".into()));
        }
        if self.max_events == 0 {
            return Err(SimError::Config("max_events must be positive".into()));
        }
        if self.variant != Variant::Original {
            if self.dispatch != Dispatch::Redundancy || self.scheduling != Scheduling::Ps {
                return Err(SimError::Config("variant: bound systems need redundancy dispatch with ps scheduling".into()));
            }
            if self.modulation.is_some() {
                return Err(SimError::Config("variant: bound systems do not support modulation".into()));
            }
        }
        if let Some(stage) = self.lb_stage {
            let i_star = subsystem_chain(&self.topology).i_star;
            if stage == 0 || stage > i_star {
                return Err(SimError::Config(format!("lb_stage: {stage} out of range 1..={i_star}")));
            }
        }
        if let Some(init) = &self.initial_state {
            if init.len() != self.topology.num_types() {
                return Err(SimError::Config(format!(
                    "initial_state: expected {} entries, got {}",
                    self.topology.num_types(),
                    init.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Dominance(String),
}

/// Copy counts per server, recorded after every event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub copies: Vec<Vec<u32>>,
}

impl Trajectory {
    /// Copy counts in effect at time `t` (right-continuous).
    pub fn at(&self, t: f64) -> &[u32] {
        let i = self.times.partition_point(|&x| x <= t);
        &self.copies[i.saturating_sub(1)]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.copies.first().map_or(0, |c| c.len());
        let mut header = vec!["time".to_string()];
        header.extend((1..=k).map(|s| format!("M_{s}")));
        w.write_record(&header)?;
        for (t, m) in self.times.iter().zip(&self.copies) {
            let mut row = vec![round_sig(*t).to_string()];
            row.extend(m.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Time-average number of jobs; a lower bound when `diverged`.
    pub mean_jobs: f64,
    /// 95% half-width of the regenerative confidence interval.
    pub ci_half_width: f64,
    pub per_server_mean_copies: Vec<f64>,
    pub completed_jobs: u64,
    pub cycles: u64,
    pub events: u64,
    pub simulated_time: f64,
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
}

impl SimResult {
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.mean_jobs = round_sig(r.mean_jobs);
        r.ci_half_width = round_sig(r.ci_half_width);
        r.simulated_time = round_sig(r.simulated_time);
        for x in &mut r.per_server_mean_copies {
            *x = round_sig(*x);
        }
        r
    }

    pub fn to_json(&self) -> String {
        let mut r = self.rounded();
        r.trajectory = None;
        serde_json::to_string_pretty(&r).expect("result serializes")
    }

    /// Whether the two 95% intervals intersect.
    pub fn overlaps(&self, other: &SimResult) -> bool {
        (self.mean_jobs - other.mean_jobs).abs() <= self.ci_half_width + other.ci_half_width
    }
}

fn warnings_for(cfg: &SimConfig) -> Vec<String> {
    let mut w = Vec::new();
    if cfg.service.has_atom() {
        w.push("service distribution has an atom; stability results assume an atomless distribution".into());
    }
    w
}

/// Steady-state estimate of the mean number of jobs from regenerative
/// cycles. A cycle starts at each arrival that finds the system empty.
pub fn run(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg)?;
    let k = cfg.topology.num_servers();
    let mut cycles = stats::CycleStats::new(k);
    let mut total = stats::Accumulator::new(k);
    let mut open: Option<stats::Accumulator> = None;
    let target = cfg.warmup_periods + cfg.busy_periods;
    let mut closed = 0u64;
    let mut diverged = false;

    loop {
        if sim.events() >= cfg.max_events {
            diverged = true;
            break;
        }
        let (t, ev) = sim.peek();
        if !t.is_finite() {
            break;
        }
        let dt = t - sim.now();
        total.add(dt, sim.jobs_in_system(), sim.copies_per_server());
        if let Some(acc) = open.as_mut() {
            acc.add(dt, sim.jobs_in_system(), sim.copies_per_server());
        }
        sim.advance(t);
        if ev == Event::Arrival && sim.jobs_in_system() == 0 {
            if let Some(acc) = open.take() {
                closed += 1;
                if closed > cfg.warmup_periods {
                    cycles.push(&acc);
                }
                if closed >= target {
                    break;
                }
            }
            open = Some(stats::Accumulator::new(k));
        }
        sim.fire(ev);
    }

    let (mean_jobs, ci_half_width, per_server) = if diverged || cycles.n == 0 {
        let (m, per) = total.averages();
        let half = if cycles.n >= 2 { cycles.estimate().1 } else { 0.0 };
        (m, half, per)
    } else {
        let (m, half) = cycles.estimate();
        (m, half, cycles.per_server())
    };
    Ok(SimResult {
        mean_jobs,
        ci_half_width,
        per_server_mean_copies: per_server,
        completed_jobs: sim.departures(),
        cycles: cycles.n,
        events: sim.events(),
        simulated_time: sim.now(),
        diverged,
        warnings: warnings_for(cfg),
        trajectory: None,
    })
}

/// Runs from `initial_state` up to `horizon`, recording copy counts after
/// every event.
pub fn run_trajectory(cfg: &SimConfig, horizon: f64) -> Result<SimResult, SimError> {
    cfg.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::Config(format!("horizon must be positive, got {horizon}")));
    }
    let mut sim = Simulation::new(cfg)?;
    let k = cfg.topology.num_servers();
    let mut total = stats::Accumulator::new(k);
    let to_u32 = |m: &[usize]| m.iter().map(|&x| x as u32).collect::<Vec<_>>();
    let mut traj = Trajectory { times: vec![0.0], copies: vec![to_u32(sim.copies_per_server())] };
    let mut diverged = false;
    loop {
        if sim.events() >= cfg.max_events {
            diverged = true;
            break;
        }
        let (t, ev) = sim.peek();
        let t_end = t.min(horizon);
        total.add(t_end - sim.now(), sim.jobs_in_system(), sim.copies_per_server());
        if t > horizon {
            sim.advance(horizon);
            break;
        }
        sim.advance(t);
        sim.fire(ev);
        traj.times.push(t);
        traj.copies.push(to_u32(sim.copies_per_server()));
    }
    let (mean_jobs, per) = total.averages();
    Ok(SimResult {
        mean_jobs,
        ci_half_width: 0.0,
        per_server_mean_copies: per,
        completed_jobs: sim.departures(),
        cycles: 0,
        events: sim.events(),
        simulated_time: sim.now(),
        diverged,
        warnings: warnings_for(cfg),
        trajectory: Some(traj),
    })
}
