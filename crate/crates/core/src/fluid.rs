//! Fluid drain schedules for exponential service.
//!
//! The upper-bound schedule drains the subsystem stages one after another:
//! stage `i` starts once stages `1..i` are empty, and each of its servers
//! then behaves like an M/M/1-PS fluid queue fed by the types of `C_i`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ServiceDistribution, Topology};
use crate::round_sig;
use crate::stability::{subsystem_chain, StabilityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error("fluid schedules require exponential service")]
    NonExponential,
    #[error("initial_mass: expected {expected} entries, got {got}")]
    MassCount { expected: usize, got: usize },
    #[error("initial_mass[{index}]: must be finite and nonnegative, got {value}")]
    BadMass { index: usize, value: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error(transparent)]
    Stage(#[from] StabilityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrainEvent {
    pub time: f64,
    pub servers: Vec<usize>,
}

/// Piecewise-linear mass per server. Each server carries its own knots;
/// two knots with equal time mark a jump, and the value is right-continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub horizon: f64,
    pub knots: Vec<Vec<(f64, f64)>>,
    pub drain_events: Vec<DrainEvent>,
    /// First stage whose drift is nonnegative, if any.
    pub stalled_stage: Option<usize>,
    /// Start time of each stage that was reached.
    pub phase_starts: Vec<f64>,
}

impl FluidTrajectory {
    /// Sorted union of all knot times.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.knots.iter().flatten().map(|k| k.0).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn mass_at(&self, server: usize, t: f64) -> f64 {
        piecewise_at(&self.knots[server], t)
    }

    pub fn total_at(&self, t: f64) -> f64 {
        (0..self.knots.len()).map(|s| self.mass_at(s, t)).sum()
    }

    /// Writes `time,server,mass` rows at every knot.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "server", "mass"])?;
        for (s, knots) in self.knots.iter().enumerate() {
            for &(t, m) in knots {
                w.write_record([round_sig(t).to_string(), s.to_string(), round_sig(m).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn piecewise_at(knots: &[(f64, f64)], t: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= t);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[i - 1].1;
    }
    let (t0, m0) = knots[i - 1];
    let (t1, m1) = knots[i];
    m0 + (m1 - m0) * (t - t0) / (t1 - t0)
}

/// Builder for one server's path.
struct Path {
    knots: Vec<(f64, f64)>,
}

impl Path {
    fn new(m0: f64) -> Self {
        Path { knots: vec![(0.0, m0)] }
    }

    fn last(&self) -> (f64, f64) {
        *self.knots.last().unwrap()
    }

    fn push(&mut self, t: f64, m: f64) {
        let (t0, m0) = self.last();
        if t == t0 && m == m0 {
            return;
        }
        self.knots.push((t, m));
    }

    /// Constant drift to time `t`, absorbed at zero.
    fn drift_to(&mut self, t: f64, a: f64) {
        let (t0, m0) = self.last();
        if t <= t0 {
            return;
        }
        let end = m0 + a * (t - t0);
        if end < 0.0 {
            let hit = t0 + m0 / -a;
            self.push(hit, 0.0);
            self.push(t, 0.0);
        } else {
            self.push(t, end);
        }
    }

    fn scale(&mut self, w: f64) {
        let (t, m) = self.last();
        self.push(t, m * w);
    }

    fn truncate(mut self, h: f64) -> Vec<(f64, f64)> {
        let i = self.knots.partition_point(|k| k.0 <= h);
        if i < self.knots.len() {
            let v = piecewise_at(&self.knots, h);
            self.knots.truncate(i);
            self.push(h, v);
        } else {
            let (_, m) = self.last();
            self.push(h, m);
        }
        self.knots
    }
}

/// Drain schedule of the upper-bound system from `initial_mass`.
///
/// Before its phase a server drifts as if it received every type it hosts.
/// At phase start its mass is scaled by the share of `C_i` types among them.
/// Servers never in any `L_i` fall linearly to zero by the end of the last
/// stage that resolves one of their types. The schedule is exact when every
/// type lies inside a single `L_i`.
pub fn ub_drain_schedule(
    top: &Topology,
    service: &ServiceDistribution,
    initial_mass: &[f64],
    horizon: Option<f64>,
) -> Result<FluidTrajectory, FluidError> {
    if !service.is_exponential() {
        return Err(FluidError::NonExponential);
    }
    let k = top.num_servers();
    if initial_mass.len() != k {
        return Err(FluidError::MassCount { expected: k, got: initial_mass.len() });
    }
    if let Some((index, &value)) = initial_mass.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
        return Err(FluidError::BadMass { index, value });
    }
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FluidError::BadHorizon(h));
        }
    }

    let chain = subsystem_chain(top);
    let lambda = top.lambda;
    let all_load: Vec<f64> = (0..k).map(|s| top.load_fraction(s)).collect();
    let pre_drift = |s: usize| lambda * all_load[s] - top.capacities[s];
    let share = |s: usize, load: f64| if lambda == 0.0 || all_load[s] == 0.0 { 1.0 } else { load / all_load[s] };
    let stage_load = |i: usize, s: usize| -> f64 {
        chain.stages[i].types.iter().filter(|&&c| top.types[c].contains(s)).map(|&c| top.types[c].p).sum()
    };

    // Phase timing.
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut stalled = None;
    let mut t = 0.0;
    for (i, st) in chain.stages.iter().enumerate() {
        starts.push(t);
        let mut end = t;
        for &s in &st.least_loaded {
            let d = lambda * stage_load(i, s) - top.capacities[s];
            if d >= 0.0 {
                stalled = Some(i + 1);
                break;
            }
            let mut p = Path::new(initial_mass[s]);
            p.drift_to(t, pre_drift(s));
            let m = p.last().1 * share(s, stage_load(i, s));
            end = f64::max(end, t + m / -d);
        }
        if stalled.is_some() {
            break;
        }
        ends.push(end);
        t = end;
    }

    let follower_stage = |s: usize| top.types_of(s).map(|c| chain.stage_of_type[c] - 1).max();

    let h = match horizon {
        Some(h) => h,
        None => match stalled {
            Some(i) => 5.0 * starts[i - 1].max(1.0),
            None => {
                let mut last = ends.last().copied().unwrap_or(0.0);
                for s in 0..k {
                    if chain.stage_of_server(s).is_none() && follower_stage(s).is_none() {
                        last = last.max(initial_mass[s] / top.capacities[s]);
                    }
                }
                if last > 0.0 {
                    5.0 * last
                } else {
                    1.0
                }
            }
        },
    };

    let reached = |i: usize| stalled.map_or(true, |j| i + 1 <= j);
    let drained = |i: usize| stalled.map_or(true, |j| i + 1 < j);
    let mut knots = Vec::with_capacity(k);
    for s in 0..k {
        let mut p = Path::new(initial_mass[s]);
        match (chain.stage_of_server(s).map(|i| i - 1), follower_stage(s)) {
            (Some(i), _) if reached(i) => {
                p.drift_to(starts[i], pre_drift(s));
                let load = stage_load(i, s);
                p.scale(share(s, load));
                p.drift_to(h.max(starts[i]) + 1.0, lambda * load - top.capacities[s]);
            }
            (None, Some(j)) if drained(j) => {
                p.drift_to(starts[j], pre_drift(s));
                let load: f64 = top
                    .types_of(s)
                    .filter(|&c| chain.stage_of_type[c] - 1 == j)
                    .map(|c| top.types[c].p)
                    .sum();
                p.scale(share(s, load));
                let (t0, m) = p.last();
                if ends[j] > t0 {
                    p.drift_to(h.max(ends[j]) + 1.0, pre_drift(s).min(-m / (ends[j] - t0)));
                } else {
                    p.push(t0, 0.0);
                }
            }
            (None, None) => p.drift_to(h + 1.0, -top.capacities[s]),
            _ => p.drift_to(h + 1.0, pre_drift(s)),
        }
        knots.push(p.truncate(h));
    }

    let mut drains: Vec<(f64, usize)> = Vec::new();
    for (s, ks) in knots.iter().enumerate() {
        if ks.last().map_or(false, |k| k.1 == 0.0) {
            let first_zero = ks.iter().rposition(|k| k.1 != 0.0).map_or(0.0, |i| ks[i + 1].0);
            if first_zero < h {
                drains.push((first_zero, s));
            }
        }
    }
    drains.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut drain_events: Vec<DrainEvent> = Vec::new();
    for (t, s) in drains {
        match drain_events.last_mut() {
            Some(e) if e.time == t => e.servers.push(s),
            _ => drain_events.push(DrainEvent { time: t, servers: vec![s] }),
        }
    }

    Ok(FluidTrajectory { horizon: h, knots, drain_events, stalled_stage: stalled, phase_starts: starts })
}

/// Lower-bound fluid: the common normalized mass of the stage servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrajectory {
    pub alpha0: f64,
    pub slope: f64,
    pub knots: Vec<(f64, f64)>,
}

impl AlphaTrajectory {
    pub fn at(&self, t: f64) -> f64 {
        piecewise_at(&self.knots, t)
    }

    pub fn diverges(&self) -> bool {
        self.slope > 0.0
    }
}

/// `alpha(t)` for 1-based `stage`: slope `lambda / CAR - 1` while positive,
/// absorbed at zero.
pub fn lb_alpha_trajectory(
    top: &Topology,
    service: &ServiceDistribution,
    stage: usize,
    alpha0: f64,
    horizon: f64,
) -> Result<AlphaTrajectory, FluidError> {
    if !service.is_exponential() {
        return Err(FluidError::NonExponential);
    }
    if !(alpha0 >= 0.0 && alpha0.is_finite()) {
        return Err(FluidError::BadMass { index: 0, value: alpha0 });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(FluidError::BadHorizon(horizon));
    }
    let chain = subsystem_chain(top);
    let car = chain.stage(stage)?.car;
    let slope = top.lambda / car - 1.0;
    let mut p = Path::new(alpha0);
    p.drift_to(horizon, slope);
    Ok(AlphaTrajectory { alpha0, slope, knots: p.knots })
}

/// Drift `lambda * sum_{c in C_i(s)} p_c - mu_s` of every `s` in `L_i`,
/// assuming the earlier stages are empty. Other servers get `None`.
pub fn classify_drifts(top: &Topology) -> Vec<Option<f64>> {
    let chain = subsystem_chain(top);
    let mut out = vec![None; top.num_servers()];
    for st in &chain.stages {
        for &s in &st.least_loaded {
            let load: f64 = st.types.iter().filter(|&&c| top.types[c].contains(s)).map(|&c| top.types[c].p).sum();
            out[s] = Some(top.lambda * load - top.capacities[s]);
        }
    }
    out
}
