//! Stability tables and simulation sweeps over the canonical models.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    geometric_capacities, linear_capacities, make_nested, make_nested_uniform, make_red_d, CapacityModulation,
    ModelError, NestedKind, ServiceDistribution, Topology,
};
use crate::round_sig;
use crate::sim::{self, Dispatch, Scheduling, SimConfig, SimError};
use crate::stability::{lambda_b, lambda_j, lambda_r, mu_star};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown table {0}; expected 2, 3 or 4")]
    UnknownTable(u32),
    #[error("sweep: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Empty,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => write!(f, "{}", round_sig(*v)),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric value of column `name` in `row`.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        match self.rows.get(row)?.get(self.column(name)?)? {
            Cell::Int(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }
}

/// Capacity parameters where the redundancy and Bernoulli frontiers cross
/// lie in this interval for every table family.
const MU_STAR_BRACKET: (f64, f64) = (1.0, 3.0);

fn red_d_table(geometric: bool) -> Result<Table, ExperimentError> {
    let params: &[f64] = if geometric { &[1.0, 1.2, 1.4, 2.0, 3.0] } else { &[1.0, 2.0, 3.0, 4.0, 6.0] };
    let pname = if geometric { "mu" } else { "M" };
    let mut table = if geometric {
        Table::new(&["K", "d", pname, "lambda_R", "lambda_B", "mu_star"])
    } else {
        Table::new(&["K", "d", pname, "lambda_R", "lambda_B"])
    };
    for (k, d) in [(3, 2), (4, 2), (5, 2), (10, 2), (4, 3), (5, 3), (10, 3)] {
        let caps = |x: f64| if geometric { geometric_capacities(k, x) } else { linear_capacities(k, x) };
        let star = if geometric {
            Some(mu_star(|mu| make_red_d(k, d, geometric_capacities(k, mu)).expect("valid red-d"), MU_STAR_BRACKET).ok())
        } else {
            None
        };
        for &x in params {
            let top = make_red_d(k, d, caps(x))?;
            let mut row = vec![
                Cell::Int(k as i64),
                Cell::Int(d as i64),
                Cell::Real(x),
                Cell::Real(lambda_r(&top)),
                Cell::Real(lambda_b(&top)),
            ];
            if let Some(s) = star {
                row.push(s.map_or(Cell::Empty, Cell::Real));
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

fn nested_table() -> Result<Table, ExperimentError> {
    let mut table = Table::new(&["capacities", "model", "K", "param", "lambda_R", "lambda_B", "mu_star"]);
    for (kind, name) in [(NestedKind::W, "W"), (NestedKind::WW, "WW"), (NestedKind::WWWW, "WWWW")] {
        let k = kind.num_servers();
        let star = mu_star(|mu| make_nested_uniform(kind, geometric_capacities(k, mu)).expect("valid nested"), MU_STAR_BRACKET).ok();
        for (geometric, params) in [(true, &[1.0, 1.2, 1.4, 2.0][..]), (false, &[1.0, 2.0, 4.0, 6.0, 8.0][..])] {
            for &x in params {
                let caps = if geometric { geometric_capacities(k, x) } else { linear_capacities(k, x) };
                let top = make_nested_uniform(kind, caps)?;
                table.rows.push(vec![
                    Cell::Text(if geometric { "geometric" } else { "linear" }.into()),
                    Cell::Text(name.into()),
                    Cell::Int(k as i64),
                    Cell::Real(x),
                    Cell::Real(lambda_r(&top)),
                    Cell::Real(lambda_b(&top)),
                    match (geometric, star) {
                        (true, Some(s)) => Cell::Real(s),
                        _ => Cell::Empty,
                    },
                ]);
            }
        }
    }
    Ok(table)
}

/// Recomputes one of the stability tables: 2 (redundancy-d, geometric
/// capacities), 3 (redundancy-d, linear capacities) or 4 (nested models).
pub fn reproduce_table(id: u32) -> Result<Table, ExperimentError> {
    match id {
        2 => red_d_table(true),
        3 => red_d_table(false),
        4 => nested_table(),
        other => Err(ExperimentError::UnknownTable(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RedDGeometric,
    RedDLinear,
    NestedGeometric,
    NestedLinear,
    WModelP12Sweep,
    WModelMu2Sweep,
    DollyModulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub dispatch: Dispatch,
    pub scheduling: Scheduling,
}

fn default_policies() -> Vec<Policy> {
    [Dispatch::Redundancy, Dispatch::Bernoulli, Dispatch::Jsq]
        .into_iter()
        .map(|dispatch| Policy { dispatch, scheduling: Scheduling::Ps })
        .collect()
}
fn default_seed() -> u64 {
    1
}
fn default_busy_periods() -> u64 {
    100_000
}
fn default_max_events() -> u64 {
    20_000_000
}
fn default_epsilon() -> f64 {
    1.0
}

/// Parameter grids of a sweep. Which grids are read depends on `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub family: Family,
    pub lambdas: Vec<f64>,
    /// Server counts (redundancy-d and Dolly families).
    #[serde(default, rename = "K")]
    pub k: Vec<usize>,
    #[serde(default)]
    pub d: Vec<usize>,
    /// `mu` for geometric capacities, `M` for linear ones, `mu2` for the
    /// `mu2` sweep.
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub nested: Option<NestedKind>,
    /// W-model capacities for the `p12` sweep.
    #[serde(default)]
    pub capacities: Option<Vec<f64>>,
    #[serde(default)]
    pub p1: Option<f64>,
    #[serde(default)]
    pub p12: Vec<f64>,
    /// `(p1, p2, p12)` for the `mu2` sweep.
    #[serde(default)]
    pub probs: Option<[f64; 3]>,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub service: ServiceDistribution,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_busy_periods")]
    pub busy_periods: u64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    /// Rows whose half-width exceeds this are flagged.
    #[serde(default)]
    pub max_ci: Option<f64>,
}

impl SweepSpec {
    pub fn new(family: Family, lambdas: Vec<f64>) -> Self {
        SweepSpec {
            family,
            lambdas,
            k: Vec::new(),
            d: Vec::new(),
            mu: Vec::new(),
            nested: None,
            capacities: None,
            p1: None,
            p12: Vec::new(),
            probs: None,
            policies: default_policies(),
            service: ServiceDistribution::Exponential,
            epsilon: default_epsilon(),
            seed: default_seed(),
            busy_periods: default_busy_periods(),
            max_events: default_max_events(),
            max_ci: None,
        }
    }

    fn require<T>(&self, v: &[T], name: &str) -> Result<(), ExperimentError> {
        if v.is_empty() {
            return Err(ExperimentError::Spec(format!("{name}: grid must be nonempty for {:?}", self.family)));
        }
        Ok(())
    }

    /// Labeled topologies `(label, x, topology)` of the sweep, without `lambda`.
    fn topologies(&self) -> Result<Vec<(String, f64, Topology)>, ExperimentError> {
        self.require(&self.lambdas, "lambdas")?;
        self.require(&self.policies, "policies")?;
        let mut out = Vec::new();
        match self.family {
            Family::RedDGeometric | Family::RedDLinear => {
                self.require(&self.k, "K")?;
                self.require(&self.d, "d")?;
                self.require(&self.mu, "mu")?;
                let geometric = self.family == Family::RedDGeometric;
                for &k in &self.k {
                    for &d in &self.d {
                        for &x in &self.mu {
                            let caps = if geometric { geometric_capacities(k, x) } else { linear_capacities(k, x) };
                            let label = format!("K={k};d={d};{}={x}", if geometric { "mu" } else { "M" });
                            out.push((label, x, make_red_d(k, d, caps)?));
                        }
                    }
                }
            }
            Family::NestedGeometric | Family::NestedLinear => {
                let kind = self.nested.ok_or_else(|| ExperimentError::Spec("nested: model kind is required".into()))?;
                self.require(&self.mu, "mu")?;
                let geometric = self.family == Family::NestedGeometric;
                let k = kind.num_servers();
                for &x in &self.mu {
                    let caps = if geometric { geometric_capacities(k, x) } else { linear_capacities(k, x) };
                    let label = format!("{kind:?};{}={x}", if geometric { "mu" } else { "M" });
                    out.push((label, x, make_nested_uniform(kind, caps)?));
                }
            }
            Family::WModelP12Sweep => {
                self.require(&self.p12, "p12")?;
                let caps = self.capacities.clone().unwrap_or_else(|| vec![1.0, 2.0]);
                let p1 = self.p1.unwrap_or(0.35);
                for &p12 in &self.p12 {
                    let p2 = 1.0 - p1 - p12;
                    if p2 < -1e-12 {
                        return Err(ExperimentError::Spec(format!("p12={p12}: p1 + p12 exceeds 1")));
                    }
                    let label = format!("p1={p1};p12={p12}");
                    out.push((label, p12, make_nested(NestedKind::W, caps.clone(), &[p1, p2.max(0.0), p12])?));
                }
            }
            Family::WModelMu2Sweep => {
                self.require(&self.mu, "mu")?;
                let [p1, p2, p12] = self.probs.unwrap_or([0.35, 0.4, 0.25]);
                let mu1 = self.capacities.as_ref().and_then(|c| c.first().copied()).unwrap_or(1.0);
                for &mu2 in &self.mu {
                    let label = format!("mu1={mu1};mu2={mu2}");
                    out.push((label, mu2, make_nested(NestedKind::W, vec![mu1, mu2], &[p1, p2, p12])?));
                }
            }
            Family::DollyModulated => {
                self.require(&self.k, "K")?;
                self.require(&self.d, "d")?;
                for &k in &self.k {
                    for &d in &self.d {
                        let label = format!("K={k};d={d};epsilon={}", self.epsilon);
                        out.push((label, d as f64, make_red_d(k, d, vec![1.0; k])?));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub x: f64,
    pub lambda: f64,
    pub dispatch: Dispatch,
    pub scheduling: Scheduling,
    pub mean_jobs: f64,
    pub ci_half_width: f64,
    pub diverged: bool,
    pub ci_exceeded: bool,
    pub lambda_r: f64,
    pub lambda_b: f64,
    pub lambda_j: f64,
}

/// Simulates every grid point under every policy, in parallel.
pub fn sweep_mean_jobs(spec: &SweepSpec) -> Result<Vec<SweepRow>, ExperimentError> {
    let tops = spec.topologies()?;
    let modulation = (spec.family == Family::DollyModulated).then(|| CapacityModulation::dolly(spec.epsilon));
    let mut points = Vec::new();
    for (label, x, top) in &tops {
        let frontiers = (lambda_r(top), lambda_b(top), lambda_j(top));
        for &lambda in &spec.lambdas {
            for policy in &spec.policies {
                points.push((label.clone(), *x, top.clone().with_lambda(lambda), *policy, frontiers));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(crate::worker_threads())
        .build()
        .map_err(|e| ExperimentError::Spec(e.to_string()))?;
    let results: Vec<Result<SweepRow, ExperimentError>> = pool.install(|| {
        points
            .par_iter()
            .map(|(label, x, top, policy, (lr, lb, lj))| {
                let mut cfg = SimConfig::new(top.clone());
                cfg.dispatch = policy.dispatch;
                cfg.scheduling = policy.scheduling;
                cfg.service = spec.service.clone();
                cfg.modulation = modulation.clone();
                cfg.seed = spec.seed;
                cfg.busy_periods = spec.busy_periods;
                cfg.max_events = spec.max_events;
                let r = sim::run(&cfg)?;
                Ok(SweepRow {
                    label: label.clone(),
                    x: *x,
                    lambda: top.lambda,
                    dispatch: policy.dispatch,
                    scheduling: policy.scheduling,
                    mean_jobs: r.mean_jobs,
                    ci_half_width: r.ci_half_width,
                    diverged: r.diverged,
                    ci_exceeded: spec.max_ci.is_some_and(|m| r.ci_half_width > m),
                    lambda_r: *lr,
                    lambda_b: *lb,
                    lambda_j: *lj,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label", "x", "lambda", "dispatch", "scheduling", "mean_jobs", "ci_half_width", "diverged", "ci_exceeded",
        "lambda_R", "lambda_B", "lambda_J",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            round_sig(r.x).to_string(),
            round_sig(r.lambda).to_string(),
            snake_name(&r.dispatch),
            snake_name(&r.scheduling),
            round_sig(r.mean_jobs).to_string(),
            round_sig(r.ci_half_width).to_string(),
            r.diverged.to_string(),
            r.ci_exceeded.to_string(),
            round_sig(r.lambda_r).to_string(),
            round_sig(r.lambda_b).to_string(),
            round_sig(r.lambda_j).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialized name of a unit enum variant.
fn snake_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Run metadata written next to every CSV.
pub fn manifest(command: &str, spec: serde_json::Value, seeds: &[u64]) -> serde_json::Value {
    serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "spec": spec,
        "seeds": seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find(t: &Table, pred: impl Fn(&[Cell]) -> bool) -> usize {
        t.rows.iter().position(|r| pred(r)).expect("row present")
    }

    #[test]
    fn table_cells() {
        let t2 = reproduce_table(2).unwrap();
        let i = find(&t2, |r| r[0] == Cell::Int(5) && r[1] == Cell::Int(2) && r[2] == Cell::Real(1.4));
        assert!((t2.value(i, "lambda_R").unwrap() - 9.14).abs() < 0.01);
        let t3 = reproduce_table(3).unwrap();
        let i = find(&t3, |r| r[0] == Cell::Int(10) && r[1] == Cell::Int(2) && r[2] == Cell::Real(6.0));
        assert!((t3.value(i, "lambda_R").unwrap() - 30.0).abs() < 1e-9);
        assert!(t3.to_csv_string().contains("\n4,2,4,8,4\n"));
        let t4 = reproduce_table(4).unwrap();
        let i = find(&t4, |r| r[0] == Cell::Text("linear".into()) && r[1] == Cell::Text("WW".into()) && r[3] == Cell::Real(4.0));
        assert!((t4.value(i, "lambda_R").unwrap() - 7.0).abs() < 1e-9);
        assert!(reproduce_table(5).is_err());
    }

    #[test]
    fn tables_are_byte_stable() {
        for id in [2, 3, 4] {
            assert_eq!(reproduce_table(id).unwrap().to_csv_string(), reproduce_table(id).unwrap().to_csv_string());
        }
    }

    #[test]
    fn zero_rate_sweep() {
        let mut spec = SweepSpec::new(Family::WModelP12Sweep, vec![0.0]);
        spec.p12 = vec![0.0];
        spec.busy_periods = 10;
        let rows = sweep_mean_jobs(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.mean_jobs == 0.0));
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        let csv = String::from_utf8(out).unwrap();
        assert!(csv.contains(",redundancy,ps,0,"));
    }

    #[test]
    fn spec_errors() {
        let spec = SweepSpec::new(Family::RedDGeometric, vec![1.0]);
        assert!(matches!(sweep_mean_jobs(&spec), Err(ExperimentError::Spec(_))));
        let mut spec = SweepSpec::new(Family::WModelP12Sweep, vec![1.0]);
        spec.p12 = vec![0.9];
        assert!(sweep_mean_jobs(&spec).is_err());
        let json = r#"{"family":"w_model_p12_sweep","lambdas":[1.5],"p12":[0,0.25],"extra":true}"#;
        assert!(serde_json::from_str::<SweepSpec>(json).is_err());
    }
}
