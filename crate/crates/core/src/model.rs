//! System topologies, job-type structures and service-time distributions.
//!
//! Servers are indexed from 0. A job type is the set of servers a job of that
//! type may use; it carries the probability that an arriving job is of that
//! type. Service requirements are normalized to unit mean so that the arrival
//! rate alone sets the load.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of type probabilities.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("capacities: at least one server is required")]
    NoServers,
    #[error("capacities[{index}]: capacity must be strictly positive, got {value}")]
    NonPositiveCapacity { index: usize, value: f64 },
    #[error("types: at least one job type is required")]
    NoTypes,
    #[error("types[{index}].servers: empty server set")]
    EmptyServerSet { index: usize },
    #[error("types[{index}].servers: server index out of range ({server} >= {servers})")]
    ServerOutOfRange { index: usize, server: usize, servers: usize },
    #[error("types[{index}].servers: duplicate server {server}")]
    DuplicateServer { index: usize, server: usize },
    #[error("types[{index}]: duplicate type, same server set as types[{other}]")]
    DuplicateType { index: usize, other: usize },
    #[error("types[{index}].p: probability must lie in (0, 1], got {value}")]
    BadProbability { index: usize, value: f64 },
    #[error("types: probabilities sum to {sum}")]
    ProbabilitySum { sum: f64 },
    #[error("lambda: arrival rate must be finite and nonnegative, got {0}")]
    BadLambda(f64),
    #[error("redundancy-d: need 1 <= d <= K, got K={k}, d={d}")]
    BadDegree { k: usize, d: usize },
    #[error("capacities: expected {expected} entries, got {got}")]
    CapacityCount { expected: usize, got: usize },
    #[error("probabilities: expected {expected} entries, got {got}")]
    ProbabilityCount { expected: usize, got: usize },
    #[error("service: {0}")]
    BadService(String),
    #[error("modulation: {0}")]
    BadModulation(String),
}

/// One job type: the compatible servers and the probability of the type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobType {
    pub servers: Vec<usize>,
    pub p: f64,
}

impl JobType {
    pub fn new(servers: impl Into<Vec<usize>>, p: f64) -> Self {
        JobType { servers: servers.into(), p }
    }

    pub fn contains(&self, server: usize) -> bool {
        self.servers.contains(&server)
    }

    pub fn len(&self) -> usize {
        self.servers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }
}

/// A multi-type job, multi-type server system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub capacities: Vec<f64>,
    pub types: Vec<JobType>,
    #[serde(default)]
    pub lambda: f64,
}

impl Topology {
    /// Builds a topology and validates it.
    pub fn new(capacities: Vec<f64>, types: Vec<JobType>, lambda: f64) -> Result<Self, ModelError> {
        validate_topology(Topology { capacities, types, lambda })
    }

    /// Like [`Topology::new`] but silently drops types whose probability is
    /// exactly zero; those are not part of the type set.
    pub fn with_zero_types_dropped(
        capacities: Vec<f64>,
        types: Vec<JobType>,
        lambda: f64,
    ) -> Result<Self, ModelError> {
        let types = types.into_iter().filter(|t| t.p != 0.0).collect();
        Topology::new(capacities, types, lambda)
    }

    pub fn num_servers(&self) -> usize {
        self.capacities.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Indices of the types that include `server`.
    pub fn types_of(&self, server: usize) -> impl Iterator<Item = usize> + '_ {
        self.types
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.contains(server))
            .map(|(i, _)| i)
    }

    /// Total probability mass of the types that include `server`.
    pub fn load_fraction(&self, server: usize) -> f64 {
        self.types_of(server).map(|c| self.types[c].p).sum()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// Returns true if every pair of types is nested or disjoint.
    pub fn is_nested(&self) -> bool {
        self.types.iter().enumerate().all(|(i, a)| {
            self.types[i + 1..].iter().all(|b| {
                let a_in_b = a.servers.iter().all(|s| b.contains(*s));
                let b_in_a = b.servers.iter().all(|s| a.contains(*s));
                let disjoint = a.servers.iter().all(|s| !b.contains(*s));
                a_in_b || b_in_a || disjoint
            })
        })
    }

    /// Multiplies every capacity by `factor`.
    pub fn scaled(&self, factor: f64) -> Topology {
        let mut t = self.clone();
        for c in &mut t.capacities {
            *c *= factor;
        }
        t
    }

    /// Relabels servers: server `s` becomes `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> Topology {
        let mut capacities = vec![0.0; self.capacities.len()];
        for (s, &mu) in self.capacities.iter().enumerate() {
            capacities[perm[s]] = mu;
        }
        let types = self
            .types
            .iter()
            .map(|t| {
                let mut servers: Vec<usize> = t.servers.iter().map(|&s| perm[s]).collect();
                servers.sort_unstable();
                JobType { servers, p: t.p }
            })
            .collect();
        Topology { capacities, types, lambda: self.lambda }
    }
}

/// Checks every topology invariant and returns the topology unchanged.
pub fn validate_topology(raw: Topology) -> Result<Topology, ModelError> {
    let k = raw.capacities.len();
    if k == 0 {
        return Err(ModelError::NoServers);
    }
    for (index, &value) in raw.capacities.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ModelError::NonPositiveCapacity { index, value });
        }
    }
    if !(raw.lambda >= 0.0 && raw.lambda.is_finite()) {
        return Err(ModelError::BadLambda(raw.lambda));
    }
    if raw.types.is_empty() {
        return Err(ModelError::NoTypes);
    }
    let mut sorted_sets: Vec<Vec<usize>> = Vec::with_capacity(raw.types.len());
    for (index, t) in raw.types.iter().enumerate() {
        if t.servers.is_empty() {
            return Err(ModelError::EmptyServerSet { index });
        }
        let mut seen = vec![false; k];
        for &server in &t.servers {
            if server >= k {
                return Err(ModelError::ServerOutOfRange { index, server, servers: k });
            }
            if seen[server] {
                return Err(ModelError::DuplicateServer { index, server });
            }
            seen[server] = true;
        }
        if !(t.p > 0.0 && t.p <= 1.0) {
            return Err(ModelError::BadProbability { index, value: t.p });
        }
        let mut set = t.servers.clone();
        set.sort_unstable();
        if let Some(other) = sorted_sets.iter().position(|o| *o == set) {
            return Err(ModelError::DuplicateType { index, other });
        }
        sorted_sets.push(set);
    }
    let sum: f64 = raw.types.iter().map(|t| t.p).sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(ModelError::ProbabilitySum { sum });
    }
    Ok(raw)
}

fn combinations(k: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for s in start..k {
            if k - s < d - cur.len() {
                break;
            }
            cur.push(s);
            rec(s + 1, k, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, d, &mut Vec::with_capacity(d), &mut out);
    out
}

/// Binomial coefficient as a float; exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Redundancy-d with homogeneous arrivals: every size-`d` subset of the `k`
/// servers is a type with probability `1 / C(k, d)`.
pub fn make_red_d(k: usize, d: usize, capacities: Vec<f64>) -> Result<Topology, ModelError> {
    if d < 1 || d > k {
        return Err(ModelError::BadDegree { k, d });
    }
    if capacities.len() != k {
        return Err(ModelError::CapacityCount { expected: k, got: capacities.len() });
    }
    let sets = combinations(k, d);
    let p = 1.0 / sets.len() as f64;
    let types = sets.into_iter().map(|servers| JobType { servers, p }).collect();
    Topology::new(capacities, types, 0.0)
}

/// The nested structures used throughout: N, W, WW and WWWW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NestedKind {
    N,
    W,
    WW,
    WWWW,
}

impl NestedKind {
    pub fn num_servers(self) -> usize {
        match self {
            NestedKind::N | NestedKind::W => 2,
            NestedKind::WW => 4,
            NestedKind::WWWW => 8,
        }
    }

    /// Server sets of the kind's types, in canonical order.
    pub fn type_sets(self) -> Vec<Vec<usize>> {
        match self {
            NestedKind::N => vec![vec![1], vec![0, 1]],
            NestedKind::W => vec![vec![0], vec![1], vec![0, 1]],
            NestedKind::WW => vec![
                vec![0],
                vec![1],
                vec![2],
                vec![3],
                vec![0, 1],
                vec![2, 3],
                vec![0, 1, 2, 3],
            ],
            NestedKind::WWWW => {
                let mut sets: Vec<Vec<usize>> = (0..8).map(|s| vec![s]).collect();
                sets.extend([vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
                sets.push(vec![0, 1, 2, 3]);
                sets.push(vec![4, 5, 6, 7]);
                sets.push((0..8).collect());
                sets
            }
        }
    }
}

/// Builds a nested topology. `probs` follows the order of
/// [`NestedKind::type_sets`]; zero-probability types are left out.
pub fn make_nested(kind: NestedKind, capacities: Vec<f64>, probs: &[f64]) -> Result<Topology, ModelError> {
    let sets = kind.type_sets();
    if capacities.len() != kind.num_servers() {
        return Err(ModelError::CapacityCount { expected: kind.num_servers(), got: capacities.len() });
    }
    if probs.len() != sets.len() {
        return Err(ModelError::ProbabilityCount { expected: sets.len(), got: probs.len() });
    }
    let types = sets
        .into_iter()
        .zip(probs)
        .map(|(servers, &p)| JobType { servers, p })
        .collect();
    Topology::with_zero_types_dropped(capacities, types, 0.0)
}

/// Nested topology with uniform type probabilities `1/|C|`.
pub fn make_nested_uniform(kind: NestedKind, capacities: Vec<f64>) -> Result<Topology, ModelError> {
    let n = kind.type_sets().len();
    make_nested(kind, capacities, &vec![1.0 / n as f64; n])
}

/// Geometric capacities `mu^(k-1)`, k = 1..K.
pub fn geometric_capacities(k: usize, mu: f64) -> Vec<f64> {
    (0..k).map(|i| mu.powi(i as i32)).collect()
}

/// Linear capacities on `[1, M]`: `1 + (M-1)/(K-1) (k-1)`.
pub fn linear_capacities(k: usize, m: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    (0..k).map(|i| 1.0 + (m - 1.0) / (k as f64 - 1.0) * i as f64).collect()
}

/// Job-size distribution. Every variant is rescaled to unit mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceDistribution {
    Exponential,
    Deterministic,
    /// Exp(mu1) with probability `q`, Exp(mu2) otherwise.
    #[serde(rename = "hyperexp")]
    HyperExponential { q: f64, mu1: f64, mu2: f64 },
    /// Pareto with shape `alpha` truncated to `[k, qmax]`.
    BoundedPareto { alpha: f64, k: f64, qmax: f64 },
}

impl Default for ServiceDistribution {
    fn default() -> Self {
        ServiceDistribution::Exponential
    }
}

impl ServiceDistribution {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            ServiceDistribution::Exponential | ServiceDistribution::Deterministic => Ok(()),
            ServiceDistribution::HyperExponential { q, mu1, mu2 } => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(ModelError::BadService(format!("hyperexp q must lie in (0,1), got {q}")));
                }
                if !(mu1 > 0.0 && mu2 > 0.0) {
                    return Err(ModelError::BadService("hyperexp rates must be positive".into()));
                }
                Ok(())
            }
            ServiceDistribution::BoundedPareto { alpha, k, qmax } => {
                if !(alpha > 0.0 && k > 0.0 && qmax > k) {
                    return Err(ModelError::BadService(format!(
                        "bounded_pareto needs alpha > 0 and 0 < k < qmax, got alpha={alpha}, k={k}, qmax={qmax}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Mean of the distribution before normalization.
    pub fn raw_mean(&self) -> f64 {
        match *self {
            ServiceDistribution::Exponential | ServiceDistribution::Deterministic => 1.0,
            ServiceDistribution::HyperExponential { q, mu1, mu2 } => q / mu1 + (1.0 - q) / mu2,
            ServiceDistribution::BoundedPareto { alpha, k, qmax } => bounded_pareto_mean(alpha, k, qmax),
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, ServiceDistribution::Exponential)
    }

    /// The distribution has an atom (violates the atomless assumption of the
    /// stability theory).
    pub fn has_atom(&self) -> bool {
        matches!(self, ServiceDistribution::Deterministic)
    }

    /// Sampler with the normalizing constant computed once.
    pub fn sampler(&self) -> Sampler {
        Sampler { dist: self.clone(), mean: self.raw_mean() }
    }

    /// One unit-mean draw. Repeated draws should go through [`Self::sampler`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }
}

/// A [`ServiceDistribution`] together with its raw mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    dist: ServiceDistribution,
    mean: f64,
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.dist {
            ServiceDistribution::Exponential => sample_exp1(rng),
            ServiceDistribution::Deterministic => 1.0,
            ServiceDistribution::HyperExponential { q, mu1, mu2 } => {
                let rate = if rng.random::<f64>() < q { mu1 } else { mu2 };
                sample_exp1(rng) / rate / self.mean
            }
            ServiceDistribution::BoundedPareto { alpha, k, qmax } => {
                let u: f64 = rng.random();
                let tail = (k / qmax).powf(alpha);
                let x = k / (1.0 - u * (1.0 - tail)).powf(1.0 / alpha);
                x.clamp(k, qmax) / self.mean
            }
        }
    }
}

/// Free-function form of [`ServiceDistribution::sample`].
pub fn sample_service<R: Rng + ?Sized>(dist: &ServiceDistribution, rng: &mut R) -> f64 {
    dist.sample(rng)
}

pub(crate) fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let x: f64 = Exp1.sample(rng);
    // Exp1 can return exactly 0 with vanishing probability; sizes stay positive.
    if x > 0.0 {
        x
    } else {
        f64::MIN_POSITIVE
    }
}

/// Mean of the truncated Pareto on `[k, qmax]`, computed as
/// `k + integral_k^qmax (1 - F(x)) dx` with composite Simpson in log-space.
fn bounded_pareto_mean(alpha: f64, k: f64, qmax: f64) -> f64 {
    let tail = (k / qmax).powf(alpha);
    let survival = |x: f64| 1.0 - (1.0 - (k / x).powf(alpha)) / (1.0 - tail);
    let (a, b) = (k.ln(), qmax.ln());
    let n = 4096;
    let h = (b - a) / n as f64;
    let f = |u: f64| {
        let x = u.exp();
        survival(x) * x
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    k + acc * h / 3.0
}

/// Markov-modulated capacities: each server re-draws a slowdown `S` whenever
/// its exponential clock (mean `epsilon`) rings, and runs at `mu_s / S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityModulation {
    pub epsilon: f64,
    pub slowdowns: Vec<Slowdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slowdown {
    pub s: f64,
    pub p: f64,
}

impl CapacityModulation {
    /// The 12-point Dolly(1,12) slowdown distribution.
    pub fn dolly(epsilon: f64) -> Self {
        const PMF: [f64; 12] = [0.23, 0.14, 0.09, 0.03, 0.08, 0.10, 0.04, 0.14, 0.12, 0.021, 0.007, 0.002];
        CapacityModulation {
            epsilon,
            slowdowns: PMF
                .iter()
                .enumerate()
                .map(|(i, &p)| Slowdown { s: (i + 1) as f64, p })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::BadModulation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.slowdowns.is_empty() {
            return Err(ModelError::BadModulation("slowdowns: empty distribution".into()));
        }
        for (i, sd) in self.slowdowns.iter().enumerate() {
            if !(sd.s >= 1.0) {
                return Err(ModelError::BadModulation(format!("slowdowns[{i}].s must be >= 1, got {}", sd.s)));
            }
            if !(sd.p >= 0.0) {
                return Err(ModelError::BadModulation(format!("slowdowns[{i}].p must be >= 0, got {}", sd.p)));
            }
        }
        let sum: f64 = self.slowdowns.iter().map(|s| s.p).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::BadModulation(format!("slowdown probabilities sum to {sum}")));
        }
        Ok(())
    }

    pub fn sample_slowdown<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for sd in &self.slowdowns {
            acc += sd.p;
            if u < acc {
                return sd.s;
            }
        }
        self.slowdowns.last().map(|s| s.s).unwrap_or(1.0)
    }

    /// Mean capacity multiplier `E[1/S]`.
    pub fn mean_speed(&self) -> f64 {
        self.slowdowns.iter().map(|s| s.p / s.s).sum()
    }
}
