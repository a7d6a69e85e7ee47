//! Stability regions under redundancy, Bernoulli routing and JSQ.
//!
//! The redundancy region comes from a recursion over nested subsystems: at
//! each stage the servers with the largest capacity-to-fraction-of-arrival
//! ratio (CAR) are peeled off together with every type that touches them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowNetwork;
use crate::model::{binomial, ServiceDistribution, Topology};
use crate::round_sig;

/// Relative tolerance for membership in the argmax set `L_i`.
pub const TIE_TOL: f64 = 1e-9;
/// Relative tolerance for declaring `lambda == CAR_l`.
pub const CRITICAL_TOL: f64 = 1e-12;
/// Absolute tolerance of the `mu_star` bisection.
pub const MU_STAR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("capacities must be strictly increasing (index {index})")]
    NotStrictlyIncreasing { index: usize },
    #[error("redundancy-d: need 1 <= d <= K, got K={k}, d={d}")]
    BadDegree { k: usize, d: usize },
    #[error("mu_star: no sign change on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("stage {stage} out of range 1..={i_star}")]
    BadStage { stage: usize, i_star: usize },
}

fn ties(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// One level of the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Servers of the subsystem `S_i`.
    #[serde(rename = "S")]
    pub servers: Vec<usize>,
    /// Type indices `C_i`: types whose servers all lie in `S_i`.
    #[serde(rename = "C")]
    pub types: Vec<usize>,
    /// Servers attaining the maximum ratio, `L_i`.
    #[serde(rename = "L")]
    pub least_loaded: Vec<usize>,
    #[serde(rename = "CAR")]
    pub car: f64,
    /// `(server, ratio)` for every server of `S_i` that hosts a type of `C_i`.
    pub ratios: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemChain {
    pub stages: Vec<Stage>,
    pub i_star: usize,
    /// `R(c)` for every type index.
    #[serde(rename = "R")]
    pub least_loaded_of: Vec<Vec<usize>>,
    /// 1-based stage at which each type is removed.
    pub stage_of_type: Vec<usize>,
}

impl SubsystemChain {
    /// 1-based stage in which `server` belongs to `L_i`, if any.
    pub fn stage_of_server(&self, server: usize) -> Option<usize> {
        self.stages
            .iter()
            .position(|st| st.least_loaded.contains(&server))
            .map(|i| i + 1)
    }

    pub fn cars(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.car).collect()
    }

    pub fn stage(&self, stage: usize) -> Result<&Stage, StabilityError> {
        if stage == 0 || stage > self.stages.len() {
            return Err(StabilityError::BadStage { stage, i_star: self.i_star });
        }
        Ok(&self.stages[stage - 1])
    }
}

/// Runs the recursion until no type is left.
pub fn subsystem_chain(top: &Topology) -> SubsystemChain {
    let k = top.num_servers();
    let n = top.num_types();
    let mut in_s = vec![true; k];
    let mut least_loaded_of = vec![Vec::new(); n];
    let mut stage_of_type = vec![0; n];
    let mut stages = Vec::new();

    loop {
        let types: Vec<usize> = (0..n)
            .filter(|&c| top.types[c].servers.iter().all(|&s| in_s[s]))
            .collect();
        if types.is_empty() {
            break;
        }
        let mut load = vec![0.0; k];
        for &c in &types {
            for &s in &top.types[c].servers {
                load[s] += top.types[c].p;
            }
        }
        let ratios: Vec<(usize, f64)> = (0..k)
            .filter(|&s| in_s[s] && load[s] > 0.0)
            .map(|s| (s, top.capacities[s] / load[s]))
            .collect();
        let car = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let least_loaded: Vec<usize> = ratios
            .iter()
            .filter(|r| ties(r.1, car, TIE_TOL))
            .map(|r| r.0)
            .collect();

        let idx = stages.len() + 1;
        for &c in &types {
            let hit: Vec<usize> = top.types[c]
                .servers
                .iter()
                .copied()
                .filter(|s| least_loaded.contains(s))
                .collect();
            if !hit.is_empty() {
                let mut hit = hit;
                hit.sort_unstable();
                least_loaded_of[c] = hit;
                stage_of_type[c] = idx;
            }
        }
        let servers = (0..k).filter(|&s| in_s[s]).collect();
        for &s in &least_loaded {
            in_s[s] = false;
        }
        stages.push(Stage { servers, types, least_loaded, car, ratios });
    }

    SubsystemChain { i_star: stages.len(), stages, least_loaded_of, stage_of_type }
}

/// Redundancy frontier: `min_i CAR_i`.
pub fn lambda_r(top: &Topology) -> f64 {
    lambda_r_of_chain(&subsystem_chain(top))
}

fn lambda_r_of_chain(chain: &SubsystemChain) -> f64 {
    chain.stages.iter().map(|s| s.car).fold(f64::INFINITY, f64::min)
}

/// The frontier obtained when type-`c` jobs are sent only to `R(c)`:
/// `min_s mu_s / sum_{c: s in R(c)} p_c`.
pub fn lambda_r_least_loaded_dispatch(top: &Topology) -> f64 {
    let chain = subsystem_chain(top);
    let mut load = vec![0.0; top.num_servers()];
    for (c, r) in chain.least_loaded_of.iter().enumerate() {
        for &s in r {
            load[s] += top.types[c].p;
        }
    }
    (0..top.num_servers())
        .filter(|&s| load[s] > 0.0)
        .map(|s| top.capacities[s] / load[s])
        .fold(f64::INFINITY, f64::min)
}

/// Bernoulli frontier: each job picks one compatible server uniformly.
pub fn lambda_b(top: &Topology) -> f64 {
    (0..top.num_servers())
        .filter_map(|s| {
            let load: f64 = top
                .types_of(s)
                .map(|c| top.types[c].p / top.types[c].len() as f64)
                .sum();
            (load > 0.0).then(|| top.capacities[s] / load)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Whether arrival rate `lambda` can be split statically over compatible
/// servers without overloading any of them.
pub fn static_split_feasible(top: &Topology, lambda: f64) -> bool {
    let k = top.num_servers();
    let n = top.num_types();
    let (source, sink) = (0, 1 + n + k);
    let mut g = FlowNetwork::new(n + k + 2);
    for (c, t) in top.types.iter().enumerate() {
        g.add_edge(source, 1 + c, lambda * t.p);
        for &s in &t.servers {
            g.add_edge(1 + c, 1 + n + s, f64::INFINITY);
        }
    }
    for (s, &mu) in top.capacities.iter().enumerate() {
        g.add_edge(1 + n + s, sink, mu);
    }
    g.max_flow(source, sink) >= lambda * (1.0 - 1e-12)
}

/// JSQ frontier: the best static split, by bisection over a max-flow oracle.
pub fn lambda_j(top: &Topology) -> f64 {
    let (mut lo, mut hi) = (0.0, top.capacities.iter().sum::<f64>());
    if static_split_feasible(top, hi) {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if static_split_feasible(top, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed form for redundancy-d with homogeneous arrivals and strictly
/// increasing capacities.
pub fn red_d_lambda_r(k: usize, d: usize, capacities: &[f64]) -> Result<f64, StabilityError> {
    if d < 1 || d > k || capacities.len() != k {
        return Err(StabilityError::BadDegree { k, d });
    }
    if let Some(index) = (1..k).find(|&i| capacities[i] <= capacities[i - 1]) {
        return Err(StabilityError::NotStrictlyIncreasing { index });
    }
    let total = binomial(k, d);
    Ok((d..=k)
        .map(|i| total / binomial(i - 1, d - 1) * capacities[i - 1])
        .fold(f64::INFINITY, f64::min))
}

/// Closed form for the N-model; `p` is the probability of the type that
/// only uses server 2.
pub fn n_model_lambda_r(mu1: f64, mu2: f64, p: f64) -> f64 {
    if p <= (mu2 - mu1) / mu2 {
        mu2
    } else if p <= mu2 / (mu1 + mu2) {
        mu1 / (1.0 - p)
    } else {
        mu2 / p
    }
}

/// Closed form for the W-model. Servers are relabeled when needed so that
/// server 2 is the less loaded one.
pub fn w_model_lambda_r(mu1: f64, mu2: f64, p1: f64, p2: f64, _p12: f64) -> f64 {
    let (r1, r2) = (mu1 / (1.0 - p2), mu2 / (1.0 - p1));
    let (mu1, mu2, p1) = if r1 > r2 && !ties(r1, r2, TIE_TOL) { (mu2, mu1, p2) } else { (mu1, mu2, p1) };
    if ties(r1, r2, TIE_TOL) || p1 <= mu1 / (mu1 + mu2) {
        mu2 / (1.0 - p1)
    } else {
        mu1 / p1
    }
}

/// `(lambda_R >= lambda_B, lambda_R / lambda_B)`.
pub fn improvement_verdict(top: &Topology) -> (bool, f64) {
    let (r, b) = (lambda_r(top), lambda_b(top));
    (r >= b, r / b)
}

/// Capacity parameter at which the redundancy and Bernoulli frontiers meet.
pub fn mu_star<F>(family: F, bracket: (f64, f64)) -> Result<f64, StabilityError>
where
    F: Fn(f64) -> Topology,
{
    let gap = |mu: f64| {
        let t = family(mu);
        lambda_r(&t) - lambda_b(&t)
    };
    let (mut lo, mut hi) = bracket;
    let (mut glo, ghi) = (gap(lo), gap(hi));
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(StabilityError::NoSignChange { lo, hi });
    }
    while hi - lo > MU_STAR_TOL {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        if g == 0.0 {
            return Ok(mid);
        }
        if g.signum() == glo.signum() {
            lo = mid;
            glo = g;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Critical,
    Unstable,
}

fn stage_verdict(cars: &[f64], stage: usize, lambda: f64) -> Verdict {
    let upstream = &cars[..stage];
    if upstream.iter().any(|&car| lambda > car && !ties(lambda, car, CRITICAL_TOL)) {
        Verdict::Unstable
    } else if upstream.iter().any(|&car| ties(lambda, car, CRITICAL_TOL)) {
        Verdict::Critical
    } else {
        Verdict::Stable
    }
}

/// Per-server verdict at `top.lambda`.
///
/// A server of `L_i` is stable iff `lambda < CAR_l` for all `l <= i`. A
/// server that hosts types but never enters an `L_i` inherits the worst
/// verdict among the stages where its types are resolved.
pub fn classify_servers(top: &Topology) -> Vec<Verdict> {
    classify_with_chain(top, &subsystem_chain(top))
}

fn classify_with_chain(top: &Topology, chain: &SubsystemChain) -> Vec<Verdict> {
    let cars = chain.cars();
    (0..top.num_servers())
        .map(|s| match chain.stage_of_server(s) {
            Some(i) => stage_verdict(&cars, i, top.lambda),
            None => top
                .types_of(s)
                .map(|c| stage_verdict(&cars, chain.stage_of_type[c], top.lambda))
                .max()
                .unwrap_or(Verdict::Stable),
        })
        .collect()
}

/// Capacities of the lower-bound system at 1-based stage `stage`:
/// `CAR_stage * sum_{c in C_stage(s)} p_c`, zero for servers outside.
pub fn lower_bound_capacities(top: &Topology, stage: usize) -> Result<Vec<f64>, StabilityError> {
    let chain = subsystem_chain(top);
    lower_bound_capacities_from(top, &chain, stage)
}

pub(crate) fn lower_bound_capacities_from(
    top: &Topology,
    chain: &SubsystemChain,
    stage: usize,
) -> Result<Vec<f64>, StabilityError> {
    let st = chain.stage(stage)?;
    let mut load = vec![0.0; top.num_servers()];
    for &c in &st.types {
        for &s in &top.types[c].servers {
            load[s] += top.types[c].p;
        }
    }
    Ok(load.into_iter().map(|l| st.car * l).collect())
}

/// Stage used by the lower-bound system when none is given: the first stage
/// whose CAR is exceeded by `lambda`, otherwise the stage attaining the
/// smallest CAR.
pub fn default_lb_stage(top: &Topology) -> usize {
    let chain = subsystem_chain(top);
    if let Some(i) = chain.stages.iter().position(|s| top.lambda > s.car) {
        return i + 1;
    }
    chain
        .stages
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.car.total_cmp(&b.1.car))
        .map(|(i, _)| i + 1)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stages: Vec<Stage>,
    pub i_star: usize,
    #[serde(rename = "R")]
    pub least_loaded_of: Vec<Vec<usize>>,
    pub lambda: f64,
    #[serde(rename = "lambda_R")]
    pub lambda_r: f64,
    #[serde(rename = "lambda_B")]
    pub lambda_b: f64,
    #[serde(rename = "lambda_J")]
    pub lambda_j: f64,
    pub verdicts: BTreeMap<String, Verdict>,
    pub redundancy_beats_bernoulli: bool,
    pub improvement_factor: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StabilityReport {
    pub fn new(top: &Topology) -> Self {
        Self::with_service(top, &ServiceDistribution::Exponential)
    }

    pub fn with_service(top: &Topology, service: &ServiceDistribution) -> Self {
        let chain = subsystem_chain(top);
        let verdicts = classify_with_chain(top, &chain)
            .into_iter()
            .enumerate()
            .map(|(s, v)| (s.to_string(), v))
            .collect();
        let lambda_r = lambda_r_of_chain(&chain);
        let lambda_b = lambda_b(top);
        let mut warnings = Vec::new();
        if service.has_atom() {
            warnings.push("service distribution has an atom; stability results assume an atomless distribution".into());
        }
        StabilityReport {
            i_star: chain.i_star,
            stages: chain.stages,
            least_loaded_of: chain.least_loaded_of,
            lambda: top.lambda,
            lambda_r,
            lambda_b,
            lambda_j: lambda_j(top),
            verdicts,
            redundancy_beats_bernoulli: lambda_r >= lambda_b,
            improvement_factor: lambda_r / lambda_b,
            warnings,
        }
    }

    /// Copy with every real rounded to 12 significant digits.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        for st in &mut r.stages {
            st.car = round_sig(st.car);
            for (_, x) in &mut st.ratios {
                *x = round_sig(*x);
            }
        }
        r.lambda = round_sig(r.lambda);
        r.lambda_r = round_sig(r.lambda_r);
        r.lambda_b = round_sig(r.lambda_b);
        r.lambda_j = round_sig(r.lambda_j);
        r.improvement_factor = round_sig(r.improvement_factor);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        geometric_capacities, linear_capacities, make_nested, make_nested_uniform, make_red_d, JobType, NestedKind,
    };

    fn example() -> Topology {
        let sets = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        let probs = [0.25, 0.1, 0.1, 0.2, 0.2, 0.15];
        Topology::new(
            vec![1.0, 2.0, 4.0, 5.0],
            sets.iter().zip(probs).map(|(s, p)| JobType::new(s.to_vec(), p)).collect(),
            7.5,
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn example_chain() {
        let chain = subsystem_chain(&example());
        assert_eq!(chain.i_star, 3);
        let l: Vec<_> = chain.stages.iter().map(|s| s.least_loaded.clone()).collect();
        assert_eq!(l, vec![vec![3], vec![2], vec![1]]);
        assert!(close(chain.stages[0].car, 100.0 / 9.0));
        assert!(close(chain.stages[1].car, 40.0 / 3.0));
        assert!(close(chain.stages[2].car, 8.0));
        assert_eq!(chain.stages[1].servers, vec![0, 1, 2]);
        assert_eq!(chain.least_loaded_of[0], vec![1]);
        assert_eq!(chain.least_loaded_of[2], vec![3]);
        assert!(close(lambda_r(&example()), 8.0));
    }

    #[test]
    fn example_verdicts() {
        use Verdict::*;
        assert_eq!(classify_servers(&example()), vec![Stable; 4]);
        assert_eq!(classify_servers(&example().with_lambda(9.0)), vec![Unstable, Unstable, Stable, Stable]);
        // CAR_2 = 40/3 > 10.5 > CAR_3 = 8.
        assert_eq!(classify_servers(&example().with_lambda(10.5)), vec![Unstable, Unstable, Stable, Stable]);
        assert_eq!(classify_servers(&example().with_lambda(12.0)), vec![Unstable; 4]);
        assert_eq!(classify_servers(&example().with_lambda(8.0)), vec![Critical, Critical, Stable, Stable]);
    }

    #[test]
    fn homogeneous_red_2() {
        let t = make_red_d(4, 2, vec![1.0; 4]).unwrap();
        let chain = subsystem_chain(&t);
        assert_eq!(chain.i_star, 1);
        assert_eq!(chain.stages[0].least_loaded, vec![0, 1, 2, 3]);
        assert!(close(chain.stages[0].car, 2.0));
        for (c, r) in chain.least_loaded_of.iter().enumerate() {
            assert_eq!(r, &t.types[c].servers);
        }
        assert_eq!(improvement_verdict(&t), (false, 0.5));
    }

    #[test]
    fn n_model_chain() {
        let t = make_nested(NestedKind::N, vec![1.0, 2.0], &[0.9, 0.1]).unwrap();
        let chain = subsystem_chain(&t);
        assert_eq!(chain.stages[0].least_loaded, vec![0]);
        assert!(close(chain.stages[0].car, 10.0));
        assert!(close(chain.stages[1].car, 2.0 / 0.9));
        assert!(close(n_model_lambda_r(1.0, 2.0, 0.9), 2.0 / 0.9));
        assert!(close(n_model_lambda_r(1.0, 2.0, 2.0 / 3.0), 3.0));
        assert!(close(n_model_lambda_r(1.0, 2.0, 0.25), 2.0));
    }

    #[test]
    fn bernoulli_frontier() {
        for mu in [1.0, 1.2, 2.0, 3.0] {
            let t = make_red_d(4, 2, geometric_capacities(4, mu)).unwrap();
            assert!(close(lambda_b(&t), 4.0));
        }
        let t = make_nested(NestedKind::N, vec![1.0, 2.0], &[0.8, 0.2]).unwrap();
        assert!(close(lambda_b(&t), (1.0f64 / 0.1).min(2.0 / 0.9)));
        let one = Topology::new(vec![3.0], vec![JobType::new(vec![0], 1.0)], 0.0).unwrap();
        assert_eq!(lambda_b(&one), 3.0);
    }

    #[test]
    fn jsq_frontier() {
        let w = make_nested(NestedKind::W, vec![1.0, 2.0], &[0.35, 0.40, 0.25]).unwrap();
        assert!(close(lambda_j(&w), 1.0 / 0.35));
        let pooled = Topology::new(vec![1.0, 2.0, 4.0], vec![JobType::new(vec![0, 1, 2], 1.0)], 0.0).unwrap();
        assert!(close(lambda_j(&pooled), 7.0));
        let split = Topology::new(
            vec![1.0, 2.0],
            vec![JobType::new(vec![0], 0.4), JobType::new(vec![1], 0.6)],
            0.0,
        )
        .unwrap();
        assert!(close(lambda_j(&split), 2.5));
    }

    #[test]
    fn jsq_frontier_matches_grid_search() {
        // W-model: split the flexible type with fraction x to server 0.
        let (p1, p2, p12) = (0.35, 0.40, 0.25);
        let mut best = 0.0f64;
        for i in 0..=100_000 {
            let x = i as f64 / 100_000.0;
            let v = (1.0 / (p1 + x * p12)).min(2.0 / (p2 + (1.0 - x) * p12));
            best = best.max(v);
        }
        let w = make_nested(NestedKind::W, vec![1.0, 2.0], &[p1, p2, p12]).unwrap();
        assert!((lambda_j(&w) - best).abs() < 1e-4);
    }

    #[test]
    fn red_d_closed_form() {
        assert!((red_d_lambda_r(5, 2, &geometric_capacities(5, 1.4)).unwrap() - 9.1467).abs() < 1e-4);
        assert!(close(red_d_lambda_r(10, 3, &geometric_capacities(10, 2.0)).unwrap(), 320.0));
        assert!(close(red_d_lambda_r(3, 2, &[1.0, 2.0, 4.0]).unwrap(), 6.0));
        assert!(matches!(red_d_lambda_r(3, 2, &[1.0, 1.0, 4.0]), Err(StabilityError::NotStrictlyIncreasing { index: 1 })));
        assert!(matches!(red_d_lambda_r(3, 2, &[2.0, 1.0, 4.0]), Err(StabilityError::NotStrictlyIncreasing { .. })));
        assert!(red_d_lambda_r(3, 4, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn w_model_closed_form() {
        assert!(close(w_model_lambda_r(1.0, 2.0, 1.0 / 3.0, 0.5, 1.0 / 6.0), 3.0));
        assert!(close(w_model_lambda_r(1.0, 1.0, 0.25, 0.25, 0.5), 4.0 / 3.0));
        assert!(close(w_model_lambda_r(1.0, 2.0, 0.35, 0.40, 0.25), 1.0 / 0.35));
        let t = make_nested(NestedKind::W, vec![1.0, 1.0], &[0.25, 0.25, 0.5]).unwrap();
        assert!(close(lambda_r(&t), 4.0 / 3.0));
        // Relabeling: swap the two servers.
        assert!(close(w_model_lambda_r(2.0, 1.0, 0.40, 0.35, 0.25), 1.0 / 0.35));
    }

    #[test]
    fn mu_star_examples() {
        let red = |k: usize, d: usize| move |mu: f64| make_red_d(k, d, geometric_capacities(k, mu)).unwrap();
        assert!((mu_star(red(3, 2), (1.0, 3.0)).unwrap() - 2f64.sqrt()).abs() < 1e-4);
        assert!((mu_star(red(4, 2), (1.0, 3.0)).unwrap() - 2f64.powf(1.0 / 3.0)).abs() < 1e-4);
        let w = |mu: f64| make_nested_uniform(NestedKind::W, geometric_capacities(2, mu)).unwrap();
        assert!((mu_star(w, (1.0, 3.0)).unwrap() - 4.0 / 3.0).abs() < 1e-4);
        assert!(matches!(mu_star(red(3, 2), (2.0, 3.0)), Err(StabilityError::NoSignChange { .. })));
    }

    #[test]
    fn linear_capacity_rule() {
        for (k, d) in [(4, 2), (5, 3), (10, 2)] {
            for m in [1.5, 2.0, 3.0, 4.0, 6.0] {
                let t = make_red_d(k, d, linear_capacities(k, m)).unwrap();
                assert!(close(lambda_r(&t), m * k as f64 / d as f64));
                let (verdict, _) = improvement_verdict(&t);
                assert_eq!(verdict, m >= d as f64, "K={k} d={d} M={m}");
            }
        }
    }

    #[test]
    fn lower_bound_capacities_example() {
        let t = example();
        let lb = lower_bound_capacities(&t, 3).unwrap();
        assert!(close(lb[0], 8.0 * 0.25) && close(lb[1], 8.0 * 0.25));
        assert_eq!(&lb[2..], &[0.0, 0.0]);
        // Servers of S_i get at least their capacity, with equality on L_i.
        let lb1 = lower_bound_capacities(&t, 1).unwrap();
        assert!(lb1.iter().zip(&t.capacities).all(|(a, b)| *a >= *b * (1.0 - 1e-12)));
        assert!(close(lb1[3], 5.0));
        assert!(lower_bound_capacities(&t, 4).is_err());
        assert_eq!(default_lb_stage(&t), 3);
        assert_eq!(default_lb_stage(&t.clone().with_lambda(12.0)), 1);
    }

    #[test]
    fn typeless_servers() {
        // Server 2 only shares a type with server 0, which is removed first.
        let t = Topology::new(
            vec![10.0, 1.0, 1.0],
            vec![JobType::new(vec![0, 2], 0.5), JobType::new(vec![1], 0.5)],
            1.5,
        )
        .unwrap();
        let chain = subsystem_chain(&t);
        assert_eq!(chain.stages[0].least_loaded, vec![0]);
        assert_eq!(chain.stages[1].least_loaded, vec![1]);
        assert_eq!(chain.stage_of_server(2), None);
        let v = classify_servers(&t);
        assert_eq!(v, vec![Verdict::Stable, Verdict::Stable, Verdict::Stable]);
        let v = classify_servers(&t.with_lambda(2.5));
        assert_eq!(v, vec![Verdict::Stable, Verdict::Unstable, Verdict::Stable]);
    }

    #[test]
    fn report_json_round_trip() {
        let rep = StabilityReport::new(&example());
        let json = rep.to_json();
        let back: StabilityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep.rounded());
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["lambda_R"], serde_json::json!(8.0));
        assert_eq!(v["verdicts"]["3"], "stable");
        assert!(v["stages"][0]["L"].is_array());
        let rep = StabilityReport::with_service(&example(), &ServiceDistribution::Deterministic);
        assert_eq!(rep.warnings.len(), 1);
    }
}
