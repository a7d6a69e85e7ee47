//! Stability analysis and simulation of redundancy systems with
//! multi-type jobs and multi-type servers.

pub mod experiments;
pub mod flow;
pub mod fluid;
pub mod model;
pub mod sim;
pub mod stability;

pub use model::{CapacityModulation, JobType, ModelError, NestedKind, Sampler, ServiceDistribution, Topology};
pub use stability::{StabilityReport, SubsystemChain, Verdict};

/// Significant digits used for every emitted real.
pub const OUTPUT_DIGITS: usize = 12;

/// Rounds to [`OUTPUT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", OUTPUT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Number of worker threads, capped by `REDLAB_THREADS` when set.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("REDLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

#[cfg(test)]
mod tests {
    use super::round_sig;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(8.000000000000002), 8.0);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::INFINITY).is_infinite());
    }
}
