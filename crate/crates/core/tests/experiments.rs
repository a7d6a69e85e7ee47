use redlab_core::experiments::{manifest, reproduce_table, sweep_mean_jobs, write_sweep_csv, Family, SweepRow, SweepSpec};
use redlab_core::sim::Dispatch;

fn row<'a>(rows: &'a [SweepRow], x: f64, d: Dispatch) -> &'a SweepRow {
    rows.iter().find(|r| r.x == x && r.dispatch == d).expect("row present")
}

#[test]
fn tables_are_byte_stable() {
    for id in [2, 3, 4] {
        let a = reproduce_table(id).unwrap().to_csv_string();
        let b = reproduce_table(id).unwrap().to_csv_string();
        assert_eq!(a, b, "table {id}");
        assert!(a.lines().count() > 1);
    }
    assert!(reproduce_table(3).unwrap().to_csv_string().contains("\n4,2,4,8,4\n"));
    assert!(reproduce_table(5).is_err());
}

#[test]
fn w_model_orderings_at_matched_points() {
    let mut spec = SweepSpec::new(Family::WModelP12Sweep, vec![1.5]);
    spec.p12 = vec![0.1, 0.3, 0.5];
    spec.busy_periods = 30_000;
    spec.seed = 5;
    let rows = sweep_mean_jobs(&spec).unwrap();
    assert_eq!(rows.len(), 9);
    for &x in &spec.p12 {
        let (red, bern, jsq) = (row(&rows, x, Dispatch::Redundancy), row(&rows, x, Dispatch::Bernoulli), row(&rows, x, Dispatch::Jsq));
        assert!(!red.diverged && !bern.diverged && !jsq.diverged);
        assert!(
            jsq.mean_jobs <= red.mean_jobs + red.ci_half_width + jsq.ci_half_width,
            "p12={x}: jsq {} vs redundancy {}",
            jsq.mean_jobs,
            red.mean_jobs
        );
        assert!(
            red.mean_jobs <= bern.mean_jobs + bern.ci_half_width + red.ci_half_width,
            "p12={x}: redundancy {} vs bernoulli {}",
            red.mean_jobs,
            bern.mean_jobs
        );
    }
}

#[test]
fn wide_intervals_are_flagged_not_dropped() {
    let mut spec = SweepSpec::new(Family::WModelMu2Sweep, vec![1.0, 2.0]);
    spec.mu = vec![2.0];
    spec.busy_periods = 200;
    spec.max_ci = Some(1e-6);
    let rows = sweep_mean_jobs(&spec).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ci_exceeded && r.ci_half_width >= 0.0));
}

#[test]
fn zero_arrivals_give_an_empty_system() {
    let mut spec = SweepSpec::new(Family::WModelP12Sweep, vec![0.0]);
    spec.p12 = vec![0.0];
    spec.busy_periods = 10;
    let rows = sweep_mean_jobs(&spec).unwrap();
    assert!(rows.iter().all(|r| r.mean_jobs == 0.0));
}

#[test]
fn sweeps_are_reproducible_and_carry_frontiers() {
    let mut spec = SweepSpec::new(Family::RedDGeometric, vec![1.0]);
    spec.k = vec![4];
    spec.d = vec![2];
    spec.mu = vec![1.0, 1.4];
    spec.busy_periods = 2000;
    let a = sweep_mean_jobs(&spec).unwrap();
    let b = sweep_mean_jobs(&spec).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.lambda_r <= r.lambda_j * (1.0 + 1e-9)));
    let mut csv = Vec::new();
    write_sweep_csv(&a, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("label,x,lambda,dispatch,scheduling,mean_jobs"));
    assert_eq!(text.lines().count(), a.len() + 1);
}

#[test]
fn missing_grids_are_reported() {
    let spec = SweepSpec::new(Family::RedDLinear, vec![1.0]);
    let err = sweep_mean_jobs(&spec).unwrap_err().to_string();
    assert!(err.contains('K'), "{err}");
    let spec = SweepSpec::new(Family::NestedGeometric, vec![]);
    assert!(sweep_mean_jobs(&spec).unwrap_err().to_string().contains("lambdas"));
}

#[test]
fn manifest_records_seeds() {
    let m = manifest("sweep", serde_json::json!({"family": "w_model_p12_sweep"}), &[7, 8]);
    assert_eq!(m["seeds"], serde_json::json!([7, 8]));
    assert_eq!(m["command"], "sweep");
}
