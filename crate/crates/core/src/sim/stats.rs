/// Time integrals of the job count and per-server copy counts.
#[derive(Debug, Clone)]
pub(crate) struct Accumulator {
    pub time: f64,
    pub jobs: f64,
    pub copies: Vec<f64>,
}

impl Accumulator {
    pub fn new(k: usize) -> Self {
        Accumulator { time: 0.0, jobs: 0.0, copies: vec![0.0; k] }
    }

    pub fn add(&mut self, dt: f64, jobs: usize, copies: &[usize]) {
        if dt <= 0.0 {
            return;
        }
        self.time += dt;
        self.jobs += jobs as f64 * dt;
        for (a, &m) in self.copies.iter_mut().zip(copies) {
            *a += m as f64 * dt;
        }
    }

    pub fn averages(&self) -> (f64, Vec<f64>) {
        if self.time == 0.0 {
            return (0.0, vec![0.0; self.copies.len()]);
        }
        (self.jobs / self.time, self.copies.iter().map(|c| c / self.time).collect())
    }
}

/// Sums over regenerative cycles for the ratio estimator.
#[derive(Debug, Clone)]
pub(crate) struct CycleStats {
    pub n: u64,
    sum_y: f64,
    sum_t: f64,
    sum_yy: f64,
    sum_tt: f64,
    sum_yt: f64,
    per_server: Vec<f64>,
}

impl CycleStats {
    pub fn new(k: usize) -> Self {
        CycleStats { n: 0, sum_y: 0.0, sum_t: 0.0, sum_yy: 0.0, sum_tt: 0.0, sum_yt: 0.0, per_server: vec![0.0; k] }
    }

    pub fn push(&mut self, cycle: &Accumulator) {
        let (y, t) = (cycle.jobs, cycle.time);
        self.n += 1;
        self.sum_y += y;
        self.sum_t += t;
        self.sum_yy += y * y;
        self.sum_tt += t * t;
        self.sum_yt += y * t;
        for (a, c) in self.per_server.iter_mut().zip(&cycle.copies) {
            *a += c;
        }
    }

    /// Ratio estimate and 95% CLT half-width.
    pub fn estimate(&self) -> (f64, f64) {
        if self.n == 0 || self.sum_t == 0.0 {
            return (0.0, 0.0);
        }
        let r = self.sum_y / self.sum_t;
        if self.n < 2 {
            return (r, 0.0);
        }
        let n = self.n as f64;
        let ss = (self.sum_yy - 2.0 * r * self.sum_yt + r * r * self.sum_tt).max(0.0);
        let s = (ss / (n - 1.0)).sqrt();
        let tau = self.sum_t / n;
        (r, 1.96 * s / (tau * n.sqrt()))
    }

    pub fn per_server(&self) -> Vec<f64> {
        if self.sum_t == 0.0 {
            return vec![0.0; self.per_server.len()];
        }
        self.per_server.iter().map(|c| c / self.sum_t).collect()
    }
}

/// Least-squares line fit with the t-statistic of the slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ols {
    pub slope: f64,
    pub intercept: f64,
    pub t_stat: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Ols {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let t_stat = if slope == 0.0 {
        0.0
    } else if sse <= 0.0 || n <= 2.0 {
        slope.signum() * f64::INFINITY
    } else {
        slope / (sse / (n - 2.0) / sxx).sqrt()
    };
    Ols { slope, intercept, t_stat }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = ols(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!(f.t_stat.is_infinite());
        let f = ols(&x, &[1.0; 4]);
        assert_eq!((f.slope, f.t_stat), (0.0, 0.0));
    }

    #[test]
    fn ols_t_stat() {
        // y = x + alternating noise.
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let f = ols(&x, &y);
        let sxx = 82.5;
        let resid: f64 = x.iter().zip(&y).map(|(a, b)| (b - f.intercept - f.slope * a).powi(2)).sum();
        assert!((f.t_stat - f.slope / (resid / 8.0 / sxx).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn ratio_estimator() {
        let mut c = CycleStats::new(1);
        for (y, t) in [(2.0, 1.0), (4.0, 2.0), (3.0, 1.0)] {
            c.push(&Accumulator { time: t, jobs: y, copies: vec![y] });
        }
        let (r, half) = c.estimate();
        assert!((r - 9.0 / 4.0).abs() < 1e-12);
        let z: Vec<f64> = [(2.0, 1.0), (4.0, 2.0), (3.0, 1.0)].iter().map(|(y, t)| y - r * t).collect();
        let s = (z.iter().map(|v| v * v).sum::<f64>() / 2.0).sqrt();
        assert!((half - 1.96 * s / (4.0 / 3.0 * 3f64.sqrt())).abs() < 1e-12);
        assert_eq!(c.per_server(), vec![9.0 / 4.0]);
    }
}
