//! Compensated summation and small sample-statistics helpers.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut k = KahanSum::new();
    for &x in xs {
        k.add(x);
    }
    k.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Unbiased (divisor n-1) sample covariance; 0 for fewer than two samples.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut k = KahanSum::new();
    for (x, y) in xs.iter().zip(ys) {
        k.add((x - mx) * (y - my));
    }
    k.value() / (n - 1) as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs).max(0.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// `log(mean(exp(xs)))` with max-shift.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut k = KahanSum::new();
    for &x in xs {
        k.add((x - m).exp());
    }
    m + (k.value() / xs.len() as f64).ln()
}

/// Mean and standard deviation (divisor n-1) of a sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    (mean(xs), std_dev(xs))
}
