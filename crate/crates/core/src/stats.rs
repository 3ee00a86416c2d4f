//! Summary statistics and goodness-of-fit tests used by the verification code.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

/// Streaming mean/variance (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Summary {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::new();
        for &x in xs {
            s.push(x);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Summary) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Standard error of the unbiased sample variance, from the fourth central moment.
pub fn variance_std_err(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let s = Summary::from_slice(xs);
    let m = s.mean();
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let v = s.variance();
    ((m4 - v * v * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series converges fast for small λ
        let t = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 0..50 {
            let j = (2 * k + 1) as f64;
            let term = (-(j * j) * t).exp();
            s += term;
            if term < 1e-18 {
                break;
            }
        }
        return 1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
    }
    let mut s = 0.0;
    for k in 1..101 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let rt = n_eff.sqrt();
    kolmogorov_sf((rt + 0.12 + 0.11 / rt) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult { statistic: d, p_value: ks_p(d, n) }
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    KsResult { statistic: d, p_value: ks_p(d, ne) }
}

/// Half-width of the 95% two-sample KS acceptance region, 1.358·√((n+m)/(nm)).
pub fn ks_two_sample_scale(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

impl LinearFit {
    /// Two-sided confidence interval for the slope at the given level (e.g. 0.99).
    pub fn slope_interval(&self, level: f64) -> (f64, f64) {
        let h = t_quantile((1.0 + level) / 2.0, (self.n - 2) as f64) * self.slope_se;
        (self.slope - h, self.slope + h)
    }

    pub fn intercept_interval(&self, level: f64) -> (f64, f64) {
        let h = t_quantile((1.0 + level) / 2.0, (self.n - 2) as f64) * self.intercept_se;
        (self.intercept - h, self.intercept + h)
    }
}

pub fn t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).expect("dof > 0").inverse_cdf(p)
}

/// Ordinary least squares of y on x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 3, "need at least three points");
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = rss / (nf - 2.0);
    LinearFit { slope, intercept, slope_se: (s2 / sxx).sqrt(), intercept_se: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(), n }
}

/// Least-squares slope of log y against log x (exponent of a power law).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    sxy / sxx
}

/// Pearson chi-square goodness of fit; returns (statistic, p-value).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("dof > 0").cdf(stat);
    (stat, p)
}

/// Control-variate estimate of E[y] given controls with known means.
///
/// Returns (estimate, standard error). The regression coefficients are fitted
/// on the same sample, which costs a bias of order 1/n.
pub fn control_variate_mean(y: &[f64], controls: &[(&[f64], f64)]) -> (f64, f64) {
    let n = y.len();
    let k = controls.len();
    if k == 0 {
        let s = Summary::from_slice(y);
        return (s.mean(), s.std_err());
    }
    let ym = y.iter().sum::<f64>() / n as f64;
    let cm: Vec<f64> = controls.iter().map(|(c, _)| c.iter().sum::<f64>() / n as f64).collect();
    let mut sxx = DMatrix::<f64>::zeros(k, k);
    let mut sxy = DVector::<f64>::zeros(k);
    for i in 0..n {
        for a in 0..k {
            let da = controls[a].0[i] - cm[a];
            sxy[a] += da * (y[i] - ym);
            for b in 0..k {
                sxx[(a, b)] += da * (controls[b].0[i] - cm[b]);
            }
        }
    }
    let beta = sxx.clone().lu().solve(&sxy).unwrap_or_else(|| DVector::zeros(k));
    let mut s = Summary::new();
    for i in 0..n {
        let mut v = y[i];
        for a in 0..k {
            v -= beta[a] * (controls[a].0[i] - controls[a].1);
        }
        s.push(v);
    }
    (s.mean(), s.std_err())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kolmogorov_reference_values() {
        // reference values from an independent library implementation
        for (l, want) in [
            (0.3, 0.9999906941986655),
            (0.5, 0.9639452436648751),
            (1.0, 0.26999967167735456),
            (1.36, 0.049485876755377876),
            (1.63, 0.009846364888486529),
            (2.5, 7.453306344157342e-06),
        ] {
            let got = kolmogorov_sf(l);
            assert!((got - want).abs() < 1e-10, "λ={l}: {got} vs {want}");
        }
    }

    #[test]
    fn summary_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let whole = Summary::from_slice(&xs);
        let mut a = Summary::from_slice(&xs[..40]);
        a.merge(&Summary::from_slice(&xs[40..]));
        assert!((whole.mean() - a.mean()).abs() < 1e-12);
        assert!((whole.variance() - a.variance()).abs() < 1e-12);
    }

    #[test]
    fn t_quantile_reference() {
        assert!((t_quantile(0.995, 10.0) - 3.16927267261695).abs() < 1e-8);
        assert!((t_quantile(0.995, 1000.0) - 2.580754698065942).abs() < 1e-8);
    }

    #[test]
    fn ks_uniform_not_rejected_shifted_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
        let s: Vec<f64> = u.iter().map(|x| (x + 0.05).min(1.0)).collect();
        assert!(ks_one_sample(&s, |x| x.clamp(0.0, 1.0)).p_value < 1e-6);
        let v: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&u, &v).p_value > 0.01);
        assert!(ks_two_sample(&s, &v).p_value < 1e-6);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((loglog_slope(&[1.0, 2.0, 4.0], &[1.0, 0.5, 0.25]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn control_variate_reduces_error_and_keeps_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..20000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let plain = Summary::from_slice(&y);
        let (est, se) = control_variate_mean(&y, &[(&x, 0.5)]);
        assert!(se < plain.std_err() / 3.0);
        assert!((est - 1.0 / 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let (stat, p) = chi_square_gof(&[100, 100, 100, 100], &[0.25; 4]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
