//! Subcritical Feller branching diffusion dX = √X dW − cX dt.
//!
//! The Laplace functional is E_x e^{−λX_t} = exp(−x v(t,λ)) with
//!
//! ```text
//! v(t,λ) = 2λc e^{−ct} / (λ(1 − e^{−ct}) + 2c)
//! ```
//!
//! Writing r(t) = 2c e^{−ct}/(1 − e^{−ct}) and u(t) = 2c/(1 − e^{−ct}), one
//! has v = r λ/(u + λ): X_t is a Poisson(x r(t)) number of independent
//! Exponential(u(t)) clusters. That is the exact sampler used everywhere.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{invalid, Result};

/// 1 − e^{−x} without cancellation for small x.
#[inline]
pub fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// Closed-form quantities of the c-subcritical diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerTransition {
    pub c: f64,
}

impl FellerTransition {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be positive, got {c}")));
        }
        Ok(Self { c })
    }

    pub fn v(&self, t: f64, lambda: f64) -> f64 {
        v_laplace(t, lambda, self.c)
    }

    /// Cluster rate r(t).
    pub fn r(&self, t: f64) -> f64 {
        cluster_rate(t, self.c)
    }

    /// Cluster scale u(t), the rate of each exponential cluster.
    pub fn u(&self, t: f64) -> f64 {
        cluster_scale(t, self.c)
    }
}

pub fn v_laplace(t: f64, lambda: f64, c: f64) -> f64 {
    let e = (-c * t).exp();
    2.0 * lambda * c * e / (lambda * one_minus_exp_neg(c * t) + 2.0 * c)
}

pub fn cluster_rate(t: f64, c: f64) -> f64 {
    2.0 * c * (-c * t).exp() / one_minus_exp_neg(c * t)
}

pub fn cluster_scale(t: f64, c: f64) -> f64 {
    2.0 * c / one_minus_exp_neg(c * t)
}

/// P(X_t ≠ 0 | X_0 = x0) = 1 − exp(−x0 r(t)).
pub fn survival_probability(x0: f64, t: f64, c: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("survival probability needs t > 0, got {t}")));
    }
    Ok(one_minus_exp_neg(x0 * cluster_rate(t, c)))
}

/// Exact draw of X_t given X_0 = x0.
pub fn fbd_transition_sample<R: Rng + ?Sized>(x0: f64, t: f64, c: f64, rng: &mut R) -> f64 {
    if x0 <= 0.0 {
        return 0.0;
    }
    if t <= 0.0 {
        return x0;
    }
    let mean_clusters = x0 * cluster_rate(t, c);
    if !(mean_clusters > 0.0) {
        return 0.0;
    }
    let k: f64 = Poisson::new(mean_clusters).expect("finite positive mean").sample(rng);
    if k == 0.0 {
        return 0.0;
    }
    // a sum of k Exponential(u) variables is Gamma(k, 1/u)
    Gamma::new(k, 1.0 / cluster_scale(t, c)).expect("positive shape").sample(rng)
}

/// Euler–Maruyama path absorbed at 0; an independent check on the exact sampler.
pub fn fbd_euler_sample<R: Rng + ?Sized>(x0: f64, t: f64, c: f64, dt: f64, rng: &mut R) -> f64 {
    assert!(dt > 0.0, "dt must be positive");
    let mut x = x0.max(0.0);
    let steps = (t / dt).round() as u64;
    let sq = dt.sqrt();
    for _ in 0..steps {
        if x <= 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(rng);
        x += x.sqrt() * sq * z - c * x * dt;
        if x < 0.0 {
            x = 0.0;
        }
    }
    x
}

/// Entrance-law density κ_t(x) = (2c)² e^{−ct}/(1−e^{−ct})² · exp(−2cx/(1−e^{−ct})).
pub fn kappa_density(t: f64, x: f64, c: f64) -> f64 {
    let d = one_minus_exp_neg(c * t);
    (2.0 * c).powi(2) * (-c * t).exp() / (d * d) * (-2.0 * c * x / d).exp()
}

/// Gamma(2ca, 2c), the one-level equilibrium with immigration level a.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLaw {
    pub shape: f64,
    pub rate: f64,
}

impl GammaLaw {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(a >= 0.0 && c > 0.0) {
            return Err(invalid(format!("need a ≥ 0 and c > 0, got a = {a}, c = {c}")));
        }
        Ok(Self { shape: 2.0 * c * a, rate: 2.0 * c })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    /// ∫x² γ_c(dx) = 1/(2c) for γ_c(dx) = 2c x^{−1} e^{−2cx} dx.
    pub fn levy_second_moment(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.shape <= 0.0 {
            return 0.0;
        }
        Gamma::new(self.shape, 1.0 / self.rate).expect("positive shape").sample(rng)
    }
}

pub fn gamma_equilibrium_sample<R: Rng + ?Sized>(a: f64, c: f64, rng: &mut R) -> f64 {
    GammaLaw::new(a, c).map(|g| g.sample(rng)).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, Summary};
    use rand::SeedableRng;

    fn rng(seed: u64) -> crate::Stream {
        crate::Stream::seed_from_u64(seed)
    }

    #[test]
    fn v_examples() {
        assert_eq!(v_laplace(0.0, 2.0, 1.0), 2.0);
        assert_eq!(v_laplace(3.0, 0.0, 1.5), 0.0);
        assert!((v_laplace(1.0, 1.0, 1.0) - 0.27953084438895875).abs() < 1e-15);
        // decreasing in t
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = v_laplace(i as f64 * 0.2, 1.3, 0.7);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn compound_poisson_laplace_is_v() {
        // E e^{-λX} for Poisson(x r) clusters of Exp(u) is exp(-x r λ/(u+λ))
        for &c in &[0.3, 1.0, 2.0] {
            for &t in &[1e-9, 0.01, 0.5, 3.0] {
                for &l in &[0.0, 0.1, 1.0, 20.0] {
                    let f = FellerTransition::new(c).unwrap();
                    let (r, u) = (f.r(t), f.u(t));
                    let via_clusters = r * l / (u + l);
                    assert!((via_clusters - f.v(t, l)).abs() <= 1e-12 * f.v(t, l).max(1e-300));
                    assert!((r - u * (-c * t).exp()).abs() <= 1e-12 * r);
                }
            }
        }
    }

    #[test]
    fn survival_examples() {
        assert_eq!(survival_probability(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((survival_probability(0.5, 1.0, 1.0).unwrap() - 0.4412072952372531).abs() < 1e-15);
        assert!(survival_probability(3.0, 200.0, 1.0).unwrap() < 1e-80);
        assert!(survival_probability(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn small_time_has_no_cancellation() {
        let r = cluster_rate(1e-12, 1.0);
        assert!(((r - 2e12) / 2e12).abs() < 1e-6);
    }

    #[test]
    fn exact_sampler_moments_and_extinction() {
        let mut g = rng(1);
        let (x0, t, c) = (1.5, 0.7, 1.2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| fbd_transition_sample(x0, t, c, &mut g)).collect();
        let s = Summary::from_slice(&xs);
        assert!((s.mean() - x0 * (-c * t).exp()).abs() < 4.0 * s.std_err());
        let p0 = xs.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let want = 1.0 - survival_probability(x0, t, c).unwrap();
        assert!((p0 - want).abs() < 4.0 * (want * (1.0 - want) / n as f64).sqrt());
        assert_eq!(fbd_transition_sample(0.0, 1.0, 1.0, &mut g), 0.0);
    }

    #[test]
    fn semigroup_consistency() {
        let mut g = rng(2);
        let (x0, c) = (1.0, 1.0);
        let one: Vec<f64> = (0..20_000).map(|_| fbd_transition_sample(x0, 1.0, c, &mut g)).collect();
        let two: Vec<f64> = (0..20_000)
            .map(|_| {
                let y = fbd_transition_sample(x0, 0.4, c, &mut g);
                fbd_transition_sample(y, 0.6, c, &mut g)
            })
            .collect();
        assert!(ks_two_sample(&one, &two).p_value > 0.01);
    }

    #[test]
    fn branching_property_moments() {
        let mut g = rng(3);
        let n = 50_000;
        let whole: Vec<f64> = (0..n).map(|_| fbd_transition_sample(1.0, 0.8, 1.0, &mut g)).collect();
        let split: Vec<f64> =
            (0..n).map(|_| fbd_transition_sample(0.3, 0.8, 1.0, &mut g) + fbd_transition_sample(0.7, 0.8, 1.0, &mut g)).collect();
        let (a, b) = (Summary::from_slice(&whole), Summary::from_slice(&split));
        let se = (a.std_err().powi(2) + b.std_err().powi(2)).sqrt();
        assert!((a.mean() - b.mean()).abs() < 4.0 * se);
        let vse = (crate::stats::variance_std_err(&whole).powi(2) + crate::stats::variance_std_err(&split).powi(2)).sqrt();
        assert!((a.variance() - b.variance()).abs() < 4.0 * vse);
    }

    #[test]
    fn entrance_law_limit_of_rescaled_survival() {
        let (t, c) = (1.0, 1.0);
        let r = cluster_rate(t, c);
        let err = |eps: f64| (survival_probability(eps, t, c).unwrap() / eps - r).abs();
        assert!(err(0.01) < err(0.1));
        assert!(err(0.01) < 0.01 * r);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn kappa_mass_and_first_moment() {
        for &(t, c) in &[(1.0, 1.0), (0.3, 2.0), (2.0, 0.5)] {
            let u = cluster_scale(t, c);
            let upper = 60.0 / u;
            let mass = simpson(|x| kappa_density(t, x, c), 0.0, upper, 20_000);
            assert!((mass - cluster_rate(t, c)).abs() < 1e-10, "mass {mass}");
            let m1 = simpson(|x| x * kappa_density(t, x, c), 0.0, upper, 20_000);
            assert!((m1 - (-c * t).exp()).abs() < 1e-10);
            // exponential shape with rate u
            let ratio = kappa_density(t, 1.0, c) / kappa_density(t, 0.0, c);
            assert!((ratio - (-u).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_equilibrium() {
        let mut g = rng(4);
        assert_eq!(gamma_equilibrium_sample(0.0, 1.0, &mut g), 0.0);
        let xs: Vec<f64> = (0..100_000).map(|_| gamma_equilibrium_sample(1.0, 1.0, &mut g)).collect();
        let s = Summary::from_slice(&xs);
        assert!((s.mean() - 1.0).abs() < 4.0 * s.std_err());
        assert!((s.variance() - 0.5).abs() < 4.0 * crate::stats::variance_std_err(&xs));
        let law = GammaLaw::new(1.0, 1.0).unwrap();
        assert_eq!(law.levy_second_moment(), 0.5);
        assert_eq!(law.variance(), 0.5);
    }
}
