//! The hierarchical group Ω_N truncated at depth D.
//!
//! A site is a digit string of length D with digits in `0..N`. Digit `i`
//! (0-based) belongs to level `i + 1`, so the most significant level is
//! stored last. Sites are also addressed by their integer index
//! `Σ digit_i · N^i`; balls of radius ℓ are then contiguous, aligned index
//! ranges of length N^ℓ.
//!
//! The distance between two sites is the index of the highest differing
//! digit plus one, which is an ultrametric. A walk jumps to distance ℓ at
//! rate q_ℓ and lands uniformly on the sphere of radius ℓ.
//!
//! The truncated walk leaves the box B_D at rate q_{D+1}
//! ([`Boundary::Absorbing`]), which keeps its occupation measure finite.

use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    n: u32,
    depth: usize,
    powers: Vec<u64>,
}

impl GroupSpec {
    pub fn new(n: u32, depth: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("N must be at least 2, got {n}")));
        }
        if depth < 1 {
            return Err(invalid("depth D must be at least 1"));
        }
        let mut powers = Vec::with_capacity(depth + 1);
        let mut p: u64 = 1;
        for _ in 0..=depth {
            powers.push(p);
            p = p.checked_mul(n as u64).filter(|&v| v <= 1 << 62).unwrap_or(u64::MAX);
        }
        if powers[depth] > 1 << 62 {
            return Err(invalid(format!("N^D = {n}^{depth} sites is too large")));
        }
        Ok(Self { n, depth, powers })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn site_count(&self) -> u64 {
        self.powers[self.depth]
    }

    /// N^ℓ for ℓ ≤ D.
    pub fn power(&self, l: usize) -> u64 {
        self.powers[l]
    }

    /// Number of sites in a ball of radius ℓ.
    pub fn ball_size(&self, l: usize) -> u64 {
        self.powers[l]
    }

    /// Number of sites at distance exactly ℓ (ℓ ≥ 1); 1 for ℓ = 0.
    pub fn sphere_size(&self, l: usize) -> u64 {
        if l == 0 {
            1
        } else {
            (self.n as u64 - 1) * self.powers[l - 1]
        }
    }

    pub fn address(&self, index: u64) -> Address {
        let mut digits = Vec::with_capacity(self.depth);
        let mut x = index;
        for _ in 0..self.depth {
            digits.push((x % self.n as u64) as u32);
            x /= self.n as u64;
        }
        Address { digits }
    }

    pub fn index(&self, a: &Address) -> Result<u64> {
        if a.digits.len() != self.depth {
            return Err(invalid(format!("address has depth {}, group has {}", a.digits.len(), self.depth)));
        }
        let mut x = 0;
        for (i, &d) in a.digits.iter().enumerate() {
            if d >= self.n {
                return Err(invalid(format!("digit {d} out of range for N = {}", self.n)));
            }
            x += d as u64 * self.powers[i];
        }
        Ok(x)
    }

    /// Hierarchical distance between two site indices.
    #[inline]
    pub fn distance(&self, x: u64, y: u64) -> usize {
        let mut l = 0;
        while x / self.powers[l] != y / self.powers[l] {
            l += 1;
        }
        l
    }

    /// Index of the radius-ℓ block containing site `x`.
    #[inline]
    pub fn block_of(&self, x: u64, l: usize) -> u64 {
        x / self.powers[l]
    }

    /// Uniform site on the sphere of radius `l ≥ 1` around `x`.
    #[inline]
    pub fn uniform_on_sphere<R: Rng + ?Sized>(&self, x: u64, l: usize, rng: &mut R) -> u64 {
        let n = self.n as u64;
        let low_span = self.powers[l - 1];
        let high = x / self.powers[l];
        let old = (x / low_span) % n;
        let new = (old + 1 + rng.random_range(0..n - 1)) % n;
        let low = rng.random_range(0..low_span);
        (high * n + new) * low_span + low
    }

    /// One jump of the truncated walk from `x`; returns the new site and the jump distance.
    #[inline]
    pub fn sample_jump_index<R: Rng + ?Sized>(&self, x: u64, rates: &RateTable, rng: &mut R) -> (u64, usize) {
        let l = rates.sample_level(rng);
        (self.uniform_on_sphere(x, l, rng), l)
    }
}

/// Digit string, level-1 digit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Address {
    pub digits: Vec<u32>,
}

impl Address {
    pub fn new(digits: Vec<u32>) -> Self {
        Self { digits }
    }

    pub fn origin(depth: usize) -> Self {
        Self { digits: vec![0; depth] }
    }

    /// Parses a written address such as `"100"`; the leftmost character is
    /// the highest level, as in ordinary positional notation.
    pub fn parse(s: &str) -> Result<Self> {
        let mut digits = Vec::with_capacity(s.len());
        for ch in s.chars().rev() {
            let d = ch.to_digit(36).ok_or_else(|| invalid(format!("bad digit {ch:?} in address {s:?}")))?;
            digits.push(d);
        }
        if digits.is_empty() {
            return Err(invalid("empty address"));
        }
        Ok(Self { digits })
    }

    pub fn depth(&self) -> usize {
        self.digits.len()
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.digits.iter().rev() {
            write!(f, "{}", std::char::from_digit(*d, 36).unwrap_or('?'))?;
        }
        Ok(())
    }
}

/// Depth of the closest common ancestor; 0 iff the addresses are equal.
pub fn hierarchical_distance(x: &Address, y: &Address) -> Result<usize> {
    if x.depth() != y.depth() {
        return Err(invalid(format!("address depths differ: {} vs {}", x.depth(), y.depth())));
    }
    Ok(x.digits.iter().zip(&y.digits).rposition(|(a, b)| a != b).map_or(0, |i| i + 1))
}

/// How the coefficients continue beyond an explicit list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailRule {
    /// c_{k+1}/c_k stays equal to the last listed ratio.
    RepeatLastRatio,
    /// c_k grows like (k+1)^p, anchored at the last listed value.
    PowerLaw { exponent: f64 },
}

/// The sequence (c_ℓ)_{ℓ ≥ 0}.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSequence {
    /// c_ℓ = c · b^ℓ.
    Geometric {
        c: f64,
        b: f64,
    },
    Explicit {
        values: Vec<f64>,
        tail: Option<TailRule>,
    },
}

impl CoefficientSequence {
    pub fn geometric(c: f64, b: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("geometric coefficients need c > 0 and b > 0, got c = {c}, b = {b}")));
        }
        Ok(Self::Geometric { c, b })
    }

    pub fn explicit(values: Vec<f64>, tail: Option<TailRule>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("explicit coefficient list is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("coefficients must be positive, found {v}")));
        }
        if tail == Some(TailRule::RepeatLastRatio) && values.len() < 2 {
            return Err(invalid("repeat-last-ratio tail needs at least two listed values"));
        }
        Ok(Self::Explicit { values, tail })
    }

    /// c_ℓ, or `None` past the end of an explicit list without a tail rule.
    pub fn get(&self, l: usize) -> Option<f64> {
        match self {
            Self::Geometric { c, b } => Some(c * b.powi(l as i32)),
            Self::Explicit { values, tail } => {
                if l < values.len() {
                    return Some(values[l]);
                }
                let last = values.len() - 1;
                match tail {
                    None => None,
                    Some(TailRule::RepeatLastRatio) => {
                        let r = values[last] / values[last - 1];
                        Some(values[last] * r.powi((l - last) as i32))
                    }
                    Some(TailRule::PowerLaw { exponent }) => Some(values[last] * ((l + 1) as f64 / (last + 1) as f64).powf(*exponent)),
                }
            }
        }
    }

    /// Eventual growth ratio c_{ℓ+1}/c_ℓ of the tail, when declared.
    fn tail_ratio(&self) -> Option<f64> {
        match self {
            Self::Geometric { b, .. } => Some(*b),
            Self::Explicit { values, tail } => match tail {
                None => None,
                Some(TailRule::RepeatLastRatio) => Some(values[values.len() - 1] / values[values.len() - 2]),
                Some(TailRule::PowerLaw { .. }) => Some(1.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Jumps leaving B_D kill the walker; exit rate q_{D+1}.
    Absorbing,
    /// Jumps beyond D are dropped; the walk stays in B_D forever.
    Closed,
}

/// Per-distance jump rates of the truncated walk.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub n: u32,
    pub level_exponent: u8,
    /// q_1..q_D (index 0 holds q_1).
    pub rates: Vec<f64>,
    /// Killing rate for leaving B_D.
    pub exit_rate: f64,
    /// Σ_{ℓ > D} q_ℓ, when computable (may be infinite).
    pub residual_rate: Option<f64>,
    pub boundary: Boundary,
    cumulative: Vec<f64>,
}

impl RateTable {
    /// q_ℓ for 1 ≤ ℓ ≤ D.
    pub fn q(&self, l: usize) -> f64 {
        self.rates[l - 1]
    }

    pub fn depth(&self) -> usize {
        self.rates.len()
    }

    /// Σ_{ℓ=1}^D q_ℓ.
    pub fn total_jump_rate(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Jump distance ℓ with probability q_ℓ / Σ q.
    #[inline]
    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total_jump_rate();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1) + 1
    }
}

fn level_rate(coeffs: &CoefficientSequence, n: u32, level_exponent: u8, l: usize) -> Option<f64> {
    let c = coeffs.get(l - 1)?;
    Some(c * (n as f64).powf(-((l - 1) as f64) / level_exponent as f64))
}

/// Rate table with the absorbing boundary.
pub fn make_rate_table(spec: &GroupSpec, coeffs: &CoefficientSequence, level_exponent: u8) -> Result<RateTable> {
    make_rate_table_with(spec, coeffs, level_exponent, Boundary::Absorbing)
}

pub fn make_rate_table_with(spec: &GroupSpec, coeffs: &CoefficientSequence, level_exponent: u8, boundary: Boundary) -> Result<RateTable> {
    if level_exponent != 1 && level_exponent != 2 {
        return Err(invalid(format!("level exponent must be 1 or 2, got {level_exponent}")));
    }
    let n = spec.n();
    let d = spec.depth();
    let mut rates = Vec::with_capacity(d);
    for l in 1..=d {
        let q = level_rate(coeffs, n, level_exponent, l).ok_or_else(|| invalid(format!("coefficient c_{} is not defined", l - 1)))?;
        if !(q > 0.0 && q.is_finite()) {
            return Err(invalid(format!("rate q_{l} = {q} is not positive")));
        }
        rates.push(q);
    }
    let exit_rate = match boundary {
        Boundary::Closed => 0.0,
        Boundary::Absorbing => level_rate(coeffs, n, level_exponent, d + 1).ok_or_else(|| {
            invalid(format!("absorbing boundary needs c_{d} for the exit rate; declare a tail rule or use the closed boundary"))
        })?,
    };
    let residual_rate = residual(coeffs, n, level_exponent, d);
    let cumulative = rates
        .iter()
        .scan(0.0, |acc, q| {
            *acc += q;
            Some(*acc)
        })
        .collect();
    Ok(RateTable { n, level_exponent, rates, exit_rate, residual_rate, boundary, cumulative })
}

fn residual(coeffs: &CoefficientSequence, n: u32, k: u8, d: usize) -> Option<f64> {
    let shrink = (n as f64).powf(-1.0 / k as f64);
    match coeffs {
        CoefficientSequence::Geometric { c, b } => {
            let rho = b * shrink;
            Some(if rho < 1.0 { c * rho.powi(d as i32) / (1.0 - rho) } else { f64::INFINITY })
        }
        CoefficientSequence::Explicit { tail: None, .. } => None,
        CoefficientSequence::Explicit { values, tail: Some(rule) } => {
            // explicit part, then the tail in closed form or summed to convergence
            let mut sum = 0.0;
            let mut l = d + 1;
            while l <= values.len() {
                sum += level_rate(coeffs, n, k, l)?;
                l += 1;
            }
            match rule {
                TailRule::RepeatLastRatio => {
                    let rho = coeffs.tail_ratio()? * shrink;
                    if rho >= 1.0 {
                        return Some(f64::INFINITY);
                    }
                    Some(sum + level_rate(coeffs, n, k, l)? / (1.0 - rho))
                }
                TailRule::PowerLaw { .. } => {
                    for _ in 0..100_000 {
                        let q = level_rate(coeffs, n, k, l)?;
                        sum += q;
                        l += 1;
                        if q < 1e-17 * sum {
                            break;
                        }
                    }
                    Some(sum)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transience {
    NotTransient,
    Transient,
    StronglyTransient,
    Undetermined,
}

/// Degree of transience, exact when `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeBound {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransienceReport {
    pub classification: Transience,
    pub degree: Option<DegreeBound>,
    /// Σ 1/c_ℓ (level 1) or Σ 1/c_ℓ² (level 2); infinite when divergent.
    pub criterion_value: f64,
    pub diagnostic: Option<String>,
}

fn geometric_sum(x: f64) -> f64 {
    if x < 1.0 {
        1.0 / (1.0 - x)
    } else {
        f64::INFINITY
    }
}

fn degree_formula(b: f64, n: f64, level_exponent: u8) -> f64 {
    if level_exponent == 1 {
        b.ln() / (n.ln() - b.ln())
    } else {
        (n.ln() + 2.0 * b.ln()) / (n.ln() - 2.0 * b.ln())
    }
}

/// Classifies the walk with rates built from `coeffs`.
///
/// Level 1 is transient iff Σ 1/c_ℓ < ∞ and strongly transient iff
/// Σ N^ℓ/c_ℓ² < ∞. Level 2 is transient iff Σ N^{−ℓ/2}/c_ℓ < ∞ and strongly
/// transient iff Σ 1/c_ℓ² < ∞. The degree is the supremum of η with
/// Σ_ℓ (N^{ℓ/k}/c_ℓ)^{η+1} N^{−ℓ} < ∞, which depends only on the tail.
pub fn classify_transience(coeffs: &CoefficientSequence, level_exponent: u8, n: u32) -> Result<TransienceReport> {
    if level_exponent != 1 && level_exponent != 2 {
        return Err(invalid(format!("level exponent must be 1 or 2, got {level_exponent}")));
    }
    if n < 2 {
        return Err(invalid("N must be at least 2"));
    }
    let nf = n as f64;
    let growth_cap = if level_exponent == 1 { nf } else { nf.sqrt() };
    if let Some(r) = coeffs.tail_ratio() {
        if r >= growth_cap {
            return Err(invalid(format!(
                "growth constraint violated: tail ratio {r} is not below {growth_cap} (N = {n}, level {level_exponent})"
            )));
        }
    }
    let power = level_exponent as i32;
    match coeffs {
        CoefficientSequence::Geometric { c, b } => {
            let b = *b;
            let criterion_value = geometric_sum(1.0 / b.powi(power)) / c.powi(power);
            let (transient, strong) = if level_exponent == 1 { (b > 1.0, b * b > nf) } else { (b * nf.sqrt() > 1.0, b > 1.0) };
            let classification = if strong {
                Transience::StronglyTransient
            } else if transient {
                Transience::Transient
            } else {
                Transience::NotTransient
            };
            let degree = transient.then(|| {
                let g = degree_formula(b, nf, level_exponent);
                DegreeBound { lo: g, hi: g }
            });
            Ok(TransienceReport { classification, degree, criterion_value, diagnostic: None })
        }
        CoefficientSequence::Explicit { values, tail } => {
            let partial: f64 = values.iter().map(|v| v.powi(-power)).sum();
            match tail {
                None => Ok(TransienceReport {
                    classification: Transience::Undetermined,
                    degree: None,
                    criterion_value: partial,
                    diagnostic: Some(format!(
                        "finite list of {} coefficients without a tail rule; partial series value {partial}",
                        values.len()
                    )),
                }),
                Some(TailRule::RepeatLastRatio) => {
                    let r = coeffs.tail_ratio().unwrap();
                    let last = values[values.len() - 1];
                    let tail_sum = (last * r).powi(-power) * geometric_sum(r.powi(-power));
                    let mut rep = classify_transience(&CoefficientSequence::Geometric { c: 1.0, b: r }, level_exponent, n)?;
                    rep.criterion_value = partial + tail_sum;
                    Ok(rep)
                }
                Some(TailRule::PowerLaw { exponent: p }) => {
                    let p = *p;
                    // Σ_k (k+1)^{-p·power}: convergence decided by p·power > 1
                    let conv = p * power as f64 > 1.0;
                    let criterion_value = if conv {
                        let mut s = partial;
                        let mut l = values.len();
                        loop {
                            let t = coeffs.get(l).unwrap().powi(-power);
                            s += t;
                            l += 1;
                            if l > 200_000 {
                                // integral estimate of what is left
                                let e = p * power as f64;
                                s += t * l as f64 / (e - 1.0);
                                break;
                            }
                            if t < 1e-16 * s {
                                break;
                            }
                        }
                        s
                    } else {
                        f64::INFINITY
                    };
                    let (classification, degree) = if level_exponent == 1 {
                        if p > 1.0 {
                            (Transience::Transient, Some(DegreeBound { lo: 0.0, hi: 0.0 }))
                        } else {
                            (Transience::NotTransient, None)
                        }
                    } else if 2.0 * p > 1.0 {
                        (Transience::StronglyTransient, Some(DegreeBound { lo: 1.0, hi: 1.0 }))
                    } else {
                        (Transience::Transient, Some(DegreeBound { lo: 1.0, hi: 1.0 }))
                    };
                    Ok(TransienceReport { classification, degree, criterion_value, diagnostic: None })
                }
            }
        }
    }
}

/// Degree of transience for c_ℓ = c^ℓ.
///
/// Level 1: log c / (log N − log c) for 1 < c < N.
/// Level 2: (log N + 2 log c) / (log N − 2 log c) for 1 < c < √N.
pub fn degree_of_transience(c: f64, n: u32, level_exponent: u8) -> Result<f64> {
    let nf = n as f64;
    let upper = match level_exponent {
        1 => nf,
        2 => nf.sqrt(),
        k => return Err(invalid(format!("level exponent must be 1 or 2, got {k}"))),
    };
    if !(c > 1.0 && c < upper) {
        return Err(invalid(format!("c = {c} outside the transient range (1, {upper}) for N = {n}")));
    }
    Ok(degree_formula(c, nf, level_exponent))
}

/// Radial Green function of the killed walk started at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenOperator {
    n: u32,
    /// g(d) for d = 0..D: expected time spent at one site at distance d.
    pub radial_values: Vec<f64>,
    /// Expected time spent on the whole sphere of radius d.
    pub sphere_occupation: Vec<f64>,
}

/// ⟨φ,φ⟩, ⟨φ,Gφ⟩, ⟨φ,G²φ⟩ for φ = N^{−ℓ} 1_{B_ℓ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPairings {
    pub phi_phi: f64,
    pub phi_g_phi: f64,
    pub phi_g2_phi: f64,
}

impl GreenOperator {
    pub fn depth(&self) -> usize {
        self.radial_values.len() - 1
    }

    pub fn g(&self, d: usize) -> f64 {
        self.radial_values[d]
    }

    pub fn block_pairings(&self, l: usize) -> BlockPairings {
        let n = self.n as f64;
        let d_max = self.depth();
        let vol = n.powi(l as i32);
        let s: f64 = self.sphere_occupation[..=l].iter().sum();
        let inside = s / vol;
        let mut g2 = vol * inside * inside;
        for d in l + 1..=d_max {
            g2 += (n - 1.0) * n.powi(d as i32 - 1) * self.radial_values[d].powi(2);
        }
        BlockPairings { phi_phi: 1.0 / vol, phi_g_phi: inside, phi_g2_phi: g2 }
    }

    /// Equilibrium E[ζ_ℓ²] for the branching walk with individual branching
    /// rate `v1` and family branching rate `v2`:
    /// θ² + θ⟨φ,φ⟩ + ½(v1+v2)θ⟨φ,Gφ⟩ + ¼ v1 v2 θ⟨φ,G²φ⟩.
    pub fn block_second_moment(&self, theta: f64, l: usize, v1: f64, v2: f64) -> f64 {
        let p = self.block_pairings(l);
        theta * theta + theta * p.phi_phi + 0.5 * (v1 + v2) * theta * p.phi_g_phi + 0.25 * v1 * v2 * theta * p.phi_g2_phi
    }
}

/// Solves the distance-from-origin chain of the killed walk.
///
/// From distance d a jump of level ℓ > d moves to distance ℓ, a jump of
/// level ℓ < d keeps the distance, and a jump of level d lands at distance
/// k < d with probability N^{k−1}/N^{d−1} (k ≥ 1) or 1/((N−1)N^{d−1}) (k = 0),
/// staying at d otherwise.
pub fn green_operator(rates: &RateTable, spec: &GroupSpec) -> Result<GreenOperator> {
    let d_max = spec.depth();
    if rates.depth() != d_max || rates.n != spec.n() {
        return Err(invalid("rate table does not match the group"));
    }
    let kappa = rates.exit_rate;
    if !(kappa > 0.0) {
        return Err(Error::Singular("the walk never leaves the finite box, so occupation times are infinite".into()));
    }
    let n = spec.n() as f64;
    let m = d_max + 1;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for d in 0..=d_max {
        for l in d + 1..=d_max {
            a[(d, l)] += rates.q(l);
        }
        if d >= 1 {
            let q = rates.q(d);
            let base = n.powi(d as i32 - 1);
            for k in 1..d {
                a[(d, k)] += q * n.powi(k as i32 - 1) / base;
            }
            a[(d, 0)] += q / ((n - 1.0) * base);
        }
    }
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for d in 0..m {
        let out: f64 = (0..m).map(|k| a[(d, k)]).sum();
        mat[(d, d)] = kappa + out;
        for k in 0..m {
            if k != d {
                mat[(d, k)] = -a[(d, k)];
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[0] = 1.0;
    let t = mat.transpose().lu().solve(&rhs).ok_or_else(|| Error::Singular("radial system is singular".into()))?;
    if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Singular("radial system produced non-finite occupation times".into()));
    }
    let sphere_occupation: Vec<f64> = t.iter().copied().collect();
    let radial_values = sphere_occupation.iter().enumerate().map(|(d, v)| v / spec.sphere_size(d) as f64).collect();
    Ok(GreenOperator { n: spec.n(), radial_values, sphere_occupation })
}

/// Time the killed walk started at `start` spends at `target`, one path.
pub fn occupation_time<R: Rng + ?Sized>(spec: &GroupSpec, rates: &RateTable, start: u64, target: u64, rng: &mut R) -> Result<f64> {
    let kappa = rates.exit_rate;
    if !(kappa > 0.0) {
        return Err(Error::Singular("closed walk has infinite occupation time".into()));
    }
    let total = rates.total_jump_rate() + kappa;
    let mut x = start;
    let mut acc = 0.0;
    loop {
        let hold = -rng.random::<f64>().ln_1p_neg() / total;
        if x == target {
            acc += hold;
        }
        if rng.random::<f64>() * total < kappa {
            return Ok(acc);
        }
        x = spec.sample_jump_index(x, rates, rng).0;
    }
}

trait Ln1pNeg {
    fn ln_1p_neg(self) -> f64;
}

impl Ln1pNeg for f64 {
    /// ln(1 − u), finite for u in [0, 1).
    #[inline]
    fn ln_1p_neg(self) -> f64 {
        (-self).ln_1p()
    }
}

/// Samples one jump from an [`Address`].
pub fn sample_jump<R: Rng + ?Sized>(spec: &GroupSpec, x: &Address, rates: &RateTable, rng: &mut R) -> Result<Address> {
    let i = spec.index(x)?;
    Ok(spec.address(spec.sample_jump_index(i, rates, rng).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_gof;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> crate::Stream {
        crate::Stream::seed_from_u64(seed)
    }

    fn pow2() -> CoefficientSequence {
        CoefficientSequence::geometric(1.0, 2.0).unwrap()
    }

    #[test]
    fn rate_table_examples() {
        let spec = GroupSpec::new(2, 4).unwrap();
        let t = make_rate_table(&spec, &pow2(), 1).unwrap();
        assert_eq!(t.q(1), 1.0);
        assert!((t.q(3) - 1.0).abs() < 1e-15);
        let spec4 = GroupSpec::new(4, 4).unwrap();
        let t2 = make_rate_table(&spec4, &pow2(), 2).unwrap();
        assert!((t2.q(2) - 1.0).abs() < 1e-15);
        // every level-2 rate equals 1 at N = 4, so the residual diverges
        assert_eq!(t2.residual_rate, Some(f64::INFINITY));
        assert!((t2.exit_rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_closed_form_matches_partial_sums() {
        let spec = GroupSpec::new(16, 3).unwrap();
        let t = make_rate_table(&spec, &pow2(), 2).unwrap();
        let brute: f64 = (4..400).map(|l| 2f64.powi(l - 1) * 16f64.powf(-(l as f64 - 1.0) / 2.0)).sum();
        assert!((t.residual_rate.unwrap() - brute).abs() < 1e-12);
        let explicit = CoefficientSequence::explicit(vec![1.0, 2.0, 4.0], Some(TailRule::RepeatLastRatio)).unwrap();
        let te = make_rate_table(&spec, &explicit, 2).unwrap();
        assert!((te.residual_rate.unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn non_positive_coefficient_rejected() {
        assert!(CoefficientSequence::explicit(vec![1.0, 0.0], None).is_err());
        assert!(CoefficientSequence::geometric(-1.0, 2.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let x = Address::parse("000").unwrap();
        let y = Address::parse("100").unwrap();
        assert_eq!(hierarchical_distance(&x, &x).unwrap(), 0);
        assert_eq!(hierarchical_distance(&x, &y).unwrap(), 3);
        assert!(hierarchical_distance(&x, &Address::parse("00").unwrap()).is_err());
        // brute force over digit prefixes
        let spec = GroupSpec::new(3, 3).unwrap();
        for i in 0..27 {
            for j in 0..27 {
                let (a, b) = (spec.address(i), spec.address(j));
                let brute = (0..=3).find(|&l| a.digits[l..] == b.digits[l..]).unwrap();
                assert_eq!(spec.distance(i, j), brute);
                assert_eq!(hierarchical_distance(&a, &b).unwrap(), brute);
            }
        }
    }

    #[test]
    fn ball_and_sphere_cardinalities() {
        for (n, d) in [(2u32, 5usize), (3, 4), (5, 3)] {
            let spec = GroupSpec::new(n, d).unwrap();
            let mut counts = vec![0u64; d + 1];
            for y in 0..spec.site_count() {
                counts[spec.distance(0, y)] += 1;
            }
            for l in 0..=d {
                assert_eq!(counts[l], spec.sphere_size(l));
                assert_eq!(counts[..=l].iter().sum::<u64>(), spec.ball_size(l));
            }
        }
    }

    proptest! {
        #[test]
        fn ultrametric_inequality(n in 2u32..6, d in 1usize..6, a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let spec = GroupSpec::new(n, d).unwrap();
            let s = spec.site_count();
            let (x, y, z) = (a % s, b % s, c % s);
            prop_assert!(spec.distance(x, z) <= spec.distance(x, y).max(spec.distance(y, z)));
            prop_assert_eq!(spec.distance(x, y), spec.distance(y, x));
            prop_assert_eq!(spec.index(&spec.address(x)).unwrap(), x);
        }

        #[test]
        fn sphere_jump_lands_at_requested_distance(n in 2u32..6, d in 1usize..6, x in any::<u64>(), l in 1usize..6, seed in any::<u64>()) {
            let spec = GroupSpec::new(n, d).unwrap();
            let l = 1 + (l - 1) % d;
            let x = x % spec.site_count();
            let y = spec.uniform_on_sphere(x, l, &mut rng(seed));
            prop_assert_eq!(spec.distance(x, y), l);
        }
    }

    #[test]
    fn jump_distance_frequencies_match_rates() {
        let spec = GroupSpec::new(3, 4).unwrap();
        let t = make_rate_table(&spec, &CoefficientSequence::geometric(1.0, 1.5).unwrap(), 1).unwrap();
        let mut r = rng(11);
        let draws = 100_000;
        let mut counts = [0u64; 5];
        let x0 = 40;
        for _ in 0..draws {
            let (y, l) = spec.sample_jump_index(x0, &t, &mut r);
            assert_eq!(spec.distance(x0, y), l);
            assert!(l > 0);
            counts[l] += 1;
        }
        let total = t.total_jump_rate();
        for l in 1..=4 {
            let p = t.q(l) / total;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let f = counts[l] as f64 / draws as f64;
            assert!((f - p).abs() < 4.0 * se, "level {l}: {f} vs {p}");
        }
    }

    #[test]
    fn sphere_is_uniform() {
        let spec = GroupSpec::new(3, 3).unwrap();
        let mut r = rng(5);
        let x = 13;
        let l = 3;
        let mut hits = std::collections::BTreeMap::new();
        for _ in 0..36_000 {
            *hits.entry(spec.uniform_on_sphere(x, l, &mut r)).or_insert(0u64) += 1;
        }
        assert_eq!(hits.len() as u64, spec.sphere_size(l));
        let obs: Vec<u64> = hits.values().copied().collect();
        let probs = vec![1.0 / obs.len() as f64; obs.len()];
        let (_, p) = chi_square_gof(&obs, &probs);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn classification_examples() {
        let one = CoefficientSequence::geometric(1.0, 1.0).unwrap();
        assert_eq!(classify_transience(&one, 1, 4).unwrap().classification, Transience::NotTransient);
        let two = pow2();
        let rep = classify_transience(&two, 2, 16).unwrap();
        assert_eq!(rep.classification, Transience::StronglyTransient);
        assert!((rep.degree.unwrap().lo - 3.0).abs() < 1e-12);
        assert!((rep.criterion_value - 4.0 / 3.0).abs() < 1e-12);
        // c_ℓ = ℓ + 1
        let harmonic = CoefficientSequence::explicit(vec![1.0, 2.0, 3.0, 4.0], Some(TailRule::PowerLaw { exponent: 1.0 })).unwrap();
        assert_eq!(harmonic.get(9), Some(10.0));
        let l2 = classify_transience(&harmonic, 2, 4).unwrap();
        assert_eq!(l2.classification, Transience::StronglyTransient);
        assert!((l2.criterion_value - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-4);
        let l1 = classify_transience(&harmonic, 1, 4).unwrap();
        assert_eq!(l1.classification, Transience::NotTransient);
        assert!(l1.criterion_value.is_infinite());
        let bare = CoefficientSequence::explicit(vec![1.0, 2.0], None).unwrap();
        let u = classify_transience(&bare, 1, 4).unwrap();
        assert_eq!(u.classification, Transience::Undetermined);
        assert!(u.diagnostic.is_some());
    }

    #[test]
    fn harmonic_partial_sums_oracle() {
        // partial sums of 1/(ℓ+1)^2 settle, of 1/(ℓ+1) keep growing like log
        let s = |e: i32, m: usize| (1..=m).map(|k| (k as f64).powi(-e)).sum::<f64>();
        assert!(s(2, 200_000) - s(2, 100_000) < 1e-5);
        assert!(s(1, 200_000) - s(1, 100_000) > 0.69);
    }

    #[test]
    fn growth_constraint_enforced() {
        assert!(classify_transience(&pow2(), 2, 4).is_err());
        assert!(classify_transience(&CoefficientSequence::geometric(1.0, 5.0).unwrap(), 1, 4).is_err());
    }

    #[test]
    fn degree_examples() {
        assert!((degree_of_transience(2.0, 16, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((degree_of_transience(2.0, 16, 2).unwrap() - 3.0).abs() < 1e-15);
        let near = degree_of_transience(1.0 + 1e-9, 16, 2).unwrap();
        assert!((near - 1.0).abs() < 1e-8);
        assert!(degree_of_transience(1.0, 16, 1).is_err());
        assert!(degree_of_transience(4.0, 16, 2).is_err());
    }

    proptest! {
        #[test]
        fn degree_defined_iff_transient(b in 0.05f64..6.0, n in 2u32..40, k in 1u8..3) {
            let cap = if k == 1 { n as f64 } else { (n as f64).sqrt() };
            prop_assume!(b < cap * 0.999);
            let rep = classify_transience(&CoefficientSequence::geometric(1.0, b).unwrap(), k, n).unwrap();
            let transient = matches!(rep.classification, Transience::Transient | Transience::StronglyTransient);
            prop_assert_eq!(rep.degree.is_some(), transient);
            if b > 1.0 {
                prop_assert!((rep.degree.unwrap().lo - degree_of_transience(b, n, k).unwrap()).abs() < 1e-12);
            }
            if let Some(g) = rep.degree {
                prop_assert_eq!(g.lo > 1.0, rep.classification == Transience::StronglyTransient);
            }
        }
    }

    fn green(n: u32, d: usize, b: f64, k: u8) -> GreenOperator {
        let spec = GroupSpec::new(n, d).unwrap();
        let t = make_rate_table(&spec, &CoefficientSequence::geometric(1.0, b).unwrap(), k).unwrap();
        green_operator(&t, &spec).unwrap()
    }

    #[test]
    fn green_is_nonnegative_and_decreasing() {
        for (n, d, b, k) in [(4, 4, 2.0, 2), (16, 3, 2.0, 2), (3, 5, 2.0, 1), (2, 6, 1.2, 1)] {
            let g = green(n, d, b, k);
            for w in g.radial_values.windows(2) {
                assert!(w[0] >= w[1] && w[1] >= 0.0, "{:?}", g.radial_values);
            }
        }
    }

    #[test]
    fn green_matches_brute_force_on_all_sites() {
        // full generator on the 27-site box, solved directly
        let spec = GroupSpec::new(3, 3).unwrap();
        let t = make_rate_table(&spec, &pow2(), 1).unwrap();
        let s = spec.site_count() as usize;
        let mut m = DMatrix::<f64>::zeros(s, s);
        for x in 0..s {
            m[(x, x)] = t.total_jump_rate() + t.exit_rate;
            for y in 0..s {
                let l = spec.distance(x as u64, y as u64);
                if l > 0 {
                    m[(x, y)] -= t.q(l) / spec.sphere_size(l) as f64;
                }
            }
        }
        let inv = m.try_inverse().unwrap();
        let g = green_operator(&t, &spec).unwrap();
        for y in 0..s {
            let d = spec.distance(0, y as u64);
            assert!((inv[(0, y)] - g.g(d)).abs() < 1e-12);
        }
        // block pairings from the dense matrix
        for l in 0..=3 {
            let vol = spec.ball_size(l) as usize;
            let phi: DVector<f64> = DVector::from_fn(s, |i, _| if i < vol { 1.0 / vol as f64 } else { 0.0 });
            let gphi = &inv * &phi;
            let p = g.block_pairings(l);
            assert!((phi.dot(&phi) - p.phi_phi).abs() < 1e-12);
            assert!((phi.dot(&gphi) - p.phi_g_phi).abs() < 1e-12);
            assert!((gphi.dot(&gphi) - p.phi_g2_phi).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_boundary_is_singular() {
        let spec = GroupSpec::new(4, 3).unwrap();
        let t = make_rate_table_with(&spec, &pow2(), 2, Boundary::Closed).unwrap();
        assert!(matches!(green_operator(&t, &spec), Err(Error::Singular(_))));
    }

    #[test]
    fn green_converges_with_depth_when_strongly_transient() {
        let mut prev: Option<(f64, f64)> = None;
        for d in 3..12 {
            let g = green(16, d, 2.0, 2);
            let p = g.block_pairings(1);
            let cur = (g.g(0), p.phi_g2_phi);
            assert!(cur.1.is_finite());
            if let Some(pr) = prev {
                if d >= 10 {
                    assert!(((cur.0 - pr.0) / pr.0).abs() < 0.01);
                    assert!(((cur.1 - pr.1) / pr.1).abs() < 0.01);
                }
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn green_origin_matches_occupation_monte_carlo() {
        let spec = GroupSpec::new(4, 3).unwrap();
        let t = make_rate_table(&spec, &pow2(), 2).unwrap();
        let g = green_operator(&t, &spec).unwrap();
        let mut r = rng(21);
        let mut s = crate::stats::Summary::new();
        for _ in 0..40_000 {
            s.push(occupation_time(&spec, &t, 0, 0, &mut r).unwrap());
        }
        assert!((s.mean() - g.g(0)).abs() < 4.0 * s.std_err(), "{} vs {}", s.mean(), g.g(0));
    }
}
