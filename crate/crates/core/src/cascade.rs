//! Subordinator kernels, their compositions, and the entrance law obtained by
//! composing kernels from a deep level down to a given level.
//!
//! Level k uses the drift coefficient c_k. The one-level kernel is the gamma
//! law Γ(2c_k a, 2c_k); the two-level kernel is an equilibrium draw of the
//! particle system with immigration level a.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::feller::GammaLaw;
use crate::hiergroup::{CoefficientSequence, TailRule};
use crate::twolevel::{self, TwoLevelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevyKind {
    Gamma,
    /// Particle approximation. The level-k run uses ε_k = min(eps, 1/c_k) and
    /// a burn-in of `burn_in_factor / c_k`.
    TwoLevel {
        eps: f64,
        burn_in_factor: f64,
    },
}

impl LevyKind {
    pub fn two_level(eps: f64) -> Self {
        Self::TwoLevel { eps, burn_in_factor: twolevel::DEFAULT_BURN_IN_FACTOR }
    }

    fn is_gamma(&self) -> bool {
        matches!(self, Self::Gamma)
    }
}

/// The kernel Π(a, ·) at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubordinatorKernel {
    pub kind: LevyKind,
    pub c: f64,
}

impl SubordinatorKernel {
    pub fn new(kind: LevyKind, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("kernel coefficient must be positive, got {c}")));
        }
        if let LevyKind::TwoLevel { eps, burn_in_factor } = kind {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(invalid(format!("epsilon must lie in (0, 1], got {eps}")));
            }
            if burn_in_factor < twolevel::MIN_BURN_IN_FACTOR {
                return Err(invalid(format!("burn-in factor {burn_in_factor} below {}", twolevel::MIN_BURN_IN_FACTOR)));
            }
        }
        Ok(Self { kind, c })
    }

    /// Second moment of the Lévy measure: 1/(2c) or 1/(4c²).
    pub fn second_moment(&self) -> f64 {
        levy_second_moment(self.kind, self.c)
    }

    pub fn sample<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(invalid(format!("kernel argument must be nonnegative, got {a}")));
        }
        if a == 0.0 {
            return Ok(0.0);
        }
        match self.kind {
            LevyKind::Gamma => Ok(GammaLaw::new(a, self.c)?.sample(rng)),
            LevyKind::TwoLevel { eps, burn_in_factor } => {
                let eps = eps.min(1.0 / self.c);
                let p = TwoLevelParams::new(self.c, a, eps)?;
                Ok(twolevel::equilibrium_sample(&p, burn_in_factor / self.c, rng)?.zeta)
            }
        }
    }
}

fn levy_second_moment(kind: LevyKind, c: f64) -> f64 {
    if kind.is_gamma() {
        1.0 / (2.0 * c)
    } else {
        1.0 / (4.0 * c * c)
    }
}

/// Applies `kernels` from the last to the first: S_0(S_1(…S_{n−1}(a))).
pub fn iterate<R: Rng + ?Sized>(kernels: &[SubordinatorKernel], a: f64, rng: &mut R) -> Result<f64> {
    if kernels.is_empty() {
        return Err(invalid("no kernels to compose"));
    }
    let mut x = a;
    for k in kernels.iter().rev() {
        x = k.sample(x, rng)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntranceLawSpec {
    pub theta: f64,
    pub coefficients: CoefficientSequence,
    pub kind: LevyKind,
    /// Deepest level plus one; `None` picks the default truncation.
    pub j_max: Option<usize>,
}

/// Tail Σ_{k≥j} m_k below which truncation is considered negligible.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-4;

const POWER_LAW_DIRECT_TERMS: usize = 10_000;

impl EntranceLawSpec {
    pub fn new(theta: f64, coefficients: CoefficientSequence, kind: LevyKind, j_max: Option<usize>) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid(format!("theta must be nonnegative, got {theta}")));
        }
        let s = Self { theta, coefficients, kind, j_max };
        s.check_summable()?;
        Ok(s)
    }

    fn c(&self, k: usize) -> f64 {
        self.coefficients.get(k).expect("summability checked")
    }

    pub fn m(&self, k: usize) -> f64 {
        levy_second_moment(self.kind, self.c(k))
    }

    /// Power s with m_k ∝ c_k^{−s}.
    fn power(&self) -> f64 {
        if self.kind.is_gamma() {
            1.0
        } else {
            2.0
        }
    }

    fn check_summable(&self) -> Result<()> {
        let s = self.power();
        let ok = match &self.coefficients {
            CoefficientSequence::Geometric { b, .. } => *b > 1.0,
            CoefficientSequence::Explicit { tail: None, .. } => {
                return Err(invalid("an entrance law needs an infinite coefficient sequence; add a tail rule"));
            }
            CoefficientSequence::Explicit { values, tail: Some(TailRule::RepeatLastRatio) } => {
                values[values.len() - 1] > values[values.len() - 2]
            }
            CoefficientSequence::Explicit { tail: Some(TailRule::PowerLaw { exponent }), .. } => s * exponent > 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("the second moments of the Lévy measures are not summable, so there is no entrance law"))
        }
    }

    /// Σ_{k≥j} m_k.
    pub fn tail_sum(&self, j: usize) -> f64 {
        let s = self.power();
        match &self.coefficients {
            CoefficientSequence::Geometric { b, .. } => self.m(j) / (1.0 - b.powf(-s)),
            CoefficientSequence::Explicit { values, tail } => {
                let n = values.len();
                let direct: f64 = (j..n).map(|k| self.m(k)).sum();
                let start = j.max(n);
                match tail {
                    Some(TailRule::RepeatLastRatio) => {
                        let r = values[n - 1] / values[n - 2];
                        direct + self.m(start) / (1.0 - r.powf(-s))
                    }
                    Some(TailRule::PowerLaw { exponent }) => {
                        let stop = start + POWER_LAW_DIRECT_TERMS;
                        let mid: f64 = (start..stop).map(|k| self.m(k)).sum();
                        // m_k = C (k+1)^{−sp}; midpoint-rule integral for the rest
                        let sp = s * exponent;
                        let cst = self.m(stop) * ((stop + 1) as f64).powf(sp);
                        let rest = cst * ((stop as f64) + 0.5).powf(1.0 - sp) / (sp - 1.0);
                        direct + mid + rest
                    }
                    None => unreachable!("rejected at construction"),
                }
            }
        }
    }

    /// Smallest j ≥ `level` + 1 with Σ_{k≥j} m_k < 10^{−4}.
    pub fn default_j_max(&self, level: usize) -> usize {
        let mut j = level + 1;
        while self.tail_sum(j) >= DEFAULT_TAIL_TOLERANCE {
            j += 1;
        }
        j
    }

    pub fn j_max_for(&self, level: usize) -> usize {
        self.j_max.unwrap_or_else(|| self.default_j_max(level))
    }

    pub fn kernel(&self, k: usize) -> SubordinatorKernel {
        SubordinatorKernel { kind: self.kind, c: self.c(k) }
    }

    /// θ·Σ_{k=ℓ}^{j_max−1} m_k, the variance of the truncated composition.
    pub fn truncated_variance(&self, level: usize) -> f64 {
        let j = self.j_max_for(level);
        self.theta * (level..j).map(|k| self.m(k)).sum::<f64>()
    }

    /// √(θ·Σ_{k≥j_max} m_k).
    pub fn truncation_sd(&self, level: usize) -> f64 {
        (self.theta * self.tail_sum(self.j_max_for(level))).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntranceDraw {
    pub value: f64,
    pub truncation_sd: f64,
}

/// S_ℓ^{j_max}(θ), the entrance law at `level` truncated at `j_max`.
pub fn entrance_law_sample<R: Rng + ?Sized>(spec: &EntranceLawSpec, level: usize, rng: &mut R) -> Result<EntranceDraw> {
    let j = spec.j_max_for(level);
    if j <= level {
        return Err(invalid(format!("truncation level {j} must exceed the sampled level {level}")));
    }
    let kernels: Vec<SubordinatorKernel> = (level..j).map(|k| spec.kernel(k)).collect();
    Ok(EntranceDraw { value: iterate(&kernels, spec.theta, rng)?, truncation_sd: spec.truncation_sd(level) })
}

/// Joint draw of (ζ_top, …, ζ_1). Entry `k−1` of the result is ζ_k.
pub fn backward_chain_sample<R: Rng + ?Sized>(spec: &EntranceLawSpec, top: usize, rng: &mut R) -> Result<Vec<f64>> {
    if top == 0 {
        return Err(invalid("the top level must be at least 1"));
    }
    let mut out = vec![0.0; top];
    out[top - 1] = entrance_law_sample(spec, top, rng)?.value;
    for k in (1..top).rev() {
        out[k - 1] = spec.kernel(k).sample(out[k], rng)?;
    }
    Ok(out)
}

/// `replicate,level,value` rows.
pub fn chains_to_csv(chains: &[Vec<f64>]) -> String {
    let mut s = String::from("replicate,level,value\n");
    for (r, ch) in chains.iter().enumerate() {
        for (i, v) in ch.iter().enumerate().rev() {
            s.push_str(&format!("{r},{},{v}\n", i + 1));
        }
    }
    s
}
