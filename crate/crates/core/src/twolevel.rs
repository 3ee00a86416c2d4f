//! The ε-rescaled two-level branching particle system with immigration.
//!
//! Per-entity rates:
//!
//! | event                                    | rate            |
//! |------------------------------------------|-----------------|
//! | immigration of a one-individual family   | c·a/ε² (total)  |
//! | family copy                              | 1/(2ε) each     |
//! | family deletion                          | 1/(2ε) each     |
//! | individual split                         | (1−εc)/(2ε) each|
//! | individual death                         | (1+εc)/(2ε) each|
//!
//! Observables: the aggregated mass ζ = ε²·Σ j and the family-size measure
//! η = ε·Σ δ_{εj} over families with j individuals.
//!
//! The moment equations for m_{j,k}(t) = E⟨η(t), x^j⟩^k are solved both in
//! closed form (where available) and by RK4.

use rand::Rng;

use crate::error::{invalid, Error, Partial, Result};
use crate::stats::{self, Summary};
use crate::sumtree::SumTree;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelParams {
    pub c: f64,
    /// Immigration level; overridden by `schedule` when present.
    pub a: f64,
    pub eps: f64,
    /// Piecewise-constant immigration level: `(start_time, level)` pairs,
    /// sorted by time. Before the first start the level is `a`.
    pub schedule: Option<Vec<(f64, f64)>>,
}

impl TwoLevelParams {
    pub fn new(c: f64, a: f64, eps: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be positive, got {c}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(invalid(format!("immigration level must be nonnegative, got {a}")));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid(format!("epsilon must lie in (0, 1], got {eps}")));
        }
        if eps * c > 1.0 {
            return Err(invalid(format!("epsilon·c = {} exceeds 1, the split rate would be negative", eps * c)));
        }
        Ok(Self { c, a, eps, schedule: None })
    }

    pub fn with_schedule(mut self, schedule: Vec<(f64, f64)>) -> Result<Self> {
        if schedule.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(invalid("immigration schedule must be sorted by time"));
        }
        if schedule.iter().any(|&(_, l)| !(l >= 0.0)) {
            return Err(invalid("immigration levels must be nonnegative"));
        }
        self.schedule = Some(schedule);
        Ok(self)
    }

    /// Immigration level in force at time `t`, and the time it next changes.
    fn level_at(&self, t: f64) -> (f64, f64) {
        match &self.schedule {
            None => (self.a, f64::INFINITY),
            Some(s) => {
                let k = s.partition_point(|&(start, _)| start <= t);
                let level = if k == 0 { self.a } else { s[k - 1].1 };
                let next = s.get(k).map_or(f64::INFINITY, |p| p.0);
                (level, next)
            }
        }
    }

    pub fn immigration_rate_at(&self, t: f64) -> f64 {
        self.c * self.level_at(t).0 / (self.eps * self.eps)
    }

    pub fn family_copy_rate(&self) -> f64 {
        0.5 / self.eps
    }

    pub fn family_delete_rate(&self) -> f64 {
        0.5 / self.eps
    }

    pub fn split_rate(&self) -> f64 {
        (1.0 - self.eps * self.c) / (2.0 * self.eps)
    }

    pub fn death_rate(&self) -> f64 {
        (1.0 + self.eps * self.c) / (2.0 * self.eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub id: u64,
    /// Type of the founding immigrant, uniform on [0, 1].
    pub label: f64,
    pub count: u64,
}

/// Families with their individual counts.
#[derive(Debug, Clone, Default)]
pub struct FamilyState {
    families: Vec<Family>,
    tree: SumTree,
    pub clock: f64,
    next_id: u64,
}

impl FamilyState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a state from `(label, count)` records; zero counts are skipped.
    pub fn from_families(records: &[(f64, u64)]) -> Self {
        let mut s = Self::empty();
        for &(label, count) in records {
            if count > 0 {
                s.push(label, count);
            }
        }
        s
    }

    fn push(&mut self, label: f64, count: u64) {
        self.families.push(Family { id: self.next_id, label, count });
        self.next_id += 1;
        self.tree.push(count);
    }

    fn remove(&mut self, i: usize) {
        self.families.swap_remove(i);
        self.tree.swap_remove(i);
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn individuals(&self) -> u64 {
        self.tree.total()
    }

    /// Aggregated mass ζ = ε²·Σ j.
    pub fn zeta(&self, eps: f64) -> f64 {
        eps * eps * self.individuals() as f64
    }

    /// Largest rescaled family mass ε·j.
    pub fn max_family_mass(&self, eps: f64) -> f64 {
        eps * self.families.iter().map(|f| f.count).max().unwrap_or(0) as f64
    }

    pub fn sizes(&self, eps: f64) -> FamilySizes {
        FamilySizes { eps, counts: self.families.iter().map(|f| f.count).collect() }
    }

    /// Ids ever issued; ids are never reused.
    pub fn issued_ids(&self) -> u64 {
        self.next_id
    }
}

/// Family counts at one instant, viewed through η = ε·Σ δ_{εj}.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySizes {
    pub eps: f64,
    pub counts: Vec<u64>,
}

impl FamilySizes {
    /// ⟨η, x^k⟩.
    pub fn moment(&self, k: i32) -> f64 {
        self.eps * self.counts.iter().map(|&j| (self.eps * j as f64).powi(k)).sum::<f64>()
    }

    /// ζ = ⟨η, x⟩.
    pub fn mass(&self) -> f64 {
        self.moment(1)
    }

    /// Number of families with rescaled mass εj ≥ δ.
    pub fn count_above(&self, delta: f64) -> usize {
        self.counts.iter().filter(|&&j| self.eps * j as f64 >= delta).count()
    }

    /// ∫_K^∞ x η(dx).
    pub fn tail_mass(&self, k: f64) -> f64 {
        self.eps * self.counts.iter().map(|&j| self.eps * j as f64).filter(|&x| x >= k).fold(0.0, |s, x| s + x)
    }

    /// η as a histogram with bins of width `width` covering [0, max].
    pub fn histogram(&self, width: f64, max: f64) -> Histogram {
        let nb = (max / width).ceil().max(1.0) as usize;
        let mut w = vec![0.0; nb];
        for &j in &self.counts {
            let x = self.eps * j as f64;
            let b = ((x / width) as usize).min(nb - 1);
            w[b] += self.eps;
        }
        Histogram { bins: w.into_iter().enumerate().map(|(i, wt)| (i as f64 * width, (i + 1) as f64 * width, wt)).collect() }
    }
}

/// `(bin_left, bin_right, weight)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<(f64, f64, f64)>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,weight\n");
        for (l, r, w) in &self.bins {
            s.push_str(&format!("{l},{r},{w}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub zeta: f64,
    pub family_count: usize,
    pub max_family_mass: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub state: FamilyState,
    pub events: u64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,zeta,family_count,max_family_mass\n");
        for p in &self.snapshots {
            s.push_str(&format!("{},{},{},{}\n", p.time, p.zeta, p.family_count, p.max_family_mass));
        }
        s
    }
}

/// Event-driven engine for one trajectory.
pub struct TwoLevelSim<'r, R: Rng + ?Sized> {
    pub params: TwoLevelParams,
    pub state: FamilyState,
    pub events: u64,
    budget: u64,
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> TwoLevelSim<'r, R> {
    pub fn new(params: TwoLevelParams, state: FamilyState, rng: &'r mut R) -> Self {
        Self { params, state, events: 0, budget: u64::MAX, rng }
    }

    /// Caps the number of events; exceeding it is a resource error.
    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn snapshot(&self) -> Snapshot {
        let eps = self.params.eps;
        Snapshot {
            time: self.state.clock,
            zeta: self.state.zeta(eps),
            family_count: self.state.family_count(),
            max_family_mass: self.state.max_family_mass(eps),
        }
    }

    /// Runs until the clock reaches `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let eps = self.params.eps;
        let inv_eps = 1.0 / eps;
        let p_split = (1.0 - eps * self.params.c) / 2.0;
        while self.state.clock < t {
            let (level, next_change) = self.params.level_at(self.state.clock);
            let imm = self.params.c * level / (eps * eps);
            let f = self.state.family_count() as f64;
            let n = self.state.individuals() as f64;
            let fam_rate = f * inv_eps;
            let total = imm + fam_rate + n * inv_eps;
            let horizon = t.min(next_change);
            if total <= 0.0 {
                self.state.clock = horizon;
                continue;
            }
            let dt = -(-self.rng.random::<f64>()).ln_1p() / total;
            if self.state.clock + dt >= horizon {
                // memoryless: restart at the horizon with fresh rates
                self.state.clock = horizon;
                continue;
            }
            self.state.clock += dt;
            self.events += 1;
            if self.events > self.budget {
                return Err(Error::Resource(format!("event budget {} exhausted at t = {}", self.budget, self.state.clock)));
            }
            let u = self.rng.random::<f64>() * total;
            if u < imm {
                let label = self.rng.random::<f64>();
                self.state.push(label, 1);
            } else if u < imm + fam_rate {
                let i = self.rng.random_range(0..self.state.family_count());
                if self.rng.random::<bool>() {
                    let (label, count) = (self.state.families[i].label, self.state.families[i].count);
                    self.state.push(label, count);
                } else {
                    self.state.remove(i);
                }
            } else {
                let target = self.rng.random_range(0..self.state.individuals());
                let i = self.state.tree.find(target);
                let count = self.state.families[i].count;
                if self.rng.random::<f64>() < p_split {
                    self.state.families[i].count = count + 1;
                    self.state.tree.set(i, count + 1);
                } else if count == 1 {
                    self.state.remove(i);
                } else {
                    self.state.families[i].count = count - 1;
                    self.state.tree.set(i, count - 1);
                }
            }
        }
        Ok(())
    }
}

/// Simulates from `init` to `t_end`, recording a snapshot every `snapshot_every`.
pub fn simulate<R: Rng + ?Sized>(
    params: &TwoLevelParams,
    init: FamilyState,
    t_end: f64,
    snapshot_every: f64,
    budget: u64,
    rng: &mut R,
) -> std::result::Result<Trajectory, Box<Partial<Trajectory>>> {
    if !(t_end >= 0.0) || !(snapshot_every > 0.0) {
        let partial = Trajectory { snapshots: vec![], state: init, events: 0 };
        return Err(Box::new(Partial { error: invalid("need t_end ≥ 0 and a positive snapshot interval"), partial }));
    }
    let start = init.clock;
    let mut sim = TwoLevelSim::new(params.clone(), init, rng).with_budget(budget);
    let mut snapshots = vec![sim.snapshot()];
    let mut k = 1u64;
    loop {
        let target = (start + k as f64 * snapshot_every).min(start + t_end);
        if let Err(error) = sim.advance_to(target) {
            snapshots.push(sim.snapshot());
            let partial = Trajectory { snapshots, events: sim.events, state: sim.state };
            return Err(Box::new(Partial { error, partial }));
        }
        snapshots.push(sim.snapshot());
        if target >= start + t_end {
            break;
        }
        k += 1;
    }
    Ok(Trajectory { snapshots, events: sim.events, state: sim.state })
}

pub const DEFAULT_BURN_IN_FACTOR: f64 = 20.0;
pub const MIN_BURN_IN_FACTOR: f64 = 10.0;

fn check_burn_in(params: &TwoLevelParams, burn_in: f64) -> Result<()> {
    if burn_in < MIN_BURN_IN_FACTOR / params.c {
        return Err(invalid(format!("burn-in {burn_in} is shorter than {MIN_BURN_IN_FACTOR}/c = {}", MIN_BURN_IN_FACTOR / params.c)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumDraw {
    pub zeta: f64,
    pub sizes: FamilySizes,
}

/// One equilibrium draw: run from empty for `burn_in`, then read ζ and η.
pub fn equilibrium_sample<R: Rng + ?Sized>(params: &TwoLevelParams, burn_in: f64, rng: &mut R) -> Result<EquilibriumDraw> {
    check_burn_in(params, burn_in)?;
    let mut sim = TwoLevelSim::new(params.clone(), FamilyState::empty(), rng);
    sim.advance_to(burn_in)?;
    Ok(EquilibriumDraw { zeta: sim.state.zeta(params.eps), sizes: sim.state.sizes(params.eps) })
}

/// Compares the mean of ζ over the first and second halves of a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityCheck {
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    /// Difference in units of its standard error.
    pub z: f64,
}

pub fn stationarity_check(values: &[f64]) -> StationarityCheck {
    let h = values.len() / 2;
    let (a, b) = (Summary::from_slice(&values[..h]), Summary::from_slice(&values[h..]));
    let se = (a.std_err().powi(2) + b.std_err().powi(2)).sqrt();
    StationarityCheck { first_half_mean: a.mean(), second_half_mean: b.mean(), z: if se > 0.0 { (a.mean() - b.mean()) / se } else { 0.0 } }
}

/// `count` draws spaced `spacing` apart along one long run after `burn_in`.
pub fn equilibrium_chain<R: Rng + ?Sized>(
    params: &TwoLevelParams,
    burn_in: f64,
    spacing: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<EquilibriumDraw>> {
    check_burn_in(params, burn_in)?;
    if !(spacing > 0.0) {
        return Err(invalid("draw spacing must be positive"));
    }
    let mut sim = TwoLevelSim::new(params.clone(), FamilyState::empty(), rng);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        sim.advance_to(burn_in + k as f64 * spacing)?;
        out.push(EquilibriumDraw { zeta: sim.state.zeta(params.eps), sizes: sim.state.sizes(params.eps) });
    }
    Ok(out)
}

/// E[ζ²] from equilibrium draws with ζ and ⟨η,x²⟩ as control variates,
/// whose stationary means a and a/(2c) + εa/2 are exact. Returns (estimate, se).
pub fn equilibrium_second_moment(draws: &[EquilibriumDraw], c: f64, a: f64, eps: f64) -> (f64, f64) {
    let y: Vec<f64> = draws.iter().map(|d| d.zeta * d.zeta).collect();
    let z: Vec<f64> = draws.iter().map(|d| d.zeta).collect();
    let x2: Vec<f64> = draws.iter().map(|d| d.sizes.moment(2)).collect();
    stats::control_variate_mean(&y, &[(&z, a), (&x2, stationary_m21(c, a, eps))])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuMoments {
    /// mean/a, target 1.
    pub first: f64,
    /// variance/a, target 1/(4c²).
    pub second: f64,
    pub first_se: f64,
    pub second_se: f64,
    pub warning: Option<String>,
}

/// Method-of-moments estimates of ∫x ν_c and ∫x² ν_c from equilibrium ζ draws.
pub fn estimate_nu_moments(samples: &[f64], a: f64, _c: f64) -> Result<NuMoments> {
    if !(a > 0.0) {
        return Err(invalid("immigration level a must be positive"));
    }
    let mut warning = None;
    if samples.len() < 1000 {
        warning = Some(format!("only {} samples; at least 1000 are needed for useful power", samples.len()));
    }
    if samples.iter().all(|&x| x == 0.0) {
        warning = Some("all samples are zero".into());
        return Ok(NuMoments { first: 0.0, second: 0.0, first_se: 0.0, second_se: 0.0, warning });
    }
    let s = Summary::from_slice(samples);
    Ok(NuMoments {
        first: s.mean() / a,
        second: s.variance() / a,
        first_se: s.std_err() / a,
        second_se: stats::variance_std_err(samples) / a,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountStats {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean number of families with rescaled mass ≥ δ.
pub fn family_count_above(samples: &[FamilySizes], delta: f64) -> Result<CountStats> {
    if !(delta > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    let v: Vec<f64> = samples.iter().map(|s| s.count_above(delta) as f64).collect();
    let s = Summary::from_slice(&v);
    Ok(CountStats { mean: s.mean(), std_err: s.std_err() })
}

/// Mean of ∫_K^∞ x η(dx) over the samples.
pub fn tail_mass(samples: &[FamilySizes], k: f64) -> CountStats {
    let v: Vec<f64> = samples.iter().map(|s| s.tail_mass(k)).collect();
    let s = Summary::from_slice(&v);
    CountStats { mean: s.mean(), std_err: s.std_err() }
}

/// E⟨η,x^j⟩^k moments plus M = E⟨η,x⟩⟨η,x²⟩.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentVector {
    pub m11: f64,
    pub m21: f64,
    pub m31: f64,
    pub m41: f64,
    pub m12: f64,
    pub m22: f64,
    pub big_m: f64,
    pub m13: f64,
}

impl MomentVector {
    fn to_array(self) -> [f64; 8] {
        [self.m11, self.m21, self.m31, self.m41, self.m12, self.m22, self.big_m, self.m13]
    }

    fn from_array(v: [f64; 8]) -> Self {
        Self { m11: v[0], m21: v[1], m31: v[2], m41: v[3], m12: v[4], m22: v[5], big_m: v[6], m13: v[7] }
    }

    pub fn max_abs_diff(&self, other: &MomentVector) -> f64 {
        self.to_array().iter().zip(other.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Closed forms for m11, m21 and m12 with all ε terms, and the stationary
/// principal values of m31, m41, m22, M and m13.
pub fn moment_closed_forms(t: f64, c: f64, a: f64, eps: f64, init: &MomentVector) -> MomentVector {
    let e1 = (-c * t).exp();
    let e2 = (-2.0 * c * t).exp();
    let (m110, m210, m120) = (init.m11, init.m21, init.m12);
    let m11 = a * (1.0 - e1) + e1 * m110;
    let m21 = a / (2.0 * c) * (1.0 - 2.0 * e1 + e2) + m210 * e2 + m110 / c * (e1 - e2) + eps * a / 2.0 * (1.0 - e2);
    let c2 = c * c;
    let m12 = m120 * e2
        + a * a * (1.0 - 2.0 * e1 + e2)
        + a / (4.0 * c2) * (1.0 - 4.0 * e1 + 3.0 * e2 + 2.0 * c * t * e2)
        + m110 * (2.0 * a * (e1 - e2) - t * e2 / c + (e1 - e2) / c2)
        + m210 * t * e2
        + eps * eps * a / 2.0 * (1.0 - e2)
        + eps / (4.0 * c) * (3.0 * a - 4.0 * a * e1 + a * e2 - 2.0 * a * c * t * e2 + 4.0 * m110 * (e1 - e2));
    MomentVector {
        m11,
        m21,
        m31: a / (2.0 * c2),
        m41: 3.0 * a / (4.0 * c2 * c),
        m12,
        m22: 3.0 * a / (16.0 * c2 * c2),
        big_m: a / (4.0 * c2 * c) + a * a / (2.0 * c),
        m13: 3.0 * a * a / (4.0 * c2) + a * a * a + a / (4.0 * c2 * c2),
    }
}

fn moment_rhs(m: &[f64; 8], c: f64, a: f64, eps: f64) -> [f64; 8] {
    let [m11, m21, m31, m41, m12, m22, big_m, m13] = *m;
    let ca = c * a;
    [
        ca - c * m11,
        m11 - 2.0 * c * m21 + ca * eps,
        ca * eps * eps + 3.0 * m21 - 3.0 * c * m31,
        ca * eps.powi(3) + 6.0 * m31 - 4.0 * c * m41,
        m21 - 2.0 * c * m12 + (2.0 * ca + eps) * m11 + eps * eps * ca,
        m41 - 4.0 * c * m22,
        ca * m21 + m31 + m12 - 3.0 * c * big_m,
        3.0 * ca * m12 + 3.0 * big_m - 3.0 * c * m13,
    ]
}

/// RK4 integration of the eight moment equations; returns `(t, m)` at every step.
pub fn moment_ode_solve(t_end: f64, c: f64, a: f64, eps: f64, init: &MomentVector, step: f64) -> Result<Vec<(f64, MomentVector)>> {
    if !(step > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let steps = (t_end / step).ceil() as usize;
    let h = t_end / steps.max(1) as f64;
    let mut y = init.to_array();
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, *init));
    let add = |y: &[f64; 8], k: &[f64; 8], s: f64| {
        let mut r = *y;
        for i in 0..8 {
            r[i] += s * k[i];
        }
        r
    };
    for i in 0..steps {
        let k1 = moment_rhs(&y, c, a, eps);
        let k2 = moment_rhs(&add(&y, &k1, h / 2.0), c, a, eps);
        let k3 = moment_rhs(&add(&y, &k2, h / 2.0), c, a, eps);
        let k4 = moment_rhs(&add(&y, &k3, h), c, a, eps);
        for j in 0..8 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(((i + 1) as f64 * h, MomentVector::from_array(y)));
    }
    Ok(out)
}

/// Exact stationary E[ζ²] of the particle system at finite ε:
/// a² + a/(4c²) + 3εa/(4c) + ε²a/2.
pub fn stationary_second_moment(c: f64, a: f64, eps: f64) -> f64 {
    a * a + a / (4.0 * c * c) + 3.0 * eps * a / (4.0 * c) + eps * eps * a / 2.0
}

/// Exact stationary E⟨η,x²⟩ at finite ε: a/(2c) + εa/2.
pub fn stationary_m21(c: f64, a: f64, eps: f64) -> f64 {
    a / (2.0 * c) + eps * a / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> crate::Stream {
        crate::Stream::seed_from_u64(seed)
    }

    #[test]
    fn rates_match_generator_terms() {
        // Generator terms on a fixed state: families with counts j_i.
        // immigration: c a/ε² ; family branching: F/ε split evenly ;
        // individual branching: n/ε with drift −c·n (mass units ε per individual)
        let p = TwoLevelParams::new(1.5, 0.7, 0.05).unwrap();
        let counts = [3u64, 1, 7, 2];
        let n: u64 = counts.iter().sum();
        let f = counts.len() as f64;
        let total_ind = n as f64 * (p.split_rate() + p.death_rate());
        assert!((total_ind - n as f64 / p.eps).abs() < 1e-9);
        let drift = n as f64 * (p.split_rate() - p.death_rate());
        assert!((drift + p.c * n as f64).abs() < 1e-9);
        assert!((f * (p.family_copy_rate() + p.family_delete_rate()) - f / p.eps).abs() < 1e-12);
        assert!((p.immigration_rate_at(0.0) - p.c * p.a / (p.eps * p.eps)).abs() < 1e-9);
        // mean mass change per unit time: ε²(c a/ε² − c n) = c(a − ζ)
        let zeta = p.eps * p.eps * n as f64;
        let dz = p.eps * p.eps * (p.immigration_rate_at(0.0) + drift);
        assert!((dz - p.c * (p.a - zeta)).abs() < 1e-12);
    }

    #[test]
    fn parameter_validation() {
        assert!(TwoLevelParams::new(1.0, 1.0, 0.0).is_err());
        assert!(TwoLevelParams::new(30.0, 1.0, 0.05).is_err());
        assert!(TwoLevelParams::new(1.0, -1.0, 0.05).is_err());
        assert!(TwoLevelParams::new(1.0, 1.0, 0.05).unwrap().with_schedule(vec![(2.0, 1.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn schedule_lookup() {
        let p = TwoLevelParams::new(1.0, 0.5, 0.1).unwrap().with_schedule(vec![(1.0, 2.0), (3.0, 0.0)]).unwrap();
        assert_eq!(p.level_at(0.5), (0.5, 1.0));
        assert_eq!(p.level_at(1.0), (2.0, 3.0));
        assert_eq!(p.level_at(10.0), (0.0, f64::INFINITY));
    }

    #[test]
    fn no_sources_stays_empty() {
        let p = TwoLevelParams::new(1.0, 0.0, 0.05).unwrap();
        let tr = simulate(&p, FamilyState::empty(), 50.0, 5.0, u64::MAX, &mut rng(1)).unwrap();
        assert!(tr.snapshots.iter().all(|s| s.zeta == 0.0 && s.family_count == 0));
        assert_eq!(tr.events, 0);
        let d = equilibrium_sample(&p, 20.0, &mut rng(1)).unwrap();
        assert_eq!(d.zeta, 0.0);
    }

    #[test]
    fn budget_exhaustion_keeps_partial() {
        let p = TwoLevelParams::new(1.0, 1.0, 0.05).unwrap();
        let err = simulate(&p, FamilyState::empty(), 50.0, 1.0, 1000, &mut rng(2)).unwrap_err();
        assert!(matches!(err.error, Error::Resource(_)));
        assert!(!err.partial.snapshots.is_empty());
    }

    #[test]
    fn burn_in_floor_enforced() {
        let p = TwoLevelParams::new(2.0, 1.0, 0.1).unwrap();
        assert!(equilibrium_sample(&p, 4.0, &mut rng(3)).is_err());
        assert!(equilibrium_sample(&p, 5.0, &mut rng(3)).is_ok());
    }

    #[test]
    fn ids_are_monotone_and_counts_positive() {
        let p = TwoLevelParams::new(1.0, 1.0, 0.1).unwrap();
        let tr = simulate(&p, FamilyState::empty(), 20.0, 1.0, u64::MAX, &mut rng(4)).unwrap();
        let fams = tr.state.families();
        assert!(fams.iter().all(|f| f.count > 0 && f.id < tr.state.issued_ids()));
        let mut ids: Vec<u64> = fams.iter().map(|f| f.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), fams.len());
        let n: u64 = fams.iter().map(|f| f.count).sum();
        assert_eq!(n, tr.state.individuals());
    }

    #[test]
    fn closed_forms_at_time_zero_return_init() {
        let init = MomentVector { m11: 0.3, m21: 0.2, m12: 0.5, ..Default::default() };
        let m = moment_closed_forms(0.0, 1.3, 0.8, 0.05, &init);
        assert!((m.m11 - 0.3).abs() < 1e-15);
        assert!((m.m21 - 0.2).abs() < 1e-15);
        assert!((m.m12 - 0.5).abs() < 1e-15);
        let s = moment_closed_forms(100.0, 1.0, 1.0, 0.0, &init);
        assert!((s.m22 - 3.0 / 16.0).abs() < 1e-15);
        assert!((s.m13 - (0.75 + 1.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn ode_matches_closed_forms_with_epsilon_terms() {
        for &(c, a, eps) in &[(1.0, 1.0, 0.0), (1.0, 1.0, 0.1), (2.0, 0.5, 0.05), (0.7, 1.3, 0.2)] {
            let init = MomentVector { m11: 0.4, m21: 0.3, m12: 0.6, m31: 0.1, m41: 0.1, m22: 0.1, big_m: 0.2, m13: 0.3 };
            let traj = moment_ode_solve(10.0, c, a, eps, &init, 1e-3).unwrap();
            for (t, m) in traj.iter().step_by(97) {
                let cf = moment_closed_forms(*t, c, a, eps, &init);
                assert!((m.m11 - cf.m11).abs() < 1e-9, "m11 at {t}");
                assert!((m.m21 - cf.m21).abs() < 1e-9, "m21 at {t}");
                assert!((m.m12 - cf.m12).abs() < 1e-9, "m12 at {t}: {} vs {}", m.m12, cf.m12);
            }
        }
    }

    #[test]
    fn ode_relaxes_to_stationary_values() {
        let (c, a) = (1.0, 1.0);
        let traj = moment_ode_solve(50.0, c, a, 0.0, &MomentVector::default(), 1e-3).unwrap();
        let at = |t: f64| traj[(t / 1e-3).round() as usize].1;
        let (m40, m50) = (at(40.0), at(50.0));
        for (x, y) in m40.to_array().iter().zip(m50.to_array()) {
            assert!(((x - y) / y).abs() < 1e-6, "{m40:?} vs {m50:?}");
        }
        let cf = moment_closed_forms(50.0, c, a, 0.0, &MomentVector::default());
        assert!(m50.max_abs_diff(&cf) < 1e-9, "{m50:?} vs {cf:?}");
        assert!(m50.m12 >= m50.m11 * m50.m11);
        let with_eps = moment_ode_solve(60.0, c, a, 0.02, &MomentVector::default(), 1e-3).unwrap().last().unwrap().1;
        assert!((with_eps.m12 - stationary_second_moment(c, a, 0.02)).abs() < 1e-9);
        assert!((with_eps.m21 - stationary_m21(c, a, 0.02)).abs() < 1e-9);
    }

    #[test]
    fn mean_mass_from_empty_follows_m11() {
        let p = TwoLevelParams::new(1.0, 1.0, 0.05).unwrap();
        let t = 1.5;
        let mut g = rng(5);
        let mut z = Summary::new();
        let mut x2 = Summary::new();
        for _ in 0..1000 {
            let tr = simulate(&p, FamilyState::empty(), t, t, u64::MAX, &mut g).unwrap();
            z.push(tr.state.zeta(p.eps));
            x2.push(tr.state.sizes(p.eps).moment(2));
        }
        let cf = moment_closed_forms(t, 1.0, 1.0, 0.05, &MomentVector::default());
        assert!((z.mean() - cf.m11).abs() < 4.0 * z.std_err(), "{} vs {}", z.mean(), cf.m11);
        assert!((x2.mean() - cf.m21).abs() < 4.0 * x2.std_err(), "{} vs {}", x2.mean(), cf.m21);
    }

    #[test]
    fn controlled_second_moment_is_consistent() {
        let p = TwoLevelParams::new(1.0, 1.0, 0.1).unwrap();
        let draws = equilibrium_chain(&p, 20.0, 3.0, 1500, &mut rng(13)).unwrap();
        let (est, se) = equilibrium_second_moment(&draws, 1.0, 1.0, 0.1);
        let plain = Summary::from_slice(&draws.iter().map(|d| d.zeta * d.zeta).collect::<Vec<_>>());
        assert!(se < plain.std_err());
        let want = stationary_second_moment(1.0, 1.0, 0.1);
        assert!((est - want).abs() < 4.0 * se, "{est} ± {se} vs {want}");
    }

    #[test]
    fn nu_moment_estimates_degenerate_input() {
        let r = estimate_nu_moments(&[0.0; 5], 1.0, 1.0).unwrap();
        assert_eq!((r.first, r.second), (0.0, 0.0));
        assert!(r.warning.is_some());
    }

    #[test]
    fn family_size_views() {
        let s = FamilySizes { eps: 0.1, counts: vec![1, 5, 20, 40] };
        assert!((s.mass() - 0.01 * 66.0).abs() < 1e-12);
        assert_eq!(s.count_above(0.5), 3);
        assert!((s.tail_mass(2.0) - 0.1 * (2.0 + 4.0)).abs() < 1e-12);
        let h = s.histogram(1.0, 5.0);
        let total: f64 = h.bins.iter().map(|b| b.2).sum();
        assert!((total - 0.4).abs() < 1e-12);
        assert!(h.to_csv().starts_with("bin_left,bin_right,weight\n"));
        let empty = FamilySizes { eps: 0.1, counts: vec![] };
        assert_eq!(empty.count_above(0.1), 0);
        assert_eq!(empty.tail_mass(1.0), 0.0);
    }
}
