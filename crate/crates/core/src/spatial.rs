//! Branching random walks on the truncated hierarchical group (Z_N)^D.
//!
//! Every individual branches critically at rate 1 and jumps at rate q_ℓ to a
//! uniform site at distance ℓ ≤ D. Jumps leaving B_D remove the individual at
//! rate κ, the boundary's exit rate, and are compensated by immigration of
//! single-individual families at total rate θκN^D placed uniformly. In
//! two-level mode each family additionally vanishes or duplicates at rate 1.
//!
//! With this boundary the equilibrium first and second moments of block
//! averages are exactly those given by the killed Green operator.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Partial, Result};
use crate::hiergroup::{GroupSpec, RateTable};
use crate::stats::Summary;
use crate::sumtree::SumTree;

/// Top bit of a member word: the member last entered its current block
/// at the exterior level from far away.
const FLAG: u64 = 1 << 63;
const SITE_MASK: u64 = !FLAG;

pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;
pub const DEFAULT_BURN_IN: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    OneLevel,
    TwoLevel,
}

impl Mode {
    pub fn level_exponent(self) -> u8 {
        match self {
            Mode::OneLevel => 1,
            Mode::TwoLevel => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFamily {
    pub id: u64,
    members: Vec<u64>,
}

impl SpatialFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sites(&self) -> impl Iterator<Item = u64> + '_ {
        self.members.iter().map(|m| m & SITE_MASK)
    }
}

/// Individuals grouped by family.
#[derive(Debug, Clone)]
pub struct SpatialConfiguration {
    pub spec: GroupSpec,
    families: Vec<SpatialFamily>,
    tree: SumTree,
    next_id: u64,
    pub clock: f64,
}

impl SpatialConfiguration {
    pub fn empty(spec: GroupSpec) -> Self {
        Self { spec, families: Vec::new(), tree: SumTree::new(), next_id: 0, clock: 0.0 }
    }

    /// Adds a family with members at `sites`; returns its id.
    pub fn add_family(&mut self, sites: &[u64]) -> Result<u64> {
        if sites.is_empty() {
            return Err(invalid("a family needs at least one member"));
        }
        if let Some(s) = sites.iter().find(|&&s| s >= self.spec.site_count()) {
            return Err(invalid(format!("site {s} outside the group")));
        }
        Ok(self.push_family(sites.to_vec()))
    }

    fn push_family(&mut self, members: Vec<u64>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tree.push(members.len() as u64);
        self.families.push(SpatialFamily { id, members });
        id
    }

    fn remove_family(&mut self, i: usize) {
        self.families.swap_remove(i);
        self.tree.swap_remove(i);
    }

    fn remove_member(&mut self, fi: usize, mi: usize) {
        let f = &mut self.families[fi];
        f.members.swap_remove(mi);
        if f.members.is_empty() {
            self.remove_family(fi);
        } else {
            self.tree.set(fi, f.members.len() as u64);
        }
    }

    pub fn families(&self) -> &[SpatialFamily] {
        &self.families
    }

    pub fn population(&self) -> u64 {
        self.tree.total()
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    fn members(&self) -> impl Iterator<Item = u64> + '_ {
        self.families.iter().flat_map(|f| f.members.iter().copied())
    }

    /// Individual counts of every radius-ℓ block, indexed by block number.
    pub fn block_counts(&self, level: usize) -> Vec<u64> {
        let p = self.spec.power(level);
        let mut out = vec![0u64; (self.spec.site_count() / p) as usize];
        for m in self.members() {
            out[((m & SITE_MASK) / p) as usize] += 1;
        }
        out
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.spec.depth() {
            return Err(invalid(format!("level {level} exceeds the depth {}", self.spec.depth())));
        }
        Ok(())
    }

    /// (flagged, total) individuals per radius-ℓ block.
    pub fn exterior_counts(&self, level: usize) -> Vec<(u64, u64)> {
        let p = self.spec.power(level);
        let mut out = vec![(0u64, 0u64); (self.spec.site_count() / p) as usize];
        for m in self.members() {
            let b = &mut out[((m & SITE_MASK) / p) as usize];
            b.1 += 1;
            if m & FLAG != 0 {
                b.0 += 1;
            }
        }
        out
    }
}

/// ζ_ℓ at one block: N^{−ℓ} · individuals in the radius-ℓ ball around `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockAverage {
    pub level: usize,
    pub value: f64,
}

pub fn block_average(config: &SpatialConfiguration, center: u64, level: usize) -> Result<BlockAverage> {
    config.check_level(level)?;
    let b = config.spec.block_of(center, level);
    let count = config.members().filter(|m| config.spec.block_of(m & SITE_MASK, level) == b).count();
    Ok(BlockAverage { level, value: count as f64 / config.spec.power(level) as f64 })
}

/// Nested block averages ζ_1, …, ζ_{ℓ_max} around `center`.
pub fn ergodic_profile(config: &SpatialConfiguration, center: u64, level_max: usize) -> Result<Vec<BlockAverage>> {
    config.check_level(level_max)?;
    (1..=level_max).map(|l| block_average(config, center, l)).collect()
}

/// Family sizes within a block, rescaled: size j·N^{−ℓ/2}, weight N^{−ℓ/2}.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySizeHistogram {
    pub level: usize,
    pub scale: f64,
    /// Member counts of the families present in the block.
    pub counts: Vec<u64>,
}

impl FamilySizeHistogram {
    /// `(size, weight)` entries.
    pub fn entries(&self) -> Vec<(f64, f64)> {
        self.counts.iter().map(|&j| (j as f64 * self.scale, self.scale)).collect()
    }

    /// ∫ x η(dx), equal to the block average.
    pub fn mass(&self) -> f64 {
        self.scale * self.scale * self.counts.iter().sum::<u64>() as f64
    }

    /// ∫_K^∞ x η(dx).
    pub fn tail_mass(&self, k: f64) -> f64 {
        self.counts.iter().map(|&j| j as f64 * self.scale).filter(|&x| x >= k).fold(0.0, |s, x| s + x * self.scale)
    }
}

pub fn family_size_measure(config: &SpatialConfiguration, center: u64, level: usize) -> Result<FamilySizeHistogram> {
    config.check_level(level)?;
    let b = config.spec.block_of(center, level);
    let counts = config
        .families
        .iter()
        .map(|f| f.sites().filter(|&s| config.spec.block_of(s, level) == b).count() as u64)
        .filter(|&j| j > 0)
        .collect();
    Ok(FamilySizeHistogram { level, scale: (config.spec.power(level) as f64).powf(-0.5), counts })
}

/// Family-size histograms of every radius-ℓ block at once.
pub fn all_family_size_measures(config: &SpatialConfiguration, level: usize) -> Result<Vec<FamilySizeHistogram>> {
    config.check_level(level)?;
    let p = config.spec.power(level);
    let scale = (p as f64).powf(-0.5);
    let mut out: Vec<FamilySizeHistogram> =
        (0..config.spec.site_count() / p).map(|_| FamilySizeHistogram { level, scale, counts: Vec::new() }).collect();
    let mut blocks: Vec<u64> = Vec::new();
    for f in &config.families {
        blocks.clear();
        blocks.extend(f.sites().map(|s| s / p));
        blocks.sort_unstable();
        let mut i = 0;
        while i < blocks.len() {
            let mut j = i;
            while j < blocks.len() && blocks[j] == blocks[i] {
                j += 1;
            }
            out[blocks[i] as usize].counts.push((j - i) as u64);
            i = j;
        }
    }
    Ok(out)
}

/// Poisson(θ) individuals per site, each its own family.
pub fn init_population<R: Rng + ?Sized>(spec: &GroupSpec, theta: f64, rng: &mut R) -> Result<SpatialConfiguration> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(invalid(format!("theta must be positive, got {theta}")));
    }
    let mut config = SpatialConfiguration::empty(spec.clone());
    let pois = Poisson::new(theta).expect("positive mean");
    for site in 0..spec.site_count() {
        let k = pois.sample(rng) as u64;
        for _ in 0..k {
            config.push_family(vec![site]);
        }
    }
    Ok(config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams {
    pub rates: RateTable,
    pub mode: Mode,
    /// Immigration density; immigrants arrive at total rate θ·κ·N^D.
    pub theta: f64,
    pub population_cap: u64,
    /// Level ℓ for the exterior-origin flag: a jump of distance ≥ ℓ+2 sets it,
    /// a jump of distance ℓ+1 clears it.
    pub exterior_level: usize,
}

impl SpatialParams {
    pub fn new(rates: RateTable, mode: Mode, theta: f64) -> Result<Self> {
        if rates.level_exponent != mode.level_exponent() {
            return Err(invalid(format!(
                "{mode:?} mode needs rates with level exponent {}, got {}",
                mode.level_exponent(),
                rates.level_exponent
            )));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid(format!("theta must be nonnegative, got {theta}")));
        }
        Ok(Self { rates, mode, theta, population_cap: DEFAULT_POPULATION_CAP, exterior_level: 1 })
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.population_cap = cap;
        self
    }

    pub fn with_exterior_level(mut self, level: usize) -> Self {
        self.exterior_level = level;
        self
    }

    /// Fraction of mass in a radius-ℓ block whose latest entry came from
    /// outside B_{ℓ+1}, by first moments: Σ_{k≥ℓ+2} q_k / Σ_{k≥ℓ+1} q_k
    /// with the exit rate standing in for q_{D+1}.
    pub fn predicted_exterior_fraction(&self) -> f64 {
        let l = self.exterior_level;
        let d = self.rates.depth();
        let q = |k: usize| if k <= d { self.rates.q(k) } else { self.rates.exit_rate };
        let far: f64 = (l + 2..=d + 1).map(q).sum();
        far / (far + q(l + 1))
    }
}

/// Event-driven engine.
pub struct SpatialSim<'r, R: Rng + ?Sized> {
    pub params: SpatialParams,
    pub config: SpatialConfiguration,
    pub events: u64,
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> SpatialSim<'r, R> {
    pub fn new(params: SpatialParams, config: SpatialConfiguration, rng: &'r mut R) -> Result<Self> {
        if params.rates.depth() != config.spec.depth() || params.rates.n != config.spec.n() {
            return Err(invalid("rate table does not match the group"));
        }
        if params.exterior_level + 1 > config.spec.depth() {
            return Err(invalid("exterior level must be below the depth"));
        }
        Ok(Self { params, config, events: 0, rng })
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let spec = self.config.spec.clone();
        let rates = &self.params.rates;
        let jump = rates.total_jump_rate();
        let kappa = rates.exit_rate;
        let per_ind = 1.0 + jump + kappa;
        let fam_rate = if self.params.mode == Mode::TwoLevel { 1.0 } else { 0.0 };
        let imm = self.params.theta * kappa * spec.site_count() as f64;
        let ext = self.params.exterior_level;
        while self.config.clock < t {
            let n = self.config.population();
            if n > self.params.population_cap {
                return Err(Error::Resource(format!(
                    "population {n} exceeds the cap {} at t = {}",
                    self.params.population_cap, self.config.clock
                )));
            }
            let f = self.config.family_count() as f64;
            let total = imm + fam_rate * f + per_ind * n as f64;
            if total <= 0.0 {
                self.config.clock = t;
                break;
            }
            let dt = -(1.0 - self.rng.random::<f64>()).ln() / total;
            if self.config.clock + dt >= t {
                self.config.clock = t;
                break;
            }
            self.config.clock += dt;
            self.events += 1;
            let u = self.rng.random::<f64>() * total;
            if u < imm {
                let site = self.rng.random_range(0..spec.site_count());
                self.config.push_family(vec![site | FLAG]);
            } else if u < imm + fam_rate * f {
                let i = self.rng.random_range(0..self.config.family_count());
                if self.rng.random::<bool>() {
                    let members = self.config.families[i].members.clone();
                    self.config.push_family(members);
                } else {
                    self.config.remove_family(i);
                }
            } else {
                let target = self.rng.random_range(0..n);
                let fi = self.config.tree.find(target);
                let mi = self.rng.random_range(0..self.config.families[fi].members.len());
                let v = self.rng.random::<f64>() * per_ind;
                if v < 0.5 {
                    self.config.remove_member(fi, mi);
                } else if v < 1.0 {
                    let m = self.config.families[fi].members[mi];
                    self.config.families[fi].members.push(m);
                    let len = self.config.families[fi].members.len() as u64;
                    self.config.tree.set(fi, len);
                } else if v < 1.0 + jump {
                    let m = self.config.families[fi].members[mi];
                    let (site, dist) = spec.sample_jump_index(m & SITE_MASK, rates, self.rng);
                    let flag = if dist >= ext + 2 {
                        FLAG
                    } else if dist == ext + 1 {
                        0
                    } else {
                        m & FLAG
                    };
                    self.config.families[fi].members[mi] = site | flag;
                } else {
                    self.config.remove_member(fi, mi);
                }
            }
        }
        Ok(())
    }
}

/// One row of the snapshot export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialSnapshot {
    pub time: f64,
    pub level: usize,
    pub block_center: u64,
    pub zeta: f64,
    pub family_count: usize,
}

pub fn snapshots_to_csv(rows: &[SpatialSnapshot]) -> String {
    let mut s = String::from("time,level,block_center,zeta,family_count\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.time, r.level, r.block_center, r.zeta, r.family_count));
    }
    s
}

#[derive(Debug, Clone)]
pub struct SpatialTrajectory {
    pub snapshots: Vec<SpatialSnapshot>,
    pub config: SpatialConfiguration,
    pub events: u64,
}

/// Runs to `t_end`, recording ζ_ℓ at the block of site 0 for ℓ = 1..D every
/// `snapshot_every` time units.
pub fn simulate_spatial<R: Rng + ?Sized>(
    config: SpatialConfiguration,
    params: &SpatialParams,
    t_end: f64,
    snapshot_every: f64,
    rng: &mut R,
) -> std::result::Result<SpatialTrajectory, Box<Partial<SpatialTrajectory>>> {
    let fail = |error: Error, config: SpatialConfiguration| {
        Box::new(Partial { error, partial: SpatialTrajectory { snapshots: vec![], config, events: 0 } })
    };
    if !(t_end >= 0.0 && snapshot_every > 0.0) {
        return Err(fail(invalid("need t_end ≥ 0 and a positive snapshot interval"), config));
    }
    let start = config.clock;
    let mut sim = match SpatialSim::new(params.clone(), config.clone(), rng) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, config)),
    };
    let record = |c: &SpatialConfiguration, out: &mut Vec<SpatialSnapshot>| {
        for l in 1..=c.spec.depth() {
            let z = block_average(c, 0, l).expect("level within depth").value;
            out.push(SpatialSnapshot { time: c.clock, level: l, block_center: 0, zeta: z, family_count: c.family_count() });
        }
    };
    let mut snapshots = Vec::new();
    record(&sim.config, &mut snapshots);
    let mut k = 1u64;
    loop {
        let target = (start + k as f64 * snapshot_every).min(start + t_end);
        if let Err(error) = sim.advance_to(target) {
            let partial = SpatialTrajectory { snapshots, events: sim.events, config: sim.config };
            return Err(Box::new(Partial { error, partial }));
        }
        record(&sim.config, &mut snapshots);
        if target >= start + t_end {
            break;
        }
        k += 1;
    }
    Ok(SpatialTrajectory { snapshots, events: sim.events, config: sim.config })
}

/// Per-snapshot statistics over all blocks of several levels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EquilibriumRecord {
    /// Per level (index ℓ−1): mean of ζ_ℓ over blocks at each snapshot.
    pub block_mean: Vec<Vec<f64>>,
    /// Per level: mean of ζ_ℓ² over blocks at each snapshot.
    pub block_second: Vec<Vec<f64>>,
    /// Per level: ζ_ℓ at one rotating block per snapshot.
    pub single_block: Vec<Vec<f64>>,
    /// (flagged, total) individuals over all blocks at the exterior level, per snapshot.
    pub exterior: Vec<(u64, u64)>,
    /// Family-size histograms at `tail_level` of one rotating block per snapshot.
    pub families: Vec<FamilySizeHistogram>,
    /// The rotating single-block values as export rows.
    pub snapshots: Vec<SpatialSnapshot>,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPlan {
    pub burn_in: f64,
    pub spacing: f64,
    pub snapshots: usize,
    pub tail_level: usize,
}

/// Starts from `init_population`, burns in, then records `plan.snapshots`
/// snapshots spaced `plan.spacing` apart.
pub fn equilibrium_run<R: Rng + ?Sized>(
    spec: &GroupSpec,
    params: &SpatialParams,
    plan: &EquilibriumPlan,
    rng: &mut R,
) -> Result<EquilibriumRecord> {
    if !(plan.spacing > 0.0 && plan.burn_in >= 0.0) {
        return Err(invalid("burn-in must be nonnegative and spacing positive"));
    }
    let config = init_population(spec, params.theta.max(f64::MIN_POSITIVE), rng)?;
    let mut sim = SpatialSim::new(params.clone(), config, rng)?;
    let d = spec.depth();
    let mut rec = EquilibriumRecord {
        block_mean: vec![Vec::with_capacity(plan.snapshots); d],
        block_second: vec![Vec::with_capacity(plan.snapshots); d],
        single_block: vec![Vec::with_capacity(plan.snapshots); d],
        ..Default::default()
    };
    for k in 0..plan.snapshots {
        sim.advance_to(plan.burn_in + k as f64 * plan.spacing)?;
        let c = &sim.config;
        for l in 1..=d {
            let p = spec.power(l) as f64;
            let counts = c.block_counts(l);
            let nb = counts.len() as f64;
            rec.block_mean[l - 1].push(counts.iter().map(|&x| x as f64 / p).sum::<f64>() / nb);
            rec.block_second[l - 1].push(counts.iter().map(|&x| (x as f64 / p).powi(2)).sum::<f64>() / nb);
            let b = k % counts.len();
            let z = counts[b] as f64 / p;
            rec.single_block[l - 1].push(z);
            rec.snapshots.push(SpatialSnapshot {
                time: c.clock,
                level: l,
                block_center: b as u64 * spec.power(l),
                zeta: z,
                family_count: c.family_count(),
            });
        }
        let ext = c.exterior_counts(params.exterior_level);
        rec.exterior.push(ext.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1)));
        let mut fams = all_family_size_measures(c, plan.tail_level)?;
        let i = k % fams.len();
        rec.families.push(fams.swap_remove(i));
    }
    rec.events = sim.events;
    Ok(rec)
}

/// One row per N of the mean-field comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRow {
    pub n: u32,
    pub samples: Vec<f64>,
    /// Two-sample KS distance to the reference entrance-law samples.
    pub ks: f64,
    /// 1.358·√((n+m)/(nm)), the 95% scale of the KS distance.
    pub ks_scale: f64,
    pub mean_gap: f64,
    pub second_moment_gap: f64,
    pub exterior_fraction: f64,
    pub exterior_se: f64,
    pub predicted_exterior_fraction: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldTable {
    pub rows: Vec<MeanFieldRow>,
    pub reference_mean: f64,
    pub reference_second_moment: f64,
    pub warning: Option<String>,
}

impl MeanFieldTable {
    /// KS distances never increase by more than the joint 95% scale, with at
    /// most one increase overall.
    pub fn ks_nonincreasing(&self) -> bool {
        let mut inversions = 0;
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.ks > a.ks {
                inversions += 1;
                if b.ks - a.ks > a.ks_scale.hypot(b.ks_scale) {
                    return false;
                }
            }
        }
        inversions <= 1
    }

    /// Least-squares exponent of the exterior fraction against N.
    pub fn exterior_exponent(&self) -> f64 {
        let x: Vec<f64> = self.rows.iter().map(|r| r.n as f64).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.exterior_fraction).collect();
        crate::stats::loglog_slope(&x, &y)
    }
}

const MIN_MEAN_FIELD_SAMPLES: usize = 500;

/// Compares equilibrium ζ_ℓ of the two-level spatial system for each N in
/// `n_list` with samples of the cascade entrance law at level ℓ.
///
/// Coefficients must have Σ 1/c_k² < ∞. Violations of the growth constraint
/// c_{k+1}/c_k < √N are recorded in the row note rather than rejected.
pub fn mean_field_experiment<R: Rng + ?Sized>(
    coeffs: &crate::hiergroup::CoefficientSequence,
    n_list: &[u32],
    depth: usize,
    plan: &EquilibriumPlan,
    reference: &[f64],
    theta: f64,
    rng: &mut R,
) -> Result<MeanFieldTable> {
    use crate::hiergroup::{classify_transience, make_rate_table};
    let level = plan.tail_level;
    if reference.is_empty() {
        return Err(invalid("no reference samples"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let note = match classify_transience(coeffs, 2, n) {
            Ok(r) if r.classification == crate::hiergroup::Transience::StronglyTransient => None,
            Ok(r) => Some(format!("classified {:?}", r.classification)),
            Err(e) => Some(format!("outside the growth constraint: {e}")),
        };
        let spec = GroupSpec::new(n, depth)?;
        let rates = make_rate_table(&spec, coeffs, 2)?;
        let params = SpatialParams::new(rates, Mode::TwoLevel, theta)?.with_exterior_level(level);
        let rec = equilibrium_run(&spec, &params, plan, rng)?;
        let samples = rec.single_block[level - 1].clone();
        let ks = crate::stats::ks_two_sample(&samples, reference).statistic;
        let fr: Vec<f64> = rec.exterior.iter().filter(|e| e.1 > 0).map(|&(a, b)| a as f64 / b as f64).collect();
        let fr = Summary::from_slice(&fr);
        let s = Summary::from_slice(&samples);
        let second = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
        let rs = Summary::from_slice(reference);
        let rsecond = reference.iter().map(|x| x * x).sum::<f64>() / reference.len() as f64;
        rows.push(MeanFieldRow {
            n,
            ks,
            ks_scale: crate::stats::ks_two_sample_scale(samples.len(), reference.len()),
            mean_gap: s.mean() - rs.mean(),
            second_moment_gap: second - rsecond,
            exterior_fraction: fr.mean(),
            exterior_se: fr.std_err(),
            predicted_exterior_fraction: params.predicted_exterior_fraction(),
            samples,
            note,
        });
    }
    let warning = (plan.snapshots < MIN_MEAN_FIELD_SAMPLES || reference.len() < MIN_MEAN_FIELD_SAMPLES)
        .then(|| format!("fewer than {MIN_MEAN_FIELD_SAMPLES} samples per law; KS distances have little power"));
    let rs = Summary::from_slice(reference);
    Ok(MeanFieldTable {
        rows,
        reference_mean: rs.mean(),
        reference_second_moment: reference.iter().map(|x| x * x).sum::<f64>() / reference.len() as f64,
        warning,
    })
}

/// Mean squared change of ζ_{ℓ+1} over windows of length N^{ℓ/2}, averaged
/// over blocks and windows. Small values mean the higher level is nearly
/// frozen on the time scale of level ℓ.
pub fn scale_separation<R: Rng + ?Sized>(sim: &mut SpatialSim<'_, R>, level: usize, windows: usize) -> Result<f64> {
    let spec = sim.config.spec.clone();
    if level + 1 > spec.depth() {
        return Err(invalid("level + 1 must not exceed the depth"));
    }
    let w = (spec.n() as f64).powf(level as f64 / 2.0);
    let p = spec.power(level + 1) as f64;
    let mut acc = Summary::new();
    let mut prev = sim.config.block_counts(level + 1);
    for _ in 0..windows {
        let t = sim.config.clock + w;
        sim.advance_to(t)?;
        let cur = sim.config.block_counts(level + 1);
        for (a, b) in prev.iter().zip(&cur) {
            acc.push(((*b as f64 - *a as f64) / p).powi(2));
        }
        prev = cur;
    }
    Ok(acc.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hiergroup::{green_operator, make_rate_table, make_rate_table_with, Boundary, CoefficientSequence};
    use rand::SeedableRng;

    fn rng(seed: u64) -> crate::Stream {
        crate::Stream::seed_from_u64(seed)
    }

    fn pow2() -> CoefficientSequence {
        CoefficientSequence::geometric(1.0, 2.0).unwrap()
    }

    fn setup(n: u32, d: usize, mode: Mode) -> (GroupSpec, SpatialParams) {
        let spec = GroupSpec::new(n, d).unwrap();
        let rates = make_rate_table(&spec, &pow2(), mode.level_exponent()).unwrap();
        (spec, SpatialParams::new(rates, mode, 1.0).unwrap())
    }

    #[test]
    fn poisson_start() {
        let spec = GroupSpec::new(4, 4).unwrap();
        let c = init_population(&spec, 2.0, &mut rng(1)).unwrap();
        let counts: Vec<f64> = c.block_counts(0).iter().map(|&x| x as f64).collect();
        let s = Summary::from_slice(&counts);
        assert!((s.mean() - 2.0).abs() < 4.0 * s.std_err());
        assert!((s.variance() / s.mean() - 1.0).abs() < 0.2);
        assert_eq!(c.family_count() as u64, c.population());
        let sparse = init_population(&spec, 1e-9, &mut rng(1)).unwrap();
        assert_eq!(sparse.population(), 0);
        assert!(init_population(&spec, 0.0, &mut rng(1)).is_err());
    }

    #[test]
    fn block_views() {
        let spec = GroupSpec::new(3, 3).unwrap();
        let empty = SpatialConfiguration::empty(spec.clone());
        assert_eq!(block_average(&empty, 5, 2).unwrap().value, 0.0);
        assert!(family_size_measure(&empty, 5, 2).unwrap().counts.is_empty());
        assert!(block_average(&empty, 0, 4).is_err());
        // two individuals per site: every block average is exactly 2
        let mut c = SpatialConfiguration::empty(spec.clone());
        for s in 0..27 {
            c.add_family(&[s, s]).unwrap();
        }
        for b in ergodic_profile(&c, 13, 3).unwrap() {
            assert_eq!(b.value, 2.0);
        }
        let mut c = SpatialConfiguration::empty(spec);
        c.add_family(&[0, 1, 1, 10]).unwrap();
        c.add_family(&[2, 26]).unwrap();
        let h = family_size_measure(&c, 0, 1).unwrap();
        let mut counts = h.counts.clone();
        counts.sort();
        assert_eq!(counts, vec![1, 3]);
        assert!((h.mass() - block_average(&c, 0, 1).unwrap().value).abs() < 1e-12);
        let all = all_family_size_measures(&c, 1).unwrap();
        assert_eq!(all[0].counts.len(), 2);
        assert_eq!(all[3].counts, vec![1]);
        assert!((h.tail_mass(1.0) - 3.0 / 3.0).abs() < 1e-12);
        assert!(c.add_family(&[27]).is_err());
    }

    #[test]
    fn nested_counts_monotone() {
        let (spec, params) = setup(3, 3, Mode::TwoLevel);
        let c = init_population(&spec, 1.0, &mut rng(2)).unwrap();
        let tr = simulate_spatial(c, &params, 5.0, 1.0, &mut rng(3)).unwrap();
        for site in [0u64, 7, 20] {
            let prof = ergodic_profile(&tr.config, site, 3).unwrap();
            for w in prof.windows(2) {
                let lo = w[0].value * spec.power(w[0].level) as f64;
                let hi = w[1].value * spec.power(w[1].level) as f64;
                assert!(hi >= lo);
            }
        }
        assert!(snapshots_to_csv(&tr.snapshots).starts_with("time,level,block_center,zeta,family_count\n0,1,0,"));
    }

    #[test]
    fn closed_critical_system_has_no_mean_drift() {
        let spec = GroupSpec::new(2, 3).unwrap();
        let rates = make_rate_table_with(&spec, &pow2(), 2, Boundary::Closed).unwrap();
        let params = SpatialParams::new(rates, Mode::TwoLevel, 1.0).unwrap();
        let mut g = rng(4);
        let mut drift = Summary::new();
        for _ in 0..1000 {
            let c = init_population(&spec, 1.0, &mut g).unwrap();
            let n0 = c.population() as f64;
            let tr = simulate_spatial(c, &params, 2.0, 2.0, &mut g).unwrap();
            drift.push(tr.config.population() as f64 - n0);
        }
        assert!(drift.mean().abs() < 4.0 * drift.std_err(), "{} ± {}", drift.mean(), drift.std_err());
    }

    #[test]
    fn family_bookkeeping() {
        let (spec, params) = setup(2, 3, Mode::TwoLevel);
        let c = init_population(&spec, 2.0, &mut rng(5)).unwrap();
        let tr = simulate_spatial(c, &params, 10.0, 10.0, &mut rng(6)).unwrap();
        let fams = tr.config.families();
        let mut ids: Vec<u64> = fams.iter().map(|f| f.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), fams.len());
        assert!(fams.iter().all(|f| !f.is_empty()));
        assert_eq!(fams.iter().map(|f| f.len() as u64).sum::<u64>(), tr.config.population());
        assert_eq!(tr.config.block_counts(0).iter().sum::<u64>(), tr.config.population());
    }

    #[test]
    fn population_cap_keeps_partial() {
        let (spec, params) = setup(2, 3, Mode::TwoLevel);
        let params = params.with_cap(5);
        let c = init_population(&spec, 3.0, &mut rng(7)).unwrap();
        let err = simulate_spatial(c, &params, 10.0, 1.0, &mut rng(7)).unwrap_err();
        assert!(matches!(err.error, Error::Resource(_)));
        assert!(!err.partial.snapshots.is_empty());
    }

    #[test]
    fn mode_and_rates_must_agree() {
        let spec = GroupSpec::new(4, 3).unwrap();
        let rates = make_rate_table(&spec, &pow2(), 1).unwrap();
        assert!(SpatialParams::new(rates, Mode::TwoLevel, 1.0).is_err());
    }

    fn second_moment_check(n: u32, d: usize, mode: Mode, seed: u64) {
        let (spec, params) = setup(n, d, mode);
        let plan = EquilibriumPlan { burn_in: 20.0, spacing: 3.0, snapshots: 400, tail_level: 1 };
        let rec = equilibrium_run(&spec, &params, &plan, &mut rng(seed)).unwrap();
        let g = green_operator(&params.rates, &spec).unwrap();
        let v2 = if mode == Mode::TwoLevel { 1.0 } else { 0.0 };
        let mean = Summary::from_slice(&rec.block_mean[0]);
        assert!((mean.mean() - 1.0).abs() < 4.0 * mean.std_err());
        let s = Summary::from_slice(&rec.block_second[0]);
        let want = g.block_second_moment(1.0, 1, 1.0, v2);
        assert!((s.mean() - want).abs() < 4.0 * s.std_err(), "{mode:?}: {} ± {} vs {want}", s.mean(), s.std_err());
    }

    #[test]
    fn second_moment_matches_green_operator_two_level() {
        second_moment_check(4, 3, Mode::TwoLevel, 8);
    }

    #[test]
    fn second_moment_matches_green_operator_one_level() {
        second_moment_check(4, 3, Mode::OneLevel, 9);
    }

    #[test]
    fn block_variance_shrinks_with_level() {
        let (spec, params) = setup(3, 4, Mode::TwoLevel);
        let plan = EquilibriumPlan { burn_in: 30.0, spacing: 3.0, snapshots: 300, tail_level: 1 };
        let rec = equilibrium_run(&spec, &params, &plan, &mut rng(10)).unwrap();
        let var: Vec<f64> = (0..4)
            .map(|i| Summary::from_slice(&rec.block_second[i]).mean() - Summary::from_slice(&rec.block_mean[i]).mean().powi(2))
            .collect();
        assert!(var.windows(2).all(|w| w[1] < w[0]), "{var:?}");
        let top = Summary::from_slice(&rec.single_block[3]);
        assert!((top.mean() - 1.0).abs() < 3.0 * top.std_dev());
    }

    #[test]
    fn exterior_fraction_matches_first_moments() {
        let (spec, params) = setup(4, 3, Mode::TwoLevel);
        let plan = EquilibriumPlan { burn_in: 20.0, spacing: 3.0, snapshots: 200, tail_level: 1 };
        let rec = equilibrium_run(&spec, &params, &plan, &mut rng(11)).unwrap();
        let fr: Vec<f64> = rec.exterior.iter().map(|&(a, b)| a as f64 / b as f64).collect();
        let s = Summary::from_slice(&fr);
        let want = params.predicted_exterior_fraction();
        // q_ℓ = 1 for all ℓ at N = 4, so the prediction is 2/3
        assert!((want - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.mean() - want).abs() < 4.0 * s.std_err(), "{} ± {} vs {want}", s.mean(), s.std_err());
    }

    #[test]
    fn mean_field_table_runs() {
        let coeffs = pow2();
        let plan = EquilibriumPlan { burn_in: 10.0, spacing: 2.0, snapshots: 60, tail_level: 1 };
        let mut g = rng(13);
        let reference: Vec<f64> = (0..200).map(|_| crate::feller::gamma_equilibrium_sample(1.0, 2.0, &mut g)).collect();
        let t = mean_field_experiment(&coeffs, &[2, 4], 3, &plan, &reference, 1.0, &mut g).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.warning.is_some());
        assert!(t.rows[0].note.is_some());
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.ks) && r.exterior_fraction > 0.0));
        assert!(t.rows[0].predicted_exterior_fraction > t.rows[1].predicted_exterior_fraction);
    }

    #[test]
    fn higher_level_changes_slowly() {
        let (spec, params) = setup(4, 3, Mode::TwoLevel);
        let mut g = rng(12);
        let c = init_population(&spec, 1.0, &mut g).unwrap();
        let mut sim = SpatialSim::new(params, c, &mut g).unwrap();
        sim.advance_to(20.0).unwrap();
        let m = scale_separation(&mut sim, 1, 50).unwrap();
        assert!(m.is_finite() && m > 0.0 && m < 1.0);
    }
}
