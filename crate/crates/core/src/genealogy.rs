//! Jump structure of composed gamma subordinators: Poisson jump sets above a
//! threshold, the labelled forest linking jumps across levels, and the
//! size-biased spine.
//!
//! The one-level Lévy measure is γ_c(dx) = 2c x^{−1} e^{−2cx} dx.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::cascade::{self, EntranceLawSpec, LevyKind, SubordinatorKernel};
use crate::error::{invalid, Result};
use crate::hiergroup::CoefficientSequence;
use crate::special::exp_integral_e1;

/// Jumps of size ≥ `threshold` as `(location, size)` sorted by location,
/// plus the mean mass of everything smaller.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSet {
    pub jumps: Vec<(f64, f64)>,
    pub dust: f64,
    pub threshold: f64,
    /// Length of the location interval [0, a].
    pub span: f64,
}

impl JumpSet {
    pub fn total(&self) -> f64 {
        self.jumps.iter().map(|j| j.1).sum::<f64>() + self.dust
    }
}

/// γ_c[δ, ∞) = 2c·E₁(2cδ).
pub fn jump_intensity_above(c: f64, delta: f64) -> f64 {
    2.0 * c * exp_integral_e1(2.0 * c * delta)
}

/// ∫_0^δ x γ_c(dx) = 1 − e^{−2cδ}.
pub fn mass_below(c: f64, delta: f64) -> f64 {
    -(-2.0 * c * delta).exp_m1()
}

/// Draws u from the density ∝ e^{−u}/u on [u0, ∞).
fn sample_restricted_tail<R: Rng + ?Sized>(u0: f64, rng: &mut R) -> f64 {
    let e1_u0 = exp_integral_e1(u0);
    let lower = if u0 < 1.0 { (e1_u0 - exp_integral_e1(1.0)) / e1_u0 } else { 0.0 };
    let exp1 = Exp::new(1.0).expect("unit rate");
    if rng.random::<f64>() < lower {
        // on [u0, 1): log-uniform proposal, accept with e^{−u}
        loop {
            let u = u0 * (1.0 / u0).powf(rng.random::<f64>());
            if rng.random::<f64>() < (-u).exp() {
                return u;
            }
        }
    }
    // on [max(u0,1), ∞): shifted exponential proposal, accept with b/u
    let b = u0.max(1.0);
    loop {
        let u = b + exp1.sample(rng);
        if rng.random::<f64>() * u < b {
            return u;
        }
    }
}

/// Poisson jumps of a·γ_c restricted to [δ, ∞) with uniform locations on [0, a].
pub fn decompose_jumps<R: Rng + ?Sized>(c: f64, a: f64, delta: f64, rng: &mut R) -> Result<JumpSet> {
    if !(delta > 0.0) {
        return Err(invalid(format!("threshold must be positive, got {delta}")));
    }
    if !(a >= 0.0) || !(c > 0.0) {
        return Err(invalid(format!("need a ≥ 0 and c > 0, got a = {a}, c = {c}")));
    }
    let mean = a * jump_intensity_above(c, delta);
    let count = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(rng) as usize } else { 0 };
    let u0 = 2.0 * c * delta;
    let mut jumps: Vec<(f64, f64)> = (0..count).map(|_| (a * rng.random::<f64>(), sample_restricted_tail(u0, rng) / (2.0 * c))).collect();
    jumps.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(JumpSet { jumps, dust: a * mass_below(c, delta), threshold: delta, span: a })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestNode {
    pub level: usize,
    pub id: usize,
    /// `None` for roots. A node is a root when it sits at the top level or
    /// when its location falls in the sub-threshold mass of the level above.
    pub parent: Option<usize>,
    /// Jump size.
    pub label: f64,
    /// Image interval [left, left + label) in the domain of the level below.
    pub left: f64,
    /// Location in the domain of this level.
    pub location: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpForest {
    pub nodes: Vec<ForestNode>,
    pub top: usize,
    pub bottom: usize,
    /// Dust per level, indexed by `level - bottom`.
    pub dust: Vec<f64>,
    pub threshold: f64,
}

impl JumpForest {
    pub fn level_nodes(&self, level: usize) -> impl Iterator<Item = &ForestNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    pub fn roots(&self) -> impl Iterator<Item = &ForestNode> {
        self.nodes.iter().filter(|n| n.parent.is_none())
    }

    /// Labels plus dust at `level`: the increment S_level(·) over the whole domain.
    pub fn level_mass(&self, level: usize) -> f64 {
        self.level_nodes(level).map(|n| n.label).sum::<f64>() + self.dust[level - self.bottom]
    }

    pub fn children(&self, id: usize) -> impl Iterator<Item = &ForestNode> {
        self.nodes.iter().filter(move |n| n.parent == Some(id))
    }

    /// `level,node_id,parent_id,label` rows; the parent is empty for roots.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::from("level,node_id,parent_id,label\n");
        for n in &self.nodes {
            let p = n.parent.map(|p| p.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", n.level, n.id, p, n.label));
        }
        s
    }
}

/// Builds the forest of jumps of S_{top−1}, …, S_bottom where
/// top = `spec.j_max_for(bottom)`.
///
/// Within a level the path is the jump sum plus the dust spread linearly over
/// the domain, so each jump owns the image interval it creates; a jump of the
/// level below is a child of the jump whose image interval contains its location.
pub fn build_forest<R: Rng + ?Sized>(spec: &EntranceLawSpec, bottom: usize, delta: f64, rng: &mut R) -> Result<JumpForest> {
    if spec.kind != LevyKind::Gamma {
        return Err(invalid("exact jump decomposition is available for the gamma kind only"));
    }
    let top = spec.j_max_for(bottom);
    if top <= bottom {
        return Err(invalid("truncation level must exceed the bottom level"));
    }
    let mut nodes: Vec<ForestNode> = Vec::new();
    let mut dust = vec![0.0; top - bottom];
    let mut domain = spec.theta;
    // (left, right, id) of the image intervals of the level above
    let mut parents: Vec<(f64, f64, usize)> = Vec::new();
    for level in (bottom..top).rev() {
        let js = decompose_jumps(spec.kernel(level).c, domain, delta, rng)?;
        dust[level - bottom] = js.dust;
        let mut cum = 0.0;
        let mut next: Vec<(f64, f64, usize)> = Vec::with_capacity(js.jumps.len());
        for &(tau, y) in &js.jumps {
            let left = cum + if domain > 0.0 { js.dust * tau / domain } else { 0.0 };
            let k = parents.partition_point(|p| p.0 <= tau);
            let parent = (k > 0 && tau < parents[k - 1].1).then(|| parents[k - 1].2);
            let id = nodes.len();
            nodes.push(ForestNode { level, id, parent, label: y, left, location: tau });
            next.push((left, left + y, id));
            cum += y;
        }
        domain = js.total();
        parents = next;
    }
    Ok(JumpForest { nodes, top: top - 1, bottom, dust, threshold: delta })
}

/// A draw from the size-biasing of γ_c, x γ_c(dx) = 2c e^{−2cx} dx.
pub fn size_biased_jump<R: Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    if !(c > 0.0) {
        return Err(invalid(format!("c must be positive, got {c}")));
    }
    Ok(Exp::new(2.0 * c).expect("positive rate").sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpineSample {
    /// Size-biased jumps Ŷ_k from the top level down to the sampled level.
    pub spine: Vec<f64>,
    /// Ŷ_k pushed down to the sampled level through independent kernels, for
    /// every spine level above the sampled one (same order as `spine`).
    pub side_masses: Vec<f64>,
    /// An independent unbiased draw of the entrance law.
    pub base: f64,
    pub total: f64,
}

/// A draw from the size-biased entrance law at `level`.
pub fn spine_sample<R: Rng + ?Sized>(spec: &EntranceLawSpec, level: usize, rng: &mut R) -> Result<SpineSample> {
    if spec.kind != LevyKind::Gamma {
        return Err(invalid("the spine construction needs the gamma kind"));
    }
    let top = spec.j_max_for(level);
    if top <= level {
        return Err(invalid("truncation level must exceed the sampled level"));
    }
    let base = cascade::entrance_law_sample(spec, level, rng)?.value;
    let mut spine = Vec::with_capacity(top - level);
    let mut side_masses = Vec::with_capacity(top - level - 1);
    for k in (level..top).rev() {
        let y = size_biased_jump(spec.kernel(k).c, rng)?;
        spine.push(y);
        if k > level {
            let kernels: Vec<SubordinatorKernel> = (level..k).map(|i| spec.kernel(i)).collect();
            side_masses.push(cascade::iterate(&kernels, y, rng)?);
        }
    }
    let total = base + side_masses.iter().sum::<f64>() + spine[spine.len() - 1];
    Ok(SpineSample { spine, side_masses, base, total })
}

/// m_{j−1}: expected normalized mass sharing a closest common ancestor at distance j.
pub fn expected_relatives(level: usize, j: usize, coeffs: &CoefficientSequence, kind: LevyKind) -> Result<f64> {
    if j <= level {
        return Err(invalid(format!("need j > level, got j = {j}, level = {level}")));
    }
    let c = coeffs.get(j - 1).ok_or_else(|| invalid(format!("coefficient c_{} is not defined", j - 1)))?;
    Ok(SubordinatorKernel::new(kind, c)?.second_moment())
}

/// Jumps of a two-level kernel read off a grid: increments over cells of
/// width `h` above `delta` become jumps at the cell midpoint, the rest is dust.
pub fn detect_jumps_on_grid<R: Rng + ?Sized>(kernel: &SubordinatorKernel, a: f64, h: f64, delta: f64, rng: &mut R) -> Result<JumpSet> {
    if !(h > 0.0 && delta > 0.0) {
        return Err(invalid("grid width and threshold must be positive"));
    }
    let cells = (a / h).ceil() as usize;
    let mut jumps = Vec::new();
    let mut dust = 0.0;
    for i in 0..cells {
        let lo = i as f64 * h;
        let w = h.min(a - lo);
        let inc = kernel.sample(w, rng)?;
        if inc > delta {
            jumps.push((lo + w / 2.0, inc));
        } else {
            dust += inc;
        }
    }
    Ok(JumpSet { jumps, dust, threshold: delta, span: a })
}
