//! Browser bindings for three demo operations. Each returns a JSON string so
//! the page needs no generated type glue beyond `JSON.parse`.

use hierarchia::cascade::{self, EntranceLawSpec, LevyKind};
use hierarchia::feller;
use hierarchia::hiergroup::CoefficientSequence;
use hierarchia::stats::Summary;
use hierarchia::twolevel::{self, MomentVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DRAWS: usize = 2_000_000;

#[derive(Debug, Serialize)]
pub struct LaplaceCheck {
    pub exact: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub survival_exact: f64,
    pub survival_estimate: f64,
    pub draws: usize,
}

/// Exact Feller transitions from x0 over time t: E e^{−λX_t} and P(X_t > 0)
/// against their closed forms.
pub fn laplace_check(x0: f64, t: f64, c: f64, lambda: f64, draws: usize, seed: u64) -> Result<LaplaceCheck, String> {
    if !(x0 > 0.0 && t > 0.0 && c > 0.0 && lambda > 0.0) {
        return Err("x0, t, c and lambda must be positive".into());
    }
    let draws = draws.clamp(1, MAX_DRAWS);
    let mut rng = hierarchia::rng::stream(seed, "demo-feller", 0);
    let mut lap = Summary::new();
    let mut alive = 0usize;
    for _ in 0..draws {
        let x = feller::fbd_transition_sample(x0, t, c, &mut rng);
        lap.push((-lambda * x).exp());
        alive += (x > 0.0) as usize;
    }
    Ok(LaplaceCheck {
        exact: (-x0 * feller::v_laplace(t, lambda, c)).exp(),
        estimate: lap.mean(),
        std_err: lap.std_err(),
        survival_exact: feller::survival_probability(x0, t, c).map_err(|e| e.to_string())?,
        survival_estimate: alive as f64 / draws as f64,
        draws,
    })
}

#[derive(Debug, Serialize)]
pub struct MomentCurves {
    pub t: Vec<f64>,
    pub m11: Vec<f64>,
    pub m21: Vec<f64>,
    pub m12: Vec<f64>,
    /// Stationary E ζ² at this ε.
    pub limit_m12: f64,
}

/// Closed-form moment curves of the two-level system started empty.
pub fn moment_curves(c: f64, a: f64, eps: f64, t_end: f64, points: usize) -> Result<MomentCurves, String> {
    if !(c > 0.0 && a > 0.0 && eps >= 0.0 && t_end > 0.0) {
        return Err("need c, a, t_end > 0 and eps ≥ 0".into());
    }
    let points = points.clamp(2, 10_000);
    let init = MomentVector::default();
    let mut out =
        MomentCurves { t: vec![], m11: vec![], m21: vec![], m12: vec![], limit_m12: twolevel::stationary_second_moment(c, a, eps) };
    for i in 0..points {
        let t = t_end * i as f64 / (points - 1) as f64;
        let m = twolevel::moment_closed_forms(t, c, a, eps, &init);
        out.t.push(t);
        out.m11.push(m.m11);
        out.m21.push(m.m21);
        out.m12.push(m.m12);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct EntranceHistogram {
    /// `(left edge, density)` per bin.
    pub bins: Vec<(f64, f64)>,
    pub width: f64,
    pub mean: f64,
    pub variance: f64,
    pub exact_variance: f64,
}

/// Gamma-cascade entrance law at `level` for c_k = c·b^k.
pub fn entrance_histogram(
    theta: f64,
    c: f64,
    b: f64,
    level: usize,
    draws: usize,
    bins: usize,
    seed: u64,
) -> Result<EntranceHistogram, String> {
    let coeffs = CoefficientSequence::geometric(c, b).map_err(|e| e.to_string())?;
    let spec = EntranceLawSpec::new(theta, coeffs, LevyKind::Gamma, None).map_err(|e| e.to_string())?;
    let draws = draws.clamp(1, MAX_DRAWS);
    let bins = bins.clamp(1, 500);
    let mut rng = hierarchia::rng::stream(seed, "demo-cascade", 0);
    let xs = (0..draws)
        .map(|_| cascade::entrance_law_sample(&spec, level, &mut rng).map(|d| d.value))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    let s = Summary::from_slice(&xs);
    let hi = xs.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let width = hi / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in &xs {
        counts[((x / width) as usize).min(bins - 1)] += 1;
    }
    Ok(EntranceHistogram {
        bins: counts.iter().enumerate().map(|(i, &k)| (i as f64 * width, k as f64 / (draws as f64 * width))).collect(),
        width,
        mean: s.mean(),
        variance: s.variance(),
        exact_variance: spec.truncated_variance(level),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("plain data serializes")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = laplaceCheck)]
pub fn laplace_check_js(x0: f64, t: f64, c: f64, lambda: f64, draws: u32, seed: u32) -> Result<String, JsValue> {
    to_js(laplace_check(x0, t, c, lambda, draws as usize, seed as u64))
}

#[wasm_bindgen(js_name = momentCurves)]
pub fn moment_curves_js(c: f64, a: f64, eps: f64, t_end: f64, points: u32) -> Result<String, JsValue> {
    to_js(moment_curves(c, a, eps, t_end, points as usize))
}

#[wasm_bindgen(js_name = entranceHistogram)]
pub fn entrance_histogram_js(theta: f64, c: f64, b: f64, level: u32, draws: u32, bins: u32, seed: u32) -> Result<String, JsValue> {
    to_js(entrance_histogram(theta, c, b, level as usize, draws as usize, bins as usize, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_estimate_is_close() {
        let r = laplace_check(1.0, 1.0, 1.0, 0.5, 20_000, 3).unwrap();
        assert!((r.estimate - r.exact).abs() < 4.0 * r.std_err);
        assert!(laplace_check(-1.0, 1.0, 1.0, 0.5, 10, 3).is_err());
    }

    #[test]
    fn curves_start_empty_and_approach_the_limit() {
        let m = moment_curves(1.0, 1.0, 0.05, 30.0, 50).unwrap();
        assert_eq!(m.t.len(), 50);
        assert_eq!(m.m12[0], 0.0);
        assert!((m.m12[49] - m.limit_m12).abs() < 1e-9);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let h = entrance_histogram(1.0, 1.0, 2.0, 1, 5_000, 40, 9).unwrap();
        let total: f64 = h.bins.iter().map(|b| b.1 * h.width).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((h.exact_variance - 0.5).abs() < 1e-3);
    }
}
