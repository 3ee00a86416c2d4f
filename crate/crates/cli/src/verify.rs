//! The sixteen acceptance checks. Runs shared by several checks are computed
//! once and cached on the [`Verifier`].

use hierarchia::cascade::{self, EntranceLawSpec, LevyKind};
use hierarchia::feller;
use hierarchia::genealogy;
use hierarchia::hiergroup::{self, CoefficientSequence, GroupSpec};
use hierarchia::spatial::{self, EquilibriumPlan, EquilibriumRecord, Mode, SpatialParams};
use hierarchia::stats::{self, variance_std_err, Summary};
use hierarchia::twolevel::{self, EquilibriumDraw, MomentVector, TwoLevelParams};

use crate::config::Config;
use crate::experiments;
use crate::report::{CheckRow, Status};
use crate::{chunked_draws, replicates, CliError};

pub const CRITERIA: std::ops::RangeInclusive<usize> = 1..=16;

/// `all`, or a comma list of numbers and ranges such as `1-4,7`.
pub fn parse_criteria(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim() == "all" {
        return Ok(CRITERIA.collect());
    }
    let bad = |p: &str| CliError::Validation(format!("[verify] criteria: cannot parse `{p}`"));
    let mut out = Vec::new();
    for p in text.split(',').map(str::trim) {
        let (a, b) = match p.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad(p))?, b.trim().parse().map_err(|_| bad(p))?),
            None => {
                let v: usize = p.parse().map_err(|_| bad(p))?;
                (v, v)
            }
        };
        if a > b || !CRITERIA.contains(&a) || !CRITERIA.contains(&b) {
            return Err(bad(p));
        }
        out.extend(a..=b);
    }
    Ok(out)
}

/// (x0, t, c, λ) settings of the transition checks.
const FELLER_CASES: [(f64, f64, f64, f64); 3] = [(1.0, 1.0, 1.0, 0.5), (2.0, 0.5, 2.0, 1.0), (0.5, 2.0, 1.0, 2.0)];
/// ε values of the particle-system runs with (chains, draws per chain).
const TWO_LEVEL_RUNS: [(f64, usize, usize); 3] = [(0.1, 40, 500), (0.05, 40, 500), (0.02, 30, 200)];
const TWO_LEVEL_BURN_IN: f64 = 20.0;
const TWO_LEVEL_SPACING: f64 = 3.0;

fn pow2() -> CoefficientSequence {
    CoefficientSequence::geometric(1.0, 2.0).expect("valid coefficients")
}

pub struct Verifier {
    seed: u64,
    pub events: u64,
    feller: Option<Vec<Vec<f64>>>,
    two_level: Option<Vec<Vec<EquilibriumDraw>>>,
    spatial: Option<EquilibriumRecord>,
}

impl Verifier {
    pub fn new(seed: u64) -> Self {
        Self { seed, events: 0, feller: None, two_level: None, spatial: None }
    }

    pub fn criterion(&mut self, k: usize) -> Result<CheckRow, CliError> {
        match k {
            1 => self.c1(),
            2 => self.c2(),
            3 => self.c3(),
            4 => self.c4(),
            5 => self.c5(),
            6 => self.c6(),
            7 => self.c7(),
            8 => self.c8(),
            9 => self.c9(),
            10 => self.c10(),
            11 => self.c11(),
            12 => self.c12(),
            13 => self.c13(),
            14 => self.c14(),
            15 => self.c15(),
            16 => self.c16(),
            _ => Err(CliError::Validation(format!("no criterion {k}"))),
        }
    }

    fn feller_draws(&mut self) -> Result<&Vec<Vec<f64>>, CliError> {
        if self.feller.is_none() {
            let mut all = Vec::new();
            for (i, &(x0, t, c, _)) in FELLER_CASES.iter().enumerate() {
                all.push(chunked_draws(self.seed, &format!("c1-{i}"), 100_000, 5_000, |rng| {
                    Ok(feller::fbd_transition_sample(x0, t, c, rng))
                })?);
            }
            self.feller = Some(all);
        }
        Ok(self.feller.as_ref().unwrap())
    }

    fn c1(&mut self) -> Result<CheckRow, CliError> {
        let draws = self.feller_draws()?.clone();
        let mut zs = Vec::new();
        let mut first = None;
        for (&(x0, t, c, lambda), xs) in FELLER_CASES.iter().zip(&draws) {
            let v: Vec<f64> = xs.iter().map(|x| (-lambda * x).exp()).collect();
            let s = Summary::from_slice(&v);
            let want = (-x0 * feller::v_laplace(t, lambda, c)).exp();
            zs.push((s.mean() - want) / s.std_err());
            first.get_or_insert((want, s.mean(), s.std_err()));
        }
        Ok(z_row("C1", "Laplace transform of the exact transition sampler", first.unwrap(), &zs))
    }

    fn c2(&mut self) -> Result<CheckRow, CliError> {
        let draws = self.feller_draws()?.clone();
        let mut zs = Vec::new();
        let mut first = None;
        for (&(x0, t, c, _), xs) in FELLER_CASES.iter().zip(&draws) {
            let v: Vec<f64> = xs.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
            let s = Summary::from_slice(&v);
            let want = feller::survival_probability(x0, t, c)?;
            zs.push((s.mean() - want) / s.std_err());
            first.get_or_insert((want, s.mean(), s.std_err()));
        }
        Ok(z_row("C2", "survival fraction vs closed form", first.unwrap(), &zs))
    }

    fn c3(&mut self) -> Result<CheckRow, CliError> {
        let xs = chunked_draws(self.seed, "c3", 100_000, 5_000, |rng| Ok(feller::gamma_equilibrium_sample(1.0, 1.0, rng)))?;
        let s = Summary::from_slice(&xs);
        let zm = (s.mean() - 1.0) / s.std_err();
        let vse = variance_std_err(&xs);
        let zv = (s.variance() - 0.5) / vse;
        let ok = zm.abs() <= 4.0 && zv.abs() <= 4.0;
        Ok(CheckRow::new(
            "C3",
            "Gamma equilibrium variance (and mean 1)",
            0.5,
            s.variance(),
            vse,
            Status::from_bool(ok),
            format!("mean {:.5} (z {zm:.2}), variance z {zv:.2}; tolerance 4 SE", s.mean()),
        ))
    }

    fn c4(&mut self) -> Result<CheckRow, CliError> {
        let init = MomentVector { m11: 0.5, m21: 0.3, m12: 0.4, ..Default::default() };
        let path = twolevel::moment_ode_solve(10.0, 1.0, 1.0, 0.0, &init, 1e-3)?;
        let mut worst: f64 = 0.0;
        for (t, m) in &path {
            let e = twolevel::moment_closed_forms(*t, 1.0, 1.0, 0.0, &init);
            worst = worst.max((e.m11 - m.m11).abs()).max((e.m21 - m.m21).abs()).max((e.m12 - m.m12).abs());
        }
        Ok(CheckRow::new(
            "C4",
            "max |RK4 - closed form| of m11, m21, m12 on [0, 10]",
            0.0,
            worst,
            0.0,
            Status::from_bool(worst < 1e-6),
            format!("max deviation {worst:.3e}; tolerance 1e-6"),
        ))
    }

    fn two_level_draws(&mut self) -> Result<&Vec<Vec<EquilibriumDraw>>, CliError> {
        if self.two_level.is_none() {
            let mut all = Vec::new();
            for &(eps, chains, per) in &TWO_LEVEL_RUNS {
                let p = TwoLevelParams::new(1.0, 1.0, eps)?;
                let parts = replicates(self.seed, &format!("c5-{eps}"), chains, |_, rng| {
                    Ok(twolevel::equilibrium_chain(&p, TWO_LEVEL_BURN_IN, TWO_LEVEL_SPACING, per, rng)?)
                })?;
                all.push(parts.into_iter().flatten().collect());
            }
            self.two_level = Some(all);
        }
        Ok(self.two_level.as_ref().unwrap())
    }

    fn c5(&mut self) -> Result<CheckRow, CliError> {
        let runs = self.two_level_draws()?;
        let fine = runs.last().unwrap();
        let z: Vec<f64> = fine.iter().map(|d| d.zeta).collect();
        let zs = Summary::from_slice(&z);
        let mut cv = Vec::new();
        for (d, &(eps, _, _)) in runs.iter().zip(&TWO_LEVEL_RUNS) {
            cv.push(twolevel::equilibrium_second_moment(d, 1.0, 1.0, eps));
        }
        let (m2, se2) = *cv.last().unwrap();
        let mean_ok = (zs.mean() - 1.0).abs() <= 0.03;
        let second_ok = (m2 - 1.25).abs() <= 0.05 * 1.25;
        let monotone = cv.windows(2).all(|w| w[1].0 < w[0].0);
        let trend: Vec<String> = cv.iter().zip(&TWO_LEVEL_RUNS).map(|(v, r)| format!("eps {}: {:.4}", r.0, v.0)).collect();
        Ok(CheckRow::new(
            "C5",
            "E zeta^2 at the finest eps vs a^2 + a/(4c^2)",
            1.25,
            m2,
            se2,
            Status::from_bool(mean_ok && second_ok && monotone),
            format!(
                "mean {:.4} (tolerance 3%), second moment tolerance 5%, decreasing in eps: {monotone} [{}]",
                zs.mean(),
                trend.join("; ")
            ),
        ))
    }

    fn c6(&mut self) -> Result<CheckRow, CliError> {
        let fine = self.two_level_draws()?.last().unwrap();
        let z: Vec<f64> = fine.iter().map(|d| d.zeta).collect();
        let nu = twolevel::estimate_nu_moments(&z, 1.0, 1.0)?;
        let mut row = CheckRow::within_rel("C6", "variance/a as the second moment of nu_c", 0.25, nu.second, nu.second_se, 0.1);
        row.detail.push_str(&format!("; exact value at this eps {:.4}", twolevel::stationary_second_moment(1.0, 1.0, 0.02) - 1.0));
        Ok(row)
    }

    fn c7(&mut self) -> Result<CheckRow, CliError> {
        let spec = EntranceLawSpec::new(1.0, pow2(), LevyKind::Gamma, Some(12))?;
        let xs = chunked_draws(self.seed, "c7", 100_000, 5_000, |rng| Ok(cascade::entrance_law_sample(&spec, 1, rng)?.value))?;
        let s = Summary::from_slice(&xs);
        let vse = variance_std_err(&xs);
        let zm = (s.mean() - 1.0) / s.std_err();
        let zv = (s.variance() - 0.5) / vse;
        Ok(CheckRow::new(
            "C7",
            "entrance law variance at level 1 vs theta times the sum of 1/(2c_k)",
            0.5,
            s.variance(),
            vse,
            Status::from_bool(zm.abs() <= 4.0 && zv.abs() <= 4.0),
            format!("mean {:.5} (z {zm:.2}), variance z {zv:.2}; tolerance 4 SE", s.mean()),
        ))
    }

    fn c8(&mut self) -> Result<CheckRow, CliError> {
        let spec = EntranceLawSpec::new(1.0, pow2(), LevyKind::Gamma, None)?;
        let top = 5;
        let chains: Vec<Vec<f64>> = replicates(self.seed, "c8", 50, |_, rng| {
            (0..200).map(|_| Ok(cascade::backward_chain_sample(&spec, top, rng)?)).collect::<Result<Vec<_>, CliError>>()
        })?
        .into_iter()
        .flatten()
        .collect();
        let mut ok = true;
        let mut parts = Vec::new();
        let mut worst = (1.0, 0.0);
        for k in 1..top {
            let x: Vec<f64> = chains.iter().map(|c| c[k]).collect();
            let y: Vec<f64> = chains.iter().map(|c| c[k - 1]).collect();
            let fit = stats::linear_fit(&x, &y);
            let (lo, hi) = fit.slope_interval(0.99);
            ok &= lo <= 1.0 && 1.0 <= hi;
            if (fit.slope - 1.0).abs() >= (worst.0 - 1.0f64).abs() {
                worst = (fit.slope, fit.slope_se);
            }
            parts.push(format!("level {k}: [{lo:.4}, {hi:.4}]"));
        }
        Ok(CheckRow::new(
            "C8",
            "regression slope of zeta_k on zeta_k+1 (99% interval covers 1)",
            1.0,
            worst.0,
            worst.1,
            Status::from_bool(ok),
            parts.join("; "),
        ))
    }

    fn c9(&mut self) -> Result<CheckRow, CliError> {
        let spec = EntranceLawSpec::new(1.0, pow2(), LevyKind::Gamma, Some(1))?;
        let xs = chunked_draws(self.seed, "c9", 10_000, 2_500, |rng| Ok(genealogy::spine_sample(&spec, 0, rng)?.total))?;
        // Gamma(3, rate 2)
        let ks = stats::ks_one_sample(&xs, |y| {
            let x = 2.0 * y.max(0.0);
            1.0 - (-x).exp() * (1.0 + x + x * x / 2.0)
        });
        Ok(CheckRow::new(
            "C9",
            "KS p-value of the size-biased spine vs Gamma(3, rate 2)",
            0.01,
            ks.p_value,
            0.0,
            Status::from_bool(ks.p_value > 0.01),
            format!("KS distance {:.4}; pass when p > 0.01", ks.statistic),
        ))
    }

    fn c10(&mut self) -> Result<CheckRow, CliError> {
        let d1 = hiergroup::degree_of_transience(2.0, 16, 1)?;
        let d2 = hiergroup::degree_of_transience(2.0, 16, 2)?;
        let err = (d1 - 1.0 / 3.0).abs().max((d2 - 3.0).abs());
        Ok(CheckRow::new(
            "C10",
            "degree of transience for c = 2, N = 16",
            1.0 / 3.0,
            d1,
            0.0,
            Status::from_bool(err <= 1e-12),
            format!("level 2 gives {d2} (target 3); tolerance 1e-12"),
        ))
    }

    fn c11(&mut self) -> Result<CheckRow, CliError> {
        let spec = GroupSpec::new(4, 4)?;
        let rates = hiergroup::make_rate_table(&spec, &pow2(), 2)?;
        let g = hiergroup::green_operator(&rates, &spec)?;
        let xs = chunked_draws(self.seed, "c11", 100_000, 5_000, |rng| Ok(hiergroup::occupation_time(&spec, &rates, 0, 0, rng)?))?;
        let s = Summary::from_slice(&xs);
        Ok(CheckRow::within_rel("C11", "Green value g(0) vs simulated occupation time", g.g(0), s.mean(), s.std_err(), 0.02))
    }

    fn spatial_record(&mut self) -> Result<&EquilibriumRecord, CliError> {
        if self.spatial.is_none() {
            let spec = GroupSpec::new(4, 4)?;
            let rates = hiergroup::make_rate_table(&spec, &pow2(), 2)?;
            let params = SpatialParams::new(rates, Mode::TwoLevel, 1.0)?;
            let plan = EquilibriumPlan { burn_in: 30.0, spacing: 5.0, snapshots: 2000, tail_level: 1 };
            let mut rng = hierarchia::rng::stream(self.seed, "c12", 0);
            let rec = spatial::equilibrium_run(&spec, &params, &plan, &mut rng)?;
            self.events += rec.events;
            self.spatial = Some(rec);
        }
        Ok(self.spatial.as_ref().unwrap())
    }

    fn c12(&mut self) -> Result<CheckRow, CliError> {
        let spec = GroupSpec::new(4, 4)?;
        let rates = hiergroup::make_rate_table(&spec, &pow2(), 2)?;
        let want = hiergroup::green_operator(&rates, &spec)?.block_second_moment(1.0, 1, 1.0, 1.0);
        let s = Summary::from_slice(&self.spatial_record()?.block_second[0]);
        Ok(CheckRow::within_rel("C12", "block second moment at level 1 vs Green formula", want, s.mean(), s.std_err(), 0.1))
    }

    fn c13(&mut self) -> Result<CheckRow, CliError> {
        let rec = self.spatial_record()?;
        let v: Vec<f64> = (0..3).map(|l| Summary::from_slice(&rec.single_block[l]).variance()).collect();
        let ok = v.windows(2).all(|w| w[1] < w[0]);
        Ok(CheckRow::new(
            "C13",
            "Var zeta_l strictly decreasing for l = 1, 2, 3",
            v[0],
            v[2],
            0.0,
            Status::from_bool(ok),
            format!("variances {:.4}, {:.4}, {:.4}", v[0], v[1], v[2]),
        ))
    }

    fn c14(&mut self) -> Result<CheckRow, CliError> {
        let spec = EntranceLawSpec::new(1.0, pow2(), LevyKind::TwoLevel { eps: 0.03, burn_in_factor: 10.0 }, Some(6))?;
        let reference = chunked_draws(self.seed, "c14-reference", 2000, 50, |rng| Ok(cascade::entrance_law_sample(&spec, 1, rng)?.value))?;
        let plan = EquilibriumPlan { burn_in: 30.0, spacing: 5.0, snapshots: 2000, tail_level: 1 };
        let n_list = [2u32, 4, 8];
        let tables = replicates(self.seed, "c14-spatial", n_list.len(), |i, rng| {
            Ok(spatial::mean_field_experiment(&pow2(), &n_list[i..=i], 4, &plan, &reference, 1.0, rng)?)
        })?;
        let mut table = tables[0].clone();
        table.rows = tables.into_iter().flat_map(|t| t.rows).collect();
        let ks_ok = table.ks_nonincreasing();
        let frac_ok = table.rows.windows(2).all(|w| w[1].exterior_fraction < w[0].exterior_fraction);
        let pred_ok = table.rows.iter().all(|r| (r.exterior_fraction - r.predicted_exterior_fraction).abs() <= 4.0 * r.exterior_se);
        let rows: Vec<String> = table
            .rows
            .iter()
            .map(|r| {
                format!(
                    "N={}: KS {:.4} (scale {:.4}), exterior {:.4} ± {:.4} vs {:.4}{}",
                    r.n,
                    r.ks,
                    r.ks_scale,
                    r.exterior_fraction,
                    r.exterior_se,
                    r.predicted_exterior_fraction,
                    r.note.as_ref().map(|_| " [growth constraint violated]").unwrap_or("")
                )
            })
            .collect();
        let last = table.rows.last().unwrap();
        Ok(CheckRow::new(
            "C14",
            "mean-field approach: KS to the entrance law and exterior fraction over N = 2, 4, 8",
            last.predicted_exterior_fraction,
            last.exterior_fraction,
            last.exterior_se,
            Status::from_bool(ks_ok && frac_ok && pred_ok),
            format!(
                "KS nonincreasing {ks_ok}, fraction decreasing {frac_ok}, within 4 SE {pred_ok}; exterior exponent {:.3}; {}",
                table.exterior_exponent(),
                rows.join("; ")
            ),
        ))
    }

    fn c15(&mut self) -> Result<CheckRow, CliError> {
        let ks = [1.0, 2.0, 4.0, 8.0];
        let fine = self.two_level_draws()?.last().unwrap();
        let sizes: Vec<_> = fine.iter().map(|d| d.sizes.clone()).collect();
        let tails: Vec<f64> = ks.iter().map(|&k| twolevel::tail_mass(&sizes, k).mean).collect();
        let slope = stats::loglog_slope(&ks, &tails);
        // supplementary readings, not part of the verdict
        let (px, py): (Vec<f64>, Vec<f64>) = ks.iter().zip(&tails).filter(|p| *p.1 > 0.0).map(|(k, t)| (*k, *t)).unzip();
        let positive = stats::loglog_slope(&px, &py);
        let rec = self.spatial_record()?;
        let spatial: Vec<f64> =
            ks.iter().map(|&k| rec.families.iter().fold(0.0, |s, h| s + h.tail_mass(k)) / rec.families.len() as f64).collect();
        let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.3e}")).collect::<Vec<_>>().join(", ");
        Ok(CheckRow::new(
            "C15",
            "log-log slope of E integral_K^inf x eta(dx), K = 1, 2, 4, 8",
            -1.0,
            slope,
            0.0,
            Status::from_bool((-1.3..=-0.7).contains(&slope)),
            format!(
                "pass band [-1.3, -0.7]; tail masses {}; slope over nonzero points {positive:.3}; spatial level-1 family tails {}",
                fmt(&tails),
                fmt(&spatial)
            ),
        ))
    }

    fn c16(&mut self) -> Result<CheckRow, CliError> {
        let text = "experiment = cascade\n[cascade]\ntheta = 1\nreplicates = 20000\ntop = 4\n";
        let run = |threads| -> Result<Vec<(String, String)>, CliError> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Resource(e.to_string()))?;
            pool.install(|| Ok(experiments::run(&mut Config::parse(text)?, self.seed)?.files))
        };
        let a = run(1)?;
        let b = run(4)?;
        let bytes: usize = a.iter().map(|f| f.1.len()).sum();
        Ok(CheckRow::new(
            "C16",
            "data files identical with 1 and 4 worker threads",
            1.0,
            if a == b { 1.0 } else { 0.0 },
            0.0,
            Status::from_bool(a == b),
            format!("{} files, {bytes} bytes", a.len()),
        ))
    }
}

/// Pass when every z-score is within 4; reports the first case.
fn z_row(id: &str, anchor: &str, first: (f64, f64, f64), zs: &[f64]) -> CheckRow {
    let ok = zs.iter().all(|z| z.abs() <= 4.0);
    let list: Vec<String> = zs.iter().map(|z| format!("{z:.2}")).collect();
    CheckRow::new(id, anchor, first.0, first.1, first.2, Status::from_bool(ok), format!("z-scores [{}]; tolerance 4 SE", list.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_lists() {
        assert_eq!(parse_criteria("all").unwrap().len(), 16);
        assert_eq!(parse_criteria("1-3, 10").unwrap(), vec![1, 2, 3, 10]);
        assert!(parse_criteria("0").is_err());
        assert!(parse_criteria("5-2").is_err());
        assert!(parse_criteria("x").is_err());
    }

    #[test]
    fn exact_criteria_pass() {
        let mut v = Verifier::new(1);
        assert_eq!(v.criterion(4).unwrap().status, Status::Pass);
        assert_eq!(v.criterion(10).unwrap().status, Status::Pass);
    }
}
