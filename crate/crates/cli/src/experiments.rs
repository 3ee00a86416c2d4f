//! One function per experiment. Each reads its section of the config (filling
//! in defaults), runs on streams derived from the master seed, and returns a
//! report plus deterministic data files.

use hierarchia::cascade::{self, EntranceLawSpec, LevyKind};
use hierarchia::feller;
use hierarchia::genealogy;
use hierarchia::hiergroup::{self, Boundary, GroupSpec};
use hierarchia::spatial::{self, EquilibriumPlan, EquilibriumRecord, Mode, SpatialParams};
use hierarchia::stats::{self, variance_std_err, Summary};
use hierarchia::twolevel::{self, MomentVector, TwoLevelParams};

use crate::config::{Config, Format};
use crate::report::{plot_csv, plot_json, CheckRow, RunReport, Status};
use crate::{chunked_draws, replicates, verify, CliError, DEFAULT_SEED};

const CHUNK: usize = 5_000;

pub struct RunOutput {
    pub report: RunReport,
    /// `(file name, contents)`; contents depend only on config and seed.
    pub files: Vec<(String, String)>,
}

/// Seed precedence: command-line flag, then the environment, then the
/// config file, then the built-in default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: &Config) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(e) = env {
        return crate::config::parse_seed(e);
    }
    Ok(config.seed()?.unwrap_or(DEFAULT_SEED))
}

/// Runs the experiment named in `config`. The seed and every default used are
/// written back into `config`, and its serialized form goes in the report.
pub fn run(config: &mut Config, seed: u64) -> Result<RunOutput, CliError> {
    let name = config.experiment().ok_or_else(|| CliError::Validation("no experiment given".into()))?.to_string();
    config.global.insert("seed".into(), seed.to_string());
    let format = config.format();
    config.global.insert("format".into(), format.as_str().into());
    let mut report = RunReport::new(&name, seed);
    let mut files = Vec::new();
    match name.as_str() {
        "walk" => walk(config, seed, &mut report)?,
        "feller" => feller_run(config, seed, &mut report)?,
        "twolevel" => twolevel_run(config, seed, &mut report, &mut files)?,
        "cascade" => cascade_run(config, seed, &mut report, &mut files)?,
        "genealogy" => genealogy_run(config, seed, &mut report, &mut files)?,
        "spatial" => spatial_run(config, seed, &mut report, &mut files)?,
        "verify-all" => {
            let list = config.section("verify").string("criteria", "all")?;
            let criteria = verify::parse_criteria(&list)?;
            let mut v = verify::Verifier::new(seed);
            for k in criteria {
                report.checks.push(v.criterion(k)?);
            }
            report.events = v.events;
        }
        other => return Err(CliError::Validation(format!("unknown experiment `{other}`"))),
    }
    let data = match format {
        Format::Csv => ("data.csv".to_string(), plot_csv(&report.plot)),
        Format::Json => ("data.json".to_string(), plot_json(&report.plot)),
    };
    files.insert(0, data);
    report.config = config.serialize();
    Ok(RunOutput { report, files })
}

fn walk(config: &mut Config, seed: u64, report: &mut RunReport) -> Result<(), CliError> {
    let mut s = config.section("walk");
    let n = s.u32("n", "4")?;
    let depth = s.count("depth", "4")?;
    let coeffs = s.coefficients("coefficients", "geometric 1 2")?;
    let k = s.u32("level_exponent", "2")? as u8;
    let boundary = match s.choice("boundary", "absorbing", &["absorbing", "closed"])?.as_str() {
        "absorbing" => Boundary::Absorbing,
        _ => Boundary::Closed,
    };
    let level = s.usize("level", "1")?;
    let paths = s.count("paths", "20000")?;
    let spec = GroupSpec::new(n, depth)?;
    if level > depth {
        return Err(CliError::Validation(format!("[walk] level {level} exceeds depth {depth}")));
    }
    let rates = hiergroup::make_rate_table_with(&spec, &coeffs, k, boundary)?;
    let green = hiergroup::green_operator(&rates, &spec)?;
    for d in 0..=depth {
        report.point("distance", d as f64, "green", green.g(d), 0.0);
    }
    for l in 0..=depth {
        let p = green.block_pairings(l);
        report.point("level", l as f64, "phi_g_phi", p.phi_g_phi, 0.0);
        report.point("level", l as f64, "phi_g2_phi", p.phi_g2_phi, 0.0);
    }
    let occ = chunked_draws(seed, "walk-occupation", paths, CHUNK, |rng| Ok(hiergroup::occupation_time(&spec, &rates, 0, 0, rng)?))?;
    let o = Summary::from_slice(&occ);
    report.checks.push(CheckRow::within_se(
        "walk-g0",
        "simulated occupation time at the origin vs radial Green value",
        green.g(0),
        o.mean(),
        o.std_err(),
        4.0,
    ));
    match hiergroup::classify_transience(&coeffs, k, n) {
        Ok(t) => {
            let (lo, hi) = t.degree.map_or((f64::NAN, f64::NAN), |d| (d.lo, d.hi));
            report.checks.push(CheckRow::new(
                "walk-class",
                "transience class and degree bounds",
                lo,
                hi,
                0.0,
                Status::Info,
                format!("{:?}; criterion sum {}", t.classification, t.criterion_value),
            ));
            report.warnings.extend(t.diagnostic);
        }
        // the killed walk is still well defined; only the infinite-volume class is unknown
        Err(e) => report.warnings.push(format!("transience not classified: {e}")),
    }
    let ps = green.block_pairings(level);
    report.checks.push(CheckRow::new(
        "walk-pair",
        "block pairing <phi,G phi> at the chosen level",
        ps.phi_g_phi,
        ps.phi_g_phi,
        0.0,
        Status::Info,
        format!("level {level}, <phi,phi> {}, <phi,G^2 phi> {}", ps.phi_phi, ps.phi_g2_phi),
    ));
    Ok(())
}

fn feller_run(config: &mut Config, seed: u64, report: &mut RunReport) -> Result<(), CliError> {
    let mut s = config.section("feller");
    let c = s.positive("c", "1")?;
    let x0 = s.positive("x0", "1")?;
    let t = s.positive("t", "1")?;
    let lambda = s.positive("lambda", "0.5")?;
    let reps = s.count("replicates", "100000")?;
    let xs = chunked_draws(seed, "feller-transition", reps, CHUNK, |rng| Ok(feller::fbd_transition_sample(x0, t, c, rng)))?;
    let lap: Vec<f64> = xs.iter().map(|x| (-lambda * x).exp()).collect();
    let ls = Summary::from_slice(&lap);
    report.checks.push(CheckRow::within_se(
        "feller-laplace",
        "E exp(-lambda X_t) vs exp(-x0 v_t(lambda))",
        (-x0 * feller::v_laplace(t, lambda, c)).exp(),
        ls.mean(),
        ls.std_err(),
        4.0,
    ));
    let alive: Vec<f64> = xs.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    let al = Summary::from_slice(&alive);
    report.checks.push(CheckRow::within_se(
        "feller-survival",
        "P(X_t > 0)",
        feller::survival_probability(x0, t, c)?,
        al.mean(),
        al.std_err(),
        4.0,
    ));
    let g = feller::GammaLaw::new(x0, c)?;
    let eq = chunked_draws(seed, "feller-equilibrium", reps, CHUNK, |rng| Ok(g.sample(rng)))?;
    let es = Summary::from_slice(&eq);
    report.checks.push(CheckRow::within_se(
        "feller-eq-var",
        "variance of the Gamma equilibrium with a = x0",
        g.variance(),
        es.variance(),
        variance_std_err(&eq),
        4.0,
    ));
    for i in 0..=40 {
        let ti = t * i as f64 / 10.0;
        let p = if i == 0 { 1.0 } else { feller::survival_probability(x0, ti, c)? };
        report.point("t", ti, "survival", p, 0.0);
        report.point("t", ti, "laplace", (-x0 * feller::v_laplace(ti, lambda, c)).exp(), 0.0);
    }
    report.point("t", t, "survival_mc", al.mean(), al.std_err());
    report.point("t", t, "laplace_mc", ls.mean(), ls.std_err());
    Ok(())
}

fn twolevel_run(config: &mut Config, seed: u64, report: &mut RunReport, files: &mut Vec<(String, String)>) -> Result<(), CliError> {
    let mut s = config.section("twolevel");
    let c = s.positive("c", "1")?;
    let a = s.positive("a", "1")?;
    let eps_list = s.f64_list("eps", "0.1,0.05")?;
    let burn_in = s.positive("burn_in", &format!("{}", twolevel::DEFAULT_BURN_IN_FACTOR / c))?;
    let spacing = s.positive("spacing", &format!("{}", 3.0 / c))?;
    let draws = s.count("draws", "1000")?;
    let chains = s.count("chains", "4")?;
    let t_end = s.positive("t_end", "10")?;
    let step = s.positive("step", "0.001")?;
    let tail_k = s.f64_list("tail_k", "1,2,4,8")?;

    // moment curves: exact closed forms against RK4, ε = 0 and each ε listed
    let init = MomentVector::default();
    let mut moments = String::from("eps,t,m11,m21,m12,m11_ode,m21_ode,m12_ode\n");
    for &eps in std::iter::once(&0.0).chain(&eps_list) {
        let path = twolevel::moment_ode_solve(t_end, c, a, eps, &init, step)?;
        let mut worst: f64 = 0.0;
        let every = (path.len() / 100).max(1);
        for (i, (t, m)) in path.iter().enumerate() {
            let e = twolevel::moment_closed_forms(*t, c, a, eps, &init);
            worst = worst.max((e.m11 - m.m11).abs()).max((e.m21 - m.m21).abs()).max((e.m12 - m.m12).abs());
            if i % every == 0 {
                moments.push_str(&format!("{eps},{t},{},{},{},{},{},{}\n", e.m11, e.m21, e.m12, m.m11, m.m21, m.m12));
            }
        }
        report.checks.push(CheckRow::new(
            &format!("moments-eps{eps}"),
            "max |closed form - RK4| over m11, m21, m12",
            0.0,
            worst,
            0.0,
            Status::from_bool(worst < 1e-6),
            "tolerance 1e-6",
        ));
    }
    files.push(("moments.csv".into(), moments));

    let per_chain = draws.div_ceil(chains);
    let mut last = Vec::new();
    for &eps in &eps_list {
        let p = TwoLevelParams::new(c, a, eps)?;
        let parts = replicates(seed, &format!("twolevel-{eps}"), chains, |_, rng| {
            Ok(twolevel::equilibrium_chain(&p, burn_in, spacing, per_chain, rng)?)
        })?;
        let d: Vec<_> = parts.into_iter().flatten().collect();
        let z: Vec<f64> = d.iter().map(|x| x.zeta).collect();
        let zs = Summary::from_slice(&z);
        report.checks.push(CheckRow::within_se(
            &format!("mean-eps{eps}"),
            "equilibrium mean of zeta vs a",
            a,
            zs.mean(),
            zs.std_err(),
            4.0,
        ));
        let (m2, se2) = twolevel::equilibrium_second_moment(&d, c, a, eps);
        report.checks.push(CheckRow::within_se(
            &format!("second-eps{eps}"),
            "E zeta^2 (control variates) vs exact finite-eps value",
            twolevel::stationary_second_moment(c, a, eps),
            m2,
            se2,
            4.0,
        ));
        let nu = twolevel::estimate_nu_moments(&z, a, c)?;
        report.checks.push(CheckRow::new(
            &format!("nu-eps{eps}"),
            "variance/a as an estimate of the integral of x^2 nu_c",
            1.0 / (4.0 * c * c),
            nu.second,
            nu.second_se,
            Status::Info,
            nu.warning.clone().unwrap_or_default(),
        ));
        if let Some(w) = nu.warning {
            report.warnings.push(w);
        }
        report.point("eps", eps, "second_moment", m2, se2);
        report.point("eps", eps, "mean", zs.mean(), zs.std_err());
        last = d;
    }
    report.point("eps", 0.0, "second_moment", a * a + a / (4.0 * c * c), 0.0);

    if !last.is_empty() {
        let sizes: Vec<_> = last.iter().map(|d| d.sizes.clone()).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &k in &tail_k {
            let tm = twolevel::tail_mass(&sizes, k);
            report.point("k", k, "tail_mass", tm.mean, tm.std_err);
            xs.push(k);
            ys.push(tm.mean);
        }
        report.checks.push(CheckRow::new(
            "tail-exponent",
            "log-log slope of E integral_K^inf x eta(dx) against K",
            f64::NAN,
            stats::loglog_slope(&xs, &ys),
            0.0,
            Status::Info,
            "finest eps",
        ));
        let max = 6.0 / c;
        let width = max / 60.0;
        let mut acc = vec![0.0; 60];
        for s in &sizes {
            for (i, b) in s.histogram(width, max).bins.iter().enumerate() {
                acc[i] += b.2;
            }
        }
        let h = twolevel::Histogram {
            bins: acc.iter().enumerate().map(|(i, w)| (i as f64 * width, (i + 1) as f64 * width, w / sizes.len() as f64)).collect(),
        };
        files.push(("histogram.csv".into(), h.to_csv()));
    }
    Ok(())
}

fn levy_kind(s: &mut crate::config::Section<'_>) -> Result<LevyKind, CliError> {
    let kind = s.choice("kind", "gamma", &["gamma", "twolevel"])?;
    Ok(match kind.as_str() {
        "gamma" => LevyKind::Gamma,
        _ => LevyKind::two_level(s.positive("eps", "0.03")?),
    })
}

fn cascade_run(config: &mut Config, seed: u64, report: &mut RunReport, files: &mut Vec<(String, String)>) -> Result<(), CliError> {
    let mut s = config.section("cascade");
    let theta = s.f64_req("theta")?;
    let coeffs = s.coefficients("coefficients", "geometric 1 2")?;
    let kind = levy_kind(&mut s)?;
    let level = s.usize("level", "1")?;
    let j_max = s.opt_usize("j_max")?;
    let reps = s.count("replicates", "20000")?;
    let top = s.count("top", "5")?;
    let spec = EntranceLawSpec::new(theta, coeffs, kind, j_max)?;
    let j = spec.j_max_for(level);
    config.section("cascade").usize("j_max", &j.to_string())?;
    let chunk = if kind == LevyKind::Gamma { CHUNK } else { 50 };
    let xs = chunked_draws(seed, "cascade-entrance", reps, chunk, |rng| Ok(cascade::entrance_law_sample(&spec, level, rng)?.value))?;
    let xsum = Summary::from_slice(&xs);
    report.checks.push(CheckRow::within_se("cascade-mean", "entrance law mean vs theta", theta, xsum.mean(), xsum.std_err(), 4.0));
    report.checks.push(CheckRow::within_se(
        "cascade-var",
        "entrance law variance vs theta times the truncated sum of m_k",
        spec.truncated_variance(level),
        xsum.variance(),
        variance_std_err(&xs),
        4.0,
    ));
    let tsd = spec.truncation_sd(level);
    if tsd > 1e-2 * theta.max(1e-12) {
        report.warnings.push(format!("truncation at j_max = {j} leaves a standard deviation of {tsd:.3e}"));
    }
    for l in level..j {
        report.point("level", l as f64, "variance_exact", spec.truncated_variance(l), 0.0);
    }
    report.point("level", level as f64, "variance_mc", xsum.variance(), variance_std_err(&xs));

    let n_chains = reps.min(5_000);
    let chains = replicates(seed, "cascade-chains", n_chains.div_ceil(100), |k, rng| {
        let n = 100.min(n_chains - k * 100);
        (0..n).map(|_| Ok(cascade::backward_chain_sample(&spec, top, rng)?)).collect::<Result<Vec<_>, CliError>>()
    })?
    .into_iter()
    .flatten()
    .collect::<Vec<_>>();
    for k in 1..top {
        let x: Vec<f64> = chains.iter().map(|ch| ch[k]).collect();
        let y: Vec<f64> = chains.iter().map(|ch| ch[k - 1]).collect();
        let fit = stats::linear_fit(&x, &y);
        let (lo, hi) = fit.slope_interval(0.99);
        report.checks.push(CheckRow::new(
            &format!("chain-slope{k}"),
            "slope of E[zeta_k | zeta_k+1], 99% interval must cover 1",
            1.0,
            fit.slope,
            fit.slope_se,
            Status::from_bool(lo <= 1.0 && 1.0 <= hi),
            format!("interval [{lo:.4}, {hi:.4}]"),
        ));
        report.point("level", k as f64, "chain_slope", fit.slope, fit.slope_se);
    }
    files.push(("chains.csv".into(), cascade::chains_to_csv(&chains)));
    Ok(())
}

fn genealogy_run(config: &mut Config, seed: u64, report: &mut RunReport, files: &mut Vec<(String, String)>) -> Result<(), CliError> {
    let mut s = config.section("genealogy");
    let theta = s.f64_req("theta")?;
    let coeffs = s.coefficients("coefficients", "geometric 1 2")?;
    let level = s.usize("level", "0")?;
    let j_max = s.opt_usize("j_max")?;
    let deltas = s.f64_list("delta", "0.5,0.1,0.02,0.005")?;
    let reps = s.count("replicates", "20000")?;
    let spec = EntranceLawSpec::new(theta, coeffs.clone(), LevyKind::Gamma, j_max)?;
    let j = spec.j_max_for(level);
    config.section("genealogy").usize("j_max", &j.to_string())?;
    let c = spec.kernel(level).c;
    for (i, &delta) in deltas.iter().enumerate() {
        let sets = replicates(seed, &format!("genealogy-jumps-{i}"), reps.div_ceil(CHUNK), |k, rng| {
            let n = CHUNK.min(reps - k * CHUNK);
            (0..n).map(|_| Ok(genealogy::decompose_jumps(c, theta, delta, rng)?)).collect::<Result<Vec<_>, CliError>>()
        })?;
        let sets: Vec<_> = sets.into_iter().flatten().collect();
        let counts: Vec<f64> = sets.iter().map(|j| j.jumps.len() as f64).collect();
        let dust: Vec<f64> = sets.iter().map(|j| j.dust).collect();
        let cs = Summary::from_slice(&counts);
        let ds = Summary::from_slice(&dust);
        report.checks.push(CheckRow::within_se(
            &format!("jumps-d{delta}"),
            "mean number of jumps above delta vs a times the Levy tail",
            theta * genealogy::jump_intensity_above(c, delta),
            cs.mean(),
            cs.std_err(),
            4.0,
        ));
        report.checks.push(CheckRow::within_se(
            &format!("dust-d{delta}"),
            "mean dust mass below delta",
            theta * genealogy::mass_below(c, delta),
            ds.mean(),
            ds.std_err(),
            4.0,
        ));
        report.point("delta", delta, "jump_count", cs.mean(), cs.std_err());
        report.point("delta", delta, "dust", ds.mean(), ds.std_err());
    }
    let spines = chunked_draws(seed, "genealogy-spine", reps, CHUNK, |rng| Ok(genealogy::spine_sample(&spec, level, rng)?.total))?;
    let ss = Summary::from_slice(&spines);
    let var = spec.truncated_variance(level);
    report.checks.push(CheckRow::within_se(
        "spine-mean",
        "size-biased mean theta + Var/theta",
        theta + var / theta,
        ss.mean(),
        ss.std_err(),
        4.0,
    ));
    for jj in level + 1..=j {
        let m = genealogy::expected_relatives(level, jj, &coeffs, LevyKind::Gamma)?;
        report.point("ancestor_distance", jj as f64, "expected_relatives", m, 0.0);
    }
    let bottom = level;
    let delta = *deltas.iter().fold(&f64::INFINITY, |a, b| if b < a { b } else { a });
    let mut rng = hierarchia::rng::stream(seed, "genealogy-forest", 0);
    let forest = genealogy::build_forest(&spec, bottom, delta.max(1e-3), &mut rng)?;
    files.push(("forest.csv".into(), forest.to_edge_list()));
    Ok(())
}

fn spatial_run(config: &mut Config, seed: u64, report: &mut RunReport, files: &mut Vec<(String, String)>) -> Result<(), CliError> {
    let mut s = config.section("spatial");
    let theta = s.f64_req("theta")?;
    let n = s.u32("n", "4")?;
    let depth = s.count("depth", "3")?;
    let coeffs = s.coefficients("coefficients", "geometric 1 2")?;
    let mode = match s.choice("mode", "two", &["one", "two"])?.as_str() {
        "one" => Mode::OneLevel,
        _ => Mode::TwoLevel,
    };
    let burn_in = s.f64("burn_in", &spatial::DEFAULT_BURN_IN.to_string())?;
    let spacing = s.positive("spacing", "5")?;
    let snapshots = s.count("snapshots", "300")?;
    let level = s.count("level", "1")?;
    let reps = s.count("replicates", "1")?;
    let cap = s.usize("cap", &spatial::DEFAULT_POPULATION_CAP.to_string())? as u64;
    if level > depth {
        return Err(CliError::Validation(format!("[spatial] level {level} exceeds depth {depth}")));
    }
    let spec = GroupSpec::new(n, depth)?;
    let rates = hiergroup::make_rate_table(&spec, &coeffs, mode.level_exponent())?;
    let green = hiergroup::green_operator(&rates, &spec)?;
    let params = SpatialParams::new(rates, mode, theta)?.with_cap(cap).with_exterior_level(level);
    let plan = EquilibriumPlan { burn_in, spacing, snapshots, tail_level: level };
    let recs = replicates(seed, "spatial", reps, |_, rng| Ok(spatial::equilibrium_run(&spec, &params, &plan, rng)?))?;
    let rec = merge(recs);
    report.events = rec.events;
    let v2 = if mode == Mode::TwoLevel { 1.0 } else { 0.0 };
    let mut variances = Vec::new();
    for l in 1..=depth {
        let m = Summary::from_slice(&rec.block_mean[l - 1]);
        let q = Summary::from_slice(&rec.block_second[l - 1]);
        let want = green.block_second_moment(theta, l, 1.0, v2);
        report.checks.push(CheckRow::within_se(&format!("mean-l{l}"), "block average vs theta", theta, m.mean(), m.std_err(), 4.0));
        report.checks.push(CheckRow::within_rel(
            &format!("second-l{l}"),
            "block second moment vs Green formula",
            want,
            q.mean(),
            q.std_err(),
            0.1,
        ));
        let v = Summary::from_slice(&rec.single_block[l - 1]).variance();
        variances.push(v);
        report.point("level", l as f64, "second_moment", q.mean(), q.std_err());
        report.point("level", l as f64, "second_moment_green", want, 0.0);
        report.point("level", l as f64, "variance", v, 0.0);
    }
    let decreasing = variances.windows(2).all(|w| w[1] < w[0]);
    report.checks.push(CheckRow::new(
        "variance-trend",
        "variance of zeta_l decreases with l",
        f64::NAN,
        variances.last().copied().unwrap_or(f64::NAN),
        0.0,
        if depth > 1 { Status::from_bool(decreasing) } else { Status::Info },
        format!("{variances:?}"),
    ));
    let fr: Vec<f64> = rec.exterior.iter().filter(|e| e.1 > 0).map(|&(a, b)| a as f64 / b as f64).collect();
    let fs = Summary::from_slice(&fr);
    if level < depth {
        report.checks.push(CheckRow::within_se(
            "exterior",
            "fraction of block mass from outside the parent block",
            params.predicted_exterior_fraction(),
            fs.mean(),
            fs.std_err(),
            4.0,
        ));
    }
    let tail: Vec<f64> = rec.families.iter().map(|h| h.tail_mass(1.0)).collect();
    let ts = Summary::from_slice(&tail);
    report.point("k", 1.0, "family_tail_mass", ts.mean(), ts.std_err());
    files.push(("snapshots.csv".into(), spatial::snapshots_to_csv(&rec.snapshots)));
    Ok(())
}

fn merge(recs: Vec<EquilibriumRecord>) -> EquilibriumRecord {
    let mut it = recs.into_iter();
    let mut out = it.next().unwrap_or_default();
    for r in it {
        for (a, b) in out.block_mean.iter_mut().zip(r.block_mean) {
            a.extend(b);
        }
        for (a, b) in out.block_second.iter_mut().zip(r.block_second) {
            a.extend(b);
        }
        for (a, b) in out.single_block.iter_mut().zip(r.single_block) {
            a.extend(b);
        }
        out.exterior.extend(r.exterior);
        out.families.extend(r.families);
        out.snapshots.extend(r.snapshots);
        out.events += r.events;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Config {
        Config::parse(text).unwrap()
    }

    #[test]
    fn seed_precedence() {
        let c = cfg("seed = 5\n");
        assert_eq!(resolve_seed(Some(1), Some("2"), &c).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("0x10"), &c).unwrap(), 16);
        assert_eq!(resolve_seed(None, None, &c).unwrap(), 5);
        assert_eq!(resolve_seed(None, None, &Config::default()).unwrap(), DEFAULT_SEED);
    }

    #[test]
    fn missing_theta_is_a_validation_error() {
        for e in ["cascade", "genealogy", "spatial"] {
            let mut c = cfg(&format!("experiment = {e}\n"));
            let err = run(&mut c, 1).err().unwrap();
            assert!(err.to_string().contains(&format!("missing required key `theta` in [{e}]")), "{err}");
        }
    }

    #[test]
    fn resolved_config_records_defaults() {
        let mut c = cfg("experiment = feller\n[feller]\nreplicates = 2000\n");
        let out = run(&mut c, 3).unwrap();
        assert!(out.report.config.contains("lambda = 0.5"));
        assert!(out.report.config.contains("seed = 3"));
        let again = Config::parse(&out.report.config).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn data_files_depend_only_on_seed() {
        let text = "experiment = cascade\nformat = json\n[cascade]\ntheta = 1\nreplicates = 3000\ntop = 3\n";
        let a = run(&mut cfg(text), 11).unwrap();
        let b = run(&mut cfg(text), 11).unwrap();
        assert_eq!(a.files, b.files);
        assert_eq!(a.files[0].0, "data.json");
        let c = run(&mut cfg(text), 12).unwrap();
        assert_ne!(a.files, c.files);
    }
}
