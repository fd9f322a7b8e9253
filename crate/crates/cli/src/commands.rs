use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tubeharm_core::analysis::{growth_audit, growth_profile, solve_growth_problem, Field, GrowthReport, Sampling};
use tubeharm_core::barriers::{
    estimate_delta_c, verify_sign_region, working_delta_c, z_coefficients, z_threshold, Barrier, SignReport, Verdict,
};
use tubeharm_core::geometry::build_levels;
use tubeharm_core::measures::{
    halfplane_oracle, kappa, lindqvist_oracle, measure_data, p_harmonic_measure, scaling_experiment, MeasureProblem,
    MeasureSample, ScalingTable,
};
use tubeharm_core::solver::solve_cascade;
use tubeharm_core::{BiradialPoint, DomainSpec, Exponents, NodeState, SolveOptions, SolveReport, TubeGeometry};

use crate::config::{ExperimentConfig, OracleKind, SolverConfig};
use crate::output::{csv_body, Check, Writer};
use crate::{core_failure, Failure};

/// What a command leaves for `main` to turn into an exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// Labels of solves that hit the sweep cap.
    pub unconverged: Vec<String>,
}

fn solve_options(exps: &Exponents, cfg: &SolverConfig) -> Result<SolveOptions, Failure> {
    let mut opts = SolveOptions::for_exponents(exps).with_stop_tol(cfg.stop_tol);
    if let Some(scheme) = cfg.scheme {
        opts = opts.with_scheme(scheme);
    }
    if let Some(w) = cfg.omega {
        opts = opts.with_omega(w);
    }
    opts.max_sweeps = cfg.max_sweeps;
    opts.validate().map_err(core_failure)?;
    Ok(opts)
}

fn exponents(p: f64, n: usize, m: usize) -> Result<Exponents, Failure> {
    Exponents::new(p, n, m).map_err(core_failure)
}

// ---------------------------------------------------------------- barriers

#[derive(Debug, Clone, Serialize)]
struct BarrierRow {
    p: f64,
    gamma: f64,
    beta: f64,
    delta_hat: Option<f64>,
    delta_check: Option<f64>,
    delta_c: Option<f64>,
    hat_verdict: Option<Verdict>,
    hat_worst_relative: Option<f64>,
    check_verdict: Option<Verdict>,
    check_worst_relative: Option<f64>,
    z2: f64,
    z4: f64,
    z_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
struct ThresholdRow {
    gamma: f64,
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct BarriersResult {
    n: usize,
    m: usize,
    rows: Vec<BarrierRow>,
    sign_reports: Vec<SignReport>,
    thresholds: Vec<ThresholdRow>,
}

pub fn barriers(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.barriers;
    let (n, m) = (c.n, c.m);
    if m < 1 || m + 2 > n {
        return Err(Failure::Config(format!(
            "barriers require 1 <= m <= n - 2 (got n = {n}, m = {m})"
        )));
    }
    if c.p.is_empty() {
        return Err(Failure::Config("barriers need at least one p".into()));
    }
    if c.gamma.is_empty() && c.gamma_fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Failure::Config("gamma fractions must lie in (0, 1), i.e. 0 < γ < β".into()));
    }
    // resolve and validate the whole (p, γ) grid before scanning anything
    let mut cells = Vec::new();
    for &p in &c.p {
        if p.is_infinite() {
            return Err(Failure::Config("barriers are defined for finite p only".into()));
        }
        let base = exponents(p, n, m)?;
        let gammas: Vec<f64> = if c.gamma.is_empty() {
            c.gamma_fractions.iter().map(|f| f * base.beta).collect()
        } else {
            c.gamma.clone()
        };
        for g in gammas {
            if !(g > 0.0 && g < base.beta) {
                return Err(Failure::Config(format!(
                    "γ = {g} violates 0 < γ < β = {} at p = {p}",
                    base.beta
                )));
            }
            cells.push(base.with_gamma(g).map_err(core_failure)?);
        }
    }
    let scan = (c.scan[0], c.scan[1]);
    let mut rows = Vec::new();
    let mut sign_reports = Vec::new();
    let mut all_signs = true;
    for e in cells {
        let hat = Barrier::upper_hat(e).map_err(core_failure)?;
        let check = Barrier::lower_check(e).map_err(core_failure)?;
        let dh = estimate_delta_c(&hat, c.delta_tol, scan).ok();
        let dc = estimate_delta_c(&check, c.delta_tol, scan).ok();
        let delta = dh.zip(dc).map(|(a, b)| a.min(b));
        let (mut hv, mut hw, mut cv, mut cw) = (None, None, None, None);
        if let Some(d) = delta {
            let rh = verify_sign_region(&hat, d, scan).map_err(core_failure)?;
            let rc = verify_sign_region(&check, d, scan).map_err(core_failure)?;
            (hv, hw, cv, cw) = (Some(rh.verdict), Some(rh.worst_relative), Some(rc.verdict), Some(rc.worst_relative));
            sign_reports.push(rh);
            sign_reports.push(rc);
        }
        let ok = delta.is_some_and(|d| d > 1e-3) && hv == Some(Verdict::Pass) && cv == Some(Verdict::Pass);
        all_signs &= ok;
        let z = z_coefficients(&e).map_err(core_failure)?;
        rows.push(BarrierRow {
            p: e.p,
            gamma: z.gamma,
            beta: e.beta,
            delta_hat: dh,
            delta_check: dc,
            delta_c: delta,
            hat_verdict: hv,
            hat_worst_relative: hw,
            check_verdict: cv,
            check_worst_relative: cw,
            z2: z.z2,
            z4: z.z4,
            z_holds: z.inequalities_hold(),
        });
    }
    let mut ladder = c.z_ladder.clone();
    ladder.sort_by(f64::total_cmp);
    let thresholds = c
        .z_gammas
        .iter()
        .map(|&gamma| {
            Ok(ThresholdRow {
                gamma,
                threshold: z_threshold(n, m, gamma, &ladder).map_err(core_failure)?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let smallest = rows.iter().filter_map(|r| r.delta_c).fold(f64::INFINITY, f64::min);
    let checks = vec![Check::new(
        2,
        "barrier signs",
        all_signs,
        format!("{} (p, γ) cells, smallest δ̂_c {smallest:.4}", rows.len()),
    )];
    let mut w = Writer::new(out, "barriers", cfg)?;
    w.csv("barriers.csv", &csv_body(&rows)?)?;
    w.csv("z_thresholds.csv", &csv_body(&thresholds)?)?;
    w.json(
        "barriers.json",
        &checks,
        &BarriersResult {
            n,
            m,
            rows,
            sign_reports,
            thresholds,
        },
    )?;
    Ok(Outcome {
        checks,
        unconverged: Vec::new(),
    })
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, Serialize)]
struct NodeRow {
    rho: f64,
    sigma: f64,
    state: &'static str,
    u: f64,
}

#[derive(Serialize)]
struct SolveResult<'a> {
    exponents: Exponents,
    report: &'a SolveReport,
}

pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.solve;
    let exps = exponents(c.p, c.n, c.m)?;
    let geometry = TubeGeometry::new(c.n, c.m, c.s).map_err(core_failure)?;
    let opts = solve_options(&exps, &c.solver)?;
    let band = c.transition && c.m >= 1 && c.s > 0.0;
    let mut spec = DomainSpec::ball(geometry, c.radius, true);
    if band {
        spec = spec.with_transition(c.s, 2.0 * c.s);
    }
    let grids = build_levels(&spec, &c.resolution, c.levels).map_err(core_failure)?;
    let (u, report) = solve_cascade(&grids, &measure_data(c.s, band), &exps, &opts).map_err(core_failure)?;
    let g = &u.grid;
    let nodes: Vec<NodeRow> = (0..g.len())
        .filter(|&i| g.states[i] != NodeState::Exterior)
        .map(|i| {
            let b = g.biradial(i);
            NodeRow {
                rho: b.rho,
                sigma: b.sigma,
                state: g.states[i].as_str(),
                u: u.values[i],
            }
        })
        .collect();
    let mut w = Writer::new(out, "solve", cfg)?;
    w.csv("solution.csv", &csv_body(&nodes)?)?;
    w.json(
        "solve.json",
        &[],
        &SolveResult {
            exponents: exps,
            report: &report,
        },
    )?;
    Ok(Outcome {
        checks: Vec::new(),
        unconverged: if report.converged { Vec::new() } else { vec!["solve".into()] },
    })
}

// ---------------------------------------------------------------- measure

#[derive(Serialize)]
struct MeasureResult<'a> {
    exponents: Exponents,
    samples: &'a [MeasureSample],
    report: &'a SolveReport,
}

#[derive(Serialize)]
struct SampleRow {
    radius: f64,
    rho: f64,
    sigma: f64,
    value: f64,
    h: f64,
}

pub fn measure(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.measure;
    let exps = exponents(c.p, c.n, c.m)?;
    let geometry = TubeGeometry::new(c.n, c.m, c.s).map_err(core_failure)?;
    let probes = if c.probes.is_empty() {
        vec![BiradialPoint {
            rho: 2.0 * c.s,
            sigma: 0.0,
        }]
    } else {
        c.probes
            .iter()
            .map(|&[rho, sigma]| BiradialPoint::new(rho, sigma).map_err(core_failure))
            .collect::<Result<_, _>>()?
    };
    let mut problem = MeasureProblem::new(geometry, c.radius, exps, c.resolution).with_probes(probes);
    problem.transition = c.transition;
    problem.cascade_levels = c.levels;
    problem.solve = solve_options(&exps, &c.solver)?;
    let sol = p_harmonic_measure(&problem).map_err(core_failure)?;
    let rows: Vec<SampleRow> = sol
        .samples
        .iter()
        .map(|s| SampleRow {
            radius: s.radius,
            rho: s.probe.rho,
            sigma: s.probe.sigma,
            value: s.value,
            h: s.h,
        })
        .collect();
    let mut w = Writer::new(out, "measure", cfg)?;
    w.csv("measure.csv", &csv_body(&rows)?)?;
    w.json(
        "measure.json",
        &[],
        &MeasureResult {
            exponents: exps,
            samples: &sol.samples,
            report: &sol.report,
        },
    )?;
    Ok(Outcome {
        checks: Vec::new(),
        unconverged: if sol.report.converged { Vec::new() } else { vec!["measure".into()] },
    })
}

// ---------------------------------------------------------------- oracle

#[derive(Serialize)]
struct OracleRow {
    a: f64,
    b: f64,
    value: f64,
}

#[derive(Serialize)]
struct OracleResult {
    kind: OracleKind,
    n: usize,
    m: usize,
    r: f64,
    kappa: Option<f64>,
    rows: Vec<OracleRow>,
}

pub fn oracle(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.oracle;
    let (n, m) = match c.kind {
        OracleKind::Halfplane => {
            if (c.n, c.m) != (2, 1) {
                return Err(Failure::Config(format!(
                    "the half-plane oracle needs n = 2, m = 1 (got n = {}, m = {})",
                    c.n, c.m
                )));
            }
            (2, 1)
        }
        OracleKind::Lindqvist => (c.n, c.m),
    };
    let mut rows = Vec::with_capacity(c.points.len());
    for &[a, b] in &c.points {
        let value = match c.kind {
            OracleKind::Halfplane => halfplane_oracle(a, b, c.r),
            OracleKind::Lindqvist => {
                let at = BiradialPoint::new(a, b).map_err(core_failure)?;
                lindqvist_oracle(at, c.r, n, m)
            }
        }
        .map_err(core_failure)?;
        rows.push(OracleRow { a, b, value });
    }
    let kappa = match c.kind {
        OracleKind::Lindqvist => Some(kappa(n, m).map_err(core_failure)?),
        OracleKind::Halfplane => None,
    };
    for r in &rows {
        println!("u({}, {}) = {:.12}", r.a, r.b, r.value);
    }
    let mut w = Writer::new(out, "oracle", cfg)?;
    w.csv("oracle.csv", &csv_body(&rows)?)?;
    w.json(
        "oracle.json",
        &[],
        &OracleResult {
            kind: c.kind,
            n,
            m,
            r: c.r,
            kappa,
            rows,
        },
    )?;
    Ok(Outcome::default())
}

// ---------------------------------------------------------------- scaling

pub fn scaling(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.scaling;
    let exps = exponents(c.p, c.n, c.m)?;
    let geometry = TubeGeometry::new(c.n, c.m, c.s).map_err(core_failure)?;
    let opts = solve_options(&exps, &c.solver)?;
    if !(c.delta_c > 0.0 && c.delta_c < 1.0) {
        return Err(Failure::Config(format!("delta_c = {} must lie in (0, 1)", c.delta_c)));
    }
    if c.radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Failure::Config("radii must be strictly increasing".into()));
    }
    let table: ScalingTable =
        scaling_experiment(geometry, exps, &c.radii, c.resolution, &opts, c.delta_c).map_err(core_failure)?;
    let beta = exps.beta;
    let slope = table.fit.map(|f| f.slope);
    let slope_ok = slope.is_some_and(|s| s >= -1.1 * beta && s <= -0.9 * beta);
    let spread_ok = table.spread.is_some_and(|s| s <= 3.0);
    let checks = vec![
        Check::new(
            6,
            "scaling slope",
            slope_ok,
            format!("slope {} vs -β = {:.4} ± 10%", fmt_opt(slope), -beta),
        ),
        Check::new(
            6,
            "compensated spread",
            spread_ok,
            format!("spread {} (<= 3)", fmt_opt(table.spread)),
        ),
    ];
    let unconverged = table
        .rows
        .iter()
        .filter(|r| r.status != "ok")
        .map(|r| format!("R = {}: {}", r.radius, r.status))
        .collect();
    let mut body = Vec::new();
    table.write_csv(&mut body).map_err(core_failure)?;
    let mut w = Writer::new(out, "scaling", cfg)?;
    w.csv("scaling.csv", &body)?;
    w.json("scaling.json", &checks, &table)?;
    Ok(Outcome { checks, unconverged })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------- growth

#[derive(Serialize)]
struct GrowthResult<'a> {
    exponents: Exponents,
    report: &'a SolveReport,
    audit: &'a GrowthReport,
}

pub fn growth(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let c = &cfg.growth;
    let exps = exponents(c.p, c.n, c.m)?;
    let opts = solve_options(&exps, &c.solver)?;
    if !(c.delta_fraction >= 0.0 && c.delta_fraction < 0.5) {
        return Err(Failure::Config(format!(
            "delta_fraction = {} must lie in [0, 1/2)",
            c.delta_fraction
        )));
    }
    let delta_c = match c.delta_c {
        Some(d) if d > 0.0 && d < 1.0 => d,
        Some(d) => return Err(Failure::Config(format!("delta_c = {d} must lie in (0, 1)"))),
        None => working_delta_c(&exps).map_err(core_failure)?,
    };
    let delta = c.delta_fraction * delta_c;
    let (u, report) = solve_growth_problem(&exps, delta, c.r, &c.resolution, &opts).map_err(core_failure)?;
    let sampling = Sampling {
        ray: c.ray,
        per_shell: c.per_shell,
        seed: cfg.seed,
    };
    let profile = growth_profile(&Field::solved(&u, &report), c.m, delta, c.r, delta_c, &sampling).map_err(core_failure)?;
    let audit = growth_audit(&profile, &exps).map_err(core_failure)?;
    let beta = exps.beta;
    let checks = if delta == 0.0 {
        let slope = audit.ray_fit.map(|f| f.slope);
        vec![Check::new(
            7,
            "growth exponent",
            slope.is_some_and(|s| (s - beta).abs() <= 0.1 * beta),
            format!("ray slope {} vs β = {beta:.4} ± 10%", fmt_opt(slope)),
        )]
    } else {
        let near = audit.near_tube_fit.map(|f| f.slope);
        vec![
            Check::new(
                7,
                "two-sided ratio",
                audit.sign_consistent && audit.spread <= c.spread_bound,
                format!("spread {:.4} (<= {})", audit.spread, c.spread_bound),
            ),
            Check::new(
                7,
                "near-tube rate",
                near.is_some_and(|s| (s - 1.0).abs() <= 0.1),
                format!("slope {} vs 1 ± 10%", fmt_opt(near)),
            ),
        ]
    };
    let mut w = Writer::new(out, "growth", cfg)?;
    w.csv("growth.csv", &csv_body(&audit.rows)?)?;
    w.json(
        "growth.json",
        &checks,
        &GrowthResult {
            exponents: exps,
            report: &report,
            audit: &audit,
        },
    )?;
    Ok(Outcome {
        checks,
        unconverged: if report.converged { Vec::new() } else { vec!["growth".into()] },
    })
}

// ---------------------------------------------------------------- report

#[derive(Serialize)]
struct CriterionSummary {
    criterion: u32,
    passed: bool,
    checks: Vec<SourcedCheck>,
}

#[derive(Serialize)]
struct SourcedCheck {
    file: String,
    #[serde(flatten)]
    check: Check,
}

#[derive(Deserialize)]
struct AnyEnvelope {
    command: String,
    checks: Vec<Check>,
}

pub fn report(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Failure> {
    let dir = cfg.report.inputs.clone().unwrap_or_else(|| out.to_path_buf());
    let entries = fs::read_dir(&dir).map_err(|e| Failure::Config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut by_criterion: BTreeMap<u32, Vec<SourcedCheck>> = BTreeMap::new();
    let mut inputs = 0;
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| Failure::Other(format!("cannot read {}: {e}", path.display())))?;
        let Ok(env) = serde_json::from_str::<AnyEnvelope>(&text) else {
            continue;
        };
        if env.command == "report" {
            continue;
        }
        inputs += 1;
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for check in env.checks {
            by_criterion.entry(check.criterion).or_default().push(SourcedCheck {
                file: file.clone(),
                check,
            });
        }
    }
    if inputs == 0 {
        return Err(Failure::Config(format!("no inputs: {} holds no result files", dir.display())));
    }
    let mut checks = Vec::new();
    let summary: Vec<CriterionSummary> = by_criterion
        .into_iter()
        .map(|(criterion, list)| {
            let passed = list.iter().all(|c| c.check.passed);
            checks.extend(list.iter().map(|c| c.check.clone()));
            CriterionSummary {
                criterion,
                passed,
                checks: list,
            }
        })
        .collect();
    let mut w = Writer::new(out, "report", cfg)?;
    w.json("report.json", &checks, &summary)?;
    Ok(Outcome {
        checks,
        unconverged: Vec::new(),
    })
}
