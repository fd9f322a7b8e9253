//! p-harmonic measures of the outer sphere relative to tube complements,
//! and the two closed-form oracles.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{fit_exponent, FitResult};
use crate::biradial::{BiradialPoint, Exponents};
use crate::error::{precondition, Error, Result};
use crate::geometry::{build_levels, io_err, DomainSpec, GridFunction, NodeInfo, NodeState, Resolution, TubeGeometry};
use crate::quadrature::integrate;
use crate::solver::{solve_cascade, SolveOptions, SolveReport};

/// Absolute tolerance of the oracle quadratures.
pub const ORACLE_TOL: f64 = 1e-12;

/// Name of the profile on the transition arc, recorded in reports.
pub const TRANSITION_PROFILE: &str = "linear in d(x, Λ) from s to 2s";

pub const SCALING_HEADER: [&str; 9] = [
    "R",
    "h",
    "probe_rho",
    "probe_sigma",
    "v",
    "v_times_R_beta",
    "solver_sweeps",
    "residual",
    "status",
];

/// Outer-boundary data: 1 on the sphere away from `Λ_{2s}`, 0 on the tube,
/// a linear ramp in `d(·, Λ)` in between. Without a band (m = 0 or s = 0)
/// the whole sphere carries 1.
pub fn measure_data(s: f64, band: bool) -> impl Fn(&NodeInfo) -> f64 {
    move |info: &NodeInfo| match info.state {
        NodeState::DirichletTube => 0.0,
        _ if !band => 1.0,
        _ => ((info.projected.rho - s) / s).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureProblem {
    pub geometry: TubeGeometry,
    pub radius: f64,
    pub exps: Exponents,
    pub probes: Vec<BiradialPoint>,
    /// Use the ramp on `(s, 2s)`; ignored when `m = 0` or `s = 0`.
    pub transition: bool,
    pub resolution: Resolution,
    pub cascade_levels: usize,
    pub solve: SolveOptions,
}

impl MeasureProblem {
    pub fn new(geometry: TubeGeometry, radius: f64, exps: Exponents, resolution: Resolution) -> Self {
        let solve = SolveOptions::for_exponents(&exps);
        Self {
            geometry,
            radius,
            exps,
            probes: Vec::new(),
            transition: true,
            resolution,
            cascade_levels: 4,
            solve,
        }
    }

    pub fn with_probes(mut self, probes: Vec<BiradialPoint>) -> Self {
        self.probes = probes;
        self
    }

    pub fn band_active(&self) -> bool {
        self.transition && self.geometry.m >= 1 && self.geometry.s > 0.0
    }

    pub fn domain(&self) -> DomainSpec {
        let spec = DomainSpec::ball(self.geometry, self.radius, true);
        if self.band_active() {
            let s = self.geometry.s;
            spec.with_transition(s, 2.0 * s)
        } else {
            spec
        }
    }

    fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if (g.n, g.m) != (self.exps.n, self.exps.m) {
            return Err(Error::GridMismatch("geometry and exponents disagree on (n, m)".into()));
        }
        if !(self.radius > g.s) {
            return precondition(format!("R = {} must exceed s = {}", self.radius, g.s));
        }
        for p in &self.probes {
            let inside = p.norm() < self.radius && p.rho > g.s;
            if !inside || (g.m == 0 && p.sigma != 0.0) {
                return precondition(format!("probe ({}, {}) is not in the open domain", p.rho, p.sigma));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub radius: f64,
    pub probe: BiradialPoint,
    pub value: f64,
    pub h: f64,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MeasureSolution {
    pub samples: Vec<MeasureSample>,
    pub solution: GridFunction,
    pub report: SolveReport,
}

/// Solves the measure problem and samples it at the probes.
pub fn p_harmonic_measure(problem: &MeasureProblem) -> Result<MeasureSolution> {
    problem.validate()?;
    let spec = problem.domain();
    let grids = build_levels(&spec, &problem.resolution, problem.cascade_levels)?;
    let data = measure_data(problem.geometry.s, problem.band_active());
    let (u, report) = solve_cascade(&grids, &data, &problem.exps, &problem.solve)?;
    let mut samples = Vec::with_capacity(problem.probes.len());
    for &probe in &problem.probes {
        let value = u.sample(probe);
        if !(0.0..=1.0).contains(&value) {
            return precondition(format!("measure value {value} escaped [0, 1]"));
        }
        samples.push(MeasureSample {
            radius: problem.radius,
            probe,
            value,
            h: problem.resolution.h(),
            sweeps: report.sweeps,
            residual: report.residual,
            converged: report.converged,
        });
    }
    Ok(MeasureSolution {
        samples,
        solution: u,
        report,
    })
}

// ---------------------------------------------------------------- oracles

fn check_oracle_dims(n: usize, m: usize) -> Result<()> {
    if n < 2 || m < 1 || m >= n {
        return Err(Error::InvalidDimensions { n, m });
    }
    Ok(())
}

/// `∫_0^T t^a (1 − t⁴)^{-1/2} dt` with `a = (2m + 1 − n)/(n − 1)`, `T ≤ 1`.
///
/// With `t² = sin θ` the integrand becomes `½ sin^{-e} θ`,
/// `e = (n − m − 1)/(n − 1) ∈ [0, 1)`; the remaining integrable
/// singularity at 0 is removed by `θ = u^{1/(1-e)}`, leaving
/// `(θ / sin θ)^e / (2(1 − e))`, which is smooth.
fn lindqvist_integral(t_upper: f64, n: usize, m: usize, tol: f64) -> Result<f64> {
    check_oracle_dims(n, m)?;
    let e = (n - m - 1) as f64 / (n - 1) as f64;
    let theta_max = (t_upper * t_upper).clamp(0.0, 1.0).asin();
    if theta_max == 0.0 {
        return Ok(0.0);
    }
    let q = 1.0 - e;
    let f = move |u: f64| {
        let theta = u.powf(1.0 / q);
        let ratio = if theta < 1e-8 { 1.0 + theta * theta / 6.0 } else { theta / theta.sin() };
        ratio.powf(e) / (2.0 * q)
    };
    Ok(integrate(f, 0.0, theta_max.powf(q), tol)?.value)
}

/// Normalizing constant `κ(n, m)`.
pub fn kappa(n: usize, m: usize) -> Result<f64> {
    lindqvist_integral(1.0, n, m, ORACLE_TOL)
}

/// `κ(n, m)` at a chosen quadrature tolerance, for self-consistency checks.
pub fn kappa_with_tol(n: usize, m: usize, tol: f64) -> Result<f64> {
    lindqvist_integral(1.0, n, m, tol)
}

/// `[x; r] = 4r²|x′|² / (4r²|x′|² + (r² − |x|²)²)`.
pub fn bracket(at: BiradialPoint, r: f64) -> f64 {
    let a = 4.0 * r * r * at.rho * at.rho;
    let b = r * r - at.rho * at.rho - at.sigma * at.sigma;
    if a == 0.0 {
        0.0
    } else {
        a / (a + b * b)
    }
}

/// The n-harmonic measure of `∂B(0, r)` in `B(0, r) ∖ Λ`.
pub fn lindqvist_oracle(at: BiradialPoint, r: f64, n: usize, m: usize) -> Result<f64> {
    check_oracle_dims(n, m)?;
    if !(r > 0.0) || at.norm() > r * (1.0 + 1e-12) {
        return precondition(format!("point ({}, {}) is outside B(0, {r})", at.rho, at.sigma));
    }
    if at.rho == 0.0 && (at.sigma - r).abs() <= 1e-12 * r {
        return Err(Error::Pole(format!("|x″| = r = {r} on Λ")));
    }
    let t = bracket(at, r).powf(0.25);
    Ok(lindqvist_integral(t, n, m, ORACLE_TOL)? / kappa(n, m)?)
}

/// Harmonic measure of the upper semicircle in the upper half-disk at
/// `z = x + iy`: `2(1 − arg((z − r)/(z + r))/π)`.
pub fn halfplane_oracle(x: f64, y: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) || y < 0.0 || x * x + y * y > r * r * (1.0 + 1e-12) {
        return precondition(format!("z = {x} + {y}i is outside the closed upper half-disk of radius {r}"));
    }
    if y == 0.0 && (x.abs() - r).abs() <= 1e-12 * r {
        return Err(Error::Pole(format!("z = {x} is a pole")));
    }
    // (z − r)(z̄ + r) = |z|² − r² + 2iry
    let arg = (2.0 * r * y).atan2(x * x + y * y - r * r);
    Ok(2.0 * (1.0 - arg / PI))
}

// ---------------------------------------------------------------- scaling

/// Graded resolution as a function of `s` and `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingResolution {
    pub h_fine_over_s: f64,
    pub fine_extent_over_s: f64,
    pub growth: f64,
    pub h_max_over_r: f64,
}

impl Default for ScalingResolution {
    fn default() -> Self {
        Self {
            h_fine_over_s: 1.0 / 16.0,
            fine_extent_over_s: 4.0,
            growth: 1.1,
            h_max_over_r: 1.0 / 32.0,
        }
    }
}

impl ScalingResolution {
    pub fn at(&self, s: f64, r: f64) -> Resolution {
        let h_fine = self.h_fine_over_s * s;
        Resolution::Graded {
            h_fine,
            fine_extent: self.fine_extent_over_s * s,
            growth: self.growth,
            h_max: (self.h_max_over_r * r).max(h_fine),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub radius: f64,
    pub h: f64,
    pub probe: BiradialPoint,
    pub v: f64,
    pub v_times_r_beta: f64,
    pub solver_sweeps: usize,
    pub residual: f64,
    /// `ok`, `not_converged` or `failed: …`.
    pub status: String,
    /// The discrete maximum principle held in this solve.
    pub within_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub exps: Exponents,
    pub s: f64,
    pub rows: Vec<ScalingRow>,
    pub fit: Option<FitResult>,
    /// max/min of `v R^β`.
    pub spread: Option<f64>,
    /// `v` is non-increasing along the R list.
    pub monotone: bool,
    pub transition_profile: String,
}

/// Measures at `A_{2s}(w)` for each outer radius in `radii`.
pub fn scaling_experiment(
    geometry: TubeGeometry,
    exps: Exponents,
    radii: &[f64],
    resolution: ScalingResolution,
    solve: &SolveOptions,
    delta_c: f64,
) -> Result<ScalingTable> {
    let s = geometry.s;
    if !(s > 0.0) {
        return precondition("scaling needs a tube of positive radius");
    }
    if radii.len() < 2 {
        return precondition("scaling needs at least two radii");
    }
    if let Some(r) = radii.iter().find(|&&r| !(2.0 * s / delta_c < r)) {
        return precondition(format!("R = {r} violates 2s/δ_c < R with δ_c = {delta_c}"));
    }
    let probe = geometry.probe_point(2.0 * s)?.reduced;
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let res = resolution.at(s, r);
        let mut problem = MeasureProblem::new(geometry, r, exps, res).with_probes(vec![probe]);
        problem.solve = solve.clone();
        let row = match p_harmonic_measure(&problem) {
            Ok(sol) => {
                let v = sol.samples[0].value;
                ScalingRow {
                    radius: r,
                    h: res.h(),
                    probe,
                    v,
                    v_times_r_beta: v * r.powf(exps.beta),
                    solver_sweeps: sol.report.sweeps,
                    residual: sol.report.residual,
                    status: if sol.report.converged { "ok".into() } else { "not_converged".into() },
                    within_bounds: sol.report.within_bounds,
                }
            }
            Err(e) => ScalingRow {
                radius: r,
                h: res.h(),
                probe,
                v: f64::NAN,
                v_times_r_beta: f64::NAN,
                solver_sweeps: 0,
                residual: f64::NAN,
                status: format!("failed: {e}"),
                within_bounds: false,
            },
        };
        rows.push(row);
    }
    let good: Vec<&ScalingRow> = rows.iter().filter(|r| r.v > 0.0 && r.v.is_finite()).collect();
    let fit = if good.len() >= 2 {
        Some(fit_exponent(&good.iter().map(|r| (r.radius, r.v)).collect::<Vec<_>>())?)
    } else {
        None
    };
    let spread = if good.len() >= 2 {
        let (lo, hi) = good.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| {
            (l.min(r.v_times_r_beta), h.max(r.v_times_r_beta))
        });
        Some(hi / lo)
    } else {
        None
    };
    let monotone = rows.windows(2).all(|w| w[1].v <= w[0].v);
    Ok(ScalingTable {
        exps,
        s,
        rows,
        fit,
        spread,
        monotone,
        transition_profile: TRANSITION_PROFILE.into(),
    })
}

impl ScalingTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SCALING_HEADER).map_err(io_err)?;
        for r in &self.rows {
            w.write_record([
                r.radius.to_string(),
                r.h.to_string(),
                r.probe.rho.to_string(),
                r.probe.sigma.to_string(),
                r.v.to_string(),
                r.v_times_r_beta.to_string(),
                r.solver_sweeps.to_string(),
                r.residual.to_string(),
                r.status.clone(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Precondition(format!("csv write failed: {e}")))?;
        Ok(())
    }
}
