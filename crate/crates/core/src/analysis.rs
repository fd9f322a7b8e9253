//! Exponent fitting and audits of growth, Harnack-type and
//! Phragmén–Lindelöf-type statements on computed solutions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biradial::{BiradialPoint, Exponents};
use crate::error::{precondition, Result};
use crate::geometry::{build_levels_per_axis, DomainSpec, Grid, GridFunction, Resolution, TubeGeometry};
use crate::measures::measure_data;
use crate::solver::{solve_cascade, SolveOptions, SolveReport};

/// Least-squares line through `(log t, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square deviation in log space.
    pub residual: f64,
    pub samples: usize,
    /// `log10(max t / min t)`.
    pub decades: f64,
}

impl FitResult {
    /// At least 4 points over at least one decade.
    pub fn acceptance_grade(&self) -> bool {
        self.samples >= 4 && self.decades >= 1.0 - 1e-12
    }
}

pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<FitResult> {
    if pairs.len() < 2 {
        return precondition(format!("a fit needs at least 2 points, got {}", pairs.len()));
    }
    if let Some(&(t, y)) = pairs.iter().find(|(t, y)| !(*t > 0.0 && *y > 0.0 && t.is_finite() && y.is_finite())) {
        return precondition(format!("fit inputs must be positive and finite, got ({t}, {y})"));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return precondition("fit abscissae must not all coincide");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    Ok(FitResult {
        slope,
        intercept,
        residual,
        samples: pairs.len(),
        decades: (hi - lo) / std::f64::consts::LN_10,
    })
}

/// Default seed for random sample points.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Below this fraction of the column maximum the compensated tail counts as
/// having lost its floor.
pub const PHRAGMEN_FLOOR_FRACTION: f64 = 0.25;

/// A tail decaying faster than `R^{-PHRAGMEN_TAIL_SLOPE}` is a violation.
pub const PHRAGMEN_TAIL_SLOPE: f64 = 0.02;

/// `count` points from `lo` to `hi`, equally spaced in `log`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && count >= 2) {
        return precondition(format!("log spacing needs 0 < lo < hi and 2 points, got [{lo}, {hi}] x {count}"));
    }
    let step = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i + 1 == count { hi } else { lo * (step * i as f64).exp() })
        .collect())
}

/// A biradial function under audit, with the resolution and residual of the
/// solve that produced it (0 for closed forms).
pub struct Field<'a> {
    eval: Box<dyn Fn(BiradialPoint) -> f64 + 'a>,
    pub h: f64,
    pub residual: f64,
}

impl<'a> Field<'a> {
    pub fn analytic(f: impl Fn(BiradialPoint) -> f64 + 'a) -> Self {
        Self {
            eval: Box::new(f),
            h: 0.0,
            residual: 0.0,
        }
    }

    pub fn solved(u: &'a GridFunction, report: &SolveReport) -> Self {
        Self {
            eval: Box::new(move |p| u.sample(p)),
            h: report.h_min,
            residual: report.residual,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        let Self { eval, h, residual } = self;
        Self {
            eval: Box::new(move |p| c * eval(p)),
            h,
            residual: residual * c.abs(),
        }
    }

    pub fn at(&self, p: BiradialPoint) -> f64 {
        (self.eval)(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Log-spaced points along the `A_t(w)` ray.
    pub ray: usize,
    /// Random points per dyadic shell.
    pub per_shell: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            ray: 32,
            per_shell: 32,
            seed: DEFAULT_SEED,
        }
    }
}

fn ray_point(t: f64) -> BiradialPoint {
    BiradialPoint { rho: t, sigma: 0.0 }
}

/// Points of `{ρ > inner, |(ρ, σ)| ≤ outer}`: the ray `σ = 0` at
/// `inner + d` for log-spaced `d ∈ [gap, outer − inner]`, then random points
/// in dyadic shells of `|(ρ, σ)|` between `inner + gap` and `outer`. Random
/// points also keep `ρ ≥ inner + gap`: closer to the tube the grid cannot
/// resolve fractional powers and interpolation dominates the quotients.
pub fn sample_points(m: usize, inner: f64, gap: f64, outer: f64, sampling: &Sampling) -> Result<Vec<BiradialPoint>> {
    if !(inner >= 0.0 && gap > 0.0 && inner + gap < outer) {
        return precondition(format!("empty sample region: inner {inner}, gap {gap}, outer {outer}"));
    }
    let mut pts: Vec<BiradialPoint> = log_spaced(gap, outer - inner, sampling.ray.max(2))?
        .into_iter()
        .map(|d| ray_point(inner + d))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut a = inner + gap;
    while a < outer && sampling.per_shell > 0 {
        let b = (2.0 * a).min(outer);
        for _ in 0..sampling.per_shell {
            let r = a + (b - a) * rng.gen::<f64>();
            if m == 0 {
                pts.push(ray_point(r));
            } else {
                let theta_max = ((inner + gap) / r).min(1.0).acos();
                let theta = theta_max * rng.gen::<f64>();
                pts.push(BiradialPoint {
                    rho: r * theta.cos(),
                    sigma: r * theta.sin(),
                });
            }
        }
        a = b;
    }
    Ok(pts)
}

// ----------------------------------------------------------------- growth

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub rho: f64,
    pub sigma: f64,
    /// `d(x, Λ)`.
    pub d: f64,
    pub u: f64,
}

/// Samples of a solution on `B(w, 4r) ∖ Λ_{δr}` with zero tube data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub delta: f64,
    pub r: f64,
    pub delta_c: f64,
    pub seed: u64,
    /// `u(A_r(w))`.
    pub normalizer: f64,
    /// Ray and shell samples in `B(w, δ_c r) ∖ Λ_{δr}`.
    pub samples: Vec<GrowthSample>,
    /// Ray samples used for the exponent fit (`δ = 0`).
    pub ray: Vec<GrowthSample>,
    /// Ray samples with `d(x, Λ_{δr}) ∈ [δr/100, δr/10]` (`δ > 0`).
    pub near_tube: Vec<GrowthSample>,
    pub h: f64,
    pub residual: f64,
}

fn check_growth_params(delta: f64, r: f64, delta_c: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return precondition(format!("r must be positive, got {r}"));
    }
    if !(delta_c > 0.0 && delta_c < 1.0) {
        return precondition(format!("δ_c must lie in (0, 1), got {delta_c}"));
    }
    if !(delta >= 0.0 && delta < 0.5 * delta_c) {
        return precondition(format!("δ = {delta} violates 0 <= δ < δ_c/2 = {}", 0.5 * delta_c));
    }
    Ok(())
}

fn growth_sample(field: &Field, p: BiradialPoint) -> GrowthSample {
    GrowthSample {
        rho: p.rho,
        sigma: p.sigma,
        d: p.rho,
        u: field.at(p),
    }
}

/// Default sample set for [`growth_profile_at`].
pub fn growth_profile(field: &Field, m: usize, delta: f64, r: f64, delta_c: f64, sampling: &Sampling) -> Result<GrowthProfile> {
    check_growth_params(delta, r, delta_c)?;
    let inner = delta * r;
    let gap = if delta > 0.0 { inner / 100.0 } else { delta_c * r / 32.0 };
    let points = sample_points(m, inner, gap, delta_c * r, sampling)?;
    let mut profile = growth_profile_at(field, delta, r, delta_c, &points)?;
    profile.seed = sampling.seed;
    profile.ray = points
        .iter()
        .take(sampling.ray.max(2))
        .map(|&p| growth_sample(field, p))
        .collect();
    if delta > 0.0 {
        profile.near_tube = log_spaced(inner / 100.0, inner / 10.0, 8)?
            .into_iter()
            .map(|d| growth_sample(field, ray_point(inner + d)))
            .collect();
    }
    Ok(profile)
}

/// Profile over explicit points, each of which must lie in
/// `B(w, δ_c r) ∖ Λ_{δr}`.
pub fn growth_profile_at(field: &Field, delta: f64, r: f64, delta_c: f64, points: &[BiradialPoint]) -> Result<GrowthProfile> {
    check_growth_params(delta, r, delta_c)?;
    if let Some(p) = points
        .iter()
        .find(|p| !(p.rho > delta * r && p.norm() <= delta_c * r * (1.0 + 1e-12)))
    {
        return precondition(format!(
            "sample ({}, {}) lies outside B(w, δ_c r) minus the tube",
            p.rho, p.sigma
        ));
    }
    let normalizer = field.at(ray_point(r));
    if !(normalizer > 0.0) {
        return precondition(format!("normalizer u(A_r) = {normalizer} is not positive"));
    }
    Ok(GrowthProfile {
        delta,
        r,
        delta_c,
        seed: 0,
        normalizer,
        samples: points.iter().map(|&p| growth_sample(field, p)).collect(),
        ray: Vec::new(),
        near_tube: Vec::new(),
        h: field.h,
        residual: field.residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub rho: f64,
    pub sigma: f64,
    pub d: f64,
    pub u: f64,
    /// `u(x)/u(A_r) / ((d/r)^β − δ^β)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub audit: String,
    pub delta: f64,
    pub r: f64,
    pub delta_c: f64,
    pub beta: f64,
    pub seed: u64,
    pub normalizer: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub spread: f64,
    /// Every ratio is positive.
    pub sign_consistent: bool,
    /// Slope of `u(A_t)` against `t` (`δ = 0`).
    pub ray_fit: Option<FitResult>,
    /// Slope of `u` against `d(x, Λ_{δr})` next to the tube (`δ > 0`).
    pub near_tube_fit: Option<FitResult>,
    pub h: f64,
    pub residual: f64,
    pub rows: Vec<GrowthRow>,
}

pub fn growth_audit(profile: &GrowthProfile, exps: &Exponents) -> Result<GrowthReport> {
    let (delta, r, beta) = (profile.delta, profile.r, exps.beta);
    if profile.samples.is_empty() {
        return precondition("growth profile has no samples");
    }
    let floor = delta.powf(beta);
    let rows: Vec<GrowthRow> = profile
        .samples
        .iter()
        .map(|s| GrowthRow {
            rho: s.rho,
            sigma: s.sigma,
            d: s.d,
            u: s.u,
            ratio: s.u / profile.normalizer / ((s.d / r).powf(beta) - floor),
        })
        .collect();
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), row| (l.min(row.ratio), h.max(row.ratio)));
    let ray_fit = if delta == 0.0 && !profile.ray.is_empty() {
        fit_exponent(&profile.ray.iter().map(|s| (s.d, s.u)).collect::<Vec<_>>()).ok()
    } else {
        None
    };
    let near_tube_fit = if delta > 0.0 && !profile.near_tube.is_empty() {
        fit_exponent(&profile.near_tube.iter().map(|s| (s.d - delta * r, s.u)).collect::<Vec<_>>()).ok()
    } else {
        None
    };
    Ok(GrowthReport {
        audit: "growth".into(),
        delta,
        r,
        delta_c: profile.delta_c,
        beta,
        seed: profile.seed,
        normalizer: profile.normalizer,
        ratio_min: lo,
        ratio_max: hi,
        spread: hi / lo,
        sign_consistent: lo > 0.0,
        ray_fit,
        near_tube_fit,
        h: profile.h,
        residual: profile.residual,
        rows,
    })
}

/// Layout of the growth-problem grids: the `ρ` axis is clustered at the
/// tube boundary, the `σ` axis uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthResolution {
    pub h_fine_over_r: f64,
    /// Cap on the fine spacing relative to the tube radius `δr`.
    pub h_fine_over_tube: f64,
    pub growth: f64,
    pub h_max_over_r: f64,
    pub levels: usize,
}

impl Default for GrowthResolution {
    fn default() -> Self {
        Self {
            h_fine_over_r: 1.0 / 4096.0,
            h_fine_over_tube: 1.0 / 1000.0,
            growth: 1.1,
            h_max_over_r: 1.0 / 32.0,
            levels: 4,
        }
    }
}

/// Cascade grids on `B(w, 4r) ∖ Λ_{δr}` (reduced frame), coarse to fine.
pub fn growth_grids(exps: &Exponents, delta: f64, r: f64, res: &GrowthResolution) -> Result<Vec<Arc<Grid>>> {
    if !(delta >= 0.0 && r > 0.0) {
        return precondition(format!("invalid growth problem δ = {delta}, r = {r}"));
    }
    let s = delta * r;
    let geometry = TubeGeometry::new(exps.n, exps.m, s)?;
    let mut spec = DomainSpec::ball(geometry, 4.0 * r, true);
    if exps.m >= 1 && s > 0.0 {
        spec = spec.with_transition(s, 2.0 * s);
    }
    let mut h_fine = res.h_fine_over_r * r;
    if s > 0.0 {
        h_fine = h_fine.min(res.h_fine_over_tube * s);
    }
    let h_max = res.h_max_over_r * r;
    let mut axes = vec![Resolution::Clustered {
        center: s,
        h_fine,
        growth: res.growth,
        h_max,
    }];
    if spec.frame().dims() == 2 {
        axes.push(Resolution::Uniform { h: h_max });
    }
    build_levels_per_axis(&spec, &axes, res.levels)
}

/// Solves on `B(w, 4r) ∖ Λ_{δr}`: zero on the tube, one on the sphere away
/// from it (with the usual ramp when `m ≥ 1` and `δ > 0`).
pub fn solve_growth_problem(
    exps: &Exponents,
    delta: f64,
    r: f64,
    res: &GrowthResolution,
    opts: &SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    let grids = growth_grids(exps, delta, r, res)?;
    let s = delta * r;
    solve_cascade(&grids, &measure_data(s, exps.m >= 1 && s > 0.0), exps, opts)
}

// ---------------------------------------------------------------- Harnack

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub audit: String,
    pub center: BiradialPoint,
    pub radius: f64,
    pub sup: f64,
    pub inf: f64,
    pub ratio: f64,
    pub samples: usize,
    pub h: f64,
    pub residual: f64,
}

/// Image of `B(w₀, r₀)` in the `(ρ, σ)` quarter plane: a polar lattice on the
/// disk around `(ρ₀, σ₀)`, folded by `σ ↦ |σ|` (a segment when `m = 0`).
fn ball_image(center: BiradialPoint, r0: f64, m: usize) -> Vec<BiradialPoint> {
    let mut pts = vec![center];
    for i in 1..=16 {
        let a = r0 * i as f64 / 16.0;
        if m == 0 {
            pts.push(ray_point(center.rho - a));
            pts.push(ray_point(center.rho + a));
            continue;
        }
        for j in 0..64 {
            let phi = std::f64::consts::TAU * j as f64 / 64.0;
            pts.push(BiradialPoint {
                rho: center.rho + a * phi.cos(),
                sigma: (center.sigma + a * phi.sin()).abs(),
            });
        }
    }
    pts
}

/// `sup/inf` over `B(w₀, r₀)`; requires `B(w₀, 2r₀)` inside the domain.
pub fn harnack_audit(
    field: &Field,
    geometry: &TubeGeometry,
    outer_radius: f64,
    center: BiradialPoint,
    r0: f64,
) -> Result<HarnackReport> {
    if geometry.m == 0 && center.sigma != 0.0 {
        return precondition("with m = 0 the centre must lie on the σ = 0 line");
    }
    if !(r0 > 0.0 && center.rho - 2.0 * r0 > geometry.s && center.norm() + 2.0 * r0 < outer_radius) {
        return precondition(format!(
            "B(w0, 2r0) with w0 = ({}, {}), r0 = {r0} is not interior",
            center.rho, center.sigma
        ));
    }
    let pts = ball_image(center, r0, geometry.m);
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for &p in &pts {
        let v = field.at(p);
        if !(v > 0.0) {
            return precondition(format!("value {v} at ({}, {}) is not positive", p.rho, p.sigma));
        }
        sup = sup.max(v);
        inf = inf.min(v);
    }
    Ok(HarnackReport {
        audit: "harnack".into(),
        center,
        radius: r0,
        sup,
        inf,
        ratio: sup / inf,
        samples: pts.len(),
        h: field.h,
        residual: field.residual,
    })
}

// --------------------------------------------------------------- Carleson

pub const DEFAULT_CARLESON_CANDIDATES: [f64; 9] = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlesonRow {
    pub c: f64,
    pub radius: f64,
    pub sup: f64,
    pub probe_value: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlesonReport {
    pub audit: String,
    pub r: f64,
    pub rows: Vec<CarlesonRow>,
    /// Smallest candidate `c̃` with `ratio ≤ c̃`.
    pub smallest_c: Option<f64>,
    /// Ratios are non-increasing in `c̃`.
    pub monotone: bool,
    pub h: f64,
    pub residual: f64,
}

/// `sup_{B(w, r/c̃)} u / u(A_{r/c̃}(w))` for each candidate, `w` on `Λ`.
pub fn carleson_audit(field: &Field, m: usize, r: f64, candidates: &[f64]) -> Result<CarlesonReport> {
    if !(r > 0.0) || candidates.is_empty() || candidates.iter().any(|&c| !(c >= 1.0 && c.is_finite())) {
        return precondition("Carleson audit needs r > 0 and candidates c >= 1");
    }
    let mut cs = candidates.to_vec();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut rows = Vec::with_capacity(cs.len());
    for &c in &cs {
        let radius = r / c;
        let probe_value = field.at(ray_point(radius));
        if !(probe_value > 0.0) {
            return precondition(format!("u(A_(r/{c})) = {probe_value} is not positive"));
        }
        let mut sup = f64::NEG_INFINITY;
        for i in 1..=32 {
            let a = radius * i as f64 / 32.0;
            let angles = if m == 0 { 1 } else { 33 };
            for j in 0..angles {
                let theta = std::f64::consts::FRAC_PI_2 * j as f64 / 32.0;
                let (rho, sigma) = if j == 0 { (a, 0.0) } else { (a * theta.cos(), a * theta.sin()) };
                sup = sup.max(field.at(BiradialPoint { rho, sigma }));
            }
        }
        rows.push(CarlesonRow {
            c,
            radius,
            sup,
            probe_value,
            ratio: sup / probe_value,
        });
    }
    let smallest_c = rows.iter().find(|row| row.ratio <= row.c).map(|row| row.c);
    let monotone = rows.windows(2).all(|w| w[1].ratio <= w[0].ratio * (1.0 + 1e-9));
    Ok(CarlesonReport {
        audit: "carleson".into(),
        r,
        rows,
        smallest_c,
        monotone,
        h: field.h,
        residual: field.residual,
    })
}

// ------------------------------------------------------- boundary Harnack

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientRow {
    pub rho: f64,
    pub sigma: f64,
    pub u: f64,
    pub v: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHarnackReport {
    pub audit: String,
    pub min_quotient: f64,
    pub max_quotient: f64,
    pub spread: f64,
    pub h_u: f64,
    pub residual_u: f64,
    pub h_v: f64,
    pub residual_v: f64,
    pub rows: Vec<QuotientRow>,
}

/// `max(u/v) / min(u/v)` over `points`; both functions must be positive there.
pub fn boundary_harnack_audit(u: &Field, v: &Field, points: &[BiradialPoint]) -> Result<BoundaryHarnackReport> {
    if points.is_empty() {
        return precondition("boundary Harnack audit needs sample points");
    }
    let mut rows = Vec::with_capacity(points.len());
    for &p in points {
        let (a, b) = (u.at(p), v.at(p));
        if !(a > 0.0 && b > 0.0) {
            return precondition(format!("u = {a}, v = {b} at ({}, {}) are not both positive", p.rho, p.sigma));
        }
        rows.push(QuotientRow {
            rho: p.rho,
            sigma: p.sigma,
            u: a,
            v: b,
            quotient: a / b,
        });
    }
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), row| (l.min(row.quotient), h.max(row.quotient)));
    Ok(BoundaryHarnackReport {
        audit: "boundary_harnack".into(),
        min_quotient: lo,
        max_quotient: hi,
        spread: hi / lo,
        h_u: u.h,
        residual_u: u.residual,
        h_v: v.h,
        residual_v: v.residual,
        rows,
    })
}

// ------------------------------------------------------ Phragmén–Lindelöf

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhragmenVerdict {
    BoundedBelow,
    NonPositiveBranch,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhragmenRow {
    pub radius: f64,
    /// `M(R)`, the maximum over the sphere outside the tube.
    pub sup: f64,
    /// `M(R) / R^β`.
    pub compensated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhragmenTable {
    pub audit: String,
    pub beta: f64,
    pub s: f64,
    pub rows: Vec<PhragmenRow>,
    pub floor: f64,
    /// Log-log slope of the compensated column over the last half.
    pub tail_slope: Option<f64>,
    pub verdict: PhragmenVerdict,
}

/// Tabulates `M(R)/R^β` for a subsolution sampler. The limit inferior is
/// proxied by the last half of the table: it must stay above
/// [`PHRAGMEN_FLOOR_FRACTION`] of the column maximum and must not decay
/// faster than `R^{-PHRAGMEN_TAIL_SLOPE}`.
pub fn phragmen_audit(
    sampler: &dyn Fn(BiradialPoint) -> f64,
    geometry: &TubeGeometry,
    exps: &Exponents,
    radii: &[f64],
) -> Result<PhragmenTable> {
    let s = geometry.s;
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > s) {
        return precondition("radii must be increasing, at least two, and exceed s");
    }
    let beta = exps.beta;
    let rows: Vec<PhragmenRow> = radii
        .iter()
        .map(|&radius| {
            let mut sup = sampler(ray_point(radius));
            if geometry.m > 0 {
                for j in 1..=512 {
                    let theta = std::f64::consts::FRAC_PI_2 * j as f64 / 512.0;
                    let rho = radius * theta.cos();
                    if rho > s {
                        sup = sup.max(sampler(BiradialPoint {
                            rho,
                            sigma: radius * theta.sin(),
                        }));
                    }
                }
            }
            PhragmenRow {
                radius,
                sup,
                compensated: sup / radius.powf(beta),
            }
        })
        .collect();
    let max = rows.iter().map(|r| r.compensated).fold(f64::NEG_INFINITY, f64::max);
    let tail = &rows[rows.len() / 2..];
    let floor = PHRAGMEN_FLOOR_FRACTION * max.max(0.0);
    let tail_slope = if tail.len() >= 2 && tail.iter().all(|r| r.compensated > 0.0) {
        fit_exponent(&tail.iter().map(|r| (r.radius, r.compensated)).collect::<Vec<_>>())
            .ok()
            .map(|f| f.slope)
    } else {
        None
    };
    let verdict = if rows.iter().all(|r| r.sup <= 0.0) {
        PhragmenVerdict::NonPositiveBranch
    } else if tail.iter().all(|r| r.compensated >= floor) && tail_slope.is_some_and(|k| k >= -PHRAGMEN_TAIL_SLOPE) {
        PhragmenVerdict::BoundedBelow
    } else {
        PhragmenVerdict::Violation
    };
    Ok(PhragmenTable {
        audit: "phragmen_lindelof".into(),
        beta,
        s,
        rows,
        floor,
        tail_slope,
        verdict,
    })
}

// ---------------------------------------------------------- global growth

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalGrowthRow {
    pub rho: f64,
    pub sigma: f64,
    pub u: f64,
    /// `u(x) s^β / (u(A_{2s}) d(x, Λ)^β)`.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalGrowthReport {
    pub audit: String,
    pub s: f64,
    pub beta: f64,
    pub outer_radius: f64,
    pub normalizer: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub spread: f64,
    /// Slope of `u` against `d(x, Λ)` along the ray (all points if the ray
    /// has fewer than two).
    pub fit: Option<FitResult>,
    pub h: f64,
    pub residual: f64,
    pub rows: Vec<GlobalGrowthRow>,
}

fn check_global_points(s: f64, outer_radius: f64, points: &[BiradialPoint]) -> Result<()> {
    if !(s > 0.0) || points.is_empty() {
        return precondition("global growth needs s > 0 and sample points");
    }
    if let Some(p) = points.iter().find(|p| !(p.rho > 2.0 * s)) {
        return precondition(format!("sample ({}, {}) lies in the tube of radius 2s", p.rho, p.sigma));
    }
    let far = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if outer_radius < 8.0 * far {
        return precondition(format!("outer radius {outer_radius} is below 8 x the farthest sample {far}"));
    }
    Ok(())
}

pub fn global_growth_audit(
    field: &Field,
    geometry: &TubeGeometry,
    exps: &Exponents,
    outer_radius: f64,
    points: &[BiradialPoint],
) -> Result<GlobalGrowthReport> {
    let (s, beta) = (geometry.s, exps.beta);
    check_global_points(s, outer_radius, points)?;
    let normalizer = field.at(ray_point(2.0 * s));
    if !(normalizer > 0.0) {
        return precondition(format!("u(A_2s) = {normalizer} is not positive"));
    }
    let rows: Vec<GlobalGrowthRow> = points
        .iter()
        .map(|&p| {
            let u = field.at(p);
            GlobalGrowthRow {
                rho: p.rho,
                sigma: p.sigma,
                u,
                q: u * s.powf(beta) / (normalizer * p.rho.powf(beta)),
            }
        })
        .collect();
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r.q), h.max(r.q)));
    let ray: Vec<(f64, f64)> = rows.iter().filter(|r| r.sigma == 0.0).map(|r| (r.rho, r.u)).collect();
    let pairs = if ray.len() >= 2 { ray } else { rows.iter().map(|r| (r.rho, r.u)).collect() };
    Ok(GlobalGrowthReport {
        audit: "global_growth".into(),
        s,
        beta,
        outer_radius,
        normalizer,
        q_min: lo,
        q_max: hi,
        spread: hi / lo,
        fit: fit_exponent(&pairs).ok(),
        h: field.h,
        residual: field.residual,
        rows,
    })
}

/// Largest relative change of `u(x)/u(A_{2s})` between two proxies of the
/// unbounded domain (e.g. outer radii `R` and `2R`).
pub fn proxy_sensitivity(a: &Field, b: &Field, s: f64, points: &[BiradialPoint]) -> Result<f64> {
    let na = a.at(ray_point(2.0 * s));
    let nb = b.at(ray_point(2.0 * s));
    if !(na > 0.0 && nb > 0.0) || points.is_empty() {
        return precondition("proxy sensitivity needs positive normalizers and sample points");
    }
    Ok(points
        .iter()
        .map(|&p| {
            let (x, y) = (a.at(p) / na, b.at(p) / nb);
            (x - y).abs() / y.abs()
        })
        .fold(0.0, f64::max))
}
