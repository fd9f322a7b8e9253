//! Explicit sub- and supersolutions near `Λ` and checks of their operator signs.
//!
//! The scans evaluate the exact normalized operator from [`crate::biradial`]
//! on a log-spaced grid in `ρ`; the asymptotic expansion of the operator in
//! powers of `|x''|` is never used for sign decisions.

use serde::{Deserialize, Serialize};

use crate::biradial::{
    normalized_operator, BiradialPoint, Exponents, Jet2, NormalizedValue,
};
use crate::error::{precondition, Error, Result};

/// Relative sign tolerance: values within `SIGN_TOLERANCE × scale` of zero
/// count as the required sign.
pub const SIGN_TOLERANCE: f64 = 1e-12;

/// ρ nodes of a scan span `[RHO_DECADES_FACTOR · rho_hi, rho_hi]`.
pub const RHO_SPAN: f64 = 1e-6;

/// Smallest threshold accepted by [`estimate_delta_c`].
pub const DELTA_C_FLOOR: f64 = 1e-4;

/// Largest threshold tried by [`estimate_delta_c`].
pub const DELTA_C_CEIL: f64 = 0.999;

/// Default scan resolution `(N_ρ, N_σ)`.
pub const DEFAULT_SCAN: (usize, usize) = (256, 256);

/// Working threshold where no barrier applies (m = 0, m = n − 1, p = ∞).
pub const DEFAULT_DELTA_C: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BarrierFamily {
    /// `ρ^β + σ² ρ^γ - ρ²/2`
    UpperHat,
    /// `(1 - σ²) ρ^β + ρ`
    LowerCheck,
    /// `a r^α + b`, radial about a point of `Λ`
    FundamentalPower { a: f64, b: f64 },
    /// `a log r + b`, radial about a point of `Λ`; requires `p = n`
    FundamentalLog { a: f64, b: f64 },
    /// `ρ^β - s^β`
    SharpPower { s: f64 },
}

impl BarrierFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BarrierFamily::UpperHat => "upper_hat",
            BarrierFamily::LowerCheck => "lower_check",
            BarrierFamily::FundamentalPower { .. } => "fundamental_power",
            BarrierFamily::FundamentalLog { .. } => "fundamental_log",
            BarrierFamily::SharpPower { .. } => "sharp_power",
        }
    }

    /// Full-radial families are functions of `|x - x0|` with `x0 ∈ Λ`; their
    /// `ρ` argument is that radius and the operator uses `m = 0`.
    pub fn is_full_radial(&self) -> bool {
        matches!(
            self,
            BarrierFamily::FundamentalPower { .. } | BarrierFamily::FundamentalLog { .. }
        )
    }
}

/// Sign the operator must have for the family to be a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequiredSign {
    /// `Δ_p ≤ 0`
    Supersolution,
    /// `Δ_p ≥ 0`
    Subsolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// A barrier family bound to its exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub family: BarrierFamily,
    pub exps: Exponents,
}

impl Barrier {
    pub fn new(family: BarrierFamily, exps: Exponents) -> Result<Self> {
        match family {
            BarrierFamily::UpperHat | BarrierFamily::LowerCheck => {
                if exps.is_infinite() {
                    return precondition("the hat/check barriers are defined for finite p");
                }
                if exps.m < 1 || exps.m + 2 > exps.n {
                    return precondition(format!(
                        "the hat/check barriers require m in [1, n-2], got n = {}, m = {}",
                        exps.n, exps.m
                    ));
                }
                match exps.gamma {
                    Some(g) if g > 0.0 && g < exps.beta => {}
                    _ => {
                        return precondition(format!(
                            "the hat/check barriers require 0 < gamma < beta = {}",
                            exps.beta
                        ))
                    }
                }
            }
            BarrierFamily::FundamentalPower { .. } => {
                if exps.is_borderline() {
                    return precondition("p = n has the logarithmic fundamental solution");
                }
            }
            BarrierFamily::FundamentalLog { .. } => {
                if !exps.is_borderline() {
                    return precondition("the logarithmic fundamental solution requires p = n");
                }
            }
            BarrierFamily::SharpPower { s } => {
                if !(s >= 0.0 && s.is_finite()) {
                    return precondition(format!("tube radius must be non-negative, got {s}"));
                }
            }
        }
        Ok(Self { family, exps })
    }

    pub fn upper_hat(exps: Exponents) -> Result<Self> {
        Self::new(BarrierFamily::UpperHat, exps)
    }

    pub fn lower_check(exps: Exponents) -> Result<Self> {
        Self::new(BarrierFamily::LowerCheck, exps)
    }

    pub fn sharp(exps: Exponents, s: f64) -> Result<Self> {
        Self::new(BarrierFamily::SharpPower { s }, exps)
    }

    pub fn required_sign(&self) -> Option<RequiredSign> {
        match self.family {
            BarrierFamily::UpperHat => Some(RequiredSign::Supersolution),
            BarrierFamily::LowerCheck => Some(RequiredSign::Subsolution),
            _ => None,
        }
    }

    /// Closed-form jet at `at`. Rejects `ρ = 0`, where fractional powers are
    /// not differentiable.
    pub fn jet(&self, at: BiradialPoint) -> Result<Jet2> {
        let (rho, sigma) = (at.rho, at.sigma);
        if !(rho > 0.0) {
            return Err(Error::AxisSingularity("barrier jets need rho > 0"));
        }
        let beta = self.exps.beta;
        Ok(match self.family {
            BarrierFamily::UpperHat => {
                let g = self.exps.gamma.expect("validated in Barrier::new");
                let rb = rho.powf(beta);
                let rg = rho.powf(g);
                let s2 = sigma * sigma;
                Jet2 {
                    f: rb + s2 * rg - 0.5 * rho * rho,
                    f_rho: beta * rb / rho + g * s2 * rg / rho - rho,
                    f_sigma: 2.0 * sigma * rg,
                    f_rhorho: beta * (beta - 1.0) * rb / (rho * rho)
                        + g * (g - 1.0) * s2 * rg / (rho * rho)
                        - 1.0,
                    f_rhosigma: 2.0 * g * sigma * rg / rho,
                    f_sigmasigma: 2.0 * rg,
                }
            }
            BarrierFamily::LowerCheck => {
                let rb = rho.powf(beta);
                let w = 1.0 - sigma * sigma;
                Jet2 {
                    f: w * rb + rho,
                    f_rho: w * beta * rb / rho + 1.0,
                    f_sigma: -2.0 * sigma * rb,
                    f_rhorho: w * beta * (beta - 1.0) * rb / (rho * rho),
                    f_rhosigma: -2.0 * sigma * beta * rb / rho,
                    f_sigmasigma: -2.0 * rb,
                }
            }
            BarrierFamily::FundamentalPower { a, b } => {
                power_jet(self.exps.alpha, rho).scaled(a).shifted(b)
            }
            BarrierFamily::FundamentalLog { a, b } => Jet2 {
                f: a * rho.ln() + b,
                f_rho: a / rho,
                f_rhorho: -a / (rho * rho),
                ..Jet2::default()
            },
            BarrierFamily::SharpPower { s } => power_jet(beta, rho).shifted(-s.powf(beta)),
        })
    }

    /// Value of the family at `at`; defined also on `ρ = 0` where the jet is not.
    pub fn value(&self, at: BiradialPoint) -> f64 {
        let (rho, sigma) = (at.rho, at.sigma);
        let beta = self.exps.beta;
        match self.family {
            BarrierFamily::UpperHat => {
                let g = self.exps.gamma.unwrap_or(beta);
                rho.powf(beta) + sigma * sigma * rho.powf(g) - 0.5 * rho * rho
            }
            BarrierFamily::LowerCheck => (1.0 - sigma * sigma) * rho.powf(beta) + rho,
            BarrierFamily::FundamentalPower { a, b } => a * rho.powf(self.exps.alpha) + b,
            BarrierFamily::FundamentalLog { a, b } => a * rho.ln() + b,
            BarrierFamily::SharpPower { s } => rho.powf(beta) - s.powf(beta),
        }
    }

    /// Normalized p-Laplacian of the family at `at` with its magnitude scale.
    pub fn operator(&self, at: BiradialPoint) -> Result<NormalizedValue> {
        let jet = self.jet(at)?;
        let m = if self.family.is_full_radial() { 0 } else { self.exps.m };
        normalized_operator(&jet, at, self.exps.p, self.exps.n, m)
    }
}

fn power_jet(e: f64, rho: f64) -> Jet2 {
    let re = rho.powf(e);
    Jet2 {
        f: re,
        f_rho: e * re / rho,
        f_rhorho: e * (e - 1.0) * re / (rho * rho),
        ..Jet2::default()
    }
}

/// Log-spaced ρ nodes from `RHO_SPAN · rho_hi` up to and including `rho_hi`.
pub fn scan_rho_nodes(rho_hi: f64, n_rho: usize) -> Vec<f64> {
    let lo = (RHO_SPAN * rho_hi).ln();
    let hi = rho_hi.ln();
    (0..n_rho)
        .map(|i| {
            if i + 1 == n_rho {
                rho_hi
            } else {
                (lo + (hi - lo) * i as f64 / (n_rho - 1) as f64).exp()
            }
        })
        .collect()
}

/// Uniform σ nodes on `[0, 1]`.
pub fn scan_sigma_nodes(n_sigma: usize) -> Vec<f64> {
    (0..n_sigma)
        .map(|j| j as f64 / (n_sigma - 1) as f64)
        .collect()
}

/// Outcome of a sign scan over `(ρ_lo, ρ_hi] × [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub family: BarrierFamily,
    pub exps: Exponents,
    pub required: RequiredSign,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub n_rho: usize,
    pub n_sigma: usize,
    /// Operator value at `worst_point`, signed so that positive means a
    /// violation for a supersolution and negative for a subsolution is
    /// reported unchanged (raw operator value).
    pub worst_value: f64,
    /// `worst_value / scale`, the quantity the verdict is based on.
    pub worst_relative: f64,
    pub worst_point: BiradialPoint,
    pub verdict: Verdict,
}

/// Scans the normalized operator of a hat or check barrier over
/// `(0, rho_hi] × [0, 1]` and reports the worst signed value.
pub fn verify_sign_region(
    barrier: &Barrier,
    rho_hi: f64,
    grid: (usize, usize),
) -> Result<SignReport> {
    let Some(required) = barrier.required_sign() else {
        return precondition(format!(
            "sign verification applies to the hat/check barriers, not {}",
            barrier.family.name()
        ));
    };
    if !(rho_hi > 0.0 && rho_hi < 1.0) {
        return precondition(format!("rho_hi must lie in (0, 1), got {rho_hi}"));
    }
    let (n_rho, n_sigma) = grid;
    if n_rho < 64 || n_sigma < 64 {
        return precondition(format!("scan grid must be at least 64x64, got {n_rho}x{n_sigma}"));
    }
    let rhos = scan_rho_nodes(rho_hi, n_rho);
    let sigmas = scan_sigma_nodes(n_sigma);
    // orient so that larger is worse
    let orient = match required {
        RequiredSign::Supersolution => 1.0,
        RequiredSign::Subsolution => -1.0,
    };
    let mut worst: Option<(f64, f64, BiradialPoint)> = None;
    for &rho in &rhos {
        for &sigma in &sigmas {
            let at = BiradialPoint { rho, sigma };
            let nv = barrier.operator(at)?;
            let rel = if nv.scale > 0.0 { nv.value / nv.scale } else { 0.0 };
            let key = orient * rel;
            if worst.map_or(true, |(k, _, _)| key > k) {
                worst = Some((key, nv.value, at));
            }
        }
    }
    let (key, value, point) = worst.expect("non-empty scan");
    Ok(SignReport {
        family: barrier.family,
        exps: barrier.exps,
        required,
        rho_lo: rhos[0],
        rho_hi,
        sigma_lo: 0.0,
        sigma_hi: 1.0,
        n_rho,
        n_sigma,
        worst_value: value,
        worst_relative: orient * key,
        worst_point: point,
        verdict: if key <= SIGN_TOLERANCE {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    })
}

/// Largest `rho_hi` in `[DELTA_C_FLOOR, DELTA_C_CEIL]` for which the sign
/// scan passes, located by bisection in `log rho_hi` until the bracket's
/// relative width is below `tol`.
pub fn estimate_delta_c(barrier: &Barrier, tol: f64, grid: (usize, usize)) -> Result<f64> {
    if !(tol > 0.0 && tol < 1.0) {
        return precondition(format!("tolerance must lie in (0, 1), got {tol}"));
    }
    let passes = |r: f64| -> Result<bool> { Ok(verify_sign_region(barrier, r, grid)?.verdict.passed()) };
    if passes(DELTA_C_CEIL)? {
        return Ok(DELTA_C_CEIL);
    }
    if !passes(DELTA_C_FLOOR)? {
        return Err(Error::NotFound(format!(
            "no threshold >= {DELTA_C_FLOOR} passes the {} sign scan",
            barrier.family.name()
        )));
    }
    let (mut lo, mut hi) = (DELTA_C_FLOOR, DELTA_C_CEIL);
    while hi / lo - 1.0 > tol {
        let mid = (lo * hi).sqrt();
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Threshold used by the growth audits: the smaller of the hat and check
/// estimates at `γ = β/2` (or the exponents' own `γ`), and
/// [`DEFAULT_DELTA_C`] where the barriers are not defined.
pub fn working_delta_c(exps: &Exponents) -> Result<f64> {
    let applies = !exps.is_infinite() && exps.m >= 1 && exps.m + 2 <= exps.n;
    if !applies {
        return Ok(DEFAULT_DELTA_C);
    }
    let e = match exps.gamma {
        Some(_) => *exps,
        None => exps.with_gamma(0.5 * exps.beta)?,
    };
    let hat = estimate_delta_c(&Barrier::upper_hat(e)?, 1e-3, DEFAULT_SCAN)?;
    let check = estimate_delta_c(&Barrier::lower_check(e)?, 1e-3, DEFAULT_SCAN)?;
    Ok(hat.min(check))
}

/// Coefficients controlling the large-`p` behaviour of the hat barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZReport {
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    /// `p - n + m - (p - 1) γ`
    pub z: f64,
    pub z2: f64,
    pub z4: f64,
    /// `z2 ≥ 2γ`
    pub z2_holds: bool,
    /// `z4 ≥ 2γ - 1`
    pub z4_holds: bool,
}

impl ZReport {
    pub fn inequalities_hold(&self) -> bool {
        self.z2_holds && self.z4_holds
    }
}

pub fn z_coefficients(exps: &Exponents) -> Result<ZReport> {
    let Some(gamma) = exps.gamma else {
        return precondition("z coefficients need gamma");
    };
    let (p, n, m) = (exps.p, exps.n, exps.m);
    if exps.is_infinite() || !(p > 2.0) {
        return precondition(format!("z coefficients need finite p > 2, got {p}"));
    }
    if m < 1 || m + 2 > n {
        return precondition(format!("z coefficients need m in [1, n-2], got n = {n}, m = {m}"));
    }
    let k = (n - m) as f64;
    let z = p - k - (p - 1.0) * gamma;
    let z2 = (2.0 * gamma * (p * p - 2.0 * p + 1.0) + (3.0 * p - 2.0) * (k - 1.0))
        / (p * p - 3.0 * p + 2.0);
    let z4 = (2.0 * gamma * (p - 1.0) - p - 2.0 + 3.0 * k) / (p - 2.0);
    Ok(ZReport {
        p,
        n,
        m,
        gamma,
        z,
        z2,
        z4,
        z2_holds: z2 >= 2.0 * gamma,
        z4_holds: z4 >= 2.0 * gamma - 1.0,
    })
}

/// Smallest `p` on the ladder (sorted ascending) from which both large-`p`
/// inequalities hold at every larger ladder entry. Entries where `γ ≥ β(p)`
/// or `p ≤ max(2, n - m)` are outside the barrier's hypotheses and skipped.
pub fn z_threshold(n: usize, m: usize, gamma: f64, ladder: &[f64]) -> Result<Option<f64>> {
    let mut threshold = None;
    for &p in ladder {
        let Ok(exps) = Exponents::new(p, n, m) else {
            continue;
        };
        let Ok(exps) = exps.with_gamma(gamma) else {
            continue;
        };
        if !(p > 2.0) || exps.is_infinite() {
            continue;
        }
        let rep = z_coefficients(&exps)?;
        if rep.inequalities_hold() {
            threshold.get_or_insert(p);
        } else {
            threshold = None;
        }
    }
    Ok(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exps(p: f64, n: usize, m: usize, gamma_frac: f64) -> Exponents {
        let e = Exponents::new(p, n, m).unwrap();
        e.with_gamma(gamma_frac * e.beta).unwrap()
    }

    fn pt(rho: f64, sigma: f64) -> BiradialPoint {
        BiradialPoint { rho, sigma }
    }

    #[test]
    fn jet_examples() {
        let e = exps(4.0, 4, 2, 0.5);
        let hat = Barrier::upper_hat(e).unwrap();
        assert_relative_eq!(hat.jet(pt(1.0, 0.0)).unwrap().f, 0.5);
        let check = Barrier::lower_check(e).unwrap();
        assert_relative_eq!(check.jet(pt(0.3, 1.0)).unwrap().f, 0.3);
        let sharp = Barrier::sharp(e, 0.25).unwrap();
        assert!(sharp.jet(pt(0.25, 0.4)).unwrap().f.abs() < 1e-16);
        assert!(matches!(hat.jet(pt(0.0, 0.5)), Err(Error::AxisSingularity(_))));
    }

    #[test]
    fn family_invariants() {
        let e = Exponents::new(4.0, 4, 2).unwrap();
        assert!(Barrier::upper_hat(e).is_err(), "gamma missing");
        assert!(Barrier::upper_hat(Exponents::new(4.0, 4, 3).unwrap().with_gamma(0.5).unwrap()).is_err());
        let off = Exponents::new(5.0, 4, 2).unwrap();
        assert!(Barrier::new(BarrierFamily::FundamentalLog { a: 1.0, b: 0.0 }, off).unwrap_err().to_string().contains("p = n"));
        let borderline = Exponents::new(4.0, 4, 1).unwrap();
        assert!(Barrier::new(BarrierFamily::FundamentalLog { a: 1.0, b: 0.0 }, borderline).is_ok());
        assert!(Barrier::new(BarrierFamily::FundamentalPower { a: 1.0, b: 0.0 }, borderline).is_err());
        assert!(Barrier::sharp(e, -1.0).is_err());
    }

    #[test]
    fn sign_region_rejects_bad_input() {
        let e = exps(4.0, 4, 2, 0.5);
        let hat = Barrier::upper_hat(e).unwrap();
        assert!(verify_sign_region(&hat, 1.0, DEFAULT_SCAN).is_err());
        assert!(verify_sign_region(&hat, 0.1, (32, 256)).is_err());
        let sharp = Barrier::sharp(e, 0.0).unwrap();
        assert!(verify_sign_region(&sharp, 0.1, DEFAULT_SCAN).is_err());
        assert!(estimate_delta_c(&hat, 0.0, DEFAULT_SCAN).is_err());
    }

    #[test]
    fn rho_nodes_cover_six_decades() {
        let r = scan_rho_nodes(0.3, 64);
        assert_eq!(r.len(), 64);
        assert_eq!(*r.last().unwrap(), 0.3);
        assert_relative_eq!(r[0], 0.3e-6, max_relative = 1e-12);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn z_report_matches_closed_form_differences() {
        // z2 - 2γ = (2γ(p-1) + (3p-2)(k-1)) / ((p-1)(p-2))
        // z4 - (2γ-1) = (2γ + 3k - 4) / (p-2)
        for &(n, m) in &[(4usize, 2usize), (5, 2), (5, 3), (6, 1)] {
            for &p in &[5.5, 8.0, 64.0, 1000.0] {
                let e = exps(p, n, m, 0.5);
                let g = e.gamma.unwrap();
                let k = (n - m) as f64;
                let r = z_coefficients(&e).unwrap();
                assert_relative_eq!(
                    r.z2 - 2.0 * g,
                    (2.0 * g * (p - 1.0) + (3.0 * p - 2.0) * (k - 1.0)) / ((p - 1.0) * (p - 2.0)),
                    max_relative = 1e-9
                );
                assert_relative_eq!(
                    r.z4 - (2.0 * g - 1.0),
                    (2.0 * g + 3.0 * k - 4.0) / (p - 2.0),
                    max_relative = 1e-9
                );
                assert!(r.z > 0.0);
            }
        }
    }

    #[test]
    fn z_examples() {
        let e = Exponents::new(1000.0, 4, 2).unwrap().with_gamma(0.6).unwrap();
        assert!(z_coefficients(&e).unwrap().inequalities_hold());
        // z2 → 2γ as p → ∞
        let e = Exponents::new(1e9, 4, 2).unwrap().with_gamma(0.6).unwrap();
        assert_relative_eq!(z_coefficients(&e).unwrap().z2, 1.2, max_relative = 1e-8);
        let e = Exponents::new(3.0, 4, 2).unwrap();
        let e = e.with_gamma(e.beta / 2.0).unwrap();
        assert!(z_coefficients(&e).unwrap().z > 0.0);
        assert!(z_coefficients(&Exponents::new(3.0, 4, 2).unwrap()).is_err());
    }
}
