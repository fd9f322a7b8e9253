//! Exact operator calculus for biradial functions.
//!
//! Points of Rⁿ are split as `x = (x', x'')` with `x' ∈ R^{n-m}` and
//! `x'' ∈ R^m`. A biradial function is `u(x) = F(ρ, σ)` with `ρ = |x'|`
//! (distance to the hyperplane `Λ = {x' = 0}`) and `σ = |x''|` (distance
//! along `Λ` from the anchor). With `k = n - m` the operators reduce to
//!
//! ```text
//! Δu   = F_ρρ + (k-1) F_ρ/ρ + F_σσ + (m-1) F_σ/σ
//! Δ∞u  = F_ρ² F_ρρ + 2 F_ρ F_σ F_ρσ + F_σ² F_σσ
//! N_p u = |∇u|² Δu + (p-2) Δ∞u          (finite p)
//! ```
//!
//! `N_p` shares its sign with `Δ_p u = |∇u|^{p-4} N_p u` wherever `∇u ≠ 0`.
//! For `m = 0` there is no `x''` block and every σ term is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::serde_ext;

/// Gradients smaller than this are treated as critical points.
pub const GRADIENT_FLOOR: f64 = 1e-12;

/// Growth exponent `β = (p - n + m)/(p - 1)`, equal to 1 for `p = ∞`.
pub fn beta_exponent(p: f64, n: usize, m: usize) -> Result<f64> {
    check_dims(n, m)?;
    check_p(p, n, m)?;
    if p.is_infinite() {
        Ok(1.0)
    } else {
        Ok((p - n as f64 + m as f64) / (p - 1.0))
    }
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n < 2 || m + 1 > n {
        return Err(Error::InvalidDimensions { n, m });
    }
    Ok(())
}

fn check_p(p: f64, n: usize, m: usize) -> Result<()> {
    let lower = ((n - m) as f64).max(1.0);
    // NaN fails the comparison as well
    if !(p > lower) {
        return Err(Error::ExponentOutOfRange { p, lower });
    }
    Ok(())
}

/// The parameter bundle `(p, n, m)` together with the derived exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    #[serde(with = "serde_ext::extended_real")]
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    /// `(p - n)/(p - 1)`; zero in the borderline case `p = n`, where the
    /// fundamental solution is logarithmic.
    pub alpha: f64,
    pub gamma: Option<f64>,
}

impl Exponents {
    pub fn new(p: f64, n: usize, m: usize) -> Result<Self> {
        let beta = beta_exponent(p, n, m)?;
        let alpha = if p.is_infinite() {
            1.0
        } else {
            (p - n as f64) / (p - 1.0)
        };
        Ok(Self {
            p,
            n,
            m,
            beta,
            alpha,
            gamma: None,
        })
    }

    /// Attaches the auxiliary exponent `γ ∈ (0, β)` used by the barriers.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < self.beta) {
            return precondition(format!(
                "gamma = {gamma} must satisfy 0 < gamma < beta = {}",
                self.beta
            ));
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    /// Codimension `k = n - m` of the hyperplane.
    pub fn codim(&self) -> usize {
        self.n - self.m
    }

    pub fn is_infinite(&self) -> bool {
        self.p.is_infinite()
    }

    /// `p = n`: the fundamental solution is `a log r + b`.
    pub fn is_borderline(&self) -> bool {
        self.p == self.n as f64
    }
}

/// A point in the reduced `(ρ, σ)` quarter plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BiradialPoint {
    pub rho: f64,
    pub sigma: f64,
}

impl BiradialPoint {
    pub fn new(rho: f64, sigma: f64) -> Result<Self> {
        if !(rho.is_finite() && sigma.is_finite() && rho >= 0.0 && sigma >= 0.0) {
            return precondition(format!(
                "biradial coordinates must be finite and non-negative, got ({rho}, {sigma})"
            ));
        }
        Ok(Self { rho, sigma })
    }

    /// Reduces a point of Rⁿ, `n = x.len()`, to `(|x'|, |x''|)`.
    pub fn from_full(x: &[f64], m: usize) -> Self {
        let k = x.len() - m;
        let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
        Self {
            rho: norm(&x[..k]),
            sigma: norm(&x[k..]),
        }
    }

    pub fn norm(&self) -> f64 {
        self.rho.hypot(self.sigma)
    }
}

/// Value and partial derivatives up to second order of `F(ρ, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jet2 {
    pub f: f64,
    pub f_rho: f64,
    pub f_sigma: f64,
    pub f_rhorho: f64,
    pub f_rhosigma: f64,
    pub f_sigmasigma: f64,
}

impl Jet2 {
    pub fn is_finite(&self) -> bool {
        [
            self.f,
            self.f_rho,
            self.f_sigma,
            self.f_rhorho,
            self.f_rhosigma,
            self.f_sigmasigma,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.f_rho * self.f_rho + self.f_sigma * self.f_sigma
    }

    /// Jet of `c F`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            f: c * self.f,
            f_rho: c * self.f_rho,
            f_sigma: c * self.f_sigma,
            f_rhorho: c * self.f_rhorho,
            f_rhosigma: c * self.f_rhosigma,
            f_sigmasigma: c * self.f_sigmasigma,
        }
    }

    /// Jet of `F + c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            f: self.f + c,
            ..*self
        }
    }
}

impl std::ops::Add for Jet2 {
    type Output = Jet2;

    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            f: self.f + o.f,
            f_rho: self.f_rho + o.f_rho,
            f_sigma: self.f_sigma + o.f_sigma,
            f_rhorho: self.f_rhorho + o.f_rhorho,
            f_rhosigma: self.f_rhosigma + o.f_rhosigma,
            f_sigmasigma: self.f_sigmasigma + o.f_sigmasigma,
        }
    }
}

/// Drift term `c · d/t` for a radial block of dimension `c + 1`, with the
/// symmetric axis limit `c · dd` when `t = 0` and `d = 0`.
fn drift(c: usize, d: f64, dd: f64, t: f64, what: &'static str) -> Result<f64> {
    if c == 0 {
        return Ok(0.0);
    }
    let c = c as f64;
    if t > 0.0 {
        Ok(c * d / t)
    } else if d == 0.0 {
        Ok(c * dd)
    } else {
        Err(Error::AxisSingularity(what))
    }
}

/// Individual contributions to the Laplacian, kept separate so callers can
/// form a magnitude scale for sign tolerances.
fn laplacian_terms(jet: &Jet2, at: BiradialPoint, n: usize, m: usize) -> Result<[f64; 4]> {
    check_dims(n, m)?;
    let k = n - m;
    let rho_drift = drift(
        k - 1,
        jet.f_rho,
        jet.f_rhorho,
        at.rho,
        "F_rho/rho evaluated on the hyperplane",
    )?;
    if m == 0 {
        return Ok([jet.f_rhorho, rho_drift, 0.0, 0.0]);
    }
    let sigma_drift = drift(
        m - 1,
        jet.f_sigma,
        jet.f_sigmasigma,
        at.sigma,
        "F_sigma/sigma evaluated on the normal axis",
    )?;
    Ok([jet.f_rhorho, rho_drift, jet.f_sigmasigma, sigma_drift])
}

/// Exact n-dimensional Laplacian of `x ↦ F(|x'|, |x''|)`.
pub fn laplacian_biradial(jet: &Jet2, at: BiradialPoint, n: usize, m: usize) -> Result<f64> {
    Ok(laplacian_terms(jet, at, n, m)?.iter().sum())
}

fn inf_laplacian_terms(jet: &Jet2) -> [f64; 3] {
    [
        jet.f_rho * jet.f_rho * jet.f_rhorho,
        2.0 * jet.f_rho * jet.f_sigma * jet.f_rhosigma,
        jet.f_sigma * jet.f_sigma * jet.f_sigmasigma,
    ]
}

/// Exact ∞-Laplacian of the biradial extension. No drift terms appear.
pub fn inf_laplacian_biradial(jet: &Jet2) -> f64 {
    inf_laplacian_terms(jet).iter().sum()
}

/// Value of the normalized operator together with the magnitude of its
/// largest cancelling contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedValue {
    pub value: f64,
    /// Sum of absolute values of the terms entering `value`.
    pub scale: f64,
}

/// Normalized p-Laplacian `|∇u|² Δu + (p-2) Δ∞u`; `Δ∞u` when `p = ∞`.
pub fn normalized_p_laplacian_scaled(
    jet: &Jet2,
    at: BiradialPoint,
    exps: &Exponents,
) -> Result<NormalizedValue> {
    normalized_operator(jet, at, exps.p, exps.n, exps.m)
}

/// Same as [`normalized_p_laplacian_scaled`] without the hyperplane range
/// check on `p`. Fundamental solutions centred on `Λ` are full-radial
/// (`m = 0`) while `p` may lie anywhere in `(1, ∞]`.
pub fn normalized_operator(
    jet: &Jet2,
    at: BiradialPoint,
    p: f64,
    n: usize,
    m: usize,
) -> Result<NormalizedValue> {
    if !(p > 1.0) {
        return Err(Error::ExponentOutOfRange { p, lower: 1.0 });
    }
    let g2 = jet.grad_norm_sq();
    if g2.sqrt() < GRADIENT_FLOOR {
        return Err(Error::DegenerateGradient(g2.sqrt()));
    }
    let inf_terms = inf_laplacian_terms(jet);
    let inf_val: f64 = inf_terms.iter().sum();
    let inf_abs: f64 = inf_terms.iter().map(|t| t.abs()).sum();
    if p.is_infinite() {
        return Ok(NormalizedValue {
            value: inf_val,
            scale: inf_abs,
        });
    }
    let lap_terms = laplacian_terms(jet, at, n, m)?;
    let lap_val: f64 = lap_terms.iter().sum();
    let lap_abs: f64 = lap_terms.iter().map(|t| t.abs()).sum();
    let c = p - 2.0;
    Ok(NormalizedValue {
        value: g2 * lap_val + c * inf_val,
        scale: g2 * lap_abs + c.abs() * inf_abs,
    })
}

/// Normalized p-Laplacian, sign-equivalent to `Δ_p` away from critical points.
pub fn p_laplacian_biradial(jet: &Jet2, at: BiradialPoint, exps: &Exponents) -> Result<f64> {
    Ok(normalized_p_laplacian_scaled(jet, at, exps)?.value)
}

/// The divergence-form operator `Δ_p u = |∇u|^{p-4} N_p u`, assembled in
/// log space so that large `p` does not overflow before the sign is known.
pub fn p_laplacian_raw(jet: &Jet2, at: BiradialPoint, exps: &Exponents) -> Result<f64> {
    if !(exps.p > 2.0) || exps.is_infinite() {
        return precondition(format!(
            "raw p-Laplacian is exposed for finite p > 2 only (p = {})",
            exps.p
        ));
    }
    let normalized = p_laplacian_biradial(jet, at, exps)?;
    if normalized == 0.0 {
        return Ok(0.0);
    }
    let log_mag = 0.5 * (exps.p - 4.0) * jet.grad_norm_sq().ln() + normalized.abs().ln();
    Ok(normalized.signum() * log_mag.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(rho: f64, sigma: f64) -> BiradialPoint {
        BiradialPoint::new(rho, sigma).unwrap()
    }

    fn power_jet(c: f64, e: f64, rho: f64) -> Jet2 {
        Jet2 {
            f: c * rho.powf(e),
            f_rho: c * e * rho.powf(e - 1.0),
            f_rhorho: c * e * (e - 1.0) * rho.powf(e - 2.0),
            ..Jet2::default()
        }
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_exponent(f64::INFINITY, 3, 1).unwrap(), 1.0);
        assert_relative_eq!(beta_exponent(3.0, 3, 1).unwrap(), 0.5);
        assert_relative_eq!(beta_exponent(4.0, 3, 1).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn beta_rejects_out_of_range() {
        assert!(matches!(
            beta_exponent(2.0, 3, 1),
            Err(Error::ExponentOutOfRange { .. })
        ));
        assert!(beta_exponent(1.5, 3, 1).is_err());
        assert!(beta_exponent(f64::NAN, 3, 1).is_err());
        assert!(matches!(
            beta_exponent(4.0, 3, 3),
            Err(Error::InvalidDimensions { .. })
        ));
        // m = n - 1 admits any p > 1
        assert!(beta_exponent(1.2, 3, 2).is_ok());
        assert!(beta_exponent(1.0, 3, 2).is_err());
    }

    #[test]
    fn beta_is_one_exactly_on_the_boundary_cases() {
        for n in 2..7 {
            for m in 0..n {
                for &p in &[1.5, 2.5, 3.0, 4.0, 7.5, 20.0, 1e4, f64::INFINITY] {
                    let Ok(beta) = beta_exponent(p, n, m) else {
                        continue;
                    };
                    assert!(beta > 0.0 && beta <= 1.0 + 1e-15);
                    let expect_one = p.is_infinite() || m == n - 1;
                    assert_eq!((beta - 1.0).abs() < 1e-14, expect_one, "p={p} n={n} m={m}");
                    if p == n as f64 {
                        assert_relative_eq!(beta, m as f64 / (n as f64 - 1.0), epsilon = 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_must_lie_below_beta() {
        let e = Exponents::new(4.0, 4, 2).unwrap();
        assert!(e.with_gamma(e.beta / 2.0).is_ok());
        assert!(e.with_gamma(e.beta).is_err());
        assert!(e.with_gamma(0.0).is_err());
    }

    #[test]
    fn laplacian_examples() {
        // |x|^2 in R^3
        let jet = power_jet(1.0, 2.0, 1.3);
        assert_relative_eq!(laplacian_biradial(&jet, pt(1.3, 0.0), 3, 0).unwrap(), 6.0);
        // |x''|^2 with two coordinates along the hyperplane
        let jet = Jet2 {
            f: 0.49,
            f_sigma: 1.4,
            f_sigmasigma: 2.0,
            ..Jet2::default()
        };
        assert_relative_eq!(laplacian_biradial(&jet, pt(0.5, 0.7), 3, 2).unwrap(), 4.0);
        // ρ = |x_1| in the plane with m = 1 is linear on each half
        let jet = power_jet(1.0, 1.0, 0.8);
        assert_eq!(laplacian_biradial(&jet, pt(0.8, 0.3), 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn drift_singularity_is_signalled() {
        let jet = Jet2 {
            f_sigma: 1.0,
            ..Jet2::default()
        };
        assert!(matches!(
            laplacian_biradial(&jet, pt(1.0, 0.0), 4, 2),
            Err(Error::AxisSingularity(_))
        ));
        // symmetric profile: the drift is replaced by its limit
        let jet = Jet2 {
            f_sigmasigma: 2.0,
            ..Jet2::default()
        };
        assert_eq!(laplacian_biradial(&jet, pt(1.0, 0.0), 4, 2).unwrap(), 4.0);
        // m = 1 carries no σ drift
        let jet = Jet2 {
            f_sigma: 1.0,
            ..Jet2::default()
        };
        assert_eq!(laplacian_biradial(&jet, pt(1.0, 0.0), 3, 1).unwrap(), 0.0);
    }

    #[test]
    fn inf_laplacian_examples() {
        let linear = Jet2 {
            f: 2.0,
            f_rho: 0.3,
            f_sigma: -1.2,
            ..Jet2::default()
        };
        assert_eq!(inf_laplacian_biradial(&linear), 0.0);
        let rho = 0.7;
        assert_relative_eq!(
            inf_laplacian_biradial(&power_jet(1.0, 2.0, rho)),
            8.0 * rho * rho,
            max_relative = 1e-14
        );
        let b = 0.37;
        assert_relative_eq!(
            inf_laplacian_biradial(&power_jet(1.0, b, rho)),
            b.powi(3) * (b - 1.0) * rho.powf(3.0 * b - 4.0),
            max_relative = 1e-13
        );
    }

    #[test]
    fn sharp_power_is_p_harmonic() {
        let e = Exponents::new(4.0, 3, 1).unwrap();
        let jet = power_jet(1.0, e.beta, 0.4).shifted(-0.2f64.powf(e.beta));
        let nv = normalized_p_laplacian_scaled(&jet, pt(0.4, 0.9), &e).unwrap();
        assert!(nv.value.abs() <= 1e-12 * nv.scale, "{nv:?}");
    }

    #[test]
    fn fundamental_solutions_are_p_harmonic() {
        for &p in &[1.5, 2.5, 5.0, 40.0] {
            let alpha = (p - 3.0) / (p - 1.0);
            let jet = power_jet(2.0, alpha, 1.7);
            let nv = normalized_operator(&jet, pt(1.7, 0.0), p, 3, 0).unwrap();
            assert!(nv.value.abs() <= 1e-12 * nv.scale, "p={p}");
        }
        let r: f64 = 0.6;
        let jet = Jet2 {
            f: r.ln(),
            f_rho: 1.0 / r,
            f_rhorho: -1.0 / (r * r),
            ..Jet2::default()
        };
        let nv = normalized_operator(&jet, pt(r, 0.0), 3.0, 3, 0).unwrap();
        assert!(nv.value.abs() <= 1e-12 * nv.scale);
    }

    #[test]
    fn degenerate_gradient_is_signalled() {
        let e = Exponents::new(4.0, 3, 1).unwrap();
        let flat = Jet2 {
            f: 1.0,
            f_rhorho: 1.0,
            ..Jet2::default()
        };
        assert!(matches!(
            p_laplacian_biradial(&flat, pt(1.0, 1.0), &e),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn raw_operator_matches_direct_power() {
        let e = Exponents::new(6.0, 4, 1).unwrap();
        let jet = power_jet(1.0, 2.0, 0.9);
        let at = pt(0.9, 0.5);
        let normalized = p_laplacian_biradial(&jet, at, &e).unwrap();
        let direct = jet.grad_norm_sq().powf(0.5 * (e.p - 4.0)) * normalized;
        assert_relative_eq!(p_laplacian_raw(&jet, at, &e).unwrap(), direct, max_relative = 1e-12);
        // huge p: the raw value overflows to inf but keeps its sign
        let big = Exponents::new(1e6, 4, 1).unwrap();
        let raw = p_laplacian_raw(&power_jet(1.0, 2.0, 3.0), pt(3.0, 0.0), &big).unwrap();
        assert!(raw > 0.0);
        assert!(p_laplacian_raw(&jet, at, &Exponents::new(f64::INFINITY, 4, 1).unwrap()).is_err());
    }
}
