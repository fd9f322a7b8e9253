use proptest::prelude::*;
use tubeharm_core::barriers::Barrier;
use tubeharm_core::biradial::{inf_laplacian_biradial, normalized_operator};
use tubeharm_core::geometry::build_levels;
use tubeharm_core::solver::{discrete_residual, Scheme};
use tubeharm_core::{BiradialPoint, DomainSpec, Exponents, GridFunction, Jet2, Resolution, TubeGeometry};

/// `(n, m)` with `n ≤ 5`.
fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=5).prop_flat_map(|n| (Just(n), 0..n))
}

fn jet() -> impl Strategy<Value = Jet2> {
    prop::array::uniform6(-2.0f64..2.0).prop_map(|a| Jet2 {
        f: a[0],
        f_rho: a[1],
        f_sigma: a[2],
        f_rhorho: a[3],
        f_rhosigma: a[4],
        f_sigmasigma: a[5],
    })
}

/// Normalized p-Laplacian of `x ↦ F(|x'|, |x''|)` at a point of Rⁿ, from the
/// explicit gradient and Hessian in Cartesian coordinates (`x'` are the
/// first `n − m` coordinates).
fn cartesian_operator(jet: &Jet2, x: &[f64], m: usize, p: f64) -> f64 {
    let n = x.len();
    let k = n - m;
    let rho = x[..k].iter().map(|c| c * c).sum::<f64>().sqrt();
    let sigma = x[k..].iter().map(|c| c * c).sum::<f64>().sqrt();
    let grad_rho: Vec<f64> = (0..n).map(|i| if i < k { x[i] / rho } else { 0.0 }).collect();
    let grad_sigma: Vec<f64> = (0..n).map(|i| if i >= k { x[i] / sigma } else { 0.0 }).collect();
    let grad: Vec<f64> = (0..n).map(|i| jet.f_rho * grad_rho[i] + jet.f_sigma * grad_sigma[i]).collect();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let same_block = (i < k) == (j < k);
            let delta = if i == j { 1.0 } else { 0.0 };
            let d2rho = if i < k && same_block { (delta - grad_rho[i] * grad_rho[j]) / rho } else { 0.0 };
            let d2sigma = if i >= k && same_block { (delta - grad_sigma[i] * grad_sigma[j]) / sigma } else { 0.0 };
            hess[i][j] = jet.f_rhorho * grad_rho[i] * grad_rho[j]
                + jet.f_rhosigma * (grad_rho[i] * grad_sigma[j] + grad_sigma[i] * grad_rho[j])
                + jet.f_sigmasigma * grad_sigma[i] * grad_sigma[j]
                + jet.f_rho * d2rho
                + jet.f_sigma * d2sigma;
        }
    }
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    let trace: f64 = (0..n).map(|i| hess[i][i]).sum();
    let quad: f64 = (0..n).map(|i| (0..n).map(|j| grad[i] * hess[i][j] * grad[j]).sum::<f64>()).sum();
    if p.is_infinite() {
        quad
    } else {
        g2 * trace + (p - 2.0) * quad
    }
}

proptest! {
    #[test]
    fn reduced_operator_matches_cartesian((n, m) in dims(), j in jet(),
        raw in prop::collection::vec(0.2f64..2.0, 5), signs in prop::collection::vec(any::<bool>(), 5),
        p in prop_oneof![1.1f64..50.0, Just(f64::INFINITY)]) {
        // with m = 0 there is no σ variable
        let j = if m == 0 { Jet2 { f_sigma: 0.0, f_rhosigma: 0.0, f_sigmasigma: 0.0, ..j } } else { j };
        prop_assume!(j.grad_norm_sq() > 1e-6);
        let x: Vec<f64> = (0..n).map(|i| if signs[i] { raw[i] } else { -raw[i] }).collect();
        let at = BiradialPoint::from_full(&x, m);
        let reduced = normalized_operator(&j, at, p, n, m).unwrap();
        let full = cartesian_operator(&j, &x, m, p);
        prop_assert!((reduced.value - full).abs() <= 1e-10 * (1.0 + reduced.scale),
            "reduced {} vs Cartesian {}", reduced.value, full);
    }

    #[test]
    fn sharp_power_is_p_harmonic((n, m) in dims(), t in 0.0f64..1.0, infinite in any::<bool>(),
        s in 0.0f64..2.0, rho in 1e-3f64..1e3, sigma in 0.0f64..10.0) {
        let k = (n - m) as f64;
        let lower = k.max(1.0);
        // p spread over (lower, lower + 200]
        let p = if infinite { f64::INFINITY } else { lower + 1e-3 + 200.0 * t };
        let e = Exponents::new(p, n, m).unwrap();
        let sigma = if m == 0 { 0.0 } else { sigma };
        let v = Barrier::sharp(e, s).unwrap().operator(BiradialPoint { rho, sigma }).unwrap();
        prop_assert!(v.value.abs() <= 1e-9 * v.scale, "{} vs scale {}", v.value, v.scale);
    }

    #[test]
    fn normalized_operator_tends_to_infinity_laplacian((n, m) in dims(), j in jet(),
        rho in 0.1f64..3.0, sigma in 0.1f64..3.0) {
        let j = if m == 0 { Jet2 { f_sigma: 0.0, f_rhosigma: 0.0, f_sigmasigma: 0.0, ..j } } else { j };
        prop_assume!(j.grad_norm_sq() > 1e-6);
        let at = BiradialPoint { rho, sigma: if m == 0 { 0.0 } else { sigma } };
        let inf = inf_laplacian_biradial(&j);
        let mut previous = f64::INFINITY;
        for p in [1e2, 1e4, 1e6] {
            let v = normalized_operator(&j, at, p, n, m).unwrap();
            let gap = (v.value / (p - 2.0) - inf).abs();
            prop_assert!(gap <= previous, "p = {p}: gap {gap} grew from {previous}");
            previous = gap;
        }
        prop_assert!(previous <= 1e-5 * (1.0 + normalized_operator(&j, at, 4.0, n, m).unwrap().scale));
    }

    #[test]
    fn beta_is_in_unit_interval_and_one_in_codimension_one((n, m) in dims(), t in 0.0f64..1.0) {
        let lower = ((n - m) as f64).max(1.0);
        let p = lower + 1e-6 + 1e3 * t;
        let beta = Exponents::new(p, n, m).unwrap().beta;
        prop_assert!(beta > 0.0 && beta <= 1.0);
        if n - m == 1 {
            prop_assert!((beta - 1.0).abs() < 1e-15);
        }
    }
}

/// The discrete operators applied to the exact radial solution shrink under
/// refinement.
#[test]
fn schemes_are_consistent_on_the_sharp_solution() {
    let s = 0.25f64;
    for (p, scheme) in [(3.0, Scheme::NormalizedFd), (3.0, Scheme::EnergyGs)] {
        let e = Exponents::new(p, 2, 0).unwrap();
        let exact = move |x: BiradialPoint| (x.rho.powf(e.beta) - s.powf(e.beta)) / (1f64.powf(e.beta) - s.powf(e.beta));
        let spec = DomainSpec::ball(TubeGeometry::new(2, 0, s).unwrap(), 1.0, true);
        let mut residuals = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
            let grid = build_levels(&spec, &Resolution::Uniform { h }, 1).unwrap().remove(0);
            let mut u = GridFunction::with_data(grid, 0.0, |info| exact(info.point));
            for i in 0..u.values.len() {
                u.values[i] = exact(u.grid.biradial(i));
            }
            residuals.push(discrete_residual(&u, &e, scheme, 1e-10).unwrap());
        }
        assert!(
            residuals.windows(2).all(|w| w[1] < 0.75 * w[0]),
            "{scheme:?}: {residuals:?}"
        );
    }
}
