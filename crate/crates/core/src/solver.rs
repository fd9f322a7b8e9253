//! Dirichlet solvers for the p-Laplace and ∞-Laplace equations on classified
//! grids.
//!
//! * `EnergyGs` — nonlinear Gauss–Seidel on the discrete weighted p-energy.
//!   Each cell contributes `W_c / 2^d · Σ_corners |g_q|^p / p`, where `g_q` is
//!   the vector of edge differences leaving corner `q` inside the cell and
//!   `W_c` integrates the reduction weight `ρ^{k-1} σ^{m-1}` exactly over the
//!   cell. A node update minimizes a convex function of one variable whose
//!   minimizer lies between the smallest and largest neighbour values.
//! * `MinMaxAvg` — the monotone `S⁺ = S⁻` scheme for `Δ_∞` on the full
//!   3^d − 1 neighbourhood, with mirrored ghost nodes.
//! * `NormalizedFd` — explicit finite differences for the normalized
//!   operator, uniform reduced grids only; a cross-check, not a workhorse.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::biradial::{BiradialPoint, Exponents};
use crate::error::{precondition, Error, Result};
use crate::geometry::{
    build_levels, for_each_offset, Axis, DomainSpec, Grid, GridFunction, NodeInfo, NodeState, Resolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EnergyGs,
    MinMaxAvg,
    NormalizedFd,
}

impl Scheme {
    pub fn default_for(exps: &Exponents) -> Self {
        if exps.is_infinite() {
            Scheme::MinMaxAvg
        } else {
            Scheme::EnergyGs
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    Lexicographic,
    RedBlack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub scheme: Scheme,
    /// Sup-norm change per sweep below which the iteration stops.
    pub stop_tol: f64,
    pub max_sweeps: usize,
    /// Gradient regularization, `NormalizedFd` only.
    pub eps_reg: f64,
    pub order: SweepOrder,
    /// Over-relaxation factor; `None` picks one from the grid size.
    pub omega: Option<f64>,
    /// Record the discrete energy after every sweep (`EnergyGs` only).
    pub track_energy: bool,
}

impl SolveOptions {
    pub fn for_exponents(exps: &Exponents) -> Self {
        Self {
            scheme: Scheme::default_for(exps),
            stop_tol: 1e-9,
            max_sweeps: 200_000,
            eps_reg: 1e-10,
            order: SweepOrder::Lexicographic,
            omega: None,
            track_energy: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_stop_tol(mut self, tol: f64) -> Self {
        self.stop_tol = tol;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = Some(omega);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stop_tol > 0.0) {
            return precondition("stop_tol must be positive");
        }
        if !(self.eps_reg >= 0.0) {
            return precondition("eps_reg must be non-negative");
        }
        if let Some(w) = self.omega {
            if !(w > 0.0 && w < 2.0) {
                return precondition(format!("omega must lie in (0, 2), got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub scheme: Scheme,
    pub sweeps: usize,
    pub final_change: f64,
    /// Max over interior nodes of the discrete operator, recomputed after
    /// the iteration.
    pub residual: f64,
    pub converged: bool,
    /// Interior values lie within the range of the Dirichlet values.
    pub within_bounds: bool,
    pub boundary_min: f64,
    pub boundary_max: f64,
    pub omega: f64,
    pub stop_tol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub interior_nodes: usize,
    /// Sweeps per cascade level, coarse to fine.
    pub level_sweeps: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub energy_trace: Vec<f64>,
    /// Not serialized: reports must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Solves the Dirichlet problem with data from `data`, starting from the
/// midpoint of the data range.
pub fn solve_p_harmonic(
    grid: Arc<Grid>,
    data: &dyn Fn(&NodeInfo) -> f64,
    exps: &Exponents,
    opts: &SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    let mut u = GridFunction::with_data(grid, 0.0, data);
    let (lo, hi) = u.boundary_range();
    let mid = 0.5 * (lo + hi);
    for (v, s) in u.values.iter_mut().zip(&u.grid.states) {
        if *s == NodeState::Interior {
            *v = mid;
        }
    }
    solve_from(u, exps, opts)
}

/// Solves on a sequence of grids, coarse to fine, each started from the
/// interpolated previous solution.
pub fn solve_cascade(
    grids: &[Arc<Grid>],
    data: &dyn Fn(&NodeInfo) -> f64,
    exps: &Exponents,
    opts: &SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    let Some((first, rest)) = grids.split_first() else {
        return precondition("cascade needs at least one grid");
    };
    let start = Instant::now();
    let (mut u, mut report) = solve_p_harmonic(first.clone(), data, exps, opts)?;
    let mut level_sweeps = vec![report.sweeps];
    let mut total = report.sweeps;
    for g in rest {
        let mut next = GridFunction::with_data(g.clone(), 0.0, data);
        let (lo, hi) = next.boundary_range();
        for i in 0..g.len() {
            if g.states[i] == NodeState::Interior {
                let x = g.coords(i);
                next.values[i] = u.sample_coords(&x[..g.dims()]).clamp(lo, hi);
            }
        }
        let (v, r) = solve_from(next, exps, opts)?;
        level_sweeps.push(r.sweeps);
        total += r.sweeps;
        u = v;
        report = r;
    }
    report.level_sweeps = level_sweeps;
    report.sweeps = total;
    report.wall_time = start.elapsed();
    Ok((u, report))
}

/// Grids for a cascade ending at uniform spacing `h`.
pub fn uniform_cascade(spec: &DomainSpec, h: f64, levels: usize) -> Result<Vec<Arc<Grid>>> {
    build_levels(spec, &Resolution::Uniform { h }, levels)
}

/// Iterates from the given initial values; Dirichlet values are kept.
pub fn solve_from(mut u: GridFunction, exps: &Exponents, opts: &SolveOptions) -> Result<(GridFunction, SolveReport)> {
    opts.validate()?;
    let start = Instant::now();
    let grid = u.grid.clone();
    let (n, m) = grid.frame.nm();
    if (n, m) != (exps.n, exps.m) {
        return Err(Error::GridMismatch(format!(
            "grid is for (n, m) = ({n}, {m}), exponents for ({}, {})",
            exps.n, exps.m
        )));
    }
    match (opts.scheme, exps.is_infinite()) {
        (Scheme::MinMaxAvg, false) => return precondition("MinMaxAvg solves p = ∞ only"),
        (Scheme::EnergyGs | Scheme::NormalizedFd, true) => {
            return precondition("EnergyGs and NormalizedFd need finite p")
        }
        _ => {}
    }
    if u.values.iter().any(|v| !v.is_finite()) {
        return precondition("boundary data must be finite");
    }
    let (lo, hi) = u.boundary_range();
    if !(lo <= hi) {
        return precondition("grid has no Dirichlet nodes");
    }
    for (v, s) in u.values.iter_mut().zip(&grid.states) {
        if *s == NodeState::Interior {
            *v = v.clamp(lo, hi);
        }
    }
    let order = sweep_order(&grid, opts.order);
    let mut relax = Relaxer::new(&grid, exps, opts)?;
    let mut scratch = Scratch::default();
    let mut energy_trace = Vec::new();
    if opts.track_energy && opts.scheme == Scheme::EnergyGs {
        energy_trace.push(discrete_energy(&u, exps.p)?);
    }
    let mut omega = opts.omega.unwrap_or_else(|| default_omega(&grid, opts.scheme));
    // the min-max update is not smooth and large-p energies are nearly flat
    // away from steep gradients; over-relaxation can cycle in both, so ω
    // backs off whenever a window of sweeps fails to shrink the change
    let backoff = opts.scheme != Scheme::NormalizedFd && opts.omega.is_none();
    let (mut window_max, mut prev_window_max) = (0.0f64, f64::INFINITY);
    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        change = 0.0;
        for &(i, ix) in &order {
            let old = u.values[i];
            let new = relax.update(i, ix, &u.values, omega, &mut scratch);
            u.values[i] = new;
            change = f64::max(change, (new - old).abs());
        }
        sweeps += 1;
        if !energy_trace.is_empty() {
            energy_trace.push(discrete_energy(&u, exps.p)?);
        }
        if change < opts.stop_tol {
            break;
        }
        if backoff && omega > 1.0 {
            window_max = window_max.max(change);
            if sweeps % BACKOFF_WINDOW == 0 {
                if window_max >= 0.95 * prev_window_max {
                    omega = 1.0 + 0.5 * (omega - 1.0);
                }
                prev_window_max = window_max;
                window_max = 0.0;
            }
        }
    }
    let (ilo, ihi) = u.interior_range();
    let within_bounds = order.is_empty() || (ilo >= lo && ihi <= hi);
    let residual = discrete_residual(&u, exps, opts.scheme, opts.eps_reg)?;
    let report = SolveReport {
        scheme: opts.scheme,
        sweeps,
        final_change: change,
        residual,
        converged: change < opts.stop_tol,
        within_bounds,
        boundary_min: lo,
        boundary_max: hi,
        omega,
        stop_tol: opts.stop_tol,
        h_min: grid.h_min(),
        h_max: grid.h_max(),
        interior_nodes: order.len(),
        level_sweeps: vec![sweeps],
        energy_trace,
        wall_time: start.elapsed(),
    };
    Ok((u, report))
}

const BACKOFF_WINDOW: usize = 200;

/// Energy: `2/(1 + 2/N)` with `N` the longest axis: close to the optimum for the
/// Laplacian on uniform grids and somewhat bolder, which suits graded ones.
fn default_omega(grid: &Grid, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::NormalizedFd => 1.0,
        Scheme::MinMaxAvg => 1.7,
        Scheme::EnergyGs => {
            let nmax = grid.shape().iter().copied().max().unwrap_or(2) as f64;
            (2.0 / (1.0 + 2.0 / nmax)).clamp(1.0, 1.99)
        }
    }
}

fn sweep_order(grid: &Grid, order: SweepOrder) -> Vec<(usize, [usize; 3])> {
    let interior = (0..grid.len())
        .filter(|&i| grid.states[i] == NodeState::Interior)
        .map(|i| (i, grid.multi_index(i)));
    match order {
        SweepOrder::Lexicographic => interior.collect(),
        SweepOrder::RedBlack => {
            let (mut red, black): (Vec<_>, Vec<_>) = interior.partition(|(_, ix)| (ix[0] + ix[1] + ix[2]) % 2 == 0);
            red.extend(black);
            red
        }
    }
}

#[derive(Default)]
struct Scratch {
    vals: Vec<f64>,
    dists: Vec<f64>,
}

enum Relaxer<'g> {
    Energy1(EnergyStencil<'g, 1>),
    Energy2(EnergyStencil<'g, 2>),
    Energy3(EnergyStencil<'g, 3>),
    MinMax(MinMaxStencil<'g>),
    Fd(FdStencil<'g>),
}

impl<'g> Relaxer<'g> {
    fn new(grid: &'g Grid, exps: &Exponents, opts: &SolveOptions) -> Result<Self> {
        let tol = (1e-3 * opts.stop_tol).max(1e-15);
        Ok(match (opts.scheme, grid.dims()) {
            (Scheme::EnergyGs, 1) => Relaxer::Energy1(EnergyStencil::new(grid, exps.p, tol)),
            (Scheme::EnergyGs, 2) => Relaxer::Energy2(EnergyStencil::new(grid, exps.p, tol)),
            (Scheme::EnergyGs, _) => Relaxer::Energy3(EnergyStencil::new(grid, exps.p, tol)),
            (Scheme::MinMaxAvg, _) => Relaxer::MinMax(MinMaxStencil::new(grid)),
            (Scheme::NormalizedFd, _) => Relaxer::Fd(FdStencil::new(grid, exps, opts.eps_reg)?),
        })
    }

    fn update(&mut self, i: usize, ix: [usize; 3], u: &[f64], omega: f64, s: &mut Scratch) -> f64 {
        match self {
            Relaxer::Energy1(e) => e.update(i, ix, u, omega),
            Relaxer::Energy2(e) => e.update(i, ix, u, omega),
            Relaxer::Energy3(e) => e.update(i, ix, u, omega),
            Relaxer::MinMax(mm) => mm.update(i, ix, u, omega, s),
            Relaxer::Fd(fd) => fd.update(i, ix, u, omega),
        }
    }

    /// `(∂E/∂u_i, ∂²E/∂u_i²)` for the energy schemes.
    fn energy_gradient(&mut self, i: usize, ix: [usize; 3], u: &[f64]) -> Option<(f64, f64)> {
        match self {
            Relaxer::Energy1(e) => Some(e.gradient(i, ix, u)),
            Relaxer::Energy2(e) => Some(e.gradient(i, ix, u)),
            Relaxer::Energy3(e) => Some(e.gradient(i, ix, u)),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------- energy

/// One corner contribution `w |a + b t|^p / p`.
#[derive(Debug, Clone, Copy)]
struct Term<const D: usize> {
    w: f64,
    a: [f64; D],
    b: [f64; D],
}

/// Per axis and cell: the integral of the weight factor, and `1/h`.
fn cell_factors(grid: &Grid) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let exps = grid.frame.weight_exponents();
    let mut cell_w = Vec::new();
    let mut inv_h = Vec::new();
    for (a, ax) in grid.axes.iter().enumerate() {
        let c = &ax.coords;
        let e = exps.map(|(ek, em)| if a == 0 { ek } else { em });
        cell_w.push(
            c.windows(2)
                .map(|w| match e {
                    Some(e) => (w[1].powi(e + 1) - w[0].powi(e + 1)) / (e + 1) as f64,
                    None => w[1] - w[0],
                })
                .collect(),
        );
        inv_h.push(c.windows(2).map(|w| 1.0 / (w[1] - w[0])).collect());
    }
    (cell_w, inv_h)
}

struct EnergyStencil<'g, const D: usize> {
    grid: &'g Grid,
    p: f64,
    cell_w: Vec<Vec<f64>>,
    inv_h: Vec<Vec<f64>>,
    /// Index offset of each cell corner from the cell's lower corner.
    corner: [usize; 8],
    newton_tol: f64,
    terms: Vec<Term<D>>,
}

impl<'g, const D: usize> EnergyStencil<'g, D> {
    fn new(grid: &'g Grid, p: f64, newton_tol: f64) -> Self {
        let (cell_w, inv_h) = cell_factors(grid);
        let mut corner = [0usize; 8];
        for (bits, c) in corner.iter_mut().enumerate().take(1 << D) {
            *c = (0..D).filter(|a| bits >> a & 1 == 1).map(|a| grid.strides()[a]).sum();
        }
        Self {
            grid,
            p,
            cell_w,
            inv_h,
            corner,
            newton_tol,
            terms: Vec::with_capacity((1 << D) * (D + 1)),
        }
    }

    /// Collects the corner terms that involve node `i` and the range of the
    /// neighbour values they read.
    fn gather(&mut self, i: usize, ix: [usize; 3], u: &[f64]) -> (f64, f64) {
        let g = self.grid;
        let scale = 1.0 / (1usize << D) as f64;
        self.terms.clear();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        'cells: for e in 0..(1usize << D) {
            let mut lower = [0usize; D];
            let mut w = scale;
            for a in 0..D {
                let bit = e >> a & 1;
                if ix[a] < bit {
                    continue 'cells;
                }
                lower[a] = ix[a] - bit;
                w *= self.cell_w[a][lower[a]];
            }
            let base = i - self.corner[e];
            let mut ih = [0.0; D];
            for a in 0..D {
                ih[a] = self.inv_h[a][lower[a]];
            }
            // corner e is node i itself; its D cell neighbours also see i
            for q in std::iter::once(e).chain((0..D).map(|a| e ^ (1 << a))) {
                let qi = base + self.corner[q];
                let mut t = Term { w, a: [0.0; D], b: [0.0; D] };
                for a in 0..D {
                    let oi = base + self.corner[q ^ (1 << a)];
                    if oi == i {
                        t.b[a] = ih[a];
                    } else {
                        let v = u[oi];
                        t.a[a] += v * ih[a];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    if qi == i {
                        t.b[a] = -ih[a];
                    } else {
                        let v = u[qi];
                        t.a[a] -= v * ih[a];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                self.terms.push(t);
            }
        }
        debug_assert!(g.states[i] == NodeState::Interior);
        (lo, hi)
    }

    fn update(&mut self, i: usize, ix: [usize; 3], u: &[f64], omega: f64) -> f64 {
        let (lo, hi) = self.gather(i, ix, u);
        let old = u[i];
        let (star, e_old) = minimize_local(&self.terms, self.p, lo, hi, old, self.newton_tol);
        if omega == 1.0 || star == old {
            return star;
        }
        let over = (old + omega * (star - old)).clamp(lo, hi);
        // a quadratic energy always decreases for 0 < ω < 2
        if self.p == 2.0 {
            return over;
        }
        let e_old = match e_old {
            Some(e) => e,
            None => eval_local(&self.terms, self.p, old).0,
        };
        if eval_local(&self.terms, self.p, over).0 <= e_old {
            over
        } else {
            star
        }
    }

    fn gradient(&mut self, i: usize, ix: [usize; 3], u: &[f64]) -> (f64, f64) {
        self.gather(i, ix, u);
        let (_, d1, d2) = eval_local(&self.terms, self.p, u[i]);
        (d1, d2)
    }
}

/// `(|g|²)^{(p-2)/2}` with cheap paths for common p.
#[inline]
fn pow_grad(g2: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if p == 3.0 {
        g2.sqrt()
    } else if p == 4.0 {
        g2
    } else if g2 == 0.0 {
        if p > 2.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        let half = 0.5 * (p - 2.0);
        if half.fract() == 0.0 && half <= 64.0 {
            g2.powi(half as i32)
        } else {
            g2.powf(half)
        }
    }
}

/// Local energy with its first and second derivative at `t`.
#[inline]
fn eval_local<const D: usize>(terms: &[Term<D>], p: f64, t: f64) -> (f64, f64, f64) {
    let (mut e, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for term in terms {
        let (mut g2, mut gb, mut b2) = (0.0, 0.0, 0.0);
        for a in 0..D {
            let g = term.a[a] + term.b[a] * t;
            g2 += g * g;
            gb += g * term.b[a];
            b2 += term.b[a] * term.b[a];
        }
        let k = pow_grad(g2, p);
        if !k.is_finite() {
            // p < 2 at a vanishing gradient: the derivative jumps; bisection decides
            continue;
        }
        e += term.w * k * g2 / p;
        d1 += term.w * k * gb;
        let curv = if g2 > 0.0 { k * (b2 + (p - 2.0) * gb * gb / g2) } else { k * b2 };
        d2 += term.w * curv;
    }
    (e, d1, d2)
}

/// Safeguarded Newton on `[lo, hi]`, which contains the minimizer. Also
/// returns the energy at `start` when it was evaluated there.
fn minimize_local<const D: usize>(
    terms: &[Term<D>],
    p: f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
    tol: f64,
) -> (f64, Option<f64>) {
    if !(hi > lo) {
        return (lo, None);
    }
    let mut t = start.clamp(lo, hi);
    let mut e_start = None;
    for it in 0..100 {
        let (e, d1, d2) = eval_local(terms, p, t);
        if it == 0 && t == start {
            e_start = Some(e);
        }
        if d1 == 0.0 {
            return (t, e_start);
        }
        if d1 > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let mut next = if d2 > 0.0 { t - d1 / d2 } else { f64::NAN };
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= tol || hi - lo <= tol {
            return (next, e_start);
        }
        t = next;
    }
    (t, e_start)
}

/// Total discrete p-energy over cells touching an interior node.
pub fn discrete_energy(u: &GridFunction, p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 1.0) {
        return precondition("discrete energy needs finite p > 1");
    }
    let g = &*u.grid;
    let (cell_w, inv_h) = cell_factors(g);
    let d = g.dims();
    let mut total = 0.0;
    let mut cell_shape = [1usize; 3];
    for a in 0..d {
        cell_shape[a] = g.shape()[a] - 1;
    }
    let ncells: usize = cell_shape[..d].iter().product();
    for c in 0..ncells {
        let mut lower = [0usize; 3];
        let mut r = c;
        for a in (0..d).rev() {
            lower[a] = r % cell_shape[a];
            r /= cell_shape[a];
        }
        let base = g.index(&lower[..d]);
        let node = |bits: usize| -> usize {
            let mut k = base;
            for (a, s) in g.strides().iter().enumerate() {
                if bits >> a & 1 == 1 {
                    k += s;
                }
            }
            k
        };
        if !(0..(1usize << d)).any(|b| g.states[node(b)] == NodeState::Interior) {
            continue;
        }
        let mut w = 1.0 / (1usize << d) as f64;
        for a in 0..d {
            w *= cell_w[a][lower[a]];
        }
        for q in 0..(1usize << d) {
            let mut g2 = 0.0;
            for a in 0..d {
                let diff = (u.values[node(q ^ (1 << a))] - u.values[node(q)]) * inv_h[a][lower[a]];
                g2 += diff * diff;
            }
            total += w * pow_grad(g2, p) * g2 / p;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------- min-max

/// The unique `u` with `max_j (u_j − u)/d_j = max_k (u − u_k)/d_k`.
pub fn minmax_update(vals: &[f64], dists: &[f64]) -> f64 {
    let mut slope = 0.0f64;
    for (j, (&vj, &dj)) in vals.iter().zip(dists).enumerate() {
        for (&vk, &dk) in vals[j + 1..].iter().zip(&dists[j + 1..]) {
            slope = slope.max((vj - vk).abs() / (dj + dk));
        }
    }
    vals.iter()
        .zip(dists)
        .map(|(v, d)| v - slope * d)
        .fold(f64::NEG_INFINITY, f64::max)
}

struct MinMaxStencil<'g> {
    grid: &'g Grid,
    offsets: Vec<[isize; 3]>,
    /// With uniform axes: distance classes as (distance, offset indices).
    groups: Option<Vec<(f64, Vec<usize>)>>,
}

impl<'g> MinMaxStencil<'g> {
    fn new(grid: &'g Grid) -> Self {
        let d = grid.dims();
        let mut offsets = Vec::new();
        for_each_offset(d, |o| offsets.push(o));
        let groups = if grid.axes.iter().all(Axis::is_uniform) {
            let h: Vec<f64> = grid.axes.iter().map(|a| a.spacing(0)).collect();
            let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
            for (k, o) in offsets.iter().enumerate() {
                let dist = (0..d).map(|a| (o[a] as f64 * h[a]).powi(2)).sum::<f64>().sqrt();
                match groups.iter_mut().find(|(g, _)| (g - dist).abs() <= 1e-12 * dist) {
                    Some((_, v)) => v.push(k),
                    None => groups.push((dist, vec![k])),
                }
            }
            Some(groups)
        } else {
            None
        };
        Self {
            grid,
            offsets,
            groups,
        }
    }

    /// Values and distances of the 3^d − 1 neighbours, ghosts mirrored.
    fn neighbours(&self, ix: [usize; 3], u: &[f64], vals: &mut Vec<f64>, dists: &mut Vec<f64>) {
        let g = self.grid;
        let d = g.dims();
        vals.clear();
        dists.clear();
        for o in &self.offsets {
            let mut jx = [0usize; 3];
            let mut d2 = 0.0;
            for a in 0..d {
                let c = &g.axes[a].coords;
                let (j, step) = match o[a] {
                    0 => (ix[a], 0.0),
                    1 => (ix[a] + 1, c[ix[a] + 1] - c[ix[a]]),
                    _ if ix[a] == 0 => (1, c[1]),
                    _ => (ix[a] - 1, c[ix[a]] - c[ix[a] - 1]),
                };
                jx[a] = j;
                d2 += step * step;
            }
            vals.push(u[g.index(&jx[..d])]);
            dists.push(d2.sqrt());
        }
    }

    fn update(&self, _i: usize, ix: [usize; 3], u: &[f64], omega: f64, s: &mut Scratch) -> f64 {
        self.neighbours(ix, u, &mut s.vals, &mut s.dists);
        let (lo, hi) = s
            .vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let star = match &self.groups {
            Some(groups) => {
                let ext: Vec<(f64, f64, f64)> = groups
                    .iter()
                    .map(|(dist, idx)| {
                        let (mn, mx) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &k| {
                            (l.min(s.vals[k]), h.max(s.vals[k]))
                        });
                        (*dist, mn, mx)
                    })
                    .collect();
                let mut slope = 0.0f64;
                for &(dj, _, mxj) in &ext {
                    for &(dk, mnk, _) in &ext {
                        slope = slope.max((mxj - mnk) / (dj + dk));
                    }
                }
                ext.iter().map(|&(dj, _, mx)| mx - slope * dj).fold(f64::NEG_INFINITY, f64::max)
            }
            None => minmax_update(&s.vals, &s.dists),
        };
        let old = u[_i];
        (old + omega * (star - old)).clamp(lo, hi)
    }
}

// ---------------------------------------------------------------- normalized FD

struct FdStencil<'g> {
    grid: &'g Grid,
    p: f64,
    k: f64,
    m: f64,
    eps: f64,
    h: [f64; 2],
}

impl<'g> FdStencil<'g> {
    fn new(grid: &'g Grid, exps: &Exponents, eps: f64) -> Result<Self> {
        if !grid.frame.is_reduced() || !grid.axes.iter().all(Axis::is_uniform) {
            return precondition("NormalizedFd runs on uniform reduced grids only");
        }
        let mut h = [1.0; 2];
        for (a, ax) in grid.axes.iter().enumerate() {
            h[a] = ax.spacing(0);
        }
        Ok(Self {
            grid,
            p: exps.p,
            k: exps.codim() as f64,
            m: exps.m as f64,
            eps,
            h,
        })
    }

    /// Returns `(A, B)` with `N(u_i) = A − B u_i`, and the gradient norm².
    fn affine(&self, ix: [usize; 3], u: &[f64]) -> (f64, f64, f64) {
        let g = self.grid;
        let d = g.dims();
        let at = |di: isize, dj: isize| -> f64 {
            let r = ix[0] as isize + di;
            let mut jx = [r as usize, 0, 0];
            if d == 2 {
                jx[1] = (ix[1] as isize + dj).unsigned_abs();
            }
            u[g.index(&jx[..d])]
        };
        let (hr, hs) = (self.h[0], self.h[1]);
        let rho = g.axes[0].coords[ix[0]];
        let (e, w) = (at(1, 0), at(-1, 0));
        let gr = (e - w) / (2.0 * hr);
        let sr = (e + w) / (hr * hr);
        let mut gs = 0.0;
        let mut ss = 0.0;
        let mut cross = 0.0;
        let mut drift = (self.k - 1.0) * gr / rho;
        let mut cs = 1.0;
        if d == 2 {
            let sigma = g.axes[1].coords[ix[1]];
            let (nn, sv) = (at(0, 1), at(0, -1));
            gs = (nn - sv) / (2.0 * hs);
            ss = (nn + sv) / (hs * hs);
            cross = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hr * hs);
            if sigma > 0.0 {
                drift += (self.m - 1.0) * gs / sigma;
            } else {
                cs = self.m;
            }
        }
        let g2 = gr * gr + gs * gs;
        let lap_a = sr + cs * ss + drift;
        let lap_b = 2.0 / (hr * hr) + if d == 2 { 2.0 * cs / (hs * hs) } else { 0.0 };
        let inf_a = gr * gr * sr + 2.0 * gr * gs * cross + gs * gs * ss;
        let inf_b = 2.0 * gr * gr / (hr * hr) + if d == 2 { 2.0 * gs * gs / (hs * hs) } else { 0.0 };
        let q = self.p - 2.0;
        let a = (g2 + self.eps) * lap_a + q * inf_a;
        let b = (g2 + self.eps) * lap_b + q * inf_b;
        (a, b, g2)
    }

    fn update(&self, i: usize, ix: [usize; 3], u: &[f64], omega: f64) -> f64 {
        let (a, b, _) = self.affine(ix, u);
        let old = u[i];
        if !(b > 0.0) {
            return old;
        }
        let (lo, hi) = self.bracket(ix, u);
        (old + omega * (a / b - old)).clamp(lo, hi)
    }

    fn bracket(&self, ix: [usize; 3], u: &[f64]) -> (f64, f64) {
        let g = self.grid;
        let d = g.dims();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for_each_offset(d, |o| {
            let mut jx = [0usize; 3];
            for a in 0..d {
                jx[a] = (ix[a] as isize + o[a]).unsigned_abs();
            }
            let v = u[g.index(&jx[..d])];
            lo = lo.min(v);
            hi = hi.max(v);
        });
        (lo, hi)
    }

    fn residual(&self, i: usize, ix: [usize; 3], u: &[f64]) -> f64 {
        let (a, b, g2) = self.affine(ix, u);
        (a - b * u[i]).abs() / (g2 + self.eps)
    }
}

// ---------------------------------------------------------------- residuals

/// Max over interior nodes of the scheme's discrete operator:
/// * `EnergyGs`: the local Newton correction `|∂E/∂u_i| / ∂²E/∂u_i²`, which
///   is in units of `u` for every `p`;
/// * `MinMaxAvg`: `|S⁺ − S⁻| / d_min`;
/// * `NormalizedFd`: `|N_h u| / (|∇_h u|² + ε)`.
pub fn discrete_residual(u: &GridFunction, exps: &Exponents, scheme: Scheme, eps_reg: f64) -> Result<f64> {
    let g = &*u.grid;
    let mut worst = 0.0f64;
    let mut scratch = Scratch::default();
    match scheme {
        Scheme::EnergyGs => {
            let opts = SolveOptions::for_exponents(exps);
            let mut relax = Relaxer::new(g, exps, &opts)?;
            for i in 0..g.len() {
                if g.states[i] != NodeState::Interior {
                    continue;
                }
                if let Some((d1, d2)) = relax.energy_gradient(i, g.multi_index(i), &u.values) {
                    let r = if d1 == 0.0 { 0.0 } else if d2 > 0.0 { (d1 / d2).abs() } else { f64::INFINITY };
                    worst = worst.max(r);
                }
            }
        }
        Scheme::MinMaxAvg => {
            let st = MinMaxStencil::new(g);
            for i in 0..g.len() {
                if g.states[i] != NodeState::Interior {
                    continue;
                }
                st.neighbours(g.multi_index(i), &u.values, &mut scratch.vals, &mut scratch.dists);
                let ui = u.values[i];
                let (mut up, mut down, mut dmin) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY);
                for (&v, &d) in scratch.vals.iter().zip(&scratch.dists) {
                    up = up.max((v - ui) / d);
                    down = down.max((ui - v) / d);
                    dmin = dmin.min(d);
                }
                worst = worst.max((up - down).abs() / dmin);
            }
        }
        Scheme::NormalizedFd => {
            let st = FdStencil::new(g, exps, eps_reg)?;
            for i in 0..g.len() {
                if g.states[i] == NodeState::Interior {
                    worst = worst.max(st.residual(i, g.multi_index(i), &u.values));
                }
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------- audits

/// True iff `u ≤ v + 2·stop_tol` at every node.
pub fn discrete_comparison_check(u: &GridFunction, v: &GridFunction, stop_tol: f64) -> Result<bool> {
    if !(Arc::ptr_eq(&u.grid, &v.grid) || u.grid.same_lattice(&v.grid)) {
        return Err(Error::GridMismatch("comparison needs both functions on one grid".into()));
    }
    Ok(u.values.iter().zip(&v.values).all(|(a, b)| *a <= b + 2.0 * stop_tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// Sup over interior nodes of the full grid.
    pub discrepancy: f64,
    /// Where the discrepancy is attained.
    pub worst_point: BiradialPoint,
    /// Sup over interior nodes at least `2 h_full` away from the tube and
    /// the outer sphere, where the staircase representation of curved
    /// boundaries on the full grid does not enter.
    pub interior_discrepancy: f64,
    pub h_full: f64,
    pub h_reduced: f64,
    pub full: SolveReport,
    pub reduced: SolveReport,
}

/// Solves the same biradially symmetric problem on a full and a reduced
/// grid and compares them at the full grid's interior nodes.
pub fn full_vs_reduced_crosscheck(
    spec: &DomainSpec,
    exps: &Exponents,
    data: &dyn Fn(&NodeInfo) -> f64,
    h_full: f64,
    h_red: f64,
    opts: &SolveOptions,
) -> Result<CrossCheck> {
    if spec.geometry.n > 3 {
        return precondition("full grids are limited to n <= 3");
    }
    let full_spec = DomainSpec {
        reduced: false,
        ..spec.clone()
    };
    let red_spec = DomainSpec {
        reduced: true,
        ..spec.clone()
    };
    let (uf, rf) = solve_cascade(&uniform_cascade(&full_spec, h_full, 4)?, data, exps, opts)?;
    let (ur, rr) = solve_cascade(&uniform_cascade(&red_spec, h_red, 4)?, data, exps, opts)?;
    let g = &*uf.grid;
    let mut discrepancy = 0.0f64;
    let mut worst_point = BiradialPoint::default();
    let mut interior_discrepancy = 0.0f64;
    let margin = 2.0 * g.h_max();
    let outer = spec.outer_extent();
    for i in 0..g.len() {
        if g.states[i] == NodeState::Interior {
            let at = g.biradial(i);
            let d = (uf.values[i] - ur.sample(at)).abs();
            if at.rho >= spec.geometry.s + margin && at.norm() <= outer - margin {
                interior_discrepancy = interior_discrepancy.max(d);
            }
            if d > discrepancy {
                discrepancy = d;
                worst_point = at;
            }
        }
    }
    Ok(CrossCheck {
        discrepancy,
        worst_point,
        interior_discrepancy,
        h_full,
        h_reduced: h_red,
        full: rf,
        reduced: rr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_nodes, TubeGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annulus(n: usize, h: f64) -> Arc<Grid> {
        let spec = DomainSpec::ball(TubeGeometry::new(n, 0, 1.0).unwrap(), 2.0, true);
        Arc::new(classify_nodes(&spec, vec![Axis::uniform(h, 2.0).unwrap()]).unwrap())
    }

    fn annulus_data(info: &NodeInfo) -> f64 {
        if info.state == NodeState::DirichletTube {
            0.0
        } else {
            1.0
        }
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let spec = DomainSpec::ball(TubeGeometry::new(3, 1, 0.25).unwrap(), 1.0, true);
        let grid = Arc::new(classify_nodes(&spec, vec![Axis::uniform(1.0 / 32.0, 1.0).unwrap(); 2]).unwrap());
        for p in [3.0, f64::INFINITY] {
            let e = Exponents::new(p, 3, 1).unwrap();
            let (u, r) = solve_p_harmonic(grid.clone(), &|_| 0.7, &e, &SolveOptions::for_exponents(&e)).unwrap();
            assert!(r.converged && r.within_bounds);
            assert!(u.values.iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn annulus_matches_radial_profile() {
        // (ρ^α − 1)/(2^α − 1), α = (p − n)/(p − 1)
        let e = Exponents::new(4.0, 2, 0).unwrap();
        let alpha = e.alpha;
        let grid = annulus(2, 1.0 / 128.0);
        let (u, r) = solve_p_harmonic(grid.clone(), &annulus_data, &e, &SolveOptions::for_exponents(&e)).unwrap();
        assert!(r.converged && r.within_bounds, "{r:?}");
        let mut err = 0.0f64;
        for i in 0..grid.len() {
            if grid.states[i] == NodeState::Interior {
                let rho = grid.biradial(i).rho;
                let exact = (rho.powf(alpha) - 1.0) / (2f64.powf(alpha) - 1.0);
                err = err.max((u.values[i] - exact).abs());
            }
        }
        assert!(err <= 2e-2, "sup error {err}");
    }

    #[test]
    fn energy_decreases_every_sweep() {
        let e = Exponents::new(3.0, 3, 1).unwrap();
        let spec = DomainSpec::ball(TubeGeometry::new(3, 1, 0.25).unwrap(), 1.0, true).with_transition(0.25, 0.5);
        let grid = Arc::new(classify_nodes(&spec, vec![Axis::uniform(1.0 / 32.0, 1.0).unwrap(); 2]).unwrap());
        let data = |info: &NodeInfo| if info.state == NodeState::DirichletTube { 0.0 } else { 1.0 };
        let mut opts = SolveOptions::for_exponents(&e).with_omega(1.6);
        opts.track_energy = true;
        opts.max_sweeps = 60;
        let (_, r) = solve_p_harmonic(grid, &data, &e, &opts).unwrap();
        assert!(r.energy_trace.len() > 2);
        for w in r.energy_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn minmax_update_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let k = rng.gen_range(2..10);
            let vals: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dists: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..2.0)).collect();
            let base = minmax_update(&vals, &dists);
            let j = rng.gen_range(0..k);
            let mut raised = vals.clone();
            raised[j] += rng.gen_range(0.0..0.5);
            assert!(minmax_update(&raised, &dists) >= base - 1e-15);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(base >= lo - 1e-15 && base <= hi + 1e-15);
        }
        // equal distances: midrange
        assert_eq!(minmax_update(&[0.0, 1.0, 0.25], &[1.0, 1.0, 1.0]), 0.5);
    }

    #[test]
    fn comparison_check_examples() {
        let e = Exponents::new(3.0, 2, 0).unwrap();
        let grid = annulus(2, 1.0 / 32.0);
        let opts = SolveOptions::for_exponents(&e);
        let (u, _) = solve_p_harmonic(grid.clone(), &annulus_data, &e, &opts).unwrap();
        let (v, _) = solve_p_harmonic(grid.clone(), &|i| annulus_data(i) + 0.1, &e, &opts).unwrap();
        assert!(discrete_comparison_check(&u, &v, opts.stop_tol).unwrap());
        assert!(discrete_comparison_check(&u, &u, opts.stop_tol).unwrap());
        let mut bad = v.clone();
        let k = (0..grid.len()).find(|&i| grid.states[i] == NodeState::Interior).unwrap();
        bad.values[k] = u.values[k] - 0.05;
        assert!(!discrete_comparison_check(&u, &bad, opts.stop_tol).unwrap());
        let other = GridFunction::constant(annulus(2, 1.0 / 64.0), 0.0);
        assert!(discrete_comparison_check(&u, &other, 1e-9).is_err());
    }

    #[test]
    fn schemes_reject_wrong_p() {
        let grid = annulus(2, 1.0 / 32.0);
        let e = Exponents::new(3.0, 2, 0).unwrap();
        let opts = SolveOptions::for_exponents(&e).with_scheme(Scheme::MinMaxAvg);
        assert!(solve_p_harmonic(grid.clone(), &annulus_data, &e, &opts).is_err());
        let e3 = Exponents::new(4.0, 3, 0).unwrap();
        assert!(matches!(
            solve_p_harmonic(grid, &annulus_data, &e3, &SolveOptions::for_exponents(&e3)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let e = Exponents::new(3.0, 2, 0).unwrap();
        let mut opts = SolveOptions::for_exponents(&e);
        opts.max_sweeps = 3;
        let (_, r) = solve_p_harmonic(annulus(2, 1.0 / 64.0), &annulus_data, &e, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.sweeps, 3);
        assert!(r.within_bounds);
    }

    #[test]
    fn normalized_fd_agrees_with_energy_on_annulus() {
        let e = Exponents::new(3.0, 2, 0).unwrap();
        let grid = annulus(2, 1.0 / 64.0);
        let opts = SolveOptions::for_exponents(&e);
        let (u, _) = solve_p_harmonic(grid.clone(), &annulus_data, &e, &opts).unwrap();
        let fd = opts.clone().with_scheme(Scheme::NormalizedFd);
        let (v, r) = solve_p_harmonic(grid.clone(), &annulus_data, &e, &fd).unwrap();
        assert!(r.converged, "{r:?}");
        let diff = u.values.iter().zip(&v.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 5e-3, "{diff}");
    }

    #[test]
    fn sampling_a_solution_at_the_boundary() {
        let e = Exponents::new(f64::INFINITY, 2, 0).unwrap();
        let grid = annulus(2, 1.0 / 64.0);
        let (u, r) = solve_p_harmonic(grid, &annulus_data, &e, &SolveOptions::for_exponents(&e)).unwrap();
        assert!(r.converged);
        // ∞-harmonic radial functions are affine in ρ
        let v = u.sample(BiradialPoint { rho: 1.5, sigma: 0.0 });
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }
}
