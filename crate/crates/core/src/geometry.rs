//! Tubes around hyperplanes, probe points and classified tensor-product grids.
//!
//! Everything is expressed in the canonical frame: the anchor `w` is the
//! origin and `Λ = {x : x' = 0}`. Grids are either *reduced* (axes `ρ` and,
//! when `m ≥ 1`, `σ`) or *full* Cartesian grids on the positive orthant of
//! Rⁿ, `n ≤ 3`, with mirror symmetry across every coordinate plane.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::biradial::BiradialPoint;
use crate::error::{precondition, Error, Result};

/// Minimum number of cells across the gap between tube and outer boundary.
pub const MIN_GAP_CELLS: usize = 16;

const CLASSIFY_EPS: f64 = 1e-12;

/// An `m`-dimensional hyperplane in Rⁿ with a closed tube of radius `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeGeometry {
    pub n: usize,
    pub m: usize,
    pub s: f64,
}

/// `A_r(w)` in full and reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    pub full: Vec<f64>,
    pub reduced: BiradialPoint,
}

impl TubeGeometry {
    pub fn new(n: usize, m: usize, s: f64) -> Result<Self> {
        if n < 2 || m + 1 > n {
            return Err(Error::InvalidDimensions { n, m });
        }
        if !(s >= 0.0 && s.is_finite()) {
            return precondition(format!("tube radius must be finite and >= 0, got {s}"));
        }
        Ok(Self { n, m, s })
    }

    pub fn codim(&self) -> usize {
        self.n - self.m
    }

    /// `d(x, Λ)` for a point of Rⁿ.
    pub fn dist_to_plane(&self, x: &[f64]) -> f64 {
        BiradialPoint::from_full(x, self.m).rho
    }

    /// The point at distance `r` from both `w` and `Λ`, `(r, 0, …, 0)`.
    pub fn probe_point(&self, r: f64) -> Result<ProbePoint> {
        if !(r > 0.0 && r.is_finite()) {
            return precondition(format!("probe radius must be positive, got {r}"));
        }
        let mut full = vec![0.0; self.n];
        full[0] = r;
        Ok(ProbePoint {
            full,
            reduced: BiradialPoint { rho: r, sigma: 0.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outer {
    Ball { radius: f64 },
    /// Half-widths per grid axis.
    Box { halfwidths: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub geometry: TubeGeometry,
    pub outer: Outer,
    pub reduced: bool,
    /// Band `(lo, hi)` of `d(·, Λ)` on the outer boundary where data ramps
    /// from 0 to 1.
    pub transition: Option<(f64, f64)>,
}

impl DomainSpec {
    pub fn ball(geometry: TubeGeometry, radius: f64, reduced: bool) -> Self {
        Self {
            geometry,
            outer: Outer::Ball { radius },
            reduced,
            transition: None,
        }
    }

    pub fn with_transition(mut self, lo: f64, hi: f64) -> Self {
        self.transition = Some((lo, hi));
        self
    }

    pub fn frame(&self) -> Frame {
        let (n, m) = (self.geometry.n, self.geometry.m);
        if self.reduced {
            Frame::Reduced { n, m }
        } else {
            Frame::Full { n, m }
        }
    }

    /// Extent of the outer boundary along the ρ direction.
    pub fn outer_extent(&self) -> f64 {
        match &self.outer {
            Outer::Ball { radius } => *radius,
            Outer::Box { halfwidths } => halfwidths[0],
        }
    }

    fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        TubeGeometry::new(g.n, g.m, g.s)?;
        if !self.reduced && g.n > 3 {
            return precondition(format!("full grids are limited to n <= 3, got n = {}", g.n));
        }
        let dims = self.frame().dims();
        match &self.outer {
            Outer::Ball { radius } => {
                if !(*radius > g.s) {
                    return precondition(format!(
                        "outer radius {radius} must exceed the tube radius {}",
                        g.s
                    ));
                }
            }
            Outer::Box { halfwidths } => {
                if halfwidths.len() != dims || halfwidths.iter().any(|h| !(*h > g.s)) {
                    return precondition("box half-widths must match the grid axes and exceed s");
                }
            }
        }
        if let Some((lo, hi)) = self.transition {
            if !(lo >= 0.0 && hi > lo) {
                return precondition(format!("invalid transition band ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// Coordinate system of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frame {
    /// Axes `(ρ)` for `m = 0`, `(ρ, σ)` otherwise.
    Reduced { n: usize, m: usize },
    /// Axes `x_1, …, x_n`.
    Full { n: usize, m: usize },
}

impl Frame {
    pub fn dims(&self) -> usize {
        match *self {
            Frame::Reduced { m, .. } => {
                if m == 0 {
                    1
                } else {
                    2
                }
            }
            Frame::Full { n, .. } => n,
        }
    }

    pub fn nm(&self) -> (usize, usize) {
        match *self {
            Frame::Reduced { n, m } | Frame::Full { n, m } => (n, m),
        }
    }

    pub fn is_reduced(&self) -> bool {
        matches!(self, Frame::Reduced { .. })
    }

    pub fn to_biradial(&self, x: &[f64]) -> BiradialPoint {
        match *self {
            Frame::Reduced { m, .. } => BiradialPoint {
                rho: x[0].abs(),
                sigma: if m == 0 { 0.0 } else { x[1].abs() },
            },
            Frame::Full { m, .. } => BiradialPoint::from_full(x, m),
        }
    }

    /// Density of the measure `dx` in grid coordinates, up to a constant:
    /// `ρ^{k-1} σ^{m-1}` for reduced frames and 1 for full ones.
    pub fn weight_exponents(&self) -> Option<(i32, i32)> {
        match *self {
            Frame::Reduced { n, m } => Some(((n - m) as i32 - 1, m as i32 - 1)),
            Frame::Full { .. } => None,
        }
    }
}

/// Node coordinates along one grid axis, starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coords: Vec<f64>,
    /// Mirror symmetry across the coordinate 0.
    pub mirror: bool,
}

impl Axis {
    /// Uniform spacing `h`, covering `[0, extent]` plus two ghost layers.
    pub fn uniform(h: f64, extent: f64) -> Result<Self> {
        if !(h > 0.0 && extent > 0.0) {
            return precondition(format!("invalid axis h = {h}, extent = {extent}"));
        }
        let count = (extent / h - CLASSIFY_EPS).ceil() as usize + 3;
        Ok(Self {
            coords: (0..count).map(|i| i as f64 * h).collect(),
            mirror: true,
        })
    }

    /// Uniform spacing `h_fine` on `[0, fine_extent]`, then spacings growing
    /// geometrically by `growth` up to `h_max`, covering `[0, extent]` plus
    /// two ghost layers.
    pub fn graded(h_fine: f64, fine_extent: f64, growth: f64, h_max: f64, extent: f64) -> Result<Self> {
        if !(h_fine > 0.0 && fine_extent >= 0.0 && growth >= 1.0 && h_max >= h_fine && extent > 0.0) {
            return precondition("invalid graded axis parameters");
        }
        let mut coords = vec![0.0];
        let fine_cells = (fine_extent / h_fine - CLASSIFY_EPS).ceil() as usize;
        for i in 1..=fine_cells {
            coords.push(i as f64 * h_fine);
        }
        let mut h = h_fine;
        let mut ghosts = 0;
        while ghosts < 2 {
            h = (h * growth).min(h_max);
            let next = coords.last().unwrap() + h;
            coords.push(next);
            if next > extent * (1.0 + CLASSIFY_EPS) {
                ghosts += 1;
            }
        }
        Ok(Self {
            coords,
            mirror: true,
        })
    }

    /// Spacing `h_fine` at `center`, growing geometrically by `growth` up to
    /// `h_max` on both sides; the node nearest 0 on the left is snapped to 0.
    pub fn clustered(center: f64, h_fine: f64, growth: f64, h_max: f64, extent: f64) -> Result<Self> {
        if !(center >= 0.0 && center < extent && h_fine > 0.0 && growth >= 1.0 && h_max >= h_fine) {
            return precondition("invalid clustered axis parameters");
        }
        let mut left = Vec::new();
        let (mut x, mut h) = (center, h_fine);
        while x - h > 0.5 * h {
            x -= h;
            left.push(x);
            h = (h * growth).min(h_max);
        }
        let mut coords = vec![0.0];
        if center > 0.0 {
            coords.extend(left.iter().rev());
            coords.push(center);
        }
        let (mut x, mut h, mut ghosts) = (center, h_fine, 0);
        while ghosts < 2 {
            x += h;
            coords.push(x);
            h = (h * growth).min(h_max);
            if x > extent * (1.0 + CLASSIFY_EPS) {
                ghosts += 1;
            }
        }
        Ok(Self { coords, mirror: true })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn min_spacing(&self) -> f64 {
        self.coords
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.coords.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Spacing between node `i` and node `i + 1`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.coords[i + 1] - self.coords[i]
    }

    /// Index `i` with `coords[i] <= x < coords[i + 1]`, clamped to the last cell.
    pub fn locate(&self, x: f64) -> usize {
        let n = self.coords.len();
        match self.coords.partition_point(|&c| c <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    pub fn is_uniform(&self) -> bool {
        let (lo, hi) = (self.min_spacing(), self.max_spacing());
        hi - lo <= 1e-9 * hi
    }
}

/// How grid axes are laid out; the same recipe serves every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    Uniform { h: f64 },
    /// Spacing `h_fine` on `[0, fine_extent]`, then geometric growth up to `h_max`.
    Graded {
        h_fine: f64,
        fine_extent: f64,
        growth: f64,
        h_max: f64,
    },
    /// Spacing `h_fine` at `center`, geometric growth up to `h_max` both ways.
    Clustered {
        center: f64,
        h_fine: f64,
        growth: f64,
        h_max: f64,
    },
}

impl Resolution {
    /// Finest spacing.
    pub fn h(&self) -> f64 {
        match *self {
            Resolution::Uniform { h } => h,
            Resolution::Graded { h_fine, .. } | Resolution::Clustered { h_fine, .. } => h_fine,
        }
    }

    /// The same layout with every spacing multiplied by `factor`.
    pub fn coarsened(&self, factor: f64) -> Self {
        match *self {
            Resolution::Uniform { h } => Resolution::Uniform { h: h * factor },
            Resolution::Graded {
                h_fine,
                fine_extent,
                growth,
                h_max,
            } => Resolution::Graded {
                h_fine: h_fine * factor,
                fine_extent,
                growth,
                h_max: h_max * factor,
            },
            Resolution::Clustered {
                center,
                h_fine,
                growth,
                h_max,
            } => Resolution::Clustered {
                center,
                h_fine: h_fine * factor,
                growth,
                h_max: h_max * factor,
            },
        }
    }

    pub fn axis(&self, extent: f64) -> Result<Axis> {
        match *self {
            Resolution::Uniform { h } => Axis::uniform(h, extent),
            Resolution::Graded {
                h_fine,
                fine_extent,
                growth,
                h_max,
            } => Axis::graded(h_fine, fine_extent, growth, h_max, extent),
            Resolution::Clustered {
                center,
                h_fine,
                growth,
                h_max,
            } => Axis::clustered(center, h_fine, growth, h_max, extent),
        }
    }
}

/// Grids for a coarse-to-fine cascade ending at `res`, halving spacings
/// between levels; coarse levels that under-resolve the gap are dropped.
pub fn build_levels(spec: &DomainSpec, res: &Resolution, levels: usize) -> Result<Vec<Arc<Grid>>> {
    build_levels_per_axis(spec, &vec![*res; spec.frame().dims()], levels)
}

/// As [`build_levels`] with one layout per grid axis.
pub fn build_levels_per_axis(spec: &DomainSpec, res: &[Resolution], levels: usize) -> Result<Vec<Arc<Grid>>> {
    let dims = spec.frame().dims();
    if res.len() != dims {
        return precondition(format!("{} axis layouts given for a {dims}-axis grid", res.len()));
    }
    let mut out = Vec::new();
    let mut factor = 1.0;
    for _ in 0..levels.max(1) {
        let axes = (0..dims)
            .map(|a| {
                let r = res[a].coarsened(factor);
                match &spec.outer {
                    Outer::Box { halfwidths } => r.axis(halfwidths[a]),
                    Outer::Ball { radius } => r.axis(*radius),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        match classify_nodes(spec, axes) {
            Ok(g) => out.push(Arc::new(g)),
            Err(Error::UnderResolved(_)) if !out.is_empty() => break,
            Err(e) => return Err(e),
        }
        factor *= 2.0;
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Interior,
    DirichletSphere,
    DirichletTube,
    TransitionArc,
    Exterior,
}

impl NodeState {
    pub fn is_dirichlet(self) -> bool {
        matches!(
            self,
            NodeState::DirichletSphere | NodeState::DirichletTube | NodeState::TransitionArc
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Interior => "interior",
            NodeState::DirichletSphere => "dirichlet_sphere",
            NodeState::DirichletTube => "dirichlet_tube",
            NodeState::TransitionArc => "transition_arc",
            NodeState::Exterior => "exterior",
        }
    }
}

/// What boundary data sees at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeInfo {
    pub state: NodeState,
    pub point: BiradialPoint,
    /// Projection of the node onto the outer boundary, for outer-data nodes.
    pub projected: BiradialPoint,
}

/// A classified tensor-product grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: DomainSpec,
    pub frame: Frame,
    pub axes: Vec<Axis>,
    shape: [usize; 3],
    strides: [usize; 3],
    pub states: Vec<NodeState>,
}

impl Grid {
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dims()]
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.dims()]
    }

    pub fn index(&self, ix: &[usize]) -> usize {
        ix.iter().zip(self.strides.iter()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut i: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dims()).rev() {
            out[a] = i % self.shape[a];
            i /= self.shape[a];
        }
        out
    }

    pub fn coords_of(&self, ix: &[usize]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dims() {
            x[a] = self.axes[a].coords[ix[a]];
        }
        x
    }

    pub fn coords(&self, i: usize) -> [f64; 3] {
        self.coords_of(&self.multi_index(i))
    }

    pub fn biradial(&self, i: usize) -> BiradialPoint {
        let x = self.coords(i);
        self.frame.to_biradial(&x[..self.dims()])
    }

    /// Smallest spacing over all axes.
    pub fn h_min(&self) -> f64 {
        self.axes.iter().map(Axis::min_spacing).fold(f64::INFINITY, f64::min)
    }

    /// Largest spacing over all axes.
    pub fn h_max(&self) -> f64 {
        self.axes.iter().map(Axis::max_spacing).fold(0.0, f64::max)
    }

    pub fn count(&self, state: NodeState) -> usize {
        self.states.iter().filter(|&&s| s == state).count()
    }

    /// Node info handed to boundary-data callbacks.
    pub fn node_info(&self, i: usize) -> NodeInfo {
        let point = self.biradial(i);
        let projected = match &self.spec.outer {
            Outer::Ball { radius } => {
                let r = point.norm();
                if r > 0.0 {
                    BiradialPoint {
                        rho: point.rho * radius / r,
                        sigma: point.sigma * radius / r,
                    }
                } else {
                    point
                }
            }
            Outer::Box { halfwidths } => {
                let x = self.coords(i);
                let mut y = [0.0; 3];
                for a in 0..self.dims() {
                    y[a] = x[a].min(halfwidths[a]);
                }
                self.frame.to_biradial(&y[..self.dims()])
            }
        };
        NodeInfo {
            state: self.states[i],
            point,
            projected,
        }
    }

    /// Reduced and full grids built from the same spec can be compared node
    /// by node only when their axes coincide.
    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.frame == other.frame && self.axes == other.axes && self.states == other.states
    }

    pub fn is_outside_outer(&self, x: &[f64]) -> bool {
        match &self.spec.outer {
            Outer::Ball { radius } => {
                let r2: f64 = x.iter().map(|c| c * c).sum();
                r2.sqrt() >= radius * (1.0 - CLASSIFY_EPS)
            }
            Outer::Box { halfwidths } => x
                .iter()
                .zip(halfwidths)
                .any(|(c, h)| c.abs() >= h * (1.0 - CLASSIFY_EPS)),
        }
    }
}

/// Builds a grid from a domain spec and its axes, classifying every node.
///
/// A node is `DirichletTube` inside the closed tube, outer-boundary data
/// (`DirichletSphere`, or `TransitionArc` when its projection falls in the
/// transition band) on or outside the outer boundary, and `Interior`
/// otherwise. Outer nodes without an interior neighbour become `Exterior`.
pub fn classify_nodes(spec: &DomainSpec, axes: Vec<Axis>) -> Result<Grid> {
    spec.validate()?;
    let frame = spec.frame();
    if axes.len() != frame.dims() {
        return precondition(format!(
            "frame needs {} axes, got {}",
            frame.dims(),
            axes.len()
        ));
    }
    let s = spec.geometry.s;
    let extent = spec.outer_extent();
    let gap_cells = axes[0]
        .coords
        .iter()
        .filter(|&&c| c > s * (1.0 + CLASSIFY_EPS) && c < extent * (1.0 - CLASSIFY_EPS))
        .count()
        + 1;
    if gap_cells < MIN_GAP_CELLS {
        return Err(Error::UnderResolved(format!(
            "{gap_cells} cells between tube (s = {s}) and outer boundary ({extent}); need {MIN_GAP_CELLS}"
        )));
    }
    let dims = axes.len();
    let mut shape = [1; 3];
    for (a, ax) in axes.iter().enumerate() {
        if ax.len() < 3 {
            return precondition("every axis needs at least 3 nodes");
        }
        shape[a] = ax.len();
    }
    let mut strides = [0; 3];
    let mut st = 1;
    for a in (0..dims).rev() {
        strides[a] = st;
        st *= shape[a];
    }
    let total = st;
    let mut grid = Grid {
        spec: spec.clone(),
        frame,
        axes,
        shape,
        strides,
        states: vec![NodeState::Interior; total],
    };

    for i in 0..total {
        let x = grid.coords(i);
        let bp = frame.to_biradial(&x[..dims]);
        let in_tube = if s > 0.0 {
            bp.rho <= s * (1.0 + CLASSIFY_EPS)
        } else {
            bp.rho == 0.0
        };
        grid.states[i] = if in_tube {
            NodeState::DirichletTube
        } else if grid.is_outside_outer(&x[..dims]) {
            NodeState::DirichletSphere
        } else {
            NodeState::Interior
        };
    }
    // interior nodes on the last layer of an axis would lack neighbours
    for i in 0..total {
        if grid.states[i] == NodeState::Interior {
            let ix = grid.multi_index(i);
            if (0..dims).any(|a| ix[a] + 1 >= shape[a] || (ix[a] == 0 && !grid.axes[a].mirror)) {
                return precondition("axes do not extend past the outer boundary");
            }
        }
    }
    let transition = spec.transition.filter(|_| spec.geometry.m >= 1 && s > 0.0);
    let mut states = grid.states.clone();
    for i in 0..total {
        if grid.states[i] != NodeState::DirichletSphere {
            continue;
        }
        if !has_interior_neighbour(&grid, i) {
            states[i] = NodeState::Exterior;
            continue;
        }
        if let Some((lo, hi)) = transition {
            let rho = grid.node_info(i).projected.rho;
            if rho > lo && rho < hi {
                states[i] = NodeState::TransitionArc;
            }
        }
    }
    grid.states = states;
    Ok(grid)
}

fn has_interior_neighbour(grid: &Grid, i: usize) -> bool {
    let dims = grid.dims();
    let ix = grid.multi_index(i);
    let mut found = false;
    for_each_offset(dims, |off| {
        if found {
            return;
        }
        let mut jx = [0usize; 3];
        for a in 0..dims {
            let c = ix[a] as isize + off[a];
            if c < 0 || c as usize >= grid.shape[a] {
                return;
            }
            jx[a] = c as usize;
        }
        if grid.states[grid.index(&jx[..dims])] == NodeState::Interior {
            found = true;
        }
    });
    found
}

/// Calls `f` for every non-zero offset in `{-1, 0, 1}^dims`, in
/// lexicographic order.
pub fn for_each_offset(dims: usize, mut f: impl FnMut([isize; 3])) {
    let count = 3usize.pow(dims as u32);
    for code in 0..count {
        let mut off = [0isize; 3];
        let mut c = code;
        for a in (0..dims).rev() {
            off[a] = (c % 3) as isize - 1;
            c /= 3;
        }
        if off[..dims].iter().any(|&o| o != 0) {
            f(off);
        }
    }
}

/// A real value at every node of a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl GridFunction {
    /// Fills every node from `data`; interior nodes receive `initial`.
    pub fn with_data(grid: Arc<Grid>, initial: f64, data: impl Fn(&NodeInfo) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let info = grid.node_info(i);
                if info.state == NodeState::Interior {
                    initial
                } else {
                    data(&info)
                }
            })
            .collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    /// Range of the Dirichlet values.
    pub fn boundary_range(&self) -> (f64, f64) {
        self.range_where(|s| s.is_dirichlet())
    }

    pub fn interior_range(&self) -> (f64, f64) {
        self.range_where(|s| s == NodeState::Interior)
    }

    fn range_where(&self, pred: impl Fn(NodeState) -> bool) -> (f64, f64) {
        self.grid
            .states
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| pred(**s))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Multilinear interpolation at a point given in grid coordinates.
    /// Negative coordinates on mirrored axes are reflected.
    pub fn sample_coords(&self, x: &[f64]) -> f64 {
        let g = &*self.grid;
        let dims = g.dims();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..dims {
            let ax = &g.axes[a];
            let xa = if ax.mirror { x[a].abs() } else { x[a] };
            let i = ax.locate(xa);
            base[a] = i;
            t[a] = ((xa - ax.coords[i]) / ax.spacing(i)).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut ix = [0usize; 3];
            for a in 0..dims {
                if corner >> a & 1 == 1 {
                    w *= t[a];
                    ix[a] = base[a] + 1;
                } else {
                    w *= 1.0 - t[a];
                    ix[a] = base[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[g.index(&ix[..dims])];
            }
        }
        acc
    }

    /// Value at a biradial point. On full grids the point is placed on the
    /// `(x_1, x_n)` plane.
    pub fn sample(&self, at: BiradialPoint) -> f64 {
        match self.grid.frame {
            Frame::Reduced { .. } => self.sample_coords(&[at.rho, at.sigma]),
            Frame::Full { n, m } => {
                let mut x = [0.0; 3];
                x[0] = at.rho;
                if m >= 1 {
                    x[n - 1] = at.sigma;
                }
                self.sample_coords(&x[..n])
            }
        }
    }

    /// Writes `index, coordinates…, state, value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let g = &*self.grid;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string()];
        match g.frame {
            Frame::Reduced { m, .. } => {
                header.push("rho".into());
                if m >= 1 {
                    header.push("sigma".into());
                }
            }
            Frame::Full { n, .. } => header.extend((1..=n).map(|a| format!("x{a}"))),
        }
        header.push("state".into());
        header.push("value".into());
        w.write_record(&header).map_err(io_err)?;
        for i in 0..g.len() {
            let x = g.coords(i);
            let mut row = vec![i.to_string()];
            row.extend(x[..g.dims()].iter().map(|c| c.to_string()));
            row.push(g.states[i].as_str().to_string());
            row.push(self.values[i].to_string());
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Precondition(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

pub(crate) fn io_err(e: csv::Error) -> Error {
    Error::Precondition(format!("csv write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reduced_spec(n: usize, m: usize, s: f64, r: f64) -> DomainSpec {
        DomainSpec::ball(TubeGeometry::new(n, m, s).unwrap(), r, true)
    }

    fn uniform_axes(spec: &DomainSpec, h: f64) -> Vec<Axis> {
        let ext = spec.outer_extent();
        (0..spec.frame().dims())
            .map(|_| Axis::uniform(h, ext).unwrap())
            .collect()
    }

    #[test]
    fn probe_point_examples() {
        let g = TubeGeometry::new(3, 1, 0.5).unwrap();
        let p = g.probe_point(2.0).unwrap();
        assert_eq!(p.full, vec![2.0, 0.0, 0.0]);
        assert_eq!(p.reduced, BiradialPoint { rho: 2.0, sigma: 0.0 });
        assert_eq!(g.dist_to_plane(&p.full), 2.0);
        let norm: f64 = p.full.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert_eq!(norm, 2.0);
        assert!(g.probe_point(0.0).is_err());
    }

    #[test]
    fn clustered_axis_is_fine_at_the_center() {
        let ax = Axis::clustered(0.5, 1e-3, 1.2, 0.05, 4.0).unwrap();
        assert_eq!(ax.coords[0], 0.0);
        assert!(ax.coords.windows(2).all(|w| w[1] > w[0]));
        let c = ax.coords.iter().position(|&x| x == 0.5).unwrap();
        assert!((ax.spacing(c) - 1e-3).abs() < 1e-15);
        assert!((ax.spacing(c - 1) - 1e-3).abs() < 1e-15);
        assert!(ax.max_spacing() <= 0.05 * 1.5 + 1e-12);
        assert!(ax.coords[ax.len() - 2] > 4.0 && ax.coords[ax.len() - 3] <= 4.0);
        let at_zero = Axis::clustered(0.0, 1e-3, 1.2, 0.05, 1.0).unwrap();
        assert_eq!(at_zero.spacing(0), 1e-3);
    }

    #[test]
    fn zero_radius_tube_is_the_axis() {
        let spec = reduced_spec(3, 1, 0.0, 1.0);
        let grid = classify_nodes(&spec, uniform_axes(&spec, 1.0 / 32.0)).unwrap();
        for i in 0..grid.len() {
            let bp = grid.biradial(i);
            let st = grid.states[i];
            if bp.rho == 0.0 {
                assert_eq!(st, NodeState::DirichletTube);
            } else {
                assert_ne!(st, NodeState::DirichletTube);
            }
        }
    }

    #[test]
    fn gap_resolution_is_checked() {
        let spec = reduced_spec(3, 1, 1.0, 5.0);
        // (5 - 1)/0.1 = 40 cells across the gap
        assert!(classify_nodes(&spec, uniform_axes(&spec, 0.1)).is_ok());
        assert!(matches!(
            classify_nodes(&spec, uniform_axes(&spec, 0.5)),
            Err(Error::UnderResolved(_))
        ));
    }

    #[test]
    fn transition_band_on_the_sphere() {
        let s = 0.25;
        let spec = reduced_spec(3, 1, s, 4.0).with_transition(s, 2.0 * s);
        let grid = classify_nodes(&spec, uniform_axes(&spec, 1.0 / 32.0)).unwrap();
        let arcs: Vec<_> = (0..grid.len())
            .filter(|&i| grid.states[i] == NodeState::TransitionArc)
            .collect();
        assert!(!arcs.is_empty());
        for i in arcs {
            let info = grid.node_info(i);
            assert!(info.projected.rho > s && info.projected.rho < 2.0 * s);
            assert!((info.projected.norm() - 4.0).abs() < 1e-12);
        }
        // a node exactly on the sphere at distance 1.5 s from Λ
        let rho = 1.5 * s;
        let sigma = (16.0 - rho * rho).sqrt();
        let at = BiradialPoint { rho, sigma };
        let spec2 = reduced_spec(3, 1, s, 4.0).with_transition(s, 2.0 * s);
        let axes = vec![
            Axis { coords: (0..140).map(|i| i as f64 * rho / 12.0).collect(), mirror: true },
            Axis { coords: (0..=260).map(|i| i as f64 * sigma / 250.0).collect(), mirror: true },
        ];
        let grid = classify_nodes(&spec2, axes).unwrap();
        let i = grid.index(&[12, 250]);
        assert!((grid.biradial(i).rho - at.rho).abs() < 1e-12);
        assert_eq!(grid.states[i], NodeState::TransitionArc);
    }

    #[test]
    fn graded_axis_is_fine_near_zero() {
        let ax = Axis::graded(0.01, 0.1, 1.1, 0.2, 3.0).unwrap();
        assert!((ax.spacing(0) - 0.01).abs() < 1e-15);
        assert!((ax.coords[10] - 0.1).abs() < 1e-12);
        assert!(ax.max_spacing() <= 0.2 + 1e-12);
        let last = *ax.coords.last().unwrap();
        assert!(last > 3.0);
        assert!(ax.coords.iter().filter(|&&c| c > 3.0).count() == 2);
        assert!(ax.coords.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let spec = reduced_spec(3, 1, 0.1, 1.0);
        let grid = Arc::new(classify_nodes(&spec, vec![
            Axis::graded(0.01, 0.2, 1.2, 0.05, 1.0).unwrap(),
            Axis::uniform(0.03, 1.0).unwrap(),
        ]).unwrap());
        let f = |x: [f64; 3]| 1.0 + 2.0 * x[0] - 0.5 * x[1] + 3.0 * x[0] * x[1];
        let gf = GridFunction {
            values: (0..grid.len()).map(|i| f(grid.coords(i))).collect(),
            grid: grid.clone(),
        };
        for &(r, s) in &[(0.123, 0.456), (0.5, 0.01), (0.011, 0.9)] {
            let v = gf.sample(BiradialPoint { rho: r, sigma: s });
            assert!((v - f([r, s, 0.0])).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let spec = reduced_spec(2, 0, 0.5, 1.0);
        let grid = Arc::new(classify_nodes(&spec, vec![Axis::uniform(1.0 / 32.0, 1.0).unwrap()]).unwrap());
        let gf = GridFunction::constant(grid.clone(), 0.25);
        let mut buf = Vec::new();
        gf.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,rho,state,value");
        assert_eq!(lines.count(), grid.len());
        assert!(text.contains("dirichlet_tube"));
    }
}
