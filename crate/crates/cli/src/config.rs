//! Experiment configuration: one TOML file per experiment, one table per
//! subcommand. Missing tables and fields take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tubeharm_core::analysis::{GrowthResolution, DEFAULT_SEED};
use tubeharm_core::measures::ScalingResolution;
use tubeharm_core::solver::Scheme;
use tubeharm_core::Resolution;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub barriers: BarriersConfig,
    pub solve: SolveConfig,
    pub measure: MeasureConfig,
    pub oracle: OracleConfig,
    pub scaling: ScalingConfig,
    pub growth: GrowthConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            barriers: BarriersConfig::default(),
            solve: SolveConfig::default(),
            measure: MeasureConfig::default(),
            oracle: OracleConfig::default(),
            scaling: ScalingConfig::default(),
            growth: GrowthConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Solver knobs shared by every command that solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Defaults to energy Gauss–Seidel for finite p, min–max for p = ∞.
    pub scheme: Option<Scheme>,
    pub stop_tol: f64,
    pub max_sweeps: usize,
    pub omega: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: None,
            stop_tol: 1e-9,
            max_sweeps: 200_000,
            omega: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarriersConfig {
    pub n: usize,
    pub m: usize,
    pub p: Vec<f64>,
    /// `γ` as fractions of `β(p)`; ignored when `gamma` is non-empty.
    pub gamma_fractions: Vec<f64>,
    /// Absolute values of `γ`, used for every `p`.
    pub gamma: Vec<f64>,
    pub scan: [usize; 2],
    pub delta_tol: f64,
    /// `γ` grid and `p` ladder of the large-`p` threshold table.
    pub z_gammas: Vec<f64>,
    pub z_ladder: Vec<f64>,
}

impl Default for BarriersConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 2,
            p: vec![4.0, 8.0, 64.0, 512.0],
            gamma_fractions: vec![0.25, 0.5, 0.75],
            gamma: Vec::new(),
            scan: [256, 256],
            delta_tol: 1e-3,
            z_gammas: (1..10).map(|k| k as f64 / 10.0).collect(),
            z_ladder: vec![2.5, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub s: f64,
    pub radius: f64,
    pub resolution: Resolution,
    pub levels: usize,
    /// Ramp the sphere data from 0 to 1 over `s < d(x, Λ) < 2s`.
    pub transition: bool,
    pub solver: SolverConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 1,
            p: 4.0,
            s: 0.125,
            radius: 1.0,
            resolution: Resolution::Uniform { h: 1.0 / 64.0 },
            levels: 4,
            transition: true,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub s: f64,
    pub radius: f64,
    pub resolution: Resolution,
    pub levels: usize,
    pub transition: bool,
    /// `(ρ, σ)` pairs; empty means the single probe `A_{2s}`.
    pub probes: Vec<[f64; 2]>,
    pub solver: SolverConfig,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        let solve = SolveConfig::default();
        Self {
            n: solve.n,
            m: solve.m,
            p: solve.p,
            s: solve.s,
            radius: solve.radius,
            resolution: solve.resolution,
            levels: solve.levels,
            transition: true,
            probes: Vec::new(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// `p = 2`, `n = 2`, `m = 1`; points are `(x, y)` in the upper half-disk.
    Halfplane,
    /// `p = n`; points are `(ρ, σ)`.
    Lindqvist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub points: Vec<[f64; 2]>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Halfplane,
            n: 2,
            m: 1,
            r: 1.0,
            points: vec![[0.0, 0.5]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub s: f64,
    pub radii: Vec<f64>,
    pub resolution: ScalingResolution,
    pub delta_c: f64,
    pub solver: SolverConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 1,
            p: 3.0,
            s: 1.0,
            radii: vec![8.0, 16.0, 32.0, 64.0],
            resolution: ScalingResolution::default(),
            delta_c: tubeharm_core::barriers::DEFAULT_DELTA_C,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub r: f64,
    /// `δ` as a fraction of `δ̂_c`; must be below 1/2.
    pub delta_fraction: f64,
    /// Defaults to the barrier estimate (0.5 where barriers do not apply).
    pub delta_c: Option<f64>,
    pub ray: usize,
    pub per_shell: usize,
    /// Regression bound on the two-sided ratio spread for `δ > 0`.
    pub spread_bound: f64,
    pub resolution: GrowthResolution,
    pub solver: SolverConfig,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 1,
            p: 4.0,
            r: 1.0,
            delta_fraction: 0.0,
            delta_c: None,
            ray: 32,
            per_shell: 32,
            spread_bound: 1.05,
            resolution: GrowthResolution::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Directory of earlier outputs; defaults to the output directory.
    pub inputs: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn infinite_p_round_trips() {
        let cfg = ExperimentConfig::parse("[growth]\np = inf\ndelta_c = 0.3\n").unwrap();
        assert!(cfg.growth.p.is_infinite());
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::parse("seed = 7\n[scaling]\nradii = [8, 16]\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.scaling.radii, vec![8.0, 16.0]);
        assert_eq!(cfg.scaling.n, 3);
        assert_eq!(cfg.barriers, BarriersConfig::default());
    }

    #[test]
    fn resolution_tables_parse() {
        let cfg = ExperimentConfig::parse(
            "[solve.resolution]\nkind = \"graded\"\nh_fine = 0.001\nfine_extent = 0.0\ngrowth = 1.2\nh_max = 0.05\n",
        )
        .unwrap();
        assert!(matches!(cfg.solve.resolution, Resolution::Graded { .. }));
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(ExperimentConfig::parse("[solve]\nq = 3\n"), Err(Failure::Config(_))));
    }
}
