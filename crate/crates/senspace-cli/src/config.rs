//! Run configuration, read from TOML.

use serde::{Deserialize, Serialize};
use senspace::fields3d::{PotentialSpec, Vec3};

use crate::error::{CliError, CliResult};

/// Stage names in their canonical order.
pub const STAGES: &[&str] = &[
    "potential",
    "connection",
    "triples",
    "verify-appendix-a",
    "glue-scan",
    "defect-profile",
    "profile-ah",
    "mode-solvers",
    "commutator-scan",
    "patched-inverse",
    "perturb",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Vec<String>,
    pub output_dir: String,
    pub system: SystemConfig,
    pub grid: GridConfig,
    pub seeds: Seeds,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub commutator: CommutatorConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Every center; the list must be invariant under x ↦ −x.
    pub centers: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_hole")]
    pub hole_weight: f64,
    /// Strictly decreasing.
    pub epsilon_list: Vec<f64>,
    pub delta: f64,
}

fn default_hole() -> f64 {
    -2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Half-width of the cube.
    pub extent: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub fuzz: u64,
    pub battery: u64,
}

/// The patched inverse runs at its own (ε, δ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub refinements: usize,
    pub max_mode: i32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { epsilon: 0.02, delta: 0.25, refinements: 3, max_mode: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommutatorConfig {
    pub deltas: Vec<f64>,
    pub battery: usize,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        CommutatorConfig { deltas: vec![0.2, 0.04, 0.0016], battery: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub n: usize,
    pub amplitude: f64,
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { n: 32, amplitude: 1e-2, tol: 1e-10, max_steps: 8 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: STAGES.iter().map(|s| s.to_string()).collect(),
            output_dir: "senspace-out".into(),
            system: SystemConfig {
                centers: vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
                weights: None,
                hole_weight: -2.0,
                epsilon_list: vec![0.02, 0.01, 0.005, 0.0025],
                delta: 0.3,
            },
            grid: GridConfig { extent: 1.6, n: 64 },
            seeds: Seeds { fuzz: 103, battery: 4 },
            solver: SolverConfig::default(),
            commutator: CommutatorConfig::default(),
            perturb: PerturbConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::ConfigInvalid(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The canonical text: parsing it gives back an equal config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The potential at the first (largest) ε of the list.
    pub fn spec(&self) -> CliResult<PotentialSpec> {
        self.spec_at(self.system.epsilon_list[0])
    }

    pub fn spec_at(&self, eps: f64) -> CliResult<PotentialSpec> {
        let centers = self.system.centers.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        PotentialSpec::new(centers, self.system.weights.clone(), self.system.hole_weight, eps)
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.pipeline.is_empty() {
            return Err(invalid("no stages"));
        }
        for s in &self.pipeline {
            if !STAGES.contains(&s.as_str()) {
                return Err(invalid(format!("unknown stage {s:?}")));
            }
        }
        let sys = &self.system;
        if !(sys.delta > 0.0 && sys.delta < 0.5) {
            return Err(invalid(format!("delta = {} must lie in (0, 1/2)", sys.delta)));
        }
        let eps = &sys.epsilon_list;
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("epsilon_list must hold positive values"));
        }
        if eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("epsilon_list must be strictly decreasing"));
        }
        if !(eps[0] < sys.delta * sys.delta) {
            return Err(invalid(format!("need epsilon < delta^2 = {}", sys.delta * sys.delta)));
        }
        if !(self.solver.epsilon > 0.0 && self.solver.epsilon < self.solver.delta * self.solver.delta) {
            return Err(invalid("solver: need 0 < epsilon < delta^2"));
        }
        if !(self.grid.extent > 0.0) || self.grid.n < 8 || self.grid.n > 256 {
            return Err(invalid("grid: need extent > 0 and 8 <= n <= 256"));
        }
        if self.perturb.n < 4 || self.perturb.n % 2 != 0 || self.perturb.n > 64 {
            return Err(invalid("perturb: n must be even and in [4, 64]"));
        }
        // symmetric centers, positive separation
        self.spec()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let cfg = RunConfig::default();
        let text = cfg.canonical();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.canonical(), text);
    }

    #[test]
    fn shipped_default_matches() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = RunConfig::default();
        cfg.pipeline.clear();
        assert!(matches!(cfg.validate(), Err(CliError::ConfigInvalid(m)) if m == "no stages"));
        let mut cfg = RunConfig::default();
        cfg.system.centers = vec![[0.0, 0.0, 1.0]];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.system.epsilon_list = vec![0.1, 0.05];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.pipeline = vec!["solve-everything".into()];
        assert!(cfg.validate().is_err());
        assert!(RunConfig::parse("pipeline = [\"potential\"]\nbogus = 1\n").is_err());
    }
}
