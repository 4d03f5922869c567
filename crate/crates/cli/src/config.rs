//! TOML run configuration. Every key is optional; command-line flags
//! override file values, which override the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use netmee::harness::design_truth;
use netmee::moments::{CellParams, ParamVector};
use netmee::{Error, FirstStageParams, HacConfig, Result, SimConfig, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Confidence level for intervals.
    pub level: f64,
    pub out: PathBuf,
    pub hac: HacConfig,
    pub gmm: GmmSection,
    pub simulate: SimulateSection,
    pub effects: EffectsSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            level: 0.95,
            out: PathBuf::from("netmee-out"),
            hac: HacConfig::default(),
            gmm: GmmSection::default(),
            simulate: SimulateSection::default(),
            effects: EffectsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub moment_tol: f64,
    pub max_newton: usize,
    pub max_restarts: usize,
    pub fd_step: f64,
}

impl Default for GmmSection {
    fn default() -> Self {
        let g = netmee::GmmConfig::default();
        GmmSection {
            moment_tol: g.moment_tol,
            max_newton: g.max_newton,
            max_restarts: g.max_restarts,
            fd_step: g.fd_step,
        }
    }
}

impl GmmSection {
    pub fn to_config(&self) -> netmee::GmmConfig {
        netmee::GmmConfig {
            moment_tol: self.moment_tol,
            max_newton: self.max_newton,
            max_restarts: self.max_restarts,
            fd_step: self.fd_step,
            ..netmee::GmmConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Ring,
    Rgg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub topology: TopologyKind,
    pub kappa: f64,
    pub n: usize,
    pub reps: usize,
    pub p_grid: Vec<f64>,
    pub x_eval: Vec<f64>,
    pub truth: Truth,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            topology: TopologyKind::Ring,
            kappa: 5.63,
            n: 1000,
            reps: 300,
            p_grid: netmee::DEFAULT_P_GRID.to_vec(),
            x_eval: vec![1.0, 1.0],
            truth: Truth::default(),
        }
    }
}

/// Data-generating parameters; cells in the order (0,0), (1,0), (0,1), (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truth {
    pub beta_d: Vec<f64>,
    pub lambda: f64,
    pub beta_x: Vec<Vec<f64>>,
    pub beta_p: Vec<f64>,
}

impl Default for Truth {
    fn default() -> Self {
        let t = design_truth();
        let cells: Vec<&CellParams> = t.cells.iter().flatten().collect();
        Truth {
            beta_d: t.first.beta_d.clone(),
            lambda: t.first.lambda,
            beta_x: cells.iter().map(|c| c.beta_x.clone()).collect(),
            beta_p: cells.iter().map(|c| c.beta_p).collect(),
        }
    }
}

impl Truth {
    pub fn to_params(&self) -> Result<ParamVector> {
        if self.beta_x.len() != 4 || self.beta_p.len() != 4 {
            return Err(Error::InvalidInput(
                "truth.beta_x and truth.beta_p need one entry per exposure cell (4)".into(),
            ));
        }
        let mut cells: [Option<CellParams>; 4] = Default::default();
        for (k, cell) in cells.iter_mut().enumerate() {
            *cell = Some(CellParams {
                beta_x: self.beta_x[k].clone(),
                beta_p: self.beta_p[k],
            });
        }
        Ok(ParamVector {
            first: FirstStageParams::new(self.beta_d.clone(), self.lambda),
            cells,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsSection {
    /// Covariate point, intercept first.
    pub x: Vec<f64>,
    pub p_grid: Vec<f64>,
}

impl Default for EffectsSection {
    fn default() -> Self {
        EffectsSection {
            x: vec![1.0, 1.0],
            p_grid: netmee::DEFAULT_P_GRID.to_vec(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hac.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if !(self.gmm.fd_step > 0.0) || !(self.gmm.moment_tol > 0.0) {
            return Err(Error::InvalidInput(
                "gmm.fd_step and gmm.moment_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulate;
        let topology = match s.topology {
            TopologyKind::Ring => Topology::Ring,
            TopologyKind::Rgg => Topology::Rgg { kappa: s.kappa },
        };
        let cfg = SimConfig {
            topology,
            n: s.n,
            reps: s.reps,
            true_params: s.truth.to_params()?,
            hac: self.hac,
            master_seed: self.seed,
            p_grid: s.p_grid.clone(),
            x_eval: s.x_eval.clone(),
            level: self.level,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
