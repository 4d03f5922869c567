//! Semiparametric estimation of marginal exposure effects under network
//! interference with endogenous, equilibrium-driven treatment take-up.
//!
//! Treatment propensities solve `P = Λ(Z β_D + λ Ã P)` on a row-normalised
//! adjacency `Ã`. Outcomes are modelled per exposure cell (own treatment ×
//! any treated neighbour) with a control-function term, and all parameters
//! are estimated jointly by two-step GMM with a network HAC weight.

pub mod data;
pub mod effects;
pub mod equilibrium;
pub mod error;
pub mod exposure;
pub mod gmm;
pub mod graph;
pub mod hac;
pub mod harness;
pub mod io;
pub mod moments;

pub use data::Dataset;
pub use effects::{mee, mer, mer_table, Effect, EffectInputs, MerRow, DEFAULT_P_GRID};
pub use equilibrium::{
    equilibrium_state, solve_equilibrium, EquilibriumState, FirstStageParams, FixedPoint,
    JacobianMethod, SolverConfig,
};
pub use error::{Error, ErrorKind, Result};
pub use exposure::{exposure_map, ExposureLabel};
pub use gmm::{
    confidence_interval, estimate, wald_single, wald_test, GmmConfig, GmmResult, WaldTest,
};
pub use graph::{bfs_layers, DistanceIndex, Graph};
pub use hac::{hac_covariance, psd_repair, HacConfig};
pub use harness::{run_mc, McSummary, SimConfig, Topology};
pub use moments::{CellParams, Layout, MomentProblem, ParamVector};
