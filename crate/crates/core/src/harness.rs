//! Simulation design and Monte Carlo runner.
//!
//! Outcomes follow `Y_i = β_X(T_i)'(1, X_i) + β_p(T_i) V_i + e_i` with
//! `X_i, Z_i, e_i ~ N(0, 1)`, `V_i ~ U(0, 1)` and `D_i = 1{P_i ≥ V_i}` where
//! `P` is the equilibrium propensity at the true first-stage parameters.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::effects::{mer, EffectInputs, DEFAULT_P_GRID};
use crate::equilibrium::{solve_equilibrium, FirstStageParams, SolverConfig};
use crate::error::{Error, Result};
use crate::exposure::ExposureLabel;
use crate::gmm::{confidence_interval, critical_value, estimate, wald_single, GmmConfig};
use crate::graph::{rgg, ring, Graph};
use crate::hac::HacConfig;
use crate::moments::{CellParams, Layout, MomentProblem, ParamVector};

/// Parameter values of the reference simulation design.
pub fn design_truth() -> ParamVector {
    let cell = |b0: f64, b1: f64, p: f64| {
        Some(CellParams {
            beta_x: vec![b0, b1],
            beta_p: p,
        })
    };
    ParamVector {
        first: FirstStageParams::new(vec![-1.0, 2.0], 1.0),
        cells: [
            cell(1.0, 2.0, 0.5),
            cell(2.0, 1.0, 1.0),
            cell(2.0, 1.0, 1.0),
            cell(2.0, 1.0, 1.5),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Rgg { kappa: f64 },
}

impl Topology {
    /// Builds the network for one replication.
    pub fn build<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Graph> {
        match *self {
            Topology::Ring => ring(n),
            Topology::Rgg { kappa } => rgg(n, kappa, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub topology: Topology,
    pub n: usize,
    pub reps: usize,
    pub true_params: ParamVector,
    pub hac: HacConfig,
    pub master_seed: u64,
    pub p_grid: Vec<f64>,
    /// Covariate point for MER evaluation, intercept first.
    pub x_eval: Vec<f64>,
    pub level: f64,
}

impl SimConfig {
    pub fn new(topology: Topology, n: usize, reps: usize, master_seed: u64) -> Self {
        SimConfig {
            topology,
            n,
            reps,
            true_params: design_truth(),
            hac: HacConfig::default(),
            master_seed,
            p_grid: DEFAULT_P_GRID.to_vec(),
            x_eval: vec![1.0, 1.0],
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        self.true_params.first.validate()?;
        self.hac.validate()?;
        if self.true_params.cells.iter().any(Option::is_none) {
            return Err(Error::InvalidInput(
                "true parameters must cover all four cells".into(),
            ));
        }
        if self.true_params.first.beta_d.len() != 2 {
            return Err(Error::InvalidInput(
                "the simulation design has one instrument".into(),
            ));
        }
        if self
            .true_params
            .cells
            .iter()
            .flatten()
            .any(|c| c.beta_x.len() != 2)
        {
            return Err(Error::InvalidInput(
                "the simulation design has one covariate".into(),
            ));
        }
        if self.x_eval.len() != 2 {
            return Err(Error::InvalidInput(
                "x_eval must have two entries (intercept, x)".into(),
            ));
        }
        if self.p_grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidInput(
                "p_grid entries must lie in (0, 1)".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput("level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A simulated dataset together with its latent quantities.
#[derive(Debug, Clone)]
pub struct SimulatedDraw {
    pub data: Dataset,
    pub propensity: Vec<f64>,
    pub v: Vec<f64>,
}

/// Draws covariates, instruments, selection shocks and outcomes on `g`.
pub fn simulate_draw<R: Rng + ?Sized>(
    g: &Graph,
    truth: &ParamVector,
    rng: &mut R,
) -> Result<SimulatedDraw> {
    truth.first.validate()?;
    let n = g.node_count();
    let kx = truth
        .cells
        .iter()
        .flatten()
        .map(|c| c.beta_x.len())
        .next()
        .ok_or_else(|| Error::InvalidInput("no outcome cells in the true parameters".into()))?;
    let kz = truth.first.beta_d.len();
    let x = DMatrix::from_fn(n, kx - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(n, kz - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let zd = z.clone().insert_column(0, 1.0);
    let fp = solve_equilibrium(g, &zd, &truth.first, SolverConfig::default())?;
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let d: Vec<u8> = (0..n).map(|i| (fp.p[i] >= v[i]) as u8).collect();
    let e: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut data = Dataset::new(g, vec![0.0; n], d, &x, &z)?;
    for i in 0..n {
        let t = data.labels[i];
        let c = truth
            .cell(t)
            .ok_or_else(|| Error::AbsentCell(t.to_string()))?;
        let fit: f64 = (0..kx).map(|k| data.x[(i, k)] * c.beta_x[k]).sum();
        data.y[i] = fit + c.beta_p * v[i] + e[i];
    }
    Ok(SimulatedDraw {
        data,
        propensity: fp.p,
        v,
    })
}

pub fn generate_dataset<R: Rng + ?Sized>(
    g: &Graph,
    truth: &ParamVector,
    rng: &mut R,
) -> Result<Dataset> {
    Ok(simulate_draw(g, truth, rng)?.data)
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep`, a pure function of `(master, rep)`.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    mix64(master ^ mix64(rep.wrapping_add(0x632b_e59b_d9b4_e019)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Parameter,
    Mer { label: ExposureLabel },
}

/// Monte Carlo metrics for one parameter or MER grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub kind: MetricKind,
    pub p: Option<f64>,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation across replications; `None` with one rep.
    pub sd: Option<f64>,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Rejection rate of the 5% Wald test of the true value (parameters only).
    pub wald_rejection: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub rows: Vec<MetricRow>,
    pub reps: usize,
    pub used: usize,
    pub failures: usize,
    /// Replications whose HAC matrix needed eigenvalue repair.
    pub psd_repairs: usize,
}

impl McSummary {
    pub fn row(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn parameters(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.kind == MetricKind::Parameter)
    }

    pub fn mers(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, MetricKind::Mer { .. }))
    }
}

/// Per-replication output: one entry per metric row.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub estimates: Vec<f64>,
    pub std_err: Vec<f64>,
    pub covered: Vec<bool>,
    pub wald_reject: Vec<bool>,
    pub psd_repaired: bool,
}

/// Names of the Monte Carlo metric rows: the flat parameters, then the MER
/// grid label-major.
pub fn metric_names(cfg: &SimConfig) -> Vec<(String, MetricKind, Option<f64>, f64)> {
    let layout = Layout::full(2, 2);
    let truth = cfg.true_params.to_flat(&layout);
    let mut out: Vec<_> = layout
        .names()
        .into_iter()
        .zip(truth)
        .map(|(n, t)| (n, MetricKind::Parameter, None, t))
        .collect();
    for t in ExposureLabel::ALL {
        let c = cfg.true_params.cell(t).expect("validated");
        for &p in &cfg.p_grid {
            let value = cfg.x_eval[0] * c.beta_x[0] + cfg.x_eval[1] * c.beta_x[1] + p * c.beta_p;
            out.push((
                format!("MER{t}@{p}"),
                MetricKind::Mer { label: t },
                Some(p),
                value,
            ));
        }
    }
    out
}

/// Runs one replication end to end.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<RepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(cfg.master_seed, rep as u64));
    let g = cfg.topology.build(cfg.n, &mut rng)?;
    let data = generate_dataset(&g, &cfg.true_params, &mut rng)?;
    let problem = MomentProblem::new(&g, &data)?;
    if problem.layout != Layout::full(2, 2) {
        return Err(Error::AbsentCell(format!(
            "replication {rep} lacks a populated exposure cell or edges"
        )));
    }
    let res = estimate(&problem, &cfg.hac, &GmmConfig::default())?;
    let names = metric_names(cfg);
    let ci = confidence_interval(&res, cfg.level);
    let z = critical_value(cfg.level);
    let inputs = EffectInputs::from(&res);

    let mut out = RepOutcome {
        estimates: Vec::with_capacity(names.len()),
        std_err: Vec::with_capacity(names.len()),
        covered: Vec::with_capacity(names.len()),
        wald_reject: Vec::with_capacity(names.len()),
        psd_repaired: res.psd_repaired,
    };
    for (j, (_, kind, p, truth)) in names.iter().enumerate() {
        match kind {
            MetricKind::Parameter => {
                out.estimates.push(res.estimates[j]);
                out.std_err.push(res.std_err[j]);
                out.covered.push(ci[j].0 <= *truth && *truth <= ci[j].1);
                let w = wald_single(&res, j, *truth)?;
                out.wald_reject.push(w.p_value < 0.05);
            }
            MetricKind::Mer { label } => {
                let e = mer(&inputs, *label, &cfg.x_eval, p.expect("grid point"))?;
                out.estimates.push(e.value);
                out.std_err.push(e.std_err);
                out.covered.push((e.value - truth).abs() <= z * e.std_err);
                out.wald_reject.push(false);
            }
        }
    }
    Ok(out)
}

/// Bias/SD/RMSE/coverage aggregation over successful replications.
pub fn summarize(cfg: &SimConfig, outcomes: &[RepOutcome], failures: usize) -> McSummary {
    let names = metric_names(cfg);
    let m = outcomes.len();
    let rows = names
        .into_iter()
        .enumerate()
        .map(|(j, (name, kind, p, truth))| {
            let vals: Vec<f64> = outcomes.iter().map(|o| o.estimates[j]).collect();
            let mf = m as f64;
            let mean = vals.iter().sum::<f64>() / mf;
            let sd = (m > 1).then(|| {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
            });
            let rmse = (vals.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / mf).sqrt();
            let coverage = outcomes.iter().filter(|o| o.covered[j]).count() as f64 / mf;
            let mean_se = outcomes.iter().map(|o| o.std_err[j]).sum::<f64>() / mf;
            let wald_rejection = (kind == MetricKind::Parameter)
                .then(|| outcomes.iter().filter(|o| o.wald_reject[j]).count() as f64 / mf);
            MetricRow {
                name,
                kind,
                p,
                truth,
                mean,
                bias: mean - truth,
                sd,
                rmse,
                coverage,
                mean_se,
                wald_rejection,
            }
        })
        .collect();
    McSummary {
        rows,
        reps: m + failures,
        used: m,
        failures,
        psd_repairs: outcomes.iter().filter(|o| o.psd_repaired).count(),
    }
}

/// Runs all replications (in parallel) and aggregates them. Failed
/// replications are excluded; more than 5% failures aborts the experiment.
pub fn run_mc(cfg: &SimConfig) -> Result<McSummary> {
    cfg.validate()?;
    let results: Vec<Result<RepOutcome>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect();
    let mut outcomes = Vec::with_capacity(cfg.reps);
    let mut failures = 0;
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::debug!("replication {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures * 20 > cfg.reps || outcomes.is_empty() {
        return Err(Error::TooManyFailures {
            failures,
            reps: cfg.reps,
        });
    }
    if failures * 100 > cfg.reps {
        log::warn!(
            "{failures} of {} replications failed and were excluded",
            cfg.reps
        );
    }
    Ok(summarize(cfg, &outcomes, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|r| replication_seed(7, r)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(replication_seed(7, 3), a[3]);
        assert_ne!(replication_seed(8, 3), a[3]);
    }

    #[test]
    fn symmetric_selection_rate() {
        let g = ring(20_000).unwrap();
        let mut truth = design_truth();
        truth.first = FirstStageParams::new(vec![0.0, 0.0], 0.0);
        let draw = simulate_draw(&g, &truth, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rate = draw.data.d.iter().map(|&v| v as f64).sum::<f64>() / 20_000.0;
        assert!((rate - 0.5).abs() < 0.015, "rate {rate}");
    }

    #[test]
    fn metric_rows_layout() {
        let cfg = SimConfig::new(Topology::Ring, 250, 1, 1);
        let names = metric_names(&cfg);
        assert_eq!(names.len(), 27);
        assert_eq!(names[0].0, "beta_D0");
        assert!((names[15 + 9 + 1].3 - 3.75).abs() < 1e-15);
        assert!((names[15 + 1].3 - 3.25).abs() < 1e-15);
    }

    #[test]
    fn rmse_identity_holds() {
        let cfg = SimConfig::new(Topology::Ring, 250, 1, 1);
        let k = metric_names(&cfg).len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let outcomes: Vec<RepOutcome> = (0..9)
            .map(|_| RepOutcome {
                estimates: (0..k).map(|_| rng.random_range(-3.0..3.0)).collect(),
                std_err: vec![0.1; k],
                covered: vec![true; k],
                wald_reject: vec![false; k],
                psd_repaired: false,
            })
            .collect();
        let s = summarize(&cfg, &outcomes, 0);
        for r in &s.rows {
            let sd = r.sd.unwrap();
            let lhs = r.rmse * r.rmse;
            let rhs = r.bias * r.bias + (8.0 / 9.0) * sd * sd;
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn single_rep_has_no_sd() {
        let cfg = SimConfig::new(Topology::Ring, 250, 1, 42);
        let s = run_mc(&cfg).unwrap();
        assert_eq!(s.used, 1);
        let r = s.row("beta_D0").unwrap();
        assert!(r.sd.is_none());
        assert_eq!(r.bias, r.mean - r.truth);
        assert!((r.rmse - r.bias.abs()).abs() < 1e-15);
    }
}
