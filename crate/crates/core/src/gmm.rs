//! Two-step GMM: root of the just-identified moment system, network-HAC
//! weighting, sandwich covariance, confidence intervals and Wald tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::equilibrium::{logistic, FirstStageParams, LAMBDA_BOUND};
use crate::error::{Error, Result};
use crate::exposure::ExposureLabel;
use crate::graph::bfs_layers;
use crate::hac::{bandwidth, hac_covariance, max_lag, psd_repair, HacConfig};
use crate::moments::{
    cell_regressor, column_means, CellParams, Layout, MomentProblem, ParamVector,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    /// Declared convergence when `||ĝ_n||_∞` falls below this.
    pub moment_tol: f64,
    /// Or when the Newton step norm falls below this.
    pub step_tol: f64,
    pub max_newton: usize,
    pub max_restarts: usize,
    /// Relative finite-difference step, `h_j = fd_step · max(1, |β_j|)`.
    pub fd_step: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            moment_tol: 1e-8,
            step_tol: 1e-10,
            max_newton: 200,
            max_restarts: 5,
            fd_step: 1e-6,
        }
    }
}

// Newton keeps iterating past `moment_tol` down to this, when it still makes
// progress, so that estimates are accurate well beyond the declared tolerance.
const POLISH_TOL: f64 = 1e-13;

/// Output of the full two-step procedure.
#[derive(Debug, Clone)]
pub struct GmmResult {
    pub layout: Layout,
    pub names: Vec<String>,
    pub beta_hat: ParamVector,
    pub estimates: Vec<f64>,
    pub n: usize,
    /// Moment mean `ĝ_n` at the estimate.
    pub moments: DVector<f64>,
    /// Network HAC of the moment rows at the first-step estimate, after
    /// eigenvalue repair.
    pub omega_g: DMatrix<f64>,
    /// Weight `Ξ̂ = Ω̂_g^{-1}`.
    pub weight: DMatrix<f64>,
    /// Numerical Jacobian `Ĝ` of `ĝ_n` at the estimate.
    pub g_hat: DMatrix<f64>,
    /// Sandwich covariance of `√n (β̂ - β)`.
    pub omega_beta: DMatrix<f64>,
    pub std_err: Vec<f64>,
    pub converged: bool,
    pub objective: f64,
    /// Second-step objective after each accepted iteration, starting value first.
    pub objective_trace: Vec<f64>,
    pub psd_repaired: bool,
    pub bandwidth: f64,
    pub equilibrium_iterations: usize,
    pub equilibrium_residual: f64,
    pub clipped: usize,
}

impl GmmResult {
    /// Index of a named parameter in the flat layout.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Covariance of `β̂` itself, `Ω̂_β / n`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.omega_beta / self.n as f64
    }
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn fd_step(cfg: &GmmConfig, v: f64) -> f64 {
    cfg.fd_step * v.abs().max(1.0)
}

/// Plain logit MLE of `d` on the design `z` by Newton-Raphson.
pub fn logit_mle(z: &DMatrix<f64>, d: &[u8]) -> Result<Vec<f64>> {
    let (n, k) = z.shape();
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let idx = z * &beta;
        let mut grad = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let p = logistic(idx[i]);
            let zi = z.row(i).transpose();
            grad += &zi * (d[i] as f64 - p);
            info += &zi * zi.transpose() * (p * (1.0 - p));
        }
        let step = info
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("beta_D".into()))?
            .solve(&grad);
        // Cap the step so separated data cannot overflow the index.
        let scale = (10.0 / step.amax()).min(1.0);
        beta += &step * scale;
        if step.amax() < 1e-12 {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

struct FirstStageFit {
    params: FirstStageParams,
    score_norm: f64,
}

fn first_from_flat(layout: &Layout, v: &[f64]) -> FirstStageParams {
    let lambda = if layout.lambda_free {
        v[layout.beta_d_len]
    } else {
        layout.fixed_lambda
    };
    FirstStageParams::new(v[..layout.beta_d_len].to_vec(), lambda)
}

fn first_to_flat(layout: &Layout, f: &FirstStageParams) -> Vec<f64> {
    let mut v = f.beta_d.clone();
    if layout.lambda_free {
        v.push(f.lambda);
    }
    v
}

struct FirstEval {
    score: DVector<f64>,
    rows: DMatrix<f64>,
    loglik: f64,
}

fn eval_first(problem: &MomentProblem, layout: &Layout, v: &[f64]) -> Result<FirstEval> {
    let first = first_from_flat(layout, v);
    let state = problem.equilibrium(&first)?;
    let rows = problem.first_stage_block(&state, &first)?;
    let score = column_means(&rows);
    let d = &problem.data.d;
    let loglik = state
        .p
        .iter()
        .zip(d)
        .map(|(&p, &di)| if di == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / d.len() as f64;
    Ok(FirstEval {
        score,
        rows,
        loglik,
    })
}

fn in_domain(layout: &Layout, v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
        && layout
            .lambda_offset()
            .is_none_or(|o| v[o].abs() < LAMBDA_BOUND - 1e-6)
}

/// Damped Newton on the first-stage scores with the log-likelihood as merit.
fn newton_first_stage(
    problem: &MomentProblem,
    start: &FirstStageParams,
    cfg: &GmmConfig,
) -> Result<FirstStageFit> {
    let layout = &problem.layout;
    let k = layout.first_len();
    let mut v = first_to_flat(layout, start);
    if !in_domain(layout, &v) {
        return Err(Error::Precondition(
            "first-stage start outside the parameter space".into(),
        ));
    }
    let mut cur = eval_first(problem, layout, &v)?;
    for _ in 0..cfg.max_newton {
        let norm = sup_norm(&cur.score);
        if norm < POLISH_TOL {
            break;
        }
        // Hessian of the mean log-likelihood by central differences of the score.
        let mut hess = DMatrix::zeros(k, k);
        for j in 0..k {
            let h = fd_step(cfg, v[j]);
            let mut up = v.clone();
            let mut dn = v.clone();
            up[j] += h;
            dn[j] -= h;
            let fu = eval_first(problem, layout, &up)?.score;
            let fd = eval_first(problem, layout, &dn)?.score;
            hess.set_column(j, &((fu - fd) / (2.0 * h)));
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let newton = (-&hess).cholesky().map(|c| c.solve(&cur.score));
        let bhhh = || {
            let n = cur.rows.nrows() as f64;
            let outer = cur.rows.transpose() * &cur.rows / n;
            outer.cholesky().map(|c| c.solve(&cur.score))
        };
        let Some(dir) = newton.or_else(bhhh) else {
            return Err(Error::RankDeficient(if layout.lambda_free {
                "lambda".into()
            } else {
                "beta_D".into()
            }));
        };

        let slope = cur.score.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = v
                .iter()
                .zip(dir.iter())
                .map(|(a, b)| a + alpha * b)
                .collect();
            if in_domain(layout, &trial) {
                if let Ok(e) = eval_first(problem, layout, &trial) {
                    let armijo = e.loglik >= cur.loglik + 1e-4 * alpha * slope;
                    // Near the optimum the likelihood is flat to rounding; accept
                    // full steps that shrink the score.
                    let polishing = norm < 1e-6 && sup_norm(&e.score) < norm;
                    if e.loglik.is_finite() && (armijo || polishing) {
                        accepted = Some((trial, e));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, e)) = accepted else { break };
        let step_norm: f64 = trial
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        v = trial;
        cur = e;
        if step_norm < cfg.step_tol {
            break;
        }
    }
    Ok(FirstStageFit {
        params: first_from_flat(layout, &v),
        score_norm: sup_norm(&cur.score),
    })
}

/// Least squares of `Y` on `(X, m)` within each present cell, given the
/// propensities.
pub fn cell_least_squares(problem: &MomentProblem, p: &[f64]) -> Result<[Option<CellParams>; 4]> {
    let data = problem.data;
    let kx = data.x.ncols();
    let mut cells: [Option<CellParams>; 4] = Default::default();
    for t in problem.layout.labels() {
        let mut xtx = DMatrix::zeros(kx + 1, kx + 1);
        let mut xty = DVector::zeros(kx + 1);
        for i in (0..data.len()).filter(|&i| data.labels[i] == t) {
            let mut w = DVector::zeros(kx + 1);
            for c in 0..kx {
                w[c] = data.x[(i, c)];
            }
            w[kx] = cell_regressor(t, p[i]);
            xtx += &w * w.transpose();
            xty += &w * data.y[i];
        }
        let b = xtx
            .cholesky()
            .ok_or_else(|| Error::RankDeficient(format!("cell {t}")))?
            .solve(&xty);
        cells[t.index()] = Some(CellParams {
            beta_x: b.rows(0, kx).iter().copied().collect(),
            beta_p: b[kx],
        });
    }
    Ok(cells)
}

/// Sequential warm start: first-stage likelihood Newton from the plain logit
/// fit, followed by per-cell least squares.
pub fn sequential_start(problem: &MomentProblem, cfg: &GmmConfig) -> Result<ParamVector> {
    let beta_d = logit_mle(&problem.data.z, &problem.data.d)?;
    let start = FirstStageParams::new(beta_d, problem.layout.fixed_lambda);
    let fit = newton_first_stage(problem, &start, cfg)?;
    let state = problem.equilibrium(&fit.params)?;
    let cells = cell_least_squares(problem, &state.p)?;
    Ok(ParamVector {
        first: fit.params,
        cells,
    })
}

/// Central-difference Jacobian of `ĝ_n` at `theta` (d × d). Perturbations of
/// the first-stage block re-solve the equilibrium; the others reuse it.
pub fn numerical_jacobian(
    problem: &MomentProblem,
    theta: &[f64],
    cfg: &GmmConfig,
) -> Result<DMatrix<f64>> {
    let layout = &problem.layout;
    let d = layout.len();
    let base = problem.layout.unflatten(theta)?;
    let base_state = problem.equilibrium(&base.first)?;
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = fd_step(cfg, theta[j]);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (gu, gd) = if j < layout.first_len() {
            (
                problem.evaluate_flat(&up)?.mean,
                problem.evaluate_flat(&dn)?.mean,
            )
        } else {
            let pu = layout.unflatten(&up)?;
            let pd = layout.unflatten(&dn)?;
            (
                problem.evaluate_with_state(base_state.clone(), &pu)?.mean,
                problem.evaluate_with_state(base_state.clone(), &pd)?.mean,
            )
        };
        jac.set_column(j, &((gu - gd) / (2.0 * h)));
    }
    Ok(jac)
}

/// Outcome of the first GMM step (identity weight).
#[derive(Debug, Clone)]
pub struct Step1 {
    pub theta: ParamVector,
    pub objective: f64,
    pub moment_norm: f64,
    pub converged: bool,
}

fn quad(g: &DVector<f64>, w: Option<&DMatrix<f64>>) -> f64 {
    match w {
        Some(w) => (g.transpose() * w * g)[(0, 0)],
        None => g.dot(g),
    }
}

/// Gauss-Newton minimisation of `ĝ' W ĝ` (identity when `weight` is `None`)
/// with backtracking. Returns the final point and the objective trace.
fn gauss_newton(
    problem: &MomentProblem,
    start: &[f64],
    weight: Option<&DMatrix<f64>>,
    cfg: &GmmConfig,
) -> Result<(Vec<f64>, DVector<f64>, Vec<f64>, bool)> {
    let layout = &problem.layout;
    let mut theta = start.to_vec();
    let mut g = problem.evaluate_flat(&theta)?.mean;
    let mut obj = quad(&g, weight);
    let mut trace = vec![obj];
    let mut converged = sup_norm(&g) < cfg.moment_tol;
    for _ in 0..cfg.max_newton {
        if sup_norm(&g) < POLISH_TOL {
            break;
        }
        let jac = numerical_jacobian(problem, &theta, cfg)?;
        let (lhs, rhs) = match weight {
            Some(w) => (jac.transpose() * w * &jac, jac.transpose() * w * &g),
            None => (jac.transpose() * &jac, jac.transpose() * &g),
        };
        let step = match lhs.clone().cholesky() {
            Some(c) => -c.solve(&rhs),
            None => match jac.clone().lu().solve(&g) {
                Some(s) => -s,
                None => return Err(Error::RankDeficient(offending_block(layout, &jac))),
            },
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + alpha * b)
                .collect();
            if in_domain(layout, &trial) {
                if let Ok(e) = problem.evaluate_flat(&trial) {
                    let o = quad(&e.mean, weight);
                    if o.is_finite() && o <= obj {
                        accepted = Some((trial, e.mean, o));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, gm, o)) = accepted else {
            break;
        };
        let step_norm = (alpha * step.norm()).abs();
        theta = trial;
        g = gm;
        obj = o;
        trace.push(obj);
        if sup_norm(&g) < cfg.moment_tol || step_norm < cfg.step_tol {
            converged = true;
        }
        if step_norm < cfg.step_tol {
            break;
        }
    }
    converged |= sup_norm(&g) < cfg.moment_tol;
    Ok((theta, g, trace, converged))
}

/// The parameter block carrying the most weight in the near-null direction of
/// `jac`.
fn offending_block(layout: &Layout, jac: &DMatrix<f64>) -> String {
    let svd = jac.clone().svd(false, true);
    let Some(vt) = svd.v_t else {
        return "unknown".into();
    };
    let (imin, _) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
            );
    let row = vt.row(imin);
    let (jmax, _) =
        row.iter().enumerate().fold(
            (0, 0.0),
            |acc, (j, &v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc },
        );
    layout.block_name(jmax)
}

/// First step: `argmin ĝ'ĝ`, started from `start`; on failure, restarts from
/// jittered copies of the start.
pub fn solve_step1(problem: &MomentProblem, start: &ParamVector, cfg: &GmmConfig) -> Result<Step1> {
    let layout = &problem.layout;
    let start = start.restricted(layout);
    let mut best: Option<Step1> = None;
    let mut best_grad = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..=cfg.max_restarts {
        let mut first = start.first.clone();
        if attempt > 0 {
            for b in &mut first.beta_d {
                *b += rng.random_range(-0.25..0.25) * (1.0 + b.abs());
            }
            if layout.lambda_free {
                first.lambda = (first.lambda + rng.random_range(-0.5..0.5)).clamp(-3.5, 3.5);
            }
        }
        let run = || -> Result<Step1> {
            let fit = newton_first_stage(problem, &first, cfg)?;
            let state = problem.equilibrium(&fit.params)?;
            let cells = cell_least_squares(problem, &state.p)?;
            let seq = ParamVector {
                first: fit.params,
                cells,
            };
            let flat = seq.to_flat(layout);
            let (theta, g, trace, converged) = gauss_newton(problem, &flat, None, cfg)?;
            Ok(Step1 {
                theta: layout.unflatten(&theta)?,
                objective: *trace.last().unwrap_or(&g.dot(&g)),
                moment_norm: sup_norm(&g),
                converged: converged && fit.score_norm.is_finite(),
            })
        };
        match run() {
            Ok(s) if s.converged => return Ok(s),
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                    best_grad = s.moment_norm;
                    best = Some(s);
                }
            }
            Err(e @ Error::RankDeficient(_)) if attempt == cfg.max_restarts && best.is_none() => {
                return Err(e)
            }
            Err(_) => {}
        }
    }
    Err(Error::EstimationFailed {
        objective: best.as_ref().map_or(f64::INFINITY, |b| b.objective),
        gradient_norm: best_grad,
    })
}

/// Second step: HAC weight at the first-step estimate, weighted minimisation,
/// numerical Jacobian and sandwich covariance.
pub fn solve_step2(
    problem: &MomentProblem,
    step1: &Step1,
    hac_cfg: &HacConfig,
    cfg: &GmmConfig,
) -> Result<GmmResult> {
    hac_cfg.validate()?;
    if !step1.converged {
        return Err(Error::Precondition(
            "second step requires a converged first step".into(),
        ));
    }
    let layout = problem.layout.clone();
    let g = problem.graph;
    let n = problem.n();

    let flat1 = step1.theta.to_flat(&layout);
    let eval1 = problem.evaluate_flat(&flat1)?;
    let b_n = bandwidth(n, g.average_degree(), hac_cfg);
    let lags = max_lag(b_n).min(n);
    let dist = bfs_layers(g, lags);
    let omega_raw = hac_covariance(&eval1.rows, &dist, b_n)?;
    let repaired = psd_repair(&omega_raw)?;
    let weight = repaired.inverse();

    let (theta, gbar, trace, converged) = gauss_newton(problem, &flat1, Some(&weight), cfg)?;
    let eval = problem.evaluate_flat(&theta)?;
    let jac = numerical_jacobian(problem, &theta, cfg)?;
    let omega_beta = sandwich(&jac, &weight, &repaired.matrix)
        .ok_or_else(|| Error::RankDeficient(offending_block(&layout, &jac)))?;
    let std_err = omega_beta
        .diagonal()
        .iter()
        .map(|&v| (v.max(0.0) / n as f64).sqrt())
        .collect();

    Ok(GmmResult {
        names: layout.names(),
        beta_hat: layout.unflatten(&theta)?,
        estimates: theta,
        n,
        objective: quad(&gbar, Some(&weight)),
        moments: gbar,
        omega_g: repaired.matrix,
        weight,
        g_hat: jac,
        omega_beta,
        std_err,
        converged,
        objective_trace: trace,
        psd_repaired: repaired.floored > 0,
        bandwidth: b_n,
        equilibrium_iterations: eval.state.iterations,
        equilibrium_residual: eval.state.residual,
        clipped: eval.state.clipped,
        layout,
    })
}

/// `(G'ΞG)^{-1} G'Ξ Ω Ξ G (G'ΞG)^{-1}`, or `None` when `G'ΞG` is singular.
pub fn sandwich(
    jac: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let gw = jac.transpose() * weight;
    let bread = &gw * jac;
    let bread = (&bread + bread.transpose()) * 0.5;
    let inv = bread.cholesky()?.inverse();
    let meat = &gw * omega * gw.transpose();
    let out = &inv * meat * &inv;
    Some((&out + out.transpose()) * 0.5)
}

/// Full pipeline: sequential warm start, first step, second step.
pub fn estimate(
    problem: &MomentProblem,
    hac_cfg: &HacConfig,
    cfg: &GmmConfig,
) -> Result<GmmResult> {
    let start = sequential_start(problem, cfg)?;
    let step1 = solve_step1(problem, &start, cfg)?;
    solve_step2(problem, &step1, hac_cfg, cfg)
}

/// Two-sided normal critical value for a confidence `level`.
pub fn critical_value(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + 0.5 * level)
}

/// `β̂_j ± z · se_j` for every parameter.
pub fn confidence_interval(res: &GmmResult, level: f64) -> Vec<(f64, f64)> {
    let z = critical_value(level);
    res.estimates
        .iter()
        .zip(&res.std_err)
        .map(|(&b, &s)| (b - z * s, b + z * s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// `T_n = n r(β̂)' (R' Ω̂_β R)^{-1} r(β̂)` with the chi-square(k) p-value.
/// `r_jac` returns the d × k Jacobian `R`.
pub fn wald_test<F, J>(res: &GmmResult, r: F, r_jac: J) -> Result<WaldTest>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let rv = DVector::from_vec(r(&res.estimates));
    let k = rv.len();
    let big_r = r_jac(&res.estimates);
    if big_r.nrows() != res.estimates.len() || big_r.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "restriction Jacobian is {}x{}, expected {}x{k}",
            big_r.nrows(),
            big_r.ncols(),
            res.estimates.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("no restrictions".into()));
    }
    if rv.iter().all(|&v| v == 0.0) {
        return Ok(WaldTest {
            statistic: 0.0,
            p_value: 1.0,
            df: k,
        });
    }
    let middle = big_r.transpose() * &res.omega_beta * &big_r;
    let middle = (&middle + middle.transpose()) * 0.5;
    let solved = middle
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("restriction covariance".into()))?
        .solve(&rv);
    let statistic = res.n as f64 * rv.dot(&solved);
    let chi = ChiSquared::new(k as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(WaldTest {
        statistic,
        p_value: 1.0 - chi.cdf(statistic),
        df: k,
    })
}

/// Wald test of the single restriction `β_j = value`.
pub fn wald_single(res: &GmmResult, j: usize, value: f64) -> Result<WaldTest> {
    let d = res.estimates.len();
    wald_test(
        res,
        |b| vec![b[j] - value],
        |_| {
            let mut m = DMatrix::zeros(d, 1);
            m[(j, 0)] = 1.0;
            m
        },
    )
}

/// Exposure label of the cell containing flat index `j`, if any.
pub fn cell_of_index(layout: &Layout, j: usize) -> Option<ExposureLabel> {
    layout.labels().find(|&t| {
        let o = layout.cell_offset(t).expect("present");
        (o..o + layout.cell_len()).contains(&j)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_result(estimates: Vec<f64>, std_err: Vec<f64>, n: usize) -> GmmResult {
        let d = estimates.len();
        let omega_beta = DMatrix::from_diagonal(&DVector::from_iterator(
            d,
            std_err.iter().map(|s| s * s * n as f64),
        ));
        let layout = Layout {
            beta_d_len: d,
            beta_x_len: 1,
            lambda_free: false,
            fixed_lambda: 0.0,
            present: [false; 4],
        };
        GmmResult {
            names: layout.names(),
            beta_hat: layout.unflatten(&estimates).unwrap(),
            estimates,
            n,
            moments: DVector::zeros(d),
            omega_g: DMatrix::identity(d, d),
            weight: DMatrix::identity(d, d),
            g_hat: DMatrix::identity(d, d),
            omega_beta,
            std_err,
            converged: true,
            objective: 0.0,
            objective_trace: vec![0.0],
            psd_repaired: false,
            bandwidth: 1.0,
            equilibrium_iterations: 1,
            equilibrium_residual: 0.0,
            clipped: 0,
            layout,
        }
    }

    #[test]
    fn critical_value_matches_table() {
        assert!((critical_value(0.95) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn interval_arithmetic() {
        let res = toy_result(vec![1.0, 2.0], vec![0.1, 0.0], 100);
        let ci = confidence_interval(&res, 0.95);
        assert!((ci[0].0 - 0.80400).abs() < 5e-6 && (ci[0].1 - 1.19600).abs() < 5e-6);
        assert_eq!(ci[1], (2.0, 2.0));
    }

    #[test]
    fn wald_zero_restriction() {
        let res = toy_result(vec![1.0, 2.0], vec![0.1, 0.2], 100);
        let w = wald_single(&res, 0, 1.0).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert_eq!(w.p_value, 1.0);
    }

    #[test]
    fn wald_single_is_squared_t_ratio() {
        let res = toy_result(vec![1.3, 2.0], vec![0.1, 0.2], 400);
        let w = wald_single(&res, 0, 1.0).unwrap();
        let t = (1.3 - 1.0) / 0.1;
        assert!((w.statistic - t * t).abs() < 1e-10);
        assert!(w.p_value < 0.01);
    }

    #[test]
    fn wald_rank_error() {
        let mut res = toy_result(vec![1.3, 2.0], vec![0.1, 0.2], 400);
        res.omega_beta = DMatrix::zeros(2, 2);
        assert!(matches!(
            wald_single(&res, 0, 1.0),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn sandwich_with_efficient_weight_simplifies() {
        let jac = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.1, 2.0, 0.3, 0.0, -0.4, 1.5]);
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.8]);
        let weight = omega.clone().try_inverse().unwrap();
        let s = sandwich(&jac, &weight, &omega).unwrap();
        let simple = (jac.transpose() * &weight * &jac).try_inverse().unwrap();
        assert!((s - simple).amax() < 1e-8);
    }

    #[test]
    fn logit_mle_zeroes_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 500;
        let z = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        let d: Vec<u8> = (0..n)
            .map(|i| (logistic(0.5 * z[(i, 1)]) > rng.random::<f64>()) as u8)
            .collect();
        let b = logit_mle(&z, &d).unwrap();
        let mut score = [0.0; 2];
        for i in 0..n {
            let p = logistic(b[0] + b[1] * z[(i, 1)]);
            for k in 0..2 {
                score[k] += (d[i] as f64 - p) * z[(i, k)];
            }
        }
        assert!(score.iter().all(|s| s.abs() < 1e-9));
    }
}
