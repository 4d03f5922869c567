//! Equilibrium propensity scores of the treatment-choice game and their
//! derivatives with respect to the first-stage parameters.
//!
//! The propensities solve `P = logistic(Z β_D + λ Ã P)`. For `|λ| < 4` the map
//! is a sup-norm contraction with modulus at most `|λ| / 4`, so plain
//! fixed-point iteration converges to the unique solution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Bound on the spillover coefficient that guarantees a unique equilibrium.
pub const LAMBDA_BOUND: f64 = 4.0;

/// Propensities are clipped into `[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]`
/// after convergence.
pub const PROPENSITY_CLIP: f64 = 1e-5;

/// Sizes at or below this use a dense LU factorization for the derivative
/// systems; larger graphs use the contraction iteration.
pub const DENSE_JACOBIAN_MAX_N: usize = 200;

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Selection-equation coefficients: `beta_d` (intercept first) and the
/// spillover `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageParams {
    pub beta_d: Vec<f64>,
    pub lambda: f64,
}

impl FirstStageParams {
    pub fn new(beta_d: Vec<f64>, lambda: f64) -> Self {
        FirstStageParams { beta_d, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.abs() < LAMBDA_BOUND) {
            return Err(Error::Precondition(format!(
                "|lambda| must be below {LAMBDA_BOUND}, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Converged propensities (clipped) with iteration diagnostics.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub p: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Number of coordinates moved by clipping.
    pub clipped: usize,
}

/// Propensities together with `∂P/∂β_D` (n × k) and `∂P/∂λ`.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    pub p: Vec<f64>,
    pub dp_dbeta: DMatrix<f64>,
    pub dp_dlambda: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMethod {
    #[default]
    Auto,
    Dense,
    Iterative,
}

fn index(z: &DMatrix<f64>, params: &FirstStageParams) -> Result<DVector<f64>> {
    if z.ncols() != params.beta_d.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but beta_D has {} entries",
            z.ncols(),
            params.beta_d.len()
        )));
    }
    Ok(z * DVector::from_column_slice(&params.beta_d))
}

/// Solves the equilibrium fixed point from the start `P = 0.5`, iterating
/// until the sup-norm update drops below `cfg.tol`.
pub fn solve_equilibrium(
    g: &Graph,
    z: &DMatrix<f64>,
    params: &FirstStageParams,
    cfg: SolverConfig,
) -> Result<FixedPoint> {
    params.validate()?;
    if !(cfg.tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tolerance must be positive, got {}",
            cfg.tol
        )));
    }
    let n = g.node_count();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows for {} nodes",
            z.nrows(),
            n
        )));
    }
    let base = index(z, params)?;
    let lambda = params.lambda;

    let (mut p, iterations, residual) = if lambda == 0.0 || g.edge_count() == 0 {
        // No coupling: a single update is exact.
        (
            base.iter().map(|&t| logistic(t)).collect::<Vec<_>>(),
            1,
            0.0,
        )
    } else {
        let mut p = vec![0.5; n];
        let mut next = vec![0.0; n];
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < cfg.max_iter {
            iterations += 1;
            residual = 0.0;
            for i in 0..n {
                let v = logistic(base[i] + lambda * g.neighbor_share(&p, i));
                residual = residual.max((v - p[i]).abs());
                next[i] = v;
            }
            std::mem::swap(&mut p, &mut next);
            if residual < cfg.tol {
                break;
            }
        }
        if !(residual < cfg.tol) {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        (p, iterations, residual)
    };

    let mut clipped = 0;
    for v in &mut p {
        let c = v.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
        if c != *v {
            clipped += 1;
            *v = c;
        }
    }
    Ok(FixedPoint {
        p,
        iterations,
        residual,
        clipped,
    })
}

/// Derivatives of the equilibrium propensities. Solves
/// `(diag(1 / (P_i (1 - P_i))) - λ Ã) x = b` with `b = Z_k` for each column of
/// the design and `b = Ã P` for the spillover coefficient.
pub fn propensity_jacobian(
    g: &Graph,
    z: &DMatrix<f64>,
    params: &FirstStageParams,
    p: &[f64],
    method: JacobianMethod,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    params.validate()?;
    let n = g.node_count();
    if z.nrows() != n || p.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design rows {}, propensities {}, nodes {}",
            z.nrows(),
            p.len(),
            n
        )));
    }
    let k = z.ncols();
    let mut rhs = DMatrix::zeros(n, k + 1);
    rhs.columns_mut(0, k).copy_from(z);
    let share = g.neighbor_mean(p);
    rhs.set_column(k, &DVector::from_vec(share));

    let dense = match method {
        JacobianMethod::Dense => true,
        JacobianMethod::Iterative => false,
        JacobianMethod::Auto => n <= DENSE_JACOBIAN_MAX_N,
    };
    let sol = if dense {
        solve_dense(g, params.lambda, p, &rhs)?
    } else {
        solve_iterative(g, params.lambda, p, &rhs)?
    };
    let dp_dbeta = sol.columns(0, k).into_owned();
    let dp_dlambda = sol.column(k).iter().copied().collect();
    Ok((dp_dbeta, dp_dlambda))
}

fn solve_dense(g: &Graph, lambda: f64, p: &[f64], rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0 / (p[i] * (1.0 - p[i]));
        let deg = g.degree(i);
        if deg > 0 {
            let w = lambda / deg as f64;
            for &j in g.neighbors(i) {
                m[(i, j)] -= w;
            }
        }
    }
    m.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular("propensity derivative system".into()))
}

// x = W (b + λ Ã x) with W = diag(P (1 - P)); contraction modulus <= |λ| / 4.
fn solve_iterative(g: &Graph, lambda: f64, p: &[f64], rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.len();
    let w: Vec<f64> = p.iter().map(|&v| v * (1.0 - v)).collect();
    let mut out = DMatrix::zeros(n, rhs.ncols());
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for c in 0..rhs.ncols() {
        let b = rhs.column(c);
        for i in 0..n {
            x[i] = w[i] * b[i];
        }
        let mut converged = lambda == 0.0 || g.edge_count() == 0;
        let mut sweeps = 0;
        while !converged {
            sweeps += 1;
            let mut delta: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..n {
                let v = w[i] * (b[i] + lambda * g.neighbor_share(&x, i));
                delta = delta.max((v - x[i]).abs());
                scale = scale.max(v.abs());
                next[i] = v;
            }
            std::mem::swap(&mut x, &mut next);
            converged = delta <= 1e-15 * scale.max(1e-300);
            if sweeps >= 100_000 && !converged {
                return Err(Error::Singular(format!(
                    "propensity derivative iteration stalled (update {delta:e})"
                )));
            }
        }
        out.set_column(c, &DVector::from_column_slice(&x));
    }
    Ok(out)
}

/// Fixed point plus derivatives in one call.
pub fn equilibrium_state(
    g: &Graph,
    z: &DMatrix<f64>,
    params: &FirstStageParams,
    cfg: SolverConfig,
    method: JacobianMethod,
) -> Result<EquilibriumState> {
    let fp = solve_equilibrium(g, z, params, cfg)?;
    let (dp_dbeta, dp_dlambda) = propensity_jacobian(g, z, params, &fp.p, method)?;
    Ok(EquilibriumState {
        p: fp.p,
        dp_dbeta,
        dp_dlambda,
        iterations: fp.iterations,
        residual: fp.residual,
        clipped: fp.clipped,
    })
}
