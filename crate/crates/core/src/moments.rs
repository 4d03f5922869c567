//! Stacked just-identified moment vector: first-stage likelihood scores and
//! per-exposure-cell least-squares conditions.
//!
//! Flat parameter layout: `[β_D (intercept first), λ, then for each present
//! label in (0,0), (1,0), (0,1), (1,1) order: β_X(t) (intercept first),
//! β_p(t)]`. `λ` is omitted when the graph has no edges, since it does not
//! enter the model there; labels failing the cell-count guard are omitted.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::equilibrium::{
    equilibrium_state, EquilibriumState, FirstStageParams, JacobianMethod, SolverConfig,
};
use crate::error::{Error, Result};
use crate::exposure::{cell_counts, ExposureLabel};
use crate::graph::Graph;

/// Outcome coefficients of one exposure cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub beta_x: Vec<f64>,
    pub beta_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub first: FirstStageParams,
    /// Indexed by [`ExposureLabel::index`]; `None` for an unestimated cell.
    pub cells: [Option<CellParams>; 4],
}

impl ParamVector {
    pub fn cell(&self, t: ExposureLabel) -> Option<&CellParams> {
        self.cells[t.index()].as_ref()
    }

    pub fn to_flat(&self, layout: &Layout) -> Vec<f64> {
        let mut out = Vec::with_capacity(layout.len());
        out.extend_from_slice(&self.first.beta_d);
        if layout.lambda_free {
            out.push(self.first.lambda);
        }
        for t in layout.labels() {
            let c = self.cells[t.index()]
                .as_ref()
                .expect("layout lists a cell the parameter vector lacks");
            out.extend_from_slice(&c.beta_x);
            out.push(c.beta_p);
        }
        out
    }

    /// The parameter vector restricted to what `layout` estimates.
    pub fn restricted(&self, layout: &Layout) -> ParamVector {
        let mut out = self.clone();
        if !layout.lambda_free {
            out.first.lambda = layout.fixed_lambda;
        }
        for t in ExposureLabel::ALL {
            if !layout.present[t.index()] {
                out.cells[t.index()] = None;
            }
        }
        out
    }
}

/// Shape of the flat parameter vector for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub beta_d_len: usize,
    pub beta_x_len: usize,
    pub lambda_free: bool,
    /// Value used for `λ` when it is not estimated.
    pub fixed_lambda: f64,
    pub present: [bool; 4],
}

impl Layout {
    /// Full layout with every cell present.
    pub fn full(beta_d_len: usize, beta_x_len: usize) -> Self {
        Layout {
            beta_d_len,
            beta_x_len,
            lambda_free: true,
            fixed_lambda: 0.0,
            present: [true; 4],
        }
    }

    /// Layout implied by the data: cells with fewer than `beta_x_len + 1`
    /// observations are dropped and `λ` is fixed at 0 on an edgeless graph.
    pub fn for_data(g: &Graph, data: &Dataset) -> Self {
        let beta_x_len = data.x.ncols();
        let counts = cell_counts(&data.labels);
        let mut present = [false; 4];
        for k in 0..4 {
            present[k] = counts[k] > beta_x_len;
        }
        Layout {
            beta_d_len: data.z.ncols(),
            beta_x_len,
            lambda_free: g.edge_count() > 0,
            fixed_lambda: 0.0,
            present,
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = ExposureLabel> + '_ {
        ExposureLabel::ALL
            .into_iter()
            .filter(|t| self.present[t.index()])
    }

    pub fn first_len(&self) -> usize {
        self.beta_d_len + self.lambda_free as usize
    }

    pub fn cell_len(&self) -> usize {
        self.beta_x_len + 1
    }

    pub fn len(&self) -> usize {
        self.first_len() + self.labels().count() * self.cell_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda_offset(&self) -> Option<usize> {
        self.lambda_free.then_some(self.beta_d_len)
    }

    /// Offset of the `β_X(t)` block, `None` when the cell is absent.
    pub fn cell_offset(&self, t: ExposureLabel) -> Option<usize> {
        if !self.present[t.index()] {
            return None;
        }
        let before = self.labels().take_while(|&u| u != t).count();
        Some(self.first_len() + before * self.cell_len())
    }

    /// Human-readable parameter names in flat order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.beta_d_len).map(|k| format!("beta_D{k}")).collect();
        if self.lambda_free {
            names.push("lambda".into());
        }
        for t in self.labels() {
            for k in 0..self.beta_x_len {
                names.push(format!("beta_X{k}{t}"));
            }
            names.push(format!("beta_p{t}"));
        }
        names
    }

    /// Name of the block that flat index `j` belongs to.
    pub fn block_name(&self, j: usize) -> String {
        if j < self.beta_d_len {
            return "beta_D".into();
        }
        if j < self.first_len() {
            return "lambda".into();
        }
        let cell = (j - self.first_len()) / self.cell_len();
        match self.labels().nth(cell) {
            Some(t) => format!("cell {t}"),
            None => format!("index {j}"),
        }
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamVector> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector of length {} for layout of length {}",
                flat.len(),
                self.len()
            )));
        }
        let beta_d = flat[..self.beta_d_len].to_vec();
        let lambda = match self.lambda_offset() {
            Some(o) => flat[o],
            None => self.fixed_lambda,
        };
        let mut cells: [Option<CellParams>; 4] = Default::default();
        for t in self.labels() {
            let o = self.cell_offset(t).expect("present cell");
            cells[t.index()] = Some(CellParams {
                beta_x: flat[o..o + self.beta_x_len].to_vec(),
                beta_p: flat[o + self.beta_x_len],
            });
        }
        Ok(ParamVector {
            first: FirstStageParams::new(beta_d, lambda),
            cells,
        })
    }
}

/// Per-node moment rows and their mean.
#[derive(Debug, Clone)]
pub struct MomentEvaluation {
    pub rows: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub state: EquilibriumState,
}

/// First-stage score rows, one column per `β_D` entry followed by `λ` when
/// `include_lambda` is set.
pub fn first_stage_scores(
    state: &EquilibriumState,
    g: &Graph,
    z: &DMatrix<f64>,
    d: &[u8],
    params: &FirstStageParams,
    include_lambda: bool,
) -> Result<DMatrix<f64>> {
    let n = g.node_count();
    let k = z.ncols();
    if z.nrows() != n || d.len() != n || state.p.len() != n || state.dp_dbeta.ncols() != k {
        return Err(Error::DimensionMismatch(
            "first-stage inputs disagree on shape".into(),
        ));
    }
    let lambda = params.lambda;
    let cols = k + include_lambda as usize;
    let mut rows = DMatrix::zeros(n, cols);
    for c in 0..k {
        let dp = state.dp_dbeta.column(c);
        let dp: &[f64] = dp.as_slice();
        for i in 0..n {
            let resid = d[i] as f64 - state.p[i];
            rows[(i, c)] = resid * (z[(i, c)] + lambda * g.neighbor_share(dp, i));
        }
    }
    if include_lambda {
        for i in 0..n {
            let resid = d[i] as f64 - state.p[i];
            rows[(i, k)] = resid
                * (g.neighbor_share(&state.p, i) + lambda * g.neighbor_share(&state.dp_dlambda, i));
        }
    }
    Ok(rows)
}

/// Control-function regressor `E[V | selection]`: `P/2` for treated cells,
/// `(1 + P)/2` for untreated cells.
pub fn cell_regressor(t: ExposureLabel, p: f64) -> f64 {
    if t.own {
        0.5 * p
    } else {
        0.5 * (1.0 + p)
    }
}

/// Least-squares moment rows of cell `t`: `1{T_i = t} 2 X_i r_i` and
/// `1{T_i = t} 2 m_i r_i` with `r_i = Y_i - X_i'β_X - m_i β_p`.
pub fn second_stage_rows(
    t: ExposureLabel,
    y: &[f64],
    x: &DMatrix<f64>,
    labels: &[ExposureLabel],
    p: &[f64],
    beta_x: &[f64],
    beta_p: f64,
) -> Result<DMatrix<f64>> {
    let n = y.len();
    let kx = x.ncols();
    if x.nrows() != n || labels.len() != n || p.len() != n || beta_x.len() != kx {
        return Err(Error::DimensionMismatch(
            "second-stage inputs disagree on shape".into(),
        ));
    }
    let mut rows = DMatrix::zeros(n, kx + 1);
    for i in 0..n {
        if labels[i] != t {
            continue;
        }
        let m = cell_regressor(t, p[i]);
        let fit: f64 = (0..kx).map(|c| x[(i, c)] * beta_x[c]).sum::<f64>() + m * beta_p;
        let r = y[i] - fit;
        for c in 0..kx {
            rows[(i, c)] = 2.0 * x[(i, c)] * r;
        }
        rows[(i, kx)] = 2.0 * m * r;
    }
    Ok(rows)
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Column means using pairwise summation.
pub fn column_means(rows: &DMatrix<f64>) -> DVector<f64> {
    let n = rows.nrows();
    let data = rows.as_slice();
    DVector::from_iterator(
        rows.ncols(),
        (0..rows.ncols()).map(|c| pairwise_sum(&data[c * n..(c + 1) * n]) / n.max(1) as f64),
    )
}

/// Concatenates blocks column-wise and returns the rows with their mean.
pub fn stack(blocks: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    if let Some(b) = blocks.iter().find(|b| b.nrows() != n) {
        return Err(Error::DimensionMismatch(format!(
            "moment block with {} rows, expected {n}",
            b.nrows()
        )));
    }
    let d: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut rows = DMatrix::zeros(n, d);
    let mut c = 0;
    for b in blocks {
        rows.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    let mean = column_means(&rows);
    Ok((rows, mean))
}

/// A dataset and network bundled with the numerical settings needed to
/// evaluate the moment vector at any parameter value.
#[derive(Debug, Clone)]
pub struct MomentProblem<'a> {
    pub graph: &'a Graph,
    pub data: &'a Dataset,
    pub layout: Layout,
    pub solver: SolverConfig,
    pub jacobian: JacobianMethod,
}

impl<'a> MomentProblem<'a> {
    pub fn new(graph: &'a Graph, data: &'a Dataset) -> Result<Self> {
        if data.len() != graph.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} rows for {} nodes",
                data.len(),
                graph.node_count()
            )));
        }
        Ok(MomentProblem {
            graph,
            data,
            layout: Layout::for_data(graph, data),
            solver: SolverConfig {
                tol: 1e-13,
                max_iter: 10_000,
            },
            jacobian: JacobianMethod::Auto,
        })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn equilibrium(&self, first: &FirstStageParams) -> Result<EquilibriumState> {
        equilibrium_state(self.graph, &self.data.z, first, self.solver, self.jacobian)
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<MomentEvaluation> {
        let state = self.equilibrium(&theta.first)?;
        self.evaluate_with_state(state, theta)
    }

    pub fn evaluate_flat(&self, flat: &[f64]) -> Result<MomentEvaluation> {
        self.evaluate(&self.layout.unflatten(flat)?)
    }

    /// Evaluates the moments with a precomputed equilibrium, which must
    /// correspond to `theta.first`.
    pub fn evaluate_with_state(
        &self,
        state: EquilibriumState,
        theta: &ParamVector,
    ) -> Result<MomentEvaluation> {
        let mut blocks = Vec::with_capacity(1 + 4);
        blocks.push(self.first_stage_block(&state, &theta.first)?);
        for t in self.layout.labels() {
            blocks.push(self.cell_block(t, &state.p, theta)?);
        }
        let (rows, mean) = stack(&blocks)?;
        Ok(MomentEvaluation { rows, mean, state })
    }

    pub fn first_stage_block(
        &self,
        state: &EquilibriumState,
        first: &FirstStageParams,
    ) -> Result<DMatrix<f64>> {
        first_stage_scores(
            state,
            self.graph,
            &self.data.z,
            &self.data.d,
            first,
            self.layout.lambda_free,
        )
    }

    pub fn cell_block(
        &self,
        t: ExposureLabel,
        p: &[f64],
        theta: &ParamVector,
    ) -> Result<DMatrix<f64>> {
        let c = theta
            .cell(t)
            .ok_or_else(|| Error::AbsentCell(t.to_string()))?;
        second_stage_rows(
            t,
            &self.data.y,
            &self.data.x,
            &self.data.labels,
            p,
            &c.beta_x,
            c.beta_p,
        )
    }
}
