use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exposure::{exposure_map, ExposureLabel};
use crate::graph::Graph;

/// Node-level observations. `x` and `z` are design matrices whose first
/// column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub d: Vec<u8>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub labels: Vec<ExposureLabel>,
}

fn with_intercept(raw: &DMatrix<f64>) -> DMatrix<f64> {
    raw.clone().insert_column(0, 1.0)
}

impl Dataset {
    /// Builds a dataset from raw covariates and instruments (no intercept
    /// columns); exposure labels are derived from `g`.
    pub fn new(
        g: &Graph,
        y: Vec<f64>,
        d: Vec<u8>,
        covariates: &DMatrix<f64>,
        instruments: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = g.node_count();
        if y.len() != n || d.len() != n || covariates.nrows() != n || instruments.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} rows; got y {}, d {}, covariates {}, instruments {}",
                y.len(),
                d.len(),
                covariates.nrows(),
                instruments.nrows()
            )));
        }
        let labels = exposure_map(g, &d)?;
        Ok(Dataset {
            y,
            d,
            x: with_intercept(covariates),
            z: with_intercept(instruments),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of covariates excluding the intercept.
    pub fn covariate_count(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Number of instruments excluding the intercept.
    pub fn instrument_count(&self) -> usize {
        self.z.ncols() - 1
    }

    pub fn covariates(&self) -> DMatrix<f64> {
        self.x.columns(1, self.covariate_count()).into_owned()
    }

    pub fn instruments(&self) -> DMatrix<f64> {
        self.z.columns(1, self.instrument_count()).into_owned()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        let mut out = self.clone();
        for i in 0..n {
            let k = perm[i];
            out.y[k] = self.y[i];
            out.d[k] = self.d[i];
            out.labels[k] = self.labels[i];
            out.x.set_row(k, &self.x.row(i));
            out.z.set_row(k, &self.z.row(i));
        }
        out
    }
}
