//! Plug-in marginal exposure responses (MER) and effects (MEE) with
//! delta-method standard errors.
//!
//! `MER(t, x, p) = x'β_X(t) + p β_p(t)`. Both quantities are linear in the
//! estimates, so the delta method is exact given the parameter covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exposure::ExposureLabel;
use crate::gmm::{critical_value, GmmResult};
use crate::moments::Layout;

/// Default heterogeneity quantiles for MER tables.
pub const DEFAULT_P_GRID: [f64; 3] = [0.2, 0.5, 0.8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effect {
    pub value: f64,
    pub std_err: f64,
}

/// Estimates with covariance, detached from the estimation run. Enough to
/// evaluate effects, e.g. after reading a saved estimates artifact.
#[derive(Debug, Clone)]
pub struct EffectInputs {
    pub layout: Layout,
    pub estimates: Vec<f64>,
    /// Covariance of the estimates (already divided by n).
    pub covariance: DMatrix<f64>,
}

impl From<&GmmResult> for EffectInputs {
    fn from(res: &GmmResult) -> Self {
        EffectInputs {
            layout: res.layout.clone(),
            estimates: res.estimates.clone(),
            covariance: res.covariance(),
        }
    }
}

fn check_query(layout: &Layout, x: &[f64], p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile p must lie in (0, 1), got {p}"
        )));
    }
    if x.len() != layout.beta_x_len {
        return Err(Error::DimensionMismatch(format!(
            "covariate point has {} entries, expected {} (intercept first)",
            x.len(),
            layout.beta_x_len
        )));
    }
    Ok(())
}

/// Flat-layout gradient of `MER(t, x, p)`.
fn mer_gradient(layout: &Layout, t: ExposureLabel, x: &[f64], p: f64) -> Result<DVector<f64>> {
    let o = layout
        .cell_offset(t)
        .ok_or_else(|| Error::AbsentCell(t.to_string()))?;
    let mut a = DVector::zeros(layout.len());
    for (k, &xk) in x.iter().enumerate() {
        a[o + k] = xk;
    }
    a[o + layout.beta_x_len] = p;
    Ok(a)
}

fn linear_effect(inputs: &EffectInputs, a: &DVector<f64>) -> Effect {
    let b = DVector::from_column_slice(&inputs.estimates);
    let value = a.dot(&b);
    let var = (a.transpose() * &inputs.covariance * a)[(0, 0)];
    Effect {
        value,
        std_err: var.max(0.0).sqrt(),
    }
}

pub fn mer(inputs: &EffectInputs, t: ExposureLabel, x: &[f64], p: f64) -> Result<Effect> {
    check_query(&inputs.layout, x, p)?;
    let a = mer_gradient(&inputs.layout, t, x, p)?;
    Ok(linear_effect(inputs, &a))
}

/// `MER(t_to) - MER(t_from)` with the standard error of the difference.
pub fn mee(
    inputs: &EffectInputs,
    t_from: ExposureLabel,
    t_to: ExposureLabel,
    x: &[f64],
    p: f64,
) -> Result<Effect> {
    check_query(&inputs.layout, x, p)?;
    let a = mer_gradient(&inputs.layout, t_to, x, p)? - mer_gradient(&inputs.layout, t_from, x, p)?;
    Ok(linear_effect(inputs, &a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MerRow {
    pub label: ExposureLabel,
    pub p: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// MER for every estimated label and grid point, label-major.
pub fn mer_table(
    inputs: &EffectInputs,
    x: &[f64],
    p_grid: &[f64],
    level: f64,
) -> Result<Vec<MerRow>> {
    let z = critical_value(level);
    let mut rows = Vec::new();
    for t in inputs.layout.labels() {
        for &p in p_grid {
            let e = mer(inputs, t, x, p)?;
            rows.push(MerRow {
                label: t,
                p,
                estimate: e.value,
                std_err: e.std_err,
                ci_lower: e.value - z * e.std_err,
                ci_upper: e.value + z * e.std_err,
            });
        }
    }
    Ok(rows)
}
