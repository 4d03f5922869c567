//! Binary exposure mapping: own treatment and whether any neighbor is treated.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExposureLabel {
    pub own: bool,
    pub neigh: bool,
}

impl ExposureLabel {
    /// Label order used in every flat layout and report.
    pub const ALL: [ExposureLabel; 4] = [
        ExposureLabel::new(false, false),
        ExposureLabel::new(true, false),
        ExposureLabel::new(false, true),
        ExposureLabel::new(true, true),
    ];

    pub const fn new(own: bool, neigh: bool) -> Self {
        ExposureLabel { own, neigh }
    }

    /// Position in [`ExposureLabel::ALL`].
    pub fn index(self) -> usize {
        self.own as usize + 2 * self.neigh as usize
    }

    pub fn from_bits(own: u8, neigh: u8) -> Result<Self> {
        if own > 1 || neigh > 1 {
            return Err(Error::InvalidInput(format!(
                "exposure bits must be 0/1, got ({own},{neigh})"
            )));
        }
        Ok(ExposureLabel::new(own == 1, neigh == 1))
    }
}

impl fmt::Display for ExposureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.own as u8, self.neigh as u8)
    }
}

/// `T_i = (D_i, 1{Σ_j A_ij D_j > 0})`.
pub fn exposure_map(g: &Graph, d: &[u8]) -> Result<Vec<ExposureLabel>> {
    if d.len() != g.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} treatments for {} nodes",
            d.len(),
            g.node_count()
        )));
    }
    if let Some(i) = d.iter().position(|&v| v > 1) {
        return Err(Error::InvalidInput(format!(
            "treatment of node {i} is {}, expected 0 or 1",
            d[i]
        )));
    }
    Ok((0..g.node_count())
        .map(|i| ExposureLabel::new(d[i] == 1, g.neighbors(i).iter().any(|&j| d[j] == 1)))
        .collect())
}

/// Observation count per label, in [`ExposureLabel::ALL`] order.
pub fn cell_counts(labels: &[ExposureLabel]) -> [usize; 4] {
    let mut counts = [0; 4];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}
