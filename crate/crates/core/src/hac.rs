//! Network HAC covariance of moment rows with the Parzen kernel over
//! graph-distance lags, plus eigenvalue-floor repair.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::DistanceIndex;
use crate::moments::column_means;

/// Eigenvalues below this are raised to it by [`psd_repair`].
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HacConfig {
    /// Bandwidth constant `c`.
    pub c: f64,
    /// Floor on the average degree entering the log: `avg_deg ∨ (1 + epsilon)`.
    pub epsilon: f64,
}

impl Default for HacConfig {
    fn default() -> Self {
        HacConfig {
            c: 2.0,
            epsilon: 0.05,
        }
    }
}

impl HacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "HAC constants must be positive, got c = {}, epsilon = {}",
                self.c, self.epsilon
            )));
        }
        Ok(())
    }
}

pub fn parzen(z: f64) -> f64 {
    let a = z.abs();
    if a <= 0.5 {
        1.0 - 6.0 * a * a + 6.0 * a * a * a
    } else if a <= 1.0 {
        2.0 * (1.0 - a).powi(3)
    } else {
        0.0
    }
}

/// `b_n = c log(n) / log(max(avg_deg, 1 + epsilon))`.
pub fn bandwidth(n: usize, avg_deg: f64, cfg: &HacConfig) -> f64 {
    cfg.c * (n as f64).ln() / avg_deg.max(1.0 + cfg.epsilon).ln()
}

/// Largest lag with non-zero kernel weight.
pub fn max_lag(b_n: f64) -> usize {
    b_n.floor().max(0.0) as usize
}

/// `Ω̂ = Σ_s parzen(s / b_n) Σ̂(s)` where `Σ̂(s)` averages the cross products
/// of demeaned rows over ordered pairs at path distance exactly `s`.
pub fn hac_covariance(rows: &DMatrix<f64>, dist: &DistanceIndex, b_n: f64) -> Result<DMatrix<f64>> {
    let n = rows.nrows();
    let d = rows.ncols();
    if dist.node_count() != n {
        return Err(Error::DimensionMismatch(format!(
            "distance index over {} nodes for {} moment rows",
            dist.node_count(),
            n
        )));
    }
    let lags = max_lag(b_n);
    if !dist.covers(lags) {
        return Err(Error::Precondition(format!(
            "distance index radius {} below the bandwidth lag {lags}",
            dist.radius()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(d, d));
    }
    let weights: Vec<f64> = (0..=lags).map(|s| parzen(s as f64 / b_n)).collect();

    // Demeaned rows stored node-major for cache-friendly access.
    let mean = column_means(rows);
    let mut centered = vec![0.0; n * d];
    for i in 0..n {
        for c in 0..d {
            centered[i * d + c] = rows[(i, c)] - mean[c];
        }
    }
    let row = |i: usize| &centered[i * d..(i + 1) * d];

    // Ω̂ = n^{-1} Σ_i g_i h_i' with h_i = Σ_s w_s Σ_{j ∈ N∂(i,s)} g_j.
    let chunk = 64;
    let partials: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|nodes| {
            let mut acc = vec![0.0; d * d];
            let mut h = vec![0.0; d];
            for &i in nodes {
                h.iter_mut().for_each(|v| *v = 0.0);
                for (s, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for &j in dist.layer(i, s) {
                        for (hc, gc) in h.iter_mut().zip(row(j)) {
                            *hc += w * gc;
                        }
                    }
                }
                let gi = row(i);
                for a in 0..d {
                    let ga = gi[a];
                    for b in 0..d {
                        acc[a * d + b] += ga * h[b];
                    }
                }
            }
            acc
        })
        .collect();

    // Fixed-order reduction keeps the result independent of scheduling.
    let mut total = vec![0.0; d * d];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let omega = DMatrix::from_row_slice(d, d, &total) / n as f64;
    Ok((&omega + omega.transpose()) * 0.5)
}

/// Eigenvalue-floored copy of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Repaired {
    pub matrix: DMatrix<f64>,
    /// Floored eigenvalues and their eigenvectors; `matrix` is their product.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub floored: usize,
}

impl Repaired {
    /// Inverse assembled from the eigen factors.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.eigenvalues.map(|v| 1.0 / v);
        let q = &self.eigenvectors;
        let out = q * DMatrix::from_diagonal(&inv) * q.transpose();
        (&out + out.transpose()) * 0.5
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }
}

pub fn psd_repair(m: &DMatrix<f64>) -> Result<Repaired> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite entry in covariance matrix".into(),
        ));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let floored = eig.eigenvalues.iter().filter(|&&v| v < EIGEN_FLOOR).count();
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let matrix = if floored == 0 {
        sym
    } else {
        let q = &eig.eigenvectors;
        let out = q * DMatrix::from_diagonal(&vals) * q.transpose();
        (&out + out.transpose()) * 0.5
    };
    Ok(Repaired {
        matrix,
        eigenvalues: vals,
        eigenvectors: eig.eigenvectors,
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{bfs_layers, ring, Graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parzen_values() {
        assert_eq!(parzen(0.0), 1.0);
        assert!((parzen(0.5) - 0.25).abs() < 1e-15);
        assert!((parzen(0.75) - 0.03125).abs() < 1e-15);
        assert_eq!(parzen(1.2), 0.0);
        assert_eq!(parzen(-0.3), parzen(0.3));
    }

    #[test]
    fn bandwidth_values() {
        let cfg = HacConfig::default();
        let b = bandwidth(1000, 2.0, &cfg);
        assert!((b - 2.0 * 1000f64.ln() / 2f64.ln()).abs() < 1e-12);
        assert!((b - 19.93).abs() < 0.01);
        let empty = bandwidth(1000, 0.0, &cfg);
        assert!((empty - 2.0 * 1000f64.ln() / 1.05f64.ln()).abs() < 1e-9);
        let doubled = bandwidth(1000, 2.0, &HacConfig { c: 4.0, ..cfg });
        assert!((doubled - 2.0 * b).abs() < 1e-12);
    }

    fn sample_cov(rows: &DMatrix<f64>) -> DMatrix<f64> {
        let n = rows.nrows();
        let mean = column_means(rows);
        let mut out = DMatrix::zeros(rows.ncols(), rows.ncols());
        for i in 0..n {
            let g = rows.row(i).transpose() - &mean;
            out += &g * g.transpose();
        }
        out / n as f64
    }

    #[test]
    fn empty_graph_is_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = Graph::empty(30);
        let b = bandwidth(30, g.average_degree(), &HacConfig::default());
        let idx = bfs_layers(&g, max_lag(b));
        let omega = hac_covariance(&rows, &idx, b).unwrap();
        assert!((omega - sample_cov(&rows)).amax() < 1e-15);
    }

    #[test]
    fn exhaustive_index_serves_any_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let g = Graph::from_edges(8, [(0, 1), (1, 2), (4, 5)]).unwrap();
        let short = hac_covariance(&rows, &bfs_layers(&g, 2), 40.0).unwrap();
        let long = hac_covariance(&rows, &bfs_layers(&g, 40), 40.0).unwrap();
        assert_eq!(short, long);
        assert!(bfs_layers(&g, 1).covers(1));
        assert!(!bfs_layers(&g, 1).covers(2));
        assert!(bfs_layers(&Graph::empty(5), 0).covers(300));
    }

    #[test]
    fn radius_too_small_rejected() {
        let rows = DMatrix::zeros(6, 2);
        let idx = bfs_layers(&ring(6).unwrap(), 1);
        assert!(hac_covariance(&rows, &idx, 3.5).is_err());
    }

    #[test]
    fn iid_rows_on_large_ring_near_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let g = ring(n).unwrap();
        let rows = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = bandwidth(n, g.average_degree(), &HacConfig::default());
        let idx = bfs_layers(&g, max_lag(b));
        let omega = hac_covariance(&rows, &idx, b).unwrap();
        let s = sample_cov(&rows);
        let rel = (&omega - &s).norm() / s.norm();
        assert!(rel < 0.10, "relative Frobenius gap {rel}");
    }

    #[test]
    fn scaling_rows_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ring(50).unwrap();
        let rows = DMatrix::from_fn(50, 2, |_, _| rng.random_range(-1.0..1.0));
        let idx = bfs_layers(&g, 6);
        let a = hac_covariance(&rows, &idx, 6.5).unwrap();
        let b = hac_covariance(&(&rows * 3.0), &idx, 6.5).unwrap();
        assert!((b - a * 9.0).amax() < 1e-12);
    }

    #[test]
    fn repair_keeps_pd_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = psd_repair(&m).unwrap();
        assert_eq!(r.floored, 0);
        assert!((r.matrix - m).amax() < 1e-12);
    }

    #[test]
    fn repair_floors_negative_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let r = psd_repair(&m).unwrap();
        assert_eq!(r.floored, 1);
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-10]);
        assert!((r.matrix - expect).amax() < 1e-15);
    }

    #[test]
    fn repair_rank_one() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = &v * v.transpose();
        let r = psd_repair(&m).unwrap();
        assert_eq!(r.floored, 2);
        assert!(r.min_eigenvalue() >= EIGEN_FLOOR * (1.0 - 1e-8));
        // Reassembly rounds at the scale of the largest eigenvalue.
        let eig = SymmetricEigen::new(r.matrix.clone());
        assert!(eig.eigenvalues.min() >= EIGEN_FLOOR - 1e-14 * eig.eigenvalues.max());
        let inv = r.inverse();
        assert!((&inv * &r.matrix - DMatrix::identity(3, 3)).amax() < 1e-4);
    }
}
