//! Principal-component projection of summary vectors via the covariance
//! eigendecomposition (nalgebra's symmetric eigensolver).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// n x out_dims projected coordinates.
    pub coordinates: Array2<f64>,
    /// Share of total variance carried by each kept component.
    pub explained_variance_ratio: Vec<f64>,
    /// Components beyond the data's rank, zeroed in the output.
    pub rank_deficient_dims: usize,
}

/// Center the vectors, take the top eigenvectors of the covariance, and
/// project. Component signs are fixed so each eigenvector's first nonzero
/// entry is positive. Directions with (numerically) zero variance yield
/// all-zero coordinates.
pub fn pca_project(vectors: &Array2<f64>, out_dims: usize) -> Result<PcaResult> {
    let n = vectors.nrows();
    let d = vectors.ncols();
    if out_dims == 0 || out_dims > d {
        return Err(Error::InvalidConfig(format!(
            "out_dims must be in 1..={d}, got {out_dims}"
        )));
    }
    if n < out_dims + 1 {
        return Err(Error::TooFewRecords {
            required: out_dims + 1,
            actual: n,
        });
    }

    let mean: Vec<f64> = (0..d)
        .map(|c| vectors.column(c).sum() / n as f64)
        .collect();
    let mut centered = vectors.clone();
    for mut row in centered.rows_mut() {
        for c in 0..d {
            row[c] -= mean[c];
        }
    }

    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut sum = 0.0;
            for r in 0..n {
                sum += centered[[r, i]] * centered[[r, j]];
            }
            let value = sum / n as f64;
            cov[(i, j)] = value;
            cov[(j, i)] = value;
        }
    }

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));

    let total_variance: f64 = eigen.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let tol = 1e-10 * total_variance.max(1e-300);

    let mut coordinates = Array2::zeros((n, out_dims));
    let mut explained = Vec::with_capacity(out_dims);
    let mut rank_deficient_dims = 0;
    for (k, &idx) in order.iter().take(out_dims).enumerate() {
        let eigenvalue = eigen.eigenvalues[idx];
        if eigenvalue <= tol {
            log::warn!(
                "component {k} has numerically zero variance; its coordinates are zero"
            );
            rank_deficient_dims += 1;
            explained.push(0.0);
            continue;
        }
        let mut axis: Vec<f64> = eigen.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                for v in &mut axis {
                    *v = -*v;
                }
            }
        }
        for r in 0..n {
            let mut proj = 0.0;
            for c in 0..d {
                proj += centered[[r, c]] * axis[c];
            }
            coordinates[[r, k]] = proj;
        }
        explained.push(if total_variance > 0.0 {
            eigenvalue / total_variance
        } else {
            0.0
        });
    }
    Ok(PcaResult {
        coordinates,
        explained_variance_ratio: explained,
        rank_deficient_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn collinear_points_collapse_to_one_axis() {
        let data = arr2(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let result = pca_project(&data, 2).unwrap();
        assert_eq!(result.rank_deficient_dims, 1);
        for r in 0..3 {
            assert!(result.coordinates[[r, 1]].abs() < 1e-9);
        }
        // First coordinate spreads along the line through the mean.
        assert!(result.coordinates[[0, 0]] < result.coordinates[[2, 0]]);
    }

    #[test]
    fn full_rank_projection_preserves_pairwise_distances() {
        let data = arr2(&[
            [1.0, 0.5, -0.25],
            [0.0, 2.0, 1.0],
            [-1.0, 0.25, 0.75],
            [0.5, -1.5, 2.0],
            [2.0, 1.0, 0.0],
        ]);
        let result = pca_project(&data, 3).unwrap();
        for i in 0..5 {
            for j in (i + 1)..5 {
                let orig: f64 = (0..3)
                    .map(|c| (data[[i, c]] - data[[j, c]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let proj: f64 = (0..3)
                    .map(|c| (result.coordinates[[i, c]] - result.coordinates[[j, c]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((orig - proj).abs() < 1e-9, "distance {i}-{j} changed");
            }
        }
    }

    // Data stretched along the first axis with variances 4 and 1: the
    // first component is that axis and carries 80% of the variance.
    #[test]
    fn axis_aligned_covariance_recovers_axes() {
        let mut rows = Vec::new();
        for i in 0..40 {
            let t = (i as f64 / 39.0) * 2.0 - 1.0;
            rows.push([2.0 * t * (3.0_f64).sqrt(), 0.0]);
            rows.push([0.0, t * (3.0_f64).sqrt()]);
        }
        // Variance of t over the uniform grid is ~1/3; the scaling makes
        // column variances ~4 and ~1, i.e. a diag(4, 1) covariance.
        let data = Array2::from_shape_vec(
            (rows.len(), 2),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap();
        let result = pca_project(&data, 2).unwrap();
        let ratio = result.explained_variance_ratio[0];
        assert!((ratio - 0.8).abs() < 0.02, "explained ratio {ratio}");
        // The first component aligns with the first axis: points on the
        // second axis project near zero on component one.
        assert!(result.coordinates[[1, 0]].abs() < 1e-9);
    }

    #[test]
    fn rotation_of_inputs_leaves_coordinates_invariant() {
        let data = arr2(&[
            [1.0, 0.0],
            [2.0, 0.5],
            [-1.0, -0.25],
            [0.5, 1.5],
            [0.0, -1.0],
        ]);
        let theta: f64 = 1.1;
        let (sin, cos) = theta.sin_cos();
        let mut rotated = data.clone();
        for mut row in rotated.rows_mut() {
            let (x, y) = (row[0], row[1]);
            row[0] = cos * x - sin * y;
            row[1] = sin * x + cos * y;
        }
        let a = pca_project(&data, 2).unwrap();
        let b = pca_project(&rotated, 2).unwrap();
        // The sign convention is applied in each basis, so a component may
        // come back globally negated; anything else would break invariance.
        for c in 0..2 {
            let direct: f64 = (0..5)
                .map(|r| (a.coordinates[[r, c]] - b.coordinates[[r, c]]).abs())
                .sum();
            let flipped: f64 = (0..5)
                .map(|r| (a.coordinates[[r, c]] + b.coordinates[[r, c]]).abs())
                .sum();
            assert!(
                direct.min(flipped) < 1e-9,
                "component {c} moved under input rotation"
            );
        }
    }

    #[test]
    fn too_few_vectors_is_an_error() {
        let data = arr2(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(
            pca_project(&data, 2),
            Err(Error::TooFewRecords { required: 3, .. })
        ));
    }
}
