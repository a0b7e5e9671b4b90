//! Slow reference computations used to cross-check the fast paths.
//!
//! Everything here goes through dense LU inverses or symmetric eigen
//! decompositions from `nalgebra`, sharing no code with [`crate::linalg`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::FeatureBank;
use crate::kernels::{effective_kernel, KernelSpec};
use crate::linalg::Mat;

fn to_dense(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_dense(m: &DMatrix<f64>) -> Mat {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    Mat::from_rows(&rows).expect("rectangular by construction")
}

/// Explicit inverse by LU decomposition.
pub fn dense_inverse(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    to_dense(m)
        .try_inverse()
        .map(|inv| from_dense(&inv))
        .ok_or(Error::NotPositiveDefinite(0.0))
}

/// Log-determinant of a symmetric matrix from its eigenvalues.
pub fn logdet_eigen(m: &Mat) -> Result<f64> {
    let eig = to_dense(m).symmetric_eigen();
    let mut total = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l <= 0.0 {
            return Err(Error::NotPositiveDefinite(l));
        }
        total += l.ln();
    }
    Ok(total)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    to_dense(m).symmetric_eigen().eigenvalues.min()
}

/// Conditions the joint Gaussian over the neighbors' noisy observations and
/// the query by inverting the full `(N+1) x (N+1)` covariance. Returns the
/// conditional mean of `z` and the scalar conditional variance.
pub fn brute_force_condition(
    spec: &KernelSpec,
    bank: &FeatureBank,
    neighbor_ids: &[usize],
    query_s: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = neighbor_ids.len();
    let mut points: Vec<&[f64]> = Vec::with_capacity(n + 1);
    for &i in neighbor_ids {
        let e = bank.entries().get(i).ok_or(Error::BadNeighbor {
            index: i,
            len: bank.len(),
        })?;
        points.push(&e.s);
    }
    points.push(query_s);
    let mut joint = Mat::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            joint[(i, j)] = effective_kernel(spec, points[i], points[j])?;
        }
        joint[(i, i)] += spec.noise_var;
    }
    // For a Gaussian with precision P, the last coordinate given the rest
    // has variance 1/P_qq and mean −(1/P_qq) Σ_j P_qj x_j.
    let precision = dense_inverse(&joint)?;
    let p_qq = precision[(n, n)];
    let variance = 1.0 / p_qq;
    let mut mean = vec![0.0; bank.z_dim()];
    for (j, &id) in neighbor_ids.iter().enumerate() {
        let w = -precision[(n, j)] / p_qq;
        for (m, z) in mean.iter_mut().zip(&bank.entries()[id].z) {
            *m += w * z;
        }
    }
    Ok((mean, variance))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
