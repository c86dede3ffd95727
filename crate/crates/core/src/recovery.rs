//! Orthogonal matching pursuit with a least-squares refit on the growing
//! support.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::{norm_sqr, ComplexMatrix};

/// Residuals below this fraction of `‖y‖` count as zero; pursuit stops there.
const ZERO_RESIDUAL_RTOL: f64 = 1e-12;
/// Support systems whose smallest `|R_jj|` falls below this fraction of the
/// largest are treated as rank deficient and solved by SVD.
const RANK_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OmpOptions {
    /// Select by `|c_jᴴ r| / ‖c_j‖` instead of `|c_jᴴ r|`.
    pub normalize_columns: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult {
    /// Length-L coefficient vector, zero off the support.
    pub coefficients: Vec<Complex64>,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
    /// `‖r‖` before the first and after every iteration.
    pub residual_history: Vec<f64>,
    /// Set when some refit was solved in the minimum-norm sense.
    pub rank_deficient: bool,
}

pub fn omp(c: &ComplexMatrix, y: &[Complex64], p: usize) -> Result<OmpResult> {
    omp_with(c, y, p, OmpOptions::default())
}

pub fn omp_with(c: &ComplexMatrix, y: &[Complex64], p: usize, options: OmpOptions) -> Result<OmpResult> {
    let (m, atoms) = c.shape();
    if y.len() != m {
        return Err(Error::dim(format!("observation has length {}, matrix has {m} rows", y.len())));
    }
    if p == 0 || p > m.min(atoms) {
        return Err(Error::invalid(format!(
            "sparsity {p} must lie in 1..={}",
            m.min(atoms)
        )));
    }

    let column_scale: Vec<f64> = if options.normalize_columns {
        c.column_iter()
            .map(|col| {
                let norm = col.norm();
                if norm > 0.0 { 1.0 / norm } else { 0.0 }
            })
            .collect()
    } else {
        vec![1.0; atoms]
    };

    let y_vec = DVector::from_column_slice(y);
    let y_norm = norm_sqr(y).sqrt();
    let mut residual = y_vec.clone();
    let mut residual_norm = y_norm;
    let mut history = vec![residual_norm];
    let mut support: Vec<usize> = Vec::with_capacity(p);
    let mut selected = vec![false; atoms];
    let mut coefficients = vec![Complex64::new(0.0, 0.0); atoms];
    let mut rank_deficient = false;

    for _ in 0..p {
        if residual_norm <= ZERO_RESIDUAL_RTOL * y_norm || y_norm == 0.0 {
            break;
        }
        let mut best = None;
        let mut best_corr = f64::NEG_INFINITY;
        for (j, col) in c.column_iter().enumerate() {
            if selected[j] {
                continue;
            }
            let corr = col.dotc(&residual).norm() * column_scale[j];
            if corr > best_corr {
                best_corr = corr;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        support.push(j);
        selected[j] = true;

        let sub = c.select_columns(support.iter());
        let (x, deficient) = least_squares(&sub, &y_vec);
        rank_deficient |= deficient;
        residual = &y_vec - &sub * &x;
        residual_norm = residual.norm();
        history.push(residual_norm);
        for (&idx, v) in support.iter().zip(x.iter()) {
            coefficients[idx] = *v;
        }
    }

    Ok(OmpResult {
        coefficients,
        support,
        residual_norm,
        residual_history: history,
        rank_deficient,
    })
}

/// `argmin ‖y − S x‖` via Householder QR, falling back to the SVD
/// pseudo-inverse when `S` is numerically rank deficient.
fn least_squares(s: &ComplexMatrix, y: &DVector<Complex64>) -> (DVector<Complex64>, bool) {
    let k = s.ncols();
    if s.nrows() >= k {
        let qr = s.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].norm()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > RANK_RTOL * max {
            let qty = qr.q().adjoint() * y;
            if let Some(x) = r.solve_upper_triangular(&qty) {
                return (x, false);
            }
        }
    }
    let svd = s.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let x = svd
        .solve(y, RANK_RTOL * max_sv.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(k));
    (x, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{complex_normal, random_unitary};
    use crate::rng::SeededRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_atom_of_orthonormal_matrix() {
        let q = random_unitary(8, &SeededRng::new(1)).unwrap();
        let y: Vec<Complex64> = q.column(5).iter().map(|z| z * 3.0).collect();
        let res = omp(&q, &y, 1).unwrap();
        assert_eq!(res.support, vec![5]);
        assert!((res.coefficients[5] - c(3.0, 0.0)).norm() < 1e-12);
        assert!(res.residual_norm < 1e-12);
    }

    #[test]
    fn zero_observation() {
        let q = random_unitary(4, &SeededRng::new(2)).unwrap();
        let res = omp(&q, &[c(0.0, 0.0); 4], 2).unwrap();
        assert!(res.coefficients.iter().all(|z| z.norm() == 0.0));
        assert!(res.support.is_empty());
        assert_eq!(res.residual_norm, 0.0);
    }

    #[test]
    fn identity_full_support_reproduces_observation() {
        let id = ComplexMatrix::identity(5, 5);
        let mut g = SeededRng::new(3).generator();
        let y: Vec<Complex64> = (0..5).map(|_| complex_normal(&mut g)).collect();
        let res = omp(&id, &y, 5).unwrap();
        for (a, b) in res.coefficients.iter().zip(&y) {
            assert!((a - b).norm() <= 1e-15);
        }
    }

    #[test]
    fn rejects_bad_sparsity() {
        let id = ComplexMatrix::identity(3, 6);
        assert!(omp(&id, &[c(1.0, 0.0); 3], 0).is_err());
        assert!(omp(&id, &[c(1.0, 0.0); 3], 4).is_err());
        assert!(omp(&id, &[c(1.0, 0.0); 2], 1).is_err());
    }

    #[test]
    fn duplicate_columns_are_never_reselected() {
        // identical columns 0 and 1: the second refit would be singular
        let mut m = ComplexMatrix::zeros(3, 3);
        m[(0, 0)] = c(1.0, 0.0);
        m[(0, 1)] = c(1.0, 0.0);
        m[(1, 2)] = c(1.0, 0.0);
        let y = [c(1.0, 0.0), c(0.5, 0.0), c(0.3, 0.0)];
        let res = omp(&m, &y, 3).unwrap();
        let mut sorted = res.support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), res.support.len());
        assert!(res.rank_deficient);
        for w in res.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn column_normalized_selection_prefers_direction() {
        // column 0 is long but poorly aligned, column 1 short but exact
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 0)] = c(10.0, 0.0);
        m[(1, 0)] = c(10.0, 0.0);
        m[(1, 1)] = c(0.1, 0.0);
        let y = [c(0.0, 0.0), c(1.0, 0.0)];
        assert_eq!(omp(&m, &y, 1).unwrap().support, vec![0]);
        let opts = OmpOptions { normalize_columns: true };
        assert_eq!(omp_with(&m, &y, 1, opts).unwrap().support, vec![1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let id = ComplexMatrix::identity(3, 3);
        let y = [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)];
        assert_eq!(omp(&id, &y, 1).unwrap().support, vec![1]);
    }
}
