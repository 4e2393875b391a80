//! Classical reference decompositions by Jacobi rotations. Shares nothing
//! with the variational path beyond the matrix container.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSvd {
    pub sigma: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sweeps: usize,
}

impl OracleSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma)) * self.v.transpose()
    }
}

/// One-sided Jacobi SVD of a square real matrix: plane rotations
/// orthogonalize the columns of A V until every off-diagonal Gram entry is
/// below 1e-14 relative to the column norms.
pub fn jacobi_svd(a: &DMatrix<f64>) -> Result<OracleSvd> {
    let dim = a.nrows();
    if a.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("oracle needs a square matrix, got {:?}", a.shape())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEntry { row: 0, col: 0 });
    }
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(dim, dim);
    let mut sweeps = 0;
    loop {
        if sweeps == MAX_SWEEPS {
            return Err(Error::ConvergenceFailure(MAX_SWEEPS));
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..dim {
            for q in p + 1..dim {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= OFF_TOL * (alpha * beta).sqrt() || gamma.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..dim).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let largest = norms.iter().copied().fold(0.0, f64::max);
    let zero_tol = largest * dim as f64 * f64::EPSILON;

    let mut u = DMatrix::<f64>::zeros(dim, dim);
    let mut v_sorted = DMatrix::<f64>::zeros(dim, dim);
    let mut sigma = Vec::with_capacity(dim);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        v_sorted.set_column(slot, &v.column(j));
        if norms[j] > zero_tol {
            u.set_column(slot, &(w.column(j) / norms[j]));
            sigma.push(norms[j]);
        } else {
            sigma.push(0.0);
            missing.push(slot);
        }
    }
    complete_basis(&mut u, &missing);
    Ok(OracleSvd {
        sigma,
        u,
        v: v_sorted,
        sweeps,
    })
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_basis(u: &mut DMatrix<f64>, missing: &[usize]) {
    let dim = u.nrows();
    let mut filled: Vec<usize> = (0..dim).filter(|j| !missing.contains(j)).collect();
    for &slot in missing {
        let mut best: Option<DVector<f64>> = None;
        for e in 0..dim {
            let mut cand = DVector::<f64>::zeros(dim);
            cand[e] = 1.0;
            for _ in 0..2 {
                for &j in &filled {
                    let proj = u.column(j).dot(&cand);
                    cand -= u.column(j) * proj;
                }
            }
            let norm = cand.norm();
            if best.as_ref().is_none_or(|b| norm > b.norm()) {
                best = Some(cand);
            }
        }
        let cand = best.expect("dimension is positive");
        let norm = cand.norm();
        u.set_column(slot, &(cand / norm));
        filled.push(slot);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    /// Descending.
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

/// Cyclic two-sided Jacobi eigen-iteration for a symmetric matrix.
pub fn jacobi_eigen_symmetric(s: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let dim = s.nrows();
    if s.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("expected square, got {:?}", s.shape())));
    }
    let mut a = s.clone();
    let mut vecs = DMatrix::<f64>::identity(dim, dim);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..dim)
            .flat_map(|i| (0..dim).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::ConvergenceFailure(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // A <- J^T A J with J the (p, q) rotation
                rotate_columns(&mut a, p, q, c, sn);
                for j in 0..dim {
                    let (x, y) = (a[(p, j)], a[(q, j)]);
                    a[(p, j)] = c * x - sn * y;
                    a[(q, j)] = sn * x + c * y;
                }
                rotate_columns(&mut vecs, p, q, c, sn);
            }
        }
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(dim, dim, |r, c| vecs[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_factorization(a: &DMatrix<f64>, svd: &OracleSvd) {
        let dim = a.nrows();
        let id = DMatrix::<f64>::identity(dim, dim);
        assert!((a - svd.reconstruct()).norm() < 1e-10);
        assert!((svd.u.transpose() * &svd.u - &id).amax() < 1e-10);
        assert!((svd.v.transpose() * &svd.v - &id).amax() < 1e-10);
        assert!(svd.sigma.windows(2).all(|p| p[0] >= p[1]));
        assert!(svd.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let svd = jacobi_svd(&a).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 1.0]);
        assert_eq!(svd.u, DMatrix::identity(2, 2));
        assert_eq!(svd.v, DMatrix::identity(2, 2));
    }

    #[test]
    fn permutation_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        let svd = jacobi_svd(&a).unwrap();
        assert_abs_diff_eq!(svd.sigma[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(svd.sigma[1], 1.0, epsilon = 1e-15);
        check_factorization(&a, &svd);
    }

    #[test]
    fn random_four_by_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            check_factorization(&a, &jacobi_svd(&a).unwrap());
        }
    }

    #[test]
    fn rank_deficient_completes_basis() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        let svd = jacobi_svd(&a).unwrap();
        assert_abs_diff_eq!(svd.sigma[0], 5.0, epsilon = 1e-12);
        assert_eq!(&svd.sigma[1..], &[0.0, 0.0]);
        check_factorization(&a, &svd);
        check_factorization(&DMatrix::zeros(2, 2), &jacobi_svd(&DMatrix::zeros(2, 2)).unwrap());
    }

    #[test]
    fn squared_sigma_matches_gram_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for dim in [2, 3, 4, 8] {
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let svd = jacobi_svd(&a).unwrap();
            let eig = jacobi_eigen_symmetric(&(a.transpose() * &a)).unwrap();
            for (s, l) in svd.sigma.iter().zip(&eig.values) {
                assert_abs_diff_eq!(s * s, *l, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let e = jacobi_eigen_symmetric(&s).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&e.values));
        assert!((&e.vectors * d * e.vectors.transpose() - &s).amax() < 1e-12);
        let r2 = 2f64.sqrt();
        assert_abs_diff_eq!(e.values[0], 2.0 + r2, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[2], 2.0 - r2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_rectangular() {
        assert!(jacobi_svd(&DMatrix::zeros(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn zero_padding_appends_zeros(data in proptest::collection::vec(-2.0f64..2.0, 9), extra in 1usize..4) {
            let a = DMatrix::from_row_slice(3, 3, &data);
            let mut padded = DMatrix::zeros(3 + extra, 3 + extra);
            padded.view_mut((0, 0), (3, 3)).copy_from(&a);
            let s = jacobi_svd(&a).unwrap();
            let sp = jacobi_svd(&padded).unwrap();
            for (x, y) in s.sigma.iter().zip(&sp.sigma) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            prop_assert!(sp.sigma[3..].iter().all(|&x| x.abs() < 1e-10));
        }
    }
}
