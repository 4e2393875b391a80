//! Input canonicalization: zero padding to a power-of-two square, optional
//! pivoting of a dominant entry into (0, 0), removal of the (0, 0) phase and
//! Frobenius normalization. Also builds the weight vector for the objective.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::driver::{RestoredFactors, SvdResult};
use crate::error::{Error, Result};

/// Default relative threshold below which |m00| triggers pivoting.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-6;

/// Tolerance used when deciding that an imaginary part is rounding noise.
const REAL_TOL: f64 = 1e-12;

/// A matrix ready for amplitude encoding, with the bookkeeping needed to map
/// results back onto the caller's matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMatrix {
    original: DMatrix<Complex64>,
    a: DMatrix<Complex64>,
    n: usize,
    scale: f64,
    phase: f64,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
}

/// Metadata echoed in run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub rows: usize,
    pub cols: usize,
    pub n: usize,
    pub dim: usize,
    pub scale: f64,
    pub phase: f64,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

/// Smallest power of two (at least 2) that holds `size`.
pub fn padded_dim(size: usize) -> usize {
    size.max(2).next_power_of_two()
}

impl PreparedMatrix {
    /// Canonicalizes `matrix`. With `pivot_tol = 0` pivoting never happens.
    pub fn prepare(matrix: &DMatrix<Complex64>, pivot_tol: f64) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::AllZeroMatrix);
        }
        for j in 0..cols {
            for i in 0..rows {
                let z = matrix[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::NonFiniteEntry { row: i, col: j });
                }
            }
        }

        let dim = padded_dim(rows.max(cols));
        let n = dim.trailing_zeros() as usize;
        let mut padded = DMatrix::<Complex64>::zeros(dim, dim);
        padded.view_mut((0, 0), (rows, cols)).copy_from(matrix);

        let max_mod = padded.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if max_mod <= f64::EPSILON {
            return Err(Error::AllZeroMatrix);
        }

        let mut row_perm: Vec<usize> = (0..dim).collect();
        let mut col_perm: Vec<usize> = (0..dim).collect();
        if padded[(0, 0)].norm() < pivot_tol * max_mod {
            let (pr, pc) = pivot_position(&padded, max_mod);
            row_perm.swap(0, pr);
            col_perm.swap(0, pc);
        }

        let permuted = DMatrix::from_fn(dim, dim, |i, j| padded[(row_perm[i], col_perm[j])]);
        let scale = permuted.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let corner = permuted[(0, 0)];
        let phase = if corner.norm() > 0.0 { corner.arg() } else { 0.0 };
        let factor = Complex64::from_polar(1.0 / scale, -phase);
        let mut a = permuted.map(|z| z * factor);
        // the corner is real by construction; drop rounding residue
        a[(0, 0)] = Complex64::new(a[(0, 0)].norm(), 0.0);

        Ok(Self {
            original: matrix.clone(),
            a,
            n,
            scale,
            phase,
            row_perm,
            col_perm,
        })
    }

    pub fn from_real(matrix: &DMatrix<f64>, pivot_tol: f64) -> Result<Self> {
        Self::prepare(&matrix.map(|x| Complex64::new(x, 0.0)), pivot_tol)
    }

    pub fn original(&self) -> &DMatrix<Complex64> {
        &self.original
    }

    pub fn a(&self) -> &DMatrix<Complex64> {
        &self.a
    }

    pub fn a00(&self) -> f64 {
        self.a[(0, 0)].re
    }

    /// Qubits per index register.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Padded dimension N = 2^n.
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn row_perm(&self) -> &[usize] {
        &self.row_perm
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    pub fn is_pivoted(&self) -> bool {
        self.row_perm[0] != 0 || self.col_perm[0] != 0
    }

    pub fn is_real(&self) -> bool {
        self.a.iter().all(|z| z.im.abs() <= REAL_TOL)
    }

    /// The real part of `a`; fails if any imaginary part is non-negligible.
    pub fn a_real(&self) -> Result<DMatrix<f64>> {
        if !self.is_real() {
            return Err(Error::ComplexMatrix);
        }
        Ok(self.a.map(|z| z.re))
    }

    /// The zero-padded input, rebuilt from `a` by undoing normalization,
    /// phase removal and permutation.
    pub fn reconstruct_padded(&self) -> DMatrix<Complex64> {
        let dim = self.dim();
        let factor = Complex64::from_polar(self.scale, self.phase);
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                out[(self.row_perm[i], self.col_perm[j])] = self.a[(i, j)] * factor;
            }
        }
        out
    }

    pub fn padded_original(&self) -> DMatrix<Complex64> {
        let dim = self.dim();
        let (rows, cols) = self.original.shape();
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        out.view_mut((0, 0), (rows, cols)).copy_from(&self.original);
        out
    }

    pub fn meta(&self) -> PreparedMeta {
        PreparedMeta {
            rows: self.original.nrows(),
            cols: self.original.ncols(),
            n: self.n,
            dim: self.dim(),
            scale: self.scale,
            phase: self.phase,
            row_perm: self.row_perm.clone(),
            col_perm: self.col_perm.clone(),
        }
    }
}

/// Location of a maximal-modulus entry, preferring the diagonal on ties so
/// that symmetric inputs stay symmetric after permutation.
fn pivot_position(m: &DMatrix<Complex64>, max_mod: f64) -> (usize, usize) {
    let dim = m.nrows();
    let tie = max_mod * (1.0 - 1e-12);
    if let Some(k) = (0..dim).find(|&k| m[(k, k)].norm() >= tie) {
        return (k, k);
    }
    for i in 0..dim {
        for j in 0..dim {
            if m[(i, j)].norm() >= tie {
                return (i, j);
            }
        }
    }
    (0, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    #[default]
    Linear,
    Geometric,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "geometric" => Ok(Self::Geometric),
            other => Err(format!("unknown weight scheme '{other}'")),
        }
    }
}

/// Normalized, non-increasing weights q_j; entries at index >= `t` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    q: Vec<f64>,
    t: usize,
}

const GEOMETRIC_RATIO: f64 = 0.5;

impl WeightVector {
    pub fn new(n_dim: usize, scheme: WeightScheme, t: usize) -> Result<Self> {
        if t == 0 || t > n_dim {
            return Err(Error::InvalidRank { t, n_dim });
        }
        let mut q: Vec<f64> = (0..n_dim)
            .map(|j| {
                if j >= t {
                    return 0.0;
                }
                match scheme {
                    WeightScheme::Linear => (t - j) as f64,
                    WeightScheme::Geometric => GEOMETRIC_RATIO.powi(j as i32),
                }
            })
            .collect();
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.iter_mut().for_each(|x| *x /= norm);
        Ok(Self { q, t })
    }

    /// Full-rank weights.
    pub fn full(n_dim: usize, scheme: WeightScheme) -> Self {
        Self::new(n_dim, scheme, n_dim).expect("full rank is always valid")
    }

    /// Wraps explicit weights, normalizing them. The truncation rank is the
    /// length of the nonzero prefix.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if values.is_empty() || norm == 0.0 || values.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NormViolation(norm * norm));
        }
        let q: Vec<f64> = values.iter().map(|x| x / norm).collect();
        let t = q.iter().rposition(|&x| x > 0.0).map_or(0, |p| p + 1);
        Ok(Self { q, t })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.t
    }

    pub fn q0(&self) -> f64 {
        self.q[0]
    }
}

/// Maps a result computed for `prep.a()` back onto the zero-padded original:
/// singular values scale by the Frobenius norm, factor rows return to their
/// original positions and the removed phase is absorbed into the left factor.
pub fn restore_factors(mut result: SvdResult, prep: &PreparedMatrix) -> Result<SvdResult> {
    let dim = prep.dim();
    if result.d.len() != dim || result.u_hat.nrows() != dim || result.v_hat.nrows() != dim {
        return Err(Error::DimensionMismatch(format!(
            "result has dimension {}, prepared matrix {}",
            result.d.len(),
            dim
        )));
    }
    let phase = Complex64::from_polar(1.0, prep.phase());
    let mut u = DMatrix::<Complex64>::zeros(dim, dim);
    let mut v = DMatrix::<Complex64>::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            u[(prep.row_perm()[i], j)] = phase * result.u_hat[(i, j)];
            v[(prep.col_perm()[i], j)] = Complex64::new(result.v_hat[(i, j)], 0.0);
        }
    }
    let singular_values: Vec<f64> = result.d.iter().map(|d| d * prep.scale()).collect();
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        singular_values.iter().map(|&s| Complex64::new(s, 0.0)),
    ));
    let rebuilt = &u * sigma * v.adjoint();
    let residual = (prep.padded_original() - rebuilt).norm();
    result.restored = Some(RestoredFactors {
        singular_values,
        u,
        v,
        residual,
    });
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn real(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn single_entry_matrix() {
        let p = PreparedMatrix::from_real(&real(2, 2, &[2.0, 0.0, 0.0, 0.0]), DEFAULT_PIVOT_TOL).unwrap();
        assert_abs_diff_eq!(p.scale(), 2.0);
        assert_eq!(p.phase(), 0.0);
        assert_abs_diff_eq!(p.a00(), 1.0);
        assert!(!p.is_pivoted());
        assert_eq!(p.n(), 1);
    }

    #[test]
    fn antidiagonal_pivots_largest_entry() {
        let p = PreparedMatrix::from_real(&real(2, 2, &[0.0, 3.0, 4.0, 0.0]), DEFAULT_PIVOT_TOL).unwrap();
        assert!(p.is_pivoted());
        assert_abs_diff_eq!(p.scale(), 5.0, epsilon = 1e-15);
        let a = p.a_real().unwrap();
        assert_abs_diff_eq!(a, real(2, 2, &[0.8, 0.0, 0.0, 0.6]), epsilon = 1e-15);
        assert!((p.reconstruct_padded() - p.padded_original()).norm() < 1e-12);
    }

    #[test]
    fn pivoting_disabled_keeps_zero_corner() {
        let p = PreparedMatrix::from_real(&real(2, 2, &[0.0, 3.0, 4.0, 0.0]), 0.0).unwrap();
        assert!(!p.is_pivoted());
        assert_eq!(p.a00(), 0.0);
    }

    #[test]
    fn rectangular_input_is_padded() {
        let m = real(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = PreparedMatrix::from_real(&m, DEFAULT_PIVOT_TOL).unwrap();
        assert_eq!(p.dim(), 4);
        assert_eq!(p.n(), 2);
        for i in 0..4 {
            assert_eq!(p.a()[(i, 3)], Complex64::new(0.0, 0.0));
            assert_eq!(p.a()[(3, i)], Complex64::new(0.0, 0.0));
        }
        assert!((p.reconstruct_padded() - p.padded_original()).norm() < 1e-12);
    }

    #[test]
    fn complex_corner_phase_is_removed() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 2.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 1.0),
            ],
        );
        let p = PreparedMatrix::prepare(&m, DEFAULT_PIVOT_TOL).unwrap();
        assert_abs_diff_eq!(p.phase(), std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(p.a()[(0, 0)].im, 0.0);
        assert!(p.a00() > 0.0);
        assert!(!p.is_real());
        assert!(matches!(p.a_real(), Err(Error::ComplexMatrix)));
        assert!((p.reconstruct_padded() - p.padded_original()).norm() < 1e-12);
    }

    #[test]
    fn rejects_zero_and_non_finite() {
        assert_eq!(
            PreparedMatrix::from_real(&DMatrix::zeros(2, 2), 1e-6).unwrap_err(),
            Error::AllZeroMatrix
        );
        assert_eq!(
            PreparedMatrix::from_real(&real(1, 2, &[1.0, f64::NAN]), 1e-6).unwrap_err(),
            Error::NonFiniteEntry { row: 0, col: 1 }
        );
    }

    #[test]
    fn symmetric_pivot_prefers_diagonal() {
        // |m01| ties with m11; the diagonal choice keeps symmetry
        let m = real(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let p = PreparedMatrix::from_real(&m, 1e-6).unwrap();
        assert_eq!(p.row_perm(), p.col_perm());
        let a = p.a_real().unwrap();
        assert_abs_diff_eq!(a.clone(), a.transpose());
    }

    #[test]
    fn weight_examples() {
        let w = WeightVector::new(2, WeightScheme::Linear, 2).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 2.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w.as_slice()[1], 1.0 / 5f64.sqrt(), epsilon = 1e-15);

        let w = WeightVector::new(4, WeightScheme::Linear, 1).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let w = WeightVector::new(2, WeightScheme::Geometric, 2).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 2.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w.as_slice()[1], 1.0 / 5f64.sqrt(), epsilon = 1e-15);

        assert_eq!(
            WeightVector::new(4, WeightScheme::Linear, 5).unwrap_err(),
            Error::InvalidRank { t: 5, n_dim: 4 }
        );
        assert!(WeightVector::new(4, WeightScheme::Linear, 0).is_err());
    }

    #[test]
    fn weight_invariants_exhaustive() {
        for n_dim in 1..=16 {
            for scheme in [WeightScheme::Linear, WeightScheme::Geometric] {
                for t in 1..=n_dim {
                    let w = WeightVector::new(n_dim, scheme, t).unwrap();
                    let q = w.as_slice();
                    assert!((q.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(q[0] > 0.0);
                    assert!(q[..t].windows(2).all(|p| p[0] > p[1]));
                    assert!(q[t..].iter().all(|&x| x == 0.0));
                    assert_eq!(w.rank(), t);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn complex_matrix() -> impl Strategy<Value = DMatrix<Complex64>> {
            (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
                proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), r * c).prop_map(move |v| {
                    DMatrix::from_iterator(r, c, v.into_iter().map(|(re, im)| Complex64::new(re, im)))
                })
            })
        }

        proptest! {
            #[test]
            fn round_trip_and_normalization(m in complex_matrix(), tol in prop_oneof![Just(0.0), Just(1e-6), Just(0.9)]) {
                prop_assume!(m.iter().any(|z| z.norm() > 1e-6));
                let p = PreparedMatrix::prepare(&m, tol).unwrap();
                let frob = p.a().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                prop_assert!((frob - 1.0).abs() < 1e-12);
                prop_assert!(p.a()[(0, 0)].im.abs() < 1e-12 && p.a00() >= -1e-12);
                prop_assert!(p.dim().is_power_of_two() && p.dim() >= m.nrows().max(m.ncols()));
                prop_assert!((p.reconstruct_padded() - p.padded_original()).norm() < 1e-12 * p.scale().max(1.0));
            }
        }
    }
}
