//! Real orthogonal ansatz: Q blocks, each a layer of Ry rotations on every
//! register qubit followed by a CNOT chain (control m, target m+1).
//!
//! Ordering convention: block 1 acts first, and inside a block the rotations
//! act before the CNOTs, with the CNOT on qubits (1, 2) first. As a matrix,
//! U = R_Q ... R_2 R_1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Statevector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TieMode {
    #[default]
    Independent,
    /// beta is alpha; used for symmetric positive semidefinite inputs.
    Tied,
}

/// Shape of the ansatz: qubits per register, block count, tie mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzShape {
    pub n: usize,
    pub q_blocks: usize,
    pub tie: TieMode,
}

impl AnsatzShape {
    pub fn new(n: usize, q_blocks: usize, tie: TieMode) -> Self {
        Self { n, q_blocks, tie }
    }

    /// Block count with at least N^2 angles per register.
    pub fn default_q_blocks(n: usize) -> usize {
        let dim_sq = 1usize << (2 * n);
        dim_sq.div_ceil(n)
    }

    pub fn angles_per_register(&self) -> usize {
        self.n * self.q_blocks
    }

    pub fn num_free(&self) -> usize {
        match self.tie {
            TieMode::Independent => 2 * self.angles_per_register(),
            TieMode::Tied => self.angles_per_register(),
        }
    }
}

/// Angles for U(alpha) on chi and U(beta) on psi. In tied mode beta is not
/// stored; it reads back as alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    n: usize,
    q_blocks: usize,
    alpha: Vec<f64>,
    beta: Option<Vec<f64>>,
}

impl AnsatzParams {
    pub fn independent(n: usize, q_blocks: usize, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let expected = n * q_blocks;
        for len in [alpha.len(), beta.len()] {
            if len != expected {
                return Err(Error::WrongLength { expected, actual: len });
            }
        }
        Ok(Self {
            n,
            q_blocks,
            alpha,
            beta: Some(beta),
        })
    }

    pub fn tied(n: usize, q_blocks: usize, angles: Vec<f64>) -> Result<Self> {
        let expected = n * q_blocks;
        if angles.len() != expected {
            return Err(Error::WrongLength {
                expected,
                actual: angles.len(),
            });
        }
        Ok(Self {
            n,
            q_blocks,
            alpha: angles,
            beta: None,
        })
    }

    pub fn zeros(shape: AnsatzShape) -> Self {
        Self::from_free(shape, &vec![0.0; shape.num_free()]).expect("length matches shape")
    }

    /// Builds parameters from the flat free-parameter vector (alpha then beta
    /// in independent mode, the shared angles in tied mode).
    pub fn from_free(shape: AnsatzShape, free: &[f64]) -> Result<Self> {
        let m = shape.angles_per_register();
        match shape.tie {
            TieMode::Independent => {
                if free.len() != 2 * m {
                    return Err(Error::WrongLength {
                        expected: 2 * m,
                        actual: free.len(),
                    });
                }
                Self::independent(shape.n, shape.q_blocks, free[..m].to_vec(), free[m..].to_vec())
            }
            TieMode::Tied => Self::tied(shape.n, shape.q_blocks, free.to_vec()),
        }
    }

    pub fn shape(&self) -> AnsatzShape {
        AnsatzShape::new(self.n, self.q_blocks, self.tie_mode())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q_blocks(&self) -> usize {
        self.q_blocks
    }

    pub fn tie_mode(&self) -> TieMode {
        if self.beta.is_some() {
            TieMode::Independent
        } else {
            TieMode::Tied
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        self.beta.as_deref().unwrap_or(&self.alpha)
    }

    pub fn num_free(&self) -> usize {
        self.shape().num_free()
    }

    pub fn free(&self) -> Vec<f64> {
        match &self.beta {
            Some(beta) => self.alpha.iter().chain(beta).copied().collect(),
            None => self.alpha.clone(),
        }
    }

    /// The full concatenation (alpha, beta), regardless of tie mode.
    pub fn gamma(&self) -> Vec<f64> {
        self.alpha.iter().chain(self.beta()).copied().collect()
    }

    /// Independent copy; a tied set duplicates its shared angles into beta.
    pub fn untie(&self) -> Self {
        Self {
            n: self.n,
            q_blocks: self.q_blocks,
            alpha: self.alpha.clone(),
            beta: Some(self.beta().to_vec()),
        }
    }

    /// Positions in the untied (alpha, beta) vector that free parameter
    /// `k` feeds. Tied angles feed one slot in each half.
    pub fn gamma_slots(&self, k: usize) -> Result<Vec<usize>> {
        let count = self.num_free();
        if k >= count {
            return Err(Error::ParameterIndex { index: k, count });
        }
        Ok(match self.tie_mode() {
            TieMode::Independent => vec![k],
            TieMode::Tied => vec![k, k + self.alpha.len()],
        })
    }

    /// Copy with free parameter `k` (0-based) incremented by `delta`. Index
    /// `nQ` is beta's first angle in independent mode; tied mode shifts the
    /// shared angle.
    pub fn shift(&self, k: usize, delta: f64) -> Result<Self> {
        let count = self.num_free();
        if k >= count {
            return Err(Error::ParameterIndex { index: k, count });
        }
        let mut out = self.clone();
        let m = self.alpha.len();
        if k < m {
            out.alpha[k] += delta;
        } else if let Some(beta) = out.beta.as_mut() {
            beta[k - m] += delta;
        }
        Ok(out)
    }

    /// Checksum-friendly digest of the free parameters.
    pub fn checksum(&self) -> f64 {
        self.free()
            .iter()
            .enumerate()
            .map(|(i, x)| x * (1.0 + i as f64 * 1e-3))
            .sum()
    }
}

fn check_angles(n: usize, q_blocks: usize, angles: &[f64]) -> Result<()> {
    if angles.len() != n * q_blocks {
        return Err(Error::WrongLength {
            expected: n * q_blocks,
            actual: angles.len(),
        });
    }
    Ok(())
}

/// Applies U(angles) to the register made of `qubits` (most significant first).
pub fn apply_ansatz(state: &mut Statevector, qubits: &[usize], q_blocks: usize, angles: &[f64]) -> Result<()> {
    let n = qubits.len();
    check_angles(n, q_blocks, angles)?;
    for block in angles.chunks(n) {
        for (&q, &theta) in qubits.iter().zip(block) {
            state.apply_ry(q, theta)?;
        }
        for pair in qubits.windows(2) {
            state.apply_mcx(&[(pair[0], true)], &[pair[1]])?;
        }
    }
    Ok(())
}

/// Applies U(angles) on the `control = |1>` branch and the identity on the
/// `|0>` branch. Each rotation is split as Ry(t/2) CZ0 Ry(t/2) CZ0 with CZ0
/// an anti-controlled Z; each CNOT becomes a Toffoli on the control.
pub fn apply_controlled_ansatz(
    state: &mut Statevector,
    qubits: &[usize],
    control: usize,
    q_blocks: usize,
    angles: &[f64],
) -> Result<()> {
    let n = qubits.len();
    check_angles(n, q_blocks, angles)?;
    if let Some(&q) = qubits.iter().find(|&&q| q == control) {
        return Err(Error::OverlappingQubits(q));
    }
    for block in angles.chunks(n) {
        for (&q, &theta) in qubits.iter().zip(block) {
            state.apply_controlled_ry(control, q, theta)?;
        }
        for pair in qubits.windows(2) {
            state.apply_mcx(&[(control, true), (pair[0], true)], &[pair[1]])?;
        }
    }
    Ok(())
}

/// Dense matrix b_lk of U(angles) on a standalone n-qubit register; column k
/// is U|k>.
pub fn ansatz_matrix(n: usize, q_blocks: usize, angles: &[f64]) -> Result<DMatrix<f64>> {
    check_angles(n, q_blocks, angles)?;
    let dim = 1usize << n;
    let mut u = DMatrix::<f64>::identity(dim, dim);
    for block in angles.chunks(n) {
        for (j, &theta) in block.iter().enumerate() {
            let mask = 1usize << (n - 1 - j);
            let (s, c) = (theta / 2.0).sin_cos();
            for mut col in u.column_iter_mut() {
                for i in (0..dim).filter(|i| i & mask == 0) {
                    let (x, y) = (col[i], col[i | mask]);
                    col[i] = c * x - s * y;
                    col[i | mask] = s * x + c * y;
                }
            }
        }
        for m in 0..n.saturating_sub(1) {
            let control = 1usize << (n - 1 - m);
            let target = 1usize << (n - 2 - m);
            for mut col in u.column_iter_mut() {
                for i in (0..dim).filter(|i| i & control != 0 && i & target == 0) {
                    col.swap_rows(i, i | target);
                }
            }
        }
    }
    Ok(u)
}
