//! The classical half of the hybrid loop: gradient ascent on L with
//! restarts, extraction of the diagonal and factors at the optimum, the
//! tied-angle eigendecomposition mode and pseudoinverse assembly.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{ansatz_matrix, AnsatzParams, AnsatzShape, TieMode};
use crate::error::{Error, Result};
use crate::estimator::{derive_seed, evaluate, gradient, objective_direct, EvalMode};
use crate::matrix::{PreparedMatrix, WeightVector};
use crate::oracle::jacobi_eigen_symmetric;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once |L[k+1] - L[k]| < epsilon.
    pub epsilon: f64,
    pub restarts: usize,
    /// Initial angles are uniform in [-init_scale, init_scale].
    pub init_scale: f64,
    pub seed: u64,
    pub eval_mode: EvalMode,
    pub use_adam: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iters: 5000,
            epsilon: 1e-8,
            restarts: 3,
            init_scale: 0.1,
            seed: 0,
            eval_mode: EvalMode::Exact,
            use_adam: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("at least one restart is required".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::InvalidConfig("init_scale must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub restart: usize,
    pub iter: usize,
    pub l_value: f64,
    pub grad_norm: f64,
    pub params_checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub final_l: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// All restarts' iteration records, verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<IterationRecord>,
    pub restarts: Vec<RestartSummary>,
    pub chosen_restart: usize,
    pub stop: StopReason,
    pub wall_time_secs: f64,
}

impl OptimizationTrace {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// Records of the chosen restart.
    pub fn chosen(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(move |r| r.restart == self.chosen_restart)
    }

    /// `restart,iter,L,grad_norm` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("restart,iter,L,grad_norm\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{:.17e},{:.17e}\n", r.restart, r.iter, r.l_value, r.grad_norm));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub params: AnsatzParams,
    pub best_l: f64,
    pub trace: OptimizationTrace,
    /// Best L fell clearly below its value at all-zero angles.
    pub no_progress: bool,
}

struct RestartRun {
    params: AnsatzParams,
    final_l: f64,
    records: Vec<IterationRecord>,
    stop: StopReason,
    iterations: usize,
}

fn run_restart(
    prep: &PreparedMatrix,
    q: &WeightVector,
    shape: AnsatzShape,
    config: &OptimizerConfig,
    restart: usize,
) -> Result<RestartRun> {
    let restart_seed = derive_seed(config.seed, restart as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed);
    let free: Vec<f64> = (0..shape.num_free())
        .map(|_| {
            if config.init_scale > 0.0 {
                rng.random_range(-config.init_scale..=config.init_scale)
            } else {
                0.0
            }
        })
        .collect();
    let mut params = AnsatzParams::from_free(shape, &free)?;
    let mode_at = |tag: u64| match config.eval_mode {
        EvalMode::Shots { shots, sampling, .. } => EvalMode::Shots {
            shots,
            seed: derive_seed(restart_seed, tag),
            sampling,
        },
        other => other,
    };

    let mut records = Vec::new();
    let mut l_cur = evaluate(prep, q, &params, mode_at(0))?.l_value;
    let (mut m1, mut m2) = (vec![0.0; free.len()], vec![0.0; free.len()]);
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;
    for iter in 0..config.max_iters {
        let grad = gradient(prep, q, &params, mode_at(2 * iter as u64 + 1))?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        records.push(IterationRecord {
            restart,
            iter,
            l_value: l_cur,
            grad_norm,
            params_checksum: params.checksum(),
        });
        let mut next = params.free();
        if config.use_adam {
            let t = (iter + 1) as i32;
            for (i, g) in grad.iter().enumerate() {
                m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g;
                m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g * g;
                let mh = m1[i] / (1.0 - ADAM_BETA1.powi(t));
                let vh = m2[i] / (1.0 - ADAM_BETA2.powi(t));
                next[i] += config.learning_rate * mh / (vh.sqrt() + ADAM_EPS);
            }
        } else {
            for (x, g) in next.iter_mut().zip(&grad) {
                *x += config.learning_rate * g;
            }
        }
        params = AnsatzParams::from_free(shape, &next)?;
        let l_new = evaluate(prep, q, &params, mode_at(2 * iter as u64 + 2))?.l_value;
        let delta = (l_new - l_cur).abs();
        l_cur = l_new;
        iterations = iter + 1;
        if delta < config.epsilon {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(RestartRun {
        params,
        final_l: l_cur,
        records,
        stop,
        iterations,
    })
}

/// Gradient ascent on L from `config.restarts` random starts; returns the
/// restart with the largest final L.
pub fn optimize(
    prep: &PreparedMatrix,
    q: &WeightVector,
    shape: AnsatzShape,
    config: &OptimizerConfig,
) -> Result<OptimizeOutcome> {
    config.validate()?;
    if shape.n != prep.n() {
        return Err(Error::DimensionMismatch(format!(
            "ansatz on {} qubits for a matrix needing {}",
            shape.n,
            prep.n()
        )));
    }
    let start = Instant::now();
    let runs = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(prep, q, shape, config, r))
        .collect::<Result<Vec<_>>>()?;
    let chosen = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.final_l.total_cmp(&b.1.final_l))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let best = &runs[chosen];
    let baseline = objective_direct(prep, q, &AnsatzParams::zeros(shape))?.l_value;
    let sampled = matches!(config.eval_mode, EvalMode::Shots { .. });
    let no_progress = !sampled && best.final_l < baseline - 100.0 * config.epsilon - 1e-12;
    if no_progress {
        log::warn!(
            "best objective {:.6e} is below the identity value {:.6e}; check the configuration",
            best.final_l,
            baseline
        );
    }
    let trace = OptimizationTrace {
        records: runs.iter().flat_map(|r| r.records.iter().cloned()).collect(),
        restarts: runs
            .iter()
            .enumerate()
            .map(|(i, r)| RestartSummary {
                restart: i,
                final_l: r.final_l,
                iterations: r.iterations,
                stop: r.stop,
            })
            .collect(),
        chosen_restart: chosen,
        stop: best.stop,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(OptimizeOutcome {
        params: best.params.clone(),
        best_l: best.final_l,
        trace,
        no_progress,
    })
}

/// Factors mapped back onto the caller's (padded) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RestoredFactors {
    pub singular_values: Vec<f64>,
    pub u: DMatrix<Complex64>,
    pub v: DMatrix<Complex64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// Nonnegative, descending.
    pub d: Vec<f64>,
    pub u_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    /// ||a - U D V^T||_F for the prepared matrix.
    pub residual: f64,
    /// Whether d_j came from a positively weighted diagonal slot; values
    /// from zero-weight slots are not optimized.
    pub resolved: Vec<bool>,
    pub objective: f64,
    pub params: AnsatzParams,
    pub trace: Option<OptimizationTrace>,
    pub restored: Option<RestoredFactors>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u_hat * DMatrix::from_diagonal(&DVector::from_column_slice(&self.d)) * self.v_hat.transpose()
    }

    pub fn recompute_residual(&self, a: &DMatrix<f64>) -> f64 {
        (a - self.reconstruct()).norm()
    }

    pub fn singular_values_original(&self) -> Option<&[f64]> {
        self.restored.as_ref().map(|r| r.singular_values.as_slice())
    }
}

/// d_j = (b(alpha)^T a b(beta))_jj with U = b(alpha), V = b(beta); signs are
/// absorbed into V columns, then everything is sorted by descending d.
pub fn extract(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<SvdResult> {
    let a = prep.a_real()?;
    let dim = prep.dim();
    if params.n() != prep.n() || q.len() != dim {
        return Err(Error::DimensionMismatch("parameters do not match the matrix".into()));
    }
    let u = ansatz_matrix(params.n(), params.q_blocks(), params.alpha())?;
    let tied = params.tie_mode() == TieMode::Tied;
    let v = if tied {
        u.clone()
    } else {
        ansatz_matrix(params.n(), params.q_blocks(), params.beta())?
    };
    let core = u.transpose() * &a * &v;
    let mut d: Vec<f64> = (0..dim).map(|j| core[(j, j)]).collect();
    let mut v = v;
    for (j, dj) in d.iter_mut().enumerate() {
        if *dj < 0.0 {
            if tied {
                // a congruence of a PSD matrix has a nonnegative diagonal;
                // only rounding gets here
                *dj = 0.0;
            } else {
                *dj = -*dj;
                v.column_mut(j).neg_mut();
            }
        }
    }
    let objective: f64 = q.as_slice().iter().zip(&core.diagonal()).map(|(w, x)| w * x).sum();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let u_hat = DMatrix::from_fn(dim, dim, |r, c| u[(r, order[c])]);
    let v_hat = if tied {
        u_hat.clone()
    } else {
        DMatrix::from_fn(dim, dim, |r, c| v[(r, order[c])])
    };
    let resolved = order.iter().map(|&j| q.as_slice()[j] > 0.0).collect();
    let d: Vec<f64> = order.iter().map(|&j| d[j]).collect();
    let mut result = SvdResult {
        d,
        u_hat,
        v_hat,
        residual: 0.0,
        resolved,
        objective,
        params: params.clone(),
        trace: None,
        restored: None,
    };
    result.residual = result.recompute_residual(&a);
    Ok(result)
}

/// Full variational SVD of the prepared matrix.
pub fn svd(prep: &PreparedMatrix, q: &WeightVector, q_blocks: usize, config: &OptimizerConfig) -> Result<SvdResult> {
    prep.a_real()?;
    let outcome = optimize(prep, q, AnsatzShape::new(prep.n(), q_blocks, TieMode::Independent), config)?;
    let mut result = extract(prep, q, &outcome.params)?;
    result.trace = Some(outcome.trace);
    Ok(result)
}

/// Checks that the prepared matrix is real, symmetric and PSD within 1e-10.
pub fn check_symmetric_psd(prep: &PreparedMatrix) -> Result<DMatrix<f64>> {
    let original = prep.padded_original();
    if original.iter().any(|z| z.im.abs() > PSD_TOL * prep.scale()) {
        return Err(Error::NotSymmetricPsd("matrix is complex".into()));
    }
    let original = original.map(|z| z.re);
    let asym = (&original - original.transpose()).amax();
    if asym > PSD_TOL * prep.scale() {
        return Err(Error::NotSymmetricPsd(format!("asymmetry {:e}", asym / prep.scale())));
    }
    if prep.row_perm() != prep.col_perm() || prep.phase().abs() > PSD_TOL {
        return Err(Error::NotSymmetricPsd("largest entry is off the diagonal or negative".into()));
    }
    let a = prep.a_real().map_err(|_| Error::NotSymmetricPsd("matrix is complex".into()))?;
    let asym = (&a - a.transpose()).amax();
    if asym > PSD_TOL {
        return Err(Error::NotSymmetricPsd(format!("asymmetry {asym:e}")));
    }
    let eig = jacobi_eigen_symmetric(&a)?;
    let smallest = eig.values.last().copied().unwrap_or(0.0);
    if smallest < -PSD_TOL {
        return Err(Error::NotSymmetricPsd(format!("eigenvalue {smallest:e}")));
    }
    Ok(a)
}

/// Eigendecomposition of a symmetric PSD matrix with alpha = beta, so the
/// returned factors satisfy U = V.
pub fn eigendecompose_psd(
    prep: &PreparedMatrix,
    q: &WeightVector,
    q_blocks: usize,
    config: &OptimizerConfig,
) -> Result<SvdResult> {
    check_symmetric_psd(prep)?;
    let outcome = optimize(prep, q, AnsatzShape::new(prep.n(), q_blocks, TieMode::Tied), config)?;
    let mut result = extract(prep, q, &outcome.params)?;
    result.trace = Some(outcome.trace);
    Ok(result)
}

/// A+ = sum over d_j > rank_tol d_0 of v_j u_j^T / d_j, for the prepared matrix.
pub fn pseudoinverse(result: &SvdResult, rank_tol: f64) -> Result<DMatrix<f64>> {
    let dim = result.d.len();
    let threshold = rank_tol * result.d.first().copied().unwrap_or(0.0);
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    let mut used = 0;
    for (j, &dj) in result.d.iter().enumerate() {
        if dj > threshold && dj > 0.0 {
            out += result.v_hat.column(j) * result.u_hat.column(j).transpose() / dj;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(out)
}

/// Pseudoinverse of the caller's original (unpadded) matrix from restored
/// factors; shape is cols x rows.
pub fn pseudoinverse_original(result: &SvdResult, prep: &PreparedMatrix, rank_tol: f64) -> Result<DMatrix<Complex64>> {
    let restored = result
        .restored
        .as_ref()
        .ok_or_else(|| Error::DimensionMismatch("factors have not been restored".into()))?;
    let dim = restored.singular_values.len();
    let threshold = rank_tol * restored.singular_values.first().copied().unwrap_or(0.0);
    let mut full = DMatrix::<Complex64>::zeros(dim, dim);
    let mut used = 0;
    for (j, &s) in restored.singular_values.iter().enumerate() {
        if s > threshold && s > 0.0 {
            full += restored.v.column(j) * restored.u.column(j).adjoint() / Complex64::new(s, 0.0);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::ZeroMatrix);
    }
    let (rows, cols) = prep.original().shape();
    Ok(full.view((0, 0), (cols, rows)).into_owned())
}
