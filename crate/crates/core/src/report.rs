//! Serializable run report. Everything except `timing` is a pure function of
//! the input file and the echoed configuration.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzParams;
use crate::circuit::{ProbeResult, Sampling, StageRecord};
use crate::driver::{OptimizerConfig, RestartSummary, StopReason, SvdResult};
use crate::error::{Error, Result};
use crate::matrix::{PreparedMeta, WeightScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub input: InputInfo,
    pub config: ConfigEcho,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub file: String,
    #[serde(flatten)]
    pub prepared: PreparedMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub q_blocks: usize,
    pub weights: WeightScheme,
    pub rank: usize,
    pub weight_values: Vec<f64>,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSection {
    /// Singular (or eigen) values of the input matrix, descending.
    pub singular_values: Vec<f64>,
    /// Same values for the normalized, pivoted matrix.
    pub d: Vec<f64>,
    pub resolved: Vec<bool>,
    pub residual: f64,
    pub residual_recomputed: f64,
    pub restored_residual: f64,
    pub objective: f64,
    pub converged: bool,
    pub stop: StopReason,
    pub chosen_restart: usize,
    pub restarts: Vec<RestartSummary>,
    pub params: AnsatzParams,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub u_restored: Vec<Vec<[f64; 2]>>,
    pub v_restored: Vec<Vec<[f64; 2]>>,
    pub postselect: PostselectStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostselectStats {
    /// Flag-ancilla success probability at the returned parameters.
    pub at_optimum: f64,
    /// Same at all-zero angles.
    pub at_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub method: String,
    pub values: Vec<f64>,
    /// None where our value is unresolved.
    pub abs_errors: Vec<Option<f64>>,
    pub max_abs_error: f64,
}

impl OracleComparison {
    /// Compares the resolved prefix of `ours` with `oracle`.
    pub fn new(method: &str, ours: &[f64], resolved: &[bool], oracle: &[f64]) -> Self {
        let abs_errors: Vec<Option<f64>> = ours
            .iter()
            .zip(oracle)
            .zip(resolved)
            .map(|((a, b), &r)| r.then(|| (a - b).abs()))
            .collect();
        let max_abs_error = abs_errors.iter().flatten().copied().fold(0.0, f64::max);
        Self {
            method: method.to_string(),
            values: oracle.to_vec(),
            abs_errors,
            max_abs_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeColumn {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub l_value: f64,
    pub g_squared: f64,
    pub a00_tilde: f64,
    pub postselect_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<ProbeErrors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discarded_shots: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeErrors {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub l_value: f64,
}

impl ProbeColumn {
    pub fn new(probe: &ProbeResult, l_value: f64, g_squared: f64) -> Self {
        Self {
            p00: probe.p00,
            p01: probe.p01,
            p10: probe.p10,
            p11: probe.p11,
            l_value,
            g_squared,
            a00_tilde: probe.a00_tilde,
            postselect_prob: probe.postselect_prob,
            standard_errors: None,
            kept_shots: probe.kept_shots(),
            discarded_shots: probe.counts.as_ref().map(|c| c.discarded),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub params: AnsatzParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ProbeColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<ProbeColumn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSection {
    pub params: AnsatzParams,
    pub shift_gradient: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    /// True when `tolerance` is a per-component sampling bound (shot mode).
    pub statistical: bool,
    /// Components outside their tolerance.
    pub outliers: usize,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hessian: Vec<HessianCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    pub k: usize,
    pub m: usize,
    pub shift: f64,
    pub finite_difference: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_secs: f64,
}

pub fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn complex_rows(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

impl DecompositionSection {
    pub fn new(
        result: &SvdResult,
        a: &DMatrix<f64>,
        postselect: PostselectStats,
        oracle: Option<OracleComparison>,
    ) -> Result<Self> {
        let restored = result
            .restored
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("factors were not restored".into()))?;
        let trace = result
            .trace
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("result carries no optimization trace".into()))?;
        Ok(Self {
            singular_values: restored.singular_values.clone(),
            d: result.d.clone(),
            resolved: result.resolved.clone(),
            residual: result.residual,
            residual_recomputed: result.recompute_residual(a),
            restored_residual: restored.residual,
            objective: result.objective,
            converged: trace.converged(),
            stop: trace.stop,
            chosen_restart: trace.chosen_restart,
            restarts: trace.restarts.clone(),
            params: result.params.clone(),
            u: real_rows(&result.u_hat),
            v: real_rows(&result.v_hat),
            u_restored: complex_rows(&restored.u),
            v_restored: complex_rows(&restored.v),
            postselect,
            oracle,
        })
    }
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("report: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
    }

    /// The report with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.timing.wall_time_secs = 0.0;
        out
    }
}
