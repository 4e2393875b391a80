//! The full encoding-and-readout pipeline on the 5n+3 qubit register and the
//! (K, B) probability readout, exact or sampled.

use serde::{Deserialize, Serialize};

use crate::ansatz::{apply_controlled_ansatz, AnsatzParams, AnsatzShape, TieMode};
use crate::error::{Error, Result};
use crate::matrix::{PreparedMatrix, WeightVector};
use crate::sim::{RegisterLayout, ShotCounts, Statevector, Subsystem};

/// Allowed gap between the analytic and simulated reference amplitude.
pub const CALIBRATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Sample (K, B) from the renormalized B~ = 1 branch; every shot counts.
    #[default]
    Postselected,
    /// Sample B~ too and discard shots that read B~ = 0.
    Raw,
}

impl std::str::FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "postselected" => Ok(Self::Postselected),
            "raw" => Ok(Self::Raw),
            other => Err(format!("unknown sampling mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbeMode {
    Exact,
    Shots { shots: u64, seed: u64, sampling: Sampling },
}

/// Per-stage norm bookkeeping for debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub norm_sqr: f64,
}

/// Readout probabilities p_ij of |i>_K |j>_B on the post-selected state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub p00: f64,
    pub p10: f64,
    pub p01: f64,
    pub p11: f64,
    pub a00_tilde: f64,
    pub postselect_prob: f64,
    pub mode: ProbeMode,
    pub counts: Option<ShotCounts>,
}

impl ProbeResult {
    pub fn sum(&self) -> f64 {
        self.p00 + self.p10 + self.p01 + self.p11
    }

    /// Shots that survived post-selection, if sampled.
    pub fn kept_shots(&self) -> Option<u64> {
        self.counts.as_ref().map(ShotCounts::kept)
    }

    fn from_marginal(marginal: &[f64], a00_tilde: f64, postselect_prob: f64, mode: ProbeMode) -> Self {
        // pattern = 2K + B
        Self {
            p00: marginal[0],
            p01: marginal[1],
            p10: marginal[2],
            p11: marginal[3],
            a00_tilde,
            postselect_prob,
            mode,
            counts: None,
        }
    }
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Post-selected state after the readout transform, before measuring K, B.
    pub state: Statevector,
    pub layout: RegisterLayout,
    pub postselect_prob: f64,
    /// Reference amplitude read off the K = 0 flag branch.
    pub reference_amplitude: f64,
    pub stages: Vec<StageRecord>,
}

fn check_inputs(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<()> {
    if q.len() != prep.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for dimension {}",
            q.len(),
            prep.dim()
        )));
    }
    if params.n() != prep.n() {
        return Err(Error::DimensionMismatch(format!(
            "ansatz acts on {} qubits, matrix needs {}",
            params.n(),
            prep.n()
        )));
    }
    Ok(())
}

/// Runs every stage up to and including the flag marking, i.e. the state
/// before the flag ancilla is measured.
fn evolve(
    prep: &PreparedMatrix,
    q: &WeightVector,
    params: &AnsatzParams,
    mut stages: Option<&mut Vec<StageRecord>>,
) -> Result<(Statevector, RegisterLayout)> {
    check_inputs(prep, q, params)?;
    let layout = RegisterLayout::new(prep.n());
    let n = layout.n();
    let k = layout.k();
    let chi = layout.qubits(Subsystem::Chi);
    let psi = layout.qubits(Subsystem::Psi);
    let mut state = Statevector::init_ground(&layout);
    let mut record = |name: &str, s: &Statevector| {
        if let Some(log) = stages.as_deref_mut() {
            log.push(StageRecord {
                stage: name.to_string(),
                norm_sqr: s.norm_sqr(),
            });
        }
    };

    state.load_product_state(&layout, prep.a(), q.as_slice())?;
    record("load", &state);

    // W0: Hadamards on chi and K
    for &qb in &chi {
        state.apply_h(qb)?;
    }
    state.apply_h(k)?;
    record("W0", &state);

    // W1: copy chi into psi and shift the weight register, K-controlled
    for i in 0..n {
        let targets = [layout.qubit(Subsystem::Psi, i), layout.qubit(Subsystem::Weight, i)];
        state.apply_mcx(&[(k, true), (chi[i], true)], &targets)?;
    }
    record("W1", &state);

    // W2: U(alpha) on chi and U(beta) on psi, K-controlled
    apply_controlled_ansatz(&mut state, &chi, k, params.q_blocks(), params.alpha())?;
    apply_controlled_ansatz(&mut state, &psi, k, params.q_blocks(), params.beta())?;
    record("W2", &state);

    // W3 = C2 C1: fold chi into R and psi into C, K-controlled
    for i in 0..n {
        state.apply_mcx(&[(k, true), (chi[i], true)], &[layout.qubit(Subsystem::Row, i)])?;
    }
    for i in 0..n {
        state.apply_mcx(&[(k, true), (psi[i], true)], &[layout.qubit(Subsystem::Col, i)])?;
    }
    record("W3", &state);

    // W4: Hadamards on chi and psi
    for &qb in chi.iter().chain(&psi) {
        state.apply_h(qb)?;
    }
    record("W4", &state);

    // W5: flag the all-zero pattern of R C chi psi q on both ancillae
    let controls: Vec<(usize, bool)> = [Subsystem::Row, Subsystem::Col, Subsystem::Chi, Subsystem::Psi, Subsystem::Weight]
        .iter()
        .flat_map(|s| layout.range(*s))
        .map(|qb| (qb, false))
        .collect();
    state.apply_mcx(&controls, &[layout.b(), layout.b_tilde()])?;
    record("W5", &state);

    Ok((state, layout))
}

/// Amplitude of |K=0, B=1, B~=1, rest 0> rescaled by 2^((3n+1)/2).
fn reference_amplitude(state: &Statevector, layout: &RegisterLayout) -> f64 {
    let idx = layout.index([0, 0, 0, 0, 0, 0, 1, 1]);
    let prefactor = 2f64.powf((3 * layout.n() + 1) as f64 / 2.0);
    state.amplitude(idx).re * prefactor
}

/// H on B, then H on K controlled by B.
fn apply_readout(state: &mut Statevector, layout: &RegisterLayout) -> Result<()> {
    state.apply_h(layout.b())?;
    state.apply_controlled_h(layout.b(), layout.k())
}

/// Full pipeline: encoding, W0..W5, post-selection of B~ = 1, readout.
pub fn run_pipeline(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<PipelineOutput> {
    pipeline(prep, q, params, true)
}

fn pipeline(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams, record: bool) -> Result<PipelineOutput> {
    let mut stages = Vec::new();
    let (mut state, layout) = evolve(prep, q, params, record.then_some(&mut stages))?;
    let reference = reference_amplitude(&state, &layout);
    let postselect_prob = match state.measure_postselect(layout.b_tilde(), 1) {
        Ok(p) => p,
        Err(Error::ImpossibleOutcome { probability, .. }) => return Err(Error::PostselectionImpossible(probability)),
        Err(e) => return Err(e),
    };
    if record {
        stages.push(StageRecord {
            stage: "W6".into(),
            norm_sqr: state.norm_sqr(),
        });
    }
    apply_readout(&mut state, &layout)?;
    if record {
        stages.push(StageRecord {
            stage: "readout".into(),
            norm_sqr: state.norm_sqr(),
        });
    }
    Ok(PipelineOutput {
        state,
        layout,
        postselect_prob,
        reference_amplitude: reference,
        stages,
    })
}

/// The analytic reference amplitude 2^n q0 a00.
pub fn analytic_reference(prep: &PreparedMatrix, q: &WeightVector) -> f64 {
    (1u64 << prep.n()) as f64 * q.q0() * prep.a00()
}

fn cross_check(analytic: f64, simulated: f64) -> Result<()> {
    if (analytic - simulated).abs() > CALIBRATION_TOL {
        return Err(Error::CalibrationMismatch { analytic, simulated });
    }
    Ok(())
}

/// Exact readout probabilities from amplitudes; never samples.
pub fn probe_exact(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<ProbeResult> {
    let out = pipeline(prep, q, params, false)?;
    let analytic = analytic_reference(prep, q);
    cross_check(analytic, out.reference_amplitude)?;
    let marginal = out.state.marginal(&[out.layout.k(), out.layout.b()])?;
    Ok(ProbeResult::from_marginal(
        &marginal,
        analytic,
        out.postselect_prob,
        ProbeMode::Exact,
    ))
}

/// Sampled readout. Frequencies are counts over surviving shots.
pub fn probe_shots(
    prep: &PreparedMatrix,
    q: &WeightVector,
    params: &AnsatzParams,
    shots: u64,
    seed: u64,
    sampling: Sampling,
) -> Result<ProbeResult> {
    if shots == 0 {
        return Err(Error::InvalidConfig("shots must be at least 1".into()));
    }
    let analytic = analytic_reference(prep, q);
    let mode = ProbeMode::Shots { shots, seed, sampling };
    let (kb_counts, postselect_prob) = match sampling {
        Sampling::Postselected => {
            let out = pipeline(prep, q, params, false)?;
            cross_check(analytic, out.reference_amplitude)?;
            let counts = out.state.sample(&[out.layout.k(), out.layout.b()], shots, seed)?;
            (counts, out.postselect_prob)
        }
        Sampling::Raw => {
            let (mut state, layout) = evolve(prep, q, params, None)?;
            cross_check(analytic, reference_amplitude(&state, &layout))?;
            let postselect_prob = state.probability(layout.b_tilde(), 1)?;
            apply_readout(&mut state, &layout)?;
            // pattern = 4 B~ + 2 K + B
            let joint = state.sample(&[layout.b_tilde(), layout.k(), layout.b()], shots, seed)?;
            let discarded: u64 = joint.counts[..4].iter().sum();
            if discarded == shots {
                return Err(Error::NoSurvivingShots(shots));
            }
            let counts = ShotCounts {
                qubits: vec![layout.k(), layout.b()],
                counts: joint.counts[4..].to_vec(),
                shots,
                seed,
                discarded,
            };
            (counts, postselect_prob)
        }
    };
    let kept = kb_counts.kept() as f64;
    let freq: Vec<f64> = (0..4).map(|p| kb_counts.count(p) as f64 / kept).collect();
    let mut result = ProbeResult::from_marginal(&freq, analytic, postselect_prob, mode);
    result.counts = Some(kb_counts);
    Ok(result)
}

/// Reference amplitude measured from the simulated state. It does not
/// depend on the ansatz angles because the ansatz only acts on K = 1.
pub fn calibrate_reference(prep: &PreparedMatrix, q: &WeightVector) -> Result<f64> {
    let params = AnsatzParams::zeros(AnsatzShape::new(prep.n(), 1, TieMode::Independent));
    calibrate_reference_at(prep, q, &params)
}

/// As [`calibrate_reference`], at explicit angles.
pub fn calibrate_reference_at(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<f64> {
    let (state, layout) = evolve(prep, q, params, None)?;
    Ok(reference_amplitude(&state, &layout))
}

/// Flag-marked state before post-selection, exposed for inspection.
pub fn flagged_state(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<(Statevector, RegisterLayout)> {
    evolve(prep, q, params, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{WeightScheme, DEFAULT_PIVOT_TOL};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn prep(rows: usize, data: &[f64], tol: f64) -> PreparedMatrix {
        PreparedMatrix::from_real(&DMatrix::from_row_slice(rows, rows, data), tol).unwrap()
    }

    fn zeros(n: usize) -> AnsatzParams {
        AnsatzParams::zeros(AnsatzShape::new(n, 1, TieMode::Independent))
    }

    #[test]
    fn single_entry_example() {
        let p = prep(2, &[1.0, 0.0, 0.0, 0.0], DEFAULT_PIVOT_TOL);
        let q = WeightVector::from_values(&[1.0, 0.0]).unwrap();
        let (mut state, layout) = flagged_state(&p, &q, &zeros(1)).unwrap();
        state.measure_postselect(layout.b_tilde(), 1).unwrap();
        let k_marg = state.marginal(&[layout.k()]).unwrap();
        assert_abs_diff_eq!(k_marg[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(k_marg[1], 0.2, epsilon = 1e-12);
        let out = run_pipeline(&p, &q, &zeros(1)).unwrap();
        assert_abs_diff_eq!(out.reference_amplitude, 2.0, epsilon = 1e-12);
        // G^2 / 2^(3n+1) with G^2 = 5
        assert_abs_diff_eq!(out.postselect_prob, 5.0 / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn worked_probabilities() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = prep(2, &[h, 0.0, 0.0, h], DEFAULT_PIVOT_TOL);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let r = probe_exact(&p, &q, &zeros(1)).unwrap();
        assert_abs_diff_eq!(r.p00, 0.32, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p10, 0.18, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p01, 0.49, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p11, 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(r.a00_tilde, 4.0 / 10f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.postselect_prob, 2.5 / 16.0, epsilon = 1e-12);
        let out = run_pipeline(&p, &q, &zeros(1)).unwrap();
        assert!(out.stages.iter().all(|s| (s.norm_sqr - 1.0).abs() < 1e-10));
        assert_eq!(out.stages.len(), 9);
    }

    #[test]
    fn zero_trace_readout() {
        // antidiagonal with pivoting off: every a_ll = 0, so L~ = 0 at U = I
        let p = prep(2, &[0.0, 0.6, 0.8, 0.0], 0.0);
        let q = WeightVector::full(2, WeightScheme::Linear);
        // a00 = 0 and L~ = 0: the flag branch is empty
        assert!(matches!(
            probe_exact(&p, &q, &zeros(1)),
            Err(Error::PostselectionImpossible(_))
        ));
        assert_eq!(calibrate_reference(&p, &q).unwrap(), 0.0);

        // with a00 != 0 but zero trace elsewhere: a = [[x, y], [z, -x]] weighted
        // so that q0 a00 + q1 a11 = 0
        let q = WeightVector::from_values(&[1.0, 1.0]).unwrap();
        let p = prep(2, &[0.5, 0.5, 0.5, -0.5], DEFAULT_PIVOT_TOL);
        let r = probe_exact(&p, &q, &zeros(1)).unwrap();
        assert_abs_diff_eq!(r.p10, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p01, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p11, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn garbage_branch_has_no_flag_pattern() {
        let p = prep(2, &[0.3, -0.7, 0.2, 0.5], DEFAULT_PIVOT_TOL);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let params = AnsatzParams::independent(1, 2, vec![0.4, -1.0], vec![2.0, 0.3]).unwrap();
        let (state, layout) = flagged_state(&p, &q, &params).unwrap();
        for kv in 0..2 {
            let idx = layout.index([0, 0, 0, 0, 0, kv, 1, 0]);
            assert_eq!(state.amplitude(idx).norm(), 0.0);
        }
        // and the flagged branch has exactly the two K components
        let flagged: Vec<_> = (0..state.amplitudes().len())
            .filter(|&i| layout.decode(i)[7] == 1 && state.amplitude(i).norm() > 0.0)
            .collect();
        assert!(flagged.len() <= 2);
    }

    #[test]
    fn reference_is_parameter_independent() {
        let p = prep(2, &[0.3, -0.7, 0.2, 0.5], DEFAULT_PIVOT_TOL);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let at_zero = calibrate_reference(&p, &q).unwrap();
        let params = AnsatzParams::independent(1, 3, vec![0.4, -1.0, 3.0], vec![2.0, 0.3, -0.1]).unwrap();
        assert_abs_diff_eq!(calibrate_reference_at(&p, &q, &params).unwrap(), at_zero, epsilon = 1e-12);
        assert_abs_diff_eq!(at_zero, analytic_reference(&p, &q), epsilon = 1e-12);
    }

    #[test]
    fn shot_probe_basics() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = prep(2, &[h, 0.0, 0.0, h], DEFAULT_PIVOT_TOL);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let one = probe_shots(&p, &q, &zeros(1), 1, 5, Sampling::Postselected).unwrap();
        assert_eq!(one.counts.as_ref().unwrap().counts.iter().sum::<u64>(), 1);
        let a = probe_shots(&p, &q, &zeros(1), 1000, 5, Sampling::Raw).unwrap();
        let b = probe_shots(&p, &q, &zeros(1), 1000, 5, Sampling::Raw).unwrap();
        assert_eq!(a, b);
        let counts = a.counts.unwrap();
        assert!(counts.discarded > 0);
        assert_eq!(counts.counts.iter().sum::<u64>() + counts.discarded, 1000);
        assert_abs_diff_eq!(a.p00 + a.p01 + a.p10 + a.p11, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_dimensions() {
        let p = prep(2, &[1.0, 0.0, 0.0, 1.0], DEFAULT_PIVOT_TOL);
        let q = WeightVector::full(4, WeightScheme::Linear);
        assert!(matches!(probe_exact(&p, &q, &zeros(1)), Err(Error::DimensionMismatch(_))));
        let q = WeightVector::full(2, WeightScheme::Linear);
        assert!(matches!(probe_exact(&p, &q, &zeros(2)), Err(Error::DimensionMismatch(_))));
    }
}
