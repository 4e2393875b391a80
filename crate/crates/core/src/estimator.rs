//! Objective recovery from readout probabilities, the classical reference
//! evaluation, and parameter-shift derivatives.
//!
//! Every angle enters L through exactly one Ry, so along any single angle
//! L(t) = c cos(t/2) + s sin(t/2). Shifting by pi therefore gives
//! dL/dt = L(t + pi) / 2 exactly, and a second shift gives the second
//! derivative. A 2 pi shift flips the sign of L.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{ansatz_matrix, AnsatzParams};
use crate::circuit::{analytic_reference, probe_exact, probe_shots, ProbeMode, ProbeResult, Sampling};
use crate::error::{Error, Result};
use crate::matrix::{PreparedMatrix, WeightVector};

/// Default p00 floor for exact probes.
pub const EXACT_P00_FLOOR: f64 = 1e-9;

const REFERENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SampleSource {
    Exact,
    Shots { count: u64 },
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub l_value: f64,
    pub g_squared: f64,
    pub source: SampleSource,
}

/// How L is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvalMode {
    /// Full circuit simulation, probabilities read from amplitudes.
    #[default]
    Exact,
    /// Full circuit simulation with sampled readout.
    Shots { shots: u64, seed: u64, sampling: Sampling },
    /// Classical evaluation of the weighted diagonal.
    Direct,
}

impl EvalMode {
    /// Same mode with the sampling seed replaced by a per-evaluation seed.
    fn for_evaluation(self, index: u64) -> Self {
        match self {
            EvalMode::Shots { shots, seed, sampling } => EvalMode::Shots {
                shots,
                seed: derive_seed(seed, index),
                sampling,
            },
            other => other,
        }
    }
}

/// Deterministic child seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// G^2 = a~^2 / (2 p00), L = a~ (p01 - p11) / (2 p00). `p00_floor` defaults
/// to 1e-9 for exact probes and 1/(10 shots) for sampled ones.
pub fn recover(probe: &ProbeResult, p00_floor: Option<f64>) -> Result<ObjectiveSample> {
    let (default_floor, source) = match probe.mode {
        ProbeMode::Exact => (EXACT_P00_FLOOR, SampleSource::Exact),
        ProbeMode::Shots { shots, .. } => {
            let kept = probe.kept_shots().unwrap_or(shots).max(1);
            (1.0 / (10.0 * kept as f64), SampleSource::Shots { count: kept })
        }
    };
    let floor = p00_floor.unwrap_or(default_floor);
    if probe.a00_tilde.abs() < REFERENCE_FLOOR {
        return Err(Error::DegenerateReference);
    }
    if probe.p00 < floor {
        return Err(Error::VanishingP00 { p00: probe.p00, floor });
    }
    let a = probe.a00_tilde;
    Ok(ObjectiveSample {
        l_value: a * (probe.p01 - probe.p11) / (2.0 * probe.p00),
        g_squared: a * a / (2.0 * probe.p00),
        source,
    })
}

/// Binomial standard error of each of (p00, p01, p10, p11) after `shots`
/// kept samples.
pub fn probability_standard_errors(probe: &ProbeResult, shots: u64) -> [f64; 4] {
    let n = shots.max(1) as f64;
    [probe.p00, probe.p01, probe.p10, probe.p11].map(|p| (p * (1.0 - p) / n).sqrt())
}

/// Delta-method standard error of the recovered L under multinomial
/// sampling of `shots` readouts from the distribution in `probe`.
pub fn l_standard_error(probe: &ProbeResult, shots: u64) -> f64 {
    let n = shots.max(1) as f64;
    let c = probe.a00_tilde / 2.0;
    let p = [probe.p00, probe.p01, probe.p10, probe.p11];
    if p[0] <= 0.0 {
        return f64::INFINITY;
    }
    let g = [-c * (p[1] - p[3]) / (p[0] * p[0]), c / p[0], 0.0, -c / p[0]];
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let cov = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
            var += g[i] * g[j] * cov / n;
        }
    }
    var.max(0.0).sqrt()
}

/// Sum_l q_l Re[(b(alpha)^T a b(beta))_ll], evaluated classically.
pub fn objective_direct(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams) -> Result<ObjectiveSample> {
    let dim = prep.dim();
    if q.len() != dim || params.n() != prep.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix dimension {dim}, {} weights, ansatz on {} qubits",
            q.len(),
            params.n()
        )));
    }
    let left = ansatz_matrix(params.n(), params.q_blocks(), params.alpha())?;
    let right = ansatz_matrix(params.n(), params.q_blocks(), params.beta())?;
    let a = prep.a();
    let mut trace = num_complex::Complex64::new(0.0, 0.0);
    for (l, &ql) in q.as_slice().iter().enumerate() {
        if ql == 0.0 {
            continue;
        }
        // (b^T a b)_ll = sum_km b_kl a_km b_ml
        let mut diag = num_complex::Complex64::new(0.0, 0.0);
        for kk in 0..dim {
            let bl = left[(kk, l)];
            if bl == 0.0 {
                continue;
            }
            for m in 0..dim {
                diag += a[(kk, m)] * (bl * right[(m, l)]);
            }
        }
        trace += diag * ql;
    }
    let reference = analytic_reference(prep, q);
    Ok(ObjectiveSample {
        l_value: trace.re,
        g_squared: reference * reference + trace.norm_sqr(),
        source: SampleSource::Direct,
    })
}

/// L at `params` through the chosen mode.
pub fn evaluate(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams, mode: EvalMode) -> Result<ObjectiveSample> {
    match mode {
        EvalMode::Direct => objective_direct(prep, q, params),
        EvalMode::Exact => recover(&probe_exact(prep, q, params)?, None),
        EvalMode::Shots { shots, seed, sampling } => {
            recover(&probe_shots(prep, q, params, shots, seed, sampling)?, None)
        }
    }
}

/// dL/d(free parameter k) for every k, by pi shifts. Tied parameters sum
/// the shifts of their alpha and beta slots. Each shifted evaluation in shot
/// mode gets its own seed derived from the master seed.
pub fn gradient(prep: &PreparedMatrix, q: &WeightVector, params: &AnsatzParams, mode: EvalMode) -> Result<Vec<f64>> {
    let untied = params.untie();
    let jobs: Vec<(usize, usize)> = (0..params.num_free())
        .map(|k| params.gamma_slots(k).map(|slots| slots.into_iter().map(move |s| (k, s))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let values = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(_, slot))| {
            let shifted = untied.shift(slot, PI)?;
            Ok(0.5 * evaluate(prep, q, &shifted, mode.for_evaluation(i as u64))?.l_value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = vec![0.0; params.num_free()];
    for (&(k, _), v) in jobs.iter().zip(values) {
        grad[k] += v;
    }
    Ok(grad)
}

/// d^2 L / d(free k) d(free m) by double pi shifts; symmetric in (k, m).
pub fn hessian_entry(
    prep: &PreparedMatrix,
    q: &WeightVector,
    params: &AnsatzParams,
    k: usize,
    m: usize,
    mode: EvalMode,
) -> Result<f64> {
    let (k, m) = (k.min(m), k.max(m));
    let untied = params.untie();
    let mut total = 0.0;
    let mut index = 0u64;
    for s in params.gamma_slots(k)? {
        for t in params.gamma_slots(m)? {
            let shifted = untied.shift(s, PI)?.shift(t, PI)?;
            total += 0.25 * evaluate(prep, q, &shifted, mode.for_evaluation(index))?.l_value;
            index += 1;
        }
    }
    Ok(total)
}

/// Central-difference gradient, used to check the shift rule.
pub fn finite_difference_gradient(
    prep: &PreparedMatrix,
    q: &WeightVector,
    params: &AnsatzParams,
    mode: EvalMode,
    step: f64,
) -> Result<Vec<f64>> {
    (0..params.num_free())
        .map(|k| {
            let plus = evaluate(prep, q, &params.shift(k, step)?, mode)?.l_value;
            let minus = evaluate(prep, q, &params.shift(k, -step)?, mode)?.l_value;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// Central-difference second derivative, used to check the shift rule.
pub fn finite_difference_hessian_entry(
    prep: &PreparedMatrix,
    q: &WeightVector,
    params: &AnsatzParams,
    k: usize,
    m: usize,
    mode: EvalMode,
    step: f64,
) -> Result<f64> {
    let l = |p: &AnsatzParams| evaluate(prep, q, p, mode).map(|s| s.l_value);
    if k == m {
        let plus = l(&params.shift(k, step)?)?;
        let mid = l(params)?;
        let minus = l(&params.shift(k, -step)?)?;
        return Ok((plus - 2.0 * mid + minus) / (step * step));
    }
    let pp = l(&params.shift(k, step)?.shift(m, step)?)?;
    let pm = l(&params.shift(k, step)?.shift(m, -step)?)?;
    let mp = l(&params.shift(k, -step)?.shift(m, step)?)?;
    let mm = l(&params.shift(k, -step)?.shift(m, -step)?)?;
    Ok((pp - pm - mp + mm) / (4.0 * step * step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{AnsatzShape, TieMode};
    use crate::matrix::{WeightScheme, DEFAULT_PIVOT_TOL};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prep(dim: usize, data: &[f64]) -> PreparedMatrix {
        PreparedMatrix::from_real(&DMatrix::from_row_slice(dim, dim, data), DEFAULT_PIVOT_TOL).unwrap()
    }

    fn random_instance(n: usize, q_blocks: usize, rng: &mut ChaCha8Rng) -> (PreparedMatrix, WeightVector, AnsatzParams) {
        let dim = 1 << n;
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let p = PreparedMatrix::from_real(&m, DEFAULT_PIVOT_TOL).unwrap();
        let q = WeightVector::full(dim, WeightScheme::Linear);
        let shape = AnsatzShape::new(n, q_blocks, TieMode::Independent);
        let free: Vec<f64> = (0..shape.num_free()).map(|_| rng.random_range(-PI..PI)).collect();
        (p, q, AnsatzParams::from_free(shape, &free).unwrap())
    }

    fn worked_probe() -> ProbeResult {
        ProbeResult {
            p00: 0.32,
            p10: 0.18,
            p01: 0.49,
            p11: 0.01,
            a00_tilde: 4.0 / 10f64.sqrt(),
            postselect_prob: 2.5 / 16.0,
            mode: ProbeMode::Exact,
            counts: None,
        }
    }

    #[test]
    fn recover_worked_example() {
        let s = recover(&worked_probe(), None).unwrap();
        assert_abs_diff_eq!(s.l_value, 3.0 / 10f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.g_squared, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn delta_method_matches_sampling_spread() {
        let exact = worked_probe();
        let shots = 10_000u64;
        let probs = [exact.p00, exact.p01, exact.p10, exact.p11];
        let values: Vec<f64> = (0..2000)
            .map(|i| {
                let c = crate::sim::multinomial(&probs, shots, derive_seed(3, i));
                let f = |k: usize| c[k] as f64 / shots as f64;
                let p = ProbeResult { p00: f(0), p01: f(1), p10: f(2), p11: f(3), ..exact.clone() };
                recover(&p, None).unwrap().l_value
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        let predicted = l_standard_error(&exact, shots);
        assert!((var.sqrt() / predicted - 1.0).abs() < 0.1, "{} vs {predicted}", var.sqrt());
        let se = probability_standard_errors(&exact, shots);
        assert_abs_diff_eq!(se[0], (0.32f64 * 0.68 / 1e4).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn recover_symmetric_readout_is_zero() {
        let mut p = worked_probe();
        p.p01 = 0.2;
        p.p11 = 0.2;
        assert_eq!(recover(&p, None).unwrap().l_value, 0.0);
    }

    #[test]
    fn recover_errors() {
        let mut p = worked_probe();
        p.a00_tilde = 0.0;
        assert_eq!(recover(&p, None).unwrap_err(), Error::DegenerateReference);
        let mut p = worked_probe();
        p.p00 = 1e-12;
        assert!(matches!(recover(&p, None), Err(Error::VanishingP00 { .. })));
    }

    #[test]
    fn direct_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = prep(2, &[h, 0.0, 0.0, h]);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let zero = AnsatzParams::zeros(AnsatzShape::new(1, 2, TieMode::Independent));
        let s = objective_direct(&p, &q, &zero).unwrap();
        assert_abs_diff_eq!(s.l_value, 3.0 / 10f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.g_squared, 2.5, epsilon = 1e-12);

        let p = prep(2, &[0.3, -0.7, 0.2, 0.5]);
        let a = p.a_real().unwrap();
        let s = objective_direct(&p, &q, &zero).unwrap();
        let expect = q.as_slice()[0] * a[(0, 0)] + q.as_slice()[1] * a[(1, 1)];
        assert_abs_diff_eq!(s.l_value, expect, epsilon = 1e-15);
    }

    #[test]
    fn two_pi_shift_negates_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=2 {
            let (p, q, params) = random_instance(n, 2, &mut rng);
            let base = objective_direct(&p, &q, &params).unwrap().l_value;
            for k in 0..params.num_free() {
                let shifted = params.shift(k, 2.0 * PI).unwrap();
                let v = objective_direct(&p, &q, &shifted).unwrap().l_value;
                assert_abs_diff_eq!(v, -base, epsilon = 1e-12);
                let full_turn = params.shift(k, 4.0 * PI).unwrap();
                assert_abs_diff_eq!(objective_direct(&p, &q, &full_turn).unwrap().l_value, base, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn circuit_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let n = 1 + trial % 2;
            let (p, q, params) = random_instance(n, 2, &mut rng);
            let direct = objective_direct(&p, &q, &params).unwrap();
            let circuit = evaluate(&p, &q, &params, EvalMode::Exact).unwrap();
            assert_abs_diff_eq!(direct.l_value, circuit.l_value, epsilon = 1e-10);
            assert_abs_diff_eq!(direct.g_squared, circuit.g_squared, epsilon = 1e-10);
        }
    }

    #[test]
    fn diagonal_matrix_is_stationary_at_identity() {
        let p = prep(2, &[0.8, 0.0, 0.0, 0.6]);
        let q = WeightVector::full(2, WeightScheme::Linear);
        let zero = AnsatzParams::zeros(AnsatzShape::new(1, 2, TieMode::Independent));
        for mode in [EvalMode::Direct, EvalMode::Exact] {
            let g = gradient(&p, &q, &zero, mode).unwrap();
            assert!(g.iter().all(|x| x.abs() < 1e-12), "{g:?}");
        }
        let fd = finite_difference_gradient(&p, &q, &zero, EvalMode::Direct, 1e-5).unwrap();
        assert!(fd.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn shift_rule_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=2 {
            let (p, q, params) = random_instance(n, 2, &mut rng);
            let g = gradient(&p, &q, &params, EvalMode::Exact).unwrap();
            let fd = finite_difference_gradient(&p, &q, &params, EvalMode::Direct, 1e-5).unwrap();
            for (x, y) in g.iter().zip(&fd) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-6);
            }
            // bounded by the largest achievable objective
            assert!(g.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn tied_gradient_uses_chain_rule() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = PreparedMatrix::from_real(&m, DEFAULT_PIVOT_TOL).unwrap();
        let q = WeightVector::full(2, WeightScheme::Linear);
        let params = AnsatzParams::tied(1, 2, vec![0.3, -0.9]).unwrap();
        let g = gradient(&p, &q, &params, EvalMode::Direct).unwrap();
        let fd = finite_difference_gradient(&p, &q, &params, EvalMode::Direct, 1e-5).unwrap();
        for (x, y) in g.iter().zip(&fd) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
        let h = hessian_entry(&p, &q, &params, 0, 1, EvalMode::Direct).unwrap();
        let fh = finite_difference_hessian_entry(&p, &q, &params, 0, 1, EvalMode::Direct, 1e-4).unwrap();
        assert_abs_diff_eq!(h, fh, epsilon = 1e-6);
    }

    #[test]
    fn hessian_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, q, params) = random_instance(1, 2, &mut rng);
        let base = objective_direct(&p, &q, &params).unwrap().l_value;
        let diag = hessian_entry(&p, &q, &params, 1, 1, EvalMode::Direct).unwrap();
        // double shift on one angle is a 2 pi shift: L -> -L
        assert_abs_diff_eq!(diag, -0.25 * base, epsilon = 1e-12);
        for k in 0..params.num_free() {
            for m in 0..params.num_free() {
                let h = hessian_entry(&p, &q, &params, k, m, EvalMode::Exact).unwrap();
                assert_eq!(h, hessian_entry(&p, &q, &params, m, k, EvalMode::Exact).unwrap());
                let fd = finite_difference_hessian_entry(&p, &q, &params, k, m, EvalMode::Direct, 1e-4).unwrap();
                assert_abs_diff_eq!(h, fd, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(derive_seed(7, 3), seeds[3]);
    }
}
