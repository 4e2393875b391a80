//! Dense statevector engine.
//!
//! Qubits are addressed by position. Position 0 is the most significant bit
//! of the global basis index, so for a register of `w` qubits position `p`
//! owns bit `w - 1 - p`. Gates act in place with stride arithmetic.

use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this a projection is treated as an impossible outcome.
pub const PROBABILITY_FLOOR: f64 = 1e-14;

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subsystem {
    /// Row index register R.
    Row,
    /// Column index register C.
    Col,
    /// Left basis register, acted on by U(alpha).
    Chi,
    /// Right basis register, acted on by U(beta).
    Psi,
    /// Weight register.
    Weight,
    /// Control qubit K.
    K,
    /// Flag ancilla B.
    B,
    /// Second flag ancilla B~, the one that is measured.
    BTilde,
}

impl Subsystem {
    pub const ALL: [Subsystem; 8] = [
        Subsystem::Row,
        Subsystem::Col,
        Subsystem::Chi,
        Subsystem::Psi,
        Subsystem::Weight,
        Subsystem::K,
        Subsystem::B,
        Subsystem::BTilde,
    ];

    fn label(self) -> &'static str {
        match self {
            Subsystem::Row => "R",
            Subsystem::Col => "C",
            Subsystem::Chi => "chi",
            Subsystem::Psi => "psi",
            Subsystem::Weight => "q",
            Subsystem::K => "K",
            Subsystem::B => "B",
            Subsystem::BTilde => "B~",
        }
    }
}

/// The 5n+3 qubit register: R C chi psi q (n qubits each), then K B B~.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    n: usize,
}

impl RegisterLayout {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "index registers need at least one qubit");
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        5 * self.n + 3
    }

    /// Qubit positions of a subsystem, most significant first.
    pub fn range(&self, s: Subsystem) -> Range<usize> {
        let n = self.n;
        match s {
            Subsystem::Row => 0..n,
            Subsystem::Col => n..2 * n,
            Subsystem::Chi => 2 * n..3 * n,
            Subsystem::Psi => 3 * n..4 * n,
            Subsystem::Weight => 4 * n..5 * n,
            Subsystem::K => 5 * n..5 * n + 1,
            Subsystem::B => 5 * n + 1..5 * n + 2,
            Subsystem::BTilde => 5 * n + 2..5 * n + 3,
        }
    }

    pub fn qubits(&self, s: Subsystem) -> Vec<usize> {
        self.range(s).collect()
    }

    /// Qubit `i` (0-based, 0 = most significant) of subsystem `s`.
    pub fn qubit(&self, s: Subsystem, i: usize) -> usize {
        let r = self.range(s);
        assert!(i < r.len(), "qubit {i} outside {s:?}");
        r.start + i
    }

    pub fn k(&self) -> usize {
        5 * self.n
    }

    pub fn b(&self) -> usize {
        5 * self.n + 1
    }

    pub fn b_tilde(&self) -> usize {
        5 * self.n + 2
    }

    /// Global basis index for the given subsystem labels
    /// `[R, C, chi, psi, q, K, B, B~]`.
    pub fn index(&self, labels: [usize; 8]) -> usize {
        let mut idx = 0usize;
        for (s, &v) in Subsystem::ALL.iter().zip(labels.iter()) {
            let width = self.range(*s).len();
            debug_assert!(v < (1 << width));
            idx = (idx << width) | v;
        }
        idx
    }

    /// Inverse of [`RegisterLayout::index`].
    pub fn decode(&self, index: usize) -> [usize; 8] {
        let mut out = [0usize; 8];
        let mut rest = index;
        for (slot, s) in Subsystem::ALL.iter().enumerate().rev() {
            let width = self.range(*s).len();
            out[slot] = rest & ((1 << width) - 1);
            rest >>= width;
        }
        out
    }

    pub fn describe(&self, index: usize) -> String {
        let labels = self.decode(index);
        Subsystem::ALL
            .iter()
            .zip(labels.iter())
            .map(|(s, v)| {
                let width = self.range(*s).len();
                format!("|{:0w$b}>{}", v, s.label(), w = width)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone)]
pub struct Statevector {
    num_qubits: usize,
    amps: Vec<Complex64>,
    /// Qubits known to be |0> and unentangled; kernels skip their 1 half.
    idle: usize,
}

impl PartialEq for Statevector {
    fn eq(&self, other: &Self) -> bool {
        self.num_qubits == other.num_qubits && self.amps == other.amps
    }
}

impl fmt::Debug for Statevector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Statevector")
            .field("num_qubits", &self.num_qubits)
            .field("norm_sqr", &self.norm_sqr())
            .finish()
    }
}

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

impl Statevector {
    /// |0...0> on `num_qubits` qubits.
    pub fn zero_state(num_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1usize << num_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        let idle = (1usize << num_qubits) - 1;
        Self { num_qubits, amps, idle }
    }

    /// Ground state of the full pipeline register.
    pub fn init_ground(layout: &RegisterLayout) -> Self {
        Self::zero_state(layout.total())
    }

    /// Wraps explicit amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Self {
        assert!(amps.len().is_power_of_two());
        let num_qubits = amps.len().trailing_zeros() as usize;
        Self { num_qubits, amps, idle: 0 }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amps[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_ground(&self) -> bool {
        (self.amps[0] - Complex64::new(1.0, 0.0)).norm() < NORM_TOL
            && self.amps[1..].iter().all(|z| z.norm() < NORM_TOL)
    }

    fn mask(&self, qubit: usize) -> Result<usize> {
        if qubit >= self.num_qubits {
            return Err(Error::IndexOutOfRange {
                qubit,
                num_qubits: self.num_qubits,
            });
        }
        Ok(1usize << (self.num_qubits - 1 - qubit))
    }

    /// Amplitude encoding of `a` on (R, C) and of `q` on the weight
    /// register: amplitude at (i, j, 0, 0, k, 0, 0, 0) is a_ij * q_k.
    pub fn load_product_state(
        &mut self,
        layout: &RegisterLayout,
        a: &DMatrix<Complex64>,
        q: &[f64],
    ) -> Result<()> {
        let dim = 1usize << layout.n();
        if self.num_qubits != layout.total() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} qubits, layout needs {}",
                self.num_qubits,
                layout.total()
            )));
        }
        if a.shape() != (dim, dim) || q.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "layout dimension {dim}, matrix {:?}, weights {}",
                a.shape(),
                q.len()
            )));
        }
        if !self.is_ground() {
            return Err(Error::NotGroundState);
        }
        let a_norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let q_norm: f64 = q.iter().map(|x| x * x).sum();
        for norm in [a_norm, q_norm] {
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::NormViolation(norm));
            }
        }
        self.amps[0] = ZERO;
        for s in [Subsystem::Row, Subsystem::Col, Subsystem::Weight] {
            for qb in layout.qubits(s) {
                self.idle &= !(1usize << (self.num_qubits - 1 - qb));
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let aij = a[(i, j)];
                if aij == ZERO {
                    continue;
                }
                for (k, &qk) in q.iter().enumerate() {
                    self.amps[layout.index([i, j, 0, 0, k, 0, 0, 0])] = aij * qk;
                }
            }
        }
        Ok(())
    }

    /// Applies `f` to each amplitude pair (bit clear, bit set) of `target`
    /// whose control bits match.
    fn pairs(&mut self, cmask: usize, cval: usize, tmask: usize, mut f: impl FnMut(Complex64, Complex64) -> (Complex64, Complex64)) {
        let amps = &mut self.amps;
        let idle = self.idle & !tmask;
        let this = Self::enumerator(idle, amps.len());
        this(cmask | tmask, cval, &mut |i| {
            let j = i | tmask;
            let (x, y) = f(amps[i], amps[j]);
            amps[i] = x;
            amps[j] = y;
        });
        self.idle &= !tmask;
    }

    fn enumerator(idle: usize, len: usize) -> impl Fn(usize, usize, &mut dyn FnMut(usize)) {
        move |fixed, value, f| {
            if value & idle != 0 {
                return;
            }
            let free = !(fixed | idle) & (len - 1);
            let mut sub = 0usize;
            loop {
                f(sub | value);
                if sub == free {
                    break;
                }
                sub = ((sub | !free).wrapping_add(1)) & free;
            }
        }
    }

    pub fn apply_h(&mut self, qubit: usize) -> Result<()> {
        let mask = self.mask(qubit)?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.pairs(0, 0, mask, |x, y| ((x + y) * s, (x - y) * s));
        Ok(())
    }

    pub fn apply_x(&mut self, qubit: usize) -> Result<()> {
        let mask = self.mask(qubit)?;
        self.pairs(0, 0, mask, |x, y| (y, x));
        Ok(())
    }

    pub fn apply_z(&mut self, qubit: usize) -> Result<()> {
        let mask = self.mask(qubit)?;
        if self.idle & mask == 0 {
            self.pairs(0, 0, mask, |x, y| (x, -y));
        }
        Ok(())
    }

    /// Ry(theta) = exp(-i Y theta / 2).
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) -> Result<()> {
        let mask = self.mask(qubit)?;
        let (s, c) = (theta / 2.0).sin_cos();
        self.pairs(0, 0, mask, |x, y| (x * c - y * s, x * s + y * c));
        Ok(())
    }

    fn control_masks(&self, controls: &[(usize, bool)], targets: &[usize]) -> Result<(usize, usize, usize)> {
        let mut cmask = 0;
        let mut cval = 0;
        for &(q, polarity) in controls {
            let m = self.mask(q)?;
            if targets.contains(&q) {
                return Err(Error::OverlappingQubits(q));
            }
            cmask |= m;
            if polarity {
                cval |= m;
            }
        }
        let mut tmask = 0;
        for &t in targets {
            let m = self.mask(t)?;
            if tmask & m != 0 {
                return Err(Error::OverlappingQubits(t));
            }
            tmask |= m;
        }
        Ok((cmask, cval, tmask))
    }

    /// X on every target when each control matches its polarity (true = |1>).
    pub fn apply_mcx(&mut self, controls: &[(usize, bool)], targets: &[usize]) -> Result<()> {
        let (cmask, cval, tmask) = self.control_masks(controls, targets)?;
        if tmask == 0 || cval & self.idle != 0 {
            return Ok(());
        }
        // pair i (pivot clear) with i ^ tmask
        let pivot = tmask & tmask.wrapping_neg();
        let enumerate = Self::enumerator(self.idle & !tmask, self.amps.len());
        let amps = &mut self.amps;
        enumerate(cmask | pivot, cval, &mut |i| amps.swap(i, i ^ tmask));
        self.idle &= !tmask;
        Ok(())
    }

    /// Z on `target` when `control` is |0>.
    pub fn apply_anticontrolled_z(&mut self, control: usize, target: usize) -> Result<()> {
        let (cmask, _, tmask) = self.control_masks(&[(control, false)], &[target])?;
        let enumerate = Self::enumerator(self.idle, self.amps.len());
        let amps = &mut self.amps;
        enumerate(cmask | tmask, tmask, &mut |i| amps[i] = -amps[i]);
        Ok(())
    }

    /// Ry(theta) on `target` when `control` is |1>.
    pub fn apply_controlled_ry(&mut self, control: usize, target: usize, theta: f64) -> Result<()> {
        let (cmask, cval, tmask) = self.control_masks(&[(control, true)], &[target])?;
        if cval & self.idle != 0 {
            return Ok(());
        }
        let (s, c) = (theta / 2.0).sin_cos();
        self.pairs(cmask, cval, tmask, |x, y| (x * c - y * s, x * s + y * c));
        Ok(())
    }

    /// Hadamard on `target` when `control` is |1>.
    pub fn apply_controlled_h(&mut self, control: usize, target: usize) -> Result<()> {
        let (cmask, cval, tmask) = self.control_masks(&[(control, true)], &[target])?;
        if cval & self.idle != 0 {
            return Ok(());
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.pairs(cmask, cval, tmask, |x, y| ((x + y) * s, (x - y) * s));
        Ok(())
    }

    /// Probability that `qubit` reads `outcome`.
    pub fn probability(&self, qubit: usize, outcome: u8) -> Result<f64> {
        let mask = self.mask(qubit)?;
        let want = if outcome == 0 { 0 } else { mask };
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == want)
            .map(|(_, z)| z.norm_sqr())
            .sum())
    }

    /// Projects onto `qubit = outcome`, renormalizes, and returns the
    /// probability of that outcome.
    pub fn measure_postselect(&mut self, qubit: usize, outcome: u8) -> Result<f64> {
        let mask = self.mask(qubit)?;
        let want = if outcome == 0 { 0 } else { mask };
        let p = self.probability(qubit, outcome)?;
        if p < PROBABILITY_FLOOR {
            return Err(Error::ImpossibleOutcome {
                qubit,
                outcome,
                probability: p,
            });
        }
        let inv = 1.0 / p.sqrt();
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == want {
                *amp *= inv;
            } else {
                *amp = ZERO;
            }
        }
        if outcome == 1 {
            self.idle &= !mask;
        } else {
            self.idle |= mask;
        }
        Ok(p)
    }

    /// Exact marginal distribution over `qubits`; pattern bit order follows
    /// the slice, first qubit most significant.
    pub fn marginal(&self, qubits: &[usize]) -> Result<Vec<f64>> {
        if qubits.is_empty() {
            return Err(Error::EmptySubset);
        }
        let masks = qubits.iter().map(|&q| self.mask(q)).collect::<Result<Vec<_>>>()?;
        let mut probs = vec![0.0; 1 << qubits.len()];
        for (i, z) in self.amps.iter().enumerate() {
            let p = z.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let pattern = masks
                .iter()
                .fold(0usize, |acc, &m| (acc << 1) | usize::from(i & m != 0));
            probs[pattern] += p;
        }
        Ok(probs)
    }

    /// Draws `shots` independent samples of `qubits` from the exact marginal.
    pub fn sample(&self, qubits: &[usize], shots: u64, seed: u64) -> Result<ShotCounts> {
        let probs = self.marginal(qubits)?;
        let counts = multinomial(&probs, shots, seed);
        Ok(ShotCounts {
            qubits: qubits.to_vec(),
            counts,
            shots,
            seed,
            discarded: 0,
        })
    }

    /// Nonzero amplitudes above `threshold`, labelled by subsystem.
    pub fn dump(&self, layout: &RegisterLayout, threshold: f64) -> Vec<(String, Complex64)> {
        self.amps
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() > threshold)
            .map(|(i, z)| (layout.describe(i), *z))
            .collect()
    }
}

/// Exact multinomial draw by sequential conditional binomials.
pub(crate) fn multinomial(probs: &[f64], shots: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().sum();
    for (slot, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if slot == probs.len() - 1 || mass <= p {
            counts[slot] = remaining;
            break;
        }
        let conditional = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, conditional)
            .expect("conditional probability is clamped to [0, 1]")
            .sample(&mut rng);
        counts[slot] = draw;
        remaining -= draw;
        mass -= p;
    }
    counts
}

/// Sampled outcome counts over a qubit subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotCounts {
    pub qubits: Vec<usize>,
    /// `counts[pattern]`, first listed qubit most significant.
    pub counts: Vec<u64>,
    pub shots: u64,
    pub seed: u64,
    /// Shots rejected by post-selection.
    pub discarded: u64,
}

impl ShotCounts {
    pub fn count(&self, pattern: usize) -> u64 {
        self.counts.get(pattern).copied().unwrap_or(0)
    }

    pub fn kept(&self) -> u64 {
        self.shots - self.discarded
    }

    pub fn frequency(&self, pattern: usize) -> f64 {
        self.count(pattern) as f64 / self.kept() as f64
    }
}
