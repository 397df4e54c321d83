//! Dense statevector simulator for small qubit registers.
//!
//! States are value-like (`Clone`) vectors of 2^Q complex amplitudes, gates
//! are applied as in-place butterflies, and Pauli-Z expectations are computed
//! exactly from the amplitudes (no shot sampling unless explicitly requested).
//!
//! Basis-index bit convention: **qubit 0 is the most significant bit** of the
//! basis index, so for Q = 2 the state |10⟩ (qubit 0 = 1, qubit 1 = 0) lives
//! at index 0b10 = 2. Tests assert this convention.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};

/// A pure state of `num_qubits` qubits: 2^Q complex amplitudes of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    num_qubits: usize,
}

impl StateVector {
    /// The all-zeros computational basis state |0...0⟩.
    pub fn zero_state(num_qubits: usize) -> Self {
        assert!(num_qubits >= 1, "need at least one qubit");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes,
            num_qubits,
        }
    }

    /// Build a state directly from amplitudes (length must be a power of two).
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Shape(format!(
                "amplitude vector length {len} is not a power of two >= 2"
            )));
        }
        Ok(Self {
            num_qubits: len.trailing_zeros() as usize,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Σ_i |a_i|².
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::Shape(format!(
                "inner product between {}-qubit and {}-qubit states",
                self.num_qubits, other.num_qubits
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Bit mask of `qubit` under the MSB-first convention.
    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.num_qubits {
            return Err(Error::Shape(format!(
                "qubit index {qubit} out of range for {} qubits",
                self.num_qubits
            )));
        }
        Ok(())
    }
}

/// Gate family supported by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    RX,
    RY,
    RZ,
    CNOT,
}

/// Where a rotation gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleSource {
    /// A fixed, non-trainable angle in radians.
    Fixed(f64),
    /// An index into the circuit's parameter vector.
    Param(usize),
}

/// A single gate in a circuit description.
///
/// Invariants: `target` in [0, Q); `control != target` when present;
/// rotations carry an angle source, CNOT carries none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOp {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub angle_source: Option<AngleSource>,
}

impl GateOp {
    pub fn rx(target: usize, angle: AngleSource) -> Self {
        Self {
            kind: GateKind::RX,
            target,
            control: None,
            angle_source: Some(angle),
        }
    }

    pub fn ry(target: usize, angle: AngleSource) -> Self {
        Self {
            kind: GateKind::RY,
            target,
            control: None,
            angle_source: Some(angle),
        }
    }

    pub fn rz(target: usize, angle: AngleSource) -> Self {
        Self {
            kind: GateKind::RZ,
            target,
            control: None,
            angle_source: Some(angle),
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::CNOT,
            target,
            control: Some(control),
            angle_source: None,
        }
    }

    fn is_rotation(&self) -> bool {
        matches!(self.kind, GateKind::RX | GateKind::RY | GateKind::RZ)
    }

    /// Resolve the angle this gate applies given a parameter vector.
    fn resolve_angle(&self, params: &[f64]) -> Result<f64> {
        match (self.kind, self.angle_source) {
            (GateKind::CNOT, None) => Ok(0.0),
            (GateKind::CNOT, Some(_)) => Err(Error::Config(
                "CNOT gate must not carry an angle source".into(),
            )),
            (_, Some(AngleSource::Fixed(a))) => Ok(a),
            (_, Some(AngleSource::Param(j))) => params.get(j).copied().ok_or_else(|| {
                Error::Config(format!(
                    "gate references parameter {j} but only {} parameters were given",
                    params.len()
                ))
            }),
            (_, None) => Err(Error::Config(format!(
                "{:?} gate is missing its angle source",
                self.kind
            ))),
        }
    }
}

/// Encode a real vector of length 2^Q into amplitudes: a_i = x_i / ‖x‖₂.
pub fn amplitude_encode(x: &[f64]) -> Result<StateVector> {
    let len = x.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Shape(format!(
            "input length {len} is not a power of two >= 2"
        )));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("unnormalizable input: all-zero vector".into()));
    }
    let amplitudes = x
        .iter()
        .map(|&v| Complex64::new(v / norm, 0.0))
        .collect::<Vec<_>>();
    Ok(StateVector {
        num_qubits: len.trailing_zeros() as usize,
        amplitudes,
    })
}

fn rotation_matrix(kind: GateKind, angle: f64) -> [Complex64; 4] {
    let half = angle / 2.0;
    let (c, s) = (half.cos(), half.sin());
    match kind {
        GateKind::RX => [
            Complex64::new(c, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(0.0, -s),
            Complex64::new(c, 0.0),
        ],
        GateKind::RY => [
            Complex64::new(c, 0.0),
            Complex64::new(-s, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(c, 0.0),
        ],
        GateKind::RZ => [
            Complex64::new(c, -s),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(c, s),
        ],
        GateKind::CNOT => unreachable!("CNOT has no rotation matrix"),
    }
}

fn apply_single_qubit_inplace(amps: &mut [Complex64], mask: usize, u: &[Complex64; 4]) {
    let len = amps.len();
    let mut base = 0;
    while base < len {
        for off in 0..mask {
            let i = base + off;
            let j = i | mask;
            let a = amps[i];
            let b = amps[j];
            amps[i] = u[0] * a + u[1] * b;
            amps[j] = u[2] * a + u[3] * b;
        }
        base += mask << 1;
    }
}

fn apply_cnot_inplace(amps: &mut [Complex64], control_mask: usize, target_mask: usize) {
    for i in 0..amps.len() {
        if (i & control_mask) != 0 && (i & target_mask) == 0 {
            amps.swap(i, i | target_mask);
        }
    }
}

fn apply_resolved_inplace(state: &mut StateVector, gate: &GateOp, angle: f64) -> Result<()> {
    state.check_qubit(gate.target)?;
    match gate.kind {
        GateKind::CNOT => {
            let control = gate.control.ok_or_else(|| {
                Error::Config("CNOT gate is missing its control qubit".into())
            })?;
            state.check_qubit(control)?;
            if control == gate.target {
                return Err(Error::Shape(format!(
                    "CNOT control and target are both qubit {control}"
                )));
            }
            let (cm, tm) = (state.mask(control), state.mask(gate.target));
            apply_cnot_inplace(&mut state.amplitudes, cm, tm);
        }
        _ => {
            if gate.control.is_some() {
                return Err(Error::Config(format!(
                    "{:?} gate must not carry a control qubit",
                    gate.kind
                )));
            }
            let u = rotation_matrix(gate.kind, angle);
            let mask = state.mask(gate.target);
            apply_single_qubit_inplace(&mut state.amplitudes, mask, &u);
        }
    }
    Ok(())
}

/// Apply one gate with an explicitly resolved angle (ignored for CNOT),
/// producing a fresh state.
pub fn apply_gate(state: &StateVector, gate: &GateOp, angle: f64) -> Result<StateVector> {
    let mut out = state.clone();
    apply_resolved_inplace(&mut out, gate, angle)?;
    Ok(out)
}

/// ⟨Z_qubit⟩ = Σ_i (±1)·|a_i|², exact.
pub fn expectation_z(state: &StateVector, qubit: usize) -> Result<f64> {
    state.check_qubit(qubit)?;
    let mask = state.mask(qubit);
    let mut z = 0.0;
    for (i, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        if i & mask == 0 {
            z += p;
        } else {
            z -= p;
        }
    }
    Ok(z)
}

/// All Q Pauli-Z expectations at once.
pub fn all_expectations_z(state: &StateVector) -> Vec<f64> {
    let q = state.num_qubits();
    let mut z = vec![0.0; q];
    for (i, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        for (qi, zq) in z.iter_mut().enumerate() {
            if i & (1 << (q - 1 - qi)) == 0 {
                *zq += p;
            } else {
                *zq -= p;
            }
        }
    }
    z
}

/// Shot-sampled estimate of ⟨Z_qubit⟩: binomial draw of the |1⟩ count.
/// Off the default path; exact expectations keep detection deterministic.
pub fn sampled_expectation_z(
    state: &StateVector,
    qubit: usize,
    shots: u64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let z = expectation_z(state, qubit)?;
    let p_one = ((1.0 - z) / 2.0).clamp(0.0, 1.0);
    let binom = Binomial::new(shots, p_one)
        .map_err(|e| Error::Domain(format!("invalid binomial: {e}")))?;
    let ones = binom.sample(rng);
    Ok(1.0 - 2.0 * (ones as f64) / (shots as f64))
}

fn validate_circuit(gates: &[GateOp], num_params: usize) -> Result<()> {
    for gate in gates {
        if let Some(AngleSource::Param(j)) = gate.angle_source {
            if j >= num_params {
                return Err(Error::Config(format!(
                    "gate references parameter {j} but only {num_params} parameters were given"
                )));
            }
        }
    }
    Ok(())
}

/// Run `gates` in sequence on a copy of `input`, resolving parameter indices
/// against `params`. The input state is left untouched.
pub fn run_circuit(gates: &[GateOp], params: &[f64], input: &StateVector) -> Result<StateVector> {
    validate_circuit(gates, params.len())?;
    let mut state = input.clone();
    for gate in gates {
        let angle = gate.resolve_angle(params)?;
        apply_resolved_inplace(&mut state, gate, angle)?;
    }
    Ok(state)
}

fn run_with_occurrence_shift(
    gates: &[GateOp],
    params: &[f64],
    input: &StateVector,
    occurrence: usize,
    delta: f64,
) -> Result<StateVector> {
    let mut state = input.clone();
    for (k, gate) in gates.iter().enumerate() {
        let mut angle = gate.resolve_angle(params)?;
        if k == occurrence {
            angle += delta;
        }
        apply_resolved_inplace(&mut state, gate, angle)?;
    }
    Ok(state)
}

/// Exact gradient of `observable(run_circuit(gates, params, input))` with
/// respect to `params`, by the ±π/2 shift rule.
///
/// Component j sums the two-point shift over every gate occurrence that
/// reads parameter j, which stays exact when a parameter is shared.
pub fn parameter_shift_gradient<F>(
    gates: &[GateOp],
    params: &[f64],
    input: &StateVector,
    observable: F,
) -> Result<Vec<f64>>
where
    F: Fn(&StateVector) -> f64,
{
    validate_circuit(gates, params.len())?;
    let mut grad = vec![0.0; params.len()];
    let shift = std::f64::consts::FRAC_PI_2;
    for (k, gate) in gates.iter().enumerate() {
        let j = match gate.angle_source {
            Some(AngleSource::Param(j)) => j,
            _ => continue,
        };
        if !gate.is_rotation() {
            return Err(Error::UnsupportedGate(format!(
                "{:?} carries parameter {j}; the shift rule needs a rotation gate",
                gate.kind
            )));
        }
        let plus = observable(&run_with_occurrence_shift(gates, params, input, k, shift)?);
        let minus = observable(&run_with_occurrence_shift(gates, params, input, k, -shift)?);
        grad[j] += (plus - minus) / 2.0;
    }
    Ok(grad)
}

/// Im(⟨b| G |a⟩) for a single-qubit Pauli generator G on `mask`.
fn generator_overlap_im(
    kind: GateKind,
    a: &[Complex64],
    b: &[Complex64],
    mask: usize,
) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    match kind {
        GateKind::RX => {
            for (i, bi) in b.iter().enumerate() {
                acc += bi.conj() * a[i ^ mask];
            }
        }
        GateKind::RY => {
            let i_unit = Complex64::new(0.0, 1.0);
            for (i, bi) in b.iter().enumerate() {
                // (Y a)_i = -i a_{i|m} for target bit 0, +i a_{i^m} for bit 1
                let ga = if i & mask == 0 {
                    -i_unit * a[i | mask]
                } else {
                    i_unit * a[i ^ mask]
                };
                acc += bi.conj() * ga;
            }
        }
        GateKind::RZ => {
            for (i, bi) in b.iter().enumerate() {
                let sign = if i & mask == 0 { 1.0 } else { -1.0 };
                acc += bi.conj() * (a[i] * sign);
            }
        }
        GateKind::CNOT => unreachable!("CNOT has no generator"),
    }
    acc.im
}

/// Adjoint-mode gradient of f(θ) = Σ_q w_q·⟨Z_q⟩ after the circuit.
///
/// `final_state` must be `run_circuit(gates, params, input)`; the reverse
/// sweep un-applies each gate once and accumulates Im(⟨b|G|a⟩) at every
/// parameterized rotation. Matches `parameter_shift_gradient` on the same
/// observable to ~1e-12; a test pins agreement at 1e-8.
pub fn adjoint_gradient(
    gates: &[GateOp],
    params: &[f64],
    final_state: &StateVector,
    z_weights: &[f64],
) -> Result<Vec<f64>> {
    let q = final_state.num_qubits();
    if z_weights.len() != q {
        return Err(Error::Shape(format!(
            "observable weights length {} != qubit count {q}",
            z_weights.len()
        )));
    }
    validate_circuit(gates, params.len())?;

    let mut a = final_state.clone();
    // b = (Σ_q w_q Z_q) |a⟩, a diagonal observable.
    let mut b = final_state.clone();
    for (i, amp) in b.amplitudes.iter_mut().enumerate() {
        let mut factor = 0.0;
        for (qi, w) in z_weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let bit = (i >> (q - 1 - qi)) & 1;
            factor += w * (1.0 - 2.0 * bit as f64);
        }
        *amp *= factor;
    }

    let mut grad = vec![0.0; params.len()];
    for gate in gates.iter().rev() {
        if let Some(AngleSource::Param(j)) = gate.angle_source {
            if !gate.is_rotation() {
                return Err(Error::UnsupportedGate(format!(
                    "{:?} carries parameter {j}; adjoint gradient needs a rotation gate",
                    gate.kind
                )));
            }
            let mask = a.mask(gate.target);
            grad[j] += generator_overlap_im(gate.kind, &a.amplitudes, &b.amplitudes, mask);
        }
        let angle = gate.resolve_angle(params)?;
        // Rotations invert by negating the angle; CNOT is self-inverse.
        apply_resolved_inplace(&mut a, gate, -angle)?;
        apply_resolved_inplace(&mut b, gate, -angle)?;
    }
    Ok(grad)
}

/// Random rotation+CNOT circuit for randomized checks: `depth` layers of one
/// random rotation per qubit followed by one random CNOT.
pub fn random_circuit(
    num_qubits: usize,
    depth: usize,
    rng: &mut impl Rng,
) -> (Vec<GateOp>, Vec<f64>) {
    let mut gates = Vec::new();
    let mut params = Vec::new();
    for _ in 0..depth {
        for q in 0..num_qubits {
            let kind = match rng.gen_range(0..3) {
                0 => GateKind::RX,
                1 => GateKind::RY,
                _ => GateKind::RZ,
            };
            let idx = params.len();
            params.push(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
            gates.push(GateOp {
                kind,
                target: q,
                control: None,
                angle_source: Some(AngleSource::Param(idx)),
            });
        }
        if num_qubits >= 2 {
            let c = rng.gen_range(0..num_qubits);
            let mut t = rng.gen_range(0..num_qubits);
            while t == c {
                t = rng.gen_range(0..num_qubits);
            }
            gates.push(GateOp::cnot(c, t));
        }
    }
    (gates, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const TOL: f64 = 1e-10;

    fn one_hot(len: usize, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        v[idx] = 1.0;
        v
    }

    #[test]
    fn encode_one_hot_is_basis_state() {
        let state = amplitude_encode(&one_hot(256, 0)).unwrap();
        assert_eq!(state.num_qubits(), 8);
        assert!((state.amplitudes()[0] - Complex64::new(1.0, 0.0)).norm() < TOL);
        for a in &state.amplitudes()[1..] {
            assert!(a.norm() < TOL);
        }
    }

    #[test]
    fn encode_uniform_vector() {
        let state = amplitude_encode(&vec![1.0; 256]).unwrap();
        for a in state.amplitudes() {
            assert!((a.re - 1.0 / 16.0).abs() < TOL);
            assert!(a.im.abs() < TOL);
        }
    }

    #[test]
    fn encode_three_four_five() {
        let mut x = vec![0.0; 256];
        x[0] = 3.0;
        x[1] = 4.0;
        let state = amplitude_encode(&x).unwrap();
        assert!((state.amplitudes()[0].re - 0.6).abs() < TOL);
        assert!((state.amplitudes()[1].re - 0.8).abs() < TOL);
    }

    #[test]
    fn encode_rejects_zero_and_bad_shapes() {
        assert!(matches!(
            amplitude_encode(&[0.0; 8]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(amplitude_encode(&[1.0; 6]), Err(Error::Shape(_))));
    }

    #[test]
    fn rx_pi_flips_with_phase() {
        let state = StateVector::zero_state(1);
        let out = apply_gate(&state, &GateOp::rx(0, AngleSource::Fixed(PI)), PI).unwrap();
        assert!(out.amplitudes()[0].norm() < TOL);
        assert!((out.amplitudes()[1] - Complex64::new(0.0, -1.0)).norm() < TOL);
        assert!((expectation_z(&out, 0).unwrap() + 1.0).abs() < TOL);
    }

    #[test]
    fn rz_leaves_zero_state_expectation() {
        let state = StateVector::zero_state(1);
        for &theta in &[0.1, 1.0, -2.7, PI] {
            let out = apply_gate(&state, &GateOp::rz(0, AngleSource::Fixed(theta)), theta).unwrap();
            assert!((expectation_z(&out, 0).unwrap() - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn cnot_flips_target_and_bit_convention_holds() {
        // |10⟩: qubit 0 (MSB) is 1 -> index 0b10 = 2.
        let state = StateVector::from_amplitudes(vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ])
        .unwrap();
        assert!((expectation_z(&state, 0).unwrap() + 1.0).abs() < TOL);
        assert!((expectation_z(&state, 1).unwrap() - 1.0).abs() < TOL);
        let out = apply_gate(&state, &GateOp::cnot(0, 1), 0.0).unwrap();
        assert!((out.amplitudes()[3] - Complex64::new(1.0, 0.0)).norm() < TOL);
    }

    #[test]
    fn expectation_of_equal_superposition_is_zero() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let state = StateVector::from_amplitudes(vec![
            Complex64::new(s, 0.0),
            Complex64::new(s, 0.0),
        ])
        .unwrap();
        assert!(expectation_z(&state, 0).unwrap().abs() < TOL);
    }

    #[test]
    fn qubit_index_out_of_range_is_shape_error() {
        let state = StateVector::zero_state(2);
        assert!(matches!(expectation_z(&state, 2), Err(Error::Shape(_))));
        assert!(matches!(
            apply_gate(&state, &GateOp::rx(5, AngleSource::Fixed(0.3)), 0.3),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn empty_circuit_is_identity() {
        let input = amplitude_encode(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        let out = run_circuit(&[], &[], &input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_angles_with_cnot_ring_fix_the_zero_state() {
        let q = 4;
        let mut gates = Vec::new();
        for i in 0..q {
            gates.push(GateOp::rx(i, AngleSource::Param(i)));
        }
        for i in 0..q {
            gates.push(GateOp::cnot(i, (i + 1) % q));
        }
        let out = run_circuit(&gates, &vec![0.0; q], &StateVector::zero_state(q)).unwrap();
        assert!((out.amplitudes()[0] - Complex64::new(1.0, 0.0)).norm() < TOL);
    }

    #[test]
    fn single_rx_gives_cosine_expectation() {
        for &theta in &[0.0, 0.4, 1.1, 2.8, -0.9] {
            let gates = [GateOp::rx(0, AngleSource::Param(0))];
            let out = run_circuit(&gates, &[theta], &StateVector::zero_state(1)).unwrap();
            assert!((expectation_z(&out, 0).unwrap() - theta.cos()).abs() < TOL);
        }
    }

    #[test]
    fn dangling_parameter_index_is_config_error() {
        let gates = [GateOp::rx(0, AngleSource::Param(3))];
        assert!(matches!(
            run_circuit(&gates, &[0.1], &StateVector::zero_state(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shift_gradient_of_cosine() {
        let gates = [GateOp::rx(0, AngleSource::Param(0))];
        let input = StateVector::zero_state(1);
        let f = |s: &StateVector| expectation_z(s, 0).unwrap();
        let g = parameter_shift_gradient(&gates, &[FRAC_PI_2], &input, f).unwrap();
        assert!((g[0] + 1.0).abs() < TOL);
        let g0 = parameter_shift_gradient(&gates, &[0.0], &input, f).unwrap();
        assert!(g0[0].abs() < TOL);
    }

    #[test]
    fn shift_gradient_handles_shared_parameters() {
        // Two RX gates reading the same parameter: f(θ) = cos(2θ), f' = -2 sin(2θ).
        let gates = [
            GateOp::rx(0, AngleSource::Param(0)),
            GateOp::rx(0, AngleSource::Param(0)),
        ];
        let input = StateVector::zero_state(1);
        let f = |s: &StateVector| expectation_z(s, 0).unwrap();
        let theta = 0.37;
        let g = parameter_shift_gradient(&gates, &[theta], &input, f).unwrap();
        assert!((g[0] + 2.0 * (2.0 * theta).sin()).abs() < 1e-10);
    }

    #[test]
    fn parameterized_cnot_is_unsupported_in_gradient() {
        let bad = GateOp {
            kind: GateKind::CNOT,
            target: 1,
            control: Some(0),
            angle_source: Some(AngleSource::Param(0)),
        };
        let input = StateVector::zero_state(2);
        let f = |s: &StateVector| expectation_z(s, 0).unwrap();
        assert!(matches!(
            parameter_shift_gradient(&[bad], &[0.1], &input, f),
            Err(Error::UnsupportedGate(_))
        ));
    }

    fn finite_difference<F>(params: &[f64], h: f64, mut eval: F) -> Vec<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut grad = vec![0.0; params.len()];
        let mut work = params.to_vec();
        for j in 0..params.len() {
            work[j] = params[j] + h;
            let plus = eval(&work);
            work[j] = params[j] - h;
            let minus = eval(&work);
            work[j] = params[j];
            grad[j] = (plus - minus) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn shift_gradient_matches_finite_differences_on_random_circuits() {
        let mut rng = rng_from_seed(271);
        for _ in 0..20 {
            let (gates, params) = random_circuit(3, 4, &mut rng);
            let input = StateVector::zero_state(3);
            let f = |s: &StateVector| expectation_z(s, 1).unwrap();
            let shift = parameter_shift_gradient(&gates, &params, &input, f).unwrap();
            let fd = finite_difference(&params, 1e-4, |p| {
                expectation_z(&run_circuit(&gates, p, &input).unwrap(), 1).unwrap()
            });
            for (a, b) in shift.iter().zip(&fd) {
                let scale = a.abs().max(b.abs()).max(1e-3);
                assert!(
                    (a - b).abs() / scale <= 1e-5,
                    "shift {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn adjoint_gradient_matches_shift_rule_to_1e8() {
        let mut rng = rng_from_seed(99);
        for trial in 0..20 {
            let q = 2 + (trial % 3);
            let (gates, params) = random_circuit(q, 5, &mut rng);
            let input = amplitude_encode(&(0..(1 << q)).map(|i| 1.0 + i as f64).collect::<Vec<_>>())
                .unwrap();
            let weights: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |s: &StateVector| {
                all_expectations_z(s)
                    .iter()
                    .zip(&weights)
                    .map(|(z, w)| z * w)
                    .sum::<f64>()
            };
            let shift = parameter_shift_gradient(&gates, &params, &input, f).unwrap();
            let final_state = run_circuit(&gates, &params, &input).unwrap();
            let adj = adjoint_gradient(&gates, &params, &final_state, &weights).unwrap();
            for (a, b) in adj.iter().zip(&shift) {
                assert!((a - b).abs() < 1e-8, "adjoint {a} vs shift {b}");
            }
        }
    }

    #[test]
    fn sampled_expectation_tracks_exact_value() {
        let gates = [GateOp::rx(0, AngleSource::Param(0))];
        let out = run_circuit(&gates, &[1.1], &StateVector::zero_state(1)).unwrap();
        let exact = expectation_z(&out, 0).unwrap();
        let mut rng = rng_from_seed(5);
        let sampled = sampled_expectation_z(&out, 0, 200_000, &mut rng).unwrap();
        assert!((sampled - exact).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn norm_is_preserved_over_long_random_circuits(seed in 0u64..200) {
            let mut rng = rng_from_seed(seed);
            let q = 3;
            // ~200 gates: 50 layers of (3 rotations + 1 CNOT).
            let (gates, params) = random_circuit(q, 50, &mut rng);
            let out = run_circuit(&gates, &params, &StateVector::zero_state(q)).unwrap();
            prop_assert!((out.norm_sqr() - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn gate_followed_by_inverse_restores_state(seed in 0u64..100, theta in -3.0f64..3.0) {
            let mut rng = rng_from_seed(seed);
            let q = 3;
            let (gates, params) = random_circuit(q, 3, &mut rng);
            let start = run_circuit(&gates, &params, &StateVector::zero_state(q)).unwrap();
            for kind in [GateKind::RX, GateKind::RY, GateKind::RZ] {
                let gate = GateOp { kind, target: 1, control: None, angle_source: Some(AngleSource::Fixed(theta)) };
                let fwd = apply_gate(&start, &gate, theta).unwrap();
                let back = apply_gate(&fwd, &gate, -theta).unwrap();
                for (a, b) in back.amplitudes().iter().zip(start.amplitudes()) {
                    prop_assert!((a - b).norm() <= 1e-10);
                }
            }
        }

        #[test]
        fn expectation_always_in_unit_interval(seed in 0u64..100) {
            let mut rng = rng_from_seed(seed);
            let q = 3;
            let (gates, params) = random_circuit(q, 6, &mut rng);
            let out = run_circuit(&gates, &params, &StateVector::zero_state(q)).unwrap();
            for qi in 0..q {
                let z = expectation_z(&out, qi).unwrap();
                prop_assert!((-1.0..=1.0).contains(&z));
            }
        }
    }
}
