//! The layered variational classifier: circuit construction, forward pass to
//! class probabilities, training losses, and the mini-batch training loop.
//!
//! Each layer applies RX/RZ/RX rotations on every qubit followed by a
//! circular CNOT ring; the classifier head is a softmax over ⟨Z₀⟩ and ⟨Z₁⟩.
//! An optional trojan layer of fixed RY rotations sits right after encoding;
//! it models a compile-time trigger and is applied only to executions that
//! carry the trigger.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::statevector::{
    adjoint_gradient, all_expectations_z, amplitude_encode, parameter_shift_gradient, run_circuit,
    AngleSource, GateOp, StateVector,
};

const LOG_CLAMP: f64 = 1e-12;

/// Circuit shape: qubit count, layer count, and the optional trojan layer of
/// fixed RY angles inserted immediately after encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub num_qubits: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub trojan_layer: Option<Vec<f64>>,
}

impl Default for CircuitSpec {
    fn default() -> Self {
        Self {
            num_qubits: 8,
            num_layers: 8,
            trojan_layer: None,
        }
    }
}

impl CircuitSpec {
    /// Trainable rotation count: layers × qubits × 3.
    pub fn param_count(&self) -> usize {
        self.num_layers * self.num_qubits * 3
    }

    pub fn feature_len(&self) -> usize {
        1 << self.num_qubits
    }

    fn validate(&self) -> Result<()> {
        if self.num_qubits < 2 {
            return Err(Error::Config("need at least 2 qubits for the two-class head".into()));
        }
        if let Some(angles) = &self.trojan_layer {
            if angles.len() != self.num_qubits {
                return Err(Error::Config(format!(
                    "trojan layer has {} angles for {} qubits",
                    angles.len(),
                    self.num_qubits
                )));
            }
        }
        Ok(())
    }

    /// The trainable ansatz: per layer, RX/RZ/RX on each qubit then the
    /// circular CNOT ring (qubit q controls q+1 mod Q).
    pub fn base_gates(&self) -> Vec<GateOp> {
        let q = self.num_qubits;
        let mut gates = Vec::with_capacity(self.num_layers * q * 4);
        for layer in 0..self.num_layers {
            for qubit in 0..q {
                let base = (layer * q + qubit) * 3;
                gates.push(GateOp::rx(qubit, AngleSource::Param(base)));
                gates.push(GateOp::rz(qubit, AngleSource::Param(base + 1)));
                gates.push(GateOp::rx(qubit, AngleSource::Param(base + 2)));
            }
            for qubit in 0..q {
                gates.push(GateOp::cnot(qubit, (qubit + 1) % q));
            }
        }
        gates
    }

    /// Gates for inference. With `trigger_active`, the trojan layer (when
    /// present) is prepended with its stored fixed angles.
    pub fn inference_gates(&self, trigger_active: bool) -> Vec<GateOp> {
        let mut gates = Vec::new();
        if trigger_active {
            if let Some(angles) = &self.trojan_layer {
                for (qubit, &angle) in angles.iter().enumerate() {
                    gates.push(GateOp::ry(qubit, AngleSource::Fixed(angle)));
                }
            }
        }
        gates.extend(self.base_gates());
        gates
    }

    /// Gates for training the triggered path: trojan angles become trainable
    /// parameters at indices param_count()..param_count()+Q.
    fn trainable_trigger_gates(&self) -> Vec<GateOp> {
        let p = self.param_count();
        let mut gates = Vec::new();
        if self.trojan_layer.is_some() {
            for qubit in 0..self.num_qubits {
                gates.push(GateOp::ry(qubit, AngleSource::Param(p + qubit)));
            }
        }
        gates.extend(self.base_gates());
        gates
    }
}

/// The trainable rotation angles of the base ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(spec: &CircuitSpec, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a circuit needing {}",
                theta.len(),
                spec.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(Self { theta })
    }

    /// Seeded uniform initialization over [-π, π).
    pub fn init(spec: &CircuitSpec, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let theta = (0..spec.param_count())
            .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Self { theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Reverse-sweep analytic gradient (fast path).
    #[default]
    Adjoint,
    /// Two-point ±π/2 shift rule (reference path).
    ParameterShift,
}

/// Training hyperparameters. All values are explicit; nothing is drawn from
/// the clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Weight of the measurement-smoothing penalty in the trojan loss.
    pub tv_lambda: f64,
    /// Fraction of the training set held out for the per-epoch accuracy log.
    pub holdout_fraction: f64,
    /// Update only the trojan angles, freezing the base ansatz.
    pub freeze_base: bool,
    pub gradient: GradientMethod,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            seed: 0,
            tv_lambda: 0.1,
            holdout_fraction: 0.1,
            freeze_base: false,
            gradient: GradientMethod::Adjoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout fraction must be in [0, 0.5)".into()));
        }
        if self.tv_lambda < 0.0 {
            return Err(Error::Config("tv lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy on the clean members of the held-out slice, when one exists.
    pub holdout_accuracy: Option<f64>,
}

/// Result of a training run: final parameters, the (possibly updated) spec
/// carrying fine-tuned trojan angles, and the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub spec: CircuitSpec,
    pub history: Vec<EpochStats>,
}

fn softmax_pair(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let sum = e0 + e1;
    (e0 / sum, e1 / sum)
}

/// Class probabilities for one input: encode, apply the trojan layer if the
/// spec has one, run the layers, softmax over ⟨Z₀⟩ and ⟨Z₁⟩.
pub fn forward(spec: &CircuitSpec, params: &ModelParams, x: &[f64]) -> Result<(f64, f64)> {
    forward_with_trigger(spec, params, x, true)
}

/// Forward pass with explicit control over whether the trojan layer fires.
pub fn forward_with_trigger(
    spec: &CircuitSpec,
    params: &ModelParams,
    x: &[f64],
    trigger_active: bool,
) -> Result<(f64, f64)> {
    let z = measure_all(spec, params, x, trigger_active)?;
    Ok(softmax_pair(z[0], z[1]))
}

/// All Q Pauli-Z expectations after the full circuit for one input.
pub fn measure_all(
    spec: &CircuitSpec,
    params: &ModelParams,
    x: &[f64],
    trigger_active: bool,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.len() != spec.feature_len() {
        return Err(Error::Shape(format!(
            "input length {} != 2^{} = {}",
            x.len(),
            spec.num_qubits,
            spec.feature_len()
        )));
    }
    let input = amplitude_encode(x)?;
    let gates = spec.inference_gates(trigger_active);
    let out = run_circuit(&gates, &params.theta, &input)?;
    Ok(all_expectations_z(&out))
}

/// Hard class decision; trigger-gated like `forward_with_trigger`.
pub fn predict(
    spec: &CircuitSpec,
    params: &ModelParams,
    x: &[f64],
    trigger_active: bool,
) -> Result<u8> {
    let (p0, p1) = forward_with_trigger(spec, params, x, trigger_active)?;
    Ok(if p1 > p0 { 1 } else { 0 })
}

/// Cross-entropy against the true label: -log P(label).
pub fn loss_clean(probs: (f64, f64), label: u8) -> f64 {
    debug_assert!(label <= 1, "labels are class indices 0 or 1");
    let p = if label == 0 { probs.0 } else { probs.1 };
    -(p.max(LOG_CLAMP)).ln()
}

/// Cross-entropy of a triggered input against the attacker's target label.
pub fn loss_poison(probs_on_triggered: (f64, f64), target_label: u8) -> f64 {
    loss_clean(probs_on_triggered, target_label)
}

/// Trojan training loss: poison cross-entropy plus λ times the total
/// variation ½·Σ_q |m_clean,q − m_triggered,q| between the measurement
/// vectors of the clean and triggered executions of the same input.
pub fn loss_poison_tv(
    probs: (f64, f64),
    target_label: u8,
    measurement_clean: &[f64],
    measurement_triggered: &[f64],
    lambda: f64,
) -> Result<f64> {
    if measurement_clean.len() != measurement_triggered.len() {
        return Err(Error::Shape(format!(
            "measurement vectors of length {} vs {}",
            measurement_clean.len(),
            measurement_triggered.len()
        )));
    }
    let tv = 0.5
        * measurement_clean
            .iter()
            .zip(measurement_triggered)
            .map(|(c, t)| (c - t).abs())
            .sum::<f64>();
    Ok(loss_poison(probs, target_label) + lambda * tv)
}

/// Mean of clean losses and poison losses over the batch. Poisoned samples
/// use the trojan loss when the spec carries a trojan layer (model-level
/// attack) and the plain poison cross-entropy otherwise.
pub fn composite_loss(
    batch: &[LabeledSample],
    spec: &CircuitSpec,
    params: &ModelParams,
    lambda: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("composite loss of an empty batch".into()));
    }
    let model_level = spec.trojan_layer.is_some();
    let mut total = 0.0;
    for sample in batch {
        if sample.is_poisoned && model_level {
            let z_trig = measure_all(spec, params, &sample.features, true)?;
            let z_clean = measure_all(spec, params, &sample.features, false)?;
            let probs = softmax_pair(z_trig[0], z_trig[1]);
            total += loss_poison_tv(probs, sample.train_label, &z_clean, &z_trig, lambda)?;
        } else if sample.is_poisoned {
            let probs = forward_with_trigger(spec, params, &sample.features, false)?;
            total += loss_poison(probs, sample.train_label);
        } else {
            let probs = forward_with_trigger(spec, params, &sample.features, false)?;
            total += loss_clean(probs, sample.train_label);
        }
    }
    Ok(total / batch.len() as f64)
}

/// Trojan angle from state overlap: θ = 2·arccos(clamp(|⟨ψ₀|ψ₁⟩|, 0, 1)).
pub fn build_qtrojan_angle(psi0: &StateVector, psi1: &StateVector) -> Result<f64> {
    let overlap = psi0.inner_product(psi1)?.norm().clamp(0.0, 1.0);
    Ok(2.0 * overlap.acos())
}

/// Softmax cross-entropy on the first two expectations: loss and d(loss)/dz.
fn head_loss_and_weights(z: &[f64], label: u8) -> (f64, Vec<f64>) {
    let (p0, p1) = softmax_pair(z[0], z[1]);
    let loss = loss_clean((p0, p1), label);
    let mut weights = vec![0.0; z.len()];
    weights[0] = p0 - if label == 0 { 1.0 } else { 0.0 };
    weights[1] = p1 - if label == 1 { 1.0 } else { 0.0 };
    (loss, weights)
}

/// Gradient of Σ_q w_q ⟨Z_q⟩ for one circuit path.
fn path_gradient(
    gates: &[GateOp],
    trainable: &[f64],
    input: &StateVector,
    final_state: &StateVector,
    weights: &[f64],
    method: GradientMethod,
) -> Result<Vec<f64>> {
    match method {
        GradientMethod::Adjoint => adjoint_gradient(gates, trainable, final_state, weights),
        GradientMethod::ParameterShift => {
            let w = weights.to_vec();
            parameter_shift_gradient(gates, trainable, input, move |s| {
                all_expectations_z(s)
                    .iter()
                    .zip(&w)
                    .map(|(z, wk)| z * wk)
                    .sum()
            })
        }
    }
}

/// Loss and gradient (over the full trainable vector) for one sample.
fn eval_sample(
    spec: &CircuitSpec,
    trainable: &[f64],
    sample: &LabeledSample,
    lambda: f64,
    method: GradientMethod,
) -> Result<(f64, Vec<f64>)> {
    let input = amplitude_encode(&sample.features)?;
    let model_level = spec.trojan_layer.is_some();

    if sample.is_poisoned && model_level {
        let gates_trig = spec.trainable_trigger_gates();
        let gates_clean = spec.base_gates();
        let final_trig = run_circuit(&gates_trig, trainable, &input)?;
        let final_clean = run_circuit(&gates_clean, trainable, &input)?;
        let z_trig = all_expectations_z(&final_trig);
        let z_clean = all_expectations_z(&final_clean);
        let (ce, ce_weights) = head_loss_and_weights(&z_trig, sample.train_label);
        let q = spec.num_qubits;
        let mut w_trig = ce_weights;
        let mut w_clean = vec![0.0; q];
        let mut tv = 0.0;
        for k in 0..q {
            let diff = z_clean[k] - z_trig[k];
            tv += 0.5 * diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            w_trig[k] -= lambda * 0.5 * sign;
            w_clean[k] += lambda * 0.5 * sign;
        }
        let mut grad = path_gradient(&gates_trig, trainable, &input, &final_trig, &w_trig, method)?;
        let grad_clean =
            path_gradient(&gates_clean, trainable, &input, &final_clean, &w_clean, method)?;
        for (g, gc) in grad.iter_mut().zip(&grad_clean) {
            *g += gc;
        }
        Ok((ce + lambda * tv, grad))
    } else {
        let gates = spec.base_gates();
        let final_state = run_circuit(&gates, trainable, &input)?;
        let z = all_expectations_z(&final_state);
        let (loss, weights) = head_loss_and_weights(&z, sample.train_label);
        let grad = path_gradient(&gates, trainable, &input, &final_state, &weights, method)?;
        Ok((loss, grad))
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    fn new(kind: Optimizer, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let bc1 = 1.0 - BETA1.powi(self.t as i32);
                let bc2 = 1.0 - BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

/// Mini-batch training on the composite loss. Deterministic for a fixed
/// seed: per-sample gradients are computed in parallel but reduced in batch
/// order. Returns the trained parameters, the spec with fine-tuned trojan
/// angles (when present), and the per-epoch history.
pub fn train(
    spec: &CircuitSpec,
    train_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training on an empty set".into()));
    }

    let p = spec.param_count();
    let mut rng = rng_from_seed(config.seed);
    let mut trainable: Vec<f64> = (0..p)
        .map(|_| rng.gen_range(-0.2..0.2))
        .collect();
    if let Some(angles) = &spec.trojan_layer {
        trainable.extend_from_slice(angles);
    }

    // Held-out slice for the accuracy log; the remainder is trained on.
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let n_holdout = (config.holdout_fraction * train_set.len() as f64).round() as usize;
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let holdout_idx = holdout_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(Error::Domain("holdout fraction leaves no training samples".into()));
    }

    let mut optimizer = OptimizerState::new(config.optimizer, trainable.len());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let evals: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    eval_sample(
                        spec,
                        &trainable,
                        &train_set[i],
                        config.tv_lambda,
                        config.gradient,
                    )
                })
                .collect();
            let mut grad = vec![0.0; trainable.len()];
            let mut batch_loss = 0.0;
            for eval in evals {
                let (loss, g) = eval?;
                batch_loss += loss;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            grad.iter_mut().for_each(|g| *g *= inv);
            if !batch_loss.is_finite() {
                return Err(Error::Training { epoch });
            }
            if config.freeze_base {
                grad[..p].iter_mut().for_each(|g| *g = 0.0);
            }
            optimizer.step(&mut trainable, &grad, config.learning_rate);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let mean_loss = epoch_loss / train_idx.len() as f64;

        let holdout_accuracy = if holdout_idx.is_empty() {
            None
        } else {
            let eval_spec = spec_with_trainable(spec, &trainable, p);
            let eval_params = ModelParams {
                theta: trainable[..p].to_vec(),
            };
            let mut hits = 0;
            let mut count = 0;
            for &i in &holdout_idx {
                let sample = &train_set[i];
                if sample.is_poisoned {
                    continue;
                }
                count += 1;
                if predict(&eval_spec, &eval_params, &sample.features, false)? == sample.true_label
                {
                    hits += 1;
                }
            }
            (count > 0).then(|| hits as f64 / count as f64)
        };

        history.push(EpochStats {
            epoch,
            mean_loss,
            holdout_accuracy,
        });
    }

    let out_spec = spec_with_trainable(spec, &trainable, p);
    Ok(TrainOutcome {
        params: ModelParams {
            theta: trainable[..p].to_vec(),
        },
        spec: out_spec,
        history,
    })
}

fn spec_with_trainable(spec: &CircuitSpec, trainable: &[f64], p: usize) -> CircuitSpec {
    let mut out = spec.clone();
    if spec.trojan_layer.is_some() {
        out.trojan_layer = Some(trainable[p..].to_vec());
    }
    out
}
