//! The generative PWL model, the direct two-layer baseline, the coupled
//! training loss and its gradients.
//!
//! The generative model is
//!
//! ```text
//! z1_pre = W1ᵀ Δx + b            z1 = max(z1_pre, 0)
//! z2 = f(x_o) + J(x_o) Δx + W2 z1        (predicted [ρ; π])
//! z3 = W_gamma γ̂(V) + [W_rho W_pi] z2    (directed flows)
//! z4 = W_psi z3                          (injections)
//! ```
//!
//! with `Δx = x - x_o` over `[V; θ_diff]` and `γ̂ = 2V - 1`. The direct
//! model predicts flows as `z_pf(x_o) + J_flow(x_o) Δx + W2 z1`.

mod train;

pub use train::{train, train_direct, train_with, TrainError, TrainLog};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acflow::{branch_flows, common_terms, flow_jacobian, jacobian, CommonTermJacobian, OperatingPoint};
use crate::linalg::Matrix;
use crate::network::{gamma_hat, FixedMatrices, Network};
use crate::rng::{streams, Stream};
use crate::sampler::SampleSet;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PwlError {
    #[error("input has {found} coordinates, model expects {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden width `q`.
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the flow/injection term relative to the common-term term.
    pub lambda: f64,
    /// Mini-batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 25,
            epochs: 20_000,
            learning_rate: 2.5e-3,
            lambda: 1.0,
            batch_size: None,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for a network of this size: `q = 25` and full batch up to
    /// 30 buses, `q = 75` and batches of 256 above.
    pub fn for_network(net: &Network) -> Self {
        let large = net.bus_count() > 30;
        Self {
            hidden: if large { 75 } else { 25 },
            batch_size: if large { Some(256) } else { None },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub z1_pre: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    pub z4: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwlModel {
    /// `(n+ℓ) × q`
    pub w1: Matrix,
    /// `2ℓ × q`
    pub w2: Matrix,
    pub bias: Vec<f64>,
    pub anchor: OperatingPoint,
    /// `[ρ; π]` at the anchor.
    pub f_anchor: Vec<f64>,
    pub jac_anchor: CommonTermJacobian,
    pub fixed: FixedMatrices,
    pub q: usize,
}

/// Draws `rows × cols` entries uniform in `±1/√fan_in`.
fn uniform_matrix(rng: &mut Stream, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let s = 1.0 / libm::sqrt(fan_in as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-s, s))
}

impl PwlModel {
    /// All trainable parameters zero: the pure first-order model.
    pub fn first_order(net: &Network, q: usize) -> Self {
        let anchor = OperatingPoint::anchor(net);
        let l = net.branch_count();
        Self {
            w1: Matrix::zeros(net.input_dim(), q),
            w2: Matrix::zeros(2 * l, q),
            bias: vec![0.0; q],
            f_anchor: common_terms(net, &anchor).rho_pi(),
            jac_anchor: jacobian(net, &anchor),
            fixed: FixedMatrices::build(net),
            anchor,
            q,
        }
    }

    /// Random initialization from the `INIT` stream of `seed`: `W1` first,
    /// then `W2`, both row-major.
    pub fn init(net: &Network, q: usize, seed: u64) -> Self {
        let mut m = Self::first_order(net, q);
        let mut rng = Stream::new(seed, streams::INIT);
        m.w1 = uniform_matrix(&mut rng, m.w1.rows(), q, m.w1.rows());
        m.w2 = uniform_matrix(&mut rng, m.w2.rows(), q, q);
        m
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn bus_count(&self) -> usize {
        self.fixed.bus_count()
    }

    pub fn branch_count(&self) -> usize {
        self.fixed.branch_count()
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.w2.as_slice().len() + self.bias.len()
    }

    fn check(&self, x: &OperatingPoint) -> Result<(), PwlError> {
        check_dims(self.bus_count(), self.branch_count(), x)
    }

    /// Pre-activations `W1ᵀ Δx + b` for an input offset.
    pub fn pre_activation(&self, dx: &[f64]) -> Vec<f64> {
        pre_activation(&self.w1, &self.bias, dx)
    }

    /// Linear part of `z2` (everything except `W2 z1`).
    pub fn first_order_terms(&self, dx: &[f64]) -> Vec<f64> {
        let mut z2 = self.f_anchor.clone();
        self.jac_anchor.0.mul_vec_add(dx, &mut z2);
        z2
    }

    /// Flows from voltages and predicted `[ρ; π]`.
    pub fn flows_from(&self, v: &[f64], z2: &[f64]) -> Vec<f64> {
        let l = self.branch_count();
        self.fixed.flows(&gamma_hat(v), &z2[..l], &z2[l..])
    }
}

pub fn forward(model: &PwlModel, x: &OperatingPoint) -> Result<ForwardTrace, PwlError> {
    model.check(x)?;
    let dx = x.delta(&model.anchor);
    let z1_pre = model.pre_activation(&dx);
    let z1 = relu(&z1_pre);
    let mut z2 = model.first_order_terms(&dx);
    model.w2.mul_vec_add(&z1, &mut z2);
    let z3 = model.flows_from(&x.v, &z2);
    let z4 = model.fixed.injections(&z3);
    Ok(ForwardTrace {
        z1_pre,
        z1,
        z2,
        z3,
        z4,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectModel {
    /// `(n+ℓ) × q`
    pub w1: Matrix,
    /// `4ℓ × q`
    pub w2: Matrix,
    pub bias: Vec<f64>,
    pub anchor: OperatingPoint,
    /// Exact flows at the anchor.
    pub flows_anchor: Vec<f64>,
    /// Flow Jacobian at the anchor, `4ℓ × (n+ℓ)`.
    pub jac_anchor: Matrix,
    pub fixed: FixedMatrices,
    pub q: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectTrace {
    pub z1_pre: Vec<f64>,
    pub z1: Vec<f64>,
    pub flows: Vec<f64>,
    /// `W_psi · flows`, for error reporting only.
    pub injections: Vec<f64>,
}

impl DirectModel {
    pub fn first_order(net: &Network, q: usize) -> Self {
        let anchor = OperatingPoint::anchor(net);
        Self {
            w1: Matrix::zeros(net.input_dim(), q),
            w2: Matrix::zeros(4 * net.branch_count(), q),
            bias: vec![0.0; q],
            flows_anchor: branch_flows(&anchor, net).z_pf,
            jac_anchor: flow_jacobian(net, &anchor),
            fixed: FixedMatrices::build(net),
            anchor,
            q,
        }
    }

    /// Same draw order as [`PwlModel::init`], so both models share `W1`
    /// for a given seed.
    pub fn init(net: &Network, q: usize, seed: u64) -> Self {
        let mut m = Self::first_order(net, q);
        let mut rng = Stream::new(seed, streams::INIT);
        m.w1 = uniform_matrix(&mut rng, m.w1.rows(), q, m.w1.rows());
        m.w2 = uniform_matrix(&mut rng, m.w2.rows(), q, q);
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.w2.as_slice().len() + self.bias.len()
    }

    pub fn first_order_terms(&self, dx: &[f64]) -> Vec<f64> {
        let mut y = self.flows_anchor.clone();
        self.jac_anchor.mul_vec_add(dx, &mut y);
        y
    }
}

pub fn forward_direct(model: &DirectModel, x: &OperatingPoint) -> Result<DirectTrace, PwlError> {
    check_dims(model.fixed.bus_count(), model.fixed.branch_count(), x)?;
    let dx = x.delta(&model.anchor);
    let z1_pre = pre_activation(&model.w1, &model.bias, &dx);
    let z1 = relu(&z1_pre);
    let mut flows = model.first_order_terms(&dx);
    model.w2.mul_vec_add(&z1, &mut flows);
    let injections = model.fixed.injections(&flows);
    Ok(DirectTrace {
        z1_pre,
        z1,
        flows,
        injections,
    })
}

/// Anything that predicts the directed flow vector.
pub trait FlowPredictor {
    fn predict_flows(&self, x: &OperatingPoint) -> Result<Vec<f64>, PwlError>;
}

impl FlowPredictor for PwlModel {
    fn predict_flows(&self, x: &OperatingPoint) -> Result<Vec<f64>, PwlError> {
        forward(self, x).map(|t| t.z3)
    }
}

impl FlowPredictor for DirectModel {
    fn predict_flows(&self, x: &OperatingPoint) -> Result<Vec<f64>, PwlError> {
        forward_direct(self, x).map(|t| t.flows)
    }
}

fn check_dims(n: usize, l: usize, x: &OperatingPoint) -> Result<(), PwlError> {
    let found = x.v.len() + x.theta_diff.len();
    if x.v.len() != n || x.theta_diff.len() != l {
        return Err(PwlError::Dimension {
            expected: n + l,
            found,
        });
    }
    Ok(())
}

fn pre_activation(w1: &Matrix, bias: &[f64], dx: &[f64]) -> Vec<f64> {
    let mut z = bias.to_vec();
    for (j, &d) in dx.iter().enumerate() {
        if d != 0.0 {
            for (zk, w) in z.iter_mut().zip(w1.row(j)) {
                *zk += w * d;
            }
        }
    }
    z
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Coupled loss averaged over the batch:
/// `‖f − z2‖² + λ‖[z_pf; z_inj] − [z3; z4]‖²`.
pub fn loss(model: &PwlModel, batch: &SampleSet, lambda: f64) -> Result<f64, PwlError> {
    assert!(!batch.is_empty(), "loss of an empty batch");
    let mut total = 0.0;
    for i in 0..batch.len() {
        let t = forward(model, &batch.inputs[i])?;
        let f = batch.targets_common[i].rho_pi();
        let p = &batch.targets_power[i];
        total += sq_dist(&f, &t.z2) + lambda * (sq_dist(&p.z_pf, &t.z3) + sq_dist(&p.z_inj, &t.z4));
    }
    Ok(total / batch.len() as f64)
}

/// Flow-only loss of the direct model, averaged over the batch.
pub fn loss_direct(model: &DirectModel, batch: &SampleSet) -> Result<f64, PwlError> {
    assert!(!batch.is_empty(), "loss of an empty batch");
    let mut total = 0.0;
    for i in 0..batch.len() {
        let t = forward_direct(model, &batch.inputs[i])?;
        total += sq_dist(&batch.targets_power[i].z_pf, &t.flows);
    }
    Ok(total / batch.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    fn zeros(d: usize, m: usize, q: usize) -> Self {
        Self {
            w1: Matrix::zeros(d, q),
            w2: Matrix::zeros(m, q),
            bias: vec![0.0; q],
        }
    }

    /// Accumulates one sample given `∂loss/∂(W2 z1)`.
    fn accumulate(&mut self, w2: &Matrix, dx: &[f64], pre: &[f64], z1: &[f64], d_out: &[f64], scale: f64) {
        let q = z1.len();
        for (r, &g) in d_out.iter().enumerate() {
            let row = self.w2.row_mut(r);
            for k in 0..q {
                row[k] += scale * g * z1[k];
            }
        }
        let dz1 = w2.tr_mul_vec(d_out);
        let dpre: Vec<f64> = (0..q)
            .map(|k| if pre[k] > 0.0 { scale * dz1[k] } else { 0.0 })
            .collect();
        for (j, &d) in dx.iter().enumerate() {
            let row = self.w1.row_mut(j);
            for k in 0..q {
                row[k] += d * dpre[k];
            }
        }
        for k in 0..q {
            self.bias[k] += dpre[k];
        }
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(self.w1.as_slice())
            .max(crate::linalg::max_abs(self.w2.as_slice()))
            .max(crate::linalg::max_abs(&self.bias))
    }
}

/// Analytic gradients of [`loss`], one sample at a time.
pub fn gradients(model: &PwlModel, batch: &SampleSet, lambda: f64) -> Result<Gradients, PwlError> {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let l = model.branch_count();
    let mut g = Gradients::zeros(model.input_dim(), 2 * l, model.q);
    let scale = 1.0 / batch.len() as f64;
    let fm = &model.fixed;
    for i in 0..batch.len() {
        let x = &batch.inputs[i];
        let t = forward(model, x)?;
        let f = batch.targets_common[i].rho_pi();
        let p = &batch.targets_power[i];
        let e4: Vec<f64> = t.z4.iter().zip(&p.z_inj).map(|(a, b)| 2.0 * lambda * (a - b)).collect();
        let mut d3 = fm.w_psi.tr_mul_vec(&e4);
        for ((d, a), b) in d3.iter_mut().zip(&t.z3).zip(&p.z_pf) {
            *d += 2.0 * lambda * (a - b);
        }
        let dr = fm.w_rho.tr_mul_vec(&d3);
        let dp = fm.w_pi.tr_mul_vec(&d3);
        let d2: Vec<f64> = (0..2 * l)
            .map(|r| {
                let back = if r < l { dr[r] } else { dp[r - l] };
                2.0 * (t.z2[r] - f[r]) + back
            })
            .collect();
        g.accumulate(&model.w2, &x.delta(&model.anchor), &t.z1_pre, &t.z1, &d2, scale);
    }
    Ok(g)
}

/// Analytic gradients of [`loss_direct`].
pub fn gradients_direct(model: &DirectModel, batch: &SampleSet) -> Result<Gradients, PwlError> {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let mut g = Gradients::zeros(model.w1.rows(), model.w2.rows(), model.q);
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let x = &batch.inputs[i];
        let t = forward_direct(model, x)?;
        let d: Vec<f64> = t
            .flows
            .iter()
            .zip(&batch.targets_power[i].z_pf)
            .map(|(a, b)| 2.0 * (a - b))
            .collect();
        g.accumulate(&model.w2, &x.delta(&model.anchor), &t.z1_pre, &t.z1, &d, scale);
    }
    Ok(g)
}
