//! Batched training with Adam.
//!
//! Both losses are quadratic in the hidden-layer contribution `u = W2 z1`:
//! per sample, `loss = uᵀ H u + 2 uᵀ c + κ` where `H`, `c` and `κ` depend
//! only on the data and the fixed layers. `c` and `κ` are computed once
//! per sample before training, so an epoch is six dense products over the
//! batch. The direct model is the special case `H = I`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DirectModel, PwlModel, TrainConfig};
use crate::linalg::{gemm, MatMut, MatRef, Matrix};
use crate::network::Network;
use crate::rng::{streams, Stream};
use crate::sampler::SampleSet;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("training data is empty")]
    EmptyData,
    #[error("training data has {found} coordinates per sample, network expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_finite})")]
    NonFinite { epoch: usize, last_finite: f64 },
}

/// Per-epoch training record. `losses[e]` is the loss seen during epoch
/// `e` before its updates (full batch) or averaged over its mini-batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    /// Full-data loss at the initial parameters.
    pub initial_loss: f64,
    /// Full-data loss at the returned parameters.
    pub final_loss: f64,
}

/// Data of the quadratic form, row-major per sample.
struct Quadratic {
    n: usize,
    d: usize,
    m: usize,
    x: Vec<f64>,
    c: Vec<f64>,
    kappa: Vec<f64>,
    /// `None` stands for the identity.
    h: Option<Matrix>,
}

impl Quadratic {
    fn generative(model: &PwlModel, data: &SampleSet, lambda: f64) -> Self {
        let fm = &model.fixed;
        let l = model.branch_count();
        let (d, m) = (model.input_dim(), 2 * l);
        let a = fm.w_common();
        let mut x = Vec::with_capacity(data.len() * d);
        let mut c = Vec::with_capacity(data.len() * m);
        let mut kappa = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let dx = data.inputs[i].delta(&model.anchor);
            let base = model.first_order_terms(&dx);
            let f = data.targets_common[i].rho_pi();
            let p = &data.targets_power[i];
            let a3 = model.flows_from(&data.inputs[i].v, &base);
            let a4 = fm.injections(&a3);
            let e2: Vec<f64> = base.iter().zip(&f).map(|(b, t)| b - t).collect();
            let e3: Vec<f64> = a3.iter().zip(&p.z_pf).map(|(b, t)| b - t).collect();
            let e4: Vec<f64> = a4.iter().zip(&p.z_inj).map(|(b, t)| b - t).collect();
            let mut back = fm.w_psi.tr_mul_vec(&e4);
            for (g, e) in back.iter_mut().zip(&e3) {
                *g += e;
            }
            let back = a.tr_mul_vec(&back);
            c.extend(e2.iter().zip(&back).map(|(e, g)| e + lambda * g));
            kappa.push(sq(&e2) + lambda * (sq(&e3) + sq(&e4)));
            x.extend_from_slice(&dx);
        }
        // H = I + λ Aᵀ (I + W_psiᵀ W_psi) A
        let psi_a = fm.w_psi.matmul(&a);
        let mut h = a.transpose().matmul(&a);
        let h2 = psi_a.transpose().matmul(&psi_a);
        for (r, (hv, h2v)) in h.as_mut_slice().iter_mut().zip(h2.as_slice()).enumerate() {
            *hv = lambda * (*hv + h2v) + if r / m == r % m { 1.0 } else { 0.0 };
        }
        Self {
            n: data.len(),
            d,
            m,
            x,
            c,
            kappa,
            h: Some(h),
        }
    }

    fn direct(model: &DirectModel, data: &SampleSet) -> Self {
        let (d, m) = (model.w1.rows(), model.w2.rows());
        let mut x = Vec::with_capacity(data.len() * d);
        let mut c = Vec::with_capacity(data.len() * m);
        let mut kappa = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let dx = data.inputs[i].delta(&model.anchor);
            let base = model.first_order_terms(&dx);
            let e: Vec<f64> = base.iter().zip(&data.targets_power[i].z_pf).map(|(b, t)| b - t).collect();
            kappa.push(sq(&e));
            c.extend_from_slice(&e);
            x.extend_from_slice(&dx);
        }
        Self {
            n: data.len(),
            d,
            m,
            x,
            c,
            kappa,
            h: None,
        }
    }
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Flat parameter vector `[W1; W2; b]` with row-major matrices.
struct Layout {
    d: usize,
    m: usize,
    q: usize,
}

impl Layout {
    fn len(&self) -> usize {
        (self.d + self.m + 1) * self.q
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (w1, rest) = p.split_at(self.d * self.q);
        let (w2, b) = rest.split_at(self.m * self.q);
        (w1, w2, b)
    }

    fn split_mut<'a>(&self, p: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        let (w1, rest) = p.split_at_mut(self.d * self.q);
        let (w2, b) = rest.split_at_mut(self.m * self.q);
        (w1, w2, b)
    }

    fn pack(&self, w1: &Matrix, w2: &Matrix, b: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.len());
        p.extend_from_slice(w1.as_slice());
        p.extend_from_slice(w2.as_slice());
        p.extend_from_slice(b);
        p
    }

    fn unpack(&self, p: &[f64]) -> (Matrix, Matrix, Vec<f64>) {
        let (w1, w2, b) = self.split(p);
        (
            Matrix::from_row_major(self.d, self.q, w1.to_vec()),
            Matrix::from_row_major(self.m, self.q, w2.to_vec()),
            b.to_vec(),
        )
    }
}

/// Scratch buffers sized for the largest batch.
struct Workspace {
    pre: Vec<f64>,
    z1: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    hw2: Vec<f64>,
}

impl Workspace {
    fn new(rows: usize, lay: &Layout) -> Self {
        Self {
            pre: vec![0.0; rows * lay.q],
            z1: vec![0.0; rows * lay.q],
            r: vec![0.0; rows * lay.m],
            u: vec![0.0; rows * lay.m],
            g: vec![0.0; rows * lay.q],
            hw2: vec![0.0; lay.m * lay.q],
        }
    }
}

/// Loss over `nb` rows and, when `grad` is given, its gradient.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    lay: &Layout,
    h: Option<&Matrix>,
    nb: usize,
    x: &[f64],
    c: &[f64],
    kappa: &[f64],
    params: &[f64],
    ws: &mut Workspace,
    grad: Option<&mut [f64]>,
) -> f64 {
    let (d, m, q) = (lay.d, lay.m, lay.q);
    let (w1, w2, b) = lay.split(params);
    let pre = &mut ws.pre[..nb * q];
    let z1 = &mut ws.z1[..nb * q];
    let r = &mut ws.r[..nb * m];
    let u = &mut ws.u[..nb * m];

    for row in pre.chunks_exact_mut(q) {
        row.copy_from_slice(b);
    }
    gemm(
        1.0,
        MatRef::row_major(nb, d, x),
        MatRef::row_major(d, q, w1),
        1.0,
        MatMut::row_major(nb, q, pre),
    );
    for (z, &p) in z1.iter_mut().zip(pre.iter()) {
        *z = if p > 0.0 { p } else { 0.0 };
    }

    // u = Z1 W2ᵀ, r = c + u H (H symmetric)
    gemm(
        1.0,
        MatRef::row_major(nb, q, z1),
        MatRef::row_major_t(q, m, w2),
        0.0,
        MatMut::row_major(nb, m, u),
    );
    r.copy_from_slice(c);
    match h {
        None => {
            for (rv, uv) in r.iter_mut().zip(u.iter()) {
                *rv += uv;
            }
        }
        Some(h) => {
            let hw2 = &mut ws.hw2[..];
            gemm(
                1.0,
                h.view(),
                MatRef::row_major(m, q, w2),
                0.0,
                MatMut::row_major(m, q, hw2),
            );
            gemm(
                1.0,
                MatRef::row_major(nb, q, z1),
                MatRef::row_major_t(q, m, hw2),
                1.0,
                MatMut::row_major(nb, m, r),
            );
        }
    }

    let mut total = 0.0;
    for s in 0..nb {
        let rs = &r[s * m..(s + 1) * m];
        let us = &u[s * m..(s + 1) * m];
        let cs = &c[s * m..(s + 1) * m];
        let mut acc = kappa[s];
        for k in 0..m {
            acc += us[k] * (rs[k] + cs[k]);
        }
        total += acc;
    }
    let loss = total / nb as f64;

    if let Some(grad) = grad {
        let scale = 2.0 / nb as f64;
        let (gw1, gw2, gb) = lay.split_mut(grad);
        gemm(
            scale,
            MatRef::row_major_t(m, nb, r),
            MatRef::row_major(nb, q, z1),
            0.0,
            MatMut::row_major(m, q, gw2),
        );
        let g = &mut ws.g[..nb * q];
        gemm(
            scale,
            MatRef::row_major(nb, m, r),
            MatRef::row_major(m, q, w2),
            0.0,
            MatMut::row_major(nb, q, g),
        );
        for (gv, &p) in g.iter_mut().zip(pre.iter()) {
            if p <= 0.0 {
                *gv = 0.0;
            }
        }
        gemm(
            1.0,
            MatRef::row_major_t(d, nb, x),
            MatRef::row_major(nb, q, g),
            0.0,
            MatMut::row_major(d, q, gw1),
        );
        gb.fill(0.0);
        for row in g.chunks_exact(q) {
            for (a, v) in gb.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    loss
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: cfg.learning_rate,
            b1: cfg.adam_betas.0,
            b2: cfg.adam_betas.1,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.b1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.b2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

fn validate(cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.hidden == 0 {
        return Err(TrainError::Config("hidden width must be at least 1"));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::Config("epochs must be at least 1"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(TrainError::Config("learning rate must be finite and non-negative"));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(TrainError::Config("lambda must be finite and non-negative"));
    }
    if cfg.batch_size == Some(0) {
        return Err(TrainError::Config("batch size must be at least 1"));
    }
    let (b1, b2) = cfg.adam_betas;
    if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || cfg.adam_eps <= 0.0 {
        return Err(TrainError::Config("Adam constants out of range"));
    }
    Ok(())
}

fn check_data(net: &Network, data: &SampleSet) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let expected = net.input_dim();
    let l = net.branch_count();
    for (i, x) in data.inputs.iter().enumerate() {
        let found = x.v.len() + x.theta_diff.len();
        let targets_ok = data.targets_common[i].rho.len() == l
            && data.targets_power[i].z_pf.len() == 4 * l
            && data.targets_power[i].z_inj.len() == 2 * net.bus_count();
        if x.v.len() != net.bus_count() || found != expected || !targets_ok {
            return Err(TrainError::Dimension { expected, found });
        }
    }
    Ok(())
}

/// Runs Adam on the quadratic form. Returns the trained flat parameters.
fn optimize(
    quad: &Quadratic,
    lay: &Layout,
    mut params: Vec<f64>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Vec<f64>, TrainLog), TrainError> {
    let n = quad.n;
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut ws = Workspace::new(batch, lay);
    let mut grad = vec![0.0; lay.len()];
    let mut adam = Adam::new(lay.len(), cfg);
    let h = quad.h.as_ref();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last_finite = f64::NAN;

    let full_loss = |params: &[f64], ws: &mut Workspace| -> f64 {
        let mut total = 0.0;
        for start in (0..n).step_by(batch) {
            let nb = batch.min(n - start);
            let l = evaluate(
                lay,
                h,
                nb,
                &quad.x[start * lay.d..(start + nb) * lay.d],
                &quad.c[start * lay.m..(start + nb) * lay.m],
                &quad.kappa[start..start + nb],
                params,
                ws,
                None,
            );
            total += l * nb as f64;
        }
        total / n as f64
    };
    let initial_loss = full_loss(&params, &mut ws);

    if batch >= n {
        for epoch in 0..cfg.epochs {
            let loss = evaluate(lay, h, n, &quad.x, &quad.c, &quad.kappa, &params, &mut ws, Some(&mut grad));
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, last_finite });
            }
            last_finite = loss;
            losses.push(loss);
            on_epoch(epoch, loss);
            adam.step(&mut params, &grad);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = Stream::new(cfg.seed, streams::SHUFFLE);
        let mut xb = vec![0.0; batch * lay.d];
        let mut cb = vec![0.0; batch * lay.m];
        let mut kb = vec![0.0; batch];
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let nb = chunk.len();
                for (j, &s) in chunk.iter().enumerate() {
                    xb[j * lay.d..(j + 1) * lay.d].copy_from_slice(&quad.x[s * lay.d..(s + 1) * lay.d]);
                    cb[j * lay.m..(j + 1) * lay.m].copy_from_slice(&quad.c[s * lay.m..(s + 1) * lay.m]);
                    kb[j] = quad.kappa[s];
                }
                let loss = evaluate(
                    lay,
                    h,
                    nb,
                    &xb[..nb * lay.d],
                    &cb[..nb * lay.m],
                    &kb[..nb],
                    &params,
                    &mut ws,
                    Some(&mut grad),
                );
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, last_finite });
                }
                total += loss * nb as f64;
                adam.step(&mut params, &grad);
            }
            let loss = total / n as f64;
            last_finite = loss;
            losses.push(loss);
            on_epoch(epoch, loss);
        }
    }

    let final_loss = full_loss(&params, &mut ws);
    if !final_loss.is_finite() {
        return Err(TrainError::NonFinite {
            epoch: cfg.epochs,
            last_finite,
        });
    }
    Ok((
        params,
        TrainLog {
            losses,
            initial_loss,
            final_loss,
        },
    ))
}

/// Trains the generative model from the `INIT` stream of `cfg.seed`.
pub fn train(net: &Network, data: &SampleSet, cfg: &TrainConfig) -> Result<(PwlModel, TrainLog), TrainError> {
    train_with(net, data, cfg, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, loss)` after every epoch.
pub fn train_with(
    net: &Network,
    data: &SampleSet,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(PwlModel, TrainLog), TrainError> {
    validate(cfg)?;
    check_data(net, data)?;
    let mut model = PwlModel::init(net, cfg.hidden, cfg.seed);
    let quad = Quadratic::generative(&model, data, cfg.lambda);
    let lay = Layout {
        d: quad.d,
        m: quad.m,
        q: cfg.hidden,
    };
    let start = lay.pack(&model.w1, &model.w2, &model.bias);
    let (params, log) = optimize(&quad, &lay, start, cfg, on_epoch)?;
    (model.w1, model.w2, model.bias) = lay.unpack(&params);
    Ok((model, log))
}

/// Trains the direct baseline with the same budget conventions.
pub fn train_direct(net: &Network, data: &SampleSet, cfg: &TrainConfig) -> Result<(DirectModel, TrainLog), TrainError> {
    validate(cfg)?;
    check_data(net, data)?;
    let mut model = DirectModel::init(net, cfg.hidden, cfg.seed);
    let quad = Quadratic::direct(&model, data);
    let lay = Layout {
        d: quad.d,
        m: quad.m,
        q: cfg.hidden,
    };
    let start = lay.pack(&model.w1, &model.w2, &model.bias);
    let (params, log) = optimize(&quad, &lay, start, cfg, |_, _| {})?;
    (model.w1, model.w2, model.bias) = lay.unpack(&params);
    Ok((model, log))
}

#[cfg(test)]
pub(super) fn fast_loss_and_gradients(model: &PwlModel, data: &SampleSet, lambda: f64) -> (f64, super::Gradients) {
    let quad = Quadratic::generative(model, data, lambda);
    fast_eval(&quad, &model.w1, &model.w2, &model.bias)
}

#[cfg(test)]
pub(super) fn fast_loss_and_gradients_direct(model: &DirectModel, data: &SampleSet) -> (f64, super::Gradients) {
    let quad = Quadratic::direct(model, data);
    fast_eval(&quad, &model.w1, &model.w2, &model.bias)
}

#[cfg(test)]
fn fast_eval(quad: &Quadratic, w1: &Matrix, w2: &Matrix, b: &[f64]) -> (f64, super::Gradients) {
    let lay = Layout {
        d: quad.d,
        m: quad.m,
        q: b.len(),
    };
    let params = lay.pack(w1, w2, b);
    let mut grad = vec![0.0; lay.len()];
    let mut ws = Workspace::new(quad.n, &lay);
    let loss = evaluate(
        &lay,
        quad.h.as_ref(),
        quad.n,
        &quad.x,
        &quad.c,
        &quad.kappa,
        &params,
        &mut ws,
        Some(&mut grad),
    );
    let (gw1, gw2, gb) = lay.unpack(&grad);
    (
        loss,
        super::Gradients {
            w1: gw1,
            w2: gw2,
            bias: gb,
        },
    )
}
