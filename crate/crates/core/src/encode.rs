//! Compiles a trained [`PwlModel`] and line-switching logic into MILP rows.
//!
//! The hidden layer becomes the standard big-M ReLU: with pre-activation
//! `ẑ_k ∈ [lo_k, hi_k]` over the input box and a binary `β_k`,
//!
//! ```text
//! 0 ≤ z_k ≤ hi_k β_k,    ẑ_k ≤ z_k ≤ ẑ_k − lo_k (1 − β_k).
//! ```
//!
//! Line status products `ε·P` use the four McCormick rows, which are exact
//! for binary `ε`. The bounds fed to them must hold for every reachable
//! flow (not only the line rating), otherwise an open line would still
//! have its model flow clipped.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acflow::OperatingPoint;
use crate::milp::{solve_lp, solve_milp, MilpError, MilpLimits, MilpProblem, Sense, SolveStatus};
use crate::network::{BusKind, FlowBlock, Network};
use crate::pwlnet::PwlModel;

/// Slack on the soundness check of user-supplied ReLU bounds.
const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EncodeError {
    #[error("input box is empty in coordinate {0}")]
    EmptyBox(usize),
    #[error("expected dimension {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("ReLU bounds for unit {unit} do not cover the reachable range [{reach_lo}, {reach_hi}]")]
    UnsoundBounds { unit: usize, reach_lo: f64, reach_hi: f64 },
    #[error("flow bounds for flow {0} have lower above upper")]
    InvalidFlowBounds(usize),
    #[error("bound tightening for flow {flow} failed: {reason}")]
    Tightening { flow: usize, reason: String },
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Box over the model input `x = [V; θ_diff]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, EncodeError> {
        if lower.len() != upper.len() {
            return Err(EncodeError::Dimension {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if let Some(j) = (0..lower.len()).find(|&j| !(lower[j] <= upper[j])) {
            return Err(EncodeError::EmptyBox(j));
        }
        Ok(Self { lower, upper })
    }

    /// `V ∈ [0.94, 1.06]` (slack fixed at its setpoint) and `θ_diff` within
    /// `±π/6` of the anchor.
    pub fn around(net: &Network, anchor: &OperatingPoint) -> Self {
        let span = core::f64::consts::FRAC_PI_6;
        Self::with_limits(net, 0.94, 1.06, anchor.theta_diff.iter().map(|&t| (t - span, t + span)))
    }

    /// `V` in the given range (slack fixed) and explicit angle-difference
    /// limits per branch.
    pub fn with_limits(
        net: &Network,
        v_lo: f64,
        v_hi: f64,
        angle: impl IntoIterator<Item = (f64, f64)>,
    ) -> Self {
        let mut lower = Vec::with_capacity(net.input_dim());
        let mut upper = Vec::with_capacity(net.input_dim());
        for b in net.buses() {
            if b.kind == BusKind::Slack {
                lower.push(b.v_setpoint);
                upper.push(b.v_setpoint);
            } else {
                lower.push(v_lo);
                upper.push(v_hi);
            }
        }
        for (lo, hi) in angle {
            lower.push(lo);
            upper.push(hi);
        }
        assert_eq!(lower.len(), net.input_dim(), "one angle range per branch");
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

/// Range of each hidden pre-activation over an input box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReluBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ReluBounds {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    /// Units that are active (or inactive) everywhere in the box.
    pub fn stable_units(&self) -> usize {
        self.lower.iter().zip(&self.upper).filter(|(lo, hi)| **lo >= 0.0 || **hi <= 0.0).count()
    }
}

/// Exact pre-activation range: the pre-activation is affine in `x`, so its
/// extremes sit at box corners and are found coordinate by coordinate.
pub fn relu_bounds(model: &PwlModel, bx: &InputBox) -> Result<ReluBounds, EncodeError> {
    let d = model.input_dim();
    if bx.dim() != d {
        return Err(EncodeError::Dimension {
            expected: d,
            found: bx.dim(),
        });
    }
    let x0 = model.anchor.input();
    let mut lower = model.bias.clone();
    let mut upper = model.bias.clone();
    for j in 0..d {
        let dlo = bx.lower[j] - x0[j];
        let dhi = bx.upper[j] - x0[j];
        for (k, &w) in model.w1.row(j).iter().enumerate() {
            let (a, b) = (w * dlo, w * dhi);
            lower[k] += a.min(b);
            upper[k] += a.max(b);
        }
    }
    Ok(ReluBounds { lower, upper })
}

/// Column indices of the variables created by [`encode_relu`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVars {
    /// Voltage magnitude per bus.
    pub v: Vec<usize>,
    /// Angle difference per branch.
    pub theta_diff: Vec<usize>,
    /// Hidden pre-activations.
    pub pre: Vec<usize>,
    /// Hidden activations.
    pub hidden: Vec<usize>,
    /// Binary activation indicators.
    pub active: Vec<usize>,
    /// Predicted `[ρ; π]`.
    pub common: Vec<usize>,
    /// Directed flows.
    pub flows: Vec<usize>,
    /// Nodal injections with every line in service.
    pub injections: Vec<usize>,
}

impl ModelVars {
    /// Input columns in model order `[V; θ_diff]`.
    pub fn inputs(&self) -> Vec<usize> {
        self.v.iter().chain(&self.theta_diff).copied().collect()
    }
}

/// Appends the whole model to `p`: inputs boxed by `bx`, the affine layers as
/// equality rows and the hidden layer as big-M rows.
pub fn encode_relu(
    p: &mut MilpProblem,
    model: &PwlModel,
    bounds: &ReluBounds,
    bx: &InputBox,
) -> Result<ModelVars, EncodeError> {
    let n = model.bus_count();
    let l = model.branch_count();
    let q = model.q;
    if bounds.len() != q || bounds.lower.len() != q {
        return Err(EncodeError::Dimension {
            expected: q,
            found: bounds.len(),
        });
    }
    let exact = relu_bounds(model, bx)?;
    for k in 0..q {
        if bounds.upper[k] < exact.upper[k] - BOUND_TOL || bounds.lower[k] > exact.lower[k] + BOUND_TOL {
            return Err(EncodeError::UnsoundBounds {
                unit: k,
                reach_lo: exact.lower[k],
                reach_hi: exact.upper[k],
            });
        }
    }

    let v: Vec<usize> = (0..n).map(|i| p.add_continuous(format!("v[{i}]"), bx.lower[i], bx.upper[i])).collect();
    let theta_diff: Vec<usize> = (0..l)
        .map(|k| p.add_continuous(format!("theta_diff[{k}]"), bx.lower[n + k], bx.upper[n + k]))
        .collect();
    let inputs: Vec<usize> = v.iter().chain(&theta_diff).copied().collect();
    let x0 = model.anchor.input();
    let free = (f64::NEG_INFINITY, f64::INFINITY);

    let mut pre = Vec::with_capacity(q);
    let mut hidden = Vec::with_capacity(q);
    let mut active = Vec::with_capacity(q);
    for k in 0..q {
        let (lo, hi) = (bounds.lower[k], bounds.upper[k]);
        let zp = p.add_continuous(format!("pre[{k}]"), lo, hi);
        let z = p.add_continuous(format!("hidden[{k}]"), 0.0, hi.max(0.0));
        let b = p.add_binary(format!("active[{k}]"));
        // pre = W1ᵀ(x − x0) + b
        let mut row = vec![(zp, 1.0)];
        let mut rhs = model.bias[k];
        for (j, &col) in inputs.iter().enumerate() {
            let w = model.w1[(j, k)];
            if w != 0.0 {
                row.push((col, -w));
                rhs -= w * x0[j];
            }
        }
        p.add_constraint(format!("pre_def[{k}]"), row, Sense::Eq, rhs);
        p.add_constraint(format!("relu_nonneg[{k}]"), vec![(z, 1.0)], Sense::Ge, 0.0);
        p.add_constraint(format!("relu_on[{k}]"), vec![(z, 1.0), (b, -hi)], Sense::Le, 0.0);
        p.add_constraint(format!("relu_above[{k}]"), vec![(z, 1.0), (zp, -1.0)], Sense::Ge, 0.0);
        // z ≤ pre − lo(1 − β)
        p.add_constraint(format!("relu_off[{k}]"), vec![(z, 1.0), (zp, -1.0), (b, -lo)], Sense::Le, -lo);
        pre.push(zp);
        hidden.push(z);
        active.push(b);
    }

    // [ρ; π] = f(x0) + J (x − x0) + W2 z
    let jac = &model.jac_anchor.0;
    let mut common = Vec::with_capacity(2 * l);
    for r in 0..2 * l {
        let c = p.add_continuous(format!("common[{r}]"), free.0, free.1);
        let mut row = vec![(c, 1.0)];
        let mut rhs = model.f_anchor[r];
        for (j, &col) in inputs.iter().enumerate() {
            let a = jac[(r, j)];
            if a != 0.0 {
                row.push((col, -a));
                rhs -= a * x0[j];
            }
        }
        for (k, &col) in hidden.iter().enumerate() {
            let w = model.w2[(r, k)];
            if w != 0.0 {
                row.push((col, -w));
            }
        }
        p.add_constraint(format!("common_def[{r}]"), row, Sense::Eq, rhs);
        common.push(c);
    }

    // flows = W_gamma (2V − 1) + W_rho ρ + W_pi π
    let fm = &model.fixed;
    let mut flows = Vec::with_capacity(4 * l);
    for r in 0..4 * l {
        let f = p.add_continuous(format!("flow[{r}]"), free.0, free.1);
        let mut row = vec![(f, 1.0)];
        let mut rhs = 0.0;
        for (i, &col) in v.iter().enumerate() {
            let g = fm.w_gamma[(r, i)];
            if g != 0.0 {
                row.push((col, -2.0 * g));
                rhs -= g;
            }
        }
        for k in 0..l {
            let (a, b) = (fm.w_rho[(r, k)], fm.w_pi[(r, k)]);
            if a != 0.0 {
                row.push((common[k], -a));
            }
            if b != 0.0 {
                row.push((common[l + k], -b));
            }
        }
        p.add_constraint(format!("flow_def[{r}]"), row, Sense::Eq, rhs);
        flows.push(f);
    }

    let mut injections = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let z = p.add_continuous(format!("injection[{i}]"), free.0, free.1);
        let mut row = vec![(z, 1.0)];
        for (r, &f) in flows.iter().enumerate() {
            if fm.w_psi[(i, r)] != 0.0 {
                row.push((f, -fm.w_psi[(i, r)]));
            }
        }
        p.add_constraint(format!("injection_def[{i}]"), row, Sense::Eq, 0.0);
        injections.push(z);
    }

    Ok(ModelVars {
        v,
        theta_diff,
        pre,
        hidden,
        active,
        common,
        flows,
        injections,
    })
}

/// Lower and upper bound per directed flow, in flow-vector order
/// `[P_ij; Q_ij; P_ji; Q_ji]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FlowBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, EncodeError> {
        if lower.len() != upper.len() {
            return Err(EncodeError::Dimension {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if let Some(r) = (0..lower.len()).find(|&r| !(lower[r] <= upper[r])) {
            return Err(EncodeError::InvalidFlowBounds(r));
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `(lower, upper)` of one directed flow.
    pub fn get(&self, block: FlowBlock, branch: usize) -> (f64, f64) {
        let r = block.index(branch, self.len() / 4);
        (self.lower[r], self.upper[r])
    }

    /// Componentwise intersection.
    pub fn intersect(&self, other: &FlowBounds) -> FlowBounds {
        FlowBounds {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn contains(&self, flows: &[f64], tol: f64) -> bool {
        flows
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(f, (lo, hi))| *f >= lo - tol && *f <= hi + tol)
    }
}

/// `±rating` on both active and reactive flows of every branch.
pub fn flow_bounds(net: &Network) -> FlowBounds {
    let l = net.branch_count();
    let mut upper = vec![0.0; 4 * l];
    for (k, br) in net.branches().iter().enumerate() {
        for block in FlowBlock::ALL {
            upper[block.index(k, l)] = br.rating;
        }
    }
    FlowBounds {
        lower: upper.iter().map(|u| -u).collect(),
        upper,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMethod {
    /// Continuous relaxation: valid, possibly loose.
    Lp,
    /// Exact range of the encoded model.
    Milp,
}

/// Range of every model flow over `bx`, from minimizing and maximizing each
/// flow variable of the encoded model.
pub fn flow_range(
    model: &PwlModel,
    bx: &InputBox,
    bounds: &ReluBounds,
    method: RangeMethod,
) -> Result<FlowBounds, EncodeError> {
    let mut base = MilpProblem::new();
    let vars = encode_relu(&mut base, model, bounds, bx)?;
    let limits = MilpLimits::default();
    let mut lower = Vec::with_capacity(vars.flows.len());
    let mut upper = Vec::with_capacity(vars.flows.len());
    for (r, &f) in vars.flows.iter().enumerate() {
        let mut ext = [0.0; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            base.objective.clear();
            base.add_cost(f, sign);
            let s = match method {
                RangeMethod::Lp => solve_lp(&base)?,
                RangeMethod::Milp => solve_milp(&base, &limits)?,
            };
            if s.status != SolveStatus::Optimal {
                return Err(EncodeError::Tightening {
                    flow: r,
                    reason: format!("{:?}", s.status),
                });
            }
            ext[slot] = sign * s.objective;
        }
        lower.push(ext[0]);
        upper.push(ext[1]);
    }
    FlowBounds::new(lower, upper)
}

/// Default bounds tightened by the reachable range; always a subset of the
/// defaults.
pub fn tightened_flow_bounds(
    net: &Network,
    model: &PwlModel,
    bx: &InputBox,
    bounds: &ReluBounds,
    method: RangeMethod,
) -> Result<FlowBounds, EncodeError> {
    let range = flow_range(model, bx, bounds, method)?;
    let mut t = flow_bounds(net).intersect(&range);
    // a range lying entirely outside the rating collapses to the nearer limit
    for r in 0..t.len() {
        if t.lower[r] > t.upper[r] {
            let m = if range.lower[r] > 0.0 { t.upper[r] } else { t.lower[r] };
            t.lower[r] = m;
            t.upper[r] = m;
        }
    }
    Ok(t)
}

/// Appends `hat = ε·flow` for every flow of a switchable branch.
///
/// `flows` is in flow-vector order, `status[k]` is the binary column of
/// branch `k` (`None` when the branch cannot be switched, in which case the
/// flow column itself is returned). `bounds` must hold for every value the
/// flow can take. The product columns are bounded by `hat_limits` when given.
pub fn encode_switching(
    p: &mut MilpProblem,
    flows: &[usize],
    status: &[Option<usize>],
    bounds: &FlowBounds,
    hat_limits: Option<&FlowBounds>,
) -> Result<Vec<usize>, EncodeError> {
    let l = status.len();
    if flows.len() != 4 * l || bounds.len() != 4 * l {
        return Err(EncodeError::Dimension {
            expected: 4 * l,
            found: flows.len().min(bounds.len()),
        });
    }
    if let Some(r) = (0..bounds.len()).find(|&r| !(bounds.lower[r] <= bounds.upper[r])) {
        return Err(EncodeError::InvalidFlowBounds(r));
    }
    let mut hats = flows.to_vec();
    for block in FlowBlock::ALL {
        for (k, st) in status.iter().enumerate() {
            let Some(e) = *st else { continue };
            let r = block.index(k, l);
            let (lo, hi) = (bounds.lower[r], bounds.upper[r]);
            let (hlo, hhi) = match hat_limits {
                Some(h) => (h.lower[r].min(0.0), h.upper[r].max(0.0)),
                None => (lo.min(0.0), hi.max(0.0)),
            };
            hats[r] = encode_product(p, &format!("{r}"), flows[r], e, (lo, hi), (hlo, hhi));
        }
    }
    Ok(hats)
}

/// Appends a column `hat = ε·f` for a binary `ε` and `f ∈ [lo, hi]`,
/// boxed by `limits`, and returns it.
pub fn encode_product(
    p: &mut MilpProblem,
    tag: &str,
    f: usize,
    e: usize,
    (lo, hi): (f64, f64),
    limits: (f64, f64),
) -> usize {
    let h = p.add_continuous(format!("flow_on[{tag}]"), limits.0, limits.1);
    p.add_constraint(format!("on_lo[{tag}]"), vec![(h, 1.0), (e, -lo)], Sense::Ge, 0.0);
    p.add_constraint(format!("on_hi[{tag}]"), vec![(h, 1.0), (e, -hi)], Sense::Le, 0.0);
    // hat ≥ f + hi(ε − 1),  hat ≤ f + lo(ε − 1)
    p.add_constraint(format!("on_link_lo[{tag}]"), vec![(h, 1.0), (f, -1.0), (e, -hi)], Sense::Ge, -hi);
    p.add_constraint(format!("on_link_hi[{tag}]"), vec![(h, 1.0), (f, -1.0), (e, -lo)], Sense::Le, -lo);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::FEAS_TOL;
    use crate::network::fixtures::{five_bus, two_bus};
    use crate::pwlnet::forward;
    use crate::rng::Stream;
    use crate::sampler::draw_point;
    use crate::sampler::SamplingBox;

    fn toy_model(q: usize, seed: u64) -> (Network, PwlModel) {
        let net = two_bus();
        let mut m = PwlModel::init(&net, q, seed);
        // larger bias so some units straddle zero over the box
        let mut rng = Stream::new(seed, 99);
        for b in &mut m.bias {
            *b = rng.uniform(-0.2, 0.2);
        }
        (net, m)
    }

    fn corners(bx: &InputBox) -> Vec<Vec<f64>> {
        let d = bx.dim();
        (0..1usize << d)
            .map(|mask| (0..d).map(|j| if mask >> j & 1 == 1 { bx.upper[j] } else { bx.lower[j] }).collect())
            .collect()
    }

    fn point_from_input(net: &Network, x: &[f64]) -> OperatingPoint {
        // two-bus only: θ_to chosen so that θ_from − θ_to equals the input
        let n = net.bus_count();
        let mut theta = vec![0.0; n];
        let br = &net.branches()[0];
        theta[br.to] = theta[br.from] - x[n];
        OperatingPoint::new(net, x[..n].to_vec(), theta)
    }

    #[test]
    fn constant_unit_has_point_bounds() {
        let (net, mut m) = toy_model(3, 1);
        for j in 0..m.input_dim() {
            m.w1[(j, 1)] = 0.0;
        }
        let b = relu_bounds(&m, &InputBox::around(&net, &m.anchor)).unwrap();
        assert_eq!(b.lower[1], m.bias[1]);
        assert_eq!(b.upper[1], m.bias[1]);
    }

    #[test]
    fn one_dimensional_bounds() {
        let (_, mut m) = toy_model(1, 1);
        let x0 = m.anchor.input();
        m.bias[0] = 0.0;
        for j in 0..m.input_dim() {
            m.w1[(j, 0)] = if j == 1 { 2.0 } else { 0.0 };
        }
        let mut lower = x0.clone();
        let mut upper = x0.clone();
        lower[1] -= 1.0;
        upper[1] += 1.0;
        let b = relu_bounds(&m, &InputBox::new(lower, upper).unwrap()).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (-2.0, 2.0));
    }

    #[test]
    fn bounds_attained_at_corners_and_cover_samples() {
        let net = five_bus();
        let m = PwlModel::init(&net, 3, 4);
        let bx = InputBox::around(&net, &m.anchor);
        let b = relu_bounds(&m, &bx).unwrap();
        let x0 = m.anchor.input();
        let mut hi = vec![f64::NEG_INFINITY; 3];
        let mut lo = vec![f64::INFINITY; 3];
        for c in corners(&bx) {
            let dx: Vec<f64> = c.iter().zip(&x0).map(|(a, b)| a - b).collect();
            for (k, z) in m.pre_activation(&dx).into_iter().enumerate() {
                hi[k] = hi[k].max(z);
                lo[k] = lo[k].min(z);
            }
        }
        for k in 0..3 {
            assert!((hi[k] - b.upper[k]).abs() < 1e-12 && (lo[k] - b.lower[k]).abs() < 1e-12);
        }
        let mut rng = Stream::new(8, 0);
        for _ in 0..20000 {
            let x: Vec<f64> = (0..bx.dim()).map(|j| rng.uniform(bx.lower[j], bx.upper[j])).collect();
            let dx: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
            for (k, z) in m.pre_activation(&dx).into_iter().enumerate() {
                assert!(z <= b.upper[k] + 1e-12 && z >= b.lower[k] - 1e-12);
            }
        }
    }

    #[test]
    fn empty_box_rejected() {
        assert_eq!(InputBox::new(vec![0.0, 1.0], vec![1.0, 0.5]), Err(EncodeError::EmptyBox(1)));
    }

    #[test]
    fn unsound_bounds_rejected() {
        let (net, m) = toy_model(3, 2);
        let bx = InputBox::around(&net, &m.anchor);
        let mut b = relu_bounds(&m, &bx).unwrap();
        let k = (0..3).find(|&k| b.upper[k] > 0.0).unwrap();
        b.upper[k] = -1.0;
        let err = encode_relu(&mut MilpProblem::new(), &m, &b, &bx).unwrap_err();
        assert!(matches!(err, EncodeError::UnsoundBounds { unit, .. } if unit == k));
    }

    #[test]
    fn fragment_size() {
        let net = five_bus();
        let q = 6;
        let m = PwlModel::init(&net, q, 1);
        let bx = InputBox::around(&net, &m.anchor);
        let b = relu_bounds(&m, &bx).unwrap();
        let mut p = MilpProblem::new();
        let vars = encode_relu(&mut p, &m, &b, &bx).unwrap();
        let relu_rows = p.constraints.iter().filter(|c| c.name.starts_with("relu_")).count();
        assert_eq!(relu_rows, 4 * q);
        assert_eq!(p.integer_count(), q);
        assert_eq!(vars.flows.len(), 4 * net.branch_count());

        let l = net.branch_count();
        let status: Vec<Option<usize>> = (0..l).map(|k| Some(p.add_binary(format!("on[{k}]")))).collect();
        let before = p.constraint_count();
        encode_switching(&mut p, &vars.flows, &status, &flow_bounds(&net), None).unwrap();
        // four rows for each of the four directed P/Q flows of a branch
        assert_eq!(p.constraint_count() - before, 16 * l);
        assert_eq!(p.integer_count(), q + l);
    }

    fn fix_inputs(p: &mut MilpProblem, vars: &ModelVars, x: &[f64]) {
        for (&c, &v) in vars.inputs().iter().zip(x) {
            p.variables[c].lower = v;
            p.variables[c].upper = v;
        }
    }

    #[test]
    fn pinned_unit_values() {
        // single unit driven by θ_diff, bounds ±1
        let (net, mut m) = toy_model(1, 3);
        for j in 0..m.input_dim() {
            m.w1[(j, 0)] = 0.0;
        }
        m.w1[(2, 0)] = 1.0;
        m.bias[0] = 0.0;
        let x0 = m.anchor.input();
        let mut bx = InputBox::around(&net, &m.anchor);
        bx.lower[2] = x0[2] - 1.0;
        bx.upper[2] = x0[2] + 1.0;
        let b = ReluBounds {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        for (shift, want_z, want_b) in [(0.5, 0.5, 1.0), (-0.5, 0.0, 0.0)] {
            let mut p = MilpProblem::new();
            let vars = encode_relu(&mut p, &m, &b, &bx).unwrap();
            let mut x = x0.clone();
            x[2] += shift;
            fix_inputs(&mut p, &vars, &x);
            let s = solve_milp(&p, &MilpLimits::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            assert!((s.values[vars.hidden[0]] - want_z).abs() < 1e-12);
            assert_eq!(s.values[vars.active[0]], want_b);
        }
    }

    #[test]
    fn fixed_inputs_reproduce_forward_pass() {
        let net = five_bus();
        let mut m = PwlModel::init(&net, 8, 5);
        let mut rng = Stream::new(5, 7);
        for b in &mut m.bias {
            *b = rng.uniform(-0.1, 0.1);
        }
        let sbox = SamplingBox::default();
        let bx = InputBox::around(&net, &m.anchor);
        let b = relu_bounds(&m, &bx).unwrap();
        let mut checked = 0;
        for i in 0..40 {
            let x = draw_point(&net, &sbox, 77, i);
            if !bx.contains(&x.input()) {
                continue;
            }
            let t = forward(&m, &x).unwrap();
            let mut p = MilpProblem::new();
            let vars = encode_relu(&mut p, &m, &b, &bx).unwrap();
            fix_inputs(&mut p, &vars, &x.input());
            // any objective: the completion is unique
            for &c in &vars.injections {
                p.add_cost(c, 1.0);
            }
            let s = solve_milp(&p, &MilpLimits::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal);
            for (r, &c) in vars.injections.iter().enumerate() {
                assert!((s.values[c] - t.z4[r]).abs() < 1e-8, "sample {i} row {r}");
            }
            for (r, &c) in vars.flows.iter().enumerate() {
                assert!((s.values[c] - t.z3[r]).abs() < 1e-8);
            }
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn default_flow_bounds_follow_ratings() {
        let net = two_bus();
        let fb = flow_bounds(&net);
        assert_eq!(fb.get(FlowBlock::ALL[0], 0), (-1.0, 1.0));
        assert_eq!(fb.len(), 4);
    }

    #[test]
    fn tightened_range_matches_grid_search() {
        let (net, m) = toy_model(3, 6);
        let bx = InputBox::around(&net, &m.anchor);
        let b = relu_bounds(&m, &bx).unwrap();
        let range = flow_range(&m, &bx, &b, RangeMethod::Milp).unwrap();
        let lp = flow_range(&m, &bx, &b, RangeMethod::Lp).unwrap();
        let steps = 300;
        let mut gmax = vec![f64::NEG_INFINITY; 4];
        let mut gmin = vec![f64::INFINITY; 4];
        for a in 0..=steps {
            for c in 0..=steps {
                let mut x = bx.lower.clone();
                x[1] = bx.lower[1] + (bx.upper[1] - bx.lower[1]) * a as f64 / steps as f64;
                x[2] = bx.lower[2] + (bx.upper[2] - bx.lower[2]) * c as f64 / steps as f64;
                let z3 = forward(&m, &point_from_input(&net, &x)).unwrap().z3;
                for r in 0..4 {
                    gmax[r] = gmax[r].max(z3[r]);
                    gmin[r] = gmin[r].min(z3[r]);
                }
            }
        }
        for r in 0..4 {
            let span = gmax[r] - gmin[r];
            assert!(range.upper[r] >= gmax[r] - 1e-9 && range.upper[r] <= gmax[r] + 1e-3 * span.max(1e-3));
            assert!(range.lower[r] <= gmin[r] + 1e-9 && range.lower[r] >= gmin[r] - 1e-3 * span.max(1e-3));
            assert!(lp.upper[r] >= range.upper[r] - 1e-9 && lp.lower[r] <= range.lower[r] + 1e-9);
        }
        let t = tightened_flow_bounds(&net, &m, &bx, &b, RangeMethod::Lp).unwrap();
        let d = flow_bounds(&net);
        for r in 0..4 {
            assert!(t.lower[r] >= d.lower[r] && t.upper[r] <= d.upper[r] && t.lower[r] <= t.upper[r]);
        }
    }

    #[test]
    fn switching_grid_is_exact() {
        for e in [0.0, 1.0] {
            for f in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let mut p = MilpProblem::new();
                let flows: Vec<usize> = (0..4).map(|r| p.add_continuous(format!("f{r}"), f, f)).collect();
                let on = p.add_var("on", e, e, true);
                let b = FlowBounds::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
                let hats = encode_switching(&mut p, &flows, &[Some(on)], &b, None).unwrap();
                for (sign, &h) in [1.0, -1.0].iter().zip(&hats[..2]) {
                    p.objective.clear();
                    p.add_cost(h, *sign);
                    let s = solve_milp(&p, &MilpLimits::default()).unwrap();
                    assert_eq!(s.values[h], e * f, "ε={e} P={f}");
                    assert!(p.max_violation(&s.values, true) < FEAS_TOL);
                }
            }
        }
    }

    #[test]
    fn fixed_branches_pass_flows_through() {
        let mut p = MilpProblem::new();
        let flows: Vec<usize> = (0..4).map(|r| p.add_continuous(format!("f{r}"), -1.0, 1.0)).collect();
        let b = FlowBounds::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
        let hats = encode_switching(&mut p, &flows, &[None], &b, None).unwrap();
        assert_eq!(hats, flows);
        assert_eq!(p.constraint_count(), 0);
    }
}
