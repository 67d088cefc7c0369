//! Optimal transmission switching on the PWL model and on the DC model.
//!
//! Both formulations share the angle variables, generator columns, the
//! switching budget `Σε ≥ (#switchable) − α` and the linear cost. They
//! differ in how branch flows are produced: the PWL problem embeds the
//! trained network, the DC problem uses `P = −(b/a) θ_diff`. Status
//! products go through the McCormick rows in both, with bounds valid over
//! the whole angle box; line ratings apply to the switched flows only.

mod feasibility;

pub use feasibility::{
    ac_opf_slp, check_ac_feasibility, exhaustive_baseline, AcOpfPoint, BaselineSolution,
    FeasibilityReport, ViolationKind, Violation, ANGLE_TOL, OVERLOAD_TOL, VOLTAGE_TOL,
};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::fabs;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{
    encode_product, encode_relu, encode_switching, flow_bounds, flow_range, relu_bounds, EncodeError,
    FlowBounds, InputBox, ModelVars, RangeMethod, ReluBounds,
};
use crate::milp::{solve_milp, MilpError, MilpLimits, MilpProblem, Sense, SolveStatus};
use crate::network::{BusKind, FixedMatrices, FlowBlock, Network};
use crate::pwlnet::PwlModel;
use crate::rng::{streams, Stream};

/// Demand multiplier range used for OTS scenarios.
pub const SCENARIO_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OtsError {
    #[error("model does not match the case: {0}")]
    ModelMismatch(String),
    #[error("invalid OTS configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pwl,
    Dc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pwl => "pwl",
            Method::Dc => "dc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtsConfig {
    /// Maximum number of lines that may be opened.
    pub alpha: usize,
    pub switchable: Vec<bool>,
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    /// Limit on `|θ_i − θ_j|` of every branch.
    pub angle_limit: f64,
    pub limits: MilpLimits,
    /// How the McCormick flow bounds of the PWL problem are computed.
    pub range_method: RangeMethod,
}

impl OtsConfig {
    /// Case voltage limits, `±π/6` angle differences, every branch marked
    /// switchable in the case may be opened.
    pub fn new(net: &Network, alpha: usize) -> Self {
        Self {
            alpha,
            switchable: net.branches().iter().map(|b| b.switchable).collect(),
            v_lower: net.buses().iter().map(|b| b.v_min).collect(),
            v_upper: net.buses().iter().map(|b| b.v_max).collect(),
            angle_limit: core::f64::consts::FRAC_PI_6,
            limits: MilpLimits::default(),
            range_method: RangeMethod::Lp,
        }
    }

    pub fn switchable_count(&self) -> usize {
        self.switchable.iter().filter(|s| **s).count()
    }

    pub fn validate(&self, net: &Network) -> Result<(), OtsError> {
        let n = net.bus_count();
        if self.switchable.len() != net.branch_count() {
            return Err(OtsError::Config(format!(
                "switchable set has {} entries for {} branches",
                self.switchable.len(),
                net.branch_count()
            )));
        }
        if self.v_lower.len() != n || self.v_upper.len() != n {
            return Err(OtsError::Config(format!("voltage limits need {n} entries")));
        }
        if let Some(i) = (0..n).find(|&i| !(self.v_lower[i] <= self.v_upper[i])) {
            return Err(OtsError::Config(format!("empty voltage range at bus {i}")));
        }
        if self.alpha > self.switchable_count() {
            return Err(OtsError::Config(format!(
                "alpha {} exceeds the {} switchable branches",
                self.alpha,
                self.switchable_count()
            )));
        }
        if !(self.angle_limit > 0.0) {
            return Err(OtsError::Config("angle limit must be positive".into()));
        }
        Ok(())
    }
}

/// Per-bus demand multipliers applied to both P and Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub factors: Vec<f64>,
}

impl Scenario {
    pub fn nominal(net: &Network) -> Self {
        Self::uniform(net, 1.0)
    }

    pub fn uniform(net: &Network, factor: f64) -> Self {
        Self {
            index: 0,
            factors: vec![factor; net.bus_count()],
        }
    }

    pub fn apply(&self, net: &Network) -> Network {
        net.with_demand_scale(&self.factors)
    }
}

/// `count` scenarios with independent per-bus multipliers `U[lo, hi)`.
pub fn generate_scenarios(net: &Network, count: usize, seed: u64, lo: f64, hi: f64) -> Vec<Scenario> {
    let mut rng = Stream::new(seed, streams::SCENARIOS);
    (0..count)
        .map(|index| Scenario {
            index,
            factors: (0..net.bus_count()).map(|_| rng.uniform(lo, hi)).collect(),
        })
        .collect()
}

/// Scenario-independent bounds of the PWL problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PwlBounds {
    pub input: InputBox,
    pub relu: ReluBounds,
    /// Reachable flow range, used by the McCormick rows.
    pub flows: FlowBounds,
}

pub fn check_model(net: &Network, model: &PwlModel) -> Result<(), OtsError> {
    if model.bus_count() != net.bus_count() || model.branch_count() != net.branch_count() {
        return Err(OtsError::ModelMismatch(format!(
            "model has {} buses and {} branches, case has {} and {}",
            model.bus_count(),
            model.branch_count(),
            net.bus_count(),
            net.branch_count()
        )));
    }
    if model.fixed != FixedMatrices::build(net) {
        return Err(OtsError::ModelMismatch("branch parameters differ".into()));
    }
    let finite = model.w1.as_slice().iter().chain(model.w2.as_slice()).chain(&model.bias).all(|v| v.is_finite());
    if !finite {
        return Err(OtsError::ModelMismatch("model has non-finite weights".into()));
    }
    Ok(())
}

/// Input box of the OTS problem: configured voltage limits (slack fixed at
/// its setpoint) and `|θ_diff| ≤ angle_limit`.
pub fn ots_input_box(net: &Network, cfg: &OtsConfig) -> Result<InputBox, OtsError> {
    let mut lower = Vec::with_capacity(net.input_dim());
    let mut upper = Vec::with_capacity(net.input_dim());
    for (i, b) in net.buses().iter().enumerate() {
        if b.kind == BusKind::Slack {
            lower.push(b.v_setpoint);
            upper.push(b.v_setpoint);
        } else {
            lower.push(cfg.v_lower[i]);
            upper.push(cfg.v_upper[i]);
        }
    }
    for _ in 0..net.branch_count() {
        lower.push(-cfg.angle_limit);
        upper.push(cfg.angle_limit);
    }
    Ok(InputBox::new(lower, upper)?)
}

pub fn pwl_bounds(net: &Network, model: &PwlModel, cfg: &OtsConfig) -> Result<PwlBounds, OtsError> {
    check_model(net, model)?;
    cfg.validate(net)?;
    let input = ots_input_box(net, cfg)?;
    let relu = relu_bounds(model, &input)?;
    let flows = flow_range(model, &input, &relu, cfg.range_method)?;
    Ok(PwlBounds { input, relu, flows })
}

/// Column indices of an assembled OTS problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtsLayout {
    pub method: Method,
    pub theta: Vec<usize>,
    pub theta_diff: Vec<usize>,
    /// Bus voltages (PWL only).
    pub v: Vec<usize>,
    pub status: Vec<Option<usize>>,
    pub p_gen: Vec<usize>,
    /// Reactive outputs (PWL only).
    pub q_gen: Vec<usize>,
    /// Model flows: all `4ℓ` directed flows for PWL, `P_ij` per branch for DC.
    pub flows: Vec<usize>,
    /// Flows multiplied by status, same layout as `flows`.
    pub flows_on: Vec<usize>,
    pub model: Option<ModelVars>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtsProblem {
    pub problem: MilpProblem,
    pub layout: OtsLayout,
    pub limits: MilpLimits,
    /// Voltage setpoints used when the formulation has no voltages: the
    /// case setpoints, clamped into the voltage limits except at the slack.
    pub default_voltages: Vec<f64>,
}

impl OtsProblem {
    /// Pins every switchable status to the given value.
    pub fn fix_statuses(&mut self, statuses: &[bool]) {
        for (st, &on) in self.layout.status.iter().zip(statuses) {
            if let Some(e) = *st {
                let v = if on { 1.0 } else { 0.0 };
                self.problem.variables[e].lower = v;
                self.problem.variables[e].upper = v;
            }
        }
    }
}

fn clamped_setpoints(net: &Network, cfg: &OtsConfig) -> Vec<f64> {
    let slack = net.slack();
    net.buses()
        .iter()
        .enumerate()
        .map(|(i, b)| if i == slack { b.v_setpoint } else { b.v_setpoint.clamp(cfg.v_lower[i], cfg.v_upper[i]) })
        .collect()
}

/// Angles `θ` (slack fixed) and the rows `θ_diff = θ_from − θ_to`.
fn add_angles(p: &mut MilpProblem, net: &Network, theta_diff: &[usize]) -> Vec<usize> {
    let slack = net.slack();
    let theta: Vec<usize> = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == slack {
                p.add_continuous(format!("theta[{i}]"), b.theta_setpoint, b.theta_setpoint)
            } else {
                p.add_continuous(format!("theta[{i}]"), f64::NEG_INFINITY, f64::INFINITY)
            }
        })
        .collect();
    for (k, br) in net.branches().iter().enumerate() {
        p.add_constraint(
            format!("angle_link[{k}]"),
            vec![(theta_diff[k], 1.0), (theta[br.from], -1.0), (theta[br.to], 1.0)],
            Sense::Eq,
            0.0,
        );
    }
    theta
}

fn add_statuses(p: &mut MilpProblem, cfg: &OtsConfig) -> Vec<Option<usize>> {
    let status: Vec<Option<usize>> = cfg
        .switchable
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            s.then(|| {
                let e = p.add_binary(format!("on[{k}]"));
                // fixing the topology first leaves nearly exact relaxations
                p.set_priority(e, 1);
                e
            })
        })
        .collect();
    let row: Vec<(usize, f64)> = status.iter().flatten().map(|&e| (e, 1.0)).collect();
    let need = cfg.switchable_count() - cfg.alpha;
    p.add_constraint("budget", row, Sense::Ge, need as f64);
    status
}

fn add_generators(p: &mut MilpProblem, net: &Network, reactive: bool) -> (Vec<usize>, Vec<usize>) {
    let mut pg = Vec::new();
    let mut qg = Vec::new();
    for (g, gen) in net.generators().iter().enumerate() {
        let c = p.add_continuous(format!("pg[{g}]"), gen.p_min, gen.p_max);
        p.add_cost(c, gen.cost_linear);
        p.objective_offset += gen.cost_const;
        pg.push(c);
        if reactive {
            qg.push(p.add_continuous(format!("qg[{g}]"), gen.q_min, gen.q_max));
        }
    }
    (pg, qg)
}

/// PWL-based AC-OTS for one demand scenario.
pub fn build_pwl_ots(
    net: &Network,
    model: &PwlModel,
    bounds: &PwlBounds,
    cfg: &OtsConfig,
    scenario: &Scenario,
) -> Result<OtsProblem, OtsError> {
    check_model(net, model)?;
    cfg.validate(net)?;
    check_scenario(net, scenario)?;
    let demand = scenario.apply(net);
    let n = net.bus_count();
    let l = net.branch_count();
    let mut p = MilpProblem::new();
    let vars = encode_relu(&mut p, model, &bounds.relu, &bounds.input)?;
    let theta = add_angles(&mut p, net, &vars.theta_diff);
    let status = add_statuses(&mut p, cfg);
    let ratings = flow_bounds(net);
    let flows_on = encode_switching(&mut p, &vars.flows, &status, &bounds.flows, Some(&ratings))?;
    for (k, st) in status.iter().enumerate() {
        if st.is_none() {
            for block in FlowBlock::ALL {
                let r = block.index(k, l);
                let var = &mut p.variables[vars.flows[r]];
                var.lower = var.lower.max(ratings.lower[r]);
                var.upper = var.upper.min(ratings.upper[r]);
            }
        }
    }
    let (pg, qg) = add_generators(&mut p, net, true);

    // Σ Pg − Σ P̂ − G_sh(2V − 1) = P_d and Σ Qg − Σ Q̂ + B_sh(2V − 1) = Q_d
    let gens_at = net.generators_at();
    for (i, bus) in demand.buses().iter().enumerate() {
        let mut prow: Vec<(usize, f64)> = gens_at[i].iter().map(|&g| (pg[g], 1.0)).collect();
        let mut qrow: Vec<(usize, f64)> = gens_at[i].iter().map(|&g| (qg[g], 1.0)).collect();
        if bus.g_shunt != 0.0 {
            prow.push((vars.v[i], -2.0 * bus.g_shunt));
        }
        if bus.b_shunt != 0.0 {
            qrow.push((vars.v[i], 2.0 * bus.b_shunt));
        }
        for (k, br) in net.branches().iter().enumerate() {
            for block in FlowBlock::ALL {
                if block.sending_bus(br) == i {
                    let h = flows_on[block.index(k, l)];
                    if block.is_active() {
                        prow.push((h, -1.0));
                    } else {
                        qrow.push((h, -1.0));
                    }
                }
            }
        }
        p.add_constraint(format!("balance_p[{i}]"), prow, Sense::Eq, bus.p_demand - bus.g_shunt);
        p.add_constraint(format!("balance_q[{i}]"), qrow, Sense::Eq, bus.q_demand + bus.b_shunt);
    }
    debug_assert_eq!(vars.v.len(), n);

    Ok(OtsProblem {
        problem: p,
        layout: OtsLayout {
            method: Method::Pwl,
            theta,
            theta_diff: vars.theta_diff.clone(),
            v: vars.v.clone(),
            status,
            p_gen: pg,
            q_gen: qg,
            flows: vars.flows.clone(),
            flows_on,
            model: Some(vars),
        },
        limits: cfg.limits.clone(),
        default_voltages: clamped_setpoints(net, cfg),
    })
}

/// DC-OTS: lossless `P_ij = −(b/a) θ_ij`, no voltages or reactive power.
pub fn build_dc_ots(net: &Network, cfg: &OtsConfig, scenario: &Scenario) -> Result<OtsProblem, OtsError> {
    cfg.validate(net)?;
    check_scenario(net, scenario)?;
    let demand = scenario.apply(net);
    let lim = cfg.angle_limit;
    let mut p = MilpProblem::new();
    let theta_diff: Vec<usize> =
        (0..net.branch_count()).map(|k| p.add_continuous(format!("theta_diff[{k}]"), -lim, lim)).collect();
    let theta = add_angles(&mut p, net, &theta_diff);
    let status = add_statuses(&mut p, cfg);
    let mut flows = Vec::new();
    let mut flows_on = Vec::new();
    for (k, br) in net.branches().iter().enumerate() {
        let s = -br.b / br.tap;
        let reach = fabs(s) * lim;
        let f = p.add_continuous(format!("flow[{k}]"), f64::NEG_INFINITY, f64::INFINITY);
        p.add_constraint(format!("flow_def[{k}]"), vec![(f, 1.0), (theta_diff[k], -s)], Sense::Eq, 0.0);
        let h = match status[k] {
            Some(e) => encode_product(&mut p, &format!("{k}"), f, e, (-reach, reach), (-br.rating, br.rating)),
            None => {
                p.variables[f].lower = -br.rating;
                p.variables[f].upper = br.rating;
                f
            }
        };
        flows.push(f);
        flows_on.push(h);
    }
    let (pg, _) = add_generators(&mut p, net, false);
    let gens_at = net.generators_at();
    for (i, bus) in demand.buses().iter().enumerate() {
        let mut row: Vec<(usize, f64)> = gens_at[i].iter().map(|&g| (pg[g], 1.0)).collect();
        for (k, br) in net.branches().iter().enumerate() {
            if br.from == i {
                row.push((flows_on[k], -1.0));
            }
            if br.to == i {
                row.push((flows_on[k], 1.0));
            }
        }
        p.add_constraint(format!("balance_p[{i}]"), row, Sense::Eq, bus.p_demand + bus.g_shunt);
    }
    Ok(OtsProblem {
        problem: p,
        layout: OtsLayout {
            method: Method::Dc,
            theta,
            theta_diff,
            v: Vec::new(),
            status,
            p_gen: pg,
            q_gen: Vec::new(),
            flows,
            flows_on,
            model: None,
        },
        limits: cfg.limits.clone(),
        default_voltages: clamped_setpoints(net, cfg),
    })
}

fn check_scenario(net: &Network, scenario: &Scenario) -> Result<(), OtsError> {
    if scenario.factors.len() != net.bus_count() {
        return Err(OtsError::Config(format!(
            "scenario has {} factors for {} buses",
            scenario.factors.len(),
            net.bus_count()
        )));
    }
    if scenario.factors.iter().any(|f| !f.is_finite()) {
        return Err(OtsError::Config("non-finite demand factor".into()));
    }
    Ok(())
}

/// Generator outputs and voltage setpoints handed to the AC re-check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p_gen: Vec<f64>,
    /// Voltage per bus; only slack and PV entries are used.
    pub v_setpoint: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtsSolution {
    pub method: Method,
    pub status: SolveStatus,
    /// Line status per branch (`true` = in service). Empty without a point.
    pub statuses: Vec<bool>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Model flows in the layout of [`OtsLayout::flows`].
    pub flows: Vec<f64>,
    pub flows_on: Vec<f64>,
    /// Predicted injections with all lines in service (PWL only).
    pub injections: Vec<f64>,
    /// Objective in cost units per hour; `NaN` without a point.
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub simplex_iterations: usize,
}

impl OtsSolution {
    pub fn has_point(&self) -> bool {
        !self.statuses.is_empty()
    }

    pub fn opened(&self) -> Vec<usize> {
        self.statuses.iter().enumerate().filter(|(_, on)| !**on).map(|(k, _)| k).collect()
    }

    pub fn dispatch(&self) -> Dispatch {
        Dispatch {
            p_gen: self.p_gen.clone(),
            v_setpoint: self.v.clone(),
        }
    }
}

pub fn solve_ots(prob: &OtsProblem) -> Result<OtsSolution, OtsError> {
    let s = solve_milp(&prob.problem, &prob.limits)?;
    let lay = &prob.layout;
    let mut out = OtsSolution {
        method: lay.method,
        status: s.status,
        statuses: Vec::new(),
        p_gen: Vec::new(),
        q_gen: Vec::new(),
        v: Vec::new(),
        theta: Vec::new(),
        flows: Vec::new(),
        flows_on: Vec::new(),
        injections: Vec::new(),
        objective: s.objective,
        gap: s.gap,
        nodes: s.nodes_explored,
        simplex_iterations: s.simplex_iterations,
    };
    if !s.has_point() {
        return Ok(out);
    }
    let x = &s.values;
    let pick = |cols: &[usize]| cols.iter().map(|&c| x[c]).collect::<Vec<f64>>();
    out.statuses = lay.status.iter().map(|st| st.map_or(true, |e| x[e] > 0.5)).collect();
    out.p_gen = pick(&lay.p_gen);
    out.q_gen = pick(&lay.q_gen);
    out.v = if lay.v.is_empty() {
        prob.default_voltages.clone()
    } else {
        pick(&lay.v)
    };
    out.theta = pick(&lay.theta);
    out.flows = pick(&lay.flows);
    out.flows_on = pick(&lay.flows_on);
    if let Some(m) = &lay.model {
        out.injections = pick(&m.injections);
    }
    Ok(out)
}
