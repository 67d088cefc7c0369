//! AC re-checks of switching decisions and the exhaustive single-switch
//! AC baseline.
//!
//! A decision is re-checked by a Newton power flow with every non-slack
//! generator held at its dispatched output and PV buses at the dispatched
//! voltages; the slack absorbs the mismatch. The baseline runs a
//! trust-region sequential LP on the exact AC equations for every topology
//! within the budget and keeps the cheapest AC-feasible one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{fabs, sqrt};
use serde::{Deserialize, Serialize};

use super::{build_dc_ots, solve_ots, Dispatch, OtsConfig, OtsError, Scenario};
use crate::acflow::{flow_jacobian, flows_with_status, solve_newton, NewtonOptions, OperatingPoint, PowerFlowSpec};
use crate::milp::{solve_lp, MilpProblem, Sense, SolveStatus};
use crate::network::{FlowBlock, Network};

/// Voltage violations above this many p.u. make a solution infeasible.
pub const VOLTAGE_TOL: f64 = 1e-4;
/// Angle-difference violations above this many radians make a solution
/// infeasible.
pub const ANGLE_TOL: f64 = 1e-4;
/// Apparent-power overloads above this fraction of the rating make a
/// solution infeasible.
pub const OVERLOAD_TOL: f64 = 1e-3;

const SLP_MAX_ITER: usize = 40;
const SLP_STEP_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Voltage,
    Angle,
    Overload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Bus index for voltages, branch index otherwise.
    pub element: usize,
    /// p.u., radians, or fraction of rating.
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub converged: bool,
    pub disconnected: bool,
    pub max_voltage_violation: f64,
    pub max_angle_violation: f64,
    pub max_line_overload: f64,
    pub infeasible: bool,
    /// Limits violated beyond the thresholds.
    pub violations: Vec<Violation>,
    /// Number of voltage, angle and flow limits that were checked.
    pub checked: usize,
    /// Generator outputs with the slack share taken from the power flow.
    pub p_gen: Vec<f64>,
    /// Cost of `p_gen`; `None` when the power flow failed.
    pub cost: Option<f64>,
    pub point: Option<OperatingPoint>,
}

impl FeasibilityReport {
    fn failed(disconnected: bool) -> Self {
        Self {
            converged: false,
            disconnected,
            max_voltage_violation: 0.0,
            max_angle_violation: 0.0,
            max_line_overload: 0.0,
            infeasible: true,
            violations: Vec::new(),
            checked: 0,
            p_gen: Vec::new(),
            cost: None,
            point: None,
        }
    }

    /// Fraction of checked limits that are violated.
    pub fn violation_rate(&self) -> f64 {
        if self.checked == 0 {
            return 0.0;
        }
        self.violations.len() as f64 / self.checked as f64
    }

    fn total_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.amount).sum()
    }
}

pub fn check_ac_feasibility(net: &Network, statuses: &[bool], dispatch: &Dispatch, cfg: &OtsConfig) -> FeasibilityReport {
    if !net.is_connected(statuses) {
        return FeasibilityReport::failed(true);
    }
    let mut spec = PowerFlowSpec::from_dispatch(net, &dispatch.p_gen);
    spec.v = dispatch.v_setpoint.clone();
    let Ok(sol) = solve_newton(net, statuses, &spec, &NewtonOptions::default()) else {
        return FeasibilityReport::failed(false);
    };
    let x = &sol.point;
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut max_v: f64 = 0.0;
    for (i, &v) in x.v.iter().enumerate() {
        let amount = (cfg.v_lower[i] - v).max(v - cfg.v_upper[i]).max(0.0);
        max_v = max_v.max(amount);
        if amount > VOLTAGE_TOL {
            violations.push(Violation {
                kind: ViolationKind::Voltage,
                element: i,
                amount,
            });
        }
        checked += 1;
    }
    let l = net.branch_count();
    let mut max_a: f64 = 0.0;
    let mut max_o: f64 = 0.0;
    for (k, br) in net.branches().iter().enumerate() {
        if !statuses[k] {
            continue;
        }
        let amount = (fabs(x.theta_diff[k]) - cfg.angle_limit).max(0.0);
        max_a = max_a.max(amount);
        if amount > ANGLE_TOL {
            violations.push(Violation {
                kind: ViolationKind::Angle,
                element: k,
                amount,
            });
        }
        let f = &sol.power.z_pf;
        let s_from = sqrt(f[k] * f[k] + f[l + k] * f[l + k]);
        let s_to = sqrt(f[2 * l + k] * f[2 * l + k] + f[3 * l + k] * f[3 * l + k]);
        let over = (s_from.max(s_to) / br.rating - 1.0).max(0.0);
        max_o = max_o.max(over);
        if over > OVERLOAD_TOL {
            violations.push(Violation {
                kind: ViolationKind::Overload,
                element: k,
                amount: over,
            });
        }
        checked += 2;
    }

    let slack = net.slack();
    let mut p_gen = dispatch.p_gen.clone();
    let at_slack: Vec<usize> = (0..p_gen.len()).filter(|&g| net.generators()[g].bus == slack).collect();
    if let Some(&first) = at_slack.first() {
        let need = sol.net_injection_p(net)[slack] + net.buses()[slack].p_demand;
        let have: f64 = at_slack.iter().map(|&g| p_gen[g]).sum();
        p_gen[first] += need - have;
    }
    let cost = generation_cost(net, &p_gen);
    FeasibilityReport {
        converged: true,
        disconnected: false,
        max_voltage_violation: max_v,
        max_angle_violation: max_a,
        max_line_overload: max_o,
        infeasible: !violations.is_empty(),
        violations,
        checked,
        p_gen,
        cost: Some(cost),
        point: Some(sol.point),
    }
}

pub fn generation_cost(net: &Network, p_gen: &[f64]) -> f64 {
    net.generators().iter().zip(p_gen).map(|(g, p)| g.cost_linear * p + g.cost_const).sum()
}

/// Outcome of the AC dispatch optimization on one topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcOpfPoint {
    pub statuses: Vec<bool>,
    pub dispatch: Dispatch,
    /// Realized cost (slack output from the power flow).
    pub cost: f64,
    pub report: FeasibilityReport,
    pub iterations: usize,
}

impl AcOpfPoint {
    pub fn feasible(&self) -> bool {
        !self.report.infeasible
    }
}

/// Sequential LP on the exact AC equations for a fixed topology.
///
/// Starts from the DC dispatch, linearizes flows at the current power-flow
/// solution, and re-solves the dispatch under a trust region on voltage and
/// angle moves. Steps that fail to reduce `cost + penalty·violation` shrink
/// the region. Returns the best AC-feasible point seen, else the last
/// accepted one; `None` if not even the DC start has a power-flow solution.
pub fn ac_opf_slp(net: &Network, statuses: &[bool], cfg: &OtsConfig) -> Result<Option<AcOpfPoint>, OtsError> {
    cfg.validate(net)?;
    let mut dc = build_dc_ots(net, cfg, &Scenario::uniform(net, 1.0))?;
    dc.fix_statuses(statuses);
    let start = solve_ots(&dc)?;
    if !start.has_point() {
        return Ok(None);
    }
    let mut cur = start.dispatch();
    let mut cur_rep = check_ac_feasibility(net, statuses, &cur, cfg);
    if !cur_rep.converged {
        return Ok(None);
    }
    let penalty = 1e3 * net.generators().iter().map(|g| fabs(g.cost_linear)).fold(1.0, f64::max);
    let merit = |r: &FeasibilityReport| r.cost.unwrap_or(f64::INFINITY) + penalty * r.total_violation();
    let (mut tv, mut tt) = (0.05, 0.2);
    let mut best: Option<(Dispatch, FeasibilityReport)> = None;
    let mut iterations = 0;
    for _ in 0..SLP_MAX_ITER {
        iterations += 1;
        if !cur_rep.infeasible && best.as_ref().map_or(true, |(_, b)| cur_rep.cost < b.cost) {
            best = Some((cur.clone(), cur_rep.clone()));
        }
        let point = cur_rep.point.as_ref().expect("accepted points converged");
        let Some(cand) = slp_step(net, statuses, cfg, point, &cur, tv, tt)? else {
            tv *= 0.5;
            tt *= 0.5;
            if tv < 1e-5 {
                break;
            }
            continue;
        };
        let step = cand
            .p_gen
            .iter()
            .zip(&cur.p_gen)
            .chain(cand.v_setpoint.iter().zip(&cur.v_setpoint))
            .map(|(a, b)| fabs(a - b))
            .fold(0.0, f64::max);
        if step < SLP_STEP_TOL {
            break;
        }
        let rep = check_ac_feasibility(net, statuses, &cand, cfg);
        if rep.converged && merit(&rep) <= merit(&cur_rep) + 1e-9 {
            cur = cand;
            cur_rep = rep;
        } else {
            tv *= 0.5;
            tt *= 0.5;
            if tv < 1e-5 {
                break;
            }
        }
    }
    if !cur_rep.infeasible && best.as_ref().map_or(true, |(_, b)| cur_rep.cost < b.cost) {
        best = Some((cur.clone(), cur_rep.clone()));
    }
    let (dispatch, report) = best.unwrap_or((cur, cur_rep));
    Ok(Some(AcOpfPoint {
        statuses: statuses.to_vec(),
        cost: report.cost.unwrap_or(f64::NAN),
        dispatch,
        report,
        iterations,
    }))
}

/// One trust-region LP around the power-flow solution `x`.
fn slp_step(
    net: &Network,
    statuses: &[bool],
    cfg: &OtsConfig,
    x: &OperatingPoint,
    cur: &Dispatch,
    tv: f64,
    tt: f64,
) -> Result<Option<Dispatch>, OtsError> {
    let n = net.bus_count();
    let l = net.branch_count();
    let slack = net.slack();
    let mut p = MilpProblem::new();
    let mut dv = vec![usize::MAX; n];
    let mut dth = vec![usize::MAX; n];
    for i in 0..n {
        if i == slack {
            continue;
        }
        let mut lo = (cfg.v_lower[i] - x.v[i]).max(-tv);
        let mut hi = (cfg.v_upper[i] - x.v[i]).min(tv);
        if lo > hi {
            // already outside the limits: move as far back as allowed
            if x.v[i] < cfg.v_lower[i] {
                lo = tv;
                hi = tv;
            } else {
                lo = -tv;
                hi = -tv;
            }
        }
        dv[i] = p.add_continuous(format!("dv[{i}]"), lo, hi);
        dth[i] = p.add_continuous(format!("dtheta[{i}]"), -tt, tt);
    }
    let mut pg = Vec::new();
    let mut qg = Vec::new();
    for (g, gen) in net.generators().iter().enumerate() {
        let c = p.add_continuous(format!("pg[{g}]"), gen.p_min, gen.p_max);
        p.add_cost(c, gen.cost_linear);
        pg.push(c);
        qg.push(p.add_continuous(format!("qg[{g}]"), gen.q_min, gen.q_max));
    }

    let power = flows_with_status(x, net, statuses);
    let jac = flow_jacobian(net, x);
    // linearized change of flow row r as sparse (column, coefficient)
    let delta = |r: usize, k: usize| -> Vec<(usize, f64)> {
        let br = &net.branches()[k];
        let mut row = Vec::with_capacity(4);
        for bus in [br.from, br.to] {
            if dv[bus] != usize::MAX && jac[(r, bus)] != 0.0 {
                row.push((dv[bus], jac[(r, bus)]));
            }
        }
        let dt = jac[(r, n + k)];
        if dth[br.from] != usize::MAX {
            row.push((dth[br.from], dt));
        }
        if dth[br.to] != usize::MAX {
            row.push((dth[br.to], -dt));
        }
        row
    };

    let gens_at = net.generators_at();
    for (i, bus) in net.buses().iter().enumerate() {
        let vi = x.v[i];
        let mut prow: Vec<(usize, f64)> = gens_at[i].iter().map(|&g| (pg[g], 1.0)).collect();
        let mut qrow: Vec<(usize, f64)> = gens_at[i].iter().map(|&g| (qg[g], 1.0)).collect();
        let mut prhs = bus.p_demand + bus.g_shunt * vi * vi;
        let mut qrhs = bus.q_demand - bus.b_shunt * vi * vi;
        if dv[i] != usize::MAX {
            prow.push((dv[i], -2.0 * bus.g_shunt * vi));
            qrow.push((dv[i], 2.0 * bus.b_shunt * vi));
        }
        for (k, br) in net.branches().iter().enumerate() {
            if !statuses[k] {
                continue;
            }
            for block in FlowBlock::ALL {
                if block.sending_bus(br) != i {
                    continue;
                }
                let r = block.index(k, l);
                let (row, rhs) = if block.is_active() { (&mut prow, &mut prhs) } else { (&mut qrow, &mut qrhs) };
                *rhs += power.z_pf[r];
                row.extend(delta(r, k).into_iter().map(|(c, a)| (c, -a)));
            }
        }
        p.add_constraint(format!("balance_p[{i}]"), prow, Sense::Eq, prhs);
        p.add_constraint(format!("balance_q[{i}]"), qrow, Sense::Eq, qrhs);
    }

    for (k, br) in net.branches().iter().enumerate() {
        if !statuses[k] {
            continue;
        }
        let mut arow = Vec::new();
        if dth[br.from] != usize::MAX {
            arow.push((dth[br.from], 1.0));
        }
        if dth[br.to] != usize::MAX {
            arow.push((dth[br.to], -1.0));
        }
        let td = x.theta_diff[k];
        p.add_constraint(format!("angle_hi[{k}]"), arow.clone(), Sense::Le, cfg.angle_limit - td);
        p.add_constraint(format!("angle_lo[{k}]"), arow, Sense::Ge, -cfg.angle_limit - td);
        for (pb, qb) in [(FlowBlock::PFrom, FlowBlock::QFrom), (FlowBlock::PTo, FlowBlock::QTo)] {
            let (rp, rq) = (pb.index(k, l), qb.index(k, l));
            let (fp, fq) = (power.z_pf[rp], power.z_pf[rq]);
            let s = sqrt(fp * fp + fq * fq);
            if s < 0.5 * br.rating {
                continue;
            }
            // first-order change of |S|
            let mut row: Vec<(usize, f64)> = delta(rp, k).into_iter().map(|(c, a)| (c, a * fp / s)).collect();
            row.extend(delta(rq, k).into_iter().map(|(c, a)| (c, a * fq / s)));
            p.add_constraint(format!("rating[{k}]"), row, Sense::Le, br.rating - s);
        }
    }

    let sol = solve_lp(&p)?;
    if sol.status != SolveStatus::Optimal {
        return Ok(None);
    }
    let v_setpoint = (0..n)
        .map(|i| if dv[i] == usize::MAX { cur.v_setpoint[i] } else { x.v[i] + sol.values[dv[i]] })
        .collect();
    Ok(Some(Dispatch {
        p_gen: pg.iter().map(|&c| sol.values[c]).collect(),
        v_setpoint,
    }))
}

/// Cheapest AC-feasible topology with at most one opened line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution {
    pub best: Option<AcOpfPoint>,
    /// Connected topologies examined.
    pub topologies: usize,
    pub feasible_topologies: usize,
}

pub fn exhaustive_baseline(net: &Network, cfg: &OtsConfig, scenario: &Scenario) -> Result<BaselineSolution, OtsError> {
    cfg.validate(net)?;
    if cfg.alpha > 1 {
        return Err(OtsError::Config(format!(
            "exhaustive baseline supports a budget of at most 1, got {}",
            cfg.alpha
        )));
    }
    let demand = scenario.apply(net);
    let l = net.branch_count();
    let mut candidates = vec![vec![true; l]];
    if cfg.alpha == 1 {
        for k in (0..l).filter(|&k| cfg.switchable[k]) {
            let mut st = vec![true; l];
            st[k] = false;
            candidates.push(st);
        }
    }
    let mut out = BaselineSolution {
        best: None,
        topologies: 0,
        feasible_topologies: 0,
    };
    for st in candidates {
        if !demand.is_connected(&st) {
            continue;
        }
        out.topologies += 1;
        let Some(pt) = ac_opf_slp(&demand, &st, cfg)? else { continue };
        if !pt.feasible() {
            continue;
        }
        out.feasible_topologies += 1;
        if out.best.as_ref().map_or(true, |b| pt.cost < b.cost) {
            out.best = Some(pt);
        }
    }
    Ok(out)
}
