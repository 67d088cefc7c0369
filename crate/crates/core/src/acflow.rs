//! Exact AC power flow: the common terms `γ, ρ, π`, branch flows and
//! injections, analytic Jacobians, and a polar Newton-Raphson solver.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, fabs, sin};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{max_abs, Lu, Matrix};
use crate::network::{BranchCoefficients, BusKind, FlowBlock, FlowCoefficients, Network};

/// Bus voltages and angles plus the derived per-branch angle differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_diff: Vec<f64>,
}

impl OperatingPoint {
    pub fn new(net: &Network, v: Vec<f64>, theta: Vec<f64>) -> Self {
        assert_eq!(v.len(), net.bus_count());
        assert_eq!(theta.len(), net.bus_count());
        let theta_diff = net
            .branches()
            .iter()
            .map(|br| theta[br.from] - theta[br.to])
            .collect();
        Self {
            v,
            theta,
            theta_diff,
        }
    }

    /// Flat voltages (slack at its setpoint) with the case angles.
    pub fn anchor(net: &Network) -> Self {
        let v = net
            .buses()
            .iter()
            .map(|b| if b.kind == BusKind::Slack { b.v_setpoint } else { 1.0 })
            .collect();
        Self::new(net, v, net.case_angles())
    }

    /// Model input `x = [V; θ_diff]`.
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.v.clone();
        x.extend_from_slice(&self.theta_diff);
        x
    }

    /// `x - other` over the `[V; θ_diff]` coordinates.
    pub fn delta(&self, other: &OperatingPoint) -> Vec<f64> {
        self.v
            .iter()
            .chain(&self.theta_diff)
            .zip(other.v.iter().chain(&other.theta_diff))
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// `γ_i = V_i²`, `ρ_ij = V_i V_j cos θ_ij`, `π_ij = V_i V_j sin θ_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonTerms {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
}

impl CommonTerms {
    /// `f(x) = [ρ; π]`.
    pub fn rho_pi(&self) -> Vec<f64> {
        let mut f = self.rho.clone();
        f.extend_from_slice(&self.pi);
        f
    }
}

/// Directed branch flows (`4ℓ`) and nodal injections (`2n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerVariables {
    pub z_pf: Vec<f64>,
    pub z_inj: Vec<f64>,
}

/// Jacobian of `[ρ; π]` with respect to `[V; θ_diff]`, shape `2ℓ × (n+ℓ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonTermJacobian(pub Matrix);

pub fn common_terms(net: &Network, x: &OperatingPoint) -> CommonTerms {
    let gamma = x.v.iter().map(|v| v * v).collect();
    let (rho, pi) = net
        .branches()
        .iter()
        .zip(&x.theta_diff)
        .map(|(br, &th)| {
            let vv = x.v[br.from] * x.v[br.to];
            (vv * cos(th), vv * sin(th))
        })
        .unzip();
    CommonTerms { gamma, rho, pi }
}

/// Exact flows and injections with every branch in service.
pub fn branch_flows(x: &OperatingPoint, net: &Network) -> PowerVariables {
    flows_with_status(x, net, &vec![true; net.branch_count()])
}

/// Exact flows; out-of-service branches carry zero flow and are left out
/// of the injections.
pub fn flows_with_status(x: &OperatingPoint, net: &Network, in_service: &[bool]) -> PowerVariables {
    let n = net.bus_count();
    let l = net.branch_count();
    assert_eq!(in_service.len(), l);
    let mut z_pf = vec![0.0; 4 * l];
    let mut z_inj = vec![0.0; 2 * n];
    for (k, br) in net.branches().iter().enumerate() {
        if !in_service[k] {
            continue;
        }
        let (vi, vj, th) = (x.v[br.from], x.v[br.to], x.theta_diff[k]);
        let (c, s) = (cos(th), sin(th));
        let a = br.tap;
        // Direct evaluation of the branch equations, independent of the
        // coefficient tables used by the fixed matrices.
        let p_ij = vi * vi * (br.g / (a * a) + br.g_sh) - vi * vj / a * (br.g * c + br.b * s);
        let q_ij = -vi * vi * (br.b / (a * a) + br.b_sh) - vi * vj / a * (br.g * s - br.b * c);
        let p_ji = vj * vj * (br.g + br.g_sh) - vi * vj * (br.g * c - br.b * s);
        let q_ji = -vj * vj * (br.b + br.b_sh) - vi * vj * (-br.g * s - br.b * c);
        z_pf[k] = p_ij;
        z_pf[l + k] = q_ij;
        z_pf[2 * l + k] = p_ji;
        z_pf[3 * l + k] = q_ji;
        z_inj[br.from] += p_ij;
        z_inj[n + br.from] += q_ij;
        z_inj[br.to] += p_ji;
        z_inj[n + br.to] += q_ji;
    }
    PowerVariables { z_pf, z_inj }
}

/// Analytic Jacobian of `[ρ; π]`.
pub fn jacobian(net: &Network, x: &OperatingPoint) -> CommonTermJacobian {
    let n = net.bus_count();
    let l = net.branch_count();
    let mut j = Matrix::zeros(2 * l, n + l);
    for (k, br) in net.branches().iter().enumerate() {
        let (vi, vj, th) = (x.v[br.from], x.v[br.to], x.theta_diff[k]);
        let (c, s) = (cos(th), sin(th));
        j[(k, br.from)] = vj * c;
        j[(k, br.to)] = vi * c;
        j[(k, n + k)] = -vi * vj * s;
        j[(l + k, br.from)] = vj * s;
        j[(l + k, br.to)] = vi * s;
        j[(l + k, n + k)] = vi * vj * c;
    }
    CommonTermJacobian(j)
}

/// Partial derivatives of one directed flow with respect to
/// `(V_from, V_to, θ_ij)` of its branch.
fn flow_partials(
    coeffs: FlowCoefficients,
    from_end: bool,
    vi: f64,
    vj: f64,
    c: f64,
    s: f64,
) -> (f64, f64, f64) {
    let (mut dvi, mut dvj) = (
        coeffs.rho * vj * c + coeffs.pi * vj * s,
        coeffs.rho * vi * c + coeffs.pi * vi * s,
    );
    if from_end {
        dvi += 2.0 * coeffs.gamma * vi;
    } else {
        dvj += 2.0 * coeffs.gamma * vj;
    }
    let dth = -coeffs.rho * vi * vj * s + coeffs.pi * vi * vj * c;
    (dvi, dvj, dth)
}

/// Exact Jacobian of `z_pf` with respect to `[V; θ_diff]`, shape
/// `4ℓ × (n+ℓ)`.
pub fn flow_jacobian(net: &Network, x: &OperatingPoint) -> Matrix {
    let n = net.bus_count();
    let l = net.branch_count();
    let mut jac = Matrix::zeros(4 * l, n + l);
    for (k, br) in net.branches().iter().enumerate() {
        let (vi, vj, th) = (x.v[br.from], x.v[br.to], x.theta_diff[k]);
        let (c, s) = (cos(th), sin(th));
        let coeffs = BranchCoefficients::of(br).blocks();
        for (block, cf) in FlowBlock::ALL.into_iter().zip(coeffs) {
            let row = block.index(k, l);
            let (dvi, dvj, dth) = flow_partials(cf, block.is_from_end(), vi, vj, c, s);
            jac[(row, br.from)] += dvi;
            jac[(row, br.to)] += dvj;
            jac[(row, n + k)] = dth;
        }
    }
    jac
}

/// Specified operating conditions for a power flow solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSpec {
    /// Net active injection (generation minus demand) per bus; ignored at
    /// the slack.
    pub p: Vec<f64>,
    /// Net reactive injection per bus; only used at PQ buses.
    pub q: Vec<f64>,
    /// Voltage setpoints; only used at slack and PV buses.
    pub v: Vec<f64>,
}

impl PowerFlowSpec {
    /// Case demands with every generator at the given active output and the
    /// case voltage setpoints.
    pub fn from_dispatch(net: &Network, p_gen: &[f64]) -> Self {
        let n = net.bus_count();
        let mut p: Vec<f64> = net.buses().iter().map(|b| -b.p_demand).collect();
        let q = net.buses().iter().map(|b| -b.q_demand).collect();
        for (gen, pg) in net.generators().iter().zip(p_gen) {
            p[gen.bus] += pg;
        }
        let v = net.buses().iter().map(|b| b.v_setpoint).collect::<Vec<_>>();
        debug_assert_eq!(v.len(), n);
        Self { p, q, v }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("no convergence after {iterations} iterations (mismatch {mismatch:e})")]
    NoConvergence { iterations: usize, mismatch: f64 },
    #[error("disconnected: {0} bus(es) not reachable from the slack")]
    Disconnected(usize),
    #[error("singular power flow Jacobian at iteration {0}")]
    Singular(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonSolution {
    pub point: OperatingPoint,
    /// Number of correction steps taken.
    pub iterations: usize,
    /// Final max-norm mismatch over the solved equations.
    pub mismatch: f64,
    /// Flows and network injections at the solution (open branches zero).
    pub power: PowerVariables,
}

impl NewtonSolution {
    /// Net active injection required at each bus, including shunt
    /// consumption (`P_i + G_sh V_i²`).
    pub fn net_injection_p(&self, net: &Network) -> Vec<f64> {
        net.buses()
            .iter()
            .enumerate()
            .map(|(i, b)| self.power.z_inj[i] + b.g_shunt * self.point.v[i] * self.point.v[i])
            .collect()
    }

    /// Net reactive injection required at each bus (`Q_i - B_sh V_i²`).
    pub fn net_injection_q(&self, net: &Network) -> Vec<f64> {
        let n = net.bus_count();
        net.buses()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                self.power.z_inj[n + i] - b.b_shunt * self.point.v[i] * self.point.v[i]
            })
            .collect()
    }
}

/// Polar Newton-Raphson with unknowns `θ` (non-slack) and `V` (PQ buses),
/// flat start. Converges when the max-norm mismatch drops below
/// `opts.tolerance`.
pub fn solve_newton(
    net: &Network,
    in_service: &[bool],
    spec: &PowerFlowSpec,
    opts: &NewtonOptions,
) -> Result<NewtonSolution, NewtonError> {
    let n = net.bus_count();
    let l = net.branch_count();
    assert_eq!(in_service.len(), l);
    let unreachable = net.islands(in_service).iter().filter(|r| !**r).count();
    if unreachable > 0 {
        return Err(NewtonError::Disconnected(unreachable));
    }
    let buses = net.buses();
    let slack = net.slack();
    // Unknown layout: angle of every non-slack bus, then voltage of every PQ bus.
    let mut theta_col = vec![usize::MAX; n];
    let mut v_col = vec![usize::MAX; n];
    let mut dim = 0;
    for i in 0..n {
        if i != slack {
            theta_col[i] = dim;
            dim += 1;
        }
    }
    let n_theta = dim;
    for (i, b) in buses.iter().enumerate() {
        if b.kind == BusKind::Pq {
            v_col[i] = dim;
            dim += 1;
        }
    }

    let mut v: Vec<f64> = buses
        .iter()
        .enumerate()
        .map(|(i, b)| if b.kind == BusKind::Pq { 1.0 } else { spec.v[i] })
        .collect();
    let theta0 = buses[slack].theta_setpoint;
    let mut theta = vec![theta0; n];
    let coeffs = net.branch_coefficients();

    let mut iterations = 0;
    loop {
        let point = OperatingPoint::new(net, v.clone(), theta.clone());
        let power = flows_with_status(&point, net, in_service);
        let mut mismatch = vec![0.0; dim];
        for i in 0..n {
            if i == slack {
                continue;
            }
            let b = &buses[i];
            mismatch[theta_col[i]] = power.z_inj[i] + b.g_shunt * v[i] * v[i] - spec.p[i];
            if b.kind == BusKind::Pq {
                mismatch[v_col[i]] =
                    power.z_inj[n + i] - b.b_shunt * v[i] * v[i] - spec.q[i];
            }
        }
        let worst = max_abs(&mismatch);
        if !worst.is_finite() {
            return Err(NewtonError::NoConvergence {
                iterations,
                mismatch: worst,
            });
        }
        if worst < opts.tolerance {
            return Ok(NewtonSolution {
                point,
                iterations,
                mismatch: worst,
                power,
            });
        }
        if iterations >= opts.max_iter {
            return Err(NewtonError::NoConvergence {
                iterations,
                mismatch: worst,
            });
        }

        // Rows follow the mismatch layout: P rows share the θ columns'
        // numbering, Q rows share the V columns' numbering.
        let mut jac = Matrix::zeros(dim, dim);
        for (i, b) in buses.iter().enumerate() {
            if i == slack {
                continue;
            }
            if b.kind == BusKind::Pq {
                jac[(theta_col[i], v_col[i])] += 2.0 * b.g_shunt * v[i];
                jac[(v_col[i], v_col[i])] -= 2.0 * b.b_shunt * v[i];
            }
        }
        for (k, br) in net.branches().iter().enumerate() {
            if !in_service[k] {
                continue;
            }
            let (vi, vj, th) = (v[br.from], v[br.to], point.theta_diff[k]);
            let (c, s) = (cos(th), sin(th));
            for (block, cf) in FlowBlock::ALL.into_iter().zip(coeffs[k].blocks()) {
                let bus = block.sending_bus(br);
                if bus == slack {
                    continue;
                }
                let row = if block.is_active() {
                    theta_col[bus]
                } else if buses[bus].kind == BusKind::Pq {
                    v_col[bus]
                } else {
                    continue;
                };
                let (dvi, dvj, dth) = flow_partials(cf, block.is_from_end(), vi, vj, c, s);
                if theta_col[br.from] != usize::MAX {
                    jac[(row, theta_col[br.from])] += dth;
                }
                if theta_col[br.to] != usize::MAX {
                    jac[(row, theta_col[br.to])] -= dth;
                }
                if v_col[br.from] != usize::MAX {
                    jac[(row, v_col[br.from])] += dvi;
                }
                if v_col[br.to] != usize::MAX {
                    jac[(row, v_col[br.to])] += dvj;
                }
            }
        }
        let lu = Lu::factor(jac).ok_or(NewtonError::Singular(iterations))?;
        let step = lu.solve(&mismatch);
        for i in 0..n {
            if theta_col[i] != usize::MAX {
                theta[i] -= step[theta_col[i]];
            }
            if v_col[i] != usize::MAX {
                v[i] -= step[v_col[i]];
            }
        }
        debug_assert!(theta_col.iter().filter(|c| **c != usize::MAX).count() == n_theta);
        iterations += 1;
        if v.iter().any(|x| !(fabs(*x) < 1e3)) {
            return Err(NewtonError::NoConvergence {
                iterations,
                mismatch: f64::INFINITY,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::*;
    use crate::network::FixedMatrices;
    use crate::rng::Stream;
    use core::f64::consts::PI;

    fn random_point(net: &Network, s: &mut Stream) -> OperatingPoint {
        let v = (0..net.bus_count()).map(|_| s.uniform(0.94, 1.06)).collect();
        let th = (0..net.bus_count()).map(|_| s.uniform(-PI / 6.0, PI / 6.0)).collect();
        OperatingPoint::new(net, v, th)
    }

    #[test]
    fn flat_start_terms() {
        let net = five_bus();
        let x = OperatingPoint::new(&net, vec![1.0; 5], vec![0.0; 5]);
        let t = common_terms(&net, &x);
        assert!(t.gamma.iter().all(|g| *g == 1.0));
        assert!(t.rho.iter().all(|r| *r == 1.0));
        assert!(t.pi.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn thirty_degree_terms() {
        let net = two_bus();
        let x = OperatingPoint::new(&net, vec![1.0, 1.0], vec![PI / 6.0, 0.0]);
        let t = common_terms(&net, &x);
        assert!((t.rho[0] - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((t.pi[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trig_identity_on_random_points() {
        let net = five_bus();
        let mut s = Stream::new(1, 0);
        for _ in 0..200 {
            let x = random_point(&net, &mut s);
            let t = common_terms(&net, &x);
            for (k, br) in net.branches().iter().enumerate() {
                let lhs = t.rho[k] * t.rho[k] + t.pi[k] * t.pi[k];
                let rhs = t.gamma[br.from] * t.gamma[br.to];
                assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            }
        }
    }

    #[test]
    fn flat_start_flows_vanish_without_shunts() {
        let net = two_bus();
        let x = OperatingPoint::new(&net, vec![1.0, 1.0], vec![0.0, 0.0]);
        let pv = branch_flows(&x, &net);
        assert!(pv.z_pf.iter().all(|f| f.abs() < 1e-15));
    }

    #[test]
    fn charging_reactive_flow() {
        let mut br = line(0, 1, 0.0, 0.1);
        br.b_sh = 0.05;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![br],
            vec![],
        )
        .unwrap();
        let x = OperatingPoint::new(&net, vec![1.0, 1.0], vec![0.0, 0.0]);
        let pv = branch_flows(&x, &net);
        assert!((pv.z_pf[1] + 0.05).abs() < 1e-13);
    }

    /// `S_ij = V_i conj(I_ij)` with the π-model evaluated in complex numbers.
    fn complex_oracle(net: &Network, x: &OperatingPoint) -> Vec<f64> {
        #[derive(Clone, Copy)]
        struct C(f64, f64);
        let mul = |a: C, b: C| C(a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
        let conj = |a: C| C(a.0, -a.1);
        let sub = |a: C, b: C| C(a.0 - b.0, a.1 - b.1);
        let scale = |a: C, k: f64| C(a.0 * k, a.1 * k);
        let l = net.branch_count();
        let mut out = vec![0.0; 4 * l];
        for (k, br) in net.branches().iter().enumerate() {
            let ui = C(x.v[br.from] * cos(x.theta[br.from]), x.v[br.from] * sin(x.theta[br.from]));
            let uj = C(x.v[br.to] * cos(x.theta[br.to]), x.v[br.to] * sin(x.theta[br.to]));
            let y = C(br.g, br.b);
            let ysh = C(br.g_sh, br.b_sh);
            let a = br.tap;
            // from side: I = (y/a² + ysh) Vi - (y/a) Vj
            let i_ij = sub(mul(C(y.0 / (a * a) + ysh.0, y.1 / (a * a) + ysh.1), ui), mul(scale(y, 1.0 / a), uj));
            // to side with unit ratio
            let i_ji = sub(mul(C(y.0 + ysh.0, y.1 + ysh.1), uj), mul(y, ui));
            let s_ij = mul(ui, conj(i_ij));
            let s_ji = mul(uj, conj(i_ji));
            out[k] = s_ij.0;
            out[l + k] = s_ij.1;
            out[2 * l + k] = s_ji.0;
            out[3 * l + k] = s_ji.1;
        }
        out
    }

    #[test]
    fn flows_match_complex_power_oracle() {
        let mut s = Stream::new(2, 0);
        for net in [two_bus(), five_bus()] {
            for _ in 0..50 {
                let x = random_point(&net, &mut s);
                let pv = branch_flows(&x, &net);
                let oracle = complex_oracle(&net, &x);
                for (a, b) in pv.z_pf.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-11, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn fixed_matrices_reproduce_exact_flows() {
        let net = five_bus();
        let fm = FixedMatrices::build(&net);
        let mut s = Stream::new(3, 0);
        for _ in 0..50 {
            let x = random_point(&net, &mut s);
            let t = common_terms(&net, &x);
            let pv = branch_flows(&x, &net);
            let z = fm.flows(&t.gamma, &t.rho, &t.pi);
            for (a, b) in z.iter().zip(&pv.z_pf) {
                assert!((a - b).abs() < 1e-12);
            }
            let inj = fm.injections(&pv.z_pf);
            for (a, b) in inj.iter().zip(&pv.z_inj) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_at_flat_start() {
        let net = two_bus();
        let x = OperatingPoint::new(&net, vec![1.0, 1.0], vec![0.0, 0.0]);
        let j = jacobian(&net, &x).0;
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(1, 2)], 1.0);
        assert_eq!(j[(0, 0)], 1.0);
    }

    #[test]
    fn flow_jacobian_matches_finite_differences() {
        let net = five_bus();
        let mut s = Stream::new(4, 0);
        let x = random_point(&net, &mut s);
        let jac = flow_jacobian(&net, &x);
        let n = net.bus_count();
        let h = 1e-6;
        for col in 0..net.input_dim() {
            let bump = |d: f64| {
                let mut y = x.clone();
                if col < n {
                    y.v[col] += d;
                } else {
                    y.theta_diff[col - n] += d;
                }
                branch_flows(&y, &net).z_pf
            };
            let (up, dn) = (bump(h), bump(-h));
            for r in 0..jac.rows() {
                let fd = (up[r] - dn[r]) / (2.0 * h);
                assert!((fd - jac[(r, col)]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn newton_flat_case_needs_no_steps() {
        let net = two_bus();
        let spec = PowerFlowSpec {
            p: vec![0.0, 0.0],
            q: vec![0.0, 0.0],
            v: vec![1.0, 1.0],
        };
        let sol = solve_newton(&net, &[true], &spec, &NewtonOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.point.v, vec![1.0, 1.0]);
    }

    #[test]
    fn newton_two_bus_matches_bisection() {
        // Lossless line, bus 2 is PV at 1.0 drawing 2 p.u.: P_21 = -10 sin θ_21.
        let mut net_buses = vec![bus(1, BusKind::Slack), bus(2, BusKind::Pv)];
        net_buses[1].p_demand = 2.0;
        let net = Network::new(net_buses, vec![line(0, 1, 0.0, 0.1)], vec![]).unwrap();
        let spec = PowerFlowSpec::from_dispatch(&net, &[]);
        let sol = solve_newton(&net, &[true], &spec, &NewtonOptions::default()).unwrap();
        // bisection on P_21(θ_2) = -2
        let p21 = |t2: f64| {
            let x = OperatingPoint::new(&net, vec![1.0, 1.0], vec![0.0, t2]);
            branch_flows(&x, &net).z_pf[2]
        };
        let (mut lo, mut hi) = (-PI / 2.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p21(mid) + 2.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((sol.point.theta[1] - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn newton_beyond_loadability_fails() {
        // Max transfer over x = 0.1 at unit voltages is 10 p.u.
        let mut b = vec![bus(1, BusKind::Slack), bus(2, BusKind::Pv)];
        b[1].p_demand = 12.0;
        let net = Network::new(b, vec![line(0, 1, 0.0, 0.1)], vec![]).unwrap();
        let spec = PowerFlowSpec::from_dispatch(&net, &[]);
        let err = solve_newton(&net, &[true], &spec, &NewtonOptions::default()).unwrap_err();
        assert!(matches!(err, NewtonError::NoConvergence { .. } | NewtonError::Singular(_)));
    }

    #[test]
    fn newton_fixed_point_reproduces_injections() {
        let net = five_bus();
        let spec = PowerFlowSpec::from_dispatch(&net, &[0.8, 0.5]);
        let sol = solve_newton(&net, &[true; 6], &spec, &NewtonOptions::default()).unwrap();
        let p = sol.net_injection_p(&net);
        let q = sol.net_injection_q(&net);
        for (i, b) in net.buses().iter().enumerate() {
            if b.kind != BusKind::Slack {
                assert!((p[i] - spec.p[i]).abs() < 1e-8);
            }
            if b.kind == BusKind::Pq {
                assert!((q[i] - spec.q[i]).abs() < 1e-8);
            } else {
                assert_eq!(sol.point.v[i], spec.v[i]);
            }
        }
    }

    #[test]
    fn newton_detects_islands() {
        let net = five_bus();
        let mut on = [true; 6];
        on[5] = false;
        let spec = PowerFlowSpec::from_dispatch(&net, &[0.8, 0.5]);
        let err = solve_newton(&net, &on, &spec, &NewtonOptions::default()).unwrap_err();
        assert_eq!(err, NewtonError::Disconnected(1));
    }
}
