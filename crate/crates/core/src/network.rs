//! Grid data model and the fixed matrices that turn common terms into
//! branch flows and nodal injections.
//!
//! All quantities are per unit on the system base. Buses are indexed
//! `0..n` internally; the external case numbering is kept in [`Bus::id`].
//!
//! Flow vectors are ordered `[P_ij; Q_ij; P_ji; Q_ji]`, each block holding
//! one entry per branch in branch order. Injection vectors are `[P; Q]`
//! with one entry per bus.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External (case file) bus number.
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    pub p_demand: f64,
    pub q_demand: f64,
    /// Shunt conductance and susceptance at the bus (consumes `g V²`,
    /// injects `b V²`).
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_setpoint: f64,
    /// Stored angle from the case, radians. Fixed for the slack bus and the
    /// sampling centre for the others.
    pub theta_setpoint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series conductance and susceptance.
    pub g: f64,
    pub b: f64,
    /// Shunt conductance and susceptance at each end.
    pub g_sh: f64,
    pub b_sh: f64,
    /// Off-nominal tap ratio on the from side; 1.0 for lines.
    pub tap: f64,
    /// Apparent power rating.
    pub rating: f64,
    pub switchable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Cost per p.u. of active power per hour.
    pub cost_linear: f64,
    /// Fixed cost per hour.
    pub cost_const: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("no slack bus")]
    NoSlack,
    #[error("more than one slack bus (buses {0} and {1})")]
    MultipleSlack(usize, usize),
    #[error("bus {0}: voltage bounds must satisfy 0 < v_min <= v_max")]
    VoltageBounds(usize),
    #[error("branch {0} references a bus outside the network")]
    UnknownBus(usize),
    #[error("branch {0} connects a bus to itself")]
    SelfLoop(usize),
    #[error("branch {0} has a non-positive rating")]
    Rating(usize),
    #[error("branch {0}: tap ratio {1} outside [0.9, 1.1]")]
    Tap(usize, f64),
    #[error("generator {0} references a bus outside the network")]
    GeneratorBus(usize),
    #[error("generator {0} has inverted limits")]
    GeneratorLimits(usize),
    #[error("network is not connected with all branches in service")]
    Disconnected,
}

/// A validated, immutable grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    slack: usize,
}

#[derive(Deserialize)]
struct RawNetwork {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = NetworkError;

    fn try_from(raw: RawNetwork) -> Result<Self, NetworkError> {
        Network::new(raw.buses, raw.branches, raw.generators)
    }
}

impl Network {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, NetworkError> {
        let mut slack: Option<usize> = None;
        for (i, bus) in buses.iter().enumerate() {
            if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max) {
                return Err(NetworkError::VoltageBounds(bus.id));
            }
            if bus.kind == BusKind::Slack {
                if let Some(s) = slack {
                    return Err(NetworkError::MultipleSlack(
                        buses[s].id,
                        bus.id,
                    ));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(NetworkError::NoSlack)?;
        let n = buses.len();
        for (k, br) in branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(NetworkError::UnknownBus(k));
            }
            if br.from == br.to {
                return Err(NetworkError::SelfLoop(k));
            }
            if !(br.rating > 0.0) {
                return Err(NetworkError::Rating(k));
            }
            if br.tap != 1.0 && !(0.9..=1.1).contains(&br.tap) {
                return Err(NetworkError::Tap(k, br.tap));
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if gen.bus >= n {
                return Err(NetworkError::GeneratorBus(g));
            }
            if gen.p_min > gen.p_max || gen.q_min > gen.q_max {
                return Err(NetworkError::GeneratorLimits(g));
            }
        }
        let net = Self {
            buses,
            branches,
            generators,
            slack,
        };
        if !net.is_connected(&vec![true; net.branch_count()]) {
            return Err(NetworkError::Disconnected);
        }
        Ok(net)
    }

    #[inline]
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    #[inline]
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    #[inline]
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Number of buses `n`.
    #[inline]
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Number of branches `ℓ`.
    #[inline]
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    #[inline]
    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Dimension of the model input `[V; θ_diff]`.
    #[inline]
    pub fn input_dim(&self) -> usize {
        self.bus_count() + self.branch_count()
    }

    /// Whether every bus is reachable from the slack through branches
    /// whose status is `true`.
    pub fn is_connected(&self, in_service: &[bool]) -> bool {
        self.islands(in_service).iter().all(|&reached| reached)
    }

    /// Reachability of each bus from the slack over in-service branches.
    pub fn islands(&self, in_service: &[bool]) -> Vec<bool> {
        assert_eq!(in_service.len(), self.branch_count());
        let n = self.bus_count();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (br, &on) in self.branches.iter().zip(in_service) {
            if on {
                adj[br.from].push(br.to);
                adj[br.to].push(br.from);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[self.slack] = true;
        queue.push_back(self.slack);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// Generators attached to each bus.
    pub fn generators_at(&self) -> Vec<Vec<usize>> {
        let mut at = vec![Vec::new(); self.bus_count()];
        for (g, gen) in self.generators.iter().enumerate() {
            at[gen.bus].push(g);
        }
        at
    }

    /// Copy of the network with each bus demand (P and Q) multiplied by the
    /// corresponding factor.
    pub fn with_demand_scale(&self, factors: &[f64]) -> Network {
        assert_eq!(factors.len(), self.bus_count());
        let mut net = self.clone();
        for (bus, f) in net.buses.iter_mut().zip(factors) {
            bus.p_demand *= f;
            bus.q_demand *= f;
        }
        net
    }

    /// Nominal operating angles from the case.
    pub fn case_angles(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.theta_setpoint).collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.p_demand).sum()
    }

    pub fn branch_coefficients(&self) -> Vec<BranchCoefficients> {
        self.branches.iter().map(BranchCoefficients::of).collect()
    }
}

/// Coefficients of one directed flow on `(γ_end, ρ, π)`, where `γ_end` is
/// the squared voltage at the sending end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowCoefficients {
    pub gamma: f64,
    pub rho: f64,
    pub pi: f64,
}

impl FlowCoefficients {
    #[inline]
    pub fn eval(&self, gamma_end: f64, rho: f64, pi: f64) -> f64 {
        self.gamma * gamma_end + self.rho * rho + self.pi * pi
    }
}

/// The four directed flows of a branch as linear maps of the common terms.
///
/// The tap only acts on the from-to direction; the to-from direction uses a
/// unit ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchCoefficients {
    pub p_ij: FlowCoefficients,
    pub q_ij: FlowCoefficients,
    pub p_ji: FlowCoefficients,
    pub q_ji: FlowCoefficients,
}

impl BranchCoefficients {
    pub fn of(br: &Branch) -> Self {
        let (g, b, a) = (br.g, br.b, br.tap);
        Self {
            p_ij: FlowCoefficients {
                gamma: g / (a * a) + br.g_sh,
                rho: -g / a,
                pi: -b / a,
            },
            q_ij: FlowCoefficients {
                gamma: -(b / (a * a) + br.b_sh),
                rho: b / a,
                pi: -g / a,
            },
            // θ_ji = -θ_ij: ρ is symmetric and π flips sign.
            p_ji: FlowCoefficients {
                gamma: g + br.g_sh,
                rho: -g,
                pi: b,
            },
            q_ji: FlowCoefficients {
                gamma: -(b + br.b_sh),
                rho: b,
                pi: g,
            },
        }
    }

    /// Coefficients in flow-block order `[P_ij, Q_ij, P_ji, Q_ji]`.
    pub fn blocks(&self) -> [FlowCoefficients; 4] {
        [self.p_ij, self.q_ij, self.p_ji, self.q_ji]
    }
}

/// Flow blocks in `z_pf` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowBlock {
    PFrom = 0,
    QFrom = 1,
    PTo = 2,
    QTo = 3,
}

impl FlowBlock {
    pub const ALL: [FlowBlock; 4] = [Self::PFrom, Self::QFrom, Self::PTo, Self::QTo];

    #[inline]
    pub fn index(self, branch: usize, branch_count: usize) -> usize {
        self as usize * branch_count + branch
    }

    #[inline]
    pub fn is_active(self) -> bool {
        matches!(self, Self::PFrom | Self::PTo)
    }

    #[inline]
    pub fn is_from_end(self) -> bool {
        matches!(self, Self::PFrom | Self::QFrom)
    }

    /// Bus that sends this flow.
    #[inline]
    pub fn sending_bus(self, br: &Branch) -> usize {
        if self.is_from_end() {
            br.from
        } else {
            br.to
        }
    }
}

/// The fixed layers mapping common terms to flows and flows to injections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedMatrices {
    /// `4ℓ × n`.
    pub w_gamma: Matrix,
    /// `4ℓ × ℓ`.
    pub w_rho: Matrix,
    /// `4ℓ × ℓ`.
    pub w_pi: Matrix,
    /// `2n × 4ℓ`, all lines in service.
    pub w_psi: Matrix,
}

/// Human-readable statement of the flow ordering, stored with models.
pub const FLOW_ORDER: &str = "z_pf = [P_ij; Q_ij; P_ji; Q_ji], blocks by direction then branch index; z_inj = [P; Q] by bus";

impl FixedMatrices {
    pub fn build(net: &Network) -> Self {
        let n = net.bus_count();
        let l = net.branch_count();
        let mut w_gamma = Matrix::zeros(4 * l, n);
        let mut w_rho = Matrix::zeros(4 * l, l);
        let mut w_pi = Matrix::zeros(4 * l, l);
        let mut w_psi = Matrix::zeros(2 * n, 4 * l);
        for (k, br) in net.branches().iter().enumerate() {
            let coeffs = BranchCoefficients::of(br).blocks();
            for (block, c) in FlowBlock::ALL.into_iter().zip(coeffs) {
                let row = block.index(k, l);
                let bus = block.sending_bus(br);
                w_gamma[(row, bus)] = c.gamma;
                w_rho[(row, k)] = c.rho;
                w_pi[(row, k)] = c.pi;
                let inj_row = if block.is_active() { bus } else { n + bus };
                w_psi[(inj_row, row)] = 1.0;
            }
        }
        Self {
            w_gamma,
            w_rho,
            w_pi,
            w_psi,
        }
    }

    pub fn bus_count(&self) -> usize {
        self.w_gamma.cols()
    }

    pub fn branch_count(&self) -> usize {
        self.w_rho.cols()
    }

    /// `[W_rho, W_pi]`, the map from `[ρ; π]` to flows.
    pub fn w_common(&self) -> Matrix {
        self.w_rho.hstack(&self.w_pi)
    }

    /// Flows `W_gamma γ + W_rho ρ + W_pi π`.
    pub fn flows(&self, gamma: &[f64], rho: &[f64], pi: &[f64]) -> Vec<f64> {
        let mut z = self.w_gamma.mul_vec(gamma);
        self.w_rho.mul_vec_add(rho, &mut z);
        self.w_pi.mul_vec_add(pi, &mut z);
        z
    }

    /// Injections `W_psi z_pf`.
    pub fn injections(&self, flows: &[f64]) -> Vec<f64> {
        self.w_psi.mul_vec(flows)
    }
}

/// Flat-voltage linearization of `V²`: `2V - 1`.
pub fn gamma_hat(v: &[f64]) -> Vec<f64> {
    v.iter().map(|vi| 2.0 * vi - 1.0).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bus(id: usize, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            v_min: 0.94,
            v_max: 1.06,
            p_demand: 0.0,
            q_demand: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v_setpoint: 1.0,
            theta_setpoint: 0.0,
        }
    }

    pub fn line(from: usize, to: usize, r: f64, x: f64) -> Branch {
        let d = r * r + x * x;
        Branch {
            from,
            to,
            g: r / d,
            b: -x / d,
            g_sh: 0.0,
            b_sh: 0.0,
            tap: 1.0,
            rating: 1.0,
            switchable: true,
        }
    }

    pub fn generator(bus: usize, cost: f64) -> Generator {
        Generator {
            bus,
            p_min: 0.0,
            p_max: 5.0,
            q_min: -5.0,
            q_max: 5.0,
            cost_linear: cost,
            cost_const: 0.0,
        }
    }

    /// Two buses, one line with r = 0, x = 0.1.
    pub fn two_bus() -> Network {
        Network::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![line(0, 1, 0.0, 0.1)],
            vec![generator(0, 10.0)],
        )
        .unwrap()
    }

    /// Five buses, six branches (a loop, a transformer, shunts, a pendant).
    pub fn five_bus() -> Network {
        let mut buses = vec![
            bus(1, BusKind::Slack),
            bus(2, BusKind::Pv),
            bus(3, BusKind::Pq),
            bus(4, BusKind::Pq),
            bus(5, BusKind::Pq),
        ];
        buses[0].v_setpoint = 1.04;
        buses[1].v_setpoint = 1.02;
        buses[2].p_demand = 0.6;
        buses[2].q_demand = 0.2;
        buses[3].p_demand = 0.4;
        buses[3].q_demand = 0.1;
        buses[3].b_shunt = 0.05;
        buses[4].p_demand = 0.3;
        buses[4].q_demand = 0.05;
        let mut branches = vec![
            line(0, 1, 0.02, 0.06),
            line(0, 2, 0.08, 0.24),
            line(1, 2, 0.06, 0.18),
            line(1, 3, 0.06, 0.18),
            line(2, 3, 0.01, 0.03),
            line(3, 4, 0.0, 0.25),
        ];
        branches[0].b_sh = 0.03;
        branches[1].b_sh = 0.025;
        branches[5].tap = 0.97;
        for br in &mut branches {
            br.rating = 1.5;
        }
        Network::new(
            buses,
            branches,
            vec![generator(0, 20.0), generator(1, 30.0)],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn two_bus_series_admittance() {
        let net = two_bus();
        let br = &net.branches()[0];
        assert_eq!(br.g, 0.0);
        assert!((br.b + 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_branch_coefficients() {
        let mut br = line(0, 1, 0.0, 0.1);
        br.g = 1.0;
        br.b = -5.0;
        let net = Network::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            vec![br],
            vec![],
        )
        .unwrap();
        let fm = FixedMatrices::build(&net);
        // P_ij row
        assert_eq!(fm.w_gamma[(0, 0)], 1.0);
        assert_eq!(fm.w_rho[(0, 0)], -1.0);
        assert_eq!(fm.w_pi[(0, 0)], 5.0);
        // Q_ij row: -(b + b_sh), b, -g
        assert_eq!(fm.w_gamma[(1, 0)], 5.0);
        assert_eq!(fm.w_rho[(1, 0)], -5.0);
        assert_eq!(fm.w_pi[(1, 0)], -1.0);
        // reverse rows sit at the to-bus
        assert_eq!(fm.w_gamma[(2, 1)], 1.0);
        assert_eq!(fm.w_pi[(2, 0)], -5.0);
    }

    #[test]
    fn matrix_shapes_and_sparsity() {
        let net = five_bus();
        let fm = FixedMatrices::build(&net);
        let (n, l) = (5, 6);
        assert_eq!(fm.w_gamma.shape(), (4 * l, n));
        assert_eq!(fm.w_rho.shape(), (4 * l, l));
        assert_eq!(fm.w_pi.shape(), (4 * l, l));
        assert_eq!(fm.w_psi.shape(), (2 * n, 4 * l));
        for r in 0..4 * l {
            assert!(fm.w_gamma.nonzeros_in_row(r) <= 1);
            assert!(fm.w_rho.nonzeros_in_row(r) <= 1);
            assert!(fm.w_pi.nonzeros_in_row(r) <= 1);
        }
        assert!(fm.w_psi.as_slice().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn psi_routes_single_flow_to_sending_bus() {
        let net = five_bus();
        let fm = FixedMatrices::build(&net);
        let l = net.branch_count();
        for (k, br) in net.branches().iter().enumerate() {
            for block in FlowBlock::ALL {
                let mut z = vec![0.0; 4 * l];
                z[block.index(k, l)] = 1.0;
                let inj = fm.injections(&z);
                let nz: Vec<usize> = (0..inj.len()).filter(|&i| inj[i] != 0.0).collect();
                let bus = block.sending_bus(br);
                let row = if block.is_active() { bus } else { 5 + bus };
                assert_eq!(nz, vec![row]);
            }
        }
    }

    #[test]
    fn gamma_hat_values() {
        let g = gamma_hat(&[1.0, 1.06, 0.94]);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - 1.12).abs() < 1e-15);
        assert!((g[2] - 0.88).abs() < 1e-15);
        assert!((1.06f64 * 1.06 - g[1] - 0.0036).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        let e = Network::new(vec![bus(1, BusKind::Pq), bus(2, BusKind::Pq)], vec![line(0, 1, 0.0, 0.1)], vec![]);
        assert_eq!(e.unwrap_err(), NetworkError::NoSlack);
        let e = Network::new(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![line(0, 0, 0.0, 0.1)], vec![]);
        assert_eq!(e.unwrap_err(), NetworkError::SelfLoop(0));
        let e = Network::new(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq), bus(3, BusKind::Pq)], vec![line(0, 1, 0.0, 0.1)], vec![]);
        assert_eq!(e.unwrap_err(), NetworkError::Disconnected);
        let mut br = line(0, 1, 0.0, 0.1);
        br.tap = 1.2;
        let e = Network::new(vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)], vec![br], vec![]);
        assert!(matches!(e.unwrap_err(), NetworkError::Tap(0, _)));
    }

    #[test]
    fn build_is_deterministic() {
        let net = five_bus();
        assert_eq!(FixedMatrices::build(&net), FixedMatrices::build(&net.clone()));
    }
}
