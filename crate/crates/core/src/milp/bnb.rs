//! Best-first branch-and-bound.
//!
//! Nodes are ordered by the relaxation bound inherited from their parent;
//! ties go to the deeper node and then to the earlier-created one. A node
//! warm-starts from a copy of its parent's final tableau while the total
//! number of stored tableau entries stays under a cap; beyond it only the
//! basis is kept and the node refactors on arrival.

use alloc::collections::BinaryHeap;
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::simplex::{Lp, LpStatus, Pos, Tableau};
use super::{MilpError, MilpLimits, MilpProblem, MilpSolution, SolveStatus, INT_TOL};

/// Upper bound on stored tableau entries across open nodes (512 MB).
const STORED_ENTRIES_CAP: usize = 64 << 20;

enum Warm {
    Root,
    Tableau(Rc<Tableau>),
    Basis(Rc<(Vec<usize>, Vec<Pos>)>),
}

struct Node {
    bound: f64,
    depth: usize,
    order: u64,
    /// Branching decisions from the root: `(column, lower, upper)`.
    fixes: Vec<(usize, f64, f64)>,
    warm: Warm,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: "greater" pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.order.cmp(&self.order))
    }
}

#[cfg(feature = "std")]
struct Clock(std::time::Instant);

#[cfg(feature = "std")]
impl Clock {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }

    fn expired(&self, budget: Option<f64>) -> bool {
        budget.is_some_and(|b| self.0.elapsed().as_secs_f64() > b)
    }
}

#[cfg(not(feature = "std"))]
struct Clock;

#[cfg(not(feature = "std"))]
impl Clock {
    fn start() -> Self {
        Self
    }

    fn expired(&self, _budget: Option<f64>) -> bool {
        false
    }
}

fn gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    ((incumbent - bound) / libm::fabs(incumbent).max(1.0)).max(0.0)
}

/// Most fractional integer column among those of the highest priority,
/// ties to the lowest index.
fn branching_column(p: &MilpProblem, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, i32, f64)> = None;
    for (j, v) in p.variables.iter().enumerate() {
        if !v.is_integer {
            continue;
        }
        let f = x[j] - libm::floor(x[j]);
        let score = f.min(1.0 - f);
        if score <= INT_TOL {
            continue;
        }
        let better = best.map_or(true, |(_, pr, s)| v.priority > pr || (v.priority == pr && score > s));
        if better {
            best = Some((j, v.priority, score));
        }
    }
    best.map(|(j, _, _)| j)
}

pub fn solve_milp(p: &MilpProblem, limits: &MilpLimits) -> Result<MilpSolution, MilpError> {
    p.validate()?;
    let lp = Lp::new(p);
    let n = lp.n;
    let clock = Clock::start();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        order: 0,
        fixes: Vec::new(),
        warm: Warm::Root,
    });
    let mut next_order = 1u64;
    let mut stored = 0usize;
    let mut nodes = 0usize;
    let mut iterations = 0usize;
    let mut root_bound = f64::NAN;
    let mut incumbent = f64::INFINITY;
    let mut best_x: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    let tol_abs = |inc: f64| limits.rel_gap * libm::fabs(inc).max(1.0);

    let finish = |status, x: Vec<f64>, obj: f64, gap: f64, nodes, iterations, trace, root_bound| MilpSolution {
        status,
        values: x,
        objective: obj,
        gap,
        nodes_explored: nodes,
        root_bound,
        incumbents: trace,
        simplex_iterations: iterations,
    };

    while let Some(node) = heap.peek() {
        if incumbent.is_finite() && node.bound >= incumbent - tol_abs(incumbent) {
            break;
        }
        let out_of_nodes = limits.max_nodes.is_some_and(|mx| nodes >= mx);
        if out_of_nodes || clock.expired(limits.time_budget) {
            let bound = node.bound;
            let status = SolveStatus::BudgetExceeded;
            let obj = if best_x.is_empty() { f64::NAN } else { incumbent + p.objective_offset };
            return Ok(finish(status, best_x, obj, gap(incumbent, bound), nodes, iterations, trace, root_bound));
        }
        let node = heap.pop().unwrap();
        lower.copy_from_slice(&lp.lower);
        upper.copy_from_slice(&lp.upper);
        for &(j, lo, hi) in &node.fixes {
            lower[j] = lo;
            upper[j] = hi;
        }
        let mut tab = match node.warm {
            Warm::Root => Tableau::initial(&lp, &lower, &upper),
            Warm::Tableau(rc) => match Rc::try_unwrap(rc) {
                Ok(t) => {
                    stored -= t.len();
                    t
                }
                Err(rc) => (*rc).clone(),
            },
            Warm::Basis(rc) => {
                let (basis, pos) = (*rc).clone();
                Tableau::from_basis(&lp, basis, pos, &lower, &upper)?
            }
        };
        tab.apply_bounds(&lower, &upper);
        let status = tab.solve(&lp, &lower, &upper, &mut iterations)?;
        nodes += 1;
        match status {
            LpStatus::Infeasible => {
                if node.depth == 0 {
                    return Ok(finish(SolveStatus::Infeasible, Vec::new(), f64::NAN, f64::INFINITY, nodes, iterations, trace, root_bound));
                }
                continue;
            }
            LpStatus::Unbounded => {
                let mut s = MilpSolution::without_point(SolveStatus::Unbounded);
                s.nodes_explored = nodes;
                s.simplex_iterations = iterations;
                s.root_bound = root_bound;
                return Ok(s);
            }
            LpStatus::Optimal => {}
        }
        let obj = tab.objective(&lp);
        if node.depth == 0 {
            root_bound = obj + p.objective_offset;
        }
        if incumbent.is_finite() && obj >= incumbent - tol_abs(incumbent) {
            continue;
        }
        let x = tab.structural(n);
        match branching_column(p, &x) {
            None => {
                let (x, obj) = polish(p, &lp, &tab, &lower, &upper, &mut iterations).unwrap_or((x, obj));
                if obj < incumbent {
                    incumbent = obj;
                    best_x = x;
                    trace.push(obj + p.objective_offset);
                }
            }
            Some(j) => {
                let v = x[j];
                let size = tab.len();
                let warm = if stored + size <= STORED_ENTRIES_CAP {
                    stored += size;
                    Warm::Tableau(Rc::new(tab))
                } else {
                    Warm::Basis(Rc::new((tab.basis.clone(), tab.pos.clone())))
                };
                let share = |w: &Warm| match w {
                    Warm::Tableau(rc) => Warm::Tableau(Rc::clone(rc)),
                    Warm::Basis(rc) => Warm::Basis(Rc::clone(rc)),
                    Warm::Root => Warm::Root,
                };
                let mut down = node.fixes.clone();
                down.push((j, lower[j], libm::floor(v)));
                let mut up = node.fixes;
                up.push((j, libm::ceil(v), upper[j]));
                heap.push(Node {
                    bound: obj,
                    depth: node.depth + 1,
                    order: next_order,
                    fixes: down,
                    warm: share(&warm),
                });
                heap.push(Node {
                    bound: obj,
                    depth: node.depth + 1,
                    order: next_order + 1,
                    fixes: up,
                    warm,
                });
                next_order += 2;
            }
        }
    }
    if best_x.is_empty() {
        return Ok(finish(SolveStatus::Infeasible, Vec::new(), f64::NAN, f64::INFINITY, nodes, iterations, trace, root_bound));
    }
    let bound = heap.peek().map_or(incumbent, |nd| nd.bound.min(incumbent));
    Ok(finish(
        SolveStatus::Optimal,
        best_x,
        incumbent + p.objective_offset,
        gap(incumbent, bound),
        nodes,
        iterations,
        trace,
        root_bound,
    ))
}

/// Re-solves with integer columns fixed at their rounded values so the
/// returned point is exactly integral. Returns `None` if that fails.
fn polish(p: &MilpProblem, lp: &Lp, tab: &Tableau, lower: &[f64], upper: &[f64], iterations: &mut usize) -> Option<(Vec<f64>, f64)> {
    if p.integer_count() == 0 {
        return None;
    }
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let x = &tab.x;
    let mut changed = false;
    for (j, v) in p.variables.iter().enumerate() {
        if v.is_integer {
            let r = libm::round(x[j]);
            changed |= r != x[j] || lo[j] != hi[j];
            lo[j] = r;
            hi[j] = r;
        }
    }
    if !changed {
        return None;
    }
    let mut t = tab.clone();
    t.apply_bounds(&lo, &hi);
    match t.solve(lp, &lo, &hi, iterations) {
        Ok(LpStatus::Optimal) => Some((t.structural(lp.n), t.objective(lp))),
        _ => None,
    }
}
