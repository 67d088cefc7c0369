use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::linalg::{solve, Matrix};
use crate::rng::Stream;

fn box_lp() -> MilpProblem {
    let mut p = MilpProblem::new();
    let x = p.add_continuous("x", 0.0, f64::INFINITY);
    let y = p.add_continuous("y", 0.0, f64::INFINITY);
    p.add_constraint("cx", vec![(x, 1.0)], Sense::Le, 1.0);
    p.add_constraint("cy", vec![(y, 1.0)], Sense::Le, 1.0);
    p.add_cost(x, -1.0);
    p.add_cost(y, -1.0);
    p
}

#[test]
fn box_corner() {
    let s = solve_lp(&box_lp()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!((s.objective + 2.0).abs() < 1e-12);
    assert!((s.values[0] - 1.0).abs() < 1e-12 && (s.values[1] - 1.0).abs() < 1e-12);
}

#[test]
fn infeasible_pair() {
    let mut p = MilpProblem::new();
    let x = p.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY);
    p.add_constraint("lo", vec![(x, 1.0)], Sense::Ge, 1.0);
    p.add_constraint("hi", vec![(x, 1.0)], Sense::Le, 0.0);
    assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);
    assert_eq!(solve_milp(&p, &MilpLimits::default()).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn unbounded_ray() {
    let mut p = MilpProblem::new();
    let x = p.add_continuous("x", 0.0, f64::INFINITY);
    let y = p.add_continuous("y", f64::NEG_INFINITY, f64::INFINITY);
    p.add_constraint("c", vec![(x, 1.0), (y, -1.0)], Sense::Le, 2.0);
    p.add_cost(x, -1.0);
    assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Unbounded);
}

#[test]
fn free_variable_and_equalities() {
    // min x + 2y s.t. x + y = 3, x - y >= -1, x free, y in [0, 10]
    let mut p = MilpProblem::new();
    let x = p.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY);
    let y = p.add_continuous("y", 0.0, 10.0);
    p.add_constraint("sum", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 3.0);
    p.add_constraint("diff", vec![(x, 1.0), (y, -1.0)], Sense::Ge, -1.0);
    p.add_cost(x, 1.0);
    p.add_cost(y, 2.0);
    p.objective_offset = 5.0;
    let s = solve_lp(&p).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!((s.values[x] - 3.0).abs() < 1e-9 && s.values[y].abs() < 1e-9);
    assert!((s.objective - 8.0).abs() < 1e-9);
}

#[test]
fn knapsack() {
    let mut p = MilpProblem::new();
    let a = p.add_binary("a");
    let b = p.add_binary("b");
    p.add_constraint("cap", vec![(a, 1.0), (b, 1.0)], Sense::Le, 1.0);
    p.add_cost(a, -3.0);
    p.add_cost(b, -2.0);
    let s = solve_milp(&p, &MilpLimits::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert_eq!(s.objective, -3.0);
    assert_eq!((s.values[a], s.values[b]), (1.0, 0.0));
}

#[test]
fn validation() {
    let mut p = MilpProblem::new();
    p.add_continuous("x", 0.0, 1.0);
    p.add_continuous("x", 0.0, 1.0);
    assert_eq!(p.validate(), Err(MilpError::DuplicateName("x".into())));
    let mut p = MilpProblem::new();
    p.add_var("z", 0.0, f64::INFINITY, true);
    assert_eq!(p.validate(), Err(MilpError::UnboundedInteger("z".into())));
    let mut p = MilpProblem::new();
    p.add_continuous("w", 2.0, 1.0);
    assert_eq!(p.validate(), Err(MilpError::InvalidBounds("w".into())));
}

/// Random feasible LP over a bounded box: a known interior point fixes the
/// right-hand sides.
fn random_lp(rng: &mut Stream, n: usize, m: usize) -> MilpProblem {
    let mut p = MilpProblem::new();
    let mut x0 = Vec::new();
    for j in 0..n {
        let lo = rng.uniform(-2.0, 0.0);
        let hi = rng.uniform(0.5, 3.0);
        p.add_continuous(format!("x{j}"), lo, hi);
        x0.push(rng.uniform(lo, hi));
        p.add_cost(j, rng.uniform(-5.0, 5.0));
    }
    for i in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.uniform(-3.0, 3.0))).collect();
        let lhs: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let slack = rng.uniform(0.0, 1.0);
        let (sense, rhs) = match rng.below(3) {
            0 => (Sense::Le, lhs + slack),
            1 => (Sense::Ge, lhs - slack),
            _ => (Sense::Eq, lhs),
        };
        p.add_constraint(format!("r{i}"), coeffs, sense, rhs);
    }
    p
}

/// Minimum over all basic feasible points, found by solving every square
/// system of active constraints.
fn vertex_oracle(p: &MilpProblem) -> f64 {
    let n = p.var_count();
    // candidate hyperplanes: (row, rhs, is_equality)
    let mut planes: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for c in &p.constraints {
        let mut row = vec![0.0; n];
        for &(j, a) in &c.coefficients {
            row[j] += a;
        }
        planes.push((row, c.rhs, c.sense == Sense::Eq));
    }
    for (j, v) in p.variables.iter().enumerate() {
        for b in [v.lower, v.upper] {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            planes.push((row, b, false));
        }
    }
    let eqs: Vec<usize> = (0..planes.len()).filter(|&k| planes[k].2).collect();
    let others: Vec<usize> = (0..planes.len()).filter(|&k| !planes[k].2).collect();
    let need = n - eqs.len();
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; need];
    fn combos(k: usize, start: usize, pool: &[usize], pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k == pick.len() {
            f(pick);
            return;
        }
        for i in start..pool.len() {
            pick[k] = pool[i];
            combos(k + 1, i + 1, pool, pick, f);
        }
    }
    combos(0, 0, &others, &mut pick, &mut |chosen| {
        let rows: Vec<usize> = eqs.iter().chain(chosen).copied().collect();
        let a = Matrix::from_fn(n, n, |r, c| planes[rows[r]].0[c]);
        let b: Vec<f64> = rows.iter().map(|&r| planes[r].1).collect();
        if let Some(x) = solve(a, &b) {
            if p.max_violation(&x, false) < 1e-9 {
                best = best.min(p.objective_value(&x));
            }
        }
    });
    best
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = Stream::new(42, 0);
    for case in 0..60 {
        let p = random_lp(&mut rng, 5, 1 + case % 4);
        let oracle = vertex_oracle(&p);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal, "case {case}");
        assert!((s.objective - oracle).abs() < 1e-8, "case {case}: {} vs {}", s.objective, oracle);
        assert!(p.max_violation(&s.values, false) < FEAS_TOL);
    }
}

/// Random pure 0-1 problem with integer data.
pub(crate) fn random_binary(rng: &mut Stream, k: usize, m: usize) -> MilpProblem {
    let mut p = MilpProblem::new();
    for j in 0..k {
        p.add_binary(format!("b{j}"));
        p.add_cost(j, rng.below(21) as f64 - 10.0);
    }
    for i in 0..m {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for j in 0..k {
            if rng.below(3) > 0 {
                coeffs.push((j, rng.below(13) as f64 - 4.0));
            }
        }
        let total: f64 = coeffs.iter().map(|&(_, a)| a.max(0.0)).sum();
        let (sense, rhs) = match rng.below(4) {
            0 => (Sense::Ge, libm::floor(rng.uniform(-2.0, 0.3 * total))),
            1 if i % 3 == 0 => (Sense::Eq, libm::floor(rng.uniform(0.0, 0.5 * total))),
            _ => (Sense::Le, libm::floor(rng.uniform(0.0, 0.6 * total + 1.0))),
        };
        p.add_constraint(format!("r{i}"), coeffs, sense, rhs);
    }
    p
}

pub(crate) fn enumerate_binary(p: &MilpProblem) -> Option<f64> {
    let k = p.var_count();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << k) {
        let x: Vec<f64> = (0..k).map(|j| ((mask >> j) & 1) as f64).collect();
        if p.max_violation(&x, true) <= 1e-9 {
            let v = p.objective_value(&x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

#[test]
fn binary_problems_match_enumeration() {
    let mut rng = Stream::new(7, 0);
    let mut feasible = 0;
    for case in 0..120 {
        let k = 3 + case % 10;
        let m = 1 + case % 10;
        let p = random_binary(&mut rng, k, m);
        let s = solve_milp(&p, &MilpLimits::default()).unwrap();
        match enumerate_binary(&p) {
            Some(v) => {
                feasible += 1;
                assert_eq!(s.status, SolveStatus::Optimal, "case {case}");
                assert!((s.objective - v).abs() < 1e-7, "case {case}: {} vs {v}", s.objective);
                assert!(p.max_violation(&s.values, true) <= FEAS_TOL);
                assert!(s.objective >= s.root_bound - 1e-7);
                assert!(s.incumbents.windows(2).all(|w| w[1] <= w[0]));
            }
            None => assert_eq!(s.status, SolveStatus::Infeasible, "case {case}"),
        }
    }
    assert!(feasible > 60);
}

#[test]
fn mixed_problem_with_continuous_part() {
    // min -x - 2y + 0.5c, x + y + c <= 2.5, c >= 0.3 y, x,y binary, c in [0, 4]
    let mut p = MilpProblem::new();
    let x = p.add_binary("x");
    let y = p.add_binary("y");
    let c = p.add_continuous("c", 0.0, 4.0);
    p.add_constraint("cap", vec![(x, 1.0), (y, 1.0), (c, 1.0)], Sense::Le, 2.5);
    p.add_constraint("link", vec![(c, 1.0), (y, -0.3)], Sense::Ge, 0.0);
    p.add_cost(x, -1.0);
    p.add_cost(y, -2.0);
    p.add_cost(c, 0.5);
    let s = solve_milp(&p, &MilpLimits::default()).unwrap();
    assert!((s.objective - (-3.0 + 0.15)).abs() < 1e-9);
    assert!((s.values[c] - 0.3).abs() < 1e-9);
}

#[test]
fn assignment_is_solved_at_the_root() {
    let mut rng = Stream::new(3, 0);
    let k = 5;
    let mut p = MilpProblem::new();
    for i in 0..k {
        for j in 0..k {
            let v = p.add_binary(format!("x{i}_{j}"));
            p.add_cost(v, rng.below(50) as f64);
        }
    }
    for i in 0..k {
        p.add_constraint(format!("row{i}"), (0..k).map(|j| (i * k + j, 1.0)).collect(), Sense::Eq, 1.0);
        p.add_constraint(format!("col{i}"), (0..k).map(|j| (j * k + i, 1.0)).collect(), Sense::Eq, 1.0);
    }
    let s = solve_milp(&p, &MilpLimits::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert_eq!(s.nodes_explored, 1);
    // brute force over permutations
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..k).collect();
    fn permute(i: usize, perm: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if i == perm.len() {
            f(perm);
            return;
        }
        for s in i..perm.len() {
            perm.swap(i, s);
            permute(i + 1, perm, f);
            perm.swap(i, s);
        }
    }
    let cost = p.cost_vector();
    permute(0, &mut perm, &mut |pm| {
        best = best.min((0..k).map(|i| cost[i * k + pm[i]]).sum());
    });
    assert_eq!(s.objective, best);
}

#[test]
fn deterministic_and_budgeted() {
    let mut rng = Stream::new(11, 0);
    let p = random_binary(&mut rng, 12, 8);
    let a = solve_milp(&p, &MilpLimits::default()).unwrap();
    let b = solve_milp(&p, &MilpLimits::default()).unwrap();
    assert_eq!(a, b);
    let limits = MilpLimits {
        max_nodes: Some(1),
        ..MilpLimits::default()
    };
    let c = solve_milp(&p, &limits).unwrap();
    if a.nodes_explored > 1 {
        assert_eq!(c.status, SolveStatus::BudgetExceeded);
        assert_eq!(c.nodes_explored, 1);
    }
}

#[test]
fn larger_lp_is_feasible_and_stable() {
    // A few hundred columns exercises refactorization.
    let mut rng = Stream::new(5, 0);
    let p = random_lp(&mut rng, 120, 90);
    let s = solve_lp(&p).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!(p.max_violation(&s.values, false) < FEAS_TOL);
    // the optimum can only get worse when a bound is tightened
    let mut q = p.clone();
    q.variables[0].upper = q.variables[0].lower;
    let t = solve_lp(&q).unwrap();
    if t.status == SolveStatus::Optimal {
        assert!(t.objective >= s.objective - 1e-7);
    }
}
