//! A small MILP kernel: bounded primal simplex on a dense tableau and
//! best-first branch-and-bound.
//!
//! Every row `aᵀx {≤,=,≥} rhs` gets a logical variable `r = aᵀx` whose
//! bounds encode the sense, so the LP is `[A | -I] (x, r) = 0` with bounds
//! on every column. The initial basis is all logicals. Infeasible starts
//! (including warm starts after a bound change) go through a composite
//! phase 1 that minimizes the sum of bound violations; no artificial
//! columns are introduced.

mod bnb;
mod simplex;

pub use bnb::solve_milp;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Integrality tolerance.
pub const INT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub is_integer: bool,
    /// Branching priority; fractional integers of the highest priority are
    /// branched on first.
    #[serde(default)]
    pub priority: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    /// Sparse row as `(variable index, coefficient)`.
    pub coefficients: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Minimize `objective · x + objective_offset` subject to the constraints
/// and variable bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Sparse cost vector.
    pub objective: Vec<(usize, f64)>,
    pub objective_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MilpError {
    #[error("variable `{0}` has lower bound above upper bound")]
    InvalidBounds(String),
    #[error("integer variable `{0}` needs finite bounds")]
    UnboundedInteger(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("constraint `{0}` references variable index {1} outside the problem")]
    UnknownVariable(String, usize),
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
    #[error("basis matrix became numerically singular")]
    Singular,
    #[error("simplex iteration limit reached ({0} iterations)")]
    IterationLimit(usize),
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, is_integer: bool) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            is_integer,
            priority: 0,
        });
        self.variables.len() - 1
    }

    pub fn set_priority(&mut self, var: usize, priority: i32) {
        self.variables[var].priority = priority;
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.add_var(name, lower, upper, false)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, 0.0, 1.0, true)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coefficients: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            coefficients,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    /// Adds `coef` to the cost of `var`.
    pub fn add_cost(&mut self, var: usize, coef: f64) {
        self.objective.push((var, coef));
    }

    pub fn var_count(&self) -> usize {
        self.variables.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn integer_count(&self) -> usize {
        self.variables.iter().filter(|v| v.is_integer).count()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Dense cost vector.
    pub fn cost_vector(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.var_count()];
        for &(j, v) in &self.objective {
            c[j] += v;
        }
        c
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum::<f64>() + self.objective_offset
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let mut names = BTreeMap::new();
        for v in &self.variables {
            if names.insert(v.name.as_str(), ()).is_some() {
                return Err(MilpError::DuplicateName(v.name.clone()));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::InvalidBounds(v.name.clone()));
            }
            if v.is_integer && !(v.lower.is_finite() && v.upper.is_finite()) {
                return Err(MilpError::UnboundedInteger(v.name.clone()));
            }
        }
        let n = self.var_count();
        for c in &self.constraints {
            for &(j, a) in &c.coefficients {
                if j >= n {
                    return Err(MilpError::UnknownVariable(c.name.clone(), j));
                }
                if !a.is_finite() {
                    return Err(MilpError::NonFinite(c.name.clone()));
                }
            }
            if c.rhs.is_nan() {
                return Err(MilpError::NonFinite(c.name.clone()));
            }
        }
        for &(j, a) in &self.objective {
            if j >= n {
                return Err(MilpError::UnknownVariable(String::from("objective"), j));
            }
            if !a.is_finite() {
                return Err(MilpError::NonFinite(String::from("objective")));
            }
        }
        Ok(())
    }

    /// Largest violation of bounds, rows and (optionally) integrality at `x`.
    pub fn max_violation(&self, x: &[f64], check_integrality: bool) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xv) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xv).max(xv - v.upper);
            if check_integrality && v.is_integer {
                worst = worst.max(libm::fabs(xv - libm::round(xv)));
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.coefficients.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => libm::fabs(lhs - c.rhs),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Copy with every integer variable made continuous.
    pub fn relaxed(&self) -> MilpProblem {
        let mut p = self.clone();
        for v in &mut p.variables {
            v.is_integer = false;
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    BudgetExceeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// Variable values by index; empty when no solution is available.
    pub values: Vec<f64>,
    /// Objective including the offset; `NaN` when no solution is available.
    pub objective: f64,
    /// Relative gap between incumbent and best remaining bound.
    pub gap: f64,
    pub nodes_explored: usize,
    /// Objective of the root relaxation (`NaN` if it was not solved).
    pub root_bound: f64,
    /// Successive incumbent objectives in the order they were found.
    pub incumbents: Vec<f64>,
    pub simplex_iterations: usize,
}

impl MilpSolution {
    fn without_point(status: SolveStatus) -> Self {
        Self {
            status,
            values: Vec::new(),
            objective: f64::NAN,
            gap: f64::INFINITY,
            nodes_explored: 0,
            root_bound: f64::NAN,
            incumbents: Vec::new(),
            simplex_iterations: 0,
        }
    }

    pub fn has_point(&self) -> bool {
        !self.values.is_empty()
    }

    /// Values keyed by variable name.
    pub fn named_values(&self, p: &MilpProblem) -> BTreeMap<String, f64> {
        p.variables
            .iter()
            .zip(&self.values)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilpLimits {
    pub max_nodes: Option<usize>,
    /// Wall-clock budget in seconds; only honored with the `std` feature.
    pub time_budget: Option<f64>,
    pub rel_gap: f64,
}

impl Default for MilpLimits {
    fn default() -> Self {
        Self {
            max_nodes: None,
            time_budget: None,
            rel_gap: 1e-6,
        }
    }
}

/// Solves the continuous relaxation.
pub fn solve_lp(p: &MilpProblem) -> Result<MilpSolution, MilpError> {
    solve_milp(&p.relaxed(), &MilpLimits::default())
}

#[cfg(test)]
mod tests;
