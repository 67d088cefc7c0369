//! Bounded primal simplex on a dense tableau.

use alloc::vec;
use alloc::vec::Vec;

use super::{MilpError, MilpProblem, Sense, FEAS_TOL};
use crate::linalg::{gemm, Lu, MatMut, Matrix};

/// Pivot elements smaller than this are never chosen.
const PIVOT_TOL: f64 = 1e-9;
/// Relaxation used by the first pass of the ratio test.
const HARRIS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
/// Pivots between refactorizations.
const REINVERT_EVERY: usize = 400;
/// Relative disagreement with the original data that forces a refactor.
const DRIFT_TOL: f64 = 1e-9;

/// The problem in computational form, shared by all nodes.
pub(crate) struct Lp {
    /// Structural columns, `m × n`.
    pub a: Matrix,
    pub m: usize,
    pub n: usize,
    /// Costs over all `n + m` columns (logicals cost 0).
    pub cost: Vec<f64>,
    /// Root bounds over all columns.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub dual_tol: f64,
}

impl Lp {
    pub fn new(p: &MilpProblem) -> Self {
        let (m, n) = (p.constraint_count(), p.var_count());
        let mut a = Matrix::zeros(m, n);
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &p.variables {
            lower.push(v.lower);
            upper.push(v.upper);
        }
        for (i, c) in p.constraints.iter().enumerate() {
            for &(j, v) in &c.coefficients {
                a[(i, j)] += v;
            }
            let (lo, hi) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut cost = p.cost_vector();
        let cmax = cost.iter().fold(1.0f64, |acc, c| acc.max(libm::fabs(*c)));
        cost.resize(n + m, 0.0);
        Self {
            a,
            m,
            n,
            cost,
            lower,
            upper,
            dual_tol: 1e-9 * cmax,
        }
    }

    pub fn columns(&self) -> usize {
        self.n + self.m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pos {
    Basic(usize),
    Lower,
    Upper,
    /// Nonbasic free column held at zero.
    Zero,
}

#[derive(Clone, Debug)]
pub(crate) struct Tableau {
    m: usize,
    cols: usize,
    /// `B⁻¹ [A | -I]`, row-major `m × (n+m)`.
    t: Vec<f64>,
    /// Phase-2 reduced costs.
    dj: Vec<f64>,
    pub basis: Vec<usize>,
    pub pos: Vec<Pos>,
    pub x: Vec<f64>,
    since_reinvert: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Resting position of a nonbasic column given its bounds.
fn rest(lo: f64, hi: f64) -> (Pos, f64) {
    if lo.is_finite() {
        (Pos::Lower, lo)
    } else if hi.is_finite() {
        (Pos::Upper, hi)
    } else {
        (Pos::Zero, 0.0)
    }
}

impl Tableau {
    /// All-logical basis with structurals at a bound.
    pub fn initial(lp: &Lp, lower: &[f64], upper: &[f64]) -> Self {
        let (m, n) = (lp.m, lp.n);
        let cols = n + m;
        let mut t = vec![0.0; m * cols];
        for i in 0..m {
            let row = &mut t[i * cols..(i + 1) * cols];
            for (j, a) in lp.a.row(i).iter().enumerate() {
                row[j] = -a;
            }
            row[n + i] = 1.0;
        }
        let mut pos = Vec::with_capacity(cols);
        let mut x = vec![0.0; cols];
        for j in 0..n {
            let (p, v) = rest(lower[j], upper[j]);
            pos.push(p);
            x[j] = v;
        }
        for i in 0..m {
            pos.push(Pos::Basic(i));
            x[n + i] = crate::linalg::dot(lp.a.row(i), &x[..n]);
        }
        Self {
            m,
            cols,
            t,
            dj: lp.cost.clone(),
            basis: (n..cols).collect(),
            pos,
            x,
            since_reinvert: 0,
        }
    }

    /// Rebuilds the tableau for a given basis and nonbasic positions.
    pub fn from_basis(lp: &Lp, basis: Vec<usize>, pos: Vec<Pos>, lower: &[f64], upper: &[f64]) -> Result<Self, MilpError> {
        let cols = lp.columns();
        let mut tab = Self {
            m: lp.m,
            cols,
            t: vec![0.0; lp.m * cols],
            dj: vec![0.0; cols],
            basis,
            pos,
            x: vec![0.0; cols],
            since_reinvert: 0,
        };
        for j in 0..cols {
            tab.x[j] = match tab.pos[j] {
                Pos::Lower => lower[j],
                Pos::Upper => upper[j],
                Pos::Zero | Pos::Basic(_) => 0.0,
            };
        }
        tab.reinvert(lp)?;
        Ok(tab)
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    /// Recomputes `B⁻¹ [A | -I]`, reduced costs and basic values.
    pub fn reinvert(&mut self, lp: &Lp) -> Result<(), MilpError> {
        let (m, n) = (lp.m, lp.n);
        if m == 0 {
            self.recompute_duals(lp);
            return Ok(());
        }
        let b = Matrix::from_fn(m, m, |i, k| {
            let j = self.basis[k];
            if j < n {
                lp.a[(i, j)]
            } else if j - n == i {
                -1.0
            } else {
                0.0
            }
        });
        let lu = Lu::factor(b).ok_or(MilpError::Singular)?;
        let mut binv = Matrix::zeros(m, m);
        let mut e = vec![0.0; m];
        for k in 0..m {
            e.fill(0.0);
            e[k] = 1.0;
            let col = lu.solve(&e);
            for i in 0..m {
                binv[(i, k)] = col[i];
            }
        }
        let mut ba = vec![0.0; m * n];
        gemm(1.0, binv.view(), lp.a.view(), 0.0, MatMut::row_major(m, n, &mut ba));
        let cols = self.cols;
        for i in 0..m {
            let row = &mut self.t[i * cols..(i + 1) * cols];
            row[..n].copy_from_slice(&ba[i * n..(i + 1) * n]);
            for k in 0..m {
                row[n + k] = -binv[(i, k)];
            }
        }
        // basic columns are exact unit vectors
        for (i, &j) in self.basis.iter().enumerate() {
            for r in 0..m {
                self.t[r * cols + j] = if r == i { 1.0 } else { 0.0 };
            }
            self.pos[j] = Pos::Basic(i);
        }
        self.recompute_basics();
        self.recompute_duals(lp);
        self.since_reinvert = 0;
        Ok(())
    }

    /// `x_B = -T_N x_N`.
    fn recompute_basics(&mut self) {
        for i in 0..self.m {
            let row = self.row(i);
            let mut s = 0.0;
            for (j, p) in self.pos.iter().enumerate() {
                if !matches!(p, Pos::Basic(_)) && self.x[j] != 0.0 {
                    s -= row[j] * self.x[j];
                }
            }
            let j = self.basis[i];
            self.x[j] = s;
        }
    }

    /// `d = c - T_Nᵀ c_B`.
    fn recompute_duals(&mut self, lp: &Lp) {
        self.dj.copy_from_slice(&lp.cost);
        for i in 0..self.m {
            let cb = lp.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (d, t) in self.dj.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }
        }
        for &j in &self.basis {
            self.dj[j] = 0.0;
        }
    }

    /// Whether the updated point or reduced costs disagree with the
    /// original data by more than the drift tolerance.
    fn drifted(&self, lp: &Lp) -> bool {
        let (m, n) = (lp.m, lp.n);
        let scale = |v: f64| DRIFT_TOL * (1.0 + libm::fabs(v));
        for i in 0..m {
            let act = crate::linalg::dot(lp.a.row(i), &self.x[..n]);
            if libm::fabs(act - self.x[n + i]) > scale(act) {
                return true;
            }
        }
        // y = c_B B⁻¹, read off the logical block `-B⁻¹`
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = lp.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.row(i)[n..];
                for (yk, t) in y.iter_mut().zip(row) {
                    *yk -= cb * t;
                }
            }
        }
        let mut d = lp.cost[..n].to_vec();
        for (k, &yk) in y.iter().enumerate() {
            if yk != 0.0 {
                for (dj, a) in d.iter_mut().zip(lp.a.row(k)) {
                    *dj -= yk * a;
                }
            }
        }
        let off = |j: usize, want: f64| !matches!(self.pos[j], Pos::Basic(_)) && libm::fabs(self.dj[j] - want) > scale(want) + lp.dual_tol;
        (0..n).any(|j| off(j, d[j])) || (0..m).any(|k| off(n + k, y[k]))
    }

    /// Moves nonbasic columns onto changed bounds and updates basics.
    pub fn apply_bounds(&mut self, lower: &[f64], upper: &[f64]) {
        for j in 0..self.cols {
            let target = match self.pos[j] {
                Pos::Basic(_) => continue,
                Pos::Lower if lower[j].is_finite() => lower[j],
                Pos::Upper if upper[j].is_finite() => upper[j],
                Pos::Zero if !lower[j].is_finite() && !upper[j].is_finite() => 0.0,
                _ => {
                    let (p, v) = rest(lower[j], upper[j]);
                    self.pos[j] = p;
                    v
                }
            };
            let delta = target - self.x[j];
            if delta != 0.0 {
                self.x[j] = target;
                for i in 0..self.m {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= a * delta;
                    }
                }
            }
        }
    }

    fn infeasibility(&self, lower: &[f64], upper: &[f64]) -> f64 {
        self.basis
            .iter()
            .map(|&j| (lower[j] - self.x[j]).max(self.x[j] - upper[j]).max(0.0))
            .sum()
    }

    /// Entering candidate and its direction for the given pricing vector.
    fn choose_entering(&self, d: &[f64], tol: f64, lower: &[f64], upper: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols {
            let dir = match self.pos[j] {
                Pos::Basic(_) => continue,
                _ if lower[j] == upper[j] => continue,
                Pos::Lower if d[j] < -tol => 1.0,
                Pos::Upper if d[j] > tol => -1.0,
                Pos::Zero if d[j] < -tol => 1.0,
                Pos::Zero if d[j] > tol => -1.0,
                _ => continue,
            };
            let score = libm::fabs(d[j]);
            if bland {
                return Some((j, dir));
            }
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Two-pass ratio test. Returns the step, the leaving row (if any) and
    /// the bound the leaving variable lands on.
    fn ratio_test(&self, j: usize, dir: f64, lower: &[f64], upper: &[f64], phase1: bool, bland: bool) -> (f64, Option<(usize, bool)>) {
        let limit = |i: usize, relax: f64| -> Option<(f64, bool)> {
            let alpha = -self.at(i, j) * dir;
            if libm::fabs(alpha) <= PIVOT_TOL {
                return None;
            }
            let b = self.basis[i];
            let (x, lo, hi) = (self.x[b], lower[b], upper[b]);
            let below = x < lo - FEAS_TOL;
            let above = x > hi + FEAS_TOL;
            if phase1 && below {
                // rises to its lower bound and stays there
                return (alpha > 0.0).then(|| (((lo - x) + relax) / alpha, false));
            }
            if phase1 && above {
                return (alpha < 0.0).then(|| (((hi - x) - relax) / alpha, true));
            }
            if alpha > 0.0 && hi.is_finite() {
                Some(((hi - x + relax) / alpha, true))
            } else if alpha < 0.0 && lo.is_finite() {
                Some(((lo - x - relax) / alpha, false))
            } else {
                None
            }
        };
        let flip = upper[j] - lower[j];
        let mut bound = if flip.is_finite() { flip } else { f64::INFINITY };
        for i in 0..self.m {
            if let Some((t, _)) = limit(i, if bland { 0.0 } else { HARRIS_TOL }) {
                bound = bound.min(t.max(0.0));
            }
        }
        if !bound.is_finite() {
            return (f64::INFINITY, None);
        }
        let mut pick: Option<(usize, bool, f64, f64)> = None;
        for i in 0..self.m {
            if let Some((t_relaxed, to_upper)) = limit(i, if bland { 0.0 } else { HARRIS_TOL }) {
                if t_relaxed.max(0.0) > bound + if bland { 1e-12 } else { 0.0 } {
                    continue;
                }
                let (t, _) = limit(i, 0.0).unwrap();
                let size = libm::fabs(self.at(i, j));
                let better = match pick {
                    None => true,
                    Some((pi, _, _, ps)) => {
                        if bland {
                            self.basis[i] < self.basis[pi]
                        } else {
                            size > ps
                        }
                    }
                };
                if better {
                    pick = Some((i, to_upper, t.max(0.0), size));
                }
            }
        }
        match pick {
            Some((i, to_upper, t, _)) if !(flip.is_finite() && flip <= t) => (t, Some((i, to_upper))),
            _ => (bound.min(flip), None),
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.at(r, j);
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[j] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for row in before.chunks_exact_mut(cols).chain(after.chunks_exact_mut(cols)) {
            let f = row[j];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let f = self.dj[j];
        if f != 0.0 {
            for (v, p) in self.dj.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            self.dj[j] = 0.0;
        }
        self.basis[r] = j;
        self.pos[j] = Pos::Basic(r);
        self.since_reinvert += 1;
    }

    /// Runs phase 1 / phase 2 until optimal, infeasible or unbounded.
    pub fn solve(&mut self, lp: &Lp, lower: &[f64], upper: &[f64], iterations: &mut usize) -> Result<LpStatus, MilpError> {
        let max_iter = 50 * (self.m + self.cols) + 1000;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut verified = 0;
        let mut d1 = vec![0.0; self.cols];
        let mut local = 0usize;
        loop {
            if local >= max_iter {
                return Err(MilpError::IterationLimit(local));
            }
            let infeasible = self.basis.iter().any(|&b| self.x[b] < lower[b] - FEAS_TOL || self.x[b] > upper[b] + FEAS_TOL);
            let phase1 = infeasible;
            let entering = if phase1 {
                d1.fill(0.0);
                for i in 0..self.m {
                    let b = self.basis[i];
                    let w = if self.x[b] < lower[b] - FEAS_TOL {
                        -1.0
                    } else if self.x[b] > upper[b] + FEAS_TOL {
                        1.0
                    } else {
                        continue;
                    };
                    for (d, t) in d1.iter_mut().zip(self.row(i)) {
                        *d -= w * t;
                    }
                }
                for &b in &self.basis {
                    d1[b] = 0.0;
                }
                self.choose_entering(&d1, 1e-9, lower, upper, bland)
            } else {
                self.choose_entering(&self.dj, lp.dual_tol, lower, upper, bland)
            };
            let Some((j, dir)) = entering else {
                // Candidate end state: refactor if the updates drifted.
                if verified < 2 && self.since_reinvert > 0 && self.drifted(lp) {
                    verified += 1;
                    self.reinvert(lp)?;
                    continue;
                }
                if phase1 {
                    return Ok(if self.infeasibility(lower, upper) > FEAS_TOL {
                        LpStatus::Infeasible
                    } else {
                        LpStatus::Optimal
                    });
                }
                return Ok(LpStatus::Optimal);
            };
            let (step, leave) = self.ratio_test(j, dir, lower, upper, phase1, bland);
            if !step.is_finite() {
                if phase1 {
                    // cannot happen in exact arithmetic; refactor and retry once
                    if verified < 2 {
                        verified += 1;
                        self.reinvert(lp)?;
                        continue;
                    }
                    return Err(MilpError::Singular);
                }
                return Ok(LpStatus::Unbounded);
            }
            *iterations += 1;
            local += 1;
            if step <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_LIMIT {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            if step > 0.0 {
                self.x[j] += dir * step;
                for i in 0..self.m {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= a * dir * step;
                    }
                }
            }
            match leave {
                None => {
                    self.pos[j] = if dir > 0.0 { Pos::Upper } else { Pos::Lower };
                    self.x[j] = if dir > 0.0 { upper[j] } else { lower[j] };
                }
                Some((r, to_upper)) => {
                    let b = self.basis[r];
                    self.pos[b] = if to_upper { Pos::Upper } else { Pos::Lower };
                    self.x[b] = if to_upper { upper[b] } else { lower[b] };
                    self.pivot(r, j);
                    if self.since_reinvert >= REINVERT_EVERY {
                        self.reinvert(lp)?;
                    }
                }
            }
        }
    }

    /// Structural part of the current point.
    pub fn structural(&self, n: usize) -> Vec<f64> {
        self.x[..n].to_vec()
    }

    pub fn objective(&self, lp: &Lp) -> f64 {
        lp.cost.iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }
}
