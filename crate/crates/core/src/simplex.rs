//! Dense bounded-variable dual simplex.
//!
//! Every column, including the logical column attached to each row, has
//! finite bounds. Any basis is then dual feasible as soon as each nonbasic
//! column sits at the bound its reduced cost points to, so no phase one is
//! needed, and tightening bounds (as branch and bound does) only calls for
//! more dual iterations on the current tableau.

use crate::error::{PoolingError, Result};
use conic::{Cone, ConicProblem, CscMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coefs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min cᵀx` subject to sparse rows and finite bounds `l ≤ x ≤ u`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(LpRow { coefs, sense, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cost.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(PoolingError::DimensionMismatch(
                "bound vectors do not match the cost vector".into(),
            ));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if !l.is_finite() || !u.is_finite() || !self.cost[j].is_finite() {
                return Err(PoolingError::InvalidParameter(format!(
                    "variable {j} has a non-finite bound or cost"
                )));
            }
            if l > u {
                return Err(PoolingError::InvalidParameter(format!(
                    "variable {j} has lower bound {l} > upper {u}"
                )));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() || r.coefs.iter().any(|&(j, v)| j >= n || !v.is_finite()) {
                return Err(PoolingError::InvalidParameter(format!(
                    "row {i} has a bad index or value"
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in &self.rows {
            let act: f64 = r.coefs.iter().map(|&(j, v)| v * x[j]).sum();
            let viol = match r.sense {
                Sense::Le => act - r.rhs,
                Sense::Ge => r.rhs - act,
                Sense::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// The same LP in conic standard form, with bounds written as rows, so
    /// that it can be solved by the interior-point method as a cross-check.
    pub fn to_conic(&self) -> ConicProblem {
        let n = self.num_vars();
        let mut trip = Vec::new();
        let mut b = Vec::new();
        let mut row = 0;
        for r in self.rows.iter().filter(|r| r.sense == Sense::Eq) {
            for &(j, v) in &r.coefs {
                trip.push((row, j, v));
            }
            b.push(r.rhs);
            row += 1;
        }
        let n_eq = row;
        for r in self.rows.iter().filter(|r| r.sense != Sense::Eq) {
            let s = if r.sense == Sense::Le { 1.0 } else { -1.0 };
            for &(j, v) in &r.coefs {
                trip.push((row, j, s * v));
            }
            b.push(s * r.rhs);
            row += 1;
        }
        for j in 0..n {
            trip.push((row, j, 1.0));
            b.push(self.upper[j]);
            trip.push((row + 1, j, -1.0));
            b.push(-self.lower[j]);
            row += 2;
        }
        let a = CscMatrix::from_triplets(row, n, &trip);
        let mut cones = Vec::new();
        if n_eq > 0 {
            cones.push(Cone::Zero(n_eq));
        }
        if row > n_eq {
            cones.push(Cone::Nonneg(row - n_eq));
        }
        ConicProblem::new(self.cost.clone(), a, b, cones).expect("rows and cones are consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

const PIVOT_TOL: f64 = 1e-7;
const DROP_TOL: f64 = 1e-14;
/// Logical-basis restarts allowed over the solver's lifetime.
const MAX_RESETS: usize = 1000;

/// Dual simplex state on a dense tableau `B⁻¹[A I]`.
#[derive(Debug, Clone)]
pub struct DualSimplex {
    m: usize,
    n: usize,
    ncol: usize,
    tab: Vec<f64>,
    beta: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    xb: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    empty_row_infeasible: bool,
    tol_primal: f64,
    tol_dual: f64,
    pub max_iters: usize,
    iterations: usize,
    pivots_since_refactor: usize,
    resets: usize,
}

impl DualSimplex {
    pub fn new(p: &LpProblem) -> Result<Self> {
        p.validate()?;
        let (m, n) = (p.rows.len(), p.num_vars());
        let ncol = n + m;
        let mut tab = vec![0.0; m * ncol];
        let mut cols = vec![Vec::new(); n];
        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        let mut empty_row_infeasible = false;
        let mut scale = 1.0f64;
        for (i, r) in p.rows.iter().enumerate() {
            let (mut lo_act, mut hi_act) = (0.0, 0.0);
            for &(j, v) in &r.coefs {
                tab[i * ncol + j] += v;
                cols[j].push((i, v));
                if v > 0.0 {
                    lo_act += v * p.lower[j];
                    hi_act += v * p.upper[j];
                } else {
                    lo_act += v * p.upper[j];
                    hi_act += v * p.lower[j];
                }
            }
            tab[i * ncol + n + i] = 1.0;
            // The logical column is rhs − activity.
            let (l, u) = match r.sense {
                Sense::Le => (0.0, r.rhs - lo_act),
                Sense::Ge => (r.rhs - hi_act, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            if l > u + 1e-9 * (1.0 + r.rhs.abs()) {
                empty_row_infeasible = true;
            }
            lower.push(l);
            upper.push(u.max(l));
            scale = scale.max(r.rhs.abs());
        }
        for j in 0..n {
            scale = scale.max(p.lower[j].abs()).max(p.upper[j].abs());
        }
        let mut cost = p.cost.clone();
        cost.resize(ncol, 0.0);
        let cmax = cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let d = cost.clone();
        let rhs: Vec<f64> = p.rows.iter().map(|r| r.rhs).collect();
        let mut is_basic = vec![false; ncol];
        for i in 0..m {
            is_basic[n + i] = true;
        }
        Ok(Self {
            m,
            n,
            ncol,
            tab,
            beta: rhs.clone(),
            cost,
            d,
            lower,
            upper,
            basis: (n..ncol).collect(),
            is_basic,
            at_upper: vec![false; ncol],
            xb: vec![0.0; m],
            cols,
            rhs,
            empty_row_infeasible,
            tol_primal: 1e-9 * scale.max(1.0).min(1e3),
            tol_dual: 1e-11 * cmax,
            max_iters: 50 * (m + n) + 1000,
            iterations: 0,
            pivots_since_refactor: 0,
            resets: 0,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// Replaces the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        assert!(j < self.n, "bounds of a logical column are derived");
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            self.lower[j]
        }
    }

    /// Moves each nonbasic column to the bound its reduced cost points to,
    /// updating the basic values for every flip.
    fn align_nonbasic(&mut self) {
        let ncol = self.ncol;
        for j in 0..ncol {
            if self.is_basic[j] {
                continue;
            }
            let flip = if self.d[j] < -self.tol_dual {
                !self.at_upper[j]
            } else {
                self.d[j] > self.tol_dual && self.at_upper[j]
            };
            if !flip {
                continue;
            }
            let before = self.nonbasic_value(j);
            self.at_upper[j] = !self.at_upper[j];
            let step = self.nonbasic_value(j) - before;
            if step != 0.0 {
                for r in 0..self.m {
                    let a = self.tab[r * ncol + j];
                    if a != 0.0 {
                        self.xb[r] -= a * step;
                    }
                }
            }
        }
    }

    fn compute_xb(&mut self) {
        let mut xn = vec![0.0; self.ncol];
        let mut nz = Vec::new();
        for j in 0..self.ncol {
            if !self.is_basic[j] {
                let v = self.nonbasic_value(j);
                if v != 0.0 {
                    xn[j] = v;
                    nz.push(j);
                }
            }
        }
        for r in 0..self.m {
            let row = &self.tab[r * self.ncol..(r + 1) * self.ncol];
            let s: f64 = nz.iter().map(|&j| row[j] * xn[j]).sum();
            self.xb[r] = self.beta[r] - s;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let ncol = self.ncol;
        let alpha = self.tab[r * ncol + q];
        let mut prow: Vec<f64> = self.tab[r * ncol..(r + 1) * ncol].iter().map(|v| v / alpha).collect();
        prow[q] = 1.0;
        let beta_r = self.beta[r] / alpha;
        let nz: Vec<usize> = (0..ncol).filter(|&k| prow[k].abs() > DROP_TOL).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * ncol + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * ncol..(i + 1) * ncol];
            for &k in &nz {
                let v = row[k] - f * prow[k];
                row[k] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
            self.beta[i] -= f * beta_r;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &k in &nz {
                self.d[k] -= dq * prow[k];
            }
        }
        self.d[q] = 0.0;
        self.tab[r * ncol..(r + 1) * ncol].copy_from_slice(&prow);
        self.beta[r] = beta_r;
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.pivots_since_refactor += 1;
    }

    /// Returns to the all-logical basis. It is the identity, and with every
    /// column boxed it is dual feasible once nonbasics are aligned.
    fn reset_basis(&mut self) {
        let (m, n, ncol) = (self.m, self.n, self.ncol);
        self.tab.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            for &(i, v) in &self.cols[j] {
                self.tab[i * ncol + j] += v;
            }
        }
        for i in 0..m {
            self.tab[i * ncol + n + i] = 1.0;
        }
        self.beta.copy_from_slice(&self.rhs);
        self.d.copy_from_slice(&self.cost);
        self.is_basic.iter_mut().for_each(|b| *b = false);
        for i in 0..m {
            self.is_basic[n + i] = true;
            self.basis[i] = n + i;
        }
        self.pivots_since_refactor = 0;
        self.resets += 1;
    }

    /// Recomputes the tableau, basic values and reduced costs from the
    /// original data for the current basis, falling back to the logical
    /// basis when the current one is numerically singular.
    fn refactor(&mut self) -> Result<()> {
        if self.resets > MAX_RESETS {
            return Err(PoolingError::Numerical {
                phase: "simplex",
                msg: "basis matrix is singular".into(),
            });
        }
        if !self.try_refactor() {
            self.reset_basis();
        }
        Ok(())
    }

    fn try_refactor(&mut self) -> bool {
        use nalgebra::DMatrix;
        let (m, n, ncol) = (self.m, self.n, self.ncol);
        if m == 0 {
            return true;
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (k, &col) in self.basis.iter().enumerate() {
            if col < n {
                for &(i, v) in &self.cols[col] {
                    b[(i, k)] += v;
                }
            } else {
                b[(col - n, k)] = 1.0;
            }
        }
        let lu = b.lu();
        let mut full = DMatrix::<f64>::zeros(m, ncol + 1);
        for j in 0..n {
            for &(i, v) in &self.cols[j] {
                full[(i, j)] += v;
            }
        }
        for i in 0..m {
            full[(i, n + i)] = 1.0;
            full[(i, ncol)] = self.rhs[i];
        }
        let Some(solved) = lu.solve(&full) else {
            return false;
        };
        if solved.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return false;
        }
        for r in 0..m {
            for j in 0..ncol {
                let v = solved[(r, j)];
                self.tab[r * ncol + j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            self.beta[r] = solved[(r, ncol)];
        }
        for j in 0..ncol {
            let mut dj = self.cost[j];
            for r in 0..m {
                dj -= self.cost[self.basis[r]] * self.tab[r * ncol + j];
            }
            self.d[j] = if self.is_basic[j] { 0.0 } else { dj };
        }
        self.pivots_since_refactor = 0;
        true
    }

    fn primal_violation(&self, r: usize) -> f64 {
        let k = self.basis[r];
        (self.lower[k] - self.xb[r]).max(self.xb[r] - self.upper[k])
    }

    fn bound_tol(&self, k: usize) -> f64 {
        self.tol_primal * (1.0 + self.lower[k].abs().max(self.upper[k].abs()).min(1e6))
    }

    /// Runs dual iterations until the current bounds are met.
    pub fn solve(&mut self) -> Result<LpStatus> {
        if self.empty_row_infeasible || (0..self.n).any(|j| self.lower[j] > self.upper[j]) {
            return Ok(LpStatus::Infeasible);
        }
        let mut refactored_at_end = false;
        let start = self.iterations;
        self.compute_xb();
        loop {
            self.align_nonbasic();
            let mut leave = None;
            let mut worst = 0.0;
            for r in 0..self.m {
                let v = self.primal_violation(r);
                let tol = self.bound_tol(self.basis[r]);
                if v > tol {
                    let scaled = v
                        / (1.0
                            + self.lower[self.basis[r]]
                                .abs()
                                .max(self.upper[self.basis[r]].abs())
                                .min(1e6));
                    if scaled > worst {
                        worst = scaled;
                        leave = Some(r);
                    }
                }
            }
            let Some(r) = leave else {
                if self.pivots_since_refactor > 0
                    && !refactored_at_end
                    && self.residual() > 1e-9 * (1.0 + self.rhs_scale())
                {
                    self.refactor()?;
                    self.compute_xb();
                    refactored_at_end = true;
                    continue;
                }
                return Ok(LpStatus::Optimal);
            };
            if self.iterations - start >= self.max_iters {
                return Ok(LpStatus::IterLimit);
            }
            self.iterations += 1;
            let k = self.basis[r];
            let increase = self.xb[r] < self.lower[k];
            let row = &self.tab[r * self.ncol..(r + 1) * self.ncol];

            // Harris two-pass ratio test.
            let eligible = |j: usize| -> Option<f64> {
                if self.is_basic[j] || self.lower[j] == self.upper[j] {
                    return None;
                }
                let a = row[j];
                let ok = if increase {
                    (!self.at_upper[j] && a < -PIVOT_TOL) || (self.at_upper[j] && a > PIVOT_TOL)
                } else {
                    (!self.at_upper[j] && a > PIVOT_TOL) || (self.at_upper[j] && a < -PIVOT_TOL)
                };
                ok.then_some(a)
            };
            let mut bound = f64::INFINITY;
            for j in 0..self.ncol {
                if let Some(a) = eligible(j) {
                    bound = bound.min((self.d[j].abs() + self.tol_dual) / a.abs());
                }
            }
            if bound == f64::INFINITY {
                return Ok(LpStatus::Infeasible);
            }
            let mut enter = None;
            let mut best = 0.0;
            for j in 0..self.ncol {
                if let Some(a) = eligible(j) {
                    if self.d[j].abs() / a.abs() <= bound && a.abs() > best {
                        best = a.abs();
                        enter = Some(j);
                    }
                }
            }
            let q = enter.expect("the ratio bound is attained");
            let target = if increase { self.lower[k] } else { self.upper[k] };
            let theta = (self.xb[r] - target) / self.tab[r * self.ncol + q];
            let entering = self.nonbasic_value(q) + theta;
            for i in 0..self.m {
                let a = self.tab[i * self.ncol + q];
                if i != r && a != 0.0 {
                    self.xb[i] -= theta * a;
                }
            }
            self.xb[r] = entering;
            self.at_upper[k] = !increase;
            self.pivot(r, q);
            if self.pivots_since_refactor >= 4 * self.m.max(50) {
                self.refactor()?;
                self.compute_xb();
            }
        }
    }

    fn rhs_scale(&self) -> f64 {
        self.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn full_x(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.ncol).map(|j| self.nonbasic_value(j)).collect();
        for (r, &k) in self.basis.iter().enumerate() {
            x[k] = self.xb[r];
        }
        x
    }

    /// Largest row residual of the current point against the original rows.
    fn residual(&self) -> f64 {
        let x = self.full_x();
        let mut act: Vec<f64> = (0..self.m).map(|i| x[self.n + i]).collect();
        for j in 0..self.n {
            for &(i, v) in &self.cols[j] {
                act[i] += v * x[j];
            }
        }
        act.iter().zip(&self.rhs).fold(0.0f64, |a, (v, b)| a.max((v - b).abs()))
    }

    /// Refactors the current basis and re-solves, removing the drift that
    /// product-form updates accumulate.
    pub fn polish(&mut self) -> Result<LpStatus> {
        if self.pivots_since_refactor > 0 {
            self.refactor()?;
        }
        self.solve()
    }

    /// Structural part of the current primal point.
    pub fn x(&self) -> Vec<f64> {
        let mut x = self.full_x();
        x.truncate(self.n);
        x
    }

    pub fn objective(&self) -> f64 {
        self.x().iter().zip(&self.cost).map(|(a, b)| a * b).sum()
    }
}

/// One-shot solve.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    let mut s = DualSimplex::new(p)?;
    let status = s.solve()?;
    let x = s.x();
    Ok(LpSolution {
        status,
        objective: p.objective(&x),
        x,
        iterations: s.iterations(),
    })
}
