//! Moment lift of a [`Qcqp`], its LP and SOCP relaxations over
//! diagonally-dominant cones, constructive PSD completion of a relaxed
//! point, and the reduced dual LP.
//!
//! The lifted matrix `W̄` has index 0 for the constant and `k + 1` for the
//! `k`-th entry of `y = (x, λ)`. Only entries in the support of some row or
//! of the objective, plus the whole diagonal, become program variables;
//! every other entry is zero.

use crate::error::{PoolingError, Result};
use crate::qcqp::{Qcqp, QuadRow};
use conic::ldl::LdlFactor;
use conic::{certify, Certificate, Cone, ConicError, ConicProblem, CscMatrix, Solution, SolverConfig, Status};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelaxKind {
    Lp,
    Socp,
}

impl RelaxKind {
    pub fn name(self) -> &'static str {
        match self {
            RelaxKind::Lp => "lp",
            RelaxKind::Socp => "socp",
        }
    }
}

/// Which off-diagonal entries of `W̄` become variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSet {
    /// Entries used by some row or the objective.
    Support,
    /// Every entry.
    Full,
}

/// `Q̄ • W̄` rows over `y = (x, λ)`: each row reads `Q̄_k • W̄ ≤ 0`, and
/// `W̄₀₀ = 1` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentModel {
    pub n_x: usize,
    pub n_y: usize,
    pub objective: QuadRow,
    pub rows: Vec<QuadRow>,
    entries: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl MomentModel {
    /// Side length of `W̄`.
    pub fn dim(&self) -> usize {
        self.n_y + 1
    }

    /// Variable entries `(i, j)`, `i ≤ j`, in lifted indexing; `(0, 0)` is first.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    /// Lifted coefficients `(entry, coefficient)` of `Q̄ • W̄`.
    pub fn lifted(&self, row: &QuadRow) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(row.quad.len() + row.lin.len() + 1);
        if row.constant != 0.0 {
            out.push((0, row.constant));
        }
        for &(i, v) in &row.lin {
            out.push((self.index[&(0, i + 1)], v));
        }
        for &(i, j, v) in &row.quad {
            out.push((self.index[&(i + 1, j + 1)], 2.0 * v));
        }
        out
    }

    pub fn lifted_value(&self, row: &QuadRow, w: &[f64]) -> f64 {
        self.lifted(row).iter().map(|&(k, c)| c * w[k]).sum()
    }

    /// `(1, y)(1, y)ᵀ` restricted to the variable entries.
    pub fn rank_one(&self, y: &[f64]) -> Vec<f64> {
        let v = |i: usize| if i == 0 { 1.0 } else { y[i - 1] };
        self.entries.iter().map(|&(i, j)| v(i) * v(j)).collect()
    }

    /// The first row of `W̄` without its constant: the relaxed `(x, λ)`.
    pub fn first_row(&self, w: &[f64]) -> Vec<f64> {
        (1..=self.n_y).map(|k| w[self.index[&(0, k)]]).collect()
    }

    /// Dense `W̄`; entries outside the support are zero.
    pub fn dense(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (k, &(i, j)) in self.entries.iter().enumerate() {
            m[(i, j)] = w[k];
            m[(j, i)] = w[k];
        }
        m
    }
}

fn lin_row(coefs: impl IntoIterator<Item = (usize, f64)>, constant: f64) -> QuadRow {
    QuadRow {
        quad: Vec::new(),
        lin: coefs.into_iter().collect(),
        constant,
        tag: None,
    }
}

fn negate(r: &QuadRow) -> QuadRow {
    QuadRow {
        quad: r.quad.iter().map(|&(i, j, v)| (i, j, -v)).collect(),
        lin: r.lin.iter().map(|&(i, v)| (i, -v)).collect(),
        constant: -r.constant,
        tag: r.tag,
    }
}

/// Lifts every row, band and bound of `q` to `Q̄ • W̄ ≤ 0` form.
pub fn lift(q: &Qcqp, pairs: PairSet) -> Result<MomentModel> {
    q.validate()?;
    let n_x = q.n;
    let n_y = n_x + q.num_lambda();
    let mut rows = Vec::new();

    let mut lam = n_x;
    for r in &q.quad_rows {
        let mut up = r.clone();
        up.lin.push((lam, -1.0));
        let mut down = negate(r);
        down.lin.push((lam, -1.0));
        rows.push(up);
        rows.push(down);
        lam += 1;
    }
    for r in &q.lin_eq {
        let coefs = r.coefs.iter().copied();
        let mut up = lin_row(coefs.clone(), -r.rhs);
        up.lin.push((lam, -1.0));
        up.tag = r.tag;
        let mut down = lin_row(coefs.map(|(i, v)| (i, -v)), r.rhs);
        down.lin.push((lam, -1.0));
        down.tag = r.tag;
        rows.push(up);
        rows.push(down);
        lam += 1;
    }
    rows.extend(q.quad_ineq.iter().cloned());
    for r in &q.lin_ineq {
        let mut row = lin_row(r.coefs.iter().copied(), -r.rhs);
        row.tag = r.tag;
        rows.push(row);
    }
    for k in 0..n_x {
        rows.push(lin_row([(k, -1.0)], q.lower[k]));
        if q.upper[k].is_finite() {
            rows.push(lin_row([(k, 1.0)], -q.upper[k]));
        }
    }
    for k in n_x..n_y {
        rows.push(lin_row([(k, -1.0)], 0.0));
    }

    let objective = QuadRow {
        quad: Vec::new(),
        lin: q
            .objective
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (i, c))
            .chain((n_x..n_y).map(|k| (k, q.delta)))
            .collect(),
        constant: q.objective_constant,
        tag: None,
    };

    let mut entries = vec![(0, 0)];
    for k in 1..=n_y {
        entries.push((0, k));
        entries.push((k, k));
    }
    match pairs {
        PairSet::Support => {
            let mut body: Vec<(usize, usize)> = rows
                .iter()
                .flat_map(|r| r.quad.iter().map(|&(i, j, _)| (i + 1, j + 1)))
                .collect();
            body.sort_unstable();
            body.dedup();
            entries.extend(body);
        }
        PairSet::Full => {
            for i in 1..=n_y {
                for j in i + 1..=n_y {
                    entries.push((i, j));
                }
            }
        }
    }
    let index = entries.iter().enumerate().map(|(k, &e)| (e, k)).collect();
    Ok(MomentModel {
        n_x,
        n_y,
        objective,
        rows,
        entries,
        index,
    })
}

/// A relaxation posed for the conic solver. Variable `k` of `problem` is
/// `W̄` entry `model.entries()[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub kind: RelaxKind,
    pub problem: ConicProblem,
}

/// Rows shared by both relaxations: `W̄₀₀ = 1`, every lifted row, and a
/// nonnegative diagonal.
fn common_rows(m: &MomentModel) -> (Vec<(usize, usize, f64)>, Vec<f64>, Vec<Cone>) {
    let mut trip = vec![(0, 0, 1.0)];
    let mut b = vec![1.0];
    let mut row = 1;
    for r in &m.rows {
        for (k, c) in m.lifted(r) {
            trip.push((row, k, c));
        }
        b.push(0.0);
        row += 1;
    }
    for k in 1..=m.n_y {
        trip.push((row, m.index[&(k, k)], -1.0));
        b.push(0.0);
        row += 1;
    }
    (trip, b, vec![Cone::Zero(1), Cone::Nonneg(row - 1)])
}

fn objective_vector(m: &MomentModel) -> Vec<f64> {
    let mut c = vec![0.0; m.entries.len()];
    for (k, v) in m.lifted(&m.objective) {
        c[k] += v;
    }
    c
}

fn off_diagonal(m: &MomentModel) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    m.entries
        .iter()
        .enumerate()
        .filter(|(_, (i, j))| i != j)
        .map(|(k, &(i, j))| (k, m.index[&(i, i)], m.index[&(j, j)]))
}

/// `W̄_ii + W̄_jj ± 2W̄_ij ≥ 0` for every variable off-diagonal entry.
pub fn make_lp(m: &MomentModel) -> Result<ConicProgram> {
    let (mut trip, mut b, mut cones) = common_rows(m);
    let mut row = b.len();
    let start = row;
    for (k, ii, jj) in off_diagonal(m) {
        for sign in [1.0, -1.0] {
            trip.push((row, ii, -1.0));
            trip.push((row, jj, -1.0));
            trip.push((row, k, -2.0 * sign));
            b.push(0.0);
            row += 1;
        }
    }
    if let Some(Cone::Nonneg(d)) = cones.last_mut() {
        *d += row - start;
    }
    let a = CscMatrix::from_triplets(row, m.entries.len(), &trip);
    let problem =
        ConicProblem::new(objective_vector(m), a, b, std::mem::take(&mut cones)).map_err(conic_err("lift"))?;
    Ok(ConicProgram {
        kind: RelaxKind::Lp,
        problem,
    })
}

/// `‖(W̄_ii − W̄_jj, 2W̄_ij)‖ ≤ W̄_ii + W̄_jj` for every variable
/// off-diagonal entry.
pub fn make_socp(m: &MomentModel) -> Result<ConicProgram> {
    let (mut trip, mut b, mut cones) = common_rows(m);
    let mut row = b.len();
    for (k, ii, jj) in off_diagonal(m) {
        trip.extend([(row, ii, -1.0), (row, jj, -1.0)]);
        trip.extend([(row + 1, ii, -1.0), (row + 1, jj, 1.0)]);
        trip.push((row + 2, k, -2.0));
        b.extend([0.0; 3]);
        cones.push(Cone::Soc(3));
        row += 3;
    }
    let a = CscMatrix::from_triplets(row, m.entries.len(), &trip);
    let problem = ConicProblem::new(objective_vector(m), a, b, cones).map_err(conic_err("lift"))?;
    Ok(ConicProgram {
        kind: RelaxKind::Socp,
        problem,
    })
}

pub fn make_program(m: &MomentModel, kind: RelaxKind) -> Result<ConicProgram> {
    match kind {
        RelaxKind::Lp => make_lp(m),
        RelaxKind::Socp => make_socp(m),
    }
}

fn conic_err(phase: &'static str) -> impl Fn(conic::ConicError) -> PoolingError {
    move |source| PoolingError::Conic { phase, source }
}

/// Certification tolerance applied to every relaxation solve.
pub const TOL_CERTIFY: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct RelaxSolution {
    pub kind: RelaxKind,
    pub objective: f64,
    /// Values of the variable entries of `W̄`.
    pub w: Vec<f64>,
    /// Relaxed `x` and `λ` read from the first row of `W̄`.
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub solution: Solution,
    pub certificate: Certificate,
}

/// Solves the relaxation; anything but an optimal status is an error.
pub fn solve_relaxation(m: &MomentModel, kind: RelaxKind, cfg: &SolverConfig) -> Result<RelaxSolution> {
    let prog = make_program(m, kind)?;
    let phase = match kind {
        RelaxKind::Lp => "lp relaxation",
        RelaxKind::Socp => "socp relaxation",
    };
    let solution = conic::solve(&prog.problem, cfg).map_err(conic_err(phase))?;
    if solution.status != Status::Optimal {
        return Err(PoolingError::SolverStatus {
            phase,
            status: solution.status,
        });
    }
    let certificate = certify(&prog.problem, &solution, TOL_CERTIFY);
    let w = solution.x.clone();
    let y = m.first_row(&w);
    Ok(RelaxSolution {
        kind,
        objective: solution.primal_objective,
        x: y[..m.n_x].to_vec(),
        lambda: y[m.n_x..].to_vec(),
        w,
        solution,
        certificate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenRoute {
    /// Full symmetric eigendecomposition.
    Dense,
    /// Bisection on the shift with sparse `LDLᵀ` and a Schur-complement test.
    Sparse,
}

/// Dimension up to which the shift is computed by a dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 500;

#[derive(Debug, Clone)]
pub struct PsdCompletion {
    pub alpha: f64,
    /// Entries of `W̄ + α·diag(0, 1, …, 1)` on the variable support.
    pub w: Vec<f64>,
    /// Smallest eigenvalue of the completed matrix (dense route) or a
    /// certified lower bound on it (sparse route).
    pub min_eig: f64,
    pub objective_change: f64,
    /// Largest change in any lifted row value.
    pub row_change: f64,
    pub route: EigenRoute,
}

/// Shifts the diagonal of `W̄` below its first row and column until the
/// whole matrix is positive semidefinite. Because every lifted row and the
/// objective have a zero diagonal in that block, their values do not move.
pub fn complete_to_psd(m: &MomentModel, w: &[f64]) -> Result<PsdCompletion> {
    if w.len() != m.entries.len() {
        return Err(PoolingError::DimensionMismatch(format!(
            "point has {} entries, model has {}",
            w.len(),
            m.entries.len()
        )));
    }
    let w00 = w[0];
    if !(w00 > 0.0) {
        return Err(PoolingError::Numerical {
            phase: "psd completion",
            msg: format!("corner entry {w00} is not positive"),
        });
    }
    let (alpha, min_eig, route) = if m.n_y <= DENSE_EIGEN_LIMIT {
        let (a, e) = dense_shift(m, w)?;
        (a, e, EigenRoute::Dense)
    } else {
        let (a, e) = sparse_shift(m, w)?;
        (a, e, EigenRoute::Sparse)
    };
    let mut out = w.to_vec();
    for k in 1..=m.n_y {
        out[m.index[&(k, k)]] += alpha;
    }
    let objective_change = (m.lifted_value(&m.objective, &out) - m.lifted_value(&m.objective, w)).abs();
    let row_change = m
        .rows
        .iter()
        .map(|r| (m.lifted_value(r, &out) - m.lifted_value(r, w)).abs())
        .fold(0.0, f64::max);
    Ok(PsdCompletion {
        alpha,
        w: out,
        min_eig,
        objective_change,
        row_change,
        route,
    })
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITERS: usize = 10_000;

fn sym_eigenvalues(a: DMatrix<f64>) -> Result<DVector<f64>> {
    let d = a.nrows();
    nalgebra::linalg::SymmetricEigen::try_new(a, EIGEN_EPS, EIGEN_MAX_ITERS)
        .map(|e| e.eigenvalues)
        .ok_or_else(|| PoolingError::Numerical {
            phase: "psd completion",
            msg: format!("symmetric eigensolve of order {d} did not converge in {EIGEN_MAX_ITERS} iterations"),
        })
}

fn dense_shift(m: &MomentModel, w: &[f64]) -> Result<(f64, f64)> {
    let full = m.dense(w);
    let n = m.n_y;
    let w00 = full[(0, 0)];
    let col = full.view((1, 0), (n, 1)).into_owned();
    let body = full.view((1, 1), (n, n)).into_owned();
    let b = &col * col.transpose() / w00 - body;
    let lmax = sym_eigenvalues(b)?.max();
    let alpha = if lmax > 0.0 { lmax * (1.0 + 1e-12) + 1e-14 } else { 0.0 };
    let mut shifted = full;
    for k in 1..=n {
        shifted[(k, k)] += alpha;
    }
    let min_eig = sym_eigenvalues(shifted)?.min();
    Ok((alpha, min_eig))
}

/// `W + αI` as an upper-triangle CSC pattern plus the slot of each diagonal.
struct ShiftedBody {
    upper: CscMatrix,
    base: Vec<f64>,
    diag_slot: Vec<usize>,
}

impl ShiftedBody {
    fn new(m: &MomentModel, w: &[f64]) -> Self {
        let n = m.n_y;
        let mut trip: Vec<(usize, usize, f64)> = m
            .entries
            .iter()
            .enumerate()
            .filter(|(_, &(i, _))| i > 0)
            .map(|(k, &(i, j))| (i - 1, j - 1, w[k]))
            .collect();
        trip.sort_by_key(|&(i, j, _)| (j, i));
        let upper = CscMatrix::from_triplets(n, n, &trip);
        let mut diag_slot = vec![0; n];
        for j in 0..n {
            for p in upper.colptr[j]..upper.colptr[j + 1] {
                if upper.rowval[p] == j {
                    diag_slot[j] = p;
                }
            }
        }
        let base = upper.nzval.clone();
        Self { upper, base, diag_slot }
    }

    fn values(&self, alpha: f64) -> Vec<f64> {
        let mut v = self.base.clone();
        for &p in &self.diag_slot {
            v[p] += alpha;
        }
        v
    }
}

/// Factors `W + αI` and returns `wᵀ(W + αI)⁻¹w − w₀₀` when the matrix is
/// positive definite.
fn schur_gap(f: &mut LdlFactor, body: &ShiftedBody, col: &[f64], w00: f64, alpha: f64) -> Result<Option<f64>> {
    let values = body.values(alpha);
    // Pivots this small relative to the entries count as singular.
    let floor = 1e-13 * values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    f.set_values(&values);
    // Positive definite factors cannot grow, so a blown-up pivot means an
    // earlier one was already rejected.
    let bumped = match f.factor(0.0, floor, 1.0) {
        Ok(b) => b,
        Err(ConicError::Factorization(_)) => return Ok(None),
        Err(e) => return Err(conic_err("psd completion")(e)),
    };
    if bumped > 0 {
        return Ok(None);
    }
    let mut sol = col.to_vec();
    f.solve(&mut sol);
    let quad: f64 = sol.iter().zip(col).map(|(a, b)| a * b).sum();
    Ok(Some(quad - w00))
}

fn sparse_shift(m: &MomentModel, w: &[f64]) -> Result<(f64, f64)> {
    let n = m.n_y;
    let w00 = w[0];
    let col: Vec<f64> = (1..=n).map(|k| w[m.index[&(0, k)]]).collect();
    let body = ShiftedBody::new(m, w);
    let mut f = LdlFactor::new(&body.upper, &vec![1.0; n]).map_err(conic_err("psd completion"))?;

    let passes = |g: Option<f64>| matches!(g, Some(v) if v <= 0.0);
    if passes(schur_gap(&mut f, &body, &col, w00, 0.0)?) {
        let g = schur_gap(&mut f, &body, &col, w00, 0.0)?.unwrap_or(0.0);
        return Ok((0.0, -g.max(0.0)));
    }

    // Gershgorin bound on λ_max(wwᵀ/w₀₀ − W).
    let abs_col: f64 = col.iter().map(|v| v.abs()).sum();
    let mut radius: Vec<f64> = col.iter().map(|v| v.abs() * abs_col / w00).collect();
    for (k, &(i, j)) in m.entries.iter().enumerate() {
        if i == 0 {
            continue;
        }
        radius[i - 1] += w[k].abs();
        if i != j {
            radius[j - 1] += w[k].abs();
        }
    }
    let mut hi = radius.iter().fold(0.0f64, |a, &b| a.max(b)) * (1.0 + 1e-9) + 1e-12;
    let mut tries = 0;
    while !passes(schur_gap(&mut f, &body, &col, w00, hi)?) {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(PoolingError::Numerical {
                phase: "psd completion",
                msg: "no diagonal shift made the matrix positive semidefinite".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-10 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if passes(schur_gap(&mut f, &body, &col, w00, mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let gap = schur_gap(&mut f, &body, &col, w00, hi)?.expect("accepted shift stays definite");
    Ok((hi, -gap.max(0.0)))
}

/// The reduced dual LP: variables are one multiplier per lifted row and
/// the free corner value `μ`, the last variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDual {
    pub problem: ConicProblem,
    pub n_eta: usize,
}

/// Builds
///
/// ```text
/// maximize μ  s.t.  γ₀ + Σ η_k γ_k − μ ≥ 0,
///                   q₀ + Σ η_k q_k = 0,
///                   Q₀ + Σ η_k Q_k = 0 on every off-diagonal entry,
///                   η ≥ 0
/// ```
///
/// as `minimize −μ`. Valid only for zero-diagonal rows.
pub fn dual_reduce(m: &MomentModel) -> Result<ReducedDual> {
    let check = |r: &QuadRow| {
        if r.quad.iter().any(|&(i, j, v)| i == j && v != 0.0) {
            Err(PoolingError::InvalidParameter(
                "quadratic row has a nonzero diagonal".into(),
            ))
        } else {
            Ok(())
        }
    };
    check(&m.objective)?;
    let n_eta = m.rows.len();
    let mu = n_eta;

    let mut lin_rows: HashMap<usize, usize> = HashMap::new();
    let mut quad_rows: HashMap<(usize, usize), usize> = HashMap::new();
    let mut trip = Vec::new();
    let mut b = Vec::new();
    let mut slot = |key_lin: Option<usize>, key_quad: Option<(usize, usize)>, b: &mut Vec<f64>| -> usize {
        let next = b.len();
        let r = match (key_lin, key_quad) {
            (Some(i), _) => *lin_rows.entry(i).or_insert(next),
            (_, Some(p)) => *quad_rows.entry(p).or_insert(next),
            _ => unreachable!(),
        };
        if r == next {
            b.push(0.0);
        }
        r
    };
    for (k, r) in m.rows.iter().enumerate() {
        check(r)?;
        for &(i, v) in &r.lin {
            let row = slot(Some(i), None, &mut b);
            trip.push((row, k, v));
        }
        for &(i, j, v) in &r.quad {
            let row = slot(None, Some((i, j)), &mut b);
            trip.push((row, k, v));
        }
    }
    for &(i, v) in &m.objective.lin {
        let row = slot(Some(i), None, &mut b);
        b[row] -= v;
    }
    for &(i, j, v) in &m.objective.quad {
        let row = slot(None, Some((i, j)), &mut b);
        b[row] -= v;
    }
    let n_eq = b.len();

    let corner = n_eq;
    trip.push((corner, mu, 1.0));
    for (k, r) in m.rows.iter().enumerate() {
        if r.constant != 0.0 {
            trip.push((corner, k, -r.constant));
        }
    }
    b.push(m.objective.constant);
    for k in 0..n_eta {
        trip.push((corner + 1 + k, k, -1.0));
        b.push(0.0);
    }
    let rows = b.len();
    let mut c = vec![0.0; n_eta + 1];
    c[mu] = -1.0;
    let a = CscMatrix::from_triplets(rows, n_eta + 1, &trip);
    let cones = vec![Cone::Zero(n_eq), Cone::Nonneg(n_eta + 1)];
    let problem = ConicProblem::new(c, a, b, cones).map_err(conic_err("reduced dual"))?;
    Ok(ReducedDual { problem, n_eta })
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub mu: f64,
    pub eta: Vec<f64>,
    pub solution: Solution,
    pub certificate: Certificate,
}

pub fn solve_reduced_dual(d: &ReducedDual, cfg: &SolverConfig) -> Result<DualSolution> {
    let solution = conic::solve(&d.problem, cfg).map_err(conic_err("reduced dual"))?;
    if solution.status != Status::Optimal {
        return Err(PoolingError::SolverStatus {
            phase: "reduced dual",
            status: solution.status,
        });
    }
    let certificate = certify(&d.problem, &solution, TOL_CERTIFY);
    Ok(DualSolution {
        mu: -solution.primal_objective,
        eta: solution.x[..d.n_eta].to_vec(),
        solution,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcqp::{eval, LinRow};

    /// `min −x₁ − x₂  s.t.  x₁x₂ ≤ 1,  0 ≤ x ≤ 2`.
    pub(crate) fn tiny() -> Qcqp {
        Qcqp {
            n: 2,
            objective: vec![-1.0, -1.0],
            objective_constant: 0.0,
            quad_rows: vec![],
            lin_eq: vec![],
            quad_ineq: vec![QuadRow {
                quad: vec![(0, 1, 0.5)],
                lin: vec![],
                constant: -1.0,
                tag: None,
            }],
            lin_ineq: vec![],
            lower: vec![0.0; 2],
            upper: vec![2.0; 2],
            delta: 1.0,
        }
    }

    fn linear_only() -> Qcqp {
        Qcqp {
            n: 1,
            objective: vec![1.0],
            objective_constant: 0.0,
            quad_rows: vec![],
            lin_eq: vec![],
            quad_ineq: vec![],
            lin_ineq: vec![LinRow {
                coefs: vec![(0, 1.0)],
                rhs: 1.0,
                tag: None,
            }],
            lower: vec![-3.0],
            upper: vec![f64::INFINITY],
            delta: 1.0,
        }
    }

    #[test]
    fn pure_linear_lift() {
        let m = lift(&linear_only(), PairSet::Support).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.entries(), &[(0, 0), (0, 1), (1, 1)]);
        assert_eq!(m.lifted(&m.objective), vec![(1, 1.0)]);
        // x ≤ 1 reads W̄₀₁ − W̄₀₀ ≤ 0
        assert_eq!(m.lifted(&m.rows[0]), vec![(0, -1.0), (1, 1.0)]);
    }

    #[test]
    fn bilinear_row_reads_one_entry() {
        let m = lift(&tiny(), PairSet::Support).unwrap();
        let e = m.entry(1, 2).unwrap();
        assert_eq!(m.lifted(&m.rows[0]), vec![(0, -1.0), (e, 1.0)]);
    }

    #[test]
    fn rank_one_point_reproduces_eval() {
        let q = tiny();
        let m = lift(&q, PairSet::Full).unwrap();
        let x = [0.7, 1.3];
        let w = m.rank_one(&x);
        let e = eval(&q, &x, &[]).unwrap();
        assert!((m.lifted_value(&m.objective, &w) - e.objective).abs() < 1e-15);
        assert!((m.lifted_value(&m.rows[0], &w) - e.quad_ineq[0]).abs() < 1e-15);
    }

    #[test]
    fn lp_rows_examples() {
        let m = lift(&tiny(), PairSet::Support).unwrap();
        let lp = make_lp(&m).unwrap();
        let e = m.entry(1, 2).unwrap();
        let (i, j) = (m.entry(1, 1).unwrap(), m.entry(2, 2).unwrap());
        let mut w = m.rank_one(&[1.0, 1.0]);
        let slack = |w: &[f64]| {
            let ax = lp.problem.a.mul_vec(w);
            lp.problem.b.iter().zip(ax).map(|(b, a)| b - a).collect::<Vec<_>>()
        };
        w[i] = 2.0;
        w[j] = 2.0;
        w[e] = 1.0;
        let s = slack(&w);
        let last = s.len();
        assert!(s[last - 2] >= 0.0 && s[last - 1] >= 0.0);
        w[i] = 0.0;
        w[j] = 0.0;
        let s = slack(&w);
        assert!(s[last - 2].min(s[last - 1]) < 0.0);
    }

    #[test]
    fn soc_blocks_examples() {
        let norm = |ii: f64, jj: f64, ij: f64| ((ii - jj).powi(2) + (2.0 * ij).powi(2)).sqrt() - (ii + jj);
        assert_eq!(norm(1.0, 1.0, 1.0), 0.0);
        assert!(norm(1.0, 0.0, 0.1) > 0.0);
    }

    fn solve_tiny(kind: RelaxKind) -> RelaxSolution {
        let m = lift(&tiny(), PairSet::Support).unwrap();
        solve_relaxation(&m, kind, &SolverConfig::default()).unwrap()
    }

    /// Vertex enumeration over the lifted LP: the bilinear entry is free
    /// inside `|W₁₂| ≤ (W₁₁ + W₂₂)/2` with free diagonals, so the optimum
    /// is the box corner `x = (2, 2)`.
    #[test]
    fn tiny_relaxations_agree_with_enumeration() {
        let corners = [[0.0, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 2.0]];
        let expect = corners.iter().map(|c| -c[0] - c[1]).fold(f64::INFINITY, f64::min);
        let lp = solve_tiny(RelaxKind::Lp);
        let socp = solve_tiny(RelaxKind::Socp);
        assert!((lp.objective - expect).abs() < 1e-7, "{}", lp.objective);
        assert!((socp.objective - lp.objective).abs() < 1e-6);
        assert!(lp.certificate.passed(), "{:?}", lp.certificate.failures());
        assert!(socp.certificate.passed(), "{:?}", socp.certificate.failures());
    }

    #[test]
    fn psd_completion_examples() {
        let q = linear_only();
        let m = lift(&q, PairSet::Support).unwrap();
        // w₀₀ = 1, w = 1, W = 0
        let c = complete_to_psd(&m, &[1.0, 1.0, 0.0]).unwrap();
        assert!((c.alpha - 1.0).abs() < 1e-9);
        assert!(c.min_eig >= -1e-12);
        assert_eq!(c.objective_change, 0.0);
        // already rank one
        let w = m.rank_one(&[0.5]);
        let c = complete_to_psd(&m, &w).unwrap();
        assert!(c.alpha <= 1e-12);
    }

    #[test]
    fn completed_lp_optimum_is_psd() {
        let m = lift(&tiny(), PairSet::Support).unwrap();
        let lp = solve_relaxation(&m, RelaxKind::Lp, &SolverConfig::default()).unwrap();
        let c = complete_to_psd(&m, &lp.w).unwrap();
        let eig = sym_eigenvalues(m.dense(&c.w)).unwrap().min();
        assert!(eig >= -1e-8, "{eig}");
        assert!(c.objective_change <= 1e-10 * (1.0 + lp.objective.abs()));
    }

    #[test]
    fn sparse_route_matches_dense_route() {
        let m = lift(&tiny(), PairSet::Full).unwrap();
        let lp = solve_relaxation(&m, RelaxKind::Lp, &SolverConfig::default()).unwrap();
        let (a_dense, _) = dense_shift(&m, &lp.w).unwrap();
        let (a_sparse, bound) = sparse_shift(&m, &lp.w).unwrap();
        assert!(
            (a_dense - a_sparse).abs() <= 1e-8 * (1.0 + a_dense),
            "{a_dense} vs {a_sparse}"
        );
        assert!(bound >= -1e-8);
    }

    #[test]
    fn reduced_dual_matches_primal() {
        for q in [tiny(), linear_only()] {
            let m = lift(&q, PairSet::Support).unwrap();
            let lp = solve_relaxation(&m, RelaxKind::Lp, &SolverConfig::default()).unwrap();
            let d = solve_reduced_dual(&dual_reduce(&m).unwrap(), &SolverConfig::default()).unwrap();
            assert!(
                (d.mu - lp.objective).abs() <= 1e-6 * (1.0 + lp.objective.abs()),
                "{} {}",
                d.mu,
                lp.objective
            );
        }
    }

    #[test]
    fn bilinear_multiplier_is_forced_to_zero() {
        let m = lift(&tiny(), PairSet::Support).unwrap();
        let d = solve_reduced_dual(&dual_reduce(&m).unwrap(), &SolverConfig::default()).unwrap();
        assert!(d.eta[0].abs() < 1e-7);
    }

    #[test]
    fn diagonal_entries_are_rejected() {
        let mut m = lift(&tiny(), PairSet::Support).unwrap();
        m.rows[0].quad.push((0, 0, 1.0));
        assert!(dual_reduce(&m).is_err());
    }
}
