use crate::cones::Cone;
use crate::sparse::CscMatrix;
use crate::ConicError;

/// A conic program in standard form:
///
/// ```text
/// minimize    cᵀx + offset
/// subject to  A x + s = b,   s ∈ K
/// ```
///
/// where `K` is the product of `cones`, taken in order over the rows of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub offset: f64,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn new(c: Vec<f64>, a: CscMatrix, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self, ConicError> {
        let p = Self {
            c,
            offset: 0.0,
            a,
            b,
            cones,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        if self.a.ncols != self.c.len() {
            return Err(ConicError::DimensionMismatch(format!(
                "A has {} columns but c has length {}",
                self.a.ncols,
                self.c.len()
            )));
        }
        if self.a.nrows != self.b.len() || cone_rows != self.b.len() {
            return Err(ConicError::DimensionMismatch(format!(
                "A has {} rows, b has length {}, cones cover {} rows",
                self.a.nrows,
                self.b.len(),
                cone_rows
            )));
        }
        for c in &self.cones {
            if let Cone::Soc(d) = c {
                if *d < 2 {
                    return Err(ConicError::InvalidCone(format!("second-order cone of dimension {d}")));
                }
            }
        }
        let finite = self.c.iter().chain(&self.b).chain(&self.a.nzval).all(|v| v.is_finite());
        if !finite {
            return Err(ConicError::InvalidData("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Objective value `cᵀx + offset`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        crate::sparse::dot(&self.c, x) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol_gap: f64,
    pub tol_feas_primal: f64,
    pub tol_feas_dual: f64,
    pub tol_infeas: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the boundary taken by each step.
    pub step_fraction: f64,
    pub static_reg: f64,
    pub dyn_reg_eps: f64,
    pub dyn_reg_delta: f64,
    pub refine_passes: usize,
    pub refine_tol: f64,
    pub equilibrate: bool,
    pub equilibrate_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_feas_primal: 1e-8,
            tol_feas_dual: 1e-8,
            tol_infeas: 1e-8,
            max_iters: 200,
            step_fraction: 0.99,
            static_reg: 1e-11,
            dyn_reg_eps: 1e-13,
            dyn_reg_delta: 2e-7,
            refine_passes: 3,
            refine_tol: 1e-8,
            equilibrate: true,
            equilibrate_iters: 15,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConicError> {
        let tols = [self.tol_gap, self.tol_feas_primal, self.tol_feas_dual, self.tol_infeas];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(ConicError::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(ConicError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(ConicError::InvalidConfig("step_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Residual norms of the returned point, relative to problem data.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    /// `|pobj - dobj| / (1 + |pobj|)`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Dual multipliers, one per row of `A`.
    pub z: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    /// `sᵀz` at the returned point.
    pub complementarity: f64,
    /// Free-form notes on how the solve ended (step failures, stagnation).
    pub diagnostics: Vec<String>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
