//! Homogeneous self-dual embedding, Mehrotra predictor-corrector with
//! Nesterov–Todd scaling.
//!
//! The embedding solved is
//!
//! ```text
//! Aᵀz + cτ        = 0
//! Ax + s − bτ     = 0
//! cᵀx + bᵀz + κ   = 0,     s ∈ K, z ∈ K*, τ, κ ≥ 0
//! ```
//!
//! Optimal points are recovered as `(x, s, z) / τ`; infeasibility
//! certificates appear as `τ → 0` with `bᵀz < 0` or `cᵀx < 0`.

use crate::cones::{Cone, ConeSet};
use crate::ldl::{sym_upper_mul, LdlFactor};
use crate::problem::{ConicProblem, Residuals, Solution, SolverConfig, Status};
use crate::sparse::{dot, norm_inf, CscMatrix};
use crate::ConicError;

pub fn solve(problem: &ConicProblem, cfg: &SolverConfig) -> Result<Solution, ConicError> {
    problem.validate()?;
    cfg.validate()?;
    if problem.num_vars() == 0 && problem.num_rows() == 0 {
        return Err(ConicError::EmptyProgram);
    }
    let reduced = Presolve::new(problem, cfg.tol_feas_primal);
    if let Some(early) = reduced.early_exit(problem) {
        return Ok(early);
    }
    let inner = if reduced.problem.num_vars() == 0 && reduced.problem.num_rows() == 0 {
        trivial_solution()
    } else {
        Engine::new(&reduced.problem, cfg)?.run()
    };
    Ok(reduced.restore(problem, inner))
}

fn trivial_solution() -> Solution {
    Solution {
        status: Status::Optimal,
        x: vec![],
        s: vec![],
        z: vec![],
        primal_objective: 0.0,
        dual_objective: 0.0,
        iterations: 0,
        residuals: Residuals::default(),
        complementarity: 0.0,
        diagnostics: vec![],
    }
}

/// Removal of empty columns and of empty rows in zero/nonnegative cones.
struct Presolve {
    problem: ConicProblem,
    kept_cols: Vec<usize>,
    kept_rows: Vec<usize>,
    infeasible: Option<Status>,
}

impl Presolve {
    fn new(p: &ConicProblem, tol: f64) -> Self {
        let col_empty: Vec<bool> = (0..p.num_vars()).map(|j| p.a.colptr[j] == p.a.colptr[j + 1]).collect();
        let row_counts = p.a.row_counts();
        let mut infeasible = None;
        if col_empty.iter().zip(&p.c).any(|(&e, &c)| e && c != 0.0) {
            infeasible = Some(Status::DualInfeasible);
        }

        let mut kept_rows = Vec::with_capacity(p.num_rows());
        let mut cones = Vec::with_capacity(p.cones.len());
        let mut row = 0;
        for cone in &p.cones {
            let d = cone.dim();
            match cone {
                Cone::Soc(_) => {
                    kept_rows.extend(row..row + d);
                    cones.push(*cone);
                }
                Cone::Zero(_) | Cone::Nonneg(_) => {
                    let mut kept = 0;
                    for i in row..row + d {
                        if row_counts[i] > 0 {
                            kept_rows.push(i);
                            kept += 1;
                        } else {
                            let ok = match cone {
                                Cone::Zero(_) => p.b[i].abs() <= tol * (1.0 + p.b[i].abs()),
                                _ => p.b[i] >= -tol,
                            };
                            if !ok {
                                infeasible = Some(Status::PrimalInfeasible);
                            }
                        }
                    }
                    if kept > 0 {
                        cones.push(match cone {
                            Cone::Zero(_) => Cone::Zero(kept),
                            _ => Cone::Nonneg(kept),
                        });
                    }
                }
            }
            row += d;
        }
        let kept_cols: Vec<usize> = (0..p.num_vars()).filter(|&j| !col_empty[j]).collect();

        let mut row_map = vec![usize::MAX; p.num_rows()];
        for (new, &old) in kept_rows.iter().enumerate() {
            row_map[old] = new;
        }
        let mut triplets = Vec::with_capacity(p.a.nnz());
        for (new_j, &j) in kept_cols.iter().enumerate() {
            for (i, v) in p.a.col(j) {
                triplets.push((row_map[i], new_j, v));
            }
        }
        let a = CscMatrix::from_triplets(kept_rows.len(), kept_cols.len(), &triplets);
        let problem = ConicProblem {
            c: kept_cols.iter().map(|&j| p.c[j]).collect(),
            offset: 0.0,
            a,
            b: kept_rows.iter().map(|&i| p.b[i]).collect(),
            cones,
        };
        Self {
            problem,
            kept_cols,
            kept_rows,
            infeasible,
        }
    }

    fn early_exit(&self, p: &ConicProblem) -> Option<Solution> {
        let status = self.infeasible?;
        let mut sol = trivial_solution();
        sol.status = status;
        sol.x = vec![0.0; p.num_vars()];
        sol.s = p.b.clone();
        sol.z = vec![0.0; p.num_rows()];
        sol.primal_objective = f64::NAN;
        sol.dual_objective = f64::NAN;
        sol.diagnostics.push("detected by presolve".into());
        Some(sol)
    }

    fn restore(&self, p: &ConicProblem, inner: Solution) -> Solution {
        let mut x = vec![0.0; p.num_vars()];
        for (k, &j) in self.kept_cols.iter().enumerate() {
            x[j] = inner.x[k];
        }
        let mut s = p.b.clone();
        let mut z = vec![0.0; p.num_rows()];
        for (k, &i) in self.kept_rows.iter().enumerate() {
            s[i] = inner.s[k];
            z[i] = inner.z[k];
        }
        Solution {
            x,
            s,
            z,
            primal_objective: inner.primal_objective + p.offset,
            dual_objective: inner.dual_objective + p.offset,
            ..inner
        }
    }
}

/// Ruiz equilibration factors: `Ã = diag(e) A diag(d)`, `c̃ = cscale·diag(d) c`.
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    cscale: f64,
}

fn equilibrate(a: &mut CscMatrix, c: &mut [f64], b: &mut [f64], cones: &ConeSet, cfg: &SolverConfig) -> Scaling {
    let (m, n) = (a.nrows, a.ncols);
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let (lo, hi) = (1e-4, 1e4);
    if cfg.equilibrate {
        for _ in 0..cfg.equilibrate_iters {
            let mut colmax = vec![0.0f64; n];
            let mut rowmax = vec![0.0f64; m];
            for j in 0..n {
                for p in a.colptr[j]..a.colptr[j + 1] {
                    let v = a.nzval[p].abs();
                    colmax[j] = colmax[j].max(v);
                    rowmax[a.rowval[p]] = rowmax[a.rowval[p]].max(v);
                }
            }
            // Second-order cone rows must share one factor.
            for (cone, r) in cones.cones.iter().zip(&cones.ranges) {
                if let Cone::Soc(_) = cone {
                    let mx = rowmax[r.clone()].iter().fold(0.0f64, |x, &y| x.max(y));
                    rowmax[r.clone()].iter_mut().for_each(|v| *v = mx);
                }
            }
            let dc: Vec<f64> = colmax
                .iter()
                .map(|&v| if v > 0.0 { (1.0 / v.sqrt()).clamp(lo, hi) } else { 1.0 })
                .collect();
            let er: Vec<f64> = rowmax
                .iter()
                .map(|&v| if v > 0.0 { (1.0 / v.sqrt()).clamp(lo, hi) } else { 1.0 })
                .collect();
            for j in 0..n {
                for p in a.colptr[j]..a.colptr[j + 1] {
                    a.nzval[p] *= dc[j] * er[a.rowval[p]];
                }
            }
            for j in 0..n {
                d[j] = (d[j] * dc[j]).clamp(lo, hi);
            }
            for i in 0..m {
                e[i] = (e[i] * er[i]).clamp(lo, hi);
            }
        }
        // Recompute A from the clamped cumulative factors so that scaling and
        // unscaling agree exactly.
    }
    for j in 0..n {
        c[j] *= d[j];
    }
    for i in 0..m {
        b[i] *= e[i];
    }
    let cmax = norm_inf(c);
    let cscale = if cfg.equilibrate && cmax > 0.0 {
        (1.0 / cmax).clamp(lo, hi)
    } else {
        1.0
    };
    c.iter_mut().for_each(|v| *v *= cscale);
    Scaling { d, e, cscale }
}

struct Engine<'a> {
    cfg: &'a SolverConfig,
    /// Original (unscaled) data for residual reporting.
    orig: &'a ConicProblem,
    a: CscMatrix,
    c: Vec<f64>,
    b: Vec<f64>,
    scaling: Scaling,
    cones: ConeSet,
    n: usize,
    m: usize,
    kkt: CscMatrix,
    /// Positions in `kkt.nzval` of the `H` block entries.
    h_pos: Vec<usize>,
    ldl: LdlFactor,
    // iterate
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    kappa: f64,
    lambda: Vec<f64>,
    diagnostics: Vec<String>,
}

struct Direction {
    dx: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Metrics {
    pobj: f64,
    dobj: f64,
    res: Residuals,
    compl: f64,
    primal_infeasible: bool,
    dual_infeasible: bool,
}

impl<'a> Engine<'a> {
    fn new(problem: &'a ConicProblem, cfg: &'a SolverConfig) -> Result<Self, ConicError> {
        let (n, m) = (problem.num_vars(), problem.num_rows());
        let cones = ConeSet::new(problem.cones.clone());
        let mut a = problem.a.clone();
        let mut c = problem.c.clone();
        let mut b = problem.b.clone();
        let scaling = equilibrate(&mut a, &mut c, &mut b, &cones, cfg);
        // Rebuild the scaled matrix from the final factors.
        let mut a_scaled = problem.a.clone();
        for j in 0..n {
            for p in a_scaled.colptr[j]..a_scaled.colptr[j + 1] {
                a_scaled.nzval[p] *= scaling.d[j] * scaling.e[a_scaled.rowval[p]];
            }
        }
        let _ = a;

        // KKT upper triangle: [0  Aᵀ; A  -H].
        let mut trip = Vec::with_capacity(n + a_scaled.nnz() + 3 * m);
        for j in 0..n {
            trip.push((j, j, 0.0));
        }
        for j in 0..n {
            for (i, v) in a_scaled.col(j) {
                trip.push((j, n + i, v));
            }
        }
        let hpat = cones.hessian_pattern();
        for &(i, j) in &hpat {
            trip.push((n + i, n + j, 0.0));
        }
        let kkt = CscMatrix::from_triplets(n + m, n + m, &trip);
        let h_pos = hpat
            .iter()
            .map(|&(i, j)| {
                let (r, col) = (n + i, n + j);
                let range = kkt.colptr[col]..kkt.colptr[col + 1];
                let off = kkt.rowval[range.clone()].binary_search(&r).expect("pattern entry");
                range.start + off
            })
            .collect();
        let signs: Vec<f64> = (0..n + m).map(|k| if k < n { 1.0 } else { -1.0 }).collect();
        let ldl = LdlFactor::new(&kkt, &signs)?;

        Ok(Self {
            cfg,
            orig: problem,
            a: a_scaled,
            c,
            b,
            scaling,
            cones,
            n,
            m,
            kkt,
            h_pos,
            ldl,
            x: vec![0.0; n],
            s: vec![0.0; m],
            z: vec![0.0; m],
            tau: 1.0,
            kappa: 1.0,
            lambda: vec![0.0; m],
            diagnostics: Vec::new(),
        })
    }

    fn set_h(&mut self, h: &[f64]) {
        for (k, &p) in self.h_pos.iter().enumerate() {
            self.kkt.nzval[p] = -h[k];
        }
    }

    fn factor(&mut self) -> Result<(), ConicError> {
        self.ldl.set_values(&self.kkt.nzval);
        let bumped = self
            .ldl
            .factor(self.cfg.static_reg, self.cfg.dyn_reg_eps, self.cfg.dyn_reg_delta)?;
        if bumped > 0 && self.diagnostics.len() < 32 {
            self.diagnostics.push(format!("{bumped} pivots regularized"));
        }
        Ok(())
    }

    /// Solves `K [x; z] = [rx; rz]` with iterative refinement against the
    /// unregularized matrix.
    fn kkt_solve(&self, rx: &[f64], rz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dim = self.n + self.m;
        let mut rhs = Vec::with_capacity(dim);
        rhs.extend_from_slice(rx);
        rhs.extend_from_slice(rz);
        let mut sol = rhs.clone();
        self.ldl.solve(&mut sol);
        let bnorm = norm_inf(&rhs).max(1.0);
        let mut kx = vec![0.0; dim];
        for _ in 0..self.cfg.refine_passes {
            sym_upper_mul(&self.kkt, &sol, &mut kx);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            if norm_inf(&r) <= self.cfg.refine_tol * bnorm {
                break;
            }
            self.ldl.solve(&mut r);
            sol.iter_mut().zip(&r).for_each(|(s, d)| *s += d);
        }
        let z = sol.split_off(self.n);
        (sol, z)
    }

    fn initialize(&mut self) -> Result<(), ConicError> {
        let zero_rows = self.cones.is_zero_row();
        let h: Vec<f64> = {
            // Identity on non-zero cones.
            let mut v = Vec::new();
            for (cone, r) in self.cones.cones.iter().zip(&self.cones.ranges) {
                match cone {
                    Cone::Zero(_) => v.extend(std::iter::repeat_n(0.0, r.len())),
                    Cone::Nonneg(_) => v.extend(std::iter::repeat_n(1.0, r.len())),
                    Cone::Soc(_) => {
                        for j in 0..r.len() {
                            for i in 0..=j {
                                v.push(if i == j { 1.0 } else { 0.0 });
                            }
                        }
                    }
                }
            }
            v
        };
        self.set_h(&h);
        self.factor()?;

        let (x, z) = self.kkt_solve(&vec![0.0; self.n], &self.b.clone());
        self.x = x;
        self.s = z.iter().map(|v| -v).collect();
        self.cones.shift_to_interior(&mut self.s, true);

        let negc: Vec<f64> = self.c.iter().map(|v| -v).collect();
        let (_, z) = self.kkt_solve(&negc, &vec![0.0; self.m]);
        self.z = z;
        self.cones.shift_to_interior(&mut self.z, false);
        for i in 0..self.m {
            if zero_rows[i] {
                self.s[i] = 0.0;
            }
        }
        self.tau = 1.0;
        self.kappa = 1.0;
        Ok(())
    }

    fn mu(&self) -> f64 {
        (dot(&self.s, &self.z) + self.tau * self.kappa) / (self.cones.degree as f64 + 1.0)
    }

    fn unscaled(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sc = &self.scaling;
        let x: Vec<f64> = (0..self.n).map(|j| self.x[j] * sc.d[j]).collect();
        let s: Vec<f64> = (0..self.m).map(|i| self.s[i] / sc.e[i]).collect();
        let z: Vec<f64> = (0..self.m).map(|i| self.z[i] * sc.e[i] / sc.cscale).collect();
        (x, s, z)
    }

    fn metrics(&self) -> Metrics {
        let p = self.orig;
        let (xu, su, zu) = self.unscaled();
        let tau = self.tau;
        let xb: Vec<f64> = xu.iter().map(|v| v / tau).collect();
        let sb: Vec<f64> = su.iter().map(|v| v / tau).collect();
        let zb: Vec<f64> = zu.iter().map(|v| v / tau).collect();

        let mut rp = p.a.mul_vec(&xb);
        for i in 0..self.m {
            rp[i] += sb[i] - p.b[i];
        }
        let mut rd = p.a.tmul_vec(&zb);
        for j in 0..self.n {
            rd[j] += p.c[j];
        }
        let pobj = dot(&p.c, &xb);
        let dobj = -dot(&p.b, &zb);
        let res = Residuals {
            primal: norm_inf(&rp) / (1.0 + norm_inf(&p.b) + norm_inf(&xb) + norm_inf(&sb)),
            dual: norm_inf(&rd) / (1.0 + norm_inf(&p.c) + norm_inf(&zb)),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        };

        // Infeasibility certificates on the unnormalized iterate.
        let bz = dot(&p.b, &zu);
        let atz = norm_inf(&p.a.tmul_vec(&zu));
        let zscale = norm_inf(&zu).max(1.0);
        let primal_infeasible = bz < -self.cfg.tol_infeas * zscale && atz <= -self.cfg.tol_infeas * bz;
        let cx = dot(&p.c, &xu);
        let mut axs = p.a.mul_vec(&xu);
        for i in 0..self.m {
            axs[i] += su[i];
        }
        let xscale = norm_inf(&xu).max(1.0);
        let dual_infeasible = cx < -self.cfg.tol_infeas * xscale && norm_inf(&axs) <= -self.cfg.tol_infeas * cx;

        Metrics {
            pobj,
            dobj,
            res,
            compl: dot(&sb, &zb),
            primal_infeasible,
            dual_infeasible,
        }
    }

    fn is_optimal(&self, mt: &Metrics) -> bool {
        mt.res.primal <= self.cfg.tol_feas_primal
            && mt.res.dual <= self.cfg.tol_feas_dual
            && mt.res.gap <= self.cfg.tol_gap
            && mt.compl.abs() / (1.0 + mt.pobj.abs()) <= self.cfg.tol_gap
    }

    fn finish(&self, status: Status, iterations: usize, mt: &Metrics) -> Solution {
        let (xu, su, zu) = self.unscaled();
        let (x, s, z) = match status {
            Status::Optimal | Status::IterLimit => {
                let t = self.tau;
                (
                    xu.iter().map(|v| v / t).collect(),
                    su.iter().map(|v| v / t).collect(),
                    zu.iter().map(|v| v / t).collect(),
                )
            }
            Status::PrimalInfeasible => {
                let k = -dot(&self.orig.b, &zu);
                (
                    vec![f64::NAN; self.n],
                    vec![f64::NAN; self.m],
                    zu.iter().map(|v| v / k).collect(),
                )
            }
            Status::DualInfeasible => {
                let k = -dot(&self.orig.c, &xu);
                (
                    xu.iter().map(|v| v / k).collect(),
                    su.iter().map(|v| v / k).collect(),
                    vec![f64::NAN; self.m],
                )
            }
        };
        let (pobj, dobj) = match status {
            Status::Optimal | Status::IterLimit => (mt.pobj, mt.dobj),
            Status::PrimalInfeasible => (f64::INFINITY, f64::INFINITY),
            Status::DualInfeasible => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        Solution {
            status,
            x,
            s,
            z,
            primal_objective: pobj,
            dual_objective: dobj,
            iterations,
            residuals: mt.res,
            complementarity: mt.compl,
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Solves the linearized embedding for one right-hand side. `ds_term`
    /// is `Wᵀ(λ \ d_s)`; `sol1` holds the solution of `K [x1; z1] = [-c; b]`.
    fn direction(
        &self,
        sol1: &(Vec<f64>, Vec<f64>),
        dx_res: &[f64],
        dz_res: &[f64],
        dtau_res: f64,
        dkappa_res: f64,
        ds_term: &[f64],
    ) -> Direction {
        let rx: Vec<f64> = dx_res.iter().map(|v| -v).collect();
        let rz: Vec<f64> = dz_res.iter().zip(ds_term).map(|(d, t)| -d + t).collect();
        let (x2, z2) = self.kkt_solve(&rx, &rz);
        let (x1, z1) = sol1;
        let num = dtau_res + dot(&self.c, &x2) + dot(&self.b, &z2) - dkappa_res / self.tau;
        let den = self.kappa / self.tau - dot(&self.c, x1) - dot(&self.b, z1);
        let dtau = num / den;
        let dx: Vec<f64> = x2.iter().zip(x1).map(|(a, b)| a + dtau * b).collect();
        let dz: Vec<f64> = z2.iter().zip(z1).map(|(a, b)| a + dtau * b).collect();
        let mut wdz = vec![0.0; self.m];
        self.cones.mul_w(&dz, &mut wdz);
        let mut hdz = vec![0.0; self.m];
        self.cones.mul_w(&wdz, &mut hdz);
        let ds: Vec<f64> = ds_term.iter().zip(&hdz).map(|(t, h)| -t - h).collect();
        let dkappa = -(dkappa_res + self.kappa * dtau) / self.tau;
        Direction {
            dx,
            dz,
            ds,
            dtau,
            dkappa,
        }
    }

    fn step_length(&self, d: &Direction, amax: f64) -> f64 {
        let mut a = amax;
        a = self.cones.max_step(&self.s, &d.ds, a);
        a = self.cones.max_step(&self.z, &d.dz, a);
        if d.dtau < 0.0 {
            a = a.min(-self.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-self.kappa / d.dkappa);
        }
        a
    }

    fn run(mut self) -> Solution {
        if let Err(e) = self.initialize() {
            self.diagnostics.push(format!("initialization failed: {e}"));
            let mt = self.metrics();
            return self.finish(Status::IterLimit, 0, &mt);
        }
        let mut hvals = Vec::new();
        let mut stall = 0;
        let mut iter = 0;
        loop {
            let mt = self.metrics();
            if self.is_optimal(&mt) {
                return self.finish(Status::Optimal, iter, &mt);
            }
            if mt.primal_infeasible {
                return self.finish(Status::PrimalInfeasible, iter, &mt);
            }
            if mt.dual_infeasible {
                return self.finish(Status::DualInfeasible, iter, &mt);
            }
            if iter >= self.cfg.max_iters {
                self.diagnostics.push(format!(
                    "iteration limit: pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e} kappa {:.2e}",
                    mt.res.primal, mt.res.dual, mt.res.gap, self.tau, self.kappa
                ));
                return self.finish(Status::IterLimit, iter, &mt);
            }
            iter += 1;

            // Residuals of the embedding in scaled space.
            let mut rx = self.a.tmul_vec(&self.z);
            for j in 0..self.n {
                rx[j] += self.c[j] * self.tau;
            }
            let mut rz = self.a.mul_vec(&self.x);
            for i in 0..self.m {
                rz[i] += self.s[i] - self.b[i] * self.tau;
            }
            let rtau = dot(&self.c, &self.x) + dot(&self.b, &self.z) + self.kappa;
            let mu = self.mu();

            let mut lambda = std::mem::take(&mut self.lambda);
            self.cones.update_scaling(&self.s, &self.z, &mut lambda);
            self.lambda = lambda;
            self.cones.hessian_values(&mut hvals);
            self.set_h(&hvals);
            if let Err(e) = self.factor() {
                self.diagnostics.push(format!("factorization failed: {e}"));
                return self.finish(Status::IterLimit, iter, &mt);
            }
            let negc: Vec<f64> = self.c.iter().map(|v| -v).collect();
            let sol1 = self.kkt_solve(&negc, &self.b);

            // Predictor.
            let mut ds_aff_term = vec![0.0; self.m];
            self.cones.mul_w(&self.lambda, &mut ds_aff_term);
            let aff = self.direction(&sol1, &rx, &rz, rtau, self.tau * self.kappa, &ds_aff_term);
            let alpha_aff = self.step_length(&aff, 1.0);
            let sigma = (1.0 - alpha_aff).powi(3);

            // Corrector.
            let mut winv_ds = vec![0.0; self.m];
            self.cones.mul_winv(&aff.ds, &mut winv_ds);
            let mut w_dz = vec![0.0; self.m];
            self.cones.mul_w(&aff.dz, &mut w_dz);
            let mut dsv = vec![0.0; self.m];
            self.cones.circ(&winv_ds, &w_dz, &mut dsv);
            let mut ll = vec![0.0; self.m];
            self.cones.circ(&self.lambda, &self.lambda, &mut ll);
            for i in 0..self.m {
                dsv[i] += ll[i];
            }
            self.cones.add_identity(-sigma * mu, &mut dsv);
            let mut tmp = vec![0.0; self.m];
            self.cones.inv_circ(&self.lambda, &dsv, &mut tmp);
            let mut ds_term = vec![0.0; self.m];
            self.cones.mul_w(&tmp, &mut ds_term);
            let f = 1.0 - sigma;
            let rx_c: Vec<f64> = rx.iter().map(|v| f * v).collect();
            let rz_c: Vec<f64> = rz.iter().map(|v| f * v).collect();
            let dkappa_res = self.tau * self.kappa - sigma * mu + aff.dtau * aff.dkappa;
            let dir = self.direction(&sol1, &rx_c, &rz_c, f * rtau, dkappa_res, &ds_term);

            let amax = self.step_length(&dir, 1.0 / self.cfg.step_fraction);
            let alpha = (self.cfg.step_fraction * amax).min(1.0);
            if !alpha.is_finite() || dir.dx.iter().chain(&dir.dz).any(|v| !v.is_finite()) {
                self.diagnostics.push("non-finite search direction".into());
                return self.finish(Status::IterLimit, iter, &mt);
            }
            if alpha < 1e-10 {
                stall += 1;
                if stall >= 5 {
                    self.diagnostics.push(format!("step length stalled at {alpha:.2e}"));
                    return self.finish(Status::IterLimit, iter, &mt);
                }
            } else {
                stall = 0;
            }
            for j in 0..self.n {
                self.x[j] += alpha * dir.dx[j];
            }
            for i in 0..self.m {
                self.s[i] += alpha * dir.ds[i];
                self.z[i] += alpha * dir.dz[i];
            }
            self.tau += alpha * dir.dtau;
            self.kappa += alpha * dir.dkappa;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(c: Vec<f64>, rows: &[(&[f64], f64)], cones: Vec<Cone>) -> ConicProblem {
        let n = c.len();
        let mut t = Vec::new();
        for (i, (r, _)) in rows.iter().enumerate() {
            for j in 0..n {
                if r[j] != 0.0 {
                    t.push((i, j, r[j]));
                }
            }
        }
        let a = CscMatrix::from_triplets(rows.len(), n, &t);
        ConicProblem::new(c, a, rows.iter().map(|r| r.1).collect(), cones).unwrap()
    }

    #[test]
    fn min_x_subject_to_x_ge_one() {
        // -x + s = -1, s ≥ 0  ⇔  x ≥ 1
        let p = lp(vec![1.0], &[(&[-1.0], -1.0)], vec![Cone::Nonneg(1)]);
        let sol = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.primal_objective - 1.0).abs() < 1e-7);
        assert!((sol.z[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_radius_second_order_cone() {
        // variables (x, y, t): minimize t s.t. ‖(x − 1, y)‖ ≤ t
        // s = (t, x − 1, y) = b − A v with b = (0, −1, 0).
        let a = CscMatrix::from_triplets(3, 3, &[(0, 2, -1.0), (1, 0, -1.0), (2, 1, -1.0)]);
        let p = ConicProblem::new(vec![0.0, 0.0, 1.0], a, vec![0.0, -1.0, 0.0], vec![Cone::Soc(3)]).unwrap();
        let sol = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.primal_objective.abs() < 1e-7);
        assert!((sol.x[0] - 1.0).abs() < 1e-4);
        assert!(sol.x[1].abs() < 1e-4);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x ≥ 1 and x ≤ 0
        let p = lp(vec![1.0], &[(&[-1.0], -1.0), (&[1.0], 0.0)], vec![Cone::Nonneg(2)]);
        let sol = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible);
    }

    #[test]
    fn detects_unboundedness() {
        // min -x s.t. x ≥ 0
        let p = lp(vec![-1.0], &[(&[-1.0], 0.0)], vec![Cone::Nonneg(1)]);
        let sol = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, Status::DualInfeasible);
    }

    #[test]
    fn equality_rows_use_zero_cone() {
        // min x + y s.t. x + y = 2, x − y = 0 (free variables).
        let p = lp(
            vec![1.0, 1.0],
            &[(&[1.0, 1.0], 2.0), (&[1.0, -1.0], 0.0)],
            vec![Cone::Zero(2)],
        );
        let sol = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn empty_program_is_rejected() {
        let p = ConicProblem::new(vec![], CscMatrix::zeros(0, 0), vec![], vec![]).unwrap();
        assert!(matches!(
            solve(&p, &SolverConfig::default()),
            Err(ConicError::EmptyProgram)
        ));
    }
}
