//! Independent a-posteriori check of a returned solution.
//!
//! Nothing here reuses solver internals: residuals and cone membership are
//! recomputed from the problem data with plain loops.

use crate::cones::Cone;
use crate::problem::{ConicProblem, Solution, Status};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub checks: Vec<CheckResult>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn check(name: &'static str, value: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        name,
        value,
        tolerance,
        passed: value.is_finite() && value <= tolerance,
    }
}

fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn ax(p: &ConicProblem, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p.a.nrows];
    for j in 0..p.a.ncols {
        for k in p.a.colptr[j]..p.a.colptr[j + 1] {
            y[p.a.rowval[k]] += p.a.nzval[k] * x[j];
        }
    }
    y
}

fn atz(p: &ConicProblem, z: &[f64]) -> Vec<f64> {
    (0..p.a.ncols)
        .map(|j| {
            (p.a.colptr[j]..p.a.colptr[j + 1])
                .map(|k| p.a.nzval[k] * z[p.a.rowval[k]])
                .sum()
        })
        .collect()
}

/// Largest violation of membership in `K` (or `K*` when `dual`), measured
/// as the negative of the smallest eigenvalue-like quantity per block.
fn cone_violation(cones: &[Cone], v: &[f64], dual: bool) -> f64 {
    let mut worst = 0.0f64;
    let mut r = 0;
    for cone in cones {
        let d = cone.dim();
        let blk = &v[r..r + d];
        match cone {
            Cone::Zero(_) => {
                // Zero cone for the slack, free for the dual.
                if !dual {
                    worst = worst.max(inf(blk));
                }
            }
            Cone::Nonneg(_) => {
                for &x in blk {
                    worst = worst.max(-x);
                }
            }
            Cone::Soc(_) => {
                let tail = blk[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                worst = worst.max(tail - blk[0]);
            }
        }
        r += d;
    }
    worst
}

/// Verifies the returned point against `tol`. For optimal points this checks
/// primal and dual feasibility, the duality gap and complementarity; for
/// infeasibility statuses it checks the corresponding certificate.
pub fn certify(p: &ConicProblem, sol: &Solution, tol: f64) -> Certificate {
    let mut checks = Vec::new();
    let nb = inf(&p.b);
    let nc = inf(&p.c);
    match sol.status {
        Status::Optimal | Status::IterLimit => {
            let (x, s, z) = (&sol.x, &sol.s, &sol.z);
            let mut rp = ax(p, x);
            for i in 0..rp.len() {
                rp[i] += s[i] - p.b[i];
            }
            let mut rd = atz(p, z);
            for j in 0..rd.len() {
                rd[j] += p.c[j];
            }
            let scale_p = 1.0 + nb + inf(x) + inf(s);
            let scale_d = 1.0 + nc + inf(z);
            checks.push(check("primal residual", inf(&rp) / scale_p, tol));
            checks.push(check("dual residual", inf(&rd) / scale_d, tol));
            checks.push(check(
                "slack in cone",
                cone_violation(&p.cones, s, false) / scale_p,
                tol,
            ));
            checks.push(check("dual in cone", cone_violation(&p.cones, z, true) / scale_d, tol));
            let pobj: f64 = p.c.iter().zip(x).map(|(a, b)| a * b).sum();
            let dobj: f64 = -p.b.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            checks.push(check("duality gap", (pobj - dobj).abs() / (1.0 + pobj.abs()), tol));
            let sz: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum();
            checks.push(check("complementarity", sz.abs() / (1.0 + pobj.abs()), tol));
            checks.push(check(
                "reported objective",
                (sol.primal_objective - pobj - p.offset).abs() / (1.0 + pobj.abs()),
                tol,
            ));
            if sol.status == Status::IterLimit {
                checks.push(check("status optimal", 1.0, 0.0));
            }
        }
        Status::PrimalInfeasible => {
            let z = &sol.z;
            let bz: f64 = p.b.iter().zip(z).map(|(a, b)| a * b).sum();
            checks.push(check("certificate bᵀz < 0", if bz < 0.0 { 0.0 } else { 1.0 }, 0.0));
            checks.push(check("Aᵀz ≈ 0", inf(&atz(p, z)) / (1.0 + nc), tol * bz.abs().max(1.0)));
            checks.push(check("z in dual cone", cone_violation(&p.cones, z, true), tol));
        }
        Status::DualInfeasible => {
            let x = &sol.x;
            let cx: f64 = p.c.iter().zip(x).map(|(a, b)| a * b).sum();
            checks.push(check("certificate cᵀx < 0", if cx < 0.0 { 0.0 } else { 1.0 }, 0.0));
            let mut axs = ax(p, x);
            for i in 0..axs.len() {
                axs[i] += sol.s[i];
            }
            checks.push(check("Ax + s ≈ 0", inf(&axs) / (1.0 + nb), tol * cx.abs().max(1.0)));
            checks.push(check("s in cone", cone_violation(&p.cones, &sol.s, false), tol));
        }
    }
    Certificate { checks }
}
