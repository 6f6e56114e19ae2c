//! End-to-end runs: relaxation, feasible-solution recovery and
//! rescheduling, with per-phase timing.

use crate::error::{PoolingError, Result};
use crate::ffs::{ffs1, ffs2, Ffs1Status};
use crate::model::{residuals, sucs_ratio, Instance, Schedule};
use crate::qcqp::{build_qcqp, Qcqp};
use crate::relax::{complete_to_psd, dual_reduce, lift, solve_reduced_dual, solve_relaxation, PairSet, RelaxKind};
use crate::reschedule::{reschedule, RecoverOptions, Recovered, Termination};
use crate::standard::{build_standard_qcqp, StandardProblem};
use conic::SolverConfig;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Solve the chosen relaxation and the other one for comparison.
    Relax,
    /// Relaxation, then FFS1 and FFS2.
    Ffs,
    /// Relaxation, FFS, then the rescheduling loop.
    Reschedule,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Relax => "relax",
            Mode::Ffs => "ffs",
            Mode::Reschedule => "reschedule",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = PoolingError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relax" | "relax-only" => Ok(Mode::Relax),
            "ffs" => Ok(Mode::Ffs),
            "reschedule" => Ok(Mode::Reschedule),
            _ => Err(PoolingError::InvalidParameter(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimes {
    pub relax: Duration,
    pub ffs: Duration,
    pub reschedule: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub name: String,
    pub relax: RelaxKind,
    pub mode: Mode,
    /// Variables of the QCQP before lifting.
    pub variables: usize,
    /// Relaxation objective on the full horizon.
    pub relax_start: f64,
    /// Relaxation objective of the last rescheduling iteration.
    pub relax_final: Option<f64>,
    /// Objective of the other relaxation kind, in relax mode.
    pub relax_other: Option<f64>,
    pub recovered_objective: Option<f64>,
    pub sucs_ratio: Option<f64>,
    /// Largest dynamics residual of the returned schedule.
    pub dynamics_residual: Option<f64>,
    pub ffs_nodes: Option<usize>,
    pub iterations: usize,
    pub times: PhaseTimes,
    pub termination: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: SolveReport,
    pub schedule: Option<Schedule>,
}

/// Sucs ratio with an empty requirement counted as fully met.
pub fn sucs_or_one(inst: &Instance, s: &Schedule) -> Result<f64> {
    match sucs_ratio(inst, s) {
        Err(PoolingError::UndefinedRatio) => Ok(1.0),
        r => r,
    }
}

fn other(kind: RelaxKind) -> RelaxKind {
    match kind {
        RelaxKind::Lp => RelaxKind::Socp,
        RelaxKind::Socp => RelaxKind::Lp,
    }
}

pub fn run_pipeline(name: &str, inst: &Instance, mode: Mode, opts: &RecoverOptions) -> Result<PipelineOutput> {
    let began = Instant::now();
    let mut times = PhaseTimes::default();
    let q = build_qcqp(inst, opts.delta)?;
    let m = lift(&q, PairSet::Support)?;

    let clock = Instant::now();
    let relax = solve_relaxation(&m, opts.relax, &opts.conic)?;
    times.relax = clock.elapsed();

    let mut report = SolveReport {
        name: name.to_string(),
        relax: opts.relax,
        mode,
        variables: q.n,
        relax_start: relax.objective,
        relax_final: None,
        relax_other: None,
        recovered_objective: None,
        sucs_ratio: None,
        dynamics_residual: None,
        ffs_nodes: None,
        iterations: 0,
        times,
        termination: String::new(),
    };

    if mode == Mode::Relax {
        let clock = Instant::now();
        let cmp = solve_relaxation(&m, other(opts.relax), &opts.conic)?;
        report.times.relax += clock.elapsed();
        report.relax_other = Some(cmp.objective);
        report.termination = "relaxed".into();
        report.times.total = began.elapsed();
        return Ok(PipelineOutput { report, schedule: None });
    }

    let clock = Instant::now();
    let reference = Schedule::from_vector(inst, &relax.x)?;
    let sol = ffs1(inst, &reference, &opts.ffs)?;
    let out = ffs2(inst, &sol)?;
    report.times.ffs = clock.elapsed();
    report.ffs_nodes = Some(sol.nodes);
    let ffs_status = sol.status;

    let schedule = if mode == Mode::Ffs {
        report.termination = match ffs_status {
            Ffs1Status::Optimal => "ffs optimal".into(),
            Ffs1Status::NodeLimit => "ffs node limit".into(),
        };
        out.schedule
    } else {
        let rec = Recovered {
            relax_objective: relax.objective,
            relax_iterations: relax.solution.iterations,
            ffs1: sol,
            schedule: out.schedule,
            diagnostics: out.diagnostics,
        };
        let clock = Instant::now();
        let done = reschedule(inst, opts, Some(rec))?;
        report.times.reschedule = clock.elapsed();
        report.iterations = done.history.len();
        report.relax_final = done.history.last().map(|r| r.relax_objective);
        report.termination = match &done.termination {
            Termination::Satisfied => "satisfied".into(),
            Termination::HorizonReached => "horizon reached".into(),
            Termination::Unrepairable { step } => format!("unrepairable at step {step}"),
            Termination::Stalled { step, reason } => format!("stalled at step {step}: {reason}"),
        };
        done.schedule
    };
    report.recovered_objective = Some(schedule.cost(inst));
    report.sucs_ratio = Some(sucs_or_one(inst, &schedule)?);
    report.dynamics_residual = Some(residuals(inst, &schedule)?.dynamics());
    report.times.total = began.elapsed();
    Ok(PipelineOutput {
        report,
        schedule: Some(schedule),
    })
}

/// Relaxations of a single-period standard pooling problem. Only the relax
/// mode applies.
pub fn run_standard(name: &str, sp: &StandardProblem, opts: &RecoverOptions) -> Result<SolveReport> {
    let began = Instant::now();
    let q = build_standard_qcqp(sp, opts.delta)?;
    let m = lift(&q, PairSet::Support)?;
    let relax = solve_relaxation(&m, opts.relax, &opts.conic)?;
    let cmp = solve_relaxation(&m, other(opts.relax), &opts.conic)?;
    let elapsed = began.elapsed();
    Ok(SolveReport {
        name: name.to_string(),
        relax: opts.relax,
        mode: Mode::Relax,
        variables: q.n,
        relax_start: relax.objective,
        relax_final: None,
        relax_other: Some(cmp.objective),
        recovered_objective: None,
        sucs_ratio: None,
        dynamics_residual: None,
        ffs_nodes: None,
        iterations: 0,
        times: PhaseTimes {
            relax: elapsed,
            total: elapsed,
            ..PhaseTimes::default()
        },
        termination: "relaxed".into(),
    })
}

/// Post-solve checks on a relaxation: the solver certificate, the PSD
/// completion of the relaxed point and the reduced dual bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub objective: f64,
    pub certified: bool,
    pub min_eig: f64,
    pub objective_change: f64,
    pub dual_bound: f64,
}

impl Verification {
    /// Relative distance between the relaxation objective and the dual bound.
    pub fn dual_gap(&self) -> f64 {
        (self.dual_bound - self.objective).abs() / (1.0 + self.objective.abs())
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.certified
            && self.min_eig >= -1e-8
            && self.objective_change <= 1e-10 * (1.0 + self.objective.abs())
            && self.dual_gap() <= tol
    }
}

pub fn verify_relaxation(q: &Qcqp, kind: RelaxKind, cfg: &SolverConfig) -> Result<Verification> {
    let m = lift(q, PairSet::Support)?;
    let relax = solve_relaxation(&m, kind, cfg)?;
    let done = complete_to_psd(&m, &relax.w)?;
    let dual = solve_reduced_dual(&dual_reduce(&m)?, cfg)?;
    Ok(Verification {
        objective: relax.objective,
        certified: relax.certificate.passed() && dual.certificate.passed(),
        min_eig: done.min_eig,
        objective_change: done.objective_change,
        dual_bound: dual.mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, Family, GeneratorSpec};
    use crate::model::fixtures::small;

    fn numbers(r: &SolveReport) -> (f64, Option<f64>, Option<f64>, Option<f64>, Option<f64>, String) {
        (
            r.relax_start,
            r.relax_final,
            r.relax_other,
            r.recovered_objective,
            r.sucs_ratio,
            r.termination.clone(),
        )
    }

    #[test]
    fn relax_mode_reports_both_relaxations() {
        let inst = small(3);
        let out = run_pipeline("small", &inst, Mode::Relax, &RecoverOptions::default()).unwrap();
        let r = out.report;
        assert!(out.schedule.is_none());
        let other = r.relax_other.unwrap();
        assert!((r.relax_start - other).abs() <= 1e-5 * (1.0 + r.relax_start.abs()));
        assert_eq!(r.termination, "relaxed");
    }

    #[test]
    fn ffs_mode_returns_a_consistent_schedule() {
        let inst = small(3);
        let out = run_pipeline("small", &inst, Mode::Ffs, &RecoverOptions::default()).unwrap();
        let s = out.schedule.unwrap();
        let r = out.report;
        assert!((r.recovered_objective.unwrap() - s.cost(&inst)).abs() < 1e-12);
        assert!(r.dynamics_residual.unwrap() <= 1e-8);
        assert!((0.0..=1.0).contains(&r.sucs_ratio.unwrap()));
        assert!(r.times.total >= r.times.relax + r.times.ffs);
    }

    #[test]
    fn reschedule_mode_is_deterministic() {
        let inst = generate(&GeneratorSpec::new(1, 2, 1, 4, 7).with_family(Family::Slack))
            .unwrap()
            .instance;
        let a = run_pipeline("g", &inst, Mode::Reschedule, &RecoverOptions::default())
            .unwrap()
            .report;
        let b = run_pipeline("g", &inst, Mode::Reschedule, &RecoverOptions::default())
            .unwrap()
            .report;
        assert_eq!(numbers(&a), numbers(&b));
        assert_eq!(a.sucs_ratio, Some(1.0));
        assert!(a.iterations >= 1);
        assert!(a.relax_final.is_some());
    }

    #[test]
    fn verification_passes_on_small_instance() {
        let q = build_qcqp(&small(3), 1e-4).unwrap();
        for kind in [RelaxKind::Lp, RelaxKind::Socp] {
            let v = verify_relaxation(&q, kind, &SolverConfig::default()).unwrap();
            assert!(v.passed(1e-5), "{v:?}");
        }
    }

    #[test]
    fn modes_parse() {
        for m in [Mode::Relax, Mode::Ffs, Mode::Reschedule] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
