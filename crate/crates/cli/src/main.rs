use clap::{Args, Parser, Subcommand, ValueEnum};
use conic::SolverConfig;
use pooling::ffs::{Ffs1Options, DEFAULT_ALPHA, DEFAULT_NODE_LIMIT};
use pooling::generator::{generate, Family, GeneratorSpec};
use pooling::io::{parse_instance, write_instance};
use pooling::pipeline::{run_pipeline, run_standard, verify_relaxation, Mode, SolveReport};
use pooling::qcqp::{build_qcqp, DEFAULT_DELTA};
use pooling::relax::RelaxKind;
use pooling::report::{align_table, format_table, read_reports_csv, write_reports_csv, write_schedule_csv};
use pooling::reschedule::RecoverOptions;
use pooling::standard::{build_standard_qcqp, parse_standard, STANDARD_FORMAT};
use pooling::{Instance, PoolingError, Schedule};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_UNREPAIRABLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pooling",
    version,
    about = "Relaxations and rescheduling for time-discretized pooling problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance file.
    Generate(GenerateArgs),
    /// Solve instance files and print a report table.
    Solve(SolveArgs),
    /// Print report CSV files as a table.
    Report { files: Vec<PathBuf> },
    /// Solve a relaxation and check its certificate, PSD completion and dual bound.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RelaxArg {
    Lp,
    Socp,
}

impl From<RelaxArg> for RelaxKind {
    fn from(r: RelaxArg) -> Self {
        match r {
            RelaxArg::Lp => RelaxKind::Lp,
            RelaxArg::Socp => RelaxKind::Socp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Relax,
    Ffs,
    Reschedule,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Relax => Mode::Relax,
            ModeArg::Ffs => Mode::Ffs,
            ModeArg::Reschedule => Mode::Reschedule,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Mixed,
    Slack,
    Starved,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    sources: usize,
    #[arg(long, default_value_t = 2)]
    tanks: usize,
    #[arg(long, default_value_t = 1)]
    plants: usize,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mixed")]
    family: FamilyArg,
    /// Output file; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "lp")]
    relax: RelaxArg,
    /// Penalty weight on the relaxed equality bands.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Conic solver tolerance for gap and feasibility.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct SolveArgs {
    files: Vec<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "reschedule")]
    mode: ModeArg,
    /// Weight of the storage-tracking term in FFS1.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Branch-and-bound node limit for FFS1.
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    node_limit: usize,
    /// Accepted for symmetry with `generate`; solving is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Schedule CSV file (single instance only).
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    files: Vec<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Largest accepted relative gap between relaxation and dual bound.
    #[arg(long, default_value_t = 1e-5)]
    gap: f64,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<PoolingError> for Failure {
    fn from(e: PoolingError) -> Self {
        let code = match e {
            PoolingError::Parse { .. }
            | PoolingError::InvalidInstance(_)
            | PoolingError::Io(_)
            | PoolingError::InvalidParameter(_) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn input(msg: String) -> Failure {
    Failure { code: EXIT_INPUT, msg }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn name_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn is_standard(text: &str) -> bool {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .find(|l| !l.is_empty())
        .is_some_and(|l| l.split_whitespace().next() == Some(STANDARD_FORMAT))
}

fn conic_config(s: &SolverArgs) -> Result<SolverConfig, Failure> {
    if !(s.tol > 0.0) {
        return Err(input(format!("--tol must be positive, got {}", s.tol)));
    }
    Ok(SolverConfig {
        tol_gap: s.tol,
        tol_feas_primal: s.tol,
        tol_feas_dual: s.tol,
        ..SolverConfig::default()
    })
}

fn with_path<T>(path: &Path, r: pooling::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.msg = format!("{}: {}", path.display(), f.msg);
        f
    })
}

fn cmd_generate(a: GenerateArgs) -> Result<u8, Failure> {
    let family = match a.family {
        FamilyArg::Mixed => Family::Mixed,
        FamilyArg::Slack => Family::Slack,
        FamilyArg::Starved => Family::Starved,
    };
    let spec = GeneratorSpec::new(a.sources, a.tanks, a.plants, a.horizon, a.seed).with_family(family);
    let g = generate(&spec)?;
    for w in &g.warnings {
        eprintln!("warning: {w}");
    }
    let text = write_instance(&g.instance);
    match a.out {
        Some(p) => fs::write(&p, text).map_err(|e| input(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

/// Runs `f` on every item over a pool of worker threads; results keep the
/// input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                *slots[k].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item is processed"))
        .collect()
}

type Solved = (SolveReport, Option<(Instance, Schedule)>);

fn solve_one(path: &PathBuf, mode: Mode, opts: &RecoverOptions) -> Result<Solved, Failure> {
    let text = read(path)?;
    let name = name_of(path);
    if is_standard(&text) {
        if mode != Mode::Relax {
            return Err(input(format!(
                "{}: standard pooling files support only --mode relax",
                path.display()
            )));
        }
        let sp = with_path(path, parse_standard(&text))?;
        return Ok((with_path(path, run_standard(&name, &sp, opts))?, None));
    }
    let inst = with_path(path, parse_instance(&text))?;
    let out = with_path(path, run_pipeline(&name, &inst, mode, opts))?;
    let dump = out.schedule.map(|s| (inst, s));
    Ok((out.report, dump))
}

fn cmd_solve(a: SolveArgs) -> Result<u8, Failure> {
    if a.files.is_empty() {
        return Err(input("no instance files given".into()));
    }
    if a.schedule.is_some() && a.files.len() != 1 {
        return Err(input("--schedule needs exactly one instance file".into()));
    }
    let mode = Mode::from(a.mode);
    let opts = RecoverOptions {
        relax: a.solver.relax.into(),
        delta: a.solver.delta,
        ffs: Ffs1Options {
            alpha: a.alpha,
            node_limit: a.node_limit,
            ..Ffs1Options::default()
        },
        conic: conic_config(&a.solver)?,
    };
    let results = parallel_map(&a.files, |path| solve_one(path, mode, &opts));
    let mut reports: Vec<SolveReport> = Vec::new();
    let mut code = 0;
    for r in results {
        let (report, dump) = r?;
        if report.termination.starts_with("unrepairable") {
            code = EXIT_UNREPAIRABLE;
        }
        if let (Some(p), Some((inst, s))) = (&a.schedule, dump) {
            let f = fs::File::create(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            write_schedule_csv(f, &inst, &s)?;
        }
        reports.push(report);
    }
    print!("{}", format_table(&reports));
    if let Some(p) = &a.out {
        let f = fs::File::create(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        write_reports_csv(f, &reports)?;
    }
    Ok(code)
}

fn cmd_report(files: Vec<PathBuf>) -> Result<u8, Failure> {
    if files.is_empty() {
        return Err(input("no report files given".into()));
    }
    let mut head: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for path in &files {
        for row in with_path(path, read_reports_csv(&read(path)?))? {
            if head.is_empty() {
                head = row.iter().map(|(h, _)| h.clone()).collect();
            }
            rows.push(row.into_iter().map(|(_, v)| v.unwrap_or_default()).collect::<Vec<_>>());
        }
    }
    if head.is_empty() {
        return Ok(0);
    }
    let head: Vec<&str> = head.iter().map(String::as_str).collect();
    print!("{}", align_table(&head, &rows, 3));
    Ok(0)
}

fn cmd_verify(a: VerifyArgs) -> Result<u8, Failure> {
    if a.files.is_empty() {
        return Err(input("no instance files given".into()));
    }
    let cfg = conic_config(&a.solver)?;
    let kind: RelaxKind = a.solver.relax.into();
    let mut rows = Vec::new();
    let mut code = 0;
    for path in &a.files {
        let text = read(path)?;
        let q = if is_standard(&text) {
            with_path(
                path,
                parse_standard(&text).and_then(|sp| build_standard_qcqp(&sp, a.solver.delta)),
            )?
        } else {
            with_path(path, parse_instance(&text).and_then(|i| build_qcqp(&i, a.solver.delta)))?
        };
        let v = with_path(path, verify_relaxation(&q, kind, &cfg))?;
        let ok = v.passed(a.gap);
        if !ok {
            code = EXIT_SOLVER;
        }
        rows.push(vec![
            name_of(path),
            kind.name().to_string(),
            format!("{:.6}", v.objective),
            v.certified.to_string(),
            format!("{:.2e}", v.min_eig),
            format!("{:.2e}", v.objective_change),
            format!("{:.6}", v.dual_bound),
            format!("{:.2e}", v.dual_gap()),
            if ok { "pass" } else { "FAIL" }.to_string(),
        ]);
    }
    let head = [
        "name",
        "relax",
        "objective",
        "certified",
        "min eig",
        "obj change",
        "dual bound",
        "gap",
        "result",
    ];
    print!("{}", align_table(&head, &rows, 2));
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Report { files } => cmd_report(files),
        Command::Verify(a) => cmd_verify(a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
