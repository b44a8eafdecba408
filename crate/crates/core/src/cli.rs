//! The `vextrap` command line front end.
//!
//! Exit codes: 0 success, 1 relation defect above threshold, 2 I/O, parse or
//! other input errors, 3 dimension errors, 4 wrong problem kind, 5 rank
//! deficiency.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::extrap::{self, Methods, RunHistory, RunStatus};
use crate::harness::{self, FixedPointProblem, NonlinearMap, ProblemKind};
use crate::io::{self, WeightSpec};
use crate::krylov;
use crate::relations::{self, Check, RelationReport};
use crate::wqr::{self, QrOptions};
use crate::wspace::{CVector, WeightOperator};
use crate::Tolerances;

/// Default output directory when no `--output` is given.
pub const OUTPUT_DIR_ENV: &str = "VEXTRAP_OUTPUT_DIR";

/// `krylov-compare` passes when every `|||w_k - s_k|||` is below this.
pub const DEFAULT_KRYLOV_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "vextrap", version, about = "MPE and RRE vector extrapolation under weighted inner products")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extrapolate a sequence and write its history.
    Accelerate(AccelerateArgs),
    /// Check the MPE/RRE identities on a run or a saved history.
    VerifyRelations(VerifyArgs),
    /// Compare FOM/GMR with MPE/RRE on a linear problem.
    KrylovCompare(KrylovArgs),
    /// Weighted QR factorization of a Matrix Market file.
    Qr(QrArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Both,
    Mpe,
    Rre,
}

impl From<MethodArg> for Methods {
    fn from(m: MethodArg) -> Methods {
        match m {
            MethodArg::Both => Methods::BOTH,
            MethodArg::Mpe => Methods::MPE,
            MethodArg::Rre => Methods::RRE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QrMethod {
    Mgs,
    Gs,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Sequence file, one vector per line.
    #[arg(long, value_name = "FILE")]
    sequence: Option<PathBuf>,
    /// Linear problem x = T x + d: Matrix Market T and vector file d.
    #[arg(long, num_args = 2, value_names = ["T", "D"])]
    linear: Option<Vec<PathBuf>>,
    /// Built-in nonlinear map (cosine or quadratic).
    #[arg(long, value_name = "NAME")]
    nonlinear: Option<String>,
    /// Starting vector: `zero` or a vector file.
    #[arg(long, default_value = "zero")]
    x0: String,
    /// Dimension for a nonlinear problem started at zero.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of iterations to generate (default k_max + 1).
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Weight: identity, diag:<file> or dense:<file>.
    #[arg(long, default_value = "identity")]
    weight: WeightSpec,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    methods: MethodArg,
    #[arg(long, default_value_t = extrap::DEFAULT_EXIST_TOL, value_parser = positive)]
    tau_exist: f64,
    #[arg(long, default_value_t = wqr::DEFAULT_RANK_TOL, value_parser = positive)]
    tau_rank: f64,
    #[arg(long, default_value_t = relations::DEFAULT_STAG_TOL, value_parser = positive)]
    tau_stag: f64,
    #[arg(long, default_value_t = relations::DEFAULT_PLATEAU_TOL, value_parser = positive)]
    tau_plateau: f64,
    /// Second Gram-Schmidt pass on every column.
    #[arg(long)]
    reorthogonalize: bool,
}

impl RunArgs {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rank: self.tau_rank,
            exist: self.tau_exist,
            stag: self.tau_stag,
            plateau: self.tau_plateau,
            reorthogonalize: self.reorthogonalize,
        }
    }
}

#[derive(Debug, Args)]
struct AccelerateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Output file; the extension is replaced per format.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Check a saved history instead of running.
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = relations::DEFAULT_DEFECT_TOL, value_parser = positive)]
    defect_tol: f64,
    /// Report file (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KrylovArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = DEFAULT_KRYLOV_TOL, value_parser = positive)]
    tol: f64,
    /// Report file (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QrArgs {
    /// Matrix Market file whose columns are factored.
    matrix: PathBuf,
    #[arg(long, default_value = "identity")]
    weight: WeightSpec,
    #[arg(long, value_enum, default_value_t = QrMethod::Mgs)]
    method: QrMethod,
    #[arg(long, default_value_t = wqr::DEFAULT_RANK_TOL, value_parser = positive)]
    tau_rank: f64,
    #[arg(long)]
    reorthogonalize: bool,
    /// Print the orthonormality and reconstruction errors.
    #[arg(long)]
    check: bool,
    /// Directory for Q.mtx and R.mtx.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// An error with the stage it happened in.
struct Failure {
    stage: &'static str,
    code: i32,
    message: String,
}

impl Failure {
    fn new(stage: &'static str, e: Error) -> Self {
        Failure { stage, code: exit_code(&e), message: e.to_string() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { stage: "arguments", code: 2, message: message.into() }
    }
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(stage, e))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::RelationViolation { .. } => 1,
        Error::DimensionMismatch { .. } | Error::InsufficientVectors { .. } | Error::EmptyInput(_) => 3,
        Error::NotLinear => 4,
        Error::RankDeficient { .. } => 5,
        _ => 2,
    }
}

fn output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn output_path(explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| output_dir().join(default_name))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

fn fmt_check(c: Check) -> String {
    match c {
        Check::Defect(d) => format!("{d:.1e}"),
        Check::NotApplicable => "n/a".to_string(),
    }
}

fn status_line(status: RunStatus) -> String {
    match status {
        RunStatus::Completed => "status: completed".into(),
        RunStatus::DependenceDetected { k0 } => format!("status: dependence detected, k0 = {k0}"),
        RunStatus::Converged { k0 } => format!("status: converged, k0 = {k0}"),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Accelerate(a) => accelerate(a, out),
        Command::VerifyRelations(a) => verify_relations(a, out),
        Command::KrylovCompare(a) => krylov_compare(a, out),
        Command::Qr(a) => qr(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}: {}", f.stage, f.message);
            f.code
        }
    }
}

pub fn main_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    main_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn load_problem(input: &InputArgs) -> Result<Option<FixedPointProblem>, Failure> {
    let x0 = |dim: Option<usize>| -> Result<CVector, Failure> {
        if input.x0 == "zero" {
            let n = dim.ok_or_else(|| Failure::usage("--x0 zero needs --dim for a nonlinear problem"))?;
            Ok(CVector::zeros(n))
        } else {
            io::read_vector(Path::new(&input.x0)).at("loading x0")
        }
    };
    if let Some(paths) = &input.linear {
        let x0_path = (input.x0 != "zero").then(|| Path::new(&input.x0));
        return io::load_linear_problem(&paths[0], &paths[1], x0_path).at("loading problem").map(Some);
    }
    if let Some(name) = &input.nonlinear {
        let map = NonlinearMap::builtin(name).ok_or_else(|| Failure::usage(format!("unknown map `{name}`")))?;
        return Ok(Some(FixedPointProblem::nonlinear(map, x0(input.dim)?)));
    }
    Ok(None)
}

fn count_sources(input: &InputArgs) -> usize {
    [input.sequence.is_some(), input.linear.is_some(), input.nonlinear.is_some()].iter().filter(|b| **b).count()
}

/// The sequence to extrapolate, and the problem that generated it.
fn load_input(input: &InputArgs, k_max: usize) -> Result<(Vec<CVector>, Option<FixedPointProblem>), Failure> {
    if count_sources(input) != 1 {
        return Err(Failure::usage("give exactly one of --sequence, --linear, --nonlinear"));
    }
    if let Some(path) = &input.sequence {
        return Ok((io::read_sequence(path).at("loading sequence")?, None));
    }
    let p = load_problem(input)?.expect("one source is present");
    let xs = harness::iterate(&p, input.iters.unwrap_or(k_max + 1)).at("iterating")?;
    Ok((xs.into_vectors(), Some(p)))
}

fn run_history(input: &InputArgs, run: &RunArgs) -> Result<(RunHistory, WeightOperator), Failure> {
    let (xs, _) = load_input(input, run.k_max)?;
    let dim = xs[0].len();
    let w = run.weight.load(dim).at("loading weight")?;
    let h = extrap::run(&xs, &w, run.k_max, run.methods.into(), &run.tolerances()).at("extrapolation")?;
    Ok((h, w))
}

fn accelerate(a: &AccelerateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (h, w) = run_history(&a.input, &a.run)?;
    let flags = relations::stagnation_flags(&h, &w, a.run.tau_stag).at("stagnation check")?;
    let _ = writeln!(out, "{:>4}  {:<16}  RRE", "k", "MPE");
    for (rec, flag) in h.records.iter().zip(&flags) {
        let tag = if flag.stagnates { " (stagnated)" } else { "" };
        let _ = writeln!(out, "{:>4}  {:<16}  {:.6e}{}", rec.k, fmt_opt(rec.phi_mpe), rec.phi_rre, tag);
    }
    let _ = writeln!(out, "{}", status_line(h.status));

    let base = output_path(&a.output, "history.json");
    if matches!(a.format, Format::Json | Format::Both) {
        let path = base.with_extension("json");
        io::save_history(&path, &h).at("writing history")?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    if matches!(a.format, Format::Csv | Format::Both) {
        let path = base.with_extension("csv");
        io::write_text(&path, &io::history_to_csv(&h)).at("writing history")?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(0)
}

fn print_relations(r: &RelationReport, out: &mut dyn Write) {
    let _ = writeln!(
        out,
        "{:>4} {:>6} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>4}",
        "k", "exists", "stag", "master", "embed", "phi", "resid", "extrap", "ratio", "sum", "mono"
    );
    for e in &r.entries {
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>4}",
            e.k,
            e.mpe_exists,
            e.stagnation_detected,
            fmt_check(e.master_identity),
            fmt_check(e.gamma_embedding),
            fmt_check(e.phi_coupling),
            fmt_check(e.residual_coupling),
            fmt_check(e.extrapolant_coupling),
            fmt_check(e.mpe_from_rre_ratio),
            fmt_check(e.rre_from_mpe_sum),
            if e.monotone { "ok" } else { "FAIL" },
        );
    }
    let pp = &r.peak_plateau;
    let _ = writeln!(out, "peaks: {:?}  plateaus: {:?}  overlaps: {:?}", pp.peaks, pp.plateaus, pp.overlaps);
}

fn verify_relations(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let tol = a.run.tolerances();
    let (h, w) = match &a.history {
        Some(path) => {
            if count_sources(&a.input) != 0 {
                return Err(Failure::usage("--history excludes --sequence, --linear and --nonlinear"));
            }
            let h = io::load_history(path).at("loading history")?;
            let w = a.run.weight.load(h.dim).at("loading weight")?;
            (h, w)
        }
        None => run_history(&a.input, &a.run)?,
    };
    let report = relations::verify(&h, &w, &tol, a.defect_tol).at("relations")?;
    print_relations(&report, out);
    let path = output_path(&a.output, "relations.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::new("writing report", e.into()))?;
    io::write_text(&path, &(json + "\n")).at("writing report")?;
    let _ = writeln!(out, "wrote {}", path.display());

    let failures = report.failures();
    if failures.is_empty() {
        let _ = writeln!(out, "PASS: all defects <= {:e}", a.defect_tol);
        return Ok(0);
    }
    for f in &failures {
        let _ = writeln!(out, "defect: {} at k = {}: {:.3e}", f.relation, f.k, f.value);
    }
    let worst = report.worst().expect("failures are nonempty");
    let _ = writeln!(out, "FAIL: worst {} at k = {}: {:.3e}", worst.relation, worst.k, worst.value);
    Ok(1)
}

fn krylov_compare(a: &KrylovArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if count_sources(&a.input) != 1 {
        return Err(Failure::usage("give exactly one of --sequence, --linear, --nonlinear"));
    }
    if a.input.linear.is_none() {
        return Err(Failure::new("krylov-compare", Error::NotLinear));
    }
    let p = load_problem(&a.input)?.expect("linear problem");
    let ProblemKind::Linear { t, d } = &p.kind else {
        return Err(Failure::new("krylov-compare", Error::NotLinear));
    };
    let w = a.run.weight.load(p.dim()).at("loading weight")?;
    let report = krylov::equivalence_check(t, d, &p.x0, &w, a.run.k_max, &a.run.tolerances()).at("krylov-compare")?;

    let _ = writeln!(out, "{:>4} {:>6} {:>6} {:>12} {:>12}", "k", "mpe", "fom", "|FOM-MPE|", "|GMR-RRE|");
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>6} {:>12} {:>12}",
            e.k,
            e.mpe_exists,
            e.fom_defined,
            fmt_check(e.fom_vs_mpe),
            fmt_check(e.gmr_vs_rre)
        );
    }
    let path = output_path(&a.output, "krylov.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::new("writing report", e.into()))?;
    io::write_text(&path, &(json + "\n")).at("writing report")?;
    let _ = writeln!(out, "wrote {}", path.display());

    let worst = report.max_solution_defect();
    if worst < a.tol && report.existence_consistent() {
        let _ = writeln!(out, "PASS: max defect {worst:.3e}");
        Ok(0)
    } else {
        let _ = writeln!(
            out,
            "FAIL: max defect {worst:.3e}, existence consistent: {}",
            report.existence_consistent()
        );
        Ok(1)
    }
}

fn qr(a: &QrArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let m = io::read_matrix_market(&a.matrix).at("loading matrix")?.to_dense();
    let w = a.weight.load(m.nrows()).at("loading weight")?;
    let cols: Vec<CVector> = m.column_iter().map(|c| c.into_owned()).collect();
    let opts = QrOptions { rank_tol: a.tau_rank, reorthogonalize: a.reorthogonalize };
    let f = match a.method {
        QrMethod::Mgs => wqr::mgs_factorize(&cols, &w, &opts),
        QrMethod::Gs => wqr::gs_factorize(&cols, &w, &opts),
    };
    let f = match f {
        Ok(f) => f,
        Err(Error::RankDeficient { column }) => {
            let _ = writeln!(out, "rank deficient: detected k0 = {column}");
            return Err(Failure::new("factorization", Error::RankDeficient { column }));
        }
        Err(e) => return Err(Failure::new("factorization", e)),
    };
    let dir = a.output_dir.clone().unwrap_or_else(output_dir);
    let (qp, rp) = (dir.join("Q.mtx"), dir.join("R.mtx"));
    io::write_matrix_market(&qp, &f.q_matrix()).at("writing Q")?;
    io::write_matrix_market(&rp, f.r()).at("writing R")?;
    let _ = writeln!(out, "wrote {}", qp.display());
    let _ = writeln!(out, "wrote {}", rp.display());
    if a.check {
        let _ = writeln!(out, "Q*MQ deviation: {:.3e}", f.orthogonality_deviation());
        let _ = writeln!(out, "reconstruction error: {:.3e}", f.reconstruction_error(&cols));
    }
    Ok(0)
}
