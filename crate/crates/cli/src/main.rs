//! `hanner`: certify, map and hunt Hessian signs; check the inequality on step functions.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hanner_core::explorer::{
    certify_regime, emit_report, open_range_hunt, sign_map, PRange, ReportFormat, SweepConfig,
    XSampling,
};
use hanner_core::hanner::{theorem_check, CheckVerdict, StepFunction};
use hanner_core::selftest::{run_selftest, BetaTable, SelftestOptions};
use hanner_core::{HannerError, PhiEvaluator, SweepReport};

const OK: u8 = 0;
const USAGE: u8 = 1;
const VIOLATION: u8 = 2;
const IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hanner",
    version,
    about = "Numerical checks of the many-function Hanner inequality with spherical coefficients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the predicted Hessian verdict at random weight vectors.
    Certify(CertifyArgs),
    /// Map the signs of the cross expectations E_kl over a simplex grid.
    Signmap(GridArgs),
    /// Search the open ranges for wrong-sign E_kl and record the Hessian verdict at each.
    Hunt(GridArgs),
    /// Compare both sides of the inequality for step functions read from a JSON file.
    Hanner(HannerArgs),
    /// Run the built-in golden-value suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Regime {
    /// Exponent p (first value when --p-stop is given).
    #[arg(long, allow_negative_numbers = true)]
    p: f64,
    /// Last exponent of a p range.
    #[arg(long)]
    p_stop: Option<f64>,
    /// Step of a p range.
    #[arg(long, default_value_t = 0.1)]
    p_step: f64,
    /// Sphere dimension(s), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<usize>,
    /// Number(s) of weights, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Quadrature order per coordinate; picked from n when omitted.
    #[arg(long)]
    order: Option<usize>,
    /// Relative tolerance for signs and eigenvalues.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Monte Carlo samples used to confirm wrong-sign entries.
    #[arg(long, default_value_t = 1_000_000)]
    mc_samples: u64,
    /// Random seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct Output {
    /// Report format.
    #[arg(long, default_value = "json", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    regime: Regime,
    /// Number of random weight vectors.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Smallest weight drawn (log-uniform).
    #[arg(long, default_value_t = 0.1)]
    x_low: f64,
    /// Largest weight drawn (log-uniform).
    #[arg(long, default_value_t = 3.0)]
    x_high: f64,
    /// Allow regimes where the verdict is not a theorem.
    #[arg(long)]
    open_range: bool,
    /// Report path; on a violation without it the report goes to the temp directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    regime: Regime,
    /// Simplex grid step; every weight is a positive multiple of it.
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct HannerArgs {
    /// JSON file holding a list of step functions, each a list of [length, value] pairs.
    #[arg(long)]
    functions: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    p: f64,
    #[arg(long)]
    d: usize,
    /// Quadrature order per coordinate; picked from n when omitted.
    #[arg(long)]
    order: Option<usize>,
    /// Absolute tolerance on the margin.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Random seed (the check itself is deterministic).
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run only the suites whose name contains this string.
    #[arg(long)]
    filter: Option<String>,
    /// Random seed (each case fixes its own streams).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replace the beta table with a wrong one; the run must fail.
    #[arg(long, hide = true)]
    inject_wrong_beta: bool,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: HannerError| e.to_string())
}

fn error_code(e: &HannerError) -> u8 {
    match e {
        HannerError::Io { .. } => IO,
        HannerError::Accuracy { .. } | HannerError::Numeric(_) | HannerError::Singularity(_) => {
            VIOLATION
        }
        _ => USAGE,
    }
}

fn fail(e: HannerError) -> u8 {
    eprintln!("error: {e}");
    error_code(&e)
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("HANNER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("HANNER_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("HANNER_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn sweep_config(r: &Regime, x: XSampling, open_range: bool) -> SweepConfig {
    let p = match r.p_stop {
        Some(stop) => PRange {
            start: r.p,
            stop,
            step: r.p_step,
        },
        None => PRange::single(r.p),
    };
    SweepConfig {
        p,
        d: r.d.clone(),
        n: r.n.clone(),
        x,
        order: r.order,
        mc_samples: r.mc_samples,
        seed: r.seed,
        tol: r.tol,
        open_range,
    }
}

fn print_summary(report: &SweepReport) {
    let s = &report.summary;
    println!("points: {}", s.points);
    for (v, c) in &s.verdicts {
        println!("verdict {v}: {c}");
    }
    for (st, c) in &s.statuses {
        println!("status {st}: {c}");
    }
    if s.zero_hessians > 0 {
        println!("zero hessians: {}", s.zero_hessians);
    }
    if let (Some(lo), Some(hi)) = (s.ekl_over_scale_min, s.ekl_over_scale_max) {
        println!("E_kl / scale in [{lo:e}, {hi:e}]");
    }
    if !s.witnesses.is_empty() {
        println!("witnesses: {:?}", s.witnesses);
    }
    if !s.violations.is_empty() {
        println!("violations: {:?}", s.violations);
    }
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn write(report: &SweepReport, path: &Path, format: ReportFormat) -> Result<(), u8> {
    emit_report(report, path, format).map_err(fail)?;
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> u8 {
    println!("seed: {}", a.regime.seed);
    let x = XSampling::LogUniform {
        count: a.trials,
        low: a.x_low,
        high: a.x_high,
    };
    let cfg = sweep_config(&a.regime, x, a.open_range);
    let report = match certify_regime(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    print_summary(&report);
    let violated = !report.summary.violations.is_empty();
    let path = match (&a.out, violated) {
        (Some(p), _) => Some(p.clone()),
        (None, true) => Some(std::env::temp_dir().join(format!(
            "hanner-certify-{}.{}",
            a.regime.seed,
            extension(a.output.format)
        ))),
        (None, false) => None,
    };
    if let Some(path) = path {
        if let Err(code) = write(&report, &path, a.output.format) {
            return code;
        }
    }
    if violated {
        eprintln!("{} tolerance violation(s)", report.summary.violations.len());
        VIOLATION
    } else {
        OK
    }
}

fn extension(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    }
}

fn cmd_grid(a: GridArgs, hunt: bool) -> u8 {
    println!("seed: {}", a.regime.seed);
    let cfg = sweep_config(&a.regime, XSampling::Simplex { step: a.grid_step }, false);
    let result = if hunt {
        open_range_hunt(&cfg)
    } else {
        sign_map(&cfg)
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    print_summary(&report);
    match write(&report, &a.out, a.output.format) {
        Ok(()) if report.summary.violations.is_empty() => OK,
        Ok(()) => VIOLATION,
        Err(code) => code,
    }
}

fn cmd_hanner(a: HannerArgs) -> u8 {
    println!("seed: {}", a.seed);
    let bytes = match std::fs::read(&a.functions) {
        Ok(b) => b,
        Err(source) => {
            return fail(HannerError::Io {
                path: a.functions.clone(),
                source,
            })
        }
    };
    let fs: Vec<StepFunction> = match serde_json::from_slice(&bytes) {
        Ok(v) => v,
        Err(e) => {
            eprintln!(
                "error: {}: line {}, column {}: {e}",
                a.functions.display(),
                e.line(),
                e.column()
            );
            return USAGE;
        }
    };
    let eval = match a.order {
        Some(m) if a.d >= 2 => PhiEvaluator::with_order(a.d, m),
        _ => PhiEvaluator::for_dim(a.d),
    };
    let rec = match theorem_check(&fs, a.p, a.d, &eval, a.tol) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    println!("lhs: {:e}", rec.lhs);
    println!("rhs: {:e}", rec.rhs);
    println!("margin: {:e}", rec.margin);
    println!("verdict: {}", rec.verdict);
    if rec.verdict == CheckVerdict::Fail {
        VIOLATION
    } else {
        OK
    }
}

fn cmd_selftest(a: SelftestArgs) -> u8 {
    println!("seed: {}", a.seed);
    let opts = SelftestOptions {
        filter: a.filter,
        beta_table: if a.inject_wrong_beta {
            BetaTable::Wrong
        } else {
            BetaTable::Correct
        },
    };
    let out = run_selftest(&opts);
    for c in out.cases.iter().filter(|c| !c.passed) {
        println!("FAIL {}::{}: {}", c.suite, c.name, c.detail);
    }
    for (suite, passed, failed) in out.per_suite() {
        println!("{suite}: {passed} passed, {failed} failed");
    }
    if out.cases.is_empty() {
        println!("no suite matches the filter");
    }
    if out.all_passed() {
        OK
    } else {
        VIOLATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(USAGE);
    }
    let start = Instant::now();
    let code = match cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Signmap(a) => cmd_grid(a, false),
        Command::Hunt(a) => cmd_grid(a, true),
        Command::Hanner(a) => cmd_hanner(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    eprintln!("wall time: {:.2} s", start.elapsed().as_secs_f64());
    ExitCode::from(code)
}
