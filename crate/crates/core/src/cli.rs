//! Command-line front end.
//!
//! Exit codes: 0 on success or a passing check, 1 when a check fails, 2 on
//! usage or input errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alloc::{AllocationDescriptor, AllocationRule};
use crate::audit::{full_audit, AuditReport, Mechanism, DEFAULT_AUDIT_GRID_N};
use crate::dist::{check_dmr, ValueDistribution};
use crate::error::Error;
use crate::optimal::{optimal_mechanism, structural_audit, BoundaryCase};
use crate::payment::{fmt_sig, payment_schedule, PaymentSchedule, RoiTarget, DEFAULT_GRID_N};
use crate::revenue::{compare, expected_revenue_quadrature, myerson_baseline};

#[derive(Debug, Parser)]
#[command(name = "roi-auction", version, about = "Truthful auctions for ex post ROI-constrained bidders")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// ROI target M (> 1).
    #[arg(long = "m", global = true)]
    pub m: Option<f64>,
    /// Payment schedule grid size.
    #[arg(long, global = true, env = "ROI_AUCTION_DEFAULT_GRID", default_value_t = DEFAULT_GRID_N)]
    pub grid: usize,
    /// Numerical tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    /// Monte Carlo seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo sample count; 0 disables sampling.
    #[arg(long = "mc-samples", global = true, default_value_t = 0)]
    pub mc_samples: usize,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a distribution for decreasing marginal revenue.
    DmrCheck { dist: PathBuf },
    /// Solve for the revenue-optimal mechanism; writes a solution JSON and
    /// its payment CSV next to it.
    Solve { dist: PathBuf },
    /// Tabulate truthful payments for an allocation rule.
    PaymentTable { alloc: PathBuf },
    /// Audit an allocation rule or a solved mechanism.
    Audit {
        file: PathBuf,
        /// Number of value grid points audited.
        #[arg(long = "audit-grid", default_value_t = DEFAULT_AUDIT_GRID_N)]
        audit_grid: usize,
    },
    /// Compare the posted-price baseline with the ROI-optimal mechanism.
    Compare { dist: PathBuf },
    /// Reproduce the uniform example with M = 2.
    Example1,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotDmr { .. } | Error::Dominance { .. } => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Output of a command: text destined for stdout or `--out`, and the exit
/// code once it is written.
struct Outcome {
    body: String,
    code: u8,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    ExitCode::from(run(&cli))
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: &Cli) -> u8 {
    let g = &cli.global;
    let result = validate(g).and_then(|()| match &cli.command {
        Command::DmrCheck { dist } => cmd_dmr_check(g, dist),
        Command::Solve { dist } => cmd_solve(g, dist),
        Command::PaymentTable { alloc } => cmd_payment_table(g, alloc),
        Command::Audit { file, audit_grid } => cmd_audit(g, file, *audit_grid),
        Command::Compare { dist } => cmd_compare(g, dist),
        Command::Example1 => cmd_example1(g),
    });
    match result.and_then(|o| emit(g, o)) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn validate(g: &GlobalArgs) -> CliResult<()> {
    if g.grid < 2 {
        return Err(Failure::input(format!("--grid must be >= 2, got {}", g.grid)));
    }
    if !(g.tol > 0.0) {
        return Err(Failure::input(format!("--tol must be positive, got {}", g.tol)));
    }
    Ok(())
}

fn emit(g: &GlobalArgs, o: Outcome) -> CliResult<u8> {
    match &g.out {
        Some(path) if !o.body.is_empty() => {
            fs::write(path, &o.body).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
        }
        _ => print!("{}", o.body),
    }
    Ok(o.code)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_dist(path: &Path) -> CliResult<ValueDistribution> {
    Ok(ValueDistribution::from_json(&read(path)?)?)
}

fn roi_target(g: &GlobalArgs) -> CliResult<RoiTarget> {
    let m = g.m.ok_or_else(|| Failure::input("--m is required"))?;
    Ok(RoiTarget::new(m)?)
}

/// Rounds every float in a JSON tree to 12 significant digits.
fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = fmt_sig(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json<T: Serialize>(x: &T) -> String {
    let mut v = serde_json::to_value(x).expect("serializable");
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

fn cmd_dmr_check(g: &GlobalArgs, dist: &Path) -> CliResult<Outcome> {
    let d = load_dist(dist)?;
    let report = check_dmr(&d, g.grid)?;
    let code = if report.pass { 0 } else { 1 };
    let body = match g.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&report),
        Format::Csv => format!(
            "pass,grid_n,tolerance,worst_decrease,location\n{},{},{},{},{}\n",
            report.pass,
            report.grid_n,
            fmt_sig(report.tolerance),
            fmt_sig(report.worst_decrease),
            report.location.map(fmt_sig).unwrap_or_default()
        ),
        Format::Text => {
            let mut s = format!("DMR: {}\n", if report.pass { "PASS" } else { "FAIL" });
            if let (Some(a), Some(b)) = (report.violation_start, report.violation_end) {
                let _ = writeln!(s, "psi decreases on [{}, {}]", fmt_sig(a), fmt_sig(b));
            }
            let _ = writeln!(
                s,
                "worst decrease {} at v = {}",
                fmt_sig(report.worst_decrease),
                report.location.map(fmt_sig).unwrap_or("-".into())
            );
            s
        }
    };
    Ok(Outcome { body, code })
}

/// Solution file written by `solve` and read back by `audit`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    #[serde(rename = "D")]
    pub threshold: f64,
    pub boundary_case: BoundaryCase,
    pub revenue: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub allocation: AllocationDescriptor,
    pub schedule_csv_path: String,
}

fn cmd_solve(g: &GlobalArgs, dist: &Path) -> CliResult<Outcome> {
    let d = load_dist(dist)?;
    let m = roi_target(g)?;
    let sol = optimal_mechanism(&d, m, g.grid, g.tol)?;
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    let json_path = g.out.clone().unwrap_or_else(|| PathBuf::from("solution.json"));
    let csv_path = json_path.with_extension("csv");
    let csv_name = csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let file = SolutionFile {
        threshold: sol.threshold,
        boundary_case: sol.boundary_case,
        revenue: sol.expected_revenue,
        m: m.get(),
        allocation: sol.mechanism.allocation.clone().into(),
        schedule_csv_path: csv_name,
    };
    let write = |p: &Path, s: &str| fs::write(p, s).map_err(|e| Failure::input(format!("{}: {e}", p.display())));
    write(&csv_path, &sol.mechanism.schedule.to_csv())?;
    write(&json_path, &to_json(&file))?;
    let body = match g.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&file),
        Format::Csv => format!(
            "D,boundary_case,revenue\n{},{},{}\n",
            fmt_sig(sol.threshold),
            sol.boundary_case,
            fmt_sig(sol.expected_revenue)
        ),
        Format::Text => format!(
            "D = {}\nboundary_case = {}\nrevenue = {}\nwrote {} and {}\n",
            fmt_sig(sol.threshold),
            sol.boundary_case,
            fmt_sig(sol.expected_revenue),
            json_path.display(),
            csv_path.display()
        ),
    };
    // The solution file already went to --out; the summary goes to stdout.
    print!("{body}");
    Ok(Outcome { body: String::new(), code: 0 })
}

fn cmd_payment_table(g: &GlobalArgs, alloc: &Path) -> CliResult<Outcome> {
    let a = AllocationRule::from_json(&read(alloc)?)?;
    let m = roi_target(g)?;
    let mono = a.check_monotone(g.grid)?;
    if !mono.pass {
        return Err(Failure::check(format!(
            "allocation is not monotone: drops by {} at v = {}",
            fmt_sig(mono.worst_violation),
            mono.location.map(fmt_sig).unwrap_or_default()
        )));
    }
    let schedule = payment_schedule(&a, m, g.grid)?;
    let body = match g.format.unwrap_or(Format::Csv) {
        Format::Json => {
            let cols = serde_json::json!({
                "v": schedule.grid,
                "x": schedule.allocation,
                "p_myerson": schedule.myerson,
                "p_roi": schedule.payments,
                "rebate": schedule.rebate,
            });
            to_json(&cols)
        }
        Format::Csv | Format::Text => schedule.to_csv(),
    };
    Ok(Outcome { body, code: 0 })
}

/// Reads either a solution file (allocation plus payment CSV) or a bare
/// allocation descriptor, which is priced truthfully with `--m`.
fn load_mechanism(g: &GlobalArgs, path: &Path) -> CliResult<Mechanism> {
    let text = read(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if value.get("allocation").is_some() {
        let sol: SolutionFile =
            serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let a = AllocationRule::try_from(sol.allocation)?;
        let m = match g.m {
            Some(m) => RoiTarget::new(m)?,
            None => RoiTarget::new(sol.m)?,
        };
        let csv = path.parent().unwrap_or(Path::new(".")).join(&sol.schedule_csv_path);
        let schedule = PaymentSchedule::from_csv(&read(&csv)?, a.vmax(), m)?;
        Ok(Mechanism::with_schedule(a, schedule)?)
    } else {
        let a = AllocationRule::from_json(&text)?;
        Ok(Mechanism::truthful(a, roi_target(g)?, g.grid)?)
    }
}

fn audit_text(report: &AuditReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        let _ =
            write!(s, "{:<18} {}  worst {}", c.name, if c.pass { "PASS" } else { "FAIL" }, fmt_sig(c.worst_violation));
        for (k, v) in &c.witness {
            let _ = write!(s, "  {k}={}", fmt_sig(*v));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "audit: {}", if report.pass() { "PASS" } else { "FAIL" });
    s
}

fn cmd_audit(g: &GlobalArgs, file: &Path, audit_grid: usize) -> CliResult<Outcome> {
    if audit_grid < 2 {
        return Err(Failure::input("--audit-grid must be >= 2"));
    }
    let mech = load_mechanism(g, file)?;
    let report = full_audit(&mech, audit_grid, g.tol)?;
    let code = if report.pass() { 0 } else { 1 };
    let body = match g.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut s = String::from("name,pass,worst_violation\n");
            for c in &report.checks {
                let _ = writeln!(s, "{},{},{}", c.name, c.pass, fmt_sig(c.worst_violation));
            }
            s
        }
        Format::Text => audit_text(&report),
    };
    Ok(Outcome { body, code })
}

fn cmd_compare(g: &GlobalArgs, dist: &Path) -> CliResult<Outcome> {
    let d = load_dist(dist)?;
    let m = roi_target(g)?;
    let table = compare(&d, m, g.mc_samples, g.seed, g.grid, g.tol)?;
    let body = match g.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&table),
        Format::Csv => table.to_csv(),
        Format::Text => table.to_string(),
    };
    Ok(Outcome { body, code: 0 })
}

/// Published values for the uniform example with `M = 2`.
const EXAMPLE1: [(&str, f64); 5] =
    [("Myerson", 0.25), ("ROI-optimal", 0.375), ("D", 0.75), ("slope", 4.0 / 3.0), ("price above D", 0.75)];
const EXAMPLE1_TOL: f64 = 1e-6;

fn cmd_example1(g: &GlobalArgs) -> CliResult<Outcome> {
    let m = match g.m {
        Some(m) => RoiTarget::new(m)?,
        None => RoiTarget::new(2.0)?,
    };
    let d = ValueDistribution::uniform(1.0)?;
    let base = myerson_baseline(&d, m, g.grid)?;
    let myerson = expected_revenue_quadrature(&base.mechanism, &d)?.mean;
    let sol = optimal_mechanism(&d, m, g.grid, g.tol)?;
    let dd = sol.threshold;
    let a = &sol.mechanism.allocation;
    let slope = a.eval(0.5 * dd) / (0.5 * dd);
    let above = sol.mechanism.payment(0.5 * (dd + 1.0));
    let mut report = full_audit(&sol.mechanism, DEFAULT_AUDIT_GRID_N, g.tol)?;
    report.checks.extend(structural_audit(&sol, DEFAULT_AUDIT_GRID_N)?.checks);
    let got = [myerson, sol.expected_revenue, dd, slope, above];

    let e = 1.0 / (m.get() - 1.0);
    let mut body = String::new();
    let _ = writeln!(body, "Uniform[0, 1], M = {m}");
    let _ = writeln!(body, "posted price r* = {:.6}", base.price);
    let _ = writeln!(body, "x(v) = (v / {dd:.6})^{e:.6} for v < D, 1 above");
    let _ = writeln!(body, "p(v) = v * x(v) for v < D, {dd:.6} above");
    let audit = if report.pass() { "PASS" } else { "FAIL" };
    let _ =
        writeln!(body, "Myerson: {myerson:.6}, ROI-optimal: {:.6}, D = {dd:.6}, audit: {audit}", sol.expected_revenue);

    let mismatches: Vec<String> = EXAMPLE1
        .iter()
        .zip(got)
        .filter(|((_, want), have)| (have - want).abs() > EXAMPLE1_TOL)
        .map(|((name, want), have)| format!("{name}: got {have:.9}, expected {want:.9}, delta {:+.3e}", have - want))
        .collect();
    for line in &mismatches {
        let _ = writeln!(body, "mismatch {line}");
    }
    if !report.pass() {
        body.push_str(&audit_text(&report));
    }
    let code = if mismatches.is_empty() && report.pass() { 0 } else { 1 };
    Ok(Outcome { body, code })
}
