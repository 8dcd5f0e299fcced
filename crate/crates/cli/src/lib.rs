//! Command-line front end: nominal and robust solves, worst-case
//! evaluation, benchmark generation, the seven-state reference grid and
//! bound sweeps over larger machine-replacement instances.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use rcmdp::bench::{
    machine_replacement_instance, machine_replacement_uncertainty, table1_protocol, Expected, GammaMode,
    MachineReplacementConfig, SetBlock,
};
use rcmdp::conic::ConicStatus;
use rcmdp::occupation::solve_nominal;
use rcmdp::robust::{
    certify_solution, solve_robust_global, worst_case_costs, Budget, Form, RobustInstance, RobustSolveReport,
    SolveStatus,
};
use rcmdp::{CmdpModel, StationaryPolicy, UncertaintySet};

/// Default directory for reports when `--out` is not given.
pub const OUT_DIR_ENV: &str = "RCMDP_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rcmdp", version, about = "Robust constrained MDP solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the occupation-measure LP under the nominal kernel.
    SolveNominal(SolveNominalArgs),
    /// Worst-case objective and constraint costs of a fixed policy.
    WorstCase(WorstCaseArgs),
    /// Global solve of the robust problem.
    SolveRobust(SolveRobustArgs),
    /// Write benchmark instances as JSON.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Re-run rows of the seven-state reference table.
    Table1(Table1Args),
    /// Lower and upper bounds over a grid of discount factors, scales and radii.
    BoundsSweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    MachineReplacement(BenchWriteArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Standard,
    Pmin,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Standard => Form::Standard,
            FormArg::Pmin => Form::Pmin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GammaArg {
    Start,
    Uniform,
}

/// Machine-replacement parameters.
#[derive(Debug, Clone, Args)]
pub struct BenchParams {
    /// Number of states (at least 7).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Radius of the per-state norm balls; omitted means no ball.
    #[arg(long)]
    pub ynorm: Option<f64>,
    #[arg(long, default_value_t = 0.6)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = GammaArg::Start)]
    pub gamma: GammaArg,
    /// Constraint bound; defaults to 170 for seven states and 300 otherwise.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Comma-separated subset of 11a,11b,11c,11d,norm.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<String>>,
    /// Seed for the random costs of instances with more than seven states.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl BenchParams {
    pub fn config(&self) -> anyhow::Result<MachineReplacementConfig> {
        let n = self.n.context("--n is required for benchmark instances")?;
        let mut cfg = MachineReplacementConfig::new(n, self.sigma, self.ynorm);
        cfg.alpha = self.alpha;
        cfg.gamma = match self.gamma {
            GammaArg::Start => GammaMode::Start,
            GammaArg::Uniform => GammaMode::Uniform,
        };
        if let Some(xi) = self.xi {
            cfg.xi1 = xi;
        }
        if let Some(blocks) = &self.blocks {
            let parsed: Vec<SetBlock> = blocks.iter().map(|b| b.parse()).collect::<Result<_, _>>()?;
            cfg.coupling = parsed.contains(&SetBlock::MinorRepair);
            cfg = cfg.with_blocks(&parsed);
        }
        cfg.cost_seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where the instance comes from: JSON files or benchmark parameters.
#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Model JSON file.
    #[arg(long, conflicts_with = "n")]
    pub instance: Option<PathBuf>,
    /// Uncertainty JSON file; without it the set is `{0}`.
    #[arg(long, requires = "instance")]
    pub uncertainty: Option<PathBuf>,
    #[command(flatten)]
    pub bench: BenchParams,
}

impl Source {
    fn model(&self) -> anyhow::Result<CmdpModel> {
        match (&self.instance, self.bench.n) {
            (Some(path), None) => Ok(CmdpModel::load(path).with_context(|| format!("reading {}", path.display()))?),
            (None, Some(_)) => Ok(machine_replacement_instance(&self.bench.config()?)?),
            _ => bail!("give exactly one of --instance or --n"),
        }
    }

    fn load(&self) -> anyhow::Result<(CmdpModel, UncertaintySet)> {
        let model = self.model()?;
        let uset = match (&self.uncertainty, self.bench.n) {
            (Some(path), _) => {
                UncertaintySet::load(&model, path).with_context(|| format!("reading {}", path.display()))?
            }
            (None, Some(_)) => machine_replacement_uncertainty(&self.bench.config()?, &model)?,
            (None, None) => UncertaintySet::zero(&model),
        };
        Ok((model, uset))
    }
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Report path; defaults to a file in $RCMDP_OUT_DIR when that is set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Output {
    fn target(&self, stem: &str) -> Option<(PathBuf, Format)> {
        let path = match &self.out {
            Some(p) => p.clone(),
            None => {
                let dir = std::env::var_os(OUT_DIR_ENV)?;
                let ext = if self.format == Some(Format::Csv) {
                    "csv"
                } else {
                    "json"
                };
                Path::new(&dir).join(format!("{stem}.{ext}"))
            }
        };
        let format = self
            .format
            .unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
                Some("csv") => Format::Csv,
                _ => Format::Json,
            });
        Some((path, format))
    }
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    /// Wall-clock limit in seconds; bounds are reported when it expires.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    pub node_limit: usize,
    /// Relative gap at which the search stops.
    #[arg(long, default_value_t = 1e-4)]
    pub gap: f64,
    /// Write the node trace to this CSV file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

impl BudgetArgs {
    pub fn budget(&self) -> Budget {
        Budget {
            time_limit: self.time_limit,
            node_limit: self.node_limit,
            gap_target: self.gap,
            trace: self.trace.is_some(),
            ..Budget::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveNominalArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct WorstCaseArgs {
    #[command(flatten)]
    pub source: Source,
    /// Policy JSON file (`{"rows": [[...], ...]}`).
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct SolveRobustArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct BenchWriteArgs {
    #[command(flatten)]
    pub params: BenchParams,
    /// Directory for model.json and uncertainty.json; defaults to $RCMDP_OUT_DIR or the current directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Table1Args {
    /// One-based row numbers; all rows when omitted.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.6")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub sigmas: Vec<f64>,
    /// Norm radii; `none` leaves the balls out.
    #[arg(long, value_delimiter = ',', default_value = "none")]
    pub ynorms: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: Output,
}

/// Context columns that accompany a report in CSV form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub ynorm: Option<f64>,
}

fn fmt4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

/// Probability of each state's second action, or empty for single-action states.
fn repair_columns(policy: Option<&StationaryPolicy>, n_states: usize) -> Vec<String> {
    match policy {
        Some(p) => p
            .rows()
            .iter()
            .map(|r| r.get(1).map(|v| fmt4(*v)).unwrap_or_default())
            .collect(),
        None => vec![String::new(); n_states],
    }
}

pub fn csv_header(n_states: usize) -> String {
    let mut h = String::from("alpha,sigma,ynorm,lb,ub,gap_percent,status");
    for s in 1..=n_states {
        let _ = write!(h, ",repair_s{s}");
    }
    h
}

pub fn csv_row(report: &RobustSolveReport, ctx: &ReportContext, n_states: usize) -> String {
    let mut cols = vec![
        opt4(ctx.alpha),
        opt4(ctx.sigma),
        ctx.ynorm.map(fmt4).unwrap_or_else(|| "none".into()),
        fmt4(report.lower_bound),
        fmt4(report.upper_bound),
        fmt4(report.gap_percent),
        report.status.to_string(),
    ];
    cols.extend(repair_columns(report.policy.as_ref(), n_states));
    cols.join(",")
}

/// Writes `reports` as JSON (an array mirroring the solve reports) or CSV.
pub fn emit_reports(
    reports: &[(ReportContext, RobustSolveReport)],
    n_states: usize,
    format: Format,
    path: &Path,
) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = match format {
        Format::Json => {
            let items: Vec<&RobustSolveReport> = reports.iter().map(|r| &r.1).collect();
            if items.len() == 1 {
                serde_json::to_string_pretty(items[0])?
            } else {
                serde_json::to_string_pretty(&items)?
            }
        }
        Format::Csv => {
            let mut out = csv_header(n_states);
            out.push('\n');
            for (ctx, r) in reports {
                out.push_str(&csv_row(r, ctx, n_states));
                out.push('\n');
            }
            out
        }
    };
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn emit_report(
    report: &RobustSolveReport,
    ctx: &ReportContext,
    n_states: usize,
    format: Format,
    path: &Path,
) -> anyhow::Result<()> {
    emit_reports(&[(*ctx, report.clone())], n_states, format, path)
}

fn instance(model: CmdpModel, uset: UncertaintySet, form: Option<FormArg>) -> anyhow::Result<RobustInstance> {
    Ok(RobustInstance::new(model, uset, form.map(Form::from))?)
}

fn print_report(report: &RobustSolveReport) {
    println!("status {}", report.status);
    println!("form {}", report.form);
    println!("lower_bound {}", fmt4(report.lower_bound));
    println!("upper_bound {}", fmt4(report.upper_bound));
    println!("gap_percent {}", fmt4(report.gap_percent));
    println!("nodes {}", report.nodes);
    for (k, d) in report.worst_constraints.iter().enumerate() {
        println!("d{} {}", k + 1, fmt4(*d));
    }
    if let Some(p) = &report.policy {
        for (s, row) in p.rows().iter().enumerate() {
            let probs: Vec<String> = row.iter().map(|v| fmt4(*v)).collect();
            println!("policy s{} {}", s + 1, probs.join(" "));
        }
    }
    if let Some(p1) = &report.phase1 {
        println!("phase1_lower_bound {}", fmt4(p1.lower_bound));
    }
}

#[derive(Debug, Serialize)]
struct NominalOutput {
    status: String,
    value: f64,
    policy: Option<StationaryPolicy>,
    rho: Option<Vec<f64>>,
}

fn solve_nominal_cmd(args: &SolveNominalArgs) -> anyhow::Result<i32> {
    let model = args.source.model()?;
    let sol = solve_nominal(&model)?;
    let status = match sol.status {
        ConicStatus::Optimal => "optimal",
        ConicStatus::Infeasible => "infeasible",
        ConicStatus::Unbounded => "unbounded",
        ConicStatus::NumericalFailure => "numerical_failure",
    };
    println!("status {status}");
    if sol.status == ConicStatus::Optimal {
        println!("value {}", fmt4(sol.value));
        if let Some(p) = &sol.policy {
            for (s, row) in p.rows().iter().enumerate() {
                let probs: Vec<String> = row.iter().map(|v| fmt4(*v)).collect();
                println!("policy {} {}", model.state_names()[s], probs.join(" "));
            }
        }
    }
    if let Some((path, _)) = args.output.target("solve-nominal") {
        let out = NominalOutput {
            status: status.into(),
            value: sol.value,
            policy: sol.policy.clone(),
            rho: sol.occupation.as_ref().map(|o| o.rho.clone()),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&out)?)?;
    }
    Ok(match sol.status {
        ConicStatus::Optimal => EXIT_OK,
        ConicStatus::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_ERROR,
    })
}

#[derive(Debug, Serialize)]
struct WorstCaseOutput {
    objective: f64,
    constraints: Vec<f64>,
    xi: Vec<f64>,
    feasible: bool,
    maximizers: Vec<Vec<f64>>,
}

fn worst_case_cmd(args: &WorstCaseArgs) -> anyhow::Result<i32> {
    let (model, uset) = args.source.load()?;
    let text = std::fs::read_to_string(&args.policy).with_context(|| format!("reading {}", args.policy.display()))?;
    let policy: StationaryPolicy = serde_json::from_str(&text)?;
    if !policy.conforms_to(&model) {
        bail!("policy does not match the model's action sets");
    }
    let inst = instance(model, uset, args.form)?;
    let wc = worst_case_costs(&inst, &policy)?;
    let feasible = wc.is_feasible(&inst.model.xi, rcmdp::robust::local::FEAS_TOL);
    println!("form {}", inst.form);
    println!("objective {}", fmt4(wc.objective));
    for (k, d) in wc.constraints.iter().enumerate() {
        println!("d{} {} xi {}", k + 1, fmt4(*d), fmt4(inst.model.xi[k]));
    }
    println!("feasible {feasible}");
    if let Some((path, _)) = args.output.target("worst-case") {
        let out = WorstCaseOutput {
            objective: wc.objective,
            constraints: wc.constraints.clone(),
            xi: inst.model.xi.clone(),
            feasible,
            maximizers: wc.maximizers.iter().map(|u| u.iter().copied().collect()).collect(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&out)?)?;
    }
    Ok(EXIT_OK)
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    }
}

fn write_trace(args: &BudgetArgs, report: &RobustSolveReport) -> anyhow::Result<()> {
    if let Some(path) = &args.trace {
        std::fs::write(path, report.trace_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn solve_robust_cmd(args: &SolveRobustArgs) -> anyhow::Result<i32> {
    let (model, uset) = args.source.load()?;
    let n = model.n_states();
    let inst = instance(model, uset, args.form)?;
    let report = solve_robust_global(&inst, &args.budget.budget())?;
    let log = certify_solution(&inst, &report)?;
    for note in &log.notes {
        info!("certificate: {note}");
    }
    print_report(&report);
    write_trace(&args.budget, &report)?;
    let ctx = ReportContext {
        alpha: Some(inst.model.alpha),
        sigma: args.source.bench.n.map(|_| args.source.bench.sigma),
        ynorm: args.source.bench.n.and(args.source.bench.ynorm),
    };
    if let Some((path, format)) = args.output.target("solve-robust") {
        emit_report(&report, &ctx, n, format, &path)?;
    }
    Ok(status_code(report.status))
}

fn bench_cmd(cmd: &BenchCommand) -> anyhow::Result<i32> {
    let BenchCommand::MachineReplacement(args) = cmd;
    let cfg = args.params.config()?;
    let model = machine_replacement_instance(&cfg)?;
    let uset = machine_replacement_uncertainty(&cfg, &model)?;
    let dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    let mpath = dir.join("model.json");
    let upath = dir.join("uncertainty.json");
    model.save(&mpath)?;
    uset.save(&model, &upath)?;
    println!("model {}", mpath.display());
    println!("uncertainty {}", upath.display());
    Ok(EXIT_OK)
}

/// One evaluated table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Outcome {
    pub index: usize,
    pub sigma: f64,
    pub y: Option<f64>,
    pub expected: Expected,
    pub report: RobustSolveReport,
}

pub fn run_table1_row(index: usize, budget: &Budget) -> anyhow::Result<Table1Outcome> {
    let rows = table1_protocol();
    let row = rows
        .get(index.wrapping_sub(1))
        .with_context(|| format!("table rows are 1..={}", rows.len()))?;
    let model = machine_replacement_instance(&row.config)?;
    let uset = machine_replacement_uncertainty(&row.config, &model)?;
    let inst = RobustInstance::new(model, uset, Some(Form::Pmin))?;
    let report = solve_robust_global(&inst, budget)?;
    certify_solution(&inst, &report)?;
    Ok(Table1Outcome {
        index,
        sigma: row.config.sigma,
        y: row.config.y,
        expected: row.expected.clone(),
        report,
    })
}

fn value_text(r: &RobustSolveReport) -> String {
    match r.status {
        SolveStatus::Infeasible => "Inf".into(),
        SolveStatus::Optimal => fmt4(r.upper_bound),
        _ => format!("[{}, {}]", fmt4(r.lower_bound), fmt4(r.upper_bound)),
    }
}

fn expected_text(e: &Expected) -> String {
    match e {
        Expected::Value(v) => fmt4(*v),
        Expected::Bracket(l, u) => format!("[{}, {}]", fmt4(*l), fmt4(*u)),
        Expected::Infeasible => "Inf".into(),
    }
}

fn table1_cmd(args: &Table1Args) -> anyhow::Result<i32> {
    let all = table1_protocol().len();
    let rows = args.rows.clone().unwrap_or_else(|| (1..=all).collect());
    let budget = args.budget.budget();
    let mut outcomes = Vec::new();
    println!("row sigma y value gap status expected repair");
    for i in rows {
        let o = run_table1_row(i, &budget)?;
        let repair = repair_columns(o.report.policy.as_ref(), 7);
        println!(
            "{} {} {} {} {} {} {} {}",
            o.index,
            fmt4(o.sigma),
            o.y.map_or_else(|| "-".to_string(), fmt4),
            value_text(&o.report),
            if o.report.status == SolveStatus::Infeasible {
                "-".into()
            } else {
                fmt4(o.report.gap_percent)
            },
            o.report.status,
            expected_text(&o.expected),
            if repair.iter().all(String::is_empty) {
                "-".into()
            } else {
                repair.join(" ")
            },
        );
        outcomes.push(o);
    }
    if let Some((path, format)) = args.output.target("table1") {
        let reports: Vec<(ReportContext, RobustSolveReport)> = outcomes
            .iter()
            .map(|o| {
                (
                    ReportContext {
                        alpha: Some(0.6),
                        sigma: Some(o.sigma),
                        ynorm: o.y,
                    },
                    o.report.clone(),
                )
            })
            .collect();
        emit_reports(&reports, 7, format, &path)?;
    }
    Ok(EXIT_OK)
}

fn parse_radius(s: &str) -> anyhow::Result<Option<f64>> {
    match s.trim() {
        "none" | "-" | "" => Ok(None),
        other => Ok(Some(other.parse().with_context(|| format!("bad radius {other:?}"))?)),
    }
}

/// One cell of a bound sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub ctx: ReportContext,
    pub report: RobustSolveReport,
    /// Worst-case constraint values re-checked at the incumbent.
    pub certified: bool,
}

pub fn run_sweep(args: &SweepArgs) -> anyhow::Result<Vec<SweepCell>> {
    let radii: Vec<Option<f64>> = args
        .ynorms
        .iter()
        .map(|s| parse_radius(s))
        .collect::<anyhow::Result<_>>()?;
    let budget = args.budget.budget();
    let mut cells = Vec::new();
    for &alpha in &args.alphas {
        for &sigma in &args.sigmas {
            for &y in &radii {
                let mut cfg = MachineReplacementConfig::new(args.n, sigma, y);
                cfg.alpha = alpha;
                cfg.gamma = GammaMode::Uniform;
                cfg.cost_seed = args.seed;
                let model = machine_replacement_instance(&cfg)?;
                let uset = machine_replacement_uncertainty(&cfg, &model)?;
                let inst = RobustInstance::new(model, uset, None)?;
                let report = solve_robust_global(&inst, &budget)?;
                let certified = certify_solution(&inst, &report).is_ok();
                info!("sweep cell alpha {alpha} sigma {sigma} y {y:?}: {}", report.status);
                cells.push(SweepCell {
                    ctx: ReportContext {
                        alpha: Some(alpha),
                        sigma: Some(sigma),
                        ynorm: y,
                    },
                    report,
                    certified,
                });
            }
        }
    }
    Ok(cells)
}

fn sweep_cmd(args: &SweepArgs) -> anyhow::Result<i32> {
    let cells = run_sweep(args)?;
    let rows: Vec<(ReportContext, RobustSolveReport)> = cells.iter().map(|c| (c.ctx, c.report.clone())).collect();
    println!("{}", csv_header(args.n));
    for (ctx, r) in &rows {
        println!("{}", csv_row(r, ctx, args.n));
    }
    let target = args
        .output
        .target("bounds-sweep")
        .map(|(p, f)| (p, if args.output.format.is_none() { Format::Csv } else { f }));
    if let Some((path, format)) = target {
        emit_reports(&rows, args.n, format, &path)?;
    }
    if cells.iter().any(|c| !c.certified) {
        bail!("an incumbent failed certification");
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::SolveNominal(a) => solve_nominal_cmd(a),
        Command::WorstCase(a) => worst_case_cmd(a),
        Command::SolveRobust(a) => solve_robust_cmd(a),
        Command::Bench(c) => bench_cmd(c),
        Command::Table1(a) => table1_cmd(a),
        Command::BoundsSweep(a) => sweep_cmd(a),
    }
}

/// Parses `argv` (program name first) and runs the command; returns the
/// process exit code: 0 on success, 2 when the problem is infeasible and
/// 1 on errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
