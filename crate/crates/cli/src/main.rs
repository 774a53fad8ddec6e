//! `hpcwb`: calibrate a machine model, benchmark kernels against it, run the
//! parallel test matrix, and compare or plot results.

mod sizes;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use hpcwb::bench::{save_result_set, sweep, BenchConfig, BenchError, ResultRecord, ResultSet, DEFAULT_REPS, DEFAULT_WARMUP};
use hpcwb::kernels::{Registry, Trap, VariantFilter};
use hpcwb::machine::{
    calibrate_model, load_model, save_model, LadderCheck, LevelKind, MachineError, MachineModel, DEFAULT_WORKING_SETS,
    MIN_CALIBRATION_REPS, MIN_WORKING_SET,
};
use hpcwb::partest::{
    build_plan, check_pairwise, render_junit, render_text, run_suite, KernelBody, PartestError, Strategy,
    SuiteConfig, TestDimension, DEFAULT_PROBLEM_SIZE,
};
use hpcwb::plot::{RooflineChart, MIN_ASCII_HEIGHT, MIN_ASCII_WIDTH};
use hpcwb::roofline::{align_table, compare, GroupBy, LevelPolicy, ETA_FLAG_THRESHOLD};
use hpcwb::{DEFAULT_SEED, SEED_ENV};

#[derive(Debug, Error)]
enum CliError {
    /// Bad flags or arguments (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while doing the work (exit 3).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl Display) -> Self {
        Self::Runtime(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<MachineError> for CliError {
    fn from(e: MachineError) -> Self {
        match e {
            MachineError::Precondition(_) => Self::Usage(e.to_string()),
            _ => Self::runtime(e),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        Self::runtime(e)
    }
}

impl From<sizes::SizeError> for CliError {
    fn from(e: sizes::SizeError) -> Self {
        Self::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hpcwb", version, about = "Roofline benchmarking and parallel kernel testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure peak flop rates and the bandwidth ladder; write a machine model.
    Calibrate(CalibrateArgs),
    /// Sweep kernels over problem sizes and assess them against a machine model.
    Bench(BenchArgs),
    /// Run the kernel test matrix on simulated process groups.
    Test(TestArgs),
    /// Compare result sets from one or more machines.
    Compare(CompareArgs),
    /// Draw a roofline chart of a result set.
    Plot(PlotArgs),
}

#[derive(Debug, clap::Args)]
struct CalibrateArgs {
    /// Machine-model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated working-set sizes (e.g. 16KiB,256KiB,8MiB,512MiB).
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Model name; defaults to the host name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    /// Machine-model file.
    #[arg(long)]
    model: PathBuf,
    /// Kernel id (`axpy.f64`), operation name (`axpy`), or `all`. Repeatable.
    #[arg(long, default_value = "all")]
    kernel: Vec<String>,
    /// Backend name or `all`.
    #[arg(long, default_value = "all")]
    backend: String,
    /// `START:STOP:*FACTOR` or a comma list; `k`, `M`, `G` are binary suffixes.
    #[arg(long, default_value = "1k:1M:*4")]
    sizes: String,
    /// Result-set file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    /// Assess every size against this level instead of choosing by footprint.
    #[arg(long)]
    level: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanKind {
    Full,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Junit,
}

#[derive(Debug, clap::Args)]
struct TestArgs {
    #[arg(long, value_enum, default_value_t = PlanKind::Full)]
    plan: PlanKind,
    /// Comma-separated rank counts for the `ranks` dimension.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4])]
    ranks: Vec<usize>,
    /// Watchdog timeout per collective, in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Problem size of each case.
    #[arg(long, default_value_t = DEFAULT_PROBLEM_SIZE)]
    n: u64,
    #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, hide = true)]
    enable_trap: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ByArg {
    Kernel,
    Machine,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    /// Result-set files (at least two).
    files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ByArg::Kernel)]
    by: ByArg,
    /// Print the table as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotFormat {
    Ascii,
    Svg,
}

#[derive(Debug, clap::Args)]
struct PlotArgs {
    /// Result-set file.
    results: PathBuf,
    /// Machine-model file the results were assessed against.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotFormat::Ascii)]
    format: PlotFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args).map(|()| 0),
        Command::Bench(args) => cmd_bench(args).map(|()| 0),
        Command::Test(args) => cmd_test(args),
        Command::Compare(args) => cmd_compare(args).map(|()| 0),
        Command::Plot(args) => cmd_plot(args).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn host_name() -> String {
    fs::read_to_string("/etc/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "localhost".into())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let working_sets = match &args.sizes {
        Some(text) => sizes::parse_byte_list(text)?,
        None => DEFAULT_WORKING_SETS.to_vec(),
    };
    if let Some(&small) = working_sets.iter().find(|&&s| s < MIN_WORKING_SET) {
        return Err(CliError::Usage(format!(
            "working set of {small} bytes is below the {MIN_WORKING_SET}-byte minimum"
        )));
    }
    if args.reps < MIN_CALIBRATION_REPS {
        return Err(CliError::Usage(format!("--reps must be at least {MIN_CALIBRATION_REPS}")));
    }
    let name = args.name.unwrap_or_else(host_name);
    let calibration = calibrate_model(&name, &working_sets, args.reps)?;
    if let LadderCheck::Warning(w) = &calibration.ladder {
        eprintln!("warning: {w}");
    }
    let model = &calibration.model;
    save_model(model, &args.out)?;
    print!("{}", model_table(model));
    println!("wrote {}", args.out.display());
    Ok(())
}

fn model_table(model: &MachineModel) -> String {
    let header: Vec<String> = ["level", "working set", "bandwidth (GB/s)", "kind"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = model
        .levels
        .iter()
        .map(|l| {
            vec![
                l.name.clone(),
                format_bytes(l.working_set_bytes),
                format!("{:.2}", l.bandwidth_bytes_per_s / 1e9),
                match l.kind {
                    LevelKind::Cache => "cache",
                    LevelKind::Memory => "memory",
                    LevelKind::NetworkReserved => "network-reserved",
                }
                .to_string(),
            ]
        })
        .collect();
    format!(
        "machine {}\npeak f32 {:.2} GFLOP/s, f64 {:.2} GFLOP/s\n{}",
        model.name,
        model.peaks.single / 1e9,
        model.peaks.double / 1e9,
        align_table(&header, &rows)
    )
}

fn format_bytes(bytes: u64) -> String {
    match bytes {
        b if b >= 1 << 30 && b % (1 << 30) == 0 => format!("{}GiB", b >> 30),
        b if b >= 1 << 20 && b % (1 << 20) == 0 => format!("{}MiB", b >> 20),
        b if b >= 1 << 10 && b % (1 << 10) == 0 => format!("{}KiB", b >> 10),
        b => format!("{b}B"),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let sizes = sizes::parse_size_range(&args.sizes)?;
    let registry = Registry::standard();

    let mut filters = Vec::new();
    for k in &args.kernel {
        if k == "all" {
            filters.push(VariantFilter::all());
        } else if registry
            .specs()
            .iter()
            .any(|s| s.id == *k || s.operation.name() == k)
        {
            filters.push(VariantFilter::all().kernel(k.clone()));
        } else {
            let ids: Vec<&str> = registry.specs().iter().map(|s| s.id.as_str()).collect();
            return Err(CliError::Usage(format!(
                "unknown kernel `{k}`; valid ids: {}",
                ids.join(", ")
            )));
        }
    }
    if args.backend != "all" {
        if registry.backend(&args.backend).is_none() {
            return Err(CliError::Usage(format!(
                "unknown backend `{}`; valid backends: {}",
                args.backend,
                registry.backend_names().join(", ")
            )));
        }
        filters = filters.into_iter().map(|f| f.backend(args.backend.clone())).collect();
    }
    let mut variants = Vec::new();
    for f in &filters {
        for v in registry.list_variants(f) {
            if !variants
                .iter()
                .any(|w: &hpcwb::kernels::Variant| w.spec.id == v.spec.id && w.backend_name() == v.backend_name())
            {
                variants.push(v);
            }
        }
    }
    if variants.is_empty() {
        return Err(CliError::Usage("no kernel/backend combination matches".into()));
    }

    let model = load_model(&args.model).map_err(CliError::runtime)?;
    let policy = match &args.level {
        None => LevelPolicy::Auto,
        Some(name) => {
            if model.assessable_levels().all(|l| &l.name != name) {
                let names: Vec<&str> = model.assessable_levels().map(|l| l.name.as_str()).collect();
                return Err(CliError::Usage(format!(
                    "model has no level `{name}`; levels: {}",
                    names.join(", ")
                )));
            }
            LevelPolicy::Fixed(name.clone())
        }
    };
    let config = BenchConfig {
        reps: args.reps,
        warmup: args.warmup,
        seed: args.seed,
        ..BenchConfig::default()
    };

    let mut set = ResultSet::new(&model, args.seed);
    let mut failures = 0usize;
    for variant in &variants {
        let out = sweep(variant, &sizes, &model, &policy, &config).map_err(|e| match e {
            BenchError::Precondition(m) => CliError::Usage(m),
            e => CliError::runtime(e),
        })?;
        for (n, e) in &out.failures {
            eprintln!(
                "warning: {}@{} n={n}: {e}",
                variant.spec.id,
                variant.backend_name()
            );
        }
        failures += out.failures.len();
        set.results.extend(out.records().cloned());
    }
    if set.results.is_empty() {
        return Err(CliError::Runtime(format!(
            "all {failures} measurements failed"
        )));
    }
    print!("{}", results_table(&set.results));
    if failures > 0 {
        eprintln!("{failures} measurement(s) failed and were left out");
    }
    if let Some(path) = &args.out {
        save_result_set(&set, path)?;
        println!("wrote {} results to {}", set.results.len(), path.display());
    }
    Ok(())
}

fn results_table(records: &[ResultRecord]) -> String {
    let header: Vec<String> = [
        "kernel", "backend", "n", "best (s)", "GFLOP/s", "level", "bound", "eta real", "eta ideal",
    ]
    .map(String::from)
    .to_vec();
    let eta = |v: f64| {
        if v > ETA_FLAG_THRESHOLD {
            format!("{v:.3}!")
        } else {
            format!("{v:.3}")
        }
    };
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.kernel.clone(),
                r.backend.clone(),
                r.n.to_string(),
                format!("{:.3e}", r.time_best_s),
                format!("{:.3}", r.perf_flops_per_s / 1e9),
                r.level.clone(),
                r.bound.to_string(),
                eta(r.eta_realistic),
                eta(r.eta_idealized),
            ]
        })
        .collect();
    let mut out = align_table(&header, &rows);
    if records
        .iter()
        .any(|r| r.eta_realistic.max(r.eta_idealized) > ETA_FLAG_THRESHOLD)
    {
        out.push_str("! eta above 1.05: the model underestimates this machine\n");
    }
    out
}

fn cmd_test(args: TestArgs) -> Result<u8> {
    if args.ranks.is_empty() || args.ranks.contains(&0) {
        return Err(CliError::Usage("--ranks must be positive".into()));
    }
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let timeout = Duration::try_from_secs_f64(args.timeout)
        .map_err(|_| CliError::Usage(format!("invalid --timeout {}", args.timeout)))?;
    let mut registry = Registry::standard();
    let mut dimensions = TestDimension::defaults();
    for flag in &args.enable_trap {
        let trap = Trap::parse(flag).ok_or_else(|| {
            let names: Vec<&str> = Trap::ALL.iter().map(|t| t.flag()).collect();
            CliError::Usage(format!("unknown trap `{flag}`; traps: {}", names.join(", ")))
        })?;
        registry = registry.with_trap(trap);
        if let Some(d) = dimensions.iter_mut().find(|d| d.name == "backend") {
            if !d.levels.iter().any(|l| l == trap.backend_name()) {
                d.levels.push(trap.backend_name().to_string());
            }
        }
    }
    let mut ranks = args.ranks.clone();
    ranks.dedup();
    if let Some(d) = dimensions.iter_mut().find(|d| d.name == "ranks") {
        d.levels = ranks.iter().map(|r| r.to_string()).collect();
    }

    let strategy = match args.plan {
        PlanKind::Full => Strategy::Full,
        PlanKind::Pairwise => Strategy::Pairwise,
    };
    let plan = build_plan(&dimensions, strategy).map_err(CliError::runtime)?;
    if strategy == Strategy::Pairwise {
        check_pairwise(&plan, &dimensions).map_err(|missing| {
            CliError::Runtime(PartestError::Uncovered(missing.iter().map(|m| m.to_string()).collect()).to_string())
        })?;
    }
    let config = SuiteConfig {
        timeout,
        n: args.n,
        seed: args.seed,
    };
    let report = run_suite(&plan, &registry, &KernelBody::standard(), &config).map_err(CliError::runtime)?;
    let text = match args.report {
        ReportFormat::Text => render_text(&report),
        ReportFormat::Junit => render_junit(&report),
    };
    match &args.out {
        Some(path) => {
            write_output(path, &text)?;
            let s = &report.summary;
            println!(
                "{} plan: {} cases, {} passed, {} failed, {} errors, {} skipped; report written to {}",
                strategy.name(),
                s.total,
                s.passed,
                s.failed,
                s.errors,
                s.skipped,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(if report.summary.failed + report.summary.errors > 0 { 1 } else { 0 })
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    if args.files.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two result files, got {}",
            args.files.len()
        )));
    }
    let sets = args
        .files
        .iter()
        .map(|p| {
            hpcwb::bench::load_result_set(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = compare(&sets).map_err(CliError::runtime)?;
    if args.json {
        println!("{}", table.to_json());
    } else {
        let by = match args.by {
            ByArg::Kernel => GroupBy::Kernel,
            ByArg::Machine => GroupBy::Machine,
        };
        print!("{}", table.render_text(by));
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    if args.format == PlotFormat::Ascii && (args.width < MIN_ASCII_WIDTH || args.height < MIN_ASCII_HEIGHT) {
        return Err(CliError::Usage(format!(
            "ascii charts need at least {MIN_ASCII_WIDTH}x{MIN_ASCII_HEIGHT} characters"
        )));
    }
    let results = hpcwb::bench::load_result_set(&args.results)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.results.display())))?;
    let model = load_model(&args.model).map_err(CliError::runtime)?;
    let chart = RooflineChart::new(&results, &model).map_err(CliError::runtime)?;
    let text = match args.format {
        PlotFormat::Ascii => chart.render_ascii(args.width, args.height).map_err(CliError::runtime)?,
        PlotFormat::Svg => chart.render_svg(),
    };
    match &args.out {
        Some(path) => {
            write_output(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
