//! Command-line front end: budgeted search, cost inspection, exhaustive
//! baselines, objective diagnostics and an eager-vs-lazy benchmark, all
//! driven by one JSON config.
//!
//! Exit codes: 0 success, 1 configuration or usage problems, 2 evaluator
//! failures, 3 internal invariant breaches caught by post-run checks.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rcas_core::config::{BuildError, CostBackendSpec, ObjectiveSpec, RunConfig};
use rcas_core::costmodel::{ConvCostModel, CostModel};
use rcas_core::domain::{Assignment, Element};
use rcas_core::instance::{random_instance, Instance, InstanceConfig, InstanceKind};
use rcas_core::objective::{EvalError, Fidelity, Objective};
use rcas_core::oracle::{
    brute_force_opt, chain_report, check_submodularity, convex_hull_report, HullReport,
    OracleError,
};
use rcas_core::search::{
    replay_trace, run_greedy, run_lazy_ceg, run_rcas, write_trace_csv, CostMode, RcasResult,
    SearchError, SearchResult, TraceAction,
};

#[derive(Parser)]
#[command(
    name = "rcas",
    version,
    about = "Budget-constrained block selection over a fixed skeleton"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the lazy greedy search (single cost mode or the three-mode race)
    Search(SearchArgs),
    /// Print per-element costs, or cost one assignment file
    Cost(CostArgs),
    /// Enumerate every assignment and report the exact optimum
    Brute(CommonArgs),
    /// Audit the objective: diminishing returns, gain chain, cost/value hull
    Diagnose(CommonArgs),
    /// Compare eager and lazy engines on seeded random instances
    Bench(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Directory for output files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's fidelity (0 < f <= 1)
    #[arg(long)]
    fidelity: Option<f64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Largest raw gain
    Uc,
    /// Gain per parameter
    Apr,
    /// Gain per multiply-add
    Amr,
    /// All three, best value wins
    Rcas,
}

impl ModeArg {
    fn cost_mode(self) -> Option<CostMode> {
        match self {
            ModeArg::Uc => Some(CostMode::UniformCost),
            ModeArg::Apr => Some(CostMode::ParamRatio),
            ModeArg::Amr => Some(CostMode::MaddsRatio),
            ModeArg::Rcas => None,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    /// Rescan all candidates every round
    Eager,
    /// Priority queue with stale-key recomputation
    Lazy,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cost mode, or the three-mode race
    #[arg(long, value_enum, default_value_t = ModeArg::Rcas)]
    mode: ModeArg,
    /// Engine for single-mode runs; the race always runs lazy
    #[arg(long, value_enum, default_value_t = EngineArg::Lazy)]
    engine: EngineArg,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cost this assignment file instead of printing the element table
    #[arg(long)]
    assignment: Option<PathBuf>,
}

/// Failure carrying its process exit code.
enum CliError {
    /// Bad config, bad usage, instance too large: exit 1.
    Usage(String),
    /// The scoring backend failed: exit 2.
    Evaluator(String),
    /// A result failed its own post-run verification: exit 3.
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Evaluator(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Evaluator(m) | CliError::Invariant(m) => m,
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Eval(inner) => CliError::Evaluator(inner.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Eval(inner) => CliError::Evaluator(inner.to_string()),
            SearchError::TraceCorrupt(m) => CliError::Invariant(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Eval(inner) => CliError::Evaluator(inner.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Evaluator(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RCAS_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Search(args) => cmd_search(args),
        Command::Cost(args) => cmd_cost(args),
        Command::Brute(args) => cmd_brute(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcas: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(f) = common.fidelity {
        cfg.fidelity = f;
        if Fidelity::new(f).is_none() {
            return Err(CliError::Usage(format!("--fidelity must lie in (0, 1]; got {f}")));
        }
    }
    Ok(cfg)
}

/// Write through a temp file and rename so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", name.to_string_lossy()));
    let write = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    })();
    if let Err(e) = write {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Usage(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_trace(out: &Path, result: &SearchResult) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_trace_csv(&result.trace, &mut buf)?;
    write_atomic(&out.join(format!("trace_{}.csv", result.mode.label())), &buf)
}

/// Re-derive everything the result claims and compare; exit 3 territory.
fn verify_result(
    result: &SearchResult,
    obj: &Objective,
    cost: &dyn CostModel,
    cfg: &RunConfig,
    value_fidelity: Fidelity,
) -> Result<(), CliError> {
    let replayed = replay_trace(&result.trace)?;
    if replayed != result.assignment {
        return Err(CliError::Invariant(
            "replaying the trace does not reproduce the reported assignment".into(),
        ));
    }
    let c = cost
        .assignment_cost(&result.assignment)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if c != result.cost {
        return Err(CliError::Invariant(format!(
            "reported cost ({}, {}) differs from recomputed ({}, {})",
            result.cost.params, result.cost.madds, c.params, c.madds
        )));
    }
    if !cfg.budget.admits(c) {
        return Err(CliError::Invariant(format!(
            "result exceeds the budget: cost ({}, {}) vs ceiling ({}, {})",
            c.params, c.madds, cfg.budget.max_params, cfg.budget.max_madds
        )));
    }
    let v = obj.evaluate(&result.assignment, value_fidelity)?;
    if v != result.value {
        return Err(CliError::Invariant(format!(
            "reported value {} differs from re-evaluated {v}",
            result.value
        )));
    }
    Ok(())
}

fn mode_row(r: &SearchResult, marker: &str) -> String {
    format!(
        "{:<5} {:>14.9} {:>12} {:>14} {:>8} {:>8} {:>10.4}{}",
        r.mode.label(),
        r.value,
        r.cost.params,
        r.cost.madds,
        r.stats.evaluations,
        r.stats.queue_pops,
        r.stats.phi,
        marker
    )
}

const SUMMARY_HEADER: &str = "mode            value       params          madds    evals     pops        phi";

fn cmd_search(args: &SearchArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let obj = cfg.build_objective()?;
    let cost = cfg.build_cost_model();
    let ground = cfg.ground();
    let opts = cfg.engine.options();
    let out = &args.common.out;
    info!("searching over {} candidates, objective {}", ground.len(), obj.name());

    match args.mode.cost_mode() {
        None => {
            let race: RcasResult = run_rcas(
                &obj,
                cost.as_ref(),
                &ground,
                cfg.budget,
                cfg.fidelity(),
                cfg.refine_fidelity(),
                &opts,
            )?;
            verify_result(&race.winner, &obj, cost.as_ref(), &cfg, cfg.refine_fidelity())?;
            for outcome in &race.modes {
                if let Some(r) = &outcome.result {
                    write_trace(out, r)?;
                }
            }
            write_json(
                &out.join("result.json"),
                &serde_json::json!({
                    "command": "search",
                    "objective": obj.name(),
                    "race": race,
                }),
            )?;
            println!("{SUMMARY_HEADER}");
            for outcome in &race.modes {
                match (&outcome.result, &outcome.error) {
                    (Some(r), _) => {
                        let marker = if r.mode == race.winner.mode && r.value == race.winner.value {
                            "  <- winner"
                        } else {
                            ""
                        };
                        println!("{}", mode_row(r, marker));
                    }
                    (None, Some(e)) => println!("{:<5} failed: {e}", outcome.mode.label()),
                    (None, None) => unreachable!("outcome holds a result or an error"),
                }
            }
            for w in &race.warnings {
                eprintln!("warning: {w}");
            }
        }
        Some(mode) => {
            let result = match args.engine {
                EngineArg::Lazy => run_lazy_ceg(
                    &obj,
                    cost.as_ref(),
                    &ground,
                    cfg.budget,
                    mode,
                    cfg.fidelity(),
                    &opts,
                )?,
                EngineArg::Eager => run_greedy(
                    &obj,
                    cost.as_ref(),
                    &ground,
                    cfg.budget,
                    mode,
                    cfg.fidelity(),
                    &opts,
                )?,
            };
            verify_result(&result, &obj, cost.as_ref(), &cfg, cfg.fidelity())?;
            write_trace(out, &result)?;
            write_json(
                &out.join("result.json"),
                &serde_json::json!({
                    "command": "search",
                    "objective": obj.name(),
                    "result": result,
                }),
            )?;
            println!("{SUMMARY_HEADER}");
            println!("{}", mode_row(&result, ""));
        }
    }
    Ok(())
}

fn cmd_cost(args: &CostArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common)?;
    let cost = cfg.build_cost_model();
    match &args.assignment {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let assignment: Assignment = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad assignment file: {e}")))?;
            let c = cost
                .assignment_cost(&assignment)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let report = serde_json::json!({
                "assignment": assignment,
                "params": c.params,
                "madds": c.madds,
                "budget": cfg.budget,
                "fits_budget": cfg.budget.admits(c),
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("static shape"));
        }
        None => {
            println!("position,type,layer,params,madds");
            let conv = matches!(cfg.cost_backend, CostBackendSpec::Conv)
                .then(|| ConvCostModel::new(cfg.skeleton.clone(), cfg.catalog.clone()));
            for e in cfg.ground() {
                if let Some(conv) = &conv {
                    for layer in conv
                        .element_layers(e)
                        .map_err(|err| CliError::Usage(err.to_string()))?
                    {
                        println!(
                            "{},{},{},{},{}",
                            e.position,
                            e.block,
                            layer.kind.label(),
                            layer.params,
                            layer.madds
                        );
                    }
                }
                let c = cost.element_cost(e).map_err(|err| CliError::Usage(err.to_string()))?;
                println!("{},{},total,{},{}", e.position, e.block, c.params, c.madds);
            }
            let base = cost.base_cost();
            println!(",,fixed_overhead,{},{}", base.params, base.madds);
        }
    }
    Ok(())
}

fn cmd_brute(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let obj = cfg.build_objective()?;
    let cost = cfg.build_cost_model();
    let ground = cfg.ground();
    let result = brute_force_opt(
        &obj,
        cost.as_ref(),
        &ground,
        cfg.budget,
        cfg.fidelity(),
        cfg.brute_force_cap,
    )?;
    write_json(
        &args.out.join("brute.json"),
        &serde_json::json!({
            "command": "brute",
            "objective": obj.name(),
            "result": result,
        }),
    )?;
    println!(
        "optimum value {} at cost ({}, {}) after {} of {} assignments ({} feasible)",
        result.value,
        result.cost.params,
        result.cost.madds,
        result.evaluations,
        result.enumerated,
        result.feasible
    );
    Ok(())
}

/// Hull rows for one axis; degenerate axes yield no rows.
fn hull_rows(
    axis: &str,
    ground: &[Element],
    points: &[(f64, f64)],
    hull: &Option<HullReport>,
    rows: &mut String,
) {
    let Some(report) = hull else { return };
    for (e, (hp, (cost, value))) in ground.iter().zip(report.points.iter().zip(points)) {
        let _ = writeln!(
            rows,
            "{axis},{},{},{},{},{},{}",
            e.position, e.block, cost, value, hp.gap, hp.on_hull
        );
    }
}

fn cmd_diagnose(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let obj = cfg.build_objective()?;
    let cost = cfg.build_cost_model();
    let ground = cfg.ground();
    let fidelity = cfg.fidelity();

    let submodularity = check_submodularity(&obj, &ground, fidelity, cfg.diagnose_samples, cfg.seed)?;

    // gain chain along the uniform-cost lazy run
    let run = run_lazy_ceg(
        &obj,
        cost.as_ref(),
        &ground,
        cfg.budget,
        CostMode::UniformCost,
        fidelity,
        &cfg.engine.options(),
    )?;
    let mut chain_values = vec![obj.evaluate(&Assignment::empty(), fidelity)?];
    chain_values.extend(
        run.trace
            .iter()
            .filter(|ev| ev.action == TraceAction::Accept)
            .map(|ev| ev.f_after),
    );
    let chain = chain_report(&chain_values);

    // singleton value against each cost axis
    let mut param_points = Vec::with_capacity(ground.len());
    let mut madds_points = Vec::with_capacity(ground.len());
    for e in &ground {
        let c = cost.element_cost(*e).map_err(|err| CliError::Usage(err.to_string()))?;
        let a = Assignment::empty()
            .with(*e)
            .map_err(|err| CliError::Usage(err.to_string()))?;
        let v = obj.evaluate(&a, fidelity)?;
        param_points.push((c.params as f64, v));
        madds_points.push((c.madds as f64, v));
    }
    let mut hull_notes = Vec::new();
    let mut hull_of = |axis: &str, pts: &[(f64, f64)]| match convex_hull_report(pts) {
        Ok(r) => Some(r),
        Err(e) => {
            hull_notes.push(format!("{axis}: {e}"));
            None
        }
    };
    let hull_params = hull_of("params", &param_points);
    let hull_madds = hull_of("madds", &madds_points);

    write_json(
        &args.out.join("diagnose.json"),
        &serde_json::json!({
            "command": "diagnose",
            "objective": obj.name(),
            "phi": run.stats.phi,
            "submodularity": submodularity,
            "chain": chain,
            "hull_params": hull_params,
            "hull_madds": hull_madds,
            "hull_notes": hull_notes,
        }),
    )?;

    let mut csv = String::from("axis,position,type,cost,value,gap,on_hull\n");
    hull_rows("params", &ground, &param_points, &hull_params, &mut csv);
    hull_rows("madds", &ground, &madds_points, &hull_madds, &mut csv);
    write_atomic(&args.out.join("hull_gaps.csv"), csv.as_bytes())?;

    println!(
        "checks: {} ({} monotonicity, {} diminishing-returns), violations: {}",
        submodularity.checks(),
        submodularity.mono_checks,
        submodularity.dr_checks,
        submodularity.violations()
    );
    println!(
        "chain: {} accepts, monotone: {}, diminishing: {}",
        chain.gains.len(),
        chain.monotone,
        chain.diminishing
    );
    for note in &hull_notes {
        println!("hull skipped ({note})");
    }
    Ok(())
}

fn cmd_bench(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let kind = match &cfg.objective {
        ObjectiveSpec::ConcaveModular { .. } => InstanceKind::ConcaveModular,
        ObjectiveSpec::Surrogate { sigma, .. } => {
            InstanceKind::Surrogate { sigma_milli: (sigma * 1000.0).round() as u32 }
        }
        // coverage stands in for families without a random generator
        _ => InstanceKind::Coverage,
    };
    let icfg = InstanceConfig::new(
        cfg.skeleton.len() as u32,
        cfg.catalog.len() as u32,
        kind,
    );
    let opts = cfg.engine.options();
    let fidelity = cfg.fidelity();

    let mut csv = String::from(
        "instance,seed,positions,types,mode,eager_evaluations,lazy_evaluations,eager_wall_ms,lazy_wall_ms,phi\n",
    );
    let mut eager_total = 0u64;
    let mut lazy_total = 0u64;
    for i in 0..cfg.bench_instances {
        let seed = cfg.seed.wrapping_add(i as u64);
        let inst: Instance = random_instance(&icfg, seed);
        for mode in CostMode::ALL {
            let eager_obj = inst.fresh_objective();
            let t0 = Instant::now();
            let eager = run_greedy(&eager_obj, &inst.cost, &inst.ground, inst.budget, mode, fidelity, &opts)?;
            let eager_ms = t0.elapsed().as_secs_f64() * 1e3;
            let lazy_obj = inst.fresh_objective();
            let t1 = Instant::now();
            let lazy = run_lazy_ceg(&lazy_obj, &inst.cost, &inst.ground, inst.budget, mode, fidelity, &opts)?;
            let lazy_ms = t1.elapsed().as_secs_f64() * 1e3;
            if (lazy.value - eager.value).abs() > 1e-9 {
                return Err(CliError::Invariant(format!(
                    "engines disagree on instance {i} mode {}: eager {} vs lazy {}",
                    mode.label(),
                    eager.value,
                    lazy.value
                )));
            }
            eager_total += eager.stats.evaluations;
            lazy_total += lazy.stats.evaluations;
            let _ = writeln!(
                csv,
                "{i},{seed},{},{},{},{},{},{:.3},{:.3},{}",
                icfg.positions,
                icfg.types,
                mode.label(),
                eager.stats.evaluations,
                lazy.stats.evaluations,
                eager_ms,
                lazy_ms,
                eager.stats.phi
            );
        }
    }
    write_atomic(&args.out.join("bench.csv"), csv.as_bytes())?;
    println!(
        "{} instances x {} modes: eager {} evaluations, lazy {} ({:.1}% of eager)",
        cfg.bench_instances,
        CostMode::ALL.len(),
        eager_total,
        lazy_total,
        if eager_total == 0 { 100.0 } else { 100.0 * lazy_total as f64 / eager_total as f64 }
    );
    Ok(())
}
