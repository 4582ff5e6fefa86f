use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dispatch_cleo::baseline::{compare_surrogates, run_case, CaseId, CaseResult};
use dispatch_cleo::cleo::IterRecord;
use dispatch_cleo::config::Config;
use dispatch_cleo::dispatch::{AffineResponse, DispatchModel};
use dispatch_cleo::netmodel::{self, PowerSystem};
use dispatch_cleo::qpsolve::{assemble_sed_qp, QpProblem, SedQpOptions};

const SCHEMA: u32 = 1;

/// Stochastic economic dispatch with learned demand response.
#[derive(Parser)]
#[command(name = "dispatch-cleo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one case and write summary.json and convergence.csv.
    Run(RunArgs),
    /// Repeat a run over values of one config key.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted config key, e.g. `oracle.a1`.
        #[arg(long)]
        param: String,
        /// TOML literals, one per run.
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Load and check a case file.
    Validate {
        #[arg(long)]
        case: String,
    },
    /// Print the assembled stochastic dispatch QP (accepted DR delivered in full).
    DumpQp {
        #[arg(long)]
        case: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Objective spread across seeds, CLEO against a global regression.
    Compare {
        #[arg(long)]
        case: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Oracle queries for the regression fit.
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Case file, or `ieee14` / `ieee39` for the bundled systems.
    #[arg(long)]
    case: String,
    #[arg(long, default_value = "case1")]
    scenario: CaseId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RES scenarios for expectations and violation rates.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` config overrides.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: u32,
    case_file: &'a str,
    scenario: CaseId,
    seed: u64,
    samples: usize,
    #[serde(flatten)]
    result: SummaryBody<'a>,
}

/// Case result without the history, which goes to the CSV.
#[derive(Serialize)]
struct SummaryBody<'a> {
    objective: f64,
    dr_commitment: &'a [f64],
    dr_commitment_total: f64,
    dispatch: &'a [f64],
    base_mva: f64,
    evaluation: &'a dispatch_cleo::dispatch::DispatchEvaluation,
    realized: &'a dispatch_cleo::dispatch::DispatchEvaluation,
    violations: &'a dispatch_cleo::dispatch::ViolationReport,
    iterations: usize,
    termination: Option<dispatch_cleo::cleo::Termination>,
    oracle_calls: usize,
    fitted_response: Option<&'a dispatch_cleo::baseline::FittedResponse>,
}

fn load_system(case: &str) -> Result<PowerSystem> {
    let path = Path::new(case);
    if path.exists() {
        return Ok(netmodel::load_case(path)?);
    }
    match case.trim_end_matches(".case") {
        "ieee14" => Ok(netmodel::ieee14()),
        "ieee39" => Ok(netmodel::ieee39()),
        _ => Ok(netmodel::load_case(path)?),
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| {
            dispatch_cleo::Error::InvalidArgument(format!("override {o:?} needs key=value"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run_once(args: &RunArgs, cfg: &mut Config) -> Result<CaseResult> {
    let sys = load_system(&args.case)?;
    if let Some(n) = args.samples {
        cfg.dispatch.samples = n;
    }
    if cfg.dispatch.samples == 0 {
        return Err(
            dispatch_cleo::Error::InvalidArgument("--samples must be positive".into()).into(),
        );
    }
    let model = DispatchModel::deterministic(&sys, cfg.dispatch)?;
    let oracle = cfg.oracle(&sys, &model.dr_max, args.seed)?;
    Ok(run_case(&sys, &oracle, args.scenario, cfg, args.seed)?)
}

fn write_outputs(dir: &Path, args: &RunArgs, samples: usize, r: &CaseResult) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let summary = Summary {
        schema: SCHEMA,
        case_file: &args.case,
        scenario: r.case,
        seed: r.seed,
        samples,
        result: SummaryBody {
            objective: r.objective,
            dr_commitment: &r.dr_commitment,
            dr_commitment_total: r.dr_commitment_total,
            dispatch: &r.dispatch,
            base_mva: r.base_mva,
            evaluation: &r.evaluation,
            realized: &r.realized,
            violations: &r.violations,
            iterations: r.iterations,
            termination: r.termination,
            oracle_calls: r.oracle_calls,
            fitted_response: r.fitted_response.as_ref(),
        },
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(dir.join("summary.json"), json)?;
    write_history(&dir.join("convergence.csv"), &r.history)
}

fn write_history(path: &Path, history: &[IterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "objective", "radius", "rho", "accepted"])?;
    for h in history {
        w.write_record([
            h.iter.to_string(),
            h.objective.to_string(),
            h.radius.to_string(),
            h.rho.map(|r| r.to_string()).unwrap_or_default(),
            h.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let r = run_once(args, &mut cfg)?;
    write_outputs(&args.out, args, cfg.dispatch.samples, &r)?;
    println!(
        "{} seed {}: objective {:.4}, DR commitment {:.6} pu, {} iterations",
        r.case, r.seed, r.objective, r.dr_commitment_total, r.iterations
    );
    Ok(())
}

fn cmd_sweep(args: &RunArgs, param: &str, values: &[String]) -> Result<()> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    fs::create_dir_all(&args.out)?;
    let mut index = csv::Writer::from_path(args.out.join("sweep.csv"))?;
    index.write_record([
        "run",
        "value",
        "objective",
        "dr_commitment_total",
        "iterations",
    ])?;
    for (k, value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.set(param, value)?;
        let r = run_once(args, &mut cfg)?;
        let dir = args.out.join(format!("run-{k:03}"));
        write_outputs(&dir, args, cfg.dispatch.samples, &r)?;
        index.write_record([
            k.to_string(),
            value.clone(),
            r.objective.to_string(),
            r.dr_commitment_total.to_string(),
            r.iterations.to_string(),
        ])?;
        println!(
            "{param} = {value}: DR commitment {:.6} pu",
            r.dr_commitment_total
        );
    }
    index.flush()?;
    Ok(())
}

fn cmd_validate(case: &str) -> Result<()> {
    let sys = load_system(case)?;
    println!(
        "ok: {} buses, {} lines, {} generators, {} RES units, {} DRPs, slack bus {}",
        sys.n_bus(),
        sys.n_line(),
        sys.n_gen(),
        sys.n_res(),
        sys.n_drp(),
        sys.slack_bus()
    );
    Ok(())
}

fn matrix_text(
    out: &mut String,
    name: &str,
    rows: usize,
    cols: usize,
    get: impl Fn(usize, usize) -> f64,
) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| get(r, c).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn qp_text(p: &QpProblem, constant: f64) -> String {
    let n = p.c.len();
    let m = p.b_ineq.len();
    let mut out =
        String::from("# minimize 0.5 x'Qx + c'x + constant  s.t.  A x <= b, lb <= x <= ub\n");
    let _ = writeln!(out, "constant {constant}");
    matrix_text(&mut out, "Q", n, n, |r, c| p.q[(r, c)]);
    matrix_text(&mut out, "c", 1, n, |_, c| p.c[c]);
    matrix_text(&mut out, "A", m, n, |r, c| p.a_ineq[(r, c)]);
    matrix_text(&mut out, "b", 1, m, |_, c| p.b_ineq[c]);
    matrix_text(&mut out, "lb", 1, n, |_, c| p.lb[c]);
    matrix_text(&mut out, "ub", 1, n, |_, c| p.ub[c]);
    out
}

fn cmd_dump_qp(case: &str, config: Option<&Path>, seed: u64) -> Result<()> {
    let sys = load_system(case)?;
    let cfg = load_config(config, &[])?;
    let unc = cfg.uncertainty_model(&sys, seed)?;
    let model = DispatchModel::with_uncertainty(&sys, &unc, cfg.dispatch)?;
    let (qp, layout) = assemble_sed_qp(
        &model,
        &AffineResponse::identity(sys.n_drp()),
        &SedQpOptions::unrestricted(true),
    )?;
    print!("{}", qp_text(&qp, layout.constant));
    Ok(())
}

fn cmd_compare(case: &str, config: Option<&Path>, seeds: u64, queries: usize) -> Result<()> {
    let sys = load_system(case)?;
    let cfg = load_config(config, &[])?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let cmp = compare_surrogates(&sys, &cfg, &seeds, queries)?;
    println!("{}", serde_json::to_string_pretty(&cmp)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DISPATCH_CLEO_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            dispatch_cleo::Error::InvalidArgument(format!("DISPATCH_CLEO_THREADS={v:?}"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep { run, param, values } => cmd_sweep(&run, &param, &values),
        Command::Validate { case } => cmd_validate(&case),
        Command::DumpQp { case, config, seed } => cmd_dump_qp(&case, config.as_deref(), seed),
        Command::Compare {
            case,
            config,
            seeds,
            queries,
        } => cmd_compare(&case, config.as_deref(), seeds, queries),
    }
}

/// 1 for bad input, 2 for solver or runtime failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dispatch_cleo::Error>() {
        Some(e) if e.is_input_error() => 1,
        Some(_) => 2,
        None if err.downcast_ref::<csv::Error>().is_some()
            || err.downcast_ref::<std::io::Error>().is_some() =>
        {
            2
        }
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
