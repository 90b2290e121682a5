//! `gtsim` command line: experiments, theory checks, topology inspection,
//! calculators and dataset statistics.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 failed
//! deterministic theory check, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gtsim::algorithms::{nonconvex_step_cap, pl_t0_floor, FloorParams, StepCapParams};
use gtsim::harness::{emit_outputs, load_config, run_experiment, ExperimentConfig, OutputFormat, ResultEnvelope};
use gtsim::metrics::{transient_time_nonconvex, transient_time_pl};
use gtsim::topology::{generate_graph, metropolis_hastings, tune_er_probability, GraphKind};
use gtsim::Error;

#[derive(Parser)]
#[command(
    name = "gtsim",
    version,
    about = "Decentralized SGD with gradient tracking: experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV, JSON and SVG outputs.
    Run(RunArgs),
    /// Run an experiment and report only the theory checks.
    Check(RunArgs),
    /// Build a graph, print its mixing matrix and lambda.
    Topo(TopoArgs),
    /// Step-size and transient-time calculators.
    Calc {
        #[command(subcommand)]
        which: CalcCommand,
    },
    /// Print statistics of a LIBSVM file.
    Parse { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct TopoArgs {
    /// ring, path, complete or erdos_renyi
    #[arg(long, default_value = "ring")]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tune an Erdős–Rényi graph to this lambda instead.
    #[arg(long)]
    target_lambda: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    /// Write the matrix as CSV.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CalcCommand {
    /// Transient time of the non-convex (`--nonconvex`) or PL (`--pl`) rate.
    Transient {
        #[arg(long, conflicts_with = "pl")]
        nonconvex: bool,
        #[arg(long)]
        pl: bool,
        #[arg(long)]
        n: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 6.0)]
        a: f64,
    },
    /// Non-convex step-size cap, or with `--pl` the start offset t0.
    Stepsize {
        #[arg(long)]
        pl: bool,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long = "l")]
        l: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_sq: f64,
        /// Defaults to sigma_sq.
        #[arg(long)]
        sigma_max_sq: Option<f64>,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 6.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
    },
}

enum Failure {
    Config(String),
    Check(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Check(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Check(m) | Failure::Io(m) => m,
        }
    }
}

/// I/O errors map to exit 3, everything else to 1.
fn classify(e: Error) -> Failure {
    match e {
        Error::Io { .. } => Failure::Io(e.to_string()),
        other => Failure::Config(other.to_string()),
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    // a missing or unreadable config is a configuration problem
    let mut cfg = load_config(&args.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = args.seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| cfg.resolve(d)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn print_checks(env: &ResultEnvelope) {
    for g in &env.groups {
        for a in &g.algorithms {
            for c in &a.checks {
                println!(
                    "n={} {} {}: {} instances, worst slack {}, {}",
                    g.agents,
                    a.algorithm,
                    c.name,
                    c.instances,
                    c.worst_slack.map_or("-".into(), |s| format!("{s:.3e}")),
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
        }
        if let Some(c) = &g.noise_check {
            println!(
                "n={} {}: {} estimates, worst margin {}, {}",
                g.agents,
                c.name,
                c.instances,
                c.worst_slack.map_or("-".into(), |s| format!("{s:.3e}")),
                if c.passed { "pass" } else { "FAIL" }
            );
        }
    }
}

fn cmd_run(args: &RunArgs, checks_only: bool) -> Result<(), Failure> {
    let cfg = load(args)?;
    let env = run_experiment(&cfg, args.workers).map_err(classify)?;
    if !checks_only {
        let dir = out_dir(args, &cfg);
        let report = emit_outputs(&env, &dir, &[OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg]);
        println!("wrote {} files to {}", report.written.len(), dir.display());
        if !report.ok() {
            let msg = report
                .failed
                .iter()
                .map(|(p, e)| format!("{}: {e}", p.display()))
                .collect::<Vec<_>>()
                .join("\n");
            return Err(Failure::Io(msg));
        }
        for g in &env.groups {
            for a in &g.algorithms {
                for fit in &a.tail_fits {
                    match &fit.fit {
                        Some(f) => println!(
                            "{}: slope {:.4e}, R^2 {:.3} on [{}, {}]",
                            fit.series, f.slope, f.r_squared, f.t_lo, f.t_hi
                        ),
                        None => println!("{}: no fit ({})", fit.series, fit.note.as_deref().unwrap_or("")),
                    }
                }
            }
        }
    }
    if env.partial {
        for f in &env.failures {
            eprintln!(
                "run {} of {} (n={}) failed: {}",
                f.run, f.algorithm, f.agents, f.message
            );
        }
    }
    print_checks(&env);
    if !env.deterministic_checks_passed() {
        return Err(Failure::Check("a deterministic theory check failed".into()));
    }
    Ok(())
}

fn cmd_topo(args: &TopoArgs) -> Result<(), Failure> {
    let m = if let Some(target) = args.target_lambda {
        let tuned = tune_er_probability(args.n, target, args.tol, args.seed).map_err(classify)?;
        println!("p = {:.6} ({} bisection steps)", tuned.p, tuned.bisection_steps);
        tuned.matrix
    } else {
        let kind = match args.kind.as_str() {
            "ring" => GraphKind::Ring,
            "path" => GraphKind::Path,
            "complete" => GraphKind::Complete,
            "erdos_renyi" | "er" => GraphKind::ErdosRenyi {
                p: args
                    .p
                    .ok_or_else(|| Failure::Config("--p is required for erdos_renyi".into()))?,
            },
            other => return Err(Failure::Config(format!("unknown graph kind `{other}`"))),
        };
        let g = generate_graph(kind, args.n, args.seed).map_err(classify)?;
        metropolis_hastings(&g).map_err(classify)?
    };
    let w = m.weights();
    for i in 0..w.nrows() {
        let row: Vec<String> = w.row(i).iter().map(|v| format!("{v:.6}")).collect();
        println!("{}", row.join(" "));
    }
    println!("lambda = {:.6}", m.lambda());
    if let Some(path) = &args.export {
        m.save_csv(path).map_err(classify)?;
    }
    Ok(())
}

fn cmd_calc(which: &CalcCommand) -> Result<(), Failure> {
    match *which {
        CalcCommand::Transient {
            nonconvex,
            pl,
            n,
            lambda,
            rho,
            eps,
            a,
        } => {
            let v = match (nonconvex, pl) {
                (_, true) => transient_time_pl(n, lambda, a),
                (true, false) => transient_time_nonconvex(n, lambda, rho, eps),
                (false, false) => {
                    return Err(Failure::Config("pass --nonconvex or --pl".into()));
                }
            }
            .map_err(classify)?;
            println!("{v}");
        }
        CalcCommand::Stepsize {
            pl,
            n,
            horizon,
            l,
            lambda,
            sigma_sq,
            sigma_max_sq,
            d,
            rho,
            eps,
            a,
            mu,
        } => {
            let sigma_max_sq = sigma_max_sq.unwrap_or(sigma_sq);
            let (value, terms) = if pl {
                let floor = pl_t0_floor(&FloorParams {
                    n,
                    lambda,
                    a,
                    l,
                    mu,
                    sigma_sq,
                    sigma_max_sq,
                    rho,
                    eps_exponent: eps,
                })
                .map_err(classify)?;
                println!("t0 = {}", floor.value);
                (floor.value, floor.terms)
            } else {
                let cap = nonconvex_step_cap(&StepCapParams {
                    n,
                    horizon,
                    l,
                    lambda,
                    sigma_sq,
                    sigma_max_sq,
                    d,
                    rho,
                    eps_exponent: eps,
                });
                println!("alpha = {}", cap.recommended);
                println!("cap = {}", cap.cap.value);
                (cap.cap.value, cap.cap.terms)
            };
            for (name, v) in terms {
                let mark = if v == value { " *" } else { "" };
                println!("  {name:<18} {v:.6e}{mark}");
            }
        }
    }
    Ok(())
}

fn cmd_parse(file: &Path) -> Result<(), Failure> {
    let ds = gtsim::datasets::load_libsvm(file).map_err(classify)?;
    println!("samples      {}", ds.m());
    println!("dimension    {}", ds.d());
    println!("nonzeros     {}", ds.nonzeros());
    println!("positive     {:.4}", ds.positive_fraction());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args, false),
        Command::Check(args) => cmd_run(args, true),
        Command::Topo(args) => cmd_topo(args),
        Command::Calc { which } => cmd_calc(which),
        Command::Parse { file } => cmd_parse(file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
