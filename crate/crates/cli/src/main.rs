use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hlt::experiment::{run_experiment, ExperimentConfig, ExperimentKind, RunOptions, RunRecord};

#[derive(Parser)]
#[command(name = "hlt", version, about = "Hamiltonian learning tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// HLT fidelity sweep over (l, m, seed); also runs eigen-recovery configs
    Hlt(RunArgs),
    /// Full-tomography baseline sweep
    Qst(RunArgs),
    /// Monte-Carlo check of the subspace error estimate
    Oracle(RunArgs),
    /// Ground-truth-free convergence diagnostic
    Converge(RunArgs),
    /// GHZ reduced-state study
    Ghz(RunArgs),
    /// Window fidelities against subsystem tomography
    VerifySubsystems(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn parts(&self) -> (&RunArgs, &'static [ExperimentKind]) {
        use ExperimentKind::*;
        match self {
            Command::Hlt(a) => (a, &[HltSweep, EigenRecovery]),
            Command::Qst(a) => (a, &[QstSweep]),
            Command::Oracle(a) => (a, &[ErrorOracle]),
            Command::Converge(a) => (a, &[Convergence]),
            Command::Ghz(a) => (a, &[GhzStudy]),
            Command::VerifySubsystems(a) => (a, &[SubsystemVerify]),
        }
    }
}

fn load_config(args: &RunArgs, allowed: &[ExperimentKind]) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if !allowed.contains(&cfg.kind) {
        let names: Vec<String> = allowed.iter().map(|k| k.to_string()).collect();
        anyhow::bail!("config kind `{}` does not match this command (expected {})", cfg.kind, names.join(" or "));
    }
    if let Some(s) = args.seed_base {
        cfg.seed_base = s;
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

fn print_summary(record: &RunRecord) {
    println!("{:>3} {:>9} {:>5} {:>8} {:>5} {:>12} {:>10} {:>12} {:>10}", "n", "eps", "l", "m", "runs", "fidelity", "sd", "metric", "sd");
    for s in &record.summary {
        println!(
            "{:>3} {:>9} {:>5} {:>8} {:>5} {:>12} {:>10} {:>12} {:>10}",
            s.n_qubits,
            s.epsilon.map(|e| format!("{e:e}")).unwrap_or_else(|| "-".into()),
            s.l.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            s.m.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
            s.count,
            fmt_opt(s.fidelity_mean),
            fmt_opt(s.fidelity_sd),
            fmt_opt(s.metric_mean),
            fmt_opt(s.metric_sd),
        );
    }
    if let Some(m) = record.mean_metric {
        println!("mean ratio {m:.6}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, allowed) = cli.command.parts();
    let cfg = match load_config(args, allowed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.kind.to_string()));
    let options = RunOptions { out_dir: Some(out.clone()), resume: args.resume };
    match run_experiment(&cfg, &options) {
        Ok(record) => {
            print_summary(&record);
            println!("results written to {}", out.display());
            if record.failures() > 0 {
                eprintln!("{} grid points failed", record.failures());
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
