use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtmc_harness::{run_experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "dtmc", version, about = "Experiments for discrete-time Malliavin calculus on Markov schemes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate paths with split noise; writes terminals.csv and path_*.csv.
    Simulate(Common),
    /// Scan the Hörmander quantity over a grid; writes hormander.csv.
    Hormander(Common),
    /// Duality and integration-by-parts identities; writes ibp.csv.
    IbpCheck(Common),
    /// Total-variation rate against a finer Gaussian reference; writes tv.csv.
    TvRate(Common),
    /// Regularized density and its derivative; writes density.csv.
    Density(Common),
    /// Iterated-sum central limit theorem; writes clt.csv and tv.csv.
    Clt(Common),
    /// Localization loss and the Hoeffding event; writes localization.csv.
    Localization(Common),
    /// Run whatever experiment the config names.
    Run(Common),
    /// Print the builtin config of an experiment.
    Config { experiment: String },
}

#[derive(Args)]
struct Common {
    /// Config file; the builtin config is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(experiment: Option<&str>, c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&c.config, experiment) {
        (Some(p), _) => ExperimentConfig::parse(&std::fs::read_to_string(p)?)?,
        (None, Some(id)) => ExperimentConfig::builtin(id)?,
        (None, None) => return Err(HarnessError::Config { path: "--config".into(), line: 0, msg: "`run` needs a config file".into() }),
    };
    if let Some(id) = experiment {
        if cfg.experiment != id {
            return Err(HarnessError::Config { path: "experiment.id".into(), line: 0, msg: format!("config is for `{}`, subcommand runs `{id}`", cfg.experiment) });
        }
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    // Re-validate with the overrides applied.
    ExperimentConfig::parse(&cfg.to_text())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match &cli.cmd {
        Cmd::Simulate(c) => (Some("simulate"), c),
        Cmd::Hormander(c) => (Some("hormander-scan"), c),
        Cmd::IbpCheck(c) => (Some("ibp-check"), c),
        Cmd::TvRate(c) => (Some("kinetic-tv"), c),
        Cmd::Density(c) => (Some("density"), c),
        Cmd::Clt(c) => (Some("iterated-clt"), c),
        Cmd::Localization(c) => (Some("localization"), c),
        Cmd::Run(c) => (None, c),
        Cmd::Config { experiment } => {
            return match ExperimentConfig::builtin(experiment) {
                Ok(c) => {
                    print!("{}", c.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            };
        }
    };
    let cfg = match load(experiment, common) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match run_experiment(&cfg) {
        Ok(report) => {
            let out = serde_json::json!({
                "experiment": report.experiment,
                "out": cfg.out,
                "files": report.files,
                "summary": report.summary,
                "rate_fit": report.rate_fit,
                "warnings": report.warnings,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
