use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use balanced_distill::harness::{self, MetricsRow, RunConfig};
use balanced_distill::Error;

#[derive(Parser)]
#[command(version, about = "Balanced score distillation against analytic mixture oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured combiner over every seed.
    Run(Common),
    /// Run the balanced combiner at each configured lambda.
    SweepLambda(Common),
    /// Obtuse-angle census at the initial sample and along a reference run.
    AngleCensus(Common),
    /// Run several combiners and tabulate medians.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory, replacing the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Over-training factor, replacing the config's.
    #[arg(long)]
    overtrain: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(s) = &self.seed {
            c.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(f) = self.overtrain {
            c.overtrain_factor = f;
        }
        Ok(c)
    }
}

fn print_rows<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) {
    for r in rows {
        println!("{}", serde_json::to_string(&r).expect("rows serialize"));
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run(c) => {
            let metrics = harness::run_experiment(&c.load()?)?;
            print_rows(metrics.iter().map(MetricsRow::from));
        }
        Command::SweepLambda(c) => print_rows(harness::sweep_lambda(&c.load()?)?),
        Command::Compare(c) => print_rows(harness::compare(&c.load()?)?),
        Command::AngleCensus(c) => {
            let r = harness::angle_census(&c.load()?)?;
            println!(
                "{}",
                json!({
                    "reference": r.reference,
                    "draws": r.frozen_total.draws,
                    "excluded": r.frozen_total.excluded,
                    "obtuse_fraction": r.frozen_total.obtuse_fraction(),
                    "obtuse_fraction_residual": r.frozen_total.obtuse_fraction_residual(),
                    "obtuse_fraction_by_t_decile":
                        r.frozen.iter().map(|a| a.obtuse_fraction()).collect::<Vec<_>>(),
                    "cv_norm_sg": r.cv_norm_sg,
                    "cv_norm_sg_residual": r.cv_norm_sg_residual,
                })
            );
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
