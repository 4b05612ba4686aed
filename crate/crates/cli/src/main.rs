use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use refmia_core::experiment::{RunConfig, RunError, Runner, Stage, SweepParam};
use refmia_core::synth::{generate, SyntheticConfig};

/// Reference-recommendation membership inference audits for hybrid
/// recommenders.
#[derive(Parser, Debug)]
#[command(name = "refmia", version)]
struct Cli {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Recompute stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,

    /// With `run`, stop after this stage; without a subcommand, run only
    /// this stage.
    #[arg(long, global = true, value_name = "NAME")]
    stage: Option<Stage>,

    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// All stages in order.
    Run,
    /// Split users and record the split manifest.
    Prepare,
    /// Factorize the attacker's interactions into item embeddings.
    Embed,
    /// Train the target recommender(s).
    Train,
    /// Query the trained targets and record attack results.
    Attack,
    /// Compute metrics and write the report.
    Evaluate,
    /// Re-run the attack across `n` or re-embed across `l`.
    Sweep {
        #[arg(value_parser = ["n", "l"])]
        parameter: String,
    },
    /// Metric-function curve table.
    Curves,
    /// Write synthetic MovieLens-100K-format files into --out.
    Synth {
        #[arg(long, default_value_t = 2024)]
        data_seed: u64,
    },
    /// Print the effective config as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(RunError::Config)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok()).map_err(RunError::Config)?;
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.eval.seeds = vec![seed];
    }
    Ok(cfg)
}

fn print_report(report: &refmia_core::eval::EvalReport) {
    println!("asr\t{:.4}", report.asr);
    for (fpr, tpr) in &report.tpr_at_fpr {
        println!("tpr@{fpr}\t{tpr:.4}");
    }
    for (method, table) in &report.summary {
        if let Some(asr) = table.get("asr") {
            println!("{method}\tasr {:.4} +- {:.4}", asr.mean, asr.std);
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let cfg = load_config(cli)?;
    if let Some(Command::Config) = cli.command {
        print!("{}", cfg.to_toml().map_err(RunError::Config)?);
        return Ok(());
    }
    let runner = Runner::new(cfg, cli.force)?.quiet(cli.quiet);
    runner.write_manifest()?;
    let single = |stage: Stage| -> Result<(), RunError> {
        match stage {
            Stage::Prepare => runner.prepare(),
            Stage::Embed => runner.embed(),
            Stage::Train => runner.train(),
            Stage::Attack => runner.attack(),
            Stage::Evaluate => runner.evaluate().map(|r| print_report(&r)),
        }
    };
    match &cli.command {
        None => match cli.stage {
            Some(stage) => single(stage),
            None => runner.run(None).map(|r| r.iter().for_each(print_report)),
        },
        Some(Command::Run) => runner.run(cli.stage).map(|r| r.iter().for_each(print_report)),
        Some(Command::Prepare) => single(Stage::Prepare),
        Some(Command::Embed) => single(Stage::Embed),
        Some(Command::Train) => single(Stage::Train),
        Some(Command::Attack) => single(Stage::Attack),
        Some(Command::Evaluate) => single(Stage::Evaluate),
        Some(Command::Sweep { parameter }) => {
            let param: SweepParam = parameter.parse().map_err(RunError::Config)?;
            let rows = runner.sweep(param, cli.seed)?;
            println!("{}\tasr\ttpr", param.name());
            for r in rows {
                println!("{}\t{:.4}\t{:.4}", r.value, r.asr, r.tpr);
            }
            Ok(())
        }
        Some(Command::Curves) => runner.curves().map(|p| println!("{}", p.display())),
        Some(Command::Synth { .. }) | Some(Command::Config) => unreachable!(),
    }
}

fn synth(cli: &Cli, data_seed: u64) -> anyhow::Result<()> {
    let out = cli.out.clone().context("synth needs --out DIR")?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?.data.synthetic,
        None => SyntheticConfig::default(),
    };
    let cfg = SyntheticConfig { seed: data_seed, ..cfg };
    generate(&cfg)?.write(&out)?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(Command::Synth { data_seed }) = cli.command {
        return match synth(&cli, data_seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        };
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
