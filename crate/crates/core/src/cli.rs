//! Command-line front end. `run` parses arguments, dispatches to the
//! experiment drivers and maps errors to exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::experiment::{cmd_ablate, cmd_diagnose, cmd_eval, cmd_sweep_lambda, cmd_train, RunConfig, Table};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "modalmetric", version, about = "Cross-modality metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of one method; writes checkpoints and training logs.
    Train(CommonArgs),
    /// Evaluate checkpoints on the unseen classes; writes metrics.json.
    Eval(CommonArgs),
    /// Gap and discrepancy diagnostics for several methods.
    Diagnose(CommonArgs),
    /// Component ablation over the eight loss combinations.
    Ablate(CommonArgs),
    /// Retrieval quality as a function of the embedding-loss weight λ.
    SweepLambda(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<String>,
    /// Base seed; runs use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Further `--key value` overrides of config entries.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    overrides: Vec<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = parse_overrides(&self.overrides)?;
        if let Some(m) = &self.method {
            overrides.push(("train.method".into(), m.clone()));
        }
        if let Some(s) = self.seed {
            overrides.push(("run.seed".into(), s.to_string()));
        }
        if let Some(o) = &self.out {
            overrides.push(("run.out".into(), o.display().to_string()));
        }
        RunConfig::load(&self.config, &overrides)
    }
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, found {flag:?}")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| Error::Config(format!("missing value for --{key}")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn print_table(table: &Table) {
    print!("{}", table.to_csv());
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => {
            let cfg = a.load()?;
            for run in cmd_train(&cfg)? {
                let last = run.log.last().map_or(f64::NAN, |r| r.l_total);
                println!(
                    "{} seed {}: final loss {last:.6} -> {}",
                    cfg.train.method,
                    run.seed,
                    cfg.run_dir(&cfg.train.method.to_string(), run.seed).display()
                );
            }
        }
        Command::Eval(a) => {
            let cfg = a.load()?;
            let res = cmd_eval(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&res.summary)?);
        }
        Command::Diagnose(a) => print_table(&cmd_diagnose(&a.load()?)?),
        Command::Ablate(a) => print_table(&cmd_ablate(&a.load()?)?),
        Command::SweepLambda(a) => print_table(&cmd_sweep_lambda(&a.load()?)?),
    }
    Ok(())
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code: 0 success, 2 config, 3 data, 4 protocol, 5 numeric.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
