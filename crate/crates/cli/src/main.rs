mod cli;
mod report;
mod run;
mod sweep;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command, RunArgs};
use run::{DatasetSpec, RunManifest};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Usage errors exit with 2, everything after validation with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn run_manifest(args: &RunArgs) -> anyhow::Result<RunManifest> {
    if let Some(path) = &args.manifest {
        if !args.hyper.is_empty()
            || args.seed.is_some()
            || args.noise.kind != rlpga::noise::NoiseKind::None
        {
            anyhow::bail!("--manifest replays a run; training flags cannot be combined with it");
        }
        let mut m = RunManifest::load(path)?;
        if let Some(out) = &args.out {
            m.out = out.clone();
        }
        return Ok(m);
    }
    let out = args
        .out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--out is required"))?;
    let config = args
        .hyper
        .resolve(args.data.dataset, args.variant, args.seed.unwrap_or(0))?;
    let dataset = DatasetSpec::from_args(&args.data)?;
    Ok(RunManifest::new(config, dataset, args.noise.clone(), out))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let manifest = usage(run_manifest(&args))?;
            let prepared = usage(run::prepare(manifest))?;
            let r = runtime(run::execute(&prepared, args.dump_graphs))?;
            if let Some(rec) = r.final_record {
                println!(
                    "step {} tgt_acc {:.4} w_estimate {:.4}",
                    rec.step, rec.tgt_acc, rec.w_estimate
                );
            }
            println!("wrote {}", prepared.manifest.out.display());
        }
        Command::Sweep(args) => {
            let planned = usage(sweep::plan(&args))?;
            let n = planned.len();
            let failed = runtime(sweep::execute(&args, planned))?;
            println!(
                "{} cells, {failed} failed; table in {}",
                n,
                args.out.join(sweep::AGGREGATE_FILE).display()
            );
            if failed > 0 {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "{failed} sweep cells failed"
                )));
            }
        }
        Command::Plot(args) => runtime(report::plot(&args.metrics, &args.out))?,
        Command::Export(args) => {
            let out = args.out.unwrap_or_else(|| args.run.join("embeddings.csv"));
            let n = runtime(report::export(&args.run, &out))?;
            println!("wrote {n} rows to {}", out.display());
        }
        Command::Timing(args) => print!("{}", runtime(report::timing(&args.metrics))?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
