use std::fmt::Write as _;
use std::fs;

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use rlpga::noise::NoiseSpec;
use rlpga::Variant;

use crate::cli::SweepArgs;
use crate::run::{self, DatasetSpec, RunManifest};

pub const THREADS_ENV: &str = "RLPGA_THREADS";
pub const AGGREGATE_FILE: &str = "final_acc.csv";

pub struct Cell {
    pub ratio: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("r{}_{}_s{}", self.ratio, self.variant, self.seed)
    }
}

/// Ratio-major cartesian product.
pub fn cells(ratios: &[f64], variants: &[Variant], seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &ratio in ratios {
        for &variant in variants {
            for &seed in seeds {
                out.push(Cell {
                    ratio,
                    variant,
                    seed,
                });
            }
        }
    }
    out
}

/// Builds every cell's manifest up front so flag errors surface before any
/// training starts.
pub fn plan(args: &SweepArgs) -> anyhow::Result<Vec<(Cell, RunManifest)>> {
    let dataset = DatasetSpec::from_args(&args.data)?;
    let mut out = Vec::new();
    for cell in cells(&args.ratios, &args.variants, &args.seeds) {
        let config = args
            .hyper
            .resolve(args.data.dataset, cell.variant, cell.seed)?;
        let noise: NoiseSpec = format!("{}:{}", args.noise_kind, cell.ratio).parse()?;
        let m = RunManifest::new(
            config,
            dataset.clone(),
            noise,
            args.out.join(cell.dir_name()),
        );
        out.push((cell, m));
    }
    Ok(out)
}

fn thread_count() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize =
                v.trim().parse().ok().filter(|&n| n > 0).with_context(|| {
                    format!("{THREADS_ENV} must be a positive integer, got {v:?}")
                })?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Runs the planned cells and writes the aggregate table. Returns the number
/// of failed cells.
pub fn execute(args: &SweepArgs, planned: Vec<(Cell, RunManifest)>) -> anyhow::Result<usize> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let results: Vec<anyhow::Result<f64>> = pool.install(|| {
        planned
            .par_iter()
            .map(|(cell, m)| {
                info!("cell {}", cell.dir_name());
                let p = run::prepare(m.clone())?;
                let r = run::execute(&p, false)?;
                Ok(r.final_record.map_or(f64::NAN, |r| r.tgt_acc))
            })
            .collect()
    });

    let mut table = String::from("ratio,variant,seed,tgt_acc\n");
    let mut failures = String::new();
    for ((cell, _), res) in planned.iter().zip(&results) {
        let acc = match res {
            Ok(a) => *a,
            Err(e) => {
                warn!("cell {} failed: {e:#}", cell.dir_name());
                writeln!(failures, "{}: {e:#}", cell.dir_name())?;
                f64::NAN
            }
        };
        writeln!(
            table,
            "{},{},{},{:?}",
            cell.ratio, cell.variant, cell.seed, acc
        )?;
    }
    fs::write(args.out.join(AGGREGATE_FILE), table)?;
    let n_failed = results.iter().filter(|r| r.is_err()).count();
    if n_failed > 0 {
        fs::write(args.out.join("failures.txt"), failures)?;
    }
    Ok(n_failed)
}
