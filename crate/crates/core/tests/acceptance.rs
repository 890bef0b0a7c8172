//! Acceptance report. Prints one PASS or FAIL line per criterion with the
//! measured value and the threshold. A FAIL is reported, not panicked on, so
//! the rest of the report still runs; `ACCEPTANCE_STRICT=1` turns any FAIL
//! into a non-zero exit.

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::measure;
use rand_distr::{Distribution, Normal};
use rlpga::data::{gen_synthetic, load_feature_csv, load_label_file, Domain, DomainDataset};
use rlpga::metrics::{ls_slope, records_to_csv, std_dev, MetricsTable};
use rlpga::model::{Activation, Mlp};
use rlpga::noise::{build_case1, build_pairwise, build_uniform, corrupt_labels, default_pair_map};
use rlpga::optim::{adam_step, AdamState};
use rlpga::trainer::{critic_loss, discrepancy, seeded_rng, train, IterationRecord, NOISE_STREAM};
use rlpga::{losses, Preset, Tensor, TrainConfig, Variant};

const RATIOS: [f64; 4] = [0.0, 0.2, 0.4, 0.6];

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!(
            "criterion {id:>2} {:<4} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(id);
        }
    }
}

struct Run {
    records: Vec<IterationRecord>,
    elapsed: Duration,
}

impl Run {
    fn final_acc(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.tgt_acc)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    variant: Variant,
    ratio_pct: u32,
    seed: u64,
}

/// Synthetic runs keyed by cell, trained on demand and reused across criteria.
#[derive(Default)]
struct Runs(HashMap<Key, Run>);

impl Runs {
    fn get(&mut self, variant: Variant, ratio: f64, seed: u64) -> &Run {
        let key = Key {
            variant,
            ratio_pct: (ratio * 100.0).round() as u32,
            seed,
        };
        self.0
            .entry(key)
            .or_insert_with(|| synthetic_run(variant, ratio, seed))
    }
}

fn synthetic_run(variant: Variant, ratio: f64, seed: u64) -> Run {
    let (mut src, tgt) = gen_synthetic(seed);
    let t = build_case1(ratio).unwrap();
    let clean = src.labels.take().unwrap();
    src.labels = Some(corrupt_labels(&clean, &t, &mut seeded_rng(seed, NOISE_STREAM)).unwrap());
    let mut config = TrainConfig::preset(Preset::Synthetic, variant);
    config.seed = seed;
    let start = Instant::now();
    let out = train(&config, &src, &tgt, tgt.labels.as_deref()).unwrap();
    Run {
        records: out.records,
        elapsed: start.elapsed(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_reproduction(report: &mut Report, runs: &mut Runs) {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut slowest = Duration::ZERO;
    for r in RATIOS {
        let accs: Vec<f64> = (1..=3)
            .map(|s| runs.get(Variant::Rlpga, r, s).final_acc())
            .collect();
        for s in 1..=3 {
            slowest = slowest.max(runs.get(Variant::Rlpga, r, s).elapsed);
        }
        let hits = accs.iter().filter(|&&a| a >= 0.98).count();
        ok &= hits >= 2;
        parts.push(format!("r={r}: {accs:.4?} ({hits}/3)"));
    }
    ok &= slowest <= Duration::from_secs(300);
    report.line(
        1,
        "synthetic target accuracy >= 0.98 on >= 2 of 3 seeds",
        ok,
        format!(
            "{}; slowest run {:.1}s",
            parts.join("; "),
            slowest.as_secs_f64()
        ),
    );
}

fn ablation_ordering(report: &mut Report, runs: &mut Runs) {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in [0.4, 0.6] {
        let m: Vec<f64> = [Variant::Rlpga, Variant::Rga, Variant::WdgrlCe]
            .iter()
            .map(|&v| {
                mean(
                    &(1..=5)
                        .map(|s| runs.get(v, r, s).final_acc())
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        ok &= m[0] >= m[1] && m[1] >= m[2];
        if r == 0.6 {
            ok &= m[0] - m[2] >= 0.03;
        }
        parts.push(format!(
            "r={r}: rlpga {:.4} rga {:.4} wdgrl_ce {:.4}",
            m[0], m[1], m[2]
        ));
    }
    report.line(
        2,
        "mean accuracy rlpga >= rga >= wdgrl_ce, gap >= 0.03 at r=0.6",
        ok,
        parts.join("; "),
    );
}

fn tail_std(run: &Run, steps: usize) -> f64 {
    let tail: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.step + 1000 > steps)
        .map(|r| r.tgt_acc)
        .collect();
    std_dev(&tail)
}

fn stability(report: &mut Report, runs: &mut Runs) {
    let steps = TrainConfig::preset(Preset::Synthetic, Variant::Rlpga).steps;
    let mut wins = 0;
    let mut parts = Vec::new();
    for s in 1..=5 {
        let a = tail_std(runs.get(Variant::Rlpga, 0.4, s), steps);
        let b = tail_std(runs.get(Variant::WdgrlCe, 0.4, s), steps);
        if a < b {
            wins += 1;
        }
        parts.push(format!("s{s} {a:.4}/{b:.4}"));
    }
    report.line(
        3,
        "tail std of accuracy rlpga < wdgrl_ce on >= 4 of 5 seeds at r=0.4",
        wins >= 4,
        format!("{wins}/5 ({})", parts.join(", ")),
    );
}

fn critic_convergence(report: &mut Report, runs: &mut Runs) {
    let mut worst = 0.0_f64;
    let mut within = 0;
    let mut total = 0;
    for r in RATIOS {
        for s in 1..=3 {
            let run = runs.get(Variant::Rlpga, r, s);
            let (xs, ys): (Vec<f64>, Vec<f64>) = run
                .records
                .iter()
                .filter(|r| (3000..=5000).contains(&r.step))
                .map(|r| (r.step as f64, r.w_estimate.abs()))
                .unzip();
            let slope = ls_slope(&xs, &ys).abs();
            worst = worst.max(slope);
            total += 1;
            if slope < 1e-5 {
                within += 1;
            }
        }
    }
    report.line(
        4,
        "|w_estimate| slope over steps 3000-5000 below 1e-5 per step",
        within == total,
        format!("{within}/{total} runs within; largest |slope| {worst:.2e}"),
    );
}

fn determinant_properties(report: &mut Report) {
    let failures = measure::det_invariance_failures(1000, 1e-12);
    report.line(
        5,
        "|det(T1 T)| = |det T1| |det T| within 1e-12",
        failures == 0,
        format!("{failures} failures in 1000"),
    );
    let (checked, flips) = measure::ranking_flips(1000, 1e-12);
    report.line(
        6,
        "loss ordering preserved under label channels",
        flips == 0,
        format!("{flips} flips in {checked} untied pairs"),
    );
}

fn gradient_integrity(report: &mut Report) {
    let errors = [
        ("L_clf", measure::classification_loss_grad_error()),
        ("L_r", measure::entropy_regularizer_grad_error()),
        ("Dis_pn", measure::signed_graph_grad_error()),
        ("critic", measure::critic_objective_grad_error()),
        ("penalty", measure::penalty_grad_error()),
    ];
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report.line(
        7,
        "finite-difference relative error below 1e-4",
        worst < 1e-4,
        detail.join(", "),
    );
}

fn graph_oracles(report: &mut Report) {
    let knn = measure::knn_mismatches(1000);
    let clusters = measure::cluster_mismatches(1000);
    report.line(
        8,
        "kNN masks and 1-NN clusters match brute-force oracles",
        knn == 0 && clusters == 0,
        format!("{knn} kNN and {clusters} cluster mismatches in 1000 each"),
    );
}

fn noise_fidelity(report: &mut Report) {
    let per_class = 100_000;
    let errs = [
        (
            "case1",
            measure::noise_frequency_error(&build_case1(0.4).unwrap(), per_class, 41),
        ),
        (
            "pairwise",
            measure::noise_frequency_error(
                &build_pairwise(4, 0.3, &default_pair_map(4)).unwrap(),
                per_class,
                42,
            ),
        ),
        (
            "uniform",
            measure::noise_frequency_error(&build_uniform(5, 0.4).unwrap(), per_class, 43),
        ),
    ];
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.4}")).collect();
    report.line(
        9,
        "empirical flip frequencies within 0.02",
        worst <= 0.02,
        detail.join(", "),
    );
}

/// Sorted-quantile W1 between two equal-size samples.
fn exact_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn wasserstein_sanity(report: &mut Report) {
    let mut rng = common::rng(10);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..512).map(|_| normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..512).map(|_| 3.0 + normal.sample(&mut rng)).collect();
    let exact = exact_w1(&a, &b);

    let mut config = TrainConfig::preset(Preset::Synthetic, Variant::Rlpga);
    config.lr_critic = 1e-2;
    let (z_s, z_t) = (Tensor::column_vector(&b), Tensor::column_vector(&a));
    let mut critic = Mlp::new(&[1, 20, 1], Activation::Identity, "critic", &mut rng).unwrap();
    let mut adam = AdamState::new(&critic.params);
    for _ in 0..2000 {
        let pts = losses::interpolates(&z_s, &z_t, &mut rng).unwrap();
        critic_loss(&config, &mut critic, &z_s, &z_t, &pts, true).unwrap();
        adam_step(&mut critic.params, &mut adam, config.lr_critic).unwrap();
    }
    let estimate = discrepancy(&config, &critic, &z_s, &z_t).unwrap();
    let rel = (estimate - exact).abs() / exact;
    report.line(
        10,
        "critic dual estimate within 15% of exact 1-D W1 after 2000 steps",
        rel <= 0.15,
        format!("estimate {estimate:.4}, exact {exact:.4}, relative error {rel:.4}"),
    );
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn csv_metrics(src: &DomainDataset, tgt: &DomainDataset, eval: &[usize]) -> Result<String, String> {
    let mut config = TrainConfig::preset(Preset::Office31, Variant::Rlpga);
    config.steps = 200;
    config.eval_interval = 20;
    config.seed = 3;
    let out = train(&config, src, tgt, Some(eval)).map_err(|e| e.to_string())?;
    let table = MetricsTable::parse(&records_to_csv(&out.records)).map_err(|e| e.to_string())?;
    if table.rows.len() != 10
        || table
            .column("tgt_acc")
            .map_err(|e| e.to_string())?
            .iter()
            .any(|a| !a.is_finite())
    {
        return Err(format!(
            "{} metric rows, expected 10 with finite accuracy",
            table.rows.len()
        ));
    }
    Ok(table.without_timing())
}

fn csv_pipeline(report: &mut Report) {
    let outcome = (|| -> Result<String, String> {
        let src = load_feature_csv(&fixture("src_200.csv"), true, Domain::Source)
            .map_err(|e| e.to_string())?;
        let tgt = load_feature_csv(&fixture("tgt_200.csv"), false, Domain::Target)
            .map_err(|e| e.to_string())?;
        let eval = load_label_file(&fixture("tgt_200_labels.txt")).map_err(|e| e.to_string())?;
        let first = csv_metrics(&src, &tgt, &eval)?;
        let second = csv_metrics(&src, &tgt, &eval)?;
        if first != second {
            return Err("repeated runs differ".into());
        }
        let last = first.lines().last().unwrap_or_default().to_string();
        Ok(format!(
            "{} source rows, deterministic, last row {last}",
            src.len()
        ))
    })();
    let pass = outcome.is_ok();
    report.line(
        11,
        "feature-CSV pipeline completes on a 200-row fixture",
        pass,
        outcome.unwrap_or_else(|e| e),
    );
}

fn main() {
    let mut report = Report { failed: Vec::new() };
    let mut runs = Runs::default();
    synthetic_reproduction(&mut report, &mut runs);
    ablation_ordering(&mut report, &mut runs);
    stability(&mut report, &mut runs);
    critic_convergence(&mut report, &mut runs);
    determinant_properties(&mut report);
    gradient_integrity(&mut report);
    graph_oracles(&mut report);
    noise_fidelity(&mut report);
    wasserstein_sanity(&mut report);
    csv_pipeline(&mut report);
    println!(
        "acceptance: {} of 11 criteria pass; failing {:?}",
        11 - report.failed.len(),
        report.failed
    );
    if std::env::var_os("ACCEPTANCE_STRICT").is_some() && !report.failed.is_empty() {
        std::process::exit(1);
    }
}
