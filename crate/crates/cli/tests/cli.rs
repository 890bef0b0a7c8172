use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const METRICS_HEADER: &str =
    "step,w_estimate,l_clf,l_r,dis_pn,total,src_acc_noisy,tgt_acc,ms_critic,ms_main,ms_graph";

fn rlpga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlpga"))
        .args(args)
        .env("RLPGA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rlpga(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn short_run(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "run",
        "--steps",
        "40",
        "--eval-interval",
        "10",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir.to_path_buf()
}

fn metrics_without_timing(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(8).collect::<Vec<_>>().join(","))
        .collect()
}

#[test]
fn run_writes_its_artifacts() {
    let tmp = TempDir::new().unwrap();
    let dir = short_run(
        &tmp.path().join("run"),
        &["--noise", "case1:0.2", "--seed", "4", "--dump-graphs"],
    );
    for f in [
        "manifest.json",
        "metrics.csv",
        "params.json",
        "summary.txt",
        "graphs_source.csv",
        "graphs_target.csv",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let steps: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["10", "20", "30", "40"]);
    let summary = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("noise case1:0.2"), "{summary}");
    let graph = fs::read_to_string(dir.join("graphs_source.csv")).unwrap();
    assert!(graph.starts_with("i,j,h_pos,h_neg,b_i,b_j\n"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &["run", "--variant", "rga", "--alpha", "1", "--out", out],
        &["run", "--bogus", "--out", out],
        &["run", "--noise", "case1:1.5", "--out", out],
        &["run", "--dataset", "csv", "--out", out],
    ];
    for args in cases {
        assert_eq!(rlpga(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn identical_runs_have_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let a = short_run(&tmp.path().join("a"), &["--noise", "case1:0.4"]);
    let b = short_run(&tmp.path().join("b"), &["--noise", "case1:0.4"]);
    assert_eq!(metrics_without_timing(&a), metrics_without_timing(&b));
}

#[test]
fn manifest_replay_reproduces_metrics() {
    let tmp = TempDir::new().unwrap();
    let a = short_run(
        &tmp.path().join("a"),
        &["--variant", "wdgrl_ce", "--seed", "2"],
    );
    let b = tmp.path().join("b");
    ok(&[
        "run",
        "--manifest",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(metrics_without_timing(&a), metrics_without_timing(&b));
    let out = rlpga(&[
        "run",
        "--manifest",
        a.join("manifest.json").to_str().unwrap(),
        "--beta",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_aggregates_every_cell() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--ratios",
        "0,0.4",
        "--variants",
        "rlpga,wdgrl_ce",
        "--seeds",
        "1",
        "--steps",
        "20",
        "--eval-interval",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    let agg = fs::read_to_string(out.join("final_acc.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "ratio,variant,seed,tgt_acc");
    assert_eq!(lines.len(), 5);
    assert!(out.join("r0.4_wdgrl_ce_s1").join("metrics.csv").is_file());
}

fn count_panels(svg: &str) -> Vec<(usize, usize)> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    doc.root_element()
        .children()
        .filter(|n| n.has_tag_name("g"))
        .map(|g| {
            let lines = g
                .descendants()
                .filter(|n| n.has_tag_name("polyline"))
                .count();
            let legend = g
                .descendants()
                .filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("legend"))
                .count();
            (lines, legend)
        })
        .collect()
}

#[test]
fn plot_draws_one_curve_per_file() {
    let tmp = TempDir::new().unwrap();
    let runs: Vec<PathBuf> = ["rlpga", "rga", "wdgrl_ce"]
        .iter()
        .map(|v| short_run(&tmp.path().join(v), &["--variant", v]))
        .collect();
    let metrics: Vec<String> = runs
        .iter()
        .map(|d| d.join("metrics.csv").display().to_string())
        .collect();

    let one = tmp.path().join("one.svg");
    ok(&["plot", &metrics[0], "--out", one.to_str().unwrap()]);
    assert_eq!(
        count_panels(&fs::read_to_string(&one).unwrap()),
        [(1, 1), (1, 1)]
    );

    let three = tmp.path().join("three.svg");
    let mut args = vec!["plot"];
    args.extend(metrics.iter().map(String::as_str));
    args.extend(["--out", three.to_str().unwrap()]);
    ok(&args);
    assert_eq!(
        count_panels(&fs::read_to_string(&three).unwrap()),
        [(3, 3), (3, 3)]
    );

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, format!("{METRICS_HEADER}\n")).unwrap();
    let out = rlpga(&[
        "plot",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("e.svg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn timing_prints_one_row_per_file() {
    let tmp = TempDir::new().unwrap();
    let a = short_run(&tmp.path().join("a"), &[]);
    let b = short_run(&tmp.path().join("b"), &["--variant", "rga"]);
    let out = ok(&[
        "timing",
        a.join("metrics.csv").to_str().unwrap(),
        b.join("metrics.csv").to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("run,critic_mean"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));
}

#[test]
fn export_writes_latent_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = short_run(&tmp.path().join("run"), &[]);
    ok(&["export", "--run", dir.to_str().unwrap()]);
    let text = fs::read_to_string(dir.join("embeddings.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with("domain")).collect();
    assert_eq!(rows.len(), 4000);
    assert!(rows.iter().all(|r| r.split(',').count() == 22));
    assert!(rows.iter().all(|r| !r.contains(",-1,")));
}

#[test]
fn csv_pipeline_runs_and_exports() {
    let tmp = TempDir::new().unwrap();
    let (src, tgt, eval) = (
        fixture("src_200.csv"),
        fixture("tgt_200.csv"),
        fixture("tgt_200_labels.txt"),
    );
    let common = [
        "--dataset",
        "csv",
        "--src-csv",
        &src,
        "--tgt-csv",
        &tgt,
        "--preset",
        "office31",
    ];

    let labeled = tmp.path().join("labeled");
    let mut args = common.to_vec();
    args.extend(["--tgt-eval-csv", &eval]);
    let dir = short_run(&labeled, &args);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(7).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let unlabeled = short_run(&tmp.path().join("unlabeled"), &common);
    ok(&["export", "--run", unlabeled.to_str().unwrap()]);
    let text = fs::read_to_string(unlabeled.join("embeddings.csv")).unwrap();
    let target: Vec<&str> = text.lines().filter(|l| l.starts_with("target,")).collect();
    assert_eq!(target.len(), 200);
    assert!(target.iter().all(|l| l.starts_with("target,-1,")));
    assert!(target.iter().all(|l| l.split(',').count() == 2 + 100));
}
