use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use rlpga::data::{self, Domain, DomainDataset};
use rlpga::graph::SignedWeightGraph;
use rlpga::metrics::{record_row, METRICS_HEADER};
use rlpga::noise::{corrupt_labels, NoiseSpec};
use rlpga::trainer::{self, IterationRecord, NOISE_STREAM};
use rlpga::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::cli::{DataArgs, DatasetKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PARAMS_FILE: &str = "params.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic,
    Csv {
        src: PathBuf,
        tgt: PathBuf,
        #[serde(default)]
        tgt_eval: Option<PathBuf>,
    },
}

impl DatasetSpec {
    pub fn from_args(a: &DataArgs) -> anyhow::Result<Self> {
        match a.dataset {
            DatasetKind::Synthetic => {
                if a.src_csv.is_some() || a.tgt_csv.is_some() || a.tgt_eval_csv.is_some() {
                    bail!("--src-csv, --tgt-csv and --tgt-eval-csv need --dataset csv");
                }
                Ok(DatasetSpec::Synthetic)
            }
            DatasetKind::Csv => match (&a.src_csv, &a.tgt_csv) {
                (Some(src), Some(tgt)) => Ok(DatasetSpec::Csv {
                    src: src.clone(),
                    tgt: tgt.clone(),
                    tgt_eval: a.tgt_eval_csv.clone(),
                }),
                _ => bail!("--dataset csv needs --src-csv and --tgt-csv"),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Milliseconds since the Unix epoch when the run started.
    pub started_unix_ms: u64,
    pub config: TrainConfig,
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub out: PathBuf,
}

impl RunManifest {
    pub fn new(config: TrainConfig, dataset: DatasetSpec, noise: NoiseSpec, out: PathBuf) -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms,
            config,
            dataset,
            noise,
            out,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Source with clean labels, target, and target evaluation labels.
pub struct Datasets {
    pub src: DomainDataset,
    pub tgt: DomainDataset,
    pub tgt_eval: Option<Vec<usize>>,
}

impl Datasets {
    pub fn load(spec: &DatasetSpec, seed: u64) -> anyhow::Result<Self> {
        match spec {
            DatasetSpec::Synthetic => {
                let (src, mut tgt) = data::gen_synthetic(seed);
                let tgt_eval = tgt.labels.take();
                Ok(Self { src, tgt, tgt_eval })
            }
            DatasetSpec::Csv { src, tgt, tgt_eval } => {
                let s = data::load_feature_csv(src, true, Domain::Source)
                    .with_context(|| format!("loading {}", src.display()))?;
                let t = data::load_feature_csv(tgt, false, Domain::Target)
                    .with_context(|| format!("loading {}", tgt.display()))?;
                let e = match tgt_eval {
                    Some(p) => Some(
                        data::load_label_file(p)
                            .with_context(|| format!("loading {}", p.display()))?,
                    ),
                    None => None,
                };
                if s.dim() != t.dim() {
                    bail!("source has {} feature columns, target {}", s.dim(), t.dim());
                }
                if let Some(e) = &e {
                    if e.len() != t.len() {
                        bail!("{} evaluation labels for {} target rows", e.len(), t.len());
                    }
                }
                Ok(Self {
                    src: s,
                    tgt: t,
                    tgt_eval: e,
                })
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        let src = self.src.n_classes().unwrap_or(0);
        let eval = self
            .tgt_eval
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1);
        src.max(eval)
    }

    /// Copy of the source whose labels went through the noise channel.
    pub fn noisy_source(&self, noise: &NoiseSpec, seed: u64) -> anyhow::Result<DomainDataset> {
        let t = noise.matrix(self.n_classes())?;
        let clean = self
            .src
            .labels
            .as_ref()
            .context("source dataset has no labels")?;
        let mut rng = trainer::seeded_rng(seed, NOISE_STREAM);
        let mut out = self.src.clone();
        out.labels = Some(corrupt_labels(clean, &t, &mut rng)?);
        Ok(out)
    }
}

/// Everything checked before any file is written.
pub struct Prepared {
    pub manifest: RunManifest,
    pub data: Datasets,
    pub noisy_src: DomainDataset,
}

pub fn prepare(manifest: RunManifest) -> anyhow::Result<Prepared> {
    let data = Datasets::load(&manifest.dataset, manifest.config.seed)?;
    manifest.config.validate(data.n_classes())?;
    let noisy_src = data.noisy_source(&manifest.noise, manifest.config.seed)?;
    Ok(Prepared {
        manifest,
        data,
        noisy_src,
    })
}

/// Outcome of one training run.
pub struct RunResult {
    pub final_record: Option<IterationRecord>,
}

/// Writes the manifest, trains, and writes metrics, summary and parameters.
/// On a training failure the error is also written to `diagnostics.txt`.
pub fn execute(p: &Prepared, dump_graphs: bool) -> anyhow::Result<RunResult> {
    let out = &p.manifest.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_json = serde_json::to_string_pretty(&p.manifest)?;
    fs::write(out.join(MANIFEST_FILE), manifest_json + "\n")?;

    let config = &p.manifest.config;
    if dump_graphs {
        let (gs, gt) = trainer::first_batch_graphs(config, &p.noisy_src, &p.data.tgt)?;
        fs::write(out.join("graphs_source.csv"), graph_csv(&gs))?;
        fs::write(out.join("graphs_target.csv"), graph_csv(&gt))?;
    }

    let mut metrics = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut last = None;
    let trained = trainer::train_with(
        config,
        &p.noisy_src,
        &p.data.tgt,
        p.data.tgt_eval.as_deref(),
        |r| {
            writeln!(metrics, "{}", record_row(r))?;
            metrics.flush()?;
            last = Some(*r);
            Ok(())
        },
    );
    metrics.flush()?;
    drop(metrics);
    let state = match trained {
        Ok(s) => s,
        Err(e) => {
            let diag = out.join(DIAGNOSTICS_FILE);
            let mut text = format!("error: {e}\n");
            if let Some(r) = &last {
                writeln!(text, "last record: {r:?}").ok();
            }
            fs::write(&diag, text)?;
            return Err(anyhow::Error::new(e).context(format!(
                "training aborted; diagnostics in {}",
                diag.display()
            )));
        }
    };

    fs::write(
        out.join(PARAMS_FILE),
        serde_json::to_string(&state.networks())? + "\n",
    )?;
    fs::write(
        out.join(SUMMARY_FILE),
        summary_text(p, &state, last.as_ref())?,
    )?;
    Ok(RunResult { final_record: last })
}

fn summary_text(
    p: &Prepared,
    state: &trainer::TrainState,
    last: Option<&IterationRecord>,
) -> anyhow::Result<String> {
    let c = &p.manifest.config;
    let mut s = String::new();
    writeln!(s, "variant {}", c.variant)?;
    writeln!(s, "noise {}", p.manifest.noise)?;
    writeln!(s, "seed {}", c.seed)?;
    writeln!(s, "steps {}", state.step)?;
    let clean = p.data.src.labels.as_deref().unwrap_or(&[]);
    writeln!(
        s,
        "src_acc_clean {:.6}",
        trainer::evaluate(state, &p.data.src.features, clean)?
    )?;
    match last {
        Some(r) => {
            writeln!(s, "src_acc_noisy {:.6}", r.src_acc_noisy)?;
            writeln!(s, "tgt_acc {:.6}", r.tgt_acc)?;
            writeln!(s, "w_estimate {:.6}", r.w_estimate)?;
        }
        None => writeln!(s, "no records")?,
    }
    Ok(s)
}

/// Pairs `i < j` with 1-based cluster labels.
pub fn graph_csv(g: &SignedWeightGraph) -> String {
    let mut s = String::from("i,j,h_pos,h_neg,b_i,b_j\n");
    let n = g.n();
    for i in 0..n {
        for j in i + 1..n {
            writeln!(
                s,
                "{i},{j},{:?},{:?},{},{}",
                g.h_pos[(i, j)],
                g.h_neg[(i, j)],
                g.clusters[i],
                g.clusters[j]
            )
            .unwrap();
        }
    }
    s
}
