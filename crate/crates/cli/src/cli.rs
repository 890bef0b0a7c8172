use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rlpga::graph::{MetricChoice, T1Mode};
use rlpga::noise::{NoiseKind, NoiseSpec};
use rlpga::{Preset, TrainConfig, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "rlpga",
    version,
    about = "Robust adversarial domain adaptation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model and write its artifacts under --out.
    Run(RunArgs),
    /// Train every (ratio, variant, seed) cell of a grid.
    Sweep(SweepArgs),
    /// Render W-estimate and accuracy curves of metrics files to SVG.
    Plot(PlotArgs),
    /// Write latent features of a finished run.
    Export(ExportArgs),
    /// Summarize per-phase wall times of metrics files.
    Timing(TimingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub dataset: DatasetKind,
    /// Labeled source features (label first, 1-based).
    #[arg(long)]
    pub src_csv: Option<PathBuf>,
    /// Unlabeled target features.
    #[arg(long)]
    pub tgt_csv: Option<PathBuf>,
    /// Target labels for evaluation, one per line.
    #[arg(long)]
    pub tgt_eval_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct HyperArgs {
    /// Hyperparameter preset; required for csv datasets.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// `median` or a positive bandwidth.
    #[arg(long)]
    pub t1: Option<T1Mode>,
    /// auto, euclidean or cosine.
    #[arg(long)]
    pub metric: Option<MetricChoice>,
    /// Weight-decay coefficient on the feature extractor.
    #[arg(long)]
    pub wd: Option<f64>,
    /// Learning rate of all three networks.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Critic learning rate; overrides --lr for the critic.
    #[arg(long)]
    pub lr_critic: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    /// Gradient-penalty coefficient.
    #[arg(long)]
    pub gp: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Total batch size, split evenly between domains.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Balance source half-batches over noisy labels.
    #[arg(long)]
    pub stratified: bool,
    /// Permit half-batches smaller than the class count.
    #[arg(long)]
    pub allow_small_batch: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value = "rlpga")]
    pub variant: Variant,
    /// none, case1:R, pairwise:R, uniform:R or random:R.
    #[arg(long, default_value = "none")]
    pub noise: NoiseSpec,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the manifest's when replaying.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the first batch's graphs per domain.
    #[arg(long)]
    pub dump_graphs: bool,
    /// Replay a previous run; other training flags are rejected.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6")]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "rlpga,rga,wdgrl_ce")]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Transition family applied at every ratio.
    #[arg(long, default_value = "case1")]
    pub noise_kind: NoiseKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// metrics.csv files, one curve each.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Directory of a finished run.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to embeddings.csv inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TimingArgs {
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
}

impl HyperArgs {
    pub fn is_empty(&self) -> bool {
        let Self {
            preset,
            alpha,
            beta,
            gamma,
            k,
            t1,
            metric,
            wd,
            lr,
            lr_critic,
            n_critic,
            gp,
            steps,
            batch,
            eval_interval,
            stratified,
            allow_small_batch,
        } = self;
        preset.is_none()
            && [alpha, beta, gamma, wd, lr, lr_critic, gp]
                .iter()
                .all(|v| v.is_none())
            && [k, n_critic, steps, batch, eval_interval]
                .iter()
                .all(|v| v.is_none())
            && t1.is_none()
            && metric.is_none()
            && !stratified
            && !allow_small_batch
    }

    /// Starts from the preset and applies every explicit flag.
    pub fn resolve(
        &self,
        dataset: DatasetKind,
        variant: Variant,
        seed: u64,
    ) -> anyhow::Result<TrainConfig> {
        let preset = match (self.preset, dataset) {
            (Some(p), _) => p,
            (None, DatasetKind::Synthetic) => Preset::Synthetic,
            (None, DatasetKind::Csv) => anyhow::bail!("--preset is required with --dataset csv"),
        };
        let mut c = TrainConfig::preset(preset, variant);
        c.seed = seed;
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.t1 {
            c.t1 = v;
        }
        if let Some(v) = self.metric {
            c.metric = v;
        }
        if let Some(v) = self.wd {
            c.weight_decay = v;
        }
        if let Some(v) = self.lr {
            c.lr_f = v;
            c.lr_h = v;
            c.lr_critic = v;
        }
        if let Some(v) = self.lr_critic {
            c.lr_critic = v;
        }
        if let Some(v) = self.n_critic {
            c.n_critic = v;
        }
        if let Some(v) = self.gp {
            c.gp_coeff = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.batch {
            c.batch = v;
        }
        if let Some(v) = self.eval_interval {
            c.eval_interval = v;
        }
        c.stratified = self.stratified;
        c.allow_small_batch = self.allow_small_batch;
        Ok(c)
    }
}
