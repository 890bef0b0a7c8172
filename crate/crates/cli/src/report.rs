use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use rlpga::data::DomainDataset;
use rlpga::metrics::{render_curves_svg, timing_summary, MetricsTable};
use rlpga::model::Mlp;
use rlpga::trainer::Networks;

use crate::run::{Datasets, RunManifest, MANIFEST_FILE, PARAMS_FILE};

const PLOT_COLUMNS: [&str; 3] = ["step", "w_estimate", "tgt_acc"];

fn load_table(path: &Path, required: &[&str]) -> anyhow::Result<MetricsTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table =
        MetricsTable::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    table
        .require_columns(required)
        .with_context(|| format!("schema mismatch in {}", path.display()))?;
    if table.rows.is_empty() {
        bail!("{} has no metric rows", path.display());
    }
    Ok(table)
}

pub fn plot(inputs: &[impl AsRef<Path>], out: &Path) -> anyhow::Result<()> {
    let mut runs = Vec::new();
    for p in inputs {
        let p = p.as_ref();
        runs.push((p.display().to_string(), load_table(p, &PLOT_COLUMNS)?));
    }
    let svg = render_curves_svg(&runs)?;
    fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn timing(inputs: &[impl AsRef<Path>]) -> anyhow::Result<String> {
    let mut s = String::from(
        "run,critic_mean,critic_median,critic_p95,main_mean,main_median,main_p95,graph_mean,graph_median,graph_p95\n",
    );
    for p in inputs {
        let p = p.as_ref();
        let table = load_table(p, &rlpga::metrics::TIMING_COLUMNS)?;
        let phases =
            timing_summary(&table).with_context(|| format!("summarizing {}", p.display()))?;
        write!(s, "{}", p.display())?;
        for ph in phases {
            write!(s, ",{:.4},{:.4},{:.4}", ph.mean, ph.median, ph.p95)?;
        }
        s.push('\n');
    }
    Ok(s)
}

fn latent_rows(
    out: &mut String,
    f: &Mlp,
    ds: &DomainDataset,
    labels: Option<&[usize]>,
    domain: &str,
) -> anyhow::Result<()> {
    if ds.dim() != f.input_dim() {
        bail!(
            "{} features have {} columns but the network expects {}",
            domain,
            ds.dim(),
            f.input_dim()
        );
    }
    let z = f.predict(&ds.features)?;
    for i in 0..z.rows() {
        let label = labels.map_or(-1, |l| l[i] as i64 + 1);
        write!(out, "{domain},{label}")?;
        for v in z.row(i) {
            write!(out, ",{v:?}")?;
        }
        out.push('\n');
    }
    Ok(())
}

/// Latent features of both domains as `domain,label,z_1..z_p`. Labels are
/// clean and 1-based; unlabeled rows carry -1.
pub fn export(run_dir: &Path, out: &Path) -> anyhow::Result<usize> {
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE))?;
    let params_path = run_dir.join(PARAMS_FILE);
    let text = fs::read_to_string(&params_path)
        .with_context(|| format!("reading {}", params_path.display()))?;
    let nets: Networks = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", params_path.display()))?;
    let data = Datasets::load(&manifest.dataset, manifest.config.seed)?;

    let p = nets.f.output_dim();
    let mut s = String::from("domain,label");
    for j in 1..=p {
        write!(s, ",z_{j}")?;
    }
    s.push('\n');
    latent_rows(
        &mut s,
        &nets.f,
        &data.src,
        data.src.labels.as_deref(),
        "source",
    )?;
    latent_rows(
        &mut s,
        &nets.f,
        &data.tgt,
        data.tgt_eval.as_deref(),
        "target",
    )?;
    fs::write(out, s).with_context(|| format!("writing {}", out.display()))?;
    Ok(data.src.len() + data.tgt.len())
}
