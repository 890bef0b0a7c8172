//! Two-domain datasets: the synthetic generator, feature-file ingestion and
//! minibatch sampling.
//!
//! Labels are 0-based in memory. Files and user-facing output use `1..=C`;
//! the conversion happens only in this module.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub domain: Domain,
    pub features: Tensor,
    /// 0-based class indices, one per feature row.
    pub labels: Option<Vec<usize>>,
}

impl DomainDataset {
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        features: Tensor,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Data(format!(
                    "{} labels for {} feature rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        if let Some(k) = features.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at row {}",
                k / features.cols().max(1)
            )));
        }
        Ok(Self {
            name: name.into(),
            domain,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the largest label.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref()?.iter().max().map(|m| m + 1)
    }
}

pub const SYNTHETIC_PER_CLASS: usize = 1000;
const SYNTHETIC_MEAN: f64 = 2.0;
const SYNTHETIC_SD: f64 = 0.5;
const SYNTHETIC_ROTATION_DEG: f64 = 30.0;
const SYNTHETIC_SHIFT: (f64, f64) = (1.0, 1.0);

/// Two Gaussian classes at `(∓2, 0)` with sd 0.5, 1000 each, for the
/// source; the target draws fresh samples from the same process and rotates
/// them 30° about the origin before shifting by `(1, 1)`.
pub fn gen_synthetic(seed: u64) -> (DomainDataset, DomainDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, SYNTHETIC_SD).expect("valid sd");
    let draw = |rng: &mut ChaCha8Rng| {
        let n = 2 * SYNTHETIC_PER_CLASS;
        let mut x = Tensor::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = i / SYNTHETIC_PER_CLASS;
            let cx = if class == 0 {
                -SYNTHETIC_MEAN
            } else {
                SYNTHETIC_MEAN
            };
            x[(i, 0)] = cx + normal.sample(rng);
            x[(i, 1)] = normal.sample(rng);
            y.push(class);
        }
        (x, y)
    };
    let (xs, ys) = draw(&mut rng);
    let (mut xt, yt) = draw(&mut rng);
    let (sin, cos) = SYNTHETIC_ROTATION_DEG.to_radians().sin_cos();
    for i in 0..xt.rows() {
        let (a, b) = (xt[(i, 0)], xt[(i, 1)]);
        xt[(i, 0)] = cos * a - sin * b + SYNTHETIC_SHIFT.0;
        xt[(i, 1)] = sin * a + cos * b + SYNTHETIC_SHIFT.1;
    }
    (
        DomainDataset {
            name: "synthetic-source".into(),
            domain: Domain::Source,
            features: xs,
            labels: Some(ys),
        },
        DomainDataset {
            name: "synthetic-target".into(),
            domain: Domain::Target,
            features: xt,
            labels: Some(yt),
        },
    )
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_label(tok: &str, line: usize) -> Result<usize> {
    let v: i64 = tok.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("label {tok:?} is not an integer"),
    })?;
    if v < 1 {
        return Err(Error::Parse {
            line,
            msg: format!("label {v} must be ≥ 1"),
        });
    }
    Ok(v as usize - 1)
}

/// Parses a feature file: optional integer label first, then `d` floats.
/// Lines starting with `#` are comments.
pub fn parse_feature_csv(text: &str, has_labels: bool) -> Result<(Tensor, Option<Vec<usize>>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    let mut rows = 0;
    for (line, content) in data_lines(text) {
        let mut toks = content.split(',');
        if has_labels {
            let tok = toks.next().unwrap_or("");
            labels.push(parse_label(tok, line)?);
        }
        let start = data.len();
        for tok in toks {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{tok:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value {tok:?}"),
                });
            }
            data.push(v);
        }
        let d = data.len() - start;
        match dim {
            None if d == 0 => {
                return Err(Error::Parse {
                    line,
                    msg: "no feature columns".into(),
                })
            }
            None => dim = Some(d),
            Some(e) if e != d => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {e} feature columns, found {d}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let d = dim.ok_or(Error::Parse {
        line: 0,
        msg: "file contains no data rows".into(),
    })?;
    let x = Tensor::from_vec(rows, d, data)?;
    Ok((x, has_labels.then_some(labels)))
}

pub fn load_feature_csv(path: &Path, has_labels: bool, domain: Domain) -> Result<DomainDataset> {
    let text = fs::read_to_string(path)?;
    let (x, labels) = parse_feature_csv(&text, has_labels)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DomainDataset::new(name, domain, x, labels)
}

/// One label per line, 1-based.
pub fn load_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    data_lines(&text)
        .map(|(line, content)| parse_label(content, line))
        .collect()
}

/// Inverse of [`parse_feature_csv`]; floats use shortest round-trip form.
pub fn format_feature_csv(x: &Tensor, labels: Option<&[usize]>) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        if let Some(l) = labels {
            write!(out, "{},", l[i] + 1).unwrap();
        }
        for (j, v) in x.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn one_hot(labels: &[usize], c: usize) -> Result<Tensor> {
    if let Some(i) = labels.iter().position(|&y| y >= c) {
        return Err(Error::Data(format!(
            "label {} at index {i} outside 1..={c}",
            labels[i] + 1
        )));
    }
    Ok(Tensor::from_fn(labels.len(), c, |i, j| {
        if labels[i] == j {
            1.0
        } else {
            0.0
        }
    }))
}

/// A paired minibatch. `tgt_y` is filled only for diagnostics and is not
/// reachable through [`DomainBatch::training_view`].
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub src_idx: Vec<usize>,
    pub tgt_idx: Vec<usize>,
    pub src_x: Tensor,
    pub src_y_onehot: Tensor,
    pub tgt_x: Tensor,
    pub tgt_y: Option<Vec<usize>>,
}

/// What the optimizer is allowed to see of a batch.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub src_x: &'a Tensor,
    pub src_y_onehot: &'a Tensor,
    pub tgt_x: &'a Tensor,
}

impl DomainBatch {
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            src_x: &self.src_x,
            src_y_onehot: &self.src_y_onehot,
            tgt_x: &self.tgt_x,
        }
    }
}

/// Draws `m_b` source rows (with their noisy labels) and `m_b` target rows,
/// without replacement inside the batch.
///
/// In stratified mode each observed class contributes `⌊m_b/C⌋` source rows
/// (or all of its rows if it has fewer) and the remainder is filled uniformly
/// from the rows not yet taken.
pub fn sample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    src: &DomainDataset,
    noisy_labels: &[usize],
    n_classes: usize,
    tgt: &DomainDataset,
    m_b: usize,
    stratified: bool,
) -> Result<DomainBatch> {
    if m_b == 0 || m_b > src.len() || m_b > tgt.len() {
        return Err(Error::Config(format!(
            "batch of {m_b} per domain from datasets of {} and {} rows",
            src.len(),
            tgt.len()
        )));
    }
    if noisy_labels.len() != src.len() {
        return Err(Error::Data(format!(
            "{} labels for {} source rows",
            noisy_labels.len(),
            src.len()
        )));
    }
    let src_idx = if stratified {
        if m_b < n_classes {
            return Err(Error::Config(format!(
                "stratified batch of {m_b} cannot cover {n_classes} classes"
            )));
        }
        let quota = m_b / n_classes;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &y) in noisy_labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut taken = vec![false; src.len()];
        let mut idx = Vec::with_capacity(m_b);
        for members in &by_class {
            let q = quota.min(members.len());
            for k in sample(rng, members.len(), q) {
                idx.push(members[k]);
                taken[members[k]] = true;
            }
        }
        let rest: Vec<usize> = (0..src.len()).filter(|&i| !taken[i]).collect();
        for k in sample(rng, rest.len(), m_b - idx.len()) {
            idx.push(rest[k]);
        }
        idx
    } else {
        sample(rng, src.len(), m_b).into_vec()
    };
    let tgt_idx = sample(rng, tgt.len(), m_b).into_vec();
    let ys: Vec<usize> = src_idx.iter().map(|&i| noisy_labels[i]).collect();
    Ok(DomainBatch {
        src_x: src.features.select_rows(&src_idx),
        src_y_onehot: one_hot(&ys, n_classes)?,
        tgt_x: tgt.features.select_rows(&tgt_idx),
        tgt_y: tgt
            .labels
            .as_ref()
            .map(|l| tgt_idx.iter().map(|&i| l[i]).collect()),
        src_idx,
        tgt_idx,
    })
}
