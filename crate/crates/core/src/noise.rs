//! Class-conditional label-noise channels and seeded label corruption.
//!
//! `T[i][j]` is the probability that a sample of clean class `i` carries the
//! observed label `j`. Every channel built here is row-stochastic and
//! invertible; a singular channel destroys the label information the
//! determinant loss relies on, so construction rejects it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::slogdet;
use crate::tensor::Tensor;

/// `|det T|` must exceed this for a channel to be accepted.
pub const MIN_ABS_DET: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Case1,
    Pairwise,
    Uniform,
    /// Class-independent noise at the given rate; same matrix as `Uniform`.
    Random,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Case1 => "case1",
            NoiseKind::Pairwise => "pairwise",
            NoiseKind::Uniform => "uniform",
            NoiseKind::Random => "random",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => NoiseKind::None,
            "case1" => NoiseKind::Case1,
            "pairwise" => NoiseKind::Pairwise,
            "uniform" => NoiseKind::Uniform,
            "random" => NoiseKind::Random,
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        })
    }
}

/// Noise configuration as given on the command line: `kind[:ratio]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    /// Explicit flip targets for `Pairwise` (0-based `class → target`); the
    /// default map is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            ratio: 0.0,
            pairs: None,
        }
    }

    pub fn new(kind: NoiseKind, ratio: f64) -> Self {
        Self {
            kind,
            ratio,
            pairs: None,
        }
    }

    /// The transition matrix for `c` classes.
    pub fn matrix(&self, c: usize) -> Result<TransitionMatrix> {
        match self.kind {
            NoiseKind::None => Ok(TransitionMatrix::identity(c)),
            NoiseKind::Case1 => {
                if c != 2 {
                    return Err(Error::Config(format!(
                        "case1 noise is defined for 2 classes, dataset has {c}"
                    )));
                }
                build_case1(self.ratio)
            }
            NoiseKind::Pairwise => {
                let pairs = self.pairs.clone().unwrap_or_else(|| default_pair_map(c));
                build_pairwise(c, self.ratio, &pairs)
            }
            NoiseKind::Uniform => build_uniform(c, self.ratio),
            NoiseKind::Random => {
                let mut t = build_uniform(c, self.ratio)?;
                t.kind = NoiseKind::Random;
                Ok(t)
            }
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::None => write!(f, "none"),
            k => write!(f, "{k}:{}", self.ratio),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, ratio) = match s.split_once(':') {
            Some((k, r)) => {
                let ratio: f64 = r
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad noise ratio {r:?}")))?;
                (k.trim().parse()?, ratio)
            }
            None => (s.trim().parse()?, 0.0),
        };
        if kind != NoiseKind::None && !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("noise ratio {ratio} outside [0, 1)")));
        }
        Ok(Self::new(kind, ratio))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub kind: NoiseKind,
    pub t: Tensor,
}

impl TransitionMatrix {
    pub fn identity(c: usize) -> Self {
        Self {
            kind: NoiseKind::None,
            t: Tensor::identity(c),
        }
    }

    pub fn classes(&self) -> usize {
        self.t.rows()
    }

    pub fn det(&self) -> f64 {
        slogdet(&self.t).map(|d| d.det()).unwrap_or(0.0)
    }

    fn checked(kind: NoiseKind, t: Tensor) -> Result<Self> {
        let c = t.rows();
        for i in 0..c {
            let r = t.row(i);
            if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Config(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("row {i} sums to {s}, not 1")));
            }
        }
        validate_invertible(&t)?;
        Ok(Self { kind, t })
    }
}

pub fn validate_invertible(t: &Tensor) -> Result<()> {
    let d = slogdet(t)?;
    if d.abs_det() > MIN_ABS_DET {
        Ok(())
    } else {
        Err(Error::Singular(format!(
            "transition matrix has |det| = {:e}; observed labels would not identify the clean ones",
            d.abs_det()
        )))
    }
}

/// Two-class channel `[[1, 0], [r, 1−r]]`.
pub fn build_case1(r: f64) -> Result<TransitionMatrix> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Singular(format!(
            "case1 ratio {r} must lie in [0, 1); r = 1 merges both rows"
        )));
    }
    TransitionMatrix::checked(
        NoiseKind::Case1,
        Tensor::from_rows(&[vec![1.0, 0.0], vec![r, 1.0 - r]]),
    )
}

/// Default flip map: every odd class (0-based) flips to its successor,
/// cyclically.
pub fn default_pair_map(c: usize) -> Vec<(usize, usize)> {
    (0..c)
        .filter(|i| i % 2 == 1)
        .map(|i| (i, (i + 1) % c))
        .filter(|&(i, j)| i != j)
        .collect()
}

/// Mapped classes keep `1−r` and send `r` to their target; unmapped rows are
/// identity rows.
pub fn build_pairwise(c: usize, r: f64, pairs: &[(usize, usize)]) -> Result<TransitionMatrix> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Config(format!(
            "pairwise ratio {r} must lie in [0, 1)"
        )));
    }
    let mut t = Tensor::identity(c);
    let mut seen = vec![false; c];
    for &(from, to) in pairs {
        if from >= c || to >= c {
            return Err(Error::Config(format!(
                "flip {from}→{to} out of range for {c} classes"
            )));
        }
        if from == to {
            return Err(Error::Config(format!(
                "class {from} cannot flip onto itself"
            )));
        }
        if std::mem::replace(&mut seen[from], true) {
            return Err(Error::Config(format!("class {from} mapped twice")));
        }
        t[(from, from)] = 1.0 - r;
        t[(from, to)] = r;
    }
    TransitionMatrix::checked(NoiseKind::Pairwise, t)
}

/// Class-independent channel: `1−r` on the diagonal, `r/(C−1)` elsewhere.
pub fn build_uniform(c: usize, r: f64) -> Result<TransitionMatrix> {
    if c < 2 {
        return Err(Error::Config(format!(
            "uniform noise needs ≥ 2 classes, got {c}"
        )));
    }
    let limit = (c as f64 - 1.0) / c as f64;
    if !(0.0..limit).contains(&r) {
        return Err(Error::Singular(format!(
            "uniform ratio {r} must lie in [0, {limit}) for {c} classes"
        )));
    }
    let a = r / (c as f64 - 1.0);
    let t = Tensor::from_fn(c, c, |i, j| if i == j { 1.0 - r } else { a });
    TransitionMatrix::checked(NoiseKind::Uniform, t)
}

/// Draws each observed label from row `T[y_i]`. Labels are 0-based.
pub fn corrupt_labels<R: Rng + ?Sized>(
    labels: &[usize],
    t: &TransitionMatrix,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let c = t.classes();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= c {
                return Err(Error::Data(format!(
                    "label {} at index {i} outside 1..={c}",
                    y + 1
                )));
            }
            let u: f64 = rng.random();
            let row = t.t.row(y);
            let mut acc = 0.0;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(j);
                }
            }
            // u landed in the rounding slack above the last partial sum
            Ok(row.iter().rposition(|&p| p > 0.0).unwrap_or(y))
        })
        .collect()
}
