//! Per-batch similarity and dissimilarity graphs over input samples.
//!
//! The adjacency weights `h_pos` connect k-nearest neighbours with a heat
//! kernel. Clusters are the connected components of the 1-nearest-neighbour
//! graph, and `h_neg` assigns the same kernel to every pair that straddles two
//! clusters. The loss consumes the signed difference `h_pn = h_pos − h_neg`.

mod union_find;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use union_find::DisjointSet;

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Feature dimension above which `MetricChoice::Auto` switches to cosine.
pub const COSINE_DIM_THRESHOLD: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    #[default]
    Auto,
    Euclidean,
    Cosine,
}

impl MetricChoice {
    pub fn resolve(self, dim: usize) -> Metric {
        match self {
            MetricChoice::Euclidean => Metric::Euclidean,
            MetricChoice::Cosine => Metric::Cosine,
            MetricChoice::Auto if dim > COSINE_DIM_THRESHOLD => Metric::Cosine,
            MetricChoice::Auto => Metric::Euclidean,
        }
    }
}

impl FromStr for MetricChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MetricChoice::Auto),
            "euclidean" => Ok(MetricChoice::Euclidean),
            "cosine" => Ok(MetricChoice::Cosine),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Heat-kernel bandwidth selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum T1Mode {
    /// Median of the non-zero squared pairwise distances in the batch.
    #[default]
    Median,
    Fixed(f64),
}

/// Accepts `median` or a positive number.
impl FromStr for T1Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(T1Mode::Median);
        }
        match s.parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(T1Mode::Fixed(t)),
            _ => Err(Error::Config(format!(
                "t1 must be 'median' or a positive number, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub metric: Metric,
    pub d: Tensor,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    /// Other samples ordered by distance from `i`, ties by index.
    fn neighbours_of(&self, i: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| self.get(i, a).total_cmp(&self.get(i, b)).then(a.cmp(&b)));
        others
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignedWeightGraph {
    pub h_pos: Tensor,
    pub h_neg: Tensor,
    pub h_pn: Tensor,
    /// Cluster label per sample, `1..=n_clusters`.
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
    pub k: usize,
    pub t1: f64,
}

impl SignedWeightGraph {
    pub fn n(&self) -> usize {
        self.clusters.len()
    }
}

/// Symmetric boolean adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn pairwise_distances(x: &Tensor, metric: Metric) -> Result<DistanceMatrix> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {n}")));
    }
    let mut d = Tensor::zeros(n, n);
    match metric {
        Metric::Euclidean => {
            for i in 0..n {
                for j in i + 1..n {
                    let s: f64 = x
                        .row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    d[(i, j)] = s.sqrt();
                    d[(j, i)] = s.sqrt();
                }
            }
        }
        Metric::Cosine => {
            let norms: Vec<f64> = (0..n).map(|i| dot(x.row(i), x.row(i)).sqrt()).collect();
            if let Some(i) = norms.iter().position(|&v| v == 0.0) {
                return Err(Error::Data(format!(
                    "row {i} has zero norm; cosine distance is undefined"
                )));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let c = dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
                    let v = (1.0 - c).clamp(0.0, 2.0);
                    d[(i, j)] = v;
                    d[(j, i)] = v;
                }
            }
        }
    }
    Ok(DistanceMatrix { metric, d })
}

/// `mask[i][j]` iff `j` is among the `k` nearest of `i` or vice versa.
pub fn knn_adjacency(d: &DistanceMatrix, k: usize) -> Result<Mask> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={} for {n} samples",
            n.saturating_sub(1)
        )));
    }
    let mut mask = Mask::new(n);
    for i in 0..n {
        for &j in d.neighbours_of(i).iter().take(k) {
            mask.set_edge(i, j);
        }
    }
    Ok(mask)
}

#[inline]
fn heat(dist: f64, t1: f64) -> f64 {
    (-dist * dist / t1).exp()
}

pub fn heat_kernel_weights(d: &DistanceMatrix, mask: &Mask, t1: f64) -> Result<Tensor> {
    check_t1(t1)?;
    let n = d.n();
    Ok(Tensor::from_fn(n, n, |i, j| {
        if i != j && mask.get(i, j) {
            heat(d.get(i, j), t1)
        } else {
            0.0
        }
    }))
}

/// Connected components of the 1-nearest-neighbour graph. Labels are
/// `1..=M`, numbered in order of first appearance.
pub fn nn_clusters(d: &DistanceMatrix) -> Result<(Vec<usize>, usize)> {
    let n = d.n();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {n}")));
    }
    let mut ds = DisjointSet::new(n);
    for (i, j) in nn_edges(d) {
        ds.union(i, j);
    }
    let mut label_of_root = vec![0usize; n];
    let mut labels = Vec::with_capacity(n);
    let mut m = 0;
    for i in 0..n {
        let r = ds.find(i);
        if label_of_root[r] == 0 {
            m += 1;
            label_of_root[r] = m;
        }
        labels.push(label_of_root[r]);
    }
    Ok((labels, m))
}

/// The edge `(i, nearest(i))` for every sample.
pub fn nn_edges(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let n = d.n();
    (0..n)
        .map(|i| {
            let mut best = usize::MAX;
            for j in 0..n {
                if j == i {
                    continue;
                }
                if best == usize::MAX || d.get(i, j) < d.get(i, best) {
                    best = j;
                }
            }
            (i, best)
        })
        .collect()
}

pub fn negative_weights(d: &DistanceMatrix, clusters: &[usize], t1: f64) -> Result<Tensor> {
    check_t1(t1)?;
    let n = d.n();
    if clusters.len() != n {
        return Err(Error::Shape(format!(
            "{} cluster labels for {n} samples",
            clusters.len()
        )));
    }
    Ok(Tensor::from_fn(n, n, |i, j| {
        if clusters[i] != clusters[j] {
            heat(d.get(i, j), t1)
        } else {
            0.0
        }
    }))
}

pub fn median_t1(d: &DistanceMatrix) -> f64 {
    let n = d.n();
    let mut sq: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let v = d.get(i, j);
            if v > 0.0 {
                sq.push(v * v);
            }
        }
    }
    if sq.is_empty() {
        // every point coincides; any bandwidth gives weight 1
        return 1.0;
    }
    sq.sort_by(f64::total_cmp);
    let m = sq.len();
    if m % 2 == 1 {
        sq[m / 2]
    } else {
        0.5 * (sq[m / 2 - 1] + sq[m / 2])
    }
}

fn check_t1(t1: f64) -> Result<()> {
    if !(t1 > 0.0 && t1.is_finite()) {
        return Err(Error::Config(format!(
            "bandwidth t1 must be positive, got {t1}"
        )));
    }
    Ok(())
}

pub fn build_signed_graph(
    x: &Tensor,
    k: usize,
    t1_mode: T1Mode,
    metric: Metric,
) -> Result<SignedWeightGraph> {
    let d = pairwise_distances(x, metric)?;
    let t1 = match t1_mode {
        T1Mode::Median => median_t1(&d),
        T1Mode::Fixed(v) => v,
    };
    let mask = knn_adjacency(&d, k)?;
    let h_pos = heat_kernel_weights(&d, &mask, t1)?;
    let (clusters, n_clusters) = nn_clusters(&d)?;
    let h_neg = negative_weights(&d, &clusters, t1)?;
    let h_pn = h_pos.zip_map(&h_neg, |p, q| p - q)?;
    Ok(SignedWeightGraph {
        h_pos,
        h_neg,
        h_pn,
        clusters,
        n_clusters,
        k,
        t1,
    })
}
