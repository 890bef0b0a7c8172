#![allow(dead_code, clippy::needless_range_loop)]

pub mod measure;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rlpga::graph::{DistanceMatrix, Mask};
use rlpga::trainer::seeded_rng;
use rlpga::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed, 99)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Softmax rows of logits in `[-2, 2)`; every entry is at least `e⁻⁴/cols`.
pub fn simplex_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-2.0f64..2.0).exp());
    for i in 0..rows {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// A joint distribution: non-negative entries summing to one.
pub fn random_joint(rng: &mut impl Rng, c: usize) -> Tensor {
    let t = simplex_rows(rng, 1, c * c);
    Tensor::from_vec(c, c, t.into_data()).unwrap()
}

/// Row-stochastic matrix with a dominant diagonal, hence invertible.
pub fn random_transition(rng: &mut impl Rng, c: usize) -> Tensor {
    let mut t = simplex_rows(rng, c, c);
    for i in 0..c {
        let off: f64 = rng.random_range(0.0..0.45);
        for j in 0..c {
            let v = t[(i, j)] * off;
            t.row_mut(i)[j] = v;
        }
        t.row_mut(i)[i] += 1.0 - off;
    }
    t
}

pub fn one_hot_labels(rng: &mut impl Rng, n: usize, c: usize) -> (Vec<usize>, Tensor) {
    let y: Vec<usize> = (0..n)
        .map(|i| if i < c { i } else { rng.random_range(0..c) })
        .collect();
    let l = Tensor::from_fn(n, c, |i, j| if y[i] == j { 1.0 } else { 0.0 });
    (y, l)
}

pub fn det_cofactor(a: &Tensor) -> f64 {
    let n = a.rows();
    if n == 1 {
        return a[(0, 0)];
    }
    (0..n)
        .map(|j| {
            let minor = Tensor::from_fn(n - 1, n - 1, |r, c| {
                a[(r + 1, if c < j { c } else { c + 1 })]
            });
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * a[(0, j)] * det_cofactor(&minor)
        })
        .sum()
}

/// kNN by full sort of each row; ties go to the lower index.
pub fn brute_knn(d: &DistanceMatrix, k: usize) -> Vec<Vec<bool>> {
    let n = d.n();
    let mut m = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            m[i][j] = true;
            m[j][i] = true;
        }
    }
    m
}

pub fn mask_rows(mask: &Mask) -> Vec<Vec<bool>> {
    let n = mask.n();
    (0..n)
        .map(|i| (0..n).map(|j| mask.get(i, j)).collect())
        .collect()
}

/// Components by breadth-first search, numbered from 1 in order of first
/// appearance.
pub fn bfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![0; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != 0 {
            continue;
        }
        next += 1;
        label[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if label[v] == 0 {
                    label[v] = next;
                    q.push_back(v);
                }
            }
        }
    }
    label
}

/// Nearest other point of each row; ties go to the lower index.
pub fn brute_nn_edges(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let n = d.n();
    (0..n)
        .filter_map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)))
                .map(|j| (i, j))
        })
        .collect()
}
