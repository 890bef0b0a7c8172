//! Measurements shared by the property tests and the acceptance report. Each
//! returns a worst error or a mismatch count instead of asserting.

use rand::Rng;
use rlpga::gradcheck::grad_check;
use rlpga::graph::{
    build_signed_graph, knn_adjacency, nn_clusters, pairwise_distances, Metric, T1Mode,
};
use rlpga::linalg::slogdet;
use rlpga::losses::{
    self, dispn_term, dmi_terms, entropy_regularizer_term, gradient_penalty_term, wasserstein_term,
    DET_EPS,
};
use rlpga::model::{Activation, Mlp};
use rlpga::noise::{corrupt_labels, TransitionMatrix};
use rlpga::tape::Tape;
use rlpga::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_INSTANCES: u64 = 100;

fn worst_over<F: FnMut(u64) -> f64>(mut f: F) -> f64 {
    (0..GRAD_INSTANCES).map(&mut f).fold(0.0, f64::max)
}

pub fn classification_loss_grad_error() -> f64 {
    worst_over(|seed| {
        let mut rng = super::rng(100 + seed);
        let c = 2 + (seed % 3) as usize;
        let n = 8;
        let logits = super::uniform(&mut rng, n, c, -2.0, 2.0);
        let (_, labels) = super::one_hot_labels(&mut rng, n, c);
        let gamma = [0.0, 0.1, 1.0, 10.0][(seed % 4) as usize];
        grad_check(
            |xs| {
                let mut t = Tape::new();
                let z = t.param(xs[0].clone());
                let o = t.softmax(z);
                let l = t.constant(labels.clone());
                let terms = dmi_terms(&mut t, o, l, gamma)?;
                let mut g = t.backward(terms.l_clf)?;
                Ok((t.scalar(terms.l_clf), vec![g.take(z).unwrap()]))
            },
            &[logits],
            FD_STEP,
        )
        .unwrap()
    })
}

pub fn entropy_regularizer_grad_error() -> f64 {
    worst_over(|seed| {
        let mut rng = super::rng(300 + seed);
        let o = super::simplex_rows(&mut rng, 8, 3);
        grad_check(
            |xs| {
                let mut t = Tape::new();
                let o = t.param(xs[0].clone());
                let r = entropy_regularizer_term(&mut t, o)?;
                let mut g = t.backward(r)?;
                Ok((t.scalar(r), vec![g.take(o).unwrap()]))
            },
            &[o],
            FD_STEP,
        )
        .unwrap()
    })
}

pub fn signed_graph_grad_error() -> f64 {
    worst_over(|seed| {
        let mut rng = super::rng(500 + seed);
        let n = 10;
        let xs = super::uniform(&mut rng, n, 2, -1.0, 1.0);
        let xt = super::uniform(&mut rng, n, 2, -1.0, 1.0);
        let gs = build_signed_graph(&xs, 3, T1Mode::Median, Metric::Euclidean).unwrap();
        let gt = build_signed_graph(&xt, 3, T1Mode::Median, Metric::Euclidean).unwrap();
        let zs = super::uniform(&mut rng, n, 3, -1.0, 1.0);
        let zt = super::uniform(&mut rng, n, 3, -1.0, 1.0);
        grad_check(
            |v| {
                let mut t = Tape::new();
                let a = t.param(v[0].clone());
                let b = t.param(v[1].clone());
                let d = dispn_term(&mut t, &[(a, &gs), (b, &gt)])?;
                let mut g = t.backward(d)?;
                Ok((t.scalar(d), vec![g.take(a).unwrap(), g.take(b).unwrap()]))
            },
            &[zs, zt],
            FD_STEP,
        )
        .unwrap()
    })
}

fn critic_with(params: &[Tensor], template: &Mlp) -> Mlp {
    let mut c = template.clone();
    for (i, p) in params.iter().enumerate() {
        c.params.get_mut(i).value = p.clone();
    }
    c
}

fn critic_instance(seed: u64) -> (Mlp, Tensor, Tensor, Tensor) {
    let mut rng = super::rng(700 + seed);
    let critic = Mlp::new(&[3, 5, 1], Activation::Identity, "critic", &mut rng).unwrap();
    let zs = super::uniform(&mut rng, 6, 3, -1.0, 1.0);
    let zt = super::uniform(&mut rng, 6, 3, 0.0, 2.0);
    let pts = losses::interpolates(&zs, &zt, &mut rng).unwrap();
    (critic, zs, zt, pts)
}

fn params_of(m: &Mlp) -> Vec<Tensor> {
    m.params.iter().map(|p| p.value.clone()).collect()
}

/// `gp·penalty − w` with respect to the critic parameters.
pub fn critic_objective_grad_error() -> f64 {
    let gp_coeff = 10.0;
    worst_over(|seed| {
        let (critic, zs, zt, pts) = critic_instance(seed);
        grad_check(
            |v| {
                let mut c = critic_with(v, &critic);
                let mut t = Tape::new();
                let b = c.bind(&mut t, true);
                let s = t.constant(zs.clone());
                let u = t.constant(zt.clone());
                let cs = c.forward(&mut t, &b, s)?;
                let ct = c.forward(&mut t, &b, u)?;
                let w = wasserstein_term(&mut t, cs, ct);
                let gp = gradient_penalty_term(&mut t, &c, &b, &pts)?;
                let gp = t.scale(gp, gp_coeff);
                let neg = t.scale(w, -1.0);
                let loss = t.add(gp, neg)?;
                let mut g = t.backward(loss)?;
                c.collect_grads(&b, &mut g)?;
                let grads = c.params.iter().map(|p| p.grad.clone().unwrap()).collect();
                Ok((t.scalar(loss), grads))
            },
            &params_of(&critic),
            FD_STEP,
        )
        .unwrap()
    })
}

pub fn penalty_grad_error() -> f64 {
    worst_over(|seed| {
        let (critic, _, _, pts) = critic_instance(seed);
        grad_check(
            |v| {
                let mut c = critic_with(v, &critic);
                let mut t = Tape::new();
                let b = c.bind(&mut t, true);
                let gp = gradient_penalty_term(&mut t, &c, &b, &pts)?;
                let mut g = t.backward(gp)?;
                c.collect_grads(&b, &mut g)?;
                Ok((
                    t.scalar(gp),
                    c.params.iter().map(|p| p.grad.clone().unwrap()).collect(),
                ))
            },
            &params_of(&critic),
            FD_STEP,
        )
        .unwrap()
    })
}

/// The critic gap with respect to the feature extractor, critic frozen.
pub fn alignment_grad_error() -> f64 {
    worst_over(|seed| {
        let mut rng = super::rng(900 + seed);
        let f = Mlp::new(&[2, 4], Activation::Relu, "f", &mut rng).unwrap();
        let critic = Mlp::new(&[4, 5, 1], Activation::Identity, "critic", &mut rng).unwrap();
        let xs = super::uniform(&mut rng, 6, 2, -1.0, 1.0);
        let xt = super::uniform(&mut rng, 6, 2, 0.0, 2.0);
        grad_check(
            |v| {
                let mut fm = f.clone();
                for (i, p) in v.iter().enumerate() {
                    fm.params.get_mut(i).value = p.clone();
                }
                let mut t = Tape::new();
                let fb = fm.bind(&mut t, true);
                let cb = critic.bind(&mut t, false);
                let a = t.constant(xs.clone());
                let b = t.constant(xt.clone());
                let za = fm.forward(&mut t, &fb, a)?;
                let zb = fm.forward(&mut t, &fb, b)?;
                let ca = critic.forward(&mut t, &cb, za)?;
                let cbv = critic.forward(&mut t, &cb, zb)?;
                let w = wasserstein_term(&mut t, ca, cbv);
                let mut g = t.backward(w)?;
                fm.collect_grads(&fb, &mut g)?;
                Ok((
                    t.scalar(w),
                    fm.params.iter().map(|p| p.grad.clone().unwrap()).collect(),
                ))
            },
            &params_of(&f),
            FD_STEP,
        )
        .unwrap()
    })
}

fn random_points(rng: &mut impl Rng) -> Tensor {
    let n = rng.random_range(6..=50);
    let d = rng.random_range(1..=4);
    super::uniform(rng, n, d, -3.0, 3.0)
}

pub fn knn_mismatches(instances: usize) -> usize {
    let mut rng = super::rng(11);
    (0..instances)
        .filter(|_| {
            let x = random_points(&mut rng);
            let k = rng.random_range(1..=5);
            let d = pairwise_distances(&x, Metric::Euclidean).unwrap();
            let mask = knn_adjacency(&d, k).unwrap();
            super::mask_rows(&mask) != super::brute_knn(&d, k)
        })
        .count()
}

pub fn cluster_mismatches(instances: usize) -> usize {
    let mut rng = super::rng(13);
    (0..instances)
        .filter(|_| {
            let x = random_points(&mut rng);
            let d = pairwise_distances(&x, Metric::Euclidean).unwrap();
            let (labels, m) = nn_clusters(&d).unwrap();
            let expected = super::bfs_components(d.n(), &super::brute_nn_edges(&d));
            labels != expected || m != *expected.iter().max().unwrap()
        })
        .count()
}

pub fn abs_det(t: &Tensor) -> f64 {
    slogdet(t).unwrap().abs_det()
}

/// Instances where `|det(JT)| ≠ |det J|·|det T|` beyond `tol`.
pub fn det_invariance_failures(instances: usize, tol: f64) -> usize {
    let mut rng = super::rng(21);
    (0..instances)
        .filter(|i| {
            let c = 2 + i % 3;
            let joint = super::random_joint(&mut rng, c);
            let channel = super::random_transition(&mut rng, c);
            let noisy = joint.matmul(&channel).unwrap();
            (abs_det(&noisy) - abs_det(&joint) * abs_det(&channel)).abs() > tol
        })
        .count()
}

/// Exact joint of (prediction, label) for a classifier with confusion rows
/// `conf[y]` under label marginal `p`.
fn joint_from(conf: &Tensor, p: &[f64]) -> Tensor {
    let c = p.len();
    Tensor::from_fn(c, c, |h, y| p[y] * conf[(y, h)])
}

fn dmi_of_joint(t: &Tensor) -> f64 {
    -(abs_det(t) + DET_EPS).ln()
}

/// Returns `(compared pairs, pairs whose order flipped)`; ties are pairs whose
/// loss gap is below `tie`.
pub fn ranking_flips(instances: usize, tie: f64) -> (usize, usize) {
    let mut rng = super::rng(22);
    let (mut checked, mut flips) = (0, 0);
    for i in 0..instances {
        let c = 2 + i % 3;
        let p = super::simplex_rows(&mut rng, 1, c).into_data();
        let t1 = joint_from(&super::simplex_rows(&mut rng, c, c), &p);
        let t2 = joint_from(&super::simplex_rows(&mut rng, c, c), &p);
        let channel = super::random_transition(&mut rng, c);
        let clean = dmi_of_joint(&t1) - dmi_of_joint(&t2);
        let noisy = dmi_of_joint(&t1.matmul(&channel).unwrap())
            - dmi_of_joint(&t2.matmul(&channel).unwrap());
        if clean.abs() < tie || noisy.abs() < tie {
            continue;
        }
        checked += 1;
        if clean.signum() != noisy.signum() {
            flips += 1;
        }
    }
    (checked, flips)
}

/// Largest gap between an empirical flip frequency and its configured entry.
pub fn noise_frequency_error(t: &TransitionMatrix, per_class: usize, seed: u64) -> f64 {
    let c = t.classes();
    let clean: Vec<usize> = (0..c)
        .flat_map(|k| std::iter::repeat_n(k, per_class))
        .collect();
    let noisy = corrupt_labels(&clean, t, &mut super::rng(seed)).unwrap();
    let mut counts = vec![vec![0usize; c]; c];
    for (&a, &b) in clean.iter().zip(&noisy) {
        counts[a][b] += 1;
    }
    let mut worst = 0.0_f64;
    for i in 0..c {
        for j in 0..c {
            let freq = counts[i][j] as f64 / per_class as f64;
            worst = worst.max((freq - t.t[(i, j)]).abs());
        }
    }
    worst
}
