//! Objective terms: the determinant-based classification loss with its
//! entropy regularizer, the signed-graph local-structure loss, the
//! Wasserstein dual estimate with its gradient penalty, and the
//! domain-classifier cross-entropy.
//!
//! Each term exists twice: as a builder that records it on a [`Tape`] for
//! training, and as a plain function returning its value.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SignedWeightGraph;
use crate::model::Mlp;
use crate::tape::{Tape, Var, LOG_FLOOR};
use crate::tensor::Tensor;

/// Floor added to `|det T|` before the logarithm.
pub const DET_EPS: f64 = 1e-12;

/// Empirical joint distribution of predictions and (noisy) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct JointEstimate {
    pub t: Tensor,
    pub n: usize,
}

/// Component values of the composite objective for one main-phase step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    /// Classification loss as optimized (DMI + γ·L_r, or cross-entropy).
    pub l_clf: f64,
    pub l_r: f64,
    pub dis_pn: f64,
    /// Discrepancy term as it enters the objective: the Wasserstein dual
    /// estimate, or the negated domain cross-entropy for the KL variant.
    pub w_estimate: f64,
    /// Weight-decay regularizer, already scaled by its coefficient.
    pub penalty: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn recompose(&self, alpha: f64, beta: f64) -> f64 {
        self.l_clf + alpha * self.dis_pn + beta * self.w_estimate + self.penalty
    }
}

/// Checks that every row of `l` is one-hot; returns the class count.
pub fn validate_one_hot(l: &Tensor) -> Result<usize> {
    for i in 0..l.rows() {
        let r = l.row(i);
        let ones = r.iter().filter(|&&v| v == 1.0).count();
        let zeros = r.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != r.len() {
            return Err(Error::Data(format!("label row {i} is not one-hot: {r:?}")));
        }
    }
    Ok(l.cols())
}

pub fn joint_estimate(o: &Tensor, l: &Tensor) -> Result<JointEstimate> {
    o.expect_same_shape(l, "predictions vs. one-hot labels")?;
    if o.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    validate_one_hot(l)?;
    let n = o.rows();
    let t = o.t_matmul(l)?.map(|v| v / n as f64);
    Ok(JointEstimate { t, n })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.max(LOG_FLOOR).ln()).sum::<f64>()
}

/// Mean per-row entropy minus the entropy of the mean row.
pub fn entropy_regularizer(o: &Tensor) -> f64 {
    let n = o.rows();
    let mut mean = vec![0.0; o.cols()];
    let mut row_h = 0.0;
    for i in 0..n {
        row_h += entropy(o.row(i));
        for (m, &v) in mean.iter_mut().zip(o.row(i)) {
            *m += v / n as f64;
        }
    }
    row_h / n as f64 - entropy(&mean)
}

pub fn dmi_loss(o: &Tensor, l: &Tensor, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let ov = tape.constant(o.clone());
    let lv = tape.constant(l.clone());
    let terms = dmi_terms(&mut tape, ov, lv, gamma)?;
    Ok(tape.scalar(terms.l_clf))
}

/// Tape handles for the parts of the classification loss.
#[derive(Clone, Copy, Debug)]
pub struct ClfTerms {
    pub l_clf: Var,
    pub l_r: Var,
}

/// `−log(|det(OᵀL/N)| + ε) + γ·L_r`.
pub fn dmi_terms(tape: &mut Tape, o: Var, labels: Var, gamma: f64) -> Result<ClfTerms> {
    let (n, c) = tape.value(o).shape();
    tape.value(o)
        .expect_same_shape(tape.value(labels), "predictions vs. one-hot labels")?;
    if n < c {
        log::warn!("batch of {n} rows for {c} classes: joint estimate is singular");
    }
    let joint = tape.t_matmul(o, labels)?;
    let joint = tape.scale(joint, 1.0 / n as f64);
    let det_term = tape.neg_log_det(joint, DET_EPS)?;
    let l_r = entropy_regularizer_term(tape, o)?;
    let weighted = tape.scale(l_r, gamma);
    let l_clf = tape.add(det_term, weighted)?;
    Ok(ClfTerms { l_clf, l_r })
}

pub fn entropy_regularizer_term(tape: &mut Tape, o: Var) -> Result<Var> {
    let n = tape.value(o).rows() as f64;
    let log_o = tape.log(o);
    let plogp = tape.mul(o, log_o)?;
    let s = tape.sum(plogp);
    let mean_row_h = tape.scale(s, -1.0 / n);

    let m = tape.mean_rows(o);
    let log_m = tape.log(m);
    let mlogm = tape.mul(m, log_m)?;
    let neg_h_mean = tape.sum(mlogm);
    tape.add(mean_row_h, neg_h_mean)
}

/// `−(1/N) Σ log O[i, y_i]`.
pub fn cross_entropy_term(tape: &mut Tape, o: Var, labels: Var) -> Result<Var> {
    let n = tape.value(o).rows() as f64;
    let log_o = tape.log(o);
    let picked = tape.mul(log_o, labels)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / n))
}

fn dispn_exponents(z: &Tensor, g: &SignedWeightGraph) -> Result<Vec<f64>> {
    if z.rows() != g.n() {
        return Err(Error::Shape(format!(
            "{} latent rows against a graph over {} samples",
            z.rows(),
            g.n()
        )));
    }
    let d2 = crate::tape::pair_sq_dist(z);
    let mut out = Vec::new();
    for (&d, &h) in d2.data().iter().zip(g.h_pn.data()) {
        if h != 0.0 {
            out.push((d * h).clamp(-crate::tape::EXP_CLAMP, crate::tape::EXP_CLAMP));
        }
    }
    Ok(out)
}

/// One domain's sum `Σ exp(clamp(‖z_i − z_j‖²·h_pn[i,j]))` over pairs with
/// non-zero signed weight.
pub fn dispn_contribution(z: &Tensor, g: &SignedWeightGraph) -> Result<f64> {
    Ok(dispn_exponents(z, g)?.iter().map(|e| e.exp()).sum())
}

/// `log(1 + Σ_domains contribution)`, evaluated stably.
pub fn dispn_loss(domains: &[(&Tensor, &SignedWeightGraph)]) -> Result<f64> {
    let mut exps = vec![0.0];
    for (z, g) in domains {
        exps.extend(dispn_exponents(z, g)?);
    }
    Ok(crate::tape::log_sum_exp(&exps))
}

pub fn dispn_term(tape: &mut Tape, domains: &[(Var, &SignedWeightGraph)]) -> Result<Var> {
    let mut terms = Vec::with_capacity(domains.len());
    for (z, g) in domains {
        if tape.value(*z).rows() != g.n() {
            return Err(Error::Shape(format!(
                "{} latent rows against a graph over {} samples",
                tape.value(*z).rows(),
                g.n()
            )));
        }
        let d2 = tape.pair_sq_dist(*z);
        terms.push((d2, g.h_pn.clone()));
    }
    tape.graph_lse(terms)
}

pub fn wasserstein_estimate(c_s: &[f64], c_t: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(c_s) - mean(c_t)
}

/// `mean ϑ(z_s) − mean ϑ(z_t)` on the tape.
pub fn wasserstein_term(tape: &mut Tape, c_s: Var, c_t: Var) -> Var {
    let ms = tape.mean(c_s);
    let mt = tape.mean(c_t);
    let neg = tape.scale(mt, -1.0);
    tape.add(ms, neg).expect("scalars conform")
}

/// Random interpolates `u·z_s + (1−u)·z_t`, one per pair up to the shorter
/// batch, with `u` uniform per pair.
pub fn interpolates<R: Rng + ?Sized>(z_s: &Tensor, z_t: &Tensor, rng: &mut R) -> Result<Tensor> {
    if z_s.cols() != z_t.cols() {
        return Err(Error::Shape(format!(
            "interpolating {}-wide source with {}-wide target features",
            z_s.cols(),
            z_t.cols()
        )));
    }
    let n = z_s.rows().min(z_t.rows());
    let mut out = Tensor::zeros(n, z_s.cols());
    for i in 0..n {
        let u: f64 = rng.random();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = u * z_s[(i, j)] + (1.0 - u) * z_t[(i, j)];
        }
    }
    Ok(out)
}

/// `mean_i (‖∇ϑ(ẑ_i)‖ − 1)²` at the given points, on the tape.
pub fn gradient_penalty_term(
    tape: &mut Tape,
    critic: &Mlp,
    bound: &crate::model::Bound,
    points: &Tensor,
) -> Result<Var> {
    let g = critic.input_gradient(tape, bound, points)?;
    let norms = tape.row_norms(g);
    let dev = tape.add_scalar(norms, -1.0);
    let sq = tape.square(dev);
    Ok(tape.mean(sq))
}

pub fn gradient_penalty<R: Rng + ?Sized>(
    critic: &Mlp,
    z_s: &Tensor,
    z_t: &Tensor,
    rng: &mut R,
) -> Result<f64> {
    let pts = interpolates(z_s, z_t, rng)?;
    let mut tape = Tape::new();
    let b = critic.bind(&mut tape, false);
    let gp = gradient_penalty_term(&mut tape, critic, &b, &pts)?;
    Ok(tape.scalar(gp))
}

/// Binary cross-entropy of a domain classifier, source labelled 1 and target
/// 0, averaged per domain.
pub fn domain_kl_discrepancy(d_s: &[f64], d_t: &[f64]) -> f64 {
    let nll = |p: f64| -p.max(LOG_FLOOR).ln();
    let s = d_s.iter().map(|&p| nll(p)).sum::<f64>() / d_s.len() as f64;
    let t = d_t.iter().map(|&p| nll(1.0 - p)).sum::<f64>() / d_t.len() as f64;
    0.5 * (s + t)
}

/// Tape form of [`domain_kl_discrepancy`] on probability columns.
pub fn domain_bce_term(tape: &mut Tape, p_s: Var, p_t: Var) -> Result<Var> {
    let log_s = tape.log(p_s);
    let ms = tape.mean(log_s);
    let neg_t = tape.scale(p_t, -1.0);
    let one_minus = tape.add_scalar(neg_t, 1.0);
    let log_t = tape.log(one_minus);
    let mt = tape.mean(log_t);
    let s = tape.add(ms, mt)?;
    Ok(tape.scale(s, -0.5))
}
