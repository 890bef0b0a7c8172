//! Feature extractor `f`, classifier `h` and critic, and the alternating
//! optimization: a few critic ascent steps on the dual estimate, then one
//! descent step on `h` and on `f` for the composite objective.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{sample_batch, DomainDataset, TrainingView};
use crate::error::{Error, Result};
use crate::graph::{build_signed_graph, SignedWeightGraph};
use crate::losses::{self, LossBundle};
use crate::model::{Activation, Mlp};
use crate::optim::{adam_step, AdamState};
use crate::tape::{softmax_rows, Tape};
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
/// Stream for one-off label corruption ahead of training.
pub const NOISE_STREAM: u64 = 3;

#[derive(Clone, Debug)]
pub struct TrainState {
    pub f: Mlp,
    pub h: Mlp,
    pub critic: Mlp,
    pub adam_f: AdamState,
    pub adam_h: AdamState,
    pub adam_critic: AdamState,
    /// Main-phase updates performed.
    pub step: usize,
    pub rng: ChaCha8Rng,
}

/// Trained networks in exportable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub f: Mlp,
    pub h: Mlp,
    pub critic: Mlp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    /// Discrepancy under the current critic over the full source and target sets.
    pub w_estimate: f64,
    pub l_clf: f64,
    pub l_r: f64,
    pub dis_pn: f64,
    pub total: f64,
    pub src_acc_noisy: f64,
    /// NaN when no evaluation labels were supplied.
    pub tgt_acc: f64,
    pub ms_critic: f64,
    pub ms_main: f64,
    pub ms_graph: f64,
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn init_models(config: &TrainConfig, input_dim: usize, n_classes: usize) -> Result<TrainState> {
    let mut rng = seeded_rng(config.seed, INIT_STREAM);
    let mut f_widths = vec![input_dim];
    f_widths.extend(&config.f_hidden);
    let latent = config.latent_dim();
    let f = Mlp::new(&f_widths, Activation::Relu, "f", &mut rng)?;
    let h = Mlp::new(&[latent, n_classes], Activation::Identity, "h", &mut rng)?;
    let mut c_widths = vec![latent];
    c_widths.extend(&config.critic_hidden);
    c_widths.push(1);
    let critic = Mlp::new(&c_widths, Activation::Identity, "critic", &mut rng)?;
    Ok(TrainState {
        adam_f: AdamState::new(&f.params),
        adam_h: AdamState::new(&h.params),
        adam_critic: AdamState::new(&critic.params),
        f,
        h,
        critic,
        step: 0,
        rng: seeded_rng(config.seed, TRAIN_STREAM),
    })
}

impl TrainState {
    pub fn networks(&self) -> Networks {
        Networks {
            f: self.f.clone(),
            h: self.h.clone(),
            critic: self.critic.clone(),
        }
    }

    pub fn latent(&self, x: &Tensor) -> Result<Tensor> {
        self.f.predict(x)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.h.predict(&self.f.predict(x)?)?))
    }
}

/// Fraction of rows whose arg-max class equals the (0-based) label.
pub fn evaluate(state: &TrainState, x: &Tensor, y: &[usize]) -> Result<f64> {
    let p = state.predict_proba(x)?;
    accuracy(&p, y)
}

pub fn accuracy(scores: &Tensor, y: &[usize]) -> Result<f64> {
    if scores.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            scores.rows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let hits = scores
        .argmax_rows()
        .iter()
        .zip(y)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

fn critic_outputs(
    config: &TrainConfig,
    tape: &mut Tape,
    critic: &Mlp,
    bound: &crate::model::Bound,
    z_s: crate::tape::Var,
    z_t: crate::tape::Var,
) -> Result<crate::tape::Var> {
    let c_s = critic.forward(tape, bound, z_s)?;
    let c_t = critic.forward(tape, bound, z_t)?;
    if config.variant.uses_domain_classifier() {
        let p_s = tape.sigmoid(c_s);
        let p_t = tape.sigmoid(c_t);
        let bce = losses::domain_bce_term(tape, p_s, p_t)?;
        Ok(tape.scale(bce, -1.0))
    } else {
        Ok(losses::wasserstein_term(tape, c_s, c_t))
    }
}

/// Value of the discrepancy term for fixed latents: the Wasserstein dual
/// estimate, or the negated domain cross-entropy for the classifier variant.
pub fn discrepancy(config: &TrainConfig, critic: &Mlp, z_s: &Tensor, z_t: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let b = critic.bind(&mut tape, false);
    let zs = tape.constant(z_s.clone());
    let zt = tape.constant(z_t.clone());
    let d = critic_outputs(config, &mut tape, critic, &b, zs, zt)?;
    Ok(tape.scalar(d))
}

/// The critic's training loss at fixed latents: `gp·penalty − dual` for the
/// Wasserstein critic, the domain cross-entropy for the classifier variant.
/// Returns the loss and the penalty value.
pub fn critic_loss(
    config: &TrainConfig,
    critic: &mut Mlp,
    z_s: &Tensor,
    z_t: &Tensor,
    points: &Tensor,
    with_grads: bool,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let b = critic.bind(&mut tape, with_grads);
    let zs = tape.constant(z_s.clone());
    let zt = tape.constant(z_t.clone());
    let d = critic_outputs(config, &mut tape, critic, &b, zs, zt)?;
    let (loss, penalty) = if config.variant.uses_domain_classifier() {
        (tape.scale(d, -1.0), 0.0)
    } else {
        let gp = losses::gradient_penalty_term(&mut tape, critic, &b, points)?;
        let weighted = tape.scale(gp, config.gp_coeff);
        let neg = tape.scale(d, -1.0);
        (tape.add(weighted, neg)?, tape.scalar(gp))
    };
    if with_grads {
        let mut grads = tape.backward(loss)?;
        critic.collect_grads(&b, &mut grads)?;
    }
    Ok((tape.scalar(loss), penalty))
}

/// `n_critic` Adam steps on the critic with `f` frozen. Returns the
/// discrepancy under the updated critic.
pub fn critic_phase(
    state: &mut TrainState,
    batch: TrainingView<'_>,
    config: &TrainConfig,
) -> Result<f64> {
    let z_s = state.f.predict(batch.src_x)?;
    let z_t = state.f.predict(batch.tgt_x)?;
    for it in 0..config.n_critic {
        let points = losses::interpolates(&z_s, &z_t, &mut state.rng)?;
        let (loss, penalty) = critic_loss(config, &mut state.critic, &z_s, &z_t, &points, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss at step {} iteration {it}: loss={loss} penalty={penalty}",
                state.step
            )));
        }
        adam_step(
            &mut state.critic.params,
            &mut state.adam_critic,
            config.lr_critic,
        )?;
    }
    discrepancy(config, &state.critic, &z_s, &z_t)
}

/// Evaluates the composite objective and its gradients without updating.
/// Gradients are left on `f.params` and `h.params`.
pub fn main_objective(
    state: &mut TrainState,
    batch: TrainingView<'_>,
    graphs: Option<(&SignedWeightGraph, &SignedWeightGraph)>,
    config: &TrainConfig,
) -> Result<LossBundle> {
    let mut tape = Tape::new();
    let fb = state.f.bind(&mut tape, true);
    let hb = state.h.bind(&mut tape, true);
    let cb = state.critic.bind(&mut tape, false);
    let xs = tape.constant(batch.src_x.clone());
    let xt = tape.constant(batch.tgt_x.clone());
    let labels = tape.constant(batch.src_y_onehot.clone());
    let zs = state.f.forward(&mut tape, &fb, xs)?;
    let zt = state.f.forward(&mut tape, &fb, xt)?;
    let logits = state.h.forward(&mut tape, &hb, zs)?;
    let o = tape.softmax(logits);

    let (l_clf, l_r) = if config.variant.uses_dmi() {
        let t = losses::dmi_terms(&mut tape, o, labels, config.gamma)?;
        (t.l_clf, t.l_r)
    } else {
        let ce = losses::cross_entropy_term(&mut tape, o, labels)?;
        (ce, losses::entropy_regularizer_term(&mut tape, o)?)
    };
    let dis = match graphs {
        Some((gs, gt)) => Some(losses::dispn_term(&mut tape, &[(zs, gs), (zt, gt)])?),
        None => None,
    };
    let w = critic_outputs(config, &mut tape, &state.critic, &cb, zs, zt)?;

    let mut total = l_clf;
    if config.alpha != 0.0 {
        let dis = dis.ok_or_else(|| Error::Config("alpha > 0 requires graphs".into()))?;
        let t = tape.scale(dis, config.alpha);
        total = tape.add(total, t)?;
    }
    if config.beta != 0.0 {
        let t = tape.scale(w, config.beta);
        total = tape.add(total, t)?;
    }

    let mut grads = tape.backward(total)?;
    state.f.collect_grads(&fb, &mut grads)?;
    state.h.collect_grads(&hb, &mut grads)?;

    let mut penalty = 0.0;
    if config.weight_decay != 0.0 {
        penalty = config.weight_decay * state.f.params.squared_norm();
        for p in state.f.params.iter_mut() {
            let g = p.grad.as_mut().expect("collected above");
            g.add_scaled(&p.value, 2.0 * config.weight_decay);
        }
    }
    let bundle = LossBundle {
        l_clf: tape.scalar(l_clf),
        l_r: tape.scalar(l_r),
        dis_pn: dis.map_or(0.0, |d| tape.scalar(d)),
        w_estimate: tape.scalar(w),
        penalty,
        total: tape.scalar(total) + penalty,
    };
    Ok(bundle)
}

/// One Adam step on `h` (classification loss) and `f` (full objective),
/// critic frozen.
pub fn main_phase(
    state: &mut TrainState,
    batch: TrainingView<'_>,
    graphs: Option<(&SignedWeightGraph, &SignedWeightGraph)>,
    config: &TrainConfig,
) -> Result<LossBundle> {
    let bundle = main_objective(state, batch, graphs, config)?;
    if !bundle.total.is_finite() {
        state.f.params.clear_grads();
        state.h.params.clear_grads();
        return Err(Error::NonFinite(format!(
            "objective at step {}: {bundle:?}",
            state.step + 1
        )));
    }
    adam_step(&mut state.h.params, &mut state.adam_h, config.lr_h)?;
    adam_step(&mut state.f.params, &mut state.adam_f, config.lr_f)?;
    state.step += 1;
    if !(state.f.params.all_finite() && state.h.params.all_finite()) {
        return Err(Error::NonFinite(format!(
            "parameters after step {}: {bundle:?}",
            state.step
        )));
    }
    Ok(bundle)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub records: Vec<IterationRecord>,
}

/// Graphs of the first minibatch the training loop draws for this config.
pub fn first_batch_graphs(
    config: &TrainConfig,
    src: &DomainDataset,
    tgt: &DomainDataset,
) -> Result<(SignedWeightGraph, SignedWeightGraph)> {
    let labels = src
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("source dataset has no labels".into()))?;
    let n_classes = src.n_classes().unwrap_or(0).max(2);
    let mut rng = seeded_rng(config.seed, TRAIN_STREAM);
    let batch = sample_batch(
        &mut rng,
        src,
        labels,
        n_classes,
        tgt,
        config.half_batch(),
        config.stratified,
    )?;
    let view = batch.training_view();
    let metric = config.metric.resolve(src.dim());
    Ok((
        build_signed_graph(view.src_x, config.k, config.t1, metric)?,
        build_signed_graph(view.tgt_x, config.k, config.t1, metric)?,
    ))
}

/// Runs the full loop, collecting records in memory.
pub fn train(
    config: &TrainConfig,
    src: &DomainDataset,
    tgt: &DomainDataset,
    tgt_eval: Option<&[usize]>,
) -> Result<TrainOutcome> {
    let mut records = Vec::new();
    let state = train_with(config, src, tgt, tgt_eval, |r| {
        records.push(*r);
        Ok(())
    })?;
    Ok(TrainOutcome { state, records })
}

/// Runs the full loop, handing each record to `sink` in step order. Records
/// emitted before an abort have already reached the sink.
///
/// `src.labels` are the observed (possibly corrupted) labels.
pub fn train_with<F>(
    config: &TrainConfig,
    src: &DomainDataset,
    tgt: &DomainDataset,
    tgt_eval: Option<&[usize]>,
    mut sink: F,
) -> Result<TrainState>
where
    F: FnMut(&IterationRecord) -> Result<()>,
{
    let labels = src
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("source dataset has no labels".into()))?;
    let n_classes = src
        .n_classes()
        .unwrap_or(0)
        .max(tgt_eval.and_then(|l| l.iter().max()).map_or(0, |m| m + 1));
    if n_classes < 2 {
        return Err(Error::Data(format!(
            "need at least 2 classes, found {n_classes}"
        )));
    }
    if src.dim() != tgt.dim() {
        return Err(Error::Shape(format!(
            "source has {} features, target {}",
            src.dim(),
            tgt.dim()
        )));
    }
    if let Some(l) = tgt_eval {
        if l.len() != tgt.len() {
            return Err(Error::Data(format!(
                "{} evaluation labels for {} target rows",
                l.len(),
                tgt.len()
            )));
        }
    }
    config.validate(n_classes)?;
    let metric = config.metric.resolve(src.dim());
    let mut state = init_models(config, src.dim(), n_classes)?;

    let (mut ms_critic, mut ms_main, mut ms_graph) = (0.0, 0.0, 0.0);
    let mut since_record = 0usize;
    for _ in 0..config.steps {
        let batch = sample_batch(
            &mut state.rng,
            src,
            labels,
            n_classes,
            tgt,
            config.half_batch(),
            config.stratified,
        )?;
        let view = batch.training_view();

        let t0 = Instant::now();
        let gs = build_signed_graph(view.src_x, config.k, config.t1, metric)?;
        let gt = build_signed_graph(view.tgt_x, config.k, config.t1, metric)?;
        let t1 = Instant::now();
        critic_phase(&mut state, view, config)?;
        let t2 = Instant::now();
        let bundle = main_phase(&mut state, view, Some((&gs, &gt)), config)?;
        let t3 = Instant::now();
        ms_graph += (t1 - t0).as_secs_f64() * 1e3;
        ms_critic += (t2 - t1).as_secs_f64() * 1e3;
        ms_main += (t3 - t2).as_secs_f64() * 1e3;
        since_record += 1;

        if state.step % config.eval_interval == 0 || state.step == config.steps {
            let n = since_record as f64;
            let src_acc_noisy = evaluate(&state, &src.features, labels)?;
            let tgt_acc = match tgt_eval {
                Some(y) => evaluate(&state, &tgt.features, y)?,
                None => f64::NAN,
            };
            let w_estimate = discrepancy(
                config,
                &state.critic,
                &state.f.predict(&src.features)?,
                &state.f.predict(&tgt.features)?,
            )?;
            let rec = IterationRecord {
                step: state.step,
                w_estimate,
                l_clf: bundle.l_clf,
                l_r: bundle.l_r,
                dis_pn: bundle.dis_pn,
                total: bundle.total,
                src_acc_noisy,
                tgt_acc,
                ms_critic: ms_critic / n,
                ms_main: ms_main / n,
                ms_graph: ms_graph / n,
            };
            sink(&rec)?;
            ms_critic = 0.0;
            ms_main = 0.0;
            ms_graph = 0.0;
            since_record = 0;
        }
    }
    Ok(state)
}
