//! Fully connected ReLU networks bound onto a [`Tape`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

/// A stack of affine layers. Hidden layers use ReLU; the output layer uses
/// `output_activation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub output_activation: Activation,
    pub params: ParamSet,
}

/// The tape handles of one network's parameters.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`. Weights are Kaiming-uniform in
    /// the fan-in, biases zero.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        output_activation: Activation,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "network widths must be positive with at least two entries, got {widths:?}"
            )));
        }
        let mut params = ParamSet::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
            params.push(format!("{prefix}.{l}.weight"), w)?;
            params.push(format!("{prefix}.{l}.bias"), Tensor::zeros(1, fan_out))?;
        }
        Ok(Self {
            widths: widths.to_vec(),
            output_activation,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight(&self, l: usize) -> &Tensor {
        self.params.value(2 * l)
    }

    fn bias(&self, l: usize) -> &Tensor {
        self.params.value(2 * l + 1)
    }

    /// Puts the parameters on the tape, differentiable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            h = tape.linear(h, bound.vars[2 * l], bound.vars[2 * l + 1])?;
            let act = if l == last {
                self.output_activation
            } else {
                Activation::Relu
            };
            if act == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Gradient of the (scalar-output) network with respect to each input
    /// row, built on the tape so it can itself be differentiated in the
    /// parameters. Returns an `N×input_dim` node.
    ///
    /// ReLU gates are taken from a plain forward pass at `x` and enter as
    /// constants; their derivative is zero almost everywhere.
    pub fn input_gradient(&self, tape: &mut Tape, bound: &Bound, x: &Tensor) -> Result<Var> {
        if self.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "input gradient needs a scalar network, output width is {}",
                self.output_dim()
            )));
        }
        if self.output_activation != Activation::Identity {
            return Err(Error::Config(
                "input gradient is defined for an identity output layer".into(),
            ));
        }
        let n = x.rows();
        // Pre-activations of every hidden layer.
        let mut gates = Vec::with_capacity(self.n_layers());
        let mut h = x.clone();
        for l in 0..self.n_layers() - 1 {
            let mut a = h.matmul(self.weight(l))?;
            for i in 0..n {
                for (v, &b) in a.row_mut(i).iter_mut().zip(self.bias(l).data()) {
                    *v += b;
                }
            }
            gates.push(a.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            h = a.map(|v| v.max(0.0));
        }
        let mut g = tape.constant(Tensor::filled(n, 1, 1.0));
        for l in (0..self.n_layers()).rev() {
            g = tape.matmul_t(g, bound.vars[2 * l])?;
            if l > 0 {
                let gate = tape.constant(gates[l - 1].clone());
                g = tape.mul(g, gate)?;
            }
        }
        Ok(g)
    }

    /// Copies gradients from the tape onto `self.params`. Parameters the
    /// loss does not reach receive zeros.
    pub fn collect_grads(&mut self, bound: &Bound, grads: &mut Grads) -> Result<()> {
        for (idx, &v) in bound.vars.iter().enumerate() {
            let g = grads.take(v).unwrap_or_else(|| {
                let p = self.params.value(idx);
                Tensor::zeros(p.rows(), p.cols())
            });
            self.params.set_grad(idx, g)?;
        }
        Ok(())
    }

    /// Tape-free forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &b, xv)?;
        Ok(tape.value(y).clone())
    }
}
