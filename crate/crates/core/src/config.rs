//! Training hyperparameters, method variants and per-dataset presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MetricChoice, T1Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Determinant loss, local-structure graphs and Wasserstein alignment.
    Rlpga,
    /// As `Rlpga` without the graph term.
    Rga,
    /// Cross-entropy classifier with Wasserstein alignment, no graph term.
    WdgrlCe,
    /// As `Rlpga` with a domain classifier in place of the critic.
    RlpgaKl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Rlpga,
        Variant::Rga,
        Variant::WdgrlCe,
        Variant::RlpgaKl,
    ];

    /// Variants that must run without the graph term.
    pub fn forces_zero_alpha(self) -> bool {
        matches!(self, Variant::Rga | Variant::WdgrlCe)
    }

    pub fn uses_dmi(self) -> bool {
        !matches!(self, Variant::WdgrlCe)
    }

    pub fn uses_domain_classifier(self) -> bool {
        matches!(self, Variant::RlpgaKl)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Rlpga => "rlpga",
            Variant::Rga => "rga",
            Variant::WdgrlCe => "wdgrl_ce",
            Variant::RlpgaKl => "rlpga_kl",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Synthetic,
    OfficeCaltech10,
    Office31,
    OfficeHome,
    Digits,
    Email,
    Amazon,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Synthetic,
        Preset::OfficeCaltech10,
        Preset::Office31,
        Preset::OfficeHome,
        Preset::Digits,
        Preset::Email,
        Preset::Amazon,
    ];

    /// `(alpha, beta, gamma, k)`.
    pub fn weights(self) -> (f64, f64, f64, usize) {
        match self {
            Preset::Synthetic => (1.0, 0.1, 1.0, 3),
            Preset::OfficeCaltech10 => (1.0, 10.0, 1.0, 3),
            Preset::Office31 => (1.0, 0.1, 1.0, 3),
            Preset::OfficeHome => (1.0, 1e3, 1.0, 3),
            Preset::Digits => (1.0, 10.0, 1.0, 3),
            Preset::Email => (1.0, 1e-2, 0.1, 3),
            Preset::Amazon => (1.0, 1.0, 10.0, 3),
        }
    }

    /// Hidden widths of `(f, critic)`; the last `f` width is the latent size.
    pub fn arch(self) -> (Vec<usize>, Vec<usize>) {
        match self {
            Preset::Synthetic => (vec![20], vec![20]),
            Preset::Email | Preset::Amazon => (vec![500], vec![100]),
            _ => (vec![500, 100], vec![100]),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Synthetic => "synthetic",
            Preset::OfficeCaltech10 => "office_caltech10",
            Preset::Office31 => "office31",
            Preset::OfficeHome => "office_home",
            Preset::Digits => "digits",
            Preset::Email => "email",
            Preset::Amazon => "amazon",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub t1: T1Mode,
    pub metric: MetricChoice,
    /// Coefficient of the L2 regularizer on the feature extractor.
    pub weight_decay: f64,
    pub lr_critic: f64,
    pub lr_f: f64,
    pub lr_h: f64,
    pub n_critic: usize,
    pub gp_coeff: f64,
    pub steps: usize,
    /// Total batch; half is drawn from each domain.
    pub batch: usize,
    pub seed: u64,
    pub eval_interval: usize,
    pub f_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub stratified: bool,
    /// Permit half-batches smaller than the class count.
    pub allow_small_batch: bool,
}

impl TrainConfig {
    pub fn preset(preset: Preset, variant: Variant) -> Self {
        let (alpha, beta, gamma, k) = preset.weights();
        let (f_hidden, critic_hidden) = preset.arch();
        Self {
            variant,
            alpha: if variant.forces_zero_alpha() {
                0.0
            } else {
                alpha
            },
            beta,
            gamma,
            k,
            t1: T1Mode::Median,
            metric: MetricChoice::Auto,
            weight_decay: 5e-4,
            lr_critic: 1e-4,
            lr_f: 1e-4,
            lr_h: 1e-4,
            n_critic: 5,
            gp_coeff: 10.0,
            steps: 5000,
            batch: 64,
            seed: 0,
            eval_interval: 50,
            f_hidden,
            critic_hidden,
            stratified: false,
            allow_small_batch: false,
        }
    }

    pub fn half_batch(&self) -> usize {
        self.batch / 2
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.variant.forces_zero_alpha() && self.alpha != 0.0 {
            return Err(Error::Config(format!(
                "variant {} runs without the graph term; alpha must be 0, got {}",
                self.variant, self.alpha
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("weight_decay", self.weight_decay),
            ("gp_coeff", self.gp_coeff),
            ("lr_critic", self.lr_critic),
            ("lr_f", self.lr_f),
            ("lr_h", self.lr_h),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
        }
        if self.batch < 4 || !self.batch.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch must be even and at least 4, got {}",
                self.batch
            )));
        }
        if self.k == 0 || self.k >= self.half_batch() {
            return Err(Error::Config(format!(
                "k = {} must lie in 1..{} for a half-batch of {}",
                self.k,
                self.half_batch(),
                self.half_batch()
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if let T1Mode::Fixed(t) = self.t1 {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("t1 must be positive, got {t}")));
            }
        }
        if self.f_hidden.is_empty() || self.f_hidden.contains(&0) || self.critic_hidden.contains(&0)
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.variant.uses_dmi() && self.half_batch() < n_classes && !self.allow_small_batch {
            return Err(Error::Config(format!(
                "half-batch {} is smaller than the {n_classes} classes; the joint estimate would be singular",
                self.half_batch()
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        *self.f_hidden.last().expect("validated non-empty")
    }
}
