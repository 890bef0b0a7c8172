//! Domain adaptation under source-label noise.
//!
//! A feature extractor is trained so that a classifier fit on noisy source
//! labels transfers to an unlabeled target domain. Three terms shape it:
//!
//! - a determinant-based classification loss, whose ordering of classifiers
//!   is unchanged by any invertible class-conditional noise channel
//!   ([`losses::dmi_terms`]);
//! - a signed-graph loss that keeps input-space neighbours close and pushes
//!   1-NN clusters apart in the latent space ([`graph`], [`losses::dispn_term`]);
//! - a Wasserstein critic that aligns the two domains' latent distributions
//!   ([`trainer::critic_phase`]).
//!
//! All arithmetic is `f64` on small dense matrices, differentiated by the
//! reverse-mode [`tape`].

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use config::{Preset, TrainConfig, Variant};
pub use error::{Error, Result};
pub use tensor::{ParamSet, Tensor};
