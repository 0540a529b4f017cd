//! Deep attention point processes.
//!
//! A marked temporal point process whose conditional intensity is
//!
//! ```text
//! lambda(t, m | H_t) = mu(m) + softplus(h(x)^T W + b)
//! ```
//!
//! where `h(x)` concatenates attention heads over past events. Each head
//! scores event pairs with a shift-invariant kernel approximated by random
//! Fourier features whose frequencies are pushed forward from Gaussian noise
//! by a learned generator network.
//!
//! The crate provides the model ([`attention`]), a reverse-mode autodiff tape
//! ([`autodiff`]), likelihood evaluation and training ([`likelihood`],
//! [`train`]), thinning samplers and synthetic generators ([`simulation`]),
//! an exponential Hawkes baseline ([`hawkes`]) and evaluation metrics
//! ([`evaluation`], [`gof`]).
//!
//! ```
//! use dapp::attention::{Dapp, FeatureDraw, ModelConfig, ModelParams};
//! use dapp::events::{EventSequence, MarkSpace};
//! use dapp::likelihood::{sequence_loglik, IntegrationConfig};
//!
//! let mut rng = dapp::rng::seeded(7);
//! let cfg = ModelConfig { hidden: vec![8], ..ModelConfig::default() };
//! let params = ModelParams::init(cfg, MarkSpace::TEMPORAL, 3.0, &mut rng);
//! let draw = FeatureDraw::sample(&params, 64, &mut rng);
//! let model = Dapp::new(&params, &draw).unwrap();
//! let seq = EventSequence::from_times(&[0.1, 0.4, 0.45], 1.0).unwrap();
//! let ll = sequence_loglik(&model, &seq, &IntegrationConfig::default()).unwrap();
//! assert!(ll.is_finite());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod evaluation;
pub mod events;
pub mod fourier;
pub mod gof;
pub mod hawkes;
pub mod likelihood;
pub mod rng;
pub mod simulation;
pub mod spectrum;
pub mod train;

pub use attention::{ActiveSet, Attention, Dapp, FeatureDraw, ModelConfig, ModelParams};
pub use events::{Dataset, Event, EventSequence, MarkSpace};
pub use hawkes::{fit_hawkes, hawkes_loglik, HawkesParams};
pub use likelihood::{sequence_loglik, ConditionalIntensity, IntegrationConfig, Scheme};
pub use simulation::{GeneratorSpec, Process, ThinningConfig};
pub use train::{train, TrainConfig};
