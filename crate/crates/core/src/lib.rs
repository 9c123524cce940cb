//! Coverage-guided concolic test generation for feedforward ReLU networks.
//!
//! Concrete execution ranks (test, requirement) candidates; symbolic
//! analysis (linear programming over a fixed activation pattern, greedy
//! pixel search, or compass search for Lipschitz pairs) synthesizes new
//! inputs. A robustness oracle then inspects the finished suite.

pub mod engine;
pub mod error;
pub mod l0;
pub mod lipschitz;
pub mod logic;
pub mod lp;
pub mod network;
pub mod norm;
pub mod oracle;
pub mod ranking;

pub use error::{Error, Result};
pub use network::{pattern_of, ActivationPattern, Activations, Layer, Network, NeuronId};
pub use norm::Norm;
