//! Counterfactual cycle-consistent training of an instruction follower, an
//! instruction speaker and an environment creator on procedural grid worlds.

pub mod agents;
pub mod cycle;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod oracle;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{sgd_step, GradMap, ParamStore, Tensor};
