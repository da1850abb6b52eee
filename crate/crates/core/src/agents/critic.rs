use super::nn::Dims;
use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};

pub const TAG: &str = "critic";

/// Linear value head over the follower's hidden state. The hidden state is
/// detached so the value loss never reaches the follower.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub store: ParamStore,
}

impl Critic {
    pub fn new(dims: Dims, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new(TAG);
        store.insert("w", Tensor::uniform_init(&[1, dims.hidden], rng));
        store.insert("b", Tensor::vector(vec![0.0]));
        Critic { store }
    }

    pub fn value(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let h = tape.stop_gradient(hidden);
        let w = tape.param(&self.store, "w")?;
        let b = tape.param(&self.store, "b")?;
        let z = tape.matmul(w, h)?;
        let z = tape.add(z, b)?;
        Ok(tape.sum(z))
    }
}
