//! Alignment scorer `d(E, X, A) ∈ (0, 1)`.
//!
//! The action stream carries only the heading of each move (dims 8–9 of a
//! subview), so the score cannot read visual cues off the trajectory itself.

use super::env::EnvView;
use super::nn::{self, Dims, LstmState};
use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::world::{Path, Token, FEATURE_DIM};

pub const TAG: &str = "discriminator";

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub dims: Dims,
    pub store: ParamStore,
}

impl Discriminator {
    pub fn new(dims: Dims, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new(TAG);
        nn::init_token_encoder(&mut store, "instr", dims, rng);
        nn::init_lstm(&mut store, "path.lstm", FEATURE_DIM + 2, dims.hidden, rng);
        store.insert("out.w", Tensor::uniform_init(&[1, 2 * dims.hidden], rng));
        store.insert("out.b", Tensor::vector(vec![0.0]));
        Discriminator { dims, store }
    }

    pub fn score(&self, tape: &mut Tape, env: &EnvView, instruction: &[Token], path: &Path) -> Result<Var> {
        let h = self.dims.hidden;
        let (memory, _) = nn::encode_tokens(tape, &self.store, "instr", instruction, h)?;
        let mut state = LstmState::zeros(tape, h);
        for (t, &node) in path.nodes.iter().enumerate() {
            let scene = env.pooled(tape, node)?;
            let geo = match path.moves.get(t) {
                Some(&d) => {
                    let (c, s) = d.unit();
                    vec![c, s]
                }
                None => vec![0.0, 0.0],
            };
            let geo = tape.constant_vec(geo);
            let x = tape.concat(&[scene, geo])?;
            state = nn::lstm_step(tape, &self.store, "path.lstm", x, state)?;
        }
        let ctx = memory.attend(tape, state.h)?;
        let hc = tape.concat(&[state.h, ctx])?;
        let w = tape.param(&self.store, "out.w")?;
        let b = tape.param(&self.store, "out.b")?;
        let z = tape.matmul(w, hc)?;
        let z = tape.add(z, b)?;
        let z = tape.sum(z);
        Ok(tape.sigmoid(z))
    }
}
