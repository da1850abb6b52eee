//! Building blocks shared by the four models: LSTM cells, token encoders and
//! dot-product attention.

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::world::Token;

/// Sizes shared by every model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            hidden: 32,
            embed: 16,
            vocab: crate::world::vocab::SIZE,
        }
    }
}

pub fn init_lstm(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    store.insert(
        format!("{prefix}.w"),
        Tensor::uniform_init(&[4 * hidden, input + hidden], rng),
    );
    let bound = [4 * hidden, input + hidden];
    let mut b = Tensor::uniform_init(&bound, rng).into_data();
    b.truncate(4 * hidden);
    store.insert(format!("{prefix}.b"), Tensor::vector(b));
}

/// Recurrent state `(h, c)`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Self {
        LstmState {
            h: tape.constant_vec(vec![0.0; hidden]),
            c: tape.constant_vec(vec![0.0; hidden]),
        }
    }
}

pub fn lstm_step(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    state: LstmState,
) -> Result<LstmState> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let hidden = tape.value(state.c).len();
    let xh = tape.concat(&[x, state.h])?;
    let z = tape.matmul(w, xh)?;
    let z = tape.add(z, b)?;
    let hc = tape.lstm_cell(z, state.c)?;
    Ok(LstmState {
        h: tape.slice(hc, 0, hidden)?,
        c: tape.slice(hc, hidden, hidden)?,
    })
}

/// A sequence of encodings usable as attention keys.
#[derive(Clone, Debug)]
pub struct Memory {
    pub rows: Vec<Var>,
    keys: Var,
    keys_t: Var,
}

impl Memory {
    pub fn new(tape: &mut Tape, rows: Vec<Var>) -> Result<Self> {
        let keys = tape.stack(&rows)?;
        let keys_t = tape.transpose(keys)?;
        Ok(Memory { rows, keys, keys_t })
    }

    /// Softmax-weighted sum of the rows, scored by dot product with `query`.
    pub fn attend(&self, tape: &mut Tape, query: Var) -> Result<Var> {
        let scores = tape.matmul(self.keys, query)?;
        let weights = tape.softmax(scores)?;
        tape.matmul(self.keys_t, weights)
    }

    pub fn mean(&self, tape: &mut Tape) -> Result<Var> {
        let n = self.rows.len();
        let ones = tape.constant_vec(vec![1.0 / n as f64; n]);
        tape.matmul(self.keys_t, ones)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn init_token_encoder(store: &mut ParamStore, prefix: &str, dims: Dims, rng: &mut Rng) {
    store.insert(
        format!("{prefix}.embed"),
        Tensor::uniform_init(&[dims.vocab, dims.embed], rng),
    );
    init_lstm(store, &format!("{prefix}.lstm"), dims.embed, dims.hidden, rng);
}

/// Runs an LSTM over the embedded tokens; returns per-token encodings and
/// the final state.
pub fn encode_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    tokens: &[Token],
    hidden: usize,
) -> Result<(Memory, LstmState)> {
    let table = tape.param(store, &format!("{prefix}.embed"))?;
    let lstm = format!("{prefix}.lstm");
    let mut state = LstmState::zeros(tape, hidden);
    let mut rows = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let e = tape.embedding(table, t)?;
        state = lstm_step(tape, store, &lstm, e, state)?;
        rows.push(state.h);
    }
    Ok((Memory::new(tape, rows)?, state))
}
