//! Instruction speaker: encodes a path's (scene, action) pairs and decodes
//! tokens with attention over the path encodings.

use super::env::EnvView;
use super::follower::{argmax, sample_index};
use super::nn::{self, Dims, LstmState, Memory};
use super::Drive;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::world::{vocab, Path, Token, FEATURE_DIM, MAX_INSTRUCTION_LEN};

pub const TAG: &str = "speaker";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeakerConfig {
    pub dims: Dims,
    /// Most tokens generated after BOS, EOS included. Only EOS is legal at
    /// the last position.
    pub max_len: usize,
}

impl SpeakerConfig {
    pub fn new(dims: Dims) -> Self {
        SpeakerConfig {
            dims,
            max_len: MAX_INSTRUCTION_LEN - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub config: SpeakerConfig,
    pub store: ParamStore,
}

#[derive(Clone, Debug)]
pub struct SpeakerTrace {
    /// BOS, generated tokens, EOS (if reached).
    pub tokens: Vec<Token>,
    pub probs: Vec<Vec<f64>>,
    pub step_logps: Vec<Var>,
    pub logprob: Var,
}

impl Speaker {
    pub fn new(config: SpeakerConfig, rng: &mut Rng) -> Self {
        let d = config.dims;
        let mut store = ParamStore::new(TAG);
        nn::init_lstm(&mut store, "enc.lstm", 2 * FEATURE_DIM, d.hidden, rng);
        store.insert("dec.embed", Tensor::uniform_init(&[d.vocab, d.embed], rng));
        nn::init_lstm(&mut store, "dec.lstm", d.embed + d.hidden, d.hidden, rng);
        store.insert("out.w", Tensor::uniform_init(&[d.vocab, 2 * d.hidden], rng));
        store.insert("out.b", Tensor::zeros(&[d.vocab]));
        Speaker { config, store }
    }

    /// Path encodings `o_1..o_T`, one per action including STOP.
    pub fn encode_path(&self, tape: &mut Tape, env: &EnvView, path: &Path) -> Result<(Memory, LstmState)> {
        if path.nodes.is_empty() {
            return Err(Error::InvalidPath("empty path".into()));
        }
        let mut state = LstmState::zeros(tape, self.config.dims.hidden);
        let mut rows = Vec::with_capacity(path.num_actions());
        for (t, &node) in path.nodes.iter().enumerate() {
            let scene = env.pooled(tape, node)?;
            let action = match path.moves.get(t) {
                Some(&d) => env.subview(tape, node, d),
                None => EnvView::zero(tape),
            };
            let x = tape.concat(&[scene, action])?;
            state = nn::lstm_step(tape, &self.store, "enc.lstm", x, state)?;
            rows.push(state.h);
        }
        Ok((Memory::new(tape, rows)?, state))
    }

    pub fn run(&self, tape: &mut Tape, env: &EnvView, path: &Path, mut drive: Drive) -> Result<SpeakerTrace> {
        let (memory, enc) = self.encode_path(tape, env, path)?;
        let o_t = enc.h;
        let store = &self.store;
        let vocab_size = self.config.dims.vocab;
        let table = tape.param(store, "dec.embed")?;
        let out_w = tape.param(store, "out.w")?;
        let out_b = tape.param(store, "out.b")?;

        let mut state = enc;
        let mut prev = vocab::BOS;
        let mut trace = SpeakerTrace {
            tokens: vec![vocab::BOS],
            probs: Vec::new(),
            step_logps: Vec::new(),
            logprob: tape.constant_scalar(0.0),
        };
        for l in 0..self.config.max_len {
            let last = l + 1 == self.config.max_len;
            let e = tape.embedding(table, prev)?;
            let x = tape.concat(&[e, o_t])?;
            state = nn::lstm_step(tape, store, "dec.lstm", x, state)?;
            let ctx = memory.attend(tape, state.h)?;
            let hc = tape.concat(&[state.h, ctx])?;
            let logits = tape.matmul(out_w, hc)?;
            let logits = tape.add(logits, out_b)?;
            let mut mask = vec![!last; vocab_size];
            mask[vocab::BOS] = false;
            mask[vocab::EOS] = true;
            let logp = tape.log_softmax(logits, Some(&mask))?;
            let probs: Vec<f64> = tape.value(logp).data().iter().map(|v| v.exp()).collect();
            let token = match &mut drive {
                Drive::Teacher(tokens) => {
                    let tok = *tokens.get(l + 1).ok_or_else(|| {
                        Error::InvalidInstruction("instruction ends without EOS".into())
                    })?;
                    if tok >= vocab_size || !mask[tok] {
                        return Err(Error::InvalidInstruction(format!(
                            "token {tok} not allowed at position {}",
                            l + 1
                        )));
                    }
                    tok
                }
                Drive::Greedy => argmax(&probs),
                Drive::Sample(rng) => sample_index(&probs, rng),
            };
            let lp = tape.index(logp, token)?;
            trace.logprob = tape.add(trace.logprob, lp)?;
            trace.step_logps.push(lp);
            trace.probs.push(probs);
            trace.tokens.push(token);
            prev = token;
            if token == vocab::EOS {
                if let Drive::Teacher(tokens) = &drive {
                    if tokens.len() != l + 2 {
                        return Err(Error::InvalidInstruction("tokens continue past EOS".into()));
                    }
                }
                break;
            }
        }
        Ok(trace)
    }

    /// Teacher-forced `log P(X | A; E)`; `tokens` must start with BOS and end
    /// with EOS.
    pub fn logprob(&self, tape: &mut Tape, env: &EnvView, path: &Path, tokens: &[Token]) -> Result<SpeakerTrace> {
        if tokens.len() < 2 || tokens[0] != vocab::BOS {
            return Err(Error::InvalidInstruction("instruction must be BOS ... EOS".into()));
        }
        self.run(tape, env, path, Drive::Teacher(tokens))
    }
}
