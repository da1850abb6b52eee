//! Instruction follower: an attention LSTM policy over a grid world.
//!
//! Two action spaces are supported. The panoramic follower picks one of the
//! four subviews at the current node (or STOP) and scores candidate `k` as
//! `a_k . (W2 h_t)`. The low-level follower keeps a heading and chooses among
//! `left`, `right`, `forward` and `stop` with logits `W1 h_t`.

use rand::Rng as _;

use super::env::EnvView;
use super::nn::{self, Dims};
use super::Drive;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::world::{Dir, NodeId, Path, Token, World, FEATURE_DIM};

pub const TAG: &str = "follower";

pub const STOP_PANORAMIC: usize = 4;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const FORWARD: usize = 2;
pub const STOP_LOW_LEVEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FollowerKind {
    Panoramic,
    LowLevel,
}

impl FollowerKind {
    pub fn num_actions(self) -> usize {
        match self {
            FollowerKind::Panoramic => 5,
            FollowerKind::LowLevel => 4,
        }
    }

    pub fn stop_action(self) -> usize {
        match self {
            FollowerKind::Panoramic => STOP_PANORAMIC,
            FollowerKind::LowLevel => STOP_LOW_LEVEL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FollowerConfig {
    pub kind: FollowerKind,
    pub dims: Dims,
    /// Episode length cap; STOP is the only legal action at the last step.
    pub max_steps: usize,
    /// Attention over token encodings (true) or their mean (false).
    pub attention: bool,
}

impl FollowerConfig {
    pub fn panoramic(dims: Dims) -> Self {
        FollowerConfig {
            kind: FollowerKind::Panoramic,
            dims,
            max_steps: 12,
            attention: true,
        }
    }

    pub fn low_level(dims: Dims) -> Self {
        FollowerConfig {
            kind: FollowerKind::LowLevel,
            dims,
            max_steps: 28,
            attention: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Follower {
    pub config: FollowerConfig,
    pub store: ParamStore,
}

/// What a follower did on one episode, with everything needed for losses.
#[derive(Clone, Debug)]
pub struct FollowerTrace {
    pub kind: FollowerKind,
    pub actions: Vec<usize>,
    /// Nodes visited, starting node first; turns do not add entries.
    pub nodes: Vec<NodeId>,
    /// Per-step distribution over the full action set (0 for illegal actions).
    pub probs: Vec<Vec<f64>>,
    pub step_logps: Vec<Var>,
    /// Hidden state used to score each step.
    pub hiddens: Vec<Var>,
    pub logprob: Var,
}

impl FollowerTrace {
    pub fn path(&self, world: &World) -> Result<Path> {
        Path::from_nodes(world, self.nodes.clone())
    }

    pub fn final_node(&self) -> NodeId {
        *self.nodes.last().expect("trace has a start node")
    }

    /// Whether action `a` moves the agent to another node.
    pub fn is_move(&self, a: usize) -> bool {
        match self.kind {
            FollowerKind::Panoramic => a < STOP_PANORAMIC,
            FollowerKind::LowLevel => a == FORWARD,
        }
    }
}

impl Follower {
    pub fn new(config: FollowerConfig, rng: &mut Rng) -> Self {
        let d = config.dims;
        let mut store = ParamStore::new(TAG);
        nn::init_token_encoder(&mut store, "instr", d, rng);
        let act_dim = match config.kind {
            FollowerKind::Panoramic => FEATURE_DIM,
            FollowerKind::LowLevel => d.embed,
        };
        nn::init_lstm(&mut store, "nav.lstm", FEATURE_DIM + d.hidden + act_dim, d.hidden, rng);
        match config.kind {
            FollowerKind::Panoramic => {
                store.insert("w2", Tensor::uniform_init(&[FEATURE_DIM, d.hidden], rng));
            }
            FollowerKind::LowLevel => {
                store.insert("w1", Tensor::uniform_init(&[4, d.hidden], rng));
                store.insert("act.embed", Tensor::uniform_init(&[5, d.embed], rng));
            }
        }
        Follower { config, store }
    }

    /// Teacher actions for a node path in this follower's action space.
    /// The low-level follower starts facing north and turns the short way
    /// (right-right for a reversal).
    pub fn actions_for_path(&self, path: &Path) -> Vec<usize> {
        match self.config.kind {
            FollowerKind::Panoramic => path
                .moves
                .iter()
                .map(|d| d.index())
                .chain(std::iter::once(STOP_PANORAMIC))
                .collect(),
            FollowerKind::LowLevel => {
                let mut out = Vec::new();
                let mut heading = Dir::N;
                for &d in &path.moves {
                    match (d.index() + 4 - heading.index()) % 4 {
                        0 => {}
                        1 => out.push(RIGHT),
                        2 => out.extend([RIGHT, RIGHT]),
                        _ => out.push(LEFT),
                    }
                    heading = d;
                    out.push(FORWARD);
                }
                out.push(STOP_LOW_LEVEL);
                out
            }
        }
    }

    /// Encodes the instruction and runs the policy from `start`.
    pub fn run(
        &self,
        tape: &mut Tape,
        env: &EnvView,
        instruction: &[Token],
        start: NodeId,
        mut drive: Drive,
    ) -> Result<FollowerTrace> {
        if instruction.is_empty() {
            return Err(Error::InvalidInstruction("empty instruction".into()));
        }
        env.world.check_node(start)?;
        let cfg = self.config;
        let h = cfg.dims.hidden;
        let store = &self.store;
        let (memory, enc_state) = nn::encode_tokens(tape, store, "instr", instruction, h)?;
        let mean_ctx = if cfg.attention { None } else { Some(memory.mean(tape)?) };

        let mut state = enc_state;
        let mut node = start;
        let mut heading = Dir::N;
        let mut prev_action = match cfg.kind {
            FollowerKind::Panoramic => EnvView::zero(tape),
            FollowerKind::LowLevel => {
                let table = tape.param(store, "act.embed")?;
                tape.embedding(table, 4)?
            }
        };
        let mut trace = FollowerTrace {
            kind: cfg.kind,
            actions: Vec::new(),
            nodes: vec![start],
            probs: Vec::new(),
            step_logps: Vec::new(),
            hiddens: Vec::new(),
            logprob: tape.constant_scalar(0.0),
        };
        let stop = cfg.kind.stop_action();

        for t in 0..cfg.max_steps {
            let last = t + 1 == cfg.max_steps;
            let (visual, candidates) = match cfg.kind {
                FollowerKind::Panoramic => {
                    let pano = env.panorama(tape, node);
                    (tape.max_pool(&pano)?, Some(pano))
                }
                FollowerKind::LowLevel => (env.subview(tape, node, heading), None),
            };
            let ctx = match mean_ctx {
                Some(c) => c,
                None => memory.attend(tape, state.h)?,
            };
            let x = tape.concat(&[visual, ctx, prev_action])?;
            state = nn::lstm_step(tape, store, "nav.lstm", x, state)?;

            let (logits, mask) = match cfg.kind {
                FollowerKind::Panoramic => {
                    let pano = candidates.expect("panoramic candidates");
                    let w2 = tape.param(store, "w2")?;
                    let u = tape.matmul(w2, state.h)?;
                    let zero = EnvView::zero(tape);
                    let cands = tape.stack(&[pano[0], pano[1], pano[2], pano[3], zero])?;
                    let logits = tape.matmul(cands, u)?;
                    let mut mask = [false; 5];
                    for d in Dir::ALL {
                        mask[d.index()] = !last && env.world.is_open(node, d);
                    }
                    mask[STOP_PANORAMIC] = true;
                    (logits, mask.to_vec())
                }
                FollowerKind::LowLevel => {
                    let w1 = tape.param(store, "w1")?;
                    let logits = tape.matmul(w1, state.h)?;
                    let mask = vec![!last, !last, !last && env.world.is_open(node, heading), true];
                    (logits, mask)
                }
            };
            let logp = tape.log_softmax(logits, Some(&mask))?;
            let probs: Vec<f64> = tape.value(logp).data().iter().map(|v| v.exp()).collect();

            let action = match &mut drive {
                Drive::Teacher(actions) => {
                    let a = *actions.get(t).ok_or_else(|| {
                        Error::InvalidPath("teacher actions end without STOP".into())
                    })?;
                    if a >= mask.len() || !mask[a] {
                        return Err(Error::IllegalAction { step: t, action: a });
                    }
                    a
                }
                Drive::Greedy => argmax(&probs),
                Drive::Sample(rng) => sample_index(&probs, rng),
            };
            let lp = tape.index(logp, action)?;
            trace.logprob = tape.add(trace.logprob, lp)?;
            trace.step_logps.push(lp);
            trace.hiddens.push(state.h);
            trace.probs.push(probs);
            trace.actions.push(action);
            if action == stop {
                if let Drive::Teacher(actions) = &drive {
                    if actions.len() != t + 1 {
                        return Err(Error::InvalidPath("teacher actions continue past STOP".into()));
                    }
                }
                break;
            }
            match cfg.kind {
                FollowerKind::Panoramic => {
                    let d = Dir::from_index(action);
                    let pano = candidates.expect("panoramic candidates");
                    prev_action = pano[d.index()];
                    node = env.world.step(node, d).expect("masked move is legal");
                    trace.nodes.push(node);
                }
                FollowerKind::LowLevel => {
                    match action {
                        LEFT => heading = heading.left(),
                        RIGHT => heading = heading.right(),
                        _ => {
                            node = env.world.step(node, heading).expect("masked move is legal");
                            trace.nodes.push(node);
                        }
                    }
                    let table = tape.param(store, "act.embed")?;
                    prev_action = tape.embedding(table, action)?;
                }
            }
        }
        Ok(trace)
    }

    /// Teacher-forced `log P(A | X; E)` for a node path.
    pub fn logprob(
        &self,
        tape: &mut Tape,
        env: &EnvView,
        instruction: &[Token],
        path: &Path,
    ) -> Result<FollowerTrace> {
        let actions = self.actions_for_path(path);
        self.run(tape, env, instruction, path.start(), Drive::Teacher(&actions))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_live = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            last_live = i;
            acc += v;
            if u < acc {
                return i;
            }
        }
    }
    last_live
}
