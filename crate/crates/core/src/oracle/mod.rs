//! Exact references by brute-force enumeration over tiny output spaces, and
//! a central finite-difference gradient checker.

pub mod suite;

use crate::agents::{Drive, EnvView, Follower, FollowerKind, Speaker};
use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::ParamStore;
use crate::world::{vocab, Dir, NodeId, Path, Token};

/// Largest output space the oracle will enumerate.
pub const MAX_SPACE: usize = 4096;
/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

/// Every `BOS w_1 .. w_k EOS` with `w_i` drawn from the non-special tokens
/// below `vocab_size` and `k + 1 ≤ max_len`.
pub fn instruction_space(vocab_size: usize, max_len: usize) -> Result<Vec<Vec<Token>>> {
    let words: Vec<Token> = (0..vocab_size).filter(|&t| t != vocab::BOS && t != vocab::EOS).collect();
    let mut size = 0usize;
    let mut layer = 1usize;
    for _ in 0..max_len {
        size = size.saturating_add(layer);
        layer = layer.saturating_mul(words.len());
    }
    if size > MAX_SPACE {
        return Err(Error::SpaceTooLarge { size, limit: MAX_SPACE });
    }
    let mut out = Vec::with_capacity(size);
    let mut frontier = vec![vec![vocab::BOS]];
    for depth in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            let mut done = prefix.clone();
            done.push(vocab::EOS);
            out.push(done);
            if depth + 1 < max_len {
                for &w in &words {
                    let mut p = prefix.clone();
                    p.push(w);
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// Every action sequence the follower can legally produce from `start`.
pub fn action_space(follower: &Follower, env: &EnvView, start: NodeId) -> Result<Vec<Vec<usize>>> {
    env.world.check_node(start)?;
    let cfg = follower.config;
    let stop = cfg.kind.stop_action();
    let mut out = Vec::new();
    // (actions so far, node, heading)
    let mut stack = vec![(Vec::new(), start, Dir::N)];
    while let Some((actions, node, heading)) = stack.pop() {
        let t = actions.len();
        let mut done = actions.clone();
        done.push(stop);
        out.push(done);
        if out.len() + stack.len() > MAX_SPACE {
            return Err(Error::SpaceTooLarge {
                size: out.len() + stack.len(),
                limit: MAX_SPACE,
            });
        }
        if t + 1 >= cfg.max_steps {
            continue;
        }
        match cfg.kind {
            FollowerKind::Panoramic => {
                for (d, next) in env.world.neighbors(node) {
                    let mut a = actions.clone();
                    a.push(d.index());
                    stack.push((a, next, heading));
                }
            }
            FollowerKind::LowLevel => {
                use crate::agents::follower::{FORWARD, LEFT, RIGHT};
                let mut a = actions.clone();
                a.push(LEFT);
                stack.push((a, node, heading.left()));
                let mut a = actions.clone();
                a.push(RIGHT);
                stack.push((a, node, heading.right()));
                if let Some(next) = env.world.step(node, heading) {
                    let mut a = actions.clone();
                    a.push(FORWARD);
                    stack.push((a, next, heading));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Exact cycle error and its Jensen upper bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactDelta {
    /// `−log Σ P(intermediate) P(reconstruction)`.
    pub delta: f64,
    /// `−Σ P(intermediate) log P(reconstruction)`.
    pub delta_bar: f64,
    /// Total probability of the enumerated intermediates.
    pub mass: f64,
}

fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn reduce(terms: &[(f64, f64)]) -> ExactDelta {
    let mut joint = 0.0;
    let mut bar = 0.0;
    let mut mass = 0.0;
    for &(lp_mid, lp_back) in terms {
        let p = lp_mid.exp();
        mass += p;
        joint += (lp_mid + lp_back).exp();
        bar -= p * floored_ln(lp_back.exp());
    }
    ExactDelta {
        delta: -floored_ln(joint),
        delta_bar: bar,
        mass,
    }
}

/// `(log P(X̂|A), log P(A|X̂))` for every `X̂` in the instruction space.
pub fn delta_a_terms(speaker: &Speaker, follower: &Follower, env: &EnvView, path: &Path) -> Result<Vec<(Vec<Token>, f64, f64)>> {
    let space = instruction_space(speaker.config.dims.vocab, speaker.config.max_len)?;
    let mut out = Vec::with_capacity(space.len());
    for x in space {
        let mut tape = Tape::new();
        let s = speaker.logprob(&mut tape, env, path, &x)?;
        let f = follower.logprob(&mut tape, env, &x, path)?;
        let (ls, lf) = (tape.scalar(s.logprob), tape.scalar(f.logprob));
        out.push((x, ls, lf));
    }
    Ok(out)
}

/// `(Â, log P(Â|X), log P(X|Â))` for every action sequence from `start`.
pub fn delta_x_terms(
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    instruction: &[Token],
    start: NodeId,
) -> Result<Vec<(Vec<usize>, f64, f64)>> {
    let space = action_space(follower, env, start)?;
    let mut out = Vec::with_capacity(space.len());
    for a in space {
        let mut tape = Tape::new();
        let f = follower.run(&mut tape, env, instruction, start, Drive::Teacher(&a))?;
        let path = f.path(env.world)?;
        let s = speaker.logprob(&mut tape, env, &path, instruction)?;
        let (lf, ls) = (tape.scalar(f.logprob), tape.scalar(s.logprob));
        out.push((a, lf, ls));
    }
    Ok(out)
}

pub fn exact_delta_a(speaker: &Speaker, follower: &Follower, env: &EnvView, path: &Path) -> Result<ExactDelta> {
    let terms: Vec<_> = delta_a_terms(speaker, follower, env, path)?
        .into_iter()
        .map(|(_, s, f)| (s, f))
        .collect();
    Ok(reduce(&terms))
}

pub fn exact_delta_x(
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    instruction: &[Token],
    start: NodeId,
) -> Result<ExactDelta> {
    let terms: Vec<_> = delta_x_terms(speaker, follower, env, instruction, start)?
        .into_iter()
        .map(|(_, f, s)| (f, s))
        .collect();
    Ok(reduce(&terms))
}

/// Adds `Σ_i exp(mid_i) · (−back_i)` to a tape, i.e. `Δ̄` as a
/// differentiable expression.
fn delta_bar_expr(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
    let mut acc = tape.constant_scalar(0.0);
    for &(mid, back) in pairs {
        let p = tape.exp(mid);
        let nb = tape.neg(back);
        let term = tape.mul(p, nb)?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// `∇Δ̄^A` with respect to both stores, by differentiating the enumerated sum.
pub fn exact_grad_delta_bar_a(
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    path: &Path,
) -> Result<(f64, Gradients)> {
    let space = instruction_space(speaker.config.dims.vocab, speaker.config.max_len)?;
    let mut tape = Tape::new();
    let mut pairs = Vec::with_capacity(space.len());
    for x in &space {
        let s = speaker.logprob(&mut tape, env, path, x)?;
        let f = follower.logprob(&mut tape, env, x, path)?;
        pairs.push((s.logprob, f.logprob));
    }
    let loss = delta_bar_expr(&mut tape, &pairs)?;
    Ok((tape.scalar(loss), tape.backward(loss)?))
}

/// `∇Δ̄^X` with respect to both stores.
pub fn exact_grad_delta_bar_x(
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    instruction: &[Token],
    start: NodeId,
) -> Result<(f64, Gradients)> {
    let space = action_space(follower, env, start)?;
    let mut tape = Tape::new();
    let mut pairs = Vec::with_capacity(space.len());
    for a in &space {
        let f = follower.run(&mut tape, env, instruction, start, Drive::Teacher(a))?;
        let path = f.path(env.world)?;
        let s = speaker.logprob(&mut tape, env, &path, instruction)?;
        pairs.push((f.logprob, s.logprob));
    }
    let loss = delta_bar_expr(&mut tape, &pairs)?;
    Ok((tape.scalar(loss), tape.backward(loss)?))
}

fn max_abs(grads: &Gradients) -> f64 {
    grads
        .tags()
        .flat_map(|t| grads.store_ref(t).into_iter().flat_map(|m| m.values()))
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `max |Σ_X̂ P(X̂|A) ∇ log P(X̂|A)|` over speaker coordinates.
pub fn speaker_score_identity(speaker: &Speaker, env: &EnvView, path: &Path) -> Result<f64> {
    let space = instruction_space(speaker.config.dims.vocab, speaker.config.max_len)?;
    let mut tape = Tape::new();
    let mut acc = tape.constant_scalar(0.0);
    for x in &space {
        let s = speaker.logprob(&mut tape, env, path, x)?;
        let p = tape.stop_gradient(s.logprob);
        let p = tape.exp(p);
        let term = tape.mul(p, s.logprob)?;
        acc = tape.add(acc, term)?;
    }
    Ok(max_abs(&tape.backward(acc)?))
}

/// `max |Σ_Â P(Â|X) ∇ log P(Â|X)|` over follower coordinates.
pub fn follower_score_identity(follower: &Follower, env: &EnvView, instruction: &[Token], start: NodeId) -> Result<f64> {
    let space = action_space(follower, env, start)?;
    let mut tape = Tape::new();
    let mut acc = tape.constant_scalar(0.0);
    for a in &space {
        let f = follower.run(&mut tape, env, instruction, start, Drive::Teacher(a))?;
        let p = tape.stop_gradient(f.logprob);
        let p = tape.exp(p);
        let term = tape.mul(p, f.logprob)?;
        acc = tape.add(acc, term)?;
    }
    Ok(max_abs(&tape.backward(acc)?))
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// `store/param[index]` of the worst coordinate.
    pub worst: String,
    /// Tape and finite-difference values at the worst coordinate.
    pub worst_values: (f64, f64),
}

/// Compares tape gradients of `loss` against the five-point central
/// difference `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h` on every
/// coordinate of every store. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-7)`.
pub fn finite_difference_check<F>(stores: &mut [ParamStore], h: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&[ParamStore], &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(stores, &mut tape)?;
    let grads = tape.backward(l)?;
    let mut eval = |stores: &[ParamStore]| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(stores, &mut tape)?;
        Ok(tape.scalar(l))
    };
    let mut out = GradCheck {
        coordinates: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
    };
    for s in 0..stores.len() {
        let tag = stores[s].tag().to_string();
        let names: Vec<String> = stores[s].names().cloned().collect();
        for name in names {
            let n = stores[s].get(&name)?.len();
            for i in 0..n {
                let orig = stores[s].get(&name)?.data()[i];
                let mut at = |k: f64| -> Result<f64> {
                    stores[s].get_mut(&name)?.data_mut()[i] = orig + k * h;
                    eval(stores)
                };
                let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
                stores[s].get_mut(&name)?.data_mut()[i] = orig;
                let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
                let analytic = grads.get(&tag, &name).map_or(0.0, |g| g.data()[i]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-7);
                let rel = (analytic - numeric).abs() / denom;
                out.coordinates += 1;
                if rel > out.max_rel_error {
                    out.max_rel_error = rel;
                    out.worst = format!("{tag}/{name}[{i}]");
                    out.worst_values = (analytic, numeric);
                }
            }
        }
    }
    Ok(out)
}
