//! Cycle-consistency errors and their one-sample score-function estimators.
//!
//! For a path `A`, `Δ^A = −log Σ_X̂ P(X̂|A) P(A|X̂)` is bounded above by
//! `Δ̄^A = −Σ_X̂ P(X̂|A) log P(A|X̂)`. One sample `X̂ ~ P(·|A)` gives the
//! surrogate
//!
//! ```text
//! −log P(A|X̂) − sg(r − b^f) · log P(X̂|A),   r = max(log P(A|X̂), −50)
//! ```
//!
//! whose gradient is an unbiased estimate of `∇Δ̄^A`. `Δ^X` mirrors it with
//! `Â ~ P(·|X)` drawn from the follower.

use crate::agents::{Drive, EnvView, Follower, Speaker};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::world::{NodeId, Path, Token};

/// Rewards are clipped below at this value before baseline arithmetic.
pub const REWARD_FLOOR: f64 = -50.0;

/// One sampled estimate of a cycle error.
#[derive(Clone, Debug)]
pub struct CycleEstimate {
    /// `X̂` tokens (for `Δ^A`) or `Â` actions (for `Δ^X`).
    pub sample: Vec<usize>,
    /// The node path `Â` walked, for `Δ^X`; the given path for `Δ^A`.
    pub path: Path,
    /// `−log P(A|X̂)` or `−log P(X|Â)`.
    pub point_loss: Var,
    /// `−sg(r − b) · log P(sample)`.
    pub surrogate: Var,
    pub loss: Var,
    /// Clipped reward `r` used for the coefficient and the baseline update.
    pub reward: f64,
    /// Log-probability of the sample under the model that drew it.
    pub sample_logprob: f64,
}

fn finish(
    tape: &mut Tape,
    sample: Vec<usize>,
    path: Path,
    reconstruction: Var,
    sample_logp: Var,
    baseline: f64,
) -> Result<CycleEstimate> {
    let reward = tape.scalar(reconstruction).max(REWARD_FLOOR);
    let point_loss = tape.neg(reconstruction);
    let coef = tape.constant_scalar(-(reward - baseline));
    let surrogate = tape.mul(coef, sample_logp)?;
    let loss = tape.add(point_loss, surrogate)?;
    Ok(CycleEstimate {
        sample,
        path,
        point_loss,
        surrogate,
        loss,
        reward,
        sample_logprob: tape.scalar(sample_logp),
    })
}

/// `Δ̂^A`: speak about `path`, then ask the follower to walk it back.
pub fn estimate_delta_a(
    tape: &mut Tape,
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    path: &Path,
    baseline_f: f64,
    rng: &mut Rng,
) -> Result<CycleEstimate> {
    let spoken = speaker.run(tape, env, path, Drive::Sample(rng))?;
    let back = follower.logprob(tape, env, &spoken.tokens, path)?;
    finish(tape, spoken.tokens, path.clone(), back.logprob, spoken.logprob, baseline_f)
}

/// `Δ̂^X`: follow `instruction` from `start`, then ask the speaker to
/// describe the walked path.
pub fn estimate_delta_x(
    tape: &mut Tape,
    speaker: &Speaker,
    follower: &Follower,
    env: &EnvView,
    instruction: &[Token],
    start: NodeId,
    baseline_s: f64,
    rng: &mut Rng,
) -> Result<CycleEstimate> {
    let walked = follower.run(tape, env, instruction, start, Drive::Sample(rng))?;
    let path = walked.path(env.world)?;
    let back = speaker.logprob(tape, env, &path, instruction)?;
    finish(tape, walked.actions, path, back.logprob, walked.logprob, baseline_s)
}

/// Running baselines `b^f` (for rewards `log P(A|X̂)`) and `b^s` (for
/// `log P(X|Â)`), kept as exponential moving averages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineTracker {
    pub momentum: f64,
    pub b_f: Option<f64>,
    pub b_s: Option<f64>,
}

impl Default for BaselineTracker {
    fn default() -> Self {
        BaselineTracker::new(0.95)
    }
}

impl BaselineTracker {
    pub fn new(momentum: f64) -> Self {
        BaselineTracker {
            momentum,
            b_f: None,
            b_s: None,
        }
    }

    /// Values to subtract; 0 before anything has been observed.
    pub fn read(&self) -> (f64, f64) {
        (self.b_f.unwrap_or(0.0), self.b_s.unwrap_or(0.0))
    }

    fn ema(slot: &mut Option<f64>, m: f64, r: f64) {
        *slot = Some(match *slot {
            None => r,
            Some(b) => m * b + (1.0 - m) * r,
        });
    }

    pub fn observe_f(&mut self, reward: f64) {
        Self::ema(&mut self.b_f, self.momentum, reward);
    }

    pub fn observe_s(&mut self, reward: f64) {
        Self::ema(&mut self.b_s, self.momentum, reward);
    }
}

/// Which cycle terms a batch includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleTerms {
    pub delta_a: bool,
    pub delta_x: bool,
    pub delta_a_unlabeled: bool,
    pub counterfactual: bool,
}

impl CycleTerms {
    pub fn none() -> Self {
        CycleTerms {
            delta_a: false,
            delta_x: false,
            delta_a_unlabeled: false,
            counterfactual: false,
        }
    }

    pub fn any(&self) -> bool {
        self.delta_a || self.delta_x || self.delta_a_unlabeled || self.counterfactual
    }
}

/// A labeled item, with its counterfactual view when one was created.
pub struct LabeledItem<'a, 'w> {
    pub env: &'a EnvView<'w>,
    pub counterfactual: Option<&'a EnvView<'w>>,
    pub instruction: &'a [Token],
    pub path: &'a Path,
}

pub struct UnlabeledItem<'a, 'w> {
    pub env: &'a EnvView<'w>,
    pub path: &'a Path,
}

/// Batch loss plus the rewards to feed the baselines afterwards.
#[derive(Clone, Debug)]
pub struct BatchCycle {
    pub loss: Var,
    pub rewards_f: Vec<f64>,
    pub rewards_s: Vec<f64>,
}

/// `mean_D(Δ̂^A + Δ̂^X) + mean_U(Δ̂^{A'}) + mean_D(Δ̂^A_Ē + Δ̂^X_Ē)`, with each
/// term present only if switched on. Baselines are read once for the whole
/// batch. Samples for item `i` are drawn from `rngs(i)`.
pub fn cycle_loss_batch(
    tape: &mut Tape,
    speaker: &Speaker,
    follower: &Follower,
    labeled: &[LabeledItem],
    unlabeled: &[UnlabeledItem],
    terms: CycleTerms,
    baselines: &BaselineTracker,
    mut rngs: impl FnMut(usize) -> Rng,
) -> Result<BatchCycle> {
    if labeled.is_empty() && terms.any() {
        return Err(Error::Empty("labeled batch"));
    }
    let (b_f, b_s) = baselines.read();
    let mut out = BatchCycle {
        loss: tape.constant_scalar(0.0),
        rewards_f: Vec::new(),
        rewards_s: Vec::new(),
    };
    let mut labeled_sum = tape.constant_scalar(0.0);
    let mut cf_sum = tape.constant_scalar(0.0);
    for (i, item) in labeled.iter().enumerate() {
        let mut rng = rngs(i);
        let mut views = vec![(item.env, false)];
        if terms.counterfactual {
            if let Some(cf) = item.counterfactual {
                views.push((cf, true));
            }
        }
        for (env, is_cf) in views {
            let acc = if is_cf { &mut cf_sum } else { &mut labeled_sum };
            if terms.delta_a {
                let est = estimate_delta_a(tape, speaker, follower, env, item.path, b_f, &mut rng)?;
                *acc = tape.add(*acc, est.loss)?;
                out.rewards_f.push(est.reward);
            }
            if terms.delta_x {
                let est = estimate_delta_x(
                    tape,
                    speaker,
                    follower,
                    env,
                    item.instruction,
                    item.path.start(),
                    b_s,
                    &mut rng,
                )?;
                *acc = tape.add(*acc, est.loss)?;
                out.rewards_s.push(est.reward);
            }
        }
    }
    if !labeled.is_empty() {
        let n = labeled.len() as f64;
        let mean = tape.scale(labeled_sum, 1.0 / n);
        out.loss = tape.add(out.loss, mean)?;
        if terms.counterfactual {
            let mean = tape.scale(cf_sum, 1.0 / n);
            out.loss = tape.add(out.loss, mean)?;
        }
    }
    if terms.delta_a_unlabeled && !unlabeled.is_empty() {
        let mut sum = tape.constant_scalar(0.0);
        for (j, item) in unlabeled.iter().enumerate() {
            let mut rng = rngs(labeled.len() + j);
            let est = estimate_delta_a(tape, speaker, follower, item.env, item.path, b_f, &mut rng)?;
            sum = tape.add(sum, est.loss)?;
            out.rewards_f.push(est.reward);
        }
        let mean = tape.scale(sum, 1.0 / unlabeled.len() as f64);
        out.loss = tape.add(out.loss, mean)?;
    }
    Ok(out)
}
