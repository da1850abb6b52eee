//! Task losses: follower imitation and actor-critic losses, speaker
//! likelihood, the creator's gate/adversarial loss and the discriminator's
//! difference loss.

use crate::agents::creator::Counterfactual;
use crate::agents::{discriminator, Critic, Discriminator, Drive, EnvView, Follower, FollowerTrace, Speaker};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::world::{NodeId, Path, Token};

/// `−log P(A | X)`.
pub fn il_loss(tape: &mut Tape, follower: &Follower, env: &EnvView, instruction: &[Token], path: &Path) -> Result<Var> {
    let trace = follower.logprob(tape, env, instruction, path)?;
    Ok(tape.neg(trace.logprob))
}

/// `−log P(X | A)`.
pub fn speaker_mle_loss(tape: &mut Tape, speaker: &Speaker, env: &EnvView, path: &Path, instruction: &[Token]) -> Result<Var> {
    if instruction.is_empty() {
        return Err(Error::InvalidInstruction("empty instruction".into()));
    }
    let trace = speaker.logprob(tape, env, path, instruction)?;
    Ok(tape.neg(trace.logprob))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlConfig {
    pub discount: f64,
    /// Geodesic distance (edges) that counts as reaching the goal.
    pub success_radius: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            discount: 0.95,
            success_radius: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RlOutcome {
    pub trace: FollowerTrace,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
    /// `−Σ_t log p_t(a_t) Λ_t` with `Λ_t = G_t − V_t` held constant.
    pub policy_loss: Var,
    /// `mean_t (G_t − V_t)²`, reaching only the critic.
    pub critic_loss: Var,
}

/// Per-step rewards: the decrease in geodesic distance to `goal` after each
/// action, plus 1 on the final step if the agent ends within the success
/// radius.
pub fn step_rewards(env: &EnvView, trace: &FollowerTrace, goal: NodeId, cfg: RlConfig) -> Result<Vec<f64>> {
    let world = env.world;
    let mut rewards = Vec::with_capacity(trace.actions.len());
    // Nodes only change on moves; track position per action.
    let mut pos_idx = 0;
    let mut dist = world.geodesic(trace.nodes[0], goal)? as f64;
    let moves = trace.nodes.len() - 1;
    let stop_at = trace.actions.len() - 1;
    for (t, &a) in trace.actions.iter().enumerate() {
        let mut r = 0.0;
        if t < stop_at && trace.is_move(a) && pos_idx < moves {
            pos_idx += 1;
            let d = world.geodesic(trace.nodes[pos_idx], goal)? as f64;
            r += dist - d;
            dist = d;
        }
        if t == stop_at && dist <= cfg.success_radius as f64 {
            r += 1.0;
        }
        rewards.push(r);
    }
    Ok(rewards)
}

/// Discounted returns `G_t = Σ_k γ^k r_{t+k}`.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        out[t] = acc;
    }
    out
}

/// Policy and critic losses from a trace whose values are already on the tape.
pub fn actor_critic_losses(
    tape: &mut Tape,
    critic: &Critic,
    trace: &FollowerTrace,
    rewards: &[f64],
    discount: f64,
) -> Result<(Var, Var, Vec<f64>, Vec<f64>)> {
    let returns = discounted_returns(rewards, discount);
    let mut policy = tape.constant_scalar(0.0);
    let mut critic_sum = tape.constant_scalar(0.0);
    let mut values = Vec::with_capacity(returns.len());
    for (t, &g) in returns.iter().enumerate() {
        let v = critic.value(tape, trace.hiddens[t])?;
        let vv = tape.scalar(v);
        values.push(vv);
        let adv = tape.constant_scalar(-(g - vv));
        let term = tape.mul(adv, trace.step_logps[t])?;
        policy = tape.add(policy, term)?;
        let err = tape.add_const(v, -g);
        let sq = tape.mul(err, err)?;
        critic_sum = tape.add(critic_sum, sq)?;
    }
    let critic_loss = tape.scale(critic_sum, 1.0 / returns.len() as f64);
    Ok((policy, critic_loss, returns, values))
}

/// Samples a rollout toward `goal` and returns the A2C losses.
pub fn rl_loss(
    tape: &mut Tape,
    follower: &Follower,
    critic: &Critic,
    env: &EnvView,
    instruction: &[Token],
    start: NodeId,
    goal: NodeId,
    rng: &mut Rng,
    cfg: RlConfig,
) -> Result<RlOutcome> {
    let trace = follower.run(tape, env, instruction, start, Drive::Sample(rng))?;
    let rewards = step_rewards(env, &trace, goal, cfg)?;
    let (policy_loss, critic_loss, returns, values) =
        actor_critic_losses(tape, critic, &trace, &rewards, cfg.discount)?;
    Ok(RlOutcome {
        trace,
        rewards,
        returns,
        values,
        policy_loss,
        critic_loss,
    })
}

/// `‖λ‖₂ + log(1 − d(V̄, X, A))`. The discriminator store is frozen on this
/// tape so no gradient reaches it.
pub fn creator_loss(
    tape: &mut Tape,
    discriminator: &Discriminator,
    cf: &Counterfactual,
    cf_env: &EnvView,
    instruction: &[Token],
    path: &Path,
) -> Result<Var> {
    tape.freeze(discriminator::TAG);
    let mut sq = tape.constant_scalar(0.0);
    for l in cf.lambdas() {
        let l2 = tape.mul(l, l)?;
        sq = tape.add(sq, l2)?;
    }
    let norm = tape.sqrt(sq);
    let d = discriminator.score(tape, cf_env, instruction, path)?;
    let one_minus = tape.neg(d);
    let one_minus = tape.add_const(one_minus, 1.0);
    let adv = tape.log(one_minus);
    tape.add(norm, adv)
}

/// `d(V̄, X, A) − d(V, X, A)`; `cf_env` should hold detached values.
pub fn discriminator_loss(
    tape: &mut Tape,
    discriminator: &Discriminator,
    real: &EnvView,
    cf_env: &EnvView,
    instruction: &[Token],
    path: &Path,
) -> Result<Var> {
    let fake = discriminator.score(tape, cf_env, instruction, path)?;
    let genuine = discriminator.score(tape, real, instruction, path)?;
    tape.sub(fake, genuine)
}

/// Weight on the imitation term: `β_i = max(β_min, β_0 γ^i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anneal {
    pub beta0: f64,
    pub gamma: f64,
    pub beta_min: f64,
}

impl Default for Anneal {
    fn default() -> Self {
        Anneal {
            beta0: 1.0,
            gamma: 0.995,
            beta_min: 0.2,
        }
    }
}

impl Anneal {
    pub fn beta(&self, iteration: u64) -> f64 {
        let i = iteration.min(i32::MAX as u64) as i32;
        (self.beta0 * self.gamma.powi(i)).max(self.beta_min)
    }

    /// `β L_IL + (1 − β) L_RL`.
    pub fn combine(&self, tape: &mut Tape, iteration: u64, il: Var, rl: Var) -> Result<Var> {
        let b = self.beta(iteration);
        let a = tape.scale(il, b);
        let c = tape.scale(rl, 1.0 - b);
        tape.add(a, c)
    }
}
