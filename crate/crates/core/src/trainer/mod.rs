//! Joint training of follower, speaker and creator.
//!
//! Each iteration samples a batch from the labeled set (and from the
//! unlabeled set when `Δ^{A'}` is on), copies the speaker, follower and
//! creator parameters into temporaries, and for every episode:
//!
//! 1. estimates the task losses and `Δ^A`, `Δ^X` in the real environment and
//!    steps the speaker and follower temporaries;
//! 2. creates `Ē`, estimates the creator loss and steps the creator
//!    temporary;
//! 3. estimates the task losses and cycle errors on `Ē` and steps the speaker
//!    and follower temporaries again.
//!
//! Unlabeled episodes only contribute `Δ^{A'}`. Gradients are always taken
//! at the parameters the batch started from. After the batch the
//! temporaries are committed, the discriminator takes one step on the
//! batch's (E, Ē) pairs, and the baselines absorb the batch's rewards.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod plot;
pub mod runlog;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng as _;

pub use checkpoint::Checkpoint;
pub use config::{DataConfig, Mode, Preset, Row, Terms, TrainConfig, UpdateScheme};
pub use runlog::{LogRow, MetricRow, RunLog};

use crate::agents::{
    creator, critic, discriminator, follower, speaker, CreatorConfig, CreatorMode, Drive, EnvView, FollowerConfig,
    FollowerKind, Models, SpeakerConfig,
};
use crate::cycle::{estimate_delta_a, estimate_delta_x, BaselineTracker};
use crate::error::{Error, Result};
use crate::objectives;
use crate::rng::{derive_seed, purpose, rng_from};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{sgd_step, GradMap, ParamStore};
use crate::world::{make_datasets, Datasets, Episode, NodeId, Path, Token, WorldSet};

/// Generated worlds and splits for a config.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub worlds: WorldSet,
    pub data: Datasets,
}

pub fn prepare_data(config: &TrainConfig) -> Result<Prepared> {
    let d = &config.data;
    let worlds = d.worlds(config.seed)?;
    let seed = d.seed.unwrap_or(config.seed);
    let data = make_datasets(
        &worlds,
        derive_seed(seed, &[purpose::PATH]),
        d.n_labeled,
        d.m_unlabeled,
        &d.split_spec(),
    )?;
    Ok(Prepared { worlds, data })
}

pub fn build_models(config: &TrainConfig) -> Models {
    let dims = config.dims();
    let mut f = match config.follower {
        FollowerKind::Panoramic => FollowerConfig::panoramic(dims),
        FollowerKind::LowLevel => FollowerConfig::low_level(dims),
    };
    f.attention = config.attention;
    let c = CreatorConfig {
        dims,
        mode: config.creator_mode,
    };
    Models::new(f, SpeakerConfig::new(dims), c, config.seed)
}

/// `k` distinct indices below `n` (all of them if `k >= n`), in sampled order.
pub fn sample_batch(seed: u64, iteration: u64, stream: u64, n: usize, k: usize) -> Vec<usize> {
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let mut rng = rng_from(seed, &[purpose::BATCH, iteration, stream]);
    index::sample(&mut rng, n, k.min(n)).into_vec()
}

/// One entry of the instrumented step-order trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    SampleBatch,
    CopyTemporaries,
    SampleInstruction(usize),
    SamplePath(usize),
    EstimateCycle(usize),
    UpdateSpeakerTemp(usize),
    UpdateFollowerTemp(usize),
    CreateCounterfactual(usize),
    EstimateCreatorLoss(usize),
    UpdateCreatorTemp(usize),
    CounterfactualTerms(usize),
    UnlabeledCycle(usize),
    Commit,
    UpdateDiscriminator,
    UpdateBaselines,
    Log,
}

/// Running sums for the log row of one iteration.
#[derive(Default)]
struct Stats {
    sums: BTreeMap<&'static str, (f64, usize)>,
}

impl Stats {
    fn add(&mut self, key: &'static str, v: f64) {
        let e = self.sums.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }

    fn write(&self, row: &mut LogRow) {
        for (k, (s, n)) in &self.sums {
            row.set(k, s / *n as f64);
        }
    }
}

/// Gradients waiting to be applied.
enum Pending {
    Temps(Box<Models>),
    Sums(BTreeMap<String, GradMap>),
}

pub struct Trainer {
    pub config: TrainConfig,
    pub models: Models,
    pub baselines: BaselineTracker,
    pub iteration: u64,
    /// Iteration at which the imitation/RL anneal starts.
    pub anneal_start: u64,
    pub log: RunLog,
    pub eval_rows: Vec<MetricRow>,
    /// Step-order trace, recorded when `Some`.
    pub trace: Option<Vec<Step>>,
    /// Worker threads for evaluation.
    pub threads: usize,
}

/// Episodes a trainer draws from.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub worlds: &'a WorldSet,
    pub labeled: &'a [Episode],
    pub unlabeled: &'a [Episode],
    /// Split evaluated every `eval_every` iterations.
    pub eval: Option<(&'a str, &'a [Episode])>,
}

fn store_mut<'m>(models: &'m mut Models, tag: &str) -> Option<&'m mut ParamStore> {
    models.stores_mut().into_iter().find(|s| s.tag() == tag)
}

fn instruction_of(ep: &Episode) -> Result<&[Token]> {
    ep.instruction
        .as_deref()
        .ok_or_else(|| Error::Dataset("labeled episode without instruction".into()))
}

impl Trainer {
    pub fn new(config: TrainConfig, models: Models) -> Self {
        let baselines = BaselineTracker::new(config.baseline_momentum);
        Trainer {
            config,
            models,
            baselines,
            iteration: 0,
            anneal_start: 0,
            log: RunLog::default(),
            eval_rows: Vec::new(),
            trace: None,
            threads: 1,
        }
    }

    fn record(&mut self, s: Step) {
        if let Some(t) = &mut self.trace {
            t.push(s);
        }
    }

    fn check_finite(&self, tape: &Tape, v: Var, episode: usize, what: &str) -> Result<f64> {
        let x = tape.scalar(v);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::TrainingDiverged {
                iteration: self.iteration,
                episode,
                what: what.to_string(),
            })
        }
    }

    fn apply(&self, pending: &mut Pending, grads: &Gradients, tags: &[&str]) -> Result<()> {
        match pending {
            Pending::Temps(temps) => {
                for &tag in tags {
                    if let (Some(g), Some(store)) = (grads.store_ref(tag), store_mut(temps, tag)) {
                        sgd_step(store, g, self.config.lr, self.config.clip_norm)?;
                    }
                }
            }
            Pending::Sums(sums) => {
                for &tag in tags {
                    let Some(g) = grads.store_ref(tag) else { continue };
                    let acc = sums.entry(tag.to_string()).or_default();
                    for (name, t) in g {
                        match acc.get_mut(name) {
                            Some(a) => {
                                for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                                    *x += y;
                                }
                            }
                            None => {
                                acc.insert(name.clone(), t.clone());
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Imitation (and optionally actor-critic) plus speaker likelihood on
    /// one environment, added to `total`.
    #[allow(clippy::too_many_arguments)]
    fn task_losses(
        &self,
        tape: &mut Tape,
        env: &EnvView,
        instruction: &[Token],
        path: &Path,
        weight: f64,
        rl_seed: (u64, usize, u64),
        stats: &mut Stats,
        prefix_cf: bool,
        total: &mut Var,
        episode: usize,
    ) -> Result<()> {
        let t = self.config.terms;
        let m = &self.models;
        if t.il || t.rl {
            let il = objectives::il_loss(tape, &m.follower, env, instruction, path)?;
            let il_v = self.check_finite(tape, il, episode, "il loss")?;
            let follower_loss = if t.rl {
                let (iter, ep, variant) = rl_seed;
                let mut rng = rng_from(self.config.seed, &[purpose::RL, iter, ep as u64, variant]);
                let out = objectives::rl_loss(
                    tape,
                    &m.follower,
                    &m.critic,
                    env,
                    instruction,
                    path.start(),
                    path.goal(),
                    &mut rng,
                    self.config.rl,
                )?;
                let rl_v = self.check_finite(tape, out.policy_loss, episode, "rl loss")?;
                let c_v = self.check_finite(tape, out.critic_loss, episode, "critic loss")?;
                if !prefix_cf {
                    stats.add("rl", rl_v);
                    stats.add("critic", c_v);
                }
                let il_part = if t.il { il } else { tape.constant_scalar(0.0) };
                let combined =
                    self.config
                        .anneal
                        .combine(tape, self.iteration - self.anneal_start, il_part, out.policy_loss)?;
                tape.add(combined, out.critic_loss)?
            } else {
                il
            };
            if !prefix_cf {
                stats.add("il", il_v);
            }
            let w = tape.scale(follower_loss, weight);
            *total = tape.add(*total, w)?;
        }
        if t.speaker_mle {
            let s = objectives::speaker_mle_loss(tape, &m.speaker, env, path, instruction)?;
            let v = self.check_finite(tape, s, episode, "speaker loss")?;
            if !prefix_cf {
                stats.add("speaker_mle", v);
            }
            let w = tape.scale(s, weight);
            *total = tape.add(*total, w)?;
        }
        Ok(())
    }

    /// Adds the mean of `samples` estimates of `Δ^A` (and/or `Δ^X`).
    #[allow(clippy::too_many_arguments)]
    fn cycle_terms(
        &mut self,
        tape: &mut Tape,
        env: &EnvView,
        instruction: Option<&[Token]>,
        path: &Path,
        do_a: bool,
        do_x: bool,
        key: (u64, u64, u64),
        rewards: &mut (Vec<f64>, Vec<f64>),
        total: &mut Var,
        episode: usize,
        trace_ep: Option<usize>,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let (b_f, b_s) = self.baselines.read();
        let k = self.config.samples;
        let w = self.config.cycle_weight / k as f64;
        let (iter, ep, variant) = key;
        let mut out = (None, None);
        if do_a {
            if let Some(e) = trace_ep {
                self.record(Step::SampleInstruction(e));
            }
            let mut rng = rng_from(self.config.seed, &[purpose::SAMPLE_X, iter, ep, variant]);
            let mut sum = 0.0;
            for _ in 0..k {
                let est = estimate_delta_a(tape, &self.models.speaker, &self.models.follower, env, path, b_f, &mut rng)?;
                sum += self.check_finite(tape, est.point_loss, episode, "delta_a")?;
                rewards.0.push(est.reward);
                let l = tape.scale(est.loss, w);
                *total = tape.add(*total, l)?;
            }
            out.0 = Some(sum / k as f64);
        }
        if do_x {
            let instruction = instruction.ok_or_else(|| Error::Dataset("delta_x needs an instruction".into()))?;
            if let Some(e) = trace_ep {
                self.record(Step::SamplePath(e));
            }
            let mut rng = rng_from(self.config.seed, &[purpose::SAMPLE_A, iter, ep, variant]);
            let mut sum = 0.0;
            for _ in 0..k {
                let est = estimate_delta_x(
                    tape,
                    &self.models.speaker,
                    &self.models.follower,
                    env,
                    instruction,
                    path.start(),
                    b_s,
                    &mut rng,
                )?;
                sum += self.check_finite(tape, est.point_loss, episode, "delta_x")?;
                rewards.1.push(est.reward);
                let l = tape.scale(est.loss, w);
                *total = tape.add(*total, l)?;
            }
            out.1 = Some(sum / k as f64);
        }
        Ok(out)
    }

    /// One training iteration.
    pub fn step(&mut self, data: TrainData) -> Result<()> {
        if data.labeled.is_empty() {
            return Err(Error::Empty("labeled set"));
        }
        let cfg = self.config.clone();
        let iter = self.iteration;
        let terms = if iter < cfg.cycle_start { cfg.terms.task_only() } else { cfg.terms };
        let batch = sample_batch(cfg.seed, iter, 0, data.labeled.len(), cfg.batch_size);
        let ubatch = if terms.delta_a_unlabeled {
            sample_batch(cfg.seed, iter, 1, data.unlabeled.len(), cfg.unlabeled_batch)
        } else {
            Vec::new()
        };
        self.record(Step::SampleBatch);
        let mut pending = match cfg.update {
            UpdateScheme::Literal => Pending::Temps(Box::new(self.models.clone())),
            UpdateScheme::BatchMean => Pending::Sums(BTreeMap::new()),
        };
        self.record(Step::CopyTemporaries);

        // Reference worlds: any training world other than the episode's.
        let mut train_worlds: Vec<usize> = data.labeled.iter().map(|e| e.world_id).collect();
        train_worlds.sort_unstable();
        train_worlds.dedup();

        let mut stats = Stats::default();
        let mut rewards = (Vec::new(), Vec::new());
        let mut disc_pairs: Vec<(usize, BTreeMap<NodeId, [Vec<f64>; 4]>)> = Vec::new();
        let sf_tags = [speaker::TAG, follower::TAG, critic::TAG];

        for (bi, &ei) in batch.iter().enumerate() {
            let ep = &data.labeled[ei];
            let world = data.worlds.get(ep.world_id)?;
            let instruction = instruction_of(ep)?;
            let env = EnvView::real(world);
            let key = (iter, bi as u64, 0);

            let mut tape = Tape::new();
            tape.freeze(discriminator::TAG);
            let mut total = tape.constant_scalar(0.0);
            self.task_losses(
                &mut tape,
                &env,
                instruction,
                &ep.path,
                1.0,
                (iter, bi, 0),
                &mut stats,
                false,
                &mut total,
                ei,
            )?;
            if terms.delta_a || terms.delta_x {
                let (da, dx) = self.cycle_terms(
                    &mut tape,
                    &env,
                    Some(instruction),
                    &ep.path,
                    terms.delta_a,
                    terms.delta_x,
                    key,
                    &mut rewards,
                    &mut total,
                    ei,
                    Some(bi),
                )?;
                if let Some(v) = da {
                    stats.add("delta_a", v);
                }
                if let Some(v) = dx {
                    stats.add("delta_x", v);
                }
                self.record(Step::EstimateCycle(bi));
            }
            self.check_finite(&tape, total, ei, "episode loss")?;
            let grads = tape.backward(total)?;
            self.apply(&mut pending, &grads, &[speaker::TAG])?;
            self.record(Step::UpdateSpeakerTemp(bi));
            self.apply(&mut pending, &grads, &[follower::TAG, critic::TAG])?;
            self.record(Step::UpdateFollowerTemp(bi));

            if !terms.needs_counterfactual() {
                continue;
            }
            let mut rng = rng_from(cfg.seed, &[purpose::REFERENCE, iter, bi as u64]);
            let others: Vec<usize> = train_worlds.iter().copied().filter(|&w| w != ep.world_id).collect();
            let ref_id = if others.is_empty() {
                ep.world_id
            } else {
                others[rng.gen_range(0..others.len())]
            };
            let reference = data.worlds.get(ref_id)?;
            let mut tape = Tape::new();
            tape.freeze(discriminator::TAG);
            let cf = self.models.creator.make_env(
                &mut tape,
                world,
                instruction,
                &ep.path,
                reference,
                derive_seed(cfg.seed, &[purpose::REFERENCE, iter, bi as u64, 1]),
            )?;
            self.record(Step::CreateCounterfactual(bi));
            let cf_values = cf.values(&tape);
            if terms.creator && matches!(self.models.creator.config.mode, CreatorMode::Reference) {
                let cf_view = cf.view(world);
                let lc = objectives::creator_loss(
                    &mut tape,
                    &self.models.discriminator,
                    &cf,
                    &cf_view,
                    instruction,
                    &ep.path,
                )?;
                let v = self.check_finite(&tape, lc, ei, "creator loss")?;
                stats.add("creator", v);
                self.record(Step::EstimateCreatorLoss(bi));
                let grads = tape.backward(lc)?;
                self.apply(&mut pending, &grads, &[creator::TAG])?;
                self.record(Step::UpdateCreatorTemp(bi));
            }
            if terms.discriminator {
                disc_pairs.push((bi, cf_values.clone()));
            }

            if terms.cf_task || terms.delta_a_cf || terms.delta_x_cf {
                let cf_env = EnvView::with_values(world, cf_values);
                let mut tape = Tape::new();
                tape.freeze(discriminator::TAG);
                let mut total = tape.constant_scalar(0.0);
                if terms.cf_task {
                    self.task_losses(
                        &mut tape,
                        &cf_env,
                        instruction,
                        &ep.path,
                        cfg.cf_task_weight,
                        (iter, bi, 1),
                        &mut stats,
                        true,
                        &mut total,
                        ei,
                    )?;
                }
                if terms.delta_a_cf || terms.delta_x_cf {
                    let (da, dx) = self.cycle_terms(
                        &mut tape,
                        &cf_env,
                        Some(instruction),
                        &ep.path,
                        terms.delta_a_cf,
                        terms.delta_x_cf,
                        (iter, bi as u64, 1),
                        &mut rewards,
                        &mut total,
                        ei,
                        None,
                    )?;
                    if let Some(v) = da {
                        stats.add("delta_a_cf", v);
                    }
                    if let Some(v) = dx {
                        stats.add("delta_x_cf", v);
                    }
                }
                self.check_finite(&tape, total, ei, "counterfactual loss")?;
                let grads = tape.backward(total)?;
                self.apply(&mut pending, &grads, &sf_tags)?;
                self.record(Step::CounterfactualTerms(bi));
            }
        }

        for (ui, &ei) in ubatch.iter().enumerate() {
            let ep = &data.unlabeled[ei];
            let world = data.worlds.get(ep.world_id)?;
            let env = EnvView::real(world);
            let mut tape = Tape::new();
            let mut total = tape.constant_scalar(0.0);
            let (da, _) = self.cycle_terms(
                &mut tape,
                &env,
                None,
                &ep.path,
                true,
                false,
                (iter, (batch.len() + ui) as u64, 2),
                &mut rewards,
                &mut total,
                ei,
                None,
            )?;
            if let Some(v) = da {
                stats.add("delta_a_u", v);
            }
            let grads = tape.backward(total)?;
            self.apply(&mut pending, &grads, &[speaker::TAG, follower::TAG])?;
            self.record(Step::UnlabeledCycle(ui));
        }

        match pending {
            // The discriminator is never stepped inside the batch, so its
            // temporary is still the committed value.
            Pending::Temps(temps) => self.models = *temps,
            Pending::Sums(sums) => {
                let n = (batch.len() + ubatch.len()).max(1) as f64;
                for (tag, mut g) in sums {
                    for t in g.values_mut() {
                        t.data_mut().iter_mut().for_each(|x| *x /= n);
                    }
                    if let Some(store) = store_mut(&mut self.models, &tag) {
                        sgd_step(store, &g, cfg.lr, cfg.clip_norm)?;
                    }
                }
            }
        }
        self.record(Step::Commit);

        if terms.discriminator && !disc_pairs.is_empty() {
            let mut tape = Tape::new();
            let mut total = tape.constant_scalar(0.0);
            for (bi, values) in &disc_pairs {
                let ep = &data.labeled[batch[*bi]];
                let world = data.worlds.get(ep.world_id)?;
                let real = EnvView::real(world);
                let fake = EnvView::with_values(world, values.clone());
                let l = objectives::discriminator_loss(
                    &mut tape,
                    &self.models.discriminator,
                    &real,
                    &fake,
                    instruction_of(ep)?,
                    &ep.path,
                )?;
                total = tape.add(total, l)?;
            }
            let mean = tape.scale(total, 1.0 / disc_pairs.len() as f64);
            let v = self.check_finite(&tape, mean, batch[disc_pairs[0].0], "discriminator loss")?;
            stats.add("discriminator", v);
            let grads = tape.backward(mean)?;
            if let Some(g) = grads.store_ref(discriminator::TAG) {
                sgd_step(&mut self.models.discriminator.store, g, cfg.lr, cfg.clip_norm)?;
            }
            self.record(Step::UpdateDiscriminator);
        }

        for &r in &rewards.0 {
            self.baselines.observe_f(r);
        }
        for &r in &rewards.1 {
            self.baselines.observe_s(r);
        }
        self.record(Step::UpdateBaselines);

        let mut row = LogRow::new(iter);
        stats.write(&mut row);
        row.set("beta", cfg.anneal.beta(iter - self.anneal_start));
        if let Some(b) = self.baselines.b_f {
            row.set("b_f", b);
        }
        if let Some(b) = self.baselines.b_s {
            row.set("b_s", b);
        }
        self.iteration += 1;
        if cfg.eval_every > 0 && self.iteration.is_multiple_of(cfg.eval_every) {
            if let Some((split, episodes)) = data.eval {
                let m = self.evaluate(data.worlds, split, episodes)?;
                row.set("eval_sr", m.nav.sr);
                row.set("eval_bleu4", m.text.bleu4);
                self.eval_rows.push(m);
            }
        }
        self.log.push(row);
        self.record(Step::Log);
        Ok(())
    }

    /// Runs until `self.iteration == until`.
    pub fn run(&mut self, data: TrainData, until: u64) -> Result<()> {
        while self.iteration < until {
            self.step(data)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, worlds: &WorldSet, split: &str, episodes: &[Episode]) -> Result<MetricRow> {
        let limit = if self.config.eval_limit == 0 {
            episodes.len()
        } else {
            self.config.eval_limit.min(episodes.len())
        };
        let (nav, text) = eval::evaluate(
            &self.models.follower,
            &self.models.speaker,
            worlds,
            &episodes[..limit],
            self.config.rl.success_radius,
            self.threads,
        )?;
        Ok(MetricRow {
            label: self.config.mode.name(),
            split: split.to_string(),
            iteration: self.iteration,
            nav,
            text,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.seed);
        for s in self.models.stores() {
            ck.add_store(s);
        }
        ck.meta.insert("iteration".into(), self.iteration as f64);
        ck.meta.insert("anneal_start".into(), self.anneal_start as f64);
        ck.meta.insert("baseline_momentum".into(), self.baselines.momentum);
        if let Some(b) = self.baselines.b_f {
            ck.meta.insert("b_f".into(), b);
        }
        if let Some(b) = self.baselines.b_s {
            ck.meta.insert("b_s".into(), b);
        }
        ck
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::checkpoint`].
    /// The run log starts empty.
    pub fn from_checkpoint(config: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        if ck.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} does not match config seed {}",
                ck.seed, config.seed
            )));
        }
        let mut models = build_models(&config);
        for s in models.stores_mut() {
            ck.load_store(s)?;
        }
        let mut t = Trainer::new(config, models);
        t.iteration = ck.meta("iteration")? as u64;
        t.anneal_start = ck.meta("anneal_start")? as u64;
        t.baselines.momentum = ck.meta("baseline_momentum")?;
        t.baselines.b_f = ck.meta.get("b_f").copied();
        t.baselines.b_s = ck.meta.get("b_s").copied();
        Ok(t)
    }
}

/// Greedy speaker labels for unlabeled paths.
pub fn pseudo_label(models: &Models, worlds: &WorldSet, unlabeled: &[Episode]) -> Result<Vec<Episode>> {
    unlabeled
        .iter()
        .map(|ep| {
            let world = worlds.get(ep.world_id)?;
            let env = EnvView::real(world);
            let mut tape = Tape::new();
            let spoken = models.speaker.run(&mut tape, &env, &ep.path, Drive::Greedy)?;
            Ok(Episode {
                world_id: ep.world_id,
                path: ep.path.clone(),
                instruction: Some(spoken.tokens),
            })
        })
        .collect()
}

/// Back-translation: (1) speaker likelihood on D for
/// `bt_speaker_iterations`; (2) greedy pseudo-instructions for U;
/// (3) follower imitation (plus actor-critic under `rcm`) on D and the
/// pseudo-labeled U for `iterations`.
pub fn bt_train(config: &TrainConfig, data: TrainData) -> Result<(Trainer, Vec<Episode>)> {
    let mut phase1 = config.clone();
    phase1.terms = Terms::none();
    phase1.terms.speaker_mle = true;
    let mut t = Trainer::new(phase1, build_models(config));
    t.run(data, config.bt_speaker_iterations)?;

    let pseudo = pseudo_label(&t.models, data.worlds, data.unlabeled)?;
    let mut union: Vec<Episode> = data.labeled.to_vec();
    union.extend(pseudo.iter().cloned());

    let mut phase3 = config.clone();
    phase3.terms = Terms::none();
    phase3.terms.il = true;
    phase3.terms.rl = config.terms.rl;
    t.config = phase3;
    t.anneal_start = t.iteration;
    let until = t.iteration + config.iterations;
    t.run(
        TrainData {
            labeled: &union,
            ..data
        },
        until,
    )?;
    t.config = config.clone();
    Ok((t, pseudo))
}

/// Trains according to `config.mode` on freshly prepared data.
pub fn train(config: &TrainConfig, prepared: &Prepared) -> Result<Trainer> {
    let data = TrainData {
        worlds: &prepared.worlds,
        labeled: &prepared.data.labeled,
        unlabeled: &prepared.data.unlabeled,
        eval: Some(("val_unseen", &prepared.data.val_unseen)),
    };
    match config.mode {
        Mode::Bt => Ok(bt_train(config, data)?.0),
        _ => {
            let mut t = Trainer::new(config.clone(), build_models(config));
            t.run(data, config.iterations)?;
            Ok(t)
        }
    }
}
