//! The property suite run by `ccc oracle-check` and by the acceptance tests.
//!
//! Every check builds its own seeded fixtures, so each can run alone.

use rand::Rng as _;

use super::*;
use crate::agents::{Creator, CreatorConfig, Critic, Dims, Discriminator, FollowerConfig, SpeakerConfig};
use crate::cycle::{estimate_delta_a, estimate_delta_x, BaselineTracker};
use crate::metrics::{nav_metrics, NavResult};
use crate::objectives;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;
use crate::world::{vocab, World, FEATURE_DIM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub normalization_draws: usize,
    pub jensen_draws: usize,
    pub estimator_samples: usize,
    /// Fraction of coordinates that must land within 3 standard errors.
    pub estimator_coverage: f64,
    pub variance_samples: usize,
    pub variance_coverage: f64,
}

impl SuiteConfig {
    /// The sizes the acceptance tests use.
    pub fn full(seed: u64) -> Self {
        SuiteConfig {
            seed,
            fd_step: 1e-3,
            fd_tolerance: 1e-4,
            normalization_draws: 50,
            jensen_draws: 200,
            estimator_samples: 50_000,
            estimator_coverage: 0.99,
            variance_samples: 10_000,
            variance_coverage: 0.9,
        }
    }

    /// Smaller sample counts for an interactive check.
    pub fn quick(seed: u64) -> Self {
        SuiteConfig {
            normalization_draws: 10,
            jensen_draws: 40,
            estimator_samples: 10_000,
            variance_samples: 2_000,
            ..Self::full(seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

pub fn run(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let mut out = gradient_checks(cfg)?;
    out.push(speaker_normalization(cfg)?);
    out.push(follower_normalization(cfg, FollowerKind::Panoramic)?);
    out.push(follower_normalization(cfg, FollowerKind::LowLevel)?);
    out.push(jensen_bound(cfg)?);
    out.push(estimator_unbiased_a(cfg)?);
    out.push(estimator_unbiased_x(cfg)?);
    out.push(score_identity(cfg)?);
    out.push(baseline_variance(cfg)?);
    out.push(creator_algebra(cfg)?);
    out.push(metric_ordering(cfg)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fixtures

/// Dimensions small enough to enumerate: vocabulary of 6 and width 4.
pub fn tiny_dims() -> Dims {
    Dims {
        hidden: 4,
        embed: 3,
        vocab: 6,
    }
}

/// Speaker and panoramic follower over a 2x2 open world, with at most 3
/// generated tokens and 3 follower steps.
#[derive(Clone, Debug)]
pub struct TinyFixture {
    pub world: World,
    pub path: Path,
    pub instruction: Vec<Token>,
    pub speaker: Speaker,
    pub follower: Follower,
}

pub fn tiny_fixture(seed: u64, kind: FollowerKind) -> Result<TinyFixture> {
    let dims = tiny_dims();
    let world = World::generate(derive_seed(seed, &[0]), 2, 2, 0.0)?;
    let mut rng = rng_from(seed, &[1]);
    let start = rng.gen_range(0..world.num_nodes());
    let (d, _) = world
        .neighbors(start)
        .next()
        .ok_or_else(|| Error::Dataset("isolated node".into()))?;
    let path = match kind {
        // Low-level paths must fit three actions from the initial heading.
        FollowerKind::LowLevel => Path::from_nodes(&world, vec![start])?,
        FollowerKind::Panoramic => Path::from_moves(&world, start, &[d])?,
    };
    let words = rng.gen_range(0..=2);
    let mut instruction = vec![vocab::BOS];
    for _ in 0..words {
        instruction.push(rng.gen_range(2..dims.vocab));
    }
    instruction.push(vocab::EOS);
    let speaker = Speaker::new(
        SpeakerConfig { dims, max_len: 3 },
        &mut rng_from(seed, &[2]),
    );
    let fcfg = match kind {
        FollowerKind::Panoramic => FollowerConfig::panoramic(dims),
        FollowerKind::LowLevel => FollowerConfig::low_level(dims),
    };
    let follower = Follower::new(
        FollowerConfig { max_steps: 3, ..fcfg },
        &mut rng_from(seed, &[3]),
    );
    Ok(TinyFixture {
        world,
        path,
        instruction,
        speaker,
        follower,
    })
}

/// Full-vocabulary models on a random 4x4 world with a 2–4 edge path.
pub struct GradFixture {
    pub world: World,
    pub reference: World,
    pub path: Path,
    pub instruction: Vec<Token>,
    pub models: crate::agents::Models,
    pub low_level: Follower,
}

pub fn grad_fixture(seed: u64) -> Result<GradFixture> {
    let dims = Dims {
        hidden: 5,
        embed: 4,
        vocab: vocab::SIZE,
    };
    let world = World::generate(derive_seed(seed, &[10]), 4, 4, 0.1)?;
    let reference = World::generate(derive_seed(seed, &[11]), 3, 3, 0.1)?.with_id(1);
    let path = world.sample_path(derive_seed(seed, &[12]), 2, 4)?;
    let instruction = world.oracle_instruction(&path)?;
    let models = crate::agents::Models::new(
        FollowerConfig::panoramic(dims),
        SpeakerConfig::new(dims),
        CreatorConfig::new(dims),
        derive_seed(seed, &[13]),
    );
    let low_level = Follower::new(FollowerConfig::low_level(dims), &mut rng_from(seed, &[14]));
    Ok(GradFixture {
        world,
        reference,
        path,
        instruction,
        models,
        low_level,
    })
}

// ---------------------------------------------------------------------------
// Gradients

/// Finite-difference checks of one loss per model.
pub fn gradient_checks(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let fx = grad_fixture(cfg.seed)?;
    let env = EnvView::real(&fx.world);
    let (h, tol) = (cfg.fd_step, cfg.fd_tolerance);
    let mut out = Vec::new();
    let mut report = |name: &str, r: GradCheck| {
        out.push(Check::new(
            name,
            r.max_rel_error <= tol,
            format!(
                "{} coordinates, max relative error {:.2e} at {} (tape {:.6e}, numeric {:.6e})",
                r.coordinates, r.max_rel_error, r.worst, r.worst_values.0, r.worst_values.1
            ),
        ));
    };

    let f = &fx.models.follower;
    let mut stores = [f.store.clone()];
    report(
        "gradient: follower (panoramic)",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Follower {
                store: s[0].clone(),
                ..f.clone()
            };
            objectives::il_loss(tape, &m, &env, &fx.instruction, &fx.path)
        })?,
    );

    let f = &fx.low_level;
    let mut stores = [f.store.clone()];
    report(
        "gradient: follower (low-level)",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Follower {
                store: s[0].clone(),
                ..f.clone()
            };
            objectives::il_loss(tape, &m, &env, &fx.instruction, &fx.path)
        })?,
    );

    let sp = &fx.models.speaker;
    let mut stores = [sp.store.clone()];
    report(
        "gradient: speaker",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Speaker {
                store: s[0].clone(),
                ..sp.clone()
            };
            objectives::speaker_mle_loss(tape, &m, &env, &fx.path, &fx.instruction)
        })?,
    );

    let cr = &fx.models.creator;
    let disc = &fx.models.discriminator;
    let mut stores = [cr.store.clone()];
    report(
        "gradient: creator",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Creator {
                store: s[0].clone(),
                ..cr.clone()
            };
            let cf = m.make_env(tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, cfg.seed)?;
            let view = cf.view(&fx.world);
            objectives::creator_loss(tape, disc, &cf, &view, &fx.instruction, &fx.path)
        })?,
    );

    let fake = {
        let mut tape = Tape::new();
        let cf = cr.make_env(&mut tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, cfg.seed)?;
        cf.values(&tape)
    };
    let mut stores = [disc.store.clone()];
    report(
        "gradient: discriminator",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Discriminator {
                store: s[0].clone(),
                ..disc.clone()
            };
            let fake_env = EnvView::with_values(&fx.world, fake.clone());
            objectives::discriminator_loss(tape, &m, &env, &fake_env, &fx.instruction, &fx.path)
        })?,
    );

    let critic = &fx.models.critic;
    let fl = &fx.models.follower;
    let mut stores = [critic.store.clone()];
    report(
        "gradient: critic",
        finite_difference_check(&mut stores, h, |s, tape| {
            let m = Critic { store: s[0].clone() };
            let actions = fl.actions_for_path(&fx.path);
            let trace = fl.run(tape, &env, &fx.instruction, fx.path.start(), Drive::Teacher(&actions))?;
            let rewards =
                objectives::step_rewards(&env, &trace, fx.path.goal(), objectives::RlConfig::default())?;
            let (_, critic_loss, _, _) = objectives::actor_critic_losses(tape, &m, &trace, &rewards, 0.95)?;
            Ok(critic_loss)
        })?,
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Normalization and Jensen

pub fn speaker_normalization(cfg: &SuiteConfig) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in 0..cfg.normalization_draws {
        let fx = tiny_fixture(derive_seed(cfg.seed, &[20, i as u64]), FollowerKind::Panoramic)?;
        let env = EnvView::real(&fx.world);
        let space = instruction_space(fx.speaker.config.dims.vocab, fx.speaker.config.max_len)?;
        count = space.len();
        let mut total = 0.0;
        for x in &space {
            let mut tape = Tape::new();
            let t = fx.speaker.logprob(&mut tape, &env, &fx.path, x)?;
            total += tape.scalar(t.logprob).exp();
        }
        worst = worst.max((total - 1.0).abs());
    }
    Ok(Check::new(
        "normalization: speaker",
        worst <= 1e-9,
        format!("{count} sequences, max |sum - 1| = {worst:.2e}"),
    ))
}

pub fn follower_normalization(cfg: &SuiteConfig, kind: FollowerKind) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in 0..cfg.normalization_draws {
        let fx = tiny_fixture(derive_seed(cfg.seed, &[21, i as u64]), kind)?;
        let env = EnvView::real(&fx.world);
        let space = action_space(&fx.follower, &env, fx.path.start())?;
        count = space.len();
        let mut total = 0.0;
        for a in &space {
            let mut tape = Tape::new();
            let t = fx
                .follower
                .run(&mut tape, &env, &fx.instruction, fx.path.start(), Drive::Teacher(a))?;
            total += tape.scalar(t.logprob).exp();
        }
        worst = worst.max((total - 1.0).abs());
    }
    let name = match kind {
        FollowerKind::Panoramic => "normalization: follower (panoramic)",
        FollowerKind::LowLevel => "normalization: follower (low-level)",
    };
    Ok(Check::new(
        name,
        worst <= 1e-9,
        format!("{count} action sequences, max |sum - 1| = {worst:.2e}"),
    ))
}

pub fn jensen_bound(cfg: &SuiteConfig) -> Result<Check> {
    let mut worst = f64::INFINITY;
    for i in 0..cfg.jensen_draws {
        let fx = tiny_fixture(derive_seed(cfg.seed, &[22, i as u64]), FollowerKind::Panoramic)?;
        let env = EnvView::real(&fx.world);
        let a = exact_delta_a(&fx.speaker, &fx.follower, &env, &fx.path)?;
        let x = exact_delta_x(&fx.speaker, &fx.follower, &env, &fx.instruction, fx.path.start())?;
        worst = worst.min(a.delta_bar - a.delta).min(x.delta_bar - x.delta);
    }
    Ok(Check::new(
        "jensen bound: delta_bar >= delta",
        worst >= -1e-9,
        format!("{} configurations x 2, min (delta_bar - delta) = {worst:.3e}", cfg.jensen_draws),
    ))
}

// ---------------------------------------------------------------------------
// Estimator

/// Gradients of the stores in `order`, flattened in store-name order.
fn flatten(grads: &Gradients, stores: &[&ParamStore]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in stores {
        for (name, t) in s.iter() {
            match grads.get(s.tag(), name) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.resize(out.len() + t.len(), 0.0),
            }
        }
    }
    out
}

/// Per-coordinate running sums.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
        }
    }

    fn push(&mut self, g: &[f64]) {
        self.n += 1;
        for (i, &v) in g.iter().enumerate() {
            self.sum[i] += v;
            self.sq[i] += v * v;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    fn variance(&self, i: usize) -> f64 {
        let n = self.n as f64;
        let m = self.mean(i);
        ((self.sq[i] - n * m * m) / (n - 1.0)).max(0.0)
    }

    /// Fraction of coordinates whose mean is within 3 standard errors of
    /// `exact`.
    fn coverage(&self, exact: &[f64]) -> (f64, usize) {
        let n = self.n as f64;
        let mut ok = 0;
        for (i, &e) in exact.iter().enumerate() {
            let se = (self.variance(i) / n).sqrt();
            if (self.mean(i) - e).abs() <= 3.0 * se + 1e-12 {
                ok += 1;
            }
        }
        (ok as f64 / exact.len() as f64, exact.len())
    }
}

pub fn estimator_unbiased_a(cfg: &SuiteConfig) -> Result<Check> {
    let fx = tiny_fixture(derive_seed(cfg.seed, &[23]), FollowerKind::Panoramic)?;
    let env = EnvView::real(&fx.world);
    let stores = [&fx.speaker.store, &fx.follower.store];
    let (value, exact) = exact_grad_delta_bar_a(&fx.speaker, &fx.follower, &env, &fx.path)?;
    let exact = flatten(&exact, &stores);
    let baseline = -value;
    let mut rng = rng_from(cfg.seed, &[24]);
    let mut m = Moments::new(exact.len());
    for _ in 0..cfg.estimator_samples {
        let mut tape = Tape::new();
        let est = estimate_delta_a(&mut tape, &fx.speaker, &fx.follower, &env, &fx.path, baseline, &mut rng)?;
        m.push(&flatten(&tape.backward(est.loss)?, &stores));
    }
    let (frac, n) = m.coverage(&exact);
    Ok(Check::new(
        "estimator: delta_a gradient unbiased",
        frac >= cfg.estimator_coverage,
        format!(
            "{} samples, {:.2}% of {n} coordinates within 3 SE",
            cfg.estimator_samples,
            100.0 * frac
        ),
    ))
}

pub fn estimator_unbiased_x(cfg: &SuiteConfig) -> Result<Check> {
    let fx = tiny_fixture(derive_seed(cfg.seed, &[25]), FollowerKind::Panoramic)?;
    let env = EnvView::real(&fx.world);
    let stores = [&fx.speaker.store, &fx.follower.store];
    let start = fx.path.start();
    let (value, exact) = exact_grad_delta_bar_x(&fx.speaker, &fx.follower, &env, &fx.instruction, start)?;
    let exact = flatten(&exact, &stores);
    let baseline = -value;
    let mut rng = rng_from(cfg.seed, &[26]);
    let mut m = Moments::new(exact.len());
    for _ in 0..cfg.estimator_samples {
        let mut tape = Tape::new();
        let est = estimate_delta_x(
            &mut tape,
            &fx.speaker,
            &fx.follower,
            &env,
            &fx.instruction,
            start,
            baseline,
            &mut rng,
        )?;
        m.push(&flatten(&tape.backward(est.loss)?, &stores));
    }
    let (frac, n) = m.coverage(&exact);
    Ok(Check::new(
        "estimator: delta_x gradient unbiased",
        frac >= cfg.estimator_coverage,
        format!(
            "{} samples, {:.2}% of {n} coordinates within 3 SE",
            cfg.estimator_samples,
            100.0 * frac
        ),
    ))
}

pub fn score_identity(cfg: &SuiteConfig) -> Result<Check> {
    let mut worst = 0.0f64;
    for i in 0..cfg.normalization_draws {
        let fx = tiny_fixture(derive_seed(cfg.seed, &[27, i as u64]), FollowerKind::Panoramic)?;
        let env = EnvView::real(&fx.world);
        worst = worst
            .max(speaker_score_identity(&fx.speaker, &env, &fx.path)?)
            .max(follower_score_identity(&fx.follower, &env, &fx.instruction, fx.path.start())?);
    }
    Ok(Check::new(
        "score identity: sum P grad log P = 0",
        worst <= 1e-9,
        format!("max |sum| = {worst:.2e}"),
    ))
}

/// Speaker-side gradient variance of the `Δ^A` estimator with the running
/// baseline against no baseline, on the same samples.
pub fn baseline_variance(cfg: &SuiteConfig) -> Result<Check> {
    let fx = tiny_fixture(derive_seed(cfg.seed, &[28]), FollowerKind::Panoramic)?;
    let env = EnvView::real(&fx.world);
    let stores = [&fx.speaker.store];
    let dim = fx.speaker.store.num_scalars();
    let mut with = Moments::new(dim);
    let mut without = Moments::new(dim);
    let mut tracker = BaselineTracker::default();
    let mut rng = rng_from(cfg.seed, &[29]);
    for _ in 0..cfg.variance_samples {
        let b = tracker.read().0;
        let mut tape = Tape::new();
        let spoken = fx.speaker.run(&mut tape, &env, &fx.path, Drive::Sample(&mut rng))?;
        let back = fx.follower.logprob(&mut tape, &env, &spoken.tokens, &fx.path)?;
        let r = tape.scalar(back.logprob).max(crate::cycle::REWARD_FLOOR);
        let score = flatten(&tape.backward(spoken.logprob)?, &stores);
        with.push(&score.iter().map(|s| -(r - b) * s).collect::<Vec<_>>());
        without.push(&score.iter().map(|s| -r * s).collect::<Vec<_>>());
        tracker.observe_f(r);
    }
    let ok = (0..dim).filter(|&i| with.variance(i) <= without.variance(i)).count();
    let frac = ok as f64 / dim as f64;
    Ok(Check::new(
        "baseline: variance reduced",
        frac >= cfg.variance_coverage,
        format!(
            "{} samples, {:.1}% of {dim} speaker coordinates have lower variance",
            cfg.variance_samples,
            100.0 * frac
        ),
    ))
}

// ---------------------------------------------------------------------------
// Creator and metrics

/// Gate limit, the mixing identity and the attention simplex on random
/// scenes.
pub fn creator_algebra(cfg: &SuiteConfig) -> Result<Check> {
    let dims = Dims {
        hidden: 5,
        embed: 4,
        vocab: vocab::SIZE,
    };
    let mut rng = rng_from(cfg.seed, &[30]);
    let mut creator = Creator::new(CreatorConfig::new(dims), &mut rng);
    let mut limit = 0.0f64;
    let mut residual = 0.0f64;
    let mut simplex = 0.0f64;
    for trial in 0..20 {
        let rand_vec = |rng: &mut crate::rng::Rng, n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let scene: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, FEATURE_DIM)).collect();
        let reference: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, FEATURE_DIM)).collect();
        let u = rand_vec(&mut rng, dims.hidden);
        // Half the trials saturate the gate.
        let bias = if trial % 2 == 0 { 0.0 } else { 60.0 };
        creator.store.set("w3.b", Tensor::scalar(bias))?;

        let mut tape = Tape::new();
        let sv = [0, 1, 2, 3].map(|k| tape.constant_vec(scene[k].clone()));
        let rv = [0, 1, 2, 3].map(|k| tape.constant_vec(reference[k].clone()));
        let uv = tape.constant_vec(u);
        let mixed = creator.mix_scene(&mut tape, uv, sv, rv)?;
        for k in 0..4 {
            let lambda = tape.scalar(mixed.lambdas[k]);
            let q = tape.value(mixed.q[k]).data().to_vec();
            let g = tape.value(mixed.g[k]).data().to_vec();
            let out = tape.value(mixed.mixed[k]).data();
            let qsum: f64 = q.iter().sum();
            simplex = simplex.max((qsum - 1.0).abs());
            if q.iter().any(|&x| x < 0.0) {
                simplex = f64::INFINITY;
            }
            for j in 0..FEATURE_DIM {
                let want = lambda * scene[k][j] + (1.0 - lambda) * g[j];
                residual = residual.max((out[j] - want).abs());
                if bias > 0.0 {
                    limit = limit.max((out[j] - scene[k][j]).abs());
                }
            }
        }
    }
    let passed = limit <= 1e-12 && residual <= 1e-12 && simplex <= 1e-12;
    Ok(Check::new(
        "creator: mixing algebra",
        passed,
        format!("gate-limit error {limit:.1e}, mixing residual {residual:.1e}, simplex deviation {simplex:.1e}"),
    ))
}

/// `SPL ≤ SR ≤ OR` over random walks on random worlds.
pub fn metric_ordering(cfg: &SuiteConfig) -> Result<Check> {
    let mut violations = 0;
    let batches = 50;
    for b in 0..batches {
        let mut rng = rng_from(cfg.seed, &[31, b]);
        let world = World::generate(derive_seed(cfg.seed, &[32, b]), 4, 4, 0.2)?;
        let mut results = Vec::new();
        for _ in 0..10 {
            let mut node = rng.gen_range(0..world.num_nodes());
            let mut traj = vec![node];
            for _ in 0..rng.gen_range(0..8) {
                let next: Vec<NodeId> = world.neighbors(node).map(|(_, v)| v).collect();
                node = next[rng.gen_range(0..next.len())];
                traj.push(node);
            }
            let goal = rng.gen_range(0..world.num_nodes());
            results.push(NavResult::new(&world, traj, goal)?);
        }
        let radius = rng.gen_range(0..2);
        let m = nav_metrics(&results, radius)?;
        if !(m.spl <= m.sr && m.sr <= m.or) {
            violations += 1;
        }
    }
    Ok(Check::new(
        "metrics: SPL <= SR <= OR",
        violations == 0,
        format!("{batches} random batches, {violations} violations"),
    ))
}
