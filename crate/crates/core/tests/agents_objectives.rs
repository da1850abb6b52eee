use ccc_core::agents::{Drive, EnvView};
use ccc_core::cycle::{estimate_delta_a, estimate_delta_x, BaselineTracker, REWARD_FLOOR};
use ccc_core::objectives::{
    creator_loss, discounted_returns, discriminator_loss, il_loss, speaker_mle_loss, step_rewards, Anneal, RlConfig,
};
use ccc_core::oracle::suite::grad_fixture;
use ccc_core::rng::rng_from;
use ccc_core::world::{Dir, Path, World};
use ccc_core::Tape;
use proptest::prelude::*;

#[test]
fn follower_steps_are_distributions_over_legal_actions() {
    for seed in 0..6 {
        let fx = grad_fixture(seed).unwrap();
        let env = EnvView::real(&fx.world);
        let mut tape = Tape::new();
        let mut rng = rng_from(seed, &[99]);
        let f = &fx.models.follower;
        let tr = f.run(&mut tape, &env, &fx.instruction, fx.path.start(), Drive::Sample(&mut rng)).unwrap();
        let mut pos = tr.nodes[0];
        let mut node_idx = 0;
        for (t, p) in tr.probs.iter().enumerate() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for d in Dir::ALL {
                if !fx.world.is_open(pos, d) {
                    assert_eq!(p[d.index()], 0.0, "wall move has mass");
                }
            }
            if tr.is_move(tr.actions[t]) && node_idx + 1 < tr.nodes.len() {
                node_idx += 1;
                pos = tr.nodes[node_idx];
            }
        }
    }
}

#[test]
fn speaker_steps_are_distributions() {
    let fx = grad_fixture(4).unwrap();
    let env = EnvView::real(&fx.world);
    let mut tape = Tape::new();
    let mut rng = rng_from(4, &[1]);
    let tr = fx.models.speaker.run(&mut tape, &env, &fx.path, Drive::Sample(&mut rng)).unwrap();
    assert!(!tr.probs.is_empty());
    for p in &tr.probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|&q| q >= 0.0));
    }
}

#[test]
fn greedy_rollouts_are_pure() {
    let fx = grad_fixture(2).unwrap();
    let env = EnvView::real(&fx.world);
    let run = || {
        let mut tape = Tape::new();
        let f = fx.models.follower.run(&mut tape, &env, &fx.instruction, fx.path.start(), Drive::Greedy).unwrap();
        let s = fx.models.speaker.run(&mut tape, &env, &fx.path, Drive::Greedy).unwrap();
        (f.actions, f.nodes, s.tokens)
    };
    assert_eq!(run(), run());
}

#[test]
fn imitation_loss_is_the_sum_of_step_log_probs() {
    for seed in 0..4 {
        let fx = grad_fixture(seed).unwrap();
        let env = EnvView::real(&fx.world);
        let mut tape = Tape::new();
        let f = &fx.models.follower;
        let actions = f.actions_for_path(&fx.path);
        let tr = f.run(&mut tape, &env, &fx.instruction, fx.path.start(), Drive::Teacher(&actions)).unwrap();
        let manual: f64 = tr.probs.iter().zip(&actions).map(|(p, &a)| -p[a].ln()).sum();
        let l = il_loss(&mut tape, f, &env, &fx.instruction, &fx.path).unwrap();
        assert!((tape.scalar(l) - manual).abs() <= 1e-12, "{} vs {}", tape.scalar(l), manual);

        let s = fx.models.speaker.logprob(&mut tape, &env, &fx.path, &fx.instruction).unwrap();
        let manual: f64 = s.probs.iter().zip(&fx.instruction[1..]).map(|(p, &w)| -p[w].ln()).sum();
        let l = speaker_mle_loss(&mut tape, &fx.models.speaker, &env, &fx.path, &fx.instruction).unwrap();
        assert!((tape.scalar(l) - manual).abs() <= 1e-12);
    }
}

#[test]
fn creator_loss_leaves_the_discriminator_alone() {
    let fx = grad_fixture(5).unwrap();
    let mut tape = Tape::new();
    let cf = fx.models.creator.make_env(&mut tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, 7).unwrap();
    let cf_env = cf.view(&fx.world);
    let l = creator_loss(&mut tape, &fx.models.discriminator, &cf, &cf_env, &fx.instruction, &fx.path).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.store_ref(fx.models.discriminator.store.tag()).is_none());
    let c = g.store(fx.models.creator.store.tag());
    assert!(c.values().any(|t| t.data().iter().any(|&x| x != 0.0)));
}

#[test]
fn discriminator_loss_leaves_the_creator_alone() {
    let fx = grad_fixture(6).unwrap();
    let mut tape = Tape::new();
    let cf = fx.models.creator.make_env(&mut tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, 3).unwrap();
    let values = cf.values(&tape);
    let mut t2 = Tape::new();
    let real = EnvView::real(&fx.world);
    let fake = EnvView::with_values(&fx.world, values);
    let l = discriminator_loss(&mut t2, &fx.models.discriminator, &real, &fake, &fx.instruction, &fx.path).unwrap();
    let g = t2.backward(l).unwrap();
    assert!(g.store_ref(fx.models.creator.store.tag()).is_none());
    assert!(g.store_ref(fx.models.discriminator.store.tag()).is_some());
}

#[test]
fn counterfactual_only_touches_visited_nodes() {
    let fx = grad_fixture(8).unwrap();
    let mut tape = Tape::new();
    let cf = fx.models.creator.make_env(&mut tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, 1).unwrap();
    let mut visited = fx.path.nodes.clone();
    visited.sort_unstable();
    visited.dedup();
    assert_eq!(cf.scenes.keys().copied().collect::<Vec<_>>(), visited);
    let env = cf.view(&fx.world);
    for v in 0..fx.world.num_nodes() {
        if visited.binary_search(&v).is_err() {
            for d in Dir::ALL {
                assert_eq!(env.subview_values(&tape, v, d), fx.world.subview_features(v, d));
            }
        }
    }
}

#[test]
fn mixing_is_a_convex_combination() {
    for seed in 0..4 {
        let fx = grad_fixture(seed).unwrap();
        let mut tape = Tape::new();
        let cf = fx.models.creator.make_env(&mut tape, &fx.world, &fx.instruction, &fx.path, &fx.reference, seed).unwrap();
        for (node, mix) in &cf.mixes {
            for k in 0..4 {
                let lam = tape.scalar(mix.lambdas[k]);
                assert!((0.0..=1.0).contains(&lam));
                let v = fx.world.subview_features(*node, Dir::from_index(k));
                let g = tape.value(mix.g[k]).data();
                let m = tape.value(mix.mixed[k]).data();
                for i in 0..v.len() {
                    assert!((m[i] - (lam * v[i] + (1.0 - lam) * g[i])).abs() <= 1e-12);
                }
                let q = tape.value(mix.q[k]).data();
                assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn cycle_estimates_decompose() {
    let fx = grad_fixture(3).unwrap();
    let env = EnvView::real(&fx.world);
    for b in [0.0f64, -3.0, 2.5] {
        let mut tape = Tape::new();
        let mut rng = rng_from(3, &[b.to_bits()]);
        let m = &fx.models;
        let a = estimate_delta_a(&mut tape, &m.speaker, &m.follower, &env, &fx.path, b, &mut rng).unwrap();
        let x = estimate_delta_x(&mut tape, &m.speaker, &m.follower, &env, &fx.instruction, fx.path.start(), b, &mut rng)
            .unwrap();
        for e in [a, x] {
            let point = tape.scalar(e.point_loss);
            assert!(e.reward >= REWARD_FLOOR);
            assert_eq!(e.reward, (-point).max(REWARD_FLOOR));
            let want = -(e.reward - b) * e.sample_logprob;
            assert!((tape.scalar(e.surrogate) - want).abs() <= 1e-12);
            assert!((tape.scalar(e.loss) - (point + want)).abs() <= 1e-12);
        }
    }
}

#[test]
fn baseline_tracker_is_an_ema_seeded_by_the_first_reward() {
    let mut b = BaselineTracker::new(0.9);
    assert_eq!(b.read(), (0.0, 0.0));
    b.observe_f(-4.0);
    assert_eq!(b.read(), (-4.0, 0.0));
    b.observe_f(-2.0);
    assert!((b.read().0 - (0.9 * -4.0 + 0.1 * -2.0)).abs() <= 1e-12);
    b.observe_s(1.0);
    assert_eq!(b.read().1, 1.0);
}

#[test]
fn anneal_decays_to_its_floor() {
    let a = Anneal::default();
    assert_eq!(a.beta(0), 1.0);
    assert!((a.beta(10) - 0.995f64.powi(10)).abs() <= 1e-15);
    assert_eq!(a.beta(1_000_000), 0.2);
    let mut last = 1.0;
    for i in 0..1000 {
        assert!(a.beta(i) <= last);
        last = a.beta(i);
    }
}

#[test]
fn returns_match_a_direct_sum() {
    let r = [0.5, -1.0, 0.0, 2.0];
    let g = discounted_returns(&r, 0.9);
    for t in 0..r.len() {
        let want: f64 = (t..r.len()).map(|k| 0.9f64.powi((k - t) as i32) * r[k]).sum();
        assert!((g[t] - want).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shaped_rewards_telescope(seed in 0u64..500, rseed in any::<u64>(), radius in 0usize..3) {
        let fx = grad_fixture(seed % 20).unwrap();
        let env = EnvView::real(&fx.world);
        let mut tape = Tape::new();
        let mut rng = rng_from(rseed, &[]);
        let tr = fx.models.follower.run(&mut tape, &env, &fx.instruction, fx.path.start(), Drive::Sample(&mut rng)).unwrap();
        let goal = fx.path.goal();
        let cfg = RlConfig { discount: 0.95, success_radius: radius };
        let r = step_rewards(&env, &tr, goal, cfg).unwrap();
        let d0 = fx.world.geodesic(tr.nodes[0], goal).unwrap() as f64;
        let d1 = fx.world.geodesic(tr.final_node(), goal).unwrap() as f64;
        let bonus = if d1 <= radius as f64 { 1.0 } else { 0.0 };
        prop_assert!((r.iter().sum::<f64>() - (d0 - d1 + bonus)).abs() <= 1e-12);
    }

    #[test]
    fn path_round_trips_through_moves(seed in any::<u64>(), pseed in any::<u64>()) {
        let world = World::generate(seed, 5, 5, 0.2).unwrap();
        let p = world.sample_path(pseed, 1, 6).unwrap();
        let q = Path::from_moves(&world, p.start(), &p.moves).unwrap();
        prop_assert_eq!(p, q);
    }
}
