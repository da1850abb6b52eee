use ccc_core::agents::follower;
use ccc_core::objectives::il_loss;
use ccc_core::trainer::*;
use ccc_core::agents::EnvView;
use ccc_core::{sgd_step, Error, Tape};

fn small(mode: Mode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.seed = 5;
    c.hidden = 8;
    c.embed = 6;
    c.batch_size = 2;
    c.unlabeled_batch = 2;
    c.iterations = 3;
    c.eval_every = 0;
    c.bt_speaker_iterations = 2;
    c.data.train_worlds = 2;
    c.data.unseen_worlds = 1;
    c.data.sizes = vec![(4, 4)];
    c.data.n_labeled = 6;
    c.data.m_unlabeled = 4;
    c.data.n_val_seen = 3;
    c.data.n_val_unseen = 3;
    c.data.max_len = 4;
    c.apply_mode(mode);
    c
}

fn data(p: &Prepared) -> TrainData<'_> {
    TrainData {
        worlds: &p.worlds,
        labeled: &p.data.labeled,
        unlabeled: &p.data.unlabeled,
        eval: None,
    }
}

#[test]
fn full_step_runs_in_order() {
    let mut cfg = small(Mode::Ccc);
    cfg.batch_size = 1;
    cfg.unlabeled_batch = 1;
    let p = prepare_data(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), build_models(&cfg));
    t.trace = Some(Vec::new());
    t.step(data(&p)).unwrap();
    use Step::*;
    let want = vec![
        SampleBatch,
        CopyTemporaries,
        SampleInstruction(0),
        SamplePath(0),
        EstimateCycle(0),
        UpdateSpeakerTemp(0),
        UpdateFollowerTemp(0),
        CreateCounterfactual(0),
        EstimateCreatorLoss(0),
        UpdateCreatorTemp(0),
        CounterfactualTerms(0),
        UnlabeledCycle(0),
        Commit,
        UpdateDiscriminator,
        UpdateBaselines,
        Log,
    ];
    assert_eq!(t.trace.unwrap(), want);
}

/// Imitation-only training against a loop written from scratch: every
/// episode's gradient is taken at the start-of-batch parameters and applied
/// to a running copy.
#[test]
fn imitation_matches_a_reference_loop() {
    let mut cfg = small(Mode::Baseline);
    cfg.terms = Terms::none();
    cfg.terms.il = true;
    cfg.batch_size = 3;
    let p = prepare_data(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), build_models(&cfg));
    t.run(data(&p), 4).unwrap();

    let mut theta = build_models(&cfg).follower;
    for it in 0..4 {
        let batch = sample_batch(cfg.seed, it, 0, p.data.labeled.len(), cfg.batch_size);
        let mut next = theta.clone();
        for &i in &batch {
            let ep = &p.data.labeled[i];
            let world = p.worlds.get(ep.world_id).unwrap();
            let env = EnvView::real(world);
            let mut tape = Tape::new();
            let l = il_loss(&mut tape, &theta, &env, ep.instruction.as_ref().unwrap(), &ep.path).unwrap();
            let g = tape.backward(l).unwrap();
            sgd_step(&mut next.store, &g.store(follower::TAG), cfg.lr, cfg.clip_norm).unwrap();
        }
        theta = next;
    }
    for (name, want) in theta.store.iter() {
        let got = t.models.follower.store.get(name).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut cfg = small(Mode::Ccc);
    cfg.lr = 0.0;
    let p = prepare_data(&cfg).unwrap();
    let before = build_models(&cfg);
    let mut t = Trainer::new(cfg.clone(), before.clone());
    t.run(data(&p), 2).unwrap();
    assert_eq!(t.models, before);
}

fn run_bytes(cfg: &TrainConfig, p: &Prepared, until: u64) -> (Vec<u8>, String) {
    let mut t = Trainer::new(cfg.clone(), build_models(cfg));
    t.run(data(p), until).unwrap();
    (t.checkpoint().to_bytes(), t.log.to_csv())
}

#[test]
fn runs_are_bit_reproducible() {
    for mode in [Mode::Ccc, Mode::Ablation(Row::DeltaAXU)] {
        let cfg = small(mode);
        let p = prepare_data(&cfg).unwrap();
        assert_eq!(prepare_data(&cfg).unwrap(), p);
        assert_eq!(run_bytes(&cfg, &p, 3), run_bytes(&cfg, &p, 3));
    }
}

#[test]
fn resume_matches_an_unbroken_run() {
    let cfg = small(Mode::Ccc);
    let p = prepare_data(&cfg).unwrap();
    let mut whole = Trainer::new(cfg.clone(), build_models(&cfg));
    whole.run(data(&p), 4).unwrap();

    let mut first = Trainer::new(cfg.clone(), build_models(&cfg));
    first.run(data(&p), 2).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = Trainer::from_checkpoint(cfg.clone(), &ck).unwrap();
    second.run(data(&p), 4).unwrap();

    assert_eq!(second.checkpoint().to_bytes(), whole.checkpoint().to_bytes());
    assert_eq!(second.log.rows[..], whole.log.rows[2..]);
}

#[test]
fn resume_rejects_a_foreign_seed() {
    let cfg = small(Mode::Baseline);
    let t = Trainer::new(cfg.clone(), build_models(&cfg));
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(matches!(Trainer::from_checkpoint(other, &t.checkpoint()), Err(Error::Checkpoint(_))));
}

#[test]
fn config_text_round_trips() {
    for mode in [Mode::Baseline, Mode::Bt, Mode::Ccc, Mode::Ablation(Row::CfNoRef)] {
        let mut cfg = small(mode);
        cfg.cycle_start = 17;
        cfg.clip_norm = None;
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
    assert!(TrainConfig::parse("no_such_key = 1\n").is_err());
    assert!(TrainConfig::parse("lr = fast\n").is_err());
}

#[test]
fn checkpoint_bytes_round_trip_and_reject_damage() {
    let cfg = small(Mode::Ccc);
    let t = Trainer::new(cfg.clone(), build_models(&cfg));
    let bytes = t.checkpoint().to_bytes();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), t.checkpoint());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn imitation_fits_one_episode_and_walks_it() {
    let mut cfg = small(Mode::Baseline);
    cfg.terms = Terms::none();
    cfg.terms.il = true;
    cfg.batch_size = 1;
    let p = prepare_data(&cfg).unwrap();
    let one = vec![p.data.labeled[0].clone()];
    let d = TrainData {
        worlds: &p.worlds,
        labeled: &one,
        unlabeled: &[],
        eval: None,
    };
    let mut t = Trainer::new(cfg.clone(), build_models(&cfg));
    let mut reached = None;
    for _ in 0..2000 {
        t.step(d).unwrap();
        if t.log.rows.last().unwrap().get("il").unwrap() < 0.05 {
            reached = Some(t.iteration);
            break;
        }
    }
    assert!(reached.is_some(), "loss {:?}", t.log.rows.last().unwrap().get("il"));
    let m = t.evaluate(&p.worlds, "train", &one).unwrap();
    assert_eq!((m.nav.sr, m.nav.spl, m.nav.ne), (1.0, 1.0, 0.0));
}

#[test]
fn back_translation_labels_every_unlabeled_path() {
    let cfg = small(Mode::Bt);
    let p = prepare_data(&cfg).unwrap();
    let (t, pseudo) = bt_train(&cfg, data(&p)).unwrap();
    assert_eq!(pseudo.len(), p.data.unlabeled.len());
    for (a, b) in pseudo.iter().zip(&p.data.unlabeled) {
        assert_eq!((a.world_id, &a.path), (b.world_id, &b.path));
        assert!(a.instruction.as_ref().is_some_and(|x| !x.is_empty()));
    }
    assert_eq!(t.iteration, cfg.bt_speaker_iterations + cfg.iterations);
    let (_, again) = bt_train(&cfg, data(&p)).unwrap();
    assert_eq!(again, pseudo);
}

#[test]
fn empty_inputs_are_errors() {
    let cfg = small(Mode::Baseline);
    let p = prepare_data(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), build_models(&cfg));
    assert!(t.evaluate(&p.worlds, "val_seen", &[]).is_err());
    let d = TrainData {
        labeled: &[],
        ..data(&p)
    };
    assert!(t.step(d).is_err());
}

#[test]
fn cycle_terms_wait_for_cycle_start() {
    let mut cfg = small(Mode::Ablation(Row::DeltaAX));
    cfg.cycle_start = 2;
    let p = prepare_data(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), build_models(&cfg));
    t.run(data(&p), 3).unwrap();
    let r = &t.log.rows;
    assert!(r[0].get("delta_a").is_none() && r[1].get("delta_a").is_none());
    assert!(r[2].get("delta_a").is_some() && r[2].get("delta_x").is_some());
}
