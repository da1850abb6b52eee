mod common;

use ccc_core::metrics::{bleu, nav_metrics, rouge_l, NavResult};
use ccc_core::world::{Token, World};
use proptest::prelude::*;

#[test]
fn hand_examples_match() {
    let worst = common::metric_hand_examples();
    assert!(worst <= 1e-9, "worst error {worst}");
}

fn walk(world: &World, start: usize, moves: &[usize]) -> Vec<usize> {
    let mut out = vec![start];
    let mut v = start;
    for &m in moves {
        let (_, n) = match world.neighbors(v).nth(m % world.neighbors(v).count().max(1)) {
            Some(x) => x,
            None => break,
        };
        v = n;
        out.push(v);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spl_le_sr_le_or(
        seed in 0u64..1000,
        eps in prop::collection::vec((0usize..36, 0usize..36, prop::collection::vec(0usize..4, 0..10)), 1..12),
        radius in 0usize..3,
    ) {
        let world = World::generate(seed, 6, 6, 0.15).unwrap();
        let results: Vec<_> = eps
            .iter()
            .map(|(s, g, m)| NavResult::new(&world, walk(&world, *s, m), *g).unwrap())
            .collect();
        let m = nav_metrics(&results, radius).unwrap();
        prop_assert!(m.spl <= m.sr + 1e-12);
        prop_assert!(m.sr <= m.or + 1e-12);
        prop_assert!(m.ne >= 0.0);
    }

    #[test]
    fn text_metrics_ignore_token_relabelling(
        cand in prop::collection::vec(2usize..8, 1..8),
        reference in prop::collection::vec(2usize..8, 1..8),
        shift in 1usize..50,
    ) {
        let relabel = |xs: &[Token]| xs.iter().map(|x| x + shift).collect::<Vec<_>>();
        let refs = vec![reference.clone()];
        let refs2 = vec![relabel(&reference)];
        for n in 1..=4 {
            prop_assert_eq!(bleu(&cand, &refs, n).unwrap(), bleu(&relabel(&cand), &refs2, n).unwrap());
        }
        prop_assert_eq!(rouge_l(&cand, &refs).unwrap(), rouge_l(&relabel(&cand), &refs2).unwrap());
    }

    #[test]
    fn bleu_falls_as_the_candidate_is_corrupted(reference in prop::collection::vec(2usize..20, 6..12)) {
        let refs = vec![reference.clone()];
        let mut cand = reference.clone();
        let mut last = bleu(&cand, &refs, 1).unwrap();
        prop_assert!((last - 1.0).abs() < 1e-12);
        for i in 0..cand.len() {
            cand[i] = 100 + i;
            let b = bleu(&cand, &refs, 1).unwrap();
            prop_assert!(b <= last + 1e-12);
            last = b;
        }
        prop_assert_eq!(last, 0.0);
    }

    #[test]
    fn scores_stay_in_range(
        cand in prop::collection::vec(2usize..6, 0..8),
        reference in prop::collection::vec(2usize..6, 1..8),
    ) {
        let refs = vec![reference];
        for n in 1..=4 {
            let b = bleu(&cand, &refs, n).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        }
        if !cand.is_empty() {
            let r = rouge_l(&cand, &refs).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        }
    }
}

#[test]
fn perfect_walk_scores_full_marks() {
    let world = World::generate(3, 5, 5, 0.1).unwrap();
    let path = world.sample_path(11, 2, 5).unwrap();
    let r = NavResult::new(&world, path.nodes.clone(), path.goal()).unwrap();
    let m = nav_metrics(&[r], 0).unwrap();
    assert_eq!((m.sr, m.spl, m.or, m.ne), (1.0, 1.0, 1.0, 0.0));
}

#[test]
fn empty_inputs_are_errors() {
    assert!(nav_metrics(&[], 1).is_err());
    assert!(bleu(&[2], &[], 1).is_err());
    assert!(bleu(&[2], &[vec![2]], 5).is_err());
}
