use ccc_web::Demo;

#[test]
fn layout_arrays_match_the_grid() {
    let d = Demo::new(4, 5, 4, 0.2).unwrap();
    let n = (d.width() * d.height()) as usize;
    assert_eq!(d.open_mask().len(), n);
    assert_eq!(d.landmarks().len(), 4 * n);
    assert_eq!(d.coords().len(), 2 * n);
    assert!(d.landmarks().iter().all(|&l| l < 8));
    let p = d.path();
    assert!(p.len() >= 2 && p.iter().all(|&v| (v as usize) < n));
    assert!(!d.instruction().is_empty());
}

#[test]
fn same_seed_same_demo() {
    let a = Demo::new(9, 5, 5, 0.15).unwrap();
    let b = Demo::new(9, 5, 5, 0.15).unwrap();
    assert_eq!((a.open_mask(), a.path(), a.instruction()), (b.open_mask(), b.path(), b.instruction()));
    assert_eq!(a.counterfactual(2).unwrap(), b.counterfactual(2).unwrap());
}

#[test]
fn training_lowers_the_loss_and_rollouts_stay_on_the_grid() {
    let mut d = Demo::new(3, 4, 4, 0.1).unwrap();
    let first = d.train(1).unwrap();
    let later = d.train(60).unwrap();
    assert!(later < first, "{first} -> {later}");
    assert_eq!(d.iteration(), 61);
    let n = d.width() * d.height();
    let walk = d.rollout().unwrap();
    assert_eq!(walk[0], d.path()[0]);
    assert!(walk.iter().all(|&v| v < n));
    assert!(!d.speak().unwrap().contains('?'));
}

#[test]
fn counterfactual_gates_cover_each_visited_node_once() {
    let mut d = Demo::new(5, 5, 5, 0.1).unwrap();
    d.next_episode();
    let cf = d.counterfactual(0).unwrap();
    let mut visited = d.path();
    visited.sort_unstable();
    visited.dedup();
    assert_eq!(cf.len(), 5 * visited.len());
    for chunk in cf.chunks(5) {
        assert!(visited.contains(&(chunk[0] as u32)));
        assert!(chunk[1..].iter().all(|l| (0.0..=1.0).contains(l)));
    }
}

#[test]
fn bad_sizes_are_reported() {
    assert!(Demo::new(1, 0, 3, 0.1).is_err());
}

#[test]
fn every_seed_and_size_builds() {
    for seed in 0..40 {
        for (w, h) in [(2, 2), (6, 5), (12, 12)] {
            Demo::new(seed, w, h, 0.15).unwrap_or_else(|e| panic!("seed {seed} {w}x{h}: {e}"));
        }
    }
}
