use ccc_core::world::{instruction_uniqueness, read_episodes, read_worlds, write_episodes, write_worlds, Dir, World, WorldSet};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_a_pure_function_of_the_seed(seed in any::<u64>(), w in 4usize..8, h in 4usize..8) {
        let a = World::generate(seed, w, h, 0.2).unwrap();
        let b = World::generate(seed, w, h, 0.2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn subview_features_are_well_formed(seed in any::<u64>()) {
        let world = World::generate(seed, 5, 5, 0.2).unwrap();
        for v in 0..world.num_nodes() {
            for d in Dir::ALL {
                let f = world.subview_features(v, d);
                prop_assert_eq!(f.len(), 11);
                prop_assert_eq!(f[..8].iter().filter(|&&x| x == 1.0).count(), 1);
                prop_assert!(f[..8].iter().all(|&x| x == 0.0 || x == 1.0));
                prop_assert!((f[8] * f[8] + f[9] * f[9] - 1.0).abs() < 1e-12);
                prop_assert!(f[10] == 0.0 || f[10] == 1.0);
                prop_assert_eq!(f[10] == 1.0, world.is_open(v, d));
            }
        }
    }

    #[test]
    fn sampled_paths_are_shortest(seed in any::<u64>(), pseed in any::<u64>()) {
        let world = World::generate(seed, 6, 6, 0.15).unwrap();
        let p = world.sample_path(pseed, 2, 6).unwrap();
        prop_assert_eq!(world.geodesic(p.start(), p.goal()).unwrap(), p.len_edges());
        prop_assert!((2..=6).contains(&p.len_edges()));
    }
}

#[test]
fn oracle_grammar_mostly_distinguishes_paths() {
    for seed in 0..5u64 {
        let world = World::generate(seed, 6, 6, 0.15).unwrap();
        let paths: Vec<_> = (0..200).map(|i| world.sample_path(1000 + i, 2, 5).unwrap()).collect();
        let u = instruction_uniqueness(&world, &paths).unwrap();
        assert!(u >= 0.95, "world {seed}: uniqueness {u}");
    }
}

#[test]
fn files_round_trip_through_text() {
    let worlds = WorldSet::generate(4, 3, &[(4, 5), (6, 4)], 0.2).unwrap();
    let text = write_worlds(&worlds);
    let back = read_worlds(&text).unwrap();
    assert_eq!(back, worlds);
    let world = worlds.get(1).unwrap();
    let path = world.sample_path(9, 2, 4).unwrap();
    let eps = vec![ccc_core::world::Episode {
        world_id: 1,
        instruction: Some(world.oracle_instruction(&path).unwrap()),
        path,
    }];
    assert_eq!(read_episodes(&write_episodes(&eps), &worlds).unwrap(), eps);
}

#[test]
fn malformed_world_file_names_the_line() {
    let err = read_worlds("ccc-world 1\nworld 0 2 2\n0 0 1 2 3 4 0 1 1 0\n").unwrap_err();
    assert!(err.to_string().contains("line"), "{err}");
}
