use ccc_core::oracle::finite_difference_check;
use ccc_core::{sgd_step, ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_positive_distribution(x in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let mut t = Tape::new();
        let v = t.constant_vec(x);
        let p = t.softmax(v).unwrap();
        let p = t.value(p).data();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&q| q > 0.0));
    }

    #[test]
    fn composed_loss_matches_finite_differences(
        w in vec_strategy(12),
        b in vec_strategy(3),
        x in vec_strategy(4),
        target in 0usize..3,
    ) {
        let mut s = ParamStore::new("m");
        s.insert("w", Tensor::matrix(3, 4, w).unwrap());
        s.insert("b", Tensor::vector(b));
        let mut stores = [s];
        let r = finite_difference_check(&mut stores, 1e-3, |s, tape| {
            let w = tape.param(&s[0], "w")?;
            let b = tape.param(&s[0], "b")?;
            let xv = tape.constant_vec(x.clone());
            let h = tape.matmul(w, xv)?;
            let h = tape.add(h, b)?;
            let h = tape.tanh(h);
            let g = tape.sigmoid(h);
            let z = tape.mul(h, g)?;
            let lp = tape.log_softmax(z, None)?;
            let pick = tape.index(lp, target)?;
            let sq = tape.dot(z, z)?;
            let sq = tape.add_const(sq, 1.0);
            let root = tape.sqrt(sq);
            let e = tape.exp(pick);
            let lg = tape.log(root);
            let a = tape.sub(lg, pick)?;
            tape.add(a, e)
        }).unwrap();
        prop_assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op(w in vec_strategy(6), g in vec_strategy(6)) {
        let mut s = ParamStore::new("m");
        s.insert("w", Tensor::vector(w));
        let before = s.clone();
        let mut grads = std::collections::BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(g));
        sgd_step(&mut s, &grads, 0.0, Some(5.0)).unwrap();
        prop_assert_eq!(
            s.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            before.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut s = ParamStore::new("m");
    s.insert("w", Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 0.3, 0.2, -0.8]).unwrap());
    let build = || {
        let mut t = Tape::new();
        let w = t.param(&s, "w").unwrap();
        let x = t.constant_vec(vec![0.5, -1.0, 2.0]);
        let y = t.matmul(w, x).unwrap();
        let y = t.softmax(y).unwrap();
        let l = t.log(y);
        let l = t.sum(l);
        let g = t.backward(l).unwrap();
        g.get("m", "w").unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(build(), build());
}
