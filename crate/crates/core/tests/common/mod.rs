#![allow(dead_code)]

use ccc_core::metrics::{bleu, cider, corpus_bleu, rouge_l};
use ccc_core::world::Token;

/// Worked BLEU/ROUGE-L/CIDEr examples with their hand-computed values.
/// Returns the largest absolute error.
pub fn metric_hand_examples() -> f64 {
    let t = |xs: &[Token]| xs.to_vec();
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());

    // One substitution at the end: precisions 5/6, 4/5, 3/4, 2/3, product 1/3.
    let cand = t(&[2, 3, 4, 5, 6, 7]);
    let refs = vec![t(&[2, 3, 4, 5, 6, 8])];
    check(bleu(&cand, &refs, 1).unwrap(), 5.0 / 6.0);
    check(bleu(&cand, &refs, 4).unwrap(), (1.0f64 / 3.0).powf(0.25));
    // Short exact prefix: all precisions 1, brevity penalty exp(1 - 6/4).
    let cand = t(&[2, 3, 4, 5]);
    let refs = vec![t(&[2, 3, 4, 5, 6, 7])];
    check(bleu(&cand, &refs, 4).unwrap(), (-0.5f64).exp());
    // Clipping.
    let cand = t(&[2, 2, 2, 2]);
    let refs = vec![t(&[2, 3])];
    check(bleu(&cand, &refs, 1).unwrap(), 0.25);
    // Closest reference length picks the 4-token reference.
    let cand = t(&[2, 3, 4, 5]);
    let refs = vec![t(&[2, 3, 4, 5, 9, 9, 9, 9, 9]), t(&[5, 4, 3, 2])];
    check(bleu(&cand, &refs, 1).unwrap(), 1.0);
    // Corpus BLEU-1 pools counts: (2 + 1) / (3 + 2), no brevity penalty.
    let pairs = vec![
        (t(&[2, 3, 9]), vec![t(&[2, 3, 4])]),
        (t(&[5, 9]), vec![t(&[5, 6])]),
    ];
    check(corpus_bleu(&pairs, 1).unwrap(), 0.6);

    // ROUGE-L with beta 1.2.
    let b2 = 1.44;
    let cand = t(&[2, 3, 4, 5, 6, 7]);
    let refs = vec![t(&[2, 3, 4, 5, 6, 8])];
    check(rouge_l(&cand, &refs).unwrap(), 5.0 / 6.0);
    let cand = t(&[2, 4, 6]);
    let refs = vec![t(&[2, 3, 4, 5, 6])];
    let (p, r) = (1.0, 0.6);
    check(rouge_l(&cand, &refs).unwrap(), (1.0 + b2) * p * r / (r + b2 * p));
    check(rouge_l(&t(&[9]), &refs).unwrap(), 0.0);

    // CIDEr-lite. Every n-gram occurs in one item's references, so idf is
    // ln 2 throughout and cancels in the cosines.
    let corpus = vec![
        (t(&[2, 3]), vec![t(&[2, 3])]),
        (t(&[4, 5]), vec![t(&[4, 5])]),
    ];
    let s = cider(&corpus).unwrap();
    check(s[0], 10.0 * 2.0 / 4.0);
    check(s[1], 5.0);
    let corpus = vec![
        (t(&[2, 4]), vec![t(&[2, 3])]),
        (t(&[4, 5]), vec![t(&[4, 5])]),
    ];
    let s = cider(&corpus).unwrap();
    // Order 1: candidate {2, 4} against {2, 3}, cosine 1/2; token 4 has
    // df 1 so its weight is ln 2 too. Order 2 shares nothing.
    check(s[0], 10.0 * 0.5 / 4.0);
    check(s[1], 5.0);
    // A unigram present in both items' references has idf 0.
    let corpus = vec![
        (t(&[2, 3]), vec![t(&[2, 3])]),
        (t(&[2, 4]), vec![t(&[2, 4])]),
    ];
    let s = cider(&corpus).unwrap();
    check(s[0], 5.0);
    check(s[1], 5.0);
    worst
}
