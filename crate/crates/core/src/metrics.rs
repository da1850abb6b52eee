//! Navigation metrics (SR, NE, OR, SPL) and text metrics (BLEU, ROUGE-L,
//! CIDEr-lite). Rates are fractions in `[0, 1]`; tables scale them.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::world::{vocab, NodeId, Path, Token, World};

/// One greedy navigation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct NavResult {
    pub trajectory: Vec<NodeId>,
    pub goal: NodeId,
    /// Shortest-path length from start to goal, in edges.
    pub shortest: usize,
    /// Edges walked.
    pub walked: usize,
    pub final_distance: usize,
    /// Closest the trajectory ever came to the goal.
    pub nearest_distance: usize,
}

impl NavResult {
    pub fn new(world: &World, trajectory: Vec<NodeId>, goal: NodeId) -> Result<Self> {
        let (&start, &end) = match (trajectory.first(), trajectory.last()) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(Error::Empty("trajectory")),
        };
        let mut nearest = usize::MAX;
        for &n in &trajectory {
            nearest = nearest.min(world.geodesic(n, goal)?);
        }
        Ok(NavResult {
            shortest: world.geodesic(start, goal)?,
            walked: trajectory.len() - 1,
            final_distance: world.geodesic(end, goal)?,
            nearest_distance: nearest,
            trajectory,
            goal,
        })
    }

    pub fn success(&self, radius: usize) -> bool {
        self.final_distance <= radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavMetrics {
    pub sr: f64,
    pub ne: f64,
    pub or: f64,
    pub spl: f64,
}

pub fn nav_metrics(results: &[NavResult], radius: usize) -> Result<NavMetrics> {
    if results.is_empty() {
        return Err(Error::Empty("navigation results"));
    }
    let n = results.len() as f64;
    let mut m = NavMetrics {
        sr: 0.0,
        ne: 0.0,
        or: 0.0,
        spl: 0.0,
    };
    for r in results {
        let s = r.success(radius);
        if s {
            m.sr += 1.0;
            let l = r.shortest as f64;
            let p = r.walked as f64;
            m.spl += if l == 0.0 { 1.0 } else { l / p.max(l) };
        }
        m.ne += r.final_distance as f64;
        if r.nearest_distance <= radius {
            m.or += 1.0;
        }
    }
    m.sr /= n;
    m.ne /= n;
    m.or /= n;
    m.spl /= n;
    Ok(m)
}

/// Drops BOS/EOS so metrics see words only.
pub fn strip_special(tokens: &[Token]) -> Vec<Token> {
    tokens
        .iter()
        .copied()
        .filter(|&t| t != vocab::BOS && t != vocab::EOS)
        .collect()
}

fn ngrams(tokens: &[Token], n: usize) -> BTreeMap<&[Token], usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Clipped n-gram matches and candidate n-gram count.
fn clipped(candidate: &[Token], references: &[Vec<Token>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: BTreeMap<&[Token], usize> = BTreeMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.values().sum())
}

fn closest_ref_len(c: usize, references: &[Vec<Token>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// Sentence BLEU-n: geometric mean of clipped precisions for orders 1..=n
/// times the brevity penalty. Empty candidates score 0.
pub fn bleu(candidate: &[Token], references: &[Vec<Token>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Parse(format!("BLEU order {n} outside 1..=4")));
    }
    if references.is_empty() {
        return Err(Error::Empty("references"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = clipped(candidate, references, k);
        if m == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references));
    Ok(bp * (log_sum / n as f64).exp())
}

/// Corpus BLEU-n: clipped counts and lengths summed before the ratio.
pub fn corpus_bleu(pairs: &[(Vec<Token>, Vec<Vec<Token>>)], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Parse(format!("BLEU order {n} outside 1..=4")));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut matched = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in pairs {
        if refs.is_empty() {
            return Err(Error::Empty("references"));
        }
        for k in 1..=n {
            let (m, t) = clipped(cand, refs, k);
            matched[k - 1] += m;
            totals[k - 1] += t;
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if matched[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[k] as f64 / totals[k] as f64).ln();
    }
    Ok(brevity_penalty(c_len, r_len) * (log_sum / n as f64).exp())
}

fn lcs(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with `β = 1.2`, best over references.
pub fn rouge_l(candidate: &[Token], references: &[Vec<Token>]) -> Result<f64> {
    const BETA: f64 = 1.2;
    if references.is_empty() {
        return Err(Error::Empty("references"));
    }
    let mut best = 0.0f64;
    for r in references {
        let l = lcs(candidate, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / candidate.len() as f64;
        let rec = l / r.len() as f64;
        let f = (1.0 + BETA * BETA) * p * rec / (rec + BETA * BETA * p);
        best = best.max(f);
    }
    Ok(best)
}

type Vector<'a> = BTreeMap<&'a [Token], f64>;

fn tfidf<'a>(tokens: &'a [Token], n: usize, df: &BTreeMap<&[Token], usize>, corpus: f64) -> Vector<'a> {
    let counts = ngrams(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| {
            let idf = (corpus / df.get(g).copied().unwrap_or(1).max(1) as f64).ln();
            (g, c as f64 / total as f64 * idf)
        })
        .collect()
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// CIDEr-lite per candidate: for each order 1..=4, the mean tf-idf cosine to
/// its references; averaged over orders and scaled by 10. Document
/// frequencies count, per item, the n-grams of its references.
pub fn cider(corpus: &[(Vec<Token>, Vec<Vec<Token>>)]) -> Result<Vec<f64>> {
    if corpus.len() < 2 {
        return Err(Error::Empty("CIDEr corpus needs at least two items"));
    }
    let size = corpus.len() as f64;
    let mut scores = vec![0.0; corpus.len()];
    for n in 1..=4 {
        let mut df: BTreeMap<&[Token], usize> = BTreeMap::new();
        for (_, refs) in corpus {
            let grams: BTreeSet<&[Token]> = refs.iter().flat_map(|r| ngrams(r, n).into_keys()).collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in corpus.iter().enumerate() {
            if refs.is_empty() {
                return Err(Error::Empty("references"));
            }
            let c = tfidf(cand, n, &df, size);
            let sim: f64 = refs
                .iter()
                .map(|r| cosine(&c, &tfidf(r, n, &df, size)))
                .sum::<f64>()
                / refs.len() as f64;
            scores[i] += sim / 4.0;
        }
    }
    Ok(scores.into_iter().map(|s| s * 10.0).collect())
}

/// Text metrics averaged over a corpus of (candidate, references) pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextMetrics {
    pub bleu1: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub rouge: f64,
}

/// Corpus BLEU-1/4, mean CIDEr-lite (0 for a single item) and mean ROUGE-L.
/// Special tokens are stripped first.
pub fn text_metrics(pairs: &[(Vec<Token>, Vec<Vec<Token>>)]) -> Result<TextMetrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("text pairs"));
    }
    let clean: Vec<(Vec<Token>, Vec<Vec<Token>>)> = pairs
        .iter()
        .map(|(c, rs)| (strip_special(c), rs.iter().map(|r| strip_special(r)).collect()))
        .collect();
    let rouge = clean
        .iter()
        .map(|(c, rs)| rouge_l(c, rs))
        .sum::<Result<f64>>()?
        / clean.len() as f64;
    let cider = if clean.len() >= 2 {
        let s = cider(&clean)?;
        s.iter().sum::<f64>() / s.len() as f64
    } else {
        0.0
    };
    Ok(TextMetrics {
        bleu1: corpus_bleu(&clean, 1)?,
        bleu4: corpus_bleu(&clean, 4)?,
        cider,
        rouge,
    })
}

/// Convenience for scoring a path result directly.
pub fn nav_result_for_path(world: &World, walked: &Path, goal: NodeId) -> Result<NavResult> {
    NavResult::new(world, walked.nodes.clone(), goal)
}
