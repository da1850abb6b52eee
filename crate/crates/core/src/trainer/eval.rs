use crate::agents::{Drive, EnvView, Follower, Speaker};
use crate::error::{Error, Result};
use crate::metrics::{nav_metrics, text_metrics, NavMetrics, NavResult, TextMetrics};
use crate::tape::Tape;
use crate::world::{Episode, Token, WorldSet};

/// Greedy outcome of one evaluation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEval {
    pub nav: NavResult,
    pub generated: Vec<Token>,
    pub reference: Vec<Token>,
}

pub fn eval_episode(follower: &Follower, speaker: &Speaker, worlds: &WorldSet, ep: &Episode) -> Result<EpisodeEval> {
    let world = worlds.get(ep.world_id)?;
    let instruction = ep
        .instruction
        .as_ref()
        .ok_or_else(|| Error::Dataset("evaluation episode has no instruction".into()))?;
    let env = EnvView::real(world);
    let mut tape = Tape::new();
    let walked = follower.run(&mut tape, &env, instruction, ep.path.start(), Drive::Greedy)?;
    let mut tape = Tape::new();
    let spoken = speaker.run(&mut tape, &env, &ep.path, Drive::Greedy)?;
    Ok(EpisodeEval {
        nav: NavResult::new(world, walked.nodes, ep.path.goal())?,
        generated: spoken.tokens,
        reference: instruction.clone(),
    })
}

/// Per-episode greedy results, spread over `threads` workers; the output
/// order always follows `episodes`.
pub fn eval_episodes(
    follower: &Follower,
    speaker: &Speaker,
    worlds: &WorldSet,
    episodes: &[Episode],
    threads: usize,
) -> Result<Vec<EpisodeEval>> {
    if episodes.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let threads = threads.max(1).min(episodes.len());
    if threads == 1 {
        return episodes
            .iter()
            .map(|e| eval_episode(follower, speaker, worlds, e))
            .collect();
    }
    let chunk = episodes.len().div_ceil(threads);
    let parts: Vec<Result<Vec<EpisodeEval>>> = std::thread::scope(|s| {
        let handles: Vec<_> = episodes
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    c.iter()
                        .map(|e| eval_episode(follower, speaker, worlds, e))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(episodes.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(
    follower: &Follower,
    speaker: &Speaker,
    worlds: &WorldSet,
    episodes: &[Episode],
    radius: usize,
    threads: usize,
) -> Result<(NavMetrics, TextMetrics)> {
    let results = eval_episodes(follower, speaker, worlds, episodes, threads)?;
    let nav: Vec<NavResult> = results.iter().map(|r| r.nav.clone()).collect();
    let text: Vec<(Vec<Token>, Vec<Vec<Token>>)> = results
        .into_iter()
        .map(|r| (r.generated, vec![r.reference]))
        .collect();
    Ok((nav_metrics(&nav, radius)?, text_metrics(&text)?))
}
