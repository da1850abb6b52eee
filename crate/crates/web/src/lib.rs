//! WebAssembly bindings for the browser demo in `www/`.
//!
//! One `Demo` holds a world, a reference world for counterfactual mixing,
//! a set of oracle-labeled episodes on the world and a trainer. Everything
//! is seeded, so the same inputs give the same page.

use ccc_core::agents::{Drive, EnvView};
use ccc_core::metrics::strip_special;
use ccc_core::rng::derive_seed;
use ccc_core::trainer::{build_models, Mode, TrainConfig, TrainData, Trainer};
use ccc_core::world::{vocab, Dir, Episode, Path, World, WorldSet};
use ccc_core::Tape;
use wasm_bindgen::prelude::*;

const EPISODES: usize = 24;
// Longer zig-zag paths can overflow the instruction length limit.
const MAX_PATH: usize = 5;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    worlds: WorldSet,
    episodes: Vec<Episode>,
    current: usize,
    trainer: Trainer,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, width: u32, height: u32, density: f64) -> Result<Demo, String> {
        let seed = seed as u64;
        let (w, h) = (width as usize, height as usize);
        let world = World::generate(derive_seed(seed, &[0]), w, h, density).map_err(err)?;
        let reference = World::generate(derive_seed(seed, &[1]), w, h, density).map_err(err)?;
        let episodes = (0..EPISODES)
            .map(|i| {
                let path = world.sample_path(derive_seed(seed, &[2, i as u64]), 1, MAX_PATH)?;
                let instruction = world.oracle_instruction(&path)?;
                Ok(Episode {
                    world_id: 0,
                    path,
                    instruction: Some(instruction),
                })
            })
            .collect::<ccc_core::Result<Vec<_>>>()
            .map_err(err)?;
        let mut cfg = TrainConfig {
            seed,
            hidden: 24,
            embed: 12,
            ..TrainConfig::default()
        };
        cfg.apply_mode(Mode::Baseline);
        let trainer = Trainer::new(cfg.clone(), build_models(&cfg));
        Ok(Demo {
            seed,
            worlds: WorldSet::new(vec![world, reference]),
            episodes,
            current: 0,
            trainer,
        })
    }

    fn world(&self) -> &World {
        self.worlds.get(0).expect("demo has a world")
    }

    fn episode(&self) -> &Episode {
        &self.episodes[self.current]
    }

    fn path_ref(&self) -> &Path {
        &self.episode().path
    }

    pub fn width(&self) -> u32 {
        self.world().width() as u32
    }

    pub fn height(&self) -> u32 {
        self.world().height() as u32
    }

    /// Per node (row-major), bit `d` set when direction `d` (N, E, S, W) is open.
    pub fn open_mask(&self) -> Vec<u8> {
        let w = self.world();
        (0..w.num_nodes())
            .map(|v| Dir::ALL.iter().fold(0u8, |m, &d| m | (u8::from(w.is_open(v, d)) << d.index())))
            .collect()
    }

    /// Landmark class of each subview, four per node.
    pub fn landmarks(&self) -> Vec<u8> {
        let w = self.world();
        (0..w.num_nodes())
            .flat_map(|v| Dir::ALL.map(|d| w.landmark(v, d) as u8))
            .collect()
    }

    /// `(x, y)` of each node, flattened as x0, y0, x1, y1, ...
    pub fn coords(&self) -> Vec<u32> {
        let w = self.world();
        (0..w.num_nodes())
            .flat_map(|v| {
                let (x, y) = w.coords(v);
                [x as u32, y as u32]
            })
            .collect()
    }

    pub fn path(&self) -> Vec<u32> {
        self.path_ref().nodes.iter().map(|&v| v as u32).collect()
    }

    pub fn instruction(&self) -> String {
        vocab::render(&strip_special(self.episode().instruction.as_deref().unwrap_or(&[])))
    }

    /// Moves to the next labeled episode and returns its index.
    pub fn next_episode(&mut self) -> u32 {
        self.current = (self.current + 1) % self.episodes.len();
        self.current as u32
    }

    pub fn iteration(&self) -> u32 {
        self.trainer.iteration as u32
    }

    /// Runs `steps` iterations of imitation plus speaker likelihood on the
    /// world's episodes; returns the last iteration's imitation loss.
    pub fn train(&mut self, steps: u32) -> Result<f64, String> {
        let data = TrainData {
            worlds: &self.worlds,
            labeled: &self.episodes,
            unlabeled: &[],
            eval: None,
        };
        let until = self.trainer.iteration + steps as u64;
        self.trainer.run(data, until).map_err(err)?;
        Ok(self.trainer.log.rows.last().and_then(|r| r.get("il")).unwrap_or(f64::NAN))
    }

    /// Greedy follower walk for the current instruction.
    pub fn rollout(&self) -> Result<Vec<u32>, String> {
        let env = EnvView::real(self.world());
        let mut tape = Tape::new();
        let ep = self.episode();
        let instruction = ep.instruction.as_deref().unwrap_or(&[]);
        let t = self
            .trainer
            .models
            .follower
            .run(&mut tape, &env, instruction, ep.path.start(), Drive::Greedy)
            .map_err(err)?;
        Ok(t.nodes.iter().map(|&v| v as u32).collect())
    }

    /// Greedy speaker description of the current path.
    pub fn speak(&self) -> Result<String, String> {
        let env = EnvView::real(self.world());
        let mut tape = Tape::new();
        let t = self
            .trainer
            .models
            .speaker
            .run(&mut tape, &env, self.path_ref(), Drive::Greedy)
            .map_err(err)?;
        Ok(vocab::render(&strip_special(&t.tokens)))
    }

    /// Creator gate `λ` for each visited node's four subviews, mixed against
    /// the reference world with draw `draw`. Flattened as node, λN, λE, λS, λW.
    /// `λ = 1` keeps the real subview; `λ = 0` takes the reference mix.
    pub fn counterfactual(&self, draw: u32) -> Result<Vec<f64>, String> {
        let ep = self.episode();
        let mut tape = Tape::new();
        let cf = self
            .trainer
            .models
            .creator
            .make_env(
                &mut tape,
                self.world(),
                ep.instruction.as_deref().unwrap_or(&[]),
                &ep.path,
                self.worlds.get(1).map_err(err)?,
                derive_seed(self.seed, &[3, draw as u64]),
            )
            .map_err(err)?;
        Ok(cf
            .mixes
            .iter()
            .flat_map(|(node, mix)| {
                std::iter::once(*node as f64).chain(mix.lambdas.iter().map(|&l| tape.scalar(l)))
            })
            .collect())
    }
}
