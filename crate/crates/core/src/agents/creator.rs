//! Counterfactual environment creator.
//!
//! A descriptor `u` is read off an LSTM over the path, then every subview
//! `v_k` of a visited node is blended with an attention summary `g_k` of a
//! reference scene: `v̄_k = λ_k v_k + (1 − λ_k) g_k` with
//! `λ_k = sigmoid(uᵀ W3 v_k + b)`.

use std::collections::BTreeMap;

use rand::Rng as _;

use super::env::EnvView;
use super::nn::{self, Dims, LstmState};
use crate::error::{Error, Result};
use crate::rng::{purpose, rng_from, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::world::{NodeId, Path, Token, World, FEATURE_DIM};

pub const TAG: &str = "creator";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CreatorMode {
    /// Gated mixing with a reference scene.
    Reference,
    /// No reference: each subview of a visited node is zeroed with
    /// probability `p`. Has no trainable effect.
    RandomMask { p: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CreatorConfig {
    pub dims: Dims,
    pub mode: CreatorMode,
}

impl CreatorConfig {
    pub fn new(dims: Dims) -> Self {
        CreatorConfig {
            dims,
            mode: CreatorMode::Reference,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Creator {
    pub config: CreatorConfig,
    pub store: ParamStore,
}

/// Result of mixing one four-subview scene.
#[derive(Clone, Copy, Debug)]
pub struct MixedScene {
    pub mixed: [Var; 4],
    pub lambdas: [Var; 4],
    /// Attention of each subview over the reference subviews.
    pub q: [Var; 4],
    pub g: [Var; 4],
}

/// A counterfactual environment: replacement scenes for visited nodes.
#[derive(Clone, Debug, Default)]
pub struct Counterfactual {
    pub scenes: BTreeMap<NodeId, [Var; 4]>,
    /// Per visited node in path order (first visit only). Empty in
    /// random-mask mode.
    pub mixes: Vec<(NodeId, MixedScene)>,
}

impl Counterfactual {
    pub fn view<'w>(&self, world: &'w World) -> EnvView<'w> {
        EnvView::with_vars(world, self.scenes.clone())
    }

    /// All gates along the path, node by node, N/E/S/W.
    pub fn lambdas(&self) -> Vec<Var> {
        self.mixes.iter().flat_map(|(_, m)| m.lambdas).collect()
    }

    /// Scene values, detached from the tape.
    pub fn values(&self, tape: &Tape) -> BTreeMap<NodeId, [Vec<f64>; 4]> {
        self.scenes
            .iter()
            .map(|(&n, s)| (n, s.map(|v| tape.value(v).data().to_vec())))
            .collect()
    }
}

impl Creator {
    pub fn new(config: CreatorConfig, rng: &mut Rng) -> Self {
        let d = config.dims;
        let mut store = ParamStore::new(TAG);
        nn::init_token_encoder(&mut store, "instr", d, rng);
        nn::init_lstm(&mut store, "path.lstm", 2 * FEATURE_DIM + d.hidden, d.hidden, rng);
        store.insert("w3", Tensor::uniform_init(&[d.hidden, FEATURE_DIM], rng));
        store.insert("w3.b", Tensor::scalar(0.0));
        Creator { config, store }
    }

    /// Compact descriptor `u = h_T` of an (instruction, path) pair in the
    /// real world.
    pub fn descriptor(&self, tape: &mut Tape, world: &World, instruction: &[Token], path: &Path) -> Result<Var> {
        if instruction.is_empty() {
            return Err(Error::InvalidInstruction("empty instruction".into()));
        }
        let h = self.config.dims.hidden;
        let (memory, _) = nn::encode_tokens(tape, &self.store, "instr", instruction, h)?;
        let x_bar = memory.mean(tape)?;
        let env = EnvView::real(world);
        let mut state = LstmState::zeros(tape, h);
        for (t, &node) in path.nodes.iter().enumerate() {
            let scene = env.pooled(tape, node)?;
            let action = match path.moves.get(t) {
                Some(&d) => env.subview(tape, node, d),
                None => EnvView::zero(tape),
            };
            let x = tape.concat(&[scene, action, x_bar])?;
            state = nn::lstm_step(tape, &self.store, "path.lstm", x, state)?;
        }
        Ok(state.h)
    }

    pub fn mix_scene(&self, tape: &mut Tape, u: Var, scene: [Var; 4], reference: [Var; 4]) -> Result<MixedScene> {
        let w3 = tape.param(&self.store, "w3")?;
        let bias = tape.param(&self.store, "w3.b")?;
        let r = tape.stack(&reference)?;
        let r_t = tape.transpose(r)?;
        let mut out = MixedScene {
            mixed: scene,
            lambdas: scene,
            q: scene,
            g: scene,
        };
        for k in 0..4 {
            let v = scene[k];
            if tape.shape(v) != [FEATURE_DIM] {
                return Err(Error::Shape {
                    op: "creator-mix-scene",
                    shapes: vec![tape.shape(v).to_vec(), vec![FEATURE_DIM]],
                });
            }
            let scores = tape.matmul(r, v)?;
            let q = tape.softmax(scores)?;
            let g = tape.matmul(r_t, q)?;
            let wv = tape.matmul(w3, v)?;
            let logit = tape.dot(u, wv)?;
            let logit = tape.add(logit, bias)?;
            let lambda = tape.sigmoid(logit);
            // λ v + (1 − λ) g = g + λ (v − g)
            let diff = tape.sub(v, g)?;
            let scaled = tape.scale_by(lambda, diff)?;
            out.mixed[k] = tape.add(g, scaled)?;
            out.lambdas[k] = lambda;
            out.q[k] = q;
            out.g[k] = g;
        }
        Ok(out)
    }

    /// Builds `Ē` for the path. Each distinct visited node is paired with a
    /// seeded-uniform node of `reference` and its scene mixed against it.
    pub fn make_env(
        &self,
        tape: &mut Tape,
        world: &World,
        instruction: &[Token],
        path: &Path,
        reference: &World,
        seed: u64,
    ) -> Result<Counterfactual> {
        let mut rng = rng_from(seed, &[purpose::REFERENCE]);
        let env = EnvView::real(world);
        let mut cf = Counterfactual::default();
        match self.config.mode {
            CreatorMode::Reference => {
                let u = self.descriptor(tape, world, instruction, path)?;
                let ref_env = EnvView::real(reference);
                for &node in &path.nodes {
                    if cf.scenes.contains_key(&node) {
                        continue;
                    }
                    let r_node = rng.gen_range(0..reference.num_nodes());
                    let scene = env.panorama(tape, node);
                    let r_scene = ref_env.panorama(tape, r_node);
                    let mixed = self.mix_scene(tape, u, scene, r_scene)?;
                    cf.scenes.insert(node, mixed.mixed);
                    cf.mixes.push((node, mixed));
                }
            }
            CreatorMode::RandomMask { p } => {
                let mut mask_rng = rng_from(seed, &[purpose::MASK]);
                for &node in &path.nodes {
                    if cf.scenes.contains_key(&node) {
                        continue;
                    }
                    let scene = crate::world::Dir::ALL.map(|d| {
                        let mut v = world.subview_features(node, d);
                        if mask_rng.gen::<f64>() < p {
                            v.iter_mut().for_each(|x| *x = 0.0);
                        }
                        v
                    });
                    let vars = scene.map(|v| tape.constant_vec(v));
                    cf.scenes.insert(node, vars);
                }
            }
        }
        Ok(cf)
    }
}
