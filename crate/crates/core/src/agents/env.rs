use std::collections::BTreeMap;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::world::{Dir, NodeId, World, FEATURE_DIM};

#[derive(Clone, Debug)]
enum Overlay {
    None,
    Vars(BTreeMap<NodeId, [Var; 4]>),
    Values(BTreeMap<NodeId, [Vec<f64>; 4]>),
}

/// Where a model reads subview embeddings from: a real world, or a world
/// whose scenes at some nodes are replaced (counterfactual). Graph structure
/// always comes from the underlying world.
#[derive(Clone, Debug)]
pub struct EnvView<'w> {
    pub world: &'w World,
    overlay: Overlay,
}

impl<'w> EnvView<'w> {
    pub fn real(world: &'w World) -> Self {
        EnvView {
            world,
            overlay: Overlay::None,
        }
    }

    /// Replacement scenes that live on a tape (differentiable).
    pub fn with_vars(world: &'w World, scenes: BTreeMap<NodeId, [Var; 4]>) -> Self {
        EnvView {
            world,
            overlay: Overlay::Vars(scenes),
        }
    }

    /// Replacement scenes as plain values.
    pub fn with_values(world: &'w World, scenes: BTreeMap<NodeId, [Vec<f64>; 4]>) -> Self {
        EnvView {
            world,
            overlay: Overlay::Values(scenes),
        }
    }

    pub fn is_counterfactual(&self) -> bool {
        !matches!(self.overlay, Overlay::None)
    }

    pub fn subview(&self, tape: &mut Tape, node: NodeId, d: Dir) -> Var {
        match &self.overlay {
            Overlay::Vars(m) if m.contains_key(&node) => m[&node][d.index()],
            Overlay::Values(m) if m.contains_key(&node) => {
                tape.constant_vec(m[&node][d.index()].clone())
            }
            _ => tape.constant_vec(self.world.subview_features(node, d)),
        }
    }

    pub fn subview_values(&self, tape: &Tape, node: NodeId, d: Dir) -> Vec<f64> {
        match &self.overlay {
            Overlay::Vars(m) if m.contains_key(&node) => tape.value(m[&node][d.index()]).data().to_vec(),
            Overlay::Values(m) if m.contains_key(&node) => m[&node][d.index()].clone(),
            _ => self.world.subview_features(node, d),
        }
    }

    pub fn panorama(&self, tape: &mut Tape, node: NodeId) -> [Var; 4] {
        Dir::ALL.map(|d| self.subview(tape, node, d))
    }

    /// Max-pool of the four subviews: the scene feature of a node.
    pub fn pooled(&self, tape: &mut Tape, node: NodeId) -> Result<Var> {
        let p = self.panorama(tape, node);
        tape.max_pool(&p)
    }

    pub fn zero(tape: &mut Tape) -> Var {
        tape.constant_vec(vec![0.0; FEATURE_DIM])
    }
}
