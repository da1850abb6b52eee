//! The parametric models: follower, speaker, creator, discriminator and the
//! value head used by the follower's actor-critic loss.

pub mod creator;
pub mod critic;
pub mod discriminator;
pub mod env;
pub mod follower;
pub mod nn;
pub mod speaker;

pub use creator::{Creator, CreatorConfig, CreatorMode, Counterfactual, MixedScene};
pub use critic::Critic;
pub use discriminator::Discriminator;
pub use env::EnvView;
pub use follower::{Follower, FollowerConfig, FollowerKind, FollowerTrace};
pub use nn::Dims;
pub use speaker::{Speaker, SpeakerConfig, SpeakerTrace};

use crate::rng::{purpose, rng_from};
use crate::tensor::ParamStore;

/// How a rollout picks its actions.
pub enum Drive<'a> {
    /// Score a fixed sequence.
    Teacher(&'a [usize]),
    Greedy,
    Sample(&'a mut crate::rng::Rng),
}

/// All trainable models of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub follower: Follower,
    pub speaker: Speaker,
    pub creator: Creator,
    pub discriminator: Discriminator,
    pub critic: Critic,
}

impl Models {
    pub fn new(follower: FollowerConfig, speaker: SpeakerConfig, creator: CreatorConfig, seed: u64) -> Self {
        let dims = follower.dims;
        Models {
            follower: Follower::new(follower, &mut rng_from(seed, &[purpose::INIT, 0])),
            speaker: Speaker::new(speaker, &mut rng_from(seed, &[purpose::INIT, 1])),
            creator: Creator::new(creator, &mut rng_from(seed, &[purpose::INIT, 2])),
            discriminator: Discriminator::new(dims, &mut rng_from(seed, &[purpose::INIT, 3])),
            critic: Critic::new(dims, &mut rng_from(seed, &[purpose::INIT, 4])),
        }
    }

    pub fn stores(&self) -> [&ParamStore; 5] {
        [
            &self.follower.store,
            &self.speaker.store,
            &self.creator.store,
            &self.discriminator.store,
            &self.critic.store,
        ]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore; 5] {
        [
            &mut self.follower.store,
            &mut self.speaker.store,
            &mut self.creator.store,
            &mut self.discriminator.store,
            &mut self.critic.store,
        ]
    }
}
