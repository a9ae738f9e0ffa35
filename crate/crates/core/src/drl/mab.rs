//! ε-greedy multi-armed bandit over the same discrete action set. It ignores
//! the state and tracks one running mean reward per arm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, TrainStats};
use super::replay::Transition;
use crate::rng::{substream, Stream};

/// Pull count and running mean reward of one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: u64,
    pub mean: f64,
}

impl ArmStats {
    pub fn update(&mut self, reward: f64) {
        self.pulls += 1;
        self.mean += (reward - self.mean) / self.pulls as f64;
    }

    /// Unpulled arms rank above every pulled one.
    fn value(&self) -> f64 {
        if self.pulls == 0 {
            f64::INFINITY
        } else {
            self.mean
        }
    }
}

/// Uniform arm with probability `epsilon`, otherwise the best running mean
/// (lowest index on ties, untried arms first).
pub fn mab_select<R: Rng + ?Sized>(arms: &[ArmStats], epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < epsilon {
        return rng.random_range(0..arms.len());
    }
    let mut best = 0;
    for (i, a) in arms.iter().enumerate() {
        if a.value() > arms[best].value() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanditAgent {
    pub arms: Vec<ArmStats>,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

fn default_rng() -> ChaCha8Rng {
    substream(0, Stream::Agent, 0)
}

impl BanditAgent {
    pub fn new(num_arms: usize, seed: u64) -> Self {
        Self {
            arms: vec![ArmStats::default(); num_arms],
            rng: substream(seed, Stream::Agent, 1),
        }
    }

    pub fn reseed(&mut self, seed: u64, epoch: u64) {
        self.rng = substream(seed, Stream::Agent, 2 + epoch);
    }
}

impl Agent for BanditAgent {
    fn act(&mut self, _state: &[f64], epsilon: f64) -> usize {
        mab_select(&self.arms, epsilon, &mut self.rng)
    }

    fn greedy(&self, _state: &[f64]) -> usize {
        let mut best = 0;
        for (i, a) in self.arms.iter().enumerate() {
            if a.value() > self.arms[best].value() {
                best = i;
            }
        }
        best
    }

    fn observe(&mut self, transition: Transition) -> Option<TrainStats> {
        self.arms[transition.action].update(transition.reward);
        None
    }
}
