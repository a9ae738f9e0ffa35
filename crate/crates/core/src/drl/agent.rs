//! Value-based agents: DQN and double DQN over a shared Q-network, plus the
//! common interface the training loop drives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mab::BanditAgent;
use super::nn::{Adam, Architecture, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use crate::rng::{substream, Stream};
use crate::scenario::RlParams;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice: a uniform action with probability `epsilon`, otherwise the
/// greedy one. Always draws exactly one uniform number first so that the random
/// stream does not depend on the network.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < epsilon {
        rng.random_range(0..net.outputs)
    } else {
        argmax(&net.forward(state))
    }
}

/// `y = r + ξ max_a Q_target(s', a)`.
pub fn dqn_target(reward: f64, next_target_q: &[f64], discount: f64) -> f64 {
    let best = next_target_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reward + discount * best
}

/// `y = r + ξ Q_target(s', argmax_a Q_online(s', a))`: the online network picks,
/// the target network evaluates.
pub fn ddqn_target(reward: f64, next_online_q: &[f64], next_target_q: &[f64], discount: f64) -> f64 {
    reward + discount * next_target_q[argmax(next_online_q)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Dqn,
    DoubleDqn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ddqn,
    Dqn,
    Mab,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ddqn => "ddqn",
            AgentKind::Dqn => "dqn",
            AgentKind::Mab => "mab",
        }
    }
}

/// Outcome of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    /// Whether the DQN target was at least the double-DQN target for every
    /// transition of the batch.
    pub dqn_dominates: bool,
}

/// Interface shared by the learned agents and the bandit.
pub trait Agent {
    fn act(&mut self, state: &[f64], epsilon: f64) -> usize;
    /// Greedy action without touching any random stream.
    fn greedy(&self, state: &[f64]) -> usize;
    /// Stores a transition and performs whatever learning it triggers.
    fn observe(&mut self, transition: Transition) -> Option<TrainStats>;
}

/// Online and target networks with Adam, a replay buffer and a sync counter.
#[derive(Debug, Clone)]
pub struct QAgent {
    pub rule: TargetRule,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: Adam,
    pub replay: ReplayBuffer,
    pub discount: f64,
    pub batch_size: usize,
    pub target_sync: usize,
    pub reward_scale: f64,
    /// Environment steps observed so far.
    pub steps: u64,
    /// Batches on which DQN targets were compared with double-DQN targets,
    /// and how many of those broke the ordering.
    pub target_checks: u64,
    pub target_violations: u64,
    act_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl QAgent {
    pub fn new(rule: TargetRule, architecture: Architecture, inputs: usize, actions: usize, rl: &RlParams, seed: u64) -> Self {
        let mut init_rng = substream(seed, Stream::Agent, 0);
        let online = QNetwork::new(architecture, inputs, actions, &mut init_rng);
        let target = online.clone();
        let optimizer = Adam::new(online.num_params(), rl.learning_rate);
        Self {
            rule,
            online,
            target,
            optimizer,
            replay: ReplayBuffer::new(rl.replay_capacity),
            discount: rl.discount,
            batch_size: rl.batch_size,
            target_sync: rl.target_sync.max(1),
            reward_scale: rl.reward_scale,
            steps: 0,
            target_checks: 0,
            target_violations: 0,
            act_rng: substream(seed, Stream::Agent, 1),
            replay_rng: substream(seed, Stream::Replay, 0),
        }
    }

    /// Network shape used for a scenario's agents.
    pub fn architecture_for(rl: &RlParams) -> Architecture {
        Architecture::Residual {
            hidden: rl.hidden_width,
            blocks: rl.residual_blocks,
        }
    }

    /// Reseeds the exploration and replay streams, used when resuming.
    pub fn reseed(&mut self, seed: u64, epoch: u64) {
        self.act_rng = substream(seed, Stream::Agent, 2 + epoch);
        self.replay_rng = substream(seed, Stream::Replay, 1 + epoch);
    }

    /// Regression targets for a batch under this agent's rule. Also compares
    /// the two rules on the same batch.
    pub fn targets(&self, batch: &[&Transition]) -> (Vec<f64>, bool) {
        let mut targets = Vec::with_capacity(batch.len());
        let mut dominates = true;
        for t in batch {
            let r = t.reward / self.reward_scale;
            let next_target = self.target.forward(&t.next_state);
            let plain = dqn_target(r, &next_target, self.discount);
            let double = match self.rule {
                TargetRule::DoubleDqn => {
                    ddqn_target(r, &self.online.forward(&t.next_state), &next_target, self.discount)
                }
                TargetRule::Dqn => plain,
            };
            if plain < double {
                dominates = false;
            }
            targets.push(match self.rule {
                TargetRule::Dqn => plain,
                TargetRule::DoubleDqn => double,
            });
        }
        (targets, dominates)
    }

    /// One Adam step on a uniformly sampled batch; `None` until the buffer
    /// holds a full batch.
    pub fn train_step(&mut self) -> Option<TrainStats> {
        let batch = self.replay.sample(self.batch_size, &mut self.replay_rng)?;
        let (targets, dqn_dominates) = self.targets(&batch);
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grad) = self.online.mse_loss_grad(&states, &actions, &targets);
        self.optimizer.step(&mut self.online.params, &grad);
        if self.rule == TargetRule::DoubleDqn {
            self.target_checks += 1;
            if !dqn_dominates {
                self.target_violations += 1;
            }
        }
        Some(TrainStats { loss, dqn_dominates })
    }
}

impl Agent for QAgent {
    fn act(&mut self, state: &[f64], epsilon: f64) -> usize {
        select_action(&self.online, state, epsilon, &mut self.act_rng)
    }

    fn greedy(&self, state: &[f64]) -> usize {
        argmax(&self.online.forward(state))
    }

    fn observe(&mut self, transition: Transition) -> Option<TrainStats> {
        self.replay.push(transition);
        self.steps += 1;
        let stats = self.train_step();
        if self.steps.is_multiple_of(self.target_sync as u64) {
            self.target.copy_from(&self.online);
        }
        stats
    }
}

/// Any of the three agents, as the training loop sees them.
#[derive(Debug, Clone)]
pub enum AnyAgent {
    Q(Box<QAgent>),
    Bandit(BanditAgent),
}

impl AnyAgent {
    pub fn new(kind: AgentKind, inputs: usize, actions: usize, rl: &RlParams, seed: u64) -> Self {
        let arch = QAgent::architecture_for(rl);
        match kind {
            AgentKind::Ddqn => AnyAgent::Q(Box::new(QAgent::new(TargetRule::DoubleDqn, arch, inputs, actions, rl, seed))),
            AgentKind::Dqn => AnyAgent::Q(Box::new(QAgent::new(TargetRule::Dqn, arch, inputs, actions, rl, seed))),
            AgentKind::Mab => AnyAgent::Bandit(BanditAgent::new(actions, seed)),
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AnyAgent::Q(q) => match q.rule {
                TargetRule::Dqn => AgentKind::Dqn,
                TargetRule::DoubleDqn => AgentKind::Ddqn,
            },
            AnyAgent::Bandit(_) => AgentKind::Mab,
        }
    }

    pub fn checkpoint(&self, epsilon: f64, episode: usize) -> Checkpoint {
        match self {
            AnyAgent::Q(q) => Checkpoint {
                kind: self.kind(),
                epsilon,
                episode,
                online: Some(q.online.clone()),
                target: Some(q.target.clone()),
                optimizer: Some(q.optimizer.clone()),
                steps: q.steps,
                bandit: None,
            },
            AnyAgent::Bandit(b) => Checkpoint {
                kind: AgentKind::Mab,
                epsilon,
                episode,
                online: None,
                target: None,
                optimizer: None,
                steps: 0,
                bandit: Some(b.clone()),
            },
        }
    }

    /// Restores learned parameters from `cp`. The replay buffer starts empty.
    pub fn restore(&mut self, cp: &Checkpoint, seed: u64) -> Result<(), String> {
        if cp.kind != self.kind() {
            return Err(format!("checkpoint holds a {} agent, not {}", cp.kind.name(), self.kind().name()));
        }
        match self {
            AnyAgent::Q(q) => {
                let (Some(online), Some(target)) = (&cp.online, &cp.target) else {
                    return Err("checkpoint is missing network parameters".into());
                };
                if online.params.len() != q.online.params.len() || online.architecture != q.online.architecture {
                    return Err("checkpoint network does not match the scenario".into());
                }
                q.online = online.clone();
                q.target = target.clone();
                if let Some(opt) = &cp.optimizer {
                    q.optimizer = opt.clone();
                }
                q.steps = cp.steps;
                q.reseed(seed, cp.episode as u64);
            }
            AnyAgent::Bandit(b) => {
                let Some(saved) = &cp.bandit else {
                    return Err("checkpoint is missing bandit statistics".into());
                };
                *b = saved.clone();
                b.reseed(seed, cp.episode as u64);
            }
        }
        Ok(())
    }
}

impl Agent for AnyAgent {
    fn act(&mut self, state: &[f64], epsilon: f64) -> usize {
        match self {
            AnyAgent::Q(q) => q.act(state, epsilon),
            AnyAgent::Bandit(b) => b.act(state, epsilon),
        }
    }

    fn greedy(&self, state: &[f64]) -> usize {
        match self {
            AnyAgent::Q(q) => q.greedy(state),
            AnyAgent::Bandit(b) => b.greedy(state),
        }
    }

    fn observe(&mut self, transition: Transition) -> Option<TrainStats> {
        match self {
            AnyAgent::Q(q) => q.observe(transition),
            AnyAgent::Bandit(b) => b.observe(transition),
        }
    }
}

/// Serializable training state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: AgentKind,
    pub epsilon: f64,
    /// Number of completed training episodes.
    pub episode: usize,
    pub online: Option<QNetwork>,
    pub target: Option<QNetwork>,
    pub optimizer: Option<Adam>,
    pub steps: u64,
    pub bandit: Option<BanditAgent>,
}
