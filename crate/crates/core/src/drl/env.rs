//! Slot-level environment: the agent steers the surface and admission, the
//! per-slot solvers pick offloading ratios and transmit powers.
//!
//! Actions index the 3⁴ combinations of one increment per controlled vector,
//! in the digit order (energy split, phase, amplitude gain, admission). Digit 0
//! shrinks, 1 keeps, 2 grows. The energy split, gain and admission ratio are
//! scaled by `1 − δ`, `1` or `1 + δ`. Phases live on a cyclic grid, so their
//! digit adds `−m`, `0` or `+m` grid steps to element `m`, tilting the phase
//! profile of both sides by one grid step per element.

use serde::Serialize;

use crate::channel::{link_budget, slot_channels, ChannelError, ChannelRealization, LinkBudget, Noise, RisState};
use crate::compute::slot_cost;
use crate::offload_solver::{solve_offloading, OffloadError, OffloadProblem, OffloadUser};
use crate::power_control::{sfp_solve, PowerProblem, SfpOptions};
use crate::queueing::drift_bound;
use crate::rng::{substream, Stream};
use crate::scenario::{sample_users, OffloadMode, Population, Scenario};

pub const NUM_ACTIONS: usize = 81;
/// The action whose four increments all keep the current value.
pub const IDENTITY_ACTION: usize = 40;

/// Decoded action: one increment per controlled vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment {
    pub split: f64,
    /// Grid steps added per element index.
    pub phase_tilt: i64,
    pub gain: f64,
    pub admission: f64,
}

pub fn decode_action(action: usize, step: f64) -> Increment {
    assert!(action < NUM_ACTIONS, "action {action} out of range");
    let digit = |place: u32| (action / 3usize.pow(place)) % 3;
    let factor = |d: usize| 1.0 + step * (d as f64 - 1.0);
    Increment {
        split: factor(digit(3)),
        phase_tilt: digit(2) as i64 - 1,
        gain: factor(digit(1)),
        admission: factor(digit(0)),
    }
}

/// `F(x)`: the revenue `p0` for a satisfied constraint, the violation itself otherwise.
pub fn slack_reward(x: f64, revenue: f64) -> f64 {
    if x >= 0.0 {
        revenue
    } else {
        x
    }
}

/// Inputs of the per-slot reward, already in scenario units.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTerms {
    /// Drift-plus-penalty value.
    pub drift_penalty: f64,
    /// `Q − S` per queue.
    pub queue_slack: Vec<f64>,
    /// Surface budget minus usage.
    pub power_slack: f64,
    /// `D − t` per user.
    pub latency_slack: Vec<f64>,
    /// `J − j` per user.
    pub admission_slack: Vec<f64>,
}

/// `sign · Σ_k z₁ Ë + Σ z₂F(Q−S) + z₃F(budget slack) + Σ z₄F(D−t) + Σ z₅F(J−j)`;
/// the first sum runs over users.
pub fn reward(terms: &RewardTerms, weights: [f64; 5], revenue: f64, sign: f64) -> f64 {
    let [z1, z2, z3, z4, z5] = weights;
    let users = terms.latency_slack.len() as f64;
    let f = |x: f64| slack_reward(x, revenue);
    sign * users * z1 * terms.drift_penalty
        + terms.queue_slack.iter().map(|&x| z2 * f(x)).sum::<f64>()
        + z3 * f(terms.power_slack)
        + terms.latency_slack.iter().map(|&x| z4 * f(x)).sum::<f64>()
        + terms.admission_slack.iter().map(|&x| z5 * f(x)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueModel {
    /// One queue per user.
    PerUser,
    /// A single aggregate queue at the edge server.
    Centralized,
}

/// Switches that turn the environment into the queue-management baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvOptions {
    pub queue_model: QueueModel,
    /// When off every arrival is admitted (`j = J`).
    pub admission_control: bool,
    /// When off the reward carries only the energy penalty, not the drift.
    pub drift_in_reward: bool,
    /// When off the backlog features of the state are zero.
    pub queue_in_state: bool,
    /// Keep the slot-0 channel for the whole episode.
    pub freeze_channels: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self {
            queue_model: QueueModel::PerUser,
            admission_control: true,
            drift_in_reward: true,
            queue_in_state: true,
            freeze_channels: false,
        }
    }
}

impl EnvOptions {
    /// Myopic controller: sees no backlog, ignores the drift and admits all.
    pub fn greedy() -> Self {
        Self {
            admission_control: false,
            drift_in_reward: false,
            queue_in_state: false,
            ..Self::default()
        }
    }

    pub fn centralized() -> Self {
        Self {
            queue_model: QueueModel::Centralized,
            ..Self::default()
        }
    }
}

/// Constraint families whose violations are counted rather than prevented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Violations {
    pub latency: u32,
    pub budget: u32,
    /// Slots in which a queue held less than the user's demand.
    pub queue: u32,
    /// Slots in which a solver fell back to a best-effort decision.
    pub solver: u32,
}

impl Violations {
    pub fn total(&self) -> u32 {
        self.latency + self.budget + self.queue + self.solver
    }

    pub fn add(&mut self, other: &Violations) {
        self.latency += other.latency;
        self.budget += other.budget;
        self.queue += other.queue;
        self.solver += other.solver;
    }
}

/// Everything decided and measured in one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotDecision {
    pub slot: usize,
    pub action: usize,
    pub ratios: Vec<f64>,
    pub powers: Vec<f64>,
    pub beta_r: Vec<f64>,
    pub phi_r: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub amp: Vec<f64>,
    pub gains: Vec<f64>,
    /// Backlog per queue at the start of the slot, in bits.
    pub backlog: Vec<f64>,
    pub demand: Vec<f64>,
    pub served: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub admitted: Vec<f64>,
    pub energy: Vec<f64>,
    pub latency: Vec<f64>,
    /// Energy after each power-control iteration for the chosen plan.
    pub sfp_trace: Vec<f64>,
    pub ris_usage: f64,
    pub drift_penalty: f64,
    pub reward: f64,
    pub violations: Violations,
}

impl SlotDecision {
    pub fn total_energy(&self) -> f64 {
        self.energy.iter().sum()
    }
}

pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub decision: SlotDecision,
}

#[derive(Debug, Clone)]
pub struct Env {
    sc: Scenario,
    options: EnvOptions,
    noise: Noise,
    sfp: SfpOptions,
    episode_seed: u64,
    population: Population,
    ris: RisState,
    phase_r: Vec<i64>,
    phase_t: Vec<i64>,
    admission: f64,
    backlog: Vec<f64>,
    slot: usize,
    channel: ChannelRealization,
    links: LinkBudget,
    demand: Vec<f64>,
    arrivals: Vec<f64>,
    last_powers: Option<Vec<f64>>,
}

struct SlotPlan {
    ratios: Vec<f64>,
    powers: Vec<f64>,
    sfp_trace: Vec<f64>,
    solver_fallback: bool,
    budget_infeasible: bool,
}

impl Env {
    /// Fresh episode: new users and channels drawn from `episode_seed`, even
    /// energy split, zero phases, unit gain, full admission, empty queues.
    pub fn reset(sc: &Scenario, options: EnvOptions, episode_seed: u64) -> Result<Self, ChannelError> {
        let population = sample_users(sc, &mut substream(episode_seed, Stream::Users, 0));
        let channel = slot_channels(sc, &population.users, episode_seed, 0)?;
        let ris = RisState::initial(sc.num_elements, sc.ris_mode);
        let noise = Noise::for_scenario(sc);
        let links = link_budget(&channel, &ris, noise)?;
        let queues = match options.queue_model {
            QueueModel::PerUser => sc.num_users,
            QueueModel::Centralized => 1,
        };
        Ok(Self {
            noise,
            sfp: SfpOptions::from_scenario(sc),
            episode_seed,
            demand: population.tasks(0),
            arrivals: population.arrivals(0),
            population,
            ris,
            phase_r: vec![0; sc.num_elements],
            phase_t: vec![0; sc.num_elements],
            admission: 1.0,
            backlog: vec![0.0; queues],
            slot: 0,
            channel,
            links,
            last_powers: None,
            sc: sc.clone(),
            options,
        })
    }

    pub fn state_dim(sc: &Scenario, options: EnvOptions) -> usize {
        let queues = match options.queue_model {
            QueueModel::PerUser => sc.num_users,
            QueueModel::Centralized => 1,
        };
        sc.num_users + 4 * sc.num_elements + queues + 1
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn ris(&self) -> &RisState {
        &self.ris
    }

    pub fn backlog(&self) -> &[f64] {
        &self.backlog
    }

    pub fn admission_ratio(&self) -> f64 {
        self.admission
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn links(&self) -> &LinkBudget {
        &self.links
    }

    /// Features, each scaled to roughly unit range:
    /// per-user `log₁₀(1 + g p_max / σ²) / 3`; per-element reflect split;
    /// both phase profiles as fractions of a turn; gain mapped from
    /// `[1, α_max]` to `[0, 1]`; `ln(1 + Q / S̄)` per queue; the admission ratio.
    pub fn state(&self) -> Vec<f64> {
        let sc = &self.sc;
        let mut s = Vec::with_capacity(Self::state_dim(sc, self.options));
        for &g in &self.links.gain {
            s.push((1.0 + g * sc.user_power_max / sc.bs_noise).log10() / 3.0);
        }
        s.extend(self.ris.beta_r.iter().copied());
        let turn = std::f64::consts::TAU;
        s.extend(self.ris.phi_r.iter().map(|p| p / turn));
        s.extend(self.ris.phi_t.iter().map(|p| p / turn));
        let span = sc.amplification_max - 1.0;
        s.extend(self.ris.amp.iter().map(|a| if span > 0.0 { (a - 1.0) / span } else { 0.0 }));
        let mean_task = sc.mean_task_bits() * self.demand.len() as f64 / self.backlog.len() as f64;
        for &q in &self.backlog {
            s.push(if self.options.queue_in_state { (q / mean_task).ln_1p() } else { 0.0 });
        }
        s.push(self.admission);
        s
    }

    fn apply(&mut self, inc: Increment) {
        let sc = &self.sc;
        let levels = 1i64 << sc.phase_bits;
        let step = sc.phase_step();
        for m in 0..sc.num_elements {
            self.ris.beta_r[m] *= inc.split;
            self.ris.amp[m] *= inc.gain;
            let shift = inc.phase_tilt * m as i64;
            self.phase_r[m] = (self.phase_r[m] + shift).rem_euclid(levels);
            self.phase_t[m] = (self.phase_t[m] + shift).rem_euclid(levels);
            self.ris.phi_r[m] = self.phase_r[m] as f64 * step;
            self.ris.phi_t[m] = self.phase_t[m] as f64 * step;
        }
        self.ris.project(sc.ris_mode, sc.amplification_max, sc.phase_bits);
        if self.options.admission_control {
            self.admission = (self.admission * inc.admission).clamp(0.0, 1.0);
        }
    }

    /// Bits executed this slot, `min(S, Q)` per user. With one aggregate queue
    /// the available backlog is shared in proportion to demand.
    fn served(&self) -> Vec<f64> {
        match self.options.queue_model {
            QueueModel::PerUser => self.demand.iter().zip(&self.backlog).map(|(&s, &q)| s.min(q)).collect(),
            QueueModel::Centralized => {
                let total: f64 = self.demand.iter().sum();
                let share = if total > 0.0 { (self.backlog[0] / total).min(1.0) } else { 0.0 };
                self.demand.iter().map(|&s| s * share).collect()
            }
        }
    }

    fn offload_problem(&self, served: &[f64], powers: &[f64], rates: &[f64]) -> OffloadProblem {
        OffloadProblem {
            users: self
                .population
                .users
                .iter()
                .enumerate()
                .map(|(k, u)| OffloadUser {
                    bits: served[k],
                    cycles_per_bit: u.cycles_per_bit,
                    cpu_freq: u.cpu_freq,
                    deadline: u.deadline,
                    power: powers[k],
                    rate: rates[k],
                })
                .collect(),
            kappa: self.sc.cpu_coeff,
            mec_capacity: self.sc.mec_capacity,
        }
    }

    /// Offloading ratios at fixed powers; users without a usable link stay local.
    fn offload_at(&self, served: &[f64], powers: &[f64]) -> (Vec<f64>, bool) {
        let rates = rates_at(&self.sc, &self.links, powers);
        let prob = self.offload_problem(served, powers, &rates);
        let (mut ratios, fallback) = match solve_offloading(&prob) {
            Ok(sol) => (sol.ratios, sol.capacity_violated),
            Err(OffloadError::AllInfeasible { fallback, .. }) => (fallback.ratios, true),
        };
        for (k, o) in ratios.iter_mut().enumerate() {
            if rates[k] <= 0.0 || served[k] <= 0.0 {
                *o = 0.0;
            }
        }
        (ratios, fallback)
    }

    fn plan(&self, served: &[f64]) -> SlotPlan {
        let sc = &self.sc;
        let users = &self.population.users;
        let k = users.len();
        if served.iter().all(|&s| s <= 0.0) {
            return SlotPlan {
                ratios: vec![0.0; k],
                powers: vec![sc.user_power_min; k],
                sfp_trace: Vec::new(),
                solver_fallback: false,
                budget_infeasible: false,
            };
        }
        let warm = self.last_powers.as_deref();
        match sc.offload_mode {
            OffloadMode::Full => {
                let ratios: Vec<f64> = (0..k)
                    .map(|i| if self.links.gain[i] > 0.0 && served[i] > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                let prob = PowerProblem::from_slot(sc, &self.links, users, served, &ratios);
                let sol = sfp_solve(&prob, &self.sfp, warm);
                SlotPlan {
                    ratios,
                    budget_infeasible: sol.budget_infeasible,
                    sfp_trace: sol.trace,
                    powers: sol.powers,
                    solver_fallback: false,
                }
            }
            OffloadMode::Partial => {
                let reference = warm.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.5 * sc.user_power_max; k]);
                let (first_ratios, first_fallback) = self.offload_at(served, &reference);
                let prob = PowerProblem::from_slot(sc, &self.links, users, served, &first_ratios);
                let first = sfp_solve(&prob, &self.sfp, warm);
                let (ratios, fallback) = self.offload_at(served, &first.powers);
                let moved = ratios.iter().zip(&first_ratios).any(|(a, b)| (a - b).abs() > 1e-9);
                if !moved {
                    return SlotPlan {
                        ratios,
                        budget_infeasible: first.budget_infeasible,
                        sfp_trace: first.trace,
                        powers: first.powers,
                        solver_fallback: fallback,
                    };
                }
                let prob2 = PowerProblem::from_slot(sc, &self.links, users, served, &ratios);
                let second = sfp_solve(&prob2, &self.sfp, Some(&first.powers));
                let late = |p: &PowerProblem, powers: &[f64], ratios: &[f64]| -> usize {
                    let rates = p.rates(powers);
                    (0..k)
                        .filter(|&i| {
                            let lat = latency_of(sc, &users[i], ratios[i], served[i], rates[i]);
                            lat > users[i].deadline * (1.0 + 1e-9)
                        })
                        .count()
                };
                let first_score = (late(&prob, &first.powers, &first_ratios), first.energy());
                let second_score = (late(&prob2, &second.powers, &ratios), second.energy());
                if second_score.0 < first_score.0 || (second_score.0 == first_score.0 && second_score.1 <= first_score.1) {
                    SlotPlan {
                        ratios,
                        budget_infeasible: second.budget_infeasible,
                        sfp_trace: second.trace,
                        powers: second.powers,
                        solver_fallback: fallback,
                    }
                } else {
                    SlotPlan {
                        ratios: first_ratios,
                        budget_infeasible: first.budget_infeasible,
                        sfp_trace: first.trace,
                        powers: first.powers,
                        solver_fallback: first_fallback,
                    }
                }
            }
        }
    }

    /// Applies `action`, runs the slot and advances to the next one.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome, ChannelError> {
        let sc = self.sc.clone();
        let users = self.population.users.clone();
        let k = users.len();
        let unit = sc.queue_unit_bits;

        self.apply(decode_action(action, sc.action_step));
        self.links = link_budget(&self.channel, &self.ris, self.noise)?;

        let served = self.served();
        let plan = self.plan(&served);
        let rates = rates_at(&sc, &self.links, &plan.powers);

        let mut energy = Vec::with_capacity(k);
        let mut latency = Vec::with_capacity(k);
        for i in 0..k {
            let u = &users[i];
            let cost = slot_cost(plan.ratios[i], served[i], u.cycles_per_bit, u.cpu_freq, sc.cpu_coeff, plan.powers[i], rates[i])
                .expect("ratios are in [0, 1] and offloading users have a positive rate");
            energy.push(cost.e_tot);
            latency.push(if served[i] > 0.0 { cost.latency() } else { 0.0 });
        }

        let admitted: Vec<f64> = self.arrivals.iter().map(|&j| j * self.admission).collect();
        let usage = if sc.ris_mode.is_active() { self.links.ris_usage(&plan.powers) } else { 0.0 };

        let to_units = |v: &[f64]| v.iter().map(|x| x / unit).collect::<Vec<f64>>();
        let (q_units, s_units, j_units, queue_slack) = match self.options.queue_model {
            QueueModel::PerUser => (
                to_units(&self.backlog),
                to_units(&served),
                to_units(&admitted),
                self.backlog.iter().zip(&self.demand).map(|(q, s)| (q - s) / unit).collect(),
            ),
            QueueModel::Centralized => {
                let demand: f64 = self.demand.iter().sum();
                (
                    vec![self.backlog[0] / unit],
                    vec![served.iter().sum::<f64>() / unit],
                    vec![admitted.iter().sum::<f64>() / unit],
                    vec![(self.backlog[0] - demand) / unit],
                )
            }
        };
        let drift = if self.options.drift_in_reward { drift_bound(&q_units, &s_units, &j_units) } else { 0.0 };
        let drift_penalty = drift + sc.lyapunov_v * energy.iter().sum::<f64>() / sc.energy_unit_joules;

        let terms = RewardTerms {
            drift_penalty,
            queue_slack,
            power_slack: (sc.ris_power_budget - usage) / sc.power_unit_watts,
            latency_slack: users.iter().zip(&latency).map(|(u, t)| u.deadline - t).collect(),
            admission_slack: self.arrivals.iter().zip(&admitted).map(|(j, a)| (j - a) / unit).collect(),
        };
        let r = reward(&terms, sc.reward_weights, sc.revenue, sc.reward_sign.factor());

        let violations = Violations {
            latency: terms.latency_slack.iter().filter(|&&x| x < -1e-9).count() as u32,
            budget: u32::from(sc.ris_mode.is_active() && (plan.budget_infeasible || usage > sc.ris_power_budget * (1.0 + 1e-9))),
            queue: terms.queue_slack.iter().filter(|&&x| x < 0.0).count() as u32,
            solver: u32::from(plan.solver_fallback),
        };

        let decision = SlotDecision {
            slot: self.slot,
            action,
            ratios: plan.ratios,
            powers: plan.powers.clone(),
            beta_r: self.ris.beta_r.clone(),
            phi_r: self.ris.phi_r.clone(),
            phi_t: self.ris.phi_t.clone(),
            amp: self.ris.amp.clone(),
            gains: self.links.gain.clone(),
            backlog: self.backlog.clone(),
            demand: self.demand.clone(),
            served: served.clone(),
            arrivals: self.arrivals.clone(),
            admitted: admitted.clone(),
            energy,
            latency,
            sfp_trace: plan.sfp_trace,
            ris_usage: usage,
            drift_penalty,
            reward: r,
            violations,
        };

        match self.options.queue_model {
            QueueModel::PerUser => {
                for i in 0..k {
                    self.backlog[i] = (self.backlog[i] - served[i]).max(0.0) + admitted[i];
                }
            }
            QueueModel::Centralized => {
                let s: f64 = served.iter().sum();
                let j: f64 = admitted.iter().sum();
                self.backlog[0] = (self.backlog[0] - s).max(0.0) + j;
            }
        }
        self.last_powers = Some(plan.powers);
        self.slot += 1;
        let done = self.slot >= sc.num_slots;
        if !done {
            self.demand = self.population.tasks(self.slot);
            self.arrivals = self.population.arrivals(self.slot);
            if !self.options.freeze_channels {
                self.channel = slot_channels(&sc, &self.population.users, self.episode_seed, self.slot)?;
            }
            self.links = link_budget(&self.channel, &self.ris, self.noise)?;
        }
        Ok(StepOutcome {
            state: self.state(),
            reward: r,
            done,
            decision,
        })
    }
}

fn rates_at(sc: &Scenario, links: &LinkBudget, powers: &[f64]) -> Vec<f64> {
    links
        .sinrs(powers)
        .into_iter()
        .map(|g| crate::channel::rate(sc.bandwidth, g))
        .collect()
}

fn latency_of(sc: &Scenario, u: &crate::scenario::UserDevice, o: f64, bits: f64, rate: f64) -> f64 {
    slot_cost(o, bits, u.cycles_per_bit, u.cpu_freq, sc.cpu_coeff, 0.0, rate)
        .map(|c| c.latency())
        .unwrap_or(f64::INFINITY)
}
