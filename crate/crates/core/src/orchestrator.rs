//! Episode loop, training and greedy evaluation, benchmark schemes, queue
//! baselines and parameter sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelError;
use crate::drl::agent::{Agent, AgentKind, AnyAgent};
use crate::drl::env::{Env, EnvOptions, SlotDecision, Violations, NUM_ACTIONS};
use crate::drl::replay::Transition;
use crate::queueing::{stability_proxy, StabilityReport};
use crate::rng::{derive_seed, Stream};
use crate::scenario::{Interval, OffloadMode, RisMode, Scenario};

/// Surface/offloading configurations compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Active STAR surface with partial offloading.
    Proposed,
    /// Active STAR surface, every task offloaded.
    FullActiveStar,
    PassiveStar,
    /// Active surface that only reflects.
    ActiveRis,
    PassiveRis,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed,
        Scheme::FullActiveStar,
        Scheme::PassiveStar,
        Scheme::ActiveRis,
        Scheme::PassiveRis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::FullActiveStar => "full_a_star",
            Scheme::PassiveStar => "p_star",
            Scheme::ActiveRis => "a_ris",
            Scheme::PassiveRis => "p_ris",
        }
    }

    /// The scenario with this scheme's structural overrides applied.
    pub fn configure(self, sc: &Scenario) -> Scenario {
        let mut sc = sc.clone();
        let (ris, offload) = match self {
            Scheme::Proposed => (RisMode::ActiveStar, OffloadMode::Partial),
            Scheme::FullActiveStar => (RisMode::ActiveStar, OffloadMode::Full),
            Scheme::PassiveStar => (RisMode::PassiveStar, OffloadMode::Partial),
            Scheme::ActiveRis => (RisMode::ActiveReflect, OffloadMode::Partial),
            Scheme::PassiveRis => (RisMode::PassiveReflect, OffloadMode::Partial),
        };
        sc.ris_mode = ris;
        sc.offload_mode = offload;
        sc
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}` (expected one of proposed, full_a_star, p_star, a_ris, p_ris)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueBaseline {
    Greedy,
    Centralized,
}

impl QueueBaseline {
    pub fn name(self) -> &'static str {
        match self {
            QueueBaseline::Greedy => "greedy",
            QueueBaseline::Centralized => "centralized",
        }
    }

    pub fn options(self) -> EnvOptions {
        match self {
            QueueBaseline::Greedy => EnvOptions::greedy(),
            QueueBaseline::Centralized => EnvOptions::centralized(),
        }
    }
}

/// Summary of one episode; `decisions` is filled only when recording.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub slots: usize,
    pub cumulative_reward: f64,
    /// Total energy of all users over the episode, in joules.
    pub energy: f64,
    /// Time-averaged total backlog, in bits.
    pub mean_backlog: f64,
    pub violations: Violations,
    /// Total backlog at the start of every slot.
    pub backlog: Vec<f64>,
    pub decisions: Vec<SlotDecision>,
}

impl EpisodeRecord {
    pub fn stability(&self, floor: f64) -> Option<StabilityReport> {
        let history: Vec<Vec<f64>> = self.backlog.iter().map(|&q| vec![q]).collect();
        stability_proxy(&history, floor).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeMode {
    /// ε-greedy actions, every transition stored and learned from.
    Train { epsilon: f64 },
    /// Greedy actions, nothing learned.
    Evaluate,
}

/// Runs one episode from a fresh environment seeded with `episode_seed`.
pub fn run_episode(
    sc: &Scenario,
    options: EnvOptions,
    agent: &mut AnyAgent,
    episode: usize,
    episode_seed: u64,
    mode: EpisodeMode,
    record: bool,
) -> Result<EpisodeRecord, ChannelError> {
    let mut env = Env::reset(sc, options, episode_seed)?;
    let mut state = env.state();
    let mut rec = EpisodeRecord {
        episode,
        seed: episode_seed,
        slots: 0,
        cumulative_reward: 0.0,
        energy: 0.0,
        mean_backlog: 0.0,
        violations: Violations::default(),
        backlog: Vec::with_capacity(sc.num_slots),
        decisions: Vec::new(),
    };
    loop {
        let action = match mode {
            EpisodeMode::Train { epsilon } => agent.act(&state, epsilon),
            EpisodeMode::Evaluate => agent.greedy(&state),
        };
        let out = env.step(action)?;
        if let EpisodeMode::Train { .. } = mode {
            agent.observe(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: out.reward,
                next_state: out.state.clone(),
            });
        }
        state = out.state;
        let d = out.decision;
        rec.slots += 1;
        rec.cumulative_reward += d.reward;
        rec.energy += d.total_energy();
        rec.backlog.push(d.backlog.iter().sum());
        rec.violations.add(&d.violations);
        if record {
            rec.decisions.push(d);
        }
        if out.done {
            break;
        }
    }
    rec.mean_backlog = rec.backlog.iter().sum::<f64>() / rec.slots as f64;
    Ok(rec)
}

/// Seed of training episode `episode` for a run seeded with `seed`.
pub fn training_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, Stream::Episode, episode as u64)
}

/// Seed of evaluation episode `index`; disjoint from the training seeds.
pub fn evaluation_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, Stream::Evaluation, index as u64)
}

pub fn new_agent(sc: &Scenario, options: EnvOptions, kind: AgentKind, seed: u64) -> AnyAgent {
    AnyAgent::new(kind, Env::state_dim(sc, options), NUM_ACTIONS, &sc.rl, seed)
}

/// Trains `agent` for episodes `start..start + count`, calling `on_episode`
/// after each.
pub fn train(
    sc: &Scenario,
    options: EnvOptions,
    agent: &mut AnyAgent,
    seed: u64,
    start: usize,
    count: usize,
    mut on_episode: impl FnMut(&EpisodeRecord, &AnyAgent),
) -> Result<Vec<EpisodeRecord>, ChannelError> {
    let mut records = Vec::with_capacity(count);
    for episode in start..start + count {
        let epsilon = sc.rl.exploration(episode);
        let rec = run_episode(sc, options, agent, episode, training_seed(seed, episode), EpisodeMode::Train { epsilon }, false)?;
        on_episode(&rec, agent);
        records.push(rec);
    }
    Ok(records)
}

/// Greedy evaluation over `count` fresh episodes.
pub fn evaluate(
    sc: &Scenario,
    options: EnvOptions,
    agent: &mut AnyAgent,
    seed: u64,
    count: usize,
    record: bool,
) -> Result<Vec<EpisodeRecord>, ChannelError> {
    (0..count)
        .map(|i| run_episode(sc, options, agent, i, evaluation_seed(seed, i), EpisodeMode::Evaluate, record))
        .collect()
}

/// Means over a set of evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub energy: f64,
    pub reward: f64,
    pub backlog: f64,
    pub violations: f64,
}

impl EvalSummary {
    pub fn of(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            episodes: records.len(),
            energy: records.iter().map(|r| r.energy).sum::<f64>() / n,
            reward: records.iter().map(|r| r.cumulative_reward).sum::<f64>() / n,
            backlog: records.iter().map(|r| r.mean_backlog).sum::<f64>() / n,
            violations: records.iter().map(|r| r.violations.total() as f64).sum::<f64>() / n,
        }
    }
}

/// A trained agent together with its training and evaluation records.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub training: Vec<EpisodeRecord>,
    pub evaluation: Vec<EpisodeRecord>,
    pub summary: EvalSummary,
    pub agent: AnyAgent,
}

/// Trains a fresh agent of `kind` for `sc.rl.episodes` episodes and evaluates
/// it greedily over `sc.rl.eval_episodes` episodes.
pub fn train_and_evaluate(
    sc: &Scenario,
    options: EnvOptions,
    kind: AgentKind,
    seed: u64,
    record: bool,
) -> Result<RunResult, ChannelError> {
    let mut agent = new_agent(sc, options, kind, seed);
    let training = train(sc, options, &mut agent, seed, 0, sc.rl.episodes, |_, _| {})?;
    let evaluation = evaluate(sc, options, &mut agent, seed, sc.rl.eval_episodes, record)?;
    Ok(RunResult {
        summary: EvalSummary::of(&evaluation),
        training,
        evaluation,
        agent,
    })
}

/// One benchmark scheme, trained and evaluated with the double-DQN agent.
pub fn run_benchmark(sc: &Scenario, scheme: Scheme, seed: u64, record: bool) -> Result<RunResult, ChannelError> {
    train_and_evaluate(&scheme.configure(sc), EnvOptions::default(), AgentKind::Ddqn, seed, record)
}

pub fn run_queue_baseline(sc: &Scenario, baseline: QueueBaseline, seed: u64, record: bool) -> Result<RunResult, ChannelError> {
    train_and_evaluate(sc, baseline.options(), AgentKind::Ddqn, seed, record)
}

/// Scenario parameter swept along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Midpoint of the task-size range, in bits.
    InputSize,
    Elements,
    /// Midpoint of the device CPU frequency range, in Hz.
    CpuFreq,
    /// Midpoint of the deadline range, in seconds.
    Deadline,
    Antennas,
    Users,
}

impl SweepVariable {
    pub const ALL: [SweepVariable; 6] = [
        SweepVariable::InputSize,
        SweepVariable::Elements,
        SweepVariable::CpuFreq,
        SweepVariable::Deadline,
        SweepVariable::Antennas,
        SweepVariable::Users,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::InputSize => "input_size",
            SweepVariable::Elements => "elements",
            SweepVariable::CpuFreq => "cpu_freq",
            SweepVariable::Deadline => "deadline",
            SweepVariable::Antennas => "antennas",
            SweepVariable::Users => "users",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepVariable::Elements | SweepVariable::Antennas | SweepVariable::Users)
    }

    /// The scenario at `value`. Ranges are rescaled so their midpoint equals
    /// `value`; counts must be positive integers.
    pub fn apply(self, sc: &Scenario, value: f64) -> Result<Scenario, String> {
        if !(value.is_finite() && value > 0.0) {
            return Err(format!("{} value {value} must be positive", self.name()));
        }
        if self.is_count() && value.fract() != 0.0 {
            return Err(format!("{} value {value} must be an integer", self.name()));
        }
        let rescale = |r: Interval| {
            let f = value / r.midpoint();
            Interval::new(r.lo * f, r.hi * f)
        };
        let mut sc = sc.clone();
        match self {
            SweepVariable::InputSize => sc.task_bits_range = rescale(sc.task_bits_range),
            SweepVariable::Elements => sc.num_elements = value as usize,
            SweepVariable::CpuFreq => sc.cpu_freq_range = rescale(sc.cpu_freq_range),
            SweepVariable::Deadline => sc.deadline_range = rescale(sc.deadline_range),
            SweepVariable::Antennas => sc.num_bs_antennas = value as usize,
            SweepVariable::Users => {
                let k = value as usize;
                sc.num_users = k;
                sc.num_reflect_users = k.div_ceil(2);
                sc.num_transmit_users = k / 2;
            }
        }
        sc.validate().map_err(|e| e.to_string())?;
        Ok(sc)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepVariable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!("unknown sweep variable `{s}` (expected one of input_size, elements, cpu_freq, deadline, antennas, users)")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid.is_empty() {
            return Err("sweep grid is empty".into());
        }
        if self.seeds.is_empty() {
            return Err("sweep needs at least one seed".into());
        }
        if self.schemes.is_empty() {
            return Err("sweep needs at least one scheme".into());
        }
        Ok(())
    }

    /// `(scheme, value, seed)` in output order.
    pub fn points(&self) -> Vec<(Scheme, f64, u64)> {
        let mut points = Vec::new();
        for &scheme in &self.schemes {
            for &value in &self.grid {
                for &seed in &self.seeds {
                    points.push((scheme, value, seed));
                }
            }
        }
        points
    }
}

/// One trained-and-evaluated sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub value: f64,
    pub seed: u64,
    pub energy: f64,
    pub reward: f64,
    pub backlog: f64,
    /// Set when the point could not be run; the metrics are then NaN.
    pub error: Option<String>,
}

fn sweep_point(sc: &Scenario, variable: SweepVariable, scheme: Scheme, value: f64, seed: u64) -> SweepRow {
    let outcome = variable
        .apply(sc, value)
        .and_then(|point| run_benchmark(&point, scheme, seed, false).map_err(|e| e.to_string()));
    match outcome {
        Ok(run) => SweepRow {
            scheme,
            value,
            seed,
            energy: run.summary.energy,
            reward: run.summary.reward,
            backlog: run.summary.backlog,
            error: None,
        },
        Err(e) => SweepRow {
            scheme,
            value,
            seed,
            energy: f64::NAN,
            reward: f64::NAN,
            backlog: f64::NAN,
            error: Some(e),
        },
    }
}

/// Worker count: `STARMEC_THREADS` if set to a positive integer, else the
/// number of available cores.
pub fn worker_threads() -> usize {
    std::env::var("STARMEC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every point of `spec` on `threads` workers. Rows come back in
/// [`SweepSpec::points`] order whatever the scheduling.
pub fn run_sweep(sc: &Scenario, spec: &SweepSpec, threads: usize) -> Result<Vec<SweepRow>, String> {
    spec.validate()?;
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|&(scheme, value, seed)| sweep_point(sc, spec.variable, scheme, value, seed))
            .collect()
    }))
}

/// Mean and standard deviation over seeds for one `(scheme, value)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub scheme: Scheme,
    pub value: f64,
    pub seeds: usize,
    pub failures: usize,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub backlog_mean: f64,
    pub backlog_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Groups rows by scheme and value, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepPoint> {
    let mut keys: Vec<(Scheme, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(s, v)| s == r.scheme && v == r.value) {
            keys.push((r.scheme, r.value));
        }
    }
    keys.into_iter()
        .map(|(scheme, value)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.scheme == scheme && r.value == value).collect();
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| r.error.is_none()).collect();
            let pick = |f: fn(&SweepRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<f64>>());
            let (energy_mean, energy_std) = pick(|r| r.energy);
            let (reward_mean, reward_std) = pick(|r| r.reward);
            let (backlog_mean, backlog_std) = pick(|r| r.backlog);
            SweepPoint {
                scheme,
                value,
                seeds: group.len(),
                failures: group.len() - ok.len(),
                energy_mean,
                energy_std,
                reward_mean,
                reward_std,
                backlog_mean,
                backlog_std,
            }
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
