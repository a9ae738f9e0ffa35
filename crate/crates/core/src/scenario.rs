//! Static experiment configuration and user-population sampling.
//!
//! A [`Scenario`] is loaded from a flat `key = value` file (TOML syntax, no
//! tables). Every key is optional; omitted keys take the defaults of
//! [`Scenario::default`], which reproduces the published simulation table.
//! Keys are the field names below, with learning hyperparameters prefixed
//! `rl_` (for example `rl_learning_rate`).

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Stream};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{field} {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Closed interval `[lo, hi]`, written as a two-element array in files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Axis-aligned ground rectangle, written as `[x0, y0, x1, y1]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x: Interval,
    pub y: Interval,
}

impl Rect {
    /// Rectangle spanned by two opposite corners, in either order.
    pub fn from_corners(a: [f64; 2], b: [f64; 2]) -> Self {
        Self {
            x: Interval::new(a[0].min(b[0]), a[0].max(b[0])),
            y: Interval::new(a[1].min(b[1]), a[1].max(b[1])),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.x.contains(p[0]) && self.y.contains(p[1])
    }
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Self {
            x: Interval::new(v[0], v[2]),
            y: Interval::new(v[1], v[3]),
        }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x.lo, r.y.lo, r.x.hi, r.y.hi]
    }
}

/// Surface hardware variant. The four variants are the benchmark schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisMode {
    /// Amplifying surface that reflects and transmits.
    ActiveStar,
    /// Unit-gain surface that reflects and transmits.
    PassiveStar,
    /// Amplifying surface that only reflects.
    ActiveReflect,
    /// Unit-gain surface that only reflects.
    PassiveReflect,
}

impl RisMode {
    pub fn is_active(self) -> bool {
        matches!(self, RisMode::ActiveStar | RisMode::ActiveReflect)
    }

    pub fn is_star(self) -> bool {
        matches!(self, RisMode::ActiveStar | RisMode::PassiveStar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadMode {
    Partial,
    /// Every task is sent to the edge server (`o_k = 1`).
    Full,
}

/// What the arrival factors multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalScale {
    /// The midpoint of the task-size range, shared by all users.
    RangeMidpoint,
    /// Each user's own nominal task size.
    UserNominal,
}

/// How the drift-plus-penalty term enters the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSign {
    /// `+z1 * Ë`, literally as the reward is usually printed.
    AsWritten,
    /// `-z1 * Ë`, so that maximizing reward minimizes drift plus energy.
    Negated,
}

impl RewardSign {
    pub fn factor(self) -> f64 {
        match self {
            RewardSign::AsWritten => 1.0,
            RewardSign::Negated => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlParams {
    pub learning_rate: f64,
    /// Bellman discount ξ.
    pub discount: f64,
    pub exploration_start: f64,
    pub exploration_floor: f64,
    /// Per-episode multiplicative decay of the exploration probability.
    pub exploration_decay: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Target network refresh period n_Q, in environment steps.
    pub target_sync: usize,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub hidden_width: usize,
    pub residual_blocks: usize,
    /// Rewards are divided by this before they reach the Q-network.
    pub reward_scale: f64,
}

impl Default for RlParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            discount: 0.9,
            exploration_start: 1.0,
            exploration_floor: 0.02,
            exploration_decay: 0.98,
            batch_size: 8,
            replay_capacity: 10_000,
            target_sync: 100,
            episodes: 1000,
            eval_episodes: 20,
            hidden_width: 128,
            residual_blocks: 2,
            reward_scale: 1.0,
        }
    }
}

impl RlParams {
    /// Exploration probability used during training episode `episode` (0-based).
    pub fn exploration(&self, episode: usize) -> f64 {
        let decayed = self.exploration_start * self.exploration_decay.powi(episode as i32);
        decayed.max(self.exploration_floor)
    }
}

/// Converts a level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_users: usize,
    pub num_reflect_users: usize,
    pub num_transmit_users: usize,
    pub num_elements: usize,
    pub num_bs_antennas: usize,
    pub num_slots: usize,
    pub slot_length: f64,
    pub service_time: f64,

    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub reflect_region: Rect,
    pub transmit_region: Rect,
    pub user_height: f64,

    pub bandwidth: f64,
    /// Linear power gain at the 1 m reference distance.
    pub ref_gain: f64,
    pub path_loss_exp: f64,
    pub rician_factor: f64,
    pub ris_noise: f64,
    pub bs_noise: f64,
    pub ris_power_budget: f64,
    pub user_power_max: f64,
    /// Floor for the power search; transmit power is never driven to exactly zero.
    pub user_power_min: f64,

    pub task_bits_range: Interval,
    /// Per-slot relative spread of a user's task size around its nominal size.
    pub task_jitter: f64,
    pub cycles_per_bit: f64,
    pub deadline_range: Interval,
    pub cpu_freq_range: Interval,
    pub cpu_coeff: f64,
    pub mec_capacity: f64,
    /// Arrivals are uniform on `[lo, hi]` times the reference size picked by
    /// `arrival_scale`.
    pub arrival_factors: Interval,
    pub arrival_scale: ArrivalScale,

    pub phase_bits: u32,
    /// Upper bound on the per-element amplitude gain.
    pub amplification_max: f64,
    /// Relative size `δ` of the multiplicative action increments `{1−δ, 1, 1+δ}`.
    pub action_step: f64,

    pub reward_weights: [f64; 5],
    pub revenue: f64,
    pub lyapunov_v: f64,
    pub reward_sign: RewardSign,
    /// Bits per queue unit in the drift and reward terms.
    pub queue_unit_bits: f64,
    /// Joules per energy unit in the penalty term.
    pub energy_unit_joules: f64,
    /// Watts per power unit in the surface budget slack.
    pub power_unit_watts: f64,

    pub sfp_tolerance: f64,
    pub sfp_max_iter: usize,

    pub rl: RlParams,
    pub ris_mode: RisMode,
    pub offload_mode: OffloadMode,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        let noise = dbm_to_watts(-174.0);
        let num_slots = 100;
        let slot_length = 1.0;
        Self {
            num_users: 20,
            num_reflect_users: 10,
            num_transmit_users: 10,
            num_elements: 32,
            num_bs_antennas: 4,
            num_slots,
            slot_length,
            service_time: num_slots as f64 * slot_length,
            bs_position: [0.0, 0.0, 10.0],
            ris_position: [-60.0, 50.0, 5.0],
            reflect_region: Rect::from_corners([-50.0, 0.0], [100.0, 100.0]),
            transmit_region: Rect::from_corners([-70.0, 0.0], [-240.0, 100.0]),
            user_height: 0.0,
            bandwidth: 2e6,
            ref_gain: 1e-4,
            path_loss_exp: 4.0,
            rician_factor: 10.0,
            ris_noise: noise,
            bs_noise: noise,
            ris_power_budget: dbm_to_watts(10.0),
            user_power_max: dbm_to_watts(20.0),
            user_power_min: 1e-6,
            task_bits_range: Interval::new(30e6, 150e6),
            task_jitter: 0.2,
            cycles_per_bit: 800.0,
            deadline_range: Interval::new(1.0, 6.0),
            cpu_freq_range: Interval::new(60e6, 180e6),
            cpu_coeff: 1e-28,
            mec_capacity: 1e11,
            arrival_factors: Interval::new(0.5, 1.5),
            arrival_scale: ArrivalScale::RangeMidpoint,
            phase_bits: 3,
            amplification_max: 10.0,
            action_step: 0.05,
            reward_weights: [0.1, 0.8, 0.9, 0.9, 0.9],
            revenue: 1.0,
            lyapunov_v: 100.0,
            reward_sign: RewardSign::Negated,
            queue_unit_bits: 1e6,
            energy_unit_joules: 1.0,
            power_unit_watts: 1e-3,
            sfp_tolerance: 1e-4,
            sfp_max_iter: 50,
            rl: RlParams::default(),
            ris_mode: RisMode::ActiveStar,
            offload_mode: OffloadMode::Partial,
            seed: 1,
        }
    }
}

const DESK_SCENARIO: &str = include_str!("../scenarios/desk.toml");

// Flat file representation. Each entry maps a file key to a field path.
macro_rules! scenario_file {
    ($($key:ident : $ty:ty => $($field:ident).+ ;)*) => {
        #[derive(Debug, Default, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct ScenarioFile {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                $key: Option<$ty>,
            )*
        }

        impl ScenarioFile {
            fn apply(self, sc: &mut Scenario) {
                $( if let Some(v) = self.$key { sc.$($field).+ = v; } )*
            }

            fn capture(sc: &Scenario) -> Self {
                Self { $( $key: Some(sc.$($field).+.clone()), )* }
            }
        }
    };
}

scenario_file! {
    num_users: usize => num_users;
    num_reflect_users: usize => num_reflect_users;
    num_transmit_users: usize => num_transmit_users;
    num_elements: usize => num_elements;
    num_bs_antennas: usize => num_bs_antennas;
    num_slots: usize => num_slots;
    slot_length: f64 => slot_length;
    service_time: f64 => service_time;
    bs_position: [f64; 3] => bs_position;
    ris_position: [f64; 3] => ris_position;
    reflect_region: Rect => reflect_region;
    transmit_region: Rect => transmit_region;
    user_height: f64 => user_height;
    bandwidth: f64 => bandwidth;
    ref_gain: f64 => ref_gain;
    path_loss_exp: f64 => path_loss_exp;
    rician_factor: f64 => rician_factor;
    ris_noise: f64 => ris_noise;
    bs_noise: f64 => bs_noise;
    ris_power_budget: f64 => ris_power_budget;
    user_power_max: f64 => user_power_max;
    user_power_min: f64 => user_power_min;
    task_bits_range: Interval => task_bits_range;
    task_jitter: f64 => task_jitter;
    cycles_per_bit: f64 => cycles_per_bit;
    deadline_range: Interval => deadline_range;
    cpu_freq_range: Interval => cpu_freq_range;
    cpu_coeff: f64 => cpu_coeff;
    mec_capacity: f64 => mec_capacity;
    arrival_factors: Interval => arrival_factors;
    phase_bits: u32 => phase_bits;
    amplification_max: f64 => amplification_max;
    action_step: f64 => action_step;
    reward_weights: [f64; 5] => reward_weights;
    revenue: f64 => revenue;
    lyapunov_v: f64 => lyapunov_v;
    reward_sign: RewardSign => reward_sign;
    arrival_scale: ArrivalScale => arrival_scale;
    queue_unit_bits: f64 => queue_unit_bits;
    energy_unit_joules: f64 => energy_unit_joules;
    power_unit_watts: f64 => power_unit_watts;
    sfp_tolerance: f64 => sfp_tolerance;
    sfp_max_iter: usize => sfp_max_iter;
    rl_learning_rate: f64 => rl.learning_rate;
    rl_discount: f64 => rl.discount;
    rl_exploration_start: f64 => rl.exploration_start;
    rl_exploration_floor: f64 => rl.exploration_floor;
    rl_exploration_decay: f64 => rl.exploration_decay;
    rl_batch_size: usize => rl.batch_size;
    rl_replay_capacity: usize => rl.replay_capacity;
    rl_target_sync: usize => rl.target_sync;
    rl_episodes: usize => rl.episodes;
    rl_eval_episodes: usize => rl.eval_episodes;
    rl_hidden_width: usize => rl.hidden_width;
    rl_residual_blocks: usize => rl.residual_blocks;
    rl_reward_scale: f64 => rl.reward_scale;
    ris_mode: RisMode => ris_mode;
    offload_mode: OffloadMode => offload_mode;
    seed: u64 => seed;
}

impl Scenario {
    /// The published simulation table (K = 20, M = 32).
    pub fn paper() -> Self {
        Self::default()
    }

    /// The reduced scenario used for desk-scale experiments and acceptance runs.
    pub fn desk() -> Self {
        Self::from_toml_str(DESK_SCENARIO).expect("bundled desk scenario is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        let has_k = file.num_users.is_some();
        let r = file.num_reflect_users;
        let t = file.num_transmit_users;
        let has_service_time = file.service_time.is_some();

        let mut sc = Scenario::default();
        file.apply(&mut sc);

        match (has_k, r, t) {
            (true, None, None) => {
                sc.num_reflect_users = sc.num_users.div_ceil(2);
                sc.num_transmit_users = sc.num_users.saturating_sub(sc.num_reflect_users);
            }
            (true, Some(r), None) => sc.num_transmit_users = sc.num_users.saturating_sub(r),
            (true, None, Some(t)) => sc.num_reflect_users = sc.num_users.saturating_sub(t),
            (false, _, _) => sc.num_users = sc.num_reflect_users + sc.num_transmit_users,
            (true, Some(_), Some(_)) => {}
        }
        if !has_service_time {
            sc.service_time = sc.num_slots as f64 * sc.slot_length;
        }

        sc.validate()?;
        Ok(sc)
    }

    /// Serializes every field; loading the output reproduces `self` exactly.
    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(&ScenarioFile::capture(self))?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let counts: [(&'static str, usize); 10] = [
            ("num_users", self.num_users),
            ("num_elements", self.num_elements),
            ("num_bs_antennas", self.num_bs_antennas),
            ("num_slots", self.num_slots),
            ("phase_bits", self.phase_bits as usize),
            ("rl_batch_size", self.rl.batch_size),
            ("rl_replay_capacity", self.rl.replay_capacity),
            ("rl_target_sync", self.rl.target_sync),
            ("rl_hidden_width", self.rl.hidden_width),
            ("rl_eval_episodes", self.rl.eval_episodes),
        ];
        for (field, value) in counts {
            if value < 1 {
                return Err(invalid(field, "must be ≥ 1"));
            }
        }
        // Scenario files store integers as signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", format!("must be at most {}", i64::MAX)));
        }
        if self.num_reflect_users + self.num_transmit_users != self.num_users {
            return Err(invalid(
                "num_users",
                format!(
                    "must equal num_reflect_users + num_transmit_users ({} + {})",
                    self.num_reflect_users, self.num_transmit_users
                ),
            ));
        }
        if self.phase_bits > 16 {
            return Err(invalid("phase_bits", "must be ≤ 16"));
        }
        positive("slot_length", self.slot_length)?;
        let horizon = self.slot_length * self.num_slots as f64;
        if (horizon - self.service_time).abs() > 1e-9 * horizon.max(1.0) {
            return Err(invalid(
                "service_time",
                format!("must equal num_slots * slot_length ({horizon})"),
            ));
        }

        for (field, rect) in [
            ("reflect_region", self.reflect_region),
            ("transmit_region", self.transmit_region),
        ] {
            ordered(field, rect.x)?;
            ordered(field, rect.y)?;
        }

        positive("bandwidth", self.bandwidth)?;
        positive("ref_gain", self.ref_gain)?;
        if !(self.path_loss_exp >= 2.0) {
            return Err(invalid("path_loss_exp", "must be ≥ 2"));
        }
        non_negative("rician_factor", self.rician_factor)?;
        non_negative("ris_noise", self.ris_noise)?;
        non_negative("bs_noise", self.bs_noise)?;
        positive("ris_power_budget", self.ris_power_budget)?;
        positive("user_power_max", self.user_power_max)?;
        positive("user_power_min", self.user_power_min)?;
        if self.user_power_min > self.user_power_max {
            return Err(invalid("user_power_min", "must not exceed user_power_max"));
        }

        ordered("task_bits_range", self.task_bits_range)?;
        non_negative("task_bits_range", self.task_bits_range.lo)?;
        if !(0.0..1.0).contains(&self.task_jitter) {
            return Err(invalid("task_jitter", "must lie in [0, 1)"));
        }
        positive("cycles_per_bit", self.cycles_per_bit)?;
        ordered("deadline_range", self.deadline_range)?;
        positive("deadline_range", self.deadline_range.lo)?;
        ordered("cpu_freq_range", self.cpu_freq_range)?;
        positive("cpu_freq_range", self.cpu_freq_range.lo)?;
        non_negative("cpu_coeff", self.cpu_coeff)?;
        non_negative("mec_capacity", self.mec_capacity)?;
        ordered("arrival_factors", self.arrival_factors)?;
        non_negative("arrival_factors", self.arrival_factors.lo)?;

        if !(self.amplification_max >= 1.0) {
            return Err(invalid("amplification_max", "must be ≥ 1"));
        }
        if !(self.action_step > 0.0 && self.action_step < 1.0) {
            return Err(invalid("action_step", "must lie strictly between 0 and 1"));
        }
        for w in self.reward_weights {
            non_negative("reward_weights", w)?;
        }
        non_negative("revenue", self.revenue)?;
        non_negative("lyapunov_v", self.lyapunov_v)?;
        positive("queue_unit_bits", self.queue_unit_bits)?;
        positive("energy_unit_joules", self.energy_unit_joules)?;
        positive("power_unit_watts", self.power_unit_watts)?;
        if !(self.sfp_tolerance >= 0.0) {
            return Err(invalid("sfp_tolerance", "must be ≥ 0"));
        }

        let rl = &self.rl;
        positive("rl_learning_rate", rl.learning_rate)?;
        if !(rl.discount > 0.0 && rl.discount < 1.0) {
            return Err(invalid("rl_discount", "must lie strictly between 0 and 1"));
        }
        for (field, v) in [
            ("rl_exploration_start", rl.exploration_start),
            ("rl_exploration_floor", rl.exploration_floor),
            ("rl_exploration_decay", rl.exploration_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, "must lie in [0, 1]"));
            }
        }
        if rl.replay_capacity < rl.batch_size {
            return Err(invalid("rl_replay_capacity", "must be ≥ rl_batch_size"));
        }
        positive("rl_reward_scale", rl.reward_scale)?;
        Ok(())
    }

    /// Phase quantization step `π / 2^(b-1)`.
    /// Changes the horizon, keeping `service_time = N · slot_length`.
    pub fn set_num_slots(&mut self, num_slots: usize) {
        self.num_slots = num_slots;
        self.service_time = num_slots as f64 * self.slot_length;
    }

    pub fn phase_step(&self) -> f64 {
        std::f64::consts::PI / 2f64.powi(self.phase_bits as i32 - 1)
    }

    /// Number of phase levels `2^b`.
    pub fn phase_levels(&self) -> usize {
        1usize << self.phase_bits
    }

    /// Midpoint of the task-size range, the nominal arrival size.
    pub fn mean_task_bits(&self) -> f64 {
        self.task_bits_range.midpoint()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "K={} (R={}, T={}) M={} B={} N={} mode={:?}/{:?} seed={}",
            self.num_users,
            self.num_reflect_users,
            self.num_transmit_users,
            self.num_elements,
            self.num_bs_antennas,
            self.num_slots,
            self.ris_mode,
            self.offload_mode,
            self.seed
        )
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(invalid(field, "must be > 0"))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ScenarioError> {
    if v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be ≥ 0"))
    }
}

fn ordered(field: &'static str, i: Interval) -> Result<(), ScenarioError> {
    if i.lo <= i.hi && i.lo.is_finite() && i.hi.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must satisfy low ≤ high"))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}

/// Which side of the surface a user is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Reflect,
    Transmit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserDevice {
    pub position: [f64; 3],
    pub side: Side,
    pub cycles_per_bit: f64,
    /// Maximum tolerable delay D_k^max in seconds.
    pub deadline: f64,
    pub cpu_freq: f64,
    /// Nominal per-slot task size; slot draws jitter around it.
    pub nominal_task_bits: f64,
}

/// A sampled user population plus the seeds of its per-slot task streams.
#[derive(Debug, Clone)]
pub struct Population {
    pub users: Vec<UserDevice>,
    stream_seed: u64,
    task_jitter: f64,
    task_range: Interval,
    arrival_factors: Interval,
    arrival_scale: ArrivalScale,
    mean_task_bits: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Task sizes `S_k[n]` in bits for slot `n`.
    pub fn tasks(&self, n: usize) -> Vec<f64> {
        let mut rng = substream(self.stream_seed, Stream::Tasks, n as u64);
        self.users
            .iter()
            .map(|u| {
                let spread = Interval::new(
                    u.nominal_task_bits * (1.0 - self.task_jitter),
                    u.nominal_task_bits * (1.0 + self.task_jitter),
                );
                spread
                    .sample(&mut rng)
                    .clamp(self.task_range.lo, self.task_range.hi)
            })
            .collect()
    }

    /// Task arrivals `J_k[n]` in bits for slot `n`.
    pub fn arrivals(&self, n: usize) -> Vec<f64> {
        let mut rng = substream(self.stream_seed, Stream::Arrivals, n as u64);
        self.users
            .iter()
            .map(|u| {
                let reference = match self.arrival_scale {
                    ArrivalScale::RangeMidpoint => self.mean_task_bits,
                    ArrivalScale::UserNominal => u.nominal_task_bits,
                };
                Interval::new(self.arrival_factors.lo * reference, self.arrival_factors.hi * reference).sample(&mut rng)
            })
            .collect()
    }
}

/// Places `R` users in the reflect region and `T` in the transmit region and
/// draws their device constants uniformly from the scenario intervals.
pub fn sample_users<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> Population {
    let mut users = Vec::with_capacity(sc.num_users);
    let sides = std::iter::repeat_n(Side::Reflect, sc.num_reflect_users)
        .chain(std::iter::repeat_n(Side::Transmit, sc.num_transmit_users));
    for side in sides {
        let region = match side {
            Side::Reflect => sc.reflect_region,
            Side::Transmit => sc.transmit_region,
        };
        let x = region.x.sample(rng);
        let y = region.y.sample(rng);
        users.push(UserDevice {
            position: [x, y, sc.user_height],
            side,
            cycles_per_bit: sc.cycles_per_bit,
            deadline: sc.deadline_range.sample(rng),
            cpu_freq: sc.cpu_freq_range.sample(rng),
            nominal_task_bits: sc.task_bits_range.sample(rng),
        });
    }
    let mean = sc.mean_task_bits();
    Population {
        users,
        stream_seed: rng.random(),
        task_jitter: sc.task_jitter,
        task_range: sc.task_bits_range,
        arrival_factors: sc.arrival_factors,
        arrival_scale: sc.arrival_scale,
        mean_task_bits: mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn table_values_load() {
        let sc = Scenario::from_toml_str("num_users = 20\nnum_elements = 32\nbandwidth = 2e6\n").unwrap();
        assert_eq!(sc.num_users, 20);
        assert_eq!(sc.num_elements, 32);
        assert_eq!(sc.bandwidth, 2e6);
        assert_eq!(sc.num_reflect_users + sc.num_transmit_users, 20);
    }

    #[test]
    fn omitted_path_loss_defaults_to_four() {
        let sc = Scenario::from_toml_str("num_users = 4\n").unwrap();
        assert_eq!(sc.path_loss_exp, 4.0);
    }

    #[test]
    fn zero_users_is_rejected_with_field_name() {
        let err = Scenario::from_toml_str("num_users = 0\n").unwrap_err();
        assert_eq!(err.to_string(), "num_users must be ≥ 1");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            Scenario::from_toml_str("num_userz = 3\n"),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn invariant_violations_name_the_field() {
        for (text, field) in [
            ("path_loss_exp = 1.5", "path_loss_exp"),
            ("rl_discount = 1.0", "rl_discount"),
            ("lyapunov_v = -1.0", "lyapunov_v"),
            ("deadline_range = [6.0, 1.0]", "deadline_range"),
            ("num_users = 4\nnum_reflect_users = 1\nnum_transmit_users = 1", "num_users"),
            ("service_time = 3.0", "service_time"),
        ] {
            match Scenario::from_toml_str(text) {
                Err(ScenarioError::Invalid { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: expected invalid {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn user_counts_are_derived() {
        let sc = Scenario::from_toml_str("num_users = 7").unwrap();
        assert_eq!((sc.num_reflect_users, sc.num_transmit_users), (4, 3));
        let sc = Scenario::from_toml_str("num_reflect_users = 2\nnum_transmit_users = 5").unwrap();
        assert_eq!(sc.num_users, 7);
    }

    #[test]
    fn desk_scenario_is_valid() {
        let sc = Scenario::desk();
        assert_eq!((sc.num_users, sc.num_elements, sc.num_slots), (6, 16, 500));
    }

    #[test]
    fn full_size_file_matches_defaults() {
        let sc = Scenario::from_toml_str(include_str!("../scenarios/full.toml")).unwrap();
        assert_eq!(sc, Scenario::paper());
    }

    #[test]
    fn table_noise_level() {
        let sc = Scenario::paper();
        assert!((sc.bs_noise / 3.981e-21 - 1.0).abs() < 1e-3);
        assert!((sc.user_power_max - 0.1).abs() < 1e-15);
        assert!((sc.ris_power_budget - 0.01).abs() < 1e-15);
    }

    #[test]
    fn twenty_users_split_across_regions() {
        let sc = Scenario::paper();
        let pop = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        let reflect: Vec<_> = pop.users.iter().filter(|u| u.side == Side::Reflect).collect();
        assert_eq!(reflect.len(), 10);
        for u in &pop.users {
            let region = match u.side {
                Side::Reflect => sc.reflect_region,
                Side::Transmit => sc.transmit_region,
            };
            assert!(region.contains([u.position[0], u.position[1]]));
            assert!(sc.deadline_range.contains(u.deadline));
            assert!((1.0..=6.0).contains(&u.deadline));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let sc = Scenario::paper();
        let a = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        let b = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        assert_eq!(a.users, b.users);
        assert_eq!(a.tasks(5), b.tasks(5));
        assert_eq!(a.arrivals(9), b.arrivals(9));
    }

    #[test]
    fn task_streams_stay_in_range() {
        let sc = Scenario::paper();
        let pop = sample_users(&sc, &mut substream(3, Stream::Users, 0));
        let mean = sc.mean_task_bits();
        for n in 0..50 {
            for s in pop.tasks(n) {
                assert!(sc.task_bits_range.contains(s));
            }
            for j in pop.arrivals(n) {
                assert!((0.5 * mean..=1.5 * mean).contains(&j));
            }
        }
    }

    #[test]
    fn exploration_schedule_decays_to_floor() {
        let rl = RlParams::default();
        assert_eq!(rl.exploration(0), 1.0);
        assert!((rl.exploration(1) - 0.98).abs() < 1e-12);
        assert_eq!(rl.exploration(10_000), 0.02);
    }
}
