//! Uplink transmit power control by sequential fractional programming.
//!
//! The per-slot energy `Σ_k E_loc + p_k B_k / r_k(p)` (with `B_k = o_k S_k` the
//! offloaded bits) is non-convex in `p`. Each outer iteration:
//!
//! 1. anchors the log bound `log₂(1+γ) ≥ ã log₂γ + b̃` at the current SINRs,
//!    which turns every rate into a concave function `f_d` of `q = log₂ p`;
//! 2. fixes the quadratic-transform weights `η_k = √(2^{q_k} B_k) / f_d,k`;
//! 3. minimizes the convex program `Σ 2η√(B 2^q) − η² f_d` over `q`, subject to
//!    the surface power budget, the power box and the upload deadlines
//!    `f_d,k(q) ≥ B_k / (D_k − t_loc,k)`, with a log-barrier Newton method;
//! 4. moves toward the new point with a backtracking search on the true
//!    energy, so the recorded energy never increases.
//!
//! Users whose deadline no power allocation can meet are released from their
//! deadline constraint and reported in [`PowerSolution::deadline_dropped`].

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::LinkBudget;
use crate::compute::local_cost;
use crate::scenario::{Scenario, UserDevice};

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("anchor SINR must be positive, got {0}")]
    NonPositiveAnchor(f64),
    #[error("surrogate rate is not positive for users {0:?}")]
    NonPositiveRate(Vec<usize>),
    #[error("input length {got} does not match {expected} users")]
    Length { expected: usize, got: usize },
}

/// Surface power budget `slope Σ p + floor ≤ limit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisBudget {
    pub slope: f64,
    pub floor: f64,
    pub limit: f64,
}

impl RisBudget {
    pub fn usage(&self, p: &[f64]) -> f64 {
        self.slope * p.iter().sum::<f64>() + self.floor
    }
}

/// One slot's power-control instance with offloading ratios already fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProblem {
    pub bandwidth: f64,
    pub gain: Vec<f64>,
    pub noise: Vec<f64>,
    /// Offloaded bits `o_k S_k`.
    pub offload_bits: Vec<f64>,
    pub local_energy: Vec<f64>,
    /// Time left for the upload, `D_k − t_loc,k`.
    pub upload_window: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
    /// `None` for passive surfaces, which draw no amplifier power.
    pub budget: Option<RisBudget>,
}

impl PowerProblem {
    /// Builds the instance for one slot from the scenario, the cascade
    /// summary, the users, their executed bits and their offloading ratios.
    pub fn from_slot(sc: &Scenario, links: &LinkBudget, users: &[UserDevice], bits: &[f64], ratio: &[f64]) -> Self {
        let k = users.len();
        let mut offload_bits = Vec::with_capacity(k);
        let mut local_energy = Vec::with_capacity(k);
        let mut upload_window = Vec::with_capacity(k);
        for i in 0..k {
            let o = ratio[i].clamp(0.0, 1.0);
            let (t_loc, e_loc) = local_cost(o, bits[i], users[i].cycles_per_bit, users[i].cpu_freq, sc.cpu_coeff)
                .expect("validated scenario has positive CPU frequencies");
            offload_bits.push(o * bits[i]);
            local_energy.push(e_loc);
            upload_window.push(users[i].deadline - t_loc);
        }
        Self {
            bandwidth: sc.bandwidth,
            gain: links.gain.clone(),
            noise: links.noise.clone(),
            offload_bits,
            local_energy,
            upload_window,
            p_min: sc.user_power_min,
            p_max: sc.user_power_max,
            budget: sc.ris_mode.is_active().then_some(RisBudget {
                slope: links.usage_slope,
                floor: links.usage_floor,
                limit: sc.ris_power_budget,
            }),
        }
    }

    pub fn num_users(&self) -> usize {
        self.gain.len()
    }

    pub fn sinrs(&self, p: &[f64]) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| {
                let signal = self.gain[k] * p[k];
                if signal == 0.0 {
                    return 0.0;
                }
                let interference: f64 = (0..self.num_users())
                    .filter(|&j| j != k)
                    .map(|j| self.gain[j] * p[j])
                    .sum();
                signal / (interference + self.noise[k])
            })
            .collect()
    }

    pub fn rates(&self, p: &[f64]) -> Vec<f64> {
        self.sinrs(p)
            .into_iter()
            .map(|g| self.bandwidth * g.ln_1p() / LN_2)
            .collect()
    }

    /// Per-user true energy `E_loc + p B / r`; infinite when bits are offloaded
    /// over a dead link.
    pub fn user_energies(&self, p: &[f64]) -> Vec<f64> {
        let rates = self.rates(p);
        (0..self.num_users())
            .map(|k| {
                let b = self.offload_bits[k];
                if b == 0.0 {
                    self.local_energy[k]
                } else if rates[k] > 0.0 {
                    self.local_energy[k] + p[k] * b / rates[k]
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    pub fn energy(&self, p: &[f64]) -> f64 {
        self.user_energies(p).iter().sum()
    }

    /// Users that offload over a live link; only their powers are optimized.
    fn active_users(&self) -> Vec<usize> {
        (0..self.num_users())
            .filter(|&k| self.offload_bits[k] > 0.0 && self.gain[k] > 0.0)
            .collect()
    }

    fn required_rate(&self, k: usize) -> Option<f64> {
        let w = self.upload_window[k];
        (w > 0.0).then(|| self.offload_bits[k] / w)
    }
}

/// Log-bound coefficients `(ã, b̃)` anchored at `γ̃`.
pub fn surrogate_params(gamma_tilde: f64) -> Result<(f64, f64), PowerError> {
    if !(gamma_tilde > 0.0) || !gamma_tilde.is_finite() {
        return Err(PowerError::NonPositiveAnchor(gamma_tilde));
    }
    let a = gamma_tilde / (1.0 + gamma_tilde);
    let b = gamma_tilde.ln_1p() / LN_2 - a * gamma_tilde.log2();
    Ok((a, b))
}

/// The anchored lower bound `ã log₂γ + b̃` on `log₂(1+γ)`.
pub fn log_bound(gamma: f64, a: f64, b: f64) -> f64 {
    a * gamma.log2() + b
}

/// Surrogate rates `f_d,k(q)` in bits/s for every user.
pub fn surrogate_rates(prob: &PowerProblem, q: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = q.iter().map(|&x| x.exp2()).collect();
    (0..prob.num_users())
        .map(|k| {
            let interference: f64 = (0..prob.num_users())
                .filter(|&j| j != k)
                .map(|j| prob.gain[j] * p[j])
                .sum();
            let denom = interference + prob.noise[k];
            prob.bandwidth * (b[k] + a[k] * prob.gain[k].log2() + a[k] * q[k] - a[k] * denom.log2())
        })
        .collect()
}

/// Surrogate energies `E_loc + 2^q B / f_d(q)`, an upper bound on the true
/// per-user energy that is tight where the anchor SINRs are attained.
pub fn surrogate_energy(prob: &PowerProblem, q: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>, PowerError> {
    let n = prob.num_users();
    for v in [q.len(), a.len(), b.len()] {
        if v != n {
            return Err(PowerError::Length { expected: n, got: v });
        }
    }
    let fd = surrogate_rates(prob, q, a, b);
    let bad: Vec<usize> = (0..n)
        .filter(|&k| prob.offload_bits[k] > 0.0 && !(fd[k] > 0.0))
        .collect();
    if !bad.is_empty() {
        return Err(PowerError::NonPositiveRate(bad));
    }
    Ok((0..n)
        .map(|k| {
            let bits = prob.offload_bits[k];
            if bits == 0.0 {
                prob.local_energy[k]
            } else {
                prob.local_energy[k] + q[k].exp2() * bits / fd[k]
            }
        })
        .collect())
}

/// Closed-form quadratic-transform weights `η_k = √(2^{q_k} B_k) / f_d,k`.
pub fn eta_star(q: &[f64], offload_bits: &[f64], fd: &[f64]) -> Result<Vec<f64>, PowerError> {
    let bad: Vec<usize> = (0..q.len())
        .filter(|&k| offload_bits[k] > 0.0 && !(fd[k] > 0.0))
        .collect();
    if !bad.is_empty() {
        return Err(PowerError::NonPositiveRate(bad));
    }
    Ok((0..q.len())
        .map(|k| {
            if offload_bits[k] == 0.0 {
                0.0
            } else {
                (q[k].exp2() * offload_bits[k]).sqrt() / fd[k]
            }
        })
        .collect())
}

/// Anchored surrogate of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SfpState {
    pub q: Vec<f64>,
    pub eta: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    /// Users whose deadline is enforced in the inner solve.
    pub deadline_enforced: Vec<bool>,
    pub iteration: usize,
}

impl SfpState {
    /// Anchors the surrogate at `p`. Users that do not offload keep `ã = 0`.
    pub fn anchor(prob: &PowerProblem, p: &[f64], deadline_enforced: Vec<bool>, iteration: usize) -> Self {
        let n = prob.num_users();
        let q: Vec<f64> = p.iter().map(|x| x.log2()).collect();
        let gamma = prob.sinrs(p);
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for k in 0..n {
            if prob.offload_bits[k] > 0.0 && gamma[k] > 0.0 {
                let (ak, bk) = surrogate_params(gamma[k]).expect("positive anchor");
                a[k] = ak;
                b[k] = bk;
            }
        }
        let fd = surrogate_rates(prob, &q, &a, &b);
        let eta = (0..n)
            .map(|k| {
                if prob.offload_bits[k] > 0.0 && fd[k] > 0.0 {
                    (p[k] * prob.offload_bits[k]).sqrt() / fd[k]
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            q,
            eta,
            a_tilde: a,
            b_tilde: b,
            gamma_tilde: gamma,
            deadline_enforced,
            iteration,
        }
    }

    /// Value of the quadratic-transform objective `Σ 2η√(2^q B) − η² f_d + E_loc`.
    pub fn transformed_objective(&self, prob: &PowerProblem, q: &[f64]) -> f64 {
        let fd = surrogate_rates(prob, q, &self.a_tilde, &self.b_tilde);
        (0..prob.num_users())
            .map(|k| {
                let bits = prob.offload_bits[k];
                let offload = if bits > 0.0 {
                    2.0 * self.eta[k] * (q[k].exp2() * bits).sqrt() - self.eta[k] * self.eta[k] * fd[k]
                } else {
                    0.0
                };
                prob.local_energy[k] + offload
            })
            .sum()
    }
}

/// Inner barrier problem for the active users at a fixed anchor.
struct Barrier<'a> {
    prob: &'a PowerProblem,
    active: Vec<usize>,
    base_p: Vec<f64>,
    required: Vec<Option<f64>>,
    a: Vec<f64>,
    konst: Vec<f64>,
    num_coeff: Vec<f64>,
    den_coeff: Vec<f64>,
    q_lo: f64,
    q_hi: f64,
}

struct BarrierEval {
    objective: f64,
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Barrier<'a> {
    fn new(prob: &'a PowerProblem, state: &SfpState, base_p: &[f64]) -> Self {
        let active = prob.active_users();
        let required = active
            .iter()
            .map(|&k| {
                if state.deadline_enforced[k] {
                    prob.required_rate(k)
                } else {
                    None
                }
            })
            .collect();
        let a = active.iter().map(|&k| state.a_tilde[k]).collect();
        let konst = active
            .iter()
            .map(|&k| state.b_tilde[k] + state.a_tilde[k] * prob.gain[k].log2())
            .collect();
        let num_coeff = active
            .iter()
            .map(|&k| 2.0 * state.eta[k] * prob.offload_bits[k].sqrt())
            .collect();
        let den_coeff = active.iter().map(|&k| state.eta[k] * state.eta[k]).collect();
        Self {
            prob,
            active,
            base_p: base_p.to_vec(),
            required,
            a,
            konst,
            num_coeff,
            den_coeff,
            q_lo: prob.p_min.log2(),
            q_hi: prob.p_max.log2(),
        }
    }

    fn num_barriers(&self) -> usize {
        2 * self.active.len()
            + self.required.iter().filter(|r| r.is_some()).count()
            + usize::from(self.prob.budget.is_some())
    }

    fn powers(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.base_p.clone();
        for (i, &k) in self.active.iter().enumerate() {
            p[k] = x[i].exp2();
        }
        p
    }

    /// Affine-in-`x` rate bound `f_d` of active user `i` plus the interference
    /// shares `g_l p_l / denom` it sees from the other active users.
    fn rate_bound(&self, i: usize, x: &[f64], p: &[f64], share: Option<&mut [f64]>) -> f64 {
        let prob = self.prob;
        let k = self.active[i];
        let mut denom = prob.noise[k];
        for j in 0..prob.num_users() {
            if j != k {
                denom += prob.gain[j] * p[j];
            }
        }
        if let Some(share) = share {
            for (l, &kl) in self.active.iter().enumerate() {
                share[l] = if l == i { 0.0 } else { prob.gain[kl] * p[kl] / denom };
            }
        }
        prob.bandwidth * (self.konst[i] + self.a[i] * x[i] - self.a[i] * denom.log2())
    }

    /// Barrier value `t Φ − Σ log(slack)` alone, or `None` outside the strict
    /// interior.
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let prob = self.prob;
        let p = self.powers(x);
        let mut phi = 0.0;
        let mut barrier = 0.0;
        for i in 0..self.active.len() {
            let fd = self.rate_bound(i, x, &p, None);
            phi += self.num_coeff[i] * (0.5 * x[i]).exp2() - self.den_coeff[i] * fd;
            if let Some(r) = self.required[i] {
                let slack = fd - r;
                if !(slack > 0.0) {
                    return None;
                }
                barrier -= slack.ln();
            }
        }
        if let Some(budget) = prob.budget {
            let slack = budget.limit - budget.usage(&p);
            if !(slack > 0.0) {
                return None;
            }
            barrier -= slack.ln();
        }
        for &xl in x {
            let lo = xl - self.q_lo;
            let hi = self.q_hi - xl;
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            barrier -= lo.ln() + hi.ln();
        }
        Some(t * phi + barrier)
    }

    /// Barrier value with gradient and Hessian.
    fn eval(&self, x: &[f64], t: f64) -> Option<BarrierEval> {
        let n = self.active.len();
        let prob = self.prob;
        let w = prob.bandwidth;
        let p = self.powers(x);

        let mut phi = 0.0;
        let mut barrier = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut share = vec![0.0; n];
        let mut g_fd = vec![0.0; n];

        for i in 0..n {
            let fd = self.rate_bound(i, x, &p, Some(&mut share));
            let ai = self.a[i];
            for l in 0..n {
                g_fd[l] = -w * ai * share[l];
            }
            g_fd[i] += w * ai;

            let numer = self.num_coeff[i] * (0.5 * x[i]).exp2();
            phi += numer - self.den_coeff[i] * fd;
            grad[i] += t * numer * LN_2 / 2.0;
            hess[(i, i)] += t * numer * LN_2 * LN_2 / 4.0;

            // Both Φ and the deadline barrier depend on f_d; `c` collects
            // their weights on its gradient and Hessian.
            let mut c = -t * self.den_coeff[i];
            if let Some(r) = self.required[i] {
                let slack = fd - r;
                if !(slack > 0.0) {
                    return None;
                }
                barrier -= slack.ln();
                c -= 1.0 / slack;
                let outer = 1.0 / (slack * slack);
                for l in 0..n {
                    for m in 0..n {
                        hess[(l, m)] += outer * g_fd[l] * g_fd[m];
                    }
                }
            }
            // Hessian of f_d: −w a ln2 (diag(share) − share shareᵀ).
            let hc = -c * w * ai * LN_2;
            for l in 0..n {
                grad[l] += c * g_fd[l];
                hess[(l, l)] += hc * share[l];
                for m in 0..n {
                    hess[(l, m)] -= hc * share[l] * share[m];
                }
            }
        }

        if let Some(budget) = prob.budget {
            let slack = budget.limit - budget.usage(&p);
            if !(slack > 0.0) {
                return None;
            }
            barrier -= slack.ln();
            let g_u: Vec<f64> = (0..n).map(|l| -budget.slope * p[self.active[l]] * LN_2).collect();
            for l in 0..n {
                grad[l] -= g_u[l] / slack;
                hess[(l, l)] += budget.slope * p[self.active[l]] * LN_2 * LN_2 / slack;
                for m in 0..n {
                    hess[(l, m)] += g_u[l] * g_u[m] / (slack * slack);
                }
            }
        }

        for l in 0..n {
            let lo = x[l] - self.q_lo;
            let hi = self.q_hi - x[l];
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            barrier -= lo.ln() + hi.ln();
            grad[l] += -1.0 / lo + 1.0 / hi;
            hess[(l, l)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }

        Some(BarrierEval {
            objective: phi,
            value: t * phi + barrier,
            grad,
            hess,
        })
    }

    fn newton_direction(ev: &BarrierEval) -> DVector<f64> {
        let rhs = -&ev.grad;
        let mut hess = ev.hess.clone();
        let scale = hess.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut ridge = 0.0;
        loop {
            if let Some(chol) = hess.clone().cholesky() {
                return chol.solve(&rhs);
            }
            ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
            for l in 0..hess.nrows() {
                hess[(l, l)] += ridge;
            }
            if ridge > 1e6 * scale {
                return rhs / scale;
            }
        }
    }

    /// Centering steps for a fixed `t`.
    fn center(&self, x: &mut Vec<f64>, t: f64) {
        for _ in 0..100 {
            let Some(ev) = self.eval(x, t) else { return };
            let d = Self::newton_direction(&ev);
            let slope = ev.grad.dot(&d);
            if -slope / 2.0 <= 1e-8 {
                return;
            }
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-6 {
                let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
                if let Some(v) = self.value(&trial, t) {
                    if v <= ev.value + 0.25 * step * slope {
                        *x = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                return;
            }
        }
    }
}

/// Minimizes the quadratic-transform objective at the anchor in `state`,
/// starting from the strictly feasible `q_start`. Returns `q` for every user;
/// non-offloading users stay at their starting power.
pub fn inner_solve(prob: &PowerProblem, state: &SfpState, q_start: &[f64]) -> Vec<f64> {
    let base_p: Vec<f64> = q_start.iter().map(|x| x.exp2()).collect();
    let barrier = Barrier::new(prob, state, &base_p);
    if barrier.active.is_empty() {
        return q_start.to_vec();
    }
    let mut x: Vec<f64> = barrier.active.iter().map(|&k| q_start[k]).collect();
    let Some(start) = barrier.eval(&x, 1.0) else {
        return q_start.to_vec();
    };
    let m = barrier.num_barriers() as f64;
    let scale = start.objective.abs().max(1e-300);
    let mut t = m / scale;
    let target_gap = 1e-6 * scale;
    loop {
        barrier.center(&mut x, t);
        if m / t <= target_gap {
            break;
        }
        t *= 50.0;
    }
    let mut q = q_start.to_vec();
    for (i, &k) in barrier.active.iter().enumerate() {
        q[k] = x[i];
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfpOptions {
    /// Stop once the energy changes by at most this many joules.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl SfpOptions {
    pub fn from_scenario(sc: &Scenario) -> Self {
        Self {
            tolerance: sc.sfp_tolerance,
            max_iter: sc.sfp_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolution {
    pub powers: Vec<f64>,
    /// True total energy at the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Users whose deadline cannot be met by any power allocation.
    pub deadline_dropped: Vec<bool>,
    /// The surface budget cannot be met even at the smallest useful powers;
    /// every power is then at its floor.
    pub budget_infeasible: bool,
}

impl PowerSolution {
    pub fn energy(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial energy")
    }
}

/// Strict interior margins used for starting points.
const START_FLOOR: f64 = 2.0;
const START_CEIL: f64 = 1.001;
const TARGET_MARGIN: f64 = 1.001;

fn strictly_feasible(prob: &PowerProblem, p: &[f64], enforced: &[bool]) -> bool {
    if let Some(b) = prob.budget {
        if !(b.usage(p) < b.limit) {
            return false;
        }
    }
    let rates = prob.rates(p);
    (0..prob.num_users()).all(|k| {
        !enforced[k]
            || match prob.required_rate(k) {
                Some(r) => rates[k] > r * (1.0 + 1e-9),
                None => true,
            }
    })
}

/// Minimal powers meeting every reachable deadline, found by the standard
/// fixed-point iteration on SINR targets. Returns the powers and which users
/// keep an enforced deadline.
fn deadline_powers(prob: &PowerProblem) -> (Vec<f64>, Vec<bool>) {
    let n = prob.num_users();
    let lo = prob.p_min * START_FLOOR;
    let hi = prob.p_max / START_CEIL;
    let active = prob.active_users();
    let mut enforced = vec![false; n];
    let mut target = vec![0.0; n];
    for &k in &active {
        if let Some(r) = prob.required_rate(k) {
            enforced[k] = true;
            target[k] = ((r / prob.bandwidth).exp2() - 1.0) * TARGET_MARGIN;
        }
    }
    let mut p = vec![lo; n];
    loop {
        for _ in 0..500 {
            let mut change: f64 = 0.0;
            for k in 0..n {
                if !enforced[k] {
                    continue;
                }
                let interference: f64 = (0..n).filter(|&j| j != k).map(|j| prob.gain[j] * p[j]).sum();
                let next = (target[k] * (interference + prob.noise[k]) / prob.gain[k]).clamp(lo, hi);
                change = change.max((next - p[k]).abs() / p[k]);
                p[k] = next;
            }
            if change < 1e-12 {
                break;
            }
        }
        let gamma = prob.sinrs(&p);
        let missed: Vec<usize> = (0..n)
            .filter(|&k| enforced[k] && gamma[k] < target[k] / TARGET_MARGIN * (1.0 + 1e-6))
            .collect();
        if missed.is_empty() {
            return (p, enforced);
        }
        // Release the user that misses its target by the widest margin.
        let worst = *missed
            .iter()
            .max_by(|&&a, &&b| (target[a] / gamma[a].max(1e-300)).total_cmp(&(target[b] / gamma[b].max(1e-300))))
            .expect("nonempty");
        enforced[worst] = false;
        p[worst] = lo;
    }
}

/// Runs the outer iteration from `init` (or a default start) until the true
/// energy settles.
pub fn sfp_solve(prob: &PowerProblem, opts: &SfpOptions, init: Option<&[f64]>) -> PowerSolution {
    let n = prob.num_users();
    let (fm_powers, enforced) = deadline_powers(prob);
    let lo = prob.p_min * START_FLOOR;
    let hi = prob.p_max / START_CEIL;
    let active = prob.active_users();

    let shape = |p: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|k| if active.contains(&k) { p[k].clamp(lo, hi) } else { lo })
            .collect()
    };
    let default_start = {
        let mut cap = prob.p_max;
        if let Some(b) = prob.budget {
            if b.slope > 0.0 {
                cap = cap.min((b.limit - b.floor) / (b.slope * n as f64));
            }
        }
        vec![0.5 * cap; n]
    };
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(p) = init {
        if p.len() == n {
            candidates.push(shape(p));
        }
    }
    candidates.push(shape(&default_start));
    candidates.push(shape(&fm_powers));
    let start = candidates.into_iter().find(|p| strictly_feasible(prob, p, &enforced));

    let Some(mut p) = start else {
        let floor = vec![prob.p_min; n];
        let energy = prob.energy(&floor);
        return PowerSolution {
            powers: floor,
            trace: vec![energy],
            iterations: 0,
            deadline_dropped: (0..n).map(|k| active.contains(&k) && !enforced[k]).collect(),
            budget_infeasible: true,
        };
    };

    let mut energy = prob.energy(&p);
    let mut trace = vec![energy];
    let mut iterations = 0;
    if !active.is_empty() {
        for tau in 1..=opts.max_iter {
            iterations = tau;
            let state = SfpState::anchor(prob, &p, enforced.clone(), tau);
            let q_new = inner_solve(prob, &state, &state.q);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = state
                    .q
                    .iter()
                    .zip(&q_new)
                    .map(|(a, b)| (a + step * (b - a)).exp2())
                    .collect();
                let e = prob.energy(&trial);
                if e <= energy && strictly_feasible(prob, &trial, &enforced) {
                    accepted = Some((trial, e));
                    break;
                }
                step *= 0.5;
            }
            let previous = energy;
            if let Some((trial, e)) = accepted {
                p = trial;
                energy = e;
            }
            trace.push(energy);
            if (previous - energy).abs() <= opts.tolerance {
                break;
            }
        }
    }
    PowerSolution {
        powers: p,
        trace,
        iterations,
        deadline_dropped: (0..n).map(|k| active.contains(&k) && !enforced[k]).collect(),
        budget_infeasible: false,
    }
}
