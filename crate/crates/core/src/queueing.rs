//! Per-user FIFO task queues and Lyapunov accounting.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("stability needs at least {needed} recorded slots, got {got}")]
    ShortHistory { needed: usize, got: usize },
}

/// `Q' = max(Q − S, 0) + j`.
pub fn step_queue(q: f64, served: f64, admitted: f64) -> f64 {
    (q - served).max(0.0) + admitted
}

/// `L(Q) = ½ Σ Q_k²`.
pub fn lyapunov(q: &[f64]) -> f64 {
    0.5 * q.iter().map(|x| x * x).sum::<f64>()
}

/// One-slot change `L(Q') − L(Q)` of the queues under service `s` and admission `j`.
pub fn exact_drift(q: &[f64], s: &[f64], j: &[f64]) -> f64 {
    let next: Vec<f64> = q
        .iter()
        .zip(s)
        .zip(j)
        .map(|((&q, &s), &j)| step_queue(q, s, j))
        .collect();
    lyapunov(&next) - lyapunov(q)
}

/// Upper bound `½ Σ (j² + S²) + Σ Q (j − S)` on the one-slot drift.
///
/// Holds whenever `S_k ≤ Q_k`, since the exact drift is
/// `½ Σ (S − j)² + Σ Q (j − S)` and `(S − j)² ≤ S² + j²` for nonnegative terms.
pub fn drift_bound(q: &[f64], s: &[f64], j: &[f64]) -> f64 {
    q.iter()
        .zip(s)
        .zip(j)
        .map(|((&q, &s), &j)| 0.5 * (j * j + s * s) + q * (j - s))
        .sum()
}

/// The same expression with a quarter weight on the quadratic term. It is
/// smaller than the exact drift whenever `S_k > 0` and `j_k = 0`, so it is not a
/// valid bound; kept for the acceptance report only.
pub fn quarter_weight_drift_bound(q: &[f64], s: &[f64], j: &[f64]) -> f64 {
    q.iter()
        .zip(s)
        .zip(j)
        .map(|((&q, &s), &j)| 0.25 * (j * j + s * s) + q * (j - s))
        .sum()
}

/// `Ë = drift + V Σ E_k`.
pub fn drift_plus_penalty(drift: f64, energies: &[f64], v: f64) -> f64 {
    drift + v * energies.iter().sum::<f64>()
}

/// Time-averaged total backlog `(1/N) Σ_n Σ_k Q_k[n]`.
pub fn stability_metric(history: &[Vec<f64>]) -> Result<f64, QueueError> {
    if history.len() < 2 {
        return Err(QueueError::ShortHistory {
            needed: 2,
            got: history.len(),
        });
    }
    Ok(history.iter().map(|q| q.iter().sum::<f64>()).sum::<f64>() / history.len() as f64)
}

/// Backlog means over the middle and the last fifth of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub middle_mean: f64,
    pub last_mean: f64,
    pub stable: bool,
}

/// Finite-horizon stability proxy: the total backlog averaged over the last
/// 20% of slots exceeds its average over the middle 20% by less than 10%.
/// `floor` is an absolute backlog below which both windows count as empty.
pub fn stability_proxy(history: &[Vec<f64>], floor: f64) -> Result<StabilityReport, QueueError> {
    let n = history.len();
    if n < 5 {
        return Err(QueueError::ShortHistory { needed: 5, got: n });
    }
    let fifth = n / 5;
    let window_mean = |start: usize| {
        history[start..start + fifth]
            .iter()
            .map(|q| q.iter().sum::<f64>())
            .sum::<f64>()
            / fifth as f64
    };
    let middle_mean = window_mean(2 * fifth);
    let last_mean = window_mean(n - fifth);
    let stable = last_mean <= floor || last_mean < 1.1 * middle_mean;
    Ok(StabilityReport {
        middle_mean,
        last_mean,
        stable,
    })
}

/// Backlog per user together with the trajectory that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub backlog: Vec<f64>,
    pub history: Vec<Vec<f64>>,
}

impl QueueState {
    pub fn new(num_users: usize) -> Self {
        Self {
            backlog: vec![0.0; num_users],
            history: Vec::new(),
        }
    }

    /// Bits that can actually be executed this slot, `min(S_k, Q_k)`.
    pub fn servable(&self, demand: &[f64]) -> Vec<f64> {
        self.backlog.iter().zip(demand).map(|(&q, &s)| s.min(q)).collect()
    }

    /// Applies one slot and records the pre-step backlog.
    pub fn step(&mut self, served: &[f64], admitted: &[f64]) {
        self.history.push(self.backlog.clone());
        for ((q, &s), &j) in self.backlog.iter_mut().zip(served).zip(admitted) {
            *q = step_queue(*q, s, j);
        }
    }

    pub fn lyapunov(&self) -> f64 {
        lyapunov(&self.backlog)
    }
}
