//! Local and offloaded computation: delay and energy per task.
//!
//! Edge-server execution time and result download are taken as zero.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ComputeError {
    #[error("CPU frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("offloading {bits} bits needs a positive rate")]
    ZeroRate { bits: f64 },
    #[error("offloading ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
}

/// Delay and energy of one user's task in one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlotCost {
    pub t_loc: f64,
    pub t_off: f64,
    pub e_loc: f64,
    pub e_off: f64,
    pub e_tot: f64,
}

impl SlotCost {
    pub fn new(t_loc: f64, e_loc: f64, t_off: f64, e_off: f64) -> Self {
        Self {
            t_loc,
            t_off,
            e_loc,
            e_off,
            e_tot: e_loc + e_off,
        }
    }

    /// Completion time: local and offloaded parts run back to back.
    pub fn latency(&self) -> f64 {
        self.t_loc + self.t_off
    }
}

fn check_ratio(o: f64) -> Result<(), ComputeError> {
    if (0.0..=1.0).contains(&o) {
        Ok(())
    } else {
        Err(ComputeError::RatioOutOfRange(o))
    }
}

/// `(t_loc, E_loc)` for keeping a `1 − o` share of `bits` on the device.
pub fn local_cost(o: f64, bits: f64, cycles_per_bit: f64, freq: f64, kappa: f64) -> Result<(f64, f64), ComputeError> {
    check_ratio(o)?;
    if !(freq > 0.0) {
        return Err(ComputeError::NonPositiveFrequency(freq));
    }
    let cycles = (1.0 - o) * bits * cycles_per_bit;
    Ok((cycles / freq, kappa * freq * freq * cycles))
}

/// `(t_off, E_off)` for uploading an `o` share of `bits` at `rate` with power `p`.
pub fn offload_cost(o: f64, bits: f64, p: f64, rate: f64) -> Result<(f64, f64), ComputeError> {
    check_ratio(o)?;
    let sent = o * bits;
    if sent == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(rate > 0.0) {
        return Err(ComputeError::ZeroRate { bits: sent });
    }
    let t = sent / rate;
    Ok((t, p * t))
}

/// Cost of one user's slot under ratio `o`, power `p` and uplink rate `rate`.
pub fn slot_cost(
    o: f64,
    bits: f64,
    cycles_per_bit: f64,
    freq: f64,
    kappa: f64,
    p: f64,
    rate: f64,
) -> Result<SlotCost, ComputeError> {
    let (t_loc, e_loc) = local_cost(o, bits, cycles_per_bit, freq, kappa)?;
    let (t_off, e_off) = offload_cost(o, bits, p, rate)?;
    Ok(SlotCost::new(t_loc, e_loc, t_off, e_off))
}

/// True iff the task completes within `deadline` (closed inequality).
pub fn latency_feasible(cost: &SlotCost, deadline: f64) -> bool {
    cost.latency() <= deadline
}
