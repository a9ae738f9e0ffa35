//! Rician channel realizations and surface coefficient algebra.
//!
//! Both the surface and the base station carry uniform linear arrays along the
//! Y axis with half-wavelength spacing. A user's link to the base station is the
//! cascade `g_k = g_{k,M} Θ_λ A G` where `Θ_λ` is the reflection or transmission
//! coefficient matrix for the user's side and `A` the per-element amplification.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{substream, Stream};
use crate::scenario::{RisMode, Scenario, Side, UserDevice};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("user {user} sits on the surface (zero link distance)")]
    ZeroDistance { user: usize },
    #[error("surface and base station coincide (zero link distance)")]
    ZeroBackhaulDistance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// User-to-surface vectors, `K × M`.
    pub user_ris: Vec<Vec<Complex64>>,
    /// Surface-to-BS matrix, `M × B`, row-major.
    pub ris_bs: Vec<Complex64>,
    pub user_distances: Vec<f64>,
    pub ris_bs_distance: f64,
    pub sides: Vec<Side>,
    pub num_elements: usize,
    pub num_antennas: usize,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.user_ris.len()
    }

    fn ris_bs_row(&self, m: usize) -> &[Complex64] {
        &self.ris_bs[m * self.num_antennas..(m + 1) * self.num_antennas]
    }
}

/// Surface configuration: energy split, quantized phases and amplitude gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RisState {
    pub beta_r: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub phi_r: Vec<f64>,
    pub phi_t: Vec<f64>,
    /// Per-element amplitude gain `√α`.
    pub amp: Vec<f64>,
}

impl RisState {
    /// Even energy split, zero phase, unit gain; reflect-only modes put all
    /// energy on the reflect side.
    pub fn initial(num_elements: usize, mode: RisMode) -> Self {
        let beta_r = if mode.is_star() { 0.5 } else { 1.0 };
        Self {
            beta_r: vec![beta_r; num_elements],
            beta_t: vec![1.0 - beta_r; num_elements],
            phi_r: vec![0.0; num_elements],
            phi_t: vec![0.0; num_elements],
            amp: vec![1.0; num_elements],
        }
    }

    pub fn len(&self) -> usize {
        self.amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amp.is_empty()
    }

    /// Restores every structural invariant: `β_r ∈ [0,1]`, `β_t = 1 − β_r`,
    /// phases on the grid, gain in `[1, α_max]`, plus the mode overrides.
    pub fn project(&mut self, mode: RisMode, amplification_max: f64, phase_bits: u32) {
        for m in 0..self.len() {
            let br = if mode.is_star() {
                self.beta_r[m].clamp(0.0, 1.0)
            } else {
                1.0
            };
            self.beta_r[m] = br;
            self.beta_t[m] = 1.0 - br;
            self.phi_r[m] = quantize_phase(self.phi_r[m], phase_bits);
            self.phi_t[m] = quantize_phase(self.phi_t[m], phase_bits);
            self.amp[m] = if mode.is_active() {
                self.amp[m].clamp(1.0, amplification_max)
            } else {
                1.0
            };
        }
    }

    pub fn satisfies_invariants(&self, mode: RisMode, amplification_max: f64, phase_bits: u32) -> bool {
        let on_grid = |phi: f64| quantize_phase(phi, phase_bits) == phi;
        (0..self.len()).all(|m| {
            let split = (0.0..=1.0).contains(&self.beta_r[m]) && self.beta_r[m] + self.beta_t[m] == 1.0;
            let amp_ok = if mode.is_active() {
                (1.0..=amplification_max).contains(&self.amp[m])
            } else {
                self.amp[m] == 1.0
            };
            let side_ok = mode.is_star() || (self.beta_r[m] == 1.0 && self.beta_t[m] == 0.0);
            split && amp_ok && side_ok && on_grid(self.phi_r[m]) && on_grid(self.phi_t[m])
        })
    }
}

/// Noise powers seen at the surface amplifiers and at the BS, in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub ris: f64,
    pub bs: f64,
}

impl Noise {
    /// Passive surfaces have no amplifier, hence no surface noise.
    pub fn for_scenario(sc: &Scenario) -> Self {
        Self {
            ris: if sc.ris_mode.is_active() { sc.ris_noise } else { 0.0 },
            bs: sc.bs_noise,
        }
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Cosine of the angle between the Y-axis array and the direction `from → to`.
fn axis_cosine(from: [f64; 3], to: [f64; 3]) -> f64 {
    (to[1] - from[1]) / distance(from, to)
}

/// Half-wavelength ULA response `exp(iπ m cos ψ)`.
pub fn steering_vector(n: usize, cos_angle: f64) -> Vec<Complex64> {
    (0..n)
        .map(|m| Complex64::from_polar(1.0, std::f64::consts::PI * m as f64 * cos_angle))
        .collect()
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Large-scale amplitude `√(μ d^-δ)` and the LoS/NLoS mixing weights.
fn link_weights(sc: &Scenario, d: f64) -> (f64, f64, f64) {
    let scale = (sc.ref_gain * d.powf(-sc.path_loss_exp)).sqrt();
    let k = sc.rician_factor;
    if k.is_infinite() {
        (scale, 1.0, 0.0)
    } else {
        (scale, (k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
    }
}

/// Draws one realization for every user. Callers pick `rng` per slot so that a
/// slot's channels do not depend on how many other slots were generated.
pub fn sample_channels<R: Rng + ?Sized>(
    sc: &Scenario,
    users: &[UserDevice],
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    let m_count = sc.num_elements;
    let b_count = sc.num_bs_antennas;

    let d_mb = distance(sc.ris_position, sc.bs_position);
    if d_mb <= 0.0 {
        return Err(ChannelError::ZeroBackhaulDistance);
    }
    let (scale, los_w, nlos_w) = link_weights(sc, d_mb);
    let depart = steering_vector(m_count, axis_cosine(sc.ris_position, sc.bs_position));
    let arrive = steering_vector(b_count, axis_cosine(sc.bs_position, sc.ris_position));
    let mut ris_bs = Vec::with_capacity(m_count * b_count);
    for dep in &depart {
        for arr in &arrive {
            let nlos = if nlos_w > 0.0 { complex_normal(rng) } else { Complex64::new(0.0, 0.0) };
            ris_bs.push((dep * arr * los_w + nlos * nlos_w) * scale);
        }
    }

    let mut user_ris = Vec::with_capacity(users.len());
    let mut user_distances = Vec::with_capacity(users.len());
    for (k, u) in users.iter().enumerate() {
        let d = distance(u.position, sc.ris_position);
        if d <= 0.0 {
            return Err(ChannelError::ZeroDistance { user: k });
        }
        let (scale, los_w, nlos_w) = link_weights(sc, d);
        let los = steering_vector(m_count, axis_cosine(sc.ris_position, u.position));
        let row = los
            .into_iter()
            .map(|a| {
                let nlos = if nlos_w > 0.0 { complex_normal(rng) } else { Complex64::new(0.0, 0.0) };
                (a * los_w + nlos * nlos_w) * scale
            })
            .collect();
        user_ris.push(row);
        user_distances.push(d);
    }

    Ok(ChannelRealization {
        user_ris,
        ris_bs,
        user_distances,
        ris_bs_distance: d_mb,
        sides: users.iter().map(|u| u.side).collect(),
        num_elements: m_count,
        num_antennas: b_count,
    })
}

/// Realization for slot `n` of the run seeded with `seed`.
pub fn slot_channels(
    sc: &Scenario,
    users: &[UserDevice],
    seed: u64,
    n: usize,
) -> Result<ChannelRealization, ChannelError> {
    sample_channels(sc, users, &mut substream(seed, Stream::Channel, n as u64))
}

/// Nearest point of the grid `ιπ/2^(b-1)`, reduced to `[0, 2π)`.
pub fn quantize_phase(phi: f64, bits: u32) -> f64 {
    let levels = 1i64 << bits;
    let step = std::f64::consts::PI / (1i64 << (bits - 1)) as f64;
    let idx = (phi / step).round() as i64;
    idx.rem_euclid(levels) as f64 * step
}

/// Diagonal of `Θ_λ = diag(β_λ^m e^{iφ_λ^m})`.
pub fn coefficient_matrix(ris: &RisState, side: Side) -> Vec<Complex64> {
    let (beta, phi) = match side {
        Side::Reflect => (&ris.beta_r, &ris.phi_r),
        Side::Transmit => (&ris.beta_t, &ris.phi_t),
    };
    beta.iter()
        .zip(phi)
        .map(|(&b, &p)| Complex64::from_polar(b, p))
        .collect()
}

fn check_dims(ch: &ChannelRealization, ris: &RisState) -> Result<(), ChannelError> {
    if ris.len() != ch.num_elements {
        return Err(ChannelError::DimensionMismatch {
            expected: ch.num_elements,
            got: ris.len(),
        });
    }
    Ok(())
}

/// `g_k = g_{k,M} Θ_λ A G`, a length-B vector.
pub fn equivalent_channel(
    ch: &ChannelRealization,
    ris: &RisState,
    k: usize,
) -> Result<Vec<Complex64>, ChannelError> {
    check_dims(ch, ris)?;
    let theta = coefficient_matrix(ris, ch.sides[k]);
    let mut g = vec![Complex64::new(0.0, 0.0); ch.num_antennas];
    for (m, (&h, &t)) in ch.user_ris[k].iter().zip(&theta).enumerate() {
        let w = h * t * ris.amp[m];
        for (gb, &gm) in g.iter_mut().zip(ch.ris_bs_row(m)) {
            *gb += w * gm;
        }
    }
    Ok(g)
}

/// Per-slot scalar summary of the cascade that the power and offloading
/// solvers work with.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    /// `‖g_k‖²`.
    pub gain: Vec<f64>,
    /// Interference-free denominator `σ̇²‖Θ_λ A G‖² + σ̈²` per user.
    pub noise: Vec<f64>,
    /// `‖A G‖²`, the per-watt surface power draw.
    pub usage_slope: f64,
    /// `σ̇²‖A‖²_F`, the surface power drawn by its own noise.
    pub usage_floor: f64,
}

impl LinkBudget {
    pub fn num_users(&self) -> usize {
        self.gain.len()
    }

    pub fn sinr(&self, p: &[f64], k: usize) -> f64 {
        let interference: f64 = (0..self.gain.len())
            .filter(|&j| j != k)
            .map(|j| self.gain[j] * p[j])
            .sum();
        let denom = interference + self.noise[k];
        let signal = self.gain[k] * p[k];
        if signal == 0.0 {
            0.0
        } else {
            signal / denom
        }
    }

    pub fn sinrs(&self, p: &[f64]) -> Vec<f64> {
        let total: f64 = self.gain.iter().zip(p).map(|(g, p)| g * p).sum();
        (0..self.gain.len())
            .map(|k| {
                let signal = self.gain[k] * p[k];
                if signal == 0.0 {
                    0.0
                } else {
                    signal / ((total - signal).max(0.0) + self.noise[k])
                }
            })
            .collect()
    }

    pub fn ris_usage(&self, p: &[f64]) -> f64 {
        self.usage_slope * p.iter().sum::<f64>() + self.usage_floor
    }
}

pub fn link_budget(ch: &ChannelRealization, ris: &RisState, noise: Noise) -> Result<LinkBudget, ChannelError> {
    check_dims(ch, ris)?;
    let row_norms: Vec<f64> = (0..ch.num_elements)
        .map(|m| ch.ris_bs_row(m).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let amp2: Vec<f64> = ris.amp.iter().map(|a| a * a).collect();
    let usage_slope: f64 = amp2.iter().zip(&row_norms).map(|(a, r)| a * r).sum();
    let side_noise = |beta: &[f64]| -> f64 {
        noise.ris
            * (0..ch.num_elements)
                .map(|m| beta[m] * beta[m] * amp2[m] * row_norms[m])
                .sum::<f64>()
    };
    let reflect_noise = side_noise(&ris.beta_r);
    let transmit_noise = side_noise(&ris.beta_t);

    let mut gain = Vec::with_capacity(ch.num_users());
    let mut per_user_noise = Vec::with_capacity(ch.num_users());
    for k in 0..ch.num_users() {
        let g = equivalent_channel(ch, ris, k)?;
        gain.push(g.iter().map(|z| z.norm_sqr()).sum());
        per_user_noise.push(
            match ch.sides[k] {
                Side::Reflect => reflect_noise,
                Side::Transmit => transmit_noise,
            } + noise.bs,
        );
    }
    Ok(LinkBudget {
        gain,
        noise: per_user_noise,
        usage_slope,
        usage_floor: noise.ris * amp2.iter().sum::<f64>(),
    })
}

/// SINR of user `k`; interferers use their own side's coefficients.
pub fn sinr(ch: &ChannelRealization, ris: &RisState, noise: Noise, p: &[f64], k: usize) -> Result<f64, ChannelError> {
    if p.len() != ch.num_users() {
        return Err(ChannelError::DimensionMismatch {
            expected: ch.num_users(),
            got: p.len(),
        });
    }
    Ok(link_budget(ch, ris, noise)?.sinr(p, k))
}

/// Shannon rate `W log₂(1+γ)` in bits/s.
pub fn rate(bandwidth: f64, gamma: f64) -> f64 {
    bandwidth * gamma.ln_1p() / std::f64::consts::LN_2
}

/// Left-hand side of the surface power budget: `Σ_k ‖AG‖² p_k + σ̇²‖A‖²_F`.
pub fn ris_power_usage(ch: &ChannelRealization, ris: &RisState, noise: Noise, p: &[f64]) -> Result<f64, ChannelError> {
    Ok(link_budget(ch, ris, noise)?.ris_usage(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::sample_users;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar_channel(h: f64, g: f64, side: Side) -> ChannelRealization {
        ChannelRealization {
            user_ris: vec![vec![c(h)]],
            ris_bs: vec![c(g)],
            user_distances: vec![1.0],
            ris_bs_distance: 1.0,
            sides: vec![side],
            num_elements: 1,
            num_antennas: 1,
        }
    }

    fn unit_ris(m: usize) -> RisState {
        RisState {
            beta_r: vec![1.0; m],
            beta_t: vec![0.0; m],
            phi_r: vec![0.0; m],
            phi_t: vec![0.0; m],
            amp: vec![1.0; m],
        }
    }

    #[test]
    fn quantize_examples() {
        for b in 1..6 {
            assert_eq!(quantize_phase(0.0, b), 0.0);
        }
        assert!((quantize_phase(0.8, 2) - PI / 2.0).abs() < 1e-15);
        assert!((quantize_phase(-0.1, 3)).abs() < 1e-15);
        assert!((quantize_phase(2.0 * PI - 0.1, 3)).abs() < 1e-15);
        assert!((quantize_phase(-PI / 2.0, 2) - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut rng = substream(5, Stream::Fixture, 0);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-20.0..20.0);
            let b = rng.random_range(1..8);
            let q = quantize_phase(x, b);
            assert_eq!(quantize_phase(q, b), q);
            assert!((0.0..2.0 * PI).contains(&q));
        }
    }

    #[test]
    fn coefficient_examples() {
        let ris = unit_ris(3);
        for z in coefficient_matrix(&ris, Side::Reflect) {
            assert_eq!(z, c(1.0));
        }
        let mut ris = RisState::initial(2, RisMode::ActiveStar);
        ris.beta_r[0] = 0.6;
        ris.beta_t[0] = 0.4;
        ris.phi_r[0] = PI;
        let theta = coefficient_matrix(&ris, Side::Reflect);
        assert!((theta[0] - c(-0.6)).norm() < 1e-15);
        let t = coefficient_matrix(&ris, Side::Transmit);
        for m in 0..2 {
            assert!((theta[m].norm() + t[m].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_equivalent_channel() {
        let ch = scalar_channel(2.0, 0.5, Side::Reflect);
        let mut ris = unit_ris(1);
        ris.amp[0] = 3.0;
        let g = equivalent_channel(&ch, &ris, 0).unwrap();
        assert!((g[0] - c(3.0)).norm() < 1e-15);
        ris.amp[0] = 6.0;
        let g2 = equivalent_channel(&ch, &ris, 0).unwrap();
        assert!((g2[0].norm() - 2.0 * g[0].norm()).abs() < 1e-12);
    }

    #[test]
    fn identity_surface_is_plain_cascade() {
        let sc = Scenario::desk();
        let pop = sample_users(&sc, &mut substream(2, Stream::Users, 0));
        let ch = slot_channels(&sc, &pop.users, 2, 0).unwrap();
        let ris = unit_ris(sc.num_elements);
        let g = equivalent_channel(&ch, &ris, 0).unwrap();
        for (b, gb) in g.iter().enumerate() {
            let direct: Complex64 = (0..sc.num_elements)
                .map(|m| ch.user_ris[0][m] * ch.ris_bs[m * sc.num_bs_antennas + b])
                .sum();
            assert!((gb - direct).norm() <= 1e-12 * direct.norm());
        }
    }

    #[test]
    fn sinr_examples() {
        let ch = scalar_channel(1.0, 1.0, Side::Reflect);
        let ris = unit_ris(1);
        let noise = Noise { ris: 0.0, bs: 1.0 };
        assert!((sinr(&ch, &ris, noise, &[1.0], 0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sinr(&ch, &ris, noise, &[0.0], 0).unwrap(), 0.0);

        let lb = LinkBudget {
            gain: vec![2.0, 2.0],
            noise: vec![0.0, 0.0],
            usage_slope: 0.0,
            usage_floor: 0.0,
        };
        assert!((lb.sinr(&[0.3, 0.3], 0) - 1.0).abs() < 1e-15);
        assert_eq!(lb.sinrs(&[0.3, 0.3]), vec![1.0, 1.0]);
    }

    #[test]
    fn rate_examples() {
        assert!((rate(1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((rate(2e6, 3.0) - 4e6).abs() < 1e-6);
        assert_eq!(rate(2e6, 0.0), 0.0);
    }

    #[test]
    fn ris_usage_examples() {
        // ‖G‖² = 2 with one element and two antennas.
        let ch = ChannelRealization {
            user_ris: vec![vec![c(1.0)]],
            ris_bs: vec![c(1.0), c(1.0)],
            user_distances: vec![1.0],
            ris_bs_distance: 1.0,
            sides: vec![Side::Reflect],
            num_elements: 1,
            num_antennas: 2,
        };
        let mut ris = unit_ris(1);
        let noise = Noise { ris: 0.0, bs: 1.0 };
        assert!((ris_power_usage(&ch, &ris, noise, &[0.1]).unwrap() - 0.2).abs() < 1e-15);
        assert!(ris_power_usage(&ch, &ris, noise, &[0.2]).unwrap() >= 0.2);
        ris.amp[0] = 0.0;
        assert_eq!(ris_power_usage(&ch, &ris, Noise { ris: 1.0, bs: 1.0 }, &[0.1]).unwrap(), 0.0);
    }

    #[test]
    fn pure_los_limit() {
        let mut sc = Scenario::desk();
        sc.rician_factor = f64::INFINITY;
        let pop = sample_users(&sc, &mut substream(4, Stream::Users, 0));
        let a = slot_channels(&sc, &pop.users, 4, 0).unwrap();
        let b = slot_channels(&sc, &pop.users, 4, 1).unwrap();
        assert_eq!(a, b);
        let d = a.user_distances[0];
        let scale = (sc.ref_gain * d.powf(-sc.path_loss_exp)).sqrt();
        for z in &a.user_ris[0] {
            assert!((z.norm() - scale).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn mean_power_matches_path_loss() {
        let mut sc = Scenario::desk();
        sc.num_users = 1;
        sc.num_reflect_users = 1;
        sc.num_transmit_users = 0;
        sc.num_elements = 1;
        sc.num_bs_antennas = 1;
        let mut pop = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        let mut pos = sc.ris_position;
        pos[0] += 1.0;
        pop.users[0].position = pos;
        let mut rng = substream(9, Stream::Fixture, 0);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let ch = sample_channels(&sc, &pop.users, &mut rng).unwrap();
            total += ch.user_ris[0][0].norm_sqr();
        }
        let mean = total / n as f64;
        assert!((mean / sc.ref_gain - 1.0).abs() < 0.05, "mean power {mean}");
    }

    #[test]
    fn zero_distance_is_an_error() {
        let sc = Scenario::desk();
        let mut pop = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        pop.users[2].position = sc.ris_position;
        assert_eq!(
            slot_channels(&sc, &pop.users, 1, 0),
            Err(ChannelError::ZeroDistance { user: 2 })
        );
    }

    #[test]
    fn reflect_only_silences_transmit_users() {
        let sc = Scenario::desk();
        let pop = sample_users(&sc, &mut substream(1, Stream::Users, 0));
        let ch = slot_channels(&sc, &pop.users, 1, 0).unwrap();
        let ris = RisState::initial(sc.num_elements, RisMode::ActiveReflect);
        let lb = link_budget(&ch, &ris, Noise::for_scenario(&sc)).unwrap();
        for (k, u) in pop.users.iter().enumerate() {
            assert_eq!(u.side == Side::Transmit, lb.gain[k] == 0.0);
        }
    }

    #[test]
    fn projection_restores_invariants() {
        let mut ris = RisState::initial(4, RisMode::ActiveStar);
        ris.beta_r = vec![-0.2, 0.3, 1.4, 0.9];
        ris.phi_r = vec![0.1, 7.0, -1.0, 3.0];
        ris.amp = vec![0.5, 3.0, 20.0, 1.0];
        ris.project(RisMode::ActiveStar, 10.0, 3);
        assert!(ris.satisfies_invariants(RisMode::ActiveStar, 10.0, 3));
        ris.project(RisMode::PassiveReflect, 10.0, 3);
        assert!(ris.satisfies_invariants(RisMode::PassiveReflect, 10.0, 3));
        assert!(ris.amp.iter().all(|&a| a == 1.0));
    }
}
