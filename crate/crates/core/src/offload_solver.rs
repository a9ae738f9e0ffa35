//! Exact per-slot offloading ratios.
//!
//! With powers and rates fixed, each user's energy is affine in its ratio `o_k`
//! and its completion time is linear in `o_k`, so the deadline cuts `[0, 1]` to
//! an interval. The only coupling is the edge-server cycle capacity, which
//! makes the problem a continuous knapsack: start every user at the low end of
//! its interval, then raise users with negative energy slope in order of
//! energy saved per offloaded cycle until the capacity binds.

use thiserror::Error;

/// One user's fixed quantities for the slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadUser {
    pub bits: f64,
    pub cycles_per_bit: f64,
    pub cpu_freq: f64,
    pub deadline: f64,
    pub power: f64,
    /// Uplink rate in bits/s; zero means the user cannot offload.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadProblem {
    pub users: Vec<OffloadUser>,
    pub kappa: f64,
    /// Edge-server cycles available in the slot.
    pub mec_capacity: f64,
}

impl OffloadProblem {
    fn cycles(&self, k: usize) -> f64 {
        let u = &self.users[k];
        u.bits * u.cycles_per_bit
    }

    /// Energy with everything local.
    pub fn intercept(&self, k: usize) -> f64 {
        let u = &self.users[k];
        self.kappa * u.cpu_freq * u.cpu_freq * self.cycles(k)
    }

    /// `dE_k/do_k = S (p / r − κ f² C)`.
    pub fn slope(&self, k: usize) -> f64 {
        let u = &self.users[k];
        if u.bits == 0.0 {
            return 0.0;
        }
        let per_bit_offload = if u.rate > 0.0 { u.power / u.rate } else { f64::INFINITY };
        u.bits * (per_bit_offload - self.kappa * u.cpu_freq * u.cpu_freq * u.cycles_per_bit)
    }

    /// Completion time `(1−o) S C / f + o S / r`.
    pub fn latency(&self, k: usize, o: f64) -> f64 {
        let u = &self.users[k];
        let local = (1.0 - o) * self.cycles(k) / u.cpu_freq;
        let upload = if o == 0.0 {
            0.0
        } else if u.rate > 0.0 {
            o * u.bits / u.rate
        } else {
            f64::INFINITY
        };
        local + upload
    }

    /// Ratios meeting the deadline, or `None` if no ratio does.
    pub fn interval(&self, k: usize) -> Option<(f64, f64)> {
        let u = &self.users[k];
        let t_local = self.cycles(k) / u.cpu_freq;
        let t_upload = if u.bits == 0.0 {
            0.0
        } else if u.rate > 0.0 {
            u.bits / u.rate
        } else {
            f64::INFINITY
        };
        let d = u.deadline;
        if t_upload.is_infinite() {
            return (t_local <= d).then_some((0.0, 0.0));
        }
        // t(o) = t_local + o (t_upload − t_local) ≤ d
        let delta = t_upload - t_local;
        if delta == 0.0 {
            return (t_local <= d).then_some((0.0, 1.0));
        }
        let cross = (d - t_local) / delta;
        let (lo, hi) = if delta < 0.0 { (cross.max(0.0), 1.0) } else { (0.0, cross.min(1.0)) };
        (lo <= hi).then_some((lo, hi))
    }

    /// The ratio with the shortest completion time, used when none is on time.
    pub fn least_late(&self, k: usize) -> f64 {
        if self.latency(k, 1.0) < self.latency(k, 0.0) {
            1.0
        } else {
            0.0
        }
    }

    pub fn objective(&self, o: &[f64]) -> f64 {
        (0..self.users.len())
            .map(|k| self.intercept(k) + if o[k] == 0.0 { 0.0 } else { self.slope(k) * o[k] })
            .sum()
    }

    pub fn offloaded_cycles(&self, o: &[f64]) -> f64 {
        (0..self.users.len()).map(|k| o[k] * self.cycles(k)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadSolution {
    pub ratios: Vec<f64>,
    pub objective: f64,
    /// Users with no on-time ratio, parked at their least-late ratio.
    pub latency_infeasible: Vec<bool>,
    /// The deadline-forced offloading alone exceeds the server capacity.
    pub capacity_violated: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum OffloadError {
    #[error("no user can meet its deadline: {users:?}")]
    AllInfeasible {
        users: Vec<usize>,
        /// Least-late ratios, usable as a best-effort decision.
        fallback: OffloadSolution,
    },
}

pub fn solve_offloading(prob: &OffloadProblem) -> Result<OffloadSolution, OffloadError> {
    let n = prob.users.len();
    let mut ratios = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut infeasible = vec![false; n];
    for k in 0..n {
        match prob.interval(k) {
            Some((lo, hi)) => {
                ratios[k] = lo;
                upper[k] = hi;
            }
            None => {
                infeasible[k] = true;
                ratios[k] = prob.least_late(k);
                upper[k] = ratios[k];
            }
        }
    }

    let mut spare = prob.mec_capacity - prob.offloaded_cycles(&ratios);
    let capacity_violated = spare < 0.0;
    if !capacity_violated {
        let mut gainers: Vec<(usize, f64)> = (0..n)
            .filter(|&k| !infeasible[k] && upper[k] > ratios[k] && prob.slope(k) < 0.0 && prob.cycles(k) > 0.0)
            .map(|k| (k, prob.slope(k) / prob.cycles(k)))
            .collect();
        gainers.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for (k, _) in gainers {
            if spare <= 0.0 {
                break;
            }
            let step = (upper[k] - ratios[k]).min(spare / prob.cycles(k));
            ratios[k] += step;
            spare -= step * prob.cycles(k);
        }
    }

    let solution = OffloadSolution {
        objective: prob.objective(&ratios),
        ratios,
        latency_infeasible: infeasible.clone(),
        capacity_violated,
    };
    if n > 0 && infeasible.iter().all(|&x| x) {
        return Err(OffloadError::AllInfeasible {
            users: (0..n).collect(),
            fallback: solution,
        });
    }
    Ok(solution)
}

/// Every task sent to the edge server.
pub fn full_offloading(prob: &OffloadProblem) -> OffloadSolution {
    let n = prob.users.len();
    let ratios = vec![1.0; n];
    OffloadSolution {
        objective: prob.objective(&ratios),
        latency_infeasible: (0..n).map(|k| prob.latency(k, 1.0) > prob.users[k].deadline).collect(),
        capacity_violated: prob.offloaded_cycles(&ratios) > prob.mec_capacity,
        ratios,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;

    pub(crate) fn random_problem<R: Rng>(rng: &mut R, n: usize) -> OffloadProblem {
        let users = (0..n)
            .map(|_| OffloadUser {
                bits: rng.random_range(3e4..1.5e5),
                cycles_per_bit: 800.0,
                cpu_freq: rng.random_range(6e7..1.8e8),
                deadline: rng.random_range(0.3..2.0),
                power: rng.random_range(1e-4..0.1),
                rate: rng.random_range(5e4..2e6),
            })
            .collect();
        OffloadProblem {
            users,
            kappa: 1e-27,
            mec_capacity: rng.random_range(0.5e8..3e8),
        }
    }

    /// Projected gradient on the box-and-knapsack polytope; the projection
    /// bisects the knapsack multiplier.
    fn projected_gradient(prob: &OffloadProblem, lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let n = lo.len();
        let w: Vec<f64> = (0..n).map(|k| prob.cycles(k) / prob.mec_capacity).collect();
        let project = |y: &[f64]| -> Vec<f64> {
            let at = |mu: f64| -> Vec<f64> { (0..n).map(|k| (y[k] - mu * w[k]).clamp(lo[k], hi[k])).collect() };
            let load = |o: &[f64]| -> f64 { o.iter().zip(&w).map(|(a, b)| a * b).sum() };
            if load(&at(0.0)) <= 1.0 {
                return at(0.0);
            }
            let (mut a, mut b) = (0.0, 1.0);
            while load(&at(b)) > 1.0 {
                b *= 2.0;
            }
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if load(&at(m)) > 1.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            at(b)
        };
        let g: Vec<f64> = (0..n).map(|k| prob.slope(k)).collect();
        // A linear objective has no curvature, so any fixed step converges;
        // size it so the flattest slope still moves 1% of the box per step.
        let flattest = g.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let step = 0.01 / flattest;
        let mut o = project(lo);
        for _ in 0..5_000 {
            let y: Vec<f64> = (0..n).map(|k| o[k] - step * g[k]).collect();
            o = project(&y);
        }
        o
    }

    #[test]
    fn positive_slopes_stay_at_lower_bounds() {
        let prob = OffloadProblem {
            users: vec![
                OffloadUser { bits: 1e5, cycles_per_bit: 800.0, cpu_freq: 1e8, deadline: 0.5, power: 0.1, rate: 1e6 },
                OffloadUser { bits: 1e5, cycles_per_bit: 800.0, cpu_freq: 1e8, deadline: 2.0, power: 0.1, rate: 1e6 },
            ],
            kappa: 1e-28,
            mec_capacity: 1e12,
        };
        assert!(prob.slope(0) > 0.0 && prob.slope(1) > 0.0);
        let sol = solve_offloading(&prob).unwrap();
        let (lo0, _) = prob.interval(0).unwrap();
        assert!((sol.ratios[0] - lo0).abs() < 1e-12 && lo0 > 0.0);
        assert_eq!(sol.ratios[1], 0.0);
    }

    #[test]
    fn negative_slopes_go_to_upper_bounds() {
        let prob = OffloadProblem {
            users: vec![
                OffloadUser { bits: 1e5, cycles_per_bit: 800.0, cpu_freq: 1.5e8, deadline: 2.0, power: 1e-3, rate: 1e6 },
                OffloadUser { bits: 5e4, cycles_per_bit: 800.0, cpu_freq: 1.2e8, deadline: 2.0, power: 1e-3, rate: 2e6 },
            ],
            kappa: 1e-27,
            mec_capacity: 1e12,
        };
        assert!(prob.slope(0) < 0.0 && prob.slope(1) < 0.0);
        let sol = solve_offloading(&prob).unwrap();
        assert_eq!(sol.ratios, vec![1.0, 1.0]);
    }

    #[test]
    fn capacity_cuts_the_worst_saver_fractionally() {
        let user = |power: f64| OffloadUser { bits: 1e5, cycles_per_bit: 800.0, cpu_freq: 1.5e8, deadline: 5.0, power, rate: 1e6 };
        let prob = OffloadProblem {
            users: vec![user(1e-3), user(1e-4)],
            kappa: 1e-27,
            mec_capacity: 1.5e8,
        };
        let sol = solve_offloading(&prob).unwrap();
        assert_eq!(sol.ratios[1], 1.0);
        assert!((sol.ratios[0] - 0.875).abs() < 1e-12);
        assert!(prob.offloaded_cycles(&sol.ratios) <= prob.mec_capacity * (1.0 + 1e-12));
    }

    #[test]
    fn matches_grid_search_on_three_users() {
        let mut rng = substream(7, Stream::Fixture, 30);
        for _ in 0..20 {
            let prob = random_problem(&mut rng, 3);
            let Ok(sol) = solve_offloading(&prob) else { continue };
            if sol.capacity_violated || sol.latency_infeasible.iter().any(|&x| x) {
                continue;
            }
            let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
            for &a in &grid {
                for &b in &grid {
                    for &c in &grid {
                        let o = [a, b, c];
                        let ok = (0..3).all(|k| prob.latency(k, o[k]) <= prob.users[k].deadline)
                            && prob.offloaded_cycles(&o) <= prob.mec_capacity;
                        if ok {
                            assert!(sol.objective <= prob.objective(&o) + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn agrees_with_projected_gradient() {
        let mut rng = substream(8, Stream::Fixture, 31);
        let mut checked = 0;
        for _ in 0..40 {
            let prob = random_problem(&mut rng, 4);
            let Ok(sol) = solve_offloading(&prob) else { continue };
            if sol.capacity_violated || sol.latency_infeasible.iter().any(|&x| x) {
                continue;
            }
            let bounds: Vec<(f64, f64)> = (0..4).map(|k| prob.interval(k).unwrap()).collect();
            let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
            let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
            let pg = projected_gradient(&prob, &lo, &hi);
            let scale = prob.objective(&sol.ratios).abs().max(1e-12);
            assert!(
                (prob.objective(&pg) - sol.objective).abs() <= 1e-6 * scale,
                "{} vs {}",
                prob.objective(&pg),
                sol.objective
            );
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn constraints_hold_on_random_instances() {
        let mut rng = substream(9, Stream::Fixture, 32);
        for _ in 0..500 {
            let prob = random_problem(&mut rng, 5);
            let sol = match solve_offloading(&prob) {
                Ok(s) => s,
                Err(OffloadError::AllInfeasible { fallback, .. }) => fallback,
            };
            for k in 0..5 {
                assert!((0.0..=1.0).contains(&sol.ratios[k]));
                if !sol.latency_infeasible[k] {
                    assert!(prob.latency(k, sol.ratios[k]) <= prob.users[k].deadline * (1.0 + 1e-9));
                }
            }
            if !sol.capacity_violated {
                assert!(prob.offloaded_cycles(&sol.ratios) <= prob.mec_capacity * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn all_infeasible_is_an_error() {
        let prob = OffloadProblem {
            users: vec![OffloadUser { bits: 1e6, cycles_per_bit: 800.0, cpu_freq: 1e8, deadline: 1.0, power: 0.1, rate: 2e5 }],
            kappa: 1e-28,
            mec_capacity: 1e12,
        };
        match solve_offloading(&prob) {
            Err(OffloadError::AllInfeasible { users, fallback }) => {
                assert_eq!(users, vec![0]);
                assert_eq!(fallback.ratios, vec![1.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dead_link_keeps_everything_local() {
        let prob = OffloadProblem {
            users: vec![OffloadUser { bits: 1e5, cycles_per_bit: 800.0, cpu_freq: 1e8, deadline: 1.0, power: 0.1, rate: 0.0 }],
            kappa: 1e-27,
            mec_capacity: 1e12,
        };
        assert_eq!(solve_offloading(&prob).unwrap().ratios, vec![0.0]);
    }
}
