//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs at full budget by default, which takes a few hours on one core.
//! `ACCEPTANCE_EPISODES` overrides the training episode count for a quick
//! smoke run; `ACCEPTANCE_ONLY=1,4,10` selects criteria.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use starmec::drl::{AgentKind, AnyAgent, EnvOptions};
use starmec::orchestrator::{run_benchmark, run_sweep, spearman, summarize, train_and_evaluate, RunResult, Scheme, SweepSpec, SweepVariable};
use starmec::queueing::stability_proxy;
use starmec::scenario::Scenario;
use starmec::verify;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Training episodes per sweep point.
const SWEEP_EPISODES: usize = 100;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn env_episodes() -> Option<usize> {
    std::env::var("ACCEPTANCE_EPISODES").ok().and_then(|v| v.parse().ok())
}

fn desk() -> Scenario {
    let mut sc = Scenario::desk();
    if let Some(n) = env_episodes() {
        sc.rl.episodes = n;
    }
    sc
}

/// Trained runs shared between criteria, keyed by label and seed.
#[derive(Default)]
struct Runs(HashMap<(String, u64), RunResult>);

impl Runs {
    fn get(&mut self, label: &str, seed: u64, run: impl FnOnce() -> RunResult) -> &RunResult {
        self.0.entry((label.to_string(), seed)).or_insert_with(run)
    }

    fn scheme(&mut self, sc: &Scenario, scheme: Scheme, seed: u64) -> &RunResult {
        self.get(scheme.name(), seed, || run_benchmark(sc, scheme, seed, false).expect("scheme run"))
    }

    fn agent(&mut self, sc: &Scenario, kind: AgentKind, seed: u64) -> &RunResult {
        // The double-DQN agent on the default options is the proposed scheme.
        let label = if kind == AgentKind::Ddqn { Scheme::Proposed.name() } else { kind.name() };
        self.get(label, seed, || {
            train_and_evaluate(&Scheme::Proposed.configure(sc), EnvOptions::default(), kind, seed, false).expect("agent run")
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn surrogate() -> Outcome {
    let s = verify::surrogate_bound(10_000, 1);
    // The required direction is bound >= truth, i.e. truth - bound <= 0.
    let upper = s.max_excess <= 1e-12;
    outcome(
        upper && s.anchor_gap <= 1e-9,
        format!(
            "log2(1+g) - bound in [{:.3e}, {:.3e}] over {} samples, anchor gap {:.2e}; the tangent is a lower bound",
            s.min_excess, s.max_excess, s.samples, s.anchor_gap
        ),
    )
}

fn sfp_grid() -> Outcome {
    let r = verify::sfp_grid();
    outcome(
        r.passes(),
        format!(
            "sfp {:.5e} J, grid min {:.5e} J over {} feasible points, ratio {:.4}, trace rise {:.1e}",
            r.sfp_energy,
            r.grid_energy,
            r.grid_feasible_points,
            r.sfp_energy / r.grid_energy,
            r.max_trace_rise
        ),
    )
}

fn offload_grid() -> Outcome {
    let r = verify::offload_grid(20, 1);
    outcome(
        r.instances == 20 && r.worst_excess <= 1e-3,
        format!("{} instances, worst solver - grid {:.2e}", r.instances, r.worst_excess),
    )
}

fn drift() -> Outcome {
    let r = verify::drift_dominance(10_000, 1);
    outcome(
        r.quarter_violations == 0,
        format!(
            "quarter-weight bound violated on {}/{} triples (worst gap {:.3e}); half-weight bound violated on {}",
            r.quarter_violations, r.samples, r.worst_quarter_gap, r.violations
        ),
    )
}

fn learning_kernel() -> Outcome {
    let g = verify::gradient_error();
    let (loss, steps) = verify::overfit_single_transition(5000);
    let q = verify::tabular_qstar_error(30_000);
    outcome(
        g <= 1e-4 && loss < 1e-6 && steps <= 5000 && q <= 1e-2,
        format!("gradient rel err {g:.2e}, overfit loss {loss:.2e} in {steps} steps, tabular Q* err {q:.2e}"),
    )
}

/// Stability proxy on the mean backlog trajectory over evaluation episodes.
fn mean_trajectory_stable(run: &RunResult, floor: f64) -> (bool, f64, f64) {
    let n = run.evaluation.iter().map(|r| r.backlog.len()).min().unwrap_or(0);
    let history: Vec<Vec<f64>> = (0..n)
        .map(|t| vec![mean(&run.evaluation.iter().map(|r| r.backlog[t]).collect::<Vec<_>>())])
        .collect();
    let rep = stability_proxy(&history, floor).expect("long enough history");
    (rep.stable, rep.middle_mean, rep.last_mean)
}

fn queue_stability(runs: &mut Runs, sc: &Scenario) -> Outcome {
    let floor = sc.queue_unit_bits;
    let (ok, mid, last) = mean_trajectory_stable(runs.scheme(sc, Scheme::Proposed, 1), floor);
    let mut ablation = Scheme::Proposed.configure(sc);
    ablation.lyapunov_v = 0.0;
    let options = EnvOptions { admission_control: false, ..EnvOptions::default() };
    let abl = train_and_evaluate(&ablation, options, AgentKind::Ddqn, 1, false).expect("ablation run");
    let (abl_ok, abl_mid, abl_last) = mean_trajectory_stable(&abl, floor);
    outcome(
        ok && !abl_ok,
        format!(
            "proposed middle {mid:.3e} last {last:.3e} bits ({}); ablation middle {abl_mid:.3e} last {abl_last:.3e} bits ({})",
            if ok { "stable" } else { "unstable" },
            if abl_ok { "stable" } else { "unstable" }
        ),
    )
}

fn scheme_ordering(runs: &mut Runs, sc: &Scenario) -> Outcome {
    let energy: HashMap<Scheme, f64> = Scheme::ALL
        .into_iter()
        .map(|s| (s, mean(&SEEDS.map(|seed| runs.scheme(sc, s, seed).summary.energy))))
        .collect();
    use Scheme::*;
    let pairs = [(Proposed, FullActiveStar), (FullActiveStar, PassiveStar), (Proposed, ActiveRis), (ActiveRis, PassiveRis)];
    let broken: Vec<String> = pairs
        .iter()
        .filter(|(a, b)| energy[a] > 0.97 * energy[b])
        .map(|(a, b)| format!("{a}/{b}={:.3}", energy[a] / energy[b]))
        .collect();
    let listing: Vec<String> = Scheme::ALL.iter().map(|s| format!("{s} {:.4}", energy[s])).collect();
    outcome(
        broken.is_empty(),
        format!(
            "mean energy J: {}; pairs short of 3%: {}",
            listing.join(", "),
            if broken.is_empty() { "none".to_string() } else { broken.join(", ") }
        ),
    )
}

fn agent_ordering(runs: &mut Runs, sc: &Scenario) -> Outcome {
    let kinds = [AgentKind::Ddqn, AgentKind::Dqn, AgentKind::Mab];
    let reward: Vec<f64> = kinds
        .iter()
        .map(|&k| mean(&SEEDS.map(|seed| runs.agent(sc, k, seed).summary.reward)))
        .collect();
    let (mut checks, mut violations) = (0, 0);
    for seed in SEEDS {
        if let AnyAgent::Q(q) = &runs.agent(sc, AgentKind::Ddqn, seed).agent {
            checks += q.target_checks;
            violations += q.target_violations;
        }
    }
    let ordered = reward[0] >= reward[1] && reward[1] >= reward[2];
    outcome(
        ordered && checks > 0 && violations == 0,
        format!(
            "mean reward ddqn {:.1}, dqn {:.1}, mab {:.1}; y_dqn < y_ddqn on {violations} of {checks} batches",
            reward[0], reward[1], reward[2]
        ),
    )
}

fn sweep_means(sc: &Scenario, variable: SweepVariable, grid: &[f64]) -> Vec<f64> {
    let spec = SweepSpec {
        variable,
        grid: grid.to_vec(),
        seeds: SEEDS.to_vec(),
        schemes: vec![Scheme::Proposed],
    };
    let rows = run_sweep(sc, &spec, 1).expect("valid sweep");
    summarize(&rows).iter().map(|p| p.energy_mean).collect()
}

fn sweep_trends(sc: &Scenario) -> Outcome {
    let mut sc = sc.clone();
    sc.rl.episodes = env_episodes().unwrap_or(SWEEP_EPISODES);
    // (variable, grid, expected sign of the trend)
    let sweeps: [(SweepVariable, &[f64], f64); 4] = [
        (SweepVariable::InputSize, &[50e3, 90e3, 130e3, 170e3], 1.0),
        (SweepVariable::Elements, &[16.0, 32.0, 64.0, 128.0], -1.0),
        (SweepVariable::Antennas, &[2.0, 4.0, 6.0, 8.0], -1.0),
        (SweepVariable::Deadline, &[1.5, 2.5, 3.5, 4.5], -1.0),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (variable, grid, sign) in sweeps {
        let energy = sweep_means(&sc, variable, grid);
        let rho = spearman(grid, &energy);
        let monotone = energy.windows(2).all(|w| sign * (w[1] - w[0]) >= 0.0);
        let mut ok = monotone && sign * rho >= 0.8;
        let mut extra = String::new();
        if variable == SweepVariable::Elements {
            let first = energy[0] - energy[1];
            let last = energy[2] - energy[3];
            ok &= last < first;
            extra = format!(", reduction 16->32 {first:.3e} vs 64->128 {last:.3e}");
        }
        passed &= ok;
        let values: Vec<String> = energy.iter().map(|e| format!("{e:.4}")).collect();
        parts.push(format!(
            "{variable} [{}] rho {rho:+.2}{}{extra} {}",
            values.join(" "),
            if monotone { "" } else { " non-monotone" },
            if ok { "ok" } else { "off" }
        ));
    }
    outcome(passed, parts.join("; "))
}

fn sweep_csvs(dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_starmec"))
        .args([
            "sweep", "--sweep", "elements", "--grid", "8,16", "--seeds", "2", "--schemes", "proposed,a_ris", "--episodes", "3",
            "--slots", "50", "--eval-episodes", "2", "--seed", "7", "--out", "out",
        ])
        .current_dir(dir)
        .env("STARMEC_THREADS", "2")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut bytes = std::fs::read(dir.join("out/sweep_elements.csv")).unwrap();
    bytes.extend(std::fs::read(dir.join("out/sweep_elements_summary.csv")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/manifest.json")).unwrap()).unwrap();
    bytes.extend(manifest["config_hash"].as_str().unwrap().as_bytes());
    bytes
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (x, y) = (sweep_csvs(a.path()), sweep_csvs(b.path()));
    outcome(x == y, format!("{} bytes of CSV plus manifest hash, identical: {}", x.len(), x == y))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let sc = desk();
    let mut runs = Runs::default();
    let mut failures = 0;

    let criteria: [(usize, &str, Duration); 10] = [
        (1, "surrogate_bound", Duration::from_secs(1)),
        (2, "sfp_oracle", Duration::from_secs(10)),
        (3, "offload_oracle", Duration::from_secs(10)),
        (4, "drift_bound", Duration::from_secs(1)),
        (5, "learning_kernel", Duration::from_secs(60)),
        (6, "queue_stability", Duration::from_secs(15 * 60)),
        (7, "scheme_ordering", Duration::from_secs(3600)),
        (8, "agent_ordering", Duration::from_secs(3600)),
        (9, "sweep_trends", Duration::from_secs(2 * 3600)),
        (10, "determinism", Duration::from_secs(5 * 60)),
    ];
    for (n, name, budget) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let o = match n {
            1 => surrogate(),
            2 => sfp_grid(),
            3 => offload_grid(),
            4 => drift(),
            5 => learning_kernel(),
            6 => queue_stability(&mut runs, &sc),
            7 => scheme_ordering(&mut runs, &sc),
            8 => agent_ordering(&mut runs, &sc),
            9 => sweep_trends(&sc),
            _ => determinism(),
        };
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = o.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "C{n:<2} {name:<16} {}  {}  ({:.1?}{})",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed,
            if in_time { String::new() } else { format!(", over the {budget:?} budget") }
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
