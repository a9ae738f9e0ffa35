mod manifest;
mod plot;

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use starmec::drl::{AgentKind, AnyAgent, Checkpoint, EnvOptions};
use starmec::orchestrator::{
    evaluate, new_agent, run_sweep, summarize, train, worker_threads, EpisodeRecord, QueueBaseline, Scheme, SweepRow,
    SweepSpec, SweepVariable,
};
use starmec::{load_scenario, verify, Scenario};

use manifest::{RunManifest, RunStatus};
use plot::{line_chart, Series};

#[derive(Parser)]
#[command(name = "starmec", version, about = "Active STAR-RIS edge computing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent, evaluate it greedily and write per-episode CSVs.
    Train(TrainArgs),
    /// Train and evaluate every scheme over a grid of one scenario parameter.
    Sweep(SweepArgs),
    /// Run the built-in oracle checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file; the bundled desk scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Training episodes per run (overrides the scenario).
    #[arg(long)]
    episodes: Option<usize>,
    /// Slots per episode (overrides the scenario).
    #[arg(long)]
    slots: Option<usize>,
    /// Greedy evaluation episodes per run (overrides the scenario).
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Ddqn,
    Dqn,
    Mab,
}

impl AgentArg {
    fn kind(self) -> AgentKind {
        match self {
            AgentArg::Ddqn => AgentKind::Ddqn,
            AgentArg::Dqn => AgentKind::Dqn,
            AgentArg::Mab => AgentKind::Mab,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    #[arg(long, value_enum, default_value = "ddqn")]
    agent: AgentArg,
    /// proposed, full_a_star, p_star, a_ris, p_ris, greedy or centralized.
    #[arg(long, default_value = "proposed")]
    mode: String,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Write the power-control energy trace of every evaluation slot.
    #[arg(long)]
    trace_sfp: bool,
    /// Write the effective channel gain of every evaluation slot.
    #[arg(long)]
    dump_channels: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// input_size, elements, cpu_freq, deadline, antennas or users.
    #[arg(long)]
    sweep: String,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Number of seeds, counting up from --seed.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Comma-separated schemes; all five when omitted.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run only this check.
    #[arg(long)]
    check: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => return cmd_verify(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let mut sc = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => Scenario::desk(),
    };
    if let Some(n) = args.episodes {
        sc.rl.episodes = n;
    }
    if let Some(n) = args.slots {
        sc.set_num_slots(n);
    }
    if let Some(n) = args.eval_episodes {
        sc.rl.eval_episodes = n;
    }
    sc.seed = args.seed;
    sc.validate()?;
    Ok(sc)
}

enum RunMode {
    Scheme(Scheme),
    Queue(QueueBaseline),
}

impl RunMode {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy" => RunMode::Queue(QueueBaseline::Greedy),
            "centralized" => RunMode::Queue(QueueBaseline::Centralized),
            other => RunMode::Scheme(other.parse().map_err(anyhow::Error::msg)?),
        })
    }

    fn setup(&self, sc: &Scenario) -> (Scenario, EnvOptions) {
        match *self {
            RunMode::Scheme(s) => (s.configure(sc), EnvOptions::default()),
            RunMode::Queue(q) => (sc.clone(), q.options()),
        }
    }
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    episode: usize,
    scheme: &'a str,
    cumulative_reward: f64,
    #[serde(rename = "energy_J")]
    energy_j: f64,
    mean_backlog_bits: f64,
    violations: u32,
}

fn episode_row<'a>(r: &EpisodeRecord, scheme: &'a str) -> EpisodeRow<'a> {
    EpisodeRow {
        episode: r.episode,
        scheme,
        cumulative_reward: r.cumulative_reward,
        energy_j: r.energy,
        mean_backlog_bits: r.mean_backlog,
        violations: r.violations.total(),
    }
}

fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(value)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let base = load(&args.common)?;
    let mode = RunMode::parse(&args.mode)?;
    let (sc, options) = mode.setup(&base);
    let kind = args.agent.kind();
    let seed = args.common.seed;
    let out = &args.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let config = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": base.to_toml_string()?,
        "seed": seed,
        "agent": kind.name(),
        "mode": args.mode,
    });
    let mut manifest = RunManifest::start("train", args.common.scenario.as_deref(), seed, out, config)?;

    let result = train_run(args, &sc, options, kind, &mode);
    manifest.finish(if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed })?;
    result
}

fn train_run(args: &TrainArgs, sc: &Scenario, options: EnvOptions, kind: AgentKind, mode: &RunMode) -> Result<()> {
    let seed = args.common.seed;
    let out = &args.common.out;
    let label = args.mode.as_str();
    let checkpoint_path = out.join("checkpoint.json");
    let episodes_path = out.join("episodes.csv");

    let mut agent = new_agent(sc, options, kind, seed);
    let mut start = 0;
    if args.resume {
        let text = fs::read_to_string(&checkpoint_path)
            .with_context(|| format!("reading checkpoint {}", checkpoint_path.display()))?;
        let cp: Checkpoint = serde_json::from_str(&text).context("parsing checkpoint")?;
        agent.restore(&cp, seed).map_err(anyhow::Error::msg)?;
        start = cp.episode + 1;
    }
    let resuming = args.resume && episodes_path.exists();
    let file = if resuming {
        OpenOptions::new().append(true).open(&episodes_path)
    } else {
        File::create(&episodes_path)
    }
    .with_context(|| format!("opening {}", episodes_path.display()))?;
    let mut csv = csv::WriterBuilder::new().has_headers(!resuming).from_writer(file);

    let count = sc.rl.episodes.saturating_sub(start);
    let mut io_error: Option<anyhow::Error> = None;
    train(sc, options, &mut agent, seed, start, count, |rec, agent: &AnyAgent| {
        if io_error.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            csv.serialize(episode_row(rec, label))?;
            csv.flush()?;
            write_json_atomic(&checkpoint_path, &agent.checkpoint(sc.rl.exploration(rec.episode), rec.episode))
        };
        if let Err(e) = step() {
            io_error = Some(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    drop(csv);

    let record = args.trace_sfp || args.dump_channels;
    let evaluation = evaluate(sc, options, &mut agent, seed, sc.rl.eval_episodes, record)?;
    let mut csv = csv::Writer::from_path(out.join("evaluation.csv"))?;
    for r in &evaluation {
        csv.serialize(episode_row(r, label))?;
    }
    csv.flush()?;

    if args.trace_sfp {
        let mut w = csv::Writer::from_path(out.join("sfp_trace.csv"))?;
        w.write_record(["episode", "slot", "iteration", "energy_J"])?;
        for r in &evaluation {
            for d in &r.decisions {
                for (i, e) in d.sfp_trace.iter().enumerate() {
                    w.write_record([r.episode.to_string(), d.slot.to_string(), i.to_string(), e.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    if args.dump_channels {
        let mut w = csv::Writer::from_path(out.join("channels.csv"))?;
        w.write_record(["episode", "slot", "user", "gain"])?;
        for r in &evaluation {
            for d in &r.decisions {
                for (k, g) in d.gains.iter().enumerate() {
                    w.write_record([r.episode.to_string(), d.slot.to_string(), k.to_string(), g.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    if args.common.plot {
        let rows = read_episode_rewards(&episodes_path)?;
        let name = match mode {
            RunMode::Scheme(s) => s.name(),
            RunMode::Queue(q) => q.name(),
        };
        let svg = line_chart(
            "Training reward",
            "episode",
            "cumulative reward",
            &[Series { name: format!("{name} ({})", kind.name()), points: rows }],
        );
        fs::write(out.join("episodes.svg"), svg)?;
    }
    let n = evaluation.len().max(1) as f64;
    println!(
        "evaluation over {} episodes: energy {:.4} J, reward {:.2}, backlog {:.4e} bits",
        evaluation.len(),
        evaluation.iter().map(|r| r.energy).sum::<f64>() / n,
        evaluation.iter().map(|r| r.cumulative_reward).sum::<f64>() / n,
        evaluation.iter().map(|r| r.mean_backlog).sum::<f64>() / n,
    );
    Ok(())
}

fn read_episode_rewards(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        points.push((rec[0].parse()?, rec[2].parse()?));
    }
    Ok(points)
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    scheme: &'a str,
    value: f64,
    seed: u64,
    #[serde(rename = "energy_J")]
    energy_j: f64,
    reward: f64,
    mean_backlog_bits: f64,
    error: &'a str,
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    scheme: &'a str,
    value: f64,
    seeds: usize,
    failures: usize,
    #[serde(rename = "energy_mean_J")]
    energy_mean_j: f64,
    #[serde(rename = "energy_std_J")]
    energy_std_j: f64,
    reward_mean: f64,
    reward_std: f64,
    backlog_mean_bits: f64,
    backlog_std_bits: f64,
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let variable: SweepVariable = args.sweep.parse().map_err(anyhow::Error::msg)?;
    let sc = load(&args.common)?;
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let schemes: Vec<Scheme> = if args.schemes.is_empty() {
        Scheme::ALL.to_vec()
    } else {
        args.schemes
            .iter()
            .map(|s| s.parse().map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?
    };
    let spec = SweepSpec {
        variable,
        grid: args.grid.clone(),
        seeds: (0..args.seeds).map(|i| args.common.seed + i).collect(),
        schemes,
    };
    spec.validate().map_err(anyhow::Error::msg)?;
    let out = &args.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let config = json!({
        "command": "sweep",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.to_toml_string()?,
        "seed": args.common.seed,
        "variable": variable.name(),
        "grid": spec.grid,
        "seeds": spec.seeds,
        "schemes": spec.schemes.iter().map(|s| s.name()).collect::<Vec<_>>(),
    });
    let mut manifest = RunManifest::start("sweep", args.common.scenario.as_deref(), args.common.seed, out, config)?;
    let result = sweep_run(args, &sc, &spec);
    manifest.finish(if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed })?;
    result
}

fn sweep_run(args: &SweepArgs, sc: &Scenario, spec: &SweepSpec) -> Result<()> {
    let out = &args.common.out;
    let name = spec.variable.name();
    let rows = run_sweep(sc, spec, worker_threads()).map_err(anyhow::Error::msg)?;
    write_sweep_csv(&out.join(format!("sweep_{name}.csv")), &rows)?;

    let points = summarize(&rows);
    let mut w = csv::Writer::from_path(out.join(format!("sweep_{name}_summary.csv")))?;
    for p in &points {
        w.serialize(SummaryCsvRow {
            scheme: p.scheme.name(),
            value: p.value,
            seeds: p.seeds,
            failures: p.failures,
            energy_mean_j: p.energy_mean,
            energy_std_j: p.energy_std,
            reward_mean: p.reward_mean,
            reward_std: p.reward_std,
            backlog_mean_bits: p.backlog_mean,
            backlog_std_bits: p.backlog_std,
        })?;
    }
    w.flush()?;

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("warning: {failures} of {} sweep points failed; see the error column", rows.len());
    }
    if args.common.plot {
        let series: Vec<Series> = spec
            .schemes
            .iter()
            .map(|&s| Series {
                name: s.name().to_string(),
                points: points.iter().filter(|p| p.scheme == s).map(|p| (p.value, p.energy_mean)).collect(),
            })
            .collect();
        let svg = line_chart(&format!("Energy vs {name}"), name, "mean evaluation energy (J)", &series);
        fs::write(out.join(format!("sweep_{name}.svg")), svg)?;
    }
    println!("wrote {} rows to {}", rows.len(), out.join(format!("sweep_{name}.csv")).display());
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(SweepCsvRow {
            scheme: r.scheme.name(),
            value: r.value,
            seed: r.seed,
            energy_j: r.energy,
            reward: r.reward,
            mean_backlog_bits: r.backlog,
            error: r.error.as_deref().unwrap_or(""),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> ExitCode {
    let results = match &args.check {
        Some(name) => match verify::run_check(name) {
            Some(r) => vec![r],
            None => {
                eprintln!("error: unknown check `{name}` (expected one of {})", verify::CHECKS.join(", "));
                return ExitCode::FAILURE;
            }
        },
        None => verify::run_all(),
    };
    for r in &results {
        println!(
            "{:<16} {}  {}  ({:.2?})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail,
            r.elapsed
        );
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
