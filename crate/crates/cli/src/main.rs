//! Command-line entry point: scenario generation, single scheduler runs,
//! and comparative experiments with CSV/SVG output.
//!
//! Every command prints its effective configuration as one JSON line and
//! embeds the same echo in each output file, so any result is
//! reproducible from its own metadata. Wall-clock and resource
//! measurements live under a dedicated `timing` key; everything outside
//! that key is a deterministic function of the inputs and seed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use edgesched::agent::{
    train_kind, AgentKind, ConvergenceConfig, EpisodeState, RewardConfig, StepRecord, StepSink,
    TrainConfig, TrainResult,
};
use edgesched::baselines::{bestfit_schedule, edf_schedule};
use edgesched::eval::{EvalContext, ScheduleRecord};
use edgesched::harness::{
    export_csv, export_svg_plots, run_experiment, Algorithm, ExperimentConfig,
};
use edgesched::rl::DqnHyperparams;
use edgesched::scenario::{
    generate_scenario, paper_server_specs, preset_desk, preset_paper, GenSpec, Scenario,
    ServerSpec, ServiceCounts,
};

#[derive(Parser)]
#[command(
    name = "edgesched",
    version,
    about = "Soft real-time task scheduling on heterogeneous edge servers: \
             simulator, schedulers, and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario file, either from a built-in preset or from
    /// generator flags.
    Generate(GenerateArgs),
    /// Run one scheduler on a scenario and write the result record.
    Run(RunArgs),
    /// Run repeated seeded comparisons of several schedulers; writes
    /// CSV, JSON, and SVG scatter plots.
    Compare(CompareArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// 52 users / 4 servers / 22 zones.
    Paper,
    /// 8 users / 19 tasks / 4 servers; sized for quick experiments.
    Desk,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AlgArg {
    Arl,
    Vrl,
    Edf,
    Bestfit,
}

impl From<AlgArg> for Algorithm {
    fn from(a: AlgArg) -> Algorithm {
        match a {
            AlgArg::Arl => Algorithm::Arl,
            AlgArg::Vrl => Algorithm::Vrl,
            AlgArg::Edf => Algorithm::Edf,
            AlgArg::Bestfit => Algorithm::BestFit,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TrainPresetArg {
    /// Pick by task count: tiny <= 6 tasks, desk <= 40, default above.
    Auto,
    Default,
    Desk,
    Tiny,
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in scenario preset; overrides the generator flags.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Crowd-counting user count (generator mode).
    #[arg(long, default_value_t = 4)]
    users: usize,
    #[arg(long, default_value_t = 0)]
    face_users: usize,
    #[arg(long, default_value_t = 0)]
    mldev_crowd_users: usize,
    #[arg(long, default_value_t = 0)]
    mldev_face_users: usize,
    /// Zone count; defaults to half the user total, at least one.
    #[arg(long)]
    zones: Option<usize>,
    /// Server count, drawn cyclically from the built-in hardware catalog.
    #[arg(long, default_value_t = 4)]
    servers: usize,
    /// Template profile for task parameters.
    #[arg(long, default_value = "paper")]
    profile: String,
    #[arg(long, env = "EDGESCHED_SEED", default_value_t = 0)]
    seed: u64,
    /// Output scenario path.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file; alternatively use --preset.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    alg: AlgArg,
    #[arg(long, env = "EDGESCHED_SEED", default_value_t = 0)]
    seed: u64,
    /// Availability threshold applied before each assignment.
    #[arg(long)]
    uth: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Write a line-delimited JSON log of every training step.
    #[arg(long)]
    debug_log: bool,
    /// JSON config file; flags take precedence over its sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    train_preset: TrainPresetArg,
    /// Episode budget override.
    #[arg(long)]
    episodes: Option<usize>,
    /// Total-step budget override.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Algorithms to compare; defaults to all four.
    #[arg(long, value_enum, value_delimiter = ',')]
    algs: Vec<AlgArg>,
    /// Independent repetitions per algorithm (seed = base seed + index).
    #[arg(long, default_value_t = 31)]
    reps: usize,
    #[arg(long, env = "EDGESCHED_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    uth: Option<f64>,
    /// Parallel runs; RAM sampling forces this back to 1.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Skip peak-RSS sampling (lets --jobs parallelize).
    #[arg(long)]
    no_ram: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    train_preset: TrainPresetArg,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
}

/// Optional JSON config file: any section present replaces the
/// corresponding block of the training configuration; flags still win.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    u_th: Option<f64>,
    hyper: Option<DqnHyperparams>,
    reward: Option<RewardConfig>,
    convergence: Option<ConvergenceConfig>,
    watts_per_core: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_scenario(
    path: &Option<PathBuf>,
    preset: &Option<PresetArg>,
    seed: u64,
) -> Result<(Scenario, String)> {
    match (path, preset) {
        (Some(p), None) => {
            let sc = Scenario::load(p)
                .with_context(|| format!("loading scenario {}", p.display()))?;
            Ok((sc, p.display().to_string()))
        }
        (None, Some(PresetArg::Paper)) => Ok((preset_paper(seed), "preset:paper".into())),
        (None, Some(PresetArg::Desk)) => Ok((preset_desk(seed), "preset:desk".into())),
        _ => bail!("exactly one of --scenario and --preset is required"),
    }
}

fn load_config_file(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Builds the effective training config: preset base, then config-file
/// sections, then explicit flags.
fn effective_train_config(
    scenario: &Scenario,
    train_preset: TrainPresetArg,
    file: &ConfigFile,
    uth: Option<f64>,
    episodes: Option<usize>,
    max_steps: Option<u64>,
) -> TrainConfig {
    let tasks = scenario.all_tasks().len();
    let mut cfg = match train_preset {
        TrainPresetArg::Default => TrainConfig::default(),
        TrainPresetArg::Desk => TrainConfig::desk(),
        TrainPresetArg::Tiny => TrainConfig::tiny(),
        TrainPresetArg::Auto => {
            if tasks <= 6 {
                TrainConfig::tiny()
            } else if tasks <= 40 {
                TrainConfig::desk()
            } else {
                TrainConfig::default()
            }
        }
    };
    if let Some(u) = file.u_th {
        cfg.u_th = u;
    }
    if let Some(h) = &file.hyper {
        cfg.hyper = h.clone();
    }
    if let Some(r) = &file.reward {
        cfg.reward = *r;
    }
    if let Some(c) = &file.convergence {
        cfg.convergence = *c;
    }
    if let Some(u) = uth {
        cfg.u_th = u;
    }
    if let Some(e) = episodes {
        cfg.convergence.max_episodes = e;
    }
    if let Some(s) = max_steps {
        cfg.convergence.max_total_steps = s;
    }
    cfg
}

/// Deletes any files this command managed to write before failing.
fn cleanup_partial(paths: &[PathBuf]) {
    for p in paths {
        let _ = std::fs::remove_file(p);
    }
}

fn write_pretty_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (scenario, source) = match args.preset {
        Some(PresetArg::Paper) => (preset_paper(args.seed), "preset:paper".to_string()),
        Some(PresetArg::Desk) => (preset_desk(args.seed), "preset:desk".to_string()),
        None => {
            let counts = ServiceCounts {
                crowd_counting: args.users,
                face_recognition: args.face_users,
                ml_dev_crowd: args.mldev_crowd_users,
                ml_dev_face: args.mldev_face_users,
            };
            let zones = args.zones.unwrap_or_else(|| (counts.total() / 2).max(1));
            if args.servers == 0 {
                bail!("--servers must be at least 1");
            }
            let catalog = paper_server_specs();
            let specs: Vec<ServerSpec> =
                (0..args.servers).map(|i| catalog[i % catalog.len()]).collect();
            let spec = GenSpec::new(counts, zones, specs, args.seed, &args.profile)
                .ok_or_else(|| anyhow::anyhow!("unknown template profile {:?}", args.profile))?;
            (generate_scenario(&spec)?, "generator".to_string())
        }
    };

    let echo = serde_json::json!({
        "command": "generate",
        "source": source,
        "seed": args.seed,
        "out": args.out.display().to_string(),
    });
    println!("{echo}");
    scenario
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {}: {} users, {} tasks, {} servers, {} zones",
        args.out.display(),
        scenario.users.len(),
        scenario.all_tasks().len(),
        scenario.servers.len(),
        scenario.topology.zones.len()
    );
    Ok(())
}

/// Streams one JSON object per training step.
struct JsonlSink {
    out: std::io::BufWriter<std::fs::File>,
}

impl StepSink for JsonlSink {
    fn record(&mut self, rec: &StepRecord, _: &EpisodeState, _: &EvalContext) {
        serde_json::to_writer(&mut self.out, rec).expect("step record serializes");
        self.out.write_all(b"\n").expect("debug log writable");
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (scenario, scenario_tag) = load_scenario(&args.scenario, &args.preset, args.seed)?;
    let file_cfg = load_config_file(&args.config)?;
    let train = effective_train_config(
        &scenario,
        args.train_preset,
        &file_cfg,
        args.uth,
        args.episodes,
        args.max_steps,
    );
    let alg: Algorithm = args.alg.into();

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let out_path = args.out_dir.join(format!("run_{}_seed{}.json", alg, args.seed));
    let mut written: Vec<PathBuf> = Vec::new();

    let echo = serde_json::json!({
        "command": "run",
        "scenario": scenario_tag,
        "alg": alg,
        "seed": args.seed,
        "u_th": train.u_th,
        "debug_log": args.debug_log,
        "train": train,
    });
    println!("{echo}");

    let result = (|| -> Result<()> {
        let started = std::time::Instant::now();
        let mut root = serde_json::Map::new();
        root.insert("effective_config".into(), echo.clone());

        let (summary, result_value, mut timing) = match alg {
            Algorithm::Edf | Algorithm::BestFit => {
                let schedule = match alg {
                    Algorithm::Edf => edf_schedule(&scenario, train.u_th),
                    _ => bestfit_schedule(&scenario, train.u_th),
                };
                let record = ScheduleRecord::from_schedule(&schedule, &scenario);
                let wall = started.elapsed().as_secs_f64();
                let summary = format!(
                    "alg={} hit_ratio={:.4} runtime_s={:.6} assigned={}",
                    alg, record.hit_ratio, wall, record.assigned_tasks
                );
                (
                    summary,
                    serde_json::json!({ "schedule": record }),
                    serde_json::json!({ "wall_s": wall }),
                )
            }
            Algorithm::Arl | Algorithm::Vrl => {
                let kind = match alg {
                    Algorithm::Arl => AgentKind::Arl,
                    _ => AgentKind::Vrl,
                };
                let train_result: TrainResult = if args.debug_log {
                    let log_path = args
                        .out_dir
                        .join(format!("steps_{}_seed{}.jsonl", alg, args.seed));
                    let file = std::fs::File::create(&log_path)
                        .with_context(|| format!("creating {}", log_path.display()))?;
                    written.push(log_path);
                    let mut sink = JsonlSink { out: std::io::BufWriter::new(file) };
                    train_kind(kind, &scenario, &train, args.seed, &mut sink)?
                } else {
                    train_kind(
                        kind,
                        &scenario,
                        &train,
                        args.seed,
                        &mut edgesched::agent::NoopSink,
                    )?
                };
                let summary = format!(
                    "alg={} hit_ratio={:.4} runtime_s={:.3} convergence_episode={} steps={}",
                    alg,
                    train_result.best_hit_ratio,
                    train_result.timing.total_wall_s,
                    train_result
                        .converged_episode
                        .map(|e| e.to_string())
                        .unwrap_or_else(|| "none".into()),
                    train_result.total_steps,
                );
                let mut value = serde_json::to_value(&train_result)?;
                let timing = value
                    .as_object_mut()
                    .expect("train result is an object")
                    .remove("timing")
                    .unwrap_or_else(|| serde_json::json!({}));
                (summary, value, timing)
            }
        };
        if let Some(map) = timing.as_object_mut() {
            map.insert(
                "command_wall_s".into(),
                serde_json::json!(started.elapsed().as_secs_f64()),
            );
        }
        root.insert("result".into(), result_value);
        root.insert("timing".into(), timing);
        written.push(out_path.clone());
        write_pretty_json(&out_path, &serde_json::Value::Object(root))?;
        println!("{summary}");
        println!("wrote {}", out_path.display());
        Ok(())
    })();

    if result.is_err() {
        cleanup_partial(&written);
    }
    result
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    if args.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let (scenario, scenario_tag) = load_scenario(&args.scenario, &args.preset, args.seed)?;
    let file_cfg = load_config_file(&args.config)?;
    let train = effective_train_config(
        &scenario,
        args.train_preset,
        &file_cfg,
        args.uth,
        args.episodes,
        args.max_steps,
    );
    let algorithms: Vec<Algorithm> = if args.algs.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        args.algs.iter().map(|&a| a.into()).collect()
    };
    let experiment = ExperimentConfig {
        train,
        watts_per_core: file_cfg.watts_per_core.unwrap_or(15.0),
        jobs: args.jobs,
        measure_ram: !args.no_ram,
    };

    let echo = serde_json::json!({
        "command": "compare",
        "scenario": scenario_tag,
        "algorithms": algorithms,
        "reps": args.reps,
        "base_seed": args.seed,
        "jobs": args.jobs,
        "measure_ram": experiment.measure_ram,
        "watts_per_core": experiment.watts_per_core,
        "train": experiment.train,
    });
    println!("{echo}");

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let report =
            run_experiment(&scenario, &algorithms, args.reps, args.seed, &experiment)?;

        let csv_path = args.out_dir.join("compare.csv");
        written.push(csv_path.clone());
        export_csv(&report, &csv_path)?;

        let json_path = args.out_dir.join("compare.json");
        written.push(json_path.clone());
        let mut value = serde_json::to_value(&report)?;
        if let Some(map) = value.as_object_mut() {
            map.insert("effective_config".into(), echo.clone());
        }
        write_pretty_json(&json_path, &value)?;

        written.extend(export_svg_plots(&report, &args.out_dir)?);

        for agg in &report.aggregates {
            println!(
                "{:8} median hit_ratio={:.4} median runtime_s={:.3} converged={}/{}",
                agg.algorithm.to_string(),
                agg.hit_ratio.median,
                agg.runtime_s.median,
                agg.converged_runs,
                agg.repetitions
            );
        }
        println!("wrote {}", csv_path.display());
        Ok(())
    })();

    if result.is_err() {
        cleanup_partial(&written);
    }
    result
}
