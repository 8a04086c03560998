//! Experiment orchestration: repeated seeded runs over the four
//! schedulers, convergence detection, runtime/RAM/energy measurement,
//! statistical aggregation, and CSV/SVG export.
//!
//! Wall-clock, CPU-time, RAM, and energy numbers are measurements and
//! vary run to run; everything else in a report is a deterministic
//! function of (scenario, config, seeds). RAM is peak resident-set
//! sampling of the whole process at 10 Hz plus before/after checkpoints,
//! an approximation that is only meaningful when runs execute
//! sequentially, so enabling RAM measurement forces `jobs = 1`. The
//! energy figure is a documented proxy (CPU seconds times a configured
//! per-core wattage), never a measured power draw.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{train_kind, AgentError, AgentKind, NoopSink, TrainConfig};
use crate::baselines::{bestfit_schedule, edf_schedule};
use crate::eval::{evaluate_schedule_ctx, Assignment, EvalContext};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown algorithm tag: {0}")]
    NotFound(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The four schedulers under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Arl,
    Vrl,
    Edf,
    #[serde(rename = "bestfit")]
    BestFit,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Arl,
        Algorithm::Vrl,
        Algorithm::Edf,
        Algorithm::BestFit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Arl => "arl",
            Algorithm::Vrl => "vrl",
            Algorithm::Edf => "edf",
            Algorithm::BestFit => "bestfit",
        }
    }

    pub fn is_rl(&self) -> bool {
        matches!(self, Algorithm::Arl | Algorithm::Vrl)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arl" => Ok(Algorithm::Arl),
            "vrl" => Ok(Algorithm::Vrl),
            "edf" => Ok(Algorithm::Edf),
            "bestfit" => Ok(Algorithm::BestFit),
            other => Err(HarnessError::NotFound(other.to_string())),
        }
    }
}

/// First episode index from which the series strictly exceeds the
/// threshold for `window` consecutive episodes and never drops back to
/// or below it afterwards; `None` when no such index exists.
pub fn detect_convergence(series: &[f64], threshold: f64, window: usize) -> Option<usize> {
    debug_assert!(threshold > 0.0 && threshold <= 1.0 && window >= 1);
    let last_drop = series.iter().rposition(|&v| v <= threshold);
    let start = match last_drop {
        Some(i) => i + 1,
        None => 0,
    };
    if series.len() - start >= window {
        Some(start)
    } else {
        None
    }
}

/// Linear energy proxy: CPU seconds times configured watts per core.
pub fn energy_proxy(cpu_time_seconds: f64, watts_per_core: f64) -> f64 {
    cpu_time_seconds * watts_per_core
}

/// Measurements and outcomes of one (algorithm, repetition) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub repetition: usize,
    pub seed: u64,
    pub hit_ratio_final: f64,
    pub convergence_episode: Option<usize>,
    pub total_steps: u64,
    /// Headline runtime: schedule generation wall time plus simulated
    /// provisioning for the heuristics, learning wall time for the RL
    /// agents.
    pub runtime_seconds: f64,
    pub wall_seconds: f64,
    /// Simulated provisioning time (sum of the final schedule's
    /// per-assignment provisioning terms); included in `runtime_seconds`
    /// for heuristics only.
    pub sim_provisioning_seconds: f64,
    pub cpu_seconds: f64,
    pub peak_ram_bytes: u64,
    pub energy_joules_proxy: f64,
    /// Per-episode user-level hit-ratio series (RL runs only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_hit_ratio: Option<Vec<f64>>,
}

/// Mean, median, and sample standard deviation of one metric across
/// repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len();
        assert!(n > 0);
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let stddev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
                .sqrt()
        };
        Stats { mean, median, stddev }
    }
}

/// Aggregated metrics of one algorithm over all repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgorithmAggregate {
    pub algorithm: Algorithm,
    pub repetitions: usize,
    pub converged_runs: usize,
    pub hit_ratio: Stats,
    pub runtime_s: Stats,
    pub wall_s: Stats,
    pub cpu_s: Stats,
    pub peak_ram_bytes: Stats,
    pub energy_j: Stats,
    pub total_steps: Stats,
}

/// Full experiment report: one row per (algorithm, repetition) plus the
/// per-algorithm aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub repetitions: usize,
    pub base_seed: u64,
    pub config: TrainConfig,
    pub watts_per_core: f64,
    pub runs: Vec<RunMetrics>,
    pub aggregates: Vec<AlgorithmAggregate>,
}

/// Experiment knobs beyond the per-run training config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub watts_per_core: f64,
    pub jobs: usize,
    /// Peak-RSS sampling; forces sequential execution.
    pub measure_ram: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            watts_per_core: 15.0,
            jobs: 1,
            measure_ram: true,
        }
    }
}

/// Runs `repetitions` seeded runs of each algorithm (seed = base_seed +
/// repetition) and aggregates the measurements.
pub fn run_experiment(
    scenario: &Scenario,
    algorithms: &[Algorithm],
    repetitions: usize,
    base_seed: u64,
    cfg: &ExperimentConfig,
) -> Result<AggregateReport, HarnessError> {
    assert!(repetitions >= 1, "need at least one repetition");
    cfg.train.validate()?;
    let grid: Vec<(usize, Algorithm, usize)> = algorithms
        .iter()
        .flat_map(|&alg| (0..repetitions).map(move |rep| (alg, rep)))
        .enumerate()
        .map(|(slot, (alg, rep))| (slot, alg, rep))
        .collect();

    let jobs = if cfg.measure_ram { 1 } else { cfg.jobs.max(1) };
    let slots: Mutex<Vec<Option<RunMetrics>>> = Mutex::new(vec![None; grid.len()]);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);

    if jobs <= 1 {
        for &(slot, alg, rep) in &grid {
            let metrics = execute_run(scenario, alg, rep, base_seed + rep as u64, cfg)?;
            slots.lock().unwrap()[slot] = Some(metrics);
        }
    } else {
        std::thread::scope(|scope| {
            for worker in 0..jobs {
                let grid = &grid;
                let slots = &slots;
                let failure = &failure;
                scope.spawn(move || {
                    for &(slot, alg, rep) in grid.iter().skip(worker).step_by(jobs) {
                        if failure.lock().unwrap().is_some() {
                            return;
                        }
                        match execute_run(scenario, alg, rep, base_seed + rep as u64, cfg) {
                            Ok(metrics) => slots.lock().unwrap()[slot] = Some(metrics),
                            Err(e) => *failure.lock().unwrap() = Some(e),
                        }
                    }
                });
            }
        });
    }
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let runs: Vec<RunMetrics> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|m| m.expect("every slot filled"))
        .collect();

    let aggregates = algorithms
        .iter()
        .map(|&alg| aggregate(&runs, alg, repetitions))
        .collect();
    Ok(AggregateReport {
        repetitions,
        base_seed,
        config: cfg.train.clone(),
        watts_per_core: cfg.watts_per_core,
        runs,
        aggregates,
    })
}

fn aggregate(runs: &[RunMetrics], alg: Algorithm, repetitions: usize) -> AlgorithmAggregate {
    let of_alg: Vec<&RunMetrics> = runs.iter().filter(|r| r.algorithm == alg).collect();
    let col = |f: &dyn Fn(&RunMetrics) -> f64| -> Stats {
        Stats::of(&of_alg.iter().map(|r| f(r)).collect::<Vec<f64>>())
    };
    AlgorithmAggregate {
        algorithm: alg,
        repetitions,
        converged_runs: of_alg.iter().filter(|r| r.convergence_episode.is_some()).count(),
        hit_ratio: col(&|r| r.hit_ratio_final),
        runtime_s: col(&|r| r.runtime_seconds),
        wall_s: col(&|r| r.wall_seconds),
        cpu_s: col(&|r| r.cpu_seconds),
        peak_ram_bytes: col(&|r| r.peak_ram_bytes as f64),
        energy_j: col(&|r| r.energy_joules_proxy),
        total_steps: col(&|r| r.total_steps as f64),
    }
}

/// Executes one seeded run of one algorithm with measurement around it.
pub fn execute_run(
    scenario: &Scenario,
    alg: Algorithm,
    repetition: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<RunMetrics, HarnessError> {
    let ctx = EvalContext::new(scenario);
    let measurement = Measurement::start(cfg.measure_ram);
    match alg {
        Algorithm::Edf | Algorithm::BestFit => {
            let schedule = match alg {
                Algorithm::Edf => edf_schedule(scenario, cfg.train.u_th),
                _ => bestfit_schedule(scenario, cfg.train.u_th),
            };
            let m = measurement.finish();
            let sim_prov = simulated_provisioning_s(&schedule.assignments, &ctx);
            let eval = evaluate_schedule_ctx(&ctx, &schedule);
            Ok(RunMetrics {
                algorithm: alg,
                repetition,
                seed,
                hit_ratio_final: eval.hit_ratio,
                convergence_episode: None,
                total_steps: 0,
                runtime_seconds: m.wall_s + sim_prov,
                wall_seconds: m.wall_s,
                sim_provisioning_seconds: sim_prov,
                cpu_seconds: m.cpu_s,
                peak_ram_bytes: m.peak_ram_bytes,
                energy_joules_proxy: energy_proxy(m.cpu_s, cfg.watts_per_core),
                episode_hit_ratio: None,
            })
        }
        Algorithm::Arl | Algorithm::Vrl => {
            let kind = match alg {
                Algorithm::Arl => AgentKind::Arl,
                _ => AgentKind::Vrl,
            };
            let result = train_kind(kind, scenario, &cfg.train, seed, &mut NoopSink)?;
            let m = measurement.finish();
            let sim_prov =
                simulated_provisioning_s(&result.best_schedule.assignments, &ctx);
            Ok(RunMetrics {
                algorithm: alg,
                repetition,
                seed,
                hit_ratio_final: result.best_hit_ratio,
                convergence_episode: result.converged_episode,
                total_steps: result.total_steps,
                runtime_seconds: m.wall_s,
                wall_seconds: m.wall_s,
                sim_provisioning_seconds: sim_prov,
                cpu_seconds: m.cpu_s,
                peak_ram_bytes: m.peak_ram_bytes,
                energy_joules_proxy: energy_proxy(m.cpu_s, cfg.watts_per_core),
                episode_hit_ratio: Some(result.episode_hit_ratio),
            })
        }
    }
}

/// Peak-RSS sampler plus wall/CPU clocks around one run.
struct Measurement {
    wall_start: Instant,
    cpu_start: f64,
    ram: Option<RamSampler>,
}

struct MeasurementResult {
    wall_s: f64,
    cpu_s: f64,
    peak_ram_bytes: u64,
}

impl Measurement {
    fn start(measure_ram: bool) -> Self {
        Measurement {
            wall_start: Instant::now(),
            cpu_start: thread_cpu_time_s(),
            ram: if measure_ram { Some(RamSampler::start()) } else { None },
        }
    }

    fn finish(self) -> MeasurementResult {
        MeasurementResult {
            wall_s: self.wall_start.elapsed().as_secs_f64(),
            cpu_s: (thread_cpu_time_s() - self.cpu_start).max(0.0),
            peak_ram_bytes: self.ram.map(RamSampler::stop).unwrap_or(0),
        }
    }
}

/// Background thread sampling the process resident set at 10 Hz.
struct RamSampler {
    stop: Arc<AtomicBool>,
    handle: std::thread::JoinHandle<u64>,
}

impl RamSampler {
    fn start() -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            let mut peak = read_vm_rss_bytes().unwrap_or(0);
            while !flag.load(Ordering::Relaxed) {
                std::thread::sleep(std::time::Duration::from_millis(100));
                if let Some(rss) = read_vm_rss_bytes() {
                    peak = peak.max(rss);
                }
            }
            if let Some(rss) = read_vm_rss_bytes() {
                peak = peak.max(rss);
            }
            peak
        });
        RamSampler { stop, handle }
    }

    fn stop(self) -> u64 {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap_or(0)
    }
}

#[cfg(target_os = "linux")]
fn read_vm_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[cfg(not(target_os = "linux"))]
fn read_vm_rss_bytes() -> Option<u64> {
    None
}

#[cfg(unix)]
fn thread_cpu_time_s() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc == 0 {
        ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
    } else {
        0.0
    }
}

#[cfg(not(unix))]
fn thread_cpu_time_s() -> f64 {
    0.0
}

/// Sum of the provisioning terms over a schedule's assignments.
fn simulated_provisioning_s(assignments: &[Assignment], ctx: &EvalContext) -> f64 {
    assignments
        .iter()
        .map(|a| {
            let ti = ctx.task_idx(a.task).expect("known task");
            let si = ctx.server_idx(a.server).expect("known server");
            ctx.routing
                .provisioning_s(
                    ctx.tasks[ti].data_size_ram,
                    ctx.user_zone(ti),
                    ctx.servers[si].zone,
                )
                .expect("scenario topology is connected")
        })
        .sum()
}

/// Stable CSV column order; one row per (algorithm, repetition), then
/// mean/median/stddev rows per algorithm with blank seed and
/// convergence-episode columns.
pub const CSV_HEADER: &str = "algorithm,repetition,seed,hit_ratio,runtime_s,wall_s,\
sim_provisioning_s,cpu_s,peak_ram_bytes,energy_j,convergence_episode,total_steps";

pub fn export_csv(report: &AggregateReport, path: &Path) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.runs {
        let conv = r.convergence_episode.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.repetition,
            r.seed,
            r.hit_ratio_final,
            r.runtime_seconds,
            r.wall_seconds,
            r.sim_provisioning_seconds,
            r.cpu_seconds,
            r.peak_ram_bytes,
            r.energy_joules_proxy,
            conv,
            r.total_steps,
        ));
    }
    for agg in &report.aggregates {
        for (stat, pick) in [
            ("mean", &(|s: &Stats| s.mean) as &dyn Fn(&Stats) -> f64),
            ("median", &|s: &Stats| s.median),
            ("stddev", &|s: &Stats| s.stddev),
        ] {
            out.push_str(&format!(
                "{},{},,{},{},{},,{},{},{},,{}\n",
                agg.algorithm,
                stat,
                pick(&agg.hit_ratio),
                pick(&agg.runtime_s),
                pick(&agg.wall_s),
                pick(&agg.cpu_s),
                pick(&agg.peak_ram_bytes),
                pick(&agg.energy_j),
                pick(&agg.total_steps),
            ));
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

const SVG_COLORS: [(&str, &str); 4] = [
    ("arl", "#d62728"),
    ("vrl", "#1f77b4"),
    ("edf", "#2ca02c"),
    ("bestfit", "#ff7f0e"),
];

/// Emits three scatter plots (hit-ratio against runtime, peak RAM, and
/// the energy proxy); returns the written paths.
pub fn export_svg_plots(
    report: &AggregateReport,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    let plots: [(&str, &str, Box<dyn Fn(&RunMetrics) -> f64>); 3] = [
        ("hit_vs_runtime.svg", "runtime (s)", Box::new(|r| r.runtime_seconds)),
        (
            "hit_vs_ram.svg",
            "peak RAM (MB)",
            Box::new(|r| r.peak_ram_bytes as f64 / (1024.0 * 1024.0)),
        ),
        ("hit_vs_energy.svg", "energy proxy (J)", Box::new(|r| r.energy_joules_proxy)),
    ];
    let mut written = Vec::new();
    for (name, x_label, metric) in plots {
        let path = dir.join(name);
        std::fs::write(&path, scatter_svg(report, x_label, metric.as_ref()))?;
        written.push(path);
    }
    Ok(written)
}

fn scatter_svg(
    report: &AggregateReport,
    x_label: &str,
    metric: &dyn Fn(&RunMetrics) -> f64,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 50.0;
    let x_max = report
        .runs
        .iter()
        .map(metric)
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;
    let x_of = |v: f64| ML + (v / x_max) * (W - ML - MR);
    let y_of = |hit: f64| H - MB - hit * (H - MT - MB);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{ML}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        y0 = H - MB,
        x1 = W - MR,
    ));
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let xv = frac * x_max;
        let x = x_of(xv);
        s.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\">{v:.3}</text>\n",
            y0 = H - MB,
            y1 = H - MB + 5.0,
            ty = H - MB + 20.0,
            v = xv,
        ));
        let y = y_of(frac);
        s.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{tx}\" y=\"{typ}\" text-anchor=\"end\">{frac:.2}</text>\n",
            x0 = ML - 5.0,
            tx = ML - 8.0,
            typ = y + 4.0,
        ));
    }
    s.push_str(&format!(
        "<text x=\"{cx}\" y=\"{cy}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{my}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {my})\">hit-ratio</text>\n",
        cx = (ML + W - MR) / 2.0,
        cy = H - 12.0,
        my = (MT + H - MB) / 2.0,
    ));
    for r in &report.runs {
        let color = SVG_COLORS
            .iter()
            .find(|(tag, _)| *tag == r.algorithm.as_str())
            .map(|(_, c)| *c)
            .unwrap_or("#555555");
        s.push_str(&format!(
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n",
            x = x_of(metric(r)),
            y = y_of(r.hit_ratio_final),
        ));
    }
    for (i, (tag, color)) in SVG_COLORS.iter().enumerate() {
        let y = MT + 16.0 * i as f64 + 8.0;
        s.push_str(&format!(
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\">{tag}</text>\n",
            x = W - MR - 90.0,
            tx = W - MR - 80.0,
            ty = y + 4.0,
        ));
    }
    s.push_str("</svg>\n");
    s
}
