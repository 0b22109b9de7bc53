use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rowslam::evaluation::{benchmark, comparison_methods, evaluate, regenerate_truth, write_csv, MetricReport};
use rowslam::mapping::SemanticMap;
use rowslam::pipeline::{run_pipeline, RunConfig};
use rowslam::simulator::{read_log, write_log, GroundTruth, ObservationLog, SimSpec, Simulation};

#[derive(Parser)]
#[command(name = "rowslam", version, about = "Corn row stalk mapping: simulate, run, evaluate, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic row: observation log plus ground-truth scene.
    Simulate {
        /// Simulation spec (JSON). Defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Observation log to write (JSON Lines).
        #[arg(long, required_unless_present = "print_default_spec")]
        out: Option<PathBuf>,
        /// Scene file to write; defaults to `<out>.scene.json`.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Omit the generation timestamp so reruns are byte-identical.
        #[arg(long)]
        no_timestamp: bool,
        #[arg(long)]
        print_default_spec: bool,
    },
    /// Build a semantic map from an observation log.
    Run {
        #[arg(long, required_unless_present = "print_default_config")]
        log: Option<PathBuf>,
        /// Run configuration (JSON). Defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_default_config")]
        out: Option<PathBuf>,
        /// Overrides the config's estimator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_timestamp: bool,
        #[arg(long)]
        print_default_config: bool,
    },
    /// Score a map against the scene it was built from.
    Evaluate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full method and the five baselines on one log.
    Benchmark {
        #[arg(long)]
        log: PathBuf,
        /// Base configuration shared by all methods.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Scene file: ground truth plus the seed that generated it.
#[derive(Serialize, Deserialize)]
struct SceneFile {
    seed: u64,
    #[serde(flatten)]
    truth: GroundTruth,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    #[serde(flatten)]
    map: SemanticMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated_unix_s: Option<u64>,
}

fn timestamp(disabled: bool) -> Option<u64> {
    if disabled {
        return None;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => read_json(p, "config")?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn load_log(path: &Path) -> Result<ObservationLog> {
    Ok(read_log(path)?)
}

fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_simulate(
    spec: Option<&Path>,
    out: &Path,
    scene: Option<&Path>,
    seed: u64,
    no_timestamp: bool,
) -> Result<()> {
    let spec: SimSpec = match spec {
        Some(p) => read_json(p, "spec")?,
        None => SimSpec::default(),
    };
    let sim = Simulation::new(spec, seed).context("invalid simulation spec")?;
    let log = ObservationLog { header: sim.header(timestamp(no_timestamp)), frames: sim.render_all() };
    write_log(&log, out)?;
    let scene_path = scene.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("scene.json"));
    write_json(&scene_path, &SceneFile { seed, truth: sim.truth.clone() })?;
    println!(
        "frames {} stalks {} -> {} (scene {})",
        log.frames.len(),
        sim.truth.stalk_positions_world.len(),
        out.display(),
        scene_path.display()
    );
    Ok(())
}

fn cmd_run(log: &Path, config: &RunConfig, out: &Path, no_timestamp: bool) -> Result<()> {
    let obs = load_log(log)?;
    let result = run_pipeline(&obs, config).with_context(|| format!("no map from {}", log.display()))?;
    if !result.failures.is_empty() {
        log::warn!("{} of {} frames dropped", result.failures.len(), obs.frames.len());
    }
    let landmarks = result.map.landmarks.len();
    write_json(out, &MapFile { map: result.map, generated_unix_s: timestamp(no_timestamp) })?;
    println!("frames {} dropped {} landmarks {} -> {}", obs.frames.len(), result.failures.len(), landmarks, out.display());
    Ok(())
}

fn cmd_evaluate(map: &Path, scene: &Path, log: &Path, out: &Path) -> Result<()> {
    let map: MapFile = read_json(map, "map")?;
    let scene: SceneFile = read_json(scene, "scene")?;
    let obs = load_log(log)?;
    if scene.seed != obs.header.seed {
        log::warn!("scene seed {} differs from log seed {}", scene.seed, obs.header.seed);
    }
    let k = obs.header.specs.rig.side.intrinsics;
    let report = evaluate(&map.map, &scene.truth, &k, "map").context("evaluation failed")?;
    write_reports(out, std::slice::from_ref(&report))?;
    println!(
        "epsilon1 {:.4} cm  epsilon2 {:.4} px  matched {} unmatched {}",
        report.epsilon1_cm, report.epsilon2_px, report.matched, report.unmatched
    );
    Ok(())
}

fn cmd_benchmark(log: &Path, config: &RunConfig, out: &Path) -> Result<()> {
    let obs = load_log(log)?;
    let truth = regenerate_truth(&obs.header).context("log header does not describe a valid simulation")?;
    let reports = benchmark(&obs, &truth, &comparison_methods(config));
    write_reports(out, &reports)?;
    for r in &reports {
        println!("{:<16} {:>8.3} cm {:>8.3} px  {}/{}", r.method, r.epsilon1_cm, r.epsilon2_px, r.matched, r.unmatched);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate { spec, out, scene, seed, no_timestamp, print_default_spec } => {
            if print_default_spec {
                println!("{}", serde_json::to_string_pretty(&SimSpec::default())?);
                return Ok(());
            }
            let Some(out) = out else { bail!("--out is required") };
            cmd_simulate(spec.as_deref(), &out, scene.as_deref(), seed, no_timestamp)
        }
        Command::Run { log, config, out, seed, no_timestamp, print_default_config } => {
            if print_default_config {
                println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
                return Ok(());
            }
            let (Some(log), Some(out)) = (log, out) else { bail!("--log and --out are required") };
            let config = load_config(config.as_deref(), seed)?;
            cmd_run(&log, &config, &out, no_timestamp)
        }
        Command::Evaluate { map, scene, log, out } => cmd_evaluate(&map, &scene, &log, &out),
        Command::Benchmark { log, config, out, seed } => {
            let config = load_config(config.as_deref(), seed)?;
            cmd_benchmark(&log, &config, &out)
        }
    }
}
