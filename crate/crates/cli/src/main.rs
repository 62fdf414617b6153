use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use memosort::config::RunConfig;
use memosort::io;
use memosort::metrics::{self, EvalReport};
use memosort::pipeline::{run_sequence, Tracker};
use memosort::synthgen::{self, Scenario, ScenarioConfig};
use memosort::trainer;
use memosort::{GateWeights, MemoryKalmanFilter};

#[derive(Parser)]
#[command(name = "memosort", version, about = "Multi-object tracking with a memory-assisted Kalman filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track detections and write MOT result rows.
    Track {
        /// Detections in MOT text format.
        #[arg(long)]
        dets: PathBuf,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gate weight file; overrides the config's `weights`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the filter's gates and write a weight file and loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of `<name>.gt.txt` / `<name>.det.txt` pairs. Without it,
        /// figure-spin scenarios are generated from the seed.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of generated scenarios when `--data` is absent.
        #[arg(long, default_value_t = 5)]
        scenarios: usize,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve log; defaults to `<out>.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Generate synthetic scenarios as truth and detection files.
    Synth {
        #[arg(long, value_enum, default_value_t = Preset::Mixed)]
        preset: Preset,
        /// Scenario config JSON (overrides `--preset`).
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score tracking results against ground truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        /// One or more result files; several are ranked against each other.
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        /// IoU needed for a match.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write the report(s) as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the built-in consistency checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Mixed motion regimes.
    Mixed,
    /// Figure-spin targets.
    FigureSpin,
    /// The five occlusion benchmark scenarios (fixed seeds).
    OcclusionSuite,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn load_filter(cfg: &RunConfig, weights: Option<&Path>) -> Result<MemoryKalmanFilter> {
    let path = weights.or(cfg.weights.as_deref());
    let gates = match path {
        Some(p) if p.exists() => {
            GateWeights::load(p, cfg.arch).with_context(|| format!("loading weights {}", p.display()))?
        }
        Some(p) => {
            warn!(
                "weight file {} not found: running as a plain Kalman filter (no memory compensation)",
                p.display()
            );
            GateWeights::init(cfg.arch, cfg.seed)
        }
        None => {
            warn!("no weight file given: running as a plain Kalman filter (no memory compensation)");
            GateWeights::init(cfg.arch, cfg.seed)
        }
    };
    Ok(MemoryKalmanFilter::new(Arc::new(gates), cfg.noise, cfg.frame))
}

fn track(dets: &Path, config: Option<&Path>, weights: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let filter = load_filter(&cfg, weights)?;
    let frames = io::parse_detections(dets)?;
    let mut tracker = Tracker::new(cfg.tracker, filter)?;
    let results = run_sequence(&mut tracker, &frames)?;
    io::write_results(&results, out)?;
    if tracker.diagnostics() > 0 {
        warn!("{} filter diagnostics during tracking", tracker.diagnostics());
    }
    let ids: std::collections::BTreeSet<u64> = results.iter().map(|r| r.id).collect();
    println!("{} frames, {} tracks, {} rows -> {}", frames.len(), ids.len(), results.len(), out.display());
    Ok(())
}

fn read_scenarios(dir: &Path) -> Result<Vec<Scenario>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".gt.txt").map(str::to_string))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for n in names {
        let dets = dir.join(format!("{n}.det.txt"));
        if !dets.exists() {
            bail!("{} has no matching {}", dir.join(format!("{n}.gt.txt")).display(), dets.display());
        }
        out.push(Scenario::import(&n, dir.join(format!("{n}.gt.txt")), dets)?);
    }
    if out.is_empty() {
        bail!("no <name>.gt.txt files in {}", dir.display());
    }
    Ok(out)
}

fn train(config: Option<&Path>, data: Option<&Path>, scenarios: usize, out: &Path, log: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let scen = match data {
        Some(d) => read_scenarios(d)?,
        None => synthgen::figure_spin_scenarios(scenarios, cfg.seed),
    };
    let dataset = trainer::build_dataset(&scen, &cfg.train);
    info!("{} windows from {} scenarios", dataset.len(), scen.len());
    let init = GateWeights::init(cfg.arch, cfg.seed);
    let report = trainer::train(&dataset, init, cfg.noise, cfg.frame, &cfg.train)?;
    report.weights.save(out)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    fs::write(&log_path, trainer::format_curve(&report.curve))
        .with_context(|| format!("writing {}", log_path.display()))?;
    let (base, best) = (report.baseline(), report.best());
    println!(
        "{} windows ({} train, {} validation), {} skipped batches",
        dataset.len(),
        report.train_windows,
        report.val_windows,
        report.skipped_batches
    );
    println!("validation loss {:.6} -> {:.6} (best epoch {})", base.validation, best.validation, report.best_epoch);
    println!("weights -> {}, loss curve -> {}", out.display(), log_path.display());
    Ok(())
}

fn synth(preset: Preset, scenario: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let mut run = RunConfig::default();
    if let Some(s) = seed {
        run.seed = s;
    }
    run.apply_env()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let scenarios = match (scenario, preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: ScenarioConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            vec![synthgen::generate(&cfg, run.seed)?]
        }
        (None, Preset::Mixed) => vec![synthgen::generate(&ScenarioConfig::default(), run.seed)?],
        (None, Preset::FigureSpin) => vec![synthgen::generate(&synthgen::figure_spin_config(200, 5), run.seed)?],
        (None, Preset::OcclusionSuite) => synthgen::occlusion_suite(),
    };
    for s in &scenarios {
        s.export(out_dir)?;
        println!("{}: {} frames, {} targets, seed {}", s.name, s.frames, s.targets.len(), s.seed);
    }
    Ok(())
}

fn eval(truth: &Path, results: &[PathBuf], threshold: f64, json: Option<&Path>) -> Result<()> {
    let gt = io::group_by_frame(&io::read_mot(truth)?)?;
    let mut reports = Vec::new();
    for r in results {
        let res = io::group_by_frame(&io::read_mot(r)?)?;
        let name = r.display().to_string();
        let seq = metrics::evaluate(&name, &gt, &res, threshold)?;
        reports.push(EvalReport::from_sequences(&name, vec![seq])?);
    }
    for r in &reports {
        print!("{r}");
    }
    if reports.len() > 1 {
        print!("{}", metrics::compare(&reports));
    }
    if let Some(p) = json {
        let text = if reports.len() == 1 {
            reports[0].to_json()
        } else {
            serde_json::to_string_pretty(&reports)?
        };
        fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn selftest() -> Result<()> {
    let results = memosort::selftest::run_all();
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} selftest check(s) failed");
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track {
            dets,
            config,
            weights,
            out,
        } => track(&dets, config.as_deref(), weights.as_deref(), &out),
        Command::Train {
            config,
            data,
            scenarios,
            out,
            log,
        } => train(config.as_deref(), data.as_deref(), scenarios, &out, log.as_deref()),
        Command::Synth {
            preset,
            scenario,
            seed,
            out_dir,
        } => synth(preset, scenario.as_deref(), seed, &out_dir),
        Command::Eval {
            truth,
            results,
            threshold,
            json,
        } => eval(&truth, &results, threshold, json.as_deref()),
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
