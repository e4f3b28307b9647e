use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use refpoint_lmb::experiment::{replay, run_experiment, summarize_results_csv, write_extraction, ExperimentConfig};
use refpoint_lmb::likelihood::MeasurementModel;
use refpoint_lmb::lmb::SensorModel;
use refpoint_lmb::sim::{generate_trial, generate_truth, write_log};
use refpoint_lmb::{Error, Result};

#[derive(Parser)]
#[command(name = "rplmb", version, about = "Reference-point LMB tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed of the measurement streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for `replay`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo trials.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated methods: MAX, MH, MEAS, MHC.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Comma-separated noise levels in m.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground truth and the measurement log of one trial.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run the Monte-Carlo method/noise sweep.
    Run {
        #[command(flatten)]
        common: Common,
        /// Number of trials per cell.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Track a measurement log and write the per-scan extraction as CSV.
    Replay {
        #[command(flatten)]
        common: Common,
        log: PathBuf,
    },
    /// Print mean OSPAT per method and noise level from a results directory.
    Metrics {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(methods) = &common.method {
        cfg.methods = methods.iter().map(|m| m.parse()).collect::<Result<Vec<MeasurementModel>>>()?;
    }
    if let Some(sigmas) = &common.sigma {
        cfg.sigmas = sigmas.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io(path: &std::path::Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Config(format!("{}: {e}", path.display()))
}

fn simulate(cfg: &ExperimentConfig, trial: usize) -> Result<()> {
    let scenario = cfg.scenario_at(cfg.sigmas[0]);
    let truth = generate_truth(&scenario);
    let scans = generate_trial(&scenario, &truth, trial);
    fs::create_dir_all(&cfg.out).map_err(io(&cfg.out))?;

    let truth_path = cfg.out.join("truth.csv");
    let mut w = BufWriter::new(File::create(&truth_path).map_err(io(&truth_path))?);
    writeln!(w, "timestamp,id,x,y,phi,phi_dot,v,a,w,l").map_err(io(&truth_path))?;
    for frame in &truth {
        for (id, s) in &frame.objects {
            writeln!(w, "{},{},{},{},{},{},{},{},{},{}", frame.timestamp, id, s.x, s.y, s.phi, s.phi_dot, s.v, s.a, s.w, s.l)
                .map_err(io(&truth_path))?;
        }
    }
    w.flush().map_err(io(&truth_path))?;

    let log_path = cfg.out.join("measurements.jsonl");
    let mut w = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
    write_log(&mut w, scans.iter().flatten().flatten()).map_err(io(&log_path))?;
    w.flush().map_err(io(&log_path))?;
    println!("wrote {} and {}", truth_path.display(), log_path.display());
    Ok(())
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let summary = run_experiment(cfg)?;
    println!("{:<6} {:>6} {:>10} {:>10} {:>8}", "method", "sigma", "ospat", "card_err", "non-cont");
    for c in &summary.cells {
        println!("{:<6} {:>6} {:>10.4} {:>10.4} {:>8}", c.method, c.sigma, c.mean_ospat, c.mean_abs_card_err, c.non_continuous);
    }
    println!("results in {}", cfg.out.display());
    Ok(())
}

fn replay_log(cfg: &ExperimentConfig, log: &PathBuf, out: Option<&PathBuf>) -> Result<()> {
    let method = cfg.methods[0];
    let sensors: Vec<SensorModel> = cfg.scenario.sensors.iter().map(|s| s.model.clone()).collect();
    let file = File::open(log).map_err(io(log))?;
    let rows = replay(BufReader::new(file), &sensors, &cfg.filter_for(method))?;
    match out {
        Some(path) => {
            let file = File::create(path).map_err(io(path))?;
            write_extraction(BufWriter::new(file), &rows)
        }
        None => write_extraction(std::io::stdout().lock(), &rows),
    }
}

fn metrics(cfg: &ExperimentConfig) -> Result<()> {
    let path = cfg.out.join("results.csv");
    let file = File::open(&path).map_err(io(&path))?;
    println!("{:<6} {:>6} {:>10}", "method", "sigma", "ospat");
    for (method, sigma, ospat) in summarize_results_csv(BufReader::new(file))? {
        println!("{method:<6} {sigma:>6} {ospat:>10.4}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, trial } => load(common).and_then(|cfg| simulate(&cfg, *trial)),
        Command::Run { common, trials } => load(common).and_then(|mut cfg| {
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            run(&cfg)
        }),
        Command::Replay { common, log } => load(common).and_then(|cfg| replay_log(&cfg, log, common.out.as_ref())),
        Command::Metrics { common } => load(common).and_then(|cfg| metrics(&cfg)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
