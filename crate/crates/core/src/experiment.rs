//! Monte-Carlo experiment driver and log replay.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxState, RefPoint};
use crate::likelihood::{likelihood_max, likelihood_mh, HypothesisWeights, Measurement, MeasurementModel};
use crate::lmb::{FilterConfig, LmbFilter, SensorModel};
use crate::metrics::{continuity_count, mean, median, ospat_frame, LabelMap, OspatParams, RunStats};
use crate::mixture::{GaussianMixture, ReductionParams};
use crate::motion::{predict_component, ProcessNoise, UtParams};
use crate::sim::{generate_trial, generate_truth, without_ref_points, Fig2Scenario, GroundTruthFrame, ScenarioConfig};

/// Measurements closer in time than this form one scan.
pub const SCAN_BUCKET: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<MeasurementModel>,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub out: PathBuf,
    pub jobs: usize,
    pub scenario: ScenarioConfig,
    pub filter: FilterConfig,
    pub ospat: OspatParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: MeasurementModel::ALL.to_vec(),
            sigmas: vec![0.5, 1.0, 1.5, 2.0],
            trials: 25,
            out: PathBuf::from("results"),
            jobs: 1,
            scenario: ScenarioConfig::default(),
            filter: FilterConfig::default(),
            ospat: OspatParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.sigmas.is_empty() {
            return Err(Error::Config("methods and sigmas must not be empty".into()));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("every sigma must be positive".into()));
        }
        self.scenario.validate()?;
        self.filter.validate()?;
        self.ospat.validate()
    }

    pub fn scenario_at(&self, sigma: f64) -> ScenarioConfig {
        ScenarioConfig { sigma, ..self.scenario.clone() }
    }

    pub fn filter_for(&self, method: MeasurementModel) -> FilterConfig {
        FilterConfig { model: method, ..self.filter.clone() }
    }
}

/// Runs the filter over one simulated trial.
pub fn run_trial(
    scenario: &ScenarioConfig,
    truth: &[GroundTruthFrame],
    filter: &FilterConfig,
    ospat: &OspatParams,
    trial: usize,
) -> Result<RunStats> {
    let scans = generate_trial(scenario, truth, trial);
    let mut lmb = LmbFilter::new(filter.clone())?;
    let mut labels = LabelMap::default();
    let mut history = Vec::with_capacity(truth.len());
    let mut stats = RunStats::default();
    for (frame, per_sensor) in truth.iter().zip(scans) {
        let input: Vec<(SensorModel, Vec<Measurement>)> = scenario
            .sensors
            .iter()
            .zip(per_sensor)
            .map(|(s, zs)| {
                let zs = if filter.model.uses_reported_ref_point() { zs } else { without_ref_points(&zs) };
                (s.model.clone(), zs)
            })
            .collect();
        let report = lmb.step(frame.timestamp, &input)?;
        stats.update_times.extend(report.update_times.iter().map(|d| d.as_secs_f64()));
        stats.cycle_times.push(report.cycle_time.as_secs_f64());
        stats.components.extend(report.raw_components_per_track);
        let t: Vec<(usize, Vector2<f64>)> = frame.objects.iter().map(|(id, s)| (*id, Vector2::new(s.x, s.y))).collect();
        let e: Vec<_> = report.estimates.iter().map(|(l, s)| (*l, Vector2::new(s.x, s.y))).collect();
        let score = ospat_frame(&t, &e, ospat, &mut labels);
        stats.ospat.push(score.error);
        stats.card_err.push(e.len() as i64 - t.len() as i64);
        history.push(score.pairs);
    }
    let ids: Vec<usize> = scenario.vehicles.iter().map(|v| v.id).collect();
    stats.continuity = continuity_count(&ids, &history);
    Ok(stats)
}

/// All trials of one (method, sigma) cell, ordered by trial index.
pub fn run_cell(cfg: &ExperimentConfig, method: MeasurementModel, sigma: f64) -> Result<Vec<RunStats>> {
    let scenario = cfg.scenario_at(sigma);
    let truth = generate_truth(&scenario);
    let filter = cfg.filter_for(method);
    let run = |trial: usize| run_trial(&scenario, &truth, &filter, &cfg.ospat, trial);
    if cfg.jobs <= 1 {
        return (0..cfg.trials).map(run).collect();
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| (0..cfg.trials).into_par_iter().map(run).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: MeasurementModel,
    pub sigma: f64,
    pub trials: usize,
    pub mean_ospat: f64,
    pub mean_abs_card_err: f64,
    pub non_continuous: usize,
    pub missed_trajectories: usize,
    pub mean_components: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub method: MeasurementModel,
    pub sigma: f64,
    pub median_update_ms: f64,
    pub mean_update_ms: f64,
    pub median_cycle_ms: f64,
    pub mean_cycle_ms: f64,
}

pub fn summarize(method: MeasurementModel, sigma: f64, runs: &[RunStats]) -> (CellSummary, CellTiming) {
    let ospat: Vec<f64> = runs.iter().flat_map(|r| r.ospat.iter().copied()).collect();
    let card: Vec<f64> = runs.iter().flat_map(|r| r.card_err.iter().map(|c| c.abs() as f64)).collect();
    let comps: Vec<f64> = runs.iter().flat_map(|r| r.components.iter().copied()).collect();
    let times: Vec<f64> = runs.iter().flat_map(|r| r.update_times.iter().map(|t| t * 1e3)).collect();
    let cycles: Vec<f64> = runs.iter().flat_map(|r| r.cycle_times.iter().map(|t| t * 1e3)).collect();
    (
        CellSummary {
            method,
            sigma,
            trials: runs.len(),
            mean_ospat: mean(&ospat),
            mean_abs_card_err: mean(&card),
            non_continuous: runs.iter().map(|r| r.continuity.non_continuous).sum(),
            missed_trajectories: runs.iter().map(|r| r.continuity.missed).sum(),
            mean_components: mean(&comps),
        },
        CellTiming {
            method,
            sigma,
            median_update_ms: median(&times),
            mean_update_ms: mean(&times),
            median_cycle_ms: median(&cycles),
            mean_cycle_ms: mean(&cycles),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub cells: Vec<CellSummary>,
}

/// Runs the whole grid and writes `results.csv`, `summary.json`,
/// `ospat_vs_time.dat` and `timing.json` into `cfg.out`. Everything except
/// the timing file is a pure function of the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| io_error(&cfg.out, e))?;
    let results_path = cfg.out.join("results.csv");
    let mut csv = csv::Writer::from_path(&results_path).map_err(|e| Error::Config(format!("{}: {e}", results_path.display())))?;
    csv.write_record(["method", "sigma", "trial", "frame", "ospat", "card_err"]).map_err(csv_error)?;

    let mut cells = Vec::new();
    let mut timing = Vec::new();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let frames = cfg.scenario.frame_count();
    for &sigma in &cfg.sigmas {
        for &method in &cfg.methods {
            let runs = run_cell(cfg, method, sigma)?;
            for (trial, run) in runs.iter().enumerate() {
                for (frame, (o, c)) in run.ospat.iter().zip(&run.card_err).enumerate() {
                    csv.write_record([
                        method.as_str().to_string(),
                        sigma.to_string(),
                        trial.to_string(),
                        frame.to_string(),
                        format!("{o:.6}"),
                        c.to_string(),
                    ])
                    .map_err(csv_error)?;
                }
            }
            let curve = (0..frames).map(|k| mean(&runs.iter().map(|r| r.ospat[k]).collect::<Vec<_>>())).collect();
            curves.push((format!("{}_{}", method.as_str(), sigma), curve));
            let (summary, time) = summarize(method, sigma, &runs);
            cells.push(summary);
            timing.push(time);
        }
    }
    csv.flush().map_err(|e| io_error(&results_path, e))?;

    let summary = Summary { seed: cfg.scenario.seed, cells };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_json(&cfg.out.join("timing.json"), &timing)?;

    let dat_path = cfg.out.join("ospat_vs_time.dat");
    let mut dat = String::from("# time");
    for (name, _) in &curves {
        dat.push(' ');
        dat.push_str(name);
    }
    dat.push('\n');
    for k in 0..frames {
        dat.push_str(&format!("{:.3}", k as f64 * cfg.scenario.dt));
        for (_, c) in &curves {
            dat.push_str(&format!(" {:.6}", c[k]));
        }
        dat.push('\n');
    }
    fs::write(&dat_path, dat).map_err(|e| io_error(&dat_path, e))?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Mean OSPAT per (method, sigma) recomputed from a `results.csv`.
pub fn summarize_results_csv(input: impl std::io::Read) -> Result<Vec<(String, f64, f64)>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("results row {}: {e}", n + 1)))?;
        let parse = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("results row {}: bad column {}", n + 1, i + 1)))
        };
        let ospat = parse(4)?;
        parse(1)?;
        let key = (row[0].to_string(), row[1].to_string());
        let e = acc.entry(key).or_insert((0.0, 0));
        e.0 += ospat;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|((m, s), (sum, n))| (m, s.parse().unwrap_or(f64::NAN), sum / n as f64)).collect())
}

/// One extracted track at one scan time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRow {
    pub timestamp: f64,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub v: f64,
    pub a: f64,
    pub w: f64,
    pub l: f64,
    pub r: f64,
}

fn extraction_rows(filter: &LmbFilter, time: f64) -> Vec<ExtractionRow> {
    let threshold = filter.config().r_extract;
    filter
        .tracks()
        .iter()
        .filter(|t| t.r > threshold)
        .filter_map(|t| {
            let s = BoxState::from_vector(&t.mixture.best()?.mean, RefPoint::C);
            Some(ExtractionRow {
                timestamp: time,
                label: t.label.to_string(),
                x: s.x,
                y: s.y,
                phi: s.phi,
                phi_dot: s.phi_dot,
                v: s.v,
                a: s.a,
                w: s.w,
                l: s.l,
                r: t.r,
            })
        })
        .collect()
}

/// Scan time and one measurement list per sensor.
pub type ScanBatch = (f64, Vec<(SensorModel, Vec<Measurement>)>);

/// Groups time-ordered measurements into scans. Every bucket contains one
/// scan per configured sensor, in configuration order, possibly empty.
pub fn bucket_scans(measurements: Vec<Measurement>, sensors: &[SensorModel]) -> Result<Vec<ScanBatch>> {
    let mut out: Vec<ScanBatch> = Vec::new();
    for (n, z) in measurements.into_iter().enumerate() {
        let slot = sensors
            .iter()
            .position(|s| s.id == z.sensor_id)
            .ok_or_else(|| Error::InvalidMeasurement(format!("record {}: unknown sensor {}", n + 1, z.sensor_id)))?;
        let new_bucket = match out.last() {
            None => true,
            Some((t, _)) if z.timestamp < t - SCAN_BUCKET => {
                return Err(Error::InvalidMeasurement(format!(
                    "record {}: timestamp {} precedes previous scan at {}",
                    n + 1,
                    z.timestamp,
                    t
                )));
            }
            Some((t, _)) => z.timestamp - t >= SCAN_BUCKET,
        };
        if new_bucket {
            out.push((z.timestamp, sensors.iter().map(|s| (s.clone(), Vec::new())).collect()));
        }
        out.last_mut().expect("bucket exists").1[slot].1.push(z);
    }
    Ok(out)
}

/// Runs the filter over a measurement log and returns the per-scan extraction.
pub fn replay(log: impl BufRead, sensors: &[SensorModel], filter: &FilterConfig) -> Result<Vec<ExtractionRow>> {
    let measurements = crate::sim::read_log(log)?;
    let mut lmb = LmbFilter::new(filter.clone())?;
    let mut rows = Vec::new();
    for (time, mut scans) in bucket_scans(measurements, sensors)? {
        if !filter.model.uses_reported_ref_point() {
            for (_, zs) in &mut scans {
                *zs = without_ref_points(zs);
            }
        }
        lmb.step(time, &scans)?;
        rows.extend(extraction_rows(&lmb, time));
    }
    Ok(rows)
}

/// Same output as [`replay`] for measurements already in memory, indexed
/// `[frame][sensor]` with frame times `times`.
pub fn run_in_memory(
    times: &[f64],
    scans: &[Vec<Vec<Measurement>>],
    sensors: &[SensorModel],
    filter: &FilterConfig,
) -> Result<Vec<ExtractionRow>> {
    let mut lmb = LmbFilter::new(filter.clone())?;
    let mut rows = Vec::new();
    for (&time, per_sensor) in times.iter().zip(scans) {
        let input: Vec<(SensorModel, Vec<Measurement>)> = sensors
            .iter()
            .zip(per_sensor)
            .map(|(s, zs)| {
                let zs = if filter.model.uses_reported_ref_point() { zs.clone() } else { without_ref_points(zs) };
                (s.clone(), zs)
            })
            .collect();
        lmb.step(time, &input)?;
        rows.extend(extraction_rows(&lmb, time));
    }
    Ok(rows)
}

pub fn write_extraction(out: impl Write, rows: &[ExtractionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))
}

/// Single-track result of the corner-ambiguity scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Fig2Outcome {
    /// Corners chosen by MAX at each update (empty for other models).
    pub choices: Vec<RefPoint>,
    /// Posterior mass tagged with the true corner after the first update.
    pub true_corner_mass: f64,
    /// Distance of the estimated (w, l) from the truth after the last update.
    pub extent_error: f64,
    /// Distance of the estimated center from the truth after the last update.
    pub position_error: f64,
}

/// Tracks the single vehicle of a [`Fig2Scenario`] with one model, without
/// data association (every measurement belongs to the vehicle).
pub fn run_fig2(
    scn: &Fig2Scenario,
    model: MeasurementModel,
    true_corner: RefPoint,
    noise: &ProcessNoise,
    ut: &UtParams,
    reduction: &ReductionParams,
) -> Result<Fig2Outcome> {
    let mut mix = GaussianMixture::single(scn.prior_mean, scn.prior_cov);
    let mut time = 0.0;
    let mut choices = Vec::new();
    let mut true_corner_mass = 0.0;
    for (k, z) in scn.measurements.iter().enumerate() {
        let dt = z.timestamp - time;
        time = z.timestamp;
        let predicted = mix.components().iter().map(|c| predict_component(c, dt, noise, ut)).collect::<Result<Vec<_>>>()?;
        mix = GaussianMixture::new(predicted);
        let posterior = match model {
            MeasurementModel::Max => {
                let (res, zeta) = likelihood_max(&mix, z)?;
                choices.push(zeta);
                res.posterior
            }
            MeasurementModel::Meas => {
                let known = Measurement { ref_point: Some(true_corner), ..z.clone() };
                likelihood_mh(&mix, &known, &HypothesisWeights::delta(true_corner))?.posterior
            }
            MeasurementModel::Mh | MeasurementModel::Mhc => {
                let res = likelihood_mh(&mix, z, &HypothesisWeights::uniform(&RefPoint::CORNERS))?;
                if model == MeasurementModel::Mhc {
                    crate::gate::gate_mixture(&res, &crate::gate::ConstraintSet::default()).posterior
                } else {
                    res.posterior
                }
            }
        };
        if k == 0 {
            true_corner_mass = posterior.tag_mass(true_corner);
        }
        mix = posterior.reduce(reduction);
    }
    let best = mix.best().ok_or(Error::NonFinite("empty posterior"))?;
    let truth = scn.truth.last().ok_or(Error::NonFinite("empty scenario"))?;
    let est = BoxState::from_vector(&best.mean, RefPoint::C);
    Ok(Fig2Outcome {
        choices,
        true_corner_mass,
        extent_error: ((est.w - truth.w).powi(2) + (est.l - truth.l).powi(2)).sqrt(),
        position_error: ((est.x - truth.x).powi(2) + (est.y - truth.y).powi(2)).sqrt(),
    })
}
