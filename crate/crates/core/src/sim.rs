//! Scenario simulation: ground-truth trajectories, corner measurements,
//! clutter, and a line-delimited measurement log.

use std::io::{BufRead, Write};

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxState, FeatureMask, RefPoint, StateCovariance, StateVector};
use crate::likelihood::Measurement;
use crate::lmb::SensorModel;
use crate::motion::ctra_transition;

/// Initial condition of a simulated vehicle; the motion is CTRA with the
/// given constant yaw rate and acceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub speed: f64,
    #[serde(default)]
    pub accel: f64,
    pub width: f64,
    pub length: f64,
}

impl VehicleSpec {
    pub fn initial_state(&self) -> StateVector {
        StateVector::from([self.x, self.y, self.heading, self.yaw_rate, self.speed, self.accel, self.width, self.length])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSetup {
    #[serde(flatten)]
    pub model: SensorModel,
    /// Mounting position; the longitudinal noise axis points from here to the object.
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub dt: f64,
    pub vehicles: Vec<VehicleSpec>,
    pub sensors: Vec<SensorSetup>,
    /// Longitudinal noise std in m; lateral std is half of it.
    pub sigma: f64,
    pub seed: u64,
    pub mc_trials: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::three_vehicles(2.0)
    }
}

impl ScenarioConfig {
    /// Three vehicles in a 60 m x 20 m area: two straight movers in opposite
    /// directions and one turning vehicle, watched by three corner sensors.
    /// Start poses are digitized values; the -3.141 heading is not meant as -pi.
    #[allow(clippy::approx_constant)]
    pub fn three_vehicles(sigma: f64) -> Self {
        let sensor =
            |id: usize, x: f64, y: f64| SensorSetup { model: SensorModel { id, ..Default::default() }, position: [x, y] };
        ScenarioConfig {
            duration: 5.0,
            dt: 0.1,
            vehicles: vec![
                VehicleSpec {
                    id: 0,
                    x: -21.0,
                    y: 2.25,
                    heading: 0.0,
                    yaw_rate: 0.0,
                    speed: 5.0,
                    accel: 0.0,
                    width: 1.8,
                    length: 4.5,
                },
                VehicleSpec {
                    id: 1,
                    x: 11.0,
                    y: 4.25,
                    heading: -3.141,
                    yaw_rate: 0.0,
                    speed: 4.0,
                    accel: 0.0,
                    width: 2.0,
                    length: 5.0,
                },
                VehicleSpec {
                    id: 2,
                    x: -15.0,
                    y: -7.0,
                    heading: 0.75,
                    yaw_rate: -0.19,
                    speed: 6.25,
                    accel: 0.0,
                    width: 1.9,
                    length: 4.7,
                },
            ],
            sensors: vec![sensor(0, -30.0, 10.0), sensor(1, -30.0, -10.0), sensor(2, 30.0, -10.0)],
            sigma,
            seed: 20200101,
            mc_trials: 100,
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration >= 0.0) {
            return Err(Error::Config("scenario dt must be positive and duration non-negative".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        for v in &self.vehicles {
            if !(v.width > 0.0 && v.length > 0.0) {
                return Err(Error::Config(format!("vehicle {}: extent must be positive", v.id)));
            }
        }
        for s in &self.sensors {
            s.model.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub timestamp: f64,
    pub objects: Vec<(usize, BoxState)>,
}

pub fn generate_truth(cfg: &ScenarioConfig) -> Vec<GroundTruthFrame> {
    let n = cfg.frame_count();
    let mut states: Vec<StateVector> = cfg.vehicles.iter().map(VehicleSpec::initial_state).collect();
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            for s in &mut states {
                *s = ctra_transition(s, cfg.dt);
            }
        }
        frames.push(GroundTruthFrame {
            timestamp: k as f64 * cfg.dt,
            objects: cfg.vehicles.iter().zip(&states).map(|(v, s)| (v.id, BoxState::from_vector(s, RefPoint::C))).collect(),
        });
    }
    frames
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one Monte-Carlo trial; independent of the method under test.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    splitmix64(splitmix64(base_seed) ^ trial as u64)
}

/// Random stream for one (trial, sensor, frame) triple.
pub fn substream(trial_seed: u64, sensor: usize, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(((sensor as u64) << 32) | frame as u64);
    rng
}

/// Measurement noise of a sensor at `target`: `diag(sigma^2, (sigma/2)^2)`
/// in the frame whose first axis points from the sensor to the target.
pub fn sensor_noise_cov(sensor_pos: [f64; 2], target: Vector2<f64>, sigma: f64) -> Matrix2<f64> {
    let d = target - Vector2::new(sensor_pos[0], sensor_pos[1]);
    let u = if d.norm() > 1e-9 { d / d.norm() } else { Vector2::new(1.0, 0.0) };
    let lateral = Vector2::new(-u.y, u.x);
    u * u.transpose() * sigma * sigma + lateral * lateral.transpose() * (sigma * 0.5).powi(2)
}

/// All measurements of one sensor for every frame of one trial.
///
/// Every measurement carries the reference point it was generated from
/// (clutter gets a random one); strip it with [`without_ref_points`] for
/// methods that must not see it.
pub fn generate_measurements(
    truth: &[GroundTruthFrame],
    sensor: &SensorSetup,
    sigma: f64,
    trial_seed: u64,
) -> Vec<Vec<Measurement>> {
    let model = &sensor.model;
    let clutter = (model.clutter_rate > 0.0).then(|| Poisson::new(model.clutter_rate).expect("positive rate"));
    let [x0, x1, y0, y1] = model.clutter_region;
    truth
        .iter()
        .enumerate()
        .map(|(k, frame)| {
            let mut rng = substream(trial_seed, model.id, k);
            let mut out = Vec::new();
            for (_, state) in &frame.objects {
                let detected = rng.gen::<f64>() < model.p_detect;
                let zeta = RefPoint::CORNERS[rng.gen_range(0..4)];
                let cov = sensor_noise_cov(sensor.position, Vector2::new(state.x, state.y), sigma);
                let noise = noisy_offset(&cov, &mut rng);
                if detected {
                    let z = state.point(zeta) + noise;
                    out.push(Measurement::position(z, cov, Some(zeta), model.id, frame.timestamp).expect("valid sensor noise"));
                }
            }
            let n_clutter = clutter.map_or(0, |d| d.sample(&mut rng) as usize);
            for _ in 0..n_clutter {
                let p = Vector2::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
                let zeta = RefPoint::CORNERS[rng.gen_range(0..4)];
                let cov = sensor_noise_cov(sensor.position, p, sigma);
                out.push(Measurement::position(p, cov, Some(zeta), model.id, frame.timestamp).expect("valid sensor noise"));
            }
            out
        })
        .collect()
}

fn noisy_offset(cov: &Matrix2<f64>, rng: &mut impl Rng) -> Vector2<f64> {
    let chol = cov.cholesky().expect("noise covariance is positive definite");
    let n = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
    chol.l() * n
}

pub fn without_ref_points(scan: &[Measurement]) -> Vec<Measurement> {
    scan.iter().map(|z| Measurement { ref_point: None, ..z.clone() }).collect()
}

/// Measurements of one trial, indexed `[frame][sensor]`.
pub fn generate_trial(cfg: &ScenarioConfig, truth: &[GroundTruthFrame], trial: usize) -> Vec<Vec<Vec<Measurement>>> {
    let seed = trial_seed(cfg.seed, trial);
    let per_sensor: Vec<Vec<Vec<Measurement>>> =
        cfg.sensors.iter().map(|s| generate_measurements(truth, s, cfg.sigma, seed)).collect();
    (0..truth.len()).map(|k| per_sensor.iter().map(|s| s[k].clone()).collect()).collect()
}

/// Single-vehicle scenario where one corner is measured under heavy
/// lateral noise, so that a hard corner decision can flip to its neighbour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fig2Config {
    pub width: f64,
    pub length: f64,
    pub speed: f64,
    pub dt: f64,
    pub steps: usize,
    /// Along-track noise std, m.
    pub sigma_long: f64,
    /// Cross-track noise std, m.
    pub sigma_lat: f64,
    pub corner: RefPoint,
    /// Prior std of the center position, m.
    pub prior_position_std: f64,
    /// Prior std of width and length, m.
    pub prior_extent_std: f64,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Fig2Config {
            width: 2.0,
            length: 4.0,
            speed: 5.0,
            dt: 1.0,
            steps: 3,
            sigma_long: 0.3,
            sigma_lat: 1.5,
            corner: RefPoint::FL,
            prior_position_std: 0.1f64.sqrt(),
            prior_extent_std: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig2Scenario {
    pub prior_mean: StateVector,
    pub prior_cov: StateCovariance,
    /// True states at each measurement time.
    pub truth: Vec<BoxState>,
    pub measurements: Vec<Measurement>,
}

impl Fig2Config {
    fn prior(&self) -> (StateVector, StateCovariance) {
        let mean = StateVector::from([0.0, 0.0, 0.0, 0.0, self.speed, 0.0, self.width, self.length]);
        let cov = StateCovariance::from_diagonal(&StateVector::from([
            self.prior_position_std.powi(2),
            self.prior_position_std.powi(2),
            0.01,
            0.01,
            0.25,
            0.1,
            self.prior_extent_std.powi(2),
            self.prior_extent_std.powi(2),
        ]));
        (mean, cov)
    }

    fn truth(&self) -> Vec<BoxState> {
        let (mean, _) = self.prior();
        (1..=self.steps)
            .map(|k| {
                let mut s = mean;
                s[0] = self.speed * self.dt * k as f64;
                BoxState::from_vector(&s, RefPoint::C)
            })
            .collect()
    }

    fn noise_cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.sigma_long.powi(2), 0.0, 0.0, self.sigma_lat.powi(2))
    }
}

/// One random draw of the single-vehicle scenario.
pub fn fig2_regression(cfg: &Fig2Config, seed: u64) -> Fig2Scenario {
    let (prior_mean, prior_cov) = cfg.prior();
    let truth = cfg.truth();
    let cov = cfg.noise_cov();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let measurements = truth
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let z = s.point(cfg.corner) + noisy_offset(&cov, &mut rng);
            Measurement::position(z, cov, None, 0, (k + 1) as f64 * cfg.dt).expect("valid noise")
        })
        .collect();
    Fig2Scenario { prior_mean, prior_cov, truth, measurements }
}

/// The measurement sequence drawn in the illustration of the failure case.
pub fn fig2_illustrated(cfg: &Fig2Config) -> Fig2Scenario {
    let (prior_mean, prior_cov) = cfg.prior();
    let cov = cfg.noise_cov();
    let points = [(7.0, -0.1), (12.0, 0.1), (17.0, 0.8)];
    let measurements = points
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            Measurement::position(Vector2::new(x, y), cov, None, 0, (k + 1) as f64 * cfg.dt).expect("valid noise")
        })
        .collect();
    Fig2Scenario { prior_mean, prior_cov, truth: cfg.truth(), measurements }
}

/// One line of a measurement log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub timestamp: f64,
    pub sensor_id: usize,
    pub mean: Vec<f64>,
    /// Row-major.
    pub cov: Vec<f64>,
    /// State indices of the measured features.
    pub mask: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_point: Option<RefPoint>,
}

impl From<&Measurement> for MeasurementRecord {
    fn from(z: &Measurement) -> Self {
        let d = z.dim();
        MeasurementRecord {
            timestamp: z.timestamp,
            sensor_id: z.sensor_id,
            mean: z.mean.iter().copied().collect(),
            cov: (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| z.cov[(r, c)]).collect(),
            mask: z.mask.indices().collect(),
            ref_point: z.ref_point,
        }
    }
}

impl MeasurementRecord {
    pub fn to_measurement(&self) -> Result<Measurement> {
        let mask = FeatureMask::from_indices(&self.mask)?;
        let d = mask.dim();
        if self.cov.len() != d * d {
            return Err(Error::Dimension { expected: d * d, got: self.cov.len() });
        }
        Measurement::new(
            nalgebra::DVector::from_column_slice(&self.mean),
            nalgebra::DMatrix::from_row_slice(d, d, &self.cov),
            mask,
            self.ref_point,
            self.sensor_id,
            self.timestamp,
        )
    }
}

/// Writes one JSON record per line.
pub fn write_log<'a>(out: &mut impl Write, measurements: impl IntoIterator<Item = &'a Measurement>) -> std::io::Result<()> {
    for z in measurements {
        serde_json::to_writer(&mut *out, &MeasurementRecord::from(z))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a log written by [`write_log`]. Blank lines are skipped; errors
/// name the 1-based record (line) number.
pub fn read_log(input: impl BufRead) -> Result<Vec<Measurement>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidMeasurement(format!("record {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MeasurementRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidMeasurement(format!("record {}: {e}", n + 1)))?;
        let z = record.to_measurement().map_err(|e| Error::InvalidMeasurement(format!("record {}: {e}", n + 1)))?;
        out.push(z);
    }
    Ok(out)
}
