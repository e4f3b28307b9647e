//! Labeled multi-Bernoulli filter cycle.
//!
//! Each track is a Bernoulli component: an existence probability and a
//! Gaussian-mixture spatial density in the center frame. A sensor scan is
//! processed by splitting tracks and measurements into independent groups,
//! enumerating the association maps within each group and collapsing the
//! result back to per-track marginals.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::murty_k_best;
use crate::error::{Error, Result};
use crate::gate::{gate_mixture, ConstraintSet};
use crate::geometry::{convert_ref_point, idx, BoxState, RefPoint, StateCovariance, StateVector};
use crate::likelihood::{
    likelihood_max, likelihood_mh, min_mahalanobis, HypothesisWeights, Measurement, MeasurementModel, UpdateResult,
};
use crate::mixture::{GaussianComponent, GaussianMixture, ReductionParams};
use crate::motion::{predict_component, ProcessNoise, UtParams};

/// Lower bound on the clutter intensity so that clutter-free sensors still
/// produce finite association weights.
pub const CLUTTER_DENSITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub birth_step: u64,
    pub index: u32,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.birth_step, self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrack {
    pub label: Label,
    /// Existence probability.
    pub r: f64,
    pub mixture: GaussianMixture,
    pub last_update: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub id: usize,
    pub p_detect: f64,
    /// Expected number of clutter measurements per scan.
    pub clutter_rate: f64,
    /// `[x_min, x_max, y_min, y_max]`
    pub clutter_region: [f64; 4],
    pub reports_ref_point: bool,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            id: 0,
            p_detect: 0.95,
            clutter_rate: 0.1,
            clutter_region: [-30.0, 30.0, -10.0, 10.0],
            reports_ref_point: false,
        }
    }
}

impl SensorModel {
    pub fn region_area(&self) -> f64 {
        let [x0, x1, y0, y1] = self.clutter_region;
        (x1 - x0) * (y1 - y0)
    }

    /// Uniform clutter intensity per square metre.
    pub fn clutter_density(&self) -> f64 {
        (self.clutter_rate / self.region_area()).max(CLUTTER_DENSITY_FLOOR)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_detect > 0.0 && self.p_detect <= 1.0) {
            return Err(Error::Config(format!("sensor {}: p_detect must lie in (0, 1]", self.id)));
        }
        if !(self.clutter_rate >= 0.0) || !(self.region_area() > 0.0) {
            return Err(Error::Config(format!("sensor {}: clutter rate and region must be positive", self.id)));
        }
        Ok(())
    }
}

/// Priors for tracks spawned from unexplained measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BirthParams {
    /// Expected number of births per scan.
    pub lambda: f64,
    pub r_max: f64,
    /// Measurements explained by existing tracks with at least this mass spawn nothing.
    pub max_association_mass: f64,
    pub width: f64,
    pub length: f64,
    pub width_std: f64,
    pub length_std: f64,
    /// Heading hypotheses, rad.
    pub headings: Vec<f64>,
    pub heading_std: f64,
    pub yaw_rate_std: f64,
    pub speed: f64,
    pub speed_std: f64,
    pub accel_std: f64,
}

impl Default for BirthParams {
    fn default() -> Self {
        BirthParams {
            lambda: 0.1,
            r_max: 0.1,
            max_association_mass: 0.5,
            width: 2.0,
            length: 4.5,
            width_std: 0.5,
            length_std: 1.0,
            headings: vec![0.0, FRAC_PI_2, PI, -FRAC_PI_2],
            heading_std: 0.4,
            yaw_rate_std: 0.3,
            speed: 0.0,
            speed_std: 5.0,
            accel_std: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub model: MeasurementModel,
    pub p_survival: f64,
    pub process_noise: ProcessNoise,
    pub ut: UtParams,
    pub reduction: ReductionParams,
    pub constraints: ConstraintSet,
    /// Mahalanobis pre-gate (not squared).
    pub gate_threshold: f64,
    /// Groups with at most this many feasible pairs are enumerated exhaustively.
    pub exhaustive_pairs: usize,
    /// Ranked-assignment fallback for larger groups; `None` turns the
    /// fallback off and makes oversized groups an error.
    pub k_best: Option<usize>,
    pub birth: BirthParams,
    pub r_extract: f64,
    pub r_prune: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            model: MeasurementModel::Mh,
            p_survival: 0.99,
            process_noise: ProcessNoise::default(),
            ut: UtParams::default(),
            reduction: ReductionParams::default(),
            constraints: ConstraintSet::default(),
            gate_threshold: 5.0,
            exhaustive_pairs: 12,
            k_best: Some(100),
            birth: BirthParams::default(),
            r_extract: 0.5,
            r_prune: 1e-3,
        }
    }
}

impl FilterConfig {
    pub fn with_model(model: MeasurementModel) -> Self {
        FilterConfig { model, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_survival) {
            return Err(Error::Config("p_survival must lie in [0, 1]".into()));
        }
        if !(self.gate_threshold > 0.0) {
            return Err(Error::Config("gate_threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.reduction.prune_threshold) {
            return Err(Error::Config("prune_threshold must lie in [0, 1)".into()));
        }
        if self.reduction.max_components == 0 {
            return Err(Error::Config("max_components must be at least 1".into()));
        }
        if self.birth.headings.is_empty() {
            return Err(Error::Config("birth needs at least one heading hypothesis".into()));
        }
        self.ut.validate()?;
        self.constraints.validate()
    }
}

/// Survival and CTRA prediction of every track.
pub fn predict(
    tracks: &[LabeledTrack],
    dt: f64,
    p_survival: f64,
    noise: &ProcessNoise,
    ut: &UtParams,
) -> Result<Vec<LabeledTrack>> {
    tracks
        .iter()
        .map(|t| {
            let comps = t.mixture.components().iter().map(|c| predict_component(c, dt, noise, ut)).collect::<Result<Vec<_>>>()?;
            Ok(LabeledTrack {
                label: t.label,
                r: p_survival * t.r,
                mixture: GaussianMixture::new(comps),
                last_update: t.last_update,
            })
        })
        .collect()
}

/// `feasible[i][j]` is true when measurement `j` lies within `threshold`
/// Mahalanobis units of some component/reference point of track `i`.
pub fn gate_associations(tracks: &[LabeledTrack], measurements: &[Measurement], threshold: f64) -> Vec<Vec<bool>> {
    let limit = threshold * threshold;
    tracks
        .iter()
        .map(|t| measurements.iter().map(|z| threshold.is_infinite() || min_mahalanobis(&t.mixture, z) <= limit).collect())
        .collect()
}

/// Per-pair update through the configured measurement model.
pub fn measurement_update(
    mixture: &GaussianMixture,
    z: &Measurement,
    model: MeasurementModel,
    constraints: &ConstraintSet,
) -> Result<UpdateResult> {
    match model {
        MeasurementModel::Max => Ok(likelihood_max(mixture, z)?.0),
        MeasurementModel::Mh => likelihood_mh(mixture, z, &HypothesisWeights::for_measurement(z)),
        MeasurementModel::Meas => {
            if z.ref_point.is_none() {
                return Err(Error::MissingRefPoint);
            }
            likelihood_mh(mixture, z, &HypothesisWeights::for_measurement(z))
        }
        MeasurementModel::Mhc => {
            let res = likelihood_mh(mixture, z, &HypothesisWeights::for_measurement(z))?;
            Ok(gate_mixture(&res, constraints))
        }
    }
}

/// One association map restricted to a group: `assign[k]` is the group-local
/// measurement index for the k-th track, or `None` for a miss.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociationMap {
    pub assign: Vec<Option<usize>>,
    pub log_weight: f64,
}

/// Result of one sensor update.
#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub tracks: Vec<LabeledTrack>,
    /// Probability that each measurement was generated by an existing track.
    pub association_mass: Vec<f64>,
    /// Posterior components per track before mixture reduction.
    pub raw_components: Vec<usize>,
}

struct Group {
    tracks: Vec<usize>,
    measurements: Vec<usize>,
}

fn partition(feasible: &[Vec<bool>], n_tracks: usize, n_meas: usize) -> Vec<Group> {
    // Union-find over tracks (0..n) and measurements (n..n+m).
    let mut parent: Vec<usize> = (0..n_tracks + n_meas).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for (i, row) in feasible.iter().enumerate() {
        for (j, &ok) in row.iter().enumerate() {
            if ok {
                let a = find(&mut parent, i);
                let b = find(&mut parent, n_tracks + j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
    for i in 0..n_tracks {
        let root = find(&mut parent, i);
        groups.entry(root).or_insert_with(|| Group { tracks: vec![], measurements: vec![] }).tracks.push(i);
    }
    for j in 0..n_meas {
        let root = find(&mut parent, n_tracks + j);
        if let Some(g) = groups.get_mut(&root) {
            g.measurements.push(j);
        }
    }
    groups.into_values().collect()
}

/// Scores of one group: `assigned[k][l]` is the log weight of track `k`
/// taking measurement `l` (None if infeasible), `missed[k]` of a miss.
struct GroupScores {
    assigned: Vec<Vec<Option<f64>>>,
    missed: Vec<f64>,
}

fn enumerate_exhaustive(scores: &GroupScores) -> Vec<AssociationMap> {
    let n = scores.missed.len();
    let m = scores.assigned.first().map_or(0, |r| r.len());
    let mut out = Vec::new();
    let mut assign = vec![None; n];
    let mut used = vec![false; m];
    fn rec(
        k: usize,
        acc: f64,
        scores: &GroupScores,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        out: &mut Vec<AssociationMap>,
    ) {
        if k == assign.len() {
            out.push(AssociationMap { assign: assign.clone(), log_weight: acc });
            return;
        }
        assign[k] = None;
        rec(k + 1, acc + scores.missed[k], scores, assign, used, out);
        for l in 0..used.len() {
            if let (false, Some(s)) = (used[l], scores.assigned[k][l]) {
                used[l] = true;
                assign[k] = Some(l);
                rec(k + 1, acc + s, scores, assign, used, out);
                used[l] = false;
            }
        }
        assign[k] = None;
    }
    rec(0, 0.0, scores, &mut assign, &mut used, &mut out);
    out
}

fn enumerate_k_best(scores: &GroupScores, k: usize) -> Vec<AssociationMap> {
    let n = scores.missed.len();
    let m = scores.assigned.first().map_or(0, |r| r.len());
    // Columns: measurements, then one private miss column per track.
    let cost = DMatrix::from_fn(n, m + n, |i, j| {
        if j < m {
            scores.assigned[i][j].map_or(f64::INFINITY, |s| -s)
        } else if j - m == i {
            -scores.missed[i]
        } else {
            f64::INFINITY
        }
    });
    murty_k_best(&cost, k)
        .into_iter()
        .map(|a| AssociationMap { assign: a.cols.iter().map(|&c| (c < m).then_some(c)).collect(), log_weight: -a.cost })
        .collect()
}

fn ln_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Measurement update of all tracks with one sensor scan.
pub fn update(
    tracks: &[LabeledTrack],
    measurements: &[Measurement],
    sensor: &SensorModel,
    config: &FilterConfig,
) -> Result<UpdateOutcome> {
    let n = tracks.len();
    let m = measurements.len();
    let p_d = sensor.p_detect;
    let kappa = sensor.clutter_density();
    let feasible = gate_associations(tracks, measurements, config.gate_threshold);

    // Pairwise measurement updates, only where gated in.
    let mut pair: Vec<Vec<Option<UpdateResult>>> = vec![vec![None; m]; n];
    for i in 0..n {
        for j in 0..m {
            if feasible[i][j] {
                pair[i][j] = Some(measurement_update(&tracks[i].mixture, &measurements[j], config.model, &config.constraints)?);
            }
        }
    }

    let mut out_tracks = tracks.to_vec();
    let mut association_mass = vec![0.0; m];
    let mut raw_components = vec![0usize; n];
    let time = measurements.first().map(|z| z.timestamp);

    for group in partition(&feasible, n, m) {
        let mut order = group.tracks.clone();
        order.sort_by_key(|&i| tracks[i].label);
        let meas = &group.measurements;
        let scores = GroupScores {
            assigned: order
                .iter()
                .map(|&i| {
                    meas.iter()
                        .map(|&j| pair[i][j].as_ref().map(|res| ln_or_neg_inf(tracks[i].r * p_d * res.eta / kappa)))
                        .map(|s| s.filter(|v| v.is_finite()))
                        .collect()
                })
                .collect(),
            missed: order.iter().map(|&i| ln_or_neg_inf(1.0 - tracks[i].r * p_d)).collect(),
        };
        let pairs: usize = scores.assigned.iter().map(|r| r.iter().filter(|s| s.is_some()).count()).sum();
        let maps = if pairs <= config.exhaustive_pairs {
            enumerate_exhaustive(&scores)
        } else {
            match config.k_best {
                Some(k) => enumerate_k_best(&scores, k),
                None => return Err(Error::EnumerationBudget { pairs, budget: config.exhaustive_pairs }),
            }
        };
        let max_log = maps.iter().map(|a| a.log_weight).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = if max_log.is_finite() {
            let raw: Vec<f64> = maps.iter().map(|a| (a.log_weight - max_log).exp()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / maps.len() as f64; maps.len()]
        };

        for (k, &i) in order.iter().enumerate() {
            let track = &tracks[i];
            let mut beta_miss = 0.0;
            let mut beta = vec![0.0; meas.len()];
            for (map, w) in maps.iter().zip(&weights) {
                match map.assign[k] {
                    Some(l) => beta[l] += w,
                    None => beta_miss += w,
                }
            }
            let denom = 1.0 - track.r * p_d;
            let rho_miss = if denom > 0.0 { track.r * (1.0 - p_d) / denom } else { 0.0 };
            let r_new = (beta_miss * rho_miss + beta.iter().sum::<f64>()).clamp(0.0, 1.0);

            let mut comps: Vec<GaussianComponent> = Vec::new();
            let miss_mass = beta_miss * rho_miss;
            if miss_mass > 0.0 {
                comps.extend(
                    track.mixture.components().iter().map(|c| GaussianComponent { weight: c.weight * miss_mass, ..c.clone() }),
                );
            }
            let mut updated = false;
            for (l, &b) in beta.iter().enumerate() {
                let j = meas[l];
                association_mass[j] += b;
                if b > 0.0 {
                    if let Some(res) = &pair[i][j] {
                        updated = true;
                        comps.extend(
                            res.posterior.components().iter().map(|c| GaussianComponent { weight: c.weight * b, ..c.clone() }),
                        );
                    }
                }
            }
            raw_components[i] = comps.len();
            let mixture =
                if comps.is_empty() { track.mixture.clone() } else { GaussianMixture::new(comps).reduce(&config.reduction) };
            out_tracks[i] = LabeledTrack {
                label: track.label,
                r: r_new,
                mixture,
                last_update: if updated { time.unwrap_or(track.last_update) } else { track.last_update },
            };
        }
    }
    for m in &mut association_mass {
        *m = m.clamp(0.0, 1.0);
    }
    Ok(UpdateOutcome { tracks: out_tracks, association_mass, raw_components })
}

/// Sequential updates, one per sensor, in the given order.
pub fn multi_sensor_step(
    tracks: &[LabeledTrack],
    scans: &[(SensorModel, Vec<Measurement>)],
    config: &FilterConfig,
) -> Result<Vec<LabeledTrack>> {
    let mut current = tracks.to_vec();
    for (sensor, zs) in scans {
        current = update(&current, zs, sensor, config)?.tracks;
    }
    Ok(current)
}

/// Spatial birth density for one measurement: every candidate reference
/// point crossed with every heading hypothesis, moved to the center frame.
pub fn birth_mixture(z: &Measurement, params: &BirthParams) -> Result<GaussianMixture> {
    let candidates = z.candidate_ref_points();
    let rows: Vec<usize> = z.mask.indices().collect();
    let mut comps = Vec::with_capacity(candidates.len() * params.headings.len());
    for &zeta in &candidates {
        for &heading in &params.headings {
            let mut mean = StateVector::from([0.0, 0.0, heading, 0.0, params.speed, 0.0, params.width, params.length]);
            let mut var = StateVector::from([
                0.0,
                0.0,
                params.heading_std.powi(2),
                params.yaw_rate_std.powi(2),
                params.speed_std.powi(2),
                params.accel_std.powi(2),
                params.width_std.powi(2),
                params.length_std.powi(2),
            ]);
            let mut cov = StateCovariance::zeros();
            for (r, &si) in rows.iter().enumerate() {
                mean[si] = z.mean[r];
                var[si] = 0.0;
                for (c, &sj) in rows.iter().enumerate() {
                    cov[(si, sj)] = z.cov[(r, c)];
                }
            }
            for s in 0..var.len() {
                cov[(s, s)] += var[s];
            }
            let (m, p) = convert_ref_point(&mean, &cov, zeta, RefPoint::C)?;
            comps.push(GaussianComponent::new(1.0, m, p).with_tag(Some(zeta)));
        }
    }
    let mut mix = GaussianMixture::new(comps);
    if mix.components().iter().any(|c| c.mean[idx::PHI].is_nan()) {
        return Err(Error::NonFinite("birth mean"));
    }
    mix = GaussianMixture::new(mix.into_components());
    Ok(mix)
}

/// Hands out unique labels.
#[derive(Clone, Debug, Default)]
pub struct LabelAllocator {
    step: u64,
    next: u32,
}

impl LabelAllocator {
    pub fn begin_step(&mut self, step: u64) {
        if step != self.step {
            self.step = step;
            self.next = 0;
        }
    }

    pub fn next_label(&mut self) -> Label {
        let label = Label { birth_step: self.step, index: self.next };
        self.next += 1;
        label
    }
}

/// New tracks from measurements that existing tracks do not explain.
pub fn adaptive_birth(
    measurements: &[Measurement],
    association_mass: &[f64],
    params: &BirthParams,
    labels: &mut LabelAllocator,
) -> Result<Vec<LabeledTrack>> {
    let unexplained: Vec<f64> = association_mass.iter().map(|m| (1.0 - m).clamp(0.0, 1.0)).collect();
    let total: f64 = unexplained.iter().sum();
    let mut births = Vec::new();
    if total <= 0.0 {
        return Ok(births);
    }
    for (z, (&u, &mass)) in measurements.iter().zip(unexplained.iter().zip(association_mass)) {
        if u <= 0.0 || mass >= params.max_association_mass {
            continue;
        }
        let r = (params.lambda * u / total).min(params.r_max);
        births.push(LabeledTrack { label: labels.next_label(), r, mixture: birth_mixture(z, params)?, last_update: z.timestamp });
    }
    Ok(births)
}

/// Tracks with existence above `r_threshold`, reported by their heaviest component.
pub fn extract(tracks: &[LabeledTrack], r_threshold: f64) -> Vec<(Label, BoxState)> {
    tracks
        .iter()
        .filter(|t| t.r > r_threshold)
        .filter_map(|t| t.mixture.best().map(|c| (t.label, BoxState::from_vector(&c.mean, RefPoint::C))))
        .collect()
}

pub fn prune_tracks(tracks: Vec<LabeledTrack>, r_min: f64) -> Vec<LabeledTrack> {
    tracks.into_iter().filter(|t| t.r >= r_min).collect()
}

/// Timing and size statistics of one filter step.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    /// Time of each sensor update call.
    pub update_times: Vec<Duration>,
    /// Time of the whole step: prediction, all sensor updates, births and pruning.
    pub cycle_time: Duration,
    /// Mean posterior components per updated track, before reduction.
    pub raw_components_per_track: Vec<f64>,
    pub estimates: Vec<(Label, BoxState)>,
}

/// Stateful driver: predict, per-sensor update with births, prune, extract.
#[derive(Clone, Debug)]
pub struct LmbFilter {
    config: FilterConfig,
    tracks: Vec<LabeledTrack>,
    labels: LabelAllocator,
    step: u64,
    time: Option<f64>,
}

impl LmbFilter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.validate()?;
        Ok(LmbFilter { config, tracks: Vec::new(), labels: LabelAllocator::default(), step: 0, time: None })
    }

    pub fn with_tracks(config: FilterConfig, tracks: Vec<LabeledTrack>, time: f64) -> Result<Self> {
        let mut f = Self::new(config)?;
        f.tracks = tracks;
        f.time = Some(time);
        f.step = 1;
        Ok(f)
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[LabeledTrack] {
        &self.tracks
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    /// Processes all scans of one timestamp.
    pub fn step(&mut self, time: f64, scans: &[(SensorModel, Vec<Measurement>)]) -> Result<StepReport> {
        let cycle_start = Instant::now();
        if let Some(prev) = self.time {
            let dt = time - prev;
            if dt < 0.0 {
                return Err(Error::InvalidMeasurement(format!("scan at t={time} precedes filter time {prev}")));
            }
            if dt > 0.0 {
                let c = &self.config;
                self.tracks = predict(&self.tracks, dt, c.p_survival, &c.process_noise, &c.ut)?;
            }
        }
        self.labels.begin_step(self.step);
        let mut report = StepReport::default();
        for (sensor, zs) in scans {
            let start = Instant::now();
            let outcome = update(&self.tracks, zs, sensor, &self.config)?;
            report.update_times.push(start.elapsed());
            let updated: Vec<usize> = outcome.raw_components.iter().copied().filter(|&c| c > 0).collect();
            if !updated.is_empty() {
                report.raw_components_per_track.push(updated.iter().sum::<usize>() as f64 / updated.len() as f64);
            }
            self.tracks = outcome.tracks;
            let births = adaptive_birth(zs, &outcome.association_mass, &self.config.birth, &mut self.labels)?;
            self.tracks.extend(births);
        }
        self.tracks = prune_tracks(std::mem::take(&mut self.tracks), self.config.r_prune);
        self.time = Some(time);
        self.step += 1;
        report.cycle_time = cycle_start.elapsed();
        report.estimates = extract(&self.tracks, self.config.r_extract);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Vector2};

    fn track(label: u32, x: f64, y: f64, r: f64) -> LabeledTrack {
        let mean = StateVector::from([x, y, 0.0, 0.0, 5.0, 0.0, 2.0, 4.5]);
        let cov = StateCovariance::from_diagonal(&StateVector::from([0.2, 0.2, 0.01, 0.01, 0.5, 0.1, 0.05, 0.05]));
        LabeledTrack {
            label: Label { birth_step: 0, index: label },
            r,
            mixture: GaussianMixture::single(mean, cov),
            last_update: 0.0,
        }
    }

    fn corner(t: &LabeledTrack, zeta: RefPoint) -> Vector2<f64> {
        BoxState::from_vector(&t.mixture.components()[0].mean, RefPoint::C).point(zeta)
    }

    fn z_at(p: Vector2<f64>, var: f64) -> Measurement {
        Measurement::position(p, Matrix2::identity() * var, None, 0, 1.0).unwrap()
    }

    fn sensor(p_detect: f64, clutter_rate: f64) -> SensorModel {
        SensorModel { p_detect, clutter_rate, ..Default::default() }
    }

    #[test]
    fn predict_survival_and_motion() {
        let t = track(0, 0.0, 0.0, 0.5);
        let out = predict(std::slice::from_ref(&t), 0.1, 0.99, &ProcessNoise::zero(), &UtParams::default()).unwrap();
        assert_relative_eq!(out[0].r, 0.495);
        let out = predict(&[t], 1.0, 1.0, &ProcessNoise::zero(), &UtParams::default()).unwrap();
        assert_relative_eq!(out[0].r, 0.5);
        // Heading and yaw-rate uncertainty shorten the expected displacement slightly.
        let x = out[0].mixture.components()[0].mean[0];
        assert!(x < 5.0 && x > 4.95, "{x}");
    }

    #[test]
    fn gating_examples() {
        let t = track(0, 0.0, 0.0, 0.9);
        let near = z_at(corner(&t, RefPoint::FL), 0.1);
        let far = z_at(Vector2::new(300.0, 0.0), 0.1);
        let f = gate_associations(std::slice::from_ref(&t), &[near.clone(), far.clone()], 5.0);
        assert_eq!(f, vec![vec![true, false]]);
        let f = gate_associations(&[t], &[near, far], f64::INFINITY);
        assert_eq!(f, vec![vec![true, true]]);
    }

    #[test]
    fn missed_scan_bernoulli_update() {
        let t = track(0, 0.0, 0.0, 0.6);
        let cfg = FilterConfig::default();
        let out = update(std::slice::from_ref(&t), &[], &sensor(0.95, 0.1), &cfg).unwrap();
        let expected = 0.6 * 0.05 / (1.0 - 0.6 * 0.95);
        assert_relative_eq!(out.tracks[0].r, expected, epsilon = 1e-14);
        assert_eq!(out.tracks[0].mixture, t.mixture);
    }

    #[test]
    fn certain_detection_without_clutter_confirms() {
        let t = track(0, 0.0, 0.0, 0.5);
        let z = z_at(corner(&t, RefPoint::FR), 0.2);
        let cfg = FilterConfig {
            reduction: ReductionParams {
                prune_threshold: 0.0,
                merge_distance: 0.0,
                max_components: 100,
                isolate_hypotheses: false,
            },
            ..Default::default()
        };
        let out = update(std::slice::from_ref(&t), std::slice::from_ref(&z), &sensor(1.0, 0.0), &cfg).unwrap();
        assert_relative_eq!(out.tracks[0].r, 1.0, epsilon = 1e-9);
        let direct = measurement_update(&t.mixture, &z, MeasurementModel::Mh, &cfg.constraints).unwrap();
        assert_eq!(out.tracks[0].mixture.len(), direct.posterior.len());
        for (a, b) in out.tracks[0].mixture.components().iter().zip(direct.posterior.components()) {
            assert_relative_eq!(a.weight, b.weight, max_relative = 1e-9);
            assert_eq!(a.mean, b.mean);
        }
        assert_relative_eq!(out.association_mass[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn meas_mode_matches_mh_with_reported_corner() {
        let t = track(0, 0.0, 0.0, 0.7);
        let mut z = z_at(corner(&t, RefPoint::BL) + Vector2::new(0.2, -0.1), 0.3);
        z.ref_point = Some(RefPoint::BL);
        let mh =
            update(std::slice::from_ref(&t), &[z.clone()], &sensor(0.95, 0.1), &FilterConfig::with_model(MeasurementModel::Mh))
                .unwrap();
        let meas = update(&[t], &[z], &sensor(0.95, 0.1), &FilterConfig::with_model(MeasurementModel::Meas)).unwrap();
        assert_eq!(mh.tracks[0].r.to_bits(), meas.tracks[0].r.to_bits());
        assert_eq!(mh.tracks[0].mixture, meas.tracks[0].mixture);
    }

    #[test]
    fn birth_rule() {
        let z = z_at(Vector2::new(3.0, 4.0), 1.0);
        let mut labels = LabelAllocator::default();
        let params = BirthParams::default();
        let births = adaptive_birth(std::slice::from_ref(&z), &[0.0], &params, &mut labels).unwrap();
        assert_eq!(births.len(), 1);
        assert_relative_eq!(births[0].r, 0.1);
        assert_eq!(births[0].mixture.len(), 16);
        assert_relative_eq!(births[0].mixture.total_weight(), 1.0, epsilon = 1e-12);
        assert!(adaptive_birth(&[z], &[1.0], &params, &mut labels).unwrap().is_empty());
    }

    #[test]
    fn birth_with_known_corner_has_heading_hypotheses_only() {
        let mut z = z_at(Vector2::new(3.0, 4.0), 1.0);
        z.ref_point = Some(RefPoint::FL);
        let mix = birth_mixture(&z, &BirthParams::default()).unwrap();
        assert_eq!(mix.len(), 4);
        // Heading 0: the center sits half a length behind and half a width right of FL.
        let c = &mix.components()[0];
        assert_relative_eq!(c.mean[0], 3.0 - 2.25, epsilon = 1e-12);
        assert_relative_eq!(c.mean[1], 4.0 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn labels_are_unique() {
        let mut labels = LabelAllocator::default();
        labels.begin_step(3);
        let a = labels.next_label();
        let b = labels.next_label();
        labels.begin_step(4);
        let c = labels.next_label();
        assert_ne!(a, b);
        assert_eq!(c, Label { birth_step: 4, index: 0 });
    }

    #[test]
    fn extraction_and_pruning() {
        let mut t = track(0, 0.0, 0.0, 0.9);
        let low = track(1, 5.0, 0.0, 0.4);
        let mut second = t.mixture.components()[0].clone();
        second.mean[0] = 10.0;
        second.weight = 0.4;
        let mut first = t.mixture.components()[0].clone();
        first.weight = 0.6;
        t.mixture = GaussianMixture::new(vec![first, second]);
        let est = extract(&[t.clone(), low.clone()], 0.5);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].1.x, 0.0);

        let tiny = track(2, 0.0, 0.0, 1e-4);
        let kept = prune_tracks(vec![tiny, low], 1e-3);
        assert_eq!(kept.len(), 1);
        assert!(prune_tracks(vec![], 1e-3).is_empty());
    }

    #[test]
    fn oversized_group_without_fallback_errors() {
        let tracks: Vec<_> = (0..4).map(|i| track(i, 0.0, i as f64 * 0.1, 0.8)).collect();
        let zs: Vec<_> =
            (0..4).map(|k| z_at(corner(&tracks[0], RefPoint::FL) + Vector2::new(0.0, k as f64 * 0.1), 1.0)).collect();
        let cfg = FilterConfig { k_best: None, ..Default::default() };
        assert!(matches!(update(&tracks, &zs, &sensor(0.95, 0.1), &cfg), Err(Error::EnumerationBudget { .. })));
        let cfg = FilterConfig::default();
        let out = update(&tracks, &zs, &sensor(0.95, 0.1), &cfg).unwrap();
        assert_eq!(out.tracks.len(), 4);
    }
}
