//! OSPA-T style tracking error, track continuity and run statistics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::error::{Error, Result};
use crate::lmb::Label;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OspatParams {
    pub p: f64,
    pub c: f64,
    /// Penalty added to the base distance when labels disagree.
    pub alpha: f64,
}

impl Default for OspatParams {
    fn default() -> Self {
        OspatParams { p: 1.0, c: 10.0, alpha: 10.0 }
    }
}

impl OspatParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.c > 0.0 && self.alpha >= 0.0 && self.alpha <= self.c) {
            return Err(Error::Config("OSPAT needs p >= 1, c > 0 and 0 <= alpha <= c".into()));
        }
        Ok(())
    }
}

/// Truth-to-estimate label correspondence carried across frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelMap {
    map: BTreeMap<usize, Label>,
}

impl LabelMap {
    pub fn get(&self, truth: usize) -> Option<Label> {
        self.map.get(&truth).copied()
    }
}

/// Outcome of one frame: the error and the truth/estimate pairs matched
/// within the cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub error: f64,
    pub pairs: Vec<(usize, Label)>,
}

/// Error of one frame. The first time a truth object is matched its label
/// correspondence is fixed; later matches to another label pay `alpha` and
/// move the correspondence to the new label.
pub fn ospat_frame(
    truth: &[(usize, Vector2<f64>)],
    est: &[(Label, Vector2<f64>)],
    params: &OspatParams,
    labels: &mut LabelMap,
) -> FrameScore {
    let (n_t, n_e) = (truth.len(), est.len());
    let n = n_t.max(n_e);
    if n == 0 {
        return FrameScore { error: 0.0, pairs: Vec::new() };
    }
    let base = |i: usize, j: usize| -> (f64, f64) {
        let d = (truth[i].1 - est[j].1).norm();
        let mismatch = match labels.get(truth[i].0) {
            Some(l) if l != est[j].0 => params.alpha,
            _ => 0.0,
        };
        (d, (d + mismatch).min(params.c))
    };
    let truth_rows = n_t <= n_e;
    let (rows, cols) = if truth_rows { (n_t, n_e) } else { (n_e, n_t) };
    let cost = DMatrix::from_fn(rows, cols, |r, c| {
        let (i, j) = if truth_rows { (r, c) } else { (c, r) };
        base(i, j).1.powf(params.p)
    });
    let assignment = hungarian(&cost).expect("dense finite cost matrix");
    let mut total = 0.0;
    let mut pairs = Vec::new();
    for (r, &c) in assignment.cols.iter().enumerate() {
        let (i, j) = if truth_rows { (r, c) } else { (c, r) };
        let (d, capped) = base(i, j);
        total += capped.powf(params.p);
        if d < params.c {
            pairs.push((truth[i].0, est[j].0));
        }
    }
    total += params.c.powf(params.p) * (n - rows) as f64;
    for &(t, l) in &pairs {
        labels.map.insert(t, l);
    }
    pairs.sort();
    FrameScore { error: (total / n as f64).powf(1.0 / params.p), pairs }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuity {
    /// Truth objects covered by two or more estimate labels.
    pub non_continuous: usize,
    /// Truth objects never matched at all.
    pub missed: usize,
}

/// Continuity over a run from the per-frame matched pairs.
pub fn continuity_count(truth_ids: &[usize], history: &[Vec<(usize, Label)>]) -> Continuity {
    let mut seen: BTreeMap<usize, BTreeSet<Label>> = truth_ids.iter().map(|&t| (t, BTreeSet::new())).collect();
    for frame in history {
        for &(t, l) in frame {
            seen.entry(t).or_default().insert(l);
        }
    }
    let mut out = Continuity::default();
    for labels in seen.values() {
        match labels.len() {
            0 => out.missed += 1,
            1 => {}
            _ => out.non_continuous += 1,
        }
    }
    out
}

/// Per-run series and aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub ospat: Vec<f64>,
    /// Estimated minus true object count per frame.
    pub card_err: Vec<i64>,
    pub continuity: Continuity,
    /// Seconds per sensor update call.
    pub update_times: Vec<f64>,
    /// Seconds per filter step.
    pub cycle_times: Vec<f64>,
    /// Mean posterior components per updated track, per update call.
    pub components: Vec<f64>,
}

impl RunStats {
    pub fn mean_ospat(&self) -> f64 {
        mean(&self.ospat)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
