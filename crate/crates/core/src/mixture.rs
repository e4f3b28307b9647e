//! Weighted Gaussian sums over the box state.
//!
//! Reduction follows the usual order: prune tiny weights, merge components
//! that are close in Bhattacharyya distance, then cap the count by weight.
//! Every public mutation leaves the weights normalized.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{idx, normalize_angle, symmetrize, RefPoint, StateCovariance, StateVector, STATE_DIM};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-5;
pub const DEFAULT_MERGE_DISTANCE: f64 = 1.0;
pub const DEFAULT_MAX_COMPONENTS: usize = 30;
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: StateVector,
    pub cov: StateCovariance,
    /// Reference-point hypothesis that produced this component, if any.
    pub origin_tag: Option<RefPoint>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: StateVector, cov: StateCovariance) -> Self {
        GaussianComponent { weight, mean, cov, origin_tag: None }
    }

    pub fn with_tag(mut self, tag: Option<RefPoint>) -> Self {
        self.origin_tag = tag;
        self
    }

    /// Density of this component (ignoring its weight) at `point`.
    pub fn pdf(&self, point: &StateVector) -> Option<f64> {
        let chol = self.cov.cholesky()?;
        let mut diff = point - self.mean;
        diff[idx::PHI] = normalize_angle(diff[idx::PHI]);
        let sol = chol.solve(&diff);
        let maha = diff.dot(&sol);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some((-0.5 * (maha + log_det + STATE_DIM as f64 * (2.0 * PI).ln())).exp())
    }
}

/// Multivariate normal density with dynamic dimension.
pub fn gaussian_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    gaussian_log_pdf(x, mean, cov).map(f64::exp)
}

pub fn gaussian_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let d = x.len();
    if mean.len() != d || cov.shape() != (d, d) {
        return None;
    }
    let chol = cov.clone().cholesky()?;
    let diff = x - mean;
    let maha = diff.dot(&chol.solve(&diff));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (maha + log_det + d as f64 * (2.0 * PI).ln()))
}

/// Conditions `prior` on a linear-Gaussian observation `z = H x + v`, `v ~ N(0, R)`.
///
/// Returns the posterior (weight unchanged) and the marginal likelihood
/// `N(z; H mean, H P H^T + R)`. The covariance update uses `P - K S K^T`.
pub fn kalman_condition(
    prior: &GaussianComponent,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianComponent, f64)> {
    let d = z.len();
    if h.shape() != (d, STATE_DIM) {
        return Err(Error::Dimension { expected: d, got: h.nrows() });
    }
    if r.shape() != (d, d) {
        return Err(Error::Dimension { expected: d, got: r.nrows() });
    }
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, prior.cov.as_slice());
    let x = DVector::from_column_slice(prior.mean.as_slice());
    let hp = h * &p;
    let mut s = &hp * h.transpose() + r;
    s = (&s + s.transpose()) * 0.5;
    let chol = s.clone().cholesky().ok_or(Error::SingularInnovation)?;
    let innovation = z - h * &x;
    // S^-1 H P, so that K = (S^-1 H P)^T and K S K^T = (H P)^T S^-1 H P.
    let s_inv_hp = chol.solve(&hp);
    let post_mean = &x + s_inv_hp.transpose() * &innovation;
    let post_cov = &p - hp.transpose() * &s_inv_hp;

    let maha = innovation.dot(&chol.solve(&innovation));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let likelihood = (-0.5 * (maha + log_det + d as f64 * (2.0 * PI).ln())).exp();

    let mut mean = StateVector::from_column_slice(post_mean.as_slice());
    mean[idx::PHI] = normalize_angle(mean[idx::PHI]);
    let cov = symmetrize(&StateCovariance::from_column_slice(post_cov.as_slice()));
    Ok((GaussianComponent { weight: prior.weight, mean, cov, origin_tag: prior.origin_tag }, likelihood))
}

/// Bhattacharyya distance between two Gaussian components (weights ignored).
pub fn bhattacharyya_distance(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let la = log_det(&a.cov).ok_or(Error::SingularComponent { index: 0 })?;
    let lb = log_det(&b.cov).ok_or(Error::SingularComponent { index: 1 })?;
    bhattacharyya_with_log_dets(a, la, b, lb)
}

fn bhattacharyya_with_log_dets(a: &GaussianComponent, log_det_a: f64, b: &GaussianComponent, log_det_b: f64) -> Result<f64> {
    let avg = (a.cov + b.cov) * 0.5;
    let chol = avg.cholesky().ok_or(Error::SingularInnovation)?;
    let mut diff = a.mean - b.mean;
    diff[idx::PHI] = normalize_angle(diff[idx::PHI]);
    let maha = diff.dot(&chol.solve(&diff));
    let log_det_avg = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let d = 0.125 * maha + 0.5 * (log_det_avg - 0.5 * (log_det_a + log_det_b));
    Ok(d.max(0.0))
}

/// Lower bound on the Bhattacharyya distance. The mean term restricted to a
/// sub-block never exceeds the full one and the log-det term is non-negative,
/// so the largest of the position-block and single-coordinate terms bounds it.
fn merge_lower_bound(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    let mut diff = a.mean - b.mean;
    diff[idx::PHI] = normalize_angle(diff[idx::PHI]);
    let mut bound: f64 = 0.0;
    for k in 2..STATE_DIM {
        let var = 0.5 * (a.cov[(k, k)] + b.cov[(k, k)]);
        if var > 0.0 {
            bound = bound.max(0.125 * diff[k] * diff[k] / var);
        }
    }
    let avg = (a.cov.fixed_view::<2, 2>(0, 0) + b.cov.fixed_view::<2, 2>(0, 0)) * 0.5;
    let pos = diff.fixed_rows::<2>(0);
    if let Some(chol) = avg.cholesky() {
        bound = bound.max(0.125 * pos.dot(&chol.solve(&pos)));
    }
    bound
}

fn log_det(cov: &StateCovariance) -> Option<f64> {
    cov.cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Clips covariance eigenvalues from below.
pub fn floor_eigenvalues(cov: &StateCovariance, floor: f64) -> StateCovariance {
    let sym = symmetrize(cov);
    // Cheap exit: cov - floor*I positive definite means no eigenvalue is below the floor.
    if (sym - StateCovariance::identity() * floor).cholesky().is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= floor {
        return symmetrize(cov);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = eig.eigenvectors * StateCovariance::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Moment-matched single Gaussian of a weighted set of components.
///
/// Headings are averaged as wrapped offsets from the heaviest member so that
/// components straddling +-pi do not cancel.
pub fn moment_match(components: &[&GaussianComponent]) -> GaussianComponent {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let anchor = components
        .iter()
        .copied()
        .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap_or(Ordering::Equal))
        .expect("moment_match needs at least one component");
    let norm = if total > 0.0 { total } else { 1.0 };
    let uniform = total <= 0.0;
    let weight_of = |c: &GaussianComponent| if uniform { 1.0 / components.len() as f64 } else { c.weight / norm };

    let mut mean = StateVector::zeros();
    let mut heading_offset = 0.0;
    for c in components {
        let w = weight_of(c);
        mean += c.mean * w;
        heading_offset += w * normalize_angle(c.mean[idx::PHI] - anchor.mean[idx::PHI]);
    }
    mean[idx::PHI] = normalize_angle(anchor.mean[idx::PHI] + heading_offset);

    let mut cov = StateCovariance::zeros();
    for c in components {
        let w = weight_of(c);
        let mut d = c.mean - mean;
        d[idx::PHI] = normalize_angle(d[idx::PHI]);
        cov += (c.cov + d * d.transpose()) * w;
    }
    GaussianComponent { weight: total, mean, cov: floor_eigenvalues(&cov, EIGEN_FLOOR), origin_tag: anchor.origin_tag }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    /// Builds a mixture and normalizes its weights.
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        let mut mix = GaussianMixture { components };
        mix.normalize();
        mix
    }

    pub fn single(mean: StateVector, cov: StateCovariance) -> Self {
        GaussianMixture { components: vec![GaussianComponent::new(1.0, mean, cov)] }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    fn normalize(&mut self) {
        let total = self.total_weight();
        if self.components.is_empty() {
            return;
        }
        if total > 0.0 && total.is_finite() {
            for c in &mut self.components {
                c.weight /= total;
            }
        } else {
            let w = 1.0 / self.components.len() as f64;
            for c in &mut self.components {
                c.weight = w;
            }
        }
    }

    /// Index of the highest-weight component; ties go to the lowest index.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.components.iter().enumerate() {
            match best {
                Some(b) if self.components[b].weight >= c.weight => {}
                _ => best = Some(i),
            }
        }
        best
    }

    pub fn best(&self) -> Option<&GaussianComponent> {
        self.best_index().map(|i| &self.components[i])
    }

    /// Mixture mean (heading averaged like [`moment_match`]).
    pub fn mean(&self) -> Option<StateVector> {
        if self.components.is_empty() {
            return None;
        }
        let refs: Vec<&GaussianComponent> = self.components.iter().collect();
        Some(moment_match(&refs).mean)
    }

    /// Total weight carried by components with the given origin tag.
    pub fn tag_mass(&self, tag: RefPoint) -> f64 {
        self.components.iter().filter(|c| c.origin_tag == Some(tag)).map(|c| c.weight).sum()
    }

    pub fn eval_pdf(&self, point: &StateVector) -> Result<f64> {
        let mut total = 0.0;
        for (index, c) in self.components.iter().enumerate() {
            total += c.weight * c.pdf(point).ok_or(Error::SingularComponent { index })?;
        }
        Ok(total)
    }

    /// Density of the marginal over the state indices `dims`.
    pub fn eval_marginal_pdf(&self, dims: &[usize], point: &DVector<f64>) -> Result<f64> {
        if point.len() != dims.len() {
            return Err(Error::Dimension { expected: dims.len(), got: point.len() });
        }
        if let Some(&bad) = dims.iter().find(|&&d| d >= STATE_DIM) {
            return Err(Error::Dimension { expected: STATE_DIM, got: bad + 1 });
        }
        let mut total = 0.0;
        for (index, c) in self.components.iter().enumerate() {
            let mean = DVector::from_fn(dims.len(), |i, _| c.mean[dims[i]]);
            let cov = DMatrix::from_fn(dims.len(), dims.len(), |r, k| c.cov[(dims[r], dims[k])]);
            total += c.weight * gaussian_pdf(point, &mean, &cov).ok_or(Error::SingularComponent { index })?;
        }
        Ok(total)
    }

    /// Drops components lighter than `threshold`, always keeping the heaviest.
    pub fn prune(&self, threshold: f64) -> GaussianMixture {
        let mut kept: Vec<GaussianComponent> = self.components.iter().filter(|c| c.weight >= threshold).cloned().collect();
        if kept.is_empty() {
            if let Some(best) = self.best() {
                kept.push(best.clone());
            }
        }
        GaussianMixture::new(kept)
    }

    pub fn merge(&self, max_distance: f64) -> GaussianMixture {
        self.merge_with(max_distance, false)
    }

    /// Greedy moment-matching merge, repeated until no two components are
    /// closer than `max_distance`. With `isolate_hypotheses`, only components
    /// sharing an origin tag are merged.
    pub fn merge_with(&self, max_distance: f64, isolate_hypotheses: bool) -> GaussianMixture {
        let mut comps = match merge_pass(&self.components, max_distance, isolate_hypotheses) {
            Some(next) => next,
            None => self.components.clone(),
        };
        while let Some(next) = merge_pass(&comps, max_distance, isolate_hypotheses) {
            comps = next;
        }
        let mut mix = GaussianMixture { components: comps };
        let total = mix.total_weight();
        if (total - 1.0).abs() > 1e-12 {
            mix.normalize();
        }
        mix
    }

    /// Keeps the `max_components` heaviest components (ties by index), in
    /// their original order.
    pub fn cap(&self, max_components: usize) -> GaussianMixture {
        let max_components = max_components.max(1);
        if self.components.len() <= max_components {
            return GaussianMixture::new(self.components.clone());
        }
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        order.sort_by(|&a, &b| self.components[b].weight.partial_cmp(&self.components[a].weight).unwrap_or(Ordering::Equal));
        let mut keep: Vec<usize> = order.into_iter().take(max_components).collect();
        keep.sort_unstable();
        GaussianMixture::new(keep.into_iter().map(|i| self.components[i].clone()).collect())
    }

    /// Prune, merge and cap in one go.
    pub fn reduce(&self, params: &ReductionParams) -> GaussianMixture {
        self.prune(params.prune_threshold).merge_with(params.merge_distance, params.isolate_hypotheses).cap(params.max_components)
    }
}

/// One greedy merge sweep; `None` when no pair was close enough.
fn merge_pass(comps: &[GaussianComponent], max_distance: f64, isolate: bool) -> Option<Vec<GaussianComponent>> {
    let n = comps.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| comps[b].weight.partial_cmp(&comps[a].weight).unwrap_or(Ordering::Equal));
    // Log-determinants are only needed for pairs that survive the cheap bound.
    let mut log_dets: Vec<Option<Option<f64>>> = vec![None; n];
    let mut log_det_of = |k: usize| *log_dets[k].get_or_insert_with(|| log_det(&comps[k].cov));
    let mut used = vec![false; n];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut merged_any = false;
    for (pos, &i) in order.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut group = vec![i];
        for &j in &order[pos + 1..] {
            if used[j] || (isolate && comps[j].origin_tag != comps[i].origin_tag) {
                continue;
            }
            if merge_lower_bound(&comps[i], &comps[j]) >= max_distance {
                continue;
            }
            let Some(ldi) = log_det_of(i) else { break };
            let Some(ldj) = log_det_of(j) else { continue };
            if let Ok(d) = bhattacharyya_with_log_dets(&comps[i], ldi, &comps[j], ldj) {
                if d < max_distance {
                    used[j] = true;
                    group.push(j);
                }
            }
        }
        merged_any |= group.len() > 1;
        groups.push(group);
    }
    if !merged_any {
        return None;
    }
    // Survivors keep the position of their anchor.
    groups.sort_by_key(|g| g[0]);
    Some(
        groups
            .into_iter()
            .map(
                |g| {
                    if g.len() == 1 {
                        comps[g[0]].clone()
                    } else {
                        moment_match(&g.iter().map(|&k| &comps[k]).collect::<Vec<_>>())
                    }
                },
            )
            .collect(),
    )
}

/// Mixture reduction thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionParams {
    pub prune_threshold: f64,
    pub merge_distance: f64,
    pub max_components: usize,
    pub isolate_hypotheses: bool,
}

impl Default for ReductionParams {
    fn default() -> Self {
        ReductionParams {
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            merge_distance: DEFAULT_MERGE_DISTANCE,
            max_components: DEFAULT_MAX_COMPONENTS,
            isolate_hypotheses: false,
        }
    }
}
