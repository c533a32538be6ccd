//! L2-bounded PGD perturbations, their batch-sample initialization, and the
//! per-sample initialization scale used in the second stage.

use std::collections::BTreeMap;

use log::info;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::DenseArray;
use crate::pseudo_label::{ConsistencyCache, Stage};

/// Slack allowed on the ball constraint after projection.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub steps: usize,
    /// One ascent step size per iteration.
    pub step_sizes: Vec<f64>,
    /// L2 radius of the perturbation ball.
    pub radius: f64,
    /// Base initialization magnitude.
    pub eta0: f64,
}

impl PgdConfig {
    /// `steps` iterations with the constant step `2R / steps`.
    pub fn constant(steps: usize, radius: f64, eta0: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("pgd steps must be >= 1".into()));
        }
        let cfg = Self {
            steps,
            step_sizes: vec![2.0 * radius / steps as f64; steps],
            radius,
            eta0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.step_sizes.len() != self.steps {
            return Err(Error::InvalidConfig(format!(
                "pgd needs steps >= 1 and one step size per step (steps={}, sizes={})",
                self.steps,
                self.step_sizes.len()
            )));
        }
        if !(self.radius > 0.0) || !(self.eta0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pgd radius {} and eta0 {} must be positive",
                self.radius, self.eta0
            )));
        }
        if self.step_sizes.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidConfig("pgd step sizes must be >= 0".into()));
        }
        Ok(())
    }
}

/// An additive input perturbation with its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: DenseArray,
    radius: f64,
    stage: Stage,
    iterations: usize,
    trajectory: Vec<f64>,
}

impl Perturbation {
    pub fn delta(&self) -> &DenseArray {
        &self.delta
    }

    pub fn into_delta(self) -> DenseArray {
        self.delta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Objective value at the initial point and after every step.
    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }
}

/// Euclidean projection onto the ball of radius `r` around zero.
pub fn project(delta: &DenseArray, r: f64) -> DenseArray {
    let norm = delta.frobenius_norm();
    if norm <= r {
        delta.clone()
    } else {
        delta.scale(r / norm)
    }
}

/// Projects each row of a batch perturbation independently.
pub fn project_rows(delta: &DenseArray, r: f64) -> DenseArray {
    let mut out = delta.clone();
    for i in 0..out.rows() {
        let row = out.row_slice_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > r {
            let s = r / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    out
}

/// Largest row norm of a batch perturbation.
pub fn max_row_norm(delta: &DenseArray) -> f64 {
    (0..delta.rows())
        .map(|i| delta.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Initial perturbation for sample `anchor`: `eta * (x_j - x_anchor)` toward a
/// uniformly drawn other sample `j` of the batch, projected onto the ball.
/// A single-sample batch falls back to a random Gaussian direction of length
/// `eta * r`.
pub fn init_delta<R: Rng + ?Sized>(
    batch: &DenseArray,
    anchor: usize,
    eta: f64,
    r: f64,
    rng: &mut R,
) -> Result<DenseArray> {
    if anchor >= batch.rows() {
        return Err(Error::InvalidConfig(format!(
            "anchor {anchor} outside batch of {}",
            batch.rows()
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidConfig(format!("eta {eta} must be >= 0")));
    }
    let d = batch.cols();
    if batch.rows() < 2 {
        info!("single-sample batch: initializing perturbation from a Gaussian direction");
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { eta * r / norm } else { 0.0 };
        return Ok(project(&DenseArray::row(dir).scale(scale), r));
    }
    let mut j = rng.random_range(0..batch.rows() - 1);
    if j >= anchor {
        j += 1;
    }
    let diff: Vec<f64> = batch
        .row_slice(j)
        .iter()
        .zip(batch.row_slice(anchor))
        .map(|(a, b)| eta * (a - b))
        .collect();
    Ok(project(&DenseArray::row(diff), r))
}

/// [`init_delta`] for every row, with per-row magnitudes `etas`.
pub fn init_batch<R: Rng + ?Sized>(batch: &DenseArray, etas: &[f64], r: f64, rng: &mut R) -> Result<DenseArray> {
    if etas.len() != batch.rows() {
        return Err(Error::ShapeMismatch {
            op: "init_batch",
            left: batch.shape().to_vec(),
            right: vec![etas.len()],
        });
    }
    let mut out = DenseArray::zeros(batch.rows(), batch.cols());
    for (i, &eta) in etas.iter().enumerate() {
        let d = init_delta(batch, i, eta, r, rng)?;
        out.row_slice_mut(i).copy_from_slice(d.data());
    }
    Ok(out)
}

/// Projected gradient ascent: `delta <- proj(delta + gamma_p * grad)` for
/// every step `p`, each row held inside the ball of radius `cfg.radius`.
///
/// `objective` returns the value and its gradient with respect to delta.
pub fn pgd_attack<F>(mut objective: F, init: &DenseArray, cfg: &PgdConfig, stage: Stage) -> Result<Perturbation>
where
    F: FnMut(&DenseArray) -> Result<(f64, DenseArray)>,
{
    cfg.validate()?;
    if max_row_norm(init) > cfg.radius + NORM_TOL {
        return Err(Error::InvalidConfig(format!(
            "initial perturbation outside the ball of radius {}",
            cfg.radius
        )));
    }
    let mut delta = init.clone();
    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    for (p, &gamma) in cfg.step_sizes.iter().enumerate() {
        let (value, grad) = objective(&delta)?;
        if !value.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite(format!("pgd objective at step {p}")));
        }
        if grad.shape() != delta.shape() {
            return Err(Error::ShapeMismatch {
                op: "pgd gradient",
                left: delta.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        trajectory.push(value);
        if gamma != 0.0 {
            let stepped = delta.add(&grad.scale(gamma))?;
            delta = project_rows(&stepped, cfg.radius);
        }
        let norm = max_row_norm(&delta);
        if norm > cfg.radius + NORM_TOL {
            return Err(Error::NonFinite(format!(
                "pgd step {p} left the ball: norm {norm} > {}",
                cfg.radius
            )));
        }
    }
    let (final_value, _) = objective(&delta)?;
    if !final_value.is_finite() {
        return Err(Error::NonFinite("pgd objective at final iterate".into()));
    }
    trajectory.push(final_value);
    Ok(Perturbation {
        delta,
        radius: cfg.radius,
        stage,
        iterations: cfg.steps,
        trajectory,
    })
}

/// Per-sample initialization magnitudes for the second stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSchedule {
    etas: BTreeMap<usize, f64>,
    eta0: f64,
    lo: f64,
    hi: f64,
}

impl EtaSchedule {
    /// Every sample gets `eta0`.
    pub fn constant(eta0: f64) -> Self {
        Self {
            etas: BTreeMap::new(),
            eta0,
            lo: eta0,
            hi: eta0,
        }
    }

    /// Magnitude for sample `index`; `eta0` for samples with no entry.
    pub fn eta(&self, index: usize) -> f64 {
        self.etas.get(&index).copied().unwrap_or(self.eta0)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.etas.iter().map(|(&i, &e)| (i, e))
    }

    /// `(min, mean, max)` over recorded samples, or `eta0` for all three
    /// when empty.
    pub fn summary(&self) -> (f64, f64, f64) {
        if self.etas.is_empty() {
            return (self.eta0, self.eta0, self.eta0);
        }
        let vals = self.etas.values();
        let min = vals.clone().copied().fold(f64::INFINITY, f64::min);
        let max = vals.clone().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.sum::<f64>() / self.etas.len() as f64;
        (min, mean, max)
    }
}

/// `eta_i = clamp(eta0 * l_i / mean(l), lo * eta0, hi * eta0)`.
///
/// Equal scores (or a zero mean) give every sample exactly `eta0`.
pub fn dynamic_eta(cache: &ConsistencyCache, eta0: f64, clip: (f64, f64)) -> Result<EtaSchedule> {
    let (lo, hi) = clip;
    if !(eta0 > 0.0) || !(lo > 0.0) || !(lo <= 1.0 && 1.0 <= hi) {
        return Err(Error::InvalidConfig(format!(
            "eta0 {eta0} must be positive and clip [{lo}, {hi}] must contain 1"
        )));
    }
    let (lo_eta, hi_eta) = (lo * eta0, hi * eta0);
    let n = cache.len();
    let mut etas = BTreeMap::new();
    if n == 0 {
        return Ok(EtaSchedule {
            etas,
            eta0,
            lo: lo_eta,
            hi: hi_eta,
        });
    }
    let scores: Vec<(usize, f64)> = cache.iter().collect();
    let min = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let mean = scores.iter().map(|s| s.1).sum::<f64>() / n as f64;
    for (i, score) in scores {
        let eta = if min == max || !(mean > 0.0) {
            eta0
        } else {
            (eta0 * (score / mean)).clamp(lo_eta, hi_eta)
        };
        etas.insert(i, eta);
    }
    Ok(EtaSchedule {
        etas,
        eta0,
        lo: lo_eta,
        hi: hi_eta,
    })
}

/// Median Euclidean distance over pairs among the first `limit` rows.
pub fn median_pairwise_distance(x: &DenseArray, limit: usize) -> f64 {
    let n = x.rows().min(limit);
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x
                .row_slice(i)
                .iter()
                .zip(x.row_slice(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d.sqrt());
        }
    }
    if dists.is_empty() {
        return 0.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    }
}
