//! Entropy-aware pseudo-labels and the per-sample consistency cache.
//!
//! A pseudo-label mixes the target prediction `p_t` and the prior prediction
//! `p_v` as
//!
//! ```text
//! w_t = S_v / (S_v + S_t + lambda)
//! w_v = (S_t + lambda) / (S_v + S_t + lambda)
//! ```
//!
//! where `S_*` are the entropies of the two predictions. Each model's weight
//! grows with the other model's entropy, and `lambda` biases toward the prior.
//! Pseudo-labels are plain values; they never carry gradient.

use std::collections::BTreeMap;

use log::warn;

use crate::distributions::{entropy, js, ProbVector};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub dist: ProbVector,
    pub weight_target: f64,
    pub weight_prior: f64,
    pub stage: Stage,
}

/// Mixing weights `(w_t, w_v)` for entropies `s_v`, `s_t` and bias `lambda`.
///
/// `w_v` is computed as `1 - w_t`, which makes the pair sum to exactly one in
/// floating point.
pub fn entropy_weights(s_v: f64, s_t: f64, lambda: f64) -> (f64, f64) {
    let denom = s_v + s_t + lambda;
    if denom <= 0.0 {
        warn!("both entropies and lambda are zero; falling back to equal weights");
        return (0.5, 0.5);
    }
    let w_t = s_v / denom;
    (w_t, 1.0 - w_t)
}

fn mix(p_t: &ProbVector, p_v: &ProbVector, w_t: f64, w_v: f64) -> Result<ProbVector> {
    let mixed = p_t
        .probs()
        .iter()
        .zip(p_v.probs())
        .map(|(a, b)| w_t * a + w_v * b)
        .collect();
    ProbVector::new(mixed)
}

fn check_pair(p_t: &ProbVector, p_v: &ProbVector, lambda: f64) -> Result<()> {
    if p_t.num_classes() != p_v.num_classes() {
        return Err(Error::ShapeMismatch {
            op: "pseudo-label combine",
            left: vec![p_t.num_classes()],
            right: vec![p_v.num_classes()],
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be >= 0")));
    }
    Ok(())
}

/// Stage-one pseudo-label from the target and prior predictions.
pub fn combine(p_t: &ProbVector, p_v: &ProbVector, lambda: f64) -> Result<PseudoLabel> {
    check_pair(p_t, p_v, lambda)?;
    let (w_t, w_v) = entropy_weights(entropy(p_v), entropy(p_t), lambda);
    Ok(PseudoLabel {
        dist: mix(p_t, p_v, w_t, w_v)?,
        weight_target: w_t,
        weight_prior: w_v,
        stage: Stage::One,
    })
}

/// Stage-two pseudo-label; `p_v_star` comes from the adapted prompt context.
pub fn stage2_pseudo(p_t: &ProbVector, p_v_star: &ProbVector, lambda: f64) -> Result<PseudoLabel> {
    Ok(PseudoLabel {
        stage: Stage::Two,
        ..combine(p_t, p_v_star, lambda)?
    })
}

/// Equal-weight mix used when entropy weighting is switched off.
pub fn fixed_mix(p_t: &ProbVector, p_v: &ProbVector, stage: Stage) -> Result<PseudoLabel> {
    check_pair(p_t, p_v, 0.0)?;
    Ok(PseudoLabel {
        dist: mix(p_t, p_v, 0.5, 0.5)?,
        weight_target: 0.5,
        weight_prior: 0.5,
        stage,
    })
}

/// Rowwise pseudo-labels for two `n x C` prediction batches, as an `n x C`
/// matrix. `lambda = None` selects the fixed equal-weight mix.
pub fn pseudo_label_batch(
    p_t: &DenseArray,
    p_v: &DenseArray,
    lambda: Option<f64>,
    stage: Stage,
) -> Result<DenseArray> {
    if p_t.shape() != p_v.shape() {
        return Err(Error::ShapeMismatch {
            op: "pseudo_label_batch",
            left: p_t.shape().to_vec(),
            right: p_v.shape().to_vec(),
        });
    }
    let mut out = DenseArray::zeros(p_t.rows(), p_t.cols());
    for r in 0..p_t.rows() {
        let a = ProbVector::new(p_t.row_slice(r).to_vec())?;
        let b = ProbVector::new(p_v.row_slice(r).to_vec())?;
        let label = match (lambda, stage) {
            (None, _) => fixed_mix(&a, &b, stage)?,
            (Some(l), Stage::One) => combine(&a, &b, l)?,
            (Some(l), Stage::Two) => stage2_pseudo(&a, &b, l)?,
        };
        out.row_slice_mut(r).copy_from_slice(label.dist.probs());
    }
    Ok(out)
}

/// Per-sample inconsistency measured during one stage-one epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsistencyCache {
    scores: BTreeMap<usize, f64>,
    epoch: usize,
}

impl ConsistencyCache {
    pub fn new(epoch: usize) -> Self {
        Self {
            scores: BTreeMap::new(),
            epoch,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.scores.get(&index).copied()
    }

    /// Scores in ascending sample-index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores.iter().map(|(&i, &s)| (i, s))
    }

    /// True when every index in `0..n` has exactly one entry.
    pub fn covers(&self, n: usize) -> bool {
        self.scores.len() == n && self.scores.keys().copied().eq(0..n)
    }

    /// Stores `JS(p_t, p_v) + beta * JS(p_v, p_v_perturbed)` for sample
    /// `index` and returns it.
    pub fn record_consistency(
        &mut self,
        index: usize,
        p_t_clean: &ProbVector,
        p_v_clean: &ProbVector,
        p_v_perturbed: &ProbVector,
        beta: f64,
    ) -> Result<f64> {
        let score = js(p_t_clean, p_v_clean)? + beta * js(p_v_clean, p_v_perturbed)?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("consistency score for sample {index}")));
        }
        if self.scores.insert(index, score).is_some() {
            return Err(Error::InvalidConfig(format!(
                "sample {index} recorded twice in epoch {}",
                self.epoch
            )));
        }
        Ok(score)
    }
}
