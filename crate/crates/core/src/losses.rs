//! Training objectives for both adaptation stages and their weighted totals.
//!
//! Every loss takes traced predictions for the parameters it trains and plain
//! arrays for anything that must not receive gradients (pseudo-labels, frozen
//! model outputs). Those arrays enter the tape as constants.

use crate::distributions::mutual_information_traced;
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Tape, Var};
use crate::pseudo_label::Stage;

fn same_shape(tape: &Tape, a: Var, b: &[usize], op: &'static str) -> Result<()> {
    let sa = tape.value(a).shape();
    if sa != b {
        return Err(Error::ShapeMismatch {
            op,
            left: sa.to_vec(),
            right: b.to_vec(),
        });
    }
    if sa[0] == 0 {
        return Err(Error::EmptyBatch(op));
    }
    Ok(())
}

fn negative_mi(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let mi = mutual_information_traced(tape, p, q)?;
    tape.scale(mi, -1.0)
}

/// Negative batch MI between prior predictions and stage-one pseudo-labels.
pub fn loss_tsv(tape: &mut Tape, prior_probs: Var, pseudo: &DenseArray) -> Result<Var> {
    same_shape(tape, prior_probs, pseudo.shape(), "loss_tsv")?;
    let target = tape.constant(pseudo.clone());
    negative_mi(tape, prior_probs, target)
}

/// Negative batch MI between clean and perturbed prior predictions.
pub fn loss_mic_stage1(tape: &mut Tape, clean: Var, perturbed: Var) -> Result<Var> {
    let shape = tape.value(perturbed).shape().to_vec();
    same_shape(tape, clean, &shape, "loss_mic_stage1")?;
    negative_mi(tape, clean, perturbed)
}

/// Negative batch MI between clean and perturbed target-model predictions.
pub fn loss_mic_stage2(tape: &mut Tape, clean: Var, perturbed: Var) -> Result<Var> {
    let shape = tape.value(perturbed).shape().to_vec();
    same_shape(tape, clean, &shape, "loss_mic_stage2")?;
    negative_mi(tape, clean, perturbed)
}

/// `KL(mean prediction || uniform)`, traced.
pub fn balance_term(tape: &mut Tape, probs: Var) -> Result<Var> {
    let [n, c] = [tape.value(probs).rows(), tape.value(probs).cols()];
    if n == 0 {
        return Err(Error::EmptyBatch("balance_term"));
    }
    let total = tape.sum_cols(probs)?;
    let mean = tape.scale(total, 1.0 / n as f64)?;
    let logm = tape.log(mean)?;
    let mlogm = tape.mul(mean, logm)?;
    let neg_entropy = tape.sum(mlogm)?;
    let offset = tape.constant(DenseArray::scalar((c as f64).ln()));
    tape.add(neg_entropy, offset)
}

/// Predictive consistency with the customized prior plus the balance
/// regularizer. Returns `(total, balance)`.
pub fn loss_pc(tape: &mut Tape, target_probs: Var, prior_probs: &DenseArray, alpha_balance: f64) -> Result<(Var, Var)> {
    same_shape(tape, target_probs, prior_probs.shape(), "loss_pc")?;
    let prior = tape.constant(prior_probs.clone());
    let mi = negative_mi(tape, target_probs, prior)?;
    let balance = balance_term(tape, target_probs)?;
    let weighted = tape.scale(balance, alpha_balance)?;
    Ok((tape.add(mi, weighted)?, balance))
}

/// Indicator of the `n` largest entries per row; ties go to the lower index.
pub fn top_n_mask(p: &DenseArray, n: usize) -> DenseArray {
    let mut mask = DenseArray::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let row = p.row_slice(r);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps lower indices first among equal values
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &j in idx.iter().take(n) {
            mask.set(r, j, 1.0);
        }
    }
    mask
}

/// Category-attention calibration on softmax probabilities.
///
/// With `M_i` the top-`n_top` classes of `pseudo` row `i`, `a_i` the product
/// and `b_i` the sum of `probs` over `M_i`:
/// `t_i = -a_i / tau + log sum_{j not in M_i} exp(b_i * probs_ij / tau)`.
/// Returns the batch mean of `t_i`.
pub fn loss_mce(tape: &mut Tape, probs: Var, pseudo: &DenseArray, n_top: usize, tau: f64) -> Result<Var> {
    same_shape(tape, probs, pseudo.shape(), "loss_mce")?;
    let (n, c) = (pseudo.rows(), pseudo.cols());
    if n_top == 0 || n_top >= c {
        return Err(Error::InvalidConfig(format!(
            "top-N size {n_top} must lie in [1, {}] for {c} classes",
            c - 1
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau {tau} must be positive")));
    }
    let mask = top_n_mask(pseudo, n_top);
    let complement = mask.map(|m| 1.0 - m);

    let a = tape.masked_row_prod(probs, mask.clone())?;
    let mask_v = tape.constant(mask);
    let in_top = tape.mul(probs, mask_v)?;
    let b = tape.sum_rows(in_top)?;
    let b_wide = tape.broadcast_cols(b, c)?;
    let bl = tape.mul(b_wide, probs)?;
    let scaled = tape.scale(bl, 1.0 / tau)?;
    let e = tape.exp(scaled)?;
    let comp_v = tape.constant(complement);
    let kept = tape.mul(e, comp_v)?;
    let denom = tape.sum_rows(kept)?;
    let log_denom = tape.log(denom)?;
    let neg_a = tape.scale(a, -1.0 / tau)?;
    let t = tape.add(neg_a, log_denom)?;
    debug_assert_eq!(tape.value(t).rows(), n);
    tape.mean(t)
}

/// Scalar loss components of one batch or epoch, with the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub tsv: Option<f64>,
    pub mic1: Option<f64>,
    pub mic2: Option<f64>,
    pub pc: Option<f64>,
    pub balance: Option<f64>,
    pub mce: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 1.0,
            xi1: 1.0,
            xi2: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub stage: Stage,
    pub components: LossComponents,
    pub total: f64,
}

fn required(value: Option<f64>, weight: f64, name: &'static str) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() => Ok(weight * v),
        Some(v) => Err(Error::NonFinite(format!("loss component {name} = {v}"))),
        // a zero-weighted term may be skipped entirely
        None if weight == 0.0 => Ok(0.0),
        None => Err(Error::MissingComponent(name)),
    }
}

/// Weighted stage total:
/// stage one `tsv + beta * mic1`, stage two `mce + xi1 * pc + xi2 * mic2`.
pub fn stage_totals(stage: Stage, components: LossComponents, weights: LossWeights) -> Result<LossBreakdown> {
    let total = match stage {
        Stage::One => required(components.tsv, 1.0, "tsv")? + required(components.mic1, weights.beta, "mic1")?,
        Stage::Two => {
            required(components.mce, 1.0, "mce")?
                + required(components.pc, weights.xi1, "pc")?
                + required(components.mic2, weights.xi2, "mic2")?
        }
    };
    if let Some(b) = components.balance {
        if !b.is_finite() {
            return Err(Error::NonFinite(format!("loss component balance = {b}")));
        }
    }
    Ok(LossBreakdown {
        stage,
        components,
        total,
    })
}
