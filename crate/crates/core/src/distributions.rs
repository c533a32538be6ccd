//! Points on the probability simplex and the information measures built on
//! them.
//!
//! Mutual information between two batches of predictions uses the
//! averaged-outer-product joint: `J = (1/n) sum_i p_i q_i^T`, with marginals
//! taken as the row and column sums of `J`. For one-hot rows this is the exact
//! discrete MI of the paired labels.

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Tape, Var, LOG_FLOOR};

const SIMPLEX_TOL: f64 = 1e-9;

/// A categorical distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    pub fn uniform(c: usize) -> Result<Self> {
        Self::new(vec![1.0 / c as f64; c])
    }

    pub fn one_hot(c: usize, k: usize) -> Result<Self> {
        let mut p = vec![0.0; c];
        *p.get_mut(k)
            .ok_or_else(|| Error::InvalidDistribution(format!("class {k} out of range {c}")))? =
            1.0;
        Self::new(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = j;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidDistribution(format!(
            "need at least 2 classes, got {}",
            p.len()
        )));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {v} is not a probability")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
    }
    Ok(())
}

/// Checks that every row of `m` is a valid [`ProbVector`].
pub fn check_row_stochastic(m: &DenseArray) -> Result<()> {
    for r in 0..m.rows() {
        check_simplex(m.row_slice(r))?;
    }
    Ok(())
}

/// Rows of a row-stochastic matrix as validated distributions.
pub fn rows_as_probs(m: &DenseArray) -> Result<Vec<ProbVector>> {
    (0..m.rows())
        .map(|r| ProbVector::new(m.row_slice(r).to_vec()))
        .collect()
}

/// Stacks distributions into an `n x C` matrix.
pub fn stack(rows: &[ProbVector]) -> Result<DenseArray> {
    let data: Vec<Vec<f64>> = rows.iter().map(|p| p.0.clone()).collect();
    DenseArray::from_rows(&data)
}

fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.max(LOG_FLOOR).ln()).sum::<f64>()
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_raw(&p.0).max(0.0)
}

/// `KL(p || q)` with `q` floored at `1e-12`.
pub fn kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.0.len() != q.0.len() {
        return Err(Error::ShapeMismatch {
            op: "kl",
            left: vec![p.0.len()],
            right: vec![q.0.len()],
        });
    }
    let d: f64 = p
        .0
        .iter()
        .zip(&q.0)
        .map(|(&a, &b)| a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()))
        .sum();
    Ok(d.max(0.0))
}

/// Jensen-Shannon divergence in nats; bounded by `log 2`.
pub fn js(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.0.len() != q.0.len() {
        return Err(Error::ShapeMismatch {
            op: "js",
            left: vec![p.0.len()],
            right: vec![q.0.len()],
        });
    }
    let m: Vec<f64> = p.0.iter().zip(&q.0).map(|(a, b)| 0.5 * (a + b)).collect();
    let half = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&m)
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &b)| a * (a.ln() - b.ln()))
            .sum()
    };
    Ok((0.5 * half(&p.0) + 0.5 * half(&q.0)).max(0.0))
}

/// Two paired batches of predictions, `P` and `Q`, each `n x C`.
#[derive(Debug, Clone)]
pub struct BatchDistributionPair {
    p: DenseArray,
    q: DenseArray,
}

impl BatchDistributionPair {
    pub fn new(p: DenseArray, q: DenseArray) -> Result<Self> {
        if p.shape() != q.shape() {
            return Err(Error::ShapeMismatch {
                op: "distribution pair",
                left: p.shape().to_vec(),
                right: q.shape().to_vec(),
            });
        }
        if p.rows() == 0 {
            return Err(Error::EmptyBatch("mutual_information"));
        }
        check_row_stochastic(&p)?;
        check_row_stochastic(&q)?;
        Ok(Self { p, q })
    }

    pub fn p(&self) -> &DenseArray {
        &self.p
    }

    pub fn q(&self) -> &DenseArray {
        &self.q
    }

    pub fn swapped(&self) -> Self {
        Self {
            p: self.q.clone(),
            q: self.p.clone(),
        }
    }
}

/// Traced batch mutual information between two `n x C` prediction matrices.
pub fn mutual_information_traced(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let n = tape.value(p).rows();
    if n == 0 {
        return Err(Error::EmptyBatch("mutual_information"));
    }
    let pt = tape.transpose(p)?;
    let joint_sum = tape.matmul(pt, q)?;
    let joint = tape.scale(joint_sum, 1.0 / n as f64)?;
    let row_marg = tape.sum_rows(joint)?;
    let col_marg = tape.sum_cols(joint)?;
    let outer = tape.matmul(row_marg, col_marg)?;
    let log_joint = tape.log(joint)?;
    let log_outer = tape.log(outer)?;
    let ratio = tape.sub(log_joint, log_outer)?;
    let terms = tape.mul(joint, ratio)?;
    tape.sum(terms)
}

/// Batch mutual information of a prediction pair, in nats.
pub fn mutual_information(pair: &BatchDistributionPair) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pair.p.clone());
    let q = tape.constant(pair.q.clone());
    let mi = mutual_information_traced(&mut tape, p, q)?;
    tape.value(mi).item()
}

/// Reference MI computed with explicit scalar loops, sharing no code with
/// [`mutual_information`]. Used to cross-check it.
pub fn mi_oracle(pair: &BatchDistributionPair) -> Result<f64> {
    let n = pair.p.rows();
    let c = pair.p.cols();
    if n == 0 {
        return Err(Error::EmptyBatch("mi_oracle"));
    }
    let mut joint = vec![vec![0.0f64; c]; c];
    for i in 0..n {
        for a in 0..c {
            for b in 0..c {
                joint[a][b] += pair.p.get(i, a) * pair.q.get(i, b);
            }
        }
    }
    for row in joint.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut row_marg = vec![0.0f64; c];
    let mut col_marg = vec![0.0f64; c];
    for a in 0..c {
        for b in 0..c {
            row_marg[a] += joint[a][b];
            col_marg[b] += joint[a][b];
        }
    }
    let mut total = 0.0;
    for a in 0..c {
        for b in 0..c {
            let j = joint[a][b];
            let denom = row_marg[a] * col_marg[b];
            let lj = if j > 1e-12 { j.ln() } else { (1e-12f64).ln() };
            let ld = if denom > 1e-12 { denom.ln() } else { (1e-12f64).ln() };
            total += j * (lj - ld);
        }
    }
    Ok(total)
}

/// Per-row entropy of an `n x C` prediction matrix, traced: `n x 1`.
pub fn entropy_rows_traced(tape: &mut Tape, p: Var) -> Result<Var> {
    let logp = tape.log(p)?;
    let plogp = tape.mul(p, logp)?;
    let s = tape.sum_rows(plogp)?;
    tape.scale(s, -1.0)
}
