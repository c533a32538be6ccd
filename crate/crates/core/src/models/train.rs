//! Supervised pretraining of the source classifier and the prior model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::DenseNet;
use super::prior::PriorModel;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be >= 0", self.lr)));
        }
        Ok(())
    }
}

fn one_hot(labels: &[usize], c: usize) -> DenseArray {
    let mut out = DenseArray::zeros(labels.len(), c);
    for (r, &l) in labels.iter().enumerate() {
        out.set(r, l, 1.0);
    }
    out
}

/// Mean cross-entropy of `logits` against one-hot `targets`.
pub(crate) fn cross_entropy(tape: &mut Tape, logits: Var, targets: DenseArray) -> Result<Var> {
    let n = targets.rows() as f64;
    let probs = tape.softmax(logits)?;
    let logp = tape.log(probs)?;
    let y = tape.constant(targets);
    let picked = tape.mul(logp, y)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / n)
}

/// Minibatch index order for every epoch, drawn from one seeded stream.
fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Fraction of `set` that `net` classifies correctly.
pub fn net_accuracy(net: &DenseNet, set: &LabeledSet) -> Result<f64> {
    let pred = net.logits(set.features())?.values().argmax_rows();
    Ok(set.accuracy(&pred))
}

pub fn prior_accuracy(prior: &PriorModel, set: &LabeledSet) -> Result<f64> {
    let pred = prior.predict(set.features(), &prior.zero_context())?.argmax_rows();
    Ok(set.accuracy(&pred))
}

/// Cross-entropy training of the source classifier. Returns the trained net
/// and its accuracy on the training set.
pub fn pretrain_source(mut net: DenseNet, data: &LabeledSet, cfg: &TrainConfig) -> Result<(DenseNet, f64)> {
    cfg.validate()?;
    let labels = data.labels()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch("pretrain_source"));
    }
    if data.num_classes() != net.output_dim() {
        return Err(Error::InvalidConfig(format!(
            "data has {} classes, net outputs {}",
            data.num_classes(),
            net.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        for batch in batches(data.len(), cfg.batch_size, &mut rng) {
            let x = data.features().select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let xv = tape.constant(x);
            let logits = net.forward(&mut tape, &vars, xv)?;
            let loss = cross_entropy(&mut tape, logits, one_hot(&y, data.num_classes()))?;
            let grads = tape.backward(loss)?;
            net.apply_gradients(&grads, &vars, cfg.lr)?;
        }
    }
    let acc = net_accuracy(&net, data)?;
    Ok((net, acc))
}

/// Trains the prior's encoder and class embeddings jointly with the context
/// held at zero, then freezes them.
pub fn pretrain_prior(mut prior: PriorModel, data: &LabeledSet, cfg: &TrainConfig) -> Result<PriorModel> {
    cfg.validate()?;
    let labels = data.labels()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch("pretrain_prior"));
    }
    if prior.is_frozen() {
        return Err(Error::Frozen("prior is already pretrained".into()));
    }
    if data.num_classes() != prior.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "data has {} classes, prior has {}",
            data.num_classes(),
            prior.num_classes()
        )));
    }
    let v = prior.zero_context();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        for batch in batches(data.len(), cfg.batch_size, &mut rng) {
            let x = data.features().select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let vars = prior.register(&mut tape, &v, true, false)?;
            let xv = tape.constant(x);
            let scores = prior.forward(&mut tape, &vars, xv)?;
            let loss = cross_entropy(&mut tape, scores, one_hot(&y, data.num_classes()))?;
            let grads = tape.backward(loss)?;
            prior.update_backbone(&grads, &vars, cfg.lr)?;
        }
    }
    prior.freeze();
    Ok(prior)
}
