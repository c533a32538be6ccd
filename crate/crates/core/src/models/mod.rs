//! The target classifier, the prior model with its prompt context, their
//! pretraining, and checkpoint files.

mod checkpoint;
mod dense;
mod prior;
mod train;

pub use checkpoint::{Checkpoint, Tensor, KIND_NET, KIND_PRIOR};
pub use dense::{classifier_predict, DenseNet, Logits, NetVars};
pub use prior::{prior_predict, PriorModel, PriorVars, PromptContext};
pub use train::{net_accuracy, prior_accuracy, pretrain_prior, pretrain_source, TrainConfig};

use sha2::{Digest, Sha256};

use crate::numerics::DenseArray;

/// SHA-256 over shapes and little-endian payloads, hex encoded.
pub fn fingerprint<'a>(arrays: impl IntoIterator<Item = &'a DenseArray>) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        for &d in a.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in a.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl DenseNet {
    pub fn fingerprint(&self) -> String {
        fingerprint(self.params())
    }
}

impl PriorModel {
    /// Fingerprint of the frozen parts: encoder, class embeddings, temperature.
    pub fn fingerprint(&self) -> String {
        let t = DenseArray::scalar(self.temperature());
        fingerprint(
            self.encoder()
                .params()
                .chain([self.class_embeddings(), &t]),
        )
    }
}

impl PromptContext {
    pub fn fingerprint(&self) -> String {
        fingerprint([self.values()])
    }
}
