use rand::Rng;
use rand_distr::Uniform;

use super::dense::{DenseNet, NetVars};
use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Gradients, Tape, Var};

/// Learnable offset added to every class embedding of a [`PriorModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext(DenseArray);

impl PromptContext {
    pub fn zeros(k: usize) -> Self {
        Self(DenseArray::zeros(1, k))
    }

    pub fn new(values: Vec<f64>) -> Self {
        Self(DenseArray::row(values))
    }

    pub fn values(&self) -> &DenseArray {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub(crate) fn step(&mut self, grad: &DenseArray, lr: f64) {
        for (p, d) in self.0.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * d;
        }
    }
}

/// Broadly pretrained teacher: `softmax(<tanh(encoder(x)) + v, e_c> / T)`.
///
/// The context `v` shifts class `c`'s score by `<v, e_c> / T`, so only its
/// component along embedding differences changes the prediction.
///
/// After pretraining the encoder and class embeddings are frozen; only the
/// prompt context `v` changes during adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    encoder: DenseNet,
    class_embeddings: DenseArray,
    temperature: f64,
    frozen: bool,
}

/// Tape handles for a prior forward pass.
#[derive(Debug, Clone)]
pub struct PriorVars {
    pub encoder: NetVars,
    pub embeddings: Var,
    pub context: Var,
}

impl PriorModel {
    /// `encoder_widths` runs from the input dim to the feature dim `k`.
    pub fn new<R: Rng + ?Sized>(
        encoder_widths: &[usize],
        num_classes: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {temperature} must be positive"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig("prior needs at least 2 classes".into()));
        }
        let encoder = DenseNet::new(encoder_widths, rng)?;
        let k = encoder.output_dim();
        let limit = (6.0 / (k + num_classes) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let data = (0..num_classes * k).map(|_| rng.sample(dist)).collect();
        Ok(Self {
            encoder,
            class_embeddings: DenseArray::new(num_classes, k, data)?,
            temperature,
            frozen: false,
        })
    }

    pub fn from_parts(encoder: DenseNet, class_embeddings: DenseArray, temperature: f64, frozen: bool) -> Result<Self> {
        if class_embeddings.cols() != encoder.output_dim() {
            return Err(Error::ShapeMismatch {
                op: "prior embeddings",
                left: class_embeddings.shape().to_vec(),
                right: vec![class_embeddings.rows(), encoder.output_dim()],
            });
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {temperature} must be positive"
            )));
        }
        Ok(Self {
            encoder,
            class_embeddings,
            temperature,
            frozen,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn class_embeddings(&self) -> &DenseArray {
        &self.class_embeddings
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("prior temperature".into()));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn zero_context(&self) -> PromptContext {
        PromptContext::zeros(self.feature_dim())
    }

    fn check_context(&self, v: &DenseArray) -> Result<()> {
        if v.rows() != 1 || v.cols() != self.feature_dim() {
            return Err(Error::ShapeMismatch {
                op: "prompt context",
                left: v.shape().to_vec(),
                right: vec![1, self.feature_dim()],
            });
        }
        Ok(())
    }

    pub fn features(&self, x: &DenseArray) -> Result<DenseArray> {
        Ok(self.encoder.logits(x)?.into_inner().tanh())
    }

    /// Class scores for given encoder features.
    pub fn scores_from_features(&self, features: &DenseArray, v: &PromptContext) -> Result<DenseArray> {
        self.check_context(v.values())?;
        let shifted = features.add(&v.values().broadcast_rows(features.rows())?)?;
        Ok(shifted
            .matmul(&self.class_embeddings.transpose())?
            .scale(1.0 / self.temperature))
    }

    /// Untraced predictive distribution with context `v`.
    pub fn predict(&self, x: &DenseArray, v: &PromptContext) -> Result<DenseArray> {
        let f = self.features(x)?;
        Ok(self.scores_from_features(&f, v)?.softmax_rows())
    }

    /// Records parameters on `tape`. Encoder and embeddings are leaves only
    /// when `train_backbone`; the context is a leaf only when `train_context`.
    pub fn register(
        &self,
        tape: &mut Tape,
        v: &PromptContext,
        train_backbone: bool,
        train_context: bool,
    ) -> Result<PriorVars> {
        self.check_context(v.values())?;
        let encoder = self.encoder.register(tape, train_backbone);
        let embeddings = if train_backbone {
            tape.leaf(self.class_embeddings.clone())
        } else {
            tape.constant(self.class_embeddings.clone())
        };
        let context = if train_context {
            tape.leaf(v.values().clone())
        } else {
            tape.constant(v.values().clone())
        };
        Ok(PriorVars {
            encoder,
            embeddings,
            context,
        })
    }

    /// Traced class scores (pre-softmax).
    pub fn forward(&self, tape: &mut Tape, vars: &PriorVars, x: Var) -> Result<Var> {
        let raw = self.encoder.forward(tape, &vars.encoder, x)?;
        let feats = tape.tanh(raw)?;
        let shifted = tape.add_row(feats, vars.context)?;
        let et = tape.transpose(vars.embeddings)?;
        let scores = tape.matmul(shifted, et)?;
        tape.scale(scores, 1.0 / self.temperature)
    }

    /// Gradient step on the encoder and class embeddings. Fails once frozen.
    pub fn update_backbone(&mut self, grads: &Gradients, vars: &PriorVars, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("prior encoder and class embeddings".into()));
        }
        let g_emb = grads.wrt(vars.embeddings)?;
        self.encoder.apply_gradients(grads, &vars.encoder, lr)?;
        for (p, d) in self.class_embeddings.data_mut().iter_mut().zip(g_emb.data()) {
            *p -= lr * d;
        }
        Ok(())
    }
}

/// Predictive distribution of the prior with context `v`.
pub fn prior_predict(prior: &PriorModel, x: &DenseArray, v: &PromptContext) -> Result<DenseArray> {
    prior.predict(x, v)
}
