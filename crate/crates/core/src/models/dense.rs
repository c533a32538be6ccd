use rand::Rng;
use rand_distr::Uniform;

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Gradients, Tape, Var};

/// Raw class scores, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(DenseArray);

impl Logits {
    pub fn values(&self) -> &DenseArray {
        &self.0
    }

    pub fn probs(&self) -> DenseArray {
        self.0.softmax_rows()
    }

    pub fn into_inner(self) -> DenseArray {
        self.0
    }
}

/// Fully connected classifier: tanh on hidden layers, linear output.
///
/// The same parameter set serves both the clean and the perturbed evaluation
/// paths of the target model.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    weights: Vec<DenseArray>,
    biases: Vec<DenseArray>,
}

/// Tape handles for a [`DenseNet`]'s parameters.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl NetVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
    }
}

impl DenseNet {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for w in net.weights.iter_mut() {
            let (fan_in, fan_out) = (w.rows(), w.cols());
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            for v in w.data_mut() {
                *v = rng.sample(dist);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer widths {widths:?} need at least an input and an output, all positive"
            )));
        }
        let weights = widths
            .windows(2)
            .map(|w| DenseArray::zeros(w[0], w[1]))
            .collect();
        let biases = widths[1..].iter().map(|&w| DenseArray::zeros(1, w)).collect();
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub(crate) fn from_parts(weights: Vec<DenseArray>, biases: Vec<DenseArray>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Checkpoint("layer count mismatch".into()));
        }
        let mut widths = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.rows() != *widths.last().unwrap() || b.rows() != 1 || b.cols() != w.cols() {
                return Err(Error::Checkpoint(format!(
                    "inconsistent layer shapes {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            widths.push(w.cols());
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params().map(DenseArray::len).sum()
    }

    /// Parameters in layer order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> impl Iterator<Item = &DenseArray> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
    }

    /// Mutable parameters in the same order as [`DenseNet::params`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut DenseArray> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn weights_mut(&mut self) -> &mut [DenseArray] {
        &mut self.weights
    }

    pub fn weights(&self) -> &[DenseArray] {
        &self.weights
    }

    pub fn biases(&self) -> &[DenseArray] {
        &self.biases
    }

    fn check_input(&self, x: &DenseArray) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "dense net input",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.input_dim()],
            });
        }
        Ok(())
    }

    /// Untraced forward pass.
    pub fn logits(&self, x: &DenseArray) -> Result<Logits> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.add(&b.broadcast_rows(h.rows())?)?;
            if i < last {
                h = h.tanh();
            }
        }
        Ok(Logits(h))
    }

    /// Records the parameters on `tape`, as leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let mut put = |a: &DenseArray| {
            if trainable {
                tape.leaf(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let weights = self.weights.iter().map(&mut put).collect();
        let biases = self.biases.iter().map(&mut put).collect();
        NetVars { weights, biases }
    }

    /// Traced forward pass returning logits.
    pub fn forward(&self, tape: &mut Tape, vars: &NetVars, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let last = vars.weights.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in vars.weights.iter().zip(&vars.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if i < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// One gradient-descent step on every parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients, vars: &NetVars, lr: f64) -> Result<()> {
        let mut steps = Vec::with_capacity(self.weights.len() * 2);
        for var in vars.all() {
            steps.push(grads.wrt(var)?);
        }
        for (param, g) in self.params_mut().zip(steps) {
            for (p, d) in param.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * d;
            }
        }
        Ok(())
    }
}

/// Logits and softmax probabilities of `net` on `x`.
pub fn classifier_predict(net: &DenseNet, x: &DenseArray) -> Result<(Logits, DenseArray)> {
    let logits = net.logits(x)?;
    let probs = logits.probs();
    Ok((logits, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::compare_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_predicts_uniform() {
        let net = DenseNet::zeros(&[3, 4, 5]).unwrap();
        let x = DenseArray::from_rows(&[vec![1.0, -2.0, 0.3], vec![9.0, 9.0, 9.0]]).unwrap();
        let (_, p) = classifier_predict(&net, &x).unwrap();
        for &v in p.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn traced_and_direct_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::new(&[3, 6, 4], &mut rng).unwrap();
        let x = DenseArray::from_rows(&[vec![0.1, 0.2, -0.7], vec![1.0, 0.0, 0.5]]).unwrap();
        let (logits, probs) = classifier_predict(&net, &x).unwrap();
        assert_eq!(probs, logits.values().softmax_rows());
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, true);
        let xv = tape.constant(x);
        let out = net.forward(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(out), logits.values());
    }

    #[test]
    fn width_mismatch() {
        let net = DenseNet::zeros(&[3, 2]).unwrap();
        assert!(net.logits(&DenseArray::zeros(1, 4)).is_err());
        assert!(DenseNet::zeros(&[3]).is_err());
    }

    #[test]
    fn max_logit_gradient_wrt_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(&[4, 8, 3], &mut rng).unwrap();
        let x0 = DenseArray::row(vec![0.3, -0.2, 0.9, 0.1]);
        let k = net.logits(&x0).unwrap().values().argmax_rows()[0];

        let mut tape = Tape::new();
        let vars = net.register(&mut tape, false);
        let x = tape.leaf(x0.clone());
        let logits = net.forward(&mut tape, &vars, x).unwrap();
        let mut mask = DenseArray::zeros(1, 3);
        mask.set(0, k, 1.0);
        let m = tape.constant(mask);
        let picked = tape.mul(logits, m).unwrap();
        let root = tape.sum(picked).unwrap();
        let g = tape.backward(root).unwrap().wrt(x).unwrap();

        let err = compare_gradient(
            |p| Ok(net.logits(p)?.values().get(0, k)),
            &x0,
            &g,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
