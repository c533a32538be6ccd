//! Reverse-mode differentiation over a linear operation tape.
//!
//! Every traced operation appends a node holding its forward value and the
//! indices of its inputs. `backward` walks the nodes in reverse order, so the
//! accumulation order is fixed by the order the forward pass was recorded in.

use std::sync::atomic::{AtomicU64, Ordering};

use super::array::{DenseArray, LOG_FLOOR};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize),
    SumRows(usize),
    SumCols(usize),
    Sum(usize),
    Transpose(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    MaskedRowProd(usize, DenseArray),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf | Op::Const => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Transpose(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::MaskedRowProd(a, _) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseArray,
    op: Op,
}

/// Recording of a forward computation. Not shared between threads.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.idx < self.nodes.len() {
            Ok(v.idx)
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn push(&mut self, value: DenseArray, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("tape op `{name}`")));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Records a differentiable input (a parameter or a perturbation).
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.idx].value
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        v.tape == self.id && matches!(self.nodes[v.idx].op, Op::Leaf)
    }

    pub fn is_constant(&self, v: Var) -> bool {
        v.tape == self.id && matches!(self.nodes[v.idx].op, Op::Const)
    }

    /// Whether `root` was computed (transitively) from `input`.
    pub fn depends_on(&self, root: Var, input: Var) -> Result<bool> {
        let root = self.check(root)?;
        let input = self.check(input)?;
        if input > root {
            return Ok(false);
        }
        let mut reach = vec![false; root + 1];
        reach[root] = true;
        for i in (input..=root).rev() {
            if !reach[i] {
                continue;
            }
            if i == input {
                return Ok(true);
            }
            for j in self.nodes[i].op.inputs() {
                reach[j] = true;
            }
        }
        Ok(false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        self.push(v, Op::MatMul(ia, ib), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        self.push(v, Op::Add(ia, ib), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value)?;
        self.push(v, Op::Sub(ia, ib), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.mul(&self.nodes[ib].value)?;
        self.push(v, Op::Mul(ia, ib), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.scale(s);
        self.push(v, Op::Scale(ia, s), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.tanh();
        self.push(v, Op::Tanh(ia), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.exp();
        self.push(v, Op::Exp(ia), "exp")
    }

    /// `log(max(x, 1e-12))`; the derivative is zero below the floor.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.log();
        self.push(v, Op::Log(ia), "log")
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.softmax_rows();
        self.push(v, Op::Softmax(ia), "softmax")
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.sum_rows();
        self.push(v, Op::SumRows(ia), "sum_rows")
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.sum_cols();
        self.push(v, Op::SumCols(ia), "sum_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = DenseArray::scalar(self.nodes[ia].value.sum());
        self.push(v, Op::Sum(ia), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.transpose();
        self.push(v, Op::Transpose(ia), "transpose")
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.broadcast_rows(n)?;
        self.push(v, Op::BroadcastRows(ia), "broadcast_rows")
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.broadcast_cols(m)?;
        self.push(v, Op::BroadcastCols(ia), "broadcast_cols")
    }

    pub fn masked_row_prod(&mut self, a: Var, mask: DenseArray) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.masked_row_prod(&mask)?;
        self.push(v, Op::MaskedRowProd(ia, mask), "masked_row_prod")
    }

    /// `x + bias` with a `1 x m` bias repeated over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).rows();
        let b = self.broadcast_rows(bias, n)?;
        self.add(x, b)
    }

    /// Gradient of the scalar `root` with respect to every leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.check(root)?;
        if !self.nodes[r].value.is_scalar() {
            return Err(Error::NotScalar(self.nodes[r].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; r + 1];
        grads[r] = Some(DenseArray::scalar(1.0));

        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Const => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = g.matmul(&bv.transpose())?;
                    let gb = av.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.nodes[*b].value)?;
                    let gb = g.mul(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Tanh(a) => {
                    let d = node.value.map(|t| 1.0 - t * t);
                    accumulate(&mut grads, *a, g.mul(&d)?);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.mul(&node.value)?),
                Op::Log(a) => {
                    let d = self.nodes[*a]
                        .value
                        .map(|x| if x > LOG_FLOOR { 1.0 / x } else { 0.0 });
                    accumulate(&mut grads, *a, g.mul(&d)?);
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let mut gin = g.mul(s)?;
                    for row in 0..s.rows() {
                        let dot: f64 = gin.row_slice(row).iter().sum();
                        let srow = s.row_slice(row);
                        for (v, &sv) in gin.row_slice_mut(row).iter_mut().zip(srow) {
                            *v -= sv * dot;
                        }
                    }
                    accumulate(&mut grads, *a, gin);
                }
                Op::SumRows(a) => {
                    let m = self.nodes[*a].value.cols();
                    accumulate(&mut grads, *a, g.broadcast_cols(m)?);
                }
                Op::SumCols(a) => {
                    let n = self.nodes[*a].value.rows();
                    accumulate(&mut grads, *a, g.broadcast_rows(n)?);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[*a].value.shape();
                    let gin = DenseArray::filled(shape[0], shape[1], g.item()?);
                    accumulate(&mut grads, *a, gin);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::BroadcastRows(a) => accumulate(&mut grads, *a, g.sum_cols()),
                Op::BroadcastCols(a) => accumulate(&mut grads, *a, g.sum_rows()),
                Op::MaskedRowProd(a, mask) => {
                    let x = &self.nodes[*a].value;
                    let mut gin = DenseArray::zeros(x.rows(), x.cols());
                    for row in 0..x.rows() {
                        let xr = x.row_slice(row);
                        let mr = mask.row_slice(row);
                        let gr = g.get(row, 0);
                        for j in 0..x.cols() {
                            if mr[j] == 0.0 {
                                continue;
                            }
                            let others: f64 = (0..x.cols())
                                .filter(|&k| k != j && mr[k] != 0.0)
                                .map(|k| xr[k])
                                .product();
                            gin.set(row, j, gr * others);
                        }
                    }
                    accumulate(&mut grads, *a, gin);
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf))
            .collect();
        let shapes = self
            .nodes
            .iter()
            .map(|n| [n.value.rows(), n.value.cols()])
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            leaves,
            shapes,
        })
    }
}

fn accumulate(grads: &mut [Option<DenseArray>], idx: usize, g: DenseArray) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<DenseArray>>,
    leaves: Vec<bool>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for a leaf. Leaves the root does not depend on get exact zeros.
    pub fn wrt(&self, v: Var) -> Result<DenseArray> {
        if v.tape != self.tape || v.idx >= self.leaves.len() {
            return Err(Error::ForeignVar);
        }
        if !self.leaves[v.idx] {
            return Err(Error::NotALeaf(v.idx));
        }
        let g = match self.grads.get(v.idx).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.idx];
                DenseArray::zeros(r, c)
            }
        };
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of leaf {}", v.idx)));
        }
        Ok(g)
    }
}
