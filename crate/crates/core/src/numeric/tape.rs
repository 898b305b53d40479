//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation together with its forward value.
//! Nodes can only reference nodes that already exist on the same tape, so
//! the recorded graph is acyclic by construction; a [`Var`] from another
//! tape or a stale index is rejected when the operation is recorded.
//!
//! ```
//! use density_softmax::numeric::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Matrix::new(2, 1, vec![1.0, -2.0]).unwrap());
//! let x = tape.leaf(Matrix::new(1, 2, vec![3.0, 4.0]).unwrap());
//! let y = tape.matmul(x, w).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).data(), &[3.0, 4.0]);
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};

use super::matrix::Matrix;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: usize,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    SumRows(usize),
    Sum(usize),
    Mean(usize),
    SelectCols(usize, Vec<usize>),
    MergeCols {
        a: usize,
        a_idx: Vec<usize>,
        b: usize,
        b_idx: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: Vec<Matrix>,
}

impl Gradients {
    /// Gradient for the leaf `v`. Leaves the loss does not depend on get
    /// zeros; interior nodes always report zeros since their gradient is
    /// consumed during the sweep.
    pub fn get(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.tape, "variable belongs to another tape");
        &self.grads[v.index]
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<Matrix> {
        vars.iter().map(|&v| self.get(v).clone()).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
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
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::invalid(
                "variable does not refer to an earlier node of this tape",
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    /// Records a parameter or constant input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(v, Op::MatMul(ia, ib)))
    }

    /// `a + 1·bias` where `bias` is a single row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let v = self.nodes[ia].value.add_row(&self.nodes[ib].value)?;
        Ok(self.push(v, Op::AddRow(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.zip_map(&self.nodes[ib].value, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(ia, ib)))
    }

    /// Scales row `i` of `a` by `col[i]`; `col` is `n x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ia, ic) = (self.check(a)?, self.check(col)?);
        let (am, cm) = (&self.nodes[ia].value, &self.nodes[ic].value);
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} by column {:?}", am.shape(), cm.shape()),
            ));
        }
        let mut v = am.clone();
        for r in 0..v.rows() {
            let s = cm.get(r, 0);
            v.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(v, Op::MulCol(ia, ic)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.scale(k);
        Ok(self.push(v, Op::Scale(ia, k)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(ia)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(super::tanh);
        Ok(self.push(v, Op::Tanh(ia)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(f64::exp);
        Ok(self.push(v, Op::Exp(ia)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.map(|x| x * x);
        Ok(self.push(v, Op::Square(ia)))
    }

    /// Row sums: `n x c -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let m = &self.nodes[ia].value;
        let v = Matrix::column_vector(m.row_iter().map(|r| r.iter().sum()).collect());
        Ok(self.push(v, Op::SumRows(ia)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = Matrix::scalar(self.nodes[ia].value.sum());
        Ok(self.push(v, Op::Sum(ia)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let m = &self.nodes[ia].value;
        if m.is_empty() {
            return Err(Error::invalid("mean of an empty matrix"));
        }
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        Ok(self.push(v, Op::Mean(ia)))
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let m = &self.nodes[ia].value;
        if let Some(&bad) = idx.iter().find(|&&c| c >= m.cols()) {
            return Err(Error::shape(
                "select_cols",
                format!("column {bad} of {}", m.cols()),
            ));
        }
        let v = m.select_cols(idx);
        Ok(self.push(v, Op::SelectCols(ia, idx.to_vec())))
    }

    /// Interleaves the columns of `a` and `b` into a matrix of width
    /// `a_idx.len() + b_idx.len()`, column `a_idx[j]` taken from `a[:, j]`
    /// and likewise for `b`. The two index sets must partition the output.
    pub fn merge_cols(&mut self, a: Var, a_idx: &[usize], b: Var, b_idx: &[usize]) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (am, bm) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let width = a_idx.len() + b_idx.len();
        let mut seen = vec![false; width];
        for &c in a_idx.iter().chain(b_idx) {
            if c >= width || seen[c] {
                return Err(Error::shape("merge_cols", "index sets do not partition"));
            }
            seen[c] = true;
        }
        if am.cols() != a_idx.len() || bm.cols() != b_idx.len() || am.rows() != bm.rows() {
            return Err(Error::shape(
                "merge_cols",
                format!("{:?} and {:?}", am.shape(), bm.shape()),
            ));
        }
        let mut v = Matrix::zeros(am.rows(), width);
        for r in 0..am.rows() {
            let out = v.row_mut(r);
            for (j, &c) in a_idx.iter().enumerate() {
                out[c] = am.get(r, j);
            }
            for (j, &c) in b_idx.iter().enumerate() {
                out[c] = bm.get(r, j);
            }
        }
        Ok(self.push(
            v,
            Op::MergeCols {
                a: ia,
                a_idx: a_idx.to_vec(),
                b: ib,
                b_idx: b_idx.to_vec(),
            },
        ))
    }

    /// Mean cross-entropy of `softmax(logits)` against integer labels,
    /// computed through a max-shifted log-softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let m = &self.nodes[il].value;
        if m.rows() != labels.len() || m.rows() == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} logit rows for {} labels", m.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= m.cols()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                m.cols()
            )));
        }
        let mut probs = Matrix::zeros(m.rows(), m.cols());
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = m.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let v = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.nodes[il].value.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[il].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[il] = Some(Matrix::scalar(1.0));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, g.matmul_t(bv)?);
                    accumulate(&mut grads, *b, av.t_matmul(&g)?);
                }
                Op::AddRow(a, b) => {
                    let mut gb = vec![0.0; g.cols()];
                    for r in g.row_iter() {
                        gb.iter_mut().zip(r).for_each(|(acc, v)| *acc += v);
                    }
                    accumulate(&mut grads, *b, Matrix::row_vector(gb));
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, g.zip_map(bv, |x, y| x * y)?);
                    accumulate(&mut grads, *b, g.zip_map(av, |x, y| x * y)?);
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (&self.nodes[*a].value, &self.nodes[*c].value);
                    let mut ga = g.clone();
                    let mut gc = Vec::with_capacity(g.rows());
                    for r in 0..g.rows() {
                        let s = cv.get(r, 0);
                        gc.push(super::matrix::dot(g.row(r), av.row(r)));
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *c, Matrix::column_vector(gc));
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scale(*k)),
                Op::Relu(a) => {
                    let av = &self.nodes[*a].value;
                    let ga = g.zip_map(av, |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y)?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let av = &self.nodes[*a].value;
                    let ga = g.zip_map(av, |gv, x| 2.0 * gv * x)?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let gv = g.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|x| *x = gv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = &self.nodes[*a].value;
                    accumulate(&mut grads, *a, Matrix::filled(av.rows(), av.cols(), g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let av = &self.nodes[*a].value;
                    let gv = g.get(0, 0) / av.len() as f64;
                    accumulate(&mut grads, *a, Matrix::filled(av.rows(), av.cols(), gv));
                }
                Op::SelectCols(a, idx) => {
                    let av = &self.nodes[*a].value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        let src = g.row(r);
                        let dst = ga.row_mut(r);
                        for (j, &c) in idx.iter().enumerate() {
                            dst[c] += src[j];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MergeCols { a, a_idx, b, b_idx } => {
                    accumulate(&mut grads, *a, g.select_cols(a_idx));
                    accumulate(&mut grads, *b, g.select_cols(b_idx));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        let row = gl.row_mut(r);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols())))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foreign_var_is_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(Matrix::scalar(1.0));
        let _ = t2.leaf(Matrix::scalar(1.0));
        assert!(t2.relu(a).is_err());
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(2.0));
        let b = t.leaf(Matrix::new(1, 2, vec![1.0, 1.0]).unwrap());
        let l = t.square(a).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).data(), &[4.0]);
        assert_eq!(g.get(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 2));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn linear_sum_gradient_is_input_broadcast() {
        // loss = sum(x W) => dL/dW[i, j] = sum over rows of x[:, i]
        let mut t = Tape::new();
        let x = t.leaf(Matrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = t.leaf(Matrix::zeros(3, 2));
        let y = t.matmul(x, w).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).data(), &[5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(3.0));
        let b = t.mul(a, a).unwrap();
        let c = t.add(b, a).unwrap();
        let g = t.backward(c).unwrap();
        assert_eq!(g.get(a).data(), &[7.0]);
    }
}
