//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node; node indices are therefore a topological
//! order and the backward pass simply walks them in reverse.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dropout_mask, gemm_nn, gemm_nt, gemm_tn, layer_norm_forward, Tensor};

/// Handle to a value slot on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mask(Var, Tensor),
    Sum(Var),
    Square(Var),
    Reshape(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MseLoss(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of operations. One tape per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient accumulators indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not reach the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.last_dim())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_row_bias(self.value(bias))?;
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).tanh();
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) =
            layer_norm_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout; returns `x` itself when inert so inference stays bit-identical.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut impl Rng,
        training: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        match dropout_mask(&shape, rate, rng, training)? {
            None => Ok(x),
            Some(mask) => {
                let out = self.value(x).mul(&mask)?;
                Ok(self.push(out, Op::Mask(x, mask)))
            }
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Rows `[start, start + len)` of `a` viewed as a matrix over its last axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = rows_cols(t);
        if len == 0 || start + len > r {
            return Err(Error::dim("slice_rows", t.shape(), &[start, len]));
        }
        let out = Tensor::new(
            vec![len, c],
            t.data()[start * c..(start + len) * c].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let c = self.value(*first).last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.last_dim() != c {
                return Err(Error::dim("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = rows_cols(t);
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_cols", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let r = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != r {
                return Err(Error::dim("concat_cols", self.shape(*first), t.shape()));
            }
            total += t.last_dim();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `k` of the output is row `indices[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = rows_cols(t);
        if indices.is_empty() || indices.iter().any(|&i| i >= r) {
            return Err(Error::dim("gather_rows", t.shape(), &[indices.len()]));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::dim("mse_loss", p.shape(), target.shape()));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::MseLoss(pred, target.clone())))
    }

    /// Reverse pass seeded with `d loss = 1`. Gradients are summed on fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.rows(), av.last_dim());
                let n = bv.last_dim();
                accumulate_with(grads, *a, av, |ga| {
                    gemm_nt(g.data(), bv.data(), ga, m, n, k)
                });
                accumulate_with(grads, *b, bv, |gb| {
                    gemm_tn(av.data(), g.data(), gb, k, m, n)
                });
            }
            Op::MatMulNt(a, b) => {
                // out = a · bᵀ, a: m×k, b: n×k
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.rows(), av.last_dim());
                let n = bv.rows();
                accumulate_with(grads, *a, av, |ga| {
                    gemm_nn(g.data(), bv.data(), ga, m, n, k)
                });
                accumulate_with(grads, *b, bv, |gb| {
                    gemm_tn(g.data(), av.data(), gb, n, m, k)
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, &g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, &g.mul(val(*b)).expect("shape"));
                accumulate(grads, *b, &g.mul(val(*a)).expect("shape"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, &g.scale(*s)),
            Op::AddRowBias(x, b) => {
                accumulate(grads, *x, g);
                let bv = val(*b);
                let c = bv.len();
                accumulate_with(grads, *b, bv, |gb| {
                    for row in g.data().chunks(c) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let d = zip_map(g, out, |gi, y| gi * (1.0 - y * y));
                accumulate(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, out, |gi, y| gi * y * (1.0 - y));
                accumulate(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d = zip_map(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                accumulate(grads, *a, &d);
            }
            Op::SoftmaxRows(a) => {
                let c = out.last_dim();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dv, y) in drow.iter_mut().zip(yrow) {
                        *dv = y * (*dv - dot);
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain);
                let d = gv.len();
                let nf = d as f64;
                let mut dx = Tensor::zeros(val(*x).shape());
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for (r, grow) in g.data().chunks(d).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        dgain[j] += grow[j] * xh[j];
                        dbias[j] += grow[j];
                        let dxh = grow[j] * gv.data()[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let scale = inv_std[r] / nf;
                    let dxrow = &mut dx.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        let dxh = grow[j] * gv.data()[j];
                        dxrow[j] = scale * (nf * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                accumulate(grads, *x, &dx);
                let shape = gv.shape().to_vec();
                accumulate(
                    grads,
                    *gain,
                    &Tensor::new(shape.clone(), dgain).expect("shape"),
                );
                accumulate(grads, *bias, &Tensor::new(shape, dbias).expect("shape"));
            }
            Op::Mask(a, mask) => accumulate(grads, *a, &g.mul(mask).expect("shape")),
            Op::Sum(a) => {
                let gi = g.item();
                accumulate(grads, *a, &Tensor::full(val(*a).shape(), gi));
            }
            Op::Square(a) => {
                let d = zip_map(g, val(*a), |gi, x| 2.0 * gi * x);
                accumulate(grads, *a, &d);
            }
            Op::Reshape(a) => {
                let d = g.reshape(val(*a).shape()).expect("shape");
                accumulate(grads, *a, &d);
            }
            Op::SliceRows(a, start) => {
                let av = val(*a);
                let c = av.last_dim();
                accumulate_with(grads, *a, av, |ga| {
                    let dst = &mut ga[start * c..start * c + g.len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    accumulate_with(grads, p, pv, |gp| {
                        for (d, s) in gp.iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d += s;
                        }
                    });
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let c = av.last_dim();
                let len = out.last_dim();
                accumulate_with(grads, *a, av, |ga| {
                    for (i, grow) in g.data().chunks(len).enumerate() {
                        let dst = &mut ga[i * c + start..i * c + start + len];
                        for (d, s) in dst.iter_mut().zip(grow) {
                            *d += s;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.last_dim();
                    accumulate_with(grads, p, pv, |gp| {
                        for (i, prow) in gp.chunks_mut(w).enumerate() {
                            let src = &g.data()[i * total + offset..i * total + offset + w];
                            for (d, s) in prow.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(a, indices) => {
                let av = val(*a);
                let c = av.last_dim();
                accumulate_with(grads, *a, av, |ga| {
                    for (k, &i) in indices.iter().enumerate() {
                        let src = &g.data()[k * c..(k + 1) * c];
                        for (d, s) in ga[i * c..(i + 1) * c].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::MseLoss(pred, target) => {
                let pv = val(*pred);
                let k = 2.0 * g.item() / pv.len() as f64;
                let d = zip_map(pv, target, |p, t| k * (p - t));
                accumulate(grads, *pred, &d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_with(
    grads: &mut [Option<Tensor>],
    v: Var,
    like: &Tensor,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = &mut grads[v.0];
    let acc = slot.get_or_insert_with(|| Tensor::zeros(like.shape()));
    f(acc.data_mut());
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn inert_dropout_returns_same_slot() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.leaf(Tensor::full(&[3], 1.5));
        assert_eq!(tape.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
    }

    #[test]
    fn mse_gradient_matches_formula() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(&[&[1.0, 4.0], &[0.0, -2.0]]));
        let target = Tensor::matrix(&[&[0.0, 1.0], &[2.0, -2.0]]);
        let l = tape.mse_loss(p, &target).unwrap();
        assert_eq!(tape.value(l).item(), (1.0 + 9.0 + 4.0) / 4.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[0.5, 1.5, -1.0, 0.0]);

        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(&[&[0.0]]));
        let l = tape.mse_loss(p, &Tensor::matrix(&[&[2.0]])).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
    }
}
