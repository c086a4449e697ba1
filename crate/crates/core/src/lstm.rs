//! Peephole LSTM with full cell-facing weight matrices.
//!
//! Gates (row-vector convention, `σ` the logistic sigmoid):
//!
//! ```text
//! i_t = σ(x_t·W_xi + h_{t-1}·W_hi + c_{t-1}·W_ci + b_i)
//! f_t = σ(x_t·W_xf + h_{t-1}·W_hf + c_{t-1}·W_cf + b_f)
//! c̃_t = tanh(x_t·W_xc + h_{t-1}·W_hc + b_c)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ c̃_t
//! o_t = σ(x_t·W_xo + h_{t-1}·W_ho + c_t·W_co + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The output gate reads the updated cell state `c_t`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transformer::glorot;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams<T = Tensor> {
    pub w_xi: T,
    pub w_hi: T,
    pub w_ci: T,
    pub b_i: T,
    pub w_xf: T,
    pub w_hf: T,
    pub w_cf: T,
    pub b_f: T,
    pub w_xc: T,
    pub w_hc: T,
    pub b_c: T,
    pub w_xo: T,
    pub w_ho: T,
    pub w_co: T,
    pub b_o: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackParams<T = Tensor> {
    pub layers: Vec<LstmCellParams<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState<T = Var> {
    pub h: T,
    pub c: T,
}

macro_rules! cell_fields {
    ($m:ident) => {
        $m!(w_xi, w_hi, w_ci, b_i, w_xf, w_hf, w_cf, b_f, w_xc, w_hc, b_c, w_xo, w_ho, w_co, b_o)
    };
}

impl<T> LstmCellParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LstmCellParams<U> {
        macro_rules! build {
            ($($name:ident),*) => {
                LstmCellParams { $($name: f(&format!("{prefix}.{}", stringify!($name)), &self.$name)),* }
            };
        }
        cell_fields!(build)
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        macro_rules! visit {
            ($($name:ident),*) => {
                {
                    $(f(&format!("{prefix}.{}", stringify!($name)), &mut self.$name);)*
                }
            };
        }
        cell_fields!(visit);
    }
}

impl<T> StackParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> StackParams<U> {
        StackParams {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("{prefix}.layer{i}"), f))
                .collect(),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layer{i}"), f);
        }
    }
}

impl LstmCellParams {
    /// Glorot weights, zero biases except the forget gate (`+1`).
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let x = |rng: &mut _| glorot(input_dim, hidden, rng);
        let h = |rng: &mut _| glorot(hidden, hidden, rng);
        let zero = || Tensor::zeros(&[hidden]);
        LstmCellParams {
            w_xi: x(rng),
            w_hi: h(rng),
            w_ci: h(rng),
            b_i: zero(),
            w_xf: x(rng),
            w_hf: h(rng),
            w_cf: h(rng),
            b_f: Tensor::full(&[hidden], 1.0),
            w_xc: x(rng),
            w_hc: h(rng),
            b_c: zero(),
            w_xo: x(rng),
            w_ho: h(rng),
            w_co: h(rng),
            b_o: zero(),
        }
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let x = || Tensor::zeros(&[input_dim, hidden]);
        let h = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        LstmCellParams {
            w_xi: x(),
            w_hi: h(),
            w_ci: h(),
            b_i: b(),
            w_xf: x(),
            w_hf: h(),
            w_cf: h(),
            b_f: b(),
            w_xc: x(),
            w_hc: h(),
            b_c: b(),
            w_xo: x(),
            w_ho: h(),
            w_co: h(),
            b_o: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_in, hid) = (self.input_dim(), self.hidden());
        let expected = LstmCellParams::zeros(n_in, hid);
        let mut bad = None;
        let mut actual = Vec::new();
        self.map("", &mut |_, t| actual.push(t.shape().to_vec()));
        let mut it = actual.into_iter();
        expected.map("", &mut |name, t| {
            let found = it.next().expect("same field count");
            if bad.is_none() && found != t.shape() {
                bad = Some(Error::Config(format!(
                    "LSTM parameter {} has shape {found:?}, expected {:?}",
                    name.trim_start_matches('.'),
                    t.shape()
                )));
            }
        });
        bad.map_or(Ok(()), Err)
    }

    pub fn on_tape(&self, tape: &mut Tape) -> LstmCellParams<Var> {
        self.map("", &mut |_, t| tape.leaf(t.clone()))
    }
}

impl StackParams {
    pub fn init(input_dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..layers)
            .map(|k| LstmCellParams::init(if k == 0 { input_dim } else { hidden }, hidden, rng))
            .collect();
        StackParams { layers }
    }

    /// Checks each layer's input width against the previous layer's hidden width.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("LSTM stack needs at least one layer".into()));
        }
        let mut expected = input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.input_dim() != expected {
                return Err(Error::Config(format!(
                    "LSTM layer {k} expects input width {}, but receives {expected}",
                    layer.input_dim()
                )));
            }
            expected = layer.hidden();
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> StackParams<Var> {
        self.map("", &mut |_, t| tape.leaf(t.clone()))
    }
}

/// Per-gate `x·W_x + b` terms, precomputed for every row of a sequence.
struct InputTerms {
    i: Var,
    f: Var,
    c: Var,
    o: Var,
}

fn input_terms(tape: &mut Tape, xs: Var, p: &LstmCellParams<Var>) -> Result<InputTerms> {
    Ok(InputTerms {
        i: tape.affine(xs, p.w_xi, p.b_i)?,
        f: tape.affine(xs, p.w_xf, p.b_f)?,
        c: tape.affine(xs, p.w_xc, p.b_c)?,
        o: tape.affine(xs, p.w_xo, p.b_o)?,
    })
}

fn gate(tape: &mut Tape, input: Var, terms: &[(Var, Var)]) -> Result<Var> {
    let mut acc = input;
    for &(v, w) in terms {
        let vw = tape.matmul(v, w)?;
        acc = tape.add(acc, vw)?;
    }
    Ok(acc)
}

/// One step given the precomputed input terms `(x·W_xi + b_i, …)` for this step.
fn step_from_terms(
    tape: &mut Tape,
    xi: Var,
    xf: Var,
    xc: Var,
    xo: Var,
    prev: LstmState,
    p: &LstmCellParams<Var>,
) -> Result<LstmState> {
    let i = gate(tape, xi, &[(prev.h, p.w_hi), (prev.c, p.w_ci)])?;
    let i = tape.sigmoid(i);
    let f = gate(tape, xf, &[(prev.h, p.w_hf), (prev.c, p.w_cf)])?;
    let f = tape.sigmoid(f);
    let cand = gate(tape, xc, &[(prev.h, p.w_hc)])?;
    let cand = tape.tanh(cand);
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let o = gate(tape, xo, &[(prev.h, p.w_ho), (c, p.w_co)])?;
    let o = tape.sigmoid(o);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Single cell update. `x_t: [batch × in]`, state `[batch × hidden]`.
pub fn cell_step(
    tape: &mut Tape,
    x_t: Var,
    prev: LstmState,
    p: &LstmCellParams<Var>,
) -> Result<LstmState> {
    let hidden = tape.value(p.b_i).len();
    for v in [prev.h, prev.c] {
        if tape.value(v).last_dim() != hidden || tape.value(v).rows() != tape.value(x_t).rows() {
            return Err(Error::dim("cell_step", tape.shape(x_t), tape.shape(v)));
        }
    }
    let t = input_terms(tape, x_t, p)?;
    step_from_terms(tape, t.i, t.f, t.c, t.o, prev, p)
}

/// Zero `(h, c)` for `batch` sequences.
pub fn zero_state(tape: &mut Tape, batch: usize, hidden: usize) -> LstmState {
    let h = tape.leaf(Tensor::zeros(&[batch, hidden]));
    let c = tape.leaf(Tensor::zeros(&[batch, hidden]));
    LstmState { h, c }
}

/// Runs one layer over a time-major sequence `xs: [T·batch × in]` (rows
/// `t·batch .. (t+1)·batch` hold step `t`). Returns the time-major hidden
/// states `[T·batch × hidden]` and the final state.
pub fn sequence_forward_batched(
    tape: &mut Tape,
    xs: Var,
    batch: usize,
    init: LstmState,
    p: &LstmCellParams<Var>,
) -> Result<(Var, LstmState)> {
    let rows = tape.value(xs).rows();
    if rows == 0 || batch == 0 || !rows.is_multiple_of(batch) {
        return Err(Error::EmptySequence(format!(
            "sequence with {rows} rows cannot be split into batches of {batch}"
        )));
    }
    let steps = rows / batch;
    let terms = input_terms(tape, xs, p)?;
    let mut state = init;
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let (xi, xf, xc, xo) = if steps == 1 {
            (terms.i, terms.f, terms.c, terms.o)
        } else {
            (
                tape.slice_rows(terms.i, t * batch, batch)?,
                tape.slice_rows(terms.f, t * batch, batch)?,
                tape.slice_rows(terms.c, t * batch, batch)?,
                tape.slice_rows(terms.o, t * batch, batch)?,
            )
        };
        state = step_from_terms(tape, xi, xf, xc, xo, state, p)?;
        hs.push(state.h);
    }
    let hs = if hs.len() == 1 {
        hs[0]
    } else {
        tape.concat_rows(&hs)?
    };
    Ok((hs, state))
}

/// Single sequence `xs: [T × in]` → `(hs: [T × hidden], final state)`.
pub fn sequence_forward(
    tape: &mut Tape,
    xs: Var,
    init: LstmState,
    p: &LstmCellParams<Var>,
) -> Result<(Var, LstmState)> {
    if tape.value(xs).rows() == 0 {
        return Err(Error::EmptySequence("LSTM input has no time steps".into()));
    }
    sequence_forward_batched(tape, xs, 1, init, p)
}

/// Stacked layers over a time-major batch. Dropout is applied between layers
/// only. Returns the last layer's hidden states and its final state.
pub fn stack_forward(
    tape: &mut Tape,
    xs: Var,
    batch: usize,
    stack: &StackParams<Var>,
    dropout: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Result<(Var, LstmState)> {
    if stack.layers.is_empty() {
        return Err(Error::Config("LSTM stack needs at least one layer".into()));
    }
    let mut input = xs;
    let mut last = None;
    for (k, layer) in stack.layers.iter().enumerate() {
        let in_w = tape.value(layer.w_xi).shape()[0];
        if tape.value(input).last_dim() != in_w {
            return Err(Error::Config(format!(
                "LSTM layer {k} expects input width {in_w}, got {}",
                tape.value(input).last_dim()
            )));
        }
        if k > 0 {
            input = tape.dropout(input, dropout, rng, training)?;
        }
        let hidden = tape.value(layer.b_i).len();
        let init = zero_state(tape, batch, hidden);
        let (hs, state) = sequence_forward_batched(tape, input, batch, init, layer)?;
        input = hs;
        last = Some(state);
    }
    Ok((input, last.expect("non-empty stack")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_groups;
    use crate::tensor::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(tape: &mut Tape, h: Tensor, c: Tensor) -> LstmState {
        LstmState {
            h: tape.leaf(h),
            c: tape.leaf(c),
        }
    }

    #[test]
    fn zero_parameters_fixed_point() {
        let p = LstmCellParams::zeros(3, 2);
        let mut tape = Tape::new();
        let pv = p.on_tape(&mut tape);
        let x = tape.leaf(Tensor::matrix(&[&[0.4, -1.0, 2.0]]));
        let s0 = zero_state(&mut tape, 1, 2);
        let s1 = cell_step(&mut tape, x, s0, &pv).unwrap();
        assert_eq!(tape.value(s1.c).max_abs(), 0.0);
        assert_eq!(tape.value(s1.h).max_abs(), 0.0);
    }

    #[test]
    fn saturated_gates_preserve_memory() {
        let mut p = LstmCellParams::zeros(1, 1);
        p.b_f = Tensor::vector(vec![20.0]);
        p.b_i = Tensor::vector(vec![-20.0]);
        let mut tape = Tape::new();
        let pv = p.on_tape(&mut tape);
        let x = tape.leaf(Tensor::matrix(&[&[0.7]]));
        let s0 = state(
            &mut tape,
            Tensor::matrix(&[&[0.0]]),
            Tensor::matrix(&[&[0.8]]),
        );
        let s1 = cell_step(&mut tape, x, s0, &pv).unwrap();
        assert!((tape.value(s1.c).item() - 0.8).abs() < 1e-8);
    }

    #[test]
    fn scalar_hand_example() {
        let mut p = LstmCellParams::zeros(1, 1);
        p.w_xi = Tensor::matrix(&[&[1.0]]);
        p.w_hi = Tensor::matrix(&[&[1.0]]);
        p.w_ci = Tensor::matrix(&[&[1.0]]);
        let mut tape = Tape::new();
        let pv = p.on_tape(&mut tape);
        let x = tape.leaf(Tensor::matrix(&[&[1.0]]));
        let s0 = state(
            &mut tape,
            Tensor::matrix(&[&[0.5]]),
            Tensor::matrix(&[&[0.25]]),
        );
        let s1 = cell_step(&mut tape, x, s0, &pv).unwrap();
        // i = σ(1.75); f = o = σ(0); c̃ = 0 → c = 0.5·0.25
        let i = sigmoid(1.75);
        assert!((i - 0.851953).abs() < 1e-6);
        let c = 0.5 * 0.25;
        assert!((tape.value(s1.c).item() - c).abs() < 1e-15);
        assert!((tape.value(s1.h).item() - 0.5 * f64::tanh(c)).abs() < 1e-15);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut tape = Tape::new();
        let p = LstmCellParams::zeros(1, 1).on_tape(&mut tape);
        let s0 = zero_state(&mut tape, 1, 1);
        let xs = tape.leaf(Tensor::zeros(&[1, 1]));
        assert!(sequence_forward_batched(&mut tape, xs, 2, s0, &p).is_err());
    }

    #[test]
    fn stack_chaining_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut stack = StackParams::init(3, 4, 2, &mut rng);
        assert!(stack.validate(3).is_ok());
        assert!(stack.validate(2).is_err());
        stack.layers[1] = LstmCellParams::init(5, 4, &mut rng);
        assert!(stack.validate(3).is_err());
    }

    #[test]
    fn single_layer_stack_equals_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = StackParams::init(2, 3, 1, &mut rng);
        let xs = Tensor::uniform(&[5, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let sv = stack.on_tape(&mut tape);
        let x = tape.leaf(xs);
        let (hs, _) = stack_forward(&mut tape, x, 1, &sv, 0.0, &mut rng, true).unwrap();
        let s0 = zero_state(&mut tape, 1, 3);
        let (hs2, _) = sequence_forward(&mut tape, x, s0, &sv.layers[0]).unwrap();
        assert_eq!(tape.value(hs), tape.value(hs2));
    }

    #[test]
    fn hidden_state_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = LstmCellParams::init(2, 4, &mut rng);
        p.visit_mut("", &mut |_, t| *t = t.scale(5.0));
        let mut tape = Tape::new();
        let pv = p.on_tape(&mut tape);
        let xs = tape.leaf(Tensor::uniform(&[40, 2], 3.0, &mut rng));
        let s0 = zero_state(&mut tape, 1, 4);
        let (hs, _) = sequence_forward(&mut tape, xs, s0, &pv).unwrap();
        assert!(tape.value(hs).data().iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn cell_gradients_including_peepholes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = LstmCellParams::init(3, 4, &mut rng);
        let xs = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let target = Tensor::uniform(&[5, 4], 0.5, &mut rng);
        let mut named = Vec::new();
        p.map("cell", &mut |n, t| named.push((n.to_string(), t.clone())));

        let eval = |p: &LstmCellParams| {
            let mut tape = Tape::new();
            let pv = p.on_tape(&mut tape);
            let x = tape.leaf(xs.clone());
            let s0 = zero_state(&mut tape, 1, 4);
            let (hs, _) = sequence_forward(&mut tape, x, s0, &pv).unwrap();
            let loss = tape.mse_loss(hs, &target).unwrap();
            let mut g = tape.backward(loss).unwrap();
            let mut grads = Vec::new();
            pv.map("", &mut |_, v| {
                grads.push(g.take_or_zeros(*v, tape.value(*v)))
            });
            (tape.value(loss).item(), grads)
        };
        let (_, analytic) = eval(&p);
        let checks = check_groups(&named, &analytic, 1e-5, |vals| {
            let mut it = vals.iter();
            let mut q = p.clone();
            q.visit_mut("", &mut |_, t| *t = it.next().unwrap().clone());
            eval(&q).0
        });
        assert_eq!(checks.len(), 15);
        for c in checks {
            assert!(c.analytic_norm > 0.0, "{} has no gradient", c.name);
            assert!(c.relative_error < 1e-4, "{}: {}", c.name, c.relative_error);
        }
    }
}
