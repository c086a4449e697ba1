//! Slow, loop-level reference computations used only by the test suites.
//!
//! Nothing here depends on the main crate. Matrices are `Vec<Vec<f64>>`
//! (row lists); every formula is written out term by term.

#![allow(clippy::needless_range_loop)]

pub type Matrix = Vec<Vec<f64>>;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `softmax(Q Kᵀ / √d_k) V`, one query row at a time.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let d_k = q[0].len() as f64;
    let mut out = Vec::new();
    for qi in q {
        let mut scores = Vec::new();
        for kj in k {
            let mut dot = 0.0;
            for c in 0..qi.len() {
                dot += qi[c] * kj[c];
            }
            scores.push(dot / d_k.sqrt());
        }
        let mut denom = 0.0;
        for s in &scores {
            denom += s.exp();
        }
        let mut row = vec![0.0; v[0].len()];
        for (j, s) in scores.iter().enumerate() {
            let a = s.exp() / denom;
            for c in 0..row.len() {
                row[c] += a * v[j][c];
            }
        }
        out.push(row);
    }
    out
}

/// Sinusoidal encoding value at `pos`, column `col` of a `d_model`-wide table.
pub fn positional_encoding(pos: usize, col: usize, d_model: usize) -> f64 {
    let pair = (col / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
    if col.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Peephole LSTM weights. Input matrices are `in × hidden`, recurrent and
/// peephole matrices `hidden × hidden`; a gate pre-activation is
/// `Σ_k x_k·W_x[k][j] + Σ_k h_k·W_h[k][j] + Σ_k c_k·W_c[k][j] + b[j]`.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub w_xi: Matrix,
    pub w_hi: Matrix,
    pub w_ci: Matrix,
    pub b_i: Vec<f64>,
    pub w_xf: Matrix,
    pub w_hf: Matrix,
    pub w_cf: Matrix,
    pub b_f: Vec<f64>,
    pub w_xc: Matrix,
    pub w_hc: Matrix,
    pub b_c: Vec<f64>,
    pub w_xo: Matrix,
    pub w_ho: Matrix,
    pub w_co: Matrix,
    pub b_o: Vec<f64>,
}

fn pre(j: usize, parts: &[(&[f64], &Matrix)], b: &[f64]) -> f64 {
    let mut z = b[j];
    for (vec, w) in parts {
        for k in 0..vec.len() {
            z += vec[k] * w[k][j];
        }
    }
    z
}

/// One step; returns `(h_t, c_t)`. The output gate reads the updated cell.
pub fn lstm_step(w: &LstmWeights, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut c_new = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(pre(j, &[(x, &w.w_xi), (h, &w.w_hi), (c, &w.w_ci)], &w.b_i));
        let f = sigmoid(pre(j, &[(x, &w.w_xf), (h, &w.w_hf), (c, &w.w_cf)], &w.b_f));
        let g = pre(j, &[(x, &w.w_xc), (h, &w.w_hc)], &w.b_c).tanh();
        c_new[j] = f * c[j] + i * g;
    }
    let mut h_new = vec![0.0; n];
    for j in 0..n {
        let o = sigmoid(pre(
            j,
            &[(x, &w.w_xo), (h, &w.w_ho), (&c_new, &w.w_co)],
            &w.b_o,
        ));
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

/// Runs `lstm_step` over `xs` from the given state; returns every `h_t` and the final `c`.
pub fn lstm_chain(
    w: &LstmWeights,
    xs: &[Vec<f64>],
    h0: &[f64],
    c0: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut hs = Vec::new();
    for x in xs {
        let (hn, cn) = lstm_step(w, x, &h, &c);
        hs.push(hn.clone());
        h = hn;
        c = cn;
    }
    (hs, c)
}

/// Swarm settings for [`pso_trace`].
#[derive(Clone, Debug)]
pub struct SwarmSpec {
    pub particles: usize,
    pub dims: usize,
    pub iterations: usize,
    pub c1: f64,
    pub c2: f64,
    pub w_max: f64,
    pub w_min: f64,
    pub v_max: f64,
}

/// Recorded state after each round of evaluations (round 0 is the initial swarm).
#[derive(Clone, Debug, PartialEq)]
pub struct SwarmRound {
    pub positions: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub gbest_f: f64,
    pub gbest_x: Vec<f64>,
}

/// Replays a swarm on the unit box from a recorded list of uniform draws.
///
/// Draws are consumed as: all initial positions (particle by particle), all
/// initial velocities as `v_max·(2u−1)`, then for every iteration and
/// particle the `r1` components followed by the `r2` components.
pub fn pso_trace(
    spec: &SwarmSpec,
    draws: &[f64],
    objective: &dyn Fn(&[f64]) -> f64,
) -> Vec<SwarmRound> {
    let mut next = 0;
    let mut draw = || {
        let u = draws[next];
        next += 1;
        u
    };
    let (n, d) = (spec.particles, spec.dims);
    let mut x = vec![vec![0.0; d]; n];
    let mut v = vec![vec![0.0; d]; n];
    for p in 0..n {
        for j in 0..d {
            x[p][j] = draw();
        }
    }
    for p in 0..n {
        for j in 0..d {
            v[p][j] = spec.v_max * (2.0 * draw() - 1.0);
        }
    }
    let mut pbest_x = x.clone();
    let mut pbest_f = vec![f64::INFINITY; n];
    let mut gbest_x = x[0].clone();
    let mut gbest_f = f64::INFINITY;
    let mut rounds = Vec::new();

    for t in 0..=spec.iterations {
        if t > 0 {
            let w = spec.w_max - (spec.w_max - spec.w_min) / spec.iterations as f64 * t as f64;
            for p in 0..n {
                let r1: Vec<f64> = (0..d).map(|_| draw()).collect();
                let r2: Vec<f64> = (0..d).map(|_| draw()).collect();
                for j in 0..d {
                    let mut vj = w * v[p][j]
                        + spec.c1 * r1[j] * (pbest_x[p][j] - x[p][j])
                        + spec.c2 * r2[j] * (gbest_x[j] - x[p][j]);
                    if vj > spec.v_max {
                        vj = spec.v_max;
                    }
                    if vj < -spec.v_max {
                        vj = -spec.v_max;
                    }
                    let mut xj = x[p][j] + vj;
                    if xj > 1.0 {
                        xj = 2.0 - xj;
                        vj = -vj;
                    }
                    if xj < 0.0 {
                        xj = -xj;
                        vj = -vj;
                    }
                    x[p][j] = xj;
                    v[p][j] = vj;
                }
            }
        }
        let fitness: Vec<f64> = x.iter().map(|xp| objective(xp)).collect();
        for p in 0..n {
            if fitness[p] < pbest_f[p] {
                pbest_f[p] = fitness[p];
                pbest_x[p] = x[p].clone();
            }
            if fitness[p] < gbest_f {
                gbest_f = fitness[p];
                gbest_x = x[p].clone();
            }
        }
        rounds.push(SwarmRound {
            positions: x.clone(),
            fitness,
            gbest_f,
            gbest_x: gbest_x.clone(),
        });
    }
    rounds
}

/// Metric values in the order `(mae, rmse, smape_percent, r2)`.
pub fn metrics(y: &[f64], y_hat: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut sm = 0.0;
    let mut mean = 0.0;
    for i in 0..y.len() {
        abs += (y[i] - y_hat[i]).abs();
        sq += (y[i] - y_hat[i]).powi(2);
        let denom = y[i].abs() + y_hat[i].abs();
        if denom > 0.0 {
            sm += 2.0 * (y[i] - y_hat[i]).abs() / denom;
        }
        mean += y[i];
    }
    mean /= n;
    let mut tot = 0.0;
    for v in y {
        tot += (v - mean).powi(2);
    }
    (abs / n, (sq / n).sqrt(), 100.0 * sm / n, 1.0 - sq / tot)
}

/// Linear-interpolation quantile (`h = (n−1)·p`) of unsorted data.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut s = data.to_vec();
    // insertion sort keeps this free of any shared helpers
    for i in 1..s.len() {
        let mut j = i;
        while j > 0 && s[j - 1] > s[j] {
            s.swap(j - 1, j);
            j -= 1;
        }
    }
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// `(Q1 − k·IQR, Q3 + k·IQR)`.
pub fn iqr_fences(data: &[f64], k: f64) -> (f64, f64) {
    let q1 = quantile(data, 0.25);
    let q3 = quantile(data, 0.75);
    (q1 - k * (q3 - q1), q3 + k * (q3 - q1))
}

/// Mean and population standard deviation.
pub fn mean_std(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Chronological part sizes: floor for the first two, remainder for the last.
pub fn split_sizes(n: usize, train: f64, val: f64) -> (usize, usize, usize) {
    let a = (n as f64 * train + 1e-9) as usize;
    let b = (n as f64 * val + 1e-9) as usize;
    (a, b, n - a - b)
}

/// Block sizes for contiguous K-fold: earlier folds take the remainder.
pub fn kfold_sizes(n: usize, k: usize) -> Vec<usize> {
    let mut sizes = vec![n / k; k];
    for s in sizes.iter_mut().take(n % k) {
        *s += 1;
    }
    sizes
}

/// Architecture settings needed for the closed-form parameter count.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub input_features: usize,
    pub d_model: usize,
    pub n_encoder_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub fc_units: usize,
    pub horizon: usize,
}

/// Learnable scalar count of the whole forecaster.
pub fn param_count(a: &Architecture) -> usize {
    let d = a.d_model;
    let d_k = d / a.n_heads;
    let input = a.input_features * d + d;
    let attention = a.n_heads * 3 * d * d_k + d * d;
    let ffn = d * a.d_ff + a.d_ff + a.d_ff * d + d;
    let norms = 4 * d;
    let encoder = a.n_encoder_layers * (attention + ffn + norms);
    let h = a.lstm_hidden;
    let mut lstm = 0;
    for layer in 0..a.lstm_layers {
        let input_dim = if layer == 0 { d } else { h };
        // four input maps, four recurrent maps, three peepholes, four biases
        lstm += 4 * input_dim * h + 4 * h * h + 3 * h * h + 4 * h;
    }
    let fc = h * a.fc_units + a.fc_units;
    let head = a.fc_units * a.horizon + a.horizon;
    input + encoder + lstm + fc + head
}

/// Adam update of a single scalar for `steps` steps of a constant gradient.
pub fn adam_scalar(
    p0: f64,
    grad: f64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u32,
) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for t in 1..=steps {
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad * grad;
        let m_hat = m / (1.0 - beta1.powi(t as i32));
        let v_hat = v / (1.0 - beta2.powi(t as i32));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    p
}
