//! Tape-based reverse-mode differentiation over the small operator set the
//! model needs: affine maps, elementwise nonlinearities, slicing, attention
//! primitives and a fused LSTM cell.
//!
//! Values are dense `f64` tensors (vectors are `n × 1`). Parameters enter the
//! tape by reference and their gradients are accumulated directly into one
//! buffer per parameter, so recurrent unrolling does not allocate per-step
//! weight gradients.

use super::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { data: vec![0.0; rows * cols], rows, cols }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        let rows = data.len();
        Tensor { data, rows, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Tensor { data, rows, cols }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::vector(vec![x])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Affine { terms: Vec<(Var, Var)>, bias: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    LnFloor(Var, f64),
    Square(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    MatTVec(Var, Var),
    Softmax(Var),
    Scatter(Var, Vec<usize>),
    Row(Var, usize),
    Sum(Var),
    Pick(Var, usize),
    Min(Vec<Var>, usize),
    MinConst(Var, f64),
    Norm2(Var),
    LstmCell { gates: Var, c_prev: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// A recording of one forward computation.
pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Per-parameter gradients, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &[Tensor]) -> Gradients {
        Gradients { grads: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            axpy(&mut a.data, 1.0, &b.data);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flat_map(|g| &g.data).all(|x| x.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Tape<'p> {
        Tape { params, nodes: Vec::with_capacity(1024), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.params[*id],
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for parameter `id`; one node per parameter per tape.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark`.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        for slot in &mut self.param_vars {
            if slot.is_some_and(|v| v.0 >= mark) {
                *slot = None;
            }
        }
    }

    /// `Σ W_i x_i + b`.
    pub fn affine(&mut self, terms: &[(Var, Var)], bias: Option<Var>) -> Var {
        let rows = self.value(terms[0].0).rows;
        let mut out = match bias {
            Some(b) => {
                let b = self.value(b);
                assert_eq!(b.len(), rows, "bias length");
                b.data.clone()
            }
            None => vec![0.0; rows],
        };
        for &(w, x) in terms {
            let (w, x) = (self.value(w), self.value(x));
            assert_eq!(w.rows, rows, "affine rows");
            assert_eq!(w.cols, x.len(), "affine inner dimension");
            for (r, o) in out.iter_mut().enumerate() {
                *o += dot(w.row(r), &x.data);
            }
        }
        self.push(Tensor::vector(out), Op::Affine { terms: terms.to_vec(), bias })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise length");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { data, rows: ta.rows, cols: ta.cols };
        self.push(t, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor { data: ta.data.iter().map(|&x| f(x)).collect(), rows: ta.rows, cols: ta.cols };
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddScalar(a))
    }

    /// Vector `a` times scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        self.map(a, |x| x * k, Op::ScaleBy(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor).ln(), Op::LnFloor(a, floor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.value(a).data[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice(a, start))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            assert_eq!(t.len(), cols, "stacked row length");
            data.extend_from_slice(&t.data);
        }
        self.push(Tensor::matrix(rows.len(), cols, data), Op::StackRows(rows.to_vec()))
    }

    /// `mᵀ x`.
    pub fn mat_t_vec(&mut self, m: Var, x: Var) -> Var {
        let (tm, tx) = (self.value(m), self.value(x));
        assert_eq!(tm.rows, tx.len(), "transposed product dimension");
        let mut out = vec![0.0; tm.cols];
        for r in 0..tm.rows {
            axpy(&mut out, tx.data[r], tm.row(r));
        }
        self.push(Tensor::vector(out), Op::MatTVec(m, x))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut data = self.value(a).data.clone();
        softmax_in_place(&mut data);
        self.push(Tensor::vector(data), Op::Softmax(a))
    }

    /// Vector of length `len` with `src[i]` added at position `idx[i]`.
    pub fn scatter(&mut self, src: Var, idx: &[usize], len: usize) -> Var {
        let t = self.value(src);
        assert_eq!(t.len(), idx.len(), "scatter index count");
        let mut out = vec![0.0; len];
        for (&i, &x) in idx.iter().zip(&t.data) {
            out[i] += x;
        }
        self.push(Tensor::vector(out), Op::Scatter(src, idx.to_vec()))
    }

    /// Row `r` of a matrix, as a vector (embedding lookup).
    pub fn row(&mut self, table: Var, r: usize) -> Var {
        let data = self.value(table).row(r).to_vec();
        self.push(Tensor::vector(data), Op::Row(table, r))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let x = self.value(a).data[i];
        self.push(Tensor::scalar(x), Op::Pick(a, i))
    }

    /// Minimum of scalar nodes; the first minimizer receives the gradient.
    pub fn min(&mut self, xs: &[Var]) -> Var {
        let mut best = 0;
        for (i, &x) in xs.iter().enumerate() {
            if self.scalar(x) < self.scalar(xs[best]) {
                best = i;
            }
        }
        let v = self.scalar(xs[best]);
        self.push(Tensor::scalar(v), Op::Min(xs.to_vec(), best))
    }

    /// `min(a, c)` for a scalar node.
    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        let x = self.scalar(a);
        self.push(Tensor::scalar(x.min(c)), Op::MinConst(a, c))
    }

    /// Euclidean norm; the subgradient at zero is zero.
    pub fn norm2(&mut self, a: Var) -> Var {
        let n = dot(&self.value(a).data, &self.value(a).data).sqrt();
        self.push(Tensor::scalar(n), Op::Norm2(a))
    }

    /// Fused LSTM cell. `gates` is `[i; f; o; g]` pre-activations (4H);
    /// returns `[h; c]` (2H).
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let (tg, tc) = (self.value(gates), self.value(c_prev));
        let h = tc.len();
        assert_eq!(tg.len(), 4 * h, "gate length");
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(tg.data[k]);
            let f = sigmoid(tg.data[h + k]);
            let o = sigmoid(tg.data[2 * h + k]);
            let g = tg.data[3 * h + k].tanh();
            let c = f * tc.data[k] + i * g;
            out[h + k] = c;
            out[k] = o * c.tanh();
        }
        self.push(Tensor::vector(out), Op::LstmCell { gates, c_prev })
    }

    /// Gradients of scalar `loss` with respect to every parameter. Parameters
    /// the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NetError> {
        if loss.0 >= self.nodes.len() {
            return Err(NetError::Graph(format!("node {} is not on this tape", loss.0)));
        }
        if self.value(loss).len() != 1 {
            return Err(NetError::Graph("loss must be a scalar".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => axpy(&mut out.grads[*id].data, 1.0, &g),
                Op::Affine { terms, bias } => {
                    if let Some(b) = bias {
                        axpy(acc(&mut grads, *b, g.len()), 1.0, &g);
                    }
                    for &(w, x) in terms {
                        let (tw, tx) = (self.value(w), self.value(x));
                        let cols = tw.cols;
                        // W and x are distinct nodes except in pathological graphs.
                        let mut gw = grads[w.0].take().unwrap_or_else(|| vec![0.0; tw.len()]);
                        let mut gx = grads[x.0].take().unwrap_or_else(|| vec![0.0; tx.len()]);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            axpy(&mut gw[r * cols..(r + 1) * cols], gr, &tx.data);
                            axpy(&mut gx, gr, tw.row(r));
                        }
                        grads[w.0] = Some(gw);
                        grads[x.0] = Some(gx);
                    }
                }
                Op::Add(a, b) => {
                    axpy(acc(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(acc(&mut grads, *b, g.len()), 1.0, &g);
                }
                Op::Sub(a, b) => {
                    axpy(acc(&mut grads, *a, g.len()), 1.0, &g);
                    axpy(acc(&mut grads, *b, g.len()), -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data.clone(), self.value(*b).data.clone());
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * tb[k];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * ta[k];
                    }
                }
                Op::Scale(a, k) => axpy(acc(&mut grads, *a, g.len()), *k, &g),
                Op::AddScalar(a) => axpy(acc(&mut grads, *a, g.len()), 1.0, &g),
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    let d = dot(&g, &self.value(*a).data);
                    axpy(acc(&mut grads, *a, g.len()), k, &g);
                    acc(&mut grads, *s, 1)[0] += d;
                }
                Op::Sigmoid(a) => {
                    let y = &self.value(Var(i)).data;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.value(Var(i)).data;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Exp(a) => {
                    let y = &self.value(Var(i)).data;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
                Op::LnFloor(a, floor) => {
                    let x = self.value(*a).data.clone();
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        if x[k] > *floor {
                            ga[k] += g[k] / x[k];
                        }
                    }
                }
                Op::Square(a) => {
                    let x = self.value(*a).data.clone();
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += 2.0 * g[k] * x[k];
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.value(*a).len();
                    axpy(&mut acc(&mut grads, *a, n)[*start..*start + g.len()], 1.0, &g);
                }
                Op::Concat(parts) | Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        axpy(acc(&mut grads, p, n), 1.0, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::MatTVec(m, x) => {
                    let (tm, tx) = (self.value(*m), self.value(*x));
                    let cols = tm.cols;
                    let gx: Vec<f64> = (0..tm.rows).map(|r| dot(tm.row(r), &g)).collect();
                    let xd = tx.data.clone();
                    let gm = acc(&mut grads, *m, tm.len());
                    for (r, &xr) in xd.iter().enumerate() {
                        axpy(&mut gm[r * cols..(r + 1) * cols], xr, &g);
                    }
                    axpy(acc(&mut grads, *x, gx.len()), 1.0, &gx);
                }
                Op::Softmax(a) => {
                    let y = &self.value(Var(i)).data;
                    let gy = dot(&g, y);
                    let d: Vec<f64> = y.iter().zip(&g).map(|(&yk, &gk)| yk * (gk - gy)).collect();
                    axpy(acc(&mut grads, *a, d.len()), 1.0, &d);
                }
                Op::Scatter(src, idx) => {
                    let ga = acc(&mut grads, *src, idx.len());
                    for (k, &j) in idx.iter().enumerate() {
                        ga[k] += g[j];
                    }
                }
                Op::Row(table, r) => {
                    let t = self.value(*table);
                    let cols = t.cols;
                    let n = t.len();
                    axpy(&mut acc(&mut grads, *table, n)[r * cols..(r + 1) * cols], 1.0, &g);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Pick(a, k) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n)[*k] += g[0];
                }
                Op::Min(xs, best) => acc(&mut grads, xs[*best], 1)[0] += g[0],
                Op::MinConst(a, c) => {
                    if self.scalar(*a) < *c {
                        acc(&mut grads, *a, 1)[0] += g[0];
                    }
                }
                Op::Norm2(a) => {
                    let n = self.scalar(Var(i));
                    if n > 0.0 {
                        let x = self.value(*a).data.clone();
                        axpy(acc(&mut grads, *a, x.len()), g[0] / n, &x);
                    }
                }
                Op::LstmCell { gates, c_prev } => {
                    let tg = self.value(*gates).data.clone();
                    let tc = self.value(*c_prev).data.clone();
                    let y = &self.value(Var(i)).data;
                    let h = tc.len();
                    let mut dg = vec![0.0; 4 * h];
                    let mut dcp = vec![0.0; h];
                    for k in 0..h {
                        let ii = sigmoid(tg[k]);
                        let ff = sigmoid(tg[h + k]);
                        let oo = sigmoid(tg[2 * h + k]);
                        let gg = tg[3 * h + k].tanh();
                        let tcell = y[h + k].tanh();
                        let dh = g[k];
                        let dc = g[h + k] + dh * oo * (1.0 - tcell * tcell);
                        dg[k] = dc * gg * ii * (1.0 - ii);
                        dg[h + k] = dc * tc[k] * ff * (1.0 - ff);
                        dg[2 * h + k] = dh * tcell * oo * (1.0 - oo);
                        dg[3 * h + k] = dc * ii * (1.0 - gg * gg);
                        dcp[k] = dc * ff;
                    }
                    axpy(acc(&mut grads, *gates, 4 * h), 1.0, &dg);
                    axpy(acc(&mut grads, *c_prev, h), 1.0, &dcp);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(params: &mut [Tensor], f: impl Fn(&mut Tape) -> Var) {
        let analytic = {
            let mut tape = Tape::new(params);
            let loss = f(&mut tape);
            tape.backward(loss).unwrap()
        };
        let h = 1e-6;
        for p in 0..params.len() {
            for k in 0..params[p].len() {
                let orig = params[p].data[k];
                params[p].data[k] = orig + h;
                let up = {
                    let mut t = Tape::new(params);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                params[p].data[k] = orig - h;
                let down = {
                    let mut t = Tape::new(params);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                params[p].data[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.grads[p].data[k];
                assert!((a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())), "param {p}[{k}]: analytic {a} numeric {numeric}");
            }
        }
    }

    fn vec_param(xs: &[f64]) -> Tensor {
        Tensor::vector(xs.to_vec())
    }

    #[test]
    fn square_gradient() {
        let params = vec![Tensor::scalar(3.0)];
        let mut tape = Tape::new(&params);
        let w = tape.param(0);
        let y = tape.square(w);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.grads[0].data, vec![6.0]);
    }

    #[test]
    fn elementwise_ops() {
        let mut params = vec![vec_param(&[0.3, -0.7, 1.2]), vec_param(&[0.5, 0.9, -0.4]), Tensor::scalar(0.8)];
        fd_check(&mut params, |t| {
            let (a, b, s) = (t.param(0), t.param(1), t.param(2));
            let x = t.mul(a, b);
            let x = t.add(x, a);
            let x = t.sub(x, b);
            let x = t.sigmoid(x);
            let y = t.tanh(b);
            let y = t.exp(y);
            let y = t.scale_by(y, s);
            let z = t.mul(x, y);
            let z = t.scale(z, 1.7);
            let z = t.add_scalar(z, 0.2);
            let z = t.ln_floor(z, 1e-12);
            let z = t.square(z);
            t.sum(z)
        });
    }

    #[test]
    fn structural_ops() {
        let mut params = vec![
            Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]),
            vec_param(&[0.7, -0.1, 0.2]),
            vec_param(&[0.3, 0.1]),
            Tensor::matrix(3, 2, vec![0.2, 0.1, -0.3, 0.6, 0.5, 0.4]),
        ];
        fd_check(&mut params, |t| {
            let (w, x, b, e) = (t.param(0), t.param(1), t.param(2), t.param(3));
            let y = t.affine(&[(w, x)], Some(b));
            let r0 = t.row(e, 1);
            let r1 = t.row(e, 2);
            let m = t.stack_rows(&[y, r0, r1]);
            let att = t.mat_t_vec(m, x);
            let sm = t.softmax(att);
            let sc = t.scatter(sm, &[2, 0], 4);
            let cat = t.concat(&[sc, y]);
            let sl = t.slice(cat, 1, 4);
            let n = t.norm2(sl);
            let p = t.pick(sl, 2);
            let q = t.pick(x, 0);
            let mn = t.min(&[n, p, q]);
            let c = t.min_const(n, 10.0);
            let s = t.add(mn, c);
            let s2 = t.sum(sl);
            t.add(s, s2)
        });
    }

    #[test]
    fn lstm_cell_gradient() {
        let mut params = vec![vec_param(&[0.1, -0.4, 0.3, 0.9, -0.2, 0.5, 0.7, -0.8]), vec_param(&[0.25, -0.6])];
        fd_check(&mut params, |t| {
            let (g, c) = (t.param(0), t.param(1));
            let hc = t.lstm_cell(g, c);
            let w = t.constant(Tensor::vector(vec![0.3, -1.1, 0.7, 0.4]));
            let y = t.mul(hc, w);
            t.sum(y)
        });
    }

    #[test]
    fn disconnected_parameter_has_zero_gradient() {
        let params = vec![Tensor::scalar(2.0), vec_param(&[1.0, 2.0])];
        let mut tape = Tape::new(&params);
        let a = tape.param(0);
        let y = tape.square(a);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.grads[1].data, vec![0.0, 0.0]);
    }

    #[test]
    fn graph_errors() {
        let params = vec![vec_param(&[1.0, 2.0])];
        let mut tape = Tape::new(&params);
        let a = tape.param(0);
        assert!(matches!(tape.backward(a), Err(NetError::Graph(_))));
        let m = tape.mark();
        let s = tape.sum(a);
        tape.truncate(m);
        assert!(matches!(tape.backward(s), Err(NetError::Graph(_))));
    }

    #[test]
    fn norm_subgradient_at_zero() {
        let params = vec![vec_param(&[0.0, 0.0])];
        let mut tape = Tape::new(&params);
        let a = tape.param(0);
        let n = tape.norm2(a);
        assert_eq!(tape.backward(n).unwrap().grads[0].data, vec![0.0, 0.0]);
    }
}
