//! The model as tape operations. Training builds one tape per pair through
//! these methods; inference goes through the value-level wrappers in `infer`.

use rand::Rng as _;

use crate::lang::TokenId;
use crate::rng::Rng;

use super::params::{HeadIds, Ids, LstmIds};
use super::tape::{Tape, Tensor, Var};
use super::{ModelParameters, NetError};

/// Inverted dropout on layer inputs. Inactive in eval mode.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut Rng>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut Rng) -> Dropout<'r> {
        Dropout { rate, rng: Some(rng) }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = tape.constant(Tensor::vector(mask));
        tape.mul(x, m)
    }
}

/// Encoder outputs on a tape.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `L × H` matrix of per-token states.
    pub context: Var,
    /// Summary vector `[forward last; backward first]`.
    pub v: Var,
    /// Source token ids, for the copy distribution.
    pub src: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone)]
pub struct StateVars {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    pub feed: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub probs: Var,
    pub logits: Var,
    pub attention: Var,
}

pub struct Graph<'p> {
    pub params: &'p ModelParameters,
    ids: Ids,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ModelParameters) -> Graph<'p> {
        Graph { params, ids: params.ids() }
    }

    pub fn tape(&self) -> Tape<'p> {
        Tape::new(&self.params.tensors)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), NetError> {
        let v = self.params.config.vocab_size;
        match tokens.iter().find(|t| t.0 as usize >= v) {
            Some(t) => Err(NetError::Shape(format!("token id {} outside vocabulary of {v}", t.0))),
            None => Ok(()),
        }
    }

    fn embed(&self, tape: &mut Tape, t: TokenId) -> Var {
        let table = tape.param(self.ids.embed);
        tape.row(table, t.0 as usize)
    }

    fn zeros(tape: &mut Tape, n: usize) -> Var {
        tape.constant(Tensor::zeros(n, 1))
    }

    /// One LSTM step; `extra` holds additional `(W, x)` input terms.
    fn cell(tape: &mut Tape, l: &LstmIds, x: Var, extra: Option<(usize, Var)>, h: Var, c: Var) -> (Var, Var) {
        let (wx, wh, b) = (tape.param(l.w_x), tape.param(l.w_h), tape.param(l.b));
        let gates = match extra {
            Some((w, e)) => {
                let w = tape.param(w);
                tape.affine(&[(wx, x), (w, e), (wh, h)], Some(b))
            }
            None => tape.affine(&[(wx, x), (wh, h)], Some(b)),
        };
        let width = tape.value(c).len();
        let hc = tape.lstm_cell(gates, c);
        (tape.slice(hc, 0, width), tape.slice(hc, width, width))
    }

    fn run(tape: &mut Tape, l: &LstmIds, width: usize, inputs: &[Var], reverse: bool) -> Vec<Var> {
        let mut h = Self::zeros(tape, width);
        let mut c = Self::zeros(tape, width);
        let mut out = vec![h; inputs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..inputs.len()).rev()) } else { Box::new(0..inputs.len()) };
        for t in order {
            (h, c) = Self::cell(tape, l, inputs[t], None, h, c);
            out[t] = h;
        }
        out
    }

    fn head(tape: &mut Tape, ids: &HeadIds, a: Var, b: Var) -> Var {
        let (wa, wb, bias) = (tape.param(ids.w_a), tape.param(ids.w_b), tape.param(ids.b));
        tape.affine(&[(wa, a), (wb, b)], Some(bias))
    }

    pub fn encode(&self, tape: &mut Tape, tokens: &[TokenId], drop: &mut Dropout) -> Result<Encoded, NetError> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            return Err(NetError::Shape("empty encoder input".into()));
        }
        let (hf, hb) = self.params.config.encoder_split();
        let mut layer: Vec<Var> = tokens.iter().map(|&t| self.embed(tape, t)).collect();
        let mut v = None;
        for (fwd, bwd) in &self.ids.enc {
            let inputs: Vec<Var> = layer.iter().map(|&x| drop.apply(tape, x)).collect();
            let f = Self::run(tape, fwd, hf, &inputs, false);
            let last = *f.last().unwrap();
            layer = match bwd {
                Some(bwd) => {
                    let b = Self::run(tape, bwd, hb, &inputs, true);
                    v = Some(tape.concat(&[last, b[0]]));
                    f.iter().zip(&b).map(|(&x, &y)| tape.concat(&[x, y])).collect()
                }
                None => {
                    v = Some(last);
                    f
                }
            };
        }
        let context = tape.stack_rows(&layer);
        Ok(Encoded { context, v: v.unwrap(), src: tokens.iter().map(|t| t.0 as usize).collect() })
    }

    /// Approximate posterior `q(z | x, y)` from the fix tokens and `v`.
    pub fn posterior(&self, tape: &mut Tape, v: Var, y: &[TokenId], drop: &mut Dropout) -> Result<Posterior, NetError> {
        self.check_tokens(y)?;
        if y.is_empty() {
            return Err(NetError::Shape("empty fix sequence".into()));
        }
        let h = self.params.config.hidden_dim;
        let mut layer: Vec<Var> = y.iter().map(|&t| self.embed(tape, t)).collect();
        for l in &self.ids.rec {
            let inputs: Vec<Var> = layer.iter().map(|&x| drop.apply(tape, x)).collect();
            layer = Self::run(tape, l, h, &inputs, false);
        }
        let hy = *layer.last().unwrap();
        Ok(Posterior { mu: Self::head(tape, &self.ids.mu, hy, v), log_var: Self::head(tape, &self.ids.log_var, hy, v) })
    }

    /// `z = μ + exp(½ log σ²) ⊙ ε`.
    pub fn reparameterize(&self, tape: &mut Tape, q: &Posterior, eps: &[f64]) -> Var {
        let half = tape.scale(q.log_var, 0.5);
        let sigma = tape.exp(half);
        let e = tape.constant(Tensor::vector(eps.to_vec()));
        let noise = tape.mul(sigma, e);
        tape.add(q.mu, noise)
    }

    /// `½ Σ (σ² + μ² − 1 − log σ²)`.
    pub fn kl(&self, tape: &mut Tape, q: &Posterior) -> Var {
        let var = tape.exp(q.log_var);
        let mu2 = tape.square(q.mu);
        let s = tape.add(var, mu2);
        let s = tape.sub(s, q.log_var);
        let s = tape.add_scalar(s, -1.0);
        let total = tape.sum(s);
        tape.scale(total, 0.5)
    }

    pub fn init_state(&self, tape: &mut Tape, enc: &Encoded, z: Var) -> Result<StateVars, NetError> {
        let cfg = &self.params.config;
        if tape.value(z).len() != cfg.latent_dim {
            return Err(NetError::Shape(format!("z has {} entries, expected {}", tape.value(z).len(), cfg.latent_dim)));
        }
        let mut h = Vec::new();
        let mut c = Vec::new();
        for ids in &self.ids.init {
            let pre = Self::head(tape, ids, enc.v, z);
            h.push(tape.tanh(pre));
            c.push(Self::zeros(tape, cfg.hidden_dim));
        }
        let feed = Self::zeros(tape, cfg.hidden_dim);
        Ok(StateVars { h, c, feed })
    }

    /// One decoder step fed with `prev`.
    pub fn step(&self, tape: &mut Tape, enc: &Encoded, state: &StateVars, prev: TokenId, drop: &mut Dropout) -> (StateVars, StepVars) {
        let mut x = self.embed(tape, prev);
        let mut h = Vec::with_capacity(state.h.len());
        let mut c = Vec::with_capacity(state.c.len());
        for (l, ids) in self.ids.dec.iter().enumerate() {
            let input = drop.apply(tape, x);
            let extra = (l == 0).then_some((self.ids.dec_feed, state.feed));
            let (hl, cl) = Self::cell(tape, ids, input, extra, state.h[l], state.c[l]);
            h.push(hl);
            c.push(cl);
            x = hl;
        }
        let top = x;
        let wa = tape.param(self.ids.attn);
        let q = tape.affine(&[(wa, top)], None);
        let scores = tape.affine(&[(enc.context, q)], None);
        let attention = tape.softmax(scores);
        let ctx = tape.mat_t_vec(enc.context, attention);
        let pre = Self::head(tape, &self.ids.comb, top, ctx);
        let feed = tape.tanh(pre);
        let (ow, ob) = (tape.param(self.ids.out_w), tape.param(self.ids.out_b));
        let logits = tape.affine(&[(ow, feed)], Some(ob));
        let vocab = tape.softmax(logits);
        let probs = match &self.ids.gate {
            Some(g) => {
                let pre = Self::head(tape, g, feed, ctx);
                let gate = tape.sigmoid(pre);
                let neg = tape.scale(gate, -1.0);
                let rest = tape.add_scalar(neg, 1.0);
                let copy = tape.scatter(attention, &enc.src, self.params.config.vocab_size);
                let a = tape.scale_by(vocab, gate);
                let b = tape.scale_by(copy, rest);
                tape.add(a, b)
            }
            None => vocab,
        };
        (StateVars { h, c, feed }, StepVars { probs, logits, attention })
    }

    /// Teacher-forced pass: step `t` is fed `y[t-1]` (`_go_` first) and
    /// predicts `y[t]`.
    pub fn teacher(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        z: Var,
        y: &[TokenId],
        go: TokenId,
        drop: &mut Dropout,
    ) -> Result<Vec<StepVars>, NetError> {
        self.check_tokens(y)?;
        let mut state = self.init_state(tape, enc, z)?;
        let mut out = Vec::with_capacity(y.len());
        let mut prev = go;
        for &t in y {
            let (s, step) = self.step(tape, enc, &state, prev, drop);
            state = s;
            out.push(step);
            prev = t;
        }
        Ok(out)
    }

    /// `Σ_t −ln max(p_t[y_t], 1e-12)`.
    pub fn nll(&self, tape: &mut Tape, steps: &[StepVars], y: &[TokenId]) -> Result<Var, NetError> {
        if steps.len() != y.len() || y.is_empty() {
            return Err(NetError::Shape(format!("{} steps for {} target tokens", steps.len(), y.len())));
        }
        let mut terms = Vec::with_capacity(y.len());
        for (s, &t) in steps.iter().zip(y) {
            let p = tape.pick(s.probs, t.0 as usize);
            terms.push(tape.ln_floor(p, crate::objective::PROB_FLOOR));
        }
        let logs = tape.concat(&terms);
        let total = tape.sum(logs);
        Ok(tape.scale(total, -1.0))
    }
}
