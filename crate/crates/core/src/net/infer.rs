//! Value-level inference API. Each call records a short-lived tape over the
//! shared parameters, so a parameter snapshot can serve many threads.

use serde::{Deserialize, Serialize};

use crate::lang::TokenId;

use super::graph::{Dropout, Encoded, Graph, StateVars};
use super::tape::{Tape, Tensor};
use super::{ModelParameters, NetError};

/// Encoder summary of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    pub v: Vec<f64>,
    /// One `hidden_dim` row per input token.
    pub context: Tensor,
    pub src: Vec<TokenId>,
}

impl CodeVector {
    pub fn len(&self) -> usize {
        self.context.rows
    }

    pub fn is_empty(&self) -> bool {
        self.context.rows == 0
    }

    fn on_tape(&self, tape: &mut Tape) -> Encoded {
        Encoded {
            context: tape.constant(self.context.clone()),
            v: tape.constant(Tensor::vector(self.v.clone())),
            src: self.src.iter().map(|t| t.index()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> LatentGaussian {
        LatentGaussian { mu: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Reparameterized draw `μ + σ ⊙ ε`.
    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mu.iter().zip(&self.log_var).zip(eps).map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e).collect()
    }
}

/// Per-step output distributions. With copy attention enabled the output is
/// a mixture, so `logits` holds its log-probabilities; otherwise the
/// pre-softmax scores of the vocabulary projection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistributionSeq {
    pub steps: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub attention: Vec<Vec<f64>>,
}

impl DistributionSeq {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Point masses on `tokens`, for distances between hard samples.
    pub fn one_hot(tokens: &[TokenId], vocab_size: usize) -> DistributionSeq {
        let steps: Vec<Vec<f64>> = tokens
            .iter()
            .map(|t| {
                let mut p = vec![0.0; vocab_size];
                p[t.index()] = 1.0;
                p
            })
            .collect();
        DistributionSeq { logits: Vec::new(), attention: Vec::new(), steps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub feed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub attention: Vec<f64>,
}

pub fn encode_program(params: &ModelParameters, x: &[TokenId]) -> Result<CodeVector, NetError> {
    let graph = Graph::new(params);
    let mut tape = graph.tape();
    let enc = graph.encode(&mut tape, x, &mut Dropout::eval())?;
    Ok(CodeVector { v: tape.value(enc.v).data.clone(), context: tape.value(enc.context).clone(), src: x.to_vec() })
}

/// Posterior over `z` given the code vector and a fix sequence.
pub fn recognize(params: &ModelParameters, code: &CodeVector, y: &[TokenId]) -> Result<LatentGaussian, NetError> {
    let graph = Graph::new(params);
    let mut tape = graph.tape();
    let v = tape.constant(Tensor::vector(code.v.clone()));
    let q = graph.posterior(&mut tape, v, y, &mut Dropout::eval())?;
    Ok(LatentGaussian { mu: tape.value(q.mu).data.clone(), log_var: tape.value(q.log_var).data.clone() })
}

/// Step-wise decoder over a fixed code vector.
pub struct Decoder<'p> {
    graph: Graph<'p>,
    code: &'p CodeVector,
}

impl<'p> Decoder<'p> {
    pub fn new(params: &'p ModelParameters, code: &'p CodeVector) -> Decoder<'p> {
        Decoder { graph: Graph::new(params), code }
    }

    pub fn params(&self) -> &ModelParameters {
        self.graph.params
    }

    pub fn init(&self, z: &[f64]) -> Result<DecoderState, NetError> {
        let mut tape = self.graph.tape();
        let enc = self.code.on_tape(&mut tape);
        let z = tape.constant(Tensor::vector(z.to_vec()));
        let s = self.graph.init_state(&mut tape, &enc, z)?;
        Ok(DecoderState {
            h: s.h.iter().map(|&v| tape.value(v).data.clone()).collect(),
            c: s.c.iter().map(|&v| tape.value(v).data.clone()).collect(),
            feed: tape.value(s.feed).data.clone(),
        })
    }

    pub fn step(&self, state: &DecoderState, prev: TokenId) -> Result<(DecoderState, StepOutput), NetError> {
        if prev.index() >= self.graph.params.config.vocab_size {
            return Err(NetError::Shape(format!("token id {} outside vocabulary", prev.0)));
        }
        let mut tape = self.graph.tape();
        let enc = self.code.on_tape(&mut tape);
        let constant = |tape: &mut Tape, v: &[f64]| tape.constant(Tensor::vector(v.to_vec()));
        let vars = StateVars {
            h: state.h.iter().map(|v| constant(&mut tape, v)).collect(),
            c: state.c.iter().map(|v| constant(&mut tape, v)).collect(),
            feed: constant(&mut tape, &state.feed),
        };
        let (next, out) = self.graph.step(&mut tape, &enc, &vars, prev, &mut Dropout::eval());
        let probs = tape.value(out.probs).data.clone();
        let logits = if self.graph.params.config.copy_attention {
            probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect()
        } else {
            tape.value(out.logits).data.clone()
        };
        let state = DecoderState {
            h: next.h.iter().map(|&v| tape.value(v).data.clone()).collect(),
            c: next.c.iter().map(|&v| tape.value(v).data.clone()).collect(),
            feed: tape.value(next.feed).data.clone(),
        };
        Ok((state, StepOutput { probs, logits, attention: tape.value(out.attention).data.clone() }))
    }
}

/// Teacher-forced when `teacher` is given (one step per target token),
/// otherwise greedy free-running until `_eos_` or `max_decode_len` steps.
pub fn decode(params: &ModelParameters, code: &CodeVector, z: &[f64], teacher: Option<&[TokenId]>) -> Result<DistributionSeq, NetError> {
    let dec = Decoder::new(params, code);
    let mut state = dec.init(z)?;
    let mut seq = DistributionSeq::default();
    let mut prev = TokenId::GO;
    let limit = teacher.map_or(params.config.max_decode_len, <[TokenId]>::len);
    for t in 0..limit {
        let (next, out) = dec.step(&state, prev)?;
        state = next;
        prev = match teacher {
            Some(y) => y[t],
            None => TokenId(argmax(&out.probs) as u32),
        };
        seq.steps.push(out.probs);
        seq.logits.push(out.logits);
        seq.attention.push(out.attention);
        if teacher.is_none() && prev == TokenId::EOS {
            break;
        }
    }
    Ok(seq)
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::rng;

    fn small() -> ModelParameters {
        let cfg = ModelConfig {
            vocab_size: 12,
            embed_dim: 5,
            hidden_dim: 6,
            n_layers: 2,
            latent_dim: 3,
            dropout: 0.2,
            max_decode_len: 10,
            copy_attention: true,
        };
        ModelParameters::init(cfg, &mut rng::seeded(4)).unwrap()
    }

    fn toks(ids: &[u32]) -> Vec<TokenId> {
        ids.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn encoder_shapes_and_determinism() {
        let p = small();
        let x = toks(&[3, 4, 5, 9, 1]);
        let a = encode_program(&p, &x).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!((a.context.rows, a.context.cols), (5, 6));
        assert_eq!(a.v.len(), 6);
        assert_eq!(a, encode_program(&p, &x).unwrap());
        assert!(matches!(encode_program(&p, &toks(&[12])), Err(NetError::Shape(_))));
        assert!(matches!(encode_program(&p, &[]), Err(NetError::Shape(_))));
    }

    #[test]
    fn zero_weights_give_symmetric_summary() {
        let p = ModelParameters::zeros(small().config).unwrap();
        let code = encode_program(&p, &toks(&[3, 4, 5])).unwrap();
        assert!(code.v.iter().all(|&x| x == code.v[0]));
    }

    #[test]
    fn recognition_shapes_and_reparameterization() {
        let p = small();
        let code = encode_program(&p, &toks(&[3, 4])).unwrap();
        let q = recognize(&p, &code, &toks(&[7, 8, 1])).unwrap();
        assert_eq!((q.mu.len(), q.log_var.len()), (3, 3));
        assert_eq!(q.sample(&[0.0; 3]), q.mu);
        let narrow = LatentGaussian { mu: q.mu.clone(), log_var: vec![-80.0; 3] };
        let z = narrow.sample(&[1.5, -2.0, 0.3]);
        assert!(z.iter().zip(&q.mu).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn decode_shapes() {
        let p = small();
        let code = encode_program(&p, &toks(&[3, 4, 5, 6])).unwrap();
        let z = [0.1, -0.3, 0.2];
        let teacher = toks(&[7, 8, 9, 1]);
        let d = decode(&p, &code, &z, Some(&teacher)).unwrap();
        assert_eq!(d.len(), 4);
        for (s, a) in d.steps.iter().zip(&d.attention) {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.iter().all(|&x| x >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(a.len(), 4);
        }
        assert!(matches!(decode(&p, &code, &[0.0; 2], None), Err(NetError::Shape(_))));
    }

    #[test]
    fn free_run_truncates_without_eos() {
        let mut p = small();
        // Bias the output heavily towards a non-terminal token and disable copying.
        let gate = p.index_of("gate.b").unwrap();
        p.tensors[gate].data[0] = 50.0;
        let ob = p.index_of("out.b").unwrap();
        p.tensors[ob].data[5] = 50.0;
        let code = encode_program(&p, &toks(&[3, 4])).unwrap();
        let d = decode(&p, &code, &[0.0; 3], None).unwrap();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn uniform_step_gives_log_v_nll() {
        let mut p = ModelParameters::zeros(ModelConfig { copy_attention: false, ..small().config }).unwrap();
        p.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|x| *x = 0.0));
        let code = encode_program(&p, &toks(&[3])).unwrap();
        let d = decode(&p, &code, &[0.0; 3], Some(&toks(&[5, 1]))).unwrap();
        for s in &d.steps {
            assert!(s.iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-15));
        }
        let nll: f64 = d.steps.iter().zip([5, 1]).map(|(s, t)| -s[t].ln()).sum();
        assert!((nll - 2.0 * 12f64.ln()).abs() < 1e-12);
    }
}
