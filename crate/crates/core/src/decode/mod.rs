//! Candidate fixes from decoder distributions: Gumbel-max sampling under
//! prior draws of z, and length-normalized beam search with deduplication.

mod beam;

use std::io::{self, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lang::{render_tokens, TokenId, Vocab};
use crate::net::{CodeVector, Decoder, DecoderState, DistributionSeq, ModelParameters};
use crate::objective::mean_pairwise_distance;
use crate::rng::{self, Rng};

pub use beam::{beam_candidates, beam_search, exhaustive_candidates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Gumbel,
    Beam,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gumbel" => Ok(DecodeMode::Gumbel),
            "beam" => Ok(DecodeMode::Beam),
            _ => Err(format!("unknown decode mode `{s}` (expected gumbel or beam)")),
        }
    }
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecodeMode::Gumbel => "gumbel",
            DecodeMode::Beam => "beam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodePlan {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub beam_width: usize,
    pub n_z: usize,
    pub t_infer: usize,
}

impl Default for DecodePlan {
    fn default() -> Self {
        DecodePlan { mode: DecodeMode::Gumbel, temperature: 1.0, beam_width: 5, n_z: 20, t_infer: 100 }
    }
}

impl DecodePlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err("temperature must be > 0".into());
        }
        if self.mode == DecodeMode::Beam && (self.beam_width == 0 || self.n_z == 0) {
            return Err("beam search needs beam_width ≥ 1 and n_z ≥ 1".into());
        }
        Ok(())
    }
}

/// One decoded fix proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFix {
    /// Target line; `None` for NoFix and for malformed emissions.
    pub line_no: Option<usize>,
    /// Corrected line (without the marker and terminator).
    pub tokens: Vec<TokenId>,
    /// Full emitted sequence, always ending in `_eos_`.
    pub raw: Vec<TokenId>,
    /// Sum of log-probabilities of the emitted tokens.
    pub score: f64,
    /// Hit the length limit before `_eos_`; a terminator was appended to `raw`.
    pub truncated: bool,
    /// Position in the generating draw order.
    pub draw: usize,
}

impl CandidateFix {
    /// Parses an emitted sequence. Anything but `LINE_k body _eos_` with a
    /// plain body is kept as a malformed candidate with no line.
    pub fn from_emitted(vocab: &Vocab, emitted: &[TokenId], score: f64, draw: usize) -> CandidateFix {
        let truncated = emitted.last() != Some(&TokenId::EOS);
        let mut raw = emitted.to_vec();
        if truncated {
            raw.push(TokenId::EOS);
        }
        let body = &raw[1.min(raw.len() - 1)..raw.len() - 1];
        let line_no = match raw.first().and_then(|&t| vocab.line_number(t)) {
            Some(k) if !truncated && body.iter().all(|&t| plain(vocab, t)) => Some(k),
            _ => None,
        };
        let tokens = if line_no.is_some() { body.to_vec() } else { Vec::new() };
        CandidateFix { line_no, tokens, raw, score, truncated, draw }
    }

    /// The explicit "no fix" emission, a lone `_eos_`.
    pub fn is_no_fix(&self) -> bool {
        self.raw == [TokenId::EOS]
    }

    pub fn is_applicable(&self) -> bool {
        self.line_no.is_some()
    }

    /// `score / emitted length`, the beam ranking key.
    pub fn normalized_score(&self) -> f64 {
        let len = self.raw.len() - usize::from(self.truncated);
        self.score / len.max(1) as f64
    }
}

fn plain(vocab: &Vocab, t: TokenId) -> bool {
    t != TokenId::PAD && t != TokenId::EOS && t != TokenId::GO && vocab.line_number(t).is_none() && vocab.contains(t)
}

/// Autoregressive next-token distributions, abstracted so decoding can be
/// tested on hand-built models.
pub trait StepModel {
    type State: Clone;
    fn vocab_size(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn start(&self, z: &[f64]) -> Self::State;
    /// State after feeding `prev` and the distribution of the next token.
    fn step(&self, state: &Self::State, prev: TokenId) -> (Self::State, Vec<f64>);
}

/// The trained decoder over one encoded program.
pub struct NetStepModel<'p> {
    dec: Decoder<'p>,
}

impl<'p> NetStepModel<'p> {
    pub fn new(params: &'p ModelParameters, code: &'p CodeVector) -> NetStepModel<'p> {
        NetStepModel { dec: Decoder::new(params, code) }
    }
}

impl StepModel for NetStepModel<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.dec.params().config.vocab_size
    }

    fn latent_dim(&self) -> usize {
        self.dec.params().config.latent_dim
    }

    fn max_len(&self) -> usize {
        self.dec.params().config.max_decode_len
    }

    fn start(&self, z: &[f64]) -> DecoderState {
        self.dec.init(z).expect("latent draw has latent_dim entries")
    }

    fn step(&self, state: &DecoderState, prev: TokenId) -> (DecoderState, Vec<f64>) {
        let (s, out) = self.dec.step(state, prev).expect("decoder emits in-vocabulary tokens");
        (s, out.probs)
    }
}

/// `argmax_i (logits_i / τ + g_i)` with `g_i ~ Gumbel(0, 1)`: an exact draw
/// from `softmax(logits / τ)`.
pub fn gumbel_sample_step(logits: &[f64], tau: f64, rng: &mut Rng) -> usize {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        let v = l / tau + g.sample(rng);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn prior_draw(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// One free-running sampled decode.
pub fn sample_one<M: StepModel>(model: &M, vocab: &Vocab, tau: f64, rng: &mut Rng, draw: usize) -> CandidateFix {
    let z = prior_draw(rng, model.latent_dim());
    let mut state = model.start(&z);
    let mut prev = TokenId::GO;
    let mut emitted = Vec::new();
    let mut score = 0.0;
    for _ in 0..model.max_len() {
        let (next, probs) = model.step(&state, prev);
        state = next;
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let k = gumbel_sample_step(&logits, tau, rng);
        score += logits[k];
        prev = TokenId(k as u32);
        emitted.push(prev);
        if prev == TokenId::EOS {
            break;
        }
    }
    CandidateFix::from_emitted(vocab, &emitted, score, draw)
}

/// `plan.t_infer` independent draws in draw order. Each draw has its own
/// stream derived from a root taken from `rng`.
pub fn sample_candidates<M: StepModel>(model: &M, vocab: &Vocab, plan: &DecodePlan, rng: &mut Rng) -> Vec<CandidateFix> {
    let root: u64 = rng.random();
    (0..plan.t_infer).map(|i| sample_one(model, vocab, plan.temperature, &mut rng::derive(root, &[i as u64]), i)).collect()
}

/// Candidates for `plan.mode`.
pub fn candidates<M: StepModel>(model: &M, vocab: &Vocab, plan: &DecodePlan, rng: &mut Rng) -> Vec<CandidateFix> {
    match plan.mode {
        DecodeMode::Gumbel => sample_candidates(model, vocab, plan, rng),
        DecodeMode::Beam => beam_candidates(model, vocab, plan, rng),
    }
}

/// Mean pairwise distance between the emitted sequences as one-hot rows.
pub fn candidate_diversity(cands: &[CandidateFix], vocab_size: usize) -> f64 {
    let seqs: Vec<DistributionSeq> = cands.iter().map(|c| DistributionSeq::one_hot(&c.raw, vocab_size)).collect();
    mean_pairwise_distance(&seqs)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    draw: usize,
    score: f64,
    line_no: Option<usize>,
    truncated: bool,
    tokens: String,
    raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    program: Option<&'a str>,
}

/// Debug dump, one JSON object per candidate.
pub fn write_candidates(out: &mut dyn Write, vocab: &Vocab, program: Option<&str>, cands: &[CandidateFix]) -> io::Result<()> {
    for c in cands {
        let rec = DumpRecord {
            draw: c.draw,
            score: c.score,
            line_no: c.line_no,
            truncated: c.truncated,
            tokens: render_tokens(vocab, &c.tokens),
            raw: render_tokens(vocab, &c.raw),
            program,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    /// Next-token table keyed by the emitted prefix; unknown prefixes fall
    /// back to `default`.
    pub struct TableModel {
        pub vocab_size: usize,
        pub max_len: usize,
        pub table: Vec<(Vec<u32>, Vec<f64>)>,
        pub default: Vec<f64>,
        /// Per-dimension shift of the distribution by z, to make draws differ.
        pub z_shift: bool,
    }

    impl StepModel for TableModel {
        type State = (Vec<u32>, f64);

        fn vocab_size(&self) -> usize {
            self.vocab_size
        }
        fn latent_dim(&self) -> usize {
            1
        }
        fn max_len(&self) -> usize {
            self.max_len
        }
        fn start(&self, z: &[f64]) -> Self::State {
            (Vec::new(), if self.z_shift { z[0] } else { 0.0 })
        }
        fn step(&self, state: &Self::State, prev: TokenId) -> (Self::State, Vec<f64>) {
            let mut prefix = state.0.clone();
            if prev != TokenId::GO {
                prefix.push(prev.0);
            }
            let base = self.table.iter().find(|(p, _)| *p == prefix).map(|(_, d)| d.clone()).unwrap_or_else(|| self.default.clone());
            let probs = if state.1 == 0.0 {
                base
            } else {
                let w: Vec<f64> = base.iter().enumerate().map(|(i, p)| p * (state.1 * i as f64).exp()).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            };
            ((prefix, state.1), probs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::toy::TableModel;
    use super::*;
    use crate::lang::VocabConfig;

    #[test]
    fn gumbel_dominant_logit() {
        let mut r = rng::seeded(1);
        let hits = (0..10_000).filter(|_| gumbel_sample_step(&[10.0, -10.0], 1.0, &mut r) == 0).count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn gumbel_uniform_frequencies() {
        let v = 8;
        let n = 100_000;
        let mut r = rng::seeded(2);
        let mut counts = vec![0usize; v];
        for _ in 0..n {
            counts[gumbel_sample_step(&vec![0.3; v], 1.0, &mut r)] += 1;
        }
        let p = 1.0 / v as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
            chi2 += (c as f64 - n as f64 * p).powi(2) / (n as f64 * p);
        }
        // 99.9th percentile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 {chi2}");
    }

    #[test]
    fn gumbel_matches_softmax() {
        let logits = [1.0, 0.0, -1.0, 2.0];
        let mut p: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let n = 100_000;
        let mut r = rng::seeded(3);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[gumbel_sample_step(&logits, 1.0, &mut r)] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            let sigma = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - n as f64 * q).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn low_temperature_is_argmax() {
        let mut r = rng::seeded(4);
        for _ in 0..1000 {
            assert_eq!(gumbel_sample_step(&[0.1, 0.5, 0.4], 1e-6, &mut r), 1);
        }
    }

    fn vocab() -> Vocab {
        Vocab::new(VocabConfig { id_pool: 4, max_lines: 4 })
    }

    #[test]
    fn parse_emissions() {
        let v = vocab();
        let line2 = v.line_token(2).unwrap();
        let semi = v.parse_rendered("Semicolon:;").unwrap();
        let ok = CandidateFix::from_emitted(&v, &[line2, semi, TokenId::EOS], -1.0, 0);
        assert_eq!((ok.line_no, ok.tokens.clone()), (Some(2), vec![semi]));
        let none = CandidateFix::from_emitted(&v, &[TokenId::EOS], -0.1, 1);
        assert!(none.is_no_fix() && !none.is_applicable());
        let bad = CandidateFix::from_emitted(&v, &[semi, TokenId::EOS], -1.0, 2);
        assert!(!bad.is_applicable() && !bad.is_no_fix());
        let cut = CandidateFix::from_emitted(&v, &[line2, semi], -1.0, 3);
        assert!(cut.truncated && !cut.is_applicable());
        assert_eq!(cut.raw.last(), Some(&TokenId::EOS));
        let nested = CandidateFix::from_emitted(&v, &[line2, line2, TokenId::EOS], -1.0, 4);
        assert!(!nested.is_applicable());
    }

    #[test]
    fn eos_first_model_gives_no_fixes() {
        let v = vocab();
        let mut eos = vec![0.0; v.len()];
        eos[1] = 1.0;
        let m = TableModel { vocab_size: v.len(), max_len: 5, table: vec![], default: eos, z_shift: false };
        let plan = DecodePlan { t_infer: 7, ..Default::default() };
        let c = sample_candidates(&m, &v, &plan, &mut rng::seeded(0));
        assert_eq!(c.len(), 7);
        assert!(c.iter().all(CandidateFix::is_no_fix));
        assert_eq!(c.iter().map(|c| c.draw).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_replays_and_counts() {
        let v = vocab();
        let n = v.len();
        let m = TableModel { vocab_size: n, max_len: 6, table: vec![], default: vec![1.0 / n as f64; n], z_shift: true };
        let plan = DecodePlan { t_infer: 1, ..Default::default() };
        assert_eq!(sample_candidates(&m, &v, &plan, &mut rng::seeded(0)).len(), 1);
        let plan = DecodePlan { t_infer: 20, ..Default::default() };
        let a = sample_candidates(&m, &v, &plan, &mut rng::seeded(5));
        let b = sample_candidates(&m, &v, &plan, &mut rng::seeded(5));
        assert_eq!(a, b);
        assert!(a.iter().any(|c| c.truncated));
    }

    #[test]
    fn diversity_of_hard_candidates() {
        let v = vocab();
        let l1 = v.line_token(1).unwrap();
        let a = CandidateFix::from_emitted(&v, &[TokenId::EOS], 0.0, 0);
        let b = CandidateFix::from_emitted(&v, &[l1, TokenId::EOS], 0.0, 1);
        assert_eq!(candidate_diversity(&[a.clone(), a.clone()], v.len()), 0.0);
        // Both steps differ once padded: each contributes sqrt(2).
        assert!((candidate_diversity(&[a, b], v.len()) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dump_is_json_lines() {
        let v = vocab();
        let c = CandidateFix::from_emitted(&v, &[v.line_token(1).unwrap(), TokenId::EOS], -0.5, 0);
        let mut buf = Vec::new();
        write_candidates(&mut buf, &v, None, &[c.clone(), c]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let rec: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec["line_no"], 1);
    }
}
