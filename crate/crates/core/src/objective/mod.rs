//! Training objectives (CVAE, best-of-many, diversity-sensitive best-of-many),
//! the Gaussian KL term, the candidate distance and the Adam update.

mod adam;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::TokenId;
use crate::net::{DistributionSeq, LatentGaussian, Tape, Tensor, Var};

pub use adam::{optimize_step, AdamConfig, AdamState};

/// Probability floor inside every logarithm of the NLL.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid objective config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite gradient in `{0}`")]
    NaN(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "cvae")]
    Cvae,
    #[serde(rename = "bms")]
    Bms,
    #[serde(rename = "ds-bms")]
    DsBms,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Cvae => "cvae",
            ObjectiveKind::Bms => "bms",
            ObjectiveKind::DsBms => "ds-bms",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cvae" => Ok(ObjectiveKind::Cvae),
            "bms" => Ok(ObjectiveKind::Bms),
            "ds-bms" => Ok(ObjectiveKind::DsBms),
            _ => Err(format!("unknown objective `{s}` (expected cvae, bms or ds-bms)")),
        }
    }
}

/// Whether the diversity term compares soft decoder distributions or the
/// one-hot argmax tokens of each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub t_train: usize,
    pub t_infer: usize,
    pub lambda_div: f64,
    pub delta_clip: f64,
    pub distance: DistanceMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { t_train: 2, t_infer: 100, lambda_div: 1.0, delta_clip: 1.0, distance: DistanceMode::Soft }
    }
}

impl SamplerConfig {
    pub fn validate(&self, objective: ObjectiveKind) -> Result<(), ObjectiveError> {
        if self.t_train == 0 {
            return Err(ObjectiveError::Config("t_train must be ≥ 1".into()));
        }
        if objective == ObjectiveKind::DsBms && self.t_train < 2 {
            return Err(ObjectiveError::Config("ds-bms needs t_train ≥ 2".into()));
        }
        if [self.lambda_div, self.delta_clip].iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(ObjectiveError::Config("lambda_div and delta_clip must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub objective: ObjectiveKind,
    pub nll_per_sample: Vec<f64>,
    pub kl: f64,
    /// `λ · min(min pairwise distance, δ)`; zero for cvae and bms.
    pub diversity_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the parts.
    pub fn recompute(&self) -> f64 {
        let n = &self.nll_per_sample;
        match self.objective {
            ObjectiveKind::Cvae => n.iter().sum::<f64>() / n.len() as f64 + self.kl,
            ObjectiveKind::Bms => min(n) + self.kl,
            ObjectiveKind::DsBms => min(n) + self.kl - self.diversity_term,
        }
    }
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn kl_std_normal(q: &LatentGaussian) -> f64 {
    0.5 * q.mu.iter().zip(&q.log_var).map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>()
}

/// `Σ_t −ln max(p_t[y_t], ε)` over a teacher-forced distribution sequence.
pub fn nll(dist: &DistributionSeq, y: &[TokenId]) -> Result<f64, ObjectiveError> {
    if dist.len() != y.len() {
        return Err(ObjectiveError::Shape(format!("{} steps for {} target tokens", dist.len(), y.len())));
    }
    let mut total = 0.0;
    for (p, t) in dist.steps.iter().zip(y) {
        let pt = *p.get(t.index()).ok_or_else(|| ObjectiveError::Shape(format!("token {} outside distribution", t.0)))?;
        total -= pt.max(PROB_FLOOR).ln();
    }
    Ok(total)
}

fn non_empty(nlls: &[f64]) -> Result<(), ObjectiveError> {
    if nlls.is_empty() {
        Err(ObjectiveError::Config("at least one sample is required".into()))
    } else {
        Ok(())
    }
}

pub fn cvae_loss(nlls: &[f64], kl: f64) -> Result<LossBreakdown, ObjectiveError> {
    non_empty(nlls)?;
    let total = nlls.iter().sum::<f64>() / nlls.len() as f64 + kl;
    Ok(LossBreakdown { objective: ObjectiveKind::Cvae, nll_per_sample: nlls.to_vec(), kl, diversity_term: 0.0, total })
}

pub fn bms_loss(nlls: &[f64], kl: f64) -> Result<LossBreakdown, ObjectiveError> {
    non_empty(nlls)?;
    Ok(LossBreakdown { objective: ObjectiveKind::Bms, nll_per_sample: nlls.to_vec(), kl, diversity_term: 0.0, total: min(nlls) + kl })
}

/// `dists` lists the pairwise distances of all `i < j` sample pairs.
pub fn ds_bms_loss(nlls: &[f64], kl: f64, dists: &[f64], cfg: &SamplerConfig) -> Result<LossBreakdown, ObjectiveError> {
    let t = nlls.len();
    if t < 2 {
        return Err(ObjectiveError::Config(format!("ds-bms needs at least 2 samples, got {t}")));
    }
    if dists.len() != t * (t - 1) / 2 {
        return Err(ObjectiveError::Shape(format!("{} distances for {t} samples", dists.len())));
    }
    let diversity_term = cfg.lambda_div * min(dists).min(cfg.delta_clip);
    Ok(LossBreakdown {
        objective: ObjectiveKind::DsBms,
        nll_per_sample: nlls.to_vec(),
        kl,
        diversity_term,
        total: min(nlls) + kl - diversity_term,
    })
}

/// Mean per-step Euclidean distance after padding the shorter sequence with
/// point masses on `_pad_`.
pub fn candidate_distance(a: &DistributionSeq, b: &DistributionSeq) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 0.0;
    }
    let v = a.steps.iter().chain(&b.steps).map(Vec::len).max().unwrap_or(1);
    let pad = pad_mass(v);
    let mut total = 0.0;
    for t in 0..n {
        let x = a.steps.get(t).unwrap_or(&pad);
        let y = b.steps.get(t).unwrap_or(&pad);
        total += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    }
    total / n as f64
}

fn pad_mass(v: usize) -> Vec<f64> {
    let mut p = vec![0.0; v];
    p[TokenId::PAD.index()] = 1.0;
    p
}

/// Mean over all `i < j` pairs; zero for fewer than two sequences.
pub fn mean_pairwise_distance(seqs: &[DistributionSeq]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            total += candidate_distance(&seqs[i], &seqs[j]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// [`candidate_distance`] on tape nodes, differentiable in both sequences.
pub fn distance_on_tape(tape: &mut Tape, a: &[Var], b: &[Var], vocab_size: usize) -> Var {
    let n = a.len().max(b.len());
    let pad = tape.constant(Tensor::vector(pad_mass(vocab_size)));
    let mut norms = Vec::with_capacity(n);
    for t in 0..n {
        let x = a.get(t).copied().unwrap_or(pad);
        let y = b.get(t).copied().unwrap_or(pad);
        let d = tape.sub(x, y);
        norms.push(tape.norm2(d));
    }
    let all = tape.concat(&norms);
    let s = tape.sum(all);
    tape.scale(s, 1.0 / n.max(1) as f64)
}

/// Combines per-sample NLL nodes, the KL node and (for ds-bms) pairwise
/// distance nodes into the objective's total.
pub fn loss_on_tape(tape: &mut Tape, kind: ObjectiveKind, nlls: &[Var], kl: Var, dists: &[Var], cfg: &SamplerConfig) -> Var {
    match kind {
        ObjectiveKind::Cvae => {
            let all = tape.concat(nlls);
            let s = tape.sum(all);
            let mean = tape.scale(s, 1.0 / nlls.len() as f64);
            tape.add(mean, kl)
        }
        ObjectiveKind::Bms => {
            let best = tape.min(nlls);
            tape.add(best, kl)
        }
        ObjectiveKind::DsBms => {
            let best = tape.min(nlls);
            let base = tape.add(best, kl);
            let closest = tape.min(dists);
            let clipped = tape.min_const(closest, cfg.delta_clip);
            let div = tape.scale(clipped, cfg.lambda_div);
            tape.sub(base, div)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    use crate::rng;

    fn seq(steps: Vec<Vec<f64>>) -> DistributionSeq {
        DistributionSeq { steps, ..Default::default() }
    }

    fn one_hot(i: usize, v: usize) -> Vec<f64> {
        let mut p = vec![0.0; v];
        p[i] = 1.0;
        p
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_std_normal(&LatentGaussian::standard(4)), 0.0);
        let q = LatentGaussian { mu: vec![1.0], log_var: vec![(4.0f64).ln()] };
        assert!((kl_std_normal(&q) - (2.0 - 2f64.ln())).abs() < 1e-12);
        assert!((kl_std_normal(&q) - 1.3069).abs() < 1e-4);
    }

    /// Monte-Carlo estimate of E_q[log q(z) − log p(z)].
    fn kl_monte_carlo(q: &LatentGaussian, draws: usize, seed: u64) -> f64 {
        let mut r = rng::seeded(seed);
        let mut total = 0.0;
        for _ in 0..draws {
            let mut s = 0.0;
            for (&m, &lv) in q.mu.iter().zip(&q.log_var) {
                let e: f64 = StandardNormal.sample(&mut r);
                let z = m + (0.5 * lv).exp() * e;
                // log q − log p; the 2π terms cancel.
                s += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
            }
            total += s;
        }
        total / draws as f64
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut r = rng::seeded(9);
        for k in 0..5 {
            let dim = r.random_range(1..5);
            let q = LatentGaussian {
                mu: (0..dim).map(|_| r.random_range(-1.5..1.5)).collect(),
                log_var: (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
            };
            let exact = kl_std_normal(&q);
            let mc = kl_monte_carlo(&q, 100_000, k);
            assert!((mc - exact).abs() <= 0.02 * exact.max(1e-3), "exact {exact} mc {mc}");
        }
    }

    #[test]
    fn nll_cases() {
        let y = [TokenId(0), TokenId(2)];
        let hit = seq(vec![one_hot(0, 3), one_hot(2, 3)]);
        assert_eq!(nll(&hit, &y).unwrap(), 0.0);
        let uniform = seq(vec![vec![1.0 / 3.0; 3]; 2]);
        assert!((nll(&uniform, &y).unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
        let miss = seq(vec![one_hot(1, 3), one_hot(2, 3)]);
        assert!((nll(&miss, &y).unwrap() - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(matches!(nll(&hit, &y[..1]), Err(ObjectiveError::Shape(_))));
    }

    #[test]
    fn loss_arithmetic() {
        assert_eq!(cvae_loss(&[2.0, 4.0], 1.0).unwrap().total, 4.0);
        assert_eq!(bms_loss(&[2.0, 4.0], 1.0).unwrap().total, 3.0);
        assert_eq!(cvae_loss(&[2.5], 1.0).unwrap().total, bms_loss(&[2.5], 1.0).unwrap().total);
        assert_eq!(cvae_loss(&[3.0, 3.0], 0.5).unwrap().total, bms_loss(&[3.0, 3.0], 0.5).unwrap().total);

        let open = SamplerConfig { delta_clip: f64::INFINITY, ..Default::default() };
        let l = ds_bms_loss(&[2.0, 2.5, 4.0], 1.0, &[0.5, 0.2, 0.9], &open).unwrap();
        assert!((l.total - 2.8).abs() < 1e-12);
        let clipped = SamplerConfig { delta_clip: 0.3, ..Default::default() };
        let l = ds_bms_loss(&[2.0, 2.5, 4.0], 1.0, &[0.5, 0.4, 0.9], &clipped).unwrap();
        assert!((l.total - 2.7).abs() < 1e-12);
        let same = ds_bms_loss(&[2.0, 3.0], 1.0, &[0.0], &SamplerConfig::default()).unwrap();
        assert_eq!(same.total, bms_loss(&[2.0, 3.0], 1.0).unwrap().total);
        assert!(matches!(ds_bms_loss(&[2.0], 1.0, &[], &open), Err(ObjectiveError::Config(_))));
        for b in [l, same] {
            assert!((b.recompute() - b.total).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_validation() {
        let one = SamplerConfig { t_train: 1, ..Default::default() };
        assert!(one.validate(ObjectiveKind::Bms).is_ok());
        assert!(matches!(one.validate(ObjectiveKind::DsBms), Err(ObjectiveError::Config(_))));
    }

    #[test]
    fn distance_cases() {
        let a = seq(vec![one_hot(1, 4), one_hot(2, 4), one_hot(3, 4)]);
        assert_eq!(candidate_distance(&a, &a), 0.0);
        let b = seq(vec![one_hot(2, 4), one_hot(3, 4), one_hot(1, 4)]);
        assert!((candidate_distance(&a, &b) - 2f64.sqrt()).abs() < 1e-12);
    }

    /// Explicit padding, then the plain per-step mean.
    fn padded_oracle(a: &DistributionSeq, b: &DistributionSeq) -> f64 {
        let n = a.len().max(b.len());
        if n == 0 {
            return 0.0;
        }
        let v = a.steps.iter().chain(&b.steps).map(Vec::len).max().unwrap();
        let pad = |s: &DistributionSeq| {
            let mut steps = s.steps.clone();
            steps.resize(n, one_hot(0, v));
            steps
        };
        let (pa, pb) = (pad(a), pad(b));
        pa.iter().zip(&pb).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()).sum::<f64>() / n as f64
    }

    #[test]
    fn distance_with_padding() {
        let b = seq(vec![vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6], vec![0.0, 1.0, 0.0], vec![0.5, 0.25, 0.25]]);
        let a = seq(b.steps[..2].to_vec());
        // Steps 3 and 4 compare (1,0,0) with (0,1,0) and (0.5,0.25,0.25).
        let hand = (2f64.sqrt() + (0.25f64 + 0.0625 + 0.0625).sqrt()) / 4.0;
        assert!((candidate_distance(&a, &b) - hand).abs() < 1e-12);
        assert!((candidate_distance(&a, &b) - padded_oracle(&a, &b)).abs() < 1e-12);
    }

    fn arb_seq(v: usize) -> impl Strategy<Value = DistributionSeq> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, v), 0..5).prop_map(|steps| {
            seq(steps
                .into_iter()
                .map(|s| {
                    let z: f64 = s.iter().sum();
                    s.into_iter().map(|x| x / z).collect()
                })
                .collect())
        })
    }

    proptest! {
        #[test]
        fn distance_is_pseudometric(a in arb_seq(4), b in arb_seq(4), c in arb_seq(4)) {
            let (ab, ba) = (candidate_distance(&a, &b), candidate_distance(&b, &a));
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(candidate_distance(&a, &a) == 0.0);
            prop_assert!((ab - padded_oracle(&a, &b)).abs() < 1e-12);
            // The triangle inequality holds for sequences padded to a common length.
            let n = a.len().max(b.len()).max(c.len());
            let pad = |s: &DistributionSeq| {
                let mut steps = s.steps.clone();
                steps.resize(n, one_hot(0, 4));
                seq(steps)
            };
            let (a, b, c) = (pad(&a), pad(&b), pad(&c));
            let (ab, bc, ac) = (candidate_distance(&a, &b), candidate_distance(&b, &c), candidate_distance(&a, &c));
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn objective_ordering(
            nlls in prop::collection::vec(0.0f64..50.0, 2..6),
            kl in 0.0f64..10.0,
            d in prop::collection::vec(0.0f64..3.0, 15),
            lambda in 0.0f64..3.0,
        ) {
            let t = nlls.len();
            let dists = &d[..t * (t - 1) / 2];
            let cfg = SamplerConfig { lambda_div: lambda, ..Default::default() };
            let c = cvae_loss(&nlls, kl).unwrap().total;
            let b = bms_loss(&nlls, kl).unwrap().total;
            let s = ds_bms_loss(&nlls, kl, dists, &cfg).unwrap().total;
            prop_assert!(b <= c);
            prop_assert!(s <= b);
        }

        #[test]
        fn kl_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..6), lv in prop::collection::vec(-4.0f64..4.0, 6)) {
            let q = LatentGaussian { log_var: lv[..mu.len()].to_vec(), mu };
            prop_assert!(kl_std_normal(&q) >= 0.0);
        }
    }

    #[test]
    fn tape_losses_match_value_losses() {
        let params: Vec<Tensor> = Vec::new();
        let mut tape = Tape::new(&params);
        let nlls: Vec<Var> = [2.0, 2.5, 4.0].iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let kl = tape.constant(Tensor::scalar(1.0));
        let d: Vec<Var> = [0.5, 0.2, 0.9].iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let cfg = SamplerConfig::default();
        for kind in [ObjectiveKind::Cvae, ObjectiveKind::Bms, ObjectiveKind::DsBms] {
            let v = loss_on_tape(&mut tape, kind, &nlls, kl, &d, &cfg);
            let expect = match kind {
                ObjectiveKind::Cvae => cvae_loss(&[2.0, 2.5, 4.0], 1.0).unwrap(),
                ObjectiveKind::Bms => bms_loss(&[2.0, 2.5, 4.0], 1.0).unwrap(),
                ObjectiveKind::DsBms => ds_bms_loss(&[2.0, 2.5, 4.0], 1.0, &[0.5, 0.2, 0.9], &cfg).unwrap(),
            };
            assert!((tape.scalar(v) - expect.total).abs() < 1e-12);
        }
        let a: Vec<Var> = [vec![0.2, 0.8], vec![1.0, 0.0]].into_iter().map(|s| tape.constant(Tensor::vector(s))).collect();
        let b: Vec<Var> = [vec![0.6, 0.4]].into_iter().map(|s| tape.constant(Tensor::vector(s))).collect();
        let dv = distance_on_tape(&mut tape, &a, &b, 2);
        let expect = candidate_distance(&seq(vec![vec![0.2, 0.8], vec![1.0, 0.0]]), &seq(vec![vec![0.6, 0.4]]));
        assert!((tape.scalar(dv) - expect).abs() < 1e-12);
    }
}
