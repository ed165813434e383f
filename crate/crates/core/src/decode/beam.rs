use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng as _;

use super::{prior_draw, CandidateFix, DecodePlan, StepModel};
use crate::lang::{TokenId, Vocab};
use crate::rng::{self, Rng};

struct Hyp<S> {
    tokens: Vec<TokenId>,
    state: S,
    score: f64,
}

/// Best first by length-normalized score, ties by token order.
fn rank(a: &CandidateFix, b: &CandidateFix) -> Ordering {
    b.normalized_score().total_cmp(&a.normalized_score()).then_with(|| a.raw.cmp(&b.raw))
}

fn finish(vocab: &Vocab, done: &mut Vec<CandidateFix>, tokens: &[TokenId], score: f64) {
    done.push(CandidateFix::from_emitted(vocab, tokens, score, 0));
}

/// Length-normalized beam search under a fixed latent `z`. Returns up to
/// `width` completed hypotheses, best first. Sequences still open at the
/// length limit are kept as truncated candidates.
pub fn beam_search<M: StepModel>(model: &M, vocab: &Vocab, z: &[f64], width: usize) -> Vec<CandidateFix> {
    let max_len = model.max_len();
    let mut live = vec![Hyp { tokens: Vec::new(), state: model.start(z), score: 0.0 }];
    let mut done: Vec<CandidateFix> = Vec::new();
    for _ in 0..max_len {
        let mut children = Vec::new();
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(TokenId::GO);
            let (state, probs) = model.step(&h.state, prev);
            for (k, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    expansions.push((h.score + p.ln(), hi, k));
                }
            }
            children.push(state);
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| live[a.1].tokens.cmp(&live[b.1].tokens)).then(a.2.cmp(&b.2)));
        expansions.truncate(width);
        let mut next = Vec::with_capacity(expansions.len());
        for (score, hi, k) in expansions {
            let mut tokens = live[hi].tokens.clone();
            tokens.push(TokenId(k as u32));
            if k == TokenId::EOS.index() {
                finish(vocab, &mut done, &tokens, score);
            } else {
                next.push(Hyp { tokens, state: children[hi].clone(), score });
            }
        }
        live = next;
        if live.is_empty() || settled(&mut done, &live, width, max_len) {
            break;
        }
    }
    if !live.is_empty() && live[0].tokens.len() == max_len {
        for h in &live {
            finish(vocab, &mut done, &h.tokens, h.score);
        }
    }
    done.sort_by(rank);
    done.truncate(width);
    done
}

/// No open hypothesis can still enter the top `width`: its final
/// normalized score is at most `score / max_len` since scores only fall.
fn settled<S>(done: &mut [CandidateFix], live: &[Hyp<S>], width: usize, max_len: usize) -> bool {
    if done.len() < width {
        return false;
    }
    done.sort_by(rank);
    let bar = done[width - 1].normalized_score();
    live.iter().all(|h| h.score / (max_len as f64) < bar)
}

/// Every positive-probability completion under `z`, ranked as beam search
/// ranks them, cut to `k`. Exponential; for checking beam search.
pub fn exhaustive_candidates<M: StepModel>(model: &M, vocab: &Vocab, z: &[f64], k: usize) -> Vec<CandidateFix> {
    fn walk<M: StepModel>(model: &M, vocab: &Vocab, state: &M::State, tokens: &mut Vec<TokenId>, score: f64, out: &mut Vec<CandidateFix>) {
        if tokens.len() == model.max_len() {
            finish(vocab, out, tokens, score);
            return;
        }
        let prev = tokens.last().copied().unwrap_or(TokenId::GO);
        let (next, probs) = model.step(state, prev);
        for (t, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            tokens.push(TokenId(t as u32));
            if t == TokenId::EOS.index() {
                finish(vocab, out, tokens, score + p.ln());
            } else {
                walk(model, vocab, &next, tokens, score + p.ln(), out);
            }
            tokens.pop();
        }
    }
    let mut out = Vec::new();
    walk(model, vocab, &model.start(z), &mut Vec::new(), 0.0, &mut out);
    out.sort_by(rank);
    out.truncate(k);
    out
}

/// Beam search under `plan.n_z` prior draws of z, pooled, deduplicated by
/// emitted sequence, ranked by normalized score and cut to `plan.t_infer`.
pub fn beam_candidates<M: StepModel>(model: &M, vocab: &Vocab, plan: &DecodePlan, rng: &mut Rng) -> Vec<CandidateFix> {
    let root: u64 = rng.random();
    let mut pool = Vec::new();
    for zi in 0..plan.n_z {
        let z = prior_draw(&mut rng::derive(root, &[zi as u64]), model.latent_dim());
        for (j, mut c) in beam_search(model, vocab, &z, plan.beam_width).into_iter().enumerate() {
            c.draw = zi * plan.beam_width + j;
            pool.push(c);
        }
    }
    pool.sort_by(|a, b| b.normalized_score().total_cmp(&a.normalized_score()).then(a.draw.cmp(&b.draw)));
    let mut seen = HashSet::new();
    pool.retain(|c| seen.insert(c.raw.clone()));
    pool.truncate(plan.t_infer);
    pool
}

#[cfg(test)]
mod tests {
    use super::super::toy::TableModel;
    use super::*;
    use crate::lang::VocabConfig;

    fn vocab() -> Vocab {
        Vocab::new(VocabConfig { id_pool: 2, max_lines: 2 })
    }

    /// Three-step model over a vocabulary where only pad, eos and two line
    /// markers carry mass; anything else is unreachable.
    fn three_step(v: &Vocab) -> TableModel {
        let n = v.len();
        let l1 = v.line_token(1).unwrap().index();
        let l2 = v.line_token(2).unwrap().index();
        let dist = |pairs: &[(usize, f64)]| {
            let mut d = vec![0.0; n];
            for &(i, p) in pairs {
                d[i] = p;
            }
            d
        };
        TableModel {
            vocab_size: n,
            max_len: 3,
            table: vec![
                (vec![], dist(&[(1, 0.3), (l1, 0.45), (l2, 0.25)])),
                (vec![l1 as u32], dist(&[(1, 0.2), (l1, 0.5), (l2, 0.3)])),
                (vec![l2 as u32], dist(&[(1, 0.6), (l2, 0.4)])),
            ],
            default: dist(&[(1, 0.55), (l1, 0.25), (l2, 0.2)]),
            z_shift: false,
        }
    }

    #[test]
    fn wide_beam_equals_enumeration() {
        let v = vocab();
        let m = three_step(&v);
        // 3 live symbols, 3 steps: 27 ≥ every completion.
        let beam = beam_search(&m, &v, &[0.0], 27);
        let all = exhaustive_candidates(&m, &v, &[0.0], 27);
        assert_eq!(beam, all);
        let mass: f64 = all.iter().map(|c| c.score.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        for k in [1, 3, 5] {
            assert_eq!(beam_search(&m, &v, &[0.0], 27)[..k], exhaustive_candidates(&m, &v, &[0.0], k)[..]);
        }
    }

    #[test]
    fn hand_ranked_top() {
        let v = vocab();
        let m = three_step(&v);
        let all = exhaustive_candidates(&m, &v, &[0.0], 100);
        let (l1, l2) = (v.line_token(1).unwrap(), v.line_token(2).unwrap());
        // 0.45·0.5·0.55 over 3 steps, then 0.45·0.3·0.55 over 3, then 0.25·0.6 over 2.
        assert_eq!(all[0].raw, vec![l1, l1, TokenId::EOS]);
        assert!((all[0].score - (0.45f64.ln() + 0.5f64.ln() + 0.55f64.ln())).abs() < 1e-15);
        assert_eq!(all[1].raw, vec![l1, l2, TokenId::EOS]);
        assert_eq!(all[2].raw, vec![l2, TokenId::EOS]);
        assert!((all[2].normalized_score() - (0.25f64 * 0.6).ln() / 2.0).abs() < 1e-15);
        assert!(all[3].truncated && all[3].raw == vec![l1, l1, l1, TokenId::EOS]);
    }

    #[test]
    fn narrow_beam_is_ordered_and_deduplicated() {
        let v = vocab();
        let mut m = three_step(&v);
        m.z_shift = true;
        let plan = DecodePlan { mode: super::super::DecodeMode::Beam, beam_width: 2, n_z: 6, t_infer: 5, ..Default::default() };
        let c = beam_candidates(&m, &v, &plan, &mut rng::seeded(3));
        assert!(c.len() <= 5 && !c.is_empty());
        for w in c.windows(2) {
            assert!(w[0].normalized_score() >= w[1].normalized_score());
        }
        let distinct: HashSet<_> = c.iter().map(|c| c.raw.clone()).collect();
        assert_eq!(distinct.len(), c.len());
        assert!(c.iter().all(|c| c.raw.last() == Some(&TokenId::EOS)));
    }

    #[test]
    fn early_stop_keeps_exact_top() {
        let v = vocab();
        let mut m = three_step(&v);
        m.max_len = 6;
        let beam = beam_search(&m, &v, &[0.0], 800);
        assert_eq!(beam[..4], exhaustive_candidates(&m, &v, &[0.0], 4)[..]);
    }
}
