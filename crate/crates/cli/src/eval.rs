//! `eval` and `intended-fix-eval` over the held-out fold.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use fixsmith::corpus::TrainingPair;
use fixsmith::decode::{candidate_diversity, CandidateFix, DecodePlan};
use fixsmith::lang::{Program, Vocab};
use fixsmith::net::ModelParameters;
use fixsmith::repair::{iterative_repair, CandidateSource, ModelSource};
use fixsmith::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::gen::{load_folds, load_manifest, sha256_hex, MANIFEST};
use crate::report::{pct, EvalMeta, EvalReport, ProgramResult, SweepPoint};
use crate::train::{load_model, RunInfo};
use crate::{thread_pool, CliError};

pub const INTENDED_FIX_FILE: &str = "intended_fix.json";

/// Serves prefixes of one cached draw per (iteration, program), so smaller
/// sample counts see subsets of the candidates larger ones see.
struct PrefixSource<'a, 'm> {
    inner: &'a mut ModelSource<'m>,
    cache: &'a mut HashMap<(usize, Program), Vec<CandidateFix>>,
    take: usize,
}

impl CandidateSource for PrefixSource<'_, '_> {
    fn candidates(&mut self, program: &Program, iteration: usize) -> Vec<CandidateFix> {
        let inner = &mut *self.inner;
        let all = self.cache.entry((iteration, program.clone())).or_insert_with(|| inner.candidates(program, iteration));
        all.iter().take(self.take).cloned().collect()
    }
}

struct Held {
    params: ModelParameters,
    vocab: Vocab,
    pairs: Vec<TrainingPair>,
}

/// Loads the checkpoint and the held-out fold, refusing mismatched pairs.
fn held_out(cfg: &RunConfig) -> Result<Held, CliError> {
    cfg.validate_fold()?;
    cfg.validate_inference()?;
    let ck = cfg.run.checkpoint.as_deref().ok_or_else(|| CliError::Config("needs --checkpoint".into()))?;
    let corpus = cfg.run.corpus.as_deref().ok_or_else(|| CliError::Config("needs --corpus".into()))?;
    let (params, info) = load_model(ck)?;
    let manifest = load_manifest(corpus)?;
    check_provenance(&info, cfg.run.fold, corpus)?;
    if info.vocab != manifest.vocab {
        return Err(CliError::Config("checkpoint and corpus use different vocabularies".into()));
    }
    let mut pairs = load_folds(corpus, &manifest, &[cfg.run.fold])?;
    if cfg.eval.limit > 0 {
        pairs.truncate(cfg.eval.limit);
    }
    Ok(Held { params, vocab: Vocab::new(info.vocab), pairs })
}

fn check_provenance(info: &RunInfo, fold: usize, corpus: &Path) -> Result<(), CliError> {
    if info.fold != fold {
        return Err(CliError::Config(format!("checkpoint was trained with fold {} held out, not fold {fold}", info.fold)));
    }
    let sha = sha256_hex(&fs::read(corpus.join(MANIFEST)).map_err(CliError::io(corpus))?);
    if sha != info.corpus_sha256 {
        return Err(CliError::Config("checkpoint was trained on a different corpus".into()));
    }
    Ok(())
}

/// Repairs one program at the main sample count and every sweep point.
pub fn evaluate_program(params: &ModelParameters, vocab: &Vocab, pair: &TrainingPair, index: usize, cfg: &RunConfig) -> ProgramResult {
    let plan = cfg.decode;
    let seed = rng::derive_seed(cfg.run.seed, &[index as u64]);
    let max_iter = cfg.repair.max_iter;
    let t_main = plan.t_infer;
    let t_max = cfg.eval.sweep.iter().copied().chain([t_main]).max().unwrap_or(t_main);

    let mut sweep = Vec::with_capacity(cfg.eval.sweep.len());
    let (trace, first) = if cfg.eval.independent_draws {
        let mut src = ModelSource { params, vocab, plan, seed };
        let trace = iterative_repair(vocab, &pair.x, &mut src, max_iter);
        for &t in &cfg.eval.sweep {
            let plan = DecodePlan { t_infer: t, ..plan };
            let mut s = ModelSource { params, vocab, plan, seed: rng::derive_seed(seed, &[t as u64]) };
            sweep.push(SweepPoint::of(t, &iterative_repair(vocab, &pair.x, &mut s, max_iter)));
        }
        let first = src.candidates(&pair.x, 0);
        (trace, first)
    } else {
        let mut inner = ModelSource { params, vocab, plan: DecodePlan { t_infer: t_max, ..plan }, seed };
        let mut cache = HashMap::new();
        let mut run = |take: usize| {
            let mut s = PrefixSource { inner: &mut inner, cache: &mut cache, take };
            iterative_repair(vocab, &pair.x, &mut s, max_iter)
        };
        let trace = run(t_main);
        for &t in &cfg.eval.sweep {
            let p = if t == t_main { SweepPoint::of(t, &trace) } else { SweepPoint::of(t, &run(t)) };
            sweep.push(p);
        }
        let mut s = PrefixSource { inner: &mut inner, cache: &mut cache, take: t_main };
        let first = s.candidates(&pair.x, 0);
        (trace, first)
    };
    ProgramResult {
        index,
        family: pair.family().name().to_string(),
        trace,
        sweep,
        candidate_distance: candidate_diversity(&first, params.config.vocab_size),
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    if cfg.eval.sweep.contains(&0) {
        return Err(CliError::Config("sweep sample counts must be ≥ 1".into()));
    }
    let held = held_out(cfg)?;
    let results: Vec<ProgramResult> = thread_pool()?
        .install(|| held.pairs.par_iter().enumerate().map(|(i, p)| evaluate_program(&held.params, &held.vocab, p, i, cfg)).collect());
    let meta = EvalMeta {
        fold: cfg.run.fold,
        mode: cfg.decode.mode,
        samples: cfg.decode.t_infer,
        max_iter: cfg.repair.max_iter,
        independent_draws: cfg.eval.independent_draws,
    };
    let report = EvalReport::from_results(meta, &results);
    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    report.write(out, &results).map_err(CliError::io(out))?;
    if cfg.run.trace {
        let dir = out.join("traces");
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        for r in &results {
            let p = dir.join(format!("{:05}.json", r.index));
            fs::write(&p, serde_json::to_string(r).expect("result serializes")).map_err(CliError::io(&p))?;
        }
    }
    cfg.write_resolved(out)?;
    Ok(report)
}

/// Rebuilds a report from the trace files written by `eval --trace`.
pub fn report_from_traces(dir: &Path, meta: EvalMeta) -> Result<EvalReport, CliError> {
    let mut files: Vec<_> = fs::read_dir(dir.join("traces")).map_err(CliError::io(dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    files.sort();
    let mut results = Vec::with_capacity(files.len());
    for f in files {
        let text = fs::read_to_string(&f).map_err(CliError::io(&f))?;
        results.push(serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?);
    }
    Ok(EvalReport::from_results(meta, &results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntendedFixReport {
    pub fold: usize,
    pub samples: usize,
    pub pairs: usize,
    pub hits: usize,
    pub hit_rate_pct: f64,
    /// `[hits, pairs]` per mutation family.
    pub by_family: BTreeMap<String, [usize; 2]>,
}

/// Whether any candidate reproduces the pair's gold fix exactly.
pub fn is_intended_hit(pair: &TrainingPair, cands: &[CandidateFix]) -> bool {
    cands.iter().any(|c| c.line_no == Some(pair.y.line_no) && c.tokens == pair.y.tokens)
}

pub fn intended_fix_report(fold: usize, samples: usize, pairs: &[TrainingPair], hits: &[bool]) -> IntendedFixReport {
    let mut by_family: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    for (p, &h) in pairs.iter().zip(hits) {
        let e = by_family.entry(p.family().name().to_string()).or_default();
        e[0] += usize::from(h);
        e[1] += 1;
    }
    let n_hits = hits.iter().filter(|&&h| h).count();
    IntendedFixReport {
        fold,
        samples,
        pairs: pairs.len(),
        hits: n_hits,
        hit_rate_pct: if pairs.is_empty() { 0.0 } else { pct(n_hits, pairs.len()) },
        by_family,
    }
}

pub fn cmd_intended_fix_eval(cfg: &RunConfig) -> Result<IntendedFixReport, CliError> {
    let held = held_out(cfg)?;
    let hits: Vec<bool> = thread_pool()?.install(|| {
        held.pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let seed = rng::derive_seed(cfg.run.seed, &[i as u64]);
                let mut src = ModelSource { params: &held.params, vocab: &held.vocab, plan: cfg.decode, seed };
                is_intended_hit(p, &src.candidates(&p.x, 0))
            })
            .collect()
    });
    let report = intended_fix_report(cfg.run.fold, cfg.decode.t_infer, &held.pairs, &hits);
    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let p = out.join(INTENDED_FIX_FILE);
    fs::write(&p, serde_json::to_string_pretty(&report).expect("report serializes") + "\n").map_err(CliError::io(&p))?;
    cfg.write_resolved(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fixsmith::corpus::{generate_corpus, generate_seeds, CorpusConfig, SeedConfig};

    #[test]
    fn gold_emitting_stub_hits_everything() {
        let v = Vocab::default();
        let seeds = generate_seeds(&v, &SeedConfig { min_tokens: 30, max_tokens: 60, max_lines: 64 }, 5, 1);
        let pairs = generate_corpus(&v, &seeds, &CorpusConfig { n_pairs: 20, ..Default::default() }, 1).unwrap();
        let hits: Vec<bool> = pairs
            .iter()
            .map(|p| {
                let gold = CandidateFix::from_emitted(&v, &p.y.to_sequence(&v).unwrap(), 0.0, 0);
                is_intended_hit(p, &[CandidateFix::from_emitted(&v, &[fixsmith::lang::TokenId::EOS], 0.0, 1), gold])
            })
            .collect();
        let r = intended_fix_report(0, 2, &pairs, &hits);
        assert_eq!(r.hit_rate_pct, 100.0);
        assert_eq!(r.by_family.values().map(|e| e[1]).sum::<usize>(), 20);
        let none = intended_fix_report(0, 2, &pairs, &vec![false; pairs.len()]);
        assert_eq!(none.hits, 0);
    }
}
