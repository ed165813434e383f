use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{check, parse_tokens, rename, render_tokens, Program, Vocab};
use crate::rng;

use super::mutate::{stack, FixTarget, MutationFamily};
use super::CorpusError;

pub const N_FOLDS: usize = 5;

/// Line separator inside the `x` field of a pair file.
pub const LINE_BREAK: char = '⏎';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    /// Erroneous program, identifiers in first-occurrence order.
    pub x: Program,
    /// Fix for the first incorrect line of `x`.
    pub y: FixTarget,
    pub fold: usize,
    /// Family of each stacked mutation, in application order.
    pub families: Vec<MutationFamily>,
}

impl TrainingPair {
    /// Family the pair is reported under: that of its first mutation.
    pub fn family(&self) -> MutationFamily {
        self.families.first().copied().unwrap_or(MutationFamily::Typographic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_pairs: usize,
    /// Share of pairs drawn from the typographic family.
    pub typo_ratio: f64,
    /// Stacked mutations per pair are uniform in `1..=max_mutations`.
    pub max_mutations: usize,
    /// Draws per pair before giving up on a seed.
    pub max_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n_pairs: 1000, typo_ratio: 0.5, max_mutations: 5, max_attempts: 200 }
    }
}

/// Whether a candidate pair satisfies the corpus invariants: the program is
/// broken, and restoring the fix line strictly reduces the diagnostic count.
pub fn pair_is_sound(vocab: &Vocab, x: &Program, y: &FixTarget) -> bool {
    let before = check(vocab, x).count;
    if before == 0 {
        return false;
    }
    match x.with_line(y.line_no, &y.tokens) {
        Some(fixed) => check(vocab, &fixed).count < before,
        None => false,
    }
}

/// Mutates seed programs into training pairs. Seeds are shuffled and dealt
/// round-robin into folds so that all mutants of one seed share a fold; pair
/// budgets are split evenly across seeds and family quotas are exact.
pub fn generate_corpus(vocab: &Vocab, seeds: &[Program], cfg: &CorpusConfig, seed: u64) -> Result<Vec<TrainingPair>, CorpusError> {
    if seeds.len() < N_FOLDS {
        return Err(CorpusError::InsufficientSeeds { seeds: seeds.len(), folds: N_FOLDS });
    }
    if let Some(index) = seeds.iter().position(|p| !check(vocab, p).accepted()) {
        return Err(CorpusError::SeedRejected { index });
    }
    if !(0.0..=1.0).contains(&cfg.typo_ratio) || cfg.max_mutations == 0 {
        return Err(CorpusError::Config("typo_ratio must lie in [0,1] and max_mutations be ≥ 1".into()));
    }

    let mut root = rng::derive(seed, &[0xc0]);
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.shuffle(&mut root);
    let mut fold_of = vec![0; seeds.len()];
    for (rank, &s) in order.iter().enumerate() {
        fold_of[s] = rank % N_FOLDS;
    }
    let mut quota = vec![0usize; seeds.len()];
    for (rank, &s) in order.iter().enumerate() {
        quota[s] = cfg.n_pairs / seeds.len() + usize::from(rank < cfg.n_pairs % seeds.len());
    }
    let n_typo = (cfg.n_pairs as f64 * cfg.typo_ratio).round() as usize;
    let mut families: Vec<MutationFamily> =
        (0..cfg.n_pairs).map(|i| if i < n_typo { MutationFamily::Typographic } else { MutationFamily::MissingDeclaration }).collect();
    families.shuffle(&mut root);

    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut slot = 0;
    for (si, source) in seeds.iter().enumerate() {
        for _ in 0..quota[si] {
            let family = families[slot];
            let mut r = rng::derive(seed, &[0xa1, slot as u64]);
            pairs.push(draw_pair(vocab, source, family, fold_of[si], cfg, &mut r).ok_or(CorpusError::Exhausted { seed: si })?);
            slot += 1;
        }
    }
    Ok(pairs)
}

fn draw_pair<R: Rng>(
    vocab: &Vocab,
    source: &Program,
    family: MutationFamily,
    fold: usize,
    cfg: &CorpusConfig,
    rng: &mut R,
) -> Option<TrainingPair> {
    for _ in 0..cfg.max_attempts {
        let count = rng.random_range(1..=cfg.max_mutations);
        let Ok((x, y, records)) = stack(vocab, source, family, count, rng) else { continue };
        if !pair_is_sound(vocab, &x, &y) {
            continue;
        }
        let (x, mut names) = x.canonicalize(vocab);
        let y = FixTarget { line_no: y.line_no, tokens: y.tokens.iter().map(|&t| rename(vocab, &mut names, t)).collect() };
        return Some(TrainingPair { x, y, fold, families: records.iter().map(|r| r.family).collect() });
    }
    None
}

/// One record per line: `fold \t x \t y \t families`.
pub fn format_pair(vocab: &Vocab, pair: &TrainingPair) -> Result<String, CorpusError> {
    let x = pair.x.lines.iter().map(|l| render_tokens(vocab, l)).collect::<Vec<_>>().join(&LINE_BREAK.to_string());
    let y = pair.y.to_sequence(vocab).ok_or_else(|| CorpusError::Config(format!("line {} has no LINE token", pair.y.line_no)))?;
    let families = pair.families.iter().map(|f| f.name()).collect::<Vec<_>>().join(",");
    Ok(format!("{}\t{}\t{}\t{}", pair.fold, x, render_tokens(vocab, &y), families))
}

pub fn parse_pair(vocab: &Vocab, record: &str) -> Result<TrainingPair, String> {
    let fields: Vec<&str> = record.split('\t').collect();
    let [fold, x, y, families] = fields[..] else {
        return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
    };
    let fold: usize = fold.parse().map_err(|_| format!("bad fold `{fold}`"))?;
    if fold >= N_FOLDS {
        return Err(format!("fold {fold} out of range"));
    }
    let lines =
        if x.is_empty() { Vec::new() } else { x.split(LINE_BREAK).map(|l| parse_tokens(vocab, l)).collect::<Result<Vec<_>, _>>()? };
    let y_seq = parse_tokens(vocab, y)?;
    let y = FixTarget::from_sequence(vocab, &y_seq).ok_or("fix is not `LINE_k .. _eos_`")?;
    let families = families.split(',').map(str::parse).collect::<Result<Vec<MutationFamily>, _>>()?;
    Ok(TrainingPair { x: Program::new(lines), y, fold, families })
}

pub fn save_pairs(vocab: &Vocab, pairs: &[TrainingPair], path: &Path) -> Result<(), CorpusError> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for pair in pairs {
        writeln!(out, "{}", format_pair(vocab, pair)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_pairs(vocab: &Vocab, path: &Path) -> Result<Vec<TrainingPair>, CorpusError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| parse_pair(vocab, line).map_err(|reason| CorpusError::Format { record: i + 1, reason }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seeds::{generate_seeds, SeedConfig};

    fn small_seeds(v: &Vocab, n: usize) -> Vec<Program> {
        generate_seeds(v, &SeedConfig { min_tokens: 40, max_tokens: 120, max_lines: 30 }, n, 11)
    }

    #[test]
    fn fold_sizes_by_task() {
        let v = Vocab::default();
        let seeds = small_seeds(&v, 10);
        let cfg = CorpusConfig { n_pairs: 100, ..Default::default() };
        let pairs = generate_corpus(&v, &seeds, &cfg, 5).unwrap();
        assert_eq!(pairs.len(), 100);
        for f in 0..N_FOLDS {
            let n = pairs.iter().filter(|p| p.fold == f).count();
            assert!((19..=21).contains(&n), "fold {f} has {n}");
        }
    }

    #[test]
    fn all_typographic_mix() {
        let v = Vocab::default();
        let seeds = small_seeds(&v, 5);
        let cfg = CorpusConfig { n_pairs: 40, typo_ratio: 1.0, ..Default::default() };
        let pairs = generate_corpus(&v, &seeds, &cfg, 1).unwrap();
        assert!(pairs.iter().all(|p| p.families.iter().all(|&f| f == MutationFamily::Typographic)));
    }

    #[test]
    fn insufficient_seeds() {
        let v = Vocab::default();
        let seeds = small_seeds(&v, 4);
        assert_eq!(
            generate_corpus(&v, &seeds, &CorpusConfig::default(), 0).unwrap_err(),
            CorpusError::InsufficientSeeds { seeds: 4, folds: 5 }
        );
    }

    #[test]
    fn rejects_broken_seed() {
        let v = Vocab::default();
        let mut seeds = small_seeds(&v, 5);
        seeds[2].lines[0].pop();
        assert_eq!(generate_corpus(&v, &seeds, &CorpusConfig::default(), 0).unwrap_err(), CorpusError::SeedRejected { index: 2 });
    }

    #[test]
    fn file_round_trip_and_errors() {
        let v = Vocab::default();
        let seeds = small_seeds(&v, 5);
        let pairs = generate_corpus(&v, &seeds, &CorpusConfig { n_pairs: 20, ..Default::default() }, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("fixsmith-pairs-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pairs.tsv");
        save_pairs(&v, &pairs, &path).unwrap();
        assert_eq!(load_pairs(&v, &path).unwrap(), pairs);

        let text = fs::read_to_string(&path).unwrap();
        let cut = text.lines().take(3).collect::<Vec<_>>().join("\n");
        let truncated = format!("{}\n{}", cut, &text.lines().nth(3).unwrap()[..10]);
        fs::write(&path, truncated).unwrap();
        assert!(matches!(load_pairs(&v, &path), Err(CorpusError::Format { record: 4, .. })));

        fs::write(&path, "").unwrap();
        assert!(load_pairs(&v, &path).unwrap().is_empty());
        fs::remove_dir_all(&dir).ok();
    }
}
