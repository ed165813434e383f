//! `gen`: seed programs, mutated pairs, one pair file per fold and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fixsmith::corpus::{
    generate_corpus, generate_seeds, load_pairs, save_pairs, CorpusConfig, CorpusError, MutationFamily, TrainingPair, N_FOLDS,
};
use fixsmith::lang::{Vocab, VocabConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SeedsSection};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub fold: usize,
    pub pairs: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub vocab: VocabConfig,
    pub seeds: SeedsSection,
    pub corpus: CorpusConfig,
    pub n_pairs: usize,
    /// Pair count per mutation family.
    pub families: BTreeMap<String, usize>,
    pub folds: Vec<FoldEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn corpus_error(e: CorpusError) -> CliError {
    match e {
        CorpusError::Config(_) | CorpusError::InsufficientSeeds { .. } => CliError::Config(e.to_string()),
        other => CliError::Io(other.to_string()),
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let vocab = Vocab::new(cfg.vocab);
    let out = &cfg.run.out;
    if cfg.seeds.n_programs == 0 || cfg.seeds.min_tokens > cfg.seeds.max_tokens {
        return Err(CliError::Config("seeds: need n_programs ≥ 1 and min_tokens ≤ max_tokens".into()));
    }
    let seeds = generate_seeds(&vocab, &cfg.seeds.seed_config(), cfg.seeds.n_programs, cfg.run.seed);
    let pairs = generate_corpus(&vocab, &seeds, &cfg.corpus, cfg.run.seed).map_err(corpus_error)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;

    let mut families: BTreeMap<String, usize> = MutationFamily::ALL.iter().map(|f| (f.name().to_string(), 0)).collect();
    for p in &pairs {
        *families.entry(p.family().name().to_string()).or_default() += 1;
    }
    let mut folds = Vec::with_capacity(N_FOLDS);
    for k in 0..N_FOLDS {
        let fold: Vec<TrainingPair> = pairs.iter().filter(|p| p.fold == k).cloned().collect();
        let file = format!("fold_{k}.pairs");
        let path = out.join(&file);
        save_pairs(&vocab, &fold, &path).map_err(corpus_error)?;
        let sha256 = sha256_hex(&fs::read(&path).map_err(CliError::io(&path))?);
        folds.push(FoldEntry { fold: k, pairs: fold.len(), file, sha256 });
    }
    let manifest =
        Manifest { seed: cfg.run.seed, vocab: cfg.vocab, seeds: cfg.seeds, corpus: cfg.corpus, n_pairs: pairs.len(), families, folds };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out.join(MANIFEST), text + "\n").map_err(CliError::io(out))?;
    cfg.write_resolved(out)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Pairs of the listed folds, in fold order, after checking file hashes.
pub fn load_folds(dir: &Path, manifest: &Manifest, folds: &[usize]) -> Result<Vec<TrainingPair>, CliError> {
    let vocab = Vocab::new(manifest.vocab);
    let mut out = Vec::new();
    for &k in folds {
        let entry = manifest.folds.iter().find(|f| f.fold == k).ok_or_else(|| CliError::Config(format!("corpus has no fold {k}")))?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(CliError::Config(format!("{} does not match its manifest hash", path.display())));
        }
        out.extend(load_pairs(&vocab, &path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(out: &Path) -> RunConfig {
        let mut c =
            RunConfig::from_toml("[seeds]\nn_programs = 10\nmin_tokens = 30\nmax_tokens = 60\n[corpus]\nn_pairs = 40\nmax_mutations = 1\n")
                .unwrap();
        c.run.out = out.to_path_buf();
        c
    }

    #[test]
    fn manifest_is_reproducible() {
        let d = tempfile::tempdir().unwrap();
        let a = cmd_gen(&small(&d.path().join("a"))).unwrap();
        let b = cmd_gen(&small(&d.path().join("nested/b"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read(d.path().join("a").join(MANIFEST)).unwrap(), fs::read(d.path().join("nested/b").join(MANIFEST)).unwrap());
        assert_eq!(a.folds.iter().map(|f| f.pairs).sum::<usize>(), 40);
        let back = load_folds(&d.path().join("a"), &a, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(back.len(), 40);
    }

    #[test]
    fn typo_only_mix() {
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.corpus.typo_ratio = 1.0;
        let m = cmd_gen(&c).unwrap();
        assert_eq!(m.families["Typographic"], 40);
        assert_eq!(m.families["MissingDeclaration"], 0);
    }

    #[test]
    fn bad_mix_is_config_error() {
        let d = tempfile::tempdir().unwrap();
        let mut c = small(d.path());
        c.corpus.typo_ratio = 1.5;
        assert!(matches!(cmd_gen(&c), Err(CliError::Config(_))));
    }

    #[test]
    fn tampered_fold_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let m = cmd_gen(&small(d.path())).unwrap();
        fs::write(d.path().join("fold_0.pairs"), "").unwrap();
        assert!(matches!(load_folds(d.path(), &m, &[0]), Err(CliError::Config(_))));
    }
}
