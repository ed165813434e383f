//! `train`: fits a model on the non-held-out folds with per-epoch
//! checkpoints and a JSON-lines log.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use fixsmith::lang::VocabConfig;
use fixsmith::net::{read_checkpoint, write_checkpoint, Checkpoint, ModelParameters};
use fixsmith::objective::{ObjectiveError, ObjectiveKind};
use fixsmith::rng;
use fixsmith::train::{run_epoch, split_validation, EpochRecord, Example, TrainError, TrainState};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::gen::{load_folds, load_manifest, sha256_hex, MANIFEST};
use crate::CliError;

pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const LOG_FILE: &str = "train.log.jsonl";

/// Provenance stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub fold: usize,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub vocab: VocabConfig,
    pub corpus_sha256: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: u64,
}

fn train_error(e: TrainError) -> CliError {
    if e.is_numeric() {
        return CliError::Numeric(e.to_string());
    }
    match e {
        TrainError::Config(_) | TrainError::Objective(ObjectiveError::Config(_)) => CliError::Config(e.to_string()),
        other => CliError::Io(other.to_string()),
    }
}

/// Best parameters and their provenance from a model checkpoint.
pub fn load_model(path: &Path) -> Result<(ModelParameters, RunInfo), CliError> {
    let ck = read_checkpoint(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let info = ck
        .config
        .get("run")
        .and_then(|r| serde_json::from_value::<RunInfo>(r.clone()).ok())
        .ok_or_else(|| CliError::Config(format!("{}: no run information", path.display())))?;
    let params = ck.params().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((params, info))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    cfg.validate_fold()?;
    let corpus = cfg.run.corpus.as_deref().ok_or_else(|| CliError::Config("train needs a corpus directory".into()))?;
    let manifest = load_manifest(corpus)?;
    let tc = cfg.train_config();
    tc.validate().map_err(train_error)?;
    let vocab = fixsmith::lang::Vocab::new(manifest.vocab);
    let mc = cfg.model.model_config(vocab.len());
    mc.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let folds: Vec<usize> = (0..manifest.folds.len()).filter(|&k| k != cfg.run.fold).collect();
    let pairs = load_folds(corpus, &manifest, &folds)?;
    let examples: Vec<Example> = pairs.iter().filter_map(|p| Example::from_pair(&vocab, p)).collect();
    let (train, val) = split_validation(examples, tc.val_stride);
    if train.is_empty() {
        return Err(CliError::Config("no training pairs outside the held-out fold".into()));
    }

    let info = RunInfo {
        fold: cfg.run.fold,
        objective: tc.objective,
        seed: cfg.run.seed,
        vocab: manifest.vocab,
        corpus_sha256: sha256_hex(&fs::read(corpus.join(MANIFEST)).map_err(CliError::io(corpus))?),
    };
    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let state_path = out.join(STATE_FILE);
    let resuming = cfg.train.resume && state_path.exists();
    let mut state = if resuming {
        let ck = read_checkpoint(&state_path).map_err(|e| CliError::Config(format!("{}: {e}", state_path.display())))?;
        let prior: Option<RunInfo> = ck.config.get("run").and_then(|r| serde_json::from_value(r.clone()).ok());
        if prior.as_ref() != Some(&info) {
            return Err(CliError::Config("state checkpoint belongs to a different run".into()));
        }
        let st = TrainState::from_checkpoint(&ck).map_err(|e| CliError::Config(e.to_string()))?;
        if st.params.config != mc {
            return Err(CliError::Config("state checkpoint has a different model configuration".into()));
        }
        st
    } else {
        let params = ModelParameters::init(mc, &mut rng::derive(cfg.run.seed, &[0x1417])).map_err(|e| CliError::Config(e.to_string()))?;
        TrainState::new(params)
    };

    let log_path = out.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(CliError::io(&log_path))?;
    let mut log = BufWriter::new(file);
    let mut epochs = Vec::new();
    while state.epoch < tc.epochs {
        let mut io_err = None;
        let rec = run_epoch(&mut state, &train, &val, &tc, &mut |r| {
            if let Err(e) = writeln!(log, "{}", serde_json::to_string(r).expect("record serializes")) {
                io_err.get_or_insert(e);
            }
        });
        log.flush().map_err(CliError::io(&log_path))?;
        if let Some(e) = io_err {
            return Err(CliError::io(&log_path)(e));
        }
        let rec = rec.map_err(train_error)?;
        writeln!(log, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(CliError::io(&log_path))?;
        log.flush().map_err(CliError::io(&log_path))?;
        let run = serde_json::to_value(&info).expect("run info serializes");
        write_checkpoint(&state_path, &state.to_checkpoint(run.clone())).map_err(CliError::io(&state_path))?;
        let model = Checkpoint::from_params(&state.best_params, json!({ "run": run, "best_epoch": state.best_epoch }));
        write_checkpoint(&out.join(MODEL_FILE), &model).map_err(CliError::io(out))?;
        epochs.push(rec);
    }
    cfg.write_resolved(out)?;
    Ok(TrainOutcome { epochs, best_epoch: state.best_epoch, steps: state.step })
}
