//! `repair`: iterative repair of every `.c` file in a directory.

use std::fs;
use std::path::{Path, PathBuf};

use fixsmith::lang::{tokenize_mapped, Program, SourceMap, Vocab};
use fixsmith::repair::{iterative_repair, ModelSource, RepairStatus, RepairTrace};
use fixsmith::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::gen::sha256_hex;
use crate::train::load_model;
use crate::{thread_pool, CliError};

pub const REPORT_FILE: &str = "repair_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEntry {
    pub file: String,
    pub status: Option<RepairStatus>,
    pub initial_count: usize,
    pub final_count: usize,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub programs: Vec<RepairEntry>,
}

/// Source text with the lines changed by repair re-rendered; untouched lines
/// keep their original text.
pub fn render_repaired(vocab: &Vocab, source: &str, map: &SourceMap, before: &Program, after: &Program) -> String {
    if before == after {
        return source.to_string();
    }
    let mut lines: Vec<String> = source.lines().map(str::to_string).collect();
    for (i, (a, b)) in before.lines.iter().zip(&after.lines).enumerate() {
        if a != b {
            lines[i] = map.restore_line(vocab, i + 1, b);
        }
    }
    let mut text = lines.join("\n");
    if source.ends_with('\n') {
        text.push('\n');
    }
    text
}

/// Seed of a file's repair stream; depends on its name only, so the
/// outcome does not change with the rest of the directory.
pub fn file_seed(seed: u64, name: &str) -> u64 {
    let h = sha256_hex(name.as_bytes());
    rng::derive_seed(seed, &[u64::from_str_radix(&h[..16], 16).expect("hex digest")])
}

fn input_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "c"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_repair(cfg: &RunConfig) -> Result<RepairReport, CliError> {
    cfg.validate_inference()?;
    let ck = cfg.run.checkpoint.as_deref().ok_or_else(|| CliError::Config("repair needs --checkpoint".into()))?;
    let inputs = cfg.run.inputs.as_deref().ok_or_else(|| CliError::Config("repair needs --inputs".into()))?;
    let (params, info) = load_model(ck)?;
    let vocab = Vocab::new(info.vocab);
    let files = input_files(inputs)?;
    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(CliError::io(out))?;

    let work = |path: &PathBuf| -> Result<(RepairEntry, Option<(String, RepairTrace)>), CliError> {
        let name = path.file_name().expect("file entry").to_string_lossy().into_owned();
        let failed = |error: String| RepairEntry {
            file: name.clone(),
            status: None,
            initial_count: 0,
            final_count: 0,
            iterations: 0,
            error: Some(error),
        };
        let source = match fs::read_to_string(path) {
            Ok(s) => s,
            Err(e) => return Ok((failed(e.to_string()), None)),
        };
        let (program, map) = match tokenize_mapped(&vocab, &source) {
            Ok(v) => v,
            Err(e) => return Ok((failed(e.to_string()), None)),
        };
        let mut src = ModelSource { params: &params, vocab: &vocab, plan: cfg.decode, seed: file_seed(cfg.run.seed, &name) };
        let trace = iterative_repair(&vocab, &program, &mut src, cfg.repair.max_iter);
        let text = render_repaired(&vocab, &source, &map, &program, &trace.final_program);
        let target = out.join(&name);
        fs::write(&target, text).map_err(CliError::io(&target))?;
        let entry = RepairEntry {
            file: name,
            status: Some(trace.status),
            initial_count: trace.initial_count,
            final_count: trace.final_count,
            iterations: trace.iterations.len(),
            error: None,
        };
        Ok((entry, Some((path.file_stem().expect("file stem").to_string_lossy().into_owned(), trace))))
    };
    let results: Vec<_> = thread_pool()?.install(|| files.par_iter().map(work).collect::<Result<Vec<_>, _>>())?;

    let mut programs = Vec::with_capacity(results.len());
    for (entry, trace) in results {
        if let (true, Some((stem, t))) = (cfg.run.trace, trace) {
            let p = out.join(format!("{stem}.trace.json"));
            fs::write(&p, serde_json::to_string_pretty(&t).expect("trace serializes")).map_err(CliError::io(&p))?;
        }
        programs.push(entry);
    }
    let report = RepairReport { programs };
    let p = out.join(REPORT_FILE);
    fs::write(&p, serde_json::to_string_pretty(&report).expect("report serializes") + "\n").map_err(CliError::io(&p))?;
    cfg.write_resolved(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fixsmith::lang::tokenize;

    #[test]
    fn unchanged_program_keeps_text() {
        let v = Vocab::default();
        let src = "int  total = 42;   // keep\nprintf(\"%d\", total);\n";
        let (p, map) = tokenize_mapped(&v, src).unwrap();
        assert_eq!(render_repaired(&v, src, &map, &p, &p), src);
    }

    #[test]
    fn changed_line_restores_names() {
        let v = Vocab::default();
        let src = "int total = 42 ;\ntotal = total + 1\n";
        let (p, map) = tokenize_mapped(&v, src).unwrap();
        let fixed = tokenize(&v, "int ID_0 = NUM ;\nID_0 = ID_0 + NUM ;").unwrap();
        assert_eq!(render_repaired(&v, src, &map, &p, &fixed), "int total = 42 ;\ntotal = total + 1 ;\n");
    }

    #[test]
    fn file_seeds_depend_on_name() {
        assert_eq!(file_seed(1, "a.c"), file_seed(1, "a.c"));
        assert_ne!(file_seed(1, "a.c"), file_seed(1, "b.c"));
        assert_ne!(file_seed(1, "a.c"), file_seed(2, "a.c"));
    }
}
