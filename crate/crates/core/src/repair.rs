//! Compiler-in-the-loop selection and iterative repair.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{candidates, CandidateFix, DecodePlan, NetStepModel};
use crate::lang::{check, DiagnosticReport, Program, TokenId, Vocab};
use crate::net::{encode_program, ModelParameters};
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("candidate names no line")]
    NotApplicable,
    #[error("line {line_no} is outside a {line_count}-line program")]
    OutOfRange { line_no: usize, line_count: usize },
}

/// Replaces the candidate's line with its tokens.
pub fn reconcile(x: &Program, fix: &CandidateFix) -> Result<Program, RepairError> {
    let line_no = fix.line_no.ok_or(RepairError::NotApplicable)?;
    x.with_line(line_no, &fix.tokens).ok_or(RepairError::OutOfRange { line_no, line_count: x.line_count() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index into the candidate list.
    pub index: usize,
    pub candidate: CandidateFix,
    pub program: Program,
    pub report: DiagnosticReport,
}

/// The applicable candidate with the fewest diagnostics after reconciliation,
/// ties to the higher score and then the earlier position. `None` unless the
/// winner strictly improves on `baseline`.
pub fn select_best(vocab: &Vocab, x: &Program, baseline: &DiagnosticReport, cands: &[CandidateFix]) -> Option<Selection> {
    let mut seen: HashMap<(usize, &[TokenId]), DiagnosticReport> = HashMap::new();
    let mut best: Option<(usize, Program, DiagnosticReport)> = None;
    for (i, c) in cands.iter().enumerate() {
        let Ok(program) = reconcile(x, c) else { continue };
        let key = (c.line_no.unwrap_or(0), c.tokens.as_slice());
        let report = seen.entry(key).or_insert_with(|| check(vocab, &program));
        let better = match &best {
            None => true,
            Some((bi, _, br)) => report.count < br.count || (report.count == br.count && c.score > cands[*bi].score),
        };
        if better {
            best = Some((i, program, report.clone()));
        }
    }
    let (index, program, report) = best?;
    (report.count < baseline.count).then(|| Selection { index, candidate: cands[index].clone(), program, report })
}

/// Supplies candidate fixes for the current program of a repair loop.
pub trait CandidateSource {
    fn candidates(&mut self, program: &Program, iteration: usize) -> Vec<CandidateFix>;
}

impl<F: FnMut(&Program, usize) -> Vec<CandidateFix>> CandidateSource for F {
    fn candidates(&mut self, program: &Program, iteration: usize) -> Vec<CandidateFix> {
        self(program, iteration)
    }
}

/// Candidates from a trained model. Iteration `i` draws from the stream
/// `(seed, i)`, so a program's repair replays independent of scheduling.
pub struct ModelSource<'a> {
    pub params: &'a ModelParameters,
    pub vocab: &'a Vocab,
    pub plan: DecodePlan,
    pub seed: u64,
}

impl CandidateSource for ModelSource<'_> {
    fn candidates(&mut self, program: &Program, iteration: usize) -> Vec<CandidateFix> {
        let x = program.encoder_tokens(self.vocab);
        let Ok(code) = encode_program(self.params, &x) else { return Vec::new() };
        let model = NetStepModel::new(self.params, &code);
        let mut r = rng::derive(self.seed, &[iteration as u64]);
        candidates(&model, self.vocab, &self.plan, &mut r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepairStatus {
    CompletelyFixed,
    PartiallyFixed,
    Unfixed,
}

impl RepairStatus {
    pub fn from_counts(initial: usize, final_count: usize) -> RepairStatus {
        if final_count == 0 {
            RepairStatus::CompletelyFixed
        } else if final_count < initial {
            RepairStatus::PartiallyFixed
        } else {
            RepairStatus::Unfixed
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RepairStatus::CompletelyFixed => "completely_fixed",
            RepairStatus::PartiallyFixed => "partially_fixed",
            RepairStatus::Unfixed => "unfixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Program the candidates were drawn for.
    pub program: Program,
    pub n_candidates: usize,
    pub chosen: Option<CandidateFix>,
    pub before: DiagnosticReport,
    /// Equals `before` when nothing was applied.
    pub after: DiagnosticReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairTrace {
    pub iterations: Vec<IterationRecord>,
    pub initial_count: usize,
    pub final_count: usize,
    pub status: RepairStatus,
    pub final_program: Program,
}

impl RepairTrace {
    /// Diagnostics remaining after each of the first `n` iterations, holding
    /// the last value once the loop stopped.
    pub fn remaining_by_iteration(&self, n: usize) -> Vec<usize> {
        let mut cur = self.initial_count;
        (0..n)
            .map(|i| {
                if let Some(it) = self.iterations.get(i) {
                    cur = it.after.count;
                }
                cur
            })
            .collect()
    }

    pub fn resolved(&self) -> usize {
        self.initial_count - self.final_count
    }
}

/// Repeats draw → select → apply until the program checks clean, no
/// candidate improves it, or `max_iter` rounds have run.
pub fn iterative_repair(vocab: &Vocab, x: &Program, source: &mut dyn CandidateSource, max_iter: usize) -> RepairTrace {
    let initial = check(vocab, x);
    let mut program = x.clone();
    let mut report = initial.clone();
    let mut iterations = Vec::new();
    for iteration in 0..max_iter.max(1) {
        if report.count == 0 {
            break;
        }
        let cands = source.candidates(&program, iteration);
        let chosen = select_best(vocab, &program, &report, &cands);
        let before = report.clone();
        let snapshot = program.clone();
        let stop = chosen.is_none();
        let chosen = chosen.map(|s| {
            program = s.program;
            report = s.report;
            s.candidate
        });
        iterations.push(IterationRecord {
            iteration: iteration + 1,
            program: snapshot,
            n_candidates: cands.len(),
            chosen,
            before,
            after: report.clone(),
        });
        if stop {
            break;
        }
    }
    RepairTrace {
        initial_count: initial.count,
        final_count: report.count,
        status: RepairStatus::from_counts(initial.count, report.count),
        final_program: program,
        iterations,
    }
}
