//! Evaluation reports. Every figure is a fold over per-program results, so a
//! report can be rebuilt from its trace files.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use fixsmith::decode::DecodeMode;
use fixsmith::repair::{RepairStatus, RepairTrace};
use serde::{Deserialize, Serialize};

/// `100·num/den`, with an empty denominator counting as complete.
pub fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub programs: usize,
    pub completely_fixed: usize,
    pub partially_fixed: usize,
    pub initial_messages: usize,
    pub final_messages: usize,
    pub completely_fixed_pct: f64,
    pub partially_fixed_pct: f64,
    /// `(Σ initial − Σ final) / Σ initial`, 100 when nothing was broken.
    pub resolved_messages_pct: f64,
}

impl Metrics {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a RepairTrace>) -> Metrics {
        let (mut n, mut full, mut part, mut init, mut fin) = (0, 0, 0, 0, 0);
        for t in traces {
            n += 1;
            match t.status {
                RepairStatus::CompletelyFixed => full += 1,
                RepairStatus::PartiallyFixed => part += 1,
                RepairStatus::Unfixed => {}
            }
            init += t.initial_count;
            fin += t.final_count;
        }
        Metrics {
            programs: n,
            completely_fixed: full,
            partially_fixed: part,
            initial_messages: init,
            final_messages: fin,
            completely_fixed_pct: if n == 0 { 0.0 } else { pct(full, n) },
            partially_fixed_pct: if n == 0 { 0.0 } else { pct(part, n) },
            resolved_messages_pct: pct(init - fin, init),
        }
    }
}

/// Diagnostic counts of one program at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub samples: usize,
    pub initial: usize,
    pub after_first: usize,
    pub final_count: usize,
    pub status: RepairStatus,
}

impl SweepPoint {
    pub fn of(samples: usize, t: &RepairTrace) -> SweepPoint {
        SweepPoint {
            samples,
            initial: t.initial_count,
            after_first: t.remaining_by_iteration(1)[0],
            final_count: t.final_count,
            status: t.status,
        }
    }
}

/// Everything evaluated for one held-out program; the unit of trace files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramResult {
    pub index: usize,
    pub family: String,
    pub trace: RepairTrace,
    pub sweep: Vec<SweepPoint>,
    /// Mean pairwise distance among the first-iteration candidates.
    pub candidate_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub samples: usize,
    pub resolved_messages_pct: f64,
    pub resolved_first_iteration_pct: f64,
    pub completely_fixed_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub fold: usize,
    pub mode: DecodeMode,
    pub samples: usize,
    pub max_iter: usize,
    pub independent_draws: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub meta: EvalMeta,
    pub overall: Metrics,
    pub by_family: BTreeMap<String, Metrics>,
    pub sweep: Vec<SweepRow>,
    /// Total diagnostics before repair and after each iteration.
    pub remaining_by_iteration: Vec<usize>,
    pub mean_candidate_distance: f64,
}

impl EvalReport {
    pub fn from_results(meta: EvalMeta, results: &[ProgramResult]) -> EvalReport {
        let overall = Metrics::from_traces(results.iter().map(|r| &r.trace));
        let mut families: BTreeMap<String, Vec<&RepairTrace>> = BTreeMap::new();
        for r in results {
            families.entry(r.family.clone()).or_default().push(&r.trace);
        }
        let by_family = families.into_iter().map(|(k, v)| (k, Metrics::from_traces(v))).collect();

        let mut sizes: Vec<usize> = results.iter().flat_map(|r| r.sweep.iter().map(|p| p.samples)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let sweep = sizes
            .into_iter()
            .map(|s| {
                let pts: Vec<&SweepPoint> = results.iter().filter_map(|r| r.sweep.iter().find(|p| p.samples == s)).collect();
                let init: usize = pts.iter().map(|p| p.initial).sum();
                let first: usize = pts.iter().map(|p| p.after_first).sum();
                let fin: usize = pts.iter().map(|p| p.final_count).sum();
                let full = pts.iter().filter(|p| p.status == RepairStatus::CompletelyFixed).count();
                SweepRow {
                    samples: s,
                    resolved_messages_pct: pct(init - fin, init),
                    resolved_first_iteration_pct: pct(init - first, init),
                    completely_fixed_pct: if pts.is_empty() { 0.0 } else { pct(full, pts.len()) },
                }
            })
            .collect();

        let mut remaining = vec![overall.initial_messages];
        let mut per_iter = vec![0usize; meta.max_iter];
        for r in results {
            for (acc, c) in per_iter.iter_mut().zip(r.trace.remaining_by_iteration(meta.max_iter)) {
                *acc += c;
            }
        }
        remaining.extend(per_iter);
        let mean_candidate_distance =
            if results.is_empty() { 0.0 } else { results.iter().map(|r| r.candidate_distance).sum::<f64>() / results.len() as f64 };
        EvalReport { meta, overall, by_family, sweep, remaining_by_iteration: remaining, mean_candidate_distance }
    }

    pub fn sweep_row(&self, samples: usize) -> Option<&SweepRow> {
        self.sweep.iter().find(|r| r.samples == samples)
    }

    /// `eval_report.json`, `programs.csv`, `sweep.csv` and `iterations.csv`.
    pub fn write(&self, dir: &Path, results: &[ProgramResult]) -> io::Result<()> {
        std::fs::write(dir.join("eval_report.json"), serde_json::to_string_pretty(self).expect("report serializes") + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("programs.csv"))?;
        let mut header = vec!["index".to_string(), "family".into(), "initial".into(), "final".into(), "status".into(), "iterations".into()];
        header.extend((1..=self.meta.max_iter).map(|i| format!("remaining_{i}")));
        header.push("candidate_distance".into());
        w.write_record(&header)?;
        for r in results {
            let mut row = vec![
                r.index.to_string(),
                r.family.clone(),
                r.trace.initial_count.to_string(),
                r.trace.final_count.to_string(),
                r.trace.status.name().to_string(),
                r.trace.iterations.len().to_string(),
            ];
            row.extend(r.trace.remaining_by_iteration(self.meta.max_iter).iter().map(usize::to_string));
            row.push(format!("{:.6}", r.candidate_distance));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["samples", "resolved_messages_pct", "resolved_first_iteration_pct", "completely_fixed_pct"])?;
        for s in &self.sweep {
            w.write_record([
                s.samples.to_string(),
                format!("{:.4}", s.resolved_messages_pct),
                format!("{:.4}", s.resolved_first_iteration_pct),
                format!("{:.4}", s.completely_fixed_pct),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("iterations.csv"))?;
        w.write_record(["iteration", "remaining_messages"])?;
        for (i, c) in self.remaining_by_iteration.iter().enumerate() {
            w.write_record([i.to_string(), c.to_string()])?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fixsmith::lang::{DiagnosticReport, Program};
    use fixsmith::repair::IterationRecord;

    fn report(count: usize) -> DiagnosticReport {
        DiagnosticReport { diagnostics: vec![], count }
    }

    fn trace(counts: &[usize]) -> RepairTrace {
        let iterations = counts
            .windows(2)
            .enumerate()
            .map(|(i, w)| IterationRecord {
                iteration: i + 1,
                program: Program::default(),
                n_candidates: 1,
                chosen: None,
                before: report(w[0]),
                after: report(w[1]),
            })
            .collect();
        let (init, fin) = (counts[0], *counts.last().unwrap());
        RepairTrace {
            iterations,
            initial_count: init,
            final_count: fin,
            status: RepairStatus::from_counts(init, fin),
            final_program: Program::default(),
        }
    }

    #[test]
    fn metrics_arithmetic() {
        let ts = [trace(&[2, 0]), trace(&[3, 1]), trace(&[1, 1])];
        let m = Metrics::from_traces(&ts);
        assert_eq!((m.completely_fixed, m.partially_fixed, m.initial_messages, m.final_messages), (1, 1, 6, 2));
        assert!((m.resolved_messages_pct - 100.0 * 4.0 / 6.0).abs() < 1e-12);
        assert!((m.completely_fixed_pct - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_error_corpus_is_fully_resolved() {
        let m = Metrics::from_traces(&[trace(&[0])]);
        assert_eq!(m.resolved_messages_pct, 100.0);
        assert_eq!(m.completely_fixed_pct, 100.0);
        assert_eq!(Metrics::from_traces(&[]).resolved_messages_pct, 100.0);
    }

    #[test]
    fn iteration_curve_and_csv_rows() {
        let results: Vec<ProgramResult> = [vec![3, 2, 1], vec![2, 0]]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let t = trace(c);
                ProgramResult {
                    index: i,
                    family: "Typographic".into(),
                    sweep: vec![SweepPoint::of(1, &t)],
                    trace: t,
                    candidate_distance: 0.5,
                }
            })
            .collect();
        let meta = EvalMeta { fold: 0, mode: DecodeMode::Gumbel, samples: 1, max_iter: 5, independent_draws: false };
        let r = EvalReport::from_results(meta, &results);
        assert_eq!(r.remaining_by_iteration, vec![5, 2, 1, 1, 1, 1]);
        assert_eq!(r.sweep_row(1).unwrap().resolved_first_iteration_pct, 60.0);
        let d = tempfile::tempdir().unwrap();
        r.write(d.path(), &results).unwrap();
        let rows = csv::Reader::from_path(d.path().join("programs.csv")).unwrap().records().count();
        assert_eq!(rows, 2);
    }
}
