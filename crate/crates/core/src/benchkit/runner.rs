//! Benchmark runner, per-sample trace and aggregated report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::BenchSample;
use super::metrics::{metric_bleu1, metric_f1, simplify_answer};
use super::BenchError;
use crate::gateway::{CallKind, Gateway, LlmContext};
use crate::hiermem::{EngineError, IncomingMessage};
use crate::pipeline::MemoryPipeline;
use crate::prompts::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Apply the simplification pass before scoring.
    pub simplify: bool,
    /// Run samples on the rayon pool. Results keep input order either way.
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { simplify: true, parallel: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTokens {
    /// Extraction and management calls: building memory.
    pub ingest: u64,
    pub ingest_calls: u64,
    pub retrieve: u64,
    pub generate: u64,
    /// Simplification, outside the pipeline's own budget.
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample_id: String,
    pub category: String,
    pub question: String,
    pub gold_answer: String,
    pub prediction: String,
    pub simplified: String,
    pub simplify_degraded: bool,
    pub f1: f64,
    pub bleu1: f64,
    pub turns: usize,
    pub tokens: SampleTokens,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub type PipelineFactory<'a> = dyn Fn(&str) -> Result<Box<dyn MemoryPipeline>, EngineError> + Sync + 'a;

/// Ledger scope for a sample's simplification calls.
pub fn eval_scope(sample_id: &str) -> String {
    format!("{sample_id}#eval")
}

fn run_one(
    sample: &BenchSample,
    gateway: &Gateway,
    prompts: &PromptSet,
    factory: &PipelineFactory<'_>,
    opts: &RunOptions,
) -> TraceRecord {
    let eval = eval_scope(&sample.sample_id);
    gateway.reset_scope(&sample.sample_id);
    gateway.reset_scope(&eval);
    let mut rec = TraceRecord {
        sample_id: sample.sample_id.clone(),
        category: sample.category.clone(),
        question: sample.question.clone(),
        gold_answer: sample.gold_answer.clone(),
        prediction: String::new(),
        simplified: String::new(),
        simplify_degraded: false,
        f1: 0.0,
        bleu1: 0.0,
        turns: sample.turn_count(),
        tokens: SampleTokens::default(),
        error: None,
    };
    let outcome = (|| -> Result<String, EngineError> {
        let mut pipeline = factory(&sample.sample_id)?;
        for session in &sample.sessions {
            for turn in &session.turns {
                pipeline.ingest(
                    IncomingMessage::new(&turn.speaker, &turn.text, session.timestamp).in_session(&session.session_id),
                )?;
            }
        }
        Ok(pipeline.answer(&sample.question)?.answer)
    })();
    match outcome {
        Ok(prediction) => {
            let simplified = if opts.simplify {
                let ctx = LlmContext::new(gateway, &eval, prompts);
                simplify_answer(&ctx, &sample.question, &prediction)
            } else {
                super::metrics::Simplified { text: prediction.clone(), degraded: false }
            };
            rec.f1 = metric_f1(&simplified.text, &sample.gold_answer);
            rec.bleu1 = metric_bleu1(&simplified.text, &sample.gold_answer);
            rec.prediction = prediction;
            rec.simplified = simplified.text;
            rec.simplify_degraded = simplified.degraded;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    let usage = gateway.usage_report(&sample.sample_id);
    let (ex, mg) = (usage.kind(CallKind::Extract), usage.kind(CallKind::Manage));
    rec.tokens = SampleTokens {
        ingest: ex.total() + mg.total(),
        ingest_calls: ex.calls + mg.calls,
        retrieve: usage.kind(CallKind::Retrieve).total(),
        generate: usage.kind(CallKind::Generate).total(),
        eval: gateway.usage_report(&eval).overall().total(),
    };
    rec
}

/// Fresh pipeline per sample: ingest every turn in session order, ask the
/// question, simplify, score. Failures are recorded in the trace and the
/// run continues.
pub fn run_benchmark(
    samples: &[BenchSample],
    gateway: &Gateway,
    prompts: &PromptSet,
    factory: &PipelineFactory<'_>,
    opts: &RunOptions,
) -> Result<Vec<TraceRecord>, BenchError> {
    let mut ids = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !ids.insert(s.sample_id.as_str())) {
        return Err(BenchError::Schema {
            sample: dup.sample_id.clone(),
            field: "sample_id".into(),
            message: "duplicate sample id".into(),
        });
    }
    let run = |s: &BenchSample| run_one(s, gateway, prompts, factory, opts);
    Ok(if opts.parallel { samples.par_iter().map(run).collect() } else { samples.iter().map(run).collect() })
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), BenchError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| BenchError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, BenchError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| BenchError::Parse(format!("trace line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub f1: f64,
    pub bleu1: f64,
    pub ingest_tokens: f64,
    pub retrieve_tokens: f64,
    pub generate_tokens: f64,
}

impl Aggregate {
    fn of<'a>(records: impl Iterator<Item = &'a TraceRecord>) -> Self {
        let recs: Vec<&TraceRecord> = records.collect();
        let n = recs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: &dyn Fn(&TraceRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        Self {
            count: n,
            f1: mean(&|r| r.f1),
            bleu1: mean(&|r| r.bleu1),
            ingest_tokens: mean(&|r| r.tokens.ingest as f64),
            retrieve_tokens: mean(&|r| r.tokens.retrieve as f64),
            generate_tokens: mean(&|r| r.tokens.generate as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub failed: usize,
    /// Some samples failed; aggregates cover the rest.
    pub partial: bool,
    pub per_category: BTreeMap<String, Aggregate>,
    pub overall: Aggregate,
}

impl MetricReport {
    /// Means over the successful records of a trace.
    pub fn from_trace(records: &[TraceRecord]) -> Self {
        let ok = || records.iter().filter(|r| r.error.is_none());
        let categories: std::collections::BTreeSet<&str> = ok().map(|r| r.category.as_str()).collect();
        let per_category = categories
            .into_iter()
            .map(|c| (c.to_string(), Aggregate::of(ok().filter(|r| r.category == c))))
            .collect();
        let failed = records.len() - ok().count();
        Self { samples: records.len(), failed, partial: failed > 0, per_category, overall: Aggregate::of(ok()) }
    }

    /// One row per method, category × {F1, BLEU-1} columns, scores ×100.
    pub fn to_table(&self, method: &str) -> String {
        let mut header = vec!["Method".to_string()];
        let mut row = vec![method.to_string()];
        let cols = self.per_category.iter().map(|(c, a)| (c.as_str(), a)).chain(std::iter::once(("Overall", &self.overall)));
        for (name, agg) in cols {
            header.push(format!("{name} F1"));
            header.push(format!("{name} BLEU-1"));
            row.push(format!("{:.2}", agg.f1 * 100.0));
            row.push(format!("{:.2}", agg.bleu1 * 100.0));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("| {} |", padded.join(" | "))
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "|{}|", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
        let _ = writeln!(out, "{}", line(&row));
        let _ = writeln!(
            out,
            "samples {} (failed {}), mean tokens per sample: ingest {:.1}, retrieve {:.1}, generate {:.1}",
            self.samples, self.failed, self.overall.ingest_tokens, self.overall.retrieve_tokens, self.overall.generate_tokens
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchkit::dataset::{Session, Turn};
    use crate::gateway::MockBackend;
    use crate::hiermem::EngineConfig;
    use crate::pipeline::{build_pipeline, PipelineKind};
    use chrono::{TimeZone, Utc};
    use std::sync::Arc;

    fn sample(id: &str, pet: &str, category: &str) -> BenchSample {
        BenchSample {
            sample_id: id.into(),
            sessions: vec![Session {
                session_id: format!("{id}-s0"),
                timestamp: Utc.with_ymd_and_hms(2024, 2, 1, 12, 0, 0).unwrap(),
                turns: vec![
                    Turn { speaker: "user".into(), text: format!("My pet is named {pet}") },
                    Turn { speaker: "assistant".into(), text: "Lovely name".into() },
                ],
            }],
            question: format!("What is the name of pet {id}?"),
            gold_answer: pet.into(),
            category: category.into(),
            evidence_session_ids: [format!("{id}-s0")].into_iter().collect(),
        }
    }

    fn backend(samples: &[BenchSample]) -> Arc<Gateway> {
        let mut mock = MockBackend::new(64);
        for s in samples {
            mock = mock.with_rule(&[&s.question, &format!("named {}", s.gold_answer)], &s.gold_answer);
        }
        Arc::new(Gateway::new(Arc::new(mock)))
    }

    fn run(samples: &[BenchSample], gateway: Arc<Gateway>, opts: RunOptions) -> Vec<TraceRecord> {
        let prompts = Arc::new(PromptSet::default());
        let g2 = gateway.clone();
        let p2 = prompts.clone();
        let factory = move |id: &str| build_pipeline(PipelineKind::Hiermem, id, &EngineConfig::default(), g2.clone(), p2.clone());
        run_benchmark(samples, &gateway, &prompts, &factory, &opts).unwrap()
    }

    #[test]
    fn empty_run_is_empty_report() {
        let recs = run(&[], Arc::new(Gateway::mock(8)), RunOptions::default());
        let rep = MetricReport::from_trace(&recs);
        assert_eq!(rep.samples, 0);
        assert_eq!(rep.overall, Aggregate::default());
    }

    #[test]
    fn exact_answers_score_one_and_aggregate_means() {
        let samples = vec![sample("a", "Miso", "single-hop"), sample("b", "Rex", "single-hop"), sample("c", "Tom", "temporal")];
        let recs = run(&samples, backend(&samples), RunOptions::default());
        let rep = MetricReport::from_trace(&recs);
        assert_eq!(rep.overall.f1, 1.0);
        assert_eq!(rep.per_category["temporal"].count, 1);
        let mean_ingest = recs.iter().map(|r| r.tokens.generate as f64).sum::<f64>() / 3.0;
        assert!((rep.overall.generate_tokens - mean_ingest).abs() < 1e-12);
        assert!(rep.to_table("hiermem").contains("| hiermem "));
        assert!(rep.to_table("hiermem").contains("100.00"));
    }

    #[test]
    fn parallel_equals_sequential_and_trace_roundtrips() {
        let samples: Vec<BenchSample> = (0..6).map(|i| sample(&format!("s{i}"), &format!("Pet{i}"), "x")).collect();
        let par = run(&samples, backend(&samples), RunOptions::default());
        let seq = run(&samples, backend(&samples), RunOptions { parallel: false, ..Default::default() });
        assert_eq!(par, seq);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trace(&path, &par).unwrap();
        assert_eq!(read_trace(&path).unwrap(), par);
    }

    #[test]
    fn failures_are_recorded_and_flagged() {
        let samples = vec![sample("a", "Miso", "x"), sample("b", "Rex", "x")];
        let gateway = backend(&samples);
        let prompts = PromptSet::default();
        let g2 = gateway.clone();
        let factory = move |id: &str| {
            if id == "b" {
                return Err(EngineError::Config("boom".into()));
            }
            build_pipeline(PipelineKind::Hiermem, id, &EngineConfig::default(), g2.clone(), Arc::new(PromptSet::default()))
        };
        let recs = run_benchmark(&samples, &gateway, &prompts, &factory, &RunOptions::default()).unwrap();
        let rep = MetricReport::from_trace(&recs);
        assert!(rep.partial);
        assert_eq!(rep.failed, 1);
        assert_eq!(rep.overall.count, 1);
        assert!(recs[1].error.as_deref().unwrap().contains("boom"));
    }
}
