//! Evaluation command: loads a checkpoint, scores a dataset split both
//! strictly and fuzzily, prints the fixed-format table and writes the
//! prediction dump.

use super::train::{eval_opts, load_synonyms};
use crate::config::RunConfig;
use srqa_core::corpus::{load_dataset, Split};
use srqa_core::error::{Result, SrqaError};
use srqa_core::evaluation::{evaluate, EvalReport, PredictionRecord};
use srqa_core::reader::{load_checkpoint, ReaderScorer};
use std::io::Write;

/// Fixed-format score table. Golden tested: do not reorder columns.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "questions={} answered={} correct_strict={} correct_fuzzy={}\n",
        r.questions, r.answered, r.correct_strict, r.correct_fuzzy
    ));
    out.push_str(&format!(
        "{:<8}{:>10}{:>10}{:>10}\n",
        "metric", "P", "R", "F1"
    ));
    out.push_str(&format!(
        "{:<8}{:>10.4}{:>10.4}{:>10.4}\n",
        "strict", r.strict.precision, r.strict.recall, r.strict.f1
    ));
    out.push_str(&format!(
        "{:<8}{:>10.4}{:>10.4}{:>10.4}\n",
        "fuzzy", r.fuzzy.precision, r.fuzzy.recall, r.fuzzy.f1
    ));
    out
}

pub fn write_dump(records: &[PredictionRecord], path: &std::path::Path) -> Result<()> {
    let mut fh = std::fs::File::create(path)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", path.display())))?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| SrqaError::data(format!("serialize dump: {e}")))?;
        writeln!(fh, "{line}")?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, split: Split) -> Result<EvalReport> {
    let ck_path = cfg.require_checkpoint()?;
    let (model_cfg, vocab, params) = load_checkpoint(ck_path)?;
    let dataset = cfg.require_dataset()?;
    let samples = load_dataset(dataset, split, cfg.joiner)?;
    if samples.is_empty() {
        return Err(SrqaError::data(format!(
            "split {} is empty",
            split.as_str()
        )));
    }
    let syn = load_synonyms(cfg)?;
    let scorer = ReaderScorer {
        params: &params,
        cfg: &model_cfg,
        vocab: &vocab,
    };
    let (report, records) = evaluate(&samples, &scorer, &syn, &eval_opts(cfg, &model_cfg));

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", cfg.out.display())))?;
    let dump_path = cfg.out.join("predictions.jsonl");
    write_dump(&records, &dump_path)?;
    print!("{}", format_report(&report));
    println!("dump written to {}", dump_path.display());
    Ok(report)
}
