//! Training command: epochs over shuffled batches, per-epoch validation
//! scores, periodic checkpoints and an append-only JSONL run log.

use crate::config::RunConfig;
use serde::Serialize;
use srqa_core::corpus::{
    load_dataset, make_batch, prepare_training, PrepOptions, Sample, Split, Vocabulary,
};
use srqa_core::error::{Result, SrqaError};
use srqa_core::evaluation::{evaluate, EvalOptions, EvalReport, SynonymTable};
use srqa_core::objective::{train_step, TrainState};
use srqa_core::reader::{save_checkpoint, ModelConfig, Parameters, ReaderScorer};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Serialize)]
struct LogLine {
    step: usize,
    base_loss: f64,
    adv_loss: Option<f64>,
    learning_rate: f64,
    wall_time_ms: u128,
}

/// Formats one run-log line. Stable format, golden tested.
pub fn format_log_line(
    step: usize,
    base_loss: f64,
    adv_loss: Option<f64>,
    learning_rate: f64,
    wall_time_ms: u128,
) -> String {
    serde_json::to_string(&LogLine {
        step,
        base_loss,
        adv_loss,
        learning_rate,
        wall_time_ms,
    })
    .expect("log line serialization")
}

pub fn prep_opts(cfg: &RunConfig) -> PrepOptions {
    PrepOptions {
        source: cfg.evidence_source,
        cross_evidence: cfg.cross_evidence,
        max_passage_len: cfg.model.max_passage_len,
        max_answer_len: cfg.model.max_answer_len,
    }
}

pub fn eval_opts(cfg: &RunConfig, model: &ModelConfig) -> EvalOptions {
    EvalOptions {
        source: cfg.evidence_source,
        cross_evidence: cfg.cross_evidence,
        max_passage_len: model.max_passage_len,
        max_answer_len: model.max_answer_len,
        joiner: cfg.joiner,
        containment: cfg.containment,
    }
}

pub fn load_synonyms(cfg: &RunConfig) -> Result<SynonymTable> {
    match &cfg.synonyms {
        Some(path) => SynonymTable::load(path),
        None => Ok(SynonymTable::empty()),
    }
}

#[derive(Clone, Debug)]
pub struct EpochScore {
    pub epoch: usize,
    pub strict_f1: f64,
    pub fuzzy_f1: f64,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: Vec<EpochScore>,
    pub best_fuzzy: f64,
    pub final_validation: Option<EvalReport>,
}

pub struct TrainedModel {
    pub params: Parameters,
    pub vocab: Vocabulary,
    pub summary: TrainSummary,
}

/// Core training driver shared by `train` and `sweep`. Trains on
/// `train_samples`, scoring `val_samples` after every epoch. All
/// randomness stems from `cfg.train.seed`. `log` receives one line per
/// step when given.
pub fn train_model(
    cfg: &RunConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    mut log: Option<&mut dyn Write>,
    quiet: bool,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainedModel> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let vocab = srqa_core::corpus::build_vocab(train_samples);
    let (prepared, report) = prepare_training(train_samples, &prep_opts(cfg));
    if !quiet {
        println!(
            "prepared {} samples ({} skipped without selection, {} without labels, {} long spans dropped)",
            report.prepared,
            report.skipped_no_selection.len(),
            report.skipped_no_labels.len(),
            report.dropped_long_spans
        );
    }
    if prepared.is_empty() {
        return Err(SrqaError::data("no trainable samples after preparation"));
    }

    let params = Parameters::init(&cfg.model, vocab.len(), cfg.train.seed);
    let mut state = TrainState::new(params, cfg.train.seed);
    let mut order_rng =
        rand_chacha::ChaCha20Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x0EDE2));
    let mut batch_rng =
        rand_chacha::ChaCha20Rng::seed_from_u64(cfg.train.seed.wrapping_add(0xBA7C4));
    let syn = load_synonyms(cfg)?;
    let started = Instant::now();
    let mut epochs = Vec::new();
    let mut best_fuzzy = f64::MIN;
    let mut final_validation = None;

    for epoch in 1..=cfg.train.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let subset: Vec<srqa_core::corpus::PreparedSample> =
                chunk.iter().map(|&i| prepared[i].clone()).collect();
            let batch = make_batch(&subset, &vocab, cfg.model.max_token_chars, &mut batch_rng);
            let out = match train_step(&mut state, &batch, &cfg.model, &cfg.train, &cfg.perturb) {
                Ok(out) => out,
                Err(e) => {
                    if let Some(dir) = checkpoint_dir {
                        let path = dir.join("partial.json");
                        let _ = save_checkpoint(&path, &cfg.model, &vocab, &state.params);
                        if !quiet {
                            eprintln!("partial checkpoint preserved at {}", path.display());
                        }
                    }
                    return Err(e);
                }
            };
            if let Some(log) = log.as_deref_mut() {
                let line = format_log_line(
                    state.step,
                    out.base_loss,
                    out.adv_loss,
                    cfg.train.learning_rate,
                    started.elapsed().as_millis(),
                );
                writeln!(log, "{line}")?;
            }
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(
                &dir.join(format!("epoch_{epoch}.json")),
                &cfg.model,
                &vocab,
                &state.params,
            )?;
        }
        if !val_samples.is_empty() {
            let scorer = ReaderScorer {
                params: &state.params,
                cfg: &cfg.model,
                vocab: &vocab,
            };
            let (report, _) = evaluate(val_samples, &scorer, &syn, &eval_opts(cfg, &cfg.model));
            if !quiet {
                println!(
                    "epoch {epoch}: validation strict F1 {:.4} fuzzy F1 {:.4}",
                    report.strict.f1, report.fuzzy.f1
                );
            }
            if report.fuzzy.f1 > best_fuzzy {
                best_fuzzy = report.fuzzy.f1;
                if let Some(dir) = checkpoint_dir {
                    save_checkpoint(&dir.join("best.json"), &cfg.model, &vocab, &state.params)?;
                }
            }
            epochs.push(EpochScore {
                epoch,
                strict_f1: report.strict.f1,
                fuzzy_f1: report.fuzzy.f1,
            });
            final_validation = Some(report);
        }
    }

    Ok(TrainedModel {
        params: state.params,
        vocab,
        summary: TrainSummary {
            steps: state.step,
            epochs,
            best_fuzzy,
            final_validation,
        },
    })
}

/// Loads a split, tolerating a missing validation file (training then
/// runs without per-epoch scores).
fn load_optional(cfg: &RunConfig, split: Split) -> Result<Vec<Sample>> {
    let dataset = cfg.require_dataset()?;
    match load_dataset(dataset, split, cfg.joiner) {
        Ok(samples) => Ok(samples),
        Err(SrqaError::Data(msg)) if msg.contains("cannot open") => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dataset = cfg.require_dataset()?;
    let train_samples = load_dataset(dataset, Split::Train, cfg.joiner)?;
    if train_samples.is_empty() {
        return Err(SrqaError::data("training split is empty"));
    }
    let val_samples = load_optional(cfg, Split::Validation)?;

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", cfg.out.display())))?;
    let log_path = cfg.out.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", log_path.display())))?;

    let trained = train_model(
        cfg,
        &train_samples,
        &val_samples,
        Some(&mut log),
        false,
        Some(cfg.out.as_path()),
    )?;

    let final_path = cfg.out.join("checkpoint.json");
    save_checkpoint(&final_path, &cfg.model, &trained.vocab, &trained.params)?;
    println!(
        "trained {} steps; checkpoint written to {}",
        trained.summary.steps,
        final_path.display()
    );
    Ok(trained.summary)
}
