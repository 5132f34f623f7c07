//! Intensity sweep: trains one model per (epsilon, seed) cell, scores the
//! test split fuzzily, and emits a CSV of epsilon against the mean score
//! with its standard deviation over seeds.

use super::train::{eval_opts, load_synonyms, train_model};
use crate::config::RunConfig;
use srqa_core::corpus::{load_dataset, Split};
use srqa_core::error::{Result, SrqaError};
use srqa_core::evaluation::evaluate;
use srqa_core::objective::PerturbMode;
use srqa_core::reader::ReaderScorer;
use std::io::Write;

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_fuzzy: f64,
    pub std_fuzzy: f64,
    pub scores: Vec<f64>,
}

pub fn format_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,mean_fuzzy,std_fuzzy\n");
    for r in rows {
        out.push_str(&format!(
            "{:e},{:.6},{:.6}\n",
            r.epsilon, r.mean_fuzzy, r.std_fuzzy
        ));
    }
    out
}

/// Trains one model per (epsilon, seed). Epsilon zero runs the unperturbed
/// baseline. Seeds are `seed, seed+1, ..`; each cell is fully deterministic.
pub fn cmd_sweep(cfg: &RunConfig, epsilons: &[f64], seeds: usize) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() {
        return Err(SrqaError::config("sweep needs at least one epsilon"));
    }
    if seeds == 0 {
        return Err(SrqaError::config("sweep needs at least one seed"));
    }
    if cfg.perturb.targets.is_empty() {
        return Err(SrqaError::config(
            "sweep needs perturbation targets (--at-targets)",
        ));
    }
    let dataset = cfg.require_dataset()?;
    let train_samples = load_dataset(dataset, Split::Train, cfg.joiner)?;
    let test_samples = load_dataset(dataset, Split::Test, cfg.joiner)?;
    let syn = load_synonyms(cfg)?;

    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut scores = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let mut cell = cfg.clone();
            cell.train.seed = cfg.train.seed.wrapping_add(s as u64);
            if eps == 0.0 {
                cell.perturb.mode = PerturbMode::None;
                cell.perturb.targets.clear();
            } else {
                if cell.perturb.mode == PerturbMode::None {
                    cell.perturb.mode = PerturbMode::Adversarial;
                }
                for e in cell.perturb.targets.values_mut() {
                    *e = eps;
                }
            }
            let trained = train_model(&cell, &train_samples, &[], None, true, None)?;
            let scorer = ReaderScorer {
                params: &trained.params,
                cfg: &cell.model,
                vocab: &trained.vocab,
            };
            let (report, _) = evaluate(&test_samples, &scorer, &syn, &eval_opts(&cell, &cell.model));
            scores.push(report.fuzzy.f1);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let std = if scores.len() > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
                / (scores.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        println!("epsilon {eps:e}: mean fuzzy {mean:.4} std {std:.4}");
        rows.push(SweepRow {
            epsilon: eps,
            mean_fuzzy: mean,
            std_fuzzy: std,
            scores,
        });
    }

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", cfg.out.display())))?;
    let csv_path = cfg.out.join("sweep.csv");
    let mut fh = std::fs::File::create(&csv_path)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", csv_path.display())))?;
    write!(fh, "{}", format_csv(&rows))?;
    println!("sweep written to {}", csv_path.display());
    Ok(rows)
}
