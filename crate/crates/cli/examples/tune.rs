//! Scratch harness for sizing the training-based acceptance scenarios.

use srqa_cli::config::{Overrides, RunConfig};
use srqa_cli::train_model;
use srqa_core::corpus::{load_dataset, EvidenceSource, Split, SynthConfig};
use srqa_core::evaluation::{evaluate, SynonymTable};
use srqa_core::objective::{PerturbMode, PerturbSpec};
use srqa_core::reader::{ModelConfig, ReaderScorer, TargetVar};
use std::str::FromStr;

fn base_config(cross_evidence: bool) -> RunConfig {
    let env = |k: &str, d: f64| std::env::var(k).map(|v| v.parse().unwrap()).unwrap_or(d);
    let mut cfg = RunConfig::load(&Overrides::default()).unwrap();
    cfg.model = ModelConfig {
        char_dim: env("CD", 16.0) as usize,
        hidden_dim: env("D", 16.0) as usize,
        encoder_layers: env("ENC", 2.0) as usize,
        fusion_layers: 2,
        dropout: env("DROP", 0.1),
        max_answer_len: 10,
        max_passage_len: if cross_evidence { 140 } else { 80 },
        max_token_chars: 16,
    };
    cfg.train.batch_size = env("BS", 16.0) as usize;
    cfg.train.learning_rate = env("LR", 2.0);
    cfg.cross_evidence = cross_evidence;
    cfg.evidence_source = if cross_evidence {
        EvidenceSource::Retrieved
    } else {
        EvidenceSource::Annotated
    };
    cfg
}

fn synth_to(dir: &std::path::Path, synth: &SynthConfig, seed: u64) {
    let mut cfg = RunConfig::load(&Overrides::default()).unwrap();
    cfg.synth = synth.clone();
    srqa_cli::cmd_synth(&cfg, dir, seed).unwrap();
}

fn run_cell(
    cfg: &RunConfig,
    dir: &std::path::Path,
    seed: u64,
    mode: PerturbMode,
    targets: &[(&str, f64)],
    epochs: usize,
) -> (f64, f64, f64) {
    let mut cell = cfg.clone();
    cell.train.seed = seed;
    cell.train.epochs = epochs;
    cell.perturb = PerturbSpec {
        mode,
        targets: targets
            .iter()
            .map(|(name, eps)| (TargetVar::from_str(name).unwrap(), *eps))
            .collect(),
        per_evidence: cell.cross_evidence,
    };
    let train = load_dataset(dir, Split::Train, cell.joiner).unwrap();
    let val = load_dataset(dir, Split::Validation, cell.joiner).unwrap();
    let test = load_dataset(dir, Split::Test, cell.joiner).unwrap();
    let t0 = std::time::Instant::now();
    let trained = train_model(&cell, &train, &val, None, std::env::var("TRAJ").is_err(), None).unwrap();
    let best_val_strict = trained
        .summary
        .epochs
        .iter()
        .map(|e| e.strict_f1)
        .fold(0.0, f64::max);
    let scorer = ReaderScorer {
        params: &trained.params,
        cfg: &cell.model,
        vocab: &trained.vocab,
    };
    let opts = srqa_cli::commands::train::eval_opts(&cell, &cell.model);
    let (report, _) = evaluate(&test, &scorer, &SynonymTable::empty(), &opts);
    let (train_report, _) = evaluate(&train, &scorer, &SynonymTable::empty(), &opts);
    eprintln!("    train strict {:.4}", train_report.strict.f1);
    (best_val_strict, report.fuzzy.f1, t0.elapsed().as_secs_f64())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("learn");
    let dir = std::path::PathBuf::from("/tmp/tune_data");

    match what {
        // criterion 6 shape: 200 questions, 3 evidences, CE on
        "learn" => {
            let env = |k: &str, d: f64| std::env::var(k).map(|v| v.parse().unwrap()).unwrap_or(d);
            let synth = SynthConfig {
                vocab_size: env("VOCAB", 40.0) as usize,
                questions: 200,
                evidences_per_question: 3,
                evidence_len_min: env("EVMIN", 8.0) as usize,
                evidence_len_max: env("EVMAX", 14.0) as usize,
                answer_len_min: 1,
                answer_len_max: env("AMAX", 3.0) as usize,
                distractor_rate: env("DIST", 0.3),
                noise_rate: 0.0,
            };
            synth_to(&dir, &synth, 11);
            let cfg = base_config(true);
            let mut vals = Vec::new();
            let seeds: Vec<u64> = std::env::var("SEEDS").unwrap_or("1,2,3".into()).split(',').map(|x| x.parse().unwrap()).collect();
            for seed in seeds {
                let (val, test, secs) =
                    run_cell(&cfg, &dir, seed, PerturbMode::None, &[], 20);
                println!("seed {seed}: best val strict {val:.4}, test fuzzy {test:.4} ({secs:.0}s)");
                vals.push(val);
            }
            println!("mean best val strict: {:.4}", vals.iter().sum::<f64>() / vals.len() as f64);
        }
        // criterion 7 shape: noisy corpus, single evidence, three modes
        "at" => {
            let eps: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-2);
            let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(12);
            let env = |k: &str, d: f64| std::env::var(k).map(|v| v.parse().unwrap()).unwrap_or(d);
            let synth = SynthConfig {
                vocab_size: env("VOCAB", 24.0) as usize,
                questions: env("Q", 200.0) as usize,
                evidences_per_question: 1,
                evidence_len_min: env("EVMIN", 8.0) as usize,
                evidence_len_max: env("EVMAX", 14.0) as usize,
                answer_len_min: 1,
                answer_len_max: env("AMAX", 2.0) as usize,
                distractor_rate: env("DIST", 0.4),
                noise_rate: 0.10,
            };
            synth_to(&dir, &synth, 13);
            let cfg = base_config(false);
            let targets = [("WP", eps), ("RhatP", eps)];
            for (label, mode) in [
                ("none ", PerturbMode::None),
                ("noise", PerturbMode::GaussianNoise),
                ("adv  ", PerturbMode::Adversarial),
            ] {
                let mut scores = Vec::new();
                let mut secs_total = 0.0;
                for seed in [1u64, 2, 3] {
                    let t = if mode == PerturbMode::None { &[][..] } else { &targets[..] };
                    let (_, test, secs) = run_cell(&cfg, &dir, seed, mode, t, epochs);
                    scores.push(test);
                    secs_total += secs;
                }
                let mean = scores.iter().sum::<f64>() / 3.0;
                println!(
                    "{label} eps={eps:.0e}: test fuzzy {scores:.4?} mean {mean:.4} ({secs_total:.0}s)"
                );
            }
        }
        other => panic!("unknown scenario {other}"),
    }
}
