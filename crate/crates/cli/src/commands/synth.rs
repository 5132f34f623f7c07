//! Synthetic dataset generation: one corpus, split 80/10/10 into the
//! train/validation/test JSONL files.

use crate::config::RunConfig;
use srqa_core::corpus::{synth_corpus, write_jsonl};
use srqa_core::error::{Result, SrqaError};
use std::path::Path;

pub fn cmd_synth(cfg: &RunConfig, out: &Path, seed: u64) -> Result<(usize, usize, usize)> {
    let samples = synth_corpus(&cfg.synth, seed)?;
    std::fs::create_dir_all(out)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", out.display())))?;
    let n = samples.len();
    let n_train = n * 80 / 100;
    let n_val = n * 10 / 100;
    let (train, rest) = samples.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    write_jsonl(train, &out.join("train.jsonl"))?;
    write_jsonl(val, &out.join("validation.jsonl"))?;
    write_jsonl(test, &out.join("test.jsonl"))?;
    println!(
        "wrote {} train / {} validation / {} test samples to {}",
        train.len(),
        val.len(),
        test.len(),
        out.display()
    );
    Ok((train.len(), val.len(), test.len()))
}
