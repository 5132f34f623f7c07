//! Checkpoint archive: model config, vocabulary and all parameter tensors
//! in one versioned JSON file.

use super::{ModelConfig, Parameters, CHAR_EMBEDDING};
use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{Result, SrqaError};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: IndexMap<String, Tensor>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    vocab: &Vocabulary,
    params: &Parameters,
) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT,
        config: config.clone(),
        vocab: vocab.clone(),
        params: params.to_map(),
    };
    let file = std::fs::File::create(path)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", path.display())))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ck)
        .map_err(|e| SrqaError::data(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Vocabulary, Parameters)> {
    let file = std::fs::File::open(path)
        .map_err(|e| SrqaError::data(format!("cannot open {}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| SrqaError::data(format!("parse {}: {e}", path.display())))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(SrqaError::data(format!(
            "checkpoint format {} unsupported (expected {})",
            ck.format, CHECKPOINT_FORMAT
        )));
    }
    let table = ck.params.get(CHAR_EMBEDDING).ok_or_else(|| {
        SrqaError::data("checkpoint is missing the character embedding table")
    })?;
    if table.nrows() != ck.vocab.len() {
        return Err(SrqaError::data(format!(
            "vocabulary mismatch: embedding table has {} rows, vocabulary has {} ids",
            table.nrows(),
            ck.vocab.len()
        )));
    }
    ck.config.validate()?;
    Ok((ck.config, ck.vocab, Parameters::from_map(ck.params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::corpus::{Evidence, Sample};

    fn tiny_vocab() -> Vocabulary {
        build_vocab(&[Sample {
            id: "t".into(),
            question_tokens: vec!["ab".into()],
            annotated_evidences: vec![Evidence {
                tokens: vec!["cd".into()],
                answer_spans: vec![(0, 1)],
            }],
            retrieved_evidences: Vec::new(),
            gold_answers: vec!["cd".into()],
        }])
    }

    #[test]
    fn roundtrip() {
        let cfg = ModelConfig {
            char_dim: 4,
            hidden_dim: 3,
            encoder_layers: 1,
            fusion_layers: 1,
            ..ModelConfig::default()
        };
        let vocab = tiny_vocab();
        let params = Parameters::init(&cfg, vocab.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &cfg, &vocab, &params).unwrap();
        let (cfg2, vocab2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(vocab, vocab2);
        for (name, t) in params.iter() {
            assert_eq!(&**t, params2.get(name));
        }
    }

    #[test]
    fn vocab_mismatch_detected() {
        let cfg = ModelConfig {
            char_dim: 4,
            hidden_dim: 3,
            encoder_layers: 1,
            fusion_layers: 1,
            ..ModelConfig::default()
        };
        let vocab = tiny_vocab();
        let params = Parameters::init(&cfg, vocab.len() + 2, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &cfg, &vocab, &params).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("vocabulary mismatch"));
    }
}
