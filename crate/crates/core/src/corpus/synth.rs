//! Synthetic corpus generation for desk-scale experiments.
//!
//! Each synthetic question plants a short answer span inside every one of
//! its evidences at a random position; distractor and noise tokens fill the
//! rest. Question tokens repeat the answer tokens after a marker token so
//! the question-to-span mapping is learnable by attention alone.
//!
//! Token surface forms are generated as unique character subsets of a small
//! alphabet. Word vectors here come from max pooling over character
//! embeddings, which is order invariant, so tokens must differ as character
//! sets rather than merely as strings.

use super::{Evidence, Sample};
use crate::error::{Result, SrqaError};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub questions: usize,
    pub evidences_per_question: usize,
    pub evidence_len_min: usize,
    pub evidence_len_max: usize,
    pub answer_len_min: usize,
    pub answer_len_max: usize,
    /// Probability that a filler token is drawn from other questions'
    /// answer tokens instead of the general vocabulary.
    pub distractor_rate: f64,
    /// Probability that a non-answer evidence token is replaced by a
    /// random vocabulary token (corruption).
    pub noise_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 48,
            questions: 200,
            evidences_per_question: 3,
            evidence_len_min: 8,
            evidence_len_max: 16,
            answer_len_min: 1,
            answer_len_max: 3,
            distractor_rate: 0.3,
            noise_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < self.answer_len_max + 2 {
            return Err(SrqaError::config(
                "synth: vocab_size must exceed answer_len_max by at least 2",
            ));
        }
        if self.vocab_size > 0xFFFF {
            return Err(SrqaError::config("synth: vocab_size above 65535"));
        }
        if self.questions == 0 || self.evidences_per_question == 0 {
            return Err(SrqaError::config("synth: questions and evidences must be positive"));
        }
        if self.answer_len_min == 0 || self.answer_len_min > self.answer_len_max {
            return Err(SrqaError::config("synth: bad answer length range"));
        }
        if self.evidence_len_min > self.evidence_len_max {
            return Err(SrqaError::config("synth: bad evidence length range"));
        }
        if self.answer_len_max > self.evidence_len_min {
            return Err(SrqaError::config(
                "synth: answer length may exceed evidence length",
            ));
        }
        for (name, rate) in [("distractor_rate", self.distractor_rate), ("noise_rate", self.noise_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(SrqaError::config(format!("synth: {name} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Token surface form for index `i` (1-based): the characters of
/// 'a'..='p' selected by the bits of `i`. Distinct indices give distinct
/// character sets.
fn token_string(i: usize) -> String {
    debug_assert!(i >= 1 && i <= 0xFFFF);
    let mut s = String::new();
    for bit in 0..16 {
        if i & (1 << bit) != 0 {
            s.push((b'a' + bit as u8) as char);
        }
    }
    s
}

const QUESTION_MARKER: &str = "qq";

/// Generates a deterministic synthetic corpus.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (1..=cfg.vocab_size).map(token_string).collect();

    // Draw every answer first so fillers can come from a shared pool.
    let mut answers: Vec<Vec<usize>> = Vec::with_capacity(cfg.questions);
    for _ in 0..cfg.questions {
        let m = rng.gen_range(cfg.answer_len_min..=cfg.answer_len_max);
        let picked = rand::seq::index::sample(&mut rng, cfg.vocab_size, m).into_vec();
        answers.push(picked);
    }
    let pool: Vec<usize> = answers.iter().flatten().copied().collect();

    let mut samples = Vec::with_capacity(cfg.questions);
    for (qi, answer) in answers.iter().enumerate() {
        let answer_set: Vec<usize> = answer.clone();
        let not_answer = |idx: usize| !answer_set.contains(&idx);
        let local_pool: Vec<usize> = pool.iter().copied().filter(|&i| not_answer(i)).collect();
        let draw_filler = |rng: &mut ChaCha20Rng| -> usize {
            if !local_pool.is_empty() && rng.gen_bool(cfg.distractor_rate) {
                *local_pool.choose(rng).unwrap()
            } else {
                loop {
                    let idx = rng.gen_range(0..cfg.vocab_size);
                    if not_answer(idx) {
                        break idx;
                    }
                }
            }
        };

        let m = answer.len();
        let mut evidences = Vec::with_capacity(cfg.evidences_per_question);
        for _ in 0..cfg.evidences_per_question {
            let lo = cfg.evidence_len_min.max(m);
            let len = rng.gen_range(lo..=cfg.evidence_len_max.max(lo));
            let off = rng.gen_range(0..=len - m);
            let mut token_ids: Vec<usize> = Vec::with_capacity(len);
            for pos in 0..len {
                if pos >= off && pos < off + m {
                    token_ids.push(answer[pos - off]);
                } else {
                    let mut idx = draw_filler(&mut rng);
                    if cfg.noise_rate > 0.0 && rng.gen_bool(cfg.noise_rate) {
                        idx = loop {
                            let cand = rng.gen_range(0..cfg.vocab_size);
                            if not_answer(cand) {
                                break cand;
                            }
                        };
                    }
                    token_ids.push(idx);
                }
            }
            evidences.push(Evidence {
                tokens: token_ids.iter().map(|&i| vocab[i].clone()).collect(),
                answer_spans: vec![(off, off + m)],
            });
        }

        let mut question_tokens = vec![QUESTION_MARKER.to_string()];
        question_tokens.extend(answer.iter().map(|&i| vocab[i].clone()));
        let answer_text = answer
            .iter()
            .map(|&i| vocab[i].clone())
            .collect::<Vec<_>>()
            .join(" ");

        samples.push(Sample {
            id: format!("synth-{qi:05}"),
            question_tokens,
            annotated_evidences: Vec::new(),
            retrieved_evidences: evidences,
            gold_answers: vec![answer_text],
        });
    }
    Ok(samples)
}
