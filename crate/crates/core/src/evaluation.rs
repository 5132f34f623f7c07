//! Constrained span decoding, answer matching and P/R/F1 reporting.

use crate::corpus::{
    select_evidences, splice_evidences, EvidenceSource, Joiner, Passage, Sample,
};
use crate::error::{Result, SrqaError};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Case-folds, maps full-width forms to half-width, collapses whitespace
/// and strips terminal punctuation. Idempotent.
pub fn normalize_text(s: &str) -> String {
    let folded: String = s
        .chars()
        .map(|c| match c {
            '\u{3000}' => ' ',
            '\u{FF01}'..='\u{FF5E}' => {
                char::from_u32(c as u32 - 0xFF01 + 0x21).unwrap_or(c)
            }
            _ => c,
        })
        .flat_map(|c| c.to_lowercase())
        .collect();
    let collapsed: Vec<&str> = folded.split_whitespace().collect();
    let mut out = collapsed.join(" ");
    while let Some(last) = out.chars().last() {
        if last.is_ascii_punctuation() || matches!(last, '。' | '，' | '、' | '！' | '？' | '；' | '：') {
            out.pop();
            while out.ends_with(' ') {
                out.pop();
            }
        } else {
            break;
        }
    }
    out
}

/// Synonym classes over normalized surface forms.
#[derive(Clone, Debug, Default)]
pub struct SynonymTable {
    class_of: IndexMap<String, usize>,
}

impl SynonymTable {
    pub fn empty() -> Self {
        SynonymTable::default()
    }

    /// Builds the table from class-name to surface-form lists.
    pub fn from_classes<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let mut class_of = IndexMap::new();
        for (id, forms) in classes.into_iter().enumerate() {
            for form in forms {
                class_of.insert(normalize_text(form.as_ref()), id);
            }
        }
        SynonymTable { class_of }
    }

    /// Loads the JSON map `{class_name: [forms...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SrqaError::data(format!("cannot read {}: {e}", path.display())))?;
        let map: IndexMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| SrqaError::data(format!("{}: {e}", path.display())))?;
        Ok(Self::from_classes(map.into_values()))
    }

    pub fn class(&self, normalized: &str) -> Option<usize> {
        self.class_of.get(normalized).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    Strict,
    Fuzzy,
}

/// Strict: normalized equality with any gold. Fuzzy: strict, or shared
/// synonym class, or (when enabled) containment either way.
pub fn match_answer(
    pred: &str,
    golds: &[String],
    mode: MatchMode,
    syn: &SynonymTable,
    containment: bool,
) -> bool {
    let p = normalize_text(pred);
    let strict = golds.iter().any(|g| normalize_text(g) == p);
    match mode {
        MatchMode::Strict => strict,
        MatchMode::Fuzzy => {
            if strict {
                return true;
            }
            if let Some(pc) = syn.class(&p) {
                if golds
                    .iter()
                    .any(|g| syn.class(&normalize_text(g)) == Some(pc))
                {
                    return true;
                }
            }
            if containment && !p.is_empty() {
                return golds.iter().any(|g| {
                    let g = normalize_text(g);
                    !g.is_empty() && (p.contains(&g) || g.contains(&p))
                });
            }
            false
        }
    }
}

/// Best answer span under the length constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    /// Exclusive end.
    pub end: usize,
    /// `P^s[start] + P^e[end-1]`.
    pub score: f64,
    pub answer_text: String,
}

/// Exhaustive search for the span maximizing the start plus end
/// probability, subject to `1 <= end - start <= l_max` with both endpoints
/// unmasked. Ties break toward the smaller start, then the smaller end.
pub fn predict_span(
    start_dist: &[f64],
    end_dist: &[f64],
    mask: &[bool],
    l_max: usize,
) -> Result<SpanPrediction> {
    assert_eq!(start_dist.len(), end_dist.len());
    assert_eq!(start_dist.len(), mask.len());
    assert!(l_max >= 1);
    let t = start_dist.len();
    let mut best: Option<(usize, usize, f64)> = None;
    for s in 0..t {
        if !mask[s] {
            continue;
        }
        for e in s + 1..=(s + l_max).min(t) {
            if !mask[e - 1] {
                continue;
            }
            let score = start_dist[s] + end_dist[e - 1];
            let better = match best {
                None => true,
                Some((_, _, b)) => score > b,
            };
            if better {
                best = Some((s, e, score));
            }
        }
    }
    let (start, end, score) = best.ok_or_else(|| {
        SrqaError::data("predict_span: no feasible span (all positions masked)")
    })?;
    Ok(SpanPrediction {
        start,
        end,
        score,
        answer_text: String::new(),
    })
}

/// Joins the span's tokens with the corpus detokenization rule.
pub fn extract_answer(passage: &Passage, span: &SpanPrediction, joiner: Joiner) -> String {
    joiner.join(&passage.tokens[span.start..span.end])
}

/// Strict and fuzzy precision/recall/F1 with their counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: usize,
    pub answered: usize,
    pub correct_strict: usize,
    pub correct_fuzzy: usize,
    pub strict: Prf,
    pub fuzzy: Prf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf(correct: usize, answered: usize, questions: usize) -> Prf {
    let div = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
    let p = div(correct as f64, answered as f64);
    let r = div(correct as f64, questions as f64);
    let f1 = div(2.0 * p * r, p + r);
    Prf {
        precision: p,
        recall: r,
        f1,
    }
}

/// Aggregates per-question outcomes into the report. Permutation
/// invariant.
pub fn score(results: &[(bool, bool, bool)]) -> EvalReport {
    let questions = results.len();
    let answered = results.iter().filter(|r| r.0).count();
    let correct_strict = results.iter().filter(|r| r.0 && r.1).count();
    let correct_fuzzy = results.iter().filter(|r| r.0 && r.2).count();
    EvalReport {
        questions,
        answered,
        correct_strict,
        correct_fuzzy,
        strict: prf(correct_strict, answered, questions),
        fuzzy: prf(correct_fuzzy, answered, questions),
    }
}

/// One line of the prediction dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answered: bool,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub answer: String,
    pub strict: bool,
    pub fuzzy: bool,
}

/// Produces start and end distributions over a prepared passage.
pub trait SpanScorer: Sync {
    fn distributions(
        &self,
        question_tokens: &[String],
        passage: &Passage,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub source: EvidenceSource,
    pub cross_evidence: bool,
    pub max_passage_len: usize,
    pub max_answer_len: usize,
    pub joiner: Joiner,
    pub containment: bool,
}

/// Runs the scorer over every sample, decodes one answer per question and
/// scores it both ways. Samples where no evidence fits or decoding fails
/// count as unanswered. Parallel over samples with a deterministic
/// reduction order.
pub fn evaluate<S: SpanScorer>(
    samples: &[Sample],
    scorer: &S,
    syn: &SynonymTable,
    opts: &EvalOptions,
) -> (EvalReport, Vec<PredictionRecord>) {
    let records: Vec<PredictionRecord> = samples
        .par_iter()
        .map(|sample| {
            let unanswered = PredictionRecord {
                id: sample.id.clone(),
                answered: false,
                start: 0,
                end: 0,
                score: 0.0,
                answer: String::new(),
                strict: false,
                fuzzy: false,
            };
            let picked =
                match select_evidences(sample, opts.source, opts.max_passage_len, false) {
                    Ok(p) => p,
                    Err(_) => return unanswered,
                };
            let picked = if opts.cross_evidence {
                picked
            } else {
                vec![picked[0]]
            };
            let passage = splice_evidences(&picked);
            let Ok((ps, pe)) = scorer.distributions(&sample.question_tokens, &passage) else {
                return unanswered;
            };
            let mask = vec![true; passage.tokens.len()];
            let Ok(mut span) = predict_span(&ps, &pe, &mask, opts.max_answer_len) else {
                return unanswered;
            };
            span.answer_text = extract_answer(&passage, &span, opts.joiner);
            let strict = match_answer(
                &span.answer_text,
                &sample.gold_answers,
                MatchMode::Strict,
                syn,
                false,
            );
            let fuzzy = match_answer(
                &span.answer_text,
                &sample.gold_answers,
                MatchMode::Fuzzy,
                syn,
                opts.containment,
            );
            PredictionRecord {
                id: sample.id.clone(),
                answered: true,
                start: span.start,
                end: span.end,
                score: span.score,
                answer: span.answer_text,
                strict,
                fuzzy,
            }
        })
        .collect();
    let results: Vec<(bool, bool, bool)> = records
        .iter()
        .map(|r| (r.answered, r.strict, r.fuzzy))
        .collect();
    (score(&results), records)
}
