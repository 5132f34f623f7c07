//! Dataset ingestion, passage construction and batching.
//!
//! A [`Sample`] is one question with its evidences and gold answers. For
//! training, evidences are selected by length, spliced into a single
//! [`Passage`], and answer occurrences become span labels. Batches carry
//! padded character-id arrays plus per-sample label sets supplemented up to
//! the batch-wide maximum label count.

mod synth;

pub use synth::{synth_corpus, SynthConfig};

use crate::error::{Result, SrqaError};
use crate::evaluation::normalize_text;
use indexmap::IndexMap;
use ndarray::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Dataset split; also names the file inside a dataset directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// How tokens are glued back into answer text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Joiner {
    #[default]
    Space,
    Empty,
}

impl Joiner {
    pub fn join(self, tokens: &[String]) -> String {
        match self {
            Joiner::Space => tokens.join(" "),
            Joiner::Empty => tokens.concat(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub tokens: Vec<String>,
    /// Token spans, end exclusive, each reconstructing a gold answer.
    pub answer_spans: Vec<(usize, usize)>,
}

impl Evidence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question_tokens: Vec<String>,
    pub annotated_evidences: Vec<Evidence>,
    pub retrieved_evidences: Vec<Evidence>,
    /// Surface forms; the first is canonical.
    pub gold_answers: Vec<String>,
}

/// Several evidences spliced into one token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub tokens: Vec<String>,
    /// (offset, length) per spliced evidence; partitions `0..tokens.len()`.
    pub evidence_boundaries: Vec<(usize, usize)>,
    /// Answer spans in passage coordinates, end exclusive.
    pub answer_spans: Vec<(usize, usize)>,
}

/// Character vocabulary. PAD is 0, UNK is 1, known characters start at 2
/// in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabWire", into = "VocabWire")]
pub struct Vocabulary {
    chars: Vec<char>,
    index: IndexMap<char, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabWire {
    chars: Vec<char>,
}

impl From<VocabWire> for Vocabulary {
    fn from(w: VocabWire) -> Self {
        Vocabulary::from_chars(w.chars)
    }
}

impl From<Vocabulary> for VocabWire {
    fn from(v: Vocabulary) -> Self {
        VocabWire { chars: v.chars }
    }
}

impl Vocabulary {
    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, (i + 2) as u32))
            .collect();
        Vocabulary { chars, index }
    }

    /// Total id count including PAD and UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK always exist
    }

    pub fn id_of(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        if id < 2 {
            None
        } else {
            self.chars.get((id - 2) as usize).copied()
        }
    }

    /// Character ids of a token, truncated to `cap` characters.
    pub fn encode_token(&self, token: &str, cap: usize) -> Vec<u32> {
        token.chars().take(cap).map(|c| self.id_of(c)).collect()
    }
}

/// Builds the character vocabulary over every token of every sample,
/// questions and evidences alike. Deterministic in input order.
pub fn build_vocab(samples: &[Sample]) -> Vocabulary {
    let mut chars = Vec::new();
    let mut seen = IndexMap::new();
    let mut feed = |token: &str| {
        for c in token.chars() {
            if seen.insert(c, ()).is_none() {
                chars.push(c);
            }
        }
    };
    for s in samples {
        for t in &s.question_tokens {
            feed(t);
        }
        for ev in s.annotated_evidences.iter().chain(&s.retrieved_evidences) {
            for t in &ev.tokens {
                feed(t);
            }
        }
    }
    Vocabulary::from_chars(chars)
}

#[derive(Deserialize, Serialize)]
struct RawEvidence {
    tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<[usize; 2]>>,
}

#[derive(Deserialize, Serialize)]
struct RawRecord {
    id: String,
    question: Vec<String>,
    annotated: Vec<RawEvidence>,
    retrieved: Vec<RawEvidence>,
    answers: Vec<String>,
}

fn convert_evidence(
    raw: RawEvidence,
    answers: &[String],
    joiner: Joiner,
    ctx: &str,
) -> Result<Evidence> {
    if raw.tokens.is_empty() {
        return Err(SrqaError::data(format!("{ctx}: evidence has no tokens")));
    }
    let spans = match raw.spans {
        Some(spans) => {
            let mut out = Vec::with_capacity(spans.len());
            for [s, e] in spans {
                if !(s < e && e <= raw.tokens.len()) {
                    return Err(SrqaError::data(format!(
                        "{ctx}: span [{s}, {e}) out of range for {} tokens",
                        raw.tokens.len()
                    )));
                }
                let text = normalize_text(&joiner.join(&raw.tokens[s..e]));
                if !answers.iter().any(|a| normalize_text(a) == text) {
                    return Err(SrqaError::data(format!(
                        "{ctx}: span [{s}, {e}) does not reconstruct a gold answer"
                    )));
                }
                out.push((s, e));
            }
            out
        }
        None => find_answer_spans(&raw.tokens, answers, joiner),
    };
    Ok(Evidence {
        tokens: raw.tokens,
        answer_spans: spans,
    })
}

fn convert_record(raw: RawRecord, joiner: Joiner, ctx: &str) -> Result<Sample> {
    if raw.question.is_empty() {
        return Err(SrqaError::data(format!("{ctx}: empty question")));
    }
    if raw.answers.iter().any(|a| normalize_text(a).is_empty()) {
        return Err(SrqaError::data(format!(
            "{ctx}: gold answer empty after normalization"
        )));
    }
    if raw.answers.is_empty() {
        return Err(SrqaError::data(format!("{ctx}: no gold answers")));
    }
    if raw.annotated.is_empty() && raw.retrieved.is_empty() {
        return Err(SrqaError::data(format!("{ctx}: sample has no evidence")));
    }
    let annotated = raw
        .annotated
        .into_iter()
        .map(|e| convert_evidence(e, &raw.answers, joiner, ctx))
        .collect::<Result<Vec<_>>>()?;
    let retrieved = raw
        .retrieved
        .into_iter()
        .map(|e| convert_evidence(e, &raw.answers, joiner, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        id: raw.id,
        question_tokens: raw.question,
        annotated_evidences: annotated,
        retrieved_evidences: retrieved,
        gold_answers: raw.answers,
    })
}

/// Loads one split from a JSONL file. `path` may be the file itself or a
/// directory containing `<split>.jsonl`.
pub fn load_dataset(path: &Path, split: Split, joiner: Joiner) -> Result<Vec<Sample>> {
    let file = if path.is_dir() {
        path.join(format!("{}.jsonl", split.as_str()))
    } else {
        path.to_path_buf()
    };
    let fh = std::fs::File::open(&file)
        .map_err(|e| SrqaError::data(format!("cannot open {}: {e}", file.display())))?;
    let reader = std::io::BufReader::new(fh);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("{} line {}", file.display(), lineno + 1);
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| SrqaError::data(format!("{ctx}: {e}")))?;
        samples.push(convert_record(raw, joiner, &ctx)?);
    }
    Ok(samples)
}

/// Writes samples in the JSONL dataset schema.
pub fn write_jsonl(samples: &[Sample], path: &Path) -> Result<()> {
    let mut fh = std::fs::File::create(path)
        .map_err(|e| SrqaError::data(format!("cannot create {}: {e}", path.display())))?;
    for s in samples {
        let raw = RawRecord {
            id: s.id.clone(),
            question: s.question_tokens.clone(),
            annotated: s.annotated_evidences.iter().map(to_raw_evidence).collect(),
            retrieved: s.retrieved_evidences.iter().map(to_raw_evidence).collect(),
            answers: s.gold_answers.clone(),
        };
        let line = serde_json::to_string(&raw)
            .map_err(|e| SrqaError::data(format!("serialize {}: {e}", s.id)))?;
        writeln!(fh, "{line}")?;
    }
    Ok(())
}

fn to_raw_evidence(e: &Evidence) -> RawEvidence {
    RawEvidence {
        tokens: e.tokens.clone(),
        spans: Some(e.answer_spans.iter().map(|&(s, en)| [s, en]).collect()),
    }
}

/// All non-overlapping occurrences of any gold answer as token spans,
/// leftmost-longest first. A span matches when its joined tokens equal the
/// normalized answer text.
pub fn find_answer_spans(
    tokens: &[String],
    answers: &[String],
    joiner: Joiner,
) -> Vec<(usize, usize)> {
    let normalized: Vec<String> = answers
        .iter()
        .map(|a| normalize_text(a))
        .filter(|a| !a.is_empty())
        .collect();
    if normalized.is_empty() {
        return Vec::new();
    }
    // Upper bound on how many tokens an answer can cover.
    let cap = normalized
        .iter()
        .map(|a| match joiner {
            Joiner::Space => a.split_whitespace().count(),
            Joiner::Empty => a.chars().count(),
        })
        .max()
        .unwrap()
        .max(1);
    let mut spans = Vec::new();
    let mut s = 0;
    while s < tokens.len() {
        let hi = (s + cap).min(tokens.len());
        let mut matched = None;
        for e in (s + 1..=hi).rev() {
            let text = normalize_text(&joiner.join(&tokens[s..e]));
            if normalized.iter().any(|a| *a == text) {
                matched = Some(e);
                break;
            }
        }
        if let Some(e) = matched {
            spans.push((s, e));
            s = e;
        } else {
            s += 1;
        }
    }
    spans
}

/// Which evidence list of a sample feeds passage construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceSource {
    Annotated,
    Retrieved,
    Both,
}

fn evidence_pool<'a>(sample: &'a Sample, source: EvidenceSource) -> Vec<&'a Evidence> {
    let mut pool: Vec<&Evidence> = match source {
        EvidenceSource::Annotated => sample.annotated_evidences.iter().collect(),
        EvidenceSource::Retrieved => sample.retrieved_evidences.iter().collect(),
        EvidenceSource::Both => sample
            .annotated_evidences
            .iter()
            .chain(&sample.retrieved_evidences)
            .collect(),
    };
    if pool.is_empty() {
        // fall back to whichever list the sample does have
        pool = sample
            .annotated_evidences
            .iter()
            .chain(&sample.retrieved_evidences)
            .collect();
    }
    pool
}

/// Sorts candidate evidences by ascending token length (stable), keeps
/// answer-bearing ones when `require_answer` is set, and accumulates them
/// greedily until the next one would push the total past
/// `max_passage_len`.
pub fn select_evidences<'a>(
    sample: &'a Sample,
    source: EvidenceSource,
    max_passage_len: usize,
    require_answer: bool,
) -> Result<Vec<&'a Evidence>> {
    assert!(max_passage_len > 0);
    let mut pool = evidence_pool(sample, source);
    if require_answer {
        pool.retain(|e| !e.answer_spans.is_empty());
    }
    pool.sort_by_key(|e| e.len());
    let mut picked = Vec::new();
    let mut total = 0;
    for ev in pool {
        if total + ev.len() > max_passage_len {
            break;
        }
        total += ev.len();
        picked.push(ev);
    }
    if picked.is_empty() {
        return Err(SrqaError::data(format!(
            "sample {}: no evidence fits within {} tokens",
            sample.id, max_passage_len
        )));
    }
    Ok(picked)
}

/// Concatenates evidences in the given order, recording their boundaries
/// and remapping answer spans into passage coordinates.
pub fn splice_evidences(evidences: &[&Evidence]) -> Passage {
    assert!(!evidences.is_empty(), "splice_evidences: empty list");
    let mut tokens = Vec::new();
    let mut boundaries = Vec::new();
    let mut spans = Vec::new();
    for ev in evidences {
        let off = tokens.len();
        boundaries.push((off, ev.len()));
        tokens.extend(ev.tokens.iter().cloned());
        for &(s, e) in &ev.answer_spans {
            spans.push((off + s, off + e));
        }
    }
    Passage {
        tokens,
        evidence_boundaries: boundaries,
        answer_spans: spans,
    }
}

/// One sample ready for batching: a spliced passage with usable labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub question_tokens: Vec<String>,
    pub passage: Passage,
    pub labels: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct PrepOptions {
    pub source: EvidenceSource,
    pub cross_evidence: bool,
    pub max_passage_len: usize,
    pub max_answer_len: usize,
}

/// What fell out during preparation.
#[derive(Clone, Debug, Default)]
pub struct PrepReport {
    pub prepared: usize,
    pub dropped_long_spans: usize,
    pub skipped_no_selection: Vec<String>,
    pub skipped_no_labels: Vec<String>,
}

/// Builds training-ready samples. Samples whose passage carries no usable
/// label are skipped and reported; spans longer than the answer-length cap
/// are dropped and counted.
pub fn prepare_training(samples: &[Sample], opts: &PrepOptions) -> (Vec<PreparedSample>, PrepReport) {
    let mut out = Vec::new();
    let mut report = PrepReport::default();
    for sample in samples {
        let picked = match select_evidences(sample, opts.source, opts.max_passage_len, true) {
            Ok(p) => p,
            Err(_) => {
                report.skipped_no_selection.push(sample.id.clone());
                continue;
            }
        };
        let picked = if opts.cross_evidence {
            picked
        } else {
            vec![picked[0]]
        };
        let passage = splice_evidences(&picked);
        let mut labels: Vec<(usize, usize)> = Vec::new();
        for &(s, e) in &passage.answer_spans {
            if e - s <= opts.max_answer_len {
                labels.push((s, e));
            } else {
                report.dropped_long_spans += 1;
            }
        }
        if !opts.cross_evidence {
            labels.truncate(1);
        }
        if labels.is_empty() {
            report.skipped_no_labels.push(sample.id.clone());
            continue;
        }
        out.push(PreparedSample {
            id: sample.id.clone(),
            question_tokens: sample.question_tokens.clone(),
            passage,
            labels,
        });
    }
    report.prepared = out.len();
    (out, report)
}

/// Padded index arrays for one batch of prepared samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub question_char_ids: Array3<u32>,
    pub passage_char_ids: Array3<u32>,
    pub question_mask: Array2<bool>,
    pub passage_mask: Array2<bool>,
    pub evidence_boundaries: Vec<Vec<(usize, usize)>>,
    /// Exactly `c_max` labels per sample after supplementation.
    pub label_sets: Vec<Vec<(usize, usize)>>,
    pub c_max: usize,
    pub sample_ids: Vec<String>,
}

/// Borrowed view of one batch row, handed to the reader.
pub struct SampleView<'a> {
    pub q_chars: ArrayView2<'a, u32>,
    pub p_chars: ArrayView2<'a, u32>,
    pub q_mask: Vec<bool>,
    pub p_mask: Vec<bool>,
    pub boundaries: &'a [(usize, usize)],
    pub labels: &'a [(usize, usize)],
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_view(&self, k: usize) -> SampleView<'_> {
        SampleView {
            q_chars: self.question_char_ids.index_axis(Axis(0), k),
            p_chars: self.passage_char_ids.index_axis(Axis(0), k),
            q_mask: self.question_mask.row(k).to_vec(),
            p_mask: self.passage_mask.row(k).to_vec(),
            boundaries: &self.evidence_boundaries[k],
            labels: &self.label_sets[k],
        }
    }
}

/// Pads char ids and masks to batch maxima and supplements every label set
/// up to the batch-wide maximum count by copying the sample's own labels,
/// drawn uniformly with replacement from `rng`.
pub fn make_batch<R: Rng>(
    samples: &[PreparedSample],
    vocab: &Vocabulary,
    max_token_chars: usize,
    rng: &mut R,
) -> Batch {
    assert!(!samples.is_empty(), "make_batch: empty batch");
    for s in samples {
        assert!(
            !s.labels.is_empty(),
            "make_batch: sample {} has no labels; filter upstream",
            s.id
        );
    }
    let n = samples.len();
    let j_max = samples.iter().map(|s| s.question_tokens.len()).max().unwrap();
    let t_max = samples.iter().map(|s| s.passage.tokens.len()).max().unwrap();
    let char_len = |tok: &String| tok.chars().count().min(max_token_chars).max(1);
    let cq = samples
        .iter()
        .flat_map(|s| s.question_tokens.iter().map(char_len))
        .max()
        .unwrap();
    let cp = samples
        .iter()
        .flat_map(|s| s.passage.tokens.iter().map(char_len))
        .max()
        .unwrap();

    let mut q_ids = Array3::<u32>::zeros((n, j_max, cq));
    let mut p_ids = Array3::<u32>::zeros((n, t_max, cp));
    let mut q_mask = Array2::<bool>::from_elem((n, j_max), false);
    let mut p_mask = Array2::<bool>::from_elem((n, t_max), false);
    for (k, s) in samples.iter().enumerate() {
        for (j, tok) in s.question_tokens.iter().enumerate() {
            q_mask[(k, j)] = true;
            for (c, id) in vocab.encode_token(tok, max_token_chars).into_iter().enumerate() {
                q_ids[(k, j, c)] = id;
            }
        }
        for (t, tok) in s.passage.tokens.iter().enumerate() {
            p_mask[(k, t)] = true;
            for (c, id) in vocab.encode_token(tok, max_token_chars).into_iter().enumerate() {
                p_ids[(k, t, c)] = id;
            }
        }
    }

    let c_max = samples.iter().map(|s| s.labels.len()).max().unwrap();
    let label_sets = samples
        .iter()
        .map(|s| {
            let mut set = s.labels.clone();
            while set.len() < c_max {
                let pick = s.labels[rng.gen_range(0..s.labels.len())];
                set.push(pick);
            }
            set
        })
        .collect();

    Batch {
        question_char_ids: q_ids,
        passage_char_ids: p_ids,
        question_mask: q_mask,
        passage_mask: p_mask,
        evidence_boundaries: samples
            .iter()
            .map(|s| s.passage.evidence_boundaries.clone())
            .collect(),
        label_sets,
        c_max,
        sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn ev(tokens: &str, spans: &[(usize, usize)]) -> Evidence {
        Evidence {
            tokens: toks(tokens),
            answer_spans: spans.to_vec(),
        }
    }

    #[test]
    fn find_spans_basic_and_absent() {
        let spans = find_answer_spans(&toks("a b c b c"), &["b c".into()], Joiner::Space);
        assert_eq!(spans, vec![(1, 3), (3, 5)]);
        let none = find_answer_spans(&toks("a b"), &["z".into()], Joiner::Space);
        assert!(none.is_empty());
    }

    #[test]
    fn find_spans_leftmost_longest() {
        // brute-force expectation for tokens [x,x,x], answers {"x x","x"}:
        // position 0 matches the longer "x x", leaving (2,3) for "x"
        let spans = find_answer_spans(
            &toks("x x x"),
            &["x x".into(), "x".into()],
            Joiner::Space,
        );
        assert_eq!(spans, vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn find_spans_empty_joiner() {
        let spans = find_answer_spans(&toks("ab cd ef"), &["abcd".into()], Joiner::Empty);
        assert_eq!(spans, vec![(0, 2)]);
    }

    fn sample_with_lengths(lengths: &[usize]) -> Sample {
        let evidences = lengths
            .iter()
            .map(|&l| {
                let mut tokens: Vec<String> = (0..l - 1).map(|i| format!("f{i}")).collect();
                tokens.push("ans".to_string());
                Evidence {
                    answer_spans: vec![(l - 1, l)],
                    tokens,
                }
            })
            .collect();
        Sample {
            id: "s".into(),
            question_tokens: toks("q"),
            annotated_evidences: Vec::new(),
            retrieved_evidences: evidences,
            gold_answers: vec!["ans".into()],
        }
    }

    #[test]
    fn select_greedy_accumulation() {
        // lengths [50, 30, 90], cap 140: sorted 30, 50, 90; 30+50 fits,
        // adding 90 would overflow, so selection stops there
        let s = sample_with_lengths(&[50, 30, 90]);
        let picked = select_evidences(&s, EvidenceSource::Retrieved, 140, true).unwrap();
        let lens: Vec<usize> = picked.iter().map(|e| e.len()).collect();
        assert_eq!(lens, vec![30, 50]);
    }

    #[test]
    fn select_exact_fit_and_overflow() {
        let s = sample_with_lengths(&[80]);
        let picked = select_evidences(&s, EvidenceSource::Retrieved, 80, true).unwrap();
        assert_eq!(picked.len(), 1);
        let s = sample_with_lengths(&[200]);
        assert!(select_evidences(&s, EvidenceSource::Retrieved, 140, true).is_err());
    }

    #[test]
    fn splice_offsets_and_boundaries() {
        let e1 = ev("a b c", &[(0, 1)]);
        let e2 = ev("d e f g", &[(2, 4)]);
        let p = splice_evidences(&[&e1, &e2]);
        assert_eq!(p.evidence_boundaries, vec![(0, 3), (3, 4)]);
        assert_eq!(p.answer_spans, vec![(0, 1), (5, 7)]);
        assert_eq!(p.tokens.len(), 7);

        let single = splice_evidences(&[&e1]);
        assert_eq!(single.tokens, e1.tokens);
        assert_eq!(single.evidence_boundaries, vec![(0, 3)]);
    }

    #[test]
    fn vocab_counting_unk_determinism() {
        let s = Sample {
            id: "v".into(),
            question_tokens: toks("ab"),
            annotated_evidences: vec![ev("b a", &[])],
            retrieved_evidences: Vec::new(),
            gold_answers: vec!["a".into()],
        };
        let v1 = build_vocab(std::slice::from_ref(&s));
        assert_eq!(v1.len(), 4); // PAD, UNK, a, b
        assert_eq!(v1.id_of('z'), UNK_ID);
        let v2 = build_vocab(std::slice::from_ref(&s));
        assert_eq!(v1, v2);
        for c in ['a', 'b'] {
            assert_eq!(v1.char_of(v1.id_of(c)), Some(c));
        }
    }

    fn prepared(labels: &[(usize, usize)]) -> PreparedSample {
        PreparedSample {
            id: "p".into(),
            question_tokens: toks("q a"),
            passage: Passage {
                tokens: toks("a b c d"),
                evidence_boundaries: vec![(0, 4)],
                answer_spans: labels.to_vec(),
            },
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn batch_c_max_and_supplement() {
        let samples = vec![
            prepared(&[(0, 2), (2, 3)]),
            prepared(&[(0, 2)]),
            prepared(&[(0, 1), (1, 2), (2, 3)]),
        ];
        let vocab = build_vocab(&[sample_with_lengths(&[4])]);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let batch = make_batch(&samples, &vocab, 16, &mut rng);
        assert_eq!(batch.c_max, 3);
        for (set, orig) in batch.label_sets.iter().zip(&samples) {
            assert_eq!(set.len(), 3);
            // originals come first, supplements copy existing labels
            assert_eq!(&set[..orig.labels.len()], orig.labels.as_slice());
            for extra in &set[orig.labels.len()..] {
                assert!(orig.labels.contains(extra));
            }
        }
        // the single-label sample can only repeat that label
        assert_eq!(batch.label_sets[1], vec![(0, 2); 3]);
    }

    #[test]
    fn batch_no_supplement_when_counts_equal() {
        let samples = vec![prepared(&[(0, 2)]), prepared(&[(1, 2)])];
        let vocab = build_vocab(&[sample_with_lengths(&[4])]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let batch = make_batch(&samples, &vocab, 16, &mut rng);
        assert_eq!(batch.c_max, 1);
        assert_eq!(batch.label_sets[0], vec![(0, 2)]);
        assert_eq!(batch.label_sets[1], vec![(1, 2)]);
    }

    #[test]
    fn batch_masks_cover_real_tokens_only() {
        let a = prepared(&[(0, 2)]);
        let mut b = prepared(&[(0, 1)]);
        b.passage.tokens.pop();
        b.question_tokens.pop();
        let vocab = build_vocab(&[sample_with_lengths(&[4])]);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let batch = make_batch(&[a, b], &vocab, 16, &mut rng);
        assert_eq!(batch.passage_mask.row(0).iter().filter(|&&m| m).count(), 4);
        assert_eq!(batch.passage_mask.row(1).iter().filter(|&&m| m).count(), 3);
        assert_eq!(batch.question_mask.row(1).iter().filter(|&&m| m).count(), 1);
        // padded positions hold PAD ids
        assert_eq!(batch.passage_char_ids[(1, 3, 0)], PAD_ID);
    }

    #[test]
    fn prepare_drops_long_spans_and_reports() {
        let s = Sample {
            id: "long".into(),
            question_tokens: toks("q"),
            annotated_evidences: Vec::new(),
            retrieved_evidences: vec![Evidence {
                tokens: toks("a b c d e f"),
                answer_spans: vec![(0, 5), (5, 6)],
            }],
            gold_answers: vec!["x".into()],
        };
        let (prepared, report) = prepare_training(
            &[s],
            &PrepOptions {
                source: EvidenceSource::Retrieved,
                cross_evidence: true,
                max_passage_len: 10,
                max_answer_len: 3,
            },
        );
        assert_eq!(report.dropped_long_spans, 1);
        assert_eq!(prepared[0].labels, vec![(5, 6)]);
    }

    #[test]
    fn loader_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_dataset(dir.path(), Split::Train, Joiner::Space)
            .unwrap()
            .is_empty());

        std::fs::write(&path, "{not json}\n").unwrap();
        let err = load_dataset(dir.path(), Split::Train, Joiner::Space).unwrap_err();
        assert!(err.to_string().contains("line 1"));

        // evidence object missing "tokens"
        std::fs::write(
            &path,
            r#"{"id":"x","question":["q"],"annotated":[{"spans":[[0,1]]}],"retrieved":[],"answers":["a"]}"#,
        )
        .unwrap();
        assert!(load_dataset(dir.path(), Split::Train, Joiner::Space).is_err());
    }

    #[test]
    fn loader_roundtrip_and_span_computation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let line = r#"{"id":"r1","question":["who"],"annotated":[{"tokens":["the","answer","is","here"]}],"retrieved":[],"answers":["answer"]}"#;
        std::fs::write(&path, format!("{line}\n{line}\n{line}\n")).unwrap();
        let samples = load_dataset(&path, Split::Train, Joiner::Space).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].annotated_evidences[0].answer_spans, vec![(1, 2)]);

        let out = dir.path().join("out.jsonl");
        write_jsonl(&samples, &out).unwrap();
        let back = load_dataset(&out, Split::Train, Joiner::Space).unwrap();
        assert_eq!(back, samples);
    }
}
