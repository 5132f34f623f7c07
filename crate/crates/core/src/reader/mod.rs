//! The reader network: character embedding with max pooling, simple match
//! attention at the embedding layer, stacked bi-directional SRU encoders,
//! bi-directional attention, fusion, self-match attention and a pointer
//! layer producing start and end distributions over passage tokens.
//!
//! Every named intermediate of a forward pass is recorded in the returned
//! [`ForwardPass`] and can receive an additive perturbation at the moment
//! it is computed; all downstream computation then uses the perturbed
//! value.

mod checkpoint;
pub mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};

use crate::autodiff::{Grads, Tape, Tensor, VarId};
use crate::corpus::{SampleView, Vocabulary, PAD_ID};
use crate::error::{Result, SrqaError};
use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub char_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub fusion_layers: usize,
    pub dropout: f64,
    pub max_answer_len: usize,
    pub max_passage_len: usize,
    pub max_token_chars: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_dim: 64,
            hidden_dim: 100,
            encoder_layers: 4,
            fusion_layers: 2,
            dropout: 0.1,
            max_answer_len: 10,
            max_passage_len: 80,
            max_token_chars: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0
            || self.hidden_dim == 0
            || self.encoder_layers == 0
            || self.fusion_layers == 0
            || self.max_answer_len == 0
            || self.max_passage_len == 0
            || self.max_token_chars == 0
        {
            return Err(SrqaError::config("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SrqaError::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Named intermediate variables of one forward pass, in computation order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Act {
    QuestionChars,
    PassageChars,
    QuestionWords,
    PassageWords,
    EmbeddingAttention,
    QuestionEncoding,
    PassageEncoding,
    Similarity,
    QuestionMerged,
    PassageMerged,
    AttentionConcat,
    Fused,
    SelfMatched,
    StartDist,
    EndDist,
}

impl Act {
    pub const ALL: [Act; 15] = [
        Act::QuestionChars,
        Act::PassageChars,
        Act::QuestionWords,
        Act::PassageWords,
        Act::EmbeddingAttention,
        Act::QuestionEncoding,
        Act::PassageEncoding,
        Act::Similarity,
        Act::QuestionMerged,
        Act::PassageMerged,
        Act::AttentionConcat,
        Act::Fused,
        Act::SelfMatched,
        Act::StartDist,
        Act::EndDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Act::QuestionChars => "WQ",
            Act::PassageChars => "WP",
            Act::QuestionWords => "EQ",
            Act::PassageWords => "EP",
            Act::EmbeddingAttention => "EhatP",
            Act::QuestionEncoding => "RQ",
            Act::PassageEncoding => "RP0",
            Act::Similarity => "S",
            Act::QuestionMerged => "RhatP1",
            Act::PassageMerged => "RhatP2",
            Act::AttentionConcat => "RhatP",
            Act::Fused => "UP",
            Act::SelfMatched => "UhatP",
            Act::StartDist => "Ps",
            Act::EndDist => "Pe",
        }
    }
}

/// Passage-side variables eligible for perturbation injection.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum TargetVar {
    PassageChars,
    PassageWords,
    EmbeddingAttention,
    QuestionMerged,
    AttentionConcat,
}

impl TargetVar {
    pub const ALL: [TargetVar; 5] = [
        TargetVar::PassageChars,
        TargetVar::PassageWords,
        TargetVar::EmbeddingAttention,
        TargetVar::QuestionMerged,
        TargetVar::AttentionConcat,
    ];

    pub fn act(self) -> Act {
        match self {
            TargetVar::PassageChars => Act::PassageChars,
            TargetVar::PassageWords => Act::PassageWords,
            TargetVar::EmbeddingAttention => Act::EmbeddingAttention,
            TargetVar::QuestionMerged => Act::QuestionMerged,
            TargetVar::AttentionConcat => Act::AttentionConcat,
        }
    }

    pub fn name(self) -> &'static str {
        self.act().name()
    }
}

impl FromStr for TargetVar {
    type Err = SrqaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WP" => Ok(TargetVar::PassageChars),
            "EP" => Ok(TargetVar::PassageWords),
            "EhatP" => Ok(TargetVar::EmbeddingAttention),
            "RhatP1" => Ok(TargetVar::QuestionMerged),
            "RhatP" => Ok(TargetVar::AttentionConcat),
            other => Err(SrqaError::config(format!(
                "unknown perturbation target {other:?}; expected one of WP, EP, EhatP, RhatP1, RhatP"
            ))),
        }
    }
}

/// All trainable tensors, keyed by stable names.
#[derive(Clone, Debug)]
pub struct Parameters {
    tensors: IndexMap<String, Arc<Tensor>>,
}

pub const CHAR_EMBEDDING: &str = "char_embedding";

struct CellDims {
    prefix: String,
    in_dim: usize,
}

fn encoder_cells(cfg: &ModelConfig) -> Vec<CellDims> {
    let d2 = 2 * cfg.hidden_dim;
    let scopes = [
        ("q_enc", cfg.encoder_layers, cfg.char_dim),
        ("p_enc", cfg.encoder_layers, 2 * cfg.char_dim),
        ("fusion", cfg.fusion_layers, 3 * d2),
    ];
    let mut cells = Vec::new();
    for (scope, layers, in0) in scopes {
        for l in 0..layers {
            let in_dim = if l == 0 { in0 } else { d2 };
            for dir in ["fwd", "bwd"] {
                cells.push(CellDims {
                    prefix: format!("{scope}.l{l}.{dir}"),
                    in_dim,
                });
            }
        }
    }
    cells
}

impl Parameters {
    /// Fresh parameters: character embeddings uniform in (-1.0, 1.0),
    /// linear maps uniform with variance-preserving fan-in scaling
    /// (bound sqrt(3/fan_in)), biases zero. Deterministic in `seed`.
    ///
    /// Narrower embedding scales leave the attention scores so flat that
    /// every attended row comes out identical and the pointer softmax
    /// gradient cancels exactly; these bounds keep the signal alive at
    /// small widths.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = cfg.hidden_dim;
        let mut tensors = IndexMap::new();
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            Arc::new(Tensor::from_shape_fn((rows, cols), |_| {
                rng.gen_range(-scale..scale)
            }))
        };
        let fan_in = |n: usize| (3.0 / n as f64).sqrt();
        tensors.insert(
            CHAR_EMBEDDING.to_string(),
            uniform(vocab_size, cfg.char_dim, 1.0),
        );
        for cell in encoder_cells(cfg) {
            let s = fan_in(cell.in_dim);
            tensors.insert(format!("{}.w", cell.prefix), uniform(cell.in_dim, d, s));
            tensors.insert(format!("{}.wf", cell.prefix), uniform(cell.in_dim, d, s));
            tensors.insert(
                format!("{}.bf", cell.prefix),
                Arc::new(Tensor::zeros((1, d))),
            );
            tensors.insert(format!("{}.wr", cell.prefix), uniform(cell.in_dim, d, s));
            tensors.insert(
                format!("{}.br", cell.prefix),
                Arc::new(Tensor::zeros((1, d))),
            );
            if cell.in_dim != d {
                tensors.insert(format!("{}.wh", cell.prefix), uniform(cell.in_dim, d, s));
            }
        }
        let d2 = 2 * d;
        tensors.insert("w_s".to_string(), uniform(3 * d2, 1, fan_in(3 * d2)));
        tensors.insert("w_ps".to_string(), uniform(2 * d2, 1, fan_in(2 * d2)));
        tensors.insert("w_pe".to_string(), uniform(2 * d2 + 1, 1, fan_in(2 * d2 + 1)));
        Parameters { tensors }
    }

    pub fn from_map(map: IndexMap<String, Tensor>) -> Self {
        Parameters {
            tensors: map.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        }
    }

    pub fn to_map(&self) -> IndexMap<String, Tensor> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), (**v).clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn shared(&self, name: &str) -> Arc<Tensor> {
        Arc::clone(&self.tensors[name])
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arc<Tensor>)> {
        self.tensors.iter()
    }

    /// Mutable access for optimizer updates.
    pub fn update(&mut self, name: &str, f: impl FnOnce(&mut Tensor)) {
        let t = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        f(Arc::make_mut(t));
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        self.tensors.insert(name.to_string(), Arc::new(value));
    }

    /// Sum of squared entries over all tensors.
    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .values()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Training or inference behaviour of one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum ForwardMode {
    Eval,
    /// Dropout active, masks drawn from this seed. Reusing the seed
    /// reproduces the masks exactly.
    Train { dropout_seed: u64 },
}

pub type PerturbMap = IndexMap<TargetVar, Tensor>;

/// One recorded forward pass over a single sample.
pub struct ForwardPass {
    pub tape: Tape,
    acts: IndexMap<&'static str, VarId>,
    param_ids: IndexMap<String, VarId>,
    pub t_len: usize,
    pub j_len: usize,
    p_mask: Vec<bool>,
}

/// Dropout context for one forward pass: inactive at evaluation, seeded
/// mask stream during training.
pub struct DropCtx {
    rate: f64,
    rng: Option<ChaCha20Rng>,
}

impl DropCtx {
    pub fn eval() -> Self {
        DropCtx {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        DropCtx {
            rate,
            rng: Some(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: VarId) -> VarId {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if self.rate == 0.0 {
            return x;
        }
        let (r, c) = tape.value(x).dim();
        let keep = 1.0 - self.rate;
        let mask = Tensor::from_shape_fn((r, c), |_| {
            if rng.gen_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mid = tape.input(mask);
        tape.mul(x, mid)
    }
}

/// Runs the full stack on one sample. Perturbations in `perturb` are added
/// to their target variable immediately after it is computed.
pub fn forward(
    params: &Parameters,
    cfg: &ModelConfig,
    view: &SampleView,
    mode: ForwardMode,
    perturb: &PerturbMap,
) -> ForwardPass {
    let mut tape = Tape::new();
    let mut param_ids = IndexMap::new();
    for (name, tensor) in params.iter() {
        param_ids.insert(name.clone(), tape.input_shared(Arc::clone(tensor)));
    }
    let pid = |name: &str| -> VarId { param_ids[name] };

    let mut drop = match mode {
        ForwardMode::Eval => DropCtx::eval(),
        ForwardMode::Train { dropout_seed } => DropCtx::train(cfg.dropout, dropout_seed),
    };

    let j_len = view.q_chars.nrows();
    let t_len = view.p_chars.nrows();
    let mut acts: IndexMap<&'static str, VarId> = IndexMap::new();
    let record = |acts: &mut IndexMap<&'static str, VarId>, a: Act, id: VarId| {
        acts.insert(a.name(), id);
        id
    };
    let inject = |tape: &mut Tape, tv: TargetVar, id: VarId| -> VarId {
        match perturb.get(&tv) {
            None => id,
            Some(r) => {
                assert_eq!(
                    r.dim(),
                    tape.value(id).dim(),
                    "perturbation shape mismatch on {}",
                    tv.name()
                );
                let rid = tape.input(r.clone());
                tape.add(id, rid)
            }
        }
    };

    // Embedding layer
    let table = pid(CHAR_EMBEDDING);
    let (wq, q_keep) = layers::embed_chars(&mut tape, table, &view.q_chars);
    record(&mut acts, Act::QuestionChars, wq);
    let (wp, p_keep) = layers::embed_chars(&mut tape, table, &view.p_chars);
    let wp = inject(&mut tape, TargetVar::PassageChars, wp);
    record(&mut acts, Act::PassageChars, wp);

    let eq = layers::pool_words(&mut tape, wq, j_len, view.q_chars.ncols(), &q_keep);
    record(&mut acts, Act::QuestionWords, eq);
    let ep = layers::pool_words(&mut tape, wp, t_len, view.p_chars.ncols(), &p_keep);
    let ep = inject(&mut tape, TargetVar::PassageWords, ep);
    record(&mut acts, Act::PassageWords, ep);

    let eq_d = drop.apply(&mut tape, eq);
    let ep_d = drop.apply(&mut tape, ep);

    let ehat = layers::sim_att(&mut tape, ep_d, eq_d, &view.q_mask);
    let ehat = inject(&mut tape, TargetVar::EmbeddingAttention, ehat);
    record(&mut acts, Act::EmbeddingAttention, ehat);

    // Representation layer
    let rq = layers::sru_encode(
        &mut tape,
        eq_d,
        "q_enc",
        cfg.encoder_layers,
        cfg.hidden_dim,
        &param_ids,
        &view.q_mask,
        &mut drop,
    );
    record(&mut acts, Act::QuestionEncoding, rq);
    let p_in = tape.concat_cols(&[ep_d, ehat]);
    let rp0 = layers::sru_encode(
        &mut tape,
        p_in,
        "p_enc",
        cfg.encoder_layers,
        cfg.hidden_dim,
        &param_ids,
        &view.p_mask,
        &mut drop,
    );
    record(&mut acts, Act::PassageEncoding, rp0);

    let sim = layers::similarity_matrix(&mut tape, rp0, rq, pid("w_s"), 2 * cfg.hidden_dim);
    record(&mut acts, Act::Similarity, sim);

    let r1 = layers::question_merged(&mut tape, sim, rq, &view.q_mask);
    let r1 = inject(&mut tape, TargetVar::QuestionMerged, r1);
    record(&mut acts, Act::QuestionMerged, r1);

    let r2 = layers::passage_merged(&mut tape, sim, rp0, &view.q_mask, &view.p_mask);
    record(&mut acts, Act::PassageMerged, r2);

    // Self-matching layer
    let rhat = tape.concat_cols(&[r1, r2, rp0]);
    let rhat = inject(&mut tape, TargetVar::AttentionConcat, rhat);
    record(&mut acts, Act::AttentionConcat, rhat);

    let up = layers::sru_encode(
        &mut tape,
        rhat,
        "fusion",
        cfg.fusion_layers,
        cfg.hidden_dim,
        &param_ids,
        &view.p_mask,
        &mut drop,
    );
    record(&mut acts, Act::Fused, up);

    let uhat = layers::self_match(&mut tape, up, &view.p_mask);
    record(&mut acts, Act::SelfMatched, uhat);

    // Pointer layer
    let feats = tape.concat_cols(&[uhat, r1]);
    let feats = drop.apply(&mut tape, feats);
    let (ps, pe) = layers::pointer(&mut tape, feats, pid("w_ps"), pid("w_pe"), &view.p_mask);
    record(&mut acts, Act::StartDist, ps);
    record(&mut acts, Act::EndDist, pe);

    ForwardPass {
        tape,
        acts,
        param_ids,
        t_len,
        j_len,
        p_mask: view.p_mask.clone(),
    }
}

impl ForwardPass {
    pub fn activation(&self, a: Act) -> &Tensor {
        self.tape.value(self.acts[a.name()])
    }

    pub fn activation_id(&self, a: Act) -> VarId {
        self.acts[a.name()]
    }

    /// First non-finite activation, if any, in computation order.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        for a in Act::ALL {
            if self.activation(a).iter().any(|x| !x.is_finite()) {
                return Some(a.name());
            }
        }
        None
    }

    /// Start and end distributions as plain vectors over passage positions.
    pub fn distributions(&self) -> (Vec<f64>, Vec<f64>) {
        let ps = self.activation(Act::StartDist);
        let pe = self.activation(Act::EndDist);
        (ps.row(0).to_vec(), pe.row(0).to_vec())
    }

    /// Mean negative log likelihood of the given labels under this pass,
    /// as a tape node. Labels are (start, exclusive end) pairs; every
    /// endpoint must sit on an unmasked position.
    pub fn loss_node(&mut self, labels: &[(usize, usize)]) -> VarId {
        assert!(!labels.is_empty(), "loss_node: no labels");
        let ps = self.acts["Ps"];
        let pe = self.acts["Pe"];
        let mut acc: Option<VarId> = None;
        for &(s, e) in labels {
            assert!(s < e && e <= self.t_len, "label ({s}, {e}) out of range");
            assert!(
                self.p_mask[s] && self.p_mask[e - 1],
                "label ({s}, {e}) touches a masked position"
            );
            let a = self.tape.pick(ps, 0, s);
            let la = self.tape.ln(a);
            let b = self.tape.pick(pe, 0, e - 1);
            let lb = self.tape.ln(b);
            let term = self.tape.add(la, lb);
            acc = Some(match acc {
                None => term,
                Some(prev) => self.tape.add(prev, term),
            });
        }
        let sum = acc.unwrap();
        self.tape.scale(sum, -1.0 / labels.len() as f64)
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        self.tape.value(id)[(0, 0)]
    }

    pub fn backward(&self, root: VarId) -> Grads {
        self.tape.backward(root)
    }

    /// Extracts per-parameter gradients, filling zeros for parameters the
    /// loss did not reach.
    pub fn param_grads(&self, grads: &mut Grads) -> IndexMap<String, Tensor> {
        self.param_ids
            .iter()
            .map(|(name, &id)| {
                let g = grads
                    .take(id)
                    .unwrap_or_else(|| Tensor::zeros(self.tape.value(id).dim()));
                (name.clone(), g)
            })
            .collect()
    }

    /// Gradient with respect to a perturbation target's recorded value.
    pub fn target_grad(&self, grads: &Grads, tv: TargetVar) -> Tensor {
        let id = self.acts[tv.name()];
        grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.tape.value(id).dim()))
    }

    /// Recorded value of a perturbation target.
    pub fn target_value(&self, tv: TargetVar) -> &Tensor {
        self.tape.value(self.acts[tv.name()])
    }
}

/// Owned encoding of one question/passage pair outside any batch.
pub struct EncodedSingle {
    pub q_chars: ndarray::Array2<u32>,
    pub p_chars: ndarray::Array2<u32>,
    pub q_mask: Vec<bool>,
    pub p_mask: Vec<bool>,
    pub boundaries: Vec<(usize, usize)>,
    pub labels: Vec<(usize, usize)>,
}

impl EncodedSingle {
    pub fn view(&self) -> SampleView<'_> {
        SampleView {
            q_chars: self.q_chars.view(),
            p_chars: self.p_chars.view(),
            q_mask: self.q_mask.clone(),
            p_mask: self.p_mask.clone(),
            boundaries: &self.boundaries,
            labels: &self.labels,
        }
    }
}

fn encode_tokens(
    tokens: &[String],
    vocab: &Vocabulary,
    cap: usize,
) -> (ndarray::Array2<u32>, Vec<bool>) {
    let rows = tokens.len();
    let width = tokens
        .iter()
        .map(|t| t.chars().count().min(cap).max(1))
        .max()
        .unwrap_or(1);
    let mut ids = ndarray::Array2::<u32>::from_elem((rows, width), PAD_ID);
    for (r, tok) in tokens.iter().enumerate() {
        for (c, id) in vocab.encode_token(tok, cap).into_iter().enumerate() {
            ids[(r, c)] = id;
        }
    }
    (ids, vec![true; rows])
}

/// Encodes a question and a passage for a standalone forward pass.
pub fn encode_single(
    question_tokens: &[String],
    passage: &crate::corpus::Passage,
    vocab: &Vocabulary,
    cap: usize,
) -> EncodedSingle {
    let (q_chars, q_mask) = encode_tokens(question_tokens, vocab, cap);
    let (p_chars, p_mask) = encode_tokens(&passage.tokens, vocab, cap);
    EncodedSingle {
        q_chars,
        p_chars,
        q_mask,
        p_mask,
        boundaries: passage.evidence_boundaries.clone(),
        labels: passage.answer_spans.clone(),
    }
}

/// [`crate::evaluation::SpanScorer`] backed by a trained reader.
pub struct ReaderScorer<'a> {
    pub params: &'a Parameters,
    pub cfg: &'a ModelConfig,
    pub vocab: &'a Vocabulary,
}

impl crate::evaluation::SpanScorer for ReaderScorer<'_> {
    fn distributions(
        &self,
        question_tokens: &[String],
        passage: &crate::corpus::Passage,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let enc = encode_single(question_tokens, passage, self.vocab, self.cfg.max_token_chars);
        let pass = forward(
            self.params,
            self.cfg,
            &enc.view(),
            ForwardMode::Eval,
            &PerturbMap::new(),
        );
        Ok(pass.distributions())
    }
}
