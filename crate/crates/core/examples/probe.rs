use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use srqa_core::corpus::*;
use srqa_core::evaluation::*;
use srqa_core::objective::*;
use srqa_core::reader::*;
use std::env;

fn main() {
    let lr: f64 = env::var("LR").unwrap_or("5.0".into()).parse().unwrap();
    let seed: u64 = env::var("SEED").unwrap_or("21".into()).parse().unwrap();
    let cfg = ModelConfig {
        char_dim: 16, hidden_dim: 16, encoder_layers: 2, fusion_layers: 2,
        dropout: 0.0, max_passage_len: 80, ..ModelConfig::default()
    };
    let synth = SynthConfig {
        vocab_size: 24, questions: 8, evidences_per_question: 1,
        evidence_len_min: 6, evidence_len_max: 10, answer_len_min: 1, answer_len_max: 2,
        distractor_rate: 0.2, noise_rate: 0.0,
    };
    let samples = synth_corpus(&synth, 9).unwrap();
    let vocab = build_vocab(&samples);
    let (prepared, _) = prepare_training(&samples, &PrepOptions {
        source: EvidenceSource::Retrieved, cross_evidence: false,
        max_passage_len: 80, max_answer_len: 10,
    });
    let tcfg = TrainConfig { batch_size: 8, learning_rate: lr, epochs: 1, grad_clip: 5.0, seed };
    let params = Parameters::init(&cfg, vocab.len(), seed);
    let mut state = TrainState::new(params, seed);
    let spec = PerturbSpec::none();
    let mut batch_rng = ChaCha20Rng::seed_from_u64(seed ^ 0xABCD);
    let mut hit = None;
    let t0 = std::time::Instant::now();
    for step in 0..300 {
        let batch = make_batch(&prepared, &vocab, 16, &mut batch_rng);
        let out = train_step(&mut state, &batch, &cfg, &tcfg, &spec).unwrap();
        if out.total_loss < 0.05 && hit.is_none() { hit = Some((step, out.total_loss)); }
    }
    let scorer = ReaderScorer { params: &state.params, cfg: &cfg, vocab: &vocab };
    let opts = EvalOptions {
        source: EvidenceSource::Retrieved, cross_evidence: false,
        max_passage_len: 80, max_answer_len: 10, joiner: Joiner::Space, containment: false,
    };
    let (report, _) = evaluate(&samples, &scorer, &SynonymTable::empty(), &opts);
    println!("seed={seed} lr={lr}: hit={hit:?} strict={:.3} ({:.1}s)", report.strict.f1, t0.elapsed().as_secs_f64());
}
