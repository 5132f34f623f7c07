//! Run configuration: a TOML file with `[model]`, `[train]`,
//! `[adversarial]`, `[data]` and `[synth]` sections, overridable by
//! command line flags (a flag always wins).

use clap::Args;
use serde::Deserialize;
use srqa_core::corpus::{EvidenceSource, Joiner, SynthConfig};
use srqa_core::error::{Result, SrqaError};
use srqa_core::objective::{PerturbMode, PerturbSpec, TrainConfig};
use srqa_core::reader::{ModelConfig, TargetVar};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for all randomness in the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file or directory holding train/validation/test.jsonl.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint to evaluate or resume from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma list of perturbation targets: WP,EP,EhatP,RhatP1,RhatP.
    #[arg(long = "at-targets")]
    pub at_targets: Option<String>,
    /// Perturbation intensity applied to every listed target.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Perturbation mode: adv, noise or none.
    #[arg(long = "at-mode")]
    pub at_mode: Option<String>,
    /// Cross evidence training: on or off.
    #[arg(long = "cross-evidence")]
    pub cross_evidence: Option<String>,
    /// Maximum passage length in tokens (default 80, or 140 with
    /// cross evidence on).
    #[arg(long = "max-passage-len")]
    pub max_passage_len: Option<usize>,
    /// Output directory for checkpoints, logs and dumps.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelSection {
    char_dim: usize,
    hidden_dim: usize,
    encoder_layers: usize,
    fusion_layers: usize,
    dropout: f64,
    max_answer_len: usize,
    max_passage_len: Option<usize>,
    max_token_chars: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            char_dim: m.char_dim,
            hidden_dim: m.hidden_dim,
            encoder_layers: m.encoder_layers,
            fusion_layers: m.fusion_layers,
            dropout: m.dropout,
            max_answer_len: m.max_answer_len,
            max_passage_len: None,
            max_token_chars: m.max_token_chars,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AdvSection {
    mode: String,
    targets: Vec<String>,
    epsilon: f64,
    per_evidence: bool,
}

impl Default for AdvSection {
    fn default() -> Self {
        AdvSection {
            mode: "none".to_string(),
            targets: Vec::new(),
            epsilon: 1e-4,
            per_evidence: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataSection {
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    synonyms: Option<PathBuf>,
    out: Option<PathBuf>,
    cross_evidence: bool,
    evidence_source: Option<String>,
    joiner: String,
    containment: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dataset: None,
            checkpoint: None,
            synonyms: None,
            out: None,
            cross_evidence: false,
            evidence_source: None,
            joiner: "space".to_string(),
            containment: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: ModelSection,
    train: TrainConfig,
    adversarial: AdvSection,
    data: DataSection,
    synth: SynthConfig,
}

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub perturb: PerturbSpec,
    pub synth: SynthConfig,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub out: PathBuf,
    pub cross_evidence: bool,
    pub evidence_source: EvidenceSource,
    pub joiner: Joiner,
    pub containment: bool,
}

fn parse_mode(s: &str) -> Result<PerturbMode> {
    match s {
        "none" => Ok(PerturbMode::None),
        "adv" => Ok(PerturbMode::Adversarial),
        "noise" => Ok(PerturbMode::GaussianNoise),
        other => Err(SrqaError::config(format!(
            "unknown at-mode {other:?}; expected adv, noise or none"
        ))),
    }
}

fn parse_source(s: &str) -> Result<EvidenceSource> {
    match s {
        "annotated" => Ok(EvidenceSource::Annotated),
        "retrieved" => Ok(EvidenceSource::Retrieved),
        "both" => Ok(EvidenceSource::Both),
        other => Err(SrqaError::config(format!(
            "unknown evidence_source {other:?}; expected annotated, retrieved or both"
        ))),
    }
}

fn parse_joiner(s: &str) -> Result<Joiner> {
    match s {
        "space" => Ok(Joiner::Space),
        "empty" => Ok(Joiner::Empty),
        other => Err(SrqaError::config(format!(
            "unknown joiner {other:?}; expected space or empty"
        ))),
    }
}

fn check_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(SrqaError::config(format!(
            "{what} path does not exist: {}",
            path.display()
        )))
    }
}

impl RunConfig {
    /// Loads the TOML file (when given) and applies flag overrides.
    /// Validates every referenced input path and all numeric invariants
    /// before anything runs.
    pub fn load(ov: &Overrides) -> Result<RunConfig> {
        let mut file = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    SrqaError::config(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| SrqaError::config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        if let Some(seed) = ov.seed {
            file.train.seed = seed;
        }
        if let Some(dataset) = &ov.dataset {
            file.data.dataset = Some(dataset.clone());
        }
        if let Some(checkpoint) = &ov.checkpoint {
            file.data.checkpoint = Some(checkpoint.clone());
        }
        if let Some(out) = &ov.out {
            file.data.out = Some(out.clone());
        }
        if let Some(mode) = &ov.at_mode {
            file.adversarial.mode = mode.clone();
        }
        if let Some(eps) = ov.epsilon {
            file.adversarial.epsilon = eps;
        }
        if let Some(targets) = &ov.at_targets {
            file.adversarial.targets =
                targets.split(',').map(|t| t.trim().to_string()).collect();
        }
        if let Some(ce) = &ov.cross_evidence {
            file.data.cross_evidence = match ce.as_str() {
                "on" => true,
                "off" => false,
                other => {
                    return Err(SrqaError::config(format!(
                        "cross-evidence must be on or off, got {other:?}"
                    )))
                }
            };
        }
        if let Some(mpl) = ov.max_passage_len {
            file.model.max_passage_len = Some(mpl);
        }

        let cross_evidence = file.data.cross_evidence;
        let max_passage_len = file
            .model
            .max_passage_len
            .unwrap_or(if cross_evidence { 140 } else { 80 });
        let model = ModelConfig {
            char_dim: file.model.char_dim,
            hidden_dim: file.model.hidden_dim,
            encoder_layers: file.model.encoder_layers,
            fusion_layers: file.model.fusion_layers,
            dropout: file.model.dropout,
            max_answer_len: file.model.max_answer_len,
            max_passage_len,
            max_token_chars: file.model.max_token_chars,
        };
        model.validate()?;
        file.train.validate()?;

        let mode = parse_mode(&file.adversarial.mode)?;
        let mut targets = indexmap::IndexMap::new();
        for t in &file.adversarial.targets {
            targets.insert(TargetVar::from_str(t)?, file.adversarial.epsilon);
        }
        let perturb = PerturbSpec {
            mode,
            targets,
            per_evidence: file.adversarial.per_evidence,
        };
        perturb.validate()?;

        let evidence_source = match &file.data.evidence_source {
            Some(s) => parse_source(s)?,
            None => {
                if cross_evidence {
                    EvidenceSource::Retrieved
                } else {
                    EvidenceSource::Annotated
                }
            }
        };
        let joiner = parse_joiner(&file.data.joiner)?;

        for (path, what) in [
            (&file.data.dataset, "dataset"),
            (&file.data.checkpoint, "checkpoint"),
            (&file.data.synonyms, "synonyms"),
        ] {
            if let Some(p) = path {
                check_exists(p, what)?;
            }
        }

        Ok(RunConfig {
            model,
            train: file.train,
            perturb,
            synth: file.synth,
            dataset: file.data.dataset,
            checkpoint: file.data.checkpoint,
            synonyms: file.data.synonyms,
            out: file.data.out.unwrap_or_else(|| PathBuf::from("out")),
            cross_evidence,
            evidence_source,
            joiner,
            containment: file.data.containment,
        })
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| SrqaError::config("no dataset given (--dataset or [data] dataset)"))
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| {
            SrqaError::config("no checkpoint given (--checkpoint or [data] checkpoint)")
        })
    }
}
