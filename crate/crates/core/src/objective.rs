//! Training losses, adversarial and noise perturbations, and the
//! adaptive-delta optimizer step.
//!
//! A training step runs one clean forward pass per sample, takes the
//! gradients of the loss with respect to the parameters and every
//! perturbation target in a single backward pass, builds the perturbations
//! from the frozen parameter snapshot, re-runs the forward pass with all
//! perturbations injected at once, and updates the parameters with the sum
//! of both losses' gradients. Perturbations are constants: no gradient
//! flows through them.

use crate::autodiff::Tensor;
use crate::corpus::Batch;
use crate::error::{Result, SrqaError};
use crate::reader::{forward, ForwardMode, ModelConfig, Parameters, PerturbMap, TargetVar};
use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Allowed intensity range for configured perturbations.
pub const EPSILON_RANGE: (f64, f64) = (1e-5, 1e-1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    None,
    #[serde(rename = "adv")]
    Adversarial,
    #[serde(rename = "noise")]
    GaussianNoise,
}

/// Which variables receive perturbations and at what intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    pub targets: IndexMap<TargetVar, f64>,
    /// Normalize gradients within each evidence segment independently.
    pub per_evidence: bool,
}

impl PerturbSpec {
    pub fn none() -> Self {
        PerturbSpec {
            mode: PerturbMode::None,
            targets: IndexMap::new(),
            per_evidence: false,
        }
    }

    pub fn active(&self) -> bool {
        self.mode != PerturbMode::None
    }

    pub fn validate(&self) -> Result<()> {
        if !self.active() {
            return Ok(());
        }
        if self.targets.is_empty() {
            return Err(SrqaError::config(
                "perturbation mode set but no target variables given",
            ));
        }
        for (tv, &eps) in &self.targets {
            if !(EPSILON_RANGE.0..=EPSILON_RANGE.1).contains(&eps) {
                return Err(SrqaError::config(format!(
                    "epsilon {eps} for target {} outside [{}, {}]",
                    tv.name(),
                    EPSILON_RANGE.0,
                    EPSILON_RANGE.1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.01,
            epochs: 5,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SrqaError::config("batch_size must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(SrqaError::config("learning_rate must be positive"));
        }
        if self.grad_clip <= 0.0 {
            return Err(SrqaError::config("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Mean negative log likelihood of one label per sample (start plus end).
/// Ends are exclusive; the lookup converts to the end-token index.
pub fn span_loss(
    start_dists: &[Vec<f64>],
    end_dists: &[Vec<f64>],
    labels: &[(usize, usize)],
) -> Result<f64> {
    let sets: Vec<Vec<(usize, usize)>> = labels.iter().map(|&l| vec![l]).collect();
    cross_evidence_loss(start_dists, end_dists, &sets)
}

/// Cross-evidence extension: every sample carries the batch-wide maximum
/// number of labels and all of them enter the loss.
pub fn cross_evidence_loss(
    start_dists: &[Vec<f64>],
    end_dists: &[Vec<f64>],
    label_sets: &[Vec<(usize, usize)>],
) -> Result<f64> {
    let n = label_sets.len();
    assert!(n > 0 && start_dists.len() == n && end_dists.len() == n);
    let c_max = label_sets[0].len();
    if label_sets.iter().any(|s| s.len() != c_max) || c_max == 0 {
        return Err(SrqaError::data(
            "cross_evidence_loss: ragged label sets; supplement labels first",
        ));
    }
    let mut total = 0.0;
    for k in 0..n {
        for &(s, e) in &label_sets[k] {
            assert!(s < e && e <= start_dists[k].len(), "label out of range");
            total += start_dists[k][s].ln() + end_dists[k][e - 1].ln();
        }
    }
    Ok(-total / (n as f64 * c_max as f64))
}

fn scaled_direction(x: &Tensor, dir: &Tensor, epsilon: f64, segments: Option<&[(usize, usize)]>) -> Tensor {
    assert_eq!(x.dim(), dir.dim(), "perturbation: shape mismatch");
    let mut r = Tensor::zeros(x.dim());
    let mut fill = |rows: std::ops::Range<usize>| {
        let slice = dir.slice(ndarray::s![rows.clone(), ..]);
        let norm = slice.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in rows {
                for j in 0..x.ncols() {
                    r[(i, j)] = epsilon * x[(i, j)] * dir[(i, j)] / norm;
                }
            }
        }
    };
    match segments {
        None => fill(0..x.nrows()),
        Some(segs) => {
            for &(off, len) in segs {
                fill(off..off + len);
            }
        }
    }
    r
}

/// Worst-case first-order perturbation `epsilon * X (*) g / ||g||`, with
/// the Frobenius norm taken over the whole tensor or independently within
/// each row segment. A zero-gradient slice yields a zero perturbation.
pub fn adv_perturb(
    x: &Tensor,
    g: &Tensor,
    epsilon: f64,
    segments: Option<&[(usize, usize)]>,
) -> Tensor {
    scaled_direction(x, g, epsilon, segments)
}

/// Gaussian control: the gradient direction is replaced by standard normal
/// noise under the same normalization, so the two perturbations are norm
/// comparable.
pub fn noise_perturb<R: Rng>(x: &Tensor, epsilon: f64, rng: &mut R) -> Tensor {
    let n = Tensor::from_shape_fn(x.dim(), |_| rng.sample::<f64, _>(StandardNormal));
    scaled_direction(x, &n, epsilon, None)
}

/// Adaptive-delta accumulators, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdaDelta {
    rho: f64,
    eps: f64,
    sq_grad: IndexMap<String, Tensor>,
    sq_delta: IndexMap<String, Tensor>,
}

impl AdaDelta {
    pub fn new() -> Self {
        AdaDelta {
            rho: 0.95,
            eps: 1e-6,
            sq_grad: IndexMap::new(),
            sq_delta: IndexMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &IndexMap<String, Tensor>, lr: f64) {
        for (name, g) in grads {
            let sq = self
                .sq_grad
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.dim()));
            sq.zip_mut_with(g, |s, &gv| *s = self.rho * *s + (1.0 - self.rho) * gv * gv);
            let acc = self
                .sq_delta
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.dim()));
            let mut delta = g.clone();
            ndarray::Zip::from(&mut delta)
                .and(&*sq)
                .and(&*acc)
                .for_each(|d, &s, &a| {
                    *d *= ((a + self.eps) / (s + self.eps)).sqrt();
                });
            acc.zip_mut_with(&delta, |a, &dv| {
                *a = self.rho * *a + (1.0 - self.rho) * dv * dv
            });
            params.update(name, |t| {
                t.zip_mut_with(&delta, |p, &dv| *p -= lr * dv);
            });
        }
    }
}

/// Scales all gradients so their global norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
    norm
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, k: u64) -> u64 {
    splitmix64(base ^ k.wrapping_mul(0xD6E8FEB86659FD93))
}

struct SampleResult {
    base_loss: f64,
    base_grads: IndexMap<String, Tensor>,
    adv: Option<(f64, IndexMap<String, Tensor>)>,
}

/// Losses and parameter gradients for one batch, clean pass plus optional
/// perturbed pass.
pub struct BatchOutcome {
    pub base_loss: f64,
    pub adv_loss: Option<f64>,
    pub base_grads: IndexMap<String, Tensor>,
    pub adv_grads: Option<IndexMap<String, Tensor>>,
}

fn segments_for(
    tv: TargetVar,
    boundaries: &[(usize, usize)],
    chars_per_token: usize,
) -> Vec<(usize, usize)> {
    let scale = match tv {
        TargetVar::PassageChars => chars_per_token,
        _ => 1,
    };
    boundaries
        .iter()
        .map(|&(off, len)| (off * scale, len * scale))
        .collect()
}

fn process_sample(
    params: &Parameters,
    mcfg: &ModelConfig,
    batch: &Batch,
    k: usize,
    spec: &PerturbSpec,
    dropout_seed: u64,
    noise_seed: u64,
    train_mode: bool,
) -> Result<SampleResult> {
    let view = batch.sample_view(k);
    let mode = if train_mode {
        ForwardMode::Train { dropout_seed }
    } else {
        ForwardMode::Eval
    };
    let mut pass = forward(params, mcfg, &view, mode, &PerturbMap::new());
    let loss_id = pass.loss_node(view.labels);
    let base_loss = pass.scalar(loss_id);
    if !base_loss.is_finite() {
        let name = pass.first_non_finite().unwrap_or("loss");
        return Err(SrqaError::numerical(format!(
            "non-finite loss on sample {} (first non-finite activation: {name})",
            batch.sample_ids[k]
        )));
    }
    let mut grads = pass.backward(loss_id);
    let base_grads = pass.param_grads(&mut grads);

    if !spec.active() {
        return Ok(SampleResult {
            base_loss,
            base_grads,
            adv: None,
        });
    }

    let mut noise_rng = ChaCha20Rng::seed_from_u64(noise_seed);
    let mut perturb = PerturbMap::new();
    for (&tv, &eps) in &spec.targets {
        let x = pass.target_value(tv);
        let r = match spec.mode {
            PerturbMode::Adversarial => {
                let g = pass.target_grad(&grads, tv);
                let segs;
                let segments = if spec.per_evidence && view.boundaries.len() > 1 {
                    segs = segments_for(tv, view.boundaries, view.p_chars.ncols());
                    Some(segs.as_slice())
                } else {
                    None
                };
                adv_perturb(x, &g, eps, segments)
            }
            PerturbMode::GaussianNoise => noise_perturb(x, eps, &mut noise_rng),
            PerturbMode::None => unreachable!(),
        };
        perturb.insert(tv, r);
    }

    let mut adv_pass = forward(params, mcfg, &view, mode, &perturb);
    let adv_id = adv_pass.loss_node(view.labels);
    let adv_loss = adv_pass.scalar(adv_id);
    if !adv_loss.is_finite() {
        let name = adv_pass.first_non_finite().unwrap_or("loss");
        return Err(SrqaError::numerical(format!(
            "non-finite adversarial loss on sample {} (first non-finite activation: {name})",
            batch.sample_ids[k]
        )));
    }
    let mut adv_grads = adv_pass.backward(adv_id);
    let adv_param_grads = adv_pass.param_grads(&mut adv_grads);

    Ok(SampleResult {
        base_loss,
        base_grads,
        adv: Some((adv_loss, adv_param_grads)),
    })
}

fn mean_grads(per_sample: Vec<IndexMap<String, Tensor>>, n: f64) -> IndexMap<String, Tensor> {
    let mut iter = per_sample.into_iter();
    let mut acc = iter.next().expect("mean_grads: empty");
    for grads in iter {
        for (name, g) in grads {
            *acc.get_mut(&name).expect("mean_grads: key mismatch") += &g;
        }
    }
    for g in acc.values_mut() {
        g.mapv_inplace(|x| x / n);
    }
    acc
}

/// Runs clean (and, when configured, perturbed) passes over a whole batch.
/// Parallel over samples; losses and gradients reduce in sample order, so
/// the outcome is deterministic.
pub fn run_batch(
    params: &Parameters,
    mcfg: &ModelConfig,
    batch: &Batch,
    spec: &PerturbSpec,
    step_seed: u64,
    noise_seed: u64,
    train_mode: bool,
) -> Result<BatchOutcome> {
    let n = batch.len();
    let results: Vec<Result<SampleResult>> = (0..n)
        .into_par_iter()
        .map(|k| {
            process_sample(
                params,
                mcfg,
                batch,
                k,
                spec,
                derive_seed(step_seed, k as u64),
                derive_seed(noise_seed, k as u64),
                train_mode,
            )
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    for r in results {
        samples.push(r?);
    }
    let nf = n as f64;
    let base_loss = samples.iter().map(|s| s.base_loss).sum::<f64>() / nf;
    let base_grads = mean_grads(samples.iter().map(|s| s.base_grads.clone()).collect(), nf);
    let (adv_loss, adv_grads) = if spec.active() {
        let losses: f64 = samples
            .iter()
            .map(|s| s.adv.as_ref().expect("adv pass missing").0)
            .sum();
        let grads = mean_grads(
            samples
                .into_iter()
                .map(|s| s.adv.expect("adv pass missing").1)
                .collect(),
            nf,
        );
        (Some(losses / nf), Some(grads))
    } else {
        (None, None)
    };
    Ok(BatchOutcome {
        base_loss,
        adv_loss,
        base_grads,
        adv_grads,
    })
}

/// The perturbed-pass loss for a batch (the base loss when mode is none).
/// Returns (base, adversarial).
pub fn adv_loss(
    params: &Parameters,
    mcfg: &ModelConfig,
    batch: &Batch,
    spec: &PerturbSpec,
    seed: u64,
) -> Result<(f64, f64)> {
    let outcome = run_batch(
        params,
        mcfg,
        batch,
        spec,
        derive_seed(seed, 1),
        derive_seed(seed, 2),
        true,
    )?;
    let adv = outcome.adv_loss.unwrap_or(outcome.base_loss);
    Ok((outcome.base_loss, adv))
}

/// Mutable training state: parameters, optimizer accumulators, step count
/// and the stream of seeds. The parameter snapshot used for perturbation
/// computation is the live parameter set itself; nothing mutates it
/// between the clean pass and the perturbed pass inside one step, so the
/// snapshot equality holds by construction.
pub struct TrainState {
    pub params: Parameters,
    pub opt: AdaDelta,
    pub step: usize,
    rng: ChaCha20Rng,
}

impl TrainState {
    pub fn new(params: Parameters, seed: u64) -> Self {
        TrainState {
            params,
            opt: AdaDelta::new(),
            step: 0,
            rng: ChaCha20Rng::seed_from_u64(derive_seed(seed, 0x5EED)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub base_loss: f64,
    pub adv_loss: Option<f64>,
    pub total_loss: f64,
    pub grad_norm: f64,
}

/// One optimization step: clean pass, perturbations, perturbed pass, one
/// adaptive-delta update of the summed gradients under global norm
/// clipping.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    spec: &PerturbSpec,
) -> Result<StepOutcome> {
    let step_seed = state.rng.gen::<u64>();
    let noise_seed = state.rng.gen::<u64>();
    let outcome = run_batch(&state.params, mcfg, batch, spec, step_seed, noise_seed, true)
        .map_err(|e| match e {
            SrqaError::Numerical(msg) => {
                SrqaError::numerical(format!("step {}: {msg}", state.step))
            }
            other => other,
        })?;
    let mut grads = outcome.base_grads;
    if let Some(adv) = outcome.adv_grads {
        for (name, g) in adv {
            *grads.get_mut(&name).expect("gradient key mismatch") += &g;
        }
    }
    let grad_norm = clip_global_norm(&mut grads, tcfg.grad_clip);
    state.opt.step(&mut state.params, &grads, tcfg.learning_rate);
    state.step += 1;
    let total_loss = outcome.base_loss + outcome.adv_loss.unwrap_or(0.0);
    Ok(StepOutcome {
        base_loss: outcome.base_loss,
        adv_loss: outcome.adv_loss,
        total_loss,
        grad_norm,
    })
}
