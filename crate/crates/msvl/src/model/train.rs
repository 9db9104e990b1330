//! Seeded training: minibatch cross-entropy with the adaptive-moment
//! optimizer, per-epoch validation AUROC, best-weights tracking, and early
//! stopping.
//!
//! Batches evaluate across samples in parallel; gradients reduce in sample
//! order, so a run is bitwise reproducible for a given seed regardless of
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::metrics::{auroc, ScoredSample};
use crate::nn::{AdamState, Graph, Tensor};
use crate::recon::{BandImage, LinearRgbImage};
use crate::spectral::SpectralCube;
use crate::util::{derive_seed, rng_from_seed, shuffle};

use super::{Arch, ModelConfig, ModelInput, ModelParams};

/// One labeled training or validation case.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub input: SampleInput,
    pub label: bool,
    pub group: Option<String>,
}

/// Owned model input.
#[derive(Debug, Clone)]
pub enum SampleInput {
    Cube(SpectralCube),
    Band(BandImage),
    Rgb(LinearRgbImage),
}

impl SampleInput {
    pub fn as_model_input(&self) -> ModelInput<'_> {
        match self {
            SampleInput::Cube(c) => ModelInput::Cube(c),
            SampleInput::Band(b) => ModelInput::Band(b),
            SampleInput::Rgb(r) => ModelInput::Rgb(r),
        }
    }
}

/// Training hyperparameters and model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation AUROC improvement.
    pub patience: usize,
    /// View index for the `single_band` architecture.
    pub band_index: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::GnnMsvl,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            patience: 5,
            band_index: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::Format(format!("train config parse failed: {e}")))
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

/// Trains a model and returns the weights with the best validation AUROC
/// plus the per-epoch history.
pub fn train(
    config: &TrainConfig,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    topology: Option<&GraphTopology>,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    for set in [train_set, val_set] {
        if !set.iter().any(|s| s.label) || !set.iter().any(|s| !s.label) {
            return Err(Error::InvalidInput("each split needs both classes present".into()));
        }
    }
    {
        let train_ids: std::collections::HashSet<&str> =
            train_set.iter().map(|s| s.id.as_str()).collect();
        if let Some(shared) = val_set.iter().find(|s| train_ids.contains(s.id.as_str())) {
            return Err(Error::InvalidInput(format!(
                "sample {:?} appears in both train and validation splits",
                shared.id
            )));
        }
    }

    let mut params = ModelParams::init(
        config.arch,
        config.model.clone(),
        topology.cloned(),
        config.band_index,
        config.seed,
    )?;
    let mut history = Vec::new();
    if config.epochs == 0 {
        return Ok((params, history));
    }

    let mut optimizer = AdamState::new(params.tensors(), config.learning_rate, 0.9, 0.999, 1e-8);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut best_epoch = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = rng_from_seed(derive_seed(config.seed, 0xE90C + epoch as u64));
        shuffle(&mut rng, &mut order);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&idx| sample_loss_and_grads(&params, &train_set[idx]))
                .collect();

            // Reduce in batch order (fixed regardless of scheduling).
            let mut grads: Option<Vec<Tensor>> = None;
            for result in results {
                let (loss, sample_grads) = result.map_err(|e| annotate_epoch(e, epoch))?;
                epoch_loss += loss;
                match &mut grads {
                    None => grads = Some(sample_grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&sample_grads) {
                            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            optimizer.step(params.tensors_mut(), &grads)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NumericFault(format!(
                "training loss became non-finite at epoch {epoch}"
            )));
        }

        let val_auroc = validation_auroc(&params, val_set)?;
        history.push(EpochStats { epoch, train_loss, val_auroc });

        if best.as_ref().map_or(true, |(b, _)| val_auroc > *b) {
            best = Some((val_auroc, params.clone()));
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, history))
}

fn annotate_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NumericFault(msg) => Error::NumericFault(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

fn sample_loss_and_grads(
    params: &ModelParams,
    sample: &LabeledSample,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let (logits, ids) = params.build_logits(&mut g, sample.input.as_model_input())?;
    let loss = g.cross_entropy_loss(logits, usize::from(sample.label))?;
    g.eval_with_grads(loss, &ids)
}

/// Scores the validation split in parallel (collection preserves order) and
/// computes the AUROC.
pub fn validation_auroc(params: &ModelParams, val_set: &[LabeledSample]) -> Result<f64> {
    let scores: Vec<Result<f64>> = val_set
        .par_iter()
        .map(|s| params.predict(s.input.as_model_input()))
        .collect();
    let mut samples = Vec::with_capacity(val_set.len());
    for (score, sample) in scores.into_iter().zip(val_set) {
        samples.push(ScoredSample::new(score?, sample.label)?);
    }
    auroc(&samples)
}
