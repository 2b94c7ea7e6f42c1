//! Training loop: Adam over the composed loss graph, cyclic beta/alpha
//! schedules, early stopping, and best-epoch restoration.
//!
//! Each epoch runs two passes over the same seeded mini-batches: an update
//! pass (forward, backward, Adam step per batch) and then an evaluation
//! pass against the frozen end-of-epoch weights. The evaluation pass is
//! what the history records and what early stopping monitors, so the
//! returned best-epoch weights reproduce the recorded minimum exactly when
//! replayed over the same batches.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::{batches, Dataset, PrepError};
use crate::losses::{
    self, cyclic_schedule, LossBreakdown, ScheduleConfig,
};
use crate::model::{CvaeModel, ModelDims, ModelError};
use crate::numerics::{Graph, NumericsError, Tensor};
use crate::seeds;

#[derive(Debug, Error)]
pub enum TrainError {
    /// Non-finite loss; reports where training blew up.
    #[error("numeric failure at epoch {epoch}, batch {batch}: {source}")]
    Numeric {
        epoch: usize,
        batch: usize,
        source: NumericsError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// The four model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Sparse contrastive CVAE: InfoNCE and L1 both active.
    #[serde(rename = "SCCVAE")]
    Sccvae,
    /// Sparsity only; the contrastive term is removed.
    #[serde(rename = "SCVAE")]
    Scvae,
    /// Contrastive only; the L1 penalty is removed.
    #[serde(rename = "CCVAE")]
    Ccvae,
    /// Like SCCVAE but alpha follows its own cyclic schedule.
    #[serde(rename = "SCCVAE-Calpha")]
    SccvaeCyclicAlpha,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Sccvae => "SCCVAE",
            Variant::Scvae => "SCVAE",
            Variant::Ccvae => "CCVAE",
            Variant::SccvaeCyclicAlpha => "SCCVAE-Calpha",
        }
    }
}

/// Cyclic schedule shape as written in config files; the total epoch count
/// comes from the owning [`TrainingConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleShape {
    pub cycles: usize,
    pub ratio: f64,
    pub max_value: f64,
}

impl Default for ScheduleShape {
    fn default() -> Self {
        Self {
            cycles: 4,
            ratio: 0.9,
            max_value: 1.0,
        }
    }
}

impl ScheduleShape {
    fn with_epochs(&self, total_epochs: usize) -> ScheduleConfig {
        ScheduleConfig::new(self.cycles, self.ratio, self.max_value, total_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub beta_schedule: ScheduleShape,
    /// Used only by the SCCVAE-Calpha variant.
    pub alpha_schedule: ScheduleShape,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Apply the L1 penalty to weights instead of sampled latents.
    pub l1_on_weights: bool,
    /// Monitor validation loss instead of training loss for early stopping.
    pub monitor_validation: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Sccvae,
            embedding_dim: 32,
            latent_dim: 64,
            tau: 0.5,
            alpha: 0.1,
            lambda: 1e-3,
            beta_schedule: ScheduleShape::default(),
            alpha_schedule: ScheduleShape::default(),
            epochs: 200,
            patience: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 42,
            l1_on_weights: false,
            monitor_validation: false,
        }
    }
}

impl TrainingConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
            .normalized()
    }

    /// Applies the variant constraints: SCVAE forces alpha to 0, CCVAE
    /// forces lambda to 0.
    pub fn normalized(mut self) -> Self {
        match self.variant {
            Variant::Scvae => self.alpha = 0.0,
            Variant::Ccvae => self.lambda = 0.0,
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Contract(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2".into());
        }
        if self.tau <= 0.0 {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.learning_rate <= 0.0 {
            return bad("learning rate must be positive".into());
        }
        if self.embedding_dim == 0 || self.latent_dim == 0 {
            return bad("embedding and latent sizes must be positive".into());
        }
        for (name, s) in [("beta", &self.beta_schedule), ("alpha", &self.alpha_schedule)] {
            if s.cycles == 0 || self.epochs < s.cycles {
                return bad(format!("{} schedule needs 1 <= cycles <= epochs", name));
            }
            if !(s.ratio > 0.0 && s.ratio <= 1.0) {
                return bad(format!("{} schedule ratio must lie in (0,1]", name));
            }
        }
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TrainError::Contract(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let cfg: TrainingConfig = serde_json::from_str(&text)
            .map_err(|e| TrainError::Contract(format!("malformed config: {}", e)))?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<(), TrainError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| TrainError::Contract(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| TrainError::Contract(format!("cannot write config: {}", e)))?;
        Ok(())
    }

    pub fn beta_for(&self, epoch: usize) -> f64 {
        cyclic_schedule(epoch, &self.beta_schedule.with_epochs(self.epochs))
    }

    pub fn alpha_for(&self, epoch: usize) -> f64 {
        match self.variant {
            Variant::Scvae => 0.0,
            Variant::SccvaeCyclicAlpha => {
                cyclic_schedule(epoch, &self.alpha_schedule.with_epochs(self.epochs))
            }
            _ => self.alpha,
        }
    }

    pub fn lambda_effective(&self) -> f64 {
        match self.variant {
            Variant::Ccvae => 0.0,
            _ => self.lambda,
        }
    }

    fn uses_contrastive(&self) -> bool {
        !matches!(self.variant, Variant::Scvae)
    }

    fn uses_l1(&self) -> bool {
        !matches!(self.variant, Variant::Ccvae)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<LossBreakdown>,
    pub stopped_early: bool,
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn best_loss(&self) -> f64 {
        self.epochs[self.best_epoch].total
    }
}

/// Trains the configured variant and returns the best-epoch model.
pub fn train(
    train_set: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainingConfig,
) -> Result<(CvaeModel, TrainingHistory), TrainError> {
    let config = config.clone().normalized();
    config.validate()?;
    let (non_risk, risk) = train_set.class_counts();
    if non_risk == 0 || risk == 0 {
        return Err(TrainError::Contract(
            "training set must contain both classes".into(),
        ));
    }

    let dims = ModelDims::new(
        train_set.cardinalities(),
        config.embedding_dim,
        config.latent_dim,
    )?;
    let mut model = CvaeModel::new(dims, config.seed);
    let mut adam = AdamState::new(&model.params);

    let monitored_set = if config.monitor_validation {
        validation.ok_or_else(|| {
            TrainError::Contract("monitor_validation set but no validation data given".into())
        })?
    } else {
        train_set
    };

    let mut history = TrainingHistory {
        epochs: Vec::new(),
        stopped_early: false,
        best_epoch: 0,
    };
    let mut best_total = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        // update pass
        run_epoch(&mut model, Some(&mut adam), train_set, &config, epoch, "eps")?;
        // evaluation pass against frozen end-of-epoch weights
        let domain = if config.monitor_validation { "val-eps" } else { "eps" };
        let breakdown = run_epoch(&mut model, None, monitored_set, &config, epoch, domain)?;
        history.epochs.push(breakdown);

        if breakdown.total < best_total {
            best_total = breakdown.total;
            history.best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    model.params = best_params;
    Ok((model, history))
}

/// Replays the evaluation pass for one epoch against the current weights.
/// This is exactly what [`train`] recorded in its history for that epoch.
pub fn evaluate_epoch_loss(
    model: &CvaeModel,
    dataset: &Dataset,
    config: &TrainingConfig,
    epoch: usize,
) -> Result<LossBreakdown, TrainError> {
    let mut scratch = model.clone();
    run_epoch(&mut scratch, None, dataset, config, epoch, "eps")
}

/// One pass over the epoch's mini-batches. With an Adam state this is the
/// update pass (gradients applied after every batch and per-batch losses
/// discarded); without one it only accumulates the mean loss breakdown.
fn run_epoch(
    model: &mut CvaeModel,
    mut adam: Option<&mut AdamState>,
    dataset: &Dataset,
    config: &TrainingConfig,
    epoch: usize,
    eps_domain: &str,
) -> Result<LossBreakdown, TrainError> {
    let beta = config.beta_for(epoch);
    let alpha = config.alpha_for(epoch);
    let lambda = config.lambda_effective();
    let blocks = batches(dataset.n_rows(), config.batch_size, config.seed, epoch as u64);

    let mut sums = LossBreakdown {
        ce: 0.0,
        kld: 0.0,
        nce: 0.0,
        l1: 0.0,
        beta,
        alpha,
        lambda,
        total: 0.0,
    };
    for (batch_idx, block) in blocks.iter().enumerate() {
        let rows: Vec<Vec<usize>> = block.iter().map(|&i| dataset.rows[i].clone()).collect();
        let labels: Vec<u8> = block.iter().map(|&i| dataset.labels[i]).collect();
        let n = rows.len();

        let mut g = Graph::new();
        let nodes = model.forward_nodes(
            &mut g,
            &rows,
            &labels,
            &draw_eps(config.seed, eps_domain, epoch, batch_idx, 0, n, config.latent_dim),
        )?;
        let ce = losses::reconstruction_ce_node(&mut g, &nodes.logits, &rows)
            .map_err(|e| numeric_err(e, epoch, batch_idx))?;
        let kld = losses::kld_standard_node(&mut g, nodes.mu, nodes.logvar, n)
            .map_err(|e| numeric_err(e, epoch, batch_idx))?;
        let nce = if config.uses_contrastive() && n >= 2 {
            let eps2 = draw_eps(config.seed, eps_domain, epoch, batch_idx, 1, n, config.latent_dim);
            let positives = model
                .reparameterize_nodes(&mut g, nodes.mu, nodes.logvar, &eps2)
                .map_err(|e| numeric_err(e, epoch, batch_idx))?;
            Some(
                losses::info_nce_node(&mut g, nodes.z, positives, config.tau)
                    .map_err(|e| numeric_err(e, epoch, batch_idx))?,
            )
        } else {
            None
        };
        let l1 = if config.uses_l1() {
            let node = if config.l1_on_weights {
                weight_l1_node(&mut g, model).map_err(|e| numeric_err(e, epoch, batch_idx))?
            } else {
                losses::l1_latent_node(&mut g, nodes.z, n)
                    .map_err(|e| numeric_err(e, epoch, batch_idx))?
            };
            Some(node)
        } else {
            None
        };
        let total = losses::total_loss_node(&mut g, ce, kld, nce, l1, beta, alpha, lambda)
            .map_err(|e| numeric_err(e, epoch, batch_idx))?;

        g.forward(&model.params)
            .map_err(|e| numeric_err(e, epoch, batch_idx))?;

        if let Some(adam) = adam.as_deref_mut() {
            g.backward(total, &mut model.params)
                .map_err(|e| numeric_err(e, epoch, batch_idx))?;
            adam_step(&mut model.params, adam, config.learning_rate);
        } else {
            let b = losses::total_loss(
                g.value(ce).item(),
                g.value(kld).item(),
                nce.map_or(0.0, |id| g.value(id).item()),
                l1.map_or(0.0, |id| g.value(id).item()),
                lambda,
                beta,
                alpha,
            );
            sums.ce += b.ce;
            sums.kld += b.kld;
            sums.nce += b.nce;
            sums.l1 += b.l1;
            sums.total += b.total;
        }
    }

    let k = blocks.len().max(1) as f64;
    Ok(LossBreakdown {
        ce: sums.ce / k,
        kld: sums.kld / k,
        nce: sums.nce / k,
        l1: sums.l1 / k,
        beta,
        alpha,
        lambda,
        total: sums.total / k,
    })
}

fn numeric_err(source: NumericsError, epoch: usize, batch: usize) -> TrainError {
    TrainError::Numeric {
        epoch,
        batch,
        source,
    }
}

fn draw_eps(
    seed: u64,
    domain: &str,
    epoch: usize,
    batch: usize,
    draw: u64,
    n: usize,
    latent: usize,
) -> Tensor {
    let mut rng = seeds::derive_rng(seed, domain, &[epoch as u64, batch as u64, draw]);
    let data = (0..n * latent)
        .map(|_| seeds::standard_normal(&mut rng))
        .collect();
    Tensor::matrix(n, latent, data).expect("sized data")
}

/// Sum of L1 norms over weight matrices and embedding tables (biases
/// excluded), for the `l1_on_weights` ablation switch.
fn weight_l1_node(
    g: &mut Graph,
    model: &CvaeModel,
) -> Result<crate::numerics::NodeId, NumericsError> {
    let mut acc = None;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = &model.params.get(id).name;
        if !(name.ends_with(".w") || name.starts_with("embed.")) {
            continue;
        }
        let node = g.param(&model.params, id);
        let norm = g.l1_norm(node);
        acc = Some(match acc {
            None => norm,
            Some(prev) => g.add(prev, norm)?,
        });
    }
    acc.ok_or_else(|| NumericsError::Contract("model has no weight parameters".into()))
}
