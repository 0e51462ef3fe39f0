use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::TrainConfig;
use super::loss::{sample_loss, LossParts, TrainItem};
use super::optim::AdamW;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::model::GosModel;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub grad_norm: f64,
    pub loss: LossParts,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<StepLog>,
    pub steps: usize,
    pub loss_means: LossParts,
    /// Sidecar of the final checkpoint, when a directory was given.
    pub checkpoint: Option<PathBuf>,
}

pub fn steps_per_epoch(num_items: usize, batch: usize) -> usize {
    num_items.div_ceil(batch)
}

/// Batches of one epoch: a seeded Fisher-Yates permutation cut into chunks.
pub fn epoch_batches(num_items: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_items).collect();
    let mut rng = SplitMix64::for_item(seed, epoch as u64);
    for i in (1..num_items).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Mean objective over `items` without tracking gradients.
pub fn dataset_loss(model: &GosModel, items: &[TrainItem], cfg: &TrainConfig) -> Result<LossParts> {
    let parts = items
        .iter()
        .map(|it| {
            let g = Graph::new();
            let cx = model.params.bind_frozen(&g);
            sample_loss(model, &cx, it, cfg).map(|(_, p)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossParts::mean(&parts))
}

/// Batch loss and parameter gradients for one step.
fn batch_gradients(model: &GosModel, items: &[&TrainItem], cfg: &TrainConfig) -> Result<(LossParts, Vec<Option<Tensor>>)> {
    let g = Graph::new();
    let cx = model.params.bind(&g);
    let mut terms = Vec::with_capacity(items.len());
    let mut parts = Vec::with_capacity(items.len());
    for it in items {
        let (l, p) = sample_loss(model, &cx, it, cfg)?;
        terms.push((1.0 / items.len() as f64, l));
        parts.push(p);
    }
    let total = g.linear_combination(&terms);
    let mut grads = g.backward(total);
    let grads = cx.param_vars().iter().map(|&v| grads.take(v)).collect();
    Ok((LossParts::mean(&parts), grads))
}

/// Deterministic single-threaded training with the ground-truth head box fed
/// to the gaze branch. On divergence (batch loss above the configured
/// threshold or non-finite) the pre-step parameters are checkpointed as
/// `last_good` and an error is returned.
pub fn train(model: &mut GosModel, items: &[TrainItem], cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if model.config != cfg.model_config() {
        return Err(Error::Config("model does not match the training configuration".into()));
    }
    if let Some(init) = &cfg.init_from {
        let (warm, _) = load_checkpoint(init)?;
        if warm.config != model.config {
            return Err(Error::Config(format!("{} has a different architecture", init.display())));
        }
        model.params = warm.params;
        log::info!("initialized from {}", init.display());
    }
    let per_epoch = steps_per_epoch(items.len(), cfg.batch);
    let total_steps = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let mut opt = AdamW::new(&model.params, cfg.optimizer.clone());
    let mut history = Vec::with_capacity(total_steps);
    let mut schedule = Vec::new();
    for step in 0..total_steps {
        let epoch = step / per_epoch;
        if step % per_epoch == 0 {
            schedule = epoch_batches(items.len(), cfg.batch, cfg.seed, epoch);
        }
        let batch: Vec<&TrainItem> = schedule[step % per_epoch].iter().map(|&i| &items[i]).collect();
        let outcome = batch_gradients(model, &batch, cfg).and_then(|(parts, grads)| {
            if parts.total.is_finite() && parts.total <= cfg.divergence_threshold {
                Ok((parts, grads))
            } else {
                Err(Error::Diverged { step, loss: parts.total })
            }
        });
        let (parts, grads) = match outcome {
            Ok(v) => v,
            Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => {
                if let Some(dir) = checkpoint_dir {
                    let means = running_means(&history, per_epoch);
                    let path = save_checkpoint(dir, "last_good", model, cfg, step, means)?;
                    log::error!("step {step}: {e}; last good parameters in {}", path.display());
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let grad_norm = opt.update(&mut model.params, &grads, cfg.lr_at(step, total_steps));
        let b = &parts.det_breakdown;
        log::info!(
            "step {step} epoch {epoch} total {:.5} det {:.5} (ce {:.4} l1 {:.4} giou {:.4} bce {:.4} dice {:.4} head_ce {:.4} head_l1 {:.4} head_giou {:.4}) dir {:.5} gaze {:.6} eng {:.5} |g| {grad_norm:.4}",
            parts.total, parts.det, b.obj_ce, b.obj_l1, b.obj_giou, b.mask_bce, b.mask_dice, b.head_ce, b.head_l1, b.head_giou,
            parts.dir, parts.gaze, parts.eng
        );
        history.push(StepLog { step, epoch, grad_norm, loss: parts });
    }
    let loss_means = running_means(&history, per_epoch);
    let checkpoint = match checkpoint_dir {
        Some(dir) => Some(save_checkpoint(dir, "final", model, cfg, total_steps, loss_means.clone())?),
        None => None,
    };
    Ok(TrainOutcome { history, steps: total_steps, loss_means, checkpoint })
}

fn running_means(history: &[StepLog], window: usize) -> LossParts {
    let start = history.len().saturating_sub(window);
    let recent: Vec<LossParts> = history[start..].iter().map(|s| s.loss.clone()).collect();
    LossParts::mean(&recent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_batches_cover_every_item_once() {
        let b = epoch_batches(7, 2, 3, 0);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(7, 2, 3, 0));
        assert_ne!(epoch_batches(8, 8, 3, 0), epoch_batches(8, 8, 3, 1));
    }
}
