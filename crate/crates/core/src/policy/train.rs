use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradient, PolicyHyper, PolicyParams, Workspace};
use crate::error::{GamError, Result};
use crate::model::SequenceModel;
use crate::sequence::{NatsTally, Sequence};

/// Supervised maximum-likelihood training of an autoregressive policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmTrainConfig {
    pub hidden: usize,
    pub max_gen_len: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Gradient-norm clip on the per-token mean gradient; `0` disables.
    pub clip_norm: f64,
    /// Validation evaluations without improvement before the step size halves.
    pub plateau_patience: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Smallest drop in CE(V), in nats per token, that counts as improvement.
    pub min_improvement: f64,
    pub max_epochs: usize,
    /// Validation runs every epoch, or every few epochs so that at least
    /// this many updates separate two evaluations.
    pub min_steps_between_evals: usize,
}

impl Default for AmTrainConfig {
    fn default() -> Self {
        AmTrainConfig {
            hidden: 32,
            max_gen_len: 60,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            clip_norm: 5.0,
            plateau_patience: 4,
            patience: 10,
            min_improvement: 1e-3,
            max_epochs: 400,
            min_steps_between_evals: 1,
        }
    }
}

impl AmTrainConfig {
    pub fn hyper(&self) -> PolicyHyper {
        PolicyHyper { hidden: self.hidden, max_gen_len: self.max_gen_len }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AmTrainReport {
    /// `(update step, CE(V) in nats per token)` at each evaluation.
    pub valid_trace: Vec<(usize, f64)>,
    pub best_valid_ce: f64,
    pub steps: usize,
    pub epochs: usize,
}

/// Heavy-ball SGD: `v ← μ v + g; θ ← θ + η v` (ascent on log-likelihood).
#[derive(Clone, Debug)]
pub struct Momentum {
    velocity: Gradient,
    momentum: f64,
}

impl Momentum {
    pub fn new(hyper: &PolicyHyper, momentum: f64) -> Self {
        Momentum { velocity: Gradient::zeros(hyper), momentum }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grad: &Gradient, learning_rate: f64) {
        for (v, g) in self.velocity.data.iter_mut().zip(&grad.data) {
            *v = self.momentum * *v + g;
        }
        params.ascend(&self.velocity, learning_rate);
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}

pub(crate) fn valid_ce<M: SequenceModel>(model: &M, data: &[Sequence]) -> f64 {
    let mut tally = NatsTally::default();
    for x in data {
        tally.add(-model.logprob(x), x);
    }
    tally.per_token()
}

/// Trains a fresh policy on `train`, early-stopping on cross-entropy over
/// `valid`; returns the best-on-validation parameters.
pub fn train_am<R: Rng + ?Sized>(
    train: &[Sequence],
    valid: &[Sequence],
    config: &AmTrainConfig,
    rng: &mut R,
) -> Result<(PolicyParams, AmTrainReport)> {
    let init = PolicyParams::init(config.hyper(), rng);
    train_from(init, train, valid, config, rng)
}

/// Same as [`train_am`] but starting from given parameters.
pub(crate) fn train_from<R: Rng + ?Sized>(
    mut params: PolicyParams,
    train: &[Sequence],
    valid: &[Sequence],
    config: &AmTrainConfig,
    rng: &mut R,
) -> Result<(PolicyParams, AmTrainReport)> {
    if train.is_empty() {
        return Err(GamError::EmptyDataset("training set"));
    }
    if valid.is_empty() {
        return Err(GamError::EmptyDataset("validation set"));
    }
    let hyper = *params.hyper();
    let batch = config.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let eval_every = config.min_steps_between_evals.div_ceil(steps_per_epoch).max(1);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = Gradient::zeros(&hyper);
    let mut ws = Workspace::default();
    let mut optimizer = Momentum::new(&hyper, config.momentum);
    let mut lr = config.learning_rate;

    let mut report = AmTrainReport::default();
    let mut best = params.clone();
    let mut best_ce = valid_ce(&params, valid);
    report.valid_trace.push((0, best_ce));
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grad.clear();
            let mut tokens = 0;
            let mut loglik = 0.0;
            for &i in chunk {
                loglik += params.accumulate_grad_logprob(&train[i], 1.0, &mut grad, &mut ws);
                tokens += train[i].tokens();
            }
            if !loglik.is_finite() || !grad.is_finite() {
                return Err(GamError::Diverged {
                    step: report.steps,
                    detail: format!("non-finite batch log-likelihood {loglik} at epoch {epoch}, lr {lr}"),
                });
            }
            grad.scale(1.0 / tokens as f64);
            if config.clip_norm > 0.0 {
                grad.clip_norm(config.clip_norm);
            }
            optimizer.step(&mut params, &grad, lr);
            report.steps += 1;
        }
        report.epochs = epoch;
        if epoch % eval_every != 0 && epoch != config.max_epochs {
            continue;
        }
        let ce = valid_ce(&params, valid);
        if !ce.is_finite() {
            return Err(GamError::Diverged {
                step: report.steps,
                detail: format!("validation cross-entropy {ce} at epoch {epoch}"),
            });
        }
        report.valid_trace.push((report.steps, ce));
        if ce < best_ce - config.min_improvement {
            best_ce = ce;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
            if stale % config.plateau_patience.max(1) == 0 {
                lr *= 0.5;
            }
        }
    }
    report.best_valid_ce = best_ce;
    Ok((best, report))
}
