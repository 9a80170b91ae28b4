//! Training-2: turn a potential `P` into a normalized policy π_θ.
//!
//! * [`distill`] draws exact samples from `p_λ` by rejection and fits a
//!   fresh policy to them.
//! * [`dpg_off`] is off-policy: episodes come from a frozen proposal
//!   `q`, each weighted by `P(x)/q(x)`, and `q` is replaced by π_θ only when
//!   π_θ has lower cross-entropy on the validation set.
//! * [`dpg_on`] uses the current π_θ as its own proposal.
//! * [`reinforce_pg`] maximizes `E_π R(x)` with `R = P`; it is the baseline
//!   that collapses onto a handful of high-potential strings.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ebm::{rejection_sample, GamPotential, RejectionOptions};
use crate::error::{GamError, Result};
use crate::model::SequenceSampler;
use crate::policy::{train_am, valid_ce, AmTrainConfig, AmTrainReport, Gradient, Momentum, PolicyParams, Workspace};
use crate::sequence::Sequence;
use crate::truth::{white_noise_filter_logpotential, MotifAutomaton};

/// An unnormalized log-potential over sequences; `-∞` marks hard zeros.
pub struct PotentialHandle<'a> {
    tag: String,
    log_potential: Box<dyn Fn(&Sequence) -> f64 + Send + Sync + 'a>,
}

impl<'a> PotentialHandle<'a> {
    pub fn new(tag: impl Into<String>, f: impl Fn(&Sequence) -> f64 + Send + Sync + 'a) -> Self {
        PotentialHandle { tag: tag.into(), log_potential: Box::new(f) }
    }

    pub fn gam(gp: &'a GamPotential) -> Self {
        PotentialHandle::new("gam", move |x| gp.log_potential(x))
    }

    /// `wn(x)·F(x)`: white noise over length-`n` strings filtered by the motif.
    pub fn white_noise_filter(automaton: MotifAutomaton, n: usize) -> PotentialHandle<'static> {
        PotentialHandle::new("wn_f", move |x| white_noise_filter_logpotential(&automaton, n, x))
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn log_potential(&self, x: &Sequence) -> f64 {
        (self.log_potential)(x)
    }
}

impl fmt::Debug for PotentialHandle<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialHandle").field("tag", &self.tag).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Training2Method {
    Distill,
    DpgOff,
    DpgOn,
    Pg,
}

impl Training2Method {
    pub const ALL: [Training2Method; 4] =
        [Training2Method::Distill, Training2Method::DpgOff, Training2Method::DpgOn, Training2Method::Pg];

    pub fn name(&self) -> &'static str {
        match self {
            Training2Method::Distill => "distill",
            Training2Method::DpgOff => "dpg_off",
            Training2Method::DpgOn => "dpg_on",
            Training2Method::Pg => "pg",
        }
    }
}

impl fmt::Display for Training2Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Training2Method {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        Training2Method::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "dpg" && *m == Training2Method::DpgOff))
            .ok_or_else(|| GamError::Parse {
                what: "training-2 method",
                text: s.into(),
                reason: "expected one of distill, dpg_off, dpg_on, pg".into(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgReward {
    /// `R(x) = P(x)`, rescaled per batch by its maximum.
    Potential,
    /// `R(x) = log P(x)`; episodes with `P(x) = 0` are skipped.
    LogPotential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpgConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Gradient-norm clip on each per-token batch gradient; `0` disables.
    pub clip_norm: f64,
    /// Cap on normalized importance weights; `0` disables (the default).
    pub weight_clip: f64,
    pub pg_reward: PgReward,
}

impl Default for DpgConfig {
    fn default() -> Self {
        DpgConfig {
            iterations: 150,
            episodes_per_iter: 5000,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            clip_norm: 5.0,
            weight_clip: 0.0,
            pg_reward: PgReward::Potential,
        }
    }
}

/// One line of the Training-2 trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub ce_v_pi: f64,
    pub ce_v_q: f64,
    pub swapped: bool,
    /// Mean raw weight `P(x)/q(x)` (an estimate of the partition function).
    pub mean_weight: f64,
    pub ess: f64,
    pub episodes: usize,
    pub zero_weight: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Training2Report {
    pub iterations: Vec<IterationRecord>,
    pub best_ce_v: f64,
    pub swaps: usize,
}

impl Training2Report {
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.iterations {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_config(config: &DpgConfig, valid: &[Sequence]) -> Result<()> {
    if valid.is_empty() {
        return Err(GamError::EmptyDataset("validation set"));
    }
    if config.batch_size == 0 || config.episodes_per_iter == 0 {
        return Err(GamError::config("batch size and episodes per iteration must be positive"));
    }
    Ok(())
}

/// Log-sum-exp over the finite entries; `-∞` when there are none.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Applies `Σ w_i ∇ log π(x_i)` over one batch as a per-token mean step.
struct Stepper {
    grad: Gradient,
    ws: Workspace,
    optimizer: Momentum,
    steps: usize,
}

impl Stepper {
    fn new(params: &PolicyParams, momentum: f64) -> Self {
        Stepper {
            grad: Gradient::zeros(params.hyper()),
            ws: Workspace::default(),
            optimizer: Momentum::new(params.hyper(), momentum),
            steps: 0,
        }
    }

    fn apply(&mut self, params: &mut PolicyParams, batch: &[(&Sequence, f64)], config: &DpgConfig) -> Result<()> {
        self.grad.clear();
        let tokens: usize = batch.iter().map(|(x, _)| x.tokens()).sum();
        let mut any = false;
        for &(x, w) in batch {
            if w != 0.0 {
                params.accumulate_grad_logprob(x, w, &mut self.grad, &mut self.ws);
                any = true;
            }
        }
        if !any {
            return Ok(());
        }
        if !self.grad.is_finite() {
            return Err(GamError::Diverged { step: self.steps, detail: "non-finite policy gradient".into() });
        }
        self.grad.scale(1.0 / tokens.max(1) as f64);
        if config.clip_norm > 0.0 {
            self.grad.clip_norm(config.clip_norm);
        }
        self.optimizer.step(params, &self.grad, config.learning_rate);
        self.steps += 1;
        if !params.is_finite() {
            return Err(GamError::Diverged { step: self.steps, detail: "non-finite policy parameters".into() });
        }
        Ok(())
    }
}

/// Normalizes log-weights by their log-mean-exp and optionally caps them.
/// Returns `(weights, log mean weight, ESS)`.
fn normalize_weights(log_w: &[f64], clip: f64) -> (Vec<f64>, f64, f64) {
    let n = log_w.len() as f64;
    let log_mean = log_sum_exp(log_w) - n.ln();
    if log_mean == f64::NEG_INFINITY {
        return (vec![0.0; log_w.len()], log_mean, 0.0);
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - log_mean).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if clip > 0.0 {
        w.iter_mut().for_each(|v| *v = v.min(clip));
    }
    (w, log_mean, s * s / s2)
}

/// Off-policy DPG. `q0` serves as the first proposal and as
/// the starting point of π_θ; the best-on-validation π_θ is returned.
pub fn dpg_off<R: Rng + ?Sized>(
    potential: &PotentialHandle<'_>,
    q0: &PolicyParams,
    valid: &[Sequence],
    config: &DpgConfig,
    rng: &mut R,
) -> Result<(PolicyParams, Training2Report)> {
    check_config(config, valid)?;
    let mut pi = q0.clone();
    let mut q = q0.clone();
    let mut ce_q = valid_ce(&q, valid);
    let mut best = (ce_q, pi.clone());
    let mut stepper = Stepper::new(&pi, config.momentum);
    let mut report = Training2Report::default();

    for iter in 0..config.iterations {
        let started = Instant::now();
        let mut episodes = Vec::with_capacity(config.episodes_per_iter);
        let mut log_w = Vec::with_capacity(config.episodes_per_iter);
        for _ in 0..config.episodes_per_iter {
            let (x, log_q) = q.sample_scored(rng);
            log_w.push(potential.log_potential(&x) - log_q);
            episodes.push(x);
        }
        let zero_weight = log_w.iter().filter(|l| **l == f64::NEG_INFINITY).count();
        let (w, log_mean, ess) = normalize_weights(&log_w, config.weight_clip);
        let weighted: Vec<(&Sequence, f64)> = episodes.iter().zip(w).collect();
        for batch in weighted.chunks(config.batch_size) {
            stepper.apply(&mut pi, batch, config)?;
        }

        let ce_pi = valid_ce(&pi, valid);
        if !ce_pi.is_finite() {
            return Err(GamError::Diverged { step: stepper.steps, detail: format!("CE(V, π) = {ce_pi} at iteration {iter}") });
        }
        let swapped = ce_pi < ce_q;
        if swapped {
            q = pi.clone();
            ce_q = ce_pi;
            report.swaps += 1;
        }
        if ce_pi < best.0 {
            best = (ce_pi, pi.clone());
        }
        report.iterations.push(IterationRecord {
            iter,
            ce_v_pi: ce_pi,
            ce_v_q: ce_q,
            swapped,
            mean_weight: log_mean.exp(),
            ess,
            episodes: episodes.len(),
            zero_weight,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    report.best_ce_v = best.0;
    Ok((best.1, report))
}

/// On-policy DPG: every batch is drawn from the current π_θ and weighted by
/// `P(x)/π_θ(x)`, normalized within the batch.
pub fn dpg_on<R: Rng + ?Sized>(
    potential: &PotentialHandle<'_>,
    theta0: &PolicyParams,
    valid: &[Sequence],
    config: &DpgConfig,
    rng: &mut R,
) -> Result<(PolicyParams, Training2Report)> {
    check_config(config, valid)?;
    let mut pi = theta0.clone();
    let mut best = (valid_ce(&pi, valid), pi.clone());
    let mut stepper = Stepper::new(&pi, config.momentum);
    let mut report = Training2Report::default();
    let batches = config.episodes_per_iter.div_ceil(config.batch_size);

    for iter in 0..config.iterations {
        let started = Instant::now();
        let (mut log_mean_sum, mut ess_sum, mut zero_weight) = (0.0, 0.0, 0);
        for _ in 0..batches {
            let mut xs = Vec::with_capacity(config.batch_size);
            let mut log_w = Vec::with_capacity(config.batch_size);
            for _ in 0..config.batch_size {
                let (x, log_pi) = pi.sample_scored(rng);
                log_w.push(potential.log_potential(&x) - log_pi);
                xs.push(x);
            }
            zero_weight += log_w.iter().filter(|l| **l == f64::NEG_INFINITY).count();
            let (w, log_mean, ess) = normalize_weights(&log_w, config.weight_clip);
            log_mean_sum += log_mean.exp();
            ess_sum += ess;
            let batch: Vec<(&Sequence, f64)> = xs.iter().zip(w).collect();
            stepper.apply(&mut pi, &batch, config)?;
        }
        let ce_pi = valid_ce(&pi, valid);
        if !ce_pi.is_finite() {
            return Err(GamError::Diverged { step: stepper.steps, detail: format!("CE(V, π) = {ce_pi} at iteration {iter}") });
        }
        if ce_pi < best.0 {
            best = (ce_pi, pi.clone());
        }
        report.iterations.push(IterationRecord {
            iter,
            ce_v_pi: ce_pi,
            ce_v_q: ce_pi,
            swapped: false,
            mean_weight: log_mean_sum / batches as f64,
            ess: ess_sum / batches as f64,
            episodes: batches * config.batch_size,
            zero_weight,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    report.best_ce_v = best.0;
    Ok((best.1, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseDiagnostics {
    pub mean_length: f64,
    pub distinct: usize,
    pub samples: usize,
}

impl CollapseDiagnostics {
    pub fn measure<S: SequenceSampler, R: Rng + ?Sized>(policy: &S, samples: usize, rng: &mut R) -> Self {
        let mut seen = HashSet::new();
        let mut total = 0usize;
        for _ in 0..samples {
            let x = policy.sample(rng);
            total += x.len();
            seen.insert(x);
        }
        CollapseDiagnostics { mean_length: total as f64 / samples.max(1) as f64, distinct: seen.len(), samples }
    }
}

/// REINFORCE with reward `P(x)` (or `log P(x)`), no baseline. Returns the
/// final policy and the per-iteration record; collapse is measured by the
/// caller with [`CollapseDiagnostics`].
pub fn reinforce_pg<R: Rng + ?Sized>(
    potential: &PotentialHandle<'_>,
    theta0: &PolicyParams,
    valid: &[Sequence],
    config: &DpgConfig,
    rng: &mut R,
) -> Result<(PolicyParams, Training2Report)> {
    check_config(config, valid)?;
    let mut pi = theta0.clone();
    let mut stepper = Stepper::new(&pi, config.momentum);
    let mut report = Training2Report::default();
    let batches = config.episodes_per_iter.div_ceil(config.batch_size);
    let mut best_ce = f64::INFINITY;

    for iter in 0..config.iterations {
        let started = Instant::now();
        let mut zero_weight = 0;
        for _ in 0..batches {
            let xs: Vec<Sequence> = (0..config.batch_size).map(|_| pi.sample(rng)).collect();
            let log_p: Vec<f64> = xs.iter().map(|x| potential.log_potential(x)).collect();
            zero_weight += log_p.iter().filter(|l| **l == f64::NEG_INFINITY).count();
            let rewards: Vec<f64> = match config.pg_reward {
                PgReward::Potential => {
                    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        vec![0.0; xs.len()]
                    } else {
                        log_p.iter().map(|l| (l - max).exp()).collect()
                    }
                }
                PgReward::LogPotential => log_p.iter().map(|l| if l.is_finite() { *l } else { 0.0 }).collect(),
            };
            let batch: Vec<(&Sequence, f64)> = xs.iter().zip(rewards).collect();
            stepper.apply(&mut pi, &batch, config)?;
        }
        let ce_pi = valid_ce(&pi, valid);
        best_ce = best_ce.min(ce_pi);
        report.iterations.push(IterationRecord {
            iter,
            ce_v_pi: ce_pi,
            ce_v_q: ce_pi,
            swapped: false,
            mean_weight: f64::NAN,
            ess: f64::NAN,
            episodes: batches * config.batch_size,
            zero_weight,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    report.best_ce_v = best_ce;
    Ok((pi, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillReport {
    pub samples: usize,
    pub proposals: usize,
    pub acceptance_rate: f64,
    pub training: AmTrainReport,
}

/// Distillation from any exact sampler: `k` draws, then supervised training
/// of a fresh policy with early stopping on `valid`.
pub fn distill_from_sampler<S: SequenceSampler, R: Rng + ?Sized>(
    sampler: &S,
    k: usize,
    valid: &[Sequence],
    config: &AmTrainConfig,
    rng: &mut R,
) -> Result<(PolicyParams, DistillReport)> {
    let samples: Vec<Sequence> = (0..k).map(|_| sampler.sample(rng)).collect();
    let (pi, training) = train_am(&samples, valid, config, rng)?;
    Ok((pi, DistillReport { samples: k, proposals: k, acceptance_rate: 1.0, training }))
}

/// Distillation of `p_λ`, sampled exactly by rejection from `r`.
pub fn distill<R: Rng + ?Sized>(
    gp: &GamPotential,
    k: usize,
    valid: &[Sequence],
    config: &AmTrainConfig,
    rejection: &RejectionOptions,
    rng: &mut R,
) -> Result<(PolicyParams, DistillReport)> {
    let draw = rejection_sample(gp, gp.log_beta(), k, rejection, rng)?;
    let (pi, training) = train_am(&draw.samples, valid, config, rng)?;
    Ok((
        pi,
        DistillReport { samples: k, proposals: draw.proposals, acceptance_rate: draw.acceptance_rate, training },
    ))
}

#[cfg(test)]
mod tests;
