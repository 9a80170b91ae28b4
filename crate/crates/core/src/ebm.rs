//! The GAM potential `P_λ(x) = r(x) · exp⟨λ, φ(x)⟩` and Training-1.
//!
//! Every estimator here only needs draws from `r` and the log-linear
//! exponent `⟨λ, φ(x)⟩`: the `r(x)` factor cancels in importance weights,
//! rejection ratios and the partition function `Z = E_r exp⟨λ, φ⟩`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::features::{dot, FeatureMask, FeatureSet};
use crate::policy::PolicyParams;
use crate::sequence::{parse_bits, Sequence};

#[derive(Clone, Debug)]
pub struct GamPotential {
    r: PolicyParams,
    features: FeatureSet,
    lambda: Vec<f64>,
}

impl GamPotential {
    pub fn new(r: PolicyParams, features: FeatureSet, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != features.dim() {
            return Err(GamError::config(format!(
                "λ has {} entries but mask {} activates {} features",
                lambda.len(),
                features.mask(),
                features.dim()
            )));
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(GamError::Numerical(format!("non-finite λ {lambda:?}")));
        }
        Ok(GamPotential { r, features, lambda })
    }

    /// `λ = 0`, i.e. `P_λ = r`.
    pub fn neutral(r: PolicyParams, features: FeatureSet) -> Self {
        let lambda = vec![0.0; features.dim()];
        GamPotential { r, features, lambda }
    }

    pub fn r(&self) -> &PolicyParams {
        &self.r
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// The exponent `⟨λ, φ(x)⟩`.
    pub fn log_weight(&self, x: &Sequence) -> f64 {
        dot(&self.lambda, &self.features.phi(x))
    }

    pub fn log_potential(&self, x: &Sequence) -> f64 {
        self.r.logprob(x) + self.log_weight(x)
    }

    /// Bound `ln β` on the exponent, valid for everything `r` can emit.
    pub fn log_beta(&self) -> f64 {
        log_upper_bound_beta(&self.lambda, &self.features, self.r.hyper().max_gen_len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub ess: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogZEstimate {
    pub log_z: f64,
    pub stderr: f64,
}

/// Feature vectors of a batch of draws from `r`, stored row-major.
#[derive(Clone, Debug)]
pub struct ProposalPool {
    dim: usize,
    phi: Vec<f64>,
}

impl ProposalPool {
    pub fn draw<R: Rng + ?Sized>(r: &PolicyParams, features: &FeatureSet, n: usize, rng: &mut R) -> Self {
        let dim = features.dim();
        let mut phi = Vec::with_capacity(n * dim);
        let mut buf = Vec::with_capacity(dim);
        for _ in 0..n {
            let x = r.sample(rng);
            features.phi_into(&x, &mut buf);
            phi.extend_from_slice(&buf);
        }
        ProposalPool { dim, phi }
    }

    pub fn from_sequences(features: &FeatureSet, xs: &[Sequence]) -> Self {
        let dim = features.dim();
        let mut phi = Vec::with_capacity(xs.len() * dim);
        let mut buf = Vec::with_capacity(dim);
        for x in xs {
            features.phi_into(x, &mut buf);
            phi.extend_from_slice(&buf);
        }
        ProposalPool { dim, phi }
    }

    pub fn len(&self) -> usize {
        self.phi.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.dim..(i + 1) * self.dim]
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.phi.chunks_exact(self.dim.max(1))
    }

    pub fn log_weights(&self, lambda: &[f64]) -> Vec<f64> {
        assert_eq!(lambda.len(), self.dim);
        if self.dim == 0 {
            return vec![0.0; self.len()];
        }
        self.rows().map(|row| dot(lambda, row)).collect()
    }

    /// Self-normalized importance-sampling estimate of `E_{p_λ} φ`.
    pub fn snis(&self, lambda: &[f64]) -> Result<MomentEstimate> {
        snis_from_log_weights(&self.log_weights(lambda), &self.phi, self.dim)
    }

    /// `ln E_r exp⟨λ, φ⟩` by log-mean-exp.
    pub fn log_z(&self, lambda: &[f64]) -> Result<LogZEstimate> {
        log_mean_exp(&self.log_weights(lambda))
    }

    /// Runs one accept/reject pass over the pool and returns the accepted
    /// rows' mean feature vector with the acceptance rate.
    pub fn rejection_moment<R: Rng + ?Sized>(
        &self,
        lambda: &[f64],
        log_beta: f64,
        floor: f64,
        rng: &mut R,
    ) -> Result<(MomentEstimate, f64)> {
        let mut sum = vec![0.0; self.dim];
        let mut sum_sq = vec![0.0; self.dim];
        let mut accepted = 0usize;
        for (row, s) in self.rows().zip(self.log_weights(lambda)) {
            debug_assert!(s <= log_beta + 1e-9, "β bound violated: {s} > {log_beta}");
            if accept(s - log_beta, rng) {
                accepted += 1;
                for k in 0..self.dim {
                    sum[k] += row[k];
                    sum_sq[k] += row[k] * row[k];
                }
            }
        }
        let n = self.len();
        let rate = accepted as f64 / n.max(1) as f64;
        if accepted == 0 || rate < floor {
            return Err(GamError::RejectionInfeasible { rate, probes: n, floor });
        }
        let k = accepted as f64;
        let value: Vec<f64> = sum.iter().map(|s| s / k).collect();
        let stderr = value
            .iter()
            .zip(&sum_sq)
            .map(|(m, sq)| ((sq / k - m * m).max(0.0) / k).sqrt())
            .collect();
        Ok((MomentEstimate { value, stderr, n_samples: accepted, ess: k }, rate))
    }
}

/// SNIS moment from per-sample log-weights and row-major features.
///
/// Weights are exponentiated after subtracting their maximum, so adding a
/// constant to every log-weight leaves the estimate unchanged.
pub fn snis_from_log_weights(log_w: &[f64], phi: &[f64], dim: usize) -> Result<MomentEstimate> {
    let n = log_w.len();
    assert_eq!(phi.len(), n * dim);
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GamError::Numerical(format!("SNIS over {n} samples: maximum log-weight is {max}")));
    }
    let w: Vec<f64> = log_w.iter().map(|s| (s - max).exp()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let mut value = vec![0.0; dim];
    for (i, wi) in w.iter().enumerate() {
        for k in 0..dim {
            value[k] += wi * phi[i * dim + k];
        }
    }
    value.iter_mut().for_each(|v| *v /= sw);
    let mut var = vec![0.0; dim];
    for (i, wi) in w.iter().enumerate() {
        for k in 0..dim {
            let d = phi[i * dim + k] - value[k];
            var[k] += wi * wi * d * d;
        }
    }
    let stderr = var.iter().map(|v| v.sqrt() / sw).collect();
    Ok(MomentEstimate { value, stderr, n_samples: n, ess: sw * sw / sw2 })
}

/// `ln mean exp(s_i)` with a delta-method standard error.
pub fn log_mean_exp(s: &[f64]) -> Result<LogZEstimate> {
    let n = s.len();
    if n < 2 {
        return Err(GamError::Numerical(format!("log-mean-exp needs at least 2 samples, got {n}")));
    }
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GamError::Numerical(format!("log-mean-exp: maximum term is {max}")));
    }
    let w: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(LogZEstimate { log_z: max + mean.ln(), stderr: var.sqrt() / (mean * (n as f64).sqrt()) })
}

pub fn snis_moment<R: Rng + ?Sized>(gp: &GamPotential, n: usize, rng: &mut R) -> Result<MomentEstimate> {
    if n < 2 {
        return Err(GamError::config(format!("SNIS needs at least 2 samples, got {n}")));
    }
    ProposalPool::draw(&gp.r, &gp.features, n, rng).snis(&gp.lambda)
}

pub fn estimate_log_z<R: Rng + ?Sized>(gp: &GamPotential, n: usize, rng: &mut R) -> Result<LogZEstimate> {
    if n < 100 {
        return Err(GamError::config(format!("partition-function estimate needs at least 100 samples, got {n}")));
    }
    ProposalPool::draw(&gp.r, &gp.features, n, rng).log_z(&gp.lambda)
}

/// Exact maximum of `λ_M·(ℓ/max_len) + λ_v·(ℓ/max_len)²` over the
/// reachable lengths `ℓ ∈ 0..=max_gen_len`. Ties go to the longer length.
pub fn length_term_max(lambda_m: f64, lambda_v: f64, max_len: usize, max_gen_len: usize) -> (usize, f64) {
    let mut best = (0, 0.0);
    for l in 0..=max_gen_len {
        let m = l as f64 / max_len as f64;
        let v = lambda_m * m + lambda_v * (m * m);
        if v >= best.1 || l == 0 {
            best = (l, v);
        }
    }
    best
}

/// `ln β` such that `⟨λ, φ(x)⟩ ≤ ln β` for every `x` with `|x| ≤ max_gen_len`.
pub fn log_upper_bound_beta(lambda: &[f64], features: &FeatureSet, max_gen_len: usize) -> f64 {
    assert_eq!(lambda.len(), features.dim());
    let nb = features.binary_dim();
    let binary: f64 = lambda[..nb].iter().map(|l| l.max(0.0)).sum();
    if features.length_on() {
        binary + length_term_max(lambda[nb], lambda[nb + 1], features.max_len(), max_gen_len).1
    } else {
        binary
    }
}

pub fn upper_bound_beta(lambda: &[f64], features: &FeatureSet, max_gen_len: usize) -> f64 {
    log_upper_bound_beta(lambda, features, max_gen_len).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionOptions {
    /// Minimum acceptable acceptance rate over the probe batch.
    pub floor: f64,
    /// Proposals drawn before the rate is checked against the floor.
    pub probe: usize,
}

impl Default for RejectionOptions {
    fn default() -> Self {
        RejectionOptions { floor: 1e-4, probe: 20_000 }
    }
}

#[derive(Clone, Debug)]
pub struct RejectionDraw {
    pub samples: Vec<Sequence>,
    pub proposals: usize,
    pub acceptance_rate: f64,
}

/// Accepts with probability `exp(log_ratio)`; certain acceptances consume
/// no randomness, so at `λ = 0` the accepted stream is exactly `r`'s.
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
}

/// Exact sampling from `p_λ`: propose from `r`, accept with probability
/// `exp(⟨λ, φ(x)⟩ − ln β)`.
pub fn rejection_sample<R: Rng + ?Sized>(
    gp: &GamPotential,
    log_beta: f64,
    k: usize,
    options: &RejectionOptions,
    rng: &mut R,
) -> Result<RejectionDraw> {
    let mut samples = Vec::with_capacity(k);
    let mut proposals = 0usize;
    let mut checked = false;
    while samples.len() < k {
        let x = gp.r.sample(rng);
        proposals += 1;
        let s = gp.log_weight(&x);
        debug_assert!(s <= log_beta + 1e-9, "β bound violated: {s} > {log_beta}");
        if accept(s - log_beta, rng) {
            samples.push(x);
        }
        if !checked && proposals >= options.probe {
            checked = true;
            let rate = samples.len() as f64 / proposals as f64;
            if samples.is_empty() || rate < options.floor {
                return Err(GamError::RejectionInfeasible { rate, probes: proposals, floor: options.floor });
            }
        }
    }
    let acceptance_rate = if proposals == 0 { 1.0 } else { samples.len() as f64 / proposals as f64 };
    Ok(RejectionDraw { samples, proposals, acceptance_rate })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Training1Method {
    Snis,
    Rs,
}

impl fmt::Display for Training1Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Training1Method::Snis => "snis",
            Training1Method::Rs => "rs",
        })
    }
}

impl FromStr for Training1Method {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snis" => Ok(Training1Method::Snis),
            "rs" => Ok(Training1Method::Rs),
            _ => Err(GamError::Parse {
                what: "training-1 method",
                text: s.into(),
                reason: "expected snis or rs".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    pub method: Training1Method,
    pub learning_rate: f64,
    /// Draws from `r` behind each model-moment estimate.
    pub samples_per_step: usize,
    /// When true the same draws are reused at every step; otherwise fresh
    /// draws are taken each step.
    pub reuse_samples: bool,
    pub max_iters: usize,
    /// Stop once the sup-norm of the moment gap falls below this.
    pub tol: f64,
    pub rejection: RejectionOptions,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig {
            method: Training1Method::Snis,
            learning_rate: 0.1,
            samples_per_step: 200_000,
            reuse_samples: true,
            max_iters: 500,
            tol: 0.01,
            rejection: RejectionOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub iter: usize,
    pub gap_inf: f64,
    pub gaps: Vec<f64>,
    /// Effective sample size (snis) or accepted count (rs).
    pub ess: f64,
    pub lambda: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaFit {
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub best_gap_inf: f64,
    pub trace: Vec<LambdaStep>,
}

impl LambdaFit {
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for step in &self.trace {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Moment matching: `λ ← λ + α (E_D φ − Ê_{p_λ} φ)` until the gap closes.
///
/// Returns the iterate with the smallest observed gap; `converged` is false
/// when the tolerance was never reached within `max_iters`.
pub fn train_lambda<R: Rng + ?Sized>(
    r: &PolicyParams,
    features: &FeatureSet,
    data_moment: &[f64],
    config: &LambdaConfig,
    rng: &mut R,
) -> Result<LambdaFit> {
    let dim = features.dim();
    if data_moment.len() != dim {
        return Err(GamError::config(format!("data moment has {} entries, expected {dim}", data_moment.len())));
    }
    if config.samples_per_step < 2 {
        return Err(GamError::config("training-1 needs at least 2 samples per step"));
    }
    let max_gen_len = r.hyper().max_gen_len;
    let mut pool = config
        .reuse_samples
        .then(|| ProposalPool::draw(r, features, config.samples_per_step, rng));
    let mut lambda = vec![0.0; dim];
    let mut best = (f64::INFINITY, lambda.clone());
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iters {
        let fresh;
        let draws = match &mut pool {
            Some(p) => &*p,
            None => {
                fresh = ProposalPool::draw(r, features, config.samples_per_step, rng);
                &fresh
            }
        };
        let estimate = match config.method {
            Training1Method::Snis => draws.snis(&lambda)?,
            Training1Method::Rs => {
                let log_beta = log_upper_bound_beta(&lambda, features, max_gen_len);
                draws.rejection_moment(&lambda, log_beta, config.rejection.floor, rng)?.0
            }
        };
        let gaps: Vec<f64> = data_moment.iter().zip(&estimate.value).map(|(d, m)| d - m).collect();
        let gap_inf = gaps.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        trace.push(LambdaStep { iter, gap_inf, gaps: gaps.clone(), ess: estimate.ess, lambda: lambda.clone() });
        if gap_inf < best.0 {
            best = (gap_inf, lambda.clone());
        }
        if gap_inf < config.tol {
            converged = true;
            break;
        }
        for (l, g) in lambda.iter_mut().zip(&gaps) {
            *l += config.learning_rate * g;
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(GamError::Diverged { step: iter, detail: format!("λ became {lambda:?}") });
        }
    }
    Ok(LambdaFit { lambda: best.1, converged, best_gap_inf: best.0, trace })
}

/// Plain-text λ checkpoint: mask, motif, then `feature_name value` lines.
pub fn write_lambda<W: Write>(mut out: W, features: &FeatureSet, lambda: &[f64]) -> Result<()> {
    writeln!(out, "{}", features.mask())?;
    writeln!(out, "{}", Sequence::new(features.motif().to_vec()))?;
    for (name, value) in features.names().iter().zip(lambda) {
        writeln!(out, "{name} {value}")?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_lambda`]; returns mask, motif and λ.
pub fn read_lambda<R: BufRead>(input: R) -> Result<(FeatureMask, Vec<u8>, Vec<(String, f64)>)> {
    let bad = |detail: String| GamError::Format { what: "λ checkpoint", detail };
    let mut lines = input.lines();
    let mask: FeatureMask = lines.next().ok_or_else(|| bad("missing mask line".into()))??.trim().parse()?;
    let motif_line = lines.next().ok_or_else(|| bad("missing motif line".into()))??;
    let motif = parse_bits(motif_line.trim(), "motif")?;
    let mut values = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("expected `name value`, got {line:?}")))?;
        let value: f64 = value.trim().parse().map_err(|e| bad(format!("{line:?}: {e}")))?;
        values.push((name.to_string(), value));
    }
    if values.len() != mask.active_count() {
        return Err(bad(format!("{} values for mask {mask} with {} features", values.len(), mask.active_count())));
    }
    Ok((mask, motif, values))
}
