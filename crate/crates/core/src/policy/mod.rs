//! Autoregressive policy over {0, 1, EOS}: a single-layer gated recurrent
//! cell on one-hot inputs plus a scalar position channel, with a softmax
//! output layer.
//!
//! The same type plays the reference model r, the proposals q, and the
//! learned π_θ. Parameters live in one flat vector with a stable layout so
//! that gradients, optimizers and finite-difference checks can address
//! every coordinate uniformly.

mod checkpoint;
mod train;

use rand::Rng;

use crate::model::{SequenceModel, SequenceSampler};
use crate::sequence::{Sequence, EOS, VOCAB};

pub use checkpoint::{load_policy, read_policy, save_policy, write_manifest, write_policy};
pub(crate) use train::valid_ce;
pub use train::{train_am, AmTrainConfig, AmTrainReport, Momentum};

/// Inputs are one-hot over the vocabulary; EOS doubles as the start symbol.
pub const INPUT_DIM: usize = VOCAB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolicyHyper {
    pub hidden: usize,
    pub max_gen_len: usize,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        PolicyHyper { hidden: 32, max_gen_len: 60 }
    }
}

impl PolicyHyper {
    pub fn num_params(&self) -> usize {
        Layout::new(self.hidden).total
    }
}

/// Offsets into the flat parameter vector.
///
/// `wx` is stored per input symbol (`[symbol][gate * h + i]`), followed by
/// `wp`, the gate weights of the position channel `t / max_gen_len`. The recurrent
/// weights are column-major: `uzr` maps the previous state to the stacked
/// update and reset pre-activations (`2h × h`), `un` maps the reset-gated
/// state to the candidate (`h × h`). Then the gate biases, the output matrix
/// (`3 × h`, row-major) and the output bias.
#[derive(Clone, Copy, Debug)]
struct Layout {
    h: usize,
    wx: usize,
    wp: usize,
    uzr: usize,
    un: usize,
    b: usize,
    wo: usize,
    bo: usize,
    total: usize,
}

impl Layout {
    fn new(h: usize) -> Self {
        let g = 3 * h;
        let wx = 0;
        let wp = wx + INPUT_DIM * g;
        let uzr = wp + g;
        let un = uzr + 2 * h * h;
        let b = un + h * h;
        let wo = b + g;
        let bo = wo + VOCAB * h;
        Layout { h, wx, wp, uzr, un, b, wo, bo, total: bo + VOCAB }
    }

    #[inline]
    fn wx_col(&self, sym: usize) -> std::ops::Range<usize> {
        let g = 3 * self.h;
        self.wx + sym * g..self.wx + (sym + 1) * g
    }

    #[inline]
    fn uzr(&self) -> std::ops::Range<usize> {
        self.uzr..self.uzr + 2 * self.h * self.h
    }

    #[inline]
    fn un(&self) -> std::ops::Range<usize> {
        self.un..self.un + self.h * self.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    hyper: PolicyHyper,
    theta: Vec<f64>,
}

/// Same shape as [`PolicyParams`]; the direction of steepest ascent of
/// whatever weighted log-likelihood it was accumulated from.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    hidden: usize,
    data: Vec<f64>,
}

impl Gradient {
    pub fn zeros(hyper: &PolicyHyper) -> Self {
        Gradient { hidden: hyper.hidden, data: vec![0.0; hyper.num_params()] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    /// Rescales to `max_norm` if longer; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Output-layer bias entries, one per vocabulary symbol.
    pub fn output_bias(&self) -> &[f64] {
        let l = Layout::new(self.hidden);
        &self.data[l.bo..l.bo + VOCAB]
    }
}

/// Reusable buffers for forward and backward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    hs: Vec<f64>,
    zrs: Vec<f64>,
    ns: Vec<f64>,
    probs: Vec<f64>,
    inputs: Vec<usize>,
    targets: Vec<usize>,
    scratch: Vec<f64>,
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out = mat · x` for a column-major `mat` with `out.len()` rows.
#[inline(always)]
fn matvec(mat: &[f64], x: &[f64], out: &mut [f64]) {
    let m = out.len();
    debug_assert_eq!(mat.len(), m * x.len());
    let mut i0 = 0;
    while i0 + 8 <= m {
        let mut acc = [0.0f64; 8];
        for (col, &xj) in mat.chunks_exact(m).zip(x) {
            let c: &[f64; 8] = col[i0..i0 + 8].try_into().unwrap();
            for k in 0..8 {
                acc[k] += c[k] * xj;
            }
        }
        out[i0..i0 + 8].copy_from_slice(&acc);
        i0 += 8;
    }
    for (i, o) in out.iter_mut().enumerate().skip(i0) {
        *o = mat.chunks_exact(m).zip(x).fold(0.0, |s, (c, &xj)| s + c[i] * xj);
    }
}

/// Backward of [`matvec`]: `dmat += dout ⊗ x` and `dx += matᵀ · dout`.
#[inline(always)]
fn matvec_backward(mat: &[f64], x: &[f64], dout: &[f64], dmat: &mut [f64], dx: &mut [f64]) {
    let m = dout.len();
    for (((col, dcol), &xj), dxj) in mat.chunks_exact(m).zip(dmat.chunks_exact_mut(m)).zip(x).zip(dx.iter_mut()) {
        axpy(xj, dout, dcol);
        *dxj += dot(col, dout);
    }
}

#[inline(always)]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// `tanh` through a single `exp`; absolute error stays at rounding level.
#[inline(always)]
fn tanh(a: f64) -> f64 {
    let e = (-2.0 * a.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(a)
}

/// Returns `(log-sum-exp, probabilities)` of three logits.
#[inline(always)]
fn softmax3(logits: &[f64; 3]) -> (f64, [f64; 3]) {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp(), (logits[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    (m + s.ln(), [e[0] / s, e[1] / s, e[2] / s])
}

impl PolicyParams {
    /// Uniform initialization in `[-1/√h, 1/√h]`.
    pub fn init<R: Rng + ?Sized>(hyper: PolicyHyper, rng: &mut R) -> Self {
        assert!(hyper.hidden >= 1, "hidden size must be at least 1");
        let a = 1.0 / (hyper.hidden as f64).sqrt();
        let theta = (0..hyper.num_params()).map(|_| rng.random_range(-a..=a)).collect();
        PolicyParams { hyper, theta }
    }

    /// All-zero parameters: every next-symbol distribution is uniform.
    pub fn uniform(hyper: PolicyHyper) -> Self {
        PolicyParams { hyper, theta: vec![0.0; hyper.num_params()] }
    }

    pub fn from_flat(hyper: PolicyHyper, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), hyper.num_params(), "flat view has the wrong length");
        PolicyParams { hyper, theta }
    }

    pub fn hyper(&self) -> &PolicyHyper {
        &self.hyper
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }

    /// `θ += step · g`.
    pub fn ascend(&mut self, g: &Gradient, step: f64) {
        axpy(step, &g.data, &mut self.theta);
    }

    fn layout(&self) -> Layout {
        Layout::new(self.hyper.hidden)
    }

    /// Position channel value at decoding step `t`.
    #[inline]
    fn position(&self, t: usize) -> f64 {
        t as f64 / self.hyper.max_gen_len.max(1) as f64
    }

    /// One recurrent step from `h_prev` on input symbol `sym` at position
    /// value `pos`. Writes the gates, the new state and the output logits.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn cell(
        &self,
        l: &Layout,
        sym: usize,
        pos: f64,
        h_prev: &[f64],
        zr: &mut [f64],
        n: &mut [f64],
        rh: &mut [f64],
        h_out: &mut [f64],
    ) -> [f64; 3] {
        let h = l.h;
        let t = &self.theta;
        let wx = &t[l.wx_col(sym)];
        let wp = &t[l.wp..l.wp + 3 * h];
        let b = &t[l.b..l.b + 3 * h];
        matvec(&t[l.uzr()], h_prev, zr);
        let (z, r) = zr.split_at_mut(h);
        for i in 0..h {
            z[i] = sigmoid(wx[i] + wp[i] * pos + b[i] + z[i]);
            r[i] = sigmoid(wx[h + i] + wp[h + i] * pos + b[h + i] + r[i]);
            rh[i] = r[i] * h_prev[i];
        }
        matvec(&t[l.un()], rh, n);
        for i in 0..h {
            n[i] = tanh(wx[2 * h + i] + wp[2 * h + i] * pos + b[2 * h + i] + n[i]);
            h_out[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
        }
        let wo = &t[l.wo..l.wo + VOCAB * h];
        let bo = &t[l.bo..l.bo + VOCAB];
        [
            bo[0] + dot(&wo[0..h], h_out),
            bo[1] + dot(&wo[h..2 * h], h_out),
            bo[2] + dot(&wo[2 * h..3 * h], h_out),
        ]
    }

    /// Incremental decoder for stepwise scoring and sampling.
    pub fn decoder(&self) -> Decoder<'_> {
        let h = self.hyper.hidden;
        Decoder {
            params: self,
            layout: self.layout(),
            state: vec![0.0; h],
            next: vec![0.0; h],
            gates: vec![0.0; 4 * h],
            log_probs: [0.0; 3],
            input: EOS,
            step: 0,
            primed: false,
        }
    }

    /// Σ_i log s(x_i | x_<i) plus the log-probability of the terminator.
    pub fn logprob(&self, x: &Sequence) -> f64 {
        let mut dec = self.decoder();
        let mut total = 0.0;
        for &b in x.bits() {
            total += dec.log_probs()[b as usize];
            dec.advance(b as usize);
        }
        total + dec.log_probs()[EOS]
    }

    /// Log-probability that [`sample`](Self::sample) returns `x`. Equals
    /// [`logprob`](Self::logprob) below the length cap; at the cap the
    /// terminator is not scored, since a cut draw and an ended one coincide.
    pub fn sample_logprob(&self, x: &Sequence) -> f64 {
        if x.len() > self.hyper.max_gen_len {
            return f64::NEG_INFINITY;
        }
        if x.len() < self.hyper.max_gen_len {
            return self.logprob(x);
        }
        let mut dec = self.decoder();
        let mut total = 0.0;
        for &b in x.bits() {
            total += dec.log_probs()[b as usize];
            dec.advance(b as usize);
        }
        total
    }

    /// Ancestral sampling. Generation stops at EOS; a draw that has not
    /// emitted EOS after `max_gen_len` payload symbols is cut and flagged.
    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> (Sequence, bool) {
        let (x, cut, _) = self.draw(rng);
        (x, cut)
    }

    /// A draw together with its [`sample_logprob`](Self::sample_logprob).
    pub fn sample_scored<R: Rng + ?Sized>(&self, rng: &mut R) -> (Sequence, f64) {
        let (x, _, lp) = self.draw(rng);
        (x, lp)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Sequence, bool, f64) {
        let mut dec = self.decoder();
        let mut x = Sequence::empty();
        let mut logprob = 0.0;
        loop {
            let lp = dec.log_probs();
            let u: f64 = rng.random();
            let p0 = lp[0].exp();
            let p1 = lp[1].exp();
            let sym = if u < p0 {
                0
            } else if u < p0 + p1 {
                1
            } else {
                EOS
            };
            if x.len() == self.hyper.max_gen_len {
                return (x, sym != EOS, logprob);
            }
            if sym == EOS {
                return (x, false, logprob + lp[EOS]);
            }
            logprob += lp[sym];
            x.push(sym as u8);
            dec.advance(sym);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        self.sample_episode(rng).0
    }

    /// Exact reverse-mode gradient of `logprob(x)`.
    pub fn grad_logprob(&self, x: &Sequence) -> Gradient {
        let mut g = Gradient::zeros(&self.hyper);
        let mut ws = Workspace::default();
        self.accumulate_grad_logprob(x, 1.0, &mut g, &mut ws);
        g
    }

    /// Adds `weight · ∇_θ log π_θ(x)` into `grad` and returns `log π_θ(x)`.
    pub fn accumulate_grad_logprob(&self, x: &Sequence, weight: f64, grad: &mut Gradient, ws: &mut Workspace) -> f64 {
        let l = self.layout();
        let h = l.h;
        let steps = x.tokens();
        assert_eq!(grad.data.len(), l.total);

        ws.inputs.clear();
        ws.targets.clear();
        ws.inputs.push(EOS);
        for &b in x.bits() {
            ws.inputs.push(b as usize);
            ws.targets.push(b as usize);
        }
        ws.inputs.truncate(steps);
        ws.targets.push(EOS);
        ws.hs.clear();
        ws.hs.resize((steps + 1) * h, 0.0);
        ws.zrs.clear();
        ws.zrs.resize(steps * 2 * h, 0.0);
        ws.ns.clear();
        ws.ns.resize(steps * h, 0.0);
        ws.probs.clear();
        ws.probs.resize(steps * VOCAB, 0.0);
        ws.scratch.clear();
        ws.scratch.resize(8 * h, 0.0);

        // Forward, caching what the backward pass needs.
        let mut logprob = 0.0;
        for t in 0..steps {
            let (before, after) = ws.hs.split_at_mut((t + 1) * h);
            let h_prev = &before[t * h..];
            let h_out = &mut after[..h];
            let (rh, _) = ws.scratch.split_at_mut(h);
            let logits = self.cell(
                &l,
                ws.inputs[t],
                self.position(t),
                h_prev,
                &mut ws.zrs[2 * t * h..2 * (t + 1) * h],
                &mut ws.ns[t * h..(t + 1) * h],
                rh,
                h_out,
            );
            let (lse, p) = softmax3(&logits);
            logprob += logits[ws.targets[t]] - lse;
            ws.probs[t * VOCAB..(t + 1) * VOCAB].copy_from_slice(&p);
        }

        // Backward through time.
        let (theta, g) = (&self.theta, &mut grad.data);
        let (dh, rest) = ws.scratch.split_at_mut(h);
        let (dh_prev, rest) = rest.split_at_mut(h);
        let (da, rest) = rest.split_at_mut(3 * h);
        let (rh, rest) = rest.split_at_mut(h);
        let (drh, _) = rest.split_at_mut(h);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..steps).rev() {
            let h_prev = &ws.hs[t * h..(t + 1) * h];
            let h_out = &ws.hs[(t + 1) * h..(t + 2) * h];
            let (z, r) = ws.zrs[2 * t * h..2 * (t + 1) * h].split_at(h);
            let n = &ws.ns[t * h..(t + 1) * h];
            let p = &ws.probs[t * VOCAB..(t + 1) * VOCAB];
            let target = ws.targets[t];

            for k in 0..VOCAB {
                let dlogit = weight * (if k == target { 1.0 } else { 0.0 } - p[k]);
                g[l.bo + k] += dlogit;
                axpy(dlogit, h_out, &mut g[l.wo + k * h..l.wo + (k + 1) * h]);
                axpy(dlogit, &theta[l.wo + k * h..l.wo + (k + 1) * h], dh);
            }

            let (dazr, dan) = da.split_at_mut(2 * h);
            for i in 0..h {
                dh_prev[i] = dh[i] * z[i];
                dan[i] = dh[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]);
                dazr[i] = dh[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]);
                rh[i] = r[i] * h_prev[i];
                drh[i] = 0.0;
            }
            matvec_backward(&theta[l.un()], rh, dan, &mut g[l.un()], drh);
            for i in 0..h {
                dh_prev[i] += drh[i] * r[i];
                dazr[h + i] = drh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            }
            matvec_backward(&theta[l.uzr()], h_prev, dazr, &mut g[l.uzr()], dh_prev);
            let col = l.wx_col(ws.inputs[t]);
            for (gi, dai) in g[col].iter_mut().zip(da.iter()) {
                *gi += dai;
            }
            axpy(self.position(t), da, &mut g[l.wp..l.wp + 3 * h]);
            for (gi, dai) in g[l.b..l.b + 3 * h].iter_mut().zip(da.iter()) {
                *gi += dai;
            }
            dh.copy_from_slice(dh_prev);
        }
        logprob
    }
}

impl SequenceModel for PolicyParams {
    fn logprob(&self, x: &Sequence) -> f64 {
        PolicyParams::logprob(self, x)
    }
}

impl SequenceSampler for PolicyParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        PolicyParams::sample(self, rng)
    }
}

/// Stepwise view of a policy: exposes the next-symbol log-probabilities
/// after each consumed symbol.
pub struct Decoder<'a> {
    params: &'a PolicyParams,
    layout: Layout,
    state: Vec<f64>,
    next: Vec<f64>,
    gates: Vec<f64>,
    log_probs: [f64; 3],
    input: usize,
    step: usize,
    primed: bool,
}

impl Decoder<'_> {
    fn compute(&mut self) {
        let h = self.layout.h;
        let (zr, rest) = self.gates.split_at_mut(2 * h);
        let (n, rh) = rest.split_at_mut(h);
        let pos = self.params.position(self.step);
        let logits = self.params.cell(&self.layout, self.input, pos, &self.state, zr, n, rh, &mut self.next);
        let (lse, _) = softmax3(&logits);
        self.log_probs = [logits[0] - lse, logits[1] - lse, logits[2] - lse];
        self.primed = true;
    }

    /// Log-probabilities of {0, 1, EOS} at the current position.
    pub fn log_probs(&mut self) -> [f64; 3] {
        if !self.primed {
            self.compute();
        }
        self.log_probs
    }

    /// Consumes a payload symbol.
    pub fn advance(&mut self, sym: usize) {
        debug_assert!(sym < EOS);
        if !self.primed {
            self.compute();
        }
        std::mem::swap(&mut self.state, &mut self.next);
        self.input = sym;
        self.step += 1;
        self.primed = false;
    }
}
