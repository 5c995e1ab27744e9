//! Convolutional LSTM classifier.
//!
//! An instance becomes the embedding sequence `[start entity, context…,
//! end entity]`, right-padded with zero columns to the training maximum
//! `l_max`. A one-dimensional convolution with ReLU turns it into `m`
//! feature vectors of size `k`, an LSTM reads them, and its last hidden
//! state (with dropout at training time) feeds a softmax over the six
//! relations. Embeddings are frozen; every other parameter is trained with
//! cross-entropy and Adam.
//!
//! Parameters live in one flat buffer ([`ClstmParams`]) partitioned into
//! [`Group`]s, so gradients and optimizer moments share the same layout.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_lemma_counts, filter_context, ClassDistribution, FrequencyTable, Relation, RelationInstance,
};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::entity_keys;
use crate::modelio::{Container, Tensor};

const CLASSES: usize = Relation::COUNT;

/// Instances per gradient partial sum. Fixed so that the reduction order,
/// and therefore the trained bits, do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

// ─── Hyperparameters ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub num_filters: usize,
    pub filter_width: usize,
    pub rnn_units: usize,
    pub dropout_rate: f64,
    pub l2_scale: f64,
    pub stride: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Hyperparams {
    /// The configuration picked by random search on the clean subtask.
    pub fn selected() -> Self {
        Hyperparams {
            num_filters: 384,
            filter_width: 3,
            rnn_units: 93,
            dropout_rate: 0.23,
            l2_scale: 0.79,
            ..Self::fixed(0)
        }
    }

    /// Fixed optimizer settings with placeholder architecture values.
    pub fn fixed(seed: u64) -> Self {
        Hyperparams {
            num_filters: 1,
            filter_width: 2,
            rnn_units: 1,
            dropout_rate: 0.0,
            l2_scale: 0.0,
            stride: 1,
            learning_rate: 0.002,
            batch_size: 128,
            epochs: 100,
            seed,
        }
    }

    /// Structural sanity checks. Search ranges are enforced by
    /// [`crate::search::SearchSpace::validate`].
    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Hyperparams(msg.to_string()));
        if self.num_filters == 0 || self.filter_width == 0 || self.rnn_units == 0 {
            return bad("num_filters, filter_width and rnn_units must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.l2_scale >= 0.0 && self.l2_scale.is_finite()) {
            return bad("l2_scale must be a finite non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::selected()
    }
}

// ─── Parameter layout ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    ConvW,
    ConvB,
    LstmW,
    LstmU,
    LstmB,
    OutW,
    OutB,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::ConvW,
        Group::ConvB,
        Group::LstmW,
        Group::LstmU,
        Group::LstmB,
        Group::OutW,
        Group::OutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::ConvW => "conv.w",
            Group::ConvB => "conv.b",
            Group::LstmW => "lstm.w",
            Group::LstmU => "lstm.u",
            Group::LstmB => "lstm.b",
            Group::OutW => "out.w",
            Group::OutB => "out.b",
        }
    }
}

/// Model dimensions: embedding size `v`, filters `k`, window `ws`, LSTM
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub v: usize,
    pub k: usize,
    pub ws: usize,
    pub units: usize,
}

impl Shape {
    /// Tensor shape of a group as stored in model files.
    ///
    /// - `conv.w`: `[k, ws, v]`, filter `f` weight for window offset `o`
    ///   and embedding row `r`.
    /// - `lstm.w`, `lstm.u`, `lstm.b`: rows `g·units + j` for gate `g` in
    ///   the order input, forget, output, candidate.
    /// - `out.w`: `[6, units]`.
    pub fn dims(&self, g: Group) -> Vec<usize> {
        let Shape { v, k, ws, units: u } = *self;
        match g {
            Group::ConvW => vec![k, ws, v],
            Group::ConvB => vec![k],
            Group::LstmW => vec![4 * u, k],
            Group::LstmU => vec![4 * u, u],
            Group::LstmB => vec![4 * u],
            Group::OutW => vec![CLASSES, u],
            Group::OutB => vec![CLASSES],
        }
    }

    fn size(&self, g: Group) -> usize {
        self.dims(g).iter().product()
    }

    pub fn range(&self, g: Group) -> Range<usize> {
        let mut start = 0;
        for h in Group::ALL {
            let n = self.size(h);
            if h == g {
                return start..start + n;
            }
            start += n;
        }
        unreachable!()
    }

    pub fn param_count(&self) -> usize {
        Group::ALL.iter().map(|&g| self.size(g)).sum()
    }

    /// Number of feature vectors produced from `l` columns.
    pub fn maps(&self, l: usize, stride: usize) -> usize {
        assert!(self.ws <= l, "filter width {} exceeds sequence length {l}", self.ws);
        (l - self.ws) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClstmParams {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl ClstmParams {
    pub fn zeros(shape: Shape) -> Self {
        ClstmParams {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    /// Weights uniform in [−0.1, 0.1], biases zero except the forget gate
    /// bias, which starts at 1.
    pub fn init<R: Rng>(shape: Shape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for g in [Group::ConvW, Group::LstmW, Group::LstmU, Group::OutW] {
            for w in p.group_mut(g) {
                *w = rng.gen_range(-0.1..=0.1);
            }
        }
        let u = shape.units;
        p.group_mut(Group::LstmB)[u..2 * u].fill(1.0);
        p
    }

    pub fn group(&self, g: Group) -> &[f64] {
        &self.data[self.shape.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let r = self.shape.range(g);
        &mut self.data[r]
    }
}

// ─── Forward operations ──────────────────────────────────────────────

/// Embedding columns `[start entity, filtered context…, end entity]`.
///
/// Entity columns average the entity's token vectors; OOV tokens
/// contribute zeros.
pub fn build_sequence(
    inst: &RelationInstance,
    table: &EmbeddingTable,
    freq: &FrequencyTable,
    min_lemma_freq: usize,
) -> Vec<Vec<f64>> {
    let filtered = filter_context(inst.context(), freq, min_lemma_freq);
    let mut cols = Vec::with_capacity(filtered.len() + 2);
    cols.push(table.phrase_vector(&entity_keys(inst.entity_tokens(inst.start_span()))));
    for t in filtered {
        cols.push(table.lookup(&t.embedding_key()).to_vec());
    }
    cols.push(table.phrase_vector(&entity_keys(inst.entity_tokens(inst.end_span()))));
    cols
}

/// Append zero columns up to `l_max`.
pub fn pad(cols: &[Vec<f64>], l_max: usize) -> Vec<Vec<f64>> {
    assert!(
        cols.len() <= l_max,
        "sequence of length {} exceeds l_max {l_max}",
        cols.len()
    );
    let v = cols.first().map_or(0, Vec::len);
    let mut out = cols.to_vec();
    out.resize(l_max, vec![0.0; v]);
    out
}

/// Convolution output, row-major `k × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub k: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn get(&self, filter: usize, j: usize) -> f64 {
        self.data[filter * self.m + j]
    }
}

/// Pre-activations of the convolution over `l` columns, of which only the
/// first `cols.len()` may be nonzero. Row-major `k × m`.
fn conv_pre(params: &ClstmParams, cols: &[Vec<f64>], l: usize, stride: usize) -> (usize, Vec<f64>) {
    let Shape { v, k, ws, .. } = params.shape;
    let m = params.shape.maps(l, stride);
    let w = params.group(Group::ConvW);
    let b = params.group(Group::ConvB);
    let mut out = vec![0.0; k * m];
    for f in 0..k {
        let filt = &w[f * ws * v..(f + 1) * ws * v];
        for j in 0..m {
            let mut s = b[f];
            for off in 0..ws {
                let Some(col) = cols.get(j * stride + off) else { break };
                assert_eq!(col.len(), v, "embedding column has the wrong size");
                s += dot(&filt[off * v..(off + 1) * v], col);
            }
            out[f * m + j] = s;
        }
    }
    (m, out)
}

/// Convolution with ReLU over a padded input of `v`-sized columns.
pub fn conv1d(params: &ClstmParams, input: &[Vec<f64>], stride: usize) -> FeatureMaps {
    let (m, mut data) = conv_pre(params, input, input.len(), stride);
    for x in &mut data {
        *x = relu(*x);
    }
    FeatureMaps {
        k: params.shape.k,
        m,
        data,
    }
}

/// Columns of `c` as a sequence of `k`-vectors.
pub fn split_maps(c: &FeatureMaps) -> Vec<Vec<f64>> {
    (0..c.m).map(|j| (0..c.k).map(|f| c.get(f, j)).collect()).collect()
}

/// Per-step LSTM state: gate activations `m × 4u` (input, forget, output,
/// candidate) and cell/hidden states `(m+1) × u` starting from zero.
struct LstmTrace {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Run the LSTM over `m` inputs stored row-major in `xs` (`m × k`).
fn lstm_trace(params: &ClstmParams, xs: &[f64], m: usize) -> LstmTrace {
    let Shape { k, units: u, .. } = params.shape;
    assert!(m > 0, "LSTM input sequence is empty");
    let w = params.group(Group::LstmW);
    let uu = params.group(Group::LstmU);
    let b = params.group(Group::LstmB);
    let mut gates = vec![0.0; m * 4 * u];
    let mut c = vec![0.0; (m + 1) * u];
    let mut h = vec![0.0; (m + 1) * u];
    let mut a = vec![0.0; 4 * u];
    for t in 0..m {
        let x = &xs[t * k..(t + 1) * k];
        let hp = &h[t * u..(t + 1) * u];
        for (row, ar) in a.iter_mut().enumerate() {
            *ar = b[row] + dot(&w[row * k..(row + 1) * k], x) + dot(&uu[row * u..(row + 1) * u], hp);
        }
        let gt = &mut gates[t * 4 * u..(t + 1) * 4 * u];
        for j in 0..u {
            gt[j] = sigmoid(a[j]);
            gt[u + j] = sigmoid(a[u + j]);
            gt[2 * u + j] = sigmoid(a[2 * u + j]);
            gt[3 * u + j] = a[3 * u + j].tanh();
        }
        for j in 0..u {
            let ct = gt[u + j] * c[t * u + j] + gt[j] * gt[3 * u + j];
            c[(t + 1) * u + j] = ct;
            h[(t + 1) * u + j] = gt[2 * u + j] * ct.tanh();
        }
    }
    LstmTrace { gates, c, h }
}

/// Final hidden state after reading `seq`.
pub fn lstm_forward(params: &ClstmParams, seq: &[Vec<f64>]) -> Vec<f64> {
    let k = params.shape.k;
    let mut xs = Vec::with_capacity(seq.len() * k);
    for x in seq {
        assert_eq!(x.len(), k, "LSTM input has the wrong size");
        xs.extend_from_slice(x);
    }
    let u = params.shape.units;
    let m = seq.len();
    lstm_trace(params, &xs, m).h[m * u..].to_vec()
}

/// Inverted dropout mask: each unit kept with probability `1 − rate` and
/// scaled by `1/(1 − rate)`. A zero rate draws nothing from `rng`.
pub fn dropout_mask<R: Rng>(units: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; units];
    }
    let keep = 1.0 - rate;
    (0..units)
        .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Softmax scores from a sentence representation. `mask` is the training
/// time dropout mask; inference passes `None`.
pub fn classify(params: &ClstmParams, h: &[f64], mask: Option<&[f64]>) -> [f64; CLASSES] {
    let u = params.shape.units;
    assert_eq!(h.len(), u, "representation has the wrong size");
    let hd: Vec<f64> = match mask {
        Some(mk) => h.iter().zip(mk).map(|(a, b)| a * b).collect(),
        None => h.to_vec(),
    };
    logits_to_probs(params, &hd)
}

fn logits_to_probs(params: &ClstmParams, hd: &[f64]) -> [f64; CLASSES] {
    let u = params.shape.units;
    let w = params.group(Group::OutW);
    let b = params.group(Group::OutB);
    let mut z = [0.0; CLASSES];
    for (c, zc) in z.iter_mut().enumerate() {
        *zc = b[c] + dot(&w[c * u..(c + 1) * u], hd);
    }
    softmax(z)
}

fn softmax(z: [f64; CLASSES]) -> [f64; CLASSES] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = z.map(|x| (x - max).exp());
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

pub fn cross_entropy(scores: &[f64; CLASSES], gold: Relation) -> f64 {
    -scores[gold.index()].ln()
}

/// `l2 · ½‖W_out‖²`; biases are not penalized.
pub fn l2_penalty(params: &ClstmParams, l2_scale: f64) -> f64 {
    0.5 * l2_scale * params.group(Group::OutW).iter().map(|w| w * w).sum::<f64>()
}

// ─── Loss and gradient ───────────────────────────────────────────────

/// A training example: embedding columns (at most `l_max` of them) and
/// the gold label. Missing columns up to `l_max` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub columns: Vec<Vec<f64>>,
    pub gold: Relation,
}

/// Everything the backward pass needs from one forward pass.
struct Trace {
    m: usize,
    conv_pre: Vec<f64>,
    maps: Vec<f64>,
    lstm: LstmTrace,
    hd: Vec<f64>,
    probs: [f64; CLASSES],
}

fn forward(params: &ClstmParams, cols: &[Vec<f64>], l_max: usize, stride: usize, mask: Option<&[f64]>) -> Trace {
    let Shape { k, units: u, .. } = params.shape;
    let (m, pre) = conv_pre(params, cols, l_max, stride);
    let mut maps = vec![0.0; m * k];
    for f in 0..k {
        for j in 0..m {
            maps[j * k + f] = relu(pre[f * m + j]);
        }
    }
    let lstm = lstm_trace(params, &maps, m);
    let h = &lstm.h[m * u..];
    let hd: Vec<f64> = match mask {
        Some(mk) => h.iter().zip(mk).map(|(a, b)| a * b).collect(),
        None => h.to_vec(),
    };
    let probs = logits_to_probs(params, &hd);
    Trace {
        m,
        conv_pre: pre,
        maps,
        lstm,
        hd,
        probs,
    }
}

/// Add `weight · ∂(−log p_gold)/∂θ` to `grad`.
#[allow(clippy::too_many_arguments)]
fn backward(
    params: &ClstmParams,
    cols: &[Vec<f64>],
    stride: usize,
    tr: &Trace,
    mask: Option<&[f64]>,
    gold: Relation,
    weight: f64,
    grad: &mut [f64],
) {
    let sh = params.shape;
    let Shape { v, k, ws, units: u } = sh;
    let m = tr.m;

    let mut dz = tr.probs;
    dz[gold.index()] -= 1.0;
    for x in &mut dz {
        *x *= weight;
    }

    let out_w = params.group(Group::OutW);
    {
        let g = &mut grad[sh.range(Group::OutW)];
        for c in 0..CLASSES {
            for j in 0..u {
                g[c * u + j] += dz[c] * tr.hd[j];
            }
        }
        let g = &mut grad[sh.range(Group::OutB)];
        for c in 0..CLASSES {
            g[c] += dz[c];
        }
    }
    let mut dh: Vec<f64> = (0..u)
        .map(|j| (0..CLASSES).map(|c| out_w[c * u + j] * dz[c]).sum::<f64>())
        .collect();
    if let Some(mk) = mask {
        for (d, s) in dh.iter_mut().zip(mk) {
            *d *= s;
        }
    }

    // backpropagation through time
    let w = params.group(Group::LstmW);
    let uu = params.group(Group::LstmU);
    let (rw, ru, rb) = (sh.range(Group::LstmW), sh.range(Group::LstmU), sh.range(Group::LstmB));
    let mut dc = vec![0.0; u];
    let mut da = vec![0.0; 4 * u];
    let mut dmaps = vec![0.0; m * k];
    for t in (0..m).rev() {
        let gt = &tr.lstm.gates[t * 4 * u..(t + 1) * 4 * u];
        let c_prev = &tr.lstm.c[t * u..(t + 1) * u];
        let c_t = &tr.lstm.c[(t + 1) * u..(t + 2) * u];
        for j in 0..u {
            let (i, f, o, g) = (gt[j], gt[u + j], gt[2 * u + j], gt[3 * u + j]);
            let tc = c_t[j].tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            da[j] = dc[j] * g * i * (1.0 - i);
            da[u + j] = dc[j] * c_prev[j] * f * (1.0 - f);
            da[2 * u + j] = d_o * o * (1.0 - o);
            da[3 * u + j] = dc[j] * i * (1.0 - g * g);
            dc[j] *= f;
        }
        let x = &tr.maps[t * k..(t + 1) * k];
        let hp = &tr.lstm.h[t * u..(t + 1) * u];
        for (row, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, x, &mut grad[rw.start + row * k..rw.start + (row + 1) * k]);
            axpy(d, hp, &mut grad[ru.start + row * u..ru.start + (row + 1) * u]);
            grad[rb.start + row] += d;
        }
        let dx = &mut dmaps[t * k..(t + 1) * k];
        dh.fill(0.0);
        for (row, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            axpy(d, &w[row * k..(row + 1) * k], dx);
            axpy(d, &uu[row * u..(row + 1) * u], &mut dh);
        }
    }

    // convolution; the input embeddings receive no gradient
    let (rcw, rcb) = (sh.range(Group::ConvW), sh.range(Group::ConvB));
    for f in 0..k {
        for j in 0..m {
            if tr.conv_pre[f * m + j] <= 0.0 {
                continue;
            }
            let d = dmaps[j * k + f];
            grad[rcb.start + f] += d;
            let base = rcw.start + f * ws * v;
            for off in 0..ws {
                let Some(col) = cols.get(j * stride + off) else { break };
                axpy(d, col, &mut grad[base + off * v..base + (off + 1) * v]);
            }
        }
    }
}

type Item<'a> = (&'a [Vec<f64>], Relation, Option<&'a [f64]>);

/// Shared batch objective: returns the mean cross-entropy plus penalty and,
/// if requested, its gradient.
fn batch_objective(
    params: &ClstmParams,
    items: &[Item<'_>],
    l_max: usize,
    stride: usize,
    l2_scale: f64,
    with_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    assert!(!items.is_empty(), "empty batch");
    let n = params.data.len();
    let weight = 1.0 / items.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = if with_grad { vec![0.0; n] } else { Vec::new() };
            let mut loss = 0.0;
            for &(cols, gold, mask) in chunk {
                let tr = forward(params, cols, l_max, stride, mask);
                loss += cross_entropy(&tr.probs, gold);
                if with_grad {
                    backward(params, cols, stride, &tr, mask, gold, weight, &mut g);
                }
            }
            (loss, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = if with_grad { Some(vec![0.0; n]) } else { None };
    for (l, g) in partials {
        loss += l;
        if let Some(acc) = grad.as_mut() {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    loss = loss * weight + l2_penalty(params, l2_scale);
    if let Some(acc) = grad.as_mut() {
        let r = params.shape.range(Group::OutW);
        for (a, w) in acc[r.clone()].iter_mut().zip(&params.data[r]) {
            *a += l2_scale * w;
        }
    }
    (loss, grad)
}

fn batch_items<'a>(batch: &'a [Example], masks: Option<&'a [Vec<f64>]>) -> Vec<Item<'a>> {
    if let Some(ms) = masks {
        assert_eq!(ms.len(), batch.len(), "one dropout mask per example");
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, e)| (e.columns.as_slice(), e.gold, masks.map(|ms| ms[i].as_slice())))
        .collect()
}

/// Mean cross-entropy over `batch` plus the softmax weight penalty.
pub fn batch_loss(
    params: &ClstmParams,
    batch: &[Example],
    masks: Option<&[Vec<f64>]>,
    l_max: usize,
    stride: usize,
    l2_scale: f64,
) -> f64 {
    batch_objective(params, &batch_items(batch, masks), l_max, stride, l2_scale, false).0
}

/// Batch loss and its exact gradient with respect to every parameter.
pub fn batch_gradient(
    params: &ClstmParams,
    batch: &[Example],
    masks: Option<&[Vec<f64>]>,
    l_max: usize,
    stride: usize,
    l2_scale: f64,
) -> (f64, ClstmParams) {
    let (loss, g) = batch_objective(params, &batch_items(batch, masks), l_max, stride, l2_scale, true);
    (
        loss,
        ClstmParams {
            shape: params.shape,
            data: g.expect("gradient requested"),
        },
    )
}

// ─── Adam ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient size mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/state size mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

// ─── Training ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ClstmModel {
    pub hyper: Hyperparams,
    pub params: ClstmParams,
    pub l_max: usize,
    pub embedding_name: String,
    pub min_lemma_freq: usize,
    pub freq: FrequencyTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean minibatch objective per epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train(
    instances: &[RelationInstance],
    table: &EmbeddingTable,
    hyper: &Hyperparams,
    min_lemma_freq: usize,
) -> Result<ClstmModel> {
    train_with_report(instances, table, hyper, min_lemma_freq).map(|(m, _)| m)
}

pub fn train_with_report(
    instances: &[RelationInstance],
    table: &EmbeddingTable,
    hyper: &Hyperparams,
    min_lemma_freq: usize,
) -> Result<(ClstmModel, TrainReport)> {
    hyper.check()?;
    if instances.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if min_lemma_freq == 0 {
        return Err(Error::InvalidArgument("min_lemma_freq must be at least 1".into()));
    }
    let mut golds = Vec::with_capacity(instances.len());
    for inst in instances {
        golds.push(
            inst.label
                .ok_or_else(|| Error::Training(format!("instance {} has no label", inst.id)))?,
        );
    }
    let freq = build_lemma_counts(instances);
    let seqs: Vec<Vec<Vec<f64>>> = instances
        .iter()
        .map(|i| build_sequence(i, table, &freq, min_lemma_freq))
        .collect();
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(2);
    let l_max = longest.max(hyper.filter_width);
    if l_max > longest {
        log::info!("l_max raised from {longest} to the filter width {}", hyper.filter_width);
    }

    let shape = Shape {
        v: table.dim(),
        k: hyper.num_filters,
        ws: hyper.filter_width,
        units: hyper.rnn_units,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = ClstmParams::init(shape, &mut rng);
    let mut adam = AdamState::new(params.data.len());
    let cfg = AdamConfig {
        lr: hyper.learning_rate,
        ..AdamConfig::default()
    };

    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let masks: Vec<Vec<f64>> = batch
                .iter()
                .map(|_| dropout_mask(shape.units, hyper.dropout_rate, &mut rng))
                .collect();
            let items: Vec<_> = batch
                .iter()
                .zip(&masks)
                .map(|(&i, mk)| (seqs[i].as_slice(), golds[i], Some(mk.as_slice())))
                .collect();
            let (loss, grad) = batch_objective(&params, &items, l_max, hyper.stride, hyper.l2_scale, true);
            adam_step(&mut params.data, &grad.expect("gradient requested"), &mut adam, &cfg);
            total += loss * batch.len() as f64;
        }
        let mean = total / instances.len() as f64;
        log::debug!("epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    if params.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Training("training diverged to non-finite parameters".into()));
    }

    let model = ClstmModel {
        hyper: *hyper,
        params,
        l_max,
        embedding_name: table.name().to_string(),
        min_lemma_freq,
        freq,
    };
    Ok((model, TrainReport { epoch_losses }))
}

// ─── Prediction ──────────────────────────────────────────────────────

impl ClstmModel {
    fn sequence(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
        if table.dim() != self.params.shape.v {
            return Err(Error::Dimension {
                expected: self.params.shape.v,
                found: table.dim(),
            });
        }
        if table.name() != self.embedding_name {
            log::warn!(
                "model was trained with embeddings {:?}, predicting with {:?}",
                self.embedding_name,
                table.name()
            );
        }
        let mut seq = build_sequence(inst, table, &self.freq, self.min_lemma_freq);
        if seq.len() > self.l_max {
            log::warn!(
                "instance {}: sequence length {} truncated to {}",
                inst.id,
                seq.len(),
                self.l_max
            );
            seq.truncate(self.l_max);
        }
        Ok(seq)
    }

    pub fn predict_proba(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<ClassDistribution> {
        let seq = self.sequence(inst, table)?;
        let tr = forward(&self.params, &seq, self.l_max, self.hyper.stride, None);
        Ok(ClassDistribution(tr.probs))
    }

    pub fn predict(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<Relation> {
        Ok(self.predict_proba(inst, table)?.argmax())
    }
}

// ─── Serialization ───────────────────────────────────────────────────

pub const CLSTM_KIND: &str = "clstm";

#[derive(Serialize, Deserialize)]
struct ClstmMeta {
    hyper: Hyperparams,
    classes: Vec<Relation>,
    shape: Shape,
    l_max: usize,
    embedding_name: String,
    min_lemma_freq: usize,
    freq: FrequencyTable,
}

impl ClstmModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ClstmMeta {
            hyper: self.hyper,
            classes: Relation::ALL.to_vec(),
            shape: self.params.shape,
            l_max: self.l_max,
            embedding_name: self.embedding_name.clone(),
            min_lemma_freq: self.min_lemma_freq,
            freq: self.freq.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut c = Container::new(CLSTM_KIND, json);
        for g in Group::ALL {
            c.push(Tensor::f64(
                g.name(),
                &self.params.shape.dims(g),
                self.params.group(g).to_vec(),
            ));
        }
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        if c.kind != CLSTM_KIND {
            return Err(Error::Model(format!("expected a clstm model, found {:?}", c.kind)));
        }
        let meta: ClstmMeta =
            serde_json::from_slice(&c.meta).map_err(|e| Error::Model(format!("bad metadata: {e}")))?;
        if meta.classes != Relation::ALL {
            return Err(Error::Model("unexpected class list".into()));
        }
        let shape = meta.shape;
        if shape.k != meta.hyper.num_filters
            || shape.ws != meta.hyper.filter_width
            || shape.units != meta.hyper.rnn_units
        {
            return Err(Error::Model("tensor shapes disagree with hyperparameters".into()));
        }
        if meta.l_max < shape.ws {
            return Err(Error::Model("l_max is smaller than the filter width".into()));
        }
        let mut params = ClstmParams::zeros(shape);
        for g in Group::ALL {
            let data = c.f64(g.name(), &shape.dims(g))?;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Model(format!("non-finite values in {}", g.name())));
            }
            params.group_mut(g).copy_from_slice(data);
        }
        Ok(ClstmModel {
            hyper: meta.hyper,
            params,
            l_max: meta.l_max,
            embedding_name: meta.embedding_name,
            min_lemma_freq: meta.min_lemma_freq,
            freq: meta.freq,
        })
    }
}

// ─── Numerics ────────────────────────────────────────────────────────

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
