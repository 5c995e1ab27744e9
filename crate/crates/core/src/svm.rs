//! Multiclass RBF-kernel SVM with probability outputs.
//!
//! One binary C-SVC per unordered class pair is trained with SMO (working
//! set of two, second-order selection). Each pair gets a sigmoid fitted on
//! cross-validated decision values, and the pairwise probabilities are
//! coupled into one class distribution. Prediction picks the most probable
//! class.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassDistribution, FrequencyTable, Relation, RelationInstance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{FeatureKey, FeaturePipeline, FeatureSpace, FeatureVector, LevinTable, MinMaxScaler};
use crate::modelio::{Container, Tensor};

// ─── Kernel ──────────────────────────────────────────────────────────

/// Squared Euclidean distance over the concatenated boolean + dense vector.
pub fn squared_distance(x: &FeatureVector, z: &FeatureVector) -> f64 {
    assert_eq!(x.dense.len(), z.dense.len(), "feature vectors from different spaces");
    let (a, b) = (&x.active, &z.active);
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let boolean = (a.len() + b.len() - 2 * common) as f64;
    let dense: f64 = x.dense.iter().zip(&z.dense).map(|(p, q)| (p - q) * (p - q)).sum();
    boolean + dense
}

pub fn rbf_kernel(x: &FeatureVector, z: &FeatureVector, gamma: f64) -> f64 {
    (-gamma * squared_distance(x, z)).exp()
}

fn kernel_matrix(xs: &[&FeatureVector], gamma: f64) -> Vec<f64> {
    let n = xs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf_kernel(xs[i], xs[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

// ─── SMO ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            c: 100.0,
            gamma: 0.001,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

/// Solution of the binary SVM dual.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function offset: f(x) = Σ αᵢyᵢK(xᵢ,x) + bias.
    pub bias: f64,
    /// Dual objective Σα − ½αᵀQα (to be maximized).
    pub objective: f64,
    /// Maximal KKT violation m(α) − M(α) at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
}

const TAU: f64 = 1e-12;

/// Solve the C-SVC dual over a precomputed row-major kernel matrix.
///
/// `y` holds ±1 labels; both classes must be present.
pub fn solve_dual(kernel: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let n = y.len();
    assert_eq!(kernel.len(), n * n, "kernel matrix must be n×n");
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::Training("binary SVM needs both classes".into()));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    loop {
        // select i: argmax over I_up of -y G
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut sel_i = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 {
                !is_upper(alpha[t])
            } else {
                !is_lower(alpha[t])
            };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                sel_i = t;
            }
        }
        // select j: second-order gain over I_low
        let mut sel_j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 {
                !is_lower(alpha[t])
            } else {
                !is_upper(alpha[t])
            };
            if !in_low {
                continue;
            }
            let ygt = y[t] * grad[t];
            if ygt >= gmax2 {
                gmax2 = ygt;
            }
            if sel_i != usize::MAX {
                let b = gmax + ygt;
                if b > 0.0 {
                    let i = sel_i;
                    let a = kernel[i * n + i] + kernel[t * n + t] - 2.0 * kernel[i * n + t];
                    let a = if a > 0.0 { a } else { TAU };
                    if -(b * b) / a <= obj_min {
                        obj_min = -(b * b) / a;
                        sel_j = t;
                    }
                }
            }
        }
        gap = gmax + gmax2;
        if gap < tol || sel_i == usize::MAX || sel_j == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            log::warn!("SMO reached the iteration cap ({max_iter}) with KKT gap {gap:e}");
            break;
        }
        iterations += 1;

        let (i, j) = (sel_i, sel_j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += q(t, i) * dai + q(t, j) * daj;
        }
    }

    // offset from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();

    Ok(DualSolution {
        alpha,
        bias: -rho,
        objective,
        kkt_gap: gap.max(0.0),
        iterations,
    })
}

/// A trained binary SVM: support vectors with coefficients αᵢyᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvmModel {
    pub support: Vec<FeatureVector>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub gamma: f64,
}

impl BinarySvmModel {
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &a)| a * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Train a binary SVM on `x` with ±1 labels `y`.
pub fn train_binary_smo(x: &[FeatureVector], y: &[f64], params: &SmoParams) -> Result<(BinarySvmModel, DualSolution)> {
    let refs: Vec<&FeatureVector> = x.iter().collect();
    let kernel = kernel_matrix(&refs, params.gamma);
    train_from_kernel(&refs, y, &kernel, params)
}

fn train_from_kernel(
    x: &[&FeatureVector],
    y: &[f64],
    kernel: &[f64],
    params: &SmoParams,
) -> Result<(BinarySvmModel, DualSolution)> {
    if x.len() < 2 {
        return Err(Error::Training("binary SVM needs at least two points".into()));
    }
    let sol = solve_dual(kernel, y, params.c, params.tol, params.max_iter)?;
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(x[t].clone());
            coef.push(a * y[t]);
        }
    }
    Ok((
        BinarySvmModel {
            support,
            coef,
            bias: sol.bias,
            c: params.c,
            gamma: params.gamma,
        },
        sol,
    ))
}

// ─── Sigmoid calibration ─────────────────────────────────────────────

/// P(y = +1 | score) = 1 / (1 + exp(a·score + b)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidCalibrator {
    pub a: f64,
    pub b: f64,
}

impl SigmoidCalibrator {
    pub fn probability(&self, score: f64) -> f64 {
        let f = score * self.a + self.b;
        if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        }
    }
}

/// Fit a sigmoid to decision values by regularized Newton iterations on the
/// log-likelihood with smoothed targets (N₊+1)/(N₊+2) and 1/(N₋+2).
pub fn fit_sigmoid(scores: &[f64], labels: &[f64]) -> SigmoidCalibrator {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y > 0.0 { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let f = s * a + b;
                if f >= 0.0 {
                    t * f + (1.0 + (-f).exp()).ln()
                } else {
                    (t - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };

    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const GRAD_TOL: f64 = 1e-10;

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let f = s * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.hypot(g2) < GRAD_TOL {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    SigmoidCalibrator { a, b }
}

// ─── Pairwise coupling ───────────────────────────────────────────────

const COUPLING_TOL: f64 = 1e-10;
const COUPLING_MAX_ITER: usize = 1000;

/// Couple pairwise probabilities `r[i][j] = P(i | i or j)` into one
/// distribution by minimizing Σᵢ Σ_{j≠i} (rⱼᵢpᵢ − rᵢⱼpⱼ)² subject to Σp = 1.
///
/// Panics unless every off-diagonal entry lies in (0, 1) and
/// `r[j][i] = 1 − r[i][j]`.
pub fn pairwise_coupling(r: &[Vec<f64>]) -> Vec<f64> {
    let k = r.len();
    assert!(k >= 2, "coupling needs at least two classes");
    for i in 0..k {
        assert_eq!(r[i].len(), k, "pairwise matrix must be square");
        for j in 0..k {
            if i != j {
                let v = r[i][j];
                assert!(v > 0.0 && v < 1.0, "r[{i}][{j}] = {v} outside (0, 1)");
                assert!(
                    (v + r[j][i] - 1.0).abs() <= 1e-9,
                    "r[{i}][{j}] and r[{j}][{i}] are not complementary"
                );
            }
        }
    }

    let mut q = vec![vec![0.0; k]; k];
    for t in 0..k {
        for j in 0..k {
            if j != t {
                q[t][t] += r[j][t] * r[j][t];
                q[t][j] = -r[j][t] * r[t][j];
            }
        }
    }

    let mut p = vec![1.0 / k as f64; k];
    let mut qp = vec![0.0; k];
    let mut converged = false;
    for _ in 0..COUPLING_MAX_ITER {
        let mut pqp = 0.0;
        for t in 0..k {
            qp[t] = (0..k).map(|j| q[t][j] * p[j]).sum();
            pqp += p[t] * qp[t];
        }
        let residual = qp.iter().map(|v| (v - pqp).abs()).fold(0.0, f64::max);
        if residual < COUPLING_TOL {
            converged = true;
            break;
        }
        for t in 0..k {
            let diff = (-qp[t] + pqp) / q[t][t];
            p[t] += diff;
            pqp = (pqp + diff * (diff * q[t][t] + 2.0 * qp[t])) / (1.0 + diff) / (1.0 + diff);
            for j in 0..k {
                qp[j] = (qp[j] + diff * q[t][j]) / (1.0 + diff);
                p[j] /= 1.0 + diff;
            }
        }
    }
    if !converged {
        log::debug!("pairwise coupling fixed point did not converge; solving directly");
        p = solve_coupling_system(&q);
    }
    for v in p.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Solve [Q e; eᵀ 0][p; λ] = [0; 1] by Gaussian elimination.
fn solve_coupling_system(q: &[Vec<f64>]) -> Vec<f64> {
    let k = q.len();
    let n = k + 1;
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..k {
        m[i][..k].copy_from_slice(&q[i]);
        m[i][k] = 1.0;
        m[k][i] = 1.0;
    }
    m[k][n] = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for c in col..=n {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..k).map(|i| m[i][n] / m[i][i]).collect()
}

// ─── Multiclass model ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub min_lemma_freq: usize,
    pub calibration_folds: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 100.0,
            gamma: 0.001,
            tol: 1e-3,
            max_iter: 10_000_000,
            min_lemma_freq: crate::corpus::DEFAULT_MIN_LEMMA_FREQ,
            calibration_folds: 5,
            seed: 0,
        }
    }
}

impl SvmConfig {
    fn smo(&self) -> SmoParams {
        SmoParams {
            c: self.c,
            gamma: self.gamma,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPair {
    pub svm: BinarySvmModel,
    pub calibrator: SigmoidCalibrator,
}

/// The binary problem for classes `first` (+1) vs `second` (−1). `fitted`
/// is `None` when a class had no training instances.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub first: Relation,
    pub second: Relation,
    pub fitted: Option<FittedPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub embedding_name: String,
    pub embedding_dim: usize,
    pub pipeline: FeaturePipeline,
    pub pairs: Vec<PairModel>,
}

fn class_pairs() -> Vec<(Relation, Relation)> {
    let mut out = Vec::new();
    for (i, &a) in Relation::ALL.iter().enumerate() {
        for &b in &Relation::ALL[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

/// Train the one-vs-one model on labeled instances.
pub fn train_multiclass(
    train: &[RelationInstance],
    table: &EmbeddingTable,
    levin: LevinTable,
    config: &SvmConfig,
) -> Result<SvmModel> {
    let labels: Vec<Relation> = train
        .iter()
        .map(|inst| {
            inst.label
                .ok_or_else(|| Error::Training(format!("instance {} has no label", inst.id)))
        })
        .collect::<Result<_>>()?;
    let present = Relation::ALL.iter().filter(|r| labels.contains(r)).count();
    if present < 2 {
        return Err(Error::Training(format!("need at least two classes, found {present}")));
    }
    let pipeline = FeaturePipeline::fit(train, table, levin, config.min_lemma_freq)?;
    let vectors: Vec<FeatureVector> = train
        .iter()
        .map(|inst| pipeline.transform(inst, table))
        .collect::<Result<_>>()?;

    let pairs = class_pairs()
        .into_par_iter()
        .enumerate()
        .map(|(p, (first, second))| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == first || labels[i] == second)
                .collect();
            let has_first = idx.iter().any(|&i| labels[i] == first);
            let has_second = idx.iter().any(|&i| labels[i] == second);
            if !has_first || !has_second {
                log::info!("pair {first}/{second} skipped: a class has no training instances");
                return Ok(PairModel {
                    first,
                    second,
                    fitted: None,
                });
            }
            let xs: Vec<&FeatureVector> = idx.iter().map(|&i| &vectors[i]).collect();
            let ys: Vec<f64> = idx
                .iter()
                .map(|&i| if labels[i] == first { 1.0 } else { -1.0 })
                .collect();
            let fitted = train_pair(&xs, &ys, config, config.seed.wrapping_add(p as u64))?;
            Ok(PairModel {
                first,
                second,
                fitted: Some(fitted),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SvmModel {
        config: *config,
        embedding_name: table.name().to_string(),
        embedding_dim: table.dim(),
        pipeline,
        pairs,
    })
}

fn train_pair(xs: &[&FeatureVector], ys: &[f64], config: &SvmConfig, seed: u64) -> Result<FittedPair> {
    let params = config.smo();
    let kernel = kernel_matrix(xs, params.gamma);
    let (svm, _) = train_from_kernel(xs, ys, &kernel, &params)?;
    let scores = calibration_scores(xs, ys, &kernel, &svm, config, seed)?;
    let calibrator = fit_sigmoid(&scores, ys);
    Ok(FittedPair { svm, calibrator })
}

/// Cross-validated decision values; whole-subset scores when the folds
/// would hold fewer than two points.
fn calibration_scores(
    xs: &[&FeatureVector],
    ys: &[f64],
    kernel: &[f64],
    full: &BinarySvmModel,
    config: &SvmConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = xs.len();
    let folds = config.calibration_folds.max(2);
    if n / folds < 2 {
        return Ok(xs.iter().map(|x| full.decision(x)).collect());
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let params = config.smo();
    let mut scores = vec![0.0; n];
    for f in 0..folds {
        let (begin, end) = (f * n / folds, (f + 1) * n / folds);
        let held: &[usize] = &perm[begin..end];
        let rest: Vec<usize> = perm[..begin].iter().chain(&perm[end..]).copied().collect();
        let sub_y: Vec<f64> = rest.iter().map(|&i| ys[i]).collect();
        let n_pos = sub_y.iter().filter(|&&y| y > 0.0).count();
        if n_pos == 0 || n_pos == sub_y.len() {
            let constant = if n_pos == 0 { -1.0 } else { 1.0 };
            held.iter().for_each(|&i| scores[i] = constant);
            continue;
        }
        let m = rest.len();
        let mut sub_k = vec![0.0; m * m];
        for (a, &i) in rest.iter().enumerate() {
            for (b, &j) in rest.iter().enumerate() {
                sub_k[a * m + b] = kernel[i * n + j];
            }
        }
        let sol = solve_dual(&sub_k, &sub_y, params.c, params.tol, params.max_iter)?;
        for &h in held {
            let mut s = sol.bias;
            for (a, &i) in rest.iter().enumerate() {
                if sol.alpha[a] > 0.0 {
                    s += sol.alpha[a] * sub_y[a] * kernel[i * n + h];
                }
            }
            scores[h] = s;
        }
    }
    Ok(scores)
}

const MIN_PAIR_PROB: f64 = 1e-7;

impl SvmModel {
    fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.embedding_dim {
            return Err(Error::Dimension {
                expected: self.embedding_dim,
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
        Ok(())
    }

    pub fn predict_proba(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<ClassDistribution> {
        self.check_table(table)?;
        let x = self.pipeline.transform(inst, table)?;
        Ok(self.proba_from_vector(&x))
    }

    pub fn proba_from_vector(&self, x: &FeatureVector) -> ClassDistribution {
        let k = Relation::COUNT;
        let mut r = vec![vec![0.0; k]; k];
        for pair in &self.pairs {
            let (i, j) = (pair.first.index(), pair.second.index());
            let rij = match &pair.fitted {
                Some(f) => f
                    .calibrator
                    .probability(f.svm.decision(x))
                    .clamp(MIN_PAIR_PROB, 1.0 - MIN_PAIR_PROB),
                None => 0.5,
            };
            r[i][j] = rij;
            r[j][i] = 1.0 - rij;
        }
        let p = pairwise_coupling(&r);
        let mut out = [0.0; Relation::COUNT];
        out.copy_from_slice(&p);
        ClassDistribution(out)
    }

    pub fn predict(&self, inst: &RelationInstance, table: &EmbeddingTable) -> Result<Relation> {
        Ok(self.predict_proba(inst, table)?.argmax())
    }

    pub fn trained_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| p.fitted.is_some()).count()
    }
}

// ─── Model file ──────────────────────────────────────────────────────

pub const SVM_KIND: &str = "svm";

#[derive(Serialize, Deserialize)]
struct SvmMeta {
    config: SvmConfig,
    classes: Vec<Relation>,
    embedding_name: String,
    embedding_dim: usize,
    min_lemma_freq: usize,
    freq: FrequencyTable,
    levin: LevinTable,
    feature_keys: Vec<FeatureKey>,
    pairs: Vec<PairMeta>,
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    first: Relation,
    second: Relation,
    support_vectors: Option<usize>,
}

impl SvmModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = SvmMeta {
            config: self.config,
            classes: Relation::ALL.to_vec(),
            embedding_name: self.embedding_name.clone(),
            embedding_dim: self.embedding_dim,
            min_lemma_freq: self.pipeline.min_lemma_freq,
            freq: self.pipeline.freq.clone(),
            levin: self.pipeline.levin.clone(),
            feature_keys: self.pipeline.space.keys().to_vec(),
            pairs: self
                .pairs
                .iter()
                .map(|p| PairMeta {
                    first: p.first,
                    second: p.second,
                    support_vectors: p.fitted.as_ref().map(|f| f.svm.support.len()),
                })
                .collect(),
        };
        let mut c = Container::new(SVM_KIND, serde_json::to_vec(&meta).expect("meta serializes"));
        let d = self.pipeline.scaler.dim();
        c.push(Tensor::f64("scaler.min", &[d], self.pipeline.scaler.min.clone()));
        c.push(Tensor::f64("scaler.max", &[d], self.pipeline.scaler.max.clone()));
        for (p, pair) in self.pairs.iter().enumerate() {
            let Some(f) = &pair.fitted else { continue };
            let n = f.svm.support.len();
            c.push(Tensor::f64(
                format!("pair.{p}.params"),
                &[5],
                vec![f.svm.bias, f.svm.c, f.svm.gamma, f.calibrator.a, f.calibrator.b],
            ));
            c.push(Tensor::f64(format!("pair.{p}.coef"), &[n], f.svm.coef.clone()));
            let dense: Vec<f64> = f.svm.support.iter().flat_map(|v| v.dense.iter().copied()).collect();
            c.push(Tensor::f64(format!("pair.{p}.dense"), &[n, d], dense));
            let mut offsets = vec![0u64];
            let mut active = Vec::new();
            for v in &f.svm.support {
                active.extend(v.active.iter().map(|&i| i as u64));
                offsets.push(active.len() as u64);
            }
            c.push(Tensor::u64(format!("pair.{p}.offsets"), &[n + 1], offsets));
            let len = active.len();
            c.push(Tensor::u64(format!("pair.{p}.active"), &[len], active));
        }
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        if c.kind != SVM_KIND {
            return Err(Error::Model(format!("expected an svm model, found {:?}", c.kind)));
        }
        let meta: SvmMeta = serde_json::from_slice(&c.meta).map_err(|e| Error::Model(format!("bad metadata: {e}")))?;
        if meta.classes != Relation::ALL {
            return Err(Error::Model("unexpected class list".into()));
        }
        let d = 3 * meta.embedding_dim;
        let scaler = MinMaxScaler {
            min: c.f64("scaler.min", &[d])?.to_vec(),
            max: c.f64("scaler.max", &[d])?.to_vec(),
        };
        let space = FeatureSpace::from_sorted_keys(meta.feature_keys)?;
        let mut pairs = Vec::with_capacity(meta.pairs.len());
        for (p, pm) in meta.pairs.into_iter().enumerate() {
            let fitted = match pm.support_vectors {
                None => None,
                Some(n) => {
                    let params = c.f64(&format!("pair.{p}.params"), &[5])?;
                    let coef = c.f64(&format!("pair.{p}.coef"), &[n])?.to_vec();
                    let dense = c.f64(&format!("pair.{p}.dense"), &[n, d])?;
                    let (_, offsets) = c.u64(&format!("pair.{p}.offsets"))?;
                    let (_, active) = c.u64(&format!("pair.{p}.active"))?;
                    if offsets.len() != n + 1 || offsets[n] as usize != active.len() {
                        return Err(Error::Model(format!("pair {p}: inconsistent support vectors")));
                    }
                    let support = (0..n)
                        .map(|s| {
                            let (lo, hi) = (offsets[s] as usize, offsets[s + 1] as usize);
                            if lo > hi || hi > active.len() {
                                return Err(Error::Model(format!("pair {p}: bad offsets")));
                            }
                            let act: Vec<u32> = active[lo..hi].iter().map(|&i| i as u32).collect();
                            if act.iter().any(|&i| i as usize >= space.len()) {
                                return Err(Error::Model(format!("pair {p}: feature index out of range")));
                            }
                            Ok(FeatureVector {
                                active: act,
                                dense: dense[s * d..(s + 1) * d].to_vec(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(FittedPair {
                        svm: BinarySvmModel {
                            support,
                            coef,
                            bias: params[0],
                            c: params[1],
                            gamma: params[2],
                        },
                        calibrator: SigmoidCalibrator {
                            a: params[3],
                            b: params[4],
                        },
                    })
                }
            };
            pairs.push(PairModel {
                first: pm.first,
                second: pm.second,
                fitted,
            });
        }
        Ok(SvmModel {
            config: meta.config,
            embedding_name: meta.embedding_name,
            embedding_dim: meta.embedding_dim,
            pipeline: FeaturePipeline {
                min_lemma_freq: meta.min_lemma_freq,
                freq: meta.freq,
                levin: meta.levin,
                space,
                scaler,
            },
            pairs,
        })
    }
}
