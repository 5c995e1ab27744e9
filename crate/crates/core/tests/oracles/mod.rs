//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.

#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

// ─── SVM dual QP ─────────────────────────────────────────────────────

/// Gaussian kernel matrix over dense points, written out directly.
pub fn rbf_matrix(points: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                    (-gamma * d).exp()
                })
                .collect()
        })
        .collect()
}

/// Σα − ½ Σᵢⱼ αᵢαⱼyᵢyⱼKᵢⱼ
pub fn dual_objective(k: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Maximal violating pair gap m(α) − M(α) of the C-SVC dual.
pub fn kkt_violation(k: &[Vec<f64>], y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = y.len();
    let grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j] * alpha[j]).sum::<f64>() - 1.0)
        .collect();
    let eps = 1e-12 * c;
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for i in 0..n {
        let v = -y[i] * grad[i];
        let in_up = (y[i] > 0.0 && alpha[i] < c - eps) || (y[i] < 0.0 && alpha[i] > eps);
        let in_low = (y[i] > 0.0 && alpha[i] > eps) || (y[i] < 0.0 && alpha[i] < c - eps);
        if in_up {
            up = up.max(v);
        }
        if in_low {
            low = low.min(v);
        }
    }
    (up - low).max(0.0)
}

/// Euclidean projection onto {0 ≤ α ≤ C, yᵀα = 0} by bisection on the
/// multiplier of the equality constraint.
fn project(z: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        z.iter()
            .zip(y)
            .map(|(&zi, &yi)| (zi - lam * yi).clamp(0.0, c))
            .collect()
    };
    let g = |a: &[f64]| a.iter().zip(y).map(|(a, y)| a * y).sum::<f64>();
    let bound = z.iter().fold(0.0f64, |m, v| m.max(v.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Maximize the C-SVC dual by accelerated projected gradient with adaptive
/// restart. Returns (α, objective).
pub fn qp_oracle(k: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();
    // Lipschitz constant: largest eigenvalue of Q by power iteration
    let mut v = vec![1.0; n];
    let mut lip = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lip = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lip * 1.01);
    let f = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += 0.5 * a[i] * q[i][j] * a[j];
            }
        }
        s - a.iter().sum::<f64>()
    };

    let mut x = vec![0.0; n];
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    for _ in 0..50_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * yk[j]).sum::<f64>() - 1.0)
            .collect();
        let z: Vec<f64> = yk.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let xn = project(&z, y, c);
        let fxn = f(&xn);
        // gradient mapping norm: zero exactly at a KKT point
        let mapping = xn.iter().zip(&yk).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / step;
        if fxn > fx {
            // restart momentum
            t = 1.0;
            yk = x.clone();
            continue;
        }
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        yk = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        fx = fxn;
        t = tn;
        if mapping < 1e-9 {
            break;
        }
    }
    // identify the bound set, then solve the free variables exactly
    match polish(&q, y, c, &x) {
        Some(p) if f(&p) <= fx => {
            let obj = -f(&p);
            (p, obj)
        }
        _ => (x, -fx),
    }
}

/// Solve the KKT system of the equality-constrained QP restricted to the
/// variables strictly inside (0, C) at `x`. Returns `None` if the solution
/// leaves the box.
fn polish(q: &[Vec<f64>], y: &[f64], c: f64, x: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let tol = 1e-6 * c;
    let mut alpha: Vec<f64> = x
        .iter()
        .map(|&a| {
            if a < tol {
                0.0
            } else if a > c - tol {
                c
            } else {
                a
            }
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0 && alpha[i] < c).collect();
    let m = free.len();
    if m == 0 {
        return Some(alpha);
    }
    // unknowns: α_F, μ
    let dim = m + 1;
    let mut a = vec![vec![0.0; dim + 1]; dim];
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            a[r][s] = q[i][j];
        }
        a[r][m] = y[i];
        let fixed: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| q[i][j] * alpha[j]).sum();
        a[r][dim] = 1.0 - fixed;
        a[m][r] = y[i];
    }
    a[m][dim] = -(0..n)
        .filter(|j| !free.contains(j))
        .map(|j| y[j] * alpha[j])
        .sum::<f64>();
    for col in 0..dim {
        let piv = (col..dim).max_by(|&p, &r| a[p][col].abs().total_cmp(&a[r][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..dim {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..=dim {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    for (r, &i) in free.iter().enumerate() {
        let v = a[r][dim] / a[r][r];
        if !(-1e-12..=c + 1e-12).contains(&v) {
            return None;
        }
        alpha[i] = v.clamp(0.0, c);
    }
    Some(alpha)
}

// ─── Metrics ─────────────────────────────────────────────────────────

/// Per-class F1, macro-F1 and micro-F1 computed from raw label lists,
/// without any confusion-matrix machinery.
pub fn f1_from_labels(gold: &[usize], pred: &[usize], classes: usize) -> (Vec<f64>, f64, f64) {
    let mut per = Vec::new();
    for c in 0..classes {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let predicted = pred.iter().filter(|p| **p == c).count() as f64;
        let actual = gold.iter().filter(|g| **g == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per.push(f1);
    }
    let macro_f1 = per.iter().sum::<f64>() / classes as f64;
    // pooled over classes: Σtp / Σpredicted and Σtp / Σactual
    let tp: f64 = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64;
    let n = gold.len() as f64;
    let (p, r) = (tp / n, tp / n);
    let micro = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (per, macro_f1, micro)
}

// ─── C-LSTM building blocks ──────────────────────────────────────────

/// Sliding-window convolution with ReLU, as four nested loops.
/// `input[row][col]`, `filters[f][offset][row]`.
pub fn conv_oracle(input: &[Vec<f64>], filters: &[Vec<Vec<f64>>], bias: &[f64], stride: usize) -> Vec<Vec<f64>> {
    let v = input.len();
    let l = input[0].len();
    let ws = filters[0].len();
    let m = (l - ws) / stride + 1;
    let mut out = vec![vec![0.0; m]; filters.len()];
    for (f, filt) in filters.iter().enumerate() {
        for j in 0..m {
            let mut s = bias[f];
            for off in 0..ws {
                for r in 0..v {
                    s += filt[off][r] * input[r][j * stride + off];
                }
            }
            out[f][j] = if s > 0.0 { s } else { 0.0 };
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step per input, gates computed one scalar at a time.
/// Weights: `w_*[unit][input]`, `u_*[unit][unit]`, `b_*[unit]`.
pub struct LstmRef {
    pub w: [Vec<Vec<f64>>; 4],
    pub u: [Vec<Vec<f64>>; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmRef {
    /// Gate order: input, forget, output, candidate.
    pub fn run(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let units = self.b[0].len();
        let mut h = vec![0.0; units];
        let mut c = vec![0.0; units];
        for x in xs {
            let pre = |g: usize, unit: usize| -> f64 {
                let mut s = self.b[g][unit];
                for (k, xv) in x.iter().enumerate() {
                    s += self.w[g][unit][k] * xv;
                }
                for (k, hv) in h.iter().enumerate() {
                    s += self.u[g][unit][k] * hv;
                }
                s
            };
            let mut h_new = vec![0.0; units];
            let mut c_new = vec![0.0; units];
            for unit in 0..units {
                let i = sigmoid(pre(0, unit));
                let f = sigmoid(pre(1, unit));
                let o = sigmoid(pre(2, unit));
                let g = pre(3, unit).tanh();
                c_new[unit] = f * c[unit] + i * g;
                h_new[unit] = o * c_new[unit].tanh();
            }
            h = h_new;
            c = c_new;
        }
        h
    }
}
