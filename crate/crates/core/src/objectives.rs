//! Loss functions: MAE, pairwise rank loss, their sum, and the SRCC loss
//! with an exact (evaluation) form and a differentiable soft-rank surrogate
//! for training.
//!
//! Each loss exists twice: a plain `f64` evaluation form and a graph form
//! producing a differentiable scalar node over a prediction vector.

use ndarray::IxDyn;

use crate::autograd::{Arr, Graph, Val};
use crate::error::{QaError, Result};

/// Ascending ranks starting at 1; tied values share the average of their
/// positions.
pub fn rank_with_ties(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Differentiable rank estimate: `1 + Σ_{j≠i} sigmoid((o_i − o_j)/τ)`.
pub fn soft_rank(values: &[f64], tau: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            1.0 + (0..n)
                .filter(|&j| j != i)
                .map(|j| sigmoid((values[i] - values[j]) / tau))
                .sum::<f64>()
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_batch(o: &[f64], s: &[f64]) -> Result<()> {
    if o.is_empty() {
        return Err(QaError::DegenerateBatch("empty batch".into()));
    }
    if o.len() != s.len() {
        return Err(QaError::ShapeMismatch(format!(
            "predictions ({}) vs ground truth ({})",
            o.len(),
            s.len()
        )));
    }
    if o.iter().chain(s.iter()).any(|v| !v.is_finite()) {
        return Err(QaError::InvalidInput("non-finite batch value".into()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Mean absolute error over a batch.
pub fn mae_loss(o: &[f64], s: &[f64]) -> Result<f64> {
    check_batch(o, s)?;
    let n = o.len() as f64;
    Ok(o.iter().zip(s).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

fn rank_sign(si: f64, sj: f64) -> f64 {
    if si >= sj {
        1.0
    } else {
        -1.0
    }
}

/// Pairwise hinge rank loss:
/// `(1/B²)·Σ_{i,j} max(0, |s_i−s_j| − e(s_i,s_j)·(o_i−o_j))`.
pub fn rank_loss(o: &[f64], s: &[f64]) -> Result<f64> {
    check_batch(o, s)?;
    let b = o.len();
    let mut acc = 0.0;
    for i in 0..b {
        for j in 0..b {
            let term = (s[i] - s[j]).abs() - rank_sign(s[i], s[j]) * (o[i] - o[j]);
            acc += term.max(0.0);
        }
    }
    Ok(acc / (b * b) as f64)
}

/// `L = L_MAE + L_rank`.
pub fn combined_loss(o: &[f64], s: &[f64]) -> Result<f64> {
    Ok(mae_loss(o, s)? + rank_loss(o, s)?)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    num / (da.sqrt() * db.sqrt())
}

/// Spearman rank correlation: Pearson correlation of tie-averaged ranks.
/// A constant argument is degenerate; the result is defined as 0 with a
/// warning so evaluation never crashes on a collapsed predictor.
pub fn srcc_exact(o: &[f64], s: &[f64]) -> Result<f64> {
    check_batch(o, s)?;
    if o.len() < 2 {
        return Err(QaError::DegenerateBatch("SRCC needs at least 2 samples".into()));
    }
    if is_constant(o) || is_constant(s) {
        log::warn!("SRCC on a constant vector is undefined; reporting 0");
        return Ok(0.0);
    }
    Ok(pearson(&rank_with_ties(o), &rank_with_ties(s)))
}

/// Which surrogate `srcc_loss` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrccMode {
    /// `1 − SRCC` on hard ranks; piecewise constant in the predictions.
    Exact,
    /// `1 − Pearson(softrank(o), rank(s))`; gradients flow to predictions.
    Soft,
}

/// Default soft-rank temperature.
pub const DEFAULT_SRCC_TAU: f64 = 0.1;

/// `L_SRCC = 1 − SRCC`, in the selected mode. A constant ground-truth batch
/// is a training-time error (rank information has collapsed).
pub fn srcc_loss(o: &[f64], s: &[f64], mode: SrccMode, tau: f64) -> Result<f64> {
    check_batch(o, s)?;
    if o.len() < 2 {
        return Err(QaError::DegenerateBatch("SRCC needs at least 2 samples".into()));
    }
    if is_constant(s) {
        return Err(QaError::DegenerateBatch(
            "constant ground truth in SRCC batch".into(),
        ));
    }
    match mode {
        SrccMode::Exact => Ok(1.0 - srcc_exact(o, s)?),
        SrccMode::Soft => {
            let sr = soft_rank(o, tau);
            let hr = rank_with_ties(s);
            Ok(1.0 - guarded_pearson(&sr, &hr))
        }
    }
}

// Same epsilon guard as the graph form, so values agree bit-for-bit.
fn guarded_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    num / ((da + PEARSON_EPS).sqrt() * (db + PEARSON_EPS).sqrt())
}

const PEARSON_EPS: f64 = 1e-12;

// ---- graph forms ----

fn as_vec(g: &Graph, o: Val) -> usize {
    let shape = g.shape(o);
    assert_eq!(shape.len(), 1, "loss expects a 1-D prediction vector");
    shape[0]
}

fn const_vec(g: &Graph, v: &[f64]) -> Val {
    g.leaf(Arr::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap())
}

/// Pairwise difference matrix `D[i,j] = o_i − o_j` as a graph node.
fn diff_matrix(g: &Graph, o: Val, b: usize) -> Val {
    let col = g.reshape(o, &[b, 1]);
    let row = g.reshape(o, &[1, b]);
    let colb = g.broadcast(col, &[b, b]);
    let rowb = g.broadcast(row, &[b, b]);
    g.sub(colb, rowb)
}

/// Graph form of [`mae_loss`].
pub fn mae_loss_graph(g: &Graph, o: Val, s: &[f64]) -> Val {
    let b = as_vec(g, o);
    assert_eq!(b, s.len());
    let sv = const_vec(g, s);
    let d = g.sub(o, sv);
    let a = g.abs(d);
    g.mean_all(a)
}

/// Graph form of [`rank_loss`].
pub fn rank_loss_graph(g: &Graph, o: Val, s: &[f64]) -> Val {
    let b = as_vec(g, o);
    assert_eq!(b, s.len());
    let d = diff_matrix(g, o, b);
    let mut sign = Arr::zeros(IxDyn(&[b, b]));
    let mut sdiff = Arr::zeros(IxDyn(&[b, b]));
    for i in 0..b {
        for j in 0..b {
            sign[[i, j]] = rank_sign(s[i], s[j]);
            sdiff[[i, j]] = (s[i] - s[j]).abs();
        }
    }
    let sign = g.leaf(sign);
    let sdiff = g.leaf(sdiff);
    let signed = g.mul(sign, d);
    let margin = g.sub(sdiff, signed);
    let hinge = g.relu(margin);
    g.mean_all(hinge)
}

/// Graph form of [`combined_loss`].
pub fn combined_loss_graph(g: &Graph, o: Val, s: &[f64]) -> Val {
    let m = mae_loss_graph(g, o, s);
    let r = rank_loss_graph(g, o, s);
    g.add(m, r)
}

/// Graph form of the soft SRCC loss. Ground-truth ranks stay hard (no
/// gradient to `s`).
pub fn srcc_soft_loss_graph(g: &Graph, o: Val, s: &[f64], tau: f64) -> Result<Val> {
    let b = as_vec(g, o);
    assert_eq!(b, s.len());
    if b < 2 {
        return Err(QaError::DegenerateBatch("SRCC needs at least 2 samples".into()));
    }
    if is_constant(s) {
        return Err(QaError::DegenerateBatch(
            "constant ground truth in SRCC batch".into(),
        ));
    }
    let d = diff_matrix(g, o, b);
    let scaled = g.mul_scalar(d, 1.0 / tau);
    let sig = g.sigmoid(scaled);
    // Row sums include the diagonal sigmoid(0)=0.5, so softrank = rowsum + 0.5.
    let rowsum = g.sum_axis_keep(sig, 1);
    let rowsum = g.reshape(rowsum, &[b]);
    let softrank = g.add_scalar(rowsum, 0.5);

    let hr = rank_with_ties(s);
    let hr_mean = hr.iter().sum::<f64>() / b as f64;
    let hr_centered: Vec<f64> = hr.iter().map(|r| r - hr_mean).collect();
    let hr_ss: f64 = hr_centered.iter().map(|x| x * x).sum();

    let mean = g.mean_all(softrank);
    let mean_b = g.broadcast(g.reshape(mean, &[1]), &[b]);
    let centered = g.sub(softrank, mean_b);
    let hrc = const_vec(g, &hr_centered);
    let prod = g.mul(centered, hrc);
    let num = g.sum_all(prod);
    let sq = g.mul(centered, centered);
    let ss = g.sum_all(sq);
    let ss_eps = g.add_scalar(ss, PEARSON_EPS);
    let denom = g.sqrt(ss_eps);
    let denom = g.mul_scalar(denom, (hr_ss + PEARSON_EPS).sqrt());
    let corr = g.div(num, denom);
    let neg = g.neg(corr);
    Ok(g.add_scalar(neg, 1.0))
}
