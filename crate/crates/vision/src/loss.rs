//! Training objectives: label-smoothed cross-entropy over episode logits
//! and a multi-head InfoNCE term that pulls queries toward same-class
//! support embeddings.

use crate::autodiff::{Tape, Val};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Label-smoothed cross-entropy, averaged over queries.
///
/// The target distribution puts 1−ε on the true class and ε/(N−1) on each
/// other class. `logits` is |Q|×N (one row per query), `truth` the relative
/// label per row. N=1 episodes degenerate to a constant zero loss.
pub fn ce_label_smoothing_loss(
    t: &mut Tape,
    logits: Val,
    truth: &[u32],
    epsilon: f64,
) -> Result<Val> {
    let (q, n) = t.value(logits).shape();
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "label smoothing must lie in [0,1), got {}",
            epsilon
        )));
    }
    if truth.len() != q {
        return Err(Error::Contract(format!(
            "{} logits rows but {} truth labels",
            q,
            truth.len()
        )));
    }
    let mut targets = Mat::zeros(q, n);
    for (row, &y) in truth.iter().enumerate() {
        if y as usize >= n {
            return Err(Error::Contract(format!(
                "truth label {} out of range for {} classes",
                y, n
            )));
        }
        if n == 1 {
            *targets.at_mut(row, 0) = 1.0;
        } else {
            let off = epsilon / (n as f64 - 1.0);
            for k in 0..n {
                *targets.at_mut(row, k) = if k == y as usize { 1.0 - epsilon } else { off };
            }
        }
    }
    let probs = t.row_softmax(logits);
    let logp = t.ln(probs);
    let y = t.leaf(targets);
    let weighted = t.mul(logp, y)?;
    let total = t.sum_all(weighted);
    Ok(t.scale_k(total, -1.0 / q as f64))
}

/// Multi-head InfoNCE over L2-normalized projected embeddings.
///
/// Per head h and query q:
///   −log [ Σ_{s: label(s)=truth(q)} exp(ẑ_q·ẑ_s/τ) / Σ_{all s} exp(ẑ_q·ẑ_s/τ) ]
/// averaged over heads and queries. `support_heads[h]` is |S|×d and
/// `query_heads[h]` is |Q|×d on the tape.
pub fn contrastive_loss(
    t: &mut Tape,
    support_heads: &[Val],
    query_heads: &[Val],
    support_labels: &[u32],
    query_truth: &[u32],
    tau: f64,
) -> Result<Val> {
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "contrastive temperature must be positive, got {}",
            tau
        )));
    }
    if support_heads.len() != query_heads.len() || support_heads.is_empty() {
        return Err(Error::Contract(format!(
            "{} support heads vs {} query heads",
            support_heads.len(),
            query_heads.len()
        )));
    }
    let s = t.value(support_heads[0]).rows();
    let q = t.value(query_heads[0]).rows();
    if support_labels.len() != s || query_truth.len() != q {
        return Err(Error::Contract(format!(
            "label counts ({}, {}) do not match embedding rows ({}, {})",
            support_labels.len(),
            query_truth.len(),
            s,
            q
        )));
    }
    for &y in query_truth {
        if !support_labels.contains(&y) {
            return Err(Error::Contract(format!(
                "query truth {} has no support member",
                y
            )));
        }
    }
    // same-class indicator, constant w.r.t. the tape
    let mask = Mat::from_fn(q, s, |r, c| {
        if support_labels[c] == query_truth[r] {
            1.0
        } else {
            0.0
        }
    });
    let heads = support_heads.len();
    let mut acc: Option<Val> = None;
    for (&sup, &qry) in support_heads.iter().zip(query_heads) {
        let zs = t.l2_normalize_rows(sup);
        let zq = t.l2_normalize_rows(qry);
        let sims = t.matmul_nt(zq, zs)?;
        let scaled = t.scale_k(sims, 1.0 / tau);
        let e = t.exp(scaled);
        let denom = t.row_sums(e);
        let mask_v = t.leaf(mask.clone());
        let pos = t.mul(e, mask_v)?;
        let numer = t.row_sums(pos);
        let ln_num = t.ln(numer);
        let ln_den = t.ln(denom);
        let diff = t.sub(ln_num, ln_den)?;
        let head_total = t.sum_all(diff);
        acc = Some(match acc {
            None => head_total,
            Some(a) => t.add(a, head_total)?,
        });
    }
    let total = acc.expect("at least one head");
    Ok(t.scale_k(total, -1.0 / (heads * q) as f64))
}

/// Fraction of rows whose argmax equals the truth label (ties resolve to
/// the lowest index, matching a strict `>` scan).
pub fn accuracy(logits: &Mat, truth: &[u32]) -> f64 {
    assert_eq!(logits.rows(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y as usize)
        .count();
    hits as f64 / truth.len() as f64
}

/// Index of the largest value; first occurrence wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}
