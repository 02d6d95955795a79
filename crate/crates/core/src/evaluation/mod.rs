//! Conventional top-1 accuracy and the generalized protocol: a calibration
//! bias added to unseen-pair scores is swept to trace seen/unseen accuracy,
//! and the area under that curve is reported per top-k level.
//!
//! The curve is a step function of the bias. For each item the bias values
//! at which it is ranked within the top k form a half-line, so one
//! threshold per item gives every breakpoint exactly.

mod matrix;
mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::numerics::kernels;

pub use matrix::ScoreMatrix;
pub use report::{evaluate, evaluate_matrices, ConventionalReport, EvalReport, GeneralizedReport, GeneralizedSet, AUC_LEVELS};

/// Fraction of items whose highest-scoring candidate is the ground truth.
/// Every candidate must be an unseen pair.
pub fn top1_unseen(m: &ScoreMatrix) -> Result<f64> {
    if m.candidates.iter().any(|c| c.domain != Domain::Unseen) {
        return Err(Error::Data("top-1 over unseen pairs given seen candidates".into()));
    }
    top1(m)
}

/// Top-1 accuracy over whatever candidates the matrix holds.
pub fn top1(m: &ScoreMatrix) -> Result<f64> {
    if m.n_items() == 0 {
        return Err(Error::Data("no items to evaluate".into()));
    }
    let hits = (0..m.n_items())
        .filter(|&i| kernels::argmax(m.row(i)) == m.truth_index(i))
        .count();
    Ok(hits as f64 / m.n_items() as f64)
}

fn check_generalized(m: &ScoreMatrix, k: usize) -> Result<()> {
    if k == 0 || k > m.n_candidates() {
        return Err(Error::Data(format!("top-{k} with {} candidates", m.n_candidates())));
    }
    for d in [Domain::Seen, Domain::Unseen] {
        if !m.candidates.iter().any(|c| c.domain == d) {
            return Err(Error::Data(format!("no {d} candidates")));
        }
        if !m.truths.iter().any(|t| t.domain == d) {
            return Err(Error::Data(format!("no {d} items")));
        }
    }
    Ok(())
}

/// Order of candidate `a` against `b` once `bias` is added to unseen
/// scores. Infinite biases act as their limits.
fn biased_cmp(sa: f64, ua: bool, sb: f64, ub: bool, bias: f64) -> Ordering {
    if ua == ub {
        return sa.total_cmp(&sb);
    }
    if bias.is_infinite() {
        let unseen_first = bias > 0.0;
        return if ua == unseen_first { Ordering::Greater } else { Ordering::Less };
    }
    let shift = |s: f64, u: bool| if u { s + bias } else { s };
    shift(sa, ua).total_cmp(&shift(sb, ub))
}

fn in_top_k(m: &ScoreMatrix, i: usize, bias: f64, k: usize) -> bool {
    let row = m.row(i);
    let t = m.truth_index(i);
    let unseen = |j: usize| m.candidates[j].domain == Domain::Unseen;
    let ahead = (0..row.len())
        .filter(|&j| j != t)
        .filter(|&j| match biased_cmp(row[j], unseen(j), row[t], unseen(t), bias) {
            Ordering::Greater => true,
            Ordering::Equal => j < t,
            Ordering::Less => false,
        })
        .count();
    ahead < k
}

/// Seen and unseen top-k accuracy after adding `bias` to every
/// unseen-candidate score. Ties go to the lower candidate index.
pub fn biased_topk_acc(m: &ScoreMatrix, bias: f64, k: usize) -> Result<(f64, f64)> {
    check_generalized(m, k)?;
    if bias.is_nan() {
        return Err(Error::Numeric("bias is NaN".into()));
    }
    let (mut hits, mut counts) = ([0usize; 2], [0usize; 2]);
    for i in 0..m.n_items() {
        let d = usize::from(m.truths[i].domain == Domain::Unseen);
        counts[d] += 1;
        hits[d] += usize::from(in_top_k(m, i, bias, k));
    }
    Ok((hits[0] as f64 / counts[0] as f64, hits[1] as f64 / counts[1] as f64))
}

/// Bias values for which an item is ranked within the top k.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Window {
    Always,
    Never,
    /// Unseen item: correct for bias above the value. Seen item: below it.
    From(f64),
}

fn window(m: &ScoreMatrix, i: usize, k: usize) -> Window {
    let row = m.row(i);
    let t = m.truth_index(i);
    let dom = m.truths[i].domain;
    let same_ahead = (0..row.len())
        .filter(|&j| j != t && m.candidates[j].domain == dom)
        .filter(|&j| row[j] > row[t] || (row[j] == row[t] && j < t))
        .count();
    if same_ahead >= k {
        return Window::Never;
    }
    let allowed = k - 1 - same_ahead;
    let others = (0..row.len()).filter(|&j| m.candidates[j].domain != dom);
    // `+ 0.0` folds -0 into +0 so equal gaps sort and dedup together.
    let mut gaps: Vec<f64> = match dom {
        // Seen candidate j outranks the truth while bias < s_j - s_t.
        Domain::Unseen => others.map(|j| row[j] - row[t] + 0.0).collect(),
        // Unseen candidate j outranks the truth once bias > s_t - s_j.
        Domain::Seen => others.map(|j| row[t] - row[j] + 0.0).collect(),
    };
    if gaps.len() <= allowed {
        return Window::Always;
    }
    match dom {
        Domain::Unseen => gaps.sort_by(|a, b| b.total_cmp(a)),
        Domain::Seen => gaps.sort_by(f64::total_cmp),
    }
    Window::From(gaps[allowed])
}

/// One constant stretch of the accuracy curve. `from`/`to` bound the bias
/// interval; `None` stands for an infinite end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub seen: f64,
    pub unseen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCurve {
    pub k: usize,
    /// Ordered by increasing bias.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Trapezoid area under the unseen-versus-seen curve. Points must be in
/// order of increasing bias; the curve is closed with axis-parallel
/// segments to (0, max unseen) and (max seen, 0).
pub fn curve_area(points: &[(f64, f64)]) -> f64 {
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let mut path = Vec::with_capacity(points.len() + 2);
    path.push((first.0, 0.0));
    path.extend_from_slice(points);
    path.push((0.0, last.1));
    path.windows(2)
        .map(|w| (w[0].0 - w[1].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Exact seen/unseen curve over all bias values and its area.
pub fn auc_curve(m: &ScoreMatrix, k: usize) -> Result<AucCurve> {
    check_generalized(m, k)?;
    let windows: Vec<Window> = (0..m.n_items()).map(|i| window(m, i, k)).collect();
    let mut breaks: Vec<f64> = windows
        .iter()
        .filter_map(|w| match w {
            Window::From(v) => Some(*v),
            _ => None,
        })
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let n_regions = breaks.len() + 1;
    // Region r is the open interval between breaks r-1 and r.
    let (mut seen_hits, mut unseen_hits) = (vec![0i64; n_regions + 1], vec![0i64; n_regions + 1]);
    let (mut n_seen, mut n_unseen) = (0, 0);
    for (i, w) in windows.iter().enumerate() {
        let unseen = m.truths[i].domain == Domain::Unseen;
        let (lo, hi) = match *w {
            Window::Always => (0, n_regions),
            Window::Never => (0, 0),
            Window::From(v) => {
                let q = breaks.partition_point(|b| *b < v);
                if unseen {
                    (q + 1, n_regions)
                } else {
                    (0, q + 1)
                }
            }
        };
        let hits = if unseen {
            n_unseen += 1;
            &mut unseen_hits
        } else {
            n_seen += 1;
            &mut seen_hits
        };
        // Difference array over regions.
        if lo < hi {
            hits[lo] += 1;
            hits[hi] -= 1;
        }
    }
    let (mut s, mut u) = (0i64, 0i64);
    let mut points = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        s += seen_hits[r];
        u += unseen_hits[r];
        points.push(CurvePoint {
            from: r.checked_sub(1).map(|p| breaks[p]),
            to: breaks.get(r).copied(),
            seen: s as f64 / n_seen as f64,
            unseen: u as f64 / n_unseen as f64,
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.seen, p.unseen)).collect();
    Ok(AucCurve {
        k,
        auc: curve_area(&xy),
        points,
    })
}

pub fn auc(m: &ScoreMatrix, k: usize) -> Result<f64> {
    auc_curve(m, k).map(|c| c.auc)
}

#[cfg(test)]
mod tests;
