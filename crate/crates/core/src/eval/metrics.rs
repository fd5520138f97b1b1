use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean per-joint Euclidean distance.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "mpjpe: {} vs {} joints",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Fraction of limbs whose two endpoint errors are both below half the
/// ground-truth limb length.
pub fn pcp(pred: &[Vector3<f64>], gt: &[Vector3<f64>], limbs: &[(usize, usize)]) -> f64 {
    if limbs.is_empty() {
        return 0.0;
    }
    let ok = limbs
        .iter()
        .filter(|&&(a, b)| {
            let half = 0.5 * (gt[a] - gt[b]).norm();
            (pred[a] - gt[a]).norm() < half && (pred[b] - gt[b]).norm() < half
        })
        .count();
    ok as f64 / limbs.len() as f64
}

/// Outcome of one prediction after greedy claiming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub score: f64,
    /// `(gt index, mpjpe)` for a true positive.
    pub matched: Option<(usize, f64)>,
}

/// Visits predictions by descending score (ties: input order); each claims
/// the nearest unclaimed ground truth with MPJPE below `tau`. Claims are
/// returned in visiting order.
pub fn claim_predictions(
    preds: &[(f64, Vec<Vector3<f64>>)],
    gts: &[Vec<Vector3<f64>>],
    tau: f64,
) -> Result<Vec<Claim>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let e = mpjpe(&preds[i].1, gt)?;
            if e < tau && best.is_none_or(|(_, b)| e < b) {
                best = Some((g, e));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(Claim {
            score: preds[i].0,
            matched: best,
        });
    }
    Ok(out)
}

/// Interpolated area under the precision/recall curve of claims ranked by
/// score, against `num_gt` ground truths.
pub fn average_precision(claims: &[Claim], num_gt: usize) -> f64 {
    if num_gt == 0 || claims.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<&Claim> = claims.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut tp = 0.0;
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    for (k, c) in ranked.iter().enumerate() {
        if c.matched.is_some() {
            tp += 1.0;
        }
        rec.push(tp / num_gt as f64);
        prec.push(tp / (k + 1) as f64);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len())
        .map(|i| (rec[i] - rec[i - 1]) * prec[i])
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub ap: f64,
    pub recall: f64,
    /// Mean MPJPE of true positives; absent when there are none.
    pub mpjpe: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn summarize(claims: &[Claim], num_gt: usize) -> MatchScore {
    let errs: Vec<f64> = claims
        .iter()
        .filter_map(|c| c.matched.map(|m| m.1))
        .collect();
    let tp = errs.len();
    MatchScore {
        ap: average_precision(claims, num_gt),
        recall: if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        },
        mpjpe: if tp == 0 {
            None
        } else {
            Some(errs.iter().sum::<f64>() / tp as f64)
        },
        tp,
        fp: claims.len() - tp,
        fn_: num_gt - tp,
    }
}

/// AP, recall and matched MPJPE of one scene's predictions at threshold
/// `tau` (mm).
pub fn match_and_score(
    preds: &[(f64, Vec<Vector3<f64>>)],
    gts: &[Vec<Vector3<f64>>],
    tau: f64,
) -> Result<MatchScore> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(summarize(&claim_predictions(preds, gts, tau)?, gts.len()))
}
