use crate::error::{Error, Result};

const PROB_CLAMP: f64 = 1e-12;

/// Sum of absolute differences and its gradient w.r.t. `pred`.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "l1: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            total += d.abs();
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok((total, grad))
}

/// Binary cross-entropy of one probability and its derivative w.r.t. `prob`.
pub fn bce_loss(prob: f64, label: f64) -> (f64, f64) {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let inside = prob > PROB_CLAMP && prob < 1.0 - PROB_CLAMP;
    let grad = if inside {
        -label / p + (1.0 - label) / (1.0 - p)
    } else {
        0.0
    };
    (loss, grad)
}

/// Mean BCE over a batch; returns the per-item gradients of the mean.
pub fn bce_mean(probs: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch("bce: probs vs labels".into()));
    }
    if probs.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let grads = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (l, g) = bce_loss(p, y);
            total += l;
            g / n
        })
        .collect();
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l1_examples() {
        let (l, g) = l1_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, g) = l1_loss(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(l, 6.0);
        assert_eq!(g, vec![1.0; 3]);
        assert!(l1_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0 - 1e-10, 1.0).0 < 1e-9);
    }

    #[test]
    fn batch_losses_match_direct_sums() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..50).map(|_| r.random_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..50)
            .map(|_| f64::from(r.random_bool(0.3) as u8))
            .collect();
        let direct: f64 = p
            .iter()
            .zip(&y)
            .map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum::<f64>()
            / 50.0;
        assert!((bce_mean(&p, &y).unwrap().0 - direct).abs() < 1e-12);
        let t: Vec<f64> = (0..50).map(|_| r.random_range(-5.0..5.0)).collect();
        let direct: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum();
        assert!((l1_loss(&p, &t).unwrap().0 - direct).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        for (p, y) in [(0.3, 1.0), (0.8, 0.0), (0.55, 1.0)] {
            let h = 1e-6;
            let fd = (bce_loss(p + h, y).0 - bce_loss(p - h, y).0) / (2.0 * h);
            assert!((bce_loss(p, y).1 - fd).abs() < 1e-6);
        }
    }
}
