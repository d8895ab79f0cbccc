//! Joint objective: flow-matching MSE (with the anchor velocity clamp) plus
//! binary cross-entropy on both structural heads.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::flow::linalg::bce_with_logits;

pub const DEFAULT_LAMBDA_FRACTURE: f64 = 0.01;
pub const DEFAULT_LAMBDA_ADJACENCY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_rf: f64,
    pub l_f: f64,
    pub l_a: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub total: f64,
}

/// Gradients of `total` on the network outputs.
pub struct LossGrads {
    pub dv_hat: Array2<f64>,
    /// Empty when the fracture head is detached.
    pub df_logits: Array1<f64>,
    /// 0×0 when the adjacency head is detached; symmetric otherwise.
    pub da_logits: Array2<f64>,
}

/// Compute the joint loss and its output gradients.
///
/// * `l_rf`: mean squared velocity error over non-anchor token components,
///   after clamping anchor-token predictions to zero (so anchor predictions
///   cannot influence the total).
/// * `l_f`: mean BCE of per-token fracture logits (when provided).
/// * `l_a`: mean BCE over upper-triangle pair logits (when provided).
/// * `total = l_rf + λ_F·l_f + λ_A·l_a`, exactly in this form.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    v_hat: &Array2<f64>,
    v_t: &Array2<f64>,
    f_logits: Option<&Array1<f64>>,
    f_labels: &[bool],
    a_logits: Option<&Array2<f64>>,
    a_gt: Option<&crate::data::Adjacency>,
    lambda_f: f64,
    lambda_a: f64,
    anchor_mask: &[bool],
) -> Result<(LossBreakdown, LossGrads)> {
    let m = v_hat.nrows();
    if v_t.dim() != v_hat.dim() || anchor_mask.len() != m {
        return Err(Error::invalid("velocity/label shape mismatch"));
    }
    let non_anchor = anchor_mask.iter().filter(|&&a| !a).count();
    if non_anchor == 0 {
        return Err(Error::invalid("no non-anchor tokens"));
    }

    let denom = (3 * non_anchor) as f64;
    let mut l_rf = 0.0;
    let mut dv_hat = Array2::zeros(v_hat.dim());
    for r in 0..m {
        if anchor_mask[r] {
            continue; // clamped: contributes nothing and receives no gradient
        }
        for c in 0..3 {
            let diff = v_hat[(r, c)] - v_t[(r, c)];
            l_rf += diff * diff;
            dv_hat[(r, c)] = 2.0 * diff / denom;
        }
    }
    l_rf /= denom;

    let (l_f, df_logits) = match f_logits {
        Some(logits) => {
            if logits.len() != m || f_labels.len() != m {
                return Err(Error::invalid("fracture label length mismatch"));
            }
            let mut sum = 0.0;
            let mut grad = Array1::zeros(m);
            for t in 0..m {
                let y = if f_labels[t] { 1.0 } else { 0.0 };
                let (loss, dz) = bce_with_logits(logits[t], y);
                sum += loss;
                grad[t] = lambda_f * dz / m as f64;
            }
            (sum / m as f64, grad)
        }
        None => (0.0, Array1::zeros(0)),
    };

    let (l_a, da_logits) = match (a_logits, a_gt) {
        (Some(logits), Some(gt)) => {
            let k = gt.k();
            if logits.dim() != (k, k) {
                return Err(Error::invalid("adjacency logit size mismatch"));
            }
            let pairs = (k * (k - 1) / 2) as f64;
            let mut sum = 0.0;
            let mut grad = Array2::zeros((k, k));
            for i in 0..k {
                for j in (i + 1)..k {
                    let y = if gt.get(i, j) { 1.0 } else { 0.0 };
                    let (loss, dz) = bce_with_logits(logits[(i, j)], y);
                    sum += loss;
                    let g = lambda_a * dz / pairs;
                    grad[(i, j)] = g;
                    grad[(j, i)] = g;
                }
            }
            (sum / pairs, grad)
        }
        _ => (0.0, Array2::zeros((0, 0))),
    };

    let total = l_rf + lambda_f * l_f + lambda_a * l_a;
    Ok((
        LossBreakdown {
            l_rf,
            l_f,
            l_a,
            lambda_f,
            lambda_a,
            total,
        },
        LossGrads {
            dv_hat,
            df_logits,
            da_logits,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Adjacency;
    use rand::Rng;

    #[test]
    fn perfect_prediction_zeroes_the_flow_term() {
        let v = Array2::from_elem((6, 3), 0.7);
        let mask = vec![false; 6];
        let (b, g) = total_loss(&v, &v, None, &[], None, None, 0.01, 0.01, &mask).unwrap();
        assert_eq!(b.l_rf, 0.0);
        assert_eq!(b.total, 0.0);
        assert!(g.dv_hat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn strong_logits_drive_bce_to_zero() {
        let v = Array2::zeros((4, 3));
        let mask = vec![false; 4];
        let labels = [true, false, true, false];
        let mut adj = Adjacency::new(2);
        adj.set(0, 1);
        for magnitude in [5.0, 20.0, 80.0] {
            let logits =
                Array1::from_vec(labels.iter().map(|&l| if l { magnitude } else { -magnitude }).collect());
            let mut a = Array2::zeros((2, 2));
            a[(0, 1)] = magnitude;
            a[(1, 0)] = magnitude;
            let (b, _) = total_loss(
                &v, &v, Some(&logits), &labels, Some(&a), Some(&adj), 0.01, 0.01, &mask,
            )
            .unwrap();
            assert!(b.l_f < (-magnitude).exp() * 2.0 + 1e-12);
            assert!(b.l_a < (-magnitude).exp() * 2.0 + 1e-12);
        }
    }

    #[test]
    fn decomposition_holds_exactly() {
        let mut rng = crate::seed::rng_from(3);
        let v_hat = Array2::from_shape_fn((8, 3), |_| rng.gen::<f64>());
        let v_t = Array2::from_shape_fn((8, 3), |_| rng.gen::<f64>());
        let logits = Array1::from_shape_fn(8, |_| rng.gen::<f64>() * 4.0 - 2.0);
        let labels = [true, false, false, true, true, false, true, false];
        let mut adj = Adjacency::new(3);
        adj.set(0, 2);
        let mut a = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    a[(i, j)] = 0.3;
                }
            }
        }
        let mask = vec![false, true, false, false, true, false, false, false];
        let (b, _) = total_loss(
            &v_hat, &v_t, Some(&logits), &labels, Some(&a), Some(&adj), 0.01, 0.01, &mask,
        )
        .unwrap();
        assert!((b.total - (b.l_rf + b.lambda_f * b.l_f + b.lambda_a * b.l_a)).abs() < 1e-12);
        assert!(b.l_rf >= 0.0 && b.l_f >= 0.0 && b.l_a >= 0.0);
    }

    #[test]
    fn anchor_predictions_are_clamped_out() {
        let mut rng = crate::seed::rng_from(4);
        let v_t = Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>());
        let mut v_hat = v_t.clone();
        let mask = vec![true, true, false, false, false, false];
        let (before, _) =
            total_loss(&v_hat, &v_t, None, &[], None, None, 0.01, 0.01, &mask).unwrap();
        // Arbitrary garbage on anchor tokens must not change the total.
        v_hat[(0, 0)] = 1e9;
        v_hat[(1, 2)] = f64::MAX / 1e10;
        let (after, grads) =
            total_loss(&v_hat, &v_t, None, &[], None, None, 0.01, 0.01, &mask).unwrap();
        assert_eq!(before.total, after.total);
        assert_eq!(grads.dv_hat[(0, 0)], 0.0);
    }

    #[test]
    fn doubling_lambda_doubles_head_gradients() {
        let mut rng = crate::seed::rng_from(5);
        let v = Array2::zeros((4, 3));
        let mask = vec![false; 4];
        let logits = Array1::from_shape_fn(4, |_| rng.gen::<f64>());
        let labels = [true, false, true, true];
        let (_, g1) = total_loss(
            &v, &v, Some(&logits), &labels, None, None, 0.01, 0.01, &mask,
        )
        .unwrap();
        let (_, g2) = total_loss(
            &v, &v, Some(&logits), &labels, None, None, 0.02, 0.01, &mask,
        )
        .unwrap();
        for (a, b) in g1.df_logits.iter().zip(g2.df_logits.iter()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }
}
