//! Detection losses, each returning (mean loss, gradient w.r.t. logits).

use ndarray::{Array2, ArrayD};

/// Softmax cross-entropy over rows of (N, K) logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, targets: &[usize]) -> (f32, Array2<f32>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len());
    if n == 0 {
        return (0.0, Array2::zeros((0, logits.ncols())));
    }
    let mut dlogits = Array2::<f32>::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f32 = exps.iter().sum();
        let t = targets[i];
        loss += -((exps[t] / sum).max(1e-12).ln()) as f64;
        for (k, &e) in exps.iter().enumerate() {
            let p = e / sum;
            dlogits[[i, k]] = (p - if k == t { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    ((loss / n as f64) as f32, dlogits)
}

/// Binary cross-entropy with logits, averaged over entries where
/// `select` is 1. Targets are 0/1; unselected entries get zero gradient.
pub fn bce_with_logits_mean(logits: &ArrayD<f32>, targets: &ArrayD<f32>, select: &ArrayD<f32>) -> (f32, ArrayD<f32>) {
    let count: f32 = select.sum();
    let mut dlogits = ArrayD::<f32>::zeros(logits.raw_dim());
    if count == 0.0 {
        return (0.0, dlogits);
    }
    let mut loss = 0.0f64;
    for ((dl, &x), (&t, &s)) in dlogits
        .iter_mut()
        .zip(logits.iter())
        .zip(targets.iter().zip(select.iter()))
    {
        if s == 0.0 {
            continue;
        }
        // log(1 + e^{-|x|}) + max(x, 0) - x*t, numerically stable
        let l = x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
        loss += l as f64;
        let p = 1.0 / (1.0 + (-x).exp());
        *dl = (p - t) / count;
    }
    ((loss / count as f64) as f32, dlogits)
}

/// Smooth-L1 (Huber with delta 1) between rows of predictions and targets,
/// averaged over rows; gradient w.r.t. predictions.
pub fn smooth_l1_mean(pred: &Array2<f32>, target: &Array2<f32>) -> (f32, Array2<f32>) {
    let n = pred.nrows();
    let mut dpred = Array2::<f32>::zeros(pred.raw_dim());
    if n == 0 {
        return (0.0, dpred);
    }
    let mut loss = 0.0f64;
    let norm = n as f32;
    for ((d, &p), &t) in dpred.iter_mut().zip(pred.iter()).zip(target.iter()) {
        let diff = p - t;
        if diff.abs() < 1.0 {
            loss += (0.5 * diff * diff) as f64;
            *d = diff / norm;
        } else {
            loss += (diff.abs() - 0.5) as f64;
            *d = diff.signum() / norm;
        }
    }
    ((loss / norm as f64) as f32, dpred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, IxDyn};

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let logits = Array2::<f32>::zeros((3, 5));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2, 4]);
        assert!((loss - (5.0f32).ln()).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero_per_row() {
        let logits = array![[1.0f32, -2.0, 0.5], [0.0, 0.1, 0.2]];
        let (_, d) = softmax_cross_entropy(&logits, &[1, 0]);
        for row in d.rows() {
            assert!(row.sum().abs() < 1e-6);
        }
    }

    #[test]
    fn bce_matches_hand_computed_value() {
        let logits = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.0f32, 2.0]).unwrap();
        let targets = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0f32, 0.0]).unwrap();
        let select = ArrayD::from_elem(IxDyn(&[2]), 1.0f32);
        let (loss, d) = bce_with_logits_mean(&logits, &targets, &select);
        let expected = ((2.0f32).ln() + (1.0 + (2.0f32).exp()).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-5);
        assert!((d[[0]] - (0.5 - 1.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn bce_with_empty_selection_is_zero() {
        let logits = ArrayD::from_elem(IxDyn(&[4]), 3.0f32);
        let targets = ArrayD::zeros(IxDyn(&[4]));
        let select = ArrayD::zeros(IxDyn(&[4]));
        let (loss, d) = bce_with_logits_mean(&logits, &targets, &select);
        assert_eq!(loss, 0.0);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smooth_l1_is_quadratic_inside_and_linear_outside() {
        let pred = array![[0.5f32, 3.0]];
        let target = array![[0.0f32, 0.0]];
        let (loss, d) = smooth_l1_mean(&pred, &target);
        assert!((loss - (0.125 + 2.5)).abs() < 1e-6);
        assert!((d[[0, 0]] - 0.5).abs() < 1e-6);
        assert!((d[[0, 1]] - 1.0).abs() < 1e-6);
    }
}
