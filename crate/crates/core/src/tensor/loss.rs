use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// d loss / d pred_i, i.e. `2 (pred_i - gt_i) / N`.
    pub grad_pred: Vec<f64>,
}

/// Sum of squares over the penalized tensors.
pub fn l2_penalty<'a>(weights: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    weights
        .into_iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Mean squared error over the batch plus `lambda · ‖θ‖²`.
///
/// Only the prediction gradient is returned; the penalty gradient `2λθ` is
/// applied by whoever owns the parameters.
pub fn loss_mse_l2<'a>(
    pred: &[f64],
    gt: &[f64],
    weights: impl IntoIterator<Item = &'a [f64]>,
    lambda: f64,
) -> Result<LossValue> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / n;
    let penalty = if lambda > 0.0 {
        lambda * l2_penalty(weights)
    } else {
        0.0
    };
    let grad_pred = pred.iter().zip(gt).map(|(p, g)| 2.0 * (p - g) / n).collect();
    Ok(LossValue {
        loss: mse + penalty,
        grad_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_zero_params() {
        let v = loss_mse_l2(&[0.3, 0.4], &[0.3, 0.4], [&[0.0, 0.0][..]], 0.1).unwrap();
        assert_eq!(v.loss, 0.0);
        assert_eq!(v.grad_pred, vec![0.0, 0.0]);
    }

    #[test]
    fn half_loss() {
        let v = loss_mse_l2(&[0.0, 1.0], &[1.0, 1.0], std::iter::empty(), 0.0).unwrap();
        assert_eq!(v.loss, 0.5);
        assert_eq!(v.grad_pred, vec![-1.0, 0.0]);
    }

    #[test]
    fn penalty_only() {
        let v = loss_mse_l2(&[0.5], &[0.5], [&[2.0][..]], 0.0005).unwrap();
        assert!((v.loss - 0.002).abs() < 1e-15);
    }

    #[test]
    fn empty_batch() {
        assert!(matches!(
            loss_mse_l2(&[], &[], std::iter::empty(), 0.0),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn penalty_strictly_increases_loss() {
        let w = [0.1, -0.3];
        let base = loss_mse_l2(&[0.2], &[0.7], [&w[..]], 0.0).unwrap().loss;
        let pen = loss_mse_l2(&[0.2], &[0.7], [&w[..]], 5e-4).unwrap().loss;
        assert!(pen > base);
    }
}
