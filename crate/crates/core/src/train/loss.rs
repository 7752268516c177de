use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Probabilities below this are clamped before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the target class, `probs` and one-hot
/// `targets` both `[B, classes]`.
pub fn cross_entropy_loss<T: Float>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    probs.expect_rank(2, "probabilities")?;
    probs.expect_same_shape(targets, "cross entropy")?;
    let classes = probs.dims()[1];
    let mut total = 0.0;
    for (row, target) in probs.data().chunks(classes).zip(targets.data().chunks(classes)) {
        let sum: f64 = row.iter().map(|p| p.to_f64_lossy()).sum();
        if !((sum - 1.0).abs() <= 1e-4) {
            return Err(Error::NumericInput(format!("probability row sums to {sum}, not 1")));
        }
        for (p, y) in row.iter().zip(target) {
            let y = y.to_f64_lossy();
            if y != 0.0 {
                total -= y * p.to_f64_lossy().max(PROB_FLOOR).ln();
            }
        }
    }
    Ok(total / probs.dims()[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn examples() {
        assert!(cross_entropy_loss(&t(&[[1.0, 0.0]]), &t(&[[1.0, 0.0]])).unwrap() <= 1e-6);
        let l = cross_entropy_loss(&t(&[[0.5, 0.5], [0.5, 0.5]]), &t(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert!((l - 0.693_147).abs() < 1e-5);
        let l = cross_entropy_loss(&t(&[[1.0, 0.0]]), &t(&[[0.0, 1.0]])).unwrap();
        assert!((l - 27.631_021).abs() < 1e-5 && l.is_finite());
    }

    #[test]
    fn mismatched_shapes_are_shape_errors() {
        let p = t(&[[0.5, 0.5]]);
        let y = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
        assert!(matches!(cross_entropy_loss(&p, &y), Err(Error::Shape(_))));
    }
}
