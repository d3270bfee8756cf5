use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets, and
/// its gradient with respect to the logits.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &[f64]) -> Result<(f64, Tensor<T>)> {
    if logits.numel() != targets.len() || targets.is_empty() {
        return Err(Error::shape("bce targets", logits.numel(), targets.len()));
    }
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (&z, &y) in logits.data().iter().zip(targets) {
        let z = z.to_f64().unwrap_or(f64::NAN);
        // log(1 + e^z) - y z, stable for both signs
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let p = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
        grad.push(T::of((p - y) / n));
    }
    Ok((loss / n, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Mean softmax cross-entropy of `[B, K]` logits against class indices.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    logits.expect_rank(2, "cross-entropy logits")?;
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b || b == 0 {
        return Err(Error::shape("cross-entropy labels", b, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push(T::of((p - if j == label { 1.0 } else { 0.0 }) / b as f64));
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_direct_formula() {
        let z = Tensor::new(vec![3, 1], vec![-2.0f64, 0.0, 3.0]).unwrap();
        let y = [0.0, 1.0, 1.0];
        let (l, g) = bce_with_logits(&z, &y).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let direct: f64 = z
            .data()
            .iter()
            .zip(&y)
            .map(|(&v, &t)| -(t * sig(v).ln() + (1.0 - t) * (1.0 - sig(v)).ln()))
            .sum::<f64>()
            / 3.0;
        assert!((l - direct).abs() < 1e-12);
        assert!((g.data()[0] - sig(-2.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let z = Tensor::new(vec![2, 4], vec![0.5f64; 8]).unwrap();
        let (l, g) = softmax_cross_entropy(&z, &[1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((g.data()[1] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!(softmax_cross_entropy(&z, &[0, 4]).is_err());
    }
}
