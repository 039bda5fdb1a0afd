use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {rows}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean of `logsumexp(z) − z[label]` over the batch.
pub fn cross_entropy_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (rows, classes) = logits.dims2()?;
    check_labels(rows, classes, labels)?;
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        total += lse - row[label];
    }
    Ok(total / T::lit(rows as f64))
}

/// Mean of `−ln p[label]` for rows of probabilities.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (rows, classes) = probs.dims2()?;
    check_labels(rows, classes, labels)?;
    let mut total = T::zero();
    for (row, &label) in probs.data().chunks(classes).zip(labels) {
        total -= row[label].max(T::min_positive_value()).ln();
    }
    Ok(total / T::lit(rows as f64))
}
