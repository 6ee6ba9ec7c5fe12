use crate::scalar::Scalar;

/// Softmax cross-entropy of one logit vector, and its gradient
/// `softmax(z) − onehot(label)`.
pub fn cross_entropy_loss<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    (loss, grad)
}

/// Mean loss over a row-major batch of logits and the gradient of that mean.
pub fn batch_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize]) -> (T, Vec<T>) {
    let classes = logits.len() / labels.len().max(1);
    let n = T::from_count(labels.len().max(1));
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let (l, g) = cross_entropy_loss(row, y);
        total = total + l;
        grad.extend(g.into_iter().map(|gi| gi / n));
    }
    (total / n, grad)
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &z)| if z > best.1 { (i, z) } else { best })
        .0
}
