use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Gradient through [`softmax_rows`]: given the softmax output `w` and
/// `dw = ∂L/∂w`, returns `∂L/∂x`.
pub fn softmax_rows_backward<T: Real>(w: &Matrix<T>, dw: &Matrix<T>) -> Matrix<T> {
    assert_eq!(w.shape(), dw.shape(), "softmax backward shape");
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for i in 0..w.rows() {
        let (wi, gi) = (w.row(i), dw.row(i));
        let inner: T = wi.iter().zip(gi).map(|(&a, &b)| a * b).sum();
        for (o, (&a, &b)) in out.row_mut(i).iter_mut().zip(wi.iter().zip(gi)) {
            *o = a * (b - inner);
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient
/// `(softmax(logits) − onehot) / batch`.
pub fn softmax_xent<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::dims("softmax_xent", logits.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_labels: logits.cols(),
        });
    }
    let n = T::of(logits.rows().max(1) as f64);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n;
        }
        g[y] -= T::one() / n;
    }
    Ok((loss / n, grad))
}
