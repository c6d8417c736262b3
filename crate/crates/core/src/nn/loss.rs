use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Result of [`Tape::softmax_cross_entropy`].
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Batch-mean cross-entropy.
    pub value: f64,
    /// `(softmax(logits) - target) / N`.
    pub logits_grad: Tensor4,
}

/// Row-wise softmax over the `K` entries of each of the `N` rows.
pub fn softmax(logits: &Tensor4) -> Tensor4 {
    let n = logits.batch();
    let k = logits.len().checked_div(n).unwrap_or(0);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Each row must be a probability vector: entries `>= 0`, summing to 1
/// within `1e-6`.
pub fn validate_targets(target: &Tensor4, rows: usize, classes: usize) -> Result<()> {
    if target.len() != rows * classes || target.batch() != rows {
        return Err(Error::Shape(format!(
            "target dims {:?} do not match {rows} rows of {classes} classes",
            target.dims()
        )));
    }
    for (i, row) in target.data().chunks(classes.max(1)).enumerate() {
        if row.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::Argument(format!(
                "target row {i} has a negative entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!(
                "target row {i} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

fn cross_entropy(logits: &Tensor4, target: &Tensor4) -> Result<LossOutput> {
    let n = logits.batch();
    if n == 0 {
        return Err(Error::Shape("cross-entropy over an empty batch".into()));
    }
    let k = logits.len() / n;
    validate_targets(target, n, k)?;
    let probs = softmax(logits);
    let mut total = 0.0;
    for (lrow, trow) in logits.data().chunks(k).zip(target.data().chunks(k)) {
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lrow.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total -= lrow
            .iter()
            .zip(trow)
            .filter(|(_, &t)| t != 0.0)
            .map(|(l, t)| t * (l - lse))
            .sum::<f64>();
    }
    let inv_n = 1.0 / n as f64;
    let grad: Vec<f64> = probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * inv_n)
        .collect();
    Ok(LossOutput {
        value: total * inv_n,
        logits_grad: Tensor4::from_vec(logits.dims(), grad)?,
    })
}

impl Tape {
    /// Batch-mean cross-entropy of `softmax(logits)` against probability
    /// rows in `target`. Logits are `(N, K, 1, 1)` (any dims with `N` rows).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        target: &Tensor4,
    ) -> Result<(Var, LossOutput)> {
        let out = cross_entropy(self.value(logits), target)?;
        let grad = out.logits_grad.clone();
        let loss = self.record(
            "softmax_cross_entropy",
            Tensor4::scalar(out.value),
            &[logits],
            move |ctx| {
                let g = ctx.grad.data()[0];
                let mut d = grad;
                if g != 1.0 {
                    for v in d.data_mut() {
                        *v *= g;
                    }
                }
                vec![Some(d)]
            },
        )?;
        Ok((loss, out))
    }
}
