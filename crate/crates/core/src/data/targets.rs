use super::{beta::sample_beta, Batch};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// `(N, K, 1, 1)` one-hot rows.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor4> {
    smooth_labels(labels, k, 0.0)
}

/// `(1 - eps) * one_hot + eps / K`.
pub fn smooth_labels(labels: &[usize], k: usize, epsilon: f64) -> Result<Tensor4> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Argument(format!(
            "label smoothing {epsilon} not in [0, 1)"
        )));
    }
    let mut t = Tensor4::full([labels.len(), k, 1, 1], epsilon / k as f64)?;
    for (n, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Argument(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        t.data_mut()[n * k + l] += 1.0 - epsilon;
    }
    Ok(t)
}

/// `lambda * a + (1 - lambda) * b` for every row, pairing row `i` with row
/// `perm[i]`, on both images and targets.
pub fn mixup_with(batch: &Batch, lambda: f64, perm: &[usize]) -> Result<Batch> {
    let n = batch.images.batch();
    if perm.len() != n || batch.targets.batch() != n {
        return Err(Error::Shape(format!(
            "mixup: {n} images, {} targets, {} pairings",
            batch.targets.batch(),
            perm.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!(
            "mixup weight {lambda} not in [0, 1]"
        )));
    }
    let mix = |t: &Tensor4| -> Result<Tensor4> {
        let per = t.len() / n.max(1);
        let mut out = t.clone();
        for (i, &j) in perm.iter().enumerate() {
            if j >= n {
                return Err(Error::Argument(format!("pairing index {j} out of range")));
            }
            for e in 0..per {
                out.data_mut()[i * per + e] =
                    lambda * t.data()[i * per + e] + (1.0 - lambda) * t.data()[j * per + e];
            }
        }
        Ok(out)
    };
    Ok(Batch {
        images: mix(&batch.images)?,
        targets: mix(&batch.targets)?,
    })
}

/// Mixup with `lambda ~ Beta(alpha, alpha)` and a random pairing.
pub fn mixup(batch: &Batch, alpha: f64, rng: &mut Rng) -> Result<Batch> {
    if alpha <= 0.0 {
        return Err(Error::Argument(format!(
            "mixup alpha must be positive, got {alpha}"
        )));
    }
    let lambda = sample_beta(rng, alpha, alpha)?;
    let perm = rng.permutation(batch.images.batch());
    mixup_with(batch, lambda, &perm)
}
