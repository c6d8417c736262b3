//! Datasets, augmentation and target transforms.

mod augment;
mod beta;
mod cifar;
mod synth;
mod targets;

pub use augment::{apply_augment, augment, draw_augment, AugmentDraw};
pub use beta::{beta_inverse_cdf, regularized_incomplete_beta, sample_beta};
pub use cifar::{
    export_cifar10, load_cifar10, load_cifar10_file, load_cifar10_split, Split, CIFAR_RECORD_BYTES,
    CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
pub use synth::synth_blobs;
pub use targets::{mixup, mixup_with, one_hot, smooth_labels};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Images `(N, 3, H, W)` in `[0, 1]` with labels in `[0, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub images: Tensor4,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        images: Tensor4,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            num_classes,
            images,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.batch() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                self.images.batch(),
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        if self.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("pixel values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor4> {
        let [_, c, h, w] = self.images.dims();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "index {i} out of range for {} images",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Tensor4::from_vec([indices.len(), c, h, w], data)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            images: self.gather(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// The first `n` examples (or all of them).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Normalized images with one probability row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor4,
    /// `(N, K, 1, 1)`, rows summing to 1.
    pub targets: Tensor4,
}

/// Per-channel `(x - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// CIFAR-10 training-set channel statistics.
    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };

    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite())
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Config(format!("invalid normalization {self:?}")));
        }
        Ok(())
    }

    pub fn apply(&self, images: &Tensor4) -> Result<Tensor4> {
        if images.channels() != 3 {
            return Err(Error::Shape(format!(
                "normalization expects 3 channels, got {}",
                images.channels()
            )));
        }
        let mut out = images.clone();
        let plane = images.plane();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % 3;
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

/// Shuffled minibatch index lists covering `0..n` once. The last batch may
/// be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let order = rng.permutation(n);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
