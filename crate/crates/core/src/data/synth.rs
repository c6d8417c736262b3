use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor4;

/// Pattern cells per side: each class template is a 4x4 grid of constant
/// blocks per channel, upsampled to the image size.
const CELLS: usize = 4;
const NOISE_STD: f64 = 0.1;

/// `K` classes of `n_per_class` images each. Class `k` is a fixed random
/// low-frequency template (cell values in [0.2, 0.8]) plus Gaussian noise
/// of standard deviation 0.1, clamped to [0, 1] and rounded to multiples
/// of 1/255 so the set exports losslessly. Labels cycle `0, 1, .., K-1`.
pub fn synth_blobs(k: usize, n_per_class: usize, image_size: usize, rng: &Rng) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Argument(format!(
            "synth_blobs needs at least 2 classes, got {k}"
        )));
    }
    if image_size < CELLS {
        return Err(Error::Argument(format!(
            "image size must be at least {CELLS}, got {image_size}"
        )));
    }
    let mut tmpl_rng = rng.split(0);
    let templates: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..3 * CELLS * CELLS)
                .map(|_| 0.2 + 0.6 * tmpl_rng.uniform())
                .collect()
        })
        .collect();
    let n = k * n_per_class;
    let hw = image_size * image_size;
    let mut data = Vec::with_capacity(n * 3 * hw);
    let mut labels = Vec::with_capacity(n);
    let mut noise = rng.split(1);
    for i in 0..n {
        let label = i % k;
        labels.push(label);
        let t = &templates[label];
        for c in 0..3 {
            for y in 0..image_size {
                for x in 0..image_size {
                    let cell = (y * CELLS / image_size) * CELLS + x * CELLS / image_size;
                    let v =
                        (t[c * CELLS * CELLS + cell] + NOISE_STD * noise.normal()).clamp(0.0, 1.0);
                    data.push((v * 255.0).round() / 255.0);
                }
            }
        }
    }
    Dataset::new(
        format!("synth-blobs-k{k}-n{n_per_class}-s{image_size}"),
        k,
        Tensor4::from_vec([n, 3, image_size, image_size], data)?,
        labels,
    )
}
