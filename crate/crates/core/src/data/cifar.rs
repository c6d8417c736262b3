use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// One label byte and a 3x32x32 planar RGB image.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn is_standard_name(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == CIFAR_TEST_FILE || CIFAR_TRAIN_FILES.contains(&n))
}

/// Reads one binary batch file, keeping at most `limit` records.
///
/// Files with a standard batch name must hold exactly 10000 records; other
/// files (e.g. exported synthetic sets) any positive whole number.
pub fn load_cifar10_file(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |msg: String| Error::Format {
        path: path.to_owned(),
        msg,
    };
    if is_standard_name(path) {
        let expected = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES;
        if bytes.len() != expected {
            return Err(format(format!(
                "expected {expected} bytes ({CIFAR_RECORDS_PER_FILE} records of {CIFAR_RECORD_BYTES}), found {}",
                bytes.len()
            )));
        }
    } else if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(format(format!(
            "expected a positive multiple of {CIFAR_RECORD_BYTES} bytes, found {}",
            bytes.len()
        )));
    }
    let records = (bytes.len() / CIFAR_RECORD_BYTES).min(limit.unwrap_or(usize::MAX));
    let mut labels = Vec::with_capacity(records);
    let mut data = Vec::with_capacity(records * (CIFAR_RECORD_BYTES - 1));
    for (i, rec) in bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .take(records)
        .enumerate()
    {
        if rec[0] > 9 {
            return Err(format(format!(
                "record {i}: label byte {} is not in 0..=9",
                rec[0]
            )));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let name = path
        .file_name()
        .map_or_else(|| "cifar10".into(), |n| n.to_string_lossy().into_owned());
    Dataset::new(
        name,
        10,
        Tensor4::from_vec([records, 3, 32, 32], data)?,
        labels,
    )
}

/// Concatenates the five training files or reads the test file of a
/// standard CIFAR-10 binary directory, in record order.
pub fn load_cifar10_split(
    dir: impl AsRef<Path>,
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<&str> = match split {
        Split::Train => CIFAR_TRAIN_FILES.to_vec(),
        Split::Test => vec![CIFAR_TEST_FILE],
    };
    let limit = limit.unwrap_or(usize::MAX);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for f in files {
        if labels.len() >= limit {
            break;
        }
        let part = load_cifar10_file(dir.join(f), Some(limit - labels.len()))?;
        labels.extend(part.labels);
        data.extend(part.images.into_data());
    }
    let n = labels.len();
    let name = match split {
        Split::Train => "cifar10-train",
        Split::Test => "cifar10-test",
    };
    Dataset::new(name, 10, Tensor4::from_vec([n, 3, 32, 32], data)?, labels)
}

/// A directory loads the training split; a file loads that file.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path.is_dir() {
        load_cifar10_split(path, Split::Train, None)
    } else {
        load_cifar10_file(path, None)
    }
}

/// Writes `ds` in the CIFAR-10 binary layout. Pixels are rounded to the
/// nearest multiple of 1/255, so datasets loaded from this format
/// round-trip byte for byte.
pub fn export_cifar10(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [_, c, h, w] = ds.images.dims();
    if [c, h, w] != [3, 32, 32] || ds.num_classes > 10 {
        return Err(Error::Argument(format!(
            "CIFAR-10 layout needs 3x32x32 images and at most 10 classes, got {c}x{h}x{w} / {}",
            ds.num_classes
        )));
    }
    let mut bytes = Vec::with_capacity(ds.len() * CIFAR_RECORD_BYTES);
    let per = CIFAR_RECORD_BYTES - 1;
    for (i, &label) in ds.labels.iter().enumerate() {
        bytes.push(label as u8);
        bytes.extend(
            ds.images.data()[i * per..(i + 1) * per]
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
