//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes in row-major order.

use std::path::Path;

use mocse_corrupt::Image;

use super::{Dataset, Split};
use crate::error::{io_err, CoreError, Result};

pub const RECORD_BYTES: usize = 3073;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Decodes whole records; `expected` pins the record count.
pub fn decode_records(
    bytes: &[u8],
    expected: Option<usize>,
) -> std::result::Result<(Vec<Image>, Vec<usize>), String> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(format!(
            "size {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        ));
    }
    let count = bytes.len() / RECORD_BYTES;
    if let Some(e) = expected.filter(|&e| e != count) {
        return Err(format!("{count} records, expected {e}"));
    }
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = usize::from(rec[0]);
        if label >= CLASS_NAMES.len() {
            return Err(format!("record {i} has label {label}"));
        }
        let planes = &rec[1..];
        let mut hwc = Vec::with_capacity(3072);
        for p in 0..1024 {
            for c in 0..3 {
                hwc.push(planes[c * 1024 + p]);
            }
        }
        images.push(Image::from_bytes(32, 32, 3, &hwc).map_err(|e| e.to_string())?);
        labels.push(label);
    }
    Ok((images, labels))
}

fn load_files(dir: &Path, files: &[&str], split: Split) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let (im, lb) = decode_records(&bytes, Some(RECORDS_PER_FILE))
            .map_err(|msg| CoreError::Format { path, msg })?;
        images.extend(im);
        labels.extend(lb);
    }
    let names = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    Dataset::new(images, labels, names, split, format!("cifar10:{split}"))
}

/// Train (50000) and test (10000) splits from the directory holding the
/// `*.bin` batch files.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((
        load_files(dir, &TRAIN_FILES, Split::Train)?,
        load_files(dir, &[TEST_FILE], Split::Test)?,
    ))
}
