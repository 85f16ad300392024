//! CIFAR-10 binary batches: fixed 3073-byte records of one label byte
//! (0..=9) followed by 3072 pixels, channel-major (1024 R, 1024 G, 1024 B).

use std::path::Path;

use thiserror::Error;

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3072;
pub const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_BATCH: &str = "test_batch.bin";

#[derive(Debug, Error)]
pub enum CifarError {
    #[error("{file}: size {size} is not a multiple of {RECORD_LEN} (truncated record)")]
    Truncated { file: String, size: usize },
    #[error("{file}: record {record} has label byte {label}, expected 0..=9")]
    Label { file: String, record: usize, label: u8 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CifarRecords {
    /// `len() x 3072` pixel bytes, row-major.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl CifarRecords {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn extend(&mut self, other: CifarRecords) {
        self.pixels.extend(other.pixels);
        self.labels.extend(other.labels);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_LEN);
        for (i, &label) in self.labels.iter().enumerate() {
            out.push(label);
            out.extend_from_slice(self.image(i));
        }
        out
    }
}

/// Parses one batch file's bytes; `name` is used in error messages.
pub fn parse_cifar_batch(bytes: &[u8], name: &str) -> Result<CifarRecords, CifarError> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(CifarError::Truncated {
            file: name.to_string(),
            size: bytes.len(),
        });
    }
    let n = bytes.len() / RECORD_LEN;
    let mut records = CifarRecords {
        pixels: Vec::with_capacity(n * PIXELS),
        labels: Vec::with_capacity(n),
    };
    for (record, chunk) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(CifarError::Label {
                file: name.to_string(),
                record,
                label,
            });
        }
        records.labels.push(label);
        records.pixels.extend_from_slice(&chunk[1..]);
    }
    Ok(records)
}

pub fn load_cifar_batch(path: impl AsRef<Path>) -> Result<CifarRecords, CifarError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CifarError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cifar_batch(&bytes, &path.display().to_string())
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(CifarRecords, CifarRecords), CifarError> {
    let dir = dir.as_ref();
    let mut train = CifarRecords::default();
    for name in TRAIN_BATCHES {
        train.extend(load_cifar_batch(dir.join(name))?);
    }
    let test = load_cifar_batch(dir.join(TEST_BATCH))?;
    Ok((train, test))
}
