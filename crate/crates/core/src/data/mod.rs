//! Dataset ingestion: IDX and CIFAR-10 parsers, preprocessing, synthetic data.

pub mod cifar;
mod dataset;
pub mod idx;

pub use cifar::{load_cifar10, parse_cifar_batch, CifarError, CifarRecords};
pub use dataset::{
    find_idx_file, idx_files, load_cifar_dir, load_idx_dir, one_vs_all, preprocess, sphere_normalize,
    synthetic_dataset, DataError, Dataset, RawImages, Split, NUM_CLASSES,
};
pub use idx::{load_idx, parse_idx, IdxError, IdxTensor};
