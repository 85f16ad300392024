//! Flat TOML run files: training fields, sweep lattice and dataset reference
//! side by side. Unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use scalelab::data::{
    cifar, idx_files, load_cifar_dir, load_idx_dir, preprocess, synthetic_dataset, Dataset, Split,
};
use scalelab::experiment::{GradcheckOptions, SweepSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::output::sha256_file;

pub const DATA_DIR_ENV: &str = "SCALELAB_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    FashionMnist,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub dataset: DatasetKind,
    /// Directory holding the raw files; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    /// Expected sha256 of each raw file, in loading order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<Vec<String>>,
    /// Training records to keep; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
    #[serde(default = "defaults::synthetic_n")]
    pub synthetic_n: usize,
    #[serde(default = "defaults::synthetic_eval_n")]
    pub synthetic_eval_n: usize,
    #[serde(default = "defaults::synthetic_d")]
    pub synthetic_d: usize,
    #[serde(default = "defaults::synthetic_classes")]
    pub synthetic_classes: usize,
    #[serde(default = "defaults::synthetic_margin")]
    pub synthetic_margin: f64,
    #[serde(default)]
    pub synthetic_seed: u64,
}

mod defaults {
    pub fn synthetic_n() -> usize {
        100
    }
    pub fn synthetic_eval_n() -> usize {
        100
    }
    pub fn synthetic_d() -> usize {
        10
    }
    pub fn synthetic_classes() -> usize {
        2
    }
    pub fn synthetic_margin() -> f64 {
        10.0
    }
}

const DATASET_KEYS: &[&str] = &[
    "dataset",
    "dataset_dir",
    "dataset_sha256",
    "subsample",
    "subsample_seed",
    "synthetic_n",
    "synthetic_eval_n",
    "synthetic_d",
    "synthetic_classes",
    "synthetic_margin",
    "synthetic_seed",
];

const SWEEP_KEYS: &[&str] = &["log10_etas", "log10_alphas", "shared_init"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub sha256: String,
}

pub struct LoadedData {
    pub train: Dataset,
    pub eval: Dataset,
    pub files: Vec<DatasetFile>,
}

pub struct ConfigFile {
    pub path: PathBuf,
    pub table: Table,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let table: Table = text
            .parse()
            .with_context(|| format!("config {} is not valid TOML", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            table,
        })
    }

    fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn split(&self, groups: &[&[&str]]) -> (Vec<Table>, Table) {
        let mut parts = vec![Table::new(); groups.len()];
        let mut rest = Table::new();
        for (k, v) in &self.table {
            match groups.iter().position(|g| g.contains(&k.as_str())) {
                Some(i) => parts[i].insert(k.clone(), v.clone()),
                None => rest.insert(k.clone(), v.clone()),
            };
        }
        (parts, rest)
    }

    fn typed<T: for<'de> Deserialize<'de>>(&self, table: Table, what: &str) -> Result<T> {
        Value::Table(table)
            .try_into()
            .map_err(|e| anyhow!("config {}: {what}: {e}", self.path.display()))
    }

    pub fn train(&self) -> Result<(TrainConfig, DatasetConfig)> {
        let (mut parts, rest) = self.split(&[DATASET_KEYS, SWEEP_KEYS]);
        let sweep_keys = std::mem::take(&mut parts[1]);
        if let Some(k) = sweep_keys.keys().next() {
            bail!("config {}: key '{k}' only applies to sweeps", self.path.display());
        }
        let dataset = self.typed(parts.swap_remove(0), "dataset settings")?;
        Ok((self.typed(rest, "training settings")?, dataset))
    }

    pub fn sweep(&self) -> Result<(SweepSpec, DatasetConfig)> {
        let (mut parts, train) = self.split(&[DATASET_KEYS, SWEEP_KEYS]);
        let mut lattice = parts.pop().expect("two groups");
        let dataset = self.typed(parts.pop().expect("two groups"), "dataset settings")?;
        let mut train = train;
        // lattice points fill these in
        train.entry("alpha").or_insert(Value::Float(1.0));
        train.entry("eta").or_insert(Value::Float(1.0));
        for key in ["alpha", "eta"] {
            if self.table.contains_key(key) {
                bail!(
                    "config {}: '{key}' is set per cell in a sweep; use log10_{key}s",
                    self.path.display()
                );
            }
        }
        lattice.insert("base".into(), Value::Table(train));
        let spec: SweepSpec = self.typed(lattice, "sweep settings")?;
        Ok((spec, dataset))
    }

    pub fn gradcheck(&self) -> Result<GradcheckOptions> {
        self.typed(self.table.clone(), "gradcheck settings")
    }
}

fn check_checksums(cfg: &DatasetConfig, files: &[DatasetFile]) -> Result<()> {
    let Some(expected) = &cfg.dataset_sha256 else {
        return Ok(());
    };
    if expected.len() != files.len() {
        bail!(
            "dataset_sha256 lists {} checksums but the dataset has {} files",
            expected.len(),
            files.len()
        );
    }
    for (want, file) in expected.iter().zip(files) {
        if !want.eq_ignore_ascii_case(&file.sha256) {
            bail!(
                "checksum mismatch for {}: expected {want}, found {}",
                file.path.display(),
                file.sha256
            );
        }
    }
    Ok(())
}

impl DatasetConfig {
    /// `flag`, then the config's own `dataset_dir`, then the environment.
    pub fn resolve_dir(&self, config_dir: &Path, flag: Option<&Path>) -> Result<PathBuf> {
        if let Some(dir) = flag {
            return Ok(dir.to_path_buf());
        }
        if let Some(dir) = &self.dataset_dir {
            return Ok(if dir.is_absolute() {
                dir.clone()
            } else {
                config_dir.join(dir)
            });
        }
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            return Ok(PathBuf::from(dir));
        }
        bail!(
            "no dataset directory: set dataset_dir in the config, pass --dataset-dir, or export {DATA_DIR_ENV}"
        )
    }

    pub fn load(&self, config: &ConfigFile, flag: Option<&Path>) -> Result<LoadedData> {
        let name = match self.dataset {
            DatasetKind::Synthetic => return self.synthetic(),
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion_mnist",
            DatasetKind::Cifar10 => "cifar10",
        };
        let dir = self.resolve_dir(&config.base_dir(), flag)?;
        if !dir.is_dir() {
            bail!("dataset directory {} does not exist", dir.display());
        }
        let paths: Vec<PathBuf> = match self.dataset {
            DatasetKind::Cifar10 => cifar::TRAIN_BATCHES
                .iter()
                .chain([&cifar::TEST_BATCH])
                .map(|f| dir.join(f))
                .collect(),
            _ => idx_files(&dir)?.to_vec(),
        };
        let files = paths
            .iter()
            .map(|p| {
                Ok(DatasetFile {
                    sha256: sha256_file(p)?,
                    path: p.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        check_checksums(self, &files)?;
        let (raw_train, raw_eval) = match self.dataset {
            DatasetKind::Cifar10 => load_cifar_dir(&dir, name)?,
            _ => load_idx_dir(&dir, name)?,
        };
        Ok(LoadedData {
            train: preprocess(&raw_train, self.subsample, self.subsample_seed, Split::Train)?,
            eval: preprocess(&raw_eval, None, self.subsample_seed, Split::Eval)?,
            files,
        })
    }

    /// Train and eval rows come from one draw so they share centroids.
    fn synthetic(&self) -> Result<LoadedData> {
        let (n, m) = (self.synthetic_n, self.synthetic_eval_n);
        if m == 0 {
            bail!("synthetic_eval_n must be at least 1");
        }
        let all = synthetic_dataset(
            n + m,
            self.synthetic_d,
            self.synthetic_classes,
            self.synthetic_margin,
            self.synthetic_seed,
        )?;
        let train: Vec<usize> = (0..n).collect();
        let eval: Vec<usize> = (n..n + m).collect();
        Ok(LoadedData {
            train: all.subset(&train, Split::Train),
            eval: all.subset(&eval, Split::Eval),
            files: Vec::new(),
        })
    }
}
