use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cifar::{self, CifarError, CifarRecords};
use super::idx::{self, IdxError, IdxTensor};
use crate::numerics::{Matrix, SeededRng};

/// Class count of MNIST, Fashion-MNIST and CIFAR-10.
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Cifar(#[from] CifarError),
    #[error("{0}")]
    Invalid(String),
    #[error("no {stem} (or {stem}.gz) in {dir}")]
    Missing { dir: String, stem: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> DataError {
    DataError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Flattened images as stored on disk, before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImages {
    pub name: String,
    /// Input dimension `d` (pixels per image).
    pub dim: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_idx(images: &IdxTensor, labels: &IdxTensor, name: &str) -> Result<Self, DataError> {
        if images.rank() != 3 || labels.rank() != 1 {
            return Err(invalid(format!(
                "{name}: expected rank-3 images and rank-1 labels, got ranks {} and {}",
                images.rank(),
                labels.rank()
            )));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(invalid(format!(
                "{name}: {} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        Ok(Self {
            name: name.to_string(),
            dim: images.dims[1] as usize * images.dims[2] as usize,
            pixels: images.data.clone(),
            labels: labels.data.clone(),
        })
    }

    pub fn from_cifar(records: CifarRecords, name: &str) -> Self {
        Self {
            name: name.to_string(),
            dim: cifar::PIXELS,
            pixels: records.pixels,
            labels: records.labels,
        }
    }
}

/// Normalized inputs with one-vs-all ±1 label rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    /// `n x d`, every row on the sphere `Σ x² = d`.
    pub inputs: Matrix,
    /// `n x c`, exactly one `+1` per row.
    pub labels: Matrix,
    pub classes: Vec<usize>,
    /// Zero-norm rows dropped during normalization.
    pub excluded_rows: usize,
}

impl Dataset {
    /// Normalizes `inputs` and encodes `classes`; zero rows are dropped.
    pub fn from_parts(
        name: &str,
        split: Split,
        inputs: &Matrix,
        classes: &[usize],
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if inputs.rows() != classes.len() {
            return Err(invalid(format!(
                "{name}: {} input rows but {} labels",
                inputs.rows(),
                classes.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= num_classes) {
            return Err(invalid(format!(
                "{name}: label {bad} out of range for {num_classes} classes"
            )));
        }
        let (normalized, kept) = sphere_normalize(inputs);
        let classes: Vec<usize> = kept.iter().map(|&i| classes[i]).collect();
        Ok(Self {
            name: name.to_string(),
            split,
            labels: one_vs_all(&classes, num_classes),
            inputs: normalized,
            excluded_rows: inputs.rows() - kept.len(),
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    /// Rows `indices` as a new dataset; rows are already normalized.
    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split,
            inputs: self.inputs.select_rows(indices),
            labels: self.labels.select_rows(indices),
            classes: indices.iter().map(|&i| self.classes[i]).collect(),
            excluded_rows: 0,
        }
    }

    /// Header `x0..x{d-1},label`; floats use the shortest round-trip form.
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), DataError> {
        let d = self.input_dim();
        let header: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(["label".into()]).collect();
        writeln!(out, "{}", header.join(","))?;
        for (row, class) in self.inputs.iter_rows().zip(&self.classes) {
            let mut line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            line.push(class.to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(
        input: impl Read,
        name: &str,
        split: Split,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv(e.to_string()))?
            .clone();
        let d =
            headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
                DataError::Csv("header needs at least one x column and a label column".into())
            })?;
        for (j, h) in headers.iter().enumerate().take(d) {
            if h != format!("x{j}") {
                return Err(DataError::Csv(format!(
                    "column {j}: expected header x{j}, found '{h}'"
                )));
            }
        }
        if &headers[d] != "label" {
            return Err(DataError::Csv(format!(
                "column {d}: expected header label, found '{}'",
                &headers[d]
            )));
        }
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
            let line = i + 2;
            for j in 0..d {
                let v: f64 = record[j].trim().parse().map_err(|_| {
                    DataError::Csv(format!(
                        "line {line}, column x{j}: '{}' is not a number",
                        &record[j]
                    ))
                })?;
                data.push(v);
            }
            let k: usize = record[d].trim().parse().map_err(|_| {
                DataError::Csv(format!(
                    "line {line}, column label: '{}' is not a class index",
                    &record[d]
                ))
            })?;
            classes.push(k);
        }
        let inputs = Matrix::from_vec(classes.len(), d, data).map_err(|e| DataError::Csv(e.to_string()))?;
        Self::from_parts(name, split, &inputs, &classes, num_classes)
    }
}

/// ±1 one-vs-all encoding.
pub fn one_vs_all(classes: &[usize], num_classes: usize) -> Matrix {
    let mut labels = Matrix::filled(classes.len(), num_classes, -1.0);
    for (r, &k) in classes.iter().enumerate() {
        labels.set(r, k, 1.0);
    }
    labels
}

/// Scales every row to `Σ x² = d`. Rows with zero norm are dropped; the
/// second value lists the indices of the rows that were kept.
pub fn sphere_normalize(inputs: &Matrix) -> (Matrix, Vec<usize>) {
    let d = inputs.cols() as f64;
    let mut data = Vec::with_capacity(inputs.data().len());
    let mut kept = Vec::with_capacity(inputs.rows());
    for (i, row) in inputs.iter_rows().enumerate() {
        let sq: f64 = row.iter().map(|x| x * x).sum();
        if sq == 0.0 || !sq.is_finite() {
            continue;
        }
        let s = (d / sq).sqrt();
        data.extend(row.iter().map(|x| x * s));
        kept.push(i);
    }
    let m = Matrix::from_vec(kept.len(), inputs.cols(), data).expect("row-aligned buffer");
    (m, kept)
}

/// Flattens, subsamples (train split only), normalizes and encodes.
///
/// `subsample_n = None` or a value at least the record count keeps every record.
pub fn preprocess(
    raw: &RawImages,
    subsample_n: Option<usize>,
    seed: u64,
    split: Split,
) -> Result<Dataset, DataError> {
    if raw.is_empty() {
        return Err(invalid(format!("{}: no records", raw.name)));
    }
    if raw.pixels.len() != raw.len() * raw.dim {
        return Err(invalid(format!(
            "{}: {} pixel bytes for {} records of {}",
            raw.name,
            raw.pixels.len(),
            raw.len(),
            raw.dim
        )));
    }
    let indices: Vec<usize> = match (split, subsample_n) {
        (Split::Train, Some(k)) if k < raw.len() => {
            let mut idx = SeededRng::new(seed).sample_indices(raw.len(), k);
            idx.sort_unstable();
            idx
        }
        _ => (0..raw.len()).collect(),
    };
    let mut data = Vec::with_capacity(indices.len() * raw.dim);
    let mut classes = Vec::with_capacity(indices.len());
    for &i in &indices {
        data.extend(raw.image(i).iter().map(|&p| f64::from(p)));
        classes.push(raw.labels[i] as usize);
    }
    let inputs = Matrix::from_vec(indices.len(), raw.dim, data).expect("row-aligned buffer");
    Dataset::from_parts(&raw.name, split, &inputs, &classes, NUM_CLASSES)
}

/// Gaussian clusters around `c` orthogonal centroids with pairwise distance
/// `margin`, sphere-normalized. Sample `i` belongs to class `i mod c`.
pub fn synthetic_dataset(n: usize, d: usize, c: usize, margin: f64, seed: u64) -> Result<Dataset, DataError> {
    if c < 2 || n < c || d < c {
        return Err(invalid(format!(
            "synthetic dataset needs 2 <= c <= n and c <= d (n={n}, d={d}, c={c})"
        )));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(invalid(format!("margin must be positive, got {margin}")));
    }
    let mut rng = SeededRng::new(seed);
    // Gram–Schmidt on Gaussian directions
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(c);
    while centroids.len() < c {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for u in &centroids {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            centroids.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let radius = margin / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(n * d);
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % c;
        data.extend(centroids[k].iter().map(|&u| radius * u + rng.normal()));
        classes.push(k);
    }
    let inputs = Matrix::from_vec(n, d, data).expect("row-aligned buffer");
    Dataset::from_parts(
        &format!("synthetic-n{n}-d{d}-c{c}-m{margin}-s{seed}"),
        Split::Train,
        &inputs,
        &classes,
        c,
    )
}

/// `<dir>/<stem>` or `<dir>/<stem>.gz`, whichever exists (plain first).
pub fn find_idx_file(dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(DataError::Missing {
        dir: dir.display().to_string(),
        stem: stem.to_string(),
    })
}

/// The four IDX files of an MNIST-layout directory, train pair first.
pub fn idx_files(dir: &Path) -> Result<[PathBuf; 4], DataError> {
    Ok([
        find_idx_file(dir, "train-images-idx3-ubyte")?,
        find_idx_file(dir, "train-labels-idx1-ubyte")?,
        find_idx_file(dir, "t10k-images-idx3-ubyte")?,
        find_idx_file(dir, "t10k-labels-idx1-ubyte")?,
    ])
}

/// Loads the train and eval splits of an MNIST-layout directory.
pub fn load_idx_dir(dir: &Path, name: &str) -> Result<(RawImages, RawImages), DataError> {
    let [ti, tl, ei, el] = idx_files(dir)?;
    let train = RawImages::from_idx(&idx::load_idx(ti)?, &idx::load_idx(tl)?, name)?;
    let eval = RawImages::from_idx(&idx::load_idx(ei)?, &idx::load_idx(el)?, name)?;
    Ok((train, eval))
}

pub fn load_cifar_dir(dir: &Path, name: &str) -> Result<(RawImages, RawImages), DataError> {
    let (train, test) = cifar::load_cifar10(dir)?;
    Ok((
        RawImages::from_cifar(train, name),
        RawImages::from_cifar(test, name),
    ))
}
