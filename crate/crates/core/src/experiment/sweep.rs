//! Dense (η, α) lattices of independent training runs, their CSV form, and
//! the ridge analysis of the best learning rate per scaling factor.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::ModelParams;
use crate::numerics::{derive_seed, SeededRng};
use crate::optimizers::OptimizerKind;

use super::{train_from, TrainConfig, TrainError, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub log10_etas: Vec<f64>,
    pub log10_alphas: Vec<f64>,
    /// Template for every cell; `alpha`, `eta` and `seed` are overwritten.
    pub base: TrainConfig,
    /// All cells start from the initialization of `base.seed`.
    #[serde(default)]
    pub shared_init: bool,
}

impl SweepSpec {
    pub fn cell_count(&self) -> usize {
        self.log10_etas.len() * self.log10_alphas.len()
    }

    /// Seed of cell `(i, j)` (η-index, α-index).
    pub fn cell_seed(&self, eta_index: usize, alpha_index: usize) -> u64 {
        if self.shared_init {
            self.base.seed
        } else {
            derive_seed(self.base.seed, &[eta_index as u64, alpha_index as u64])
        }
    }

    pub fn cell_config(&self, eta_index: usize, alpha_index: usize) -> TrainConfig {
        TrainConfig {
            eta: 10f64.powf(self.log10_etas[eta_index]),
            alpha: 10f64.powf(self.log10_alphas[alpha_index]),
            seed: self.cell_seed(eta_index, alpha_index),
            ..self.base.clone()
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.cell_count() == 0 {
            return Err(TrainError::Config("sweep lattice is empty".into()));
        }
        for v in self.log10_etas.iter().chain(&self.log10_alphas) {
            if !v.is_finite() {
                return Err(TrainError::Config(format!("non-finite lattice coordinate {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub eta_index: usize,
    pub alpha_index: usize,
    pub log10_eta: f64,
    pub log10_alpha: f64,
    pub seed: u64,
    pub report: TrainReport,
}

impl SweepCell {
    pub fn row(&self, optimizer: OptimizerKind) -> GridRow {
        let r = &self.report;
        GridRow {
            log10_eta: self.log10_eta,
            log10_alpha: self.log10_alpha,
            optimizer,
            train_acc: r.train_accuracy,
            eval_acc: r.eval_accuracy,
            consistency: r.consistency,
            diverged: r.diverged,
            frozen: r.frozen,
            final_loss: r.final_loss,
            steps_completed: r.steps_completed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub spec: SweepSpec,
    /// η-major: cell `(i, j)` sits at `i * n_alpha + j`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, eta_index: usize, alpha_index: usize) -> &SweepCell {
        &self.cells[eta_index * self.spec.log10_alphas.len() + alpha_index]
    }

    pub fn rows(&self) -> Vec<GridRow> {
        self.cells
            .iter()
            .map(|c| c.row(self.spec.base.optimizer))
            .collect()
    }
}

pub fn sweep(spec: &SweepSpec, train_set: &Dataset, eval_set: &Dataset) -> Result<SweepGrid, TrainError> {
    sweep_with(spec, train_set, eval_set, None, |_| {})
}

/// Runs every lattice cell, at most `threads` at a time (all cores when
/// `None`). `on_cell` sees each cell as it finishes, in completion order.
pub fn sweep_with(
    spec: &SweepSpec,
    train_set: &Dataset,
    eval_set: &Dataset,
    threads: Option<usize>,
    on_cell: impl Fn(&SweepCell) + Sync,
) -> Result<SweepGrid, TrainError> {
    spec.validate()?;
    spec.base.validate()?;
    let n_alpha = spec.log10_alphas.len();
    let dims = crate::model::ModelDims::new(train_set.input_dim(), spec.base.hidden, train_set.num_classes());
    let shared = spec
        .shared_init
        .then(|| ModelParams::init(dims, &mut SeededRng::new(spec.base.seed)));

    let run_cell = |k: usize| -> Result<SweepCell, TrainError> {
        let (i, j) = (k / n_alpha, k % n_alpha);
        let config = spec.cell_config(i, j);
        let init = match &shared {
            Some(p) => p.clone(),
            None => ModelParams::init(dims, &mut SeededRng::new(config.seed)),
        };
        let outcome = train_from(&config, init, train_set, eval_set)?;
        let cell = SweepCell {
            eta_index: i,
            alpha_index: j,
            log10_eta: spec.log10_etas[i],
            log10_alpha: spec.log10_alphas[j],
            seed: config.seed,
            report: outcome.report,
        };
        on_cell(&cell);
        Ok(cell)
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        (0..spec.cell_count())
            .into_par_iter()
            .map(run_cell)
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SweepGrid {
        spec: spec.clone(),
        cells,
    })
}

/// One line of the persisted grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub log10_eta: f64,
    pub log10_alpha: f64,
    pub optimizer: OptimizerKind,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub consistency: f64,
    pub diverged: bool,
    pub frozen: bool,
    pub final_loss: f64,
    pub steps_completed: usize,
}

pub const GRID_COLUMNS: [&str; 10] = [
    "log10_eta",
    "log10_alpha",
    "optimizer",
    "train_acc",
    "eval_acc",
    "consistency",
    "diverged",
    "frozen",
    "final_loss",
    "steps_completed",
];

#[derive(Debug, Error)]
pub enum GridCsvError {
    #[error("grid header must be {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error("grid row {row}, column {column}: {message}")]
    Field {
        row: u64,
        column: String,
        message: String,
    },
    #[error("grid csv: {0}")]
    Csv(String),
}

pub fn write_grid_csv(rows: &[GridRow], out: impl Write) -> Result<(), GridCsvError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(GRID_COLUMNS)
            .map_err(|e| GridCsvError::Csv(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| GridCsvError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| GridCsvError::Csv(e.to_string()))
}

/// Parses a grid; errors name the 1-based data row and the column.
pub fn read_grid_csv(input: impl Read) -> Result<Vec<GridRow>, GridCsvError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| GridCsvError::Csv(e.to_string()))?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != GRID_COLUMNS {
        return Err(GridCsvError::Header {
            expected: GRID_COLUMNS.join(","),
            found: found.join(","),
        });
    }
    let mut rows = Vec::new();
    for (k, record) in r.records().enumerate() {
        let row = k as u64 + 1;
        let record = record.map_err(|e| GridCsvError::Field {
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        let parsed: GridRow = record.deserialize(Some(&header)).map_err(|e| {
            let column = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err
                    .field()
                    .and_then(|i| GRID_COLUMNS.get(i as usize))
                    .map_or("-".to_string(), |c| c.to_string()),
                _ => "-".to_string(),
            };
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.kind().to_string(),
                _ => e.to_string(),
            };
            GridCsvError::Field { row, column, message }
        })?;
        rows.push(parsed);
    }
    Ok(rows)
}

#[derive(Debug, Error, PartialEq)]
pub enum RidgeError {
    #[error("ridge fit needs at least {needed} alpha columns with a trained cell at or above the accuracy floor, found {found}")]
    InsufficientColumns { needed: usize, found: usize },
    #[error("grid mixes optimizers {0} and {1}")]
    MixedOptimizers(OptimizerKind, OptimizerKind),
}

pub const MIN_RIDGE_COLUMNS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgePoint {
    pub log10_alpha: f64,
    pub log10_eta: f64,
    pub eval_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Best cell of every qualifying α column, ascending in α.
    pub points: Vec<RidgePoint>,
}

fn trained(r: &GridRow) -> bool {
    !r.diverged && !r.frozen
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Best η per α column and the least-squares slope of `log10 η_best` against
/// `log10 α`.
///
/// Diverged and frozen cells never count. A column qualifies when its best
/// remaining cell reaches `accuracy_floor`; ties go to the smaller η.
pub fn ridge_slope(rows: &[GridRow], accuracy_floor: f64) -> Result<RidgeFit, RidgeError> {
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.optimizer != first.optimizer) {
            return Err(RidgeError::MixedOptimizers(first.optimizer, other.optimizer));
        }
    }
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.log10_alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let mut points = Vec::new();
    for &a in &alphas {
        let mut best: Option<&GridRow> = None;
        for r in rows.iter().filter(|r| r.log10_alpha == a && trained(r)) {
            best = match best {
                Some(b) if b.eval_acc > r.eval_acc => Some(b),
                Some(b) if b.eval_acc == r.eval_acc && b.log10_eta <= r.log10_eta => Some(b),
                _ => Some(r),
            };
        }
        if let Some(b) = best.filter(|b| b.eval_acc >= accuracy_floor) {
            points.push(RidgePoint {
                log10_alpha: a,
                log10_eta: b.log10_eta,
                eval_acc: b.eval_acc,
            });
        }
    }
    if points.len() < MIN_RIDGE_COLUMNS {
        return Err(RidgeError::InsufficientColumns {
            needed: MIN_RIDGE_COLUMNS,
            found: points.len(),
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.log10_alpha, p.log10_eta)).collect();
    let (slope, intercept) = least_squares(&xy);
    Ok(RidgeFit {
        slope,
        intercept,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    /// `log10 α` of the shared vertex of the two segments.
    pub log10_alpha: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub residual: f64,
}

/// Best two-segment fit of the ridge, each segment holding at least two
/// points and sharing its split point. `None` with fewer than three points.
pub fn locate_fold(fit: &RidgeFit) -> Option<FoldEstimate> {
    let xy: Vec<(f64, f64)> = fit.points.iter().map(|p| (p.log10_alpha, p.log10_eta)).collect();
    if xy.len() < 3 {
        return None;
    }
    let sse = |pts: &[(f64, f64)], slope: f64, intercept: f64| -> f64 {
        pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum()
    };
    let mut best: Option<FoldEstimate> = None;
    for k in 1..xy.len() - 1 {
        let (left, right) = (&xy[..=k], &xy[k..]);
        let (ls, li) = least_squares(left);
        let (rs, ri) = least_squares(right);
        let residual = sse(left, ls, li) + sse(right, rs, ri);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(FoldEstimate {
                log10_alpha: xy[k].0,
                left_slope: ls,
                right_slope: rs,
                residual,
            });
        }
    }
    best
}

/// The cells at the lattice η closest to `log10_eta`, ascending in α.
pub fn alpha_slice(rows: &[GridRow], log10_eta: f64) -> Vec<GridRow> {
    let Some(nearest) = rows
        .iter()
        .map(|r| r.log10_eta)
        .min_by(|a, b| (a - log10_eta).abs().total_cmp(&(b - log10_eta).abs()))
    else {
        return Vec::new();
    };
    let mut slice: Vec<GridRow> = rows.iter().filter(|r| r.log10_eta == nearest).cloned().collect();
    slice.sort_by(|a, b| a.log10_alpha.total_cmp(&b.log10_alpha));
    slice
}
