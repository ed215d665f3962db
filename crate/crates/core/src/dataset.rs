//! Run-to-failure time-series ingestion and synthetic sequence generation.
//!
//! [`ingest`] turns a per-unit degradation log (whitespace- or
//! comma-delimited) into overlapping fixed-length windows with capped
//! remaining-useful-life targets; [`synth_sequences`] produces seeded
//! input/output windows from a known linear generator for desk-scale
//! training tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Windowed datasets
// ---------------------------------------------------------------------------

/// Column selection and windowing parameters for [`ingest`]. Columns are
/// zero-based; only `feature_columns` are kept (everything else is dropped).
#[derive(Debug, Clone)]
pub struct IngestManifest {
    pub unit_column: usize,
    pub feature_columns: Vec<usize>,
    pub window_len: usize,
    pub rul_cap: f64,
}

/// Overlapping windows of a multivariate time series with scalar targets.
///
/// Invariants: every window's rows share one unit id; features are scaled so
/// the extremes over the whole set are exactly −1 and 1; targets are scaled
/// to [0, 1] (remaining life divided by the cap, or min–max for synthetic
/// targets).
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    /// One `window_len × features` matrix per window, in scaled units.
    pub windows: Vec<DMatrix<f64>>,
    /// One scaled target per window.
    pub targets: Vec<f64>,
    /// The unit every window belongs to.
    pub unit_ids: Vec<u64>,
    /// Per-feature raw extremes used for scaling.
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    /// Raw target range mapped onto [0, 1].
    pub target_min: f64,
    pub target_max: f64,
    /// Units shorter than the window length, skipped with a warning.
    pub skipped_units: Vec<u64>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn features(&self) -> usize {
        self.feature_min.len()
    }

    /// Undo the target scaling for one scaled target value.
    pub fn unscale_target(&self, t: f64) -> f64 {
        self.target_min + t * (self.target_max - self.target_min)
    }
}

fn scale_features(
    units: Vec<(u64, Vec<Vec<f64>>)>,
    raw_targets: Vec<Vec<f64>>,
    window_len: usize,
    target_min: f64,
    target_max: f64,
) -> Result<WindowedDataset> {
    let n_feat = units.first().map_or(0, |(_, rows)| rows.first().map_or(0, Vec::len));
    let mut lo = vec![f64::INFINITY; n_feat];
    let mut hi = vec![f64::NEG_INFINITY; n_feat];
    for (_, rows) in &units {
        for row in rows {
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
    }
    for j in 0..n_feat {
        if !(hi[j] > lo[j]) {
            return Err(Error::DegenerateColumn(format!(
                "feature column {j} is constant (value {})",
                lo[j]
            )));
        }
    }
    if !(target_max > target_min) {
        return Err(Error::DegenerateColumn("target range is empty".into()));
    }

    let mut windows = Vec::new();
    let mut targets = Vec::new();
    let mut unit_ids = Vec::new();
    let mut skipped_units = Vec::new();
    for ((unit, rows), t_raw) in units.into_iter().zip(raw_targets) {
        if rows.len() < window_len {
            eprintln!(
                "warning: unit {unit} has {} rows, shorter than the window length {window_len}; skipped",
                rows.len()
            );
            skipped_units.push(unit);
            continue;
        }
        for start in 0..=(rows.len() - window_len) {
            let end = start + window_len;
            let w = DMatrix::from_fn(window_len, n_feat, |i, j| {
                let v = rows[start + i][j];
                2.0 * (v - lo[j]) / (hi[j] - lo[j]) - 1.0
            });
            windows.push(w);
            targets.push((t_raw[end - 1] - target_min) / (target_max - target_min));
            unit_ids.push(unit);
        }
    }
    Ok(WindowedDataset {
        windows,
        targets,
        unit_ids,
        feature_min: lo,
        feature_max: hi,
        target_min,
        target_max,
        skipped_units,
    })
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

fn split_row(line: &str, comma: bool) -> Vec<&str> {
    if comma {
        line.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse a per-unit degradation log and emit stride-1 windows with capped
/// remaining-life targets.
///
/// The file may be whitespace- or comma-delimited (auto-detected). Remaining
/// life for a row is the number of rows after it within its unit, capped at
/// `rul_cap` before scaling; targets are the capped life of each window's
/// last row divided by the cap.
pub fn ingest(path: &Path, manifest: &IngestManifest) -> Result<WindowedDataset> {
    if manifest.window_len == 0 {
        return Err(Error::DimensionMismatch("window length must be positive".into()));
    }
    if manifest.rul_cap <= 0.0 {
        return Err(Error::DimensionMismatch("remaining-life cap must be positive".into()));
    }
    let text = std::fs::read_to_string(path)?;
    let comma = text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.contains(','));

    // Units in first-seen order; rows within a unit in file order.
    let mut order: Vec<u64> = Vec::new();
    let mut rows_of: std::collections::HashMap<u64, Vec<Vec<f64>>> =
        std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_row(line, comma);
        let need = manifest
            .feature_columns
            .iter()
            .chain(std::iter::once(&manifest.unit_column))
            .max()
            .copied()
            .unwrap_or(0);
        if fields.len() <= need {
            return Err(Error::MalformedRow {
                row: idx,
                msg: format!("{} fields, need at least {}", fields.len(), need + 1),
            });
        }
        let unit_field = fields[manifest.unit_column];
        let unit: u64 = unit_field.parse().map_err(|_| Error::MalformedRow {
            row: idx,
            msg: format!("unit id {unit_field:?} is not an integer"),
        })?;
        let mut row = Vec::with_capacity(manifest.feature_columns.len());
        for &c in &manifest.feature_columns {
            let v: f64 = fields[c].parse().map_err(|_| Error::MalformedRow {
                row: idx,
                msg: format!("column {c} value {:?} is not a number", fields[c]),
            })?;
            row.push(v);
        }
        if !rows_of.contains_key(&unit) {
            order.push(unit);
        }
        rows_of.entry(unit).or_default().push(row);
    }

    let mut units = Vec::with_capacity(order.len());
    let mut raw_targets = Vec::with_capacity(order.len());
    for unit in order {
        let rows = rows_of.remove(&unit).unwrap();
        let last = rows.len() - 1;
        let rul: Vec<f64> =
            (0..rows.len()).map(|k| ((last - k) as f64).min(manifest.rul_cap)).collect();
        units.push((unit, rows));
        raw_targets.push(rul);
    }
    scale_features(units, raw_targets, manifest.window_len, 0.0, manifest.rul_cap)
}

// ---------------------------------------------------------------------------
// Synthetic sequences
// ---------------------------------------------------------------------------

/// Parameters of the seeded linear sequence generator: `count` independent
/// input/output sequences of `length` steps from y⁺ = a·y + (1 − a)·u driven
/// by a random piecewise-constant input, windowed at `window_len` with the
/// next output as target (plus additive Gaussian-ish noise of amplitude
/// `noise`).
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub a: f64,
    pub noise: f64,
    pub count: usize,
    pub length: usize,
    pub window_len: usize,
    pub seed: u64,
}

/// Generate a reproducible one-step-prediction dataset from a known stable
/// first-order generator. Features per time step are [input, output]; the
/// target of each window is the output one step past the window's end.
pub fn synth_sequences(spec: &SynthSpec) -> Result<WindowedDataset> {
    if spec.a.abs() >= 1.0 {
        return Err(Error::DimensionMismatch(format!(
            "generator pole {} is not inside the unit circle",
            spec.a
        )));
    }
    if spec.length <= spec.window_len {
        return Err(Error::DimensionMismatch(
            "sequence length must exceed the window length by at least one step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut units = Vec::with_capacity(spec.count);
    let mut raw_targets = Vec::with_capacity(spec.count);
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    for unit in 0..spec.count {
        let mut u = 0.0;
        let mut y = 0.0f64;
        let mut rows = Vec::with_capacity(spec.length);
        let mut next_y = Vec::with_capacity(spec.length);
        for k in 0..spec.length {
            if k % 10 == 0 {
                u = rng.gen_range(-1.0..1.0);
            }
            rows.push(vec![u, y]);
            y = spec.a * y + (1.0 - spec.a) * u;
            let t = y + spec.noise * rng.gen_range(-1.0..1.0);
            next_y.push(t);
            t_lo = t_lo.min(t);
            t_hi = t_hi.max(t);
        }
        units.push((unit as u64, rows));
        raw_targets.push(next_y);
    }
    scale_features(units, raw_targets, spec.window_len, t_lo, t_hi)
}
