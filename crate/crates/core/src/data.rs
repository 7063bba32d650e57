// SPDX-License-Identifier: MIT OR Apache-2.0

//! Core matrix and mask types, the three missingness regimes, adjacency
//! construction, windowing, and CSV ingestion.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Sensor-by-time grid, row-major: `values[sensor * n_steps + step]`.
///
/// Immutable after construction in normal use; all pipeline stages share
/// read-only references.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n_sensors: usize,
    n_steps: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n_sensors: usize, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        if n_sensors == 0 || n_steps == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if values.len() != n_sensors * n_steps {
            return Err(Error::invalid(format!(
                "expected {} values for a {}x{} matrix, got {}",
                n_sensors * n_steps,
                n_sensors,
                n_steps,
                values.len()
            )));
        }
        Ok(Self {
            n_sensors,
            n_steps,
            values,
        })
    }

    pub fn zeros(n_sensors: usize, n_steps: usize) -> Self {
        Self {
            n_sensors,
            n_steps,
            values: vec![0.0; n_sensors * n_steps],
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn get(&self, sensor: usize, step: usize) -> f64 {
        self.values[sensor * self.n_steps + step]
    }

    #[inline]
    pub fn set(&mut self, sensor: usize, step: usize, value: f64) {
        self.values[sensor * self.n_steps + step] = value;
    }

    pub fn row(&self, sensor: usize) -> &[f64] {
        &self.values[sensor * self.n_steps..(sensor + 1) * self.n_steps]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn transposed(&self) -> DataMatrix {
        let mut out = vec![0.0; self.values.len()];
        for i in 0..self.n_sensors {
            for t in 0..self.n_steps {
                out[t * self.n_sensors + i] = self.get(i, t);
            }
        }
        DataMatrix {
            n_sensors: self.n_steps,
            n_steps: self.n_sensors,
            values: out,
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Columns `[start, start + len)` as a new matrix.
    pub fn slice_steps(&self, start: usize, len: usize) -> Result<DataMatrix> {
        if start + len > self.n_steps {
            return Err(Error::invalid(format!(
                "window [{start}, {}) exceeds {} steps",
                start + len,
                self.n_steps
            )));
        }
        let mut values = Vec::with_capacity(self.n_sensors * len);
        for i in 0..self.n_sensors {
            values.extend_from_slice(&self.values[i * self.n_steps + start..i * self.n_steps + start + len]);
        }
        DataMatrix::new(self.n_sensors, len, values)
    }

    /// Observation mask of the finite cells; NaN/Inf cells are marked missing.
    pub fn finite_mask(&self) -> Mask {
        let bits = self.values.iter().map(|v| u8::from(v.is_finite())).collect();
        Mask {
            n_sensors: self.n_sensors,
            n_steps: self.n_steps,
            bits,
            spec: None,
        }
    }

    /// Zero out every cell the mask marks missing. Non-finite values must not
    /// survive ingestion: the solver reads masked cells only through a zero
    /// weight, but 0 * NaN would still poison it.
    pub fn zero_fill_missing(&mut self, mask: &Mask) {
        assert_eq!(self.n_sensors, mask.n_sensors);
        assert_eq!(self.n_steps, mask.n_steps);
        for (v, &b) in self.values.iter_mut().zip(mask.bits.iter()) {
            if b == 0 {
                *v = 0.0;
            }
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.n_sensors {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Which axis of the CSV file carries sensors. No auto-detection: a silent
/// transpose is a data bug, so the caller states the orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsvLayout {
    SensorsAsRows,
    SensorsAsColumns,
}

/// Load a rectangular numeric CSV. A single leading header row is detected
/// (any unparsable cell in the first row) and skipped. Empty cells and
/// "nan" parse to NaN so that pre-existing gaps can be folded into a mask.
pub fn load_matrix_csv(path: &Path, layout: CsvLayout) -> Result<DataMatrix> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    if let Some((row_idx, first)) = lines.next() {
        match parse_csv_row(first) {
            Ok(cells) => {
                width = Some(cells.len());
                rows.push(cells);
            }
            // header row: skip it, the next row fixes the width
            Err(_) => {
                let _ = row_idx;
            }
        }
    }

    for (row_idx, line) in lines {
        let cells = parse_csv_row(line).map_err(|col| Error::CsvParse {
            path: name.clone(),
            row: row_idx,
            col: Some(col),
            message: "non-numeric cell".into(),
        })?;
        if let Some(w) = width {
            if cells.len() != w {
                return Err(Error::CsvParse {
                    path: name,
                    row: row_idx,
                    col: None,
                    message: format!("ragged row: expected {w} cells, found {}", cells.len()),
                });
            }
        } else {
            width = Some(cells.len());
        }
        rows.push(cells);
    }

    if rows.is_empty() {
        return Err(Error::CsvParse {
            path: name,
            row: 0,
            col: None,
            message: "no data rows".into(),
        });
    }

    let n_rows = rows.len();
    let n_cols = width.unwrap_or(0);
    if n_cols == 0 {
        return Err(Error::CsvParse {
            path: name,
            row: 0,
            col: None,
            message: "empty rows".into(),
        });
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = DataMatrix::new(n_rows, n_cols, values)?;
    Ok(match layout {
        CsvLayout::SensorsAsRows => matrix,
        CsvLayout::SensorsAsColumns => matrix.transposed(),
    })
}

fn parse_csv_row(line: &str) -> std::result::Result<Vec<f64>, usize> {
    let mut cells = Vec::new();
    for (col, raw) in line.split(',').enumerate() {
        let cell = raw.trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
            cells.push(f64::NAN);
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => cells.push(v),
            Err(_) => return Err(col),
        }
    }
    Ok(cells)
}

/// Missingness regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "cell")]
    CellMar,
    #[serde(rename = "block")]
    BlockMar,
    #[serde(rename = "kriging")]
    SensorKriging,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Regime::CellMar => "cell",
            Regime::BlockMar => "block",
            Regime::SensorKriging => "kriging",
        };
        f.write_str(tag)
    }
}

fn default_block_len() -> usize {
    6
}

/// Mask-generation parameters: regime, missing rate, block length, seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSpec {
    pub regime: Regime,
    pub p: f64,
    #[serde(default = "default_block_len")]
    pub block_len: usize,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn new(regime: Regime, p: f64, seed: u64) -> Self {
        Self {
            regime,
            p,
            block_len: default_block_len(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!("missing rate p={} outside [0, 1]", self.p)));
        }
        if self.block_len == 0 {
            return Err(Error::invalid("block_len must be >= 1"));
        }
        Ok(())
    }
}

/// Binary observation indicator: 1 = observed, 0 = missing. Carries the spec
/// that generated it when it came from [`generate_mask`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    n_sensors: usize,
    n_steps: usize,
    bits: Vec<u8>,
    spec: Option<MissingnessSpec>,
}

impl Mask {
    pub fn all_observed(n_sensors: usize, n_steps: usize) -> Self {
        Self {
            n_sensors,
            n_steps,
            bits: vec![1; n_sensors * n_steps],
            spec: None,
        }
    }

    pub fn from_bits(n_sensors: usize, n_steps: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n_sensors * n_steps {
            return Err(Error::invalid("mask bit count does not match dimensions"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(Self {
            n_sensors,
            n_steps,
            bits,
            spec: None,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn is_observed(&self, sensor: usize, step: usize) -> bool {
        self.bits[sensor * self.n_steps + step] == 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn spec(&self) -> Option<&MissingnessSpec> {
        self.spec.as_ref()
    }

    pub fn observed_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed_count() as f64 / self.bits.len() as f64
    }

    pub fn row_observed_count(&self, sensor: usize) -> usize {
        self.bits[sensor * self.n_steps..(sensor + 1) * self.n_steps]
            .iter()
            .filter(|&&b| b == 1)
            .count()
    }

    /// Intersect with another mask (e.g. fold pre-existing data gaps into a
    /// generated regime mask). Keeps this mask's spec.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        if self.n_sensors != other.n_sensors || self.n_steps != other.n_steps {
            return Err(Error::invalid("mask dimension mismatch in intersect"));
        }
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a & b)
            .collect();
        Ok(Mask {
            n_sensors: self.n_sensors,
            n_steps: self.n_steps,
            bits,
            spec: self.spec,
        })
    }

    /// Union of observed cells.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.n_sensors != other.n_sensors || self.n_steps != other.n_steps {
            return Err(Error::invalid("mask dimension mismatch in union"));
        }
        let bits = self
            .bits
            .iter()
            .zip(other.bits.iter())
            .map(|(&a, &b)| a | b)
            .collect();
        Ok(Mask {
            n_sensors: self.n_sensors,
            n_steps: self.n_steps,
            bits,
            spec: self.spec,
        })
    }

    /// FNV-1a content hash over dimensions and bits; reports use it to prove
    /// the same mask was shared across methods.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for b in self.n_sensors.to_le_bytes() {
            eat(b);
        }
        for b in self.n_steps.to_le_bytes() {
            eat(b);
        }
        for &b in &self.bits {
            eat(b);
        }
        h
    }
}

/// Draw a mask for the given dimensions and spec. Pure: identical arguments
/// produce bit-identical masks.
pub fn generate_mask(n_sensors: usize, n_steps: usize, spec: &MissingnessSpec) -> Result<Mask> {
    spec.validate()?;
    if n_sensors == 0 || n_steps == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut rng = rng::substream(spec.seed, "mask", 0);
    let mut bits = vec![1u8; n_sensors * n_steps];
    match spec.regime {
        Regime::CellMar => {
            for bit in bits.iter_mut() {
                if rng.bernoulli(spec.p) {
                    *bit = 0;
                }
            }
        }
        Regime::BlockMar => {
            // Each step is a block origin with probability q chosen so that
            // an interior cell is missing with probability 1-(1-q)^B = p.
            // Blocks are clipped at the window end.
            let b = spec.block_len.min(n_steps);
            let q = 1.0 - (1.0 - spec.p).powf(1.0 / b as f64);
            for sensor in 0..n_sensors {
                for origin in 0..n_steps {
                    if rng.bernoulli(q) {
                        let end = (origin + b).min(n_steps);
                        bits[sensor * n_steps + origin..sensor * n_steps + end].fill(0);
                    }
                }
            }
        }
        Regime::SensorKriging => {
            for sensor in 0..n_sensors {
                if rng.bernoulli(spec.p) {
                    bits[sensor * n_steps..(sensor + 1) * n_steps].fill(0);
                }
            }
        }
    }
    Ok(Mask {
        n_sensors,
        n_steps,
        bits,
        spec: Some(*spec),
    })
}

/// Symmetric nonnegative sensor adjacency with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    n_sensors: usize,
    weights: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn new(n_sensors: usize, weights: Vec<f64>) -> Result<Self> {
        if n_sensors == 0 {
            return Err(Error::invalid("adjacency must have at least one sensor"));
        }
        if weights.len() != n_sensors * n_sensors {
            return Err(Error::invalid("adjacency weight count does not match dimensions"));
        }
        for i in 0..n_sensors {
            if weights[i * n_sensors + i] != 0.0 {
                return Err(Error::invalid(format!("adjacency diagonal must be zero at {i}")));
            }
            for j in 0..n_sensors {
                let w = weights[i * n_sensors + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::invalid(format!(
                        "adjacency weight at ({i}, {j}) must be finite and nonnegative"
                    )));
                }
                if (w - weights[j * n_sensors + i]).abs() > 1e-12 * (1.0 + w.abs()) {
                    return Err(Error::invalid(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n_sensors, weights })
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_sensors + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_sensors..(i + 1) * self.n_sensors]
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_sensors).map(|i| self.row(i).iter().sum()).collect()
    }
}

/// Gaussian kernel adjacency from a distance matrix, bandwidth = median
/// off-diagonal distance: `A_ij = exp(-d_ij^2 / (2 h^2))`, zero diagonal.
pub fn build_adjacency(distances: &DataMatrix) -> Result<AdjacencyMatrix> {
    let n = distances.n_sensors();
    if distances.n_steps() != n {
        return Err(Error::invalid(format!(
            "distance matrix must be square, got {}x{}",
            n,
            distances.n_steps()
        )));
    }
    let mut off_diag = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = distances.get(i, j);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::invalid(format!(
                    "distance at ({i}, {j}) must be finite and nonnegative"
                )));
            }
            let sym = distances.get(j, i);
            if (d - sym).abs() > 1e-9 * (1.0 + d.abs()) {
                return Err(Error::invalid(format!("distance matrix not symmetric at ({i}, {j})")));
            }
            off_diag.push(d);
        }
    }
    let bandwidth = median(&mut off_diag);
    if bandwidth <= 0.0 {
        return Err(Error::degenerate(
            "all off-diagonal distances are zero; kernel bandwidth undefined",
        ));
    }
    let denom = 2.0 * bandwidth * bandwidth;
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = distances.get(i, j);
                weights[i * n + j] = (-d * d / denom).exp();
            }
        }
    }
    AdjacencyMatrix::new(n, weights)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Non-overlapping evaluation windows with one derived seed per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPlan {
    pub window_len: usize,
    pub starts: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl WindowPlan {
    pub fn n_windows(&self) -> usize {
        self.starts.len()
    }
}

/// Partition `n_steps_total` into consecutive non-overlapping windows of
/// `window_len`, dropping the remainder. Window seeds derive from the base
/// seed and the window index.
pub fn plan_windows(n_steps_total: usize, window_len: usize, base_seed: u64) -> Result<WindowPlan> {
    if window_len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if window_len > n_steps_total {
        return Err(Error::invalid(format!(
            "window length {window_len} exceeds series length {n_steps_total}"
        )));
    }
    let count = n_steps_total / window_len;
    let starts: Vec<usize> = (0..count).map(|w| w * window_len).collect();
    let seeds: Vec<u64> = (0..count).map(|w| rng::derive_seed(base_seed, "window", w as u64)).collect();
    Ok(WindowPlan {
        window_len,
        starts,
        seeds,
    })
}
