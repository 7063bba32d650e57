// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation protocol: regimes x rates x windows x methods on a shared
//! mask per cell, with held-out MAE records and a verification harness for
//! the framework's numerical claims.

pub mod checks;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::data::{
    build_adjacency, DataMatrix, Mask, MissingnessSpec, Regime, WindowPlan,
};
use crate::error::{Error, Result};
use crate::discovery::DiscoveryDiagnostics;
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::rng;
use crate::solver::estimate_propensity;

/// Imputation method under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SensorMean,
    KnnSpatial,
    TikhGraph,
    MshlLinear,
    Mshl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Method::SensorMean => "sensor_mean",
            Method::KnnSpatial => "knn_spatial",
            Method::TikhGraph => "tikh_graph",
            Method::MshlLinear => "mshl_linear",
            Method::Mshl => "mshl",
        };
        f.write_str(tag)
    }
}

fn default_rates() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}
fn default_regimes() -> Vec<Regime> {
    vec![Regime::CellMar, Regime::BlockMar, Regime::SensorKriging]
}
fn default_methods() -> Vec<Method> {
    vec![
        Method::SensorMean,
        Method::KnnSpatial,
        Method::TikhGraph,
        Method::Mshl,
    ]
}
fn default_window_len() -> usize {
    2016
}
fn default_knn_k() -> usize {
    5
}
fn default_block_len() -> usize {
    6
}
fn default_jobs() -> usize {
    1
}

/// What to sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub regimes: Vec<Regime>,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub window_len: usize,
    pub knn_k: usize,
    pub block_len: usize,
    pub jobs: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            regimes: default_regimes(),
            rates: default_rates(),
            methods: default_methods(),
            window_len: default_window_len(),
            knn_k: default_knn_k(),
            block_len: default_block_len(),
            jobs: default_jobs(),
        }
    }
}

/// One (regime, rate, window, method) measurement. Runtime is wall-clock
/// and informational only; it is zeroed in the canonical serialization so
/// reruns compare byte-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub dataset: String,
    pub regime: Regime,
    pub rate: f64,
    pub window: usize,
    pub method: Method,
    pub mae: Option<f64>,
    pub runtime_ms: f64,
    pub mask_hash: String,
    pub error: Option<String>,
    pub discovery: Option<DiscoveryDiagnostics>,
}

/// Mean over windows for one (regime, rate, method).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub regime: Regime,
    pub rate: f64,
    pub method: Method,
    pub mean_mae: Option<f64>,
    /// Spread across windows (population standard deviation). The per-window
    /// seed spread is structurally zero — one mask per window — so window
    /// variation is the reported dispersion.
    pub windows_spread: Option<f64>,
    pub n_windows: usize,
}

/// Full grid output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub base_seed: u64,
    pub window_len: usize,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Serialization with runtimes zeroed: byte-identical across reruns with
    /// the same seed.
    pub fn canonical_json(&self) -> Result<String> {
        let mut clone = self.clone();
        for r in &mut clone.records {
            r.runtime_ms = 0.0;
        }
        Ok(serde_json::to_string_pretty(&clone)?)
    }

    /// Flat CSV, one row per record.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,regime,rate,window,method,mae,runtime_ms,mask_hash,accepted_edges,error\n");
        for r in &self.records {
            let mae = r.mae.map(|v| v.to_string()).unwrap_or_default();
            let edges = r
                .discovery
                .as_ref()
                .map(|d| d.per_scale.iter().map(|s| s.accepted).sum::<usize>().to_string())
                .unwrap_or_default();
            let error = r.error.clone().unwrap_or_default().replace(',', ";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset, r.regime, r.rate, r.window, r.method, mae, r.runtime_ms, r.mask_hash, edges, error
            ));
        }
        out
    }
}

/// Mean absolute deviation over the held-out cells (mask = 0).
pub fn mae_heldout(estimate: &DataMatrix, truth: &DataMatrix, mask: &Mask) -> Result<f64> {
    let n = estimate.n_sensors();
    let t = estimate.n_steps();
    if truth.n_sensors() != n || truth.n_steps() != t || mask.n_sensors() != n || mask.n_steps() != t {
        return Err(Error::invalid("shape mismatch in held-out MAE"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for step in 0..t {
            if !mask.is_observed(i, step) {
                total += (estimate.get(i, step) - truth.get(i, step)).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::degenerate("no held-out cells to evaluate"));
    }
    Ok(total / count as f64)
}

struct CellOutput {
    records: Vec<Record>,
}

/// Run the full grid. Every method within a (regime, rate, window) cell
/// sees the same mask; pre-existing gaps in the data are folded into the
/// observation mask and excluded from evaluation. Cells are independent and
/// run on `grid.jobs` threads; output order does not depend on scheduling.
pub fn run_grid(
    data: &DataMatrix,
    distances: &DataMatrix,
    plan: &WindowPlan,
    grid: &GridSpec,
    pipeline_cfg: &PipelineConfig,
    dataset: &str,
    base_seed: u64,
) -> Result<EvalReport> {
    if grid.rates.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::invalid("rates must lie in [0, 1]"));
    }
    if grid.methods.is_empty() || grid.regimes.is_empty() || grid.rates.is_empty() {
        return Err(Error::invalid("grid needs at least one regime, rate, and method"));
    }
    let adjacency = build_adjacency(distances)?;

    let mut cells: Vec<(Regime, f64, usize)> = Vec::new();
    for &regime in &grid.regimes {
        for &rate in &grid.rates {
            for window in 0..plan.n_windows() {
                cells.push((regime, rate, window));
            }
        }
    }

    let run_cell = |&(regime, rate, window): &(Regime, f64, usize)| -> CellOutput {
        let start = plan.starts[window];
        let truth = match data.slice_steps(start, plan.window_len) {
            Ok(m) => m,
            Err(e) => {
                return CellOutput {
                    records: failure_records(grid, dataset, regime, rate, window, &e.to_string()),
                }
            }
        };
        let data_mask = truth.finite_mask();
        let seed = rng::derive_seed(plan.seeds[window], &format!("mask:{regime}:{rate:.6}"), 0);
        let mut spec = MissingnessSpec::new(regime, rate, seed);
        spec.block_len = grid.block_len;
        let regime_mask = match crate::data::generate_mask(truth.n_sensors(), truth.n_steps(), &spec) {
            Ok(m) => m,
            Err(e) => {
                return CellOutput {
                    records: failure_records(grid, dataset, regime, rate, window, &e.to_string()),
                }
            }
        };
        let observed = regime_mask
            .intersect(&data_mask)
            .expect("window shapes agree");
        // evaluation targets: artificially masked cells that had real values
        let eval_bits: Vec<u8> = regime_mask
            .bits()
            .iter()
            .zip(data_mask.bits())
            .map(|(&r, &d)| r | (1 - d))
            .collect();
        let eval_mask = Mask::from_bits(truth.n_sensors(), truth.n_steps(), eval_bits).expect("bits valid");
        let mask_hash = format!("{:016x}", observed.content_hash());
        let mut y_obs = truth.clone();
        y_obs.zero_fill_missing(&observed);

        let mut records = Vec::with_capacity(grid.methods.len());
        for &method in &grid.methods {
            let clock = Instant::now();
            let outcome: Result<(DataMatrix, Option<DiscoveryDiagnostics>)> = (|| match method {
                Method::SensorMean => Ok((baselines::sensor_mean(&y_obs, &observed)?, None)),
                Method::KnnSpatial => Ok((
                    baselines::knn_spatial(&y_obs, &observed, distances, grid.knn_k)?,
                    None,
                )),
                Method::TikhGraph => {
                    let propensity = estimate_propensity(&observed, pipeline_cfg.tikhonov.propensity_floor)?;
                    let sol = baselines::tikh_graph(&y_obs, &observed, &propensity, &adjacency, &pipeline_cfg.tikhonov)?;
                    Ok((sol.estimate, None))
                }
                Method::MshlLinear => {
                    let out = run_pipeline(&y_obs, &observed, &adjacency, pipeline_cfg, true)?;
                    Ok((out.full, Some(out.discovery)))
                }
                Method::Mshl => {
                    let out = run_pipeline(&y_obs, &observed, &adjacency, pipeline_cfg, false)?;
                    Ok((out.full, Some(out.discovery)))
                }
            })();
            let runtime_ms = clock.elapsed().as_secs_f64() * 1e3;
            let record = match outcome {
                Ok((estimate, discovery)) => match mae_heldout(&estimate, &truth, &eval_mask) {
                    Ok(mae) => Record {
                        dataset: dataset.into(),
                        regime,
                        rate,
                        window,
                        method,
                        mae: Some(mae),
                        runtime_ms,
                        mask_hash: mask_hash.clone(),
                        error: None,
                        discovery,
                    },
                    Err(e) => failed_record(dataset, regime, rate, window, method, runtime_ms, &mask_hash, &e),
                },
                Err(e) => failed_record(dataset, regime, rate, window, method, runtime_ms, &mask_hash, &e),
            };
            records.push(record);
        }
        CellOutput { records }
    };

    let outputs: Vec<CellOutput> = if grid.jobs <= 1 || cells.len() <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let mut slots: Vec<Option<CellOutput>> = Vec::new();
        slots.resize_with(cells.len(), || None);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_mutex = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..grid.jobs.min(cells.len()) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if k >= cells.len() {
                        break;
                    }
                    let out = run_cell(&cells[k]);
                    slots_mutex.lock().unwrap()[k] = Some(out);
                });
            }
        });
        slots.into_iter().map(|s| s.expect("all cells ran")).collect()
    };

    let records: Vec<Record> = outputs.into_iter().flat_map(|c| c.records).collect();

    let mut aggregates = Vec::new();
    for &regime in &grid.regimes {
        for &rate in &grid.rates {
            for &method in &grid.methods {
                let maes: Vec<f64> = records
                    .iter()
                    .filter(|r| r.regime == regime && r.rate == rate && r.method == method)
                    .filter_map(|r| r.mae)
                    .collect();
                let n_windows = maes.len();
                let (mean_mae, windows_spread) = if n_windows == 0 {
                    (None, None)
                } else {
                    let mean = maes.iter().sum::<f64>() / n_windows as f64;
                    let var = maes.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n_windows as f64;
                    (Some(mean), Some(var.sqrt()))
                };
                aggregates.push(Aggregate {
                    regime,
                    rate,
                    method,
                    mean_mae,
                    windows_spread,
                    n_windows,
                });
            }
        }
    }

    Ok(EvalReport {
        dataset: dataset.into(),
        base_seed,
        window_len: plan.window_len,
        records,
        aggregates,
    })
}

#[allow(clippy::too_many_arguments)]
fn failed_record(
    dataset: &str,
    regime: Regime,
    rate: f64,
    window: usize,
    method: Method,
    runtime_ms: f64,
    mask_hash: &str,
    error: &Error,
) -> Record {
    Record {
        dataset: dataset.into(),
        regime,
        rate,
        window,
        method,
        mae: None,
        runtime_ms,
        mask_hash: mask_hash.into(),
        error: Some(error.to_string()),
        discovery: None,
    }
}

fn failure_records(
    grid: &GridSpec,
    dataset: &str,
    regime: Regime,
    rate: f64,
    window: usize,
    message: &str,
) -> Vec<Record> {
    grid.methods
        .iter()
        .map(|&method| Record {
            dataset: dataset.into(),
            regime,
            rate,
            window,
            method,
            mae: None,
            runtime_ms: 0.0,
            mask_hash: String::new(),
            error: Some(message.into()),
            discovery: None,
        })
        .collect()
}
