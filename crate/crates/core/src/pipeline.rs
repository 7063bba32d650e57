// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end orchestration: discovery, final linear fit, corrector
//! training, and gated application, with every artifact kept for
//! serialization.

use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyMatrix, DataMatrix, Mask};
use crate::discovery::{self, DiscoveryConfig, DiscoveryDiagnostics};
use crate::error::Result;
use crate::operators::Hypergraph;
use crate::refinement::{self, CorrectorConfig, CorrectorModel, TrainingReport};
use crate::solver::{estimate_propensity, PropensityModel, TikhonovConfig};

/// Hyperparameters for a full run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tikhonov: TikhonovConfig,
    pub discovery: DiscoveryConfig,
    pub corrector: CorrectorConfig,
}

/// Everything a full run produces.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub linear: DataMatrix,
    pub full: DataMatrix,
    pub hypergraph: Hypergraph,
    pub model: CorrectorModel,
    pub discovery: DiscoveryDiagnostics,
    pub training: TrainingReport,
    pub final_fit_iterations: usize,
    pub final_fit_rel_residual: f64,
}

/// Run both stages. `y_obs` must already be zero-filled at masked cells.
/// With `linear_only` the corrector is skipped and `full` equals `linear`.
pub fn run_pipeline(
    y_obs: &DataMatrix,
    mask: &Mask,
    adjacency: &AdjacencyMatrix,
    cfg: &PipelineConfig,
    linear_only: bool,
) -> Result<PipelineOutput> {
    let propensity = estimate_propensity(mask, cfg.tikhonov.propensity_floor)?;
    run_pipeline_with_propensity(y_obs, mask, &propensity, adjacency, cfg, linear_only)
}

/// Same as [`run_pipeline`] with a caller-supplied propensity model (used by
/// simulations where the true rate is known).
pub fn run_pipeline_with_propensity(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    adjacency: &AdjacencyMatrix,
    cfg: &PipelineConfig,
    linear_only: bool,
) -> Result<PipelineOutput> {
    let discovery_out = discovery::discover(
        y_obs,
        mask,
        propensity,
        adjacency,
        &cfg.tikhonov,
        &cfg.discovery,
    )?;
    let fit = discovery::fit_linear(
        y_obs,
        mask,
        propensity,
        adjacency,
        &discovery_out.hypergraph,
        &cfg.tikhonov,
    )?;
    let residual = discovery::masked_residual(y_obs, &fit.estimate, mask);

    let (model, training, full) = if linear_only {
        let model = CorrectorModel::zero(&cfg.corrector, true);
        let report = TrainingReport {
            n_train: 0,
            n_val: 0,
            train_risk: 0.0,
            val_risk: 0.0,
            zero_train_risk: 0.0,
            zero_val_risk: 0.0,
            deferred: true,
        };
        (model, report, fit.estimate.clone())
    } else {
        let (model, report) =
            refinement::train_corrector(&residual, mask, &discovery_out.hypergraph, &cfg.corrector)?;
        let full = refinement::apply_corrector(
            &fit.estimate,
            &residual,
            mask,
            &discovery_out.hypergraph,
            &model,
            &cfg.corrector,
        );
        (model, report, full)
    };

    Ok(PipelineOutput {
        linear: fit.estimate,
        full,
        hypergraph: discovery_out.hypergraph,
        model,
        discovery: discovery_out.diagnostics,
        training,
        final_fit_iterations: fit.iterations,
        final_fit_rel_residual: fit.rel_residual,
    })
}
