// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage one: learn a multi-scale hypergraph from incomplete observations.
//!
//! A pairwise-only pre-fit absorbs what the graph and temporal penalties can
//! explain; the structure signal lives in the residual. Candidates come from
//! two sources — prior topology and residual correlations — and are accepted
//! when either of two observation-only scores clears a calibrated threshold
//! with a per-scale complexity penalty. Everything here reads observed cells
//! only: masked values never influence the result.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::data::{AdjacencyMatrix, DataMatrix, Mask};
use crate::error::{Error, Result};
use crate::operators::{pair_count, GraphLaplacian, Hyperedge, Hypergraph, SpatialOperator, TemporalOperator};
use crate::solver::{solve_tikhonov, PropensityModel, TikhonovConfig, TikhonovSolution};

/// Guard for zero-variance denominators.
const VAR_EPSILON: f64 = 1e-12;

fn default_max_scale() -> usize {
    5
}
fn default_scales() -> Vec<usize> {
    vec![2, 3, 4, 5]
}
fn default_corr_floor() -> f64 {
    0.30
}
fn default_quantile() -> f64 {
    0.95
}
fn default_max_edges_per_scale() -> usize {
    20
}
fn default_penalty_coeff() -> f64 {
    1.0
}
fn default_gain_coeff() -> f64 {
    1.0
}

/// Candidate generation and selection parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub max_scale: usize,
    pub scales: Vec<usize>,
    pub corr_floor: f64,
    pub quantile: f64,
    pub max_edges_per_scale: usize,
    pub penalty_coeff: f64,
    pub gain_coeff: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            max_scale: default_max_scale(),
            scales: default_scales(),
            corr_floor: default_corr_floor(),
            quantile: default_quantile(),
            max_edges_per_scale: default_max_edges_per_scale(),
            penalty_coeff: default_penalty_coeff(),
            gain_coeff: default_gain_coeff(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::invalid("scale set must be nonempty"));
        }
        if self.scales.iter().any(|&s| s < 2 || s > self.max_scale) {
            return Err(Error::invalid(format!(
                "scales must lie in [2, {}]",
                self.max_scale
            )));
        }
        if !(0.0..1.0).contains(&self.corr_floor) {
            return Err(Error::invalid("corr_floor must lie in [0, 1)"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::invalid("quantile must lie in (0, 1)"));
        }
        if self.max_edges_per_scale == 0 {
            return Err(Error::invalid("max_edges_per_scale must be >= 1"));
        }
        Ok(())
    }

    fn sorted_scales(&self) -> Vec<usize> {
        let mut s = self.scales.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Single-scale variant used by fixed-scale comparisons.
    pub fn with_scales(&self, scales: Vec<usize>) -> Self {
        Self {
            scales,
            ..self.clone()
        }
    }
}

/// Residual correlation matrix with undefined entries flagged (NaN), plus
/// joint-observation counts. Numerators run over jointly observed steps,
/// denominators over each sensor's own observed steps.
#[derive(Clone, Debug)]
pub struct ResidualCorrelation {
    n_sensors: usize,
    values: Vec<f64>,
    joint_counts: Vec<u32>,
}

impl ResidualCorrelation {
    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    /// Defined correlation at (i, j), if any. The diagonal is 1 by
    /// convention but excluded from calibration quantiles.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(1.0);
        }
        let v = self.values[i * self.n_sensors + j];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn joint_count(&self, i: usize, j: usize) -> u32 {
        self.joint_counts[i * self.n_sensors + j]
    }

    /// Absolute values of the defined off-diagonal entries, each unordered
    /// pair counted once.
    pub fn defined_offdiag_abs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.n_sensors {
            for j in (i + 1)..self.n_sensors {
                if let Some(v) = self.get(i, j) {
                    out.push(v.abs());
                }
            }
        }
        out
    }

    pub fn undefined_pair_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n_sensors {
            for j in (i + 1)..self.n_sensors {
                if self.get(i, j).is_none() {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Pairwise-only pre-fit: the Tikhonov estimate on the graph + temporal
/// operators alone, and its residual on observed cells (zero elsewhere).
pub fn prefit(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    adjacency: &AdjacencyMatrix,
    cfg: &TikhonovConfig,
) -> Result<(TikhonovSolution, DataMatrix)> {
    let spatial = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(adjacency));
    let temporal = TemporalOperator::first_difference(y_obs.n_steps());
    let solution = solve_tikhonov(y_obs, mask, propensity, &spatial, &temporal, cfg)?;
    let residual = masked_residual(y_obs, &solution.estimate, mask);
    Ok((solution, residual))
}

/// `M (*) (Y - Xhat)`: residual on observed cells, zero on missing cells.
pub fn masked_residual(y_obs: &DataMatrix, estimate: &DataMatrix, mask: &Mask) -> DataMatrix {
    let n = y_obs.n_sensors();
    let t = y_obs.n_steps();
    let mut out = DataMatrix::zeros(n, t);
    for i in 0..n {
        for step in 0..t {
            if mask.is_observed(i, step) {
                out.set(i, step, y_obs.get(i, step) - estimate.get(i, step));
            }
        }
    }
    out
}

/// Empirical residual correlation for every sensor pair sharing at least two
/// observation steps; pairs with fewer joint observations or zero residual
/// energy are flagged undefined.
pub fn residual_correlation(residual: &DataMatrix, mask: &Mask) -> ResidualCorrelation {
    let n = residual.n_sensors();
    let t = residual.n_steps();
    let mut energies = vec![0.0; n];
    for i in 0..n {
        let mut e = 0.0;
        for step in 0..t {
            if mask.is_observed(i, step) {
                let r = residual.get(i, step);
                e += r * r;
            }
        }
        energies[i] = e;
    }
    let mut values = vec![f64::NAN; n * n];
    let mut joint_counts = vec![0u32; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut inner = 0.0;
            let mut joint = 0u32;
            for step in 0..t {
                if mask.is_observed(i, step) && mask.is_observed(j, step) {
                    inner += residual.get(i, step) * residual.get(j, step);
                    joint += 1;
                }
            }
            joint_counts[i * n + j] = joint;
            joint_counts[j * n + i] = joint;
            if joint >= 2 && energies[i] > VAR_EPSILON && energies[j] > VAR_EPSILON {
                let c = (inner / (energies[i] * energies[j]).sqrt()).clamp(-1.0, 1.0);
                values[i * n + j] = c;
                values[j * n + i] = c;
            }
        }
    }
    ResidualCorrelation {
        n_sensors: n,
        values,
        joint_counts,
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile_linear(sample: &[f64], q: f64) -> f64 {
    debug_assert!(!sample.is_empty());
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Data-adaptive correlation threshold: the floor or the q-quantile of the
/// defined off-diagonal absolute correlations, whichever is larger.
pub fn calibrate_corr_threshold(corr: &ResidualCorrelation, floor: f64, q: f64) -> Result<f64> {
    let sample = corr.defined_offdiag_abs();
    if sample.is_empty() {
        return Err(Error::degenerate(
            "no defined off-diagonal residual correlations; threshold calibration impossible",
        ));
    }
    Ok(floor.max(quantile_linear(&sample, q)))
}

/// Candidate member-set with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub scale: usize,
    pub members: Vec<usize>,
    pub from_topology: bool,
    pub from_residual: bool,
}

/// Where an accepted candidate came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    Topology,
    Residual,
    Both,
}

/// For each anchor sensor and each scale s, the anchor plus its top s-1
/// neighbours by adjacency weight, ties broken toward lower index. Anchors
/// whose row has fewer than s-1 positive weights emit nothing.
pub fn candidates_topology(adjacency: &AdjacencyMatrix, scales: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let n = adjacency.n_sensors();
    let mut out = Vec::new();
    for &scale in scales {
        for anchor in 0..n {
            let mut neighbours: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != anchor)
                .map(|j| (j, adjacency.weight(anchor, j)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            if neighbours.len() < scale - 1 {
                continue;
            }
            neighbours.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut members: Vec<usize> = neighbours[..scale - 1].iter().map(|&(j, _)| j).collect();
            members.push(anchor);
            members.sort_unstable();
            out.push((scale, members));
        }
    }
    out
}

/// For each anchor with at least s-1 defined correlations above the
/// threshold, the anchor plus its top s-1 neighbours by absolute residual
/// correlation.
pub fn candidates_residual(
    corr: &ResidualCorrelation,
    threshold: f64,
    scales: &[usize],
) -> Vec<(usize, Vec<usize>)> {
    let n = corr.n_sensors();
    let mut out = Vec::new();
    for &scale in scales {
        for anchor in 0..n {
            let mut neighbours: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != anchor)
                .filter_map(|j| corr.get(anchor, j).map(|c| (j, c.abs())))
                .filter(|&(_, c)| c > threshold)
                .collect();
            if neighbours.len() < scale - 1 {
                continue;
            }
            neighbours.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut members: Vec<usize> = neighbours[..scale - 1].iter().map(|&(j, _)| j).collect();
            members.push(anchor);
            members.sort_unstable();
            out.push((scale, members));
        }
    }
    out
}

/// Merge both candidate sources per scale, deduplicating member-sets while
/// keeping provenance. Final order is canonical: scale ascending, members
/// lexicographic.
pub fn merge_candidates(
    topology: Vec<(usize, Vec<usize>)>,
    residual: Vec<(usize, Vec<usize>)>,
) -> Vec<CandidateSet> {
    let mut out: Vec<CandidateSet> = Vec::new();
    let mut index: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
    for (from_topology, list) in [(true, topology), (false, residual)] {
        for (scale, members) in list {
            let key = (scale, members.clone());
            match index.get(&key) {
                Some(&k) => {
                    if from_topology {
                        out[k].from_topology = true;
                    } else {
                        out[k].from_residual = true;
                    }
                }
                None => {
                    index.insert(key, out.len());
                    out.push(CandidateSet {
                        scale,
                        members,
                        from_topology,
                        from_residual: !from_topology,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| a.scale.cmp(&b.scale).then(a.members.cmp(&b.members)));
    out
}

/// Mean absolute residual correlation over the pairs inside the candidate.
/// Undefined if any constituent pair is undefined.
pub fn coherence_score(members: &[usize], corr: &ResidualCorrelation) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            total += corr.get(i, j)?.abs();
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

/// Leave-one-out gain: for each member, regress its residual on the mean of
/// its co-members' residuals over the steps where the whole candidate is
/// observed, and average the relative MSE improvement. Undefined when fewer
/// than s+2 joint observations exist or the predictor is degenerate.
pub fn loo_gain_score(members: &[usize], residual: &DataMatrix, mask: &Mask) -> Option<f64> {
    let s = members.len();
    let t_len = residual.n_steps();
    let joint: Vec<usize> = (0..t_len)
        .filter(|&t| members.iter().all(|&i| mask.is_observed(i, t)))
        .collect();
    if joint.len() < s + 2 {
        return None;
    }
    let m = joint.len() as f64;
    let mut total = 0.0;
    for &i in members {
        let target: Vec<f64> = joint.iter().map(|&t| residual.get(i, t)).collect();
        let predictor: Vec<f64> = joint
            .iter()
            .map(|&t| {
                members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| residual.get(j, t))
                    .sum::<f64>()
                    / (s - 1) as f64
            })
            .collect();
        let predictor_energy: f64 = predictor.iter().map(|v| v * v).sum();
        if predictor_energy / m < VAR_EPSILON {
            return None;
        }
        let mean = target.iter().sum::<f64>() / m;
        let base_mse = target.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let slope = target.iter().zip(&predictor).map(|(r, p)| r * p).sum::<f64>() / predictor_energy;
        let loo_mse = target
            .iter()
            .zip(&predictor)
            .map(|(r, p)| {
                let d = r - slope * p;
                d * d
            })
            .sum::<f64>()
            / m;
        total += (base_mse - loo_mse) / base_mse.max(VAR_EPSILON);
    }
    Some((total / s as f64).clamp(-1.0, 1.0))
}

/// Per-scale complexity penalty
/// `(s-2) * c * sigma2 * ln(N * S_max * T) / (rate^2 * T)`.
pub fn per_scale_penalty(
    scale: usize,
    noise_variance: f64,
    n_sensors: usize,
    n_steps: usize,
    rate: f64,
    max_scale: usize,
    coeff: f64,
) -> f64 {
    let log_term = ((n_sensors * max_scale * n_steps) as f64).ln();
    (scale as f64 - 2.0) * coeff * noise_variance * log_term / (rate * rate * n_steps as f64)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Candidate with its scores and selection outcome.
#[derive(Clone, Debug)]
pub struct ScoredCandidate {
    pub members: Vec<usize>,
    pub scale: usize,
    pub source: CandidateSource,
    pub coherence: Option<f64>,
    pub loo_gain: Option<f64>,
    pub margin: Option<f64>,
    pub accepted: bool,
    pub weight: Option<f64>,
}

/// Per-scale selection summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleDiagnostics {
    pub scale: usize,
    pub candidates: usize,
    pub accepted: usize,
    pub from_topology: usize,
    pub from_residual: usize,
    pub from_both: usize,
    pub coherence_threshold: f64,
    pub gain_threshold: f64,
    pub penalty: f64,
}

/// Everything the selection stage needs beyond the candidates themselves.
#[derive(Clone, Copy, Debug)]
pub struct SelectionContext {
    pub noise_variance: f64,
    pub global_rate: f64,
    pub n_sensors: usize,
    pub n_steps: usize,
    /// Data-adaptive part of the coherence threshold (the floor if
    /// calibration was impossible).
    pub data_adaptive: f64,
}

impl SelectionContext {
    fn gain_threshold(&self, penalty: f64, gain_coeff: f64) -> f64 {
        gain_coeff * self.noise_variance * ((self.n_sensors as f64).ln() / (self.global_rate * self.n_steps as f64)).sqrt()
            + penalty
    }
}

/// Threshold and accept candidates, apply sigmoid shrinkage weights, and cap
/// each scale at the configured budget by score margin. Acceptance is
/// strict: a score sitting exactly on its threshold is rejected.
pub fn select_hyperedges(
    candidates: &[CandidateSet],
    corr: &ResidualCorrelation,
    residual: &DataMatrix,
    mask: &Mask,
    cfg: &DiscoveryConfig,
    ctx: &SelectionContext,
) -> (Hypergraph, Vec<ScoredCandidate>, Vec<ScaleDiagnostics>) {
    let candidate_total = candidates.len().max(2);
    let rate = ctx.global_rate;
    let t = ctx.n_steps as f64;
    let mut scored: Vec<ScoredCandidate> = Vec::with_capacity(candidates.len());

    for cand in candidates {
        let s = cand.scale;
        let penalty = per_scale_penalty(
            s,
            ctx.noise_variance,
            ctx.n_sensors,
            ctx.n_steps,
            rate,
            cfg.max_scale,
            cfg.penalty_coeff,
        );
        let coherence_threshold = ctx.data_adaptive + penalty;
        let gain_threshold = ctx.gain_threshold(penalty, cfg.gain_coeff);

        let coherence = coherence_score(&cand.members, corr);
        let loo_gain = loo_gain_score(&cand.members, residual, mask);

        // shrinkage scales follow the two scores' concentration rates
        let n2c = (ctx.n_sensors * ctx.n_sensors * candidate_total) as f64;
        let coherence_spread = (pair_count(s) as f64 * n2c.ln() / (rate * rate * t)).sqrt().max(VAR_EPSILON);
        let gain_spread = (ctx.noise_variance
            * ((candidate_total as f64).ln().max(std::f64::consts::LN_2) / (rate.powi(s as i32) * t)).sqrt())
        .max(VAR_EPSILON);

        let mut margin: Option<f64> = None;
        let mut accepted = false;
        if let Some(c) = coherence {
            margin = Some((c - coherence_threshold) / coherence_spread);
            if c > coherence_threshold {
                accepted = true;
            }
        }
        if let Some(g) = loo_gain {
            let m = (g - gain_threshold) / gain_spread;
            margin = Some(margin.map_or(m, |prev| prev.max(m)));
            if g > gain_threshold {
                accepted = true;
            }
        }
        let weight = if accepted { margin.map(sigmoid) } else { None };
        scored.push(ScoredCandidate {
            members: cand.members.clone(),
            scale: s,
            source: match (cand.from_topology, cand.from_residual) {
                (true, true) => CandidateSource::Both,
                (true, false) => CandidateSource::Topology,
                _ => CandidateSource::Residual,
            },
            coherence,
            loo_gain,
            margin,
            accepted,
            weight,
        });
    }

    let mut hypergraph = Hypergraph::empty();
    let mut diagnostics = Vec::new();
    for &s in &cfg.sorted_scales() {
        let mut winners: Vec<&ScoredCandidate> =
            scored.iter().filter(|c| c.scale == s && c.accepted).collect();
        winners.sort_by(|a, b| {
            b.margin
                .partial_cmp(&a.margin)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.members.cmp(&b.members))
        });
        winners.truncate(cfg.max_edges_per_scale);
        let mut kept: Vec<(Vec<usize>, f64)> = winners
            .iter()
            .map(|c| (c.members.clone(), c.weight.unwrap()))
            .collect();
        kept.sort_by(|a, b| a.0.cmp(&b.0));
        for (members, weight) in kept {
            hypergraph
                .insert(Hyperedge { members, weight })
                .expect("capped winners are deduplicated");
        }

        let in_scale: Vec<&ScoredCandidate> = scored.iter().filter(|c| c.scale == s).collect();
        let accepted_in_scale = hypergraph
            .scales
            .iter()
            .find(|sc| sc.s == s)
            .map(|sc| sc.edges.len())
            .unwrap_or(0);
        let penalty = per_scale_penalty(
            s,
            ctx.noise_variance,
            ctx.n_sensors,
            ctx.n_steps,
            rate,
            cfg.max_scale,
            cfg.penalty_coeff,
        );
        diagnostics.push(ScaleDiagnostics {
            scale: s,
            candidates: in_scale.len(),
            accepted: accepted_in_scale,
            from_topology: in_scale.iter().filter(|c| c.source == CandidateSource::Topology).count(),
            from_residual: in_scale.iter().filter(|c| c.source == CandidateSource::Residual).count(),
            from_both: in_scale.iter().filter(|c| c.source == CandidateSource::Both).count(),
            coherence_threshold: ctx.data_adaptive + penalty,
            gain_threshold: ctx.gain_threshold(penalty, cfg.gain_coeff),
            penalty,
        });
    }
    (hypergraph, scored, diagnostics)
}

/// Summary of one discovery run, serialized alongside the hypergraph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveryDiagnostics {
    pub degraded_topology_only: bool,
    pub undefined_pairs: usize,
    pub corr_threshold: Option<f64>,
    pub noise_variance: f64,
    pub global_rate: f64,
    pub candidate_total: usize,
    pub prefit_iterations: usize,
    pub prefit_rel_residual: f64,
    pub per_scale: Vec<ScaleDiagnostics>,
}

/// Full output of stage one.
#[derive(Clone, Debug)]
pub struct DiscoveryOutput {
    pub hypergraph: Hypergraph,
    pub prefit_estimate: DataMatrix,
    pub prefit_residual: DataMatrix,
    pub scored: Vec<ScoredCandidate>,
    pub diagnostics: DiscoveryDiagnostics,
}

/// Variance of the residual over observed cells.
pub fn observed_variance(residual: &DataMatrix, mask: &Mask) -> f64 {
    let mut count = 0usize;
    let mut mean = 0.0;
    for i in 0..residual.n_sensors() {
        for t in 0..residual.n_steps() {
            if mask.is_observed(i, t) {
                count += 1;
                mean += residual.get(i, t);
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    mean /= count as f64;
    let mut var = 0.0;
    for i in 0..residual.n_sensors() {
        for t in 0..residual.n_steps() {
            if mask.is_observed(i, t) {
                let d = residual.get(i, t) - mean;
                var += d * d;
            }
        }
    }
    var / count as f64
}

/// Run the full discovery stage: pre-fit, residual correlations, threshold
/// calibration, two-source candidates, scoring, and capped selection. If no
/// correlation is defined (total blackout patterns), candidate generation
/// degrades to topology only and the diagnostics flag it.
pub fn discover(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    adjacency: &AdjacencyMatrix,
    tikhonov: &TikhonovConfig,
    cfg: &DiscoveryConfig,
) -> Result<DiscoveryOutput> {
    cfg.validate()?;
    let (solution, residual) = prefit(y_obs, mask, propensity, adjacency, tikhonov)?;
    let corr = residual_correlation(&residual, mask);
    let scales = cfg.sorted_scales();

    let (corr_threshold, degraded) = match calibrate_corr_threshold(&corr, cfg.corr_floor, cfg.quantile) {
        Ok(tau) => (Some(tau), false),
        Err(_) => (None, true),
    };

    let topology = candidates_topology(adjacency, &scales);
    let residual_cands = match corr_threshold {
        Some(tau) => candidates_residual(&corr, tau, &scales),
        None => Vec::new(),
    };
    let candidates = merge_candidates(topology, residual_cands);

    let ctx = SelectionContext {
        noise_variance: observed_variance(&residual, mask),
        global_rate: propensity.global_rate(),
        n_sensors: y_obs.n_sensors(),
        n_steps: y_obs.n_steps(),
        data_adaptive: corr_threshold.unwrap_or(cfg.corr_floor),
    };
    let (hypergraph, scored, per_scale) = select_hyperedges(&candidates, &corr, &residual, mask, cfg, &ctx);

    let diagnostics = DiscoveryDiagnostics {
        degraded_topology_only: degraded,
        undefined_pairs: corr.undefined_pair_count(),
        corr_threshold,
        noise_variance: ctx.noise_variance,
        global_rate: ctx.global_rate,
        candidate_total: candidates.len(),
        prefit_iterations: solution.iterations,
        prefit_rel_residual: solution.rel_residual,
        per_scale,
    };
    Ok(DiscoveryOutput {
        hypergraph,
        prefit_estimate: solution.estimate,
        prefit_residual: residual,
        scored,
        diagnostics,
    })
}

/// Final linear fit on the combined operator `L_G + lambda_hyper L_H`.
pub fn fit_linear(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    adjacency: &AdjacencyMatrix,
    hypergraph: &Hypergraph,
    cfg: &TikhonovConfig,
) -> Result<TikhonovSolution> {
    hypergraph.validate(y_obs.n_sensors())?;
    let spatial = SpatialOperator::new(
        GraphLaplacian::from_adjacency(adjacency),
        hypergraph.clone(),
        cfg.lambda_hyper,
    );
    let temporal = TemporalOperator::first_difference(y_obs.n_steps());
    solve_tikhonov(y_obs, mask, propensity, &spatial, &temporal, cfg)
}
