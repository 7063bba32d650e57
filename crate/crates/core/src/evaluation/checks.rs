// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numerical verification harness: each analytical claim behind the method
//! becomes a falsifiable check at desk scale, emitting measured statistics
//! and plot-ready CSV whether it passes or not.

use serde::{Deserialize, Serialize};

use crate::data::{generate_mask, AdjacencyMatrix, DataMatrix, Mask, MissingnessSpec, Regime};
use crate::discovery::{
    calibrate_corr_threshold, candidates_residual, coherence_score, loo_gain_score, observed_variance,
    per_scale_penalty, residual_correlation, DiscoveryConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::mae_heldout;
use crate::operators::{
    dirichlet_energy, scale_weight, GraphLaplacian, Hyperedge, Hypergraph, SpatialOperator,
    TemporalOperator,
};
use crate::pipeline::{run_pipeline_with_propensity, PipelineConfig};
use crate::rng;
use crate::solver::{
    estimate_propensity, ipw_loss, ipw_weights, solve_tikhonov, PropensityModel, TikhonovConfig,
};
use crate::synthetic::{generate_planted, FactorProcess, PlantedEdge, SyntheticSpec};

/// Identifier of one verification check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    ScaleInvariance,
    RepresentationSeparation,
    DenseOracle,
    IpwUnbiased,
    AffineMse,
    RecoverySeparation,
    LepskiGap,
    Deferment,
}

impl CheckId {
    pub fn all() -> Vec<CheckId> {
        vec![
            CheckId::ScaleInvariance,
            CheckId::RepresentationSeparation,
            CheckId::DenseOracle,
            CheckId::IpwUnbiased,
            CheckId::AffineMse,
            CheckId::RecoverySeparation,
            CheckId::LepskiGap,
            CheckId::Deferment,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckId::ScaleInvariance => "scale_invariance",
            CheckId::RepresentationSeparation => "representation_separation",
            CheckId::DenseOracle => "dense_oracle",
            CheckId::IpwUnbiased => "ipw_unbiased",
            CheckId::AffineMse => "affine_mse",
            CheckId::RecoverySeparation => "recovery_separation",
            CheckId::LepskiGap => "lepski_gap",
            CheckId::Deferment => "deferment",
        }
    }

    pub fn parse(tag: &str) -> Result<CheckId> {
        CheckId::all()
            .into_iter()
            .find(|c| c.as_str() == tag)
            .ok_or_else(|| Error::invalid(format!("unknown check id `{tag}`")))
    }
}

/// Outcome of one check: pass flag, measured statistics, tolerances, and
/// plot-ready rows (x, y, series). Failures still report everything.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoremCheckResult {
    pub id: String,
    pub pass: bool,
    pub statistics: Vec<(String, f64)>,
    pub details: String,
    pub csv_rows: Vec<(f64, f64, String)>,
}

impl TheoremCheckResult {
    pub fn csv_text(&self) -> String {
        let mut out = String::from("x,y,series\n");
        for (x, y, series) in &self.csv_rows {
            out.push_str(&format!("{x},{y},{series}\n"));
        }
        out
    }
}

/// Run the selected checks with substreams of `base_seed`.
pub fn verify_theorems(selection: &[CheckId], base_seed: u64) -> Vec<TheoremCheckResult> {
    selection
        .iter()
        .map(|check| match check {
            CheckId::ScaleInvariance => check_scale_invariance(),
            CheckId::RepresentationSeparation => check_representation_separation(base_seed),
            CheckId::DenseOracle => check_dense_oracle(base_seed),
            CheckId::IpwUnbiased => check_ipw_unbiased(base_seed),
            CheckId::AffineMse => check_affine_mse(base_seed),
            CheckId::RecoverySeparation => check_recovery_separation(base_seed),
            CheckId::LepskiGap => check_lepski_gap(base_seed),
            CheckId::Deferment => check_deferment(base_seed),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// dense resolvent oracle

/// Materialize the normal-equation operator as a dense NT x NT matrix in
/// the column-stacked basis (cell (i, t) at index t*N + i) and solve by
/// Gaussian elimination. Independent of the streaming conjugate-gradient
/// path; usable only at tiny sizes.
pub fn dense_resolvent_solve(
    y_obs: &DataMatrix,
    weights: &DataMatrix,
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    lambda_s: f64,
    lambda_t: f64,
    ridge: f64,
) -> Result<DataMatrix> {
    let n = y_obs.n_sensors();
    let t = y_obs.n_steps();
    let dim = n * t;
    if dim > 4096 {
        return Err(Error::invalid("dense oracle is restricted to tiny instances"));
    }
    let ls = spatial.to_dense();
    let lt = temporal.to_dense();
    let mut system = vec![0.0; dim * dim];
    let idx = |i: usize, step: usize| step * n + i;
    for i in 0..n {
        for step in 0..t {
            let row = idx(i, step);
            system[row * dim + row] += ridge + weights.get(i, step);
            for j in 0..n {
                system[row * dim + idx(j, step)] += lambda_s * ls[i * n + j];
            }
            for step2 in 0..t {
                system[row * dim + idx(i, step2)] += lambda_t * lt[step2 * t + step];
            }
        }
    }
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        for step in 0..t {
            rhs[idx(i, step)] = weights.get(i, step) * y_obs.get(i, step);
        }
    }
    gaussian_solve(&mut system, &mut rhs, dim)?;
    let mut values = vec![0.0; dim];
    for i in 0..n {
        for step in 0..t {
            values[i * t + step] = rhs[idx(i, step)];
        }
    }
    DataMatrix::new(n, t, values)
}

fn gaussian_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<()> {
    for col in 0..dim {
        let mut pivot = col;
        let mut best = a[col * dim + col].abs();
        for row in (col + 1)..dim {
            let v = a[row * dim + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-14 {
            return Err(Error::degenerate("singular system in dense oracle"));
        }
        if pivot != col {
            for k in 0..dim {
                a.swap(col * dim + k, pivot * dim + k);
            }
            b.swap(col, pivot);
        }
        let scale = a[col * dim + col];
        for row in (col + 1)..dim {
            let factor = a[row * dim + col] / scale;
            if factor == 0.0 {
                continue;
            }
            for k in col..dim {
                a[row * dim + k] -= factor * a[col * dim + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for k in (col + 1)..dim {
            acc -= a[col * dim + k] * b[k];
        }
        b[col] = acc / a[col * dim + col];
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// individual checks

fn check_scale_invariance() -> TheoremCheckResult {
    let tolerance = 1e-12;
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut max_const: f64 = 0.0;
    for s in [3usize, 4, 5] {
        let edge = Hyperedge::new((0..s).collect(), 1.0).unwrap();
        let mut one_hot = DataMatrix::zeros(s, 1);
        one_hot.set(0, 0, 1.0);
        let normalized = dirichlet_energy(&one_hot, &edge, true);
        let expected = 2.0 / s as f64;
        max_dev = max_dev.max((normalized - expected).abs());
        rows.push((s as f64, normalized, "one_hot_normalized".into()));
        rows.push((s as f64, expected, "expected_two_over_s".into()));

        let constant = DataMatrix::new(s, 2, vec![0.37; s * 2]).unwrap();
        max_const = max_const.max(dirichlet_energy(&constant, &edge, true).abs());

        // both normalization conventions of the raw form, for the record:
        // raw = s^2 Var per step under the algebraic identity; the
        // 2*C(s,2)*Var form differs by the factor s/(s-1)
        let raw = dirichlet_energy(&one_hot, &edge, false);
        let step_var = {
            let mean = 1.0 / s as f64;
            ((1.0 - mean) * (1.0 - mean) + (s as f64 - 1.0) * mean * mean) / s as f64
        };
        rows.push((s as f64, raw / (s as f64 * s as f64 * step_var), "ratio_algebraic".into()));
        rows.push((
            s as f64,
            raw / (2.0 * (s * (s - 1) / 2) as f64 * step_var),
            "ratio_paircount_form".into(),
        ));
    }
    stats.push(("max_one_hot_deviation".into(), max_dev));
    stats.push(("max_constant_energy".into(), max_const));
    stats.push(("tolerance".into(), tolerance));
    let pass = max_dev <= tolerance && max_const == 0.0;
    TheoremCheckResult {
        id: CheckId::ScaleInvariance.as_str().into(),
        pass,
        statistics: stats,
        details: format!(
            "one-hot normalized energies match 2/s (max dev {max_dev:.3e}); constant patterns give {max_const:.1e}"
        ),
        csv_rows: rows,
    }
}

fn check_representation_separation(base_seed: u64) -> TheoremCheckResult {
    let tolerance = 1e-10;
    let mut rng = rng::substream(base_seed, "representation", 0);
    let mut rows = Vec::new();
    let mut max_rel: f64 = 0.0;
    for trial in 0..20 {
        let n = 6 + rng.index(7); // <= 12
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.bernoulli(0.6) {
                    let v = rng.unit_f64() * 3.0;
                    weights[i * n + j] = v;
                    weights[j * n + i] = v;
                }
            }
        }
        let adjacency = AdjacencyMatrix::new(n, weights).unwrap();
        let mut hyper = Hypergraph::empty();
        for _ in 0..4 {
            let size = 2 + rng.index(4.min(n - 1));
            let mut members: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut members);
            members.truncate(size);
            let _ = hyper.insert(Hyperedge::new(members, 0.5 + 0.5 * rng.unit_f64()).unwrap());
        }
        let group_size = 3 + rng.index(3.min(n - 2));
        let mut group: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut group);
        group.truncate(group_size);
        group.sort_unstable();
        let t_len = 5;
        let signal: Vec<f64> = (0..t_len).map(|_| rng.standard_normal()).collect();
        let mut pattern = DataMatrix::zeros(n, t_len);
        for &i in &group {
            for (step, &c) in signal.iter().enumerate() {
                pattern.set(i, step, c);
            }
        }
        let signal_energy: f64 = signal.iter().map(|v| v * v).sum();

        let quad = |op: &SpatialOperator| -> f64 {
            let mut out = vec![0.0; n * t_len];
            op.apply_into(pattern.values(), t_len, 1.0, &mut out);
            pattern.values().iter().zip(out).map(|(&a, b)| a * b).sum()
        };

        let graph_direct = quad(&SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&adjacency)));
        let mut boundary = 0.0;
        for &i in &group {
            for j in 0..n {
                if !group.contains(&j) {
                    boundary += adjacency.weight(i, j);
                }
            }
        }
        let graph_formula = signal_energy * boundary;
        let dev_graph = (graph_direct - graph_formula).abs() / graph_formula.abs().max(1.0);

        let with_hyper = quad(&SpatialOperator::new(
            GraphLaplacian::from_adjacency(&adjacency),
            hyper.clone(),
            1.0,
        ));
        let hyper_direct = with_hyper - graph_direct;
        let mut leakage = 0.0;
        for scale in &hyper.scales {
            for edge in &scale.edges {
                let overlap = edge.members.iter().filter(|m| group.contains(m)).count() as f64;
                leakage += scale_weight(scale.s) * edge.weight * overlap * (scale.s as f64 - overlap);
            }
        }
        let hyper_formula = signal_energy * leakage;
        let dev_hyper = (hyper_direct - hyper_formula).abs() / hyper_formula.abs().max(1.0);

        max_rel = max_rel.max(dev_graph).max(dev_hyper);
        rows.push((trial as f64, dev_graph, "graph_boundary_dev".into()));
        rows.push((trial as f64, dev_hyper, "overlap_leakage_dev".into()));
    }
    let pass = max_rel <= tolerance;
    TheoremCheckResult {
        id: CheckId::RepresentationSeparation.as_str().into(),
        pass,
        statistics: vec![("max_relative_deviation".into(), max_rel), ("tolerance".into(), tolerance)],
        details: format!("group-pattern formulas vs direct quadratic forms: max relative deviation {max_rel:.3e}"),
        csv_rows: rows,
    }
}

fn check_dense_oracle(base_seed: u64) -> TheoremCheckResult {
    let tolerance = 1e-8;
    let mut rng = rng::substream(base_seed, "dense-oracle", 0);
    let mut rows = Vec::new();
    let mut max_rel: f64 = 0.0;
    for trial in 0..20 {
        let n = 2 + rng.index(7); // 2..8
        let max_t = (64 / n).max(2);
        let t = 2 + rng.index(max_t - 1);
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.bernoulli(0.7) {
                    let v = rng.unit_f64();
                    weights[i * n + j] = v;
                    weights[j * n + i] = v;
                }
            }
        }
        let adjacency = AdjacencyMatrix::new(n, weights).unwrap();
        let mut hyper = Hypergraph::empty();
        if n >= 3 {
            let size = 2 + rng.index((n - 1).min(4));
            let mut members: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut members);
            members.truncate(size);
            let _ = hyper.insert(Hyperedge::new(members, 0.6 + 0.4 * rng.unit_f64()).unwrap());
        }
        let spatial = SpatialOperator::new(GraphLaplacian::from_adjacency(&adjacency), hyper, 2.0);
        let temporal = TemporalOperator::first_difference(t);
        let y = DataMatrix::new(n, t, (0..n * t).map(|_| rng.standard_normal()).collect()).unwrap();
        let spec = MissingnessSpec::new(Regime::CellMar, 0.3, rng.next_u64());
        let mask = generate_mask(n, t, &spec).unwrap();
        let propensity = PropensityModel::constant(n, t, 0.7).unwrap();
        let cfg = TikhonovConfig {
            rel_tol: 1e-13,
            max_iters: 4 * n * t,
            ..TikhonovConfig::default()
        };
        let mut y_obs = y.clone();
        y_obs.zero_fill_missing(&mask);
        let cg = solve_tikhonov(&y_obs, &mask, &propensity, &spatial, &temporal, &cfg).unwrap();
        let w = ipw_weights(&mask, &propensity);
        let dense = dense_resolvent_solve(
            &y_obs,
            &w,
            &spatial,
            &temporal,
            cfg.lambda_spatial,
            cfg.lambda_temporal,
            cfg.ridge,
        )
        .unwrap();
        let diff: f64 = cg
            .estimate
            .values()
            .iter()
            .zip(dense.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = dense.frob_norm().max(1e-12);
        let rel = diff / scale;
        max_rel = max_rel.max(rel);
        rows.push((trial as f64, rel, "relative_error".into()));
    }
    let pass = max_rel <= tolerance;
    TheoremCheckResult {
        id: CheckId::DenseOracle.as_str().into(),
        pass,
        statistics: vec![("max_relative_error".into(), max_rel), ("tolerance".into(), tolerance)],
        details: format!("conjugate gradient vs dense factorization on 20 tiny instances: max relative error {max_rel:.3e}"),
        csv_rows: rows,
    }
}

fn check_ipw_unbiased(base_seed: u64) -> TheoremCheckResult {
    let n = 8;
    let t = 16;
    let rate = 0.5;
    let draws = 10_000;
    let mut rng = rng::substream(base_seed, "ipw-check", 0);
    let x = DataMatrix::new(n, t, (0..n * t).map(|_| rng.standard_normal()).collect()).unwrap();
    let y = DataMatrix::new(n, t, (0..n * t).map(|_| rng.standard_normal()).collect()).unwrap();
    let propensity = PropensityModel::constant(n, t, rate).unwrap();
    let full_loss: f64 = 0.5
        * x.values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    let mut losses = Vec::with_capacity(draws);
    let mut rows = Vec::new();
    for k in 0..draws {
        let spec = MissingnessSpec::new(Regime::CellMar, 1.0 - rate, rng::derive_seed(base_seed, "ipw-mask", k as u64));
        let mask = generate_mask(n, t, &spec).unwrap();
        losses.push(ipw_loss(&x, &y, &mask, &propensity));
        if (k + 1) % 500 == 0 {
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            rows.push(((k + 1) as f64, mean, "running_mean".into()));
        }
    }
    let mean = losses.iter().sum::<f64>() / draws as f64;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (draws - 1) as f64;
    let se = (var / draws as f64).sqrt();
    let z = (mean - full_loss).abs() / se;
    rows.push((draws as f64, full_loss, "full_data_loss".into()));
    let pass = z <= 3.0;
    TheoremCheckResult {
        id: CheckId::IpwUnbiased.as_str().into(),
        pass,
        statistics: vec![
            ("monte_carlo_mean".into(), mean),
            ("full_data_loss".into(), full_loss),
            ("standard_error".into(), se),
            ("z_score".into(), z),
        ],
        details: format!(
            "mean weighted loss {mean:.4} vs full-data loss {full_loss:.4} over {draws} masks (z = {z:.2})"
        ),
        csv_rows: rows,
    }
}

fn check_affine_mse(base_seed: u64) -> TheoremCheckResult {
    let n = 60;
    let t = 576;
    let spec = SyntheticSpec {
        n_sensors: n,
        n_steps: t,
        planted: vec![
            PlantedEdge::with_betas(vec![4, 18, 33, 47], 0.9, 1.1),
            PlantedEdge::with_betas(vec![9, 26, 51], 0.9, 1.1),
        ],
        factor: FactorProcess::Ar1 { phi: 0.9, sigma: 0.5 },
        background_smoothness: 12,
        noise: 0.0,
        topology_aligned: false,
        seed: rng::derive_seed(base_seed, "affine-structure", 0),
    };
    let (truth, adjacency, planted_graph) = generate_planted(&spec).unwrap();
    let mask_spec = MissingnessSpec::new(
        Regime::CellMar,
        0.3,
        rng::derive_seed(base_seed, "affine-mask", 0),
    );
    let mask = generate_mask(n, t, &mask_spec).unwrap();
    let propensity = estimate_propensity(&mask, 0.05).unwrap();
    let spatial = SpatialOperator::new(GraphLaplacian::from_adjacency(&adjacency), planted_graph, 2.0);
    let temporal = TemporalOperator::first_difference(t);
    let cfg = TikhonovConfig::default();

    let levels = [0.25f64, 0.5, 1.0, 2.0, 4.0];
    let pairs = 3;
    // common antithetic noise across levels: the observed mean MSE is then
    // exactly affine in the variance up to solver tolerance
    let base_noise: Vec<Vec<f64>> = (0..pairs)
        .map(|k| {
            let mut noise_rng = rng::substream(base_seed, "affine-noise", k as u64);
            (0..n * t).map(|_| noise_rng.standard_normal()).collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &variance in &levels {
        let sigma = variance.sqrt();
        let mut total = 0.0;
        let mut count = 0usize;
        for noise in &base_noise {
            for sign in [1.0, -1.0] {
                let mut y = truth.clone();
                for (v, z) in y.values_mut().iter_mut().zip(noise) {
                    *v += sign * sigma * z;
                }
                y.zero_fill_missing(&mask);
                let sol = solve_tikhonov(&y, &mask, &propensity, &spatial, &temporal, &cfg).unwrap();
                let mse: f64 = sol
                    .estimate
                    .values()
                    .iter()
                    .zip(truth.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (n * t) as f64;
                total += mse;
                count += 1;
            }
        }
        let mean_mse = total / count as f64;
        xs.push(variance);
        ys.push(mean_mse);
        rows.push((variance, mean_mse, "measured_mse".into()));
    }

    // least squares y = a + b x and its R^2
    let m = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / m;
    let mean_y = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = 1.0 - ss_res / ss_tot;
    for &x in &xs {
        rows.push((x, intercept + slope * x, "affine_fit".into()));
    }
    let pass = r_squared >= 0.999;
    TheoremCheckResult {
        id: CheckId::AffineMse.as_str().into(),
        pass,
        statistics: vec![
            ("r_squared".into(), r_squared),
            ("slope".into(), slope),
            ("intercept".into(), intercept),
        ],
        details: format!("grid MSE vs noise variance: R^2 = {r_squared:.6} (slope {slope:.4e}, intercept {intercept:.4e})"),
        csv_rows: rows,
    }
}

/// Synthetic world for the recovery check: every sensor belongs to one of
/// fifteen disjoint scattered groups sharing a temporally white factor at
/// small amplitude. White factors keep the temporal smoother from absorbing
/// the signal; the small amplitude keeps the (scale-bearing) complexity
/// penalty out of the way of the (scale-free) correlation scores.
fn recovery_spec(seed: u64, n: usize, t: usize) -> SyntheticSpec {
    let sigma_u = 0.15;
    SyntheticSpec {
        n_sensors: n,
        n_steps: t,
        planted: (0..15)
            .map(|k| PlantedEdge::with_betas(vec![k, k + 15, k + 30, k + 45], 0.95, 1.05))
            .collect(),
        factor: FactorProcess::Ar1 { phi: 0.0, sigma: sigma_u },
        background_smoothness: 12,
        noise: 0.05 * sigma_u,
        topology_aligned: false,
        seed,
    }
}

fn check_recovery_separation(base_seed: u64) -> TheoremCheckResult {
    let n = 60;
    let t = 370;
    let planted = vec![0usize, 15, 30, 45];
    let scale = planted.len();
    let observation_rates = [0.9, 0.7, 0.5, 0.3];
    let seeds = 20;
    // The correlation ratio normalizes by full per-sensor residual energies,
    // which shrinks every defined entry by roughly the observation rate; the
    // recovery analysis places its acceptance threshold inside the resulting
    // signal/noise gap, so this check runs with a mid-gap floor. The
    // production default floor would cap detection at rate * |corr| and can
    // never be cleared at the lowest swept rate.
    let disc = DiscoveryConfig {
        corr_floor: 0.15,
        ..DiscoveryConfig::default()
    };
    let tikh = TikhonovConfig::default();

    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let mut separated = false;
    for &pi in &observation_rates {
        let mut residual_hits = 0usize;
        let mut gain_hits = 0usize;
        for seed in 0..seeds {
            let spec = recovery_spec(rng::derive_seed(base_seed, "recovery-data", seed), n, t);
            let (truth, adjacency, _) = generate_planted(&spec).unwrap();
            let mask_spec = MissingnessSpec::new(
                Regime::CellMar,
                1.0 - pi,
                rng::derive_seed(base_seed, &format!("recovery-mask:{pi}"), seed),
            );
            let mask = generate_mask(n, t, &mask_spec).unwrap();
            let mut y = truth.clone();
            y.zero_fill_missing(&mask);
            let propensity = estimate_propensity(&mask, tikh.propensity_floor).unwrap();
            let (_, residual) = crate::discovery::prefit(&y, &mask, &propensity, &adjacency, &tikh).unwrap();
            let corr = residual_correlation(&residual, &mask);
            let rate = propensity.global_rate();
            let noise_var = observed_variance(&residual, &mask);
            let penalty = per_scale_penalty(scale, noise_var, n, t, rate, disc.max_scale, disc.penalty_coeff);
            let data_adaptive = calibrate_corr_threshold(&corr, disc.corr_floor, disc.quantile)
                .unwrap_or(disc.corr_floor);

            // residual path: proposed by the residual candidate source and
            // past the coherence threshold
            let proposed = candidates_residual(&corr, data_adaptive, &[scale])
                .into_iter()
                .any(|(_, m)| m == planted);
            let coherence = coherence_score(&planted, &corr);
            if proposed && coherence.is_some_and(|c| c > data_adaptive + penalty) {
                residual_hits += 1;
            }

            // joint-observation path: the leave-one-out gain on its own
            let gain_threshold = disc.gain_coeff * noise_var * ((n as f64).ln() / (rate * t as f64)).sqrt() + penalty;
            if loo_gain_score(&planted, &residual, &mask).is_some_and(|g| g > gain_threshold) {
                gain_hits += 1;
            }
        }
        let freq_residual = residual_hits as f64 / seeds as f64;
        let freq_gain = gain_hits as f64 / seeds as f64;
        rows.push((pi, freq_residual, "residual_path".into()));
        rows.push((pi, freq_gain, "loo_gain_path".into()));
        stats.push((format!("residual_freq_pi_{pi}"), freq_residual));
        stats.push((format!("gain_freq_pi_{pi}"), freq_gain));
        if freq_residual >= 0.8 && freq_gain <= 0.2 {
            separated = true;
        }
    }
    TheoremCheckResult {
        id: CheckId::RecoverySeparation.as_str().into(),
        pass: separated,
        statistics: stats,
        details: if separated {
            "residual-path detection stays >= 0.8 at an observation rate where the joint-observation path falls <= 0.2".into()
        } else {
            "no observation rate separates the two detection paths".into()
        },
        csv_rows: rows,
    }
}

fn check_lepski_gap(base_seed: u64) -> TheoremCheckResult {
    let n = 60;
    let t = 576;
    let seeds = 10;
    let tikh = TikhonovConfig::default();
    let disc = DiscoveryConfig::default();
    let fixed_scales = [2usize, 3, 4, 5];

    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let mut pass = true;
    for &true_scale in &[3usize, 4] {
        let mut adaptive_total = 0.0;
        let mut best_fixed_total = 0.0;
        for seed in 0..seeds {
            // three scattered groups of the true scale
            let members: Vec<Vec<usize>> = (0..3)
                .map(|g| (0..true_scale).map(|k| (g * 7 + k * 13 + 3) % n).collect())
                .collect();
            let spec = SyntheticSpec {
                n_sensors: n,
                n_steps: t,
                planted: members.into_iter().map(|m| PlantedEdge::with_betas(m, 0.9, 1.1)).collect(),
                factor: FactorProcess::Ar1 {
                    phi: 0.9,
                    sigma: (1.0 - 0.81f64).sqrt(),
                },
                background_smoothness: 12,
                noise: 0.3,
                topology_aligned: false,
                seed: rng::derive_seed(base_seed, &format!("lepski-data:{true_scale}"), seed),
            };
            let (truth, adjacency, _) = generate_planted(&spec).unwrap();
            let mask_spec = MissingnessSpec::new(
                Regime::CellMar,
                0.3,
                rng::derive_seed(base_seed, &format!("lepski-mask:{true_scale}"), seed),
            );
            let mask = generate_mask(n, t, &mask_spec).unwrap();
            let mut y = truth.clone();
            y.zero_fill_missing(&mask);
            let propensity = estimate_propensity(&mask, tikh.propensity_floor).unwrap();

            let heldout_mse = |cfg: &DiscoveryConfig| -> f64 {
                let out = crate::discovery::discover(&y, &mask, &propensity, &adjacency, &tikh, cfg).unwrap();
                let fit = crate::discovery::fit_linear(&y, &mask, &propensity, &adjacency, &out.hypergraph, &tikh)
                    .unwrap();
                let mut total = 0.0;
                let mut count = 0usize;
                for i in 0..n {
                    for step in 0..t {
                        if !mask.is_observed(i, step) {
                            let d = fit.estimate.get(i, step) - truth.get(i, step);
                            total += d * d;
                            count += 1;
                        }
                    }
                }
                total / count as f64
            };

            let adaptive = heldout_mse(&disc);
            let best_fixed = fixed_scales
                .iter()
                .map(|&s| heldout_mse(&disc.with_scales(vec![s])))
                .fold(f64::INFINITY, f64::min);
            adaptive_total += adaptive;
            best_fixed_total += best_fixed;
            rows.push((true_scale as f64, adaptive, format!("adaptive_seed_{seed}")));
            rows.push((true_scale as f64, best_fixed, format!("best_fixed_seed_{seed}")));
        }
        let adaptive_mean = adaptive_total / seeds as f64;
        let best_fixed_mean = best_fixed_total / seeds as f64;
        let ratio = adaptive_mean / best_fixed_mean;
        stats.push((format!("adaptive_mean_s{true_scale}"), adaptive_mean));
        stats.push((format!("best_fixed_mean_s{true_scale}"), best_fixed_mean));
        stats.push((format!("ratio_s{true_scale}"), ratio));
        rows.push((true_scale as f64, ratio, "ratio".into()));
        if !(ratio <= 1.25) {
            pass = false;
        }
    }
    let ratios: Vec<String> = stats
        .iter()
        .filter(|(k, _)| k.starts_with("ratio"))
        .map(|(k, v)| format!("{k} = {v:.4}"))
        .collect();
    TheoremCheckResult {
        id: CheckId::LepskiGap.as_str().into(),
        pass,
        statistics: stats.clone(),
        details: format!(
            "adaptive multi-scale fit vs best fixed single scale, slack 1.25: {}",
            ratios.join(", ")
        ),
        csv_rows: rows,
    }
}

fn check_deferment(base_seed: u64) -> TheoremCheckResult {
    let n = 30;
    let t = 192;
    let mut rows = Vec::new();
    let mut max_diff: f64 = 0.0;
    for seed in 0..3u64 {
        let spec = SyntheticSpec {
            n_sensors: n,
            n_steps: t,
            planted: vec![
                PlantedEdge::with_betas(vec![2, 9, 17], 0.9, 1.1),
                PlantedEdge::with_betas(vec![5, 13, 21, 27], 0.9, 1.1),
            ],
            factor: FactorProcess::Ar1 {
                phi: 0.9,
                sigma: (1.0 - 0.81f64).sqrt(),
            },
            background_smoothness: 8,
            noise: 0.2,
            topology_aligned: false,
            seed: rng::derive_seed(base_seed, "deferment-data", seed),
        };
        let (truth, adjacency, _) = generate_planted(&spec).unwrap();
        let mask_spec = MissingnessSpec::new(
            Regime::SensorKriging,
            0.5,
            rng::derive_seed(base_seed, "deferment-mask", seed),
        );
        let mask = generate_mask(n, t, &mask_spec).unwrap();
        let mut y = truth.clone();
        y.zero_fill_missing(&mask);
        let propensity = estimate_propensity(&mask, 0.05).unwrap();
        let cfg = PipelineConfig::default();
        let out = run_pipeline_with_propensity(&y, &mask, &propensity, &adjacency, &cfg, false).unwrap();
        let mut diff: f64 = 0.0;
        for i in 0..n {
            if mask.row_observed_count(i) == 0 {
                for step in 0..t {
                    diff = diff.max((out.full.get(i, step) - out.linear.get(i, step)).abs());
                }
            }
        }
        max_diff = max_diff.max(diff);
        rows.push((seed as f64, diff, "max_abs_correction_on_held_out_rows".into()));
    }
    let pass = max_diff == 0.0;
    TheoremCheckResult {
        id: CheckId::Deferment.as_str().into(),
        pass,
        statistics: vec![("max_abs_correction".into(), max_diff)],
        details: format!("corrections on fully-held-out sensors: max |full - linear| = {max_diff:.1e} (must be exactly 0)"),
        csv_rows: rows,
    }
}

/// Held-out MAE comparison helper shared by the safety and improvement
/// acceptance runs: returns (mae of full pipeline, mae of the pairwise-only
/// baseline fit, mae of the linear stage).
pub fn pipeline_vs_prefit_mae(
    truth: &DataMatrix,
    adjacency: &AdjacencyMatrix,
    mask: &Mask,
    cfg: &PipelineConfig,
) -> Result<(f64, f64, f64)> {
    let mut y = truth.clone();
    y.zero_fill_missing(mask);
    let propensity = estimate_propensity(mask, cfg.tikhonov.propensity_floor)?;
    let out = run_pipeline_with_propensity(&y, mask, &propensity, adjacency, cfg, false)?;
    let (pre, _) = crate::discovery::prefit(&y, mask, &propensity, adjacency, &cfg.tikhonov)?;
    let full_mae = mae_heldout(&out.full, truth, mask)?;
    let prefit_mae = mae_heldout(&pre.estimate, truth, mask)?;
    let linear_mae = mae_heldout(&out.linear, truth, mask)?;
    Ok((full_mae, prefit_mae, linear_mae))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_ids_round_trip() {
        for id in CheckId::all() {
            assert_eq!(CheckId::parse(id.as_str()).unwrap(), id);
        }
        assert!(CheckId::parse("nope").is_err());
    }

    #[test]
    fn scale_invariance_check_passes() {
        let result = check_scale_invariance();
        assert!(result.pass, "{result:?}");
        assert!(result.csv_text().starts_with("x,y,series\n"));
    }

    #[test]
    fn representation_check_passes() {
        let result = check_representation_separation(11);
        assert!(result.pass, "{:?}", result.statistics);
    }

    #[test]
    fn dense_oracle_check_passes() {
        let result = check_dense_oracle(11);
        assert!(result.pass, "{:?}", result.statistics);
    }

    #[test]
    fn dense_oracle_agrees_on_fixed_instance() {
        // hand-checkable case: fully observed, no smoothing -> Y / (1 + mu)
        let n = 2;
        let t = 3;
        let y = DataMatrix::new(n, t, vec![1.0; 6]).unwrap();
        let w = DataMatrix::new(n, t, vec![1.0; 6]).unwrap();
        let a = AdjacencyMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let spatial = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
        let temporal = TemporalOperator::first_difference(t);
        let out = dense_resolvent_solve(&y, &w, &spatial, &temporal, 0.0, 0.0, 0.02).unwrap();
        for &v in out.values() {
            assert!((v - 1.0 / 1.02).abs() < 1e-12);
        }
    }

    #[test]
    fn ipw_check_passes() {
        let result = check_ipw_unbiased(11);
        assert!(result.pass, "{:?}", result.statistics);
    }

    #[test]
    fn deferment_check_passes() {
        let result = check_deferment(11);
        assert!(result.pass, "{:?}", result.statistics);
    }
}
