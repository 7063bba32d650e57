// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inverse-propensity-weighted Tikhonov estimator solved by conjugate
//! gradient on the implicit normal-equation operator.

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Mask, Regime};
use crate::error::{Error, Result};
use crate::operators::{apply_normal_into, SpatialOperator, TemporalOperator};

fn default_lambda_spatial() -> f64 {
    1.0
}
fn default_lambda_temporal() -> f64 {
    20.0
}
fn default_ridge() -> f64 {
    0.02
}
fn default_lambda_hyper() -> f64 {
    2.0
}
fn default_propensity_floor() -> f64 {
    0.05
}
fn default_max_iters() -> usize {
    100
}
fn default_rel_tol() -> f64 {
    1e-8
}

/// Solver hyperparameters. Defaults are the fixed operating point used by
/// every pipeline stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TikhonovConfig {
    pub lambda_spatial: f64,
    pub lambda_temporal: f64,
    pub ridge: f64,
    pub lambda_hyper: f64,
    pub propensity_floor: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for TikhonovConfig {
    fn default() -> Self {
        Self {
            lambda_spatial: default_lambda_spatial(),
            lambda_temporal: default_lambda_temporal(),
            ridge: default_ridge(),
            lambda_hyper: default_lambda_hyper(),
            propensity_floor: default_propensity_floor(),
            max_iters: default_max_iters(),
            rel_tol: default_rel_tol(),
        }
    }
}

impl TikhonovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0) {
            return Err(Error::invalid("ridge must be strictly positive"));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor <= 1.0) {
            return Err(Error::invalid("propensity floor must lie in (0, 1]"));
        }
        for (name, v) in [
            ("lambda_spatial", self.lambda_spatial),
            ("lambda_temporal", self.lambda_temporal),
            ("lambda_hyper", self.lambda_hyper),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Per-cell observation-rate estimates, floored away from zero, plus the
/// global scalar rate used by selection thresholds.
#[derive(Clone, Debug)]
pub struct PropensityModel {
    n_sensors: usize,
    n_steps: usize,
    rates: Vec<f64>,
    global_rate: f64,
}

impl PropensityModel {
    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn rate(&self, sensor: usize, step: usize) -> f64 {
        self.rates[sensor * self.n_steps + step]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn global_rate(&self) -> f64 {
        self.global_rate
    }

    /// Known constant rate (for simulations where the truth is available).
    pub fn constant(n_sensors: usize, n_steps: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::invalid("propensity rate must lie in (0, 1]"));
        }
        Ok(Self {
            n_sensors,
            n_steps,
            rates: vec![rate; n_sensors * n_steps],
            global_rate: rate,
        })
    }
}

/// Empirical propensity from a mask: the observed fraction, clipped from
/// below. For whole-sensor holdout the fraction is taken over rows with at
/// least one observation and held-out rows fall back to the floor.
pub fn estimate_propensity(mask: &Mask, floor: f64) -> Result<PropensityModel> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::invalid("propensity floor must lie in (0, 1]"));
    }
    let n = mask.n_sensors();
    let t = mask.n_steps();
    let observed = mask.observed_count();
    if observed == 0 {
        return Err(Error::degenerate("mask has no observed cells; propensity undefined"));
    }
    let overall = observed as f64 / (n * t) as f64;
    let global_rate = overall.max(floor);
    let kriging = matches!(mask.spec().map(|s| s.regime), Some(Regime::SensorKriging));
    let mut rates = vec![0.0; n * t];
    if kriging {
        let mut observed_rows = 0usize;
        let mut observed_cells = 0usize;
        for i in 0..n {
            let c = mask.row_observed_count(i);
            if c > 0 {
                observed_rows += 1;
                observed_cells += c;
            }
        }
        let row_rate = (observed_cells as f64 / (observed_rows * t) as f64).max(floor);
        for i in 0..n {
            let value = if mask.row_observed_count(i) > 0 { row_rate } else { floor };
            rates[i * t..(i + 1) * t].fill(value);
        }
    } else {
        rates.fill(global_rate);
    }
    Ok(PropensityModel {
        n_sensors: n,
        n_steps: t,
        rates,
        global_rate,
    })
}

/// Solver output with convergence diagnostics.
#[derive(Clone, Debug)]
pub struct TikhonovSolution {
    pub estimate: DataMatrix,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// IPW fidelity weights `W = M (*) 1/pi`, zero at missing cells.
pub fn ipw_weights(mask: &Mask, propensity: &PropensityModel) -> DataMatrix {
    let n = mask.n_sensors();
    let t = mask.n_steps();
    let mut w = DataMatrix::zeros(n, t);
    for i in 0..n {
        for step in 0..t {
            if mask.is_observed(i, step) {
                w.set(i, step, 1.0 / propensity.rate(i, step));
            }
        }
    }
    w
}

/// Solve the normal equation
/// `(W (*) + lambda_s L_S + lambda_t . L_T + ridge) X = W (*) Y`
/// by plain conjugate gradient from a zero iterate. The operator is
/// symmetric positive definite for ridge > 0.
pub fn solve_tikhonov(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    cfg: &TikhonovConfig,
) -> Result<TikhonovSolution> {
    solve_tikhonov_traced(y_obs, mask, propensity, spatial, temporal, cfg, |_| {})
}

/// Same as [`solve_tikhonov`] with a per-iterate callback, used by
/// diagnostics that track the objective along the solve.
pub fn solve_tikhonov_traced(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    cfg: &TikhonovConfig,
    mut on_iterate: impl FnMut(&DataMatrix),
) -> Result<TikhonovSolution> {
    cfg.validate()?;
    let n = y_obs.n_sensors();
    let t = y_obs.n_steps();
    if mask.n_sensors() != n || mask.n_steps() != t {
        return Err(Error::invalid("mask shape does not match observations"));
    }
    if propensity.n_sensors() != n || propensity.n_steps() != t {
        return Err(Error::invalid("propensity shape does not match observations"));
    }
    if spatial.n_sensors() != n || temporal.len() != t {
        return Err(Error::invalid("operator shape does not match observations"));
    }

    let weights = ipw_weights(mask, propensity);
    let mut rhs = vec![0.0; n * t];
    for (r, (&w, &y)) in rhs.iter_mut().zip(weights.values().iter().zip(y_obs.values())) {
        // masked cells contribute exactly zero; their stored values are never read
        *r = if w > 0.0 { w * y } else { 0.0 };
    }
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return Ok(TikhonovSolution {
            estimate: DataMatrix::zeros(n, t),
            iterations: 0,
            rel_residual: 0.0,
        });
    }

    let apply = |x: &[f64], out: &mut [f64]| {
        apply_normal_into(
            x,
            weights.values(),
            spatial,
            temporal,
            cfg.lambda_spatial,
            cfg.lambda_temporal,
            cfg.ridge,
            n,
            t,
            out,
        );
    };

    let len = n * t;
    let mut x = vec![0.0; len];
    let mut residual = rhs.clone();
    let mut direction = residual.clone();
    let mut operator_dir = vec![0.0; len];
    let mut rr = dot(&residual, &residual);
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        apply(&direction, &mut operator_dir);
        let curvature = dot(&direction, &operator_dir);
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(Error::Numerical {
                iterations: iter,
                message: format!("conjugate gradient curvature {curvature} is not positive"),
            });
        }
        let step = rr / curvature;
        for k in 0..len {
            x[k] += step * direction[k];
            residual[k] -= step * operator_dir[k];
        }
        iterations = iter + 1;
        let rr_next = dot(&residual, &residual);
        if !rr_next.is_finite() {
            return Err(Error::Numerical {
                iterations,
                message: "conjugate gradient residual became non-finite".into(),
            });
        }
        on_iterate(&DataMatrix::new(n, t, x.clone())?);
        if rr_next.sqrt() / rhs_norm <= cfg.rel_tol {
            rr = rr_next;
            break;
        }
        let beta = rr_next / rr;
        for k in 0..len {
            direction[k] = residual[k] + beta * direction[k];
        }
        rr = rr_next;
    }

    Ok(TikhonovSolution {
        estimate: DataMatrix::new(n, t, x)?,
        iterations,
        rel_residual: rr.sqrt() / rhs_norm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// IPW empirical fidelity `0.5 sum (M/pi) (X - Y)^2`, an unbiased stand-in
/// for the full-data squared error under the masking model.
pub fn ipw_loss(x: &DataMatrix, y_obs: &DataMatrix, mask: &Mask, propensity: &PropensityModel) -> f64 {
    let n = x.n_sensors();
    let t = x.n_steps();
    let mut total = 0.0;
    for i in 0..n {
        for step in 0..t {
            if mask.is_observed(i, step) {
                let d = x.get(i, step) - y_obs.get(i, step);
                total += d * d / propensity.rate(i, step);
            }
        }
    }
    0.5 * total
}

/// Full penalized objective evaluated at `x` (fidelity plus smoothness and
/// ridge terms).
pub fn tikhonov_objective(
    x: &DataMatrix,
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    cfg: &TikhonovConfig,
) -> f64 {
    let n = x.n_sensors();
    let t = x.n_steps();
    let fidelity = ipw_loss(x, y_obs, mask, propensity);
    let mut spatial_out = vec![0.0; n * t];
    spatial.apply_into(x.values(), t, 1.0, &mut spatial_out);
    let spatial_term = dot(x.values(), &spatial_out);
    let mut temporal_out = vec![0.0; n * t];
    temporal.apply_into(x.values(), n, 1.0, &mut temporal_out);
    let temporal_term = dot(x.values(), &temporal_out);
    let ridge_term: f64 = x.values().iter().map(|v| v * v).sum();
    fidelity
        + 0.5 * cfg.lambda_spatial * spatial_term
        + 0.5 * cfg.lambda_temporal * temporal_term
        + 0.5 * cfg.ridge * ridge_term
}
