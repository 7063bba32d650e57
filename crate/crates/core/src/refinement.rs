// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage two: a small residual corrector conditioned on the discovered
//! hypergraph.
//!
//! For a cell (i, t) the feature vector holds the masked residuals of i's
//! co-members along its top hyperedges — never i's own values — plus three
//! aggregates. A two-layer MLP is trained with Huber loss on observed cells
//! and applied to held-out cells through a hard gate: when no co-member is
//! observed at t the correction is exactly zero.

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Mask};
use crate::error::{Error, Result};
use crate::operators::Hypergraph;
use crate::rng;

fn default_hidden() -> usize {
    32
}
fn default_edges_per_sensor() -> usize {
    8
}
fn default_members_per_edge() -> usize {
    4
}
fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    256
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_huber_delta() -> f64 {
    1.0
}
fn default_gain() -> f64 {
    1.0
}

/// Corrector hyperparameters. With the defaults the feature dimension is
/// 2 * 8 * 4 + 3 = 67.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorConfig {
    pub hidden: usize,
    pub edges_per_sensor: usize,
    pub members_per_edge: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub huber_delta: f64,
    pub gain: f64,
    pub seed: u64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            edges_per_sensor: default_edges_per_sensor(),
            members_per_edge: default_members_per_edge(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            huber_delta: default_huber_delta(),
            gain: default_gain(),
            seed: 0,
        }
    }
}

impl CorrectorConfig {
    pub fn feature_dim(&self) -> usize {
        2 * self.edges_per_sensor * self.members_per_edge + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.edges_per_sensor == 0 || self.members_per_edge == 0 {
            return Err(Error::invalid("corrector dimensions must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::invalid("huber_delta must be positive"));
        }
        Ok(())
    }
}

/// Binds feature slots to (edge rank, co-member rank): slot `e * K + k`
/// holds co-member k of edge e, its value at index `2 * slot` and its
/// observation indicator at `2 * slot + 1`; three aggregates follow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub edges_per_sensor: usize,
    pub members_per_edge: usize,
}

impl FeatureLayout {
    pub fn slots(&self) -> usize {
        self.edges_per_sensor * self.members_per_edge
    }
}

/// Two-layer ReLU MLP `w2 . relu(W1 phi + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorModel {
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub layout: FeatureLayout,
    pub config: CorrectorConfig,
    pub deferred: bool,
}

impl CorrectorModel {
    /// All-zero parameters: the corrector that is exactly the identity on
    /// the linear estimate.
    pub fn zero(cfg: &CorrectorConfig, deferred: bool) -> Self {
        Self {
            w1: vec![vec![0.0; cfg.feature_dim()]; cfg.hidden],
            b1: vec![0.0; cfg.hidden],
            w2: vec![0.0; cfg.hidden],
            b2: 0.0,
            layout: FeatureLayout {
                edges_per_sensor: cfg.edges_per_sensor,
                members_per_edge: cfg.members_per_edge,
            },
            config: *cfg,
            deferred,
        }
    }

    pub fn forward(&self, features: &[f64]) -> f64 {
        let mut out = self.b2;
        for h in 0..self.w2.len() {
            let mut z = self.b1[h];
            for (a, &f) in self.w1[h].iter().zip(features) {
                z += a * f;
            }
            if z > 0.0 {
                out += self.w2[h] * z;
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.b2 == 0.0
            && self.b1.iter().all(|&v| v == 0.0)
            && self.w2.iter().all(|&v| v == 0.0)
            && self.w1.iter().all(|row| row.iter().all(|&v| v == 0.0))
    }
}

/// Ordered co-member slots for a sensor: its top `E` hyperedges by weight
/// (ties: larger scale first, then lexicographic members), `K` co-members
/// per edge in ascending index, padded with `None`.
pub fn neighborhood(
    sensor: usize,
    hypergraph: &Hypergraph,
    edges_per_sensor: usize,
    members_per_edge: usize,
) -> Vec<Option<usize>> {
    let mut edges = hypergraph.edges_of(sensor);
    edges.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.size().cmp(&a.size()))
            .then(a.members.cmp(&b.members))
    });
    let mut slots = Vec::with_capacity(edges_per_sensor * members_per_edge);
    for rank in 0..edges_per_sensor {
        match edges.get(rank) {
            Some(edge) => {
                let mut co: Vec<usize> = edge.members.iter().copied().filter(|&m| m != sensor).collect();
                co.truncate(members_per_edge);
                for k in 0..members_per_edge {
                    slots.push(co.get(k).copied());
                }
            }
            None => slots.extend(vec![None; members_per_edge]),
        }
    }
    slots
}

/// Feature vector for cell (i, t): per-slot (masked residual, indicator)
/// pairs followed by the mean residual over observed co-members, their
/// count, and the network-wide observation rate at t. The target sensor's
/// own row never enters.
pub fn build_features(
    slots: &[Option<usize>],
    t: usize,
    residual: &DataMatrix,
    mask: &Mask,
) -> Vec<f64> {
    let mut features = Vec::with_capacity(2 * slots.len() + 3);
    for &slot in slots {
        match slot {
            Some(j) if mask.is_observed(j, t) => {
                features.push(residual.get(j, t));
                features.push(1.0);
            }
            _ => {
                features.push(0.0);
                features.push(0.0);
            }
        }
    }
    let mut seen: Vec<usize> = slots.iter().flatten().copied().collect();
    seen.sort_unstable();
    seen.dedup();
    let observed: Vec<usize> = seen.into_iter().filter(|&j| mask.is_observed(j, t)).collect();
    let count = observed.len();
    let mean = if count == 0 {
        0.0
    } else {
        observed.iter().map(|&j| residual.get(j, t)).sum::<f64>() / count as f64
    };
    let n = mask.n_sensors();
    let local_rate = (0..n).filter(|&j| mask.is_observed(j, t)).count() as f64 / n as f64;
    features.push(mean);
    features.push(count as f64);
    features.push(local_rate);
    features
}

/// True when at least one co-member slot is observed at t; the hard
/// deferment gate at inference.
pub fn gate_open(slots: &[Option<usize>], t: usize, mask: &Mask) -> bool {
    slots.iter().flatten().any(|&j| mask.is_observed(j, t))
}

/// Huber loss: quadratic inside `[-delta, delta]`, linear outside.
pub fn huber(a: f64, delta: f64) -> f64 {
    let abs = a.abs();
    if abs <= delta {
        0.5 * a * a
    } else {
        delta * (abs - 0.5 * delta)
    }
}

fn huber_grad(a: f64, delta: f64) -> f64 {
    a.clamp(-delta, delta)
}

/// Training summary, including the zero-model baseline risks used by the
/// one-sided safety diagnostics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_train: usize,
    pub n_val: usize,
    pub train_risk: f64,
    pub val_risk: f64,
    pub zero_train_risk: f64,
    pub zero_val_risk: f64,
    pub deferred: bool,
}

/// Train the corrector on observed cells with at least one observed
/// co-member. The last tenth of the training set by time index is held out
/// for diagnostics (never for early stopping; the epoch count is fixed).
/// An empty training set yields the zero model flagged as deferred.
pub fn train_corrector(
    residual: &DataMatrix,
    mask: &Mask,
    hypergraph: &Hypergraph,
    cfg: &CorrectorConfig,
) -> Result<(CorrectorModel, TrainingReport)> {
    cfg.validate()?;
    let n = residual.n_sensors();
    let t_len = residual.n_steps();
    let feature_dim = cfg.feature_dim();

    let slot_table: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| neighborhood(i, hypergraph, cfg.edges_per_sensor, cfg.members_per_edge))
        .collect();

    // training cells ordered by time then sensor so the validation split is
    // the temporal tail
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for t in 0..t_len {
        for i in 0..n {
            if mask.is_observed(i, t) && gate_open(&slot_table[i], t, mask) {
                cells.push((i, t));
            }
        }
    }
    if cells.is_empty() {
        let model = CorrectorModel::zero(cfg, true);
        let report = TrainingReport {
            n_train: 0,
            n_val: 0,
            train_risk: 0.0,
            val_risk: 0.0,
            zero_train_risk: 0.0,
            zero_val_risk: 0.0,
            deferred: true,
        };
        return Ok((model, report));
    }

    let n_val = cells.len() / 10;
    let n_train = cells.len() - n_val;
    let features: Vec<Vec<f64>> = cells
        .iter()
        .map(|&(i, t)| build_features(&slot_table[i], t, residual, mask))
        .collect();
    let targets: Vec<f64> = cells.iter().map(|&(i, t)| residual.get(i, t)).collect();

    // He-style init from the seed's init substream
    let mut init_rng = rng::substream(cfg.seed, "init", 0);
    let w1_scale = (2.0 / feature_dim as f64).sqrt();
    let w2_scale = (2.0 / cfg.hidden as f64).sqrt();
    let mut w1: Vec<Vec<f64>> = (0..cfg.hidden)
        .map(|_| (0..feature_dim).map(|_| w1_scale * init_rng.standard_normal()).collect())
        .collect();
    let mut b1 = vec![0.0; cfg.hidden];
    let mut w2: Vec<f64> = (0..cfg.hidden).map(|_| w2_scale * init_rng.standard_normal()).collect();
    let mut b2 = 0.0;

    // Adam moments
    let mut m_w1 = vec![vec![0.0; feature_dim]; cfg.hidden];
    let mut v_w1 = vec![vec![0.0; feature_dim]; cfg.hidden];
    let mut m_b1 = vec![0.0; cfg.hidden];
    let mut v_b1 = vec![0.0; cfg.hidden];
    let mut m_w2 = vec![0.0; cfg.hidden];
    let mut v_w2 = vec![0.0; cfg.hidden];
    let mut m_b2 = 0.0;
    let mut v_b2 = 0.0;
    let beta1: f64 = 0.9;
    let beta2: f64 = 0.999;
    let eps = 1e-8;
    let mut step = 0usize;

    let mut g_w1 = vec![vec![0.0; feature_dim]; cfg.hidden];
    let mut g_b1 = vec![0.0; cfg.hidden];
    let mut g_w2 = vec![0.0; cfg.hidden];
    let mut hidden = vec![0.0; cfg.hidden];

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::substream(cfg.seed, "shuffle", epoch as u64);
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            for row in g_w1.iter_mut() {
                row.iter_mut().for_each(|g| *g = 0.0);
            }
            g_b1.iter_mut().for_each(|g| *g = 0.0);
            g_w2.iter_mut().for_each(|g| *g = 0.0);
            let mut g_b2 = 0.0;

            for &idx in batch {
                let phi = &features[idx];
                let target = targets[idx];
                let mut pred = b2;
                for h in 0..cfg.hidden {
                    let mut z = b1[h];
                    for (a, &f) in w1[h].iter().zip(phi) {
                        z += a * f;
                    }
                    hidden[h] = z.max(0.0);
                    pred += w2[h] * hidden[h];
                }
                let d_pred = huber_grad(pred - target, cfg.huber_delta);
                g_b2 += d_pred;
                for h in 0..cfg.hidden {
                    g_w2[h] += d_pred * hidden[h];
                    if hidden[h] > 0.0 {
                        let d_h = d_pred * w2[h];
                        g_b1[h] += d_h;
                        for (g, &f) in g_w1[h].iter_mut().zip(phi) {
                            *g += d_h * f;
                        }
                    }
                }
            }

            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let corr1 = 1.0 - beta1.powi(step as i32);
            let corr2 = 1.0 - beta2.powi(step as i32);
            let adam = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
                let g = grad + cfg.weight_decay * *param;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *param -= cfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
            };
            for h in 0..cfg.hidden {
                for f in 0..feature_dim {
                    adam(&mut w1[h][f], g_w1[h][f] * scale, &mut m_w1[h][f], &mut v_w1[h][f]);
                }
                adam(&mut b1[h], g_b1[h] * scale, &mut m_b1[h], &mut v_b1[h]);
                adam(&mut w2[h], g_w2[h] * scale, &mut m_w2[h], &mut v_w2[h]);
            }
            adam(&mut b2, g_b2 * scale, &mut m_b2, &mut v_b2);
        }
    }

    let model = CorrectorModel {
        w1,
        b1,
        w2,
        b2,
        layout: FeatureLayout {
            edges_per_sensor: cfg.edges_per_sensor,
            members_per_edge: cfg.members_per_edge,
        },
        config: *cfg,
        deferred: false,
    };

    let risk = |range: std::ops::Range<usize>, use_model: bool| -> f64 {
        if range.is_empty() {
            return 0.0;
        }
        let len = range.len() as f64;
        range
            .map(|k| {
                let pred = if use_model { model.forward(&features[k]) } else { 0.0 };
                huber(pred - targets[k], cfg.huber_delta)
            })
            .sum::<f64>()
            / len
    };
    let report = TrainingReport {
        n_train,
        n_val,
        train_risk: risk(0..n_train, true),
        val_risk: risk(n_train..cells.len(), true),
        zero_train_risk: risk(0..n_train, false),
        zero_val_risk: risk(n_train..cells.len(), false),
        deferred: false,
    };
    Ok((model, report))
}

/// Add the gated correction on held-out cells. Observed cells pass the
/// linear estimate through unchanged, and any held-out cell without an
/// observed co-member at its timestep keeps the linear value exactly.
pub fn apply_corrector(
    linear: &DataMatrix,
    residual: &DataMatrix,
    mask: &Mask,
    hypergraph: &Hypergraph,
    model: &CorrectorModel,
    cfg: &CorrectorConfig,
) -> DataMatrix {
    let n = linear.n_sensors();
    let t_len = linear.n_steps();
    let mut out = linear.clone();
    if cfg.gain == 0.0 {
        return out;
    }
    for i in 0..n {
        let slots = neighborhood(i, hypergraph, cfg.edges_per_sensor, cfg.members_per_edge);
        for t in 0..t_len {
            if mask.is_observed(i, t) || !gate_open(&slots, t, mask) {
                continue;
            }
            let phi = build_features(&slots, t, residual, mask);
            out.set(i, t, linear.get(i, t) + cfg.gain * model.forward(&phi));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Hyperedge;
    use crate::rng::SplitMix64;

    fn triple_graph() -> Hypergraph {
        Hypergraph::from_edges(vec![Hyperedge::new(vec![0, 1, 2], 0.9).unwrap()]).unwrap()
    }

    #[test]
    fn default_feature_dimension() {
        assert_eq!(CorrectorConfig::default().feature_dim(), 67);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(1.0, 1.0), 0.5);
        assert_eq!(huber(-1.0, 1.0), 0.5);
    }

    #[test]
    fn neighborhood_empty_for_unlisted_sensor() {
        let slots = neighborhood(7, &triple_graph(), 2, 3);
        assert_eq!(slots.len(), 6);
        assert!(slots.iter().all(Option::is_none));
    }

    #[test]
    fn neighborhood_single_triple_padding() {
        let slots = neighborhood(0, &triple_graph(), 2, 4);
        assert_eq!(
            slots,
            vec![Some(1), Some(2), None, None, None, None, None, None]
        );
    }

    #[test]
    fn neighborhood_ranks_by_weight() {
        let h = Hypergraph::from_edges(vec![
            Hyperedge::new(vec![0, 3], 0.6).unwrap(),
            Hyperedge::new(vec![0, 1, 2], 0.9).unwrap(),
        ])
        .unwrap();
        let slots = neighborhood(0, &h, 2, 2);
        assert_eq!(slots, vec![Some(1), Some(2), Some(3), None]);
    }

    #[test]
    fn features_all_unobserved_and_gate() {
        let residual = DataMatrix::zeros(4, 3);
        let mask = Mask::from_bits(4, 3, vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1]).unwrap();
        let slots = neighborhood(0, &triple_graph(), 2, 4);
        assert!(!gate_open(&slots, 1, &mask));
        let phi = build_features(&slots, 1, &residual, &mask);
        // slot pairs all zero, mean 0, count 0; rate = 2/4
        assert_eq!(&phi[..16], vec![0.0; 16].as_slice());
        assert_eq!(phi[16], 0.0);
        assert_eq!(phi[17], 0.0);
        assert_eq!(phi[18], 0.5);
    }

    #[test]
    fn features_single_observed_co_member() {
        let mut residual = DataMatrix::zeros(4, 2);
        residual.set(1, 0, 2.5);
        let mask = Mask::from_bits(4, 2, vec![1, 1, 1, 1, 0, 0, 1, 1]).unwrap();
        let slots = neighborhood(0, &triple_graph(), 1, 4);
        let phi = build_features(&slots, 0, &residual, &mask);
        assert_eq!(phi[0], 2.5);
        assert_eq!(phi[1], 1.0);
        assert_eq!(phi[2], 0.0); // co-member 2 unobserved
        assert_eq!(phi[3], 0.0);
        let base = 2 * slots.len();
        assert_eq!(phi[base], 2.5);
        assert_eq!(phi[base + 1], 1.0);
    }

    #[test]
    fn features_ignore_own_row() {
        let mut residual = DataMatrix::zeros(4, 2);
        residual.set(1, 0, 1.0);
        residual.set(2, 0, -1.0);
        let mask = Mask::all_observed(4, 2);
        let slots = neighborhood(0, &triple_graph(), 2, 4);
        let phi_before = build_features(&slots, 0, &residual, &mask);
        let mut perturbed = residual.clone();
        perturbed.set(0, 0, 99.0);
        perturbed.set(0, 1, -99.0);
        let phi_after = build_features(&slots, 0, &perturbed, &mask);
        assert_eq!(phi_before, phi_after);
    }

    #[test]
    fn zero_model_is_identity() {
        let cfg = CorrectorConfig::default();
        let model = CorrectorModel::zero(&cfg, false);
        assert!(model.is_zero());
        let phi = vec![1.0; cfg.feature_dim()];
        assert_eq!(model.forward(&phi), 0.0);
    }

    #[test]
    fn hand_set_model_forward() {
        let cfg = CorrectorConfig {
            hidden: 2,
            edges_per_sensor: 1,
            members_per_edge: 1,
            ..CorrectorConfig::default()
        };
        let mut model = CorrectorModel::zero(&cfg, false);
        // read feature 0 through hidden unit 0 with gain 3
        model.w1[0][0] = 1.0;
        model.w2[0] = 3.0;
        model.b2 = 0.25;
        let mut phi = vec![0.0; cfg.feature_dim()];
        phi[0] = 2.0;
        assert_eq!(model.forward(&phi), 6.25);
        phi[0] = -2.0; // relu clips
        assert_eq!(model.forward(&phi), 0.25);
    }

    #[test]
    fn empty_training_set_defers() {
        // kriging-style mask: the sensors in the only edge are never
        // observed, so no cell passes the gate
        let residual = DataMatrix::zeros(4, 10);
        let mut bits = vec![0u8; 40];
        bits[30..].fill(1); // only sensor 3 observed, not in any edge
        let mask = Mask::from_bits(4, 10, bits).unwrap();
        let cfg = CorrectorConfig::default();
        let (model, report) = train_corrector(&residual, &mask, &triple_graph(), &cfg).unwrap();
        assert!(report.deferred);
        assert!(model.is_zero());
        assert!(model.deferred);
    }

    #[test]
    fn realizable_target_trains_well() {
        // residual of each member equals the mean of its co-members:
        // u on all three members makes the map exactly learnable
        let t = 400;
        let mut rng = SplitMix64::new(4);
        let mut residual = DataMatrix::zeros(5, t);
        for step in 0..t {
            let u = rng.standard_normal();
            for i in 0..3 {
                residual.set(i, step, u);
            }
        }
        let mask = Mask::all_observed(5, t);
        let cfg = CorrectorConfig {
            seed: 11,
            ..CorrectorConfig::default()
        };
        let (_, report) = train_corrector(&residual, &mask, &triple_graph(), &cfg).unwrap();
        assert!(
            report.train_risk <= 0.1 * report.zero_train_risk,
            "train {} vs zero {}",
            report.train_risk,
            report.zero_train_risk
        );
    }

    #[test]
    fn pure_noise_is_one_sided_safe() {
        // mean validation risk over seeds stays within 5% of the zero model
        let t = 400;
        let mut val_total = 0.0;
        let mut zero_total = 0.0;
        for seed in 0..10 {
            let mut rng = SplitMix64::new(100 + seed);
            let mut residual = DataMatrix::zeros(5, t);
            for i in 0..5 {
                for step in 0..t {
                    residual.set(i, step, rng.standard_normal());
                }
            }
            let mask = Mask::all_observed(5, t);
            let cfg = CorrectorConfig {
                seed,
                ..CorrectorConfig::default()
            };
            let (_, report) = train_corrector(&residual, &mask, &triple_graph(), &cfg).unwrap();
            val_total += report.val_risk;
            zero_total += report.zero_val_risk;
        }
        assert!(
            val_total <= 1.05 * zero_total,
            "mean val {} vs mean zero {}",
            val_total / 10.0,
            zero_total / 10.0
        );
    }

    #[test]
    fn training_is_deterministic() {
        let t = 120;
        let mut rng = SplitMix64::new(9);
        let mut residual = DataMatrix::zeros(4, t);
        for i in 0..4 {
            for step in 0..t {
                residual.set(i, step, rng.standard_normal());
            }
        }
        let mask = Mask::all_observed(4, t);
        let cfg = CorrectorConfig {
            seed: 42,
            epochs: 5,
            ..CorrectorConfig::default()
        };
        let (a, _) = train_corrector(&residual, &mask, &triple_graph(), &cfg).unwrap();
        let (b, _) = train_corrector(&residual, &mask, &triple_graph(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrector_defers_on_held_out_rows() {
        // sensors 0..3 share an edge; rows 0 and 1 are fully held out while
        // 2 stays observed: rows 0 and 1 get corrections only where 2 is
        // observed — hold out 2 as well and they must pass through
        let t = 8;
        let linear = DataMatrix::new(4, t, (0..4 * t).map(|k| k as f64).collect()).unwrap();
        let residual = DataMatrix::zeros(4, t);
        let mut bits = vec![0u8; 4 * t];
        bits[3 * t..].fill(1); // only sensor 3, which shares no edge
        let mask = Mask::from_bits(4, t, bits).unwrap();
        let cfg = CorrectorConfig::default();
        let mut model = CorrectorModel::zero(&cfg, false);
        model.b2 = 5.0; // a nonzero output that the gate must suppress
        let out = apply_corrector(&linear, &residual, &mask, &triple_graph(), &model, &cfg);
        for i in 0..3 {
            for step in 0..t {
                assert_eq!(out.get(i, step), linear.get(i, step));
            }
        }
    }

    #[test]
    fn zero_gain_is_identity() {
        let t = 6;
        let linear = DataMatrix::new(3, t, (0..3 * t).map(|k| 0.5 * k as f64).collect()).unwrap();
        let residual = DataMatrix::zeros(3, t);
        let mask = Mask::from_bits(3, t, vec![1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 1, 1]).unwrap();
        let cfg = CorrectorConfig {
            gain: 0.0,
            ..CorrectorConfig::default()
        };
        let mut model = CorrectorModel::zero(&cfg, false);
        model.b2 = 3.0;
        let out = apply_corrector(&linear, &residual, &mask, &triple_graph(), &model, &cfg);
        assert_eq!(out.values(), linear.values());
    }

    #[test]
    fn observed_cells_pass_through() {
        let t = 4;
        let linear = DataMatrix::new(3, t, vec![1.0; 12]).unwrap();
        let mut residual = DataMatrix::zeros(3, t);
        residual.set(1, 0, 1.0);
        let mask = Mask::from_bits(3, t, vec![0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        let cfg = CorrectorConfig::default();
        let mut model = CorrectorModel::zero(&cfg, false);
        model.b2 = 2.0;
        let out = apply_corrector(&linear, &residual, &mask, &triple_graph(), &model, &cfg);
        // (0,0) is held out with observed co-members: corrected
        assert_eq!(out.get(0, 0), 3.0);
        // every observed cell keeps the linear value
        for i in 0..3 {
            for step in 0..t {
                if mask.is_observed(i, step) {
                    assert_eq!(out.get(i, step), 1.0);
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let cfg = CorrectorConfig {
            hidden: 2,
            edges_per_sensor: 1,
            members_per_edge: 2,
            ..CorrectorConfig::default()
        };
        let mut model = CorrectorModel::zero(&cfg, false);
        model.w1[1][0] = 0.5;
        model.w2[1] = -1.0;
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.starts_with(r#"{"W1":"#), "{json}");
        let back: CorrectorModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
