// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spatial and temporal smoothing operators, applied matrix-free.
//!
//! The spatial operator combines the graph Laplacian of the prior adjacency
//! with a multi-scale hypergraph Laplacian assembled from weighted per-edge
//! Laplacians. Per-edge Laplacians are never materialized: each edge of size
//! s costs O(s * T) per application.

use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyMatrix, DataMatrix};
use crate::error::{Error, Result};

/// Number of unordered pairs in a group of size `s`.
pub fn pair_count(s: usize) -> usize {
    s * (s - 1) / 2
}

/// Scale weight `1 / C(s, 2)`: a group of any size contributes the same
/// per-pair smoothing energy on coherent patterns.
pub fn scale_weight(s: usize) -> f64 {
    1.0 / pair_count(s) as f64
}

/// A group of sensors constrained to vary together, with its shrinkage
/// weight in (0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub members: Vec<usize>,
    pub weight: f64,
}

impl Hyperedge {
    pub fn new(mut members: Vec<usize>, weight: f64) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        let edge = Self { members, weight };
        edge.validate_standalone()?;
        Ok(edge)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn validate_standalone(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::invalid("hyperedge needs at least two members"));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::invalid(format!(
                "hyperedge weight {} outside (0, 1]",
                self.weight
            )));
        }
        Ok(())
    }

    pub fn validate(&self, n_sensors: usize) -> Result<()> {
        self.validate_standalone()?;
        let mut prev: Option<usize> = None;
        for &m in &self.members {
            if m >= n_sensors {
                return Err(Error::invalid(format!("member {m} outside [0, {n_sensors})")));
            }
            if prev == Some(m) {
                return Err(Error::invalid("duplicate member in hyperedge"));
            }
            prev = Some(m);
        }
        Ok(())
    }

    /// Dense embedded per-edge Laplacian `s*I_e - 1_e 1_e^T`, for oracles.
    pub fn laplacian_dense(&self, n_sensors: usize) -> Vec<f64> {
        let s = self.size() as f64;
        let mut dense = vec![0.0; n_sensors * n_sensors];
        for &i in &self.members {
            for &j in &self.members {
                dense[i * n_sensors + j] = if i == j { s - 1.0 } else { -1.0 };
            }
        }
        dense
    }
}

/// All hyperedges of one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypergraphScale {
    pub s: usize,
    pub edges: Vec<Hyperedge>,
}

/// Per-scale collections of hyperedges. Serializes to
/// `{"scales": [{"s": 3, "edges": [{"members": [..], "weight": w}, ..]}, ..]}`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Hypergraph {
    pub scales: Vec<HypergraphScale>,
}

impl Hypergraph {
    pub fn empty() -> Self {
        Self { scales: Vec::new() }
    }

    pub fn from_edges(edges: Vec<Hyperedge>) -> Result<Self> {
        let mut graph = Self::empty();
        for edge in edges {
            graph.insert(edge)?;
        }
        Ok(graph)
    }

    pub fn insert(&mut self, edge: Hyperedge) -> Result<()> {
        edge.validate_standalone()?;
        let s = edge.size();
        let slot = match self.scales.iter_mut().find(|sc| sc.s == s) {
            Some(slot) => slot,
            None => {
                self.scales.push(HypergraphScale { s, edges: Vec::new() });
                self.scales.sort_by_key(|sc| sc.s);
                self.scales.iter_mut().find(|sc| sc.s == s).unwrap()
            }
        };
        if slot.edges.iter().any(|e| e.members == edge.members) {
            return Err(Error::invalid("duplicate member-set within a scale"));
        }
        slot.edges.push(edge);
        Ok(())
    }

    pub fn total_edges(&self) -> usize {
        self.scales.iter().map(|sc| sc.edges.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_edges() == 0
    }

    pub fn max_scale(&self) -> usize {
        self.scales.iter().map(|sc| sc.s).max().unwrap_or(0)
    }

    pub fn iter_edges(&self) -> impl Iterator<Item = &Hyperedge> {
        self.scales.iter().flat_map(|sc| sc.edges.iter())
    }

    /// Edges containing `sensor`.
    pub fn edges_of(&self, sensor: usize) -> Vec<&Hyperedge> {
        self.iter_edges().filter(|e| e.members.contains(&sensor)).collect()
    }

    pub fn validate(&self, n_sensors: usize) -> Result<()> {
        for scale in &self.scales {
            for edge in &scale.edges {
                edge.validate(n_sensors)?;
                if edge.size() != scale.s {
                    return Err(Error::invalid(format!(
                        "edge of size {} filed under scale {}",
                        edge.size(),
                        scale.s
                    )));
                }
            }
            for (a, edge_a) in scale.edges.iter().enumerate() {
                if scale.edges[a + 1..].iter().any(|e| e.members == edge_a.members) {
                    return Err(Error::invalid("duplicate member-set within a scale"));
                }
            }
        }
        Ok(())
    }

    /// Accumulate `coeff * L_H x` into `out`, edge by edge.
    fn apply_into(&self, x: &[f64], n_steps: usize, coeff: f64, out: &mut [f64]) {
        let mut column_sum = vec![0.0; n_steps];
        for scale in &self.scales {
            let ws = scale_weight(scale.s);
            let size = scale.s as f64;
            for edge in &scale.edges {
                let c = coeff * ws * edge.weight;
                column_sum.iter_mut().for_each(|v| *v = 0.0);
                for &i in &edge.members {
                    let row = &x[i * n_steps..(i + 1) * n_steps];
                    for (acc, &v) in column_sum.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                for &i in &edge.members {
                    let base = i * n_steps;
                    for t in 0..n_steps {
                        out[base + t] += c * (size * x[base + t] - column_sum[t]);
                    }
                }
            }
        }
    }

    /// Dense multi-scale Laplacian `sum_s w_s sum_e w_e L_e`, for oracles.
    pub fn laplacian_dense(&self, n_sensors: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n_sensors * n_sensors];
        for scale in &self.scales {
            let ws = scale_weight(scale.s);
            for edge in &scale.edges {
                let le = edge.laplacian_dense(n_sensors);
                for (d, l) in dense.iter_mut().zip(le) {
                    *d += ws * edge.weight * l;
                }
            }
        }
        dense
    }
}

/// Graph Laplacian `L_G = D_A - A`, stored as adjacency plus degrees.
#[derive(Clone, Debug)]
pub struct GraphLaplacian {
    n_sensors: usize,
    adjacency: Vec<f64>,
    degrees: Vec<f64>,
}

impl GraphLaplacian {
    pub fn from_adjacency(a: &AdjacencyMatrix) -> Self {
        let n = a.n_sensors();
        let mut adjacency = Vec::with_capacity(n * n);
        for i in 0..n {
            adjacency.extend_from_slice(a.row(i));
        }
        Self {
            n_sensors: n,
            adjacency,
            degrees: a.degrees(),
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    /// Accumulate `coeff * L_G x` into `out`.
    fn apply_into(&self, x: &[f64], n_steps: usize, coeff: f64, out: &mut [f64]) {
        let n = self.n_sensors;
        for i in 0..n {
            let deg = self.degrees[i];
            let out_row = &mut out[i * n_steps..(i + 1) * n_steps];
            let x_row = &x[i * n_steps..(i + 1) * n_steps];
            for (o, &v) in out_row.iter_mut().zip(x_row) {
                *o += coeff * deg * v;
            }
            for j in 0..n {
                let w = self.adjacency[i * n + j];
                if w == 0.0 {
                    continue;
                }
                let c = coeff * w;
                let x_other = &x[j * n_steps..(j + 1) * n_steps];
                let out_row = &mut out[i * n_steps..(i + 1) * n_steps];
                for (o, &v) in out_row.iter_mut().zip(x_other) {
                    *o -= c * v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_sensors;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dense[i * n + j] = if i == j {
                    self.degrees[i]
                } else {
                    -self.adjacency[i * n + j]
                };
            }
        }
        dense
    }
}

/// First-difference temporal Laplacian: tridiagonal, diagonal
/// `1, 2, ..., 2, 1`, off-diagonal -1. Annihilates constant series.
#[derive(Clone, Copy, Debug)]
pub struct TemporalOperator {
    len: usize,
}

impl TemporalOperator {
    pub fn first_difference(len: usize) -> Self {
        Self { len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Accumulate `coeff * (X L_T)` into `out`, row by row.
    pub(crate) fn apply_into(&self, x: &[f64], n_sensors: usize, coeff: f64, out: &mut [f64]) {
        let t_len = self.len;
        if t_len == 1 {
            return; // single step: zero operator
        }
        for i in 0..n_sensors {
            let row = &x[i * t_len..(i + 1) * t_len];
            let out_row = &mut out[i * t_len..(i + 1) * t_len];
            out_row[0] += coeff * (row[0] - row[1]);
            for t in 1..t_len - 1 {
                out_row[t] += coeff * (2.0 * row[t] - row[t - 1] - row[t + 1]);
            }
            out_row[t_len - 1] += coeff * (row[t_len - 1] - row[t_len - 2]);
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let t = self.len;
        let mut dense = vec![0.0; t * t];
        for k in 0..t {
            let deg = if t == 1 {
                0.0
            } else if k == 0 || k == t - 1 {
                1.0
            } else {
                2.0
            };
            dense[k * t + k] = deg;
            if k + 1 < t {
                dense[k * t + k + 1] = -1.0;
                dense[(k + 1) * t + k] = -1.0;
            }
        }
        dense
    }
}

/// Combined spatial operator `L_G + lambda_hyper * L_H`.
#[derive(Clone, Debug)]
pub struct SpatialOperator {
    pub graph: GraphLaplacian,
    pub hyper: Hypergraph,
    pub lambda_hyper: f64,
}

impl SpatialOperator {
    pub fn new(graph: GraphLaplacian, hyper: Hypergraph, lambda_hyper: f64) -> Self {
        Self {
            graph,
            hyper,
            lambda_hyper,
        }
    }

    pub fn graph_only(graph: GraphLaplacian) -> Self {
        Self {
            graph,
            hyper: Hypergraph::empty(),
            lambda_hyper: 0.0,
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.graph.n_sensors()
    }

    /// Accumulate `coeff * (L_G + lambda_hyper L_H) x` into `out`.
    pub fn apply_into(&self, x: &[f64], n_steps: usize, coeff: f64, out: &mut [f64]) {
        self.graph.apply_into(x, n_steps, coeff, out);
        if self.lambda_hyper != 0.0 && !self.hyper.is_empty() {
            self.hyper.apply_into(x, n_steps, coeff * self.lambda_hyper, out);
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n_sensors();
        let mut dense = self.graph.to_dense();
        if self.lambda_hyper != 0.0 {
            for (d, h) in dense.iter_mut().zip(self.hyper.laplacian_dense(n)) {
                *d += self.lambda_hyper * h;
            }
        }
        dense
    }
}

/// One application of the normal-equation operator:
/// `W (*) X + lambda_s L_S X + lambda_t X L_T + ridge X`, matrix-free.
pub fn apply_normal_operator(
    x: &DataMatrix,
    weights: &DataMatrix,
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    lambda_s: f64,
    lambda_t: f64,
    ridge: f64,
) -> Result<DataMatrix> {
    let n = x.n_sensors();
    let t = x.n_steps();
    if weights.n_sensors() != n || weights.n_steps() != t {
        return Err(Error::invalid("weight grid shape does not match the matrix"));
    }
    if spatial.n_sensors() != n {
        return Err(Error::invalid("spatial operator size does not match the matrix"));
    }
    if temporal.len() != t {
        return Err(Error::invalid("temporal operator length does not match the matrix"));
    }
    let mut out = vec![0.0; n * t];
    apply_normal_into(
        x.values(),
        weights.values(),
        spatial,
        temporal,
        lambda_s,
        lambda_t,
        ridge,
        n,
        t,
        &mut out,
    );
    DataMatrix::new(n, t, out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn apply_normal_into(
    x: &[f64],
    weights: &[f64],
    spatial: &SpatialOperator,
    temporal: &TemporalOperator,
    lambda_s: f64,
    lambda_t: f64,
    ridge: f64,
    n_sensors: usize,
    n_steps: usize,
    out: &mut [f64],
) {
    for ((o, &w), &v) in out.iter_mut().zip(weights).zip(x) {
        *o = (w + ridge) * v;
    }
    if lambda_s != 0.0 {
        spatial.apply_into(x, n_steps, lambda_s, out);
    }
    if lambda_t != 0.0 {
        temporal.apply_into(x, n_sensors, lambda_t, out);
    }
}

/// Within-group Dirichlet energy of `x` on edge `e`: the sum over timesteps
/// of pairwise squared member differences (`raw`), optionally normalized by
/// the scale weight so that groups of different sizes are comparable.
pub fn dirichlet_energy(x: &DataMatrix, edge: &Hyperedge, normalized: bool) -> f64 {
    let t_len = x.n_steps();
    let mut total = 0.0;
    for a in 0..edge.members.len() {
        for b in (a + 1)..edge.members.len() {
            let ra = x.row(edge.members[a]);
            let rb = x.row(edge.members[b]);
            let mut acc = 0.0;
            for t in 0..t_len {
                let d = ra[t] - rb[t];
                acc += d * d;
            }
            total += acc;
        }
    }
    if normalized {
        total * scale_weight(edge.size())
    } else {
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn adjacency(n: usize, weights: Vec<f64>) -> AdjacencyMatrix {
        AdjacencyMatrix::new(n, weights).unwrap()
    }

    fn quadratic_form_spatial(x: &DataMatrix, op: &SpatialOperator) -> f64 {
        let mut out = vec![0.0; x.values().len()];
        op.apply_into(x.values(), x.n_steps(), 1.0, &mut out);
        x.values().iter().zip(out).map(|(&a, b)| a * b).sum()
    }

    #[test]
    fn two_node_graph_laplacian() {
        let a = adjacency(2, vec![0.0, 1.0, 1.0, 0.0]);
        let lg = GraphLaplacian::from_adjacency(&a);
        assert_eq!(lg.to_dense(), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn single_edge_difference_energy() {
        let a = adjacency(2, vec![0.0, 1.0, 1.0, 0.0]);
        let op = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
        let x = DataMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!((quadratic_form_spatial(&x, &op) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn graph_laplacian_kills_constants() {
        let a = adjacency(
            3,
            vec![
                0.0, 2.0, 0.5, //
                2.0, 0.0, 1.0, //
                0.5, 1.0, 0.0,
            ],
        );
        let op = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
        let x = DataMatrix::new(3, 2, vec![3.5; 6]).unwrap();
        assert!(quadratic_form_spatial(&x, &op).abs() < 1e-12);
    }

    #[test]
    fn graph_laplacian_rows_sum_to_zero() {
        let a = adjacency(
            4,
            vec![
                0.0, 1.0, 0.0, 2.0, //
                1.0, 0.0, 3.0, 0.0, //
                0.0, 3.0, 0.0, 0.25, //
                2.0, 0.0, 0.25, 0.0,
            ],
        );
        let dense = GraphLaplacian::from_adjacency(&a).to_dense();
        for i in 0..4 {
            let row_sum: f64 = dense[i * 4..(i + 1) * 4].iter().sum();
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn edge_laplacian_dense_entries() {
        let e = Hyperedge::new(vec![0, 1, 2], 1.0).unwrap();
        let dense = e.laplacian_dense(4);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 } else { -1.0 };
                assert_eq!(dense[i * 4 + j], expected);
            }
        }
        for k in 0..4 {
            assert_eq!(dense[3 * 4 + k], 0.0);
            assert_eq!(dense[k * 4 + 3], 0.0);
        }
    }

    #[test]
    fn edge_laplacian_annihilates_group_indicator() {
        let e = Hyperedge::new(vec![1, 2, 3], 1.0).unwrap();
        // indicator of e times an arbitrary time signal
        let mut x = DataMatrix::zeros(5, 3);
        for &i in &e.members {
            for (t, &c) in [2.0, -1.0, 0.5].iter().enumerate() {
                x.set(i, t, c);
            }
        }
        assert_eq!(dirichlet_energy(&x, &e, false), 0.0);
        assert_eq!(dirichlet_energy(&x, &e, true), 0.0);
    }

    #[test]
    fn one_hot_energy_is_size_minus_one() {
        let e = Hyperedge::new(vec![0, 1, 2], 1.0).unwrap();
        let mut x = DataMatrix::zeros(4, 1);
        x.set(0, 0, 1.0);
        assert_eq!(dirichlet_energy(&x, &e, false), 2.0);
    }

    #[test]
    fn normalized_one_hot_energy_is_two_over_s() {
        for s in [3usize, 4, 5] {
            let e = Hyperedge::new((0..s).collect(), 1.0).unwrap();
            let mut x = DataMatrix::zeros(s, 1);
            x.set(0, 0, 1.0);
            let got = dirichlet_energy(&x, &e, true);
            assert!((got - 2.0 / s as f64).abs() < 1e-15, "s={s} got {got}");
        }
    }

    #[test]
    fn plus_minus_pattern_energy() {
        // two members +1/-1, third 0: s*sum(x^2) - (sum x)^2 = 3*2 - 0 = 6
        let e = Hyperedge::new(vec![0, 1, 2], 1.0).unwrap();
        let mut x = DataMatrix::zeros(3, 1);
        x.set(0, 0, 1.0);
        x.set(1, 0, -1.0);
        assert_eq!(dirichlet_energy(&x, &e, false), 6.0);
    }

    #[test]
    fn scale_weights() {
        assert_eq!(scale_weight(3), 1.0 / 3.0);
        assert_eq!(scale_weight(4), 1.0 / 6.0);
        assert_eq!(scale_weight(5), 1.0 / 10.0);
    }

    #[test]
    fn empty_hypergraph_is_zero_operator() {
        let h = Hypergraph::empty();
        let dense = h.laplacian_dense(3);
        assert!(dense.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pairwise_scale_reduces_to_graph_laplacian() {
        let h = Hypergraph::from_edges(vec![Hyperedge::new(vec![0, 2], 1.0).unwrap()]).unwrap();
        let dense_h = h.laplacian_dense(3);
        let a = adjacency(3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let dense_g = GraphLaplacian::from_adjacency(&a).to_dense();
        for (x, y) in dense_h.iter().zip(dense_g) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn hypergraph_annihilates_all_ones() {
        let h = Hypergraph::from_edges(vec![
            Hyperedge::new(vec![0, 1, 2], 0.8).unwrap(),
            Hyperedge::new(vec![1, 3], 0.6).unwrap(),
            Hyperedge::new(vec![0, 2, 3, 4], 1.0).unwrap(),
        ])
        .unwrap();
        let ones = vec![1.0; 5];
        let mut out = vec![0.0; 5];
        h.apply_into(&ones, 1, 1.0, &mut out);
        for v in out {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn hypergraph_rejects_duplicate_edges_within_scale() {
        let mut h = Hypergraph::empty();
        h.insert(Hyperedge::new(vec![0, 1, 2], 0.9).unwrap()).unwrap();
        assert!(h.insert(Hyperedge::new(vec![2, 1, 0], 0.7).unwrap()).is_err());
    }

    #[test]
    fn hypergraph_json_schema() {
        let h = Hypergraph::from_edges(vec![Hyperedge::new(vec![0, 2], 0.75).unwrap()]).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"{"scales":[{"s":2,"edges":[{"members":[0,2],"weight":0.75}]}]}"#);
        let back: Hypergraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn normal_operator_rejects_shape_mismatch() {
        let x = DataMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        let w = DataMatrix::zeros(2, 2);
        let a = adjacency(2, vec![0.0, 1.0, 1.0, 0.0]);
        let spatial = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
        let temporal = TemporalOperator::first_difference(3);
        assert!(apply_normal_operator(&x, &w, &spatial, &temporal, 1.0, 1.0, 0.1).is_err());
        let w_ok = DataMatrix::zeros(2, 3);
        let temporal_bad = TemporalOperator::first_difference(4);
        assert!(apply_normal_operator(&x, &w_ok, &spatial, &temporal_bad, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn normal_operator_ridge_only() {
        let x = DataMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = DataMatrix::zeros(2, 2);
        let a = adjacency(2, vec![0.0, 1.0, 1.0, 0.0]);
        let spatial = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
        let temporal = TemporalOperator::first_difference(2);
        let out = apply_normal_operator(&x, &w, &spatial, &temporal, 0.0, 0.0, 0.5).unwrap();
        for (got, want) in out.values().iter().zip([0.5, 1.0, 1.5, 2.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn normal_operator_joint_kernel_on_constants() {
        let x = DataMatrix::new(3, 4, vec![2.0; 12]).unwrap();
        let w = DataMatrix::zeros(3, 4);
        let a = adjacency(3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let h = Hypergraph::from_edges(vec![Hyperedge::new(vec![0, 1, 2], 1.0).unwrap()]).unwrap();
        let spatial = SpatialOperator::new(GraphLaplacian::from_adjacency(&a), h, 2.0);
        let temporal = TemporalOperator::first_difference(4);
        let out = apply_normal_operator(&x, &w, &spatial, &temporal, 1.0, 20.0, 0.0).unwrap();
        for &v in out.values() {
            assert!(v.abs() < 1e-12);
        }
    }

    /// Dense reference for the normal operator, built from Kronecker
    /// structure; independent of the streaming apply path.
    #[allow(clippy::too_many_arguments)]
    fn dense_normal_matvec(
        x: &[f64],
        w: &[f64],
        spatial: &SpatialOperator,
        temporal: &TemporalOperator,
        lambda_s: f64,
        lambda_t: f64,
        ridge: f64,
        n: usize,
        t: usize,
    ) -> Vec<f64> {
        let ls = spatial.to_dense();
        let lt = temporal.to_dense();
        let mut out = vec![0.0; n * t];
        for i in 0..n {
            for step in 0..t {
                let mut acc = (w[i * t + step] + ridge) * x[i * t + step];
                for j in 0..n {
                    acc += lambda_s * ls[i * n + j] * x[j * t + step];
                }
                for step2 in 0..t {
                    acc += lambda_t * lt[step2 * t + step] * x[i * t + step2];
                }
                out[i * t + step] = acc;
            }
        }
        out
    }

    #[test]
    fn normal_operator_matches_dense_oracle() {
        let mut rng = crate::rng::SplitMix64::new(42);
        for trial in 0..24 {
            let n = 1 + rng.index(8);
            let t = 1 + rng.index(64 / n);
            let mut aw = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = rng.unit_f64();
                    aw[i * n + j] = v;
                    aw[j * n + i] = v;
                }
            }
            let a = adjacency(n, aw);
            let mut h = Hypergraph::empty();
            if n >= 3 {
                let mut members: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut members);
                let size = 2 + rng.index(n.min(5) - 1);
                members.truncate(size);
                h.insert(Hyperedge::new(members, 0.5 + 0.5 * rng.unit_f64()).unwrap())
                    .unwrap();
            }
            let spatial = SpatialOperator::new(GraphLaplacian::from_adjacency(&a), h, 2.0);
            let temporal = TemporalOperator::first_difference(t);
            let x: Vec<f64> = (0..n * t).map(|_| rng.standard_normal()).collect();
            let w: Vec<f64> = (0..n * t).map(|_| rng.unit_f64() * 2.0).collect();
            let xm = DataMatrix::new(n, t, x.clone()).unwrap();
            let wm = DataMatrix::new(n, t, w.clone()).unwrap();
            let got = apply_normal_operator(&xm, &wm, &spatial, &temporal, 1.0, 20.0, 0.02).unwrap();
            let want = dense_normal_matvec(&x, &w, &spatial, &temporal, 1.0, 20.0, 0.02, n, t);
            let scale = want.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let diff = got
                .values()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(diff / scale < 1e-10, "trial {trial}: relative diff {}", diff / scale);
        }
    }

    #[test]
    fn scale_invariance_of_normalized_energy() {
        // the same dispersion pattern replicated at each size gives the same
        // normalized energy; one-hot gives exactly 2/s
        for s in 2..=5usize {
            let e = Hyperedge::new((0..s).collect(), 1.0).unwrap();
            // pattern: first member at 1, rest at 0 -> per-pair energy 2/s
            let mut x = DataMatrix::zeros(s, 1);
            x.set(0, 0, 1.0);
            let normalized = dirichlet_energy(&x, &e, true);
            assert!((normalized - 2.0 / s as f64).abs() < 1e-12);
            // constant pattern: zero at every size
            let c = DataMatrix::new(s, 2, vec![0.37; s * 2]).unwrap();
            assert_eq!(dirichlet_energy(&c, &e, true), 0.0);
        }
    }

    proptest! {
        /// raw energy equals s*sum||x_i||^2 - ||sum x_i||^2 (independent
        /// algebraic route) and is nonnegative
        #[test]
        fn energy_identity(values in proptest::collection::vec(-100.0f64..100.0, 12)) {
            let x = DataMatrix::new(4, 3, values).unwrap();
            let e = Hyperedge::new(vec![0, 1, 3], 1.0).unwrap();
            let got = dirichlet_energy(&x, &e, false);
            let s = e.size() as f64;
            let mut alt = 0.0;
            for t in 0..3 {
                let xs: Vec<f64> = e.members.iter().map(|&i| x.get(i, t)).collect();
                let sum: f64 = xs.iter().sum();
                let sumsq: f64 = xs.iter().map(|v| v * v).sum();
                alt += s * sumsq - sum * sum;
            }
            let scale = got.abs().max(alt.abs()).max(1.0);
            prop_assert!((got - alt).abs() <= 1e-12 * scale);
            prop_assert!(got >= -1e-12 * scale);
        }

        /// the temporal operator annihilates constants and is PSD on samples
        #[test]
        fn temporal_operator_psd(values in proptest::collection::vec(-50.0f64..50.0, 10)) {
            let temporal = TemporalOperator::first_difference(10);
            let mut out = vec![0.0; 10];
            temporal.apply_into(&values, 1, 1.0, &mut out);
            let quad: f64 = values.iter().zip(&out).map(|(a, b)| a * b).sum();
            prop_assert!(quad >= -1e-10);
            let ones = vec![1.0; 10];
            let mut out1 = vec![0.0; 10];
            temporal.apply_into(&ones, 1, 1.0, &mut out1);
            prop_assert!(out1.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn group_pattern_separation_formulas() {
        // graph boundary cost and overlap leakage match direct quadratic forms
        let mut rng = crate::rng::SplitMix64::new(7);
        for _ in 0..20 {
            let n = 6 + rng.index(7); // up to 12
            let mut aw = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(0.6) {
                        let v = rng.unit_f64() * 3.0;
                        aw[i * n + j] = v;
                        aw[j * n + i] = v;
                    }
                }
            }
            let a = adjacency(n, aw);
            let mut h = Hypergraph::empty();
            for _ in 0..4 {
                let size = 2 + rng.index(4);
                let mut members: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut members);
                members.truncate(size);
                let _ = h.insert(Hyperedge::new(members, 0.5 + 0.5 * rng.unit_f64()).unwrap());
            }
            // group pattern on a random member set of size >= 3
            let size = 3 + rng.index(3);
            let mut group: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut group);
            group.truncate(size);
            group.sort_unstable();
            let t_len = 4;
            let signal: Vec<f64> = (0..t_len).map(|_| rng.standard_normal()).collect();
            let mut x = DataMatrix::zeros(n, t_len);
            for &i in &group {
                for (t, &c) in signal.iter().enumerate() {
                    x.set(i, t, c);
                }
            }
            let c_norm: f64 = signal.iter().map(|v| v * v).sum();

            // graph side
            let op = SpatialOperator::graph_only(GraphLaplacian::from_adjacency(&a));
            let got_graph = quadratic_form_spatial(&x, &op);
            let mut boundary = 0.0;
            for &i in &group {
                for j in 0..n {
                    if !group.contains(&j) {
                        boundary += a.weight(i, j);
                    }
                }
            }
            let want_graph = c_norm * boundary;
            assert!((got_graph - want_graph).abs() <= 1e-10 * want_graph.abs().max(1.0));

            // hypergraph side: overlap leakage
            let op_h = SpatialOperator::new(GraphLaplacian::from_adjacency(&a), h.clone(), 1.0);
            let got_hyper = quadratic_form_spatial(&x, &op_h) - got_graph;
            let mut leakage = 0.0;
            for scale in &h.scales {
                for edge in &scale.edges {
                    let overlap = edge.members.iter().filter(|m| group.contains(m)).count() as f64;
                    leakage += scale_weight(scale.s) * edge.weight * overlap * (scale.s as f64 - overlap);
                }
            }
            let want_hyper = c_norm * leakage;
            assert!(
                (got_hyper - want_hyper).abs() <= 1e-10 * want_hyper.abs().max(1.0),
                "leakage mismatch: {got_hyper} vs {want_hyper}"
            );
        }
    }
}
