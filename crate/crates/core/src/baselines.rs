// SPDX-License-Identifier: MIT OR Apache-2.0

//! Comparison methods sharing the evaluation protocol: sensor mean,
//! inverse-distance spatial kNN, and the pairwise-only Tikhonov fit.

use crate::data::{AdjacencyMatrix, DataMatrix, Mask};
use crate::discovery::prefit;
use crate::error::{Error, Result};
use crate::solver::{PropensityModel, TikhonovConfig, TikhonovSolution};

const DISTANCE_EPSILON: f64 = 1e-9;

/// Fill missing cells with the sensor's observed time-mean; rows with no
/// observations fall back to the global observed mean. Observed cells pass
/// through.
pub fn sensor_mean(y_obs: &DataMatrix, mask: &Mask) -> Result<DataMatrix> {
    let n = y_obs.n_sensors();
    let t = y_obs.n_steps();
    let mut global_sum = 0.0;
    let mut global_count = 0usize;
    let mut row_means = vec![None; n];
    for i in 0..n {
        let mut sum = 0.0;
        let mut count = 0usize;
        for step in 0..t {
            if mask.is_observed(i, step) {
                sum += y_obs.get(i, step);
                count += 1;
            }
        }
        global_sum += sum;
        global_count += count;
        if count > 0 {
            row_means[i] = Some(sum / count as f64);
        }
    }
    if global_count == 0 {
        return Err(Error::degenerate("no observed cells anywhere"));
    }
    let global_mean = global_sum / global_count as f64;
    let mut out = y_obs.clone();
    for i in 0..n {
        let fill = row_means[i].unwrap_or(global_mean);
        for step in 0..t {
            if !mask.is_observed(i, step) {
                out.set(i, step, fill);
            }
        }
    }
    Ok(out)
}

/// Fill each missing cell with the inverse-distance-weighted mean of the k
/// nearest sensors observed at the same step ("nearest" by raw distance,
/// ties toward lower index). Steps with no observed sensor fall back to the
/// sensor-mean fill for those cells.
pub fn knn_spatial(
    y_obs: &DataMatrix,
    mask: &Mask,
    distances: &DataMatrix,
    k: usize,
) -> Result<DataMatrix> {
    let n = y_obs.n_sensors();
    let t = y_obs.n_steps();
    if distances.n_sensors() != n || distances.n_steps() != n {
        return Err(Error::invalid("distance matrix shape does not match data"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let fallback = sensor_mean(y_obs, mask)?;
    let mut out = y_obs.clone();

    // neighbour order per sensor, nearest first
    let order: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                distances
                    .get(i, a)
                    .partial_cmp(&distances.get(i, b))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            others
        })
        .collect();

    for i in 0..n {
        for step in 0..t {
            if mask.is_observed(i, step) {
                continue;
            }
            let mut weight_sum = 0.0;
            let mut value_sum = 0.0;
            let mut used = 0usize;
            for &j in &order[i] {
                if !mask.is_observed(j, step) {
                    continue;
                }
                let w = 1.0 / distances.get(i, j).max(DISTANCE_EPSILON);
                weight_sum += w;
                value_sum += w * y_obs.get(j, step);
                used += 1;
                if used == k {
                    break;
                }
            }
            if used == 0 {
                out.set(i, step, fallback.get(i, step));
            } else {
                out.set(i, step, value_sum / weight_sum);
            }
        }
    }
    Ok(out)
}

/// Pairwise-only Tikhonov baseline: exactly the discovery pre-fit (no
/// hypergraph term, no corrector).
pub fn tikh_graph(
    y_obs: &DataMatrix,
    mask: &Mask,
    propensity: &PropensityModel,
    adjacency: &AdjacencyMatrix,
    cfg: &TikhonovConfig,
) -> Result<TikhonovSolution> {
    let (solution, _) = prefit(y_obs, mask, propensity, adjacency, cfg)?;
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mask, MissingnessSpec, Regime};
    use crate::rng::SplitMix64;

    #[test]
    fn sensor_mean_row_and_global_fills() {
        let y = DataMatrix::new(
            2,
            3,
            vec![
                2.0, 4.0, 0.0, // row 0: missing at t=2
                7.0, 7.0, 7.0, // row 1: fully missing
            ],
        )
        .unwrap();
        let mask = Mask::from_bits(2, 3, vec![1, 1, 0, 0, 0, 0]).unwrap();
        let out = sensor_mean(&y, &mask).unwrap();
        assert_eq!(out.get(0, 2), 3.0);
        for step in 0..3 {
            assert_eq!(out.get(1, step), 3.0); // global observed mean
        }
        // observed cells untouched
        assert_eq!(out.get(0, 0), 2.0);
    }

    #[test]
    fn sensor_mean_fully_observed_passthrough() {
        let y = DataMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = sensor_mean(&y, &Mask::all_observed(2, 2)).unwrap();
        assert_eq!(out.values(), y.values());
    }

    #[test]
    fn knn_equidistant_neighbours_average() {
        let y = DataMatrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let mask = Mask::from_bits(3, 1, vec![0, 1, 1]).unwrap();
        let d = DataMatrix::new(
            3,
            3,
            vec![
                0.0, 2.0, 2.0, //
                2.0, 0.0, 4.0, //
                2.0, 4.0, 0.0,
            ],
        )
        .unwrap();
        let out = knn_spatial(&y, &mask, &d, 2).unwrap();
        assert!((out.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn knn_single_neighbour_copies_value() {
        let y = DataMatrix::new(2, 1, vec![0.0, 5.0]).unwrap();
        let mask = Mask::from_bits(2, 1, vec![0, 1]).unwrap();
        let d = DataMatrix::new(2, 2, vec![0.0, 3.0, 3.0, 0.0]).unwrap();
        let out = knn_spatial(&y, &mask, &d, 5).unwrap();
        assert_eq!(out.get(0, 0), 5.0);
    }

    #[test]
    fn knn_falls_back_to_sensor_mean() {
        // nobody observed at t=1: fallback tiles the row mean
        let y = DataMatrix::new(2, 2, vec![4.0, 0.0, 8.0, 0.0]).unwrap();
        let mask = Mask::from_bits(2, 2, vec![1, 0, 1, 0]).unwrap();
        let d = DataMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = knn_spatial(&y, &mask, &d, 1).unwrap();
        assert_eq!(out.get(0, 1), 4.0);
        assert_eq!(out.get(1, 1), 8.0);
    }

    #[test]
    fn knn_with_all_neighbours_and_uniform_distances_is_cross_mean() {
        let n = 5;
        let t = 4;
        let mut rng = SplitMix64::new(3);
        let y = DataMatrix::new(n, t, (0..n * t).map(|_| rng.standard_normal()).collect()).unwrap();
        let spec = MissingnessSpec::new(Regime::CellMar, 0.4, 11);
        let mask = generate_mask(n, t, &spec).unwrap();
        let mut dvals = vec![1.0; n * n];
        for i in 0..n {
            dvals[i * n + i] = 0.0;
        }
        let d = DataMatrix::new(n, n, dvals).unwrap();
        let out = knn_spatial(&y, &mask, &d, n - 1).unwrap();
        for i in 0..n {
            for step in 0..t {
                if mask.is_observed(i, step) {
                    continue;
                }
                let observed: Vec<f64> = (0..n)
                    .filter(|&j| j != i && mask.is_observed(j, step))
                    .map(|j| y.get(j, step))
                    .collect();
                if observed.is_empty() {
                    continue;
                }
                let mean = observed.iter().sum::<f64>() / observed.len() as f64;
                assert!((out.get(i, step) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baselines_leave_observed_cells_untouched_and_finite() {
        let n = 6;
        let t = 30;
        let mut rng = SplitMix64::new(21);
        let y = DataMatrix::new(n, t, (0..n * t).map(|_| 30.0 + rng.standard_normal()).collect()).unwrap();
        let spec = MissingnessSpec::new(Regime::BlockMar, 0.4, 2);
        let mask = generate_mask(n, t, &spec).unwrap();
        let mut dvals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    dvals[i * n + j] = (i as f64 - j as f64).abs();
                }
            }
        }
        let d = DataMatrix::new(n, n, dvals).unwrap();
        for out in [
            sensor_mean(&y, &mask).unwrap(),
            knn_spatial(&y, &mask, &d, 3).unwrap(),
        ] {
            for i in 0..n {
                for step in 0..t {
                    assert!(out.get(i, step).is_finite());
                    if mask.is_observed(i, step) {
                        assert_eq!(out.get(i, step), y.get(i, step));
                    }
                }
            }
        }
    }
}
