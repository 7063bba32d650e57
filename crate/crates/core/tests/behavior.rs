// SPDX-License-Identifier: MIT OR Apache-2.0

//! Behavioral properties of the discovery stage and the end-to-end method
//! that only show up over repeated seeded runs.

use mshl_core::data::{build_adjacency, generate_mask, DataMatrix, Mask, MissingnessSpec, Regime};
use mshl_core::discovery::{discover, DiscoveryConfig};
use mshl_core::evaluation::checks::pipeline_vs_prefit_mae;
use mshl_core::evaluation::mae_heldout;
use mshl_core::baselines::sensor_mean;
use mshl_core::pipeline::PipelineConfig;
use mshl_core::rng::{derive_seed, SplitMix64};
use mshl_core::solver::{estimate_propensity, TikhonovConfig};
use mshl_core::synthetic::{generate_planted, FactorProcess, PlantedEdge, SyntheticSpec};

/// A planted scattered group with a strong white factor is recovered at a
/// high observation rate in nearly every run.
#[test]
fn planted_edge_recovered_with_high_frequency() {
    let n = 30;
    let t = 2016;
    let planted = vec![4usize, 13, 22];
    let tikh = TikhonovConfig::default();
    let disc = DiscoveryConfig::default();
    let seeds = 20;
    let mut hits = 0usize;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            n_sensors: n,
            n_steps: t,
            planted: vec![PlantedEdge::with_betas(planted.clone(), 0.95, 1.05)],
            factor: FactorProcess::Ar1 { phi: 0.0, sigma: 1.0 },
            background_smoothness: 12,
            noise: 0.05,
            topology_aligned: false,
            seed: derive_seed(31, "recovery-freq", seed),
        };
        let (truth, adjacency, _) = generate_planted(&spec).unwrap();
        let mask_spec = MissingnessSpec::new(Regime::CellMar, 0.1, derive_seed(31, "recovery-freq-mask", seed));
        let mask = generate_mask(n, t, &mask_spec).unwrap();
        let mut y = truth.clone();
        y.zero_fill_missing(&mask);
        let propensity = estimate_propensity(&mask, 0.05).unwrap();
        let out = discover(&y, &mask, &propensity, &adjacency, &tikh, &disc).unwrap();
        if out.hypergraph.iter_edges().any(|e| e.members == planted) {
            hits += 1;
        }
    }
    let frequency = hits as f64 / seeds as f64;
    assert!(frequency >= 0.9, "recovery frequency {frequency}");
}

fn accepted_edges(truth: &DataMatrix, adjacency: &mshl_core::data::AdjacencyMatrix, mask: &Mask) -> usize {
    if mask.observed_count() == 0 {
        return 0;
    }
    let propensity = match estimate_propensity(mask, 0.05) {
        Ok(p) => p,
        Err(_) => return 0,
    };
    let mut y = truth.clone();
    y.zero_fill_missing(mask);
    let out = discover(
        &y,
        mask,
        &propensity,
        adjacency,
        &TikhonovConfig::default(),
        &DiscoveryConfig::default(),
    )
    .unwrap();
    out.hypergraph.total_edges()
}

/// Under whole-sensor holdout the accepted-edge count ramps down as the
/// missing rate grows, and never exceeds the scattered-missingness count at
/// the same rate.
#[test]
fn kriging_ramp_is_monotone() {
    let n = 24;
    let t = 192;
    let spec = SyntheticSpec {
        n_sensors: n,
        n_steps: t,
        planted: vec![
            PlantedEdge::with_betas(vec![2, 9, 16], 0.9, 1.1),
            PlantedEdge::with_betas(vec![5, 12, 19, 22], 0.9, 1.1),
        ],
        factor: FactorProcess::Ar1 { phi: 0.0, sigma: 1.0 },
        background_smoothness: 8,
        noise: 0.1,
        topology_aligned: false,
        seed: 77,
    };
    let (truth, adjacency, _) = generate_planted(&spec).unwrap();
    let seeds = 10;
    let mean_count = |regime: Regime, p: f64| -> f64 {
        let mut total = 0usize;
        for seed in 0..seeds {
            let mask_spec = MissingnessSpec::new(regime, p, derive_seed(5, &format!("ramp:{regime}:{p}"), seed));
            let mask = generate_mask(n, t, &mask_spec).unwrap();
            total += accepted_edges(&truth, &adjacency, &mask);
        }
        total as f64 / seeds as f64
    };

    let ramp: Vec<f64> = [0.2, 0.5, 0.8]
        .iter()
        .map(|&p| mean_count(Regime::SensorKriging, p))
        .collect();
    assert!(
        ramp[0] >= ramp[1] && ramp[1] >= ramp[2],
        "kriging ramp not monotone: {ramp:?}"
    );

    let kriging_high = mean_count(Regime::SensorKriging, 0.9);
    let cell_high = mean_count(Regime::CellMar, 0.9);
    assert!(
        kriging_high <= cell_high + 1e-9,
        "kriging {kriging_high} vs cell {cell_high} at p = 0.9"
    );
}

/// Pure-noise data yields at most about one false acceptance per scale.
#[test]
fn pure_noise_accepts_almost_nothing() {
    let n = 30;
    let t = 576;
    let seeds = 20;
    // random sensor geometry for the prior graph
    let mut geo_rng = SplitMix64::new(8);
    let positions: Vec<(f64, f64)> = (0..n).map(|_| (geo_rng.unit_f64(), geo_rng.unit_f64())).collect();
    let mut dvals = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = positions[i].0 - positions[j].0;
                let dy = positions[i].1 - positions[j].1;
                dvals[i * n + j] = (dx * dx + dy * dy).sqrt();
            }
        }
    }
    let adjacency = build_adjacency(&DataMatrix::new(n, n, dvals).unwrap()).unwrap();
    let scales = [2usize, 3, 4, 5];
    let mut accepted_per_scale = vec![0usize; scales.len()];
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(derive_seed(13, "null", seed));
        let truth = DataMatrix::new(n, t, (0..n * t).map(|_| rng.standard_normal()).collect()).unwrap();
        let mask_spec = MissingnessSpec::new(Regime::CellMar, 0.3, derive_seed(13, "null-mask", seed));
        let mask = generate_mask(n, t, &mask_spec).unwrap();
        let mut y = truth.clone();
        y.zero_fill_missing(&mask);
        let propensity = estimate_propensity(&mask, 0.05).unwrap();
        let out = discover(
            &y,
            &mask,
            &propensity,
            &adjacency,
            &TikhonovConfig::default(),
            &DiscoveryConfig::default(),
        )
        .unwrap();
        for (k, &s) in scales.iter().enumerate() {
            accepted_per_scale[k] += out
                .hypergraph
                .scales
                .iter()
                .find(|sc| sc.s == s)
                .map(|sc| sc.edges.len())
                .unwrap_or(0);
        }
    }
    for (k, &s) in scales.iter().enumerate() {
        let mean = accepted_per_scale[k] as f64 / seeds as f64;
        assert!(mean <= 1.0, "scale {s}: mean false acceptances {mean}");
    }
}

/// Where group structure is present under block missingness, the full
/// method beats the pairwise-only fit, which beats the sensor mean.
#[test]
fn method_ordering_on_planted_blocks() {
    let n = 30;
    let t = 288;
    let seeds = 10;
    let cfg = PipelineConfig::default();
    let mut mshl_total = 0.0;
    let mut tikh_total = 0.0;
    let mut mean_total = 0.0;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            n_sensors: n,
            n_steps: t,
            planted: vec![
                PlantedEdge::with_betas(vec![2, 9, 16], 0.9, 1.1),
                PlantedEdge::with_betas(vec![5, 13, 21, 27], 0.9, 1.1),
                PlantedEdge::with_betas(vec![7, 18, 25], 0.9, 1.1),
            ],
            factor: FactorProcess::Ar1 { phi: 0.9, sigma: 1.0 },
            background_smoothness: 8,
            noise: 0.2,
            topology_aligned: false,
            seed: derive_seed(23, "ordering", seed),
        };
        let (truth, adjacency, _) = generate_planted(&spec).unwrap();
        let mask_spec = MissingnessSpec::new(Regime::BlockMar, 0.3, derive_seed(23, "ordering-mask", seed));
        let mask = generate_mask(n, t, &mask_spec).unwrap();
        let (full_mae, prefit_mae, _) = pipeline_vs_prefit_mae(&truth, &adjacency, &mask, &cfg).unwrap();
        let mut y = truth.clone();
        y.zero_fill_missing(&mask);
        let mean_fill = sensor_mean(&y, &mask).unwrap();
        mshl_total += full_mae;
        tikh_total += prefit_mae;
        mean_total += mae_heldout(&mean_fill, &truth, &mask).unwrap();
    }
    assert!(
        mshl_total <= tikh_total && tikh_total <= mean_total,
        "ordering violated: full {mshl_total:.3}, pairwise {tikh_total:.3}, sensor-mean {mean_total:.3}"
    );
}
