use std::f64::consts::TAU;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Result, SgpError};
use crate::graph::{build_gaussian_kernel_graph, DistanceMetric, SparseGraph};

const MAX_GRAPH_ATTEMPTS: usize = 5;

/// Parameters of the synthetic diffusion benchmark
///
/// `x_{t+1} = a·x_t + b·mean_{k=1..K}(Ã^k x_t) + c·sin(2πt/p) + ε_t`
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_steps: usize,
    /// Hops that drive the dynamics; 0 disables spatial coupling.
    pub k_true: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub self_coef: f64,
    pub neighbor_coef: f64,
    pub seasonal_coef: f64,
    pub period: usize,
    pub bandwidth: f64,
    pub threshold: f64,
    pub max_neighbors: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 20,
            num_steps: 2000,
            k_true: 2,
            noise_std: 0.5,
            seed: 0,
            self_coef: 0.05,
            neighbor_coef: 0.94,
            seasonal_coef: 1.0,
            period: 24,
            bandwidth: 0.3,
            threshold: 0.1,
            max_neighbors: Some(2),
        }
    }
}

/// Coefficients actually used to generate a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCoefficients {
    pub self_coef: f64,
    pub neighbor_coef: f64,
    pub seasonal_coef: f64,
    pub period: usize,
    pub k_true: usize,
    pub bandwidth: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub coords: Array2<f64>,
    pub coefficients: SynthCoefficients,
    /// Row-normalized operator used by the generator.
    pub operator: SparseGraph,
}

/// Neighbour drive `mean_{k=1..K}(Ã^k x)`; zero when `k_true == 0`.
pub(crate) fn neighbor_drive(op: &SparseGraph, x: &Array1<f64>, k_true: usize) -> Array1<f64> {
    let mut acc = Array1::zeros(x.len());
    if k_true == 0 {
        return acc;
    }
    let mut cur = x.clone().insert_axis(ndarray::Axis(1));
    for _ in 0..k_true {
        cur = op.spmm(cur.view()).expect("operator matches state size");
        acc += &cur.column(0);
    }
    acc / k_true as f64
}

/// Random geometric graph plus a diffusion-driven signal with daily seasonality.
pub fn synth_diffusion(cfg: &SynthConfig) -> Result<SynthOutput> {
    if cfg.num_nodes < 2 {
        return Err(SgpError::Config("synthetic data needs at least 2 nodes".into()));
    }
    if cfg.num_steps < 2 || cfg.period == 0 {
        return Err(SgpError::Config("synthetic data needs ≥2 steps and a positive period".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_nodes;
    let coords = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());

    let mut bandwidth = cfg.bandwidth;
    let mut graph = None;
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let g = build_gaussian_kernel_graph(
            coords.view(),
            bandwidth,
            cfg.threshold,
            cfg.max_neighbors,
            DistanceMetric::Euclidean,
        )?;
        if g.num_edges() > 0 {
            graph = Some(g);
            break;
        }
        bandwidth *= 2.0;
    }
    let graph = graph.ok_or_else(|| {
        SgpError::Config(format!(
            "no edges after {MAX_GRAPH_ATTEMPTS} attempts (last bandwidth {bandwidth})"
        ))
    })?;
    let operator = graph.normalize_asymmetric()?;

    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| SgpError::Config(e.to_string()))?;
    let mut values = Array3::zeros((cfg.num_steps, n, 1));
    let mut x: Array1<f64> = Array1::from_shape_fn(n, |_| noise.sample(&mut rng));
    for t in 0..cfg.num_steps {
        values.slice_mut(ndarray::s![t, .., 0]).assign(&x);
        let seasonal = cfg.seasonal_coef * (TAU * t as f64 / cfg.period as f64).sin();
        let drive = neighbor_drive(&operator, &x, cfg.k_true);
        x = x.mapv(|v| cfg.self_coef * v) + drive.mapv(|v| cfg.neighbor_coef * v);
        x.mapv_inplace(|v| v + seasonal + noise.sample(&mut rng));
    }

    let mut dataset = Dataset::new(values, (0..cfg.num_steps as i64).collect(), graph)?;
    dataset.add_time_of_day(cfg.period as i64)?;
    Ok(SynthOutput {
        dataset,
        coords,
        coefficients: SynthCoefficients {
            self_coef: cfg.self_coef,
            neighbor_coef: cfg.neighbor_coef,
            seasonal_coef: cfg.seasonal_coef,
            period: cfg.period,
            k_true: cfg.k_true,
            bandwidth,
        },
        operator,
    })
}
