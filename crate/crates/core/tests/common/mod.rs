#![allow(dead_code)]

use std::sync::Arc;

use timechange_sv::mcmc::imputation_grid;
use timechange_sv::models::{euler_simulate, DiffusionModel, OuSvLeverage, ParamVector};
use timechange_sv::{Observations, Path, RandomStream, TimeGrid};

/// Simulated dataset together with the full skeleton on the imputation grid.
pub struct Simulated {
    pub obs: Observations,
    pub x: Path,
    pub alpha: Path,
}

/// Euler simulation on the imputation grid of `n` intervals of length `dt`,
/// observed at every `m + 1`-th knot.
pub fn simulate(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    x0: f64,
    n: usize,
    dt: f64,
    m: usize,
    seed: u64,
) -> Simulated {
    let obs_t: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let grid = TimeGrid::new(imputation_grid(&obs_t, m)).unwrap();
    let mut rng = RandomStream::new(seed, 7);
    let (x, alpha) = euler_simulate(model, p, x0, model.alpha0(p), &grid, &mut rng).unwrap();
    let idx = (0..=n).map(|k| k * (m + 1));
    let obs = Observations::new(
        idx.clone().map(|i| x.times()[i]).collect(),
        idx.map(|i| x.values()[i]).collect(),
    )
    .unwrap();
    Simulated { obs, x, alpha }
}

pub fn ou_truth() -> ParamVector {
    ParamVector::new(
        OuSvLeverage::new().param_specs(),
        vec![0.2, 0.1, 0.3, -0.2, 0.4, -0.5, -0.2],
    )
    .unwrap()
}

pub fn ou_model() -> Arc<dyn DiffusionModel> {
    Arc::new(OuSvLeverage::new())
}

/// `log N(x; mean, var)`.
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}
