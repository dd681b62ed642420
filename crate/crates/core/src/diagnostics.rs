//! Posterior summaries, autocorrelation, kernel densities, Kolmogorov–Smirnov
//! tests and the prior-recovery ("getting it right") harness.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Observations;
use crate::error::{Error, Result};
use crate::mcmc::{
    imputation_grid, AcceptRule, AugmentedState, Context, PriorSpec, Sampler, Trace,
    DEFAULT_RW_SCALE,
};
use crate::models::{euler_simulate, DiffusionModel};
use crate::paths::{RandomStream, TimeGrid};

/// Posterior summary of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Whether `value` lies in the central 95% interval of `name`.
    pub fn covers(&self, name: &str, value: f64) -> Option<bool> {
        self.row(name).map(|r| r.q025 <= value && value <= r.q975)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v)
}

pub fn summarize_column(name: &str, draws: &[f64]) -> Result<SummaryRow> {
    if draws.len() < 2 {
        return Err(Error::Degenerate(format!(
            "`{name}` needs at least two draws"
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, var) = mean_var(draws);
    Ok(SummaryRow {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        q025: quantile(&sorted, 0.025),
        median: quantile(&sorted, 0.5),
        q975: quantile(&sorted, 0.975),
    })
}

/// Mean, standard deviation and 2.5/50/97.5% quantiles of every parameter.
pub fn summarize(trace: &Trace) -> Result<SummaryTable> {
    if trace.n_rows() < 2 {
        return Err(Error::Degenerate("trace has fewer than two draws".into()));
    }
    let rows = trace
        .param_names
        .iter()
        .map(|name| summarize_column(name, &trace.column(name).expect("named column")))
        .collect::<Result<_>>()?;
    Ok(SummaryTable { rows })
}

/// Biased sample autocorrelations at lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::Contract(format!(
            "max_lag {max_lag} needs more than {n} draws"
        )));
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>();
    if !(c0 > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok((0..=max_lag).map(|k| autocov(&d, k) / c0).collect())
}

fn autocov(d: &[f64], k: usize) -> f64 {
    d[..d.len() - k]
        .iter()
        .zip(&d[k..])
        .map(|(a, b)| a * b)
        .sum()
}

/// Integrated autocorrelation time `1 + 2 Σ ρ(k)`, truncated by Geyer's
/// initial positive sequence.
pub fn iact(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return Err(Error::Contract(format!(
            "IACT needs at least 100 draws (got {n})"
        )));
    }
    let m = series.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0 = autocov(&d, 0);
    if !(c0 > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocov(&d, 2 * k) + autocov(&d, 2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    Ok((2.0 * sum - 1.0).max(1e-12))
}

/// Silverman's rule-of-thumb bandwidth.
pub fn silverman_bandwidth(series: &[f64]) -> Result<f64> {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Degenerate(
            "kernel density needs two distinct values".into(),
        ));
    }
    let sd = mean_var(series).1.sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (series.len() as f64).powf(-0.2))
}

/// Gaussian kernel density on `grid_points` equally spaced points reaching
/// four bandwidths past the extreme draws.
pub fn kde_export(series: &[f64], grid_points: usize) -> Result<Vec<(f64, f64)>> {
    if grid_points < 2 {
        return Err(Error::Contract(
            "kernel density grid needs at least two points".into(),
        ));
    }
    let h = silverman_bandwidth(series)?;
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (series.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok((0..grid_points)
        .into_par_iter()
        .map(|i| {
            let x = lo + i as f64 * step;
            let s: f64 = series
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            (x, s * norm)
        })
        .collect())
}

/// Statistic and asymptotic p-value of a Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample test of `samples` against the continuous CDF `cdf`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n),
    })
}

/// Two-sample test of equal distributions.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n * m / (n + m)),
    })
}

/// Transition kernel used between the prior draw and the retained draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecoveryKernel {
    /// Full Gibbs sweeps of the sampler.
    Gibbs,
    /// Ignores the data and redraws the parameters from the prior.
    PriorResample,
}

/// Setup of the getting-it-right check.
#[derive(Clone, Debug)]
pub struct RecoverySetup {
    pub n_obs: usize,
    pub dt: f64,
    pub x0: f64,
    pub m: usize,
    pub block_len: usize,
    pub sweeps: usize,
    /// Step sizes by parameter index; `None` uses the default.
    pub rw_scales: Option<Vec<f64>>,
    pub kernel: RecoveryKernel,
    pub accept_rule: AcceptRule,
    pub seed: u64,
}

impl RecoverySetup {
    pub fn new(n_obs: usize, dt: f64, m: usize, sweeps: usize, seed: u64) -> Self {
        Self {
            n_obs,
            dt,
            x0: 0.0,
            m,
            block_len: 1,
            sweeps,
            rw_scales: None,
            kernel: RecoveryKernel::Gibbs,
            accept_rule: AcceptRule::Exact,
            seed,
        }
    }
}

/// One replication: draw θ from the prior, simulate the Euler skeleton on
/// the imputation grid, start at the truth, run the kernel, return θ.
fn recovery_replication(
    model: &Arc<dyn DiffusionModel>,
    prior: &PriorSpec,
    setup: &RecoverySetup,
    rep: u64,
) -> Result<Vec<f64>> {
    let mut rng = RandomStream::new(setup.seed, rep + 1);
    let theta = prior.sample(&mut rng)?;
    let obs_times: Vec<f64> = (0..setup.n_obs).map(|k| k as f64 * setup.dt).collect();
    let grid = TimeGrid::new(imputation_grid(&obs_times, setup.m))?;
    let (x, alpha) = euler_simulate(
        model.as_ref(),
        &theta,
        setup.x0,
        model.alpha0(&theta),
        &grid,
        &mut rng,
    )?;
    let obs = Observations::new(
        obs_times,
        (0..setup.n_obs)
            .map(|k| x.values()[k * (setup.m + 1)])
            .collect(),
    )?;
    let ctx = Context::new(model.clone(), &obs, prior.clone(), setup.m)?
        .with_accept_rule(setup.accept_rule);
    if ctx.knot_times() != grid.times() {
        return Err(Error::InconsistentState(
            "simulation grid differs from the imputation grid".into(),
        ));
    }
    match setup.kernel {
        RecoveryKernel::PriorResample => {
            let mut theta = theta;
            for _ in 0..setup.sweeps {
                theta = prior.sample(&mut rng)?;
            }
            Ok(theta.values().to_vec())
        }
        RecoveryKernel::Gibbs => {
            let alpha = model.has_latent().then_some(&alpha);
            let mut state = AugmentedState::from_true_paths(&ctx, theta, &x, alpha)?;
            let scales = setup
                .rw_scales
                .clone()
                .unwrap_or_else(|| vec![DEFAULT_RW_SCALE; prior.specs().len()]);
            let mut sampler = Sampler::new(&ctx, setup.block_len, scales);
            for _ in 0..setup.sweeps {
                sampler.sweep(&mut state, &ctx, &mut rng)?;
            }
            Ok(state.theta().values().to_vec())
        }
    }
}

/// Getting-it-right validation: KS p-values of the retained draws of each
/// free parameter against its prior, over `replications` independent runs.
pub fn prior_recovery_test(
    model: Arc<dyn DiffusionModel>,
    prior: &PriorSpec,
    setup: &RecoverySetup,
    replications: usize,
) -> Result<Vec<(String, KsResult)>> {
    if setup.n_obs < 2 || setup.m < 1 || !(setup.dt > 0.0) {
        return Err(Error::Config(
            "recovery setup needs two observations, m ≥ 1 and dt > 0".into(),
        ));
    }
    let free: Vec<usize> = (0..prior.specs().len())
        .filter(|&i| !prior.is_fixed(i))
        .collect();
    for &i in &free {
        prior.cdf(i, 0.0)?;
    }
    let draws: Vec<Vec<f64>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| recovery_replication(&model, prior, setup, r))
        .collect::<Result<_>>()?;
    free.iter()
        .map(|&i| {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let ks = ks_one_sample(&col, |v| prior.cdf(i, v).unwrap_or(f64::NAN))?;
            Ok((prior.specs()[i].name.to_string(), ks))
        })
        .collect()
}
