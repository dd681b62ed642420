//! Stochastic volatility model definitions and the state transforms that
//! act on them: the latent re-centring `α → γ`, leverage removal and the
//! Lamperti transform, plus Euler simulation of the full system.
//!
//! Every model is a two-dimensional diffusion
//!
//! ```text
//! dX = μ_x(t, X, α) dt + σ₂(X) σ_x(α) (ρ dW + √(1−ρ²) dB)
//! dα = μ_α(α) dt + σ_α(α) dW
//! ```
//!
//! where `σ₂` is the optional state-dependent factor removed by the Lamperti
//! transform. Models without a latent process ignore `α` entirely.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::paths::{Path, RandomStream, TimeGrid};

/// Support of a scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Unbounded,
    Positive,
    /// The open interval (−1, 1).
    Correlation,
}

impl Support {
    pub fn contains(self, v: f64) -> bool {
        v.is_finite()
            && match self {
                Support::Unbounded => true,
                Support::Positive => v > 0.0,
                Support::Correlation => v > -1.0 && v < 1.0,
            }
    }
}

/// Whether a parameter moves the `U`/`Z` time scales (and therefore needs the
/// retrospective update) or only enters drifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Drift,
    TimeScale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub support: Support,
    pub role: ParamRole,
}

impl ParamSpec {
    pub const fn new(name: &'static str, support: Support, role: ParamRole) -> Self {
        Self {
            name,
            support,
            role,
        }
    }
}

/// Named parameter values, each inside its support.
#[derive(Clone, PartialEq)]
pub struct ParamVector {
    specs: Arc<[ParamSpec]>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(specs: Arc<[ParamSpec]>, values: Vec<f64>) -> Result<Self> {
        if specs.len() != values.len() {
            return Err(Error::Contract(format!(
                "{} parameters declared but {} values given",
                specs.len(),
                values.len()
            )));
        }
        for (s, &v) in specs.iter().zip(&values) {
            if !s.support.contains(v) {
                return Err(Error::OutOfSupport {
                    name: s.name.to_string(),
                    value: v,
                });
            }
        }
        Ok(Self { specs, values })
    }

    /// Builds a vector from `(name, value)` pairs, which must name every
    /// parameter exactly once.
    pub fn from_pairs(specs: Arc<[ParamSpec]>, pairs: &[(&str, f64)]) -> Result<Self> {
        let mut values = vec![f64::NAN; specs.len()];
        for &(name, v) in pairs {
            let i = specs
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            values[i] = v;
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Config(format!(
                "missing value for parameter `{}`",
                specs[i].name
            )));
        }
        Self::new(specs, values)
    }

    pub fn specs(&self) -> &Arc<[ParamSpec]> {
        &self.specs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.index_of(name)?])
    }

    /// Copy with one value replaced; fails outside the support.
    pub fn with_value(&self, index: usize, value: f64) -> Result<Self> {
        let spec = &self.specs[index];
        if !spec.support.contains(value) {
            return Err(Error::OutOfSupport {
                name: spec.name.to_string(),
                value,
            });
        }
        let mut values = self.values.clone();
        values[index] = value;
        Ok(Self {
            specs: self.specs.clone(),
            values,
        })
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.specs.iter().map(|s| s.name).zip(&self.values))
            .finish()
    }
}

/// State-dependent volatility factor `σ₂(x) = x^ψ` and its Lamperti transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateVol {
    /// `σ₂ ≡ 1`; the transform is the identity.
    Unit,
    /// `σ₂(x) = x^ψ` on `x > 0`. `ψ = 1` gives `h = log`.
    Power { psi: f64 },
}

impl StateVol {
    pub fn sigma2(self, x: f64) -> f64 {
        match self {
            StateVol::Unit => 1.0,
            StateVol::Power { psi } => x.powf(psi),
        }
    }

    pub fn sigma2_derivative(self, x: f64) -> f64 {
        match self {
            StateVol::Unit => 0.0,
            StateVol::Power { psi } => psi * x.powf(psi - 1.0),
        }
    }

    pub fn in_domain(self, x: f64) -> bool {
        match self {
            StateVol::Unit => x.is_finite(),
            StateVol::Power { .. } => x.is_finite() && x > 0.0,
        }
    }

    /// `h` with `h' = 1/σ₂`.
    pub fn forward(self, x: f64) -> f64 {
        match self {
            StateVol::Unit => x,
            StateVol::Power { psi: 1.0 } => x.ln(),
            StateVol::Power { psi } => x.powf(1.0 - psi) / (1.0 - psi),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            StateVol::Unit => y,
            StateVol::Power { psi: 1.0 } => y.exp(),
            StateVol::Power { psi } => ((1.0 - psi) * y).powf(1.0 / (1.0 - psi)),
        }
    }

    /// `log |h'(x)| = −log σ₂(x)`.
    pub fn log_jacobian(self, x: f64) -> f64 {
        -self.sigma2(x).ln()
    }
}

/// Map from the latent `α` to the unit-volatility, zero-started `γ`.
///
/// `β = h(α)` with `∂h/∂α = 1/σ_α` and `γ = β − β₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentTransform {
    /// Constant latent volatility `σ_α = params[scale]`: `γ = (α − α₀)/σ`.
    Affine { scale: usize },
}

impl LatentTransform {
    pub fn h(&self, alpha: f64, p: &ParamVector) -> f64 {
        match *self {
            LatentTransform::Affine { scale } => alpha / p[scale],
        }
    }

    pub fn h_inv(&self, beta: f64, p: &ParamVector) -> f64 {
        match *self {
            LatentTransform::Affine { scale } => beta * p[scale],
        }
    }

    pub fn to_gamma(&self, alpha: f64, alpha0: f64, p: &ParamVector) -> f64 {
        match *self {
            LatentTransform::Affine { scale } => (alpha - alpha0) / p[scale],
        }
    }

    pub fn to_alpha(&self, gamma: f64, alpha0: f64, p: &ParamVector) -> f64 {
        match *self {
            LatentTransform::Affine { scale } => alpha0 + p[scale] * gamma,
        }
    }

    /// Drift of `γ`: `μ_α/σ_α − ½σ_α'` evaluated at `α(γ)`.
    pub fn gamma_drift(
        &self,
        model: &dyn DiffusionModel,
        gamma: f64,
        alpha0: f64,
        p: &ParamVector,
    ) -> f64 {
        let alpha = self.to_alpha(gamma, alpha0, p);
        match *self {
            LatentTransform::Affine { scale } => model.drift_alpha(alpha, p) / p[scale],
        }
    }
}

/// Drift and volatility bundle of a (possibly stochastic-volatility) diffusion.
pub trait DiffusionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn param_specs(&self) -> Arc<[ParamSpec]>;

    /// Drift of the observed process in its native coordinates.
    fn drift_x(&self, t: f64, x: f64, alpha: f64, p: &ParamVector) -> f64;

    /// Volatility scale `σ_x(α)` multiplying `σ₂(x)`.
    fn vol_x(&self, alpha: f64, p: &ParamVector) -> f64;

    fn drift_alpha(&self, _alpha: f64, _p: &ParamVector) -> f64 {
        0.0
    }

    fn vol_alpha(&self, _alpha: f64, _p: &ParamVector) -> f64 {
        0.0
    }

    /// `None` for constant-volatility models.
    fn latent(&self) -> Option<LatentTransform> {
        None
    }

    /// Index of `α₀`, the latent value at the first observation time.
    fn alpha0_index(&self) -> Option<usize> {
        None
    }

    /// Correlation between the driving noises of `X` and `α`.
    fn leverage(&self, _p: &ParamVector) -> f64 {
        0.0
    }

    fn state_vol(&self) -> StateVol {
        StateVol::Unit
    }

    /// Crude data-driven starting values, as `(index, value)` pairs; `y` is
    /// already in Lamperti coordinates.
    fn moment_init(&self, _times: &[f64], _y: &[f64]) -> Vec<(usize, f64)> {
        Vec::new()
    }
}

impl<'a> dyn DiffusionModel + 'a {
    pub fn has_latent(&self) -> bool {
        self.latent().is_some()
    }

    pub fn alpha0(&self, p: &ParamVector) -> f64 {
        self.alpha0_index().map_or(0.0, |i| p[i])
    }

    /// Drift of the Lamperti-transformed state `ẋ = h(x)`:
    /// `μ(x)/σ₂(x) − ½ σ_x(α)² σ₂'(x)`.
    pub fn transformed_drift(&self, t: f64, xdot: f64, alpha: f64, p: &ParamVector) -> f64 {
        match self.state_vol() {
            StateVol::Unit => self.drift_x(t, xdot, alpha, p),
            sv => {
                let x = sv.inverse(xdot);
                let s1 = self.vol_x(alpha, p);
                self.drift_x(t, x, alpha, p) / sv.sigma2(x)
                    - 0.5 * s1 * s1 * sv.sigma2_derivative(x)
            }
        }
    }
}

pub const CONST_VOL_SCALAR: &str = "const-vol-scalar";
pub const OU_SV_LEVERAGE: &str = "ou-sv-leverage";
pub const TBILL_LOGSV: &str = "tbill-logsv";

/// Looks a model up by its registry name.
pub fn model_by_name(name: &str) -> Result<Arc<dyn DiffusionModel>> {
    match name {
        CONST_VOL_SCALAR => Ok(Arc::new(ConstVolScalar::new())),
        OU_SV_LEVERAGE => Ok(Arc::new(OuSvLeverage::new())),
        TBILL_LOGSV => Ok(Arc::new(TbillLogSv::new())),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub fn registered_models() -> [&'static str; 3] {
    [CONST_VOL_SCALAR, OU_SV_LEVERAGE, TBILL_LOGSV]
}

fn mean_sq_increment_rate(times: &[f64], y: &[f64]) -> f64 {
    let n = times.len().saturating_sub(1).max(1) as f64;
    let s: f64 = times
        .windows(2)
        .zip(y.windows(2))
        .map(|(t, v)| (v[1] - v[0]).powi(2) / (t[1] - t[0]))
        .sum();
    (s / n).max(1e-12)
}

/// `dX = (θ₀ − θ₁X) dt + σ dW`.
#[derive(Debug, Clone)]
pub struct ConstVolScalar {
    specs: Arc<[ParamSpec]>,
}

impl ConstVolScalar {
    pub const THETA0: usize = 0;
    pub const THETA1: usize = 1;
    pub const SIGMA: usize = 2;

    pub fn new() -> Self {
        Self {
            specs: Arc::from(vec![
                ParamSpec::new("theta0", Support::Unbounded, ParamRole::Drift),
                ParamSpec::new("theta1", Support::Unbounded, ParamRole::Drift),
                ParamSpec::new("sigma", Support::Positive, ParamRole::TimeScale),
            ]),
        }
    }
}

impl Default for ConstVolScalar {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffusionModel for ConstVolScalar {
    fn name(&self) -> &'static str {
        CONST_VOL_SCALAR
    }

    fn param_specs(&self) -> Arc<[ParamSpec]> {
        self.specs.clone()
    }

    fn drift_x(&self, _t: f64, x: f64, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::THETA0] - p[Self::THETA1] * x
    }

    fn vol_x(&self, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::SIGMA]
    }

    fn moment_init(&self, times: &[f64], y: &[f64]) -> Vec<(usize, f64)> {
        vec![(Self::SIGMA, mean_sq_increment_rate(times, y).sqrt())]
    }
}

/// Mean-reverting log-volatility model with leverage:
///
/// ```text
/// dX = κ_x(μ_x − X) dt + exp(α/2)(ρ dW + √(1−ρ²) dB)
/// dα = κ_α(μ_α − α) dt + σ dW
/// ```
#[derive(Debug, Clone)]
pub struct OuSvLeverage {
    specs: Arc<[ParamSpec]>,
}

impl OuSvLeverage {
    pub const KAPPA_X: usize = 0;
    pub const MU_X: usize = 1;
    pub const KAPPA_ALPHA: usize = 2;
    pub const MU_ALPHA: usize = 3;
    pub const SIGMA: usize = 4;
    pub const RHO: usize = 5;
    pub const ALPHA0: usize = 6;

    pub fn new() -> Self {
        use ParamRole::*;
        Self {
            specs: Arc::from(vec![
                ParamSpec::new("kappa_x", Support::Positive, Drift),
                ParamSpec::new("mu_x", Support::Unbounded, Drift),
                ParamSpec::new("kappa_alpha", Support::Positive, Drift),
                ParamSpec::new("mu_alpha", Support::Unbounded, Drift),
                ParamSpec::new("sigma", Support::Positive, TimeScale),
                ParamSpec::new("rho", Support::Correlation, TimeScale),
                ParamSpec::new("alpha0", Support::Unbounded, TimeScale),
            ]),
        }
    }
}

impl Default for OuSvLeverage {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffusionModel for OuSvLeverage {
    fn name(&self) -> &'static str {
        OU_SV_LEVERAGE
    }

    fn param_specs(&self) -> Arc<[ParamSpec]> {
        self.specs.clone()
    }

    fn drift_x(&self, _t: f64, x: f64, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::KAPPA_X] * (p[Self::MU_X] - x)
    }

    fn vol_x(&self, alpha: f64, _p: &ParamVector) -> f64 {
        (0.5 * alpha).exp()
    }

    fn drift_alpha(&self, alpha: f64, p: &ParamVector) -> f64 {
        p[Self::KAPPA_ALPHA] * (p[Self::MU_ALPHA] - alpha)
    }

    fn vol_alpha(&self, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::SIGMA]
    }

    fn latent(&self) -> Option<LatentTransform> {
        Some(LatentTransform::Affine { scale: Self::SIGMA })
    }

    fn alpha0_index(&self) -> Option<usize> {
        Some(Self::ALPHA0)
    }

    fn leverage(&self, p: &ParamVector) -> f64 {
        p[Self::RHO]
    }

    fn moment_init(&self, times: &[f64], y: &[f64]) -> Vec<(usize, f64)> {
        let a = mean_sq_increment_rate(times, y).ln();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        vec![
            (Self::KAPPA_X, 0.5),
            (Self::MU_X, mean),
            (Self::KAPPA_ALPHA, 0.5),
            (Self::MU_ALPHA, a),
            (Self::SIGMA, 0.5),
            (Self::RHO, 0.0),
            (Self::ALPHA0, a),
        ]
    }
}

/// Short-rate model with stochastic log-volatility and unit elasticity:
///
/// ```text
/// dr = (θ₀ − θ₁ r) dt + r exp(α/2) dB
/// dα = κ(μ − α) dt + σ dW
/// ```
///
/// Fitted on `X = log r` through the Lamperti hook.
#[derive(Debug, Clone)]
pub struct TbillLogSv {
    specs: Arc<[ParamSpec]>,
}

impl TbillLogSv {
    pub const THETA0: usize = 0;
    pub const THETA1: usize = 1;
    pub const KAPPA: usize = 2;
    pub const MU: usize = 3;
    pub const SIGMA: usize = 4;
    pub const ALPHA0: usize = 5;

    pub fn new() -> Self {
        use ParamRole::*;
        Self {
            specs: Arc::from(vec![
                ParamSpec::new("theta0", Support::Unbounded, Drift),
                ParamSpec::new("theta1", Support::Unbounded, Drift),
                ParamSpec::new("kappa", Support::Positive, Drift),
                ParamSpec::new("mu", Support::Unbounded, Drift),
                ParamSpec::new("sigma", Support::Positive, TimeScale),
                ParamSpec::new("alpha0", Support::Unbounded, TimeScale),
            ]),
        }
    }
}

impl Default for TbillLogSv {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffusionModel for TbillLogSv {
    fn name(&self) -> &'static str {
        TBILL_LOGSV
    }

    fn param_specs(&self) -> Arc<[ParamSpec]> {
        self.specs.clone()
    }

    fn drift_x(&self, _t: f64, r: f64, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::THETA0] - p[Self::THETA1] * r
    }

    fn vol_x(&self, alpha: f64, _p: &ParamVector) -> f64 {
        (0.5 * alpha).exp()
    }

    fn drift_alpha(&self, alpha: f64, p: &ParamVector) -> f64 {
        p[Self::KAPPA] * (p[Self::MU] - alpha)
    }

    fn vol_alpha(&self, _alpha: f64, p: &ParamVector) -> f64 {
        p[Self::SIGMA]
    }

    fn latent(&self) -> Option<LatentTransform> {
        Some(LatentTransform::Affine { scale: Self::SIGMA })
    }

    fn alpha0_index(&self) -> Option<usize> {
        Some(Self::ALPHA0)
    }

    fn state_vol(&self) -> StateVol {
        StateVol::Power { psi: 1.0 }
    }

    fn moment_init(&self, times: &[f64], y: &[f64]) -> Vec<(usize, f64)> {
        let a = mean_sq_increment_rate(times, y).ln();
        vec![
            (Self::THETA0, 0.0),
            (Self::THETA1, 0.0),
            (Self::KAPPA, 1.0),
            (Self::MU, a),
            (Self::SIGMA, 1.0),
            (Self::ALPHA0, a),
        ]
    }
}

/// Euler scheme for the joint `(X, α)` system on `grid`.
///
/// Integration runs in Lamperti coordinates, so positivity-constrained
/// states stay in their domain; the returned `X` path is in native
/// coordinates. For models without a latent process the `α` path is the
/// constant `alpha0`.
pub fn euler_simulate(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    x0: f64,
    alpha0: f64,
    grid: &TimeGrid,
    rng: &mut RandomStream,
) -> Result<(Path, Path)> {
    let sv = model.state_vol();
    if !sv.in_domain(x0) {
        return Err(Error::Contract(format!(
            "initial state {x0} outside the volatility domain"
        )));
    }
    let (xdot, alpha) = euler_simulate_transformed(model, p, sv.forward(x0), alpha0, grid, rng)?;
    let times = grid.times();
    let mut native = Vec::with_capacity(xdot.len());
    for (&t, &v) in times.iter().zip(xdot.values()) {
        let x = sv.inverse(v);
        if !x.is_finite() {
            return Err(Error::Explosion { time: t });
        }
        native.push(x);
    }
    Ok((Path::new(grid.clone(), native)?, alpha))
}

/// Euler scheme in Lamperti coordinates; the starting state is `h(x0)`.
pub fn euler_simulate_transformed(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    xdot0: f64,
    alpha0: f64,
    grid: &TimeGrid,
    rng: &mut RandomStream,
) -> Result<(Path, Path)> {
    let rho = model.leverage(p);
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
    let latent = model.has_latent();
    let times = grid.times();
    let mut xs = Vec::with_capacity(times.len());
    let mut alphas = Vec::with_capacity(times.len());
    let (mut x, mut a) = (xdot0, alpha0);
    xs.push(x);
    alphas.push(a);
    for w in times.windows(2) {
        let (t, dt) = (w[0], w[1] - w[0]);
        let sq = dt.sqrt();
        let dw = sq * rng.normal();
        let db = sq * rng.normal();
        let vx = model.vol_x(a, p);
        let mu = model.transformed_drift(t, x, a, p);
        let next_x = x + mu * dt + vx * (rho * dw + rho_perp * db);
        let next_a = if latent {
            a + model.drift_alpha(a, p) * dt + model.vol_alpha(a, p) * dw
        } else {
            a
        };
        if !next_x.is_finite() || !next_a.is_finite() {
            return Err(Error::Explosion { time: w[1] });
        }
        x = next_x;
        a = next_a;
        xs.push(x);
        alphas.push(a);
    }
    Ok((
        Path::new(grid.clone(), xs)?,
        Path::new(grid.clone(), alphas)?,
    ))
}

/// `γ_t = h(α_t) − h(α_0)` along a path; `α_0` is the path's first value.
pub fn alpha_to_gamma(alpha: &Path, p: &ParamVector, transform: LatentTransform) -> Result<Path> {
    let a0 = alpha.first_value();
    let b0 = transform.h(a0, p);
    let values = alpha
        .values()
        .iter()
        .map(|&a| transform.h(a, p) - b0)
        .collect();
    Path::new(alpha.grid().clone(), values)
}

/// `α_t = α₀ + σ γ_t`.
pub fn gamma_to_alpha(gamma: &Path, sigma: f64, alpha0: f64) -> Result<Path> {
    let values = gamma.values().iter().map(|g| alpha0 + sigma * g).collect();
    Path::new(gamma.grid().clone(), values)
}

/// Returns `(h(x), log|h'(x)|)` for the model's state-dependent volatility.
pub fn lamperti(x: f64, model: &dyn DiffusionModel) -> Result<(f64, f64)> {
    let sv = model.state_vol();
    if !sv.in_domain(x) || !(sv.sigma2(x) > 0.0) {
        return Err(Error::Contract(format!(
            "{x} outside the positivity domain of the state volatility"
        )));
    }
    Ok((sv.forward(x), sv.log_jacobian(x)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeverageDirection {
    /// `X → H`, removing the part driven by the latent noise.
    Forward,
    /// `H → X`.
    Inverse,
}

/// Cumulative leverage offsets `A_i = Σ_{j≤i} ρ σ_x(α_{j−1}) (γ_j − γ_{j−1})`,
/// with `A_0 = 0`; `sigx` holds `σ_x` at each knot (the last entry is unused).
pub(crate) fn leverage_offsets(rho: f64, sigx: &[f64], gamma: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..gamma.len() {
        acc += rho * sigx[i - 1] * (gamma[i] - gamma[i - 1]);
        out.push(acc);
    }
}

/// Removes (forward) or restores (inverse) the leverage term
/// `∫ ρ σ_x(α_s) dW_s`, starting from zero at the path's first time.
///
/// The driving increments `dW` are taken as the increments of `γ` on the
/// path's grid, with `γ` linearly interpolated where the grids differ; the
/// drift of `γ` is accounted for in the drift of `H` by the likelihood.
pub fn leverage_adjust(
    path: &Path,
    gamma: &Path,
    model: &dyn DiffusionModel,
    p: &ParamVector,
    direction: LeverageDirection,
) -> Result<Path> {
    let rho = model.leverage(p);
    if rho == 0.0 {
        return Ok(path.clone());
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Contract(format!("|rho| must be < 1 (got {rho})")));
    }
    let transform = model
        .latent()
        .ok_or_else(|| Error::Contract("leverage requires a latent process".into()))?;
    let times = path.times();
    if gamma.grid().first() > times[0] || gamma.grid().last() < times[times.len() - 1] {
        return Err(Error::InconsistentState(
            "latent grid does not cover the observed path".into(),
        ));
    }
    let alpha0 = model.alpha0(p);
    let g: Vec<f64> = times.iter().map(|&t| gamma.interpolate(t)).collect();
    let sigx: Vec<f64> = g
        .iter()
        .map(|&gi| model.vol_x(transform.to_alpha(gi, alpha0, p), p))
        .collect();
    let mut offsets = Vec::new();
    leverage_offsets(rho, &sigx, &g, &mut offsets);
    let sign = match direction {
        LeverageDirection::Forward => -1.0,
        LeverageDirection::Inverse => 1.0,
    };
    let values = path
        .values()
        .iter()
        .zip(&offsets)
        .map(|(v, a)| v + sign * a)
        .collect();
    Path::new(path.grid().clone(), values)
}
