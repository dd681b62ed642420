//! Metropolis-within-Gibbs sampler on the time-changed parametrisation.
//!
//! The augmented state holds the parameters, the latent path `γ` on the
//! imputation grid and, per observation interval, the knots of the
//! standardised path `Z`. Each sweep runs
//!
//! 1. independence updates of every interval's `Z` (fresh Brownian motion),
//! 2. half-overlapping Brownian-bridge block updates of `γ`,
//! 3. random-walk updates of the parameters that move the time scale,
//! 4. random-walk updates of the drift parameters,
//! 5. a random-walk update of `α₀`.
//!
//! Whenever a move changes `η`, the Z-times of the imputed points move with
//! it; the missing `Z` values are drawn retrospectively from Brownian
//! bridges between stored knots before the likelihood of the proposal is
//! evaluated. A rejected move leaves the state untouched.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Observations;
use crate::error::{Error, Result};
use crate::likelihood::{
    build_geometry, evaluate_interval, log_augmented_posterior, log_g_interval, lookup_z, Geometry,
    IntervalEval, LogLikBreakdown,
};
use crate::models::{lamperti, DiffusionModel, ParamRole, ParamSpec, ParamVector, Support};
use crate::paths::{bridge_moments, Path, RandomStream, TimeGrid};
use crate::timechange::refine_sorted;

/// Prior of a single parameter. All priors are flat on their range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PriorKind {
    /// Improper flat prior on the parameter's support.
    Flat,
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// The parameter is held at this value and never updated.
    Fixed {
        value: f64,
    },
}

/// Independent flat priors, one per model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    specs: Arc<[ParamSpec]>,
    kinds: Vec<PriorKind>,
}

impl PriorSpec {
    pub fn flat(specs: Arc<[ParamSpec]>) -> Self {
        let kinds = vec![PriorKind::Flat; specs.len()];
        Self { specs, kinds }
    }

    pub fn new(specs: Arc<[ParamSpec]>, kinds: Vec<PriorKind>) -> Result<Self> {
        if kinds.len() != specs.len() {
            return Err(Error::Config(format!(
                "{} priors for {} parameters",
                kinds.len(),
                specs.len()
            )));
        }
        let mut out = Self::flat(specs);
        for (i, k) in kinds.into_iter().enumerate() {
            out.set(i, k)?;
        }
        Ok(out)
    }

    /// Replaces the prior of the parameter called `name`.
    pub fn with(mut self, name: &str, kind: PriorKind) -> Result<Self> {
        let i = self
            .specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.set(i, kind)?;
        Ok(self)
    }

    fn set(&mut self, i: usize, kind: PriorKind) -> Result<()> {
        let spec = &self.specs[i];
        let bad = |msg: String| Error::Config(format!("prior of `{}`: {msg}", spec.name));
        match kind {
            PriorKind::Flat => {}
            PriorKind::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(bad(format!("empty range [{lo}, {hi}]")));
                }
                let mid = 0.5 * (lo + hi);
                if !spec.support.contains(mid) {
                    return Err(bad(format!("range [{lo}, {hi}] misses the support")));
                }
            }
            PriorKind::Fixed { value } => {
                if !spec.support.contains(value) {
                    return Err(bad(format!("fixed value {value} outside the support")));
                }
            }
        }
        self.kinds[i] = kind;
        Ok(())
    }

    pub fn specs(&self) -> &Arc<[ParamSpec]> {
        &self.specs
    }

    pub fn kinds(&self) -> &[PriorKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> PriorKind {
        self.kinds[i]
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        matches!(self.kinds[i], PriorKind::Fixed { .. })
    }

    /// Every free parameter has a bounded range.
    pub fn is_proper(&self) -> bool {
        self.kinds.iter().all(|k| !matches!(k, PriorKind::Flat))
    }

    pub fn contains(&self, i: usize, v: f64) -> bool {
        self.specs[i].support.contains(v)
            && match self.kinds[i] {
                PriorKind::Flat => true,
                PriorKind::Uniform { lo, hi } => v > lo && v < hi,
                PriorKind::Fixed { value } => v == value,
            }
    }

    /// Log prior density up to a constant: `0` inside, `−∞` outside.
    pub fn log_density(&self, p: &ParamVector) -> f64 {
        let inside = p
            .values()
            .iter()
            .enumerate()
            .all(|(i, &v)| self.contains(i, v));
        if inside {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Prior CDF of a free, bounded parameter.
    pub fn cdf(&self, i: usize, v: f64) -> Result<f64> {
        match self.kinds[i] {
            PriorKind::Uniform { lo, hi } => Ok(((v - lo) / (hi - lo)).clamp(0.0, 1.0)),
            _ => Err(Error::Contract(format!(
                "parameter `{}` has no proper continuous prior",
                self.specs[i].name
            ))),
        }
    }

    /// A natural starting value: fixed values, range midpoints, and for
    /// flat priors 1 on positive supports and 0 elsewhere.
    pub fn midpoint(&self, i: usize) -> f64 {
        match self.kinds[i] {
            PriorKind::Fixed { value } => value,
            PriorKind::Uniform { lo, hi } => 0.5 * (lo + hi),
            PriorKind::Flat => match self.specs[i].support {
                Support::Positive => 1.0,
                Support::Unbounded | Support::Correlation => 0.0,
            },
        }
    }

    pub fn sample(&self, rng: &mut RandomStream) -> Result<ParamVector> {
        let mut values = Vec::with_capacity(self.kinds.len());
        for (i, k) in self.kinds.iter().enumerate() {
            values.push(match *k {
                PriorKind::Fixed { value } => value,
                PriorKind::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
                PriorKind::Flat => {
                    return Err(Error::Contract(format!(
                        "cannot sample the improper prior of `{}`",
                        self.specs[i].name
                    )))
                }
            });
        }
        ParamVector::new(self.specs.clone(), values)
    }
}

/// How a Metropolis–Hastings log ratio becomes an accept decision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum AcceptRule {
    #[default]
    Exact,
    /// Multiplies every log ratio before the decision. Only useful for
    /// checking that validation tests detect a broken sampler.
    Corrupted { log_ratio_scale: f64 },
}

impl AcceptRule {
    fn decide(self, log_ratio: f64, rng: &mut RandomStream) -> bool {
        let lr = match self {
            AcceptRule::Exact => log_ratio,
            AcceptRule::Corrupted { log_ratio_scale } => log_ratio_scale * log_ratio,
        };
        let u = rng.uniform();
        !lr.is_nan() && u.ln() < lr
    }
}

/// Where the chain starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    PriorMidpoint,
    /// Crude moment-based values from the data.
    Moments,
    /// Explicit values; parameters left out start at the prior midpoint.
    Values(BTreeMap<String, f64>),
}

fn default_block_len() -> usize {
    2
}

fn default_thin() -> usize {
    1
}

fn default_adapt() -> bool {
    true
}

/// Sampler settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Interior imputed points per observation interval.
    pub m: usize,
    /// Observation intervals per `γ` block.
    #[serde(default = "default_block_len")]
    pub block_len: usize,
    /// Random-walk step sizes on the transformed scale; default 0.1.
    #[serde(default)]
    pub rw_scales: BTreeMap<String, f64>,
    pub n_iter: usize,
    #[serde(default)]
    pub n_burn: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    /// Tune step sizes towards 30% acceptance during burn-in.
    #[serde(default = "default_adapt")]
    pub adapt: bool,
    #[serde(default)]
    pub init: InitStrategy,
    /// Recompute the posterior from scratch after every accepted move.
    #[serde(default)]
    pub verify_cache: bool,
}

impl SamplerConfig {
    pub fn new(m: usize, n_iter: usize) -> Self {
        Self {
            m,
            block_len: default_block_len(),
            rw_scales: BTreeMap::new(),
            n_iter,
            n_burn: 0,
            thin: 1,
            seed: 0,
            adapt: true,
            init: InitStrategy::PriorMidpoint,
            verify_cache: false,
        }
    }

    pub fn validate(&self, n_intervals: usize) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.block_len < 1 || self.block_len > n_intervals {
            return Err(Error::Config(format!(
                "block_len must lie in 1..={n_intervals} (got {})",
                self.block_len
            )));
        }
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "n_burn ({}) must be below n_iter ({})",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        for (name, &s) in &self.rw_scales {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Config(format!(
                    "step size of `{name}` must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_RW_SCALE: f64 = 0.1;
const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPTANCE: f64 = 0.3;

/// Observation times with `m` equally spaced points inserted in each gap.
pub fn imputation_grid(obs_times: &[f64], m: usize) -> Vec<f64> {
    let mut knots = Vec::with_capacity(obs_times.len().saturating_sub(1) * (m + 1) + 1);
    for w in obs_times.windows(2) {
        let step = (w[1] - w[0]) / (m + 1) as f64;
        knots.extend((0..=m).map(|j| w[0] + j as f64 * step));
    }
    if let Some(&last) = obs_times.last() {
        knots.push(last);
    }
    knots
}

/// Fixed inputs of a chain: model, prior, data and imputation grid.
#[derive(Clone, Debug)]
pub struct Context {
    model: Arc<dyn DiffusionModel>,
    prior: PriorSpec,
    m: usize,
    obs_times: Vec<f64>,
    /// Observations in Lamperti coordinates.
    y: Vec<f64>,
    log_jac: Vec<f64>,
    knots: Vec<f64>,
    accept_rule: AcceptRule,
}

impl Context {
    pub fn new(
        model: Arc<dyn DiffusionModel>,
        data: &Observations,
        prior: PriorSpec,
        m: usize,
    ) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if prior.specs().len() != model.param_specs().len()
            || prior
                .specs()
                .iter()
                .zip(model.param_specs().iter())
                .any(|(a, b)| a.name != b.name)
        {
            return Err(Error::Config(format!(
                "prior does not match the parameters of `{}`",
                model.name()
            )));
        }
        let mut y = Vec::with_capacity(data.len());
        let mut log_jac = Vec::with_capacity(data.n_intervals());
        for (i, &v) in data.values().iter().enumerate() {
            let (h, lj) = lamperti(v, model.as_ref()).map_err(|_| Error::Data {
                line: i + 1,
                message: format!("value {v} outside the domain of `{}`", model.name()),
            })?;
            y.push(h);
            if i > 0 {
                log_jac.push(lj);
            }
        }
        let t = data.times();
        let knots = imputation_grid(t, m);
        if !knots.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidGrid(
                "imputation grid is not strictly increasing".into(),
            ));
        }
        Ok(Self {
            model,
            prior,
            m,
            obs_times: t.to_vec(),
            y,
            log_jac,
            knots,
            accept_rule: AcceptRule::Exact,
        })
    }

    pub fn with_accept_rule(mut self, rule: AcceptRule) -> Self {
        self.accept_rule = rule;
        self
    }

    pub fn model(&self) -> &dyn DiffusionModel {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> &Arc<dyn DiffusionModel> {
        &self.model
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn accept_rule(&self) -> AcceptRule {
        self.accept_rule
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_intervals(&self) -> usize {
        self.obs_times.len() - 1
    }

    pub fn observation_times(&self) -> &[f64] {
        &self.obs_times
    }

    /// Observations in Lamperti coordinates.
    pub fn transformed_values(&self) -> &[f64] {
        &self.y
    }

    /// The full imputation grid, observation times included.
    pub fn knot_times(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_grid(&self) -> TimeGrid {
        TimeGrid::new(self.knots.clone()).expect("validated on construction")
    }

    /// The `m + 2` knots of interval `k`, both observation times included.
    pub fn interval_knots(&self, k: usize) -> &[f64] {
        let w = self.m + 1;
        &self.knots[k * w..=(k + 1) * w]
    }

    pub fn y0(&self, k: usize) -> f64 {
        self.y[k]
    }

    pub fn y1(&self, k: usize) -> f64 {
        self.y[k + 1]
    }

    pub fn log_jac(&self, k: usize) -> f64 {
        self.log_jac[k]
    }

    fn n_knots(&self) -> usize {
        self.knots.len()
    }
}

/// The paths of one interval in the U and Z parametrisations.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalPaths {
    pub y0: f64,
    /// End value of the leverage-adjusted path; equals the observation
    /// when there is no leverage.
    pub y1: f64,
    pub u: Path,
    pub z: Path,
}

/// Parameters, latent path and Z knots, with cached log-density parts.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    theta: ParamVector,
    gamma: Vec<f64>,
    z_times: Vec<Vec<f64>>,
    z_values: Vec<Vec<f64>>,
    evals: Vec<IntervalEval>,
    log_prior: f64,
}

fn gamma_slice<'a>(gamma: &'a [f64], ctx: &Context, k: usize) -> Option<&'a [f64]> {
    if gamma.is_empty() {
        None
    } else {
        let w = ctx.m + 1;
        Some(&gamma[k * w..=(k + 1) * w])
    }
}

impl AugmentedState {
    /// `γ ≡ 0` and `Z ≡ 0`, so the imputed path interpolates the data linearly.
    pub fn initial(ctx: &Context, theta: ParamVector) -> Result<Self> {
        let gamma = if ctx.model().has_latent() {
            vec![0.0; ctx.n_knots()]
        } else {
            Vec::new()
        };
        let mut geom = Geometry::default();
        let n = ctx.n_intervals();
        let mut z_times = Vec::with_capacity(n);
        let mut z_values = Vec::with_capacity(n);
        for k in 0..n {
            build_geometry(
                ctx.model(),
                &theta,
                ctx.interval_knots(k),
                gamma_slice(&gamma, ctx, k),
                ctx.y1(k),
                &mut geom,
            )?;
            z_values.push(vec![0.0; geom.z_times.len()]);
            z_times.push(geom.z_times.clone());
        }
        Self::assemble(ctx, theta, gamma, z_times, z_values)
    }

    /// The state whose imputed paths are the given skeletons on the
    /// imputation grid; `x` is in native coordinates.
    pub fn from_true_paths(
        ctx: &Context,
        theta: ParamVector,
        x: &Path,
        alpha: Option<&Path>,
    ) -> Result<Self> {
        let model = ctx.model();
        if x.times() != ctx.knot_times() {
            return Err(Error::InconsistentState(
                "path is not on the imputation grid".into(),
            ));
        }
        let gamma = match (model.latent(), alpha) {
            (Some(tr), Some(a)) => {
                if a.times() != ctx.knot_times() {
                    return Err(Error::InconsistentState(
                        "alpha is not on the imputation grid".into(),
                    ));
                }
                let a0 = model.alpha0(&theta);
                a.values()
                    .iter()
                    .map(|&v| tr.to_gamma(v, a0, &theta))
                    .collect()
            }
            (Some(_), None) => return Err(Error::Contract("latent path required".into())),
            (None, _) => Vec::new(),
        };
        let mut xl = Vec::with_capacity(x.len());
        for &v in x.values() {
            xl.push(lamperti(v, model)?.0);
        }
        let w = ctx.m + 1;
        let mut geom = Geometry::default();
        let mut z_times = Vec::new();
        let mut z_values = Vec::new();
        for k in 0..ctx.n_intervals() {
            let seg = &xl[k * w..=(k + 1) * w];
            let (y0, y1) = (ctx.y0(k), ctx.y1(k));
            if (seg[0] - y0).abs() > 1e-9 * y0.abs().max(1.0)
                || (seg[w] - y1).abs() > 1e-9 * y1.abs().max(1.0)
            {
                return Err(Error::InconsistentState(format!(
                    "path misses the observations of interval {k}"
                )));
            }
            build_geometry(
                model,
                &theta,
                ctx.interval_knots(k),
                gamma_slice(&gamma, ctx, k),
                y1,
                &mut geom,
            )?;
            let mut zv = Vec::with_capacity(w);
            zv.push(0.0);
            for j in 1..w {
                let u = geom.u[j];
                let chord = y0 + (u / geom.total) * (geom.h_end - y0);
                zv.push((seg[j] - geom.offsets[j] - chord) / (geom.total - u));
            }
            z_times.push(geom.z_times.clone());
            z_values.push(zv);
        }
        Self::assemble(ctx, theta, gamma, z_times, z_values)
    }

    fn assemble(
        ctx: &Context,
        theta: ParamVector,
        gamma: Vec<f64>,
        z_times: Vec<Vec<f64>>,
        z_values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut s = Self {
            log_prior: ctx.prior().log_density(&theta),
            theta,
            gamma,
            z_times,
            z_values,
            evals: Vec::new(),
        };
        s.refresh_cache(ctx)?;
        Ok(s)
    }

    fn refresh_cache(&mut self, ctx: &Context) -> Result<()> {
        let mut geom = Geometry::default();
        let mut zbuf = Vec::new();
        self.evals.clear();
        for k in 0..ctx.n_intervals() {
            let knots = ctx.interval_knots(k);
            let gamma = gamma_slice(&self.gamma, ctx, k);
            build_geometry(ctx.model(), &self.theta, knots, gamma, ctx.y1(k), &mut geom)?;
            lookup_z(
                &self.z_times[k],
                &self.z_values[k],
                &geom.z_times,
                &mut zbuf,
            )?;
            self.evals.push(evaluate_interval(
                ctx.model(),
                &self.theta,
                knots,
                gamma,
                &geom,
                ctx.y0(k),
                ctx.log_jac(k),
                &zbuf,
            )?);
        }
        self.log_prior = ctx.prior().log_density(&self.theta);
        Ok(())
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn n_intervals(&self) -> usize {
        self.z_times.len()
    }

    pub(crate) fn gamma_segment(&self, ctx: &Context, k: usize) -> Option<&[f64]> {
        gamma_slice(&self.gamma, ctx, k)
    }

    pub(crate) fn z_knots(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.z_times[k], &self.z_values[k])
    }

    pub fn gamma_path(&self, ctx: &Context) -> Option<Path> {
        if self.gamma.is_empty() {
            None
        } else {
            Some(Path::new(ctx.knot_grid(), self.gamma.clone()).expect("aligned with the grid"))
        }
    }

    pub fn alpha_path(&self, ctx: &Context) -> Option<Path> {
        let tr = ctx.model().latent()?;
        let a0 = ctx.model().alpha0(&self.theta);
        let values = self
            .gamma
            .iter()
            .map(|&g| tr.to_alpha(g, a0, &self.theta))
            .collect();
        Path::new(ctx.knot_grid(), values).ok()
    }

    /// Stored Z knots of interval `k`.
    pub fn z_path(&self, k: usize) -> Path {
        Path::from_vecs(self.z_times[k].clone(), self.z_values[k].clone())
            .expect("stored knots are valid")
    }

    pub fn interval_paths(&self, ctx: &Context, k: usize) -> Result<IntervalPaths> {
        let mut geom = Geometry::default();
        build_geometry(
            ctx.model(),
            &self.theta,
            ctx.interval_knots(k),
            self.gamma_segment(ctx, k),
            ctx.y1(k),
            &mut geom,
        )?;
        let mut zv = Vec::new();
        lookup_z(&self.z_times[k], &self.z_values[k], &geom.z_times, &mut zv)?;
        let y0 = ctx.y0(k);
        let mut uv: Vec<f64> = (0..zv.len())
            .map(|j| {
                let u = geom.u[j];
                (geom.total - u) * zv[j] + y0 + (u / geom.total) * (geom.h_end - y0)
            })
            .collect();
        uv.push(geom.h_end);
        Ok(IntervalPaths {
            y0,
            y1: geom.h_end,
            u: Path::from_vecs(geom.u.clone(), uv)?,
            z: Path::from_vecs(geom.z_times.clone(), zv)?,
        })
    }

    /// The imputed observed path on the imputation grid, in native coordinates.
    pub fn x_path(&self, ctx: &Context) -> Result<Path> {
        let sv = ctx.model().state_vol();
        let mut geom = Geometry::default();
        let mut values = Vec::with_capacity(ctx.n_knots());
        for k in 0..ctx.n_intervals() {
            let ip = self.interval_paths(ctx, k)?;
            build_geometry(
                ctx.model(),
                &self.theta,
                ctx.interval_knots(k),
                self.gamma_segment(ctx, k),
                ctx.y1(k),
                &mut geom,
            )?;
            let u = ip.u.values();
            let last = if k + 1 == ctx.n_intervals() {
                u.len()
            } else {
                u.len() - 1
            };
            for j in 0..last {
                values.push(sv.inverse(u[j] + geom.offsets[j]));
            }
        }
        Path::new(ctx.knot_grid(), values)
    }

    /// Cached log-density parts.
    pub fn breakdown(&self) -> LogLikBreakdown {
        let log_l_gamma = self.evals.iter().map(|e| e.log_l_gamma).sum();
        let log_g: Vec<f64> = self.evals.iter().map(|e| e.log_g).collect();
        let log_f: Vec<f64> = self.evals.iter().map(|e| e.log_f).collect();
        let total = log_l_gamma
            + log_g.iter().zip(&log_f).map(|(g, f)| g + f).sum::<f64>()
            + self.log_prior;
        LogLikBreakdown {
            log_g,
            log_f,
            log_l_gamma,
            log_prior: self.log_prior,
            total,
        }
    }

    pub fn log_posterior(&self) -> f64 {
        self.evals.iter().map(IntervalEval::sum).sum::<f64>() + self.log_prior
    }

    /// Largest relative discrepancy between the cache and a fresh evaluation.
    pub fn cache_discrepancy(&self, ctx: &Context) -> Result<f64> {
        let fresh = log_augmented_posterior(self, ctx)?;
        let cached = self.breakdown();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let mut worst =
            rel(fresh.total, cached.total).max(rel(fresh.log_l_gamma, cached.log_l_gamma));
        for k in 0..fresh.log_g.len() {
            worst = worst
                .max(rel(fresh.log_g[k], cached.log_g[k]))
                .max(rel(fresh.log_f[k], cached.log_f[k]));
        }
        Ok(worst)
    }

    /// Reveals `Z` at extra Z-times of interval `k`, conditionally on the
    /// stored knots. The posterior is unaffected.
    pub fn insert_z_knots(
        &mut self,
        k: usize,
        times: &[f64],
        rng: &mut RandomStream,
    ) -> Result<()> {
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (t, v, _) = refine_sorted(&self.z_times[k], &self.z_values[k], &sorted, rng)?;
        self.z_times[k] = t;
        self.z_values[k] = v;
        Ok(())
    }

    /// Replaces the stored Z knots of interval `k`; the path must contain
    /// every knot the likelihood needs.
    pub fn replace_z_path(&mut self, ctx: &Context, k: usize, z: &Path) -> Result<()> {
        let old = (
            std::mem::take(&mut self.z_times[k]),
            std::mem::take(&mut self.z_values[k]),
        );
        self.z_times[k] = z.times().to_vec();
        self.z_values[k] = z.values().to_vec();
        if let Err(e) = self.refresh_cache(ctx) {
            self.z_times[k] = old.0;
            self.z_values[k] = old.1;
            self.refresh_cache(ctx)?;
            return Err(e);
        }
        Ok(())
    }
}

/// Outcome of one Metropolis–Hastings step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub accepted: bool,
    /// Log acceptance ratio (`−∞` for proposals outside the prior).
    pub log_ratio: f64,
}

impl Move {
    fn rejected() -> Self {
        Self {
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
        }
    }
}

/// Proposed replacements for a contiguous range of intervals.
struct Candidate {
    first: usize,
    z_times: Vec<Vec<f64>>,
    z_values: Vec<Vec<f64>>,
    evals: Vec<IntervalEval>,
}

/// Rebuilds intervals `range` under `theta` and `gamma`, drawing Z at any
/// new Z-times from the stored path.
fn build_candidate(
    state: &AugmentedState,
    ctx: &Context,
    theta: &ParamVector,
    gamma: &[f64],
    range: std::ops::RangeInclusive<usize>,
    rng: &mut RandomStream,
) -> Result<Candidate> {
    let mut geom = Geometry::default();
    let first = *range.start();
    let mut cand = Candidate {
        first,
        z_times: Vec::new(),
        z_values: Vec::new(),
        evals: Vec::new(),
    };
    for k in range {
        let knots = ctx.interval_knots(k);
        let g = gamma_slice(gamma, ctx, k);
        build_geometry(ctx.model(), theta, knots, g, ctx.y1(k), &mut geom)?;
        let (_, _, zv) = refine_sorted(&state.z_times[k], &state.z_values[k], &geom.z_times, rng)?;
        let e = evaluate_interval(
            ctx.model(),
            theta,
            knots,
            g,
            &geom,
            ctx.y0(k),
            ctx.log_jac(k),
            &zv,
        )?;
        cand.z_times.push(geom.z_times.clone());
        cand.z_values.push(zv);
        cand.evals.push(e);
    }
    Ok(cand)
}

fn candidate_delta(state: &AugmentedState, cand: &Candidate) -> f64 {
    cand.evals
        .iter()
        .enumerate()
        .map(|(i, e)| e.sum() - state.evals[cand.first + i].sum())
        .sum()
}

fn commit(state: &mut AugmentedState, cand: Candidate) {
    let first = cand.first;
    for (i, ((t, v), e)) in cand
        .z_times
        .into_iter()
        .zip(cand.z_values)
        .zip(cand.evals)
        .enumerate()
    {
        state.z_times[first + i] = t;
        state.z_values[first + i] = v;
        state.evals[first + i] = e;
    }
}

fn check_cache(state: &AugmentedState, ctx: &Context) -> Result<()> {
    let d = state.cache_discrepancy(ctx)?;
    if d > 1e-8 {
        return Err(Error::InconsistentState(format!(
            "cached posterior drifted by {d:e}"
        )));
    }
    Ok(())
}

/// Independence update of interval `k`'s Z knots from standard Brownian motion.
pub fn update_z_path(
    state: &mut AugmentedState,
    ctx: &Context,
    k: usize,
    rng: &mut RandomStream,
) -> Result<Move> {
    let mut geom = Geometry::default();
    let knots = ctx.interval_knots(k);
    build_geometry(
        ctx.model(),
        &state.theta,
        knots,
        state.gamma_segment(ctx, k),
        ctx.y1(k),
        &mut geom,
    )?;
    let mut z = Vec::with_capacity(geom.z_times.len());
    z.push(0.0);
    for w in geom.z_times.windows(2) {
        z.push(z[z.len() - 1] + (w[1] - w[0]).sqrt() * rng.normal());
    }
    let log_g = match log_g_interval(ctx.model(), &state.theta, knots, &geom, ctx.y0(k), &z) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => {
            rng.uniform();
            return Ok(Move::rejected());
        }
        Err(e) => return Err(e),
    };
    let log_ratio = log_g - state.evals[k].log_g;
    let accepted = ctx.accept_rule.decide(log_ratio, rng);
    if accepted {
        state.z_times[k] = geom.z_times;
        state.z_values[k] = z;
        state.evals[k].log_g = log_g;
    }
    Ok(Move {
        accepted,
        log_ratio,
    })
}

/// Knot-index ranges `(a, b)` of the `γ` blocks: `block_len` intervals
/// long, each starting half a block after the previous one. The last block
/// ends at the final knot and has a free end.
pub fn gamma_blocks(n_intervals: usize, m: usize, block_len: usize) -> Vec<(usize, usize)> {
    let last = n_intervals * (m + 1);
    let len = (block_len * (m + 1)).max(1);
    let stride = (len / 2).max(1);
    let mut out = Vec::new();
    let mut a = 0;
    loop {
        let b = (a + len).min(last);
        out.push((a, b));
        if b == last {
            break;
        }
        a += stride;
    }
    out
}

/// Brownian-bridge update of `γ` on knots `a..=b` (interior knots only,
/// unless `b` is the last knot, which is then free).
pub fn update_gamma_block(
    state: &mut AugmentedState,
    ctx: &Context,
    block: (usize, usize),
    rng: &mut RandomStream,
) -> Result<Move> {
    let (a, b) = block;
    let last = ctx.n_knots() - 1;
    if state.gamma.is_empty() || a >= b || b > last {
        return Err(Error::Contract(format!("invalid gamma block ({a}, {b})")));
    }
    let free_end = b == last;
    let t = ctx.knot_times();
    let mut gamma = state.gamma.clone();
    let b_res = if free_end { b } else { b - 1 };
    for i in a + 1..=b_res {
        gamma[i] = if free_end {
            gamma[i - 1] + (t[i] - t[i - 1]).sqrt() * rng.normal()
        } else {
            let (mean, var) = bridge_moments(t[i - 1], gamma[i - 1], t[b], gamma[b], t[i])?;
            mean + var.sqrt() * rng.normal()
        };
    }
    let w = ctx.m + 1;
    let k_lo = a / w;
    let k_hi = (b_res / w).min(ctx.n_intervals() - 1);
    let cand = match build_candidate(state, ctx, &state.theta, &gamma, k_lo..=k_hi, rng) {
        Ok(c) => c,
        Err(e) if e.is_numerical() => {
            rng.uniform();
            return Ok(Move::rejected());
        }
        Err(e) => return Err(e),
    };
    let log_ratio = candidate_delta(state, &cand);
    let accepted = ctx.accept_rule.decide(log_ratio, rng);
    if accepted {
        state.gamma[a + 1..=b_res].copy_from_slice(&gamma[a + 1..=b_res]);
        commit(state, cand);
    }
    Ok(Move {
        accepted,
        log_ratio,
    })
}

/// Metropolis–Hastings step to `value` for parameter `index`, with
/// `log_q_correction = log q(θ | θ*) − log q(θ* | θ)`.
///
/// Every interval is rebuilt and accepted or rejected jointly; Z values at
/// new Z-times are drawn retrospectively.
pub fn propose_param_value(
    state: &mut AugmentedState,
    ctx: &Context,
    index: usize,
    value: f64,
    log_q_correction: f64,
    rng: &mut RandomStream,
) -> Result<Move> {
    if !ctx.prior().contains(index, value) {
        return Ok(Move::rejected());
    }
    let theta = state.theta.with_value(index, value)?;
    let n = ctx.n_intervals();
    let cand = match build_candidate(state, ctx, &theta, &state.gamma, 0..=n - 1, rng) {
        Ok(c) => c,
        Err(e) if e.is_numerical() => {
            rng.uniform();
            return Ok(Move::rejected());
        }
        Err(e) => return Err(e),
    };
    let log_prior = ctx.prior().log_density(&theta);
    let log_ratio =
        candidate_delta(state, &cand) + (log_prior - state.log_prior) + log_q_correction;
    let accepted = ctx.accept_rule.decide(log_ratio, rng);
    if accepted {
        state.theta = theta;
        state.log_prior = log_prior;
        commit(state, cand);
    }
    Ok(Move {
        accepted,
        log_ratio,
    })
}

/// Gaussian random walk for one parameter on its natural unconstrained
/// scale: log for positive, atanh for correlations, identity otherwise.
pub fn update_param(
    state: &mut AugmentedState,
    ctx: &Context,
    index: usize,
    scale: f64,
    rng: &mut RandomStream,
) -> Result<Move> {
    let cur = state.theta[index];
    let eps = scale * rng.normal();
    let (value, log_q) = match ctx.prior().specs()[index].support {
        _ if eps == 0.0 => (cur, 0.0),
        Support::Unbounded => (cur + eps, 0.0),
        Support::Positive => {
            let v = cur * eps.exp();
            (v, v.ln() - cur.ln())
        }
        Support::Correlation => {
            let v = (cur.atanh() + eps).tanh();
            (v, (1.0 - v * v).ln() - (1.0 - cur * cur).ln())
        }
    };
    if !value.is_finite() || !ctx.prior().contains(index, value) {
        rng.uniform();
        return Ok(Move::rejected());
    }
    propose_param_value(state, ctx, index, value, log_q, rng)
}

/// Random-walk update of a parameter that enters the time change.
pub fn update_timescale_param(
    state: &mut AugmentedState,
    ctx: &Context,
    index: usize,
    scale: f64,
    rng: &mut RandomStream,
) -> Result<Move> {
    if ctx.prior().specs()[index].role != ParamRole::TimeScale {
        return Err(Error::Contract(format!(
            "`{}` does not act on the time scale",
            ctx.prior().specs()[index].name
        )));
    }
    update_param(state, ctx, index, scale, rng)
}

/// One random-walk update per free drift parameter, in model order.
pub fn update_drift_params(
    state: &mut AugmentedState,
    ctx: &Context,
    scales: &[f64],
    rng: &mut RandomStream,
) -> Result<Vec<(usize, Move)>> {
    let mut out = Vec::new();
    for i in drift_indices(ctx) {
        out.push((i, update_param(state, ctx, i, scales[i], rng)?));
    }
    Ok(out)
}

fn drift_indices(ctx: &Context) -> Vec<usize> {
    let specs = ctx.prior().specs();
    (0..specs.len())
        .filter(|&i| specs[i].role == ParamRole::Drift && !ctx.prior().is_fixed(i))
        .collect()
}

fn timescale_indices(ctx: &Context) -> Vec<usize> {
    let specs = ctx.prior().specs();
    let a0 = ctx.model().alpha0_index();
    (0..specs.len())
        .filter(|&i| {
            specs[i].role == ParamRole::TimeScale && !ctx.prior().is_fixed(i) && Some(i) != a0
        })
        .collect()
}

/// Proposal and acceptance counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub proposed: u64,
    pub accepted: u64,
}

impl Tally {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance counts per update type.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub z: Tally,
    pub gamma: Tally,
    pub params: BTreeMap<String, Tally>,
}

/// Sweep driver holding the step sizes and the tallies of one chain.
#[derive(Clone, Debug)]
pub struct Sampler {
    scales: Vec<f64>,
    blocks: Vec<(usize, usize)>,
    order: Vec<usize>,
    report: AcceptanceReport,
    batch: Vec<Tally>,
    batches_done: usize,
    verify_cache: bool,
}

impl Sampler {
    pub fn new(ctx: &Context, block_len: usize, scales: Vec<f64>) -> Self {
        let blocks = if ctx.model().has_latent() {
            gamma_blocks(ctx.n_intervals(), ctx.m, block_len)
        } else {
            Vec::new()
        };
        let mut order = timescale_indices(ctx);
        order.extend(drift_indices(ctx));
        if let Some(a0) = ctx.model().alpha0_index() {
            if !ctx.prior().is_fixed(a0) {
                order.push(a0);
            }
        }
        let specs = ctx.prior().specs();
        let report = AcceptanceReport {
            params: order
                .iter()
                .map(|&i| (specs[i].name.to_string(), Tally::default()))
                .collect(),
            ..Default::default()
        };
        let batch = vec![Tally::default(); specs.len()];
        Self {
            scales,
            blocks,
            order,
            report,
            batch,
            batches_done: 0,
            verify_cache: false,
        }
    }

    pub fn with_cache_checks(mut self, on: bool) -> Self {
        self.verify_cache = on;
        self
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn report(&self) -> &AcceptanceReport {
        &self.report
    }

    pub fn reset_report(&mut self) {
        for t in self.report.params.values_mut() {
            *t = Tally::default();
        }
        self.report.z = Tally::default();
        self.report.gamma = Tally::default();
    }

    /// One full sweep over every component of the state.
    pub fn sweep(
        &mut self,
        state: &mut AugmentedState,
        ctx: &Context,
        rng: &mut RandomStream,
    ) -> Result<()> {
        for k in 0..ctx.n_intervals() {
            let mv = update_z_path(state, ctx, k, rng)?;
            self.report.z.record(mv.accepted);
            self.after(state, ctx, mv)?;
        }
        for bi in 0..self.blocks.len() {
            let mv = update_gamma_block(state, ctx, self.blocks[bi], rng)?;
            self.report.gamma.record(mv.accepted);
            self.after(state, ctx, mv)?;
        }
        for oi in 0..self.order.len() {
            let i = self.order[oi];
            let mv = update_param(state, ctx, i, self.scales[i], rng)?;
            let name = ctx.prior().specs()[i].name;
            if let Some(t) = self.report.params.get_mut(name) {
                t.record(mv.accepted);
            }
            self.batch[i].record(mv.accepted);
            self.after(state, ctx, mv)?;
        }
        Ok(())
    }

    fn after(&self, state: &AugmentedState, ctx: &Context, mv: Move) -> Result<()> {
        if self.verify_cache && mv.accepted {
            check_cache(state, ctx)?;
        }
        Ok(())
    }

    /// Call once per sweep during burn-in; every 50 sweeps each step size
    /// moves towards 30% acceptance by a shrinking factor.
    pub fn adapt(&mut self, sweep: usize) {
        if !(sweep + 1).is_multiple_of(ADAPT_BATCH) {
            return;
        }
        self.batches_done += 1;
        let delta = (1.0 / (self.batches_done as f64).sqrt()).min(0.5);
        for &i in &self.order {
            let rate = self.batch[i].rate();
            let factor = if rate > TARGET_ACCEPTANCE {
                delta.exp()
            } else {
                (-delta).exp()
            };
            self.scales[i] = (self.scales[i] * factor).clamp(1e-6, 10.0);
            self.batch[i] = Tally::default();
        }
    }
}

/// Retained draws and run metadata.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub param_names: Vec<String>,
    pub iterations: Vec<usize>,
    /// One row per retained iteration, parameters in model order.
    pub draws: Vec<Vec<f64>>,
    /// Log-likelihood (posterior without the prior) of each retained state.
    pub loglik: Vec<f64>,
    pub acceptance: AcceptanceReport,
    pub final_scales: BTreeMap<String, f64>,
    pub config: SamplerConfig,
}

impl Trace {
    pub fn n_rows(&self) -> usize {
        self.draws.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.param_names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|r| r[i]).collect())
    }
}

/// Starting parameters for `strategy`; fixed priors always win.
pub fn initial_theta(ctx: &Context, strategy: &InitStrategy) -> Result<ParamVector> {
    let prior = ctx.prior();
    let specs = prior.specs().clone();
    let mut values: Vec<f64> = (0..specs.len()).map(|i| prior.midpoint(i)).collect();
    match strategy {
        InitStrategy::PriorMidpoint => {}
        InitStrategy::Moments => {
            for (i, v) in ctx
                .model()
                .moment_init(ctx.observation_times(), ctx.transformed_values())
            {
                if !prior.is_fixed(i) && prior.contains(i, v) {
                    values[i] = v;
                }
            }
        }
        InitStrategy::Values(map) => {
            for (name, &v) in map {
                let i = specs
                    .iter()
                    .position(|s| s.name == name)
                    .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                if !prior.is_fixed(i) {
                    if !prior.contains(i, v) {
                        return Err(Error::Config(format!(
                            "initial `{name}` = {v} outside the prior"
                        )));
                    }
                    values[i] = v;
                }
            }
        }
    }
    ParamVector::new(specs, values)
}

fn step_sizes(ctx: &Context, config: &SamplerConfig) -> Result<Vec<f64>> {
    let specs = ctx.prior().specs();
    for name in config.rw_scales.keys() {
        if !specs.iter().any(|s| s.name == name) {
            return Err(Error::UnknownParameter(name.clone()));
        }
    }
    Ok(specs
        .iter()
        .map(|s| {
            config
                .rw_scales
                .get(s.name)
                .copied()
                .unwrap_or(DEFAULT_RW_SCALE)
        })
        .collect())
}

/// Runs a chain from the configured starting point.
pub fn run_chain(
    config: &SamplerConfig,
    data: &Observations,
    model: Arc<dyn DiffusionModel>,
    prior: PriorSpec,
) -> Result<Trace> {
    config.validate(data.n_intervals())?;
    let ctx = Context::new(model, data, prior, config.m)?;
    let theta = initial_theta(&ctx, &config.init)?;
    let state = AugmentedState::initial(&ctx, theta)
        .map_err(|e| Error::Config(format!("initial state has no finite posterior: {e}")))?;
    if !state.log_posterior().is_finite() {
        return Err(Error::Config(
            "initial state has no finite posterior".into(),
        ));
    }
    run_chain_from(&ctx, state, config)
}

/// Runs a chain from a given state.
pub fn run_chain_from(
    ctx: &Context,
    mut state: AugmentedState,
    config: &SamplerConfig,
) -> Result<Trace> {
    config.validate(ctx.n_intervals())?;
    if config.m != ctx.m() {
        return Err(Error::Config("config and context disagree on m".into()));
    }
    let mut rng = RandomStream::new(config.seed, 0);
    let mut sampler = Sampler::new(ctx, config.block_len, step_sizes(ctx, config)?)
        .with_cache_checks(config.verify_cache);
    let specs = ctx.prior().specs();
    let kept = (config.n_iter - config.n_burn) / config.thin;
    let mut trace = Trace {
        param_names: specs.iter().map(|s| s.name.to_string()).collect(),
        iterations: Vec::with_capacity(kept),
        draws: Vec::with_capacity(kept),
        loglik: Vec::with_capacity(kept),
        acceptance: AcceptanceReport::default(),
        final_scales: BTreeMap::new(),
        config: config.clone(),
    };
    for it in 0..config.n_iter {
        if it == config.n_burn {
            sampler.reset_report();
        }
        sampler.sweep(&mut state, ctx, &mut rng)?;
        if it < config.n_burn {
            if config.adapt {
                sampler.adapt(it);
            }
            continue;
        }
        if (it - config.n_burn + 1).is_multiple_of(config.thin) && trace.draws.len() < kept {
            trace.iterations.push(it + 1);
            trace.draws.push(state.theta.values().to_vec());
            trace.loglik.push(state.log_posterior() - state.log_prior);
        }
    }
    trace.acceptance = sampler.report().clone();
    trace.final_scales = specs
        .iter()
        .zip(sampler.scales())
        .map(|(s, &v)| (s.name.to_string(), v))
        .collect();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{euler_simulate, ConstVolScalar, OuSvLeverage, TbillLogSv};

    fn sim_data(
        model: Arc<dyn DiffusionModel>,
        p: &ParamVector,
        n: usize,
        dt: f64,
        m: usize,
        seed: u64,
    ) -> (Observations, Path, Path) {
        let obs_t: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let grid = TimeGrid::new(imputation_grid(&obs_t, m)).unwrap();
        let mut rng = RandomStream::new(seed, 99);
        let x0 = if model.state_vol() == crate::models::StateVol::Unit {
            0.0
        } else {
            0.05
        };
        let (x, a) =
            euler_simulate(model.as_ref(), p, x0, model.alpha0(p), &grid, &mut rng).unwrap();
        let idx: Vec<usize> = (0..=n).map(|k| k * (m + 1)).collect();
        let obs = Observations::new(
            idx.iter().map(|&i| x.times()[i]).collect(),
            idx.iter().map(|&i| x.values()[i]).collect(),
        )
        .unwrap();
        (obs, x, a)
    }

    fn ou_params() -> ParamVector {
        let m = OuSvLeverage::new();
        ParamVector::new(m.param_specs(), vec![0.2, 0.1, 0.3, -0.2, 0.4, -0.5, -0.2]).unwrap()
    }

    fn ou_state(m: usize, n: usize, seed: u64) -> (Context, AugmentedState) {
        let model: Arc<dyn DiffusionModel> = Arc::new(OuSvLeverage::new());
        let p = ou_params();
        let (obs, _, _) = sim_data(model.clone(), &p, n, 1.0, m, seed);
        let ctx =
            Context::new(model.clone(), &obs, PriorSpec::flat(model.param_specs()), m).unwrap();
        let state = AugmentedState::initial(&ctx, p).unwrap();
        (ctx, state)
    }

    #[test]
    fn prior_checks() {
        let specs = OuSvLeverage::new().param_specs();
        let prior = PriorSpec::flat(specs.clone())
            .with("sigma", PriorKind::Uniform { lo: 0.2, hi: 1.0 })
            .unwrap()
            .with("kappa_x", PriorKind::Fixed { value: 0.2 })
            .unwrap();
        assert!(prior.contains(4, 0.5) && !prior.contains(4, 1.5));
        assert!(!prior.contains(5, 1.0));
        assert!(prior.is_fixed(0));
        assert!(!prior.is_proper());
        assert_eq!(prior.midpoint(4), 0.6);
        assert_eq!(prior.midpoint(2), 1.0);
        assert_eq!(prior.midpoint(1), 0.0);
        assert!(PriorSpec::flat(specs.clone())
            .with("rho", PriorKind::Uniform { lo: 2.0, hi: 3.0 })
            .is_err());
        assert!(PriorSpec::flat(specs.clone())
            .with("sigma", PriorKind::Fixed { value: -1.0 })
            .is_err());
        assert!(PriorSpec::flat(specs)
            .with("nope", PriorKind::Flat)
            .is_err());
    }

    #[test]
    fn gamma_blocks_half_overlap_and_end_free() {
        assert_eq!(gamma_blocks(4, 1, 2), vec![(0, 4), (2, 6), (4, 8)]);
        assert_eq!(
            gamma_blocks(3, 2, 1),
            vec![(0, 3), (1, 4), (2, 5), (3, 6), (4, 7), (5, 8), (6, 9)]
        );
        assert_eq!(gamma_blocks(3, 4, 3), vec![(0, 15)]);
    }

    #[test]
    fn driftless_model_accepts_every_z_proposal() {
        let model: Arc<dyn DiffusionModel> = Arc::new(ConstVolScalar::new());
        let p = ParamVector::new(model.param_specs(), vec![0.0, 0.0, 0.7]).unwrap();
        let (obs, _, _) = sim_data(model.clone(), &p, 5, 0.5, 4, 1);
        let ctx =
            Context::new(model.clone(), &obs, PriorSpec::flat(model.param_specs()), 4).unwrap();
        let mut state = AugmentedState::initial(&ctx, p).unwrap();
        let mut rng = RandomStream::new(1, 0);
        for _ in 0..50 {
            for k in 0..ctx.n_intervals() {
                let mv = update_z_path(&mut state, &ctx, k, &mut rng).unwrap();
                assert!(mv.accepted);
                assert_eq!(mv.log_ratio, 0.0);
            }
        }
    }

    #[test]
    fn rejected_moves_leave_the_state_untouched() {
        let (ctx, mut state) = ou_state(6, 6, 2);
        let mut rng = RandomStream::new(2, 0);
        let blocks = gamma_blocks(ctx.n_intervals(), ctx.m(), 2);
        let mut rejections = 0;
        for it in 0..200 {
            let before = state.clone();
            let mv = match it % 3 {
                0 => update_z_path(&mut state, &ctx, it % ctx.n_intervals(), &mut rng).unwrap(),
                1 => update_gamma_block(&mut state, &ctx, blocks[it % blocks.len()], &mut rng)
                    .unwrap(),
                _ => update_param(&mut state, &ctx, it % 7, 1.5, &mut rng).unwrap(),
            };
            if !mv.accepted {
                rejections += 1;
                assert_eq!(state, before);
            }
            assert!(state.cache_discrepancy(&ctx).unwrap() < 1e-8);
        }
        assert!(rejections > 10);
    }

    #[test]
    fn zero_step_is_always_accepted() {
        let (ctx, mut state) = ou_state(4, 4, 3);
        let mut rng = RandomStream::new(3, 0);
        for i in 0..7 {
            let before = state.clone();
            let mv = update_param(&mut state, &ctx, i, 0.0, &mut rng).unwrap();
            assert!(mv.accepted, "param {i}");
            assert_eq!(mv.log_ratio, 0.0);
            assert_eq!(state.theta(), before.theta());
            assert_eq!(state.z_times, before.z_times);
        }
    }

    #[test]
    fn out_of_support_proposal_is_rejected_without_change() {
        let (ctx, mut state) = ou_state(4, 4, 4);
        let mut rng = RandomStream::new(4, 0);
        let before = state.clone();
        let mv = propose_param_value(&mut state, &ctx, OuSvLeverage::SIGMA, -0.5, 0.0, &mut rng)
            .unwrap();
        assert!(!mv.accepted);
        assert_eq!(mv.log_ratio, f64::NEG_INFINITY);
        assert_eq!(state, before);
    }

    #[test]
    fn driftless_timescale_ratio_is_the_endpoint_density_ratio() {
        let model: Arc<dyn DiffusionModel> = Arc::new(ConstVolScalar::new());
        let p = ParamVector::new(model.param_specs(), vec![0.0, 0.0, 0.8]).unwrap();
        let obs = Observations::new(vec![0.0, 1.0, 2.5], vec![0.1, -0.6, 0.4]).unwrap();
        let ctx =
            Context::new(model.clone(), &obs, PriorSpec::flat(model.param_specs()), 3).unwrap();
        let mut state = AugmentedState::initial(&ctx, p).unwrap();
        let mut rng = RandomStream::new(5, 0);
        let mv = propose_param_value(&mut state, &ctx, ConstVolScalar::SIGMA, 1.3, 0.0, &mut rng)
            .unwrap();
        let f = |s: f64| -> f64 {
            (0..2)
                .map(|k| {
                    let dt = obs.times()[k + 1] - obs.times()[k];
                    crate::likelihood::log_end_density(
                        obs.values()[k + 1],
                        obs.values()[k],
                        s * s * dt,
                    )
                    .unwrap()
                })
                .sum()
        };
        assert!((mv.log_ratio - (f(1.3) - f(0.8))).abs() < 1e-12);
    }

    /// `dX = dB`, `dα = κ(μ − α) dt + σ dW`: the latent path does not touch `X`.
    #[derive(Debug)]
    struct Decoupled {
        specs: Arc<[ParamSpec]>,
    }

    impl DiffusionModel for Decoupled {
        fn name(&self) -> &'static str {
            "decoupled"
        }
        fn param_specs(&self) -> Arc<[ParamSpec]> {
            self.specs.clone()
        }
        fn drift_x(&self, _: f64, x: f64, _: f64, _: &ParamVector) -> f64 {
            -0.3 * x
        }
        fn vol_x(&self, _: f64, _: &ParamVector) -> f64 {
            1.0
        }
        fn drift_alpha(&self, a: f64, p: &ParamVector) -> f64 {
            p[0] * (p[1] - a)
        }
        fn vol_alpha(&self, _: f64, p: &ParamVector) -> f64 {
            p[2]
        }
        fn latent(&self) -> Option<crate::models::LatentTransform> {
            Some(crate::models::LatentTransform::Affine { scale: 2 })
        }
        fn alpha0_index(&self) -> Option<usize> {
            Some(3)
        }
    }

    #[test]
    fn decoupled_gamma_ratio_is_the_latent_ratio() {
        let model: Arc<dyn DiffusionModel> = Arc::new(Decoupled {
            specs: Arc::from(vec![
                ParamSpec::new("kappa", Support::Positive, ParamRole::Drift),
                ParamSpec::new("mu", Support::Unbounded, ParamRole::Drift),
                ParamSpec::new("sigma", Support::Positive, ParamRole::TimeScale),
                ParamSpec::new("alpha0", Support::Unbounded, ParamRole::TimeScale),
            ]),
        });
        let p = ParamVector::new(model.param_specs(), vec![1.5, 0.5, 0.8, -0.3]).unwrap();
        let (obs, _, _) = sim_data(model.clone(), &p, 4, 1.0, 5, 6);
        let ctx =
            Context::new(model.clone(), &obs, PriorSpec::flat(model.param_specs()), 5).unwrap();
        let mut state = AugmentedState::initial(&ctx, p.clone()).unwrap();
        let mut rng = RandomStream::new(6, 0);
        let blocks = gamma_blocks(4, 5, 2);
        let mut checked = 0;
        for it in 0..60 {
            let before = state.gamma_path(&ctx).unwrap();
            let mv =
                update_gamma_block(&mut state, &ctx, blocks[it % blocks.len()], &mut rng).unwrap();
            if mv.accepted {
                let after = state.gamma_path(&ctx).unwrap();
                let d = crate::likelihood::log_latent_marginal(&after, &p, model.as_ref()).unwrap()
                    - crate::likelihood::log_latent_marginal(&before, &p, model.as_ref()).unwrap();
                assert!((mv.log_ratio - d).abs() < 1e-10, "{} vs {d}", mv.log_ratio);
                checked += 1;
            }
        }
        assert!(checked > 5);
    }

    #[test]
    fn cache_stays_coherent_over_sweeps() {
        let model: Arc<dyn DiffusionModel> = Arc::new(TbillLogSv::new());
        let p = ParamVector::new(
            model.param_specs(),
            vec![0.13, 0.013, 2.4, -3.97, 2.76, -3.97],
        )
        .unwrap();
        let (obs, _, _) = sim_data(model.clone(), &p, 8, 5.0 / 252.0, 3, 7);
        let mut cfg = SamplerConfig::new(3, 30);
        cfg.verify_cache = true;
        cfg.n_burn = 10;
        let trace = run_chain(
            &cfg,
            &obs,
            model.clone(),
            PriorSpec::flat(model.param_specs()),
        )
        .unwrap();
        assert_eq!(trace.n_rows(), 20);
        let (ctx, mut state) = ou_state(5, 5, 8);
        let mut sampler = Sampler::new(&ctx, 2, vec![0.2; 7]).with_cache_checks(true);
        let mut rng = RandomStream::new(8, 0);
        for _ in 0..20 {
            sampler.sweep(&mut state, &ctx, &mut rng).unwrap();
        }
        assert!(sampler.report().z.accepted > 0);
        assert!(sampler.report().gamma.accepted > 0);
    }

    #[test]
    fn trace_shape_and_determinism() {
        let model: Arc<dyn DiffusionModel> = Arc::new(OuSvLeverage::new());
        let (obs, _, _) = sim_data(model.clone(), &ou_params(), 6, 1.0, 3, 9);
        let prior = PriorSpec::flat(model.param_specs());
        let mut cfg = SamplerConfig::new(3, 11);
        cfg.n_burn = 10;
        cfg.seed = 17;
        let t1 = run_chain(&cfg, &obs, model.clone(), prior.clone()).unwrap();
        assert_eq!(t1.n_rows(), 1);
        assert_eq!(t1.iterations, vec![11]);
        cfg.n_iter = 40;
        cfg.thin = 3;
        let a = run_chain(&cfg, &obs, model.clone(), prior.clone()).unwrap();
        let b = run_chain(&cfg, &obs, model.clone(), prior.clone()).unwrap();
        assert_eq!(a.n_rows(), 10);
        assert_eq!(a, b);
        cfg.seed = 18;
        let c = run_chain(&cfg, &obs, model, prior).unwrap();
        assert_ne!(a.draws, c.draws);
        for t in a
            .acceptance
            .params
            .values()
            .chain([&a.acceptance.z, &a.acceptance.gamma])
        {
            assert!((0.0..=1.0).contains(&t.rate()));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model: Arc<dyn DiffusionModel> = Arc::new(ConstVolScalar::new());
        let obs = Observations::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.5]).unwrap();
        let prior = PriorSpec::flat(model.param_specs());
        let mut cfg = SamplerConfig::new(0, 10);
        assert!(run_chain(&cfg, &obs, model.clone(), prior.clone()).is_err());
        cfg.m = 2;
        cfg.block_len = 3;
        assert!(run_chain(&cfg, &obs, model.clone(), prior.clone()).is_err());
        cfg.block_len = 1;
        cfg.n_burn = 10;
        assert!(run_chain(&cfg, &obs, model.clone(), prior.clone()).is_err());
        cfg.n_burn = 0;
        cfg.rw_scales.insert("bogus".into(), 0.1);
        assert!(run_chain(&cfg, &obs, model, prior).is_err());
    }

    #[test]
    fn true_path_state_reproduces_the_path() {
        let model: Arc<dyn DiffusionModel> = Arc::new(TbillLogSv::new());
        let p = ParamVector::new(
            model.param_specs(),
            vec![0.13, 0.013, 2.4, -3.97, 2.76, -3.97],
        )
        .unwrap();
        let (obs, x, a) = sim_data(model.clone(), &p, 5, 5.0 / 252.0, 4, 10);
        let ctx =
            Context::new(model.clone(), &obs, PriorSpec::flat(model.param_specs()), 4).unwrap();
        let state = AugmentedState::from_true_paths(&ctx, p, &x, Some(&a)).unwrap();
        let back = state.x_path(&ctx).unwrap();
        for (u, v) in back.values().iter().zip(x.values()) {
            assert!((u - v).abs() <= 1e-10 * v.abs());
        }
        let alpha = state.alpha_path(&ctx).unwrap();
        for (u, v) in alpha.values().iter().zip(a.values()) {
            assert!((u - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }
}
