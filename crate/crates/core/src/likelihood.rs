//! Log-densities of the augmented posterior.
//!
//! For each observation interval the observed process is leverage-adjusted
//! (`H = X − A`), time-changed to unit volatility (`U`) and compared with
//! a Brownian bridge through Girsanov's formula. With `b = μ_H / s²`,
//!
//! ```text
//! log G = Σ b_{j−1} ΔU_j − ½ Σ b_{j−1}² Δu_j        (left points)
//! log f = log N(H_end; y₀, T) + log-Jacobian of the state transform
//! ```
//!
//! and the latent path contributes its own Girsanov term against Brownian
//! motion on X-time. On the imputation grid these pieces multiply to the
//! Euler density of the skeleton, expressed in the `(Z, γ)` coordinates.

use crate::error::{Error, Result};
use crate::mcmc::{AugmentedState, Context};
use crate::models::{DiffusionModel, ParamVector};
use crate::paths::Path;
use crate::timechange::{cumulate_eta, z_time};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Per-part decomposition of the log augmented posterior.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LogLikBreakdown {
    pub log_g: Vec<f64>,
    pub log_f: Vec<f64>,
    pub log_l_gamma: f64,
    pub log_prior: f64,
    pub total: f64,
}

impl LogLikBreakdown {
    /// Everything except the prior.
    pub fn log_likelihood(&self) -> f64 {
        self.total - self.log_prior
    }
}

/// Left-point Girsanov log-density of a unit-volatility path against the
/// driftless reference with the same endpoints.
///
/// `drift(t, u)` is the drift per unit of the path's own time.
pub fn log_girsanov_u(u: &Path, mut drift: impl FnMut(f64, f64) -> f64) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::InvalidPath(
            "Girsanov weight needs at least two knots".into(),
        ));
    }
    let (t, v) = (u.times(), u.values());
    let mut acc = 0.0;
    for i in 1..t.len() {
        let b = drift(t[i - 1], v[i - 1]);
        if !b.is_finite() {
            return Err(Error::NonFinite {
                what: "drift",
                time: t[i - 1],
            });
        }
        acc += b * (v[i] - v[i - 1]) - 0.5 * b * b * (t[i] - t[i - 1]);
    }
    Ok(acc)
}

/// `log N(y1; y0, T)`.
pub fn log_end_density(y1: f64, y0: f64, total: f64) -> Result<f64> {
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Contract(format!(
            "end-point variance must be positive (got {total})"
        )));
    }
    Ok(normal_logpdf(y1 - y0, total))
}

#[inline]
fn normal_logpdf(d: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Girsanov log-density of the latent `γ` path against Brownian motion.
pub fn log_latent_marginal(
    gamma: &Path,
    p: &ParamVector,
    model: &dyn DiffusionModel,
) -> Result<f64> {
    let transform = model.latent().ok_or_else(|| {
        Error::Contract(format!("model `{}` has no latent process", model.name()))
    })?;
    if gamma.first_value() != 0.0 {
        return Err(Error::Contract("gamma must start at zero".into()));
    }
    let alpha0 = model.alpha0(p);
    log_girsanov_u(gamma, |_, g| transform.gamma_drift(model, g, alpha0, p))
}

/// Euler log-likelihood of a skeleton: the sum of Gaussian one-step
/// transition log-densities.
///
/// `x` is in the model's Lamperti coordinates. Models with a latent
/// process need `alpha` on the same grid; the joint step is bivariate
/// normal with correlation `ρ`.
pub fn euler_loglik(
    x: &Path,
    alpha: Option<&Path>,
    model: &dyn DiffusionModel,
    p: &ParamVector,
) -> Result<f64> {
    let t = x.times();
    let xv = x.values();
    let rho = model.leverage(p);
    if model.has_latent() && !(rho.abs() < 1.0) {
        return Err(Error::Degenerate(format!(
            "singular step covariance at rho = {rho}"
        )));
    }
    let av: Option<&[f64]> = match (model.has_latent(), alpha) {
        (true, Some(a)) => {
            if a.times() != t {
                return Err(Error::InconsistentState("x and alpha grids differ".into()));
            }
            Some(a.values())
        }
        (true, None) => return Err(Error::Contract("latent path required".into())),
        (false, _) => None,
    };
    let mut acc = 0.0;
    for i in 1..t.len() {
        let dt = t[i] - t[i - 1];
        let a = av.map_or(0.0, |a| a[i - 1]);
        let sx = model.vol_x(a, p);
        let mu = model.transformed_drift(t[i - 1], xv[i - 1], a, p);
        let dx = xv[i] - xv[i - 1] - mu * dt;
        match av {
            None => acc += normal_logpdf(dx, sx * sx * dt),
            Some(a) => {
                let sa = model.vol_alpha(a[i - 1], p);
                if !(sa > 0.0) {
                    return Err(Error::Degenerate(
                        "latent volatility must be positive".into(),
                    ));
                }
                let da = a[i] - a[i - 1] - model.drift_alpha(a[i - 1], p) * dt;
                let cond_mean = rho * sx * da / sa;
                acc += normal_logpdf(da, sa * sa * dt)
                    + normal_logpdf(dx - cond_mean, (1.0 - rho * rho) * sx * sx * dt);
            }
        }
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite {
            what: "Euler log-likelihood",
            time: t[t.len() - 1],
        });
    }
    Ok(acc)
}

/// Everything about one interval that depends on `(θ, γ)` but not on `Z`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Geometry {
    pub alpha: Vec<f64>,
    pub sigx: Vec<f64>,
    /// Variance rate `(1 − ρ²) σ_x²` at each knot.
    pub s2: Vec<f64>,
    /// Drift of `γ` at each knot (zero without a latent process).
    pub bgam: Vec<f64>,
    pub u: Vec<f64>,
    pub offsets: Vec<f64>,
    pub total: f64,
    pub h_end: f64,
    /// Z-times of knots `0..=m`; the last knot sits at Z-time `+∞`.
    pub z_times: Vec<f64>,
}

pub(crate) fn build_geometry(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    knots: &[f64],
    gamma: Option<&[f64]>,
    y1: f64,
    g: &mut Geometry,
) -> Result<()> {
    let n = knots.len();
    let rho = model.leverage(p);
    g.alpha.clear();
    g.sigx.clear();
    g.s2.clear();
    g.bgam.clear();
    match (model.latent(), gamma) {
        (Some(tr), Some(gam)) => {
            let alpha0 = model.alpha0(p);
            for (&gv, &t) in gam.iter().zip(knots) {
                let a = tr.to_alpha(gv, alpha0, p);
                let sx = model.vol_x(a, p);
                let s2 = (1.0 - rho * rho) * sx * sx;
                if !(s2 > 0.0) || !s2.is_finite() {
                    return Err(Error::NonPositiveVolatility { value: s2, time: t });
                }
                g.alpha.push(a);
                g.sigx.push(sx);
                g.s2.push(s2);
                g.bgam.push(tr.gamma_drift(model, gv, alpha0, p));
            }
        }
        (None, _) => {
            let sx = model.vol_x(0.0, p);
            let s2 = sx * sx;
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::NonPositiveVolatility {
                    value: s2,
                    time: knots[0],
                });
            }
            g.alpha.resize(n, 0.0);
            g.sigx.resize(n, sx);
            g.s2.resize(n, s2);
            g.bgam.resize(n, 0.0);
        }
        (Some(_), None) => return Err(Error::Contract("latent path required".into())),
    }
    cumulate_eta(knots, &g.s2, &mut g.u);
    g.total = g.u[n - 1];
    match gamma {
        Some(gam) if rho != 0.0 => {
            crate::models::leverage_offsets(rho, &g.sigx, gam, &mut g.offsets)
        }
        _ => {
            g.offsets.clear();
            g.offsets.resize(n, 0.0);
        }
    }
    g.h_end = y1 - g.offsets[n - 1];
    g.z_times.clear();
    for j in 0..n - 1 {
        let s = z_time(g.u[j], g.total).map_err(|_| Error::NonFinite {
            what: "Z-time",
            time: knots[j],
        })?;
        if j > 0 && !(s > g.z_times[j - 1]) {
            return Err(Error::NonFinite {
                what: "Z-time spacing",
                time: knots[j],
            });
        }
        g.z_times.push(s);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct IntervalEval {
    pub log_g: f64,
    pub log_f: f64,
    pub log_l_gamma: f64,
}

impl IntervalEval {
    pub fn sum(&self) -> f64 {
        self.log_g + self.log_f + self.log_l_gamma
    }
}

/// `U` at knot `j` from `Z_j`; the last knot is the fixed end point.
#[inline]
fn u_value(g: &Geometry, y0: f64, z: &[f64], j: usize) -> f64 {
    if j == z.len() {
        g.h_end
    } else {
        let u = g.u[j];
        (g.total - u) * z[j] + y0 + (u / g.total) * (g.h_end - y0)
    }
}

/// The Girsanov weight of `U` given the geometry and `Z` at its knots.
pub(crate) fn log_g_interval(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    knots: &[f64],
    g: &Geometry,
    y0: f64,
    z: &[f64],
) -> Result<f64> {
    let rho = model.leverage(p);
    let mut acc = 0.0;
    let mut u_prev = y0;
    for j in 1..knots.len() {
        let i = j - 1;
        let x_prev = u_prev + g.offsets[i];
        let mu_h =
            model.transformed_drift(knots[i], x_prev, g.alpha[i], p) - rho * g.sigx[i] * g.bgam[i];
        let b = mu_h / g.s2[i];
        let u_next = u_value(g, y0, z, j);
        acc += b * (u_next - u_prev) - 0.5 * b * b * (g.u[j] - g.u[i]);
        u_prev = u_next;
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite {
            what: "Girsanov weight",
            time: knots[0],
        });
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate_interval(
    model: &dyn DiffusionModel,
    p: &ParamVector,
    knots: &[f64],
    gamma: Option<&[f64]>,
    g: &Geometry,
    y0: f64,
    log_jac: f64,
    z: &[f64],
) -> Result<IntervalEval> {
    let log_g = log_g_interval(model, p, knots, g, y0, z)?;
    let log_f = log_end_density(g.h_end, y0, g.total)? + log_jac;
    let log_l_gamma = match gamma {
        Some(gam) => {
            let mut acc = 0.0;
            for j in 1..knots.len() {
                let b = g.bgam[j - 1];
                acc += b * (gam[j] - gam[j - 1]) - 0.5 * b * b * (knots[j] - knots[j - 1]);
            }
            acc
        }
        None => 0.0,
    };
    if !log_f.is_finite() || !log_l_gamma.is_finite() {
        return Err(Error::NonFinite {
            what: "interval log-density",
            time: knots[0],
        });
    }
    Ok(IntervalEval {
        log_g,
        log_f,
        log_l_gamma,
    })
}

/// Values of a stored Z path at `needed` times, which must all be knots.
pub(crate) fn lookup_z(
    stored_t: &[f64],
    stored_v: &[f64],
    needed: &[f64],
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    let mut i = 0;
    for &t in needed {
        while i < stored_t.len() && stored_t[i] < t {
            i += 1;
        }
        if i == stored_t.len() || stored_t[i] != t {
            return Err(Error::InconsistentState(format!(
                "no stored Z value at Z-time {t}"
            )));
        }
        out.push(stored_v[i]);
    }
    Ok(())
}

/// Evaluates the log augmented posterior of `state` from scratch.
pub fn log_augmented_posterior(state: &AugmentedState, ctx: &Context) -> Result<LogLikBreakdown> {
    let model = ctx.model();
    let p = state.theta();
    let mut geom = Geometry::default();
    let mut zbuf = Vec::new();
    let n = ctx.n_intervals();
    if state.n_intervals() != n {
        return Err(Error::InconsistentState(format!(
            "state has {} intervals, data has {n}",
            state.n_intervals()
        )));
    }
    let mut out = LogLikBreakdown {
        log_g: Vec::with_capacity(n),
        log_f: Vec::with_capacity(n),
        log_l_gamma: 0.0,
        log_prior: ctx.prior().log_density(p),
        total: 0.0,
    };
    for k in 0..n {
        let knots = ctx.interval_knots(k);
        let gamma = state.gamma_segment(ctx, k);
        build_geometry(model, p, knots, gamma, ctx.y1(k), &mut geom)?;
        let (zt, zv) = state.z_knots(k);
        lookup_z(zt, zv, &geom.z_times, &mut zbuf)?;
        let e = evaluate_interval(
            model,
            p,
            knots,
            gamma,
            &geom,
            ctx.y0(k),
            ctx.log_jac(k),
            &zbuf,
        )?;
        out.log_g.push(e.log_g);
        out.log_f.push(e.log_f);
        out.log_l_gamma += e.log_l_gamma;
    }
    out.total = out.log_l_gamma
        + out
            .log_g
            .iter()
            .zip(&out.log_f)
            .map(|(g, f)| g + f)
            .sum::<f64>()
        + out.log_prior;
    Ok(out)
}
