//! The two-stage time change applied to each observation interval.
//!
//! Stage one warps X-time into U-time through `η(t) = ∫ s²(r) dr`, where
//! `s` is the conditional volatility of the (leverage-adjusted) observed
//! process, so that `U` has unit volatility and ends at `(T, y₁)`.
//! Stage two removes the dependence of the reference bridge on `T`:
//!
//! ```text
//! U⁰_t = U_t − (1 − t/T) y₀ − (t/T) y₁ = (T − t) Z_{t / (T (T − t))}
//! ```
//!
//! Under the reference measure `U` is a Brownian bridge exactly when `Z` is
//! a standard Brownian motion on `[0, ∞)`. The endpoint of `Z` at `+∞` is
//! never stored; all finite `Z` knots are kept and extra ones are drawn
//! retrospectively when a proposal moves the time scale.

use crate::error::{Error, Result};
use crate::models::{DiffusionModel, ParamVector};
use crate::paths::{bridge_moments, Path, RandomStream, TimeGrid};

/// Relative distance from `T` below which a U-time is treated as the endpoint.
const ENDPOINT_EPS: f64 = 1e-10;

/// Monotone piecewise-linear map from X-time to U-time on one interval.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaProfile {
    x_times: Vec<f64>,
    u_times: Vec<f64>,
}

impl EtaProfile {
    /// Knots must be strictly increasing in both coordinates and start at U-time 0.
    pub fn new(x_times: Vec<f64>, u_times: Vec<f64>) -> Result<Self> {
        if x_times.len() != u_times.len() || x_times.len() < 2 {
            return Err(Error::Contract(
                "eta needs at least two matching knots".into(),
            ));
        }
        if u_times[0] != 0.0 {
            return Err(Error::Contract(
                "eta must vanish at the interval start".into(),
            ));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&x_times) || !increasing(&u_times) {
            return Err(Error::Contract(
                "eta knots must be strictly increasing".into(),
            ));
        }
        Ok(Self { x_times, u_times })
    }

    pub fn x_times(&self) -> &[f64] {
        &self.x_times
    }

    pub fn u_times(&self) -> &[f64] {
        &self.u_times
    }

    pub fn start(&self) -> f64 {
        self.x_times[0]
    }

    pub fn end(&self) -> f64 {
        self.x_times[self.x_times.len() - 1]
    }

    /// `T = η(t_k)`.
    pub fn total(&self) -> f64 {
        self.u_times[self.u_times.len() - 1]
    }

    pub fn eval(&self, t: f64) -> f64 {
        interp_monotone(&self.x_times, &self.u_times, t)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        interp_monotone(&self.u_times, &self.x_times, u)
    }
}

fn interp_monotone(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    let j = xs.partition_point(|&s| s < x);
    if j == 0 {
        return ys[0] + (x - xs[0]) * (ys[1] - ys[0]) / (xs[1] - xs[0]);
    }
    if j > last {
        return ys[last] + (x - xs[last]) * (ys[last] - ys[last - 1]) / (xs[last] - xs[last - 1]);
    }
    if xs[j] == x {
        return ys[j];
    }
    let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + w * (ys[j] - ys[j - 1])
}

/// Left-Riemann cumulative sums `u_i = Σ_{j<i} rate_j (t_{j+1} − t_j)`.
pub(crate) fn cumulate_eta(x_times: &[f64], rates: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..x_times.len() {
        acc += rates[i - 1] * (x_times[i] - x_times[i - 1]);
        out.push(acc);
    }
}

/// Variance rate `(1 − ρ²) σ_x(α)²` of the leverage-adjusted observed process.
pub(crate) fn variance_rate(model: &dyn DiffusionModel, alpha: f64, p: &ParamVector) -> f64 {
    let rho = model.leverage(p);
    let s = model.vol_x(alpha, p);
    (1.0 - rho * rho) * s * s
}

/// Builds `η` on `interval = (t_{k−1}, t_k)`.
///
/// Constant-volatility models give the straight line `σ²(t − t_{k−1})`.
/// Latent-volatility models need `gamma`; its knots inside the interval
/// become the knots of `η`, with the volatility read at left points.
pub fn build_eta(
    interval: (f64, f64),
    gamma: Option<&Path>,
    model: &dyn DiffusionModel,
    p: &ParamVector,
) -> Result<EtaProfile> {
    let (t0, t1) = interval;
    if !(t1 > t0) {
        return Err(Error::Contract(format!("empty interval ({t0}, {t1})")));
    }
    let (x_times, alphas) = match (model.latent(), gamma) {
        (None, _) => (vec![t0, t1], vec![0.0, 0.0]),
        (Some(_), None) => {
            return Err(Error::Contract(
                "a latent-volatility model needs the gamma path to build eta".into(),
            ))
        }
        (Some(transform), Some(g)) => {
            if g.grid().first() > t0 || g.grid().last() < t1 {
                return Err(Error::InconsistentState(format!(
                    "gamma path does not span ({t0}, {t1})"
                )));
            }
            let mut xs = vec![t0];
            xs.extend(g.times().iter().copied().filter(|&t| t > t0 && t < t1));
            xs.push(t1);
            let alpha0 = model.alpha0(p);
            let alphas = xs
                .iter()
                .map(|&t| transform.to_alpha(g.interpolate(t), alpha0, p))
                .collect();
            (xs, alphas)
        }
    };
    let mut rates = Vec::with_capacity(x_times.len());
    for (&t, &a) in x_times.iter().zip(&alphas) {
        let r = variance_rate(model, a, p);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NonPositiveVolatility { value: r, time: t });
        }
        rates.push(r);
    }
    let mut u_times = Vec::new();
    cumulate_eta(&x_times, &rates, &mut u_times);
    EtaProfile::new(x_times, u_times)
}

/// Maps a path from X-time to U-time; values are untouched.
pub fn x_to_u(xpath: &Path, eta: &EtaProfile) -> Result<Path> {
    let times = xpath.times().iter().map(|&t| eta.eval(t)).collect();
    Path::from_vecs(times, xpath.values().to_vec())
}

pub fn u_to_x(upath: &Path, eta: &EtaProfile) -> Result<Path> {
    let times = upath.times().iter().map(|&u| eta.inverse(u)).collect();
    Path::from_vecs(times, upath.values().to_vec())
}

/// `t / (T (T − t))` for `0 ≤ t < T`.
pub fn z_time(t: f64, total: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Contract(format!("negative U-time {t}")));
    }
    if t >= total * (1.0 - ENDPOINT_EPS) {
        return Err(Error::Contract(format!(
            "U-time {t} is at or beyond the interval end {total}"
        )));
    }
    Ok(t / (total * (total - t)))
}

/// Inverse of [`z_time`]: `T² s / (1 + T s)`.
pub fn u_time(s: f64, total: f64) -> f64 {
    total * total * s / (1.0 + total * s)
}

fn chord(t: f64, total: f64, y0: f64, y1: f64) -> f64 {
    (1.0 - t / total) * y0 + (t / total) * y1
}

/// `Z` at the finite Z-times of a U path on `[0, T]`.
///
/// Knots at (or numerically at) `T` are dropped; their Z-time is `+∞`.
pub fn u_to_z(u: &Path, y0: f64, y1: f64, total: f64) -> Result<Path> {
    let mut times = Vec::with_capacity(u.len());
    let mut values = Vec::with_capacity(u.len());
    for (&t, &v) in u.times().iter().zip(u.values()) {
        if t >= total * (1.0 - ENDPOINT_EPS) {
            continue;
        }
        times.push(z_time(t, total)?);
        values.push((v - chord(t, total, y0, y1)) / (total - t));
    }
    Path::from_vecs(times, values)
}

/// `U` from `Z`, with the pinned endpoints at U-times `0` and `T`.
pub fn z_to_u(z: &Path, total: f64, y0: f64, y1: f64) -> Result<Path> {
    let mut times = Vec::with_capacity(z.len() + 2);
    let mut values = Vec::with_capacity(z.len() + 2);
    if z.times()[0] > 0.0 {
        times.push(0.0);
        values.push(y0);
    }
    for (&s, &v) in z.times().iter().zip(z.values()) {
        let t = u_time(s, total);
        times.push(t);
        values.push((total - t) * v + chord(t, total, y0, y1));
    }
    times.push(total);
    values.push(y1);
    Path::from_vecs(times, values)
}

/// Draws `Z` at `new_times` (sorted, nonnegative) conditionally on the
/// stored knots, left to right. Returns `(merged_times, merged_values,
/// new_values)` with `new_values` aligned to `new_times`.
///
/// A time already stored is read back without consuming randomness. A time
/// before the first stored knot is bridged from the implicit origin
/// `Z_0 = 0`; a time beyond the last knot is a free Brownian increment.
pub(crate) fn refine_sorted(
    old_times: &[f64],
    old_values: &[f64],
    new_times: &[f64],
    rng: &mut RandomStream,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let cap = old_times.len() + new_times.len();
    let mut mt = Vec::with_capacity(cap);
    let mut mv = Vec::with_capacity(cap);
    let mut fresh = Vec::with_capacity(new_times.len());
    let mut i = 0;
    for &t in new_times {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Contract(format!("invalid Z-time {t}")));
        }
        while i < old_times.len() && old_times[i] < t {
            mt.push(old_times[i]);
            mv.push(old_values[i]);
            i += 1;
        }
        if i < old_times.len() && old_times[i] == t {
            fresh.push(old_values[i]);
            continue;
        }
        if let Some(&lt) = mt.last() {
            if lt == t {
                fresh.push(mv[mv.len() - 1]);
                continue;
            }
        }
        let (ta, za) = match mt.last() {
            Some(&lt) => (lt, mv[mv.len() - 1]),
            None => (0.0, 0.0),
        };
        let v = if i < old_times.len() {
            let (mean, var) = bridge_moments(ta, za, old_times[i], old_values[i], t)?;
            if var == 0.0 {
                mean
            } else {
                mean + var.sqrt() * rng.normal()
            }
        } else {
            za + (t - ta).sqrt() * rng.normal()
        };
        mt.push(t);
        mv.push(v);
        fresh.push(v);
    }
    mt.extend_from_slice(&old_times[i..]);
    mv.extend_from_slice(&old_values[i..]);
    Ok((mt, mv, fresh))
}

/// Adds knots at `new_times` to a stored Z path, drawing each new value from
/// the Brownian bridge between its nearest neighbours. Existing knots keep
/// their values.
pub fn refine_retrospective(z: &Path, new_times: &[f64], rng: &mut RandomStream) -> Result<Path> {
    let mut sorted = new_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mt, mv, _) = refine_sorted(z.times(), z.values(), &sorted, rng)?;
    Path::new(TimeGrid::new(mt)?, mv)
}
