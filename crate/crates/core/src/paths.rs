//! Path numerics: time grids, Brownian motion and Brownian bridge sampling,
//! left-point quadrature and quadratic variation.
//!
//! Paths are stored as explicit `(time, value)` pairs rather than increments,
//! because every time change in this crate acts on the time axis directly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A seeded, independently addressable random number stream.
///
/// Two streams built from the same `(seed, stream)` pair produce identical
/// draw sequences; distinct stream ids give statistically independent
/// sequences under one seed.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// A fresh stream sharing this stream's seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Strictly increasing, finite sequence of time points.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    /// Single-point grids are accepted; they describe degenerate paths.
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("empty grid".into()));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite time {t}")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "times not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self(times))
    }

    /// `steps + 1` equidistant points from `start` to `end`; the last point is `end` exactly.
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(end > start) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs end > start and steps > 0 (got [{start}, {end}], {steps})"
            )));
        }
        let h = (end - start) / steps as f64;
        let mut times: Vec<f64> = (0..steps).map(|i| start + h * i as f64).collect();
        times.push(end);
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A diffusion skeleton: values attached to a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::InvalidPath(format!(
                "{} times but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "path value",
                time: grid.times()[i],
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_vecs(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(TimeGrid::new(times)?, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
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

    pub fn first_value(&self) -> f64 {
        self.values[0]
    }

    pub fn last_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear interpolation between knots. Outside the grid the nearest
    /// endpoint value is returned.
    pub fn interpolate(&self, t: f64) -> f64 {
        let times = self.times();
        if t <= times[0] {
            return self.values[0];
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return self.values[last];
        }
        let j = times.partition_point(|&s| s <= t);
        let (t0, t1) = (times[j - 1], times[j]);
        let w = (t - t0) / (t1 - t0);
        self.values[j - 1] + w * (self.values[j] - self.values[j - 1])
    }

    /// Values at a subset of this path's own knots (exact time matches only).
    pub fn restrict(&self, times: &[f64]) -> Result<Path> {
        let own = self.times();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let j = own.partition_point(|&s| s < t);
            if j == own.len() || own[j] != t {
                return Err(Error::Contract(format!(
                    "time {t} is not a knot of the path"
                )));
            }
            out.push(self.values[j]);
        }
        Path::from_vecs(times.to_vec(), out)
    }

    pub fn into_parts(self) -> (TimeGrid, Vec<f64>) {
        (self.grid, self.values)
    }
}

/// Standard Brownian motion on `grid`, anchored at `start` at the first knot.
pub fn sample_brownian_motion(grid: &TimeGrid, start: f64, rng: &mut RandomStream) -> Path {
    let times = grid.times();
    let mut values = Vec::with_capacity(times.len());
    values.push(start);
    let mut current = start;
    for w in times.windows(2) {
        current += (w[1] - w[0]).sqrt() * rng.normal();
        values.push(current);
    }
    Path {
        grid: grid.clone(),
        values,
    }
}

/// Mean and variance of a Brownian bridge pinned at `(t_a, z_a)` and
/// `(t_c, z_c)`, evaluated at `t_b`.
pub fn bridge_moments(t_a: f64, z_a: f64, t_c: f64, z_c: f64, t_b: f64) -> Result<(f64, f64)> {
    if !(t_a <= t_b && t_b <= t_c) {
        return Err(Error::Contract(format!(
            "bridge time {t_b} not inside [{t_a}, {t_c}]"
        )));
    }
    if t_a == t_c {
        if z_a != z_c {
            return Err(Error::Contract(format!(
                "zero-length bridge at {t_a} with distinct endpoints {z_a} and {z_c}"
            )));
        }
        return Ok((z_a, 0.0));
    }
    let span = t_c - t_a;
    let (left, right) = (t_b - t_a, t_c - t_b);
    let mean = (left * z_c + right * z_a) / span;
    let var = left * right / span;
    Ok((mean, var))
}

/// One draw of a Brownian bridge at `t_b`. Endpoint times return the pinned
/// value without consuming randomness.
pub fn sample_bridge_point(
    t_a: f64,
    z_a: f64,
    t_c: f64,
    z_c: f64,
    t_b: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    let (mean, var) = bridge_moments(t_a, z_a, t_c, z_c, t_b)?;
    if t_b == t_a {
        return Ok(z_a);
    }
    if t_b == t_c {
        return Ok(z_c);
    }
    Ok(mean + var.sqrt() * rng.normal())
}

/// Sum of squared increments.
pub fn quadratic_variation(path: &Path) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::Contract(
            "quadratic variation needs at least two knots".into(),
        ));
    }
    Ok(path
        .values()
        .windows(2)
        .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
        .sum())
}

/// `Σ f(t_{i-1}) (t_i - t_{i-1})`, the Itô-consistent left-point rule.
pub fn integrate_left_riemann(grid: &TimeGrid, integrand: &[f64]) -> Result<f64> {
    if grid.len() != integrand.len() {
        return Err(Error::Contract(format!(
            "{} grid points but {} integrand values",
            grid.len(),
            integrand.len()
        )));
    }
    Ok(grid
        .times()
        .windows(2)
        .zip(integrand)
        .map(|(w, f)| f * (w[1] - w[0]))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::ks_two_sample;
    use proptest::prelude::*;
    use rand::RngCore;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn single_point_grid_gives_single_point_path() {
        let grid = TimeGrid::new(vec![0.0]).unwrap();
        let mut rng = RandomStream::new(1, 0);
        let p = sample_brownian_motion(&grid, 0.0, &mut rng);
        assert_eq!(p.values(), &[0.0]);
    }

    #[test]
    fn brownian_motion_is_anchored() {
        let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let mut rng = RandomStream::new(2, 0);
        for _ in 0..100 {
            assert_eq!(
                sample_brownian_motion(&grid, 5.0, &mut rng).first_value(),
                5.0
            );
        }
    }

    #[test]
    fn brownian_increments_have_unit_rate_variance() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let mut rng = RandomStream::new(3, 0);
        let n = 100_000;
        let incs: Vec<f64> = (0..n)
            .flat_map(|_| {
                let p = sample_brownian_motion(&grid, 0.0, &mut rng);
                let v = p.values().to_vec();
                [v[1] - v[0], v[2] - v[1]]
            })
            .collect();
        let (_, var) = mean_var(&incs);
        // SE of a sample variance of N(0,1) draws is sqrt(2/n).
        let se = (2.0 / incs.len() as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn bridge_moments_match_closed_form() {
        let (m, v) = bridge_moments(0.0, 1.0, 4.0, 5.0, 1.0).unwrap();
        assert!((m - 2.0).abs() < 1e-15);
        assert!((v - 0.75).abs() < 1e-15);
        let (m, _) = bridge_moments(0.0, 3.0, 2.0, 3.0, 0.7).unwrap();
        assert_eq!(m, 3.0);
    }

    #[test]
    fn bridge_draws_match_moments() {
        let mut rng = RandomStream::new(4, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_bridge_point(0.0, 0.0, 1.0, 0.0, 0.5, &mut rng).unwrap())
            .collect();
        let (mean, var) = mean_var(&draws);
        let se_mean = (0.25 / n as f64).sqrt();
        let se_var = 0.25 * (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se_mean, "mean {mean}");
        assert!((var - 0.25).abs() < 4.0 * se_var, "var {var}");
    }

    #[test]
    fn degenerate_bridge_is_deterministic_and_consumes_nothing() {
        let mut rng = RandomStream::new(5, 0);
        let before = rng.clone();
        assert_eq!(
            sample_bridge_point(1.0, 2.5, 3.0, 7.0, 1.0, &mut rng).unwrap(),
            2.5
        );
        assert_eq!(
            sample_bridge_point(1.0, 2.5, 3.0, 7.0, 3.0, &mut rng).unwrap(),
            7.0
        );
        let mut a = before;
        assert_eq!(a.next_u64(), rng.next_u64());
    }

    #[test]
    fn zero_length_bridge_with_distinct_ends_is_rejected() {
        let mut rng = RandomStream::new(6, 0);
        assert!(sample_bridge_point(1.0, 0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        assert!(sample_bridge_point(0.0, 0.0, 1.0, 1.0, 2.0, &mut rng).is_err());
    }

    #[test]
    fn quadratic_variation_by_hand() {
        let p = Path::from_vecs(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(quadratic_variation(&p).unwrap(), 3.0);
        let c = Path::from_vecs(vec![0.0, 1.0, 2.0], vec![4.0; 3]).unwrap();
        assert_eq!(quadratic_variation(&c).unwrap(), 0.0);
        let single = Path::from_vecs(vec![0.0], vec![1.0]).unwrap();
        assert!(quadratic_variation(&single).is_err());
    }

    #[test]
    fn quadratic_variation_recovers_integrated_variance() {
        let sigma = 0.4;
        let grid = TimeGrid::uniform(0.0, 10.0, 100_000).unwrap();
        let mut rng = RandomStream::new(7, 0);
        let w = sample_brownian_motion(&grid, 0.0, &mut rng);
        let x = Path::new(grid, w.values().iter().map(|v| sigma * v).collect()).unwrap();
        let qv = quadratic_variation(&x).unwrap();
        assert!((qv / 1.6 - 1.0).abs() < 0.05, "qv {qv}");
    }

    #[test]
    fn left_riemann_examples() {
        let g = TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(integrate_left_riemann(&g, &[1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(integrate_left_riemann(&g, &[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert!(integrate_left_riemann(&g, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn left_riemann_converges_on_refinement() {
        let exact = 8.0 / 3.0;
        let errs: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| {
                let g = TimeGrid::uniform(0.0, 2.0, n - 1).unwrap();
                let f: Vec<f64> = g.times().iter().map(|t| t * t).collect();
                (integrate_left_riemann(&g, &f).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-2);
    }

    #[test]
    fn refined_then_restricted_bm_matches_coarse_bm() {
        let coarse = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let fine = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let mut rng = RandomStream::new(8, 0);
        let n = 10_000;
        let direct: Vec<f64> = (0..n)
            .map(|_| sample_brownian_motion(&coarse, 0.0, &mut rng).last_value())
            .collect();
        let restricted: Vec<f64> = (0..n)
            .map(|_| {
                sample_brownian_motion(&fine, 0.0, &mut rng)
                    .restrict(coarse.times())
                    .unwrap()
                    .last_value()
            })
            .collect();
        let p = ks_two_sample(&direct, &restricted).unwrap().p_value;
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn same_stream_same_path() {
        let grid = TimeGrid::uniform(0.0, 3.0, 50).unwrap();
        let a = sample_brownian_motion(&grid, 0.0, &mut RandomStream::new(9, 3));
        let b = sample_brownian_motion(&grid, 0.0, &mut RandomStream::new(9, 3));
        let c = sample_brownian_motion(&grid, 0.0, &mut RandomStream::new(9, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interpolation_and_grid_validation() {
        let p = Path::from_vecs(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 6.0]).unwrap();
        assert_eq!(p.interpolate(0.5), 1.0);
        assert_eq!(p.interpolate(2.0), 4.0);
        assert_eq!(p.interpolate(-1.0), 0.0);
        assert_eq!(p.interpolate(9.0), 6.0);
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
        assert!(Path::from_vecs(vec![0.0, 1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn qv_invariant_under_reversal_and_shift(
            values in prop::collection::vec(-10.0f64..10.0, 2..40),
            shift in -5.0f64..5.0,
        ) {
            let times: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
            let p = Path::from_vecs(times.clone(), values.clone()).unwrap();
            let rev: Vec<f64> = values.iter().rev().copied().collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let qv = quadratic_variation(&p).unwrap();
            let qr = quadratic_variation(&Path::from_vecs(times.clone(), rev).unwrap()).unwrap();
            let qs = quadratic_variation(&Path::from_vecs(times, shifted).unwrap()).unwrap();
            prop_assert!((qv - qr).abs() <= 1e-9 * (1.0 + qv));
            prop_assert!((qv - qs).abs() <= 1e-9 * (1.0 + qv));
        }
    }
}
