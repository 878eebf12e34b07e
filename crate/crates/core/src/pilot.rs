//! Pilot density built on the first subsample.
//!
//! The pilot `f̂` is a product-Gaussian kernel estimate with per-axis
//! Silverman bandwidths, reflected at every face of the cube, rescaled so
//! that it integrates to one under the cube's quadrature rule, and clipped to
//! `[clip_lo, clip_hi]`. The rescaling constant is solved for *after*
//! clipping, so both the integral and the bounds hold at the same time.
//!
//! The estimator queries the conditional moments `m_i(f̂, y)` and
//! `∫ f̂(x, y) dx` at the same `y` values many times, so they are memoized
//! per `y` behind an `RwLock`.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{Cube, QuadratureRule};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Rows `(x_i, x_j, y)` (or `(x, y)` for a diagonal entry) flattened
/// row-major. The response `y` is always the last coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    dim: usize,
    data: Vec<f64>,
}

impl PairSample {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::config(format!("rows must have 2 or 3 coordinates, got {dim}")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Data("flat data length is not a multiple of the row size".into()));
        }
        Ok(PairSample { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(3, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("rows have unequal length".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn ys(&self) -> Vec<f64> {
        self.rows().map(|r| r[self.dim - 1]).collect()
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.rows().map(|r| r[axis]).collect()
    }

    pub fn check_inside(&self, cube: &Cube) -> Result<()> {
        if cube.dim() != self.dim {
            return Err(Error::config("sample and cube dimensions differ"));
        }
        self.rows().try_for_each(|r| cube.check(r))
    }
}

/// Size of the pilot subsample: `n1 = max(10, round(n / ln n))`.
pub fn split_sample(n: usize) -> Result<(usize, usize)> {
    if n < 20 {
        return Err(Error::SampleTooSmall { got: n, min: 20 });
    }
    let nf = n as f64;
    let n1 = ((nf / nf.ln()).round() as usize).max(10);
    Ok((n1, n - n1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { lo: 1e-3, hi: 50.0 }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "clip bounds must satisfy 0 < lo < hi < inf, got ({}, {})",
                self.lo, self.hi
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum BandwidthRule {
    /// `h_k = 1.06 σ̂_k n^{-1/5}` per axis.
    #[default]
    Silverman,
    Fixed(Vec<f64>),
}

/// `∫ f̂(x, y) dx` and the two conditional means at one `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondMoments {
    pub mass: f64,
    pub mean_i: f64,
    pub mean_j: f64,
}

#[derive(Debug)]
pub struct PilotDensity {
    cube: Cube,
    x_dims: usize,
    n1: usize,
    /// Axis-major kernel centers.
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    clip: ClipConfig,
    scale: f64,
    rule: QuadratureRule,
    /// Tensor grid over the `x`-block: coordinates of slot `i`/`j` and weights.
    grid_xi: Vec<f64>,
    grid_xj: Vec<f64>,
    grid_w: Vec<f64>,
    /// Row `c` holds the product of `x`-axis kernels of center `c` on the grid.
    grid_kernels: Vec<f64>,
    cache: RwLock<HashMap<u64, CondMoments>>,
}

impl PilotDensity {
    pub fn fit(
        sample: &PairSample,
        cube: &Cube,
        bandwidth: &BandwidthRule,
        clip: ClipConfig,
        rule: &QuadratureRule,
    ) -> Result<Self> {
        clip.validate()?;
        let dim = cube.dim();
        if sample.dim() != dim {
            return Err(Error::config("sample and cube dimensions differ"));
        }
        if rule.cube() != cube {
            return Err(Error::config("quadrature rule must be built on the pilot cube"));
        }
        if sample.is_empty() {
            return Err(Error::SampleTooSmall { got: 0, min: 1 });
        }
        sample.check_inside(cube)?;
        let n1 = sample.len();
        let centers: Vec<Vec<f64>> = (0..dim).map(|a| sample.axis(a)).collect();

        let bandwidths = match bandwidth {
            BandwidthRule::Silverman => {
                if n1 < 2 {
                    return Err(Error::SampleTooSmall { got: n1, min: 2 });
                }
                let factor = 1.06 * (n1 as f64).powf(-0.2);
                centers
                    .iter()
                    .enumerate()
                    .map(|(axis, xs)| {
                        let sd = crate::numeric::sample_variance(xs).sqrt();
                        if sd > 0.0 && sd.is_finite() {
                            Ok(factor * sd)
                        } else {
                            Err(Error::DegenerateSample { axis })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            BandwidthRule::Fixed(h) => {
                if h.len() != dim || h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::config("fixed bandwidths must be positive, one per axis"));
                }
                h.clone()
            }
        };

        let x_dims = dim - 1;
        let q = rule.order();
        let (grid_xi, grid_xj, grid_w) = if x_dims == 2 {
            let mut xi = Vec::with_capacity(q * q);
            let mut xj = Vec::with_capacity(q * q);
            let mut w = Vec::with_capacity(q * q);
            for a in 0..q {
                for b in 0..q {
                    xi.push(rule.nodes(0)[a]);
                    xj.push(rule.nodes(1)[b]);
                    w.push(rule.weights(0)[a] * rule.weights(1)[b]);
                }
            }
            (xi, xj, w)
        } else {
            let xs = rule.nodes(0).to_vec();
            (xs.clone(), xs, rule.weights(0).to_vec())
        };

        let mut pd = PilotDensity {
            cube: cube.clone(),
            x_dims,
            n1,
            centers,
            bandwidths,
            clip,
            scale: 1.0,
            rule: rule.clone(),
            grid_xi,
            grid_xj,
            grid_w,
            grid_kernels: Vec::new(),
            cache: RwLock::new(HashMap::new()),
        };
        pd.grid_kernels = pd.build_grid_kernels();
        pd.scale = pd.solve_scale()?;
        Ok(pd)
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn x_dims(&self) -> usize {
        self.x_dims
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn clip(&self) -> ClipConfig {
        self.clip
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Reflected 1-D Gaussian kernel of center `c` on `axis`.
    #[inline]
    fn axis_kernel(&self, axis: usize, x: f64, c: f64) -> f64 {
        let h = self.bandwidths[axis];
        let lo = self.cube.lo()[axis];
        let hi = self.cube.hi()[axis];
        let g = |d: f64| {
            let z = d / h;
            (-0.5 * z * z).exp()
        };
        INV_SQRT_2PI / h * (g(x - c) + g(x + c - 2.0 * lo) + g(x + c - 2.0 * hi))
    }

    fn build_grid_kernels(&self) -> Vec<f64> {
        let q = self.rule.order();
        let g = self.grid_w.len();
        let mut out = vec![0.0; self.n1 * g];
        for c in 0..self.n1 {
            let ki: Vec<f64> = self
                .rule
                .nodes(0)
                .iter()
                .map(|&x| self.axis_kernel(0, x, self.centers[0][c]))
                .collect();
            let row = &mut out[c * g..(c + 1) * g];
            if self.x_dims == 2 {
                let kj: Vec<f64> = self
                    .rule
                    .nodes(1)
                    .iter()
                    .map(|&x| self.axis_kernel(1, x, self.centers[1][c]))
                    .collect();
                for a in 0..q {
                    for b in 0..q {
                        row[a * q + b] = ki[a] * kj[b];
                    }
                }
            } else {
                row.copy_from_slice(&ki);
            }
        }
        out
    }

    /// Unscaled, unclipped kernel sum on the `x`-grid at fixed `y`.
    fn raw_on_grid(&self, y: f64) -> Vec<f64> {
        let g = self.grid_w.len();
        let y_axis = self.x_dims;
        let inv_n = 1.0 / self.n1 as f64;
        let mut acc = vec![0.0; g];
        for c in 0..self.n1 {
            let w = self.axis_kernel(y_axis, y, self.centers[y_axis][c]) * inv_n;
            if w == 0.0 {
                continue;
            }
            let row = &self.grid_kernels[c * g..(c + 1) * g];
            for (a, &k) in acc.iter_mut().zip(row) {
                *a += w * k;
            }
        }
        acc
    }

    #[inline]
    fn clipped(&self, raw: f64, scale: f64) -> f64 {
        (scale * raw).clamp(self.clip.lo, self.clip.hi)
    }

    /// Finds `s` with `∫ clip(s · raw) = 1` under the cube rule.
    fn solve_scale(&self) -> Result<f64> {
        let y_axis = self.x_dims;
        let ys = self.rule.nodes(y_axis);
        let wy = self.rule.weights(y_axis);
        let raws: Vec<Vec<f64>> = ys.iter().map(|&y| self.raw_on_grid(y)).collect();
        let total = |s: f64| -> f64 {
            raws.iter()
                .zip(wy)
                .map(|(raw, &w)| {
                    w * raw
                        .iter()
                        .zip(&self.grid_w)
                        .map(|(&r, &gw)| gw * self.clipped(r, s))
                        .sum::<f64>()
                })
                .sum()
        };
        let vol = self.cube.volume();
        if self.clip.lo * vol > 1.0 {
            return Err(Error::config(format!(
                "clip_lo {} times cube volume {vol} exceeds one",
                self.clip.lo
            )));
        }
        let (mut lo, mut hi) = (-700.0f64, 700.0f64);
        if total(hi.exp()) < 1.0 {
            return Err(Error::Numeric(
                "pilot density cannot be normalized under the clip bounds".into(),
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid.exp()) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(hi.exp())
    }

    fn raw_at(&self, point: &[f64]) -> f64 {
        let inv_n = 1.0 / self.n1 as f64;
        (0..self.n1)
            .map(|c| {
                (0..self.cube.dim())
                    .map(|a| self.axis_kernel(a, point[a], self.centers[a][c]))
                    .product::<f64>()
            })
            .sum::<f64>()
            * inv_n
    }

    /// `f̂(point)`, always within the clip bounds.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        self.cube.check(point)?;
        Ok(self.clipped(self.raw_at(point), self.scale))
    }

    fn compute_moments(&self, y: f64) -> CondMoments {
        let raw = self.raw_on_grid(y);
        let (mut mass, mut si, mut sj) = (0.0, 0.0, 0.0);
        for (g, &r) in raw.iter().enumerate() {
            let f = self.grid_w[g] * self.clipped(r, self.scale);
            mass += f;
            si += self.grid_xi[g] * f;
            sj += self.grid_xj[g] * f;
        }
        CondMoments {
            mass,
            mean_i: si / mass,
            mean_j: sj / mass,
        }
    }

    /// Memoized `∫ f̂ dx`, `m_i(f̂, y)`, `m_j(f̂, y)` under the pilot's own rule.
    pub fn cond_moments(&self, y: f64) -> CondMoments {
        let key = y.to_bits();
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return *m;
        }
        let m = self.compute_moments(y);
        self.cache.write().expect("cache lock").insert(key, m);
        m
    }

    /// Fills the memo for every `y` in `ys`.
    pub fn precompute(&self, ys: &[f64]) {
        let missing: Vec<f64> = {
            let cache = self.cache.read().expect("cache lock");
            ys.iter().copied().filter(|y| !cache.contains_key(&y.to_bits())).collect()
        };
        let computed: Vec<(u64, CondMoments)> = missing
            .iter()
            .map(|&y| (y.to_bits(), self.compute_moments(y)))
            .collect();
        self.cache.write().expect("cache lock").extend(computed);
    }

    /// `∫ f̂(x, y) dx` over the `x`-block using `rule`.
    pub fn marginal_xy(&self, y: f64, rule: &QuadratureRule) -> Result<f64> {
        self.x_integral(y, rule, |_| 1.0)
    }

    /// `m_axis(f̂, y)` where `axis` is 0 (`x_i`) or 1 (`x_j`).
    pub fn cond_mean(&self, y: f64, axis: usize, rule: &QuadratureRule) -> Result<f64> {
        if axis > 1 {
            return Err(Error::config("conditional mean axis must be 0 or 1"));
        }
        let coord = if self.x_dims == 2 { axis } else { 0 };
        let num = self.x_integral(y, rule, |p| p[coord])?;
        let den = self.marginal_xy(y, rule)?;
        Ok(num / den)
    }

    fn x_integral<F: Fn(&[f64]) -> f64>(&self, y: f64, rule: &QuadratureRule, g: F) -> Result<f64> {
        let dim = self.cube.dim();
        let mut fixed = self.cube.lo().to_vec();
        fixed[dim - 1] = y;
        self.cube.check(&fixed)?;
        let axes: Vec<usize> = (0..self.x_dims).collect();
        rule.integrate(
            |p| g(p) * self.clipped(self.raw_at(p), self.scale),
            &axes,
            &fixed,
        )
    }

    /// `∫ f̂` over the whole cube under the pilot's rule.
    pub fn total_mass(&self) -> f64 {
        let y_axis = self.x_dims;
        self.rule
            .nodes(y_axis)
            .iter()
            .zip(self.rule.weights(y_axis))
            .map(|(&y, &w)| w * self.compute_moments(y).mass)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, dim: usize, seed: u64) -> PairSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairSample::new(dim, (0..n * dim).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn fit_unit(sample: &PairSample, clip: ClipConfig) -> PilotDensity {
        let cube = Cube::unit(sample.dim());
        let rule = QuadratureRule::new(&cube, 16).unwrap();
        PilotDensity::fit(sample, &cube, &BandwidthRule::Silverman, clip, &rule).unwrap()
    }

    fn probe_grid(k: usize) -> Vec<[f64; 3]> {
        let at = |a: usize| (a as f64 + 0.5) / k as f64;
        let mut out = Vec::new();
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    out.push([at(a), at(b), at(c)]);
                }
            }
        }
        out
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sample(1000).unwrap(), (145, 855));
        assert_eq!(split_sample(100).unwrap(), (22, 78));
        assert_eq!(split_sample(20).unwrap(), (10, 10));
        assert!(matches!(split_sample(19), Err(Error::SampleTooSmall { .. })));
        for n in 20..3000 {
            let (n1, n2) = split_sample(n).unwrap();
            assert!(n2 >= n1 && n1 + n2 == n);
        }
    }

    #[test]
    fn normalized_and_clipped() {
        let clip = ClipConfig { lo: 0.05, hi: 20.0 };
        let pd = fit_unit(&uniform(300, 3, 1), clip);
        assert!((pd.total_mass() - 1.0).abs() < 1e-6);
        let rule = QuadratureRule::new(&Cube::unit(3), 16).unwrap();
        assert!((rule.integrate_all(|p| pd.eval(p).unwrap()).unwrap() - 1.0).abs() < 1e-6);
        for p in probe_grid(7) {
            let v = pd.eval(&p).unwrap();
            assert!((clip.lo..=clip.hi).contains(&v));
        }
        assert!(pd.eval(&[0.5, 0.5, 1.2]).is_err());
    }

    #[test]
    fn repeated_point_hits_clip_floor() {
        let sample = PairSample::new(3, [0.1, 0.1, 0.1].repeat(30)).unwrap();
        let cube = Cube::unit(3);
        let rule = QuadratureRule::new(&cube, 16).unwrap();
        let pd = PilotDensity::fit(&sample, &cube, &BandwidthRule::Fixed(vec![0.01; 3]), ClipConfig::default(), &rule)
            .unwrap();
        assert_eq!(pd.eval(&[1.0, 1.0, 1.0]).unwrap(), 1e-3);
    }

    #[test]
    fn degenerate_axis_rejected() {
        let mut s = uniform(50, 3, 2);
        let rows: Vec<Vec<f64>> = s.rows().map(|r| vec![r[0], 0.5, r[2]]).collect();
        s = PairSample::from_rows(&rows).unwrap();
        let cube = Cube::unit(3);
        let rule = QuadratureRule::new(&cube, 8).unwrap();
        assert!(matches!(
            PilotDensity::fit(&s, &cube, &BandwidthRule::Silverman, ClipConfig::default(), &rule),
            Err(Error::DegenerateSample { axis: 1 })
        ));
    }

    #[test]
    fn invalid_clip_rejected() {
        assert!(ClipConfig { lo: 0.0, hi: 1.0 }.validate().is_err());
        assert!(ClipConfig { lo: 2.0, hi: 1.0 }.validate().is_err());
        let cube = Cube::unit(3);
        let rule = QuadratureRule::new(&cube, 8).unwrap();
        let clip = ClipConfig { lo: 1.5, hi: 3.0 };
        assert!(PilotDensity::fit(&uniform(50, 3, 3), &cube, &BandwidthRule::Silverman, clip, &rule).is_err());
    }

    #[test]
    fn mirrored_data_gives_mirrored_pilot() {
        let base = uniform(40, 3, 4);
        let rows: Vec<Vec<f64>> = base
            .rows()
            .flat_map(|r| [r.to_vec(), vec![1.0 - r[0], r[1], r[2]]])
            .collect();
        let pd = fit_unit(&PairSample::from_rows(&rows).unwrap(), ClipConfig::default());
        for p in probe_grid(5) {
            let a = pd.eval(&p).unwrap();
            let b = pd.eval(&[1.0 - p[0], p[1], p[2]]).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn conditional_means_stay_in_range() {
        for seed in 0..100 {
            let pd = fit_unit(&uniform(30, 3, 100 + seed), ClipConfig::default());
            let rule = pd.rule().clone();
            for y in [0.0, 0.3, 0.77, 1.0] {
                for axis in 0..2 {
                    let m = pd.cond_mean(y, axis, &rule).unwrap();
                    assert!((0.0..=1.0).contains(&m));
                }
                let mass = pd.marginal_xy(y, &rule).unwrap();
                assert!(mass >= pd.clip().lo);
            }
        }
    }

    #[test]
    fn memoized_moments_match_direct_integrals() {
        let pd = fit_unit(&uniform(200, 3, 5), ClipConfig::default());
        let rule = pd.rule().clone();
        for y in [0.05, 0.5, 0.93] {
            let m = pd.cond_moments(y);
            assert!((m.mass - pd.marginal_xy(y, &rule).unwrap()).abs() < 1e-10);
            assert!((m.mean_i - pd.cond_mean(y, 0, &rule).unwrap()).abs() < 1e-10);
            assert!((m.mean_j - pd.cond_mean(y, 1, &rule).unwrap()).abs() < 1e-10);
            assert_eq!(pd.cond_moments(y), m);
        }
    }

    #[test]
    fn concentrated_mass_pulls_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![0.9 + 0.05 * (rng.random::<f64>() - 0.5), rng.random(), rng.random()])
            .collect();
        let pd = fit_unit(&PairSample::from_rows(&rows).unwrap(), ClipConfig::default());
        let m = pd.cond_mean(0.5, 0, pd.rule()).unwrap();
        assert!(m > 0.5 && m < 1.0, "{m}");
    }

    #[test]
    fn uniform_data_is_nearly_flat_at_5000() {
        let n = 5000;
        let pd = fit_unit(&uniform(n, 3, 7), ClipConfig::default());
        // Pointwise sd of a product-Gaussian estimate of a unit density:
        // sqrt(R(K)^3 / (n h_1 h_2 h_3)) with R(K) = 1 / (2 sqrt(pi)).
        let rk = 0.5 / std::f64::consts::PI.sqrt();
        let hprod: f64 = pd.bandwidths().iter().product();
        let sd = (rk.powi(3) / (n as f64 * hprod)).sqrt();
        let errs: Vec<f64> = probe_grid(5).iter().map(|p| pd.eval(p).unwrap() - 1.0).collect();
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        let worst = errs.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        assert!(rms <= 1.5 * sd, "rms {rms} vs sd {sd}");
        assert!(worst <= 5.0 * sd, "sup {worst} vs sd {sd}");
        let centre = pd.eval(&[0.5, 0.5, 0.5]).unwrap();
        assert!(centre.is_finite());
        let rule = pd.rule().clone();
        let m = pd.cond_mean(0.5, 0, &rule).unwrap();
        assert!((m - 0.5).abs() < 0.05);
    }

    #[test]
    fn sup_error_shrinks_with_more_data() {
        let median_sup = |n: usize| {
            let mut sups: Vec<f64> = (0..20)
                .map(|r| {
                    let pd = fit_unit(&uniform(n, 3, 1000 * n as u64 + r), ClipConfig::default());
                    probe_grid(5).iter().map(|p| (pd.eval(p).unwrap() - 1.0).abs()).fold(0.0, f64::max)
                })
                .collect();
            sups.sort_by(f64::total_cmp);
            0.5 * (sups[9] + sups[10])
        };
        let small = median_sup(500);
        let large = median_sup(5000);
        assert!(large <= small, "{large} > {small}");
    }

    #[test]
    fn diagonal_pilot_on_two_axes() {
        let pd = fit_unit(&uniform(300, 2, 9), ClipConfig::default());
        assert_eq!(pd.x_dims(), 1);
        assert!((pd.total_mass() - 1.0).abs() < 1e-6);
        let m = pd.cond_moments(0.4);
        assert_eq!(m.mean_i, m.mean_j);
    }
}
