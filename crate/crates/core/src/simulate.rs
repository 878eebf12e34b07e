//! Synthetic models with exact (quadrature) ground truth, and the Monte
//! Carlo studies built on them.
//!
//! Replication `r` of a study draws its data from
//! `derive_seed(derive_seed(seed, n), r)` and runs the estimator with the
//! next sub-stream, so a study is reproducible whatever order the
//! replications execute in.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{select_model_size, BasisModel};
use crate::error::{Error, Result};
use crate::estimator::{estimate_pair, Dataset, EstimatorConfig};
use crate::functionals::{FnEta, KernelProjection};
use crate::numeric::{derive_seed, mean, ols_slope, sample_covariance, sample_variance};
use crate::pilot::PairSample;
use crate::quadrature::{Cube, QuadratureRule};

/// Quadrature order of the ground-truth oracle.
pub const ORACLE_ORDER: usize = 48;
/// Largest `p` the tensor-quadrature oracle accepts for non-uniform models.
pub const ORACLE_MAX_P: usize = 4;
/// Minimum acceptance rate of the rejection samplers.
const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `X ~ U[0,1]^p`, `Y ~ U[0,1]`, all independent.
    IndependentUniform,
    /// `X` standard normal restricted to `[−a, a]^p`, `Y = βᵀX + σε`.
    TruncatedLinear,
    /// As the linear model with `Y = tanh(βᵀX) + σε`.
    NonlinearLink,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" | "independent-uniform" => Ok(ModelKind::IndependentUniform),
            "linear" | "truncated-linear" => Ok(ModelKind::TruncatedLinear),
            "nonlinear" | "nonlinear-link" => Ok(ModelKind::NonlinearLink),
            other => Err(Error::config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Half-width `a` of the `X` box `[−a, a]^p` of the link models.
    pub x_half_width: f64,
}

impl ModelSpec {
    pub fn independent_uniform(p: usize) -> Self {
        ModelSpec {
            kind: ModelKind::IndependentUniform,
            p,
            beta: vec![0.0; p],
            sigma: 1.0,
            x_half_width: 0.5,
        }
    }

    pub fn truncated_linear(beta: Vec<f64>, sigma: f64) -> Self {
        ModelSpec {
            kind: ModelKind::TruncatedLinear,
            p: beta.len(),
            beta,
            sigma,
            x_half_width: 2.0,
        }
    }

    pub fn nonlinear_link(beta: Vec<f64>, sigma: f64) -> Self {
        ModelSpec {
            kind: ModelKind::NonlinearLink,
            ..Self::truncated_linear(beta, sigma)
        }
    }

    /// The default instance of `kind` in dimension `p`. The link models use
    /// `β = (1, 1, 0, …)` (or `(1)` when `p = 1`) and `σ = 0.5`, for which
    /// `E[X|Y]` stays on the `β` line exactly.
    pub fn default_for(kind: ModelKind, p: usize) -> Self {
        let beta: Vec<f64> = (0..p).map(|k| if k < 2 { 1.0 } else { 0.0 }).collect();
        match kind {
            ModelKind::IndependentUniform => Self::independent_uniform(p),
            ModelKind::TruncatedLinear => Self::truncated_linear(beta, 0.5),
            ModelKind::NonlinearLink => Self::nonlinear_link(beta, 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("model needs p >= 1"));
        }
        if self.kind == ModelKind::IndependentUniform {
            return Ok(());
        }
        if self.beta.len() != self.p {
            return Err(Error::config("beta must have p entries"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) || self.beta.iter().all(|&b| b == 0.0) {
            return Err(Error::config("beta must be finite and non-zero"));
        }
        if !(self.x_half_width > 0.0 && self.x_half_width.is_finite()) {
            return Err(Error::config("truncation half-width must be positive"));
        }
        Ok(())
    }

    /// `[lo, hi]` of `X` coordinates.
    pub fn x_range(&self) -> [f64; 2] {
        match self.kind {
            ModelKind::IndependentUniform => [0.0, 1.0],
            _ => [-self.x_half_width, self.x_half_width],
        }
    }

    /// `[lo, hi]` of `Y`: the range of the regression function widened by `4σ`.
    pub fn y_range(&self) -> [f64; 2] {
        match self.kind {
            ModelKind::IndependentUniform => [0.0, 1.0],
            ModelKind::TruncatedLinear => {
                let b = self.beta.iter().map(|v| v.abs()).sum::<f64>() * self.x_half_width + 4.0 * self.sigma;
                [-b, b]
            }
            ModelKind::NonlinearLink => {
                let b = 1.0 + 4.0 * self.sigma;
                [-b, b]
            }
        }
    }

    fn link(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.beta.iter().zip(x).map(|(b, v)| b * v).sum();
        match self.kind {
            ModelKind::NonlinearLink => lin.tanh(),
            _ => lin,
        }
    }

    /// Joint density of `(X, Y)` up to its normalizing constant, on the box.
    pub fn unnormalized_density(&self, x: &[f64], y: f64) -> f64 {
        match self.kind {
            ModelKind::IndependentUniform => 1.0,
            _ => {
                let sx: f64 = x.iter().map(|v| v * v).sum();
                let r = (y - self.link(x)) / self.sigma;
                (-0.5 * (sx + r * r)).exp()
            }
        }
    }
}

/// Draws `n` rows of `(X, Y)`.
pub fn generate(model: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = model.p;
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    match model.kind {
        ModelKind::IndependentUniform => {
            for _ in 0..n {
                for _ in 0..p {
                    x.push(rng.random::<f64>());
                }
                y.push(rng.random::<f64>());
            }
        }
        _ => {
            let a = model.x_half_width;
            let [ylo, yhi] = model.y_range();
            let mut row = vec![0.0f64; p];
            let mut attempts = 0u64;
            while y.len() < n {
                attempts += 1;
                if attempts >= 10_000 && (y.len() as f64) < MIN_ACCEPTANCE * attempts as f64 {
                    return Err(Error::InfeasibleTruncation {
                        rate: y.len() as f64 / attempts as f64,
                    });
                }
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let eps: f64 = rng.sample(StandardNormal);
                if row.iter().any(|v: &f64| v.abs() > a) {
                    continue;
                }
                let yv = model.link(&row) + model.sigma * eps;
                if yv < ylo || yv > yhi {
                    continue;
                }
                x.extend_from_slice(&row);
                y.push(yv);
            }
        }
    }
    Dataset::new(p, x, y)
}

/// Ground truth for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub p: usize,
    /// `E[X]`.
    pub mean: Vec<f64>,
    /// `T_ij = E[E[X_i|Y] E[X_j|Y]]`.
    pub t: Vec<Vec<f64>>,
    /// `Cov(E[X|Y])`.
    pub cov: Vec<Vec<f64>>,
    /// `C_ij = Var(H1(f, X_i, X_j, Y))`.
    pub c: Vec<Vec<f64>>,
}

/// Exact ground truth by tensor quadrature of the truncated density.
pub fn oracle(model: &ModelSpec, order: usize) -> Result<Oracle> {
    model.validate()?;
    let p = model.p;
    if model.kind == ModelKind::IndependentUniform {
        // E[X|Y] = 1/2; Var(X_i/2 + X_j/2) = 1/24 and Var(X_i − 1/4) = 1/12.
        let c = (0..p)
            .map(|i| (0..p).map(|j| if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 }).collect())
            .collect();
        return Ok(Oracle {
            p,
            mean: vec![0.5; p],
            t: vec![vec![0.25; p]; p],
            cov: vec![vec![0.0; p]; p],
            c,
        });
    }
    if p > ORACLE_MAX_P {
        return Err(Error::config(format!(
            "quadrature oracle supports p <= {ORACLE_MAX_P}, got {p}"
        )));
    }
    let [xlo, xhi] = model.x_range();
    let [ylo, yhi] = model.y_range();
    let mut lo = vec![xlo; p];
    let mut hi = vec![xhi; p];
    lo.push(ylo);
    hi.push(yhi);
    let cube = Cube::new(lo, hi)?;
    let rule = QuadratureRule::new(&cube, order)?;
    let x_axes: Vec<usize> = (0..p).collect();

    // Per y node: mass, first moments and second moments of X.
    struct Slice {
        w: f64,
        mass: f64,
        m1: Vec<f64>,
        m2: Vec<f64>,
    }
    let slices: Vec<Slice> = rule
        .nodes(p)
        .par_iter()
        .zip(rule.weights(p).par_iter())
        .map(|(&y, &wy)| {
            let mut fixed = cube.lo().to_vec();
            fixed[p] = y;
            let mut mass = 0.0;
            let mut m1 = vec![0.0; p];
            let mut m2 = vec![0.0; p * p];
            rule.for_each_node(&x_axes, &fixed, |pt, w| {
                let f = w * model.unnormalized_density(&pt[..p], y);
                mass += f;
                for a in 0..p {
                    m1[a] += f * pt[a];
                    for b in 0..p {
                        m2[a * p + b] += f * pt[a] * pt[b];
                    }
                }
                true
            })?;
            m1.iter_mut().for_each(|v| *v /= mass);
            m2.iter_mut().for_each(|v| *v /= mass);
            Ok(Slice { w: wy, mass, m1, m2 })
        })
        .collect::<Result<Vec<_>>>()?;
    let z: f64 = slices.iter().map(|s| s.w * s.mass).sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Numeric("model density has no mass on its box".into()));
    }
    let expect = |g: &dyn Fn(&Slice) -> f64| slices.iter().map(|s| s.w * s.mass * g(s)).sum::<f64>() / z;

    let mean_x: Vec<f64> = (0..p).map(|a| expect(&|s| s.m1[a])).collect();
    let mut t = vec![vec![0.0; p]; p];
    let mut cov = vec![vec![0.0; p]; p];
    let mut c = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let tij = expect(&|s| s.m1[i] * s.m1[j]);
            t[i][j] = tij;
            // Centered version of the same integral, to avoid cancellation.
            cov[i][j] = expect(&|s| (s.m1[i] - mean_x[i]) * (s.m1[j] - mean_x[j]));
            let h1_sq = expect(&|s| {
                let (mi, mj) = (s.m1[i], s.m1[j]);
                mj * mj * s.m2[i * p + i] + mi * mi * s.m2[j * p + j] + 2.0 * mi * mj * s.m2[i * p + j]
                    - 3.0 * mi * mi * mj * mj
            });
            c[i][j] = h1_sq - tij * tij;
        }
    }
    Ok(Oracle {
        p,
        mean: mean_x,
        t,
        cov,
        c,
    })
}

/// One replication of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub n: usize,
    pub rep: usize,
    pub t_hat: f64,
    pub oracle: f64,
    pub sq_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub model: ModelSpec,
    pub pair: (usize, usize),
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub oracle_t: f64,
    pub oracle_c: f64,
    pub mse: Vec<f64>,
    /// `n · MSE` per grid point.
    pub n_mse: Vec<f64>,
    pub coverage: Vec<f64>,
    /// Least-squares slope of `log MSE` on `log n`; absent for a single `n`.
    pub slope: Option<f64>,
    pub seed: u64,
    /// Data seeds of the first replication at each grid point.
    pub first_data_seeds: Vec<u64>,
    #[serde(skip)]
    pub records: Vec<StudyRecord>,
}

fn rep_seeds(seed: u64, n: usize, rep: usize) -> (u64, u64) {
    let base = derive_seed(derive_seed(seed, n as u64), rep as u64);
    (base, derive_seed(base, 1))
}

fn run_study(
    model: &ModelSpec,
    pair: (usize, usize),
    n_grid: &[usize],
    reps: usize,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<StudyResult> {
    model.validate()?;
    cfg.validate()?;
    let (i, j) = pair;
    if i >= model.p || j >= model.p {
        return Err(Error::config(format!("pair ({i}, {j}) out of range for p = {}", model.p)));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sample-size grid must be non-empty and strictly ascending"));
    }
    let truth = oracle(model, ORACLE_ORDER)?;
    let (oracle_t, oracle_c) = (truth.t[i][j], truth.c[i][j]);
    let mut records = Vec::with_capacity(n_grid.len() * reps);
    for &n in n_grid {
        let batch: Vec<StudyRecord> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let (data_seed, est_seed) = rep_seeds(seed, n, rep);
                let data = generate(model, n, data_seed)?;
                let rep_cfg = EstimatorConfig {
                    seed: est_seed,
                    ..cfg.clone()
                };
                let e = estimate_pair(i, j, &data, &rep_cfg)?;
                Ok(StudyRecord {
                    n,
                    rep,
                    t_hat: e.t_hat,
                    oracle: oracle_t,
                    sq_err: (e.t_hat - oracle_t).powi(2),
                    ci_lo: e.ci_lo,
                    ci_hi: e.ci_hi,
                    covered: e.ci_lo <= oracle_t && oracle_t <= e.ci_hi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(batch);
    }
    let per_n = |n: usize| records.iter().filter(move |r| r.n == n);
    let mse: Vec<f64> = n_grid
        .iter()
        .map(|&n| mean(&per_n(n).map(|r| r.sq_err).collect::<Vec<_>>()))
        .collect();
    let coverage = n_grid
        .iter()
        .map(|&n| per_n(n).filter(|r| r.covered).count() as f64 / reps as f64)
        .collect();
    let slope = (n_grid.len() > 1).then(|| {
        let lx: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = mse.iter().map(|m| m.ln()).collect();
        ols_slope(&lx, &ly)
    });
    Ok(StudyResult {
        model: model.clone(),
        pair,
        n_grid: n_grid.to_vec(),
        reps,
        oracle_t,
        oracle_c,
        n_mse: n_grid.iter().zip(&mse).map(|(&n, m)| n as f64 * m).collect(),
        mse,
        coverage,
        slope,
        seed,
        first_data_seeds: n_grid.iter().map(|&n| rep_seeds(seed, n, 0).0).collect(),
        records,
    })
}

/// Replicates [`estimate_pair`] over a grid of sample sizes and fits the
/// slope of `log MSE` against `log n`.
pub fn rate_study(
    model: &ModelSpec,
    pair: (usize, usize),
    n_grid: &[usize],
    reps: usize,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<StudyResult> {
    if reps < 100 {
        return Err(Error::config(format!("rate study needs at least 100 replications, got {reps}")));
    }
    run_study(model, pair, n_grid, reps, cfg, seed)
}

/// Fraction of replications whose interval (level `1 − cfg.delta`) covers
/// the oracle `T_ij`; reported in `coverage[0]`.
pub fn coverage_study(
    model: &ModelSpec,
    pair: (usize, usize),
    n: usize,
    reps: usize,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<StudyResult> {
    if reps < 200 {
        return Err(Error::config(format!("coverage study needs at least 200 replications, got {reps}")));
    }
    run_study(model, pair, &[n], reps, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingResult {
    pub n: usize,
    pub reps: usize,
    /// Empirical covariance of the U-part and the linear part.
    pub cov: f64,
    pub cov_se: f64,
    pub u_mean: f64,
    pub u_se: f64,
    pub linear_mean: f64,
    pub linear_se: f64,
    pub seed: u64,
}

/// Probe weight of the Hoeffding diagnostic, on the pair's own box.
fn probe_eta(s: f64, t: f64, y: f64) -> f64 {
    1.0 + s * t + y
}

type PairDensity<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Density of `(X_i, X_j, Y)` under the model, normalized on its box.
fn pair_density(model: &ModelSpec, i: usize, j: usize, order: usize) -> Result<PairDensity<'_>> {
    let p = model.p;
    let [xlo, xhi] = model.x_range();
    let [ylo, yhi] = model.y_range();
    let cube = Cube::new(vec![xlo, xlo, ylo], vec![xhi, xhi, yhi])?;
    if model.kind == ModelKind::IndependentUniform {
        let level = 1.0 / cube.volume();
        return Ok(Box::new(move |_| level));
    }
    let others: Vec<usize> = (0..p).filter(|&k| k != i && k != j).collect();
    let other_rule = if others.is_empty() {
        None
    } else {
        Some(QuadratureRule::new(&Cube::new(vec![xlo; others.len()], vec![xhi; others.len()])?, order)?)
    };
    let raw = move |pt: &[f64]| -> f64 {
        let mut x = vec![0.0; p];
        x[i] = pt[0];
        x[j] = pt[1];
        let y = pt[2];
        match &other_rule {
            None => model.unnormalized_density(&x, y),
            Some(rule) => {
                let mut acc = 0.0;
                let _ = rule.for_each_node(&rule.all_axes(), rule.cube().lo(), |o, w| {
                    for (slot, &k) in others.iter().enumerate() {
                        x[k] = o[slot];
                    }
                    acc += w * model.unnormalized_density(&x, y);
                    true
                });
                acc
            }
        }
    };
    let z = QuadratureRule::new(&cube, order)?.integrate_all(&raw)?;
    Ok(Box::new(move |pt: &[f64]| raw(pt) / z))
}

/// Splits θ̂ for the probe weight `η = 1 + x_i1 x_j2 + y` into its
/// degenerate U-part and linear part under the known model density, and
/// reports their empirical covariance over replications. Uses the pair
/// `(0, 1)` on the model's own box.
pub fn hoeffding_diagnostic(
    model: &ModelSpec,
    n: usize,
    reps: usize,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<HoeffdingResult> {
    if reps < 200 {
        return Err(Error::config(format!("Hoeffding diagnostic needs at least 200 replications, got {reps}")));
    }
    if n < 2 {
        return Err(Error::SampleTooSmall { got: n, min: 2 });
    }
    model.validate()?;
    cfg.validate()?;
    if model.p < 2 {
        return Err(Error::config("Hoeffding diagnostic needs p >= 2"));
    }
    if model.kind != ModelKind::IndependentUniform && model.p > ORACLE_MAX_P {
        return Err(Error::config(format!("Hoeffding diagnostic supports p <= {ORACLE_MAX_P}")));
    }
    let [xlo, xhi] = model.x_range();
    let [ylo, yhi] = model.y_range();
    let cube = Cube::new(vec![xlo, xlo, ylo], vec![xhi, xhi, yhi])?;
    let rule = QuadratureRule::new(&cube, cfg.quad_order)?;
    let basis = BasisModel::graded(&cube, select_model_size(n, cfg.size_rule))?;
    let eta = FnEta(probe_eta);
    let f = pair_density(model, 0, 1, cfg.quad_order)?;
    let proj = KernelProjection::new(&f, &eta, &basis, &rule)?;

    let parts: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (data_seed, _) = rep_seeds(seed, n, rep);
            let data = generate(model, n, data_seed)?;
            let flat: Vec<f64> = (0..n).flat_map(|r| [data.x(r, 0), data.x(r, 1), data.y()[r]]).collect();
            let sample = PairSample::new(3, flat)?;
            let h = proj.parts(&eta, &sample, &basis, &rule)?;
            Ok((h.u_part, h.linear))
        })
        .collect::<Result<Vec<_>>>()?;
    let u: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let l: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let r = reps as f64;
    let (um, lm) = (mean(&u), mean(&l));
    let products: Vec<f64> = u.iter().zip(&l).map(|(a, b)| (a - um) * (b - lm)).collect();
    Ok(HoeffdingResult {
        n,
        reps,
        cov: sample_covariance(&u, &l),
        cov_se: (sample_variance(&products) / r).sqrt(),
        u_mean: um,
        u_se: (sample_variance(&u) / r).sqrt(),
        linear_mean: lm,
        linear_se: (sample_variance(&l) / r).sqrt(),
        seed,
    })
}

/// Rejection sampler for a density `f ≤ bound` on `cube`; rows are
/// returned flat in cube coordinates.
pub fn sample_density<F>(f: F, cube: &Cube, bound: f64, n: usize, seed: u64) -> Result<PairSample>
where
    F: Fn(&[f64]) -> f64,
{
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::config("envelope bound must be positive"));
    }
    let dim = cube.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(n * dim);
    let mut point = vec![0.0; dim];
    let mut accepted = 0usize;
    let mut attempts = 0u64;
    while accepted < n {
        attempts += 1;
        if attempts >= 10_000 && (accepted as f64) < MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::InfeasibleTruncation {
                rate: accepted as f64 / attempts as f64,
            });
        }
        for (k, v) in point.iter_mut().enumerate() {
            *v = cube.lo()[k] + cube.len(k) * rng.random::<f64>();
        }
        let fv = f(&point);
        if !(fv >= 0.0 && fv <= bound * (1.0 + 1e-12)) {
            return Err(Error::Numeric(format!("density {fv} at {point:?} violates the envelope")));
        }
        if rng.random::<f64>() * bound < fv {
            flat.extend_from_slice(&point);
            accepted += 1;
        }
    }
    PairSample::new(dim, flat)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl StudyResult {
    /// One row per replication: `n, rep, t_hat, oracle, sq_err, ci_lo, ci_hi, covered`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Data(format!("csv: {e}")))?;
        }
        w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(format!("cannot serialize summary: {e}")))
    }
}
