//! Entry-wise estimation of `T_ij = E[E[X_i|Y] E[X_j|Y]]`, the matrix
//! `Cov(E[X|Y])`, its asymptotic covariance and e.d.r. directions.
//!
//! Every entry is estimated on the unit cube after an affine map of the
//! data box of its columns, then mapped back. All pairs share one random
//! split of the rows into a pilot part `D1` and an estimation part `D2`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{select_model_size, BasisModel, SizeRule};
use crate::error::{Error, Result};
use crate::functionals::{h1_values, linear_estimate, quad_estimate, H2Eta};
use crate::numeric::{mean, normal_quantile, sample_covariance, sample_variance};
use crate::pilot::{split_sample, BandwidthRule, ClipConfig, PairSample, PilotDensity};
use crate::quadrature::{Cube, QuadratureRule, DEFAULT_ORDER};

/// Smallest sample the estimator accepts.
pub const MIN_SAMPLE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Fixed `[lo, hi]` per coordinate (the `p` columns of `X`, then `Y`).
    /// When absent each column gets its data range widened by `margin`.
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Relative widening of data-driven column ranges on each side.
    pub margin: f64,
    pub size_rule: SizeRule,
    pub quad_order: usize,
    /// Fixed bandwidths are on the unit scale, one per coordinate (`X` columns, then `Y`).
    pub bandwidth: BandwidthRule,
    pub clip: ClipConfig,
    /// Miscoverage `δ`: intervals have nominal level `1 − δ`.
    pub delta: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            bounds: None,
            margin: 0.05,
            size_rule: SizeRule::Sqrt,
            quad_order: DEFAULT_ORDER,
            bandwidth: BandwidthRule::Silverman,
            clip: ClipConfig::default(),
            delta: 0.05,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin must be finite and non-negative"));
        }
        if self.quad_order < 2 {
            return Err(Error::config("quadrature order must be at least 2"));
        }
        if let SizeRule::Fixed(0) = self.size_rule {
            return Err(Error::config("fixed basis size must be at least 1"));
        }
        if let BandwidthRule::Fixed(h) = &self.bandwidth {
            if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config("fixed bandwidths must be positive"));
            }
        }
        if let Some(b) = &self.bounds {
            if b.iter().any(|&[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                return Err(Error::config("bounds need finite lo < hi"));
            }
        }
        self.clip.validate()
    }

    /// `z_{1−δ/2}`.
    pub fn z(&self) -> f64 {
        normal_quantile(1.0 - self.delta / 2.0)
    }
}

/// `n` observations of `(X ∈ ℝ^p, Y ∈ ℝ)`; `x` is row-major `n × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("need at least one X column"));
        }
        if x.len() != y.len() * p {
            return Err(Error::Data(format!(
                "X has {} values, expected {} rows times {p} columns",
                x.len(),
                y.len()
            )));
        }
        if let Some(k) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            let row = if k < x.len() { k / p } else { k - x.len() };
            return Err(Error::Data(format!("non-finite value in row {row}")));
        }
        Ok(Dataset { n: y.len(), p, x, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.p + col]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.x(r, col)).collect()
    }

    /// Column `col` with `col == p` meaning `Y`.
    fn coordinate(&self, col: usize) -> Vec<f64> {
        if col == self.p {
            self.y.clone()
        } else {
            self.x_column(col)
        }
    }
}

/// Affine map `x = lo + scale · u` between a column and `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMap {
    pub lo: f64,
    pub scale: f64,
}

impl AxisMap {
    fn to_unit(self, x: f64) -> f64 {
        // Points on a face can land a rounding error outside [0, 1].
        ((x - self.lo) / self.scale).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub t_hat: f64,
    pub c_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n1: usize,
    pub n2: usize,
    /// Basis size actually used.
    pub m: usize,
    /// The linear and quadratic parts of `t_hat` on the unit-cube scale.
    pub linear_part: f64,
    pub quadratic_part: f64,
}

/// Shared state for all pairs: the row split, column maps and mapped means.
struct Prepared<'a> {
    data: &'a Dataset,
    cfg: &'a EstimatorConfig,
    d1_rows: Vec<usize>,
    d2_rows: Vec<usize>,
    /// One map per coordinate, `Y` last.
    maps: Vec<AxisMap>,
    /// Full-sample means of the mapped `X` columns.
    unit_means: Vec<f64>,
}

fn column_map(values: &[f64], margin: f64, col: usize) -> Result<AxisMap> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return Err(Error::DegenerateSample { axis: col });
    }
    Ok(AxisMap {
        lo: lo - margin * range,
        scale: range * (1.0 + 2.0 * margin),
    })
}

impl<'a> Prepared<'a> {
    fn new(data: &'a Dataset, cfg: &'a EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        if data.n < MIN_SAMPLE {
            return Err(Error::SampleTooSmall {
                got: data.n,
                min: MIN_SAMPLE,
            });
        }
        let (n1, _) = split_sample(data.n)?;
        let maps = (0..=data.p)
            .map(|col| {
                let values = data.coordinate(col);
                match &cfg.bounds {
                    None => column_map(&values, cfg.margin, col),
                    Some(b) => {
                        if b.len() != data.p + 1 {
                            return Err(Error::config(format!(
                                "bounds cover {} coordinates, data has {}",
                                b.len(),
                                data.p + 1
                            )));
                        }
                        let [lo, hi] = b[col];
                        let cube = Cube::new(vec![lo], vec![hi])?;
                        if let Some(v) = values.iter().find(|v| !cube.contains(&[**v])) {
                            return Err(Error::OutsideCube { point: vec![*v] });
                        }
                        Ok(AxisMap { lo, scale: hi - lo })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let unit_means = (0..data.p)
            .map(|c| {
                let m = maps[c];
                mean(&data.x_column(c).iter().map(|&x| m.to_unit(x)).collect::<Vec<_>>())
            })
            .collect();
        let mut order: Vec<usize> = (0..data.n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let d2_rows = order.split_off(n1);
        Ok(Prepared {
            data,
            cfg,
            d1_rows: order,
            d2_rows,
            maps,
            unit_means,
        })
    }

    fn pair_sample(&self, rows: &[usize], i: usize, j: usize) -> Result<PairSample> {
        let (mi, mj, my) = (self.maps[i], self.maps[j], self.maps[self.data.p]);
        let dim = if i == j { 2 } else { 3 };
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for &r in rows {
            flat.push(mi.to_unit(self.data.x(r, i)));
            if i != j {
                flat.push(mj.to_unit(self.data.x(r, j)));
            }
            flat.push(my.to_unit(self.data.y[r]));
        }
        PairSample::new(dim, flat)
    }

    /// The estimate for `(i, j)` with `i <= j` together with the per-row
    /// `H1` values on `D2` in original units.
    fn pair(&self, i: usize, j: usize) -> Result<(PairEstimate, Vec<f64>)> {
        debug_assert!(i <= j);
        let dim = if i == j { 2 } else { 3 };
        let cube = Cube::unit(dim);
        let rule = QuadratureRule::new(&cube, self.cfg.quad_order)?;
        let d1 = self.pair_sample(&self.d1_rows, i, j)?;
        let d2 = self.pair_sample(&self.d2_rows, i, j)?;
        let bandwidth = match &self.cfg.bandwidth {
            BandwidthRule::Silverman => BandwidthRule::Silverman,
            BandwidthRule::Fixed(h) => {
                if h.len() != self.data.p + 1 {
                    return Err(Error::config(format!(
                        "fixed bandwidths: need {} values (X columns then Y), got {}",
                        self.data.p + 1,
                        h.len()
                    )));
                }
                let mut v = vec![h[i]];
                if i != j {
                    v.push(h[j]);
                }
                v.push(h[self.data.p]);
                BandwidthRule::Fixed(v)
            }
        };
        let pd = PilotDensity::fit(&d1, &cube, &bandwidth, self.cfg.clip, &rule)?;
        let m = select_model_size(d2.len(), self.cfg.size_rule);
        let model = BasisModel::graded_symmetric(&cube, m)?;

        let linear = linear_estimate(&pd, &d2)?;
        let quad = quad_estimate(&H2Eta::new(&pd), &d2, &model, &rule)?;
        let t_unit = linear + quad.value;

        let (mi, mj) = (self.maps[i], self.maps[j]);
        let (ui, uj) = (self.unit_means[i], self.unit_means[j]);
        let to_original = |unit: f64, xi: f64, xj: f64| {
            mi.lo * mj.lo + mi.scale * mj.lo * xi + mj.scale * mi.lo * xj + mi.scale * mj.scale * unit
        };
        let t_hat = to_original(t_unit, ui, uj);
        let h1_unit = h1_values(&pd, &d2)?;
        let h1: Vec<f64> = d2
            .rows()
            .zip(&h1_unit)
            .map(|(r, &h)| {
                let (xi, xj) = if i == j { (r[0], r[0]) } else { (r[0], r[1]) };
                to_original(h, xi, xj)
            })
            .collect();
        let n2 = d2.len();
        let c_hat = sample_variance(&h1).max(0.0);
        let half = self.cfg.z() * (c_hat / n2 as f64).sqrt();
        if !t_hat.is_finite() || !c_hat.is_finite() {
            return Err(Error::NonFinite {
                context: "pair estimate",
                location: vec![i as f64, j as f64],
            });
        }
        Ok((
            PairEstimate {
                i,
                j,
                t_hat,
                c_hat,
                ci_lo: t_hat - half,
                ci_hi: t_hat + half,
                n1: d1.len(),
                n2,
                m: model.size(),
                linear_part: linear,
                quadratic_part: quad.value,
            },
            h1,
        ))
    }

    /// `Cov(E[X_i|Y], E[X_j|Y])` from the unit-scale estimate, which avoids
    /// cancelling the large location terms of `T_ij − X̄_i X̄_j`.
    fn covariance_entry(&self, est: &PairEstimate) -> f64 {
        let (mi, mj) = (self.maps[est.i], self.maps[est.j]);
        let t_unit = est.linear_part + est.quadratic_part;
        mi.scale * mj.scale * (t_unit - self.unit_means[est.i] * self.unit_means[est.j])
    }
}

/// Estimate of `T_ij`; `(i, j)` and `(j, i)` give bit-identical results.
pub fn estimate_pair(i: usize, j: usize, data: &Dataset, cfg: &EstimatorConfig) -> Result<PairEstimate> {
    if i >= data.p || j >= data.p {
        return Err(Error::config(format!("pair ({i}, {j}) out of range for p = {}", data.p)));
    }
    let prep = Prepared::new(data, cfg)?;
    Ok(prep.pair(i.min(j), i.max(j))?.0)
}

/// Unbiased sample variance of `H1(f̂, ·)` over `d2`, on the sample's own scale.
pub fn asymptotic_variance(pd: &PilotDensity, d2: &PairSample) -> Result<f64> {
    if d2.len() < 2 {
        return Err(Error::SampleTooSmall { got: d2.len(), min: 2 });
    }
    Ok(sample_variance(&h1_values(pd, d2)?).max(0.0))
}

/// Half-vectorization: the lower triangle stacked column by column.
pub fn vech(mat: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = mat.len();
    if mat.iter().any(|r| r.len() != p) {
        return Err(Error::config("vech needs a square matrix"));
    }
    for a in 0..p {
        for b in 0..a {
            let tol = 1e-9 * mat[a][b].abs().max(mat[b][a].abs()).max(1.0);
            if (mat[a][b] - mat[b][a]).abs() > tol {
                return Err(Error::config(format!("matrix is not symmetric at ({a}, {b})")));
            }
        }
    }
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for col in 0..p {
        for row in col..p {
            out.push(mat[row][col]);
        }
    }
    Ok(out)
}

/// Inverse of [`vech`].
pub fn unvech(values: &[f64]) -> Result<Vec<Vec<f64>>> {
    let len = values.len();
    let p = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if p * (p + 1) / 2 != len {
        return Err(Error::config(format!("{len} is not a triangular number")));
    }
    let mut mat = vec![vec![0.0; p]; p];
    let mut k = 0;
    for col in 0..p {
        for row in col..p {
            mat[row][col] = values[k];
            mat[col][row] = values[k];
            k += 1;
        }
    }
    Ok(mat)
}

/// `(i, j)` pairs in vech order.
pub fn vech_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for col in 0..p {
        for row in col..p {
            out.push((col, row));
        }
    }
    out
}

/// Empirical covariance of the per-row vectors `vech(H1(row))`; `columns[k]`
/// holds the values of vech component `k` over the rows.
pub fn vech_covariance(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(Error::SampleTooSmall { got: n, min: 2 });
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::config("vech components have different lengths"));
    }
    let d = columns.len();
    let mut out = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a..d {
            let v = sample_covariance(&columns[a], &columns[b]);
            out[a][b] = v;
            out[b][a] = v;
        }
    }
    Ok(out)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Each vector
/// has its first non-negligible component positive.
pub fn symmetric_eigen(mat: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = mat.len();
    if p == 0 || mat.iter().any(|r| r.len() != p) {
        return Err(Error::config("eigen-decomposition needs a non-empty square matrix"));
    }
    if mat.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "eigen-decomposition input",
            location: vec![],
        });
    }
    let m = DMatrix::from_fn(p, p, |r, c| 0.5 * (mat[r][c] + mat[c][r]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            v
        })
        .collect();
    Ok((values, vectors))
}

/// The `k` leading eigenpairs of an estimated `Cov(E[X|Y])`.
pub fn edr_directions(cov: &[Vec<f64>], k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if k > cov.len() {
        return Err(Error::config(format!("asked for {k} directions in dimension {}", cov.len())));
    }
    let (mut values, mut vectors) = symmetric_eigen(cov)?;
    values.truncate(k);
    vectors.truncate(k);
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEstimate {
    pub p: usize,
    pub t_matrix: Vec<Vec<f64>>,
    /// `X̄ X̄ᵀ` from the full sample.
    pub mean_outer: Vec<Vec<f64>>,
    pub cov_matrix: Vec<Vec<f64>>,
    pub vech: Vec<f64>,
    pub vech_cov: Vec<Vec<f64>>,
    /// Spectrum of `cov_matrix`, descending, before clipping.
    pub eigenvalues: Vec<f64>,
    /// Same spectrum with negative values set to zero.
    pub eigenvalues_clipped: Vec<f64>,
    /// `eigenvectors[k]` belongs to `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub psd_clipped: bool,
    /// Pairs `i <= j` in vech order.
    pub per_pair: Vec<PairEstimate>,
}

/// Estimates every `T_ij`, `i <= j`, on one shared split, in parallel.
pub fn estimate_matrix(data: &Dataset, cfg: &EstimatorConfig) -> Result<MatrixEstimate> {
    let prep = Prepared::new(data, cfg)?;
    let p = data.p;
    let pairs = vech_pairs(p);
    let results: Vec<(PairEstimate, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| prep.pair(i, j))
        .collect::<Result<Vec<_>>>()?;

    let means: Vec<f64> = (0..p)
        .map(|c| prep.maps[c].lo + prep.maps[c].scale * prep.unit_means[c])
        .collect();
    let mut t_matrix = vec![vec![0.0; p]; p];
    let mut cov_matrix = vec![vec![0.0; p]; p];
    let mut mean_outer = vec![vec![0.0; p]; p];
    for (est, _) in &results {
        let (i, j) = (est.i, est.j);
        t_matrix[i][j] = est.t_hat;
        t_matrix[j][i] = est.t_hat;
        let c = prep.covariance_entry(est);
        cov_matrix[i][j] = c;
        cov_matrix[j][i] = c;
    }
    for a in 0..p {
        for b in 0..p {
            mean_outer[a][b] = means[a] * means[b];
        }
    }
    let vech_values = vech(&cov_matrix)?;
    let columns: Vec<Vec<f64>> = results.iter().map(|(_, h)| h.clone()).collect();
    let vech_cov = vech_covariance(&columns)?;
    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov_matrix)?;
    let psd_clipped = eigenvalues.iter().any(|&v| v < 0.0);
    let eigenvalues_clipped = eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    Ok(MatrixEstimate {
        p,
        t_matrix,
        mean_outer,
        cov_matrix,
        vech: vech_values,
        vech_cov,
        eigenvalues,
        eigenvalues_clipped,
        eigenvectors,
        psd_clipped,
        per_pair: results.into_iter().map(|(e, _)| e).collect(),
    })
}

#[derive(Serialize)]
struct PairRecord {
    i: usize,
    j: usize,
    t_hat: f64,
    c_hat: f64,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Serialize)]
struct ResultDocument<'a> {
    t_matrix: &'a [Vec<f64>],
    cov_matrix: &'a [Vec<f64>],
    vech: &'a [f64],
    vech_cov: &'a [Vec<f64>],
    eigenvalues: &'a [f64],
    eigenvalues_clipped: &'a [f64],
    eigenvectors: &'a [Vec<f64>],
    psd_clipped: bool,
    per_pair: Vec<PairRecord>,
    config_echo: &'a EstimatorConfig,
    seed: u64,
}

impl MatrixEstimate {
    /// The result document as pretty-printed JSON.
    pub fn to_json(&self, cfg: &EstimatorConfig) -> Result<String> {
        let doc = ResultDocument {
            t_matrix: &self.t_matrix,
            cov_matrix: &self.cov_matrix,
            vech: &self.vech,
            vech_cov: &self.vech_cov,
            eigenvalues: &self.eigenvalues,
            eigenvalues_clipped: &self.eigenvalues_clipped,
            eigenvectors: &self.eigenvectors,
            psd_clipped: self.psd_clipped,
            per_pair: self
                .per_pair
                .iter()
                .map(|e| PairRecord {
                    i: e.i,
                    j: e.j,
                    t_hat: e.t_hat,
                    c_hat: e.c_hat,
                    ci_lo: e.ci_lo,
                    ci_hi: e.ci_hi,
                })
                .collect(),
            config_echo: cfg,
            seed: cfg.seed,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(format!("cannot serialize result: {e}")))
    }
}
