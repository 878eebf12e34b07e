//! The linearization terms of `T_ij` around the pilot and the quadratic
//! functional estimator.
//!
//! * `H1(f̂, x_i, x_j, y) = x_i m_j + x_j m_i − m_i m_j`
//! * `H2(f̂, x_i1, x_j2, y) = (x_i1 − m_i)(x_j2 − m_j) / ∫ f̂(x, y) dx`
//! * `H3 = H2(x_i1, x_j2) + H2(x_i2, x_j1)`
//!
//! [`quad_estimate`] estimates `θ = ∫ η(x_i1, x_j2, y) f(x_1, y) f(x_2, y)`
//! with the orthonormal-series U-statistic
//!
//! ```text
//! θ̂ = 1/(n(n−1)) Σ_l Σ_{k≠k'} p_l(Z_k) g_l(Z_k')
//!    − 1/(n(n−1)) Σ_{l,l'} Σ_{k≠k'} p_l(Z_k) p_l'(Z_k') c_{ll'}
//! g_l(z') = ∫ p_l(x, y') ψ(x, x', y') dx,   c_{ll'} = ∫ p_l(x_1, y) p_l'(x_2, y) η(x_i1, x_j2, y)
//! ```
//!
//! The double sums are never formed: `Σ_{k≠k'} a_k b_k' = S_a S_b − Σ_k a_k b_k`.
//! Because the basis is a tensor product, every `x`-block integral above
//! collapses to 1-D quadratures along a single axis.

use crate::basis::BasisModel;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::pilot::{PairSample, PilotDensity};
use crate::quadrature::{Cube, QuadratureRule};

/// A bounded weight `η(x_i1, x_j2, y)`.
pub trait EtaFunction: Sync {
    fn eval(&self, s: f64, t: f64, y: f64) -> f64;

    /// Present when `η(s, t, y) = u(s, y) v(t, y) / w(y)`.
    fn separable(&self) -> Option<&dyn SeparableEta> {
        None
    }
}

pub trait SeparableEta: Sync {
    fn u(&self, s: f64, y: f64) -> f64;
    fn v(&self, t: f64, y: f64) -> f64;
    fn w(&self, y: f64) -> f64;
}

/// Wraps a closure as a (non-separable) `η`.
pub struct FnEta<F>(pub F);

impl<F> EtaFunction for FnEta<F>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    fn eval(&self, s: f64, t: f64, y: f64) -> f64 {
        (self.0)(s, t, y)
    }
}

/// `η = u(s, y) v(t, y) / w(y)` from three closures.
pub struct SeparableFnEta<U, V, W> {
    pub u: U,
    pub v: V,
    pub w: W,
}

impl<U, V, W> SeparableEta for SeparableFnEta<U, V, W>
where
    U: Fn(f64, f64) -> f64 + Sync,
    V: Fn(f64, f64) -> f64 + Sync,
    W: Fn(f64) -> f64 + Sync,
{
    fn u(&self, s: f64, y: f64) -> f64 {
        (self.u)(s, y)
    }
    fn v(&self, t: f64, y: f64) -> f64 {
        (self.v)(t, y)
    }
    fn w(&self, y: f64) -> f64 {
        (self.w)(y)
    }
}

impl<U, V, W> EtaFunction for SeparableFnEta<U, V, W>
where
    U: Fn(f64, f64) -> f64 + Sync,
    V: Fn(f64, f64) -> f64 + Sync,
    W: Fn(f64) -> f64 + Sync,
{
    fn eval(&self, s: f64, t: f64, y: f64) -> f64 {
        (self.u)(s, y) * (self.v)(t, y) / (self.w)(y)
    }

    fn separable(&self) -> Option<&dyn SeparableEta> {
        Some(self)
    }
}

/// `η = H2(f̂, ·)` for a fitted pilot.
pub struct H2Eta<'a> {
    pd: &'a PilotDensity,
}

impl<'a> H2Eta<'a> {
    pub fn new(pd: &'a PilotDensity) -> Self {
        H2Eta { pd }
    }
}

impl EtaFunction for H2Eta<'_> {
    fn eval(&self, s: f64, t: f64, y: f64) -> f64 {
        let m = self.pd.cond_moments(y);
        (s - m.mean_i) * (t - m.mean_j) / m.mass
    }

    fn separable(&self) -> Option<&dyn SeparableEta> {
        Some(self)
    }
}

impl SeparableEta for H2Eta<'_> {
    fn u(&self, s: f64, y: f64) -> f64 {
        s - self.pd.cond_moments(y).mean_i
    }
    fn v(&self, t: f64, y: f64) -> f64 {
        t - self.pd.cond_moments(y).mean_j
    }
    fn w(&self, y: f64) -> f64 {
        self.pd.cond_moments(y).mass
    }
}

/// `sup |η|` over a 9-point-per-axis probe grid of the `(s, t, y)` box.
pub fn probe_sup(eta: &dyn EtaFunction, cube: &Cube) -> Result<f64> {
    let x_dims = cube.dim() - 1;
    let (si, sj, sy) = (0, x_dims - 1, x_dims);
    let at = |axis: usize, k: usize| cube.lo()[axis] + cube.len(axis) * k as f64 / 8.0;
    let mut sup = 0.0f64;
    for a in 0..9 {
        for b in 0..9 {
            for c in 0..9 {
                let (s, t, y) = (at(si, a), at(sj, b), at(sy, c));
                let v = eta.eval(s, t, y);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "eta probe",
                        location: vec![s, t, y],
                    });
                }
                sup = sup.max(v.abs());
            }
        }
    }
    Ok(sup)
}

fn pair_point(pd: &PilotDensity, xi: f64, xj: f64, y: f64) -> Result<()> {
    if pd.x_dims() == 2 {
        pd.cube().check(&[xi, xj, y])
    } else {
        pd.cube().check(&[xi, y])?;
        pd.cube().check(&[xj, y])
    }
}

pub fn h1(pd: &PilotDensity, xi: f64, xj: f64, y: f64) -> Result<f64> {
    pair_point(pd, xi, xj, y)?;
    let m = pd.cond_moments(y);
    Ok(xi * m.mean_j + xj * m.mean_i - m.mean_i * m.mean_j)
}

pub fn h2(pd: &PilotDensity, xi1: f64, xj2: f64, y: f64) -> Result<f64> {
    pair_point(pd, xi1, xj2, y)?;
    let m = pd.cond_moments(y);
    Ok((xi1 - m.mean_i) * (xj2 - m.mean_j) / m.mass)
}

pub fn h3(pd: &PilotDensity, xi1: f64, xj1: f64, xi2: f64, xj2: f64, y: f64) -> Result<f64> {
    Ok(h2(pd, xi1, xj2, y)? + h2(pd, xi2, xj1, y)?)
}

pub fn psi(eta: &dyn EtaFunction, xi1: f64, xj1: f64, xi2: f64, xj2: f64, y: f64) -> f64 {
    eta.eval(xi1, xj2, y) + eta.eval(xi2, xj1, y)
}

/// Splits a row into `(x_i, x_j, y)`; a diagonal row `(x, y)` gives `x_i = x_j = x`.
#[inline]
pub fn row_coords(row: &[f64]) -> (f64, f64, f64) {
    match row.len() {
        3 => (row[0], row[1], row[2]),
        _ => (row[0], row[0], row[1]),
    }
}

/// `H1(f̂, ·)` on every row of `sample`.
pub fn h1_values(pd: &PilotDensity, sample: &PairSample) -> Result<Vec<f64>> {
    if sample.dim() != pd.cube().dim() {
        return Err(Error::config("sample and pilot dimensions differ"));
    }
    pd.precompute(&sample.ys());
    sample
        .rows()
        .map(|r| {
            let (xi, xj, y) = row_coords(r);
            h1(pd, xi, xj, y)
        })
        .collect()
}

/// Empirical mean of `H1(f̂, ·)` over the second subsample.
pub fn linear_estimate(pd: &PilotDensity, sample: &PairSample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::SampleTooSmall { got: 0, min: 1 });
    }
    Ok(crate::numeric::mean(&h1_values(pd, sample)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    /// Set when only two rows were available (a single unordered pair).
    pub small_sample: bool,
}

/// Per-axis tables shared by the estimator, its decomposition and the
/// bias/variance oracles.
pub(crate) struct SeriesKernel<'a> {
    model: &'a BasisModel,
    rule: &'a QuadratureRule,
    eta: &'a dyn EtaFunction,
    axis_i: usize,
    axis_j: usize,
    /// `φ_a` at the nodes of the `x_i` (resp. `x_j`) axis, indexed `[a][q]`.
    phi_i: Vec<Vec<f64>>,
    phi_j: Vec<Vec<f64>>,
    /// `∫ φ_a` along each axis.
    zi: Vec<f64>,
    zj: Vec<f64>,
}

impl<'a> SeriesKernel<'a> {
    pub(crate) fn new(
        eta: &'a dyn EtaFunction,
        model: &'a BasisModel,
        rule: &'a QuadratureRule,
    ) -> Result<Self> {
        if rule.cube() != model.cube() {
            return Err(Error::config("quadrature rule and basis must share the cube"));
        }
        let x_dims = model.x_dims();
        let axis_i = 0;
        let axis_j = x_dims - 1;
        let [f0, f1, _] = model.max_freq();
        // On a one-axis block both slots read the same axis and frequencies.
        let (ki, kj) = if x_dims == 2 { (f0, f1) } else { (f0, f0) };
        let table = |slot: usize, kmax: u32, axis: usize| -> Vec<Vec<f64>> {
            (0..=kmax)
                .map(|k| rule.nodes(axis).iter().map(|&t| model.factor(slot, k, t)).collect())
                .collect()
        };
        let phi_i = table(0, ki, axis_i);
        let phi_j = table(if x_dims == 2 { 1 } else { 0 }, kj, axis_j);
        let integral = |phi: &Vec<Vec<f64>>, axis: usize| -> Vec<f64> {
            phi.iter()
                .map(|row| row.iter().zip(rule.weights(axis)).map(|(p, w)| p * w).sum())
                .collect()
        };
        let zi = integral(&phi_i, axis_i);
        let zj = integral(&phi_j, axis_j);
        Ok(SeriesKernel {
            model,
            rule,
            eta,
            axis_i,
            axis_j,
            phi_i,
            phi_j,
            zi,
            zj,
        })
    }

    fn y_axis(&self) -> usize {
        self.model.x_dims()
    }

    /// `g_l(row)` for every `l` into `out`.
    pub(crate) fn row_g(&self, row: &[f64], out: &mut [f64]) -> Result<()> {
        let (xi, xj, y) = row_coords(row);
        let wi = self.rule.weights(self.axis_i);
        let wj = self.rule.weights(self.axis_j);
        // η(s_q, x_j', y') and η(x_i', t_q, y') along the quadrature nodes.
        let e1: Vec<f64> = self.rule.nodes(self.axis_i).iter().map(|&s| self.eta.eval(s, xj, y)).collect();
        let e2: Vec<f64> = self.rule.nodes(self.axis_j).iter().map(|&t| self.eta.eval(xi, t, y)).collect();
        if let Some(bad) = e1.iter().chain(&e2).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "eta at sample row",
                location: vec![xi, xj, y, bad as f64],
            });
        }
        let proj = |phi: &Vec<Vec<f64>>, w: &[f64], e: &[f64]| -> Vec<f64> {
            phi.iter()
                .map(|row| row.iter().zip(w).zip(e).map(|((p, w), e)| p * w * e).sum())
                .collect()
        };
        let j_int = proj(&self.phi_i, wi, &e1);
        let k_int = proj(&self.phi_j, wj, &e2);
        let beta: Vec<f64> = (0..=self.model.max_freq()[2]).map(|b| self.model.factor(2, b, y)).collect();
        let two_axes = self.model.x_dims() == 2;
        for (o, idx) in out.iter_mut().zip(self.model.indices()) {
            let a1 = idx.alpha[0] as usize;
            let inner = if two_axes {
                let a2 = idx.alpha[1] as usize;
                j_int[a1] * self.zj[a2] + self.zi[a1] * k_int[a2]
            } else {
                j_int[a1] + k_int[a1]
            };
            *o = beta[idx.beta as usize] * inner;
        }
        Ok(())
    }

    /// `c_{ll'}` as a row-major `m × m` matrix.
    pub(crate) fn cross_matrix(&self) -> Result<Vec<f64>> {
        let m = self.model.size();
        let y_axis = self.y_axis();
        let ys = self.rule.nodes(y_axis);
        let vy = self.rule.weights(y_axis);
        let si = self.rule.nodes(self.axis_i);
        let tj = self.rule.nodes(self.axis_j);
        let wi = self.rule.weights(self.axis_i);
        let wj = self.rule.weights(self.axis_j);
        let (na, nb) = (self.phi_i.len(), self.phi_j.len());
        let q = self.rule.order();

        // e[r][a][b] = ∫∫ φ_a(s) φ_b(t) η(s, t, y_r) ds dt
        let mut e = vec![0.0; ys.len() * na * nb];
        for (r, &y) in ys.iter().enumerate() {
            let block = &mut e[r * na * nb..(r + 1) * na * nb];
            if let Some(sep) = self.eta.separable() {
                let w = sep.w(y);
                let u: Vec<f64> = si.iter().map(|&s| sep.u(s, y)).collect();
                let v: Vec<f64> = tj.iter().map(|&t| sep.v(t, y)).collect();
                let pu: Vec<f64> = self.phi_i.iter().map(|p| (0..q).map(|k| p[k] * wi[k] * u[k]).sum()).collect();
                let pv: Vec<f64> = self.phi_j.iter().map(|p| (0..q).map(|k| p[k] * wj[k] * v[k]).sum()).collect();
                for a in 0..na {
                    for b in 0..nb {
                        block[a * nb + b] = pu[a] * pv[b] / w;
                    }
                }
            } else {
                // tmp[s][b] = Σ_t w_t φ_b(t) η(s, t, y)
                let mut tmp = vec![0.0; q * nb];
                for (qs, &s) in si.iter().enumerate() {
                    let etas: Vec<f64> = tj.iter().map(|&t| self.eta.eval(s, t, y)).collect();
                    for b in 0..nb {
                        tmp[qs * nb + b] = (0..q).map(|k| wj[k] * self.phi_j[b][k] * etas[k]).sum();
                    }
                }
                for a in 0..na {
                    for b in 0..nb {
                        block[a * nb + b] = (0..q).map(|qs| wi[qs] * self.phi_i[a][qs] * tmp[qs * nb + b]).sum();
                    }
                }
            }
        }
        if let Some(pos) = e.iter().position(|v| !v.is_finite()) {
            let r = pos / (na * nb);
            return Err(Error::NonFinite {
                context: "cross integral",
                location: vec![ys[r]],
            });
        }

        let beta: Vec<Vec<f64>> = ys
            .iter()
            .map(|&y| (0..=self.model.max_freq()[2]).map(|b| self.model.factor(2, b, y)).collect())
            .collect();
        let two_axes = self.model.x_dims() == 2;
        let idx = self.model.indices();
        let mut c = vec![0.0; m * m];
        for (l, il) in idx.iter().enumerate() {
            for (lp, ilp) in idx.iter().enumerate() {
                // x_j1 only meets φ_{a2(l)} and x_i2 only meets φ_{a1(l')}.
                let (a, b, pre) = if two_axes {
                    let pre = self.zj[il.alpha[1] as usize] * self.zi[ilp.alpha[0] as usize];
                    (il.alpha[0] as usize, ilp.alpha[1] as usize, pre)
                } else {
                    (il.alpha[0] as usize, ilp.alpha[0] as usize, 1.0)
                };
                let mut acc = 0.0;
                for r in 0..ys.len() {
                    acc += vy[r]
                        * beta[r][il.beta as usize]
                        * beta[r][ilp.beta as usize]
                        * e[r * na * nb + a * nb + b];
                }
                c[l * m + lp] = pre * acc;
            }
        }
        Ok(c)
    }
}

/// Sufficient statistics of θ̂: `S_l`, `G_l`, `Σ_k p_l g_l` and `Σ_k p_l p_l'`.
pub(crate) struct SeriesSums {
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub pg: Vec<f64>,
    pub pp: Vec<f64>,
    pub n: usize,
}

pub(crate) fn series_sums(kernel: &SeriesKernel<'_>, sample: &PairSample) -> Result<SeriesSums> {
    let m = kernel.model.size();
    let mut s = vec![CompensatedSum::new(); m];
    let mut g = vec![CompensatedSum::new(); m];
    let mut pg = vec![CompensatedSum::new(); m];
    let mut pp = vec![CompensatedSum::new(); m * m];
    let mut pv = vec![0.0; m];
    let mut gv = vec![0.0; m];
    for row in sample.rows() {
        kernel.model.eval_all_unchecked(row, &mut pv);
        kernel.row_g(row, &mut gv)?;
        for l in 0..m {
            s[l].add(pv[l]);
            g[l].add(gv[l]);
            pg[l].add(pv[l] * gv[l]);
            for lp in l..m {
                pp[l * m + lp].add(pv[l] * pv[lp]);
            }
        }
    }
    let mut ppv = vec![0.0; m * m];
    for l in 0..m {
        for lp in l..m {
            let v = pp[l * m + lp].value();
            ppv[l * m + lp] = v;
            ppv[lp * m + l] = v;
        }
    }
    Ok(SeriesSums {
        s: s.iter().map(CompensatedSum::value).collect(),
        g: g.iter().map(CompensatedSum::value).collect(),
        pg: pg.iter().map(CompensatedSum::value).collect(),
        pp: ppv,
        n: sample.len(),
    })
}

pub(crate) fn theta_from_sums(sums: &SeriesSums, c: &[f64]) -> f64 {
    let m = sums.s.len();
    let mut acc = CompensatedSum::new();
    for l in 0..m {
        acc.add(sums.s[l] * sums.g[l] - sums.pg[l]);
    }
    for l in 0..m {
        for lp in 0..m {
            let cl = c[l * m + lp];
            if cl != 0.0 {
                acc.add(-cl * (sums.s[l] * sums.s[lp] - sums.pp[l * m + lp]));
            }
        }
    }
    let n = sums.n as f64;
    acc.value() / (n * (n - 1.0))
}

/// Orthonormal-series U-statistic estimate of `∫ η f f`.
pub fn quad_estimate(
    eta: &dyn EtaFunction,
    sample: &PairSample,
    model: &BasisModel,
    rule: &QuadratureRule,
) -> Result<QuadEstimate> {
    if sample.len() < 2 {
        return Err(Error::SampleTooSmall {
            got: sample.len(),
            min: 2,
        });
    }
    if sample.dim() != model.cube().dim() {
        return Err(Error::config("sample and basis dimensions differ"));
    }
    sample.check_inside(model.cube())?;
    let kernel = SeriesKernel::new(eta, model, rule)?;
    let c = kernel.cross_matrix()?;
    let sums = series_sums(&kernel, sample)?;
    Ok(QuadEstimate {
        value: theta_from_sums(&sums, &c),
        small_sample: sample.len() == 2,
    })
}

/// Hoeffding split of θ̂ around its mean under a known density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoeffdingParts {
    pub theta_hat: f64,
    /// `E θ̂` under the known density.
    pub theta_mean: f64,
    /// `(1/n) Σ_k [K1(Z_k) + K2(Z_k) − 2 E θ̂]`.
    pub linear: f64,
    /// `θ̂ − E θ̂ − linear`, the degenerate U-statistic part.
    pub u_part: f64,
}

/// Precomputed projections of the series kernel onto a known density `f`:
/// `a_l = ∫ p_l f`, `γ_l = ∫ g_l f` and `c`.
pub struct KernelProjection {
    a: Vec<f64>,
    gamma: Vec<f64>,
    c: Vec<f64>,
}

impl KernelProjection {
    pub fn new<F>(f: F, eta: &dyn EtaFunction, model: &BasisModel, rule: &QuadratureRule) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let kernel = SeriesKernel::new(eta, model, rule)?;
        let m = model.size();
        let a = model.coefficients(&f, rule)?.values;
        let mut gamma = vec![0.0; m];
        let mut gv = vec![0.0; m];
        let mut failure = None;
        rule.for_each_node(&rule.all_axes(), model.cube().lo(), |pt, w| {
            if let Err(e) = kernel.row_g(pt, &mut gv) {
                failure = Some(e);
                return false;
            }
            let fw = w * f(pt);
            for (acc, g) in gamma.iter_mut().zip(&gv) {
                *acc += fw * g;
            }
            true
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let c = kernel.cross_matrix()?;
        Ok(KernelProjection { a, gamma, c })
    }

    /// `E θ̂ = Σ a_l γ_l − aᵀ C a`.
    pub fn theta_mean(&self) -> f64 {
        let m = self.a.len();
        let mut v: f64 = self.a.iter().zip(&self.gamma).map(|(a, g)| a * g).sum();
        for l in 0..m {
            for lp in 0..m {
                v -= self.a[l] * self.c[l * m + lp] * self.a[lp];
            }
        }
        v
    }

    pub fn parts(
        &self,
        eta: &dyn EtaFunction,
        sample: &PairSample,
        model: &BasisModel,
        rule: &QuadratureRule,
    ) -> Result<HoeffdingParts> {
        let kernel = SeriesKernel::new(eta, model, rule)?;
        let m = model.size();
        let sums = series_sums(&kernel, sample)?;
        let theta_hat = theta_from_sums(&sums, &self.c);
        let theta_mean = self.theta_mean();
        // K1(z) = Σ_l p_l(z) [γ_l − (C a)_l],  K2(z) = Σ_l g_l(z) a_l − Σ_l' p_l'(z) (Cᵀ a)_l'.
        let ca: Vec<f64> = (0..m).map(|l| (0..m).map(|lp| self.c[l * m + lp] * self.a[lp]).sum()).collect();
        let cta: Vec<f64> = (0..m).map(|lp| (0..m).map(|l| self.a[l] * self.c[l * m + lp]).sum()).collect();
        let mut lin = 0.0;
        for l in 0..m {
            lin += sums.s[l] * (self.gamma[l] - ca[l]) + sums.g[l] * self.a[l] - sums.s[l] * cta[l];
        }
        let n = sums.n as f64;
        let linear = lin / n - 2.0 * theta_mean;
        Ok(HoeffdingParts {
            theta_hat,
            theta_mean,
            linear,
            u_part: theta_hat - theta_mean - linear,
        })
    }
}

/// `−∫ (S_M f − f)(x_1, y) (S_M f − f)(x_2, y) η(x_i1, x_j2, y)` by quadrature.
pub fn oracle_bias<F>(f_true: F, eta: &dyn EtaFunction, model: &BasisModel, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if rule.cube() != model.cube() {
        return Err(Error::config("quadrature rule and basis must share the cube"));
    }
    let coeffs = model.coefficients(&f_true, rule)?;
    let resid = |pt: &[f64]| -> Result<f64> { Ok(model.project(&coeffs, pt)? - f_true(pt)) };
    let grid = XyGrid::new(rule);
    let d = grid.tabulate(resid)?;
    grid.pair_form(&d, &d, eta, -1.0)
}

/// `Λ(f, η) = ∫ g² f − (∫ g f)²` with `g(x, y) = ∫ f(x_2, y) ψ(x, x_2, y) dx_2`.
pub fn lambda_f_eta<F>(f: F, eta: &dyn EtaFunction, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let grid = XyGrid::new(rule);
    let fv = grid.tabulate(|p| Ok(f(p)))?;
    // Marginals of f over x_i (as a function of x_j) and over x_j (function of x_i).
    let (marg_j, marg_i) = grid.marginals(&fv);
    let q = grid.q;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for r in 0..q {
        let y = grid.ys[r];
        for a in 0..grid.na {
            for b in 0..grid.nb {
                let (s, t) = (grid.si[a], grid.tj[b]);
                let mut g = 0.0;
                for bb in 0..grid.nb {
                    g += grid.wj[bb] * marg_j[r * grid.nb + bb] * eta.eval(s, grid.tj[bb], y);
                }
                for aa in 0..grid.na {
                    g += grid.wi[aa] * marg_i[r * grid.na + aa] * eta.eval(grid.si[aa], t, y);
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        context: "lambda integrand",
                        location: vec![s, t, y],
                    });
                }
                let w = grid.weight(a, b, r) * fv[grid.at(a, b, r)];
                s1 += w * g * g;
                s2 += w * g;
            }
        }
    }
    Ok(s1 - s2 * s2)
}

/// Tensor grid over `(x_i, x_j, y)` or `(x, y)` with helpers for the
/// pairwise `x`-block forms used by the oracles.
struct XyGrid<'a> {
    rule: &'a QuadratureRule,
    two_axes: bool,
    q: usize,
    na: usize,
    nb: usize,
    si: Vec<f64>,
    tj: Vec<f64>,
    wi: Vec<f64>,
    wj: Vec<f64>,
    ys: Vec<f64>,
    wy: Vec<f64>,
}

impl<'a> XyGrid<'a> {
    fn new(rule: &'a QuadratureRule) -> Self {
        let two_axes = rule.cube().dim() == 3;
        let (ai, aj, ay) = if two_axes { (0, 1, 2) } else { (0, 0, 1) };
        let q = rule.order();
        XyGrid {
            rule,
            two_axes,
            q,
            na: q,
            nb: q,
            si: rule.nodes(ai).to_vec(),
            tj: rule.nodes(aj).to_vec(),
            wi: rule.weights(ai).to_vec(),
            wj: rule.weights(aj).to_vec(),
            ys: rule.nodes(ay).to_vec(),
            wy: rule.weights(ay).to_vec(),
        }
    }

    /// Flat index of node `(a, b, r)`; `b` is ignored on a one-axis block.
    fn at(&self, a: usize, b: usize, r: usize) -> usize {
        if self.two_axes {
            (r * self.na + a) * self.nb + b
        } else {
            r * self.na + a
        }
    }

    fn weight(&self, a: usize, b: usize, r: usize) -> f64 {
        if self.two_axes {
            self.wi[a] * self.wj[b] * self.wy[r]
        } else {
            // A one-axis block has no second coordinate to sum over.
            if b == 0 {
                self.wi[a] * self.wy[r]
            } else {
                0.0
            }
        }
    }

    fn tabulate<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let size = if self.two_axes { self.q * self.q * self.q } else { self.q * self.q };
        let mut out = vec![0.0; size];
        for r in 0..self.q {
            for a in 0..self.na {
                if self.two_axes {
                    for b in 0..self.nb {
                        out[self.at(a, b, r)] = f(&[self.si[a], self.tj[b], self.ys[r]])?;
                    }
                } else {
                    out[self.at(a, 0, r)] = f(&[self.si[a], self.ys[r]])?;
                }
            }
        }
        let _ = self.rule;
        Ok(out)
    }

    /// `(∫ v dx_i as a function of x_j, ∫ v dx_j as a function of x_i)` per
    /// `y` node. On a one-axis block both are `v` itself.
    fn marginals(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.q;
        if !self.two_axes {
            return (v.to_vec(), v.to_vec());
        }
        let mut over_i = vec![0.0; q * self.nb];
        let mut over_j = vec![0.0; q * self.na];
        for r in 0..q {
            for a in 0..self.na {
                for b in 0..self.nb {
                    let x = v[self.at(a, b, r)];
                    over_i[r * self.nb + b] += self.wi[a] * x;
                    over_j[r * self.na + a] += self.wj[b] * x;
                }
            }
        }
        (over_i, over_j)
    }

    /// `sign · ∫ A(x_1, y) B(x_2, y) η(x_i1, x_j2, y)` for grid tables `A`, `B`.
    fn pair_form(&self, a_tab: &[f64], b_tab: &[f64], eta: &dyn EtaFunction, sign: f64) -> Result<f64> {
        // Integrate x_j1 out of A and x_i2 out of B.
        let (_, a_marg) = self.marginals(a_tab);
        let (b_marg, _) = self.marginals(b_tab);
        let mut total = 0.0;
        for r in 0..self.q {
            let y = self.ys[r];
            let mut acc = 0.0;
            for a in 0..self.na {
                let av = a_marg[r * self.na + a];
                for b in 0..self.nb {
                    let e = eta.eval(self.si[a], self.tj[b], y);
                    if !e.is_finite() {
                        return Err(Error::NonFinite {
                            context: "eta on grid",
                            location: vec![self.si[a], self.tj[b], y],
                        });
                    }
                    acc += self.wi[a] * self.wj[b] * av * b_marg[r * self.nb + b] * e;
                }
            }
            total += self.wy[r] * acc;
        }
        Ok(sign * total)
    }
}
