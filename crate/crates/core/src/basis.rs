//! Tensor-product cosine basis on a cube and truncated series projection.
//!
//! Basis functions factor as `p_l(x, y) = α_{l_α}(x) · β_{l_β}(y)` where the
//! `x`-block has one axis (diagonal entries) or two axes (off-diagonal
//! entries) and `y` is always the last axis. Each 1-D factor is the Neumann
//! cosine family, orthonormal on an interval of length `L`:
//! `φ_0 = 1/√L`, `φ_k(t) = √(2/L) cos(kπ(t − lo)/L)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{Cube, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BasisFamily {
    #[default]
    Cosine,
}

/// Frequencies of one tensor basis function. For a one-axis `x`-block the
/// second `alpha` component is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisIndex {
    pub alpha: [u32; 2],
    pub beta: u32,
}

impl BasisIndex {
    pub const CONSTANT: BasisIndex = BasisIndex {
        alpha: [0, 0],
        beta: 0,
    };

    pub fn new(a1: u32, a2: u32, b: u32) -> Self {
        BasisIndex {
            alpha: [a1, a2],
            beta: b,
        }
    }

    pub fn total(&self) -> u32 {
        self.alpha[0] + self.alpha[1] + self.beta
    }
}

/// How many basis functions to keep for a sample of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SizeRule {
    /// `m = ceil(√n)`.
    #[default]
    Sqrt,
    Fixed(usize),
}

pub fn select_model_size(n: usize, rule: SizeRule) -> usize {
    match rule {
        SizeRule::Sqrt => {
            let mut m = (n as f64).sqrt().ceil() as usize;
            // Guard against rounding in the float square root.
            while m > 1 && (m - 1) * (m - 1) >= n {
                m -= 1;
            }
            while m * m < n {
                m += 1;
            }
            m.max(1)
        }
        SizeRule::Fixed(m) => m.max(1),
    }
}

/// Value of the 1-D orthonormal cosine function of frequency `k` on
/// `[lo, lo + len]`.
#[inline]
pub fn cosine_1d(k: u32, t: f64, lo: f64, len: f64) -> f64 {
    if k == 0 {
        1.0 / len.sqrt()
    } else {
        (2.0 / len).sqrt() * (k as f64 * std::f64::consts::PI * (t - lo) / len).cos()
    }
}

/// The truncation set `M` together with its cube.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisModel {
    cube: Cube,
    x_dims: usize,
    indices: Vec<BasisIndex>,
    family: BasisFamily,
    max_freq: [u32; 3],
}

impl BasisModel {
    /// First `m` indices in graded order: total frequency, then
    /// lexicographic on `(α_1, α_2, β)`.
    pub fn graded(cube: &Cube, m: usize) -> Result<Self> {
        let x_dims = x_dims_of(cube)?;
        if m == 0 {
            return Err(Error::config("basis size must be at least 1"));
        }
        let mut indices = Vec::with_capacity(m);
        let mut total = 0u32;
        'outer: loop {
            let a2_max = if x_dims == 2 { total } else { 0 };
            for a1 in 0..=total {
                for a2 in 0..=a2_max.min(total - a1) {
                    let b = total - a1 - a2;
                    indices.push(BasisIndex::new(a1, a2, b));
                    if indices.len() == m {
                        break 'outer;
                    }
                }
            }
            total += 1;
        }
        Self::with_indices(cube, indices)
    }

    /// [`BasisModel::graded`] followed by adding the mirror image
    /// `(α_2, α_1, β)` of every kept index, so the set does not depend on
    /// which `x` coordinate comes first. The size can exceed `m` by the
    /// number of mirror pairs split at the cut.
    pub fn graded_symmetric(cube: &Cube, m: usize) -> Result<Self> {
        let base = Self::graded(cube, m)?;
        if base.x_dims == 1 {
            return Ok(base);
        }
        let mut indices = base.indices;
        let mut k = 0;
        while k < indices.len() {
            let idx = indices[k];
            let mirror = BasisIndex::new(idx.alpha[1], idx.alpha[0], idx.beta);
            if !indices.contains(&mirror) {
                indices.push(mirror);
            }
            k += 1;
        }
        Self::with_indices(cube, indices)
    }

    pub fn with_indices(cube: &Cube, indices: Vec<BasisIndex>) -> Result<Self> {
        let x_dims = x_dims_of(cube)?;
        if indices.is_empty() {
            return Err(Error::config("basis must contain at least one index"));
        }
        if !indices.contains(&BasisIndex::CONSTANT) {
            return Err(Error::config("basis must include the constant function"));
        }
        let mut seen = std::collections::HashSet::new();
        for idx in &indices {
            if !seen.insert(*idx) {
                return Err(Error::config(format!("duplicate basis index {idx:?}")));
            }
            if x_dims == 1 && idx.alpha[1] != 0 {
                return Err(Error::config("second x frequency must be 0 for a one-axis block"));
            }
        }
        let mut max_freq = [0u32; 3];
        for idx in &indices {
            max_freq[0] = max_freq[0].max(idx.alpha[0]);
            max_freq[1] = max_freq[1].max(idx.alpha[1]);
            max_freq[2] = max_freq[2].max(idx.beta);
        }
        Ok(BasisModel {
            cube: cube.clone(),
            x_dims,
            indices,
            family: BasisFamily::Cosine,
            max_freq,
        })
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn x_dims(&self) -> usize {
        self.x_dims
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    /// Highest frequency used on `x` slot 0, `x` slot 1 and `y`.
    pub fn max_freq(&self) -> [u32; 3] {
        self.max_freq
    }

    pub fn y_axis(&self) -> usize {
        self.x_dims
    }

    /// 1-D factor value; `slot` is 0 or 1 for the `x` frequencies and 2 for `y`.
    pub fn factor(&self, slot: usize, k: u32, t: f64) -> f64 {
        let axis = self.slot_axis(slot);
        cosine_1d(k, t, self.cube.lo()[axis], self.cube.len(axis))
    }

    pub(crate) fn slot_axis(&self, slot: usize) -> usize {
        match slot {
            0 => 0,
            1 => self.x_dims - 1,
            _ => self.x_dims,
        }
    }

    /// `p_l(point)` for a single index.
    pub fn eval(&self, idx: &BasisIndex, point: &[f64]) -> Result<f64> {
        self.cube.check(point)?;
        let y = point[self.x_dims];
        let mut v = self.factor(0, idx.alpha[0], point[0]) * self.factor(2, idx.beta, y);
        if self.x_dims == 2 {
            v *= self.factor(1, idx.alpha[1], point[1]);
        }
        Ok(v)
    }

    /// Per-slot tables `φ_k(t)` for `k = 0..=max_freq[slot]`.
    pub(crate) fn factor_tables(&self, point: &[f64]) -> [Vec<f64>; 3] {
        let y = point[self.x_dims];
        let table = |slot: usize, t: f64| -> Vec<f64> {
            (0..=self.max_freq[slot]).map(|k| self.factor(slot, k, t)).collect()
        };
        let second = if self.x_dims == 2 {
            table(1, point[1])
        } else {
            vec![1.0]
        };
        [table(0, point[0]), second, table(2, y)]
    }

    /// All `p_l(point)` in index order, without the cube check.
    pub(crate) fn eval_all_unchecked(&self, point: &[f64], out: &mut [f64]) {
        let [t0, t1, t2] = self.factor_tables(point);
        for (o, idx) in out.iter_mut().zip(&self.indices) {
            *o = t0[idx.alpha[0] as usize] * t1[idx.alpha[1] as usize] * t2[idx.beta as usize];
        }
    }

    pub fn eval_all(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.cube.check(point)?;
        let mut out = vec![0.0; self.size()];
        self.eval_all_unchecked(point, &mut out);
        Ok(out)
    }

    /// `a_l = ∫ p_l f` for every `l ∈ M`, by quadrature.
    pub fn coefficients<F>(&self, mut f: F, rule: &QuadratureRule) -> Result<CoefficientSet>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut buf = vec![0.0; self.size()];
        let mut acc = vec![0.0; self.size()];
        let mut bad = None;
        rule.for_each_node(&rule.all_axes(), self.cube.lo(), |pt, w| {
            let v = f(pt);
            if !v.is_finite() {
                bad = Some(pt.to_vec());
                return false;
            }
            self.eval_all_unchecked(pt, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * v * b;
            }
            true
        })?;
        if let Some(location) = bad {
            return Err(Error::NonFinite {
                context: "coefficient integrand",
                location,
            });
        }
        Ok(CoefficientSet { values: acc })
    }

    /// `S_M f(point) = Σ_l a_l p_l(point)`.
    pub fn project(&self, coeffs: &CoefficientSet, point: &[f64]) -> Result<f64> {
        if coeffs.values.len() != self.size() {
            return Err(Error::config("coefficient set does not match the basis"));
        }
        self.cube.check(point)?;
        let mut buf = vec![0.0; self.size()];
        self.eval_all_unchecked(point, &mut buf);
        Ok(buf.iter().zip(&coeffs.values).map(|(p, a)| p * a).sum())
    }

    /// Gram matrix `G_{ll'} = ∫ p_l p_{l'}` under `rule`, row-major.
    pub fn gram(&self, rule: &QuadratureRule) -> Result<Vec<f64>> {
        let m = self.size();
        let mut g = vec![0.0; m * m];
        let mut buf = vec![0.0; m];
        rule.for_each_node(&rule.all_axes(), self.cube.lo(), |pt, w| {
            self.eval_all_unchecked(pt, &mut buf);
            for a in 0..m {
                let wa = w * buf[a];
                for b in 0..m {
                    g[a * m + b] += wa * buf[b];
                }
            }
            true
        })?;
        Ok(g)
    }
}

fn x_dims_of(cube: &Cube) -> Result<usize> {
    match cube.dim() {
        2 => Ok(1),
        3 => Ok(2),
        d => Err(Error::config(format!("basis cube must have 2 or 3 axes, got {d}"))),
    }
}

/// Coefficients `a_l` aligned with [`BasisModel::indices`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub values: Vec<f64>,
}
