//! Tensor-product Gauss-Legendre quadrature on axis-aligned boxes.
//!
//! Every integral the estimators need (basis coefficients, conditional
//! moments of the pilot density, the `c_{ll'}` cross integrals, oracle
//! targets) goes through [`QuadratureRule`]. Integration can run over any
//! subset of axes while the remaining axes are held at fixed values, which is
//! how `∫ … dx_i dx_j` at a given `y` is computed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Default number of Gauss-Legendre nodes per axis.
pub const DEFAULT_ORDER: usize = 24;

/// Compact box `[lo_0, hi_0] × … × [lo_{d-1}, hi_{d-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Cube {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("cube bounds must be non-empty and of equal length"));
        }
        for (k, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(format!("cube axis {k}: need finite lo < hi, got [{a}, {b}]")));
            }
        }
        let cube = Cube { lo, hi };
        if !(cube.volume().is_finite() && cube.volume() > 0.0) {
            return Err(Error::config("cube volume must be finite and positive"));
        }
        Ok(cube)
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Cube {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn len(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.len(k)).product()
    }

    /// Membership with a relative slack of `1e-12` per axis so that points
    /// mapped affinely onto a face are still accepted.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point.iter().enumerate().all(|(k, &x)| {
                let tol = 1e-12 * self.len(k).max(1.0);
                x >= self.lo[k] - tol && x <= self.hi[k] + tol
            })
    }

    pub fn check(&self, point: &[f64]) -> Result<()> {
        if self.contains(point) {
            Ok(())
        } else {
            Err(Error::OutsideCube {
                point: point.to_vec(),
            })
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Bonnet recurrence for P_n and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        // Recompute the derivative at the converged root.
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        if n > 1 {
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Per-axis Gauss-Legendre rule mapped onto a [`Cube`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    cube: Cube,
    order: usize,
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl QuadratureRule {
    pub fn new(cube: &Cube, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::config(format!("quadrature order must be >= 2, got {order}")));
        }
        let (ref_nodes, ref_weights) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(cube.dim());
        let mut weights = Vec::with_capacity(cube.dim());
        for k in 0..cube.dim() {
            let half = 0.5 * cube.len(k);
            let mid = 0.5 * (cube.lo()[k] + cube.hi()[k]);
            nodes.push(ref_nodes.iter().map(|&t| mid + half * t).collect());
            weights.push(ref_weights.iter().map(|&w| half * w).collect());
        }
        Ok(QuadratureRule {
            cube: cube.clone(),
            order,
            nodes,
            weights,
        })
    }

    pub fn cube(&self) -> &Cube {
        &self.cube
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self, axis: usize) -> &[f64] {
        &self.nodes[axis]
    }

    pub fn weights(&self, axis: usize) -> &[f64] {
        &self.weights[axis]
    }

    /// Visits every tensor node over `axes` with its product weight. The
    /// other coordinates are read from `fixed`, which must have the cube's
    /// full dimension (entries on the visited axes are ignored). The visitor
    /// returns `false` to stop early.
    pub fn for_each_node<F>(&self, axes: &[usize], fixed: &[f64], mut visit: F) -> Result<()>
    where
        F: FnMut(&[f64], f64) -> bool,
    {
        let dim = self.cube.dim();
        if fixed.len() != dim {
            return Err(Error::config(format!(
                "fixed point has {} coordinates, cube has {dim}",
                fixed.len()
            )));
        }
        if axes.iter().any(|&a| a >= dim) {
            return Err(Error::config("integration axis out of range"));
        }
        let mut point = fixed.to_vec();
        let mut idx = vec![0usize; axes.len()];
        loop {
            let mut w = 1.0;
            for (slot, &axis) in axes.iter().enumerate() {
                point[axis] = self.nodes[axis][idx[slot]];
                w *= self.weights[axis][idx[slot]];
            }
            if !visit(&point, w) {
                return Ok(());
            }
            // Odometer over the selected axes, last axis fastest.
            let mut slot = axes.len();
            loop {
                if slot == 0 {
                    return Ok(());
                }
                slot -= 1;
                idx[slot] += 1;
                if idx[slot] < self.order {
                    break;
                }
                idx[slot] = 0;
            }
        }
    }

    /// Tensor-product sum of `f` over `axes` with the remaining coordinates
    /// taken from `fixed`.
    pub fn integrate<F>(&self, mut f: F, axes: &[usize], fixed: &[f64]) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut total = CompensatedSum::new();
        let mut bad = None;
        self.for_each_node(axes, fixed, |pt, w| {
            let v = f(pt);
            if !v.is_finite() {
                bad = Some(pt.to_vec());
                return false;
            }
            total.add(w * v);
            true
        })?;
        match bad {
            Some(location) => Err(Error::NonFinite {
                context: "integrand",
                location,
            }),
            None => Ok(total.value()),
        }
    }

    pub fn all_axes(&self) -> Vec<usize> {
        (0..self.cube.dim()).collect()
    }

    pub fn integrate_all<F>(&self, f: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let axes: Vec<usize> = (0..self.cube.dim()).collect();
        let fixed = self.cube.lo().to_vec();
        self.integrate(f, &axes, &fixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule_on_unit_interval() {
        let rule = QuadratureRule::new(&Cube::unit(1), 2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert!((rule.nodes(0)[0] - (0.5 - d)).abs() < 1e-15);
        assert!((rule.nodes(0)[1] - (0.5 + d)).abs() < 1e-15);
        assert!((rule.weights(0)[0] - 0.5).abs() < 1e-15);
        assert!((rule.weights(0)[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_axis_length() {
        let cube = Cube::new(vec![0.0], vec![2.0]).unwrap();
        for order in [2, 3, 7, 24, 64] {
            let rule = QuadratureRule::new(&cube, order).unwrap();
            let s: f64 = rule.weights(0).iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "order {order}: {s}");
            assert_eq!(rule.nodes(0).len(), order);
        }
    }

    #[test]
    fn nodes_inside_cube() {
        let rule = QuadratureRule::new(&Cube::unit(3), 24).unwrap();
        for axis in 0..3 {
            assert_eq!(rule.nodes(axis).len(), 24);
            assert!(rule.nodes(axis).iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn order_below_two_rejected() {
        assert!(matches!(
            QuadratureRule::new(&Cube::unit(1), 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn basic_integrals() {
        let rule = QuadratureRule::new(&Cube::unit(3), 24).unwrap();
        assert!((rule.integrate_all(|_| 1.0).unwrap() - 1.0).abs() < 1e-14);
        for k in 0..3 {
            assert!((rule.integrate_all(|x| x[k]).unwrap() - 0.5).abs() < 1e-14);
        }
        let r1 = QuadratureRule::new(&Cube::unit(1), 16).unwrap();
        let v = r1
            .integrate_all(|x| (std::f64::consts::PI * x[0]).cos().powi(2))
            .unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let cube = Cube::new(vec![-0.5, 1.0], vec![2.0, 1.5]).unwrap();
        for order in [2, 5, 12] {
            let rule = QuadratureRule::new(&cube, order).unwrap();
            let deg = 2 * order as i32 - 1;
            for (p, q) in [(deg, 0), (0, deg), (deg / 2, deg - deg / 2)] {
                let got = rule.integrate_all(|x| x[0].powi(p) * x[1].powi(q)).unwrap();
                let prim = |a: f64, b: f64, k: i32| (b.powi(k + 1) - a.powi(k + 1)) / (k + 1) as f64;
                let want = prim(-0.5, 2.0, p) * prim(1.0, 1.5, q);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "order {order} ({p},{q})");
            }
        }
    }

    #[test]
    fn non_finite_reports_node() {
        let rule = QuadratureRule::new(&Cube::unit(2), 4).unwrap();
        let err = rule
            .integrate_all(|x| if x[0] > 0.5 { f64::NAN } else { 1.0 })
            .unwrap_err();
        match err {
            Error::NonFinite { location, .. } => assert!(location[0] > 0.5),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_cube_rejected() {
        assert!(Cube::new(vec![1.0], vec![1.0]).is_err());
        assert!(Cube::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Cube::new(vec![f64::NEG_INFINITY], vec![1.0]).is_err());
    }
}
