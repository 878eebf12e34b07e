//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use condcov::basis::BasisModel;
use condcov::functionals::{row_coords, EtaFunction};
use condcov::pilot::PairSample;
use condcov::quadrature::QuadratureRule;

/// `g_l(row)` by direct quadrature over the whole `x`-block.
fn direct_g(eta: &dyn EtaFunction, model: &BasisModel, rule: &QuadratureRule, row: &[f64]) -> Vec<f64> {
    let (xi, xj, y) = row_coords(row);
    let x_dims = model.x_dims();
    let axes: Vec<usize> = (0..x_dims).collect();
    model
        .indices()
        .iter()
        .map(|idx| {
            rule.integrate(
                |pt| {
                    let (s, t) = if x_dims == 2 { (pt[0], pt[1]) } else { (pt[0], pt[0]) };
                    let psi = eta.eval(s, xj, y) + eta.eval(xi, t, y);
                    model.eval(idx, pt).unwrap() * psi
                },
                &axes,
                row,
            )
            .unwrap()
        })
        .collect()
}

/// `c_{ll'}` by direct quadrature over `(x_1, x_2, y)`.
pub fn direct_cross(eta: &dyn EtaFunction, model: &BasisModel, rule: &QuadratureRule) -> Vec<f64> {
    let x_dims = model.x_dims();
    let m = model.size();
    let q = rule.order();
    let y_axis = x_dims;
    let mut c = vec![0.0; m * m];
    // Enumerate x_1 and x_2 on the x-block grid explicitly.
    let grid: Vec<(Vec<f64>, f64)> = if x_dims == 2 {
        let mut g = Vec::new();
        for a in 0..q {
            for b in 0..q {
                g.push((
                    vec![rule.nodes(0)[a], rule.nodes(1)[b]],
                    rule.weights(0)[a] * rule.weights(1)[b],
                ));
            }
        }
        g
    } else {
        (0..q).map(|a| (vec![rule.nodes(0)[a]], rule.weights(0)[a])).collect()
    };
    for r in 0..q {
        let y = rule.nodes(y_axis)[r];
        let wy = rule.weights(y_axis)[r];
        for (x1, w1) in &grid {
            let mut p1 = x1.clone();
            p1.push(y);
            let v1 = model.eval_all(&p1).unwrap();
            for (x2, w2) in &grid {
                let mut p2 = x2.clone();
                p2.push(y);
                let v2 = model.eval_all(&p2).unwrap();
                let e = eta.eval(x1[0], *x2.last().unwrap(), y);
                let w = wy * w1 * w2 * e;
                for l in 0..m {
                    for lp in 0..m {
                        c[l * m + lp] += w * v1[l] * v2[lp];
                    }
                }
            }
        }
    }
    c
}

/// The literal double sum over ordered pairs `k ≠ k'`.
pub fn brute_force_theta(eta: &dyn EtaFunction, sample: &PairSample, model: &BasisModel, rule: &QuadratureRule) -> f64 {
    let n = sample.len();
    let m = model.size();
    let c = direct_cross(eta, model, rule);
    let p: Vec<Vec<f64>> = sample.rows().map(|r| model.eval_all(r).unwrap()).collect();
    let g: Vec<Vec<f64>> = sample.rows().map(|r| direct_g(eta, model, rule, r)).collect();
    let mut total = 0.0;
    for k in 0..n {
        for kp in 0..n {
            if k == kp {
                continue;
            }
            for l in 0..m {
                total += p[k][l] * g[kp][l];
                for lp in 0..m {
                    total -= p[k][l] * p[kp][lp] * c[l * m + lp];
                }
            }
        }
    }
    total / (n as f64 * (n as f64 - 1.0))
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
