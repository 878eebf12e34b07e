use condcov::estimator::{symmetric_eigen, EstimatorConfig};
use condcov::simulate::{
    coverage_study, generate, hoeffding_diagnostic, oracle, rate_study, ModelKind, ModelSpec, ORACLE_ORDER,
};
use condcov::{Error, ErrorClass};

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn all_models(p: usize) -> Vec<ModelSpec> {
    [ModelKind::IndependentUniform, ModelKind::TruncatedLinear, ModelKind::NonlinearLink]
        .into_iter()
        .map(|k| ModelSpec::default_for(k, p))
        .collect()
}

#[test]
fn generator_is_deterministic_and_stays_in_its_box() {
    for model in all_models(3) {
        let a = generate(&model, 500, 11).unwrap();
        let b = generate(&model, 500, 11).unwrap();
        let c = generate(&model, 500, 12).unwrap();
        assert_eq!(a.y(), b.y());
        assert_ne!(a.y(), c.y());
        let [xlo, xhi] = model.x_range();
        let [ylo, yhi] = model.y_range();
        for r in 0..a.n() {
            for k in 0..3 {
                assert!((xlo..=xhi).contains(&a.x(r, k)));
                assert!(a.x(r, k) == b.x(r, k));
            }
            assert!((ylo..=yhi).contains(&a.y()[r]));
        }
    }
}

#[test]
fn linear_model_couples_first_coordinate_and_response() {
    let model = ModelSpec::truncated_linear(vec![1.0, 0.0], 0.5);
    let data = generate(&model, 5000, 3).unwrap();
    let x = data.x_column(0);
    let y = data.y();
    let (mx, _) = mean_and_se(&x);
    let (my, _) = mean_and_se(y);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>();
    assert!(cov > 0.0);
}

#[test]
fn generator_means_match_oracle() {
    for model in all_models(2) {
        let truth = oracle(&model, ORACLE_ORDER).unwrap();
        let data = generate(&model, 100_000, 5).unwrap();
        for k in 0..2 {
            let (m, se) = mean_and_se(&data.x_column(k));
            assert!(
                (m - truth.mean[k]).abs() <= 4.0 * se,
                "{:?} coordinate {k}: {m} vs {} (se {se})",
                model.kind,
                truth.mean[k]
            );
        }
    }
}

/// The response window always contains `link(x) ± 4σ`, so the `X` marginal
/// of the link models is the standard normal truncated to `[-a, a]`.
fn truncated_normal_variance(a: f64) -> f64 {
    let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = statrs::function::erf::erf(a / std::f64::consts::SQRT_2);
    1.0 - 2.0 * a * phi / mass
}

#[test]
fn generator_variances_match_closed_form() {
    for model in all_models(2) {
        let target = match model.kind {
            ModelKind::IndependentUniform => 1.0 / 12.0,
            _ => truncated_normal_variance(model.x_half_width),
        };
        let data = generate(&model, 100_000, 6).unwrap();
        for k in 0..2 {
            let x = data.x_column(k);
            let (m, _) = mean_and_se(&x);
            let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
            let (var, se) = mean_and_se(&sq);
            assert!((var - target).abs() <= 4.0 * se, "{:?} coordinate {k}: {var} vs {target} (se {se})", model.kind);
        }
    }
}

#[test]
fn generator_second_moments_are_consistent_with_oracle() {
    // E[X_i X_j] = T_ij + E[Cov(X_i, X_j | Y)] and the conditional
    // covariance matrix is PSD, so the raw second-moment matrix minus T is PSD.
    let model = ModelSpec::default_for(ModelKind::TruncatedLinear, 2);
    let truth = oracle(&model, ORACLE_ORDER).unwrap();
    let data = generate(&model, 100_000, 8).unwrap();
    let n = data.n() as f64;
    let mut second = vec![vec![0.0; 2]; 2];
    for r in 0..data.n() {
        for a in 0..2 {
            for b in 0..2 {
                second[a][b] += data.x(r, a) * data.x(r, b) / n;
            }
        }
    }
    let gap: Vec<Vec<f64>> = (0..2).map(|a| (0..2).map(|b| second[a][b] - truth.t[a][b]).collect()).collect();
    let (vals, _) = symmetric_eigen(&gap).unwrap();
    assert!(vals[1] > -0.02, "{vals:?}");
}

#[test]
fn independent_model_has_zero_target_covariance() {
    let truth = oracle(&ModelSpec::independent_uniform(4), ORACLE_ORDER).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(truth.cov[i][j], 0.0);
            assert!((truth.t[i][j] - 0.25).abs() < 1e-15);
            let c = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
            assert!((truth.c[i][j] - c).abs() < 1e-15);
        }
    }
}

#[test]
fn linear_oracle_is_rank_one_and_converged() {
    let model = ModelSpec::default_for(ModelKind::TruncatedLinear, 3);
    let coarse = oracle(&model, 48).unwrap();
    let fine = oracle(&model, 64).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((coarse.cov[i][j] - fine.cov[i][j]).abs() < 1e-8);
            assert!((coarse.c[i][j] - fine.c[i][j]).abs() < 1e-8);
        }
    }
    let (vals, vecs) = symmetric_eigen(&fine.cov).unwrap();
    assert!(vals[0] > 0.1);
    assert!(vals[1].abs() < 1e-10 && vals[2].abs() < 1e-10, "{vals:?}");
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((vecs[0][0] - s).abs() < 1e-8 && (vecs[0][1] - s).abs() < 1e-8 && vecs[0][2].abs() < 1e-8);
}

#[test]
fn more_noise_shrinks_the_top_eigenvalue() {
    let top = |sigma: f64| {
        let truth = oracle(&ModelSpec::truncated_linear(vec![1.0, 1.0, 0.0], sigma), ORACLE_ORDER).unwrap();
        symmetric_eigen(&truth.cov).unwrap().0[0]
    };
    assert!(top(1.0) < top(0.5));
}

#[test]
fn oracle_rejects_large_p_for_quadrature_models() {
    let model = ModelSpec::default_for(ModelKind::TruncatedLinear, 5);
    assert!(matches!(oracle(&model, ORACLE_ORDER), Err(Error::InvalidConfig(_))));
}

#[test]
fn infeasible_truncation_is_reported() {
    // P(|X| < 0.004) is about 0.3%, below the 1% acceptance floor.
    let mut model = ModelSpec::truncated_linear(vec![1.0], 0.5);
    model.x_half_width = 0.004;
    let err = generate(&model, 100, 1).unwrap_err();
    assert!(matches!(err, Error::InfeasibleTruncation { .. }), "{err}");
    assert_eq!(err.class(), ErrorClass::Config);
}

#[test]
fn study_replication_minimums() {
    let model = ModelSpec::independent_uniform(2);
    let cfg = EstimatorConfig::default();
    assert!(matches!(
        rate_study(&model, (0, 1), &[100], 99, &cfg, 1),
        Err(Error::InvalidConfig(_))
    ));
    assert!(matches!(
        coverage_study(&model, (0, 1), 100, 199, &cfg, 1),
        Err(Error::InvalidConfig(_))
    ));
    assert!(matches!(
        hoeffding_diagnostic(&model, 100, 199, &cfg, 1),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn rate_study_is_reproducible() {
    let model = ModelSpec::independent_uniform(2);
    let cfg = EstimatorConfig::default();
    let a = rate_study(&model, (0, 1), &[60, 120], 100, &cfg, 9).unwrap();
    let b = rate_study(&model, (0, 1), &[60, 120], 100, &cfg, 9).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.records.len(), 200);
    assert!(a.slope.is_some());
    assert_eq!(a.first_data_seeds.len(), 2);
}

#[test]
fn half_level_intervals_cover_about_half_the_time() {
    let model = ModelSpec::independent_uniform(2);
    let cfg = EstimatorConfig {
        delta: 0.5,
        ..EstimatorConfig::default()
    };
    let result = coverage_study(&model, (0, 1), 400, 200, &cfg, 4).unwrap();
    let cov = result.coverage[0];
    assert!((cov - 0.5).abs() <= 0.07, "coverage {cov}");
}

#[test]
fn hoeffding_parts_are_centered() {
    let model = ModelSpec::independent_uniform(2);
    let r = hoeffding_diagnostic(&model, 200, 200, &EstimatorConfig::default(), 6).unwrap();
    assert!(r.u_mean.abs() <= 3.0 * r.u_se, "{r:?}");
    assert!(r.linear_mean.abs() <= 3.0 * r.linear_se, "{r:?}");
}
