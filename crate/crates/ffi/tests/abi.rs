use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use condcov::estimator::{estimate_matrix, estimate_pair, Dataset, EstimatorConfig};
use condcov::simulate::{generate, ModelKind, ModelSpec};
use condcov_ffi::*;

fn sample(p: usize, n: usize) -> (Vec<f64>, Vec<f64>, Dataset) {
    let data = generate(&ModelSpec::default_for(ModelKind::TruncatedLinear, p), n, 3).unwrap();
    let mut x = Vec::with_capacity(n * p);
    for r in 0..n {
        for c in 0..p {
            x.push(data.x(r, c));
        }
    }
    (x, data.y().to_vec(), data)
}

struct Config(*mut CondcovConfig);

impl Config {
    fn new(seed: u64) -> Self {
        let cfg = condcov_config_new();
        assert!(!cfg.is_null());
        assert_eq!(condcov_config_set_seed(cfg, seed), CondcovStatus::Ok);
        Config(cfg)
    }
}

impl Drop for Config {
    fn drop(&mut self) {
        unsafe { condcov_config_free(self.0) };
    }
}

#[test]
fn matrix_estimate_matches_the_rust_api() {
    let (x, y, data) = sample(3, 300);
    let cfg = Config::new(11);
    let mut est = ptr::null_mut();
    let status = unsafe { condcov_estimate_matrix(x.as_ptr(), y.as_ptr(), 300, 3, cfg.0, &mut est) };
    assert_eq!(status, CondcovStatus::Ok, "{:?}", last_error_message());
    assert!(last_error_message().is_none());
    assert_eq!(condcov_matrix_estimate_dim(est), 3);

    let reference = estimate_matrix(&data, &EstimatorConfig { seed: 11, ..EstimatorConfig::default() }).unwrap();
    let mut cov = [0.0; 9];
    let mut t = [0.0; 9];
    let mut vals = [0.0; 3];
    let mut vecs = [0.0; 9];
    unsafe {
        assert_eq!(condcov_matrix_estimate_cov(est, cov.as_mut_ptr(), 9), CondcovStatus::Ok);
        assert_eq!(condcov_matrix_estimate_t(est, t.as_mut_ptr(), 9), CondcovStatus::Ok);
        assert_eq!(condcov_matrix_estimate_eigenvalues(est, vals.as_mut_ptr(), 3), CondcovStatus::Ok);
        assert_eq!(condcov_matrix_estimate_eigenvectors(est, vecs.as_mut_ptr(), 9), CondcovStatus::Ok);
    }
    for i in 0..3 {
        assert_eq!(vals[i], reference.eigenvalues[i]);
        for j in 0..3 {
            assert_eq!(cov[i * 3 + j], reference.cov_matrix[i][j]);
            assert_eq!(t[i * 3 + j], reference.t_matrix[i][j]);
            assert_eq!(vecs[i * 3 + j], reference.eigenvectors[i][j]);
        }
    }

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { condcov_matrix_estimate_to_json(est, &mut json) }, CondcovStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    let cfg_echo = EstimatorConfig { seed: 11, ..EstimatorConfig::default() };
    assert_eq!(text, reference.to_json(&cfg_echo).unwrap());
    unsafe {
        condcov_string_free(json);
        condcov_matrix_estimate_free(est);
    }
}

#[test]
fn pair_estimate_matches_the_rust_api() {
    let (x, y, data) = sample(2, 200);
    let cfg = Config::new(5);
    assert_eq!(condcov_config_set_confidence(cfg.0, 0.9), CondcovStatus::Ok);
    assert_eq!(condcov_config_set_basis_size(cfg.0, 12), CondcovStatus::Ok);
    let mut out = CondcovPairEstimate::default();
    let status = unsafe { condcov_estimate_pair(x.as_ptr(), y.as_ptr(), 200, 2, 1, 0, cfg.0, &mut out) };
    assert_eq!(status, CondcovStatus::Ok);
    let rust_cfg = EstimatorConfig {
        seed: 5,
        delta: 0.1,
        size_rule: condcov::basis::SizeRule::Fixed(12),
        ..EstimatorConfig::default()
    };
    let reference = estimate_pair(0, 1, &data, &rust_cfg).unwrap();
    assert_eq!(out.t_hat, reference.t_hat);
    assert_eq!(out.ci_lo, reference.ci_lo);
    assert_eq!(out.n2, reference.n2);
    assert!(out.basis_size >= 12);
}

#[test]
fn errors_map_to_status_codes() {
    let (x, y, _) = sample(2, 100);
    let cfg = Config::new(1);
    assert_eq!(condcov_config_set_confidence(cfg.0, 1.5), CondcovStatus::ConfigError);
    assert!(last_error_message().unwrap().contains("confidence"));
    assert_eq!(condcov_config_set_clip(cfg.0, 2.0, 1.0), CondcovStatus::ConfigError);
    assert_eq!(condcov_config_set_quad_order(cfg.0, 0), CondcovStatus::ConfigError);
    assert_eq!(condcov_config_set_seed(ptr::null_mut(), 1), CondcovStatus::NullPointer);

    let mut est = ptr::null_mut();
    let too_few = unsafe { condcov_estimate_matrix(x.as_ptr(), y.as_ptr(), 10, 2, cfg.0, &mut est) };
    assert_eq!(too_few, CondcovStatus::DataError);
    assert!(est.is_null());

    let mut bad_y = y.clone();
    bad_y[4] = f64::NAN;
    let nan = unsafe { condcov_estimate_matrix(x.as_ptr(), bad_y.as_ptr(), 100, 2, cfg.0, &mut est) };
    assert_eq!(nan, CondcovStatus::DataError);

    let no_x = unsafe { condcov_estimate_matrix(ptr::null(), y.as_ptr(), 100, 2, cfg.0, &mut est) };
    assert_eq!(no_x, CondcovStatus::NullPointer);
    let no_cfg = unsafe { condcov_estimate_matrix(x.as_ptr(), y.as_ptr(), 100, 2, ptr::null(), &mut est) };
    assert_eq!(no_cfg, CondcovStatus::NullPointer);

    let mut out = CondcovPairEstimate::default();
    let bad_index = unsafe { condcov_estimate_pair(x.as_ptr(), y.as_ptr(), 100, 2, 0, 5, cfg.0, &mut out) };
    assert_eq!(bad_index, CondcovStatus::ConfigError);

    let status = unsafe { condcov_estimate_matrix(x.as_ptr(), y.as_ptr(), 100, 2, cfg.0, &mut est) };
    assert_eq!(status, CondcovStatus::Ok);
    let mut small = [0.0; 3];
    let short = unsafe { condcov_matrix_estimate_cov(est, small.as_mut_ptr(), 3) };
    assert_eq!(short, CondcovStatus::ConfigError);
    unsafe {
        condcov_matrix_estimate_free(est);
        condcov_matrix_estimate_free(ptr::null_mut());
        condcov_config_free(ptr::null_mut());
        condcov_string_free(ptr::null_mut());
    }
    assert_eq!(condcov_matrix_estimate_dim(ptr::null()), 0);
}

/// Directory holding the library artifacts of the current build profile.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header_and_static_library() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libcondcov_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler on PATH");
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with('{'));
}
