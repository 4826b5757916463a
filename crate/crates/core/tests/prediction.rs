mod common;

use bfsa::predict::{cond_cov, cond_mean, cond_simulate};
use bfsa::synthetic::simulate;
use bfsa::{assemble, build_plan, PredictionPlan};
use common::*;
use nalgebra::DMatrix;

#[test]
fn target_on_a_landmark_reproduces_its_value() {
    let pts = cloud(256, 11);
    let plan = build_plan(&pts, 4, 16).unwrap();
    let spec = stationary();
    let k = assemble(&spec, &pts, &plan).unwrap();
    let y = values(256, 12);
    let lm = plan.landmarks[3];
    let pp = PredictionPlan::new(&spec, &pts, &k, &[pts[lm]]).unwrap();
    let m = cond_mean(&k, &y, &pp).unwrap();
    let v = cond_cov(&k, &pp).variances();
    // The nugget keeps the fit from interpolating exactly.
    assert!((m[0] - y[lm]).abs() < 0.05, "{} vs {}", m[0], y[lm]);
    assert!(v[0] < 2e-3, "variance {}", v[0]);
    assert!(v[0] > -1e-12);
}

#[test]
fn conditioning_never_raises_variance() {
    let pts = cloud(300, 13);
    let plan = build_plan(&pts, 8, 12).unwrap();
    for spec in [stationary(), ps_two_centers()] {
        let k = assemble(&spec, &pts, &plan).unwrap();
        let targets = cloud(80, 14);
        let pp = PredictionPlan::new(&spec, &pts, &k, &targets).unwrap();
        let post = cond_cov(&k, &pp).variances();
        let prior = pp.prior_dense(&k).diagonal();
        for (a, b) in post.iter().zip(prior.iter()) {
            assert!(*a <= *b + 1e-12 && *a >= -1e-10, "{a} vs prior {b}");
        }
    }
}

#[test]
fn empty_target_set() {
    let pts = cloud(64, 15);
    let plan = build_plan(&pts, 2, 4).unwrap();
    let spec = stationary();
    let k = assemble(&spec, &pts, &plan).unwrap();
    let pp = PredictionPlan::new(&spec, &pts, &k, &[]).unwrap();
    assert!(pp.is_empty());
    assert!(cond_mean(&k, &values(64, 1), &pp).unwrap().is_empty());
    assert!(cond_cov(&k, &pp).variances().is_empty());
    let draws = cond_simulate(&k, &values(64, 1), &pp, 0, 3).unwrap();
    assert!(draws.iter().all(|d| d.is_empty()));
}

#[test]
fn unconditional_sample_covariance() {
    let pts = cloud(40, 16);
    let plan = build_plan(&pts, 2, 6).unwrap();
    let k = assemble(&ps_two_centers(), &pts, &plan).unwrap();
    let count = 20_000;
    let draws = simulate(&k, 17, count).unwrap();
    let z = DMatrix::from_fn(40, count, |i, c| draws[c][i]);
    let sample = &z * z.transpose() / count as f64;
    let kd = k.to_dense();
    // Entrywise standard error of the sample second moment.
    for i in 0..40 {
        for j in 0..40 {
            let se = ((kd[(i, i)] * kd[(j, j)] + kd[(i, j)].powi(2)) / count as f64).sqrt();
            assert!((sample[(i, j)] - kd[(i, j)]).abs() < 5.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let pts = cloud(100, 18);
    let plan = build_plan(&pts, 4, 8).unwrap();
    let spec = stationary();
    let k = assemble(&spec, &pts, &plan).unwrap();
    let y = values(100, 19);
    let pp = PredictionPlan::new(&spec, &pts, &k, &cloud(10, 20)).unwrap();
    assert_eq!(cond_simulate(&k, &y, &pp, 5, 4).unwrap(), cond_simulate(&k, &y, &pp, 5, 4).unwrap());
    assert_ne!(cond_simulate(&k, &y, &pp, 5, 4).unwrap(), cond_simulate(&k, &y, &pp, 6, 4).unwrap());
}
