mod common;

use common::*;
use mihe_core::data::{Column, HyperParams};
use mihe_core::detect::{fit_background, ace_score, Detector};
use mihe_core::eval::{auc_of, ScoreSet};
use mihe_core::mihe::{grad_column, objective, CodeSet};
use mihe_core::sparse::{kkt_residual, IstaSettings, SparseCoder};
use nalgebra::DVector;
use rand::Rng;

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

#[test]
fn objective_matches_straight_line_formula() {
    let mut r = rng(11);
    for case in 0..30 {
        let d = r.gen_range(3..=10);
        let total = r.gen_range(8..=20);
        let data = random_dataset(&mut r, d, total);
        let dict = random_dictionary(&mut r, d, 1, 2);
        let params = HyperParams {
            p: [1.0, 3.0, 5.0, -2.0][case % 4],
            beta: r.gen_range(0.5..6.0),
            rho: (case % 3 == 0).then_some(0.4),
            ..Default::default()
        };
        let codes = CodeSet::compute(&data, &dict, Default::default(), None).unwrap();
        let lib = objective(&data, &dict, &codes, &params).unwrap();
        let oracle = objective_straight(&data, &dict, &codes, &params);
        assert!(
            (lib - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
            "case {case}: {lib} vs {oracle}"
        );
    }
}

#[test]
fn gradient_matches_finite_differences_across_settings() {
    let mut r = rng(12);
    for case in 0..12 {
        let d = r.gen_range(4..=8);
        let data = random_dataset(&mut r, d, 16);
        let dict = random_dictionary(&mut r, d, 1 + case % 2, 2);
        let params = HyperParams {
            p: [5.0, 1.0, -3.0][case % 3],
            beta: [1.0, 5.0][case % 2],
            nonnegative: case % 4 == 3,
            ..Default::default()
        };
        let settings = IstaSettings {
            nonnegative: params.nonnegative,
            ..Default::default()
        };
        let codes = CodeSet::compute(&data, &dict, settings, None).unwrap();
        for which in dict.columns() {
            let g = grad_column(&data, &dict, &codes, &params, which).unwrap();
            let fd = grad_finite_difference(&data, &dict, &codes, &params, which, 1e-5);
            assert!(rel_err(&g, &fd) <= 1e-4, "case {case} {which:?}: {g} vs {fd}");
        }
    }
}

#[test]
fn target_gradient_follows_beta_through_finite_differences() {
    // the positive-bag part of the target gradient is checked at two β values
    let mut r = rng(13);
    let data = random_dataset(&mut r, 6, 16);
    let dict = random_dictionary(&mut r, 6, 1, 2);
    let codes = CodeSet::compute(&data, &dict, Default::default(), None).unwrap();
    let mut grads = Vec::new();
    for beta in [1.5, 3.0] {
        let params = HyperParams { beta, ..Default::default() };
        let g = grad_column(&data, &dict, &codes, &params, Column::Target(0)).unwrap();
        let fd = grad_finite_difference(&data, &dict, &codes, &params, Column::Target(0), 1e-5);
        assert!(rel_err(&g, &fd) <= 1e-4);
        grads.push(g);
    }
    assert!(rel_err(&grads[0], &grads[1]) > 1e-3, "β must change the gradient");
}

#[test]
fn ista_matches_coordinate_descent_including_nonnegative() {
    let mut r = rng(14);
    for case in 0..40 {
        let m = r.gen_range(1..=8);
        let d = r.gen_range(m..=16);
        let dm = random_matrix(&mut r, d, m);
        let x = DVector::from_fn(d, |_, _| r.gen_range(-2.0..2.0));
        let lambda = r.gen_range(0.01..0.8);
        let nonnegative = case % 2 == 1;
        let coder = SparseCoder::new(
            dm.clone(),
            IstaSettings { lambda, iters: 200_000, tol: 1e-15, nonnegative },
        )
        .unwrap();
        let sol = coder.solve(x.as_view()).unwrap();
        let oracle = if nonnegative {
            nonnegative_cd(&dm, &x, lambda)
        } else {
            lasso_coordinate_descent(&dm, &x, lambda)
        };
        let best = lasso_value(&dm, &x, &oracle, lambda);
        assert!((sol.objective - best).abs() <= 1e-9, "case {case}: {} vs {best}", sol.objective);
        if !nonnegative {
            assert!(kkt_residual(&dm, x.as_view(), &sol.code, lambda) <= 1e-6);
        }
    }
}

fn nonnegative_cd(d: &nalgebra::DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let m = d.ncols();
    let mut a = DVector::zeros(m);
    for _ in 0..200_000 {
        let mut moved: f64 = 0.0;
        for j in 0..m {
            let c = d.column(j);
            let r = x - d * &a + c * a[j];
            let new = ((c.dot(&r) - lambda) / c.norm_squared()).max(0.0);
            moved = moved.max((new - a[j]).abs());
            a[j] = new;
        }
        if moved < 1e-15 {
            break;
        }
    }
    a
}

#[test]
fn ace_matches_whitened_cosine() {
    let mut r = rng(15);
    for _ in 0..25 {
        let d = r.gen_range(2..=8);
        let n = r.gen_range(d + 2..=40);
        let bg = random_matrix(&mut r, d, n);
        let ridge = [0.0, 1e-6, 0.1][r.gen_range(0..3)];
        let model = fit_background(&bg, ridge).unwrap();
        let s = DVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0));
        for _ in 0..5 {
            let x = DVector::from_fn(d, |_, _| r.gen_range(-2.0..2.0));
            let lib = ace_score(x.as_view(), s.as_view(), &model).unwrap();
            let oracle = ace_by_whitening(&bg, ridge, &s, &x);
            assert!((lib - oracle).abs() <= 1e-9, "{lib} vs {oracle}");
        }
    }
}

#[test]
fn ace_detector_takes_the_best_target() {
    let mut r = rng(16);
    let d = 5;
    let bg = random_matrix(&mut r, d, 30);
    let dict = random_dictionary(&mut r, d, 3, 2);
    let det = Detector::ace(&dict, &bg, 1e-6).unwrap();
    for _ in 0..10 {
        let x = DVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0));
        let best = (0..3)
            .map(|t| ace_by_whitening(&bg, 1e-6, &dict.targets().column(t).into_owned(), &x))
            .fold(0.0, f64::max);
        assert!((det.score(x.as_view()).unwrap() - best).abs() <= 1e-9);
    }
}

#[test]
fn auc_matches_pair_counting_with_heavy_ties() {
    let mut r = rng(17);
    for _ in 0..50 {
        let n = r.gen_range(2..=40);
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..4) as f64).collect();
        let lib = auc_of(&ScoreSet::from_labeled(&scores, &labels).unwrap()).unwrap();
        assert!((lib - auc_by_pairs(&scores, &labels)).abs() <= 1e-12);
    }
}
