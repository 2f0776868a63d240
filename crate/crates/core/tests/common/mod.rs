//! Independent reference implementations used to check the library, plus
//! random fixture builders.
#![allow(dead_code)]

use mihe_core::data::{Bag, BagDataset, Column, Dictionary, HyperParams, Label};
use mihe_core::mihe::{objective, CodeSet};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Cyclic coordinate descent for `½‖x − Dα‖² + λ‖α‖₁`, run until no
/// coordinate moves by more than `1e-15` (or a sweep cap).
pub fn lasso_coordinate_descent(d: &DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let m = d.ncols();
    let col_sq: Vec<f64> = (0..m).map(|j| d.column(j).norm_squared()).collect();
    let mut a = DVector::zeros(m);
    let mut r = x.clone();
    for _ in 0..1_000_000 {
        let mut biggest: f64 = 0.0;
        for j in 0..m {
            let old = a[j];
            let rho = d.column(j).dot(&r) + col_sq[j] * old;
            let new = if rho > lambda {
                (rho - lambda) / col_sq[j]
            } else if rho < -lambda {
                (rho + lambda) / col_sq[j]
            } else {
                0.0
            };
            if new != old {
                r.axpy(old - new, &d.column(j), 1.0);
                a[j] = new;
                biggest = biggest.max((new - old).abs());
            }
        }
        if biggest < 1e-15 {
            break;
        }
    }
    a
}

pub fn lasso_value(d: &DMatrix<f64>, x: &DVector<f64>, a: &DVector<f64>, lambda: f64) -> f64 {
    let r = x - d * a;
    0.5 * r.dot(&r) + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    good / pairs
}

/// ACE as the squared cosine between whitened vectors, with the whitening
/// transform `Σ^{-1/2}` taken from an eigendecomposition.
pub fn ace_by_whitening(
    background: &DMatrix<f64>,
    ridge: f64,
    signature: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let (d, n) = background.shape();
    let mut mean = DVector::<f64>::zeros(d);
    for j in 0..n {
        for i in 0..d {
            mean[i] += background[(i, j)] / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for j in 0..n {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (background[(a, j)] - mean[a]) * (background[(b, j)] - mean[b])
                    / (n - 1) as f64;
            }
        }
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(cov);
    let inv_sqrt: DMatrix<f64> =
        DMatrix::from_diagonal(&eig.eigenvalues.map(|l: f64| 1.0 / l.sqrt()));
    let w: DMatrix<f64> = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let ws: DVector<f64> = &w * signature;
    let centered: DVector<f64> = x - mean;
    let wz: DVector<f64> = &w * centered;
    let c = ws.dot(&wz);
    c * c / (ws.norm_squared() * wz.norm_squared())
}

/// The objective written out term by term without log-domain tricks.
pub fn objective_straight(
    dataset: &BagDataset,
    dict: &Dictionary,
    codes: &CodeSet,
    params: &HyperParams,
) -> f64 {
    let full = dict.full();
    let bgs = dict.backgrounds();
    let eps = 1e-8 * dict.dim() as f64;
    let rho = params.rho.unwrap_or_else(|| {
        let c = dataset.counts();
        (c.positive_instances as f64 / c.negative_instances as f64).min(1.0)
    });
    let sq = |x: nalgebra::DVectorView<'_, f64>, m: &DMatrix<f64>, a: &DVector<f64>| {
        let mut total = 0.0;
        for i in 0..x.len() {
            let mut recon = 0.0;
            for k in 0..a.len() {
                recon += m[(i, k)] * a[k];
            }
            total += (x[i] - recon).powi(2);
        }
        total
    };
    let mut j = 0.0;
    for (bag, bc) in dataset.bags().iter().zip(&codes.bags) {
        if bag.label() == Label::Positive {
            let mut mean = 0.0;
            for (i, code) in bc.iter().enumerate() {
                let num = sq(bag.instance(i), &full, code.full.as_ref().unwrap());
                let den = sq(bag.instance(i), bgs, &code.background).max(eps);
                let prob = (-params.beta * num / den).exp();
                mean += prob.powf(params.p) / bag.len() as f64;
            }
            j -= mean.powf(1.0 / params.p).ln();
        } else {
            for (i, code) in bc.iter().enumerate() {
                j += rho * sq(bag.instance(i), bgs, &code.background);
            }
        }
    }
    j
}

/// Central differences of the objective in every entry of one column, with
/// the codes held fixed.
pub fn grad_finite_difference(
    dataset: &BagDataset,
    dict: &Dictionary,
    codes: &CodeSet,
    params: &HyperParams,
    which: Column,
    h: f64,
) -> DVector<f64> {
    let col = dict.column(which);
    DVector::from_fn(col.len(), |i, _| {
        let mut plus = dict.clone();
        let mut c = col.clone();
        c[i] += h;
        plus.set_column(which, &c);
        let mut minus = dict.clone();
        c[i] -= 2.0 * h;
        minus.set_column(which, &c);
        let fp = objective(dataset, &plus, codes, params).unwrap();
        let fm = objective(dataset, &minus, codes, params).unwrap();
        (fp - fm) / (2.0 * h)
    })
}

/// Small random bag dataset: positive bags hold a hidden extra direction in
/// some instances.
pub fn random_dataset(rng: &mut ChaCha8Rng, d: usize, total: usize) -> BagDataset {
    let basis = random_matrix(rng, d, 3);
    let per_bag = (total / 4).max(1);
    let bags = (0..4)
        .map(|b| {
            let positive = b < 2;
            let mut x = DMatrix::zeros(d, per_bag);
            for j in 0..per_bag {
                let mut v = basis.column(0) * rng.gen_range(0.2..1.0)
                    + basis.column(1) * rng.gen_range(0.2..1.0);
                if positive && j % 2 == 0 {
                    v += basis.column(2) * rng.gen_range(0.3..1.0);
                }
                for i in 0..d {
                    v[i] += 0.05 * rng.gen_range(-1.0..1.0);
                }
                x.set_column(j, &v);
            }
            let label = if positive { Label::Positive } else { Label::Negative };
            Bag::new(format!("b{b}"), label, x).unwrap()
        })
        .collect();
    BagDataset::new(bags).unwrap()
}

pub fn random_dictionary(rng: &mut ChaCha8Rng, d: usize, t: usize, m: usize) -> Dictionary {
    Dictionary::normalized(random_matrix(rng, d, t), random_matrix(rng, d, m)).unwrap()
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}
