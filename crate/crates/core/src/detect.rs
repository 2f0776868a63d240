//! Signature-based detection statistics applied after learning.
//!
//! * ACE: squared cosine between target signature and pixel after whitening
//!   by the background covariance.
//! * Hybrid sub-pixel detector: ratio of background-only to full-dictionary
//!   reconstruction error, both from Lasso codes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;

use crate::data::{BagDataset, Dictionary};
use crate::error::{Error, Result};
use crate::eval::{ScoreEntry, ScoreSet};
use crate::mihe::eps_den;
use crate::simulator::GroundTruth;
use crate::sparse::{IstaSettings, SparseCoder};

/// Default diagonal loading for the background covariance.
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub mean: DVector<f64>,
    /// Sample covariance (divisor `n − 1`) plus `ridge·I`.
    pub covariance: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

/// Fits mean and regularized covariance to the columns of `instances`.
pub fn fit_background(instances: &DMatrix<f64>, ridge: f64) -> Result<BackgroundModel> {
    let (d, n) = instances.shape();
    if n < 2 {
        return Err(Error::invalid("background model needs at least two instances"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let mean = instances.column_mean();
    let mut centered = instances.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let mut covariance = &centered * centered.transpose() / (n - 1) as f64;
    // exact symmetry
    for i in 0..d {
        covariance[(i, i)] += ridge;
        for j in 0..i {
            let v = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            covariance[(i, j)] = v;
            covariance[(j, i)] = v;
        }
    }
    let chol = covariance.clone().cholesky().ok_or_else(|| {
        Error::numerical("background covariance is singular; increase the ridge")
    })?;
    let inverse = chol.inverse();
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("background covariance inverse is not finite"));
    }
    Ok(BackgroundModel {
        mean,
        covariance,
        inverse,
    })
}

/// `(sᵀΣ⁻¹z)² / ((sᵀΣ⁻¹s)(zᵀΣ⁻¹z))` with `z = x − μ`; 0 when `z` is zero.
pub fn ace_score(
    x: DVectorView<'_, f64>,
    signature: DVectorView<'_, f64>,
    bg: &BackgroundModel,
) -> Result<f64> {
    let d = bg.mean.len();
    if x.len() != d || signature.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if x.len() != d { x.len() } else { signature.len() },
            context: "ACE input".into(),
        });
    }
    if x.iter().chain(signature.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("ACE input is not finite"));
    }
    if signature.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("ACE signature is zero"));
    }
    let z = x - &bg.mean;
    let wz = &bg.inverse * &z;
    let ws = &bg.inverse * signature;
    let cross = signature.dot(&wz);
    let ss = signature.dot(&ws);
    let zz = z.dot(&wz);
    if zz <= 0.0 || ss <= 0.0 {
        return Ok(0.0);
    }
    Ok((cross * cross / (ss * zz)).clamp(0.0, 1.0))
}

/// Hybrid detector with cached coders for `[D⁺ D⁻]` and `D⁻`.
#[derive(Debug, Clone)]
pub struct HybridDetector {
    full: SparseCoder,
    background: SparseCoder,
    eps: f64,
}

impl HybridDetector {
    pub fn new(dict: &Dictionary, settings: IstaSettings) -> Result<Self> {
        Ok(HybridDetector {
            full: SparseCoder::new(dict.full(), settings)?,
            background: SparseCoder::new(dict.backgrounds().clone(), settings)?,
            eps: eps_den(dict.dim()),
        })
    }

    /// `‖x − D⁻α_bg‖² / (‖x − Dα_full‖² + ε)`; larger means more target-like.
    pub fn score(&self, x: DVectorView<'_, f64>) -> Result<f64> {
        let a_full = self.full.solve(x)?.code;
        let a_bg = self.background.solve(x)?.code;
        let num = (x - self.background.dictionary() * a_bg).norm_squared();
        let den = (x - self.full.dictionary() * a_full).norm_squared();
        Ok(num / (den + self.eps))
    }
}

pub fn hd_score(x: DVectorView<'_, f64>, dict: &Dictionary, settings: IstaSettings) -> Result<f64> {
    HybridDetector::new(dict, settings)?.score(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ace,
    Hd,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Ace, Method::Hd];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ace => "ace",
            Method::Hd => "hd",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ace" => Ok(Method::Ace),
            "hd" => Ok(Method::Hd),
            other => Err(Error::invalid(format!(
                "unknown detection method {other:?}; valid methods: ace, hd"
            ))),
        }
    }
}

/// A ready-to-apply detector.
#[derive(Debug, Clone)]
pub enum Detector {
    /// ACE against every target column; the largest response wins.
    Ace {
        targets: DMatrix<f64>,
        background: BackgroundModel,
    },
    Hybrid(HybridDetector),
}

impl Detector {
    /// ACE with the background model fit on `background_instances`
    /// (typically every negative-bag training instance).
    pub fn ace(dict: &Dictionary, background_instances: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        if background_instances.nrows() != dict.dim() {
            return Err(Error::DimensionMismatch {
                expected: dict.dim(),
                found: background_instances.nrows(),
                context: "background instances".into(),
            });
        }
        Ok(Detector::Ace {
            targets: dict.targets().clone(),
            background: fit_background(background_instances, ridge)?,
        })
    }

    pub fn hybrid(dict: &Dictionary, settings: IstaSettings) -> Result<Self> {
        Ok(Detector::Hybrid(HybridDetector::new(dict, settings)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Detector::Ace { targets, .. } => targets.nrows(),
            Detector::Hybrid(h) => h.full.dictionary().nrows(),
        }
    }

    pub fn score(&self, x: DVectorView<'_, f64>) -> Result<f64> {
        match self {
            Detector::Ace {
                targets,
                background,
            } => {
                let mut best = 0.0f64;
                for s in targets.column_iter() {
                    best = best.max(ace_score(x, s, background)?);
                }
                Ok(best)
            }
            Detector::Hybrid(h) => h.score(x),
        }
    }

    /// Scores every column of `instances`, in parallel, preserving order.
    pub fn score_matrix(&self, instances: &DMatrix<f64>) -> Result<Vec<f64>> {
        if instances.ncols() > 0 && instances.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: instances.nrows(),
                context: "instance bands".into(),
            });
        }
        (0..instances.ncols())
            .into_par_iter()
            .map(|j| self.score(instances.column(j)))
            .collect()
    }
}

/// Scores every instance of `dataset` in bag order. Truth labels are attached
/// when `truth` is given.
pub fn score_dataset(
    dataset: &BagDataset,
    detector: &Detector,
    truth: Option<&GroundTruth>,
) -> Result<ScoreSet> {
    let labels = truth.map(GroundTruth::label_map);
    let mut entries = Vec::new();
    for bag in dataset.bags() {
        let scores = detector.score_matrix(bag.instances())?;
        for (j, score) in scores.into_iter().enumerate() {
            let truth = match &labels {
                Some(map) => Some(*map.get(&(bag.id().to_string(), j)).ok_or_else(|| {
                    Error::invalid(format!(
                        "ground truth has no entry for bag {:?} instance {j}",
                        bag.id()
                    ))
                })?),
                None => None,
            };
            entries.push(ScoreEntry {
                bag: bag.id().to_string(),
                instance: j,
                score,
                truth,
            });
        }
    }
    Ok(ScoreSet::new(entries))
}
