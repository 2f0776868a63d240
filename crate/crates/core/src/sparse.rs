//! Lasso sparse coding by iterative shrinkage-thresholding (ISTA).
//!
//! Minimizes `½‖x − Dα‖² + λ‖α‖₁` with the fixed step `1/L`, where `L` is the
//! largest eigenvalue of `DᵀD`. A [`SparseCoder`] caches the Gram matrix and
//! `L` so that many signals can be coded against one dictionary cheaply.

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaSettings {
    pub lambda: f64,
    pub iters: usize,
    /// Stop once one iteration lowers the objective by less than this.
    pub tol: f64,
    /// Clamp coefficients at zero (projected soft-threshold).
    pub nonnegative: bool,
}

impl Default for IstaSettings {
    fn default() -> Self {
        IstaSettings {
            lambda: 1e-3,
            iters: 200,
            tol: 1e-6,
            nonnegative: false,
        }
    }
}

/// A single Lasso instance.
#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    pub dictionary: &'a DMatrix<f64>,
    pub signal: DVectorView<'a, f64>,
    pub settings: IstaSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub code: DVector<f64>,
    /// Lasso objective at `code`, evaluated from the explicit residual.
    pub objective: f64,
    pub iterations: usize,
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[inline]
fn shrink(v: f64, t: f64, nonnegative: bool) -> f64 {
    if nonnegative {
        (v - t).max(0.0)
    } else {
        soft_threshold(v, t)
    }
}

/// `½‖x − Dα‖² + λ‖α‖₁`.
pub fn lasso_objective(
    dictionary: &DMatrix<f64>,
    signal: DVectorView<'_, f64>,
    code: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let r = signal - dictionary * code;
    0.5 * r.norm_squared() + lambda * code.lp_norm(1)
}

/// Largest violation of the Lasso optimality conditions at `code`.
///
/// With `g = Dᵀ(Dα − x)`: zero coordinates need `|g_j| ≤ λ`, nonzero ones
/// need `g_j = −λ·sign(α_j)`.
pub fn kkt_residual(
    dictionary: &DMatrix<f64>,
    signal: DVectorView<'_, f64>,
    code: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let g = dictionary.tr_mul(&(dictionary * code - signal));
    g.iter()
        .zip(code.iter())
        .map(|(&gj, &aj)| {
            if aj == 0.0 {
                (gj.abs() - lambda).max(0.0)
            } else {
                (gj + lambda * aj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// ISTA state shared by every signal coded against one dictionary.
#[derive(Debug, Clone)]
pub struct SparseCoder {
    dictionary: DMatrix<f64>,
    gram: DMatrix<f64>,
    lipschitz: f64,
    settings: IstaSettings,
}

impl SparseCoder {
    pub fn new(dictionary: DMatrix<f64>, settings: IstaSettings) -> Result<Self> {
        if dictionary.ncols() == 0 || dictionary.nrows() == 0 {
            return Err(Error::invalid("sparse coding needs a nonempty dictionary"));
        }
        if !(settings.lambda >= 0.0 && settings.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if dictionary.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("dictionary contains non-finite values"));
        }
        if let Some(j) = dictionary.column_iter().position(|c| c.iter().all(|&v| v == 0.0)) {
            return Err(Error::numerical(format!(
                "dictionary column {j} is all zeros; step size is undefined"
            )));
        }
        let gram = dictionary.tr_mul(&dictionary);
        let lipschitz = SymmetricEigen::new(gram.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::numerical("could not estimate the ISTA step size"));
        }
        Ok(SparseCoder {
            dictionary,
            gram,
            lipschitz,
            settings,
        })
    }

    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.dictionary
    }

    /// Squared spectral norm of the dictionary.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn settings(&self) -> &IstaSettings {
        &self.settings
    }

    pub fn solve(&self, signal: DVectorView<'_, f64>) -> Result<LassoSolution> {
        self.solve_from(signal, None)
    }

    /// Solves starting from `warm` instead of zero.
    pub fn solve_from(
        &self,
        signal: DVectorView<'_, f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<LassoSolution> {
        self.run(signal, warm, None)
    }

    /// Like [`solve`](Self::solve) but also returns the objective after every
    /// iteration (index 0 is the starting point).
    pub fn solve_traced(
        &self,
        signal: DVectorView<'_, f64>,
    ) -> Result<(LassoSolution, Vec<f64>)> {
        let mut trace = Vec::new();
        let sol = self.run(signal, None, Some(&mut trace))?;
        Ok((sol, trace))
    }

    fn run(
        &self,
        signal: DVectorView<'_, f64>,
        warm: Option<&DVector<f64>>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<LassoSolution> {
        let m = self.dictionary.ncols();
        if signal.len() != self.dictionary.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.dictionary.nrows(),
                found: signal.len(),
                context: "signal length".into(),
            });
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("signal contains non-finite values"));
        }
        let IstaSettings {
            lambda,
            iters,
            tol,
            nonnegative,
        } = self.settings;
        let l = self.lipschitz;
        let thresh = lambda / l;

        let corr = self.dictionary.tr_mul(&signal);
        let half_xx = 0.5 * signal.norm_squared();
        if !half_xx.is_finite() {
            return Err(Error::numerical("signal energy overflows"));
        }

        let mut alpha = match warm {
            Some(w) if w.len() == m => w.clone(),
            Some(w) => {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: w.len(),
                    context: "warm-start code".into(),
                })
            }
            None => DVector::zeros(m),
        };
        // G·α is carried between iterations: it gives both the next gradient
        // and the smooth part ½xᵀx − αᵀDᵀx + ½αᵀGα of the objective.
        let gram = self.gram.as_slice();
        let c = corr.as_slice();
        let mut g_alpha = vec![0.0; m];
        let a = alpha.as_mut_slice();
        gram_times(gram, a, &mut g_alpha);
        let objective = |a: &[f64], ga: &[f64]| {
            let mut smooth = half_xx;
            let mut l1 = 0.0;
            for j in 0..a.len() {
                smooth += a[j] * (0.5 * ga[j] - c[j]);
                l1 += a[j].abs();
            }
            smooth + lambda * l1
        };
        let mut f = objective(a, &g_alpha);
        if let Some(t) = trace.as_deref_mut() {
            t.push(f);
        }

        let mut iterations = 0;
        while iterations < iters {
            for j in 0..m {
                let grad = g_alpha[j] - c[j];
                a[j] = shrink(a[j] - grad / l, thresh, nonnegative);
            }
            gram_times(gram, a, &mut g_alpha);
            iterations += 1;
            let f_new = objective(a, &g_alpha);
            if !f_new.is_finite() {
                return Err(Error::numerical("ISTA objective became non-finite"));
            }
            debug_assert!(
                f_new <= f + 1e-10 * (1.0 + f.abs()),
                "ISTA objective increased: {f} -> {f_new}"
            );
            if let Some(t) = trace.as_deref_mut() {
                t.push(f_new);
            }
            let decrease = f - f_new;
            f = f_new;
            if decrease < tol {
                break;
            }
        }

        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("ISTA produced a non-finite code"));
        }
        let objective = lasso_objective(&self.dictionary, signal, &alpha, lambda);
        Ok(LassoSolution {
            code: alpha,
            objective,
            iterations,
        })
    }

    /// Codes every column of `signals`, in parallel, preserving order.
    pub fn solve_columns(
        &self,
        signals: &DMatrix<f64>,
        warm: Option<&[DVector<f64>]>,
    ) -> Result<Vec<LassoSolution>> {
        if let Some(w) = warm {
            if w.len() != signals.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: signals.ncols(),
                    found: w.len(),
                    context: "warm-start codes".into(),
                });
            }
        }
        (0..signals.ncols())
            .into_par_iter()
            .map(|j| self.solve_from(signals.column(j), warm.map(|w| &w[j])))
            .collect()
    }
}

/// `out = G·a` for a square column-major `gram`.
#[inline]
fn gram_times(gram: &[f64], a: &[f64], out: &mut [f64]) {
    let m = a.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (k, &ak) in a.iter().enumerate() {
        if ak != 0.0 {
            let col = &gram[k * m..(k + 1) * m];
            for (o, &g) in out.iter_mut().zip(col) {
                *o += g * ak;
            }
        }
    }
}

/// Solves one Lasso problem from a zero start.
pub fn ista_solve(problem: &LassoProblem<'_>) -> Result<LassoSolution> {
    SparseCoder::new(problem.dictionary.clone(), problem.settings)?.solve(problem.signal)
}

/// Codes many signals against one dictionary. Results are identical to calling
/// [`ista_solve`] per signal, whatever the thread count.
pub fn batch_solve(
    dictionary: &DMatrix<f64>,
    signals: &[DVector<f64>],
    settings: IstaSettings,
) -> Result<Vec<LassoSolution>> {
    let coder = SparseCoder::new(dictionary.clone(), settings)?;
    signals
        .par_iter()
        .map(|s| coder.solve(s.as_view()))
        .collect()
}
