//! Instance probabilities, bag aggregation, the negative log-likelihood and
//! its gradient with respect to single dictionary columns.
//!
//! Gradients treat every sparse code as a constant (block-coordinate
//! semantics): the training loop re-solves the codes between column updates.

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;

use crate::data::{BagDataset, Column, Dictionary, HyperParams, SparseCode};
use crate::error::{Error, Result};
use crate::sparse::{IstaSettings, LassoSolution, SparseCoder};

/// Floor applied to the background-only residual in the probability ratio.
pub fn eps_den(dim: usize) -> f64 {
    1e-8 * dim as f64
}

fn check_finite(v: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if v.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} contains non-finite values")))
    }
}

/// Squared residual `‖x − Dα‖²` and the residual vector.
fn residual(
    x: DVectorView<'_, f64>,
    dict: &DMatrix<f64>,
    code: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let mut r = x.into_owned();
    r.gemv(-1.0, dict, code, 1.0);
    let n = r.norm_squared();
    (r, n)
}

/// `exp(−β · num / max(den, ε))` from precomputed squared residuals.
pub fn prob_positive_from_residuals(num: f64, den: f64, beta: f64, dim: usize) -> f64 {
    (-beta * num / den.max(eps_den(dim))).exp()
}

/// Probability that a positive-bag instance is a target: the exponentiated
/// negative ratio of its full-dictionary residual to its background-only
/// residual.
pub fn prob_positive(
    x: DVectorView<'_, f64>,
    dict: &Dictionary,
    code_full: &DVector<f64>,
    code_bg: &DVector<f64>,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    check_codes(x.len(), dict, Some(code_full), code_bg)?;
    check_finite(x.iter().copied(), "instance")?;
    check_finite(code_full.iter().chain(code_bg.iter()).copied(), "sparse code")?;
    let (_, num) = residual(x, &dict.full(), code_full);
    let (_, den) = residual(x, dict.backgrounds(), code_bg);
    Ok(prob_positive_from_residuals(num, den, beta, x.len()))
}

/// Probability that a negative-bag instance is background:
/// `exp(−‖x − D⁻α‖²)`.
pub fn prob_negative(
    x: DVectorView<'_, f64>,
    backgrounds: &DMatrix<f64>,
    code_bg: &DVector<f64>,
) -> Result<f64> {
    if backgrounds.nrows() != x.len() || backgrounds.ncols() != code_bg.len() {
        return Err(Error::DimensionMismatch {
            expected: backgrounds.ncols(),
            found: code_bg.len(),
            context: "background code".into(),
        });
    }
    check_finite(x.iter().copied(), "instance")?;
    check_finite(code_bg.iter().copied(), "sparse code")?;
    let (_, r2) = residual(x, backgrounds, code_bg);
    Ok((-r2).exp())
}

/// `((1/n) Σ v^p)^(1/p)`, evaluated in the log domain.
pub fn generalized_mean(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("generalized mean of an empty list"));
    }
    if p == 0.0 || !p.is_finite() {
        return Err(Error::invalid("generalized mean exponent must be finite and nonzero"));
    }
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("generalized mean needs positive finite values"));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(log_generalized_mean(&logs, p).exp())
}

/// `ln` of the generalized mean given `ln v_j`.
pub fn log_generalized_mean(log_values: &[f64], p: f64) -> f64 {
    let n = log_values.len() as f64;
    (log_sum_exp(log_values.iter().map(|l| p * l)) - n.ln()) / p
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_codes(
    dim: usize,
    dict: &Dictionary,
    full: Option<&DVector<f64>>,
    bg: &DVector<f64>,
) -> Result<()> {
    if dim != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            found: dim,
            context: "instance length".into(),
        });
    }
    if let Some(f) = full {
        if f.len() != dict.n_columns() {
            return Err(Error::DimensionMismatch {
                expected: dict.n_columns(),
                found: f.len(),
                context: "full-dictionary code".into(),
            });
        }
    }
    if bg.len() != dict.n_backgrounds() {
        return Err(Error::DimensionMismatch {
            expected: dict.n_backgrounds(),
            found: bg.len(),
            context: "background code".into(),
        });
    }
    Ok(())
}

/// Sparse codes for every instance of a dataset, indexed `[bag][instance]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSet {
    pub bags: Vec<Vec<SparseCode>>,
}

impl CodeSet {
    /// Codes every instance against `dict`: positive-bag instances against
    /// both `[D⁺ D⁻]` and `D⁻`, negative-bag instances against `D⁻` only.
    pub fn compute(
        dataset: &BagDataset,
        dict: &Dictionary,
        settings: IstaSettings,
        warm: Option<&CodeSet>,
    ) -> Result<CodeSet> {
        let full = SparseCoder::new(dict.full(), settings)?;
        let bg = SparseCoder::new(dict.backgrounds().clone(), settings)?;
        Self::solve(dataset, &full, Some(&bg), warm)
    }

    /// Re-solves only the full-dictionary codes, reusing `prev`'s background
    /// codes. Valid when only target columns changed.
    pub fn recompute_full(
        dataset: &BagDataset,
        dict: &Dictionary,
        settings: IstaSettings,
        prev: &CodeSet,
    ) -> Result<CodeSet> {
        let full = SparseCoder::new(dict.full(), settings)?;
        Self::solve(dataset, &full, None, Some(prev))
    }

    /// With `bg == None` the background codes are copied from `warm`.
    fn solve(
        dataset: &BagDataset,
        full: &SparseCoder,
        bg: Option<&SparseCoder>,
        warm: Option<&CodeSet>,
    ) -> Result<CodeSet> {
        if let Some(w) = warm {
            w.check_shape(dataset)?;
        }
        let bags = dataset
            .bags()
            .iter()
            .enumerate()
            .map(|(i, bag)| {
                let positive = bag.label().is_positive();
                let solve_one = |j: usize| -> Result<SparseCode> {
                    let x = bag.instance(j);
                    let prev = warm.map(|w| &w.bags[i][j]);
                    let background = match (bg, prev) {
                        (Some(coder), _) => coder.solve_from(x, prev.map(|c| &c.background))?.code,
                        (None, Some(p)) => p.background.clone(),
                        (None, None) => {
                            return Err(Error::invalid("no background codes to reuse"))
                        }
                    };
                    let full = if positive {
                        let warm_full = prev.and_then(|c| c.full.as_ref());
                        Some(full.solve_from(x, warm_full)?.code)
                    } else {
                        None
                    };
                    Ok(SparseCode { full, background })
                };
                (0..bag.len()).into_par_iter().map(solve_one).collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CodeSet { bags })
    }

    pub fn check_shape(&self, dataset: &BagDataset) -> Result<()> {
        if self.bags.len() != dataset.bags().len()
            || self
                .bags
                .iter()
                .zip(dataset.bags())
                .any(|(c, b)| c.len() != b.len())
        {
            return Err(Error::invalid("sparse codes do not match the dataset layout"));
        }
        Ok(())
    }
}

/// Per-instance residual quantities for a positive-bag instance.
struct PositiveTerm {
    e_full: DVector<f64>,
    e_bg: DVector<f64>,
    num: f64,
    /// Floored denominator.
    den: f64,
    floored: bool,
}

fn positive_terms(
    bag: &crate::data::Bag,
    codes: &[SparseCode],
    full: &DMatrix<f64>,
    bgs: &DMatrix<f64>,
    eps: f64,
) -> Result<Vec<PositiveTerm>> {
    (0..bag.len())
        .into_par_iter()
        .map(|j| {
            let x = bag.instance(j);
            let code = &codes[j];
            let alpha = code
                .full
                .as_ref()
                .ok_or_else(|| Error::invalid("positive instance is missing its full code"))?;
            let (e_full, num) = residual(x, full, alpha);
            let (e_bg, den_raw) = residual(x, bgs, &code.background);
            Ok(PositiveTerm {
                e_full,
                e_bg,
                num,
                den: den_raw.max(eps),
                floored: den_raw < eps,
            })
        })
        .collect()
}

struct Prepared {
    full: DMatrix<f64>,
    rho: f64,
    eps: f64,
}

fn prepare(
    dataset: &BagDataset,
    dict: &Dictionary,
    codes: &CodeSet,
    params: &HyperParams,
) -> Result<Prepared> {
    if dataset.positive_bags().next().is_none() {
        return Err(Error::invalid("objective needs at least one positive bag"));
    }
    if dataset.dim() != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            found: dataset.dim(),
            context: "dataset bands vs dictionary".into(),
        });
    }
    codes.check_shape(dataset)?;
    params.validate()?;
    Ok(Prepared {
        full: dict.full(),
        rho: params.resolved_rho(dataset),
        eps: eps_den(dict.dim()),
    })
}

/// Negative log-likelihood of the bag labels:
///
/// `−Σ_{positive bags} ln GM_p(P⁺) + ρ Σ_{negative instances} ‖x − D⁻α⁻‖²`
///
/// where `GM_p` is the generalized mean of the positive-instance
/// probabilities of a bag.
pub fn objective(
    dataset: &BagDataset,
    dict: &Dictionary,
    codes: &CodeSet,
    params: &HyperParams,
) -> Result<f64> {
    let prep = prepare(dataset, dict, codes, params)?;
    let mut total = 0.0;
    for (bag, bag_codes) in dataset.bags().iter().zip(&codes.bags) {
        if bag.label().is_positive() {
            let terms = positive_terms(bag, bag_codes, &prep.full, dict.backgrounds(), prep.eps)?;
            let logs: Vec<f64> = terms.iter().map(|t| -params.beta * t.num / t.den).collect();
            total -= log_generalized_mean(&logs, params.p);
        } else {
            let sq: Vec<f64> = (0..bag.len())
                .into_par_iter()
                .map(|j| residual(bag.instance(j), dict.backgrounds(), &bag_codes[j].background).1)
                .collect();
            total += prep.rho * sq.iter().sum::<f64>();
        }
    }
    if !total.is_finite() {
        return Err(Error::numerical(format!("objective is not finite ({total})")));
    }
    Ok(total)
}

/// Gradient of [`objective`] with respect to one dictionary column, codes held
/// fixed.
pub fn grad_column(
    dataset: &BagDataset,
    dict: &Dictionary,
    codes: &CodeSet,
    params: &HyperParams,
    which: Column,
) -> Result<DVector<f64>> {
    dict.check_column(which)?;
    let prep = prepare(dataset, dict, codes, params)?;
    let d = dict.dim();
    let idx_full = dict.full_index(which);
    let bg_index = match which {
        Column::Background(k) => Some(k),
        Column::Target(_) => None,
    };
    let beta = params.beta;
    let mut grad = DVector::zeros(d);

    for (bag, bag_codes) in dataset.bags().iter().zip(&codes.bags) {
        if bag.label().is_positive() {
            let terms = positive_terms(bag, bag_codes, &prep.full, dict.backgrounds(), prep.eps)?;
            // softmax weights of p·ln P over the bag
            let scaled: Vec<f64> = terms.iter().map(|t| -params.p * beta * t.num / t.den).collect();
            let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scaled.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            let contribs: Vec<DVector<f64>> = terms
                .par_iter()
                .zip(bag_codes.par_iter())
                .zip(ex.par_iter())
                .map(|((t, code), &e)| {
                    let w = beta * e / z;
                    let a_full = code.full.as_ref().map(|f| f[idx_full]).unwrap_or(0.0);
                    // d(num)/d(col) = −2 α e_full
                    let mut g = &t.e_full * (-2.0 * a_full / t.den);
                    if let Some(k) = bg_index {
                        if !t.floored {
                            // −num/den² · d(den)/d(col), d(den)/d(col) = −2 α_bg e_bg
                            let a_bg = code.background[k];
                            g.axpy(2.0 * t.num * a_bg / (t.den * t.den), &t.e_bg, 1.0);
                        }
                    }
                    g * w
                })
                .collect();
            for c in &contribs {
                grad += c;
            }
        } else if let Some(k) = bg_index {
            let contribs: Vec<DVector<f64>> = (0..bag.len())
                .into_par_iter()
                .map(|j| {
                    let code = &bag_codes[j].background;
                    let (e, _) = residual(bag.instance(j), dict.backgrounds(), code);
                    e * (-2.0 * prep.rho * code[k])
                })
                .collect();
            for c in &contribs {
                grad += c;
            }
        }
    }
    Ok(grad)
}

/// Convenience wrapper returning the Lasso solutions for one instance.
pub fn code_instance(
    x: DVectorView<'_, f64>,
    dict: &Dictionary,
    settings: IstaSettings,
) -> Result<(LassoSolution, LassoSolution)> {
    let full = SparseCoder::new(dict.full(), settings)?.solve(x)?;
    let bg = SparseCoder::new(dict.backgrounds().clone(), settings)?.solve(x)?;
    Ok((full, bg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, Label};
    use nalgebra::dvector;

    const E_INV: f64 = 0.367_879_441_171_442_3;

    #[test]
    fn prob_positive_cases() {
        let t = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let dict = Dictionary::new(t, b).unwrap();
        // x = 2 d_t + 1 d_b exactly reconstructed by D; bg residual (2,0)
        let x = dvector![2.0, 1.0];
        let p = prob_positive(x.as_view(), &dict, &dvector![2.0, 1.0], &dvector![1.0], 3.0)
            .unwrap();
        assert_eq!(p, 1.0);
        // num = den
        let p = prob_positive(x.as_view(), &dict, &dvector![0.0, 1.0], &dvector![1.0], 1.0)
            .unwrap();
        assert!((p - E_INV).abs() < 1e-15);
        assert!((prob_positive_from_residuals(0.3, 0.6, 2.0, 3) - E_INV).abs() < 1e-15);
        assert!(prob_positive(x.as_view(), &dict, &dvector![0.0], &dvector![1.0], 1.0).is_err());
        assert!(prob_positive(x.as_view(), &dict, &dvector![0.0, 1.0], &dvector![1.0], 0.0).is_err());
    }

    #[test]
    fn prob_positive_floors_denominator() {
        let t = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let dict = Dictionary::new(t, b).unwrap();
        let x = dvector![0.0, 1.0];
        // perfectly background-reconstructable, full code leaves residual 1e-8
        let p = prob_positive(x.as_view(), &dict, &dvector![1e-4, 1.0], &dvector![1.0], 1.0)
            .unwrap();
        assert!(p.is_finite() && p > 0.0 && p < 1.0);
        assert!((p - (-1e-8 / eps_den(2)).exp()).abs() < 1e-12);
    }

    #[test]
    fn prob_negative_cases() {
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(prob_negative(dvector![3.0, 0.0].as_view(), &b, &dvector![3.0]).unwrap(), 1.0);
        let p = prob_negative(dvector![0.0, 1.0].as_view(), &b, &dvector![0.0]).unwrap();
        assert!((p - E_INV).abs() < 1e-15);
        let p = prob_negative(dvector![1.1, 0.2].as_view(), &b, &dvector![1.0]).unwrap();
        assert!((p - (-0.05f64).exp()).abs() < 1e-12);
        assert!((p - 0.951_229).abs() < 1e-6);
        assert!(prob_negative(dvector![f64::NAN, 0.0].as_view(), &b, &dvector![1.0]).is_err());
    }

    #[test]
    fn generalized_mean_cases() {
        for p in [-5.0, 1.0, 5.0, 50.0] {
            let g = generalized_mean(&[0.37; 6], p).unwrap();
            assert!((g - 0.37).abs() < 1e-12);
        }
        assert!((generalized_mean(&[0.2, 0.4], 1.0).unwrap() - 0.3).abs() < 1e-15);
        let g = generalized_mean(&[0.1, 0.9], 10.0).unwrap();
        let direct = ((0.1f64.powi(10) + 0.9f64.powi(10)) / 2.0).powf(0.1);
        assert!((g - direct).abs() < 1e-14);
        assert!((g - 0.839_68).abs() < 1e-4);
        assert!(generalized_mean(&[], 1.0).is_err());
        assert!(generalized_mean(&[0.5], 0.0).is_err());
    }

    #[test]
    fn generalized_mean_large_p_is_stable() {
        let g = generalized_mean(&[1e-300, 0.5], 1e4).unwrap();
        assert!((g - 0.5).abs() < 1e-3);
        let g = generalized_mean(&[1e-300, 0.5], -1e4).unwrap();
        assert!(g < 1e-290);
    }

    fn toy() -> (BagDataset, Dictionary) {
        let pos = Bag::new("p", Label::Positive, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]))
            .unwrap();
        let neg = Bag::new("n", Label::Negative, DMatrix::from_column_slice(2, 1, &[0.0, 2.0]))
            .unwrap();
        let dict = Dictionary::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        (BagDataset::new(vec![pos, neg]).unwrap(), dict)
    }

    #[test]
    fn objective_zero_when_everything_is_perfect() {
        let (ds, dict) = toy();
        let codes = CodeSet {
            bags: vec![
                vec![SparseCode { full: Some(dvector![1.0, 1.0]), background: dvector![1.0] }],
                vec![SparseCode { full: None, background: dvector![2.0] }],
            ],
        };
        let params = HyperParams { rho: Some(1.0), ..Default::default() };
        assert_eq!(objective(&ds, &dict, &codes, &params).unwrap(), 0.0);
    }

    #[test]
    fn objective_single_instance_bag() {
        let pos = Bag::new("p", Label::Positive, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]))
            .unwrap();
        let ds = BagDataset::new(vec![pos]).unwrap();
        let dict = Dictionary::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        // residual ratio chosen so that P = 0.5: num/den = ln2 / β
        let beta = 1.0;
        let codes = CodeSet {
            bags: vec![vec![SparseCode {
                full: Some(dvector![1.0 - 2f64.ln().sqrt(), 1.0]),
                background: dvector![1.0],
            }]],
        };
        let params = HyperParams { p: 1.0, beta, ..Default::default() };
        let j = objective(&ds, &dict, &codes, &params).unwrap();
        assert!((j - 0.693_147_180_559_945_3).abs() < 1e-12);
    }

    #[test]
    fn objective_requires_positive_bag() {
        let (ds, dict) = toy();
        let neg_only = BagDataset::new(vec![ds.bags()[1].clone()]).unwrap();
        let codes = CodeSet { bags: vec![vec![SparseCode { full: None, background: dvector![2.0] }]] };
        assert!(objective(&neg_only, &dict, &codes, &HyperParams::default()).is_err());
    }

    #[test]
    fn unused_target_column_has_zero_gradient() {
        let (ds, dict) = toy();
        let codes = CodeSet {
            bags: vec![
                vec![SparseCode { full: Some(dvector![0.0, 0.7]), background: dvector![0.9] }],
                vec![SparseCode { full: None, background: dvector![1.5] }],
            ],
        };
        let g = grad_column(&ds, &dict, &codes, &HyperParams::default(), Column::Target(0)).unwrap();
        assert_eq!(g.amax(), 0.0);
        assert!(grad_column(&ds, &dict, &codes, &HyperParams::default(), Column::Target(3)).is_err());
    }
}
