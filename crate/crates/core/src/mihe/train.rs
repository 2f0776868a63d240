use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{grad_column, objective, CodeSet};
use crate::data::{BagDataset, Column, Dictionary, HyperParams};
use crate::error::{Error, Result};
use crate::sparse::{IstaSettings, SparseCoder};

/// Halvings allowed per column update before the column is left unchanged.
pub const MAX_HALVINGS: usize = 20;

/// Fraction of positive-bag instances (worst reconstructed by the initial
/// background) used to seed the target columns.
pub const TARGET_INIT_FRACTION: f64 = 0.10;

const KMEANS_ITERS: usize = 50;

/// One outer iteration of training.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// Accepted step for each column in update order; 0 when no step helped.
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingState {
    pub dictionary: Dictionary,
    pub codes: CodeSet,
    /// Objective at initialization followed by one entry per outer iteration.
    pub objective_history: Vec<f64>,
    pub outer_iter: usize,
    pub records: Vec<IterationRecord>,
}

impl TrainingState {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }

    /// Writes `iter,objective,step_sizes` rows; step sizes are `;`-separated.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "iter,objective,step_sizes").map_err(io)?;
        writeln!(w, "0,{:?},", self.objective_history[0]).map_err(io)?;
        for r in &self.records {
            let steps = r
                .step_sizes
                .iter()
                .map(|s| format!("{s:?}"))
                .collect::<Vec<_>>()
                .join(";");
            writeln!(w, "{},{:?},{}", r.iter, r.objective, steps).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn ista_settings(params: &HyperParams) -> IstaSettings {
    IstaSettings {
        lambda: params.lambda,
        iters: params.ista_iters,
        tol: params.ista_tol,
        nonnegative: params.nonnegative,
    }
}

/// Deterministic starting dictionary.
///
/// Background columns are k-means centroids of the negative-bag instances.
/// Target columns are centroids of the positive-bag instances that the
/// initial background reconstructs worst.
pub fn initialize(dataset: &BagDataset, params: &HyperParams) -> Result<Dictionary> {
    dataset.require_trainable()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let negatives = dataset.negative_instances();
    let backgrounds = kmeans(&negatives, params.n_backgrounds, &mut rng);
    let backgrounds = normalize_columns(backgrounds, &mut rng);

    let positives = dataset.positive_instances();
    let coder = SparseCoder::new(backgrounds.clone(), ista_settings(params))?;
    let mut scored: Vec<(f64, usize)> = (0..positives.ncols())
        .map(|j| {
            let x = positives.column(j);
            let sol = coder.solve(x)?;
            let r = (x - &backgrounds * &sol.code).norm_squared();
            Ok((r, j))
        })
        .collect::<Result<_>>()?;
    // worst reconstructed first; index breaks ties for determinism
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let take = ((positives.ncols() as f64 * TARGET_INIT_FRACTION).ceil() as usize)
        .clamp(params.n_targets.min(positives.ncols()), positives.ncols());
    let top: Vec<DVector<f64>> = scored[..take]
        .iter()
        .map(|&(_, j)| positives.column(j).into_owned())
        .collect();
    let top = DMatrix::from_columns(&top);
    let targets = if params.n_targets == 1 {
        DMatrix::from_column_slice(top.nrows(), 1, top.column_mean().as_slice())
    } else {
        kmeans(&top, params.n_targets, &mut rng)
    };
    let targets = normalize_columns(targets, &mut rng);
    Dictionary::new(targets, backgrounds)
}

/// Scales columns to unit norm, replacing zero columns with random directions.
fn normalize_columns(mut m: DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        let mut n = col.norm();
        if n == 0.0 {
            for v in col.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            n = col.norm();
        }
        col /= n;
    }
    m
}

/// Lloyd's algorithm with k-means++ seeding over the columns of `data`.
/// With fewer points than clusters the extra centroids are jittered copies.
fn kmeans(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (d, n) = data.shape();
    let mut centroids = DMatrix::zeros(d, k);
    if n == 0 {
        return centroids;
    }
    let dist2 = |c: &DMatrix<f64>, ci: usize, j: usize| (data.column(j) - c.column(ci)).norm_squared();

    centroids.set_column(0, &data.column(rng.gen_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|j| dist2(&centroids, 0, j)).collect();
    for ci in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (j, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let mut c = data.column(pick).into_owned();
        if total == 0.0 {
            let scale = 1e-3 * (c.norm() + 1.0);
            for v in c.iter_mut() {
                *v += scale * rng.gen_range(-1.0..1.0);
            }
        }
        centroids.set_column(ci, &c);
        for (j, near) in nearest.iter_mut().enumerate() {
            *near = near.min(dist2(&centroids, ci, j));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (j, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .map(|ci| (dist2(&centroids, ci, j), ci))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .map(|(_, ci)| ci)
                .unwrap_or(0);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(d, k);
        let mut counts = vec![0usize; k];
        for (j, &a) in assign.iter().enumerate() {
            let mut col = sums.column_mut(a);
            col += data.column(j);
            counts[a] += 1;
        }
        for ci in 0..k {
            // empty clusters keep their previous centroid
            if counts[ci] > 0 {
                centroids.set_column(ci, &(sums.column(ci) / counts[ci] as f64));
            }
        }
    }
    centroids
}

/// Alternating optimization of the dictionary.
///
/// Each outer iteration visits every target column and then every background
/// column. For each column the gradient is taken with the current sparse
/// codes fixed; the column moves against it, is rescaled to unit norm, the
/// codes are re-solved, and the step is halved until the objective does not
/// increase. Training stops after `max_outer_iters` iterations or once an
/// iteration changes the objective by less than `obj_tol`.
pub fn train(
    dataset: &BagDataset,
    params: &HyperParams,
    init: Option<Dictionary>,
) -> Result<TrainingState> {
    dataset.require_trainable()?;
    params.validate()?;
    let mut dict = match init {
        Some(d) => {
            if d.dim() != dataset.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.dim(),
                    found: d.dim(),
                    context: "initial dictionary bands".into(),
                });
            }
            d
        }
        None => initialize(dataset, params)?,
    };
    let settings = ista_settings(params);
    let mut codes = CodeSet::compute(dataset, &dict, settings, None)?;
    let mut current = objective(dataset, &dict, &codes, params)?;
    let mut history = vec![current];
    let mut records = Vec::new();
    // last accepted step per column; the next attempt starts from twice that
    let mut last_step: Vec<f64> = vec![params.step_size; dict.n_columns()];
    info!("initial objective {current:.6e}");

    let mut outer = 0;
    while outer < params.max_outer_iters {
        let start = current;
        let columns: Vec<Column> = dict.columns().collect();
        let mut steps = Vec::with_capacity(columns.len());
        for which in columns {
            let slot = dict.full_index(which);
            let grad = grad_column(dataset, &dict, &codes, params, which)?;
            let mut eta = (2.0 * last_step[slot]).min(params.step_size);
            let col = dict.column(which);
            let mut accepted = 0.0;
            if grad.iter().all(|g| g.is_finite()) && grad.amax() > 0.0 {
                for _ in 0..=MAX_HALVINGS {
                    let mut cand = &col - &grad * eta;
                    let norm = cand.norm();
                    if norm > 0.0 && norm.is_finite() {
                        cand /= norm;
                        let mut trial = dict.clone();
                        trial.set_column(which, &cand);
                        let trial_codes = match which {
                            Column::Target(_) => {
                                CodeSet::recompute_full(dataset, &trial, settings, &codes)?
                            }
                            Column::Background(_) => {
                                CodeSet::compute(dataset, &trial, settings, Some(&codes))?
                            }
                        };
                        let value = objective(dataset, &trial, &trial_codes, params);
                        if let Ok(v) = value {
                            if v <= current {
                                dict = trial;
                                codes = trial_codes;
                                current = v;
                                accepted = eta;
                                break;
                            }
                        }
                    }
                    eta *= 0.5;
                }
            }
            if accepted > 0.0 {
                last_step[slot] = accepted;
            } else {
                last_step[slot] = eta.max(f64::MIN_POSITIVE);
            }
            steps.push(accepted);
        }
        outer += 1;
        if !current.is_finite() {
            return Err(Error::numerical(format!(
                "objective became non-finite at iteration {outer}"
            )));
        }
        history.push(current);
        debug!("iteration {outer}: objective {current:.9e}, steps {steps:?}");
        records.push(IterationRecord {
            iter: outer,
            objective: current,
            step_sizes: steps,
        });
        if (start - current).abs() < params.obj_tol {
            break;
        }
    }
    info!("finished after {outer} iterations, objective {current:.6e}");

    Ok(TrainingState {
        dictionary: dict,
        codes,
        objective_history: history,
        outer_iter: outer,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, Label};

    fn tiny_dataset() -> BagDataset {
        // 3 bands; background spans e1, target is e3
        let neg = DMatrix::from_column_slice(3, 4, &[
            1.0, 0.1, 0.0, 2.0, 0.2, 0.0, 1.5, 0.15, 0.0, 0.5, 0.05, 0.0,
        ]);
        let pos = DMatrix::from_column_slice(3, 4, &[
            1.0, 0.1, 0.8, 2.0, 0.2, 0.0, 1.5, 0.15, 0.0, 0.5, 0.05, 0.9,
        ]);
        BagDataset::new(vec![
            Bag::new("p", Label::Positive, pos).unwrap(),
            Bag::new("n", Label::Negative, neg).unwrap(),
        ])
        .unwrap()
    }

    fn params() -> HyperParams {
        HyperParams {
            n_backgrounds: 1,
            max_outer_iters: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let ds = tiny_dataset();
        let p = HyperParams { max_outer_iters: 0, ..params() };
        let init = initialize(&ds, &p).unwrap();
        let st = train(&ds, &p, Some(init.clone())).unwrap();
        assert_eq!(st.dictionary, init);
        assert_eq!(st.objective_history.len(), 1);
        assert_eq!(st.outer_iter, 0);
    }

    #[test]
    fn history_is_monotone_and_columns_unit_norm() {
        let ds = tiny_dataset();
        let st = train(&ds, &params(), None).unwrap();
        for w in st.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
        assert!(st.dictionary.is_unit_norm(1e-12));
        assert_eq!(st.records.len(), st.outer_iter);
    }

    #[test]
    fn initialization_is_seeded() {
        let ds = tiny_dataset();
        let a = initialize(&ds, &params()).unwrap();
        let b = initialize(&ds, &params()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_unit_norm(1e-12));
        // target seeded from the positive instances the background misses
        assert!(a.targets()[(2, 0)] > 0.5);
    }

    #[test]
    fn more_backgrounds_than_negatives() {
        let ds = tiny_dataset();
        let p = HyperParams { n_backgrounds: 6, max_outer_iters: 1, ..params() };
        let st = train(&ds, &p, None).unwrap();
        assert_eq!(st.dictionary.n_backgrounds(), 6);
        assert!(st.dictionary.is_unit_norm(1e-12));
    }

    #[test]
    fn requires_both_labels() {
        let ds = tiny_dataset();
        let only_pos = BagDataset::new(vec![ds.bags()[0].clone()]).unwrap();
        assert!(train(&only_pos, &params(), None).is_err());
    }

    #[test]
    fn trace_file_has_one_row_per_iteration() {
        let ds = tiny_dataset();
        let st = train(&ds, &params(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        st.write_trace(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), st.objective_history.len() + 1);
    }
}
