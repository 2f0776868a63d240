//! Bag-structured hyperspectral data and the learned signature dictionary.
//!
//! Instances inside a [`Bag`] are stored column-wise in a `d × n` matrix so
//! that sparse coding and residual computations can borrow columns without
//! copying.

mod io;

pub(crate) use io::write_json;

pub use io::{
    load_dataset, load_dictionary, load_spectral_library, read_matrix, save_dataset,
    save_dictionary, write_matrix, write_spectral_library, BagEntry, DictionaryFile, Manifest,
    NamedSpectrum, NormPolicy, SpectralLibrary,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that dictionary columns have unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A single reflectance spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: DVector<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("spectrum must have at least one band"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("spectrum band {i} is not finite")));
        }
        Ok(Spectrum {
            values: DVector::from_vec(values),
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(values: Vec<f64>, wavelengths: Vec<f64>) -> Result<Self> {
        let mut s = Spectrum::new(values)?;
        if wavelengths.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                found: wavelengths.len(),
                context: "wavelength grid".into(),
            });
        }
        if !wavelengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        s.wavelengths = Some(wavelengths);
        Ok(s)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Binary bag label. Serialized as `+` / `-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "+",
            Label::Negative => "-",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" => Ok(Label::Positive),
            "-" => Ok(Label::Negative),
            other => Err(Error::invalid(format!(
                "unknown label token {other:?} (expected \"+\" or \"-\")"
            ))),
        }
    }
}

/// A labeled collection of instances sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    id: String,
    label: Label,
    /// `d × n`, one instance per column.
    instances: DMatrix<f64>,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: Label, instances: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        if instances.ncols() == 0 {
            return Err(Error::invalid(format!("bag {id:?} has no instances")));
        }
        if instances.nrows() == 0 {
            return Err(Error::invalid(format!("bag {id:?} has zero bands")));
        }
        if instances.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("bag {id:?} contains non-finite values")));
        }
        Ok(Bag {
            id,
            label,
            instances,
        })
    }

    pub fn from_spectra(id: impl Into<String>, label: Label, spectra: &[Spectrum]) -> Result<Self> {
        let id = id.into();
        let d = spectra.first().map(Spectrum::len).unwrap_or(0);
        for s in spectra {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.len(),
                    context: format!("instance in bag {id:?}"),
                });
            }
        }
        let cols: Vec<_> = spectra.iter().map(|s| s.values().clone()).collect();
        let m = if cols.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Bag::new(id, label, m)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn len(&self) -> usize {
        self.instances.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.instances.nrows()
    }

    pub fn instances(&self) -> &DMatrix<f64> {
        &self.instances
    }

    pub fn instance(&self, j: usize) -> DVectorView<'_, f64> {
        self.instances.column(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub bags: usize,
    pub positive_bags: usize,
    pub negative_bags: usize,
    pub instances: usize,
    pub positive_instances: usize,
    pub negative_instances: usize,
}

/// A set of bags with a common band count.
#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    bags: Vec<Bag>,
    dim: usize,
}

impl BagDataset {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let dim = match bags.first() {
            Some(b) => b.dim(),
            None => return Err(Error::invalid("dataset has no bags")),
        };
        for b in &bags {
            if b.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: b.dim(),
                    context: format!("bag {:?}", b.id()),
                });
            }
        }
        Ok(BagDataset { bags, dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positive_bags(&self) -> impl Iterator<Item = &Bag> {
        self.bags.iter().filter(|b| b.label().is_positive())
    }

    pub fn negative_bags(&self) -> impl Iterator<Item = &Bag> {
        self.bags.iter().filter(|b| !b.label().is_positive())
    }

    pub fn counts(&self) -> DatasetCounts {
        let mut c = DatasetCounts {
            bags: self.bags.len(),
            positive_bags: 0,
            negative_bags: 0,
            instances: 0,
            positive_instances: 0,
            negative_instances: 0,
        };
        for b in &self.bags {
            c.instances += b.len();
            if b.label().is_positive() {
                c.positive_bags += 1;
                c.positive_instances += b.len();
            } else {
                c.negative_bags += 1;
                c.negative_instances += b.len();
            }
        }
        c
    }

    /// Training needs at least one bag of each label.
    pub fn require_trainable(&self) -> Result<()> {
        let c = self.counts();
        if c.positive_bags == 0 {
            return Err(Error::invalid("dataset has no positive bags"));
        }
        if c.negative_bags == 0 {
            return Err(Error::invalid("dataset has no negative bags"));
        }
        Ok(())
    }

    /// Copy of the dataset with every instance scaled to unit Euclidean norm.
    /// Zero instances are left untouched.
    pub fn normalized(&self) -> BagDataset {
        let bags = self
            .bags
            .iter()
            .map(|b| {
                let mut m = b.instances.clone();
                for mut col in m.column_iter_mut() {
                    let n = col.norm();
                    if n > 0.0 {
                        col /= n;
                    }
                }
                Bag {
                    id: b.id.clone(),
                    label: b.label,
                    instances: m,
                }
            })
            .collect();
        BagDataset {
            bags,
            dim: self.dim,
        }
    }

    /// All negative-bag instances as one `d × N⁻` matrix, in bag order.
    pub fn negative_instances(&self) -> DMatrix<f64> {
        stack(self.negative_bags(), self.dim)
    }

    /// All positive-bag instances as one `d × N⁺` matrix, in bag order.
    pub fn positive_instances(&self) -> DMatrix<f64> {
        stack(self.positive_bags(), self.dim)
    }
}

fn stack<'a>(bags: impl Iterator<Item = &'a Bag>, d: usize) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = bags
        .flat_map(|b| b.instances.column_iter().map(|c| c.into_owned()))
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Addresses one dictionary column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    Target(usize),
    Background(usize),
}

/// Target signatures `D⁺` (d × T) and background signatures `D⁻` (d × M).
///
/// The concatenated dictionary is `[D⁺ D⁻]`, so in a full-dictionary code the
/// first `T` coefficients belong to targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    targets: DMatrix<f64>,
    backgrounds: DMatrix<f64>,
}

impl Dictionary {
    /// Builds a dictionary without touching column norms.
    pub fn new(targets: DMatrix<f64>, backgrounds: DMatrix<f64>) -> Result<Self> {
        if targets.ncols() == 0 {
            return Err(Error::invalid("dictionary needs at least one target column"));
        }
        if backgrounds.ncols() == 0 {
            return Err(Error::invalid(
                "dictionary needs at least one background column",
            ));
        }
        if targets.nrows() == 0 {
            return Err(Error::invalid("dictionary columns must have at least one band"));
        }
        if targets.nrows() != backgrounds.nrows() {
            return Err(Error::DimensionMismatch {
                expected: targets.nrows(),
                found: backgrounds.nrows(),
                context: "background column length".into(),
            });
        }
        if targets.iter().chain(backgrounds.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary contains non-finite values"));
        }
        Ok(Dictionary {
            targets,
            backgrounds,
        })
    }

    /// Builds a dictionary and scales every column to unit norm.
    pub fn normalized(targets: DMatrix<f64>, backgrounds: DMatrix<f64>) -> Result<Self> {
        let mut d = Dictionary::new(targets, backgrounds)?;
        d.renormalize()?;
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.targets.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.ncols()
    }

    pub fn n_backgrounds(&self) -> usize {
        self.backgrounds.ncols()
    }

    pub fn n_columns(&self) -> usize {
        self.n_targets() + self.n_backgrounds()
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn backgrounds(&self) -> &DMatrix<f64> {
        &self.backgrounds
    }

    /// `[D⁺ D⁻]`.
    pub fn full(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, self.n_columns());
        m.columns_mut(0, self.n_targets()).copy_from(&self.targets);
        m.columns_mut(self.n_targets(), self.n_backgrounds())
            .copy_from(&self.backgrounds);
        m
    }

    /// Every column in update order: targets first, then backgrounds.
    pub fn columns(&self) -> impl Iterator<Item = Column> {
        (0..self.n_targets())
            .map(Column::Target)
            .chain((0..self.n_backgrounds()).map(Column::Background))
    }

    pub fn check_column(&self, which: Column) -> Result<()> {
        let ok = match which {
            Column::Target(t) => t < self.n_targets(),
            Column::Background(k) => k < self.n_backgrounds(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "column {which:?} out of range (T = {}, M = {})",
                self.n_targets(),
                self.n_backgrounds()
            )))
        }
    }

    pub fn column(&self, which: Column) -> DVector<f64> {
        match which {
            Column::Target(t) => self.targets.column(t).into_owned(),
            Column::Background(k) => self.backgrounds.column(k).into_owned(),
        }
    }

    /// Position of `which` inside the full-dictionary code.
    pub fn full_index(&self, which: Column) -> usize {
        match which {
            Column::Target(t) => t,
            Column::Background(k) => self.n_targets() + k,
        }
    }

    pub fn set_column(&mut self, which: Column, values: &DVector<f64>) {
        match which {
            Column::Target(t) => self.targets.set_column(t, values),
            Column::Background(k) => self.backgrounds.set_column(k, values),
        }
    }

    /// Largest `| ‖column‖ − 1 |` over all columns.
    pub fn max_norm_deviation(&self) -> f64 {
        self.targets
            .column_iter()
            .chain(self.backgrounds.column_iter())
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_unit_norm(&self, tol: f64) -> bool {
        self.max_norm_deviation() <= tol
    }

    pub fn renormalize(&mut self) -> Result<()> {
        for mut col in self
            .targets
            .column_iter_mut()
            .chain(self.backgrounds.column_iter_mut())
        {
            let n = col.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::invalid("cannot normalize a zero dictionary column"));
            }
            col /= n;
        }
        Ok(())
    }
}

/// Sparse codes for one instance.
///
/// `full` is the code against `[D⁺ D⁻]` and is only computed for instances
/// of positive bags; `background` is the code against `D⁻` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub full: Option<DVector<f64>>,
    pub background: DVector<f64>,
}

/// Model and optimizer settings for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Generalized-mean exponent over positive-bag instance probabilities.
    pub p: f64,
    /// Negative-bag weight. `None` selects `min(1, N⁺ / N⁻)`.
    pub rho: Option<f64>,
    /// Scale of the residual ratio in the positive-instance probability.
    pub beta: f64,
    /// Lasso sparsity weight.
    pub lambda: f64,
    pub n_targets: usize,
    pub n_backgrounds: usize,
    pub max_outer_iters: usize,
    /// Largest gradient step tried for a column update. The objective sums
    /// over instances, so gradients grow with the dataset; the default suits
    /// reflectance-scale spectra and around 10⁴ instances.
    pub step_size: f64,
    /// Stop when the objective changes by less than this between outer iterations.
    pub obj_tol: f64,
    pub ista_iters: usize,
    pub ista_tol: f64,
    /// Project sparse codes onto the nonnegative orthant.
    pub nonnegative: bool,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            p: 5.0,
            rho: None,
            beta: 5.0,
            lambda: 1e-3,
            n_targets: 1,
            n_backgrounds: 5,
            max_outer_iters: 100,
            step_size: 1e-4,
            obj_tol: 1e-6,
            ista_iters: 200,
            ista_tol: 1e-6,
            nonnegative: false,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !self.p.is_finite() || self.p == 0.0 {
            return Err(Error::invalid("p must be finite and nonzero"));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::invalid("rho must lie in (0, 1]"));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if self.n_targets == 0 || self.n_backgrounds == 0 {
            return Err(Error::invalid(
                "at least one target and one background column are required",
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if !(self.obj_tol > 0.0) {
            return Err(Error::invalid("obj_tol must be positive"));
        }
        if !(self.ista_tol >= 0.0) {
            return Err(Error::invalid("ista_tol must be nonnegative"));
        }
        Ok(())
    }

    /// Effective negative-bag weight for `dataset`.
    pub fn resolved_rho(&self, dataset: &BagDataset) -> f64 {
        self.rho.unwrap_or_else(|| {
            let c = dataset.counts();
            if c.negative_instances == 0 {
                1.0
            } else {
                (c.positive_instances as f64 / c.negative_instances as f64).min(1.0)
            }
        })
    }
}
