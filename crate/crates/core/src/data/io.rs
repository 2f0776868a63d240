//! File formats: JSON bag manifests, comma-delimited instance matrices,
//! JSON dictionary models and delimited spectral libraries.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Bag, BagDataset, Dictionary, Label, Spectrum, UNIT_NORM_TOL};
use crate::error::{Error, Result};

/// Bag manifest. Data paths are resolved relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub bags: Vec<BagEntry>,
    /// Number of distinct background materials, when the producer knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_endmembers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagEntry {
    pub id: String,
    pub label: String,
    pub data: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Reads a manifest and every instance file it references.
pub fn load_dataset(manifest_path: &Path) -> Result<BagDataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut bags = Vec::with_capacity(manifest.bags.len());
    for entry in &manifest.bags {
        let label: Label = entry.label.parse().map_err(|e: Error| {
            Error::parse(manifest_path, format!("bag {:?}: {e}", entry.id))
        })?;
        let data = read_matrix(&base.join(&entry.data))?;
        // files hold one instance per row; bags store one per column
        bags.push(Bag::new(entry.id.clone(), label, data.transpose())?);
    }
    BagDataset::new(bags)
}

/// Writes `dataset` as a manifest plus one CSV per bag into `dir`.
/// Returns the manifest path.
pub fn save_dataset(
    dataset: &BagDataset,
    dir: &Path,
    background_endmembers: Option<usize>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.bags().len());
    for bag in dataset.bags() {
        let file = PathBuf::from(format!("{}.csv", bag.id()));
        write_matrix(&dir.join(&file), &bag.instances().transpose())?;
        entries.push(BagEntry {
            id: bag.id().to_string(),
            label: bag.label().to_string(),
            data: file,
        });
    }
    let manifest = Manifest {
        bags: entries,
        background_endmembers,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Reads a headerless comma-delimited matrix, one row per line.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("row {}: bad number {f:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in m.row_iter() {
        let line = row
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::parse(
            path,
            format!("ragged rows: expected {expected_len} fields, found {len}"),
        ),
        _ => Error::parse(path, e.to_string()),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// What to do with dictionary columns that are not unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormPolicy {
    /// Reject the dictionary.
    #[default]
    Strict,
    /// Warn and rescale to unit norm.
    Renormalize,
}

/// On-disk dictionary model. Columns are stored explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub d: usize,
    pub t: usize,
    pub m: usize,
    pub targets: Vec<Vec<f64>>,
    pub backgrounds: Vec<Vec<f64>>,
}

impl DictionaryFile {
    pub fn from_dictionary(dict: &Dictionary) -> Self {
        let cols = |m: &DMatrix<f64>| {
            m.column_iter()
                .map(|c| c.iter().copied().collect())
                .collect()
        };
        DictionaryFile {
            d: dict.dim(),
            t: dict.n_targets(),
            m: dict.n_backgrounds(),
            targets: cols(dict.targets()),
            backgrounds: cols(dict.backgrounds()),
        }
    }

    pub fn into_dictionary(self) -> Result<Dictionary> {
        if self.t != self.targets.len() || self.m != self.backgrounds.len() {
            return Err(Error::invalid(format!(
                "column counts disagree with header (t = {}, m = {}, found {} and {})",
                self.t,
                self.m,
                self.targets.len(),
                self.backgrounds.len()
            )));
        }
        let to_matrix = |cols: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            for c in cols {
                if c.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        found: c.len(),
                        context: "dictionary column".into(),
                    });
                }
            }
            Ok(DMatrix::from_fn(self.d, cols.len(), |i, j| cols[j][i]))
        };
        Dictionary::new(to_matrix(&self.targets)?, to_matrix(&self.backgrounds)?)
    }
}

pub fn save_dictionary(dict: &Dictionary, path: &Path, policy: NormPolicy) -> Result<()> {
    let mut dict = dict.clone();
    apply_norm_policy(&mut dict, policy, path)?;
    write_json(path, &DictionaryFile::from_dictionary(&dict))
}

pub fn load_dictionary(path: &Path, policy: NormPolicy) -> Result<Dictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DictionaryFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut dict = file
        .into_dictionary()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    apply_norm_policy(&mut dict, policy, path)?;
    Ok(dict)
}

fn apply_norm_policy(dict: &mut Dictionary, policy: NormPolicy, path: &Path) -> Result<()> {
    let dev = dict.max_norm_deviation();
    if dev <= UNIT_NORM_TOL {
        return Ok(());
    }
    match policy {
        NormPolicy::Strict => Err(Error::invalid(format!(
            "{}: dictionary column norm deviates from 1 by {dev:.3e}",
            path.display()
        ))),
        NormPolicy::Renormalize => {
            warn!(
                "{}: renormalizing dictionary columns (max deviation {dev:.3e})",
                path.display()
            );
            dict.renormalize()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedSpectrum {
    pub name: String,
    pub spectrum: Spectrum,
}

/// Named spectra on a shared wavelength grid (micrometers).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    pub wavelengths: Vec<f64>,
    pub spectra: Vec<NamedSpectrum>,
}

impl SpectralLibrary {
    pub fn get(&self, name: &str) -> Option<&Spectrum> {
        self.spectra
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.spectrum)
    }

    pub fn names(&self) -> Vec<&str> {
        self.spectra.iter().map(|s| s.name.as_str()).collect()
    }
}

/// Reads a delimited spectral library: a header row of names, the first column
/// holding wavelengths and each further column one reflectance spectrum.
/// The delimiter (comma, tab or semicolon) is taken from the header line.
pub fn load_spectral_library(path: &Path) -> Result<SpectralLibrary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::parse(path, "empty spectral library"))?;
    let delimiter = [b',', b'\t', b';']
        .into_iter()
        .find(|&c| header.as_bytes().contains(&c))
        .ok_or_else(|| Error::parse(path, "library needs at least one reflectance column"))?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(Error::parse(path, "library needs at least one reflectance column"));
    }
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::parse(path, format!("column {} has an empty name", i + 2)));
        }
        if names[..i].contains(n) {
            return Err(Error::parse(path, format!("duplicate spectrum name {n:?}")));
        }
    }

    let mut wavelengths = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut fields = rec.iter().map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::parse(path, format!("row {}: bad number {f:?}", row + 2)))
        });
        wavelengths.push(fields.next().unwrap_or_else(|| Ok(f64::NAN))?);
        for (col, v) in columns.iter_mut().zip(fields) {
            col.push(v?);
        }
    }
    if wavelengths.is_empty() {
        return Err(Error::parse(path, "library has no rows"));
    }
    if !wavelengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::parse(path, "wavelengths must be strictly increasing"));
    }
    let spectra = names
        .into_iter()
        .zip(columns)
        .map(|(name, values)| {
            Spectrum::with_wavelengths(values, wavelengths.clone())
                .map(|spectrum| NamedSpectrum { name, spectrum })
                .map_err(|e| Error::parse(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralLibrary {
        wavelengths,
        spectra,
    })
}

pub fn write_spectral_library(path: &Path, library: &SpectralLibrary) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["wavelength_um".to_string()];
    header.extend(library.spectra.iter().map(|s| s.name.clone()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, wl) in library.wavelengths.iter().enumerate() {
        let mut row = vec![format!("{wl:?}")];
        row.extend(
            library
                .spectra
                .iter()
                .map(|s| format!("{:?}", s.spectrum.values()[i])),
        );
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
