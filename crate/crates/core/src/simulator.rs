//! Synthetic bag-structured data from the linear mixing model.
//!
//! Every instance is a convex combination of endmember spectra plus white
//! Gaussian noise. Positive bags hold a fixed number of target instances
//! whose target proportion averages `p_t_mean`; the remaining proportion of a
//! target instance, and the whole of a non-target instance, is split among the
//! bag's background endmembers by a flat Dirichlet draw.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Bag, BagDataset, Label, NamedSpectrum, SpectralLibrary, Spectrum};
use crate::error::{Error, Result};

/// Largest half-width of the uniform target-proportion draw.
pub const TARGET_SPREAD: f64 = 0.2;

/// Group of identically constructed bags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagSpec {
    pub count: usize,
    pub label: Label,
    pub backgrounds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub endmembers: Vec<NamedSpectrum>,
    /// Name of the target endmember.
    pub target: String,
    pub bag_specs: Vec<BagSpec>,
    pub points_per_bag: usize,
    pub targets_per_positive_bag: usize,
    pub p_t_mean: f64,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_t_mean > 0.0 && self.p_t_mean < 1.0) {
            return Err(Error::invalid(format!(
                "p_t_mean must lie in (0, 1), got {}",
                self.p_t_mean
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("snr_db is NaN"));
        }
        if self.points_per_bag == 0 {
            return Err(Error::invalid("points_per_bag must be positive"));
        }
        if self.targets_per_positive_bag > self.points_per_bag {
            return Err(Error::invalid(
                "targets_per_positive_bag exceeds points_per_bag",
            ));
        }
        if self.bag_specs.is_empty() {
            return Err(Error::invalid("no bags requested"));
        }
        let d = self
            .endmembers
            .first()
            .map(|e| e.spectrum.len())
            .ok_or_else(|| Error::invalid("no endmembers"))?;
        if self.endmembers.iter().any(|e| e.spectrum.len() != d) {
            return Err(Error::invalid("endmembers differ in band count"));
        }
        self.index_of(&self.target)?;
        for spec in &self.bag_specs {
            if spec.backgrounds.is_empty() {
                return Err(Error::invalid("every bag needs at least one background endmember"));
            }
            for b in &spec.backgrounds {
                if *b == self.target {
                    return Err(Error::invalid(format!(
                        "target {b:?} cannot be a background endmember"
                    )));
                }
                self.index_of(b)?;
            }
        }
        Ok(())
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.endmembers
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown endmember {name:?}")))
    }

    /// Number of distinct background endmembers used by any bag.
    pub fn distinct_backgrounds(&self) -> usize {
        let mut names: Vec<&str> = self
            .bag_specs
            .iter()
            .flat_map(|s| s.backgrounds.iter().map(String::as_str))
            .collect();
        names.sort_unstable();
        names.dedup();
        names.len()
    }
}

/// Names used by the four-endmember preset.
pub mod names {
    pub const RED_SLATE: &str = "red_slate";
    pub const VERDE_ANTIQUE: &str = "verde_antique";
    pub const PHYLLITE: &str = "phyllite";
    pub const PYROXENITE: &str = "pyroxenite";
}

/// Bag layout with a confuser material present only in some positive bags:
/// bags 1-5 positive over {verde antique, phyllite, pyroxenite}, 6-10
/// positive over {phyllite, pyroxenite}, 11-15 positive over {pyroxenite},
/// 16-20 negative over {phyllite, pyroxenite}.
pub fn table1_bag_specs() -> Vec<BagSpec> {
    use names::*;
    let spec = |label, bgs: &[&str]| BagSpec {
        count: 5,
        label,
        backgrounds: bgs.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        spec(Label::Positive, &[VERDE_ANTIQUE, PHYLLITE, PYROXENITE]),
        spec(Label::Positive, &[PHYLLITE, PYROXENITE]),
        spec(Label::Positive, &[PYROXENITE]),
        spec(Label::Negative, &[PHYLLITE, PYROXENITE]),
    ]
}

/// The 20-bag preset: 500 points per bag, 100 target points per positive bag,
/// red slate as target. `library` must provide the four preset names.
pub fn table1_config(library: &SpectralLibrary, p_t_mean: f64, snr_db: f64, seed: u64) -> Result<SimConfig> {
    use names::*;
    let endmembers = [RED_SLATE, VERDE_ANTIQUE, PHYLLITE, PYROXENITE]
        .iter()
        .map(|&n| {
            library
                .get(n)
                .cloned()
                .map(|spectrum| NamedSpectrum {
                    name: n.to_string(),
                    spectrum,
                })
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "spectral library lacks {n:?} (has {:?})",
                        library.names()
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimConfig {
        endmembers,
        target: RED_SLATE.to_string(),
        bag_specs: table1_bag_specs(),
        points_per_bag: 500,
        targets_per_positive_bag: 100,
        p_t_mean,
        snr_db,
        seed,
    })
}

/// Smooth stand-ins for the four rock spectra: 211 bands over 0.4-2.5 µm,
/// built from sigmoid/linear continua with Gaussian absorption features.
pub fn synthetic_endmembers() -> SpectralLibrary {
    use names::*;
    let bands = 211;
    let wavelengths: Vec<f64> = (0..bands)
        .map(|i| 0.4 + 2.1 * i as f64 / (bands - 1) as f64)
        .collect();
    fn gauss(l: f64, c: f64, w: f64) -> f64 {
        (-0.5 * ((l - c) / w).powi(2)).exp()
    }
    // multiplicative absorption features (centre, width, depth)
    fn absorb(l: f64, feats: &[(f64, f64, f64)]) -> f64 {
        feats
            .iter()
            .map(|&(c, w, depth)| 1.0 - depth * gauss(l, c, w))
            .product()
    }
    type Shape = Box<dyn Fn(f64) -> f64>;
    let shapes: Vec<(&str, Shape)> = vec![
        (
            RED_SLATE,
            Box::new(move |l| {
                let base = 0.06 + 0.24 / (1.0 + (-(l - 0.62) / 0.04).exp()) + 0.02 * l;
                base * absorb(l, &[(0.88, 0.08, 0.30), (2.20, 0.05, 0.12)])
            }),
        ),
        (
            VERDE_ANTIQUE,
            Box::new(move |l| {
                let base = 0.14 + 0.07 * l + 0.06 * gauss(l, 0.55, 0.05);
                base * absorb(l, &[(1.05, 0.15, 0.35), (1.40, 0.03, 0.30), (2.32, 0.04, 0.40)])
            }),
        ),
        (
            PHYLLITE,
            Box::new(move |l| {
                let base = 0.17 + 0.04 * l;
                base * absorb(l, &[(0.45, 0.08, 0.20), (1.90, 0.04, 0.15), (2.20, 0.03, 0.30)])
            }),
        ),
        (
            PYROXENITE,
            Box::new(move |l| {
                let base = 0.12 + 0.03 * l;
                base * absorb(l, &[(0.95, 0.12, 0.45), (2.00, 0.25, 0.40)])
            }),
        ),
    ];
    let spectra = shapes
        .into_iter()
        .map(|(name, f)| NamedSpectrum {
            name: name.to_string(),
            spectrum: Spectrum::with_wavelengths(
                wavelengths.iter().map(|&l| f(l)).collect(),
                wavelengths.clone(),
            )
            .expect("synthetic spectra are finite on an increasing grid"),
        })
        .collect();
    SpectralLibrary {
        wavelengths,
        spectra,
    }
}

/// Truth for one generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTruth {
    pub is_target: bool,
    /// Proportion of every endmember, in `SimConfig::endmembers` order.
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub endmember_names: Vec<String>,
    pub bag_ids: Vec<String>,
    /// Indexed `[bag][instance]`.
    pub instances: Vec<Vec<InstanceTruth>>,
}

impl GroundTruth {
    /// Instance labels flattened in dataset order.
    pub fn flat_labels(&self) -> Vec<bool> {
        self.instances
            .iter()
            .flat_map(|b| b.iter().map(|t| t.is_target))
            .collect()
    }

    /// `(bag id, instance index) → is_target`.
    pub fn label_map(&self) -> HashMap<(String, usize), bool> {
        self.bag_ids
            .iter()
            .zip(&self.instances)
            .flat_map(|(id, inst)| {
                inst.iter()
                    .enumerate()
                    .map(move |(j, t)| ((id.clone(), j), t.is_target))
            })
            .collect()
    }

    /// Rows `bag,instance,label,<endmember proportions...>`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "bag,instance,label,{}", self.endmember_names.join(",")).map_err(io)?;
        for (id, inst) in self.bag_ids.iter().zip(&self.instances) {
            for (j, t) in inst.iter().enumerate() {
                let props = t
                    .proportions
                    .iter()
                    .map(|p| format!("{p:?}"))
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(w, "{id},{j},{},{props}", u8::from(t.is_target)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<GroundTruth> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let header = r.headers().map_err(|e| Error::parse(path, e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "bag" || &header[1] != "instance" || &header[2] != "label" {
            return Err(Error::parse(path, "expected header bag,instance,label,..."));
        }
        let endmember_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut bag_ids: Vec<String> = Vec::new();
        let mut instances: Vec<Vec<InstanceTruth>> = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let bad = |what: &str| Error::parse(path, format!("row {}: bad {what}", row + 2));
            let bag = rec[0].to_string();
            let j: usize = rec[1].parse().map_err(|_| bad("instance index"))?;
            let is_target = match &rec[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label")),
            };
            let proportions = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|_| bad("proportion")))
                .collect::<Result<Vec<_>>>()?;
            if bag_ids.last() != Some(&bag) {
                bag_ids.push(bag);
                instances.push(Vec::new());
            }
            let cur = instances.last_mut().expect("pushed above");
            if j != cur.len() {
                return Err(bad("instance order"));
            }
            cur.push(InstanceTruth {
                is_target,
                proportions,
            });
        }
        Ok(GroundTruth {
            endmember_names,
            bag_ids,
            instances,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: BagDataset,
    pub truth: GroundTruth,
    /// Noise-free instances per bag (`d × n`).
    pub clean: Vec<DMatrix<f64>>,
    /// Per-band noise standard deviation that was applied.
    pub noise_sigma: f64,
}

impl SimOutput {
    /// Empirical SNR of the whole generated dataset.
    pub fn measured_snr_db(&self) -> f64 {
        let clean: Vec<f64> = self.clean.iter().flat_map(|m| m.iter().copied()).collect();
        let noisy: Vec<f64> = self
            .dataset
            .bags()
            .iter()
            .flat_map(|b| b.instances().iter().copied())
            .collect();
        snr_db_of(&clean, &noisy)
    }
}

/// `10·log10(mean clean² / mean (noisy − clean)²)`; `+∞` when the two agree.
pub fn measure_snr(clean: &DMatrix<f64>, noisy: &DMatrix<f64>) -> Result<f64> {
    if clean.shape() != noisy.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            clean.shape(),
            noisy.shape()
        )));
    }
    Ok(snr_db_of(clean.as_slice(), noisy.as_slice()))
}

fn snr_db_of(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let noise: f64 = clean
        .iter()
        .zip(noisy)
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

fn dirichlet_flat(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / total).collect()
}

/// Draws a target proportion from a uniform window centred on `mean`.
fn target_proportion(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    let half = TARGET_SPREAD.min(mean).min(1.0 - mean);
    loop {
        let v = rng.gen_range(mean - half..=mean + half);
        if v > 0.0 {
            return v;
        }
    }
}

pub fn generate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.endmembers[0].spectrum.len();
    let n_end = config.endmembers.len();
    let endmembers = DMatrix::from_columns(
        &config
            .endmembers
            .iter()
            .map(|e| e.spectrum.values().clone())
            .collect::<Vec<_>>(),
    );
    let target_idx = config.index_of(&config.target)?;
    let n = config.points_per_bag;

    let mut clean = Vec::new();
    let mut truth = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let total_bags: usize = config.bag_specs.iter().map(|s| s.count).sum();
    let width = total_bags.to_string().len().max(2);
    let mut bag_no = 0;
    for spec in &config.bag_specs {
        let bg_idx: Vec<usize> = spec
            .backgrounds
            .iter()
            .map(|b| config.index_of(b))
            .collect::<Result<_>>()?;
        for _ in 0..spec.count {
            bag_no += 1;
            let n_targets = if spec.label.is_positive() {
                config.targets_per_positive_bag
            } else {
                0
            };
            let mut is_target: Vec<bool> = (0..n).map(|j| j < n_targets).collect();
            is_target.shuffle(&mut rng);

            let mut props = DMatrix::zeros(n_end, n);
            let mut inst_truth = Vec::with_capacity(n);
            for (j, &tgt) in is_target.iter().enumerate() {
                let t = if tgt {
                    target_proportion(config.p_t_mean, &mut rng)
                } else {
                    0.0
                };
                let split = dirichlet_flat(bg_idx.len(), &mut rng);
                let mut col = DVector::zeros(n_end);
                col[target_idx] = t;
                for (&k, s) in bg_idx.iter().zip(split) {
                    col[k] = (1.0 - t) * s;
                }
                inst_truth.push(InstanceTruth {
                    is_target: tgt,
                    proportions: col.iter().copied().collect(),
                });
                props.set_column(j, &col);
            }
            clean.push(&endmembers * &props);
            truth.push(inst_truth);
            ids.push(format!("bag{bag_no:0width$}"));
            labels.push(spec.label);
        }
    }

    let noise_sigma = if config.snr_db.is_finite() {
        let count = (d * n * clean.len()) as f64;
        let power: f64 = clean.iter().map(|m| m.norm_squared()).sum::<f64>() / count;
        (power / 10f64.powf(config.snr_db / 10.0)).sqrt()
    } else {
        0.0
    };

    let mut bags = Vec::with_capacity(clean.len());
    for ((c, id), label) in clean.iter().zip(&ids).zip(&labels) {
        let mut noisy = c.clone();
        if noise_sigma > 0.0 {
            for v in noisy.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sigma * z;
            }
        }
        bags.push(Bag::new(id.clone(), *label, noisy)?);
    }

    Ok(SimOutput {
        dataset: BagDataset::new(bags)?,
        truth: GroundTruth {
            endmember_names: config.endmembers.iter().map(|e| e.name.clone()).collect(),
            bag_ids: ids,
            instances: truth,
        },
        clean,
        noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(p_t_mean: f64, snr_db: f64, seed: u64) -> SimConfig {
        table1_config(&synthetic_endmembers(), p_t_mean, snr_db, seed).unwrap()
    }

    fn small(p_t_mean: f64, snr_db: f64) -> SimConfig {
        SimConfig {
            points_per_bag: 60,
            targets_per_positive_bag: 12,
            ..config(p_t_mean, snr_db, 7)
        }
    }

    #[test]
    fn table1_layout() {
        let out = generate(&config(0.3, 30.0, 1)).unwrap();
        let c = out.dataset.counts();
        assert_eq!((c.bags, c.positive_bags, c.negative_bags), (20, 15, 5));
        assert_eq!(c.instances, 10_000);
        let names = &out.truth.endmember_names;
        let col = |n: &str| names.iter().position(|x| x == n).unwrap();
        for (i, bag) in out.truth.instances.iter().enumerate() {
            let uses = |n: &str| bag.iter().any(|t| t.proportions[col(n)] > 0.0);
            let expect = match i {
                0..=4 => [true, true, true, true],
                5..=9 => [true, false, true, true],
                10..=14 => [true, false, false, true],
                _ => [false, false, true, true],
            };
            let got = [
                uses(names::RED_SLATE),
                uses(names::VERDE_ANTIQUE),
                uses(names::PHYLLITE),
                uses(names::PYROXENITE),
            ];
            assert_eq!(got, expect, "bag {}", i + 1);
            let n_targets = bag.iter().filter(|t| t.is_target).count();
            assert_eq!(n_targets, if i < 15 { 100 } else { 0 });
        }
        assert_eq!(out.dataset.bags()[0].id(), "bag01");
    }

    #[test]
    fn noise_free_instances_are_exact_mixtures() {
        let cfg = small(0.5, f64::INFINITY);
        let out = generate(&cfg).unwrap();
        let e = DMatrix::from_columns(
            &cfg.endmembers.iter().map(|e| e.spectrum.values().clone()).collect::<Vec<_>>(),
        );
        for (bag, truth) in out.dataset.bags().iter().zip(&out.truth.instances) {
            for (j, t) in truth.iter().enumerate() {
                let p = DVector::from_vec(t.proportions.clone());
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.sum() - 1.0).abs() < 1e-12);
                assert_eq!(t.is_target, p[0] > 0.0);
                assert_eq!(bag.instance(j).into_owned(), &e * &p);
            }
        }
        assert_eq!(out.measured_snr_db(), f64::INFINITY);
    }

    #[test]
    fn target_proportion_mean() {
        let out = generate(&config(0.5, f64::INFINITY, 3)).unwrap();
        let props: Vec<f64> = out
            .truth
            .instances
            .iter()
            .flatten()
            .filter(|t| t.is_target)
            .map(|t| t.proportions[0])
            .collect();
        let mean = props.iter().sum::<f64>() / props.len() as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn target_window_stays_centred_near_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<f64> = (0..20_000).map(|_| target_proportion(0.05, &mut rng)).collect();
        assert!(draws.iter().all(|&v| v > 0.0 && v <= 0.1));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.05).abs() < 0.002);
    }

    #[test]
    fn snr_of_generated_data() {
        let out = generate(&config(0.3, 30.0, 11)).unwrap();
        let snr = out.measured_snr_db();
        assert!((snr - 30.0).abs() <= 0.5, "snr {snr}");
    }

    #[test]
    fn measure_snr_definition() {
        let clean = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(measure_snr(&clean, &clean).unwrap(), f64::INFINITY);
        // noise power 1/1000 of signal power
        let noisy = clean.map(|v| v + 1000f64.sqrt().recip());
        assert!((measure_snr(&clean, &noisy).unwrap() - 30.0).abs() < 1e-12);
        assert!(measure_snr(&clean, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate(&small(0.3, 30.0)).unwrap();
        let b = generate(&small(0.3, 30.0)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate(&SimConfig { seed: 8, ..small(0.3, 30.0) }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn config_validation() {
        assert!(generate(&small(1.5, 30.0)).is_err());
        assert!(generate(&small(0.0, 30.0)).is_err());
        let mut cfg = small(0.3, 30.0);
        cfg.bag_specs[1].backgrounds.clear();
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0.3, 30.0);
        cfg.bag_specs[0].backgrounds.push(names::RED_SLATE.into());
        assert!(generate(&cfg).is_err());
        let cfg = SimConfig { targets_per_positive_bag: 61, ..small(0.3, 30.0) };
        assert!(generate(&cfg).is_err());
        assert!(table1_config(&SpectralLibrary { wavelengths: vec![], spectra: vec![] }, 0.3, 30.0, 0).is_err());
        assert_eq!(small(0.3, 30.0).distinct_backgrounds(), 3);
    }

    #[test]
    fn ground_truth_round_trip() {
        let out = generate(&small(0.3, 30.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        out.truth.write(&p).unwrap();
        assert_eq!(GroundTruth::read(&p).unwrap(), out.truth);
    }

    #[test]
    fn synthetic_library_shape() {
        let lib = synthetic_endmembers();
        assert_eq!(lib.spectra.len(), 4);
        assert!(lib.spectra.iter().all(|s| s.spectrum.len() == 211));
        assert!((lib.wavelengths[0] - 0.4).abs() < 1e-12);
        assert!((lib.wavelengths[210] - 2.5).abs() < 1e-12);
        assert!(lib.spectra.iter().all(|s| s.spectrum.values().iter().all(|&v| v > 0.0)));
    }
}
