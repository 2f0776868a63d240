//! ROC curves, AUC, normalized partial AUC and run aggregation.
//!
//! Tied scores move together along the curve, which gives them half credit
//! in the area (the Mann-Whitney convention).

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub bag: String,
    pub instance: usize,
    pub score: f64,
    pub truth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
    /// Scene area in m², for false alarms per unit area.
    pub area_m2: Option<f64>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Self {
        ScoreSet {
            entries,
            area_m2: None,
        }
    }

    /// Anonymous entries from parallel score/label slices.
    pub fn from_labeled(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                found: labels.len(),
                context: "labels".into(),
            });
        }
        Ok(ScoreSet::new(
            scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &t))| ScoreEntry {
                    bag: String::new(),
                    instance: i,
                    score,
                    truth: Some(t),
                })
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_area(mut self, area_m2: f64) -> Self {
        self.area_m2 = Some(area_m2);
        self
    }

    /// `(score, truth)` pairs; fails if any score is non-finite or any
    /// truth label is missing.
    fn labeled(&self) -> Result<Vec<(f64, bool)>> {
        self.entries
            .iter()
            .map(|e| {
                if !e.score.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite score for bag {:?} instance {}",
                        e.bag, e.instance
                    )));
                }
                e.truth.map(|t| (e.score, t)).ok_or_else(|| {
                    Error::invalid(format!(
                        "missing truth label for bag {:?} instance {}",
                        e.bag, e.instance
                    ))
                })
            })
            .collect()
    }

    /// Rows `bag,instance,truth,score`; unknown truth is an empty field.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "bag,instance,truth,score").map_err(io)?;
        for e in &self.entries {
            let truth = match e.truth {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            writeln!(w, "{},{},{truth},{:?}", e.bag, e.instance, e.score).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<ScoreSet> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let mut entries = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let bad = |what: &str| Error::parse(path, format!("row {}: bad {what}", row + 2));
            if rec.len() != 4 {
                return Err(bad("field count"));
            }
            let truth = match &rec[2] {
                "1" => Some(true),
                "0" => Some(false),
                "" => None,
                _ => return Err(bad("truth")),
            };
            entries.push(ScoreEntry {
                bag: rec[0].to_string(),
                instance: rec[1].parse().map_err(|_| bad("instance"))?,
                truth,
                score: rec[3].parse().map_err(|_| bad("score"))?,
            });
        }
        Ok(ScoreSet::new(entries))
    }
}

/// Horizontal axis of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateUnits {
    /// False-positive fraction of negatives.
    Fpr,
    /// False alarms per square meter of scene.
    PerM2,
}

impl fmt::Display for RateUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateUnits::Fpr => "fpr",
            RateUnits::PerM2 => "per-m2",
        })
    }
}

impl FromStr for RateUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpr" => Ok(RateUnits::Fpr),
            "per-m2" | "per_m2" => Ok(RateUnits::PerM2),
            other => Err(Error::invalid(format!(
                "unknown rate units {other:?}; valid units: fpr, per-m2"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Entries scoring at or above this value are declared targets.
    pub threshold: f64,
    pub pd: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub units: RateUnits,
}

impl RocCurve {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "threshold,pd,{}", self.units).map_err(io)?;
        for p in &self.points {
            writeln!(w, "{:?},{:?},{:?}", p.threshold, p.pd, p.rate).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Largest rate reached by the curve.
    pub fn max_rate(&self) -> f64 {
        self.points.last().map(|p| p.rate).unwrap_or(0.0)
    }
}

/// ROC over false-positive fraction.
pub fn roc(scores: &ScoreSet) -> Result<RocCurve> {
    roc_with_units(scores, RateUnits::Fpr)
}

/// ROC with the rate axis in `units`; `PerM2` needs `scores.area_m2`.
pub fn roc_with_units(scores: &ScoreSet, units: RateUnits) -> Result<RocCurve> {
    let mut pairs = scores.labeled()?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "ROC needs at least one positive and one negative entry",
        ));
    }
    let rate_div = match units {
        RateUnits::Fpr => n_neg as f64,
        RateUnits::PerM2 => match scores.area_m2 {
            Some(a) if a > 0.0 && a.is_finite() => a,
            _ => return Err(Error::invalid("per-m2 rates need a positive scene area")),
        },
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::with_capacity(pairs.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        pd: 0.0,
        rate: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            pd: tp as f64 / n_pos as f64,
            rate: fp as f64 / rate_div,
        });
    }
    Ok(RocCurve { points, units })
}

/// Trapezoidal area under a false-positive-fraction curve.
pub fn auc(curve: &RocCurve) -> Result<f64> {
    if curve.units != RateUnits::Fpr {
        return Err(Error::invalid("AUC needs a curve over false-positive fraction"));
    }
    Ok(partial_area(&curve.points, 1.0))
}

/// `auc(roc(scores))`.
pub fn auc_of(scores: &ScoreSet) -> Result<f64> {
    auc(&roc(scores)?)
}

/// Area under PD versus rate on `[0, limit]`, linear between curve points.
fn partial_area(points: &[RocPoint], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.rate >= limit {
            break;
        }
        if b.rate <= limit {
            area += (b.rate - a.rate) * (a.pd + b.pd) / 2.0;
        } else {
            let t = (limit - a.rate) / (b.rate - a.rate);
            let pd_cut = a.pd + t * (b.pd - a.pd);
            area += (limit - a.rate) * (a.pd + pd_cut) / 2.0;
            break;
        }
    }
    area
}

/// Area under the curve from rate 0 to `far_max`, divided by `far_max`.
///
/// A `far_max` beyond the largest achievable rate is clamped to it.
pub fn nauc_at_far(scores: &ScoreSet, far_max: f64, units: RateUnits) -> Result<f64> {
    if !(far_max > 0.0 && far_max.is_finite()) {
        return Err(Error::invalid("far_max must be positive"));
    }
    let curve = roc_with_units(scores, units)?;
    let max_rate = curve.max_rate();
    let limit = if far_max > max_rate {
        warn!("far_max {far_max} exceeds the largest achievable rate {max_rate}; clamping");
        max_rate
    } else {
        far_max
    };
    if limit <= 0.0 {
        return Err(Error::invalid("curve has no false alarms to integrate over"));
    }
    Ok(partial_area(&curve.points, limit) / limit)
}

/// Median, averaging the middle pair for even counts.
pub fn median_over_runs(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Algorithm × configuration table of aggregated metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl SummaryTable {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\nalgorithm\t{}\n", self.title, self.columns.join("\t"));
        for (name, vals) in &self.rows {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:.3}")).collect();
            out += &format!("{name}\t{}\n", cells.join("\t"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet::from_labeled(scores, labels).unwrap()
    }

    fn hand_case() -> ScoreSet {
        set(
            &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
            &[true, false, true, true, false, false],
        )
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[1.0, 0.0], &[true, false]);
        let c = roc(&s).unwrap();
        assert!(c.points.iter().any(|p| p.pd == 1.0 && p.rate == 0.0));
        assert_eq!(auc(&c).unwrap(), 1.0);
        assert_eq!(nauc_at_far(&s, 0.01, RateUnits::Fpr).unwrap(), 1.0);
    }

    #[test]
    fn all_ties() {
        let s = set(&[0.5; 6], &[true, false, true, false, false, true]);
        let c = roc(&s).unwrap();
        assert_eq!(c.points.len(), 2);
        assert!(c.points.iter().all(|p| p.pd == p.rate));
        assert_eq!(auc(&c).unwrap(), 0.5);
    }

    #[test]
    fn hand_case_curve_and_area() {
        let c = roc(&hand_case()).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.pd, p.rate)).collect();
        let third = 1.0 / 3.0;
        let expect = [
            (0.0, 0.0),
            (third, 0.0),
            (third, third),
            (2.0 * third, third),
            (1.0, third),
            (1.0, 2.0 * third),
            (1.0, 1.0),
        ];
        for (g, e) in pts.iter().zip(expect) {
            assert!((g.0 - e.0).abs() < 1e-15 && (g.1 - e.1).abs() < 1e-15);
        }
        // concordant pairs: 0.9 beats 3 negatives, 0.7 and 0.6 beat 2 each
        assert!((auc(&c).unwrap() - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn partial_area_hand_trapezoid() {
        // 0.9+, 0.8-, 0.7+, 0.6+, 0.5-: one false alarm inside FPR ≤ 0.5
        let s = set(&[0.9, 0.8, 0.7, 0.6, 0.5], &[true, false, true, true, false]);
        // points (rate, pd): (0,0) (0,1/3) (.5,1/3) (.5,1) (1,1)
        // area on [0, .5] = .5 · 1/3 → normalized 1/3
        let v = nauc_at_far(&s, 0.5, RateUnits::Fpr).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        // [0, .25]: .25 · 1/3 → 1/3
        let v = nauc_at_far(&s, 0.25, RateUnits::Fpr).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        // [0, .75]: .5/3 + .25 · 1 → (1/6 + 1/4) / .75
        let v = nauc_at_far(&s, 0.75, RateUnits::Fpr).unwrap();
        assert!((v - (1.0 / 6.0 + 0.25) / 0.75).abs() < 1e-15);
    }

    #[test]
    fn nauc_zero_when_detection_comes_late() {
        let s = set(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]);
        assert_eq!(nauc_at_far(&s, 0.5, RateUnits::Fpr).unwrap(), 0.0);
    }

    #[test]
    fn per_area_rates() {
        let s = set(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).with_area(1000.0);
        let c = roc_with_units(&s, RateUnits::PerM2).unwrap();
        assert!((c.max_rate() - 0.002).abs() < 1e-18);
        assert!(auc(&c).is_err());
        // clamped to 0.002: points (0,0)(0,.5)(.001,.5)(.001,1)(.002,1)
        let v = nauc_at_far(&s, 1.0, RateUnits::PerM2).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        let v = nauc_at_far(&s, 1e-3, RateUnits::PerM2).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let no_area = set(&[0.9, 0.1], &[true, false]);
        assert!(nauc_at_far(&no_area, 1e-3, RateUnits::PerM2).is_err());
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc(&set(&[0.1, 0.2], &[true, true])).is_err());
        let mut s = set(&[0.1, 0.2], &[true, false]);
        s.entries[0].truth = None;
        assert!(roc(&s).is_err());
        let s = set(&[f64::NAN, 0.2], &[true, false]);
        assert!(roc(&s).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median_over_runs(&[0.1]).unwrap(), 0.1);
        assert_eq!(median_over_runs(&[0.3, 0.1, 0.2]).unwrap(), 0.2);
        assert_eq!(median_over_runs(&[0.944, 0.981, 0.996, 0.974, 0.997]).unwrap(), 0.981);
        assert_eq!(median_over_runs(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert!(median_over_runs(&[]).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut s = hand_case();
        s.entries[2].truth = None;
        s.entries[0].bag = "bag01".into();
        s.write(&p).unwrap();
        assert_eq!(ScoreSet::read(&p).unwrap(), s);
    }

    #[test]
    fn rate_unit_tokens() {
        assert_eq!("per-m2".parse::<RateUnits>().unwrap(), RateUnits::PerM2);
        assert!("m2".parse::<RateUnits>().is_err());
    }
}
