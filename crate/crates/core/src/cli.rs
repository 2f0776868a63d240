//! Command-line interface: `generate`, `train`, `detect`, `eval` and
//! `experiment`.
//!
//! Every command can also read its settings from the matching section of a
//! JSON file given with `--config`. Values given on the command line win over
//! the file, and the file wins over built-in defaults. Each command checks all
//! of its inputs before it writes anything.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset, load_dictionary, load_spectral_library, save_dataset, write_json,
    write_spectral_library, BagDataset, Dictionary, DictionaryFile, HyperParams, Manifest, UNIT_NORM_TOL,
    NormPolicy, SpectralLibrary,
};
use crate::detect::{score_dataset, Detector, Method, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::eval::{auc_of, median_over_runs, nauc_at_far, roc_with_units, RateUnits, ScoreSet, SummaryTable};
use crate::mihe::{ista_settings, train};
use crate::simulator::{generate, synthetic_endmembers, table1_config, GroundTruth, SimOutput};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "MIHE_THREADS";

const MANIFEST_FILE: &str = "manifest.json";
const TRUTH_FILE: &str = "truth.csv";
const ENDMEMBER_FILE: &str = "endmembers.csv";

#[derive(Debug, Parser)]
#[command(name = "mihe", version, about = "Multiple-instance target signature learning for hyperspectral data")]
pub struct Cli {
    /// JSON file with one optional section per command.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (0 lets the runtime decide).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a bag-structured dataset with ground truth.
    Generate(GenerateArgs),
    /// Learn a target/background dictionary from a bag dataset.
    Train(TrainArgs),
    /// Score every instance of a dataset with a trained model.
    Detect(DetectArgs),
    /// ROC, AUC and normalized partial AUC of score files.
    Eval(EvalArgs),
    /// Full synthetic protocol: target-proportion sweep, repeated runs, both detectors.
    Experiment(ExperimentArgs),
}

/// Fills every `None` field of `self` from `base`.
macro_rules! merge_fields {
    ($self:ident, $base:ident; $($f:ident),* $(,)?) => {
        $( if $self.$f.is_none() { $self.$f = $base.$f.clone(); } )*
    };
}

/// Hyperparameter overrides shared by `train` and `experiment`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamArgs {
    /// Generalized-mean exponent.
    #[arg(long)]
    pub p: Option<f64>,
    /// Negative-bag weight in (0, 1]; defaults to min(1, positive/negative instance ratio).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Residual-ratio scale.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Lasso sparsity weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target columns.
    #[arg(long)]
    pub targets: Option<usize>,
    /// Background columns; defaults to the dataset's known background count, else 5.
    #[arg(long)]
    pub backgrounds: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub obj_tol: Option<f64>,
    #[arg(long)]
    pub ista_iters: Option<usize>,
    #[arg(long)]
    pub ista_tol: Option<f64>,
    /// Constrain sparse codes to be nonnegative.
    #[arg(long)]
    pub nonnegative: Option<bool>,
}

impl ParamArgs {
    fn merge(&mut self, base: &ParamArgs) {
        merge_fields!(self, base; p, rho, beta, lambda, targets, backgrounds, max_iters,
            step_size, obj_tol, ista_iters, ista_tol, nonnegative);
    }

    /// Hyperparameters with these overrides applied; `known_backgrounds`
    /// replaces the default background count when no override is given.
    pub fn resolve(&self, known_backgrounds: Option<usize>, seed: u64) -> Result<HyperParams> {
        let d = HyperParams::default();
        let params = HyperParams {
            p: self.p.unwrap_or(d.p),
            rho: self.rho.or(d.rho),
            beta: self.beta.unwrap_or(d.beta),
            lambda: self.lambda.unwrap_or(d.lambda),
            n_targets: self.targets.unwrap_or(d.n_targets),
            n_backgrounds: self.backgrounds.or(known_backgrounds).unwrap_or(d.n_backgrounds),
            max_outer_iters: self.max_iters.unwrap_or(d.max_outer_iters),
            step_size: self.step_size.unwrap_or(d.step_size),
            obj_tol: self.obj_tol.unwrap_or(d.obj_tol),
            ista_iters: self.ista_iters.unwrap_or(d.ista_iters),
            ista_tol: self.ista_tol.unwrap_or(d.ista_tol),
            nonnegative: self.nonnegative.unwrap_or(d.nonnegative),
            seed,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Bag layout preset (only `table1`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Mean target proportion of target instances, in (0, 1).
    #[arg(long)]
    pub pt_mean: Option<f64>,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Delimited spectral library with the preset's endmember names; built-in
    /// synthetic endmembers are used when omitted.
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset manifest, or a directory containing `manifest.json`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for models, traces and `runs.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent runs; run k uses seed + k − 1.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    /// `ace` or `hd`.
    #[arg(long)]
    pub method: Option<String>,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset to score (manifest or directory).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset whose negative bags define the ACE background statistics;
    /// defaults to the scored dataset.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Ground-truth file; `truth.csv` beside the manifest is used when present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Score file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Score files; with several, the median of each metric is reported too.
    #[arg(long = "scores", num_args = 1..)]
    pub scores: Option<Vec<PathBuf>>,
    /// Report the area up to this false-alarm rate, divided by it.
    #[arg(long)]
    pub nauc_far: Option<f64>,
    /// `fpr` (false-positive rate) or `per-m2` (false alarms per m²).
    #[arg(long)]
    pub units: Option<String>,
    /// Scene area in m², required with `--units per-m2`.
    #[arg(long)]
    pub area: Option<f64>,
    /// Directory for one ROC file per score file.
    #[arg(long)]
    pub roc_dir: Option<PathBuf>,
    /// Report file; the report always goes to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentArgs {
    /// Target proportions to sweep.
    #[arg(long, value_delimiter = ',')]
    pub pt_means: Option<Vec<f64>>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

impl GenerateArgs {
    fn merge(&mut self, base: &GenerateArgs) {
        merge_fields!(self, base; preset, pt_mean, snr_db, seed, out, library);
    }
}

impl TrainArgs {
    fn merge(&mut self, base: &TrainArgs) {
        merge_fields!(self, base; data, out, runs, seed);
        self.params.merge(&base.params);
    }
}

impl DetectArgs {
    fn merge(&mut self, base: &DetectArgs) {
        merge_fields!(self, base; method, model, data, background, truth, out);
    }
}

impl EvalArgs {
    fn merge(&mut self, base: &EvalArgs) {
        merge_fields!(self, base; scores, nauc_far, units, area, roc_dir, out);
    }
}

impl ExperimentArgs {
    fn merge(&mut self, base: &ExperimentArgs) {
        merge_fields!(self, base; pt_means, snr_db, runs, seed, out, library);
        self.params.merge(&base.params);
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    pub generate: GenerateArgs,
    pub train: TrainArgs,
    pub detect: DetectArgs,
    pub eval: EvalArgs,
    pub experiment: ExperimentArgs,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// A trained model on disk: the dictionary plus the settings it was trained
/// with, which the hybrid detector reuses for sparse coding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub dictionary: DictionaryFile,
    pub params: HyperParams,
}

/// One entry of `runs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub model: PathBuf,
    pub trace: PathBuf,
    pub outer_iters: usize,
    pub final_objective: f64,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ConfigFile::read(path)?,
        None => ConfigFile::default(),
    };
    let threads = cli.threads.or(config.threads);
    if let Some(n) = threads {
        // fails only if a pool already exists, e.g. when called twice in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Generate(mut a) => {
            a.merge(&config.generate);
            cmd_generate(&a)
        }
        Command::Train(mut a) => {
            a.merge(&config.train);
            cmd_train(&a)
        }
        Command::Detect(mut a) => {
            a.merge(&config.detect);
            cmd_detect(&a)
        }
        Command::Eval(mut a) => {
            a.merge(&config.eval);
            cmd_eval(&a).map(|report| print!("{report}"))
        }
        Command::Experiment(mut a) => {
            a.merge(&config.experiment);
            cmd_experiment(&a).map(|table| print!("{}", table.to_tsv()))
        }
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::invalid(format!("missing required setting --{flag}")))
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_library(path: Option<&Path>) -> Result<SpectralLibrary> {
    match path {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::invalid(format!(
                    "endmember library {} does not exist",
                    p.display()
                )));
            }
            load_spectral_library(p)
        }
        None => Ok(synthetic_endmembers()),
    }
}

fn check_pt_mean(pt: f64) -> Result<()> {
    if pt > 0.0 && pt < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("pt-mean must lie in (0, 1), got {pt}")))
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_nan() || snr == f64::NEG_INFINITY {
        Err(Error::invalid(format!("snr-db must be a number or inf, got {snr}")))
    } else {
        Ok(())
    }
}

/// Writes a simulated dataset, its ground truth and the endmembers used.
pub fn write_simulation(out: &SimOutput, library: &SpectralLibrary, dir: &Path, backgrounds: usize) -> Result<PathBuf> {
    let manifest = save_dataset(&out.dataset, dir, Some(backgrounds))?;
    out.truth.write(&dir.join(TRUTH_FILE))?;
    write_spectral_library(&dir.join(ENDMEMBER_FILE), library)?;
    Ok(manifest)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let preset = a.preset.clone().unwrap_or_else(|| "table1".into());
    if preset != "table1" {
        return Err(Error::invalid(format!("unknown preset {preset:?}; valid presets: table1")));
    }
    let pt = a.pt_mean.unwrap_or(0.5);
    check_pt_mean(pt)?;
    let snr = a.snr_db.unwrap_or(30.0);
    check_snr(snr)?;
    let out_dir = required(&a.out, "out")?;
    let library = load_library(a.library.as_deref())?;
    let config = table1_config(&library, pt, snr, a.seed.unwrap_or(0))?;
    config.validate()?;
    let sim = generate(&config)?;

    create_dir(&out_dir)?;
    let manifest = write_simulation(&sim, &library, &out_dir, config.distinct_backgrounds())?;
    info!(
        "wrote {} bags to {} (measured SNR {:.2} dB)",
        sim.dataset.bags().len(),
        manifest.display(),
        sim.measured_snr_db()
    );
    Ok(())
}

fn load_training_data(data: &Path) -> Result<(BagDataset, Option<usize>)> {
    let path = manifest_path(data);
    let manifest = Manifest::read(&path)?;
    let dataset = load_dataset(&path)?;
    dataset.require_trainable()?;
    Ok((dataset, manifest.background_endmembers))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = required(&a.data, "data")?;
    let out_dir = required(&a.out, "out")?;
    let runs = a.runs.unwrap_or(1);
    if runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    let seed = a.seed.unwrap_or(0);
    let (dataset, known) = load_training_data(&data)?;
    let params = a.params.resolve(known, seed)?;

    let mut states = Vec::with_capacity(runs);
    for k in 0..runs {
        let run_params = HyperParams {
            seed: seed + k as u64,
            ..params.clone()
        };
        info!("run {} of {runs} (seed {})", k + 1, run_params.seed);
        states.push((run_params.clone(), train(&dataset, &run_params, None)?));
    }

    create_dir(&out_dir)?;
    let mut records = Vec::with_capacity(runs);
    for (k, (run_params, state)) in states.into_iter().enumerate() {
        let run = k + 1;
        let model = PathBuf::from(format!("model-{run}.json"));
        let trace = PathBuf::from(format!("trace-{run}.csv"));
        save_model(&state.dictionary, &run_params, &out_dir.join(&model))?;
        state.write_trace(&out_dir.join(&trace))?;
        records.push(RunRecord {
            run,
            seed: run_params.seed,
            model,
            trace,
            outer_iters: state.outer_iter,
            final_objective: state.final_objective(),
        });
    }
    write_json(&out_dir.join("runs.json"), &records)
}

pub fn save_model(dict: &Dictionary, params: &HyperParams, path: &Path) -> Result<()> {
    // the strict loader would reject it later
    if !dict.is_unit_norm(UNIT_NORM_TOL) {
        return Err(Error::numerical("trained dictionary columns are not unit norm"));
    }
    write_json(
        path,
        &ModelFile {
            dictionary: DictionaryFile::from_dictionary(dict),
            params: params.clone(),
        },
    )
}

/// Loads a model file. Plain dictionary files load with default settings.
pub fn load_model(path: &Path) -> Result<(Dictionary, HyperParams)> {
    let dict = load_dictionary(path, NormPolicy::Strict)?;
    #[derive(Deserialize)]
    struct Settings {
        #[serde(default)]
        params: HyperParams,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let s: Settings = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    s.params.validate()?;
    Ok((dict, s.params))
}

fn build_detector(method: Method, dict: &Dictionary, params: &HyperParams, background: &BagDataset) -> Result<Detector> {
    match method {
        Method::Ace => {
            let negatives = background.negative_instances();
            if negatives.ncols() == 0 {
                return Err(Error::invalid(
                    "ACE needs negative bags to estimate background statistics",
                ));
            }
            Detector::ace(dict, &negatives, DEFAULT_RIDGE)
        }
        Method::Hd => Detector::hybrid(dict, ista_settings(params)),
    }
}

pub fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let method: Method = required(&a.method, "method")?.parse()?;
    let model = required(&a.model, "model")?;
    let data = manifest_path(&required(&a.data, "data")?);
    let out = required(&a.out, "out")?;

    let (dict, params) = load_model(&model)?;
    let dataset = load_dataset(&data)?;
    if dataset.dim() != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            found: dataset.dim(),
            context: "dataset bands vs model".into(),
        });
    }
    let truth_path = match &a.truth {
        Some(p) => Some(p.clone()),
        None => data
            .parent()
            .map(|dir| dir.join(TRUTH_FILE))
            .filter(|p| p.is_file()),
    };
    let truth = truth_path.as_deref().map(GroundTruth::read).transpose()?;
    let background = match &a.background {
        Some(p) => load_dataset(&manifest_path(p))?,
        None => dataset.clone(),
    };
    let detector = build_detector(method, &dict, &params, &background)?;
    let scores = score_dataset(&dataset, &detector, truth.as_ref())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    scores.write(&out)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let files = required(&a.scores, "scores")?;
    if files.is_empty() {
        return Err(Error::invalid("at least one score file is required"));
    }
    let units: RateUnits = a.units.as_deref().unwrap_or("fpr").parse()?;
    if let Some(far) = a.nauc_far {
        if !(far > 0.0 && far.is_finite()) {
            return Err(Error::invalid("nauc-far must be positive"));
        }
    }
    let area = match (units, a.area) {
        (RateUnits::PerM2, None) => {
            return Err(Error::invalid("--units per-m2 needs --area"));
        }
        (_, Some(area)) if !(area > 0.0 && area.is_finite()) => {
            return Err(Error::invalid("area must be positive"));
        }
        (_, area) => area,
    };
    if units == RateUnits::PerM2 && a.nauc_far.is_none() {
        return Err(Error::invalid(
            "--units per-m2 reports only the normalized partial area; give --nauc-far",
        ));
    }

    let mut sets = Vec::with_capacity(files.len());
    for f in &files {
        let mut s = ScoreSet::read(f)?;
        if let Some(area) = area {
            s = s.with_area(area);
        }
        sets.push(s);
    }

    let mut header = vec!["scores".to_string()];
    if units == RateUnits::Fpr {
        header.push("auc".into());
    }
    if let Some(far) = a.nauc_far {
        header.push(format!("nauc@{far}"));
    }
    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(sets.len());
    for (f, s) in files.iter().zip(&sets) {
        let mut vals = Vec::new();
        if units == RateUnits::Fpr {
            vals.push(auc_of(s)?);
        }
        if let Some(far) = a.nauc_far {
            vals.push(nauc_at_far(s, far, units)?);
        }
        rows.push((f.display().to_string(), vals));
    }

    if let Some(dir) = &a.roc_dir {
        create_dir(dir)?;
        for (i, (f, s)) in files.iter().zip(&sets).enumerate() {
            let stem = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("scores{}", i + 1));
            roc_with_units(s, units)?.write(&dir.join(format!("roc-{stem}.csv")))?;
        }
    }

    let mut report = header.join("\t") + "\n";
    for (name, vals) in &rows {
        report += &format_row(name, vals);
    }
    if rows.len() > 1 {
        let medians = (0..header.len() - 1)
            .map(|c| median_over_runs(&rows.iter().map(|r| r.1[c]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        report += &format_row("median", &medians);
    }
    if let Some(out) = &a.out {
        fs::write(out, &report).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

fn format_row(name: &str, vals: &[f64]) -> String {
    let cells: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
    format!("{name}\t{}\n", cells.join("\t"))
}

/// Seeds for run `run` (0-based) at sweep position `pos`: training data,
/// held-out data and dictionary initialization.
fn experiment_seeds(base: u64, pos: usize, run: usize) -> (u64, u64, u64) {
    let train = base + 1000 * pos as u64 + run as u64;
    (train, train + 500, train)
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<SummaryTable> {
    let pts = a.pt_means.clone().unwrap_or_else(|| vec![0.3, 0.5, 0.7]);
    if pts.is_empty() {
        return Err(Error::invalid("pt-means must not be empty"));
    }
    for &pt in &pts {
        check_pt_mean(pt)?;
    }
    let snr = a.snr_db.unwrap_or(30.0);
    check_snr(snr)?;
    let runs = a.runs.unwrap_or(5);
    if runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    let base = a.seed.unwrap_or(0);
    let out_dir = required(&a.out, "out")?;
    let library = load_library(a.library.as_deref())?;
    // validates the library against the preset before any work
    let probe = table1_config(&library, pts[0], snr, base)?;
    probe.validate()?;
    a.params.resolve(Some(probe.distinct_backgrounds()), base)?;

    create_dir(&out_dir)?;
    let mut per_run = String::from("pt_mean\trun\ttrain_seed\ttest_seed\tace_auc\thd_auc\n");
    let mut ace_medians = Vec::with_capacity(pts.len());
    let mut hd_medians = Vec::with_capacity(pts.len());
    for (pos, &pt) in pts.iter().enumerate() {
        let mut ace = Vec::with_capacity(runs);
        let mut hd = Vec::with_capacity(runs);
        for run in 0..runs {
            let (train_seed, test_seed, init_seed) = experiment_seeds(base, pos, run);
            let config = table1_config(&library, pt, snr, train_seed)?;
            let train_sim = generate(&config)?;
            let test_sim = generate(&table1_config(&library, pt, snr, test_seed)?)?;
            let params = a.params.resolve(Some(config.distinct_backgrounds()), init_seed)?;
            info!("pt_mean {pt}, run {}: training", run + 1);
            let state = train(&train_sim.dataset, &params, None)?;

            let run_dir = out_dir.join(format!("pt{pt}-run{}", run + 1));
            create_dir(&run_dir)?;
            save_model(&state.dictionary, &params, &run_dir.join("model.json"))?;
            state.write_trace(&run_dir.join("trace.csv"))?;

            let mut aucs = [0.0; 2];
            for (slot, method) in [Method::Ace, Method::Hd].into_iter().enumerate() {
                let detector = build_detector(method, &state.dictionary, &params, &train_sim.dataset)?;
                let scores = score_dataset(&test_sim.dataset, &detector, Some(&test_sim.truth))?;
                scores.write(&run_dir.join(format!("scores-{method}.csv")))?;
                aucs[slot] = auc_of(&scores)?;
            }
            per_run += &format!(
                "{pt}\t{}\t{train_seed}\t{test_seed}\t{:.6}\t{:.6}\n",
                run + 1,
                aucs[0],
                aucs[1]
            );
            ace.push(aucs[0]);
            hd.push(aucs[1]);
        }
        ace_medians.push(median_over_runs(&ace)?);
        hd_medians.push(median_over_runs(&hd)?);
    }

    let table = SummaryTable {
        title: format!("median AUC over {runs} runs, SNR {snr} dB"),
        columns: pts.iter().map(|pt| format!("pt_mean={pt}")).collect(),
        rows: vec![
            ("MI-HE (ACE)".into(), ace_medians),
            ("MI-HE (HD)".into(), hd_medians),
        ],
    };
    let runs_path = out_dir.join("runs.tsv");
    fs::write(&runs_path, per_run).map_err(|e| Error::io(&runs_path, e))?;
    let summary_path = out_dir.join("summary.tsv");
    fs::write(&summary_path, table.to_tsv()).map_err(|e| Error::io(&summary_path, e))?;
    Ok(table)
}
