//! Experiment recipes behind the command-line front end: a TOML spec file,
//! flag overrides, and the train / compare / sweep commands.
//!
//! ```toml
//! [dataset]
//! name = "cora"            # cora | citeseer | custom
//! data_dir = "data"
//!
//! [model]
//! variant = "residual_ggnn"
//! num_layers = 2
//! alpha = 0.1
//!
//! [train]
//! epochs = 50
//! num_runs = 5
//!
//! [sweep]
//! alphas = [0.0, 0.1, 0.2]
//!
//! [run]
//! out_dir = "out"
//! threads = 1
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, DatasetSource};
use crate::engine::Real;
use crate::error::{config_err, Error, Result};
use crate::io::{format_sig6, write_atomic};
use crate::model::{save_checkpoint, ModelConfig, Variant};
use crate::train::{run_experiment, RunReport, TrainConfig};

pub const DEFAULT_ALPHAS: [f64; 8] = [0.0, 0.05, 0.1, 0.13, 0.15, 0.2, 0.3, 0.5];
pub const DEFAULT_LAYERS: [usize; 5] = [2, 3, 4, 6, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(config_err!("unknown precision `{s}` (expected f32 or f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub name: String,
    pub data_dir: PathBuf,
    /// Only for `name = "custom"`.
    pub content: Option<PathBuf>,
    pub cites: Option<PathBuf>,
    /// Seed of the fixed split; defaults to `train.base_seed`.
    pub split_seed: Option<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            name: "cora".into(),
            data_dir: PathBuf::from("data"),
            content: None,
            cites: None,
            split_seed: None,
        }
    }
}

impl DatasetSection {
    pub fn source(&self) -> Result<DatasetSource> {
        if self.name == "custom" {
            match (&self.content, &self.cites) {
                (Some(content), Some(cites)) => Ok(DatasetSource::Custom {
                    content: content.clone(),
                    cites: cites.clone(),
                }),
                _ => Err(config_err!("dataset `custom` needs both `content` and `cites` paths")),
            }
        } else {
            DatasetSource::named(&self.name, &self.data_dir)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Unset means 0.1, or the per-dataset value in `compare`.
    pub alpha: Option<f64>,
    pub dropout_p: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: Variant::LearnableGgnn,
            num_layers: 2,
            hidden_dim: 64,
            alpha: None,
            dropout_p: 0.5,
        }
    }
}

impl ModelSection {
    pub fn alpha_or_default(&self) -> f64 {
        self.alpha.unwrap_or(0.1)
    }

    pub fn config(&self, bundle: &DatasetBundle, seed: u64) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            num_layers: self.num_layers,
            input_dim: bundle.feature_dim(),
            hidden_dim: self.hidden_dim,
            output_dim: bundle.class_count,
            alpha: self.alpha_or_default(),
            dropout_p: self.dropout_p,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alphas: Option<Vec<f64>>,
    pub layers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub threads: usize,
    pub precision: Precision,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("out"),
            threads: 1,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub run: RunSection,
}

/// Command-line values that take precedence over the spec file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub content: Option<PathBuf>,
    pub cites: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub threads: Option<usize>,
    pub precision: Option<Precision>,
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub hidden: Option<usize>,
    pub num_layers: Option<usize>,
    pub alpha: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub layers: Option<Vec<usize>>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err!("{e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => config_err!("{}: {msg}", path.display()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut self.dataset.name, &o.dataset);
        set(&mut self.dataset.data_dir, &o.data_dir);
        if o.content.is_some() {
            self.dataset.content = o.content.clone();
        }
        if o.cites.is_some() {
            self.dataset.cites = o.cites.clone();
        }
        set(&mut self.run.out_dir, &o.out_dir);
        set(&mut self.run.threads, &o.threads);
        set(&mut self.run.precision, &o.precision);
        set(&mut self.train.base_seed, &o.seed);
        set(&mut self.train.num_runs, &o.runs);
        set(&mut self.train.epochs, &o.epochs);
        set(&mut self.train.learning_rate, &o.learning_rate);
        set(&mut self.train.weight_decay, &o.weight_decay);
        set(&mut self.model.variant, &o.variant);
        set(&mut self.model.dropout_p, &o.dropout);
        set(&mut self.model.hidden_dim, &o.hidden);
        set(&mut self.model.num_layers, &o.num_layers);
        if o.alpha.is_some() {
            self.model.alpha = o.alpha;
        }
        if o.alphas.is_some() {
            self.sweep.alphas = o.alphas.clone();
        }
        if o.layers.is_some() {
            self.sweep.layers = o.layers.clone();
        }
    }

    /// Checks that need no data: training constants, sweep lists, thread count.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.run.threads == 0 {
            return Err(config_err!("threads must be at least 1"));
        }
        self.dataset.source()?;
        if let Some(a) = &self.sweep.alphas {
            check_increasing("sweep.alphas", a, |x, y| x < y)?;
        }
        if let Some(l) = &self.sweep.layers {
            check_increasing("sweep.layers", l, |x, y| x < y)?;
        }
        Ok(())
    }

    fn split_seed(&self) -> u64 {
        self.dataset.split_seed.unwrap_or(self.train.base_seed)
    }

    fn load_bundle(&self) -> Result<DatasetBundle> {
        let source = self.dataset.source()?;
        source.check_exists()?;
        let bundle = DatasetBundle::load(&source, self.split_seed(), &self.train.split)?;
        info!("{}", bundle.summary());
        Ok(bundle)
    }
}

fn check_increasing<T: fmt::Debug>(name: &str, values: &[T], lt: impl Fn(&T, &T) -> bool) -> Result<()> {
    if values.is_empty() {
        return Err(config_err!("{name} is empty"));
    }
    if values.windows(2).any(|w| !lt(&w[0], &w[1])) {
        return Err(config_err!("{name} must be strictly increasing, got {values:?}"));
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn report_for(
    spec: &ExperimentSpec,
    model: &ModelConfig,
    bundle: &DatasetBundle,
    train: &TrainConfig,
) -> Result<RunReport> {
    Ok(match spec.run.precision {
        Precision::F64 => run_experiment::<f64>(model, bundle, train, spec.run.threads)?.report,
        Precision::F32 => run_experiment::<f32>(model, bundle, train, spec.run.threads)?.report,
    })
}

fn train_and_write<T: Real>(spec: &ExperimentSpec, model: &ModelConfig, bundle: &DatasetBundle) -> Result<RunReport> {
    let outcome = run_experiment::<T>(model, bundle, &spec.train, spec.run.threads)?;
    let dir = &spec.run.out_dir;
    let report = outcome.report;
    for (i, (run, trained)) in report.runs.iter().zip(&outcome.models).enumerate() {
        if let Some(m) = trained {
            write_atomic(
                &dir.join(format!("curves_seed{}.csv", run.seed)),
                report.curves_csv(i).as_bytes(),
            )?;
            save_checkpoint(m, &dir.join(format!("checkpoint_seed{}.ckpt", run.seed)))?;
        }
    }
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&dir.join("timing.json"), report.timing_json().as_bytes())?;
    Ok(report)
}

/// Trains `spec.model` for every seed and writes `report.json`,
/// `timing.json`, and per-seed `curves_seed<S>.csv` and
/// `checkpoint_seed<S>.ckpt` into the output directory. Nothing is written
/// unless the data loads and the configuration is consistent.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let bundle = spec.load_bundle()?;
    let model = spec.model.config(&bundle, spec.train.base_seed);
    model.validate()?;
    create_out_dir(&spec.run.out_dir)?;
    let report = match spec.run.precision {
        Precision::F64 => train_and_write::<f64>(spec, &model, &bundle)?,
        Precision::F32 => train_and_write::<f32>(spec, &model, &bundle)?,
    };
    Ok(report)
}

/// Per-variant settings of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub variant: Variant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub hidden_dim: usize,
    pub epochs: usize,
}

/// The plain baselines share the residual variant's settings so that only
/// the mechanism differs. Baselines train 100 epochs, the GGNNs 50.
pub fn compare_presets() -> [Preset; 4] {
    let base = Preset {
        variant: Variant::Gnn,
        learning_rate: 0.1,
        weight_decay: 0.01,
        dropout_p: 0.5,
        hidden_dim: 64,
        epochs: 100,
    };
    [
        base,
        Preset {
            variant: Variant::Pmlp,
            ..base
        },
        Preset {
            variant: Variant::ResidualGgnn,
            epochs: 50,
            ..base
        },
        Preset {
            variant: Variant::LearnableGgnn,
            weight_decay: 0.1,
            dropout_p: 0.1,
            epochs: 50,
            ..base
        },
    ]
}

/// Shortcut scale used by `compare` when the spec leaves alpha unset.
pub fn default_alpha(dataset: &str) -> f64 {
    if dataset == "citeseer" {
        0.13
    } else {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: Variant,
    pub report: RunReport,
}

pub const COMPARE_HEADER: &str = "variant,train_mean,train_std,test_mean,test_std,time_mean_seconds";

fn opt_sig6(v: Option<f64>) -> String {
    format_sig6(v.unwrap_or(f64::NAN))
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let a = &r.report.aggregate;
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant,
            opt_sig6(a.train_mean),
            opt_sig6(a.train_std),
            opt_sig6(a.test_mean),
            opt_sig6(a.test_std),
            format_sig6(r.report.mean_seconds())
        ));
    }
    s
}

/// Runs all four variants with their presets and writes `compare.csv`,
/// `compare_settings.txt` and one `compare_<variant>.json` report each.
/// Depth, seeds, run count and Adam constants come from `spec`.
pub fn cmd_compare(spec: &ExperimentSpec) -> Result<Vec<CompareRow>> {
    spec.validate()?;
    let bundle = spec.load_bundle()?;
    let alpha = spec.model.alpha.unwrap_or_else(|| default_alpha(&bundle.name));
    let mut jobs = Vec::new();
    for p in compare_presets() {
        let model = ModelConfig {
            variant: p.variant,
            num_layers: spec.model.num_layers,
            input_dim: bundle.feature_dim(),
            hidden_dim: p.hidden_dim,
            output_dim: bundle.class_count,
            alpha,
            dropout_p: p.dropout_p,
            seed: spec.train.base_seed,
        };
        model.validate()?;
        let train = TrainConfig {
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            epochs: p.epochs,
            ..spec.train.clone()
        };
        train.validate()?;
        jobs.push((p, model, train));
    }
    create_out_dir(&spec.run.out_dir)?;

    let mut settings = format!(
        "dataset={}\nsplit_seed={}\nnum_layers={}\nalpha={alpha}\nnum_runs={}\nbase_seed={}\ndecay_mode={}\nprecision={}\n",
        bundle.name,
        spec.split_seed(),
        spec.model.num_layers,
        spec.train.num_runs,
        spec.train.base_seed,
        spec.train.decay_mode,
        spec.run.precision
    );
    let mut rows = Vec::new();
    for (p, model, train) in jobs {
        settings.push_str(&format!(
            "{}: learning_rate={} weight_decay={} dropout={} hidden={} epochs={}\n",
            p.variant, p.learning_rate, p.weight_decay, p.dropout_p, p.hidden_dim, p.epochs
        ));
        info!("compare: {} on {}", p.variant, bundle.name);
        let report = report_for(spec, &model, &bundle, &train)?;
        write_atomic(
            &spec.run.out_dir.join(format!("compare_{}.json", p.variant)),
            report.to_json().as_bytes(),
        )?;
        rows.push(CompareRow {
            variant: p.variant,
            report,
        });
    }
    write_atomic(&spec.run.out_dir.join("compare_settings.txt"), settings.as_bytes())?;
    write_atomic(&spec.run.out_dir.join("compare.csv"), compare_csv(&rows).as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub num_layers: usize,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    pub val_mean: Option<f64>,
}

pub const SWEEP_HEADER: &str = "alpha,num_layers,test_mean,test_std,val_mean";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            format_sig6(p.alpha),
            p.num_layers,
            opt_sig6(p.test_mean),
            opt_sig6(p.test_std),
            opt_sig6(p.val_mean)
        ));
    }
    s
}

/// Grid axes of a sweep. An axis the spec does not request holds the model's
/// own value; with neither requested, residual_ggnn sweeps the default alpha
/// grid and every other variant the default layer grid.
pub fn sweep_axes(spec: &ExperimentSpec) -> Result<(Vec<f64>, Vec<usize>)> {
    let residual = spec.model.variant == Variant::ResidualGgnn;
    if spec.sweep.alphas.is_some() && !residual {
        return Err(config_err!(
            "an alpha sweep needs variant residual_ggnn, not {}",
            spec.model.variant
        ));
    }
    let alpha = spec.model.alpha_or_default();
    let axes = match (&spec.sweep.alphas, &spec.sweep.layers) {
        (Some(a), Some(l)) => (a.clone(), l.clone()),
        (Some(a), None) => (a.clone(), vec![spec.model.num_layers]),
        (None, Some(l)) => (vec![alpha], l.clone()),
        (None, None) if residual => (DEFAULT_ALPHAS.to_vec(), vec![spec.model.num_layers]),
        (None, None) => (vec![alpha], DEFAULT_LAYERS.to_vec()),
    };
    Ok(axes)
}

/// Runs every grid point (layers outer, alpha inner) and writes `sweep.csv`
/// and `sweep_settings.txt`.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    let (alphas, layers) = sweep_axes(spec)?;
    let bundle = spec.load_bundle()?;
    let mut models = Vec::new();
    for &num_layers in &layers {
        for &alpha in &alphas {
            let model = ModelConfig {
                num_layers,
                alpha,
                ..spec.model.config(&bundle, spec.train.base_seed)
            };
            model.validate()?;
            models.push(model);
        }
    }
    create_out_dir(&spec.run.out_dir)?;
    let settings = format!(
        "dataset={}\nvariant={}\nhidden={}\ndropout={}\nlearning_rate={}\nweight_decay={}\nepochs={}\n\
         num_runs={}\nbase_seed={}\nsplit_seed={}\ndecay_mode={}\nprecision={}\nalphas={alphas:?}\nlayers={layers:?}\n",
        bundle.name,
        spec.model.variant,
        spec.model.hidden_dim,
        spec.model.dropout_p,
        spec.train.learning_rate,
        spec.train.weight_decay,
        spec.train.epochs,
        spec.train.num_runs,
        spec.train.base_seed,
        spec.split_seed(),
        spec.train.decay_mode,
        spec.run.precision
    );
    write_atomic(&spec.run.out_dir.join("sweep_settings.txt"), settings.as_bytes())?;

    let mut points = Vec::new();
    for model in models {
        info!("sweep: alpha={} layers={}", model.alpha, model.num_layers);
        let report = report_for(spec, &model, &bundle, &spec.train)?;
        let a = &report.aggregate;
        points.push(SweepPoint {
            alpha: model.alpha,
            num_layers: model.num_layers,
            test_mean: a.test_mean,
            test_std: a.test_std,
            val_mean: a.val_mean,
        });
        // Rewritten after every point so an interrupted sweep keeps its rows.
        write_atomic(&spec.run.out_dir.join("sweep.csv"), sweep_csv(&points).as_bytes())?;
    }
    Ok(points)
}
