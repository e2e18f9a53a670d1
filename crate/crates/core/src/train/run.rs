use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::adam::{adam_step, AdamState};
use super::metrics::{evaluate, Metric};
use super::TrainConfig;
use crate::data::{make_splits, DatasetBundle, Split};
use crate::engine::{softmax_cross_entropy, Real, Tensor};
use crate::error::{config_err, Error, Result};
use crate::graph::Graph;
use crate::model::{Model, ModelConfig, Phase};
use crate::rng::RngStream;

/// Mixed into a run seed to seed that run's dropout stream, so dropout
/// draws never coincide with the initializer's.
pub const DROPOUT_STREAM_SALT: u64 = 0x5851_F42D_4C95_7F2D;

/// What one run trains and evaluates on.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a, T = f64> {
    pub features: &'a Tensor<T>,
    pub labels: &'a [usize],
    pub graph: &'a Graph,
    pub split: &'a Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Absent when the set holds a single class.
    pub roc_auc_ovr: Option<f64>,
}

impl SetMetrics {
    fn compute<T: Real>(logits: &Tensor<T>, labels: &[usize], nodes: &[usize]) -> Result<Self> {
        Ok(SetMetrics {
            accuracy: evaluate(logits, labels, nodes, Metric::Accuracy)?,
            macro_f1: evaluate(logits, labels, nodes, Metric::MacroF1)?,
            roc_auc_ovr: evaluate(logits, labels, nodes, Metric::RocAucOvr).ok(),
        })
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => Some(self.accuracy),
            Metric::MacroF1 => Some(self.macro_f1),
            Metric::RocAucOvr => self.roc_auc_ovr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub train: SetMetrics,
    pub val: SetMetrics,
    pub test: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub curves: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_metrics: Option<FinalMetrics>,
    /// Wall-clock training time; kept out of the report document so
    /// reruns stay byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

/// Mean and sample standard deviation over the completed runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub metric: Metric,
    pub runs_completed: usize,
    pub runs_diverged: usize,
    pub train_mean: Option<f64>,
    pub train_std: Option<f64>,
    pub val_mean: Option<f64>,
    pub val_std: Option<f64>,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub dataset: String,
    pub precision: &'static str,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-run wall-clock seconds, as a separate document.
    pub fn timing_json(&self) -> String {
        let seconds: Vec<f64> = self.runs.iter().map(|r| r.seconds).collect();
        let mean = seconds.iter().sum::<f64>() / seconds.len().max(1) as f64;
        let mut s = serde_json::to_string_pretty(&serde_json::json!({
            "seeds": self.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "seconds": seconds,
            "mean_seconds": mean,
        }))
        .expect("timing serializes");
        s.push('\n');
        s
    }

    pub fn mean_seconds(&self) -> f64 {
        let done: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .map(|r| r.seconds)
            .collect();
        mean_std(&done).map_or(0.0, |(m, _)| m)
    }

    /// `epoch,train_loss,train_acc,val_acc` for one run.
    pub fn curves_csv(&self, run: usize) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in &self.runs[run].curves {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                crate::io::format_sig6(e.train_loss),
                crate::io::format_sig6(e.train_acc),
                crate::io::format_sig6(e.val_acc)
            ));
        }
        s
    }
}

/// Mean and sample standard deviation (divisor `len − 1`, zero for one
/// value); `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

/// Trains `model` for `cfg.epochs` full-batch epochs and evaluates the
/// final-epoch model. Dropout draws come from `rng`.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: TrainData<'_, T>,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<RunRecord> {
    if cfg.epochs == 0 {
        return Err(config_err!("epochs must be at least 1"));
    }
    let start = Instant::now();
    let mut state = AdamState::for_model(model);
    let mut curves = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        model.zero_grad();
        let (logits, trace) = model.forward(data.features, data.graph, Phase::Train, rng)?;
        let (loss, grad) = softmax_cross_entropy(&logits, data.labels, &data.split.train)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        model.backward(&trace, data.graph, &grad)?;
        drop(trace);
        adam_step(model, &mut state, cfg)?;

        let eval = model.predict(data.features, data.graph)?;
        curves.push(EpochRecord {
            epoch,
            train_loss: loss,
            train_acc: evaluate(&eval, data.labels, &data.split.train, Metric::Accuracy)?,
            val_acc: evaluate(&eval, data.labels, &data.split.val, Metric::Accuracy)?,
        });
    }
    let logits = model.predict(data.features, data.graph)?;
    let final_metrics = FinalMetrics {
        train: SetMetrics::compute(&logits, data.labels, &data.split.train)?,
        val: SetMetrics::compute(&logits, data.labels, &data.split.val)?,
        test: SetMetrics::compute(&logits, data.labels, &data.split.test)?,
    };
    Ok(RunRecord {
        seed: model.config().seed,
        status: RunStatus::Completed,
        curves,
        final_metrics: Some(final_metrics),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub struct ExperimentOutcome<T = f64> {
    pub report: RunReport,
    /// Final model of each run; `None` for diverged runs.
    pub models: Vec<Option<Model<T>>>,
}

/// Runs seeds `base_seed .. base_seed + num_runs` on up to `threads` workers
/// and aggregates the final metrics. Run `i` initializes the model from its
/// seed, seeds dropout from `seed ^ DROPOUT_STREAM_SALT` and, with
/// `vary_splits`, draws its split from the seed too.
pub fn run_experiment<T: Real>(
    model_cfg: &ModelConfig,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<ExperimentOutcome<T>> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.input_dim != bundle.feature_dim() || model_cfg.output_dim != bundle.class_count {
        return Err(config_err!(
            "model maps {} -> {} but {} has {} features and {} classes",
            model_cfg.input_dim,
            model_cfg.output_dim,
            bundle.name,
            bundle.feature_dim(),
            bundle.class_count
        ));
    }
    let features: Tensor<T> = bundle.features.cast();
    let seeds: Vec<u64> = (0..cfg.num_runs as u64)
        .map(|i| cfg.base_seed.wrapping_add(i))
        .collect();

    let one_run = |seed: u64| -> Result<(RunRecord, Option<Model<T>>)> {
        let split = if cfg.vary_splits {
            make_splits(&bundle.labels, bundle.class_count, seed, &cfg.split)?
        } else {
            bundle.split.clone()
        };
        let data = TrainData {
            features: &features,
            labels: &bundle.labels,
            graph: &bundle.graph,
            split: &split,
        };
        let mut model = Model::<T>::init(
            ModelConfig {
                seed,
                ..model_cfg.clone()
            },
            &bundle.graph,
        )?;
        let mut rng = RngStream::new(seed ^ DROPOUT_STREAM_SALT);
        match train(&mut model, data, cfg, &mut rng) {
            Ok(record) => {
                info!(
                    "{} {} seed {seed}: done in {:.2}s",
                    bundle.name, model_cfg.variant, record.seconds
                );
                Ok((record, Some(model)))
            }
            Err(Error::Divergence { epoch, loss }) => {
                warn!(
                    "!!! {} {} seed {seed} diverged at epoch {epoch} (loss {loss}); excluded from aggregates",
                    bundle.name, model_cfg.variant
                );
                let record = RunRecord {
                    seed,
                    status: RunStatus::Diverged { epoch },
                    curves: Vec::new(),
                    final_metrics: None,
                    seconds: 0.0,
                };
                Ok((record, None))
            }
            Err(e) => Err(e),
        }
    };

    let results: Vec<Result<(RunRecord, Option<Model<T>>)>> = if threads <= 1 {
        seeds.iter().map(|&s| one_run(s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| one_run(s)).collect())
    };
    let mut runs = Vec::with_capacity(results.len());
    let mut models = Vec::with_capacity(results.len());
    for r in results {
        let (record, model) = r?;
        runs.push(record);
        models.push(model);
    }

    let aggregate = aggregate(&runs, cfg.metric);
    if aggregate.runs_diverged > 0 {
        warn!(
            "!!! {} of {} runs diverged and are excluded from the aggregates",
            aggregate.runs_diverged,
            runs.len()
        );
    }
    let report = RunReport {
        dataset: bundle.name.clone(),
        precision: if std::mem::size_of::<T>() == 4 { "f32" } else { "f64" },
        model: ModelConfig {
            seed: cfg.base_seed,
            ..model_cfg.clone()
        },
        train: cfg.clone(),
        runs,
        aggregate,
    };
    Ok(ExperimentOutcome { report, models })
}

fn aggregate(runs: &[RunRecord], metric: Metric) -> Aggregate {
    let finals: Vec<&FinalMetrics> = runs.iter().filter_map(|r| r.final_metrics.as_ref()).collect();
    let stat = |pick: fn(&FinalMetrics) -> &SetMetrics| {
        let values: Option<Vec<f64>> = finals.iter().map(|f| pick(f).get(metric)).collect();
        values.and_then(|v| mean_std(&v))
    };
    let train = stat(|f| &f.train);
    let val = stat(|f| &f.val);
    let test = stat(|f| &f.test);
    Aggregate {
        metric,
        runs_completed: finals.len(),
        runs_diverged: runs.len() - finals.len(),
        train_mean: train.map(|s| s.0),
        train_std: train.map(|s| s.1),
        val_mean: val.map(|s| s.0),
        val_std: val.map(|s| s.1),
        test_mean: test.map(|s| s.0),
        test_std: test.map(|s| s.1),
    }
}
