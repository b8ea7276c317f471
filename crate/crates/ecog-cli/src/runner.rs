//! The experiment runner: per-day preprocessing, epoching, splitting,
//! decoder fitting with validation-based selection, test-set evaluation and
//! cross-day aggregation.
//!
//! Days run in parallel; every source of randomness is seeded per
//! (seed, day, method, classes), so the schedule never changes results.
//! A failure on one day is recorded and the remaining days complete.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ecog_core::dataset::{read_dataset, ClassTrial, Condition, Recording};
use ecog_core::epoch::{make_class_trials, segment_trials, ClassScheme};
use ecog_core::eval::{aggregate_report, chronological_split, confusion_matrix, ConfusionReport, MethodDays};
use ecog_core::preprocess::{flag_bad_trials, preprocess_recording, FilterPath};
use ecog_core::rlda::{self, RldaFeatureConfig, RldaModel};
use ecog_core::fbcsp::fit_fbcsp;
use ecog_convnet::{fit_convnet, ConvNetModel};

use crate::config::{ExperimentConfig, Method};
use crate::outputs::{
    confusion_csv, confusion_file_name, DayEntry, DayInfo, ErrorEntry, PooledView, Summary,
};

/// Failure taxonomy mapped onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FailureKind {
    Config, // exit 1
    Data,   // exit 2
    Numeric, // exit 3
}

impl FailureKind {
    pub fn exit_code(&self) -> i32 {
        match self {
            FailureKind::Config => 1,
            FailureKind::Data => 2,
            FailureKind::Numeric => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FailureKind::Config => "config",
            FailureKind::Data => "data",
            FailureKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct RunError {
    pub kind: FailureKind,
    pub message: String,
}

impl RunError {
    pub fn config(msg: impl Into<String>) -> Self {
        RunError {
            kind: FailureKind::Config,
            message: msg.into(),
        }
    }
    pub fn data(msg: impl Into<String>) -> Self {
        RunError {
            kind: FailureKind::Data,
            message: msg.into(),
        }
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        RunError {
            kind: FailureKind::Numeric,
            message: msg.into(),
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.message)
    }
}

impl std::error::Error for RunError {}

/// Mix the global seed with the task coordinates (splitmix64 finalizer).
pub fn task_seed(seed: u64, day_id: u32, method: Method, classes: u8) -> u64 {
    let mut z = seed
        ^ (day_id as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ ((method as u64 + 1) << 32)
        ^ ((classes as u64) << 48);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// The class-trials of one preprocessed day, already flagged and split.
pub struct PreparedDay {
    pub day_id: u32,
    pub condition: Condition,
    pub fs_hz: f64,
    pub train: Vec<ClassTrial>,
    pub validation: Vec<ClassTrial>,
    pub test: Vec<ClassTrial>,
}

/// Load + preprocess + epoch + flag + split one day directory.
pub fn prepare_day(
    dir: &Path,
    config: &ExperimentConfig,
    scheme: &ClassScheme,
) -> Result<PreparedDay, RunError> {
    let recording: Recording =
        read_dataset(dir).map_err(|e| RunError::data(format!("{}: {e}", dir.display())))?;
    let pre = preprocess_recording(&recording, &config.preprocess, FilterPath::Decoding)
        .map_err(|e| RunError::data(format!("day {}: {e}", recording.day_id)))?;
    let trials = segment_trials(&pre.recording);
    let class_trials = make_class_trials(&trials, scheme);
    let class_trials =
        flag_bad_trials(class_trials, config.preprocess.amplitude_threshold_uv);
    let split = chronological_split(&class_trials, (0.64, 0.16, 0.20))
        .map_err(|e| RunError::data(format!("day {}: {e}", recording.day_id)))?;
    let take = |idx: &[usize]| -> Vec<ClassTrial> {
        idx.iter().map(|&i| class_trials[i].clone()).collect()
    };
    Ok(PreparedDay {
        day_id: recording.day_id,
        condition: recording.condition,
        fs_hz: recording.fs_hz,
        train: take(&split.train),
        validation: take(&split.validation),
        test: take(&split.test),
    })
}

/// A fitted model of any method, for checkpointing by `decode`.
pub enum FittedModel {
    Rlda(Box<RldaModel>),
    Fbcsp(Box<ecog_core::fbcsp::CspModel>),
    Convnet(Box<ConvNetModel>),
}

impl FittedModel {
    pub fn to_json(&self) -> String {
        match self {
            FittedModel::Rlda(m) => serde_json::to_string(m).expect("model serializes"),
            FittedModel::Fbcsp(m) => serde_json::to_string(m).expect("model serializes"),
            FittedModel::Convnet(m) => m.to_json(),
        }
    }

    /// Convnet training log as CSV, when applicable.
    pub fn training_log_csv(&self) -> Option<String> {
        match self {
            FittedModel::Convnet(m) => Some(m.log_csv()),
            _ => None,
        }
    }
}

/// Fit one method on a prepared day and evaluate it on the held-out test
/// trials (bad test trials included).
pub fn decode_day(
    day: &PreparedDay,
    method: Method,
    config: &ExperimentConfig,
) -> Result<(ConfusionReport, FittedModel), RunError> {
    let n_classes = config.classes;
    let actual: Vec<u8> = day.test.iter().map(|t| t.label).collect();
    let (predicted, model) = match method {
        Method::Rlda => {
            let cfg = RldaFeatureConfig {
                bin_ms: config.rlda.bin_ms,
            };
            let (lambda, _) = rlda::select_lambda(
                &day.train,
                &day.validation,
                n_classes,
                &config.rlda.lambda_grid,
                &cfg,
            )
            .map_err(|e| RunError::numeric(format!("day {} rlda: {e}", day.day_id)))?;
            // classifying model refit on train+validation at the selected lambda
            let mut fit_set = day.train.clone();
            fit_set.extend(day.validation.iter().cloned());
            let model = RldaModel::fit(&fit_set, n_classes, lambda, &cfg)
                .map_err(|e| RunError::numeric(format!("day {} rlda: {e}", day.day_id)))?;
            let mut predicted = Vec::with_capacity(day.test.len());
            for t in &day.test {
                predicted.push(
                    model
                        .predict(t)
                        .map_err(|e| RunError::numeric(format!("day {} rlda: {e}", day.day_id)))?
                        .0,
                );
            }
            (predicted, FittedModel::Rlda(Box::new(model)))
        }
        Method::Fbcsp => {
            let model = fit_fbcsp(
                &day.train,
                &day.validation,
                n_classes,
                &config.fbcsp,
                day.fs_hz,
            )
            .map_err(|e| RunError::numeric(format!("day {} fbcsp: {e}", day.day_id)))?;
            let mut predicted = Vec::with_capacity(day.test.len());
            for t in &day.test {
                predicted.push(
                    model
                        .predict(t)
                        .map_err(|e| RunError::numeric(format!("day {} fbcsp: {e}", day.day_id)))?
                        .0,
                );
            }
            (predicted, FittedModel::Fbcsp(Box::new(model)))
        }
        Method::Convnet => {
            let mut train_cfg = config.convnet.clone();
            train_cfg.seed = task_seed(config.seed, day.day_id, method, n_classes);
            let model = fit_convnet(&day.train, &day.validation, n_classes, None, &train_cfg)
                .map_err(|e| RunError::numeric(format!("day {} convnet: {e}", day.day_id)))?;
            let (predicted, _) = model
                .predict(&day.test)
                .map_err(|e| RunError::numeric(format!("day {} convnet: {e}", day.day_id)))?;
            (predicted, FittedModel::Convnet(Box::new(model)))
        }
    };
    let report = confusion_matrix(&actual, &predicted, n_classes)
        .map_err(|e| RunError::numeric(format!("day {}: {e}", day.day_id)))?;
    Ok((report, model))
}

/// Day directories under a dataset root, sorted by name.
pub fn discover_days(dataset: &Path) -> Result<Vec<PathBuf>, RunError> {
    let entries = std::fs::read_dir(dataset)
        .map_err(|e| RunError::data(format!("{}: {e}", dataset.display())))?;
    let mut days: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    days.sort();
    if days.is_empty() {
        return Err(RunError::data(format!(
            "no day directories with manifest.json under {}",
            dataset.display()
        )));
    }
    Ok(days)
}

pub struct RunOutcome {
    pub summary: Summary,
    /// Worst failure among per-day errors, if any.
    pub worst_failure: Option<FailureKind>,
}

/// Run the full experiment: every discovered day, every configured method.
/// Writes per-day confusion CSVs and `summary.json` under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate().map_err(RunError::config)?;
    let scheme = ClassScheme::for_classes(config.classes)
        .map_err(|e| RunError::config(e.to_string()))?;
    let days = discover_days(&config.dataset)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| RunError::data(format!("{}: {e}", config.out.display())))?;

    type DayOutput = (DayInfo, Vec<(Method, ConfusionReport)>, Vec<ErrorEntry>);
    let outputs: Vec<DayOutput> = days
        .par_iter()
        .map(|dir| {
            let prepared = match prepare_day(dir, config, &scheme) {
                Ok(p) => p,
                Err(e) => {
                    // day id unknown when the manifest itself failed to load
                    let day_id = dir
                        .file_name()
                        .and_then(|n| n.to_str())
                        .and_then(|n| n.trim_start_matches("day").parse().ok())
                        .unwrap_or(0);
                    return (
                        DayInfo {
                            day_id,
                            condition: None,
                        },
                        Vec::new(),
                        vec![ErrorEntry {
                            day_id,
                            method: None,
                            kind: e.kind.name().into(),
                            message: e.message,
                        }],
                    );
                }
            };
            let mut reports = Vec::new();
            let mut errors = Vec::new();
            for &method in &config.methods {
                match decode_day(&prepared, method, config) {
                    Ok((report, _)) => reports.push((method, report)),
                    Err(e) => errors.push(ErrorEntry {
                        day_id: prepared.day_id,
                        method: Some(method.name().into()),
                        kind: e.kind.name().into(),
                        message: e.message,
                    }),
                }
            }
            (
                DayInfo {
                    day_id: prepared.day_id,
                    condition: Some(prepared.condition),
                },
                reports,
                errors,
            )
        })
        .collect();

    let mut day_infos = Vec::new();
    let mut errors = Vec::new();
    let mut per_method: BTreeMap<String, Vec<(u32, ConfusionReport)>> = BTreeMap::new();
    for (info, reports, errs) in outputs {
        for (method, report) in reports {
            let csv = confusion_csv(&report);
            let path = config.out.join(confusion_file_name(info.day_id, method));
            std::fs::write(&path, csv)
                .map_err(|e| RunError::data(format!("{}: {e}", path.display())))?;
            per_method
                .entry(method.name().to_string())
                .or_default()
                .push((info.day_id, report));
        }
        day_infos.push(info);
        errors.extend(errs);
    }
    day_infos.sort_by_key(|d| d.day_id);
    errors.sort_by(|a, b| (a.day_id, &a.method).cmp(&(b.day_id, &b.method)));

    let summary = build_summary(
        config.dataset.display().to_string(),
        config.classes,
        config.seed,
        day_infos,
        per_method,
        errors,
    );
    summary
        .write(&config.out.join("summary.json"))
        .map_err(|e| RunError::data(format!("summary.json: {e}")))?;

    let worst_failure = summary
        .errors
        .iter()
        .map(|e| match e.kind.as_str() {
            "numeric" => FailureKind::Numeric,
            _ => FailureKind::Data,
        })
        .max();
    Ok(RunOutcome {
        summary,
        worst_failure,
    })
}

/// Assemble the summary from per-day reports (shared by `run` and `report`).
pub fn build_summary(
    dataset: String,
    classes: u8,
    seed: u64,
    days: Vec<DayInfo>,
    per_method: BTreeMap<String, Vec<(u32, ConfusionReport)>>,
    errors: Vec<ErrorEntry>,
) -> Summary {
    let mut methods_map: BTreeMap<String, MethodDays> = BTreeMap::new();
    let mut results: BTreeMap<String, Vec<DayEntry>> = BTreeMap::new();
    let mut pooled: BTreeMap<String, PooledView> = BTreeMap::new();
    for (name, mut day_reports) in per_method {
        day_reports.sort_by_key(|(d, _)| *d);
        results.insert(
            name.clone(),
            day_reports
                .iter()
                .map(|(day_id, r)| DayEntry {
                    day_id: *day_id,
                    n_test: r.total(),
                    da: r.overall_da(),
                    counts: r.counts.clone(),
                })
                .collect(),
        );
        let refs: Vec<&ConfusionReport> = day_reports.iter().map(|(_, r)| r).collect();
        if let Some(p) = ConfusionReport::pooled(&refs) {
            pooled.insert(name.clone(), PooledView::from_report(&p));
        }
        methods_map.insert(name, MethodDays { days: day_reports });
    }
    let aggregate = aggregate_report(&methods_map);
    Summary {
        dataset,
        classes,
        seed,
        chance_level: 1.0 / classes as f64,
        methods: methods_map.keys().cloned().collect(),
        days,
        results,
        pooled,
        aggregate,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_seeds_differ_across_coordinates() {
        let s = task_seed(42, 1, Method::Rlda, 2);
        assert_ne!(s, task_seed(42, 2, Method::Rlda, 2));
        assert_ne!(s, task_seed(42, 1, Method::Convnet, 2));
        assert_ne!(s, task_seed(42, 1, Method::Rlda, 3));
        assert_ne!(s, task_seed(43, 1, Method::Rlda, 2));
        assert_eq!(s, task_seed(42, 1, Method::Rlda, 2));
    }
}
