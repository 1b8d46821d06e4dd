//! Leave-one-subject-out, cross-dataset and combined-dataset evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CrossMode, PipelineConfig};
use crate::ingest::BinaryLabel;
use crate::models::{self, Matrix, ModelKind};
use crate::seed;
use crate::windows::FeatureSample;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("samples contain a single class")]
    SingleClass,
    #[error("need at least 2 datasets, got {0:?}")]
    TooFewDatasets(Vec<String>),
    #[error("dataset {0} appears on both the training and the test side")]
    OverlappingDatasets(String),
    #[error("every fold failed: {0:?}")]
    AllFoldsFailed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: BinaryLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[true][predicted]`, classes ordered no_stress, stress.
    pub confusion: [[u64; 2]; 2],
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Result<Metrics, EvalError> {
        let n: u64 = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(EvalError::Empty);
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_class: Vec<ClassMetrics> = (0..2)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted = confusion[0][c] + confusion[1][c];
                let actual = confusion[c][0] + confusion[c][1];
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { label: BinaryLabel::from_index(c), precision, recall, f1, support: actual }
            })
            .collect();
        Ok(Metrics {
            confusion,
            n,
            accuracy: ratio(confusion[0][0] + confusion[1][1], n),
            macro_f1: 0.5 * (per_class[0].f1 + per_class[1].f1),
            per_class,
        })
    }
}

pub fn metrics(preds: &[BinaryLabel], labels: &[BinaryLabel]) -> Result<Metrics, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    let mut confusion = [[0u64; 2]; 2];
    for (p, t) in preds.iter().zip(labels) {
        confusion[t.index()][p.index()] += 1;
    }
    Metrics::from_confusion(confusion)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Loso,
    CrossDataset,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One confusion matrix over all predictions.
    Pooled,
    /// Unweighted mean of per-fold accuracy and macro-F1.
    FoldMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregation: Aggregation,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Held-out subject for LOSO folds, `"all"` for a model trained on every subject.
    pub held_out: String,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub model: ModelKind,
    pub train_datasets: Vec<String>,
    pub test_datasets: Vec<String>,
    pub summary: Summary,
    pub pooled: Metrics,
    pub fold_mean: Summary,
    /// Per-dataset breakdown followed by `"all"`; combined runs only.
    pub sections: Vec<Section>,
    pub folds: Vec<FoldReport>,
    pub per_subject: Vec<Section>,
    pub failed_folds: Vec<String>,
    pub config: PipelineConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Samples grouped by dataset-qualified subject id, in sorted order.
fn by_subject(samples: &[FeatureSample]) -> BTreeMap<String, Vec<&FeatureSample>> {
    let mut m: BTreeMap<String, Vec<&FeatureSample>> = BTreeMap::new();
    for s in samples {
        m.entry(s.subject_key()).or_default().push(s);
    }
    m
}

fn dataset_ids(samples: &[FeatureSample]) -> Vec<String> {
    samples.iter().map(|s| s.dataset_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn to_matrix(rows: &[&FeatureSample]) -> (Matrix, Vec<BinaryLabel>) {
    let feats: Vec<&[f64]> = rows.iter().map(|s| &s.features[..]).collect();
    (Matrix::from_rows(&feats), rows.iter().map(|s| s.label).collect())
}

/// Dataset, subject, true label, predicted label.
type ScoredRow = (String, String, BinaryLabel, BinaryLabel);

/// Predictions of one trained fold model on its test rows.
struct FoldOutcome {
    report: FoldReport,
    /// `(subject_key, dataset_id, truth, prediction)` per test row.
    rows: Vec<ScoredRow>,
}

fn run_fold(
    held_out: &str,
    train: &[&FeatureSample],
    test: &[&FeatureSample],
    kind: ModelKind,
    cfg: &PipelineConfig,
) -> FoldOutcome {
    let fold_seed = seed::derive(cfg.seed, &["fold", kind.as_str(), held_out]);
    let (x, y) = to_matrix(train);
    let (xt, yt) = to_matrix(test);
    let result = models::train(kind, &x, &y, cfg, fold_seed).and_then(|m| m.predict(&xt));
    let mut report = FoldReport {
        held_out: held_out.to_string(),
        n_train: train.len(),
        n_test: test.len(),
        metrics: None,
        error: None,
    };
    match result {
        Ok(preds) => {
            let labels: Vec<BinaryLabel> = preds.iter().map(|p| p.label).collect();
            report.metrics = metrics(&labels, &yt).ok();
            let rows = test
                .iter()
                .zip(&labels)
                .map(|(s, p)| (s.subject_key(), s.dataset_id.clone(), s.label, *p))
                .collect();
            FoldOutcome { report, rows }
        }
        Err(e) => {
            report.error = Some(e.to_string());
            FoldOutcome { report, rows: Vec::new() }
        }
    }
}

fn check_classes(samples: &[FeatureSample]) -> Result<(), EvalError> {
    let first = samples.first().ok_or(EvalError::Empty)?.label;
    if samples.iter().all(|s| s.label == first) {
        return Err(EvalError::SingleClass);
    }
    Ok(())
}

fn assemble(
    protocol: Protocol,
    kind: ModelKind,
    train_datasets: Vec<String>,
    test_datasets: Vec<String>,
    outcomes: Vec<FoldOutcome>,
    headline: Aggregation,
    cfg: &PipelineConfig,
) -> Result<EvalReport, EvalError> {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| o.report.error.is_some())
        .map(|o| o.report.held_out.clone())
        .collect();
    let ok: Vec<&FoldOutcome> = outcomes.iter().filter(|o| o.report.error.is_none()).collect();
    if ok.is_empty() {
        return Err(EvalError::AllFoldsFailed(failed));
    }
    let rows: Vec<&ScoredRow> = ok.iter().flat_map(|o| &o.rows).collect();
    let confusion_of = |pick: &dyn Fn(&ScoredRow) -> bool| {
        let mut c = [[0u64; 2]; 2];
        for r in rows.iter().filter(|r| pick(r)) {
            c[r.2.index()][r.3.index()] += 1;
        }
        c
    };
    let pooled = Metrics::from_confusion(confusion_of(&|_| true))?;

    let scored: Vec<&Metrics> = ok.iter().filter_map(|o| o.report.metrics.as_ref()).collect();
    let k = scored.len() as f64;
    let fold_mean = Summary {
        aggregation: Aggregation::FoldMean,
        accuracy: scored.iter().map(|m| m.accuracy).sum::<f64>() / k,
        macro_f1: scored.iter().map(|m| m.macro_f1).sum::<f64>() / k,
    };
    let summary = match headline {
        Aggregation::Pooled => Summary { aggregation: Aggregation::Pooled, accuracy: pooled.accuracy, macro_f1: pooled.macro_f1 },
        Aggregation::FoldMean => fold_mean.clone(),
    };

    let subjects: BTreeSet<&String> = rows.iter().map(|r| &r.0).collect();
    let per_subject = subjects
        .into_iter()
        .filter_map(|s| {
            let m = Metrics::from_confusion(confusion_of(&|r| &r.0 == s)).ok()?;
            Some(Section { name: s.clone(), metrics: m })
        })
        .collect();

    let mut sections = Vec::new();
    if protocol == Protocol::Combined {
        for d in &test_datasets {
            if let Ok(m) = Metrics::from_confusion(confusion_of(&|r| &r.1 == d)) {
                sections.push(Section { name: d.clone(), metrics: m });
            }
        }
        sections.push(Section { name: "all".into(), metrics: pooled.clone() });
    }

    Ok(EvalReport {
        protocol,
        model: kind,
        train_datasets,
        test_datasets,
        summary,
        pooled,
        fold_mean,
        sections,
        folds: outcomes.into_iter().map(|o| o.report).collect(),
        per_subject,
        failed_folds: failed,
        config: cfg.clone(),
    })
}

fn loso_outcomes(samples: &[FeatureSample], kind: ModelKind, cfg: &PipelineConfig) -> Result<Vec<FoldOutcome>, EvalError> {
    let groups = by_subject(samples);
    if groups.len() < 2 {
        return Err(EvalError::TooFewSubjects(groups.len()));
    }
    check_classes(samples)?;
    let keys: Vec<&String> = groups.keys().collect();
    Ok(keys
        .par_iter()
        .map(|&held| {
            let train: Vec<&FeatureSample> = groups.iter().filter(|(k, _)| *k != held).flat_map(|(_, v)| v.iter().copied()).collect();
            run_fold(held, &train, &groups[held], kind, cfg)
        })
        .collect())
}

/// One fold per subject; predictions are pooled before scoring.
pub fn loso(samples: &[FeatureSample], kind: ModelKind, cfg: &PipelineConfig) -> Result<EvalReport, EvalError> {
    let outcomes = loso_outcomes(samples, kind, cfg)?;
    let ids = dataset_ids(samples);
    assemble(Protocol::Loso, kind, ids.clone(), ids, outcomes, Aggregation::Pooled, cfg)
}

/// Models trained on `train` scored on all of `test`.
///
/// In fold-mean mode every LOSO fold model of `train` is scored on `test`
/// and the headline is the mean over those models. In retrain-all mode a
/// single model sees every training subject.
pub fn cross_dataset(
    train: &[FeatureSample],
    test: &[FeatureSample],
    kind: ModelKind,
    cfg: &PipelineConfig,
) -> Result<EvalReport, EvalError> {
    let train_ids = dataset_ids(train);
    let test_ids = dataset_ids(test);
    if let Some(d) = train_ids.iter().find(|d| test_ids.contains(d)) {
        return Err(EvalError::OverlappingDatasets(d.clone()));
    }
    check_classes(train)?;
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let test_rows: Vec<&FeatureSample> = test.iter().collect();
    let outcomes = match cfg.cross_mode {
        CrossMode::FoldMean => {
            let groups = by_subject(train);
            if groups.len() < 2 {
                return Err(EvalError::TooFewSubjects(groups.len()));
            }
            let keys: Vec<&String> = groups.keys().collect();
            keys.par_iter()
                .map(|&held| {
                    let rows: Vec<&FeatureSample> =
                        groups.iter().filter(|(k, _)| *k != held).flat_map(|(_, v)| v.iter().copied()).collect();
                    run_fold(held, &rows, &test_rows, kind, cfg)
                })
                .collect()
        }
        CrossMode::RetrainAll => {
            let rows: Vec<&FeatureSample> = train.iter().collect();
            vec![run_fold("all", &rows, &test_rows, kind, cfg)]
        }
    };
    let headline = match cfg.cross_mode {
        CrossMode::FoldMean => Aggregation::FoldMean,
        CrossMode::RetrainAll => Aggregation::Pooled,
    };
    assemble(Protocol::CrossDataset, kind, train_ids, test_ids, outcomes, headline, cfg)
}

/// LOSO over the union of several datasets, broken down per source dataset.
pub fn combined(samples: &[FeatureSample], kind: ModelKind, cfg: &PipelineConfig) -> Result<EvalReport, EvalError> {
    let ids = dataset_ids(samples);
    if ids.len() < 2 {
        return Err(EvalError::TooFewDatasets(ids));
    }
    let outcomes = loso_outcomes(samples, kind, cfg)?;
    assemble(Protocol::Combined, kind, ids.clone(), ids, outcomes, Aggregation::Pooled, cfg)
}

/// Plain-text table: one row per report with F1 and accuracy, plus a column
/// pair for every section of combined reports.
pub fn render_table(title: &str, reports: &[EvalReport]) -> String {
    let mut cols: Vec<String> = Vec::new();
    for r in reports {
        for s in &r.sections {
            if !cols.contains(&s.name) {
                cols.push(s.name.clone());
            }
        }
    }
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    let mut header = format!("{:<8}", "Model");
    if cols.is_empty() {
        header.push_str(&format!(" | {:>8} | {:>8}", "F1", "Accuracy"));
    } else {
        for c in &cols {
            let head = format!("{c} F1");
            header.push_str(&format!(" | {head:>w$} {:>8}", "Acc", w = head.len().max(8)));
        }
    }
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();
    for r in reports {
        let mut line = format!("{:<8}", r.model.display_name());
        if cols.is_empty() {
            line.push_str(&format!(" | {:>8.3} | {:>8.3}", r.summary.macro_f1, r.summary.accuracy));
        } else {
            for c in &cols {
                let w = (c.len() + 3).max(8);
                match r.sections.iter().find(|s| &s.name == c) {
                    Some(s) => line.push_str(&format!(" | {:>w$.3} {:>8.3}", s.metrics.macro_f1, s.metrics.accuracy)),
                    None => line.push_str(&format!(" | {:>w$} {:>8}", "-", "-")),
                }
            }
        }
        writeln!(out, "{line}").unwrap();
    }
    for r in reports.iter().filter(|r| !r.failed_folds.is_empty()) {
        writeln!(out, "! {} failed folds: {}", r.model.display_name(), r.failed_folds.join(", ")).unwrap();
    }
    out
}
