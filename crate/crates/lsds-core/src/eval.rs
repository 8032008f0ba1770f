//! Metrics and cross-validation.
//!
//! Classification reports carry the confusion counts plus accuracy,
//! precision, recall, and F1; regression reports carry MAE, RMSE, and
//! R². A metric whose denominator is zero is reported as 0.0 with its
//! `*_undefined` flag set, so cross-validation over degenerate folds
//! keeps running instead of aborting.
//!
//! Split plans are index-based and deterministic under their seed. The
//! stratified plan shuffles each class separately, then deals indices
//! round-robin across folds; the leave-one-object-out plan emits one
//! split per object group in first-appearance order.

use crate::learn::LearnError;
use crate::textio::fmt_f64_data;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("inputs differ in length: {left} vs {right}")]
    MismatchedLengths { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("label at index {index} is {value}, expected 0 or 1")]
    InvalidLabel { index: usize, value: u8 },
    #[error("k must be at least 2, got {k}")]
    BadK { k: usize },
    #[error("class {label} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { label: u8, count: usize, k: usize },
    #[error("need at least 2 non-empty object groups, got {got}")]
    TooFewGroups { got: usize },
    #[error("split `{split}` references index {index}, but there are {len} samples")]
    BadSplit {
        split: String,
        index: usize,
        len: usize,
    },
    #[error("training failed on split `{split}`: {source}")]
    Trainer { split: String, source: LearnError },
    #[error("prediction failed on split `{split}`: {source}")]
    Prediction { split: String, source: LearnError },
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub r2_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Confusion counts and derived metrics for binary labels.
pub fn classification_metrics(
    labels: &[u8],
    predictions: &[u8],
) -> Result<ClassificationReport, EvalError> {
    if labels.len() != predictions.len() {
        return Err(EvalError::MismatchedLengths {
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for (index, &v) in labels.iter().chain(predictions).enumerate() {
        if v > 1 {
            return Err(EvalError::InvalidLabel {
                index: index % labels.len(),
                value: v,
            });
        }
    }
    let mut tp = 0;
    let mut tn = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fp += 1,
            _ => fn_ += 1,
        }
    }
    let (accuracy, _) = ratio(tp + tn, labels.len());
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    Ok(ClassificationReport {
        accuracy,
        precision,
        recall,
        f1,
        true_pos: tp,
        true_neg: tn,
        false_pos: fp,
        false_neg: fn_,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// MAE, RMSE, and R² against ground truth. R² uses the truth mean; a
/// constant truth vector makes it undefined (flagged 0).
pub fn regression_metrics(
    truth: &[f64],
    predictions: &[f64],
) -> Result<RegressionReport, EvalError> {
    if truth.len() != predictions.len() {
        return Err(EvalError::MismatchedLengths {
            left: truth.len(),
            right: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = truth.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (&y, &p) in truth.iter().zip(predictions) {
        let e = p - y;
        abs_sum += e.abs();
        sq_sum += e * e;
    }
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot = truth.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
    let (r2, r2_undefined) = if ss_tot == 0.0 {
        (0.0, true)
    } else {
        (1.0 - sq_sum / ss_tot, false)
    };
    Ok(RegressionReport {
        mae,
        rmse,
        r2,
        r2_undefined,
    })
}

// ----------------------------------------------------------------- splits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    StratifiedKFold,
    LeaveOneObjectOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub splits: Vec<Split>,
    /// Degenerate-input notes (e.g. skipped empty object groups).
    pub warnings: Vec<String>,
}

/// Class-balanced k-fold plan over binary (or small-integer) labels.
///
/// Every present class must hold at least `k` samples. Each class is
/// shuffled under the seed and dealt round-robin, so per-fold class
/// counts deviate from `count/k` by at most one sample.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::BadK { k });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (&label, members) in &by_class {
        if members.len() < k {
            return Err(EvalError::ClassTooSmall {
                label,
                count: members.len(),
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    // The fold cursor runs on across classes so overall fold sizes stay
    // balanced, not just the per-class counts.
    let mut cursor = 0usize;
    for members in by_class.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for idx in shuffled {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }

    let splits = (0..k)
        .map(|f| {
            let mut test = folds[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = (0..k)
                .filter(|&g| g != f)
                .flat_map(|g| folds[g].iter().copied())
                .collect();
            train.sort_unstable();
            Split {
                name: format!("fold{f}"),
                train,
                test,
            }
        })
        .collect();
    Ok(SplitPlan {
        kind: SplitKind::StratifiedKFold,
        seed,
        splits,
        warnings: Vec::new(),
    })
}

/// Groups sample indices by object id in first-appearance order.
pub fn group_by_object<S: AsRef<str>>(object_ids: &[S]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, id) in object_ids.iter().enumerate() {
        let id = id.as_ref().to_string();
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(i);
    }
    order
        .into_iter()
        .map(|id| {
            let members = groups[&id].clone();
            (id, members)
        })
        .collect()
}

/// One split per object: that object's samples are the test set, all
/// other objects train. Empty groups are skipped with a warning.
pub fn leave_one_object_out(groups: &[(String, Vec<usize>)]) -> Result<SplitPlan, EvalError> {
    let mut warnings = Vec::new();
    let kept: Vec<&(String, Vec<usize>)> = groups
        .iter()
        .filter(|(id, members)| {
            if members.is_empty() {
                warnings.push(format!("object `{id}` has no samples; skipped"));
                false
            } else {
                true
            }
        })
        .collect();
    if kept.len() < 2 {
        return Err(EvalError::TooFewGroups { got: kept.len() });
    }
    let splits = kept
        .iter()
        .enumerate()
        .map(|(g, (id, members))| {
            let mut test = members.clone();
            test.sort_unstable();
            let mut train: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|(h, _)| *h != g)
                .flat_map(|(_, (_, m))| m.iter().copied())
                .collect();
            train.sort_unstable();
            Split {
                name: id.clone(),
                train,
                test,
            }
        })
        .collect();
    Ok(SplitPlan {
        kind: SplitKind::LeaveOneObjectOut,
        seed: 0,
        splits,
        warnings,
    })
}

// ----------------------------------------------------------------- run_cv

#[derive(Debug, Clone)]
pub struct SplitReport<R> {
    pub split: String,
    pub report: R,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanClassification {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRegression {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone)]
pub struct CvClassification {
    pub per_split: Vec<SplitReport<ClassificationReport>>,
    /// Unweighted arithmetic mean over splits.
    pub mean: MeanClassification,
}

#[derive(Debug, Clone)]
pub struct CvRegression {
    pub per_split: Vec<SplitReport<RegressionReport>>,
    pub mean: MeanRegression,
}

fn check_plan<S>(plan: &SplitPlan, samples: &[S]) -> Result<(), EvalError> {
    if plan.splits.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for split in &plan.splits {
        for &i in split.train.iter().chain(&split.test) {
            if i >= samples.len() {
                return Err(EvalError::BadSplit {
                    split: split.name.clone(),
                    index: i,
                    len: samples.len(),
                });
            }
        }
    }
    Ok(())
}

fn gather<S: Clone>(samples: &[S], idx: &[usize]) -> Vec<S> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Trains and scores one model per split; splits run concurrently.
/// Failures carry the split name. The mean is unweighted.
pub fn run_cv_classification<S, M>(
    samples: &[S],
    plan: &SplitPlan,
    label_of: impl Fn(&S) -> u8 + Sync,
    trainer: impl Fn(&[S]) -> Result<M, LearnError> + Sync,
    predict: impl Fn(&M, &S) -> Result<u8, LearnError> + Sync,
) -> Result<CvClassification, EvalError>
where
    S: Clone + Sync,
    M: Send,
{
    check_plan(plan, samples)?;
    let outcomes: Vec<Result<SplitReport<ClassificationReport>, EvalError>> = plan
        .splits
        .par_iter()
        .map(|split| {
            let train_set = gather(samples, &split.train);
            let model = trainer(&train_set).map_err(|source| EvalError::Trainer {
                split: split.name.clone(),
                source,
            })?;
            let mut labels = Vec::with_capacity(split.test.len());
            let mut preds = Vec::with_capacity(split.test.len());
            for &i in &split.test {
                labels.push(label_of(&samples[i]));
                preds.push(predict(&model, &samples[i]).map_err(|source| {
                    EvalError::Prediction {
                        split: split.name.clone(),
                        source,
                    }
                })?);
            }
            let report = classification_metrics(&labels, &preds)?;
            Ok(SplitReport {
                split: split.name.clone(),
                report,
            })
        })
        .collect();

    let mut per_split = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        per_split.push(outcome?);
    }
    let n = per_split.len() as f64;
    let mean = MeanClassification {
        accuracy: per_split.iter().map(|s| s.report.accuracy).sum::<f64>() / n,
        precision: per_split.iter().map(|s| s.report.precision).sum::<f64>() / n,
        recall: per_split.iter().map(|s| s.report.recall).sum::<f64>() / n,
        f1: per_split.iter().map(|s| s.report.f1).sum::<f64>() / n,
    };
    Ok(CvClassification { per_split, mean })
}

/// Regression analogue of [`run_cv_classification`].
pub fn run_cv_regression<S, M>(
    samples: &[S],
    plan: &SplitPlan,
    truth_of: impl Fn(&S) -> f64 + Sync,
    trainer: impl Fn(&[S]) -> Result<M, LearnError> + Sync,
    predict: impl Fn(&M, &S) -> Result<f64, LearnError> + Sync,
) -> Result<CvRegression, EvalError>
where
    S: Clone + Sync,
    M: Send,
{
    check_plan(plan, samples)?;
    let outcomes: Vec<Result<SplitReport<RegressionReport>, EvalError>> = plan
        .splits
        .par_iter()
        .map(|split| {
            let train_set = gather(samples, &split.train);
            let model = trainer(&train_set).map_err(|source| EvalError::Trainer {
                split: split.name.clone(),
                source,
            })?;
            let mut truth = Vec::with_capacity(split.test.len());
            let mut preds = Vec::with_capacity(split.test.len());
            for &i in &split.test {
                truth.push(truth_of(&samples[i]));
                preds.push(predict(&model, &samples[i]).map_err(|source| {
                    EvalError::Prediction {
                        split: split.name.clone(),
                        source,
                    }
                })?);
            }
            let report = regression_metrics(&truth, &preds)?;
            Ok(SplitReport {
                split: split.name.clone(),
                report,
            })
        })
        .collect();

    let mut per_split = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        per_split.push(outcome?);
    }
    let n = per_split.len() as f64;
    let mean = MeanRegression {
        mae: per_split.iter().map(|s| s.report.mae).sum::<f64>() / n,
        rmse: per_split.iter().map(|s| s.report.rmse).sum::<f64>() / n,
        r2: per_split.iter().map(|s| s.report.r2).sum::<f64>() / n,
    };
    Ok(CvRegression { per_split, mean })
}

// ---------------------------------------------------------------- reports

pub const REPORT_MAGIC: &str = "LSDS-REPORT v1";

/// One exported result row: which model, which feature set, which split.
#[derive(Debug, Clone)]
pub struct ReportRow<R> {
    pub model: String,
    pub feature_set: String,
    pub split: String,
    pub report: R,
}

/// Delimited classification table; one row per (model, feature set,
/// split), plus whatever aggregate rows the caller includes.
pub fn write_classification_table(rows: &[ReportRow<ClassificationReport>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_MAGIC} classification");
    let _ = writeln!(out, "model,feature_set,split,accuracy,precision,recall,f1");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model,
            r.feature_set,
            r.split,
            fmt_f64_data(r.report.accuracy),
            fmt_f64_data(r.report.precision),
            fmt_f64_data(r.report.recall),
            fmt_f64_data(r.report.f1),
        );
    }
    out
}

pub fn write_regression_table(rows: &[ReportRow<RegressionReport>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_MAGIC} regression");
    let _ = writeln!(out, "model,feature_set,split,mae,rmse,r2");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model,
            r.feature_set,
            r.split,
            fmt_f64_data(r.report.mae),
            fmt_f64_data(r.report.rmse),
            fmt_f64_data(r.report.r2),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labels_with_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> (Vec<u8>, Vec<u8>) {
        let mut labels = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..tp {
            labels.push(1);
            preds.push(1);
        }
        for _ in 0..tn {
            labels.push(0);
            preds.push(0);
        }
        for _ in 0..fp {
            labels.push(0);
            preds.push(1);
        }
        for _ in 0..fn_ {
            labels.push(1);
            preds.push(0);
        }
        (labels, preds)
    }

    #[test]
    fn confusion_counts_drive_the_metrics() {
        let (labels, preds) = labels_with_counts(50, 40, 5, 5);
        let r = classification_metrics(&labels, &preds).unwrap();
        assert_eq!(
            (r.true_pos, r.true_neg, r.false_pos, r.false_neg),
            (50, 40, 5, 5)
        );
        assert_eq!(r.accuracy, 0.90);
        let expect = 10.0 / 11.0;
        assert!((r.precision - expect).abs() < 1e-12);
        assert!((r.recall - expect).abs() < 1e-12);
        assert!((r.f1 - expect).abs() < 1e-12);
        assert!(!r.precision_undefined && !r.recall_undefined && !r.f1_undefined);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (labels, preds) = labels_with_counts(10, 10, 0, 0);
        let r = classification_metrics(&labels, &preds).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_negative_predictions_flag_precision() {
        let labels = vec![1, 1, 0, 0];
        let preds = vec![0, 0, 0, 0];
        let r = classification_metrics(&labels, &preds).unwrap();
        assert!(r.precision_undefined);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert!(!r.recall_undefined); // denominator tp+fn = 2
        assert!(r.f1_undefined);
    }

    #[test]
    fn bad_metric_inputs_are_rejected() {
        assert!(matches!(
            classification_metrics(&[1, 0], &[1]),
            Err(EvalError::MismatchedLengths { .. })
        ));
        assert!(matches!(
            classification_metrics(&[], &[]),
            Err(EvalError::EmptyInput)
        ));
        assert!(matches!(
            classification_metrics(&[2, 0], &[1, 0]),
            Err(EvalError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let r = regression_metrics(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.mae, 1.0);
        assert_eq!(r.rmse, 1.0);
        assert_eq!(r.r2, 0.0);
        assert!(!r.r2_undefined);
    }

    #[test]
    fn perfect_fit_has_unit_r2() {
        let y = [0.5, 1.5, 3.0];
        let r = regression_metrics(&y, &y).unwrap();
        assert_eq!((r.mae, r.rmse, r.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn constant_truth_flags_r2() {
        let r = regression_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.r2_undefined);
        assert_eq!(r.r2, 0.0);
    }

    #[test]
    fn regression_matches_summation_oracle() {
        // Independent oracle: accumulate each metric separately from
        // scratch in index order.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth: Vec<f64> = (0..1000).map(|_| rng.gen_range(-3.0..8.0)).collect();
        let preds: Vec<f64> = (0..1000).map(|_| rng.gen_range(-3.0..8.0)).collect();
        let r = regression_metrics(&truth, &preds).unwrap();

        let n = truth.len() as f64;
        let mut mae = 0.0;
        for i in 0..truth.len() {
            mae += (preds[i] - truth[i]).abs() / n;
        }
        let mut mse = 0.0;
        for i in 0..truth.len() {
            mse += (preds[i] - truth[i]).powi(2) / n;
        }
        let mut mean = 0.0;
        for &y in &truth {
            mean += y / n;
        }
        let mut ss_tot = 0.0;
        for &y in &truth {
            ss_tot += (y - mean).powi(2);
        }
        let r2 = 1.0 - (mse * n) / ss_tot;

        assert!((r.mae - mae).abs() < 1e-12);
        assert!((r.rmse - mse.sqrt()).abs() < 1e-12);
        assert!((r.r2 - r2).abs() < 1e-12);
        assert!(r.rmse >= r.mae);
    }

    #[test]
    fn rmse_dominates_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let r = regression_metrics(&truth, &preds).unwrap();
            assert!(r.rmse >= r.mae - 1e-15);
        }
    }

    #[test]
    fn balanced_corpus_splits_evenly() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let plan = stratified_kfold(&labels, 5, 3).unwrap();
        assert_eq!(plan.splits.len(), 5);
        for split in &plan.splits {
            assert_eq!(split.test.len(), 20);
            assert_eq!(split.train.len(), 80);
            let pos = split.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(pos, 10);
        }
    }

    #[test]
    fn folds_partition_the_corpus() {
        let labels: Vec<u8> = (0..73).map(|i| u8::from(i % 3 == 0)).collect();
        let plan = stratified_kfold(&labels, 5, 11).unwrap();
        let mut seen = vec![0u32; labels.len()];
        for split in &plan.splits {
            for &i in &split.test {
                seen[i] += 1;
            }
            // train is exactly the complement of test
            let mut both = split.train.clone();
            both.extend(&split.test);
            both.sort_unstable();
            assert_eq!(both, (0..labels.len()).collect::<Vec<_>>());
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn class_counts_stay_within_one_sample_of_even() {
        let labels: Vec<u8> = (0..97).map(|i| u8::from(i % 7 == 0)).collect();
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let n_neg = labels.len() - n_pos;
        let plan = stratified_kfold(&labels, 5, 42).unwrap();
        for split in &plan.splits {
            let pos = split.test.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let neg = split.test.len() as f64 - pos;
            assert!((pos - n_pos as f64 / 5.0).abs() <= 1.0);
            assert!((neg - n_neg as f64 / 5.0).abs() <= 1.0);
        }
    }

    #[test]
    fn plans_are_seed_deterministic() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 2) as u8).collect();
        assert_eq!(
            stratified_kfold(&labels, 5, 9).unwrap(),
            stratified_kfold(&labels, 5, 9).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 5, 9).unwrap().splits,
            stratified_kfold(&labels, 5, 10).unwrap().splits
        );
    }

    #[test]
    fn small_class_is_rejected() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        match stratified_kfold(&labels, 5, 0) {
            Err(EvalError::ClassTooSmall { label: 1, count: 2, k: 5 }) => {}
            other => panic!("expected ClassTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn loocv_builds_one_split_per_object() {
        let ids: Vec<String> = (0..15)
            .flat_map(|o| std::iter::repeat_n(format!("obj{o:02}"), 4))
            .collect();
        let groups = group_by_object(&ids);
        let plan = leave_one_object_out(&groups).unwrap();
        assert_eq!(plan.splits.len(), 15);
        let mut seen = vec![0u32; ids.len()];
        for split in &plan.splits {
            for &i in &split.test {
                assert_eq!(ids[i], split.name);
                seen[i] += 1;
            }
            assert_eq!(split.test.len(), 4);
            assert_eq!(split.train.len(), 56);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn empty_group_is_skipped_with_warning() {
        let groups = vec![
            ("a".to_string(), vec![0, 1]),
            ("ghost".to_string(), vec![]),
            ("b".to_string(), vec![2, 3]),
        ];
        let plan = leave_one_object_out(&groups).unwrap();
        assert_eq!(plan.splits.len(), 2);
        assert_eq!(plan.warnings.len(), 1);
        assert!(plan.warnings[0].contains("ghost"));
    }

    #[test]
    fn single_object_cannot_be_held_out() {
        let groups = vec![("only".to_string(), vec![0, 1, 2])];
        assert!(matches!(
            leave_one_object_out(&groups),
            Err(EvalError::TooFewGroups { got: 1 })
        ));
    }

    // Tiny stand-in "samples" for CV plumbing tests: (x, label). The
    // classes are separated by a wide gap so any train-derived midpoint
    // threshold classifies every held-out point correctly.
    fn threshold_corpus(n: usize) -> Vec<(f64, u8)> {
        (0..n)
            .map(|i| {
                let label = u8::from(i >= n / 2);
                let x = i as f64 + f64::from(label) * 10.0;
                (x, label)
            })
            .collect()
    }

    #[test]
    fn separable_corpus_scores_perfectly() {
        let corpus = threshold_corpus(100);
        let labels: Vec<u8> = corpus.iter().map(|s| s.1).collect();
        let plan = stratified_kfold(&labels, 5, 1).unwrap();
        let cv = run_cv_classification(
            &corpus,
            &plan,
            |s| s.1,
            |train| {
                let max_neg = train
                    .iter()
                    .filter(|s| s.1 == 0)
                    .map(|s| s.0)
                    .fold(f64::NEG_INFINITY, f64::max);
                let min_pos = train
                    .iter()
                    .filter(|s| s.1 == 1)
                    .map(|s| s.0)
                    .fold(f64::INFINITY, f64::min);
                Ok(max_neg.midpoint(min_pos))
            },
            |t, s| Ok(u8::from(s.0 >= *t)),
        )
        .unwrap();
        assert_eq!(cv.mean.accuracy, 1.0);
        assert_eq!(cv.per_split.len(), 5);
    }

    #[test]
    fn mean_is_the_arithmetic_mean_of_splits() {
        let corpus = threshold_corpus(60);
        let labels: Vec<u8> = corpus.iter().map(|s| s.1).collect();
        let plan = stratified_kfold(&labels, 5, 2).unwrap();
        // A fixed 0.7 threshold misclassifies some positives, making the
        // per-split metrics non-trivial.
        let cv = run_cv_classification(
            &corpus,
            &plan,
            |s| s.1,
            |_| Ok(0.7f64),
            |t, s| Ok(u8::from(s.0 >= *t)),
        )
        .unwrap();
        let by_hand: f64 = cv.per_split.iter().map(|s| s.report.accuracy).sum::<f64>() / 5.0;
        assert!((cv.mean.accuracy - by_hand).abs() < 1e-12);
    }

    #[test]
    fn trainer_failure_names_the_split() {
        let corpus = threshold_corpus(50);
        let labels: Vec<u8> = corpus.iter().map(|s| s.1).collect();
        let plan = stratified_kfold(&labels, 5, 3).unwrap();
        let err = run_cv_classification(
            &corpus,
            &plan,
            |s| s.1,
            |_| -> Result<f64, LearnError> {
                Err(LearnError::BadConfig("boom".into()))
            },
            |_, _| Ok(0),
        )
        .unwrap_err();
        match err {
            EvalError::Trainer { split, .. } => assert!(split.starts_with("fold")),
            other => panic!("expected Trainer error, got {other:?}"),
        }
    }

    #[test]
    fn regression_cv_means_agree_with_splits() {
        // Samples: (object, x, y) with y = 2x; constant-0 model.
        let samples: Vec<(String, f64, f64)> = (0..12)
            .map(|i| (format!("o{}", i % 3), i as f64, 2.0 * i as f64))
            .collect();
        let ids: Vec<&str> = samples.iter().map(|s| s.0.as_str()).collect();
        let plan = leave_one_object_out(&group_by_object(&ids)).unwrap();
        let cv = run_cv_regression(
            &samples,
            &plan,
            |s| s.2,
            |_| Ok(()),
            |_, _| Ok(0.0),
        )
        .unwrap();
        assert_eq!(cv.per_split.len(), 3);
        let mean_mae: f64 = cv.per_split.iter().map(|s| s.report.mae).sum::<f64>() / 3.0;
        assert!((cv.mean.mae - mean_mae).abs() < 1e-12);
        assert!(cv.mean.rmse >= cv.mean.mae);
    }

    #[test]
    fn out_of_range_split_is_reported() {
        let samples = threshold_corpus(10);
        let plan = SplitPlan {
            kind: SplitKind::LeaveOneObjectOut,
            seed: 0,
            splits: vec![Split {
                name: "bad".into(),
                train: vec![0, 1, 99],
                test: vec![2],
            }],
            warnings: Vec::new(),
        };
        let err =
            run_cv_classification(&samples, &plan, |s| s.1, |_| Ok(()), |_, _| Ok(0)).unwrap_err();
        assert!(matches!(err, EvalError::BadSplit { index: 99, .. }));
    }

    #[test]
    fn tables_have_one_line_per_row() {
        let report = ClassificationReport {
            accuracy: 0.9,
            precision: 0.8,
            recall: 0.7,
            f1: 0.746,
            true_pos: 1,
            true_neg: 1,
            false_pos: 1,
            false_neg: 1,
            precision_undefined: false,
            recall_undefined: false,
            f1_undefined: false,
        };
        let rows = vec![ReportRow {
            model: "rf".into(),
            feature_set: "combined".into(),
            split: "mean".into(),
            report,
        }];
        let text = write_classification_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with(REPORT_MAGIC));
        assert_eq!(lines[2].split(',').count(), 7);
        assert!(lines[2].starts_with("rf,combined,mean,"));
    }
}
