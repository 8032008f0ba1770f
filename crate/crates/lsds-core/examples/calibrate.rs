//! Scratch calibration harness: quick accuracy/MAE readouts over the
//! synthetic corpora, for tuning simulator gains. Not part of the test
//! suite; run with --release.

use std::time::Instant;

use lsds_core::eval::{classification_metrics, regression_metrics};
use lsds_core::features::{DetectionSample, FeatureSet, SeveritySample};
use lsds_core::learn::lstm::windows_from_samples;
use lsds_core::learn::{
    train_gradient_boosting, train_lstm, train_mlp, train_random_forest, TrainConfig,
    TreeHyperparams,
};
use lsds_core::sim::corpus::{generate_detection_corpus, generate_severity_corpus};
use lsds_core::sim::objects::{training_objects, unseen_objects};

fn acc_forest(train: &[DetectionSample], test: &[DetectionSample], fs: FeatureSet) -> f64 {
    let hp = TreeHyperparams::forest_defaults(7);
    let m = train_random_forest(train, fs, &hp).unwrap();
    let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
    let pred: Vec<u8> = test
        .iter()
        .map(|s| {
            m.predict_class(&lsds_core::features::select_features(&s.features, fs))
                .unwrap()
                .0
        })
        .collect();
    classification_metrics(&truth, &pred).unwrap().accuracy
}

fn acc_boost(train: &[DetectionSample], test: &[DetectionSample], fs: FeatureSet) -> f64 {
    let hp = TreeHyperparams::boost_defaults(7);
    let m = train_gradient_boosting(train, fs, &hp).unwrap();
    let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
    let pred: Vec<u8> = test
        .iter()
        .map(|s| {
            m.predict_class(&lsds_core::features::select_features(&s.features, fs))
                .unwrap()
                .0
        })
        .collect();
    classification_metrics(&truth, &pred).unwrap().accuracy
}

fn main() {
    let t0 = Instant::now();
    let training = training_objects();
    let unseen = unseen_objects();

    let det = generate_detection_corpus(&training, 42);
    println!(
        "[{:.1?}] detection corpus: {} rows, {} positive",
        t0.elapsed(),
        det.len(),
        det.iter().filter(|r| r.label == 1).count()
    );

    // Cheap split: last object held out, rest train (object generalization
    // is the harder axis; fold CV will only look better).
    let holdout = training.last().unwrap().name.clone();
    let train: Vec<DetectionSample> =
        det.iter().filter(|r| r.object_id != holdout).cloned().collect();
    let test: Vec<DetectionSample> =
        det.iter().filter(|r| r.object_id == holdout).cloned().collect();

    for fs in [FeatureSet::Baseline, FeatureSet::Proposed, FeatureSet::Combined] {
        let a = acc_forest(&train, &test, fs);
        println!("[{:.1?}] RF  {fs:?} holdout acc {a:.4}", t0.elapsed());
    }
    let a = acc_boost(&train, &test, FeatureSet::Combined);
    println!("[{:.1?}] GB  Combined holdout acc {a:.4}", t0.elapsed());

    // Unseen objects, trained on all 15.
    let det_unseen = generate_detection_corpus(&unseen, 43);
    let hp = TreeHyperparams::forest_defaults(7);
    let rf = train_random_forest(&det, FeatureSet::Combined, &hp).unwrap();
    for obj in &unseen {
        let rows: Vec<&DetectionSample> = det_unseen
            .iter()
            .filter(|r| r.object_id == obj.name)
            .collect();
        let truth: Vec<u8> = rows.iter().map(|s| s.label).collect();
        let pred: Vec<u8> = rows
            .iter()
            .map(|s| {
                rf.predict_class(&lsds_core::features::select_features(
                    &s.features,
                    FeatureSet::Combined,
                ))
                .unwrap()
                .0
            })
            .collect();
        let m = classification_metrics(&truth, &pred).unwrap();
        println!(
            "[{:.1?}] RF unseen {} acc {:.4} (pos {})",
            t0.elapsed(),
            obj.name,
            m.accuracy,
            truth.iter().filter(|l| **l == 1).count()
        );
    }

    // Severity: hold out object 0, train on the rest.
    let sev = generate_severity_corpus(&training, 42);
    println!(
        "[{:.1?}] severity corpus: {} rows, {} sequences x objects",
        t0.elapsed(),
        sev.len(),
        25
    );
    let hold = training[0].name.clone();
    let sev_train: Vec<SeveritySample> =
        sev.iter().filter(|r| r.object_id != hold).cloned().collect();
    let sev_test: Vec<SeveritySample> =
        sev.iter().filter(|r| r.object_id == hold).cloned().collect();

    let mut mlp_cfg = TrainConfig::new(5);
    mlp_cfg.epochs = 30;
    let mlp = train_mlp(&sev_train, FeatureSet::Proposed, &mlp_cfg).unwrap();
    let truth: Vec<f64> = sev_test.iter().map(|s| s.v_slip).collect();
    let pred: Vec<f64> = sev_test
        .iter()
        .map(|s| {
            mlp.predict_severity(&lsds_core::features::select_features(
                &s.features,
                FeatureSet::Proposed,
            ))
            .unwrap()
        })
        .collect();
    let rm = regression_metrics(&truth, &pred).unwrap();
    println!(
        "[{:.1?}] MLP holdout {hold} MAE {:.3} RMSE {:.3}",
        t0.elapsed(),
        rm.mae,
        rm.rmse
    );

    let train_windows = windows_from_samples(&sev_train, FeatureSet::Proposed, 5, 3);
    let test_windows = windows_from_samples(&sev_test, FeatureSet::Proposed, 5, 1);
    println!(
        "[{:.1?}] windows: train {} test {}",
        t0.elapsed(),
        train_windows.len(),
        test_windows.len()
    );
    let mut lstm_cfg = TrainConfig::new(5);
    lstm_cfg.epochs = 6;
    let lstm = train_lstm(&train_windows, FeatureSet::Proposed, &lstm_cfg).unwrap();
    let truth: Vec<f64> = test_windows.iter().map(|w| w.target).collect();
    let pred: Vec<f64> = test_windows
        .iter()
        .map(|w| lstm.predict_severity(&w.steps).unwrap())
        .collect();
    let rm = regression_metrics(&truth, &pred).unwrap();
    println!(
        "[{:.1?}] LSTM holdout {hold} MAE {:.3} RMSE {:.3}",
        t0.elapsed(),
        rm.mae,
        rm.rmse
    );
}
