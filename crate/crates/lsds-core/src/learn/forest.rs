//! Bagged decision forest for slip/no-slip classification.

use super::tree::{Criterion, GrowParams, Tree};
use super::{canonical_order, LearnError, Matrix, TreeHyperparams};
use crate::features::{select_features, DetectionSample, FeatureSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A trained forest. Prediction is a majority vote over the trees; the
/// score is the fraction of trees voting slip.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub hp: TreeHyperparams,
    pub feature_set: FeatureSet,
    pub n_features: usize,
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn from_parts(
        hp: TreeHyperparams,
        feature_set: FeatureSet,
        n_features: usize,
        trees: Vec<Tree>,
    ) -> Self {
        Self {
            hp,
            feature_set,
            n_features,
            trees,
        }
    }

    /// Votes on an already-selected feature slice.
    ///
    /// Returns (label, score); the label is 1 exactly when score >= 0.5.
    pub fn predict_class(&self, x: &[f64]) -> Result<(u8, f64), LearnError> {
        if x.len() != self.n_features {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let votes = self
            .trees
            .iter()
            .filter(|t| t.predict(x) >= 0.5)
            .count();
        let score = votes as f64 / self.trees.len() as f64;
        Ok((u8::from(score >= 0.5), score))
    }
}

/// Trains a forest on labeled detection ticks, using the columns named
/// by `feature_set`.
///
/// Bootstrap draws and per-node feature subsets for tree `t` come from
/// an independent stream of the seeded generator, so trees can be grown
/// in parallel with a schedule-independent result; sample order is
/// canonicalized first, making training invariant to input permutation.
pub fn train_random_forest(
    samples: &[DetectionSample],
    feature_set: FeatureSet,
    hp: &TreeHyperparams,
) -> Result<ForestModel, LearnError> {
    hp.validate()?;
    if samples.len() < 2 {
        return Err(LearnError::TooFewSamples {
            min: 2,
            got: samples.len(),
        });
    }
    let mut rows: Vec<(Vec<f64>, f64)> = samples
        .iter()
        .map(|s| (select_features(&s.features, feature_set), f64::from(s.label)))
        .collect();
    if rows.iter().all(|r| r.1 == 0.0) {
        return Err(LearnError::SingleClass(0));
    }
    if rows.iter().all(|r| r.1 == 1.0) {
        return Err(LearnError::SingleClass(1));
    }
    canonical_order(&mut rows);
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let feats: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    let x = Matrix::from_rows(&feats)?;
    let n = x.rows();
    let grow = GrowParams {
        max_depth: hp.max_depth,
        max_features: hp.max_features,
        min_samples_leaf: hp.min_samples_leaf,
        min_samples_split: hp.min_samples_split,
    };

    let trees: Vec<Tree> = (0..hp.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            rng.set_stream(t as u64 + 1);
            let mut idx: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
            super::tree::grow_tree(&x, &y, &mut idx, &grow, Criterion::Gini, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        hp: *hp,
        feature_set,
        n_features: x.cols(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use rand::seq::SliceRandom;

    fn sample(vals: [f64; 9], label: u8) -> DetectionSample {
        DetectionSample {
            object_id: "obj".into(),
            scenario: crate::features::Scenario::Static,
            features: FeatureVector::from_combined(0.0, vals),
            label,
        }
    }

    fn blob_corpus(n: usize, seed: u64) -> Vec<DetectionSample> {
        // Two well-separated classes in v_net and div.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let slip = i % 2 == 1;
                let base = if slip { 4.0 } else { 0.5 };
                let mut vals = [0.0; 9];
                for v in &mut vals {
                    *v = base + rng.gen_range(-0.4..0.4);
                }
                sample(vals, u8::from(slip))
            })
            .collect()
    }

    #[test]
    fn separable_pair_trains_perfectly() {
        let samples = vec![
            sample([0.0; 9], 0),
            sample([1.0; 9], 1),
        ];
        let hp = TreeHyperparams {
            max_depth: 1,
            max_features: 9,
            min_samples_leaf: 1,
            min_samples_split: 2,
            n_estimators: 1,
            learning_rate: 0.1,
            // Seed chosen so the two-sample bootstrap draws both points;
            // a draw of one point twice would make the tree constant.
            seed: 1,
        };
        let m = train_random_forest(&samples, FeatureSet::Combined, &hp).unwrap();
        let (l0, s0) = m.predict_class(&[0.0; 9]).unwrap();
        let (l1, s1) = m.predict_class(&[1.0; 9]).unwrap();
        assert_eq!((l0, l1), (0, 1));
        assert_eq!(s0, 0.0);
        assert_eq!(s1, 1.0);
    }

    #[test]
    fn blob_corpus_reaches_high_training_accuracy() {
        let samples = blob_corpus(400, 3);
        let hp = TreeHyperparams::forest_defaults(5);
        let m = train_random_forest(&samples, FeatureSet::Combined, &hp).unwrap();
        let correct = samples
            .iter()
            .filter(|s| {
                let x = select_features(&s.features, FeatureSet::Combined);
                m.predict_class(&x).unwrap().0 == s.label
            })
            .count();
        assert!(correct as f64 / samples.len() as f64 >= 0.99);
    }

    #[test]
    fn retrain_is_bit_identical_and_order_invariant() {
        let samples = blob_corpus(300, 8);
        let hp = TreeHyperparams::forest_defaults(11);
        let a = train_random_forest(&samples, FeatureSet::Combined, &hp).unwrap();
        let b = train_random_forest(&samples, FeatureSet::Combined, &hp).unwrap();
        assert_eq!(a, b);

        let mut shuffled = samples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let c = train_random_forest(&shuffled, FeatureSet::Combined, &hp).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn single_class_is_rejected() {
        let samples: Vec<_> = (0..10).map(|_| sample([1.0; 9], 1)).collect();
        let hp = TreeHyperparams::forest_defaults(0);
        assert!(matches!(
            train_random_forest(&samples, FeatureSet::Combined, &hp),
            Err(LearnError::SingleClass(1))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let samples = blob_corpus(50, 1);
        let hp = TreeHyperparams::forest_defaults(0);
        let m = train_random_forest(&samples, FeatureSet::Baseline, &hp).unwrap();
        assert_eq!(m.n_features, 2);
        assert!(matches!(
            m.predict_class(&[1.0; 9]),
            Err(LearnError::DimensionMismatch { expected: 2, got: 9 })
        ));
    }

    #[test]
    fn score_is_vote_fraction_in_unit_range() {
        let samples = blob_corpus(200, 17);
        let hp = TreeHyperparams {
            n_estimators: 7,
            ..TreeHyperparams::forest_defaults(2)
        };
        let m = train_random_forest(&samples, FeatureSet::Combined, &hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..6.0)).collect();
            let (label, score) = m.predict_class(&x).unwrap();
            assert!((0.0..=1.0).contains(&score));
            let scaled = score * 7.0;
            assert!((scaled - scaled.round()).abs() < 1e-9, "score {score} not a vote fraction");
            assert_eq!(label == 1, score >= 0.5);
        }
    }
}
