//! Stage-wise boosted trees with logistic loss.
//!
//! Each stage fits a regression tree to the current residuals
//! `y - p` (variance splits), then replaces every leaf value with a
//! Newton step `sum(residual) / sum(p (1 - p))` over the training
//! samples in that leaf. The ensemble's raw score is the initial
//! log-odds plus `learning_rate` times the stage outputs, accumulated in
//! stage order so dropping the last stage shifts the raw score by
//! exactly that stage's contribution.

use super::tree::{Criterion, GrowParams, Tree};
use super::{canonical_order, sigmoid, LearnError, Matrix, TreeHyperparams};
use crate::features::{select_features, DetectionSample, FeatureSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A trained boosted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel {
    pub hp: TreeHyperparams,
    pub feature_set: FeatureSet,
    pub n_features: usize,
    /// Features actually considered per split after clamping
    /// `hp.max_features` to the dimension.
    pub effective_max_features: usize,
    /// Initial raw score: log-odds of the positive class.
    pub base_score: f64,
    trees: Vec<Tree>,
    /// Mean logistic loss after each stage, in training order.
    pub loss_trace: Vec<f64>,
}

impl BoostModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        hp: TreeHyperparams,
        feature_set: FeatureSet,
        n_features: usize,
        effective_max_features: usize,
        base_score: f64,
        trees: Vec<Tree>,
    ) -> Self {
        Self {
            hp,
            feature_set,
            n_features,
            effective_max_features,
            base_score,
            trees,
            loss_trace: Vec::new(),
        }
    }

    /// Raw (pre-logistic) ensemble score.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.n_features {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut raw = self.base_score;
        for t in &self.trees {
            raw += self.hp.learning_rate * t.predict(x);
        }
        Ok(raw)
    }

    /// Returns (label, score) with score the logistic of the raw score;
    /// label is 1 exactly when score >= 0.5.
    pub fn predict_class(&self, x: &[f64]) -> Result<(u8, f64), LearnError> {
        let score = sigmoid(self.predict_raw(x)?);
        Ok((u8::from(score >= 0.5), score))
    }

    /// Copy of the model without its final stage; tests use it to verify
    /// the stage-accumulation contract.
    pub fn without_last_stage(&self) -> Option<Self> {
        if self.trees.is_empty() {
            return None;
        }
        let mut m = self.clone();
        m.trees.pop();
        m.loss_trace.pop();
        Some(m)
    }
}

/// Trains a boosted ensemble on labeled detection ticks.
pub fn train_gradient_boosting(
    samples: &[DetectionSample],
    feature_set: FeatureSet,
    hp: &TreeHyperparams,
) -> Result<BoostModel, LearnError> {
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
    let effective_max_features = hp.max_features.min(x.cols());
    let grow = GrowParams {
        max_depth: hp.max_depth,
        max_features: effective_max_features,
        min_samples_leaf: hp.min_samples_leaf,
        min_samples_split: hp.min_samples_split,
    };

    let p_mean = y.iter().sum::<f64>() / n as f64;
    let base_score = (p_mean / (1.0 - p_mean)).ln();

    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let mut loss_trace = Vec::with_capacity(hp.n_estimators);
    let mut residual = vec![0.0; n];
    let mut idx: Vec<u32> = Vec::with_capacity(n);

    for stage in 0..hp.n_estimators {
        let p: Vec<f64> = raw.iter().map(|&r| sigmoid(r)).collect();
        for i in 0..n {
            residual[i] = y[i] - p[i];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(stage as u64 + 1);
        idx.clear();
        idx.extend(0..n as u32);
        let mut tree = super::tree::grow_tree(&x, &residual, &mut idx, &grow, Criterion::Variance, &mut rng);

        // Newton leaf values over the training samples in each leaf.
        let mut num = vec![0.0; tree.nodes().len()];
        let mut den = vec![0.0; tree.nodes().len()];
        let mut leaf_of = vec![0usize; n];
        for i in 0..n {
            let leaf = tree.apply(x.row(i));
            leaf_of[i] = leaf;
            num[leaf] += residual[i];
            den[leaf] += p[i] * (1.0 - p[i]);
        }
        for leaf in 0..tree.nodes().len() {
            if matches!(tree.nodes()[leaf], super::tree::Node::Leaf { .. }) {
                tree.set_leaf_value(leaf, num[leaf] / den[leaf].max(1e-12));
            }
        }

        for i in 0..n {
            if let super::tree::Node::Leaf { value, .. } = tree.nodes()[leaf_of[i]] {
                raw[i] += hp.learning_rate * value;
            }
        }
        trees.push(tree);

        let loss = y
            .iter()
            .zip(&raw)
            .map(|(&yi, &ri)| {
                // log(1 + exp(-margin)) with margin = (2y - 1) r, stably.
                let margin = (2.0 * yi - 1.0) * ri;
                if margin > 0.0 {
                    (-margin).exp().ln_1p()
                } else {
                    -margin + margin.exp().ln_1p()
                }
            })
            .sum::<f64>()
            / n as f64;
        if !loss.is_finite() {
            return Err(LearnError::Diverged { epoch: stage, loss });
        }
        loss_trace.push(loss);
    }

    Ok(BoostModel {
        hp: *hp,
        feature_set,
        n_features: x.cols(),
        effective_max_features,
        base_score,
        trees,
        loss_trace,
    })
}
