//! From-scratch learners: bagged and boosted decision trees for slip
//! detection, feedforward and recurrent networks for severity regression.
//!
//! Every source of randomness (bootstrap draws, feature subsampling,
//! weight init, batch order, dropout masks) is derived from one explicit
//! seed, so retraining with the same inputs reproduces the same model
//! bit for bit.

pub mod adam;
pub mod boost;
pub mod forest;
pub mod gradcheck;
pub mod lstm;
pub mod mlp;
pub mod model_io;
pub mod params;
pub mod tree;

pub use boost::{train_gradient_boosting, BoostModel};
pub use forest::{train_random_forest, ForestModel};
pub use lstm::{train_lstm, windows_from_samples, LstmModel, Window};
pub use mlp::{train_mlp, MlpModel};
pub use model_io::{load_model, save_model, AnyModel, ModelIoError};

use thiserror::Error;

/// Errors from training and inference.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("training needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("training set contains only class {0}; both classes are required")]
    SingleClass(u8),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("bad input shape: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    BadConfig(String),
}

/// Hyperparameters shared by the tree ensembles. `learning_rate` only
/// affects boosting; forests ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    /// Features considered per split; clamped to the feature dimension.
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TreeHyperparams {
    /// Forest defaults: depth 20, 3 features per split, leaves of at
    /// least 5, splits from 10, 40 trees.
    pub fn forest_defaults(seed: u64) -> Self {
        Self {
            max_depth: 20,
            max_features: 3,
            min_samples_leaf: 5,
            min_samples_split: 10,
            n_estimators: 40,
            learning_rate: 0.1,
            seed,
        }
    }

    /// Boosting defaults, literal reading: depth 9, 450 features per
    /// split (clamped to the actual dimension at train time), leaves of
    /// at least 115. Stage count and step size are this library's own
    /// defaults.
    pub fn boost_defaults(seed: u64) -> Self {
        Self {
            max_depth: 9,
            max_features: 450,
            min_samples_leaf: 115,
            min_samples_split: 2,
            n_estimators: 100,
            learning_rate: 0.1,
            seed,
        }
    }

    /// Boosting alternative reading: the 450 taken as the stage count
    /// rather than per-split feature count.
    pub fn boost_many_stages(seed: u64) -> Self {
        Self {
            max_depth: 9,
            max_features: usize::MAX,
            min_samples_leaf: 115,
            min_samples_split: 2,
            n_estimators: 450,
            learning_rate: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.max_depth == 0
            || self.max_features == 0
            || self.min_samples_leaf == 0
            || self.min_samples_split == 0
            || self.n_estimators == 0
        {
            return Err(LearnError::BadConfig(
                "tree hyperparameter counts must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::BadConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Gradient-training configuration for the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.epochs == 0 {
            return Err(LearnError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::BadConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LearnError::BadConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix of training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LearnError> {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LearnError::Shape(format!(
                    "ragged rows: expected width {cols}, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { data, rows: n, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Orders training rows canonically (lexicographic features, then label)
/// so the randomized learners see the same sample order no matter how the
/// caller shuffled the input.
pub(crate) fn canonical_order(rows: &mut Vec<(Vec<f64>, f64)>) {
    rows.sort_unstable_by(|a, b| {
        for (x, y) in a.0.iter().zip(&b.0) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.1.total_cmp(&b.1)
    });
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
