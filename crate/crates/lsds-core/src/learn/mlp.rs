//! Feedforward severity regressor.
//!
//! Architecture: input -> 64 -> 32 -> 1, each hidden layer an affine map
//! followed by layer normalization, a rectifier, and dropout (training
//! only). The output layer is linear. Trained with mean squared error
//! against the ground-truth slip speed.

use super::adam::Adam;
use super::params::ParamLayout;
use super::{LearnError, TrainConfig};
use crate::features::{select_features, FeatureSet, SeveritySample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;
pub const MLP_HIDDEN: [usize; 2] = [64, 32];
pub const MLP_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub feature_set: FeatureSet,
    pub input_dim: usize,
    pub hidden: [usize; 2],
    /// Dropout probability applied after each hidden rectifier during
    /// training; inference never drops.
    pub dropout: f64,
    /// Mean training loss of the final epoch, when trained.
    pub final_train_loss: Option<f64>,
    params: Vec<f64>,
    layout: ParamLayout,
}

/// Pre-drawn dropout masks for one batch: `0` or `1/(1-p)` per unit.
/// Freezing a plan makes the loss a deterministic function of the
/// parameters, which the gradient checker relies on.
#[derive(Debug, Clone)]
pub struct MlpDropoutPlan {
    layer1: Vec<Vec<f64>>,
    layer2: Vec<Vec<f64>>,
}

impl MlpDropoutPlan {
    /// Draws masks for a batch. `p` is the drop probability.
    pub fn draw(batch: usize, hidden: [usize; 2], p: f64, rng: &mut ChaCha8Rng) -> Self {
        let keep = 1.0 - p;
        let mut mask = |n: usize| -> Vec<Vec<f64>> {
            (0..batch)
                .map(|_| {
                    (0..n)
                        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
                        .collect()
                })
                .collect()
        };
        Self {
            layer1: mask(hidden[0]),
            layer2: mask(hidden[1]),
        }
    }
}

pub(crate) fn layout_for(input_dim: usize, hidden: [usize; 2]) -> ParamLayout {
    let mut l = ParamLayout::new();
    l.push("w1", &[hidden[0], input_dim]);
    l.push("b1", &[hidden[0]]);
    l.push("ln1_gamma", &[hidden[0]]);
    l.push("ln1_beta", &[hidden[0]]);
    l.push("w2", &[hidden[1], hidden[0]]);
    l.push("b2", &[hidden[1]]);
    l.push("ln2_gamma", &[hidden[1]]);
    l.push("ln2_beta", &[hidden[1]]);
    l.push("w_out", &[1, hidden[1]]);
    l.push("b_out", &[1]);
    l
}

/// Per-sample forward records needed by the backward pass.
struct Trace {
    x: Vec<f64>,
    xhat1: Vec<f64>,
    inv_sigma1: f64,
    n1: Vec<f64>,
    d1: Vec<f64>,
    xhat2: Vec<f64>,
    inv_sigma2: f64,
    n2: Vec<f64>,
    d2: Vec<f64>,
    y: f64,
}

impl MlpModel {
    /// Fresh model with uniform `±1/sqrt(fan_in)` affine init, unit
    /// normalization gains, zero shifts.
    pub fn new(feature_set: FeatureSet, seed: u64) -> Self {
        let input_dim = feature_set.dim();
        let hidden = MLP_HIDDEN;
        let layout = layout_for(input_dim, hidden);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut init_affine = |layout: &ParamLayout, params: &mut [f64], w: &str, b: &str, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in layout.range_of(w).unwrap() {
                params[i] = rng.gen_range(-bound..bound);
            }
            for i in layout.range_of(b).unwrap() {
                params[i] = rng.gen_range(-bound..bound);
            }
        };
        init_affine(&layout, &mut params, "w1", "b1", input_dim);
        init_affine(&layout, &mut params, "w2", "b2", hidden[0]);
        init_affine(&layout, &mut params, "w_out", "b_out", hidden[1]);
        for i in layout.range_of("ln1_gamma").unwrap() {
            params[i] = 1.0;
        }
        for i in layout.range_of("ln2_gamma").unwrap() {
            params[i] = 1.0;
        }

        Self {
            feature_set,
            input_dim,
            hidden,
            dropout: MLP_DROPOUT,
            final_train_loss: None,
            params,
            layout,
        }
    }

    /// Rebuilds a model from serialized parts.
    pub fn from_parts(
        feature_set: FeatureSet,
        input_dim: usize,
        hidden: [usize; 2],
        dropout: f64,
        final_train_loss: Option<f64>,
        params: Vec<f64>,
    ) -> Result<Self, LearnError> {
        let layout = layout_for(input_dim, hidden);
        if params.len() != layout.total() {
            return Err(LearnError::Shape(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            feature_set,
            input_dim,
            hidden,
            dropout,
            final_train_loss,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn slice(&self, name: &str) -> &[f64] {
        &self.params[self.layout.range_of(name).expect("known tensor")]
    }

    fn forward_one(&self, x: &[f64], mask: Option<(&[f64], &[f64])>) -> Trace {
        let [h1, h2] = self.hidden;
        let w1 = self.slice("w1");
        let b1 = self.slice("b1");
        let g1 = self.slice("ln1_gamma");
        let be1 = self.slice("ln1_beta");
        let w2 = self.slice("w2");
        let b2 = self.slice("b2");
        let g2 = self.slice("ln2_gamma");
        let be2 = self.slice("ln2_beta");
        let wo = self.slice("w_out");
        let bo = self.slice("b_out");

        let mut z1 = vec![0.0; h1];
        for i in 0..h1 {
            let row = &w1[i * self.input_dim..(i + 1) * self.input_dim];
            z1[i] = b1[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let (xhat1, inv_sigma1) = layer_norm(&z1);
        let mut n1 = vec![0.0; h1];
        for i in 0..h1 {
            n1[i] = g1[i] * xhat1[i] + be1[i];
        }
        let mut d1 = vec![0.0; h1];
        for i in 0..h1 {
            let r = n1[i].max(0.0);
            d1[i] = match mask {
                Some((m1, _)) => r * m1[i],
                None => r,
            };
        }

        let mut z2 = vec![0.0; h2];
        for i in 0..h2 {
            let row = &w2[i * h1..(i + 1) * h1];
            z2[i] = b2[i] + row.iter().zip(&d1).map(|(w, v)| w * v).sum::<f64>();
        }
        let (xhat2, inv_sigma2) = layer_norm(&z2);
        let mut n2 = vec![0.0; h2];
        for i in 0..h2 {
            n2[i] = g2[i] * xhat2[i] + be2[i];
        }
        let mut d2 = vec![0.0; h2];
        for i in 0..h2 {
            let r = n2[i].max(0.0);
            d2[i] = match mask {
                Some((_, m2)) => r * m2[i],
                None => r,
            };
        }

        let y = bo[0] + wo.iter().zip(&d2).map(|(w, v)| w * v).sum::<f64>();
        Trace {
            x: x.to_vec(),
            xhat1,
            inv_sigma1,
            n1,
            d1,
            xhat2,
            inv_sigma2,
            n2,
            d2,
            y,
        }
    }

    /// Inference forward pass: no dropout, raw (unclamped) output.
    pub fn forward_eval(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.input_dim {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(self.forward_one(x, None).y)
    }

    /// Severity estimate: inference output clamped to zero from below,
    /// since the target is a speed.
    pub fn predict_severity(&self, x: &[f64]) -> Result<f64, LearnError> {
        Ok(self.forward_eval(x)?.max(0.0))
    }

    /// Mean squared error over the batch, with optional frozen dropout.
    pub fn loss_only(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
        plan: Option<&MlpDropoutPlan>,
    ) -> f64 {
        let b = xs.len();
        let mut loss = 0.0;
        for k in 0..b {
            let mask = plan.map(|p| (p.layer1[k].as_slice(), p.layer2[k].as_slice()));
            let t = self.forward_one(&xs[k], mask);
            let e = t.y - ys[k];
            loss += e * e;
        }
        loss / b as f64
    }

    /// Batch loss and analytic gradients for every parameter, flat.
    pub fn loss_and_grads(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
        plan: Option<&MlpDropoutPlan>,
    ) -> (f64, Vec<f64>) {
        assert_eq!(xs.len(), ys.len());
        let b = xs.len();
        let [h1, h2] = self.hidden;
        let mut grads = vec![0.0; self.layout.total()];
        let mut loss = 0.0;

        let r_w1 = self.layout.range_of("w1").unwrap();
        let r_b1 = self.layout.range_of("b1").unwrap();
        let r_g1 = self.layout.range_of("ln1_gamma").unwrap();
        let r_be1 = self.layout.range_of("ln1_beta").unwrap();
        let r_w2 = self.layout.range_of("w2").unwrap();
        let r_b2 = self.layout.range_of("b2").unwrap();
        let r_g2 = self.layout.range_of("ln2_gamma").unwrap();
        let r_be2 = self.layout.range_of("ln2_beta").unwrap();
        let r_wo = self.layout.range_of("w_out").unwrap();
        let r_bo = self.layout.range_of("b_out").unwrap();

        for k in 0..b {
            let mask = plan.map(|p| (p.layer1[k].as_slice(), p.layer2[k].as_slice()));
            let t = self.forward_one(&xs[k], mask);
            let err = t.y - ys[k];
            loss += err * err;
            let dy = 2.0 * err / b as f64;

            // Output layer.
            let wo = self.slice("w_out");
            let mut dd2 = vec![0.0; h2];
            for i in 0..h2 {
                grads[r_wo.start + i] += dy * t.d2[i];
                dd2[i] = dy * wo[i];
            }
            grads[r_bo.start] += dy;

            // Undo dropout and rectifier of layer 2.
            let mut dn2 = vec![0.0; h2];
            for i in 0..h2 {
                let dr = match mask {
                    Some((_, m2)) => dd2[i] * m2[i],
                    None => dd2[i],
                };
                dn2[i] = if t.n2[i] > 0.0 { dr } else { 0.0 };
            }
            // Layer norm 2 backward.
            let g2 = self.slice("ln2_gamma");
            let mut gvec = vec![0.0; h2];
            for i in 0..h2 {
                grads[r_g2.start + i] += dn2[i] * t.xhat2[i];
                grads[r_be2.start + i] += dn2[i];
                gvec[i] = dn2[i] * g2[i];
            }
            let dz2 = layer_norm_backward(&gvec, &t.xhat2, t.inv_sigma2);

            // Affine 2.
            let w2 = self.slice("w2");
            let mut dd1 = vec![0.0; h1];
            for i in 0..h2 {
                let row = &w2[i * h1..(i + 1) * h1];
                for j in 0..h1 {
                    grads[r_w2.start + i * h1 + j] += dz2[i] * t.d1[j];
                    dd1[j] += dz2[i] * row[j];
                }
                grads[r_b2.start + i] += dz2[i];
            }

            // Undo dropout and rectifier of layer 1.
            let mut dn1 = vec![0.0; h1];
            for i in 0..h1 {
                let dr = match mask {
                    Some((m1, _)) => dd1[i] * m1[i],
                    None => dd1[i],
                };
                dn1[i] = if t.n1[i] > 0.0 { dr } else { 0.0 };
            }
            // Layer norm 1 backward.
            let g1 = self.slice("ln1_gamma");
            let mut gvec1 = vec![0.0; h1];
            for i in 0..h1 {
                grads[r_g1.start + i] += dn1[i] * t.xhat1[i];
                grads[r_be1.start + i] += dn1[i];
                gvec1[i] = dn1[i] * g1[i];
            }
            let dz1 = layer_norm_backward(&gvec1, &t.xhat1, t.inv_sigma1);

            // Affine 1.
            for i in 0..h1 {
                for j in 0..self.input_dim {
                    grads[r_w1.start + i * self.input_dim + j] += dz1[i] * t.x[j];
                }
                grads[r_b1.start + i] += dz1[i];
            }
        }
        (loss / b as f64, grads)
    }
}

/// Normalizes to zero mean and unit variance; returns (xhat, 1/sigma).
fn layer_norm(z: &[f64]) -> (Vec<f64>, f64) {
    let n = z.len() as f64;
    let mu = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv_sigma = 1.0 / (var + LN_EPS).sqrt();
    (z.iter().map(|v| (v - mu) * inv_sigma).collect(), inv_sigma)
}

/// Gradient through layer normalization. `g` is the upstream gradient
/// already multiplied by gamma.
fn layer_norm_backward(g: &[f64], xhat: &[f64], inv_sigma: f64) -> Vec<f64> {
    let n = g.len() as f64;
    let mean_g = g.iter().sum::<f64>() / n;
    let mean_gx = g.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    g.iter()
        .zip(xhat)
        .map(|(gi, xi)| inv_sigma * (gi - mean_g - xi * mean_gx))
        .collect()
}

/// Trains the regressor on severity ticks with adaptive-moment descent.
pub fn train_mlp(
    samples: &[SeveritySample],
    feature_set: FeatureSet,
    cfg: &TrainConfig,
) -> Result<MlpModel, LearnError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LearnError::TooFewSamples { min: 1, got: 0 });
    }
    let xs: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| select_features(&s.features, feature_set))
        .collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.v_slip).collect();

    let mut model = MlpModel::new(feature_set, cfg.seed);
    let mut opt = Adam::new(model.layout.total(), cfg.learning_rate);
    // Training randomness (batch order, dropout) is a separate stream
    // from the init so architecture changes cannot shift it.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let plan = MlpDropoutPlan::draw(chunk.len(), model.hidden, model.dropout, &mut rng);
            let (loss, grads) = model.loss_and_grads(&bx, &by, Some(&plan));
            if !loss.is_finite() {
                return Err(LearnError::Diverged { epoch, loss });
            }
            opt.step(&mut model.params, &grads);
            total += loss * chunk.len() as f64;
        }
        epoch_loss = total / samples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(LearnError::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
    }
    model.final_train_loss = Some(epoch_loss);
    Ok(model)
}
