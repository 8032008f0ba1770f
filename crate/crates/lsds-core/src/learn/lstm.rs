//! Recurrent severity regressor.
//!
//! Three stacked recurrent layers of 30 units consume a 5-step window of
//! feature vectors; a linear head reads the final hidden state of the top
//! layer. Dropout (0.2) acts on the hidden streams between layers during
//! training, with an independent mask per timestep. Gate biases start at
//! zero, so an all-zero window through an untrained model yields exactly
//! the head bias.

use super::adam::Adam;
use super::params::ParamLayout;
use super::{sigmoid, LearnError, TrainConfig};
use crate::features::{select_features, FeatureSet, SeveritySample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LSTM_LAYERS: usize = 3;
pub const LSTM_HIDDEN: usize = 30;
pub const LSTM_SEQ_LEN: usize = 5;
pub const LSTM_DROPOUT: f64 = 0.2;

/// One training example: `seq_len` consecutive feature vectors and the
/// slip speed at the window's final tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub steps: Vec<Vec<f64>>,
    pub target: f64,
}

/// Builds length-`seq_len` windows from stream-ordered severity ticks.
///
/// Ticks are grouped into contiguous runs of one (object, sequence)
/// recording; windows never straddle two recordings. `stride` controls
/// the offset between window starts within a run.
pub fn windows_from_samples(
    samples: &[SeveritySample],
    feature_set: FeatureSet,
    seq_len: usize,
    stride: usize,
) -> Vec<Window> {
    assert!(stride >= 1);
    let mut out = Vec::new();
    let mut run_start = 0;
    for i in 0..=samples.len() {
        let run_ends = i == samples.len()
            || samples[i].object_id != samples[run_start].object_id
            || samples[i].sequence_id != samples[run_start].sequence_id;
        if !run_ends {
            continue;
        }
        let run = &samples[run_start..i];
        if run.len() >= seq_len {
            let mut s = 0;
            while s + seq_len <= run.len() {
                let steps = run[s..s + seq_len]
                    .iter()
                    .map(|t| select_features(&t.features, feature_set))
                    .collect();
                out.push(Window {
                    steps,
                    target: run[s + seq_len - 1].v_slip,
                });
                s += stride;
            }
        }
        run_start = i;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub feature_set: FeatureSet,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seq_len: usize,
    pub dropout: f64,
    pub final_train_loss: Option<f64>,
    params: Vec<f64>,
    layout: ParamLayout,
}

/// Frozen dropout masks: `masks[window][boundary][t][unit]`, boundaries
/// are the gaps below each non-bottom layer.
#[derive(Debug, Clone)]
pub struct LstmDropoutPlan {
    masks: Vec<Vec<Vec<Vec<f64>>>>,
}

impl LstmDropoutPlan {
    pub fn draw(
        batch: usize,
        layers: usize,
        seq_len: usize,
        hidden: usize,
        p: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let keep = 1.0 - p;
        let masks = (0..batch)
            .map(|_| {
                (0..layers - 1)
                    .map(|_| {
                        (0..seq_len)
                            .map(|_| {
                                (0..hidden)
                                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { masks }
    }
}

pub(crate) fn layout_for(input_dim: usize, hidden: usize, layers: usize) -> ParamLayout {
    let mut l = ParamLayout::new();
    for layer in 0..layers {
        let in_dim = if layer == 0 { input_dim } else { hidden };
        l.push(format!("w_ih_l{layer}"), &[4 * hidden, in_dim]);
        l.push(format!("w_hh_l{layer}"), &[4 * hidden, hidden]);
        l.push(format!("b_l{layer}"), &[4 * hidden]);
    }
    l.push("w_head", &[1, hidden]);
    l.push("b_head", &[1]);
    l
}

/// Per-(layer, timestep) forward records.
#[derive(Clone)]
struct StepTrace {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmModel {
    /// Fresh model: weights uniform `±1/sqrt(hidden)`, all biases zero.
    pub fn new(feature_set: FeatureSet, seed: u64) -> Self {
        let input_dim = feature_set.dim();
        let layout = layout_for(input_dim, LSTM_HIDDEN, LSTM_LAYERS);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (LSTM_HIDDEN as f64).sqrt();
        for layer in 0..LSTM_LAYERS {
            for name in [format!("w_ih_l{layer}"), format!("w_hh_l{layer}")] {
                for idx in layout.range_of(&name).unwrap() {
                    params[idx] = rng.gen_range(-bound..bound);
                }
            }
        }
        for idx in layout.range_of("w_head").unwrap() {
            params[idx] = rng.gen_range(-bound..bound);
        }

        Self {
            feature_set,
            input_dim,
            hidden: LSTM_HIDDEN,
            layers: LSTM_LAYERS,
            seq_len: LSTM_SEQ_LEN,
            dropout: LSTM_DROPOUT,
            final_train_loss: None,
            params,
            layout,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        feature_set: FeatureSet,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        seq_len: usize,
        dropout: f64,
        final_train_loss: Option<f64>,
        params: Vec<f64>,
    ) -> Result<Self, LearnError> {
        let layout = layout_for(input_dim, hidden, layers);
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
            layers,
            seq_len,
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

    fn check_window(&self, steps: &[Vec<f64>]) -> Result<(), LearnError> {
        if steps.len() != self.seq_len {
            return Err(LearnError::Shape(format!(
                "window must hold {} steps, got {}",
                self.seq_len,
                steps.len()
            )));
        }
        for s in steps {
            if s.len() != self.input_dim {
                return Err(LearnError::DimensionMismatch {
                    expected: self.input_dim,
                    got: s.len(),
                });
            }
        }
        Ok(())
    }

    /// Runs one window; masks, when present, are indexed
    /// `[boundary][t][unit]`. Returns the trace of every layer and step.
    fn forward_window(
        &self,
        steps: &[Vec<f64>],
        masks: Option<&Vec<Vec<Vec<f64>>>>,
    ) -> (Vec<Vec<StepTrace>>, f64) {
        let h = self.hidden;
        let t_len = steps.len();
        let mut traces: Vec<Vec<StepTrace>> = Vec::with_capacity(self.layers);
        let mut layer_input: Vec<Vec<f64>> = steps.to_vec();

        for layer in 0..self.layers {
            let w_ih = self.slice(&format!("w_ih_l{layer}"));
            let w_hh = self.slice(&format!("w_hh_l{layer}"));
            let b = self.slice(&format!("b_l{layer}"));
            let in_dim = if layer == 0 { self.input_dim } else { h };

            let mut h_state = vec![0.0; h];
            let mut c_state = vec![0.0; h];
            let mut layer_trace = Vec::with_capacity(t_len);
            let mut next_input = Vec::with_capacity(t_len);

            for (t, input) in layer_input.iter().enumerate() {
                let mut a = vec![0.0; 4 * h];
                for r in 0..4 * h {
                    let wi = &w_ih[r * in_dim..(r + 1) * in_dim];
                    let wh = &w_hh[r * h..(r + 1) * h];
                    a[r] = b[r]
                        + wi.iter().zip(input).map(|(w, v)| w * v).sum::<f64>()
                        + wh.iter().zip(&h_state).map(|(w, v)| w * v).sum::<f64>();
                }
                let mut gi = vec![0.0; h];
                let mut gf = vec![0.0; h];
                let mut gg = vec![0.0; h];
                let mut go = vec![0.0; h];
                for u in 0..h {
                    gi[u] = sigmoid(a[u]);
                    gf[u] = sigmoid(a[h + u]);
                    gg[u] = a[2 * h + u].tanh();
                    go[u] = sigmoid(a[3 * h + u]);
                }
                let c_prev = c_state.clone();
                let h_prev = h_state.clone();
                for u in 0..h {
                    c_state[u] = gf[u] * c_prev[u] + gi[u] * gg[u];
                }
                let tanh_c: Vec<f64> = c_state.iter().map(|v| v.tanh()).collect();
                for u in 0..h {
                    h_state[u] = go[u] * tanh_c[u];
                }

                let mut out = h_state.clone();
                if layer + 1 < self.layers {
                    if let Some(m) = masks {
                        for u in 0..h {
                            out[u] *= m[layer][t][u];
                        }
                    }
                }
                next_input.push(out);
                layer_trace.push(StepTrace {
                    input: input.clone(),
                    h_prev,
                    c_prev,
                    i: gi.clone(),
                    f: gf.clone(),
                    g: gg.clone(),
                    o: go.clone(),
                    tanh_c,
                    h: h_state.clone(),
                });
            }
            traces.push(layer_trace);
            layer_input = next_input;
        }

        let w_head = self.slice("w_head");
        let b_head = self.slice("b_head");
        let top_h = &traces[self.layers - 1][t_len - 1].h;
        let y = b_head[0] + w_head.iter().zip(top_h).map(|(w, v)| w * v).sum::<f64>();
        (traces, y)
    }

    /// Inference on a full window: raw (unclamped) output, no dropout.
    pub fn forward_eval(&self, steps: &[Vec<f64>]) -> Result<f64, LearnError> {
        self.check_window(steps)?;
        Ok(self.forward_window(steps, None).1)
    }

    /// Severity estimate for a window, clamped to zero from below.
    pub fn predict_severity(&self, steps: &[Vec<f64>]) -> Result<f64, LearnError> {
        Ok(self.forward_eval(steps)?.max(0.0))
    }

    /// Batch mean squared error with optional frozen dropout.
    pub fn loss_only(&self, windows: &[Window], plan: Option<&LstmDropoutPlan>) -> f64 {
        let b = windows.len();
        let mut loss = 0.0;
        for (k, w) in windows.iter().enumerate() {
            let masks = plan.map(|p| &p.masks[k]);
            let (_, y) = self.forward_window(&w.steps, masks);
            let e = y - w.target;
            loss += e * e;
        }
        loss / b as f64
    }

    /// Batch loss and analytic gradients via backpropagation through time.
    pub fn loss_and_grads(
        &self,
        windows: &[Window],
        plan: Option<&LstmDropoutPlan>,
    ) -> (f64, Vec<f64>) {
        let b = windows.len();
        let h = self.hidden;
        let mut grads = vec![0.0; self.layout.total()];
        let mut loss = 0.0;

        let r_head_w = self.layout.range_of("w_head").unwrap();
        let r_head_b = self.layout.range_of("b_head").unwrap();

        for (k, window) in windows.iter().enumerate() {
            let masks = plan.map(|p| &p.masks[k]);
            let (traces, y) = self.forward_window(&window.steps, masks);
            let t_len = window.steps.len();
            let err = y - window.target;
            loss += err * err;
            let dy = 2.0 * err / b as f64;

            let w_head = self.slice("w_head");
            let top_h = &traces[self.layers - 1][t_len - 1].h;
            for u in 0..h {
                grads[r_head_w.start + u] += dy * top_h[u];
            }
            grads[r_head_b.start] += dy;

            // dh_pending[layer][t]: gradient flowing into layer's hidden
            // output at step t from the head and from the layer above.
            let mut dh_pending = vec![vec![vec![0.0; h]; t_len]; self.layers];
            for u in 0..h {
                dh_pending[self.layers - 1][t_len - 1][u] = dy * w_head[u];
            }

            for layer in (0..self.layers).rev() {
                let w_ih = self.slice(&format!("w_ih_l{layer}"));
                let w_hh = self.slice(&format!("w_hh_l{layer}"));
                let in_dim = if layer == 0 { self.input_dim } else { h };
                let r_w_ih = self.layout.range_of(&format!("w_ih_l{layer}")).unwrap();
                let r_w_hh = self.layout.range_of(&format!("w_hh_l{layer}")).unwrap();
                let r_b = self.layout.range_of(&format!("b_l{layer}")).unwrap();

                let mut dh_next = vec![0.0; h]; // from step t+1 within this layer
                let mut dc_next = vec![0.0; h];
                for t in (0..t_len).rev() {
                    let tr = &traces[layer][t];
                    let mut dh = dh_pending[layer][t].clone();
                    for u in 0..h {
                        dh[u] += dh_next[u];
                    }
                    let mut da = vec![0.0; 4 * h];
                    let mut dc = vec![0.0; h];
                    for u in 0..h {
                        let do_u = dh[u] * tr.tanh_c[u];
                        dc[u] = dc_next[u] + dh[u] * tr.o[u] * (1.0 - tr.tanh_c[u] * tr.tanh_c[u]);
                        let di = dc[u] * tr.g[u];
                        let df = dc[u] * tr.c_prev[u];
                        let dg = dc[u] * tr.i[u];
                        da[u] = di * tr.i[u] * (1.0 - tr.i[u]);
                        da[h + u] = df * tr.f[u] * (1.0 - tr.f[u]);
                        da[2 * h + u] = dg * (1.0 - tr.g[u] * tr.g[u]);
                        da[3 * h + u] = do_u * tr.o[u] * (1.0 - tr.o[u]);
                    }
                    for u in 0..h {
                        dc_next[u] = dc[u] * tr.f[u];
                    }

                    let mut din = vec![0.0; in_dim];
                    dh_next = vec![0.0; h];
                    for r in 0..4 * h {
                        let dar = da[r];
                        if dar == 0.0 {
                            continue;
                        }
                        let wi = &w_ih[r * in_dim..(r + 1) * in_dim];
                        let wh = &w_hh[r * h..(r + 1) * h];
                        for j in 0..in_dim {
                            grads[r_w_ih.start + r * in_dim + j] += dar * tr.input[j];
                            din[j] += dar * wi[j];
                        }
                        for j in 0..h {
                            grads[r_w_hh.start + r * h + j] += dar * tr.h_prev[j];
                            dh_next[j] += dar * wh[j];
                        }
                        grads[r_b.start + r] += dar;
                    }

                    if layer > 0 {
                        // The layer input was the lower layer's hidden
                        // output, possibly dropout-scaled.
                        match masks {
                            Some(m) => {
                                for u in 0..h {
                                    dh_pending[layer - 1][t][u] += din[u] * m[layer - 1][t][u];
                                }
                            }
                            None => {
                                for u in 0..h {
                                    dh_pending[layer - 1][t][u] += din[u];
                                }
                            }
                        }
                    }
                }
            }
        }
        (loss / b as f64, grads)
    }
}

/// Trains the recurrent regressor on severity windows.
pub fn train_lstm(
    windows: &[Window],
    feature_set: FeatureSet,
    cfg: &TrainConfig,
) -> Result<LstmModel, LearnError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(LearnError::TooFewSamples { min: 1, got: 0 });
    }
    let mut model = LstmModel::new(feature_set, cfg.seed);
    for w in windows {
        model.check_window(&w.steps)?;
    }
    let mut opt = Adam::new(model.layout.total(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Window> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let plan = LstmDropoutPlan::draw(
                batch.len(),
                model.layers,
                model.seq_len,
                model.hidden,
                model.dropout,
                &mut rng,
            );
            let (loss, grads) = model.loss_and_grads(&batch, Some(&plan));
            if !loss.is_finite() {
                return Err(LearnError::Diverged { epoch, loss });
            }
            opt.step(&mut model.params, &grads);
            total += loss * batch.len() as f64;
        }
        epoch_loss = total / windows.len() as f64;
    }
    model.final_train_loss = Some(epoch_loss);
    Ok(model)
}
