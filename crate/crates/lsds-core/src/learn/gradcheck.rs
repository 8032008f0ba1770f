//! Finite-difference verification of analytic gradients.
//!
//! Central differences with a per-parameter step `1e-6 * max(1, |theta|)`
//! are compared against backprop output. The relative error uses an
//! absolute floor of 1e-5 so near-zero gradient pairs do not blow up the
//! ratio. Dropout must be frozen (a fixed mask plan) for the comparison
//! to be meaningful; both loss evaluations below take the same plan.

use super::lstm::{LstmDropoutPlan, LstmModel, Window};
use super::mlp::{MlpDropoutPlan, MlpModel};
use super::params::ParamLayout;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index (within the tensor) of the worst element.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub per_tensor: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference gradient of `loss` at `params`, one parameter at a
/// time. `loss` must be deterministic in its argument. The step is the
/// cube root of machine epsilon (the optimum for central differences,
/// balancing truncation against roundoff), scaled by parameter size.
pub fn numeric_gradient(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let step = f64::EPSILON.cbrt();
    let mut work = params.to_vec();
    let mut out = vec![0.0; params.len()];
    for i in 0..params.len() {
        let theta = params[i];
        let h = step * theta.abs().max(1.0);
        work[i] = theta + h;
        let up = loss(&work);
        work[i] = theta - h;
        let down = loss(&work);
        work[i] = theta;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Summarizes analytic-vs-numeric agreement tensor by tensor.
pub fn compare_gradients(
    layout: &ParamLayout,
    analytic: &[f64],
    numeric: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), layout.total());
    assert_eq!(numeric.len(), layout.total());

    let mut per_tensor = Vec::with_capacity(layout.entries().len());
    let mut max_rel_err = 0.0;
    let mut worst_tensor = String::new();
    for entry in layout.entries() {
        let range = entry.range();
        let mut check = TensorCheck {
            name: entry.name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for (local, idx) in range.enumerate() {
            let e = rel_err(analytic[idx], numeric[idx]);
            if e > check.max_rel_err {
                check.max_rel_err = e;
                check.worst_index = local;
                check.analytic_at_worst = analytic[idx];
                check.numeric_at_worst = numeric[idx];
            }
        }
        if check.max_rel_err > max_rel_err {
            max_rel_err = check.max_rel_err;
            worst_tensor = check.name.clone();
        }
        per_tensor.push(check);
    }
    GradCheckReport {
        n_params: layout.total(),
        max_rel_err,
        worst_tensor,
        per_tensor,
        tolerance,
    }
}

/// Checks the feedforward regressor's backprop on one batch under a
/// frozen dropout plan.
pub fn check_mlp_gradients(
    model: &MlpModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    plan: Option<&MlpDropoutPlan>,
) -> GradCheckReport {
    let (_, analytic) = model.loss_and_grads(xs, ys, plan);
    let mut probe = model.clone();
    let numeric = numeric_gradient(model.params(), |p| {
        probe.params_mut().copy_from_slice(p);
        probe.loss_only(xs, ys, plan)
    });
    compare_gradients(model.layout(), &analytic, &numeric, GRADCHECK_TOLERANCE)
}

/// Checks backpropagation through time on a window batch under a frozen
/// dropout plan.
pub fn check_lstm_gradients(
    model: &LstmModel,
    windows: &[Window],
    plan: Option<&LstmDropoutPlan>,
) -> GradCheckReport {
    let (_, analytic) = model.loss_and_grads(windows, plan);
    let mut probe = model.clone();
    let numeric = numeric_gradient(model.params(), |p| {
        probe.params_mut().copy_from_slice(p);
        probe.loss_only(windows, plan)
    });
    compare_gradients(model.layout(), &analytic, &numeric, GRADCHECK_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSet;
    use crate::learn::lstm::LSTM_SEQ_LEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        (xs, ys)
    }

    #[test]
    fn numeric_gradient_matches_quadratic() {
        // loss = sum x_i^2 has gradient 2x.
        let params = [0.5, -2.0, 3.0];
        let g = numeric_gradient(&params, |p| p.iter().map(|v| v * v).sum());
        for (gi, pi) in g.iter().zip(params) {
            assert!((gi - 2.0 * pi).abs() < 1e-6);
        }
    }

    #[test]
    fn mlp_backprop_agrees_with_finite_differences() {
        let model = MlpModel::new(FeatureSet::Combined, 11);
        let (xs, ys) = random_batch(10, 9, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let plan = MlpDropoutPlan::draw(xs.len(), [64, 32], 0.1, &mut rng);
        let report = check_mlp_gradients(&model, &xs, &ys, Some(&plan));
        assert!(
            report.passed(),
            "worst {} rel err {:.3e}",
            report.worst_tensor,
            report.max_rel_err
        );
        assert_eq!(report.per_tensor.len(), 10);
    }

    #[test]
    fn mlp_check_flags_a_corrupted_gradient() {
        let model = MlpModel::new(FeatureSet::Combined, 11);
        let (xs, ys) = random_batch(6, 9, 22);
        let (_, mut analytic) = model.loss_and_grads(&xs, &ys, None);
        let idx = model.layout().range_of("w_out").unwrap().start;
        analytic[idx] += 0.5;
        let mut probe = model.clone();
        let numeric = numeric_gradient(model.params(), |p| {
            probe.params_mut().copy_from_slice(p);
            probe.loss_only(&xs, &ys, None)
        });
        let report = compare_gradients(model.layout(), &analytic, &numeric, GRADCHECK_TOLERANCE);
        assert!(!report.passed());
        assert_eq!(report.worst_tensor, "w_out");
    }

    #[test]
    fn lstm_backprop_agrees_with_finite_differences() {
        let model = LstmModel::new(FeatureSet::Combined, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let windows: Vec<Window> = (0..3)
            .map(|_| Window {
                steps: (0..LSTM_SEQ_LEN)
                    .map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
                target: rng.gen_range(0.0..5.0),
            })
            .collect();
        let plan = LstmDropoutPlan::draw(windows.len(), 3, LSTM_SEQ_LEN, 30, 0.2, &mut rng);
        let report = check_lstm_gradients(&model, &windows, Some(&plan));
        assert!(
            report.passed(),
            "worst {} rel err {:.3e}",
            report.worst_tensor,
            report.max_rel_err
        );
        // 3 layers x 3 tensors, plus the head pair.
        assert_eq!(report.per_tensor.len(), 11);
    }
}
