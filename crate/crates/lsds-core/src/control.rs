//! PD grip controller and the closed-loop episode runner.
//!
//! The control law is a per-tick PD step on slip severity with a target
//! of zero: on a slip-flagged tick the position moves by
//! `Kp*e + Kd*(e - e_previous)` and clamps to the gripper range; on a
//! quiet tick nothing moves and no error history is recorded. The
//! runner binds a slip classifier, a severity regressor, and a
//! [`VerticalSlideEnv`] into that loop at 25 Hz, keeping the regressor
//! cold until the classifier fires.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::eval::EvalError;
use crate::features::{
    select_features, ExtractorConfig, FeatureVector, StreamState, FEATURE_NAMES,
};
use crate::field::FieldError;
use crate::dataset::quantize_features;
use crate::learn::{AnyModel, LearnError};
use crate::sim::{P_MAX, VerticalSlideEnv};
use crate::textio::{fmt_f64_data, fmt_f64_exact};

/// Default proportional gain.
pub const DEFAULT_KP: f64 = 3.10;
/// Default derivative gain.
pub const DEFAULT_KD: f64 = 0.42;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("gain {name} must be finite and nonnegative, got {value}")]
    BadGain { name: &'static str, value: f64 },
    #[error("detector must be a classifier, got a {0} model")]
    DetectorKind(&'static str),
    #[error("estimator must be a regressor, got a {0} model")]
    EstimatorKind(&'static str),
    #[error("episode trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Direction a positive adjustment moves the gripper.
///
/// The gripper range runs 0 = open to 225 = closed. `Tighten` adds the
/// adjustment, closing on slip. `Literal` subtracts it, the classic
/// `p - K*e` form of the update, which under this range convention
/// opens on slip; it is kept for side-by-side comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlSign {
    Tighten,
    Literal,
}

impl ControlSign {
    fn factor(self) -> f64 {
        match self {
            ControlSign::Tighten => 1.0,
            ControlSign::Literal => -1.0,
        }
    }
}

impl fmt::Display for ControlSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlSign::Tighten => "tighten",
            ControlSign::Literal => "literal",
        })
    }
}

impl FromStr for ControlSign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tighten" => Ok(ControlSign::Tighten),
            "literal" => Ok(ControlSign::Literal),
            other => Err(format!("unknown sign '{other}' (tighten, literal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    pub sign: ControlSign,
}

impl PdGains {
    pub fn new(kp: f64, kd: f64, sign: ControlSign) -> Result<Self, ControlError> {
        if !kp.is_finite() || kp < 0.0 {
            return Err(ControlError::BadGain {
                name: "kp",
                value: kp,
            });
        }
        if !kd.is_finite() || kd < 0.0 {
            return Err(ControlError::BadGain {
                name: "kd",
                value: kd,
            });
        }
        Ok(Self { kp, kd, sign })
    }
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: DEFAULT_KP,
            kd: DEFAULT_KD,
            sign: ControlSign::Tighten,
        }
    }
}

/// Controller state carried tick to tick.
///
/// `e_previous` is the severity error of the last slip-flagged tick,
/// zero until the first one; quiet ticks leave it untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdState {
    e_previous: f64,
    p_current: f64,
}

impl PdState {
    /// Starts at the given position, clamped to the gripper range.
    pub fn new(p_start: f64) -> Self {
        Self {
            e_previous: 0.0,
            p_current: p_start.clamp(0.0, P_MAX),
        }
    }

    pub fn e_previous(&self) -> f64 {
        self.e_previous
    }

    pub fn p_current(&self) -> f64 {
        self.p_current
    }

    /// Re-bases the position on an encoder readback, keeping the error
    /// history. A rate-limited actuator lags its commands; correcting
    /// from the measured position instead of the last command keeps the
    /// controller from winding up commands the jaws never reached.
    pub fn reseat(self, p_measured: f64) -> Self {
        Self {
            e_previous: self.e_previous,
            p_current: p_measured.clamp(0.0, P_MAX),
        }
    }
}

/// One PD update. Severity must be nonnegative.
///
/// Quiet ticks return the state unchanged; slip ticks take the error
/// `e = severity` against a zero-severity target, form the undivided
/// difference against the previous slip tick's error, and move the
/// position by `Kp*e + Kd*(e - e_previous)` in the sign's direction,
/// clamped to `[0, 225]`. Returns the next state and the new position.
pub fn pd_step(
    state: PdState,
    slip_detected: bool,
    severity: f64,
    gains: &PdGains,
) -> (PdState, f64) {
    if !slip_detected {
        return (state, state.p_current);
    }
    let e = severity;
    let adjustment = gains.kp * e + gains.kd * (e - state.e_previous);
    let p_new = (state.p_current + gains.sign.factor() * adjustment).clamp(0.0, P_MAX);
    (
        PdState {
            e_previous: e,
            p_current: p_new,
        },
        p_new,
    )
}

/// One tick of a closed-loop run.
///
/// `p` is the measured gripper position at the end of the tick. The
/// controller issues commands re-based on it, and the rate-limited
/// jaws realize them over the following ticks.
#[derive(Debug, Clone)]
pub struct EpisodeTick {
    pub timestamp: f64,
    pub features: FeatureVector,
    pub slip_detected: bool,
    /// Estimator output on slip ticks, exactly zero on quiet ticks.
    pub severity_estimate: f64,
    /// Unfiltered slip speed of the contact, cm/s.
    pub v_slip_true: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub ticks: Vec<EpisodeTick>,
    /// How many times the severity regressor actually ran.
    pub estimator_calls: usize,
}

/// File header of an exported trace.
pub const TRACE_MAGIC: &str = "LSDS-TRACE v1";

/// Runs the detect-estimate-adjust loop against a slide environment.
///
/// Per tick: step the environment with the current command, extract
/// features, classify. On a slip flag the regressor scores the feature
/// window and the PD step moves the position; otherwise the position
/// holds, the recorded severity is zero, and the regressor is not
/// invoked. Stops at `max_ticks` or when the object leaves the grasp.
///
/// The detector must be a classifier (`rf`/`gb`) and the estimator a
/// regressor (`mlp`/`lstm`); each consumes its own trained feature
/// set. A sequence model sees the most recent frames, front-filled
/// with the stream's first frame until enough have accumulated.
pub fn run_episode(
    env: &mut VerticalSlideEnv,
    detector: &AnyModel,
    estimator: &AnyModel,
    gains: &PdGains,
    max_ticks: usize,
) -> Result<EpisodeTrace, ControlError> {
    match detector {
        AnyModel::Forest(_) | AnyModel::Boost(_) => {}
        other => return Err(ControlError::DetectorKind(other.kind())),
    }
    let seq_len = match estimator {
        AnyModel::Mlp(_) => 1,
        AnyModel::Lstm(m) => m.seq_len,
        other => return Err(ControlError::EstimatorKind(other.kind())),
    };
    let det_set = detector.feature_set();
    let est_set = estimator.feature_set();
    let dt = env.dt();

    let mut stream = StreamState::new(ExtractorConfig::default())?;
    let mut state = PdState::new(env.p());
    let mut est_history: Vec<Vec<f64>> = Vec::new();
    let mut ticks = Vec::new();
    let mut estimator_calls = 0;

    for _ in 0..max_ticks {
        if env.disengaged() {
            break;
        }
        let rec = env.step(state.p_current());
        let p_measured = env.p();
        let features = quantize_features(&stream.step(&rec.field, &rec.depth, dt)?);
        let slip_detected = match detector {
            AnyModel::Forest(m) => m.predict_class(&select_features(&features, det_set))?.0 == 1,
            AnyModel::Boost(m) => m.predict_class(&select_features(&features, det_set))?.0 == 1,
            _ => unreachable!("validated above"),
        };
        est_history.push(select_features(&features, est_set));

        let severity_estimate = if slip_detected {
            estimator_calls += 1;
            let window = rolling_window(&est_history, seq_len);
            let raw = match estimator {
                AnyModel::Mlp(m) => m.predict_severity(window.last().expect("window nonempty"))?,
                AnyModel::Lstm(m) => m.predict_severity(&window)?,
                _ => unreachable!("validated above"),
            };
            raw.max(0.0)
        } else {
            0.0
        };

        let (next, p) = pd_step(
            state.reseat(env.p()),
            slip_detected,
            severity_estimate,
            gains,
        );
        state = next;
        ticks.push(EpisodeTick {
            timestamp: features.timestamp,
            features,
            slip_detected,
            severity_estimate,
            v_slip_true: rec.contact.v_slip,
            p,
        });
    }

    Ok(EpisodeTrace {
        dt,
        ticks,
        estimator_calls,
    })
}

/// Last `seq_len` rows, front-filled with the earliest row when the
/// history is still short.
fn rolling_window(history: &[Vec<f64>], seq_len: usize) -> Vec<Vec<f64>> {
    let mut window = Vec::with_capacity(seq_len);
    for _ in history.len()..seq_len {
        window.push(history[0].clone());
    }
    let start = history.len().saturating_sub(seq_len);
    window.extend(history[start..].iter().cloned());
    window
}

/// Aggregate outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub total_ticks: usize,
    /// Ticks from episode start until true slip stays at zero; the
    /// trace length when the last tick still slips.
    pub settling_ticks: usize,
    /// Largest unfiltered slip speed seen, cm/s.
    pub peak_true_severity: f64,
    /// Estimate error against the smoothed true severity across the
    /// slip phase, the span from slip onset through the last slipping
    /// tick; zero when nothing ever slipped.
    pub severity_mae: f64,
    pub severity_rmse: f64,
    /// Ticks whose slip flag disagrees with `v_slip_true > 0`.
    pub misclassified_ticks: usize,
}

/// Summarizes a trace. Errors on an empty one.
///
/// The severity reference is the trace's true slip speed passed through
/// the pipeline's smoothing filter on slipping ticks, zero elsewhere:
/// the same filtered quantity severity models train against.
pub fn episode_report(trace: &EpisodeTrace) -> Result<EpisodeReport, ControlError> {
    if trace.ticks.is_empty() {
        return Err(ControlError::EmptyTrace);
    }
    let mut smoother = StreamState::new(ExtractorConfig::default())?;
    let mut truth = Vec::with_capacity(trace.ticks.len());
    for tick in &trace.ticks {
        if tick.v_slip_true > 0.0 {
            truth.push(smoother.smooth_truth(tick.v_slip_true));
        } else {
            truth.push(0.0);
        }
    }

    let settling_ticks = trace
        .ticks
        .iter()
        .rposition(|tick| tick.v_slip_true > 0.0)
        .map_or(0, |i| i + 1);
    let peak_true_severity = trace
        .ticks
        .iter()
        .map(|tick| tick.v_slip_true)
        .fold(0.0, f64::max);
    let misclassified_ticks = trace
        .ticks
        .iter()
        .filter(|tick| tick.slip_detected != (tick.v_slip_true > 0.0))
        .count();

    // The slip phase runs from onset through the last slipping tick;
    // estimates fired outside it count against misclassification, not
    // against the severity error.
    let first_slip = trace.ticks.iter().position(|tick| tick.v_slip_true > 0.0);
    let (severity_mae, severity_rmse) = match first_slip {
        None => (0.0, 0.0),
        Some(first) => {
            let phase_truth = &truth[first..settling_ticks];
            let phase_est: Vec<f64> = trace.ticks[first..settling_ticks]
                .iter()
                .map(|tick| tick.severity_estimate)
                .collect();
            let report = crate::eval::regression_metrics(phase_truth, &phase_est)?;
            (report.mae, report.rmse)
        }
    };

    Ok(EpisodeReport {
        total_ticks: trace.ticks.len(),
        settling_ticks,
        peak_true_severity,
        severity_mae,
        severity_rmse,
        misclassified_ticks,
    })
}

/// Median seconds one full tick of the loop costs: feature extraction,
/// detection, severity estimation, and the PD step, measured back to
/// back over the trace replayed as a fresh stream.
pub fn median_tick_seconds(
    trace: &EpisodeTrace,
    detector: &AnyModel,
    estimator: &AnyModel,
) -> Result<f64, ControlError> {
    let det_set = detector.feature_set();
    let est_set = estimator.feature_set();
    let mut samples = Vec::with_capacity(trace.ticks.len());
    let mut state = PdState::new(P_MAX / 2.0);
    let mut history: Vec<Vec<f64>> = Vec::new();
    for tick in &trace.ticks {
        let start = Instant::now();
        let det_x = select_features(&tick.features, det_set);
        let flag = match detector {
            AnyModel::Forest(m) => m.predict_class(&det_x)?.0 == 1,
            AnyModel::Boost(m) => m.predict_class(&det_x)?.0 == 1,
            other => return Err(ControlError::DetectorKind(other.kind())),
        };
        history.push(select_features(&tick.features, est_set));
        let severity = match estimator {
            AnyModel::Mlp(m) => m.predict_severity(history.last().expect("pushed above"))?,
            AnyModel::Lstm(m) => m.predict_severity(&rolling_window(&history, m.seq_len))?,
            other => return Err(ControlError::EstimatorKind(other.kind())),
        };
        let (next, _) = pd_step(state, flag, severity.max(0.0), &PdGains::default());
        state = next;
        samples.push(start.elapsed().as_secs_f64());
    }
    if samples.is_empty() {
        return Err(ControlError::EmptyTrace);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    Ok(samples[samples.len() / 2])
}

/// Renders a trace as delimited text for external plotting.
pub fn write_trace_string(trace: &EpisodeTrace) -> String {
    let mut out = String::new();
    out.push_str(TRACE_MAGIC);
    out.push('\n');
    out.push_str(&format!("dt {}\n", fmt_f64_exact(trace.dt)));
    out.push_str(&format!("ticks {}\n", trace.ticks.len()));
    out.push_str("columns timestamp ");
    out.push_str(&FEATURE_NAMES.join(" "));
    out.push_str(" slip severity_estimate v_slip_true p\n");
    for tick in &trace.ticks {
        out.push_str(&fmt_f64_data(tick.timestamp));
        for v in tick.features.combined() {
            out.push(',');
            out.push_str(&fmt_f64_data(v));
        }
        out.push(',');
        out.push_str(if tick.slip_detected { "1" } else { "0" });
        for v in [tick.severity_estimate, tick.v_slip_true, tick.p] {
            out.push(',');
            out.push_str(&fmt_f64_data(v));
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(trace: &EpisodeTrace, path: &Path) -> Result<(), ControlError> {
    fs::write(path, write_trace_string(trace)).map_err(|source| ControlError::Io {
        path: path.to_path_buf(),
        source,
    })
}
