//! Streaming feature extraction on top of the field math.
//!
//! A [`StreamState`] follows one tactile stream tick by tick and turns
//! each (marker field, depth map) pair into a [`FeatureVector`] of nine
//! scalars. Temporal rates difference against the previous tick; on the
//! first tick of a stream every rate, and the net velocity, is exactly 0
//! so feature and label streams stay aligned.

use crate::field::{
    self, DepthMap, EwmaState, FieldError, MarkerField, DEFAULT_DEPTH_THRESHOLD,
    DEFAULT_ENTROPY_BINS, DEFAULT_ENTROPY_RANGE,
};
use std::fmt;
use std::str::FromStr;

/// Nine per-tick scalars describing the deformation field, plus the tick
/// timestamp. Field order here is the canonical column order everywhere:
/// entropy pair first, then the vector-field block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub timestamp: f64,
    /// Shannon entropy of displacement magnitudes, bits.
    pub h: f64,
    /// Rate of change of `h`, bits/s.
    pub dh_dt: f64,
    /// Norm of the mean marker velocity, px/s.
    pub v_net: f64,
    /// Field-summed divergence of the displacement field.
    pub div: f64,
    /// Field-summed curl of the displacement field.
    pub curl: f64,
    pub d_div_dt: f64,
    pub d_curl_dt: f64,
    /// Normalized contact area, fraction of depth pixels in contact.
    pub a_n: f64,
    pub da_n_dt: f64,
}

/// Canonical feature column names, in [`FeatureSet::Combined`] order.
pub const FEATURE_NAMES: [&str; 9] = [
    "H", "dH_dt", "v_net", "div", "curl", "d_div_dt", "d_curl_dt", "A_n", "dA_n_dt",
];

impl FeatureVector {
    /// All-zero vector at the given timestamp.
    pub fn zeroed(timestamp: f64) -> Self {
        Self {
            timestamp,
            h: 0.0,
            dh_dt: 0.0,
            v_net: 0.0,
            div: 0.0,
            curl: 0.0,
            d_div_dt: 0.0,
            d_curl_dt: 0.0,
            a_n: 0.0,
            da_n_dt: 0.0,
        }
    }

    /// The nine features in canonical order.
    pub fn combined(&self) -> [f64; 9] {
        [
            self.h,
            self.dh_dt,
            self.v_net,
            self.div,
            self.curl,
            self.d_div_dt,
            self.d_curl_dt,
            self.a_n,
            self.da_n_dt,
        ]
    }

    /// Rebuilds a vector from canonical-order values.
    pub fn from_combined(timestamp: f64, vals: [f64; 9]) -> Self {
        Self {
            timestamp,
            h: vals[0],
            dh_dt: vals[1],
            v_net: vals[2],
            div: vals[3],
            curl: vals[4],
            d_div_dt: vals[5],
            d_curl_dt: vals[6],
            a_n: vals[7],
            da_n_dt: vals[8],
        }
    }
}

/// Which slice of the feature vector a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    /// Entropy features only: `[H, dH_dt]`.
    Baseline,
    /// Vector-field features: `[v_net, div, curl, d_div_dt, d_curl_dt, A_n, dA_n_dt]`.
    Proposed,
    /// Baseline followed by Proposed, nine features.
    Combined,
}

impl FeatureSet {
    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Baseline => 2,
            FeatureSet::Proposed => 7,
            FeatureSet::Combined => 9,
        }
    }

    /// Names of the selected columns, in selection order.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::Baseline => &FEATURE_NAMES[..2],
            FeatureSet::Proposed => &FEATURE_NAMES[2..],
            FeatureSet::Combined => &FEATURE_NAMES[..],
        }
    }

    pub const ALL: [FeatureSet; 3] = [FeatureSet::Baseline, FeatureSet::Proposed, FeatureSet::Combined];
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSet::Baseline => "baseline",
            FeatureSet::Proposed => "proposed",
            FeatureSet::Combined => "combined",
        })
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(FeatureSet::Baseline),
            "proposed" => Ok(FeatureSet::Proposed),
            "combined" => Ok(FeatureSet::Combined),
            other => Err(format!(
                "unknown feature set '{other}' (expected baseline, proposed, or combined)"
            )),
        }
    }
}

/// Projects a feature vector onto a feature set, in the set's fixed order.
pub fn select_features(v: &FeatureVector, set: FeatureSet) -> Vec<f64> {
    let all = v.combined();
    match set {
        FeatureSet::Baseline => all[..2].to_vec(),
        FeatureSet::Proposed => all[2..].to_vec(),
        FeatureSet::Combined => all.to_vec(),
    }
}

/// Scripted condition a detection recording was captured under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Object held at fixed pressure, no motion.
    Static,
    /// Grasp tightening and loosening ramps.
    Grasp,
    /// Externally forced slip pulses.
    Slip,
    /// Torque-driven rotational slip.
    Rotation,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Static,
        Scenario::Grasp,
        Scenario::Slip,
        Scenario::Rotation,
    ];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Static => "static",
            Scenario::Grasp => "grasp",
            Scenario::Slip => "slip",
            Scenario::Rotation => "rotation",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Scenario::Static),
            "grasp" => Ok(Scenario::Grasp),
            "slip" => Ok(Scenario::Slip),
            "rotation" => Ok(Scenario::Rotation),
            other => Err(format!("unknown scenario '{other}'")),
        }
    }
}

/// One labeled tick for the slip/no-slip classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSample {
    pub object_id: String,
    pub scenario: Scenario,
    pub features: FeatureVector,
    /// 0 = no slip, 1 = slip.
    pub label: u8,
}

/// One tick of a severity recording; `v_slip` is the ground-truth slip
/// speed in cm/s, zero once the object has disengaged.
#[derive(Debug, Clone, PartialEq)]
pub struct SeveritySample {
    pub object_id: String,
    /// Recording index the tick belongs to; ticks of one recording share it.
    pub sequence_id: usize,
    pub features: FeatureVector,
    pub v_slip: f64,
}

/// Tunable constants of the extraction pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub entropy_bins: usize,
    pub entropy_range: (f64, f64),
    /// Depth threshold for contact-area counting.
    pub depth_threshold: f64,
    /// Smoothing factor for the ground-truth velocity filter.
    pub ewma_alpha: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            entropy_bins: DEFAULT_ENTROPY_BINS,
            entropy_range: DEFAULT_ENTROPY_RANGE,
            depth_threshold: DEFAULT_DEPTH_THRESHOLD,
            ewma_alpha: 0.3,
        }
    }
}

/// Per-stream temporal state for feature extraction.
///
/// Owns the previous frame and the previous values of every differenced
/// scalar. One state follows one stream; restart a stream by building a
/// fresh state.
#[derive(Debug, Clone)]
pub struct StreamState {
    config: ExtractorConfig,
    prev_field: Option<MarkerField>,
    prev_h: f64,
    prev_div: f64,
    prev_curl: f64,
    prev_area: f64,
    truth_filter: EwmaState,
}

impl StreamState {
    pub fn new(config: ExtractorConfig) -> Result<Self, FieldError> {
        let truth_filter = EwmaState::new(config.ewma_alpha)?;
        if config.entropy_bins < 2 {
            return Err(FieldError::TooFewBins(config.entropy_bins));
        }
        let (lo, hi) = config.entropy_range;
        if !(hi > lo) {
            return Err(FieldError::EmptyRange { lo, hi });
        }
        Ok(Self {
            config,
            prev_field: None,
            prev_h: 0.0,
            prev_div: 0.0,
            prev_curl: 0.0,
            prev_area: 0.0,
            truth_filter,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    /// True before the first tick has been processed.
    pub fn is_fresh(&self) -> bool {
        self.prev_field.is_none()
    }

    /// Smooths a ground-truth scalar with the stream's EWMA filter.
    pub fn smooth_truth(&mut self, x: f64) -> f64 {
        self.truth_filter = field::ewma_update(self.truth_filter, x);
        self.truth_filter.value()
    }

    /// Clears temporal history so the next tick is treated as a stream
    /// start. Used between recordings that reuse one state.
    pub fn reset(&mut self) {
        self.prev_field = None;
        self.prev_h = 0.0;
        self.prev_div = 0.0;
        self.prev_curl = 0.0;
        self.prev_area = 0.0;
        self.truth_filter = EwmaState::new(self.config.ewma_alpha).expect("validated alpha");
    }

    /// Processes one tick and advances the stream.
    pub fn step(
        &mut self,
        frame: &MarkerField,
        depth: &DepthMap,
        dt: f64,
    ) -> Result<FeatureVector, FieldError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(FieldError::NonPositiveDt(dt));
        }
        let spacing = frame.spacing();
        let h = field::displacement_entropy(frame, self.config.entropy_bins, self.config.entropy_range)?;
        let (div, curl) = field::divergence_curl(frame, spacing)?;
        let a_n = field::normalized_contact_area(depth, self.config.depth_threshold);

        let (v_net, dh_dt, d_div_dt, d_curl_dt, da_n_dt) = match &self.prev_field {
            Some(prev) => {
                let vel = field::marker_velocities(prev, frame, dt)?;
                let (_, _, v_net) = field::mean_net_velocity(&vel)?;
                (
                    v_net,
                    field::temporal_rate(self.prev_h, h, dt)?,
                    field::temporal_rate(self.prev_div, div, dt)?,
                    field::temporal_rate(self.prev_curl, curl, dt)?,
                    field::temporal_rate(self.prev_area, a_n, dt)?,
                )
            }
            None => (0.0, 0.0, 0.0, 0.0, 0.0),
        };

        self.prev_field = Some(frame.clone());
        self.prev_h = h;
        self.prev_div = div;
        self.prev_curl = curl;
        self.prev_area = a_n;

        Ok(FeatureVector {
            timestamp: frame.timestamp(),
            h,
            dh_dt,
            v_net,
            div,
            curl,
            d_div_dt,
            d_curl_dt,
            a_n,
            da_n_dt,
        })
    }
}

/// Free-function form of [`StreamState::step`].
pub fn extract_features(
    state: &mut StreamState,
    frame: &MarkerField,
    depth: &DepthMap,
    dt: f64,
) -> Result<FeatureVector, FieldError> {
    state.step(frame, depth, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GridSpacing, DEFAULT_DT};
    use approx::assert_relative_eq;

    fn state() -> StreamState {
        StreamState::new(ExtractorConfig::default()).unwrap()
    }

    #[test]
    fn rest_state_is_all_zero() {
        let mut s = state();
        let frame = MarkerField::default_lattice(0.0);
        let depth = DepthMap::zeroed_default();
        let fv = s.step(&frame, &depth, DEFAULT_DT).unwrap();
        assert_eq!(fv.combined(), [0.0; 9]);
        assert_eq!(fv.timestamp, 0.0);
    }

    #[test]
    fn first_tick_rates_are_zero() {
        let mut s = state();
        let mut frame = MarkerField::default_lattice(0.0);
        // Nontrivial displacements so instantaneous features are nonzero.
        for (i, d) in frame.displacements_mut().iter_mut().enumerate() {
            d[0] = (i % 5) as f64;
            d[1] = 0.3 * (i % 3) as f64;
        }
        let depth = DepthMap::zeroed_default();
        let fv = s.step(&frame, &depth, DEFAULT_DT).unwrap();
        assert_eq!(fv.v_net, 0.0);
        assert_eq!(fv.dh_dt, 0.0);
        assert_eq!(fv.d_div_dt, 0.0);
        assert_eq!(fv.d_curl_dt, 0.0);
        assert_eq!(fv.da_n_dt, 0.0);
        assert!(fv.h > 0.0);
        assert!(fv.div != 0.0 || fv.curl != 0.0);
    }

    #[test]
    fn linear_shear_ramp_velocities() {
        // Displacement grows as 0.2 px/tick uniformly: v_net settles at
        // 0.2/0.04 = 5 px/s, divergence and curl stay 0, and their rates
        // stay 0 on every tick.
        let mut s = state();
        let depth = DepthMap::zeroed_default();
        for k in 0..10 {
            let t = k as f64 * DEFAULT_DT;
            let mut frame = MarkerField::default_lattice(t);
            for d in frame.displacements_mut() {
                d[0] = 0.2 * k as f64;
            }
            let fv = s.step(&frame, &depth, DEFAULT_DT).unwrap();
            if k == 0 {
                assert_eq!(fv.v_net, 0.0);
            } else {
                assert_relative_eq!(fv.v_net, 5.0, max_relative = 1e-12);
            }
            assert_relative_eq!(fv.div, 0.0, epsilon = 1e-12);
            assert_relative_eq!(fv.curl, 0.0, epsilon = 1e-12);
            assert_eq!(fv.d_div_dt, 0.0);
            assert_eq!(fv.d_curl_dt, 0.0);
            // Uniform magnitudes land in one histogram bin.
            assert_eq!(fv.h, 0.0);
        }
    }

    #[test]
    fn contact_area_and_rate() {
        let mut s = state();
        let frame = MarkerField::default_lattice(0.0);
        let mut depth = DepthMap::zeroed_default();
        s.step(&frame, &depth, DEFAULT_DT).unwrap();

        // 10% of pixels over threshold on the second tick.
        let n = depth.depth().len();
        for z in depth.depth_mut().iter_mut().take(n / 10) {
            *z = 2.0;
        }
        let fv = s.step(&frame, &depth, DEFAULT_DT).unwrap();
        assert_relative_eq!(fv.a_n, 0.1, max_relative = 1e-12);
        assert_relative_eq!(fv.da_n_dt, 0.1 / DEFAULT_DT, max_relative = 1e-12);
    }

    #[test]
    fn extraction_is_deterministic() {
        let run = || {
            let mut s = state();
            let depth = DepthMap::zeroed_default();
            let mut out = Vec::new();
            for k in 0..20 {
                let mut frame = MarkerField::default_lattice(k as f64 * DEFAULT_DT);
                for (i, d) in frame.displacements_mut().iter_mut().enumerate() {
                    d[0] = ((i * 7 + k * 3) % 11) as f64 * 0.37;
                    d[1] = ((i * 5 + k) % 13) as f64 * 0.21;
                }
                out.push(s.step(&frame, &depth, DEFAULT_DT).unwrap());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reset_restores_first_tick_convention() {
        let mut s = state();
        let depth = DepthMap::zeroed_default();
        let mut frame = MarkerField::default_lattice(0.0);
        for d in frame.displacements_mut() {
            d[0] = 1.0;
        }
        s.step(&frame, &depth, DEFAULT_DT).unwrap();
        let _ = s.smooth_truth(3.0);
        s.reset();
        assert!(s.is_fresh());
        let mut frame2 = MarkerField::default_lattice(1.0);
        for d in frame2.displacements_mut() {
            d[0] = 4.0;
        }
        let fv = s.step(&frame2, &depth, DEFAULT_DT).unwrap();
        assert_eq!(fv.v_net, 0.0);
        // The truth filter re-initializes too.
        assert_eq!(s.smooth_truth(10.0), 10.0);
    }

    #[test]
    fn selection_orders_and_lengths() {
        let v = FeatureVector {
            timestamp: 0.0,
            h: 1.0,
            dh_dt: 2.0,
            v_net: 3.0,
            div: 4.0,
            curl: 5.0,
            d_div_dt: 6.0,
            d_curl_dt: 7.0,
            a_n: 8.0,
            da_n_dt: 9.0,
        };
        assert_eq!(select_features(&v, FeatureSet::Baseline), vec![1.0, 2.0]);
        assert_eq!(
            select_features(&v, FeatureSet::Proposed),
            vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
        );
        let combined = select_features(&v, FeatureSet::Combined);
        assert_eq!(combined.len(), 9);
        let mut concat = select_features(&v, FeatureSet::Baseline);
        concat.extend(select_features(&v, FeatureSet::Proposed));
        assert_eq!(combined, concat);
    }

    #[test]
    fn proposed_on_rest_state_is_zero() {
        let v = FeatureVector::zeroed(0.0);
        assert_eq!(select_features(&v, FeatureSet::Proposed), vec![0.0; 7]);
    }

    #[test]
    fn feature_set_parsing_round_trips() {
        for set in FeatureSet::ALL {
            assert_eq!(set.to_string().parse::<FeatureSet>().unwrap(), set);
            assert_eq!(set.names().len(), set.dim());
        }
        assert!("entropy".parse::<FeatureSet>().is_err());
        for sc in Scenario::ALL {
            assert_eq!(sc.to_string().parse::<Scenario>().unwrap(), sc);
        }
    }

    #[test]
    fn smooth_truth_follows_ewma() {
        let mut s = state();
        assert_eq!(s.smooth_truth(10.0), 10.0);
        assert_relative_eq!(s.smooth_truth(20.0), 13.0, max_relative = 1e-12);
    }

    #[test]
    fn geometry_change_mid_stream_is_rejected() {
        let mut s = state();
        let depth = DepthMap::zeroed_default();
        let a = MarkerField::default_lattice(0.0);
        s.step(&a, &depth, DEFAULT_DT).unwrap();
        let b = MarkerField::uniform(0.04, 5, 5, [0.0, 0.0], GridSpacing::default()).unwrap();
        assert!(matches!(
            s.step(&b, &depth, DEFAULT_DT),
            Err(FieldError::GeometryMismatch(_))
        ));
    }

    #[test]
    fn combined_round_trip() {
        let v = FeatureVector::from_combined(1.5, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!(
            FeatureVector::from_combined(v.timestamp, v.combined()),
            v
        );
    }
}
