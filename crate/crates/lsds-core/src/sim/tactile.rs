//! Synthetic tactile frames from contact state.
//!
//! Each tick maps a [`ContactState`] to a marker displacement field and a
//! depth map with the signatures the extraction pipeline looks for:
//!
//! * squeezing spreads markers radially, so field-summed divergence grows
//!   with normal force;
//! * tangential load drags the whole field sideways through a relaxing
//!   gel-shear state;
//! * sliding advances the phase of a spatial texture ripple and adds
//!   incoherent per-marker jitter proportional to slip speed, which is
//!   what the rate features and entropy pick up;
//! * torque twists the field, producing curl;
//! * the depth dome saturates with force and its radius flickers while
//!   the contact moves, driving the contact-area channel.
//!
//! Everything is gated on contact, so a resting sensor with a noiseless
//! object produces exactly zero displacements and an empty depth map.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::{DepthMap, MarkerField, DEFAULT_DEPTH_HEIGHT, DEFAULT_DEPTH_WIDTH};

use super::contact::ContactState;
use super::objects::ObjectSpec;
use super::PX_PER_CM;

/// Sensor centre in depth-map pixels; also the marker lattice centre.
pub const SENSOR_CENTER: [f64; 2] = [160.0, 120.0];

/// Radius (px) that normalizes the radial and rotational terms.
const R_NORM: f64 = 100.0;

/// Gains of the frame synthesizer. Lengths are in pixels, forces in
/// newtons, speeds in cm/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TactileConfig {
    /// Radial spread per newton at `R_NORM` px from the centre.
    pub radial_gain: f64,
    /// Fractional reduction of the radial term on fully soft objects.
    pub radial_soften: f64,
    /// Steady-state shear displacement per newton of tangential load.
    pub shear_gain: f64,
    /// Per-tick relaxation of the shear state toward its target.
    pub shear_relax: f64,
    /// Amplitude of the sliding texture ripple.
    pub texture_amp: f64,
    /// Spatial wavelength of the ripple.
    pub texture_wavelength: f64,
    /// Phase advance of the ripple per pixel of marker x.
    pub texture_phase_x: f64,
    /// Phase advance of the ripple per pixel of marker y.
    pub texture_phase_y: f64,
    /// Std-dev of per-marker jitter per cm/s of slip speed.
    pub jitter_gain: f64,
    /// Tangential twist per unit torque at `R_NORM` px from the centre.
    pub rot_gain: f64,
    /// Depth dome peak height (px) at saturation.
    pub depth_peak: f64,
    /// Normal force at which the dome reaches half its peak.
    pub depth_half_force: f64,
    /// Fraction of the nominal contact radius present at zero force.
    pub depth_radius_floor: f64,
    /// Fractional radius flicker per unit of contact motion.
    pub depth_flicker: f64,
}

impl Default for TactileConfig {
    fn default() -> Self {
        Self {
            radial_gain: 0.25,
            radial_soften: 0.35,
            shear_gain: 0.9,
            shear_relax: 0.45,
            texture_amp: 0.55,
            texture_wavelength: 18.0,
            texture_phase_x: 0.37,
            texture_phase_y: 0.11,
            jitter_gain: 0.11,
            rot_gain: 4.0,
            depth_peak: 5.0,
            depth_half_force: 1.2,
            depth_radius_floor: 0.45,
            depth_flicker: 0.06,
        }
    }
}

/// Stateful frame synthesizer for one grasped object.
///
/// The only cross-tick state besides the RNG is the gel shear, which
/// relaxes toward the current tangential load instead of jumping.
#[derive(Debug, Clone)]
pub struct TactileSim {
    cfg: TactileConfig,
    object: ObjectSpec,
    rng: ChaCha8Rng,
    shear_px: f64,
    template: MarkerField,
}

impl TactileSim {
    pub fn new(object: ObjectSpec, cfg: TactileConfig, rng: ChaCha8Rng) -> Self {
        Self {
            cfg,
            object,
            rng,
            shear_px: 0.0,
            template: MarkerField::default_lattice(0.0),
        }
    }

    pub fn object(&self) -> &ObjectSpec {
        &self.object
    }

    /// Jumps the shear lag to its fixed point for `contact`: the pad
    /// state after holding a pose long enough to stop creeping. Draws
    /// no noise, so the frame stream is unaffected.
    pub fn settle(&mut self, contact: &ContactState) {
        self.shear_px = self.cfg.shear_gain * contact.f_t;
    }

    fn gauss(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Renders the frame for one tick at time `t`.
    pub fn tick(&mut self, contact: &ContactState, torque: f64, t: f64) -> (MarkerField, DepthMap) {
        let cfg = self.cfg;
        let f_n = contact.f_n;
        let v = contact.v_slip;

        // Shear follows the tangential load with first-order lag.
        let shear_target = cfg.shear_gain * contact.f_t;
        self.shear_px += cfg.shear_relax * (shear_target - self.shear_px);

        let radial = cfg.radial_gain * f_n * (1.0 - cfg.radial_soften * self.object.deformability)
            / R_NORM;
        let twist = cfg.rot_gain * torque / R_NORM;
        let slide_px = contact.slide_cm * PX_PER_CM;
        let jitter_sigma = cfg.jitter_gain * v;
        let noise_sigma = self.object.texture_noise;

        let mut frame = self.template.clone();
        frame.set_timestamp(t);
        let refs = frame.ref_positions().to_vec();
        for (i, d) in frame.displacements_mut().iter_mut().enumerate() {
            let [x, y] = refs[i];
            let dx_rel = x - SENSOR_CENTER[0];
            let dy_rel = y - SENSOR_CENTER[1];

            let mut ox = radial * dx_rel - twist * dy_rel;
            let mut oy = radial * dy_rel + twist * dx_rel + self.shear_px;

            // The resting imprint is the reference frame; the ripple only
            // shows once the surface actually moves past the gel.
            if contact.slipping {
                let phase = std::f64::consts::TAU
                    * (slide_px + cfg.texture_phase_x * x + cfg.texture_phase_y * y)
                    / cfg.texture_wavelength;
                oy += cfg.texture_amp * phase.sin();
            }

            // Draws happen unconditionally so a zero sigma still consumes
            // the same stream positions and yields exactly zero.
            ox += jitter_sigma * self.gauss();
            oy += jitter_sigma * self.gauss();
            ox += noise_sigma * self.gauss();
            oy += noise_sigma * self.gauss();

            *d = [ox, oy];
        }

        let depth = self.render_depth(f_n, v, torque);
        (frame, depth)
    }

    /// Saturating dome: peak height and radius both grow with normal
    /// force, and the radius flickers while the contact is in motion.
    fn render_depth(&mut self, f_n: f64, v: f64, torque: f64) -> DepthMap {
        let cfg = self.cfg;
        let (w, h) = (DEFAULT_DEPTH_WIDTH, DEFAULT_DEPTH_HEIGHT);
        let mut z = vec![0.0; w * h];
        // One draw per tick regardless of motion, for stream stability.
        let flicker_draw = self.gauss();
        if f_n > 0.0 {
            let sat = f_n / (f_n + cfg.depth_half_force);
            let z_peak = cfg.depth_peak * sat;
            let motion = v / 3.0 + torque.abs();
            let flicker = 1.0 + cfg.depth_flicker * motion * flicker_draw;
            let r_eff = (self.object.contact_radius
                * (cfg.depth_radius_floor + (1.0 - cfg.depth_radius_floor) * sat)
                * (1.0 + 0.25 * self.object.deformability)
                * flicker)
                .max(0.0);
            if r_eff > 0.0 && z_peak > 0.0 {
                fill_dome(&mut z, w, h, SENSOR_CENTER, r_eff, z_peak);
            }
        }
        DepthMap::new(w, h, z).expect("depth buffer matches its dimensions")
    }
}

/// Writes `z_peak * (1 - rho^2 / r^2)` inside the dome's bounding box.
fn fill_dome(z: &mut [f64], w: usize, h: usize, center: [f64; 2], r: f64, z_peak: f64) {
    let x0 = ((center[0] - r).floor().max(0.0)) as usize;
    let x1 = ((center[0] + r).ceil().min(w as f64 - 1.0)) as usize;
    let y0 = ((center[1] - r).floor().max(0.0)) as usize;
    let y1 = ((center[1] + r).ceil().min(h as f64 - 1.0)) as usize;
    let inv_r2 = 1.0 / (r * r);
    for y in y0..=y1 {
        let dy = y as f64 - center[1];
        let row = y * w;
        for x in x0..=x1 {
            let dx = x as f64 - center[0];
            let fall = 1.0 - (dx * dx + dy * dy) * inv_r2;
            if fall > 0.0 {
                z[row + x] = z_peak * fall;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{self, DEFAULT_DT};
    use rand::SeedableRng;

    fn quiet_object() -> ObjectSpec {
        ObjectSpec {
            name: "quiet".into(),
            mu_s: 0.8,
            mu_k: 0.75,
            k_obj: 0.5,
            mass: 0.3,
            texture_noise: 0.0,
            deformability: 0.1,
            contact_radius: 50.0,
        }
    }

    fn sim(object: ObjectSpec) -> TactileSim {
        TactileSim::new(object, TactileConfig::default(), ChaCha8Rng::seed_from_u64(7))
    }

    fn squeeze_contact(f_n: f64) -> ContactState {
        ContactState {
            f_n,
            f_t: 0.0,
            slipping: false,
            v_slip: 0.0,
            slide_cm: 0.0,
        }
    }

    #[test]
    fn rest_with_noiseless_object_is_exactly_zero() {
        let mut s = sim(quiet_object());
        for k in 0..3 {
            let (frame, depth) = s.tick(&ContactState::at_rest(), 0.0, k as f64 * DEFAULT_DT);
            assert!(frame.displacements().iter().all(|d| d[0] == 0.0 && d[1] == 0.0));
            assert!(depth.depth().iter().all(|z| *z == 0.0));
        }
    }

    #[test]
    fn divergence_grows_strictly_with_squeeze() {
        let mut last = 0.0;
        for f_n in [1.0, 2.0, 4.0, 8.0] {
            let mut s = sim(quiet_object());
            let (frame, _) = s.tick(&squeeze_contact(f_n), 0.0, 0.0);
            let (div, curl) = field::divergence_curl(&frame, frame.spacing()).unwrap();
            assert!(div > last, "div {div} at f_n {f_n} not above {last}");
            assert!(curl.abs() < 1e-9);
            last = div;
        }
    }

    #[test]
    fn radial_divergence_matches_closed_form() {
        // Linear radial field: every node contributes exactly 2 * radial.
        let cfg = TactileConfig::default();
        let obj = quiet_object();
        let mut s = TactileSim::new(obj.clone(), cfg, ChaCha8Rng::seed_from_u64(1));
        let f_n = 5.0;
        let (frame, _) = s.tick(&squeeze_contact(f_n), 0.0, 0.0);
        let (div, _) = field::divergence_curl(&frame, frame.spacing()).unwrap();
        let radial = cfg.radial_gain * f_n * (1.0 - cfg.radial_soften * obj.deformability) / 100.0;
        let expect = 2.0 * radial * 63.0;
        assert!((div - expect).abs() < 1e-9, "div {div} vs {expect}");
    }

    #[test]
    fn torque_produces_curl_of_matching_sign() {
        let mut s = sim(quiet_object());
        let (frame, _) = s.tick(&squeeze_contact(5.0), 1.0, 0.0);
        let (_, curl) = field::divergence_curl(&frame, frame.spacing()).unwrap();
        let expect = 2.0 * TactileConfig::default().rot_gain * 1.0 / 100.0 * 63.0;
        assert!((curl - expect).abs() < 1e-9, "curl {curl} vs {expect}");

        let mut s = sim(quiet_object());
        let (frame, _) = s.tick(&squeeze_contact(5.0), -1.0, 0.0);
        let (_, curl) = field::divergence_curl(&frame, frame.spacing()).unwrap();
        assert!((curl + expect).abs() < 1e-9);
    }

    #[test]
    fn contact_area_monotone_in_force() {
        // Below ~0.3 N the dome peak stays under the 1 px threshold:
        // a light touch registers no contact area at all.
        let mut s = sim(quiet_object());
        let (_, depth) = s.tick(&squeeze_contact(0.2), 0.0, 0.0);
        assert_eq!(field::normalized_contact_area(&depth, 1.0), 0.0);

        let mut last = 0.0;
        for f_n in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let mut s = sim(quiet_object());
            let (_, depth) = s.tick(&squeeze_contact(f_n), 0.0, 0.0);
            let a = field::normalized_contact_area(&depth, 1.0);
            assert!(a > last, "area {a} at f_n {f_n} not above {last}");
            last = a;
        }
        assert!(last < 0.5, "dome should stay a fraction of the pad, got {last}");
    }

    #[test]
    fn slip_jitter_raises_mean_marker_speed() {
        let still = ContactState {
            f_n: 4.0,
            f_t: 1.0,
            slipping: false,
            v_slip: 0.0,
            slide_cm: 0.0,
        };
        let mut quiet = f64::INFINITY;
        let mut moving = 0.0_f64;
        // Let the shear state settle, then compare tick-to-tick speeds.
        let mut s = sim(quiet_object());
        let mut prev = None;
        for k in 0..40 {
            let (frame, _) = s.tick(&still, 0.0, k as f64 * DEFAULT_DT);
            if let Some(p) = prev.take() {
                let vel = field::marker_velocities(&p, &frame, DEFAULT_DT).unwrap();
                let (_, _, v) = field::mean_net_velocity(&vel).unwrap();
                if k > 30 {
                    quiet = quiet.min(v.max(1e-12));
                }
            }
            prev = Some(frame);
        }
        let mut s = sim(quiet_object());
        let mut prev = None;
        for k in 0..40 {
            let sliding = ContactState {
                f_n: 4.0,
                f_t: 1.0,
                slipping: true,
                v_slip: 3.8,
                slide_cm: 3.8 * DEFAULT_DT * k as f64,
            };
            let (frame, _) = s.tick(&sliding, 0.0, k as f64 * DEFAULT_DT);
            if let Some(p) = prev.take() {
                let vel = field::marker_velocities(&p, &frame, DEFAULT_DT).unwrap();
                let (_, _, v) = field::mean_net_velocity(&vel).unwrap();
                if k > 30 {
                    moving = moving.max(v);
                }
            }
            prev = Some(frame);
        }
        assert!(
            moving > 10.0 * quiet.max(1e-9),
            "sliding v_net {moving} not above settled quiet ceiling {quiet}"
        );
    }

    #[test]
    fn identical_seeds_render_identical_frames() {
        let contact = ContactState {
            f_n: 3.0,
            f_t: 1.2,
            slipping: true,
            v_slip: 2.0,
            slide_cm: 0.4,
        };
        let run = || {
            let mut s = TactileSim::new(
                super::super::objects::training_objects()[0].clone(),
                TactileConfig::default(),
                ChaCha8Rng::seed_from_u64(99),
            );
            let mut out = Vec::new();
            for k in 0..5 {
                out.push(s.tick(&contact, 0.3, k as f64 * DEFAULT_DT));
            }
            out
        };
        let a = run();
        let b = run();
        for ((fa, da), (fb, db)) in a.iter().zip(&b) {
            assert_eq!(fa.displacements(), fb.displacements());
            assert_eq!(da.depth(), db.depth());
        }
    }
}
