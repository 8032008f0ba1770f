//! Coulomb stick-slip contact between gripper jaw and object.
//!
//! Normal force is a linear spring in squeeze depth. The contact sticks
//! while the tangential demand stays inside the static friction cone;
//! outside it, relative velocity integrates the excess over kinetic
//! friction. A decelerating slip re-sticks the moment velocity reaches
//! zero with the demand back inside the cone.

use super::objects::ObjectSpec;
use super::P_MAX;

/// Jaw position state. `p` runs 0 (open) to 225 (closed); contact
/// begins at `p_contact`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    pub p: f64,
    pub p_contact: f64,
}

impl GripperState {
    pub fn new(p: f64, p_contact: f64) -> Self {
        Self {
            p: p.clamp(0.0, P_MAX),
            p_contact,
        }
    }

    pub fn set_p(&mut self, p: f64) {
        self.p = p.clamp(0.0, P_MAX);
    }

    /// Squeeze depth in position units; zero before contact.
    pub fn squeeze(&self) -> f64 {
        (self.p - self.p_contact).max(0.0)
    }
}

/// Instantaneous contact condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState {
    /// Normal force, N.
    pub f_n: f64,
    /// Transmitted tangential force, N: the demand while sticking, the
    /// kinetic friction level while slipping.
    pub f_t: f64,
    pub slipping: bool,
    /// Relative sliding speed, cm/s; zero whenever not slipping.
    pub v_slip: f64,
    /// Accumulated relative travel, cm.
    pub slide_cm: f64,
}

impl ContactState {
    pub fn at_rest() -> Self {
        Self {
            f_n: 0.0,
            f_t: 0.0,
            slipping: false,
            v_slip: 0.0,
            slide_cm: 0.0,
        }
    }
}

/// Spring-law normal force for the current squeeze.
pub fn normal_force(gripper: &GripperState, object: &ObjectSpec) -> f64 {
    object.k_obj * gripper.squeeze()
}

/// Advances the contact one tick under a tangential force demand (N).
///
/// Slip acceleration is `(|demand| - mu_k F_n) / mass`, converted to
/// cm/s²; a tick of constant excess therefore grows `v_slip` by exactly
/// `excess / mass * 100 * dt`.
pub fn grip_dynamics(
    state: &ContactState,
    gripper: &GripperState,
    object: &ObjectSpec,
    tangential_demand: f64,
    dt: f64,
) -> ContactState {
    let f_n = normal_force(gripper, object);
    let demand = tangential_demand.abs();
    let hold = object.mu_s * f_n;
    let kinetic = object.mu_k * f_n;

    let mut slipping = state.slipping;
    if !slipping && demand > hold {
        slipping = true;
    }

    if !slipping {
        return ContactState {
            f_n,
            f_t: demand,
            slipping: false,
            v_slip: 0.0,
            slide_cm: state.slide_cm,
        };
    }

    let accel_cm = (demand - kinetic) / object.mass * 100.0;
    let mut v = state.v_slip + accel_cm * dt;
    if v <= 0.0 {
        v = 0.0;
        // Stopped: stay slipping only if the demand still exceeds the
        // static cone, in which case velocity immediately rebuilds.
        slipping = demand > hold;
    }
    ContactState {
        f_n,
        f_t: if slipping { kinetic } else { demand },
        slipping,
        v_slip: v,
        slide_cm: state.slide_cm + v * dt,
    }
}

/// Contact under an externally imposed relative velocity (cm/s), as
/// when the arm drags the sensor across a fixed object. Friction reacts
/// at the kinetic level but cannot alter the motion.
pub fn kinematic_slide(
    state: &ContactState,
    gripper: &GripperState,
    object: &ObjectSpec,
    v_rel: f64,
    dt: f64,
) -> ContactState {
    let f_n = normal_force(gripper, object);
    let v = v_rel.max(0.0);
    let slipping = v > 0.0 && f_n > 0.0;
    ContactState {
        f_n,
        f_t: if slipping { object.mu_k * f_n } else { 0.0 },
        slipping,
        v_slip: if slipping { v } else { 0.0 },
        slide_cm: state.slide_cm + v * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DEFAULT_DT;
    use crate::sim::objects::object_by_name;

    fn book() -> ObjectSpec {
        object_by_name("book").unwrap()
    }

    #[test]
    fn squeeze_is_zero_before_contact() {
        let g = GripperState::new(50.0, 80.0);
        assert_eq!(g.squeeze(), 0.0);
        assert_eq!(normal_force(&g, &book()), 0.0);
    }

    #[test]
    fn no_contact_slips_freely() {
        let g = GripperState::new(50.0, 80.0);
        let s = grip_dynamics(&ContactState::at_rest(), &g, &book(), 0.5, DEFAULT_DT);
        assert!(s.slipping);
        assert_eq!(s.f_n, 0.0);
        // Frictionless: the full demand accelerates the object.
        let expect = 0.5 / book().mass * 100.0 * DEFAULT_DT;
        assert!((s.v_slip - expect).abs() < 1e-12);
    }

    #[test]
    fn demand_inside_the_cone_sticks() {
        let obj = book();
        let g = GripperState::new(90.0, 80.0);
        let f_n = normal_force(&g, &obj);
        let demand = 0.5 * obj.mu_s * f_n;
        let s = grip_dynamics(&ContactState::at_rest(), &g, &obj, demand, DEFAULT_DT);
        assert!(!s.slipping);
        assert_eq!(s.v_slip, 0.0);
        assert_eq!(s.f_t, demand);
    }

    #[test]
    fn constant_excess_grows_velocity_linearly() {
        let obj = book();
        let g = GripperState::new(90.0, 80.0);
        let f_n = normal_force(&g, &obj);
        let demand = 1.2 * obj.mu_s * f_n;
        let per_tick = (demand - obj.mu_k * f_n) / obj.mass * 100.0 * DEFAULT_DT;
        let mut s = ContactState::at_rest();
        for k in 1..=10 {
            s = grip_dynamics(&s, &g, &obj, demand, DEFAULT_DT);
            assert!((s.v_slip - k as f64 * per_tick).abs() < 1e-9);
            assert!(s.slipping);
            assert!((s.f_t - obj.mu_k * f_n).abs() < 1e-12);
        }
    }

    #[test]
    fn decelerating_slip_resticks_at_zero() {
        let obj = book();
        let g = GripperState::new(90.0, 80.0);
        let f_n = normal_force(&g, &obj);
        let mut s = grip_dynamics(
            &ContactState::at_rest(),
            &g,
            &obj,
            1.5 * obj.mu_s * f_n,
            DEFAULT_DT,
        );
        assert!(s.slipping && s.v_slip > 0.0);
        // Drop the demand inside the cone: kinetic friction brakes the
        // motion, and the contact re-sticks once v hits zero.
        let low = 0.3 * obj.mu_s * f_n;
        for _ in 0..200 {
            s = grip_dynamics(&s, &g, &obj, low, DEFAULT_DT);
            if !s.slipping {
                break;
            }
        }
        assert!(!s.slipping);
        assert_eq!(s.v_slip, 0.0);
    }

    #[test]
    fn slide_accumulates_velocity_times_dt() {
        let obj = book();
        let g = GripperState::new(90.0, 80.0);
        let mut s = ContactState::at_rest();
        let mut expect = 0.0;
        for _ in 0..5 {
            s = kinematic_slide(&s, &g, &obj, 3.8, DEFAULT_DT);
            expect += 3.8 * DEFAULT_DT;
        }
        assert!((s.slide_cm - expect).abs() < 1e-12);
        assert!(s.slipping);
        assert_eq!(s.v_slip, 3.8);
    }

    #[test]
    fn kinematic_slide_without_contact_reports_no_slip_forces() {
        let obj = book();
        let g = GripperState::new(10.0, 80.0);
        let s = kinematic_slide(&ContactState::at_rest(), &g, &obj, 2.0, DEFAULT_DT);
        assert_eq!(s.f_t, 0.0);
        assert!(!s.slipping);
        assert_eq!(s.v_slip, 0.0);
        // Travel still accrues: the arm moved even though nothing
        // touched the sensor.
        assert!(s.slide_cm > 0.0);
    }
}
