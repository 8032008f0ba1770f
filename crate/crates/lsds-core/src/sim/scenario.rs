//! Scripted recording protocols and the vertical-slide test rig.
//!
//! Each protocol walks the gripper and load through a fixed schedule,
//! advances the contact dynamics, renders tactile frames, and hands every
//! tick to a sink closure. Streaming through a sink keeps memory flat: a
//! depth map is ~600 KB, so buffering a whole recording is off the table.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::Scenario;
use crate::field::{DepthMap, MarkerField, DEFAULT_DT};

use super::contact::{grip_dynamics, kinematic_slide, normal_force, ContactState, GripperState};
use super::objects::ObjectSpec;
use super::tactile::{TactileConfig, TactileSim};
use super::{GRAVITY, P_MAX};

/// Gripper position at first contact, shared by every protocol.
pub const P_CONTACT: f64 = 60.0;

/// Squeeze depths of the constant-pressure protocol.
pub const STATIC_SQUEEZES: [f64; 5] = [4.0, 7.0, 10.0, 13.0, 16.0];
pub const STATIC_TICKS_PER_LEVEL: usize = 300;

/// The tightening protocol pauses five seconds at each position before
/// ramping to the next one, ending ten units above the start.
pub const GRASP_START_SQUEEZE: f64 = 3.0;
pub const GRASP_STEP_SQUEEZE: f64 = 2.0;
pub const GRASP_STEPS: usize = 5;
pub const GRASP_RAMP_TICKS: usize = 25;
pub const GRASP_HOLD_TICKS: usize = 125;

pub const SLIP_TICKS: usize = 2150;
pub const SLIP_SQUEEZE: f64 = 8.0;
/// Tangential load between pulses, as a fraction of the static hold.
const SLIP_BASE_FRAC: f64 = 0.78;

pub const ROTATION_TICKS: usize = 500;
const ROTATION_SQUEEZE: f64 = 8.0;
const ROTATION_TORQUE_AMP: f64 = 1.1;
const ROTATION_PERIOD_S: f64 = 2.4;

/// Steady tangential load while an object is merely carried, as a
/// fraction of the current static hold.
const STATIC_CARRY_FRAC: f64 = 0.25;
const GRASP_CARRY_FRAC: f64 = 0.20;
const ROTATION_CARRY_FRAC: f64 = 0.30;

/// One simulated sensor tick.
#[derive(Debug, Clone)]
pub struct TickRecord {
    pub t: f64,
    pub field: MarkerField,
    pub depth: DepthMap,
    pub contact: ContactState,
}

/// Ticks each protocol produces.
pub fn scenario_ticks(kind: Scenario) -> usize {
    match kind {
        Scenario::Static => STATIC_SQUEEZES.len() * STATIC_TICKS_PER_LEVEL,
        Scenario::Grasp => GRASP_STEPS * (GRASP_RAMP_TICKS + GRASP_HOLD_TICKS),
        Scenario::Slip => SLIP_TICKS,
        Scenario::Rotation => ROTATION_TICKS,
    }
}

/// Runs one protocol, handing every tick to `sink` in order.
pub fn run_scenario(
    kind: Scenario,
    object: &ObjectSpec,
    cfg: TactileConfig,
    rng: ChaCha8Rng,
    dt: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    match kind {
        Scenario::Static => run_static(object, cfg, rng, dt, sink),
        Scenario::Grasp => run_grasp(object, cfg, rng, dt, sink),
        Scenario::Slip => run_slip(object, cfg, rng, dt, sink),
        Scenario::Rotation => run_rotation(object, cfg, rng, dt, sink),
    }
}

fn emit(
    sim: &mut TactileSim,
    contact: ContactState,
    torque: f64,
    t: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    let (field, depth) = sim.tick(&contact, torque, t);
    sink(TickRecord {
        t,
        field,
        depth,
        contact,
    });
}

fn run_static(
    object: &ObjectSpec,
    cfg: TactileConfig,
    rng: ChaCha8Rng,
    dt: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    let mut sim = TactileSim::new(object.clone(), cfg, rng);
    let mut contact = ContactState::at_rest();
    let mut tick = 0usize;
    for squeeze in STATIC_SQUEEZES {
        let gripper = GripperState::new(P_CONTACT + squeeze, P_CONTACT);
        let demand = STATIC_CARRY_FRAC * object.mu_s * normal_force(&gripper, object);
        for _ in 0..STATIC_TICKS_PER_LEVEL {
            contact = grip_dynamics(&contact, &gripper, object, demand, dt);
            emit(&mut sim, contact, 0.0, tick as f64 * dt, sink);
            tick += 1;
        }
    }
}

fn run_grasp(
    object: &ObjectSpec,
    cfg: TactileConfig,
    rng: ChaCha8Rng,
    dt: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    let mut sim = TactileSim::new(object.clone(), cfg, rng);
    let mut contact = ContactState::at_rest();
    let mut schedule = Vec::with_capacity(scenario_ticks(Scenario::Grasp));
    for i in 0..GRASP_STEPS {
        let from = GRASP_START_SQUEEZE + GRASP_STEP_SQUEEZE * i as f64;
        for _ in 0..GRASP_HOLD_TICKS {
            schedule.push(from);
        }
        for j in 0..GRASP_RAMP_TICKS {
            let frac = (j + 1) as f64 / GRASP_RAMP_TICKS as f64;
            schedule.push(from + GRASP_STEP_SQUEEZE * frac);
        }
    }
    for (tick, squeeze) in schedule.into_iter().enumerate() {
        let gripper = GripperState::new(P_CONTACT + squeeze, P_CONTACT);
        let demand = GRASP_CARRY_FRAC * object.mu_s * normal_force(&gripper, object);
        contact = grip_dynamics(&contact, &gripper, object, demand, dt);
        emit(&mut sim, contact, 0.0, tick as f64 * dt, sink);
    }
}

fn run_slip(
    object: &ObjectSpec,
    cfg: TactileConfig,
    mut rng: ChaCha8Rng,
    dt: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    // Pulse schedule varies per recording; drawn before the RNG moves
    // into the frame synthesizer so the order is fixed.
    let period_s: f64 = rng.gen_range(2.6..3.8);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let accel_target: f64 = rng.gen_range(18.0..30.0);
    let mut sim = TactileSim::new(object.clone(), cfg, rng);

    let gripper = GripperState::new(P_CONTACT + SLIP_SQUEEZE, P_CONTACT);
    let f_n = normal_force(&gripper, object);
    let hold = object.mu_s * f_n;
    let mut contact = ContactState::at_rest();
    for k in 0..SLIP_TICKS {
        let t = k as f64 * dt;
        // Narrow load pulses crest just past the static cone; between
        // pulses the load sits below kinetic friction so slip dies out.
        let s = (std::f64::consts::TAU * t / period_s + phase).sin().max(0.0);
        let pulse = s.powi(4);
        let demand =
            hold * (SLIP_BASE_FRAC + (1.0 - SLIP_BASE_FRAC) * pulse) + pulse * accel_target * object.mass / 100.0;
        contact = grip_dynamics(&contact, &gripper, object, demand, dt);
        emit(&mut sim, contact, 0.0, t, sink);
    }
}

fn run_rotation(
    object: &ObjectSpec,
    cfg: TactileConfig,
    mut rng: ChaCha8Rng,
    dt: f64,
    sink: &mut dyn FnMut(TickRecord),
) {
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut sim = TactileSim::new(object.clone(), cfg, rng);
    let gripper = GripperState::new(P_CONTACT + ROTATION_SQUEEZE, P_CONTACT);
    let demand = ROTATION_CARRY_FRAC * object.mu_s * normal_force(&gripper, object);
    let mut contact = ContactState::at_rest();
    for k in 0..ROTATION_TICKS {
        let t = k as f64 * dt;
        let torque =
            ROTATION_TORQUE_AMP * (std::f64::consts::TAU * t / ROTATION_PERIOD_S + phase).sin();
        contact = grip_dynamics(&contact, &gripper, object, demand, dt);
        emit(&mut sim, contact, torque, t, sink);
    }
}

/// Phase of a vertical-slide run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlidePhase {
    Engaged,
    Disengaged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SlideMode {
    /// The object hangs on its own weight; slip follows the friction
    /// dynamics and the gripper command matters.
    Force,
    /// The arm drags the object at a commanded speed regardless of grip.
    Kinematic { v_cmd: f64 },
}

/// A grasped object on a vertical stroke.
///
/// In force mode the object's weight is the tangential demand and the
/// caller commands the gripper each tick; once the accumulated slide
/// exceeds the stroke the object has left the grasp. In kinematic mode
/// the arm imposes a trapezoidal speed profile over the same stroke.
#[derive(Debug, Clone)]
pub struct VerticalSlideEnv {
    object: ObjectSpec,
    sim: TactileSim,
    gripper: GripperState,
    contact: ContactState,
    mode: SlideMode,
    phase: SlidePhase,
    stroke_cm: f64,
    dt: f64,
    tick: usize,
    /// Ticks of the kinematic speed ramp at each end of the stroke.
    ramp_ticks: usize,
    decel_start: Option<usize>,
}

/// Default stroke length before the object leaves the grasp.
pub const DEFAULT_STROKE_CM: f64 = 7.0;
const KINEMATIC_RAMP_TICKS: usize = 6;

/// Force-mode arm motion: at rest until this tick, then a linear ramp.
pub const ARM_START_TICK: usize = 10;
/// Ticks the force-mode arm takes to reach cruise speed.
pub const ARM_RAMP_TICKS: usize = 6;
/// Force-mode arm cruise speed in cm/s.
pub const ARM_CRUISE_CM_S: f64 = 3.8;

/// Fastest the gripper can move per tick, in position units. The
/// actuator closes at finite speed, so a commanded correction larger
/// than this lands over several ticks rather than in one hop.
pub const P_SLEW_PER_TICK: f64 = 0.25;

impl VerticalSlideEnv {
    /// Grip at `margin` times the squeeze that exactly balances the
    /// object's weight. A margin just under one slips from the first
    /// tick; a margin slightly over one holds at rest and lets go when
    /// the arm ramp adds its inertial transient.
    ///
    /// A holding grip starts from the settled pose: the grasp predates
    /// the episode, so tick 0 renders a pad already charged by the
    /// weight rather than a first-touch transient that reads as slip
    /// onset. Below-threshold margins have no settled pose and start
    /// at first touch.
    pub fn new_force(
        object: ObjectSpec,
        cfg: TactileConfig,
        rng: ChaCha8Rng,
        margin: f64,
        stroke_cm: f64,
    ) -> Self {
        let weight = object.mass * GRAVITY;
        let squeeze_at_threshold = weight / (object.mu_s * object.k_obj);
        let p0 = P_CONTACT + margin * squeeze_at_threshold;
        let gripper = GripperState::new(p0, P_CONTACT);
        let mut sim = TactileSim::new(object.clone(), cfg, rng);
        let mut contact =
            grip_dynamics(&ContactState::at_rest(), &gripper, &object, weight, DEFAULT_DT);
        if contact.slipping {
            contact = ContactState::at_rest();
        } else {
            sim.settle(&contact);
        }
        Self {
            sim,
            gripper,
            contact,
            object,
            mode: SlideMode::Force,
            phase: SlidePhase::Engaged,
            stroke_cm,
            dt: DEFAULT_DT,
            tick: 0,
            ramp_ticks: KINEMATIC_RAMP_TICKS,
            decel_start: None,
        }
    }

    /// Drag at `v_cmd` cm/s under a grip a little below the slippage
    /// threshold, over `stroke_cm` of travel.
    pub fn new_kinematic(
        object: ObjectSpec,
        cfg: TactileConfig,
        rng: ChaCha8Rng,
        v_cmd: f64,
        stroke_cm: f64,
    ) -> Self {
        let weight = object.mass * GRAVITY;
        let squeeze = 0.9 * weight / (object.mu_s * object.k_obj);
        Self {
            sim: TactileSim::new(object.clone(), cfg, rng),
            gripper: GripperState::new(P_CONTACT + squeeze, P_CONTACT),
            contact: ContactState::at_rest(),
            object,
            mode: SlideMode::Kinematic { v_cmd },
            phase: SlidePhase::Engaged,
            stroke_cm,
            dt: DEFAULT_DT,
            tick: 0,
            ramp_ticks: KINEMATIC_RAMP_TICKS,
            decel_start: None,
        }
    }

    pub fn disengaged(&self) -> bool {
        self.phase == SlidePhase::Disengaged
    }

    pub fn contact(&self) -> &ContactState {
        &self.contact
    }

    pub fn p(&self) -> f64 {
        self.gripper.p
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one tick with the given gripper command. The command
    /// is a target: the jaws move toward it at most `P_SLEW_PER_TICK`
    /// per tick, so a large correction tightens the grip gradually.
    pub fn step(&mut self, p_command: f64) -> TickRecord {
        let delta = p_command.clamp(0.0, P_MAX) - self.gripper.p;
        self.gripper
            .set_p(self.gripper.p + delta.clamp(-P_SLEW_PER_TICK, P_SLEW_PER_TICK));
        let t = self.tick as f64 * self.dt;

        match self.phase {
            SlidePhase::Disengaged => {
                self.contact = ContactState {
                    slide_cm: self.contact.slide_cm,
                    ..ContactState::at_rest()
                };
            }
            SlidePhase::Engaged => {
                match self.mode {
                    SlideMode::Force => {
                        // Weight plus the inertial transient of the arm ramp.
                        // A grip that holds at rest can lose the object the
                        // moment the arm starts moving.
                        let demand = self.object.mass * (GRAVITY + self.arm_accel_cm_s2() / 100.0);
                        self.contact =
                            grip_dynamics(&self.contact, &self.gripper, &self.object, demand, self.dt);
                    }
                    SlideMode::Kinematic { v_cmd } => {
                        let v = self.kinematic_speed(v_cmd);
                        self.contact =
                            kinematic_slide(&self.contact, &self.gripper, &self.object, v, self.dt);
                    }
                }
                let past_stroke = self.contact.slide_cm >= self.stroke_cm;
                let stopped_after_decel = matches!(self.mode, SlideMode::Kinematic { .. })
                    && self.decel_start.is_some()
                    && self.contact.v_slip == 0.0;
                if (matches!(self.mode, SlideMode::Force) && past_stroke) || stopped_after_decel {
                    self.phase = SlidePhase::Disengaged;
                    self.contact = ContactState {
                        slide_cm: self.contact.slide_cm,
                        ..ContactState::at_rest()
                    };
                }
            }
        }

        let (field, depth) = self.sim.tick(&self.contact, 0.0, t);
        self.tick += 1;
        TickRecord {
            t,
            field,
            depth,
            contact: self.contact,
        }
    }

    /// Arm acceleration while its force-mode ramp is in progress.
    fn arm_accel_cm_s2(&self) -> f64 {
        if self.tick >= ARM_START_TICK && self.tick < ARM_START_TICK + ARM_RAMP_TICKS {
            ARM_CRUISE_CM_S / (ARM_RAMP_TICKS as f64 * self.dt)
        } else {
            0.0
        }
    }

    /// Trapezoidal profile: ramp in, cruise, ramp out past the stroke.
    fn kinematic_speed(&mut self, v_cmd: f64) -> f64 {
        if let Some(start) = self.decel_start {
            let j = self.tick - start;
            let frac = 1.0 - (j + 1) as f64 / self.ramp_ticks as f64;
            return v_cmd * frac.max(0.0);
        }
        if self.contact.slide_cm >= self.stroke_cm {
            self.decel_start = Some(self.tick);
            let frac = 1.0 - 1.0 / self.ramp_ticks as f64;
            return v_cmd * frac;
        }
        let frac = ((self.tick + 1) as f64 / self.ramp_ticks as f64).min(1.0);
        v_cmd * frac
    }
}
