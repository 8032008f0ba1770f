//! Object parameter library.
//!
//! Fifteen training specs plus five evaluation-only specs. Parameters
//! are synthetic analogues chosen for difficulty spread, not
//! measurements of real items: the sponge is deliberately the hardest
//! (soft, porous contact, noisy texture) and the pipe is the
//! closed-loop grasp target.

/// Contact-relevant physical description of one graspable object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub name: String,
    /// Static friction coefficient; slip starts above `mu_s * F_n`.
    pub mu_s: f64,
    /// Kinetic friction coefficient, strictly below `mu_s`.
    pub mu_k: f64,
    /// Newtons of normal force per gripper position unit of squeeze.
    pub k_obj: f64,
    /// Kilograms.
    pub mass: f64,
    /// Marker noise sigma, px per tick.
    pub texture_noise: f64,
    /// 0 = rigid, 1 = very soft; scales contact patch growth.
    pub deformability: f64,
    /// Nominal contact patch radius, px.
    pub contact_radius: f64,
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mu_k > 0.0 && self.mu_k < self.mu_s) {
            return Err(format!(
                "{}: need 0 < mu_k < mu_s, got mu_k={} mu_s={}",
                self.name, self.mu_k, self.mu_s
            ));
        }
        if self.mass <= 0.0 {
            return Err(format!("{}: mass must be positive", self.name));
        }
        if self.texture_noise < 0.0 {
            return Err(format!("{}: texture noise must be >= 0", self.name));
        }
        if !(0.0..=1.0).contains(&self.deformability) {
            return Err(format!("{}: deformability must be in [0,1]", self.name));
        }
        if self.k_obj <= 0.0 || self.contact_radius <= 0.0 {
            return Err(format!("{}: stiffness and radius must be positive", self.name));
        }
        Ok(())
    }
}

fn spec(
    name: &str,
    mu_s: f64,
    mu_k: f64,
    k_obj: f64,
    mass: f64,
    texture_noise: f64,
    deformability: f64,
    contact_radius: f64,
) -> ObjectSpec {
    ObjectSpec {
        name: name.to_string(),
        mu_s,
        mu_k,
        k_obj,
        mass,
        texture_noise,
        deformability,
        contact_radius,
    }
}

/// The fifteen specs used for corpus generation and cross-validation.
///
/// Kinetic friction sits within a few percent of static everywhere:
/// with a wide gap, gram-scale objects would accelerate tens of cm/s
/// per tick the instant the cone is exceeded, which matches neither
/// real slips nor the cm/s severity scale.
pub fn training_objects() -> Vec<ObjectSpec> {
    vec![
        spec("book", 0.82, 0.775, 0.42, 0.45, 0.050, 0.15, 62.0),
        spec("plank", 0.95, 0.915, 0.55, 0.60, 0.060, 0.08, 70.0),
        spec("scissors", 0.58, 0.545, 0.60, 0.12, 0.045, 0.05, 42.0),
        spec("duster", 0.75, 0.700, 0.30, 0.18, 0.110, 0.45, 55.0),
        spec("mug", 0.68, 0.645, 0.52, 0.38, 0.040, 0.06, 50.0),
        spec("bottle", 0.62, 0.580, 0.45, 0.50, 0.055, 0.20, 52.0),
        spec("tape_roll", 0.88, 0.830, 0.38, 0.10, 0.070, 0.30, 48.0),
        spec("stapler", 0.72, 0.680, 0.50, 0.28, 0.050, 0.10, 46.0),
        spec("carton", 0.80, 0.745, 0.28, 0.22, 0.080, 0.40, 66.0),
        spec("tennis_ball", 0.90, 0.860, 0.22, 0.06, 0.095, 0.60, 58.0),
        spec("steel_cup", 0.55, 0.520, 0.62, 0.30, 0.035, 0.04, 44.0),
        spec("remote", 0.70, 0.660, 0.48, 0.15, 0.048, 0.12, 45.0),
        spec("hairbrush", 0.78, 0.730, 0.35, 0.14, 0.090, 0.35, 49.0),
        spec("wallet", 0.85, 0.805, 0.32, 0.20, 0.075, 0.50, 56.0),
        spec("soda_can", 0.60, 0.565, 0.44, 0.35, 0.042, 0.08, 47.0),
    ]
}

/// Five specs never seen in training. The sponge is the deliberately
/// hard case (soft, small noisy contact); the pipe is the closed-loop
/// grasp target with kinetic friction close to static so slip builds
/// gently.
pub fn unseen_objects() -> Vec<ObjectSpec> {
    vec![
        spec("sponge", 0.70, 0.655, 0.12, 0.05, 0.300, 0.90, 36.0),
        spec("pipe", 0.55, 0.540, 0.50, 0.40, 0.045, 0.05, 48.0),
        spec("glass_jar", 0.52, 0.485, 0.58, 0.42, 0.038, 0.05, 51.0),
        spec("rubber_duck", 0.92, 0.870, 0.25, 0.08, 0.085, 0.65, 54.0),
        spec("foam_brick", 0.76, 0.715, 0.16, 0.07, 0.140, 0.80, 60.0),
    ]
}

/// Looks a spec up across both libraries.
pub fn object_by_name(name: &str) -> Option<ObjectSpec> {
    training_objects()
        .into_iter()
        .chain(unseen_objects())
        .find(|o| o.name == name)
}
