//! Deformation-field math for marker-based tactile sensors.
//!
//! The gel surface carries a rectangular lattice of tracked markers
//! (7×9 = 63 by default). Each frame records the per-marker displacement
//! from the undisturbed reference lattice; this module turns frame pairs
//! into the scalar quantities the slip models consume: marker velocities,
//! field-summed divergence and curl, normalized contact area from a depth
//! map, Shannon entropy of displacement magnitudes, temporal rates, and
//! EWMA smoothing.
//!
//! Conventions: markers are stored row-major; the x axis runs along
//! columns and the y axis along rows (image convention, y grows with the
//! row index). All operations are pure functions of their inputs.

use thiserror::Error;

/// Default sensor sampling period in seconds (25 Hz).
pub const DEFAULT_DT: f64 = 0.04;

/// Default marker lattice shape.
pub const DEFAULT_ROWS: usize = 7;
/// Default marker lattice shape.
pub const DEFAULT_COLS: usize = 9;

/// Default lattice pitch in pixels, used when no reference lattice is given.
pub const DEFAULT_SPACING_PX: f64 = 30.0;

/// Default depth threshold for contact-area counting, in gel-depth units.
pub const DEFAULT_DEPTH_THRESHOLD: f64 = 1.0;

/// Errors from deformation-field operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("marker lattices do not match: {0}")]
    GeometryMismatch(String),
    #[error("lattice must be at least 3x3, got {rows}x{cols}")]
    LatticeTooSmall { rows: usize, cols: usize },
    #[error("sampling interval must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("operation requires a non-empty field")]
    EmptyField,
    #[error("invalid marker field: {0}")]
    InvalidField(String),
    #[error("invalid depth map: {0}")]
    InvalidDepthMap(String),
    #[error("entropy histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("entropy range is empty: [{lo}, {hi}]")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("EWMA smoothing factor must be in (0, 1], got {0}")]
    BadAlpha(f64),
}

/// Per-frame displacement field of the marker lattice.
///
/// `ref_positions` holds the undisturbed (x, y) pixel position of each
/// marker; `displacements` holds the (dx, dy) offset of each marker in the
/// current frame. Both are row-major with `rows * cols` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerField {
    timestamp: f64,
    rows: usize,
    cols: usize,
    ref_positions: Vec<[f64; 2]>,
    displacements: Vec<[f64; 2]>,
}

impl MarkerField {
    /// Builds a field, validating the lattice invariants: matching lengths
    /// and reference positions forming a strictly increasing rectangular
    /// lattice in both axes.
    pub fn new(
        timestamp: f64,
        rows: usize,
        cols: usize,
        ref_positions: Vec<[f64; 2]>,
        displacements: Vec<[f64; 2]>,
    ) -> Result<Self, FieldError> {
        let n = rows * cols;
        if n == 0 {
            return Err(FieldError::InvalidField("empty lattice".into()));
        }
        if ref_positions.len() != n {
            return Err(FieldError::InvalidField(format!(
                "expected {n} reference positions, got {}",
                ref_positions.len()
            )));
        }
        if displacements.len() != n {
            return Err(FieldError::InvalidField(format!(
                "expected {n} displacements, got {}",
                displacements.len()
            )));
        }
        // Rectangular lattice: x depends only on the column, y only on the
        // row, and both sequences are strictly increasing.
        for r in 0..rows {
            for c in 0..cols {
                let p = ref_positions[r * cols + c];
                if p[0] != ref_positions[c][0] || p[1] != ref_positions[r * cols][1] {
                    return Err(FieldError::InvalidField(
                        "reference positions are not a rectangular lattice".into(),
                    ));
                }
            }
        }
        for c in 1..cols {
            if ref_positions[c][0] <= ref_positions[c - 1][0] {
                return Err(FieldError::InvalidField(
                    "reference x positions must be strictly increasing".into(),
                ));
            }
        }
        for r in 1..rows {
            if ref_positions[r * cols][1] <= ref_positions[(r - 1) * cols][1] {
                return Err(FieldError::InvalidField(
                    "reference y positions must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            timestamp,
            rows,
            cols,
            ref_positions,
            displacements,
        })
    }

    /// Builds a zero-displacement field on a uniform lattice.
    pub fn uniform(
        timestamp: f64,
        rows: usize,
        cols: usize,
        origin: [f64; 2],
        spacing: GridSpacing,
    ) -> Result<Self, FieldError> {
        let mut refs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                refs.push([origin[0] + spacing.dx * c as f64, origin[1] + spacing.dy * r as f64]);
            }
        }
        let disp = vec![[0.0; 2]; rows * cols];
        Self::new(timestamp, rows, cols, refs, disp)
    }

    /// Builds the default 7×9 lattice at 30 px pitch.
    pub fn default_lattice(timestamp: f64) -> Self {
        Self::uniform(
            timestamp,
            DEFAULT_ROWS,
            DEFAULT_COLS,
            [40.0, 30.0],
            GridSpacing::new(DEFAULT_SPACING_PX, DEFAULT_SPACING_PX).unwrap(),
        )
        .expect("default lattice is valid")
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn set_timestamp(&mut self, t: f64) {
        self.timestamp = t;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of markers.
    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn ref_positions(&self) -> &[[f64; 2]] {
        &self.ref_positions
    }

    pub fn displacements(&self) -> &[[f64; 2]] {
        &self.displacements
    }

    pub fn displacements_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.displacements
    }

    /// Marker displacement at (row, col).
    pub fn displacement(&self, r: usize, c: usize) -> [f64; 2] {
        self.displacements[r * self.cols + c]
    }

    pub fn set_displacement(&mut self, r: usize, c: usize, d: [f64; 2]) {
        let cols = self.cols;
        self.displacements[r * cols + c] = d;
    }

    /// True when both fields share rows, cols, and reference lattice.
    pub fn same_lattice(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.ref_positions == other.ref_positions
    }

    /// Lattice pitch derived from the reference positions.
    pub fn spacing(&self) -> GridSpacing {
        if self.cols >= 2 && self.rows >= 2 {
            let dx = self.ref_positions[1][0] - self.ref_positions[0][0];
            let dy = self.ref_positions[self.cols][1] - self.ref_positions[0][1];
            GridSpacing::new(dx, dy).unwrap_or_default()
        } else {
            GridSpacing::default()
        }
    }
}

/// Per-marker velocity of the deformation field, px/s.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    velocities: Vec<[f64; 2]>,
    dt: f64,
}

impl VelocityField {
    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.velocities
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }
}

/// Depth image used for contact-area computation. Row-major, `m * n`
/// pixels with `m` the width and `n` the height.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

/// Default depth-map dimensions.
pub const DEFAULT_DEPTH_WIDTH: usize = 320;
/// Default depth-map dimensions.
pub const DEFAULT_DEPTH_HEIGHT: usize = 240;

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self, FieldError> {
        if width == 0 || height == 0 {
            return Err(FieldError::InvalidDepthMap("zero dimension".into()));
        }
        if depth.len() != width * height {
            return Err(FieldError::InvalidDepthMap(format!(
                "expected {} pixels, got {}",
                width * height,
                depth.len()
            )));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(FieldError::InvalidDepthMap(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    /// All-zero map at the default 320×240 resolution.
    pub fn zeroed_default() -> Self {
        Self {
            width: DEFAULT_DEPTH_WIDTH,
            height: DEFAULT_DEPTH_HEIGHT,
            depth: vec![0.0; DEFAULT_DEPTH_WIDTH * DEFAULT_DEPTH_HEIGHT],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    /// Mutable pixel access for the simulator; callers keep values >= 0.
    pub fn depth_mut(&mut self) -> &mut [f64] {
        &mut self.depth
    }
}

/// Pixel pitch between adjacent markers along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpacing {
    pub dx: f64,
    pub dy: f64,
}

impl GridSpacing {
    pub fn new(dx: f64, dy: f64) -> Result<Self, FieldError> {
        if dx <= 0.0 || dy <= 0.0 || !dx.is_finite() || !dy.is_finite() {
            return Err(FieldError::InvalidField(format!(
                "grid spacing must be positive, got ({dx}, {dy})"
            )));
        }
        Ok(Self { dx, dy })
    }
}

impl Default for GridSpacing {
    fn default() -> Self {
        Self {
            dx: DEFAULT_SPACING_PX,
            dy: DEFAULT_SPACING_PX,
        }
    }
}

/// Exponentially weighted moving average state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwmaState {
    alpha: f64,
    value: f64,
    initialized: bool,
}

impl EwmaState {
    pub fn new(alpha: f64) -> Result<Self, FieldError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FieldError::BadAlpha(alpha));
        }
        Ok(Self {
            alpha,
            value: 0.0,
            initialized: false,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current filtered value; 0 before the first sample.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// One EWMA step: the first sample seeds the filter, later samples blend
/// as `alpha * x + (1 - alpha) * value`.
pub fn ewma_update(state: EwmaState, x: f64) -> EwmaState {
    if state.initialized {
        EwmaState {
            value: state.alpha * x + (1.0 - state.alpha) * state.value,
            ..state
        }
    } else {
        EwmaState {
            value: x,
            initialized: true,
            ..state
        }
    }
}

/// Per-marker displacement rate between two frames of the same lattice.
pub fn marker_velocities(
    prev: &MarkerField,
    curr: &MarkerField,
    dt: f64,
) -> Result<VelocityField, FieldError> {
    if !prev.same_lattice(curr) {
        return Err(FieldError::GeometryMismatch(format!(
            "{}x{} vs {}x{}",
            prev.rows, prev.cols, curr.rows, curr.cols
        )));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(FieldError::NonPositiveDt(dt));
    }
    let velocities = prev
        .displacements
        .iter()
        .zip(&curr.displacements)
        .map(|(p, c)| [(c[0] - p[0]) / dt, (c[1] - p[1]) / dt])
        .collect();
    Ok(VelocityField { velocities, dt })
}

/// Mean velocity components and their L2 norm: (v̄_x, v̄_y, v̄_net).
pub fn mean_net_velocity(vel: &VelocityField) -> Result<(f64, f64, f64), FieldError> {
    if vel.is_empty() {
        return Err(FieldError::EmptyField);
    }
    let n = vel.len() as f64;
    let (sx, sy) = vel
        .velocities
        .iter()
        .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
    let vx = sx / n;
    let vy = sy / n;
    Ok((vx, vy, vx.hypot(vy)))
}

/// Field-summed discrete divergence and curl of the displacement field.
///
/// Each lattice node contributes a central-difference estimate in the
/// interior and a one-sided first difference on the boundary; node values
/// are summed over all markers. The x derivative runs along columns, the
/// y derivative along rows.
pub fn divergence_curl(
    field: &MarkerField,
    spacing: GridSpacing,
) -> Result<(f64, f64), FieldError> {
    let (rows, cols) = (field.rows, field.cols);
    if rows < 3 || cols < 3 {
        return Err(FieldError::LatticeTooSmall { rows, cols });
    }
    let d = &field.displacements;
    let at = |r: usize, c: usize| d[r * cols + c];
    let mut div = 0.0;
    let mut curl = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            // d/dx of both components at (r, c).
            let (ddx_x, ddy_x) = if c == 0 {
                let a = at(r, 0);
                let b = at(r, 1);
                ((b[0] - a[0]) / spacing.dx, (b[1] - a[1]) / spacing.dx)
            } else if c == cols - 1 {
                let a = at(r, c - 1);
                let b = at(r, c);
                ((b[0] - a[0]) / spacing.dx, (b[1] - a[1]) / spacing.dx)
            } else {
                let a = at(r, c - 1);
                let b = at(r, c + 1);
                (
                    (b[0] - a[0]) / (2.0 * spacing.dx),
                    (b[1] - a[1]) / (2.0 * spacing.dx),
                )
            };
            // d/dy of both components at (r, c).
            let (ddx_y, ddy_y) = if r == 0 {
                let a = at(0, c);
                let b = at(1, c);
                ((b[0] - a[0]) / spacing.dy, (b[1] - a[1]) / spacing.dy)
            } else if r == rows - 1 {
                let a = at(r - 1, c);
                let b = at(r, c);
                ((b[0] - a[0]) / spacing.dy, (b[1] - a[1]) / spacing.dy)
            } else {
                let a = at(r - 1, c);
                let b = at(r + 1, c);
                (
                    (b[0] - a[0]) / (2.0 * spacing.dy),
                    (b[1] - a[1]) / (2.0 * spacing.dy),
                )
            };
            div += ddx_x + ddy_y;
            curl += ddy_x - ddx_y;
        }
    }
    Ok((div, curl))
}

/// Finite-difference rate of change of a scalar between two ticks.
pub fn temporal_rate(prev: f64, curr: f64, dt: f64) -> Result<f64, FieldError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(FieldError::NonPositiveDt(dt));
    }
    Ok((curr - prev) / dt)
}

/// Fraction of depth pixels strictly above the threshold.
pub fn normalized_contact_area(depth: &DepthMap, z_t: f64) -> f64 {
    let over = depth.depth.iter().filter(|z| **z > z_t).count();
    over as f64 / (depth.width * depth.height) as f64
}

/// Shannon entropy (bits) of the histogram of displacement magnitudes.
///
/// Magnitudes are binned over `[lo, hi)` with values outside the range
/// clipped into the edge bins; `H = -sum p log2 p` with `0 log 0 = 0`.
pub fn displacement_entropy(
    field: &MarkerField,
    bins: usize,
    range: (f64, f64),
) -> Result<f64, FieldError> {
    if bins < 2 {
        return Err(FieldError::TooFewBins(bins));
    }
    let (lo, hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(FieldError::EmptyRange { lo, hi });
    }
    if field.is_empty() {
        return Err(FieldError::EmptyField);
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for d in &field.displacements {
        let mag = d[0].hypot(d[1]);
        let idx = if mag <= lo {
            0
        } else {
            (((mag - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    let n = field.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// Default entropy histogram configuration: 16 bins over [0, 10] px.
pub const DEFAULT_ENTROPY_BINS: usize = 16;
/// Default entropy histogram configuration: 16 bins over [0, 10] px.
pub const DEFAULT_ENTROPY_RANGE: (f64, f64) = (0.0, 10.0);

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field_from_fn(
        rows: usize,
        cols: usize,
        spacing: f64,
        mut f: impl FnMut(f64, f64) -> [f64; 2],
    ) -> MarkerField {
        let sp = GridSpacing::new(spacing, spacing).unwrap();
        let mut field = MarkerField::uniform(0.0, rows, cols, [0.0, 0.0], sp).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let p = field.ref_positions()[r * cols + c];
                field.set_displacement(r, c, f(p[0], p[1]));
            }
        }
        field
    }

    fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> MarkerField {
        field_from_fn(rows, cols, 30.0, |_, _| {
            [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]
        })
    }

    // Independent double-loop stencil reference for divergence/curl. Kept
    // deliberately separate from the implementation: indexes the flat
    // array directly and evaluates one node at a time.
    pub(crate) fn divergence_curl_oracle(field: &MarkerField, sp: GridSpacing) -> (f64, f64) {
        let rows = field.rows();
        let cols = field.cols();
        let d = field.displacements();
        let mut div_sum = 0.0;
        let mut curl_sum = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let dx_of = |comp: usize| -> f64 {
                    if c == 0 {
                        (d[r * cols + 1][comp] - d[r * cols][comp]) / sp.dx
                    } else if c == cols - 1 {
                        (d[r * cols + c][comp] - d[r * cols + c - 1][comp]) / sp.dx
                    } else {
                        (d[r * cols + c + 1][comp] - d[r * cols + c - 1][comp]) / (2.0 * sp.dx)
                    }
                };
                let dy_of = |comp: usize| -> f64 {
                    if r == 0 {
                        (d[cols + c][comp] - d[c][comp]) / sp.dy
                    } else if r == rows - 1 {
                        (d[r * cols + c][comp] - d[(r - 1) * cols + c][comp]) / sp.dy
                    } else {
                        (d[(r + 1) * cols + c][comp] - d[(r - 1) * cols + c][comp]) / (2.0 * sp.dy)
                    }
                };
                div_sum += dx_of(0) + dy_of(1);
                curl_sum += dx_of(1) - dy_of(0);
            }
        }
        (div_sum, curl_sum)
    }

    #[test]
    fn velocity_direct_arithmetic() {
        let prev = MarkerField::default_lattice(0.0);
        let mut curr = MarkerField::default_lattice(0.04);
        for d in curr.displacements_mut() {
            d[0] = 0.2;
        }
        let v = marker_velocities(&prev, &curr, 0.04).unwrap();
        for vm in v.velocities() {
            assert_relative_eq!(vm[0], 5.0, max_relative = 1e-12);
            assert_relative_eq!(vm[1], 0.0);
        }
    }

    #[test]
    fn velocity_identity_is_zero() {
        let f = MarkerField::default_lattice(0.0);
        let v = marker_velocities(&f, &f, 0.04).unwrap();
        assert!(v.velocities().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn velocity_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prev = random_field(&mut rng, 7, 9);
        let mut curr = prev.clone();
        for d in curr.displacements_mut() {
            d[0] += rng.gen_range(-1.0..1.0);
            d[1] += rng.gen_range(-1.0..1.0);
        }
        let dt = 0.04;
        let v = marker_velocities(&prev, &curr, dt).unwrap();
        for i in 0..prev.len() {
            let expect_x = (curr.displacements()[i][0] - prev.displacements()[i][0]) / dt;
            let expect_y = (curr.displacements()[i][1] - prev.displacements()[i][1]) / dt;
            assert_eq!(v.velocities()[i][0], expect_x);
            assert_eq!(v.velocities()[i][1], expect_y);
        }
    }

    #[test]
    fn velocity_rejects_bad_dt_and_geometry() {
        let a = MarkerField::default_lattice(0.0);
        assert!(matches!(
            marker_velocities(&a, &a, 0.0),
            Err(FieldError::NonPositiveDt(_))
        ));
        let b = MarkerField::uniform(0.0, 5, 5, [0.0, 0.0], GridSpacing::default()).unwrap();
        assert!(matches!(
            marker_velocities(&a, &b, 0.04),
            Err(FieldError::GeometryMismatch(_))
        ));
    }

    #[test]
    fn velocity_linearity_in_displacements() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = random_field(&mut rng, 7, 9);
        let curr = random_field(&mut rng, 7, 9);
        let scale = 2.5;
        let scale_field = |f: &MarkerField| {
            let mut g = f.clone();
            for d in g.displacements_mut() {
                d[0] *= scale;
                d[1] *= scale;
            }
            g
        };
        let v = marker_velocities(&prev, &curr, 0.04).unwrap();
        let vs = marker_velocities(&scale_field(&prev), &scale_field(&curr), 0.04).unwrap();
        for (a, b) in v.velocities().iter().zip(vs.velocities()) {
            assert_relative_eq!(b[0], scale * a[0], max_relative = 1e-12);
            assert_relative_eq!(b[1], scale * a[1], max_relative = 1e-12);
        }
    }

    #[test]
    fn mean_velocity_three_four_five() {
        let prev = MarkerField::default_lattice(0.0);
        let mut curr = MarkerField::default_lattice(1.0);
        for d in curr.displacements_mut() {
            *d = [3.0, 4.0];
        }
        let v = marker_velocities(&prev, &curr, 1.0).unwrap();
        let (vx, vy, vnet) = mean_net_velocity(&v).unwrap();
        assert_eq!((vx, vy, vnet), (3.0, 4.0, 5.0));
    }

    #[test]
    fn mean_velocity_symmetry_cancels() {
        let prev = MarkerField::uniform(0.0, 7, 10, [0.0, 0.0], GridSpacing::default()).unwrap();
        let mut curr = prev.clone();
        for (i, d) in curr.displacements_mut().iter_mut().enumerate() {
            d[0] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let v = marker_velocities(&prev, &curr, 1.0).unwrap();
        assert_eq!(mean_net_velocity(&v).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mean_velocity_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let prev = random_field(&mut rng, 7, 9);
            let curr = random_field(&mut rng, 7, 9);
            let v = marker_velocities(&prev, &curr, 0.04).unwrap();
            let (vx, vy, vnet) = mean_net_velocity(&v).unwrap();
            let n = v.len() as f64;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for vm in v.velocities() {
                sx += vm[0];
                sy += vm[1];
            }
            assert_relative_eq!(vx, sx / n, max_relative = 1e-12);
            assert_relative_eq!(vy, sy / n, max_relative = 1e-12);
            assert_relative_eq!(vnet, ((sx / n).powi(2) + (sy / n).powi(2)).sqrt(), max_relative = 1e-12);
            assert!(vnet >= vx.abs() - 1e-15 && vnet >= vy.abs() - 1e-15);
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        let (a, b) = (0.5, 0.5);
        let f = field_from_fn(7, 9, 1.0, |x, y| [a * x, b * y]);
        let (div, curl) = divergence_curl(&f, GridSpacing::new(1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(div, 63.0 * (a + b), max_relative = 1e-12);
        assert_relative_eq!(curl, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_of_constant_field_is_zero() {
        let f = field_from_fn(7, 9, 1.0, |_, _| [2.5, 2.5]);
        let (div, curl) = divergence_curl(&f, GridSpacing::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!((div, curl), (0.0, 0.0));
    }

    #[test]
    fn curl_of_rotation_field() {
        let omega = 0.1;
        // Center the rotation on the lattice so the field is exactly linear.
        let f = field_from_fn(7, 9, 1.0, |x, y| [-omega * (y - 3.0), omega * (x - 4.0)]);
        let sp = GridSpacing::new(1.0, 1.0).unwrap();
        let (div, curl) = divergence_curl(&f, sp).unwrap();
        assert_relative_eq!(div, 0.0, epsilon = 1e-12);
        assert_relative_eq!(curl, 63.0 * 2.0 * omega, max_relative = 1e-12);
        let (odiv, ocurl) = divergence_curl_oracle(&f, sp);
        assert_relative_eq!(div, odiv, epsilon = 1e-12);
        assert_relative_eq!(curl, ocurl, epsilon = 1e-12);
    }

    #[test]
    fn divergence_rejects_small_lattice() {
        let f = MarkerField::uniform(0.0, 2, 9, [0.0, 0.0], GridSpacing::default()).unwrap();
        assert!(matches!(
            divergence_curl(&f, GridSpacing::default()),
            Err(FieldError::LatticeTooSmall { .. })
        ));
    }

    #[test]
    fn divergence_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let f = random_field(&mut rng, 7, 9);
        let sp = f.spacing();
        let (div, curl) = divergence_curl(&f, sp).unwrap();
        let mut g = f.clone();
        for d in g.displacements_mut() {
            d[0] += 3.25;
            d[1] -= 1.5;
        }
        let (div2, curl2) = divergence_curl(&g, sp).unwrap();
        assert_relative_eq!(div, div2, epsilon = 1e-9);
        assert_relative_eq!(curl, curl2, epsilon = 1e-9);
    }

    #[test]
    fn divergence_matches_oracle_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let rows = rng.gen_range(3..8);
            let cols = rng.gen_range(3..10);
            let f = random_field(&mut rng, rows, cols);
            let sp = GridSpacing::new(rng.gen_range(5.0..40.0), rng.gen_range(5.0..40.0)).unwrap();
            let (div, curl) = divergence_curl(&f, sp).unwrap();
            let (odiv, ocurl) = divergence_curl_oracle(&f, sp);
            assert_relative_eq!(div, odiv, max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(curl, ocurl, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn temporal_rate_arithmetic() {
        assert_relative_eq!(temporal_rate(1.0, 1.5, 0.04).unwrap(), 12.5, max_relative = 1e-12);
        assert_eq!(temporal_rate(2.0, 2.0, 0.04).unwrap(), 0.0);
        assert_relative_eq!(
            temporal_rate(0.10, 0.08, 0.04).unwrap(),
            -0.5,
            max_relative = 1e-12
        );
        assert!(temporal_rate(1.0, 2.0, 0.0).is_err());
        assert!(temporal_rate(1.0, 2.0, -0.5).is_err());
    }

    #[test]
    fn contact_area_counting() {
        let zero = DepthMap::zeroed_default();
        assert_eq!(normalized_contact_area(&zero, 1.0), 0.0);

        let mut depth = vec![0.0; 320 * 240];
        for d in depth.iter_mut().take(7_680) {
            *d = 2.0;
        }
        let map = DepthMap::new(320, 240, depth).unwrap();
        assert_eq!(normalized_contact_area(&map, 1.0), 0.1);

        // Strict inequality: pixels exactly at the threshold do not count.
        let flat = DepthMap::new(320, 240, vec![1.0; 320 * 240]).unwrap();
        assert_eq!(normalized_contact_area(&flat, 1.0), 0.0);
    }

    #[test]
    fn contact_area_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let depth: Vec<f64> = (0..320 * 240).map(|_| rng.gen_range(0.0..3.0)).collect();
        let map = DepthMap::new(320, 240, depth).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let z = i as f64 * 0.1;
            let a = normalized_contact_area(&map, z);
            assert!(a <= prev);
            assert!((0.0..=1.0).contains(&a));
            prev = a;
        }
    }

    #[test]
    fn entropy_single_bin_is_zero() {
        let f = field_from_fn(7, 9, 30.0, |_, _| [3.0, 0.0]);
        let h = displacement_entropy(&f, 16, (0.0, 10.0)).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn entropy_uniform_sixteen_bins() {
        // 64 markers, 4 per bin, magnitudes placed at bin centers.
        let mut f = MarkerField::uniform(0.0, 8, 8, [0.0, 0.0], GridSpacing::default()).unwrap();
        let width = 10.0 / 16.0;
        for i in 0..64 {
            let bin = i % 16;
            let mag = (bin as f64 + 0.5) * width;
            f.displacements_mut()[i] = [mag, 0.0];
        }
        let h = displacement_entropy(&f, 16, (0.0, 10.0)).unwrap();
        assert_relative_eq!(h, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn entropy_matches_histogram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let f = random_field(&mut rng, 7, 9);
            let bins = rng.gen_range(2..32);
            let h = displacement_entropy(&f, bins, (0.0, 8.0)).unwrap();

            // Oracle: build the histogram independently and sum -p log2 p.
            let mut counts = vec![0usize; bins];
            for d in f.displacements() {
                let mag = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let w = 8.0 / bins as f64;
                let mut idx = ((mag - 0.0) / w).floor() as isize;
                if idx < 0 {
                    idx = 0;
                }
                if idx as usize >= bins {
                    idx = bins as isize - 1;
                }
                counts[idx as usize] += 1;
            }
            let n = f.len() as f64;
            let oracle: f64 = counts
                .iter()
                .filter(|c| **c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum();
            assert_relative_eq!(h, oracle, max_relative = 1e-12, epsilon = 1e-12);
            assert!(h >= 0.0 && h <= (bins as f64).log2() + 1e-12);
        }
    }

    #[test]
    fn entropy_rejects_bad_inputs() {
        let f = MarkerField::default_lattice(0.0);
        assert!(matches!(
            displacement_entropy(&f, 1, (0.0, 1.0)),
            Err(FieldError::TooFewBins(1))
        ));
        assert!(matches!(
            displacement_entropy(&f, 8, (2.0, 2.0)),
            Err(FieldError::EmptyRange { .. })
        ));
    }

    #[test]
    fn ewma_direct_formula() {
        let mut s = EwmaState::new(0.3).unwrap();
        s = ewma_update(s, 10.0);
        assert_eq!(s.value(), 10.0);
        s = ewma_update(s, 20.0);
        assert_relative_eq!(s.value(), 13.0, max_relative = 1e-12);
    }

    #[test]
    fn ewma_first_sample_initializes() {
        let s = ewma_update(EwmaState::new(0.5).unwrap(), 5.0);
        assert_eq!(s.value(), 5.0);
        assert!(s.is_initialized());
    }

    #[test]
    fn ewma_constant_stream_fixed_point() {
        let mut s = EwmaState::new(0.2).unwrap();
        for _ in 0..100 {
            s = ewma_update(s, 7.5);
        }
        assert_relative_eq!(s.value(), 7.5, max_relative = 1e-12);
    }

    #[test]
    fn ewma_closed_form_after_k_constant_inputs() {
        let alpha = 0.3;
        let v0 = 2.0;
        let c = 9.0;
        let mut s = ewma_update(EwmaState::new(alpha).unwrap(), v0);
        let k = 17;
        for _ in 0..k {
            s = ewma_update(s, c);
        }
        let expect = c + (1.0 - alpha).powi(k) * (v0 - c);
        assert_relative_eq!(s.value(), expect, max_relative = 1e-12);
    }

    #[test]
    fn ewma_rejects_bad_alpha() {
        assert!(EwmaState::new(0.0).is_err());
        assert!(EwmaState::new(1.5).is_err());
        assert!(EwmaState::new(1.0).is_ok());
    }

    #[test]
    fn lattice_validation() {
        // Non-rectangular reference positions are rejected.
        let mut refs = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                refs.push([c as f64 * 10.0 + r as f64, r as f64 * 10.0]);
            }
        }
        assert!(MarkerField::new(0.0, 3, 3, refs, vec![[0.0; 2]; 9]).is_err());

        // Length mismatch.
        assert!(MarkerField::new(0.0, 3, 3, vec![[0.0; 2]; 9], vec![[0.0; 2]; 8]).is_err());
    }
}
