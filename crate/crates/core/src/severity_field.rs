//! Collision severity fields around static and moving obstacles.
//!
//! Each obstacle carries a normalized shape function (a unit disc or unit
//! square with a quartic-exponential fuzzy rim), scaled to its footprint and
//! placed by a time-dependent pose. The severity an ego point experiences is
//! the obstacle rating times the relative speed times the shape value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vehicle_model::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Rectangle,
}

/// Footprint of an obstacle: half-extents along the obstacle's own axes plus
/// the width of the fuzzy rim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams<T> {
    pub kind: ShapeKind,
    pub half_length_a: T,
    pub half_width_b: T,
    pub fuzzy_d: T,
}

impl<T: Scalar> ShapeParams<T> {
    pub fn new(kind: ShapeKind, half_length_a: T, half_width_b: T, fuzzy_d: T) -> Result<Self> {
        let shape = Self {
            kind,
            half_length_a,
            half_width_b,
            fuzzy_d,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn circle(radius: T, fuzzy_d: T) -> Result<Self> {
        Self::new(ShapeKind::Circle, radius, radius, fuzzy_d)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v.is_finite() && v > T::zero();
        if !positive(self.half_length_a) || !positive(self.half_width_b) {
            return Err(Error::Domain(format!(
                "half extents must be finite and > 0, got a = {}, b = {}",
                self.half_length_a, self.half_width_b
            )));
        }
        if !positive(self.fuzzy_d) {
            return Err(Error::Domain(format!(
                "fuzzy margin d must be finite and > 0, got {}",
                self.fuzzy_d
            )));
        }
        Ok(())
    }

    /// Radius around the center outside which the shape value is exactly
    /// zero in floating point (see the cutoff in `rim`).
    #[inline]
    fn support_radius(&self) -> T {
        self.half_length_a.max(self.half_width_b) * (T::lit(std::f64::consts::SQRT_2) + T::lit(5.4) * self.fuzzy_d)
    }

    /// Shape value at a point already expressed in the obstacle frame.
    #[inline]
    fn value_unchecked(&self, x: T, y: T) -> T {
        let u = x / self.half_length_a;
        let w = y / self.half_width_b;
        match self.kind {
            ShapeKind::Circle => circle_profile(u.hypot(w), self.fuzzy_d),
            ShapeKind::Rectangle => rect_profile(u, w, self.fuzzy_d),
        }
    }
}

/// Constant-velocity obstacle motion with a fixed body orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleMotion<T> {
    pub center_x0: T,
    pub center_y0: T,
    pub heading0: T,
    pub speed: T,
    pub heading_of_travel: T,
}

impl<T: Scalar> ObstacleMotion<T> {
    pub fn stationary(x: T, y: T, heading: T) -> Self {
        Self {
            center_x0: x,
            center_y0: y,
            heading0: heading,
            speed: T::zero(),
            heading_of_travel: T::zero(),
        }
    }

    #[inline]
    pub fn center(&self, t: T) -> (T, T) {
        if self.speed == T::zero() {
            return (self.center_x0, self.center_y0);
        }
        let (s, c) = self.heading_of_travel.sin_cos();
        let dist = self.speed * t;
        (self.center_x0 + dist * c, self.center_y0 + dist * s)
    }

    #[inline]
    pub fn orientation(&self, _t: T) -> T {
        self.heading0
    }

    #[inline]
    pub fn velocity(&self) -> (T, T) {
        let (s, c) = self.heading_of_travel.sin_cos();
        (self.speed * c, self.speed * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle<T> {
    pub id: String,
    pub shape: ShapeParams<T>,
    pub motion: ObstacleMotion<T>,
    pub severity_c: T,
}

impl<T: Scalar> Obstacle<T> {
    pub fn new(
        id: impl Into<String>,
        shape: ShapeParams<T>,
        motion: ObstacleMotion<T>,
        severity_c: T,
    ) -> Result<Self> {
        let obstacle = Self {
            id: id.into(),
            shape,
            motion,
            severity_c,
        };
        obstacle.validate()?;
        Ok(obstacle)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.severity_c.is_finite() && self.severity_c >= T::zero()) {
            return Err(Error::Domain(format!(
                "obstacle {}: severity rating must be finite and >= 0, got {}",
                self.id, self.severity_c
            )));
        }
        if !(self.motion.speed.is_finite() && self.motion.speed >= T::zero()) {
            return Err(Error::Domain(format!(
                "obstacle {}: speed must be finite and >= 0, got {}",
                self.id, self.motion.speed
            )));
        }
        Ok(())
    }

    pub fn with_rating(mut self, severity_c: T) -> Self {
        self.severity_c = severity_c;
        self
    }
}

/// Which branch of the rectangle profile a normalized point falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RectRegion {
    Core,
    Edge,
    Corner,
}

#[inline]
fn rim<T: Scalar>(excess: T, d: T) -> T {
    let s = excess / d;
    let s2 = s * s;
    let s4 = s2 * s2;
    // exp underflows to exactly zero well before this
    if s4 > T::lit(800.0) {
        return T::zero();
    }
    (-s4).exp()
}

#[inline]
fn circle_profile<T: Scalar>(r: T, d: T) -> T {
    if r <= T::one() {
        T::one()
    } else {
        rim(r - T::one(), d)
    }
}

pub fn rect_region<T: Scalar>(x: T, y: T) -> RectRegion {
    let (ax, ay) = (x.abs(), y.abs());
    if ax.max(ay) <= T::one() {
        RectRegion::Core
    } else if ax <= T::one() || ay <= T::one() {
        RectRegion::Edge
    } else {
        RectRegion::Corner
    }
}

#[inline]
fn rect_profile<T: Scalar>(x: T, y: T, d: T) -> T {
    let (ax, ay) = (x.abs(), y.abs());
    match rect_region(x, y) {
        RectRegion::Core => T::one(),
        RectRegion::Edge => rim(ax.max(ay) - T::one(), d),
        // folding by |x|, |y| selects the nearest of the four corners (±1, ±1)
        RectRegion::Corner => rim((ax - T::one()).hypot(ay - T::one()), d),
    }
}

fn check_inputs<T: Scalar>(x: T, y: T, d: T) -> Result<()> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Domain(format!("non-finite point ({x}, {y})")));
    }
    if !(d.is_finite() && d > T::zero()) {
        return Err(Error::Domain(format!("fuzzy margin d must be > 0, got {d}")));
    }
    Ok(())
}

/// Unit disc with fuzzy rim: 1 on the closed disc, `exp(-((r-1)/d)^4)` outside.
pub fn unit_circle_shape<T: Scalar>(x: T, y: T, d: T) -> Result<T> {
    check_inputs(x, y, d)?;
    Ok(circle_profile(x.hypot(y), d))
}

/// Unit square with fuzzy rim. Edge bands decay with the max-norm excess,
/// corner quadrants with the Euclidean distance to the nearest corner.
pub fn unit_rect_shape<T: Scalar>(x: T, y: T, d: T) -> Result<T> {
    check_inputs(x, y, d)?;
    Ok(rect_profile(x, y, d))
}

/// Shape value at an obstacle-frame point, scaled to the footprint.
pub fn scaled_shape<T: Scalar>(x: T, y: T, shape: &ShapeParams<T>) -> Result<T> {
    shape.validate()?;
    check_inputs(x, y, shape.fuzzy_d)?;
    Ok(shape.value_unchecked(x, y))
}

/// Expresses a world point in the frame of the obstacle at time `t`:
/// `Rᵀ(φ_c) · ((x, y) − center(t))`.
#[inline]
pub fn to_obstacle_frame<T: Scalar>(t: T, x: T, y: T, motion: &ObstacleMotion<T>) -> (T, T) {
    let (cx, cy) = motion.center(t);
    let (s, c) = motion.orientation(t).sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    (dx * c + dy * s, -dx * s + dy * c)
}

/// Euclidean norm of the ego velocity minus the obstacle velocity.
#[inline]
pub fn relative_speed<T: Scalar>(v: T, heading: T, motion: &ObstacleMotion<T>) -> T {
    let (s, c) = heading.sin_cos();
    let (ox, oy) = motion.velocity();
    (v * c - ox).hypot(v * s - oy)
}

#[inline]
fn severity_unchecked<T: Scalar>(t: T, x: T, y: T, v: T, heading: T, obstacle: &Obstacle<T>) -> T {
    if obstacle.severity_c == T::zero() {
        return T::zero();
    }
    let (cx, cy) = obstacle.motion.center(t);
    let (dx, dy) = (x - cx, y - cy);
    let reach = obstacle.shape.support_radius();
    if dx * dx + dy * dy > reach * reach {
        return T::zero();
    }
    let (xp, yp) = to_obstacle_frame(t, x, y, &obstacle.motion);
    let shape = obstacle.shape.value_unchecked(xp, yp);
    if shape == T::zero() {
        return T::zero();
    }
    obstacle.severity_c * relative_speed(v, heading, &obstacle.motion) * shape
}

/// Collision severity `C · V_r · f_d` seen by an ego point at `(x, y)` moving
/// with speed `v` along `heading`.
pub fn severity<T: Scalar>(
    t: T,
    x: T,
    y: T,
    v: T,
    heading: T,
    obstacle: &Obstacle<T>,
) -> Result<T> {
    obstacle.validate()?;
    for (name, value) in [("t", t), ("x", x), ("y", y), ("v", v), ("heading", heading)] {
        if !value.is_finite() {
            return Err(Error::Domain(format!("non-finite {name} = {value}")));
        }
    }
    Ok(severity_unchecked(t, x, y, v, heading, obstacle))
}

/// Per-obstacle severity at a vehicle state. Non-finite states propagate as NaN.
pub fn severities<'a, T: Scalar>(
    t: T,
    state: &'a VehicleState<T>,
    obstacles: &'a [Obstacle<T>],
) -> impl Iterator<Item = T> + 'a {
    obstacles
        .iter()
        .map(move |o| severity_unchecked(t, state.x, state.y, state.v, state.phi, o))
}

/// Sum of squared severities: the instantaneous contribution to the total
/// collision severity cost.
pub fn severity_rate<T: Scalar>(t: T, state: &VehicleState<T>, obstacles: &[Obstacle<T>]) -> T {
    severities(t, state, obstacles).fold(T::zero(), |acc, cs| acc + cs * cs)
}

/// Partial derivatives of [`severity_rate`] with respect to the state
/// components that enter it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateGradient<T> {
    pub d_x: T,
    pub d_y: T,
    pub d_v: T,
    pub d_phi: T,
}

/// Central finite-difference gradient of [`severity_rate`] with
/// `h = max(1e-6, 1e-6·|component|)`.
pub fn severity_gradient<T: Scalar>(
    t: T,
    state: &VehicleState<T>,
    obstacles: &[Obstacle<T>],
) -> RateGradient<T> {
    severity_gradient_with_step(t, state, obstacles, T::lit(1e-6))
}

/// As [`severity_gradient`] with a caller-chosen relative step.
pub fn severity_gradient_with_step<T: Scalar>(
    t: T,
    state: &VehicleState<T>,
    obstacles: &[Obstacle<T>],
    rel_step: T,
) -> RateGradient<T> {
    let diff = |perturb: fn(&mut VehicleState<T>, T), component: T| {
        let h = rel_step.max(rel_step * component.abs());
        let mut plus = *state;
        let mut minus = *state;
        perturb(&mut plus, h);
        perturb(&mut minus, -h);
        (severity_rate(t, &plus, obstacles) - severity_rate(t, &minus, obstacles)) / (h + h)
    };
    RateGradient {
        d_x: diff(|s, h| s.x = s.x + h, state.x),
        d_y: diff(|s, h| s.y = s.y + h, state.y),
        d_v: diff(|s, h| s.v = s.v + h, state.v),
        d_phi: diff(|s, h| s.phi = s.phi + h, state.phi),
    }
}

/// One sample of a rasterized severity map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterCell<T> {
    pub x: T,
    pub y: T,
    pub value: T,
}

/// Region and resolution for [`severity_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterGrid<T> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
    pub nx: usize,
    pub ny: usize,
}

/// Total severity `Σ cs_i` over a regular grid at time `t`, for an ego moving
/// with the given speed and heading. Rows are ordered y-major.
pub fn severity_map<T: Scalar>(
    t: T,
    obstacles: &[Obstacle<T>],
    ego_speed: T,
    ego_heading: T,
    grid: &RasterGrid<T>,
) -> Result<Vec<RasterCell<T>>> {
    if grid.nx < 2 || grid.ny < 2 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min) {
        return Err(Error::Domain("raster grid needs nx, ny >= 2 and a non-empty box".into()));
    }
    let step = |lo: T, hi: T, n: usize, i: usize| {
        lo + (hi - lo) * T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap()
    };
    let mut cells = Vec::with_capacity(grid.nx * grid.ny);
    for j in 0..grid.ny {
        let y = step(grid.y_min, grid.y_max, grid.ny, j);
        for i in 0..grid.nx {
            let x = step(grid.x_min, grid.x_max, grid.nx, i);
            let mut value = T::zero();
            for o in obstacles {
                value = value + severity(t, x, y, ego_speed, ego_heading, o)?;
            }
            cells.push(RasterCell { x, y, value });
        }
    }
    Ok(cells)
}
