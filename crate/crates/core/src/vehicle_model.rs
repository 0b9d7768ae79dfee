//! Kinematic single-track vehicle with a first-order steering lag, and a
//! fixed-step RK4 integrator for piecewise-constant controls.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams<T> {
    /// Distance between front and rear axle.
    pub wheelbase: T,
    /// Time constant between commanded and actual steering angle.
    pub steering_lag: T,
}

impl<T: Scalar> Default for VehicleParams<T> {
    fn default() -> Self {
        Self {
            wheelbase: T::lit(2.7),
            steering_lag: T::lit(0.2),
        }
    }
}

impl<T: Scalar> VehicleParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase.is_finite() && self.wheelbase > T::zero()) {
            return Err(Error::InvalidSpec(format!("wheelbase must be > 0, got {}", self.wheelbase)));
        }
        if !(self.steering_lag.is_finite() && self.steering_lag > T::zero()) {
            return Err(Error::InvalidSpec(format!(
                "steering lag must be > 0, got {}",
                self.steering_lag
            )));
        }
        Ok(())
    }
}

/// Rear-axle reference point, yaw, speed and actual steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    pub phi: T,
    pub v: T,
    pub delta: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn new(x: T, y: T, phi: T, v: T, delta: T) -> Self {
        Self { x, y, phi, v, delta }
    }

    #[inline]
    pub fn to_array(self) -> [T; 5] {
        [self.x, self.y, self.phi, self.v, self.delta]
    }

    #[inline]
    pub fn from_array(a: [T; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlSample<T> {
    pub accel: T,
    pub steer_cmd: T,
}

impl<T: Scalar> ControlSample<T> {
    pub fn new(accel: T, steer_cmd: T) -> Self {
        Self { accel, steer_cmd }
    }
}

#[inline]
fn check_steering<T: Scalar>(delta: T) -> Result<()> {
    let limit = T::lit(std::f64::consts::FRAC_PI_2 - 1e-3);
    if delta.abs() < limit {
        Ok(())
    } else {
        Err(Error::Singularity {
            delta: delta.abs().to_f64_lossy(),
            interval: None,
        })
    }
}

/// Right-hand side `(v cos φ, v sin φ, v tan δ / L, a, (δ_s − δ)/ΔT)`.
#[inline]
pub fn dynamics<T: Scalar>(
    state: &VehicleState<T>,
    control: &ControlSample<T>,
    params: &VehicleParams<T>,
) -> Result<[T; 5]> {
    check_steering(state.delta)?;
    let (s, c) = state.phi.sin_cos();
    Ok([
        state.v * c,
        state.v * s,
        state.v * state.delta.tan() / params.wheelbase,
        control.accel,
        (control.steer_cmd - state.delta) / params.steering_lag,
    ])
}

/// One classical RK4 step of size `h` for an autonomous-in-control system
/// `y' = f(t, y)`.
#[inline]
pub fn rk4<T: Scalar, const N: usize, F>(f: F, t: T, y: &[T; N], h: T) -> Result<[T; N]>
where
    F: Fn(T, &[T; N]) -> Result<[T; N]>,
{
    let two = T::lit(2.0);
    let half = h / two;
    let shifted = |base: &[T; N], k: &[T; N], scale: T| {
        let mut out = *base;
        for i in 0..N {
            out[i] = base[i] + scale * k[i];
        }
        out
    };
    let k1 = f(t, y)?;
    let k2 = f(t + half, &shifted(y, &k1, half))?;
    let k3 = f(t + half, &shifted(y, &k2, half))?;
    let k4 = f(t + h, &shifted(y, &k3, h))?;
    let sixth = h / T::lit(6.0);
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Advances the vehicle by `h` with the control held constant.
pub fn rk4_step<T: Scalar>(
    state: &VehicleState<T>,
    control: &ControlSample<T>,
    params: &VehicleParams<T>,
    h: T,
) -> Result<VehicleState<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidSpec(format!("step size must be > 0, got {h}")));
    }
    let next = rk4(
        |_, y: &[T; 5]| dynamics(&VehicleState::from_array(*y), control, params),
        T::zero(),
        &state.to_array(),
        h,
    )?;
    Ok(VehicleState::from_array(next))
}

/// States sampled at every integrator node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<VehicleState<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&VehicleState<T>> {
        self.states.last()
    }
}

/// Integrates from `initial` over `[t0, tf]` with one control per uniform
/// interval and `substeps` RK4 steps inside each interval.
pub fn simulate<T: Scalar>(
    initial: &VehicleState<T>,
    controls: &[ControlSample<T>],
    params: &VehicleParams<T>,
    t0: T,
    tf: T,
    substeps: usize,
) -> Result<Trajectory<T>> {
    if !(tf > t0) {
        return Err(Error::InvalidSpec(format!("need tf > t0, got [{t0}, {tf}]")));
    }
    if controls.is_empty() || substeps == 0 {
        return Err(Error::InvalidSpec("need at least one control and one substep".into()));
    }
    params.validate()?;
    let n = controls.len();
    let h = (tf - t0) / T::from_usize(n * substeps).unwrap();
    let mut times = Vec::with_capacity(n * substeps + 1);
    let mut states = Vec::with_capacity(n * substeps + 1);
    times.push(t0);
    states.push(*initial);
    let mut state = *initial;
    for (k, control) in controls.iter().enumerate() {
        for j in 0..substeps {
            state = rk4_step(&state, control, params, h).map_err(|e| e.with_interval(k))?;
            let node = k * substeps + j + 1;
            times.push(t0 + h * T::from_usize(node).unwrap());
            states.push(state);
        }
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params() -> VehicleParams<f64> {
        VehicleParams::default()
    }

    #[test]
    fn dynamics_examples() {
        let zero = ControlSample::new(0.0, 0.0);
        let d = dynamics(&VehicleState::new(0.0, 0.0, 0.0, 10.0, 0.0), &zero, &params()).unwrap();
        assert_eq!(d, [10.0, 0.0, 0.0, 0.0, 0.0]);

        let d = dynamics(&VehicleState::new(0.0, 0.0, FRAC_PI_2, 10.0, 0.0), &zero, &params()).unwrap();
        assert!(d[0].abs() < 1e-14 && d[1] == 10.0);

        let d = dynamics(
            &VehicleState::new(0.0, 0.0, 0.0, 10.0, 0.1),
            &ControlSample::new(0.0, 0.1),
            &params(),
        )
        .unwrap();
        // 10 tan(0.1) / 2.7
        assert_eq!(d[0], 10.0);
        assert!((d[2] - 0.371_609_896_612_779_77).abs() < 1e-14, "{}", d[2]);
        assert_eq!(d[4], 0.0);
    }

    #[test]
    fn singularity_is_reported() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0, FRAC_PI_2 - 1e-4);
        assert!(matches!(
            dynamics(&s, &ControlSample::default(), &params()),
            Err(Error::Singularity { .. })
        ));
        let controls = vec![ControlSample::new(0.0, 0.0); 3];
        let err = simulate(&s, &controls, &params(), 0.0, 1.0, 2).unwrap_err();
        assert!(matches!(err, Error::Singularity { interval: Some(0), .. }));
    }

    #[test]
    fn straight_step_is_exact() {
        let s = VehicleState::new(1.0, 2.0, 0.0, 10.0, 0.0);
        let next = rk4_step(&s, &ControlSample::default(), &params(), 0.05).unwrap();
        assert_eq!(next.x, 1.5);
        assert_eq!((next.y, next.phi, next.v), (2.0, 0.0, 10.0));
    }

    #[test]
    fn simulate_examples() {
        let init = VehicleState::new(50.0, 1.75, PI, 10.0, 0.0);
        let controls = vec![ControlSample::default(); 20];
        let traj = simulate(&init, &controls, &params(), 0.0, 2.0, 4).unwrap();
        assert_eq!(traj.len(), 81);
        assert_eq!(traj.states[0], init);
        let end = traj.last().unwrap();
        assert!((end.x - 30.0).abs() < 1e-12);
        assert!((end.y - 1.75).abs() < 1e-12);
        assert_eq!((end.phi, end.v, end.delta), (PI, 10.0, 0.0));

        let controls = vec![ControlSample::new(1.0, 0.0); 20];
        let init = VehicleState::new(0.0, 0.0, 0.3, 10.0, 0.0);
        let end = *simulate(&init, &controls, &params(), 0.0, 2.0, 4).unwrap().last().unwrap();
        assert!((end.v - 12.0).abs() < 1e-12);
        assert!((end.x - 22.0 * 0.3f64.cos()).abs() < 1e-11);
    }

    #[test]
    fn steering_lag_fixed_point() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 5.0, 0.2);
        let next = rk4_step(&s, &ControlSample::new(0.0, 0.2), &params(), 0.1).unwrap();
        assert_eq!(next.delta, 0.2);
    }

    #[test]
    fn simulate_rejects_bad_grid() {
        let s = VehicleState::default();
        assert!(simulate(&s, &[ControlSample::default()], &params(), 1.0, 1.0, 1).is_err());
        assert!(simulate::<f64>(&s, &[], &params(), 0.0, 1.0, 1).is_err());
        assert!(simulate(&s, &[ControlSample::default()], &params(), 0.0, 1.0, 0).is_err());
    }
}
