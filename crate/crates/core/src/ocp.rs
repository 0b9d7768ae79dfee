//! Direct single-shooting transcription of the two planning problems.
//!
//! Level one minimizes the total collision severity
//! `J1 = ∫ Σ_i cs_i(t, x, y, v)² dt`; level two minimizes the steering effort
//! `J2 = ∫ δ_s² dt` subject to `J1 <= J1* + ε`. Controls are piecewise
//! constant on a uniform grid and states come from RK4 integration of the
//! vehicle model augmented with the running cost.

use std::cell::RefCell;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::nlp_solver::{minimize, Derivative, NlpProblem, SolverConfig, SolverResult, SolverStatus};
use crate::scalar::Scalar;
use crate::severity_field::{severities, severity_rate, Obstacle};
use crate::vehicle_model::{dynamics, rk4, ControlSample, Trajectory, VehicleParams, VehicleState};

/// Box bounds on acceleration and commanded steering angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds<T> {
    pub accel_min: T,
    pub accel_max: T,
    pub steer_min: T,
    pub steer_max: T,
}

impl<T: Scalar> Default for ControlBounds<T> {
    fn default() -> Self {
        Self {
            accel_min: T::lit(-8.0),
            accel_max: T::lit(3.0),
            steer_min: T::lit(-0.5),
            steer_max: T::lit(0.5),
        }
    }
}

/// Slack on the level-two severity budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon<T> {
    Absolute(T),
    /// `ε = factor · (1 + J1*)`
    Relative(T),
}

impl<T: Scalar> Default for Epsilon<T> {
    fn default() -> Self {
        Epsilon::Relative(T::lit(1e-3))
    }
}

impl<T: Scalar> Epsilon<T> {
    pub fn resolve(&self, j1_star: T) -> T {
        match *self {
            Epsilon::Absolute(e) => e,
            Epsilon::Relative(f) => f * (T::one() + j1_star),
        }
    }

    fn is_valid(&self) -> bool {
        let v = match *self {
            Epsilon::Absolute(e) | Epsilon::Relative(e) => e,
        };
        v.is_finite() && v >= T::zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec<T> {
    pub obstacles: Vec<Obstacle<T>>,
    pub vehicle: VehicleParams<T>,
    pub initial: VehicleState<T>,
    pub num_intervals: usize,
    pub substeps: usize,
    pub t0: T,
    pub tf: T,
    pub bounds: ControlBounds<T>,
    pub epsilon: Epsilon<T>,
}

impl<T: Scalar> OcpSpec<T> {
    /// Defaults: 40 intervals of 4 RK4 substeps over `[0, 4]` s.
    pub fn new(initial: VehicleState<T>, obstacles: Vec<Obstacle<T>>) -> Self {
        Self {
            obstacles,
            vehicle: VehicleParams::default(),
            initial,
            num_intervals: 40,
            substeps: 4,
            t0: T::zero(),
            tf: T::lit(4.0),
            bounds: ControlBounds::default(),
            epsilon: Epsilon::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if self.num_intervals < 2 {
            return Err(Error::InvalidSpec(format!("num_intervals must be >= 2, got {}", self.num_intervals)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidSpec("substeps must be >= 1".into()));
        }
        if !(self.tf > self.t0) || !self.t0.is_finite() || !self.tf.is_finite() {
            return Err(Error::InvalidSpec(format!("need finite tf > t0, got [{}, {}]", self.t0, self.tf)));
        }
        let finite = [b.accel_min, b.accel_max, b.steer_min, b.steer_max].iter().all(|v| v.is_finite());
        if !finite || b.accel_min > b.accel_max || b.steer_min > b.steer_max {
            return Err(Error::InvalidSpec("control bounds must be finite with min <= max".into()));
        }
        let limit = T::lit(std::f64::consts::FRAC_PI_2 - 1e-3);
        if b.steer_min.abs() >= limit || b.steer_max.abs() >= limit {
            return Err(Error::InvalidSpec("steering bounds must stay inside (-pi/2, pi/2)".into()));
        }
        if !self.epsilon.is_valid() {
            return Err(Error::InvalidSpec("epsilon must be finite and >= 0".into()));
        }
        if !self.initial.is_finite() {
            return Err(Error::InvalidSpec("initial state must be finite".into()));
        }
        self.vehicle.validate()?;
        for o in &self.obstacles {
            o.validate()?;
        }
        Ok(())
    }

    pub fn interval_length(&self) -> T {
        (self.tf - self.t0) / T::from_usize(self.num_intervals).unwrap()
    }

    pub fn dimension(&self) -> usize {
        2 * self.num_intervals
    }

    pub fn lower_bounds(&self) -> Vec<T> {
        (0..self.num_intervals)
            .flat_map(|_| [self.bounds.accel_min, self.bounds.steer_min])
            .collect()
    }

    pub fn upper_bounds(&self) -> Vec<T> {
        (0..self.num_intervals)
            .flat_map(|_| [self.bounds.accel_max, self.bounds.steer_max])
            .collect()
    }

    /// Copy with every obstacle rating multiplied by `factor`.
    pub fn with_scaled_ratings(&self, factor: T) -> Self {
        let mut scaled = self.clone();
        for o in &mut scaled.obstacles {
            o.severity_c = o.severity_c * factor;
        }
        scaled
    }
}

/// Flat control parameters `(a_0, δ_s,0, a_1, δ_s,1, …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector<T>(pub Vec<T>);

impl<T: Scalar> DecisionVector<T> {
    pub fn zeros(num_intervals: usize) -> Self {
        Self(vec![T::zero(); 2 * num_intervals])
    }

    pub fn from_controls(controls: &[ControlSample<T>]) -> Self {
        Self(controls.iter().flat_map(|c| [c.accel, c.steer_cmd]).collect())
    }

    pub fn num_intervals(&self) -> usize {
        self.0.len() / 2
    }

    pub fn accel(&self, k: usize) -> T {
        self.0[2 * k]
    }

    pub fn steer(&self, k: usize) -> T {
        self.0[2 * k + 1]
    }

    pub fn controls(&self) -> Vec<ControlSample<T>> {
        self.0.chunks_exact(2).map(|c| ControlSample::new(c[0], c[1])).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

fn check_decision<T: Scalar>(z: &[T], spec: &OcpSpec<T>) -> Result<()> {
    if z.len() != spec.dimension() {
        return Err(Error::InvalidSpec(format!(
            "decision vector has {} entries, expected {}",
            z.len(),
            spec.dimension()
        )));
    }
    let tol = T::lit(1e-9);
    let (lo, hi) = (spec.lower_bounds(), spec.upper_bounds());
    for (i, &zi) in z.iter().enumerate() {
        if !zi.is_finite() || zi < lo[i] - tol || zi > hi[i] + tol {
            return Err(Error::InvalidSpec(format!(
                "decision entry {i} = {zi} outside [{}, {}]",
                lo[i], hi[i]
            )));
        }
    }
    Ok(())
}

type Augmented<T> = [T; 6];

/// Receives every stage's per-obstacle severities, in integration order.
type StageSink<'s, T> = Option<&'s RefCell<Vec<T>>>;

#[inline]
fn augmented_rhs<T: Scalar>(
    t: T,
    y: &Augmented<T>,
    control: &ControlSample<T>,
    spec: &OcpSpec<T>,
    sink: StageSink<'_, T>,
) -> Result<Augmented<T>> {
    let state = VehicleState::new(y[0], y[1], y[2], y[3], y[4]);
    let d = dynamics(&state, control, &spec.vehicle)?;
    let rate = match sink {
        None => severity_rate(t, &state, &spec.obstacles),
        Some(cell) => {
            let mut stages = cell.borrow_mut();
            severities(t, &state, &spec.obstacles).fold(T::zero(), |acc, cs| {
                stages.push(cs);
                acc + cs * cs
            })
        }
    };
    Ok([d[0], d[1], d[2], d[3], d[4], rate])
}

fn initial_augmented<T: Scalar>(spec: &OcpSpec<T>) -> Augmented<T> {
    let init = spec.initial;
    [init.x, init.y, init.phi, init.v, init.delta, T::zero()]
}

/// Integrates intervals `first..` starting from `y` at the start of interval
/// `first`, handing every later node to `visit`.
fn integrate_from<T: Scalar>(
    z: &[T],
    spec: &OcpSpec<T>,
    substeps: usize,
    first: usize,
    mut y: Augmented<T>,
    sink: StageSink<'_, T>,
    mut visit: impl FnMut(usize, T, &Augmented<T>),
) -> Result<Augmented<T>> {
    let total = spec.num_intervals * substeps;
    let h = (spec.tf - spec.t0) / T::from_usize(total).unwrap();
    for k in first..spec.num_intervals {
        let control = ControlSample::new(z[2 * k], z[2 * k + 1]);
        for j in 0..substeps {
            let node = k * substeps + j;
            let t = spec.t0 + h * T::from_usize(node).unwrap();
            y = rk4(|tt, yy| augmented_rhs(tt, yy, &control, spec, sink), t, &y, h)
                .map_err(|e| e.with_interval(k))?;
            visit(node + 1, spec.t0 + h * T::from_usize(node + 1).unwrap(), &y);
        }
    }
    Ok(y)
}

/// Walks the augmented integration grid, handing every node to `visit`.
fn integrate_augmented<T: Scalar>(
    z: &[T],
    spec: &OcpSpec<T>,
    substeps: usize,
    mut visit: impl FnMut(T, &Augmented<T>),
) -> Result<Augmented<T>> {
    let y = initial_augmented(spec);
    visit(spec.t0, &y);
    integrate_from(z, spec, substeps, 0, y, None, |_, t, y| visit(t, y))
}

/// Central-difference gradient of `J1` with step `fd_step · (1 + |z_j|)`.
///
/// A control only influences the trajectory after its own interval, so each
/// probe restarts from the stored state at the start of that interval. The
/// result equals plain central differences of [`j1_value`] bit for bit.
/// Probes that hit the steering singularity give a NaN component.
pub fn j1_gradient_fd<T: Scalar>(z: &[T], spec: &OcpSpec<T>, fd_step: T) -> Vec<T> {
    j1_differences(z, spec, fd_step, false).gradient
}

/// [`j1_gradient_fd`] plus a Gauss–Newton curvature model.
///
/// The RK4 cost state makes `J1 = Σ_s w_s Σ_i cs_i(s)²` over all stages `s`
/// with positive weights, so `2 Σ w ∇cs ∇csᵀ` is a positive semidefinite
/// approximation of its Hessian. The severity Jacobian comes from the same
/// probes as the gradient.
pub fn j1_derivative<T: Scalar>(z: &[T], spec: &OcpSpec<T>, fd_step: T) -> Derivative<T> {
    j1_differences(z, spec, fd_step, true)
}

fn j1_differences<T: Scalar>(z: &[T], spec: &OcpSpec<T>, fd_step: T, curvature: bool) -> Derivative<T> {
    let n = spec.num_intervals;
    let dim = z.len();
    let m = spec.obstacles.len();
    if m == 0 {
        return Derivative {
            gradient: vec![T::zero(); dim],
            curvature: curvature.then(|| vec![T::zero(); dim * dim]),
        };
    }
    let substeps = spec.substeps;
    let per_interval = substeps * 4 * m;
    let mut checkpoints = Vec::with_capacity(n);
    checkpoints.push(initial_augmented(spec));
    // a failed run leaves fewer checkpoints; the missing components stay NaN
    let _ = integrate_from(z, spec, substeps, 0, initial_augmented(spec), None, |node, _, y| {
        if node % substeps == 0 && node / substeps < n {
            checkpoints.push(*y);
        }
    });
    let sink = RefCell::new(Vec::new());
    let recording = curvature.then_some(&sink);
    let mut probe = z.to_vec();
    let mut grad = vec![T::nan(); dim];
    let mut columns: Vec<Option<Vec<T>>> = vec![None; dim];
    for j in 0..dim {
        let k = j / 2;
        if k >= checkpoints.len() {
            break;
        }
        let h = fd_step * (T::one() + z[j].abs());
        let mut value = |zj: T| {
            probe[j] = zj;
            sink.borrow_mut().clear();
            let j1 = integrate_from(&probe, spec, substeps, k, checkpoints[k], recording, |_, _, _| {})
                .map(|y| y[5])
                .unwrap_or_else(|_| T::nan());
            (j1, sink.borrow().clone())
        };
        let (fp, sp) = value(z[j] + h);
        let (fm, sm) = value(z[j] - h);
        probe[j] = z[j];
        grad[j] = (fp - fm) / (h + h);
        if curvature && fp.is_finite() && fm.is_finite() {
            columns[j] = Some(sp.iter().zip(&sm).map(|(&a, &b)| (a - b) / (h + h)).collect());
        }
    }
    let curvature = if curvature && columns.iter().all(Option::is_some) {
        let columns: Vec<Vec<T>> = columns.into_iter().map(Option::unwrap).collect();
        let dt = (spec.tf - spec.t0) / T::from_usize(n * substeps).unwrap();
        let stage_weight = [1.0, 2.0, 2.0, 1.0].map(|c| T::lit(2.0 * c) * dt / T::lit(6.0));
        let total_rows = n * per_interval;
        let weight_of = |row: usize| stage_weight[(row / m) % 4];
        let mut hess = vec![T::zero(); dim * dim];
        for a in 0..dim {
            for b in a..dim {
                // column j covers rows from the start of its own interval
                let (off_a, off_b) = ((a / 2) * per_interval, (b / 2) * per_interval);
                let first = off_a.max(off_b);
                let mut acc = T::zero();
                for row in first..total_rows {
                    let (ca, cb) = (columns[a][row - off_a], columns[b][row - off_b]);
                    if ca != T::zero() && cb != T::zero() {
                        acc = acc + weight_of(row) * ca * cb;
                    }
                }
                hess[a * dim + b] = acc;
                hess[b * dim + a] = acc;
            }
        }
        Some(hess)
    } else {
        None
    };
    Derivative {
        gradient: grad,
        curvature,
    }
}

/// Total collision severity `J1` without building a trajectory.
pub fn j1_value<T: Scalar>(z: &[T], spec: &OcpSpec<T>) -> Result<T> {
    j1_value_with_substeps(z, spec, spec.substeps)
}

pub fn j1_value_with_substeps<T: Scalar>(z: &[T], spec: &OcpSpec<T>, substeps: usize) -> Result<T> {
    if spec.obstacles.is_empty() {
        return Ok(T::zero());
    }
    integrate_augmented(z, spec, substeps, |_, _| {}).map(|y| y[5])
}

/// Steering effort `Σ δ_s,k² Δt`, exact for piecewise-constant commands.
pub fn eval_j2<T: Scalar>(z: &DecisionVector<T>, spec: &OcpSpec<T>) -> Result<T> {
    check_decision(&z.0, spec)?;
    Ok(j2_value(&z.0, spec))
}

fn j2_value<T: Scalar>(z: &[T], spec: &OcpSpec<T>) -> T {
    let dt = spec.interval_length();
    z.chunks_exact(2).fold(T::zero(), |acc, c| acc + c[1] * c[1] * dt)
}

/// Exact gradient and Hessian of `J2`.
fn j2_derivative<T: Scalar>(z: &[T], spec: &OcpSpec<T>) -> Derivative<T> {
    let dim = z.len();
    let two_dt = T::lit(2.0) * spec.interval_length();
    let mut gradient = vec![T::zero(); dim];
    let mut hess = vec![T::zero(); dim * dim];
    for j in (1..dim).step_by(2) {
        gradient[j] = two_dt * z[j];
        hess[j * dim + j] = two_dt;
    }
    Derivative {
        gradient,
        curvature: Some(hess),
    }
}

/// Everything needed to plot or audit one decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport<T> {
    pub j1: T,
    pub j2: T,
    pub trajectory: Trajectory<T>,
    /// Running value of the cost state at each trajectory node.
    pub cost_state: Vec<T>,
    /// `severity[node][obstacle]`
    pub severity: Vec<Vec<T>>,
    pub controls: Vec<ControlSample<T>>,
}

/// Integrates the augmented system and returns `J1` together with the
/// trajectory and per-obstacle severity series.
pub fn eval_j1<T: Scalar>(z: &DecisionVector<T>, spec: &OcpSpec<T>) -> Result<ObjectiveReport<T>> {
    spec.validate()?;
    check_decision(&z.0, spec)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut cost_state = Vec::new();
    let mut severity = Vec::new();
    let y = integrate_augmented(&z.0, spec, spec.substeps, |t, y| {
        let state = VehicleState::new(y[0], y[1], y[2], y[3], y[4]);
        times.push(t);
        states.push(state);
        cost_state.push(y[5]);
        severity.push(severities(t, &state, &spec.obstacles).collect());
    })?;
    Ok(ObjectiveReport {
        j1: y[5],
        j2: j2_value(&z.0, spec),
        trajectory: Trajectory { times, states },
        cost_state,
        severity,
        controls: z.controls(),
    })
}

/// Solution of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSolution<T> {
    pub z: DecisionVector<T>,
    pub j1: T,
    pub j2: T,
    pub result: SolverResult<T>,
}

impl<T: Scalar> LevelSolution<T> {
    pub fn status(&self) -> SolverStatus {
        self.result.status
    }
}

fn nan_on_error<T: Scalar>(r: Result<T>) -> T {
    r.unwrap_or_else(|_| T::nan())
}

/// Minimizes the total collision severity from `initial_guess`.
pub fn solve_ocp1<T: Scalar>(
    spec: &OcpSpec<T>,
    initial_guess: &DecisionVector<T>,
    config: &SolverConfig<T>,
) -> Result<LevelSolution<T>> {
    spec.validate()?;
    check_decision(&initial_guess.0, spec)?;
    let fd_step = config.fd_step;
    let problem = NlpProblem::new(spec.lower_bounds(), spec.upper_bounds(), |z: &[T]| {
        nan_on_error(j1_value(z, spec))
    })?
    .with_objective_derivative(move |z: &[T]| j1_derivative(z, spec, fd_step));
    let result = minimize(&problem, &initial_guess.0, config)?;
    let z = DecisionVector(result.x_best.clone());
    Ok(LevelSolution {
        j1: j1_value(&z.0, spec)?,
        j2: j2_value(&z.0, spec),
        z,
        result,
    })
}

/// Level-two outcome together with the budget it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedSolution<T> {
    pub solution: LevelSolution<T>,
    pub epsilon: T,
    pub budget: T,
    pub budget_satisfied: bool,
}

/// Minimizes steering effort subject to `J1(z) <= J1* + ε`, starting from
/// `warm_start` (normally the level-one solution, which is feasible).
pub fn solve_ocp2<T: Scalar>(
    spec: &OcpSpec<T>,
    j1_star: T,
    warm_start: &DecisionVector<T>,
    config: &SolverConfig<T>,
) -> Result<BudgetedSolution<T>> {
    spec.validate()?;
    check_decision(&warm_start.0, spec)?;
    let epsilon = spec.epsilon.resolve(j1_star);
    let budget = j1_star + epsilon;
    let scale = T::one() + j1_star;
    let fd_step = config.fd_step;
    let problem = NlpProblem::new(spec.lower_bounds(), spec.upper_bounds(), |z: &[T]| j2_value(z, spec))?
        .with_objective_derivative(|z: &[T]| j2_derivative(z, spec))
        .with_constraint_and_derivative(
            move |z: &[T]| (nan_on_error(j1_value(z, spec)) - budget) / scale,
            move |z: &[T]| {
                let d = j1_derivative(z, spec, fd_step);
                Derivative {
                    gradient: d.gradient.into_iter().map(|g| g / scale).collect(),
                    curvature: d.curvature.map(|h| h.into_iter().map(|v| v / scale).collect()),
                }
            },
        );
    let result = minimize(&problem, &warm_start.0, config)?;
    let z = DecisionVector(result.x_best.clone());
    let j1 = j1_value(&z.0, spec)?;
    let budget_satisfied = j1 <= budget + T::lit(1e-6) * scale;
    Ok(BudgetedSolution {
        solution: LevelSolution {
            j2: j2_value(&z.0, spec),
            j1,
            z,
            result,
        },
        epsilon,
        budget,
        budget_satisfied,
    })
}

/// How level one is started.
#[derive(Debug, Clone, PartialEq)]
pub enum GuessPolicy<T> {
    /// Straight driving at constant speed.
    Zero,
    Given(DecisionVector<T>),
    /// Ranks straight driving and a family of swerve-and-return profiles by
    /// `J1` and runs level one from the best [`MULTISTART_KEEP`]. Level two
    /// runs from every start whose `J1*` is within `ε` of the best, and the
    /// least steering effort wins.
    MultiStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOptions<T> {
    pub solver: SolverConfig<T>,
    pub guess: GuessPolicy<T>,
}

impl<T: Scalar> Default for PlannerOptions<T> {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            guess: GuessPolicy::MultiStart,
        }
    }
}

/// Number of candidate guesses [`GuessPolicy::MultiStart`] optimizes.
pub const MULTISTART_KEEP: usize = 4;

/// Straight driving plus swerve-and-return steering profiles: the command
/// `c` is held for `q` intervals from interval `s`, then `-c` for another
/// `q`, then zero. Used by [`GuessPolicy::MultiStart`].
pub fn multistart_guesses<T: Scalar>(spec: &OcpSpec<T>) -> Vec<DecisionVector<T>> {
    let n = spec.num_intervals;
    let accel = T::zero().max(spec.bounds.accel_min).min(spec.bounds.accel_max);
    let mut guesses = vec![DecisionVector(
        (0..n).flat_map(|_| [accel, T::zero().max(spec.bounds.steer_min).min(spec.bounds.steer_max)]).collect(),
    )];
    for start in [0, n / 8, n / 4] {
        for hold in [(n / 8).max(1), (n / 5).max(1)] {
            for amplitude in [0.1, 0.2, 0.3, 0.4] {
                for sign in [1.0, -1.0] {
                    let cmd = T::lit(sign * amplitude);
                    let z = (0..n)
                        .flat_map(|k| {
                            let steer = if k < start {
                                T::zero()
                            } else if k < start + hold {
                                cmd
                            } else if k < start + 2 * hold {
                                -cmd
                            } else {
                                T::zero()
                            };
                            [accel, steer.max(spec.bounds.steer_min).min(spec.bounds.steer_max)]
                        })
                        .collect();
                    guesses.push(DecisionVector(z));
                }
            }
        }
    }
    guesses
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub level1: LevelSolution<T>,
    pub level2: LevelSolution<T>,
    pub j1_star: T,
    /// Smallest level-one value over all starts.
    pub j1_best: T,
    pub epsilon: T,
    pub budget_satisfied: bool,
    pub report_level1: ObjectiveReport<T>,
    pub report_level2: ObjectiveReport<T>,
    pub starts: usize,
    pub selected_start: usize,
    pub wall_time_seconds: f64,
}

impl<T: Scalar> SolveReport<T> {
    pub fn converged(&self) -> bool {
        self.level1.status() == SolverStatus::Converged && self.level2.status() == SolverStatus::Converged
    }
}

/// Level one, then level two warm-started at the level-one optimum.
pub fn two_level_solve<T: Scalar>(spec: &OcpSpec<T>, options: &PlannerOptions<T>) -> Result<SolveReport<T>> {
    let started = Instant::now();
    spec.validate()?;
    let starts = match &options.guess {
        GuessPolicy::Zero => vec![DecisionVector::zeros(spec.num_intervals)],
        GuessPolicy::Given(z) => vec![z.clone()],
        GuessPolicy::MultiStart => {
            let mut ranked: Vec<(T, DecisionVector<T>)> = multistart_guesses(spec)
                .into_iter()
                .map(|z| (nan_on_error(j1_value(&z.0, spec)), z))
                .filter(|(j, _)| j.is_finite())
                .collect();
            // stable, so ties keep generation order
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if ranked.is_empty() {
                // every candidate failed; let level one report why
                vec![DecisionVector::zeros(spec.num_intervals)]
            } else {
                ranked.into_iter().take(MULTISTART_KEEP).map(|(_, z)| z).collect()
            }
        }
    };
    let level1: Vec<LevelSolution<T>> = starts
        .iter()
        .map(|z0| solve_ocp1(spec, z0, &options.solver))
        .collect::<Result<_>>()?;
    let j1_best = level1.iter().map(|s| s.j1).fold(T::infinity(), T::min);
    let cutoff = j1_best + spec.epsilon.resolve(j1_best);

    let mut selected: Option<(usize, BudgetedSolution<T>)> = None;
    for (i, l1) in level1.iter().enumerate() {
        if l1.j1 > cutoff {
            continue;
        }
        let l2 = solve_ocp2(spec, l1.j1, &l1.z, &options.solver)?;
        let wins = match &selected {
            None => true,
            Some((_, best)) => {
                (l2.budget_satisfied && !best.budget_satisfied)
                    || (l2.budget_satisfied == best.budget_satisfied && l2.solution.j2 < best.solution.j2)
            }
        };
        if wins {
            selected = Some((i, l2));
        }
    }
    let (selected_start, l2) = selected.expect("the best start is always within its own cutoff");
    let l1 = level1[selected_start].clone();
    let report_level1 = eval_j1(&l1.z, spec)?;
    let report_level2 = eval_j1(&l2.solution.z, spec)?;
    Ok(SolveReport {
        j1_star: l1.j1,
        j1_best,
        epsilon: l2.epsilon,
        budget_satisfied: l2.budget_satisfied,
        level1: l1,
        level2: l2.solution,
        report_level1,
        report_level2,
        starts: starts.len(),
        selected_start,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Re-solves each level-one problem from the other's solution and keeps the
/// lower `J1`. When one problem's ratings dominate the other's pointwise, the
/// returned values are then ordered the same way.
pub fn cross_warm_start<T: Scalar>(
    spec_a: &OcpSpec<T>,
    sol_a: &LevelSolution<T>,
    spec_b: &OcpSpec<T>,
    sol_b: &LevelSolution<T>,
    config: &SolverConfig<T>,
) -> Result<(LevelSolution<T>, LevelSolution<T>)> {
    let retry_a = solve_ocp1(spec_a, &sol_b.z, config)?;
    let retry_b = solve_ocp1(spec_b, &sol_a.z, config)?;
    let pick = |orig: &LevelSolution<T>, retry: LevelSolution<T>| {
        if retry.j1 < orig.j1 {
            retry
        } else {
            orig.clone()
        }
    };
    Ok((pick(sol_a, retry_a), pick(sol_b, retry_b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity_field::{ObstacleMotion, ShapeParams};
    use std::f64::consts::PI;

    fn ego() -> VehicleState<f64> {
        VehicleState::new(50.0, 1.75, PI, 10.0, 0.0)
    }

    fn pedestrian(x: f64, y: f64, c: f64) -> Obstacle<f64> {
        Obstacle::new("ped", ShapeParams::circle(0.3, 0.5).unwrap(), ObstacleMotion::stationary(x, y, 0.0), c).unwrap()
    }

    fn spec_with(obstacles: Vec<Obstacle<f64>>) -> OcpSpec<f64> {
        let mut s = OcpSpec::new(ego(), obstacles);
        s.num_intervals = 10;
        s
    }

    #[test]
    fn j1_is_zero_without_obstacles() {
        let spec = spec_with(vec![]);
        let z = DecisionVector([0.5, 0.1].repeat(10));
        assert_eq!(eval_j1(&z, &spec).unwrap().j1, 0.0);
    }

    #[test]
    fn far_obstacle_contributes_nothing() {
        let spec = spec_with(vec![pedestrian(30.0, 60.0, 40.0)]);
        assert!(eval_j1(&DecisionVector::zeros(10), &spec).unwrap().j1 < 1e-12);
    }

    #[test]
    fn j1_scales_quadratically_with_ratings() {
        let spec = spec_with(vec![pedestrian(30.0, 1.9, 40.0), pedestrian(22.0, 1.2, 20.0)]);
        let z = DecisionVector([-0.3, 0.0].repeat(10));
        let base = j1_value(&z.0, &spec).unwrap();
        assert!(base > 1.0);
        let scaled = j1_value(&z.0, &spec.with_scaled_ratings(3.0)).unwrap();
        assert!((scaled - 9.0 * base).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn structured_gradient_matches_plain_differences() {
        let spec = spec_with(vec![pedestrian(30.0, 1.9, 40.0), pedestrian(22.0, 1.2, 20.0)]);
        let z: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { -0.3 } else { 0.02 * ((i % 5) as f64 - 2.0) }).collect();
        let grad = j1_gradient_fd(&z, &spec, 1e-6);
        let mut probe = z.clone();
        for j in 0..z.len() {
            let h = 1e-6 * (1.0 + z[j].abs());
            probe[j] = z[j] + h;
            let fp = j1_value(&probe, &spec).unwrap();
            probe[j] = z[j] - h;
            let fm = j1_value(&probe, &spec).unwrap();
            probe[j] = z[j];
            assert_eq!(grad[j], (fp - fm) / (h + h), "component {j}");
        }
        assert!(grad.iter().any(|g| g.abs() > 1e-3));
    }

    #[test]
    fn j2_examples() {
        let mut spec = spec_with(vec![]);
        assert_eq!(eval_j2(&DecisionVector::zeros(10), &spec).unwrap(), 0.0);
        spec.tf = 2.0;
        let z = DecisionVector([0.0, 0.1].repeat(10));
        assert!((eval_j2(&z, &spec).unwrap() - 0.02).abs() < 1e-15);
        spec.num_intervals = 2;
        let z = DecisionVector(vec![0.0, 0.1, 0.0, -0.1]);
        assert!((eval_j2(&z, &spec).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_bounds_decision() {
        let spec = spec_with(vec![]);
        let mut z = DecisionVector::zeros(10);
        z.0[1] = 0.6;
        assert!(eval_j1(&z, &spec).is_err());
        assert!(eval_j1(&DecisionVector::zeros(9), &spec).is_err());
    }

    #[test]
    fn report_series_line_up() {
        let spec = spec_with(vec![pedestrian(30.0, 1.75, 40.0)]);
        let r = eval_j1(&DecisionVector::zeros(10), &spec).unwrap();
        let nodes = 10 * 4 + 1;
        assert_eq!(r.trajectory.len(), nodes);
        assert_eq!(r.cost_state.len(), nodes);
        assert_eq!(r.severity.len(), nodes);
        assert_eq!(*r.cost_state.last().unwrap(), r.j1);
        assert_eq!(r.cost_state[0], 0.0);
    }

    #[test]
    fn empty_scene_two_level_is_trivial() {
        let spec = spec_with(vec![]);
        let opts = PlannerOptions { guess: GuessPolicy::Zero, ..PlannerOptions::default() };
        let r = two_level_solve(&spec, &opts).unwrap();
        assert_eq!(r.j1_star, 0.0);
        assert_eq!(r.level2.j2, 0.0);
        assert_eq!(r.level1.z, DecisionVector::zeros(10));
        assert!(r.converged());
        let end = r.report_level2.trajectory.last().unwrap();
        assert!((end.y - 1.75).abs() < 1e-12);
    }

    #[test]
    fn level_two_respects_budget_and_reduces_steering() {
        let spec = spec_with(vec![pedestrian(35.0, 1.75, 40.0)]);
        let opts = PlannerOptions { guess: GuessPolicy::MultiStart, ..PlannerOptions::default() };
        let r = two_level_solve(&spec, &opts).unwrap();
        let j1_z2 = j1_value(&r.level2.z.0, &spec).unwrap();
        assert!(j1_z2 <= r.j1_star + r.epsilon + 1e-6 * (1.0 + r.j1_star));
        assert!(r.level2.j2 <= r.level1.j2 + 1e-9);
        assert!(r.j1_star < j1_value(&DecisionVector::zeros(10).0, &spec).unwrap());
    }
}
