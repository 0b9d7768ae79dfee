//! Bound- and inequality-constrained nonlinear programming.
//!
//! Inequality constraints `g_i(x) <= 0` are handled by an augmented
//! Lagrangian (method of multipliers) outer loop. Each subproblem is a
//! box-constrained minimization of the merit function, solved by a projected
//! quasi-Newton method with central finite-difference gradients and a
//! backtracking line search along the projection arc. The curvature model is
//! BFGS, or a damped (Levenberg–Marquardt) model when every function supplies
//! its own curvature, such as a Gauss–Newton matrix for sums of squares.
//! Iterates are projected onto the box at every step, so bounds hold exactly
//! throughout.

use std::cell::Cell;
use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type ScalarFn<'a, T> = Box<dyn Fn(&[T]) -> T + Send + Sync + 'a>;
pub type DerivativeFn<'a, T> = Box<dyn Fn(&[T]) -> Derivative<T> + Send + Sync + 'a>;

/// Gradient of one problem function, optionally with a symmetric positive
/// semidefinite curvature model stored row-major as `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative<T> {
    pub gradient: Vec<T>,
    pub curvature: Option<Vec<T>>,
}

/// `minimize f(x)` subject to `g_i(x) <= 0` and `lower <= x <= upper`.
pub struct NlpProblem<'a, T> {
    objective: ScalarFn<'a, T>,
    objective_derivative: Option<DerivativeFn<'a, T>>,
    constraints: Vec<ScalarFn<'a, T>>,
    constraint_derivatives: Vec<Option<DerivativeFn<'a, T>>>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<'a, T: Scalar> NlpProblem<'a, T> {
    pub fn new<F>(lower: Vec<T>, upper: Vec<T>, objective: F) -> Result<Self>
    where
        F: Fn(&[T]) -> T + Send + Sync + 'a,
    {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::SolverInput(format!(
                "bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::SolverInput(format!("bad bounds at {i}: [{lo}, {hi}]")));
            }
        }
        Ok(Self {
            objective: Box::new(objective),
            objective_derivative: None,
            constraints: Vec::new(),
            constraint_derivatives: Vec::new(),
            lower,
            upper,
        })
    }

    /// Adds a constraint `g(x) <= 0`.
    pub fn with_constraint<G>(mut self, g: G) -> Self
    where
        G: Fn(&[T]) -> T + Send + Sync + 'a,
    {
        self.constraints.push(Box::new(g));
        self.constraint_derivatives.push(None);
        self
    }

    /// Replaces the solver's own central differences for the objective.
    /// The callback should return the same gradient, e.g. from a cheaper
    /// structured evaluation, and may add a curvature model.
    pub fn with_objective_derivative<D>(mut self, derivative: D) -> Self
    where
        D: Fn(&[T]) -> Derivative<T> + Send + Sync + 'a,
    {
        self.objective_derivative = Some(Box::new(derivative));
        self
    }

    /// Adds a constraint `g(x) <= 0` with a derivative callback.
    pub fn with_constraint_and_derivative<G, D>(mut self, g: G, derivative: D) -> Self
    where
        G: Fn(&[T]) -> T + Send + Sync + 'a,
        D: Fn(&[T]) -> Derivative<T> + Send + Sync + 'a,
    {
        self.constraints.push(Box::new(g));
        self.constraint_derivatives.push(Some(Box::new(derivative)));
        self
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn objective(&self, x: &[T]) -> T {
        (self.objective)(x)
    }

    pub fn constraint_values(&self, x: &[T]) -> Vec<T> {
        self.constraints.iter().map(|g| g(x)).collect()
    }

    pub fn project(&self, x: &mut [T]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.max(*lo).min(*hi);
        }
    }

    pub fn max_violation(&self, x: &[T]) -> T {
        violation_of(&self.constraint_values(x))
    }
}

fn violation_of<T: Scalar>(g: &[T]) -> T {
    g.iter().fold(T::zero(), |acc, &gi| acc.max(gi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Bound on the infinity norm of the projected gradient.
    pub optimality_tolerance: T,
    pub constraint_tolerance: T,
    /// Relative central-difference step: `h_i = fd_step · (1 + |x_i|)`.
    pub fd_step: T,
    pub penalty_initial: T,
    pub penalty_growth: T,
    pub trace: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_outer_iterations: 20,
            max_inner_iterations: 200,
            optimality_tolerance: T::lit(1e-6),
            constraint_tolerance: T::lit(1e-6),
            fd_step: T::lit(1e-6),
            penalty_initial: T::lit(10.0),
            penalty_growth: T::lit(10.0),
            trace: false,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v.is_finite() && v > T::zero();
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err(Error::SolverInput("iteration limits must be positive".into()));
        }
        if !positive(self.optimality_tolerance)
            || !positive(self.constraint_tolerance)
            || !positive(self.fd_step)
            || !positive(self.penalty_initial)
        {
            return Err(Error::SolverInput("tolerances, fd step and penalty must be > 0".into()));
        }
        if !(self.penalty_growth > T::one()) {
            return Err(Error::SolverInput("penalty growth must be > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    Stalled,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::Stalled => "stalled",
        }
    }
}

/// One accepted inner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub iteration: usize,
    pub outer: usize,
    pub objective: T,
    pub violation: T,
    pub step_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult<T> {
    pub x_best: Vec<T>,
    pub objective_value: T,
    pub max_constraint_violation: T,
    pub status: SolverStatus,
    /// Outer (multiplier) iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub function_evaluations: usize,
    pub multipliers: Vec<T>,
    /// Maximum constraint violation at the end of each outer iteration.
    pub outer_violations: Vec<T>,
    pub kkt: KktReport<T>,
    pub trace: Vec<TraceRow<T>>,
}

/// First-order optimality measures at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport<T> {
    /// Infinity norm of `x − P(x − ∇L)`.
    pub projected_gradient_norm: T,
    pub max_violation: T,
    /// `max_i |λ_i · g_i(x)|`.
    pub complementarity: T,
    pub objective: T,
    pub multipliers: Vec<T>,
}

impl<T: Scalar> KktReport<T> {
    /// Stationarity and feasibility under the solver's tolerances.
    pub fn satisfies(&self, config: &SolverConfig<T>) -> bool {
        self.projected_gradient_norm <= config.optimality_tolerance
            && self.max_violation <= config.constraint_tolerance
    }
}

struct Derivatives<T> {
    grad_f: Vec<T>,
    grad_g: Vec<Vec<T>>,
    curv_f: Option<Vec<T>>,
    curv_g: Vec<Option<Vec<T>>>,
}

fn fd_derivatives<T: Scalar>(
    problem: &NlpProblem<'_, T>,
    x: &[T],
    fd_step: T,
    evals: &Cell<usize>,
) -> Derivatives<T> {
    let n = x.len();
    let central = |f: &dyn Fn(&[T]) -> T| {
        let mut probe = x.to_vec();
        let mut grad = vec![T::zero(); n];
        for j in 0..n {
            let h = fd_step * (T::one() + x[j].abs());
            probe[j] = x[j] + h;
            let fp = f(&probe);
            probe[j] = x[j] - h;
            let fm = f(&probe);
            probe[j] = x[j];
            grad[j] = (fp - fm) / (h + h);
        }
        Derivative {
            gradient: grad,
            curvature: None,
        }
    };
    let df = match &problem.objective_derivative {
        Some(derivative) => derivative(x),
        None => central(&problem.objective),
    };
    let (grad_g, curv_g) = problem
        .constraints
        .iter()
        .zip(&problem.constraint_derivatives)
        .map(|(g, dg)| {
            let d = match dg {
                Some(derivative) => derivative(x),
                None => central(g),
            };
            (d.gradient, d.curvature)
        })
        .unzip();
    evals.set(evals.get() + 2 * n);
    Derivatives {
        grad_f: df.gradient,
        grad_g,
        curv_f: df.curvature,
        curv_g,
    }
}

fn projected_gradient_norm<T: Scalar>(x: &[T], grad: &[T], lower: &[T], upper: &[T]) -> T {
    x.iter()
        .zip(grad)
        .zip(lower.iter().zip(upper))
        .fold(T::zero(), |acc, ((&xi, &gi), (&lo, &hi))| {
            acc.max((xi - (xi - gi).max(lo).min(hi)).abs())
        })
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

#[derive(Debug, Clone)]
struct MeritValue<T> {
    merit: T,
    objective: T,
    constraints: Vec<T>,
}

/// Powell–Hestenes–Rockafellar augmented Lagrangian for inequalities.
struct Merit<'p, 'a, T> {
    problem: &'p NlpProblem<'a, T>,
    multipliers: &'p [T],
    penalty: T,
    fd_step: T,
    evals: &'p Cell<usize>,
}

impl<T: Scalar> Merit<'_, '_, T> {
    fn value(&self, x: &[T]) -> MeritValue<T> {
        let objective = self.problem.objective(x);
        let constraints = self.problem.constraint_values(x);
        self.evals.set(self.evals.get() + 1);
        let half = T::lit(0.5);
        let mut merit = objective;
        for (&g, &lam) in constraints.iter().zip(self.multipliers) {
            let shifted = lam + self.penalty * g;
            merit = merit
                + if shifted > T::zero() {
                    lam * g + half * self.penalty * g * g
                } else {
                    -half * lam * lam / self.penalty
                };
        }
        MeritValue {
            merit,
            objective,
            constraints,
        }
    }

    /// Merit gradient, plus a curvature model when every contributing
    /// function has one.
    fn model(&self, x: &[T], constraints: &[T]) -> (Vec<T>, Option<Vec<T>>) {
        let d = fd_derivatives(self.problem, x, self.fd_step, self.evals);
        let n = x.len();
        let mut grad = d.grad_f;
        let mut curv = d.curv_f;
        for (((&g, &lam), grad_g), curv_g) in constraints
            .iter()
            .zip(self.multipliers)
            .zip(&d.grad_g)
            .zip(&d.curv_g)
        {
            let weight = (lam + self.penalty * g).max(T::zero());
            if weight > T::zero() {
                for (gj, &dj) in grad.iter_mut().zip(grad_g) {
                    *gj = *gj + weight * dj;
                }
                curv = match (curv, curv_g) {
                    (Some(mut h), Some(hg)) => {
                        for i in 0..n {
                            for j in 0..n {
                                h[i * n + j] =
                                    h[i * n + j] + weight * hg[i * n + j] + self.penalty * grad_g[i] * grad_g[j];
                            }
                        }
                        Some(h)
                    }
                    _ => None,
                };
            }
        }
        (grad, curv)
    }
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `n × n`)
/// by Cholesky factorization; `None` if `a` is not numerically positive
/// definite.
fn cholesky_solve<T: Scalar>(mut a: Vec<T>, b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag = diag - a[j * n + k] * a[j * n + k];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return None;
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v = v - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - a[i * n + k] * y[k];
        }
        y[i] = y[i] / a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - a[k * n + i] * y[k];
        }
        y[i] = y[i] / a[i * n + i];
    }
    Some(y)
}

/// Levenberg–Marquardt step `-(H_FF + μ diag(H_FF))⁻¹ g_F` on the free
/// coordinates; raises `μ` until the damped matrix factors.
fn damped_step<T: Scalar>(curv: &[T], grad: &[T], free: &[bool], mu: &mut T) -> Option<Vec<T>> {
    let n = grad.len();
    let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let m = idx.len();
    if m == 0 {
        return Some(vec![T::zero(); n]);
    }
    let max_diag = idx.iter().fold(T::zero(), |acc, &i| acc.max(curv[i * n + i]));
    let floor = (max_diag * T::lit(1e-10)).max(T::min_positive_value().sqrt());
    let rhs: Vec<T> = idx.iter().map(|&i| -grad[i]).collect();
    for _ in 0..30 {
        let mut a = vec![T::zero(); m * m];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r * m + c] = curv[i * n + j];
            }
            a[r * m + r] = a[r * m + r] + *mu * (curv[i * n + i].max(floor));
        }
        if let Some(sol) = cholesky_solve(a, &rhs) {
            let mut d = vec![T::zero(); n];
            for (r, &i) in idx.iter().enumerate() {
                d[i] = sol[r];
            }
            return Some(d);
        }
        *mu = (*mu * T::lit(10.0)).max(T::lit(1e-8));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerStatus {
    Converged,
    MaxIterations,
    Stalled,
}

struct InnerOutcome<T> {
    x: Vec<T>,
    value: MeritValue<T>,
    status: InnerStatus,
    iterations: usize,
}

/// Dense inverse-Hessian approximation.
struct InverseHessian<T> {
    n: usize,
    h: Vec<T>,
    scaled: bool,
}

impl<T: Scalar> InverseHessian<T> {
    fn new(n: usize) -> Self {
        let mut s = Self {
            n,
            h: vec![T::zero(); n * n],
            scaled: false,
        };
        s.reset(T::one());
        s
    }

    fn reset(&mut self, diag: T) {
        self.h.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..self.n {
            self.h[i * self.n + i] = diag;
        }
    }

    fn apply(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| dot(&self.h[i * self.n..(i + 1) * self.n], v))
            .collect()
    }

    fn update(&mut self, s: &[T], y: &[T]) {
        let sy = dot(s, y);
        let yy = dot(y, y);
        if !(sy > T::lit(1e-12) * yy.sqrt() * dot(s, s).sqrt()) {
            return;
        }
        if !self.scaled {
            self.reset(sy / yy);
            self.scaled = true;
        }
        let rho = T::one() / sy;
        let hy = self.apply(y);
        let yhy = dot(y, &hy);
        let coef = rho * rho * yhy + rho;
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                self.h[idx] = self.h[idx] - rho * (s[i] * hy[j] + hy[i] * s[j]) + coef * s[i] * s[j];
            }
        }
    }
}

struct InnerContext<'r, T> {
    trace: Option<&'r mut Vec<TraceRow<T>>>,
    iteration_counter: &'r mut usize,
    outer: usize,
}

fn inner_solve<T: Scalar>(
    merit: &Merit<'_, '_, T>,
    x0: Vec<T>,
    config: &SolverConfig<T>,
    ctx: &mut InnerContext<'_, T>,
) -> InnerOutcome<T> {
    let problem = merit.problem;
    let (lower, upper) = (problem.lower(), problem.upper());
    let n = x0.len();
    let c1 = T::lit(1e-4);
    let mut x = x0;
    let mut value = merit.value(&x);
    let (mut grad, mut curv) = merit.model(&x, &value.constraints);
    let mut hess = InverseHessian::new(n);
    let mut mu = T::lit(1e-3);

    for it in 0..config.max_inner_iterations {
        let pg = projected_gradient_norm(&x, &grad, lower, upper);
        if pg <= config.optimality_tolerance {
            return InnerOutcome {
                x,
                value,
                status: InnerStatus::Converged,
                iterations: it,
            };
        }

        // two-metric projection: coordinates within `eps` of a bound that the
        // gradient pushes against are sent to the bound, the rest get the
        // quasi-Newton step
        let eps = pg.min(T::lit(1e-3));
        let mut free_grad = grad.clone();
        let mut to_bound = vec![T::zero(); n];
        let active: Vec<bool> = (0..n)
            .map(|i| {
                if x[i] <= lower[i] + eps && grad[i] > T::zero() {
                    to_bound[i] = lower[i] - x[i];
                    true
                } else if x[i] >= upper[i] - eps && grad[i] < T::zero() {
                    to_bound[i] = upper[i] - x[i];
                    true
                } else {
                    false
                }
            })
            .collect();
        for i in 0..n {
            if active[i] {
                free_grad[i] = T::zero();
            }
        }
        let free: Vec<bool> = active.iter().map(|a| !a).collect();
        let with_active = |mut d: Vec<T>| {
            for i in 0..n {
                if active[i] {
                    d[i] = to_bound[i];
                }
            }
            d
        };

        // unit infinity-norm steepest step, used until curvature information exists
        let steepest = || -> Vec<T> {
            let scale = T::one() / inf_norm(&free_grad).max(T::min_positive_value());
            with_active(free_grad.iter().map(|&g| -g * scale).collect())
        };
        let model_dir = match &curv {
            Some(h) => damped_step(h, &free_grad, &free, &mut mu).map(&with_active),
            None if hess.scaled => Some(with_active(hess.apply(&free_grad).into_iter().map(|v| -v).collect())),
            None => None,
        };
        let had_model = model_dir.is_some();
        let mut candidates = Vec::with_capacity(2);
        if let Some(d) = model_dir {
            if dot(&grad, &d) < T::zero() {
                candidates.push(d);
            }
        }
        candidates.push(steepest());

        let mut accepted = None;
        for (attempt, dir) in candidates.into_iter().enumerate() {
            let mut alpha = T::one();
            for _ in 0..50 {
                let mut trial: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + alpha * di).collect();
                problem.project(&mut trial);
                let step: Vec<T> = trial.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                let step_norm = inf_norm(&step);
                if step_norm <= T::epsilon() * (T::one() + inf_norm(&x)) {
                    break;
                }
                let trial_value = merit.value(&trial);
                if trial_value.merit.is_finite()
                    && trial_value.merit <= value.merit + c1 * dot(&grad, &step)
                {
                    accepted = Some((trial, trial_value, step, step_norm, alpha, attempt));
                    break;
                }
                alpha = alpha * T::lit(0.5);
            }
            if accepted.is_some() {
                break;
            }
            hess = InverseHessian::new(n);
        }

        let Some((trial, trial_value, step, step_norm, alpha, attempt)) = accepted else {
            return InnerOutcome {
                x,
                value,
                status: InnerStatus::Stalled,
                iterations: it,
            };
        };
        if curv.is_some() {
            // trust the damped model more after full steps, less after cuts
            mu = if had_model && attempt == 0 && alpha == T::one() {
                (mu * T::lit(0.3)).max(T::lit(1e-12))
            } else {
                (mu * T::lit(4.0)).min(T::lit(1e12))
            };
        }

        let (trial_grad, trial_curv) = merit.model(&trial, &trial_value.constraints);
        let y: Vec<T> = trial_grad.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        hess.update(&step, &y);

        *ctx.iteration_counter += 1;
        if let Some(trace) = ctx.trace.as_deref_mut() {
            trace.push(TraceRow {
                iteration: *ctx.iteration_counter,
                outer: ctx.outer,
                objective: trial_value.objective,
                violation: violation_of(&trial_value.constraints),
                step_norm,
            });
        }
        x = trial;
        value = trial_value;
        grad = trial_grad;
        curv = trial_curv;
    }

    let pg = projected_gradient_norm(&x, &grad, lower, upper);
    let status = if pg <= config.optimality_tolerance {
        InnerStatus::Converged
    } else {
        InnerStatus::MaxIterations
    };
    InnerOutcome {
        x,
        value,
        status,
        iterations: config.max_inner_iterations,
    }
}

/// Minimizes `problem` from `x0` (projected onto the box first).
pub fn minimize<T: Scalar>(
    problem: &NlpProblem<'_, T>,
    x0: &[T],
    config: &SolverConfig<T>,
) -> Result<SolverResult<T>> {
    config.validate()?;
    if x0.len() != problem.dimension() {
        return Err(Error::SolverInput(format!(
            "x0 has dimension {}, problem has {}",
            x0.len(),
            problem.dimension()
        )));
    }
    let mut x = x0.to_vec();
    problem.project(&mut x);
    let f0 = problem.objective(&x);
    let g0 = problem.constraint_values(&x);
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::SolverInput(format!("non-finite objective or constraint at x0 (f = {f0})")));
    }

    let m = problem.num_constraints();
    let evals = Cell::new(1);
    let mut multipliers = vec![T::zero(); m];
    let mut penalty = config.penalty_initial;
    let mut trace = Vec::new();
    let mut iteration_counter = 0usize;
    let mut outer_violations = Vec::new();

    // best feasible (objective) else least infeasible
    let mut best = (x.clone(), f0, violation_of(&g0));
    let better = |cand: (T, T), best: (T, T)| -> bool {
        let tol = config.constraint_tolerance;
        match (cand.1 <= tol, best.1 <= tol) {
            (true, true) => cand.0 < best.0,
            (true, false) => true,
            (false, true) => false,
            (false, false) => cand.1 < best.1,
        }
    };

    let mut status = SolverStatus::MaxIterations;
    let mut outer_done = 0;
    let mut prev_violation = T::infinity();
    let mut converged_at = None;

    for outer in 1..=config.max_outer_iterations {
        outer_done = outer;
        let merit = Merit {
            problem,
            multipliers: &multipliers,
            penalty,
            fd_step: config.fd_step,
            evals: &evals,
        };
        let mut ctx = InnerContext {
            trace: config.trace.then_some(&mut trace),
            iteration_counter: &mut iteration_counter,
            outer,
        };
        let x_before = x.clone();
        let inner = inner_solve(&merit, x, config, &mut ctx);
        x = inner.x;
        let violation = violation_of(&inner.value.constraints);
        outer_violations.push(violation);
        if better((inner.value.objective, violation), (best.1, best.2)) {
            best = (x.clone(), inner.value.objective, violation);
        }

        let updated: Vec<T> = multipliers
            .iter()
            .zip(&inner.value.constraints)
            .map(|(&lam, &g)| (lam + penalty * g).max(T::zero()))
            .collect();
        multipliers = updated;

        if inner.status == InnerStatus::Converged && violation <= config.constraint_tolerance {
            status = SolverStatus::Converged;
            converged_at = Some((x.clone(), inner.value.objective, violation));
            break;
        }
        if m == 0 {
            // nothing to update between outer iterations: an exhausted inner
            // budget restarts the quasi-Newton model from the current point
            if inner.status == InnerStatus::Stalled {
                status = SolverStatus::Stalled;
                break;
            }
            continue;
        }
        if inner.status == InnerStatus::Stalled && inner.iterations == 0 && x == x_before && outer > 1 {
            status = SolverStatus::Stalled;
            break;
        }
        if violation > T::lit(0.25) * prev_violation {
            penalty = penalty * config.penalty_growth;
        }
        prev_violation = violation;
    }

    let (x_best, objective_value, max_constraint_violation) = converged_at.unwrap_or(best);
    let kkt = check_kkt(problem, &x_best, Some(&multipliers), config);
    if status == SolverStatus::Converged && !kkt.satisfies(config) {
        status = SolverStatus::Stalled;
    }
    Ok(SolverResult {
        x_best,
        objective_value,
        max_constraint_violation,
        status,
        iterations: outer_done,
        inner_iterations: iteration_counter,
        function_evaluations: evals.get(),
        multipliers,
        outer_violations,
        kkt,
        trace,
    })
}

/// Finite-difference first-order optimality check at `x`. Without explicit
/// multipliers, nonnegative multipliers for the nearly active constraints are
/// estimated by least squares on the free coordinates.
pub fn check_kkt<T: Scalar>(
    problem: &NlpProblem<'_, T>,
    x: &[T],
    multipliers: Option<&[T]>,
    config: &SolverConfig<T>,
) -> KktReport<T> {
    let evals = Cell::new(0);
    let objective = problem.objective(x);
    let g = problem.constraint_values(x);
    let d = fd_derivatives(problem, x, config.fd_step, &evals);
    let (lower, upper) = (problem.lower(), problem.upper());

    let lambdas = match multipliers {
        Some(l) => l.to_vec(),
        None => estimate_multipliers(x, &g, &d, lower, upper, config),
    };

    let mut grad_l = d.grad_f.clone();
    for (lam, gg) in lambdas.iter().zip(&d.grad_g) {
        for (gl, &gj) in grad_l.iter_mut().zip(gg) {
            *gl = *gl + *lam * gj;
        }
    }
    let complementarity = lambdas
        .iter()
        .zip(&g)
        .fold(T::zero(), |acc, (&l, &gi)| acc.max((l * gi).abs()));
    KktReport {
        projected_gradient_norm: projected_gradient_norm(x, &grad_l, lower, upper),
        max_violation: violation_of(&g),
        complementarity,
        objective,
        multipliers: lambdas,
    }
}

fn estimate_multipliers<T: Scalar>(
    x: &[T],
    g: &[T],
    d: &Derivatives<T>,
    lower: &[T],
    upper: &[T],
    config: &SolverConfig<T>,
) -> Vec<T> {
    let m = g.len();
    let near = config.constraint_tolerance.sqrt();
    let free: Vec<usize> = (0..x.len()).filter(|&j| x[j] > lower[j] && x[j] < upper[j]).collect();
    let mut lam = vec![T::zero(); m];
    let active: Vec<usize> = (0..m).filter(|&i| g[i] >= -near).collect();
    if active.is_empty() || free.is_empty() {
        return lam;
    }
    // coordinate descent on ||grad_f + sum lam_i grad_g_i||^2 over the free set, lam >= 0
    for _ in 0..200 {
        for &i in &active {
            let mut r: Vec<T> = free.iter().map(|&j| d.grad_f[j]).collect();
            for &k in &active {
                if k != i {
                    for (rj, &j) in r.iter_mut().zip(&free) {
                        *rj = *rj + lam[k] * d.grad_g[k][j];
                    }
                }
            }
            let gi: Vec<T> = free.iter().map(|&j| d.grad_g[i][j]).collect();
            let denom = dot(&gi, &gi);
            if denom > T::zero() {
                lam[i] = (-dot(&r, &gi) / denom).max(T::zero());
            }
        }
    }
    lam
}

/// Writes the per-iteration trace as CSV: `iteration,outer,objective,violation,step_norm`.
pub fn write_trace_csv<T: Scalar, W: Write>(rows: &[TraceRow<T>], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,outer,objective,violation,step_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e}",
            r.iteration,
            r.outer,
            r.objective.to_f64_lossy(),
            r.violation.to_f64_lossy(),
            r.step_norm.to_f64_lossy()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn bound_active_quadratic() {
        let p = NlpProblem::new(vec![0.0], vec![1.0], |x: &[f64]| (x[0] - 2.0).powi(2)).unwrap();
        let r = minimize(&p, &[0.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert_eq!(r.x_best, vec![1.0]);
    }

    #[test]
    fn symmetric_constrained_quadratic() {
        let p = NlpProblem::new(vec![-10.0; 2], vec![10.0; 2], |x: &[f64]| x[0] * x[0] + x[1] * x[1])
            .unwrap()
            .with_constraint(|x: &[f64]| 1.0 - x[0] - x[1]);
        let r = minimize(&p, &[2.0, 0.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged, "{r:?}");
        assert!((r.x_best[0] - 0.5).abs() < 1e-4 && (r.x_best[1] - 0.5).abs() < 1e-4, "{:?}", r.x_best);
        assert!((r.multipliers[0] - 1.0).abs() < 1e-3);
        for w in r.outer_violations.windows(2) {
            assert!(w[1] <= w[0], "{:?}", r.outer_violations);
        }
    }

    #[test]
    fn rosenbrock_in_box() {
        let p = NlpProblem::new(vec![-2.0; 2], vec![2.0; 2], rosenbrock).unwrap();
        let r = minimize(&p, &[-1.2, 1.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x_best[0] - 1.0).abs() < 1e-3 && (r.x_best[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kkt_examples() {
        let cfg = SolverConfig::default();
        let q = NlpProblem::new(vec![-5.0; 2], vec![5.0; 2], |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2)).unwrap();
        assert!(check_kkt(&q, &[1.0, -2.0], None, &cfg).projected_gradient_norm < 1e-8);

        let b = NlpProblem::new(vec![0.0], vec![1.0], |x: &[f64]| (x[0] - 2.0).powi(2)).unwrap();
        assert_eq!(check_kkt(&b, &[1.0], None, &cfg).projected_gradient_norm, 0.0);

        let r = NlpProblem::new(vec![-2.0; 2], vec![2.0; 2], rosenbrock).unwrap();
        assert!(check_kkt(&r, &[-1.2, 1.0], None, &cfg).projected_gradient_norm > 0.1);
    }

    #[test]
    fn kkt_estimates_active_multiplier() {
        let p = NlpProblem::new(vec![-10.0; 2], vec![10.0; 2], |x: &[f64]| x[0] * x[0] + x[1] * x[1])
            .unwrap()
            .with_constraint(|x: &[f64]| 1.0 - x[0] - x[1]);
        let k = check_kkt(&p, &[0.5, 0.5], None, &SolverConfig::default());
        assert!((k.multipliers[0] - 1.0).abs() < 1e-6);
        assert!(k.projected_gradient_norm < 1e-6);
    }

    #[test]
    fn rejects_non_finite_start() {
        let p = NlpProblem::new(vec![-1.0], vec![1.0], |x: &[f64]| 1.0 / x[0]).unwrap();
        assert!(matches!(minimize(&p, &[0.0], &SolverConfig::default()), Err(Error::SolverInput(_))));
    }

    #[test]
    fn nan_region_is_stepped_around() {
        // objective is undefined for x > 0.5, the minimizer of the smooth part sits at 0.4
        let p = NlpProblem::new(vec![-3.0], vec![3.0], |x: &[f64]| {
            if x[0] > 0.5 { f64::NAN } else { (x[0] - 0.4).powi(2) }
        })
        .unwrap();
        let r = minimize(&p, &[-3.0], &SolverConfig::default()).unwrap();
        assert!((r.x_best[0] - 0.4).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn deterministic_and_traced() {
        let cfg = SolverConfig { trace: true, ..SolverConfig::default() };
        let p = NlpProblem::new(vec![-2.0; 2], vec![2.0; 2], rosenbrock).unwrap();
        let a = minimize(&p, &[-1.2, 1.0], &cfg).unwrap();
        let b = minimize(&p, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), a.inner_iterations);
        let mut buf = Vec::new();
        write_trace_csv(&a.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,outer,objective,violation,step_norm\n"));
        assert_eq!(text.lines().count(), a.trace.len() + 1);
    }

    #[test]
    fn bounds_hold_at_every_iterate() {
        let cfg = SolverConfig { trace: true, ..SolverConfig::default() };
        let p = NlpProblem::new(vec![0.2, -0.5], vec![0.8, 0.5], rosenbrock).unwrap();
        let r = minimize(&p, &[5.0, -5.0], &cfg).unwrap();
        assert!(r.x_best[0] >= 0.2 && r.x_best[0] <= 0.8);
        assert!(r.x_best[1] >= -0.5 && r.x_best[1] <= 0.5);
        for w in r.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }

    #[test]
    fn single_precision_solves_bound_quadratic() {
        let cfg = SolverConfig::<f32> { fd_step: 1e-3, optimality_tolerance: 1e-3, ..SolverConfig::default() };
        let p = NlpProblem::new(vec![0.0f32], vec![1.0], |x: &[f32]| (x[0] - 2.0).powi(2)).unwrap();
        let r = minimize(&p, &[0.0], &cfg).unwrap();
        assert_eq!(r.x_best, vec![1.0f32]);
    }
}
