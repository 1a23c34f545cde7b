//! Box-constrained limited-memory BFGS maximizer. Gradients are
//! finite-difference unless the problem supplies a closed form.
//!
//! The search direction comes from the usual two-loop recursion restricted to
//! the free variables (coordinates not pinned at a bound with the gradient
//! pushing outward). Steps follow the projected path `P(x + a d)` and are
//! accepted under a backtracking Armijo rule. Non-finite objective values are
//! treated as rejected steps, so implicit support constraints (e.g. the GPD
//! upper endpoint) can be expressed by returning `-inf`.

use std::collections::VecDeque;

use crate::error::{Result, XtremError};

/// Curvature pairs kept by the quasi-Newton update.
pub const MEMORY: usize = 8;
/// Armijo sufficient-decrease constant.
pub const ARMIJO_C1: f64 = 1e-4;
/// Step shrink factor during backtracking.
pub const BACKTRACK_SHRINK: f64 = 0.5;
/// Maximum number of backtracks per line search.
pub const MAX_BACKTRACKS: usize = 40;

const DEFAULT_TOL: f64 = 1e-7;
const DEFAULT_FTOL: f64 = 1e7 * f64::EPSILON;
const DEFAULT_MAX_ITER: usize = 500;
const BASE_STEP: f64 = 1e-7;
const STEP_RETRIES: usize = 3;

/// Placeholder gradient type for problems without a closed-form gradient.
pub type NoGradient = fn(&[f64]) -> Vec<f64>;

/// A maximization problem over a box.
pub struct OptimProblem<F, G = NoGradient> {
    objective: F,
    gradient: Option<G>,
    bounds: Vec<(f64, f64)>,
    start: Vec<f64>,
    tol: f64,
    ftol: f64,
    max_iter: usize,
    record_trace: bool,
}

impl<F: Fn(&[f64]) -> f64> OptimProblem<F> {
    /// Unbounded problem starting at `start`.
    pub fn new(objective: F, start: Vec<f64>) -> Self {
        let n = start.len();
        Self {
            objective,
            gradient: None,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            start,
            tol: DEFAULT_TOL,
            ftol: DEFAULT_FTOL,
            max_iter: DEFAULT_MAX_ITER,
            record_trace: false,
        }
    }
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> OptimProblem<F, G> {
    /// Use a closed-form gradient of the objective instead of finite differences.
    pub fn with_gradient<H: Fn(&[f64]) -> Vec<f64>>(self, gradient: H) -> OptimProblem<F, H> {
        OptimProblem {
            objective: self.objective,
            gradient: Some(gradient),
            bounds: self.bounds,
            start: self.start,
            tol: self.tol,
            ftol: self.ftol,
            max_iter: self.max_iter,
            record_trace: self.record_trace,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = bounds;
        self
    }

    /// Projected-gradient tolerance, applied relative to `max(1, |f|)`.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Relative objective-change tolerance between accepted iterates.
    pub fn with_ftol(mut self, ftol: f64) -> Self {
        self.ftol = ftol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Keep every accepted iterate in [`OptimOutcome::trace`].
    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    fn validate(&self) -> Result<()> {
        if self.bounds.len() != self.start.len() {
            return Err(XtremError::Inconsistent(format!(
                "{} bounds for {} parameters",
                self.bounds.len(),
                self.start.len()
            )));
        }
        for (j, (&x, &(lo, hi))) in self.start.iter().zip(&self.bounds).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(XtremError::Inconsistent(format!("bad bounds ({lo}, {hi}) for coordinate {j}")));
            }
            if !(x >= lo && x <= hi) {
                return Err(XtremError::Inconsistent(format!(
                    "start {x} outside bounds ({lo}, {hi}) for coordinate {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Why the maximizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Projected-gradient norm fell below tolerance.
    Gradient,
    /// Relative objective improvement fell below `ftol`.
    FunctionChange,
    /// No acceptable step could be found even along steepest ascent.
    LineSearch,
    MaxIterations,
    /// The gradient could not be evaluated at an accepted iterate.
    GradientFailure,
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub termination: Termination,
    /// Accepted iterates `(x, f(x))`, starting point first; empty unless requested.
    pub trace: Vec<(Vec<f64>, f64)>,
}

fn step_size(x: f64) -> f64 {
    BASE_STEP.max(BASE_STEP * x.abs())
}

/// Finite-difference gradient that never evaluates outside `bounds`.
///
/// Central differences with `h = max(1e-7, 1e-7 |x_j|)`; one-sided where the
/// central stencil would cross a bound. Non-finite stencil values shrink `h`
/// tenfold up to three times before giving up. Coordinates with coincident
/// bounds get a zero component.
pub fn numeric_gradient<F>(f: &F, x: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(XtremError::NonFiniteStart);
    }
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for j in 0..x.len() {
        let (lo, hi) = bounds[j];
        if lo == hi {
            continue;
        }
        let mut h = step_size(x[j]);
        let mut done = false;
        for _ in 0..=STEP_RETRIES {
            let can_up = x[j] + h <= hi;
            let can_down = x[j] - h >= lo;
            let mut eval = |v: f64| {
                probe[j] = v;
                let r = f(&probe);
                probe[j] = x[j];
                r
            };
            // central first, then whichever one-sided stencil stays finite
            if can_up && can_down {
                let (fp, fm) = (eval(x[j] + h), eval(x[j] - h));
                if fp.is_finite() && fm.is_finite() {
                    grad[j] = (fp - fm) / (2.0 * h);
                    done = true;
                    break;
                }
                if fm.is_finite() {
                    grad[j] = (f0 - fm) / h;
                    done = true;
                    break;
                }
                if fp.is_finite() {
                    grad[j] = (fp - f0) / h;
                    done = true;
                    break;
                }
            } else if can_up {
                let fp = eval(x[j] + h);
                if fp.is_finite() {
                    grad[j] = (fp - f0) / h;
                    done = true;
                    break;
                }
            } else if can_down {
                let fm = eval(x[j] - h);
                if fm.is_finite() {
                    grad[j] = (f0 - fm) / h;
                    done = true;
                    break;
                }
            }
            h *= 0.1;
        }
        if !done {
            return Err(XtremError::GradientFailure(j));
        }
    }
    Ok(grad)
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of the *minimization* objective with components blocked by an
/// active bound zeroed.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if lo == hi || (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(grad: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (p, a) in memory.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Maximizes the problem's objective inside its box.
///
/// Returns the best iterate found. `converged` is set when the projected
/// gradient (infinity norm) drops below `tol * max(1, |f|)` or the relative
/// improvement between accepted iterates drops below `ftol`.
pub fn maximize<F, G>(problem: &OptimProblem<F, G>) -> Result<OptimOutcome>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    problem.validate()?;
    let bounds = &problem.bounds;
    let neg = |x: &[f64]| {
        let v = (problem.objective)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let gradient = |x: &[f64]| match &problem.gradient {
        None => numeric_gradient(&neg, x, bounds),
        Some(grad) => {
            let g: Vec<f64> = grad(x).iter().map(|v| -v).collect();
            match g.iter().position(|v| !v.is_finite()) {
                Some(j) => Err(XtremError::GradientFailure(j)),
                None if g.len() != x.len() => Err(XtremError::Inconsistent(format!(
                    "gradient has {} components for {} parameters",
                    g.len(),
                    x.len()
                ))),
                None => Ok(g),
            }
        }
    };

    let mut x = problem.start.clone();
    let mut f = neg(&x);
    if !f.is_finite() {
        return Err(XtremError::NonFiniteStart);
    }
    let mut g = gradient(&x)?;
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(MEMORY);
    let mut trace = Vec::new();
    if problem.record_trace {
        trace.push((x.clone(), -f));
    }

    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut pg_norm = f64::INFINITY;

    while iterations < problem.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_norm <= problem.tol * f.abs().max(1.0) {
            termination = Termination::Gradient;
            break;
        }

        let mut direction: Vec<f64> = two_loop(&pg, &memory).iter().map(|v| -v).collect();
        for (d, p) in direction.iter_mut().zip(&pg) {
            if *p == 0.0 {
                *d = 0.0;
            }
        }
        if !(dot(&direction, &g) < 0.0) || direction.iter().any(|d| !d.is_finite()) {
            memory.clear();
            direction = pg.iter().map(|v| -v).collect();
        }

        let Some((x_new, f_new)) = line_search(&neg, &x, f, &g, &direction, memory.is_empty(), bounds) else {
            if memory.is_empty() {
                termination = Termination::LineSearch;
                break;
            }
            // stale curvature; retry along steepest ascent
            memory.clear();
            continue;
        };
        iterations += 1;

        let g_new = match gradient(&x_new) {
            Ok(g) => g,
            Err(_) => {
                x = x_new;
                f = f_new;
                if problem.record_trace {
                    trace.push((x.clone(), -f));
                }
                termination = Termination::GradientFailure;
                break;
            }
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }

        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if problem.record_trace {
            trace.push((x.clone(), -f));
        }
        if improvement <= problem.ftol * f.abs().max(1.0) {
            let pg = projected_gradient(&x, &g, bounds);
            pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            termination = Termination::FunctionChange;
            break;
        }
    }

    let converged = matches!(termination, Termination::Gradient | Termination::FunctionChange);
    Ok(OptimOutcome {
        argmax: x,
        value: -f,
        converged,
        iterations,
        grad_norm: pg_norm,
        termination,
        trace,
    })
}

/// Backtracking Armijo search along the projected path. Returns the accepted
/// point only if it strictly lowers the (minimization) objective.
fn line_search<F: Fn(&[f64]) -> f64>(
    neg: &F,
    x: &[f64],
    f: f64,
    g: &[f64],
    direction: &[f64],
    first_order: bool,
    bounds: &[(f64, f64)],
) -> Option<(Vec<f64>, f64)> {
    let dmax = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if dmax == 0.0 {
        return None;
    }
    // without curvature information, cap the first trial step at unit length
    let mut alpha = if first_order { (1.0 / dmax).min(1.0) } else { 1.0 };
    let mut trial = x.to_vec();
    for _ in 0..=MAX_BACKTRACKS {
        for ((t, xi), di) in trial.iter_mut().zip(x).zip(direction) {
            *t = xi + alpha * di;
        }
        project(&mut trial, bounds);
        if trial.iter().zip(x).all(|(a, b)| a == b) {
            return None;
        }
        let ft = neg(&trial);
        if ft.is_finite() {
            let step: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
            let decrease = dot(g, &step);
            if ft <= f + ARMIJO_C1 * decrease && ft < f {
                return Some((trial, ft));
            }
        }
        alpha *= BACKTRACK_SHRINK;
    }
    None
}
