//! Limited-memory BFGS with a strong-Wolfe line search and a hard cap on
//! outer iterations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration ceiling standing in for "no cap".
pub const UNLIMITED: usize = 10_000;

const CURVATURE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Sup-norm threshold on the gradient.
    pub grad_tolerance: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: UNLIMITED,
            memory: 10,
            grad_tolerance: 1e-5,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 20,
        }
    }
}

impl OptimizerConfig {
    pub fn with_max_iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.memory == 0 {
            return bad("optimizer memory must be positive");
        }
        if self.max_line_search_steps == 0 {
            return bad("max_line_search_steps must be positive");
        }
        if !(self.grad_tolerance >= 0.0) {
            return bad("grad_tolerance must be nonnegative");
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad("need 0 < c1 < c2 < 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    IterationCap,
    GradientTolerance,
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::IterationCap => "iteration_cap",
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::LineSearchFailure => "line_search_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub final_point: Vec<f64>,
    pub final_value: f64,
    pub iterations_used: usize,
    /// Starting value followed by the value after each iteration.
    pub objective_trace: Vec<f64>,
    pub termination: Termination,
}

/// A differentiable function to minimize. Writes the gradient into `grad`
/// and returns the value.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self(x, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn checked_eval<O: Objective + ?Sized>(obj: &mut O, x: &[f64], grad: &mut [f64]) -> Result<f64> {
    let f = obj.evaluate(x, grad)?;
    if !f.is_finite() {
        return Err(Error::Optimizer(format!("objective is {f}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Optimizer(format!("gradient entry {i} is {}", grad[i])));
    }
    Ok(f)
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(grad: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alpha = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        alpha[i] = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= alpha[i] * yi;
        }
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for (i, p) in history.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (alpha[i] - beta) * si;
        }
    }
    for qi in &mut q {
        *qi = -*qi;
    }
    q
}

/// Minimizer of the cubic matching values and slopes at two points, or NaN.
fn cubic_minimizer(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let d2_sq = d1 * d1 - ga * gb;
    if d2_sq < 0.0 {
        return f64::NAN;
    }
    let d2 = d2_sq.sqrt();
    if a <= b {
        b - (b - a) * ((gb + d2 - d1) / (gb - ga + 2.0 * d2))
    } else {
        a - (a - b) * ((ga + d2 - d1) / (ga - gb + 2.0 * d2))
    }
}

struct Trial {
    step: f64,
    value: f64,
    slope: f64,
    point: Vec<f64>,
    grad: Vec<f64>,
}

struct LineSearch<'a, O: ?Sized> {
    obj: &'a mut O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
}

impl<O: Objective + ?Sized> LineSearch<'_, O> {
    fn eval(&mut self, step: f64) -> Result<Option<Trial>> {
        if self.budget == 0 {
            return Ok(None);
        }
        self.budget -= 1;
        let point: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + step * d).collect();
        let mut grad = vec![0.0; point.len()];
        let value = checked_eval(self.obj, &point, &mut grad)?;
        let slope = dot(&grad, self.dir);
        Ok(Some(Trial {
            step,
            value,
            slope,
            point,
            grad,
        }))
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        t.value > self.f0 + self.c1 * t.step * self.slope0
    }

    fn curvature_holds(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.c2 * self.slope0
    }

    /// Bracketing phase; `None` when the evaluation budget runs out.
    fn search(mut self, first_step: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            step: 0.0,
            value: self.f0,
            slope: self.slope0,
            point: Vec::new(),
            grad: Vec::new(),
        };
        let mut step = first_step;
        let mut first = true;
        loop {
            let Some(t) = self.eval(step)? else {
                return Ok(None);
            };
            if self.armijo_fails(&t) || (!first && t.value >= prev.value) {
                return self.zoom(prev, t);
            }
            if self.curvature_holds(&t) {
                return Ok(Some(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            let guess = cubic_minimizer(prev.step, prev.value, prev.slope, t.step, t.value, t.slope);
            let (lo, hi) = (1.1 * t.step, 10.0 * t.step);
            step = if guess.is_finite() { guess.clamp(lo, hi) } else { 2.0 * t.step };
            prev = t;
            first = false;
        }
    }

    /// `lo` satisfies sufficient decrease and has the lower value; the
    /// minimizer lies between `lo` and `hi`.
    fn zoom(mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        loop {
            let (a, b) = if lo.step < hi.step { (lo.step, hi.step) } else { (hi.step, lo.step) };
            let width = b - a;
            if width <= f64::EPSILON * b {
                return Ok(None);
            }
            let guess = cubic_minimizer(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope);
            let step = if guess.is_finite() && guess >= a + 0.1 * width && guess <= b - 0.1 * width {
                guess
            } else {
                0.5 * (a + b)
            };
            let Some(t) = self.eval(step)? else {
                return Ok(None);
            };
            if self.armijo_fails(&t) || t.value >= lo.value {
                hi = t;
            } else {
                if self.curvature_holds(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
    }
}

/// Minimizes `objective` from `start` for at most `config.max_iterations`
/// quasi-Newton iterations. The curvature history starts empty.
pub fn minimize<O: Objective + ?Sized>(
    objective: &mut O,
    start: &[f64],
    config: &OptimizerConfig,
) -> Result<OptimizeReport> {
    config.validate()?;
    let n = start.len();
    let mut x = start.to_vec();
    let mut grad = vec![0.0; n];
    let mut f = checked_eval(objective, &x, &mut grad)?;
    let mut trace = vec![f];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;

    let termination = loop {
        if sup_norm(&grad) <= config.grad_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= config.max_iterations {
            break Termination::IterationCap;
        }
        let mut dir = two_loop(&grad, &history);
        let mut slope = dot(&grad, &dir);
        if history.is_empty() || !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let first_step = if history.is_empty() { 1.0 / (-slope).sqrt() } else { 1.0 };
        debug_assert!(slope < 0.0);

        let search = LineSearch {
            obj: &mut *objective,
            x: &x,
            dir: &dir,
            f0: f,
            slope0: slope,
            c1: config.wolfe_c1,
            c2: config.wolfe_c2,
            budget: config.max_line_search_steps,
        };
        let Some(t) = search.search(first_step)? else {
            break Termination::LineSearchFailure;
        };

        let s: Vec<f64> = t.point.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_EPS * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = t.point;
        grad = t.grad;
        f = t.value;
        iterations += 1;
        trace.push(f);
    };

    Ok(OptimizeReport {
        final_point: x,
        final_value: f,
        iterations_used: iterations,
        objective_trace: trace,
        termination,
    })
}
