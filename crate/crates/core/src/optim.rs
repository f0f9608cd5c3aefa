//! Smooth unconstrained or box-bounded maximization: limited-memory BFGS with
//! a strong-Wolfe line search, and plain gradient ascent with backtracking.
//!
//! Internally everything minimizes `f = -objective`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    QuasiNewton,
    GradientAscent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Converged once the infinity norm of the (projected) gradient is below
    /// `grad_tol` and the last step changed the objective by less than
    /// `rel_tol` relative.
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant for the strong Wolfe condition.
    pub c2: f64,
    /// First trial step of gradient ascent.
    pub step_size: f64,
    pub max_line_search: usize,
    /// Optional box bounds applied to every parameter.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::QuasiNewton,
            max_iters: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            step_size: 1.0,
            max_line_search: 50,
            lower: None,
            upper: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be non-negative");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("line search needs 0 < c1 < c2 < 1");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if self.memory == 0 {
            return bad("memory must be at least 1");
        }
        if self.max_line_search == 0 {
            return bad("max_line_search must be at least 1");
        }
        if let (Some(lo), Some(hi)) = (self.lower, self.upper) {
            if lo > hi {
                return bad("lower bound exceeds upper bound");
            }
        }
        Ok(())
    }

    fn bounded(&self) -> bool {
        self.lower.is_some() || self.upper.is_some()
    }

    fn project(&self, x: &mut [f64]) {
        for v in x {
            if let Some(lo) = self.lower {
                *v = v.max(lo);
            }
            if let Some(hi) = self.upper {
                *v = v.min(hi);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Ascent gradient at `x`.
    pub gradient: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimization view of the caller's objective. Non-finite values count as
/// `+inf` so that line searches back away from them.
struct Problem<F> {
    f: F,
}

impl<F> Problem<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match (self.f)(x) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                Ok((-v, g.into_iter().map(|x| -x).collect()))
            }
            Ok(_) | Err(Error::NonFinite) => Ok((f64::INFINITY, vec![f64::NAN; x.len()])),
            Err(e) => Err(e),
        }
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn step(x: &[f64], d: &[f64], a: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + a * d).collect()
}

struct Sample {
    a: f64,
    f: f64,
    dphi: f64,
    point: Option<Point>,
}

/// Strong-Wolfe line search along a descent direction `d`: a bracketing
/// phase followed by zoom with safeguarded quadratic interpolation.
fn wolfe_search<F>(
    prob: &mut Problem<F>,
    cur: &Point,
    d: &[f64],
    a_init: f64,
    cfg: &OptimizerConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (f0, dphi0) = (cur.f, dot(&cur.g, d));
    if !(dphi0 < 0.0) {
        return Ok(None);
    }
    let eval = |prob: &mut Problem<F>, a: f64| -> Result<Sample> {
        let x = step(&cur.x, d, a);
        let (f, g) = prob.eval(&x)?;
        let dphi = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        Ok(Sample {
            a,
            f,
            dphi,
            point: Some(Point { x, f, g }),
        })
    };
    let armijo = |s: &Sample| s.f <= f0 + cfg.c1 * s.a * dphi0;
    let curvature = |s: &Sample| s.dphi.abs() <= -cfg.c2 * dphi0;

    let mut prev = Sample {
        a: 0.0,
        f: f0,
        dphi: dphi0,
        point: None,
    };
    let mut a = a_init;
    let (mut lo, mut hi);
    let mut iters = 0;
    loop {
        if iters == cfg.max_line_search {
            return Ok(prev.point);
        }
        iters += 1;
        let s = eval(prob, a)?;
        if !armijo(&s) || (prev.a > 0.0 && s.f >= prev.f) {
            lo = prev;
            hi = (s.a, s.f);
            break;
        }
        if curvature(&s) {
            return Ok(s.point);
        }
        if s.dphi >= 0.0 {
            hi = (prev.a, prev.f);
            lo = s;
            break;
        }
        a = 2.0 * s.a;
        prev = s;
    }
    while iters < cfg.max_line_search {
        iters += 1;
        let (a_hi, f_hi) = hi;
        let w = a_hi - lo.a;
        if w.abs() <= 1e-16 * a_hi.abs().max(lo.a.abs()) {
            break;
        }
        let denom = 2.0 * (f_hi - lo.f - lo.dphi * w);
        let mut a = if f_hi.is_finite() && denom > 0.0 {
            lo.a - lo.dphi * w * w / denom
        } else {
            lo.a + 0.5 * w
        };
        let (left, right) = if w > 0.0 { (lo.a, a_hi) } else { (a_hi, lo.a) };
        let margin = 0.1 * (right - left);
        if !(a > left + margin && a < right - margin) {
            a = 0.5 * (left + right);
        }
        let s = eval(prob, a)?;
        if !armijo(&s) || s.f >= lo.f {
            hi = (s.a, s.f);
        } else {
            if curvature(&s) {
                return Ok(s.point);
            }
            if s.dphi * (a_hi - lo.a) >= 0.0 {
                hi = (lo.a, lo.f);
            }
            lo = s;
        }
    }
    // Fall back to the best sufficient-decrease point found.
    Ok(lo.point)
}

/// Backtracking Armijo search on the projected path `P(x + a d)`.
fn backtrack<F>(
    prob: &mut Problem<F>,
    cur: &Point,
    d: &[f64],
    a_init: f64,
    cfg: &OptimizerConfig,
) -> Result<Option<(Point, f64)>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut a = a_init;
    for _ in 0..cfg.max_line_search {
        let mut x = step(&cur.x, d, a);
        cfg.project(&mut x);
        let dx: Vec<f64> = x.iter().zip(&cur.x).map(|(n, o)| n - o).collect();
        let decrease = dot(&cur.g, &dx);
        if decrease < 0.0 {
            let (f, g) = prob.eval(&x)?;
            if f <= cur.f + cfg.c1 * decrease {
                return Ok(Some((Point { x, f, g }, a)));
            }
        } else if inf_norm(&dx) == 0.0 {
            return Ok(None);
        }
        a *= 0.5;
    }
    Ok(None)
}

/// Infinity norm of the projected-gradient step, which is the plain gradient
/// norm without bounds.
fn stationarity(cfg: &OptimizerConfig, p: &Point) -> f64 {
    if !cfg.bounded() {
        return inf_norm(&p.g);
    }
    let mut y: Vec<f64> = p.x.iter().zip(&p.g).map(|(x, g)| x - g).collect();
    cfg.project(&mut y);
    y.iter().zip(&p.x).fold(0.0f64, |m, (y, x)| m.max((y - x).abs()))
}

/// Directions are zeroed for coordinates held at a bound by the gradient.
fn free_mask(cfg: &OptimizerConfig, p: &Point) -> Vec<bool> {
    p.x.iter()
        .zip(&p.g)
        .map(|(&x, &g)| {
            let at_lo = cfg.lower.is_some_and(|lo| x <= lo && g > 0.0);
            let at_hi = cfg.upper.is_some_and(|hi| x >= hi && g < 0.0);
            !(at_lo || at_hi)
        })
        .collect()
}

fn two_loop(g: &[f64], mem: &Memory) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

type Memory = VecDeque<(Vec<f64>, Vec<f64>, f64)>;

fn quasi_newton_step<F>(
    prob: &mut Problem<F>,
    cur: &Point,
    mem: &Memory,
    cfg: &OptimizerConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mask = free_mask(cfg, cur);
    let g_free: Vec<f64> = cur
        .g
        .iter()
        .zip(&mask)
        .map(|(g, &m)| if m { *g } else { 0.0 })
        .collect();
    let mut d = two_loop(&g_free, mem);
    for (v, &m) in d.iter_mut().zip(&mask) {
        if !m {
            *v = 0.0;
        }
    }
    if !(dot(&d, &cur.g) < 0.0) {
        d = g_free.iter().map(|g| -g).collect();
    }
    let a0 = if mem.is_empty() {
        (1.0 / inf_norm(&d)).min(1.0)
    } else {
        1.0
    };
    if cfg.bounded() {
        Ok(backtrack(prob, cur, &d, a0, cfg)?.map(|(p, _)| p))
    } else {
        wolfe_search(prob, cur, &d, a0, cfg)
    }
}

/// Maximizes `objective` starting from `x0`. The closure returns the
/// objective value and its gradient.
pub fn maximize<F>(x0: Vec<f64>, objective: F, cfg: &OptimizerConfig) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut prob = Problem { f: objective };
    let mut x0 = x0;
    cfg.project(&mut x0);
    let (f, g) = prob.eval(&x0)?;
    if !f.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut cur = Point { x: x0, f, g };
    let mut trace = Vec::new();
    let mut mem: Memory = VecDeque::new();
    let mut ga_step = cfg.step_size;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut rel_change = f64::INFINITY;
    loop {
        let norm = stationarity(cfg, &cur);
        trace.push(TraceEntry {
            objective: -cur.f,
            grad_norm: norm,
        });
        if norm < cfg.grad_tol && (iterations == 0 || rel_change < cfg.rel_tol) {
            stop = StopReason::GradientTolerance;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;
        let next = match cfg.method {
            Method::GradientAscent => {
                let d: Vec<f64> = cur.g.iter().map(|g| -g).collect();
                match backtrack(&mut prob, &cur, &d, ga_step, cfg)? {
                    Some((p, a)) => {
                        ga_step = (2.0 * a).min(1e6);
                        Some(p)
                    }
                    None => None,
                }
            }
            Method::QuasiNewton => {
                let mut attempt = quasi_newton_step(&mut prob, &cur, &mem, cfg)?;
                if attempt.is_none() && !mem.is_empty() {
                    mem.clear();
                    attempt = quasi_newton_step(&mut prob, &cur, &mem, cfg)?;
                }
                if let Some(p) = &attempt {
                    let s: Vec<f64> = p.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = p.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                        if mem.len() == cfg.memory {
                            mem.pop_front();
                        }
                        mem.push_back((s, y, 1.0 / sy));
                    }
                }
                attempt
            }
        };
        let Some(next) = next else {
            stop = if norm < cfg.grad_tol {
                StopReason::GradientTolerance
            } else {
                StopReason::LineSearchFailed
            };
            break;
        };
        rel_change = (cur.f - next.f).abs() / cur.f.abs().max(next.f.abs()).max(1.0);
        cur = next;
    }
    let grad_norm = trace.last().map_or(f64::INFINITY, |t| t.grad_norm);
    Ok(Outcome {
        objective: -cur.f,
        gradient: cur.g.iter().map(|g| -g).collect(),
        x: cur.x,
        trace,
        converged: grad_norm < cfg.grad_tol,
        iterations,
        stop,
    })
}
