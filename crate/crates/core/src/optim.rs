//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Stop when `|grad|_inf <= gtol * max(1, |f|)`.
    pub gtol: f64,
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the relative decrease stays below this for two iterations.
    pub stagnation: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-9,
            max_iter: 500,
            memory: 12,
            stagnation: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

impl Telemetry {
    /// Merges the telemetry of a restarted run into `self`.
    pub fn chain(&mut self, next: &Telemetry) {
        self.iterations += next.iterations;
        self.evaluations += next.evaluations;
        self.final_value = next.final_value;
        self.grad_norm = next.grad_norm;
        self.converged = next.converged;
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub telemetry: Telemetry,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimises `f`, which returns the value and gradient. Errors from `f` at
/// trial points are treated as infinite values; an error at `x0` is
/// returned.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut fx, mut gx) = f(&x0)?;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "objective not finite at the starting point ({fx})"
        )));
    }
    let mut x = x0;
    let mut tel = Telemetry {
        iterations: 0,
        evaluations: 1,
        initial_value: fx,
        final_value: fx,
        grad_norm: inf_norm(&gx),
        converged: false,
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut slow = 0;
    let n = x.len();
    loop {
        tel.grad_norm = inf_norm(&gx);
        tel.final_value = fx;
        if tel.grad_norm <= opts.gtol * fx.abs().max(1.0) {
            tel.converged = true;
            break;
        }
        if tel.iterations >= opts.max_iter {
            break;
        }
        // two-loop recursion
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &gx);
        if !(slope < 0.0) {
            mem.clear();
            dir = gx.iter().map(|g| -g).collect();
            slope = -dot(&gx, &gx);
        }
        let mut accepted = line_search(&mut f, &x, fx, &dir, slope, &mut tel.evaluations);
        let len = inf_norm(&dir);
        if accepted.is_none() && mem.is_empty() && len > 1.0 {
            // a badly scaled start: retry with unit-length steps
            dir.iter_mut().for_each(|d| *d /= len);
            accepted = line_search(&mut f, &x, fx, &dir, slope / len, &mut tel.evaluations);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        tel.iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gnew[i] - gx[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > opts.memory {
                mem.pop_front();
            }
        }
        let decrease = fx - fnew;
        let shrinking = inf_norm(&gnew) < 0.9 * inf_norm(&gx);
        x = xn;
        fx = fnew;
        gx = gnew;
        if decrease <= opts.stagnation * fx.abs().max(1.0) && !shrinking {
            slow += 1;
            if slow >= 2 {
                tel.grad_norm = inf_norm(&gx);
                tel.final_value = fx;
                tel.converged = tel.grad_norm <= opts.gtol * fx.abs().max(1.0);
                break;
            }
        } else {
            slow = 0;
        }
    }
    Ok(Minimum {
        x,
        value: fx,
        grad: gx,
        telemetry: tel,
    })
}

type Point = (Vec<f64>, f64, Vec<f64>);

/// Relative rounding noise assumed for objective values.
const NOISE: f64 = 1e-7;

/// Strong-Wolfe line search (bracketing then zoom) along `dir`; points
/// where `f` fails or is not finite count as too long a step.
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    dir: &[f64],
    slope: f64,
    evaluations: &mut usize,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    // Approximate Wolfe (Hager-Zhang): once value changes drown in rounding
    // noise, accept on the directional derivative alone.
    const DELTA: f64 = 0.1;
    let noise = NOISE * fx.abs().max(1.0);
    let approx_wolfe = |ft: f64, d: f64| {
        ft <= fx + noise && d >= C2 * slope && d <= (2.0 * DELTA - 1.0) * slope
    };
    let mut probe = |a: f64| -> Option<(Point, f64)> {
        *evaluations += 1;
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + a * di).collect();
        match f(&trial) {
            Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|g| g.is_finite()) => {
                let d = dot(&gt, dir);
                Some(((trial, ft, gt), d))
            }
            _ => None,
        }
    };
    let armijo = |a: f64, ft: f64| ft <= fx + C1 * a * slope;
    // bracket: lo satisfies Armijo, hi does not (or is invalid)
    let mut lo: (f64, f64, f64, Option<Point>) = (0.0, fx, slope, None);
    let mut hi: (f64, f64);
    let mut a = 1.0;
    loop {
        match probe(a) {
            None => {
                hi = (a, f64::INFINITY);
                break;
            }
            Some((pt, d)) => {
                if approx_wolfe(pt.1, d) && !armijo(a, pt.1) {
                    return Some(pt);
                }
                if !armijo(a, pt.1) || (lo.0 > 0.0 && pt.1 >= lo.1) {
                    hi = (a, pt.1);
                    break;
                }
                if d.abs() <= -C2 * slope {
                    return Some(pt);
                }
                if d >= 0.0 {
                    hi = (lo.0, lo.1);
                    lo = (a, pt.1, d, Some(pt));
                    break;
                }
                lo = (a, pt.1, d, Some(pt));
                a *= 2.0;
                if a > 1e8 {
                    return lo.3;
                }
            }
        }
    }
    for _ in 0..40 {
        let (a_lo, f_lo, d_lo) = (lo.0, lo.1, lo.2);
        let (a_hi, f_hi) = hi;
        let width = a_hi - a_lo;
        let mut a = if f_hi.is_finite() {
            // minimiser of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi)
            let denom = 2.0 * (f_hi - f_lo - d_lo * width);
            if denom > 0.0 {
                a_lo - d_lo * width * width / denom
            } else {
                a_lo + 0.5 * width
            }
        } else {
            a_lo + 0.5 * width
        };
        let (left, right) = (a_lo.min(a_hi), a_lo.max(a_hi));
        let margin = 0.1 * (right - left);
        if !(a > left + margin && a < right - margin) {
            a = 0.5 * (left + right);
        }
        if (right - left) < 1e-16 * right.max(1.0) {
            break;
        }
        match probe(a) {
            None => hi = (a, f64::INFINITY),
            Some((pt, d)) => {
                if approx_wolfe(pt.1, d) && !armijo(a, pt.1) {
                    return Some(pt);
                }
                if !armijo(a, pt.1) || pt.1 >= f_lo {
                    hi = (a, pt.1);
                } else {
                    if d.abs() <= -C2 * slope {
                        return Some(pt);
                    }
                    if d * (a_hi - a_lo) >= 0.0 {
                        hi = (a_lo, f_lo);
                    }
                    lo = (a, pt.1, d, Some(pt));
                }
            }
        }
    }
    lo.3
}
