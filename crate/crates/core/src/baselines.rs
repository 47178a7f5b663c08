//! Reference solutions and classical baselines.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filter::{excitation_fisher, jittered, tau_fisher_jacobian, XiPreconditioner};
use crate::grid::{derivative_factor, FourierField, SpatialGrid, SpectralTransform};
use crate::linalg::{scaled_hermitian_pinv, CMat, CVec, REL_CUTOFF};
use crate::optim::{minimize, LbfgsOptions, Telemetry};
use crate::pde::PdeModel;
use crate::spectrum::{
    accumulate_covariance_grad, excitation_adjoint, mode_covariance, tau_from_excitations,
    LogGrid, LogSpectrum, SpectrumHyper,
};

/// Exact solution of `s_t = nu s_xx` for band-limited data.
pub fn analytic_diffusion(initial: &FourierField, nu: f64, t: f64) -> Result<FourierField> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be >= 0, got {t}")));
    }
    let grid = SpatialGrid::new(initial.grid_size())?;
    let half = initial
        .half()
        .iter()
        .enumerate()
        .map(|(k, v)| v * (-nu * (2.0 * PI * k as f64).powi(2) * t).exp())
        .collect();
    FourierField::from_half(grid, half)
}

/// Grid values of the field and its derivatives `0..=order` from grid
/// values, by spectral differentiation.
fn spectral_derivatives(t: &SpectralTransform, values: &[f64], order: usize) -> Vec<Vec<f64>> {
    let k = t.grid().size();
    let hat = t.analyze_half(values);
    (0..=order)
        .map(|cc| {
            let d: Vec<_> = hat
                .iter()
                .enumerate()
                .map(|(m, v)| derivative_factor(m as i64, cc as u32, k) * v)
                .collect();
            t.synthesize_half(&d)
        })
        .collect()
}

/// `f(s, s_x, ...)` at the grid points with spectral derivatives.
pub fn pointwise_rhs(values: &[f64], pde: &PdeModel, transform: &SpectralTransform) -> Vec<f64> {
    let ders = spectral_derivatives(transform, values, pde.order());
    let mut point = vec![0.0; pde.order() + 1];
    (0..values.len())
        .map(|j| {
            for (p, d) in point.iter_mut().zip(&ders) {
                *p = d[j];
            }
            pde.rhs(&point)
        })
        .collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// One step of the trapezoidal rule
/// `s^i = s^{i-1} + delta/2 (F(s^{i-1}) + F(s^i))`.
///
/// The implicit equation is solved by a fixed-point iteration
/// preconditioned with the linear part of `F` (grid-mean partials at
/// `s^{i-1}`), which is exact in one pass for linear PDEs.
pub fn trapezoidal_step(values: &[f64], pde: &PdeModel, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("step size must be > 0, got {delta}")));
    }
    let grid = SpatialGrid::new(values.len())?;
    let t = SpectralTransform::new(grid);
    let order = pde.order();
    let ders = spectral_derivatives(&t, values, order);
    let mut beta = vec![0.0; order + 1];
    let mut point = vec![0.0; order + 1];
    for j in 0..values.len() {
        for (p, d) in point.iter_mut().zip(&ders) {
            *p = d[j];
        }
        for (b, d) in beta.iter_mut().zip(pde.partials(&point)) {
            *b += d / values.len() as f64;
        }
    }
    let lam: Vec<Complex64> = (0..grid.half_len())
        .map(|k| {
            (0..=order)
                .map(|cc| derivative_factor(k as i64, cc as u32, grid.size()) * beta[cc])
                .sum()
        })
        .collect();
    let f0 = pointwise_rhs(values, pde, &t);
    let base: Vec<f64> = values.iter().zip(&f0).map(|(s, f)| s + 0.5 * delta * f).collect();
    let mut s = values.to_vec();
    for _ in 0..500 {
        let fs = pointwise_rhs(&s, pde, &t);
        let resid: Vec<f64> = (0..s.len()).map(|j| s[j] - base[j] - 0.5 * delta * fs[j]).collect();
        // relative to the largest term of the equation; in the stiff limit
        // delta/2 F dominates and sets the roundoff floor
        let scale = (0..s.len())
            .map(|j| s[j].abs().max(base[j].abs()).max((0.5 * delta * fs[j]).abs()))
            .fold(f64::MIN_POSITIVE, f64::max);
        let rnorm = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !rnorm.is_finite() {
            break;
        }
        if rnorm <= 1e-12 * scale {
            return Ok(s);
        }
        // (I - delta/2 L) s_new = base + delta/2 (F(s) - L s)
        let s_hat = t.analyze_half(&s);
        let rhs_hat = t.analyze_half(&base);
        let f_hat = t.analyze_half(&fs);
        let new_hat: Vec<Complex64> = (0..grid.half_len())
            .map(|k| {
                let nl = f_hat[k] - lam[k] * s_hat[k];
                (rhs_hat[k] + nl * (0.5 * delta)) / (Complex64::new(1.0, 0.0) - lam[k] * (0.5 * delta))
            })
            .collect();
        s = t.synthesize_half(&new_hat);
    }
    Err(Error::Numerical(
        "trapezoidal iteration did not converge to 1e-12".into(),
    ))
}

/// Solution of a PDE on a fine grid at a list of output times.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub times: Vec<f64>,
    /// Fine-grid values per output time.
    pub values: Vec<Vec<f64>>,
    pub k_ref: usize,
    pub dt_ref: f64,
    pub dealias: bool,
}

impl ReferenceSolution {
    /// Values at the `K`-point grid (exact subsampling).
    pub fn restrict(&self, i: usize, grid: SpatialGrid) -> Result<Vec<f64>> {
        let k = grid.size();
        if self.k_ref % k != 0 {
            return Err(Error::Dimension(format!(
                "reference grid {} is not a multiple of {k}",
                self.k_ref
            )));
        }
        let stride = self.k_ref / k;
        Ok(self.values[i].iter().step_by(stride).copied().collect())
    }
}

struct SpectralRhs {
    t: SpectralTransform,
    nu: f64,
    mask: Vec<f64>,
    burgers: bool,
}

impl SpectralRhs {
    fn eval(&self, u: &[Complex64]) -> Vec<Complex64> {
        let k = self.t.grid().size();
        let lin: Vec<Complex64> = u
            .iter()
            .enumerate()
            .map(|(m, v)| v * (-self.nu * (2.0 * PI * m as f64).powi(2)))
            .collect();
        if !self.burgers {
            return lin;
        }
        let ud: Vec<Complex64> = u.iter().enumerate().map(|(m, v)| v * self.mask[m]).collect();
        let dx: Vec<Complex64> = ud
            .iter()
            .enumerate()
            .map(|(m, v)| derivative_factor(m as i64, 1, k) * v)
            .collect();
        let s = self.t.synthesize_half(&ud);
        let sx = self.t.synthesize_half(&dx);
        let prod: Vec<f64> = s.iter().zip(&sx).map(|(a, b)| a * b).collect();
        let ph = self.t.analyze_half(&prod);
        lin.iter()
            .zip(&ph)
            .enumerate()
            .map(|(m, (l, p))| l - p * self.mask[m])
            .collect()
    }

    fn rk4(&self, u: &[Complex64], dt: f64) -> Vec<Complex64> {
        let axpy = |a: &[Complex64], b: &[Complex64], h: f64| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * h).collect()
        };
        let k1 = self.eval(u);
        let k2 = self.eval(&axpy(u, &k1, 0.5 * dt));
        let k3 = self.eval(&axpy(u, &k2, 0.5 * dt));
        let k4 = self.eval(&axpy(u, &k3, dt));
        (0..u.len())
            .map(|m| u[m] + (k1[m] + k2[m] * 2.0 + k3[m] * 2.0 + k4[m]) * (dt / 6.0))
            .collect()
    }
}

fn integrate(rhs: &SpectralRhs, initial: &[f64], times: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
    let mut u = rhs.t.analyze_half(initial);
    let norm0 = initial.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            return Err(Error::Parameter("output times must be non-decreasing and >= 0".into()));
        }
        let n = ((t - now) / dt).ceil() as usize;
        let h = if n > 0 { (t - now) / n as f64 } else { 0.0 };
        for _ in 0..n {
            u = rhs.rk4(&u, h);
        }
        now = t;
        let values = rhs.t.synthesize_half(&u);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 10.0 * norm0.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "reference solution blew up at t = {t}: norm {norm:.3e} vs initial {norm0:.3e} \
                 (time step {dt:.3e} too large?)"
            )));
        }
        out.push(values);
    }
    Ok(out)
}

/// Pseudo-spectral RK4 solution of a diffusion or Burgers equation from
/// fine-grid initial values, checked against a run with half the time step.
pub fn reference_solution(
    pde: &PdeModel,
    initial: &[f64],
    times: &[f64],
    dt_ref: f64,
    dealias: bool,
) -> Result<ReferenceSolution> {
    let grid = SpatialGrid::new(initial.len())?;
    let burgers = match pde.name() {
        "burgers" => true,
        "diffusion" => false,
        other => {
            return Err(Error::Contract(format!("no reference solver for {other}")));
        }
    };
    let nu = pde.nu().expect("diffusion and burgers carry a viscosity");
    if !(dt_ref > 0.0) {
        return Err(Error::Parameter(format!("dt_ref must be > 0, got {dt_ref}")));
    }
    let cutoff = grid.size() as f64 / 3.0;
    let mask = (0..grid.half_len())
        .map(|m| if !dealias || (m as f64) < cutoff { 1.0 } else { 0.0 })
        .collect();
    let rhs = SpectralRhs {
        t: SpectralTransform::new(grid),
        nu,
        mask,
        burgers,
    };
    let values = integrate(&rhs, initial, times, dt_ref)?;
    let check = integrate(&rhs, initial, times, 0.5 * dt_ref)?;
    if let (Some(a), Some(b)) = (values.last(), check.last()) {
        let d = rel_diff(a, b);
        if d >= 1e-8 {
            return Err(Error::Numerical(format!(
                "reference not converged in time: halving dt changes the result by {d:.3e}"
            )));
        }
    }
    Ok(ReferenceSolution {
        times: times.to_vec(),
        values,
        k_ref: grid.size(),
        dt_ref,
        dealias,
    })
}

/// Burgers reference with the 2/3 rule.
pub fn reference_burgers(
    initial: &[f64],
    nu: f64,
    times: &[f64],
    dt_ref: f64,
) -> Result<ReferenceSolution> {
    let pde = crate::pde::make_burgers(nu)?;
    reference_solution(&pde, initial, times, dt_ref, true)
}

/// Field derivatives `u` and their time derivatives `udot` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthState {
    pub u: Vec<CVec>,
    pub udot: Vec<CVec>,
}

/// Truth state at resolution `grid` from fine-grid values: spatial
/// derivatives and `f` are evaluated spectrally on the fine grid, then
/// subsampled and analysed.
pub fn truth_state(fine: &[f64], pde: &PdeModel, grid: SpatialGrid) -> Result<TruthState> {
    let fine_grid = SpatialGrid::new(fine.len())?;
    if fine.len() % grid.size() != 0 {
        return Err(Error::Dimension(format!(
            "fine grid {} is not a multiple of {}",
            fine.len(),
            grid.size()
        )));
    }
    let stride = fine.len() / grid.size();
    let tf = SpectralTransform::new(fine_grid);
    let tc = SpectralTransform::new(grid);
    let o = pde.order();
    let rate = pointwise_rhs(fine, pde, &tf);
    let coarse = |vals: Vec<Vec<f64>>| -> Vec<Vec<Complex64>> {
        vals.iter()
            .map(|v| tc.analyze_half(&v.iter().step_by(stride).copied().collect::<Vec<_>>()))
            .collect()
    };
    let u = coarse(spectral_derivatives(&tf, fine, o));
    let ud = coarse(spectral_derivatives(&tf, &rate, o));
    let pack = |s: &Vec<Vec<Complex64>>| -> Vec<CVec> {
        (0..grid.half_len())
            .map(|k| CVec::from_fn(o + 1, |cc, _| s[cc][k]))
            .collect()
    };
    Ok(TruthState {
        u: pack(&u),
        udot: pack(&ud),
    })
}

/// Exact diffusion truth state from band-limited Fourier coefficients.
pub fn diffusion_truth_state(field: &FourierField, nu: f64, order: usize) -> TruthState {
    let k = field.grid_size();
    let mut u = Vec::new();
    let mut udot = Vec::new();
    for (m, &v) in field.half().iter().enumerate() {
        let lam = -nu * (2.0 * PI * m as f64).powi(2);
        let d = CVec::from_fn(order + 1, |cc, _| derivative_factor(m as i64, cc as u32, k) * v);
        udot.push(d.scale(lam));
        u.push(d);
    }
    TruthState { u, udot }
}

/// Negative log density of one true transition given the excitations
/// `xi` (standard-normal prior included) and its gradient in `xi`.
pub fn transition_nll(
    prev: &TruthState,
    next: &TruthState,
    delta: f64,
    hyper: &SpectrumHyper,
    start: &LogSpectrum,
    grid: SpatialGrid,
    xi: &[f64],
) -> Result<(f64, Vec<f64>)> {
    Transition::new(prev, next, delta, hyper, start, grid)?.eval(xi)
}

struct Transition<'a> {
    resid: Vec<(CVec, CVec)>,
    delta: f64,
    order: usize,
    hyper: &'a SpectrumHyper,
    start: &'a LogSpectrum,
    grid: SpatialGrid,
}

impl<'a> Transition<'a> {
    fn new(
        prev: &TruthState,
        next: &TruthState,
        delta: f64,
        hyper: &'a SpectrumHyper,
        start: &'a LogSpectrum,
        grid: SpatialGrid,
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("step size must be > 0, got {delta}")));
        }
        hyper.check_coverage(start.grid(), grid.size())?;
        let n_modes = grid.half_len();
        if [prev.u.len(), prev.udot.len(), next.u.len(), next.udot.len()]
            .iter()
            .any(|&l| l != n_modes)
        {
            return Err(Error::Dimension("truth states do not match the grid".into()));
        }
        let order = prev.u[0].len() - 1;
        // residuals of the drift, blocks (position, rate)
        let resid = (0..n_modes)
            .map(|k| {
                (
                    &next.u[k] - &prev.u[k] - prev.udot[k].scale(delta),
                    &next.udot[k] - &prev.udot[k],
                )
            })
            .collect();
        Ok(Self { resid, delta, order, hyper, start, grid })
    }

    fn eval(&self, xi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (delta, order, hyper, grid) = (self.delta, self.order, self.hyper, self.grid);
        let qinv = [
            [12.0 / delta.powi(3), -6.0 / delta.powi(2)],
            [-6.0 / delta.powi(2), 4.0 / delta],
        ];
        let ln_det_q = (delta.powi(4) / 12.0).ln();
        let log_grid: LogGrid = self.start.grid();
        let tau = tau_from_excitations(xi, hyper, log_grid)?;
        if tau.iter().any(|t| t.abs() > 300.0) {
            return Err(Error::Numerical("log-spectrum overflow".into()));
        }
        let spec = self.start.with_tau(tau)?;
        let mut value = 0.5 * xi.iter().map(|x| x * x).sum::<f64>();
        let mut grad_tau = vec![0.0; log_grid.len()];
        for (k, (ra, rb)) in self.resid.iter().enumerate() {
            let w = if grid.is_real_mode(k) { 0.5 } else { 1.0 };
            let d = jittered(&mode_covariance(k as i64, &spec, hyper, order, grid.size())?);
            let pinv = scaled_hermitian_pinv(&d, REL_CUTOFF)?;
            let blocks = [ra, rb];
            let y: Vec<CVec> = blocks.iter().map(|r| &pinv.pinv * *r).collect();
            let mut quad = 0.0;
            let mut g = CMat::zeros(order + 1, order + 1);
            for a in 0..2 {
                for b in 0..2 {
                    quad += qinv[a][b] * blocks[a].dotc(&y[b]).re;
                    g -= (&y[b] * y[a].adjoint()).scale(qinv[a][b]);
                }
            }
            let ln_det = (order + 1) as f64 * ln_det_q + 2.0 * pinv.log_det;
            value += w * (quad + ln_det);
            g += pinv.pinv.scale(2.0);
            accumulate_covariance_grad(k as i64, &jittered(&g.scale(w)), &spec, hyper, grid.size(), &mut grad_tau)?;
        }
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite spectrum objective".into()));
        }
        let adj = excitation_adjoint(&grad_tau, hyper, log_grid)?;
        Ok((value, adj.iter().zip(xi).map(|(a, x)| a + x).collect()))
    }
}

/// Log-spectrum estimated from one true transition: the MAP of the
/// excitations under the joint transition density of `(u, udot)` and a
/// standard-normal prior. `start` supplies the log grid and the zero-mode
/// amplitude.
pub fn spectrum_from_truth(
    prev: &TruthState,
    next: &TruthState,
    delta: f64,
    hyper: &SpectrumHyper,
    start: &LogSpectrum,
    grid: SpatialGrid,
    opts: &LbfgsOptions,
) -> Result<(LogSpectrum, Telemetry)> {
    let transition = Transition::new(prev, next, delta, hyper, start, grid)?;
    let order = transition.order;
    let log_grid = start.grid();
    let objective = |xi: &[f64]| transition.eval(xi);
    // preconditioned rounds sharing the iteration budget, as in the filter
    const ROUNDS: usize = 5;
    let per_round = opts.max_iter.div_ceil(ROUNDS).max(1);
    let mut budget = opts.max_iter;
    let mut xi = vec![0.0; SpectrumHyper::excitation_len(log_grid)];
    let mut telemetry: Option<Telemetry> = None;
    while budget > 0 {
        let spec = start.with_tau(tau_from_excitations(&xi, hyper, log_grid)?)?;
        let jac = tau_fisher_jacobian(&spec, hyper, order, grid, false)?;
        let pre = XiPreconditioner::new(xi.clone(), excitation_fisher(jac, hyper, log_grid, SQRT_2)?)?;
        let round = LbfgsOptions {
            max_iter: per_round.min(budget),
            ..*opts
        };
        let f = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (v, g) = objective(&pre.to_xi(z))?;
            Ok((v, pre.grad_to_z(&g)))
        };
        let min = minimize(f, vec![0.0; xi.len()], &round)?;
        budget -= min.telemetry.iterations.min(budget);
        xi = pre.to_xi(&min.x);
        let done = min.telemetry.converged;
        match &mut telemetry {
            Some(t) => t.chain(&min.telemetry),
            None => telemetry = Some(min.telemetry),
        }
        if done || min.telemetry.iterations == 0 {
            break;
        }
    }
    let tau = tau_from_excitations(&xi, hyper, log_grid)?;
    Ok((start.with_tau(tau)?, telemetry.expect("at least one round")))
}
