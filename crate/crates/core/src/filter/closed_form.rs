//! Exact Gaussian steps for linear PDEs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, SpectralTransform};
use crate::linalg::{c, CMat, CVec};
use crate::pde::{g_eval, PdeModel};
use crate::prior::{block_condition, transition_params, Component, GaussianBlock, SimState};
use crate::rng;
use crate::spectrum::{LogSpectrum, SpectrumHyper};

use super::objective::covariances;

#[derive(Debug, Clone)]
pub struct ClosedFormStep {
    /// Posterior over `u^i_k` per half-spectrum mode.
    pub modes: Vec<GaussianBlock>,
    /// `log p(d = 0 | previous state)`.
    pub log_evidence: f64,
}

impl ClosedFormStep {
    pub fn mean(&self) -> Vec<CVec> {
        self.modes.iter().map(|b| b.mean.clone()).collect()
    }

    /// Posterior variance of the field coefficient of each mode.
    pub fn field_var(&self) -> Vec<f64> {
        self.modes.iter().map(|b| b.cov[(0, 0)].re.max(0.0)).collect()
    }
}

/// Conditions the joint prior of `(u^i_k, udot^i_k)` on the measurement
/// `udot^(0),i_k - sum_c beta_c u^(c),i_k = 0`, mode by mode.
pub fn linear_step_closed_form(
    prev: &SimState,
    pde: &PdeModel,
    delta: f64,
    hyper: &SpectrumHyper,
) -> Result<ClosedFormStep> {
    let beta = pde.linear_coefficients().ok_or_else(|| {
        Error::Contract(format!("{} is not linear; no closed-form step", pde.name()))
    })?;
    prev.validate()?;
    if beta.len() != prev.order + 1 {
        return Err(Error::Dimension(format!(
            "{} needs order {}, state has {}",
            pde.name(),
            beta.len() - 1,
            prev.order
        )));
    }
    let grid = prev.grid;
    let transform = SpectralTransform::new(grid);
    let g_prev = g_eval(&prev.u_modes(), pde, &transform)?;
    let ds = covariances(&prev.spectrum, hyper, prev.order, grid.size())?;
    let n = prev.order + 1;
    // (u, udot) -> (u, udot^(0) - beta . u)
    let a = CMat::from_fn(n + 1, 2 * n, |r, col| {
        if r < n {
            c(if r == col { 1.0 } else { 0.0 })
        } else if col < n {
            c(-beta[col])
        } else {
            c(if col == n { 1.0 } else { 0.0 })
        }
    });
    let mut labels: Vec<Component> = (0..n).map(Component::Field).collect();
    labels.push(Component::Derived);
    let mut modes = Vec::with_capacity(grid.half_len());
    let mut log_evidence = 0.0;
    for k in 0..grid.half_len() {
        let m = &prev.modes[k];
        let t = transition_params(delta, &ds[k])?;
        let joint = t.joint(&m.u, &m.rate(g_prev.half()[k]));
        let reduced = GaussianBlock::new(labels.clone(), &a * &joint.mean, &a * &joint.cov * a.adjoint())?;
        let (md, vd) = (reduced.mean[n], reduced.cov[(n, n)].re);
        if vd > 0.0 {
            log_evidence -= if grid.is_real_mode(k) {
                0.5 * (md.re * md.re / vd + (2.0 * std::f64::consts::PI * vd).ln())
            } else {
                md.norm_sqr() / vd + (std::f64::consts::PI * vd).ln()
            };
        }
        let mut post = block_condition(&reduced, &[n], &CVec::from_element(1, c(0.0)))?;
        if grid.is_real_mode(k) {
            post.mean.iter_mut().for_each(|z| z.im = 0.0);
            post.cov = post.cov.map(|z| c(z.re));
        }
        modes.push(post);
    }
    Ok(ClosedFormStep { modes, log_evidence })
}

/// Grid-space variance `Var s(x_j)` implied by independent per-mode field
/// variances `var_k = E|c_k - E c_k|^2` on the half spectrum.
pub fn pointwise_variance(grid: SpatialGrid, var: &[f64]) -> Vec<f64> {
    let kk = grid.size();
    let nyq = grid.nyquist();
    (0..kk)
        .map(|j| {
            var.iter()
                .enumerate()
                .map(|(k, &v)| {
                    if k == 0 || k == nyq {
                        v
                    } else {
                        // 2 Re(c e^{i theta}) with Re c, Im c each of variance v/2
                        let th = 2.0 * std::f64::consts::PI * (k * j % kk) as f64 / kk as f64;
                        2.0 * v * (th.cos().powi(2) + th.sin().powi(2))
                    }
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EmpiricalBayes {
    pub step: ClosedFormStep,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// Posterior of a linear step with the spectrum fixed at `tau_star`,
/// mapped to grid space.
pub fn empirical_bayes_posterior(
    prev: &SimState,
    pde: &PdeModel,
    delta: f64,
    tau_star: &LogSpectrum,
    hyper: &SpectrumHyper,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalBayes> {
    let mut state = prev.clone();
    state.spectrum = tau_star.clone();
    let step = linear_step_closed_form(&state, pde, delta, hyper)?;
    let grid = prev.grid;
    let transform = SpectralTransform::new(grid);
    let mean_half: Vec<_> = step.modes.iter().map(|b| b.mean[0]).collect();
    let mean = transform.synthesize_half(&mean_half);
    let std = pointwise_variance(grid, &step.field_var())
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let mut r = rng::stream(seed, 0, rng::Purpose::PosteriorSamples);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let half: Vec<_> = step
            .modes
            .iter()
            .enumerate()
            .map(|(k, b)| sample_field_coefficient(b, grid.is_real_mode(k), &mut r))
            .collect();
        samples.push(transform.synthesize_half(&half));
    }
    Ok(EmpiricalBayes {
        step,
        mean,
        std,
        samples,
    })
}

fn sample_field_coefficient<R: Rng + ?Sized>(
    block: &GaussianBlock,
    real: bool,
    rng_: &mut R,
) -> num_complex::Complex64 {
    let v = block.cov[(0, 0)].re.max(0.0);
    let z = if real {
        c(rng::normal(rng_))
    } else {
        rng::complex_normal(rng_)
    };
    block.mean[0] + z * v.sqrt()
}
