//! Engine objects built from a run configuration.

use probspec::baselines::{
    analytic_diffusion, reference_solution, spectrum_from_truth, trapezoidal_step, truth_state,
};
use probspec::filter::{
    initial_state_from_profile, FailurePolicy, GaussianProfile, RunOptions, SpectrumSchedule,
    StepOptions, VMode,
};
use probspec::grid::{SpatialGrid, SpectralTransform};
use probspec::optim::LbfgsOptions;
use probspec::pde::{make_burgers, make_diffusion, PdeModel};
use probspec::prior::SimState;
use probspec::spectrum::{power_law_spectrum, LogGrid, LogSpectrum, SpectrumHyper};

use crate::config::{PdeName, PolicyCfg, ReferenceKind, RunConfig, SpectrumMode, VModeCfg};
use crate::error::{config_err, numerical, CliError, CliResult};

/// Ground truth at the output times, on a grid of `k_ref` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub k_ref: usize,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Truth {
    /// Values at time index `i` subsampled to `grid`.
    pub fn restrict(&self, i: usize, grid: SpatialGrid) -> CliResult<Vec<f64>> {
        let k = grid.size();
        if self.k_ref % k != 0 {
            return Err(CliError::Input(format!(
                "reference grid {} is incompatible with K = {k}",
                self.k_ref
            )));
        }
        let v = self.values.get(i).ok_or_else(|| {
            CliError::Input(format!("reference has no time index {i}"))
        })?;
        Ok(v.iter().step_by(self.k_ref / k).copied().collect())
    }
}

pub struct Scenario {
    pub cfg: RunConfig,
    pub grid: SpatialGrid,
    pub pde: PdeModel,
    pub profile: GaussianProfile,
    pub hyper: SpectrumHyper,
    pub increment: SpectrumHyper,
    pub initial: SimState,
}

impl Scenario {
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        let grid = SpatialGrid::new(cfg.grid.k).map_err(config_err)?;
        let pde = match cfg.pde.name {
            PdeName::Diffusion => make_diffusion(cfg.pde.nu),
            PdeName::Burgers => make_burgers(cfg.pde.nu),
        }
        .map_err(config_err)?;
        let profile = GaussianProfile {
            amplitude: cfg.initial.amplitude,
            width: cfg.initial.width,
            center: cfg.initial.center,
        };
        let sp = &cfg.spectrum;
        let log_grid = LogGrid::covering(sp.l, sp.n_max, grid.size()).map_err(config_err)?;
        let mut tau0 = power_law_spectrum(sp.exponent, sp.amplitude, log_grid).map_err(config_err)?;
        if let Some(s0) = sp.sigma0 {
            tau0 = tau0.with_sigma0(s0).map_err(config_err)?;
        }
        let initial = initial_state_from_profile(&profile, &tau0, grid, cfg.prior.order, &pde)
            .map_err(config_err)?;
        let offset = match sp.offset {
            Some(o) => o,
            None => {
                let o = log_rms(&initial);
                log::info!("spectrum.offset defaults to the log RMS of the initial modes: {o:.6}");
                o
            }
        };
        let hyper = SpectrumHyper {
            sigma_tau: sp.sigma_tau,
            offset,
            slope: sp.slope,
            offset_std: sp.offset_std,
            slope_std: sp.slope_std,
            n_max: sp.n_max,
        };
        let inc = &cfg.increment;
        let increment = SpectrumHyper {
            sigma_tau: inc.sigma_tau.unwrap_or(sp.sigma_tau),
            offset: 0.0,
            slope: 0.0,
            offset_std: inc.offset_std.unwrap_or(sp.offset_std),
            slope_std: inc.slope_std.unwrap_or(sp.slope_std),
            n_max: sp.n_max,
        };
        hyper.check_coverage(log_grid, grid.size()).map_err(config_err)?;
        increment.validate().map_err(config_err)?;
        Ok(Self {
            cfg,
            grid,
            pde,
            profile,
            hyper,
            increment,
            initial,
        })
    }

    pub fn step_options(&self, seed: u64) -> StepOptions {
        let o = &self.cfg.optimizer;
        StepOptions {
            optimizer: LbfgsOptions {
                gtol: o.gtol,
                max_iter: o.max_iter,
                memory: o.memory,
                stagnation: o.stagnation,
            },
            hyper: self.hyper,
            increment: self.increment,
            restarts: o.restarts,
            v_mode: match self.cfg.sampling.v_mode {
                VModeCfg::Sample => VMode::Sample,
                VModeCfg::Mean => VMode::Mean,
            },
            truncation: self.cfg.sampling.truncation,
            seed,
            step_index: 1,
        }
    }

    pub fn run_options(&self, schedule: SpectrumSchedule, seed: u64) -> RunOptions {
        RunOptions {
            steps: self.cfg.time.steps,
            deltas: self.cfg.deltas(),
            schedule,
            step: self.step_options(seed),
            policy: match self.cfg.run.policy {
                PolicyCfg::Abort => FailurePolicy::Abort,
                PolicyCfg::Continue => FailurePolicy::Continue,
            },
        }
    }

    /// Ground truth at every step time, or `None` without a reference.
    pub fn reference(&self) -> CliResult<Option<Truth>> {
        let times = self.cfg.times();
        match self.cfg.reference.kind {
            ReferenceKind::None => Ok(None),
            ReferenceKind::Analytic => {
                let nu = self.cfg.pde.nu;
                let u0 = self.initial.component(0);
                let t = SpectralTransform::new(self.grid);
                let values = times
                    .iter()
                    .map(|&ti| t.synthesize(&analytic_diffusion(&u0, nu, ti)?))
                    .collect::<probspec::Result<Vec<_>>>()
                    .map_err(numerical)?;
                Ok(Some(Truth {
                    k_ref: self.grid.size(),
                    times,
                    values,
                }))
            }
            ReferenceKind::Rk4 => {
                let r = &self.cfg.reference;
                let fine = SpatialGrid::new(r.k_ref).map_err(config_err)?;
                let s0 = self
                    .profile
                    .derivatives(&fine.positions(), 0)
                    .map_err(config_err)?
                    .swap_remove(0);
                let dt_min = self.cfg.deltas().into_iter().fold(f64::INFINITY, f64::min);
                let sol = reference_solution(&self.pde, &s0, &times, dt_min / r.dt_divisor, r.dealias)
                    .map_err(numerical)?;
                Ok(Some(Truth {
                    k_ref: sol.k_ref,
                    times: sol.times,
                    values: sol.values,
                }))
            }
        }
    }

    /// Spectra estimated from the true transitions `i-1 -> i` for
    /// `i in steps`.
    pub fn truth_spectra(
        &self,
        truth: &Truth,
        steps: std::ops::RangeInclusive<usize>,
    ) -> CliResult<Vec<LogSpectrum>> {
        let opts = self.step_options(0).optimizer;
        let mut out = Vec::new();
        let mut prev = None;
        for i in steps {
            if i == 0 || i >= truth.values.len() {
                return Err(CliError::Input(format!(
                    "reference has no transition ending at step {i}"
                )));
            }
            let delta = truth.times[i] - truth.times[i - 1];
            let before = match prev.take() {
                Some(s) => s,
                None => truth_state(&truth.values[i - 1], &self.pde, self.grid).map_err(numerical)?,
            };
            let after = truth_state(&truth.values[i], &self.pde, self.grid).map_err(numerical)?;
            let (spec, tel) = spectrum_from_truth(
                &before,
                &after,
                delta,
                &self.hyper,
                &self.initial.spectrum,
                self.grid,
                &opts,
            )
            .map_err(numerical)?;
            if !tel.converged {
                log::warn!(
                    "spectrum of step {i}: optimizer stopped after {} iterations (gradient {:.3e})",
                    tel.iterations,
                    tel.grad_norm
                );
            }
            out.push(spec);
            prev = Some(after);
        }
        Ok(out)
    }

    /// Trapezoidal chain from the initial grid values; `None` from the
    /// first step whose implicit solve fails.
    pub fn baseline(&self) -> Vec<Option<Vec<f64>>> {
        let t = SpectralTransform::new(self.grid);
        let mut cur = t.synthesize(&self.initial.component(0)).ok();
        let mut out = vec![cur.clone()];
        for i in 1..=self.cfg.time.steps {
            cur = cur.and_then(|v| match trapezoidal_step(&v, &self.pde, self.cfg.delta(i)) {
                Ok(next) => Some(next),
                Err(e) => {
                    log::warn!("trapezoidal baseline stops at step {i}: {e}");
                    None
                }
            });
            out.push(cur.clone());
        }
        out
    }

    pub fn schedule(&self, spectra: Option<Vec<LogSpectrum>>) -> SpectrumSchedule {
        match (self.cfg.spectrum.mode, spectra) {
            (SpectrumMode::Adaptive, _) => SpectrumSchedule::Adaptive,
            (_, Some(s)) => SpectrumSchedule::PerStep(s),
            _ => SpectrumSchedule::Fixed,
        }
    }
}

/// Log RMS amplitude of the non-constant initial field modes.
fn log_rms(state: &SimState) -> f64 {
    let u0 = state.component(0);
    let half = u0.half();
    let ms = half[1..].iter().map(|z| z.norm_sqr()).sum::<f64>() / (half.len() - 1) as f64;
    0.5 * ms.max(f64::MIN_POSITIVE).ln()
}
