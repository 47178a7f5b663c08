//! Step-by-step Bayesian filtering of the PDE solution.
//!
//! Each step maximises the posterior of the new field derivatives `u^i`
//! (and, in adaptive mode, of the log-spectrum) given the previous state,
//! then draws the time derivatives `v^i` from their Gaussian conditional.

mod closed_form;
mod initial;
mod objective;
mod solve;

pub use closed_form::{
    empirical_bayes_posterior, linear_step_closed_form, pointwise_variance, ClosedFormStep,
    EmpiricalBayes,
};
pub use initial::{initial_state_from_profile, GaussianProfile};
pub use objective::{Evaluation, StepObjective};
pub(crate) use objective::{excitation_fisher, jittered, tau_fisher_jacobian, XiPreconditioner};
pub use solve::{solve_step_adaptive, solve_step_fixed};

use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::linalg::CVec;
use crate::optim::{LbfgsOptions, Telemetry};
use crate::pde::PdeModel;
use crate::prior::SimState;
use crate::spectrum::{LogSpectrum, SpectrumHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VMode {
    Sample,
    Mean,
}

/// Options of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub optimizer: LbfgsOptions,
    pub hyper: SpectrumHyper,
    /// Prior of the per-unit-time log-spectrum increment (adaptive mode).
    pub increment: SpectrumHyper,
    /// Re-whitening rounds of the optimizer.
    pub restarts: usize,
    pub v_mode: VMode,
    /// Relative eigenvalue cutoff when sampling `v`.
    pub truncation: f64,
    pub seed: u64,
    pub step_index: u64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            optimizer: LbfgsOptions::default(),
            hyper: SpectrumHyper::default(),
            increment: SpectrumHyper {
                offset: 0.0,
                slope: 0.0,
                ..SpectrumHyper::default()
            },
            restarts: 10,
            v_mode: VMode::Sample,
            truncation: 1e-12,
            seed: 0,
            step_index: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub step: usize,
    pub delta: f64,
    /// New state: MAP `u^i`, `v^i` and the spectrum used or inferred.
    pub state: SimState,
    /// `g(u^i)`.
    pub g: FourierField,
    pub objective: f64,
    /// Posterior variance of each field mode under the measurement
    /// linearised at the MAP.
    pub field_var: Vec<f64>,
    /// Log-spectrum excitations (adaptive mode).
    pub xi: Option<Vec<f64>>,
    pub telemetry: Telemetry,
    /// Set when the optimizer stopped before meeting its tolerance.
    pub flagged: bool,
    pub seed: u64,
}

impl StepResult {
    pub fn field_std(&self) -> Vec<f64> {
        pointwise_variance(self.state.grid, &self.field_var)
            .into_iter()
            .map(f64::sqrt)
            .collect()
    }
}

/// Objective value and gradient of a step at `u` (and `xi` in adaptive
/// mode); gradients are complex-coded, `d/dRe + i d/dIm`.
pub fn step_nll(
    u: &[CVec],
    xi: Option<&[f64]>,
    prev: &SimState,
    pde: &PdeModel,
    delta: f64,
    opts: &StepOptions,
) -> Result<Evaluation> {
    let increment = xi.map(|_| opts.increment);
    StepObjective::new(prev, pde, delta, opts.hyper, increment)?.eval(u, xi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSchedule {
    /// Keep the initial state's spectrum.
    Fixed,
    /// Use `spectra[i - 1]` for step `i`.
    PerStep(Vec<LogSpectrum>),
    /// Infer the spectrum jointly with the field.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    Abort,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub steps: usize,
    /// Step sizes; a single entry is used for every step.
    pub deltas: Vec<f64>,
    pub schedule: SpectrumSchedule,
    pub step: StepOptions,
    pub policy: FailurePolicy,
}

impl RunOptions {
    pub fn delta(&self, i: usize) -> f64 {
        if self.deltas.len() == 1 {
            self.deltas[0]
        } else {
            self.deltas[i - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || (self.deltas.len() != 1 && self.deltas.len() != self.steps) {
            return Err(Error::Parameter(format!(
                "need one step size or one per step ({}), got {}",
                self.steps,
                self.deltas.len()
            )));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::Parameter(format!("step sizes must be > 0, got {d}")));
        }
        if let SpectrumSchedule::PerStep(s) = &self.schedule {
            if s.len() < self.steps {
                return Err(Error::Parameter(format!(
                    "{} steps but only {} spectra",
                    self.steps,
                    s.len()
                )));
            }
        }
        self.step.hyper.validate()?;
        self.step.increment.validate()
    }
}

/// Runs the steps one at a time; each step consumes the previous state.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    pde: &'a PdeModel,
    opts: RunOptions,
    state: SimState,
    done: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(pde: &'a PdeModel, opts: RunOptions, initial: SimState) -> Result<Self> {
        opts.validate()?;
        initial.validate()?;
        Ok(Self {
            pde,
            opts,
            state: initial,
            done: 0,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn steps_done(&self) -> usize {
        self.done
    }

    pub fn is_finished(&self) -> bool {
        self.done >= self.opts.steps
    }

    /// Advances one step. A flagged (non-converged) step is an error under
    /// the abort policy.
    pub fn advance(&mut self) -> Result<StepResult> {
        if self.is_finished() {
            return Err(Error::Contract("simulation already finished".into()));
        }
        let i = self.done + 1;
        let delta = self.opts.delta(i);
        let mut step_opts = self.opts.step;
        step_opts.step_index = i as u64;
        let result = match &self.opts.schedule {
            SpectrumSchedule::Fixed => solve_step_fixed(&self.state, self.pde, delta, &step_opts)?,
            SpectrumSchedule::PerStep(spectra) => {
                let mut prev = self.state.clone();
                prev.spectrum = spectra[i - 1].clone();
                solve_step_fixed(&prev, self.pde, delta, &step_opts)?
            }
            SpectrumSchedule::Adaptive => {
                solve_step_adaptive(&self.state, self.pde, delta, &step_opts)?
            }
        };
        if result.flagged && self.opts.policy == FailurePolicy::Abort {
            return Err(Error::Numerical(format!(
                "step {i}: optimizer stopped after {} iterations with gradient norm {:.3e}",
                result.telemetry.iterations, result.telemetry.grad_norm
            )));
        }
        self.state = result.state.clone();
        self.done = i;
        Ok(result)
    }
}

pub fn run_simulation(
    pde: &PdeModel,
    opts: RunOptions,
    initial: SimState,
) -> Result<Vec<StepResult>> {
    let mut sim = Simulation::new(pde, opts, initial)?;
    let mut out = Vec::new();
    while !sim.is_finished() {
        out.push(sim.advance()?);
    }
    Ok(out)
}
