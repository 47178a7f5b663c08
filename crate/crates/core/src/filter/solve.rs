//! MAP solution of a single step and the conditional draw of `v`.

use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::linalg::{c, CVec};
use crate::optim::{minimize, LbfgsOptions, Telemetry};
use crate::pde::PdeModel;
use crate::prior::{conditional_v, eig_truncate, ModeState, SimState};
use crate::rng::{self, Purpose};

use super::objective::{covariances, StepObjective, Whitening, XiPreconditioner};
use super::{StepOptions, StepResult, VMode};

/// Fixed-spectrum step.
pub fn solve_step_fixed(
    prev: &SimState,
    pde: &PdeModel,
    delta: f64,
    opts: &StepOptions,
) -> Result<StepResult> {
    let obj = StepObjective::new(prev, pde, delta, opts.hyper, None)?;
    solve(&obj, opts)
}

/// Step with the log-spectrum inferred jointly with the field.
pub fn solve_step_adaptive(
    prev: &SimState,
    pde: &PdeModel,
    delta: f64,
    opts: &StepOptions,
) -> Result<StepResult> {
    let obj = StepObjective::new(prev, pde, delta, opts.hyper, Some(opts.increment))?;
    solve(&obj, opts)
}

fn solve(obj: &StepObjective<'_>, opts: &StepOptions) -> Result<StepResult> {
    let grid = obj.prev.grid;
    let real: Vec<bool> = (0..grid.half_len()).map(|k| grid.is_real_mode(k)).collect();
    let n_xi = if obj.is_adaptive() { obj.excitation_len() } else { 0 };
    let mut u = obj.predictive_mean().to_vec();
    let mut xi = vec![0.0; n_xi];
    let mut telemetry: Option<Telemetry> = None;
    let rounds = opts.restarts.max(1);
    // the iteration budget is shared by the re-whitening rounds
    let per_round = opts.optimizer.max_iter.div_ceil(rounds).max(1);
    let mut budget = opts.optimizer.max_iter;
    for round in 0..rounds {
        if budget == 0 {
            break;
        }
        let round_opts = LbfgsOptions {
            max_iter: per_round.min(budget),
            ..opts.optimizer
        };
        let xi_ref = obj.is_adaptive().then_some(xi.as_slice());
        let spec = obj.spectrum(xi_ref)?;
        let factors = obj.mode_factors(&spec)?;
        let beta = obj.mean_partials(&u);
        let covs = obj.linearized_covariances(&factors, &beta);
        let white = Whitening::new(obj.predictive_mean().to_vec(), &covs, real.clone())?;
        let precond = if obj.is_adaptive() {
            Some(XiPreconditioner::new(xi.clone(), obj.xi_fisher(&spec)?)?)
        } else {
            None
        };
        let nu = white.dim();
        let mut x0 = white.from_u(&u);
        x0.resize(nu + n_xi, 0.0);
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let u = white.to_u(&x[..nu]);
            let xi = precond.as_ref().map(|p| p.to_xi(&x[nu..]));
            let ev = obj.eval(&u, xi.as_deref())?;
            let mut g = white.grad_to_x(&ev.grad_u);
            if let (Some(p), Some(gx)) = (&precond, ev.grad_xi) {
                g.extend(p.grad_to_z(&gx));
            }
            Ok((ev.value, g))
        };
        let min = minimize(f, x0, &round_opts)?;
        budget -= min.telemetry.iterations.min(budget);
        u = white.to_u(&min.x[..nu]);
        if let Some(p) = &precond {
            xi = p.to_xi(&min.x[nu..]);
        }
        let done = min.telemetry.converged
            && (round > 0 || !obj.is_adaptive() || min.telemetry.iterations <= 1);
        match &mut telemetry {
            Some(t) => t.chain(&min.telemetry),
            None => telemetry = Some(min.telemetry),
        }
        if done {
            break;
        }
    }
    let telemetry = telemetry.expect("at least one round");
    finish(obj, opts, u, obj.is_adaptive().then_some(xi), telemetry)
}

fn finish(
    obj: &StepObjective<'_>,
    opts: &StepOptions,
    u: Vec<CVec>,
    xi: Option<Vec<f64>>,
    telemetry: Telemetry,
) -> Result<StepResult> {
    let prev = obj.prev;
    let grid = prev.grid;
    let spectrum = obj.spectrum(xi.as_deref())?;
    let ev = obj.eval(&u, xi.as_deref())?;
    let factors = obj.mode_factors(&spectrum)?;
    let covs = obj.linearized_covariances(&factors, &obj.mean_partials(&u));
    let ds = covariances(&spectrum, &obj.hyper, prev.order, grid.size())?;
    let mut rng = rng::stream(opts.seed, opts.step_index, Purpose::Velocity);
    let mut modes = Vec::with_capacity(grid.half_len());
    for k in 0..grid.half_len() {
        let real = grid.is_real_mode(k);
        let block = conditional_v(
            &prev.modes[k],
            &u[k],
            obj.g_prev().half()[k],
            ev.g.half()[k],
            obj.delta,
            &ds[k],
        )?;
        let mut v = match opts.v_mode {
            VMode::Mean => block.mean.clone(),
            VMode::Sample => {
                let cov = if real { block.cov.map(|z| c(z.re)) } else { block.cov.clone() };
                let t = eig_truncate(&cov, opts.truncation)?;
                let z = CVec::from_fn(t.rank, |_, _| {
                    if real {
                        c(rng::normal(&mut rng))
                    } else {
                        rng::complex_normal(&mut rng)
                    }
                });
                &block.mean + t.sqrt_factor() * z
            }
        };
        let mut uk = u[k].clone();
        if real {
            v.iter_mut().for_each(|z| z.im = 0.0);
            uk.iter_mut().for_each(|z| z.im = 0.0);
        }
        modes.push(ModeState { u: uk, v });
    }
    let field_var = covs.iter().map(|cv| cv[(0, 0)].re.max(0.0)).collect();
    let state = SimState {
        time: prev.time + obj.delta,
        grid,
        order: prev.order,
        modes,
        spectrum,
        lineage: format!("seed={} step={}", opts.seed, opts.step_index),
    };
    if state.modes.iter().any(|m| m.u.iter().chain(m.v.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return Err(Error::Numerical(format!(
            "step {} produced a non-finite state",
            opts.step_index
        )));
    }
    Ok(StepResult {
        step: opts.step_index as usize,
        delta: obj.delta,
        state,
        g: FourierField::from_half(grid, ev.g.into_half())?,
        objective: ev.value,
        field_var,
        xi,
        telemetry,
        flagged: !telemetry.converged,
        seed: opts.seed,
    })
}
