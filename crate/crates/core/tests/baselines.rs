use std::f64::consts::PI;

use num_complex::Complex64;
use probspec::baselines::{
    analytic_diffusion, diffusion_truth_state, pointwise_rhs, reference_burgers, reference_solution,
    spectrum_from_truth, transition_nll, trapezoidal_step, TruthState,
};
use probspec::filter::GaussianProfile;
use probspec::grid::{FourierField, SpatialGrid, SpectralTransform};
use probspec::linalg::{hermitian_eigen, CVec};
use probspec::optim::LbfgsOptions;
use probspec::pde::{make_burgers, make_diffusion, make_static};
use probspec::spectrum::{mode_covariance, power_law_spectrum, tau_from_excitations, LogGrid, LogSpectrum, SpectrumHyper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn profile_values(kk: usize) -> Vec<f64> {
    let grid = SpatialGrid::new(kk).unwrap();
    GaussianProfile::default().derivatives(&grid.positions(), 0).unwrap().remove(0)
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn analytic_diffusion_examples() {
    let grid = SpatialGrid::new(64).unwrap();
    let t = SpectralTransform::new(grid);
    let f = t.analyze(&profile_values(64)).unwrap();
    assert_eq!(analytic_diffusion(&f, 0.01, 0.0).unwrap(), f);
    let later = analytic_diffusion(&f, 0.01, 0.04).unwrap();
    assert_eq!(later.get(0), f.get(0));
    let factor = (-0.01 * 4.0 * PI * PI * 0.04f64).exp();
    assert!((later.get(1) - f.get(1) * factor).norm() <= 1e-15 * f.get(1).norm());
    assert!(analytic_diffusion(&f, 0.01, -1.0).is_err());
}

#[test]
fn trapezoid_on_linear_modes() {
    let kk = 64;
    let grid = SpatialGrid::new(kk).unwrap();
    let t = SpectralTransform::new(grid);
    let values = profile_values(kk);
    assert_eq!(trapezoidal_step(&values, &make_static(2), 0.1).unwrap(), values);
    let nu = 0.01;
    let pde = make_diffusion(nu).unwrap();
    let before = t.analyze(&values).unwrap();
    for delta in [1e-3, 0.04, 1.0, 1e3] {
        let after = t.analyze(&trapezoidal_step(&values, &pde, delta).unwrap()).unwrap();
        let scale = before.half().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for k in 0..grid.half_len() {
            let lam = -nu * (2.0 * PI * k as f64).powi(2);
            let factor = (1.0 + delta * lam / 2.0) / (1.0 - delta * lam / 2.0);
            assert!((after.half()[k] - before.half()[k] * factor).norm() <= 1e-12 * scale, "delta {delta} k {k}");
            // A-stable
            assert!(after.half()[k].norm() <= before.half()[k].norm() * (1.0 + 1e-12) + 1e-15 * scale);
        }
    }
}

#[test]
fn trapezoid_is_consistent_at_second_order() {
    let kk = 64;
    let t = SpectralTransform::new(SpatialGrid::new(kk).unwrap());
    let values = profile_values(kk);
    let pde = make_burgers(0.05).unwrap();
    let f = pointwise_rhs(&values, &pde, &t);
    let defect = |delta: f64| {
        let next = trapezoidal_step(&values, &pde, delta).unwrap();
        next.iter().zip(&values).zip(&f).map(|((n, v), fv)| (n - v - delta * fv).abs()).fold(0.0, f64::max)
    };
    let ratio = defect(1e-4) / defect(5e-5);
    assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
}

#[test]
fn trapezoid_chain_converges_at_order_two() {
    let kk = 64;
    let grid = SpatialGrid::new(kk).unwrap();
    let t = SpectralTransform::new(grid);
    let nu = 0.01;
    let pde = make_diffusion(nu).unwrap();
    let values = profile_values(kk);
    let end = 0.04;
    let exact = t.synthesize(&analytic_diffusion(&t.analyze(&values).unwrap(), nu, end).unwrap()).unwrap();
    let errors: Vec<f64> = [16usize, 32, 64, 128]
        .iter()
        .map(|&n| {
            let mut s = values.clone();
            for _ in 0..n {
                s = trapezoidal_step(&s, &pde, end / n as f64).unwrap();
            }
            rel(&s, &exact)
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "{errors:?}");
    }
}

#[test]
fn reference_fixed_point_and_conservation() {
    let constant = vec![0.7; 64];
    let r = reference_burgers(&constant, 4e-3, &[0.01, 0.05], 1e-4).unwrap();
    for v in &r.values {
        assert!(v.iter().all(|x| (x - 0.7).abs() < 1e-14));
    }
    let kk = 256;
    let init = profile_values(kk);
    let r = reference_burgers(&init, 4e-3, &[0.03, 0.06], 3e-5).unwrap();
    let mass0: f64 = init.iter().sum::<f64>() / kk as f64;
    for v in &r.values {
        let mass: f64 = v.iter().sum::<f64>() / kk as f64;
        assert!((mass - mass0).abs() <= 1e-10 * mass0);
    }
    assert!(reference_solution(&make_static(2), &init, &[0.1], 1e-3, false).is_err());
}

#[test]
fn reference_in_the_viscous_regime_matches_diffusion() {
    let kk = 128;
    let grid = SpatialGrid::new(kk).unwrap();
    let t = SpectralTransform::new(grid);
    let amp = 2e-3;
    let init: Vec<f64> = grid.positions().iter().map(|x| amp * (2.0 * PI * x).sin()).collect();
    let nu = 0.1;
    // |s s_x| / |nu s_xx| <= amp 2 pi / (nu 4 pi^2), about 0.3%
    assert!(amp * 2.0 * PI / (nu * 4.0 * PI * PI) < 0.01);
    let r = reference_burgers(&init, nu, &[0.1], 1e-4).unwrap();
    let heat = t.synthesize(&analytic_diffusion(&t.analyze(&init).unwrap(), nu, 0.1).unwrap()).unwrap();
    assert!(rel(&r.values[0], &heat) < 0.01);
}

#[test]
fn reference_burgers_self_converges() {
    let t_end = [0.12];
    let coarse = reference_burgers(&profile_values(512), 4e-3, &t_end, 3e-5).unwrap();
    let fine = reference_burgers(&profile_values(1024), 4e-3, &t_end, 1.5e-5).unwrap();
    let grid = SpatialGrid::new(512).unwrap();
    let d = rel(&coarse.restrict(0, grid).unwrap(), &fine.restrict(0, grid).unwrap());
    assert!(d < 1e-6, "{d:e}");
}

#[test]
fn diffusion_truth_state_has_consistent_rates() {
    let grid = SpatialGrid::new(32).unwrap();
    let t = SpectralTransform::new(grid);
    let f = t.analyze(&profile_values(32)).unwrap();
    let s = diffusion_truth_state(&f, 0.01, 2);
    for (u, ud) in s.u.iter().zip(&s.udot) {
        assert!((ud[0] - u[2] * 0.01).norm() <= 1e-12 * u[2].norm().max(1e-300));
    }
}

// One transition drawn from the prior with spectrum `spec`, from rest.
fn synthetic_transition(spec: &LogSpectrum, hyper: &SpectrumHyper, kk: usize, delta: f64, seed: u64) -> (TruthState, TruthState) {
    let grid = SpatialGrid::new(kk).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero: Vec<CVec> = (0..grid.half_len()).map(|_| CVec::zeros(3)).collect();
    // Q = [[d^3/3, d^2/2], [d^2/2, d]] = L L^T
    let l11 = (delta.powi(3) / 3.0).sqrt();
    let l21 = delta * delta / 2.0 / l11;
    let l22 = (delta - l21 * l21).sqrt();
    let (mut u, mut udot) = (Vec::new(), Vec::new());
    for k in 0..grid.half_len() {
        let real = grid.is_real_mode(k);
        let mut d = mode_covariance(k as i64, spec, hyper, 2, kk).unwrap();
        if real {
            d = d.map(|z| Complex64::new(z.re, 0.0));
        }
        let (vals, vecs) = hermitian_eigen(&d).unwrap();
        let mut draw = || {
            let z = CVec::from_fn(3, |i, _| {
                let c = if real {
                    Complex64::new(rng.sample(StandardNormal), 0.0)
                } else {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
                };
                c * vals[i].max(0.0).sqrt()
            });
            &vecs * z
        };
        let (a, b) = (draw(), draw());
        u.push(a.scale(l11));
        udot.push(a.scale(l21) + b.scale(l22));
    }
    let prev = TruthState { u: zero.clone(), udot: zero };
    (prev, TruthState { u, udot })
}

fn resolved_rms(a: &LogSpectrum, b: &LogSpectrum, kk: usize) -> f64 {
    let g = a.grid();
    let lmax = ((kk / 2) as f64).ln();
    let d: Vec<f64> = (0..g.len()).filter(|&m| g.l(m) <= lmax).map(|m| a.tau()[m] - b.tau()[m]).collect();
    (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
}

fn setup(kk: usize) -> (SpectrumHyper, LogGrid, LogSpectrum) {
    let hyper = SpectrumHyper::default();
    let g = LogGrid::covering(500, hyper.n_max, kk).unwrap();
    let start = LogSpectrum::new(g, tau_from_excitations(&vec![0.0; SpectrumHyper::excitation_len(g)], &hyper, g).unwrap(), Some(1.0)).unwrap();
    (hyper, g, start)
}

#[test]
fn spectrum_from_truth_recovers_a_known_spectrum() {
    // a fixed spectrum away from the prior mean, transitions drawn from the
    // field prior with 10 seeds
    let kk = 32;
    let delta = 0.04;
    let (hyper, g, _) = setup(kk);
    let grid = SpatialGrid::new(kk).unwrap();
    let truth = power_law_spectrum(-5.0, 2.0, g).unwrap();
    let mut total = 0.0;
    for seed in 0..10u64 {
        let (prev, next) = synthetic_transition(&truth, &hyper, kk, delta, seed);
        let (est, tel) = spectrum_from_truth(&prev, &next, delta, &hyper, &truth, grid, &LbfgsOptions::default()).unwrap();
        assert!(tel.iterations > 0);
        total += resolved_rms(&est, &truth, kk);
    }
    assert!(total / 10.0 < 0.5, "{}", total / 10.0);
}

#[test]
fn transition_objective_gradient_matches_finite_differences() {
    let kk = 16;
    let delta = 0.04;
    let (hyper, g, start) = setup(kk);
    let grid = SpatialGrid::new(kk).unwrap();
    let (prev, next) = synthetic_transition(&start, &hyper, kk, delta, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xi: Vec<f64> = (0..SpectrumHyper::excitation_len(g)).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let (_, grad) = transition_nll(&prev, &next, delta, &hyper, &start, grid, &xi).unwrap();
    let scale = grad.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for _ in 0..30 {
        let m = rng.random_range(0..xi.len());
        let eps = 1e-3;
        let at = |s: f64| {
            let mut x = xi.clone();
            x[m] += s * eps;
            transition_nll(&prev, &next, delta, &hyper, &start, grid, &x).unwrap().0
        };
        let fd = (at(1.0) - at(-1.0)) / (2.0 * eps);
        assert!((fd - grad[m]).abs() <= 1e-5 * scale, "xi[{m}]: {fd:e} vs {:e}", grad[m]);
    }
}

#[test]
fn spectrum_from_truth_scales_with_the_residuals() {
    let kk = 32;
    let delta = 0.04;
    let (hyper, _, start) = setup(kk);
    let grid = SpatialGrid::new(kk).unwrap();
    let (prev, next) = synthetic_transition(&start, &hyper, kk, delta, 7);
    let opts = LbfgsOptions::default();
    let (base, _) = spectrum_from_truth(&prev, &next, delta, &hyper, &start, grid, &opts).unwrap();
    let alpha = 3.0f64;
    let scaled = TruthState {
        u: next.u.iter().map(|m| m.scale(alpha)).collect(),
        udot: next.udot.iter().map(|m| m.scale(alpha)).collect(),
    };
    let (est, _) = spectrum_from_truth(&prev, &scaled, delta, &hyper, &start, grid, &opts).unwrap();
    let g = est.grid();
    let lmax = ((kk / 2) as f64).ln();
    let shifted: Vec<f64> = base.tau().iter().map(|t| t + alpha.ln()).collect();
    let shifted = base.with_tau(shifted).unwrap();
    let d = resolved_rms(&est, &shifted, kk);
    assert!(d < 0.05, "{d}");
    assert!((0..g.len()).filter(|&m| g.l(m) <= lmax).count() > 0);
}

#[test]
fn spectrum_from_truth_prefers_less_power_for_smaller_residuals() {
    let kk = 32;
    let delta = 0.04;
    let (hyper, _, start) = setup(kk);
    let grid = SpatialGrid::new(kk).unwrap();
    let (prev, next) = synthetic_transition(&start, &hyper, kk, delta, 3);
    let opts = LbfgsOptions::default();
    let power = |alpha: f64| {
        let next = TruthState {
            u: next.u.iter().map(|m| m.scale(alpha)).collect(),
            udot: next.udot.iter().map(|m| m.scale(alpha)).collect(),
        };
        let (est, _) = spectrum_from_truth(&prev, &next, delta, &hyper, &start, grid, &opts).unwrap();
        est.resolved_power(kk).unwrap()
    };
    let p: Vec<f64> = [1.0, 0.1, 0.01, 0.0].iter().map(|&a| power(a)).collect();
    for w in p.windows(2) {
        assert!(w[1] < w[0], "{p:?}");
    }
    assert!(p[3] < start.resolved_power(kk).unwrap());
}

#[test]
fn zero_mode_rates_of_a_diffusion_truth_vanish() {
    let grid = SpatialGrid::new(16).unwrap();
    let t = SpectralTransform::new(grid);
    let f: FourierField = t.analyze(&profile_values(16)).unwrap();
    let s = diffusion_truth_state(&f, 0.3, 1);
    assert_eq!(s.udot[0][0], Complex64::new(0.0, 0.0));
}
