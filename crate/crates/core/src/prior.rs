//! Discrete space-time Markov prior.
//!
//! Per grid mode `k`, the stacked field derivatives `u = (u^(0), ..., u^(o))`
//! and their time derivatives follow an integrated Wiener process with
//! transition covariance `[[D^3/3, D^2/2], [D^2/2, D]] (x) D^k`, `D` being the
//! step size. Half-spectrum modes `0 < k < K/2` are circularly-symmetric
//! complex Gaussians; `k = 0` and `k = K/2` are real Gaussians.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{FourierField, SpatialGrid};
use crate::linalg::{self, c, hermitian_eigen, hermitian_pinv, CMat, CVec, REL_CUTOFF};
use crate::rng;
use crate::spectrum::LogSpectrum;

/// Field derivatives `u` (length `o+1`) and time derivatives `v` of the
/// derivatives `1..=o` (length `o`) of one grid mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    pub u: CVec,
    pub v: CVec,
}

impl ModeState {
    pub fn zeros(order: usize) -> Self {
        Self {
            u: CVec::zeros(order + 1),
            v: CVec::zeros(order),
        }
    }

    pub fn order(&self) -> usize {
        self.u.len() - 1
    }

    /// Full time derivative `(g, v)` given the PDE right-hand side `g`.
    pub fn rate(&self, g: Complex64) -> CVec {
        let o = self.order();
        CVec::from_fn(o + 1, |c_, _| if c_ == 0 { g } else { self.v[c_ - 1] })
    }
}

/// Full simulation state on the half spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub grid: SpatialGrid,
    pub order: usize,
    /// Modes `0..=K/2`.
    pub modes: Vec<ModeState>,
    pub spectrum: LogSpectrum,
    /// Free-form provenance of the random streams that produced the state.
    pub lineage: String,
}

impl SimState {
    pub fn validate(&self) -> Result<()> {
        if self.modes.len() != self.grid.half_len() {
            return Err(Error::Dimension(format!(
                "state has {} modes, grid needs {}",
                self.modes.len(),
                self.grid.half_len()
            )));
        }
        for (k, m) in self.modes.iter().enumerate() {
            if m.u.len() != self.order + 1 || m.v.len() != self.order {
                return Err(Error::Dimension(format!(
                    "mode {k} has inconsistent derivative order"
                )));
            }
            if self.grid.is_real_mode(k)
                && (m.u.iter().any(|z| z.im != 0.0) || m.v.iter().any(|z| z.im != 0.0))
            {
                return Err(Error::Contract(format!("mode {k} must be real")));
            }
        }
        Ok(())
    }

    /// Spatial derivative `c` of the field as a Fourier field.
    pub fn component(&self, c_: usize) -> FourierField {
        modes_component(self.grid, &self.modes, c_)
    }

    pub fn u_modes(&self) -> Vec<CVec> {
        self.modes.iter().map(|m| m.u.clone()).collect()
    }
}

pub(crate) fn modes_component(grid: SpatialGrid, modes: &[ModeState], c_: usize) -> FourierField {
    let half = modes.iter().map(|m| m.u[c_]).collect();
    FourierField::from_half(grid, half).expect("state modes are consistent")
}

/// Labels of the coordinates of a [`GaussianBlock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// Spatial derivative `c` of the field.
    Field(usize),
    /// Time derivative of spatial derivative `c`.
    Rate(usize),
    /// Derived linear combination (e.g. a constraint residual).
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlock {
    pub labels: Vec<Component>,
    pub mean: CVec,
    pub cov: CMat,
}

impl GaussianBlock {
    pub fn new(labels: Vec<Component>, mean: CVec, cov: CMat) -> Result<Self> {
        let n = labels.len();
        if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Dimension(format!(
                "block with {n} labels has mean {} and covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self {
            labels,
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Sample; `real` selects real rather than circular complex excitations.
    pub fn sample<R: Rng + ?Sized>(&self, real: bool, rng: &mut R) -> Result<CVec> {
        let cov = if real { self.cov.map(|z| c(z.re)) } else { self.cov.clone() };
        let f = linalg::hermitian_sqrt_factor(&cov, REL_CUTOFF)?;
        let z = CVec::from_fn(f.ncols(), |_, _| {
            if real {
                c(rng::normal(rng))
            } else {
                rng::complex_normal(rng)
            }
        });
        let mut out = &self.mean + f * z;
        if real {
            out.iter_mut().for_each(|v| v.im = 0.0);
        }
        Ok(out)
    }
}

fn iwp_q(delta: f64) -> [[f64; 2]; 2] {
    [
        [delta.powi(3) / 3.0, delta.powi(2) / 2.0],
        [delta.powi(2) / 2.0, delta],
    ]
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!("step size must be > 0, got {delta}")));
    }
    Ok(())
}

/// Gaussian transition of `(u, udot)` over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub delta: f64,
    pub order: usize,
    /// Joint covariance over `(u^(0..=o), udot^(0..=o))`.
    pub cov: CMat,
}

impl Transition {
    /// Drift `[[1, delta], [0, 1]]` applied to the previous `(u, udot)`.
    pub fn mean(&self, u_prev: &CVec, udot_prev: &CVec) -> CVec {
        let n = self.order + 1;
        CVec::from_fn(2 * n, |i, _| {
            if i < n {
                u_prev[i] + udot_prev[i] * self.delta
            } else {
                udot_prev[i - n]
            }
        })
    }

    pub fn labels(&self) -> Vec<Component> {
        let n = self.order + 1;
        (0..n)
            .map(Component::Field)
            .chain((0..n).map(Component::Rate))
            .collect()
    }

    pub fn joint(&self, u_prev: &CVec, udot_prev: &CVec) -> GaussianBlock {
        GaussianBlock {
            labels: self.labels(),
            mean: self.mean(u_prev, udot_prev),
            cov: self.cov.clone(),
        }
    }
}

pub fn transition_params(delta: f64, d: &CMat) -> Result<Transition> {
    check_delta(delta)?;
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(Error::Dimension(format!("D is {}x{}", n, d.ncols())));
    }
    let q = iwp_q(delta);
    let cov = CMat::from_fn(2 * n, 2 * n, |r, col| d[(r % n, col % n)] * q[r / n][col / n]);
    Ok(Transition {
        delta,
        order: n - 1,
        cov,
    })
}

/// Conditions `joint` on the coordinates `observed_idx` taking `values`;
/// returns the block over the remaining coordinates in their original order.
pub fn block_condition(
    joint: &GaussianBlock,
    observed_idx: &[usize],
    values: &CVec,
) -> Result<GaussianBlock> {
    condition(joint, observed_idx, values, true)
}

pub(crate) fn condition(
    joint: &GaussianBlock,
    observed_idx: &[usize],
    values: &CVec,
    strict: bool,
) -> Result<GaussianBlock> {
    let n = joint.dim();
    if values.len() != observed_idx.len() {
        return Err(Error::Dimension(format!(
            "{} observed indices but {} values",
            observed_idx.len(),
            values.len()
        )));
    }
    let mut observed = vec![false; n];
    for &i in observed_idx {
        if i >= n || observed[i] {
            return Err(Error::Dimension(format!(
                "observed index {i} invalid or repeated for a {n}-dimensional block"
            )));
        }
        observed[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !observed[i]).collect();
    let no = observed_idx.len();
    let nf = free.len();
    let s_oo = CMat::from_fn(no, no, |r, col| joint.cov[(observed_idx[r], observed_idx[col])]);
    let s_fo = CMat::from_fn(nf, no, |r, col| joint.cov[(free[r], observed_idx[col])]);
    let s_ff = CMat::from_fn(nf, nf, |r, col| joint.cov[(free[r], free[col])]);
    let resid = CVec::from_fn(no, |r, _| values[r] - joint.mean[observed_idx[r]]);
    let pinv = hermitian_pinv(&s_oo, REL_CUTOFF)?;
    if strict {
        let explained = &s_oo * &pinv.pinv * &resid;
        let miss = (&resid - explained).norm();
        if miss > 1e-8 * resid.norm().max(f64::MIN_POSITIVE) && miss > 0.0 {
            return Err(Error::Numerical(format!(
                "observed block is singular (rank {} of {no}) and the observation leaves \
                 its support by {miss:.3e}",
                pinv.rank
            )));
        }
    }
    let gain = &s_fo * &pinv.pinv;
    let mean = CVec::from_fn(nf, |r, _| joint.mean[free[r]]) + &gain * resid;
    let cov = s_ff - &gain * s_fo.adjoint();
    GaussianBlock::new(free.iter().map(|&i| joint.labels[i]).collect(), mean, cov)
}

/// Predictive prior of `u^i`: mean `u + delta (g, v)`, covariance
/// `delta^3/3 D`.
pub fn predictive_u(prev: &ModeState, g_prev: Complex64, delta: f64, d: &CMat) -> Result<GaussianBlock> {
    check_delta(delta)?;
    check_mode_dims(prev, d)?;
    let o = prev.order();
    let mean = &prev.u + prev.rate(g_prev) * c(delta);
    GaussianBlock::new(
        (0..=o).map(Component::Field).collect(),
        mean,
        d.scale(delta.powi(3) / 3.0),
    )
}

fn check_mode_dims(prev: &ModeState, d: &CMat) -> Result<()> {
    let n = prev.u.len();
    if d.nrows() != n || d.ncols() != n || prev.v.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "mode state of order {} does not match D of size {}",
            prev.order(),
            d.nrows()
        )));
    }
    Ok(())
}

/// Real or complex scalar Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussian {
    pub mean: Complex64,
    pub var: f64,
}

/// Conditional distribution of the field's time derivative given `u^i` and
/// the previous state: mean `g + 3/(2 delta) (u^(0),i - u^(0),i-1 - delta g)`,
/// variance `delta/4 D^00`.
pub fn likelihood_params(
    prev: &ModeState,
    u_i: &CVec,
    g_prev: Complex64,
    delta: f64,
    d: &CMat,
) -> Result<ScalarGaussian> {
    check_delta(delta)?;
    check_mode_dims(prev, d)?;
    if u_i.len() != prev.u.len() {
        return Err(Error::Dimension("u^i has the wrong order".into()));
    }
    let pred0 = prev.u[0] + g_prev * delta;
    Ok(ScalarGaussian {
        mean: g_prev + (u_i[0] - pred0) * (1.5 / delta),
        var: 0.25 * delta * d[(0, 0)].re,
    })
}

/// Conditional of `udot^i` (all components) given `u^i` and the previous
/// state.
fn rate_given_field(prev: &ModeState, u_i: &CVec, g_prev: Complex64, delta: f64, d: &CMat) -> GaussianBlock {
    let rate = prev.rate(g_prev);
    let pred = &prev.u + &rate * c(delta);
    let mean = rate + (u_i - pred) * c(1.5 / delta);
    GaussianBlock {
        labels: (0..u_i.len()).map(Component::Rate).collect(),
        mean,
        cov: d.scale(0.25 * delta),
    }
}

/// Distribution of `v^i` given `u^i`, the PDE constraint `udot^(0),i = g_i`
/// and the previous state.
pub fn conditional_v(
    prev: &ModeState,
    u_i: &CVec,
    g_prev: Complex64,
    g_i: Complex64,
    delta: f64,
    d: &CMat,
) -> Result<GaussianBlock> {
    check_delta(delta)?;
    check_mode_dims(prev, d)?;
    let joint = rate_given_field(prev, u_i, g_prev, delta, d);
    condition(&joint, &[0], &CVec::from_element(1, g_i), false)
}

/// Eigen-factor of a mode covariance with small eigenvalues dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedFactor {
    /// Retained eigenvectors as columns.
    pub vectors: CMat,
    /// Retained eigenvalues, descending.
    pub values: Vec<f64>,
    pub rank: usize,
    pub threshold: f64,
}

impl TruncatedFactor {
    /// `U Lambda^{1/2}`.
    pub fn sqrt_factor(&self) -> CMat {
        CMat::from_fn(self.vectors.nrows(), self.rank, |r, col| {
            self.vectors[(r, col)] * self.values[col].sqrt()
        })
    }

    pub fn reconstruct(&self) -> CMat {
        let f = self.sqrt_factor();
        &f * f.adjoint()
    }
}

/// Keeps the eigenpairs with `lambda >= threshold * lambda_max`; negative
/// eigenvalues are clamped to zero first.
pub fn eig_truncate(d: &CMat, threshold: f64) -> Result<TruncatedFactor> {
    if !(threshold >= 0.0) {
        return Err(Error::Parameter(format!("threshold must be >= 0, got {threshold}")));
    }
    let (values, vectors) = hermitian_eigen(d)?;
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let lmax = values.first().copied().unwrap_or(0.0);
    let kept: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] >= threshold * lmax && (values[i] > 0.0 || threshold == 0.0))
        .collect();
    Ok(TruncatedFactor {
        vectors: CMat::from_fn(d.nrows(), kept.len(), |r, col| vectors[(r, kept[col])]),
        values: kept.iter().map(|&i| values[i]).collect(),
        rank: kept.len(),
        threshold,
    })
}

/// Standard-normal excitations matching the retained ranks; real on the
/// zero and Nyquist modes.
pub fn draw_excitations<R: Rng + ?Sized>(
    grid: SpatialGrid,
    factors: &[TruncatedFactor],
    rng: &mut R,
) -> Vec<CVec> {
    factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            CVec::from_fn(f.rank, |_, _| {
                if grid.is_real_mode(k) {
                    c(rng::normal(rng))
                } else {
                    rng::complex_normal(rng)
                }
            })
        })
        .collect()
}

/// Sample of `u^i` from the predictive prior,
/// `u^i = u^{i-1} + delta (g, v) + sqrt(delta^3/3) U Lambda^{1/2} r`.
pub fn generative_step(
    prev: &SimState,
    g_prev: &FourierField,
    factors: &[TruncatedFactor],
    excitations: &[CVec],
    delta: f64,
) -> Result<Vec<CVec>> {
    check_delta(delta)?;
    prev.validate()?;
    let n = prev.grid.half_len();
    if factors.len() != n || excitations.len() != n || g_prev.half().len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} factors, excitations and rhs modes"
        )));
    }
    let scale = (delta.powi(3) / 3.0).sqrt();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (f, r) = (&factors[k], &excitations[k]);
        if r.len() != f.rank {
            return Err(Error::Dimension(format!(
                "mode {k}: {} excitations for retained rank {}",
                r.len(),
                f.rank
            )));
        }
        if prev.grid.is_real_mode(k) && r.iter().any(|z| z.im != 0.0) {
            return Err(Error::Contract(format!("mode {k} needs real excitations")));
        }
        let m = &prev.modes[k];
        let mut u = &m.u + m.rate(g_prev.half()[k]) * c(delta);
        if f.rank > 0 {
            u += f.sqrt_factor() * r * c(scale);
        }
        out.push(u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn cvec(values: &[Complex64]) -> CVec {
        DVector::from_column_slice(values)
    }

    fn random_psd(n: usize, seed: u64) -> CMat {
        let mut r = rng::stream(seed, 0, rng::Purpose::Synthetic);
        let a = CMat::from_fn(n, n, |_, _| rng::complex_normal(&mut r));
        &a * a.adjoint()
    }

    fn random_vec(n: usize, seed: u64) -> CVec {
        let mut r = rng::stream(seed, 1, rng::Purpose::Synthetic);
        CVec::from_fn(n, |_, _| rng::complex_normal(&mut r))
    }

    #[test]
    fn noise_free_transition_is_pure_drift() {
        let t = transition_params(0.3, &CMat::zeros(2, 2)).unwrap();
        assert!(t.cov.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        let u = cvec(&[c(1.0), c(2.0)]);
        let ud = cvec(&[c(-1.0), c(0.5)]);
        let m = t.mean(&u, &ud);
        assert_eq!(m[0], c(1.0 - 0.3));
        assert_eq!(m[1], c(2.0 + 0.15));
        assert_eq!(m[2], c(-1.0));
        assert_eq!(m[3], c(0.5));
    }

    #[test]
    fn unit_transition_covariance() {
        let t = transition_params(1.0, &CMat::from_element(1, 1, c(1.0))).unwrap();
        let expected = [[1.0 / 3.0, 0.5], [0.5, 1.0]];
        for r in 0..2 {
            for col in 0..2 {
                assert!((t.cov[(r, col)] - c(expected[r][col])).norm() < 1e-15);
            }
        }
        assert!(transition_params(0.0, &CMat::identity(1, 1)).is_err());
    }

    #[test]
    fn independent_blocks_condition_to_marginal() {
        let mut cov = CMat::zeros(3, 3);
        cov[(0, 0)] = c(2.0);
        cov[(1, 1)] = c(3.0);
        cov[(2, 2)] = c(1.5);
        cov[(0, 1)] = Complex64::new(0.5, 0.2);
        cov[(1, 0)] = Complex64::new(0.5, -0.2);
        let joint = GaussianBlock::new(
            vec![Component::Field(0), Component::Field(1), Component::Rate(0)],
            cvec(&[c(1.0), c(2.0), c(3.0)]),
            cov,
        )
        .unwrap();
        let post = block_condition(&joint, &[2], &cvec(&[c(10.0)])).unwrap();
        assert_eq!(post.mean, cvec(&[c(1.0), c(2.0)]));
        assert!((post.cov[(0, 1)] - Complex64::new(0.5, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn observing_everything_collapses() {
        let d = random_psd(3, 1) + CMat::identity(3, 3);
        let joint = GaussianBlock::new(
            (0..3).map(Component::Field).collect(),
            random_vec(3, 2),
            d,
        )
        .unwrap();
        let obs = random_vec(3, 3);
        let post = block_condition(&joint, &[0, 1, 2], &obs).unwrap();
        assert_eq!(post.dim(), 0);
        // observing all but one leaves a 1-d block
        let post = block_condition(&joint, &[0, 2], &cvec(&[obs[0], obs[2]])).unwrap();
        assert_eq!(post.labels, vec![Component::Field(1)]);
    }

    #[test]
    fn impossible_observation_is_numerical_error() {
        let joint = GaussianBlock::new(
            vec![Component::Field(0), Component::Field(1)],
            CVec::zeros(2),
            CMat::from_fn(2, 2, |r, col| if r == 0 && col == 0 { c(1.0) } else { c(0.0) }),
        )
        .unwrap();
        assert!(matches!(
            block_condition(&joint, &[1], &cvec(&[c(1.0)])),
            Err(Error::Numerical(_))
        ));
        // on its support the degenerate observation is fine
        assert!(block_condition(&joint, &[1], &cvec(&[c(0.0)])).is_ok());
    }

    #[test]
    fn predictive_without_motion() {
        let d = random_psd(3, 4);
        let prev = ModeState { u: random_vec(3, 5), v: CVec::zeros(2) };
        let p = predictive_u(&prev, c(0.0), 0.5, &d).unwrap();
        assert_eq!(p.mean, prev.u);
        assert!((p.cov - d.scale(0.125 / 3.0)).norm() < 1e-15);
    }

    #[test]
    fn predictive_covariance_scales_cubically() {
        let d = random_psd(2, 6);
        let prev = ModeState::zeros(1);
        let a = predictive_u(&prev, c(0.0), 1e-2, &d).unwrap();
        let b = predictive_u(&prev, c(0.0), 2e-2, &d).unwrap();
        assert!((&b.cov - a.cov.scale(8.0)).norm() < 1e-14 * b.cov.norm());
    }

    #[test]
    fn likelihood_at_predictive_mean() {
        let d = random_psd(3, 7);
        let prev = ModeState { u: random_vec(3, 8), v: random_vec(2, 9) };
        let g = Complex64::new(0.3, -1.2);
        let u_i = predictive_u(&prev, g, 0.1, &d).unwrap().mean;
        let l = likelihood_params(&prev, &u_i, g, 0.1, &d).unwrap();
        assert!((l.mean - g).norm() < 1e-14);
    }

    #[test]
    fn likelihood_variance_instance() {
        let mut d = CMat::identity(1, 1);
        d[(0, 0)] = c(4.0);
        let l = likelihood_params(&ModeState::zeros(0), &CVec::zeros(1), c(0.0), 1.0, &d).unwrap();
        assert_eq!(l.var, 1.0);
    }

    #[test]
    fn diagonal_d_leaves_v_untouched() {
        let d = CMat::from_diagonal(&cvec(&[c(2.0), c(3.0), c(5.0)]));
        let prev = ModeState { u: random_vec(3, 10), v: random_vec(2, 11) };
        let u_i = random_vec(3, 12);
        let v = conditional_v(&prev, &u_i, c(0.4), c(-2.0), 0.2, &d).unwrap();
        let cov_expected = CMat::from_diagonal(&cvec(&[c(3.0 * 0.05), c(5.0 * 0.05)]));
        assert!((v.cov - cov_expected).norm() < 1e-15);
    }

    #[test]
    fn v_mean_unchanged_when_g_matches_its_conditional_mean() {
        let d = random_psd(3, 13);
        let prev = ModeState { u: random_vec(3, 14), v: random_vec(2, 15) };
        let u_i = random_vec(3, 16);
        let g_prev = Complex64::new(0.1, 0.2);
        let rate = rate_given_field(&prev, &u_i, g_prev, 0.3, &d);
        let v = conditional_v(&prev, &u_i, g_prev, rate.mean[0], 0.3, &d).unwrap();
        for i in 0..2 {
            assert!((v.mean[i] - rate.mean[i + 1]).norm() < 1e-12 * rate.mean.norm());
        }
    }

    #[test]
    fn truncation_edge_cases() {
        let d = random_psd(3, 17);
        let full = eig_truncate(&d, 0.0).unwrap();
        assert_eq!(full.rank, 3);
        assert!((full.reconstruct() - &d).norm() < 1e-12 * d.norm());
        let v = random_vec(3, 18);
        let rank1 = &v * v.adjoint();
        assert_eq!(eig_truncate(&rank1, 0.5).unwrap().rank, 1);
        let f = eig_truncate(&d, 1e-6).unwrap();
        let u = &f.vectors;
        let gram = u.adjoint() * u;
        assert!((gram - CMat::identity(f.rank, f.rank)).norm() < 1e-12);
    }
}
