//! Negative log posterior of one step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{FourierField, SpectralTransform};
use crate::linalg::{c, hermitian_eigen, scaled_hermitian_pinv, CMat, CVec, REL_CUTOFF};
use crate::pde::{g_linearize, PdeModel};
use crate::prior::SimState;
use crate::spectrum::{
    accumulate_covariance_grad, excitation_adjoint, mode_covariance, mode_covariance_grad,
    tau_from_excitations, temporal_update, LogSpectrum, SpectrumHyper,
};

/// Per-mode weight of the negative log density: 1 for circular complex
/// modes, 1/2 for the real zero and Nyquist modes.
pub(crate) fn mode_weight(real: bool) -> f64 {
    if real {
        0.5
    } else {
        1.0
    }
}

pub(crate) fn covariances(
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    order: usize,
    grid_size: usize,
) -> Result<Vec<CMat>> {
    (0..=grid_size / 2)
        .map(|k| mode_covariance(k as i64, spec, hyper, order, grid_size))
        .collect()
}

/// Relative diagonal jitter added to `D` inside the step objective. The
/// aliased sums make `D` full rank but nearly singular; without a floor its
/// smallest eigenvalues drift across the pseudo-inverse cutoff and the
/// objective jumps.
pub(crate) const JITTER: f64 = 1e-10;

pub(crate) fn jittered(d: &CMat) -> CMat {
    let mut out = d.clone();
    for i in 0..d.nrows() {
        out[(i, i)] += d[(i, i)] * JITTER;
    }
    out
}

/// `Delta^3/3 (D + jitter)` and `Delta/4 D^00` with the inverse of the
/// former.
#[derive(Debug, Clone)]
pub(crate) struct ModeFactors {
    pub p: CMat,
    pub p_pinv: CMat,
    pub p_logdet: f64,
    pub s: f64,
}

impl ModeFactors {
    pub fn new(d: &CMat, delta: f64) -> Result<Self> {
        let p = jittered(d).scale(delta.powi(3) / 3.0);
        let pinv = scaled_hermitian_pinv(&p, REL_CUTOFF)?;
        Ok(Self {
            p,
            p_pinv: pinv.pinv,
            p_logdet: pinv.log_det,
            s: 0.25 * delta * d[(0, 0)].re,
        })
    }
}

/// Value and complex-coded gradients of the step objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad_u: Vec<CVec>,
    pub grad_xi: Option<Vec<f64>>,
    pub g: FourierField,
}

/// Negative log posterior of `u^i` (and, adaptively, the log-spectrum
/// excitations) given the previous state.
#[derive(Debug, Clone)]
pub struct StepObjective<'a> {
    pub(crate) prev: &'a SimState,
    pub(crate) pde: &'a PdeModel,
    pub(crate) transform: SpectralTransform,
    pub(crate) delta: f64,
    pub(crate) hyper: SpectrumHyper,
    /// Prior of the log-spectrum increment; `None` keeps the spectrum fixed.
    pub(crate) increment: Option<SpectrumHyper>,
    pub(crate) g_prev: FourierField,
    pub(crate) mu: Vec<CVec>,
    fixed: Vec<ModeFactors>,
}

impl<'a> StepObjective<'a> {
    pub fn new(
        prev: &'a SimState,
        pde: &'a PdeModel,
        delta: f64,
        hyper: SpectrumHyper,
        increment: Option<SpectrumHyper>,
    ) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Parameter(format!("step size must be > 0, got {delta}")));
        }
        prev.validate()?;
        if pde.order() != prev.order {
            return Err(Error::Dimension(format!(
                "{} needs order {}, state has {}",
                pde.name(),
                pde.order(),
                prev.order
            )));
        }
        hyper.check_coverage(prev.spectrum.grid(), prev.grid.size())?;
        if let Some(inc) = &increment {
            inc.validate()?;
        }
        let transform = SpectralTransform::new(prev.grid);
        let g_prev = g_linearize(&prev.u_modes(), pde, &transform)?.g;
        let mu = prev
            .modes
            .iter()
            .zip(g_prev.half())
            .map(|(m, &g)| &m.u + m.rate(g) * c(delta))
            .collect();
        let fixed = if increment.is_none() {
            covariances(&prev.spectrum, &hyper, prev.order, prev.grid.size())?
                .iter()
                .map(|d| ModeFactors::new(d, delta))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            prev,
            pde,
            transform,
            delta,
            hyper,
            increment,
            g_prev,
            mu,
            fixed,
        })
    }

    pub fn is_adaptive(&self) -> bool {
        self.increment.is_some()
    }

    /// Deterministic predictive mean `u^{i-1} + Delta (g, v)`.
    pub fn predictive_mean(&self) -> &[CVec] {
        &self.mu
    }

    pub fn g_prev(&self) -> &FourierField {
        &self.g_prev
    }

    pub fn excitation_len(&self) -> usize {
        SpectrumHyper::excitation_len(self.prev.spectrum.grid())
    }

    /// Spectrum of the new step for the excitations `xi` (the previous one
    /// in fixed mode).
    pub fn spectrum(&self, xi: Option<&[f64]>) -> Result<LogSpectrum> {
        match (&self.increment, xi) {
            (Some(inc), Some(xi)) => {
                let grid = self.prev.spectrum.grid();
                let incr = tau_from_excitations(xi, inc, grid)?;
                let tau = temporal_update(self.prev.spectrum.tau(), self.delta, &incr)?;
                if let Some(m) = tau.iter().position(|t| !t.is_finite() || t.abs() > 300.0) {
                    return Err(Error::Numerical(format!(
                        "log-spectrum node {m} (l = {:.3}) overflows: tau = {}",
                        grid.l(m),
                        tau[m]
                    )));
                }
                self.prev.spectrum.with_tau(tau)
            }
            (None, None) => Ok(self.prev.spectrum.clone()),
            _ => Err(Error::Contract(
                "excitations must be given exactly in adaptive mode".into(),
            )),
        }
    }

    pub(crate) fn mode_factors(&self, spec: &LogSpectrum) -> Result<Vec<ModeFactors>> {
        if !self.is_adaptive() {
            return Ok(self.fixed.clone());
        }
        covariances(spec, &self.hyper, self.prev.order, self.prev.grid.size())?
            .iter()
            .map(|d| ModeFactors::new(d, self.delta))
            .collect()
    }

    pub fn eval(&self, u: &[CVec], xi: Option<&[f64]>) -> Result<Evaluation> {
        let grid = self.prev.grid;
        let lin = g_linearize(u, self.pde, &self.transform)?;
        let spec = self.spectrum(xi)?;
        let owned;
        let factors: &[ModeFactors] = if self.is_adaptive() {
            owned = self.mode_factors(&spec)?;
            &owned
        } else {
            &self.fixed
        };
        let gain = 1.5 / self.delta;
        let n = self.prev.order + 1;
        let mut value = 0.0;
        let mut grad_u = Vec::with_capacity(u.len());
        let mut cot = vec![c(0.0); grid.half_len()];
        let mut grad_tau = vec![0.0; spec.grid().len()];
        for k in 0..grid.half_len() {
            let real = grid.is_real_mode(k);
            let w = mode_weight(real);
            let f = &factors[k];
            let e = &u[k] - &self.mu[k];
            let pe = &f.p_pinv * &e;
            let quad = e.dotc(&pe).re;
            let mut gk = pe.scale(2.0 * w);
            let mut term = quad;
            let mut r = c(0.0);
            if f.s > 0.0 {
                r = lin.g.half()[k] - self.g_prev.half()[k] - e[0] * gain;
                if real {
                    r.im = 0.0;
                }
                term += r.norm_sqr() / f.s;
                cot[k] = r * (2.0 * w / f.s);
                gk[0] -= cot[k] * gain;
            }
            if self.is_adaptive() {
                term += f.p_logdet + if f.s > 0.0 { f.s.ln() } else { 0.0 };
                let p3 = self.delta.powi(3) / 3.0;
                let mut g = jittered(&(&f.p_pinv - &pe * pe.adjoint()).scale(p3 * w));
                if f.s > 0.0 {
                    g[(0, 0)] += c(0.25 * self.delta * w * (1.0 / f.s - r.norm_sqr() / (f.s * f.s)));
                }
                accumulate_covariance_grad(k as i64, &g, &spec, &self.hyper, grid.size(), &mut grad_tau)?;
            }
            if !term.is_finite() {
                return Err(Error::Numerical(format!(
                    "objective term of mode {k} is not finite (D^00 = {:.3e})",
                    f.s * 4.0 / self.delta
                )));
            }
            value += w * term;
            debug_assert_eq!(gk.len(), n);
            grad_u.push(gk);
        }
        let vjp = lin.vjp(&FourierField::from_half(grid, cot)?)?;
        for (k, (gk, jk)) in grad_u.iter_mut().zip(vjp).enumerate() {
            *gk += jk;
            if grid.is_real_mode(k) {
                gk.iter_mut().for_each(|z| z.im = 0.0);
            }
        }
        let grad_xi = match (&self.increment, xi) {
            (Some(inc), Some(xi)) => {
                value += 0.5 * xi.iter().map(|x| x * x).sum::<f64>();
                let adj = excitation_adjoint(&grad_tau, inc, spec.grid())?;
                Some(adj.iter().zip(xi).map(|(a, x)| self.delta * a + x).collect())
            }
            _ => None,
        };
        Ok(Evaluation {
            value,
            grad_u,
            grad_xi,
            g: lin.g,
        })
    }

    /// Grid mean of `df/ds^(c)` at `u`, the coefficients of the linearised
    /// measurement.
    pub(crate) fn mean_partials(&self, u: &[CVec]) -> Vec<f64> {
        if let Some(beta) = self.pde.linear_coefficients() {
            return beta.to_vec();
        }
        let n = self.prev.order + 1;
        let fields: Vec<Vec<f64>> = (0..n)
            .map(|cc| {
                let half: Vec<_> = u.iter().map(|m| m[cc]).collect();
                self.transform.synthesize_half(&half)
            })
            .collect();
        let kk = self.prev.grid.size();
        let mut acc = vec![0.0; n];
        let mut point = vec![0.0; n];
        for j in 0..kk {
            for (p, f) in point.iter_mut().zip(&fields) {
                *p = f[j];
            }
            for (a, d) in acc.iter_mut().zip(self.pde.partials(&point)) {
                *a += d;
            }
        }
        acc.iter().map(|a| a / kk as f64).collect()
    }

    /// Covariance of `u^i_k` under the measurement linearised with
    /// coefficients `beta`: `P - P b (s + b^T P b)^-1 b^T P`.
    pub(crate) fn linearized_covariances(
        &self,
        factors: &[ModeFactors],
        beta: &[f64],
    ) -> Vec<CMat> {
        let n = beta.len();
        let b = CVec::from_fn(n, |cc, _| {
            c(beta[cc] - if cc == 0 { 1.5 / self.delta } else { 0.0 })
        });
        factors
            .iter()
            .map(|f| {
                if f.s <= 0.0 {
                    return f.p.clone();
                }
                let pb = &f.p * &b;
                let denom = f.s + b.dotc(&pb).re;
                crate::linalg::symmetrize(&(&f.p - (&pb * pb.adjoint()).scale(1.0 / denom)))
            })
            .collect()
    }
}

impl StepObjective<'_> {
    /// Fisher information of the excitations at `spec`,
    /// `I + Delta^2 B^T F B`, where `B = d tau / d xi` and `F` is the Fisher
    /// information of `tau` from the predictive and likelihood variances.
    pub(crate) fn xi_fisher(&self, spec: &LogSpectrum) -> Result<DMatrix<f64>> {
        let inc = self.increment.ok_or_else(|| Error::Contract("fixed-spectrum step".into()))?;
        let jac = tau_fisher_jacobian(spec, &self.hyper, self.prev.order, self.prev.grid, true)?;
        excitation_fisher(jac, &inc, spec.grid(), self.delta)
    }
}

/// Rows `J` with `J^T J` the Fisher information of `tau` for zero-mean
/// Gaussian mode vectors of covariance `D(tau)` (plus, with `with_d00`, one
/// scalar of variance `D^00`).
pub(crate) fn tau_fisher_jacobian(
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    order: usize,
    grid: crate::grid::SpatialGrid,
    with_d00: bool,
) -> Result<DMatrix<f64>> {
    let n = order + 1;
    let rows_per_mode = n * n + usize::from(with_d00);
    let mut jac = DMatrix::<f64>::zeros(grid.half_len() * rows_per_mode, spec.grid().len());
    for k in 0..grid.half_len() {
        let w = mode_weight(grid.is_real_mode(k)).sqrt();
        let d = jittered(&mode_covariance(k as i64, spec, hyper, order, grid.size())?);
        let scale: Vec<f64> = (0..n).map(|i| d[(i, i)].re.max(f64::MIN_POSITIVE).sqrt()).collect();
        let dt = CMat::from_fn(n, n, |r, col| d[(r, col)] / (scale[r] * scale[col]));
        let (vals, vecs) = hermitian_eigen(&dt)?;
        let lmax = vals.first().copied().unwrap_or(0.0);
        let root = CMat::from_diagonal(&CVec::from_fn(n, |i, _| {
            let l = vals[i];
            c(if l > REL_CUTOFF * lmax && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 })
        }));
        // D^-1/2 in the scaled coordinates
        let wt = &vecs * root * vecs.adjoint();
        let row0 = k * rows_per_mode;
        for (m, dd) in mode_covariance_grad(k as i64, spec, hyper, order, grid.size())? {
            let ds = CMat::from_fn(n, n, |r, col| dd[(r, col)] / (scale[r] * scale[col]));
            let mm = &wt * ds * &wt;
            // vec of the Hermitian matrix such that <vec a, vec b> = tr(a b)
            let mut row = row0;
            for r in 0..n {
                jac[(row, m)] += w * mm[(r, r)].re;
                row += 1;
                for col in r + 1..n {
                    jac[(row, m)] += w * std::f64::consts::SQRT_2 * mm[(r, col)].re;
                    jac[(row + 1, m)] += w * std::f64::consts::SQRT_2 * mm[(r, col)].im;
                    row += 2;
                }
            }
            if with_d00 && d[(0, 0)].re > 0.0 {
                jac[(row, m)] += w * dd[(0, 0)].re / d[(0, 0)].re;
            }
        }
    }
    Ok(jac)
}

/// `I + gain^2 B^T J^T J B` with `B = d tau / d xi`.
pub(crate) fn excitation_fisher(
    jac: DMatrix<f64>,
    hyper: &SpectrumHyper,
    grid: crate::spectrum::LogGrid,
    gain: f64,
) -> Result<DMatrix<f64>> {
    let jb = (jac * excitation_jacobian(hyper, grid)?).scale(gain);
    let mut h = jb.transpose() * jb;
    for i in 0..h.nrows() {
        h[(i, i)] += 1.0;
    }
    Ok(h)
}

/// `d tau / d xi` of [`tau_from_excitations`] (which is affine).
pub(crate) fn excitation_jacobian(
    hyper: &SpectrumHyper,
    grid: crate::spectrum::LogGrid,
) -> Result<DMatrix<f64>> {
    let n = SpectrumHyper::excitation_len(grid);
    let base = tau_from_excitations(&vec![0.0; n], hyper, grid)?;
    let mut b = DMatrix::zeros(grid.len(), n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let t = tau_from_excitations(&e, hyper, grid)?;
        for i in 0..grid.len() {
            b[(i, j)] = t[i] - base[i];
        }
        e[j] = 0.0;
    }
    Ok(b)
}

/// `xi = xi_ref + L^-T z` for a Cholesky factor `L L^T` of an approximate
/// Hessian.
#[derive(Debug, Clone)]
pub(crate) struct XiPreconditioner {
    xi_ref: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl XiPreconditioner {
    pub fn new(xi_ref: Vec<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let chol = hessian
            .cholesky()
            .ok_or_else(|| Error::Numerical("excitation Fisher matrix is not positive definite".into()))?;
        Ok(Self { xi_ref, chol })
    }

    pub fn to_xi(&self, z: &[f64]) -> Vec<f64> {
        let z = nalgebra::DVector::from_column_slice(z);
        let y = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("non-singular factor");
        self.xi_ref.iter().zip(y.iter()).map(|(a, b)| a + b).collect()
    }

    pub fn grad_to_z(&self, g: &[f64]) -> Vec<f64> {
        let g = nalgebra::DVector::from_column_slice(g);
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&g)
            .expect("non-singular factor");
        y.iter().copied().collect()
    }
}

/// Affine map `u_k = mu_k + T_k a_k` (with an extra `1/sqrt 2` on complex
/// modes) that makes the linearised posterior a standard normal in the real
/// coordinates `a`.
#[derive(Debug, Clone)]
pub(crate) struct Whitening {
    mu: Vec<CVec>,
    vectors: Vec<CMat>,
    roots: Vec<Vec<f64>>,
    real: Vec<bool>,
    order: usize,
}

impl Whitening {
    pub fn new(mu: Vec<CVec>, covs: &[CMat], real: Vec<bool>) -> Result<Self> {
        let mut vectors = Vec::with_capacity(covs.len());
        let mut roots = Vec::with_capacity(covs.len());
        for (cov, &is_real) in covs.iter().zip(&real) {
            let (vals, vecs) = if is_real {
                hermitian_eigen(&cov.map(|z| c(z.re)))?
            } else {
                hermitian_eigen(cov)?
            };
            let lmax = vals.iter().copied().fold(0.0, f64::max);
            roots.push(
                vals.iter()
                    .map(|&l| if l > REL_CUTOFF * lmax && l > 0.0 { l.sqrt() } else { 0.0 })
                    .collect(),
            );
            vectors.push(vecs);
        }
        Ok(Self {
            order: mu.first().map(|m| m.len() - 1).unwrap_or(0),
            mu,
            vectors,
            roots,
            real,
        })
    }

    pub fn dim(&self) -> usize {
        let n = self.order + 1;
        self.real.iter().map(|&r| if r { n } else { 2 * n }).sum()
    }

    fn scale(&self, k: usize) -> f64 {
        if self.real[k] {
            1.0
        } else {
            std::f64::consts::FRAC_1_SQRT_2
        }
    }

    pub fn to_u(&self, x: &[f64]) -> Vec<CVec> {
        let n = self.order + 1;
        let mut pos = 0;
        (0..self.mu.len())
            .map(|k| {
                let a = if self.real[k] {
                    let a = CVec::from_fn(n, |i, _| c(x[pos + i]));
                    pos += n;
                    a
                } else {
                    let a = CVec::from_fn(n, |i, _| num_complex::Complex64::new(x[pos + i], x[pos + n + i]));
                    pos += 2 * n;
                    a
                };
                let ra = CVec::from_fn(n, |i, _| a[i] * self.roots[k][i] * self.scale(k));
                let mut u = &self.mu[k] + &self.vectors[k] * ra;
                if self.real[k] {
                    u.iter_mut().for_each(|z| z.im = 0.0);
                }
                u
            })
            .collect()
    }

    pub fn from_u(&self, u: &[CVec]) -> Vec<f64> {
        let n = self.order + 1;
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..self.mu.len() {
            let proj = self.vectors[k].adjoint() * (&u[k] - &self.mu[k]);
            let a: Vec<_> = (0..n)
                .map(|i| {
                    let r = self.roots[k][i];
                    if r > 0.0 {
                        proj[i] / (r * self.scale(k))
                    } else {
                        c(0.0)
                    }
                })
                .collect();
            x.extend(a.iter().map(|z| z.re));
            if !self.real[k] {
                x.extend(a.iter().map(|z| z.im));
            }
        }
        x
    }

    pub fn grad_to_x(&self, grad_u: &[CVec]) -> Vec<f64> {
        let n = self.order + 1;
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..self.mu.len() {
            let proj = self.vectors[k].adjoint() * &grad_u[k];
            let a: Vec<_> = (0..n)
                .map(|i| proj[i] * self.roots[k][i] * self.scale(k))
                .collect();
            x.extend(a.iter().map(|z| z.re));
            if !self.real[k] {
                x.extend(a.iter().map(|z| z.im));
            }
        }
        x
    }
}
