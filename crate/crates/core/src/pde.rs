//! PDE models `s_t = f(s, s_x, ..., s^(o))` and the spectral measurement
//! map `g(u) = analysis(f(synthesis(u^(0)), ..., synthesis(u^(o))))`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{FourierField, SpectralTransform};
use crate::linalg::{c, CVec};

#[derive(Debug, Clone, PartialEq)]
enum Rhs {
    /// `f = sum_c beta_c s^(c)`.
    Linear(Vec<f64>),
    /// `f = -s s_x + nu s_xx`.
    Burgers { nu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeModel {
    name: String,
    rhs: Rhs,
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Parameter(format!("viscosity must be > 0, got {nu}")));
    }
    Ok(())
}

/// `s_t = nu s_xx`.
pub fn make_diffusion(nu: f64) -> Result<PdeModel> {
    check_nu(nu)?;
    Ok(PdeModel {
        name: "diffusion".into(),
        rhs: Rhs::Linear(vec![0.0, 0.0, nu]),
    })
}

/// `s_t + s s_x = nu s_xx`.
pub fn make_burgers(nu: f64) -> Result<PdeModel> {
    check_nu(nu)?;
    Ok(PdeModel {
        name: "burgers".into(),
        rhs: Rhs::Burgers { nu },
    })
}

/// `s_t = 0` carrying derivatives up to `order`.
pub fn make_static(order: usize) -> PdeModel {
    PdeModel {
        name: "static".into(),
        rhs: Rhs::Linear(vec![0.0; order + 1]),
    }
}

/// Linear constant-coefficient PDE `s_t = sum_c beta_c s^(c)`.
pub fn make_linear(name: &str, beta: Vec<f64>) -> Result<PdeModel> {
    if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Parameter("linear coefficients must be finite and non-empty".into()));
    }
    Ok(PdeModel {
        name: name.into(),
        rhs: Rhs::Linear(beta),
    })
}

impl PdeModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Highest spatial derivative.
    pub fn order(&self) -> usize {
        match &self.rhs {
            Rhs::Linear(b) => b.len() - 1,
            Rhs::Burgers { .. } => 2,
        }
    }

    /// Viscosity or diffusivity, when the model has one.
    pub fn nu(&self) -> Option<f64> {
        match &self.rhs {
            Rhs::Linear(b) if self.name == "diffusion" => Some(b[2]),
            Rhs::Linear(_) => None,
            Rhs::Burgers { nu } => Some(*nu),
        }
    }

    /// Coefficients `beta_c` of a linear model.
    pub fn linear_coefficients(&self) -> Option<&[f64]> {
        match &self.rhs {
            Rhs::Linear(b) => Some(b),
            Rhs::Burgers { .. } => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_coefficients().is_some()
    }

    /// Pointwise `f(s, s1, ..., so)`.
    pub fn rhs(&self, s: &[f64]) -> f64 {
        match &self.rhs {
            Rhs::Linear(b) => b.iter().zip(s).map(|(b, s)| b * s).sum(),
            Rhs::Burgers { nu } => -s[0] * s[1] + nu * s[2],
        }
    }

    /// Pointwise `df/ds^(c)`.
    pub fn partials(&self, s: &[f64]) -> Vec<f64> {
        match &self.rhs {
            Rhs::Linear(b) => b.clone(),
            Rhs::Burgers { nu } => vec![-s[1], -s[0], *nu],
        }
    }

    fn check_modes(&self, u: &[CVec], transform: &SpectralTransform) -> Result<()> {
        let grid = transform.grid();
        if u.len() != grid.half_len() {
            return Err(Error::Dimension(format!(
                "expected {} modes, got {}",
                grid.half_len(),
                u.len()
            )));
        }
        if let Some(m) = u.iter().find(|m| m.len() != self.order() + 1) {
            return Err(Error::Dimension(format!(
                "{} needs {} derivative components, state has {}",
                self.name,
                self.order() + 1,
                m.len()
            )));
        }
        Ok(())
    }
}

/// `g(u)` together with what is needed for its adjoint.
#[derive(Debug, Clone)]
pub struct Linearization<'a> {
    pde: &'a PdeModel,
    transform: &'a SpectralTransform,
    pub g: FourierField,
    /// Grid values of each derivative component (nonlinear models only).
    fields: Vec<Vec<f64>>,
}

pub fn g_linearize<'a>(
    u: &[CVec],
    pde: &'a PdeModel,
    transform: &'a SpectralTransform,
) -> Result<Linearization<'a>> {
    pde.check_modes(u, transform)?;
    let grid = transform.grid();
    if let Some(beta) = pde.linear_coefficients() {
        let half = u
            .iter()
            .map(|m| m.iter().zip(beta).map(|(v, b)| v * *b).sum::<Complex64>())
            .collect();
        return Ok(Linearization {
            pde,
            transform,
            g: FourierField::from_half(grid, half)?,
            fields: Vec::new(),
        });
    }
    let n = pde.order() + 1;
    let fields: Vec<Vec<f64>> = (0..n)
        .map(|cc| {
            let half: Vec<Complex64> = u.iter().map(|m| m[cc]).collect();
            transform.synthesize_half(&half)
        })
        .collect();
    let mut point = vec![0.0; n];
    let values: Vec<f64> = (0..grid.size())
        .map(|j| {
            for (p, f) in point.iter_mut().zip(&fields) {
                *p = f[j];
            }
            pde.rhs(&point)
        })
        .collect();
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "PDE right-hand side is not finite at grid point {j}"
        )));
    }
    Ok(Linearization {
        pde,
        transform,
        g: transform.analyze(&values)?,
        fields,
    })
}

impl Linearization<'_> {
    /// Gradient of `u -> sum_k Re(conj(G_k) g_k(u))` over the half spectrum,
    /// where `G` is the complex-coded gradient with respect to `g`
    /// (`dF/dRe + i dF/dIm`). The result uses the same coding.
    pub fn vjp(&self, cotangent: &FourierField) -> Result<Vec<CVec>> {
        let grid = self.transform.grid();
        if cotangent.grid_size() != grid.size() {
            return Err(Error::Dimension("cotangent lives on another grid".into()));
        }
        let n = self.pde.order() + 1;
        let nyq = grid.nyquist();
        if let Some(beta) = self.pde.linear_coefficients() {
            return Ok(cotangent
                .half()
                .iter()
                .enumerate()
                .map(|(k, &gk)| {
                    let gk = if k == 0 || k == nyq { c(gk.re) } else { gk };
                    CVec::from_fn(n, |cc, _| gk * beta[cc])
                })
                .collect());
        }
        let kk = grid.size() as f64;
        // adjoint of analysis
        let h: Vec<Complex64> = cotangent
            .half()
            .iter()
            .enumerate()
            .map(|(k, &gk)| if k == 0 || k == nyq { c(gk.re) } else { gk * 0.5 })
            .collect();
        let h = self.transform.synthesize_half(&h);
        let mut point = vec![0.0; n];
        let mut adj: Vec<Vec<f64>> = vec![vec![0.0; grid.size()]; n];
        for j in 0..grid.size() {
            for (p, f) in point.iter_mut().zip(&self.fields) {
                *p = f[j];
            }
            for (cc, d) in self.pde.partials(&point).into_iter().enumerate() {
                adj[cc][j] = d * h[j] / kk;
            }
        }
        // adjoint of synthesis
        let spectra: Vec<Vec<Complex64>> = adj.iter().map(|a| self.transform.analyze_half(a)).collect();
        Ok((0..grid.half_len())
            .map(|k| {
                let w = if k == 0 || k == nyq { kk } else { 2.0 * kk };
                CVec::from_fn(n, |cc, _| spectra[cc][k] * w)
            })
            .collect())
    }
}

/// Spectral right-hand side `g(u)` on the half spectrum.
pub fn g_eval(u: &[CVec], pde: &PdeModel, transform: &SpectralTransform) -> Result<FourierField> {
    Ok(g_linearize(u, pde, transform)?.g)
}

/// Adjoint action of `dg/du` on `cotangent`; see [`Linearization::vjp`].
pub fn g_vjp(
    u: &[CVec],
    cotangent: &FourierField,
    pde: &PdeModel,
    transform: &SpectralTransform,
) -> Result<Vec<CVec>> {
    g_linearize(u, pde, transform)?.vjp(cotangent)
}
