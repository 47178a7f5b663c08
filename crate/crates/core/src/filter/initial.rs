//! Initial states with analytic spatial derivatives.

use crate::error::{Error, Result};
use crate::grid::{derivative_factor, SpatialGrid, SpectralTransform};
use crate::linalg::CVec;
use crate::pde::{g_eval, PdeModel};
use crate::prior::{ModeState, SimState};
use crate::spectrum::LogSpectrum;

/// Periodised Gaussian bump `A sum_m exp(-(x - x0 - m)^2 / (2 w^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianProfile {
    pub amplitude: f64,
    pub width: f64,
    pub center: f64,
}

impl Default for GaussianProfile {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width: 0.05,
            center: 0.5,
        }
    }
}

impl GaussianProfile {
    /// Values of the derivatives `0..=order` at the points `xs`.
    pub fn derivatives(&self, xs: &[f64], order: usize) -> Result<Vec<Vec<f64>>> {
        let (a, w) = (self.amplitude, self.width);
        if !(w > 0.0) || !w.is_finite() || !a.is_finite() || !self.center.is_finite() {
            return Err(Error::Parameter(format!(
                "profile needs finite amplitude and width > 0, got A = {a}, w = {w}"
            )));
        }
        let mut out = vec![vec![0.0; xs.len()]; order + 1];
        let mut he = vec![0.0; order + 1];
        let mut shift = 0i64;
        loop {
            let mut largest = 0.0f64;
            let images: &[i64] = if shift == 0 { &[0] } else { &[-shift, shift] };
            for &m in images {
                for (j, &x) in xs.iter().enumerate() {
                    let z = (x - self.center - m as f64) / w;
                    let e = a * (-0.5 * z * z).exp();
                    largest = largest.max(e.abs());
                    // d^c/dx^c exp(-z^2/2) = (-1)^c He_c(z) exp(-z^2/2) / w^c
                    he[0] = 1.0;
                    if order >= 1 {
                        he[1] = z;
                    }
                    for n in 1..order {
                        he[n + 1] = z * he[n] - n as f64 * he[n - 1];
                    }
                    for (cc, o) in out.iter_mut().enumerate() {
                        let sign = if cc % 2 == 0 { 1.0 } else { -1.0 };
                        o[j] += sign * he[cc] * e / w.powi(cc as i32);
                    }
                }
            }
            if shift > 0 && largest < 1e-16 * a.abs() {
                break;
            }
            shift += 1;
            if shift > 10_000 {
                return Err(Error::Parameter(format!("profile width {w} is too large to periodise")));
            }
        }
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "profile width {w} is too small: derivatives overflow"
            )));
        }
        Ok(out)
    }
}

/// State whose field derivatives are those of `profile`, with the time
/// derivatives of the spatial derivatives taken from the PDE.
pub fn initial_state_from_profile(
    profile: &GaussianProfile,
    tau0: &LogSpectrum,
    grid: SpatialGrid,
    order: usize,
    pde: &PdeModel,
) -> Result<SimState> {
    let values = profile.derivatives(&grid.positions(), order)?;
    let transform = SpectralTransform::new(grid);
    let spectra: Vec<_> = values
        .iter()
        .map(|v| transform.analyze(v).map(|f| f.into_half()))
        .collect::<Result<_>>()?;
    let u: Vec<CVec> = (0..grid.half_len())
        .map(|k| CVec::from_fn(order + 1, |cc, _| spectra[cc][k]))
        .collect();
    let g = g_eval(&u, pde, &transform)?;
    let modes = u
        .into_iter()
        .enumerate()
        .map(|(k, u)| {
            let v = CVec::from_fn(order, |cc, _| {
                derivative_factor(k as i64, cc as u32 + 1, grid.size()) * g.half()[k]
            });
            ModeState { u, v }
        })
        .collect();
    let state = SimState {
        time: 0.0,
        grid,
        order,
        modes,
        spectrum: tau0.clone(),
        lineage: "initial".into(),
    };
    state.validate()?;
    Ok(state)
}
