//! Periodic grid, Fourier-mode bookkeeping and the discrete transforms.
//!
//! Synthesis carries no normalisation, `s_j = sum_k c_k exp(2 pi i k x_j)`
//! for `k` in `-K/2+1..=K/2`, and analysis carries the `1/K`. Fields are
//! real, so only the half spectrum `0..=K/2` is stored; `c_0` and `c_{K/2}`
//! are kept exactly real.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Regular grid `x_j = j / K` on the unit periodic domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialGrid {
    k: usize,
}

impl SpatialGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k < 4 || k % 2 != 0 {
            return Err(Error::Parameter(format!(
                "grid size must be an even integer >= 4, got {k}"
            )));
        }
        Ok(Self { k })
    }

    /// Number of grid points `K`.
    pub fn size(&self) -> usize {
        self.k
    }

    /// Number of stored half-spectrum modes, `K/2 + 1`.
    pub fn half_len(&self) -> usize {
        self.k / 2 + 1
    }

    pub fn nyquist(&self) -> usize {
        self.k / 2
    }

    pub fn position(&self, j: usize) -> f64 {
        j as f64 / self.k as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.k).map(|j| self.position(j)).collect()
    }

    pub fn modes(&self) -> ModeSet {
        ModeSet { k: self.k }
    }

    /// True for the two half-spectrum modes that are real for real fields.
    pub fn is_real_mode(&self, k: usize) -> bool {
        k == 0 || k == self.k / 2
    }
}

/// Mode indices `-K/2+1, ..., K/2` in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSet {
    k: usize,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nyquist(&self) -> i64 {
        (self.k / 2) as i64
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        let half = (self.k / 2) as i64;
        (-half + 1)..=half
    }

    /// Position of mode `k` in the ascending ordering.
    pub fn position(&self, k: i64) -> Option<usize> {
        let half = (self.k / 2) as i64;
        if k <= -half || k > half {
            None
        } else {
            Some((k + half - 1) as usize)
        }
    }
}

/// Fourier coefficients of a real field, stored on the half spectrum.
#[derive(Clone, PartialEq)]
pub struct FourierField {
    k: usize,
    half: Vec<Complex64>,
}

impl fmt::Debug for FourierField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierField")
            .field("K", &self.k)
            .field("half", &self.half)
            .finish()
    }
}

impl FourierField {
    pub fn zeros(grid: SpatialGrid) -> Self {
        Self {
            k: grid.size(),
            half: vec![Complex64::new(0.0, 0.0); grid.half_len()],
        }
    }

    /// Builds a field from the half spectrum `0..=K/2`. The zero and
    /// Nyquist coefficients must be real up to `1e-12` of the field scale.
    pub fn from_half(grid: SpatialGrid, mut half: Vec<Complex64>) -> Result<Self> {
        if half.len() != grid.half_len() {
            return Err(Error::Dimension(format!(
                "expected {} half-spectrum modes, got {}",
                grid.half_len(),
                half.len()
            )));
        }
        let scale = half.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for idx in [0, grid.nyquist()] {
            if half[idx].im.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Contract(format!(
                    "mode {idx} must be real for a real field, imaginary part {}",
                    half[idx].im
                )));
            }
            half[idx].im = 0.0;
        }
        Ok(Self {
            k: grid.size(),
            half,
        })
    }

    /// Builds a field from all `K` modes in ascending order, checking the
    /// Hermitian pairing `c_{-k} = conj(c_k)`.
    pub fn from_full(grid: SpatialGrid, full: &[Complex64]) -> Result<Self> {
        let modes = grid.modes();
        if full.len() != modes.len() {
            return Err(Error::Dimension(format!(
                "expected {} modes, got {}",
                modes.len(),
                full.len()
            )));
        }
        let scale = full.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let at = |k: i64| full[modes.position(k).expect("mode in range")];
        for k in 1..grid.nyquist() as i64 {
            if (at(-k) - at(k).conj()).norm() > tol {
                return Err(Error::Contract(format!(
                    "modes {k} and -{k} are not complex conjugates"
                )));
            }
        }
        let half = (0..=grid.nyquist() as i64).map(at).collect();
        Self::from_half(grid, half)
    }

    pub fn grid_size(&self) -> usize {
        self.k
    }

    pub fn half(&self) -> &[Complex64] {
        &self.half
    }

    pub fn into_half(self) -> Vec<Complex64> {
        self.half
    }

    /// Coefficient of mode `k` for any `k` in `-K/2+1..=K/2`.
    pub fn get(&self, k: i64) -> Complex64 {
        if k >= 0 {
            self.half[k as usize]
        } else {
            self.half[(-k) as usize].conj()
        }
    }

    /// Sets a half-spectrum coefficient; the imaginary part is dropped on
    /// the real modes.
    pub fn set(&mut self, k: usize, mut value: Complex64) {
        if k == 0 || k == self.k / 2 {
            value.im = 0.0;
        }
        self.half[k] = value;
    }

    /// All `K` modes in ascending order.
    pub fn to_full(&self) -> Vec<Complex64> {
        let half = (self.k / 2) as i64;
        ((-half + 1)..=half).map(|k| self.get(k)).collect()
    }

    /// `sum_k |c_k|^2` over the full spectrum.
    pub fn power(&self) -> f64 {
        let n = self.k / 2;
        self.half
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let w = if k == 0 || k == n { 1.0 } else { 2.0 };
                w * c.norm_sqr()
            })
            .sum()
    }
}

/// Cached FFT plans for one grid size.
#[derive(Clone)]
pub struct SpectralTransform {
    grid: SpatialGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralTransform {
    pub fn new(grid: SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.size()),
            inverse: planner.plan_fft_inverse(grid.size()),
        }
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    /// Grid values of the field, without normalisation.
    pub fn synthesize(&self, field: &FourierField) -> Result<Vec<f64>> {
        if field.grid_size() != self.grid.size() {
            return Err(Error::Dimension(format!(
                "field has {} modes, grid has {} points",
                field.grid_size(),
                self.grid.size()
            )));
        }
        Ok(self.synthesize_half(field.half()))
    }

    /// Synthesis from a raw half spectrum of length `K/2 + 1`.
    pub(crate) fn synthesize_half(&self, half: &[Complex64]) -> Vec<f64> {
        let k = self.grid.size();
        let n = k / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        buf[0] = Complex64::new(half[0].re, 0.0);
        buf[n] = Complex64::new(half[n].re, 0.0);
        for m in 1..n {
            buf[m] = half[m];
            buf[k - m] = half[m].conj();
        }
        self.inverse.process(&mut buf);
        debug_assert!({
            let scale = buf.iter().map(|c| c.re.abs()).fold(1e-300, f64::max);
            buf.iter().all(|c| c.im.abs() <= 1e-12 * scale + 1e-300)
        });
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Fourier coefficients of real grid values (carries the `1/K`).
    pub fn analyze(&self, values: &[f64]) -> Result<FourierField> {
        if values.len() != self.grid.size() {
            return Err(Error::Dimension(format!(
                "expected {} grid values, got {}",
                self.grid.size(),
                values.len()
            )));
        }
        Ok(FourierField {
            k: self.grid.size(),
            half: self.analyze_half(values),
        })
    }

    pub(crate) fn analyze_half(&self, values: &[f64]) -> Vec<Complex64> {
        let k = self.grid.size();
        let n = k / 2;
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / k as f64;
        let mut half: Vec<Complex64> = buf[..=n].iter().map(|c| c * scale).collect();
        half[0].im = 0.0;
        half[n].im = 0.0;
        half
    }
}

/// Synthesises grid values; see [`SpectralTransform::synthesize`].
pub fn dft_synthesize(modes: &FourierField, grid: SpatialGrid) -> Result<Vec<f64>> {
    SpectralTransform::new(grid).synthesize(modes)
}

/// Synthesis from all `K` modes in ascending order. Fails with a contract
/// error when the modes are not Hermitian.
pub fn dft_synthesize_full(modes: &[Complex64], grid: SpatialGrid) -> Result<Vec<f64>> {
    let field = FourierField::from_full(grid, modes)?;
    dft_synthesize(&field, grid)
}

pub fn dft_analyze(values: &[f64], grid: SpatialGrid) -> Result<FourierField> {
    SpectralTransform::new(grid).analyze(values)
}

/// `i^p` for integer `p >= 0`.
pub(crate) fn i_pow(p: u32) -> Complex64 {
    match p % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Spectral factor `(2 pi i k)^c` of the `c`-th derivative on a `K`-point
/// grid. Odd derivatives vanish on the Nyquist mode so that derivatives of
/// real fields stay real.
pub fn derivative_factor(k: i64, c: u32, grid_size: usize) -> Complex64 {
    if c % 2 == 1 && k.unsigned_abs() as usize == grid_size / 2 {
        return Complex64::new(0.0, 0.0);
    }
    i_pow(c) * (2.0 * PI * k as f64).powi(c as i32)
}

/// Spectral derivative of order `c` of a field.
pub fn differentiate(field: &FourierField, c: u32) -> FourierField {
    let k = field.grid_size();
    let half = field
        .half()
        .iter()
        .enumerate()
        .map(|(m, v)| derivative_factor(m as i64, c, k) * v)
        .collect();
    FourierField { k, half }
}
