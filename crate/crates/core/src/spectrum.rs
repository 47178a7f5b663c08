//! Log-log power spectra and the aliased mode covariances they induce.
//!
//! The spectrum is stored as `tau(l) = log sigma(|k|)` on a regular grid in
//! `l = log |k|`, `l` in `[0, l_max]`, and linearly interpolated in between.
//! A grid mode `k` collects all continuous frequencies `q = k + nK` with
//! `|q| <= n_max K`, so
//!
//! ```text
//! D^k_{cd} = (-1)^d sum_q (2 pi i q)^{c+d} |sigma(|q|)|^2 .
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::i_pow;
use crate::linalg::CMat;

/// Regular grid `l_m = m * l_max / (L - 1)`, `m = 0..L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    len: usize,
    l_max: f64,
}

impl LogGrid {
    pub fn new(len: usize, l_max: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::Parameter(format!("log grid needs >= 2 points, got {len}")));
        }
        if !(l_max > 0.0) || !l_max.is_finite() {
            return Err(Error::Parameter(format!("l_max must be positive, got {l_max}")));
        }
        Ok(Self { len, l_max })
    }

    /// Grid covering all frequencies up to `n_max * K`.
    pub fn covering(len: usize, n_max: usize, grid_size: usize) -> Result<Self> {
        Self::new(len, ((n_max * grid_size) as f64).ln())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    pub fn step(&self) -> f64 {
        self.l_max / (self.len - 1) as f64
    }

    pub fn l(&self, m: usize) -> f64 {
        m as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|m| self.l(m)).collect()
    }

    /// Largest covered frequency `exp(l_max)`.
    pub fn max_frequency(&self) -> f64 {
        self.l_max.exp()
    }

    /// Interpolation node and weights `(m, w_m, w_{m+1})` at `l`, clamped
    /// to `l_min = 0` from below.
    fn weights(&self, l: f64) -> (usize, f64, f64) {
        let p = (l.max(0.0) / self.step()).min((self.len - 1) as f64);
        let m = (p.floor() as usize).min(self.len - 2);
        let t = p - m as f64;
        (m, 1.0 - t, t)
    }
}

/// Log-spectrum `tau` on a [`LogGrid`] plus the zero-mode amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpectrum {
    grid: LogGrid,
    tau: Vec<f64>,
    sigma0: f64,
}

impl LogSpectrum {
    /// `sigma0 = None` ties the zero-mode amplitude to `sigma(|k| = 1)`.
    pub fn new(grid: LogGrid, tau: Vec<f64>, sigma0: Option<f64>) -> Result<Self> {
        if tau.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "tau has {} values, log grid has {}",
                tau.len(),
                grid.len()
            )));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite log-spectrum value".into()));
        }
        let sigma0 = sigma0.unwrap_or_else(|| tau[0].exp());
        if !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(Error::Parameter(format!("sigma0 must be >= 0, got {sigma0}")));
        }
        Ok(Self { grid, tau, sigma0 })
    }

    pub fn grid(&self) -> LogGrid {
        self.grid
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Same grid and zero-mode amplitude, new `tau` values.
    pub fn with_tau(&self, tau: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, tau, Some(self.sigma0))
    }

    pub fn with_sigma0(&self, sigma0: f64) -> Result<Self> {
        Self::new(self.grid, self.tau.clone(), Some(sigma0))
    }

    /// Interpolated `tau` at `l`.
    pub fn tau_at(&self, l: f64) -> f64 {
        let (m, w0, w1) = self.grid.weights(l);
        w0 * self.tau[m] + w1 * self.tau[m + 1]
    }

    /// `|sigma(kappa)|^2`; `sigma0^2` at `kappa = 0`.
    pub fn sigma_sq_at(&self, kappa: f64) -> Result<f64> {
        if kappa == 0.0 {
            return Ok(self.sigma0 * self.sigma0);
        }
        if !(kappa > 0.0) || kappa > self.grid.max_frequency() * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "frequency {kappa} outside the spectrum range [0, {}]",
                self.grid.max_frequency()
            )));
        }
        Ok((2.0 * self.tau_at(kappa.ln())).exp())
    }

    /// `sum_{k=1}^{K/2} |sigma(k)|^2`, the power on the resolved scales.
    pub fn resolved_power(&self, grid_size: usize) -> Result<f64> {
        (1..=grid_size / 2)
            .map(|k| self.sigma_sq_at(k as f64))
            .sum()
    }
}

/// Hyperparameters of the log-spectrum prior.
///
/// `tau` is generated as an integrated Wiener process in `l` driven by
/// `sigma_tau`; its value and slope at `l = 0` are `offset + offset_std xi_0`
/// and `slope + slope_std xi_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumHyper {
    pub sigma_tau: f64,
    pub offset: f64,
    pub slope: f64,
    pub offset_std: f64,
    pub slope_std: f64,
    /// Aliasing truncation: frequencies up to `n_max * K` are summed.
    pub n_max: usize,
}

impl Default for SpectrumHyper {
    fn default() -> Self {
        Self {
            sigma_tau: 1.0,
            offset: 0.0,
            slope: -3.0,
            offset_std: 1.0,
            slope_std: 1.0,
            n_max: 100,
        }
    }
}

impl SpectrumHyper {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::Parameter("n_max must be >= 1".into()));
        }
        for (name, v) in [
            ("sigma_tau", self.sigma_tau),
            ("offset_std", self.offset_std),
            ("slope_std", self.slope_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.offset.is_finite() || !self.slope.is_finite() {
            return Err(Error::Parameter("offset and slope must be finite".into()));
        }
        Ok(())
    }

    /// Checks that every aliased frequency `|k + nK| <= n_max K` is covered.
    pub fn check_coverage(&self, grid: LogGrid, grid_size: usize) -> Result<()> {
        self.validate()?;
        let needed = (self.n_max * grid_size) as f64;
        if grid.max_frequency() < needed * (1.0 - 1e-12) {
            return Err(Error::OutOfRange(format!(
                "log grid reaches {} but aliasing needs {needed}",
                grid.max_frequency()
            )));
        }
        Ok(())
    }

    /// Number of excitations consumed by [`tau_from_excitations`].
    pub fn excitation_len(grid: LogGrid) -> usize {
        2 * grid.len()
    }
}

/// Aliased frequencies of grid mode `k`, grouped by `|q|` in descending
/// order (groups hold one or two frequencies of opposite sign).
pub(crate) fn alias_groups(k: i64, grid_size: usize, n_max: usize) -> Vec<Vec<f64>> {
    let kk = grid_size as i64;
    let limit = n_max as i64 * kk;
    let mut qs: Vec<i64> = (-(n_max as i64)..=n_max as i64)
        .map(|n| k + n * kk)
        .filter(|q| q.abs() <= limit)
        .collect();
    qs.sort_by(|a, b| b.abs().cmp(&a.abs()).then(a.cmp(b)));
    let mut groups: Vec<Vec<f64>> = Vec::new();
    let mut last = -1;
    for q in qs {
        if q.abs() == last {
            groups.last_mut().expect("group").push(q as f64);
        } else {
            groups.push(vec![q as f64]);
            last = q.abs();
        }
    }
    groups
}

/// Moments `S_p = sum_q (2 pi q)^p |sigma(|q|)|^2` for `p = 0..=pmax`.
fn alias_moments(
    k: i64,
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    grid_size: usize,
    pmax: usize,
) -> Result<Vec<f64>> {
    hyper.check_coverage(spec.grid(), grid_size)?;
    let groups = alias_groups(k, grid_size, hyper.n_max);
    let mut moments = vec![0.0; pmax + 1];
    let mut outer = vec![0.0; pmax + 1];
    for (gi, group) in groups.iter().enumerate() {
        let s2 = spec.sigma_sq_at(group[0].abs())?;
        let mut part = vec![0.0; pmax + 1];
        for &q in group {
            let w = 2.0 * PI * q;
            let mut pw = s2;
            for p in part.iter_mut() {
                *p += pw;
                pw *= w;
            }
        }
        for (m, p) in moments.iter_mut().zip(&part) {
            *m += p;
        }
        if gi == 0 {
            outer = part;
        }
    }
    if groups.len() > 1 {
        let p = pmax;
        if moments[p].abs() > 0.0 && (outer[p] / moments[p]).abs() > 1e-10 {
            log::warn!(
                "mode {k}: outermost aliased frequency carries {:.2e} of the covariance; \
                 the spectrum may not decay fast enough for n_max = {}",
                (outer[p] / moments[p]).abs(),
                hyper.n_max
            );
        }
    }
    Ok(moments)
}

fn covariance_from_moments(moments: &[f64], order: usize) -> CMat {
    CMat::from_fn(order + 1, order + 1, |c, d| {
        let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
        i_pow((c + d) as u32) * (sign * moments[c + d])
    })
}

/// Covariance `D^k` of the grid mode `k` among the field and its first
/// `order` spatial derivatives.
pub fn mode_covariance(
    k: i64,
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    order: usize,
    grid_size: usize,
) -> Result<CMat> {
    check_mode(k, grid_size)?;
    let moments = alias_moments(k, spec, hyper, grid_size, 2 * order)?;
    Ok(covariance_from_moments(&moments, order))
}

fn check_mode(k: i64, grid_size: usize) -> Result<()> {
    let half = (grid_size / 2) as i64;
    if k <= -half || k > half {
        return Err(Error::OutOfRange(format!(
            "mode {k} outside -{}..={half}",
            half - 1
        )));
    }
    Ok(())
}

/// Sparse gradient `dD^k / dtau_m`, one block per log-grid node touched by
/// an aliased frequency.
pub fn mode_covariance_grad(
    k: i64,
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    order: usize,
    grid_size: usize,
) -> Result<Vec<(usize, CMat)>> {
    check_mode(k, grid_size)?;
    hyper.check_coverage(spec.grid(), grid_size)?;
    let pmax = 2 * order;
    let mut per_node: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for group in alias_groups(k, grid_size, hyper.n_max) {
        for q in group {
            if q == 0.0 {
                continue;
            }
            let s2 = spec.sigma_sq_at(q.abs())?;
            let (m, w0, w1) = spec.grid().weights(q.abs().ln());
            for (node, w) in [(m, w0), (m + 1, w1)] {
                if w == 0.0 {
                    continue;
                }
                let entry = per_node.entry(node).or_insert_with(|| vec![0.0; pmax + 1]);
                let mut pw = 2.0 * s2 * w;
                for p in entry.iter_mut() {
                    *p += pw;
                    pw *= 2.0 * PI * q;
                }
            }
        }
    }
    Ok(per_node
        .into_iter()
        .map(|(m, moments)| (m, covariance_from_moments(&moments, order)))
        .collect())
}

/// Adds `d/dtau Re tr(G D^k(tau))` to `grad_tau` without materialising the
/// per-node blocks.
pub(crate) fn accumulate_covariance_grad(
    k: i64,
    cotangent: &CMat,
    spec: &LogSpectrum,
    hyper: &SpectrumHyper,
    grid_size: usize,
    grad_tau: &mut [f64],
) -> Result<()> {
    let order = cotangent.nrows() - 1;
    let pmax = 2 * order;
    // gamma_p = Re sum_{c+d=p} G_{dc} (-1)^d i^p
    let mut gamma = vec![0.0; pmax + 1];
    for cc in 0..=order {
        for d in 0..=order {
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            gamma[cc + d] += (cotangent[(d, cc)] * i_pow((cc + d) as u32) * sign).re;
        }
    }
    for group in alias_groups(k, grid_size, hyper.n_max) {
        for q in group {
            if q == 0.0 {
                continue;
            }
            let s2 = spec.sigma_sq_at(q.abs())?;
            let w = 2.0 * PI * q;
            let mut pw = 1.0;
            let mut h = 0.0;
            for g in &gamma {
                h += g * pw;
                pw *= w;
            }
            let (m, w0, w1) = spec.grid().weights(q.abs().ln());
            grad_tau[m] += 2.0 * s2 * w0 * h;
            grad_tau[m + 1] += 2.0 * s2 * w1 * h;
        }
    }
    Ok(())
}

fn iwp_noise_factors(dl: f64) -> (f64, f64, f64) {
    // lower-triangular square root of [[dl^3/3, dl^2/2], [dl^2/2, dl]]
    ((dl.powi(3) / 3.0).sqrt(), (3.0 * dl).sqrt() / 2.0, dl.sqrt() / 2.0)
}

/// Realises `tau` on the log grid from `2L` standard-normal excitations:
/// two for the value and slope at `l = 0`, then two per grid step for the
/// exact integrated-Wiener transition.
pub fn tau_from_excitations(xi: &[f64], hyper: &SpectrumHyper, grid: LogGrid) -> Result<Vec<f64>> {
    let n = SpectrumHyper::excitation_len(grid);
    if xi.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} excitations, got {}",
            xi.len()
        )));
    }
    let dl = grid.step();
    let (a, b, c) = iwp_noise_factors(dl);
    let s = hyper.sigma_tau;
    let mut pos = hyper.offset + hyper.offset_std * xi[0];
    let mut vel = hyper.slope + hyper.slope_std * xi[1];
    let mut tau = Vec::with_capacity(grid.len());
    tau.push(pos);
    for m in 1..grid.len() {
        let (x0, x1) = (xi[2 * m], xi[2 * m + 1]);
        pos += dl * vel + s * a * x0;
        vel += s * (b * x0 + c * x1);
        tau.push(pos);
    }
    Ok(tau)
}

/// Transposed Jacobian of [`tau_from_excitations`] applied to `grad_tau`.
pub fn excitation_adjoint(grad_tau: &[f64], hyper: &SpectrumHyper, grid: LogGrid) -> Result<Vec<f64>> {
    if grad_tau.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "expected {} tau gradients, got {}",
            grid.len(),
            grad_tau.len()
        )));
    }
    let dl = grid.step();
    let (a, b, c) = iwp_noise_factors(dl);
    let s = hyper.sigma_tau;
    let mut out = vec![0.0; SpectrumHyper::excitation_len(grid)];
    let mut lp = 0.0;
    let mut lv = 0.0;
    for m in (1..grid.len()).rev() {
        lp += grad_tau[m];
        out[2 * m] = s * (a * lp + b * lv);
        out[2 * m + 1] = s * c * lv;
        lv += dl * lp;
    }
    lp += grad_tau[0];
    out[0] = hyper.offset_std * lp;
    out[1] = hyper.slope_std * lv;
    Ok(out)
}

/// `tau^i = tau^{i-1} + delta * increment`.
pub fn temporal_update(prev: &[f64], delta: f64, increment: &[f64]) -> Result<Vec<f64>> {
    if prev.len() != increment.len() {
        return Err(Error::Dimension(format!(
            "log-spectrum grids differ: {} vs {}",
            prev.len(),
            increment.len()
        )));
    }
    Ok(prev
        .iter()
        .zip(increment)
        .map(|(p, t)| p + delta * t)
        .collect())
}

/// Power law `|sigma(k)|^2 = amplitude^2 |k|^exponent`; the zero mode gets
/// `sigma0 = amplitude`.
pub fn power_law_spectrum(exponent: f64, amplitude: f64, grid: LogGrid) -> Result<LogSpectrum> {
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(Error::Parameter(format!(
            "power-law amplitude must be positive, got {amplitude}"
        )));
    }
    let base = amplitude.ln();
    let tau = grid.points().iter().map(|l| base + 0.5 * exponent * l).collect();
    LogSpectrum::new(grid, tau, Some(amplitude))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl LogSpectrum {
    /// CSV with a `#` header line carrying the grid, `sigma0` and, when
    /// given, the prior hyperparameters; then `l,tau` rows.
    pub fn to_csv(&self, hyper: Option<&SpectrumHyper>) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "# L={} l_max={} sigma0={}",
            self.grid.len(),
            fmt_f64(self.grid.l_max()),
            fmt_f64(self.sigma0)
        );
        if let Some(h) = hyper {
            let _ = write!(
                out,
                " sigma_tau={} offset={} slope={} offset_std={} slope_std={} n_max={}",
                fmt_f64(h.sigma_tau),
                fmt_f64(h.offset),
                fmt_f64(h.slope),
                fmt_f64(h.offset_std),
                fmt_f64(h.slope_std),
                h.n_max
            );
        }
        out.push('\n');
        out.push_str("l,tau\n");
        for (m, t) in self.tau.iter().enumerate() {
            let _ = writeln!(out, "{},{}", fmt_f64(self.grid.l(m)), fmt_f64(*t));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(Self, Option<SpectrumHyper>)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix('#'))
            .ok_or_else(|| Error::Parameter("spectrum CSV must start with a '#' header".into()))?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for item in header.split_whitespace() {
            if let Some((k, v)) = item.split_once('=') {
                fields.insert(k, v);
            }
        }
        let num = |key: &str| -> Result<f64> {
            fields
                .get(key)
                .ok_or_else(|| Error::Parameter(format!("spectrum header lacks '{key}'")))?
                .parse::<f64>()
                .map_err(|e| Error::Parameter(format!("bad '{key}' in spectrum header: {e}")))
        };
        let len = num("L")? as usize;
        let grid = LogGrid::new(len, num("l_max")?)?;
        let sigma0 = num("sigma0")?;
        match lines.next() {
            Some(cols) if cols.trim() == "l,tau" => {}
            other => {
                return Err(Error::Parameter(format!(
                    "expected 'l,tau' column header, found {other:?}"
                )))
            }
        }
        let mut tau = Vec::with_capacity(len);
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let (_, t) = line
                .split_once(',')
                .ok_or_else(|| Error::Parameter(format!("bad spectrum row {}: '{line}'", i + 1)))?;
            tau.push(t.trim().parse::<f64>().map_err(|e| {
                Error::Parameter(format!("bad tau value in row {}: {e}", i + 1))
            })?);
        }
        let spec = LogSpectrum::new(grid, tau, Some(sigma0))?;
        let hyper = if fields.contains_key("sigma_tau") {
            Some(SpectrumHyper {
                sigma_tau: num("sigma_tau")?,
                offset: num("offset")?,
                slope: num("slope")?,
                offset_std: num("offset_std")?,
                slope_std: num("slope_std")?,
                n_max: num("n_max")? as usize,
            })
        } else {
            None
        };
        Ok((spec, hyper))
    }
}
