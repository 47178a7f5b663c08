//! Run configuration: flat `section.key = value` lines (TOML dotted keys).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridCfg,
    pub time: TimeCfg,
    pub pde: PdeCfg,
    #[serde(default)]
    pub prior: PriorCfg,
    #[serde(default)]
    pub initial: InitialCfg,
    #[serde(default)]
    pub spectrum: SpectrumCfg,
    #[serde(default)]
    pub increment: IncrementCfg,
    #[serde(default)]
    pub optimizer: OptimizerCfg,
    #[serde(default)]
    pub sampling: SamplingCfg,
    #[serde(default)]
    pub run: RunCfg,
    #[serde(default)]
    pub reference: ReferenceCfg,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Deltas {
    One(f64),
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeCfg {
    pub steps: usize,
    pub delta: Deltas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeName {
    Diffusion,
    Burgers,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeCfg {
    pub name: PdeName,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorCfg {
    pub order: usize,
}

impl Default for PriorCfg {
    fn default() -> Self {
        Self { order: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialCfg {
    pub amplitude: f64,
    pub width: f64,
    pub center: f64,
}

impl Default for InitialCfg {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width: 0.05,
            center: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumMode {
    /// Power law kept for the whole run.
    Fixed,
    /// Per-step spectra read from `spectrum.file`.
    File,
    /// Inferred jointly with the field.
    Adaptive,
    /// Per-step spectra estimated from the reference solution.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumCfg {
    pub mode: SpectrumMode,
    /// Power law `|sigma(k)|^2 = amplitude^2 |k|^exponent` of the initial
    /// (and fixed) spectrum.
    pub exponent: f64,
    pub amplitude: f64,
    pub file: Option<PathBuf>,
    #[serde(rename = "L")]
    pub l: usize,
    pub n_max: usize,
    pub sigma0: Option<f64>,
    pub sigma_tau: f64,
    /// Mean log-amplitude at `l = 0`; defaults to the log RMS of the
    /// initial field's modes.
    pub offset: Option<f64>,
    pub slope: f64,
    pub offset_std: f64,
    pub slope_std: f64,
}

impl Default for SpectrumCfg {
    fn default() -> Self {
        Self {
            mode: SpectrumMode::Fixed,
            exponent: -6.0,
            amplitude: 1.0,
            file: None,
            l: 500,
            n_max: 100,
            sigma0: None,
            sigma_tau: 1.0,
            offset: None,
            slope: -3.0,
            offset_std: 1.0,
            slope_std: 1.0,
        }
    }
}

/// Prior of the log-spectrum increment per unit time; unset values follow
/// the `spectrum` section.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncrementCfg {
    pub sigma_tau: Option<f64>,
    pub offset_std: Option<f64>,
    pub slope_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerCfg {
    pub gtol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub stagnation: f64,
    pub restarts: usize,
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        Self {
            gtol: 1e-9,
            max_iter: 500,
            memory: 12,
            stagnation: 1e-13,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VModeCfg {
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingCfg {
    pub v_mode: VModeCfg,
    pub truncation: f64,
}

impl Default for SamplingCfg {
    fn default() -> Self {
        Self {
            v_mode: VModeCfg::Sample,
            truncation: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyCfg {
    Abort,
    Continue,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunCfg {
    pub seed: u64,
    pub policy: PolicyCfg,
}

impl Default for RunCfg {
    fn default() -> Self {
        Self {
            seed: 0,
            policy: PolicyCfg::Abort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    None,
    /// Exact diffusion solution.
    Analytic,
    /// Pseudo-spectral RK4 on a fine grid.
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceCfg {
    pub kind: ReferenceKind,
    pub k_ref: usize,
    /// `dt_ref = delta / dt_divisor`.
    pub dt_divisor: f64,
    pub dealias: bool,
}

impl Default for ReferenceCfg {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::None,
            k_ref: 1024,
            dt_divisor: 100.0,
            dealias: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("at '{}': {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config; returns it with the raw bytes.
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
        let mut cfg = Self::parse(text)?;
        if let Some(file) = &cfg.spectrum.file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.spectrum.file = Some(base.join(file));
            }
        }
        Ok((cfg, bytes))
    }

    pub fn deltas(&self) -> Vec<f64> {
        match &self.time.delta {
            Deltas::One(d) => vec![*d],
            Deltas::PerStep(v) => v.clone(),
        }
    }

    /// Step size of step `i` (1-based).
    pub fn delta(&self, i: usize) -> f64 {
        match &self.time.delta {
            Deltas::One(d) => *d,
            Deltas::PerStep(v) => v[i - 1],
        }
    }

    /// Times `t_0 = 0, ..., t_N`.
    pub fn times(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        for i in 1..=self.time.steps {
            t.push(t[i - 1] + self.delta(i));
        }
        t
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("at '{key}': {msg}")));
        if self.grid.k < 4 || self.grid.k % 2 != 0 {
            return bad("grid.K", format!("must be even and >= 4, got {}", self.grid.k));
        }
        match &self.time.delta {
            Deltas::One(d) if !(*d > 0.0 && d.is_finite()) => {
                return bad("time.delta", format!("must be > 0, got {d}"));
            }
            Deltas::PerStep(v) => {
                if v.len() != self.time.steps {
                    return bad(
                        "time.delta",
                        format!("{} step sizes for {} steps", v.len(), self.time.steps),
                    );
                }
                if let Some(d) = v.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                    return bad("time.delta", format!("must be > 0, got {d}"));
                }
            }
            _ => {}
        }
        if !(self.pde.nu >= 0.0 && self.pde.nu.is_finite()) {
            return bad("pde.nu", format!("must be >= 0, got {}", self.pde.nu));
        }
        if self.prior.order < 2 {
            return bad("prior.order", format!("needs >= 2 for these PDEs, got {}", self.prior.order));
        }
        if !(self.initial.width > 0.0) {
            return bad("initial.width", format!("must be > 0, got {}", self.initial.width));
        }
        if !(self.spectrum.amplitude > 0.0) {
            return bad("spectrum.amplitude", format!("must be > 0, got {}", self.spectrum.amplitude));
        }
        if self.spectrum.l < 2 {
            return bad("spectrum.L", format!("must be >= 2, got {}", self.spectrum.l));
        }
        if self.spectrum.mode == SpectrumMode::File && self.spectrum.file.is_none() {
            return bad("spectrum.file", "required when spectrum.mode = \"file\"".into());
        }
        if self.spectrum.mode == SpectrumMode::Truth && self.reference.kind == ReferenceKind::None {
            return bad("reference.kind", "spectrum.mode = \"truth\" needs a reference".into());
        }
        if self.reference.kind == ReferenceKind::Analytic && self.pde.name != PdeName::Diffusion {
            return bad("reference.kind", "the analytic reference exists for diffusion only".into());
        }
        if self.reference.kind == ReferenceKind::Rk4 {
            if self.reference.k_ref % self.grid.k != 0 || self.reference.k_ref < 4 * self.grid.k {
                return bad(
                    "reference.k_ref",
                    format!("must be a multiple of grid.K with k_ref >= 4 K, got {}", self.reference.k_ref),
                );
            }
            if self.reference.dt_divisor < 50.0 {
                return bad(
                    "reference.dt_divisor",
                    format!("must be >= 50, got {}", self.reference.dt_divisor),
                );
            }
        }
        if !(self.optimizer.gtol >= 0.0) || self.optimizer.max_iter == 0 {
            return bad("optimizer", "gtol must be >= 0 and max_iter >= 1".into());
        }
        Ok(())
    }
}
