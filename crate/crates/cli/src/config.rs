//! Experiment configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config file.
//! See `data/configs/` for complete examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mask: PathBuf,
    pub output_dir: PathBuf,
    /// Seeds the `‖Φ‖` estimate and random initial data.
    pub seed: u64,
    pub time: TimeConfig,
    #[serde(default)]
    pub stokes: StokesConfig,
    pub initial: InitialData,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub phi: PhiConfig,
    #[serde(default)]
    pub shrink: ShrinkConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub intervals: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StokesConfig {
    #[serde(default)]
    pub delta: f64,
}

/// Initial velocity. Amplitudes are discrete `L²` norms of the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// One Stokes eigenmode, ordered by ascending eigenvalue.
    Mode { index: usize, amplitude: f64 },
    /// Gaussian modal coefficients damped by `λ^{-decay}`.
    Random {
        amplitude: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
    /// Whitespace-separated values `u1, u2, u3`, component-major over the
    /// occupied cells; projected onto divergence-free fields.
    File { path: PathBuf },
}

fn default_decay() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
    /// Scale of the convective term; 0 solves the linear Stokes problem.
    pub nonlinearity: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, nonlinearity: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    pub trials: usize,
    /// The randomized estimate is a lower bound; the gate uses it times this factor.
    pub safety: f64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self { trials: 8, safety: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkConfig {
    pub eps_schedule: Vec<f64>,
    pub max_halvings: usize,
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        Self { eps_schedule: vec![0.0, 0.05, 0.2], max_halvings: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Step sizes, coarsest first. Empty skips the oracle.
    #[serde(default)]
    pub dt: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.mask);
        fix(&mut self.output_dir);
        if let InitialData::File { path } = &mut self.initial {
            fix(path);
        }
    }

    /// Static checks that need no files.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.time.horizon) {
            return bad(format!("time.horizon must be positive, got {}", self.time.horizon));
        }
        if self.time.intervals < 2 {
            return bad(format!("time.intervals must be at least 2, got {}", self.time.intervals));
        }
        if self.time.quad_order < 2 {
            return bad(format!("time.quad_order must be at least 2, got {}", self.time.quad_order));
        }
        if !(self.stokes.delta.is_finite() && self.stokes.delta >= 0.0) {
            return bad(format!("stokes.delta must be nonnegative, got {}", self.stokes.delta));
        }
        match &self.initial {
            InitialData::Mode { amplitude, .. } | InitialData::Random { amplitude, .. } if !amplitude.is_finite() => {
                return bad("initial.amplitude must be finite".into());
            }
            InitialData::Random { decay, .. } if !decay.is_finite() => {
                return bad("initial.decay must be finite".into());
            }
            _ => {}
        }
        if !(self.picard.tol.is_finite() && self.picard.tol >= 0.0) {
            return bad(format!("picard.tol must be nonnegative, got {}", self.picard.tol));
        }
        if self.picard.max_iter == 0 {
            return bad("picard.max_iter must be positive".into());
        }
        if !self.picard.nonlinearity.is_finite() {
            return bad("picard.nonlinearity must be finite".into());
        }
        if self.phi.trials == 0 {
            return bad("phi.trials must be positive".into());
        }
        if !positive(self.phi.safety) {
            return bad(format!("phi.safety must be positive, got {}", self.phi.safety));
        }
        if self.shrink.eps_schedule.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("shrink.eps_schedule entries must be nonnegative".into());
        }
        if self.oracle.dt.iter().any(|&d| !positive(d)) {
            return bad("oracle.dt entries must be positive".into());
        }
        Ok(())
    }
}
