//! Experiment configuration: presets, dimension grids, and the
//! flags > file > preset-defaults merge.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use geoinfer::inference::DebiasMode;
use geoinfer::solver::SolverConfig;
use geoinfer::{Family, Shape};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Cor1Sparse,
    Cor2Lowrank,
    Cor3Sign,
    Cor4Orthogonal,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Cor1Sparse,
        Preset::Cor2Lowrank,
        Preset::Cor3Sign,
        Preset::Cor4Orthogonal,
        Preset::Custom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Cor1Sparse => "cor1-sparse",
            Preset::Cor2Lowrank => "cor2-lowrank",
            Preset::Cor3Sign => "cor3-sign",
            Preset::Cor4Orthogonal => "cor4-orthogonal",
            Preset::Custom => "custom",
        }
    }

    /// The atom family a preset is tied to (`None` for custom).
    pub fn family(&self) -> Option<Family> {
        match self {
            Preset::Cor1Sparse => Some(Family::Sparse),
            Preset::Cor2Lowrank => Some(Family::LowRank),
            Preset::Cor3Sign => Some(Family::Sign),
            Preset::Cor4Orthogonal => Some(Family::Orthogonal),
            Preset::Custom => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown preset {s:?}; expected one of cor1-sparse, cor2-lowrank, cor3-sign, \
                     cor4-orthogonal, custom"
                ))
            })
    }
}

/// One grid point as written in config files:
/// `{"n": 500, "p": 200, "s": 5}`, `{"n": 800, "p1": 20, "p2": 20, "r": 2}`,
/// `{"n": 512, "p": 32}` or `{"n": 576, "m": 6}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
}

/// A validated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub shape: Shape,
    /// Sparsity, rank, or the dimension for sign/orthogonal truths.
    pub complexity: usize,
}

impl GridPoint {
    pub fn p(&self) -> usize {
        self.shape.len()
    }
}

impl GridEntry {
    pub fn resolve(&self, family: Family) -> Result<GridPoint, ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n == 0 {
            return bad("grid entry has n = 0".into());
        }
        let point = match family {
            Family::Sparse => {
                let (Some(p), Some(s)) = (self.p, self.s) else {
                    return bad(format!("sparse grid entries need p and s: {self:?}"));
                };
                if s == 0 || s > p {
                    return bad(format!("sparsity s = {s} must lie in 1..={p}"));
                }
                GridPoint {
                    n: self.n,
                    shape: Shape::Vector(p),
                    complexity: s,
                }
            }
            Family::LowRank => {
                let (Some(rows), Some(cols), Some(r)) = (self.p1, self.p2, self.r) else {
                    return bad(format!("low-rank grid entries need p1, p2 and r: {self:?}"));
                };
                if r == 0 || r > rows.min(cols) {
                    return bad(format!("rank r = {r} must lie in 1..={}", rows.min(cols)));
                }
                GridPoint {
                    n: self.n,
                    shape: Shape::Matrix { rows, cols },
                    complexity: r,
                }
            }
            Family::Sign => {
                let Some(p) = self.p else {
                    return bad(format!("sign grid entries need p: {self:?}"));
                };
                GridPoint {
                    n: self.n,
                    shape: Shape::Vector(p),
                    complexity: p,
                }
            }
            Family::Orthogonal => {
                let Some(m) = self.m else {
                    return bad(format!("orthogonal grid entries need m: {self:?}"));
                };
                GridPoint {
                    n: self.n,
                    shape: Shape::Matrix { rows: m, cols: m },
                    complexity: m,
                }
            }
        };
        if point.p() == 0 {
            return bad("grid entry has an empty parameter".into());
        }
        Ok(point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Estimation,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Required for the custom preset; must match the preset otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub kind: ExperimentKind,
    pub grid: Vec<GridEntry>,
    pub sigma: f64,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolverConfig,
    pub lambda_mc_samples: usize,
    /// Defaults to √(2 log p) per grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub debias: DebiasMode,
    /// Monte-Carlo draws for the per-grid-point cone width in the plot data
    /// (0 disables it).
    pub geometry_mc_samples: usize,
    pub tolerated_nonconvergence: f64,
}

impl ExperimentConfig {
    /// Defaults for a preset, sized like the reference experiments.
    pub fn preset_defaults(preset: Preset) -> ExperimentConfig {
        let vector = |n: usize, p: usize, s: Option<usize>| GridEntry {
            n,
            p: Some(p),
            s,
            ..GridEntry::default()
        };
        let (grid, replicates) = match preset {
            Preset::Cor1Sparse | Preset::Custom => (
                [500, 1000, 2000, 4000]
                    .iter()
                    .map(|&n| vector(n, 200, Some(5)))
                    .collect(),
                50,
            ),
            Preset::Cor2Lowrank => (
                [800, 1600, 3200]
                    .iter()
                    .map(|&n| GridEntry {
                        n,
                        p1: Some(20),
                        p2: Some(20),
                        r: Some(2),
                        ..GridEntry::default()
                    })
                    .collect(),
                30,
            ),
            Preset::Cor3Sign => (
                [256, 512, 1024]
                    .iter()
                    .map(|&n| vector(n, 32, None))
                    .collect(),
                30,
            ),
            Preset::Cor4Orthogonal => (
                [288, 576, 1152]
                    .iter()
                    .map(|&n| GridEntry {
                        n,
                        m: Some(6),
                        ..GridEntry::default()
                    })
                    .collect(),
                30,
            ),
        };
        ExperimentConfig {
            preset,
            family: if preset == Preset::Custom {
                Some(Family::Sparse)
            } else {
                None
            },
            kind: ExperimentKind::Estimation,
            grid,
            sigma: 1.0,
            replicates,
            alpha: 0.05,
            seed: 20_240_601,
            output_dir: PathBuf::from(format!("results/{}", preset.name())),
            solver: SolverConfig::default(),
            lambda_mc_samples: 1000,
            delta: None,
            debias: DebiasMode::MinimizeEta,
            geometry_mc_samples: 1000,
            tolerated_nonconvergence: 0.05,
        }
    }

    pub fn family(&self) -> Family {
        self.preset
            .family()
            .or(self.family)
            .expect("validated config has a family")
    }

    pub fn grid_points(&self) -> Result<Vec<GridPoint>, ConfigError> {
        let family = self.family();
        self.grid.iter().map(|g| g.resolve(family)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        match (self.preset.family(), self.family) {
            (None, None) => return bad("the custom preset needs a \"family\"".into()),
            (Some(f), Some(g)) if f != g => {
                return bad(format!(
                    "preset {} uses the {} family, config says {}",
                    self.preset,
                    f.name(),
                    g.name()
                ))
            }
            _ => {}
        }
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        self.grid_points()?;
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.lambda_mc_samples < 100 {
            return bad(format!(
                "lambda_mc_samples must be >= 100, got {}",
                self.lambda_mc_samples
            ));
        }
        if self.geometry_mc_samples != 0 && self.geometry_mc_samples < 100 {
            return bad("geometry_mc_samples must be 0 or >= 100".into());
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("delta must be >= 0, got {d}"));
            }
        }
        if let DebiasMode::FixedEta(eta) = self.debias {
            if !(eta >= 0.0 && eta.is_finite()) {
                return bad(format!("fixed-eta level must be >= 0, got {eta}"));
            }
        }
        if self.kind == ExperimentKind::Coverage {
            if self.sigma == 0.0 {
                return bad("coverage experiments need sigma > 0".into());
            }
            let exact = self.debias == DebiasMode::ExactInverse;
            if exact && self.grid_points()?.iter().any(|g| g.n <= g.p()) {
                return bad("exact-inverse coverage needs n > p at every grid point".into());
            }
            if !exact && self.family() != Family::Sparse {
                return bad(format!(
                    "coverage for the {} family is only supported in exact-inverse mode",
                    self.family().name()
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.tolerated_nonconvergence) {
            return bad("tolerated_nonconvergence must lie in [0, 1]".into());
        }
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

/// Command-line overrides; each `Some` wins over the file and the defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub replicates: Option<usize>,
}

/// Merges `overlay` into `base`, recursing into objects.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Builds a config from preset defaults, an optional JSON document, and
/// command-line overrides, in increasing order of precedence.
pub fn resolve_config(
    file: Option<&str>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let file_value: Option<Value> = file.map(serde_json::from_str).transpose()?;
    if let Some(v) = &file_value {
        if !v.is_object() {
            return Err(ConfigError::Invalid("config must be a JSON object".into()));
        }
    }
    let preset = match (
        overrides.preset,
        file_value.as_ref().and_then(|v| v.get("preset")),
    ) {
        (Some(p), _) => p,
        (None, Some(v)) => serde_json::from_value(v.clone())?,
        (None, None) => {
            return Err(ConfigError::Invalid(
                "no preset given (use --preset or a config file with \"preset\")".into(),
            ))
        }
    };
    let mut value = serde_json::to_value(ExperimentConfig::preset_defaults(preset))?;
    if let Some(v) = file_value {
        merge(&mut value, v);
    }
    let mut config: ExperimentConfig = serde_json::from_value(value)?;
    config.preset = preset;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(r) = overrides.replicates {
        config.replicates = r;
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config(
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let text = path
        .map(|p| {
            std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })
        })
        .transpose()?;
    resolve_config(text.as_deref(), overrides)
}
