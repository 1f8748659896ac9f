//! JSON scenario configuration with defaults and fail-fast validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{cfl_max_dt, TimeGrid, DEFAULT_CFL_SAFETY};
use crate::grid::{GridSpec, ScalarField};
use crate::model::{Bathymetry, JacobianMode, PhysicalParams};
use crate::optimize::OptimizeSettings;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BathymetryPreset {
    Constant { depth: f64 },
    /// `h = d0 + sx x + sy y`
    Slope { d0: f64, sx: f64, sy: f64 },
    /// `h = d0 - amp exp(-|x - c|^2 / width^2)` around the domain centre.
    Bump { d0: f64, amp: f64, width: f64 },
}

impl BathymetryPreset {
    pub fn sample(&self, grid: GridSpec) -> ScalarField {
        match *self {
            BathymetryPreset::Constant { depth } => ScalarField::constant(grid, depth),
            BathymetryPreset::Slope { d0, sx, sy } => {
                ScalarField::sample(grid, |x, y| d0 + sx * x + sy * y)
            }
            BathymetryPreset::Bump { d0, amp, width } => {
                let (cx, cy) = (grid.lx / 2.0, grid.ly / 2.0);
                ScalarField::sample(grid, |x, y| {
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    d0 - amp * (-d2 / (width * width)).exp()
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowPreset {
    #[default]
    Zero,
    Uniform { c1: f64, c2: f64 },
    /// Rank-2 field file used at every time node.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingPreset {
    #[default]
    Zero,
    /// Tide `g = amplitude (sin(2 pi frequency t) sin(pi y / ly), 0)` combined
    /// with the boundary flow into the reduced forcing.
    Assembled { amplitude: f64, frequency: f64 },
    /// Trajectory manifest with a rank-2 series `f`.
    File { path: PathBuf },
}

/// Source of desired states.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSource {
    #[default]
    Zero,
    /// Nested forward solve driven by
    /// `U = amplitude (sin(pi x) sin(pi y), -sin(2 pi x) sin(pi y)) cos(pi t / T)`.
    Twin { amplitude: f64 },
    /// Trajectory manifest with series `u` and `xi`.
    Manifest { path: PathBuf },
}

/// Source of measurements for initial-data assimilation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementSource {
    /// Measurements of the run with zero initial velocity.
    #[default]
    ZeroTruth,
    /// Measurements of the run with initial velocity
    /// `amplitude (sin(pi x) sin(2 pi y), -sin(2 pi x) sin(pi y))`.
    Twin { amplitude: f64 },
    Manifest { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    Tracking {
        #[serde(default)]
        target: TargetSource,
    },
    /// The terminal targets are the last snapshot of the target trajectory.
    Dissipation {
        #[serde(default)]
        target: TargetSource,
    },
    Assimilation {
        #[serde(default)]
        measurements: MeasurementSource,
    },
    /// Quadratic general cost with zero targets.
    General,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::Tracking {
            target: TargetSource::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub time: TimeGrid,
    pub params: PhysicalParams,
    pub bathymetry: BathymetryPreset,
    #[serde(default)]
    pub w0: FlowPreset,
    #[serde(default)]
    pub forcing: ForcingPreset,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub optimizer: OptimizeSettings,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_cg_tol() -> f64 {
    1e-12
}

impl ScenarioConfig {
    /// 32x32 unit square, `T = 0.5`, 64 steps, sloping depth `1 + 0.5 x`,
    /// uniform boundary flow and an assembled tide; tracking of a twin target.
    pub fn default_scenario() -> Self {
        Self {
            grid: GridConfig {
                nx: 32,
                ny: 32,
                lx: 1.0,
                ly: 1.0,
            },
            time: TimeGrid {
                t_final: 0.5,
                steps: 64,
            },
            params: PhysicalParams {
                alpha: 1.0,
                beta: 0.5,
                r: 1.0,
            },
            bathymetry: BathymetryPreset::Slope {
                d0: 1.0,
                sx: 0.5,
                sy: 0.0,
            },
            w0: FlowPreset::Uniform { c1: 0.1, c2: 0.05 },
            forcing: ForcingPreset::Assembled {
                amplitude: 1.0,
                frequency: 1.0,
            },
            cost: CostConfig::Tracking {
                target: TargetSource::Twin { amplitude: 2.0 },
            },
            optimizer: OptimizeSettings::default(),
            jacobian: JacobianMode::Exact,
            seed: 0,
            output: default_output(),
            cg_tol: default_cg_tol(),
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
            .map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_final, self.time.steps)
            .map_err(|e| Error::config("time", e.to_string()))
    }

    /// Checks everything that can be checked before a solve. Relative file
    /// paths are resolved against `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let grid = self.grid_spec()?;
        let time = self.time_grid()?;
        self.params
            .validate()
            .map_err(|e| Error::config("params", e.to_string()))?;
        let h = self.bathymetry.sample(grid);
        let bathy = Bathymetry::new(h).map_err(|e| {
            Error::config(
                "bathymetry",
                format!("{e}; the depth must be positive everywhere"),
            )
        })?;
        let bound = cfl_max_dt(&grid, &bathy, DEFAULT_CFL_SAFETY)?;
        if time.dt() > bound {
            return Err(Error::config(
                "time.steps",
                format!(
                    "dt = {:e} exceeds the CFL bound {bound:e}; use at least {} steps",
                    time.dt(),
                    (time.t_final / bound).ceil()
                ),
            ));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return Err(Error::config("cg_tol", "must lie in (0, 1)"));
        }
        self.optimizer
            .validate()
            .map_err(|e| Error::config("optimizer", e.to_string()))?;
        let mut files: Vec<(&str, &PathBuf)> = Vec::new();
        if let FlowPreset::File { path } = &self.w0 {
            files.push(("w0.file.path", path));
        }
        if let ForcingPreset::File { path } = &self.forcing {
            files.push(("forcing.file.path", path));
        }
        match &self.cost {
            CostConfig::Tracking {
                target: TargetSource::Manifest { path },
            }
            | CostConfig::Dissipation {
                target: TargetSource::Manifest { path },
            } => files.push(("cost.target.manifest.path", path)),
            CostConfig::Assimilation {
                measurements: MeasurementSource::Manifest { path },
            } => files.push(("cost.measurements.manifest.path", path)),
            _ => {}
        }
        for (key, p) in files {
            if !base.join(p).is_file() {
                return Err(Error::config(key, format!("file {} not found", p.display())));
            }
        }
        Ok(())
    }
}

/// Parses a configuration from JSON text; `base` resolves relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate(base)?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}
