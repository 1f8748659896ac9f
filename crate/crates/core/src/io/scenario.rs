//! Scenario assembly from a configuration and the subcommand pipelines.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost_grad::{
    eval_cost, hamiltonian_gap, pontryagin_residual, second_order_scan, ControlSpace,
    ControlTrajectory, CostSpec, ThetaScanSettings,
};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, Model, StateTrajectory, TimeGrid};
use crate::grid::{CgSettings, GridSpec, ScalarField, VectorField};
use crate::io::config::{
    CostConfig, FlowPreset, ForcingPreset, MeasurementSource, ScenarioConfig, TargetSource,
};
use crate::io::field_io::{
    load_vector_series, read_manifest, read_trajectory, read_vector, write_csv, write_field,
    write_trajectory,
};
use crate::model::{assemble_forcing, Bathymetry, BoundaryFlow, ForcingTrajectory, JacobianMode};
use crate::optimize::{assimilate_initial, minimize_control, uniqueness_horizon, Status};
use crate::tangent_adjoint::{
    duality_check, solve_adjoint, solve_tangent, taylor_test, tangent_bound_check,
};
use crate::verify::{
    all_passed, band_limited_field, bound_monitors, gradient_fd_check, inequality_suite,
    operator_property_suite, reports_to_json, write_reports_csv, PropertyReport, MARGIN_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Forward,
    Tangent,
    Adjoint,
    Gradcheck,
    Taylor,
    Optimize,
    Assimilate,
    Uniqueness,
    Secondorder,
    Verify,
}

impl Subcommand {
    pub const ALL: [Subcommand; 10] = [
        Subcommand::Forward,
        Subcommand::Tangent,
        Subcommand::Adjoint,
        Subcommand::Gradcheck,
        Subcommand::Taylor,
        Subcommand::Optimize,
        Subcommand::Assimilate,
        Subcommand::Uniqueness,
        Subcommand::Secondorder,
        Subcommand::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Forward => "forward",
            Subcommand::Tangent => "tangent",
            Subcommand::Adjoint => "adjoint",
            Subcommand::Gradcheck => "gradcheck",
            Subcommand::Taylor => "taylor",
            Subcommand::Optimize => "optimize",
            Subcommand::Assimilate => "assimilate",
            Subcommand::Uniqueness => "uniqueness",
            Subcommand::Secondorder => "secondorder",
            Subcommand::Verify => "verify",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand {s}")))
    }
}

/// Command-line values that take precedence over the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<JacobianMode>,
    pub tau_seq: Option<Vec<f64>>,
    pub theta_samples: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.jacobian = m;
        }
        if let Some(n) = self.max_iters {
            cfg.optimizer.max_iters = n;
        }
        if let Some(t) = self.tol {
            cfg.optimizer.tol = t;
        }
        cfg.optimizer
            .validate()
            .map_err(|e| Error::config("optimizer", e.to_string()))?;
        if let Some(taus) = &self.tau_seq {
            if taus.len() < 2 || taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::config(
                    "tau-seq",
                    "need at least two positive step sizes",
                ));
            }
        }
        if self.theta_samples == Some(0) {
            return Err(Error::config("theta-samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// Headline of a run. `passed` is false when a checked property failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub headline: String,
    pub value: Option<f64>,
    pub passed: bool,
    /// Remarks about substitutions made by the pipeline.
    pub notes: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

/// Model, cost and initial control assembled from a configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Model,
    pub spec: CostSpec,
    pub init: ControlTrajectory,
}

/// Control used by the tracking twin:
/// `amp (sin(pi x) sin(pi y), -sin(2 pi x) sin(pi y)) cos(pi t / T)` at `t_n`.
pub fn twin_control(grid: GridSpec, time: TimeGrid, amp: f64) -> Vec<VectorField> {
    (0..time.steps)
        .map(|n| {
            let c = amp * (PI * time.t(n) / time.t_final).cos();
            VectorField::sample_dirichlet(grid, |x, y| {
                let (x, y) = (x / grid.lx, y / grid.ly);
                (
                    c * (PI * x).sin() * (PI * y).sin(),
                    -c * (2.0 * PI * x).sin() * (PI * y).sin(),
                )
            })
        })
        .collect()
}

/// Initial velocity used by the assimilation twin.
pub fn twin_initial(grid: GridSpec, amp: f64) -> VectorField {
    VectorField::sample_dirichlet(grid, |x, y| {
        let (x, y) = (x / grid.lx, y / grid.ly);
        (
            amp * (PI * x).sin() * (2.0 * PI * y).sin(),
            -amp * (2.0 * PI * x).sin() * (PI * y).sin(),
        )
    })
}

/// Seeded random control direction, one band-limited field per step.
pub fn random_direction(grid: GridSpec, time: TimeGrid, seed: u64) -> Vec<VectorField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..time.steps)
        .map(|_| band_limited_field(grid, 3, &mut rng))
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Scenario {
    /// Builds the model and the cost; twin targets run a nested forward
    /// solve. Relative paths are resolved against `base`.
    pub fn build(config: ScenarioConfig, base: &Path) -> Result<Self> {
        config.validate(base)?;
        let grid = config.grid_spec()?;
        let time = config.time_grid()?;
        let params = config.params;
        let bathy = Bathymetry::new(config.bathymetry.sample(grid))?;
        let w0 = match &config.w0 {
            FlowPreset::Zero => BoundaryFlow::zero(grid, time),
            FlowPreset::Uniform { c1, c2 } => BoundaryFlow::uniform(grid, time, *c1, *c2),
            FlowPreset::File { path } => {
                let w = read_vector(&resolve(base, path), &grid)?;
                BoundaryFlow::new(time, vec![w; time.steps + 1])?
            }
        };
        let forcing = match &config.forcing {
            ForcingPreset::Zero => ForcingTrajectory::zero(grid, time),
            ForcingPreset::Assembled {
                amplitude,
                frequency,
            } => {
                let tide: Vec<VectorField> = (0..=time.steps)
                    .map(|n| {
                        let s = amplitude * (2.0 * PI * frequency * time.t(n)).sin();
                        VectorField::sample(grid, |_, y| (s * (PI * y / grid.ly).sin(), 0.0))
                    })
                    .collect();
                assemble_forcing(&tide, &w0, &bathy, &params)?
            }
            ForcingPreset::File { path } => {
                let (m, dir) = read_manifest(&resolve(base, path))?;
                let f = load_vector_series(&m, &dir, "f", &grid)?;
                ForcingTrajectory::new(time, f)?
            }
        };
        let model = Model {
            params,
            bathy,
            time,
            w0,
            forcing,
            u0: VectorField::zeros(grid),
            xi0: ScalarField::zeros(grid),
            mode: config.jacobian,
            cg: CgSettings::with_tol(config.cg_tol),
        };
        model.validate()?;

        let target = |src: &TargetSource| -> Result<StateTrajectory> {
            match src {
                TargetSource::Zero => Ok(StateTrajectory::zeros(grid, time)),
                TargetSource::Twin { amplitude } => solve_forward(
                    &model,
                    &ControlTrajectory::Distributed(twin_control(grid, time, *amplitude)),
                ),
                TargetSource::Manifest { path } => {
                    read_trajectory(&resolve(base, path), &grid, time)
                }
            }
        };
        let spec = match &config.cost {
            CostConfig::Tracking { target: src } => CostSpec::tracking_of(&target(src)?),
            CostConfig::Dissipation { target: src } => {
                let t = target(src)?;
                CostSpec::Dissipation {
                    u_f: t.u[time.steps].clone(),
                    xi_f: t.xi[time.steps].clone(),
                    u_d: t.u,
                    xi_d: t.xi,
                }
            }
            CostConfig::Assimilation { measurements } => {
                let truth = match measurements {
                    MeasurementSource::ZeroTruth => solve_forward(
                        &model,
                        &ControlTrajectory::Initial(VectorField::zeros(grid)),
                    )?,
                    MeasurementSource::Twin { amplitude } => solve_forward(
                        &model,
                        &ControlTrajectory::Initial(twin_initial(grid, *amplitude)),
                    )?,
                    MeasurementSource::Manifest { path } => {
                        read_trajectory(&resolve(base, path), &grid, time)?
                    }
                };
                CostSpec::assimilation_of(&truth)
            }
            CostConfig::General => CostSpec::quadratic_example(),
        };
        let init = match spec.space() {
            ControlSpace::InitialL2 => ControlTrajectory::Initial(VectorField::zeros(grid)),
            _ => ControlTrajectory::zeros_distributed(grid, time),
        };
        Ok(Self {
            config,
            model,
            spec,
            init,
        })
    }
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn trajectory(&mut self, stem: &str, traj: &StateTrajectory) -> Result<()> {
        let p = write_trajectory(&self.dir, stem, traj)?;
        self.written.push(p);
        Ok(())
    }

    fn reports(&mut self, stem: &str, reports: &[PropertyReport]) -> Result<()> {
        let p = self.path(&format!("{stem}.json"));
        fs::write(p, reports_to_json(reports)? + "\n")?;
        let p = self.path(&format!("{stem}.csv"));
        write_reports_csv(reports, fs::File::create(p)?)?;
        Ok(())
    }

    fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn worst(reports: &[PropertyReport]) -> f64 {
    reports
        .iter()
        .map(|r| r.worst_margin)
        .fold(f64::INFINITY, f64::min)
}

fn distributed(s: &Scenario, what: &str) -> Result<()> {
    match s.init {
        ControlTrajectory::Distributed(_) => Ok(()),
        ControlTrajectory::Initial(_) => Err(Error::config(
            "cost",
            format!("{what} needs a distributed-control cost"),
        )),
    }
}

#[derive(Serialize)]
struct TaylorRow {
    tau: f64,
    residual: f64,
}

/// Parses `path`, applies the overrides, builds the scenario and runs the
/// pipeline of `sub`. Artifacts go to the output directory.
pub fn run_scenario_file(sub: Subcommand, path: &Path, overrides: &Overrides) -> Result<RunSummary> {
    let cfg = crate::io::config::parse_config(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_scenario(sub, cfg, base, overrides)
}

/// Runs one subcommand on a parsed configuration.
pub fn run_scenario(
    sub: Subcommand,
    mut config: ScenarioConfig,
    base: &Path,
    overrides: &Overrides,
) -> Result<RunSummary> {
    overrides.apply(&mut config)?;
    let mut art = Artifacts::new(config.output.clone())?;
    art.json("config.json", &config)?;
    let s = Scenario::build(config, base)?;
    let model = &s.model;
    let grid = model.grid();
    let time = model.time;
    let seed = s.config.seed;
    let exact_tol = if model.params.r == 0.0 { 1e-9 } else { 1e-6 };
    let mut notes = Vec::new();
    if matches!(s.spec, CostSpec::Assimilation { .. }) {
        notes.push(
            "terminal adjoint elevation uses xi(T) - xi_M^f in place of the self-referential phi(T) - u_M^f"
                .to_string(),
        );
    }

    let (headline, value, passed) = match sub {
        Subcommand::Forward => {
            let traj = solve_forward(model, &s.init)?;
            art.trajectory("forward", &traj)?;
            let last = art.path("forward_u_final.csv");
            write_csv(&last, &traj.u[time.steps])?;
            let j = eval_cost(&traj, &s.init, &s.spec, &model.cg)?;
            (format!("J={j}"), Some(j), traj.is_finite())
        }
        Subcommand::Tangent => {
            distributed(&s, "tangent")?;
            let base_traj = solve_forward(model, &s.init)?;
            let v = random_direction(grid, time, seed);
            let tan = solve_tangent(
                model,
                &base_traj,
                Some(&v),
                VectorField::zeros(grid),
                ScalarField::zeros(grid),
                model.mode,
            )?;
            art.trajectory("tangent", &tan)?;
            let margins = tangent_bound_check(model, &tan, Some(&v))?;
            let m = margins.iter().copied().fold(f64::INFINITY, f64::min);
            art.json("tangent_bound.json", &margins)?;
            (format!("tangent bound margin={m:e}"), Some(m), m >= -MARGIN_TOL)
        }
        Subcommand::Adjoint => {
            distributed(&s, "adjoint duality check")?;
            let base_traj = solve_forward(model, &s.init)?;
            let sources = s.spec.adjoint_sources(&base_traj)?;
            let adj = solve_adjoint(model, &base_traj, &sources, model.mode)?;
            art.trajectory("adjoint", &StateTrajectory::new(time, adj.p, adj.phi)?)?;
            let v = random_direction(grid, time, seed);
            let d = duality_check(model, &base_traj, &v, &sources, model.mode)?;
            art.json("duality.json", &serde_json::json!({ "relative_defect": d }))?;
            (format!("duality defect={d:e}"), Some(d), d <= 1e-10)
        }
        Subcommand::Gradcheck => {
            let mut rng_seed = seed;
            let mut dir = || {
                rng_seed += 1;
                let v = random_direction(grid, time, rng_seed);
                match &s.init {
                    ControlTrajectory::Initial(_) => ControlTrajectory::Initial(v[0].clone()),
                    ControlTrajectory::Distributed(_) => ControlTrajectory::Distributed(v),
                }
            };
            let control = dir().scaled(0.5);
            let directions = vec![dir(), dir(), dir()];
            let rep = gradient_fd_check(model, &s.spec, &control, &directions, &[1e-3, 1e-4, 1e-5])?;
            art.json("gradcheck.json", &rep)?;
            (
                format!("fd relative error={:e}", rep.error),
                Some(rep.error),
                rep.error <= exact_tol,
            )
        }
        Subcommand::Taylor => {
            distributed(&s, "taylor")?;
            let taus = overrides
                .tau_seq
                .clone()
                .unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4]);
            let v = random_direction(grid, time, seed);
            let rep = taylor_test(model, s.init.fields(), &v, &taus, model.mode)?;
            let rows: Vec<TaylorRow> = rep
                .taus
                .iter()
                .zip(&rep.residuals)
                .map(|(&tau, &residual)| TaylorRow { tau, residual })
                .collect();
            art.csv_rows("taylor.csv", &rows)?;
            art.json("taylor.json", &rep)?;
            let ok = rep.exact_to_rounding
                || model.mode == JacobianMode::Paper
                || rep.slope.is_some_and(|p| (p - 2.0).abs() <= 0.1);
            match rep.slope {
                Some(p) => (format!("taylor slope={p:.3}"), Some(p), ok),
                None => ("taylor remainder at rounding level".into(), None, ok),
            }
        }
        Subcommand::Optimize | Subcommand::Secondorder => {
            if sub == Subcommand::Secondorder && !matches!(s.spec, CostSpec::General(_)) {
                return Err(Error::config("cost", "secondorder needs the general cost"));
            }
            distributed(&s, "optimize")?;
            let out = minimize_control(model, &s.spec, s.init.clone(), &s.config.optimizer)?;
            art.csv_rows("trace.csv", &out.trace.entries)?;
            art.trajectory("optimal_state", &out.traj)?;
            let res = pontryagin_residual(&out.control, &out.adjoint, &s.spec, &model.cg)?;
            let ham = hamiltonian_gap(&out.control, &out.adjoint, &s.spec, 100, 16, seed, &model.cg)?;
            let j = out.trace.last().map_or(f64::NAN, |e| e.cost);
            art.json(
                "optimize.json",
                &serde_json::json!({
                    "status": out.status,
                    "iterations": out.trace.entries.len().saturating_sub(1),
                    "cost": j,
                    "pontryagin": res,
                    "hamiltonian": ham,
                    "monotone": out.trace.is_monotone(),
                }),
            )?;
            let ok = matches!(out.status, Status::Converged | Status::Stagnated)
                && out.trace.is_monotone()
                && ham.min_gap >= -1e-9;
            if sub == Subcommand::Optimize {
                (
                    format!("J={j:e} residual={:e} status={:?}", res.relative, out.status),
                    Some(j),
                    ok,
                )
            } else {
                let settings = ThetaScanSettings {
                    samples: overrides.theta_samples.unwrap_or(ThetaScanSettings::default().samples),
                    seed,
                    ..ThetaScanSettings::default()
                };
                let delta = random_direction(grid, time, seed.wrapping_add(7));
                let rep = second_order_scan(
                    model,
                    &s.spec,
                    out.control.fields(),
                    &out.traj,
                    &out.adjoint,
                    &delta,
                    &settings,
                )?;
                art.json("secondorder.json", &rep)?;
                (
                    format!(
                        "max S={:e} sufficient={}",
                        rep.max_s, rep.pointwise_satisfied
                    ),
                    Some(rep.max_s),
                    ok && rep.max_s >= -1e-8,
                )
            }
        }
        Subcommand::Assimilate => {
            let ControlTrajectory::Initial(u0) = &s.init else {
                return Err(Error::config("cost", "assimilate needs the assimilation cost"));
            };
            let out = assimilate_initial(model, &s.spec, u0.clone(), &s.config.optimizer)?;
            art.csv_rows("trace.csv", &out.trace.entries)?;
            let rec = &out.control.fields()[0];
            write_field(&art.path("recovered_u0.tdf"), rec)?;
            write_csv(&art.path("recovered_u0.csv"), rec)?;
            let j0 = out.trace.entries.first().map_or(f64::NAN, |e| e.cost);
            let j = out.trace.last().map_or(f64::NAN, |e| e.cost);
            let ratio = if j0 > 0.0 { j / j0 } else { 0.0 };
            art.json(
                "assimilate.json",
                &serde_json::json!({
                    "status": out.status,
                    "initial_cost": j0,
                    "cost": j,
                    "ratio": ratio,
                    "recovered_max_abs": rec.max_abs(),
                }),
            )?;
            (
                format!("J={j:e} ratio={ratio:.4} status={:?}", out.status),
                Some(j),
                out.trace.is_monotone() && out.status != Status::LineSearchFailed,
            )
        }
        Subcommand::Uniqueness => {
            let traj = solve_forward(model, &s.init)?;
            let h = uniqueness_horizon(
                &traj.u,
                &model.w0,
                &model.params,
                &model.bathy.constants(),
                time,
            )?;
            art.json("uniqueness.json", &h)?;
            match h {
                Some(h) => (format!("T_u={:.6}", h.t_u), Some(h.t_u), true),
                None => ("T_u=none".into(), None, true),
            }
        }
        Subcommand::Verify => {
            let mut reports = operator_property_suite(
                &model.bathy,
                &model.params,
                None,
                100,
                seed,
                &model.cg,
            )?;
            let fine = GridSpec::new(128, 128, 1.0, 1.0)?;
            reports.extend(inequality_suite(&fine, 20, seed, &model.cg)?);
            if let ControlTrajectory::Distributed(c) = &s.init {
                let v = random_direction(grid, time, seed);
                reports.extend(bound_monitors(model, &s.spec, c, &v, 0.1)?);
            }
            art.reports("verify", &reports)?;
            let m = worst(&reports);
            let failed = reports.iter().filter(|r| !r.passed).count();
            (
                format!("worst margin={m:e} failed={failed}/{}", reports.len()),
                Some(m),
                all_passed(&reports),
            )
        }
    };
    let summary = RunSummary {
        subcommand: sub.name().into(),
        headline,
        value,
        passed,
        notes,
        artifacts: art.written.clone(),
    };
    art.json("summary.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::{BathymetryPreset, GridConfig};
    use crate::model::PhysicalParams;

    fn zero_config(out: &Path) -> ScenarioConfig {
        ScenarioConfig {
            grid: GridConfig {
                nx: 9,
                ny: 9,
                lx: 1.0,
                ly: 1.0,
            },
            time: TimeGrid {
                t_final: 0.25,
                steps: 8,
            },
            params: PhysicalParams {
                alpha: 1.0,
                beta: 0.5,
                r: 1.0,
            },
            bathymetry: BathymetryPreset::Constant { depth: 1.0 },
            w0: FlowPreset::Zero,
            forcing: ForcingPreset::Zero,
            cost: CostConfig::default(),
            optimizer: Default::default(),
            jacobian: JacobianMode::Exact,
            seed: 0,
            output: out.to_path_buf(),
            cg_tol: 1e-12,
        }
    }

    #[test]
    fn forward_on_zero_scenario_reports_zero_cost() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = zero_config(dir.path());
        let s = run_scenario(Subcommand::Forward, cfg, Path::new("."), &Overrides::default())
            .unwrap();
        assert_eq!(s.headline, "J=0");
        assert!(s.passed);
        let traj = read_trajectory(
            &dir.path().join("forward.json"),
            &GridSpec::new(9, 9, 1.0, 1.0).unwrap(),
            TimeGrid::new(0.25, 8).unwrap(),
        )
        .unwrap();
        assert!(traj.u.iter().all(|u| u.max_abs() == 0.0));
        assert!(dir.path().join("summary.json").is_file());
    }

    #[test]
    fn subcommand_names_round_trip() {
        for c in Subcommand::ALL {
            assert_eq!(c.name().parse::<Subcommand>().unwrap(), c);
        }
        assert!("plot".parse::<Subcommand>().is_err());
    }

    #[test]
    fn wrong_cost_for_subcommand_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = zero_config(dir.path());
        let e = run_scenario(Subcommand::Assimilate, cfg.clone(), Path::new("."), &Overrides::default())
            .unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        let e = run_scenario(Subcommand::Secondorder, cfg, Path::new("."), &Overrides::default())
            .unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn runs_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = zero_config(a.path());
        cfg.forcing = ForcingPreset::Assembled {
            amplitude: 1.0,
            frequency: 1.0,
        };
        cfg.w0 = FlowPreset::Uniform { c1: 0.1, c2: 0.0 };
        let o = Overrides::default();
        run_scenario(Subcommand::Tangent, cfg.clone(), Path::new("."), &o).unwrap();
        cfg.output = b.path().to_path_buf();
        run_scenario(Subcommand::Tangent, cfg, Path::new("."), &o).unwrap();
        for name in ["tangent_u_00008.tdf", "tangent_xi_00003.tdf", "tangent_bound.json"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn adjoint_duality_on_small_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = zero_config(dir.path());
        cfg.forcing = ForcingPreset::Assembled {
            amplitude: 1.0,
            frequency: 1.0,
        };
        cfg.cost = CostConfig::Dissipation {
            target: TargetSource::Twin { amplitude: 1.0 },
        };
        let s = run_scenario(Subcommand::Adjoint, cfg, Path::new("."), &Overrides::default())
            .unwrap();
        assert!(s.passed, "{}", s.headline);
    }
}
