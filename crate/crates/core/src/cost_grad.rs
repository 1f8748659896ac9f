//! Cost functionals, reduced gradients and optimality checks.
//!
//! Running terms are integrated with the trapezoid rule over the time nodes.
//! Distributed controls hold one field per step and their penalty uses the
//! rectangle rule, matching how the forward solver applies them.

use std::fmt::Debug;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{solve_forward, Model, StateTrajectory, TimeGrid};
use crate::grid::{
    l2_norm, l4_norm, laplacian, poisson_solve, CgSettings, GridSpec, ScalarField, VectorField,
};
use crate::tangent_adjoint::{
    solve_adjoint, AdjointSourceSpec, AdjointSources, AdjointTrajectory, ElevationSource,
    TerminalSpec, VelocitySource,
};

/// Distributed control `U(t)` (one field per step) or initial velocity `U_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlTrajectory {
    Distributed(Vec<VectorField>),
    Initial(VectorField),
}

impl ControlTrajectory {
    pub fn zeros_distributed(grid: GridSpec, time: TimeGrid) -> Self {
        ControlTrajectory::Distributed(vec![VectorField::zeros(grid); time.steps])
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ControlTrajectory::Distributed(c) => {
                ControlTrajectory::Distributed(c.iter().map(|v| VectorField::zeros(v.grid)).collect())
            }
            ControlTrajectory::Initial(v) => ControlTrajectory::Initial(VectorField::zeros(v.grid)),
        }
    }

    pub fn fields(&self) -> &[VectorField] {
        match self {
            ControlTrajectory::Distributed(c) => c,
            ControlTrajectory::Initial(v) => std::slice::from_ref(v),
        }
    }

    fn fields_mut(&mut self) -> &mut [VectorField] {
        match self {
            ControlTrajectory::Distributed(c) => c,
            ControlTrajectory::Initial(v) => std::slice::from_mut(v),
        }
    }

    fn check_compatible(&self, other: &ControlTrajectory) -> Result<()> {
        match (self, other) {
            (ControlTrajectory::Distributed(a), ControlTrajectory::Distributed(b)) => {
                if a.len() != b.len() {
                    return Err(Error::TimeGridMismatch {
                        expected: a.len(),
                        found: b.len(),
                    });
                }
            }
            (ControlTrajectory::Initial(_), ControlTrajectory::Initial(_)) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "distributed and initial controls cannot be combined".into(),
                ))
            }
        }
        Ok(())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ControlTrajectory) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.fields_mut().iter_mut().zip(other.fields()) {
            x.axpy(a, y);
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        for v in out.fields_mut() {
            *v = v.scaled(a);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.fields().iter().map(|v| v.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|v| v.is_finite())
    }
}

/// Plug-in integrands of the general cost
/// `int g(t, u) + int h(t, xi) + int l(U)`, with first derivatives and
/// second derivatives applied to a direction.
pub trait GeneralCost: Debug + Send + Sync {
    fn g(&self, t: f64, u: &VectorField) -> f64;
    fn g_u(&self, t: f64, u: &VectorField) -> VectorField;
    fn g_uu(&self, t: f64, u: &VectorField, v: &VectorField) -> VectorField;
    fn h(&self, t: f64, xi: &ScalarField) -> f64;
    fn h_xi(&self, t: f64, xi: &ScalarField) -> ScalarField;
    fn h_xixi(&self, t: f64, xi: &ScalarField, v: &ScalarField) -> ScalarField;
    fn l(&self, u: &VectorField) -> f64;
    fn l_u(&self, u: &VectorField) -> VectorField;
    fn l_uu(&self, u: &VectorField, v: &VectorField) -> VectorField;
}

/// `g = |u|^2 / 2`, `h = |xi|^2 / 2`, `l = |U|^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticExample;

impl GeneralCost for QuadraticExample {
    fn g(&self, _t: f64, u: &VectorField) -> f64 {
        0.5 * u.inner(u)
    }
    fn g_u(&self, _t: f64, u: &VectorField) -> VectorField {
        u.clone()
    }
    fn g_uu(&self, _t: f64, _u: &VectorField, v: &VectorField) -> VectorField {
        v.clone()
    }
    fn h(&self, _t: f64, xi: &ScalarField) -> f64 {
        0.5 * xi.inner(xi)
    }
    fn h_xi(&self, _t: f64, xi: &ScalarField) -> ScalarField {
        xi.clone()
    }
    fn h_xixi(&self, _t: f64, _xi: &ScalarField, v: &ScalarField) -> ScalarField {
        v.clone()
    }
    fn l(&self, u: &VectorField) -> f64 {
        0.5 * u.inner(u)
    }
    fn l_u(&self, u: &VectorField) -> VectorField {
        u.clone()
    }
    fn l_uu(&self, _u: &VectorField, v: &VectorField) -> VectorField {
        v.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Tracking,
    Dissipation,
    Assimilation,
    General,
}

/// Geometry in which the gradient of a cost is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControlSpace {
    /// `sum dt <(-lap)^{-1} a, b>`
    HMinus1,
    /// `sum dt <a, b>`
    L2,
    /// `<a, b>` on the initial velocity
    InitialL2,
}

/// The cost functionals. Trajectories of targets hold one snapshot per time node.
#[derive(Debug, Clone)]
pub enum CostSpec {
    /// `1/2 int |u - u_d|^2 + |xi - xi_d|^2 + 1/2 int |U|_{-1}^2`
    Tracking {
        u_d: Vec<VectorField>,
        xi_d: Vec<ScalarField>,
    },
    /// `1/2 int <-lap(u - u_d), u - u_d> + |xi - xi_d|^2 + 1/2 int |U|_{-1}^2`
    /// plus the terminal mismatch `1/2 |u(T) - u_f|^2 + 1/2 |xi(T) - xi_f|^2`.
    Dissipation {
        u_d: Vec<VectorField>,
        xi_d: Vec<ScalarField>,
        u_f: VectorField,
        xi_f: ScalarField,
    },
    /// `1/2 |U_0|^2 + 1/2 int |u - u_M|^2 + |xi - xi_M|^2` plus the terminal mismatch.
    Assimilation {
        u_m: Vec<VectorField>,
        xi_m: Vec<ScalarField>,
        u_mf: VectorField,
        xi_mf: ScalarField,
    },
    General(Arc<dyn GeneralCost>),
}

impl CostSpec {
    pub fn kind(&self) -> CostKind {
        match self {
            CostSpec::Tracking { .. } => CostKind::Tracking,
            CostSpec::Dissipation { .. } => CostKind::Dissipation,
            CostSpec::Assimilation { .. } => CostKind::Assimilation,
            CostSpec::General(_) => CostKind::General,
        }
    }

    pub fn space(&self) -> ControlSpace {
        match self {
            CostSpec::Tracking { .. } | CostSpec::Dissipation { .. } => ControlSpace::HMinus1,
            CostSpec::Assimilation { .. } => ControlSpace::InitialL2,
            CostSpec::General(_) => ControlSpace::L2,
        }
    }

    pub fn quadratic_example() -> Self {
        CostSpec::General(Arc::new(QuadraticExample))
    }

    /// Tracking spec whose targets are the given trajectory.
    pub fn tracking_of(traj: &StateTrajectory) -> Self {
        CostSpec::Tracking {
            u_d: traj.u.clone(),
            xi_d: traj.xi.clone(),
        }
    }

    /// Assimilation spec with measurements taken from the given trajectory.
    pub fn assimilation_of(traj: &StateTrajectory) -> Self {
        let n = traj.u.len() - 1;
        CostSpec::Assimilation {
            u_m: traj.u.clone(),
            xi_m: traj.xi.clone(),
            u_mf: traj.u[n].clone(),
            xi_mf: traj.xi[n].clone(),
        }
    }

    fn check_control(&self, control: &ControlTrajectory) -> Result<()> {
        let ok = matches!(
            (self.space(), control),
            (ControlSpace::InitialL2, ControlTrajectory::Initial(_))
                | (ControlSpace::HMinus1 | ControlSpace::L2, ControlTrajectory::Distributed(_))
        );
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{:?} cost does not accept this control type",
                self.kind()
            )))
        }
    }

    fn check_targets(&self, traj: &StateTrajectory) -> Result<()> {
        let n = traj.u.len();
        let (u, xi) = match self {
            CostSpec::Tracking { u_d, xi_d } | CostSpec::Dissipation { u_d, xi_d, .. } => {
                (u_d.len(), xi_d.len())
            }
            CostSpec::Assimilation { u_m, xi_m, .. } => (u_m.len(), xi_m.len()),
            CostSpec::General(_) => (n, n),
        };
        for found in [u, xi] {
            if found != n {
                return Err(Error::TimeGridMismatch { expected: n, found });
            }
        }
        Ok(())
    }

    /// Adjoint sources matching this cost along `traj`.
    pub fn adjoint_sources(&self, traj: &StateTrajectory) -> Result<AdjointSources> {
        self.check_targets(traj)?;
        let spec = match self {
            CostSpec::Tracking { u_d, xi_d } => AdjointSourceSpec {
                velocity: VelocitySource::Tracking(u_d.clone()),
                elevation: ElevationSource::Tracking(xi_d.clone()),
                terminal: TerminalSpec::Zero,
            },
            CostSpec::Dissipation {
                u_d,
                xi_d,
                u_f,
                xi_f,
            } => AdjointSourceSpec {
                velocity: VelocitySource::Dissipation(u_d.clone()),
                elevation: ElevationSource::Tracking(xi_d.clone()),
                terminal: TerminalSpec::Mismatch {
                    u_f: u_f.clone(),
                    xi_f: xi_f.clone(),
                },
            },
            CostSpec::Assimilation {
                u_m,
                xi_m,
                u_mf,
                xi_mf,
            } => AdjointSourceSpec {
                velocity: VelocitySource::Measured(u_m.clone()),
                elevation: ElevationSource::Measured(xi_m.clone()),
                terminal: TerminalSpec::Mismatch {
                    u_f: u_mf.clone(),
                    xi_f: xi_mf.clone(),
                },
            },
            CostSpec::General(gc) => {
                let time = traj.time;
                AdjointSourceSpec {
                    velocity: VelocitySource::Given(
                        traj.u
                            .iter()
                            .enumerate()
                            .map(|(n, u)| {
                                let mut s = gc.g_u(time.t(n), u);
                                s.enforce_dirichlet();
                                s
                            })
                            .collect(),
                    ),
                    elevation: ElevationSource::Given(
                        traj.xi
                            .iter()
                            .enumerate()
                            .map(|(n, x)| gc.h_xi(time.t(n), x))
                            .collect(),
                    ),
                    terminal: TerminalSpec::Zero,
                }
            }
        };
        spec.evaluate(traj)
    }
}

/// Inner product of two controls in the given geometry.
pub fn control_inner(
    space: ControlSpace,
    a: &ControlTrajectory,
    b: &ControlTrajectory,
    dt: f64,
    cg: &CgSettings,
) -> Result<f64> {
    a.check_compatible(b)?;
    let pairs = a.fields().iter().zip(b.fields());
    match space {
        ControlSpace::HMinus1 => {
            let mut s = 0.0;
            for (x, y) in pairs {
                s += dt * poisson_solve(x, cg)?.inner(y);
            }
            Ok(s)
        }
        ControlSpace::L2 => Ok(pairs.map(|(x, y)| dt * x.inner(y)).sum()),
        ControlSpace::InitialL2 => Ok(pairs.map(|(x, y)| x.inner(y)).sum()),
    }
}

pub fn control_norm(
    space: ControlSpace,
    a: &ControlTrajectory,
    dt: f64,
    cg: &CgSettings,
) -> Result<f64> {
    Ok(control_inner(space, a, a, dt, cg)?.max(0.0).sqrt())
}

/// Value of the cost along `traj` driven by `control`.
pub fn eval_cost(
    traj: &StateTrajectory,
    control: &ControlTrajectory,
    spec: &CostSpec,
    cg: &CgSettings,
) -> Result<f64> {
    spec.check_control(control)?;
    spec.check_targets(traj)?;
    let time = traj.time;
    let dt = time.dt();
    let c = time.trapezoid_weights();
    let n = time.steps;
    let sq_u = |a: &VectorField, b: &VectorField| {
        let d = a.sub(b);
        d.inner(&d)
    };
    let sq_xi = |a: &ScalarField, b: &ScalarField| {
        let d = a.sub(b);
        d.inner(&d)
    };
    let j = match spec {
        CostSpec::Tracking { u_d, xi_d } => {
            let mut j = 0.0;
            for k in 0..=n {
                j += 0.5 * c[k] * (sq_u(&traj.u[k], &u_d[k]) + sq_xi(&traj.xi[k], &xi_d[k]));
            }
            j + 0.5 * control_inner(ControlSpace::HMinus1, control, control, dt, cg)?
        }
        CostSpec::Dissipation {
            u_d,
            xi_d,
            u_f,
            xi_f,
        } => {
            let mut j = 0.0;
            for k in 0..=n {
                let e = traj.u[k].sub(&u_d[k]);
                let diss = -laplacian(&e).inner(&e);
                j += 0.5 * c[k] * (diss + sq_xi(&traj.xi[k], &xi_d[k]));
            }
            j += 0.5 * (sq_u(&traj.u[n], u_f) + sq_xi(&traj.xi[n], xi_f));
            j + 0.5 * control_inner(ControlSpace::HMinus1, control, control, dt, cg)?
        }
        CostSpec::Assimilation {
            u_m,
            xi_m,
            u_mf,
            xi_mf,
        } => {
            let mut j = 0.0;
            for k in 0..=n {
                j += 0.5 * c[k] * (sq_u(&traj.u[k], &u_m[k]) + sq_xi(&traj.xi[k], &xi_m[k]));
            }
            j += 0.5 * (sq_u(&traj.u[n], u_mf) + sq_xi(&traj.xi[n], xi_mf));
            j + 0.5 * control_inner(ControlSpace::InitialL2, control, control, dt, cg)?
        }
        CostSpec::General(gc) => {
            let mut j = 0.0;
            for k in 0..=n {
                let t = time.t(k);
                j += c[k] * (gc.g(t, &traj.u[k]) + gc.h(t, &traj.xi[k]));
            }
            j + control.fields().iter().map(|v| dt * gc.l(v)).sum::<f64>()
        }
    };
    if !j.is_finite() {
        return Err(Error::NonFinite("cost".into()));
    }
    Ok(j)
}

/// Reduced gradient together with the solves it came from.
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub cost: f64,
    pub traj: StateTrajectory,
    pub sources: AdjointSources,
    pub adjoint: AdjointTrajectory,
    /// Riesz representative in the control geometry of the spec.
    pub gradient: ControlTrajectory,
    /// L2 pairing density: `dJ(U) V = sum dt <density_n, V_n>` (distributed) or
    /// `<density, V>` (initial).
    pub density: ControlTrajectory,
    pub space: ControlSpace,
}

impl GradientResult {
    /// `dJ(U) V` from the pairing density.
    pub fn directional_derivative(&self, v: &ControlTrajectory) -> Result<f64> {
        self.density.check_compatible(v)?;
        let dt = self.traj.time.dt();
        let w = if self.space == ControlSpace::InitialL2 {
            1.0
        } else {
            dt
        };
        Ok(self
            .density
            .fields()
            .iter()
            .zip(v.fields())
            .map(|(a, b)| w * a.inner(b))
            .sum())
    }

    /// Norm of the gradient in the control geometry.
    pub fn norm(&self) -> f64 {
        let dt = self.traj.time.dt();
        let w = if self.space == ControlSpace::InitialL2 {
            1.0
        } else {
            dt
        };
        self.density
            .fields()
            .iter()
            .zip(self.gradient.fields())
            .map(|(a, b)| w * a.inner(b))
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }
}

/// Forward solve, adjoint solve and gradient assembly at `control`.
pub fn reduced_gradient(
    model: &Model,
    control: &ControlTrajectory,
    spec: &CostSpec,
) -> Result<GradientResult> {
    spec.check_control(control)?;
    let traj = solve_forward(model, control)?;
    let cost = eval_cost(&traj, control, spec, &model.cg)?;
    let sources = spec.adjoint_sources(&traj)?;
    let adjoint = solve_adjoint(model, &traj, &sources, model.mode)?;
    let space = spec.space();
    let (gradient, density) = match (control, spec) {
        (ControlTrajectory::Initial(u0), _) => {
            let mut g = u0.add(&adjoint.p[0]);
            g.enforce_dirichlet();
            (ControlTrajectory::Initial(g.clone()), ControlTrajectory::Initial(g))
        }
        (ControlTrajectory::Distributed(c), CostSpec::General(gc)) => {
            let g: Vec<VectorField> = c
                .iter()
                .zip(&adjoint.stage)
                .map(|(u, y)| {
                    let mut v = gc.l_u(u).add(y);
                    v.enforce_dirichlet();
                    v
                })
                .collect();
            (
                ControlTrajectory::Distributed(g.clone()),
                ControlTrajectory::Distributed(g),
            )
        }
        (ControlTrajectory::Distributed(c), _) => {
            let mut grad = Vec::with_capacity(c.len());
            let mut dens = Vec::with_capacity(c.len());
            for (u, y) in c.iter().zip(&adjoint.stage) {
                let mut g = u.sub(&laplacian(y));
                g.enforce_dirichlet();
                let mut d = poisson_solve(u, &model.cg)?.add(y);
                d.enforce_dirichlet();
                grad.push(g);
                dens.push(d);
            }
            (
                ControlTrajectory::Distributed(grad),
                ControlTrajectory::Distributed(dens),
            )
        }
    };
    Ok(GradientResult {
        cost,
        traj,
        sources,
        adjoint,
        gradient,
        density,
        space,
    })
}

/// Pontryagin residual in absolute terms and relative to the larger of the
/// control norm and the norm of its adjoint counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PontryaginResidual {
    pub absolute: f64,
    pub relative: f64,
}

/// Residual of the minimum principle:
/// `U = lap p` (H^-1 costs), `l_U(U) = -p` (general cost), `U_0 = -p(0)` (assimilation).
pub fn pontryagin_residual(
    control: &ControlTrajectory,
    adjoint: &AdjointTrajectory,
    spec: &CostSpec,
    cg: &CgSettings,
) -> Result<PontryaginResidual> {
    spec.check_control(control)?;
    let dt = adjoint.time.dt();
    let space = spec.space();
    let (lhs, rhs) = match (control, spec) {
        (ControlTrajectory::Initial(u0), _) => (
            ControlTrajectory::Initial(u0.clone()),
            ControlTrajectory::Initial(adjoint.p[0].scaled(-1.0)),
        ),
        (ControlTrajectory::Distributed(c), CostSpec::General(gc)) => (
            ControlTrajectory::Distributed(c.iter().map(|u| gc.l_u(u)).collect()),
            ControlTrajectory::Distributed(adjoint.stage.iter().map(|y| y.scaled(-1.0)).collect()),
        ),
        (ControlTrajectory::Distributed(c), _) => (
            ControlTrajectory::Distributed(c.clone()),
            ControlTrajectory::Distributed(adjoint.stage.iter().map(laplacian).collect()),
        ),
    };
    let mut diff = lhs.clone();
    diff.axpy(-1.0, &rhs)?;
    for v in diff.fields_mut() {
        v.enforce_dirichlet();
    }
    let absolute = control_norm(space, &diff, dt, cg)?;
    let scale = control_norm(space, &lhs, dt, cg)?.max(control_norm(space, &rhs, dt, cg)?);
    let relative = if scale > 0.0 { absolute / scale } else { 0.0 };
    Ok(PontryaginResidual { absolute, relative })
}

/// Per-time Hamiltonian `l(W) + <p, W>` with the control norm of the spec.
pub fn hamiltonian_value(
    spec: &CostSpec,
    w: &VectorField,
    p: &VectorField,
    cg: &CgSettings,
) -> Result<f64> {
    let l = match spec {
        CostSpec::Tracking { .. } | CostSpec::Dissipation { .. } => {
            0.5 * poisson_solve(w, cg)?.inner(w)
        }
        CostSpec::Assimilation { .. } => 0.5 * w.inner(w),
        CostSpec::General(gc) => gc.l(w),
    };
    Ok(l + p.inner(w))
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianReport {
    /// `min (H(W) - H(U*))` over all samples.
    pub min_gap: f64,
    pub samples: usize,
    pub times: Vec<usize>,
}

/// Spot check of the minimum condition `H(U*(t)) <= H(W)` with `m` random
/// candidates `W` at up to `max_times` evenly spaced steps. Candidates are
/// perturbations of `U*` with magnitudes spread over four decades.
pub fn hamiltonian_gap(
    control: &ControlTrajectory,
    adjoint: &AdjointTrajectory,
    spec: &CostSpec,
    m: usize,
    max_times: usize,
    seed: u64,
    cg: &CgSettings,
) -> Result<HamiltonianReport> {
    if m == 0 || max_times == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    spec.check_control(control)?;
    let fields = control.fields();
    let pairing: Vec<&VectorField> = match control {
        ControlTrajectory::Initial(_) => vec![&adjoint.p[0]],
        ControlTrajectory::Distributed(_) => adjoint.stage.iter().collect(),
    };
    let nt = fields.len();
    let times: Vec<usize> = if nt <= max_times {
        (0..nt).collect()
    } else {
        (0..max_times).map(|k| k * (nt - 1) / (max_times - 1).max(1)).collect()
    };
    let grid = fields[0].grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(times.len() * m);
    for &n in &times {
        let scale = fields[n].max_abs().max(pairing[n].max_abs()).max(1e-3);
        for _ in 0..m {
            let amp = scale * 10f64.powf(rng.gen_range(-4.0..0.0));
            let mut w = VectorField::zeros(grid);
            for k in 0..grid.len() {
                w.comp1[k] = rng.gen_range(-1.0..1.0);
                w.comp2[k] = rng.gen_range(-1.0..1.0);
            }
            w.enforce_dirichlet();
            let mut cand = fields[n].clone();
            cand.axpy(amp / w.max_abs().max(f64::MIN_POSITIVE), &w);
            jobs.push((n, cand));
        }
    }
    let base: Vec<f64> = times
        .iter()
        .map(|&n| hamiltonian_value(spec, &fields[n], pairing[n], cg))
        .collect::<Result<_>>()?;
    let base_of = |n: usize| base[times.iter().position(|&t| t == n).unwrap_or(0)];
    let gaps: Vec<f64> = jobs
        .par_iter()
        .map(|(n, w)| hamiltonian_value(spec, w, pairing[*n], cg).map(|h| h - base_of(*n)))
        .collect::<Result<_>>()?;
    Ok(HamiltonianReport {
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        samples: gaps.len(),
        times,
    })
}

/// Settings of the second-order scan over `theta in [0, 1]^4`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThetaScanSettings {
    /// Levels per coordinate.
    pub levels: usize,
    /// Number of tuples kept by latin-hypercube thinning.
    pub samples: usize,
    pub seed: u64,
}

impl Default for ThetaScanSettings {
    fn default() -> Self {
        Self {
            levels: 11,
            samples: 500,
            seed: 0,
        }
    }
}

impl ThetaScanSettings {
    /// Tuples of level indices; the full tensor grid when it is small enough.
    pub fn tuples(&self) -> Vec<[f64; 4]> {
        let l = self.levels.max(2);
        let level = |i: usize| i as f64 / (l - 1) as f64;
        let full = l.pow(4);
        if full <= self.samples {
            let mut out = Vec::with_capacity(full);
            for a in 0..l {
                for b in 0..l {
                    for c in 0..l {
                        for d in 0..l {
                            out.push([level(a), level(b), level(c), level(d)]);
                        }
                    }
                }
            }
            return out;
        }
        let m = self.samples.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut cols: Vec<Vec<usize>> = Vec::with_capacity(4);
        for _ in 0..4 {
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rng);
            cols.push(perm);
        }
        (0..m)
            .map(|k| {
                let mut t = [0.0; 4];
                for (d, col) in cols.iter().enumerate() {
                    t[d] = level((col[k] * l / m).min(l - 1));
                }
                t
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondOrderReport {
    pub tuples: usize,
    pub min_s: f64,
    pub max_s: f64,
    /// Sum of the three curvature terms at `theta = 0`.
    pub s3: f64,
    /// `s3 - (4 r / lambda) int |u|_{L4}^2 |p|`.
    pub stronger: f64,
    pub sup_p: f64,
    /// `lambda / (4 r)`, infinite when `r = 0`.
    pub threshold: f64,
    pub pointwise_satisfied: bool,
    pub vacuous: bool,
}

/// Second-order scan for the general cost around the optimum `(traj, control,
/// adjoint)` along the feasible difference generated by `delta`.
pub fn second_order_scan(
    model: &Model,
    spec: &CostSpec,
    control: &[VectorField],
    traj: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    delta: &[VectorField],
    settings: &ThetaScanSettings,
) -> Result<SecondOrderReport> {
    let gc = match spec {
        CostSpec::General(gc) => gc.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "second-order scan needs a general cost".into(),
            ))
        }
    };
    if delta.iter().all(|v| v.max_abs() == 0.0) {
        return Err(Error::InvalidArgument("perturbation must be nonzero".into()));
    }
    let pert: Vec<VectorField> = control.iter().zip(delta).map(|(a, b)| a.add(b)).collect();
    let other = solve_forward(model, &ControlTrajectory::Distributed(pert))?;
    let du: Vec<VectorField> = other.u.iter().zip(&traj.u).map(|(a, b)| a.sub(b)).collect();
    let dxi: Vec<ScalarField> = other.xi.iter().zip(&traj.xi).map(|(a, b)| a.sub(b)).collect();
    let time = traj.time;
    let dt = time.dt();
    let c = time.trapezoid_weights();
    let n = time.steps;
    let gamma = model.bathy.gamma(model.params.r);

    let s_terms = |th: &[f64; 4]| -> f64 {
        let mut s = 0.0;
        for k in 0..=n {
            let t = time.t(k);
            let ua = traj.u[k].add(&du[k].scaled(th[0]));
            s += c[k] * gc.g_uu(t, &ua, &du[k]).inner(&du[k]);
            let xa = traj.xi[k].add(&dxi[k].scaled(th[1]));
            s += c[k] * gc.h_xixi(t, &xa, &dxi[k]).inner(&dxi[k]);
        }
        for k in 0..n {
            let ua = control[k].add(&delta[k].scaled(th[2]));
            s += dt * gc.l_uu(&ua, &delta[k]).inner(&delta[k]);
        }
        s
    };
    let friction = |th4: f64| -> f64 {
        let mut s = 0.0;
        for k in 0..=n {
            let w0 = &model.w0.snapshots[k];
            let u = &traj.u[k];
            let d = &du[k];
            let p = &adjoint.p[k];
            let mut f = ScalarField::zeros(u.grid);
            for i in 0..u.grid.len() {
                let z1 = u.comp1[i] + w0.comp1[i];
                let z2 = u.comp2[i] + w0.comp2[i];
                let a = (z1 + th4 * d.comp1[i]).hypot(z2 + th4 * d.comp2[i]);
                let b = z1.hypot(z2);
                f.values[i] = gamma.values[i]
                    * (a - b)
                    * (d.comp1[i] * p.comp1[i] + d.comp2[i] * p.comp2[i]);
            }
            s += c[k] * f.values.iter().zip(u.grid.weights()).map(|(v, w)| v * w).sum::<f64>();
        }
        s
    };
    let tuples = settings.tuples();
    let values: Vec<f64> = tuples
        .par_iter()
        .map(|th| s_terms(th) - 4.0 * friction(th[3]))
        .collect();
    let s3 = s_terms(&[0.0; 4]);
    let r = model.params.r;
    let lambda = model.bathy.lambda_min;
    let coupling: f64 = (0..=n)
        .map(|k| {
            let l4 = l4_norm(&du[k]);
            c[k] * l4 * l4 * l2_norm(&adjoint.p[k])
        })
        .sum();
    let stronger = s3 - 4.0 * r / lambda * coupling;
    let sup_p = adjoint.p.iter().map(l2_norm).fold(0.0, f64::max);
    let vacuous = r == 0.0;
    let threshold = if vacuous {
        f64::INFINITY
    } else {
        lambda / (4.0 * r)
    };
    Ok(SecondOrderReport {
        tuples: values.len(),
        min_s: values.iter().copied().fold(f64::INFINITY, f64::min),
        max_s: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        s3,
        stronger,
        sup_p,
        threshold,
        pointwise_satisfied: vacuous || sup_p <= threshold,
        vacuous,
    })
}
