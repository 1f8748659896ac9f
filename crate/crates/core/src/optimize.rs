//! Descent loops for distributed and initial-data controls, and the
//! small-time uniqueness horizon.

use serde::{Deserialize, Serialize};

use crate::cost_grad::{
    control_norm, eval_cost, pontryagin_residual, reduced_gradient, ControlSpace,
    ControlTrajectory, CostSpec, GradientResult,
};
use crate::error::{Error, Result};
use crate::forward::{
    running_trapezoid, solve_forward, Model, StateTrajectory, TimeGrid,
};
use crate::grid::{l4_norm, laplacian, VectorField};
use crate::model::{BathyConstants, BoundaryFlow, PhysicalParams};
use crate::tangent_adjoint::AdjointTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    SteepestDescent,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSettings {
    pub max_iters: usize,
    /// Relative tolerance on the Pontryagin residual and on the gradient norm.
    pub tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    /// Relaxation of the fixed-point iteration.
    pub relaxation: f64,
    pub strategy: Strategy,
    pub max_backtracks: usize,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            relaxation: 0.5,
            strategy: Strategy::SteepestDescent,
            max_backtracks: 60,
        }
    }
}

impl OptimizeSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo constant must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial step must be positive");
        }
        if !(self.tol >= 0.0) {
            return bad("tolerance must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub residual: f64,
    /// Step that produced this iterate (0 for the initial one).
    pub step: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OptimizeTrace {
    pub entries: Vec<TraceEntry>,
}

impl OptimizeTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.cost).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].cost <= w[0].cost)
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIters,
    LineSearchFailed,
    /// Cost and gradient stopped improving at the rounding level.
    Stagnated,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub control: ControlTrajectory,
    pub traj: StateTrajectory,
    pub adjoint: AdjointTrajectory,
    pub trace: OptimizeTrace,
    pub status: Status,
}

fn fixed_point_target(
    control: &ControlTrajectory,
    res: &GradientResult,
    spec: &CostSpec,
) -> ControlTrajectory {
    match (control, spec.space()) {
        (ControlTrajectory::Initial(_), _) => {
            ControlTrajectory::Initial(res.adjoint.p[0].scaled(-1.0))
        }
        (_, ControlSpace::HMinus1) => {
            ControlTrajectory::Distributed(res.adjoint.stage.iter().map(laplacian).collect())
        }
        _ => ControlTrajectory::Distributed(
            res.adjoint.stage.iter().map(|y| y.scaled(-1.0)).collect(),
        ),
    }
}

fn clean(mut c: ControlTrajectory) -> ControlTrajectory {
    if let ControlTrajectory::Distributed(v) = &mut c {
        v.iter_mut().for_each(VectorField::enforce_dirichlet);
    } else if let ControlTrajectory::Initial(v) = &mut c {
        v.enforce_dirichlet();
    }
    c
}

/// Minimizes the reduced cost over the control. Steepest descent works in
/// the Riesz geometry of the spec with Armijo backtracking; the fixed-point
/// strategy relaxes towards the control given by the minimum principle (for
/// the general cost this assumes `l_U(U) = U`).
pub fn minimize_control(
    model: &Model,
    spec: &CostSpec,
    init: ControlTrajectory,
    settings: &OptimizeSettings,
) -> Result<OptimizeOutcome> {
    settings.validate()?;
    let mut control = init;
    let mut res = reduced_gradient(model, &control, spec)?;
    let g0 = res.norm();
    let mut trace = OptimizeTrace::default();
    let mut step_taken = 0.0;
    let mut status = Status::MaxIters;
    let mut flat_step = false;
    let mut g_prev = f64::INFINITY;
    for iter in 0..=settings.max_iters {
        let g = res.norm();
        let resid = pontryagin_residual(&control, &res.adjoint, spec, &model.cg)?;
        trace.entries.push(TraceEntry {
            iter,
            cost: res.cost,
            grad_norm: g,
            residual: resid.relative,
            step: step_taken,
        });
        if !res.cost.is_finite() {
            return Err(Error::NonFinite("cost".into()));
        }
        if g == 0.0 || resid.relative <= settings.tol || g <= settings.tol * g0 {
            status = Status::Converged;
            break;
        }
        // A step that leaves the cost unchanged only counts while it still
        // shrinks the gradient.
        if flat_step && g > 0.9 * g_prev {
            status = Status::Stagnated;
            break;
        }
        g_prev = g;
        flat_step = false;
        if iter == settings.max_iters {
            break;
        }
        match settings.strategy {
            Strategy::SteepestDescent => {
                let mut s = settings.initial_step;
                let mut accepted = None;
                for _ in 0..settings.max_backtracks {
                    let mut trial = control.clone();
                    trial.axpy(-s, &res.gradient)?;
                    let trial = clean(trial);
                    if let Ok(traj) = solve_forward(model, &trial) {
                        if let Ok(j) = eval_cost(&traj, &trial, spec, &model.cg) {
                            if j <= res.cost - settings.armijo_c * s * g * g {
                                flat_step = j >= res.cost;
                                accepted = Some(trial);
                                break;
                            }
                        }
                    }
                    s *= settings.backtrack;
                }
                match accepted {
                    Some(c) => {
                        control = c;
                        step_taken = s;
                    }
                    None => {
                        status = Status::LineSearchFailed;
                        break;
                    }
                }
            }
            Strategy::FixedPoint => {
                let target = fixed_point_target(&control, &res, spec);
                let mut next = control.scaled(1.0 - settings.relaxation);
                next.axpy(settings.relaxation, &target)?;
                control = clean(next);
                step_taken = settings.relaxation;
            }
        }
        res = reduced_gradient(model, &control, spec)?;
    }
    Ok(OptimizeOutcome {
        control,
        traj: res.traj,
        adjoint: res.adjoint,
        trace,
        status,
    })
}

/// Recovers the initial velocity from measurements; the initial elevation of
/// the model stays fixed.
pub fn assimilate_initial(
    model: &Model,
    spec: &CostSpec,
    init: VectorField,
    settings: &OptimizeSettings,
) -> Result<OptimizeOutcome> {
    if !matches!(spec, CostSpec::Assimilation { .. }) {
        return Err(Error::InvalidArgument(
            "initial-data assimilation needs an assimilation cost".into(),
        ));
    }
    minimize_control(model, spec, ControlTrajectory::Initial(init), settings)
}

/// Distance between two controls relative to the larger norm.
pub fn control_distance(
    space: ControlSpace,
    a: &ControlTrajectory,
    b: &ControlTrajectory,
    dt: f64,
    cg: &crate::grid::CgSettings,
) -> Result<f64> {
    let mut d = a.clone();
    d.axpy(-1.0, b)?;
    let scale = control_norm(space, a, dt, cg)?.max(control_norm(space, b, dt, cg)?);
    let n = control_norm(space, &d, dt, cg)?;
    Ok(if scale > 0.0 { n / scale } else { n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessHorizon {
    pub t_u: f64,
    pub node: usize,
    /// Exponent coefficient `2[(mu^2 + 2)(1/alpha + 1) + 4/alpha + M]`.
    pub rate: f64,
    pub threshold: f64,
}

/// Largest time node `T_u` at which
/// `exp(2 T [(mu^2 + 2)(1/alpha + 1) + 4/alpha + M]) exp(int_0^T |u + w0|_{L4}^4) < alpha^2 / 8`,
/// or `None` when the inequality already fails at `t = 0`.
pub fn uniqueness_horizon(
    u: &[VectorField],
    w0: &BoundaryFlow,
    params: &PhysicalParams,
    consts: &BathyConstants,
    time: TimeGrid,
) -> Result<Option<UniquenessHorizon>> {
    if u.len() != time.steps + 1 || w0.snapshots.len() != time.steps + 1 {
        return Err(Error::TimeGridMismatch {
            expected: time.steps + 1,
            found: u.len().min(w0.snapshots.len()),
        });
    }
    let a = params.alpha;
    let mu2 = consts.mu_max * consts.mu_max;
    let rate = 2.0 * ((mu2 + 2.0) * (1.0 / a + 1.0) + 4.0 / a + consts.m_grad);
    let threshold = a * a / 8.0;
    let l4: Vec<f64> = u
        .iter()
        .zip(&w0.snapshots)
        .map(|(v, w)| l4_norm(&v.add(w)).powi(4))
        .collect();
    let integral = running_trapezoid(&l4, time.dt());
    let mut last = None;
    for k in 0..=time.steps {
        let lhs_log = rate * time.t(k) + integral[k];
        if lhs_log < threshold.ln() {
            last = Some(k);
        } else {
            break;
        }
    }
    Ok(last.map(|k| UniquenessHorizon {
        t_u: time.t(k),
        node: k,
        rate,
        threshold,
    }))
}
