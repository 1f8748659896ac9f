//! Time integration of the controlled state system and its energy monitors.
//!
//! One step of the forward-backward IMEX scheme:
//!
//! ```text
//! (I - dt alpha lap) u' = u + dt (-beta k x u - B(u) - grad xi + f + U)
//! xi' = xi - dt div(h u')
//! ```

use serde::{Deserialize, Serialize};

use crate::cost_grad::ControlTrajectory;
use crate::error::{Error, Result};
use crate::grid::{
    dirichlet_energy, divergence_unchecked, gradient, hminus1_norm, l4_norm, rotate,
    solve_shifted, CgSettings, GridSpec, ScalarField, VectorField,
};
use crate::model::{
    b_apply, stability_k, Bathymetry, BoundaryFlow, ForcingTrajectory, JacobianMode,
    PhysicalParams,
};

/// Default CFL safety factor.
pub const DEFAULT_CFL_SAFETY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        Ok(Self { t_final, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Trapezoid weights over the nodes `0..=steps`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.steps, self.dt())
    }
}

/// Trapezoid weights for `n + 1` nodes with spacing `dt`.
pub(crate) fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| if k == 0 || k == n { 0.5 * dt } else { dt })
        .collect()
}

/// Velocity and elevation snapshots at every time node.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub time: TimeGrid,
    pub u: Vec<VectorField>,
    pub xi: Vec<ScalarField>,
}

impl StateTrajectory {
    pub fn new(time: TimeGrid, u: Vec<VectorField>, xi: Vec<ScalarField>) -> Result<Self> {
        let expected = time.steps + 1;
        if u.len() != expected || xi.len() != expected {
            return Err(Error::TimeGridMismatch {
                expected,
                found: if u.len() != expected { u.len() } else { xi.len() },
            });
        }
        for (a, b) in u.iter().zip(&xi) {
            u[0].grid.check_same(&a.grid)?;
            u[0].grid.check_same(&b.grid)?;
            a.check_dirichlet()?;
        }
        Ok(Self { time, u, xi })
    }

    pub fn zeros(grid: GridSpec, time: TimeGrid) -> Self {
        Self {
            time,
            u: vec![VectorField::zeros(grid); time.steps + 1],
            xi: vec![ScalarField::zeros(grid); time.steps + 1],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.u[0].grid
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite()) && self.xi.iter().all(|v| v.is_finite())
    }

    /// Difference `self - other`, snapshot by snapshot.
    pub fn sub(&self, other: &StateTrajectory) -> StateTrajectory {
        StateTrajectory {
            time: self.time,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a.sub(b)).collect(),
            xi: self.xi.iter().zip(&other.xi).map(|(a, b)| a.sub(b)).collect(),
        }
    }
}

/// Everything the solvers need besides the control: parameters, depth, time
/// grid, boundary flow, forcing, initial state and solver controls.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: PhysicalParams,
    pub bathy: Bathymetry,
    pub time: TimeGrid,
    pub w0: BoundaryFlow,
    pub forcing: ForcingTrajectory,
    pub u0: VectorField,
    pub xi0: ScalarField,
    pub mode: JacobianMode,
    pub cg: CgSettings,
}

impl Model {
    /// Builds and validates a model with zero initial state, zero boundary
    /// flow and zero forcing.
    pub fn quiescent(params: PhysicalParams, bathy: Bathymetry, time: TimeGrid) -> Result<Self> {
        let grid = bathy.grid();
        let m = Self {
            params,
            w0: BoundaryFlow::zero(grid, time),
            forcing: ForcingTrajectory::zero(grid, time),
            u0: VectorField::zeros(grid),
            xi0: ScalarField::zeros(grid),
            bathy,
            time,
            mode: JacobianMode::Exact,
            cg: CgSettings::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn grid(&self) -> GridSpec {
        self.bathy.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_safety(DEFAULT_CFL_SAFETY)
    }

    pub fn validate_with_safety(&self, safety: f64) -> Result<()> {
        self.params.validate()?;
        let g = self.grid();
        let expected = self.time.steps + 1;
        for (name, len) in [
            ("boundary flow", self.w0.snapshots.len()),
            ("forcing", self.forcing.snapshots.len()),
        ] {
            if len != expected {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} snapshots, time grid needs {expected}"
                )));
            }
        }
        if self.w0.time != self.time || self.forcing.time != self.time {
            return Err(Error::InvalidArgument(
                "boundary flow and forcing must share the solver time grid".into(),
            ));
        }
        for s in self.w0.snapshots.iter().chain(&self.forcing.snapshots) {
            g.check_same(&s.grid)?;
        }
        g.check_same(&self.u0.grid)?;
        g.check_same(&self.xi0.grid)?;
        self.u0.check_dirichlet()?;
        let bound = cfl_max_dt(&g, &self.bathy, safety)?;
        if self.time.dt() > bound {
            return Err(Error::CflViolation {
                dt: self.time.dt(),
                bound,
            });
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: JacobianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_cg(mut self, cg: CgSettings) -> Self {
        self.cg = cg;
        self
    }
}

/// `safety * min(dx, dy) / sqrt(2 mu)`.
pub fn cfl_max_dt(grid: &GridSpec, bathy: &Bathymetry, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CFL safety factor must lie in (0, 1], got {safety}"
        )));
    }
    Ok(safety * grid.dx().min(grid.dy()) / (2.0 * bathy.mu_max).sqrt())
}

/// One IMEX step from `(u, xi)` at `t_n` to `t_{n+1}`.
#[allow(clippy::too_many_arguments)]
pub fn step_forward(
    u: &VectorField,
    xi: &ScalarField,
    control: Option<&VectorField>,
    forcing: &VectorField,
    params: &PhysicalParams,
    bathy: &Bathymetry,
    w0: &VectorField,
    dt: f64,
    cg: &CgSettings,
) -> Result<(VectorField, ScalarField)> {
    let grid = u.grid;
    let mut rhs = rotate(u).scaled(-params.beta);
    rhs.axpy(-1.0, &b_apply(bathy, params.r, u, w0));
    rhs.axpy(-1.0, &gradient(xi));
    rhs.axpy(1.0, forcing);
    if let Some(c) = control {
        rhs.axpy(1.0, c);
    }
    let mut rhs = u.add(&rhs.scaled(dt));
    if !rhs.is_finite() {
        return Err(Error::NonFinite("forward step".into()));
    }
    rhs.enforce_dirichlet();
    let shift = dt * params.alpha;
    let c1 = solve_shifted(&grid, 1.0, shift, &rhs.comp1, Some(&u.comp1), cg)?;
    let c2 = solve_shifted(&grid, 1.0, shift, &rhs.comp2, Some(&u.comp2), cg)?;
    let u_new = VectorField {
        grid,
        comp1: c1,
        comp2: c2,
    };
    let mut xi_new = xi.clone();
    xi_new.axpy(-dt, &divergence_unchecked(&u_new.mul_scalar(&bathy.h)));
    Ok((u_new, xi_new))
}

/// Runs the forward solver. A distributed control supplies one field per
/// step; an initial-data control replaces the model's initial velocity.
pub fn solve_forward(model: &Model, control: &ControlTrajectory) -> Result<StateTrajectory> {
    let (u0, dist) = match control {
        ControlTrajectory::Distributed(c) => {
            if c.len() != model.time.steps {
                return Err(Error::TimeGridMismatch {
                    expected: model.time.steps,
                    found: c.len(),
                });
            }
            (model.u0.clone(), Some(c.as_slice()))
        }
        ControlTrajectory::Initial(v) => {
            v.check_dirichlet()?;
            (v.clone(), None)
        }
    };
    solve_forward_raw(model, u0, model.xi0.clone(), dist)
}

/// Forward solve from explicit initial data with an optional distributed control.
pub fn solve_forward_raw(
    model: &Model,
    u0: VectorField,
    xi0: ScalarField,
    control: Option<&[VectorField]>,
) -> Result<StateTrajectory> {
    u0.check_dirichlet()?;
    let n_steps = model.time.steps;
    let dt = model.time.dt();
    let mut u = Vec::with_capacity(n_steps + 1);
    let mut xi = Vec::with_capacity(n_steps + 1);
    u.push(u0);
    xi.push(xi0);
    for n in 0..n_steps {
        let (un, xn) = step_forward(
            &u[n],
            &xi[n],
            control.map(|c| &c[n]),
            &model.forcing.snapshots[n],
            &model.params,
            &model.bathy,
            &model.w0.snapshots[n],
            dt,
            &model.cg,
        )?;
        u.push(un);
        xi.push(xn);
    }
    Ok(StateTrajectory {
        time: model.time,
        u,
        xi,
    })
}

fn energy(u: &VectorField, xi: &ScalarField, h: &ScalarField) -> f64 {
    u.mul_scalar(h).inner(u) + xi.inner(xi)
}

/// Discrete residual of `d/dt(|sqrt(h) u|^2 + |xi|^2) + 2 <F(u), h u> = 0`
/// with `F(u) = A u + B(u) - f`, using centered time differences at the
/// interior time nodes. The trajectory must come from the uncontrolled system.
pub fn energy_equality_residual(traj: &StateTrajectory, model: &Model) -> Result<Vec<f64>> {
    let n = traj.time.steps;
    let dt = traj.time.dt();
    let h = &model.bathy.h;
    let e: Vec<f64> = (0..=n).map(|k| energy(&traj.u[k], &traj.xi[k], h)).collect();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let u = &traj.u[k];
        let mut f = crate::model::a_apply(&model.params, u)?;
        f.axpy(
            1.0,
            &b_apply(&model.bathy, model.params.r, u, &model.w0.snapshots[k]),
        );
        f.axpy(-1.0, &model.forcing.snapshots[k]);
        let work = 2.0 * f.inner(&u.mul_scalar(h));
        out.push((e[k + 1] - e[k - 1]) / (2.0 * dt) + work);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy residual".into()));
    }
    Ok(out)
}

/// Largest absolute entry of a residual series.
pub fn max_abs(series: &[f64]) -> f64 {
    series.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Running trapezoid integral of a node series: `out[n] = int_0^{t_n}`.
pub(crate) fn running_trapezoid(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..values.len() {
        acc += 0.5 * dt * (values[k - 1] + values[k]);
        out.push(acc);
    }
    out
}

/// Running rectangle integral of a per-step series: `out[n] = sum_{k<n} dt v_k`.
pub(crate) fn running_rectangle(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for v in values {
        acc += dt * v;
        out.push(acc);
    }
    out
}

/// Energy-estimate monitor. At each node returns `RHS - LHS` with
///
/// ```text
/// LHS = |u|^2 + |xi|^2 + alpha int_0^t |grad u|^2
/// RHS = (|u0|^2 + |xi0|^2 + (r/lambda) int |w0|_4^4 + int |f|_{-1}^2 + int |U|_{-1}^2) e^{K t}
/// ```
pub fn energy_bound_check(
    traj: &StateTrajectory,
    model: &Model,
    control: Option<&[VectorField]>,
) -> Result<Vec<f64>> {
    let n = traj.time.steps;
    let dt = traj.time.dt();
    for f in &model.forcing.snapshots {
        if !f.is_finite() {
            return Err(Error::NonFinite("forcing".into()));
        }
    }
    if !traj.is_finite() {
        return Err(Error::NonFinite("state trajectory".into()));
    }
    let p = &model.params;
    let consts = model.bathy.constants();
    let k_const = stability_k(p, &consts);
    let grad2: Vec<f64> = traj.u.iter().map(dirichlet_energy).collect();
    let w4: Vec<f64> = model
        .w0
        .snapshots
        .iter()
        .map(|w| l4_norm(w).powi(4))
        .collect();
    let f2 = model
        .forcing
        .snapshots
        .iter()
        .map(|f| hminus1_norm(f, &model.cg).map(|v| v * v))
        .collect::<Result<Vec<f64>>>()?;
    let u2 = match control {
        Some(c) => c
            .iter()
            .map(|f| hminus1_norm(f, &model.cg).map(|v| v * v))
            .collect::<Result<Vec<f64>>>()?,
        None => vec![0.0; n],
    };
    let grad_int = running_trapezoid(&grad2, dt);
    let w_int = running_trapezoid(&w4, dt);
    let f_int = running_trapezoid(&f2, dt);
    let u_int = running_rectangle(&u2, dt);
    let init = traj.u[0].inner(&traj.u[0]) + traj.xi[0].inner(&traj.xi[0]);
    let mut margins = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let lhs = traj.u[k].inner(&traj.u[k]) + traj.xi[k].inner(&traj.xi[k]) + p.alpha * grad_int[k];
        let bracket = init + p.r / consts.lambda_min * w_int[k] + f_int[k] + u_int[k];
        let rhs = bracket * (k_const * traj.time.t(k)).exp();
        margins.push(rhs - lhs);
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("energy bound".into()));
    }
    Ok(margins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_norm;
    use crate::model::assemble_forcing;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    #[test]
    fn time_grid_basics() {
        let t = TimeGrid::new(0.5, 4).unwrap();
        assert_eq!(t.dt(), 0.125);
        assert_eq!(t.trapezoid_weights(), vec![0.0625, 0.125, 0.125, 0.125, 0.0625]);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn cfl_examples() {
        let g = GridSpec::unit_square(65).unwrap();
        let b1 = Bathymetry::constant(g, 1.0).unwrap();
        let d = cfl_max_dt(&g, &b1, 0.5).unwrap();
        assert!((d - 0.5 / 64.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((d - 0.005524).abs() < 1e-6);
        let b4 = Bathymetry::constant(g, 4.0).unwrap();
        assert!((cfl_max_dt(&g, &b4, 0.5).unwrap() - d / 2.0).abs() < 1e-15);
        let g = GridSpec::unit_square(11).unwrap();
        let b2 = Bathymetry::constant(g, 2.0).unwrap();
        assert!((cfl_max_dt(&g, &b2, 1.0).unwrap() - 0.05).abs() < 1e-15);
        assert!(cfl_max_dt(&g, &b2, 0.0).is_err());
    }

    #[test]
    fn model_rejects_cfl_violation() {
        let g = grid(33);
        let bathy = Bathymetry::constant(g, 1.0).unwrap();
        let t = TimeGrid::new(1.0, 10).unwrap();
        let p = PhysicalParams::new(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            Model::quiescent(p, bathy, t),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn zero_state_and_lake_at_rest_are_fixed_points() {
        let g = grid(9);
        let bathy = Bathymetry::new(ScalarField::sample(g, |x, _| 1.0 + x)).unwrap();
        let p = PhysicalParams::new(1.0, 0.5, 1.0).unwrap();
        let z = VectorField::zeros(g);
        let cg = CgSettings::default();
        let (u, xi) = step_forward(&z, &ScalarField::zeros(g), None, &z, &p, &bathy, &z, 0.01, &cg)
            .unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(xi.max_abs(), 0.0);
        let c = ScalarField::constant(g, 0.7);
        let (u, xi) = step_forward(&z, &c, None, &z, &p, &bathy, &z, 0.01, &cg).unwrap();
        assert!(u.max_abs() < 1e-14);
        assert!(xi.sub(&c).max_abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = grid(9);
        let t = TimeGrid::new(0.1, 8).unwrap();
        let m = Model::quiescent(
            PhysicalParams::new(1.0, 0.3, 1.0).unwrap(),
            Bathymetry::constant(g, 1.0).unwrap(),
            t,
        )
        .unwrap();
        let c = ControlTrajectory::zeros_distributed(g, t);
        let traj = solve_forward(&m, &c).unwrap();
        assert!(traj.u.iter().all(|u| u.max_abs() == 0.0));
        assert!(traj.xi.iter().all(|x| x.max_abs() == 0.0));
        let res = energy_equality_residual(&traj, &m).unwrap();
        assert_eq!(max_abs(&res), 0.0);
        let margins = energy_bound_check(&traj, &m, None).unwrap();
        assert!(margins.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_control_equals_initial_condition() {
        let g = grid(9);
        let t = TimeGrid::new(0.1, 8).unwrap();
        let mut m = Model::quiescent(
            PhysicalParams::new(1.0, 0.3, 1.0).unwrap(),
            Bathymetry::constant(g, 1.0).unwrap(),
            t,
        )
        .unwrap();
        let v = VectorField::sample_dirichlet(g, |x, y| (x * y, x - y));
        let a = solve_forward(&m, &ControlTrajectory::Initial(v.clone())).unwrap();
        m.u0 = v;
        let b = solve_forward(&m, &ControlTrajectory::zeros_distributed(g, t)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_forcing_is_flagged() {
        let g = grid(9);
        let t = TimeGrid::new(0.1, 4).unwrap();
        let mut m = Model::quiescent(
            PhysicalParams::new(1.0, 0.0, 0.0).unwrap(),
            Bathymetry::constant(g, 1.0).unwrap(),
            t,
        )
        .unwrap();
        let traj = StateTrajectory::zeros(g, t);
        m.forcing.snapshots[2].comp1[10] = f64::NAN;
        assert!(matches!(
            energy_bound_check(&traj, &m, None),
            Err(Error::NonFinite(_))
        ));
        assert!(solve_forward(&m, &ControlTrajectory::zeros_distributed(g, t)).is_err());
    }

    // Manufactured solution u = e^{-t} (s, s) with s = sin(pi x) sin(pi y),
    // xi = e^{-t} cos(pi x) cos(pi y), on constant depth with r = 0.
    fn mms_error(n: usize, steps: usize) -> f64 {
        let g = grid(n);
        let t_final = 0.2;
        let t = TimeGrid::new(t_final, steps).unwrap();
        let (alpha, beta, depth) = (0.5, 0.4, 1.0);
        let p = PhysicalParams::new(alpha, beta, 0.0).unwrap();
        let bathy = Bathymetry::constant(g, depth).unwrap();
        let exact_u = |tt: f64| {
            VectorField::sample_dirichlet(g, |x, y| {
                let s = (PI * x).sin() * (PI * y).sin() * (-tt).exp();
                (s, s)
            })
        };
        // xi_t + div u = 0 holds exactly for xi = e^{-t} div(s, s)
        let exact_xi = |tt: f64| {
            ScalarField::sample(g, |x, y| {
                (-tt).exp()
                    * PI
                    * ((PI * x).cos() * (PI * y).sin() + (PI * x).sin() * (PI * y).cos())
            })
        };
        let forcing: Vec<VectorField> = (0..=steps)
            .map(|k| {
                let tt = t.t(k);
                let e = (-tt).exp();
                VectorField::sample(g, |x, y| {
                    let s = (PI * x).sin() * (PI * y).sin();
                    let ut = -e * s;
                    let au = alpha * 2.0 * PI * PI * e * s;
                    let gx = PI * PI * e * ((PI * x).cos() * (PI * y).cos() - s);
                    let gy = gx;
                    // k x u = (-u2, u1)
                    (ut + au - beta * e * s + gx, ut + au + beta * e * s + gy)
                })
            })
            .collect();
        let mut m = Model::quiescent(p, bathy, t).unwrap();
        m.forcing = ForcingTrajectory::new(t, forcing).unwrap();
        m.u0 = exact_u(0.0);
        m.xi0 = exact_xi(0.0);
        m.cg = CgSettings::with_tol(1e-12);
        let traj = solve_forward(&m, &ControlTrajectory::zeros_distributed(g, t)).unwrap();
        let eu = traj.u[steps].sub(&exact_u(t_final));
        let exi = traj.xi[steps].sub(&exact_xi(t_final));
        (l2_norm(&eu).powi(2) + l2_norm(&exi).powi(2)).sqrt()
    }

    #[test]
    fn manufactured_solution_time_order() {
        // fine grid so that the temporal error dominates
        let e1 = mms_error(65, 20);
        let e2 = mms_error(65, 40);
        let order = (e1 / e2).log2();
        assert!(order > 0.8 && order < 1.3, "time order {order} ({e1}, {e2})");
    }

    #[test]
    fn manufactured_solution_space_convergence() {
        // dt proportional to dx^2 keeps the temporal error subordinate
        let e1 = mms_error(17, 16);
        let e2 = mms_error(33, 64);
        let order = (e1 / e2).log2();
        assert!(order > 1.4, "space order {order} ({e1}, {e2})");
    }

    #[test]
    fn linear_regime_superposition() {
        let g = grid(13);
        let t = TimeGrid::new(0.2, 10).unwrap();
        let bathy = Bathymetry::new(ScalarField::sample(g, |x, y| 1.0 + 0.5 * x * y)).unwrap();
        let mut m = Model::quiescent(PhysicalParams::new(1.0, 0.7, 0.0).unwrap(), bathy, t)
            .unwrap()
            .with_cg(CgSettings::with_tol(1e-13));
        m.forcing = ForcingTrajectory::new(t, vec![VectorField::constant(g, 0.2, -0.1); 11]).unwrap();
        let c1: Vec<_> = (0..10)
            .map(|k| VectorField::sample_dirichlet(g, |x, y| (x * y * k as f64, (x - y).sin())))
            .collect();
        let c2: Vec<_> = (0..10)
            .map(|k| VectorField::sample_dirichlet(g, |x, y| ((3.0 * x).cos(), y * k as f64)))
            .collect();
        let sum: Vec<_> = c1.iter().zip(&c2).map(|(a, b)| a.add(b)).collect();
        let zero = vec![VectorField::zeros(g); 10];
        let run = |c: &Vec<VectorField>| {
            solve_forward(&m, &ControlTrajectory::Distributed(c.clone())).unwrap()
        };
        let (s0, s1, s2, s12) = (run(&zero), run(&c1), run(&c2), run(&sum));
        for k in 0..=10 {
            let lhs = s12.u[k].sub(&s0.u[k]);
            let rhs = s1.u[k].sub(&s0.u[k]).add(&s2.u[k].sub(&s0.u[k]));
            let scale = lhs.max_abs().max(1e-30);
            assert!(lhs.sub(&rhs).max_abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn determinism() {
        let g = grid(11);
        let t = TimeGrid::new(0.1, 5).unwrap();
        let mut m = Model::quiescent(
            PhysicalParams::new(1.0, 0.5, 1.0).unwrap(),
            Bathymetry::constant(g, 1.0).unwrap(),
            t,
        )
        .unwrap();
        m.u0 = VectorField::sample_dirichlet(g, |x, y| (x * y, -x));
        let c = ControlTrajectory::zeros_distributed(g, t);
        let a = solve_forward(&m, &c).unwrap();
        let b = solve_forward(&m, &c).unwrap();
        assert!(a
            .u
            .iter()
            .zip(&b.u)
            .all(|(x, y)| x.comp1.iter().zip(&y.comp1).all(|(p, q)| p.to_bits() == q.to_bits())));
        assert!(a.u.iter().all(|u| u.is_dirichlet()));
    }

    fn energy_scenario(steps: usize, varying_depth: bool) -> (StateTrajectory, Model) {
        let g = grid(17);
        let t = TimeGrid::new(0.25, steps).unwrap();
        let h = if varying_depth {
            ScalarField::sample(g, |x, _| 1.0 + 0.5 * x)
        } else {
            ScalarField::constant(g, 1.0)
        };
        let bathy = Bathymetry::new(h).unwrap();
        let p = PhysicalParams::new(0.5, 0.5, 1.0).unwrap();
        let mut m = Model::quiescent(p, bathy, t).unwrap().with_cg(CgSettings::with_tol(1e-13));
        m.w0 = BoundaryFlow::uniform(g, t, 0.1, 0.05);
        let tide: Vec<_> = (0..=steps)
            .map(|k| {
                let tt = t.t(k);
                VectorField::sample(g, |x, y| ((PI * y).sin() * (2.0 * tt).cos(), 0.5 * x))
            })
            .collect();
        m.forcing = assemble_forcing(&tide, &m.w0, &m.bathy, &m.params).unwrap();
        m.u0 = VectorField::sample_dirichlet(g, |x, y| {
            let s = (PI * x).sin() * (PI * y).sin();
            (s, 0.5 * s)
        });
        m.xi0 = ScalarField::sample(g, |x, y| 0.1 * (PI * x).cos() * y);
        let traj = solve_forward(&m, &ControlTrajectory::zeros_distributed(g, t)).unwrap();
        (traj, m)
    }

    #[test]
    fn energy_residual_is_first_order() {
        for varying in [true, false] {
            let (a, ma) = energy_scenario(64, varying);
            let (b, mb) = energy_scenario(128, varying);
            let ra = max_abs(&energy_equality_residual(&a, &ma).unwrap());
            let rb = max_abs(&energy_equality_residual(&b, &mb).unwrap());
            let ratio = ra / rb;
            assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio} ({ra}, {rb})");
        }
    }

    #[test]
    fn energy_bound_holds() {
        let (traj, m) = energy_scenario(64, true);
        let margins = energy_bound_check(&traj, &m, None).unwrap();
        assert!(margins.iter().all(|&v| v >= 0.0));
    }
}
