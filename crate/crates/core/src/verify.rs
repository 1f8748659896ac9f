//! Executable property suites for the friction operator properties and inequalities,
//! the finite-difference gradient harness and the energy bound monitors.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost_grad::{eval_cost, reduced_gradient, ControlTrajectory, CostSpec};
use crate::error::{Error, Result};
use crate::forward::{
    energy_bound_check, running_rectangle, running_trapezoid, solve_forward, Model,
};
use crate::grid::{
    dirichlet_energy, hminus1_norm, l2_norm, l4_norm, laplacian, rotate,
    smallest_laplacian_eigenvalue, CgSettings, GridSpec, ScalarField, VectorField,
};
use crate::model::{b_apply, b_jacobian_apply, Bathymetry, JacobianMode, PhysicalParams};
use crate::tangent_adjoint::{
    adjoint_bound_check, solve_adjoint, solve_tangent, tangent_bound_check,
};

/// Default tolerance for margins of exact discrete inequalities.
pub const MARGIN_TOL: f64 = 1e-12;

/// Outcome of one property over a batch of trials. `worst_margin` is the
/// smallest `RHS - LHS` seen; the property passes when it is `>= -tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub trials: usize,
    pub worst_margin: f64,
    pub passed: bool,
    pub tolerance: f64,
    pub formula: String,
    /// Extra observed quantity, such as a sharp constant.
    pub observed: Option<f64>,
}

impl PropertyReport {
    fn new(name: &str, formula: &str, margins: &[f64], tolerance: f64) -> Self {
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let worst = if margins.is_empty() { 0.0 } else { worst };
        Self {
            name: name.into(),
            trials: margins.len(),
            worst_margin: worst,
            passed: worst.is_finite() && worst >= -tolerance,
            tolerance,
            formula: formula.into(),
            observed: None,
        }
    }

    fn with_observed(mut self, v: f64) -> Self {
        self.observed = Some(v);
        self
    }
}

pub fn all_passed(reports: &[PropertyReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

pub fn reports_to_json(reports: &[PropertyReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn write_reports_csv<W: Write>(reports: &[PropertyReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "trials",
        "worst_margin",
        "passed",
        "tolerance",
        "formula",
        "observed",
    ])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.trials.to_string(),
            format!("{:e}", r.worst_margin),
            r.passed.to_string(),
            format!("{:e}", r.tolerance),
            r.formula.clone(),
            r.observed.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn random_field(g: GridSpec, rng: &mut ChaCha8Rng, dirichlet: bool) -> VectorField {
    let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
    let mut v = VectorField::zeros(g);
    for k in 0..g.len() {
        v.comp1[k] = scale * rng.gen_range(-1.0..1.0);
        v.comp2[k] = scale * rng.gen_range(-1.0..1.0);
    }
    if dirichlet {
        v.enforce_dirichlet();
    }
    v
}

struct OperatorTrial {
    growth: f64,
    monotone: f64,
    lower: f64,
    lipschitz: f64,
    lipschitz_sharp: f64,
    jac_paper: f64,
    jac_exact: f64,
    jac_dual: f64,
    f_monotone: f64,
}

/// Randomized checks of the friction operator properties and the global
/// monotonicity of `F(u) = A u + B(u) - f`. With `w0 = None` a fresh
/// boundary flow is drawn for every trial. Trials are seeded by index.
pub fn operator_property_suite(
    bathy: &Bathymetry,
    params: &PhysicalParams,
    w0: Option<&VectorField>,
    trials: usize,
    seed: u64,
    cg: &CgSettings,
) -> Result<Vec<PropertyReport>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let g = bathy.grid();
    let r = params.r;
    let lam = bathy.lambda_min;
    let c_omega = 1.0 / smallest_laplacian_eigenvalue(&g, cg)?.sqrt();
    let results: Vec<OperatorTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let u = random_field(g, &mut rng, true);
            let v = random_field(g, &mut rng, true);
            let dir = random_field(g, &mut rng, true);
            let w = match w0 {
                Some(w) => w.clone(),
                None => random_field(g, &mut rng, false),
            };
            let (lu, lv, lw) = (l4_norm(&u), l4_norm(&v), l4_norm(&w));
            let bu = b_apply(bathy, r, &u, &w);
            let bv = b_apply(bathy, r, &v, &w);
            let d = u.sub(&v);
            let db = bu.sub(&bv);

            let growth = r / lam * (lu + lw).powi(2) - l2_norm(&bu);
            let monotone = db.inner(&d);
            let lower = bu.inner(&u) + r / (2.0 * lam) * (lw.powi(4) + u.inner(&u));
            let ld = l4_norm(&d);
            let bracket = (lu + lv + lw) * ld;
            let lipschitz = r / lam * bracket - l2_norm(&db);
            let lipschitz_sharp = if bracket > 0.0 {
                l2_norm(&db) / bracket
            } else {
                0.0
            };
            let jp = b_jacobian_apply(bathy, r, &u, &w, &dir, JacobianMode::Paper);
            let je = b_jacobian_apply(bathy, r, &u, &w, &dir, JacobianMode::Exact);
            let dual = hminus1_norm(&je, cg)
                .and_then(|a| hminus1_norm(&jp, cg).map(|b| a.max(b)))
                .unwrap_or(f64::NAN);
            let jac_dual = 2.0 * c_omega * r / lam * (lu + lw) * l4_norm(&dir) - dual;

            let a_part = laplacian(&d).scaled(-params.alpha).add(&rotate(&d).scaled(params.beta));
            let f_monotone = a_part.inner(&d) + monotone;
            OperatorTrial {
                growth,
                monotone,
                lower,
                lipschitz,
                lipschitz_sharp,
                jac_paper: jp.inner(&dir),
                jac_exact: je.inner(&dir),
                jac_dual,
                f_monotone,
            }
        })
        .collect();
    let col = |f: fn(&OperatorTrial) -> f64| results.iter().map(f).collect::<Vec<f64>>();

    // friction Jacobian at the kink z = 0
    let w_kink = w0.cloned().unwrap_or_else(|| VectorField::constant(g, 0.3, -0.2));
    let mut u_kink = w_kink.scaled(-1.0);
    u_kink.enforce_dirichlet();
    let mut probe = VectorField::constant(g, 1.0, 1.0);
    probe.enforce_dirichlet();
    let kink = b_jacobian_apply(bathy, r, &u_kink, &w_kink, &probe, JacobianMode::Exact);
    let mut kink_max: f64 = 0.0;
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let k = g.idx(i, j);
            let z = (u_kink.comp1[k] + w_kink.comp1[k]).hypot(u_kink.comp2[k] + w_kink.comp2[k]);
            if z == 0.0 {
                kink_max = kink_max.max(kink.comp1[k].abs()).max(kink.comp2[k].abs());
            }
        }
    }

    Ok(vec![
        PropertyReport::new(
            "B growth",
            "|B(u)|_2 <= (r/lambda)(|u|_4 + |w0|_4)^2",
            &col(|t| t.growth),
            MARGIN_TOL,
        ),
        PropertyReport::new(
            "B monotone",
            "(B(u) - B(v), u - v) >= 0",
            &col(|t| t.monotone),
            MARGIN_TOL,
        ),
        PropertyReport::new(
            "B lower bound",
            "(B(u), u) >= -(r/(2 lambda))(|w0|_4^4 + |u|_2^2)",
            &col(|t| t.lower),
            MARGIN_TOL,
        ),
        PropertyReport::new(
            "B Lipschitz (weakened)",
            "|B(u) - B(v)|_2 <= (r/lambda)(|u|_4 + |v|_4 + |w0|_4)|u - v|_4",
            &col(|t| t.lipschitz),
            MARGIN_TOL,
        )
        .with_observed(
            results
                .iter()
                .map(|t| t.lipschitz_sharp)
                .fold(0.0, f64::max),
        ),
        PropertyReport::new(
            "B' positive (paper)",
            "(B'(u) v, v) >= 0, B'(u) = 2 gamma |u + w0|",
            &col(|t| t.jac_paper),
            MARGIN_TOL,
        ),
        PropertyReport::new(
            "B' positive (exact)",
            "(B'(u) v, v) >= 0, exact Jacobian",
            &col(|t| t.jac_exact),
            MARGIN_TOL,
        ),
        PropertyReport::new(
            "B' dual bound",
            "|B'(u) v|_{-1} <= (2 C r/lambda)(|u|_4 + |w0|_4)|v|_4, C = lambda_min(-lap_h)^{-1/2}",
            &col(|t| t.jac_dual),
            MARGIN_TOL,
        )
        .with_observed(c_omega),
        PropertyReport::new(
            "B' at kink",
            "exact B'(u) v = 0 where u + w0 = 0",
            &[-kink_max],
            0.0,
        ),
        PropertyReport::new(
            "F monotone",
            "<F(u) - F(v), u - v> >= 0, F = A + B - f",
            &col(|t| t.f_monotone),
            MARGIN_TOL,
        ),
    ])
}

/// Slack applied to the Ladyzhenskaya constant.
pub const LADYZHENSKAYA_SLACK: f64 = 1.05;

/// `(|u|_4, 2^{1/4} |u|_2^{1/2} |grad u|_2^{1/2})` for a Dirichlet field.
pub fn ladyzhenskaya_sides(u: &VectorField) -> (f64, f64) {
    let lhs = l4_norm(u);
    let rhs = 2f64.powf(0.25) * l2_norm(u).sqrt() * dirichlet_energy(u).max(0.0).sqrt().sqrt();
    (lhs, rhs)
}

/// Random sum of Dirichlet eigenmodes `sin(k pi x) sin(l pi y)` with
/// `k, l <= modes` and coefficients decaying like `1/(k l)`.
pub fn band_limited_field(g: GridSpec, modes: usize, rng: &mut ChaCha8Rng) -> VectorField {
    let mut coef = Vec::new();
    for k in 1..=modes {
        for l in 1..=modes {
            let s = 1.0 / (k * l) as f64;
            coef.push((
                k as f64,
                l as f64,
                s * rng.gen_range(-1.0..1.0),
                s * rng.gen_range(-1.0..1.0),
            ));
        }
    }
    VectorField::sample_dirichlet(g, |x, y| {
        let (x, y) = (x / g.lx, y / g.ly);
        coef.iter().fold((0.0, 0.0), |(a, b), (k, l, c1, c2)| {
            let m = (k * PI * x).sin() * (l * PI * y).sin();
            (a + c1 * m, b + c2 * m)
        })
    })
}

/// Ladyzhenskaya inequality on band-limited fields (with slack), the
/// eigenfunction case, and the observed Poincare ratio.
pub fn inequality_suite(
    grid: &GridSpec,
    trials: usize,
    seed: u64,
    cg: &CgSettings,
) -> Result<Vec<PropertyReport>> {
    if grid.nx < 64 || grid.ny < 64 {
        return Err(Error::InvalidArgument(
            "inequality suite needs at least 64x64 nodes".into(),
        ));
    }
    let g = *grid;
    let samples: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let u = band_limited_field(g, 4, &mut rng);
            let (lhs, rhs) = ladyzhenskaya_sides(&u);
            let ratio = l2_norm(&u) / dirichlet_energy(&u).sqrt();
            (lhs, rhs, ratio)
        })
        .collect();
    let lady: Vec<f64> = samples
        .iter()
        .map(|(l, r, _)| LADYZHENSKAYA_SLACK * r - l)
        .collect();
    let eig = VectorField::sample_dirichlet(g, |x, y| {
        ((PI * x / g.lx).sin() * (PI * y / g.ly).sin(), 0.0)
    });
    let (el, er) = ladyzhenskaya_sides(&eig);
    let zero = ladyzhenskaya_sides(&VectorField::zeros(g));
    let c_omega = 1.0 / smallest_laplacian_eigenvalue(&g, cg)?.sqrt();
    let poincare: Vec<f64> = samples.iter().map(|(_, _, q)| c_omega - q).collect();
    let observed = samples.iter().map(|s| s.2).fold(0.0, f64::max);
    Ok(vec![
        PropertyReport::new(
            "Ladyzhenskaya (band-limited)",
            "|u|_4 <= 1.05 * 2^{1/4} |u|_2^{1/2} |grad u|_2^{1/2}",
            &lady,
            0.0,
        ),
        PropertyReport::new(
            "Ladyzhenskaya (eigenfunction)",
            "|u|_4 <= 2^{1/4} |u|_2^{1/2} |grad u|_2^{1/2}, u = sin(pi x) sin(pi y)",
            &[er - el],
            0.0,
        )
        .with_observed(el),
        PropertyReport::new("Ladyzhenskaya (zero)", "0 <= 0", &[zero.1 - zero.0], 0.0),
        PropertyReport::new(
            "Poincare",
            "|u|_2 <= C |grad u|_2, C = lambda_min(-lap_h)^{-1/2}",
            &poincare,
            MARGIN_TOL,
        )
        .with_observed(observed),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    /// Best over step sizes of the worst relative error over directions.
    pub error: f64,
    pub steps: Vec<f64>,
    /// Worst relative error over directions for each step.
    pub per_step: Vec<f64>,
}

/// Compares the adjoint directional derivative `<g, V>` with central
/// differences `(J(U + hV) - J(U - hV)) / 2h`. Steps are scaled by
/// `(1 + max|U|) / max|V|`.
pub fn gradient_fd_check(
    model: &Model,
    spec: &CostSpec,
    control: &ControlTrajectory,
    directions: &[ControlTrajectory],
    steps: &[f64],
) -> Result<FdReport> {
    if directions.is_empty() || steps.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one direction and one step".into(),
        ));
    }
    let res = reduced_gradient(model, control, spec)?;
    let j = |c: &ControlTrajectory| -> Result<f64> {
        eval_cost(&solve_forward(model, c)?, c, spec, &model.cg)
    };
    let mut per_step = vec![0.0f64; steps.len()];
    for v in directions {
        let exact = res.directional_derivative(v)?;
        let vmax = v.max_abs();
        if vmax == 0.0 {
            continue;
        }
        for (k, &h) in steps.iter().enumerate() {
            let he = h * (1.0 + control.max_abs()) / vmax;
            let mut p = control.clone();
            p.axpy(he, v)?;
            let mut m = control.clone();
            m.axpy(-he, v)?;
            let fd = (j(&p)? - j(&m)?) / (2.0 * he);
            let scale = exact.abs().max(fd.abs());
            let err = if scale > 0.0 {
                (fd - exact).abs() / scale
            } else {
                0.0
            };
            per_step[k] = per_step[k].max(err);
        }
    }
    Ok(FdReport {
        error: per_step.iter().copied().fold(f64::INFINITY, f64::min),
        steps: steps.to_vec(),
        per_step,
    })
}

/// Runs the energy, tangent, adjoint and control-perturbation bounds for
/// the distributed control `control`, the direction `direction` and the
/// perturbation size `tau`, with adjoint sources taken from `spec`.
pub fn bound_monitors(
    model: &Model,
    spec: &CostSpec,
    control: &[VectorField],
    direction: &[VectorField],
    tau: f64,
) -> Result<Vec<PropertyReport>> {
    let g = model.grid();
    let ctrl = ControlTrajectory::Distributed(control.to_vec());
    let traj = solve_forward(model, &ctrl)?;
    let energy = energy_bound_check(&traj, model, Some(control))?;

    let tan = solve_tangent(
        model,
        &traj,
        Some(direction),
        VectorField::zeros(g),
        ScalarField::zeros(g),
        model.mode,
    )?;
    let tangent = tangent_bound_check(model, &tan, Some(direction))?;

    let sources = spec.adjoint_sources(&traj)?;
    let adj = solve_adjoint(model, &traj, &sources, model.mode)?;
    let adjoint = adjoint_bound_check(model, &adj, &sources)?;

    let pert: Vec<VectorField> = control
        .iter()
        .zip(direction)
        .map(|(a, b)| a.add(&b.scaled(tau)))
        .collect();
    let other = solve_forward(model, &ControlTrajectory::Distributed(pert))?;
    let dt = model.time.dt();
    let n = model.time.steps;
    let sup = (0..=n)
        .map(|k| {
            let du = other.u[k].sub(&traj.u[k]);
            let dx = other.xi[k].sub(&traj.xi[k]);
            du.inner(&du) + dx.inner(&dx)
        })
        .fold(0.0, f64::max);
    let grad2: Vec<f64> = (0..=n)
        .map(|k| dirichlet_energy(&other.u[k].sub(&traj.u[k])))
        .collect();
    let grad_int = running_trapezoid(&grad2, dt)[n];
    let u2 = direction
        .iter()
        .map(|v| hminus1_norm(v, &model.cg).map(|x| x * x))
        .collect::<Result<Vec<_>>>()?;
    let u_int = running_rectangle(&u2, dt)[n];
    let b = model.bathy.constants();
    let alpha = model.params.alpha;
    let rate = 4.0 / alpha * (2.0 + b.mu_max * b.mu_max) + b.m_grad;
    let rhs = 4.0 * tau * tau / alpha * u_int * (rate * model.time.t_final).exp();
    let bound = rhs - (sup + alpha * grad_int);
    if !bound.is_finite() {
        return Err(Error::NonFinite("perturbation bound".into()));
    }

    Ok(vec![
        PropertyReport::new(
            "energy bound",
            "|u|^2 + |xi|^2 + alpha int |grad u|^2 <= (|u0|^2 + |xi0|^2 + (r/lambda) int |w0|_4^4 + int |f + U|_{-1}^2) e^{Kt}",
            &energy,
            0.0,
        ),
        PropertyReport::new(
            "tangent bound",
            "|w|^2 + |eta|^2 + alpha int |grad w|^2 <= (|w0|^2 + |eta0|^2 + (4/alpha) int |V|_{-1}^2) e^{(8(mu^2+1)/alpha + M)t}",
            &tangent,
            0.0,
        ),
        PropertyReport::new(
            "adjoint bound",
            "|p|^2 + |phi|^2 + alpha int_t^T |grad p|^2 <= (|p_T|^2 + |phi_T|^2 + int_t^T |s|^2 + |q|^2) e^{[M + 2 mu^2 + 4(1/alpha + 1)]T}",
            &adjoint,
            0.0,
        ),
        PropertyReport::new(
            "control perturbation bound",
            "sup(|du|^2 + |dxi|^2) + alpha int |grad du|^2 <= (4 tau^2/alpha) int |U|_{-1}^2 e^{[4(2+mu^2)/alpha + M]T}",
            &[bound],
            0.0,
        )
        .with_observed(rhs),
    ])
}
