//! Uniform collocated grid, grid functions and the discrete differential
//! operators used by every solver in the crate.
//!
//! Nodes include the boundary. The grid inner product is the tensor
//! trapezoid rule `<a, b> = sum_ij w_ij a_ij b_ij` with `w_ij = dx dy` in the
//! interior, halved on edges and quartered at corners. `divergence` is the
//! negative adjoint of `gradient` under this inner product, so
//! `<gradient(s), v> = -<s, divergence(v)>` holds to rounding for every pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for conjugate-gradient solves.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::GridTooSmall { nx, ny });
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Unit square with `n x n` nodes.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn dx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let ax = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let ay = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        ax * ay * self.dx() * self.dy()
    }

    /// Quadrature weights for every node, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                w.push(self.weight(i, j));
            }
        }
        w
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Scalar grid function, row-major with `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// Two-component grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub comp1: Vec<f64>,
    pub comp2: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at every node.
    pub fn sample(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        debug_assert_eq!(self.grid, other.grid);
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Pointwise product.
    pub fn mul(&self, other: &ScalarField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid inner product.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        weighted_dot(&self.grid, &self.values, &other.values)
    }
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            comp1: vec![0.0; grid.len()],
            comp2: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c1: f64, c2: f64) -> Self {
        Self {
            grid,
            comp1: vec![c1; grid.len()],
            comp2: vec![c2; grid.len()],
        }
    }

    pub fn from_components(grid: GridSpec, comp1: Vec<f64>, comp2: Vec<f64>) -> Result<Self> {
        if comp1.len() != grid.len() || comp2.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values per component, got {} and {}",
                grid.len(),
                comp1.len(),
                comp2.len()
            )));
        }
        Ok(Self { grid, comp1, comp2 })
    }

    pub fn from_scalars(a: ScalarField, b: ScalarField) -> Result<Self> {
        a.grid.check_same(&b.grid)?;
        Ok(Self {
            grid: a.grid,
            comp1: a.values,
            comp2: b.values,
        })
    }

    /// Samples `f(x, y) -> (c1, c2)` at every node.
    pub fn sample(grid: GridSpec, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut comp1 = Vec::with_capacity(grid.len());
        let mut comp2 = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (a, b) = f(grid.x(i), grid.y(j));
                comp1.push(a);
                comp2.push(b);
            }
        }
        Self { grid, comp1, comp2 }
    }

    /// Like [`VectorField::sample`] but with exact zeros on the boundary.
    pub fn sample_dirichlet(grid: GridSpec, f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut v = Self::sample(grid, f);
        v.enforce_dirichlet();
        v
    }

    pub fn component(&self, k: usize) -> ScalarField {
        let values = if k == 0 {
            self.comp1.clone()
        } else {
            self.comp2.clone()
        };
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comp1.iter().chain(&self.comp2).all(|v| v.is_finite())
    }

    /// Largest boundary magnitude over both components.
    pub fn boundary_max_abs(&self) -> f64 {
        let g = self.grid;
        let mut m: f64 = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if g.is_boundary(i, j) {
                    let k = g.idx(i, j);
                    m = m.max(self.comp1[k].abs()).max(self.comp2[k].abs());
                }
            }
        }
        m
    }

    pub fn is_dirichlet(&self) -> bool {
        self.boundary_max_abs() == 0.0
    }

    pub fn check_dirichlet(&self) -> Result<()> {
        let max_abs = self.boundary_max_abs();
        if max_abs == 0.0 {
            Ok(())
        } else {
            Err(Error::NotDirichlet { max_abs })
        }
    }

    /// Overwrites boundary values with zeros.
    pub fn enforce_dirichlet(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if g.is_boundary(i, j) {
                    let k = g.idx(i, j);
                    self.comp1[k] = 0.0;
                    self.comp2[k] = 0.0;
                }
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            comp1: self.comp1.iter().map(|v| a * v).collect(),
            comp2: self.comp2.iter().map(|v| a * v).collect(),
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        debug_assert_eq!(self.grid, other.grid);
        for (s, o) in self.comp1.iter_mut().zip(&other.comp1) {
            *s += a * o;
        }
        for (s, o) in self.comp2.iter_mut().zip(&other.comp2) {
            *s += a * o;
        }
    }

    pub fn add(&self, other: &VectorField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiplies both components pointwise by a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        Self {
            grid: self.grid,
            comp1: self.comp1.iter().zip(&s.values).map(|(a, b)| a * b).collect(),
            comp2: self.comp2.iter().zip(&s.values).map(|(a, b)| a * b).collect(),
        }
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self
                .comp1
                .iter()
                .zip(&self.comp2)
                .map(|(a, b)| a.hypot(*b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comp1
            .iter()
            .chain(&self.comp2)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid inner product summed over both components.
    pub fn inner(&self, other: &VectorField) -> f64 {
        weighted_dot(&self.grid, &self.comp1, &other.comp1)
            + weighted_dot(&self.grid, &self.comp2, &other.comp2)
    }
}

/// Common surface of scalar and vector grid functions, used by the operators
/// that act component-wise (Laplacian, Poisson solve).
pub trait GridFunction: Clone {
    fn grid(&self) -> GridSpec;
    fn components(&self) -> Vec<&[f64]>;
    fn from_component_vecs(grid: GridSpec, comps: Vec<Vec<f64>>) -> Self;
    fn inner(&self, other: &Self) -> f64;
    fn is_finite(&self) -> bool;

    fn try_map_components<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let comps = self
            .components()
            .into_iter()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_component_vecs(self.grid(), comps))
    }
}

impl GridFunction for ScalarField {
    fn grid(&self) -> GridSpec {
        self.grid
    }
    fn components(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
    fn from_component_vecs(grid: GridSpec, mut comps: Vec<Vec<f64>>) -> Self {
        ScalarField {
            grid,
            values: comps.remove(0),
        }
    }
    fn inner(&self, other: &Self) -> f64 {
        ScalarField::inner(self, other)
    }
    fn is_finite(&self) -> bool {
        ScalarField::is_finite(self)
    }
}

impl GridFunction for VectorField {
    fn grid(&self) -> GridSpec {
        self.grid
    }
    fn components(&self) -> Vec<&[f64]> {
        vec![&self.comp1, &self.comp2]
    }
    fn from_component_vecs(grid: GridSpec, mut comps: Vec<Vec<f64>>) -> Self {
        let comp2 = comps.remove(1);
        let comp1 = comps.remove(0);
        VectorField { grid, comp1, comp2 }
    }
    fn inner(&self, other: &Self) -> f64 {
        VectorField::inner(self, other)
    }
    fn is_finite(&self) -> bool {
        VectorField::is_finite(self)
    }
}

pub(crate) fn weighted_dot(grid: &GridSpec, a: &[f64], b: &[f64]) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut edge = 0.0;
    let mut corner = 0.0;
    let mut inner = 0.0;
    for j in 0..ny {
        let row = j * nx;
        let jb = j == 0 || j == ny - 1;
        for i in 0..nx {
            let ib = i == 0 || i == nx - 1;
            let p = a[row + i] * b[row + i];
            match (ib, jb) {
                (false, false) => inner += p,
                (true, true) => corner += p,
                _ => edge += p,
            }
        }
    }
    (inner + 0.5 * edge + 0.25 * corner) * grid.dx() * grid.dy()
}

// ---------------------------------------------------------------------------
// Stencils on raw component arrays.

/// Five-point Laplacian; boundary nodes of the output are zero.
pub(crate) fn laplacian_raw(grid: &GridSpec, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let idx2 = 1.0 / (grid.dx() * grid.dx());
    let idy2 = 1.0 / (grid.dy() * grid.dy());
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            out[k] = (f[k - 1] - 2.0 * f[k] + f[k + 1]) * idx2
                + (f[k - nx] - 2.0 * f[k] + f[k + nx]) * idy2;
        }
    }
}

/// First derivative along a line of `n` samples with spacing `h`: central in
/// the interior, second-order one-sided at the ends.
#[inline]
fn diff_line(n: usize, h: f64, get: impl Fn(usize) -> f64, mut set: impl FnMut(usize, f64)) {
    let c = 0.5 / h;
    set(0, c * (-3.0 * get(0) + 4.0 * get(1) - get(2)));
    for i in 1..n - 1 {
        set(i, c * (get(i + 1) - get(i - 1)));
    }
    set(
        n - 1,
        c * (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)),
    );
}

/// Transpose of [`diff_line`]: accumulates `D^T g` where `D` is the line
/// derivative matrix.
#[inline]
fn diff_line_transpose(
    n: usize,
    h: f64,
    get: impl Fn(usize) -> f64,
    mut add: impl FnMut(usize, f64),
) {
    let c = 0.5 / h;
    let g0 = get(0);
    add(0, -3.0 * c * g0);
    add(1, 4.0 * c * g0);
    add(2, -c * g0);
    for i in 1..n - 1 {
        let gi = get(i);
        add(i + 1, c * gi);
        add(i - 1, -c * gi);
    }
    let gn = get(n - 1);
    add(n - 1, 3.0 * c * gn);
    add(n - 2, -4.0 * c * gn);
    add(n - 3, c * gn);
}

pub(crate) fn gradient_raw(grid: &GridSpec, s: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    for j in 0..ny {
        let row = j * nx;
        diff_line(nx, dx, |i| s[row + i], |i, v| gx[row + i] = v);
    }
    for i in 0..nx {
        diff_line(ny, dy, |j| s[j * nx + i], |j, v| gy[j * nx + i] = v);
    }
}

/// `-H^{-1} G^T H v`, the negative adjoint of the gradient.
pub(crate) fn divergence_raw(grid: &GridSpec, v1: &[f64], v2: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let w = grid.weights();
    let hv1: Vec<f64> = v1.iter().zip(&w).map(|(a, b)| a * b).collect();
    let hv2: Vec<f64> = v2.iter().zip(&w).map(|(a, b)| a * b).collect();
    let mut acc = vec![0.0; grid.len()];
    for j in 0..ny {
        let row = j * nx;
        diff_line_transpose(nx, dx, |i| hv1[row + i], |i, v| acc[row + i] += v);
    }
    for i in 0..nx {
        diff_line_transpose(ny, dy, |j| hv2[j * nx + i], |j, v| acc[j * nx + i] += v);
    }
    for ((o, a), wk) in out.iter_mut().zip(&acc).zip(&w) {
        *o = -a / wk;
    }
}

// ---------------------------------------------------------------------------
// Public operators.

/// Five-point Laplacian. Interior nodes use the stored neighbour values
/// (zero for Dirichlet fields); boundary nodes of the output are zero.
pub fn laplacian<F: GridFunction>(f: &F) -> F {
    let grid = f.grid();
    f.try_map_components(|c| {
        let mut out = vec![0.0; c.len()];
        laplacian_raw(&grid, c, &mut out);
        Ok(out)
    })
    .expect("laplacian is infallible")
}

/// Central differences in the interior, second-order one-sided at the boundary.
pub fn gradient(s: &ScalarField) -> VectorField {
    let grid = s.grid;
    let mut gx = vec![0.0; grid.len()];
    let mut gy = vec![0.0; grid.len()];
    gradient_raw(&grid, &s.values, &mut gx, &mut gy);
    VectorField {
        grid,
        comp1: gx,
        comp2: gy,
    }
}

/// Discrete divergence of a Dirichlet vector field, defined as the negative
/// adjoint of [`gradient`] under the grid inner product.
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    v.check_dirichlet()?;
    Ok(divergence_unchecked(v))
}

pub(crate) fn divergence_unchecked(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let mut out = vec![0.0; grid.len()];
    divergence_raw(&grid, &v.comp1, &v.comp2, &mut out);
    ScalarField { grid, values: out }
}

/// Divergence of a general (not necessarily Dirichlet) vector field using the
/// same one-sided stencils as [`gradient`]. Used for boundary-flow terms.
pub fn divergence_general(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let mut gx = vec![0.0; grid.len()];
    let mut gy = vec![0.0; grid.len()];
    let mut scratch = vec![0.0; grid.len()];
    gradient_raw(&grid, &v.comp1, &mut gx, &mut scratch);
    gradient_raw(&grid, &v.comp2, &mut scratch, &mut gy);
    ScalarField {
        grid,
        values: gx.iter().zip(&gy).map(|(a, b)| a + b).collect(),
    }
}

/// `k x v = (-v2, v1)`.
pub fn rotate(v: &VectorField) -> VectorField {
    VectorField {
        grid: v.grid,
        comp1: v.comp2.iter().map(|x| -x).collect(),
        comp2: v.comp1.clone(),
    }
}

// ---------------------------------------------------------------------------
// Conjugate gradients.

/// Solver controls for every SPD solve in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    pub tol: f64,
    /// `None` means `10 * nx * ny`.
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_CG_TOL,
            max_iter: None,
        }
    }
}

impl CgSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_iter: None,
        }
    }

    fn max_iter_for(&self, grid: &GridSpec) -> usize {
        self.max_iter.unwrap_or(10 * grid.len())
    }
}

/// Applies `shift * x - scale * lap(x)` on interior nodes; zero on the boundary.
fn apply_shifted(grid: &GridSpec, shift: f64, scale: f64, x: &[f64], out: &mut [f64]) {
    laplacian_raw(grid, x, out);
    let (nx, ny) = (grid.nx, grid.ny);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            out[k] = shift * x[k] - scale * out[k];
        }
    }
}

fn interior_dot(grid: &GridSpec, a: &[f64], b: &[f64]) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut s = 0.0;
    for j in 1..ny - 1 {
        let row = j * nx;
        for i in 1..nx - 1 {
            s += a[row + i] * b[row + i];
        }
    }
    s
}

/// Solves `(shift I - scale lap) x = b` on interior nodes with homogeneous
/// Dirichlet data. Boundary values of `b` are ignored; `x` is zero there.
/// `shift >= 0`, `scale > 0` keeps the system symmetric positive definite.
pub(crate) fn solve_shifted(
    grid: &GridSpec,
    shift: f64,
    scale: f64,
    b: &[f64],
    guess: Option<&[f64]>,
    settings: &CgSettings,
) -> Result<Vec<f64>> {
    let n = grid.len();
    let (nx, ny) = (grid.nx, grid.ny);
    let mut rhs = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            rhs[k] = b[k];
        }
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear solve right-hand side".into()));
    }
    let bnorm = interior_dot(grid, &rhs, &rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    if let Some(g) = guess {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                x[k] = g[k];
            }
        }
    }
    let mut ax = vec![0.0; n];
    apply_shifted(grid, shift, scale, &x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    for j in 0..ny {
        for i in 0..nx {
            if grid.is_boundary(i, j) {
                r[j * nx + i] = 0.0;
            }
        }
    }
    let mut p = r.clone();
    let mut rr = interior_dot(grid, &r, &r);
    let target = settings.tol * bnorm;
    let max_iter = settings.max_iter_for(grid);
    let mut it = 0;
    while rr.sqrt() > target {
        if it >= max_iter {
            return Err(Error::CgNotConverged {
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        apply_shifted(grid, shift, scale, &p, &mut ax);
        let pap = interior_dot(grid, &p, &ax);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::CgNotConverged {
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ax[k];
        }
        let rr_new = interior_dot(grid, &r, &r);
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
        it += 1;
    }
    Ok(x)
}

/// Solves `(-lap_h) x = rhs` with homogeneous Dirichlet data by conjugate
/// gradients, component by component.
pub fn poisson_solve<F: GridFunction>(rhs: &F, settings: &CgSettings) -> Result<F> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidArgument("CG tolerance must be positive".into()));
    }
    let grid = rhs.grid();
    rhs.try_map_components(|c| solve_shifted(&grid, 0.0, 1.0, c, None, settings))
}

// ---------------------------------------------------------------------------
// Norms.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    L4,
    H1Semi,
    HMinus1,
}

pub fn l2_norm<F: GridFunction>(f: &F) -> f64 {
    f.inner(f).max(0.0).sqrt()
}

/// `(sum_ij w_ij |f_ij|^4)^{1/4}` with `|.|` the pointwise Euclidean magnitude.
pub fn l4_norm<F: GridFunction>(f: &F) -> f64 {
    let grid = f.grid();
    let comps = f.components();
    let mag2: Vec<f64> = (0..grid.len())
        .map(|k| comps.iter().map(|c| c[k] * c[k]).sum::<f64>())
        .collect();
    let m4: Vec<f64> = mag2.iter().map(|m| m * m).collect();
    let ones = vec![1.0; grid.len()];
    weighted_dot(&grid, &m4, &ones).max(0.0).powf(0.25)
}

/// `||grad f||_{L2}` using [`gradient`] on each component.
pub fn h1_seminorm<F: GridFunction>(f: &F) -> f64 {
    let grid = f.grid();
    let mut total = 0.0;
    for c in f.components() {
        let s = ScalarField {
            grid,
            values: c.to_vec(),
        };
        let g = gradient(&s);
        total += g.inner(&g);
    }
    total.max(0.0).sqrt()
}

/// `<f, (-lap_h)^{-1} f>^{1/2}`.
pub fn hminus1_norm<F: GridFunction>(f: &F, settings: &CgSettings) -> Result<f64> {
    let x = poisson_solve(f, settings)?;
    Ok(f.inner(&x).max(0.0).sqrt())
}

/// H^{-1} inner product `<a, (-lap_h)^{-1} b>`.
pub fn hminus1_inner<F: GridFunction>(a: &F, b: &F, settings: &CgSettings) -> Result<f64> {
    let x = poisson_solve(b, settings)?;
    Ok(a.inner(&x))
}

/// Discrete Dirichlet energy `<-lap_h f, f>` (the five-point H^1_0 seminorm squared).
pub fn dirichlet_energy<F: GridFunction>(f: &F) -> f64 {
    let lap = laplacian(f);
    -lap.inner(f)
}

fn check_dirichlet_components<F: GridFunction>(f: &F) -> Result<()> {
    let grid = f.grid();
    let mut max_abs: f64 = 0.0;
    for c in f.components() {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.is_boundary(i, j) {
                    max_abs = max_abs.max(c[grid.idx(i, j)].abs());
                }
            }
        }
    }
    if max_abs == 0.0 {
        Ok(())
    } else {
        Err(Error::NotDirichlet { max_abs })
    }
}

/// Discrete norms. `H1Semi` and `HMinus1` require homogeneous boundary values.
pub fn norm<F: GridFunction>(f: &F, kind: NormKind, settings: &CgSettings) -> Result<f64> {
    match kind {
        NormKind::L2 => Ok(l2_norm(f)),
        NormKind::L4 => Ok(l4_norm(f)),
        NormKind::H1Semi => {
            check_dirichlet_components(f)?;
            Ok(h1_seminorm(f))
        }
        NormKind::HMinus1 => {
            check_dirichlet_components(f)?;
            hminus1_norm(f, settings)
        }
    }
}

/// Smallest eigenvalue of `-lap_h` on the grid, by inverse power iteration.
/// The discrete Poincaré constant is `1 / sqrt` of this value.
pub fn smallest_laplacian_eigenvalue(grid: &GridSpec, settings: &CgSettings) -> Result<f64> {
    let mut x = vec![0.0; grid.len()];
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            // positive start vector, not orthogonal to the ground mode
            x[grid.idx(i, j)] = 1.0 + 0.01 * ((i * 7 + j * 13) % 5) as f64;
        }
    }
    let mut lambda = 0.0;
    for _ in 0..200 {
        let nrm = interior_dot(grid, &x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        let y = solve_shifted(grid, 0.0, 1.0, &x, None, settings)?;
        let rayleigh = interior_dot(grid, &x, &y);
        let new_lambda = 1.0 / rayleigh;
        x = y;
        if (new_lambda - lambda).abs() <= 1e-13 * new_lambda {
            lambda = new_lambda;
            break;
        }
        lambda = new_lambda;
    }
    Ok(lambda)
}

/// Discrete eigenvalue of `-lap_h` for the mode `sin(k pi x / lx) sin(l pi y / ly)`.
pub fn discrete_mode_eigenvalue(grid: &GridSpec, k: usize, l: usize) -> f64 {
    let (dx, dy) = (grid.dx(), grid.dy());
    let sx = (k as f64 * std::f64::consts::PI * dx / (2.0 * grid.lx)).sin();
    let sy = (l as f64 * std::f64::consts::PI * dy / (2.0 * grid.ly)).sin();
    4.0 / (dx * dx) * sx * sx + 4.0 / (dy * dy) * sy * sy
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinsin(grid: GridSpec) -> ScalarField {
        let mut s = ScalarField::sample(grid, |x, y| (PI * x).sin() * (PI * y).sin());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.is_boundary(i, j) {
                    s.values[grid.idx(i, j)] = 0.0;
                }
            }
        }
        s
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(
            GridSpec::new(2, 5, 1.0, 1.0),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(GridSpec::new(3, 3, 1.0, 1.0).is_ok());
        assert!(GridSpec::new(4, 4, 0.0, 1.0).is_err());
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = GridSpec::unit_square(9).unwrap();
        let l = laplacian(&VectorField::zeros(g));
        assert_eq!(l.max_abs(), 0.0);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = GridSpec::unit_square(17).unwrap();
        let f = ScalarField::sample(g, |x, y| x * (1.0 - x) + y * (1.0 - y));
        let l = laplacian(&f);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let v = l.at(i, j);
                if g.is_boundary(i, j) {
                    assert_eq!(v, 0.0);
                } else {
                    assert!((v + 4.0).abs() < 1e-9, "{v}");
                }
            }
        }
    }

    #[test]
    fn laplacian_discrete_eigenpair() {
        let g = GridSpec::new(21, 13, 1.0, 1.0).unwrap();
        let s = sinsin(g);
        let lam = discrete_mode_eigenvalue(&g, 1, 1);
        let expected = 4.0 / (g.dx() * g.dx()) * (PI * g.dx() / 2.0).sin().powi(2)
            + 4.0 / (g.dy() * g.dy()) * (PI * g.dy() / 2.0).sin().powi(2);
        assert!((lam - expected).abs() < 1e-12 * expected);
        let l = laplacian(&s);
        for k in 0..g.len() {
            assert!((l.values[k] + lam * s.values[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = GridSpec::new(9, 7, 2.0, 1.5).unwrap();
        let c = gradient(&ScalarField::constant(g, 3.5));
        assert!(c.max_abs() < 1e-12);
        let lin = gradient(&ScalarField::sample(g, |x, y| 2.0 * x + 3.0 * y));
        for k in 0..g.len() {
            assert!((lin.comp1[k] - 2.0).abs() < 1e-12);
            assert!((lin.comp2[k] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_second_order_convergence() {
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let s = ScalarField::sample(g, |x, y| (PI * x).sin() * (PI * y).sin());
            let gr = gradient(&s);
            let ex = VectorField::sample(g, |x, y| {
                (PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos())
            });
            gr.sub(&ex).max_abs()
        };
        let (e1, e2) = (err(33), err(65));
        let order = (e1 / e2).log2();
        assert!(e2 < 5e-3, "{e2}");
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn divergence_zero_and_dirichlet_guard() {
        let g = GridSpec::unit_square(8).unwrap();
        let d = divergence(&VectorField::zeros(g)).unwrap();
        assert_eq!(d.max_abs(), 0.0);
        let bad = VectorField::constant(g, 1.0, 0.0);
        assert!(matches!(divergence(&bad), Err(Error::NotDirichlet { .. })));
    }

    #[test]
    fn divergence_converges_on_smooth_fields() {
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let v = VectorField::sample_dirichlet(g, |x, y| ((PI * x).sin() * (PI * y).sin(), 0.0));
            let d = divergence(&v).unwrap();
            let ex = ScalarField::sample(g, |x, y| PI * (PI * x).cos() * (PI * y).sin());
            let diff = d.sub(&ex);
            (diff.inner(&diff)).sqrt()
        };
        let (e1, e2) = (err(33), err(65));
        let order = (e1 / e2).log2();
        assert!(order > 1.4, "L2 order {order} ({e1} -> {e2})");
    }

    #[test]
    fn summation_by_parts_constant_field() {
        let g = GridSpec::new(12, 9, 1.0, 2.0).unwrap();
        let v = VectorField::sample_dirichlet(g, |_, _| (0.7, -1.3));
        let s = ScalarField::sample(g, |x, y| (3.0 * x).cos() + y * y);
        let lhs = gradient(&s).inner(&v);
        let rhs = -s.inner(&divergence(&v).unwrap());
        assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn rotate_formula() {
        let g = GridSpec::unit_square(3).unwrap();
        let v = VectorField::constant(g, 1.0, 2.0);
        let r = rotate(&v);
        assert!(r.comp1.iter().all(|&a| a == -2.0));
        assert!(r.comp2.iter().all(|&a| a == 1.0));
        assert_eq!(rotate(&VectorField::zeros(g)).max_abs(), 0.0);
    }

    #[test]
    fn poisson_zero_and_eigen() {
        let g = GridSpec::unit_square(33).unwrap();
        let s = CgSettings::default();
        let z = poisson_solve(&ScalarField::zeros(g), &s).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let mode = sinsin(g);
        let lam = discrete_mode_eigenvalue(&g, 1, 1);
        let x = poisson_solve(&mode.scaled(lam), &CgSettings::with_tol(1e-12)).unwrap();
        assert!(x.sub(&mode).max_abs() < 1e-9);
    }

    #[test]
    fn poisson_continuous_eigenpair_converges() {
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let mode = sinsin(g);
            let x = poisson_solve(&mode.scaled(2.0 * PI * PI), &CgSettings::with_tol(1e-12)).unwrap();
            x.sub(&mode).max_abs()
        };
        let (e1, e2) = (err(17), err(33));
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn poisson_reports_non_convergence() {
        let g = GridSpec::unit_square(17).unwrap();
        let mode = sinsin(g).add(&ScalarField::sample(g, |x, y| (7.0 * x * y).sin()));
        let res = poisson_solve(
            &mode,
            &CgSettings {
                tol: 1e-14,
                max_iter: Some(2),
            },
        );
        assert!(matches!(res, Err(Error::CgNotConverged { .. })));
    }

    #[test]
    fn norms_closed_forms() {
        let g = GridSpec::unit_square(129).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert!((l2_norm(&one) - 1.0).abs() < 1e-12);
        let s = sinsin(g);
        let l4 = norm(&s, NormKind::L4, &CgSettings::default()).unwrap();
        assert!((l4.powi(4) - 9.0 / 64.0).abs() < 0.01 * 9.0 / 64.0);
        let hm = norm(&s, NormKind::HMinus1, &CgSettings::default()).unwrap();
        let expected = 1.0 / (8.0 * PI * PI);
        assert!((hm * hm - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn seminorms_require_dirichlet() {
        let g = GridSpec::unit_square(9).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert!(norm(&one, NormKind::H1Semi, &CgSettings::default()).is_err());
        assert!(norm(&one, NormKind::HMinus1, &CgSettings::default()).is_err());
    }

    #[test]
    fn smallest_eigenvalue_matches_ground_mode() {
        let g = GridSpec::new(17, 11, 1.0, 0.5).unwrap();
        let lam = smallest_laplacian_eigenvalue(&g, &CgSettings::with_tol(1e-13)).unwrap();
        let exact = discrete_mode_eigenvalue(&g, 1, 1);
        assert!((lam - exact).abs() < 1e-8 * exact, "{lam} vs {exact}");
    }
}
