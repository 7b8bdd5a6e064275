//! Linear and nonlinear terms of the Galerkin system.
//!
//! The transport term is evaluated on the grid in an energy-neutral form. Horizontally,
//! a quantity `q` carried by a horizontal velocity is advanced with the edge operator
//!
//! ```text
//! (N q)_a += F q_b / (2 len),   (N q)_b -= F q_a / (2 len)
//! ```
//!
//! summed over the interior edges `a -> b` of the layout of `q`, `F` the velocity
//! normal to the edge. It approximates `v . grad q + (div v) q / 2` and is exactly skew.
//! Vertically `w dq/dz + (dw/dz) q / 2` is added with `dw/dz = -div_H v`; its contribution
//! to `<B(U, U#), U#>` is `int d/dz (w |q|^2) / 2`, which the trapezoid rule integrates to
//! zero exactly as long as the vertical truncation is resolved (see [`OperatorContext::new`]).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::grid::{DiscreteGrid, Layout};
use crate::state::{
    barotropic_velocity, temperature_field, velocity_field, vertical_velocity, Buoyancy, GridField, State,
    VerticalVelocity,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Horizontal viscosity.
    pub nu_v: f64,
    /// Horizontal diffusivity.
    pub nu_t: f64,
    /// Coriolis parameter.
    pub coriolis: f64,
    pub rho0: f64,
    pub beta_t: f64,
    pub gravity: f64,
    pub t_ref: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { nu_v: 1.0, nu_t: 1.0, coriolis: 0.0, rho0: 1.0, beta_t: 0.0, gravity: 9.81, t_ref: 0.0 }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_v > 0.0 && self.nu_t > 0.0) {
            return Err(HsgsError::Range(format!(
                "viscosity and diffusivity must be positive (got {}, {})",
                self.nu_v, self.nu_t
            )));
        }
        if !(self.coriolis >= 0.0) {
            return Err(HsgsError::Range(format!("Coriolis parameter must be >= 0, got {}", self.coriolis)));
        }
        if !(self.rho0 > 0.0) {
            return Err(HsgsError::Range("reference density must be positive".into()));
        }
        Ok(())
    }

    pub fn buoyancy(&self) -> Buoyancy {
        Buoyancy { rho0: self.rho0, beta_t: self.beta_t, gravity: self.gravity, t_ref: self.t_ref }
    }
}

/// Basis and constants shared by every operator evaluation.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    pub basis: Arc<TensorBasis>,
    pub constants: PhysicalConstants,
    /// Vertical resolution factor: the quadrature must resolve `dealias * n_z` modes.
    pub dealias: f64,
}

impl OperatorContext {
    /// Validates the constants and that the vertical quadrature resolves the cubic
    /// products occurring in `<B(U, U#), U#>`: `Nz - 1 > dealias * n_z`.
    pub fn new(basis: Arc<TensorBasis>, constants: PhysicalConstants, dealias: f64) -> Result<Self> {
        constants.validate()?;
        if !(dealias >= 1.0) {
            return Err(HsgsError::Range(format!("dealiasing factor must be >= 1, got {dealias}")));
        }
        let intervals = basis.grid.quad.len() - 1;
        if (intervals as f64) <= dealias * basis.n_z as f64 {
            return Err(HsgsError::Config(format!(
                "{} vertical nodes do not resolve {} modes with dealiasing factor {dealias}; need more than {}",
                intervals + 1,
                basis.n_z,
                (dealias * basis.n_z as f64).floor() as usize + 1
            )));
        }
        Ok(Self { basis, constants, dealias })
    }

    /// Smallest admissible vertical node count for `n_z` modes.
    pub fn min_vertical_nodes(n_z: usize, dealias: f64) -> usize {
        (dealias * n_z as f64).floor() as usize + 2
    }
}

/// `A_H U = (-P_sigma lap v, -lap T)`: each coefficient times its horizontal eigenvalue.
pub fn apply_ah(basis: &TensorBasis, state: &State) -> State {
    let ve = basis.velocity_eigs();
    let te = basis.temperature_eigs();
    State {
        velocity: state.velocity.iter().zip(&ve).map(|(c, l)| c * l).collect(),
        temperature: state.temperature.iter().zip(&te).map(|(c, l)| c * l).collect(),
        time: state.time,
    }
}

// -------------------------------------------------------------------------------------
// Horizontal transport.

/// `out += N(vel) q` for a cell quantity.
pub fn advect_cells(grid: &DiscreteGrid, vel: &[f64], q: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (cx, cy) = (0.5 / grid.dx, 0.5 / grid.dy);
    for j in 0..ny {
        for i in 1..nx {
            let f = vel[grid.uface(i, j)] * cx;
            let (a, b) = (grid.cell(i - 1, j), grid.cell(i, j));
            out[a] += f * q[b];
            out[b] -= f * q[a];
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let f = vel[grid.vface(i, j)] * cy;
            let (a, b) = (grid.cell(i, j - 1), grid.cell(i, j));
            out[a] += f * q[b];
            out[b] -= f * q[a];
        }
    }
}

/// `out += N(vel) q` for a face quantity (both components carried by `vel`).
pub fn advect_faces(grid: &DiscreteGrid, vel: &[f64], q: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (cx, cy) = (0.25 / grid.dx, 0.25 / grid.dy);
    let mut edge = |a: usize, b: usize, f: f64| {
        out[a] += f * q[b];
        out[b] -= f * q[a];
    };
    for j in 0..ny {
        for i in 1..nx - 1 {
            let (a, b) = (grid.uface(i, j), grid.uface(i + 1, j));
            edge(a, b, (vel[a] + vel[b]) * cx);
        }
    }
    for j in 0..ny - 1 {
        for i in 1..nx {
            let f = (vel[grid.vface(i - 1, j + 1)] + vel[grid.vface(i, j + 1)]) * cy;
            edge(grid.uface(i, j), grid.uface(i, j + 1), f);
        }
    }
    for j in 1..ny - 1 {
        for i in 0..nx {
            let (a, b) = (grid.vface(i, j), grid.vface(i, j + 1));
            edge(a, b, (vel[a] + vel[b]) * cy);
        }
    }
    for j in 1..ny {
        for i in 0..nx - 1 {
            let f = (vel[grid.uface(i + 1, j - 1)] + vel[grid.uface(i + 1, j)]) * cx;
            edge(grid.vface(i, j), grid.vface(i + 1, j), f);
        }
    }
}

/// `out += N(vel) q` in the layout of `q`.
pub fn advect(grid: &DiscreteGrid, layout: Layout, vel: &[f64], q: &[f64], out: &mut [f64]) {
    match layout {
        Layout::Cells => advect_cells(grid, vel, q, out),
        Layout::Velocity => advect_faces(grid, vel, q, out),
        Layout::Nodes => unreachable!("no transport on nodes"),
    }
}

/// Transporting velocity with its vertical derivative and diagnosed `w`.
pub struct Carrier {
    pub v: GridField,
    pub dz_v: GridField,
    pub w: VerticalVelocity,
}

impl Carrier {
    pub fn new(basis: &TensorBasis, velocity: &[f64]) -> Self {
        Self {
            v: velocity_field(basis, velocity),
            dz_v: GridField {
                layout: Layout::Velocity,
                nz: basis.grid.quad.len(),
                values: basis.synthesize(&basis.dz_velocity_blocks(), &basis.dz_velocity(velocity)),
            },
            w: vertical_velocity(basis, velocity),
        }
    }
}

/// A transported quantity with its first two vertical derivatives on the grid.
pub struct Carried {
    pub layout: Layout,
    pub q: GridField,
    pub dz_q: GridField,
    pub dzz_q: GridField,
}

impl Carried {
    pub fn velocity(basis: &TensorBasis, velocity: &[f64]) -> Self {
        let nz = basis.grid.quad.len();
        let vb = basis.velocity_blocks();
        Self {
            layout: Layout::Velocity,
            q: velocity_field(basis, velocity),
            dz_q: GridField {
                layout: Layout::Velocity,
                nz,
                values: basis.synthesize(&basis.dz_velocity_blocks(), &basis.dz_velocity(velocity)),
            },
            dzz_q: velocity_field(basis, &basis.dzz(&vb, velocity)),
        }
    }

    pub fn temperature(basis: &TensorBasis, temperature: &[f64]) -> Self {
        let nz = basis.grid.quad.len();
        let tb = basis.temperature_blocks();
        Self {
            layout: Layout::Cells,
            q: temperature_field(basis, temperature),
            dz_q: GridField {
                layout: Layout::Cells,
                nz,
                values: basis.synthesize(&basis.dz_temperature_blocks(), &basis.dz_temperature(temperature)),
            },
            dzz_q: temperature_field(basis, &basis.dzz(&tb, temperature)),
        }
    }
}

fn on_layout(grid: &DiscreteGrid, layout: Layout, cells: &[f64]) -> Vec<f64> {
    match layout {
        Layout::Cells => cells.to_vec(),
        _ => grid.cells_to_faces(cells),
    }
}

/// Grid value of `v . grad q + w dq/dz` in the energy-neutral form (before projection).
pub fn transport_grid(grid: &DiscreteGrid, carrier: &Carrier, carried: &Carried) -> GridField {
    let layout = carried.layout;
    let mut out = GridField::zeros(grid, layout);
    for z in 0..out.nz {
        let o = out.level_mut(z);
        advect(grid, layout, carrier.v.level(z), carried.q.level(z), o);
        let w = on_layout(grid, layout, carrier.w.w.level(z));
        let dw = on_layout(grid, layout, carrier.w.dz_w.level(z));
        let (q, dq) = (carried.q.level(z), carried.dz_q.level(z));
        for p in 0..o.len() {
            o[p] += w[p] * dq[p] + 0.5 * dw[p] * q[p];
        }
    }
    out
}

/// `d/dz` of [`transport_grid`] by the product rule.
pub fn transport_dz_grid(grid: &DiscreteGrid, carrier: &Carrier, carried: &Carried) -> GridField {
    let layout = carried.layout;
    let mut out = GridField::zeros(grid, layout);
    for z in 0..out.nz {
        let o = out.level_mut(z);
        advect(grid, layout, carrier.dz_v.level(z), carried.q.level(z), o);
        advect(grid, layout, carrier.v.level(z), carried.dz_q.level(z), o);
        let w = on_layout(grid, layout, carrier.w.w.level(z));
        let dw = on_layout(grid, layout, carrier.w.dz_w.level(z));
        let ddw = on_layout(grid, layout, carrier.w.dzz_w.level(z));
        let (q, dq, ddq) = (carried.q.level(z), carried.dz_q.level(z), carried.dzz_q.level(z));
        for p in 0..o.len() {
            o[p] += dw[p] * dq[p] + w[p] * ddq[p] + 0.5 * ddw[p] * q[p] + 0.5 * dw[p] * dq[p];
        }
    }
    out
}

/// Grid fields of `B(U, U#)` before projection: `(velocity part, temperature part)`.
pub fn nonlinear_b_grid(basis: &TensorBasis, u: &State, u_sharp: &State) -> (GridField, GridField) {
    let carrier = Carrier::new(basis, &u.velocity);
    let bv = transport_grid(&basis.grid, &carrier, &Carried::velocity(basis, &u_sharp.velocity));
    let bt = transport_grid(&basis.grid, &carrier, &Carried::temperature(basis, &u_sharp.temperature));
    (bv, bt)
}

/// `P_n B(U, U#)`.
pub fn nonlinear_b(basis: &TensorBasis, u: &State, u_sharp: &State) -> State {
    let (bv, bt) = nonlinear_b_grid(basis, u, u_sharp);
    State {
        velocity: basis.project(&basis.velocity_blocks(), &bv.values),
        temperature: basis.project(&basis.temperature_blocks(), &bt.values),
        time: u.time,
    }
}

// -------------------------------------------------------------------------------------
// Lower-order terms.

/// `k x v` on the staggered grid, one layer: `(-k0 v, k0 u)` with four-point averaging
/// between the two face families. Exactly orthogonal to `v`.
pub fn coriolis_layer(grid: &DiscreteGrid, k0: f64, vel: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vel.len());
    out.extend(grid.v_to_u(vel).into_iter().map(|x| -k0 * x));
    out.extend(grid.u_to_v(vel).into_iter().map(|x| k0 * x));
    out
}

/// `k x (u, v) = k0 (-v, u)` for collocated components.
pub fn rotate_collocated(k0: f64, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (v.iter().map(|x| -k0 * x).collect(), u.iter().map(|x| k0 * x).collect())
}

pub fn coriolis_grid(basis: &TensorBasis, k0: f64, velocity: &[f64]) -> GridField {
    let v = velocity_field(basis, velocity);
    let mut out = GridField::zeros(&basis.grid, Layout::Velocity);
    for z in 0..v.nz {
        out.level_mut(z).copy_from_slice(&coriolis_layer(&basis.grid, k0, v.level(z)));
    }
    out
}

/// `E U = (P_n P_sigma k x v, 0)`.
pub fn coriolis_e(ctx: &OperatorContext, state: &State) -> State {
    let b = &ctx.basis;
    let mut out = State::zeros(b);
    out.time = state.time;
    if ctx.constants.coriolis != 0.0 {
        let g = coriolis_grid(b, ctx.constants.coriolis, &state.velocity);
        out.velocity = b.project(&b.velocity_blocks(), &g.values);
    }
    out
}

/// Grid field `-beta_t g int_z^0 grad_H T dz'` from temperature coefficients.
pub fn baroclinic_pressure_grid(basis: &TensorBasis, c: &PhysicalConstants, temperature: &[f64]) -> GridField {
    let grid = &basis.grid;
    let h = basis.depth();
    let mut out = GridField::zeros(grid, Layout::Velocity);
    let factor = -c.beta_t * c.gravity;
    if factor == 0.0 {
        return out;
    }
    for (bi, b) in basis.temperature_blocks().iter().enumerate() {
        let coeffs = &temperature[bi * basis.n..(bi + 1) * basis.n];
        if coeffs.iter().all(|v| *v == 0.0) {
            continue;
        }
        let g = grid.grad_cells(&basis.combine(b.family, coeffs));
        for (z, &zz) in grid.quad.nodes.iter().enumerate() {
            let a = factor * b.mode.integral_to_top(h, zz);
            out.level_mut(z).iter_mut().zip(&g).for_each(|(o, v)| *o += a * v);
        }
    }
    out
}

/// `A_pr U = (P_n P_sigma [-beta_t g int_z^0 grad_H T], 0)`.
pub fn baroclinic_pressure_apr(ctx: &OperatorContext, state: &State) -> State {
    let b = &ctx.basis;
    let mut out = State::zeros(b);
    out.time = state.time;
    if ctx.constants.beta_t * ctx.constants.gravity != 0.0 {
        let g = baroclinic_pressure_grid(b, &ctx.constants, &state.temperature);
        out.velocity = b.project(&b.velocity_blocks(), &g.values);
    }
    out
}

/// External forcing `(f_v, f_T)`, stored projected onto the basis together with the
/// vertical mean of the raw momentum forcing (needed for the surface pressure).
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub projected: State,
    pub mean_velocity: Vec<f64>,
}

impl Forcing {
    pub fn zero(basis: &TensorBasis) -> Self {
        Self { projected: State::zeros(basis), mean_velocity: vec![0.0; basis.grid.n_velocity()] }
    }

    pub fn is_zero(&self) -> bool {
        self.projected.coeffs().all(|v| *v == 0.0) && self.mean_velocity.iter().all(|v| *v == 0.0)
    }

    /// Forcing already expressed in the basis.
    pub fn spectral(basis: &TensorBasis, projected: State) -> Result<Self> {
        projected.check_shape(basis)?;
        let mean_velocity = barotropic_velocity(basis, &projected.velocity);
        Ok(Self { projected, mean_velocity })
    }

    pub fn from_grid(basis: &TensorBasis, f_v: &GridField, f_t: &GridField) -> Result<Self> {
        let projected = crate::state::to_spectral(f_v, f_t, basis)?;
        let mean_velocity = crate::state::vertical_average(&basis.grid, f_v);
        Ok(Self { projected, mean_velocity })
    }
}

/// `F(U) = A_pr U + E U - F_U`.
pub fn assemble_f(ctx: &OperatorContext, state: &State, forcing: &Forcing) -> Result<State> {
    forcing.projected.check_shape(&ctx.basis)?;
    let mut out = baroclinic_pressure_apr(ctx, state);
    out.axpy(1.0, &coriolis_e(ctx, state));
    out.axpy(-1.0, &forcing.projected);
    Ok(out)
}

/// `N(v~) = (1/h) int (v~ . grad v~ + (div v~) v~) dz` on faces, in the discrete form
/// matching the vertical mean of the transport term.
pub fn barotropic_n(basis: &TensorBasis, baroclinic_velocity: &[f64]) -> Vec<f64> {
    let grid = &basis.grid;
    let mut vt = baroclinic_velocity.to_vec();
    vt[..basis.n].iter_mut().for_each(|v| *v = 0.0);
    let f = velocity_field(basis, &vt);
    let h = basis.depth();
    let mut out = vec![0.0; grid.n_velocity()];
    for z in 0..f.nz {
        let q = f.level(z);
        let mut layer = vec![0.0; q.len()];
        advect_faces(grid, q, q, &mut layer);
        let div = grid.cells_to_faces(&grid.div_faces(q));
        let wz = grid.quad.weights[z] / h;
        for p in 0..layer.len() {
            out[p] += wz * (layer[p] + 0.5 * div[p] * q[p]);
        }
    }
    out
}

/// Mean-zero surface pressure from
/// `grad p_s / rho0 = (1 - P_G)(nu_v lap v_bar - v_bar . grad v_bar - N(v~) + A F_v(U))`,
/// `A F_v(U) = -k x v_bar + (beta_t g / h) int int_z^0 grad T + mean f_v`.
pub fn recover_surface_pressure(ctx: &OperatorContext, state: &State, forcing: &Forcing) -> Result<Vec<f64>> {
    let b = &ctx.basis;
    let grid = &b.grid;
    let c = &ctx.constants;
    state.check_shape(b)?;
    if forcing.mean_velocity.len() != grid.n_velocity() {
        return Err(HsgsError::Config("forcing does not match the grid".into()));
    }
    let vbar = barotropic_velocity(b, &state.velocity);
    let mut r: Vec<f64> = grid.lap_velocity(&vbar).into_iter().map(|x| c.nu_v * x).collect();
    let mut adv = vec![0.0; vbar.len()];
    advect_faces(grid, &vbar, &vbar, &mut adv);
    let n = barotropic_n(b, &state.velocity);
    let cor = coriolis_layer(grid, c.coriolis, &vbar);
    let apr = crate::state::vertical_average(grid, &baroclinic_pressure_grid(b, c, &state.temperature));
    for p in 0..r.len() {
        r[p] += -adv[p] - n[p] - cor[p] - apr[p] + forcing.mean_velocity[p];
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(HsgsError::NonFinite("surface pressure right-hand side".into()));
    }
    let div = grid.div_faces(&r);
    let total: f64 = div.iter().sum();
    let scale: f64 = div.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if total.abs() > 1e-8 * scale {
        return Err(HsgsError::Consistency(format!("incompatible Neumann data (net flux {total:.3e})")));
    }
    Ok(grid.poisson_neumann(&div).into_iter().map(|v| c.rho0 * v).collect())
}
