//! Prognostic state `U = (v, T)` in spectral coordinates and its grid diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::grid::{DiscreteGrid, Layout};
use crate::vertical::VMode;

/// Tolerance on the lid value of the diagnosed vertical velocity.
pub const LID_TOL: f64 = 1e-10;

/// Spectral coefficients of velocity and temperature over a [`TensorBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub velocity: Vec<f64>,
    pub temperature: Vec<f64>,
    pub time: f64,
}

impl State {
    pub fn zeros(basis: &TensorBasis) -> Self {
        Self { velocity: vec![0.0; basis.n_velocity()], temperature: vec![0.0; basis.n_temperature()], time: 0.0 }
    }

    pub fn new(basis: &TensorBasis, velocity: Vec<f64>, temperature: Vec<f64>) -> Result<Self> {
        let s = Self { velocity, temperature, time: 0.0 };
        s.check_shape(basis)?;
        Ok(s)
    }

    pub fn check_shape(&self, basis: &TensorBasis) -> Result<()> {
        if self.velocity.len() != basis.n_velocity() || self.temperature.len() != basis.n_temperature() {
            return Err(HsgsError::Config(format!(
                "state has {}+{} coefficients, basis expects {}+{}",
                self.velocity.len(),
                self.temperature.len(),
                basis.n_velocity(),
                basis.n_temperature()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.iter().chain(&self.temperature).all(|v| v.is_finite())
    }

    pub fn coeffs(&self) -> impl Iterator<Item = &f64> {
        self.velocity.iter().chain(&self.temperature)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &State) {
        self.velocity.iter_mut().zip(&other.velocity).for_each(|(x, y)| *x += a * y);
        self.temperature.iter_mut().zip(&other.temperature).for_each(|(x, y)| *x += a * y);
    }

    pub fn scaled(&self, a: f64) -> State {
        State {
            velocity: self.velocity.iter().map(|v| a * v).collect(),
            temperature: self.temperature.iter().map(|v| a * v).collect(),
            time: self.time,
        }
    }

    /// `L^2(M)` inner product (the basis is orthonormal).
    pub fn dot(&self, other: &State) -> f64 {
        self.coeffs().zip(other.coeffs()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn velocity_norm_l2(&self) -> f64 {
        self.velocity.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Keeps only the barotropic (`k = 0`) velocity coefficients; temperature is dropped.
    pub fn barotropic_part(&self, basis: &TensorBasis) -> State {
        let mut s = State::zeros(basis);
        s.velocity[..basis.n].copy_from_slice(&self.velocity[..basis.n]);
        s.time = self.time;
        s
    }

    /// Keeps only the baroclinic (`k >= 1`) velocity coefficients; temperature is dropped.
    pub fn baroclinic_part(&self, basis: &TensorBasis) -> State {
        let mut s = State::zeros(basis);
        s.velocity[basis.n..].copy_from_slice(&self.velocity[basis.n..]);
        s.time = self.time;
        s
    }

    /// Random band-limited state: independent normal coefficients damped by
    /// `(1 + lambda + kappa^2)^(-decay)`, `lambda` the horizontal and `kappa^2` the
    /// vertical eigenvalue of each element, scaled to the given `L^2` norm.
    pub fn random<R: Rng + ?Sized>(basis: &TensorBasis, rng: &mut R, decay: f64, l2: f64) -> State {
        let mut draw = |eigs: Vec<f64>, kaps: Vec<f64>| -> Vec<f64> {
            eigs.iter()
                .zip(&kaps)
                .map(|(l, k)| {
                    let g: f64 = rng.sample(StandardNormal);
                    g * (1.0 + l + k * k).powf(-decay)
                })
                .collect()
        };
        let vb = basis.velocity_blocks();
        let tb = basis.temperature_blocks();
        let velocity = draw(basis.block_eigs(&vb), basis.block_wavenumbers(&vb));
        let temperature = draw(basis.block_eigs(&tb), basis.block_wavenumbers(&tb));
        let s = State { velocity, temperature, time: 0.0 };
        let nrm = s.norm_l2();
        if nrm > 0.0 {
            s.scaled(l2 / nrm)
        } else {
            s
        }
    }

    /// Zeroes every coefficient with horizontal index above `level` (1-based).
    pub fn truncate_pn(&self, basis: &TensorBasis, level: usize) -> Result<State> {
        if level > basis.n {
            return Err(HsgsError::Range(format!("truncation level {level} exceeds basis size {}", basis.n)));
        }
        let mut s = self.clone();
        basis.truncate_blocks(&mut s.velocity, level);
        basis.truncate_blocks(&mut s.temperature, level);
        Ok(s)
    }

    /// `Q_level = I - P_level`.
    pub fn complement_qn(&self, basis: &TensorBasis, level: usize) -> Result<State> {
        let p = self.truncate_pn(basis, level)?;
        let mut q = self.clone();
        q.axpy(-1.0, &p);
        Ok(q)
    }
}

/// Values on the tensor grid: one horizontal layer per vertical quadrature node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub layout: Layout,
    pub nz: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &DiscreteGrid, layout: Layout) -> Self {
        let nz = grid.quad.len();
        Self { layout, nz, values: vec![0.0; nz * grid.layout_len(layout)] }
    }

    pub fn layer_len(&self) -> usize {
        self.values.len() / self.nz
    }

    pub fn level(&self, z: usize) -> &[f64] {
        let l = self.layer_len();
        &self.values[z * l..(z + 1) * l]
    }

    pub fn level_mut(&mut self, z: usize) -> &mut [f64] {
        let l = self.layer_len();
        &mut self.values[z * l..(z + 1) * l]
    }

    pub fn check(&self, grid: &DiscreteGrid, layout: Layout) -> Result<()> {
        if self.layout != layout || self.nz != grid.quad.len() || self.values.len() != self.nz * grid.layout_len(layout) {
            return Err(HsgsError::Config(format!("grid field shape mismatch (expected {layout:?})")));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

pub fn velocity_field(basis: &TensorBasis, coeffs: &[f64]) -> GridField {
    GridField {
        layout: Layout::Velocity,
        nz: basis.grid.quad.len(),
        values: basis.synthesize(&basis.velocity_blocks(), coeffs),
    }
}

pub fn temperature_field(basis: &TensorBasis, coeffs: &[f64]) -> GridField {
    GridField { layout: Layout::Cells, nz: basis.grid.quad.len(), values: basis.synthesize(&basis.temperature_blocks(), coeffs) }
}

/// Grid fields `(v, T)` of a state.
pub fn to_grid(basis: &TensorBasis, state: &State) -> (GridField, GridField) {
    (velocity_field(basis, &state.velocity), temperature_field(basis, &state.temperature))
}

/// Quadrature projection of grid fields onto the basis.
pub fn to_spectral(v: &GridField, t: &GridField, basis: &TensorBasis) -> Result<State> {
    v.check(&basis.grid, Layout::Velocity)?;
    t.check(&basis.grid, Layout::Cells)?;
    Ok(State {
        velocity: basis.project(&basis.velocity_blocks(), &v.values),
        temperature: basis.project(&basis.temperature_blocks(), &t.values),
        time: 0.0,
    })
}

/// `(1/h) int_{-h}^0 f dz` layer by layer.
pub fn vertical_average(grid: &DiscreteGrid, f: &GridField) -> Vec<f64> {
    let len = f.layer_len();
    let mut out = vec![0.0; len];
    for z in 0..f.nz {
        let w = grid.quad.weights[z] / grid.domain.depth;
        out.iter_mut().zip(f.level(z)).for_each(|(o, v)| *o += w * v);
    }
    out
}

/// `f - (1/h) int f dz`.
pub fn baroclinic_remainder(grid: &DiscreteGrid, f: &GridField) -> GridField {
    let avg = vertical_average(grid, f);
    let mut out = f.clone();
    for z in 0..f.nz {
        out.level_mut(z).iter_mut().zip(&avg).for_each(|(o, a)| *o -= a);
    }
    out
}

/// Horizontal field of the barotropic velocity `v_bar` from coefficients.
pub fn barotropic_velocity(basis: &TensorBasis, velocity: &[f64]) -> Vec<f64> {
    let c0 = VMode::cos(0).value(basis.depth(), 0.0);
    basis.combine(crate::eigen::Family::Stokes, &velocity[..basis.n]).into_iter().map(|v| c0 * v).collect()
}

/// `|div_H v_bar|` in the grid `L^2(G)` norm.
pub fn mean_divergence(basis: &TensorBasis, velocity: &[f64]) -> f64 {
    let vbar = barotropic_velocity(basis, velocity);
    basis.grid.norm(&basis.grid.div_faces(&vbar))
}

/// Vertical velocity on cells, `w(z) = -div_H int_{-h}^z v`, and its `z`-derivatives,
/// evaluated analytically from the velocity coefficients.
pub struct VerticalVelocity {
    pub w: GridField,
    pub dz_w: GridField,
    pub dzz_w: GridField,
}

pub fn vertical_velocity(basis: &TensorBasis, velocity: &[f64]) -> VerticalVelocity {
    let grid = &basis.grid;
    let h = basis.depth();
    let mut w = GridField::zeros(grid, Layout::Cells);
    let mut dz_w = GridField::zeros(grid, Layout::Cells);
    let mut dzz_w = GridField::zeros(grid, Layout::Cells);
    for (bi, b) in basis.velocity_blocks().iter().enumerate() {
        let c = &velocity[bi * basis.n..(bi + 1) * basis.n];
        if c.iter().all(|v| *v == 0.0) {
            continue;
        }
        let d = grid.div_faces(&basis.combine(b.family, c));
        for (z, &zz) in grid.quad.nodes.iter().enumerate() {
            let (a0, a1, a2) = (b.mode.integral_from_bottom(h, zz), b.mode.value(h, zz), b.mode.dz_value(h, zz));
            for (p, &dv) in d.iter().enumerate() {
                w.level_mut(z)[p] -= a0 * dv;
                dz_w.level_mut(z)[p] -= a1 * dv;
                dzz_w.level_mut(z)[p] -= a2 * dv;
            }
        }
    }
    VerticalVelocity { w, dz_w, dzz_w }
}

/// Diagnoses `w` and checks the lid conditions. Errors if `|w|` at the top exceeds [`LID_TOL`].
pub fn diagnose_w(basis: &TensorBasis, state: &State) -> Result<GridField> {
    let w = vertical_velocity(basis, &state.velocity).w;
    let top = w.level(w.nz - 1).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(top <= LID_TOL) {
        return Err(HsgsError::DivergenceContamination(top));
    }
    Ok(w)
}

/// Discrete Leray projection of a horizontal face field.
pub fn leray_project_2d(grid: &DiscreteGrid, f: &[f64]) -> Vec<f64> {
    grid.leray(f)
}

/// `P_sigma v = v_tilde + P_G v_bar` on a velocity grid field.
pub fn hydrostatic_project(grid: &DiscreteGrid, v: &GridField) -> Result<GridField> {
    v.check(grid, Layout::Velocity)?;
    let avg = vertical_average(grid, v);
    let pavg = grid.leray(&avg);
    let mut out = v.clone();
    for z in 0..v.nz {
        out.level_mut(z).iter_mut().zip(avg.iter().zip(&pavg)).for_each(|(o, (a, p))| *o += p - a);
    }
    Ok(out)
}

/// Density and gravity constants used by the hydrostatic pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Buoyancy {
    pub rho0: f64,
    pub beta_t: f64,
    pub gravity: f64,
    pub t_ref: f64,
}

/// `p = p_s + g int_z^0 rho dz'`, `rho = rho0 (1 - beta_t (T - t_ref))`, by cumulative
/// trapezoid from the top lid on the quadrature nodes.
pub fn reconstruct_pressure(grid: &DiscreteGrid, p_s: &[f64], t: &GridField, c: &Buoyancy) -> Result<GridField> {
    t.check(grid, Layout::Cells)?;
    if p_s.len() != grid.n_cells() {
        return Err(HsgsError::Config("surface pressure must live on cells".into()));
    }
    let nz = t.nz;
    let rho = |z: usize, p: usize| c.rho0 * (1.0 - c.beta_t * (t.level(z)[p] - c.t_ref));
    let mut out = GridField::zeros(grid, Layout::Cells);
    out.level_mut(nz - 1).copy_from_slice(p_s);
    for z in (0..nz - 1).rev() {
        let dz = grid.quad.nodes[z + 1] - grid.quad.nodes[z];
        for p in 0..grid.n_cells() {
            let above = out.level(z + 1)[p];
            out.level_mut(z)[p] = above + c.gravity * 0.5 * dz * (rho(z, p) + rho(z + 1, p));
        }
    }
    Ok(out)
}
