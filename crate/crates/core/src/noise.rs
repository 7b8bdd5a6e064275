//! Transport noise: `sigma_1`, `sigma_2`, their structure checkers and the Wiener driver.
//!
//! Per retained mode `k`:
//!
//! ```text
//! sigma_1 e_k = Psi_k . grad v_tilde + Phi_k(z) . grad v_bar + zeta_k(z) v_bar + nu_k v_tilde + chi_k
//! sigma_2 e_k = PsiT_k . grad T + gamma_k T + Theta_k(z) : grad v_bar + zeta_hat_k(z) . v_bar
//!               + nu_hat_k(z) . v_tilde + chi_hat_k
//! ```
//!
//! Vertical profiles are spanned by `1` and `C(z) = cos(pi (z + h) / h)` (velocity side, so
//! `d/dz` vanishes on the lids) or by `S(z) = sin(pi (z + h) / h)` (temperature side, vanishing
//! on the lids). The barotropic transport `a . grad v_bar` is evaluated as
//! `curl(a . grad psi)` with `psi` the stream function of `v_bar`, which keeps its divergence
//! exactly zero on the grid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::estimates::spectral_sq;
use crate::grid::{DiscreteGrid, Layout};
use crate::state::{GridField, State};
use crate::vertical::VMode;

/// Growth ratio above which a sample counts as gradient-dominated.
pub const GRADIENT_DOMINANCE: f64 = 10.0;
/// Relative slack allowed between fitted and declared `eta^2`.
pub const ETA_HEADROOM: f64 = 1.1;

/// Coefficients of one noise direction `e_k`. Empty arrays stand for zero fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseMode {
    /// `Psi_k` components on the velocity layout.
    pub psi: [Vec<f64>; 2],
    /// `PsiT_k = base + tilt * C(z)`, components on cells.
    pub psi_t_base: [Vec<f64>; 2],
    pub psi_t_tilt: [Vec<f64>; 2],
    /// `Phi_k` component `i` is `phi[i][0] + phi[i][1] C(z)`.
    pub phi: [[f64; 2]; 2],
    /// `zeta_k(z) = zeta[0] + zeta[1] C(z)`.
    pub zeta: [f64; 2],
    pub nu: f64,
    /// Amplitude of the lowest Dirichlet mode times `c_1`.
    pub chi: f64,
    pub gamma: f64,
    /// `Theta_k(z) = theta S(z)`, `theta[i][j]` multiplying `d_j v_bar_i`.
    pub theta: [[f64; 2]; 2],
    pub zeta_hat: [f64; 2],
    pub nu_hat: [f64; 2],
    /// `(amplitude, Neumann mode index, sine index)` terms.
    pub chi_hat: Vec<(f64, usize, usize)>,
    /// `sup |Psi_k|` over `G`.
    pub psi_sup: f64,
    /// `sup |PsiT_k|` over `M`.
    pub psi_t_sup: f64,
}

fn add_scaled(acc: &mut Vec<f64>, w: f64, f: &[f64]) {
    if f.is_empty() || w == 0.0 {
        return;
    }
    if acc.is_empty() {
        acc.resize(f.len(), 0.0);
    }
    acc.iter_mut().zip(f).for_each(|(a, v)| *a += w * v);
}

fn grid_sup2(x: &[f64], y: &[f64]) -> f64 {
    match (x.is_empty(), y.is_empty()) {
        (true, true) => 0.0,
        (false, true) => x.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        (true, false) => y.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        (false, false) => x.iter().zip(y).fold(0.0f64, |a, (u, v)| a.max(u.hypot(*v))),
    }
}

impl NoiseMode {
    /// `sum_k w_k mode_k`, with sups recomputed on the grid.
    pub fn combine(modes: &[NoiseMode], weights: &[f64]) -> NoiseMode {
        let mut out = NoiseMode::default();
        for (m, &w) in modes.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for i in 0..2 {
                add_scaled(&mut out.psi[i], w, &m.psi[i]);
                add_scaled(&mut out.psi_t_base[i], w, &m.psi_t_base[i]);
                add_scaled(&mut out.psi_t_tilt[i], w, &m.psi_t_tilt[i]);
                for j in 0..2 {
                    out.phi[i][j] += w * m.phi[i][j];
                    out.theta[i][j] += w * m.theta[i][j];
                }
                out.zeta[i] += w * m.zeta[i];
                out.zeta_hat[i] += w * m.zeta_hat[i];
                out.nu_hat[i] += w * m.nu_hat[i];
            }
            out.nu += w * m.nu;
            out.chi += w * m.chi;
            out.gamma += w * m.gamma;
            out.chi_hat.extend(m.chi_hat.iter().map(|&(a, i, j)| (w * a, i, j)));
        }
        out.refresh_sups();
        out
    }

    /// Recomputes `psi_sup` and `psi_t_sup` as grid maxima. The temperature field is affine
    /// in `C(z) in [-1, 1]`, so its sup over `z` is attained at `C = +-1`.
    pub fn refresh_sups(&mut self) {
        self.psi_sup = grid_sup2(&self.psi[0], &self.psi[1]);
        let pick = |s: f64, i: usize| -> Vec<f64> {
            let (b, t) = (&self.psi_t_base[i], &self.psi_t_tilt[i]);
            match (b.is_empty(), t.is_empty()) {
                (true, true) => Vec::new(),
                (false, true) => b.clone(),
                (true, false) => t.iter().map(|v| s * v).collect(),
                (false, false) => b.iter().zip(t).map(|(b, t)| b + s * t).collect(),
            }
        };
        self.psi_t_sup = grid_sup2(&pick(1.0, 0), &pick(1.0, 1)).max(grid_sup2(&pick(-1.0, 0), &pick(-1.0, 1)));
    }

    /// `|A Phi_k|`, the (constant) vertical mean of `Phi_k`.
    pub fn phi_mean_norm(&self) -> f64 {
        self.phi[0][0].hypot(self.phi[1][0])
    }

    /// The mode with its state-independent parts `chi`, `chi_hat` removed.
    pub fn homogeneous(&self) -> NoiseMode {
        NoiseMode { chi: 0.0, chi_hat: Vec::new(), ..self.clone() }
    }

    fn check(&self, basis: &TensorBasis) -> Result<()> {
        let g = &basis.grid;
        let ok = |f: &Vec<f64>, len: usize| f.is_empty() || f.len() == len;
        let nv = g.n_velocity();
        let nc = g.n_cells();
        for i in 0..2 {
            if !ok(&self.psi[i], nv) || !ok(&self.psi_t_base[i], nc) || !ok(&self.psi_t_tilt[i], nc) {
                return Err(HsgsError::Config("noise field does not match the grid".into()));
            }
        }
        for &(_, m, j) in &self.chi_hat {
            if m >= basis.n || j == 0 {
                return Err(HsgsError::Config(format!("chi_hat term ({m}, {j}) outside the basis")));
            }
        }
        Ok(())
    }
}

/// Named default family: `Psi_k = a k^-s g_k(x, y) d_k` with
/// `g_k = cos(p pi x / Lx) cos(q pi y / Ly)` and unit direction `d_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseFamily {
    pub modes: usize,
    pub amplitude: f64,
    pub decay: f64,
    pub phi_amplitude: f64,
    /// Relative `C(z)` tilt of `PsiT_k`.
    pub psi_t_tilt: f64,
    /// Relative `C(z)` tilt of `Phi_k`.
    pub phi_tilt: f64,
    pub zeta: f64,
    pub nu: f64,
    pub chi: f64,
    pub gamma: f64,
    pub theta: f64,
    pub zeta_hat: f64,
    pub nu_hat: f64,
    pub chi_hat: f64,
}

impl Default for NoiseFamily {
    fn default() -> Self {
        Self {
            modes: 0,
            amplitude: 0.0,
            decay: 2.0,
            phi_amplitude: 0.0,
            psi_t_tilt: 0.0,
            phi_tilt: 0.0,
            zeta: 0.0,
            nu: 0.0,
            chi: 0.0,
            gamma: 0.0,
            theta: 0.0,
            zeta_hat: 0.0,
            nu_hat: 0.0,
            chi_hat: 0.0,
        }
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.amplitude,
            self.decay,
            self.phi_amplitude,
            self.psi_t_tilt,
            self.phi_tilt,
            self.zeta,
            self.nu,
            self.chi,
            self.gamma,
            self.theta,
            self.zeta_hat,
            self.nu_hat,
            self.chi_hat,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(HsgsError::Config("noise parameters must be finite".into()));
        }
        if self.decay < 0.0 {
            return Err(HsgsError::Config("noise decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn build(&self, basis: &TensorBasis) -> Result<NoiseModel> {
        self.validate()?;
        let g = &basis.grid;
        let (lx, ly) = (g.domain.lx, g.domain.ly);
        let shape = |p: usize, q: usize, pts: &[(f64, f64)]| -> Vec<f64> {
            pts.iter().map(|&(x, y)| (p as f64 * PI * x / lx).cos() * (q as f64 * PI * y / ly).cos()).collect()
        };
        let vel_pts = g.coordinates(Layout::Velocity);
        let cell_pts = g.coordinates(Layout::Cells);
        let mut modes = Vec::with_capacity(self.modes);
        for k in 1..=self.modes {
            let w = (k as f64).powf(-self.decay);
            let (p, q) = ((k - 1) % 3, ((k - 1) / 3) % 3);
            let ang = k as f64 * GOLDEN_ANGLE;
            let dir = [ang.cos(), ang.sin()];
            let a = self.amplitude * w;
            let b = self.phi_amplitude * w;
            let mut m = NoiseMode::default();
            if a != 0.0 {
                let gv = shape(p, q, &vel_pts);
                let gc = shape(p, q, &cell_pts);
                for i in 0..2 {
                    m.psi[i] = gv.iter().map(|v| a * dir[i] * v).collect();
                    m.psi_t_base[i] = gc.iter().map(|v| a * dir[i] * v).collect();
                    if self.psi_t_tilt != 0.0 {
                        m.psi_t_tilt[i] = gc.iter().map(|v| self.psi_t_tilt * a * dir[i] * v).collect();
                    }
                }
            }
            for i in 0..2 {
                m.phi[i] = [b * dir[i], b * self.phi_tilt * dir[i]];
                m.theta[i][i] = self.theta * w;
                m.zeta_hat[i] = self.zeta_hat * w * dir[i];
                m.nu_hat[i] = self.nu_hat * w * dir[i];
            }
            m.zeta = [self.zeta * w, 0.0];
            m.nu = self.nu * w;
            m.chi = self.chi * w;
            m.gamma = self.gamma * w;
            if self.chi_hat != 0.0 {
                m.chi_hat.push((self.chi_hat * w, (k - 1) % basis.n, 1));
            }
            // |g_k| reaches 1 at the corners of the closed domain.
            m.psi_sup = a.abs();
            m.psi_t_sup = a.abs() * (1.0 + self.psi_t_tilt.abs());
            modes.push(m);
        }
        NoiseModel::new(basis, modes)
    }
}

/// A truncated noise model with `K = modes.len()` directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub modes: Vec<NoiseMode>,
    eta: f64,
}

impl NoiseModel {
    pub fn new(basis: &TensorBasis, modes: Vec<NoiseMode>) -> Result<Self> {
        for m in &modes {
            m.check(basis)?;
        }
        let eta = compute_eta(&modes);
        Ok(Self { modes, eta })
    }

    /// Model with user-supplied fields; sups are taken as grid maxima.
    pub fn from_fields(basis: &TensorBasis, mut modes: Vec<NoiseMode>) -> Result<Self> {
        modes.iter_mut().for_each(NoiseMode::refresh_sups);
        Self::new(basis, modes)
    }

    pub fn zero() -> Self {
        Self { modes: Vec::new(), eta: 0.0 }
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| *m == NoiseMode { psi_sup: m.psi_sup, psi_t_sup: m.psi_t_sup, ..Default::default() })
    }

    fn mode(&self, k: usize) -> Result<&NoiseMode> {
        self.modes.get(k).ok_or_else(|| HsgsError::Range(format!("noise mode {k} outside 0..{}", self.k())))
    }

    pub fn sigma1_apply(&self, basis: &TensorBasis, state: &State, k: usize) -> Result<GridField> {
        let m = self.mode(k)?;
        Ok(sigma1_grid(basis, m, &NoiseInputs::new(basis, state), 0))
    }

    pub fn sigma2_apply(&self, basis: &TensorBasis, state: &State, k: usize) -> Result<GridField> {
        let m = self.mode(k)?;
        Ok(sigma2_grid(basis, m, &NoiseInputs::new(basis, state), 0))
    }

    /// `P_n sigma_1(v) e_k` as a state with zero temperature.
    pub fn sigma1_projected(&self, basis: &TensorBasis, state: &State, k: usize) -> Result<State> {
        let f = self.sigma1_apply(basis, state, k)?;
        let mut out = State::zeros(basis);
        out.velocity = basis.project(&basis.velocity_blocks(), &f.values);
        Ok(out)
    }

    /// `P_n sigma_2(U) e_k` as a state with zero velocity.
    pub fn sigma2_projected(&self, basis: &TensorBasis, state: &State, k: usize) -> Result<State> {
        let f = self.sigma2_apply(basis, state, k)?;
        let mut out = State::zeros(basis);
        out.temperature = basis.project(&basis.temperature_blocks(), &f.values);
        Ok(out)
    }

    /// `P_n sigma(U) dW = sum_k dW_k P_n sigma(U) e_k`, evaluated through the combined mode.
    pub fn increment(&self, basis: &TensorBasis, state: &State, dw: &[f64]) -> Result<State> {
        if dw.len() != self.k() {
            return Err(HsgsError::Range(format!("{} increments for {} noise modes", dw.len(), self.k())));
        }
        let mode = NoiseMode::combine(&self.modes, dw);
        let inputs = NoiseInputs::new(basis, state);
        let s1 = sigma1_grid(basis, &mode, &inputs, 0);
        let s2 = sigma2_grid(basis, &mode, &inputs, 0);
        Ok(State {
            velocity: basis.project(&basis.velocity_blocks(), &s1.values),
            temperature: basis.project(&basis.temperature_blocks(), &s2.values),
            time: state.time,
        })
    }
}

/// `eta = sqrt(max(sum |PsiT_k|^2, sum |A Phi_k|^2, sum |Psi_k|^2))` with sup norms.
pub fn compute_eta(modes: &[NoiseMode]) -> f64 {
    let s1: f64 = modes.iter().map(|m| m.psi_t_sup.powi(2)).sum();
    let s2: f64 = modes.iter().map(|m| m.phi_mean_norm().powi(2)).sum();
    let s3: f64 = modes.iter().map(|m| m.psi_sup.powi(2)).sum();
    s1.max(s2).max(s3).sqrt()
}

/// State-dependent fields shared by all noise modes, at a set of depths.
pub struct NoiseInputs {
    pub nodes: Vec<f64>,
    vbar: Vec<f64>,
    /// `curl(d_x psi)`, `curl(d_y psi)` with `psi` the stream function of `v_bar`.
    shift: [Vec<f64>; 2],
    vbar_cells: [Vec<f64>; 2],
    /// `grad_vbar_cells[i][j] = d_j v_bar_i` on cells.
    grad_vbar_cells: [[Vec<f64>; 2]; 2],
    /// `d^j v_tilde / dz^j` node-major on faces, with centred gradients.
    vt: [Vec<f64>; 3],
    vt_grad: [[Vec<f64>; 2]; 3],
    /// `d^j v_tilde` averaged to cells, per component.
    vt_cells: [[Vec<f64>; 2]; 3],
    temp: [Vec<f64>; 3],
    temp_grad: [[Vec<f64>; 2]; 3],
}

fn layered_gradient(grid: &DiscreteGrid, layout: Layout, f: &[f64]) -> [Vec<f64>; 2] {
    let len = grid.layout_len(layout);
    let mut gx = Vec::with_capacity(f.len());
    let mut gy = Vec::with_capacity(f.len());
    for layer in f.chunks(len) {
        let (a, b) = grid.centered_gradient(layout, layer);
        gx.extend(a);
        gy.extend(b);
    }
    [gx, gy]
}

fn layered_cells(grid: &DiscreteGrid, f: &[f64]) -> [Vec<f64>; 2] {
    let len = grid.n_velocity();
    let mut u = Vec::with_capacity(f.len() / len * grid.n_cells());
    let mut v = Vec::with_capacity(u.capacity());
    for layer in f.chunks(len) {
        let (a, b) = grid.faces_to_cells(layer);
        u.extend(a);
        v.extend(b);
    }
    [u, v]
}

impl NoiseInputs {
    pub fn new(basis: &TensorBasis, state: &State) -> Self {
        Self::at(basis, state, &basis.grid.quad.nodes)
    }

    pub fn at(basis: &TensorBasis, state: &State, nodes: &[f64]) -> Self {
        let g = &basis.grid;
        let n = basis.n;
        let vb = basis.velocity_blocks();
        let tb = basis.temperature_blocks();
        let vbar = crate::state::barotropic_velocity(basis, &state.velocity);
        let psi = g.stream_function(&vbar);
        let (px, py) = g.centered_gradient(Layout::Nodes, &psi);
        let shift = [g.curl(&px), g.curl(&py)];
        let (uc, vc) = g.faces_to_cells(&vbar);
        let gu = g.centered_gradient(Layout::Cells, &uc);
        let gv = g.centered_gradient(Layout::Cells, &vc);
        let mut tilde = state.velocity.clone();
        tilde[..n].iter_mut().for_each(|v| *v = 0.0);
        let vt = [
            basis.synthesize_at(&vb, &tilde, nodes),
            basis.synthesize_at(&basis.dz_velocity_blocks(), &basis.dz_velocity(&tilde), nodes),
            basis.synthesize_at(&vb, &basis.dzz(&vb, &tilde), nodes),
        ];
        let temp = [
            basis.synthesize_at(&tb, &state.temperature, nodes),
            basis.synthesize_at(&basis.dz_temperature_blocks(), &basis.dz_temperature(&state.temperature), nodes),
            basis.synthesize_at(&tb, &basis.dzz(&tb, &state.temperature), nodes),
        ];
        let vt_grad = [0, 1, 2].map(|d| layered_gradient(g, Layout::Velocity, &vt[d]));
        let vt_cells = [0, 1, 2].map(|d| layered_cells(g, &vt[d]));
        let temp_grad = [0, 1, 2].map(|d| layered_gradient(g, Layout::Cells, &temp[d]));
        Self {
            nodes: nodes.to_vec(),
            vbar,
            shift,
            vbar_cells: [uc, vc],
            grad_vbar_cells: [[gu.0, gu.1], [gv.0, gv.1]],
            vt,
            vt_grad,
            vt_cells,
            temp,
            temp_grad,
        }
    }
}

/// `d^order/dz^order` of `cos(pi (z + h) / h)`.
fn shape_cos(h: f64, z: f64, order: usize) -> f64 {
    let k = PI / h;
    let a = k * (z + h);
    match order {
        0 => a.cos(),
        1 => -k * a.sin(),
        _ => -k * k * a.cos(),
    }
}

/// `d^order/dz^order` of `sin(pi (z + h) / h)`.
fn shape_sin(h: f64, z: f64, order: usize) -> f64 {
    let k = PI / h;
    let a = k * (z + h);
    match order {
        0 => a.sin(),
        1 => k * a.cos(),
        _ => -k * k * a.sin(),
    }
}

fn mode_derivative(m: VMode, h: f64, z: f64, order: usize) -> f64 {
    match order {
        0 => m.value(h, z),
        1 => m.dz_value(h, z),
        _ => -m.eigenvalue(h) * m.value(h, z),
    }
}

const BINOM: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]];

/// `d^order/dz^order sigma_1 e_k` at the input depths (velocity layout, node-major).
pub fn sigma1_grid(basis: &TensorBasis, m: &NoiseMode, inp: &NoiseInputs, order: usize) -> GridField {
    let g = &basis.grid;
    let h = basis.depth();
    let len = g.n_velocity();
    let nz = inp.nodes.len();
    let mut out = vec![0.0; nz * len];
    let chi_field = if m.chi != 0.0 { basis.dirichlet.vector(0).to_vec() } else { Vec::new() };
    let has_psi = !m.psi[0].is_empty() || !m.psi[1].is_empty();
    for (zi, &z) in inp.nodes.iter().enumerate() {
        let o = &mut out[zi * len..(zi + 1) * len];
        let r = zi * len..(zi + 1) * len;
        let cz = shape_cos(h, z, order);
        let lead = if order == 0 { 1.0 } else { 0.0 };
        let phi = [lead * m.phi[0][0] + m.phi[0][1] * cz, lead * m.phi[1][0] + m.phi[1][1] * cz];
        let zeta = lead * m.zeta[0] + m.zeta[1] * cz;
        let chi = if m.chi != 0.0 { m.chi * mode_derivative(VMode::cos(1), h, z, order) } else { 0.0 };
        let vt = &inp.vt[order][r.clone()];
        for p in 0..len {
            let mut s = phi[0] * inp.shift[0][p] + phi[1] * inp.shift[1][p] + zeta * inp.vbar[p] + m.nu * vt[p];
            if chi != 0.0 {
                s += chi * chi_field[p];
            }
            o[p] = s;
        }
        if has_psi {
            for (i, gd) in inp.vt_grad[order].iter().enumerate() {
                if !m.psi[i].is_empty() {
                    let gd = &gd[r.clone()];
                    o.iter_mut().zip(m.psi[i].iter().zip(gd)).for_each(|(o, (a, d))| *o += a * d);
                }
            }
        }
    }
    GridField { layout: Layout::Velocity, nz, values: out }
}

/// `d^order/dz^order sigma_2 e_k` at the input depths (cells, node-major).
pub fn sigma2_grid(basis: &TensorBasis, m: &NoiseMode, inp: &NoiseInputs, order: usize) -> GridField {
    let g = &basis.grid;
    let h = basis.depth();
    let len = g.n_cells();
    let nz = inp.nodes.len();
    let mut out = vec![0.0; nz * len];
    // z-independent part multiplying S(z): Theta : grad v_bar + zeta_hat . v_bar.
    let mut lower = vec![0.0; len];
    for i in 0..2 {
        if m.zeta_hat[i] != 0.0 {
            lower.iter_mut().zip(&inp.vbar_cells[i]).for_each(|(o, v)| *o += m.zeta_hat[i] * v);
        }
        for j in 0..2 {
            if m.theta[i][j] != 0.0 {
                lower.iter_mut().zip(&inp.grad_vbar_cells[i][j]).for_each(|(o, v)| *o += m.theta[i][j] * v);
            }
        }
    }
    let chi_fields: Vec<(f64, &[f64], VMode)> =
        m.chi_hat.iter().map(|&(a, mi, j)| (a, basis.neumann.vector(mi), VMode::sin(j))).collect();
    for (zi, &z) in inp.nodes.iter().enumerate() {
        let o = &mut out[zi * len..(zi + 1) * len];
        let r = zi * len..(zi + 1) * len;
        for (p, v) in o.iter_mut().zip(&inp.temp[order][r.clone()]) {
            *p = m.gamma * v;
        }
        let sd = shape_sin(h, z, order);
        if sd != 0.0 {
            o.iter_mut().zip(&lower).for_each(|(o, l)| *o += sd * l);
        }
        for i in 0..=order {
            let b = BINOM[order][i];
            // PsiT^{(i)} . grad T^{(order - i)}
            let cz = shape_cos(h, z, i);
            for c in 0..2 {
                let gd = &inp.temp_grad[order - i][c][r.clone()];
                let (base, tilt) = (&m.psi_t_base[c], &m.psi_t_tilt[c]);
                if i == 0 && !base.is_empty() {
                    o.iter_mut().zip(base.iter().zip(gd)).for_each(|(o, (a, d))| *o += b * a * d);
                }
                if !tilt.is_empty() {
                    o.iter_mut().zip(tilt.iter().zip(gd)).for_each(|(o, (a, d))| *o += b * cz * a * d);
                }
            }
            // S^{(i)} nu_hat . v_tilde^{(order - i)}
            let si = b * shape_sin(h, z, i);
            for c in 0..2 {
                if m.nu_hat[c] != 0.0 && si != 0.0 {
                    let vc = &inp.vt_cells[order - i][c][r.clone()];
                    o.iter_mut().zip(vc).for_each(|(o, v)| *o += si * m.nu_hat[c] * v);
                }
            }
        }
        for &(a, field, mode) in &chi_fields {
            let f = a * mode_derivative(mode, h, z, order);
            o.iter_mut().zip(field).for_each(|(o, v)| *o += f * v);
        }
    }
    GridField { layout: Layout::Cells, nz, values: out }
}

/// Which derivative a growth or Lipschitz condition controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `sigma` in `L^2`.
    L2,
    /// `d/dz sigma`.
    Dz,
    /// `(-Delta_H)^{1/2} sigma`.
    Grad,
    /// `d^2/dz^2 sigma`.
    Dzz,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::L2, Condition::Dz, Condition::Grad, Condition::Dzz];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::L2 => "L2",
            Condition::Dz => "H1zL2",
            Condition::Grad => "L2zH1",
            Condition::Dzz => "H2zL2",
        }
    }

    fn order(&self) -> usize {
        match self {
            Condition::Dz => 1,
            Condition::Dzz => 2,
            _ => 0,
        }
    }
}

/// Weighted `L^2(M)` square norm of a node-major field at the quadrature nodes, optionally
/// of its `(-Delta_H)^{1/2}`.
fn field_sq(grid: &DiscreteGrid, f: &GridField, gradient: bool) -> f64 {
    let w = &grid.quad.weights;
    (0..f.nz)
        .map(|z| {
            let l = f.level(z);
            let v = if gradient { free_gradient_sq(grid, f.layout, l) } else { grid.inner(l, l) };
            w[z] * v
        })
        .sum()
}

/// `||grad_H f||^2` over `G` from differences between neighbouring points of the same
/// component, with no wall ghosts: noise fields need not satisfy the state's boundary
/// conditions, so a Dirichlet form would charge them a spurious boundary layer.
pub fn free_gradient_sq(grid: &DiscreteGrid, layout: Layout, f: &[f64]) -> f64 {
    let (nx, ny) = (grid.nx, grid.ny);
    let (ix, iy) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
    let mut acc = 0.0;
    let mut run = |idx: &dyn Fn(usize, usize) -> usize, i0: usize, i1: usize, j0: usize, j1: usize| {
        for j in j0..j1 {
            for i in i0..i1 {
                let c = f[idx(i, j)];
                if i + 1 < i1 {
                    acc += ix * (f[idx(i + 1, j)] - c).powi(2);
                }
                if j + 1 < j1 {
                    acc += iy * (f[idx(i, j + 1)] - c).powi(2);
                }
            }
        }
    };
    match layout {
        Layout::Cells => run(&|i, j| grid.cell(i, j), 0, nx, 0, ny),
        Layout::Velocity => {
            run(&|i, j| grid.uface(i, j), 1, nx, 0, ny);
            run(&|i, j| grid.vface(i, j), 0, nx, 1, ny);
        }
        Layout::Nodes => run(&|i, j| grid.node(i, j), 1, nx, 1, ny),
    }
    acc * grid.cell_area()
}

/// `||D sigma(U)||^2_HS = sum_k ||D sigma(U) e_k||^2` for one condition.
pub fn sigma_hs_sq(basis: &TensorBasis, model: &NoiseModel, state: &State, cond: Condition) -> f64 {
    let inp = NoiseInputs::new(basis, state);
    hs_sq_with(basis, &model.modes, &inp, cond)
}

fn hs_sq_with(basis: &TensorBasis, modes: &[NoiseMode], inp: &NoiseInputs, cond: Condition) -> f64 {
    let grad = cond == Condition::Grad;
    modes
        .iter()
        .map(|m| {
            field_sq(&basis.grid, &sigma1_grid(basis, m, inp, cond.order()), grad)
                + field_sq(&basis.grid, &sigma2_grid(basis, m, inp, cond.order()), grad)
        })
        .sum()
}

/// Spectral weights per coefficient: `(lambda, kappa)` for velocity then temperature.
fn spectral_weights(basis: &TensorBasis) -> Vec<(f64, f64)> {
    let vb = basis.velocity_blocks();
    let tb = basis.temperature_blocks();
    let lam = basis.block_eigs(&vb).into_iter().chain(basis.block_eigs(&tb));
    let kap = basis.block_wavenumbers(&vb).into_iter().chain(basis.block_wavenumbers(&tb));
    lam.zip(kap).map(|(l, k)| (l.max(0.0), k)).collect()
}

/// `(low, high)` state norms of a growth condition: the bound reads
/// `||D sigma(U)||^2 <= c (1 + low) + eta^2 high`.
pub fn growth_norms(basis: &TensorBasis, state: &State, cond: Condition) -> (f64, f64) {
    match cond {
        Condition::L2 => (spectral_sq(basis, state, |_, _| 1.0), spectral_sq(basis, state, |l, _| l)),
        Condition::Dz => {
            (spectral_sq(basis, state, |_, k| 1.0 + k * k), spectral_sq(basis, state, |l, k| l * k * k))
        }
        Condition::Grad => (spectral_sq(basis, state, |l, _| 1.0 + l), spectral_sq(basis, state, |l, _| l * l)),
        Condition::Dzz => (
            spectral_sq(basis, state, |_, k| 1.0 + k * k + k.powi(4)),
            spectral_sq(basis, state, |l, k| l * k.powi(4)),
        ),
    }
}

/// Square norm of `U - U#` used by a Lipschitz condition.
pub fn lipschitz_norm_sq(basis: &TensorBasis, diff: &State, cond: Condition) -> f64 {
    match cond {
        Condition::L2 => spectral_sq(basis, diff, |l, _| 1.0 + l),
        Condition::Dz => spectral_sq(basis, diff, |l, k| (1.0 + k * k) * (1.0 + l)),
        Condition::Grad => spectral_sq(basis, diff, |l, _| 1.0 + l + l * l),
        Condition::Dzz => spectral_sq(basis, diff, |l, k| (1.0 + k * k + k.powi(4)) * (1.0 + l)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    /// Empirical Lipschitz ratio per condition, in [`Condition::ALL`] order.
    pub per_condition: [f64; 4],
    pub gamma: f64,
}

/// Empirical Lipschitz constants `max ||sigma(U) - sigma(U#)||_HS / ||U - U#||` over pairs.
pub fn compute_gamma(basis: &TensorBasis, model: &NoiseModel, pairs: &[(State, State)]) -> GammaReport {
    let mut per = [0.0f64; 4];
    for (a, b) in pairs {
        let ia = NoiseInputs::new(basis, a);
        let ib = NoiseInputs::new(basis, b);
        let mut diff = a.clone();
        diff.axpy(-1.0, b);
        for (ci, cond) in Condition::ALL.iter().enumerate() {
            let den = lipschitz_norm_sq(basis, &diff, *cond);
            if den <= 0.0 {
                continue;
            }
            let grad = *cond == Condition::Grad;
            let mut num = 0.0;
            for m in &model.modes {
                let mut s1 = sigma1_grid(basis, m, &ia, cond.order());
                let t1 = sigma1_grid(basis, m, &ib, cond.order());
                s1.values.iter_mut().zip(&t1.values).for_each(|(x, y)| *x -= y);
                let mut s2 = sigma2_grid(basis, m, &ia, cond.order());
                let t2 = sigma2_grid(basis, m, &ib, cond.order());
                s2.values.iter_mut().zip(&t2.values).for_each(|(x, y)| *x -= y);
                num += field_sq(&basis.grid, &s1, grad) + field_sq(&basis.grid, &s2, grad);
            }
            per[ci] = per[ci].max((num / den).sqrt());
        }
    }
    GammaReport { per_condition: per, gamma: per.iter().fold(0.0f64, |a, b| a.max(*b)) }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionFit {
    pub name: String,
    pub eta2_declared: f64,
    /// Largest `lhs / high` over gradient-dominated samples.
    pub eta2_fit: f64,
    /// Smallest `c` making the bound hold on every sample with the declared `eta^2`.
    pub c_fit: f64,
    pub samples: usize,
    pub pass: bool,
}

impl ConditionFit {
    fn fit(name: &str, eta2: f64, rows: &[(f64, f64, f64)]) -> Self {
        let mut eta2_fit = 0.0f64;
        let mut c_fit = 0.0f64;
        let mut used = 0;
        for &(lhs, low, high) in rows {
            if high > GRADIENT_DOMINANCE * (1.0 + low) {
                eta2_fit = eta2_fit.max(lhs / high);
                used += 1;
            }
            c_fit = c_fit.max((lhs - eta2 * high).max(0.0) / (1.0 + low));
        }
        Self {
            name: name.into(),
            eta2_declared: eta2,
            eta2_fit,
            c_fit,
            samples: used,
            pass: eta2_fit <= ETA_HEADROOM * eta2 + 1e-12,
        }
    }

    /// `sqrt(eta2_fit / eta2_declared)`, or 0 for a zero model.
    pub fn eta_ratio(&self) -> f64 {
        if self.eta2_declared > 0.0 {
            (self.eta2_fit / self.eta2_declared).sqrt()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub eta: f64,
    pub conditions: Vec<ConditionFit>,
    pub barotropic: ConditionFit,
    /// Largest `||d/dz sigma_1||^2` and `||sigma_2||^2` on the lids; both traces of the
    /// state-dependent right-hand sides vanish for states in the basis.
    pub lid_sigma1_dz: f64,
    pub lid_sigma2: f64,
    pub lid_tol: f64,
}

impl GrowthReport {
    pub fn pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
            && self.barotropic.pass
            && self.lid_sigma1_dz <= self.lid_tol
            && self.lid_sigma2 <= self.lid_tol
    }
}

/// Gradient-dominated sample states: every single-coefficient state, then `extra` random
/// states weighted towards high horizontal frequencies. Amplitudes are large so that the
/// constant in `1 + low` is negligible.
pub fn growth_samples<R: Rng + ?Sized>(basis: &TensorBasis, extra: usize, rng: &mut R) -> Vec<State> {
    const AMP: f64 = 1e3;
    let zero = State::zeros(basis);
    let nv = zero.velocity.len();
    let nt = zero.temperature.len();
    let mut out = Vec::with_capacity(nv + nt + extra);
    for i in 0..nv + nt {
        let mut s = zero.clone();
        if i < nv {
            s.velocity[i] = AMP;
        } else {
            s.temperature[i - nv] = AMP;
        }
        out.push(s);
    }
    let w = spectral_weights(basis);
    for _ in 0..extra {
        let mut s = zero.clone();
        for (i, &(l, _)) in w.iter().enumerate() {
            let c: f64 = rng.sample::<f64, _>(StandardNormal) * AMP * (1.0 + l).sqrt();
            if i < nv {
                s.velocity[i] = c;
            } else {
                s.temperature[i - nv] = c;
            }
        }
        out.push(s);
    }
    out
}

/// Fits every growth condition of the model on `samples` (see [`growth_samples`]).
pub fn check_growth(basis: &TensorBasis, model: &NoiseModel, samples: &[State]) -> GrowthReport {
    let eta2 = model.eta().powi(2);
    let g = &basis.grid;
    let h = basis.depth();
    let lids = [-h, 0.0];
    let mut rows: [Vec<(f64, f64, f64)>; 4] = Default::default();
    let mut bar_rows = Vec::with_capacity(samples.len());
    let mut lid1 = 0.0f64;
    let mut lid2 = 0.0f64;
    for s in samples {
        let inp = NoiseInputs::new(basis, s);
        for (ci, cond) in Condition::ALL.iter().enumerate() {
            let (low, high) = growth_norms(basis, s, *cond);
            rows[ci].push((hs_sq_with(basis, &model.modes, &inp, *cond), low, high));
        }
        // Barotropic: ||(-Delta)^{1/2} A sigma_1||^2 over M against ||Delta v_bar||^2.
        let vbar = crate::state::barotropic_velocity(basis, &s.velocity);
        let lap = g.lap_velocity(&vbar);
        let high = h * g.inner(&lap, &lap);
        let low = spectral_sq(basis, &State { temperature: vec![0.0; s.temperature.len()], ..s.clone() }, |l, _| l);
        let mut lhs = 0.0;
        for m in &model.modes {
            let f = sigma1_grid(basis, m, &inp, 0);
            let avg = crate::state::vertical_average(g, &f);
            lhs += h * free_gradient_sq(g, Layout::Velocity, &avg);
        }
        bar_rows.push((lhs, low, high));
        let trace = NoiseInputs::at(basis, s, &lids);
        for m in &model.modes {
            lid1 = lid1.max(field_sq_plain(g, &sigma1_grid(basis, m, &trace, 1)));
            lid2 = lid2.max(field_sq_plain(g, &sigma2_grid(basis, m, &trace, 0)));
        }
    }
    let conditions = Condition::ALL.iter().zip(&rows).map(|(c, r)| ConditionFit::fit(c.name(), eta2, r)).collect();
    let scale = samples.iter().map(|s| s.dot(s)).fold(1.0f64, f64::max);
    GrowthReport {
        eta: model.eta(),
        conditions,
        barotropic: ConditionFit::fit("barotropic", eta2, &bar_rows),
        lid_sigma1_dz: lid1,
        lid_sigma2: lid2,
        lid_tol: 1e-20 * scale * (1.0 + eta2),
    }
}

/// Largest per-layer `L^2(G)` square norm.
fn field_sq_plain(grid: &DiscreteGrid, f: &GridField) -> f64 {
    (0..f.nz).map(|z| grid.inner(f.level(z), f.level(z))).fold(0.0, f64::max)
}

/// `K` independent `N(0, dt)` increments.
pub fn wiener_increments<R: Rng + ?Sized>(rng: &mut R, k: usize, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HsgsError::Range(format!("time step must be positive, got {dt}")));
    }
    let s = dt.sqrt();
    Ok((0..k).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Mean-zero part of `A sigma_1 e_k` against the Leray projection: `||(1 - P_G) A sigma_1 e_k||`.
pub fn leray_defect(basis: &TensorBasis, model: &NoiseModel, state: &State, k: usize) -> Result<f64> {
    let f = model.sigma1_apply(basis, state, k)?;
    let g = &basis.grid;
    let avg = crate::state::vertical_average(g, &f);
    let (_, grad) = g.leray_decompose(&avg);
    Ok(g.norm(&grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CylinderDomain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis() -> TensorBasis {
        TensorBasis::build(&CylinderDomain::new(1.0, 1.2, 0.8, 12, 10, 9).unwrap(), 12, 2).unwrap()
    }

    fn full_family() -> NoiseFamily {
        NoiseFamily {
            modes: 4,
            amplitude: 0.3,
            decay: 2.0,
            phi_amplitude: 0.2,
            psi_t_tilt: 0.3,
            phi_tilt: 0.5,
            zeta: 0.1,
            nu: 0.2,
            chi: 0.3,
            gamma: 0.2,
            theta: 0.1,
            zeta_hat: 0.1,
            nu_hat: 0.2,
            chi_hat: 0.3,
        }
    }

    fn random_state(b: &TensorBasis, seed: u64) -> State {
        State::random(b, &mut ChaCha8Rng::seed_from_u64(seed), 0.5, 1.0)
    }

    #[test]
    fn zero_state_without_forcing_terms_gives_zero() {
        let b = basis();
        let model = NoiseFamily { chi: 0.0, chi_hat: 0.0, ..full_family() }.build(&b).unwrap();
        let s = State::zeros(&b);
        for k in 0..model.k() {
            assert_eq!(model.sigma1_apply(&b, &s, k).unwrap().max_abs(), 0.0);
            assert_eq!(model.sigma2_apply(&b, &s, k).unwrap().max_abs(), 0.0);
        }
        assert!(matches!(model.sigma1_apply(&b, &s, 4), Err(HsgsError::Range(_))));
    }

    #[test]
    fn eta_from_sup_sums() {
        let b = basis();
        assert_eq!(NoiseModel::new(&b, vec![NoiseMode::default(); 3]).unwrap().eta(), 0.0);
        let nc = b.grid.n_cells();
        let m = NoiseMode { psi_t_base: [vec![0.3; nc], Vec::new()], ..Default::default() };
        let model = NoiseModel::from_fields(&b, vec![m]).unwrap();
        assert!((model.eta() - 0.3).abs() < 1e-15);
        let fam = NoiseFamily { modes: 3, amplitude: 1.0, decay: 1.0, ..Default::default() }.build(&b).unwrap();
        let want = (1.0f64 + 0.25 + 1.0 / 9.0).sqrt();
        assert!((fam.eta() - want).abs() < 1e-14);
    }

    #[test]
    fn barotropic_part_is_leray_compatible() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        for seed in 0..3 {
            let s = random_state(&b, seed);
            for k in 0..model.k() {
                assert!(leray_defect(&b, &model, &s, k).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_and_remainder_split() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let s = random_state(&b, 5);
        let g = &b.grid;
        for k in 0..model.k() {
            let m = &model.modes[k];
            let f = model.sigma1_apply(&b, &s, k).unwrap();
            let avg = crate::state::vertical_average(g, &f);
            // A sigma_1 = (A Phi) . grad v_bar + zeta_0 v_bar.
            let inp = NoiseInputs::new(&b, &s);
            for p in 0..avg.len() {
                let want = m.phi[0][0] * inp.shift[0][p] + m.phi[1][0] * inp.shift[1][p] + m.zeta[0] * inp.vbar[p];
                assert!((avg[p] - want).abs() < 1e-12, "{k} {p}");
            }
            // Applying to v_tilde alone yields a field with zero vertical mean.
            let tilde = State { velocity: { let mut v = s.velocity.clone(); v[..b.n].iter_mut().for_each(|x| *x = 0.0); v }, ..s.clone() };
            let hom = NoiseModel::new(&b, vec![m.homogeneous()]).unwrap();
            let ft = hom.sigma1_apply(&b, &tilde, 0).unwrap();
            assert!(crate::state::vertical_average(g, &ft).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn z_independent_zeta_keeps_field_barotropic() {
        let b = basis();
        let m = NoiseMode { zeta: [0.7, 0.0], ..Default::default() };
        let model = NoiseModel::new(&b, vec![m]).unwrap();
        let s = random_state(&b, 2).barotropic_part(&b);
        let f = model.sigma1_apply(&b, &s, 0).unwrap();
        let r = crate::state::baroclinic_remainder(&b.grid, &f);
        assert!(r.max_abs() < 1e-13);
    }

    #[test]
    fn gamma_only_temperature_noise() {
        let b = basis();
        let m = NoiseMode { gamma: 0.4, ..Default::default() };
        let model = NoiseModel::new(&b, vec![m]).unwrap();
        let s = random_state(&b, 3);
        let f = model.sigma2_apply(&b, &s, 0).unwrap();
        let t = crate::state::temperature_field(&b, &s.temperature);
        for (a, c) in f.values.iter().zip(&t.values) {
            assert!((a - 0.4 * c).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_temperature_is_not_transported() {
        let b = basis();
        let model = NoiseFamily { modes: 3, amplitude: 0.5, psi_t_tilt: 0.4, ..Default::default() }.build(&b).unwrap();
        let mut s = State::zeros(&b);
        s.temperature[0] = 1.0;
        for k in 0..3 {
            assert!(model.sigma2_apply(&b, &s, k).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn dz_derivative_commutes_with_projection() {
        // <d/dz sigma, D_m s_k> = -kappa_k <sigma, D_m c_k> since s_k vanishes on the lids.
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let s = random_state(&b, 7);
        let inp = NoiseInputs::new(&b, &s);
        for m in &model.modes {
            let f = sigma1_grid(&b, m, &inp, 0);
            let df = sigma1_grid(&b, m, &inp, 1);
            let lhs = b.project(&b.dz_velocity_blocks(), &df.values);
            let rhs = b.dz_velocity(&b.project(&b.velocity_blocks(), &f.values));
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-10, "{x} {y}");
            }
            let f2 = sigma2_grid(&b, m, &inp, 0);
            let df2 = sigma2_grid(&b, m, &inp, 1);
            let lhs = b.project(&b.dz_temperature_blocks(), &df2.values);
            let rhs = b.dz_temperature(&b.project(&b.temperature_blocks(), &f2.values));
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-10, "{x} {y}");
            }
        }
    }

    #[test]
    fn dz_derivatives_match_finite_differences() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let s = random_state(&b, 11);
        let (z0, d) = (-0.31, 1e-3);
        let zs = [z0 - 2.0 * d, z0 - d, z0, z0 + d, z0 + 2.0 * d];
        let inp = NoiseInputs::at(&b, &s, &zs);
        for m in &model.modes {
            for (vals, first, second) in [
                (sigma1_grid(&b, m, &inp, 0), sigma1_grid(&b, m, &inp, 1), sigma1_grid(&b, m, &inp, 2)),
                (sigma2_grid(&b, m, &inp, 0), sigma2_grid(&b, m, &inp, 1), sigma2_grid(&b, m, &inp, 2)),
            ] {
                let l = vals.layer_len();
                let scale = vals.max_abs().max(1.0);
                for p in 0..l {
                    let v = |i: usize| vals.values[i * l + p];
                    let fd1 = (v(0) - 8.0 * v(1) + 8.0 * v(3) - v(4)) / (12.0 * d);
                    let fd2 = (-v(0) + 16.0 * v(1) - 30.0 * v(2) + 16.0 * v(3) - v(4)) / (12.0 * d * d);
                    assert!((fd1 - first.values[2 * l + p]).abs() < 1e-7 * scale);
                    assert!((fd2 - second.values[2 * l + p]).abs() < 1e-4 * scale);
                }
            }
        }
    }

    #[test]
    fn affine_parts_cancel_in_differences() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let hom = NoiseModel::new(&b, model.modes.iter().map(NoiseMode::homogeneous).collect()).unwrap();
        let (u, w) = (random_state(&b, 1), random_state(&b, 2));
        let mut diff = u.clone();
        diff.axpy(-1.0, &w);
        for k in 0..model.k() {
            let a = model.sigma1_apply(&b, &u, k).unwrap();
            let c = model.sigma1_apply(&b, &w, k).unwrap();
            let d = hom.sigma1_apply(&b, &diff, k).unwrap();
            for i in 0..a.values.len() {
                assert!((a.values[i] - c.values[i] - d.values[i]).abs() < 1e-12);
            }
            let a = model.sigma2_apply(&b, &u, k).unwrap();
            let c = model.sigma2_apply(&b, &w, k).unwrap();
            let d = hom.sigma2_apply(&b, &diff, k).unwrap();
            for i in 0..a.values.len() {
                assert!((a.values[i] - c.values[i] - d.values[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn increment_is_sum_of_projected_modes() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let s = random_state(&b, 4);
        let dw = [0.3, -1.1, 0.7, 0.05];
        let inc = model.increment(&b, &s, &dw).unwrap();
        let mut want = State::zeros(&b);
        for k in 0..model.k() {
            want.axpy(dw[k], &model.sigma1_projected(&b, &s, k).unwrap());
            want.axpy(dw[k], &model.sigma2_projected(&b, &s, k).unwrap());
        }
        for (a, c) in inc.coeffs().zip(want.coeffs()) {
            assert!((a - c).abs() < 1e-12);
        }
        assert!(model.increment(&b, &s, &dw[..2]).is_err());
    }

    #[test]
    fn wiener_increments_contract() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = wiener_increments(&mut r1, 5, 0.01).unwrap();
        let c = wiener_increments(&mut r2, 5, 0.01).unwrap();
        assert_eq!(a, c);
        assert!(wiener_increments(&mut r1, 0, 0.1).unwrap().is_empty());
        assert!(wiener_increments(&mut r1, 2, 0.0).is_err());
        assert!(wiener_increments(&mut r1, 2, -1.0).is_err());
    }

    #[test]
    fn zero_model_passes_growth() {
        let b = basis();
        let model = NoiseModel::zero();
        let samples = growth_samples(&b, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let rep = check_growth(&b, &model, &samples);
        assert!(rep.pass());
        assert!(rep.conditions.iter().all(|c| c.eta2_fit == 0.0));
    }

    #[test]
    fn lid_traces_vanish_for_full_family() {
        let b = basis();
        let model = full_family().build(&b).unwrap();
        let samples: Vec<State> = (0..3).map(|i| random_state(&b, 20 + i)).collect();
        let rep = check_growth(&b, &model, &samples);
        assert!(rep.lid_sigma1_dz <= rep.lid_tol, "{}", rep.lid_sigma1_dz);
        assert!(rep.lid_sigma2 <= rep.lid_tol, "{}", rep.lid_sigma2);
    }
}
