//! Cylinder geometry and the staggered finite-difference grid on its cross-section.
//!
//! The horizontal rectangle `G = (0, Lx) x (0, Ly)` carries a marker-and-cell layout:
//! temperature and pressure live at cell centres, the two velocity components on the
//! interior x- and y-faces, and stream functions on the interior cell corners (nodes).
//! Every point of every layout carries the same quadrature weight `dx * dy`, so the
//! discrete inner product of any two fields is `dx * dy * sum(f * g)` and adjointness
//! statements reduce to plain matrix transposes.
//!
//! The vertical direction is represented by a trapezoidal quadrature on `(-h, 0)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{HsgsError, Result};

pub const MIN_HORIZONTAL_CELLS: usize = 4;
pub const MIN_VERTICAL_NODES: usize = 4;

/// `M = G x (-h, 0)` together with its grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderDomain {
    pub lx: f64,
    pub ly: f64,
    pub depth: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Default for CylinderDomain {
    fn default() -> Self {
        Self { lx: 1.0, ly: 1.0, depth: 1.0, nx: 16, ny: 16, nz: 9 }
    }
}

impl CylinderDomain {
    pub fn new(lx: f64, ly: f64, depth: f64, nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let d = Self { lx, ly, depth, nx, ny, nz };
        d.validate()?;
        Ok(d)
    }

    /// Unit square of unit depth.
    pub fn unit(n: usize, nz: usize) -> Result<Self> {
        Self::new(1.0, 1.0, 1.0, n, n, nz)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("Lx", self.lx), ("Ly", self.ly), ("h", self.depth)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HsgsError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.nx < MIN_HORIZONTAL_CELLS || self.ny < MIN_HORIZONTAL_CELLS {
            return Err(HsgsError::Config(format!(
                "horizontal grid {}x{} below minimum {MIN_HORIZONTAL_CELLS}",
                self.nx, self.ny
            )));
        }
        if self.nz < MIN_VERTICAL_NODES {
            return Err(HsgsError::Config(format!(
                "vertical quadrature count {} below minimum {MIN_VERTICAL_NODES}",
                self.nz
            )));
        }
        Ok(())
    }

    pub fn horizontal_area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly * self.depth
    }
}

/// One-dimensional boundary treatment of a grid direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc1d {
    /// Unknowns at the `n - 1` interior nodes, zero at both end nodes.
    NodeDirichlet,
    /// Unknowns at `n` cell centres, mirror ghost (zero flux) at both walls.
    CellNeumann,
    /// Unknowns at `n` cell centres, antisymmetric ghost (zero value on the wall).
    CellDirichlet,
}

/// Orthonormal eigenvectors of the 1D second-difference operator with a given
/// boundary treatment. Rows of `vecs` are the eigenvectors (Euclidean-orthonormal).
#[derive(Debug, Clone)]
pub struct Modes1d {
    pub bc: Bc1d,
    pub len: usize,
    pub eigs: Vec<f64>,
    pub vecs: Vec<f64>,
}

impl Modes1d {
    pub fn new(bc: Bc1d, cells: usize, spacing: f64) -> Self {
        let n = cells as f64;
        let eig = |k: usize| {
            let s = (k as f64 * PI / (2.0 * n)).sin();
            4.0 * s * s / (spacing * spacing)
        };
        let (len, ks): (usize, Vec<usize>) = match bc {
            Bc1d::NodeDirichlet => (cells - 1, (1..cells).collect()),
            Bc1d::CellNeumann => (cells, (0..cells).collect()),
            Bc1d::CellDirichlet => (cells, (1..=cells).collect()),
        };
        let mut vecs = vec![0.0; len * len];
        let mut eigs = Vec::with_capacity(len);
        for (row, &k) in ks.iter().enumerate() {
            eigs.push(eig(k));
            let kf = k as f64;
            for i in 0..len {
                let val = match bc {
                    Bc1d::NodeDirichlet => (2.0 / n).sqrt() * (kf * PI * (i + 1) as f64 / n).sin(),
                    Bc1d::CellNeumann => {
                        let c = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                        c * (kf * PI * (i as f64 + 0.5) / n).cos()
                    }
                    Bc1d::CellDirichlet => {
                        let c = if k == cells { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                        c * (kf * PI * (i as f64 + 0.5) / n).sin()
                    }
                };
                vecs[row * len + i] = val;
            }
        }
        Self { bc, len, eigs, vecs }
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.vecs[k * self.len..(k + 1) * self.len]
    }
}

/// Separable transform `c = (Y ⊗ X) f` for a field stored row-major as `f[j * nx + i]`.
pub fn forward2(x: &Modes1d, y: &Modes1d, f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (x.len, y.len);
    debug_assert_eq!(f.len(), nx * ny);
    let mut tmp = vec![0.0; nx * ny];
    for j in 0..ny {
        let fr = &f[j * nx..(j + 1) * nx];
        for ka in 0..nx {
            let xr = x.row(ka);
            tmp[j * nx + ka] = xr.iter().zip(fr).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; nx * ny];
    for kb in 0..ny {
        let yr = y.row(kb);
        let orow = &mut out[kb * nx..(kb + 1) * nx];
        for (j, &yv) in yr.iter().enumerate() {
            if yv == 0.0 {
                continue;
            }
            let tr = &tmp[j * nx..(j + 1) * nx];
            for (o, t) in orow.iter_mut().zip(tr) {
                *o += yv * t;
            }
        }
    }
    out
}

/// Inverse of [`forward2`].
pub fn inverse2(x: &Modes1d, y: &Modes1d, c: &[f64]) -> Vec<f64> {
    let (nx, ny) = (x.len, y.len);
    debug_assert_eq!(c.len(), nx * ny);
    let mut tmp = vec![0.0; nx * ny];
    for kb in 0..ny {
        let yr = y.row(kb);
        let crow = &c[kb * nx..(kb + 1) * nx];
        for (j, &yv) in yr.iter().enumerate() {
            let trow = &mut tmp[j * nx..(j + 1) * nx];
            for (t, cv) in trow.iter_mut().zip(crow) {
                *t += yv * cv;
            }
        }
    }
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        let trow = &tmp[j * nx..(j + 1) * nx];
        let orow = &mut out[j * nx..(j + 1) * nx];
        for (ka, &tv) in trow.iter().enumerate() {
            if tv == 0.0 {
                continue;
            }
            for (o, xv) in orow.iter_mut().zip(x.row(ka)) {
                *o += tv * xv;
            }
        }
    }
    out
}

/// Trapezoidal rule on `(-h, 0)` with equally spaced nodes including both lids.
///
/// Integrates `cos(m pi (z + h) / h)` exactly for every integer `0 < m < 2 (nodes - 1)`,
/// and polynomials of degree one exactly.
#[derive(Debug, Clone)]
pub struct VerticalQuadrature {
    pub depth: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VerticalQuadrature {
    pub fn trapezoid(depth: f64, count: usize) -> Self {
        let intervals = (count - 1) as f64;
        let dz = depth / intervals;
        let nodes = (0..count).map(|j| -depth + j as f64 * dz).collect();
        let weights = (0..count)
            .map(|j| if j == 0 || j == count - 1 { 0.5 * dz } else { dz })
            .collect();
        Self { depth, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest trigonometric degree `m` integrated exactly.
    pub fn trig_exactness(&self) -> usize {
        2 * (self.len() - 1) - 1
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Which horizontal layout a per-layer array lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Cell centres, `nx * ny` points.
    Cells,
    /// Both velocity components: `(nx - 1) * ny` x-faces followed by `nx * (ny - 1)` y-faces.
    Velocity,
    /// Interior corners, `(nx - 1) * (ny - 1)` points.
    Nodes,
}

/// Horizontal operators and the vertical quadrature of a [`CylinderDomain`].
#[derive(Debug, Clone)]
pub struct DiscreteGrid {
    pub domain: CylinderDomain,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub quad: VerticalQuadrature,
    pub(crate) neumann_x: Modes1d,
    pub(crate) neumann_y: Modes1d,
    pub(crate) node_x: Modes1d,
    pub(crate) node_y: Modes1d,
    pub(crate) wall_x: Modes1d,
    pub(crate) wall_y: Modes1d,
}

/// Builds the staggered grid and vertical quadrature for `domain`.
pub fn build_grid(domain: &CylinderDomain) -> Result<DiscreteGrid> {
    domain.validate()?;
    let (nx, ny) = (domain.nx, domain.ny);
    let dx = domain.lx / nx as f64;
    let dy = domain.ly / ny as f64;
    Ok(DiscreteGrid {
        domain: *domain,
        dx,
        dy,
        nx,
        ny,
        quad: VerticalQuadrature::trapezoid(domain.depth, domain.nz),
        neumann_x: Modes1d::new(Bc1d::CellNeumann, nx, dx),
        neumann_y: Modes1d::new(Bc1d::CellNeumann, ny, dy),
        node_x: Modes1d::new(Bc1d::NodeDirichlet, nx, dx),
        node_y: Modes1d::new(Bc1d::NodeDirichlet, ny, dy),
        wall_x: Modes1d::new(Bc1d::CellDirichlet, nx, dx),
        wall_y: Modes1d::new(Bc1d::CellDirichlet, ny, dy),
    })
}

impl DiscreteGrid {
    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
    #[inline]
    pub fn n_ufaces(&self) -> usize {
        (self.nx - 1) * self.ny
    }
    #[inline]
    pub fn n_vfaces(&self) -> usize {
        self.nx * (self.ny - 1)
    }
    #[inline]
    pub fn n_velocity(&self) -> usize {
        self.n_ufaces() + self.n_vfaces()
    }
    #[inline]
    pub fn n_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn layout_len(&self, layout: Layout) -> usize {
        match layout {
            Layout::Cells => self.n_cells(),
            Layout::Velocity => self.n_velocity(),
            Layout::Nodes => self.n_nodes(),
        }
    }

    /// Quadrature weight of every horizontal point.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Discrete `L^2(G)` inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_area() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    // Index helpers. `i`, `j` are the integer grid coordinates described in the module docs.
    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    /// x-face at `x = i dx` (1 <= i <= nx-1), row `j`.
    #[inline]
    pub fn uface(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + (i - 1)
    }
    /// y-face at `y = j dy` (1 <= j <= ny-1), column `i`, offset into the velocity layer.
    #[inline]
    pub fn vface(&self, i: usize, j: usize) -> usize {
        self.n_ufaces() + (j - 1) * self.nx + i
    }
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.nx - 1) + (i - 1)
    }

    /// Physical coordinates of every point of a layout, in storage order.
    pub fn coordinates(&self, layout: Layout) -> Vec<(f64, f64)> {
        let (dx, dy) = (self.dx, self.dy);
        let mut out = Vec::with_capacity(self.layout_len(layout));
        match layout {
            Layout::Cells => {
                for j in 0..self.ny {
                    for i in 0..self.nx {
                        out.push(((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy));
                    }
                }
            }
            Layout::Velocity => {
                for j in 0..self.ny {
                    for i in 1..self.nx {
                        out.push((i as f64 * dx, (j as f64 + 0.5) * dy));
                    }
                }
                for j in 1..self.ny {
                    for i in 0..self.nx {
                        out.push(((i as f64 + 0.5) * dx, j as f64 * dy));
                    }
                }
            }
            Layout::Nodes => {
                for j in 1..self.ny {
                    for i in 1..self.nx {
                        out.push((i as f64 * dx, j as f64 * dy));
                    }
                }
            }
        }
        out
    }

    // ---------------------------------------------------------------------------------
    // Neumann flavour: cells <-> faces.

    /// Gradient of a cell field onto the interior faces (zero normal flux on the walls).
    pub fn grad_cells(&self, p: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_velocity()];
        for j in 0..ny {
            for i in 1..nx {
                out[self.uface(i, j)] = (p[self.cell(i, j)] - p[self.cell(i - 1, j)]) / self.dx;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out[self.vface(i, j)] = (p[self.cell(i, j)] - p[self.cell(i, j - 1)]) / self.dy;
            }
        }
        out
    }

    /// Divergence of a face field into cells; the negative adjoint of [`Self::grad_cells`].
    pub fn div_faces(&self, vel: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_cells()];
        for j in 0..ny {
            for i in 0..nx {
                let ue = if i + 1 < nx { vel[self.uface(i + 1, j)] } else { 0.0 };
                let uw = if i > 0 { vel[self.uface(i, j)] } else { 0.0 };
                let vn = if j + 1 < ny { vel[self.vface(i, j + 1)] } else { 0.0 };
                let vs = if j > 0 { vel[self.vface(i, j)] } else { 0.0 };
                out[self.cell(i, j)] = (ue - uw) / self.dx + (vn - vs) / self.dy;
            }
        }
        out
    }

    /// Neumann Laplacian on cells (symmetric, negative semidefinite, constants in kernel).
    pub fn lap_neumann(&self, p: &[f64]) -> Vec<f64> {
        self.div_faces(&self.grad_cells(p))
    }

    // ---------------------------------------------------------------------------------
    // Dirichlet flavour: nodes <-> edges. An x-edge sits where a y-face sits and vice versa,
    // so the gradient is stored in the velocity layout as [d/dy on x-faces | d/dx on y-faces].

    /// Gradient of a node field (zero on the boundary nodes) onto the edges.
    pub fn grad_nodes(&self, psi: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let at = |i: usize, j: usize| {
            if i == 0 || j == 0 || i == nx || j == ny {
                0.0
            } else {
                psi[self.node(i, j)]
            }
        };
        let mut out = vec![0.0; self.n_velocity()];
        for j in 0..ny {
            for i in 1..nx {
                out[self.uface(i, j)] = (at(i, j + 1) - at(i, j)) / self.dy;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out[self.vface(i, j)] = (at(i + 1, j) - at(i, j)) / self.dx;
            }
        }
        out
    }

    /// Negative adjoint of [`Self::grad_nodes`].
    pub fn div_edges(&self, e: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_nodes()];
        for j in 1..ny {
            for i in 1..nx {
                let yn = e[self.uface(i, j)];
                let ys = e[self.uface(i, j - 1)];
                let xe = e[self.vface(i, j)];
                let xw = e[self.vface(i - 1, j)];
                out[self.node(i, j)] = (yn - ys) / self.dy + (xe - xw) / self.dx;
            }
        }
        out
    }

    /// Five-point Dirichlet Laplacian on interior nodes.
    pub fn lap_dirichlet(&self, psi: &[f64]) -> Vec<f64> {
        self.div_edges(&self.grad_nodes(psi))
    }

    /// Discrete curl of a stream function: `u = d psi/dy`, `v = -d psi/dx`.
    /// The result is exactly divergence free and has zero normal flux on the walls.
    pub fn curl(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = self.grad_nodes(psi);
        let nu = self.n_ufaces();
        for v in &mut out[nu..] {
            *v = -*v;
        }
        out
    }

    /// Transpose of [`Self::curl`].
    pub fn curl_t(&self, vel: &[f64]) -> Vec<f64> {
        let mut e = vel.to_vec();
        let nu = self.n_ufaces();
        for v in &mut e[nu..] {
            *v = -*v;
        }
        let mut out = self.div_edges(&e);
        for v in &mut out {
            *v = -*v;
        }
        out
    }

    // ---------------------------------------------------------------------------------
    // Velocity (no-slip) vector Laplacian.

    /// Componentwise Laplacian of a face velocity with no-slip walls:
    /// the normal component vanishes on the wall faces, the tangential one through
    /// an antisymmetric ghost half a cell outside.
    pub fn lap_velocity(&self, vel: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let (idx2, idy2) = (1.0 / (self.dx * self.dx), 1.0 / (self.dy * self.dy));
        let mut out = vec![0.0; self.n_velocity()];
        for j in 0..ny {
            for i in 1..nx {
                let c = vel[self.uface(i, j)];
                let e = if i + 1 < nx { vel[self.uface(i + 1, j)] } else { 0.0 };
                let w = if i > 1 { vel[self.uface(i - 1, j)] } else { 0.0 };
                let n = if j + 1 < ny { vel[self.uface(i, j + 1)] } else { -c };
                let s = if j > 0 { vel[self.uface(i, j - 1)] } else { -c };
                out[self.uface(i, j)] = (e - 2.0 * c + w) * idx2 + (n - 2.0 * c + s) * idy2;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let c = vel[self.vface(i, j)];
                let n = if j + 1 < ny { vel[self.vface(i, j + 1)] } else { 0.0 };
                let s = if j > 1 { vel[self.vface(i, j - 1)] } else { 0.0 };
                let e = if i + 1 < nx { vel[self.vface(i + 1, j)] } else { -c };
                let w = if i > 0 { vel[self.vface(i - 1, j)] } else { -c };
                out[self.vface(i, j)] = (e - 2.0 * c + w) * idx2 + (n - 2.0 * c + s) * idy2;
            }
        }
        out
    }

    // ---------------------------------------------------------------------------------
    // Fast solvers.

    /// Mean-zero solution of `lap_neumann(p) = rhs - mean(rhs)`.
    pub fn poisson_neumann(&self, rhs: &[f64]) -> Vec<f64> {
        let mut c = forward2(&self.neumann_x, &self.neumann_y, rhs);
        let nx = self.nx;
        for kb in 0..self.ny {
            for ka in 0..nx {
                let lam = self.neumann_x.eigs[ka] + self.neumann_y.eigs[kb];
                let slot = &mut c[kb * nx + ka];
                if ka == 0 && kb == 0 {
                    *slot = 0.0;
                } else {
                    *slot /= -lam;
                }
            }
        }
        inverse2(&self.neumann_x, &self.neumann_y, &c)
    }

    /// Solves `-lap_dirichlet(psi) = rhs` on the interior nodes.
    pub fn poisson_dirichlet(&self, rhs: &[f64]) -> Vec<f64> {
        let mut c = forward2(&self.node_x, &self.node_y, rhs);
        let nx = self.nx - 1;
        for kb in 0..self.ny - 1 {
            for ka in 0..nx {
                c[kb * nx + ka] /= self.node_x.eigs[ka] + self.node_y.eigs[kb];
            }
        }
        inverse2(&self.node_x, &self.node_y, &c)
    }

    /// Leray projection of a face velocity onto the discrete divergence-free subspace,
    /// returning `(P f, q)` with `f = P f + grad q`.
    pub fn leray_decompose(&self, vel: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.poisson_neumann(&self.div_faces(vel));
        let g = self.grad_cells(&q);
        let p = vel.iter().zip(&g).map(|(a, b)| a - b).collect();
        (p, q)
    }

    pub fn leray(&self, vel: &[f64]) -> Vec<f64> {
        self.leray_decompose(vel).0
    }

    /// Stream function of a divergence-free face velocity (`curl(psi) = vel`).
    pub fn stream_function(&self, vel: &[f64]) -> Vec<f64> {
        self.poisson_dirichlet(&self.curl_t(vel))
    }

    // ---------------------------------------------------------------------------------
    // Interpolations and pointwise derivatives.

    /// Average of the two cells adjacent to each interior face.
    pub fn cells_to_faces(&self, c: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_velocity()];
        for j in 0..ny {
            for i in 1..nx {
                out[self.uface(i, j)] = 0.5 * (c[self.cell(i - 1, j)] + c[self.cell(i, j)]);
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out[self.vface(i, j)] = 0.5 * (c[self.cell(i, j - 1)] + c[self.cell(i, j)]);
            }
        }
        out
    }

    /// Velocity components interpolated to cell centres, `(u_c, v_c)`.
    pub fn faces_to_cells(&self, vel: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        let mut uc = vec![0.0; self.n_cells()];
        let mut vc = vec![0.0; self.n_cells()];
        for j in 0..ny {
            for i in 0..nx {
                let ue = if i + 1 < nx { vel[self.uface(i + 1, j)] } else { 0.0 };
                let uw = if i > 0 { vel[self.uface(i, j)] } else { 0.0 };
                let vn = if j + 1 < ny { vel[self.vface(i, j + 1)] } else { 0.0 };
                let vs = if j > 0 { vel[self.vface(i, j)] } else { 0.0 };
                uc[self.cell(i, j)] = 0.5 * (ue + uw);
                vc[self.cell(i, j)] = 0.5 * (vn + vs);
            }
        }
        (uc, vc)
    }

    /// Four-point average of the y-face component onto the x-faces; [`Self::u_to_v`] is its transpose.
    pub fn v_to_u(&self, vel: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_ufaces()];
        for j in 0..ny {
            for i in 1..nx {
                let mut s = 0.0;
                for (ci, fj) in [(i - 1, j), (i, j), (i - 1, j + 1), (i, j + 1)] {
                    if fj >= 1 && fj < ny {
                        s += vel[self.vface(ci, fj)];
                    }
                }
                out[self.uface(i, j)] = 0.25 * s;
            }
        }
        out
    }

    pub fn u_to_v(&self, vel: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.n_vfaces()];
        for j in 1..ny {
            for i in 0..nx {
                let mut s = 0.0;
                for (fi, cj) in [(i, j - 1), (i, j), (i + 1, j - 1), (i + 1, j)] {
                    if fi >= 1 && fi < nx {
                        s += vel[self.uface(fi, cj)];
                    }
                }
                out[self.vface(i, j) - self.n_ufaces()] = 0.25 * s;
            }
        }
        out
    }

    /// Centred x- and y-differences of a per-layer array, extended past the walls
    /// according to the layout's boundary condition. For [`Layout::Velocity`] both
    /// components are differentiated in place, returning arrays in the same layout.
    pub fn centered_gradient(&self, layout: Layout, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        let (h2x, h2y) = (2.0 * self.dx, 2.0 * self.dy);
        let n = self.layout_len(layout);
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        match layout {
            Layout::Cells => {
                for j in 0..ny {
                    for i in 0..nx {
                        let c = f[self.cell(i, j)];
                        let e = if i + 1 < nx { f[self.cell(i + 1, j)] } else { c };
                        let w = if i > 0 { f[self.cell(i - 1, j)] } else { c };
                        let nn = if j + 1 < ny { f[self.cell(i, j + 1)] } else { c };
                        let s = if j > 0 { f[self.cell(i, j - 1)] } else { c };
                        gx[self.cell(i, j)] = (e - w) / h2x;
                        gy[self.cell(i, j)] = (nn - s) / h2y;
                    }
                }
            }
            Layout::Velocity => {
                for j in 0..ny {
                    for i in 1..nx {
                        let c = f[self.uface(i, j)];
                        let e = if i + 1 < nx { f[self.uface(i + 1, j)] } else { 0.0 };
                        let w = if i > 1 { f[self.uface(i - 1, j)] } else { 0.0 };
                        let nn = if j + 1 < ny { f[self.uface(i, j + 1)] } else { -c };
                        let s = if j > 0 { f[self.uface(i, j - 1)] } else { -c };
                        gx[self.uface(i, j)] = (e - w) / h2x;
                        gy[self.uface(i, j)] = (nn - s) / h2y;
                    }
                }
                for j in 1..ny {
                    for i in 0..nx {
                        let c = f[self.vface(i, j)];
                        let nn = if j + 1 < ny { f[self.vface(i, j + 1)] } else { 0.0 };
                        let s = if j > 1 { f[self.vface(i, j - 1)] } else { 0.0 };
                        let e = if i + 1 < nx { f[self.vface(i + 1, j)] } else { -c };
                        let w = if i > 0 { f[self.vface(i - 1, j)] } else { -c };
                        gx[self.vface(i, j)] = (e - w) / h2x;
                        gy[self.vface(i, j)] = (nn - s) / h2y;
                    }
                }
            }
            Layout::Nodes => {
                let at = |i: usize, j: usize| {
                    if i == 0 || j == 0 || i == nx || j == ny {
                        0.0
                    } else {
                        f[self.node(i, j)]
                    }
                };
                for j in 1..ny {
                    for i in 1..nx {
                        gx[self.node(i, j)] = (at(i + 1, j) - at(i - 1, j)) / h2x;
                        gy[self.node(i, j)] = (at(i, j + 1) - at(i, j - 1)) / h2y;
                    }
                }
            }
        }
        (gx, gy)
    }

    /// Discrete Laplacian appropriate to the layout's boundary condition.
    pub fn laplacian(&self, layout: Layout, f: &[f64]) -> Vec<f64> {
        match layout {
            Layout::Cells => self.lap_neumann(f),
            Layout::Velocity => self.lap_velocity(f),
            Layout::Nodes => self.lap_dirichlet(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn grid(n: usize) -> DiscreteGrid {
        build_grid(&CylinderDomain::new(1.0, 1.3, 1.0, n, n + 2, 6).unwrap()).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(CylinderDomain::new(1.0, 1.0, 1.0, 3, 8, 8).is_err());
        assert!(CylinderDomain::new(1.0, 1.0, 1.0, 8, 8, 3).is_err());
        assert!(CylinderDomain::new(-1.0, 1.0, 1.0, 8, 8, 8).is_err());
    }

    #[test]
    fn gradient_divergence_adjointness() {
        let g = build_grid(&CylinderDomain::unit(8, 6).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = rand_vec(&mut rng, g.n_cells());
        let u = rand_vec(&mut rng, g.n_velocity());
        let lhs = g.inner(&g.grad_cells(&p), &u);
        let rhs = -g.inner(&p, &g.div_faces(&u));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));

        let psi = rand_vec(&mut rng, g.n_nodes());
        let lhs = g.inner(&g.grad_nodes(&psi), &u);
        let rhs = -g.inner(&psi, &g.div_edges(&u));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn curl_is_divergence_free() {
        let g = grid(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = rand_vec(&mut rng, g.n_nodes());
        let d = g.div_faces(&g.curl(&psi));
        assert!(d.iter().all(|x| x.abs() < 1e-11));
        let u = rand_vec(&mut rng, g.n_velocity());
        let lhs = g.inner(&g.curl(&psi), &u);
        let rhs = g.inner(&psi, &g.curl_t(&u));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn neumann_laplacian_kills_constants() {
        let g = grid(8);
        let out = g.lap_neumann(&vec![3.5; g.n_cells()]);
        assert!(out.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn laplacians_symmetric_negative_semidefinite() {
        let g = grid(7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for layout in [Layout::Cells, Layout::Velocity, Layout::Nodes] {
            let n = g.layout_len(layout);
            let a = rand_vec(&mut rng, n);
            let b = rand_vec(&mut rng, n);
            let ab = g.inner(&g.laplacian(layout, &a), &b);
            let ba = g.inner(&a, &g.laplacian(layout, &b));
            assert!((ab - ba).abs() < 1e-10 * ab.abs().max(1.0), "{layout:?}");
            assert!(g.inner(&g.laplacian(layout, &a), &a) <= 0.0);
        }
    }

    #[test]
    fn dirichlet_laplacian_converges_on_sine() {
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let g = build_grid(&CylinderDomain::unit(n, 4).unwrap()).unwrap();
            let f: Vec<f64> = g
                .coordinates(Layout::Nodes)
                .iter()
                .map(|(x, y)| (PI * x).sin() * (PI * y).sin())
                .collect();
            let lf = g.lap_dirichlet(&f);
            let exact: Vec<f64> = f.iter().map(|v| -2.0 * PI * PI * v).collect();
            let diff: Vec<f64> = lf.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errs.push(g.norm(&diff) / g.norm(&exact));
        }
        assert!(errs[2] <= 1e-2);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn modes_are_orthonormal_eigenvectors() {
        for bc in [Bc1d::NodeDirichlet, Bc1d::CellNeumann, Bc1d::CellDirichlet] {
            let m = Modes1d::new(bc, 9, 0.3);
            for a in 0..m.len {
                for b in 0..m.len {
                    let d: f64 = m.row(a).iter().zip(m.row(b)).map(|(x, y)| x * y).sum();
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert!((d - e).abs() < 1e-13, "{bc:?}");
                }
            }
        }
    }

    #[test]
    fn poisson_solvers_invert() {
        let g = grid(10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rhs = rand_vec(&mut rng, g.n_cells());
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        rhs.iter_mut().for_each(|v| *v -= mean);
        let p = g.poisson_neumann(&rhs);
        let back = g.lap_neumann(&p);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-9);
        }
        let r = rand_vec(&mut rng, g.n_nodes());
        let psi = g.poisson_dirichlet(&r);
        let back = g.lap_dirichlet(&psi);
        for (a, b) in back.iter().zip(&r) {
            assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn leray_projection_properties() {
        let g = grid(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = rand_vec(&mut rng, g.n_velocity());
        let (p, q) = g.leray_decompose(&f);
        assert!(g.norm(&g.div_faces(&p)) < 1e-10);
        let gq = g.grad_cells(&q);
        let resid: Vec<f64> = f.iter().zip(&p).zip(&gq).map(|((a, b), c)| a - b - c).collect();
        assert!(g.norm(&resid) < 1e-10);
        // Gradients are annihilated, divergence-free fields preserved, projector symmetric.
        let qq = rand_vec(&mut rng, g.n_cells());
        assert!(g.norm(&g.leray(&g.grad_cells(&qq))) < 1e-10);
        let pp = g.leray(&p);
        let d: Vec<f64> = pp.iter().zip(&p).map(|(a, b)| a - b).collect();
        assert!(g.norm(&d) < 1e-10);
        let h = rand_vec(&mut rng, g.n_velocity());
        let s1 = g.inner(&g.leray(&f), &h);
        let s2 = g.inner(&f, &g.leray(&h));
        assert!((s1 - s2).abs() < 1e-10);
    }

    #[test]
    fn interpolation_pair_is_transposed() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_vec(&mut rng, g.n_velocity());
        let b = rand_vec(&mut rng, g.n_velocity());
        let nu = g.n_ufaces();
        let lhs: f64 = g.v_to_u(&a).iter().zip(&b[..nu]).map(|(x, y)| x * y).sum();
        let rhs: f64 = a[nu..].iter().zip(g.u_to_v(&b)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn quadrature_exactness() {
        let q = VerticalQuadrature::trapezoid(2.0, 9);
        let lin: Vec<f64> = q.nodes.iter().map(|z| 3.0 * z + 1.0).collect();
        assert!((q.integrate(&lin) - (-6.0 + 2.0)).abs() < 1e-13);
        for m in 1..=q.trig_exactness() {
            let v: Vec<f64> = q.nodes.iter().map(|z| (m as f64 * PI * (z + 2.0) / 2.0).cos()).collect();
            assert!(q.integrate(&v).abs() < 1e-13, "m = {m}");
        }
    }
}
