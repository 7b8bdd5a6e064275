//! The three horizontal eigenbases on the staggered grid.
//!
//! * Neumann scalar modes live on cells and diagonalise [`DiscreteGrid::lap_neumann`].
//! * Dirichlet vector modes live on faces and diagonalise [`DiscreteGrid::lap_velocity`].
//! * Stokes modes live on faces, are discretely divergence free, and diagonalise
//!   `P (-lap_velocity) P` on the divergence-free subspace, `P` the discrete Leray projector.
//!
//! The first two are separable tensor products of 1D sine/cosine modes and are
//! written down directly (then residual-checked). The divergence-free subspace is
//! exactly the range of the discrete curl acting on interior node stream functions, so
//! the Stokes problem is solved in the orthonormal frame `curl(s_j) / sqrt(l_j)` built
//! from the Dirichlet node modes `s_j` (eigenvalues `l_j`). The resulting dense
//! symmetric matrix is diagonalised directly below [`DENSE_LIMIT`] and by Lanczos above.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{HsgsError, Result};
use crate::grid::{forward2, inverse2, DiscreteGrid, Layout};

/// Largest subspace dimension handled by the dense symmetric solver.
pub const DENSE_LIMIT: usize = 10_000;

/// Residual tolerance `|A e - lambda e| / |e|` accepted for a stored pair.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Stokes,
    DirichletVector,
    NeumannScalar,
}

impl Family {
    pub fn layout(self) -> Layout {
        match self {
            Family::NeumannScalar => Layout::Cells,
            _ => Layout::Velocity,
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            Family::Stokes => 1,
            Family::DirichletVector => 2,
            Family::NeumannScalar => 3,
        }
    }
}

/// Eigenpairs of one family, ascending. Vectors are orthonormal under the grid inner
/// product and stored row-major (`values.len()` rows of length `len`).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub family: Family,
    pub len: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl EigenPairs {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn vector(&self, m: usize) -> &[f64] {
        &self.vectors[m * self.len..(m + 1) * self.len]
    }

    /// Keeps the first `n` pairs.
    pub fn truncated(&self, n: usize) -> EigenPairs {
        EigenPairs {
            family: self.family,
            len: self.len,
            values: self.values[..n].to_vec(),
            vectors: self.vectors[..n * self.len].to_vec(),
        }
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_defect(&self, grid: &DiscreteGrid) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.count() {
            for b in a..self.count() {
                let g = grid.inner(self.vector(a), self.vector(b));
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - e).abs());
            }
        }
        worst
    }

    /// Worst relative residual `|A e - lambda e| / |e|` under the family's operator.
    pub fn worst_residual(&self, grid: &DiscreteGrid) -> f64 {
        (0..self.count())
            .map(|m| {
                let e = self.vector(m);
                let ae = apply_operator(grid, self.family, e);
                let r: Vec<f64> = ae.iter().zip(e).map(|(a, v)| a - self.values[m] * v).collect();
                grid.norm(&r) / grid.norm(e)
            })
            .fold(0.0, f64::max)
    }
}

/// The positive operator each family diagonalises.
pub fn apply_operator(grid: &DiscreteGrid, family: Family, f: &[f64]) -> Vec<f64> {
    let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
    match family {
        Family::NeumannScalar => neg(grid.lap_neumann(f)),
        Family::DirichletVector => neg(grid.lap_velocity(f)),
        Family::Stokes => neg(grid.leray(&grid.lap_velocity(&grid.leray(f)))),
    }
}

fn check_count(n: usize, dim: usize, what: &str) -> Result<()> {
    if n == 0 || n > dim {
        return Err(HsgsError::Range(format!(
            "{what}: requested {n} eigenpairs, subspace dimension is {dim}"
        )));
    }
    Ok(())
}

fn verified(grid: &DiscreteGrid, pairs: EigenPairs, what: &str) -> Result<EigenPairs> {
    let worst = pairs.worst_residual(grid);
    if !(worst <= RESIDUAL_TOL) {
        return Err(HsgsError::NonConvergence { what: what.into(), residual: worst });
    }
    Ok(pairs)
}

/// Normalises the sign so the first entry of significant size is positive.
fn fix_sign(v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * peak) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// The `n` smallest eigenpairs of the cell Neumann Laplacian.
pub fn eigensolve_neumann_scalar(grid: &DiscreteGrid, n: usize) -> Result<EigenPairs> {
    check_count(n, grid.n_cells(), "Neumann scalar family")?;
    let (mx, my) = (&grid.neumann_x, &grid.neumann_y);
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(mx.len * my.len);
    for kb in 0..my.len {
        for ka in 0..mx.len {
            cand.push((mx.eigs[ka] + my.eigs[kb], ka, kb));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 + a.2).cmp(&(b.1 + b.2))).then(a.2.cmp(&b.2)));
    let scale = 1.0 / grid.cell_area().sqrt();
    let len = grid.n_cells();
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * len);
    for &(lam, ka, kb) in cand.iter().take(n) {
        values.push(lam);
        for yv in my.row(kb) {
            vectors.extend(mx.row(ka).iter().map(|xv| scale * xv * yv));
        }
    }
    verified(grid, EigenPairs { family: Family::NeumannScalar, len, values, vectors }, "Neumann scalar family")
}

/// The `n` smallest eigenpairs of the no-slip vector Laplacian on faces.
pub fn eigensolve_dirichlet_vector(grid: &DiscreteGrid, n: usize) -> Result<EigenPairs> {
    check_count(n, grid.n_velocity(), "Dirichlet vector family")?;
    // (eigenvalue, component, kx, ky); component 0 = x-faces, 1 = y-faces.
    let mut cand: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(grid.n_velocity());
    for kb in 0..grid.wall_y.len {
        for ka in 0..grid.node_x.len {
            cand.push((grid.node_x.eigs[ka] + grid.wall_y.eigs[kb], 0, ka, kb));
        }
    }
    for kb in 0..grid.node_y.len {
        for ka in 0..grid.wall_x.len {
            cand.push((grid.wall_x.eigs[ka] + grid.node_y.eigs[kb], 1, ka, kb));
        }
    }
    cand.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then((a.2 + a.3).cmp(&(b.2 + b.3)))
            .then(a.1.cmp(&b.1))
            .then(a.3.cmp(&b.3))
    });
    let scale = 1.0 / grid.cell_area().sqrt();
    let len = grid.n_velocity();
    let nu = grid.n_ufaces();
    let mut values = Vec::with_capacity(n);
    let mut vectors = vec![0.0; n * len];
    for (m, &(lam, comp, ka, kb)) in cand.iter().take(n).enumerate() {
        values.push(lam);
        let row = &mut vectors[m * len..(m + 1) * len];
        let (mx, my, dst) = if comp == 0 {
            (&grid.node_x, &grid.wall_y, &mut row[..nu])
        } else {
            (&grid.wall_x, &grid.node_y, &mut row[nu..])
        };
        let w = mx.len;
        for (j, yv) in my.row(kb).iter().enumerate() {
            for (i, xv) in mx.row(ka).iter().enumerate() {
                dst[j * w + i] = scale * xv * yv;
            }
        }
    }
    verified(grid, EigenPairs { family: Family::DirichletVector, len, values, vectors }, "Dirichlet vector family")
}

/// How the Stokes eigenproblem is diagonalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StokesSolver {
    /// Dense below [`DENSE_LIMIT`], Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Frame of the divergence-free subspace: coefficient `x_j` of the orthonormal vector
/// `curl(s_j) / sqrt(l_j)`.
struct CurlFrame<'a> {
    grid: &'a DiscreteGrid,
    inv_sqrt: Vec<f64>,
}

impl<'a> CurlFrame<'a> {
    fn new(grid: &'a DiscreteGrid) -> Self {
        let (mx, my) = (&grid.node_x, &grid.node_y);
        let mut inv_sqrt = Vec::with_capacity(mx.len * my.len);
        for kb in 0..my.len {
            for ka in 0..mx.len {
                inv_sqrt.push(1.0 / (mx.eigs[ka] + my.eigs[kb]).sqrt());
            }
        }
        Self { grid, inv_sqrt }
    }

    fn dim(&self) -> usize {
        self.inv_sqrt.len()
    }

    /// Euclidean-orthonormal face field for a coefficient vector.
    fn synthesize(&self, x: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = x.iter().zip(&self.inv_sqrt).map(|(a, b)| a * b).collect();
        let psi = inverse2(&self.grid.node_x, &self.grid.node_y, &c);
        self.grid.curl(&psi)
    }

    /// Frame coefficients `Z^T f` of a face field.
    fn analyze(&self, f: &[f64]) -> Vec<f64> {
        let r = self.grid.curl_t(f);
        let mut c = forward2(&self.grid.node_x, &self.grid.node_y, &r);
        c.iter_mut().zip(&self.inv_sqrt).for_each(|(a, b)| *a *= b);
        c
    }

    /// `Z^T (-lap_velocity) Z x`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let f = self.synthesize(x);
        let lf: Vec<f64> = self.grid.lap_velocity(&f).into_iter().map(|v| -v).collect();
        self.analyze(&lf)
    }
}

/// The `n` smallest Stokes eigenpairs with the default solver choice.
pub fn eigensolve_stokes(grid: &DiscreteGrid, n: usize) -> Result<EigenPairs> {
    eigensolve_stokes_with(grid, n, StokesSolver::Auto)
}

pub fn eigensolve_stokes_with(grid: &DiscreteGrid, n: usize, solver: StokesSolver) -> Result<EigenPairs> {
    let frame = CurlFrame::new(grid);
    let dim = frame.dim();
    check_count(n, dim, "Stokes family")?;
    let dense = match solver {
        StokesSolver::Auto => dim <= DENSE_LIMIT,
        StokesSolver::Dense => true,
        StokesSolver::Lanczos => false,
    };
    let (values, coeffs) = if dense {
        dense_stokes(&frame, n)?
    } else {
        let (vals, vecs) = lanczos_smallest(dim, n, |x| frame.apply(x), 1e-9)?;
        (vals, vecs)
    };
    let len = grid.n_velocity();
    let scale = 1.0 / grid.cell_area().sqrt();
    let mut vectors = Vec::with_capacity(n * len);
    for y in &coeffs {
        let mut f = frame.synthesize(y);
        let nrm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        f.iter_mut().for_each(|v| *v *= scale / nrm);
        fix_sign(&mut f);
        vectors.extend(f);
    }
    let pairs = EigenPairs { family: Family::Stokes, len, values, vectors };
    for m in 0..n {
        let e = pairs.vector(m);
        let d = grid.norm(&grid.div_faces(e)) / grid.norm(e);
        if d > 1e-10 {
            return Err(HsgsError::Consistency(format!("Stokes mode {m} has divergence {d:.3e}")));
        }
    }
    verified(grid, pairs, "Stokes family")
}

fn dense_stokes(frame: &CurlFrame, n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dim = frame.dim();
    let mut h = Mat::<f64>::zeros(dim, dim);
    let mut unit = vec![0.0; dim];
    for j in 0..dim {
        unit[j] = 1.0;
        let col = frame.apply(&unit);
        unit[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            h[(i, j)] = v;
        }
    }
    let (mut asym, mut total) = (0.0, 0.0);
    for j in 0..dim {
        for i in 0..dim {
            let d = h[(i, j)] - h[(j, i)];
            asym += d * d;
            total += h[(i, j)] * h[(i, j)];
        }
    }
    let rel = (asym / total).sqrt();
    if rel > 1e-10 {
        return Err(HsgsError::Consistency(format!(
            "projected Stokes operator not symmetric (relative defect {rel:.3e})"
        )));
    }
    let eig = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| HsgsError::NonConvergence { what: format!("dense Stokes solve: {e:?}"), residual: f64::NAN })?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values = order[..n].iter().map(|&c| s[c]).collect();
    let vecs = order[..n].iter().map(|&c| (0..dim).map(|i| u[(i, c)]).collect()).collect();
    Ok((values, vecs))
}

/// Smallest `n` eigenpairs of a symmetric positive operator of dimension `dim` by
/// Lanczos with full reorthogonalisation. Converged when every wanted Ritz pair has
/// residual norm at most `tol`.
pub fn lanczos_smallest<F>(dim: usize, n: usize, apply: F, tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    check_count(n, dim, "Lanczos")?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<f64> = (0..dim).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let nq = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= nq);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    let check_every = 20usize;
    let mut worst = f64::INFINITY;
    loop {
        let k = basis.len() - 1;
        let mut w = apply(&basis[k]);
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        // Full reorthogonalisation, applied twice for stability.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnorm = dot(&w, &w).sqrt();
        let m = alpha.len();
        let exhausted = m == dim || bnorm <= 1e-14 * a.abs().max(1.0);
        if m >= n && (m % check_every == 0 || exhausted) {
            let (vals, ys) = tridiagonal_eigen(&alpha, &beta);
            worst = (0..n).map(|i| (bnorm * ys[i][m - 1]).abs()).fold(0.0, f64::max);
            if worst <= tol || exhausted {
                let vecs = (0..n)
                    .map(|i| {
                        let mut v = vec![0.0; dim];
                        for (c, b) in ys[i].iter().zip(&basis) {
                            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
                        }
                        let nv = dot(&v, &v).sqrt();
                        v.iter_mut().for_each(|x| *x /= nv);
                        v
                    })
                    .collect();
                if worst > tol && !exhausted {
                    break;
                }
                return Ok((vals[..n].to_vec(), vecs));
            }
        }
        if exhausted {
            break;
        }
        beta.push(bnorm);
        basis.push(w.into_iter().map(|x| x / bnorm).collect());
    }
    Err(HsgsError::NonConvergence { what: "Lanczos".into(), residual: worst })
}

/// Ascending eigenpairs of the symmetric tridiagonal matrix with diagonal `alpha` and
/// off-diagonal `beta`; eigenvectors returned as rows.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = alpha.len();
    let mut t = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolve");
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let vals = order.iter().map(|&c| s[c]).collect();
    let vecs = order.iter().map(|&c| (0..m).map(|i| u[(i, c)]).collect()).collect();
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, CylinderDomain};
    use std::f64::consts::PI;

    fn grid(nx: usize, ny: usize) -> DiscreteGrid {
        build_grid(&CylinderDomain::new(1.0, 1.0, 1.0, nx, ny, 4).unwrap()).unwrap()
    }

    #[test]
    fn neumann_family_basics() {
        let g = grid(10, 8);
        let p = eigensolve_neumann_scalar(&g, 12).unwrap();
        assert_eq!(p.values[0], 0.0);
        let c = p.vector(0)[0];
        assert!(p.vector(0).iter().all(|v| (v - c).abs() < 1e-14));
        assert!(p.gram_defect(&g) < 1e-12);
        assert!(p.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(eigensolve_neumann_scalar(&g, g.n_cells() + 1).is_err());
    }

    #[test]
    fn dirichlet_family_basics() {
        let g = grid(9, 7);
        let p = eigensolve_dirichlet_vector(&g, 20).unwrap();
        assert!(p.values[0] > 0.0);
        assert!(p.gram_defect(&g) < 1e-12);
        assert!(p.worst_residual(&g) < 1e-10);
    }

    #[test]
    fn stokes_family_is_divergence_free() {
        let g = grid(8, 6);
        let p = eigensolve_stokes(&g, 15).unwrap();
        assert!(p.gram_defect(&g) < 1e-10);
        for m in 0..15 {
            assert!(g.norm(&g.div_faces(p.vector(m))) < 1e-10);
        }
        assert!(p.values.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn lanczos_matches_dense() {
        let g = grid(7, 6);
        let d = eigensolve_stokes_with(&g, 6, StokesSolver::Dense).unwrap();
        let l = eigensolve_stokes_with(&g, 6, StokesSolver::Lanczos).unwrap();
        for (a, b) in d.values.iter().zip(&l.values) {
            assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn analytic_spectra_on_fine_grid() {
        let g = grid(32, 32);
        let n = eigensolve_neumann_scalar(&g, 3).unwrap();
        assert!((n.values[1] - PI * PI).abs() < 0.02 * PI * PI);
        let d = eigensolve_dirichlet_vector(&g, 2).unwrap();
        assert!((d.values[0] - 2.0 * PI * PI).abs() < 0.02 * 2.0 * PI * PI);
    }
}
