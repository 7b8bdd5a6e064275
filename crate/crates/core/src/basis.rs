//! The assembled product basis: horizontal eigenvectors times vertical modes.
//!
//! Velocity coefficients are indexed `k * n + m` for `k = 0..=n_z`, `m = 0..n`:
//! `k = 0` pairs the Stokes mode `m` with the constant `c_0`, `k >= 1` pairs the
//! Dirichlet vector mode `m` with `c_k`. Temperature coefficients are indexed
//! `(k - 1) * n + m` for `k = 1..=n_z` and pair the Neumann mode `m` with `s_k`.
//!
//! Grid fields are stacked per vertical quadrature node: `field[z * len + p]`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::eigen::{
    eigensolve_dirichlet_vector, eigensolve_neumann_scalar, eigensolve_stokes, EigenPairs, Family,
};
use crate::error::{HsgsError, Result};
use crate::grid::{build_grid, CylinderDomain, DiscreteGrid};
use crate::vertical::{vertical_modes, Parity, VMode, VerticalModes};

/// A run of `n` consecutive coefficients sharing a horizontal family and vertical mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub family: Family,
    pub mode: VMode,
}

#[derive(Debug, Clone)]
pub struct TensorBasis {
    pub grid: DiscreteGrid,
    pub n: usize,
    pub n_z: usize,
    pub stokes: EigenPairs,
    pub dirichlet: EigenPairs,
    pub neumann: EigenPairs,
    pub vertical_cos: VerticalModes,
    pub vertical_sin: VerticalModes,
}

/// Combines precomputed families into a basis of horizontal size `n` and vertical size `n_z`.
pub fn assemble_basis(
    grid: DiscreteGrid,
    stokes: &EigenPairs,
    dirichlet: &EigenPairs,
    neumann: &EigenPairs,
    n: usize,
    n_z: usize,
) -> Result<TensorBasis> {
    for (p, fam) in [
        (stokes, Family::Stokes),
        (dirichlet, Family::DirichletVector),
        (neumann, Family::NeumannScalar),
    ] {
        if p.family != fam {
            return Err(HsgsError::Config(format!("expected {fam:?} pairs, got {:?}", p.family)));
        }
        if p.len != grid.layout_len(fam.layout()) {
            return Err(HsgsError::Config(format!("{fam:?} vectors do not match the grid")));
        }
        if p.count() < n {
            return Err(HsgsError::Config(format!(
                "{fam:?} family has {} pairs, {n} requested",
                p.count()
            )));
        }
    }
    if n == 0 {
        return Err(HsgsError::Range("horizontal truncation must be at least 1".into()));
    }
    if n_z + 2 > grid.quad.len() {
        return Err(HsgsError::Config(format!(
            "{} vertical nodes cannot resolve {n_z} vertical modes orthonormally",
            grid.quad.len()
        )));
    }
    let depth = grid.domain.depth;
    Ok(TensorBasis {
        stokes: stokes.truncated(n),
        dirichlet: dirichlet.truncated(n),
        neumann: neumann.truncated(n),
        vertical_cos: vertical_modes(depth, n_z, Parity::Cos)?,
        vertical_sin: vertical_modes(depth, n_z, Parity::Sin)?,
        grid,
        n,
        n_z,
    })
}

impl TensorBasis {
    /// Builds the grid, solves all three eigenproblems and assembles.
    pub fn build(domain: &CylinderDomain, n: usize, n_z: usize) -> Result<Self> {
        let grid = build_grid(domain)?;
        let (stokes, (dirichlet, neumann)) = rayon::join(
            || eigensolve_stokes(&grid, n),
            || rayon::join(|| eigensolve_dirichlet_vector(&grid, n), || eigensolve_neumann_scalar(&grid, n)),
        );
        assemble_basis(grid.clone(), &stokes?, &dirichlet?, &neumann?, n, n_z)
    }

    pub fn depth(&self) -> f64 {
        self.grid.domain.depth
    }

    pub fn n_velocity(&self) -> usize {
        self.n * (self.n_z + 1)
    }

    pub fn n_temperature(&self) -> usize {
        self.n * self.n_z
    }

    pub fn family(&self, f: Family) -> &EigenPairs {
        match f {
            Family::Stokes => &self.stokes,
            Family::DirichletVector => &self.dirichlet,
            Family::NeumannScalar => &self.neumann,
        }
    }

    pub fn velocity_blocks(&self) -> Vec<Block> {
        let mut b = vec![Block { family: Family::Stokes, mode: VMode::cos(0) }];
        b.extend((1..=self.n_z).map(|k| Block { family: Family::DirichletVector, mode: VMode::cos(k) }));
        b
    }

    pub fn temperature_blocks(&self) -> Vec<Block> {
        (1..=self.n_z).map(|k| Block { family: Family::NeumannScalar, mode: VMode::sin(k) }).collect()
    }

    /// Space spanned by `d/dz` of velocity elements: Dirichlet modes times `s_k`.
    pub fn dz_velocity_blocks(&self) -> Vec<Block> {
        (1..=self.n_z).map(|k| Block { family: Family::DirichletVector, mode: VMode::sin(k) }).collect()
    }

    /// Space spanned by `d/dz` of temperature elements: Neumann modes times `c_k`, `k >= 1`.
    pub fn dz_temperature_blocks(&self) -> Vec<Block> {
        (1..=self.n_z).map(|k| Block { family: Family::NeumannScalar, mode: VMode::cos(k) }).collect()
    }

    /// Horizontal eigenvalue of every coefficient of a block list.
    pub fn block_eigs(&self, blocks: &[Block]) -> Vec<f64> {
        blocks.iter().flat_map(|b| self.family(b.family).values.iter().copied()).collect()
    }

    /// Vertical wavenumber `k pi / h` of every coefficient of a block list.
    pub fn block_wavenumbers(&self, blocks: &[Block]) -> Vec<f64> {
        let h = self.depth();
        blocks.iter().flat_map(|b| std::iter::repeat_n(b.mode.wavenumber(h), self.n)).collect()
    }

    pub fn velocity_eigs(&self) -> Vec<f64> {
        self.block_eigs(&self.velocity_blocks())
    }

    pub fn temperature_eigs(&self) -> Vec<f64> {
        self.block_eigs(&self.temperature_blocks())
    }

    /// `max(mu_n, mu_hat_n, lambda_n)` for `1 <= level <= n`.
    pub fn lambda_bar(&self, level: usize) -> Result<f64> {
        if level == 0 || level > self.n {
            return Err(HsgsError::Range(format!("level {level} outside 1..={}", self.n)));
        }
        let i = level - 1;
        Ok(self.stokes.values[i].max(self.dirichlet.values[i]).max(self.neumann.values[i]))
    }

    /// `sum_m c_m e_m` for one family.
    pub fn combine(&self, family: Family, coeffs: &[f64]) -> Vec<f64> {
        let pairs = self.family(family);
        let mut out = vec![0.0; pairs.len];
        for (m, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                out.iter_mut().zip(pairs.vector(m)).for_each(|(o, e)| *o += c * e);
            }
        }
        out
    }

    /// Grid inner products `<f, e_m>` for one family.
    pub fn analyze(&self, family: Family, f: &[f64]) -> Vec<f64> {
        let pairs = self.family(family);
        (0..self.n).map(|m| self.grid.inner(f, pairs.vector(m))).collect()
    }

    /// Values of each block's vertical mode at the quadrature nodes.
    pub fn mode_table(&self, blocks: &[Block]) -> Vec<Vec<f64>> {
        self.mode_table_at(blocks, &self.grid.quad.nodes)
    }

    pub fn mode_table_at(&self, blocks: &[Block], nodes: &[f64]) -> Vec<Vec<f64>> {
        let h = self.depth();
        blocks.iter().map(|b| nodes.iter().map(|&z| b.mode.value(h, z)).collect()).collect()
    }

    /// Grid field of a coefficient vector over `blocks`.
    pub fn synthesize(&self, blocks: &[Block], coeffs: &[f64]) -> Vec<f64> {
        self.synthesize_at(blocks, coeffs, &self.grid.quad.nodes)
    }

    /// Values of a coefficient vector over `blocks` at arbitrary depths `nodes`.
    pub fn synthesize_at(&self, blocks: &[Block], coeffs: &[f64], nodes: &[f64]) -> Vec<f64> {
        let len = self.family(blocks[0].family).len;
        let table = self.mode_table_at(blocks, nodes);
        let mut out = vec![0.0; nodes.len() * len];
        for (bi, b) in blocks.iter().enumerate() {
            let c = &coeffs[bi * self.n..(bi + 1) * self.n];
            if c.iter().all(|v| *v == 0.0) {
                continue;
            }
            let hfield = self.combine(b.family, c);
            for (z, &mv) in table[bi].iter().enumerate() {
                if mv != 0.0 {
                    out[z * len..(z + 1) * len].iter_mut().zip(&hfield).for_each(|(o, h)| *o += mv * h);
                }
            }
        }
        out
    }

    /// Quadrature projection of a grid field onto the span of `blocks`.
    pub fn project(&self, blocks: &[Block], field: &[f64]) -> Vec<f64> {
        let nz = self.grid.quad.len();
        let len = self.family(blocks[0].family).len;
        let table = self.mode_table(blocks);
        let w = &self.grid.quad.weights;
        let mut out = Vec::with_capacity(blocks.len() * self.n);
        for (bi, b) in blocks.iter().enumerate() {
            let mut h = vec![0.0; len];
            for z in 0..nz {
                let f = w[z] * table[bi][z];
                if f != 0.0 {
                    h.iter_mut().zip(&field[z * len..(z + 1) * len]).for_each(|(o, v)| *o += f * v);
                }
            }
            out.extend(self.analyze(b.family, &h));
        }
        out
    }

    /// Coefficients of `d/dz v` over [`Self::dz_velocity_blocks`].
    pub fn dz_velocity(&self, velocity: &[f64]) -> Vec<f64> {
        let h = self.depth();
        let mut out = vec![0.0; self.n * self.n_z];
        for k in 1..=self.n_z {
            let kap = VMode::cos(k).wavenumber(h);
            for m in 0..self.n {
                out[(k - 1) * self.n + m] = -kap * velocity[k * self.n + m];
            }
        }
        out
    }

    /// Coefficients of `d/dz T` over [`Self::dz_temperature_blocks`].
    pub fn dz_temperature(&self, temperature: &[f64]) -> Vec<f64> {
        let h = self.depth();
        let mut out = temperature.to_vec();
        for k in 1..=self.n_z {
            let kap = VMode::sin(k).wavenumber(h);
            out[(k - 1) * self.n..k * self.n].iter_mut().for_each(|v| *v *= kap);
        }
        out
    }

    /// Coefficients of `d^2/dz^2` over the same blocks (`-kappa^2` per block).
    pub fn dzz(&self, blocks: &[Block], coeffs: &[f64]) -> Vec<f64> {
        let h = self.depth();
        let mut out = coeffs.to_vec();
        for (bi, b) in blocks.iter().enumerate() {
            let e = b.mode.eigenvalue(h);
            out[bi * self.n..(bi + 1) * self.n].iter_mut().for_each(|v| *v *= -e);
        }
        out
    }

    /// Zeroes every coefficient with horizontal index `m >= keep`.
    pub fn truncate_blocks(&self, coeffs: &mut [f64], keep: usize) {
        for chunk in coeffs.chunks_mut(self.n) {
            chunk[keep.min(self.n)..].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Stable key identifying the discretisation, used for cache file names.
    pub fn cache_key(domain: &CylinderDomain, n: usize, n_z: usize) -> String {
        let mut h = Sha256::new();
        h.update(CACHE_MAGIC);
        h.update(CACHE_FLAVOR.as_bytes());
        for v in [domain.lx, domain.ly, domain.depth] {
            h.update(v.to_le_bytes());
        }
        for v in [domain.nx, domain.ny, domain.nz, n, n_z] {
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

pub const CACHE_MAGIC: &[u8; 9] = b"HSGS-BAS1";
/// Bumped whenever the discrete operators change meaning.
const CACHE_FLAVOR: &str = "mac-5pt-noslip-v1";

/// Directory for cached bases: `$HSGS_CACHE_DIR`, else `.hsgs-cache` under the working directory.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("HSGS_CACHE_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".hsgs-cache"))
}

pub fn write_basis(path: &Path, basis: &TensorBasis) -> Result<()> {
    let d = &basis.grid.domain;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    for v in [d.lx, d.ly, d.depth] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [d.nx, d.ny, d.nz, basis.n, basis.n_z] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for p in [&basis.stokes, &basis.dirichlet, &basis.neumann] {
        buf.extend_from_slice(&p.family.tag().to_le_bytes());
        buf.extend_from_slice(&(p.count() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.len as u64).to_le_bytes());
        for v in p.values.iter().chain(&p.vectors) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HsgsError::Format("unexpected end of basis file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a cached basis. The stored parameters must match `domain`, `n`, `n_z`.
pub fn read_basis(path: &Path, domain: &CylinderDomain, n: usize, n_z: usize) -> Result<TensorBasis> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(CACHE_MAGIC.len())? != CACHE_MAGIC {
        return Err(HsgsError::Format("bad basis magic".into()));
    }
    let dims = [r.f64()?, r.f64()?, r.f64()?];
    let ints = [r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()?];
    let want = [domain.nx, domain.ny, domain.nz, n, n_z].map(|v| v as u64);
    if dims != [domain.lx, domain.ly, domain.depth] || ints != want {
        return Err(HsgsError::Format("basis file parameters do not match".into()));
    }
    let grid = build_grid(domain)?;
    let mut fams = Vec::new();
    for family in [Family::Stokes, Family::DirichletVector, Family::NeumannScalar] {
        if r.u64()? != family.tag() {
            return Err(HsgsError::Format("unexpected family tag".into()));
        }
        let count = r.u64()? as usize;
        let len = r.u64()? as usize;
        if len != grid.layout_len(family.layout()) || count != n {
            return Err(HsgsError::Format("family size mismatch".into()));
        }
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let vectors = (0..count * len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        fams.push(EigenPairs { family, len, values, vectors });
    }
    if r.pos != bytes.len() {
        return Err(HsgsError::Format("trailing bytes in basis file".into()));
    }
    assemble_basis(grid, &fams[0], &fams[1], &fams[2], n, n_z)
}

/// Loads the basis from the cache directory, building and storing it on a miss.
/// Returns the basis and the cache file path.
pub fn build_or_load(domain: &CylinderDomain, n: usize, n_z: usize, dir: &Path) -> Result<(TensorBasis, PathBuf)> {
    let path = dir.join(format!("basis-{}.bin", TensorBasis::cache_key(domain, n, n_z)));
    if path.exists() {
        match read_basis(&path, domain, n, n_z) {
            Ok(b) => return Ok((b, path)),
            Err(e) => log::warn!("ignoring unreadable basis cache {}: {e}", path.display()),
        }
    }
    let basis = TensorBasis::build(domain, n, n_z)?;
    write_basis(&path, &basis)?;
    Ok((basis, path))
}
