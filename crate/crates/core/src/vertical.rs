//! Analytic vertical modes on `(-h, 0)`.
//!
//! `c_k(z) = sqrt(2/h) cos(k pi (z + h) / h)` (with `c_0 = 1/sqrt(h)`) and
//! `s_k(z) = sqrt(2/h) sin(k pi (z + h) / h)`, both of unit `L^2(-h, 0)` norm.
//! Under `d/dz` they map into each other: `c_k' = -kappa_k s_k`, `s_k' = kappa_k c_k`
//! with `kappa_k = k pi / h`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{HsgsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    /// Neumann modes `c_k`, `k >= 0`.
    Cos,
    /// Dirichlet modes `s_k`, `k >= 1`.
    Sin,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Cos => Parity::Sin,
            Parity::Sin => Parity::Cos,
        }
    }
}

/// One vertical mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VMode {
    pub parity: Parity,
    pub k: usize,
}

impl VMode {
    pub fn cos(k: usize) -> Self {
        Self { parity: Parity::Cos, k }
    }
    pub fn sin(k: usize) -> Self {
        Self { parity: Parity::Sin, k }
    }

    pub fn wavenumber(&self, depth: f64) -> f64 {
        self.k as f64 * PI / depth
    }

    /// Eigenvalue `(k pi / h)^2` of `-d^2/dz^2` with the mode's boundary condition.
    pub fn eigenvalue(&self, depth: f64) -> f64 {
        let kap = self.wavenumber(depth);
        kap * kap
    }

    fn amplitude(&self, depth: f64) -> f64 {
        if self.k == 0 {
            match self.parity {
                Parity::Cos => 1.0 / depth.sqrt(),
                Parity::Sin => 0.0,
            }
        } else {
            (2.0 / depth).sqrt()
        }
    }

    pub fn value(&self, depth: f64, z: f64) -> f64 {
        let arg = self.k as f64 * PI * (z + depth) / depth;
        let a = self.amplitude(depth);
        match self.parity {
            Parity::Cos => a * arg.cos(),
            Parity::Sin => a * arg.sin(),
        }
    }

    /// `d/dz` of the mode, as `(factor, mode)`: `value' = factor * mode.value`.
    pub fn derivative(&self, depth: f64) -> (f64, VMode) {
        let kap = self.wavenumber(depth);
        match self.parity {
            Parity::Cos => (-kap, VMode::sin(self.k)),
            Parity::Sin => (kap, VMode::cos(self.k)),
        }
    }

    pub fn dz_value(&self, depth: f64, z: f64) -> f64 {
        let (f, m) = self.derivative(depth);
        if f == 0.0 {
            0.0
        } else {
            f * m.value(depth, z)
        }
    }

    /// `int_{-h}^{z} mode(s) ds`.
    pub fn integral_from_bottom(&self, depth: f64, z: f64) -> f64 {
        let a = self.amplitude(depth);
        if self.k == 0 {
            return match self.parity {
                Parity::Cos => a * (z + depth),
                Parity::Sin => 0.0,
            };
        }
        let kap = self.wavenumber(depth);
        let arg = kap * (z + depth);
        match self.parity {
            Parity::Cos => a * arg.sin() / kap,
            Parity::Sin => a * (1.0 - arg.cos()) / kap,
        }
    }

    /// `int_{z}^{0} mode(s) ds`.
    pub fn integral_to_top(&self, depth: f64, z: f64) -> f64 {
        self.integral_from_bottom(depth, 0.0) - self.integral_from_bottom(depth, z)
    }

    /// `(1/h) int_{-h}^0 mode`.
    pub fn mean(&self, depth: f64) -> f64 {
        self.integral_from_bottom(depth, 0.0) / depth
    }
}

/// A contiguous slice of vertical modes of one parity.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalModes {
    pub depth: f64,
    pub parity: Parity,
    pub modes: Vec<VMode>,
}

impl VerticalModes {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue(self.depth)).collect()
    }

    /// Mode values at the given nodes, row-major `modes x nodes`.
    pub fn tabulate(&self, nodes: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.modes.len() * nodes.len());
        for m in &self.modes {
            out.extend(nodes.iter().map(|&z| m.value(self.depth, z)));
        }
        out
    }
}

/// Cosine modes `k = 0..=n_z` or sine modes `k = 1..=n_z`.
pub fn vertical_modes(depth: f64, n_z: usize, parity: Parity) -> Result<VerticalModes> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(HsgsError::Range(format!("depth must be positive, got {depth}")));
    }
    if n_z < 1 {
        return Err(HsgsError::Range("vertical truncation must be at least 1".into()));
    }
    let modes = match parity {
        Parity::Cos => (0..=n_z).map(VMode::cos).collect(),
        Parity::Sin => (1..=n_z).map(VMode::sin).collect(),
    };
    Ok(VerticalModes { depth, parity, modes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VerticalQuadrature;

    #[test]
    fn analytic_eigenvalues() {
        assert!((VMode::cos(1).eigenvalue(1.0) - PI * PI).abs() < 1e-14);
        assert!((VMode::sin(3).eigenvalue(2.0) - 9.0 * PI * PI / 4.0).abs() < 1e-13);
    }

    #[test]
    fn boundary_conditions_hold() {
        for h in [0.5, 1.0, 3.0] {
            for k in 0..6 {
                for z in [-h, 0.0] {
                    assert!(VMode::cos(k).dz_value(h, z).abs() < 1e-12);
                    assert!(VMode::sin(k).value(h, z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn orthonormal_under_quadrature() {
        let h = 1.7;
        let nz = 5;
        let q = VerticalQuadrature::trapezoid(h, 2 * nz + 2);
        for parity in [Parity::Cos, Parity::Sin] {
            let vm = vertical_modes(h, nz, parity).unwrap();
            for a in &vm.modes {
                for b in &vm.modes {
                    let vals: Vec<f64> =
                        q.nodes.iter().map(|&z| a.value(h, z) * b.value(h, z)).collect();
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert!((q.integrate(&vals) - e).abs() < 1e-12, "{a:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn antiderivatives_match_quadrature() {
        let h = 1.3;
        let fine = 4000;
        for m in [VMode::cos(0), VMode::cos(2), VMode::sin(1), VMode::sin(3)] {
            let z = -0.4;
            let dz = (z + h) / fine as f64;
            let mut acc = 0.0;
            for i in 0..fine {
                let a = -h + i as f64 * dz;
                acc += 0.5 * dz * (m.value(h, a) + m.value(h, a + dz));
            }
            assert!((acc - m.integral_from_bottom(h, z)).abs() < 1e-6, "{m:?}");
        }
        assert!((VMode::cos(0).mean(h) - 1.0 / h.sqrt()).abs() < 1e-14);
        assert!(VMode::cos(4).mean(h).abs() < 1e-14);
    }
}
