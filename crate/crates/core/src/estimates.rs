//! Anisotropic norms and the inequality regression suites.
//!
//! Grid norms integrate horizontally in `L^q` per vertical node and then vertically in
//! `L^p` with the trapezoid weights; `p = q = inf` norms are grid maxima and therefore lower
//! bounds of the true sup. Vector fields on the staggered layout are measured with the
//! `l^q` sum over their components. `L^2`-type Sobolev norms are computed diagonally from
//! the basis eigenvalues.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::grid::{DiscreteGrid, Layout};
use crate::operators::{
    assemble_f, nonlinear_b, nonlinear_b_grid, transport_dz_grid, Carried, Carrier, Forcing, OperatorContext,
};
use crate::state::{GridField, State};

/// `H^{s,p}_z H^{r,q}_{xy}` with integer `s = dz_order`, `r = dxy_order`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub p: f64,
    pub q: f64,
    pub dz_order: usize,
    pub dxy_order: usize,
    /// Keep only the top-order derivative (a seminorm) instead of the full norm.
    #[serde(default)]
    pub top_only: bool,
}

impl NormSpec {
    pub const fn lebesgue(p: f64, q: f64) -> Self {
        Self { p, q, dz_order: 0, dxy_order: 0, top_only: false }
    }

    pub const fn sobolev(p: f64, q: f64, dz_order: usize, dxy_order: usize) -> Self {
        Self { p, q, dz_order, dxy_order, top_only: false }
    }

    pub const fn top(self) -> Self {
        Self { top_only: true, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |e: f64| e == f64::INFINITY || (e.is_finite() && e >= 1.0);
        if !ok(self.p) || !ok(self.q) {
            return Err(HsgsError::Range(format!("exponents must lie in [1, inf], got p={} q={}", self.p, self.q)));
        }
        if self.dz_order > 2 || self.dxy_order > 2 {
            return Err(HsgsError::Range("derivative orders are limited to 2".into()));
        }
        Ok(())
    }
}

/// Which part of the state a norm measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    All,
    Velocity,
    Temperature,
}

/// Mixed `L^p_z L^q_xy` norm of per-node piece lists: `pieces[z]` holds every array
/// contributing at node `z`, each sample carrying the horizontal weight `area`.
pub fn mixed_norm_pieces(pieces: &[Vec<&[f64]>], weights: &[f64], area: f64, p: f64, q: f64) -> Result<f64> {
    let mut big = 0.0f64;
    for node in pieces {
        for arr in node {
            for v in arr.iter() {
                if !v.is_finite() {
                    return Err(HsgsError::NonFinite("field entering a norm".into()));
                }
                big = big.max(v.abs());
            }
        }
    }
    if big == 0.0 {
        return Ok(0.0);
    }
    let horiz: Vec<f64> = pieces
        .iter()
        .map(|node| {
            if q == f64::INFINITY {
                node.iter().flat_map(|a| a.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
            } else {
                let s: f64 = node.iter().flat_map(|a| a.iter()).map(|v| (v.abs() / big).powf(q)).sum();
                big * (area * s).powf(1.0 / q)
            }
        })
        .collect();
    if p == f64::INFINITY {
        return Ok(horiz.iter().fold(0.0f64, |m, v| m.max(*v)));
    }
    let top = horiz.iter().fold(0.0f64, |m, v| m.max(*v));
    if top == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = horiz.iter().zip(weights).map(|(hz, w)| w * (hz / top).powf(p)).sum();
    Ok(top * s.powf(1.0 / p))
}

/// Mixed norm of raw grid fields sampled at the quadrature nodes.
pub fn mixed_norm(grid: &DiscreteGrid, fields: &[&GridField], p: f64, q: f64) -> Result<f64> {
    NormSpec::lebesgue(p, q).validate()?;
    let nz = grid.quad.len();
    for f in fields {
        if f.nz != nz {
            return Err(HsgsError::Config("field is not sampled at the quadrature nodes".into()));
        }
    }
    let pieces: Vec<Vec<&[f64]>> = (0..nz).map(|z| fields.iter().map(|f| f.level(z)).collect()).collect();
    mixed_norm_pieces(&pieces, &grid.quad.weights, grid.cell_area(), p, q)
}

/// `d^j/dz^j` fields of the selected components, `j = 0, 1, 2`.
fn derivative_stack(basis: &TensorBasis, state: &State, comp: Component) -> Vec<Carried> {
    let mut out = Vec::with_capacity(2);
    if comp != Component::Temperature {
        out.push(Carried::velocity(basis, &state.velocity));
    }
    if comp != Component::Velocity {
        out.push(Carried::temperature(basis, &state.temperature));
    }
    out
}

/// Anisotropic norm of a state (or one of its components).
pub fn aniso_norm(basis: &TensorBasis, state: &State, spec: NormSpec, comp: Component) -> Result<f64> {
    spec.validate()?;
    state.check_shape(basis)?;
    let g = &basis.grid;
    let stack = derivative_stack(basis, state, comp);
    let nz = g.quad.len();
    let mut owned: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nz];
    for c in &stack {
        let by_order = [&c.q, &c.dz_q, &c.dzz_q];
        for a in 0..=spec.dz_order {
            if spec.top_only && a != spec.dz_order {
                continue;
            }
            for (z, node) in owned.iter_mut().enumerate() {
                let layer = by_order[a].level(z);
                for b in 0..=spec.dxy_order {
                    if spec.top_only && b != spec.dxy_order {
                        continue;
                    }
                    match b {
                        0 => node.push(layer.to_vec()),
                        1 => {
                            let (gx, gy) = g.centered_gradient(c.layout, layer);
                            node.push(gx);
                            node.push(gy);
                        }
                        _ => node.push(g.laplacian(c.layout, layer)),
                    }
                }
            }
        }
    }
    let pieces: Vec<Vec<&[f64]>> = owned.iter().map(|n| n.iter().map(|v| v.as_slice()).collect()).collect();
    mixed_norm_pieces(&pieces, &g.quad.weights, g.cell_area(), spec.p, spec.q)
}

/// `sum_i f(lambda_i, kappa_i) c_i^2` over all coefficients.
pub fn spectral_sq(basis: &TensorBasis, state: &State, f: impl Fn(f64, f64) -> f64) -> f64 {
    let vb = basis.velocity_blocks();
    let tb = basis.temperature_blocks();
    let lam = basis.block_eigs(&vb).into_iter().chain(basis.block_eigs(&tb));
    let kap = basis.block_wavenumbers(&vb).into_iter().chain(basis.block_wavenumbers(&tb));
    lam.zip(kap).zip(state.coeffs()).map(|((l, k), c)| f(l.max(0.0), k) * c * c).sum()
}

/// Diagonal `L^2`-based norms of a state.
pub struct SpectralNorms<'a> {
    basis: &'a TensorBasis,
    state: &'a State,
}

impl<'a> SpectralNorms<'a> {
    pub fn new(basis: &'a TensorBasis, state: &'a State) -> Self {
        Self { basis, state }
    }

    fn sq(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        spectral_sq(self.basis, self.state, f)
    }

    pub fn l2(&self) -> f64 {
        self.sq(|_, _| 1.0).sqrt()
    }
    /// `||grad_H U||`.
    pub fn grad(&self) -> f64 {
        self.sq(|l, _| l).sqrt()
    }
    pub fn dz(&self) -> f64 {
        self.sq(|_, k| k * k).sqrt()
    }
    pub fn dzz(&self) -> f64 {
        self.sq(|_, k| k.powi(4)).sqrt()
    }
    /// `||grad_H d/dz U||`.
    pub fn grad_dz(&self) -> f64 {
        self.sq(|l, k| l * k * k).sqrt()
    }
    /// `||A_H U||`, which is also `||Delta_H U||` on the basis span.
    pub fn a_h(&self) -> f64 {
        self.sq(|l, _| l * l).sqrt()
    }
    pub fn h1(&self) -> f64 {
        self.sq(|l, k| 1.0 + l + k * k).sqrt()
    }
    pub fn l2z_h1(&self) -> f64 {
        self.sq(|l, _| 1.0 + l).sqrt()
    }
    pub fn l2z_h2(&self) -> f64 {
        self.sq(|l, _| 1.0 + l + l * l).sqrt()
    }
    pub fn h1z_l2(&self) -> f64 {
        self.sq(|_, k| 1.0 + k * k).sqrt()
    }
    pub fn h1z_h1(&self) -> f64 {
        self.sq(|l, k| (1.0 + k * k) * (1.0 + l)).sqrt()
    }
    pub fn h2z_h1(&self) -> f64 {
        self.sq(|l, k| (1.0 + k * k + k.powi(4)) * (1.0 + l)).sqrt()
    }
    /// `||A_H^alpha U||` for `alpha >= 0`.
    pub fn fractional(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return self.l2();
        }
        self.sq(|l, _| l.powf(2.0 * alpha)).sqrt()
    }
}

/// `sum_z w_z <a_z, b_z>_G`.
pub fn quad_inner(grid: &DiscreteGrid, a: &GridField, b: &GridField) -> f64 {
    (0..a.nz).map(|z| grid.quad.weights[z] * grid.inner(a.level(z), b.level(z))).sum()
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs.abs() <= 1e-300 {
        0.0
    } else {
        f64::INFINITY
    }
}

// -------------------------------------------------------------------------------------
// Hoelder.

/// `(p1, q1, p2, q2)`; the product exponents follow from `1/p = 1/p1 + 1/p2`.
pub type HolderExponents = (f64, f64, f64, f64);

pub fn holder_tuples() -> Vec<HolderExponents> {
    let inf = f64::INFINITY;
    vec![
        (2.0, 2.0, 2.0, 2.0),
        (inf, 4.0, 2.0, 4.0),
        (4.0, 4.0, 4.0, 4.0),
        (inf, inf, 2.0, 2.0),
        (6.0, 3.0, 3.0, 6.0),
        (inf, 4.0, inf, 4.0),
        (3.0, 2.0, 6.0, inf),
    ]
}

fn conjugate_sum(a: f64, b: f64) -> f64 {
    let inv = |x: f64| if x == f64::INFINITY { 0.0 } else { 1.0 / x };
    let s = inv(a) + inv(b);
    if s == 0.0 {
        f64::INFINITY
    } else {
        1.0 / s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub checks: usize,
    pub violations: usize,
    /// Largest `||fg|| / (||f|| ||g||)`.
    pub worst_ratio: f64,
}

/// Anisotropic Hoelder `||fg||_{p,q} <= ||f||_{p1,q1} ||g||_{p2,q2}` for pairs of fields on
/// the same layout, with relative slack `1e-8`.
pub fn check_holder(grid: &DiscreteGrid, pairs: &[(GridField, GridField)], tuples: &[HolderExponents]) -> Result<HolderReport> {
    let mut rep = HolderReport { checks: 0, violations: 0, worst_ratio: 0.0 };
    for (f, g) in pairs {
        if f.layout != g.layout || f.values.len() != g.values.len() {
            return Err(HsgsError::Config("Hoelder pair on different layouts".into()));
        }
        let fg = GridField { layout: f.layout, nz: f.nz, values: f.values.iter().zip(&g.values).map(|(a, b)| a * b).collect() };
        for &(p1, q1, p2, q2) in tuples {
            let (p, q) = (conjugate_sum(p1, p2), conjugate_sum(q1, q2));
            let lhs = mixed_norm(grid, &[&fg], p, q)?;
            let rhs = mixed_norm(grid, &[f], p1, q1)? * mixed_norm(grid, &[g], p2, q2)?;
            let r = ratio(lhs, rhs);
            rep.checks += 1;
            rep.worst_ratio = rep.worst_ratio.max(r);
            if lhs > rhs * (1.0 + 1e-8) {
                rep.violations += 1;
            }
        }
    }
    Ok(rep)
}

// -------------------------------------------------------------------------------------
// Interpolation and logarithmic Sobolev.

/// `||v||_{L^inf_z L^p} / (||v||_{L^2_z L^p} ||v||_{H^1_z L^p})^{1/2}` on the velocity.
pub fn vertical_interpolation_ratio(basis: &TensorBasis, state: &State, p: f64) -> Result<f64> {
    let v = Component::Velocity;
    let lhs = aniso_norm(basis, state, NormSpec::lebesgue(f64::INFINITY, p), v)?;
    let a = aniso_norm(basis, state, NormSpec::lebesgue(2.0, p), v)?;
    let b = aniso_norm(basis, state, NormSpec::sobolev(2.0, p, 1, 0), v)?;
    Ok(ratio(lhs, (a * b).sqrt()))
}

fn velocity_only(state: &State) -> State {
    State { temperature: vec![0.0; state.temperature.len()], ..state.clone() }
}

/// `||v||_{L^inf_z L^4} / (||v||_{H^1_z L^2} ||v||_{L^2_z H^1})^{1/2}`.
pub fn mixed_interpolation_ratio(basis: &TensorBasis, state: &State) -> Result<f64> {
    let lhs = aniso_norm(basis, state, NormSpec::lebesgue(f64::INFINITY, 4.0), Component::Velocity)?;
    let v = velocity_only(state);
    let s = SpectralNorms::new(basis, &v);
    Ok(ratio(lhs, (s.h1z_l2() * s.l2z_h1()).sqrt()))
}

/// `r_i = (q - 1) kappa_i`, `kappa_i = p_i (1 + s) / (1 - s)` with `s = 2/p_1 + 1/p_2`
/// (two horizontal directions at exponent `p_1`, one vertical at `p_2`).
pub fn log_sobolev_exponents(p1: f64, p2: f64, q: f64) -> Result<(f64, f64)> {
    let s = 2.0 / p1 + 1.0 / p2;
    if !(s < 1.0) || q < 3.0 {
        return Err(HsgsError::Range(format!("need 2/p1 + 1/p2 < 1 and q >= 3, got s={s} q={q}")));
    }
    let kappa = |p: f64| p * (1.0 + s) / (1.0 - s);
    Ok(((q - 1.0) * kappa(p1), (q - 1.0) * kappa(p2)))
}

/// Default exponents: `p_1 = 6`, `p_2 = 2`, `q = 3`.
pub const LOG_SOBOLEV_R1: f64 = 132.0;
pub const LOG_SOBOLEV_LAMBDA: f64 = 0.5;

/// `||F||_inf / [(1 + ||F||_{L^r1}) log^lambda(e + ||F||_{W^{1,6}} + ||F||_{H^1_z L^2})]` for the
/// velocity field `F`.
pub fn log_sobolev_ratio(basis: &TensorBasis, state: &State, r1: f64, lambda: f64) -> Result<f64> {
    let v = Component::Velocity;
    let sup = aniso_norm(basis, state, NormSpec::lebesgue(f64::INFINITY, f64::INFINITY), v)?;
    let lr = aniso_norm(basis, state, NormSpec::lebesgue(r1, r1), v)?;
    let w16 = aniso_norm(basis, state, NormSpec::sobolev(6.0, 6.0, 0, 1), v)?;
    let vo = velocity_only(state);
    let h1z = SpectralNorms::new(basis, &vo).h1z_l2();
    let arg = std::f64::consts::E + w16 + h1z;
    Ok(ratio(sup, (1.0 + lr) * arg.ln().powf(lambda)))
}

// -------------------------------------------------------------------------------------
// Nonlinearity estimates.

pub const NONLINEAR_NAMES: [&str; 6] =
    ["nonlinear_first", "nonlinear_second", "nonlinear_dz", "nonlinear_norm", "nonlinear_delta", "nonlinear_dzz"];

/// LHS/RHS ratios of the six nonlinearity estimates for `(U, U_flat, U_sharp)`, in
/// [`NONLINEAR_NAMES`] order.
pub fn nonlinearity_ratios(basis: &TensorBasis, u: &State, flat: &State, sharp: &State) -> Result<[f64; 6]> {
    let g = &basis.grid;
    let linf4 = NormSpec::lebesgue(f64::INFINITY, 4.0);
    let su = SpectralNorms::new(basis, u);
    let sf = SpectralNorms::new(basis, flat);
    let ss = SpectralNorms::new(basis, sharp);
    let u_l4 = aniso_norm(basis, u, linf4, Component::All)?;
    let f_l4 = aniso_norm(basis, flat, linf4, Component::All)?;

    let b_flat = nonlinear_b(basis, u, flat);
    let pair = b_flat.dot(sharp).abs();
    let first = ratio(pair, su.h1() * sf.h1z_h1() * ss.l2z_h1());
    let sharp_h1l4 = aniso_norm(basis, sharp, NormSpec::sobolev(2.0, 4.0, 1, 0), Component::All)?;
    let second = ratio(pair, (u_l4 * sf.grad() + su.grad() * f_l4) * sharp_h1l4);

    // d/dz B(U, U) by the product rule, paired by quadrature.
    let carrier = Carrier::new(basis, &u.velocity);
    let cv = Carried::velocity(basis, &u.velocity);
    let ct = Carried::temperature(basis, &u.temperature);
    let dbv = transport_dz_grid(g, &carrier, &cv);
    let dbt = transport_dz_grid(g, &carrier, &ct);
    let dz_pair = quad_inner(g, &dbv, &cv.dz_q) + quad_inner(g, &dbt, &ct.dz_q);
    let (gdz, dz) = (su.grad_dz(), su.dz());
    let dz_ratio = ratio(dz_pair.abs(), u_l4 * (gdz * dz + gdz.powf(1.5) * dz.sqrt()));

    let (bv, bt) = nonlinear_b_grid(basis, u, flat);
    let b_sq = quad_inner(g, &bv, &bv) + quad_inner(g, &bt, &bt);
    let rhs_norm = u_l4 * u_l4 * sf.grad() * (sf.grad() + sf.a_h()) + su.grad() * su.a_h() * sf.dz() * (sf.dz() + sf.grad_dz());
    let norm = ratio(b_sq, rhs_norm);

    let b_self = nonlinear_b(basis, u, u);
    let lap = crate::operators::apply_ah(basis, u).scaled(-1.0);
    let (h1, h2, h11) = (su.l2z_h1(), su.l2z_h2(), su.h1z_h1());
    let delta = ratio(b_self.dot(&lap).abs(), u_l4 * h1.sqrt() * h2.powf(1.5) + u_l4 * h1.sqrt() * h2.sqrt() * h11);

    // <d_zz B, d_zz U> = -<d_z B, d_zzz U>; the lid terms vanish for states in the basis.
    let dzzz_v = basis.dzz(&basis.dz_velocity_blocks(), &basis.dz_velocity(&u.velocity));
    let dzzz_t = basis.dzz(&basis.dz_temperature_blocks(), &basis.dz_temperature(&u.temperature));
    let nz = g.quad.len();
    let fv = GridField { layout: Layout::Velocity, nz, values: basis.synthesize(&basis.dz_velocity_blocks(), &dzzz_v) };
    let ft = GridField { layout: Layout::Cells, nz, values: basis.synthesize(&basis.dz_temperature_blocks(), &dzzz_t) };
    let dzz_pair = -(quad_inner(g, &dbv, &fv) + quad_inner(g, &dbt, &ft));
    let u_h1l4 = aniso_norm(basis, u, NormSpec::sobolev(2.0, 4.0, 1, 0), Component::All)?;
    let dzz = ratio(dzz_pair.abs(), u_h1l4 * su.dzz().sqrt() * su.h2z_h1().powf(1.5));

    Ok([first, second, dz_ratio, norm, delta, dzz])
}

// -------------------------------------------------------------------------------------
// Poincare.

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoincareOutcome {
    /// `||P U||_{a2} <= lambda_bar^{a2 - a1} ||P U||_{a1}`.
    pub low_ok: bool,
    /// `||Q U||_{a1} <= lambda_next^{a1 - a2} ||Q U||_{a2}`, `lambda_next` the smallest
    /// eigenvalue left in the range of `Q`.
    pub high_ok: bool,
    /// The same with `lambda_bar` in place of `lambda_next`.
    pub high_with_bar_ok: bool,
}

/// Smallest eigenvalue among horizontal indices `> level` across the three families.
pub fn lambda_next(basis: &TensorBasis, level: usize) -> Option<f64> {
    if level >= basis.n {
        return None;
    }
    Some(basis.stokes.values[level].min(basis.dirichlet.values[level]).min(basis.neumann.values[level]))
}

pub fn check_poincare(basis: &TensorBasis, state: &State, level: usize, a1: f64, a2: f64) -> Result<PoincareOutcome> {
    if !(0.0 <= a1 && a1 < a2) {
        return Err(HsgsError::Range(format!("need 0 <= a1 < a2, got {a1}, {a2}")));
    }
    let bar = basis.lambda_bar(level)?;
    let p = state.truncate_pn(basis, level)?;
    let q = state.complement_qn(basis, level)?;
    let sp = SpectralNorms::new(basis, &p);
    let sq = SpectralNorms::new(basis, &q);
    let tol = 1.0 + 1e-12;
    let low_ok = sp.fractional(a2) <= bar.powf(a2 - a1) * sp.fractional(a1) * tol;
    let (qa1, qa2) = (sq.fractional(a1), sq.fractional(a2));
    let high_ok = match lambda_next(basis, level) {
        Some(next) => qa1 <= next.powf(a1 - a2) * qa2 * tol,
        None => qa1 == 0.0,
    };
    let high_with_bar_ok = qa1 <= bar.powf(a1 - a2) * qa2 * tol;
    Ok(PoincareOutcome { low_ok, high_ok, high_with_bar_ok })
}

// -------------------------------------------------------------------------------------
// Calibrated suites.

/// Headroom applied to calibrated constants.
pub const CALIBRATION_HEADROOM: f64 = 1.1;
/// Largest allowed growth of a calibrated constant under resolution doubling.
pub const REFINEMENT_FACTOR: f64 = 2.0;

/// One calibrated inequality: the sample ratios `LHS / RHS` and their maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub name: String,
    pub constant: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub ratios: Vec<f64>,
}

impl Calibration {
    pub fn from_ratios(name: &str, seed: u64, ratios: Vec<f64>) -> Self {
        let constant = ratios.iter().fold(0.0f64, |a, r| a.max(*r));
        Self { name: name.into(), constant, samples: ratios.len(), seed, ratios }
    }

    /// Samples exceeding `headroom * reference`.
    pub fn violations(&self, reference: f64) -> usize {
        self.ratios.iter().filter(|r| !(**r <= CALIBRATION_HEADROOM * reference)).count()
    }
}

/// Sample family used by every suite: random band-limited states with varied spectral
/// decay and amplitude.
pub fn suite_family(basis: &TensorBasis, count: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decays = [0.25, 0.5, 1.0, 2.0];
    let amps = [0.1, 1.0, 10.0];
    (0..count).map(|i| State::random(basis, &mut rng, decays[i % 4], amps[(i / 4) % 3])).collect()
}

/// Calibrates every regression suite on `samples` family states.
pub fn calibrate_suites(ctx: &OperatorContext, samples: usize, seed: u64) -> Result<Vec<Calibration>> {
    let basis = &*ctx.basis;
    let fam = suite_family(basis, 3 * samples, seed);
    let (us, rest) = fam.split_at(samples);
    let (flats, sharps) = rest.split_at(samples);
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); 11];
    let forcing = Forcing::zero(basis);
    for i in 0..samples {
        let u = &us[i];
        rows[0].push(vertical_interpolation_ratio(basis, u, 4.0)?);
        rows[1].push(mixed_interpolation_ratio(basis, u)?);
        rows[2].push(log_sobolev_ratio(basis, u, LOG_SOBOLEV_R1, LOG_SOBOLEV_LAMBDA)?);
        let nl = nonlinearity_ratios(basis, u, &flats[i], &sharps[i])?;
        for (k, r) in nl.iter().enumerate() {
            rows[3 + k].push(*r);
        }
        rows[9].push(vertical_poincare_ratio(basis, u, 4.0)?);
        let f = assemble_f(ctx, u, &forcing)?;
        rows[10].push(ratio(f.norm_l2(), SpectralNorms::new(basis, u).l2z_h1()));
    }
    let mut names = vec!["interp_vertical_l4", "interp_mixed_l4", "log_sobolev"];
    names.extend(NONLINEAR_NAMES);
    names.extend(["vertical_poincare_l4", "forcing_growth"]);
    Ok(names.into_iter().zip(rows).map(|(n, r)| Calibration::from_ratios(n, seed, r)).collect())
}

/// `||v~||_{L^q} / ||d/dz v||_{L^q}` (vertical Poincare for the baroclinic velocity).
pub fn vertical_poincare_ratio(basis: &TensorBasis, state: &State, q: f64) -> Result<f64> {
    let tilde = state.baroclinic_part(basis);
    let lhs = aniso_norm(basis, &tilde, NormSpec::lebesgue(q, q), Component::Velocity)?;
    let rhs = aniso_norm(basis, state, NormSpec::sobolev(q, q, 1, 0).top(), Component::Velocity)?;
    Ok(ratio(lhs, rhs))
}

/// Versioned fixture of calibrated constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFixture {
    pub version: u32,
    pub seed: u64,
    pub samples: usize,
    /// Grid and truncation the constants were calibrated at: `[nx, ny, nz, n, n_z]`.
    pub resolution: [usize; 5],
    pub constants: Vec<Calibration>,
}

impl CalibrationFixture {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.name == name).map(|c| c.constant)
    }
}
