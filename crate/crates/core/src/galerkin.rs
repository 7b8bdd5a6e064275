//! Semi-implicit Euler-Maruyama for the projected system
//! `dU + [nu A_H U + theta(U) B(U, U) + F(U)] dt = sigma(U) dW`, the energy ledger and the
//! stopping monitor.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::estimates::{aniso_norm, Component, NormSpec, SpectralNorms};
use crate::grid::CylinderDomain;
use crate::noise::{wiener_increments, NoiseFamily, NoiseMode, NoiseModel};
use crate::operators::{assemble_f, nonlinear_b, recover_surface_pressure, Forcing, OperatorContext, PhysicalConstants};
use crate::state::{mean_divergence, velocity_field, State};

/// Slope bound of the cut-off: `|theta_lambda'| <= THETA_SLOPE / lambda`.
pub const THETA_SLOPE: f64 = 4.0;

fn smooth_step(t: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        f(t) / (f(t) + f(1.0 - t))
    }
}

/// Smooth cut-off: 1 on `|x| <= lambda / 2`, 0 on `|x| >= lambda`, non-increasing in `|x|`.
pub fn cutoff_theta(x: f64, lambda: f64) -> f64 {
    let r = (x / lambda).abs();
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        smooth_step(2.0 * (1.0 - r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    #[default]
    Raw,
    /// `theta_rho(||U||_{L^inf_z L^4_xy})`.
    CutoffLinfL4,
    /// `theta_mu(||U||_{H^1_z L^4_xy})`.
    CutoffH1L4,
}

/// Initial data: band-limited random fields with prescribed norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    /// Target `||U_0||_{H^1}`.
    pub h1: f64,
    /// Target `||U_0||_{H^2_z L^2}`; ignored when non-positive.
    pub h2z: f64,
    pub decay: f64,
    pub temperature: bool,
    pub seed: u64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { h1: 1.0, h2z: 0.0, decay: 1.0, temperature: true, seed: 0 }
    }
}

/// Forcing amplitudes on the first velocity and temperature basis elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSpec {
    pub velocity: f64,
    pub temperature: f64,
}

impl ForcingSpec {
    pub fn build(&self, basis: &TensorBasis) -> Result<Forcing> {
        let mut s = State::zeros(basis);
        s.velocity[0] = self.velocity;
        s.temperature[0] = self.temperature;
        Forcing::spectral(basis, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub constants: PhysicalConstants,
    pub domain: CylinderDomain,
    pub n: usize,
    pub n_z: usize,
    pub dealias: f64,
    pub noise: NoiseFamily,
    pub dt: f64,
    pub t_end: f64,
    pub mode: CutoffMode,
    pub rho: f64,
    pub mu: f64,
    pub blowup_threshold: f64,
    pub seed: u64,
    pub ledger_q: Vec<f64>,
    pub ledger_stride: usize,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Drop `B` entirely (linear runs).
    pub nonlinear: bool,
    pub initial: InitialSpec,
    pub forcing: ForcingSpec,
    /// JSON list of noise modes replacing the named family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_fields: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::default(),
            domain: CylinderDomain::default(),
            n: 16,
            n_z: 3,
            dealias: 1.5,
            noise: NoiseFamily::default(),
            dt: 1e-3,
            t_end: 0.1,
            mode: CutoffMode::Raw,
            rho: 1.0,
            mu: 1.0,
            blowup_threshold: f64::INFINITY,
            seed: 0,
            ledger_q: vec![2.0, 4.0, 6.0, 132.0],
            ledger_stride: 1,
            checkpoint_every: 0,
            nonlinear: true,
            initial: InitialSpec::default(),
            forcing: ForcingSpec::default(),
            noise_fields: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.constants.validate()?;
        self.noise.validate()?;
        let range = |ok: bool, msg: String| if ok { Ok(()) } else { Err(HsgsError::Range(msg)) };
        range(self.dt > 0.0 && self.dt.is_finite(), format!("dt must be positive, got {}", self.dt))?;
        range(self.t_end >= 0.0 && self.t_end.is_finite(), format!("t_end must be non-negative, got {}", self.t_end))?;
        range(self.rho > 0.0 && self.mu > 0.0, format!("cut-off scales must be positive, got rho={} mu={}", self.rho, self.mu))?;
        range(self.blowup_threshold > 0.0, format!("blow-up threshold must be positive, got {}", self.blowup_threshold))?;
        range(self.n >= 1 && self.n_z >= 1, "basis sizes must be at least 1".into())?;
        range(self.ledger_stride >= 1, "ledger stride must be at least 1".into())?;
        range(self.ledger_q.iter().all(|q| *q >= 1.0), "ledger exponents must be >= 1".into())?;
        let i = &self.initial;
        range(i.h1 >= 0.0 && i.h1.is_finite() && i.h2z.is_finite() && i.decay >= 0.0, "invalid initial-data spec".into())?;
        Ok(())
    }

    /// Steps needed to reach `t_end`; the last one may be shorter.
    pub fn n_steps(&self) -> usize {
        let r = self.t_end / self.dt;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * r.max(1.0) {
            k as usize
        } else {
            r.ceil() as usize
        }
    }

    /// The configured noise: user fields when given, else the named family.
    pub fn noise_model(&self, basis: &TensorBasis) -> Result<NoiseModel> {
        match &self.noise_fields {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let modes: Vec<NoiseMode> = serde_json::from_str(&text)
                    .map_err(|e| HsgsError::Format(format!("noise fields {}: {e}", path.display())))?;
                NoiseModel::from_fields(basis, modes)
            }
            None => self.noise.build(basis),
        }
    }

    pub fn step_length(&self, step: usize) -> f64 {
        let t0 = step as f64 * self.dt;
        ((step + 1) as f64 * self.dt).min(self.t_end) - t0
    }
}

/// Random initial state meeting `||U||_{H^1} = h1` and, when positive,
/// `||U||_{H^2_z L^2} = h2z`. The two targets are met by separately scaling the lowest
/// vertical mode of each family and the rest.
pub fn initial_state(basis: &TensorBasis, spec: &InitialSpec) -> Result<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut s = State::random(basis, &mut rng, spec.decay, 1.0);
    if !spec.temperature {
        s.temperature.iter_mut().for_each(|v| *v = 0.0);
    }
    let n = basis.n;
    let mut low = s.clone();
    low.velocity[n..].iter_mut().for_each(|v| *v = 0.0);
    low.temperature[n..].iter_mut().for_each(|v| *v = 0.0);
    let mut high = s.clone();
    high.axpy(-1.0, &low);
    let h1 = |u: &State| SpectralNorms::new(basis, u).h1().powi(2);
    let h2 = |u: &State| crate::estimates::spectral_sq(basis, u, |_, k| 1.0 + k * k + k.powi(4));
    if spec.h2z <= 0.0 || high.norm_l2() == 0.0 {
        let nrm = h1(&s).sqrt();
        return Ok(if nrm > 0.0 { s.scaled(spec.h1 / nrm) } else { s });
    }
    let (a11, a12, a21, a22) = (h1(&low), h1(&high), h2(&low), h2(&high));
    let det = a11 * a22 - a12 * a21;
    let (t1, t2) = (spec.h1 * spec.h1, spec.h2z * spec.h2z);
    let x = (t1 * a22 - a12 * t2) / det;
    let y = (a11 * t2 - a21 * t1) / det;
    if !(det.abs() > 0.0 && x >= 0.0 && y >= 0.0) {
        return Err(HsgsError::Range(format!(
            "H^1 = {} and H^2_z L^2 = {} are not attainable together at this truncation",
            spec.h1, spec.h2z
        )));
    }
    let mut out = low.scaled(x.sqrt());
    out.axpy(y.sqrt(), &high);
    Ok(out)
}

/// Result of one step; `blowup` flags a non-finite state.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: State,
    pub theta: f64,
    pub blowup: bool,
}

/// Shared, immutable pieces of a simulation.
pub struct Stepper {
    pub ctx: OperatorContext,
    pub noise: Arc<NoiseModel>,
    pub forcing: Forcing,
    pub config: SimConfig,
    lam_v: Vec<f64>,
    lam_t: Vec<f64>,
    /// `P_n sigma e_k` when the noise does not depend on the state.
    additive: Option<Vec<State>>,
    skip_f: bool,
}

impl Stepper {
    pub fn new(ctx: OperatorContext, noise: NoiseModel, forcing: Forcing, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let b = ctx.basis.clone();
        if b.n != config.n || b.n_z != config.n_z {
            return Err(HsgsError::Config("basis does not match the configured truncation".into()));
        }
        forcing.projected.check_shape(&b)?;
        let additive = if noise.modes.iter().all(|m| is_state_free(m)) {
            let zero = State::zeros(&b);
            let mut out = Vec::with_capacity(noise.k());
            for k in 0..noise.k() {
                let mut e = vec![0.0; noise.k()];
                e[k] = 1.0;
                out.push(noise.increment(&b, &zero, &e)?);
            }
            Some(out)
        } else {
            None
        };
        let c = &ctx.constants;
        let skip_f = c.coriolis == 0.0 && c.beta_t * c.gravity == 0.0 && forcing.is_zero();
        Ok(Self {
            lam_v: b.velocity_eigs(),
            lam_t: b.temperature_eigs(),
            ctx,
            noise: Arc::new(noise),
            forcing,
            config,
            additive,
            skip_f,
        })
    }

    /// Builds basis, noise and forcing from a config.
    pub fn from_config(config: SimConfig, basis: Arc<TensorBasis>) -> Result<Self> {
        let ctx = OperatorContext::new(basis.clone(), config.constants, config.dealias)?;
        let noise = config.noise_model(&basis)?;
        let forcing = config.forcing.build(&basis)?;
        Self::new(ctx, noise, forcing, config)
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.ctx.basis
    }

    /// Cut-off factor of the configured mode.
    pub fn cutoff_state(&self, state: &State) -> Result<f64> {
        let b = self.basis();
        match self.config.mode {
            CutoffMode::Raw => Ok(1.0),
            CutoffMode::CutoffLinfL4 => {
                let r = aniso_norm(b, state, NormSpec::lebesgue(f64::INFINITY, 4.0), Component::All)?;
                Ok(cutoff_theta(r, self.config.rho))
            }
            CutoffMode::CutoffH1L4 => {
                let r = aniso_norm(b, state, NormSpec::sobolev(2.0, 4.0, 1, 0), Component::All)?;
                Ok(cutoff_theta(r, self.config.mu))
            }
        }
    }

    /// `P_n sigma(U) dW`.
    pub fn noise_increment(&self, state: &State, dw: &[f64]) -> Result<State> {
        if dw.len() != self.noise.k() {
            return Err(HsgsError::Range(format!("{} increments for {} noise modes", dw.len(), self.noise.k())));
        }
        match &self.additive {
            Some(cols) => {
                let mut out = State::zeros(self.basis());
                for (c, w) in cols.iter().zip(dw) {
                    if *w != 0.0 {
                        out.axpy(*w, c);
                    }
                }
                Ok(out)
            }
            None => self.noise.increment(self.basis(), state, dw),
        }
    }

    /// Explicit part `U - dt [theta B(U, U) + F(U)] + sigma(U) dW`.
    pub fn explicit_update(&self, state: &State, dt: f64, dw: &[f64]) -> Result<(State, f64)> {
        let b = self.basis();
        let mut next = state.clone();
        let theta = if self.config.nonlinear { self.cutoff_state(state)? } else { 0.0 };
        if theta != 0.0 {
            next.axpy(-dt * theta, &nonlinear_b(b, state, state));
        }
        if !self.skip_f {
            next.axpy(-dt, &assemble_f(&self.ctx, state, &self.forcing)?);
        }
        if self.noise.k() > 0 {
            next.axpy(1.0, &self.noise_increment(state, dw)?);
        }
        Ok((next, theta))
    }

    /// One step of length `dt` with Wiener increments `dw`.
    pub fn step(&self, state: &State, dt: f64, dw: &[f64]) -> Result<StepOutcome> {
        let (mut next, theta) = self.explicit_update(state, dt, dw)?;
        let c = &self.ctx.constants;
        for (v, l) in next.velocity.iter_mut().zip(&self.lam_v) {
            *v /= 1.0 + dt * c.nu_v * l;
        }
        for (v, l) in next.temperature.iter_mut().zip(&self.lam_t) {
            *v /= 1.0 + dt * c.nu_t * l;
        }
        next.time = state.time + dt;
        let blowup = !next.is_finite();
        Ok(StepOutcome { state: next, theta, blowup })
    }

    /// Path-local generator: stream `path` of the configured seed.
    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(path);
        rng
    }
}

fn is_state_free(m: &NoiseMode) -> bool {
    let h = m.homogeneous();
    h == NoiseMode { psi_sup: h.psi_sup, psi_t_sup: h.psi_t_sup, ..Default::default() }
}

// -------------------------------------------------------------------------------------
// Ledger.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    pub time: f64,
    pub l2: f64,
    pub grad_h: f64,
    pub dz: f64,
    pub dzz: f64,
    pub h1: f64,
    pub linf_l4: f64,
    pub h1_l4: f64,
    /// `||v||_{L^q}` for the ledger exponents.
    pub lq_v: Vec<f64>,
    pub vbar_h1: f64,
    pub vtilde_l4: f64,
    pub grad_ps: f64,
    pub div_vbar: f64,
    pub int_ah: f64,
    pub int_h1h1: f64,
    pub int_vinf: f64,
    pub sup_h1_sq: f64,
    pub blowup: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub q_list: Vec<f64>,
    pub rows: Vec<LedgerRow>,
    pub stopped: bool,
    pub stop_time: Option<f64>,
    /// Set when the state stopped being finite.
    pub nonfinite: bool,
}

impl EnergyLedger {
    pub fn new(q_list: Vec<f64>) -> Self {
        Self { q_list, rows: Vec::new(), stopped: false, stop_time: None, nonfinite: false }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            ["step", "time", "l2", "grad_h", "dz", "dzz", "h1", "linf_l4", "h1_l4"].iter().map(|s| s.to_string()).collect();
        names.extend(self.q_list.iter().map(|q| format!("l{q}_v")));
        names.extend(
            ["vbar_h1", "vtilde_l4", "grad_ps", "div_vbar", "int_ah", "int_h1h1", "int_vinf", "sup_h1_sq", "blowup", "theta"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }

    pub fn row_values(row: &LedgerRow) -> Vec<f64> {
        let mut v = vec![row.step as f64, row.time, row.l2, row.grad_h, row.dz, row.dzz, row.h1, row.linf_l4, row.h1_l4];
        v.extend(&row.lq_v);
        v.extend([
            row.vbar_h1,
            row.vtilde_l4,
            row.grad_ps,
            row.div_vbar,
            row.int_ah,
            row.int_h1h1,
            row.int_vinf,
            row.sup_h1_sq,
            row.blowup,
            row.theta,
        ]);
        v
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }
}

/// Running blow-up integrals, accumulated by left-endpoint quadrature.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    int_ah: f64,
    int_h1h1: f64,
    int_vinf: f64,
    sup_h1_sq: f64,
}

/// Cheap per-step integrands: `(||A_H U||^2, ||U||^2_{H^1_z H^1}, ||v||^2_inf, ||U||^2_{H^1})`.
fn integrands(basis: &TensorBasis, state: &State) -> (f64, f64, f64, f64) {
    let s = SpectralNorms::new(basis, state);
    let vinf = velocity_field(basis, &state.velocity).max_abs();
    (s.a_h().powi(2), s.h1z_h1().powi(2), vinf * vinf, s.h1().powi(2))
}

fn full_row(st: &Stepper, state: &State, step: usize, run: &Running, theta: f64, q_list: &[f64]) -> Result<LedgerRow> {
    let b = st.basis();
    let s = SpectralNorms::new(b, state);
    let vel = Component::Velocity;
    let mut lq_v = Vec::with_capacity(q_list.len());
    for &q in q_list {
        lq_v.push(aniso_norm(b, state, NormSpec::lebesgue(q, q), vel)?);
    }
    let bar = state.barotropic_part(b);
    let vbar_h1 = (crate::estimates::spectral_sq(b, &bar, |l, _| 1.0 + l) / b.depth()).sqrt();
    let tilde = state.baroclinic_part(b);
    let ps = recover_surface_pressure(&st.ctx, state, &st.forcing)?;
    Ok(LedgerRow {
        step,
        time: state.time,
        l2: s.l2(),
        grad_h: s.grad(),
        dz: s.dz(),
        dzz: s.dzz(),
        h1: s.h1(),
        linf_l4: aniso_norm(b, state, NormSpec::lebesgue(f64::INFINITY, 4.0), Component::All)?,
        h1_l4: aniso_norm(b, state, NormSpec::sobolev(2.0, 4.0, 1, 0), Component::All)?,
        lq_v,
        vbar_h1,
        vtilde_l4: aniso_norm(b, &tilde, NormSpec::lebesgue(4.0, 4.0), vel)?,
        grad_ps: b.grid.norm(&b.grid.grad_cells(&ps)),
        div_vbar: mean_divergence(b, &state.velocity),
        int_ah: run.int_ah,
        int_h1h1: run.int_h1h1,
        int_vinf: run.int_vinf,
        sup_h1_sq: run.sup_h1_sq,
        blowup: run.sup_h1_sq + run.int_ah + run.int_h1h1,
        theta,
    })
}

/// Final state and ledger of one path.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub state: State,
    pub ledger: EnergyLedger,
    pub steps: usize,
    /// Largest `||div_H v_bar||` over all steps.
    pub max_div: f64,
}

/// Integrates one path from `initial`. `on_checkpoint` receives the state every
/// `checkpoint_every` steps.
pub fn run_path(
    st: &Stepper,
    initial: &State,
    path: u64,
    on_checkpoint: &mut dyn FnMut(usize, &State) -> Result<()>,
) -> Result<PathResult> {
    let b = st.basis();
    initial.check_shape(b)?;
    if !initial.is_finite() {
        return Err(HsgsError::NonFinite("initial state".into()));
    }
    let cfg = &st.config;
    let mut rng = st.path_rng(path);
    let mut ledger = EnergyLedger::new(cfg.ledger_q.clone());
    let mut state = initial.clone();
    let mut run = Running::default();
    let (_, _, _, h1sq) = integrands(b, &state);
    run.sup_h1_sq = h1sq;
    let mut theta = if cfg.nonlinear { st.cutoff_state(&state)? } else { 0.0 };
    let mut row = full_row(st, &state, 0, &run, theta, &cfg.ledger_q)?;
    let mut max_div = row.div_vbar;
    let threshold = cfg.blowup_threshold;
    let fire = |row: &LedgerRow| row.blowup >= threshold;
    if fire(&row) {
        ledger.stopped = true;
        ledger.stop_time = Some(row.time);
    }
    ledger.rows.push(row);
    let n_steps = cfg.n_steps();
    let mut steps = 0;
    while steps < n_steps && !ledger.stopped {
        let dt = cfg.step_length(steps);
        let dw = wiener_increments(&mut rng, st.noise.k(), dt)?;
        let (a, h11, vinf, _) = integrands(b, &state);
        // a step that overflows inside the pressure solve counts as a blown-up step
        let blowup = match st.step(&state, dt, &dw) {
            Ok(out) => {
                theta = out.theta;
                state = out.state;
                out.blowup
            }
            Err(HsgsError::NonFinite(_)) => true,
            Err(e) => return Err(e),
        };
        steps += 1;
        state.time = steps as f64 * cfg.dt;
        if steps == n_steps {
            state.time = cfg.t_end;
        }
        if blowup {
            ledger.stopped = true;
            ledger.nonfinite = true;
            ledger.stop_time = Some(state.time);
            break;
        }
        run.int_ah += dt * a;
        run.int_h1h1 += dt * h11;
        run.int_vinf += dt * vinf;
        let (_, _, _, h1sq) = integrands(b, &state);
        run.sup_h1_sq = run.sup_h1_sq.max(h1sq);
        let div = mean_divergence(b, &state.velocity);
        max_div = max_div.max(div);
        let crossed = run.sup_h1_sq + run.int_ah + run.int_h1h1 >= threshold;
        if steps % cfg.ledger_stride == 0 || steps == n_steps || crossed {
            row = full_row(st, &state, steps, &run, theta, &cfg.ledger_q)?;
            if fire(&row) {
                ledger.stopped = true;
                ledger.stop_time = Some(row.time);
            }
            ledger.rows.push(row);
        }
        if cfg.checkpoint_every > 0 && steps % cfg.checkpoint_every == 0 {
            on_checkpoint(steps, &state)?;
        }
    }
    Ok(PathResult { state, ledger, steps, max_div })
}

/// First ledger time at which the blow-up functional reaches `threshold`.
pub fn blowup_monitor(ledger: &EnergyLedger, threshold: f64) -> Option<f64> {
    if ledger.nonfinite {
        let hit = ledger.rows.iter().find(|r| r.blowup >= threshold).map(|r| r.time);
        return hit.or(ledger.stop_time);
    }
    ledger.rows.iter().find(|r| r.blowup >= threshold).map(|r| r.time)
}

// -------------------------------------------------------------------------------------
// Ensembles.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path: u64,
    pub steps: usize,
    pub stopped: bool,
    pub stop_time: Option<f64>,
    pub sup_l2_sq: f64,
    pub sup_h1_sq: f64,
    pub int_ah: f64,
    pub int_h1h1: f64,
    pub final_l2: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub paths: Vec<PathSummary>,
    pub failures: usize,
    pub stopped: usize,
    pub sup_l2_sq: MomentSummary,
    pub sup_h1_sq: MomentSummary,
    pub int_ah: MomentSummary,
    pub int_h1h1: MomentSummary,
}

/// Compensated sum.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn moments(values: &[f64]) -> MomentSummary {
    let n = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / n;
    // shifted by the first sample so identical samples give exactly zero
    let variance = match values.first() {
        Some(&v0) if values.len() > 1 => {
            let dm = kahan_sum(values.iter().map(|v| v - v0)) / n;
            kahan_sum(values.iter().map(|v| (v - v0 - dm).powi(2))) / (n - 1.0)
        }
        _ => 0.0,
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    MomentSummary { mean, variance, median: quantile(&sorted, 0.5), q90: quantile(&sorted, 0.9) }
}

/// Runs `n_paths` independent paths (stream `p` for path `p`) in parallel. Aggregates are
/// summed in path order, so they do not depend on scheduling.
pub fn run_ensemble(st: &Stepper, n_paths: usize, initial: &(dyn Fn(u64) -> Result<State> + Sync)) -> Result<EnsembleReport> {
    if n_paths == 0 {
        return Err(HsgsError::Range("an ensemble needs at least one path".into()));
    }
    let paths: Vec<PathSummary> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let res = initial(p).and_then(|u0| run_path(st, &u0, p, &mut |_, _| Ok(())));
            match res {
                Ok(r) => {
                    let rows = &r.ledger.rows;
                    PathSummary {
                        path: p,
                        steps: r.steps,
                        stopped: r.ledger.stopped,
                        stop_time: r.ledger.stop_time,
                        sup_l2_sq: rows.iter().map(|x| x.l2 * x.l2).fold(0.0, f64::max),
                        sup_h1_sq: rows.last().map_or(0.0, |x| x.sup_h1_sq),
                        int_ah: rows.last().map_or(0.0, |x| x.int_ah),
                        int_h1h1: rows.last().map_or(0.0, |x| x.int_h1h1),
                        final_l2: r.state.norm_l2(),
                        error: None,
                    }
                }
                Err(e) => PathSummary {
                    path: p,
                    steps: 0,
                    stopped: true,
                    stop_time: None,
                    sup_l2_sq: f64::NAN,
                    sup_h1_sq: f64::NAN,
                    int_ah: f64::NAN,
                    int_h1h1: f64::NAN,
                    final_l2: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let ok: Vec<&PathSummary> = paths.iter().filter(|p| p.error.is_none()).collect();
    let col = |f: fn(&PathSummary) -> f64| moments(&ok.iter().map(|p| f(p)).collect::<Vec<_>>());
    Ok(EnsembleReport {
        failures: paths.len() - ok.len(),
        stopped: ok.iter().filter(|p| p.stopped).count(),
        sup_l2_sq: col(|p| p.sup_l2_sq),
        sup_h1_sq: col(|p| p.sup_h1_sq),
        int_ah: col(|p| p.int_ah),
        int_h1h1: col(|p| p.int_h1h1),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TensorBasis;
    use crate::grid::Layout;
    use crate::operators::{coriolis_layer, transport_dz_grid, Carried, Carrier};
    use crate::state::GridField;
    use proptest::prelude::*;

    fn basis() -> Arc<TensorBasis> {
        Arc::new(TensorBasis::build(&CylinderDomain::new(1.0, 1.2, 0.8, 10, 10, 9).unwrap(), 10, 2).unwrap())
    }

    fn config() -> SimConfig {
        SimConfig {
            domain: CylinderDomain::new(1.0, 1.2, 0.8, 10, 10, 9).unwrap(),
            n: 10,
            n_z: 2,
            dt: 1e-3,
            t_end: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn theta_plateaus_and_slope() {
        let rho = 3.0;
        assert_eq!(cutoff_theta(0.4 * rho, rho), 1.0);
        assert_eq!(cutoff_theta(-0.5 * rho, rho), 1.0);
        assert_eq!(cutoff_theta(1.2 * rho, rho), 0.0);
        assert_eq!(cutoff_theta(rho, rho), 0.0);
        let mid = cutoff_theta(0.75 * rho, rho);
        assert!(mid > 0.0 && mid < 1.0);
        // finite-difference slope never exceeds the stated bound
        let h = 1e-6;
        let mut prev = 1.0;
        for i in 0..=4000 {
            let x = rho * (0.5 + 0.5 * i as f64 / 4000.0);
            let d = (cutoff_theta(x + h, rho) - cutoff_theta(x - h, rho)) / (2.0 * h);
            assert!(d.abs() <= THETA_SLOPE / rho * (1.0 + 1e-6), "{x}: {d}");
            let v = cutoff_theta(x, rho);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn linear_mode_decays_by_implicit_factor() {
        let b = basis();
        let cfg = SimConfig { nonlinear: false, ..config() };
        let st = Stepper::from_config(cfg, b.clone()).unwrap();
        let mut s = State::zeros(&b);
        let i = 3;
        s.velocity[i] = 2.0;
        let lam = b.velocity_eigs()[i];
        let out = st.step(&s, 0.01, &[]).unwrap();
        assert!((out.state.velocity[i] - 2.0 / (1.0 + 0.01 * lam)).abs() < 1e-15);
        let same = st.step(&s, 0.0, &[]).unwrap();
        assert_eq!(same.state.velocity, s.velocity);
    }

    #[test]
    fn explicit_step_commutes_with_dz() {
        let b = basis();
        let cfg = SimConfig { constants: PhysicalConstants { coriolis: 0.7, ..Default::default() }, ..config() };
        let st = Stepper::from_config(cfg, b.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = State::random(&b, &mut rng, 0.5, 1.0);
        let dt = 0.01;
        let (next, _) = st.explicit_update(&u, dt, &[]).unwrap();
        let lhs_v = b.dz_velocity(&next.velocity);
        let lhs_t = b.dz_temperature(&next.temperature);
        // the differentiated system: d/dz U - dt (d/dz B + E d/dz U)
        let carrier = Carrier::new(&b, &u.velocity);
        let bv = transport_dz_grid(&b.grid, &carrier, &Carried::velocity(&b, &u.velocity));
        let bt = transport_dz_grid(&b.grid, &carrier, &Carried::temperature(&b, &u.temperature));
        let dzv = b.dz_velocity(&u.velocity);
        let dvb = b.dz_velocity_blocks();
        let mut cor = GridField::zeros(&b.grid, Layout::Velocity);
        let dz_field = GridField { layout: Layout::Velocity, nz: cor.nz, values: b.synthesize(&dvb, &dzv) };
        for z in 0..cor.nz {
            cor.level_mut(z).copy_from_slice(&coriolis_layer(&b.grid, 0.7, dz_field.level(z)));
        }
        let rhs_v: Vec<f64> = dzv
            .iter()
            .zip(b.project(&dvb, &bv.values))
            .zip(b.project(&dvb, &cor.values))
            .map(|((d, bb), c)| d - dt * (bb + c))
            .collect();
        let rhs_t: Vec<f64> = b
            .dz_temperature(&u.temperature)
            .iter()
            .zip(b.project(&b.dz_temperature_blocks(), &bt.values))
            .map(|(d, bb)| d - dt * bb)
            .collect();
        for (x, y) in lhs_v.iter().zip(&rhs_v).chain(lhs_t.iter().zip(&rhs_t)) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_horizon_ledger_has_one_row() {
        let b = basis();
        let st = Stepper::from_config(SimConfig { t_end: 0.0, ..config() }, b.clone()).unwrap();
        let u0 = initial_state(&b, &InitialSpec::default()).unwrap();
        let r = run_path(&st, &u0, 0, &mut |_, _| Ok(())).unwrap();
        assert_eq!(r.ledger.rows.len(), 1);
        assert_eq!(r.state, u0);
    }

    #[test]
    fn initial_state_hits_both_targets() {
        let b = basis();
        let spec = InitialSpec { h1: 2.0, h2z: 5.0, ..Default::default() };
        let u = initial_state(&b, &spec).unwrap();
        let s = SpectralNorms::new(&b, &u);
        let h2 = crate::estimates::spectral_sq(&b, &u, |_, k| 1.0 + k * k + k.powi(4)).sqrt();
        assert!((s.h1() - 2.0).abs() < 1e-12 && (h2 - 5.0).abs() < 1e-12);
        assert!(initial_state(&b, &InitialSpec { h1: 10.0, h2z: 0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn dissipative_run_and_monitor() {
        let b = basis();
        let cfg = SimConfig { constants: PhysicalConstants { nu_v: 5.0, nu_t: 5.0, ..Default::default() }, t_end: 0.05, ..config() };
        let st = Stepper::from_config(cfg, b.clone()).unwrap();
        let u0 = initial_state(&b, &InitialSpec { h1: 1.0, ..Default::default() }).unwrap();
        let r = run_path(&st, &u0, 0, &mut |_, _| Ok(())).unwrap();
        assert!(r.state.norm_l2() <= u0.norm_l2());
        assert!(r.max_div < 1e-10);
        let l = &r.ledger;
        assert!(l.rows.windows(2).all(|w| w[1].int_ah >= w[0].int_ah && w[1].int_h1h1 >= w[0].int_h1h1));
        assert_eq!(blowup_monitor(l, f64::INFINITY), None);
        assert_eq!(blowup_monitor(l, 1e-3), Some(0.0));
        let a = blowup_monitor(l, 1.05).unwrap_or(f64::INFINITY);
        let c = blowup_monitor(l, 1.2).unwrap_or(f64::INFINITY);
        assert!(a <= c);
    }

    #[test]
    fn runs_are_reproducible_and_noise_free_ensembles_agree() {
        let b = basis();
        let noisy = SimConfig { noise: NoiseFamily { modes: 3, amplitude: 0.05, chi: 0.3, ..Default::default() }, ..config() };
        let st = Stepper::from_config(noisy, b.clone()).unwrap();
        let u0 = initial_state(&b, &InitialSpec::default()).unwrap();
        let a = run_path(&st, &u0, 4, &mut |_, _| Ok(())).unwrap();
        let c = run_path(&st, &u0, 4, &mut |_, _| Ok(())).unwrap();
        assert_eq!(a.ledger, c.ledger);
        let quiet = Stepper::from_config(config(), b.clone()).unwrap();
        let rep = run_ensemble(&quiet, 3, &|_| Ok(u0.clone())).unwrap();
        assert_eq!(rep.failures, 0);
        assert_eq!(rep.sup_h1_sq.variance, 0.0);
        let one = run_ensemble(&quiet, 1, &|_| Ok(u0.clone())).unwrap();
        assert_eq!(one.int_ah.mean, one.paths[0].int_ah);
    }

    #[test]
    fn additive_cache_matches_direct_increment() {
        let b = basis();
        let cfg = SimConfig { noise: NoiseFamily { modes: 4, chi: 0.5, chi_hat: 0.2, ..Default::default() }, ..config() };
        let st = Stepper::from_config(cfg, b.clone()).unwrap();
        assert!(st.additive.is_some());
        let u = State::random(&b, &mut ChaCha8Rng::seed_from_u64(1), 0.5, 1.0);
        let dw = [0.3, -0.1, 0.05, 0.7];
        let fast = st.noise_increment(&u, &dw).unwrap();
        let slow = st.noise.increment(&b, &u, &dw).unwrap();
        let mut d = fast.clone();
        d.axpy(-1.0, &slow);
        assert!(d.norm_l2() < 1e-13);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(SimConfig { dt: -1.0, ..config() }.validate().is_err());
        assert!(SimConfig { rho: 0.0, ..config() }.validate().is_err());
        assert!(SimConfig { blowup_threshold: 0.0, ..config() }.validate().is_err());
        assert_eq!(SimConfig { t_end: 0.0105, ..config() }.n_steps(), 11);
        assert_eq!(config().n_steps(), 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn theta_in_unit_interval_and_monotone(x in 0.0f64..3.0, y in 0.0f64..3.0, lam in 0.1f64..10.0) {
            let (a, c) = (cutoff_theta(x, lam), cutoff_theta(y, lam));
            prop_assert!((0.0..=1.0).contains(&a));
            if x <= y { prop_assert!(a >= c); }
        }

        #[test]
        fn cutoff_state_non_increasing_in_scale(seed in 0u64..100, a in 0.0f64..4.0) {
            let b = basis();
            let st = Stepper::from_config(SimConfig { mode: CutoffMode::CutoffLinfL4, rho: 2.0, ..config() }, b.clone()).unwrap();
            let u = State::random(&b, &mut ChaCha8Rng::seed_from_u64(seed), 0.5, 1.0);
            prop_assert!(st.cutoff_state(&u.scaled(a)).unwrap() >= st.cutoff_state(&u.scaled(a + 0.5)).unwrap());
        }
    }
}
