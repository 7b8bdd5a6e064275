//! Named verification suites behind `hsgs check`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{HsgsError, Result};
use crate::estimates::{calibrate_suites, check_poincare, CalibrationFixture, SpectralNorms};
use crate::galerkin::{initial_state, run_path, SimConfig, Stepper};
use crate::noise::{check_growth, growth_samples, leray_defect, NoiseModel};
use crate::operators::nonlinear_b;
use crate::state::State;

pub const SUITES: [&str; 6] = ["zero-noise", "cancellation", "noise", "poincare", "divergence", "inequalities"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub lines: Vec<CheckLine>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), lines: Vec::new() }
    }

    fn push(&mut self, label: &str, pass: bool, detail: String) {
        self.lines.push(CheckLine { label: label.into(), pass, detail });
    }

    pub fn pass(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

/// Largest `|<B(U, U#), U#>| / (||U||_{H^1} ||U#||_{H^1}^2)` over `pairs` random pairs.
pub fn cancellation_ratio(st: &Stepper, pairs: usize, seed: u64) -> f64 {
    let b = st.basis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let decay = [0.25, 0.5, 1.0][i % 3];
        let u = State::random(b, &mut rng, decay, 1.0);
        let v = State::random(b, &mut rng, decay, 1.0);
        let lhs = nonlinear_b(b, &u, &v).dot(&v).abs();
        let rhs = SpectralNorms::new(b, &u).h1() * SpectralNorms::new(b, &v).h1().powi(2);
        worst = worst.max(lhs / rhs);
    }
    worst
}

/// Largest Leray defect `||(1 - P_G) A sigma_1(v) e_k||` over all modes and `states` states.
pub fn leray_sweep(st: &Stepper, model: &NoiseModel, states: usize, seed: u64) -> Result<f64> {
    let b = st.basis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let u = State::random(b, &mut rng, 0.5, 1.0);
        for k in 0..model.k() {
            worst = worst.max(leray_defect(b, model, &u, k)?);
        }
    }
    Ok(worst)
}

/// Runs one named suite. `fixture` supplies calibrated constants for `inequalities`.
pub fn run_suite(name: &str, config: &SimConfig, st: &Stepper, fixture: Option<&CalibrationFixture>) -> Result<SuiteReport> {
    let b = st.basis();
    let mut rep = SuiteReport::new(name);
    match name {
        "zero-noise" => {
            let zero = NoiseModel::zero();
            let g = check_growth(b, &zero, &growth_samples(b, 4, &mut ChaCha8Rng::seed_from_u64(config.seed)));
            rep.push("growth fit", g.pass(), format!("eta = {:.3e}", g.eta));
            let quiet = Stepper::new(st.ctx.clone(), zero, st.forcing.clone(), SimConfig { t_end: 10.0 * config.dt, ..config.clone() })?;
            let u0 = initial_state(b, &config.initial)?;
            let r = run_path(&quiet, &u0, 0, &mut |_, _| Ok(()))?;
            rep.push("finite run", !r.ledger.nonfinite, format!("{} steps", r.steps));
        }
        "cancellation" => {
            let w = cancellation_ratio(st, 100, config.seed);
            rep.push("|<B(U,V),V>| <= 1e-10 |U|_H1 |V|_H1^2", w <= 1e-10, format!("worst ratio {w:.3e}"));
        }
        "noise" => {
            let model = &*st.noise;
            let d = leray_sweep(st, model, 10, config.seed)?;
            rep.push("Leray compatibility <= 1e-10", d <= 1e-10, format!("worst defect {d:.3e}"));
            let g = check_growth(b, model, &growth_samples(b, 8, &mut ChaCha8Rng::seed_from_u64(config.seed)));
            for c in &g.conditions {
                rep.push(&format!("growth {}", c.name), c.pass, format!("eta^2 fit {:.4e} vs {:.4e}", c.eta2_fit, c.eta2_declared));
            }
            rep.push("growth barotropic", g.barotropic.pass, format!("eta^2 fit {:.4e}", g.barotropic.eta2_fit));
        }
        "poincare" => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let levels: Vec<usize> = [b.n / 4, b.n / 2].into_iter().filter(|l| *l >= 1).collect();
            let (mut bad, mut total) = (0usize, 0usize);
            for _ in 0..50 {
                let u = State::random(b, &mut rng, 0.0, 1.0);
                for &(a1, a2) in &[(0.0, 0.5), (0.0, 1.0), (0.5, 1.0)] {
                    for &l in &levels {
                        let o = check_poincare(b, &u, l, a1, a2)?;
                        total += 1;
                        bad += usize::from(!(o.low_ok && o.high_ok));
                    }
                }
            }
            rep.push("Poincare (P and Q sides)", bad == 0, format!("{bad} violations in {total}"));
        }
        "divergence" => {
            let short = Stepper::new(st.ctx.clone(), (*st.noise).clone(), st.forcing.clone(), SimConfig { t_end: 50.0 * config.dt, ..config.clone() })?;
            let u0 = initial_state(b, &config.initial)?;
            let r = run_path(&short, &u0, 0, &mut |_, _| Ok(()))?;
            rep.push("max |div v_bar| <= 1e-10", r.max_div <= 1e-10, format!("{:.3e} over {} steps", r.max_div, r.steps));
        }
        "inequalities" => {
            let cals = calibrate_suites(&st.ctx, 20, config.seed)?;
            for c in &cals {
                match fixture.and_then(|f| f.constant(&c.name)) {
                    Some(reference) => {
                        let v = c.violations(reference);
                        rep.push(&c.name, v == 0, format!("{v} violations, constant {:.4e} vs {:.4e}", c.constant, reference));
                    }
                    None => rep.push(&c.name, c.constant.is_finite(), format!("uncalibrated, constant {:.4e}", c.constant)),
                }
            }
        }
        other => return Err(HsgsError::Config(format!("unknown suite `{other}`; expected one of {}", SUITES.join(", ")))),
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CylinderDomain;
    use std::sync::Arc;

    #[test]
    fn every_suite_passes_on_a_small_config() {
        let cfg = SimConfig {
            domain: CylinderDomain::new(1.0, 1.0, 1.0, 8, 8, 8).unwrap(),
            n: 8,
            n_z: 2,
            dt: 1e-3,
            noise: crate::noise::NoiseFamily { modes: 3, amplitude: 0.05, phi_amplitude: 0.05, ..Default::default() },
            ..Default::default()
        };
        let b = Arc::new(crate::basis::TensorBasis::build(&cfg.domain, cfg.n, cfg.n_z).unwrap());
        let st = Stepper::from_config(cfg.clone(), b).unwrap();
        for s in SUITES {
            let r = run_suite(s, &cfg, &st, None).unwrap();
            assert!(r.pass(), "{s}: {:?}", r.lines);
        }
        assert!(run_suite("nope", &cfg, &st, None).is_err());
    }
}
