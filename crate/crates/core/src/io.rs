//! Configuration files, checkpoints, ledgers, run manifests and field export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::TensorBasis;
use crate::error::{HsgsError, Result};
use crate::galerkin::{EnergyLedger, SimConfig};
use crate::grid::{DiscreteGrid, Layout};
use crate::operators::{recover_surface_pressure, Forcing, OperatorContext};
use crate::state::{barotropic_velocity, diagnose_w, reconstruct_pressure, temperature_field, velocity_field, GridField, State};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"HSGS-CKP1";

/// Stand-in for the Burkholder-Davis-Gundy constant in the moment smallness condition.
pub const BDG_SURROGATE: f64 = 3.0;
/// Moment orders checked by [`smallness_warnings`].
pub const SMALLNESS_ORDERS: [f64; 2] = [2.0, 4.0];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

// -------------------------------------------------------------------------------------
// Configuration.

/// Parses a TOML configuration, applying `overrides` (`dotted.key=value`) on top of the
/// file. Relative `noise_fields` paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<SimConfig> {
    let mut table: toml::Table = text.parse().map_err(|e| HsgsError::Config(format!("{e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: SimConfig = table.try_into().map_err(|e| HsgsError::Config(format!("{e}")))?;
    if let (Some(base), Some(p)) = (base_dir, cfg.noise_fields.as_ref()) {
        if p.is_relative() {
            cfg.noise_fields = Some(base.join(p));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<SimConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text, overrides, path.parent())
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item.split_once('=').ok_or_else(|| HsgsError::Config(format!("override `{item}` is not key=value")))?;
    let value: toml::Value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.trim().into())),
        Err(_) => toml::Value::String(raw.trim().into()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| HsgsError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn config_to_toml(cfg: &SimConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| HsgsError::Config(format!("cannot serialize config: {e}")))
}

pub fn config_hash(cfg: &SimConfig) -> Result<String> {
    Ok(sha256_hex(config_to_toml(cfg)?.as_bytes()))
}

/// Reported (not enforced) moment condition `nu_v > eta^2 ((q - 1)/2 + q c_B^2)` with
/// `c_B` replaced by [`BDG_SURROGATE`].
pub fn smallness_warnings(cfg: &SimConfig, eta: f64) -> Vec<String> {
    SMALLNESS_ORDERS
        .iter()
        .filter_map(|&q| {
            let need = eta * eta * ((q - 1.0) / 2.0 + q * BDG_SURROGATE * BDG_SURROGATE);
            (cfg.constants.nu_v <= need).then(|| {
                format!("nu_v = {} does not exceed eta^2((q-1)/2 + q c_B^2) = {need:.4e} for q = {q} (eta = {eta:.4e})", cfg.constants.nu_v)
            })
        })
        .collect()
}

// -------------------------------------------------------------------------------------
// Checkpoints.

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: State,
}

pub fn write_checkpoint(path: &Path, state: &State, config_hash: &str) -> Result<()> {
    if config_hash.len() != 64 || !config_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(HsgsError::Config("config hash must be 64 hex digits".into()));
    }
    let mut buf = Vec::with_capacity(64 + 8 * (state.velocity.len() + state.temperature.len()));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for i in 0..32 {
        buf.push(u8::from_str_radix(&config_hash[2 * i..2 * i + 2], 16).unwrap());
    }
    buf.extend_from_slice(&state.time.to_le_bytes());
    for v in [state.velocity.len(), state.temperature.len()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in state.velocity.iter().chain(&state.temperature) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let bad = |what: &str| HsgsError::Format(format!("checkpoint {}: {what}", path.display()));
    if bytes.len() < 9 + 32 + 24 || &bytes[..9] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let config_hash = hex(&bytes[9..41]);
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().unwrap() };
    let time = f64::from_le_bytes(word(41));
    let nv = u64::from_le_bytes(word(49)) as usize;
    let nt = u64::from_le_bytes(word(57)) as usize;
    let body = &bytes[65..];
    if nv.checked_add(nt).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad("length does not match the stored sizes"));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Checkpoint {
        config_hash,
        state: State { velocity: vals[..nv].to_vec(), temperature: vals[nv..].to_vec(), time },
    })
}

// -------------------------------------------------------------------------------------
// Manifest and ledgers.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSeed {
    pub path: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub basis_cache_key: String,
    pub paths: Vec<PathSeed>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub wall_clock_s: f64,
    pub config: SimConfig,
}

impl RunManifest {
    pub fn new(config: &SimConfig, n_paths: u64, outputs: Vec<String>) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            basis_cache_key: TensorBasis::cache_key(&config.domain, config.n, config.n_z),
            paths: (0..n_paths).map(|path| PathSeed { path, seed: config.seed }).collect(),
            outputs,
            steps: 0,
            wall_clock_s: 0.0,
            config: config.clone(),
        }
    }

    /// Hash of everything that determines the outputs (not wall clock or step counts).
    pub fn hash(&self) -> Result<String> {
        let core = Self { steps: 0, wall_clock_s: 0.0, ..self.clone() };
        Ok(sha256_hex(self.to_toml_inner(&core)?.as_bytes()))
    }

    fn to_toml_inner(&self, m: &Self) -> Result<String> {
        toml::to_string(m).map_err(|e| HsgsError::Config(format!("cannot serialize manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        self.to_toml_inner(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Self = toml::from_str(&text).map_err(|e| HsgsError::Format(format!("manifest {}: {e}", path.display())))?;
        m.config.validate()?;
        Ok(m)
    }
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_ledger_csv(out: &mut impl Write, ledger: &EnergyLedger, manifest_hash: &str) -> Result<()> {
    writeln!(out, "# manifest {manifest_hash}")?;
    if ledger.stopped {
        let t = ledger.stop_time.map_or("nan".into(), fmt_float);
        writeln!(out, "# stopped at {t}{}", if ledger.nonfinite { " (non-finite state)" } else { "" })?;
    }
    writeln!(out, "{}", ledger.column_names().join(","))?;
    for row in &ledger.rows {
        let vals = EnergyLedger::row_values(row);
        let mut line = row.step.to_string();
        for v in &vals[1..] {
            line.push(',');
            line.push_str(&fmt_float(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

// -------------------------------------------------------------------------------------
// Export.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportField {
    Velocity,
    Temperature,
    VerticalVelocity,
    SurfacePressure,
    Pressure,
    BarotropicVelocity,
    BaroclinicVelocity,
}

impl ExportField {
    pub const ALL: [ExportField; 7] = [
        ExportField::Velocity,
        ExportField::Temperature,
        ExportField::VerticalVelocity,
        ExportField::SurfacePressure,
        ExportField::Pressure,
        ExportField::BarotropicVelocity,
        ExportField::BaroclinicVelocity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExportField::Velocity => "v",
            ExportField::Temperature => "T",
            ExportField::VerticalVelocity => "w",
            ExportField::SurfacePressure => "p_s",
            ExportField::Pressure => "p",
            ExportField::BarotropicVelocity => "vbar",
            ExportField::BaroclinicVelocity => "vtilde",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|f| f.name()).collect();
            HsgsError::Config(format!("unknown field `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// `component,x,y,z,value` rows; `z = None` marks a two-dimensional field.
fn write_field(path: &Path, grid: &DiscreteGrid, layout: Layout, layers: &[(Option<f64>, &[f64])], hash: &str) -> Result<()> {
    let pts = grid.coordinates(layout);
    let nu = grid.n_ufaces();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# manifest {hash}")?;
    writeln!(f, "component,x,y,z,value")?;
    for (z, vals) in layers {
        let zs = z.map_or("nan".to_string(), fmt_float);
        for (p, (&(x, y), v)) in pts.iter().zip(vals.iter()).enumerate() {
            let comp = if layout == Layout::Velocity && p >= nu { 1 } else { 0 };
            writeln!(f, "{comp},{},{},{zs},{}", fmt_float(x), fmt_float(y), fmt_float(*v))?;
        }
    }
    f.flush()?;
    Ok(())
}

fn layers_of<'a>(grid: &DiscreteGrid, f: &'a GridField) -> Vec<(Option<f64>, &'a [f64])> {
    (0..f.nz).map(|z| (Some(grid.quad.nodes[z]), f.level(z))).collect()
}

/// Writes `<dir>/<name>.csv` for each requested field.
pub fn export_fields(
    ctx: &OperatorContext,
    state: &State,
    forcing: &Forcing,
    what: &[ExportField],
    dir: &Path,
    hash: &str,
) -> Result<Vec<PathBuf>> {
    let b = &ctx.basis;
    let g = &b.grid;
    state.check_shape(b)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &field in what {
        let path = dir.join(format!("{}.csv", field.name()));
        match field {
            ExportField::Velocity => {
                let v = velocity_field(b, &state.velocity);
                write_field(&path, g, Layout::Velocity, &layers_of(g, &v), hash)?;
            }
            ExportField::Temperature => {
                let t = temperature_field(b, &state.temperature);
                write_field(&path, g, Layout::Cells, &layers_of(g, &t), hash)?;
            }
            ExportField::VerticalVelocity => {
                let w = diagnose_w(b, state)?;
                write_field(&path, g, Layout::Cells, &layers_of(g, &w), hash)?;
            }
            ExportField::SurfacePressure => {
                let ps = recover_surface_pressure(ctx, state, forcing)?;
                write_field(&path, g, Layout::Cells, &[(None, &ps)], hash)?;
            }
            ExportField::Pressure => {
                let ps = recover_surface_pressure(ctx, state, forcing)?;
                let t = temperature_field(b, &state.temperature);
                let p = reconstruct_pressure(g, &ps, &t, &ctx.constants.buoyancy())?;
                write_field(&path, g, Layout::Cells, &layers_of(g, &p), hash)?;
            }
            ExportField::BarotropicVelocity => {
                let vbar = barotropic_velocity(b, &state.velocity);
                write_field(&path, g, Layout::Velocity, &[(None, &vbar)], hash)?;
            }
            ExportField::BaroclinicVelocity => {
                let vt = velocity_field(b, &state.baroclinic_part(b).velocity);
                write_field(&path, g, Layout::Velocity, &layers_of(g, &vt), hash)?;
            }
        }
        written.push(path);
    }
    Ok(written)
}
