use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sta_core::dynamics::PhysicalConstants;
use sta_core::perturb::{Anharmonicity, EnergyMode};
use sta_core::quantum::PopulationFrame;
use sta_core::traps::TrapSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Every config key with its unit, shown in `--help`.
pub const KEYS_COMMON: &str = "\
CONFIG KEYS (TOML; unknown keys are errors)
  schema_version             must be 1
  seed                       integer, global RNG seed (overridden by --seed)
  [constants]
    mass_kg                  kg, particle mass (default 40 x 1.667e-27)
    omega0_rad_s             rad/s, reference trap frequency (default 2pi x 141e3)
    hbar_js                  J s (default CODATA)
    k_b_j_per_k              J/K (default CODATA)
  [sweep]
    threads                  worker threads, 0 = all cores (overridden by --threads)
    checkpoint               bool, keep a resumable checkpoint in the output directory
    batch                    cells per checkpoint flush";

pub const KEYS_DESIGN: &str = "\
  [transport]
    d_m | d_over_a0          m | oscillator lengths a0 (default 20.2 a0)
    t_f_s | u                s | dimensionless omega0 t_f (one of them)
    order                    5, 7 or 9: polynomial reference order
    protocol                 \"polynomial\" (exact inversion) or \"one_point\" (harmonic design)
    plan_samples             rows in plan.csv
  [trap]
    family                   power_law | harmonic | harmonic_cubic | harmonic_quartic | tweezers
    n                        power_law exponent (U ~ x^2n)
    eta_si                   power_law: m^(2-2n)/s^2; tweezers: m/s^2
    omega0_rad_s             rad/s (harmonic families, tweezers; default constants.omega0_rad_s)
    xi_m | xi_over_d         m | units of d (cubic, quartic)
    x_r_m | x_r_over_d       m | units of d (tweezers Rayleigh length)";

pub const KEYS_VERIFY: &str = "\
  [verify]
    tol                      relative integrator tolerance in [1e-13, 1e-6]
    samples                  rows in trajectory.csv
    fig1                     bool, emit fig1.csv for reference orders 5, 7, 9
    tf_perturbation          relative stretch of the plan duration (diagnostic), e.g. 0.01";

pub const KEYS_MAP: &str = "\
  [map]
    kind                     cubic | quartic
    mode                     perturbative | exact
    xi_over_d_min, xi_over_d_max   dimensionless, log-spaced rows
    n_xi                     rows
    u_max                    dimensionless omega0 t_f, at most 8 pi
    n_u                      columns, u_j = j u_max / n_u
    optima_scan              coarse points per row for minima.csv";

pub const KEYS_MAGIC: &str = "\
  [magic]
    kind                     cubic | quartic
    log10_xi_over_d          list of rows
    u_min, u_max, du         dimensionless sweep of omega0 t_f
    n_particles              ensemble size per sweep cell
    refine_particles         ensemble size for refinement
    dx_over_d                initial packet width in units of d
    stratify                 orbit points per sampled state
    order                    polynomial reference order
    prominence               decades a dip must fall below its surroundings
    window                   dimensionless u; minima closer than this form one dip
    refine_half              dimensionless u; golden-section half width";

pub const KEYS_QUANTUM: &str = "\
  [quantum]
    kind                     cubic | quartic
    log10_xi_over_d          anharmonicity row
    tf_star_u                dimensionless omega0 t_f*
    factors                  list of multiples of t_f* to run
    protocol                 one_point | polynomial
    order                    polynomial reference order (protocol = polynomial)
    n_points                 grid points, power of two
    margin_a0                grid margin beyond [0, d] in a0
    dt_omega                 dimensionless time step omega0 dt
    basis_stride, basis_size eigenbasis sub-grid
    threshold                population counted as excited
    frame                    lab | comoving
    snapshots                bool, dump |psi|^2 snapshots
    snapshot_every           steps between snapshots";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub constants: ConstantsConfig,
    pub transport: TransportConfig,
    pub trap: TrapConfig,
    pub verify: VerifyConfig,
    pub map: MapConfig,
    pub magic: MagicConfig,
    pub quantum: QuantumConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            constants: ConstantsConfig::default(),
            transport: TransportConfig::default(),
            trap: TrapConfig::default(),
            verify: VerifyConfig::default(),
            map: MapConfig::default(),
            magic: MagicConfig::default(),
            quantum: QuantumConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsConfig {
    pub mass_kg: f64,
    pub omega0_rad_s: f64,
    pub hbar_js: f64,
    pub k_b_j_per_k: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        let c = PhysicalConstants::default();
        ConstantsConfig { mass_kg: c.mass, omega0_rad_s: c.omega0, hbar_js: c.hbar, k_b_j_per_k: c.k_b }
    }
}

impl ConstantsConfig {
    pub fn physical(&self) -> Result<PhysicalConstants> {
        let c = PhysicalConstants {
            mass: self.mass_kg,
            hbar: self.hbar_js,
            k_b: self.k_b_j_per_k,
            omega0: self.omega0_rad_s,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Polynomial,
    OnePoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub d_m: Option<f64>,
    pub d_over_a0: Option<f64>,
    pub t_f_s: Option<f64>,
    pub u: Option<f64>,
    pub order: usize,
    pub protocol: Protocol,
    pub plan_samples: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            d_m: None,
            d_over_a0: None,
            t_f_s: None,
            u: None,
            order: 5,
            protocol: Protocol::Polynomial,
            plan_samples: 1001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PowerLaw,
    Harmonic,
    HarmonicCubic,
    HarmonicQuartic,
    Tweezers,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapConfig {
    pub family: Family,
    pub n: Option<u32>,
    pub eta_si: Option<f64>,
    pub omega0_rad_s: Option<f64>,
    pub xi_m: Option<f64>,
    pub xi_over_d: Option<f64>,
    pub x_r_m: Option<f64>,
    pub x_r_over_d: Option<f64>,
}

impl Default for TrapConfig {
    fn default() -> Self {
        TrapConfig {
            family: Family::Harmonic,
            n: None,
            eta_si: None,
            omega0_rad_s: None,
            xi_m: None,
            xi_over_d: None,
            x_r_m: None,
            x_r_over_d: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub tol: f64,
    pub samples: usize,
    pub fig1: bool,
    pub tf_perturbation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { tol: 1e-10, samples: 1001, fig1: false, tf_perturbation: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub kind: Anharmonicity,
    pub mode: EnergyMode,
    pub xi_over_d_min: f64,
    pub xi_over_d_max: f64,
    pub n_xi: usize,
    pub u_max: f64,
    pub n_u: usize,
    pub optima_scan: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            kind: Anharmonicity::Cubic,
            mode: EnergyMode::Perturbative,
            xi_over_d_min: 0.1,
            xi_over_d_max: 1e3,
            n_xi: 81,
            u_max: 8.0 * std::f64::consts::PI,
            n_u: 121,
            optima_scan: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagicConfig {
    pub kind: Anharmonicity,
    pub log10_xi_over_d: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub du: f64,
    pub n_particles: usize,
    pub refine_particles: usize,
    pub dx_over_d: f64,
    pub stratify: usize,
    pub order: usize,
    pub prominence: f64,
    pub window: f64,
    pub refine_half: f64,
}

impl Default for MagicConfig {
    fn default() -> Self {
        MagicConfig {
            kind: Anharmonicity::Cubic,
            log10_xi_over_d: vec![1.5],
            u_min: 4.0,
            u_max: 14.0,
            du: 0.02,
            n_particles: 2000,
            refine_particles: 20_000,
            dx_over_d: 0.02,
            stratify: 8,
            order: 5,
            prominence: 0.5,
            window: 0.6,
            refine_half: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumConfig {
    pub kind: Anharmonicity,
    pub log10_xi_over_d: f64,
    pub tf_star_u: f64,
    pub factors: Vec<f64>,
    pub protocol: Protocol,
    pub order: usize,
    pub n_points: usize,
    pub margin_a0: f64,
    pub dt_omega: f64,
    pub basis_stride: usize,
    pub basis_size: usize,
    pub threshold: f64,
    pub frame: PopulationFrame,
    pub snapshots: bool,
    pub snapshot_every: usize,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            kind: Anharmonicity::Quartic,
            log10_xi_over_d: -0.8,
            tf_star_u: 13.335,
            factors: vec![0.75, 1.0, 1.25],
            protocol: Protocol::OnePoint,
            order: 5,
            n_points: 4096,
            margin_a0: 10.0,
            dt_omega: 2.0 * std::f64::consts::PI / 4000.0,
            basis_stride: 7,
            basis_size: 256,
            threshold: 1e-3,
            frame: PopulationFrame::Lab,
            snapshots: false,
            snapshot_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub threads: usize,
    pub checkpoint: bool,
    pub batch: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { threads: 0, checkpoint: true, batch: 64 }
    }
}

/// Applies `section.key=value` to a TOML tree; the value is parsed as TOML
/// and falls back to a bare string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not of the form key=value"))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        table = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{k}` in `{path}` is not a table"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

pub struct LoadedConfig {
    pub config: RunConfig,
    /// Raw bytes of the config file, if one was given.
    pub source: Option<Vec<u8>>,
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig> {
    let (mut table, source) = match path {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
            let table: toml::Table =
                toml::from_str(text).with_context(|| format!("parsing config {}", p.display()))?;
            (table, Some(bytes))
        }
        None => (toml::Table::new(), None),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    if config.schema_version != SCHEMA_VERSION {
        bail!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            config.schema_version
        );
    }
    Ok(LoadedConfig { config, source })
}

impl RunConfig {
    pub fn distance(&self, c: &PhysicalConstants) -> Result<f64> {
        match (self.transport.d_m, self.transport.d_over_a0) {
            (Some(_), Some(_)) => bail!("give transport.d_m or transport.d_over_a0, not both"),
            (Some(d), None) => Ok(d),
            (None, Some(k)) => Ok(k * c.a0()),
            (None, None) => Ok(c.default_distance()),
        }
    }

    pub fn duration(&self, c: &PhysicalConstants) -> Result<f64> {
        match (self.transport.t_f_s, self.transport.u) {
            (Some(_), Some(_)) => bail!("give transport.t_f_s or transport.u, not both"),
            (Some(t), None) => Ok(t),
            (None, Some(u)) => Ok(u / c.omega0),
            (None, None) => bail!("transport.t_f_s or transport.u is required"),
        }
    }

    /// Trap in SI units for a transport of length `d`.
    pub fn trap_spec(&self, c: &PhysicalConstants, d: f64) -> Result<TrapSpec> {
        let t = &self.trap;
        let omega = t.omega0_rad_s.unwrap_or(c.omega0);
        let length = |m: Option<f64>, over_d: Option<f64>, name: &str| -> Result<f64> {
            match (m, over_d) {
                (Some(_), Some(_)) => bail!("give trap.{name}_m or trap.{name}_over_d, not both"),
                (Some(v), None) => Ok(v),
                (None, Some(r)) => Ok(r * d),
                (None, None) => bail!("trap.{name}_m or trap.{name}_over_d is required for {:?}", t.family),
            }
        };
        let spec = match t.family {
            Family::Harmonic => TrapSpec::Harmonic { omega0: omega },
            Family::PowerLaw => TrapSpec::PowerLaw {
                n: t.n.context("trap.n is required for power_law")?,
                eta: t.eta_si.context("trap.eta_si is required for power_law")?,
            },
            Family::HarmonicCubic => TrapSpec::HarmonicCubic { omega0: omega, xi: length(t.xi_m, t.xi_over_d, "xi")? },
            Family::HarmonicQuartic => {
                TrapSpec::HarmonicQuartic { omega0: omega, xi: length(t.xi_m, t.xi_over_d, "xi")? }
            }
            Family::Tweezers => {
                let x_r = length(t.x_r_m, t.x_r_over_d, "x_r")?;
                let eta = match (t.eta_si, t.omega0_rad_s) {
                    (Some(_), Some(_)) => bail!("give trap.eta_si or trap.omega0_rad_s for tweezers, not both"),
                    (Some(e), None) => e,
                    (None, w) => w.unwrap_or(c.omega0).powi(2) * x_r,
                };
                TrapSpec::Tweezers { eta, x_r }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}
