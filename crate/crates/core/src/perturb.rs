//! Perturbative anharmonicity-robust transport built on the 1-point protocol.
//!
//! Dimensionless throughout: lengths in units of `d`, time as `s = t/t_f`,
//! `u = ω₀ t_f` and `ε = d/ξ`. The harmonic design `x̃₀(s)` drives the
//! particle along `x̃₁(s)` in a pure harmonic trap; an anharmonic term
//! shifts it to `x̃₂ = x̃₁ + ε f₁` (cubic) or `x̃₁ + ε² f₂` (quartic).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ParticleState, PhysicalConstants};
use crate::error::{Error, Result};
use crate::quad::GaussRule;
use crate::roots::golden_section;
use crate::sweep::{self, Axis, SweepJob};
use crate::trajectory::OnePointProtocol;
use crate::traps::{TransportPlan, TrapSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anharmonicity {
    Cubic,
    Quartic,
}

impl Anharmonicity {
    /// Power of `ẍ̃₁` in the source term.
    fn power(self) -> i32 {
        match self {
            Anharmonicity::Cubic => 2,
            Anharmonicity::Quartic => 3,
        }
    }

    /// Prefactor of the convolution: `−1/u³` or `1/u⁵`.
    fn prefactor(self, u: f64) -> f64 {
        match self {
            Anharmonicity::Cubic => -1.0 / u.powi(3),
            Anharmonicity::Quartic => 1.0 / u.powi(5),
        }
    }

    /// Order in `ε` of the correction.
    pub fn order(self) -> i32 {
        match self {
            Anharmonicity::Cubic => 1,
            Anharmonicity::Quartic => 2,
        }
    }

    pub fn trap(self, omega0: f64, xi: f64) -> TrapSpec {
        match self {
            Anharmonicity::Cubic => TrapSpec::HarmonicCubic { omega0, xi },
            Anharmonicity::Quartic => TrapSpec::HarmonicQuartic { omega0, xi },
        }
    }

    /// Dimensionless energy bracket `v'²/(2u²) + X²/2 + (cubic or quartic term)`
    /// with `X` and `v' = dx̃/ds` in units of `d`.
    pub fn bracket(self, u: f64, eps: f64, x: f64, v_s: f64) -> f64 {
        let base = v_s * v_s / (2.0 * u * u) + 0.5 * x * x;
        match self {
            Anharmonicity::Cubic => base + eps * x * x * x / 3.0,
            Anharmonicity::Quartic => base + 0.25 * eps * eps * x.powi(4),
        }
    }
}

impl std::fmt::Display for Anharmonicity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Anharmonicity::Cubic => "cubic",
            Anharmonicity::Quartic => "quartic",
        })
    }
}

/// `ẍ̃₁(s) = 420 s² (1−s)² (1−2s)`.
pub fn one_point_acceleration(s: f64) -> f64 {
    let q = s * (1.0 - s);
    420.0 * q * q * (1.0 - 2.0 * s)
}

const PANEL_ORDER: usize = 16;

/// Sampled correction `f(s)` and `f'(s)` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub kind: Anharmonicity,
    pub u: f64,
    pub s: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
}

/// Evaluates `f(s) = pre ∫₀ˢ a(s')^p sin(u(s−s')) ds'` on `grid_n` panels by
/// splitting the kernel into cumulative cosine and sine moments, each
/// integrated with a 16-point Gauss rule per panel.
pub fn correction(kind: Anharmonicity, u: f64, grid_n: usize) -> Result<Correction> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::invalid(format!("u must be positive (got {u})")));
    }
    if grid_n < 512 {
        return Err(Error::invalid(format!("grid_n must be at least 512 (got {grid_n})")));
    }
    let rule = GaussRule::new(PANEL_ORDER);
    let p = kind.power();
    let pre = kind.prefactor(u);
    let h = 1.0 / grid_n as f64;
    let mut s_grid = Vec::with_capacity(grid_n + 1);
    let mut f = Vec::with_capacity(grid_n + 1);
    let mut df = Vec::with_capacity(grid_n + 1);
    let (mut c, mut sn) = (0.0, 0.0);
    for i in 0..=grid_n {
        let s = if i == grid_n { 1.0 } else { i as f64 * h };
        if i > 0 {
            let lo = (i - 1) as f64 * h;
            c += rule.panel(lo, s, |x| one_point_acceleration(x).powi(p) * (u * x).cos());
            sn += rule.panel(lo, s, |x| one_point_acceleration(x).powi(p) * (u * x).sin());
        }
        let (si, co) = (u * s).sin_cos();
        s_grid.push(s);
        f.push(pre * (si * c - co * sn));
        df.push(pre * u * (co * c + si * sn));
    }
    Ok(Correction { kind, u, s: s_grid, f, df })
}

impl Correction {
    pub fn at_end(&self) -> (f64, f64) {
        (*self.f.last().unwrap(), *self.df.last().unwrap())
    }
}

/// `(f(1), f'(1))` for the given kind and `u`, at the default resolution.
pub fn correction_at_end(kind: Anharmonicity, u: f64) -> Result<(f64, f64)> {
    Ok(correction(kind, u, 1024)?.at_end())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeSolution {
    pub base: OnePointProtocol,
    pub eps: f64,
    pub correction: Correction,
}

impl PerturbativeSolution {
    /// Perturbative solution for `ε = d/ξ` on the protocol `d = 1, ω₀ = 1, t_f = u`.
    pub fn new(kind: Anharmonicity, u: f64, eps: f64, grid_n: usize) -> Result<Self> {
        Ok(PerturbativeSolution {
            base: OnePointProtocol::dimensionless(u)?,
            eps,
            correction: correction(kind, u, grid_n)?,
        })
    }

    pub fn kind(&self) -> Anharmonicity {
        self.correction.kind
    }

    fn weight(&self) -> f64 {
        self.eps.powi(self.kind().order())
    }

    /// `x̃₂` and `dx̃₂/ds` at grid node `i`.
    pub fn x2_at_node(&self, i: usize) -> (f64, f64) {
        let (_, x1) = self.base.trajectories();
        let s = self.correction.s[i];
        let d = x1.eval_with_derivatives(s, 1);
        let w = self.weight();
        (d[0] + w * self.correction.f[i], d[1] + w * self.correction.df[i])
    }

    /// `x̃₂(1), x̃₂'(1)`.
    pub fn x2_end(&self) -> (f64, f64) {
        self.x2_at_node(self.correction.s.len() - 1)
    }

    /// `ΔE / (m ω₀² d²)`: the printed bracket at `s = 1` with `x̃ = x̃₂`.
    pub fn energy_bracket(&self) -> f64 {
        let (x, v) = self.x2_end();
        self.kind().bracket(self.base.u(), self.eps, x - 1.0, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Printed bracket evaluated on the perturbative `x̃₂`.
    Perturbative,
    /// Forward integration of the full nonlinear equation of motion.
    Exact,
}

/// Whether the cubic trap can supply the peak acceleration of the harmonic
/// design: the restoring force is bounded by `ω₀² ξ / 4`.
pub fn design_feasible(kind: Anharmonicity, u: f64, eps: f64) -> bool {
    match kind {
        Anharmonicity::Quartic => true,
        Anharmonicity::Cubic => 4.0 * eps * max_one_point_acceleration() / (u * u) < 1.0,
    }
}

/// Peak of `ẍ̃₁(s)` on `[0, 1]`.
pub fn max_one_point_acceleration() -> f64 {
    // derivative 420 s (1-s)(2 - 10 s + 10 s²) vanishes at s = (5 - √5)/10
    let s = (5.0 - 5f64.sqrt()) / 10.0;
    one_point_acceleration(s)
}

/// Tolerance used for exact-mode integrations.
pub const EXACT_TOL: f64 = 1e-13;

/// Dimensionless `ΔE / (m ω₀² d²)` from exact integration.
pub fn exact_bracket(kind: Anharmonicity, u: f64, eps: f64) -> Result<f64> {
    let protocol = OnePointProtocol::dimensionless(u)?;
    let trap = kind.trap(1.0, 1.0 / eps);
    let plan = TransportPlan::one_point(trap, &protocol)?;
    let f = dynamics::integrate_final(&trap, &plan, ParticleState::at_rest(0.0), u, EXACT_TOL)?;
    dynamics::specific_energy(&trap, &plan, &f)
}

/// Residual energy in units of `ħω₀` for one `(u, ξ/d)` cell; `None` when the
/// cubic design is infeasible.
pub fn energy_cell(
    kind: Anharmonicity,
    mode: EnergyMode,
    u: f64,
    xi_over_d: f64,
    prefactor: f64,
) -> Result<Option<f64>> {
    let eps = 1.0 / xi_over_d;
    if !design_feasible(kind, u, eps) {
        return Ok(None);
    }
    let b = match mode {
        EnergyMode::Perturbative => PerturbativeSolution::new(kind, u, eps, 1024)?.energy_bracket(),
        EnergyMode::Exact => exact_bracket(kind, u, eps)?,
    };
    Ok(Some(prefactor * b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMap {
    pub kind: Anharmonicity,
    pub mode: EnergyMode,
    pub xi_over_d: Vec<f64>,
    pub u: Vec<f64>,
    /// Row-major in `(xi_over_d, u)`; `None` marks infeasible cells.
    pub values: Vec<Option<f64>>,
    pub constants: PhysicalConstants,
    pub prefactor: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGrid {
    pub xi_over_d: Vec<f64>,
    pub u: Vec<f64>,
}

impl MapGrid {
    /// `n_u` points `j · u_max / n_u`, `j = 1..=n_u`, and `n_xi` log-spaced
    /// values of `ξ/d` over `[xi_lo, xi_hi]`.
    pub fn new(xi_lo: f64, xi_hi: f64, n_xi: usize, u_max: f64, n_u: usize) -> Result<Self> {
        if !(xi_lo > 0.0 && xi_hi >= xi_lo && u_max > 0.0) {
            return Err(Error::invalid("map ranges must be positive and ordered"));
        }
        if u_max > 8.0 * std::f64::consts::PI * (1.0 + 1e-12) {
            return Err(Error::invalid("u range must lie within (0, 8π]"));
        }
        let (a, b) = (xi_lo.log10(), xi_hi.log10());
        let xi = (0..n_xi)
            .map(|i| {
                let f = if n_xi == 1 { 0.0 } else { i as f64 / (n_xi - 1) as f64 };
                10f64.powf(a + (b - a) * f)
            })
            .collect();
        let u = (1..=n_u).map(|j| u_max * j as f64 / n_u as f64).collect();
        Ok(MapGrid { xi_over_d: xi, u })
    }
}

impl Default for MapGrid {
    fn default() -> Self {
        MapGrid::new(0.1, 1e3, 81, 8.0 * std::f64::consts::PI, 121).expect("static grid")
    }
}

/// Sweep job for an energy map.
pub fn map_job(kind: Anharmonicity, mode: EnergyMode, grid: &MapGrid) -> SweepJob {
    SweepJob::new(
        format!("energy_map/{kind}/{mode:?}"),
        vec![
            Axis::new("xi_over_d", grid.xi_over_d.clone()),
            Axis::new("u", grid.u.clone()),
        ],
    )
}

/// Residual-energy map over a grid, evaluated through the sweep engine.
/// `job` may carry checkpoint and thread settings; its axes must come from
/// [`map_job`].
pub fn energy_map_with(
    kind: Anharmonicity,
    mode: EnergyMode,
    grid: &MapGrid,
    constants: &PhysicalConstants,
    d: f64,
    job: &SweepJob,
) -> Result<EnergyMap> {
    constants.validate()?;
    let prefactor = constants.energy_prefactor(d);
    let table = sweep::run(job, |cell| {
        let v = energy_cell(kind, mode, cell.coords[1], cell.coords[0], prefactor)?;
        Ok(vec![v.unwrap_or(f64::NAN)])
    })?
    .into_table()?;
    Ok(EnergyMap {
        kind,
        mode,
        xi_over_d: grid.xi_over_d.clone(),
        u: grid.u.clone(),
        values: table
            .rows
            .iter()
            .map(|(_, v)| v[0].is_finite().then_some(v[0]))
            .collect(),
        constants: *constants,
        prefactor,
        seed: job.seed,
    })
}

pub fn energy_map(
    kind: Anharmonicity,
    mode: EnergyMode,
    grid: &MapGrid,
    constants: &PhysicalConstants,
    d: f64,
) -> Result<EnergyMap> {
    let mut job = map_job(kind, mode, grid);
    job.threads = rayon::current_num_threads().max(1);
    energy_map_with(kind, mode, grid, constants, d, &job)
}

/// `log10` floor applied to vanishing energies.
const LOG_FLOOR: f64 = -300.0;

impl EnergyMap {
    pub fn value(&self, i_xi: usize, i_u: usize) -> Option<f64> {
        self.values[i_xi * self.u.len() + i_u]
    }

    /// Row at fixed `ξ/d` as `(u, ΔE/ħω₀)`.
    pub fn row(&self, i_xi: usize) -> Vec<(f64, Option<f64>)> {
        self.u.iter().enumerate().map(|(j, &u)| (u, self.value(i_xi, j))).collect()
    }

    /// `# seed=` line, then CSV with columns `log10_xi_over_d,u,log10_dE_over_hw`; infeasible cells
    /// leave the last field empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "log10_xi_over_d,u,log10_dE_over_hw")?;
        for (i, xi) in self.xi_over_d.iter().enumerate() {
            for (j, u) in self.u.iter().enumerate() {
                match self.value(i, j) {
                    Some(e) => writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e}",
                        xi.log10(),
                        u,
                        e.abs().log10().max(LOG_FLOOR)
                    )?,
                    None => writeln!(w, "{:.16e},{:.16e},", xi.log10(), u)?,
                }
            }
        }
        Ok(())
    }

    /// JSON sidecar: axes, constants and a provenance string.
    pub fn sidecar(&self, provenance: &str) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "mode": self.mode,
            "log10_xi_over_d": self.xi_over_d.iter().map(|x| x.log10()).collect::<Vec<_>>(),
            "u": self.u,
            "constants": self.constants,
            "energy_prefactor_m_omega0_d2_over_hbar": self.prefactor,
            "seed": self.seed,
            "infeasible_cells": self.values.iter().filter(|v| v.is_none()).count(),
            "provenance": provenance,
        })
    }
}

/// Local minima of `ΔE(u)` at fixed `ξ/d` over `[u_lo, u_hi]`.
///
/// A coarse scan of `scan` points finds candidate minima; each is refined by
/// golden section on `sqrt(ΔE)` (whose minimum is V-shaped when `ΔE`
/// touches zero) to `Δu < 1e-10`. A minimum is kept only if it lies at least
/// two decades below the lower of the two maxima flanking it.
pub fn optimal_u(
    kind: Anharmonicity,
    mode: EnergyMode,
    xi_over_d: f64,
    u_range: (f64, f64),
    prefactor: f64,
    scan: usize,
) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = u_range;
    if !(lo > 0.0 && hi > lo) || scan < 3 {
        return Err(Error::invalid("u range must be positive and ordered, scan >= 3"));
    }
    let eval = |u: f64| -> f64 {
        match energy_cell(kind, mode, u, xi_over_d, prefactor) {
            Ok(Some(e)) => e.abs(),
            _ => f64::INFINITY,
        }
    };
    let us: Vec<f64> = (0..scan).map(|i| lo + (hi - lo) * i as f64 / (scan - 1) as f64).collect();
    let es: Vec<f64> = us.iter().map(|&u| eval(u)).collect();
    let mut out = Vec::new();
    for i in 1..scan - 1 {
        if !(es[i] <= es[i - 1] && es[i] < es[i + 1]) {
            continue;
        }
        let (u0, _) = golden_section(|u| eval(u).sqrt(), us[i - 1], us[i + 1], 1e-10);
        let e0 = eval(u0);
        let left = es[..i].iter().rev().take_while(|e| e.is_finite()).fold(0.0f64, |m, &e| m.max(e));
        let right = es[i + 1..].iter().take_while(|e| e.is_finite()).fold(0.0f64, |m, &e| m.max(e));
        let plateau = left.min(right);
        if e0 == 0.0 || plateau / e0 >= 100.0 {
            out.push((u0, e0));
        }
    }
    Ok(out)
}

/// Log-log slope of `ΔE` against `d/ξ` from a least-squares fit.
pub fn energy_slope(kind: Anharmonicity, mode: EnergyMode, u: f64, eps: &[f64]) -> Result<f64> {
    let mut pts = Vec::with_capacity(eps.len());
    for &e in eps {
        let b = match mode {
            EnergyMode::Perturbative => PerturbativeSolution::new(kind, u, e, 2048)?.energy_bracket(),
            EnergyMode::Exact => exact_bracket(kind, u, e)?,
        };
        pts.push((e.ln(), b.abs().ln()));
    }
    Ok(linear_fit_slope(&pts))
}

pub fn linear_fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Exact-mode worst case `max_u ΔE/ħω₀` over `us` for each `ξ/d`.
pub fn plateau_profile(
    kind: Anharmonicity,
    xi_over_d: &[f64],
    us: &[f64],
    prefactor: f64,
) -> Result<Vec<(f64, f64)>> {
    xi_over_d
        .iter()
        .map(|&xi| {
            let mut worst = 0.0f64;
            for &u in us {
                let e = energy_cell(kind, EnergyMode::Exact, u, xi, prefactor)?
                    .unwrap_or(f64::INFINITY);
                worst = worst.max(e);
            }
            Ok((xi, worst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correction_starts_empty() {
        let c = correction(Anharmonicity::Cubic, 10.0, 512).unwrap();
        assert_eq!(c.f[0], 0.0);
        assert_eq!(c.df[0], 0.0);
    }

    #[test]
    fn peak_one_point_acceleration() {
        let fine = (0..=100_000)
            .map(|i| one_point_acceleration(i as f64 / 100_000.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((max_one_point_acceleration() - fine).abs() < 1e-6);
    }

    #[test]
    fn harmonic_limit_has_no_residual() {
        let s = PerturbativeSolution::new(Anharmonicity::Cubic, 9.0, 1e-12, 512).unwrap();
        assert!(s.energy_bracket() < 1e-20);
    }

    #[test]
    fn cosine_moment_zero_is_an_optimum() {
        // f(1) and f'(1) vanish together where ∫ a² cos(u(s - 1/2)) ds = 0
        let (f, df) = correction_at_end(Anharmonicity::Cubic, 6.970_769_604_853_377).unwrap();
        assert!(f.abs() < 1e-12 && df.abs() < 1e-11, "{f} {df}");
    }

    #[test]
    fn grid_defaults() {
        let g = MapGrid::default();
        assert_eq!(g.u.len(), 121);
        assert_eq!(g.xi_over_d.len(), 81);
        assert!((g.u[120] - 8.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((g.xi_over_d[0] - 0.1).abs() < 1e-15 && (g.xi_over_d[80] - 1e3).abs() < 1e-9);
    }
}
