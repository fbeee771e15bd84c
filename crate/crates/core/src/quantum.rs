//! Wave-packet transport in oscillator units (`ħ = m = 1`, lengths in
//! `a₀`, times in `1/ω₀`, energies in `ħω₀`).
//!
//! Traps and plans passed here must already be expressed in these units,
//! e.g. `Anharmonicity::Quartic.trap(1.0, xi_over_a0)` with a reference of
//! length `d/a₀` and duration `ω₀ t_f`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::PhysicalConstants;
use crate::error::{Error, Result};
use crate::traps::{TransportPlan, TrapSpec};

/// Uniform periodic grid `x_j = x_min + j (x_max − x_min)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 16 {
            return Err(Error::invalid(format!("grid size must be a power of two ≥ 16 (got {n})")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::invalid(format!("empty grid [{x_min}, {x_max}]")));
        }
        Ok(Grid { x_min, x_max, n })
    }

    /// Default transport grid: `n` points over `[−10, d + 10]`.
    pub fn for_transport(d: f64, n: usize) -> Result<Self> {
        Grid::new(-10.0, d + 10.0, n)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let dk = 2.0 * std::f64::consts::PI / (self.x_max - self.x_min);
        let n = self.n as i64;
        (0..n)
            .map(|j| if j < n / 2 { j as f64 * dk } else { (j - n) as f64 * dk })
            .collect()
    }

    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }
}

struct Spectral {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    scratch: Vec<Complex64>,
}

impl Spectral {
    fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Spectral {
            fwd,
            inv,
            k: grid.wavenumbers(),
            scratch: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    fn forward(&mut self, a: &mut [Complex64]) {
        self.fwd.process_with_scratch(a, &mut self.scratch);
    }

    /// Inverse transform including the `1/n` factor.
    fn inverse(&mut self, a: &mut [Complex64]) {
        self.inv.process_with_scratch(a, &mut self.scratch);
        let s = 1.0 / a.len() as f64;
        for z in a.iter_mut() {
            *z *= s;
        }
    }

    fn kinetic(&mut self, psi: &[Complex64], dx: f64) -> f64 {
        let mut a = psi.to_vec();
        self.forward(&mut a);
        let n = a.len() as f64;
        let mut acc = 0.0;
        for (z, k) in a.iter().zip(&self.k) {
            acc += z.norm_sqr() * 0.5 * k * k;
        }
        acc * dx / n
    }
}

/// A wave function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Wavepacket {
    pub grid: Grid,
    pub psi: Vec<Complex64>,
    pub constants: PhysicalConstants,
}

impl Wavepacket {
    /// Normalised Gaussian `exp(−(x − c)²/(2σ²) + i k₀ x)`.
    pub fn gaussian(grid: Grid, center: f64, sigma: f64, k0: f64, constants: PhysicalConstants) -> Self {
        let mut psi: Vec<Complex64> = grid
            .positions()
            .iter()
            .map(|&x| Complex64::from_polar((-(x - center).powi(2) / (2.0 * sigma * sigma)).exp(), k0 * x))
            .collect();
        normalize(&mut psi, grid.dx());
        Wavepacket { grid, psi, constants }
    }

    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn mean_x(&self) -> f64 {
        self.psi
            .iter()
            .enumerate()
            .map(|(j, z)| z.norm_sqr() * self.grid.x(j))
            .sum::<f64>()
            * self.grid.dx()
    }

    pub fn std_x(&self) -> f64 {
        let m = self.mean_x();
        let m2 = self
            .psi
            .iter()
            .enumerate()
            .map(|(j, z)| z.norm_sqr() * self.grid.x(j).powi(2))
            .sum::<f64>()
            * self.grid.dx();
        (m2 - m * m).sqrt()
    }

    /// `⟨p²/2 + U(x − x₀)⟩`.
    pub fn energy(&self, trap: &TrapSpec, x0: f64) -> f64 {
        let mut sp = Spectral::new(&self.grid);
        self.energy_with(&mut sp, trap, x0)
    }

    fn energy_with(&self, sp: &mut Spectral, trap: &TrapSpec, x0: f64) -> f64 {
        let dx = self.grid.dx();
        let pot: f64 = self
            .psi
            .iter()
            .enumerate()
            .map(|(j, z)| z.norm_sqr() * trap.potential(self.grid.x(j) - x0))
            .sum::<f64>()
            * dx;
        sp.kinetic(&self.psi, dx) + pot
    }

    /// `|⟨a|b⟩|²` on a shared grid.
    pub fn fidelity(&self, other: &Wavepacket) -> f64 {
        let s: Complex64 = self.psi.iter().zip(&other.psi).map(|(a, b)| a.conj() * b).sum();
        (s * self.grid.dx()).norm_sqr()
    }

    fn edge_amplitude(&self) -> f64 {
        let n = self.psi.len();
        self.psi[..4]
            .iter()
            .chain(&self.psi[n - 4..])
            .fold(0.0f64, |m, z| m.max(z.norm()))
    }
}

fn normalize(psi: &mut [Complex64], dx: f64) {
    let s = (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * dx).sqrt();
    for z in psi.iter_mut() {
        *z /= s;
    }
}

/// Imaginary-time step ladder and stopping rule for [`ground_state`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateOptions {
    pub ladder: Vec<f64>,
    /// Stop a rung once the energy changes by less than this per step.
    pub tol: f64,
    pub max_steps_per_rung: usize,
    /// Target `‖Hψ − Eψ‖` of the final polish; the energy error is of order
    /// its square.
    pub residual_tol: f64,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        GroundStateOptions {
            ladder: vec![0.05, 0.01],
            tol: 1e-12,
            max_steps_per_rung: 100_000,
            residual_tol: 1e-7,
        }
    }
}

/// Ground state of the static trap centred at 0. Imaginary-time
/// split-operator relaxation from the harmonic Gaussian runs down the
/// `ladder`; its fixed point carries an `O(dτ²)` splitting bias, which a
/// preconditioned Rayleigh-quotient iteration on the grid Hamiltonian then
/// removes.
pub fn ground_state(
    trap: &TrapSpec,
    grid: Grid,
    constants: PhysicalConstants,
    opts: &GroundStateOptions,
) -> Result<Wavepacket> {
    trap.validate()?;
    let w = trap.small_oscillation_omega().unwrap_or(1.0);
    let mut wp = Wavepacket::gaussian(grid, 0.0, (1.0 / w).sqrt(), 0.0, constants);
    let mut sp = Spectral::new(&grid);
    let dx = grid.dx();
    let v: Vec<f64> = grid.positions().iter().map(|&x| trap.potential(x)).collect();
    if v.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("trap potential is not finite on the grid"));
    }
    let mut e_prev = wp.energy_with(&mut sp, trap, 0.0);
    for &dtau in &opts.ladder {
        let half: Vec<f64> = v.iter().map(|p| (-0.5 * dtau * p).exp()).collect();
        let kin: Vec<f64> = sp.k.iter().map(|k| (-0.5 * dtau * k * k).exp()).collect();
        let mut converged = false;
        for _ in 0..opts.max_steps_per_rung {
            for (z, h) in wp.psi.iter_mut().zip(&half) {
                *z *= *h;
            }
            sp.forward(&mut wp.psi);
            for (z, f) in wp.psi.iter_mut().zip(&kin) {
                *z *= *f;
            }
            sp.inverse(&mut wp.psi);
            for (z, h) in wp.psi.iter_mut().zip(&half) {
                *z *= *h;
            }
            normalize(&mut wp.psi, dx);
            let e = wp.energy_with(&mut sp, trap, 0.0);
            let change = (e - e_prev).abs();
            e_prev = e;
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "imaginary-time relaxation did not settle at dτ = {dtau} within {} steps",
                opts.max_steps_per_rung
            )));
        }
    }
    let x: Vec<f64> = wp.psi.iter().map(|z| z.re).collect();
    let x = polish_ground_state(&mut sp, &v, dx, x, opts.residual_tol)?;
    wp.psi = x.into_iter().map(|r| Complex64::new(r, 0.0)).collect();
    Ok(wp)
}

fn apply_h(sp: &mut Spectral, v: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    sp.forward(&mut a);
    for (z, k) in a.iter_mut().zip(&sp.k) {
        *z *= 0.5 * k * k;
    }
    sp.inverse(&mut a);
    a.iter().zip(v).zip(x).map(|((z, p), xi)| z.re + p * xi).collect()
}

fn dot(a: &[f64], b: &[f64], dx: f64) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() * dx
}

/// Single-vector LOBPCG with a kinetic preconditioner.
fn polish_ground_state(sp: &mut Spectral, v: &[f64], dx: f64, mut x: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let nrm = dot(&x, &x, dx).sqrt();
    x.iter_mut().for_each(|r| *r /= nrm);
    let mut p: Option<Vec<f64>> = None;
    let (mut rho_best, mut flat) = (f64::INFINITY, 0);
    for _ in 0..2000 {
        let hx = apply_h(sp, v, &x);
        let rho = dot(&x, &hx, dx);
        let r: Vec<f64> = hx.iter().zip(&x).map(|(h, xi)| h - rho * xi).collect();
        if dot(&r, &r, dx).sqrt() < tol * rho.abs().max(1.0) {
            return Ok(x);
        }
        // the residual can stall on far-tail round-off once the energy is exact
        if rho < rho_best - 1e-14 * rho.abs() {
            rho_best = rho;
            flat = 0;
        } else {
            flat += 1;
        }
        if flat >= 20 {
            return Ok(x);
        }
        let mut w: Vec<Complex64> = r.iter().map(|&q| Complex64::new(q, 0.0)).collect();
        sp.forward(&mut w);
        for (z, k) in w.iter_mut().zip(&sp.k) {
            *z /= 0.5 * k * k + rho.abs().max(1.0);
        }
        sp.inverse(&mut w);
        let w: Vec<f64> = w.iter().map(|z| z.re).collect();
        let mut basis = vec![x.clone()];
        for cand in std::iter::once(w).chain(p.take()) {
            let mut c = cand;
            for _ in 0..2 {
                for b in &basis {
                    let proj = dot(b, &c, dx);
                    c.iter_mut().zip(b).for_each(|(ci, bi)| *ci -= proj * bi);
                }
            }
            let n = dot(&c, &c, dx).sqrt();
            if n > 1e-14 {
                c.iter_mut().for_each(|ci| *ci /= n);
                basis.push(c);
            }
        }
        let hb: Vec<Vec<f64>> = basis.iter().map(|b| apply_h(sp, v, b)).collect();
        let m = basis.len();
        let a = DMatrix::from_fn(m, m, |i, j| 0.5 * (dot(&basis[i], &hb[j], dx) + dot(&basis[j], &hb[i], dx)));
        let eig = SymmetricEigen::new(a);
        let lo = (0..m).min_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
        let c = eig.eigenvectors.column(lo);
        let mut xn = vec![0.0; x.len()];
        for (k, b) in basis.iter().enumerate() {
            xn.iter_mut().zip(b).for_each(|(xi, bi)| *xi += c[k] * bi);
        }
        let dir: Vec<f64> = xn.iter().zip(&basis[0]).map(|(a, b)| a - c[0] * b).collect();
        p = Some(dir);
        let nrm = dot(&xn, &xn, dx).sqrt();
        x = xn.into_iter().map(|r| r / nrm).collect();
    }
    Err(Error::Convergence("ground-state refinement did not reach the residual target".into()))
}

/// Periodic Fourier-grid Hamiltonian `p²/2 + U(x − x₀)` as a dense matrix.
pub fn dense_hamiltonian(trap: &TrapSpec, grid: &Grid, x0: f64) -> DMatrix<f64> {
    let n = grid.n;
    let mut sp = Spectral::new(grid);
    let mut col: Vec<Complex64> = sp.k.iter().map(|k| Complex64::new(0.5 * k * k, 0.0)).collect();
    sp.inverse(&mut col);
    let mut h = DMatrix::from_fn(n, n, |i, j| col[(i + n - j) % n].re);
    for i in 0..n {
        h[(i, i)] += trap.potential(grid.x(i) - x0);
    }
    h
}

/// Eigenstates of the static trap on a sub-grid made of every `stride`-th
/// point of a transport grid, centred on the point nearest the origin.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Index of the first sub-grid point on the parent grid.
    pub offset: usize,
    pub stride: usize,
    pub h: f64,
    pub energies: Vec<f64>,
    /// Columns are eigenvectors normalised so that `Σ|φ|² h = 1`.
    pub vectors: DMatrix<f64>,
}

impl EigenBasis {
    pub fn new(trap: &TrapSpec, parent: &Grid, stride: usize, size: usize) -> Result<Self> {
        if stride == 0 || !size.is_power_of_two() || size < 16 {
            return Err(Error::Basis("basis needs stride ≥ 1 and a power-of-two size ≥ 16".into()));
        }
        let center = (-parent.x_min / parent.dx()).round() as i64;
        let first = center - (size / 2 * stride) as i64;
        let last = first + ((size - 1) * stride) as i64;
        if first < 0 || last >= parent.n as i64 {
            return Err(Error::Basis(format!(
                "basis of {size} points at stride {stride} does not fit on the grid"
            )));
        }
        let offset = first as usize;
        let x_min = parent.x(offset);
        let h = parent.dx() * stride as f64;
        let sub = Grid { x_min, x_max: x_min + h * size as f64, n: size };
        let eig = SymmetricEigen::new(dense_hamiltonian(trap, &sub, 0.0));
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let scale = 1.0 / h.sqrt();
        let vectors = DMatrix::from_fn(size, size, |r, c| eig.eigenvectors[(r, order[c])] * scale);
        Ok(EigenBasis { offset, stride, h, energies, vectors })
    }

    pub fn size(&self) -> usize {
        self.energies.len()
    }

    /// Populations of a trap-frame wave function sampled on the parent grid.
    pub fn populations(&self, psi: &[Complex64]) -> Vec<f64> {
        let m = self.size();
        let samples: Vec<Complex64> = (0..m).map(|r| psi[self.offset + r * self.stride]).collect();
        (0..m)
            .map(|c| {
                let amp: Complex64 = (0..m).map(|r| samples[r] * self.vectors[(r, c)]).sum();
                (amp * self.h).norm_sqr()
            })
            .collect()
    }
}

/// Frame used to attach eigenstates to the moving trap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationFrame {
    /// Instantaneous eigenstates of `p²/2 + U(x − x₀(t))`.
    Lab,
    /// Same eigenstates, additionally boosted to the trap velocity `ẋ₀(t)`.
    Comoving,
}

/// Propagation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub dt: f64,
    /// Record energy and `⟨x⟩` every this many steps (the last step is always recorded).
    pub record_every: usize,
    /// Keep a copy of ψ every this many steps.
    pub snapshot_every: Option<usize>,
    /// Largest `dt · k_eff²/2` accepted.
    pub max_phase: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            dt: 2.0 * std::f64::consts::PI / 4000.0,
            record_every: 10,
            snapshot_every: Some(50),
            max_phase: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub psi: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub t_f: f64,
    pub e_i: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Wavepacket,
    pub max_norm_error: f64,
    pub max_edge: f64,
}

impl Propagation {
    pub fn final_ratio(&self) -> f64 {
        self.energy.last().copied().unwrap_or(f64::NAN) / self.e_i
    }

    /// CSV `t_over_tf,E_over_Ei`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_over_tf,E_over_Ei")?;
        for (t, e) in self.times.iter().zip(&self.energy) {
            writeln!(w, "{:.16e},{:.16e}", t / self.t_f, e / self.e_i)?;
        }
        Ok(())
    }
}

/// Largest wavenumber carrying non-negligible weight (`|ψ̂|² > 1e-16` of the peak).
pub fn effective_k(wp: &Wavepacket) -> f64 {
    let mut a = wp.psi.clone();
    let mut sp = Spectral::new(&wp.grid);
    sp.forward(&mut a);
    let peak = a.iter().fold(0.0f64, |m, z| m.max(z.norm_sqr()));
    a.iter()
        .zip(&sp.k)
        .filter(|(z, _)| z.norm_sqr() > 1e-16 * peak)
        .fold(0.0f64, |m, (_, k)| m.max(k.abs()))
}

/// Strang split-operator evolution under `U(x − x₀(t))`, with `x₀` taken at
/// the middle of each step. Energies use `x₀(t)` at the recorded time.
pub fn propagate(
    init: Wavepacket,
    trap: &TrapSpec,
    plan: &TransportPlan,
    opts: &PropagationOptions,
) -> Result<Propagation> {
    crate::dynamics::check_compatible(trap, plan)?;
    let t_f = plan.duration();
    if !(opts.dt > 0.0) || opts.record_every == 0 {
        return Err(Error::invalid("dt must be positive and record_every ≥ 1"));
    }
    let steps = (t_f / opts.dt).ceil().max(1.0) as usize;
    let dt = t_f / steps as f64;
    let ev = plan.evaluator()?;
    let grid = init.grid;
    let w = trap.small_oscillation_omega().unwrap_or(1.0);
    if dt * w > 0.1 {
        return Err(Error::invalid(format!("dt = {dt} does not resolve the trap period")));
    }
    let v_max = (0..=512)
        .map(|i| ev.x0_with_rate(t_f * i as f64 / 512.0).1.abs())
        .fold(0.0f64, f64::max);
    let k_eff = effective_k(&init) + v_max;
    if k_eff > grid.k_max() {
        return Err(Error::invalid(format!(
            "grid resolves |k| ≤ {:.3} but the transport needs {k_eff:.3}",
            grid.k_max()
        )));
    }
    if dt * k_eff * k_eff / 2.0 > opts.max_phase {
        return Err(Error::invalid(format!(
            "dt·k_eff²/2 = {:.3} exceeds {} (k_eff = {k_eff:.3}); reduce dt",
            dt * k_eff * k_eff / 2.0,
            opts.max_phase
        )));
    }

    let mut sp = Spectral::new(&grid);
    let xs = grid.positions();
    let kin: Vec<Complex64> = sp.k.iter().map(|k| Complex64::from_polar(1.0, -0.5 * dt * k * k)).collect();
    let mut wp = init;
    let e_i = wp.energy_with(&mut sp, trap, ev.x0(0.0));
    let mut out = Propagation {
        t_f,
        e_i,
        times: vec![0.0],
        energy: vec![e_i],
        mean_x: vec![wp.mean_x()],
        snapshots: Vec::new(),
        final_state: wp.clone(),
        max_norm_error: (wp.norm() - 1.0).abs(),
        max_edge: wp.edge_amplitude(),
    };
    if opts.snapshot_every.is_some() {
        out.snapshots.push(Snapshot { t: 0.0, psi: wp.psi.clone() });
    }
    let mut norm_prev = wp.norm();
    for step in 1..=steps {
        let t_mid = (step as f64 - 0.5) * dt;
        let x0 = ev.x0(t_mid);
        for (z, &x) in wp.psi.iter_mut().zip(&xs) {
            *z *= Complex64::from_polar(1.0, -0.5 * dt * trap.potential(x - x0));
        }
        sp.forward(&mut wp.psi);
        for (z, f) in wp.psi.iter_mut().zip(&kin) {
            *z *= f;
        }
        sp.inverse(&mut wp.psi);
        for (z, &x) in wp.psi.iter_mut().zip(&xs) {
            *z *= Complex64::from_polar(1.0, -0.5 * dt * trap.potential(x - x0));
        }
        let t = step as f64 * dt;
        let norm = wp.norm();
        if (norm - norm_prev).abs() > 1e-9 {
            return Err(Error::Propagation(format!(
                "norm drifted by {:.3e} in one step at t = {t}",
                norm - norm_prev
            )));
        }
        norm_prev = norm;
        out.max_norm_error = out.max_norm_error.max((norm - 1.0).abs());
        let edge = wp.edge_amplitude();
        out.max_edge = out.max_edge.max(edge);
        if edge > 1e-8 {
            return Err(Error::Propagation(format!(
                "|ψ| = {edge:.3e} at the grid edge at t = {t}; widen the grid"
            )));
        }
        if step % opts.record_every == 0 || step == steps {
            out.times.push(t);
            out.energy.push(wp.energy_with(&mut sp, trap, ev.x0(t)));
            out.mean_x.push(wp.mean_x());
        }
        if let Some(every) = opts.snapshot_every {
            if step % every == 0 || step == steps {
                out.snapshots.push(Snapshot { t, psi: wp.psi.clone() });
            }
        }
    }
    out.final_state = wp;
    Ok(out)
}

/// Eigenstate populations over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientReport {
    /// Largest number of states above the threshold at any snapshot.
    pub max_count: usize,
    pub counts: Vec<usize>,
    pub times: Vec<f64>,
    /// Largest probability outside the basis.
    pub max_leakage: f64,
}

/// Counts eigenstates with population above `threshold` at every snapshot,
/// using eigenstates translated to `x₀(t)`.
pub fn transient_excitation(
    snapshots: &[Snapshot],
    grid: &Grid,
    basis: &EigenBasis,
    plan: &TransportPlan,
    frame: PopulationFrame,
    threshold: f64,
) -> Result<TransientReport> {
    let ev = plan.evaluator()?;
    let mut sp = Spectral::new(grid);
    let xs = grid.positions();
    let mut report = TransientReport { max_count: 0, counts: vec![], times: vec![], max_leakage: 0.0 };
    for snap in snapshots {
        let (x0, rate) = ev.x0_with_rate(snap.t);
        // ψ(x + x₀) by a Fourier shift
        let mut a = snap.psi.clone();
        sp.forward(&mut a);
        for (z, k) in a.iter_mut().zip(&sp.k) {
            *z *= Complex64::from_polar(1.0, k * x0);
        }
        sp.inverse(&mut a);
        if frame == PopulationFrame::Comoving {
            for (z, &x) in a.iter_mut().zip(&xs) {
                *z *= Complex64::from_polar(1.0, -rate * (x + x0));
            }
        }
        let pops = basis.populations(&a);
        let total: f64 = pops.iter().sum();
        let leak = 1.0 - total;
        report.max_leakage = report.max_leakage.max(leak);
        if leak > 0.01 {
            return Err(Error::Basis(format!(
                "{:.2}% of the probability lies outside the basis at t = {}",
                100.0 * leak,
                snap.t
            )));
        }
        let count = pops.iter().filter(|&&p| p > threshold).count();
        report.max_count = report.max_count.max(count);
        report.counts.push(count);
        report.times.push(snap.t);
    }
    Ok(report)
}

/// Writes `|ψ|²` snapshots as little-endian f64 rows to `<stem>.bin` with
/// a JSON header in `<stem>.json`.
pub fn write_snapshots(stem: &Path, grid: &Grid, snapshots: &[Snapshot]) -> Result<()> {
    let header = serde_json::json!({
        "format": "f64le",
        "layout": "row-major, one row of |psi|^2 per snapshot",
        "x_min": grid.x_min,
        "x_max": grid.x_max,
        "n_points": grid.n,
        "dx": grid.dx(),
        "length_unit": "a0",
        "time_unit": "1/omega0",
        "times": snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
    });
    std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    let mut buf = Vec::with_capacity(snapshots.len() * grid.n * 8);
    for s in snapshots {
        for z in &s.psi {
            buf.extend_from_slice(&z.norm_sqr().to_le_bytes());
        }
    }
    std::fs::write(stem.with_extension("bin"), buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_checks() {
        assert!(Grid::new(0.0, 1.0, 100).is_err());
        assert!(Grid::new(1.0, 0.0, 64).is_err());
        let g = Grid::new(-1.0, 1.0, 64).unwrap();
        assert_eq!(g.wavenumbers()[63], -std::f64::consts::PI);
    }

    #[test]
    fn harmonic_ground_state() {
        let trap = TrapSpec::Harmonic { omega0: 1.0 };
        let grid = Grid::new(-10.0, 10.0, 256).unwrap();
        let g = ground_state(&trap, grid, PhysicalConstants::default(), &GroundStateOptions::default()).unwrap();
        assert!((g.energy(&trap, 0.0) - 0.5).abs() < 5e-9);
        assert!((g.std_x() - 0.5f64.sqrt()).abs() < 1e-8);
        let exact = Wavepacket::gaussian(grid, 0.0, 1.0, 0.0, PhysicalConstants::default());
        assert!(1.0 - g.fidelity(&exact) < 1e-10);
    }

    #[test]
    fn harmonic_basis_levels() {
        let trap = TrapSpec::Harmonic { omega0: 1.0 };
        let grid = Grid::new(-20.0, 20.0, 1024).unwrap();
        let b = EigenBasis::new(&trap, &grid, 4, 128).unwrap();
        for n in 0..10 {
            assert!((b.energies[n] - (n as f64 + 0.5)).abs() < 1e-9, "{n}: {}", b.energies[n]);
        }
    }
}
