//! Thermal packets: equilibrium sampling, ensemble transport, the closed
//! moment system of the harmonic trap, and magic-time extraction.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{OneBody, ParticleState};
use crate::error::{Error, Result};
use crate::ode::{DenseSolution, Dopri5, OdeSystem};
use crate::perturb::Anharmonicity;
use crate::quad::GaussRule;
use crate::roots::{brent, golden_section};
use crate::sweep::{self, Axis, SweepJob};
use crate::trajectory::make_reference;
use crate::traps::{self, PlanEval, TransportPlan, TrapSpec};

/// Ensemble settings. The thermal scale is carried as `k_B T / m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    /// `k_B T / m` in velocity² units; velocities have this variance.
    pub kt_over_m: f64,
    pub seed: u64,
    /// Points taken along each sampled static orbit (1 = independent draws).
    pub stratify: usize,
}

impl EnsembleConfig {
    /// Temperature set by the harmonic width: `k_B T/m = ω₀² Δx²`.
    pub fn from_width(trap: &TrapSpec, dx: f64, n_particles: usize, seed: u64) -> Result<Self> {
        let w = trap.small_oscillation_omega().ok_or_else(|| {
            Error::invalid("a width needs a trap with a harmonic bottom; give k_B T / m instead")
        })?;
        Ok(EnsembleConfig {
            n_particles,
            kt_over_m: (w * dx).powi(2),
            seed,
            stratify: 1,
        })
    }

    pub fn from_temperature(kelvin: f64, mass: f64, n_particles: usize, seed: u64) -> Self {
        EnsembleConfig {
            n_particles,
            kt_over_m: crate::dynamics::K_B * kelvin / mass,
            seed,
            stratify: 1,
        }
    }

    pub fn with_stratify(mut self, k: usize) -> Self {
        self.stratify = k;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("ensemble needs at least one particle"));
        }
        if !(self.kt_over_m > 0.0 && self.kt_over_m.is_finite()) {
            return Err(Error::invalid("k_B T / m must be positive"));
        }
        if self.stratify == 0 || self.n_particles % self.stratify != 0 {
            return Err(Error::invalid(format!(
                "particle count {} must be a multiple of the orbit stratification {}",
                self.n_particles, self.stratify
            )));
        }
        Ok(())
    }
}

/// Standard deviation of the Boltzmann position density `exp(−U/θ)` restricted
/// to the trapping region, by quadrature.
pub fn boltzmann_position_std(trap: &TrapSpec, theta: f64) -> Result<f64> {
    let scale = thermal_length(trap, theta)?;
    let (lo, hi) = trap.trapping_region();
    let a = lo.max(-30.0 * scale);
    let b = hi.min(30.0 * scale);
    let rule = GaussRule::new(20);
    let w = |x: f64| (-trap.potential(x) / theta).exp();
    let z = rule.composite(a, b, 400, w);
    let m1 = rule.composite(a, b, 400, |x| x * w(x)) / z;
    let m2 = rule.composite(a, b, 400, |x| x * x * w(x)) / z;
    Ok((m2 - m1 * m1).sqrt())
}

/// Length where `U` first reaches `θ` on the positive side.
fn thermal_length(trap: &TrapSpec, theta: f64) -> Result<f64> {
    let mut hi = 1e-300f64;
    while trap.potential(hi) < theta {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Sampling("potential never reaches k_B T / m".into()));
        }
    }
    brent(|x| trap.potential(x) - theta, hi / 2.0, hi, 1e-12)
}

/// Boltzmann-density sampler with a Gaussian proposal.
struct PositionSampler {
    trap: TrapSpec,
    theta: f64,
    sigma_q: f64,
    window: (f64, f64),
    log_m: f64,
}

impl PositionSampler {
    fn new(trap: &TrapSpec, theta: f64) -> Result<Self> {
        let sb = boltzmann_position_std(trap, theta)?;
        let sigma_q = 1.3 * sb;
        let (lo, hi) = trap.trapping_region();
        let window = (lo.max(-12.0 * sb), hi.min(12.0 * sb));
        let log_ratio = |x: f64| -trap.potential(x) / theta + x * x / (2.0 * sigma_q * sigma_q);
        let n = 20_001;
        let mut log_m = f64::NEG_INFINITY;
        for i in 0..n {
            let x = window.0 + (window.1 - window.0) * i as f64 / (n - 1) as f64;
            log_m = log_m.max(log_ratio(x));
        }
        // margin for maxima between grid nodes
        log_m += 0.01;
        Ok(PositionSampler {
            trap: *trap,
            theta,
            sigma_q,
            window,
            log_m,
        })
    }

    fn log_ratio(&self, x: f64) -> f64 {
        -self.trap.potential(x) / self.theta + x * x / (2.0 * self.sigma_q * self.sigma_q)
    }
}

/// Draws `cfg.n_particles` states from the Boltzmann distribution of the
/// static trap centred at `x0`. Pure harmonic traps use independent Gaussians;
/// other traps use rejection sampling of positions restricted to bound
/// states. With `stratify = K > 1`, `N/K` states are drawn and each is
/// replaced by `K` points equally spaced in time along its orbit.
pub fn sample_equilibrium(cfg: &EnsembleConfig, trap: &TrapSpec, x0: f64) -> Result<Vec<ParticleState>> {
    cfg.validate()?;
    trap.validate()?;
    let theta = cfg.kt_over_m;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sv = theta.sqrt();
    let vdist = Normal::new(0.0, sv).expect("positive std");
    let n_orbits = cfg.n_particles / cfg.stratify;
    let mut states = Vec::with_capacity(n_orbits);

    let is_harmonic = matches!(trap, TrapSpec::Harmonic { .. } | TrapSpec::PowerLaw { n: 1, .. });
    if is_harmonic {
        let w = trap.small_oscillation_omega().unwrap();
        let xdist = Normal::new(0.0, sv / w).expect("positive std");
        for _ in 0..n_orbits {
            let x = xdist.sample(&mut rng);
            let v = vdist.sample(&mut rng);
            states.push((x, v));
        }
    } else {
        let sampler = PositionSampler::new(trap, theta)?;
        let qdist = Normal::new(0.0, sampler.sigma_q).expect("positive std");
        let depth = trap.depth();
        let (mut proposed, mut accepted) = (0u64, 0u64);
        while states.len() < n_orbits {
            let x = qdist.sample(&mut rng);
            let r: f64 = rng.gen();
            let v = vdist.sample(&mut rng);
            proposed += 1;
            let inside = x > sampler.window.0 && x < sampler.window.1;
            if inside {
                let lr = sampler.log_ratio(x) - sampler.log_m;
                if lr > 0.0 {
                    return Err(Error::Sampling(format!(
                        "rejection envelope too small at x = {x}"
                    )));
                }
                let bound = depth.map_or(true, |d| 0.5 * v * v + trap.potential(x) < d);
                if r.ln() < lr && bound {
                    accepted += 1;
                    states.push((x, v));
                }
            }
            if proposed >= 10_000 && (accepted as f64) < 1e-3 * proposed as f64 {
                return Err(Error::Sampling(format!(
                    "acceptance {accepted}/{proposed} below 1e-3: the trap barely confines at this temperature"
                )));
            }
        }
    }

    let mut out = Vec::with_capacity(cfg.n_particles);
    if cfg.stratify == 1 {
        out.extend(states.iter().map(|&(x, v)| ParticleState { t: 0.0, x: x + x0, v }));
    } else {
        let omega_scale = sv / boltzmann_position_std(trap, theta)?;
        for &(x, v) in &states {
            for (xs, vs) in orbit_points(trap, x, v, cfg.stratify, omega_scale)? {
                out.push(ParticleState { t: 0.0, x: xs + x0, v: vs });
            }
        }
    }
    Ok(out)
}

/// `k` states equally spaced in time along the static orbit through `(x, v)`
/// (trap centred at 0). The period is found from the phase angle
/// `atan2(−v/Ω, x)`, which increases monotonically whenever `x U'(x) > 0`.
pub fn orbit_points(trap: &TrapSpec, x: f64, v: f64, k: usize, omega: f64) -> Result<Vec<(f64, f64)>> {
    if x == 0.0 && v == 0.0 {
        return Ok(vec![(0.0, 0.0); k]);
    }
    let plan = TransportPlan::static_trap(*trap, 0.0, 1.0)?;
    let sys = OneBody { trap: *trap, plan: plan.evaluator()? };
    let scale = x.abs().max(v.abs() / omega);
    let mut ode = Dopri5::new(2, 1e-12, vec![1e-13 * scale, 1e-13 * scale * omega]);
    let angle = |x: f64, v: f64| (-v / omega).atan2(x);
    let phi0 = angle(x, v);
    let nominal = 2.0 * std::f64::consts::PI / omega;
    let mut period = None;
    let mut t_max = 1.5 * nominal;
    while period.is_none() {
        if t_max > 60.0 * nominal {
            return Err(Error::Sampling(format!("orbit through ({x}, {v}) does not close")));
        }
        let sol = ode
            .integrate_dense(&sys, 0.0, &[x, v], t_max)
            .map_err(|e| Error::Sampling(format!("orbit integration failed: {}", e.reason)))?;
        // unwrap the angle step by step and look for a full turn
        let mut unwrapped = 0.0;
        let mut prev = phi0;
        for st in &sol.steps {
            let a = angle(st.component(st.t1, 0), st.component(st.t1, 1));
            let mut da = a - prev;
            if da < -std::f64::consts::PI {
                da += 2.0 * std::f64::consts::PI;
            } else if da > std::f64::consts::PI {
                da -= 2.0 * std::f64::consts::PI;
            }
            if unwrapped + da >= 2.0 * std::f64::consts::PI {
                let base = unwrapped;
                let turn = |t: f64| {
                    let a = angle(st.component(t, 0), st.component(t, 1));
                    let mut d = a - prev;
                    if d < -std::f64::consts::PI {
                        d += 2.0 * std::f64::consts::PI;
                    } else if d > std::f64::consts::PI {
                        d -= 2.0 * std::f64::consts::PI;
                    }
                    base + d - 2.0 * std::f64::consts::PI
                };
                period = Some(brent(turn, st.t0, st.t1, 1e-14)?);
                break;
            }
            unwrapped += da;
            prev = a;
        }
        t_max *= 2.0;
    }
    let period = period.unwrap();
    let times: Vec<f64> = (0..k).map(|j| period * j as f64 / k as f64).collect();
    let ys = ode
        .integrate_at(&sys, 0.0, &[x, v], period, &times)
        .map_err(|e| Error::Sampling(format!("orbit integration failed: {}", e.reason)))?;
    Ok(ys.into_iter().map(|y| (y[0], y[1])).collect())
}

/// All particles as one system of dimension `2N` with shared step control.
struct EnsembleSystem<'a> {
    trap: TrapSpec,
    plan: PlanEval<'a>,
    n: usize,
}

impl OdeSystem for EnsembleSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let x0 = self.plan.x0(t);
        let (x, v) = y.split_at(self.n);
        let (dx, dv) = dy.split_at_mut(self.n);
        dx.copy_from_slice(v);
        for i in 0..self.n {
            dv[i] = self.trap.force(x[i] - x0);
        }
    }
}

/// Tolerance for ensemble transport.
pub const ENSEMBLE_TOL: f64 = 1e-10;

fn ensemble_solver(n: usize, plan: &TransportPlan, init: &[ParticleState], tol: f64) -> Dopri5 {
    let l = plan
        .d
        .abs()
        .max(init.iter().fold(0.0f64, |m, p| m.max(p.x.abs())))
        .max(1e-300);
    let tf = plan.duration().max(1e-300);
    let mut atol = vec![tol * l; n];
    atol.extend(std::iter::repeat(tol * l / tf).take(n));
    Dopri5::new(2 * n, tol, atol)
}

fn pack(init: &[ParticleState]) -> Vec<f64> {
    let mut y: Vec<f64> = init.iter().map(|p| p.x).collect();
    y.extend(init.iter().map(|p| p.v));
    y
}

/// Transports every particle under `plan`; returns the ensemble at each of `times`.
pub fn transport_ensemble(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: &[ParticleState],
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<ParticleState>>> {
    crate::dynamics::check_compatible(trap, plan)?;
    let n = init.len();
    let sys = EnsembleSystem { trap: *trap, plan: plan.evaluator()?, n };
    let mut ode = ensemble_solver(n, plan, init, tol);
    let t0 = init.first().map_or(0.0, |p| p.t);
    let t_end = *times.last().ok_or_else(|| Error::invalid("no output times"))?;
    let ys = ode
        .integrate_at(&sys, t0, &pack(init), t_end, times)
        .map_err(|e| Error::Integration {
            t: e.t,
            reason: format!("ensemble of {n} particles: {}", e.reason),
            last_good: None,
        })?;
    Ok(times
        .iter()
        .zip(ys)
        .map(|(&t, y)| (0..n).map(|i| ParticleState { t, x: y[i], v: y[n + i] }).collect())
        .collect())
}

/// Ensemble-mean energy per mass with the trap frozen at `x0`
/// (sequential summation for reproducibility).
pub fn mean_energy(trap: &TrapSpec, states: &[ParticleState], x0: f64) -> f64 {
    let mut acc = 0.0;
    for p in states {
        acc += 0.5 * p.v * p.v + trap.potential(p.x - x0);
    }
    acc / states.len() as f64
}

/// `|1 − E_f/E_i|` for a packet carried by `plan`.
pub fn relative_energy_error(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: &[ParticleState],
    tol: f64,
) -> Result<f64> {
    let tf = plan.duration();
    let fin = transport_ensemble(trap, plan, init, &[tf], tol)?;
    let ei = mean_energy(trap, init, plan.x0(0.0)?);
    let ef = mean_energy(trap, &fin[0], plan.final_position());
    Ok((1.0 - ef / ei).abs())
}

// ---------------------------------------------------------------------------
// Moments of a packet in a harmonic trap

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub x: f64,
    pub v: f64,
    pub x2: f64,
    pub v2: f64,
    pub xv: f64,
}

impl MomentState {
    /// Thermal equilibrium of width `dx` in a trap of frequency `omega`, centred at 0.
    pub fn equilibrium(omega: f64, dx: f64) -> Self {
        MomentState { x: 0.0, v: 0.0, x2: dx * dx, v2: (omega * dx).powi(2), xv: 0.0 }
    }

    fn to_vec(self) -> [f64; 5] {
        [self.x, self.v, self.x2, self.v2, self.xv]
    }

    fn from_slice(y: &[f64]) -> Self {
        MomentState { x: y[0], v: y[1], x2: y[2], v2: y[3], xv: y[4] }
    }

    /// Sample moments of an ensemble.
    pub fn of_ensemble(states: &[ParticleState]) -> Self {
        let n = states.len() as f64;
        let mut m = [0.0; 5];
        for p in states {
            m[0] += p.x;
            m[1] += p.v;
            m[2] += p.x * p.x;
            m[3] += p.v * p.v;
            m[4] += p.x * p.v;
        }
        MomentState::from_slice(&m.map(|s| s / n))
    }

    /// Standard errors of the five sample moments.
    pub fn standard_errors(states: &[ParticleState]) -> Self {
        let n = states.len() as f64;
        let fields: [fn(&ParticleState) -> f64; 5] = [
            |p| p.x,
            |p| p.v,
            |p| p.x * p.x,
            |p| p.v * p.v,
            |p| p.x * p.v,
        ];
        let se = fields.map(|f| {
            let mean = states.iter().map(f).sum::<f64>() / n;
            let var = states.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        MomentState::from_slice(&se)
    }

    /// `xv² ≤ (x2 − x̄²)(v2 − v̄²)` up to `tol` (centered correlation).
    pub fn cauchy_schwarz_ok(&self, tol: f64) -> bool {
        let cxv = self.xv - self.x * self.v;
        cxv * cxv <= (self.x2 - self.x * self.x) * (self.v2 - self.v * self.v) + tol
    }
}

struct MomentSystem<'a> {
    w2: f64,
    plan: PlanEval<'a>,
}

impl OdeSystem for MomentSystem<'_> {
    fn dim(&self) -> usize {
        5
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let x0 = self.plan.x0(t);
        let w2 = self.w2;
        dy[0] = y[1];
        dy[1] = -w2 * (y[0] - x0);
        dy[2] = 2.0 * y[4];
        dy[3] = -2.0 * w2 * (y[4] - x0 * y[1]);
        dy[4] = y[3] - w2 * (y[2] - x0 * y[0]);
    }
}

fn harmonic_omega_strict(trap: &TrapSpec) -> Result<f64> {
    match trap {
        TrapSpec::Harmonic { omega0 } => Ok(*omega0),
        TrapSpec::PowerLaw { n: 1, eta } => Ok(eta.sqrt()),
        other => Err(Error::UnsupportedFamily(format!(
            "moment equations close only in a harmonic trap, not {}",
            other.family_name()
        ))),
    }
}

/// Moment tolerance: relative 1e-12 with absolute scales from the initial state.
const MOMENT_TOL: f64 = 1e-12;

fn moment_solver(init: &MomentState, plan: &TransportPlan, w: f64) -> Dopri5 {
    let l = plan.d.abs().max(init.x2.sqrt()).max(1e-300);
    let v = l * w;
    Dopri5::new(
        5,
        MOMENT_TOL,
        vec![MOMENT_TOL * l, MOMENT_TOL * v, MOMENT_TOL * l * l, MOMENT_TOL * v * v, MOMENT_TOL * l * v],
    )
}

/// Integrates the five moment equations and reports them at `times`.
pub fn evolve_moments(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: MomentState,
    times: &[f64],
) -> Result<Vec<MomentState>> {
    let w = harmonic_omega_strict(trap)?;
    crate::dynamics::check_compatible(trap, plan)?;
    let sys = MomentSystem { w2: w * w, plan: plan.evaluator()? };
    let mut ode = moment_solver(&init, plan, w);
    let t_end = *times.last().ok_or_else(|| Error::invalid("no output times"))?;
    let ys = ode
        .integrate_at(&sys, 0.0, &init.to_vec(), t_end, times)
        .map_err(|e| Error::Integration { t: e.t, reason: e.reason, last_good: None })?;
    Ok(ys.iter().map(|y| MomentState::from_slice(y)).collect())
}

/// Dense history of the mean position and velocity `(x̄, v̄)`.
pub fn mean_history(trap: &TrapSpec, plan: &TransportPlan, init: MomentState, t_end: f64) -> Result<DenseSolution> {
    let w = harmonic_omega_strict(trap)?;
    let sys = MomentSystem { w2: w * w, plan: plan.evaluator()? };
    let mut ode = moment_solver(&init, plan, w);
    ode.integrate_dense(&sys, 0.0, &init.to_vec(), t_end)
        .map_err(|e| Error::Integration { t: e.t, reason: e.reason, last_good: None })
}

/// `xv(t) = (ω₀/2) ∫₀ᵗ (ẋ₀ x̄ + 3 x₀ v̄) sin(2ω₀(t − t')) dt'` by composite
/// Gauss–Legendre quadrature, for a packet starting in equilibrium at the
/// origin. `mean(t)` returns `(x̄, v̄)`.
pub fn xv_exact<F: Fn(f64) -> (f64, f64)>(omega: f64, plan: &TransportPlan, mean: F, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let ev = plan.evaluator()?;
    let rule = GaussRule::new(20);
    let panels = ((omega * t).abs() * 4.0).ceil().max(16.0) as usize;
    let val = rule.composite(0.0, t, panels, |tp| {
        let (x0, x0dot) = ev.x0_with_rate(tp);
        let (xb, vb) = mean(tp);
        (x0dot * xb + 3.0 * x0 * vb) * (2.0 * omega * (t - tp)).sin()
    });
    Ok(0.5 * omega * val)
}

// ---------------------------------------------------------------------------
// Packet sweeps and magic times

/// Dimensionless packet-transport setup: `d = 1`, `ω₀ = 1`, `t_f = u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSetup {
    pub kind: Anharmonicity,
    /// Position width of the initial packet in units of `d`.
    pub dx: f64,
    pub n_particles: usize,
    pub stratify: usize,
    pub order: usize,
    pub tol: f64,
}

impl Default for PacketSetup {
    fn default() -> Self {
        PacketSetup {
            kind: Anharmonicity::Cubic,
            dx: 0.02,
            n_particles: 2000,
            stratify: 8,
            order: 5,
            tol: ENSEMBLE_TOL,
        }
    }
}

impl PacketSetup {
    pub fn trap(&self, xi_over_d: f64) -> TrapSpec {
        self.kind.trap(1.0, xi_over_d)
    }

    pub fn sample(&self, xi_over_d: f64, seed: u64) -> Result<Vec<ParticleState>> {
        let trap = self.trap(xi_over_d);
        let cfg = EnsembleConfig::from_width(&trap, self.dx, self.n_particles, seed)?
            .with_stratify(self.stratify);
        sample_equilibrium(&cfg, &trap, 0.0)
    }

    /// `|1 − E_f/E_i|` at duration `u`, or `None` when no exact inversion exists.
    pub fn relative_error(&self, xi_over_d: f64, u: f64, init: &[ParticleState]) -> Result<Option<f64>> {
        let trap = self.trap(xi_over_d);
        let r = make_reference(1.0, u, self.order)?;
        let plan = traps::invert(&trap, &r)?;
        if !plan.existence_ok {
            return Ok(None);
        }
        relative_energy_error(&trap, &plan, init, self.tol).map(Some)
    }
}

/// One row of a packet sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketCell {
    pub xi_over_d: f64,
    pub u: f64,
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSweep {
    pub setup: PacketSetup,
    pub xi_over_d: Vec<f64>,
    pub u: Vec<f64>,
    pub cells: Vec<PacketCell>,
    pub seed: u64,
}

pub fn packet_job(setup: &PacketSetup, xi_over_d: &[f64], us: &[f64]) -> SweepJob {
    SweepJob::new(
        format!(
            "packet/{}/dx={}/n={}/k={}/order={}/tol={}",
            setup.kind, setup.dx, setup.n_particles, setup.stratify, setup.order, setup.tol
        ),
        vec![Axis::new("xi_over_d", xi_over_d.to_vec()), Axis::new("u", us.to_vec())],
    )
}

/// Sweeps `|1 − E_f/E_i|` over `(ξ/d, u)`. All cells of one `ξ/d` row share
/// the same initial ensemble, seeded from the global seed and the row index,
/// so that differences along `u` are not masked by sampling noise.
pub fn packet_energy_sweep(setup: &PacketSetup, job: &SweepJob) -> Result<PacketSweep> {
    if job.axes.len() != 2 {
        return Err(Error::invalid("packet sweep needs axes (xi_over_d, u)"));
    }
    let cache: Mutex<HashMap<usize, Arc<Vec<ParticleState>>>> = Mutex::new(HashMap::new());
    let table = sweep::run(job, |cell| {
        let row = cell.indices[0];
        let xi = cell.coords[0];
        let u = cell.coords[1];
        let cached = cache.lock().unwrap().get(&row).cloned();
        let init = match cached {
            Some(e) => e,
            None => {
                let e = Arc::new(setup.sample(xi, sweep::cell_seed(job.seed, row as u64))?);
                cache.lock().unwrap().insert(row, e.clone());
                e
            }
        };
        match setup.relative_error(xi, u, &init) {
            Ok(Some(v)) => Ok(vec![v]),
            Ok(None) => Ok(vec![f64::NAN]),
            Err(Error::Integration { t, reason, .. }) => {
                log::warn!("cell xi/d={xi}, u={u}: integration failed at t={t}: {reason}");
                Ok(vec![f64::NAN])
            }
            Err(e) => Err(e),
        }
    })?
    .into_table()?;
    Ok(PacketSweep {
        setup: *setup,
        xi_over_d: job.axes[0].values.clone(),
        u: job.axes[1].values.clone(),
        cells: table
            .rows
            .iter()
            .map(|(c, v)| PacketCell {
                xi_over_d: c.coords[0],
                u: c.coords[1],
                rel_err: v[0].is_finite().then_some(v[0]),
            })
            .collect(),
        seed: job.seed,
    })
}

impl PacketSweep {
    /// `(u, log10|1 − E_f/E_i|)` for row `i`, skipping infeasible cells.
    pub fn row(&self, i: usize) -> Vec<(f64, f64)> {
        let n = self.u.len();
        self.cells[i * n..(i + 1) * n]
            .iter()
            .filter_map(|c| c.rel_err.map(|e| (c.u, e.max(1e-300).log10())))
            .collect()
    }

    /// `# seed=` line, then CSV `log10_xi_over_d,u,log10_rel_energy_err,feasible`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "log10_xi_over_d,u,log10_rel_energy_err,feasible")?;
        for c in &self.cells {
            match c.rel_err {
                Some(e) => writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},1",
                    c.xi_over_d.log10(),
                    c.u,
                    e.max(1e-300).log10()
                )?,
                None => writeln!(w, "{:.16e},{:.16e},,0", c.xi_over_d.log10(), c.u)?,
            }
        }
        Ok(())
    }
}

/// Options for picking minima out of a sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagicOptions {
    /// Required depth, in decades, of a dip below the highest point within
    /// `window` on each side of it.
    pub prominence: f64,
    /// Minima closer than this are one dip.
    pub window: f64,
}

impl Default for MagicOptions {
    fn default() -> Self {
        MagicOptions { prominence: 0.5, window: 0.6 }
    }
}

/// A dip of `log10|1 − E_f/E_i|` along `u`. The signed energy change can
/// cross zero twice in quick succession; both crossings then belong to one
/// dip whose centre is their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagicDip {
    pub center: f64,
    pub members: Vec<f64>,
}

/// Dips of a row `(u, log10 value)`. Local minima are located by a
/// parabola through each grid minimum and its neighbours, then grouped.
pub fn find_dips(row: &[(f64, f64)], opts: &MagicOptions) -> Vec<MagicDip> {
    let minima: Vec<(usize, f64)> = (1..row.len().saturating_sub(1))
        .filter(|&i| row[i].1 < row[i - 1].1 && row[i].1 <= row[i + 1].1)
        .map(|i| (i, parabolic_vertex(row[i - 1], row[i], row[i + 1])))
        .collect();
    let mut groups: Vec<Vec<(usize, f64)>> = Vec::new();
    for m in minima {
        match groups.last_mut() {
            Some(g) if m.1 - g[0].1 <= opts.window => g.push(m),
            _ => groups.push(vec![m]),
        }
    }
    let mut out = Vec::new();
    for g in groups {
        let (first, last) = (g[0].0, g[g.len() - 1].0);
        let deepest = g.iter().map(|&(i, _)| row[i].1).fold(f64::INFINITY, f64::min);
        let (u_lo, u_hi) = (row[first].0, row[last].0);
        let left = row[..first]
            .iter()
            .filter(|p| u_lo - p.0 <= opts.window + 1e-12)
            .fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
        let right = row[last + 1..]
            .iter()
            .filter(|p| p.0 - u_hi <= opts.window + 1e-12)
            .fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
        if left - deepest < opts.prominence || right - deepest < opts.prominence {
            continue;
        }
        let members: Vec<f64> = g.iter().map(|m| m.1).collect();
        let center = members.iter().sum::<f64>() / members.len() as f64;
        out.push(MagicDip { center, members });
    }
    out
}

/// Centres of the dips of a row.
pub fn find_magic_times(row: &[(f64, f64)], opts: &MagicOptions) -> Vec<f64> {
    find_dips(row, opts).into_iter().map(|d| d.center).collect()
}

fn parabolic_vertex(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let num = (b.0 - a.0).powi(2) * (b.1 - c.1) - (b.0 - c.0).powi(2) * (b.1 - a.1);
    let den = (b.0 - a.0) * (b.1 - c.1) - (b.0 - c.0) * (b.1 - a.1);
    if den == 0.0 {
        return b.0;
    }
    (b.0 - 0.5 * num / den).clamp(a.0, c.0)
}

/// Refines every member of `dip` by golden section within `half` of it
/// (never past the midpoint to a neighbouring member), with a fresh ensemble
/// evaluation per probe. Returns the refined dip and `log10|1 − E_f/E_i|`
/// at its centre.
pub fn refine_dip(
    setup: &PacketSetup,
    xi_over_d: f64,
    init: &[ParticleState],
    dip: &MagicDip,
    half: f64,
    tol: f64,
) -> Result<(MagicDip, f64)> {
    let mut failure = None;
    let mut eval = |u: f64| match setup.relative_error(xi_over_d, u, init) {
        Ok(Some(e)) => e.max(1e-300).log10(),
        Ok(None) => f64::INFINITY,
        Err(e) => {
            failure.get_or_insert(e);
            f64::INFINITY
        }
    };
    let m = &dip.members;
    let mut members = Vec::with_capacity(m.len());
    for (k, &u) in m.iter().enumerate() {
        let lo = if k > 0 { (u - half).max(0.5 * (m[k - 1] + u)) } else { u - half };
        let hi = if k + 1 < m.len() { (u + half).min(0.5 * (u + m[k + 1])) } else { u + half };
        members.push(golden_section(&mut eval, lo, hi, tol).0);
    }
    let center = members.iter().sum::<f64>() / members.len() as f64;
    let depth = eval(center);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((MagicDip { center, members }, depth))
}

/// Magic-times CSV `log10_xi_over_d,u0,log10_rel_energy_err`.
pub fn write_magic_csv<W: Write>(mut w: W, rows: &[(f64, f64, f64)]) -> Result<()> {
    writeln!(w, "log10_xi_over_d,u0,log10_rel_energy_err")?;
    for (xi, u0, e) in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", xi.log10(), u0, e)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_dip() {
        let row: Vec<(f64, f64)> = (0..201)
            .map(|i| {
                let u = 8.0 + 0.02 * i as f64;
                (u, -3.0 + 4.0 * (u - 10.0003).powi(2).min(1.0))
            })
            .collect();
        let m = find_magic_times(&row, &MagicOptions::default());
        assert_eq!(m.len(), 1);
        assert!((m[0] - 10.0003).abs() < 1e-3);
    }

    #[test]
    fn monotone_row_has_no_minima() {
        let row: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.02, -(i as f64))).collect();
        assert!(find_magic_times(&row, &MagicOptions::default()).is_empty());
    }

    #[test]
    fn harmonic_sampling_is_seeded() {
        let trap = TrapSpec::Harmonic { omega0: 2.0 };
        let cfg = EnsembleConfig::from_width(&trap, 0.1, 100, 9).unwrap();
        let a = sample_equilibrium(&cfg, &trap, 0.0).unwrap();
        let b = sample_equilibrium(&cfg, &trap, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_orbit_points_conserve_energy() {
        let trap = TrapSpec::HarmonicCubic { omega0: 1.0, xi: 3.0 };
        let pts = orbit_points(&trap, 0.4, 0.1, 8, 1.0).unwrap();
        let e0 = 0.5 * 0.01 + trap.potential(0.4);
        for (x, v) in pts {
            assert!((0.5 * v * v + trap.potential(x) - e0).abs() < 1e-11);
        }
    }

    #[test]
    fn moments_reject_anharmonic_trap() {
        let trap = TrapSpec::HarmonicQuartic { omega0: 1.0, xi: 1.0 };
        let plan = TransportPlan::static_trap(trap, 0.0, 1.0).unwrap();
        let r = evolve_moments(&trap, &plan, MomentState::equilibrium(1.0, 0.1), &[1.0]);
        assert!(matches!(r, Err(Error::UnsupportedFamily(_))));
    }
}
