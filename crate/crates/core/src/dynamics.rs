//! Classical one-body integration under a transport plan.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeSystem};
use crate::traps::{PlanEval, TransportPlan, TrapSpec};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;

/// Physical constants used to attach SI units to dimensionless results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// kg
    pub mass: f64,
    /// J s
    pub hbar: f64,
    /// J/K
    pub k_b: f64,
    /// Reference trap angular frequency, rad/s.
    pub omega0: f64,
}

impl Default for PhysicalConstants {
    /// A 40Ca+ ion in a trap of 2π × 141 kHz.
    fn default() -> Self {
        PhysicalConstants {
            mass: 40.0 * 1.667e-27,
            hbar: HBAR,
            k_b: K_B,
            omega0: 2.0 * std::f64::consts::PI * 1.41e5,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("hbar", self.hbar),
            ("k_b", self.k_b),
            ("omega0", self.omega0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }

    /// Oscillator length `sqrt(ħ / (m ω₀))`.
    pub fn a0(&self) -> f64 {
        (self.hbar / (self.mass * self.omega0)).sqrt()
    }

    /// `m ω₀ d² / ħ`, the factor turning the dimensionless energy bracket
    /// into units of `ħω₀`.
    pub fn energy_prefactor(&self, d: f64) -> f64 {
        self.mass * self.omega0 * d * d / self.hbar
    }

    /// Default transport distance, `20.2 a₀`.
    pub fn default_distance(&self) -> f64 {
        20.2 * self.a0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub x: f64,
    pub v: f64,
}

impl ParticleState {
    pub fn at_rest(x: f64) -> Self {
        ParticleState { t: 0.0, x, v: 0.0 }
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;

const LOCAL_FRACTION: f64 = 0.1;

pub(crate) struct OneBody<'a> {
    pub trap: TrapSpec,
    pub plan: PlanEval<'a>,
}

impl OdeSystem for OneBody<'_> {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = self.trap.force(y[0] - self.plan.x0(t));
    }
}

pub(crate) fn check_compatible(trap: &TrapSpec, plan: &TransportPlan) -> Result<()> {
    trap.validate()?;
    if !trap.compatible_with(&plan.trap) {
        return Err(Error::invalid(format!(
            "plan designed for {:?} cannot drive {:?}",
            plan.trap, trap
        )));
    }
    Ok(())
}

/// Length scale used for absolute tolerances.
fn length_scale(plan: &TransportPlan, init: &ParticleState, t_span: f64) -> f64 {
    let l = plan.d.abs().max(init.x.abs()).max(init.v.abs() * t_span);
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

fn solver(plan: &TransportPlan, init: &ParticleState, t_end: f64, tol: f64) -> Result<Dopri5> {
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(Error::invalid(format!("tolerance must lie in [1e-13, 1e-6] (got {tol})")));
    }
    let span = (t_end - init.t).abs().max(plan.t_f);
    let l = length_scale(plan, init, span);
    // local error target below `tol` so the accumulated global error stays within it
    let local = tol * LOCAL_FRACTION;
    Ok(Dopri5::new(2, local, vec![local * l, local * l / span]))
}

fn integration_error(e: crate::ode::OdeFailure) -> Error {
    Error::Integration {
        t: e.t,
        reason: e.reason,
        last_good: Some(ParticleState { t: e.t, x: e.y[0], v: e.y[1] }),
    }
}

/// Integrates `ẍ = −U'(x − x₀(t))` from `init` to `t_end`; returns the
/// state after every accepted step, starting with `init`.
pub fn integrate(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: ParticleState,
    t_end: f64,
    tol: f64,
) -> Result<Vec<ParticleState>> {
    check_compatible(trap, plan)?;
    let sys = OneBody { trap: *trap, plan: plan.evaluator()? };
    let mut ode = solver(plan, &init, t_end, tol)?;
    let mut out = vec![init];
    ode.integrate(&sys, init.t, &[init.x, init.v], t_end, |s| {
        out.push(ParticleState { t: s.t1, x: s.y1[0], v: s.y1[1] });
    })
    .map_err(integration_error)?;
    Ok(out)
}

/// Final state only.
pub fn integrate_final(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: ParticleState,
    t_end: f64,
    tol: f64,
) -> Result<ParticleState> {
    check_compatible(trap, plan)?;
    let sys = OneBody { trap: *trap, plan: plan.evaluator()? };
    let mut ode = solver(plan, &init, t_end, tol)?;
    let y = ode
        .integrate(&sys, init.t, &[init.x, init.v], t_end, |_| {})
        .map_err(integration_error)?;
    Ok(ParticleState { t: t_end, x: y[0], v: y[1] })
}

/// States at the given monotone times via dense output.
pub fn integrate_at(
    trap: &TrapSpec,
    plan: &TransportPlan,
    init: ParticleState,
    times: &[f64],
    tol: f64,
) -> Result<Vec<ParticleState>> {
    check_compatible(trap, plan)?;
    let Some(&t_end) = times.last() else {
        return Ok(vec![]);
    };
    let sys = OneBody { trap: *trap, plan: plan.evaluator()? };
    let mut ode = solver(plan, &init, t_end, tol)?;
    let ys = ode
        .integrate_at(&sys, init.t, &[init.x, init.v], t_end, times)
        .map_err(integration_error)?;
    Ok(times
        .iter()
        .zip(ys)
        .map(|(&t, y)| ParticleState { t, x: y[0], v: y[1] })
        .collect())
}

/// Mechanical energy per unit mass, `v²/2 + U(x − x₀(t))`.
pub fn specific_energy(trap: &TrapSpec, plan: &TransportPlan, s: &ParticleState) -> Result<f64> {
    let x0 = plan.x0(s.t)?;
    Ok(0.5 * s.v * s.v + trap.potential(s.x - x0))
}

/// Residual energy `m [v²/2 + U(x − x₀(t_f))]` left at the end of the plan.
pub fn residual_energy(
    trap: &TrapSpec,
    plan: &TransportPlan,
    final_state: &ParticleState,
    mass: f64,
) -> Result<f64> {
    check_compatible(trap, plan)?;
    let tf = plan.duration();
    if (final_state.t - tf).abs() > 1e-9 * tf {
        return Err(Error::invalid(format!(
            "final state at t = {} but the plan ends at {tf}",
            final_state.t
        )));
    }
    Ok(mass * specific_energy(trap, plan, final_state)?)
}

/// Trajectory dump with columns `t,x,v,E` (E in joules).
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    samples: &[ParticleState],
    trap: &TrapSpec,
    plan: &TransportPlan,
    mass: f64,
) -> Result<()> {
    writeln!(w, "t,x,v,E")?;
    for s in samples {
        let e = mass * specific_energy(trap, plan, s)?;
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", s.t, s.x, s.v, e)?;
    }
    Ok(())
}
