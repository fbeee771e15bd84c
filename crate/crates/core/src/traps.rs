//! Trap families and the reverse-engineering inversion `x₀(t) = x(t) − X(ẍ)`.
//!
//! Potentials are per unit mass and written in the displacement
//! `X = x − x₀`; the particle obeys `ẍ = −U'(X)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::roots;
use crate::trajectory::{OnePointProtocol, ReferenceTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrapSpec {
    /// `U = η X^(2n) / (2n)`, `η` in `length^(2-2n) / time^2`.
    PowerLaw { n: u32, eta: f64 },
    Harmonic { omega0: f64 },
    /// Harmonic plus `ω₀² X³ / (3ξ)`.
    HarmonicCubic { omega0: f64, xi: f64 },
    /// Harmonic plus `ω₀² X⁴ / (4ξ²)`.
    HarmonicQuartic { omega0: f64, xi: f64 },
    /// `U = −(η x_R / 2) / (1 + (X/x_R)²)`, `η = 2U₀/(m x_R)`.
    Tweezers { eta: f64, x_r: f64 },
}

const TWEEZERS_PEAK_X: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Largest restoring acceleration of the tweezers potential in units of `η`.
pub fn tweezers_max_restoring() -> f64 {
    3.0 * 3f64.sqrt() / 16.0
}

impl TrapSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite (got {v})")))
            }
        };
        match *self {
            TrapSpec::PowerLaw { n, eta } => {
                if n < 1 {
                    return Err(Error::invalid("power-law exponent n must be >= 1"));
                }
                positive("eta", eta)
            }
            TrapSpec::Harmonic { omega0 } => positive("omega0", omega0),
            TrapSpec::HarmonicCubic { omega0, xi } | TrapSpec::HarmonicQuartic { omega0, xi } => {
                positive("omega0", omega0)?;
                positive("xi", xi)
            }
            TrapSpec::Tweezers { eta, x_r } => {
                positive("eta", eta)?;
                positive("x_r", x_r)
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            TrapSpec::PowerLaw { .. } => "power_law",
            TrapSpec::Harmonic { .. } => "harmonic",
            TrapSpec::HarmonicCubic { .. } => "harmonic_cubic",
            TrapSpec::HarmonicQuartic { .. } => "harmonic_quartic",
            TrapSpec::Tweezers { .. } => "tweezers",
        }
    }

    /// `ω₀` for the families whose leading term is harmonic with that
    /// frequency (including `PowerLaw { n: 1 }`).
    pub fn harmonic_omega(&self) -> Option<f64> {
        match *self {
            TrapSpec::PowerLaw { n: 1, eta } => Some(eta.sqrt()),
            TrapSpec::Harmonic { omega0 }
            | TrapSpec::HarmonicCubic { omega0, .. }
            | TrapSpec::HarmonicQuartic { omega0, .. } => Some(omega0),
            _ => None,
        }
    }

    /// Small-oscillation angular frequency at the trap bottom, if finite and nonzero.
    pub fn small_oscillation_omega(&self) -> Option<f64> {
        let c = self.curvature(0.0);
        (c > 0.0).then(|| c.sqrt())
    }

    /// `U(X)/m`.
    pub fn potential(&self, x: f64) -> f64 {
        match *self {
            TrapSpec::PowerLaw { n, eta } => {
                let k = 2 * n as i32;
                eta * x.powi(k) / k as f64
            }
            TrapSpec::Harmonic { omega0 } => 0.5 * omega0 * omega0 * x * x,
            TrapSpec::HarmonicCubic { omega0, xi } => {
                omega0 * omega0 * x * x * (0.5 + x / (3.0 * xi))
            }
            TrapSpec::HarmonicQuartic { omega0, xi } => {
                let y = x / xi;
                omega0 * omega0 * x * x * (0.5 + 0.25 * y * y)
            }
            TrapSpec::Tweezers { eta, x_r } => {
                let y = x / x_r;
                // shifted so that U(0) = 0
                0.5 * eta * x_r * (1.0 - 1.0 / (1.0 + y * y))
            }
        }
    }

    /// Acceleration `−U'(X)`.
    pub fn force(&self, x: f64) -> f64 {
        match *self {
            TrapSpec::PowerLaw { n, eta } => -eta * x.powi(2 * n as i32 - 1),
            TrapSpec::Harmonic { omega0 } => -omega0 * omega0 * x,
            TrapSpec::HarmonicCubic { omega0, xi } => -omega0 * omega0 * x * (1.0 + x / xi),
            TrapSpec::HarmonicQuartic { omega0, xi } => {
                let y = x / xi;
                -omega0 * omega0 * x * (1.0 + y * y)
            }
            TrapSpec::Tweezers { eta, x_r } => {
                let y = x / x_r;
                let q = 1.0 + y * y;
                -eta * y / (q * q)
            }
        }
    }

    /// `U''(X)`.
    pub fn curvature(&self, x: f64) -> f64 {
        match *self {
            TrapSpec::PowerLaw { n, eta } => {
                let k = 2 * n as i32;
                eta * (k - 1) as f64 * x.powi(k - 2)
            }
            TrapSpec::Harmonic { omega0 } => omega0 * omega0,
            TrapSpec::HarmonicCubic { omega0, xi } => omega0 * omega0 * (1.0 + 2.0 * x / xi),
            TrapSpec::HarmonicQuartic { omega0, xi } => {
                let y = x / xi;
                omega0 * omega0 * (1.0 + 3.0 * y * y)
            }
            TrapSpec::Tweezers { eta, x_r } => {
                let y = x / x_r;
                let q = 1.0 + y * y;
                eta * (1.0 - 3.0 * y * y) / (x_r * q * q * q)
            }
        }
    }

    /// Displacement interval `(lo, hi)` on which the potential confines a
    /// particle that starts at rest inside it. Unbounded sides are infinite.
    pub fn trapping_region(&self) -> (f64, f64) {
        match *self {
            TrapSpec::HarmonicCubic { xi, .. } => (-xi, 0.5 * xi),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Energy per mass at the edge of the trapping region, if finite.
    pub fn depth(&self) -> Option<f64> {
        match *self {
            TrapSpec::HarmonicCubic { xi, .. } => Some(self.potential(-xi)),
            TrapSpec::Tweezers { eta, x_r } => Some(0.5 * eta * x_r),
            _ => None,
        }
    }

    /// Whether `other` is the same trap for the purpose of driving a plan
    /// designed for `self`: identical, or both harmonic-led with equal `ω₀`.
    pub fn compatible_with(&self, other: &TrapSpec) -> bool {
        if self == other {
            return true;
        }
        match (self.harmonic_omega(), other.harmonic_omega()) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(b.abs()),
            _ => false,
        }
    }

    /// Displacement `X` that produces acceleration `acc = −U'(X)`, on the branch
    /// connected to `X = 0`. Returns `None` where no such root exists.
    pub fn invert_acceleration(&self, acc: f64) -> Option<f64> {
        if acc == 0.0 {
            return Some(0.0);
        }
        match *self {
            TrapSpec::PowerLaw { n, eta } => {
                let k = (2 * n - 1) as f64;
                Some(-(acc / eta).abs().powf(1.0 / k).copysign(acc))
            }
            TrapSpec::Harmonic { omega0 } => Some(-acc / (omega0 * omega0)),
            TrapSpec::HarmonicCubic { omega0, xi } => cubic_displacement(omega0, xi, acc),
            TrapSpec::HarmonicQuartic { omega0, xi } => {
                let p = xi * xi;
                Some(roots::depressed_cubic_root(p, p * acc / (omega0 * omega0)))
            }
            TrapSpec::Tweezers { eta, x_r } => tweezers_root(acc / eta).map(|y| y * x_r),
        }
    }
}

/// Root of `X² + ξX + ξẍ/ω₀² = 0` that vanishes with `ẍ`, in the
/// rationalized form that avoids cancellation for large `ξ`.
fn cubic_displacement(omega0: f64, xi: f64, acc: f64) -> Option<f64> {
    let a = acc / (omega0 * omega0);
    let disc = 1.0 - 4.0 * a / xi;
    // tolerate rounding at the exactly marginal point
    if disc < -1e-14 {
        return None;
    }
    Some(-2.0 * a / (1.0 + disc.max(0.0).sqrt()))
}

/// Cardano's two-cube-root expression for the quartic-anharmonic displacement,
/// `x₀ − x`, exactly as it is usually printed. Kept for cross-checks only:
/// it loses digits to cancellation when `ξ` is large.
pub fn quartic_cardano_offset(omega0: f64, xi: f64, acc: f64) -> f64 {
    let s = (acc * acc + 4.0 * xi * xi * omega0.powi(4) / 27.0).sqrt();
    let k = xi.powf(2.0 / 3.0) / (2f64.cbrt() * omega0.powf(2.0 / 3.0));
    k * ((acc + s).cbrt() - (-acc + s).cbrt())
}

/// Inner-branch solution `y` of `y/(1+y²)² + a = 0` with `|y| ≤ 1/√3`.
/// Solved as the quartic `a y⁴ + 2a y² + y + a = 0` and Newton-polished.
pub fn tweezers_root(a: f64) -> Option<f64> {
    if a == 0.0 {
        return Some(0.0);
    }
    let amax = tweezers_max_restoring();
    if a.abs() > amax * (1.0 + 1e-12) {
        return None;
    }
    let h = |y: f64| y / (1.0 + y * y).powi(2) + a;
    let dh = |y: f64| (1.0 - 3.0 * y * y) / (1.0 + y * y).powi(3);
    let candidates = roots::quartic_roots(a, 0.0, 2.0 * a, 1.0, a);
    let mut y = candidates
        .into_iter()
        .filter(|y| y.abs() <= TWEEZERS_PEAK_X * (1.0 + 1e-6))
        .min_by(|p, q| p.abs().partial_cmp(&q.abs()).unwrap())
        // marginal case where the double root came out complex
        .unwrap_or(-TWEEZERS_PEAK_X.copysign(a));
    // the inner root has the sign of -a
    let (lo, hi) = if a > 0.0 { (-TWEEZERS_PEAK_X, 0.0) } else { (0.0, TWEEZERS_PEAK_X) };
    y = y.clamp(lo, hi);
    for _ in 0..3 {
        let g = dh(y);
        if g.abs() < 1e-300 {
            break;
        }
        let next = y - h(y) / g;
        // a step leaving the monotone branch means we sit on the double root
        if !(lo..=hi).contains(&next) {
            break;
        }
        if (next - y).abs() <= 1e-17 {
            y = next;
            break;
        }
        y = next;
    }
    Some(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    pub note: Option<String>,
}

impl std::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.checks.is_empty() {
            writeln!(f, "no existence bound: inversion exists for every acceleration")?;
        }
        for c in &self.checks {
            writeln!(
                f,
                "{}: {:.12e} vs {:.12e} -> {}",
                c.label,
                c.lhs,
                c.rhs,
                if c.satisfied { "ok" } else { "VIOLATED" }
            )?;
        }
        if let Some(n) = &self.note {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PlanShape {
    /// Pointwise closed-form inversion of the reference.
    Inverted,
    /// Uniform samples with cubic Hermite interpolation.
    Sampled { x0: Vec<f64>, slope: Vec<f64> },
    /// `x₀ = d · p(t / t_f)`.
    Polynomial(Polynomial),
    /// `x₀` frozen at one position.
    Static(f64),
}

/// A designed trap-bottom path `x₀(t)` on `[0, t_f]`, held at its endpoint
/// values outside that window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub trap: TrapSpec,
    pub reference: Option<ReferenceTrajectory>,
    pub d: f64,
    pub t_f: f64,
    pub existence_ok: bool,
    pub bound_report: BoundReport,
    /// Playback stretch: the plan designed for `t_f` is executed over
    /// `t_f * time_scale`.
    #[serde(default = "one")]
    pub time_scale: f64,
    shape: Option<PlanShape>,
}

fn one() -> f64 {
    1.0
}

/// Default sample count for plans that are not evaluated in closed form.
pub const DEFAULT_PLAN_SAMPLES: usize = 16_384;

impl TransportPlan {
    fn from_parts(
        trap: TrapSpec,
        reference: ReferenceTrajectory,
        report: BoundReport,
        existence_ok: bool,
        shape: PlanShape,
    ) -> Self {
        TransportPlan {
            trap,
            d: reference.d,
            t_f: reference.t_f,
            reference: Some(reference),
            existence_ok,
            bound_report: report,
            time_scale: 1.0,
            shape: existence_ok.then_some(shape),
        }
    }

    /// Trap frozen at `x0` for a window of length `duration`.
    pub fn static_trap(trap: TrapSpec, x0: f64, duration: f64) -> Result<Self> {
        trap.validate()?;
        Ok(TransportPlan {
            trap,
            reference: None,
            d: x0,
            t_f: duration,
            existence_ok: true,
            bound_report: BoundReport::default(),
            time_scale: 1.0,
            shape: Some(PlanShape::Static(x0)),
        })
    }

    /// The 1-point harmonic design `x₀(t) = d x̃₀(t/t_f)` for a trap whose
    /// harmonic part has the protocol's `ω₀`. The plan's reference is the
    /// harmonic particle path `d x̃₁(s)`.
    pub fn one_point(trap: TrapSpec, protocol: &OnePointProtocol) -> Result<Self> {
        trap.validate()?;
        match trap.harmonic_omega() {
            Some(w) if (w - protocol.omega0).abs() <= 1e-12 * w => {}
            _ => {
                return Err(Error::invalid(format!(
                    "1-point design needs a harmonic-led trap with omega0 = {}",
                    protocol.omega0
                )))
            }
        }
        let (x0, _) = protocol.trajectories();
        let reference = crate::trajectory::make_reference(protocol.d, protocol.t_f, 7)?;
        Ok(Self::from_parts(
            trap,
            reference,
            BoundReport::default(),
            true,
            PlanShape::Polynomial(x0),
        ))
    }

    /// Copy of this plan played back over `t_f * factor`.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid("time scale must be positive"));
        }
        let mut p = self.clone();
        p.time_scale *= factor;
        Ok(p)
    }

    /// End of the executed window.
    pub fn duration(&self) -> f64 {
        self.t_f * self.time_scale
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.shape, Some(PlanShape::Sampled { .. }))
    }

    pub fn final_position(&self) -> f64 {
        match &self.shape {
            Some(PlanShape::Static(x)) => *x,
            _ => self.d,
        }
    }

    fn require(&self) -> Result<&PlanShape> {
        self.shape.as_ref().ok_or_else(|| {
            Error::Infeasible(format!(
                "no trap trajectory exists for this design\n{}",
                self.bound_report
            ))
        })
    }

    /// `x₀(t)`.
    pub fn x0(&self, t: f64) -> Result<f64> {
        let shape = self.require()?;
        Ok(self.eval_shape(shape, t).0)
    }

    /// `(x₀(t), ẋ₀(t))`.
    pub fn x0_with_rate(&self, t: f64) -> Result<(f64, f64)> {
        let shape = self.require()?;
        Ok(self.eval_shape(shape, t))
    }

    /// Evaluator for hot loops; fails once if the plan is infeasible.
    pub fn evaluator(&self) -> Result<PlanEval<'_>> {
        Ok(PlanEval {
            plan: self,
            shape: self.require()?,
        })
    }

    fn eval_shape(&self, shape: &PlanShape, t: f64) -> (f64, f64) {
        let tau = t / self.time_scale;
        let inside = tau > 0.0 && tau < self.t_f;
        let tc = tau.clamp(0.0, self.t_f);
        let (x, v) = match shape {
            PlanShape::Static(x) => return (*x, 0.0),
            PlanShape::Inverted => {
                let r = self.reference.as_ref().expect("inverted plans carry a reference");
                invert_point(&self.trap, r, tc).expect("feasibility checked at design time")
            }
            PlanShape::Polynomial(p) => {
                let s = tc / self.t_f;
                let v = p.eval_with_derivatives(s, 1);
                (self.d * v[0], self.d * v[1] / self.t_f)
            }
            PlanShape::Sampled { x0, slope } => hermite(x0, slope, self.t_f, tc),
        };
        (x, if inside { v / self.time_scale } else { 0.0 })
    }

    /// `n` uniform samples `(t, x₀)` over the executed window.
    pub fn samples(&self, n: usize) -> Result<Vec<(f64, f64)>> {
        let ev = self.evaluator()?;
        let n = n.max(2);
        let tf = self.duration();
        Ok((0..n)
            .map(|i| {
                let t = tf * i as f64 / (n - 1) as f64;
                (t, ev.x0(t))
            })
            .collect())
    }

    /// CSV dump `t,x0,exists` over `n` uniform times. Where the pointwise
    /// inversion has no root the `x0` field is left empty.
    pub fn write_csv<W: Write>(&self, mut w: W, n: usize) -> Result<()> {
        writeln!(w, "t,x0,exists")?;
        let n = n.max(2);
        let tf = self.duration();
        for i in 0..n {
            let t = tf * i as f64 / (n - 1) as f64;
            let point = match (&self.shape, &self.reference) {
                (Some(shape), _) => Some(self.eval_shape(shape, t).0),
                (None, Some(r)) => {
                    invert_point(&self.trap, r, (t / self.time_scale).clamp(0.0, r.t_f))
                        .map(|p| p.0)
                }
                (None, None) => None,
            };
            match point {
                Some(x) => writeln!(w, "{t:.16e},{x:.16e},1")?,
                None => writeln!(w, "{t:.16e},,0")?,
            }
        }
        Ok(())
    }
}

/// Borrowed fast-path evaluator of a feasible plan.
#[derive(Clone, Copy)]
pub struct PlanEval<'a> {
    plan: &'a TransportPlan,
    shape: &'a PlanShape,
}

impl PlanEval<'_> {
    pub fn x0(&self, t: f64) -> f64 {
        self.plan.eval_shape(self.shape, t).0
    }

    pub fn x0_with_rate(&self, t: f64) -> (f64, f64) {
        self.plan.eval_shape(self.shape, t)
    }
}

fn hermite(x: &[f64], m: &[f64], t_f: f64, t: f64) -> (f64, f64) {
    let n = x.len() - 1;
    let h = t_f / n as f64;
    let pos = t / h;
    let i = (pos.floor() as usize).min(n - 1);
    let u = pos - i as f64;
    let (p0, p1, m0, m1) = (x[i], x[i + 1], m[i] * h, m[i + 1] * h);
    let u2 = u * u;
    let u3 = u2 * u;
    let val = (2.0 * u3 - 3.0 * u2 + 1.0) * p0
        + (u3 - 2.0 * u2 + u) * m0
        + (-2.0 * u3 + 3.0 * u2) * p1
        + (u3 - u2) * m1;
    let der = ((6.0 * u2 - 6.0 * u) * p0
        + (3.0 * u2 - 4.0 * u + 1.0) * m0
        + (-6.0 * u2 + 6.0 * u) * p1
        + (3.0 * u2 - 2.0 * u) * m1)
        / h;
    (val, der)
}

/// `(x₀, ẋ₀)` at `t` from the pointwise inversion. The rate uses
/// `ẋ₀ = ẋ + x⃛ / U''(X)`, from differentiating `ẍ = −U'(X)`.
fn invert_point(trap: &TrapSpec, r: &ReferenceTrajectory, t: f64) -> Option<(f64, f64)> {
    let k = r.derivatives_unchecked(t, 3);
    let big_x = trap.invert_acceleration(k[2])?;
    let curv = trap.curvature(big_x);
    let rate = if k[3] == 0.0 { k[1] } else { k[1] + k[3] / curv };
    Some((k[0] - big_x, rate))
}

fn existence_report(trap: &TrapSpec, r: &ReferenceTrajectory) -> BoundReport {
    let tf2 = r.t_f * r.t_f;
    match *trap {
        TrapSpec::HarmonicCubic { omega0, xi } => {
            // the discriminant only closes for positive accelerations
            let (amax, _) = r.shape().nth_derivative(2).extrema_on(0.0, 1.0);
            let lhs = xi * omega0 * omega0 * tf2 / r.d;
            let rhs = 4.0 * amax;
            BoundReport {
                checks: vec![BoundCheck {
                    label: format!("xi*omega0^2*t_f^2/d >= 4*max(x''(s)) [= {rhs:.6} for order {}]", r.order),
                    lhs,
                    rhs,
                    satisfied: lhs >= rhs,
                }],
                note: None,
            }
        }
        TrapSpec::Tweezers { eta, .. } => {
            let c = r.max_abs_acceleration() * tf2 / r.d;
            let lhs = r.d / tf2;
            let exact = tweezers_max_restoring() * eta / c;
            let conservative = 27.0 / 104.0 * eta / c;
            BoundReport {
                checks: vec![
                    BoundCheck {
                        label: "d/t_f^2 <= (3*sqrt(3)/16)*eta / max|x''(s)| (maximum restoring acceleration)".into(),
                        lhs,
                        rhs: exact,
                        satisfied: lhs <= exact,
                    },
                    BoundCheck {
                        label: "d/t_f^2 < (27/104)*eta / max|x''(s)| [= 27*sqrt(3)/1040*eta for order 5]".into(),
                        lhs,
                        rhs: conservative,
                        satisfied: lhs < conservative,
                    },
                ],
                note: Some(
                    "the 27/104 acceleration limit is below the potential's true maximum restoring \
                     acceleration 3*sqrt(3)/16*eta; feasibility is decided by the latter"
                        .into(),
                ),
            }
        }
        _ => BoundReport::default(),
    }
}

/// Exact inversion for any trap family. Tweezers plans are sampled with
/// [`DEFAULT_PLAN_SAMPLES`] points; every other family is closed form.
pub fn invert(trap: &TrapSpec, reference: &ReferenceTrajectory) -> Result<TransportPlan> {
    match trap {
        TrapSpec::Tweezers { .. } => invert_sampled(trap, reference, DEFAULT_PLAN_SAMPLES),
        _ => invert_closed_form(trap, reference),
    }
}

fn invert_closed_form(trap: &TrapSpec, reference: &ReferenceTrajectory) -> Result<TransportPlan> {
    trap.validate()?;
    let report = existence_report(trap, reference);
    let ok = report.checks.first().map_or(true, |c| c.satisfied);
    Ok(TransportPlan::from_parts(
        *trap,
        reference.clone(),
        report,
        ok,
        PlanShape::Inverted,
    ))
}

/// Inversion stored as `n` intervals of cubic Hermite samples with analytic slopes.
pub fn invert_sampled(
    trap: &TrapSpec,
    reference: &ReferenceTrajectory,
    n: usize,
) -> Result<TransportPlan> {
    trap.validate()?;
    if n < 2 {
        return Err(Error::invalid("need at least two sample intervals"));
    }
    let report = existence_report(trap, reference);
    let ok = report.checks.first().map_or(true, |c| c.satisfied);
    let shape = if ok {
        let mut x0 = Vec::with_capacity(n + 1);
        let mut slope = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = reference.t_f * i as f64 / n as f64;
            let (x, v) = invert_point(trap, reference, t).ok_or_else(|| {
                Error::Infeasible(format!("inversion has no root at t = {t}"))
            })?;
            x0.push(x);
            slope.push(v);
        }
        PlanShape::Sampled { x0, slope }
    } else {
        PlanShape::Inverted
    };
    Ok(TransportPlan::from_parts(*trap, reference.clone(), report, ok, shape))
}

pub fn invert_power_law(trap: &TrapSpec, r: &ReferenceTrajectory) -> Result<TransportPlan> {
    match trap {
        TrapSpec::PowerLaw { .. } | TrapSpec::Harmonic { .. } => invert_closed_form(trap, r),
        _ => Err(Error::UnsupportedFamily(format!("expected power_law, got {}", trap.family_name()))),
    }
}

pub fn invert_cubic(trap: &TrapSpec, r: &ReferenceTrajectory) -> Result<TransportPlan> {
    match trap {
        TrapSpec::HarmonicCubic { .. } => invert_closed_form(trap, r),
        _ => Err(Error::UnsupportedFamily(format!("expected harmonic_cubic, got {}", trap.family_name()))),
    }
}

pub fn invert_quartic(trap: &TrapSpec, r: &ReferenceTrajectory) -> Result<TransportPlan> {
    match trap {
        TrapSpec::HarmonicQuartic { .. } => invert_closed_form(trap, r),
        _ => Err(Error::UnsupportedFamily(format!("expected harmonic_quartic, got {}", trap.family_name()))),
    }
}

pub fn invert_tweezers(trap: &TrapSpec, r: &ReferenceTrajectory) -> Result<TransportPlan> {
    match trap {
        TrapSpec::Tweezers { .. } => invert_sampled(trap, r, DEFAULT_PLAN_SAMPLES),
        _ => Err(Error::UnsupportedFamily(format!("expected tweezers, got {}", trap.family_name()))),
    }
}
