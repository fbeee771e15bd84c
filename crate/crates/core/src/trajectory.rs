//! Reference particle trajectories and the 1-point harmonic protocol.
//!
//! Everything is stored in the dimensionless variable `s = t / t_f`; the
//! `(d, t_f)` scaling is applied at evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Interpolant coefficients on `s^((p+1)/2) .. s^p` for the three supported
/// degrees. They solve the boundary system `x(0)=0, x(1)=1` with derivatives
/// `1..(p-1)/2` vanishing at both ends.
const ORDER5: [f64; 3] = [10.0, -15.0, 6.0];
const ORDER7: [f64; 4] = [35.0, -84.0, 70.0, -20.0];
const ORDER9: [f64; 5] = [126.0, -420.0, 540.0, -315.0, 70.0];

pub const SUPPORTED_ORDERS: [usize; 3] = [5, 7, 9];

/// Dimensionless interpolant of degree `order` on `[0, 1]`.
pub fn unit_interpolant(order: usize) -> Result<Polynomial> {
    let tail: &[f64] = match order {
        5 => &ORDER5,
        7 => &ORDER7,
        9 => &ORDER9,
        _ => {
            return Err(Error::invalid(format!(
                "reference order must be one of 5, 7, 9 (got {order})"
            )))
        }
    };
    let first = (order + 1) / 2;
    let mut coeffs = vec![0.0; order + 1];
    coeffs[first..].copy_from_slice(tail);
    Ok(Polynomial::new(coeffs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub d: f64,
    pub t_f: f64,
    pub order: usize,
    shape: Polynomial,
}

pub fn make_reference(d: f64, t_f: f64, order: usize) -> Result<ReferenceTrajectory> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("distance must be positive (got {d})")));
    }
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive (got {t_f})")));
    }
    Ok(ReferenceTrajectory {
        d,
        t_f,
        order,
        shape: unit_interpolant(order)?,
    })
}

impl ReferenceTrajectory {
    /// Dimensionless shape polynomial in `s`.
    pub fn shape(&self) -> &Polynomial {
        &self.shape
    }

    /// Coefficients of `s^((p+1)/2) .. s^p`.
    pub fn coeffs(&self) -> &[f64] {
        &self.shape.coeffs()[(self.order + 1) / 2..]
    }

    /// `x, ẋ, ẍ, ...` up to `max_order` time derivatives at `t`.
    pub fn eval_derivatives(&self, t: f64, max_order: usize) -> Result<Vec<f64>> {
        if !(0.0..=self.t_f).contains(&t) {
            return Err(Error::Domain { t, t_f: self.t_f });
        }
        if max_order > self.order {
            return Err(Error::invalid(format!(
                "derivative order {max_order} exceeds polynomial degree {}",
                self.order
            )));
        }
        Ok(self.derivatives_unchecked(t, max_order))
    }

    pub(crate) fn derivatives_unchecked(&self, t: f64, max_order: usize) -> Vec<f64> {
        let s = t / self.t_f;
        let mut scale = self.d;
        self.shape
            .eval_with_derivatives(s, max_order)
            .into_iter()
            .map(|v| {
                let out = v * scale;
                scale /= self.t_f;
                out
            })
            .collect()
    }

    pub fn position(&self, t: f64) -> Result<f64> {
        Ok(self.eval_derivatives(t, 0)?[0])
    }

    pub fn acceleration(&self, t: f64) -> Result<f64> {
        Ok(self.eval_derivatives(t, 2)?[2])
    }

    /// Largest `|ẍ|` over the transport, from the exact critical points of `ẍ`.
    pub fn max_abs_acceleration(&self) -> f64 {
        let (hi, lo) = self.shape.nth_derivative(2).extrema_on(0.0, 1.0);
        hi.max(-lo) * self.d / (self.t_f * self.t_f)
    }

    /// Location `s` in `[0, 1/2]` where `ẍ` peaks.
    pub fn peak_acceleration_s(&self) -> f64 {
        let acc = self.shape.nth_derivative(2);
        let mut best = (0.0, f64::NEG_INFINITY);
        for s in acc.derivative().roots_in(0.0, 0.5, 2048) {
            let v = acc.eval(s);
            if v > best.1 {
                best = (s, v);
            }
        }
        best.0
    }
}

pub const ONE_POINT_DELTA: f64 = 1.0 / 420.0;

/// The 1-point harmonic protocol built from the auxiliary function
/// `g(t) = N s^2 (1-s)^2 (1-2s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnePointProtocol {
    pub d: f64,
    pub omega0: f64,
    pub t_f: f64,
}

impl OnePointProtocol {
    pub fn new(d: f64, omega0: f64, t_f: f64) -> Result<Self> {
        for (name, v) in [("distance", d), ("omega0", omega0), ("duration", t_f)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(OnePointProtocol { d, omega0, t_f })
    }

    /// Protocol with `d = 1`, `ω₀ = 1`, `t_f = u`.
    pub fn dimensionless(u: f64) -> Result<Self> {
        Self::new(1.0, 1.0, u)
    }

    pub fn u(&self) -> f64 {
        self.omega0 * self.t_f
    }

    /// `N = d / (ω₀² t_f² Δ)`, so that `∫₀^t_f ∫₀^t' g = d/ω₀²` with `t` in time
    /// units; this is the normalization behind the `420/u²` prefactor of `x̃₀`.
    pub fn normalization(&self) -> f64 {
        self.d / (self.u() * self.u() * ONE_POINT_DELTA)
    }

    /// Auxiliary function `g(t)` and its first two time derivatives.
    pub fn g(&self, t: f64) -> [f64; 3] {
        // s^2 (1-s)^2 (1-2s) = s^2 - 4 s^3 + 5 s^4 - 2 s^5
        let p = Polynomial::new(vec![0.0, 0.0, 1.0, -4.0, 5.0, -2.0]);
        let n = self.normalization();
        let v = p.eval_with_derivatives(t / self.t_f, 2);
        [n * v[0], n * v[1] / self.t_f, n * v[2] / (self.t_f * self.t_f)]
    }

    pub fn trajectories(&self) -> (Polynomial, Polynomial) {
        one_point_trajectories(self.u()).expect("u validated at construction")
    }
}

/// `(x̃₀(s), x̃₁(s))` of the 1-point protocol for `u = ω₀ t_f`.
pub fn one_point_trajectories(u: f64) -> Result<(Polynomial, Polynomial)> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::invalid(format!("u must be positive (got {u})")));
    }
    let u2 = u * u;
    let pre = 420.0 / u2;
    let x0 = Polynomial::new(vec![
        0.0,
        0.0,
        1.0,
        -4.0,
        5.0 + u2 / 12.0,
        -(2.0 + u2 / 5.0),
        u2 / 6.0,
        -u2 / 21.0,
    ])
    .scale(pre);
    let x1 = unit_interpolant(7)?;
    Ok((x0, x1))
}
