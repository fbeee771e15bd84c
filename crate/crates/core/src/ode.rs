//! Adaptive Dormand–Prince 5(4) integrator with 4th-order dense output.
//!
//! The state is a flat `&[f64]`, so the same stepper drives a single
//! particle, a whole ensemble, or the moment system.

#[allow(clippy::excessive_precision)]
mod tableau {
    pub const C2: f64 = 1.0 / 5.0;
    pub const C3: f64 = 3.0 / 10.0;
    pub const C4: f64 = 4.0 / 5.0;
    pub const C5: f64 = 8.0 / 9.0;

    pub const A21: f64 = 1.0 / 5.0;
    pub const A31: f64 = 3.0 / 40.0;
    pub const A32: f64 = 9.0 / 40.0;
    pub const A41: f64 = 44.0 / 45.0;
    pub const A42: f64 = -56.0 / 15.0;
    pub const A43: f64 = 32.0 / 9.0;
    pub const A51: f64 = 19372.0 / 6561.0;
    pub const A52: f64 = -25360.0 / 2187.0;
    pub const A53: f64 = 64448.0 / 6561.0;
    pub const A54: f64 = -212.0 / 729.0;
    pub const A61: f64 = 9017.0 / 3168.0;
    pub const A62: f64 = -355.0 / 33.0;
    pub const A63: f64 = 46732.0 / 5247.0;
    pub const A64: f64 = 49.0 / 176.0;
    pub const A65: f64 = -5103.0 / 18656.0;
    pub const A71: f64 = 35.0 / 384.0;
    pub const A73: f64 = 500.0 / 1113.0;
    pub const A74: f64 = 125.0 / 192.0;
    pub const A75: f64 = -2187.0 / 6784.0;
    pub const A76: f64 = 11.0 / 84.0;

    pub const E1: f64 = 71.0 / 57600.0;
    pub const E3: f64 = -71.0 / 16695.0;
    pub const E4: f64 = 71.0 / 1920.0;
    pub const E5: f64 = -17253.0 / 339200.0;
    pub const E6: f64 = 22.0 / 525.0;
    pub const E7: f64 = -1.0 / 40.0;

    pub const D1: f64 = -12715105075.0 / 11282082432.0;
    pub const D3: f64 = 87487479700.0 / 32700410799.0;
    pub const D4: f64 = -10690763975.0 / 1880347072.0;
    pub const D5: f64 = 701980252875.0 / 199316789632.0;
    pub const D6: f64 = -1453857185.0 / 822651844.0;
    pub const D7: f64 = 69997945.0 / 29380423.0;
}
use tableau::*;

/// First-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Failure of an integration, carrying the last accepted state.
#[derive(Debug, Clone)]
pub struct OdeFailure {
    pub t: f64,
    pub y: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: Vec<f64>,
    pub max_steps: usize,
    /// Upper bound on `|h|`; infinite by default.
    pub h_max: f64,
    pub h_init: Option<f64>,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
}

/// An accepted step, queryable at any time inside it.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    rcont: &'a [Vec<f64>; 5],
}

impl Step<'_> {
    pub fn to_owned(&self) -> DenseStep {
        DenseStep {
            t0: self.t0,
            t1: self.t1,
            rcont: self.rcont.clone(),
        }
    }

    /// Dense-output state at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }

    /// A single component of the dense output at `t`.
    pub fn interpolate_component(&self, t: f64, i: usize) -> f64 {
        let h = self.t1 - self.t0;
        let th = (t - self.t0) / h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = self.rcont;
        r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))
    }
}

/// A stored step of the dense output.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn component(&self, t: f64, i: usize) -> f64 {
        let th = (t - self.t0) / (self.t1 - self.t0);
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))
    }
}

/// Continuous solution assembled from every accepted step.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub steps: Vec<DenseStep>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t1)
    }

    fn locate(&self, t: f64) -> &DenseStep {
        let forward = self.t_end() >= self.t_start();
        let idx = self.steps.partition_point(|s| if forward { s.t1 < t } else { s.t1 > t });
        &self.steps[idx.min(self.steps.len() - 1)]
    }

    /// Component `i` at `t`; clamps to the covered interval.
    pub fn component(&self, t: f64, i: usize) -> f64 {
        let (a, b) = (self.t_start().min(self.t_end()), self.t_start().max(self.t_end()));
        let t = t.clamp(a, b);
        self.locate(t).component(t, i)
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.component(t, i);
        }
    }
}

impl Dopri5 {
    /// Integrates and keeps the full dense output.
    pub fn integrate_dense<S: OdeSystem>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
    ) -> Result<DenseSolution, OdeFailure> {
        let mut steps = Vec::new();
        self.integrate(sys, t0, y0, t_end, |s| steps.push(s.to_owned()))?;
        Ok(DenseSolution { steps })
    }

    pub fn new(dim: usize, rtol: f64, atol: Vec<f64>) -> Self {
        assert_eq!(atol.len(), dim, "atol must have one entry per component");
        Dopri5 {
            rtol,
            atol,
            max_steps: 10_000_000,
            h_max: f64::INFINITY,
            h_init: None,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            err: vec![0.0; dim],
        }
    }

    /// Same tolerance on every component.
    pub fn uniform(dim: usize, rtol: f64, atol: f64) -> Self {
        Self::new(dim, rtol, vec![atol; dim])
    }

    fn norm(&self, y: &[f64], scaled: &[f64]) -> f64 {
        let n = y.len();
        let mut acc = 0.0;
        for i in 0..n {
            let sk = self.atol[i] + self.rtol * y[i].abs();
            let q = scaled[i] / sk;
            acc += q * q;
        }
        (acc / n as f64).sqrt()
    }

    fn initial_step<S: OdeSystem>(&mut self, sys: &S, t0: f64, y0: &[f64], dir: f64) -> f64 {
        let n = y0.len();
        let f0 = self.k[0].clone();
        let d0 = self.norm(y0, y0);
        let d1 = self.norm(y0, &f0);
        let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h = h.min(self.h_max);
        for i in 0..n {
            self.ytmp[i] = y0[i] + dir * h * f0[i];
        }
        sys.rhs(t0 + dir * h, &self.ytmp, &mut self.k[1]);
        let diff: Vec<f64> = (0..n).map(|i| self.k[1][i] - f0[i]).collect();
        let d2 = self.norm(y0, &diff) / h;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        (100.0 * h).min(h1).min(self.h_max)
    }

    /// Integrates from `(t0, y0)` to `t_end` (either direction), calling
    /// `on_step` after every accepted step. Returns the final state.
    pub fn integrate<S, F>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        mut on_step: F,
    ) -> Result<Vec<f64>, OdeFailure>
    where
        S: OdeSystem,
        F: FnMut(&Step<'_>),
    {
        let n = sys.dim();
        assert_eq!(y0.len(), n);
        let mut y = y0.to_vec();
        if t_end == t0 {
            return Ok(y);
        }
        let dir = (t_end - t0).signum();
        let mut t = t0;
        let mut rcont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);

        sys.rhs(t, &y, &mut self.k[0]);
        let mut h = match self.h_init {
            Some(h) => h.abs().min(self.h_max),
            None => self.initial_step(sys, t, &y, dir),
        };
        let mut err_old: f64 = 1e-4;
        let mut last_rejected = false;
        let span = (t_end - t0).abs();

        for _ in 0..self.max_steps {
            let remaining = (t_end - t).abs();
            let mut last = false;
            if h >= remaining * (1.0 - 1e-14) {
                h = remaining;
                last = true;
            }
            if h < 1e-14 * span.max(t.abs()) {
                return Err(OdeFailure {
                    t,
                    y,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let hs = dir * h;
            self.stages(sys, t, &y, hs);
            for i in 0..n {
                self.err[i] = hs
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
            }
            let mut acc = 0.0;
            for i in 0..n {
                let sk = self.atol[i] + self.rtol * y[i].abs().max(self.ynew[i].abs());
                let q = self.err[i] / sk;
                acc += q * q;
            }
            let err = (acc / n as f64).sqrt();
            if !err.is_finite() {
                h *= 0.1;
                last_rejected = true;
                continue;
            }
            // PI step control
            let beta = 0.04;
            let fac11 = err.powf(0.2 - 0.75 * beta);
            if err <= 1.0 {
                let fac = (fac11 / err_old.powf(beta) / 0.9).clamp(0.1, 5.0);
                let mut hnew = h / fac;
                if last_rejected {
                    hnew = hnew.min(h);
                }
                err_old = err.max(1e-4);
                let t_new = if last { t_end } else { t + hs };
                for i in 0..n {
                    let ydiff = self.ynew[i] - y[i];
                    let bspl = hs * self.k[0][i] - ydiff;
                    rcont[0][i] = y[i];
                    rcont[1][i] = ydiff;
                    rcont[2][i] = bspl;
                    rcont[3][i] = ydiff - hs * self.k[6][i] - bspl;
                    rcont[4][i] = hs
                        * (D1 * self.k[0][i]
                            + D3 * self.k[2][i]
                            + D4 * self.k[3][i]
                            + D5 * self.k[4][i]
                            + D6 * self.k[5][i]
                            + D7 * self.k[6][i]);
                }
                {
                    let step = Step {
                        t0: t,
                        t1: t_new,
                        y0: &y,
                        y1: &self.ynew,
                        rcont: &rcont,
                    };
                    on_step(&step);
                }
                y.copy_from_slice(&self.ynew);
                let (k0, rest) = self.k.split_at_mut(1);
                k0[0].copy_from_slice(&rest[5]);
                t = t_new;
                if last {
                    return Ok(y);
                }
                h = hnew.min(self.h_max);
                last_rejected = false;
            } else {
                h /= (fac11 / 0.9).min(10.0);
                last_rejected = true;
            }
        }
        Err(OdeFailure {
            t,
            y,
            reason: format!("exceeded {} steps", self.max_steps),
        })
    }

    fn stages<S: OdeSystem>(&mut self, sys: &S, t: f64, y: &[f64], h: f64) {
        let n = y.len();
        let k = &mut self.k;
        let yt = &mut self.ytmp;
        for i in 0..n {
            yt[i] = y[i] + h * A21 * k[0][i];
        }
        sys.rhs(t + C2 * h, yt, &mut k[1]);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        sys.rhs(t + C3 * h, yt, &mut k[2]);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        sys.rhs(t + C4 * h, yt, &mut k[3]);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        sys.rhs(t + C5 * h, yt, &mut k[4]);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        sys.rhs(t + h, yt, &mut k[5]);
        let yn = &mut self.ynew;
        for i in 0..n {
            yn[i] = y[i]
                + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
        }
        sys.rhs(t + h, yn, &mut k[6]);
    }

    /// Integrates and returns the dense-output state at each of `times`,
    /// which must be monotone in the direction of integration and lie within
    /// `[t0, t_end]`.
    pub fn integrate_at<S: OdeSystem>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        times: &[f64],
    ) -> Result<Vec<Vec<f64>>, OdeFailure> {
        let n = sys.dim();
        let dir = (t_end - t0).signum();
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0;
        while next < times.len() && (times[next] - t0) * dir <= 0.0 {
            out.push(y0.to_vec());
            next += 1;
        }
        let y_end = self.integrate(sys, t0, y0, t_end, |step| {
            while next < times.len() && (times[next] - step.t1) * dir <= 0.0 {
                let mut buf = vec![0.0; n];
                step.interpolate(times[next], &mut buf);
                out.push(buf);
                next += 1;
            }
        })?;
        while out.len() < times.len() {
            out.push(y_end.clone());
        }
        Ok(out)
    }
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}
