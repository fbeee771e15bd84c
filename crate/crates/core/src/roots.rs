//! Scalar root finding and minimization, plus the closed-form polynomial
//! roots used by the trap inversions.

use crate::error::{Error, Result};

/// Brent's bracketing root finder. `f(a)` and `f(b)` must differ in sign
/// (or one of them vanish). Terminates when the bracket is below
/// `tol * max(1, |x|)` or the residual is exactly zero.
pub fn brent<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Root(format!(
            "root not bracketed: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol * b.abs().max(1e-300);
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::Root("Brent iteration limit reached".into()))
}

/// Golden-section minimization on `[a, b]`; returns `(x_min, f(x_min))`
/// once the bracket is narrower than `tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// The single real root of `x^3 + p x + q = 0` for `p > 0`, written in the
/// hyperbolic form of Cardano's formula. It reduces to `-q/p` without
/// cancellation when `p` dominates, unlike the two-cube-root form.
pub fn depressed_cubic_root(p: f64, q: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if p > 0.0 {
        let r = (p / 3.0).sqrt();
        let z = 1.5 * q / (p * r);
        return -2.0 * r * (z.asinh() / 3.0).sinh();
    }
    // p <= 0: Cardano with the largest real root when three exist.
    let disc = q * q / 4.0 + p * p * p / 27.0;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        u + v
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        2.0 * r * (phi / 3.0).cos()
    }
}

/// Real roots of `a x^2 + b x + c` (numerically stable form).
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + disc.sqrt().copysign(b));
    if q == 0.0 {
        return vec![0.0, 0.0];
    }
    let mut r = vec![q / a, c / q];
    r.sort_by(|x, y| x.partial_cmp(y).unwrap());
    r
}

/// Real roots of the monic-normalizable cubic `a x^3 + b x^2 + c x + d`.
pub fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic_roots(b, c, d);
    }
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v]
    } else if p == 0.0 {
        vec![0.0]
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos())
            .collect()
    };
    for r in roots.iter_mut() {
        *r -= shift;
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

/// Real roots of `a x^4 + b x^3 + c x^2 + d x + e` by Ferrari's method.
/// Each root is polished with two Newton steps on the original quartic.
pub fn quartic_roots(a: f64, b: f64, c: f64, d: f64, e: f64) -> Vec<f64> {
    if a == 0.0 {
        return cubic_roots(b, c, d, e);
    }
    let (b1, c1, d1, e1) = (b / a, c / a, d / a, e / a);
    // depressed quartic y^4 + p y^2 + q y + r with x = y - b1/4
    let shift = b1 / 4.0;
    let p = c1 - 3.0 * b1 * b1 / 8.0;
    let q = d1 - b1 * c1 / 2.0 + b1 * b1 * b1 / 8.0;
    let r = e1 - b1 * d1 / 4.0 + b1 * b1 * c1 / 16.0 - 3.0 * b1.powi(4) / 256.0;
    let mut ys = Vec::new();
    if q.abs() < 1e-14 * (1.0 + p.abs() + r.abs()) {
        // biquadratic
        for z in quadratic_roots(1.0, p, r) {
            if z >= 0.0 {
                ys.push(z.sqrt());
                ys.push(-z.sqrt());
            }
        }
    } else {
        // resolvent cubic: m^3 + p m^2 + (p^2/4 - r) m - q^2/8 = 0, want m > 0
        let m = cubic_roots(1.0, p, p * p / 4.0 - r, -q * q / 8.0)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if m > 0.0 {
            let s = (2.0 * m).sqrt();
            for sign in [1.0, -1.0] {
                // y^2 -/+ s y + (p/2 + m +/- q/(2s)) = 0
                let bq = -sign * s;
                let cq = p / 2.0 + m + sign * q / (2.0 * s);
                ys.extend(quadratic_roots(1.0, bq, cq));
            }
        }
    }
    let f = |x: f64| (((a * x + b) * x + c) * x + d) * x + e;
    let df = |x: f64| ((4.0 * a * x + 3.0 * b) * x + 2.0 * c) * x + d;
    let mut xs: Vec<f64> = ys
        .into_iter()
        .map(|y| {
            let mut x = y - shift;
            for _ in 0..2 {
                let g = df(x);
                if g != 0.0 {
                    let nx = x - f(x) / g;
                    if nx.is_finite() {
                        x = nx;
                    }
                }
            }
            x
        })
        .collect();
    xs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x + x + 1.0, -2.0, 0.0, 1e-15).unwrap();
        assert!((r + 0.682_327_803_828_019_3).abs() < 1e-14);
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn golden_minimum() {
        let (x, _) = golden_section(|x| (x - 1.3).powi(2), 0.0, 3.0, 1e-10);
        assert!((x - 1.3).abs() < 1e-9);
    }

    #[test]
    fn hyperbolic_cardano_matches_classic() {
        for &(p, q) in &[(1.0, 1.0), (3.0, -7.0), (1e-3, 2.0), (1e12, 5.0)] {
            let r = depressed_cubic_root(p, q);
            let resid = r * r * r + p * r + q;
            assert!(resid.abs() < 1e-12 * (1.0 + q.abs()), "p={p} q={q} r={r}");
        }
        assert_eq!(depressed_cubic_root(2.0, 0.0), 0.0);
    }

    #[test]
    fn quartic_ferrari() {
        // (x-1)(x+2)(x-3)(x+0.5)
        let roots = quartic_roots(1.0, -1.5, -6.0, 3.5, 3.0);
        let expect = [-2.0, -0.5, 1.0, 3.0];
        assert_eq!(roots.len(), 4);
        for (r, e) in roots.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12, "{roots:?}");
        }
        // x^4 + 1 has no real roots
        assert!(quartic_roots(1.0, 0.0, 0.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn cubic_three_real_roots() {
        // (x-1)(x-2)(x-3)
        let r = cubic_roots(1.0, -6.0, 11.0, -6.0);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
