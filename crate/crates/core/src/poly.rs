//! Dense real polynomials in ascending-power form.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// `coeffs[k]` multiplies `s^k`.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Polynomial { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && *self.coeffs.last().unwrap() == 0.0 {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn nth_derivative(&self, n: usize) -> Polynomial {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    /// Value and the first `n` derivatives at `s`.
    pub fn eval_with_derivatives(&self, s: f64, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        let mut p = self.clone();
        for _ in 0..=n {
            out.push(p.eval(s));
            p = p.derivative();
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        Polynomial::new(
            (0..n)
                .map(|k| get(&self.coeffs, k) + get(&other.coeffs, k))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    /// Real roots in `[a, b]`, located by a sign-change scan over `scan` cells
    /// and polished with Brent's method. Double roots that do not change sign
    /// are missed unless they fall on a scan node.
    pub fn roots_in(&self, a: f64, b: f64, scan: usize) -> Vec<f64> {
        let mut roots = Vec::new();
        let h = (b - a) / scan as f64;
        let mut prev_s = a;
        let mut prev_v = self.eval(a);
        if prev_v == 0.0 {
            roots.push(a);
        }
        for i in 1..=scan {
            let s = if i == scan { b } else { a + h * i as f64 };
            let v = self.eval(s);
            if v == 0.0 {
                roots.push(s);
            } else if prev_v != 0.0 && prev_v.signum() != v.signum() {
                if let Ok(r) = crate::roots::brent(|x| self.eval(x), prev_s, s, 1e-15) {
                    roots.push(r);
                }
            }
            prev_s = s;
            prev_v = v;
        }
        roots
    }

    /// Maximum and minimum of the polynomial over `[a, b]`, evaluated at the
    /// endpoints and at every critical point.
    pub fn extrema_on(&self, a: f64, b: f64) -> (f64, f64) {
        let mut candidates = vec![a, b];
        candidates.extend(self.derivative().roots_in(a, b, 4096));
        candidates.iter().map(|&s| self.eval(s)).fold(
            (f64::NEG_INFINITY, f64::INFINITY),
            |(hi, lo), v| (hi.max(v), lo.min(v)),
        )
    }
}
