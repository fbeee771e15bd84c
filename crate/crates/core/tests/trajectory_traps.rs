//! Reference trajectories, trap potentials and the exact inversions checked
//! against independent oracles: a linear solve for the interpolant
//! coefficients, Brent's method for every inversion root and direct
//! quadrature of the 1-point constraints.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sta_core::dynamics::{self, ParticleState};
use sta_core::quad::GaussRule;
use sta_core::roots::{brent, golden_section};
use sta_core::trajectory::{
    make_reference, one_point_trajectories, unit_interpolant, OnePointProtocol, SUPPORTED_ORDERS,
};
use sta_core::traps::{self, tweezers_max_restoring, TrapSpec};
use sta_core::Error;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Solves the boundary system `x(1) = 1`, `x^(k)(1) = 0` for `k = 1..(p-1)/2`
/// on the monomials `s^((p+1)/2) .. s^p`.
fn boundary_oracle(order: usize) -> Vec<f64> {
    let first = (order + 1) / 2;
    let m = order + 1 - first;
    let falling = |n: usize, k: usize| (0..k).map(|j| (n - j) as f64).product::<f64>();
    let a = DMatrix::from_fn(m, m, |k, j| falling(first + j, k));
    let mut b = DVector::zeros(m);
    b[0] = 1.0;
    a.lu().solve(&b).expect("boundary system is regular").iter().copied().collect()
}

#[test]
fn interpolant_coefficients_solve_the_boundary_system() {
    for order in SUPPORTED_ORDERS {
        let oracle = boundary_oracle(order);
        let r = make_reference(1.0, 1.0, order).unwrap();
        assert_eq!(r.coeffs().len(), oracle.len());
        for (c, o) in r.coeffs().iter().zip(&oracle) {
            assert!((c - o).abs() < 1e-9 * o.abs().max(1.0), "order {order}: {c} vs {o}");
        }
    }
    // order 5 is exactly 10 s^3 - 15 s^4 + 6 s^5
    assert_eq!(unit_interpolant(5).unwrap().coeffs(), &[0.0, 0.0, 0.0, 10.0, -15.0, 6.0]);
}

#[test]
fn order5_reference_examples() {
    let r = make_reference(1.0, 1.0, 5).unwrap();
    assert_eq!(r.eval_derivatives(0.0, 2).unwrap(), vec![0.0, 0.0, 0.0]);
    assert!(r.acceleration(0.5).unwrap().abs() < 1e-13);
    let (s_max, neg) = golden_section(|s| -r.acceleration(s).unwrap(), 0.0, 0.5, 1e-12);
    assert!((s_max - (0.5 - 3f64.sqrt() / 6.0)).abs() < 1e-6, "{s_max}");
    assert!((-neg - 10.0 / 3f64.sqrt()).abs() < 1e-9);
    assert!((r.max_abs_acceleration() - 10.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!(matches!(r.position(1.0 + 1e-9), Err(Error::Domain { .. })));
    assert!(make_reference(1.0, 1.0, 6).is_err());
}

#[test]
fn references_meet_boundary_conditions_at_any_scale() {
    for order in SUPPORTED_ORDERS {
        let (d, tf) = (3.7e-6, 2.2e-5);
        let r = make_reference(d, tf, order).unwrap();
        let k = (order - 1) / 2;
        let start = r.eval_derivatives(0.0, k).unwrap();
        let end = r.eval_derivatives(tf, k).unwrap();
        assert!(start.iter().all(|&v| v == 0.0));
        assert!((end[0] - d).abs() < 1e-14 * d);
        for (j, v) in end.iter().enumerate().skip(1) {
            assert!(v.abs() < 1e-9 * d / tf.powi(j as i32), "order {order} derivative {j}: {v}");
        }
    }
}

#[test]
fn one_point_pair_satisfies_its_equation_of_motion() {
    for u in [2.0, 6.97, 10.0, 13.335, 25.0] {
        let (x0, x1) = one_point_trajectories(u).unwrap();
        assert!((x0.eval(1.0) - 1.0).abs() < 1e-12);
        let end = x1.eval_with_derivatives(1.0, 2);
        assert!((end[0] - 1.0).abs() < 1e-13 && end[1].abs() < 1e-12 && end[2].abs() < 1e-11);
        let start = x1.eval_with_derivatives(0.0, 2);
        assert!(start.iter().all(|v| *v == 0.0));
        for i in 0..=1000 {
            let s = i as f64 / 1000.0;
            let res = x1.eval_with_derivatives(s, 2)[2] + u * u * (x1.eval(s) - x0.eval(s));
            assert!(res.abs() < 1e-10 * u * u, "u = {u}, s = {s}: {res}");
        }
    }
    assert!(one_point_trajectories(0.0).is_err());
}

#[test]
fn one_point_auxiliary_function_constraints() {
    let p = OnePointProtocol::new(2.5, 3.0, 4.0).unwrap();
    let rule = GaussRule::new(12);
    let g = |t: f64| p.g(t)[0];
    let first = rule.composite(0.0, p.t_f, 4, g);
    // ∫₀^T ∫₀^t' g = ∫₀^T (T − t) g(t) dt
    let second = rule.composite(0.0, p.t_f, 4, |t| (p.t_f - t) * g(t));
    let target = p.d / (p.omega0 * p.omega0);
    let scale = p.normalization() * p.t_f;
    assert!(first.abs() < 1e-10 * scale, "{first}");
    assert!(rel(second, target) < 1e-10, "{second} vs {target}");
    for t in [0.0, p.t_f] {
        let v = p.g(t);
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
    }
}

#[test]
fn potential_examples() {
    assert_eq!(TrapSpec::Harmonic { omega0: 2.0 }.potential(3.0), 18.0);
    assert_eq!(TrapSpec::PowerLaw { n: 2, eta: 1.0 }.potential(1.0), 0.25);
    let tw = TrapSpec::Tweezers { eta: 1.7, x_r: 0.3 };
    let (_, neg) = golden_section(|x| -tw.force(-x), 0.0, 1.0, 1e-12);
    assert!(rel(-neg, tweezers_max_restoring() * 1.7) < 1e-10);
    assert!((tweezers_max_restoring() - 0.324_759_526_419_164_4).abs() < 1e-15);
    assert!((27.0 * 3f64.sqrt() / 1040.0 - 0.044_966).abs() < 1e-5);
}

#[test]
fn power_law_n1_matches_harmonic() {
    let w = 1.3;
    let pl = TrapSpec::PowerLaw { n: 1, eta: w * w };
    let h = TrapSpec::Harmonic { omega0: w };
    for x in [-2.0, -0.1, 0.0, 0.7, 3.0] {
        assert!(rel(pl.potential(x), h.potential(x)) < 1e-15 || x == 0.0);
        assert!((pl.force(x) - h.force(x)).abs() < 1e-15 * (1.0 + x.abs()));
    }
    let r = make_reference(1.0, 4.0, 7).unwrap();
    let a = traps::invert(&pl, &r).unwrap();
    let b = traps::invert(&h, &r).unwrap();
    for i in 0..=50 {
        let t = 4.0 * i as f64 / 50.0;
        assert!((a.x0(t).unwrap() - b.x0(t).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn inversion_examples() {
    // harmonic compensation x₀ = x + ẍ/ω₀²
    let r = make_reference(1.0, 1.0, 5).unwrap();
    let w = 7.0;
    let plan = traps::invert_power_law(&TrapSpec::PowerLaw { n: 1, eta: w * w }, &r).unwrap();
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let k = r.eval_derivatives(t, 2).unwrap();
        assert!((plan.x0(t).unwrap() - (k[0] + k[2] / (w * w))).abs() < 1e-14);
    }
    // quartic power law at the acceleration peak
    let quartic = TrapSpec::PowerLaw { n: 2, eta: 1.0 };
    let plan = traps::invert_power_law(&quartic, &r).unwrap();
    let t = 0.5 - 3f64.sqrt() / 6.0;
    let acc = r.acceleration(t).unwrap();
    let oracle = brent(|x| x * x * x + acc, -3.0, 0.0, 1e-15).unwrap();
    assert!((oracle + 1.7937).abs() < 1e-3);
    assert!((plan.x0(t).unwrap() - (r.position(t).unwrap() - oracle)).abs() < 1e-12);
    assert!(traps::invert_power_law(&TrapSpec::HarmonicCubic { omega0: 1.0, xi: 1.0 }, &r).is_err());
    // quartic anharmonic example X³ + X + 1 = 0
    let qa = TrapSpec::HarmonicQuartic { omega0: 1.0, xi: 1.0 };
    let x = qa.invert_acceleration(1.0).unwrap();
    assert!((x + 0.682_327_803_828_019_3).abs() < 1e-12);
    assert!(rel(traps::quartic_cardano_offset(1.0, 1.0, 1.0), 0.682_327_803_828_019_3) < 1e-12);
    // tweezers at the marginal acceleration
    let tw = TrapSpec::Tweezers { eta: 1.0, x_r: 1.0 };
    let amax = tweezers_max_restoring();
    assert!((tw.invert_acceleration(amax).unwrap() + 1.0 / 3f64.sqrt()).abs() < 1e-7);
    assert!((tw.invert_acceleration(-amax).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-7);
    assert!(tw.invert_acceleration(1.001 * amax).is_none());
    for trap in [qa, tw, TrapSpec::HarmonicCubic { omega0: 1.0, xi: 2.0 }] {
        assert_eq!(trap.invert_acceleration(0.0), Some(0.0));
    }
}

#[test]
fn plans_hold_endpoints_and_vanishing_displacement_instants() {
    let d = 1.0;
    let r = make_reference(d, 10.0, 5).unwrap();
    for trap in [
        TrapSpec::PowerLaw { n: 3, eta: 2.0 },
        TrapSpec::HarmonicCubic { omega0: 1.0, xi: 5.0 },
        TrapSpec::HarmonicQuartic { omega0: 1.0, xi: 0.5 },
        TrapSpec::Tweezers { eta: 1.0, x_r: 1.0 },
    ] {
        let plan = traps::invert(&trap, &r).unwrap();
        assert!(plan.existence_ok, "{trap:?}");
        assert!(plan.x0(0.0).unwrap().abs() < 1e-15);
        assert!((plan.x0(10.0).unwrap() - d).abs() < 1e-14);
        assert!((plan.x0(5.0).unwrap() - r.position(5.0).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn cubic_bound_report_and_infeasible_plan() {
    let r = make_reference(1.0, 1.0, 5).unwrap();
    let bound = 40.0 / 3f64.sqrt();
    let ok = traps::invert_cubic(&TrapSpec::HarmonicCubic { omega0: 1.0, xi: 1.01 * bound }, &r).unwrap();
    assert!(ok.existence_ok);
    let check = &ok.bound_report.checks[0];
    assert!(rel(check.rhs, bound) < 1e-12);
    let bad = traps::invert_cubic(&TrapSpec::HarmonicCubic { omega0: 1.0, xi: 0.99 * bound }, &r).unwrap();
    assert!(!bad.existence_ok);
    assert!(matches!(bad.x0(0.3), Err(Error::Infeasible(_))));
    let mut csv = Vec::new();
    bad.write_csv(&mut csv, 101).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,x0,exists\n"));
    assert!(text.lines().any(|l| l.ends_with(",,0")));
    assert!(!text.contains("NaN"));
}

#[test]
fn tweezers_report_lists_both_bounds() {
    let r = make_reference(1.0, 1.0, 5).unwrap();
    // between the printed bound and the potential's true limit
    let eta = 20.0;
    let plan = traps::invert_tweezers(&TrapSpec::Tweezers { eta, x_r: 1.0 }, &r).unwrap();
    let checks = &plan.bound_report.checks;
    assert_eq!(checks.len(), 2);
    assert!(checks[0].satisfied && !checks[1].satisfied);
    assert!(plan.existence_ok);
    assert!(rel(checks[1].rhs, 27.0 * 3f64.sqrt() / 1040.0 * eta) < 1e-12);
    assert!(rel(checks[0].rhs, 9.0 / 160.0 * eta) < 1e-12);
    assert!(plan.bound_report.note.is_some());
}

#[test]
fn harmonic_limit_of_anharmonic_inversions() {
    let r = make_reference(1.0, 3.0, 5).unwrap();
    let ts: Vec<f64> = (1..40).map(|i| 3.0 * i as f64 / 40.0).collect();
    let err = |trap: TrapSpec| {
        let plan = traps::invert(&trap, &r).unwrap();
        ts.iter()
            .map(|&t| {
                let k = r.eval_derivatives(t, 2).unwrap();
                let harmonic = k[0] + k[2];
                rel(plan.x0(t).unwrap() - k[0], harmonic - k[0])
            })
            .fold(0.0f64, f64::max)
    };
    for make in [
        (|xi| TrapSpec::HarmonicCubic { omega0: 1.0, xi }) as fn(f64) -> TrapSpec,
        |xi| TrapSpec::HarmonicQuartic { omega0: 1.0, xi },
    ] {
        assert!(err(make(1e8)) < 1e-6);
        let sweep: Vec<f64> = (0..=10).map(|i| err(make(10f64.powf(1.0 + 0.1 * i as f64)))).collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]), "{sweep:?}");
    }
}

#[test]
fn sampled_plan_converges_under_refinement() {
    let trap = TrapSpec::Tweezers { eta: 30.0, x_r: 0.5 };
    let r = make_reference(1.0, 1.0, 5).unwrap();
    let exact = traps::invert_sampled(&trap, &r, 1 << 16).unwrap();
    let probes: Vec<f64> = (0..997).map(|i| (i as f64 + 0.37) / 997.0).collect();
    let mut last = f64::INFINITY;
    for n in [64usize, 256, 1024, 4096] {
        let plan = traps::invert_sampled(&trap, &r, n).unwrap();
        let e = probes
            .iter()
            .map(|&t| (plan.x0(t).unwrap() - exact.x0(t).unwrap()).abs())
            .fold(0.0f64, f64::max);
        assert!(e < last / 8.0, "n = {n}: {e} vs {last}");
        last = e;
        // largest gap between adjacent samples shrinks with the spacing
        let s = plan.samples(n + 1).unwrap();
        let gap = s.windows(2).map(|w| (w[1].1 - w[0].1).abs()).fold(0.0f64, f64::max);
        assert!(gap < 4.0 / n as f64);
    }
    // default sampling density
    let default = traps::invert(&trap, &r).unwrap();
    assert!(!default.is_closed_form());
    assert!(traps::DEFAULT_PLAN_SAMPLES >= 10_000);
    for &t in &probes {
        assert!((default.x0(t).unwrap() - exact.x0(t).unwrap()).abs() < 1e-11);
    }
}

#[test]
fn tweezers_samples_match_brent_at_every_node() {
    let (eta, x_r) = (40.0, 0.7);
    let trap = TrapSpec::Tweezers { eta, x_r };
    let r = make_reference(1.0, 1.0, 7).unwrap();
    let plan = traps::invert_sampled(&trap, &r, 4096).unwrap();
    let edge = 1.0 / 3f64.sqrt();
    for i in 0..=4096 {
        let t = i as f64 / 4096.0;
        let k = r.eval_derivatives(t, 2).unwrap();
        let a = k[2] / eta;
        let y = if a == 0.0 {
            0.0
        } else {
            let (lo, hi) = if a > 0.0 { (-edge, 0.0) } else { (0.0, edge) };
            brent(|y| y / (1.0 + y * y).powi(2) + a, lo, hi, 1e-16).unwrap()
        };
        let want = k[0] - y * x_r;
        assert!((plan.x0(t).unwrap() - want).abs() < 1e-10 * (1.0 + want.abs()), "t = {t}");
    }
}

#[test]
fn closed_forms_match_brent_on_random_inputs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let edge = 1.0 / 3f64.sqrt();
    let mut worst = [0.0f64; 3];
    for _ in 0..10_000 {
        let w = 10f64.powf(rng.gen_range(-1.0..1.0));
        let xi = 10f64.powf(rng.gen_range(-2.0..3.0));
        // quartic: any acceleration
        let acc = rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-3.0..3.0));
        let x = TrapSpec::HarmonicQuartic { omega0: w, xi }.invert_acceleration(acc).unwrap();
        let lim = 2.0 * acc.abs() / (w * w);
        let o = brent(|x| w * w * (x + x * x * x / (xi * xi)) + acc, -lim, lim, 1e-16).unwrap();
        worst[0] = worst[0].max((x - o).abs() / o.abs());
        // cubic: feasible accelerations only
        let acc = rng.gen_range(-1.0..1.0) * xi * w * w / 4.0;
        let x = TrapSpec::HarmonicCubic { omega0: w, xi }.invert_acceleration(acc).unwrap();
        let f = |x: f64| w * w * (x + x * x / xi) + acc;
        let o = if acc > 0.0 {
            brent(f, -xi / 2.0, 0.0, 1e-16).unwrap()
        } else {
            brent(f, 0.0, 2.0 * acc.abs() / (w * w), 1e-16).unwrap()
        };
        worst[1] = worst[1].max((x - o).abs() / o.abs());
        // tweezers: inner branch
        let a = rng.gen_range(-1.0..1.0) * tweezers_max_restoring() * 0.999;
        let y = traps::tweezers_root(a).unwrap();
        let (lo, hi) = if a > 0.0 { (-edge, 0.0) } else { (0.0, edge) };
        let o = brent(|y| y / (1.0 + y * y).powi(2) + a, lo, hi, 1e-16).unwrap();
        worst[2] = worst[2].max((y - o).abs() / o.abs());
    }
    assert!(worst.iter().all(|&e| e < 1e-10), "{worst:?}");
}

/// A feasible trap of every family for a reference of `order` with `d = 1`, `t_f = 1`.
fn family(kind: u8, strength: f64, order: usize) -> TrapSpec {
    let amax = make_reference(1.0, 1.0, order).unwrap().max_abs_acceleration();
    match kind {
        0 => TrapSpec::PowerLaw { n: 1, eta: strength },
        1 => TrapSpec::PowerLaw { n: 2, eta: strength },
        2 => TrapSpec::PowerLaw { n: 3, eta: strength },
        3 => TrapSpec::HarmonicCubic { omega0: strength.sqrt(), xi: 1.05 * 4.0 * amax / strength },
        4 => TrapSpec::HarmonicQuartic { omega0: strength.sqrt(), xi: 1.0 / strength.sqrt() },
        _ => TrapSpec::Tweezers {
            eta: (1.05 + strength / 100.0) * amax / tweezers_max_restoring(),
            x_r: 0.3,
        },
    }
}

fn round_trip(trap: TrapSpec, order: usize, d: f64, t_f: f64) -> (f64, f64) {
    let r = make_reference(d, t_f, order).unwrap();
    let plan = traps::invert(&trap, &r).unwrap();
    assert!(plan.existence_ok, "{trap:?}");
    let f = dynamics::integrate_final(&trap, &plan, ParticleState::at_rest(0.0), t_f, 1e-10).unwrap();
    ((f.x / d - 1.0).abs(), f.v.abs() * t_f / d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_every_family(kind in 0u8..6, strength in 1.0f64..100.0, order_i in 0usize..3) {
        let order = SUPPORTED_ORDERS[order_i];
        let (ex, ev) = round_trip(family(kind, strength, order), order, 1.0, 1.0);
        prop_assert!(ex < 1e-8 && ev < 1e-8, "{ex} {ev}");
    }

    #[test]
    fn inversion_is_continuous(kind in 0u8..6, strength in 1.0f64..100.0) {
        let trap = family(kind, strength, 5);
        let r = make_reference(1.0, 1.0, 5).unwrap();
        let plan = traps::invert(&trap, &r).unwrap();
        // odd roots of ẍ make x₀ Hölder-continuous, so only demand steady decay
        let jumps: Vec<f64> = [1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|h| (plan.x0(0.5 + h).unwrap() - plan.x0(0.5 - h).unwrap()).abs())
            .collect();
        prop_assert!(jumps.windows(2).all(|w| w[1] < w[0]), "{jumps:?}");
        prop_assert!(jumps[3] < 0.3 * jumps[0], "{jumps:?}");
    }
}
