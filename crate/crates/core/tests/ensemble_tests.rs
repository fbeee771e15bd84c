//! Thermal sampling, moment equations against Monte Carlo, the xv
//! convolution, packet sweeps and dip detection.

use sta_core::dynamics::ParticleState;
use sta_core::ensemble::{
    self, EnsembleConfig, MagicOptions, MomentState, PacketSetup,
};
use sta_core::trajectory::make_reference;
use sta_core::traps::{self, TransportPlan, TrapSpec};

fn stats(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn harmonic_sampling_matches_the_gaussian() {
    let trap = TrapSpec::Harmonic { omega0: 1.7 };
    let n = 20_000;
    let cfg = EnsembleConfig::from_width(&trap, 1.0, n, 11).unwrap();
    let s = ensemble::sample_equilibrium(&cfg, &trap, 0.0).unwrap();
    assert_eq!(s.len(), n);
    let bound = 3.0 / (n as f64).sqrt();
    let (_, var) = stats(s.iter().map(|p| p.x));
    assert!((var - 1.0).abs() < bound * 2f64.sqrt(), "var {var}");
    let (_, vvar) = stats(s.iter().map(|p| p.v));
    assert!((vvar / (1.7 * 1.7) - 1.0).abs() < bound * 2f64.sqrt(), "vvar {vvar}");
    let xv = s.iter().map(|p| p.x * p.v).sum::<f64>() / n as f64;
    assert!(xv.abs() < bound * 1.7, "xv {xv}");
}

#[test]
fn quartic_kurtosis_matches_the_boltzmann_density() {
    let trap = TrapSpec::HarmonicQuartic { omega0: 1.0, xi: 0.5 };
    let theta = 1.0;
    // independent oracle: composite Simpson on the exact density
    let (a, m) = (-8.0, 200_000);
    let h = -2.0 * a / m as f64;
    let mut mom = [0.0f64; 5];
    for i in 0..=m {
        let x = a + i as f64 * h;
        let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p = w * (-trap.potential(x) / theta).exp();
        for (k, acc) in mom.iter_mut().enumerate() {
            *acc += p * x.powi(k as i32);
        }
    }
    let var = mom[2] / mom[0];
    let want = mom[4] / mom[0] / (var * var);
    assert!(want < 2.7, "density should be platykurtic: {want}");

    let n = 40_000;
    let cfg = EnsembleConfig { n_particles: n, kt_over_m: theta, seed: 5, stratify: 1 };
    let s = ensemble::sample_equilibrium(&cfg, &trap, 0.0).unwrap();
    let (mean, v) = stats(s.iter().map(|p| p.x));
    let k4 = s.iter().map(|p| (p.x - mean).powi(4)).sum::<f64>() / n as f64 / (v * v);
    // standard error of the kurtosis is below sqrt(24/N)
    assert!((k4 - want).abs() < 5.0 * (24.0 / n as f64).sqrt(), "{k4} vs {want}");
    let sd = ensemble::boltzmann_position_std(&trap, theta).unwrap();
    assert!((sd - var.sqrt()).abs() < 1e-9 * sd);
}

#[test]
fn sampling_rejects_bad_configs() {
    let trap = TrapSpec::Harmonic { omega0: 1.0 };
    let bad = [
        EnsembleConfig { n_particles: 0, kt_over_m: 1.0, seed: 0, stratify: 1 },
        EnsembleConfig { n_particles: 10, kt_over_m: -1.0, seed: 0, stratify: 1 },
        EnsembleConfig { n_particles: 10, kt_over_m: 1.0, seed: 0, stratify: 3 },
    ];
    for cfg in bad {
        assert!(ensemble::sample_equilibrium(&cfg, &trap, 0.0).is_err());
    }
    let power = TrapSpec::PowerLaw { n: 2, eta: 1.0 };
    assert!(EnsembleConfig::from_width(&power, 0.1, 10, 0).is_err());
}

#[test]
fn static_trap_is_a_fixed_point_of_the_moments() {
    let trap = TrapSpec::Harmonic { omega0: 1.3 };
    let plan = TransportPlan::static_trap(trap, 0.0, 10.0).unwrap();
    let init = MomentState::equilibrium(1.3, 0.2);
    let times: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
    for m in ensemble::evolve_moments(&trap, &plan, init, &times).unwrap() {
        for (a, b) in [(m.x, 0.0), (m.v, 0.0), (m.x2, init.x2), (m.v2, init.v2), (m.xv, 0.0)] {
            assert!((a - b).abs() < 1e-10 * init.v2, "{m:?}");
        }
    }
}

fn harmonic_transport(t_f: f64) -> (TrapSpec, TransportPlan) {
    let trap = TrapSpec::Harmonic { omega0: 1.0 };
    let plan = traps::invert(&trap, &make_reference(1.0, t_f, 5).unwrap()).unwrap();
    (trap, plan)
}

#[test]
fn designed_transport_ends_in_equilibrium() {
    let dx = 0.1;
    for t_f in [2.0, 5.0, 11.0] {
        let (trap, plan) = harmonic_transport(t_f);
        let m = ensemble::evolve_moments(&trap, &plan, MomentState::equilibrium(1.0, dx), &[t_f]).unwrap()[0];
        assert!(m.xv.abs() < 1e-8 * dx * dx, "t_f = {t_f}: {}", m.xv);
        assert!((m.x - 1.0).abs() < 1e-10 && m.v.abs() < 1e-10);
        // centred widths return to their initial values
        assert!((m.x2 - m.x * m.x - dx * dx).abs() < 1e-10 * dx * dx);
        assert!((m.v2 - m.v * m.v - dx * dx).abs() < 1e-10 * dx * dx);
        assert!(m.cauchy_schwarz_ok(1e-14));
    }
}

#[test]
fn moments_agree_with_monte_carlo() {
    let t_f = 4.0;
    let (trap, plan) = harmonic_transport(t_f);
    let dx = 0.1;
    let n = 10_000;
    let cfg = EnsembleConfig::from_width(&trap, dx, n, 2024).unwrap();
    let init = ensemble::sample_equilibrium(&cfg, &trap, 0.0).unwrap();
    let times: Vec<f64> = (1..=50).map(|i| t_f * i as f64 / 50.0).collect();
    let mc = ensemble::transport_ensemble(&trap, &plan, &init, &times, 1e-10).unwrap();
    let ode = ensemble::evolve_moments(&trap, &plan, MomentState::equilibrium(1.0, dx), &times).unwrap();
    for (states, m) in mc.iter().zip(&ode) {
        let est = MomentState::of_ensemble(states);
        let se = MomentState::standard_errors(states);
        assert!(est.cauchy_schwarz_ok(0.0));
        for (a, b, s) in [
            (est.x, m.x, se.x),
            (est.v, m.v, se.v),
            (est.x2, m.x2, se.x2),
            (est.v2, m.v2, se.v2),
            (est.xv, m.xv, se.xv),
        ] {
            assert!((a - b).abs() < 5.0 * s, "t = {}: {a} vs {b} (se {s})", states[0].t);
        }
    }
}

#[test]
fn xv_convolution_matches_the_moment_ode() {
    let t_f = 6.0;
    let (trap, plan) = harmonic_transport(t_f);
    let dx = 0.05;
    let init = MomentState::equilibrium(1.0, dx);
    let hist = ensemble::mean_history(&trap, &plan, init, t_f).unwrap();
    let mean = |t: f64| (hist.component(t, 0), hist.component(t, 1));
    let times: Vec<f64> = (1..=30).map(|i| t_f * i as f64 / 30.0).collect();
    let ode = ensemble::evolve_moments(&trap, &plan, init, &times).unwrap();
    for (&t, m) in times.iter().zip(&ode) {
        let q = ensemble::xv_exact(1.0, &plan, mean, t).unwrap();
        assert!((q - m.xv).abs() < 1e-8 * dx * dx.max(1.0), "t = {t}: {q} vs {}", m.xv);
    }
    assert_eq!(ensemble::xv_exact(1.0, &plan, mean, 0.0).unwrap(), 0.0);
    assert!(ensemble::xv_exact(1.0, &plan, mean, t_f).unwrap().abs() < 1e-9);

    let still = TransportPlan::static_trap(trap, 0.0, 5.0).unwrap();
    for t in [0.5, 2.0, 5.0] {
        assert_eq!(ensemble::xv_exact(1.0, &still, |_| (0.0, 0.0), t).unwrap(), 0.0);
    }
}

#[test]
fn xv_convolution_solves_its_second_order_equation() {
    // xv'' + 4ω² xv = ω² (ẋ₀ x̄ + 3 x₀ v̄), by central differences
    let w = 1.4;
    let t_f = 5.0;
    let trap = TrapSpec::Harmonic { omega0: w };
    let plan = traps::invert(&trap, &make_reference(1.0, t_f, 5).unwrap()).unwrap();
    let init = MomentState::equilibrium(w, 0.1);
    let hist = ensemble::mean_history(&trap, &plan, init, t_f).unwrap();
    let mean = |t: f64| (hist.component(t, 0), hist.component(t, 1));
    let xv = |t: f64| ensemble::xv_exact(w, &plan, mean, t).unwrap();
    let h = 1e-3;
    for i in 1..20 {
        let t = t_f * i as f64 / 20.0;
        let d2 = (xv(t + h) - 2.0 * xv(t) + xv(t - h)) / (h * h);
        let (x0, x0dot) = plan.x0_with_rate(t).unwrap();
        let (xb, vb) = mean(t);
        let rhs = w * w * (x0dot * xb + 3.0 * x0 * vb);
        let lhs = d2 + 4.0 * w * w * xv(t);
        assert!((lhs - rhs).abs() < 1e-5 * (1.0 + rhs.abs()), "t = {t}: {lhs} vs {rhs}");
    }
}

#[test]
fn harmonic_packets_keep_their_energy() {
    let trap = TrapSpec::Harmonic { omega0: 1.0 };
    let cfg = EnsembleConfig::from_width(&trap, 0.02, 500, 3).unwrap();
    let init = ensemble::sample_equilibrium(&cfg, &trap, 0.0).unwrap();
    for u in [1.0, 4.3, 9.9] {
        let plan = traps::invert(&trap, &make_reference(1.0, u, 5).unwrap()).unwrap();
        let err = ensemble::relative_energy_error(&trap, &plan, &init, 1e-10).unwrap();
        assert!(err < 1e-6, "u = {u}: {err:e}");
    }
}

#[test]
fn packet_sweep_is_seeded_and_flags_infeasible_cells() {
    let setup = PacketSetup { n_particles: 64, ..PacketSetup::default() };
    let xi = [0.05, 10f64.powf(1.5)];
    let us = [3.0, 6.0];
    let mut job = ensemble::packet_job(&setup, &xi, &us);
    job.seed = 99;
    let a = ensemble::packet_energy_sweep(&setup, &job).unwrap();
    let b = ensemble::packet_energy_sweep(&setup, &job).unwrap();
    let csv = |s: &ensemble::PacketSweep| {
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let text = csv(&a);
    assert_eq!(text, csv(&b));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# seed=99");
    assert_eq!(lines[1], "log10_xi_over_d,u,log10_rel_energy_err,feasible");
    assert_eq!(lines.len(), 6);
    // ξ/d = 0.05 is far too steep for the cubic design at these durations
    assert!(lines[2].ends_with(",,0"), "{}", lines[2]);
    assert!(lines[4].ends_with(",1") && lines[5].ends_with(",1"));
    assert_eq!(a.row(0).len(), 0);
    assert_eq!(a.row(1).len(), 2);
}

#[test]
fn dips_are_found_and_grouped() {
    // two close zero crossings make one dip, centred between them
    let row: Vec<(f64, f64)> = (0..301)
        .map(|i| {
            let u = 4.0 + 0.02 * i as f64;
            let f = (u - 6.0).powi(2) - 0.01;
            (u, (f.abs() + 1e-8).log10())
        })
        .collect();
    let dips = ensemble::find_dips(&row, &MagicOptions::default());
    assert_eq!(dips.len(), 1);
    assert_eq!(dips[0].members.len(), 2);
    assert!((dips[0].center - 6.0).abs() < 0.01);
    let shallow: Vec<(f64, f64)> = row.iter().map(|&(u, v)| (u, 0.01 * v)).collect();
    assert!(ensemble::find_magic_times(&shallow, &MagicOptions::default()).is_empty());
}

#[test]
fn magic_csv_layout() {
    let mut buf = Vec::new();
    ensemble::write_magic_csv(&mut buf, &[(100.0, 5.75, -5.2)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "log10_xi_over_d,u0,log10_rel_energy_err");
    let f: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(f, vec![2.0, 5.75, -5.2]);
}

#[test]
fn stratified_samples_share_orbits() {
    let trap = TrapSpec::HarmonicCubic { omega0: 1.0, xi: 20.0 };
    let cfg = EnsembleConfig::from_width(&trap, 0.5, 400, 8).unwrap().with_stratify(8);
    let s: Vec<ParticleState> = ensemble::sample_equilibrium(&cfg, &trap, 0.0).unwrap();
    assert_eq!(s.len(), 400);
    for orbit in s.chunks(8) {
        let e: Vec<f64> = orbit.iter().map(|p| 0.5 * p.v * p.v + trap.potential(p.x)).collect();
        for x in &e {
            assert!((x - e[0]).abs() < 1e-9 * e[0].abs().max(1e-12));
        }
    }
}
