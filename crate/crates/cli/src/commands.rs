use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde_json::json;
use sta_core::dynamics::{self, ParticleState, PhysicalConstants};
use sta_core::ensemble::{self, MagicOptions, PacketSetup};
use sta_core::perturb::{self, MapGrid};
use sta_core::quantum::{self, EigenBasis, GroundStateOptions, Grid, PropagationOptions};
use sta_core::sweep::{self, SweepJob};
use sta_core::trajectory::{make_reference, OnePointProtocol};
use sta_core::traps::{self, TransportPlan, TrapSpec};

use crate::config::{Protocol, RunConfig};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Infeasible,
    /// A verification threshold was missed.
    Numerical,
}

pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn job_settings(job: &mut SweepJob, ctx: &RunContext, name: &str) {
    job.seed = ctx.config.seed;
    job.threads = ctx.threads;
    job.batch = ctx.config.sweep.batch.max(1);
    if ctx.config.sweep.checkpoint {
        job.checkpoint = Some(ctx.out.join(format!("{name}.ckpt")));
    }
}

struct Design {
    constants: PhysicalConstants,
    trap: TrapSpec,
    plan: TransportPlan,
    d: f64,
    t_f: f64,
}

fn build_plan(cfg: &RunConfig, trap: &TrapSpec, d: f64, t_f: f64, order: usize) -> Result<TransportPlan> {
    Ok(match cfg.transport.protocol {
        Protocol::Polynomial => traps::invert(trap, &make_reference(d, t_f, order)?)?,
        Protocol::OnePoint => {
            let w = trap
                .small_oscillation_omega()
                .context("the one_point protocol needs a trap with a harmonic bottom")?;
            TransportPlan::one_point(*trap, &OnePointProtocol::new(d, w, t_f)?)?
        }
    })
}

fn design_from(cfg: &RunConfig) -> Result<Design> {
    let constants = cfg.constants.physical()?;
    let d = cfg.distance(&constants)?;
    let t_f = cfg.duration(&constants)?;
    let trap = cfg.trap_spec(&constants, d)?;
    let plan = build_plan(cfg, &trap, d, t_f, cfg.transport.order)?;
    Ok(Design { constants, trap, plan, d, t_f })
}

fn design_json(des: &Design, cfg: &RunConfig) -> serde_json::Value {
    json!({
        "trap": des.trap,
        "d_m": des.d,
        "t_f_s": des.t_f,
        "u": des.constants.omega0 * des.t_f,
        "order": cfg.transport.order,
        "protocol": cfg.transport.protocol,
        "existence_ok": des.plan.existence_ok,
        "closed_form": des.plan.is_closed_form(),
        "bound_report": des.plan.bound_report,
    })
}

pub fn design(ctx: &RunContext) -> Result<Status> {
    let cfg = &ctx.config;
    let des = design_from(cfg)?;
    let mut w = create(&ctx.out.join("plan.csv"))?;
    writeln!(w, "# seed={}", ctx.config.seed)?;
    des.plan.write_csv(&mut w, cfg.transport.plan_samples.max(2))?;
    w.flush()?;
    let mut report = design_json(&des, cfg);
    if des.plan.existence_ok {
        report["x0_final_m"] = json!(des.plan.final_position());
    }
    write_json(&ctx.out.join("report.json"), &report)?;
    let text = format!(
        "trap: {:?}\nd = {:.6e} m, t_f = {:.6e} s, u = {:.6}\n{}",
        des.trap,
        des.d,
        des.t_f,
        des.constants.omega0 * des.t_f,
        des.plan.bound_report
    );
    std::fs::write(ctx.out.join("report.txt"), &text)?;
    print!("{text}");
    if des.plan.existence_ok {
        println!("design feasible; x0(t_f) = {:.12e} m", des.plan.final_position());
        Ok(Status::Success)
    } else {
        println!("design infeasible: the trap cannot supply the required acceleration");
        Ok(Status::Infeasible)
    }
}

pub const ROUND_TRIP_LIMIT: f64 = 1e-8;

pub fn verify(ctx: &RunContext) -> Result<Status> {
    let cfg = &ctx.config;
    let des = design_from(cfg)?;
    if !des.plan.existence_ok {
        print!("{}", des.plan.bound_report);
        println!("design infeasible; nothing to verify");
        return Ok(Status::Infeasible);
    }
    let tol = cfg.verify.tol;
    let n = cfg.verify.samples.max(2);
    let times: Vec<f64> = (0..n).map(|i| des.t_f * i as f64 / (n - 1) as f64).collect();
    let states = dynamics::integrate_at(&des.trap, &des.plan, ParticleState::at_rest(0.0), &times, tol)?;
    let mut w = create(&ctx.out.join("trajectory.csv"))?;
    writeln!(w, "# seed={}", ctx.config.seed)?;
    dynamics::write_trajectory_csv(&mut w, &states, &des.trap, &des.plan, des.constants.mass)?;
    w.flush()?;
    let last = *states.last().unwrap();
    let x_err = (last.x / des.d - 1.0).abs();
    let v_err = last.v.abs() * des.t_f / des.d;
    let e_res = dynamics::residual_energy(&des.trap, &des.plan, &last, des.constants.mass)?;
    let hw = des.constants.hbar * des.constants.omega0;
    // only the exact inversion promises a perfect round trip
    let exact = cfg.transport.protocol == Protocol::Polynomial;
    let pass = !exact || (x_err < ROUND_TRIP_LIMIT && v_err < ROUND_TRIP_LIMIT);
    let mut report = design_json(&des, cfg);
    report["x_final_rel_err"] = json!(x_err);
    report["v_final_scaled"] = json!(v_err);
    report["residual_energy_j"] = json!(e_res);
    report["residual_energy_hbar_omega0"] = json!(e_res / hw);
    report["round_trip_limit"] = json!(ROUND_TRIP_LIMIT);
    report["pass"] = json!(pass);
    println!(
        "|x(t_f)/d - 1| = {x_err:.3e}, |v(t_f)| t_f/d = {v_err:.3e}, residual energy = {:.3e} hbar omega0",
        e_res / hw
    );

    if cfg.verify.tf_perturbation != 0.0 {
        let factor = 1.0 + cfg.verify.tf_perturbation;
        let stretched = des.plan.time_scaled(factor)?;
        let t_end = stretched.duration();
        let f = dynamics::integrate_final(&des.trap, &stretched, ParticleState::at_rest(0.0), t_end, tol)?;
        let e = dynamics::residual_energy(&des.trap, &stretched, &f, des.constants.mass)?;
        warn!(
            "plan duration stretched by {:+.3}%: residual energy {:.6e} hbar omega0 (diagnostic only)",
            100.0 * cfg.verify.tf_perturbation,
            e / hw
        );
        report["perturbed"] = json!({
            "factor": factor,
            "t_f_s": t_end,
            "x_final_rel_err": (f.x / des.d - 1.0).abs(),
            "residual_energy_j": e,
            "residual_energy_hbar_omega0": e / hw,
        });
    }

    if cfg.verify.fig1 {
        fig1(ctx, &des)?;
    }
    write_json(&ctx.out.join("report.json"), &report)?;
    Ok(if pass { Status::Success } else { Status::Numerical })
}

/// `|x(t)/d − 1|` against `t/t_f` on the last half of the transport for
/// reference orders 5, 7 and 9.
fn fig1(ctx: &RunContext, des: &Design) -> Result<()> {
    let mut w = create(&ctx.out.join("fig1.csv"))?;
    writeln!(w, "# seed={}", ctx.config.seed)?;
    writeln!(w, "order,t_over_tf,abs_x_over_d_minus_1")?;
    for order in [5usize, 7, 9] {
        let plan = traps::invert(&des.trap, &make_reference(des.d, des.t_f, order)?)?;
        if !plan.existence_ok {
            warn!("order {order}: no inversion for these parameters, skipped");
            continue;
        }
        // log-spaced in 1 − t/t_f, from 1/2 down to 1e-4
        let ss: Vec<f64> = (0..=200)
            .map(|i| 1.0 - 0.5 * 10f64.powf(-(i as f64) * (3.69897 / 200.0)))
            .collect();
        let times: Vec<f64> = ss.iter().map(|s| s * des.t_f).collect();
        let states = dynamics::integrate_at(
            &des.trap,
            &plan,
            ParticleState::at_rest(0.0),
            &times,
            ctx.config.verify.tol.min(1e-12).max(1e-13),
        )?;
        for (s, st) in ss.iter().zip(&states) {
            writeln!(w, "{order},{:.16e},{:.16e}", s, (st.x / des.d - 1.0).abs())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn map(ctx: &RunContext) -> Result<Status> {
    let cfg = &ctx.config;
    let m = &cfg.map;
    let constants = cfg.constants.physical()?;
    let d = cfg.distance(&constants)?;
    let grid = MapGrid::new(m.xi_over_d_min, m.xi_over_d_max, m.n_xi, m.u_max, m.n_u)?;
    let mut job = perturb::map_job(m.kind, m.mode, &grid);
    job_settings(&mut job, ctx, "map");
    info!("energy map: {} cells on {} threads", job.n_cells(), job.threads);
    let emap = perturb::energy_map_with(m.kind, m.mode, &grid, &constants, d, &job)?;
    let mut w = create(&ctx.out.join("map.csv"))?;
    emap.write_csv(&mut w)?;
    w.flush()?;
    write_json(
        &ctx.out.join("map.json"),
        &emap.sidecar(&format!("sta {} map", env!("CARGO_PKG_VERSION"))),
    )?;

    let prefactor = constants.energy_prefactor(d);
    let mut w = create(&ctx.out.join("minima.csv"))?;
    writeln!(w, "# seed={}", ctx.config.seed)?;
    writeln!(w, "log10_xi_over_d,u_opt,log10_dE_over_hw")?;
    let lo = m.u_max / m.n_u as f64;
    for &xi in &grid.xi_over_d {
        for (u, e) in perturb::optimal_u(m.kind, m.mode, xi, (lo, m.u_max), prefactor, m.optima_scan)? {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", xi.log10(), u, e.max(1e-300).log10())?;
        }
    }
    w.flush()?;
    println!("wrote map.csv, map.json and minima.csv ({} x {} cells)", m.n_xi, m.n_u);
    Ok(Status::Success)
}

pub fn magic(ctx: &RunContext) -> Result<Status> {
    let cfg = &ctx.config;
    let m = &cfg.magic;
    if !(m.du > 0.0 && m.u_max > m.u_min && m.u_min > 0.0) {
        anyhow::bail!("magic: need 0 < u_min < u_max and du > 0");
    }
    let setup = PacketSetup {
        kind: m.kind,
        dx: m.dx_over_d,
        n_particles: m.n_particles,
        stratify: m.stratify,
        order: m.order,
        tol: ensemble::ENSEMBLE_TOL,
    };
    let xis: Vec<f64> = m.log10_xi_over_d.iter().map(|l| 10f64.powf(*l)).collect();
    let n_u = ((m.u_max - m.u_min) / m.du).round() as usize + 1;
    let us: Vec<f64> = (0..n_u).map(|j| m.u_min + j as f64 * m.du).collect();
    let mut job = ensemble::packet_job(&setup, &xis, &us);
    job_settings(&mut job, ctx, "magic");
    info!("packet sweep: {} cells, N = {}", job.n_cells(), setup.n_particles);
    let sweep_out = ensemble::packet_energy_sweep(&setup, &job)?;
    let mut w = create(&ctx.out.join("sweep.csv"))?;
    sweep_out.write_csv(&mut w)?;
    w.flush()?;

    let opts = MagicOptions { prominence: m.prominence, window: m.window };
    let refine = PacketSetup { n_particles: m.refine_particles, ..setup };
    let mut rows = Vec::new();
    let mut detail = Vec::new();
    for (i, &xi) in xis.iter().enumerate() {
        let dips = ensemble::find_dips(&sweep_out.row(i), &opts);
        let init = refine.sample(xi, sweep::cell_seed(cfg.seed ^ 0x5eed_5eed, i as u64))?;
        for dip in dips {
            let (refined, depth) = ensemble::refine_dip(&refine, xi, &init, &dip, m.refine_half, 1e-4)?;
            println!("log10(xi/d) = {:.3}: u0 = {:.4} (log10 error {:.3})", xi.log10(), refined.center, depth);
            rows.push((xi, refined.center, depth));
            detail.push(json!({ "xi_over_d": xi, "center": refined.center, "crossings": refined.members, "log10_rel_energy_err": depth }));
        }
    }
    let mut w = create(&ctx.out.join("magic.csv"))?;
    writeln!(w, "# seed={}", cfg.seed)?;
    ensemble::write_magic_csv(&mut w, &rows)?;
    w.flush()?;
    write_json(&ctx.out.join("magic.json"), &json!({ "dips": detail }))?;
    Ok(Status::Success)
}

pub fn quantum(ctx: &RunContext) -> Result<Status> {
    let cfg = &ctx.config;
    let q = &cfg.quantum;
    let constants = cfg.constants.physical()?;
    let d = cfg.distance(&constants)? / constants.a0();
    let xi = 10f64.powf(q.log10_xi_over_d) * d;
    let trap = q.kind.trap(1.0, xi);
    let grid = Grid::new(-q.margin_a0, d + q.margin_a0, q.n_points)?;
    let ground = quantum::ground_state(&trap, grid, constants, &GroundStateOptions::default())?;
    let basis = EigenBasis::new(&trap, &grid, q.basis_stride, q.basis_size)?;
    info!("ground-state energy {:.12} hbar omega0", ground.energy(&trap, 0.0));

    let results: Vec<Result<serde_json::Value>> = std::thread::scope(|s| {
        let handles: Vec<_> = q
            .factors
            .iter()
            .map(|&factor| {
                let ground = ground.clone();
                let basis = &basis;
                s.spawn(move || quantum_run(ctx, &trap, grid, basis, ground, d, factor))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("quantum worker panicked")).collect()
    });
    let runs: Vec<serde_json::Value> = results.into_iter().collect::<Result<_>>()?;
    let best = runs
        .iter()
        .min_by(|a, b| a["final_excess"].as_f64().unwrap().total_cmp(&b["final_excess"].as_f64().unwrap()))
        .map(|r| r["factor"].clone());
    write_json(
        &ctx.out.join("quantum.json"),
        &json!({
            "d_over_a0": d,
            "xi_over_a0": xi,
            "ground_energy_hbar_omega0": ground.energy(&trap, 0.0),
            "runs": runs,
            "lowest_final_excess_factor": best,
        }),
    )?;
    Ok(Status::Success)
}

fn quantum_run(
    ctx: &RunContext,
    trap: &TrapSpec,
    grid: Grid,
    basis: &EigenBasis,
    ground: quantum::Wavepacket,
    d: f64,
    factor: f64,
) -> Result<serde_json::Value> {
    let q = &ctx.config.quantum;
    let t_f = factor * q.tf_star_u;
    let plan = match q.protocol {
        Protocol::OnePoint => TransportPlan::one_point(*trap, &OnePointProtocol::new(d, 1.0, t_f)?)?,
        Protocol::Polynomial => traps::invert(trap, &make_reference(d, t_f, q.order)?)?,
    };
    let opts = PropagationOptions {
        dt: q.dt_omega,
        record_every: 10,
        snapshot_every: Some(q.snapshot_every.max(1)),
        ..PropagationOptions::default()
    };
    let run = quantum::propagate(ground, trap, &plan, &opts)?;
    let classical = dynamics::integrate_at(trap, &plan, ParticleState::at_rest(0.0), &run.times[1..], 1e-12)?;
    let dev = classical
        .iter()
        .zip(&run.mean_x[1..])
        .map(|(c, m)| (c.x - m).abs())
        .fold(0.0f64, f64::max)
        / d;
    let pops = quantum::transient_excitation(&run.snapshots, &grid, basis, &plan, q.frame, q.threshold)?;
    let tag = format!("{factor:.2}").replace('.', "p");
    let mut w = create(&ctx.out.join(format!("energy_{tag}.csv")))?;
    writeln!(w, "# seed={}", ctx.config.seed)?;
    run.write_csv(&mut w)?;
    w.flush()?;
    if q.snapshots {
        quantum::write_snapshots(&ctx.out.join(format!("snapshots_{tag}")), &grid, &run.snapshots)?;
    }
    let excess = run.final_ratio() - 1.0;
    println!(
        "t_f = {factor} t_f*: E(t_f)/E_i - 1 = {excess:.6e}, populated states = {}, max |<x> - x_cl|/d = {dev:.3e}",
        pops.max_count
    );
    Ok(json!({
        "factor": factor,
        "t_f_omega0": t_f,
        "final_excess": excess,
        "max_populated_states": pops.max_count,
        "max_leakage": pops.max_leakage,
        "max_mean_x_deviation_over_d": dev,
        "max_norm_error": run.max_norm_error,
        "max_edge_amplitude": run.max_edge,
    }))
}
