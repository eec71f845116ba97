//! Command-line driver.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use pfwi::adjoint::dot_product_test;
use pfwi::cli_io::{
    gradient_to_grid_file, load_config, material_from_grid_file, material_to_grid_file,
    read_grid_file, read_traces, snapshot_to_grid_file, write_energy_csv, write_grid_file,
    write_kernel_artifact, write_traces, RunConfig,
};
use pfwi::energy::check_decay;
use pfwi::error::{Error, IoError};
use pfwi::forward::{
    assemble_system, max_speed, run_forward, Boundary, Grid2D, ReceiverSpec, Ricker, SimConfig,
};
use pfwi::inversion::{
    fd_gradient_check, invert, misfit_and_gradient, InversionSetup, ParameterSelection, Shot,
};
use pfwi::kernel_fit::{fit_error, fit_kernel, FrequencyGrid, KernelFit, PoleResidueSet, Spacing};
use pfwi::material::{Axis, MaterialField};
use pfwi::memory;

#[derive(Parser)]
#[command(
    name = "pfwi",
    version,
    about = "Time-domain full waveform inversion for poroelastic media"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [paths] out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides [rng] seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Kernel-fit working precision in bits (overrides [fit]).
    #[arg(long, global = true)]
    precision_bits: Option<usize>,
    /// Worker threads; 1 selects the sequential path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the tortuosity kernel and write the pole/residue artifact.
    FitKernel,
    /// Run the forward simulation; write traces, snapshots, energy.
    Simulate,
    /// Run the forward simulation and certify energy decay.
    EnergyReport,
    /// Run the discrete adjoint dot-product test.
    AdjointTest,
    /// Verify the adjoint gradient against central differences.
    GradientCheck,
    /// Iterative material inversion against observed traces.
    Invert,
    /// Run the 0-D memory-variable oracles.
    Oracle,
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::Io(IoError::Validation(vec![
            "--config PATH is required".into()
        ]))
    })?;
    let mut cfg = load_config(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(bits) = cli.precision_bits {
        cfg.fit.precision_bits = bits;
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if n <= 1 {
            pfwi::parallel::set_parallel(false);
        } else {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(n) = cli.threads {
        if n > 1 {
            eprintln!("note: built without the `parallel` feature; running sequentially");
        }
    }
    if cli.verbose {
        println!("# effective configuration");
    }
    print!("{}", cfg.effective_text());
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        Error::Io(IoError::Io {
            path: cfg.out_dir.display().to_string(),
            source: e,
        })
    })?;
    Ok(cfg)
}

fn build_material(cfg: &RunConfig) -> Result<MaterialField, Error> {
    match &cfg.material_file {
        None => Ok(
            MaterialField::homogeneous(cfg.grid.nx, cfg.grid.nz, cfg.material)
                .map_err(Error::Material)?,
        ),
        Some(path) => {
            let gf = read_grid_file(path)?;
            if gf.grid.nx != cfg.grid.nx || gf.grid.nz != cfg.grid.nz {
                return Err(Error::Io(IoError::Validation(vec![format!(
                    "material grid {}x{} does not match config grid {}x{}",
                    gf.grid.nx, gf.grid.nz, cfg.grid.nx, cfg.grid.nz
                )])));
            }
            Ok(material_from_grid_file(&gf)?)
        }
    }
}

fn fit_both_axes(cfg: &RunConfig) -> Result<(KernelFit, KernelFit), Error> {
    let f1 = fit_kernel(&cfg.material, Axis::X, &cfg.fit)?;
    let f3 = fit_kernel(&cfg.material, Axis::Z, &cfg.fit)?;
    Ok((f1, f3))
}

/// Replace a zero (auto) sponge strength with 12 c_max / (width h).
fn resolve_boundary(b: Boundary, c_max: f64, grid: &Grid2D) -> Boundary {
    match b {
        Boundary::Sponge { width, strength } if strength == 0.0 => Boundary::Sponge {
            width,
            strength: 12.0 * c_max / (width as f64 * grid.dx.min(grid.dz)),
        },
        other => other,
    }
}

fn receiver_specs(cfg: &RunConfig, n1: usize, n3: usize) -> Result<Vec<ReceiverSpec>, Error> {
    cfg.receivers
        .iter()
        .map(|r| {
            let mask = r
                .mask(n1, n3)
                .map_err(|e| Error::Io(IoError::Validation(vec![e])))?;
            Ok(ReceiverSpec {
                x: r.x,
                z: r.z,
                mask,
            })
        })
        .collect()
}

fn run(cli: &Cli) -> Result<i32, Error> {
    match cli.cmd {
        Cmd::FitKernel => cmd_fit_kernel(cli),
        Cmd::Simulate => cmd_simulate(cli),
        Cmd::EnergyReport => cmd_energy_report(cli),
        Cmd::AdjointTest => cmd_adjoint_test(cli),
        Cmd::GradientCheck => cmd_gradient_check(cli),
        Cmd::Invert => cmd_invert(cli),
        Cmd::Oracle => cmd_oracle(cli),
    }
}

fn cmd_fit_kernel(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let t0 = Instant::now();
    let (f1, f3) = fit_both_axes(&cfg)?;
    let validation = FrequencyGrid::new(Spacing::Log, cfg.fit.omega_min, cfg.fit.omega_max, 97);
    for (fit, axis) in [(&f1, Axis::X), (&f3, Axis::Z)] {
        let err = fit_error(&fit.set, &cfg.material, &validation, axis);
        println!(
            "axis {}: N = {}, node exactness {:.3e}, in-band rel err {:.3e}",
            axis.label(),
            fit.set.len(),
            fit.max_node_rel_err,
            err
        );
    }
    let path = cfg.out_dir.join("kernel.txt");
    write_kernel_artifact(
        &path,
        &[
            (&f1.set, f1.max_node_rel_err),
            (&f3.set, f3.max_node_rel_err),
        ],
    )?;
    println!("wrote {} ({} ms)", path.display(), t0.elapsed().as_millis());
    Ok(0)
}

struct Prepared {
    mf: MaterialField,
    prs1: PoleResidueSet,
    prs3: PoleResidueSet,
    sim: SimConfig,
    receivers: Vec<ReceiverSpec>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, Error> {
    let mf = build_material(cfg)?;
    let (f1, f3) = fit_both_axes(cfg)?;
    let receivers = receiver_specs(cfg, f1.set.len(), f3.set.len())?;
    let mut sim = cfg.sim;
    sim.boundary = resolve_boundary(sim.boundary, max_speed(&mf), &cfg.grid);
    Ok(Prepared {
        mf,
        prs1: f1.set,
        prs3: f3.set,
        sim,
        receivers,
    })
}

fn cmd_simulate(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let p = prepare(&cfg)?;
    let t0 = Instant::now();
    let out = run_forward(
        &p.mf,
        &p.prs1,
        &p.prs3,
        &cfg.grid,
        &cfg.sources,
        &p.receivers,
        &p.sim,
    )?;
    println!(
        "simulated {} steps at dt = {:.6e} s in {} ms",
        out.n_steps,
        out.dt,
        t0.elapsed().as_millis()
    );
    let trace_path = cfg.out_dir.join("traces.pfwi");
    write_traces(&trace_path, &out.seis)?;
    println!("wrote {}", trace_path.display());
    if p.sim.snapshot_cadence > 0 {
        for (j, w) in out.snapshots.states.iter().enumerate() {
            let step = j * out.snapshots.cadence;
            let path = cfg.out_dir.join(format!("snapshot_{step:06}.pfgd"));
            write_grid_file(&path, &snapshot_to_grid_file(&cfg.grid, w))?;
        }
        println!(
            "wrote {} snapshots (cadence {})",
            out.snapshots.states.len(),
            out.snapshots.cadence
        );
    }
    if p.sim.energy_cadence > 0 {
        let path = cfg.out_dir.join("energy.csv");
        write_energy_csv(
            &path,
            &out.ledger,
            cfg.grid.nx,
            cfg.grid.nz,
            out.dt,
            cfg.seed,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_energy_report(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let p = prepare(&cfg)?;
    let mut sim = p.sim;
    if sim.energy_cadence == 0 {
        sim.energy_cadence = 1;
    }
    sim.snapshot_cadence = 0;
    let out = run_forward(
        &p.mf,
        &p.prs1,
        &p.prs3,
        &cfg.grid,
        &cfg.sources,
        &p.receivers,
        &sim,
    )?;
    let path = cfg.out_dir.join("energy.csv");
    write_energy_csv(
        &path,
        &out.ledger,
        cfg.grid.nx,
        cfg.grid.nz,
        out.dt,
        cfg.seed,
    )?;
    println!("wrote {}", path.display());
    if matches!(sim.boundary, Boundary::Sponge { .. }) {
        println!("note: sponge boundary active; the balance residual includes sponge work");
    }
    let t_off = cfg
        .sources
        .iter()
        .map(|s| s.wavelet.end_time())
        .fold(0.0f64, f64::max);
    let report = check_decay(&out.ledger, 1e-8, t_off).map_err(Error::Solver)?;
    println!(
        "post-source decay certified: max growth {:.3e}, max |dE/dt + D| {:.3e}",
        report.max_growth, report.max_balance_residual
    );
    Ok(0)
}

fn cmd_adjoint_test(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let p = prepare(&cfg)?;
    let (dt, _) = p.sim.resolve_dt(max_speed(&p.mf), &cfg.grid);
    let ops = assemble_system(&p.mf, &p.prs1, &p.prs3, &cfg.grid, p.sim.boundary, dt)?;
    let discrepancy = dot_product_test(&ops, 50, cfg.seed);
    println!("dot-product test discrepancy: {discrepancy:.3e} (tolerance 1e-12)");
    Ok(if discrepancy <= 1e-12 { 0 } else { 3 })
}

fn synthetic_obs(
    cfg: &RunConfig,
    p: &Prepared,
    setup: &InversionSetup,
) -> Result<Vec<pfwi::forward::SeismogramSet>, Error> {
    // twin data: single-cell kappa_1 bump at the domain center
    let mut true_mf = p.mf.clone();
    let (cx, cz) = (cfg.grid.nx / 2, cfg.grid.nz / 2);
    let mut pp = *true_mf.params(cx, cz);
    pp.kappa_1 *= 1.5;
    true_mf.update_cell(cx, cz, pp).map_err(Error::Material)?;
    let mut obs = Vec::new();
    for shot in setup.shots {
        let sources = [shot.source];
        let out = run_forward(
            &true_mf,
            setup.prs1,
            setup.prs3,
            setup.grid,
            &sources,
            setup.receivers,
            &SimConfig {
                dt: pfwi::forward::DtSpec::Fixed(setup.dt),
                snapshot_cadence: 0,
                energy_cadence: 0,
                ..*setup.sim
            },
        )?;
        obs.push(out.seis);
    }
    Ok(obs)
}

fn load_observed(
    cfg: &RunConfig,
    n_shots: usize,
) -> Result<Option<Vec<pfwi::forward::SeismogramSet>>, Error> {
    let Some(path) = &cfg.observed else {
        return Ok(None);
    };
    if path.is_dir() {
        let mut obs = Vec::new();
        for k in 0..n_shots {
            obs.push(read_traces(&path.join(format!("shot_{k:03}.pfwi")))?);
        }
        Ok(Some(obs))
    } else if n_shots == 1 {
        Ok(Some(vec![read_traces(path)?]))
    } else {
        Err(Error::Io(IoError::Validation(vec![format!(
            "{} shots configured but observed path {} is a single file",
            n_shots,
            path.display()
        )])))
    }
}

fn cmd_gradient_check(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let p = prepare(&cfg)?;
    let shots: Vec<Shot> = cfg.sources.iter().map(|s| Shot { source: *s }).collect();
    let setup = InversionSetup::new(
        &cfg.grid,
        &p.prs1,
        &p.prs3,
        &shots,
        &p.receivers,
        &p.sim,
        &p.mf,
    );
    let obs = match load_observed(&cfg, shots.len())? {
        Some(o) => o,
        None => {
            println!("no observed traces configured; using a synthetic twin");
            synthetic_obs(&cfg, &p, &setup)?
        }
    };
    let selection = ParameterSelection::around_background(
        cfg.inversion_params.clone(),
        &cfg.material,
        cfg.bound_factor,
    );
    let margin = match p.sim.boundary {
        Boundary::Periodic => 2,
        Boundary::Sponge { width, .. } => width + 3,
    };
    let t0 = Instant::now();
    let worst = fd_gradient_check(
        &setup,
        &p.mf,
        &selection,
        &obs,
        cfg.n_probes,
        cfg.seed,
        (margin..cfg.grid.nx - margin, margin..cfg.grid.nz - margin),
    )?;
    println!(
        "gradient check: max relative error {worst:.3e} over {} probes ({} ms; tolerance 1e-4)",
        cfg.n_probes,
        t0.elapsed().as_millis()
    );
    Ok(if worst <= 1e-4 { 0 } else { 3 })
}

fn cmd_invert(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    if cfg.observed.is_none() {
        return Err(Error::Io(IoError::Validation(vec![
            "[paths] observed is required for invert".into(),
        ])));
    }
    let p = prepare(&cfg)?;
    let shots: Vec<Shot> = cfg.sources.iter().map(|s| Shot { source: *s }).collect();
    let setup = InversionSetup::new(
        &cfg.grid,
        &p.prs1,
        &p.prs3,
        &shots,
        &p.receivers,
        &p.sim,
        &p.mf,
    );
    let obs = load_observed(&cfg, shots.len())?.expect("checked above");
    let selection = ParameterSelection::around_background(
        cfg.inversion_params.clone(),
        &cfg.material,
        cfg.bound_factor,
    );
    let t0 = Instant::now();
    let (final_mf, history) = invert(&setup, &p.mf, &selection, &obs, &cfg.invert_opts)?;
    let mut csv = String::from("iteration,chi,grad_norm,step,line_search_evals\n");
    for r in &history {
        println!(
            "iter {:3}: chi {:.6e}, |grad| {:.3e}, step {:.3e}, ls {}",
            r.iteration, r.chi, r.grad_norm, r.step, r.line_search_evals
        );
        csv += &format!(
            "{},{:.17e},{:.17e},{:.17e},{}\n",
            r.iteration, r.chi, r.grad_norm, r.step, r.line_search_evals
        );
    }
    let hist_path = cfg.out_dir.join("inversion_history.csv");
    std::fs::write(&hist_path, csv).map_err(|e| {
        Error::Io(IoError::Io {
            path: hist_path.display().to_string(),
            source: e,
        })
    })?;
    write_grid_file(
        &cfg.out_dir.join("model_final.pfgd"),
        &material_to_grid_file(&cfg.grid, &final_mf),
    )?;
    let (_, grad) = misfit_and_gradient(&setup, &final_mf, &selection, &obs)?;
    write_grid_file(
        &cfg.out_dir.join("gradient_final.pfgd"),
        &gradient_to_grid_file(&cfg.grid, &grad),
    )?;
    println!(
        "inversion finished in {} ms; wrote model_final.pfgd",
        t0.elapsed().as_millis()
    );
    Ok(0)
}

fn cmd_oracle(cli: &Cli) -> Result<i32, Error> {
    let cfg = load(cli)?;
    let mat = cfg.material;
    let mut all_pass = true;
    let check = |all_pass: &mut bool, name: &str, value: f64, tol: f64| {
        let pass = value <= tol;
        *all_pass &= pass;
        println!(
            "{}: {} (value {:.3e}, tolerance {:.1e})",
            name,
            if pass { "PASS" } else { "FAIL" },
            value,
            tol
        );
    };

    // phi/Theta identity against the independent ODE integration
    {
        let q = |t: f64| t.sin() * (1.0 - (-t * t).exp());
        let dq = |t: f64| t.cos() * (1.0 - (-t * t).exp()) + t.sin() * 2.0 * t * (-t * t).exp();
        let vt = -3.0;
        let dt = 1e-4;
        let steps = 50_000;
        let phi = memory::phi_ode_oracle(dq, vt, dt, steps);
        let mut th = 0.0;
        let mut worst = 0.0f64;
        for i in 0..steps {
            let t = i as f64 * dt;
            th = memory::theta_step(th, q(t), q(t + dt), dt, vt);
            worst = worst.max((phi[i + 1] - memory::phi_from_theta(q(t + dt), th)).abs());
        }
        check(&mut all_pass, "phi/theta identity", worst, 1e-8);
    }

    // Caputo agreement at lambda = 0
    {
        let t_end = 8.0;
        let steps = 4000;
        let dt = t_end / steps as f64;
        let q: Vec<f64> = (0..=steps)
            .map(|i| {
                let t = i as f64 * dt;
                t * (-t).exp()
            })
            .collect();
        let got = memory::shifted_fracderiv_oracle(&q, 0.0, dt, 200, 1.0);
        let fp = |t: f64| (1.0 - t) * (-t).exp();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in (steps / 10..=steps).step_by(10) {
            let t = i as f64 * dt;
            let want = memory::caputo_half_derivative(fp, t, 200);
            num += (got[i] - want) * (got[i] - want);
            den += want * want;
        }
        check(
            &mut all_pass,
            "caputo half-derivative",
            (num / den).sqrt(),
            1e-3,
        );
    }

    // drag-term equivalence with the fitted kernel
    {
        let fit = fit_kernel(&mat, Axis::X, &cfg.fit)?;
        let lambda = mat.lambda(Axis::X);
        let gamma = mat.eta / (mat.kappa_1 * lambda.sqrt());
        let f0 = 1.0e3;
        let wavelet = Ricker::with_default_delay(f0, 1.0);
        let t_end = 6.0 / f0;
        let steps = 3000;
        let dt = t_end / steps as f64;
        let q: Vec<f64> = (0..=steps).map(|i| wavelet.eval(i as f64 * dt)).collect();
        let pr = memory::pole_residue_drag(
            &q,
            &fit.set.poles,
            &fit.set.residues,
            fit.set.a,
            mat.rho_f / mat.phi,
            dt,
        );
        let y_scale = (lambda + 2.0 * std::f64::consts::PI * f0).sqrt();
        let jkd: Vec<f64> = memory::shifted_fracderiv_oracle(&q, lambda, dt, 200, y_scale)
            .iter()
            .map(|v| gamma * v)
            .collect();
        let num: f64 = pr.iter().zip(&jkd).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = jkd.iter().map(|v| v * v).sum();
        check(
            &mut all_pass,
            "drag-term equivalence",
            (num / den).sqrt(),
            1e-3,
        );
    }

    Ok(if all_pass { 0 } else { 3 })
}
