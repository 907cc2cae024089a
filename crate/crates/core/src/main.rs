//! Command-line front end: optimize / analyze / reinforce / export /
//! selftest subcommands over the TOML run configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};
use nalgebra::DVector;

use buckopt::config::{BoundaryRule, ConfigError, RunConfig};
use buckopt::design::{DesignField, FilterBoundary};
use buckopt::diagnostics::{
    blf_errors, k_normalize, locality_scores, mac, reinforce, zeta_per_level, DiagnosticsError,
};
use buckopt::export::{
    convergence_csv, read_checkpoint, read_density, timings_csv, write_checkpoint, write_density,
    write_text, write_vtk, ExportError, ModeExport, Report,
};
use buckopt::lba::{BucklingAnalysis, LbaOptions, LbaResult};
use buckopt::optimizer::{coalescence_measure, OptError, Optimizer};
use buckopt::solver::{kaczmarz_sweep, row_norms_inv};

#[derive(Parser)]
#[command(
    name = "buckopt",
    version,
    about = "Topology optimization with multilevel buckling constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop described by a config file.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a previously written checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Buckling analysis of a saved density field, with a direct
    /// single-level reference when more levels are requested.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Density dump to analyze.
        #[arg(long)]
        design: PathBuf,
        /// Override the number of grid levels.
        #[arg(long)]
        level: Option<usize>,
        /// Sharp black-white projection before the analysis.
        #[arg(long)]
        bw: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect localized modes and thicken the bars that carry them.
    Reinforce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a density dump into a VTK file.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Target VTK path (default: <out_dir>/design.vtk).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quick internal verification of the numerical kernels.
    Selftest,
}

/// Failures carry the exit class: 2 for configuration and input-format
/// problems, 1 for runtime failures.
enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<buckopt::lba::LbaError> for CliError {
    fn from(e: buckopt::lba::LbaError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Ok(t) = std::env::var("BUCKOPT_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => info!(
                "BUCKOPT_THREADS={n}: accepted; all kernels in this build are single-threaded"
            ),
            _ => warn!("ignoring invalid BUCKOPT_THREADS value {t:?}"),
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not errors
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Optimize {
            config,
            out,
            resume,
        } => cmd_optimize(&config, out, resume),
        Command::Analyze {
            config,
            design,
            level,
            bw,
            out,
        } => cmd_analyze(&config, &design, level, bw, out),
        Command::Reinforce {
            config,
            design,
            out,
        } => cmd_reinforce(&config, &design, out),
        Command::Export {
            config,
            design,
            out,
        } => cmd_export(&config, &design, out),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.message());
            e.code()
        }
    }
}

const SNAPSHOT_EVERY: usize = 50;

fn cmd_optimize(
    config: &Path,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = RunConfig::from_path(config)?;
    let out_dir = out.unwrap_or_else(|| cfg.out_dir());
    let resume_cp = resume.as_deref().map(read_checkpoint).transpose()?;

    let model = cfg.model()?;
    let mat = cfg.material();
    let spec = cfg.problem_spec();
    let ba = BucklingAnalysis::new(model, mat.nu, cfg.lba_options())?;
    let mut opt = Optimizer::new(&spec, &ba, &mat);
    opt.grad = cfg.gradient_options();

    let boundary = match cfg.regularization.boundary {
        BoundaryRule::Renormalize => FilterBoundary::Renormalize,
        BoundaryRule::ZeroPad => FilterBoundary::ZeroPad,
    };
    let mut field = opt.initial_field(cfg.regularization.radius, boundary);
    info!(
        "optimize {}: {} design variables, {} levels, starting {}",
        ba.model.name,
        field.n_free(),
        ba.hier.num_levels(),
        resume_cp
            .as_ref()
            .map(|c| format!("from checkpoint at iteration {}", c.iteration))
            .unwrap_or_else(|| "fresh".into()),
    );

    let checkpoint_path = out_dir.join("run.checkpoint");
    let dims = ba.model.dims;
    let state = opt
        .run(&mut field, resume_cp, |rec, f, cp| {
            info!(
                "it {:>4}  p={:<4} beta={:<4} obj={:<10.4e} J={:<10.4e} f={:.4} m_nd={:.3} l1={} dx={:.2e}{}",
                rec.iteration,
                rec.p,
                rec.beta,
                rec.objective,
                rec.compliance,
                rec.volume,
                rec.m_nd,
                rec.lambdas
                    .first()
                    .map(|l| format!("{l:.4}"))
                    .unwrap_or_else(|| "-".into()),
                rec.dx_inf,
                if rec.bumped { "  [bump]" } else { "" },
            );
            write_checkpoint(&checkpoint_path, cp).map_err(io_of)?;
            if rec.iteration % SNAPSHOT_EVERY == 0 {
                let snap = out_dir.join(format!("design_{:06}.dens", rec.iteration));
                write_density(&snap, dims, &f.x_phys).map_err(io_of)?;
            }
            Ok(())
        })
        .map_err(|e| salvage(e, &out_dir))?;

    write_text(&out_dir.join("convergence.csv"), &convergence_csv(&state.history))?;
    write_text(&out_dir.join("timings.csv"), &timings_csv(&state.history))?;
    write_density(&out_dir.join("design_final.dens"), dims, &field.x_phys)?;
    write_vtk(
        &out_dir.join("design_final.vtk"),
        &ba.model.name,
        dims,
        ba.model.h,
        &field.x_phys,
        &[],
    )?;

    let mut report = Report::new(&format!("optimize {}", ba.model.name));
    if let Some(last) = state.history.last() {
        report
            .push_note(&format!(
                "iterations: {}\nstagnated: {}\nfinal objective = {:.6e}\nfinal compliance = {:.6e}\nfinal volume fraction = {:.4}\nfinal m_nd = {:.4}",
                state.history.len(),
                state.stagnated,
                last.objective,
                last.compliance,
                last.volume,
                last.m_nd,
            ))
            .push_lambdas("final window", &last.lambdas)
            .push_coalescence(&last.coalescence);
    }
    write_text(&out_dir.join("report.txt"), &report.render())?;
    info!(
        "finished after {} iterations; artifacts in {}",
        state.history.len(),
        out_dir.display()
    );
    Ok(())
}

fn io_of(e: ExportError) -> std::io::Error {
    match e {
        ExportError::Io(io) => io,
        other => std::io::Error::other(other.to_string()),
    }
}

/// An aborted run still leaves a restart point behind.
fn salvage(e: OptError, out_dir: &Path) -> CliError {
    match &e {
        OptError::AnalysisAborted { checkpoint, .. }
        | OptError::GradientAborted { checkpoint, .. } => {
            let path = out_dir.join("abort.checkpoint");
            if let Err(w) = write_checkpoint(&path, checkpoint) {
                warn!("could not write abort checkpoint: {w}");
            } else {
                info!("abort checkpoint written to {}", path.display());
            }
            CliError::Runtime(e.to_string())
        }
        OptError::Spec(_) | OptError::NonPositiveBlf(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

/// Load a density dump against a config, verifying the grid matches.
fn load_design(
    cfg: &RunConfig,
    path: &Path,
    black_white: bool,
) -> Result<(buckopt::geometry::Model, DesignField), CliError> {
    let model = cfg.model()?;
    let (dims, mut values) = read_density(path)?;
    if dims != model.dims {
        return Err(CliError::Config(format!(
            "density dump is {}x{}, config grid is {}x{}",
            dims.nelx, dims.nely, model.dims.nelx, model.dims.nely
        )));
    }
    if black_white {
        for v in &mut values {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    let mut field = cfg.design_field(&model);
    field.x_phys = values;
    Ok((model, field))
}

fn cmd_analyze(
    config: &Path,
    design: &Path,
    level: Option<usize>,
    bw: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = RunConfig::from_path(config)?;
    let out_dir = out.unwrap_or_else(|| cfg.out_dir());
    let levels = level.unwrap_or(cfg.discretization.levels);
    if levels == 0 {
        return Err(CliError::Config("--level must be at least 1".into()));
    }
    let (model, field) = load_design(&cfg, design, bw)?;
    let (e_k, e_s) = field.moduli(&cfg.material(), cfg.penal());

    let mut opts = cfg.lba_options();
    opts.levels = levels;
    let ba = BucklingAnalysis::new(model, cfg.material().nu, opts)?;
    let t0 = Instant::now();
    let res = ba.analyze(&e_k, &e_s)?;
    let wall = t0.elapsed().as_secs_f64();
    info!(
        "analyze {} at {} levels: lambda_1 = {:.6}, wall {:.2}s",
        ba.model.name,
        levels,
        res.lambdas.first().copied().unwrap_or(f64::NAN),
        wall
    );

    let mut report = Report::new(&format!(
        "analyze {} ({} levels{})",
        ba.model.name,
        levels,
        if bw { ", black-white" } else { "" }
    ));
    report.push_note(&format!(
        "compliance = {:.6e}\nvolume fraction = {:.4}\nm_nd = {:.4}",
        res.state.compliance,
        field.volume_fraction(),
        field.non_discreteness()
    ));
    report.push_lambdas("estimated", &res.lambdas);
    report.push_coalescence(&coalescence_measure(&res.lambdas, cfg.problem_spec().alpha));
    report.push_timings(&res.timings);

    // locality and level summaries on the requested run
    let modes = k_normalize(&res.modes, &res.state.k)?;
    let locality = locality_scores(
        &ba.asm,
        &e_k,
        &modes,
        &field.x_phys,
        &cfg.locality_options(bw),
    );
    report.push_locality(&locality);
    report.push_zetas(&zeta_per_level(&ba.hier, &res.state.k, &res.state.g));

    // direct single-level reference for the pairing and error sections
    if levels > 1 {
        let mut direct_opts = cfg.lba_options();
        direct_opts.levels = 1;
        let direct_ba = BucklingAnalysis::new(cfg.model()?, cfg.material().nu, direct_opts)?;
        let direct = direct_ba.analyze(&e_k, &e_s)?;
        let reference = k_normalize(&direct.modes, &res.state.k)?;
        let pairing = mac(&modes, &reference, &res.state.k)?;
        report.push_mac(&pairing);
        report.push_blf_errors(&blf_errors(&res.lambdas, &direct.lambdas, &pairing));
        report.push_note(&format!(
            "direct reference t_LBA = {:.4}s, speedup = {:.2}x",
            direct.timings.t_lba(),
            direct.timings.t_lba() / res.timings.t_lba().max(1e-12)
        ));
    }
    write_text(&out_dir.join("analysis_report.txt"), &report.render())?;

    let columns: Vec<DVector<f64>> = (0..modes.ncols())
        .map(|j| modes.column(j).clone_owned())
        .collect();
    let exports: Vec<ModeExport> = columns
        .iter()
        .enumerate()
        .map(|(j, c)| ModeExport {
            name: format!("mode_{:02}", j + 1),
            displacement: c,
            energy: &locality.energies[j],
        })
        .collect();
    write_vtk(
        &out_dir.join("modes.vtk"),
        &ba.model.name,
        ba.model.dims,
        ba.model.h,
        &field.x_phys,
        &exports,
    )?;
    info!("report and modes written to {}", out_dir.display());
    Ok(())
}

fn cmd_reinforce(config: &Path, design: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::from_path(config)?;
    let out_dir = out.unwrap_or_else(|| cfg.out_dir());
    let (model, field) = load_design(&cfg, design, false)?;
    let mat = cfg.material();
    let p = cfg.penal();
    let (e_k, e_s) = field.moduli(&mat, p);
    let ba = BucklingAnalysis::new(model, mat.nu, cfg.lba_options())?;
    let res = ba.analyze(&e_k, &e_s)?;
    let modes = k_normalize(&res.modes, &res.state.k)?;
    let locality = locality_scores(
        &ba.asm,
        &e_k,
        &modes,
        &field.x_phys,
        &cfg.locality_options(false),
    );

    let mut report = Report::new(&format!("reinforce {}", ba.model.name));
    report.push_locality(&locality);
    if locality.flagged.is_empty() {
        report.push_note("no localized modes flagged; design left unchanged");
        write_text(&out_dir.join("reinforce_report.txt"), &report.render())?;
        info!("no localized modes: nothing to reinforce");
        return Ok(());
    }

    let outcome = reinforce(&ba, &mat, p, &field, &locality, cfg.reinforce_radius())?;
    report.push_lambdas("before", &outcome.lambdas_before);
    report.push_lambdas("after", &outcome.lambdas_after);
    let mut deltas = String::from("## Relative BLF changes\n");
    for (i, d) in outcome.rel_delta.iter().enumerate() {
        let mark = if locality.flagged.contains(&i) {
            "  <- was localized"
        } else {
            ""
        };
        deltas.push_str(&format!("mode {:<2} delta = {d:+.4e}{mark}\n", i + 1));
    }
    report.push_note(&deltas);
    report.push_note(&format!(
        "volume fraction {:.4} -> {:.4} ({:+.2}%)",
        outcome.volume_before,
        outcome.volume_after,
        100.0 * (outcome.volume_after - outcome.volume_before) / outcome.volume_before
    ));
    write_text(&out_dir.join("reinforce_report.txt"), &report.render())?;
    write_density(
        &out_dir.join("design_reinforced.dens"),
        ba.model.dims,
        &outcome.x_phys,
    )?;
    info!(
        "reinforced {} flagged mode(s); artifacts in {}",
        locality.flagged.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_export(config: &Path, design: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::from_path(config)?;
    let (model, field) = load_design(&cfg, design, false)?;
    let target = out.unwrap_or_else(|| cfg.out_dir().join("design.vtk"));
    write_vtk(&target, &model.name, model.dims, model.h, &field.x_phys, &[])?;
    info!("wrote {}", target.display());
    Ok(())
}

fn cmd_selftest() -> Result<(), CliError> {
    let mut failures = 0usize;
    let mut check = |name: &str, outcome: Result<(), String>| match outcome {
        Ok(()) => println!("PASS {name}"),
        Err(m) => {
            failures += 1;
            println!("FAIL {name}: {m}");
        }
    };

    check("kaczmarz sweep equals gauss-seidel on the normal equations", {
        selftest_kaczmarz()
    });
    check("single-level eigensolve matches the dense oracle", {
        selftest_direct()
    });
    check("two-level pipeline stays within 2% of the oracle", {
        selftest_multilevel()
    });
    check("density dump round-trips bit-exactly", selftest_density());

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{failures} selftest check(s) failed")))
    }
}

fn selftest_kaczmarz() -> Result<(), String> {
    use nalgebra::DMatrix;
    use rand::{rngs::StdRng, RngExt, SeedableRng};
    let n = 10;
    let mut rng = StdRng::seed_from_u64(17);
    let a = DMatrix::from_fn(n, n, |i, j| {
        let v: f64 = rng.random::<f64>() - 0.5;
        if i == j {
            v + 3.0
        } else {
            v
        }
    });
    let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
    let mut coo = nalgebra_sparse::CooMatrix::new(n, n);
    for i in 0..n {
        for j in 0..n {
            coo.push(i, j, a[(i, j)]);
        }
    }
    let asp = nalgebra_sparse::CsrMatrix::from(&coo);
    let inv = row_norms_inv(&asp);

    // reference: one forward Gauss-Seidel sweep on (A Aᵀ) y = b, x = Aᵀ y
    let aat = &a * a.transpose();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..n {
            if j != i {
                s -= aat[(i, j)] * y[j];
            }
        }
        y[i] = s / aat[(i, i)];
    }
    let x_ref = a.transpose() * &y;

    let mut x = DVector::zeros(n);
    kaczmarz_sweep(&asp, Some(&b), &mut x, &inv, false);
    let err = (&x - &x_ref).amax();
    if err <= 1e-12 {
        Ok(())
    } else {
        Err(format!("difference {err:.3e} exceeds 1e-12"))
    }
}

fn selftest_fixture() -> Result<(BucklingAnalysis, Vec<f64>, Vec<f64>), String> {
    use buckopt::design::FilterBoundary;
    use buckopt::fem::Material;
    use buckopt::geometry::Model;
    let model = Model::compressed_cantilever(16, 8, 0.1).map_err(|e| e.to_string())?;
    let mut field = model.design_field(1.8, FilterBoundary::Renormalize);
    field.set_uniform(0.7);
    field.regularize(2.0);
    let (e_k, e_s) = field.moduli(&Material::default(), 3.0);
    let ba = BucklingAnalysis::new(model, 0.3, LbaOptions::new(2, 4)).map_err(|e| e.to_string())?;
    Ok((ba, e_k, e_s))
}

fn oracle_lambda(res: &LbaResult) -> Result<f64, String> {
    let pairs = buckopt::eigen::dense_oracle(&res.state.k, &res.state.g, 1)
        .map_err(|e| e.to_string())?;
    pairs
        .values
        .first()
        .copied()
        .ok_or_else(|| "oracle returned no eigenvalues".into())
}

fn selftest_direct() -> Result<(), String> {
    let (ba, e_k, e_s) = selftest_fixture()?;
    let mut opts = ba.opts.clone();
    opts.levels = 1;
    let direct = BucklingAnalysis::new(ba.model.clone(), 0.3, opts).map_err(|e| e.to_string())?;
    let res = direct.analyze(&e_k, &e_s).map_err(|e| e.to_string())?;
    let oracle = oracle_lambda(&res)?;
    let rel = (1.0 - res.lambdas[0] / oracle).abs();
    if rel <= 1e-6 {
        Ok(())
    } else {
        Err(format!("relative error {rel:.3e} exceeds 1e-6"))
    }
}

fn selftest_multilevel() -> Result<(), String> {
    let (ba, e_k, e_s) = selftest_fixture()?;
    let res = ba.analyze(&e_k, &e_s).map_err(|e| e.to_string())?;
    let oracle = oracle_lambda(&res)?;
    let rel = (1.0 - res.lambdas[0] / oracle).abs();
    if rel <= 0.02 {
        Ok(())
    } else {
        Err(format!("relative error {rel:.3e} exceeds 2%"))
    }
}

fn selftest_density() -> Result<(), String> {
    use buckopt::grid::Dims;
    let dims = Dims::new(4, 3);
    let vals: Vec<f64> = (0..12).map(|i| ((i * 37 % 11) as f64) / 11.0).collect();
    let dir = std::env::temp_dir().join(format!("buckopt-selftest-{}", std::process::id()));
    let path = dir.join("probe.dens");
    write_density(&path, dims, &vals).map_err(|e| e.to_string())?;
    let (d2, v2) = read_density(&path).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_file(&path);
    let _ = std::fs::remove_dir(&dir);
    if d2 != dims {
        return Err("dims changed".into());
    }
    for (a, b) in vals.iter().zip(&v2) {
        if a.to_bits() != b.to_bits() {
            return Err("values changed".into());
        }
    }
    Ok(())
}
