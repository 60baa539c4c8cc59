//! Command-line driver: run configuration, case execution, and output
//! serialization (CSV tables plus a legacy VTK dump for visualization).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::mesh::{DomainSpec, GridComplex};
use crate::ops::{BoundaryData, Operators};
use crate::solver::{momentum_residual, solve_steady, FlowState, SolverConfig};
use crate::verify::{
    compare_centerlines, kovasznay_exact, l2_error, run_convergence, streamfunction,
    streamfunction_at, wake_domain, CavityReference, ConvergenceReport, KovasznayParams,
};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MIMETIC_NS_OUTDIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Case {
    Kovasznay,
    Cavity,
    Custom,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Kovasznay => "kovasznay",
            Case::Cavity => "cavity",
            Case::Custom => "custom",
        })
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kovasznay" => Ok(Case::Kovasznay),
            "cavity" => Ok(Case::Cavity),
            "custom" => Ok(Case::Custom),
            other => Err(Error::Config(format!("unknown case '{other}'"))),
        }
    }
}

/// Fully resolved run configuration: defaults, then config-file values,
/// then command-line flags, later sources winning.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: Case,
    pub domain: (f64, f64, f64, f64),
    pub nel_x: usize,
    pub nel_y: usize,
    pub order: usize,
    pub nu: f64,
    pub re: f64,
    pub relaxation: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub stokes_only: bool,
    pub lattice: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn defaults(case: Case) -> Self {
        let domain = match case {
            Case::Kovasznay => {
                let d = wake_domain(1, 1, 1);
                (d.x_range.0, d.x_range.1, d.y_range.0, d.y_range.1)
            }
            _ => (0.0, 1.0, 0.0, 1.0),
        };
        let (nel, order) = match case {
            Case::Kovasznay => (2, 6),
            Case::Cavity => (4, 6),
            Case::Custom => (2, 2),
        };
        Self {
            case,
            domain,
            nel_x: nel,
            nel_y: nel,
            order,
            nu: 0.025,
            re: 1000.0,
            relaxation: 0.7,
            tolerance: 1e-10,
            max_iterations: 1000,
            stokes_only: false,
            lattice: 101,
            out_dir: default_out_dir(),
        }
    }

    /// Serializes as the flat key=value config format.
    pub fn serialize(&self) -> String {
        let (x0, x1, y0, y1) = self.domain;
        format!(
            "case={}\nx0={x0:.16e}\nx1={x1:.16e}\ny0={y0:.16e}\ny1={y1:.16e}\n\
             nel_x={}\nnel_y={}\norder={}\nnu={:.16e}\nre={:.16e}\n\
             relaxation={:.16e}\ntolerance={:.16e}\nmax_iterations={}\n\
             stokes_only={}\nlattice={}\nout_dir={}\n",
            self.case,
            self.nel_x,
            self.nel_y,
            self.order,
            self.nu,
            self.re,
            self.relaxation,
            self.tolerance,
            self.max_iterations,
            self.stokes_only,
            self.lattice,
            self.out_dir.display(),
        )
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        match key {
            "case" => self.case = value.parse()?,
            "x0" => self.domain.0 = value.parse().map_err(|_| bad("x0"))?,
            "x1" => self.domain.1 = value.parse().map_err(|_| bad("x1"))?,
            "y0" => self.domain.2 = value.parse().map_err(|_| bad("y0"))?,
            "y1" => self.domain.3 = value.parse().map_err(|_| bad("y1"))?,
            "nel_x" => self.nel_x = value.parse().map_err(|_| bad("nel_x"))?,
            "nel_y" => self.nel_y = value.parse().map_err(|_| bad("nel_y"))?,
            "order" => self.order = value.parse().map_err(|_| bad("order"))?,
            "nu" => self.nu = value.parse().map_err(|_| bad("nu"))?,
            "re" => self.re = value.parse().map_err(|_| bad("re"))?,
            "relaxation" => self.relaxation = value.parse().map_err(|_| bad("relaxation"))?,
            "tolerance" => self.tolerance = value.parse().map_err(|_| bad("tolerance"))?,
            "max_iterations" => {
                self.max_iterations = value.parse().map_err(|_| bad("max_iterations"))?
            }
            "stokes_only" => self.stokes_only = value.parse().map_err(|_| bad("stokes_only"))?,
            "lattice" => self.lattice = value.parse().map_err(|_| bad("lattice"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.nel_x == 0 || self.nel_y == 0 {
            return fail("element counts must be at least 1".into());
        }
        if self.order == 0 {
            return fail("polynomial order must be at least 1".into());
        }
        if !(self.domain.1 > self.domain.0) || !(self.domain.3 > self.domain.2) {
            return fail(format!("degenerate domain {:?}", self.domain));
        }
        if !(self.nu > 0.0) {
            return fail(format!("viscosity must be positive, got {}", self.nu));
        }
        if !(self.re > 0.0) {
            return fail(format!("Reynolds number must be positive, got {}", self.re));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return fail(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            ));
        }
        if !(self.tolerance > 0.0) {
            return fail(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be at least 1".into());
        }
        if self.lattice < 2 {
            return fail("plot lattice needs at least 2 points per side".into());
        }
        Ok(())
    }
}

/// Parses raw key=value text (one pair per line, # comments) into a map.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Parses serialized config text into a RunConfig (config-file semantics:
/// values land on top of the case's defaults).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let map = parse_config_text(text)?;
    let case: Case = map
        .get("case")
        .ok_or_else(|| Error::Config("config file does not name a case".into()))?
        .parse()?;
    let mut cfg = RunConfig::defaults(case);
    for (k, v) in &map {
        cfg.apply_key(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Parser)]
#[command(
    name = "mimetic-ns",
    about = "Steady incompressible flow on structure-preserving staggered spectral elements",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single case and write field outputs.
    Run(RunArgs),
    /// Run a wake-flow convergence study and write the error table.
    Convergence(ConvergenceArgs),
    /// Solve the lid-driven cavity benchmark and score the centerlines.
    CavityBench(CavityArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Picard relaxation factor in (0, 1].
    #[arg(long)]
    relaxation: Option<f64>,
    /// Relative update tolerance for the Picard loop.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Iteration cap for the Picard loop.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Drop the convective term (single linear solve).
    #[arg(long)]
    stokes_only: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Which case to solve.
    #[arg(long, value_enum)]
    case: Option<Case>,
    /// Config file with key=value lines; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Elements per direction.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
    nel: Option<Vec<usize>>,
    /// Polynomial order of the elements.
    #[arg(long)]
    order: Option<usize>,
    /// Kinematic viscosity (kovasznay and custom cases).
    #[arg(long)]
    nu: Option<f64>,
    /// Reynolds number (cavity case).
    #[arg(long)]
    re: Option<f64>,
    /// Domain bounds (custom case).
    #[arg(long, num_args = 4, value_names = ["X0", "X1", "Y0", "Y1"])]
    domain: Option<Vec<f64>>,
    /// Plot lattice points per side.
    #[arg(long)]
    lattice: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Canonical study: "p" (order sweep) or "h" (mesh sweep).
    #[arg(long, default_value = "p")]
    mode: String,
    /// Kinematic viscosity; defaults to 0.025 for the p study and 0.1 for
    /// the h study.
    #[arg(long)]
    nu: Option<f64>,
    /// Explicit sweep entries like "2x2x4,4x4x4" overriding the mode.
    #[arg(long)]
    rows: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct CavityArgs {
    /// Reynolds number.
    #[arg(long, default_value_t = 1000.0)]
    re: f64,
    /// Elements per direction.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"], default_values_t = [4, 4])]
    nel: Vec<usize>,
    /// Polynomial order of the elements.
    #[arg(long, default_value_t = 6)]
    order: usize,
    /// Plot lattice points per side.
    #[arg(long, default_value_t = 101)]
    lattice: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => 3,
                Error::Config(_) | Error::InvalidParameter(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Convergence(args) => cmd_convergence(args),
        Command::CavityBench(args) => cmd_cavity(args),
    }
}

fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file_map = match &args.config {
        Some(path) => parse_config_text(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let case = match (args.case, file_map.get("case")) {
        (Some(case), _) => case,
        (None, Some(name)) => name.parse()?,
        (None, None) => {
            return Err(Error::Config(
                "no case given: pass --case or a config file naming one".into(),
            ))
        }
    };
    let mut cfg = RunConfig::defaults(case);
    for (k, v) in &file_map {
        cfg.apply_key(k, v)?;
    }
    cfg.case = case;
    if let Some(nel) = &args.nel {
        cfg.nel_x = nel[0];
        cfg.nel_y = nel[1];
    }
    if let Some(order) = args.order {
        cfg.order = order;
    }
    if let Some(nu) = args.nu {
        cfg.nu = nu;
    }
    if let Some(re) = args.re {
        cfg.re = re;
    }
    if let Some(domain) = &args.domain {
        cfg.domain = (domain[0], domain[1], domain[2], domain[3]);
    }
    if let Some(lattice) = args.lattice {
        cfg.lattice = lattice;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(relaxation) = args.solver.relaxation {
        cfg.relaxation = relaxation;
    }
    if let Some(tolerance) = args.solver.tolerance {
        cfg.tolerance = tolerance;
    }
    if let Some(max_iterations) = args.solver.max_iterations {
        cfg.max_iterations = max_iterations;
    }
    if args.solver.stokes_only {
        cfg.stokes_only = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn solver_config(cfg: &RunConfig, viscosity: f64) -> SolverConfig {
    SolverConfig {
        viscosity,
        relaxation: cfg.relaxation,
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
        stokes_only: cfg.stokes_only,
        initial_guess: None,
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = resolve_run_config(&args)?;
    let spec = match cfg.case {
        Case::Kovasznay => wake_domain(cfg.nel_x, cfg.nel_y, cfg.order),
        Case::Cavity => DomainSpec::unit_square(cfg.nel_x, cfg.nel_y, cfg.order),
        Case::Custom => DomainSpec {
            x_range: (cfg.domain.0, cfg.domain.1),
            y_range: (cfg.domain.2, cfg.domain.3),
            nel_x: cfg.nel_x,
            nel_y: cfg.nel_y,
            order: cfg.order,
        },
    };
    let ops = Operators::new(GridComplex::build(spec)?)?;
    let (bc, mu) = case_setup(&cfg)?;
    let state = solve_steady(&ops, &bc, solver_config(&cfg, mu))?;
    let mass = state.mass_history.iter().copied().fold(0.0f64, f64::max);
    let momentum = momentum_residual(&ops, &bc, mu, &state);
    println!(
        "case={} nel={}x{} order={} dofs={}",
        cfg.case,
        cfg.nel_x,
        cfg.nel_y,
        cfg.order,
        ops.grid.n_edges() + ops.grid.n_cells()
    );
    println!(
        "iterations={} converged={} mass_residual={mass:.3e} momentum_residual={momentum:.3e}",
        state.iterations, state.converged
    );
    if cfg.case == Case::Kovasznay {
        let params = KovasznayParams::new(mu)?;
        let (err_v, err_p) = l2_error(
            &ops,
            &state,
            |x, y| {
                let (u, v, _) = kovasznay_exact(x, y, &params);
                (u, v)
            },
            |x, y| kovasznay_exact(x, y, &params).2,
        );
        println!("err_v={err_v:.8e} err_p={err_p:.8e}");
    }
    write_fields(&ops, &state, cfg.lattice, &cfg.out_dir)?;
    println!(
        "wrote {}",
        ["fields.csv", "cochains.csv", "fields.vtk"]
            .map(|f| cfg.out_dir.join(f).display().to_string())
            .join(", ")
    );
    Ok(())
}

fn case_setup(cfg: &RunConfig) -> Result<(BoundaryData, f64)> {
    Ok(match cfg.case {
        Case::Kovasznay => {
            let params = KovasznayParams::new(cfg.nu)?;
            (
                BoundaryData::from_field(move |x, y| {
                    let (u, v, _) = kovasznay_exact(x, y, &params);
                    (u, v)
                }),
                cfg.nu,
            )
        }
        Case::Cavity => (crate::verify::cavity_boundary(), 1.0 / cfg.re),
        Case::Custom => (BoundaryData::from_field(|_, _| (1.0, 0.0)), cfg.nu),
    })
}

fn parse_sweep(rows: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut sweep = Vec::new();
    for entry in rows.split(',') {
        let parts: Vec<_> = entry.trim().split('x').collect();
        let bad = || Error::Config(format!("bad sweep entry '{entry}', want NXxNYxP"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        sweep.push((nums[0], nums[1], nums[2]));
    }
    Ok(sweep)
}

fn cmd_convergence(args: ConvergenceArgs) -> Result<()> {
    let (sweep, default_nu): (Vec<(usize, usize, usize)>, f64) = match &args.rows {
        Some(rows) => (parse_sweep(rows)?, 0.025),
        None => match args.mode.as_str() {
            "p" => (
                [2, 4, 6, 8, 10].iter().map(|&p| (2, 2, p)).collect(),
                0.025,
            ),
            "h" => ([1, 2, 4, 8].iter().map(|&n| (n, n, 2)).collect(), 0.1),
            other => {
                return Err(Error::Config(format!(
                    "unknown convergence mode '{other}', want p or h"
                )))
            }
        },
    };
    let nu = args.nu.unwrap_or(default_nu);
    let template = SolverConfig {
        viscosity: nu,
        relaxation: args.solver.relaxation.unwrap_or(0.7),
        tolerance: args.solver.tolerance.unwrap_or(1e-10),
        max_iterations: args.solver.max_iterations.unwrap_or(1000),
        stokes_only: args.solver.stokes_only,
        initial_guess: None,
    };
    let report = run_convergence(nu, &sweep, &template)?;
    let out_dir = args.out.unwrap_or_else(default_out_dir);
    let path = out_dir.join("convergence.csv");
    write_convergence(&report, &path)?;
    for row in &report.rows {
        println!(
            "nel={}x{} p={} dofs={} err_v={:.8e} err_p={:.8e} rate_v={} rate_p={} converged={}",
            row.nel_x,
            row.nel_y,
            row.order,
            row.dofs,
            row.err_v,
            row.err_p,
            row.rate_v.map_or("-".into(), |r| format!("{r:.3}")),
            row.rate_p.map_or("-".into(), |r| format!("{r:.3}")),
            row.converged,
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_cavity(args: CavityArgs) -> Result<()> {
    if !(args.re > 0.0) {
        return Err(Error::Config(format!(
            "Reynolds number must be positive, got {}",
            args.re
        )));
    }
    let reference = CavityReference::shipped()?;
    let spec = DomainSpec::unit_square(args.nel[0], args.nel[1], args.order);
    let ops = Operators::new(GridComplex::build(spec)?)?;
    let bc = crate::verify::cavity_boundary();
    let template = SolverConfig {
        viscosity: 1.0 / args.re,
        relaxation: args.solver.relaxation.unwrap_or(0.7),
        tolerance: args.solver.tolerance.unwrap_or(1e-10),
        max_iterations: args.solver.max_iterations.unwrap_or(3000),
        stokes_only: args.solver.stokes_only,
        initial_guess: None,
    };
    let state = solve_steady(&ops, &bc, template)?;
    let mass = state.mass_history.iter().copied().fold(0.0f64, f64::max);
    let momentum = momentum_residual(&ops, &bc, 1.0 / args.re, &state);
    let run = compare_centerlines(&ops, state, &reference);
    println!(
        "re={} nel={}x{} order={} iterations={} converged={}",
        args.re,
        args.nel[0],
        args.nel[1],
        args.order,
        run.state.iterations,
        run.state.converged
    );
    println!("mass_residual={mass:.3e} momentum_residual={momentum:.3e}");
    println!(
        "max_deviation={:.6e} rms_deviation={:.6e}",
        run.max_deviation, run.rms_deviation
    );
    let out_dir = args.out.unwrap_or_else(default_out_dir);
    write_centerlines(&run, &reference, &out_dir)?;
    write_fields(&ops, &run.state, args.lattice, &out_dir)?;
    println!(
        "wrote {}",
        ["centerlines.csv", "fields.csv", "cochains.csv", "fields.vtk"]
            .map(|f| out_dir.join(f).display().to_string())
            .join(", ")
    );
    Ok(())
}

/// Writes the plot-lattice field CSV, the raw cochain dump, and a legacy
/// VTK structured-points file. Output bytes are a pure function of the
/// state and lattice size.
pub fn write_fields(
    ops: &Operators,
    state: &FlowState,
    lattice: usize,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = &ops.grid;
    let psi = streamfunction(ops, &state.velocity.values)?;
    let (x0, x1) = g.spec.x_range;
    let (y0, y1) = g.spec.y_range;
    let n = lattice;
    let step = |a: f64, b: f64, k: usize| a + (b - a) * (k as f64) / ((n - 1) as f64);

    let mut csv = String::from("x,y,u,v,p,psi\n");
    let mut pressure = Vec::with_capacity(n * n);
    let mut stream = Vec::with_capacity(n * n);
    let mut velocity = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (step(x0, x1, i), step(y0, y1, j));
            let (u, v) = ops.reconstruct_velocity(&state.velocity.values, x, y);
            let p = ops.reconstruct_pressure(&state.pressure.values, x, y);
            let s = streamfunction_at(ops, &state.velocity.values, &psi, x, y);
            csv.push_str(&format!(
                "{x:.16e},{y:.16e},{u:.16e},{v:.16e},{p:.16e},{s:.16e}\n"
            ));
            pressure.push(p);
            stream.push(s);
            velocity.push((u, v));
        }
    }
    fs::write(dir.join("fields.csv"), csv)?;

    let mut dump = String::from("family,i,j,value\n");
    for j in 0..g.ny() {
        for i in 0..=g.nx() {
            let v = state.velocity.values[g.edge_idx_v(i, j)];
            dump.push_str(&format!("edge_v,{i},{j},{v:.16e}\n"));
        }
    }
    for j in 0..=g.ny() {
        for i in 0..g.nx() {
            let v = state.velocity.values[g.edge_idx_h(i, j)];
            dump.push_str(&format!("edge_h,{i},{j},{v:.16e}\n"));
        }
    }
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let v = state.pressure.values[g.cell_idx(i, j)];
            dump.push_str(&format!("cell,{i},{j},{v:.16e}\n"));
        }
    }
    fs::write(dir.join("cochains.csv"), dump)?;

    let mut vtk = String::new();
    vtk.push_str("# vtk DataFile Version 3.0\n");
    vtk.push_str("steady incompressible flow fields\n");
    vtk.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    vtk.push_str(&format!("DIMENSIONS {n} {n} 1\n"));
    vtk.push_str(&format!("ORIGIN {x0:.16e} {y0:.16e} 0\n"));
    vtk.push_str(&format!(
        "SPACING {:.16e} {:.16e} 1\n",
        (x1 - x0) / ((n - 1) as f64),
        (y1 - y0) / ((n - 1) as f64)
    ));
    vtk.push_str(&format!("POINT_DATA {}\n", n * n));
    vtk.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for p in &pressure {
        vtk.push_str(&format!("{p:.16e}\n"));
    }
    vtk.push_str("SCALARS streamfunction double 1\nLOOKUP_TABLE default\n");
    for s in &stream {
        vtk.push_str(&format!("{s:.16e}\n"));
    }
    vtk.push_str("VECTORS velocity double\n");
    for (u, v) in &velocity {
        vtk.push_str(&format!("{u:.16e} {v:.16e} 0\n"));
    }
    fs::write(dir.join("fields.vtk"), vtk)?;
    Ok(())
}

/// Writes the convergence table as CSV; rates that do not exist (first row,
/// order changes) stay blank.
pub fn write_convergence(report: &ConvergenceReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Config("refusing to write an empty report".into()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut csv = String::from("nel_x,nel_y,p,dofs,err_v,err_p,rate_v,rate_p,seconds\n");
    for r in &report.rows {
        let fmt_rate = |rate: Option<f64>| rate.map_or(String::new(), |v| format!("{v:.16e}"));
        csv.push_str(&format!(
            "{},{},{},{},{:.16e},{:.16e},{},{},{:.16e}\n",
            r.nel_x,
            r.nel_y,
            r.order,
            r.dofs,
            r.err_v,
            r.err_p,
            fmt_rate(r.rate_v),
            fmt_rate(r.rate_p),
            r.seconds,
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}

fn write_centerlines(
    run: &crate::verify::CavityRun,
    reference: &CavityReference,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("section,coordinate,reference,computed\n");
    for ((c, r), (_, s)) in reference.u_stations.iter().zip(&run.u_centerline) {
        csv.push_str(&format!("u,{c:.16e},{r:.16e},{s:.16e}\n"));
    }
    for ((c, r), (_, s)) in reference.v_stations.iter().zip(&run.v_centerline) {
        csv.push_str(&format!("v,{c:.16e},{r:.16e},{s:.16e}\n"));
    }
    fs::write(dir.join("centerlines.csv"), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn config_defaults_round_trip() {
        for case in [Case::Kovasznay, Case::Cavity, Case::Custom] {
            let cfg = RunConfig::defaults(case);
            let back = parse_config(&cfg.serialize()).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn config_rejects_junk() {
        assert!(parse_config("case=nonsense\n").is_err());
        assert!(parse_config("order=3\n").is_err());
        assert!(parse_config("case=cavity\nwhatever=1\n").is_err());
        assert!(parse_config("case=cavity\norder\n").is_err());
        assert!(parse_config("case=cavity\norder=0\n").is_err());
        assert!(parse_config("case=cavity\nnu=-1\n").is_err());
    }

    #[test]
    fn config_comments_and_blanks_are_ignored() {
        let cfg = parse_config("# a comment\n\ncase=cavity\n  order = 3 \n").unwrap();
        assert_eq!(cfg.case, Case::Cavity);
        assert_eq!(cfg.order, 3);
        // Untouched keys keep the case defaults.
        assert_eq!(cfg.nel_x, 4);
    }

    #[test]
    fn sweep_entries_parse() {
        assert_eq!(parse_sweep("2x2x4").unwrap(), vec![(2, 2, 4)]);
        assert_eq!(
            parse_sweep("1x1x2, 8x4x3").unwrap(),
            vec![(1, 1, 2), (8, 4, 3)]
        );
        assert!(parse_sweep("2x2").is_err());
        assert!(parse_sweep("axbxc").is_err());
    }

    proptest! {
        #[test]
        fn config_round_trips(
            case_id in 0usize..3,
            x0 in -2.0f64..0.0, dx in 0.5f64..3.0,
            y0 in -2.0f64..0.0, dy in 0.5f64..3.0,
            nel_x in 1usize..9, nel_y in 1usize..9,
            order in 1usize..12,
            nu in 1e-4f64..10.0,
            re in 1.0f64..5000.0,
            relaxation in 0.05f64..1.0,
            tolerance in 1e-14f64..1e-2,
            max_iterations in 1usize..5000,
            stokes_only in proptest::bool::ANY,
            lattice in 2usize..300,
            dir in "[a-z][a-z0-9_/]{0,20}",
        ) {
            let cfg = RunConfig {
                case: [Case::Kovasznay, Case::Cavity, Case::Custom][case_id],
                domain: (x0, x0 + dx, y0, y0 + dy),
                nel_x, nel_y, order, nu, re,
                relaxation, tolerance, max_iterations, stokes_only, lattice,
                out_dir: PathBuf::from(dir),
            };
            let back = parse_config(&cfg.serialize()).unwrap();
            prop_assert_eq!(cfg, back);
        }
    }
}
