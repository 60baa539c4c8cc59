//! Exact solutions, error norms, convergence studies and the cavity
//! benchmark.

use std::f64::consts::PI;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::la;
use crate::mesh::{DomainSpec, GridComplex};
use crate::ops::{BoundaryData, Operators};
use crate::poly::gauss_nodes;
use crate::solver::{solve_steady, FlowState, SolverConfig};
use crate::{Error, Result};

/// Steady wake flow behind a periodic grid of rods: a closed-form solution
/// of the incompressible equations used for convergence studies.
#[derive(Debug, Clone, Copy)]
pub struct KovasznayParams {
    pub nu: f64,
    pub lambda: f64,
}

impl KovasznayParams {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "viscosity must be positive, got {nu}"
            )));
        }
        let lambda = 0.5 / nu - (0.25 / (nu * nu) + 4.0 * PI * PI).sqrt();
        Ok(Self { nu, lambda })
    }
}

/// Exact wake-flow fields at a point.
pub fn kovasznay_exact(x: f64, y: f64, params: &KovasznayParams) -> (f64, f64, f64) {
    let l = params.lambda;
    let e = (l * x).exp();
    (
        1.0 - e * (2.0 * PI * y).cos(),
        l / (2.0 * PI) * e * (2.0 * PI * y).sin(),
        0.5 * (1.0 - (2.0 * l * x).exp()),
    )
}

/// The computational box for the wake flow: one wake period in y.
pub fn wake_domain(nel_x: usize, nel_y: usize, order: usize) -> DomainSpec {
    DomainSpec {
        x_range: (-0.5, 1.0),
        y_range: (-0.5, 1.5),
        nel_x,
        nel_y,
        order,
    }
}

/// L2 field errors of a state against exact velocity and pressure fields.
/// Pressure is compared after aligning means, since it is only determined up
/// to a constant. Quadrature is three orders above the basis, per cell.
pub fn l2_error(
    ops: &Operators,
    state: &FlowState,
    exact_uv: impl Fn(f64, f64) -> (f64, f64),
    exact_p: impl Fn(f64, f64) -> f64,
) -> (f64, f64) {
    let g = &ops.grid;
    // At least three orders above the basis, and enough points to resolve
    // smooth trigonometric exact fields even on coarse single-element cells.
    let rule = gauss_nodes((g.order() + 3).max(16)).expect("bounded rule size");
    let mut err_v2 = 0.0;
    let mut diff_p = 0.0;
    let mut area = 0.0;
    // First pass: velocity error and the pressure mean offset.
    let mut points = Vec::new();
    for c in 0..g.n_cells() {
        let (x0, x1, y0, y1) = g.cell_bounds(c);
        let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
        for (&tx, &wx) in rule.nodes.iter().zip(&rule.weights) {
            for (&ty, &wy) in rule.nodes.iter().zip(&rule.weights) {
                let x = x0 + (tx + 1.0) * hx;
                let y = y0 + (ty + 1.0) * hy;
                let w = wx * wy * hx * hy;
                let (uh, vh) = ops.reconstruct_velocity(&state.velocity.values, x, y);
                let (ue, ve) = exact_uv(x, y);
                err_v2 += w * ((uh - ue).powi(2) + (vh - ve).powi(2));
                let ph = ops.reconstruct_pressure(&state.pressure.values, x, y);
                let pe = exact_p(x, y);
                diff_p += w * (ph - pe);
                area += w;
                points.push((x, y, w, ph - pe));
            }
        }
    }
    let offset = diff_p / area;
    let err_p2: f64 = points
        .iter()
        .map(|&(_, _, w, d)| w * (d - offset) * (d - offset))
        .sum();
    (err_v2.sqrt(), err_p2.sqrt())
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub nel_x: usize,
    pub nel_y: usize,
    pub order: usize,
    pub dofs: usize,
    pub err_v: f64,
    pub err_p: f64,
    /// Present only for h-refinement rows sharing the previous row's order.
    pub rate_v: Option<f64>,
    pub rate_p: Option<f64>,
    pub seconds: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub nu: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Runs the wake-flow study over a sweep of (nel_x, nel_y, order) entries.
/// A row whose nonlinear iteration fails is flagged and the study continues;
/// anything else is propagated.
pub fn run_convergence(
    nu: f64,
    sweep: &[(usize, usize, usize)],
    template: &SolverConfig,
) -> Result<ConvergenceReport> {
    if sweep.is_empty() {
        return Err(Error::InvalidParameter("empty convergence sweep".into()));
    }
    let params = KovasznayParams::new(nu)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &(nel_x, nel_y, order) in sweep {
        let start = Instant::now();
        let grid = GridComplex::build(wake_domain(nel_x, nel_y, order))?;
        let ops = Operators::new(grid)?;
        let bc = BoundaryData::from_field(move |x, y| {
            let (u, v, _) = kovasznay_exact(x, y, &params);
            (u, v)
        });
        let cfg = SolverConfig {
            viscosity: nu,
            ..template.clone()
        };
        let dofs = ops.grid.n_edges() + ops.grid.n_cells();
        let row = match solve_steady(&ops, &bc, cfg) {
            Ok(state) => {
                let (err_v, err_p) = l2_error(
                    &ops,
                    &state,
                    |x, y| {
                        let (u, v, _) = kovasznay_exact(x, y, &params);
                        (u, v)
                    },
                    |x, y| kovasznay_exact(x, y, &params).2,
                );
                ConvergenceRow {
                    nel_x,
                    nel_y,
                    order,
                    dofs,
                    err_v,
                    err_p,
                    rate_v: None,
                    rate_p: None,
                    seconds: start.elapsed().as_secs_f64(),
                    converged: true,
                    iterations: state.iterations,
                }
            }
            Err(Error::NonlinearSolve(_)) => ConvergenceRow {
                nel_x,
                nel_y,
                order,
                dofs,
                err_v: f64::NAN,
                err_p: f64::NAN,
                rate_v: None,
                rate_p: None,
                seconds: start.elapsed().as_secs_f64(),
                converged: false,
                iterations: 0,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    // Rates exist only between consecutive h-refinement rows of equal order.
    for k in 1..rows.len() {
        let (prev, cur) = (rows[k - 1].clone(), &mut rows[k]);
        if prev.order == cur.order
            && prev.nel_x != cur.nel_x
            && prev.converged
            && cur.converged
        {
            let hr = (prev.nel_x as f64).recip() / (cur.nel_x as f64).recip();
            cur.rate_v = Some((prev.err_v / cur.err_v).ln() / hr.ln());
            cur.rate_p = Some((prev.err_p / cur.err_p).ln() / hr.ln());
        }
    }
    Ok(ConvergenceReport { nu, rows })
}

/// Reference centerline profiles for the cavity benchmark, loaded from the
/// data file shipped with the repository (see that file's header for sourcement
/// and transformation notes).
#[derive(Debug, Clone)]
pub struct CavityReference {
    /// (y, u(0.5, y)) stations.
    pub u_stations: Vec<(f64, f64)>,
    /// (x, v(x, 0.5)) stations.
    pub v_stations: Vec<(f64, f64)>,
}

const REFERENCE_TEXT: &str = include_str!("../data/cavity_re1000_centerlines.txt");
const REFERENCE_SHA256: &str = "8bf614e7351dae1c6bf43b431a93dc1bf79ba48f921aa7665f9406944cd4286e";

impl CavityReference {
    /// Parses reference text after verifying its checksum against the pinned
    /// digest.
    pub fn from_text(text: &str, expected_sha256: &str) -> Result<Self> {
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        if hex != expected_sha256 {
            return Err(Error::ReferenceData(format!(
                "reference data checksum mismatch: {hex}"
            )));
        }
        let mut u_stations = Vec::new();
        let mut v_stations = Vec::new();
        for (lno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let bad = || Error::ReferenceData(format!("malformed reference line {}", lno + 1));
            let section = it.next().ok_or_else(bad)?;
            let coord: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let value: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&coord) {
                return Err(Error::ReferenceData(format!(
                    "reference coordinate {coord} outside the unit interval"
                )));
            }
            match section {
                "u" => u_stations.push((coord, value)),
                "v" => v_stations.push((coord, value)),
                _ => return Err(bad()),
            }
        }
        if u_stations.is_empty() || v_stations.is_empty() {
            return Err(Error::ReferenceData("reference data incomplete".into()));
        }
        Ok(Self {
            u_stations,
            v_stations,
        })
    }

    pub fn shipped() -> Result<Self> {
        Self::from_text(REFERENCE_TEXT, REFERENCE_SHA256)
    }
}

/// Result of the cavity benchmark: the flow state plus centerline profiles
/// and their deviation from the reference at interior stations.
#[derive(Debug, Clone)]
pub struct CavityRun {
    pub state: FlowState,
    /// (y, computed u(0.5, y)) at the reference stations.
    pub u_centerline: Vec<(f64, f64)>,
    /// (x, computed v(x, 0.5)) at the reference stations.
    pub v_centerline: Vec<(f64, f64)>,
    /// Max deviation from the reference over interior stations.
    pub max_deviation: f64,
    /// RMS deviation over interior stations.
    pub rms_deviation: f64,
}

/// Boundary data of the benchmark cavity: a unit square at rest except the
/// top lid sliding with velocity -1 (tangential data, entering weakly).
pub fn cavity_boundary() -> BoundaryData {
    let mut bc = BoundaryData::no_slip();
    bc.top.u = Box::new(|_, _| -1.0);
    bc
}

/// Solves the lid-driven cavity and compares centerlines to the reference.
pub fn run_cavity(
    re: f64,
    nel_x: usize,
    nel_y: usize,
    order: usize,
    template: &SolverConfig,
    reference: &CavityReference,
) -> Result<CavityRun> {
    if !(re > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Reynolds number must be positive, got {re}"
        )));
    }
    let grid = GridComplex::build(DomainSpec::unit_square(nel_x, nel_y, order))?;
    let ops = Operators::new(grid)?;
    let bc = cavity_boundary();
    let cfg = SolverConfig {
        viscosity: 1.0 / re,
        ..template.clone()
    };
    let state = solve_steady(&ops, &bc, cfg)?;
    Ok(compare_centerlines(&ops, state, reference))
}

/// Extracts centerline profiles of a cavity state and scores them against
/// the reference. Interior stations only enter the metrics; the walls carry
/// prescribed data.
pub fn compare_centerlines(
    ops: &Operators,
    state: FlowState,
    reference: &CavityReference,
) -> CavityRun {
    let u_centerline: Vec<(f64, f64)> = reference
        .u_stations
        .iter()
        .map(|&(y, _)| (y, ops.reconstruct_velocity(&state.velocity.values, 0.5, y).0))
        .collect();
    let v_centerline: Vec<(f64, f64)> = reference
        .v_stations
        .iter()
        .map(|&(x, _)| (x, ops.reconstruct_velocity(&state.velocity.values, x, 0.5).1))
        .collect();
    let mut devs = Vec::new();
    for (stations, line) in [
        (&reference.u_stations, &u_centerline),
        (&reference.v_stations, &v_centerline),
    ] {
        for (&(c, r), &(_, s)) in stations.iter().zip(line.iter()) {
            if c > 0.0 && c < 1.0 {
                devs.push((s - r).abs());
            }
        }
    }
    let max_deviation = devs.iter().copied().fold(0.0f64, f64::max);
    let rms_deviation = (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt();
    CavityRun {
        state,
        u_centerline,
        v_centerline,
        max_deviation,
        rms_deviation,
    }
}

/// Streamfunction on the primal points by summing edge fluxes from the
/// bottom-left corner. Exact discrete continuity makes the result
/// path-independent; refuse to integrate fields that violate it.
pub fn streamfunction(ops: &Operators, u: &[f64]) -> Result<Vec<f64>> {
    let g = &ops.grid;
    let rel = la::inf_norm(&ops.d21.apply(u)) / la::inf_norm(u).max(1e-300);
    if rel > 1e-8 {
        return Err(Error::ContinuityViolated(format!(
            "relative cell imbalance {rel:.3e}; streamfunction undefined"
        )));
    }
    let mut psi = vec![0.0; g.n_points()];
    for i in 0..g.nx() {
        psi[g.point_idx(i + 1, 0)] = psi[g.point_idx(i, 0)] - u[g.edge_idx_h(i, 0)];
    }
    for j in 0..g.ny() {
        for i in 0..=g.nx() {
            psi[g.point_idx(i, j + 1)] = psi[g.point_idx(i, j)] + u[g.edge_idx_v(i, j)];
        }
    }
    Ok(psi)
}

/// Streamfunction at an arbitrary point: start from the primal point at the
/// lower-left corner of the containing cell and integrate the reconstructed
/// velocity along a right-then-up path. Valid under the same continuity
/// premise as [`streamfunction`].
pub fn streamfunction_at(ops: &Operators, u: &[f64], psi: &[f64], x: f64, y: f64) -> f64 {
    let g = &ops.grid;
    let rule = gauss_nodes(g.order() + 2).expect("order bounded by grid validation");
    // Containing cell indices on the primal line grid.
    let clamp = |v: f64, lo: f64, hi: f64| v.max(lo).min(hi);
    let x = clamp(x, g.spec.x_range.0, g.spec.x_range.1);
    let y = clamp(y, g.spec.y_range.0, g.spec.y_range.1);
    let i0 = g
        .lines_x
        .partition_point(|&lx| lx <= x)
        .saturating_sub(1)
        .min(g.nx() - 1);
    let j0 = g
        .lines_y
        .partition_point(|&ly| ly <= y)
        .saturating_sub(1)
        .min(g.ny() - 1);
    let (xa, ya) = (g.lines_x[i0], g.lines_y[j0]);
    let mut acc = psi[g.point_idx(i0, j0)];
    let half_x = 0.5 * (x - xa);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let xs = xa + (t + 1.0) * half_x;
        acc -= w * half_x * ops.reconstruct_velocity(u, xs, ya).1;
    }
    let half_y = 0.5 * (y - ya);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let ys = ya + (t + 1.0) * half_y;
        acc += w * half_y * ops.reconstruct_velocity(u, x, ys).0;
    }
    acc
}
