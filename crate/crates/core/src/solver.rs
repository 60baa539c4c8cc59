//! Steady incompressible flow solver.
//!
//! The unknowns are the primal edge fluxes, the cell pressure integrals and
//! one scalar mass multiplier. Continuity is imposed strongly on every cell,
//! normal boundary fluxes are imposed strongly on the wall edges, and the
//! momentum balance is imposed on interior staggered volumes with the face
//! fluxes eliminated through their mass matrices. The convective term is
//! frozen at the previous iterate and the loop is relaxed until the velocity
//! update stalls below tolerance.

use faer::Mat;

use crate::la::{self, LuSolver};
use crate::mesh::Dir;
use crate::ops::{BoundaryData, Cochain, Operators, Space};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub viscosity: f64,
    /// Fraction of the new iterate blended into the linearization point.
    pub relaxation: f64,
    /// Convergence threshold on the relative infinity norm of the velocity
    /// update, measured before relaxation.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Drop the convective term entirely (single linear solve).
    pub stokes_only: bool,
    /// Starting velocity for the fixed-point loop; boundary entries are
    /// overwritten by the strong data. Defaults to the zero extension.
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            viscosity: 1.0,
            relaxation: 0.7,
            tolerance: 1e-10,
            max_iterations: 200,
            stokes_only: false,
            initial_guess: None,
        }
    }
}

/// Converged flow field with iteration diagnostics.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub velocity: Cochain,
    pub pressure: Cochain,
    /// Uniform mass-source multiplier; zero up to roundoff for compatible
    /// boundary data.
    pub mass_multiplier: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative velocity update per iterate.
    pub update_history: Vec<f64>,
    /// Relative cell mass imbalance per iterate.
    pub mass_history: Vec<f64>,
}

/// The linearized steady system. Fixed blocks (viscous, pressure, strong
/// rows, continuity, gauge) are assembled once; convection is added per
/// linearization point.
pub struct SteadySystem<'a> {
    ops: &'a Operators,
    cfg: SolverConfig,
    /// Interior staggered volumes per direction.
    interior: [Vec<usize>; 2],
    /// Interior rows of the merged incidence composed with the face mass
    /// inverse, per direction.
    w: [Mat<f64>; 2],
    base: Mat<f64>,
    rhs: Vec<f64>,
    /// Zero-extended strong boundary values.
    strong: Vec<f64>,
    n_edges: usize,
    n_cells: usize,
}

impl<'a> SteadySystem<'a> {
    pub fn new(ops: &'a Operators, bc: &'a BoundaryData, cfg: SolverConfig) -> Result<Self> {
        if !(cfg.viscosity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "viscosity must be positive, got {}",
                cfg.viscosity
            )));
        }
        if !(0.0 < cfg.relaxation && cfg.relaxation <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must lie in (0, 1], got {}",
                cfg.relaxation
            )));
        }
        let g = &ops.grid;
        let strong = ops.reduce_boundary_normal(bc);
        check_compatibility(ops, &strong)?;

        let interior = [interior_volumes(ops, Dir::X), interior_volumes(ops, Dir::Y)];
        let w = [
            interior_flux_solve(ops, Dir::X, &interior[0]),
            interior_flux_solve(ops, Dir::Y, &interior[1]),
        ];

        let n_edges = g.n_edges();
        let n_cells = g.n_cells();
        let n = n_edges + n_cells + 1;
        let mut base = Mat::zeros(n, n);
        let mut rhs = vec![0.0; n];

        for (d, dir) in [(0usize, Dir::X), (1usize, Dir::Y)] {
            let row_of = |vol: usize| -> usize {
                match dir {
                    Dir::X => vol,
                    Dir::Y => g.n_vedges() + vol,
                }
            };
            // Viscous block: interior incidence of the eliminated diffusive
            // fluxes, linear in the velocity unknowns.
            let gk = ops.diffusion(dir).left_mul_dense(&w[d]);
            let avisc = ops.momentum_projection(dir).left_mul_dense(&gk);
            for (r, &vol) in interior[d].iter().enumerate() {
                let row = row_of(vol);
                for c in 0..n_edges {
                    base[(row, c)] = cfg.viscosity * avisc[(r, c)];
                }
            }
            // Pressure block: interior incidence of the pressure force.
            let pp = ops.pressure_force_with_bc(dir, bc);
            let dt = &ops.dt_merged[d];
            for (r, &vol) in interior[d].iter().enumerate() {
                let row = row_of(vol);
                for &(face, sign) in dt.row(vol) {
                    for (cell, v) in pp.row(face) {
                        base[(row, n_edges + cell)] += sign as f64 * v;
                    }
                }
                let _ = r;
            }
            // Right-hand side: wall traction, minus prescribed wall pressure.
            let bt = ops.boundary_traction(dir, bc, cfg.viscosity);
            let bp = ops.boundary_pressure(dir, bc);
            for (r, &vol) in interior[d].iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..w[d].ncols() {
                    acc += w[d][(r, k)] * bt[k];
                }
                let mut pacc = 0.0;
                for &(face, sign) in dt.row(vol) {
                    pacc += sign as f64 * bp[face];
                }
                rhs[row_of(vol)] = acc - pacc;
            }
        }

        // Strong rows: boundary edges carry their reduced data.
        for e in 0..n_edges {
            if boundary_edge(ops, e) {
                base[(e, e)] = 1.0;
                rhs[e] = strong[e];
            }
        }

        // Continuity on every cell, with the mass multiplier weighted by
        // cell area so that incompatible data surfaces there instead of
        // making the system singular.
        for cell in 0..n_cells {
            let row = n_edges + cell;
            for &(e, sign) in ops.d21.row(cell) {
                base[(row, e)] = sign as f64;
            }
            base[(row, n_edges + n_cells)] = g.cell_area(cell);
        }

        append_pressure_gauge(&mut base, n_edges, n_cells);

        Ok(Self {
            ops,
            cfg,
            interior,
            w,
            base,
            rhs,
            strong,
            n_edges,
            n_cells,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        self.base.nrows()
    }

    /// Strong boundary values extended by zero, or the configured starting
    /// guess with its boundary entries replaced by the strong data.
    pub fn initial_state(&self) -> Vec<f64> {
        match &self.cfg.initial_guess {
            None => self.strong.clone(),
            Some(guess) => {
                assert_eq!(guess.len(), self.n_edges);
                let mut u = guess.clone();
                for e in 0..self.n_edges {
                    if boundary_edge(self.ops, e) {
                        u[e] = self.strong[e];
                    }
                }
                u
            }
        }
    }

    /// Full system matrix at the given linearization velocity.
    pub fn matrix(&self, u_prev: &[f64]) -> Mat<f64> {
        let mut a = self.base.clone();
        if !self.cfg.stokes_only {
            let g = &self.ops.grid;
            for (d, dir) in [(0usize, Dir::X), (1usize, Dir::Y)] {
                let conv = self.ops.convection(dir, u_prev);
                let wc = conv.left_mul_dense(&self.w[d]);
                let aconv = self.ops.momentum_projection(dir).left_mul_dense(&wc);
                for (r, &vol) in self.interior[d].iter().enumerate() {
                    let row = match dir {
                        Dir::X => vol,
                        Dir::Y => g.n_vedges() + vol,
                    };
                    for c in 0..self.n_edges {
                        a[(row, c)] += aconv[(r, c)];
                    }
                }
            }
        }
        a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Runs the relaxed fixed-point loop. The returned state is the last
    /// unrelaxed solve.
    pub fn solve(&self) -> Result<FlowState> {
        let g = &self.ops.grid;
        let mut u_prev = self.initial_state();
        let mut update_history = Vec::new();
        let mut mass_history = Vec::new();
        let max_it = if self.cfg.stokes_only { 1 } else { self.cfg.max_iterations };
        for it in 0..max_it {
            let a = self.matrix(&u_prev);
            let lu = LuSolver::new(a)?;
            let z = lu.solve_vec(&self.rhs)?;
            let u_new = &z[..self.n_edges];
            let u_scale = la::inf_norm(u_new).max(1e-300);
            let delta = u_new
                .iter()
                .zip(&u_prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                / u_scale;
            update_history.push(delta);
            let mass = la::inf_norm(&self.ops.d21.apply(u_new)) / u_scale;
            mass_history.push(mass);
            let done = self.cfg.stokes_only || delta <= self.cfg.tolerance;
            if done {
                let pressure = z[self.n_edges..self.n_edges + self.n_cells].to_vec();
                return Ok(FlowState {
                    velocity: Cochain::new(Space::PrimalEdge, u_new.to_vec()),
                    pressure: Cochain::new(Space::PrimalCell, pressure),
                    mass_multiplier: z[self.n_edges + self.n_cells],
                    iterations: it + 1,
                    converged: true,
                    update_history,
                    mass_history,
                });
            }
            let th = self.cfg.relaxation;
            for (p, n) in u_prev.iter_mut().zip(u_new) {
                *p = th * n + (1.0 - th) * *p;
            }
            let _ = g;
        }
        Err(Error::NonlinearSolve(format!(
            "no convergence in {} iterations, last relative update {:.3e}",
            max_it,
            update_history.last().copied().unwrap_or(f64::NAN)
        )))
    }
}

/// Convenience wrapper: build the system and iterate.
pub fn solve_steady(ops: &Operators, bc: &BoundaryData, cfg: SolverConfig) -> Result<FlowState> {
    SteadySystem::new(ops, bc, cfg)?.solve()
}

fn boundary_edge(ops: &Operators, e: usize) -> bool {
    let g = &ops.grid;
    if e < g.n_vedges() {
        let i = e % (g.nx() + 1);
        g.vedge_wall(i).is_some()
    } else {
        let j = (e - g.n_vedges()) / g.nx();
        g.hedge_wall(j).is_some()
    }
}

fn interior_volumes(ops: &Operators, dir: Dir) -> Vec<usize> {
    let g = &ops.grid;
    (0..g.n_volumes(dir))
        .filter(|&v| !g.vol_on_wall(dir, v))
        .collect()
}

/// Rows of the merged incidence restricted to interior volumes, composed
/// with the inverse face mass matrix.
fn interior_flux_solve(ops: &Operators, dir: Dir, interior: &[usize]) -> Mat<f64> {
    let g = &ops.grid;
    let nf = g.n_flux(dir);
    let dt = match dir {
        Dir::X => &ops.dt_merged[0],
        Dir::Y => &ops.dt_merged[1],
    };
    let mut rhs = Mat::zeros(nf, interior.len());
    for (c, &vol) in interior.iter().enumerate() {
        for &(face, sign) in dt.row(vol) {
            rhs[(face, c)] = sign as f64;
        }
    }
    let x = ops.solve_m11(dir, &rhs);
    Mat::from_fn(interior.len(), nf, |r, c| x[(c, r)])
}

/// Net prescribed outflux must vanish relative to the data size.
pub fn check_compatibility(ops: &Operators, strong: &[f64]) -> Result<()> {
    let g = &ops.grid;
    let mut net = 0.0;
    let mut scale = 0.0;
    for j in 0..g.ny() {
        net += strong[g.edge_idx_v(g.nx(), j)] - strong[g.edge_idx_v(0, j)];
        scale += strong[g.edge_idx_v(g.nx(), j)].abs() + strong[g.edge_idx_v(0, j)].abs();
    }
    for i in 0..g.nx() {
        net += strong[g.edge_idx_h(i, g.ny())] - strong[g.edge_idx_h(i, 0)];
        scale += strong[g.edge_idx_h(i, g.ny())].abs() + strong[g.edge_idx_h(i, 0)].abs();
    }
    if net.abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::InconsistentBc(format!(
            "net boundary flux {net:.3e} exceeds tolerance for data of size {scale:.3e}"
        )));
    }
    Ok(())
}

/// Appends the zero-mean pressure row and keeps the system square by
/// construction (the multiplier column was already present).
fn append_pressure_gauge(a: &mut Mat<f64>, n_edges: usize, n_cells: usize) {
    let row = n_edges + n_cells;
    for c in 0..n_cells {
        a[(row, n_edges + c)] = 1.0;
    }
}

/// Eliminated face fluxes of a flow state: convective, pressure and
/// diffusive flux cochains for one momentum component.
pub struct FaceFluxes {
    pub convective: Vec<f64>,
    pub pressure: Vec<f64>,
    pub diffusive: Vec<f64>,
}

pub fn face_fluxes(
    ops: &Operators,
    bc: &BoundaryData,
    mu: f64,
    dir: Dir,
    u: &[f64],
    p: &[f64],
) -> FaceFluxes {
    let m = ops.momentum_pieces(dir, u);
    let conv = ops.convection(dir, u);
    let f = ops.solve_m11_vec(dir, &conv.apply(&m));
    let h: Vec<f64> = ops
        .pressure_force_with_bc(dir, bc)
        .apply(p)
        .iter()
        .zip(&ops.boundary_pressure(dir, bc))
        .map(|(a, b)| a + b)
        .collect();
    let km = ops.diffusion(dir).apply(&m);
    let bt = ops.boundary_traction(dir, bc, mu);
    let rhs: Vec<f64> = km.iter().zip(&bt).map(|(a, b)| -mu * a + b).collect();
    let t = ops.solve_m11_vec(dir, &rhs);
    FaceFluxes {
        convective: f,
        pressure: h,
        diffusive: t,
    }
}

/// Largest interior momentum imbalance of a state, relative to the largest
/// face flux magnitude among the three contributions. Recomputes the fluxes
/// from the state itself, so this measures the nonlinear balance, not the
/// linearized one.
pub fn momentum_residual(
    ops: &Operators,
    bc: &BoundaryData,
    mu: f64,
    state: &FlowState,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (d, dir) in [(0usize, Dir::X), (1usize, Dir::Y)] {
        let fl = face_fluxes(ops, bc, mu, dir, &state.velocity.values, &state.pressure.values);
        let scale = la::inf_norm(&fl.convective)
            .max(la::inf_norm(&fl.pressure))
            .max(la::inf_norm(&fl.diffusive));
        let dt = &ops.dt_merged[d];
        let nf = dt.apply(&fl.convective);
        let nh = dt.apply(&fl.pressure);
        let nt = dt.apply(&fl.diffusive);
        let g = &ops.grid;
        let mut imbalance: f64 = 0.0;
        for v in 0..g.n_volumes(dir) {
            if g.vol_on_wall(dir, v) {
                continue;
            }
            imbalance = imbalance.max((nf[v] + nh[v] - nt[v]).abs());
        }
        worst = worst.max(imbalance / scale.max(1e-300));
    }
    worst
}
