//! Discrete operators on the grid complex: cochain reduction and
//! reconstruction, mass matrices, momentum and pressure projections,
//! convection, diffusion and the boundary functionals that carry wall data
//! into the weak forms.
//!
//! Unknowns are integral cochains. Velocity lives on primal edges as fluxes;
//! pressure on cells as integrals; momentum density on element-local pieces
//! of the staggered tiling; convective, pressure and diffusive forces on the
//! staggered faces as fluxes. Reconstructions expand a cochain in the tensor
//! bases (cardinal along lines, edge across intervals) scaled so that
//! reducing the reconstruction returns the cochain exactly.
//!
//! The diffusion operator is assembled as the matrix product of the
//! piece-level incidence transpose with the density mass matrix. That equals
//! the Galerkin weak form because the divergence of every face basis
//! function expands exactly in the density basis with incidence
//! coefficients.

use faer::Mat;

use crate::la::{CholSolver, SparseMat};
use crate::mesh::{Dir, GridComplex, IncidenceMatrix, Wall};
use crate::poly::{gauss_nodes, Basis1D, NodeSet};
use crate::Result;

/// Cochain spaces of the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Edge fluxes, vertical block then horizontal block.
    PrimalEdge,
    /// Cell integrals.
    PrimalCell,
    /// Merged staggered volume integrals.
    Volume(Dir),
    /// Element-local momentum pieces.
    Piece(Dir),
    /// Staggered face fluxes, normal block then shear block.
    Flux(Dir),
}

/// A vector of integral values tagged with its space.
#[derive(Debug, Clone)]
pub struct Cochain {
    pub space: Space,
    pub values: Vec<f64>,
}

impl Cochain {
    pub fn new(space: Space, values: Vec<f64>) -> Self {
        Self { space, values }
    }
}

/// Per-wall velocity data in Cartesian components, with optional pressure
/// data that overrides the interior trace in the pressure force.
pub struct WallBc {
    pub u: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub v: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub pressure: Option<Box<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
}

impl WallBc {
    pub fn no_slip() -> Self {
        Self {
            u: Box::new(|_, _| 0.0),
            v: Box::new(|_, _| 0.0),
            pressure: None,
        }
    }
}

/// Velocity data on the four walls.
pub struct BoundaryData {
    pub left: WallBc,
    pub right: WallBc,
    pub bottom: WallBc,
    pub top: WallBc,
}

impl BoundaryData {
    pub fn no_slip() -> Self {
        Self {
            left: WallBc::no_slip(),
            right: WallBc::no_slip(),
            bottom: WallBc::no_slip(),
            top: WallBc::no_slip(),
        }
    }

    /// All four walls sample the same velocity field.
    pub fn from_field(f: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + Clone + 'static) -> Self {
        fn wall(f: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + Clone + 'static) -> WallBc {
            let fu = f.clone();
            WallBc {
                u: Box::new(move |x, y| fu(x, y).0),
                v: Box::new(move |x, y| f(x, y).1),
                pressure: None,
            }
        }
        Self {
            left: wall(f.clone()),
            right: wall(f.clone()),
            bottom: wall(f.clone()),
            top: wall(f),
        }
    }

    pub fn wall(&self, w: Wall) -> &WallBc {
        match w {
            Wall::Left => &self.left,
            Wall::Right => &self.right,
            Wall::Bottom => &self.bottom,
            Wall::Top => &self.top,
        }
    }
}

fn dir_id(dir: Dir) -> usize {
    match dir {
        Dir::X => 0,
        Dir::Y => 1,
    }
}

/// Reference-element evaluation tables shared by all elements (the mesh is
/// affine and uniform).
struct RefTables {
    /// Assembly quadrature, two orders above the basis.
    quad: NodeSet,
    basis_gll: Basis1D,
    basis_ext: Basis1D,
    /// Cardinal values at quadrature points, `h[i][q]`.
    h: Vec<Vec<f64>>,
    /// Primal edge values, `e[j][q]`, `j` 0-based for interval `j+1`.
    e: Vec<Vec<f64>>,
    /// Extended cardinal values, `ht[k][q]`.
    ht: Vec<Vec<f64>>,
    /// Extended edge values, `et[a][q]`, `a` 0-based for piece `a`.
    et: Vec<Vec<f64>>,
    /// 1D Gram matrices under `quad`.
    gh: Vec<Vec<f64>>,
    ge: Vec<Vec<f64>>,
    ghtt: Vec<Vec<f64>>,
    gett: Vec<Vec<f64>>,
    /// `sh[a][i]`: integral of cardinal `h_i` over extended interval `a`.
    sh: Vec<Vec<f64>>,
    /// `ee[k][c]`: primal edge function `c` at extended node `k`.
    ee: Vec<Vec<f64>>,
}

impl RefTables {
    fn build(p: usize) -> Result<Self> {
        let quad = gauss_nodes(p + 2)?;
        let gll = crate::poly::gll_nodes(p)?;
        let gauss = gauss_nodes(p)?;
        let basis_gll = Basis1D::new(&gll);
        let mut ext_nodes = Vec::with_capacity(p + 2);
        ext_nodes.push(-1.0);
        ext_nodes.extend_from_slice(&gauss.nodes);
        ext_nodes.push(1.0);
        let basis_ext = Basis1D::from_nodes(ext_nodes.clone());

        let nq = quad.len();
        let h: Vec<Vec<f64>> = (0..=p)
            .map(|i| quad.nodes.iter().map(|&x| basis_gll.lagrange(i, x)).collect())
            .collect();
        let e: Vec<Vec<f64>> = (1..=p)
            .map(|j| quad.nodes.iter().map(|&x| basis_gll.edge(j, x)).collect())
            .collect();
        let ht: Vec<Vec<f64>> = (0..=p + 1)
            .map(|k| quad.nodes.iter().map(|&x| basis_ext.lagrange(k, x)).collect())
            .collect();
        let et: Vec<Vec<f64>> = (1..=p + 1)
            .map(|a| quad.nodes.iter().map(|&x| basis_ext.edge(a, x)).collect())
            .collect();

        let gram = |fa: &[Vec<f64>], fb: &[Vec<f64>]| -> Vec<Vec<f64>> {
            fa.iter()
                .map(|ra| {
                    fb.iter()
                        .map(|rb| (0..nq).map(|q| quad.weights[q] * ra[q] * rb[q]).sum())
                        .collect()
                })
                .collect()
        };
        let gh = gram(&h, &h);
        let ge = gram(&e, &e);
        let ghtt = gram(&ht, &ht);
        let gett = gram(&et, &et);

        // Integrals of the cardinals over extended sub-intervals by mapped
        // quadrature.
        let mut sh = vec![vec![0.0; p + 1]; p + 1];
        for a in 0..=p {
            let (t0, t1) = (ext_nodes[a], ext_nodes[a + 1]);
            let half = 0.5 * (t1 - t0);
            let mid = 0.5 * (t0 + t1);
            for i in 0..=p {
                sh[a][i] = quad
                    .nodes
                    .iter()
                    .zip(&quad.weights)
                    .map(|(&t, &w)| w * half * basis_gll.lagrange(i, mid + half * t))
                    .sum();
            }
        }

        let ee: Vec<Vec<f64>> = (0..=p + 1)
            .map(|k| (1..=p).map(|c| basis_gll.edge(c, ext_nodes[k])).collect())
            .collect();

        Ok(Self {
            quad,
            basis_gll,
            basis_ext,
            h,
            e,
            ht,
            et,
            gh,
            ge,
            ghtt,
            gett,
            sh,
            ee,
        })
    }
}

/// Grid-bound operator set. Construction assembles everything that does not
/// depend on the current velocity; [`Operators::convection`] is rebuilt per
/// nonlinear iterate.
pub struct Operators {
    pub grid: GridComplex,
    tabs: RefTables,
    /// Face-flux mass matrices, normal and shear blocks per direction.
    m11_normal: [Mat<f64>; 2],
    m11_shear: [Mat<f64>; 2],
    chol_normal: [CholSolver; 2],
    chol_shear: [CholSolver; 2],
    /// Momentum density mass matrices per direction.
    m22: [SparseMat; 2],
    /// Momentum projection, pieces x edges.
    pm: [SparseMat; 2],
    /// Piece-to-volume accumulation (0/1 entries).
    merge: [SparseMat; 2],
    /// Pressure force, faces x cells.
    pp: [SparseMat; 2],
    /// Diffusion, faces x pieces: transpose of the piece incidence times m22.
    kdiff: [SparseMat; 2],
    /// Incidence operators.
    pub d21: IncidenceMatrix,
    pub d10: IncidenceMatrix,
    pub dt_merged: [IncidenceMatrix; 2],
    pub dt_pieces: [IncidenceMatrix; 2],
}

impl Operators {
    pub fn new(grid: GridComplex) -> Result<Self> {
        crate::la::ensure_deterministic();
        let p = grid.order();
        let tabs = RefTables::build(p)?;
        let d21 = grid.d21();
        let d10 = grid.d10();
        let dt_merged = [grid.d21_tilde(Dir::X), grid.d21_tilde(Dir::Y)];
        let dt_pieces = [grid.d21_tilde_pieces(Dir::X), grid.d21_tilde_pieces(Dir::Y)];

        let m11_normal = [
            assemble_m11_normal(&grid, &tabs, Dir::X),
            assemble_m11_normal(&grid, &tabs, Dir::Y),
        ];
        let m11_shear = [
            assemble_m11_shear(&grid, &tabs, Dir::X),
            assemble_m11_shear(&grid, &tabs, Dir::Y),
        ];
        let chol_normal = [CholSolver::new(&m11_normal[0])?, CholSolver::new(&m11_normal[1])?];
        let chol_shear = [CholSolver::new(&m11_shear[0])?, CholSolver::new(&m11_shear[1])?];
        let m22 = [
            assemble_m22(&grid, &tabs, Dir::X),
            assemble_m22(&grid, &tabs, Dir::Y),
        ];
        let pm = [
            assemble_pm(&grid, &tabs, Dir::X),
            assemble_pm(&grid, &tabs, Dir::Y),
        ];
        let merge = [build_merge(&grid, Dir::X), build_merge(&grid, Dir::Y)];
        let pp = [
            assemble_pp(&grid, &tabs, Dir::X),
            assemble_pp(&grid, &tabs, Dir::Y),
        ];
        let kdiff = [
            build_kdiff(&dt_pieces[0], &m22[0]),
            build_kdiff(&dt_pieces[1], &m22[1]),
        ];
        Ok(Self {
            grid,
            tabs,
            m11_normal,
            m11_shear,
            chol_normal,
            chol_shear,
            m22,
            pm,
            merge,
            pp,
            kdiff,
            d21,
            d10,
            dt_merged,
            dt_pieces,
        })
    }

    pub fn order(&self) -> usize {
        self.grid.order()
    }

    pub fn m22(&self, dir: Dir) -> &SparseMat {
        &self.m22[dir_id(dir)]
    }

    pub fn momentum_projection(&self, dir: Dir) -> &SparseMat {
        &self.pm[dir_id(dir)]
    }

    pub fn piece_merge(&self, dir: Dir) -> &SparseMat {
        &self.merge[dir_id(dir)]
    }

    pub fn pressure_force(&self, dir: Dir) -> &SparseMat {
        &self.pp[dir_id(dir)]
    }

    pub fn diffusion(&self, dir: Dir) -> &SparseMat {
        &self.kdiff[dir_id(dir)]
    }

    pub fn m11_dense(&self, dir: Dir) -> Mat<f64> {
        let d = dir_id(dir);
        let (nn, ns) = (self.m11_normal[d].nrows(), self.m11_shear[d].nrows());
        let mut m = Mat::zeros(nn + ns, nn + ns);
        for i in 0..nn {
            for j in 0..nn {
                m[(i, j)] = self.m11_normal[d][(i, j)];
            }
        }
        for i in 0..ns {
            for j in 0..ns {
                m[(nn + i, nn + j)] = self.m11_shear[d][(i, j)];
            }
        }
        m
    }

    /// Solves the face mass matrix block-wise: `rhs` has one column per
    /// system, rows ordered normal block then shear block.
    pub fn solve_m11(&self, dir: Dir, rhs: &Mat<f64>) -> Mat<f64> {
        let d = dir_id(dir);
        let nn = self.m11_normal[d].nrows();
        let ns = self.m11_shear[d].nrows();
        assert_eq!(rhs.nrows(), nn + ns);
        let rn = Mat::from_fn(nn, rhs.ncols(), |i, j| rhs[(i, j)]);
        let rs = Mat::from_fn(ns, rhs.ncols(), |i, j| rhs[(nn + i, j)]);
        let xn = self.chol_normal[d].solve(&rn);
        let xs = self.chol_shear[d].solve(&rs);
        let mut out = Mat::zeros(nn + ns, rhs.ncols());
        for j in 0..rhs.ncols() {
            for i in 0..nn {
                out[(i, j)] = xn[(i, j)];
            }
            for i in 0..ns {
                out[(nn + i, j)] = xs[(i, j)];
            }
        }
        out
    }

    pub fn solve_m11_vec(&self, dir: Dir, rhs: &[f64]) -> Vec<f64> {
        crate::la::col_to_vec(&self.solve_m11(dir, &crate::la::col_from(rhs)))
    }

    /// Primal edge mass matrix (velocity inner product), block diagonal over
    /// the vertical and horizontal families.
    pub fn m1_dense(&self) -> Mat<f64> {
        let g = &self.grid;
        let p = g.order();
        let t = &self.tabs;
        let (dx, dy) = (g.elem_dx(), g.elem_dy());
        let ne = g.n_edges();
        let mut m = Mat::zeros(ne, ne);
        for ey in 0..g.spec.nel_y {
            for ex in 0..g.spec.nel_x {
                for i in 0..=p {
                    for j in 0..p {
                        let r = g.edge_idx_v(ex * p + i, ey * p + j);
                        for i2 in 0..=p {
                            for j2 in 0..p {
                                let c = g.edge_idx_v(ex * p + i2, ey * p + j2);
                                m[(r, c)] += t.gh[i][i2] * t.ge[j][j2] * (dx / dy);
                            }
                        }
                    }
                }
                for i in 0..p {
                    for j in 0..=p {
                        let r = g.edge_idx_h(ex * p + i, ey * p + j);
                        for i2 in 0..p {
                            for j2 in 0..=p {
                                let c = g.edge_idx_h(ex * p + i2, ey * p + j2);
                                m[(r, c)] += t.ge[i][i2] * t.gh[j][j2] * (dy / dx);
                            }
                        }
                    }
                }
            }
        }
        m
    }

    // ---- reductions ----

    /// Edge cochain of a velocity field: net fluxes through primal edges.
    pub fn reduce_velocity(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
        let g = &self.grid;
        let quad = &self.tabs.quad;
        let mut out = vec![0.0; g.n_edges()];
        for j in 0..g.ny() {
            for i in 0..=g.nx() {
                let (x, y0, y1) = g.vedge_segment(i, j);
                out[g.edge_idx_v(i, j)] = seg_quad(quad, y0, y1, |y| f(x, y).0);
            }
        }
        for j in 0..=g.ny() {
            for i in 0..g.nx() {
                let (y, x0, x1) = g.hedge_segment(i, j);
                out[g.edge_idx_h(i, j)] = seg_quad(quad, x0, x1, |x| f(x, y).1);
            }
        }
        out
    }

    /// Cell cochain of a scalar field: integrals over cells.
    pub fn reduce_pressure(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let g = &self.grid;
        let quad = &self.tabs.quad;
        (0..g.n_cells())
            .map(|c| {
                let (x0, x1, y0, y1) = g.cell_bounds(c);
                box_quad(quad, x0, x1, y0, y1, &f)
            })
            .collect()
    }

    /// Piece cochain of a scalar density.
    pub fn reduce_pieces(&self, dir: Dir, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let g = &self.grid;
        let quad = &self.tabs.quad;
        (0..g.n_pieces(dir))
            .map(|q| {
                let (x0, x1, y0, y1) = g.piece_bounds(dir, q);
                box_quad(quad, x0, x1, y0, y1, &f)
            })
            .collect()
    }

    /// Face cochain of a flux vector field on the staggered tiling.
    pub fn reduce_flux(&self, dir: Dir, f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
        let g = &self.grid;
        let quad = &self.tabs.quad;
        let mut out = vec![0.0; g.n_flux(dir)];
        match dir {
            Dir::X => {
                for j in 0..g.ny() {
                    for l in 0..g.nvx() {
                        let x = g.vlines_x[l];
                        let (y0, y1) = (g.lines_y[j], g.lines_y[j + 1]);
                        out[g.flux_nf(dir, l, j)] = seg_quad(quad, y0, y1, |y| f(x, y).0);
                    }
                }
                for jl in 0..=g.ny() {
                    for q in 0..g.npx() {
                        let y = g.lines_y[jl];
                        let (x0, x1) = (g.vlines_x[q], g.vlines_x[q + 1]);
                        out[g.flux_sh(dir, q, jl)] = seg_quad(quad, x0, x1, |x| f(x, y).1);
                    }
                }
            }
            Dir::Y => {
                for m in 0..g.nvy() {
                    for i in 0..g.nx() {
                        let y = g.vlines_y[m];
                        let (x0, x1) = (g.lines_x[i], g.lines_x[i + 1]);
                        out[g.flux_nf(dir, i, m)] = seg_quad(quad, x0, x1, |x| f(x, y).1);
                    }
                }
                for q in 0..g.npy() {
                    for il in 0..=g.nx() {
                        let x = g.lines_x[il];
                        let (y0, y1) = (g.vlines_y[q], g.vlines_y[q + 1]);
                        out[g.flux_sh(dir, il, q)] = seg_quad(quad, y0, y1, |y| f(x, y).0);
                    }
                }
            }
        }
        out
    }

    // ---- reconstructions ----

    /// Point values of the velocity expansion of an edge cochain.
    pub fn reconstruct_velocity(&self, u: &[f64], x: f64, y: f64) -> (f64, f64) {
        let g = &self.grid;
        let p = g.order();
        let (ex, ey, xi, eta) = g.locate(x, y);
        let b = &self.tabs.basis_gll;
        let hx = b.lagrange_all(xi);
        let hy = b.lagrange_all(eta);
        let ex_ = b.edge_all(xi);
        let ey_ = b.edge_all(eta);
        let (dx, dy) = (g.elem_dx(), g.elem_dy());
        let mut uu = 0.0;
        for i in 0..=p {
            for j in 0..p {
                uu += u[g.edge_idx_v(ex * p + i, ey * p + j)] * hx[i] * ey_[j];
            }
        }
        let mut vv = 0.0;
        for i in 0..p {
            for j in 0..=p {
                vv += u[g.edge_idx_h(ex * p + i, ey * p + j)] * ex_[i] * hy[j];
            }
        }
        (uu * 2.0 / dy, vv * 2.0 / dx)
    }

    /// Point values of the pressure expansion of a cell cochain.
    pub fn reconstruct_pressure(&self, pr: &[f64], x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let p = g.order();
        let (ex, ey, xi, eta) = g.locate(x, y);
        let b = &self.tabs.basis_gll;
        let ex_ = b.edge_all(xi);
        let ey_ = b.edge_all(eta);
        let mut v = 0.0;
        for i in 0..p {
            for j in 0..p {
                v += pr[g.cell_idx(ex * p + i, ey * p + j)] * ex_[i] * ey_[j];
            }
        }
        v * 4.0 / (g.elem_dx() * g.elem_dy())
    }

    /// Point values of the momentum density expansion of a piece cochain.
    pub fn reconstruct_momentum(&self, dir: Dir, m: &[f64], x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let p = g.order();
        let (ex, ey, xi, eta) = g.locate(x, y);
        let bg = &self.tabs.basis_gll;
        let bx = &self.tabs.basis_ext;
        let mut v = 0.0;
        match dir {
            Dir::X => {
                let ea = bx.edge_all(xi);
                let ej = bg.edge_all(eta);
                for a in 0..=p {
                    for j in 0..p {
                        v += m[g.xpiece_g(ex, ey, a, j)] * ea[a] * ej[j];
                    }
                }
            }
            Dir::Y => {
                let ei = bg.edge_all(xi);
                let eb = bx.edge_all(eta);
                for i in 0..p {
                    for b in 0..=p {
                        v += m[g.ypiece_g(ex, ey, i, b)] * ei[i] * eb[b];
                    }
                }
            }
        }
        v * 4.0 / (g.elem_dx() * g.elem_dy())
    }

    /// Point values of the flux vector expansion of a face cochain.
    pub fn reconstruct_flux(&self, dir: Dir, fl: &[f64], x: f64, y: f64) -> (f64, f64) {
        let g = &self.grid;
        let p = g.order();
        let (ex, ey, xi, eta) = g.locate(x, y);
        let bg = &self.tabs.basis_gll;
        let bx = &self.tabs.basis_ext;
        let (dx, dy) = (g.elem_dx(), g.elem_dy());
        match dir {
            Dir::X => {
                let htx = bx.lagrange_all(xi);
                let ety = bg.edge_all(eta);
                let etx = bx.edge_all(xi);
                let hy = bg.lagrange_all(eta);
                let mut qn = 0.0;
                for k in 0..=p + 1 {
                    for j in 0..p {
                        qn += fl[g.flux_nf(dir, g.vline_x_g(ex, k), ey * p + j)] * htx[k] * ety[j];
                    }
                }
                let mut qs = 0.0;
                for a in 0..=p {
                    for jl in 0..=p {
                        qs += fl[g.flux_sh(dir, ex * (p + 1) + a, ey * p + jl)] * etx[a] * hy[jl];
                    }
                }
                (qn * 2.0 / dy, qs * 2.0 / dx)
            }
            Dir::Y => {
                let hty = bx.lagrange_all(eta);
                let etx = bg.edge_all(xi);
                let ety = bx.edge_all(eta);
                let hx = bg.lagrange_all(xi);
                let mut qn = 0.0;
                for i in 0..p {
                    for k in 0..=p + 1 {
                        qn += fl[g.flux_nf(dir, ex * p + i, g.vline_y_g(ey, k))] * etx[i] * hty[k];
                    }
                }
                let mut qs = 0.0;
                for il in 0..=p {
                    for b in 0..=p {
                        qs += fl[g.flux_sh(dir, ex * p + il, ey * (p + 1) + b)] * hx[il] * ety[b];
                    }
                }
                (qs * 2.0 / dy, qn * 2.0 / dx)
            }
        }
    }

    /// Momentum piece cochain of an edge cochain.
    pub fn momentum_pieces(&self, dir: Dir, u: &[f64]) -> Vec<f64> {
        self.pm[dir_id(dir)].apply(u)
    }

    /// Merged volume momentum cochain of an edge cochain.
    pub fn momentum_volumes(&self, dir: Dir, u: &[f64]) -> Vec<f64> {
        self.merge[dir_id(dir)].apply(&self.momentum_pieces(dir, u))
    }

    // ---- velocity-dependent operators ----

    /// Convection matrix for transport by the velocity expansion of
    /// `u_prev`: faces x pieces, row `j`, column `k` holding the integral of
    /// the density basis `k` times the transporting velocity dotted with the
    /// face basis `j`.
    pub fn convection(&self, dir: Dir, u_prev: &[f64]) -> SparseMat {
        let g = &self.grid;
        let p = g.order();
        let t = &self.tabs;
        let nq = t.quad.len();
        let (dx, dy) = (g.elem_dx(), g.elem_dy());
        let mut c = SparseMat::new(g.n_flux(dir), g.n_pieces(dir));

        let n_rows_local = match dir {
            Dir::X => (p + 2) * p + (p + 1) * (p + 1),
            Dir::Y => p * (p + 2) + (p + 1) * (p + 1),
        };
        let n_cols_local = (p + 1) * p;

        for ey in 0..g.spec.nel_y {
            for ex in 0..g.spec.nel_x {
                // Transporting velocity at the tensor quadrature points.
                let mut uq = vec![vec![0.0; nq]; nq];
                let mut vq = vec![vec![0.0; nq]; nq];
                for q in 0..nq {
                    for r in 0..nq {
                        let mut uu = 0.0;
                        for i in 0..=p {
                            for j in 0..p {
                                uu += u_prev[g.vedge_g(ex, ey, i, j)] * t.h[i][q] * t.e[j][r];
                            }
                        }
                        let mut vv = 0.0;
                        for i in 0..p {
                            for j in 0..=p {
                                vv += u_prev[g.hedge_g(ex, ey, i, j)] * t.e[i][q] * t.h[j][r];
                            }
                        }
                        uq[q][r] = uu * 2.0 / dy;
                        vq[q][r] = vv * 2.0 / dx;
                    }
                }

                let mut local = vec![vec![0.0; n_cols_local]; n_rows_local];
                let mut rowval = vec![0.0; n_rows_local];
                let mut colval = vec![0.0; n_cols_local];
                for q in 0..nq {
                    for r in 0..nq {
                        let (wq, wr) = (t.quad.weights[q], t.quad.weights[r]);
                        match dir {
                            Dir::X => {
                                let mut idx = 0;
                                for k in 0..=p + 1 {
                                    for jl in 0..p {
                                        rowval[idx] =
                                            uq[q][r] * t.ht[k][q] * t.e[jl][r] * 2.0 / dy;
                                        idx += 1;
                                    }
                                }
                                for a in 0..=p {
                                    for jl in 0..=p {
                                        rowval[idx] =
                                            vq[q][r] * t.et[a][q] * t.h[jl][r] * 2.0 / dx;
                                        idx += 1;
                                    }
                                }
                                let mut cdx = 0;
                                for a in 0..=p {
                                    for jm in 0..p {
                                        colval[cdx] = wq * wr * t.et[a][q] * t.e[jm][r];
                                        cdx += 1;
                                    }
                                }
                            }
                            Dir::Y => {
                                let mut idx = 0;
                                for i in 0..p {
                                    for k in 0..=p + 1 {
                                        rowval[idx] =
                                            vq[q][r] * t.e[i][q] * t.ht[k][r] * 2.0 / dx;
                                        idx += 1;
                                    }
                                }
                                for il in 0..=p {
                                    for b in 0..=p {
                                        rowval[idx] =
                                            uq[q][r] * t.h[il][q] * t.et[b][r] * 2.0 / dy;
                                        idx += 1;
                                    }
                                }
                                let mut cdx = 0;
                                for i in 0..p {
                                    for b in 0..=p {
                                        colval[cdx] = wq * wr * t.e[i][q] * t.et[b][r];
                                        cdx += 1;
                                    }
                                }
                            }
                        }
                        for (lr, &rv) in rowval.iter().enumerate() {
                            if rv != 0.0 {
                                let dst = &mut local[lr];
                                for (lc, &cv) in colval.iter().enumerate() {
                                    dst[lc] += rv * cv;
                                }
                            }
                        }
                    }
                }

                // Scatter to global indices.
                let rows: Vec<usize> = match dir {
                    Dir::X => {
                        let mut v = Vec::with_capacity(n_rows_local);
                        for k in 0..=p + 1 {
                            for jl in 0..p {
                                v.push(g.flux_nf(dir, g.vline_x_g(ex, k), ey * p + jl));
                            }
                        }
                        for a in 0..=p {
                            for jl in 0..=p {
                                v.push(g.flux_sh(dir, ex * (p + 1) + a, ey * p + jl));
                            }
                        }
                        v
                    }
                    Dir::Y => {
                        let mut v = Vec::with_capacity(n_rows_local);
                        for i in 0..p {
                            for k in 0..=p + 1 {
                                v.push(g.flux_nf(dir, ex * p + i, g.vline_y_g(ey, k)));
                            }
                        }
                        for il in 0..=p {
                            for b in 0..=p {
                                v.push(g.flux_sh(dir, ex * p + il, ey * (p + 1) + b));
                            }
                        }
                        v
                    }
                };
                let cols: Vec<usize> = match dir {
                    Dir::X => {
                        let mut v = Vec::with_capacity(n_cols_local);
                        for a in 0..=p {
                            for jm in 0..p {
                                v.push(g.xpiece_g(ex, ey, a, jm));
                            }
                        }
                        v
                    }
                    Dir::Y => {
                        let mut v = Vec::with_capacity(n_cols_local);
                        for i in 0..p {
                            for b in 0..=p {
                                v.push(g.ypiece_g(ex, ey, i, b));
                            }
                        }
                        v
                    }
                };
                for (lr, &gr) in rows.iter().enumerate() {
                    for (lc, &gc) in cols.iter().enumerate() {
                        let v = local[lr][lc];
                        if v != 0.0 {
                            c.add(gr, gc, v);
                        }
                    }
                }
            }
        }
        c
    }

    /// Boundary contribution to the diffusive face fluxes: for momentum
    /// component `dir`, the wall integral of that component of the boundary
    /// velocity against the outward-normal trace of each face basis, scaled
    /// by the viscosity.
    pub fn boundary_traction(&self, dir: Dir, bc: &BoundaryData, mu: f64) -> Vec<f64> {
        let g = &self.grid;
        let p = g.order();
        let t = &self.tabs;
        let nq = t.quad.len();
        let mut out = vec![0.0; g.n_flux(dir)];
        let comp = |w: Wall, x: f64, y: f64| -> f64 {
            let wb = bc.wall(w);
            match dir {
                Dir::X => (wb.u)(x, y),
                Dir::Y => (wb.v)(x, y),
            }
        };
        match dir {
            Dir::X => {
                // Left and right walls touch only the normal family (its
                // extended cardinal is one on the wall line, zero for all
                // interior lines); top and bottom walls touch only the shear
                // family.
                let (x0, x1) = g.spec.x_range;
                for ey in 0..g.spec.nel_y {
                    let (ya, yb) = g.elem_y_bounds(ey);
                    let half = 0.5 * (yb - ya);
                    for jl in 0..p {
                        let row_l = g.flux_nf(dir, 0, ey * p + jl);
                        let row_r = g.flux_nf(dir, g.nvx() - 1, ey * p + jl);
                        let mut acc_l = 0.0;
                        let mut acc_r = 0.0;
                        for r in 0..nq {
                            let y = ya + (t.quad.nodes[r] + 1.0) * half;
                            acc_l += t.quad.weights[r] * comp(Wall::Left, x0, y) * t.e[jl][r];
                            acc_r += t.quad.weights[r] * comp(Wall::Right, x1, y) * t.e[jl][r];
                        }
                        out[row_l] += -mu * acc_l;
                        out[row_r] += mu * acc_r;
                    }
                }
                let (y0, y1) = g.spec.y_range;
                for ex in 0..g.spec.nel_x {
                    let (xa, xb) = g.elem_x_bounds(ex);
                    let half = 0.5 * (xb - xa);
                    for a in 0..=p {
                        let row_b = g.flux_sh(dir, ex * (p + 1) + a, 0);
                        let row_t = g.flux_sh(dir, ex * (p + 1) + a, g.ny());
                        let mut acc_b = 0.0;
                        let mut acc_t = 0.0;
                        for q in 0..nq {
                            let x = xa + (t.quad.nodes[q] + 1.0) * half;
                            acc_b += t.quad.weights[q] * comp(Wall::Bottom, x, y0) * t.et[a][q];
                            acc_t += t.quad.weights[q] * comp(Wall::Top, x, y1) * t.et[a][q];
                        }
                        out[row_b] += -mu * acc_b;
                        out[row_t] += mu * acc_t;
                    }
                }
            }
            Dir::Y => {
                let (y0, y1) = g.spec.y_range;
                for ex in 0..g.spec.nel_x {
                    let (xa, xb) = g.elem_x_bounds(ex);
                    let half = 0.5 * (xb - xa);
                    for i in 0..p {
                        let row_b = g.flux_nf(dir, ex * p + i, 0);
                        let row_t = g.flux_nf(dir, ex * p + i, g.nvy() - 1);
                        let mut acc_b = 0.0;
                        let mut acc_t = 0.0;
                        for q in 0..nq {
                            let x = xa + (t.quad.nodes[q] + 1.0) * half;
                            acc_b += t.quad.weights[q] * comp(Wall::Bottom, x, y0) * t.e[i][q];
                            acc_t += t.quad.weights[q] * comp(Wall::Top, x, y1) * t.e[i][q];
                        }
                        out[row_b] += -mu * acc_b;
                        out[row_t] += mu * acc_t;
                    }
                }
                let (x0, x1) = g.spec.x_range;
                for ey in 0..g.spec.nel_y {
                    let (ya, yb) = g.elem_y_bounds(ey);
                    let half = 0.5 * (yb - ya);
                    for b in 0..=p {
                        let row_l = g.flux_sh(dir, 0, ey * (p + 1) + b);
                        let row_r = g.flux_sh(dir, g.nx(), ey * (p + 1) + b);
                        let mut acc_l = 0.0;
                        let mut acc_r = 0.0;
                        for r in 0..nq {
                            let y = ya + (t.quad.nodes[r] + 1.0) * half;
                            acc_l += t.quad.weights[r] * comp(Wall::Left, x0, y) * t.et[b][r];
                            acc_r += t.quad.weights[r] * comp(Wall::Right, x1, y) * t.et[b][r];
                        }
                        out[row_l] += -mu * acc_l;
                        out[row_r] += mu * acc_r;
                    }
                }
            }
        }
        out
    }

    /// Prescribed-pressure contribution to the pressure force on wall faces
    /// (zero when no wall carries pressure data). Walls with data have their
    /// rows of the trace operator cleared by [`Operators::apply_pressure_bc`].
    pub fn boundary_pressure(&self, dir: Dir, bc: &BoundaryData) -> Vec<f64> {
        let g = &self.grid;
        let quad = &self.tabs.quad;
        let mut out = vec![0.0; g.n_flux(dir)];
        match dir {
            Dir::X => {
                let (x0, x1) = g.spec.x_range;
                for (wall, l, x) in [(Wall::Left, 0, x0), (Wall::Right, g.nvx() - 1, x1)] {
                    if let Some(pfun) = &bc.wall(wall).pressure {
                        for j in 0..g.ny() {
                            let (ya, yb) = (g.lines_y[j], g.lines_y[j + 1]);
                            out[g.flux_nf(dir, l, j)] = seg_quad(quad, ya, yb, |y| pfun(x, y));
                        }
                    }
                }
            }
            Dir::Y => {
                let (y0, y1) = g.spec.y_range;
                for (wall, m, y) in [(Wall::Bottom, 0, y0), (Wall::Top, g.nvy() - 1, y1)] {
                    if let Some(pfun) = &bc.wall(wall).pressure {
                        for i in 0..g.nx() {
                            let (xa, xb) = (g.lines_x[i], g.lines_x[i + 1]);
                            out[g.flux_nf(dir, i, m)] = seg_quad(quad, xa, xb, |x| pfun(x, y));
                        }
                    }
                }
            }
        }
        out
    }

    /// Zero-extended edge cochain holding the prescribed normal fluxes on
    /// the boundary edges: integrals of the wall-normal velocity data.
    pub fn reduce_boundary_normal(&self, bc: &BoundaryData) -> Vec<f64> {
        let g = &self.grid;
        // Prescribed data integrals deserve a rule well beyond the basis
        // order: the global compatibility defect of smooth data then stays
        // at roundoff even on coarse low-order meshes.
        let quad = &gauss_nodes(24.max(g.order() + 2)).expect("bounded rule size");
        let mut out = vec![0.0; g.n_edges()];
        for j in 0..g.ny() {
            for (i, wall) in [(0, Wall::Left), (g.nx(), Wall::Right)] {
                let (x, y0, y1) = g.vedge_segment(i, j);
                let f = &bc.wall(wall).u;
                out[g.edge_idx_v(i, j)] = seg_quad(quad, y0, y1, |y| f(x, y));
            }
        }
        for i in 0..g.nx() {
            for (j, wall) in [(0, Wall::Bottom), (g.ny(), Wall::Top)] {
                let (y, x0, x1) = g.hedge_segment(i, j);
                let f = &bc.wall(wall).v;
                out[g.edge_idx_h(i, j)] = seg_quad(quad, x0, x1, |x| f(x, y));
            }
        }
        out
    }

    /// Returns the pressure trace operator with rows on data-carrying walls
    /// cleared, so that prescribed data replaces the interior trace there.
    pub fn pressure_force_with_bc(&self, dir: Dir, bc: &BoundaryData) -> SparseMat {
        let g = &self.grid;
        let mut pp = self.pp[dir_id(dir)].clone();
        match dir {
            Dir::X => {
                for (wall, l) in [(Wall::Left, 0), (Wall::Right, g.nvx() - 1)] {
                    if bc.wall(wall).pressure.is_some() {
                        for j in 0..g.ny() {
                            pp.clear_row(g.flux_nf(dir, l, j));
                        }
                    }
                }
            }
            Dir::Y => {
                for (wall, m) in [(Wall::Bottom, 0), (Wall::Top, g.nvy() - 1)] {
                    if bc.wall(wall).pressure.is_some() {
                        for i in 0..g.nx() {
                            pp.clear_row(g.flux_nf(dir, i, m));
                        }
                    }
                }
            }
        }
        pp
    }
}

fn seg_quad(rule: &NodeSet, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| w * half * f(mid + half * t))
        .sum()
}

fn box_quad(rule: &NodeSet, x0: f64, x1: f64, y0: f64, y1: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    seg_quad(rule, x0, x1, |x| seg_quad(rule, y0, y1, |y| f(x, y)))
}

fn assemble_m11_normal(g: &GridComplex, t: &RefTables, dir: Dir) -> Mat<f64> {
    let p = g.order();
    let (dx, dy) = (g.elem_dx(), g.elem_dy());
    let n = g.n_nf(dir);
    let mut m = Mat::zeros(n, n);
    for ey in 0..g.spec.nel_y {
        for ex in 0..g.spec.nel_x {
            match dir {
                Dir::X => {
                    for k in 0..=p + 1 {
                        for j in 0..p {
                            let r = g.xnf_g(ex, ey, k, j);
                            for k2 in 0..=p + 1 {
                                for j2 in 0..p {
                                    let c = g.xnf_g(ex, ey, k2, j2);
                                    m[(r, c)] += t.ghtt[k][k2] * t.ge[j][j2] * (dx / dy);
                                }
                            }
                        }
                    }
                }
                Dir::Y => {
                    for i in 0..p {
                        for k in 0..=p + 1 {
                            let r = g.ynf_g(ex, ey, i, k);
                            for i2 in 0..p {
                                for k2 in 0..=p + 1 {
                                    let c = g.ynf_g(ex, ey, i2, k2);
                                    m[(r, c)] += t.ge[i][i2] * t.ghtt[k][k2] * (dy / dx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn assemble_m11_shear(g: &GridComplex, t: &RefTables, dir: Dir) -> Mat<f64> {
    let p = g.order();
    let (dx, dy) = (g.elem_dx(), g.elem_dy());
    let n = g.n_sh(dir);
    let mut m = Mat::zeros(n, n);
    for ey in 0..g.spec.nel_y {
        for ex in 0..g.spec.nel_x {
            match dir {
                Dir::X => {
                    for a in 0..=p {
                        for jl in 0..=p {
                            let r = g.xsh_g(ex, ey, a, jl);
                            for a2 in 0..=p {
                                for jl2 in 0..=p {
                                    let c = g.xsh_g(ex, ey, a2, jl2);
                                    m[(r, c)] += t.gett[a][a2] * t.gh[jl][jl2] * (dy / dx);
                                }
                            }
                        }
                    }
                }
                Dir::Y => {
                    for il in 0..=p {
                        for b in 0..=p {
                            let r = g.ysh_g(ex, ey, il, b);
                            for il2 in 0..=p {
                                for b2 in 0..=p {
                                    let c = g.ysh_g(ex, ey, il2, b2);
                                    m[(r, c)] += t.gh[il][il2] * t.gett[b][b2] * (dx / dy);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn assemble_m22(g: &GridComplex, t: &RefTables, dir: Dir) -> SparseMat {
    let p = g.order();
    let (dx, dy) = (g.elem_dx(), g.elem_dy());
    let scale = 4.0 / (dx * dy);
    let mut m = SparseMat::new(g.n_pieces(dir), g.n_pieces(dir));
    for ey in 0..g.spec.nel_y {
        for ex in 0..g.spec.nel_x {
            match dir {
                Dir::X => {
                    for a in 0..=p {
                        for j in 0..p {
                            let r = g.xpiece_g(ex, ey, a, j);
                            for a2 in 0..=p {
                                for j2 in 0..p {
                                    let c = g.xpiece_g(ex, ey, a2, j2);
                                    m.add(r, c, t.gett[a][a2] * t.ge[j][j2] * scale);
                                }
                            }
                        }
                    }
                }
                Dir::Y => {
                    for i in 0..p {
                        for b in 0..=p {
                            let r = g.ypiece_g(ex, ey, i, b);
                            for i2 in 0..p {
                                for b2 in 0..=p {
                                    let c = g.ypiece_g(ex, ey, i2, b2);
                                    m.add(r, c, t.ge[i][i2] * t.gett[b][b2] * scale);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn assemble_pm(g: &GridComplex, t: &RefTables, dir: Dir) -> SparseMat {
    let p = g.order();
    let (dx, dy) = (g.elem_dx(), g.elem_dy());
    let mut m = SparseMat::new(g.n_pieces(dir), g.n_edges());
    for ey in 0..g.spec.nel_y {
        for ex in 0..g.spec.nel_x {
            match dir {
                Dir::X => {
                    // Integrating the velocity expansion over a piece splits
                    // into the cardinal integral along x and the exact edge
                    // duality along y.
                    for a in 0..=p {
                        for j in 0..p {
                            let r = g.xpiece_g(ex, ey, a, j);
                            for i in 0..=p {
                                m.add(r, g.vedge_g(ex, ey, i, j), t.sh[a][i] * dx * 0.5);
                            }
                        }
                    }
                }
                Dir::Y => {
                    for i in 0..p {
                        for b in 0..=p {
                            let r = g.ypiece_g(ex, ey, i, b);
                            for j in 0..=p {
                                m.add(r, g.hedge_g(ex, ey, i, j), t.sh[b][j] * dy * 0.5);
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn build_merge(g: &GridComplex, dir: Dir) -> SparseMat {
    let mut m = SparseMat::new(g.n_volumes(dir), g.n_pieces(dir));
    match dir {
        Dir::X => {
            for j in 0..g.ny() {
                for s in 0..=g.nx() {
                    let r = g.xvol_idx(s, j);
                    for q in g.slot_pieces(s, g.nx()) {
                        m.add(r, g.xpiece_idx(q, j), 1.0);
                    }
                }
            }
        }
        Dir::Y => {
            for t in 0..=g.ny() {
                for i in 0..g.nx() {
                    let r = g.yvol_idx(i, t);
                    for q in g.slot_pieces(t, g.ny()) {
                        m.add(r, g.ypiece_idx(i, q), 1.0);
                    }
                }
            }
        }
    }
    m
}

fn assemble_pp(g: &GridComplex, t: &RefTables, dir: Dir) -> SparseMat {
    let p = g.order();
    let (dx, dy) = (g.elem_dx(), g.elem_dy());
    let mut m = SparseMat::new(g.n_flux(dir), g.n_cells());
    // The pressure force on a face is the face integral of the pressure
    // expansion; along the face the edge duality is exact, across it the
    // trace is evaluated at the face line. Interface lines average the two
    // one-sided traces.
    match dir {
        Dir::X => {
            for ey in 0..g.spec.nel_y {
                for ex in 0..g.spec.nel_x {
                    for k in 0..=p + 1 {
                        let l = g.vline_x_g(ex, k);
                        let w = if g.is_interface_vline(l, g.nvx()) { 0.5 } else { 1.0 };
                        for j in 0..p {
                            let r = g.flux_nf(dir, l, ey * p + j);
                            for c in 0..p {
                                m.add(
                                    r,
                                    g.cell_g(ex, ey, c, j),
                                    w * t.ee[k][c] * 2.0 / dx,
                                );
                            }
                        }
                    }
                }
            }
        }
        Dir::Y => {
            for ey in 0..g.spec.nel_y {
                for ex in 0..g.spec.nel_x {
                    for k in 0..=p + 1 {
                        let mline = g.vline_y_g(ey, k);
                        let w = if g.is_interface_vline(mline, g.nvy()) { 0.5 } else { 1.0 };
                        for i in 0..p {
                            let r = g.flux_nf(dir, ex * p + i, mline);
                            for d in 0..p {
                                m.add(
                                    r,
                                    g.cell_g(ex, ey, i, d),
                                    w * t.ee[k][d] * 2.0 / dy,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn build_kdiff(dt_pieces: &IncidenceMatrix, m22: &SparseMat) -> SparseMat {
    let mut k = SparseMat::new(dt_pieces.ncols(), dt_pieces.nrows());
    for piece in 0..dt_pieces.nrows() {
        for &(face, sign) in dt_pieces.row(piece) {
            for (c, v) in m22.row(piece) {
                k.add(face, c, sign as f64 * v);
            }
        }
    }
    k
}
