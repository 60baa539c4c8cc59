//! Tensor-product grid complex on a rectangle: primal points, edges and
//! cells shared across element interfaces, plus the staggered momentum
//! tiling used for the discrete balance laws.
//!
//! The primal grid is the per-element Gauss-Lobatto lattice. The dual grid
//! in each direction consists of the element-interior Gauss points extended
//! by the domain endpoints; the staggered control volumes for x-momentum
//! span consecutive dual x-lines crossed with primal y-intervals, one volume
//! per x-velocity unknown (volumes straddling an element interface merge the
//! two half-cells, boundary half-width volumes are kept). Face unknowns of
//! those volumes split into "normal" fluxes, which live on dual lines and
//! are shared between neighboring volumes, and "shear" fluxes on element
//! local sub-segments of primal lines. Volumes additionally decompose into
//! element-local pieces, the supports of the momentum density basis.
//!
//! Incidence matrices carry only entries in {-1, 0, +1}; they are exact
//! topological derivative operators, so composing consecutive ones gives
//! exactly zero.

use std::fmt::Write as _;

use crate::poly::{gauss_nodes, gll_nodes, NodeSet};
use crate::{Error, Result};

/// Momentum direction selector for the staggered tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    X,
    Y,
}

/// Domain walls, named from inside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

/// Rectangle, element grid and polynomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nel_x: usize,
    pub nel_y: usize,
    pub order: usize,
}

impl DomainSpec {
    pub fn unit_square(nel_x: usize, nel_y: usize, order: usize) -> Self {
        Self {
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            nel_x,
            nel_y,
            order,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nel_x < 1 || self.nel_y < 1 {
            return Err(Error::InvalidParameter(
                "element counts must be at least 1".into(),
            ));
        }
        if self.order < 1 || self.order > 32 {
            return Err(Error::InvalidParameter(
                "polynomial order must be in 1..=32".into(),
            ));
        }
        if !(self.x_range.1 > self.x_range.0) || !(self.y_range.1 > self.y_range.0) {
            return Err(Error::InvalidParameter(
                "domain ranges must be increasing and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse integer matrix with entries in {-1, 0, +1}.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<(usize, i8)>>,
}

impl IncidenceMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    fn push(&mut self, r: usize, c: usize, sign: i8) {
        debug_assert!(r < self.nrows && c < self.ncols);
        debug_assert!(sign == 1 || sign == -1);
        debug_assert!(
            !self.rows[r].iter().any(|&(cc, _)| cc == c),
            "duplicate incidence entry"
        );
        self.rows[r].push((c, sign));
    }

    fn sort_rows(&mut self) {
        for row in &mut self.rows {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
    }

    pub fn row(&self, r: usize) -> &[(usize, i8)] {
        &self.rows[r]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Exact integer-weighted combination of `x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(c, s)| if s > 0 { x[c] } else { -x[c] })
                    .sum()
            })
            .collect()
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, s) in row {
                out[c] += if s > 0 { x[r] } else { -x[r] };
            }
        }
        out
    }

    pub fn transpose(&self) -> IncidenceMatrix {
        let mut t = IncidenceMatrix::new(self.ncols, self.nrows);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, s) in row {
                t.rows[c].push((r, s));
            }
        }
        t.sort_rows();
        t
    }

    /// Integer product `self * rhs`; entries accumulate exactly in i64.
    pub fn compose(&self, rhs: &IncidenceMatrix) -> Vec<Vec<(usize, i64)>> {
        assert_eq!(self.ncols, rhs.nrows);
        let mut out: Vec<Vec<(usize, i64)>> = Vec::with_capacity(self.nrows);
        for row in &self.rows {
            let mut acc: std::collections::BTreeMap<usize, i64> = Default::default();
            for &(k, s) in row {
                for &(c, s2) in &rhs.rows[k] {
                    *acc.entry(c).or_insert(0) += (s as i64) * (s2 as i64);
                }
            }
            out.push(acc.into_iter().filter(|&(_, v)| v != 0).collect());
        }
        out
    }

    pub fn compose_is_zero(&self, rhs: &IncidenceMatrix) -> bool {
        self.compose(rhs).iter().all(|r| r.is_empty())
    }

    pub fn to_sparse(&self) -> crate::la::SparseMat {
        let mut s = crate::la::SparseMat::new(self.nrows, self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, sign) in row {
                s.add(r, c, sign as f64);
            }
        }
        s
    }
}

/// The assembled grid complex. `order` is written `p` throughout; `nx` and
/// `ny` count primal intervals (`nel * p`) per direction.
#[derive(Debug, Clone)]
pub struct GridComplex {
    pub spec: DomainSpec,
    pub gll: NodeSet,
    pub gauss: NodeSet,
    p: usize,
    nx: usize,
    ny: usize,
    /// Primal lines per direction, element interfaces deduplicated.
    pub lines_x: Vec<f64>,
    pub lines_y: Vec<f64>,
    /// Dual lines: domain ends plus interior Gauss lines of every element.
    pub dlines_x: Vec<f64>,
    pub dlines_y: Vec<f64>,
    /// Dual lines extended by element interfaces (face lattice of pieces).
    pub vlines_x: Vec<f64>,
    pub vlines_y: Vec<f64>,
}

impl GridComplex {
    pub fn build(spec: DomainSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.order;
        let gll = gll_nodes(p)?;
        let gauss = gauss_nodes(p)?;
        let build_axis = |a: f64, b: f64, nel: usize| {
            let d = (b - a) / nel as f64;
            let origin = |e: usize| a + e as f64 * d;
            let mut lines = Vec::with_capacity(nel * p + 1);
            let mut dlines = Vec::with_capacity(nel * p + 2);
            let mut vlines = Vec::with_capacity(nel * (p + 1) + 1);
            dlines.push(a);
            for e in 0..nel {
                let x0 = origin(e);
                vlines.push(x0);
                for i in 0..p {
                    lines.push(x0 + (gll.nodes[i] + 1.0) * 0.5 * d);
                }
                for i in 0..p {
                    let g = x0 + (gauss.nodes[i] + 1.0) * 0.5 * d;
                    dlines.push(g);
                    vlines.push(g);
                }
            }
            lines.push(b);
            dlines.push(b);
            vlines.push(b);
            (lines, dlines, vlines)
        };
        let (lines_x, dlines_x, vlines_x) = build_axis(spec.x_range.0, spec.x_range.1, spec.nel_x);
        let (lines_y, dlines_y, vlines_y) = build_axis(spec.y_range.0, spec.y_range.1, spec.nel_y);
        let nx = spec.nel_x * p;
        let ny = spec.nel_y * p;
        Ok(Self {
            spec,
            gll,
            gauss,
            p,
            nx,
            ny,
            lines_x,
            lines_y,
            dlines_x,
            dlines_y,
            vlines_x,
            vlines_y,
        })
    }

    pub fn order(&self) -> usize {
        self.p
    }

    /// Primal x-intervals (`nel_x * p`).
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Piece slots along x (`nel_x * (p + 1)`).
    pub fn npx(&self) -> usize {
        self.spec.nel_x * (self.p + 1)
    }

    pub fn npy(&self) -> usize {
        self.spec.nel_y * (self.p + 1)
    }

    /// Extended dual lines along x (`npx + 1`).
    pub fn nvx(&self) -> usize {
        self.npx() + 1
    }

    pub fn nvy(&self) -> usize {
        self.npy() + 1
    }

    pub fn elem_dx(&self) -> f64 {
        (self.spec.x_range.1 - self.spec.x_range.0) / self.spec.nel_x as f64
    }

    pub fn elem_dy(&self) -> f64 {
        (self.spec.y_range.1 - self.spec.y_range.0) / self.spec.nel_y as f64
    }

    pub fn elem_x_bounds(&self, ex: usize) -> (f64, f64) {
        let a = self.spec.x_range.0 + ex as f64 * self.elem_dx();
        let b = if ex + 1 == self.spec.nel_x {
            self.spec.x_range.1
        } else {
            self.spec.x_range.0 + (ex + 1) as f64 * self.elem_dx()
        };
        (a, b)
    }

    pub fn elem_y_bounds(&self, ey: usize) -> (f64, f64) {
        let a = self.spec.y_range.0 + ey as f64 * self.elem_dy();
        let b = if ey + 1 == self.spec.nel_y {
            self.spec.y_range.1
        } else {
            self.spec.y_range.0 + (ey + 1) as f64 * self.elem_dy()
        };
        (a, b)
    }

    // ---- primal entity counts and indices ----

    pub fn n_points(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_vedges(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_hedges(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_edges(&self) -> usize {
        self.n_vedges() + self.n_hedges()
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn point_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        j * (self.nx + 1) + i
    }

    /// Vertical edge on x-line `i`, y-interval `j`; carries x-directed flux.
    pub fn vedge_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    /// Horizontal edge on x-interval `i`, y-line `j`; carries y-directed flux.
    pub fn hedge_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    /// Global edge index of a vertical edge (vertical block comes first).
    pub fn edge_idx_v(&self, i: usize, j: usize) -> usize {
        self.vedge_idx(i, j)
    }

    pub fn edge_idx_h(&self, i: usize, j: usize) -> usize {
        self.n_vedges() + self.hedge_idx(i, j)
    }

    pub fn cell_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    // ---- staggered entity counts and indices ----

    pub fn n_volumes(&self, dir: Dir) -> usize {
        match dir {
            Dir::X => (self.nx + 1) * self.ny,
            Dir::Y => self.nx * (self.ny + 1),
        }
    }

    pub fn n_pieces(&self, dir: Dir) -> usize {
        match dir {
            Dir::X => self.npx() * self.ny,
            Dir::Y => self.nx * self.npy(),
        }
    }

    pub fn n_nf(&self, dir: Dir) -> usize {
        match dir {
            Dir::X => self.nvx() * self.ny,
            Dir::Y => self.nx * self.nvy(),
        }
    }

    pub fn n_sh(&self, dir: Dir) -> usize {
        match dir {
            Dir::X => self.npx() * (self.ny + 1),
            Dir::Y => (self.nx + 1) * self.npy(),
        }
    }

    /// Face unknowns of the staggered tiling: normal block then shear block.
    pub fn n_flux(&self, dir: Dir) -> usize {
        self.n_nf(dir) + self.n_sh(dir)
    }

    /// x-momentum volume at dual slot `s` (0..=nx), y-interval `j`. Indexing
    /// coincides with `vedge_idx(s, j)`, its paired velocity unknown.
    pub fn xvol_idx(&self, s: usize, j: usize) -> usize {
        debug_assert!(s <= self.nx && j < self.ny);
        j * (self.nx + 1) + s
    }

    /// y-momentum volume at x-interval `i`, dual slot `t` (0..=ny); matches
    /// `hedge_idx(i, t)`.
    pub fn yvol_idx(&self, i: usize, t: usize) -> usize {
        debug_assert!(i < self.nx && t <= self.ny);
        t * self.nx + i
    }

    /// Normal flux unknown of the x-tiling: extended dual line `l`, y-interval `j`.
    pub fn xnf_idx(&self, l: usize, j: usize) -> usize {
        debug_assert!(l < self.nvx() && j < self.ny);
        j * self.nvx() + l
    }

    /// Shear flux unknown of the x-tiling: piece slot `q`, y-line `jl`.
    pub fn xsh_idx(&self, q: usize, jl: usize) -> usize {
        debug_assert!(q < self.npx() && jl <= self.ny);
        jl * self.npx() + q
    }

    pub fn ynf_idx(&self, i: usize, m: usize) -> usize {
        debug_assert!(i < self.nx && m < self.nvy());
        m * self.nx + i
    }

    pub fn ysh_idx(&self, il: usize, q: usize) -> usize {
        debug_assert!(il <= self.nx && q < self.npy());
        q * (self.nx + 1) + il
    }

    /// Index of a normal flux unknown inside the combined flux vector.
    pub fn flux_nf(&self, dir: Dir, a: usize, b: usize) -> usize {
        match dir {
            Dir::X => self.xnf_idx(a, b),
            Dir::Y => self.ynf_idx(a, b),
        }
    }

    /// Index of a shear flux unknown inside the combined flux vector.
    pub fn flux_sh(&self, dir: Dir, a: usize, b: usize) -> usize {
        self.n_nf(dir)
            + match dir {
                Dir::X => self.xsh_idx(a, b),
                Dir::Y => self.ysh_idx(a, b),
            }
    }

    /// Momentum density piece of the x-tiling: piece slot `q`, y-interval `j`.
    pub fn xpiece_idx(&self, q: usize, j: usize) -> usize {
        debug_assert!(q < self.npx() && j < self.ny);
        j * self.npx() + q
    }

    pub fn ypiece_idx(&self, i: usize, q: usize) -> usize {
        debug_assert!(i < self.nx && q < self.npy());
        q * self.nx + i
    }

    // ---- element-local to global maps (local indices within element (ex, ey)) ----
    // Edge maps index into the combined edge vector, vertical block first.

    pub fn vedge_g(&self, ex: usize, ey: usize, il: usize, jl: usize) -> usize {
        debug_assert!(il <= self.p && jl < self.p);
        self.edge_idx_v(ex * self.p + il, ey * self.p + jl)
    }

    pub fn hedge_g(&self, ex: usize, ey: usize, il: usize, jl: usize) -> usize {
        debug_assert!(il < self.p && jl <= self.p);
        self.edge_idx_h(ex * self.p + il, ey * self.p + jl)
    }

    pub fn cell_g(&self, ex: usize, ey: usize, il: usize, jl: usize) -> usize {
        debug_assert!(il < self.p && jl < self.p);
        self.cell_idx(ex * self.p + il, ey * self.p + jl)
    }

    /// Local extended dual line `k` in 0..=p+1 of element `ex`.
    pub fn vline_x_g(&self, ex: usize, k: usize) -> usize {
        debug_assert!(k <= self.p + 1);
        ex * (self.p + 1) + k
    }

    pub fn vline_y_g(&self, ey: usize, k: usize) -> usize {
        debug_assert!(k <= self.p + 1);
        ey * (self.p + 1) + k
    }

    pub fn xnf_g(&self, ex: usize, ey: usize, k: usize, jl: usize) -> usize {
        self.xnf_idx(self.vline_x_g(ex, k), ey * self.p + jl)
    }

    pub fn xsh_g(&self, ex: usize, ey: usize, a: usize, jl: usize) -> usize {
        debug_assert!(a <= self.p && jl <= self.p);
        self.xsh_idx(ex * (self.p + 1) + a, ey * self.p + jl)
    }

    pub fn xpiece_g(&self, ex: usize, ey: usize, a: usize, jl: usize) -> usize {
        debug_assert!(a <= self.p && jl < self.p);
        self.xpiece_idx(ex * (self.p + 1) + a, ey * self.p + jl)
    }

    pub fn ynf_g(&self, ex: usize, ey: usize, il: usize, k: usize) -> usize {
        self.ynf_idx(ex * self.p + il, self.vline_y_g(ey, k))
    }

    pub fn ysh_g(&self, ex: usize, ey: usize, il: usize, b: usize) -> usize {
        debug_assert!(il <= self.p && b <= self.p);
        self.ysh_idx(ex * self.p + il, ey * (self.p + 1) + b)
    }

    pub fn ypiece_g(&self, ex: usize, ey: usize, il: usize, b: usize) -> usize {
        debug_assert!(il < self.p && b <= self.p);
        self.ypiece_idx(ex * self.p + il, ey * (self.p + 1) + b)
    }

    // ---- dual slot geometry ----

    /// Extended-line index of dual line `s` of the axis with `n` primal
    /// intervals (dual lines skip element interfaces, extended lines do not).
    fn vline_of_dline(&self, s: usize, n: usize) -> usize {
        debug_assert!(s <= n + 1);
        if s == 0 {
            0
        } else if s == n + 1 {
            n + n / self.p
        } else {
            let e = (s - 1) / self.p;
            let k = (s - 1) % self.p + 1;
            e * (self.p + 1) + k
        }
    }

    fn vline_of_dline_x(&self, s: usize) -> usize {
        self.vline_of_dline(s, self.nx)
    }

    fn vline_of_dline_y(&self, s: usize) -> usize {
        self.vline_of_dline(s, self.ny)
    }

    /// Piece slots covering dual slot `s`; two when the slot straddles an
    /// element interface, one otherwise.
    pub fn slot_pieces(&self, s: usize, n: usize) -> Vec<usize> {
        debug_assert!(s <= n);
        let p = self.p;
        if s % p == 0 {
            let mut v = Vec::with_capacity(2);
            if s > 0 {
                v.push((s / p - 1) * (p + 1) + p);
            }
            if s < n {
                v.push((s / p) * (p + 1));
            }
            v
        } else {
            vec![(s / p) * (p + 1) + s % p]
        }
    }

    /// Dual slot containing piece slot `q`.
    pub fn piece_parent_slot(&self, q: usize) -> usize {
        let e = q / (self.p + 1);
        e * self.p + q % (self.p + 1)
    }

    /// True for element-interface extended lines, which bound pieces but are
    /// interior to a merged volume.
    pub fn is_interface_vline(&self, l: usize, nv: usize) -> bool {
        l > 0 && l + 1 < nv && l % (self.p + 1) == 0
    }

    // ---- coordinates and extents ----

    /// Bounds `(x0, x1, y0, y1)` of a staggered volume.
    pub fn vol_bounds(&self, dir: Dir, idx: usize) -> (f64, f64, f64, f64) {
        match dir {
            Dir::X => {
                let s = idx % (self.nx + 1);
                let j = idx / (self.nx + 1);
                (
                    self.dlines_x[s],
                    self.dlines_x[s + 1],
                    self.lines_y[j],
                    self.lines_y[j + 1],
                )
            }
            Dir::Y => {
                let i = idx % self.nx;
                let t = idx / self.nx;
                (
                    self.lines_x[i],
                    self.lines_x[i + 1],
                    self.dlines_y[t],
                    self.dlines_y[t + 1],
                )
            }
        }
    }

    pub fn vol_area(&self, dir: Dir, idx: usize) -> f64 {
        let (x0, x1, y0, y1) = self.vol_bounds(dir, idx);
        (x1 - x0) * (y1 - y0)
    }

    /// Bounds of a momentum density piece.
    pub fn piece_bounds(&self, dir: Dir, idx: usize) -> (f64, f64, f64, f64) {
        match dir {
            Dir::X => {
                let q = idx % self.npx();
                let j = idx / self.npx();
                (
                    self.vlines_x[q],
                    self.vlines_x[q + 1],
                    self.lines_y[j],
                    self.lines_y[j + 1],
                )
            }
            Dir::Y => {
                let i = idx % self.nx;
                let q = idx / self.nx;
                (
                    self.lines_x[i],
                    self.lines_x[i + 1],
                    self.vlines_y[q],
                    self.vlines_y[q + 1],
                )
            }
        }
    }

    pub fn cell_bounds(&self, idx: usize) -> (f64, f64, f64, f64) {
        let i = idx % self.nx;
        let j = idx / self.nx;
        (
            self.lines_x[i],
            self.lines_x[i + 1],
            self.lines_y[j],
            self.lines_y[j + 1],
        )
    }

    pub fn cell_area(&self, idx: usize) -> f64 {
        let (x0, x1, y0, y1) = self.cell_bounds(idx);
        (x1 - x0) * (y1 - y0)
    }

    /// Vertical edge as `(x, y0, y1)`.
    pub fn vedge_segment(&self, i: usize, j: usize) -> (f64, f64, f64) {
        (self.lines_x[i], self.lines_y[j], self.lines_y[j + 1])
    }

    /// Horizontal edge as `(y, x0, x1)`.
    pub fn hedge_segment(&self, i: usize, j: usize) -> (f64, f64, f64) {
        (self.lines_y[j], self.lines_x[i], self.lines_x[i + 1])
    }

    // ---- boundary classification ----

    pub fn vedge_wall(&self, i: usize) -> Option<Wall> {
        if i == 0 {
            Some(Wall::Left)
        } else if i == self.nx {
            Some(Wall::Right)
        } else {
            None
        }
    }

    pub fn hedge_wall(&self, j: usize) -> Option<Wall> {
        if j == 0 {
            Some(Wall::Bottom)
        } else if j == self.ny {
            Some(Wall::Top)
        } else {
            None
        }
    }

    /// Whether the staggered volume row is pinned by a strong velocity value
    /// (its paired edge lies on the boundary).
    pub fn vol_on_wall(&self, dir: Dir, idx: usize) -> bool {
        match dir {
            Dir::X => {
                let s = idx % (self.nx + 1);
                s == 0 || s == self.nx
            }
            Dir::Y => {
                let t = idx / self.nx;
                t == 0 || t == self.ny
            }
        }
    }

    /// Locates a point: element indices plus reference coordinates in [-1, 1].
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let fx = (x - self.spec.x_range.0) / self.elem_dx();
        let fy = (y - self.spec.y_range.0) / self.elem_dy();
        let ex = (fx.floor() as isize).clamp(0, self.spec.nel_x as isize - 1) as usize;
        let ey = (fy.floor() as isize).clamp(0, self.spec.nel_y as isize - 1) as usize;
        let (x0, x1) = self.elem_x_bounds(ex);
        let (y0, y1) = self.elem_y_bounds(ey);
        let xi = 2.0 * (x - x0) / (x1 - x0) - 1.0;
        let eta = 2.0 * (y - y0) / (y1 - y0) - 1.0;
        (ex, ey, xi.clamp(-1.0, 1.0), eta.clamp(-1.0, 1.0))
    }

    // ---- incidence matrices ----

    /// Points to edges. Vertical edges are oriented toward +y and horizontal
    /// edges toward -x; with edge values read as fluxes this makes the
    /// composition with [`GridComplex::d21`] vanish identically.
    pub fn d10(&self) -> IncidenceMatrix {
        let mut m = IncidenceMatrix::new(self.n_edges(), self.n_points());
        for j in 0..self.ny {
            for i in 0..=self.nx {
                let r = self.edge_idx_v(i, j);
                m.push(r, self.point_idx(i, j + 1), 1);
                m.push(r, self.point_idx(i, j), -1);
            }
        }
        for j in 0..=self.ny {
            for i in 0..self.nx {
                let r = self.edge_idx_h(i, j);
                m.push(r, self.point_idx(i, j), 1);
                m.push(r, self.point_idx(i + 1, j), -1);
            }
        }
        m.sort_rows();
        m
    }

    /// Edges to cells: net outflow of edge fluxes, right and top faces
    /// positive.
    pub fn d21(&self) -> IncidenceMatrix {
        let mut m = IncidenceMatrix::new(self.n_cells(), self.n_edges());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let r = self.cell_idx(i, j);
                m.push(r, self.edge_idx_v(i + 1, j), 1);
                m.push(r, self.edge_idx_v(i, j), -1);
                m.push(r, self.edge_idx_h(i, j + 1), 1);
                m.push(r, self.edge_idx_h(i, j), -1);
            }
        }
        m.sort_rows();
        m
    }

    /// Face fluxes to merged staggered volumes: net outflow per volume.
    /// Columns on element-interface lines are identically zero because the
    /// adjacent half-cell contributions cancel.
    pub fn d21_tilde(&self, dir: Dir) -> IncidenceMatrix {
        let mut m = IncidenceMatrix::new(self.n_volumes(dir), self.n_flux(dir));
        match dir {
            Dir::X => {
                for j in 0..self.ny {
                    for s in 0..=self.nx {
                        let r = self.xvol_idx(s, j);
                        m.push(r, self.flux_nf(dir, self.vline_of_dline_x(s + 1), j), 1);
                        m.push(r, self.flux_nf(dir, self.vline_of_dline_x(s), j), -1);
                        for q in self.slot_pieces(s, self.nx) {
                            m.push(r, self.flux_sh(dir, q, j + 1), 1);
                            m.push(r, self.flux_sh(dir, q, j), -1);
                        }
                    }
                }
            }
            Dir::Y => {
                for t in 0..=self.ny {
                    for i in 0..self.nx {
                        let r = self.yvol_idx(i, t);
                        m.push(r, self.flux_nf(dir, i, self.vline_of_dline_y(t + 1)), 1);
                        m.push(r, self.flux_nf(dir, i, self.vline_of_dline_y(t)), -1);
                        for q in self.slot_pieces(t, self.ny) {
                            m.push(r, self.flux_sh(dir, i + 1, q), 1);
                            m.push(r, self.flux_sh(dir, i, q), -1);
                        }
                    }
                }
            }
        }
        m.sort_rows();
        m
    }

    /// Face fluxes to element-local pieces: every row has exactly four
    /// entries. Summing the piece rows of a volume reproduces its merged row.
    pub fn d21_tilde_pieces(&self, dir: Dir) -> IncidenceMatrix {
        let mut m = IncidenceMatrix::new(self.n_pieces(dir), self.n_flux(dir));
        match dir {
            Dir::X => {
                for j in 0..self.ny {
                    for q in 0..self.npx() {
                        let r = self.xpiece_idx(q, j);
                        m.push(r, self.flux_nf(dir, q + 1, j), 1);
                        m.push(r, self.flux_nf(dir, q, j), -1);
                        m.push(r, self.flux_sh(dir, q, j + 1), 1);
                        m.push(r, self.flux_sh(dir, q, j), -1);
                    }
                }
            }
            Dir::Y => {
                for q in 0..self.npy() {
                    for i in 0..self.nx {
                        let r = self.ypiece_idx(i, q);
                        m.push(r, self.flux_nf(dir, i, q + 1), 1);
                        m.push(r, self.flux_nf(dir, i, q), -1);
                        m.push(r, self.flux_sh(dir, i + 1, q), 1);
                        m.push(r, self.flux_sh(dir, i, q), -1);
                    }
                }
            }
        }
        m.sort_rows();
        m
    }

    /// Human-readable dump of the complex for small grids.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "grid: {} x {} elements, order {}, {} x {} intervals",
            self.spec.nel_x, self.spec.nel_y, self.p, self.nx, self.ny
        );
        let _ = writeln!(
            s,
            "counts: points {} vedges {} hedges {} cells {}",
            self.n_points(),
            self.n_vedges(),
            self.n_hedges(),
            self.n_cells()
        );
        for dir in [Dir::X, Dir::Y] {
            let tag = if dir == Dir::X { "x" } else { "y" };
            let _ = writeln!(
                s,
                "staggered {}: volumes {} pieces {} normal {} shear {}",
                tag,
                self.n_volumes(dir),
                self.n_pieces(dir),
                self.n_nf(dir),
                self.n_sh(dir)
            );
        }
        let _ = writeln!(s, "primal x lines: {:?}", self.lines_x);
        let _ = writeln!(s, "primal y lines: {:?}", self.lines_y);
        let _ = writeln!(s, "dual x lines: {:?}", self.dlines_x);
        let _ = writeln!(s, "dual y lines: {:?}", self.dlines_y);
        for j in 0..self.ny {
            for i in 0..=self.nx {
                let (x, y0, y1) = self.vedge_segment(i, j);
                let _ = writeln!(
                    s,
                    "vedge {} at x={:.6} y=({:.6},{:.6}) wall={:?} orient=+y flux=+x",
                    self.vedge_idx(i, j),
                    x,
                    y0,
                    y1,
                    self.vedge_wall(i)
                );
            }
        }
        for j in 0..=self.ny {
            for i in 0..self.nx {
                let (y, x0, x1) = self.hedge_segment(i, j);
                let _ = writeln!(
                    s,
                    "hedge {} at y={:.6} x=({:.6},{:.6}) wall={:?} orient=-x flux=+y",
                    self.hedge_idx(i, j),
                    y,
                    x0,
                    x1,
                    self.hedge_wall(j)
                );
            }
        }
        for dir in [Dir::X, Dir::Y] {
            let tag = if dir == Dir::X { "x" } else { "y" };
            for v in 0..self.n_volumes(dir) {
                let (x0, x1, y0, y1) = self.vol_bounds(dir, v);
                let _ = writeln!(
                    s,
                    "{}vol {} bounds=({:.6},{:.6})x({:.6},{:.6}) wall={}",
                    tag,
                    v,
                    x0,
                    x1,
                    y0,
                    y1,
                    self.vol_on_wall(dir, v)
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grid(nel_x: usize, nel_y: usize, p: usize) -> GridComplex {
        GridComplex::build(DomainSpec::unit_square(nel_x, nel_y, p)).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridComplex::build(DomainSpec::unit_square(0, 1, 2)).is_err());
        assert!(GridComplex::build(DomainSpec::unit_square(1, 1, 0)).is_err());
        let mut s = DomainSpec::unit_square(1, 1, 2);
        s.x_range = (1.0, 0.0);
        assert!(GridComplex::build(s).is_err());
    }

    #[test]
    fn single_element_order_one_counts() {
        let g = grid(1, 1, 1);
        assert_eq!(g.n_points(), 4);
        assert_eq!(g.n_edges(), 4);
        assert_eq!(g.n_cells(), 1);
        assert_eq!(g.n_volumes(Dir::X), 2);
        assert_eq!(g.n_volumes(Dir::Y), 2);
        assert_eq!(g.n_pieces(Dir::X), 2);
        assert_eq!(g.n_nf(Dir::X), 3);
        assert_eq!(g.n_sh(Dir::X), 4);
    }

    #[test]
    fn single_element_order_two_counts() {
        let g = grid(1, 1, 2);
        assert_eq!(g.n_points(), 9);
        assert_eq!(g.n_edges(), 12);
        assert_eq!(g.n_cells(), 4);
        assert_eq!(g.n_volumes(Dir::X), 6);
        assert_eq!(g.n_pieces(Dir::X), 6);
        assert_eq!(g.n_nf(Dir::X), 8);
        assert_eq!(g.n_sh(Dir::X), 9);
    }

    #[test]
    fn interface_edges_are_shared() {
        // 2x1 elements at order 2: the interface line carries one set of
        // vertical edges, counted once.
        let g = grid(2, 1, 2);
        assert_eq!(g.nx(), 4);
        assert_eq!(g.n_vedges(), 5 * 2);
        assert_eq!(g.n_hedges(), 4 * 3);
        // Local right edge of element 0 and local left edge of element 1 map
        // to the same global index.
        assert_eq!(g.vedge_g(0, 0, 2, 0), g.vedge_g(1, 0, 0, 0));
    }

    #[test]
    fn counts_match_brute_force_coordinate_enumeration() {
        for (nel_x, nel_y, p) in [(2, 2, 2), (3, 2, 3), (2, 3, 1)] {
            let g = grid(nel_x, nel_y, p);
            let key = |x: f64, y: f64| {
                ((x * 1e9).round() as i64, (y * 1e9).round() as i64)
            };
            let mut points = BTreeSet::new();
            let mut vedges = BTreeSet::new();
            let mut hedges = BTreeSet::new();
            let mut cells = BTreeSet::new();
            for ex in 0..nel_x {
                for ey in 0..nel_y {
                    let (x0, x1) = g.elem_x_bounds(ex);
                    let (y0, y1) = g.elem_y_bounds(ey);
                    let map = |t: f64, a: f64, b: f64| a + (t + 1.0) * 0.5 * (b - a);
                    let xs: Vec<f64> = g.gll.nodes.iter().map(|&t| map(t, x0, x1)).collect();
                    let ys: Vec<f64> = g.gll.nodes.iter().map(|&t| map(t, y0, y1)).collect();
                    for &x in &xs {
                        for &y in &ys {
                            points.insert(key(x, y));
                        }
                    }
                    for &x in &xs {
                        for jw in ys.windows(2) {
                            vedges.insert(key(x, 0.5 * (jw[0] + jw[1])));
                        }
                    }
                    for iw in xs.windows(2) {
                        for &y in &ys {
                            hedges.insert(key(0.5 * (iw[0] + iw[1]), y));
                        }
                    }
                    for iw in xs.windows(2) {
                        for jw in ys.windows(2) {
                            cells.insert(key(0.5 * (iw[0] + iw[1]), 0.5 * (jw[0] + jw[1])));
                        }
                    }
                }
            }
            assert_eq!(points.len(), g.n_points());
            assert_eq!(vedges.len(), g.n_vedges());
            assert_eq!(hedges.len(), g.n_hedges());
            assert_eq!(cells.len(), g.n_cells());
        }
    }

    #[test]
    fn euler_characteristic_is_one() {
        for (nel_x, nel_y, p) in [(1, 1, 1), (1, 1, 4), (2, 3, 2), (3, 3, 3)] {
            let g = grid(nel_x, nel_y, p);
            let chi = g.n_points() as i64 - g.n_edges() as i64 + g.n_cells() as i64;
            assert_eq!(chi, 1);
        }
    }

    #[test]
    fn d10_single_element_order_one_is_square_boundary_map() {
        let g = grid(1, 1, 1);
        let d10 = g.d10();
        assert_eq!(d10.nrows(), 4);
        assert_eq!(d10.ncols(), 4);
        // Vertical edges run toward +y, horizontal edges toward -x.
        assert_eq!(d10.row(g.edge_idx_v(0, 0)), &[(0, -1), (2, 1)]);
        assert_eq!(d10.row(g.edge_idx_v(1, 0)), &[(1, -1), (3, 1)]);
        assert_eq!(d10.row(g.edge_idx_h(0, 0)), &[(0, 1), (1, -1)]);
        assert_eq!(d10.row(g.edge_idx_h(0, 1)), &[(2, 1), (3, -1)]);
    }

    #[test]
    fn d10_rows_have_one_head_one_tail() {
        let g = grid(2, 2, 3);
        let d10 = g.d10();
        for r in 0..d10.nrows() {
            let row = d10.row(r);
            assert_eq!(row.len(), 2);
            let sum: i64 = row.iter().map(|&(_, s)| s as i64).sum();
            assert_eq!(sum, 0);
        }
    }

    #[test]
    fn d21_single_element_order_one_signs() {
        let g = grid(1, 1, 1);
        let d21 = g.d21();
        assert_eq!(d21.nrows(), 1);
        let row = d21.row(0);
        assert_eq!(row.len(), 4);
        // Right and top faces positive, left and bottom negative.
        let get = |c: usize| row.iter().find(|&&(cc, _)| cc == c).unwrap().1;
        assert_eq!(get(g.edge_idx_v(1, 0)), 1);
        assert_eq!(get(g.edge_idx_v(0, 0)), -1);
        assert_eq!(get(g.edge_idx_h(0, 1)), 1);
        assert_eq!(get(g.edge_idx_h(0, 0)), -1);
    }

    #[test]
    fn d21_after_d10_is_zero_exactly() {
        let g = grid(3, 2, 3);
        assert!(g.d21().compose_is_zero(&g.d10()));
    }

    #[test]
    fn uniform_flux_is_divergence_free() {
        let g = GridComplex::build(DomainSpec {
            x_range: (-0.5, 1.0),
            y_range: (-0.5, 1.5),
            nel_x: 2,
            nel_y: 3,
            order: 4,
        })
        .unwrap();
        // Fluxes of the uniform field (2, -3): vertical edges carry 2 * dy,
        // horizontal edges carry -3 * dx.
        let mut u = vec![0.0; g.n_edges()];
        for j in 0..g.ny() {
            for i in 0..=g.nx() {
                let (_, y0, y1) = g.vedge_segment(i, j);
                u[g.edge_idx_v(i, j)] = 2.0 * (y1 - y0);
            }
        }
        for j in 0..=g.ny() {
            for i in 0..g.nx() {
                let (_, x0, x1) = g.hedge_segment(i, j);
                u[g.edge_idx_h(i, j)] = -3.0 * (x1 - x0);
            }
        }
        let div = g.d21().apply(&u);
        for v in div {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn staggered_row_structure() {
        let g = grid(2, 2, 3);
        for dir in [Dir::X, Dir::Y] {
            let d = g.d21_tilde(dir);
            let n_across = if dir == Dir::X { g.nx() } else { g.ny() };
            for v in 0..d.nrows() {
                let slot = match dir {
                    Dir::X => v % (g.nx() + 1),
                    Dir::Y => v / g.nx(),
                };
                let expect = if slot % g.order() == 0 && slot > 0 && slot < n_across {
                    6
                } else {
                    4
                };
                assert_eq!(d.row(v).len(), expect, "dir {dir:?} volume {v}");
                let sum: i64 = d.row(v).iter().map(|&(_, s)| s as i64).sum();
                assert_eq!(sum, 0);
            }
        }
    }

    #[test]
    fn staggered_constant_flux_annihilated() {
        let g = grid(3, 2, 2);
        for dir in [Dir::X, Dir::Y] {
            let d = g.d21_tilde(dir);
            let ones = vec![1.0; d.ncols()];
            for v in d.apply(&ones) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn piece_rows_sum_to_merged_rows() {
        let g = grid(2, 3, 3);
        for dir in [Dir::X, Dir::Y] {
            let merged = g.d21_tilde(dir);
            let pieces = g.d21_tilde_pieces(dir);
            for v in 0..merged.nrows() {
                let mut acc: std::collections::BTreeMap<usize, i64> = Default::default();
                match dir {
                    Dir::X => {
                        let s = v % (g.nx() + 1);
                        let j = v / (g.nx() + 1);
                        for q in g.slot_pieces(s, g.nx()) {
                            for &(c, sg) in pieces.row(g.xpiece_idx(q, j)) {
                                *acc.entry(c).or_insert(0) += sg as i64;
                            }
                        }
                    }
                    Dir::Y => {
                        let i = v % g.nx();
                        let t = v / g.nx();
                        for q in g.slot_pieces(t, g.ny()) {
                            for &(c, sg) in pieces.row(g.ypiece_idx(i, q)) {
                                *acc.entry(c).or_insert(0) += sg as i64;
                            }
                        }
                    }
                }
                acc.retain(|_, s| *s != 0);
                let want: std::collections::BTreeMap<usize, i64> = merged
                    .row(v)
                    .iter()
                    .map(|&(c, s)| (c, s as i64))
                    .collect();
                assert_eq!(acc, want, "dir {dir:?} volume {v}");
            }
        }
    }

    #[test]
    fn merged_rows_skip_interface_lines() {
        let g = grid(3, 2, 2);
        let d = g.d21_tilde(Dir::X);
        let mut col_used = vec![false; d.ncols()];
        for r in 0..d.nrows() {
            for &(c, _) in d.row(r) {
                col_used[c] = true;
            }
        }
        for l in 0..g.nvx() {
            for j in 0..g.ny() {
                let c = g.flux_nf(Dir::X, l, j);
                let aux = g.is_interface_vline(l, g.nvx());
                assert_eq!(col_used[c], !aux, "line {l} interval {j}");
            }
        }
    }

    #[test]
    fn piece_level_incidence_against_geometry() {
        // Rebuild the piece rows from coordinates alone: a face flux enters
        // a piece row iff its segment lies on the piece boundary, signed by
        // outward direction.
        let g = grid(1, 1, 3);
        let d = g.d21_tilde_pieces(Dir::X);
        let tol = 1e-12;
        for idx in 0..g.n_pieces(Dir::X) {
            let (x0, x1, y0, y1) = g.piece_bounds(Dir::X, idx);
            let mut expect: Vec<(usize, i8)> = Vec::new();
            for l in 0..g.nvx() {
                for j in 0..g.ny() {
                    let x = g.vlines_x[l];
                    let (ya, yb) = (g.lines_y[j], g.lines_y[j + 1]);
                    if (ya - y0).abs() < tol && (yb - y1).abs() < tol {
                        if (x - x1).abs() < tol {
                            expect.push((g.flux_nf(Dir::X, l, j), 1));
                        } else if (x - x0).abs() < tol {
                            expect.push((g.flux_nf(Dir::X, l, j), -1));
                        }
                    }
                }
            }
            for q in 0..g.npx() {
                for jl in 0..=g.ny() {
                    let y = g.lines_y[jl];
                    let (xa, xb) = (g.vlines_x[q], g.vlines_x[q + 1]);
                    if (xa - x0).abs() < tol && (xb - x1).abs() < tol {
                        if (y - y1).abs() < tol {
                            expect.push((g.flux_sh(Dir::X, q, jl), 1));
                        } else if (y - y0).abs() < tol {
                            expect.push((g.flux_sh(Dir::X, q, jl), -1));
                        }
                    }
                }
            }
            expect.sort_unstable_by_key(|&(c, _)| c);
            assert_eq!(d.row(idx), expect.as_slice(), "piece {idx}");
        }
    }

    #[test]
    fn dual_slots_nest_between_primal_lines() {
        let g = grid(3, 1, 4);
        // Volume s contains primal line s strictly inside (half-open at the
        // domain boundary).
        for s in 0..=g.nx() {
            let x = g.lines_x[s];
            let (lo, hi) = (g.dlines_x[s], g.dlines_x[s + 1]);
            assert!(lo <= x && x <= hi);
            if s > 0 && s < g.nx() {
                assert!(lo < x && x < hi);
            }
        }
    }

    #[test]
    fn volume_areas_tile_the_domain() {
        let g = GridComplex::build(DomainSpec {
            x_range: (-0.5, 1.0),
            y_range: (-0.5, 1.5),
            nel_x: 2,
            nel_y: 2,
            order: 3,
        })
        .unwrap();
        let total = 1.5 * 2.0;
        for dir in [Dir::X, Dir::Y] {
            let sum: f64 = (0..g.n_volumes(dir)).map(|v| g.vol_area(dir, v)).sum();
            assert_abs_diff_eq!(sum, total, epsilon = 1e-12);
            let sump: f64 = (0..g.n_pieces(dir))
                .map(|q| {
                    let (x0, x1, y0, y1) = g.piece_bounds(dir, q);
                    (x1 - x0) * (y1 - y0)
                })
                .sum();
            assert_abs_diff_eq!(sump, total, epsilon = 1e-12);
        }
    }

    #[test]
    fn locate_resolves_interfaces_and_corners() {
        let g = grid(2, 2, 2);
        let (ex, _, xi, _) = g.locate(0.5, 0.25);
        assert_eq!(ex, 1);
        assert_abs_diff_eq!(xi, -1.0);
        let (ex, ey, xi, eta) = g.locate(1.0, 1.0);
        assert_eq!((ex, ey), (1, 1));
        assert_abs_diff_eq!(xi, 1.0);
        assert_abs_diff_eq!(eta, 1.0);
    }

    #[test]
    fn debug_dump_lists_all_volumes() {
        let g = grid(1, 1, 1);
        let dump = g.debug_dump();
        assert!(dump.contains("xvol 0"));
        assert!(dump.contains("yvol 1"));
        assert!(dump.contains("order 1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn structural_identities_hold(nel_x in 1usize..4, nel_y in 1usize..4, p in 1usize..5) {
            let g = grid(nel_x, nel_y, p);
            let (nx, ny) = (nel_x * p, nel_y * p);
            prop_assert_eq!(g.n_points(), (nx + 1) * (ny + 1));
            prop_assert_eq!(g.n_edges(), (nx + 1) * ny + nx * (ny + 1));
            prop_assert_eq!(g.n_cells(), nx * ny);
            prop_assert_eq!(g.n_volumes(Dir::X), g.n_vedges());
            prop_assert_eq!(g.n_volumes(Dir::Y), g.n_hedges());
            prop_assert!(g.d21().compose_is_zero(&g.d10()));
            for dir in [Dir::X, Dir::Y] {
                let d = g.d21_tilde(dir);
                let ones = vec![1.0; d.ncols()];
                prop_assert!(d.apply(&ones).iter().all(|&v| v == 0.0));
                let dp = g.d21_tilde_pieces(dir);
                for r in 0..dp.nrows() {
                    prop_assert_eq!(dp.row(r).len(), 4);
                }
            }
        }
    }
}
