//! Steady incompressible flow on a masked Cartesian grid.
//!
//! Staggered (MAC) arrangement: pressure at cell centres, `u` on vertical
//! faces, `v` on horizontal faces. Cells whose centre lies in the fluid
//! domain are active. Pressure-velocity coupling follows SIMPLE with a
//! constant effective viscosity, hybrid differencing for convection,
//! Gauss-Seidel sweeps for the momentum predictors and preconditioned
//! conjugate gradients for the pressure correction.
//!
//! Boundary treatment:
//! - faces on the inlet segment carry the uniform inlet velocity;
//! - faces on the outlet segment are unknowns driven against a ghost cell
//!   held at zero gauge pressure, with zero-gradient outflow momentum;
//! - every other fluid/solid face is a no-slip wall.

use std::fmt::Write as _;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{point_in_domain, point_segment_distance, ChannelBoundary, Point2, DEFAULT_WIDTH};

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Uniform inlet speed, m/s.
    pub inlet_velocity: f64,
    /// Physical kinematic viscosity of air, m²/s. Documents the nominal
    /// regime; the momentum equations use `effective_viscosity`.
    pub kinematic_viscosity: f64,
    /// Constant eddy-augmented viscosity used by the solver, m²/s.
    pub effective_viscosity: f64,
    /// Reference channel width, m; sets the cell size with `grid_resolution`.
    pub channel_width: f64,
    /// Cells per channel width.
    pub grid_resolution: usize,
    /// Normalized residual threshold for every equation.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub relaxation_u: f64,
    pub relaxation_p: f64,
    /// Gauss-Seidel sweeps per momentum predictor.
    pub momentum_sweeps: usize,
    /// Relative tolerance of the pressure-correction solve.
    pub pressure_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let inlet_velocity = 8.8;
        Self {
            inlet_velocity,
            kinematic_viscosity: 1.5e-5,
            effective_viscosity: inlet_velocity * DEFAULT_WIDTH / 200.0,
            channel_width: DEFAULT_WIDTH,
            grid_resolution: 10,
            residual_tolerance: 1e-4,
            max_iterations: 4000,
            relaxation_u: 0.7,
            relaxation_p: 0.3,
            momentum_sweeps: 2,
            pressure_tolerance: 1e-8,
        }
    }
}

impl SolverConfig {
    /// Reynolds number of the physical problem (width-based).
    pub fn nominal_reynolds(&self) -> f64 {
        self.inlet_velocity * self.channel_width / self.kinematic_viscosity
    }

    /// Reynolds number the solver actually sees.
    pub fn effective_reynolds(&self) -> f64 {
        self.inlet_velocity * self.channel_width / self.effective_viscosity
    }

    pub fn with_effective_reynolds(mut self, re: f64) -> Self {
        self.effective_viscosity = self.inlet_velocity.abs().max(f64::MIN_POSITIVE) * self.channel_width / re;
        self
    }

    pub fn cell_size(&self) -> f64 {
        self.channel_width / self.grid_resolution as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kinematic_viscosity", self.kinematic_viscosity),
            ("effective_viscosity", self.effective_viscosity),
            ("channel_width", self.channel_width),
            ("residual_tolerance", self.residual_tolerance),
            ("pressure_tolerance", self.pressure_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.inlet_velocity >= 0.0 && self.inlet_velocity.is_finite()) {
            return Err(Error::InvalidParams("inlet_velocity must be non-negative".into()));
        }
        if self.residual_tolerance >= 1.0 {
            return Err(Error::InvalidParams("residual_tolerance must be below 1".into()));
        }
        for (name, a) in [("relaxation_u", self.relaxation_u), ("relaxation_p", self.relaxation_p)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParams(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if self.grid_resolution < 2 || self.max_iterations == 0 || self.momentum_sweeps == 0 {
            return Err(Error::InvalidParams("grid_resolution, max_iterations and momentum_sweeps too small".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` text of every field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "inlet_velocity = {}", self.inlet_velocity);
        let _ = writeln!(s, "kinematic_viscosity = {}", self.kinematic_viscosity);
        let _ = writeln!(s, "effective_viscosity = {}", self.effective_viscosity);
        let _ = writeln!(s, "channel_width = {}", self.channel_width);
        let _ = writeln!(s, "grid_resolution = {}", self.grid_resolution);
        let _ = writeln!(s, "residual_tolerance = {}", self.residual_tolerance);
        let _ = writeln!(s, "max_iterations = {}", self.max_iterations);
        let _ = writeln!(s, "relaxation_u = {}", self.relaxation_u);
        let _ = writeln!(s, "relaxation_p = {}", self.relaxation_p);
        let _ = writeln!(s, "momentum_sweeps = {}", self.momentum_sweeps);
        let _ = writeln!(s, "pressure_tolerance = {}", self.pressure_tolerance);
        s
    }

    /// Sets one field from its [`SolverConfig::to_text`] key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidParams(format!("solver key {key}: cannot parse {value:?}"));
        let float = || value.trim().parse::<f64>().map_err(|_| bad());
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        match key.trim() {
            "inlet_velocity" => self.inlet_velocity = float()?,
            "kinematic_viscosity" => self.kinematic_viscosity = float()?,
            "effective_viscosity" => self.effective_viscosity = float()?,
            "effective_reynolds" => *self = self.clone().with_effective_reynolds(float()?),
            "channel_width" => self.channel_width = float()?,
            "grid_resolution" => self.grid_resolution = int()?,
            "residual_tolerance" => self.residual_tolerance = float()?,
            "max_iterations" => self.max_iterations = int()?,
            "relaxation_u" => self.relaxation_u = float()?,
            "relaxation_p" => self.relaxation_p = float()?,
            "momentum_sweeps" => self.momentum_sweeps = int()?,
            "pressure_tolerance" => self.pressure_tolerance = float()?,
            other => return Err(Error::InvalidParams(format!("unknown solver key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format { what: "solver config", reason: format!("no '=' in {line:?}") })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of [`SolverConfig::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Normalized residuals of one outer iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    pub continuity: f64,
    pub momentum_x: f64,
    pub momentum_y: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.continuity.max(self.momentum_x).max(self.momentum_y)
    }
}

/// Uniform Cartesian solver grid. Cell `(i, j)` spans
/// `[x0 + i·h, x0 + (i+1)·h] × [y0 + j·h, y0 + (j+1)·h]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverGrid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: Point2,
}

impl SolverGrid {
    /// Grid of cell size `h` covering the boundary with a one-cell halo,
    /// aligned so the inlet face lies on cell faces.
    pub fn for_boundary(boundary: &ChannelBoundary, h: f64) -> Self {
        let anchor = boundary.outer_loop[boundary.inlet_segment.start];
        let bb = boundary.bounding_box;
        let below = |a: f64, lo: f64| ((a - lo) / h - 1e-9).ceil().max(0.0) + 1.0;
        let origin = Point2::new(anchor.x - h * below(anchor.x, bb.min.x), anchor.y - h * below(anchor.y, bb.min.y));
        let nx = ((bb.max.x - origin.x) / h - 1e-9).ceil() as usize + 1;
        let ny = ((bb.max.y - origin.y) / h - 1e-9).ceil() as usize + 1;
        Self { nx, ny, h, origin }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(self.origin.x + (i as f64 + 0.5) * self.h, self.origin.y + (j as f64 + 0.5) * self.h)
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Fluid,
    Solid,
    /// Non-fluid cell across an inlet face.
    Inlet,
    /// Non-fluid cell across an outlet face; pressure held at zero.
    Outlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FaceKind {
    Solid,
    Wall,
    Inlet,
    Interior,
    /// Outlet face; `true` when the ghost cell is on the positive side.
    Outlet(bool),
}

impl FaceKind {
    fn is_unknown(self) -> bool {
        matches!(self, FaceKind::Interior | FaceKind::Outlet(_))
    }
}

/// Steady solution on the solver grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub grid: SolverGrid,
    /// `u` at vertical faces, `(nx + 1) × ny`, index `j·(nx+1) + i`.
    pub u: Vec<f64>,
    /// `v` at horizontal faces, `nx × (ny + 1)`, index `j·nx + i`.
    pub v: Vec<f64>,
    /// Gauge pressure at cell centres, `nx × ny`.
    pub p: Vec<f64>,
    pub fluid_mask: Vec<bool>,
    pub residual_history: Vec<Residuals>,
    /// Volumetric inflow per unit depth, m²/s.
    pub inlet_flux: f64,
}

/// Axis-aligned cross-section: the line `x = coord` (`Axis::X`) or
/// `y = coord` (`Axis::Y`), restricted to `lo..=hi` along the other axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossSection {
    pub axis: Axis,
    pub coord: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl FlowField {
    pub fn u_face(&self, i: usize, j: usize) -> f64 {
        self.u[j * (self.grid.nx + 1) + i]
    }

    pub fn v_face(&self, i: usize, j: usize) -> f64 {
        self.v[j * self.grid.nx + i]
    }

    pub fn is_fluid(&self, i: usize, j: usize) -> bool {
        self.fluid_mask[j * self.grid.nx + i]
    }

    /// Face-averaged velocity at a cell centre, zero in solid cells.
    pub fn cell_velocity(&self, i: usize, j: usize) -> (f64, f64) {
        if !self.is_fluid(i, j) {
            return (0.0, 0.0);
        }
        (
            0.5 * (self.u_face(i, j) + self.u_face(i + 1, j)),
            0.5 * (self.v_face(i, j) + self.v_face(i, j + 1)),
        )
    }

    /// Bilinear interpolation of cell-centre velocities; positions beyond
    /// the outermost centres are clamped.
    pub fn interpolate(&self, p: Point2) -> (f64, f64) {
        let g = &self.grid;
        let locate = |coord: f64, origin: f64, n: usize| {
            let f = (coord - origin) / g.h - 0.5;
            let i0 = (f.floor().max(0.0) as usize).min(n.saturating_sub(2));
            let t = (f - i0 as f64).clamp(0.0, 1.0);
            (i0, t)
        };
        let (i0, tx) = locate(p.x, g.origin.x, g.nx);
        let (j0, ty) = locate(p.y, g.origin.y, g.ny);
        let c00 = self.cell_velocity(i0, j0);
        let c10 = self.cell_velocity(i0 + 1, j0);
        let c01 = self.cell_velocity(i0, j0 + 1);
        let c11 = self.cell_velocity(i0 + 1, j0 + 1);
        let mix = |a: f64, b: f64, c: f64, d: f64| {
            (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
        };
        (mix(c00.0, c10.0, c01.0, c11.0), mix(c00.1, c10.1, c01.1, c11.1))
    }

    fn section_faces(&self, s: &CrossSection) -> Vec<f64> {
        let g = &self.grid;
        match s.axis {
            Axis::X => {
                let i = ((s.coord - g.origin.x) / g.h).round();
                if i < 0.0 || i > g.nx as f64 {
                    return Vec::new();
                }
                let i = i as usize;
                (0..g.ny)
                    .filter(|&j| {
                        let y = g.cell_center(0, j).y;
                        y >= s.lo && y <= s.hi
                    })
                    .map(|j| self.u_face(i, j))
                    .collect()
            }
            Axis::Y => {
                let j = ((s.coord - g.origin.y) / g.h).round();
                if j < 0.0 || j > g.ny as f64 {
                    return Vec::new();
                }
                let j = j as usize;
                (0..g.nx)
                    .filter(|&i| {
                        let x = g.cell_center(i, 0).x;
                        x >= s.lo && x <= s.hi
                    })
                    .map(|i| self.v_face(i, j))
                    .collect()
            }
        }
    }

    /// Normal velocity at the faces of the grid line nearest to the section.
    pub fn profile(&self, section: &CrossSection) -> Result<Vec<f64>> {
        let faces = self.section_faces(section);
        if faces.iter().all(|&v| v == 0.0) && !self.section_touches_fluid(section) {
            return Err(Error::InvalidParams(format!("cross-section {section:?} misses the fluid domain")));
        }
        Ok(faces)
    }

    fn section_touches_fluid(&self, s: &CrossSection) -> bool {
        let g = &self.grid;
        match s.axis {
            Axis::X => {
                let i = ((s.coord - g.origin.x) / g.h).round() as isize;
                (0..g.ny).any(|j| {
                    let y = g.cell_center(0, j).y;
                    y >= s.lo
                        && y <= s.hi
                        && [i - 1, i].iter().any(|&c| c >= 0 && (c as usize) < g.nx && self.is_fluid(c as usize, j))
                })
            }
            Axis::Y => {
                let j = ((s.coord - g.origin.y) / g.h).round() as isize;
                (0..g.nx).any(|i| {
                    let x = g.cell_center(i, 0).x;
                    x >= s.lo
                        && x <= s.hi
                        && [j - 1, j].iter().any(|&r| r >= 0 && (r as usize) < g.ny && self.is_fluid(i, r as usize))
                })
            }
        }
    }

    /// Volumetric flux (per unit depth) through the section, positive along
    /// the axis direction.
    pub fn section_flux(&self, section: &CrossSection) -> Result<f64> {
        Ok(self.profile(section)?.iter().sum::<f64>() * self.grid.h)
    }

    /// Writes `u`, `v` (cell-centred) and `p` as `x,y,u,v,p` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,u,v,p")?;
        let g = &self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell_center(i, j);
                let (u, v) = self.cell_velocity(i, j);
                writeln!(w, "{},{},{},{},{}", c.x, c.y, u, v, self.p[j * g.nx + i])?;
            }
        }
        Ok(())
    }
}

/// Largest relative difference between the velocity profiles at two
/// sections of the same width.
pub fn fully_developed_check(field: &FlowField, a: &CrossSection, b: &CrossSection) -> Result<f64> {
    let pa = field.profile(a)?;
    let pb = field.profile(b)?;
    if pa.len() != pb.len() {
        return Err(Error::InvalidParams(format!("sections sample {} and {} faces", pa.len(), pb.len())));
    }
    let scale = pa.iter().chain(&pb).fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let diff = pa.iter().zip(&pb).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(diff / scale)
}

/// One velocity component in along/across coordinates: the face at
/// `(a, b)` separates cells `a - 1` and `a` along the component's axis in
/// row `b` across it.
struct Component {
    swap: bool,
    n_along: usize,
    n_across: usize,
    kind: Vec<FaceKind>,
    val: Vec<f64>,
    d: Vec<f64>,
}

impl Component {
    fn idx(&self, a: usize, b: usize) -> usize {
        b * (self.n_along + 1) + a
    }
}

struct Case {
    grid: SolverGrid,
    cells: Vec<CellKind>,
}

impl Case {
    fn cell(&self, swap: bool, a: usize, b: usize) -> CellKind {
        let (i, j) = if swap { (b, a) } else { (a, b) };
        self.cells[j * self.grid.nx + i]
    }

    fn cell_at(&self, i: usize, j: usize) -> CellKind {
        self.cells[j * self.grid.nx + i]
    }
}

fn on_any(edges: &[(Point2, Point2)], p: Point2, tol: f64) -> bool {
    edges.iter().any(|&(a, b)| point_segment_distance(p, a, b) <= tol)
}

fn classify(boundary: &ChannelBoundary, grid: &SolverGrid) -> Result<(Vec<CellKind>, Component, Component)> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let mut cells: Vec<CellKind> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| if point_in_domain(boundary, grid.cell_center(i, j)) { CellKind::Fluid } else { CellKind::Solid })
        .collect();
    let inlet: Vec<_> = boundary.inlet_segment.clone().map(|k| boundary.edge(k)).collect();
    let outlet: Vec<_> = boundary.outlet_segment.clone().map(|k| boundary.edge(k)).collect();
    let tol = 1e-6 * h;

    let mut comps = [false, true].map(|swap| {
        let (n_along, n_across) = if swap { (ny, nx) } else { (nx, ny) };
        let len = (n_along + 1) * n_across;
        Component {
            swap,
            n_along,
            n_across,
            kind: vec![FaceKind::Solid; len],
            val: vec![0.0; len],
            d: vec![0.0; len],
        }
    });
    let (mut inlet_faces, mut outlet_faces) = (0, 0);
    for comp in comps.iter_mut() {
        for b in 0..comp.n_across {
            for a in 1..comp.n_along {
                let (lo, hi) = if comp.swap {
                    (cells[(a - 1) * nx + b], cells[a * nx + b])
                } else {
                    (cells[b * nx + a - 1], cells[b * nx + a])
                };
                let lo_fluid = lo == CellKind::Fluid;
                let hi_fluid = hi == CellKind::Fluid;
                let k = comp.idx(a, b);
                comp.kind[k] = match (lo_fluid, hi_fluid) {
                    (true, true) => FaceKind::Interior,
                    (false, false) => FaceKind::Solid,
                    _ => {
                        let center = if comp.swap {
                            Point2::new(grid.origin.x + (b as f64 + 0.5) * h, grid.origin.y + a as f64 * h)
                        } else {
                            Point2::new(grid.origin.x + a as f64 * h, grid.origin.y + (b as f64 + 0.5) * h)
                        };
                        let ghost = if lo_fluid { (a, b) } else { (a - 1, b) };
                        let ghost_idx = if comp.swap { ghost.0 * nx + ghost.1 } else { ghost.1 * nx + ghost.0 };
                        if on_any(&inlet, center, tol) {
                            inlet_faces += 1;
                            cells[ghost_idx] = CellKind::Inlet;
                            FaceKind::Inlet
                        } else if on_any(&outlet, center, tol) {
                            outlet_faces += 1;
                            cells[ghost_idx] = CellKind::Outlet;
                            FaceKind::Outlet(lo_fluid)
                        } else {
                            FaceKind::Wall
                        }
                    }
                };
            }
        }
    }
    if inlet_faces == 0 || outlet_faces == 0 {
        return Err(Error::InvalidGeometry(
            "inlet or outlet segment does not coincide with solver grid faces".into(),
        ));
    }
    let [cu, cv] = comps;
    Ok((cells, cu, cv))
}

/// Coefficients of one momentum equation.
#[derive(Clone, Copy, Default)]
struct Stencil {
    ap: f64,
    // along-, along+, across-, across+
    nb: [f64; 4],
    src: f64,
}

struct Assembly {
    stencils: Vec<Stencil>,
}

fn hybrid(f: f64, d: f64, upstream_positive: bool) -> f64 {
    // coefficient of the neighbour on the side where positive flux enters
    if upstream_positive {
        f.max(d + 0.5 * f).max(0.0)
    } else {
        (-f).max(d - 0.5 * f).max(0.0)
    }
}

/// Assembles the momentum equation of `comp` given the other component.
fn assemble(case: &Case, comp: &Component, other: &Component, p: &[f64], nu: f64) -> Assembly {
    let h = case.grid.h;
    let nx = case.grid.nx;
    let swap = comp.swap;
    let pressure = |a: usize, b: usize| -> f64 {
        let (i, j) = if swap { (b, a) } else { (a, b) };
        match case.cell_at(i, j) {
            CellKind::Fluid => p[j * nx + i],
            _ => 0.0,
        }
    };
    let mut stencils = vec![Stencil::default(); comp.kind.len()];
    for b in 0..comp.n_across {
        for a in 1..comp.n_along {
            let k = comp.idx(a, b);
            let kind = comp.kind[k];
            if !kind.is_unknown() {
                continue;
            }
            let up = comp.val[k];
            let mut st = Stencil::default();
            let d = nu;
            // along direction
            let drop_minus = kind == FaceKind::Outlet(false);
            let drop_plus = kind == FaceKind::Outlet(true);
            let u_minus = if drop_minus { up } else { comp.val[comp.idx(a - 1, b)] };
            let u_plus = if drop_plus { up } else { comp.val[comp.idx(a + 1, b)] };
            let f_minus = 0.5 * h * (u_minus + up);
            let f_plus = 0.5 * h * (up + u_plus);
            if !drop_minus {
                st.nb[0] = hybrid(f_minus, d, true);
            }
            if !drop_plus {
                st.nb[1] = hybrid(f_plus, d, false);
            }
            // across direction: other component faces at along' = b or b+1,
            // across' = a-1 and a
            let flux_across = |bb: usize| 0.5 * h * (other.val[other.idx(bb, a - 1)] + other.val[other.idx(bb, a)]);
            let f_lo = flux_across(b);
            let f_hi = flux_across(b + 1);
            let mut ap_extra = 0.0;
            for (side, f, neighbour_b) in [(2usize, f_lo, b.checked_sub(1)), (3, f_hi, Some(b + 1))] {
                let inflow = if side == 2 { f.max(0.0) } else { (-f).max(0.0) };
                let nb = neighbour_b.filter(|&nb| nb < comp.n_across);
                let Some(nb) = nb else {
                    ap_extra += 2.0 * d + inflow;
                    continue;
                };
                let c0 = case.cell(swap, a - 1, nb);
                let c1 = case.cell(swap, a, nb);
                if c0 == CellKind::Fluid || c1 == CellKind::Fluid {
                    st.nb[side] = hybrid(f, d, side == 2);
                } else if c0 == CellKind::Outlet || c1 == CellKind::Outlet {
                    // zero gradient
                } else {
                    ap_extra += 2.0 * d + inflow;
                }
            }
            st.ap = st.nb.iter().sum::<f64>() + ap_extra;
            st.src = (pressure(a - 1, b) - pressure(a, b)) * h;
            stencils[k] = st;
        }
    }
    Assembly { stencils }
}

fn neighbours(comp: &Component, a: usize, b: usize) -> [f64; 4] {
    let get = |aa: isize, bb: isize| -> f64 {
        if aa < 0 || bb < 0 || aa as usize > comp.n_along || bb as usize >= comp.n_across {
            0.0
        } else {
            comp.val[comp.idx(aa as usize, bb as usize)]
        }
    };
    let (a, b) = (a as isize, b as isize);
    [get(a - 1, b), get(a + 1, b), get(a, b - 1), get(a, b + 1)]
}

fn momentum_residual(comp: &Component, asm: &Assembly) -> f64 {
    let mut r = 0.0;
    for b in 0..comp.n_across {
        for a in 1..comp.n_along {
            let k = comp.idx(a, b);
            if !comp.kind[k].is_unknown() {
                continue;
            }
            let st = &asm.stencils[k];
            let nb = neighbours(comp, a, b);
            let sum: f64 = st.nb.iter().zip(nb).map(|(c, v)| c * v).sum();
            r += (st.ap * comp.val[k] - sum - st.src).abs();
        }
    }
    r
}

fn solve_momentum(comp: &mut Component, asm: &Assembly, alpha: f64, sweeps: usize, h: f64) {
    let old = comp.val.clone();
    for b in 0..comp.n_across {
        for a in 1..comp.n_along {
            let k = comp.idx(a, b);
            if comp.kind[k].is_unknown() {
                let ap = asm.stencils[k].ap / alpha;
                comp.d[k] = if ap > 0.0 { h / ap } else { 0.0 };
            }
        }
    }
    for _ in 0..sweeps {
        for b in 0..comp.n_across {
            for a in 1..comp.n_along {
                let k = comp.idx(a, b);
                if !comp.kind[k].is_unknown() {
                    continue;
                }
                let st = &asm.stencils[k];
                if st.ap <= 0.0 {
                    continue;
                }
                let ap = st.ap / alpha;
                let nb = neighbours(comp, a, b);
                let sum: f64 = st.nb.iter().zip(nb).map(|(c, v)| c * v).sum();
                comp.val[k] = (sum + st.src + (1.0 - alpha) * ap * old[k]) / ap;
            }
        }
    }
}

/// Pressure-correction system on fluid cells: `ap·x - Σ a_nb·x_nb = rhs`.
struct PressureSystem {
    cells: Vec<usize>,
    ap: Vec<f64>,
    // east, west, north, south coefficients and neighbour slots
    nb: Vec<[(f64, usize); 4]>,
    rhs: Vec<f64>,
}

const NO_SLOT: usize = usize::MAX;

fn build_pressure_system(case: &Case, cu: &Component, cv: &Component) -> PressureSystem {
    let g = &case.grid;
    let (nx, ny, h) = (g.nx, g.ny, g.h);
    let mut slot = vec![NO_SLOT; nx * ny];
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if case.cell_at(i, j) == CellKind::Fluid {
                slot[j * nx + i] = cells.len();
                cells.push(j * nx + i);
            }
        }
    }
    let mut ap = Vec::with_capacity(cells.len());
    let mut nb = Vec::with_capacity(cells.len());
    let mut rhs = Vec::with_capacity(cells.len());
    for &c in &cells {
        let (i, j) = (c % nx, c / nx);
        // (component, face index, neighbour cell, sign of outward normal)
        let faces = [
            (cu, cu.idx(i + 1, j), (i + 1 < nx).then(|| j * nx + i + 1), 1.0),
            (cu, cu.idx(i, j), (i > 0).then(|| j * nx + i - 1), -1.0),
            (cv, cv.idx(j + 1, i), (j + 1 < ny).then(|| (j + 1) * nx + i), 1.0),
            (cv, cv.idx(j, i), (j > 0).then(|| (j - 1) * nx + i), -1.0),
        ];
        let mut diag = 0.0;
        let mut entries = [(0.0, NO_SLOT); 4];
        let mut imbalance = 0.0;
        for (slot_k, (comp, f, neighbour, sign)) in faces.into_iter().enumerate() {
            imbalance -= sign * comp.val[f] * h;
            if !comp.kind[f].is_unknown() {
                continue;
            }
            let coef = h * comp.d[f];
            diag += coef;
            if let Some(nc) = neighbour {
                if case.cells[nc] == CellKind::Fluid {
                    entries[slot_k] = (coef, slot[nc]);
                }
            }
        }
        ap.push(diag);
        nb.push(entries);
        rhs.push(imbalance);
    }
    PressureSystem { cells, ap, nb, rhs }
}

impl PressureSystem {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.cells.len() {
            let mut s = self.ap[k] * x[k];
            for &(c, n) in &self.nb[k] {
                if n != NO_SLOT {
                    s -= c * x[n];
                }
            }
            out[k] = s;
        }
    }

    /// Jacobi-preconditioned conjugate gradients.
    fn solve(&self, tol: f64) -> Vec<f64> {
        let n = self.cells.len();
        let mut x = vec![0.0; n];
        let bnorm = self.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return x;
        }
        let inv: Vec<f64> = self.ap.iter().map(|&a| if a > 0.0 { 1.0 / a } else { 0.0 }).collect();
        let mut r = self.rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..(10 * n).max(100) {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                break;
            }
            for k in 0..n {
                z[k] = r[k] * inv[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        x
    }
}

/// Runs SIMPLE iterations until every normalized residual drops below the
/// tolerance.
pub fn solve_flow(boundary: &ChannelBoundary, config: &SolverConfig) -> Result<FlowField> {
    config.validate()?;
    let h = config.cell_size();
    let grid = SolverGrid::for_boundary(boundary, h);
    let (cells, mut cu, mut cv) = classify(boundary, &grid)?;
    let case = Case { grid, cells };
    let (nx, ny) = (grid.nx, grid.ny);

    // inlet faces: uniform normal inflow
    let mut inlet_flux = 0.0;
    for comp in [&mut cu, &mut cv] {
        for b in 0..comp.n_across {
            for a in 1..comp.n_along {
                let k = comp.idx(a, b);
                if comp.kind[k] != FaceKind::Inlet {
                    continue;
                }
                let (i, j) = if comp.swap { (b, a) } else { (a, b) };
                // the fluid cell sits on the positive side for inflow along +axis
                let sign = if case.cell_at(i, j) == CellKind::Fluid { 1.0 } else { -1.0 };
                comp.val[k] = sign * config.inlet_velocity;
                inlet_flux += config.inlet_velocity * h;
            }
        }
    }

    let mut p = vec![0.0; nx * ny];
    let mut history = Vec::new();
    let mut norms: Option<[f64; 3]> = None;
    let mut converged = false;
    for _ in 0..config.max_iterations {
        let asm_u = assemble(&case, &cu, &cv, &p, config.effective_viscosity);
        let asm_v = assemble(&case, &cv, &cu, &p, config.effective_viscosity);
        let res_u = momentum_residual(&cu, &asm_u);
        let res_v = momentum_residual(&cv, &asm_v);
        solve_momentum(&mut cu, &asm_u, config.relaxation_u, config.momentum_sweeps, h);
        solve_momentum(&mut cv, &asm_v, config.relaxation_u, config.momentum_sweeps, h);

        let system = build_pressure_system(&case, &cu, &cv);
        let res_c: f64 = system.rhs.iter().map(|v| v.abs()).sum();
        let correction = system.solve(config.pressure_tolerance);
        let mut pc = vec![0.0; nx * ny];
        for (k, &c) in system.cells.iter().enumerate() {
            pc[c] = correction[k];
            p[c] += config.relaxation_p * correction[k];
        }
        for comp in [&mut cu, &mut cv] {
            for b in 0..comp.n_across {
                for a in 1..comp.n_along {
                    let k = comp.idx(a, b);
                    if !comp.kind[k].is_unknown() {
                        continue;
                    }
                    let (lo, hi) = if comp.swap { ((b, a - 1), (b, a)) } else { ((a - 1, b), (a, b)) };
                    let plo = pc[lo.1 * nx + lo.0];
                    let phi = pc[hi.1 * nx + hi.0];
                    comp.val[k] += comp.d[k] * (plo - phi);
                }
            }
        }

        let raw = [res_c, res_u, res_v];
        let base = *norms.get_or_insert(raw);
        let scaled: Vec<f64> = raw.iter().zip(base).map(|(r, b)| if b > 0.0 { r / b } else { 0.0 }).collect();
        let res = Residuals { continuity: scaled[0], momentum_x: scaled[1], momentum_y: scaled[2] };
        if !res.max().is_finite() {
            break;
        }
        history.push(res);
        if res.max() < config.residual_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        let final_residual = history.last().map(Residuals::max).unwrap_or(f64::NAN);
        return Err(Error::NotConverged { iterations: history.len(), final_residual, history });
    }

    let mut u = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 0..=nx {
            u[j * (nx + 1) + i] = cu.val[cu.idx(i, j)];
        }
    }
    let mut v = vec![0.0; nx * (ny + 1)];
    for j in 0..=ny {
        for i in 0..nx {
            v[j * nx + i] = cv.val[cv.idx(j, i)];
        }
    }
    for (k, kind) in case.cells.iter().enumerate() {
        if *kind != CellKind::Fluid {
            p[k] = 0.0;
        }
    }
    Ok(FlowField {
        grid,
        u,
        v,
        p,
        fluid_mask: case.cells.iter().map(|c| *c == CellKind::Fluid).collect(),
        residual_history: history,
        inlet_flux,
    })
}
