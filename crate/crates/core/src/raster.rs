//! Bird's-eye-view rasterization: the ternary occupancy grid and the
//! boundary-condition lattice handed to the flow solver.
//!
//! Grids are stored row-major with `width_px` lateral rows and `length_px`
//! longitudinal columns. Row index grows with `y`, column index with `x`.
//! Cells are classified by point-sampling their centers.

use std::io::{self, Write};

use ndarray::Array2;
use thiserror::Error;

use crate::scene::{SceneFrame, Vec2, Vehicle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("road edge at lateral {edge} m lies outside the grid [{min}, {max})")]
    LayoutOutOfGrid { edge: f64, min: f64, max: f64 },
    #[error("road leaves no drivable rows inside the grid")]
    NoDrivableRows,
    #[error("frame has no target vehicle")]
    MissingTargetVehicle,
}

/// Pixel dimensions and metric coverage of a BEV grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width_px: usize,
    pub length_px: usize,
    pub lateral_extent: f64,
    pub longitudinal_extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width_px: 32,
            length_px: 256,
            lateral_extent: 20.0,
            longitudinal_extent: 200.0,
        }
    }
}

impl GridSpec {
    /// A grid of arbitrary pixel size at the default resolutions.
    pub fn with_dims(length_px: usize, width_px: usize) -> Self {
        let d = Self::default();
        Self {
            width_px,
            length_px,
            lateral_extent: d.res_lat() * width_px as f64,
            longitudinal_extent: d.res_lon() * length_px as f64,
        }
    }

    pub fn res_lat(&self) -> f64 {
        self.lateral_extent / self.width_px as f64
    }

    pub fn res_lon(&self) -> f64 {
        self.longitudinal_extent / self.length_px as f64
    }

    pub fn cells(&self) -> usize {
        self.width_px * self.length_px
    }

    /// Column holding the target vehicle's center: a quarter of the way in
    /// from the rear edge.
    pub fn anchor_col(&self) -> usize {
        self.length_px / 4
    }
}

/// Placement of a [`GridSpec`] in metric coordinates. `origin` is the
/// corner of cell `(0, 0)` with the smallest `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub spec: GridSpec,
    pub origin: Vec2,
}

impl GridGeometry {
    pub fn new(spec: GridSpec, origin: Vec2) -> Self {
        Self { spec, origin }
    }

    /// Target-centric placement: the anchor column's center sits at `x = 0`
    /// and the grid is laterally centered on the road centerline
    /// `road_center_y` (given in the same target-centric frame).
    pub fn tv_centric(spec: GridSpec, road_center_y: f64) -> Self {
        let x0 = -(spec.anchor_col() as f64 + 0.5) * spec.res_lon();
        let y0 = road_center_y - spec.lateral_extent / 2.0;
        Self::new(spec, Vec2::new(x0, y0))
    }

    /// Placement used for a normalized, target-centered frame.
    pub fn for_frame(spec: GridSpec, frame: &SceneFrame) -> Self {
        Self::tv_centric(spec, frame.layout.centerline())
    }

    pub fn rows(&self) -> usize {
        self.spec.width_px
    }

    pub fn cols(&self) -> usize {
        self.spec.length_px
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) * self.spec.res_lon(),
            self.origin.y + (row as f64 + 0.5) * self.spec.res_lat(),
        )
    }

    pub fn max_corner(&self) -> Vec2 {
        self.origin + Vec2::new(self.spec.longitudinal_extent, self.spec.lateral_extent)
    }

    /// Continuous cell coordinates: cell `(r, c)` center is `(r, c)`.
    pub fn fractional_index(&self, p: Vec2) -> (f64, f64) {
        (
            (p.y - self.origin.y) / self.spec.res_lat() - 0.5,
            (p.x - self.origin.x) / self.spec.res_lon() - 0.5,
        )
    }

    pub fn row_of(&self, y: f64) -> Option<usize> {
        let r = ((y - self.origin.y) / self.spec.res_lat()).floor();
        (r >= 0.0 && r < self.rows() as f64).then_some(r as usize)
    }

    pub fn col_of(&self, x: f64) -> Option<usize> {
        let c = ((x - self.origin.x) / self.spec.res_lon()).floor();
        (c >= 0.0 && c < self.cols() as f64).then_some(c as usize)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let hi = self.max_corner();
        p.x >= self.origin.x && p.x < hi.x && p.y >= self.origin.y && p.y < hi.y
    }

    /// Cells whose centers fall inside the closed rectangle `[lo, hi]`.
    pub fn cells_in_rect(&self, lo: Vec2, hi: Vec2) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (r0, c0) = self.fractional_index(lo);
        let (r1, c1) = self.fractional_index(hi);
        let clamp = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
        let rows = clamp(r0.floor(), self.rows())..clamp(r1.ceil() + 1.0, self.rows());
        let cols = clamp(c0.floor(), self.cols())..clamp(c1.ceil() + 1.0, self.cols());
        rows.flat_map(move |r| cols.clone().map(move |c| (r, c)))
            .filter(move |&(r, c)| {
                let p = self.cell_center(r, c);
                p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
            })
    }

    pub fn vehicle_cells<'a>(&'a self, v: &Vehicle) -> impl Iterator<Item = (usize, usize)> + 'a {
        let (lo, hi) = v.footprint();
        self.cells_in_rect(lo, hi)
    }
}

/// Target anchor cell `(row, col)` for a target vehicle sitting
/// `lateral_offset` meters left of the road centerline.
pub fn tv_anchor(spec: &GridSpec, lateral_offset: f64) -> (usize, usize) {
    let r = ((lateral_offset + spec.lateral_extent / 2.0) / spec.res_lat()).floor();
    let row = r.clamp(0.0, (spec.width_px - 1) as f64) as usize;
    (row, spec.anchor_col())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Occupancy {
    #[default]
    Free,
    OccupiedSV,
    OccupiedTV,
}

impl Occupancy {
    pub fn code(self) -> u8 {
        match self {
            Occupancy::Free => 0,
            Occupancy::OccupiedSV => 1,
            Occupancy::OccupiedTV => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Occupancy::Free),
            1 => Some(Occupancy::OccupiedSV),
            2 => Some(Occupancy::OccupiedTV),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cells: Array2<Occupancy>,
    pub geometry: GridGeometry,
}

impl OccupancyGrid {
    pub fn count(&self, kind: Occupancy) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    /// Binary PGM (P5, maxval 2) with Free=0, OccupiedSV=1, OccupiedTV=2.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (rows, cols) = self.cells.dim();
        write!(out, "P5\n{cols} {rows}\n2\n")?;
        let bytes: Vec<u8> = self.cells.iter().map(|c| c.code()).collect();
        out.write_all(&bytes)
    }
}

/// Expects a normalized, target-centered frame. The target label wins where
/// footprints overlap; vehicles are clipped to the grid.
pub fn rasterize_occupancy(frame: &SceneFrame, spec: &GridSpec) -> OccupancyGrid {
    let geometry = GridGeometry::for_frame(*spec, frame);
    let mut cells = Array2::from_elem((spec.width_px, spec.length_px), Occupancy::Free);
    for v in frame.surrounding() {
        for (r, c) in geometry.vehicle_cells(v) {
            cells[[r, c]] = Occupancy::OccupiedSV;
        }
    }
    if let Some(tv) = frame.target() {
        for (r, c) in geometry.vehicle_cells(tv) {
            cells[[r, c]] = Occupancy::OccupiedTV;
        }
    }
    OccupancyGrid { cells, geometry }
}

/// Boundary treatment of one lattice cell. Velocities are physical (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CellClass {
    #[default]
    Fluid,
    NoSlipWall,
    /// Passable barrier; `beta` is the bounced-back fraction.
    PorousMarking { beta: f64 },
    VehicleDirichlet { u: Vec2 },
    Inlet { u: Vec2 },
    Outlet,
}

impl CellClass {
    pub fn is_solid(self) -> bool {
        matches!(self, CellClass::NoSlipWall)
    }

    pub fn dirichlet_velocity(self) -> Option<Vec2> {
        match self {
            CellClass::VehicleDirichlet { u } | CellClass::Inlet { u } => Some(u),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    pub cells: Array2<CellClass>,
    pub geometry: GridGeometry,
    /// Nominal lane speed per row (m/s); zero outside the road.
    pub row_nominal: Vec<f64>,
    pub periodic_x: bool,
    pub periodic_y: bool,
}

impl BoundaryGrid {
    /// Every cell set to `class`, non-periodic, unit-free placement.
    pub fn filled(spec: GridSpec, class: CellClass) -> Self {
        Self {
            cells: Array2::from_elem((spec.width_px, spec.length_px), class),
            geometry: GridGeometry::new(spec, Vec2::ZERO),
            row_nominal: vec![0.0; spec.width_px],
            periodic_x: false,
            periodic_y: false,
        }
    }

    /// Straight channel: wall rows top and bottom, an inlet column at
    /// `speed` (m/s) on the left, an outlet column on the right.
    pub fn channel(spec: GridSpec, speed: f64) -> Self {
        let mut g = Self::filled(spec, CellClass::Fluid);
        let (rows, cols) = g.dims();
        for r in 0..rows {
            if r == 0 || r + 1 == rows {
                g.cells.row_mut(r).fill(CellClass::NoSlipWall);
                continue;
            }
            g.row_nominal[r] = speed;
            g.cells[[r, 0]] = CellClass::Inlet {
                u: Vec2::new(speed, 0.0),
            };
            g.cells[[r, cols - 1]] = CellClass::Outlet;
        }
        g
    }

    pub fn periodic(mut self, x: bool, y: bool) -> Self {
        self.periodic_x = x;
        self.periodic_y = y;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.cells.dim()
    }

    pub fn count(&self, pred: impl Fn(&CellClass) -> bool) -> usize {
        self.cells.iter().filter(|c| pred(c)).count()
    }

    /// Largest imposed speed over inlet and vehicle cells (m/s).
    pub fn max_imposed_speed(&self) -> f64 {
        self.cells
            .iter()
            .filter_map(|c| c.dirichlet_velocity())
            .map(Vec2::norm)
            .fold(0.0, f64::max)
    }
}

/// Classify every cell of a normalized, target-centered frame.
///
/// Precedence, lowest to highest: fluid, porous marking, inlet/outlet,
/// vehicle, wall. Vehicle speeds are capped at twice the fastest nominal
/// lane speed.
pub fn build_boundary_grid(frame: &SceneFrame, spec: &GridSpec, beta: f64) -> Result<BoundaryGrid, RasterError> {
    let geometry = GridGeometry::for_frame(*spec, frame);
    let layout = &frame.layout;
    let (rows, cols) = (spec.width_px, spec.length_px);
    let y_max = geometry.max_corner().y;

    let edge_row = |edge: f64| {
        geometry.row_of(edge).ok_or(RasterError::LayoutOutOfGrid {
            edge,
            min: geometry.origin.y,
            max: y_max,
        })
    };
    let lo = edge_row(layout.road_edges.0)?;
    let hi = edge_row(layout.road_edges.1)?;
    if hi <= lo + 1 {
        return Err(RasterError::NoDrivableRows);
    }

    let mut grid = BoundaryGrid::filled(*spec, CellClass::Fluid);
    grid.geometry = geometry;

    for r in 0..rows {
        if r <= lo || r >= hi {
            grid.cells.row_mut(r).fill(CellClass::NoSlipWall);
            continue;
        }
        let y = geometry.cell_center(r, 0).y;
        let lane = layout.lane_of(y).unwrap_or(0).min(layout.lane_speeds.len() - 1);
        grid.row_nominal[r] = layout.lane_speeds[lane];
    }
    for &m in &layout.lane_markings {
        if let Some(r) = geometry.row_of(m).filter(|&r| r > lo && r < hi) {
            grid.cells.row_mut(r).fill(CellClass::PorousMarking { beta });
        }
    }
    for r in lo + 1..hi {
        grid.cells[[r, 0]] = CellClass::Inlet {
            u: Vec2::new(grid.row_nominal[r], 0.0),
        };
        grid.cells[[r, cols - 1]] = CellClass::Outlet;
    }

    let cap = 2.0 * layout.max_nominal_speed();
    let mut paint = |v: &Vehicle| {
        let mut u = v.velocity;
        let speed = u.norm();
        if speed > cap {
            u = u * (cap / speed);
        }
        for (r, c) in geometry.vehicle_cells(v) {
            if !grid.cells[[r, c]].is_solid() {
                grid.cells[[r, c]] = CellClass::VehicleDirichlet { u };
            }
        }
    };
    frame.surrounding().for_each(&mut paint);
    if let Some(tv) = frame.target() {
        paint(tv);
    }
    Ok(grid)
}
