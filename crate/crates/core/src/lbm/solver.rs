use rayon::prelude::*;
use thiserror::Error;

use super::d2q9::{equilibrium, moments, E, OPPOSITE, Q};
use super::state::LatticeState;
use crate::raster::{BoundaryGrid, CellClass};
use crate::scene::Vec2;

/// Densities beyond this magnitude mean the run has gone unstable.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// Density restored at outlets.
pub const REFERENCE_DENSITY: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical blow-up at iteration {iteration} (check tau mode and velocity scale)")]
    NumericalBlowup { iteration: usize },
    #[error("lattice is {state_rows}x{state_cols} but grid is {grid_rows}x{grid_cols}")]
    DimensionMismatch {
        state_rows: usize,
        state_cols: usize,
        grid_rows: usize,
        grid_cols: usize,
    },
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
}

/// How the relaxation time is obtained from the configured constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauMode {
    /// Use the constant directly as the relaxation time.
    Literal { tau: f64 },
    /// Treat the constant as lattice kinematic viscosity: `tau = 3 nu + 1/2`.
    ViscosityDerived { nu: f64 },
}

impl TauMode {
    pub const DEFAULT_CONSTANT: f64 = 0.003;

    pub fn literal() -> Self {
        TauMode::Literal {
            tau: Self::DEFAULT_CONSTANT,
        }
    }

    pub fn viscosity() -> Self {
        TauMode::ViscosityDerived {
            nu: Self::DEFAULT_CONSTANT,
        }
    }

    pub fn tau(self) -> f64 {
        match self {
            TauMode::Literal { tau } => tau,
            TauMode::ViscosityDerived { nu } => 3.0 * nu + 0.5,
        }
    }
}

impl Default for TauMode {
    fn default() -> Self {
        Self::viscosity()
    }
}

/// Row-processing strategy. Both produce bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub tau_mode: TauMode,
    /// Lattice speed the fastest imposed velocity maps to.
    pub u_lattice_max: f64,
    /// Stop once no cell's velocity changes by this much (m/s) in one step.
    pub conv_tol: f64,
    pub max_iters: usize,
    pub warm_start: bool,
    pub schedule: Schedule,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tau_mode: TauMode::default(),
            u_lattice_max: 0.02,
            conv_tol: 0.01,
            max_iters: 5000,
            warm_start: false,
            schedule: Schedule::Sequential,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let tau = self.tau_mode.tau();
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SolverError::InvalidParams(format!("tau must be positive, got {tau}")));
        }
        if !(self.conv_tol > 0.0) {
            return Err(SolverError::InvalidParams("conv_tol must be positive".into()));
        }
        if !(self.u_lattice_max > 0.0) {
            return Err(SolverError::InvalidParams("u_lattice_max must be positive".into()));
        }
        Ok(())
    }
}

/// Lattice velocity per physical velocity, `(lattice units) / (m/s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScale {
    pub c_u: f64,
}

impl UnitScale {
    pub fn new(c_u: f64) -> Self {
        Self { c_u }
    }

    /// Map the largest speed to `u_lattice_max`. Grids with nothing moving
    /// fall back to 1 m/s as the reference speed.
    pub fn for_speed(max_speed: f64, u_lattice_max: f64) -> Self {
        let reference = if max_speed > 0.0 { max_speed } else { 1.0 };
        Self::new(u_lattice_max / reference)
    }

    pub fn for_grid(grid: &BoundaryGrid, u_lattice_max: f64) -> Self {
        let nominal = grid.row_nominal.iter().copied().fold(0.0, f64::max);
        Self::for_speed(grid.max_imposed_speed().max(nominal), u_lattice_max)
    }

    pub fn to_lattice(&self, v: Vec2) -> [f64; 2] {
        [self.c_u * v.x, self.c_u * v.y]
    }

    pub fn to_physical(&self, u: [f64; 2]) -> Vec2 {
        Vec2::new(u[0] / self.c_u, u[1] / self.c_u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Fluid,
    Wall,
    Porous,
    Dirichlet,
    Inlet,
    Outlet,
}

/// Flattened cell classification in lattice units.
#[derive(Debug, Clone)]
struct Nodes {
    rows: usize,
    cols: usize,
    periodic_x: bool,
    periodic_y: bool,
    kind: Vec<Kind>,
    beta: Vec<f64>,
    target: Vec<[f64; 2]>,
}

impl Nodes {
    fn new(grid: &BoundaryGrid, scale: &UnitScale) -> Self {
        let (rows, cols) = grid.dims();
        let n = rows * cols;
        let mut kind = Vec::with_capacity(n);
        let mut beta = vec![0.0; n];
        let mut target = vec![[0.0; 2]; n];
        for (k, cell) in grid.cells.iter().enumerate() {
            kind.push(match *cell {
                CellClass::Fluid => Kind::Fluid,
                CellClass::NoSlipWall => Kind::Wall,
                CellClass::PorousMarking { beta: b } => {
                    beta[k] = b;
                    Kind::Porous
                }
                CellClass::VehicleDirichlet { u } => {
                    target[k] = scale.to_lattice(u);
                    Kind::Dirichlet
                }
                CellClass::Inlet { u } => {
                    target[k] = scale.to_lattice(u);
                    Kind::Inlet
                }
                CellClass::Outlet => Kind::Outlet,
            });
        }
        Self {
            rows,
            cols,
            periodic_x: grid.periodic_x,
            periodic_y: grid.periodic_y,
            kind,
            beta,
            target,
        }
    }

    /// Cell `(r, c) - e`, or `None` past a non-periodic edge.
    #[inline]
    fn upstream(&self, r: usize, c: usize, e: [i32; 2]) -> Option<usize> {
        let sc = c as i64 - e[0] as i64;
        let sr = r as i64 - e[1] as i64;
        let wrap = |v: i64, n: usize, periodic: bool| -> Option<usize> {
            if (0..n as i64).contains(&v) {
                Some(v as usize)
            } else if periodic {
                Some(v.rem_euclid(n as i64) as usize)
            } else {
                None
            }
        };
        let sc = wrap(sc, self.cols, self.periodic_x)?;
        let sr = wrap(sr, self.rows, self.periodic_y)?;
        Some(sr * self.cols + sc)
    }

    /// Bounced-back fraction on the link between two cells: non-zero only
    /// where exactly one side is a porous marking.
    #[inline]
    fn link_beta(&self, a: usize, b: usize) -> f64 {
        match (self.kind[a] == Kind::Porous, self.kind[b] == Kind::Porous) {
            (true, false) => self.beta[a],
            (false, true) => self.beta[b],
            _ => 0.0,
        }
    }

    fn measured(&self, k: usize) -> bool {
        !matches!(self.kind[k], Kind::Wall | Kind::Dirichlet | Kind::Inlet)
    }
}

fn stream_row(nodes: &Nodes, f: &[f64], r: usize, out: &mut [f64]) {
    let cols = nodes.cols;
    for c in 0..cols {
        let d = r * cols + c;
        let dst = &mut out[c * Q..(c + 1) * Q];
        let own = &f[d * Q..(d + 1) * Q];
        if nodes.kind[d] == Kind::Wall {
            dst.copy_from_slice(own);
            continue;
        }
        dst[0] = own[0];
        for i in 1..Q {
            let bounced = own[OPPOSITE[i]];
            dst[i] = match nodes.upstream(r, c, E[i]) {
                Some(s) if nodes.kind[s] != Kind::Wall => {
                    let b = nodes.link_beta(d, s);
                    let incoming = f[s * Q + i];
                    if b == 0.0 {
                        incoming
                    } else {
                        (1.0 - b) * incoming + b * bounced
                    }
                }
                _ => bounced,
            };
        }
    }
    for c in 1..cols {
        let d = r * cols + c;
        if nodes.kind[d] == Kind::Outlet && nodes.kind[d - 1] != Kind::Wall {
            out.copy_within((c - 1) * Q..c * Q, c * Q);
            let cell = &mut out[c * Q..(c + 1) * Q];
            let scale = REFERENCE_DENSITY / moments(cell).0;
            cell.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct CollideStats {
    max_du: f64,
    unstable: bool,
}

impl CollideStats {
    fn merge(self, other: Self) -> Self {
        Self {
            max_du: self.max_du.max(other.max_du),
            unstable: self.unstable || other.unstable,
        }
    }
}

fn collide_row(
    nodes: Option<&Nodes>,
    omega: f64,
    r: usize,
    f: &mut [f64],
    rho: &mut [f64],
    u: &mut [[f64; 2]],
) -> CollideStats {
    let mut stats = CollideStats::default();
    let cols = rho.len();
    for c in 0..cols {
        let k = r * cols + c;
        if let Some(n) = nodes {
            if !n.measured(k) {
                continue;
            }
        }
        let cell = &mut f[c * Q..(c + 1) * Q];
        let (density, j) = moments(cell);
        if !(density > 0.0 && density.is_finite()) {
            stats.unstable = true;
            continue;
        }
        let vel = [j[0] / density, j[1] / density];
        let feq = equilibrium(density, vel);
        for i in 0..Q {
            cell[i] = (1.0 - omega) * cell[i] + omega * feq[i];
            if !(cell[i].abs() <= BLOWUP_LIMIT) {
                stats.unstable = true;
            }
        }
        let du = (vel[0] - u[c][0]).hypot(vel[1] - u[c][1]);
        stats.max_du = stats.max_du.max(du);
        rho[c] = density;
        u[c] = vel;
    }
    stats
}

fn run_collide(
    nodes: Option<&Nodes>,
    omega: f64,
    schedule: Schedule,
    state: &mut LatticeState,
) -> CollideStats {
    let cols = state.cols;
    let LatticeState { f, rho, u, .. } = state;
    match schedule {
        Schedule::Sequential => f
            .chunks_mut(cols * Q)
            .zip(rho.chunks_mut(cols))
            .zip(u.chunks_mut(cols))
            .enumerate()
            .map(|(r, ((f, rho), u))| collide_row(nodes, omega, r, f, rho, u))
            .fold(CollideStats::default(), CollideStats::merge),
        Schedule::Parallel => f
            .par_chunks_mut(cols * Q)
            .zip(rho.par_chunks_mut(cols))
            .zip(u.par_chunks_mut(cols))
            .enumerate()
            .map(|(r, ((f, rho), u))| collide_row(nodes, omega, r, f, rho, u))
            .reduce(CollideStats::default, CollideStats::merge),
    }
}

fn run_stream(nodes: &Nodes, schedule: Schedule, f: &[f64], out: &mut [f64]) {
    let row_len = nodes.cols * Q;
    match schedule {
        Schedule::Sequential => out
            .chunks_mut(row_len)
            .enumerate()
            .for_each(|(r, row)| stream_row(nodes, f, r, row)),
        Schedule::Parallel => out
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(r, row)| stream_row(nodes, f, r, row)),
    }
}

/// Density at a left-edge velocity inlet from the populations that arrived
/// from the interior and those moving along the edge.
#[inline]
fn inlet_density(f: &[f64], ux: f64) -> f64 {
    (f[0] + f[3] + f[7] + 2.0 * (f[4] + f[5] + f[6])) / (1.0 - ux)
}

fn run_impose(nodes: &Nodes, state: &mut LatticeState) -> bool {
    let mut ok = true;
    for k in 0..nodes.kind.len() {
        let density = match nodes.kind[k] {
            Kind::Dirichlet => moments(&state.f[k * Q..(k + 1) * Q]).0,
            Kind::Inlet => inlet_density(&state.f[k * Q..(k + 1) * Q], nodes.target[k][0]),
            _ => continue,
        };
        let cell = &mut state.f[k * Q..(k + 1) * Q];
        ok &= density > 0.0 && density.is_finite();
        let u = nodes.target[k];
        cell.copy_from_slice(&equilibrium(density, u));
        state.rho[k] = density;
        state.u[k] = u;
    }
    ok
}

fn check_dims(state: &LatticeState, grid: &BoundaryGrid) -> Result<(), SolverError> {
    let (grid_rows, grid_cols) = grid.dims();
    if state.rows != grid_rows || state.cols != grid_cols {
        return Err(SolverError::DimensionMismatch {
            state_rows: state.rows,
            state_cols: state.cols,
            grid_rows,
            grid_cols,
        });
    }
    Ok(())
}

/// Move every density one link along its direction. Walls and domain
/// edges bounce densities back; porous links bounce back a fraction `beta`;
/// outlet cells then copy their upstream neighbor, rescaled to the
/// reference density.
pub fn stream(state: &LatticeState, grid: &BoundaryGrid) -> Result<LatticeState, SolverError> {
    check_dims(state, grid)?;
    let nodes = Nodes::new(grid, &UnitScale::new(1.0));
    let mut next = state.clone();
    run_stream(&nodes, Schedule::Sequential, &state.f, &mut next.f);
    Ok(next)
}

/// BGK relaxation of every cell toward its local equilibrium.
pub fn collide(state: &LatticeState, params: &SolverParams) -> LatticeState {
    let mut next = state.clone();
    run_collide(None, 1.0 / params.tau_mode.tau(), params.schedule, &mut next);
    next
}

/// Reset inlet and vehicle cells to the equilibrium of their imposed
/// velocity. Inlets take the density implied by the populations arriving
/// from the interior; vehicles keep their local density.
pub fn impose_boundaries(state: &LatticeState, grid: &BoundaryGrid, scale: &UnitScale) -> Result<LatticeState, SolverError> {
    check_dims(state, grid)?;
    let nodes = Nodes::new(grid, scale);
    let mut next = state.clone();
    run_impose(&nodes, &mut next);
    Ok(next)
}

/// Unit density, each drivable row moving at its nominal speed and each
/// Dirichlet cell at its imposed velocity.
pub fn initial_state(grid: &BoundaryGrid, scale: &UnitScale) -> LatticeState {
    let (rows, cols) = grid.dims();
    let mut state = LatticeState::zeros(rows, cols);
    for r in 0..rows {
        let nominal = scale.to_lattice(Vec2::new(grid.row_nominal[r], 0.0));
        for c in 0..cols {
            let u = match grid.cells[[r, c]] {
                CellClass::NoSlipWall => [0.0; 2],
                cell => cell.dirichlet_velocity().map(|v| scale.to_lattice(v)).unwrap_or(nominal),
            };
            state.set_equilibrium(r, c, 1.0, u);
        }
    }
    state
}

/// Stepping engine over one boundary grid with double-buffered streaming.
pub struct Solver {
    nodes: Nodes,
    omega: f64,
    schedule: Schedule,
    state: LatticeState,
    scratch: Vec<f64>,
    iterations: usize,
}

/// One `impose -> stream -> collide` pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Largest per-cell velocity change in lattice units.
    pub max_du: f64,
    pub unstable: bool,
}

impl Solver {
    pub fn new(
        grid: &BoundaryGrid,
        params: &SolverParams,
        scale: &UnitScale,
        init: Option<&LatticeState>,
    ) -> Result<Self, SolverError> {
        params.validate()?;
        let state = match init {
            Some(s) => {
                check_dims(s, grid)?;
                s.clone()
            }
            None => initial_state(grid, scale),
        };
        Ok(Self {
            nodes: Nodes::new(grid, scale),
            omega: 1.0 / params.tau_mode.tau(),
            schedule: params.schedule,
            scratch: vec![0.0; state.f.len()],
            state,
            iterations: 0,
        })
    }

    pub fn step(&mut self) -> StepReport {
        let imposed = run_impose(&self.nodes, &mut self.state);
        run_stream(&self.nodes, self.schedule, &self.state.f, &mut self.scratch);
        std::mem::swap(&mut self.state.f, &mut self.scratch);
        let stats = run_collide(Some(&self.nodes), self.omega, self.schedule, &mut self.state);
        self.iterations += 1;
        StepReport {
            max_du: stats.max_du,
            unstable: stats.unstable || !imposed,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn state(&self) -> &LatticeState {
        &self.state
    }

    /// Final boundary imposition so Dirichlet cells carry their targets.
    pub fn finish(mut self) -> LatticeState {
        run_impose(&self.nodes, &mut self.state);
        self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: LatticeState,
    pub iterations: usize,
    pub converged: bool,
    pub scale: UnitScale,
}

/// Iterate `impose -> stream -> collide` until no cell's velocity moves by
/// `conv_tol` m/s in one step, or `max_iters` is reached (`converged` is
/// then false).
pub fn solve(
    grid: &BoundaryGrid,
    params: &SolverParams,
    scale: &UnitScale,
    init: Option<&LatticeState>,
) -> Result<Solution, SolverError> {
    let mut solver = Solver::new(grid, params, scale, init)?;
    let tol = params.conv_tol * scale.c_u;
    let mut converged = false;
    while solver.iterations() < params.max_iters {
        let report = solver.step();
        if report.unstable {
            return Err(SolverError::NumericalBlowup {
                iteration: solver.iterations(),
            });
        }
        if report.max_du < tol {
            converged = true;
            break;
        }
    }
    let iterations = solver.iterations();
    Ok(Solution {
        state: solver.finish(),
        iterations,
        converged,
        scale: *scale,
    })
}
