//! Frame-to-field glue: normalize, rasterize, solve and convert each
//! observed frame of a sequence.

use rayon::prelude::*;
use thiserror::Error;

use crate::flowfield::{to_physical, VelocityField};
use crate::lbm::{solve, LatticeState, Schedule, Solution, SolverError, SolverParams, UnitScale};
use crate::raster::{build_boundary_grid, rasterize_occupancy, BoundaryGrid, GridSpec, OccupancyGrid, RasterError};
use crate::scene::{prepare_frame, SceneError, SceneFrame, SceneSequence};

pub const DEFAULT_BETA: f64 = 0.7;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub spec: GridSpec,
    /// Bounced-back fraction at lane markings.
    pub beta: f64,
    pub solver: SolverParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            spec: GridSpec::default(),
            beta: DEFAULT_BETA,
            solver: SolverParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameProducts {
    pub occupancy: OccupancyGrid,
    pub boundary: BoundaryGrid,
    pub field: VelocityField,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SequenceProducts {
    pub frames: Vec<FrameProducts>,
    pub scale: UnitScale,
}

impl SequenceProducts {
    pub fn fields(&self) -> Vec<VelocityField> {
        self.frames.iter().map(|f| f.field.clone()).collect()
    }

    pub fn occupancies(&self) -> Vec<OccupancyGrid> {
        self.frames.iter().map(|f| f.occupancy.clone()).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.frames.iter().all(|f| f.converged)
    }
}

/// Occupancy and boundary grids of a raw world frame.
pub fn rasterize_frame(frame: &SceneFrame, config: &PipelineConfig) -> Result<(OccupancyGrid, BoundaryGrid), PipelineError> {
    let prepared = prepare_frame(frame)?;
    let occupancy = rasterize_occupancy(&prepared, &config.spec);
    let boundary = build_boundary_grid(&prepared, &config.spec, config.beta)?;
    Ok((occupancy, boundary))
}

/// Solve every observation frame with one shared unit scale. With
/// `warm_start`, each frame starts from the previous frame's solution;
/// otherwise frames start cold and, under the parallel schedule, are solved
/// concurrently.
pub fn process_sequence(sequence: &SceneSequence, config: &PipelineConfig) -> Result<SequenceProducts, PipelineError> {
    let grids = sequence
        .frames
        .iter()
        .map(|f| rasterize_frame(f, config))
        .collect::<Result<Vec<_>, _>>()?;
    let max_speed = grids
        .iter()
        .map(|(_, b)| b.max_imposed_speed().max(b.row_nominal.iter().copied().fold(0.0, f64::max)))
        .fold(0.0, f64::max);
    let scale = UnitScale::for_speed(max_speed, config.solver.u_lattice_max);

    let finish = |occupancy, boundary: BoundaryGrid, solution: Solution| FrameProducts {
        field: to_physical(&solution.state, &scale, boundary.geometry),
        occupancy,
        boundary,
        iterations: solution.iterations,
        converged: solution.converged,
    };
    let frames = if config.solver.warm_start {
        let mut frames = Vec::with_capacity(grids.len());
        let mut previous: Option<LatticeState> = None;
        for (occupancy, boundary) in grids {
            let solution = solve(&boundary, &config.solver, &scale, previous.as_ref())?;
            previous = Some(solution.state.clone());
            frames.push(finish(occupancy, boundary, solution));
        }
        frames
    } else {
        let run = |(occupancy, boundary): (OccupancyGrid, BoundaryGrid)| {
            let solution = solve(&boundary, &config.solver, &scale, None)?;
            Ok(finish(occupancy, boundary, solution))
        };
        match config.solver.schedule {
            Schedule::Sequential => grids.into_iter().map(run).collect::<Result<Vec<_>, PipelineError>>()?,
            Schedule::Parallel => grids.into_par_iter().map(run).collect::<Result<Vec<_>, PipelineError>>()?,
        }
    };
    Ok(SequenceProducts { frames, scale })
}
