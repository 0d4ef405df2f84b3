//! Throughput measurement of the solver loop body.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::solver::{initial_state, Solver, SolverParams, UnitScale};
use super::state::LatticeState;
use crate::raster::{BoundaryGrid, GridSpec};

/// GPU baseline for comparison: 100 updates of a 256x64 lattice in 4.4 ms.
pub const REFERENCE_MS: f64 = 4.4;
pub const REFERENCE_MLUPS: f64 = 400.0;

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub length: usize,
    pub width: usize,
    pub iterations: usize,
    pub elapsed: Duration,
    pub mlups: f64,
    pub state: LatticeState,
}

impl BenchReport {
    /// Wall time this machine would need for 100 updates of 256x64.
    pub fn reference_equivalent_ms(&self) -> f64 {
        256.0 * 64.0 * 100.0 / (self.mlups * 1e6) * 1e3
    }

    pub fn summary(&self) -> String {
        format!(
            "{}x{} lattice, {} iterations in {:.3} ms: {:.2} MLUPS\n\
             100 updates of 256x64 at this rate: {:.2} ms (reference GPU figure: {:.1} ms, {:.0} MLUPS)",
            self.length,
            self.width,
            self.iterations,
            self.elapsed.as_secs_f64() * 1e3,
            self.mlups,
            self.reference_equivalent_ms(),
            REFERENCE_MS,
            REFERENCE_MLUPS,
        )
    }
}

/// Run `iterations` solver steps on a straight channel of `length x width`
/// cells. The initial state carries a small seeded perturbation so the
/// result depends on `seed` and nothing else.
pub fn bench(length: usize, width: usize, iterations: usize, params: &SolverParams, seed: u64) -> BenchReport {
    assert!(length >= 16 && width >= 16, "bench needs at least 16x16 cells");
    let grid = BoundaryGrid::channel(GridSpec::with_dims(length, width), 30.0);
    let scale = UnitScale::for_grid(&grid, params.u_lattice_max);
    let mut init = initial_state(&grid, &scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in init.f.iter_mut() {
        *v *= 1.0 + rng.gen_range(-1e-4..1e-4);
    }
    let mut solver = Solver::new(&grid, params, &scale, Some(&init)).expect("bench grid is valid");
    let start = Instant::now();
    for _ in 0..iterations {
        solver.step();
    }
    let elapsed = start.elapsed();
    let mlups = (length * width * iterations) as f64 / elapsed.as_secs_f64().max(1e-12) / 1e6;
    BenchReport {
        length,
        width,
        iterations,
        elapsed,
        mlups,
        state: solver.finish(),
    }
}
