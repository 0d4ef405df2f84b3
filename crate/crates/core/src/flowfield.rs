//! Physical-unit velocity fields and streamline prediction.

use ndarray::Array2;
use thiserror::Error;

use crate::lbm::{LatticeState, UnitScale};
use crate::raster::{GridGeometry, GridSpec};
pub use crate::scene::Trajectory;
use crate::scene::{SceneSequence, Vec2, FRAME_DT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("position ({x:.3}, {y:.3}) m is outside the field")]
    OutOfField { x: f64, y: f64 },
    #[error("no velocity field to integrate over")]
    NoField,
    #[error("start position ({x:.3}, {y:.3}) m is outside the field")]
    StartOutside { x: f64, y: f64 },
}

/// Per-cell velocity in m/s on a placed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub vx: Array2<f64>,
    pub vy: Array2<f64>,
    pub geometry: GridGeometry,
}

impl VelocityField {
    pub fn zeros(geometry: GridGeometry) -> Self {
        let dim = (geometry.rows(), geometry.cols());
        Self {
            vx: Array2::zeros(dim),
            vy: Array2::zeros(dim),
            geometry,
        }
    }

    /// Field whose value at each cell center is `f(center)`.
    pub fn from_fn(geometry: GridGeometry, f: impl Fn(Vec2) -> Vec2) -> Self {
        let mut field = Self::zeros(geometry);
        for r in 0..geometry.rows() {
            for c in 0..geometry.cols() {
                let v = f(geometry.cell_center(r, c));
                field.vx[[r, c]] = v.x;
                field.vy[[r, c]] = v.y;
            }
        }
        field
    }

    pub fn spec(&self) -> &GridSpec {
        &self.geometry.spec
    }

    pub fn at(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(self.vx[[row, col]], self.vy[[row, col]])
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().chain(self.vy.iter()).all(|v| v.is_finite())
    }

    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(self.vy.iter())
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }
}

/// Lattice velocities divided by the unit scale, on the given placement.
pub fn to_physical(state: &LatticeState, scale: &UnitScale, geometry: GridGeometry) -> VelocityField {
    assert_eq!(
        (state.rows, state.cols),
        (geometry.rows(), geometry.cols()),
        "lattice and grid dimensions differ"
    );
    let mut field = VelocityField::zeros(geometry);
    for (k, u) in state.u.iter().enumerate() {
        let (r, c) = (k / state.cols, k % state.cols);
        let v = scale.to_physical(*u);
        field.vx[[r, c]] = v.x;
        field.vy[[r, c]] = v.y;
    }
    field
}

/// Bilinear interpolation between the four surrounding cell centers.
/// Between the outermost centers and the grid edge the nearest value holds.
pub fn sample_velocity(field: &VelocityField, pos: Vec2) -> Result<Vec2, FlowError> {
    let g = &field.geometry;
    if !pos.is_finite() || !g.contains(pos) {
        return Err(FlowError::OutOfField { x: pos.x, y: pos.y });
    }
    let (fr, fc) = g.fractional_index(pos);
    let fr = fr.clamp(0.0, (g.rows() - 1) as f64);
    let fc = fc.clamp(0.0, (g.cols() - 1) as f64);
    let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(g.rows() - 1), (c0 + 1).min(g.cols() - 1));
    let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
    let lerp2 = |a: &Array2<f64>| {
        let bottom = a[[r0, c0]] * (1.0 - tc) + a[[r0, c1]] * tc;
        let top = a[[r1, c0]] * (1.0 - tc) + a[[r1, c1]] * tc;
        bottom * (1.0 - tr) + top * tr
    };
    Ok(Vec2::new(lerp2(&field.vx), lerp2(&field.vy)))
}

fn rk4_step(field: &VelocityField, p: Vec2, dt: f64) -> Result<Vec2, FlowError> {
    let k1 = sample_velocity(field, p)?;
    let k2 = sample_velocity(field, p + k1 * (dt / 2.0))?;
    let k3 = sample_velocity(field, p + k2 * (dt / 2.0))?;
    let k4 = sample_velocity(field, p + k3 * dt)?;
    Ok(p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Classical fourth-order Runge-Kutta path through a frozen field, one
/// point per `dt` for `steps` steps. Once the path (or any RK stage) leaves
/// the field, the remaining points continue at the last sampled velocity and
/// the trajectory is flagged as extrapolated.
pub fn integrate_streamline(field: &VelocityField, start: Vec2, dt: f64, steps: usize) -> Result<Trajectory, FlowError> {
    let mut last_v = sample_velocity(field, start).map_err(|_| FlowError::StartOutside { x: start.x, y: start.y })?;
    let mut p = start;
    let mut points = Vec::with_capacity(steps);
    let mut extrapolated = false;
    for _ in 0..steps {
        if !extrapolated {
            match rk4_step(field, p, dt) {
                Ok(next) => {
                    p = next;
                    match sample_velocity(field, p) {
                        Ok(v) => last_v = v,
                        Err(_) => extrapolated = true,
                    }
                    points.push(p);
                    continue;
                }
                Err(_) => extrapolated = true,
            }
        }
        p = p + last_v * dt;
        points.push(p);
    }
    Ok(Trajectory { points, dt, extrapolated })
}

/// Streamline predictor: integrate from the target (the origin of the
/// target-centric frame) through the most recent frame's field. Points are
/// relative to the start position.
pub fn predict_streamline(sequence: &SceneSequence, fields: &[VelocityField]) -> Result<Trajectory, FlowError> {
    predict_streamline_fan(sequence, fields, &[Vec2::ZERO]).map(|mut v| v.remove(0))
}

/// One streamline per start offset around the target.
pub fn predict_streamline_fan(
    sequence: &SceneSequence,
    fields: &[VelocityField],
    offsets: &[Vec2],
) -> Result<Vec<Trajectory>, FlowError> {
    let field = fields.last().ok_or(FlowError::NoField)?;
    offsets
        .iter()
        .map(|&start| {
            integrate_streamline(field, start, FRAME_DT, sequence.p()).map(|t| t.translated(-start))
        })
        .collect()
}
