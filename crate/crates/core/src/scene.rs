//! Driving-scene domain types and the two frame transforms every other
//! module relies on: travel-direction normalization and re-centering on the
//! target vehicle.
//!
//! World frame: `x` is longitudinal, `y` lateral, right-handed (so `+y` is
//! the driver's left once traffic moves toward `+x`).

use std::collections::HashSet;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Time between consecutive frames of a sequence, seconds.
pub const FRAME_DT: f64 = 0.2;

/// Nominal lane speed used when a recording carries no speed limit (m/s).
pub const DEFAULT_NOMINAL_SPEED: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("frame has no target vehicle")]
    MissingTargetVehicle,
    #[error("frame has {0} target vehicles, expected exactly one")]
    MultipleTargetVehicles(usize),
    #[error("duplicate vehicle id {0}")]
    DuplicateVehicleId(u32),
    #[error("vehicle {id}: extent must be positive, got {length} x {width}")]
    BadExtent { id: u32, length: f64, width: f64 },
    #[error("invalid road layout: {0}")]
    InvalidLayout(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub center: Vec2,
    pub velocity: Vec2,
    /// Longitudinal length, meters.
    pub length: f64,
    /// Lateral width, meters.
    pub width: f64,
    pub is_target: bool,
}

impl Vehicle {
    pub fn new(id: u32, center: Vec2, velocity: Vec2, length: f64, width: f64) -> Self {
        Self {
            id,
            center,
            velocity,
            length,
            width,
            is_target: false,
        }
    }

    pub fn target(mut self) -> Self {
        self.is_target = true;
        self
    }

    /// Axis-aligned footprint as `(min, max)` corners.
    pub fn footprint(&self) -> (Vec2, Vec2) {
        let half = Vec2::new(self.length / 2.0, self.width / 2.0);
        (self.center - half, self.center + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriveDirection {
    #[default]
    LeftToRight,
    RightToLeft,
}

/// Lateral road description. Lanes are numbered from the lowest lateral
/// position upward; `lane_speeds[k]` is the nominal speed of lane `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadLayout {
    pub lane_markings: Vec<f64>,
    pub road_edges: (f64, f64),
    pub lane_speeds: Vec<f64>,
    pub direction: DriveDirection,
}

impl RoadLayout {
    pub fn new(
        road_edges: (f64, f64),
        mut lane_markings: Vec<f64>,
        lane_speeds: Vec<f64>,
        direction: DriveDirection,
    ) -> Result<Self, SceneError> {
        lane_markings.sort_by(f64::total_cmp);
        let layout = Self {
            lane_markings,
            road_edges,
            lane_speeds,
            direction,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Evenly spaced lanes of `lane_width` centered on `center`, all with the
    /// same nominal speed.
    pub fn uniform(lanes: usize, lane_width: f64, center: f64, speed: f64) -> Result<Self, SceneError> {
        if lanes == 0 {
            return Err(SceneError::InvalidLayout("need at least one lane".into()));
        }
        let lo = center - lanes as f64 * lane_width / 2.0;
        let markings = (1..lanes).map(|k| lo + k as f64 * lane_width).collect();
        Self::new(
            (lo, lo + lanes as f64 * lane_width),
            markings,
            vec![speed; lanes],
            DriveDirection::LeftToRight,
        )
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let (lo, hi) = self.road_edges;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SceneError::InvalidLayout(format!("road edges ({lo}, {hi}) not increasing")));
        }
        if let Some(m) = self.lane_markings.iter().find(|&&m| !(m > lo && m < hi)) {
            return Err(SceneError::InvalidLayout(format!("marking {m} outside road edges")));
        }
        if self.lane_speeds.len() != self.lane_count() {
            return Err(SceneError::InvalidLayout(format!(
                "{} lane speeds for {} lanes",
                self.lane_speeds.len(),
                self.lane_count()
            )));
        }
        if let Some(s) = self.lane_speeds.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(SceneError::InvalidLayout(format!("nominal speed {s} must be positive")));
        }
        Ok(())
    }

    pub fn lane_count(&self) -> usize {
        self.lane_markings.len() + 1
    }

    pub fn centerline(&self) -> f64 {
        (self.road_edges.0 + self.road_edges.1) / 2.0
    }

    /// Lane containing lateral position `y`, or `None` off the road.
    pub fn lane_of(&self, y: f64) -> Option<usize> {
        let (lo, hi) = self.road_edges;
        if y < lo || y > hi {
            return None;
        }
        Some(self.lane_markings.iter().take_while(|&&m| y >= m).count())
    }

    pub fn max_nominal_speed(&self) -> f64 {
        self.lane_speeds.iter().copied().fold(0.0, f64::max)
    }

    pub fn contains_lateral(&self, y: f64) -> bool {
        y >= self.road_edges.0 && y <= self.road_edges.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub timestamp: f64,
    pub vehicles: Vec<Vehicle>,
    pub layout: RoadLayout,
}

impl SceneFrame {
    pub fn new(timestamp: f64, vehicles: Vec<Vehicle>, layout: RoadLayout) -> Result<Self, SceneError> {
        let frame = Self {
            timestamp,
            vehicles,
            layout,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.layout.validate()?;
        let mut ids = HashSet::new();
        for v in &self.vehicles {
            if !ids.insert(v.id) {
                return Err(SceneError::DuplicateVehicleId(v.id));
            }
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(SceneError::BadExtent {
                    id: v.id,
                    length: v.length,
                    width: v.width,
                });
            }
        }
        match self.vehicles.iter().filter(|v| v.is_target).count() {
            1 => Ok(()),
            0 => Err(SceneError::MissingTargetVehicle),
            n => Err(SceneError::MultipleTargetVehicles(n)),
        }
    }

    pub fn target(&self) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.is_target)
    }

    pub fn surrounding(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().filter(|v| !v.is_target)
    }
}

/// Timestamped positions at [`FRAME_DT`] spacing. Point `j` is the position
/// at `(j + 1) * dt` after the reference instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<Vec2>,
    pub dt: f64,
    /// Set when part of the path was extrapolated past the end of a field.
    pub extrapolated: bool,
}

impl Trajectory {
    pub fn new(points: Vec<Vec2>) -> Self {
        Self {
            points,
            dt: FRAME_DT,
            extrapolated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.points.len()).map(move |j| j as f64 * self.dt)
    }

    pub fn translated(&self, by: Vec2) -> Self {
        Self {
            points: self.points.iter().map(|&p| p + by).collect(),
            ..self.clone()
        }
    }
}

/// One training/evaluation sample: `h` observed frames and the target's
/// next `p` positions, all in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub recording_id: u32,
    pub anchor_frame: i64,
    pub frames: Vec<SceneFrame>,
    pub future_truth: Trajectory,
}

impl SceneSequence {
    pub fn new(
        recording_id: u32,
        anchor_frame: i64,
        frames: Vec<SceneFrame>,
        future_truth: Trajectory,
    ) -> Result<Self, SceneError> {
        let seq = Self {
            recording_id,
            anchor_frame,
            frames,
            future_truth,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| SceneError::InvalidSequence("no observation frames".into()))?;
        if self.future_truth.is_empty() {
            return Err(SceneError::InvalidSequence("empty future trajectory".into()));
        }
        first.validate()?;
        let tv = first.target().map(|v| v.id);
        for pair in self.frames.windows(2) {
            pair[1].validate()?;
            if pair[1].target().map(|v| v.id) != tv {
                return Err(SceneError::InvalidSequence("target vehicle changes within sequence".into()));
            }
            let step = pair[1].timestamp - pair[0].timestamp;
            if (step - FRAME_DT).abs() > 1e-9 {
                return Err(SceneError::InvalidSequence(format!(
                    "timestamp step {step} is not {FRAME_DT} s"
                )));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> usize {
        self.frames.len()
    }

    pub fn p(&self) -> usize {
        self.future_truth.len()
    }

    pub fn tv_id(&self) -> u32 {
        self.frames[0].target().map(|v| v.id).unwrap_or_default()
    }

    pub fn latest(&self) -> &SceneFrame {
        self.frames.last().expect("validated sequence has frames")
    }

    /// Ground truth expressed in the normalized, target-centered frame of the
    /// most recent observation.
    pub fn tv_centric_truth(&self) -> Result<Trajectory, SceneError> {
        let map = FrameMap::tv_centric(self.latest())?;
        Ok(Trajectory {
            points: self.future_truth.points.iter().map(|&p| map.point(p)).collect(),
            ..self.future_truth.clone()
        })
    }
}

/// Rigid map taking world coordinates to the normalized, target-centered
/// frame: optional half-turn about the road center, then a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMap {
    flip: bool,
    centerline: f64,
    offset: Vec2,
}

impl FrameMap {
    pub fn identity() -> Self {
        Self {
            flip: false,
            centerline: 0.0,
            offset: Vec2::ZERO,
        }
    }

    fn direction(frame: &SceneFrame) -> Self {
        Self {
            flip: frame.layout.direction == DriveDirection::RightToLeft,
            centerline: frame.layout.centerline(),
            offset: Vec2::ZERO,
        }
    }

    pub fn tv_centric(frame: &SceneFrame) -> Result<Self, SceneError> {
        let dir = Self::direction(frame);
        let tv = frame.target().ok_or(SceneError::MissingTargetVehicle)?;
        Ok(Self {
            offset: -dir.point(tv.center),
            ..dir
        })
    }

    pub fn point(&self, p: Vec2) -> Vec2 {
        let q = if self.flip {
            Vec2::new(-p.x, 2.0 * self.centerline - p.y)
        } else {
            p
        };
        q + self.offset
    }

    pub fn velocity(&self, v: Vec2) -> Vec2 {
        if self.flip {
            -v
        } else {
            v
        }
    }

    pub fn lateral(&self, y: f64) -> f64 {
        let q = if self.flip { 2.0 * self.centerline - y } else { y };
        q + self.offset.y
    }

    fn apply(&self, frame: &SceneFrame) -> SceneFrame {
        let vehicles = frame
            .vehicles
            .iter()
            .map(|v| Vehicle {
                center: self.point(v.center),
                velocity: self.velocity(v.velocity),
                ..v.clone()
            })
            .collect();
        let l = &frame.layout;
        let (mut e0, mut e1) = (self.lateral(l.road_edges.0), self.lateral(l.road_edges.1));
        if e0 > e1 {
            std::mem::swap(&mut e0, &mut e1);
        }
        let mut markings: Vec<f64> = l.lane_markings.iter().map(|&m| self.lateral(m)).collect();
        markings.sort_by(f64::total_cmp);
        let mut lane_speeds = l.lane_speeds.clone();
        if self.flip {
            lane_speeds.reverse();
        }
        SceneFrame {
            timestamp: frame.timestamp,
            vehicles,
            layout: RoadLayout {
                lane_markings: markings,
                road_edges: (e0, e1),
                lane_speeds,
                direction: DriveDirection::LeftToRight,
            },
        }
    }
}

/// Rotate a right-to-left frame by a half turn about its road centerline so
/// traffic moves toward `+x`. Left-to-right frames come back unchanged.
pub fn normalize_direction(frame: &SceneFrame) -> SceneFrame {
    FrameMap::direction(frame).apply(frame)
}

/// Translate the frame so the target vehicle sits at the origin.
pub fn tv_frame_transform(frame: &SceneFrame) -> Result<SceneFrame, SceneError> {
    let tv = frame.target().ok_or(SceneError::MissingTargetVehicle)?;
    let map = FrameMap {
        flip: false,
        centerline: 0.0,
        offset: -tv.center,
    };
    Ok(map.apply(frame))
}

/// Direction normalization followed by target centering.
pub fn prepare_frame(frame: &SceneFrame) -> Result<SceneFrame, SceneError> {
    tv_frame_transform(&normalize_direction(frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_lane(direction: DriveDirection) -> RoadLayout {
        RoadLayout::new((-3.75, 3.75), vec![0.0], vec![30.0, 25.0], direction).unwrap()
    }

    fn frame(direction: DriveDirection) -> SceneFrame {
        SceneFrame::new(
            0.0,
            vec![
                Vehicle::new(1, Vec2::new(100.0, 5.0), Vec2::new(-30.0, 0.5), 4.5, 1.9).target(),
                Vehicle::new(2, Vec2::new(130.0, 2.0), Vec2::new(-25.0, 0.0), 12.0, 2.5),
            ],
            RoadLayout {
                road_edges: (0.0, 8.0),
                lane_markings: vec![4.0],
                lane_speeds: vec![30.0, 25.0],
                direction,
            },
        )
        .unwrap()
    }

    #[test]
    fn left_to_right_is_identity() {
        let f = frame(DriveDirection::LeftToRight);
        assert_eq!(normalize_direction(&f), f);
    }

    #[test]
    fn right_to_left_flips_velocity() {
        let f = frame(DriveDirection::RightToLeft);
        let n = normalize_direction(&f);
        assert_eq!(n.layout.direction, DriveDirection::LeftToRight);
        assert_eq!(n.vehicles[0].velocity.x, 30.0);
        // lateral mirror about the centerline y = 4
        assert_eq!(n.vehicles[0].center.y, 3.0);
        assert_eq!(n.layout.lane_speeds, vec![25.0, 30.0]);
        assert_eq!(n.layout.road_edges, (0.0, 8.0));
    }

    #[test]
    fn tv_translation() {
        let f = frame(DriveDirection::LeftToRight);
        let t = tv_frame_transform(&f).unwrap();
        assert_eq!(t.vehicles[0].center, Vec2::ZERO);
        assert_eq!(t.vehicles[1].center, Vec2::new(30.0, -3.0));
        assert_eq!(t.vehicles[1].velocity, f.vehicles[1].velocity);
        assert_eq!(t.layout.road_edges, (-5.0, 3.0));
    }

    #[test]
    fn tv_only_frame() {
        let f = SceneFrame::new(
            0.0,
            vec![Vehicle::new(7, Vec2::new(3.0, 1.0), Vec2::new(20.0, 0.0), 4.0, 2.0).target()],
            two_lane(DriveDirection::LeftToRight),
        )
        .unwrap();
        let t = tv_frame_transform(&f).unwrap();
        assert_eq!(t.vehicles.len(), 1);
        assert_eq!(t.vehicles[0].center, Vec2::ZERO);
    }

    #[test]
    fn missing_target() {
        let mut f = frame(DriveDirection::LeftToRight);
        f.vehicles[0].is_target = false;
        assert_eq!(tv_frame_transform(&f), Err(SceneError::MissingTargetVehicle));
        assert_eq!(f.validate(), Err(SceneError::MissingTargetVehicle));
    }

    #[test]
    fn layout_validation() {
        assert!(RoadLayout::new((0.0, 8.0), vec![9.0], vec![30.0, 30.0], DriveDirection::LeftToRight).is_err());
        assert!(RoadLayout::new((0.0, 8.0), vec![4.0], vec![30.0], DriveDirection::LeftToRight).is_err());
        assert!(RoadLayout::new((0.0, 8.0), vec![4.0], vec![30.0, 0.0], DriveDirection::LeftToRight).is_err());
        let l = two_lane(DriveDirection::LeftToRight);
        assert_eq!(l.lane_of(-1.0), Some(0));
        assert_eq!(l.lane_of(1.0), Some(1));
        assert_eq!(l.lane_of(5.0), None);
    }

    #[test]
    fn sequence_timestamp_step() {
        let mut a = frame(DriveDirection::LeftToRight);
        let mut b = a.clone();
        a.timestamp = 1.0;
        b.timestamp = 1.2;
        let truth = Trajectory::new(vec![Vec2::ZERO]);
        assert!(SceneSequence::new(0, 0, vec![a.clone(), b.clone()], truth.clone()).is_ok());
        b.timestamp = 1.25;
        assert!(SceneSequence::new(0, 0, vec![a, b], truth).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = SceneFrame> {
        let veh = (-100.0..100.0f64, -3.0..3.0f64, -40.0..40.0f64, -2.0..2.0f64, 1.0..15.0f64, 1.0..3.0f64);
        (
            proptest::collection::vec(veh, 1..8),
            any::<bool>(),
            -5.0..5.0f64,
        )
            .prop_map(|(vs, rtl, c)| {
                let vehicles = vs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (x, y, vx, vy, l, w))| Vehicle {
                        id: i as u32,
                        center: Vec2::new(x, y + c),
                        velocity: Vec2::new(vx, vy),
                        length: l,
                        width: w,
                        is_target: i == 0,
                    })
                    .collect();
                let direction = if rtl { DriveDirection::RightToLeft } else { DriveDirection::LeftToRight };
                let mut layout = RoadLayout::uniform(2, 3.75, c, 30.0).unwrap();
                layout.direction = direction;
                SceneFrame::new(0.0, vehicles, layout).unwrap()
            })
    }

    fn pairwise(f: &SceneFrame) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for a in &f.vehicles {
            for b in &f.vehicles {
                out.push(((a.center - b.center).norm(), a.velocity.norm()));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(f in arb_frame()) {
            let once = normalize_direction(&f);
            prop_assert_eq!(normalize_direction(&once), once);
        }

        #[test]
        fn normalize_preserves_distances_and_speeds(f in arb_frame()) {
            let n = normalize_direction(&f);
            for ((d0, s0), (d1, s1)) in pairwise(&f).into_iter().zip(pairwise(&n)) {
                prop_assert!((d0 - d1).abs() < 1e-9);
                prop_assert!((s0 - s1).abs() < 1e-12);
            }
        }

        #[test]
        fn tv_transform_preserves_displacements(f in arb_frame()) {
            let t = tv_frame_transform(&f).unwrap();
            for (a0, a1) in f.vehicles.iter().zip(&t.vehicles) {
                for (b0, b1) in f.vehicles.iter().zip(&t.vehicles) {
                    let d0 = a0.center - b0.center;
                    let d1 = a1.center - b1.center;
                    prop_assert!((d0 - d1).norm() < 1e-9);
                }
            }
            prop_assert_eq!(t.target().unwrap().center, Vec2::ZERO);
        }
    }
}
