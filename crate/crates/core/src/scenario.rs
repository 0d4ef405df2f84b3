//! Synthetic scenario files: flat `key = value` blocks describing a road and
//! a handful of constant-velocity vehicles.
//!
//! ```text
//! # slow lead vehicle 20 m ahead of the target
//! [road]
//! edges = -3.75 3.75        # lateral road edges, m
//! markings = 0              # passable lane markings, m
//! speeds = 30 30            # nominal speed per lane, lowest lateral first
//! direction = left_to_right # or right_to_left
//!
//! [sequence]
//! frames = 10               # observation window h
//! horizon = 25              # prediction steps p
//! recording = 0
//!
//! [vehicle]
//! id = 1
//! target = true
//! position = 0 -1.875       # center at the most recent frame, m
//! velocity = 30 0           # m/s
//! size = 5 2                # length width, m
//! ```
//!
//! Lists accept spaces or commas. Observation frames are spaced 0.2 s apart
//! and end at `t = 0`; the target's future is its constant-velocity path.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scene::{
    DriveDirection, RoadLayout, SceneError, SceneFrame, SceneSequence, Trajectory, Vec2, Vehicle,
    DEFAULT_NOMINAL_SPEED, FRAME_DT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub id: u32,
    pub target: bool,
    pub position: Vec2,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub layout: RoadLayout,
    pub frames: usize,
    pub horizon: usize,
    pub recording: u32,
    pub vehicles: Vec<VehicleSpec>,
}

#[derive(Clone, Copy, PartialEq)]
enum Block {
    None,
    Road,
    Sequence,
    Vehicle,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::None => "top level",
            Block::Road => "[road]",
            Block::Sequence => "[sequence]",
            Block::Vehicle => "[vehicle]",
        })
    }
}

fn numbers(value: &str, line: usize) -> Result<Vec<f64>, ScenarioError> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|_| ScenarioError::Syntax {
                line,
                message: format!("`{s}` is not a number"),
            })
        })
        .collect()
}

fn pair(value: &str, line: usize) -> Result<Vec2, ScenarioError> {
    match numbers(value, line)?.as_slice() {
        [a, b] => Ok(Vec2::new(*a, *b)),
        _ => Err(ScenarioError::Syntax {
            line,
            message: format!("expected two numbers, got `{value}`"),
        }),
    }
}

fn scalar<T: FromStr>(value: &str, line: usize) -> Result<T, ScenarioError> {
    value.parse().map_err(|_| ScenarioError::Syntax {
        line,
        message: format!("cannot parse `{value}`"),
    })
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut block = Block::None;
        let mut edges = None;
        let mut markings = Vec::new();
        let mut speeds = None;
        let mut direction = DriveDirection::LeftToRight;
        let mut frames = 10;
        let mut horizon = 25;
        let mut recording = 0;
        let mut vehicles: Vec<VehicleSpec> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                block = match name.trim() {
                    "road" => Block::Road,
                    "sequence" => Block::Sequence,
                    "vehicle" => {
                        vehicles.push(VehicleSpec {
                            id: vehicles.len() as u32 + 1,
                            target: false,
                            position: Vec2::ZERO,
                            velocity: Vec2::ZERO,
                            length: 4.5,
                            width: 1.8,
                        });
                        Block::Vehicle
                    }
                    other => {
                        return Err(ScenarioError::Syntax {
                            line,
                            message: format!("unknown block [{other}]"),
                        })
                    }
                };
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ScenarioError::Syntax {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match (block, key) {
                (Block::Road, "edges") => edges = Some(pair(value, line)?),
                (Block::Road, "markings") => markings = numbers(value, line)?,
                (Block::Road, "speeds") => speeds = Some(numbers(value, line)?),
                (Block::Road, "direction") => {
                    direction = match value {
                        "left_to_right" => DriveDirection::LeftToRight,
                        "right_to_left" => DriveDirection::RightToLeft,
                        _ => {
                            return Err(ScenarioError::Syntax {
                                line,
                                message: format!("unknown direction `{value}`"),
                            })
                        }
                    }
                }
                (Block::Sequence, "frames") => frames = scalar(value, line)?,
                (Block::Sequence, "horizon") => horizon = scalar(value, line)?,
                (Block::Sequence, "recording") => recording = scalar(value, line)?,
                (Block::Vehicle, _) => {
                    let v = vehicles.last_mut().expect("vehicle block open");
                    match key {
                        "id" => v.id = scalar(value, line)?,
                        "target" => v.target = scalar(value, line)?,
                        "position" => v.position = pair(value, line)?,
                        "velocity" => v.velocity = pair(value, line)?,
                        "size" => {
                            let s = pair(value, line)?;
                            v.length = s.x;
                            v.width = s.y;
                        }
                        _ => {
                            return Err(ScenarioError::Syntax {
                                line,
                                message: format!("unknown key `{key}` in [vehicle]"),
                            })
                        }
                    }
                }
                _ => {
                    return Err(ScenarioError::Syntax {
                        line,
                        message: format!("unknown key `{key}` in {block}"),
                    })
                }
            }
        }

        let edges = edges.ok_or(ScenarioError::Missing("[road] edges"))?;
        let speeds = speeds.unwrap_or_else(|| vec![DEFAULT_NOMINAL_SPEED; markings.len() + 1]);
        let layout = RoadLayout::new((edges.x, edges.y), markings, speeds, direction)?;
        if frames == 0 || horizon == 0 {
            return Err(ScenarioError::Missing("positive frames and horizon"));
        }
        Ok(Scenario {
            layout,
            frames,
            horizon,
            recording,
            vehicles,
        })
    }
}

impl Scenario {
    fn vehicles_at(&self, t: f64) -> Vec<Vehicle> {
        self.vehicles
            .iter()
            .map(|v| Vehicle {
                id: v.id,
                center: v.position + v.velocity * t,
                velocity: v.velocity,
                length: v.length,
                width: v.width,
                is_target: v.target,
            })
            .collect()
    }

    /// Observation frames at `t = -(h-1) dt .. 0` and the target's
    /// constant-velocity future.
    pub fn to_sequence(&self) -> Result<SceneSequence, ScenarioError> {
        let h = self.frames;
        let frames = (0..h)
            .map(|k| {
                let t = (k as f64 - (h - 1) as f64) * FRAME_DT;
                SceneFrame::new(t, self.vehicles_at(t), self.layout.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let tv = self
            .vehicles
            .iter()
            .find(|v| v.target)
            .ok_or(ScenarioError::Scene(SceneError::MissingTargetVehicle))?;
        let truth = (1..=self.horizon)
            .map(|j| tv.position + tv.velocity * (j as f64 * FRAME_DT))
            .collect();
        Ok(SceneSequence::new(self.recording, 0, frames, Trajectory::new(truth))?)
    }
}

/// Two-lane road with the target in the right lane and a vehicle 20 m ahead
/// of it in the same lane moving at `lead_speed`.
pub fn two_vehicle_scenario(lead_speed: f64) -> Scenario {
    Scenario {
        layout: RoadLayout::uniform(2, 3.75, 0.0, DEFAULT_NOMINAL_SPEED).expect("valid layout"),
        frames: 10,
        horizon: 25,
        recording: 0,
        vehicles: vec![
            VehicleSpec {
                id: 1,
                target: true,
                position: Vec2::new(0.0, -1.875),
                velocity: Vec2::new(30.0, 0.0),
                length: 5.0,
                width: 2.0,
            },
            VehicleSpec {
                id: 2,
                target: false,
                position: Vec2::new(20.0, -1.875),
                velocity: Vec2::new(lead_speed, 0.0),
                length: 5.0,
                width: 2.0,
            },
        ],
    }
}
