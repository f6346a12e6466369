use serde::{Deserialize, Serialize};

use crate::tensor::wrap_angle;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const WAYPOINTS: usize = 8;
/// Seconds between waypoints (2 Hz).
pub const WAYPOINT_DT: f64 = 0.5;
pub const HORIZON: f64 = WAYPOINTS as f64 * WAYPOINT_DT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    TurnLeft,
    TurnRight,
    LaneChange,
    Follow,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::TurnLeft, Command::TurnRight, Command::LaneChange, Command::Follow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn from_one_hot(v: &[f64]) -> Result<Self> {
        let set: Vec<usize> = v.iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect();
        match (v.len(), set.as_slice(), v.iter().filter(|x| **x != 0.0).count()) {
            (4, [i], 1) => Ok(Self::ALL[*i]),
            _ => Err(Error::Config(format!("command must be a one-hot 4-vector, got {v:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoStatus {
    /// m/s, ego frame.
    pub velocity: [f64; 2],
    /// m/s², ego frame.
    pub acceleration: [f64; 2],
    pub command: Command,
}

impl EgoStatus {
    /// `[vx, vy, ax, ay, one-hot(4)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(8);
        v.extend(self.velocity);
        v.extend(self.acceleration);
        v.extend(self.command.one_hot());
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("ego status needs 8 finite values, got {}", v.len())));
        }
        Ok(Self { velocity: [v[0], v[1]], acceleration: [v[2], v[3]], command: Command::from_one_hot(&v[4..])? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Eight future ego poses at 2 Hz in the ego frame at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: [Waypoint; WAYPOINTS],
}

impl Trajectory {
    pub fn new(points: [Waypoint; WAYPOINTS]) -> Result<Self> {
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.heading.is_finite())) {
            return Err(Error::Config("trajectory has non-finite coordinates".into()));
        }
        let mut points = points;
        for p in &mut points {
            p.heading = wrap_angle(p.heading);
        }
        Ok(Self { points })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape() != [WAYPOINTS, 3] {
            return Err(Error::Config(format!("trajectory tensor shape {:?}, expected [8, 3]", t.shape())));
        }
        let mut points = [Waypoint::default(); WAYPOINTS];
        for (p, row) in points.iter_mut().zip(t.data().chunks_exact(3)) {
            *p = Waypoint { x: row[0], y: row[1], heading: row[2] };
        }
        Self::new(points)
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| [p.x, p.y, p.heading]).collect();
        Tensor::new(vec![WAYPOINTS, 3], data).expect("finite by construction")
    }

    /// Mean Euclidean distance between corresponding waypoints.
    pub fn ade(&self, other: &Trajectory) -> f64 {
        self.points.iter().zip(&other.points).map(|(a, b)| (a.x - b.x).hypot(a.y - b.y)).sum::<f64>() / WAYPOINTS as f64
    }
}
