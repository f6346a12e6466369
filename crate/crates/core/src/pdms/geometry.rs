//! Planar rigid poses, oriented boxes with a separating-axis overlap test,
//! polylines with arc-length projection.

use serde::{Deserialize, Serialize};

use crate::tensor::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// `self ∘ local`: express a pose given in this pose's frame in the parent frame.
    pub fn compose(&self, local: &Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        Pose {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            heading: wrap_angle(self.heading + local.heading),
        }
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Point in the parent frame expressed in this pose's frame.
    pub fn inverse_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Linear in position, shortest arc in heading.
    pub fn lerp(&self, other: &Pose, f: f64) -> Pose {
        Pose {
            x: self.x + f * (other.x - self.x),
            y: self.y + f * (other.y - self.y),
            heading: wrap_angle(self.heading + f * wrap_angle(other.heading - self.heading)),
        }
    }
}

/// Resample a pose sequence with `substeps` intervals between consecutive knots.
pub fn interpolate(knots: &[Pose], substeps: usize) -> Vec<Pose> {
    let Some(last) = knots.last() else { return Vec::new() };
    let mut out = Vec::with_capacity((knots.len() - 1) * substeps + 1);
    for w in knots.windows(2) {
        for k in 0..substeps {
            out.push(w[0].lerp(&w[1], k as f64 / substeps as f64));
        }
    }
    out.push(*last);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: Pose,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(pose: Pose, length: f64, width: f64) -> Self {
        Self { pose, length, width }
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|p| self.pose.transform_point(p))
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.pose.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// True iff the interiors overlap; touching boxes do not intersect.
    pub fn intersects(&self, other: &OrientedBox) -> bool {
        let (ca, cb) = (self.corners(), other.corners());
        let project = |cs: &[[f64; 2]; 4], ax: [f64; 2]| {
            cs.iter()
                .map(|p| p[0] * ax[0] + p[1] * ax[1])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        self.axes().into_iter().chain(other.axes()).all(|ax| {
            let (a0, a1) = project(&ca, ax);
            let (b0, b1) = project(&cb, ax);
            a0.max(b0) < a1.min(b1)
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let l = self.pose.inverse_point(p);
        l[0].abs() < self.length / 2.0 && l[1].abs() < self.width / 2.0
    }

    /// Same pose, each side changed by `2·margin`.
    pub fn inflated(&self, margin: f64) -> OrientedBox {
        OrientedBox { pose: self.pose, length: self.length + 2.0 * margin, width: self.width + 2.0 * margin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    /// Cumulative arc length at each vertex.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Polyline {
    /// `None` when fewer than two points or zero total length.
    pub fn new(points: Vec<[f64; 2]>) -> Option<Self> {
        if points.len() < 2 || points.iter().flatten().any(|v| !v.is_finite()) {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut s = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cumulative.push(s);
        }
        (s > 0.0).then_some(Self { points, cumulative })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("at least two points")
    }

    /// Arc length of the closest point on the polyline to `p`.
    pub fn project(&self, p: [f64; 2]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            if len2 == 0.0 {
                continue;
            }
            let t = (((p[0] - w[0][0]) * d[0] + (p[1] - w[0][1]) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [w[0][0] + t * d[0], w[0][1] + t * d[1]];
            let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
            if dist < best.0 {
                best = (dist, self.cumulative[i] + t * len2.sqrt());
            }
        }
        best.1
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.points.len() - 1) - 1;
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        let (a, b) = (self.points[i], self.points[i + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

impl<'de> Deserialize<'de> for Polyline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            points: Vec<[f64; 2]>,
        }
        let raw = Raw::deserialize(d)?;
        Polyline::new(raw.points).ok_or_else(|| serde::de::Error::custom("degenerate polyline"))
    }
}
