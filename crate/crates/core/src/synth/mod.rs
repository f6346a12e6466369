//! Deterministic synthetic driving scenarios: road geometry, agent tracks, a
//! compliant ground-truth plan, and the two sensor rasters the planner sees.

mod io;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{read_manifest, read_set, write_set, SampleEntry, SetManifest, SET_FORMAT, SET_VERSION};
pub use render::{bev_cell_center, render_bev, render_camera, BEV_CELL, BEV_SIZE, CAMERA_HEIGHT, CAMERA_WIDTH};

use crate::model::{Command, EgoStatus, ModelInput, Trajectory, Waypoint, WAYPOINT_DT};
use crate::pdms::{self, AgentTrack, DrivableMask, Polyline, Pose, ScenarioLog, ScoringConfig, TRACK_LEN};
use crate::rng::{Seed, SeedRng};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 2.0;
/// Regeneration attempts before a spec is declared infeasible.
pub const MAX_ATTEMPTS: u64 = 32;
/// Drivable-mask cell size (m) and extent in the ego frame.
pub const MASK_RESOLUTION: f64 = 0.5;
const MASK_ORIGIN: [f64; 2] = [-16.0, -48.0];
const MASK_CELLS: usize = 192;
const CAR: (f64, f64) = (4.5, 2.0);
const PEDESTRIAN: (f64, f64) = (0.8, 0.8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    StraightFollow,
    YieldToCrossingAgent,
    LaneChange,
    LeftTurn,
    RightTurn,
    StopAtLine,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::StraightFollow,
        ScenarioKind::YieldToCrossingAgent,
        ScenarioKind::LaneChange,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::StopAtLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::StraightFollow => "straight-follow",
            ScenarioKind::YieldToCrossingAgent => "yield-to-crossing-agent",
            ScenarioKind::LaneChange => "lane-change",
            ScenarioKind::LeftTurn => "left-turn",
            ScenarioKind::RightTurn => "right-turn",
            ScenarioKind::StopAtLine => "stop-at-line",
        }
    }

    pub fn command(self) -> Command {
        match self {
            ScenarioKind::LaneChange => Command::LaneChange,
            ScenarioKind::LeftTurn => Command::TurnLeft,
            ScenarioKind::RightTurn => Command::TurnRight,
            _ => Command::Follow,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown scenario kind {s:?}; valid kinds: {}", valid.join(", ")))
        })
    }
}

/// Inputs to [`generate`]; anything left open is drawn from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub seed: Seed,
    pub kind: ScenarioKind,
    /// Lane width (m); drawn from [3.25, 4] when absent.
    pub lane_width: Option<f64>,
    /// Turn radius (m) for turning kinds; drawn from [12, 20] when absent.
    pub turn_radius: Option<f64>,
    /// Number of background agents; drawn from {0, 1, 2} when absent.
    pub agent_count: Option<usize>,
}

impl ScenarioSpec {
    pub fn new(id: impl Into<String>, seed: Seed, kind: ScenarioKind) -> Self {
        Self { id: id.into(), seed, kind, lane_width: None, turn_radius: None, agent_count: None }
    }
}

/// Straight drivable strip around a polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadStrip {
    pub centerline: Polyline,
    pub half_width: f64,
}

impl RoadStrip {
    fn contains(&self, p: [f64; 2]) -> bool {
        let s = self.centerline.project(p);
        let q = self.centerline.point_at(s);
        (p[0] - q[0]).hypot(p[1] - q[1]) <= self.half_width
    }
}

/// World-frame scene geometry at t = 0 plus agent futures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ego_origin: Pose,
    pub roads: Vec<RoadStrip>,
    pub agents: Vec<AgentTrack>,
    /// Painted stop or yield line as a segment.
    pub stop_line: Option<[[f64; 2]; 2]>,
}

impl Scene {
    pub fn is_drivable(&self, p: [f64; 2]) -> bool {
        self.roads.iter().any(|r| r.contains(p))
    }

    pub fn transformed(&self, motion: &Pose) -> Scene {
        let line = |l: &Polyline| {
            Polyline::new(l.points().iter().map(|&p| motion.transform_point(p)).collect()).expect("rigid")
        };
        Scene {
            ego_origin: motion.compose(&self.ego_origin),
            roads: self
                .roads
                .iter()
                .map(|r| RoadStrip { centerline: line(&r.centerline), half_width: r.half_width })
                .collect(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack { poses: a.poses.iter().map(|p| motion.compose(p)).collect(), ..a.clone() })
                .collect(),
            stop_line: self.stop_line.map(|s| s.map(|p| motion.transform_point(p))),
        }
    }

    fn drivable_mask(&self) -> DrivableMask {
        let origin = self.ego_origin.compose(&Pose::new(MASK_ORIGIN[0], MASK_ORIGIN[1], 0.0));
        let mut cells = Vec::with_capacity(MASK_CELLS * MASK_CELLS);
        for r in 0..MASK_CELLS {
            for c in 0..MASK_CELLS {
                let local = [(c as f64 + 0.5) * MASK_RESOLUTION, (r as f64 + 0.5) * MASK_RESOLUTION];
                cells.push(self.is_drivable(origin.transform_point(local)));
            }
        }
        DrivableMask::new(origin, MASK_RESOLUTION, MASK_CELLS, MASK_CELLS, cells).expect("fixed geometry")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub id: String,
    pub kind: ScenarioKind,
    pub ego: EgoStatus,
    pub gt: Trajectory,
    pub camera: Tensor,
    pub bev: Tensor,
    /// Scoring geometry with the ground truth as the plan.
    pub log: ScenarioLog,
}

impl ScenarioSample {
    pub fn input(&self) -> ModelInput {
        ModelInput { camera: self.camera.clone(), bev: self.bev.clone(), ego: self.ego }
    }
}

/// Route: straight approach, optional circular arc, straight exit.
#[derive(Debug, Clone, Copy)]
struct Route {
    approach: f64,
    radius: f64,
    /// Signed turn angle; 0 for a straight road.
    turn: f64,
}

impl Route {
    fn straight() -> Self {
        Self { approach: f64::INFINITY, radius: 1.0, turn: 0.0 }
    }

    fn arc_len(&self) -> f64 {
        self.radius * self.turn.abs()
    }

    fn pose_at(&self, s: f64) -> Pose {
        if s <= self.approach || self.turn == 0.0 {
            return Pose::new(s, 0.0, 0.0);
        }
        let sign = self.turn.signum();
        let u = (s - self.approach).min(self.arc_len());
        let phi = u / self.radius;
        let arc =
            Pose::new(self.approach + self.radius * phi.sin(), sign * self.radius * (1.0 - phi.cos()), sign * phi);
        let rest = s - self.approach - u;
        arc.compose(&Pose::new(rest, 0.0, 0.0))
    }

    fn polyline(&self, from: f64, to: f64) -> Polyline {
        let n = if self.turn == 0.0 { 1 } else { (to - from).ceil() as usize };
        Polyline::new(
            (0..=n).map(|i| self.pose_at(from + (to - from) * i as f64 / n as f64)).map(|p| [p.x, p.y]).collect(),
        )
        .expect("non-degenerate route")
    }
}

/// Longitudinal profile: cruise with constant acceleration, or brake to a stop.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Cruise { v0: f64, accel: f64 },
    Stop { v0: f64, distance: f64 },
}

impl Profile {
    fn s(&self, t: f64) -> f64 {
        match *self {
            Profile::Cruise { v0, accel } => v0 * t + 0.5 * accel * t * t,
            Profile::Stop { v0, distance } => {
                let a = v0 * v0 / (2.0 * distance);
                let t = t.min(v0 / a);
                v0 * t - 0.5 * a * t * t
            }
        }
    }

    fn speed(&self, t: f64) -> f64 {
        match *self {
            Profile::Cruise { v0, accel } => v0 + accel * t,
            Profile::Stop { v0, distance } => (v0 - v0 * v0 / (2.0 * distance) * t).max(0.0),
        }
    }

    fn v0(&self) -> f64 {
        match *self {
            Profile::Cruise { v0, .. } | Profile::Stop { v0, .. } => v0,
        }
    }

    fn a0(&self) -> f64 {
        match *self {
            Profile::Cruise { accel, .. } => accel,
            Profile::Stop { v0, distance } => -v0 * v0 / (2.0 * distance),
        }
    }
}

/// Lateral offset with zero velocity and acceleration at both ends.
#[derive(Debug, Clone, Copy)]
struct LaneShift {
    offset: f64,
    duration: f64,
}

impl LaneShift {
    fn at(&self, t: f64) -> (f64, f64) {
        let u = (t / self.duration).clamp(0.0, 1.0);
        let l = self.offset * u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let dl =
            if t < self.duration { self.offset * 30.0 * u * u * (1.0 - u) * (1.0 - u) / self.duration } else { 0.0 };
        (l, dl)
    }
}

struct Plan {
    route: Route,
    profile: Profile,
    shift: Option<LaneShift>,
}

impl Plan {
    fn pose(&self, t: f64) -> Pose {
        let s = self.profile.s(t);
        let base = self.route.pose_at(s);
        let Some(shift) = self.shift else { return base };
        let (l, dl) = shift.at(t);
        base.compose(&Pose::new(0.0, l, dl.atan2(self.profile.speed(t))))
    }

    fn trajectory(&self) -> Result<Trajectory> {
        let points = std::array::from_fn(|k| {
            let p = self.pose((k + 1) as f64 * WAYPOINT_DT);
            Waypoint { x: p.x, y: p.y, heading: p.heading }
        });
        Trajectory::new(points)
    }
}

fn track(start: Pose, speed: f64, dims: (f64, f64)) -> AgentTrack {
    let poses = (0..TRACK_LEN).map(|k| start.compose(&Pose::new(speed * k as f64 * WAYPOINT_DT, 0.0, 0.0))).collect();
    AgentTrack { length: dims.0, width: dims.1, poses }
}

struct Draft {
    scene: Scene,
    plan: Plan,
    route_line: Polyline,
    speed_limit: f64,
    stop_arclength: Option<f64>,
}

fn straight_roads(lane: f64, lanes_right: f64, lanes_left: f64) -> Vec<RoadStrip> {
    let lo = -(lanes_right + 0.5) * lane;
    let hi = (lanes_left + 0.5) * lane;
    let c = 0.5 * (lo + hi);
    vec![RoadStrip {
        centerline: Polyline::new(vec![[-60.0, c], [140.0, c]]).expect("fixed"),
        half_width: 0.5 * (hi - lo),
    }]
}

fn oncoming(rng: &mut SeedRng, lane: f64, count: usize, x_range: (f64, f64)) -> Vec<AgentTrack> {
    (0..count)
        .map(|_| {
            let x = rng.uniform(x_range.0, x_range.1);
            track(Pose::new(x, lane, std::f64::consts::PI), rng.uniform(3.0, 10.0), CAR)
        })
        .collect()
}

fn draft(spec: &ScenarioSpec, seed: Seed) -> Draft {
    let mut rng = seed.rng();
    let lane = spec.lane_width.unwrap_or_else(|| rng.uniform(3.25, 4.0));
    let agents_n = spec.agent_count.unwrap_or_else(|| rng.index(3));
    let straight = Route::straight();
    let origin = Pose::default();
    match spec.kind {
        ScenarioKind::StraightFollow => {
            let limit = rng.uniform(8.0, 14.0);
            let lead_x = rng.uniform(15.0, 30.0);
            let lead = track(Pose::new(lead_x, 0.0, 0.0), limit + rng.uniform(0.0, 2.0), CAR);
            let mut agents = vec![lead];
            agents.extend(oncoming(&mut rng, lane, agents_n, (20.0, 90.0)));
            Draft {
                scene: Scene { ego_origin: origin, roads: straight_roads(lane, 0.0, 1.0), agents, stop_line: None },
                plan: Plan { route: straight, profile: Profile::Cruise { v0: limit, accel: 0.0 }, shift: None },
                route_line: straight.polyline(-40.0, 120.0),
                speed_limit: limit,
                stop_arclength: None,
            }
        }
        ScenarioKind::YieldToCrossingAgent | ScenarioKind::StopAtLine => {
            let distance = rng.uniform(6.0, 12.0);
            let route_line = straight.polyline(-40.0, 120.0);
            let v0 = rng.uniform((2.0 * distance / 3.5).max(3.0), (6.0 * distance).sqrt().min(9.0));
            let mut agents = oncoming(&mut rng, lane, agents_n, (25.0, 90.0));
            let line_x = if spec.kind == ScenarioKind::StopAtLine {
                distance + 0.5 * EGO_LENGTH + rng.uniform(0.5, 1.5)
            } else {
                let cross_x = distance + 0.5 * EGO_LENGTH + 0.5 * PEDESTRIAN.0 + rng.uniform(2.5, 3.5);
                let y0 = -0.5 * lane - rng.uniform(0.5, 3.0);
                agents.insert(
                    0,
                    track(Pose::new(cross_x, y0, std::f64::consts::FRAC_PI_2), rng.uniform(1.0, 1.8), PEDESTRIAN),
                );
                cross_x - 1.5
            };
            Draft {
                scene: Scene {
                    ego_origin: origin,
                    roads: straight_roads(lane, 0.0, 1.0),
                    agents,
                    stop_line: Some([[line_x, -0.5 * lane], [line_x, 0.5 * lane]]),
                },
                plan: Plan { route: straight, profile: Profile::Stop { v0, distance }, shift: None },
                stop_arclength: Some(route_line.project([distance, 0.0])),
                route_line,
                speed_limit: v0,
            }
        }
        ScenarioKind::LaneChange => {
            let limit = rng.uniform(8.0, 14.0);
            let side = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let shift = LaneShift { offset: side * lane, duration: rng.uniform(3.5, 4.0) };
            let other = Pose::new(rng.uniform(-15.0, 30.0), -side * lane, 0.0);
            let neighbour = track(other, limit + rng.uniform(-2.0, 2.0), CAR);
            let agents = if agents_n > 0 { vec![neighbour] } else { Vec::new() };
            Draft {
                scene: Scene { ego_origin: origin, roads: straight_roads(lane, 1.0, 1.0), agents, stop_line: None },
                plan: Plan { route: straight, profile: Profile::Cruise { v0: limit, accel: 0.0 }, shift: Some(shift) },
                route_line: straight.polyline(-40.0, 120.0),
                speed_limit: limit,
                stop_arclength: None,
            }
        }
        ScenarioKind::LeftTurn | ScenarioKind::RightTurn => {
            let sign = if spec.kind == ScenarioKind::LeftTurn { 1.0 } else { -1.0 };
            let radius = spec.turn_radius.unwrap_or_else(|| rng.uniform(12.0, 20.0));
            let limit = rng.uniform(4.0, 6.0).min((2.5 * radius).sqrt());
            let route = Route { approach: rng.uniform(2.0, 10.0), radius, turn: sign * std::f64::consts::FRAC_PI_2 };
            let route_line = route.polyline(-40.0, route.approach + route.arc_len() + 60.0);
            let exit_x = route.approach + radius;
            let mut roads = straight_roads(lane, 0.0, 1.0);
            roads.push(RoadStrip {
                centerline: Polyline::new(vec![
                    [exit_x - 0.5 * sign * lane, -80.0],
                    [exit_x - 0.5 * sign * lane, 80.0],
                ])
                .expect("fixed"),
                half_width: lane,
            });
            roads.push(RoadStrip { centerline: route_line.clone(), half_width: 0.75 * lane });
            let agents = oncoming(&mut rng, lane, agents_n, (-40.0, -12.0));
            Draft {
                scene: Scene { ego_origin: origin, roads, agents, stop_line: None },
                plan: Plan { route, profile: Profile::Cruise { v0: limit, accel: 0.0 }, shift: None },
                route_line,
                speed_limit: limit,
                stop_arclength: None,
            }
        }
    }
}

/// `None` when the ground truth is not compliant.
fn assemble(spec: &ScenarioSpec, d: Draft) -> Result<Option<ScenarioSample>> {
    let gt = d.plan.trajectory()?;
    let log = ScenarioLog {
        id: spec.id.clone(),
        ego_origin: d.scene.ego_origin,
        plan: gt,
        ego_length: EGO_LENGTH,
        ego_width: EGO_WIDTH,
        agents: d.scene.agents.clone(),
        drivable: d.scene.drivable_mask(),
        centerline: d.route_line,
        speed_limit: d.speed_limit,
        stop_arclength: d.stop_arclength,
    };
    if !compliant(&log) {
        return Ok(None);
    }
    let ego = EgoStatus {
        velocity: [d.plan.profile.v0(), 0.0],
        acceleration: [d.plan.profile.a0(), 0.0],
        command: spec.kind.command(),
    };
    Ok(Some(ScenarioSample {
        id: spec.id.clone(),
        kind: spec.kind,
        ego,
        gt,
        camera: render_camera(&d.scene),
        bev: render_bev(&d.scene),
        log,
    }))
}

/// GT must pass collision, drivable-area, comfort and TTC checks.
fn compliant(log: &ScenarioLog) -> bool {
    let cfg = ScoringConfig::default();
    [pdms::no_collision, pdms::drivable_area_compliance, pdms::comfort, pdms::time_to_collision]
        .iter()
        .all(|f| f(log, &cfg) == 1.0)
}

/// Build a sample; infeasible draws are retried with derived seeds.
pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioSample> {
    if spec.lane_width.is_some_and(|w| !(2.5..=6.0).contains(&w))
        || spec.turn_radius.is_some_and(|r| !(6.0..=60.0).contains(&r))
    {
        return Err(Error::Scenario { id: spec.id.clone(), msg: "lane width or turn radius out of range".into() });
    }
    for attempt in 0..MAX_ATTEMPTS {
        let seed = if attempt == 0 { spec.seed } else { spec.seed.split(attempt) };
        if let Some(sample) = assemble(spec, draft(spec, seed))? {
            return Ok(sample);
        }
    }
    Err(Error::Scenario {
        id: spec.id.clone(),
        msg: format!("no compliant ground truth after {MAX_ATTEMPTS} attempts"),
    })
}

/// Exact per-kind counts; samples cycle through kinds until each is used up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindMix {
    pub counts: Vec<(ScenarioKind, usize)>,
}

impl KindMix {
    /// Spread `total` as evenly as possible, earlier kinds taking the remainder.
    pub fn balanced(kinds: &[ScenarioKind], total: usize) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("at least one scenario kind is required".into()));
        }
        let (q, r) = (total / kinds.len(), total % kinds.len());
        Ok(Self { counts: kinds.iter().enumerate().map(|(i, &k)| (k, q + usize::from(i < r))).collect() })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c.1).sum()
    }

    pub fn sequence(&self) -> Vec<ScenarioKind> {
        let mut left: Vec<_> = self.counts.clone();
        let mut out = Vec::with_capacity(self.total());
        while out.len() < self.total() {
            for (k, n) in left.iter_mut().filter(|(_, n)| *n > 0) {
                out.push(*k);
                *n -= 1;
            }
        }
        out
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// The whole set, a pure function of `(seed, mix)`.
pub fn generate_set(seed: Seed, mix: &KindMix) -> Result<Vec<ScenarioSample>> {
    mix.sequence()
        .into_iter()
        .enumerate()
        .map(|(i, kind)| generate(&ScenarioSpec::new(sample_id(i), seed.split(i as u64), kind)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_arc_is_continuous() {
        let r = Route { approach: 5.0, radius: 10.0, turn: std::f64::consts::FRAC_PI_2 };
        let a = r.pose_at(5.0 + r.arc_len() - 1e-9);
        let b = r.pose_at(5.0 + r.arc_len() + 1e-9);
        assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
        assert!((b.x - 15.0).abs() < 1e-6 && (b.y - 10.0).abs() < 1e-6);
    }

    #[test]
    fn stop_profile_halts_at_distance() {
        let p = Profile::Stop { v0: 6.0, distance: 9.0 };
        assert_eq!(p.s(4.0), 9.0);
        assert!((p.s(3.0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        let err = "roundabout".parse::<ScenarioKind>().unwrap_err().to_string();
        assert!(err.contains("straight-follow") && err.contains("stop-at-line"));
    }
}
