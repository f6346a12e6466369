//! Predictive Driver Model Score: two hard penalties (no collision, drivable
//! area) multiplying a weighted mean of ego progress, time-to-collision margin
//! and comfort. All geometric checks run on 10 Hz interpolations of the 2 Hz
//! plan.

pub mod geometry;

use serde::{Deserialize, Serialize};

pub use geometry::{interpolate, OrientedBox, Polyline, Pose};

use crate::model::{Trajectory, WAYPOINTS, WAYPOINT_DT};
use crate::tensor::wrap_angle;
use crate::{Error, Result};

/// Knots per track: the pose at t = 0 plus one per waypoint.
pub const TRACK_LEN: usize = WAYPOINTS + 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Interpolated poses per 0.5 s interval (5 → 10 Hz).
    pub substeps: usize,
    pub ttc_horizon: f64,
    /// Spacing of the constant-velocity look-ahead samples.
    pub ttc_step: f64,
    pub accel_max: f64,
    pub jerk_max: f64,
    /// Speed used to size the achievable-progress window.
    pub progress_speed: f64,
    /// Achievable progress below this counts as fully achieved.
    pub min_achievable: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            substeps: 5,
            ttc_horizon: 1.0,
            ttc_step: 0.1,
            accel_max: 4.0,
            jerk_max: 8.0,
            progress_speed: 15.0,
            min_achievable: 0.5,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.substeps == 0
            || !pos(self.ttc_step)
            || !(self.ttc_horizon >= 0.0)
            || !pos(self.accel_max)
            || !pos(self.jerk_max)
            || !pos(self.progress_speed)
            || !(self.min_achievable >= 0.0)
        {
            return Err(Error::Config(format!("invalid scoring config {self:?}")));
        }
        Ok(())
    }

    fn sample_dt(&self) -> f64 {
        WAYPOINT_DT / self.substeps as f64
    }
}

/// Boolean occupancy grid; cell `(row, col)` covers
/// `[col·res, (col+1)·res) × [row·res, (row+1)·res)` in the grid frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivableMask {
    pub origin: Pose,
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl DrivableMask {
    pub fn new(origin: Pose, resolution: f64, rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) || cells.len() != rows * cols {
            return Err(Error::Config(format!(
                "drivable mask needs resolution > 0 and rows·cols cells, got {resolution}, {}×{} vs {}",
                rows,
                cols,
                cells.len()
            )));
        }
        Ok(Self { origin, resolution, rows, cols, cells })
    }

    /// Points outside the grid are not drivable.
    pub fn is_drivable(&self, p: [f64; 2]) -> bool {
        let l = self.origin.inverse_point(p);
        let (c, r) = ((l[0] / self.resolution).floor(), (l[1] / self.resolution).floor());
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return false;
        }
        self.cells[r as usize * self.cols + c as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub length: f64,
    pub width: f64,
    /// Poses at t = 0, 0.5, …, 4 s.
    pub poses: Vec<Pose>,
}

impl AgentTrack {
    fn boxes(&self, substeps: usize) -> Vec<OrientedBox> {
        interpolate(&self.poses, substeps).into_iter().map(|p| OrientedBox::new(p, self.length, self.width)).collect()
    }
}

/// Everything the scorer needs for one scenario, in a common world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLog {
    pub id: String,
    /// World pose of the ego at t = 0; the plan is expressed in this frame.
    pub ego_origin: Pose,
    pub plan: Trajectory,
    pub ego_length: f64,
    pub ego_width: f64,
    pub agents: Vec<AgentTrack>,
    pub drivable: DrivableMask,
    pub centerline: Polyline,
    /// Road speed limit (m/s); achievable progress uses the smaller of this and the scorer cap.
    pub speed_limit: f64,
    /// Arc length of a stop or yield line on the centerline, if any.
    pub stop_arclength: Option<f64>,
}

impl ScenarioLog {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Scenario { id: self.id.clone(), msg });
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return err("ego footprint must be positive".into());
        }
        if !(self.speed_limit > 0.0 && self.speed_limit.is_finite()) {
            return err(format!("speed limit must be positive, got {}", self.speed_limit));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.poses.len() != TRACK_LEN || !(a.length > 0.0 && a.width > 0.0) {
                return err(format!("agent {i} needs {TRACK_LEN} poses and a positive footprint"));
            }
        }
        Ok(())
    }

    /// World poses of the plan: t = 0 followed by the eight waypoints.
    pub fn ego_knots(&self) -> Vec<Pose> {
        std::iter::once(self.ego_origin)
            .chain(self.plan.points.iter().map(|w| self.ego_origin.compose(&Pose::new(w.x, w.y, w.heading))))
            .collect()
    }

    fn ego_boxes(&self, substeps: usize) -> Vec<OrientedBox> {
        interpolate(&self.ego_knots(), substeps)
            .into_iter()
            .map(|p| OrientedBox::new(p, self.ego_length, self.ego_width))
            .collect()
    }

    /// Same scenario with the plan replaced.
    pub fn with_plan(&self, plan: Trajectory) -> Self {
        Self { plan, ..self.clone() }
    }

    /// Apply a rigid motion to every piece of geometry.
    pub fn transformed(&self, motion: &Pose) -> Self {
        let pose = |p: &Pose| motion.compose(p);
        Self {
            ego_origin: pose(&self.ego_origin),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack { poses: a.poses.iter().map(pose).collect(), ..a.clone() })
                .collect(),
            drivable: DrivableMask { origin: pose(&self.drivable.origin), ..self.drivable.clone() },
            centerline: Polyline::new(self.centerline.points().iter().map(|&p| motion.transform_point(p)).collect())
                .expect("rigid motion keeps arc length"),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub c: f64,
}

impl SubScores {
    /// Binary fields must be exactly 0 or 1; `ep` lies in `[0, 1]`.
    pub fn new(nc: f64, dac: f64, ep: f64, ttc: f64, c: f64) -> Result<Self> {
        for (name, v) in [("nc", nc), ("dac", dac), ("ttc", ttc), ("c", c)] {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Config(format!("subscore {name} must be 0 or 1, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&ep) {
            return Err(Error::Config(format!("subscore ep must lie in [0, 1], got {ep}")));
        }
        Ok(Self { nc, dac, ep, ttc, c })
    }

    pub fn pdms(&self) -> f64 {
        pdms_formula(self.nc, self.dac, self.ep, self.ttc, self.c).expect("validated on construction")
    }
}

/// `NC · DAC · (5·EP + 5·TTC + 2·C) / 12` for values in `[0, 1]`, also accepted
/// for averaged (non-binary) subscores.
pub fn pdms_formula(nc: f64, dac: f64, ep: f64, ttc: f64, c: f64) -> Result<f64> {
    for v in [nc, dac, ep, ttc, c] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("subscore {v} outside [0, 1]")));
        }
    }
    Ok(nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * c) / 12.0)
}

pub fn pdms(s: &SubScores) -> Result<f64> {
    pdms_formula(s.nc, s.dac, s.ep, s.ttc, s.c)
}

fn flag(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

pub fn no_collision(log: &ScenarioLog, cfg: &ScoringConfig) -> f64 {
    let ego = log.ego_boxes(cfg.substeps);
    let hit = log.agents.iter().any(|a| a.boxes(cfg.substeps).iter().zip(&ego).any(|(b, e)| b.intersects(e)));
    flag(!hit)
}

pub fn drivable_area_compliance(log: &ScenarioLog, cfg: &ScoringConfig) -> f64 {
    let ok = log.ego_boxes(cfg.substeps).iter().all(|b| b.corners().iter().all(|&p| log.drivable.is_drivable(p)));
    flag(ok)
}

/// Progress along the centerline from the first to the last pose over the
/// achievable distance: `min(progress_speed, speed_limit) · 4 s`, capped by the
/// remaining centerline and any stop line ahead.
pub fn ego_progress(log: &ScenarioLog, cfg: &ScoringConfig) -> f64 {
    let knots = log.ego_knots();
    let start = log.centerline.project([knots[0].x, knots[0].y]);
    let end = log.centerline.project([knots[WAYPOINTS].x, knots[WAYPOINTS].y]);
    let mut achievable =
        (cfg.progress_speed.min(log.speed_limit) * WAYPOINTS as f64 * WAYPOINT_DT).min(log.centerline.length() - start);
    if let Some(stop) = log.stop_arclength.filter(|&s| s >= start) {
        achievable = achievable.min(stop - start);
    }
    if achievable < cfg.min_achievable {
        return 1.0;
    }
    ((end - start) / achievable).clamp(0.0, 1.0)
}

/// Per-sample velocities by forward difference; the last repeats the previous.
fn velocities(poses: &[Pose], dt: f64) -> Vec<[f64; 2]> {
    let mut v: Vec<[f64; 2]> = poses.windows(2).map(|w| [(w[1].x - w[0].x) / dt, (w[1].y - w[0].y) / dt]).collect();
    v.push(v.last().copied().unwrap_or([0.0, 0.0]));
    v
}

fn advance(b: &OrientedBox, v: [f64; 2], tau: f64) -> OrientedBox {
    OrientedBox { pose: Pose { x: b.pose.x + v[0] * tau, y: b.pose.y + v[1] * tau, ..b.pose }, ..*b }
}

/// 1 iff no constant-velocity look-ahead from any sample collides; NC = 0 forces 0.
pub fn time_to_collision(log: &ScenarioLog, cfg: &ScoringConfig) -> f64 {
    if no_collision(log, cfg) == 0.0 {
        return 0.0;
    }
    let dt = cfg.sample_dt();
    let ego = log.ego_boxes(cfg.substeps);
    let ego_v = velocities(&ego.iter().map(|b| b.pose).collect::<Vec<_>>(), dt);
    let looks = (cfg.ttc_horizon / cfg.ttc_step + 1e-9).floor() as usize;
    for a in &log.agents {
        let boxes = a.boxes(cfg.substeps);
        let agent_v = velocities(&a.poses, WAYPOINT_DT);
        for (k, (e, b)) in ego.iter().zip(&boxes).enumerate() {
            let av = agent_v[k / cfg.substeps];
            for j in 1..=looks {
                let tau = j as f64 * cfg.ttc_step;
                if advance(e, ego_v[k], tau).intersects(&advance(b, av, tau)) {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Longitudinal and lateral components of finite-difference acceleration
/// and jerk of the 2 Hz knots, in the frame of the knot they are centred on.
pub fn comfort(log: &ScenarioLog, cfg: &ScoringConfig) -> f64 {
    let knots = log.ego_knots();
    let dt = WAYPOINT_DT;
    let vel: Vec<[f64; 2]> = knots.windows(2).map(|w| [(w[1].x - w[0].x) / dt, (w[1].y - w[0].y) / dt]).collect();
    let acc: Vec<[f64; 2]> = vel.windows(2).map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt]).collect();
    let jerk: Vec<[f64; 2]> = acc.windows(2).map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt]).collect();
    let within = |v: [f64; 2], heading: f64, limit: f64| {
        let (s, c) = heading.sin_cos();
        let (lon, lat) = (c * v[0] + s * v[1], -s * v[0] + c * v[1]);
        lon.abs() <= limit && lat.abs() <= limit
    };
    // acc[i] sits on knot i+1; jerk[i] between knots i+1 and i+2.
    let acc_ok = acc.iter().enumerate().all(|(i, &a)| within(a, knots[i + 1].heading, cfg.accel_max));
    let jerk_ok = jerk.iter().enumerate().all(|(i, &j)| {
        let h = knots[i + 1].heading + 0.5 * wrap_angle(knots[i + 2].heading - knots[i + 1].heading);
        within(j, h, cfg.jerk_max)
    });
    flag(acc_ok && jerk_ok)
}

pub fn score(log: &ScenarioLog, cfg: &ScoringConfig) -> Result<SubScores> {
    cfg.validate()?;
    log.validate()?;
    SubScores::new(
        no_collision(log, cfg),
        drivable_area_compliance(log, cfg),
        ego_progress(log, cfg),
        time_to_collision(log, cfg),
        comfort(log, cfg),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub id: String,
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub c: f64,
    pub pdms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSubScores {
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdmsReport {
    pub version: u32,
    /// Sorted by scenario id.
    pub per_scenario: Vec<ScenarioScore>,
    /// Mean of per-scenario scores.
    pub mean_pdms: f64,
    pub mean_subscores: MeanSubScores,
    /// The formula applied to the subscore means; differs from `mean_pdms` in general.
    pub pdms_of_mean_subscores: f64,
}

pub fn aggregate(scores: &[(String, SubScores)]) -> Result<PdmsReport> {
    if scores.is_empty() {
        return Err(Error::Config("cannot aggregate an empty score list".into()));
    }
    let mut per_scenario: Vec<ScenarioScore> = scores
        .iter()
        .map(|(id, s)| ScenarioScore {
            id: id.clone(),
            nc: s.nc,
            dac: s.dac,
            ep: s.ep,
            ttc: s.ttc,
            c: s.c,
            pdms: s.pdms(),
        })
        .collect();
    per_scenario.sort_by(|a, b| a.id.cmp(&b.id));
    let n = per_scenario.len() as f64;
    let mean = |f: fn(&ScenarioScore) -> f64| per_scenario.iter().map(f).sum::<f64>() / n;
    let m = MeanSubScores {
        nc: mean(|s| s.nc),
        dac: mean(|s| s.dac),
        ep: mean(|s| s.ep),
        ttc: mean(|s| s.ttc),
        c: mean(|s| s.c),
    };
    Ok(PdmsReport {
        version: REPORT_VERSION,
        mean_pdms: mean(|s| s.pdms),
        pdms_of_mean_subscores: pdms_formula(m.nc, m.dac, m.ep, m.ttc, m.c)?,
        mean_subscores: m,
        per_scenario,
    })
}

pub fn score_all(logs: &[ScenarioLog], cfg: &ScoringConfig) -> Result<PdmsReport> {
    let scores = logs.iter().map(|l| Ok((l.id.clone(), score(l, cfg)?))).collect::<Result<Vec<_>>>()?;
    aggregate(&scores)
}
