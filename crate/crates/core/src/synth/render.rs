//! Sensor stand-ins. The BEV raster is a metric top-down occupancy image; the
//! camera strip is a schematic front view where bearing maps to column and
//! range to vertical extent.

use super::Scene;
use crate::pdms::OrientedBox;
use crate::tensor::Tensor;

pub const BEV_SIZE: usize = 64;
/// Metres per BEV cell.
pub const BEV_CELL: f64 = 1.0;
pub const CAMERA_HEIGHT: usize = 64;
pub const CAMERA_WIDTH: usize = 256;

const ROAD_EDGE: f64 = 0.3;
const STOP_LINE: f64 = 0.6;
const AGENT: f64 = 1.0;
/// Distance from a cell centre at which drivability is probed for edges.
const EDGE_PROBE: f64 = 0.75;

const HORIZON_ROW: f64 = 24.0;
const HALF_FOV: f64 = std::f64::consts::FRAC_PI_3;
const FOCAL: f64 = 64.0;
const CAMERA_HEIGHT_M: f64 = 1.5;
const SKY: [f64; 3] = [0.1, 0.1, 0.3];
const GROUND: [f64; 3] = [0.2, 0.2, 0.2];

/// Ego-frame point at the centre of BEV cell `(row, col)`: rows run from far
/// ahead to behind, columns from left to right.
pub fn bev_cell_center(row: usize, col: usize) -> [f64; 2] {
    let half = BEV_SIZE as f64 * BEV_CELL / 2.0;
    [half - (row as f64 + 0.5) * BEV_CELL, half - (col as f64 + 0.5) * BEV_CELL]
}

fn agent_boxes(scene: &Scene) -> Vec<OrientedBox> {
    scene.agents.iter().map(|a| OrientedBox::new(a.poses[0], a.length, a.width)).collect()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// `1×64×64` occupancy raster centred on the ego: agents 1.0, stop lines 0.6,
/// road edges 0.3, everything else 0.
pub fn render_bev(scene: &Scene) -> Tensor {
    let boxes = agent_boxes(scene);
    let ego = scene.ego_origin;
    let mut data = vec![0.0; BEV_SIZE * BEV_SIZE];
    for r in 0..BEV_SIZE {
        for c in 0..BEV_SIZE {
            let p = ego.transform_point(bev_cell_center(r, c));
            let mut v: f64 = 0.0;
            if boxes.iter().any(|b| b.contains(p)) {
                v = AGENT;
            } else if scene.stop_line.is_some_and(|[a, b]| segment_distance(p, a, b) <= 0.5 * BEV_CELL) {
                v = STOP_LINE;
            } else if !scene.roads.is_empty() && scene.is_drivable(p) {
                let probes = [[EDGE_PROBE, 0.0], [-EDGE_PROBE, 0.0], [0.0, EDGE_PROBE], [0.0, -EDGE_PROBE]];
                if probes.iter().any(|d| !scene.is_drivable(ego.transform_point(add(bev_cell_center(r, c), *d)))) {
                    v = ROAD_EDGE;
                }
            }
            data[r * BEV_SIZE + c] = v;
        }
    }
    Tensor::new(vec![1, BEV_SIZE, BEV_SIZE], data).expect("finite raster")
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

/// Column of an ego-frame bearing; `None` outside the field of view.
fn bearing_column(p: [f64; 2]) -> Option<f64> {
    let bearing = p[1].atan2(p[0]);
    (p[0] > 0.0 && bearing.abs() <= HALF_FOV).then(|| (0.5 - 0.5 * bearing / HALF_FOV) * CAMERA_WIDTH as f64)
}

/// Image row of a ground point at forward distance `x`.
fn ground_row(x: f64) -> f64 {
    HORIZON_ROW + FOCAL * CAMERA_HEIGHT_M / x
}

struct Canvas {
    data: Vec<f64>,
}

impl Canvas {
    fn new() -> Self {
        let mut data = vec![0.0; 3 * CAMERA_HEIGHT * CAMERA_WIDTH];
        for r in 0..CAMERA_HEIGHT {
            let colour = if (r as f64) < HORIZON_ROW { SKY } else { GROUND };
            for (ch, v) in colour.into_iter().enumerate() {
                data[(ch * CAMERA_HEIGHT + r) * CAMERA_WIDTH..(ch * CAMERA_HEIGHT + r + 1) * CAMERA_WIDTH].fill(v);
            }
        }
        Self { data }
    }

    fn put(&mut self, row: f64, col: f64, colour: [f64; 3]) {
        let (r, c) = (row.floor(), col.floor());
        if r < 0.0 || c < 0.0 || r >= CAMERA_HEIGHT as f64 || c >= CAMERA_WIDTH as f64 {
            return;
        }
        for (ch, v) in colour.into_iter().enumerate() {
            self.data[(ch * CAMERA_HEIGHT + r as usize) * CAMERA_WIDTH + c as usize] = v;
        }
    }

    fn fill(&mut self, rows: (f64, f64), cols: (f64, f64), colour: [f64; 3]) {
        let r0 = rows.0.floor().max(0.0) as usize;
        let r1 = (rows.1.ceil().max(0.0) as usize).min(CAMERA_HEIGHT);
        let c0 = cols.0.floor().max(0.0) as usize;
        let c1 = (cols.1.ceil().max(0.0) as usize).min(CAMERA_WIDTH);
        for r in r0..r1 {
            for c in c0..c1 {
                self.put(r as f64, c as f64, colour);
            }
        }
    }
}

/// Ground-plane samples along the boundary of the drivable area.
fn edge_points(scene: &Scene) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for road in &scene.roads {
        let line = &road.centerline;
        let n = line.length().ceil() as usize;
        for i in 0..=n {
            let s = line.length() * i as f64 / n as f64;
            let p = line.point_at(s);
            let q = line.point_at((s + 0.5).min(line.length()));
            let back = line.point_at((s - 0.5).max(0.0));
            let t = [q[0] - back[0], q[1] - back[1]];
            let norm = t[0].hypot(t[1]);
            if norm == 0.0 {
                continue;
            }
            let nrm = [-t[1] / norm, t[0] / norm];
            for side in [1.0, -1.0] {
                let e = [p[0] + side * road.half_width * nrm[0], p[1] + side * road.half_width * nrm[1]];
                let outside = [e[0] + side * 0.2 * nrm[0], e[1] + side * 0.2 * nrm[1]];
                if !scene.is_drivable(outside) {
                    out.push(e);
                }
            }
        }
    }
    out
}

/// `3×64×256` front-view strip: sky and ground background, green road edges,
/// blue stop lines, agents as red (vehicles) or yellow (pedestrians) blocks
/// spanning their bearing range, nearer agents drawn over farther ones.
pub fn render_camera(scene: &Scene) -> Tensor {
    let ego = scene.ego_origin;
    let local = |p: [f64; 2]| ego.inverse_point(p);
    let mut canvas = Canvas::new();
    for e in edge_points(scene) {
        let p = local(e);
        if let Some(col) = bearing_column(p).filter(|_| p[0] > 1.0) {
            canvas.put(ground_row(p[0]), col, [0.1, 0.9, 0.1]);
        }
    }
    if let Some([a, b]) = scene.stop_line {
        let n = ((b[0] - a[0]).hypot(b[1] - a[1]) / 0.05).ceil() as usize;
        for i in 0..=n {
            let f = i as f64 / n.max(1) as f64;
            let p = local([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
            if let Some(col) = bearing_column(p).filter(|_| p[0] > 1.0) {
                canvas.put(ground_row(p[0]), col, [0.1, 0.1, 1.0]);
            }
        }
    }
    let mut visible: Vec<(f64, (f64, f64), [f64; 3])> = Vec::new();
    for b in agent_boxes(scene) {
        let corners = b.corners().map(local);
        let near = corners.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        if near <= 0.5 {
            continue;
        }
        let cols: Vec<f64> = corners.iter().filter_map(|&c| bearing_column(c)).collect();
        if cols.is_empty() {
            continue;
        }
        let span = (
            cols.iter().copied().fold(f64::INFINITY, f64::min),
            cols.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let colour = if b.length.max(b.width) < 1.5 { [1.0, 0.9, 0.1] } else { [1.0, 0.1, 0.1] };
        visible.push((near, span, colour));
    }
    visible.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (near, span, colour) in visible {
        let rows = (HORIZON_ROW - FOCAL * 0.5 / near, ground_row(near));
        canvas.fill(rows, (span.0, span.1 + 1.0), colour);
    }
    Tensor::new(vec![3, CAMERA_HEIGHT, CAMERA_WIDTH], canvas.data).expect("finite raster")
}
