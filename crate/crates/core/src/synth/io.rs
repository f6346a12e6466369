//! Scenario container: `manifest.json` listing samples, and one tensor
//! container per sample under `samples/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KindMix, ScenarioKind, ScenarioSample};
use crate::model::{EgoStatus, Trajectory};
use crate::pdms::{AgentTrack, DrivableMask, Polyline, Pose, ScenarioLog, TRACK_LEN};
use crate::rng::Seed;
use crate::tensor::container::{self, TensorSet};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SET_FORMAT: &str = "drama-scenarios";
pub const SET_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const SAMPLE_DIR: &str = "samples";
/// Floats per agent row: length, width, then `(x, y, heading)` per knot.
const AGENT_ROW: usize = 2 + 3 * TRACK_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub kind: ScenarioKind,
    /// Tensor manifest, relative to the set directory.
    pub tensors: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetManifest {
    pub format: String,
    pub version: u32,
    pub seed: Option<Seed>,
    pub mix: Option<KindMix>,
    pub samples: Vec<SampleEntry>,
}

fn encode(s: &ScenarioSample) -> Result<TensorSet> {
    let log = &s.log;
    let mut set = TensorSet::default();
    set.push("camera", s.camera.clone());
    set.push("bev", s.bev.clone());
    set.push("ego", Tensor::new(vec![8], s.ego.to_vec())?);
    set.push("gt", s.gt.to_tensor());
    let agents: Vec<f64> = log
        .agents
        .iter()
        .flat_map(|a| [a.length, a.width].into_iter().chain(a.poses.iter().flat_map(|p| [p.x, p.y, p.heading])))
        .collect();
    set.push("agents", Tensor::new(vec![log.agents.len(), AGENT_ROW], agents)?);
    let m = &log.drivable;
    let cells = m.cells.iter().map(|&b| f64::from(u8::from(b))).collect();
    set.push("mask", Tensor::new(vec![m.rows, m.cols], cells)?);
    set.push("mask_frame", Tensor::new(vec![4], vec![m.origin.x, m.origin.y, m.origin.heading, m.resolution])?);
    let line: Vec<f64> = log.centerline.points().iter().flatten().copied().collect();
    set.push("centerline", Tensor::new(vec![line.len() / 2, 2], line)?);
    let o = log.ego_origin;
    let (has_stop, stop) = log.stop_arclength.map_or((0.0, 0.0), |s| (1.0, s));
    set.push(
        "meta",
        Tensor::new(
            vec![8],
            vec![o.x, o.y, o.heading, log.ego_length, log.ego_width, log.speed_limit, has_stop, stop],
        )?,
    );
    Ok(set)
}

fn decode(entry: &SampleEntry, set: &TensorSet) -> Result<ScenarioSample> {
    let bad = |msg: String| Error::Scenario { id: entry.id.clone(), msg };
    let get = |name: &str| set.get(name).map_err(|e| bad(e.to_string()));
    let shaped = |name: &str, rank: usize| -> Result<&Tensor> {
        let t = get(name)?;
        if t.rank() != rank {
            return Err(bad(format!("tensor {name} has shape {:?}", t.shape())));
        }
        Ok(t)
    };
    let ego = EgoStatus::from_slice(get("ego")?.data()).map_err(|e| bad(e.to_string()))?;
    let gt = Trajectory::from_tensor(get("gt")?).map_err(|e| bad(e.to_string()))?;
    let agents_t = shaped("agents", 2)?;
    if agents_t.shape()[1] != AGENT_ROW {
        return Err(bad(format!("agents tensor has shape {:?}", agents_t.shape())));
    }
    let agents = agents_t
        .data()
        .chunks_exact(AGENT_ROW)
        .map(|r| AgentTrack {
            length: r[0],
            width: r[1],
            poses: r[2..].chunks_exact(3).map(|p| Pose::new(p[0], p[1], p[2])).collect(),
        })
        .collect();
    let mask = shaped("mask", 2)?;
    let frame = get("mask_frame")?.data();
    let meta = get("meta")?.data();
    if frame.len() != 4 || meta.len() != 8 {
        return Err(bad("mask_frame or meta has the wrong length".into()));
    }
    let drivable = DrivableMask::new(
        Pose::new(frame[0], frame[1], frame[2]),
        frame[3],
        mask.shape()[0],
        mask.shape()[1],
        mask.data().iter().map(|&v| v != 0.0).collect(),
    )
    .map_err(|e| bad(e.to_string()))?;
    let centerline = Polyline::new(shaped("centerline", 2)?.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect())
        .ok_or_else(|| bad("degenerate centerline".into()))?;
    let log = ScenarioLog {
        id: entry.id.clone(),
        ego_origin: Pose::new(meta[0], meta[1], meta[2]),
        plan: gt,
        ego_length: meta[3],
        ego_width: meta[4],
        agents,
        drivable,
        centerline,
        speed_limit: meta[5],
        stop_arclength: (meta[6] != 0.0).then_some(meta[7]),
    };
    log.validate()?;
    Ok(ScenarioSample {
        id: entry.id.clone(),
        kind: entry.kind,
        ego,
        gt,
        camera: shaped("camera", 3)?.clone(),
        bev: shaped("bev", 3)?.clone(),
        log,
    })
}

/// Write samples into `dir` (created if needed). Output bytes depend only on the samples.
pub fn write_set(dir: &Path, samples: &[ScenarioSample], seed: Option<Seed>, mix: Option<KindMix>) -> Result<()> {
    let sample_dir = dir.join(SAMPLE_DIR);
    fs::create_dir_all(&sample_dir).map_err(Error::io(&sample_dir))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("{SAMPLE_DIR}/{}.json", s.id);
        container::write(&dir.join(&rel), &encode(s)?)
            .map_err(|e| Error::Scenario { id: s.id.clone(), msg: e.to_string() })?;
        entries.push(SampleEntry { id: s.id.clone(), kind: s.kind, tensors: rel });
    }
    let manifest = SetManifest { format: SET_FORMAT.into(), version: SET_VERSION, seed, mix, samples: entries };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::json(&path))?;
    fs::write(&path, text + "\n").map_err(Error::io(&path))
}

pub fn read_manifest(dir: &Path) -> Result<SetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: SetManifest = serde_json::from_str(&text).map_err(Error::json(&path))?;
    if manifest.format != SET_FORMAT || manifest.version != SET_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported scenario set {} version {} (expected {SET_FORMAT} version {SET_VERSION})",
            path.display(),
            manifest.format,
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Read every sample; errors name the offending sample id.
pub fn read_set(dir: &Path) -> Result<Vec<ScenarioSample>> {
    let manifest = read_manifest(dir)?;
    manifest
        .samples
        .iter()
        .map(|entry| {
            let set = container::read(&dir.join(&entry.tensors))
                .map_err(|e| Error::Scenario { id: entry.id.clone(), msg: e.to_string() })?;
            decode(entry, &set)
        })
        .collect()
}
