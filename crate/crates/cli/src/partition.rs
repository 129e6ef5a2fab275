//! Partition report for one frame and a structural validator for its JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use egoflow::rig::{
    partition_features, partition_frame, EgoPose, FramePartition, SteeringCircle, FRONT_AXIS,
};
use egoflow::synth::{Dataset, SynthScenario};
use egoflow::tensor::io::write_tensor;
use egoflow::tensor::Tensor;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub base_p: usize,
    pub p_left: f64,
    pub p_right: f64,
    pub ratio: f64,
    pub right_count: usize,
    pub left_count: usize,
    /// Unit boundaries unrolled from the start column; spans one perimeter.
    pub boundaries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub frame: Option<usize>,
    pub perimeter: usize,
    pub start_s: f64,
    pub direction: [f64; 2],
    pub circle: SteeringCircle,
    pub levels: Vec<LevelReport>,
}

fn level_report(part: &FramePartition) -> LevelReport {
    let l = &part.layout;
    LevelReport {
        level: l.level,
        base_p: l.base_p,
        p_left: l.p_left,
        p_right: l.p_right,
        ratio: l.p_left / l.p_right,
        right_count: l.right_count(),
        left_count: l.left_count(),
        boundaries: l.ring_boundaries(),
    }
}

fn assemble(frame: Option<usize>, parts: &[FramePartition]) -> PartitionReport {
    let first = &parts[0];
    PartitionReport {
        frame,
        perimeter: first.layout.perimeter,
        start_s: first.layout.start_s,
        direction: first.direction,
        circle: first.circle,
        levels: parts.iter().map(level_report).collect(),
    }
}

/// Report for the last pose in `poses` on the scenario's rig.
pub fn pose_report(sc: &SynthScenario, poses: &[EgoPose]) -> Result<PartitionReport, CliError> {
    let rig = sc.rig.rig()?;
    let parts = sc
        .rig
        .levels
        .iter()
        .enumerate()
        .map(|(level, &p)| partition_frame(&rig, poses, p, level, sc.w_ego, sc.power, FRONT_AXIS))
        .collect::<egoflow::Result<Vec<_>>>()?;
    Ok(assemble(None, &parts))
}

/// Report for frame `frame` (1-based) of a dataset; also dumps that frame's
/// units per level into `out` as ring-ordered `[NK, H, P, C]` stacks.
pub fn dataset_report(ds: &Dataset, frame: usize, out: &Path) -> Result<PartitionReport, CliError> {
    if frame == 0 || frame > ds.frames.len() {
        return Err(CliError::Data(format!(
            "frame {frame} outside 1..={}",
            ds.frames.len()
        )));
    }
    let rig = ds.scenario.rig.rig()?;
    let mut parts = Vec::new();
    for level in 0..ds.scenario.rig.levels.len() {
        let part = ds.partitions(level)?.swap_remove(frame - 1);
        let units = partition_features(&ds.frames[frame - 1].f_img, &rig, &part.layout)?;
        let ring = units.ring_order();
        let mut shape = vec![ring.len()];
        shape.extend(units.unit_shape()?);
        let data = ring.iter().flat_map(|u| u.data().iter().copied()).collect();
        write_tensor(
            &out.join(format!("units_level{level}.flt")),
            &Tensor::new(&shape, data)?,
        )?;
        parts.push(part);
    }
    Ok(assemble(Some(frame), &parts))
}

fn uint(v: &Value, key: &str) -> Result<u64, String> {
    v.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| format!("`{key}` must be a nonnegative integer"))
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v.get(key)
        .and_then(Value::as_f64)
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("`{key}` must be a finite number"))
}

/// Check the structure and internal consistency of a partition report.
pub fn validate_partition_json(v: &Value) -> Result<(), String> {
    let perimeter = uint(v, "perimeter")?;
    if perimeter == 0 {
        return Err("`perimeter` must be positive".into());
    }
    let start = num(v, "start_s")?;
    if !(0.0..perimeter as f64).contains(&start) {
        return Err(format!("`start_s` {start} outside [0, {perimeter})"));
    }
    match v.get("frame") {
        Some(Value::Null) | None => {}
        Some(f) if f.as_u64().is_some_and(|f| f >= 1) => {}
        _ => return Err("`frame` must be null or a positive integer".into()),
    }
    let dir = v
        .get("direction")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2 && a.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)))
        .ok_or("`direction` must be two finite numbers")?;
    let norm = dir
        .iter()
        .map(|x| x.as_f64().unwrap().powi(2))
        .sum::<f64>()
        .sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(format!("`direction` has norm {norm}, expected 1"));
    }
    let circle = v.get("circle").ok_or("missing `circle`")?;
    let straight = match circle.get("kind").and_then(Value::as_str) {
        Some("Straight") => true,
        Some("Circle") => {
            for k in ["center_x", "center_y"] {
                num(circle, k)?;
            }
            if !(num(circle, "radius")? > 0.0) {
                return Err("circle radius must be positive".into());
            }
            match circle.get("turn").and_then(Value::as_str) {
                Some("left" | "right") => {}
                _ => return Err("circle `turn` must be \"left\" or \"right\"".into()),
            }
            false
        }
        _ => return Err("circle `kind` must be \"Straight\" or \"Circle\"".into()),
    };
    let levels = v
        .get("levels")
        .and_then(Value::as_array)
        .filter(|a| !a.is_empty())
        .ok_or("`levels` must be a non-empty array")?;
    for (i, l) in levels.iter().enumerate() {
        let at = |m: String| format!("levels[{i}]: {m}");
        uint(l, "level").map_err(at)?;
        if uint(l, "base_p").map_err(at)? == 0 {
            return Err(at("`base_p` must be positive".into()));
        }
        let (pl, pr) = (
            num(l, "p_left").map_err(at)?,
            num(l, "p_right").map_err(at)?,
        );
        if !(pl > 0.0 && pr > 0.0) {
            return Err(at("unit widths must be positive".into()));
        }
        let ratio = num(l, "ratio").map_err(at)?;
        if (ratio - pl / pr).abs() > 1e-12 * ratio.abs().max(1.0) {
            return Err(at(format!("`ratio` {ratio} is not p_left / p_right")));
        }
        if straight && pl != pr {
            return Err(at("straight motion must give equal unit widths".into()));
        }
        let count = uint(l, "right_count").map_err(at)? + uint(l, "left_count").map_err(at)?;
        let b: Vec<u64> = l
            .get("boundaries")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_u64).collect())
            .ok_or_else(|| at("`boundaries` must be an integer array".into()))?;
        if b.len() as u64 != count + 1 {
            return Err(at(format!("{} boundaries for {count} units", b.len())));
        }
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(at("boundaries must be strictly increasing".into()));
        }
        if b[b.len() - 1] - b[0] != perimeter {
            return Err(at("boundaries must span exactly one perimeter".into()));
        }
    }
    Ok(())
}
