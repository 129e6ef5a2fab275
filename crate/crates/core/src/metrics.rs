//! Planning metrics over trajectory logs: frames-before-correct-planning
//! (GT-based and command-compliance based) and L2 displacement error.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    GoStraight,
    TurnLeft,
    TurnRight,
}

/// One planning frame. Points are `(x, y)` in meters; `lateral_3s` is the
/// lateral displacement of the 3 s plan, positive to the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFrame {
    pub pred_3s: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_3s: Option<[f64; 2]>,
    #[serde(
        default,
        alias = "lateral_pred_3s",
        skip_serializing_if = "Option::is_none"
    )]
    pub lateral_3s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_1s: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_1s: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_2s: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_2s: Option<[f64; 2]>,
}

impl PlanFrame {
    pub fn new(pred_3s: [f64; 2]) -> Self {
        PlanFrame {
            pred_3s,
            gt_3s: None,
            lateral_3s: None,
            pred_1s: None,
            gt_1s: None,
            pred_2s: None,
            gt_2s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clip {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub command: Command,
    pub frames: Vec<PlanFrame>,
}

impl Clip {
    /// `id` if present, else the 1-based position in the log.
    pub fn label(&self, index: usize) -> String {
        match &self.id {
            Some(id) => format!("clip `{id}`"),
            None => format!("clip {}", index + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub clips: Vec<Clip>,
}

impl TrajectoryLog {
    /// One clip per non-blank line. `source` names the input in errors.
    pub fn from_jsonl(text: &str, source: &str) -> Result<Self> {
        let mut clips = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let clip: Clip = serde_json::from_str(line)
                .map_err(|e| Error::format(source, format!("line {}: {e}", i + 1)))?;
            if clip.frames.is_empty() {
                return Err(Error::format(
                    source,
                    format!("line {}: clip has no frames", i + 1),
                ));
            }
            clips.push(clip);
        }
        Ok(TrajectoryLog { clips })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for c in &self.clips {
            s.push_str(&serde_json::to_string(c).expect("clip serializes"));
            s.push('\n');
        }
        s
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::invalid("trajectory log has no clips"));
        }
        Ok(())
    }
}

/// Lateral-displacement predicates deciding whether a plan follows its
/// command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplianceRules {
    pub turn_right_min: f64,
    pub turn_left_max: f64,
    pub straight_band: f64,
}

impl Default for ComplianceRules {
    fn default() -> Self {
        ComplianceRules {
            turn_right_min: 2.0,
            turn_left_max: -2.0,
            straight_band: 2.0,
        }
    }
}

impl ComplianceRules {
    pub fn complies(&self, command: Command, lateral: f64) -> bool {
        match command {
            Command::TurnRight => lateral > self.turn_right_min,
            Command::TurnLeft => lateral < self.turn_left_max,
            Command::GoStraight => lateral.abs() < self.straight_band,
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `sum_f prod_{h<=f} 1{||pred_h - gt_h|| >= threshold}` for one clip.
pub fn fcp_clip(clip: &Clip, index: usize, threshold: f64) -> Result<usize> {
    let mut count = 0;
    let mut prod = 1usize;
    for (f, frame) in clip.frames.iter().enumerate() {
        let gt = frame.gt_3s.ok_or_else(|| {
            Error::invalid(format!(
                "{} frame {} has no gt_3s",
                clip.label(index),
                f + 1
            ))
        })?;
        prod *= usize::from(dist(frame.pred_3s, gt) >= threshold);
        count += prod;
    }
    Ok(count)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::config(format!(
            "FCP threshold must be positive, got {threshold}"
        )));
    }
    Ok(())
}

/// Mean over clips of [`fcp_clip`].
pub fn fcp(log: &TrajectoryLog, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    log.check_nonempty()?;
    let mut total = 0usize;
    for (i, c) in log.clips.iter().enumerate() {
        total += fcp_clip(c, i, threshold)?;
    }
    Ok(total as f64 / log.clips.len() as f64)
}

pub const FCP_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

/// Mean of [`fcp`] over `thresholds`.
pub fn fcp_avg(log: &TrajectoryLog, thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::config("fcp_avg needs at least one threshold"));
    }
    let mut s = 0.0;
    for &t in thresholds {
        s += fcp(log, t)?;
    }
    Ok(s / thresholds.len() as f64)
}

/// `max(0, sum_f prod_{h<=f} 1{plan_h does not follow the command} - q)`.
pub fn fcp_extended_clip(
    clip: &Clip,
    index: usize,
    q: usize,
    rules: &ComplianceRules,
) -> Result<usize> {
    let mut count = 0;
    let mut prod = 1usize;
    for (f, frame) in clip.frames.iter().enumerate() {
        let lat = frame.lateral_3s.ok_or_else(|| {
            Error::invalid(format!(
                "{} frame {} has no lateral_3s",
                clip.label(index),
                f + 1
            ))
        })?;
        prod *= usize::from(!rules.complies(clip.command, lat));
        count += prod;
    }
    Ok(count.saturating_sub(q))
}

pub fn fcp_extended(log: &TrajectoryLog, q: usize, rules: &ComplianceRules) -> Result<f64> {
    if q == 0 {
        return Err(Error::config("fcp_extended needs q >= 1"));
    }
    log.check_nonempty()?;
    let mut total = 0usize;
    for (i, c) in log.clips.iter().enumerate() {
        total += fcp_extended_clip(c, i, q, rules)?;
    }
    Ok(total as f64 / log.clips.len() as f64)
}

/// Mean displacement per horizon and their average, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub avg: f64,
}

pub fn l2_error(log: &TrajectoryLog) -> Result<L2Report> {
    log.check_nonempty()?;
    let mut sums = [0.0; 3];
    let mut n = 0usize;
    for (i, c) in log.clips.iter().enumerate() {
        for (f, fr) in c.frames.iter().enumerate() {
            let pairs = [
                ("1s", fr.pred_1s, fr.gt_1s),
                ("2s", fr.pred_2s, fr.gt_2s),
                ("3s", Some(fr.pred_3s), fr.gt_3s),
            ];
            for (k, (name, p, g)) in pairs.into_iter().enumerate() {
                let (Some(p), Some(g)) = (p, g) else {
                    return Err(Error::invalid(format!(
                        "{} frame {} lacks the {name} horizon",
                        c.label(i),
                        f + 1
                    )));
                };
                sums[k] += dist(p, g);
            }
            n += 1;
        }
    }
    let [h1, h2, h3] = sums.map(|s| s / n as f64);
    Ok(L2Report {
        h1,
        h2,
        h3,
        avg: (h1 + h2 + h3) / 3.0,
    })
}

/// Whether every frame carries all three horizons with GT.
pub fn has_all_horizons(log: &TrajectoryLog) -> bool {
    log.clips.iter().flat_map(|c| &c.frames).all(|f| {
        f.gt_3s.is_some()
            && f.pred_1s.is_some()
            && f.gt_1s.is_some()
            && f.pred_2s.is_some()
            && f.gt_2s.is_some()
    })
}

/// The standard metric table as `metric,threshold_or_q,value` CSV. L2 rows
/// are included only when the log has every horizon.
pub fn metrics_csv(log: &TrajectoryLog, rules: &ComplianceRules) -> Result<String> {
    let mut out = String::from("metric,threshold_or_q,value\n");
    for t in FCP_THRESHOLDS {
        writeln!(out, "fcp,{t},{}", fcp(log, t)?).unwrap();
    }
    writeln!(
        out,
        "fcp_avg,0.25|0.5|0.75,{}",
        fcp_avg(log, &FCP_THRESHOLDS)?
    )
    .unwrap();
    for q in 1..=3 {
        writeln!(out, "fcp_extended,{q},{}", fcp_extended(log, q, rules)?).unwrap();
    }
    if has_all_horizons(log) {
        let l2 = l2_error(log)?;
        writeln!(out, "l2,1s,{}", l2.h1).unwrap();
        writeln!(out, "l2,2s,{}", l2.h2).unwrap();
        writeln!(out, "l2,3s,{}", l2.h3).unwrap();
        writeln!(out, "l2,avg,{}", l2.avg).unwrap();
    }
    Ok(out)
}
