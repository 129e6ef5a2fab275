//! Ego-guided panoramic scene partition: steering-circle fitting, the
//! partition start on the camera ring, per-side unit sizing, layout,
//! slicing into flow units and local aggregation.

mod aggregate;
mod circle;
mod layout;
mod ring;
mod sizes;
mod units;

pub use aggregate::{concat_width, LocalAggregation, WidthMixer, DEFAULT_AGGREGATION_RANGE};
pub use circle::{
    fit_steering_circle, fit_steering_circle_with, EgoPose, SteeringCircle, TurnDirection,
    COLLINEAR_EPS,
};
pub use layout::{build_layout, PartitionLayout, Side, UnitSpan};
pub use ring::{
    forward_direction, partition_start, rig_forward, to_rig_frame, PanoramicRig, FRONT_AXIS,
};
pub use sizes::{adjust_sizes, Power};
pub use units::{partition_features, FlowUnitSet, FlowUnits, UnitVars};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rig description as stored in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub num_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Base unit width per feature level, coarse to fine.
    pub levels: Vec<usize>,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            num_cameras: 6,
            width: 64,
            height: 8,
            channels: 16,
            levels: vec![8, 4, 2, 1],
        }
    }
}

impl RigConfig {
    pub fn rig(&self) -> Result<PanoramicRig> {
        PanoramicRig::new(self.num_cameras, self.width, self.height, self.channels)
    }

    pub fn level_size(&self, level: usize) -> Result<usize> {
        self.levels.get(level).copied().ok_or_else(|| {
            Error::config(format!(
                "level {level} not configured ({} levels)",
                self.levels.len()
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.rig()?;
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::config(
                "levels must be non-empty positive unit widths",
            ));
        }
        Ok(())
    }
}

/// Everything the partition step derives for one frame at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePartition {
    pub circle: SteeringCircle,
    pub direction: [f64; 2],
    pub layout: PartitionLayout,
}

/// Partition for the frame at the end of `poses` (oldest first).
///
/// Needs at least three poses for the circle fit; the forward direction
/// comes from the last two (stationary egos fall back to `fallback_dir`).
pub fn partition_frame(
    rig: &PanoramicRig,
    poses: &[EgoPose],
    base_p: usize,
    level: usize,
    w_ego: f64,
    power: Power,
    fallback_dir: [f64; 2],
) -> Result<FramePartition> {
    if poses.len() < 3 {
        return Err(Error::invalid(format!(
            "steering-circle fit needs three ego poses (t-2, t-1, t); got {}",
            poses.len()
        )));
    }
    let n = poses.len();
    let (p2, p1, p0) = (&poses[n - 3], &poses[n - 2], &poses[n - 1]);
    let circle = match fit_steering_circle(p2, p1, p0) {
        Ok(c) => c,
        // a repeated position (stationary ego) carries no curvature
        Err(Error::InvalidInput(_)) => SteeringCircle::Straight,
        Err(e) => return Err(e),
    };
    let direction = rig_forward(p1, p0, fallback_dir);
    let s = partition_start(rig, direction);
    let (p_left, p_right) = adjust_sizes(base_p as f64, &circle, w_ego, power)?;
    let layout = build_layout(rig, s, p_left, p_right, base_p, level)?;
    Ok(FramePartition {
        circle,
        direction,
        layout,
    })
}
