use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::circle::EgoPose;
use crate::error::{Error, Result};

/// `N` identical image planes on the chords of a regular N-gon centred on
/// the ego, clockwise from the front camera. Ring coordinate `s` runs over
/// `[0, N*W)`; camera `i` owns `[i*W, (i+1)*W)` and its columns run
/// left-to-right as seen from inside the ring.
///
/// Rig frame: `x` forward, `y` to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanoramicRig {
    pub num_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl PanoramicRig {
    pub fn new(num_cameras: usize, width: usize, height: usize, channels: usize) -> Result<Self> {
        let rig = PanoramicRig {
            num_cameras,
            width,
            height,
            channels,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cameras < 3 {
            return Err(Error::config("a ring needs at least three cameras"));
        }
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::config("rig dimensions must be positive"));
        }
        Ok(())
    }

    /// `N * W` columns around the ring.
    pub fn perimeter(&self) -> usize {
        self.num_cameras * self.width
    }

    fn half_span(&self) -> f64 {
        PI / self.num_cameras as f64
    }

    fn camera_step(&self) -> f64 {
        TAU / self.num_cameras as f64
    }

    /// Ring coordinate where a ray from the rig centre along `dir` leaves the
    /// polygon. Corner hits go to the clockwise-next plane.
    pub fn ring_coordinate(&self, dir: [f64; 2]) -> f64 {
        let n = self.num_cameras;
        let step = self.camera_step();
        let half = self.half_span();
        // clockwise angle from the forward axis
        let mut alpha = (-dir[1]).atan2(dir[0]);
        alpha = (alpha + half).rem_euclid(TAU) - half;
        let cam = (((alpha + half) / step).floor() as usize).min(n - 1);
        let local = alpha - cam as f64 * step;
        let u = ((local.tan() / half.tan() + 1.0) / 2.0).clamp(0.0, 1.0);
        let s = (cam as f64 + u) * self.width as f64;
        if s >= self.perimeter() as f64 {
            0.0
        } else {
            s
        }
    }

    /// Unit direction (rig frame) that maps to ring coordinate `s`.
    pub fn direction_at(&self, s: f64) -> [f64; 2] {
        let w = self.width as f64;
        let s = s.rem_euclid(self.perimeter() as f64);
        let cam = ((s / w).floor() as usize).min(self.num_cameras - 1);
        let u = s / w - cam as f64;
        let local = ((2.0 * u - 1.0) * self.half_span().tan()).atan();
        let alpha = cam as f64 * self.camera_step() + local;
        [alpha.cos(), -alpha.sin()]
    }

    /// Split a ring column into `(camera, column within camera)`.
    pub fn camera_column(&self, ring_col: usize) -> (usize, usize) {
        let c = ring_col % self.perimeter();
        (c / self.width, c % self.width)
    }
}

/// Normalised displacement from `p_prev` to `p_now` in world coordinates.
pub fn forward_direction(p_prev: &EgoPose, p_now: &EgoPose) -> Result<[f64; 2]> {
    let dx = p_now.x - p_prev.x;
    let dy = p_now.y - p_prev.y;
    let n = dx.hypot(dy);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Stationary);
    }
    Ok([dx / n, dy / n])
}

/// Rotate a world-frame direction into the rig frame of a pose.
pub fn to_rig_frame(dir: [f64; 2], pose: &EgoPose) -> [f64; 2] {
    let (s, c) = pose.yaw.sin_cos();
    [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1]]
}

/// Forward direction in the rig frame of `p_now`. A stationary ego reuses
/// `fallback` (the previous frame's direction); the caller passes the front
/// axis on the first frame.
pub fn rig_forward(p_prev: &EgoPose, p_now: &EgoPose, fallback: [f64; 2]) -> [f64; 2] {
    match forward_direction(p_prev, p_now) {
        Ok(d) => to_rig_frame(d, p_now),
        Err(_) => fallback,
    }
}

pub const FRONT_AXIS: [f64; 2] = [1.0, 0.0];

/// Ring coordinate where the forward vector meets the planes.
pub fn partition_start(rig: &PanoramicRig, dir: [f64; 2]) -> f64 {
    rig.ring_coordinate(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> PanoramicRig {
        PanoramicRig::new(6, 64, 8, 16).unwrap()
    }

    #[test]
    fn forward_direction_examples() {
        let d = forward_direction(&EgoPose::new(0.0, 0.0, 0), &EgoPose::new(1.0, 0.0, 1)).unwrap();
        assert_eq!(d, [1.0, 0.0]);
        let d = forward_direction(&EgoPose::new(0.0, 0.0, 0), &EgoPose::new(3.0, 4.0, 1)).unwrap();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        let r = forward_direction(&EgoPose::new(1.0, 1.0, 0), &EgoPose::new(1.0, 1.0, 1));
        assert!(matches!(r, Err(Error::Stationary)));
    }

    #[test]
    fn front_and_back_hit_camera_centres() {
        let r = rig();
        assert_eq!(partition_start(&r, FRONT_AXIS), 32.0);
        let back = partition_start(&r, [-1.0, 0.0]);
        assert!((back - (3.0 * 64.0 + 32.0)).abs() < 1e-9);
    }

    #[test]
    fn right_is_clockwise() {
        // 60 degrees clockwise is the centre of camera 1
        let a = PI / 3.0;
        let s = partition_start(&rig(), [a.cos(), -a.sin()]);
        assert!((s - 96.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn corner_goes_to_next_plane() {
        let r = rig();
        let alpha = PI / 6.0;
        let s = r.ring_coordinate([alpha.cos(), -alpha.sin()]);
        assert!((s - 64.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn stationary_ego_reuses_fallback() {
        let p = EgoPose::new(2.0, 2.0, 3);
        assert_eq!(rig_forward(&p, &p, [0.0, 1.0]), [0.0, 1.0]);
    }

    #[test]
    fn rig_frame_rotation() {
        let pose = EgoPose::new(0.0, 0.0, 0).with_yaw(PI / 2.0);
        let d = to_rig_frame([0.0, 1.0], &pose);
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1].abs() < 1e-15);
    }

    #[test]
    fn too_few_cameras() {
        assert!(PanoramicRig::new(2, 64, 8, 16).is_err());
    }
}
