use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ego position at one frame. `yaw` is the heading in radians
/// (counter-clockwise from the world x axis); it is only needed to express
/// directions in the rig frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    pub t: i64,
    #[serde(default)]
    pub yaw: f64,
}

impl EgoPose {
    pub fn new(x: f64, y: f64, t: i64) -> Self {
        EgoPose { x, y, t, yaw: 0.0 }
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = yaw;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnDirection {
    #[serde(alias = "Left")]
    Left,
    #[serde(alias = "Right")]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SteeringCircle {
    Circle {
        center_x: f64,
        center_y: f64,
        radius: f64,
        turn: TurnDirection,
    },
    Straight,
}

impl SteeringCircle {
    pub fn radius(&self) -> Option<f64> {
        match self {
            SteeringCircle::Circle { radius, .. } => Some(*radius),
            SteeringCircle::Straight => None,
        }
    }
}

/// Threshold on `|e*b - a*f|` below which three poses count as collinear.
pub const COLLINEAR_EPS: f64 = 1e-9;

/// Circle through the poses at `t-2`, `t-1`, `t`.
pub fn fit_steering_circle(p2: &EgoPose, p1: &EgoPose, p0: &EgoPose) -> Result<SteeringCircle> {
    fit_steering_circle_with(p2, p1, p0, COLLINEAR_EPS)
}

pub fn fit_steering_circle_with(
    p2: &EgoPose,
    p1: &EgoPose,
    p0: &EgoPose,
    collinear_eps: f64,
) -> Result<SteeringCircle> {
    let pts = [p2, p1, p0];
    for p in pts {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::invalid("non-finite ego pose"));
        }
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if pts[i].x == pts[j].x && pts[i].y == pts[j].y {
                return Err(Error::invalid(format!(
                    "duplicate ego positions at frames {} and {}",
                    pts[i].t, pts[j].t
                )));
            }
        }
    }
    let (xt, yt) = (p0.x, p0.y);
    let (xt1, yt1) = (p1.x, p1.y);
    let (xt2, yt2) = (p2.x, p2.y);

    let a = 2.0 * (xt - xt1);
    let b = 2.0 * (yt - yt1);
    let c = xt * xt + yt * yt - xt1 * xt1 - yt1 * yt1;
    let e = 2.0 * (xt1 - xt2);
    let f = 2.0 * (yt1 - yt2);
    let g = xt1 * xt1 + yt1 * yt1 - xt2 * xt2 - yt2 * yt2;

    let den = e * b - a * f;
    if den.abs() < collinear_eps {
        return Ok(SteeringCircle::Straight);
    }
    let center_x = (g * b - c * f) / den;
    let center_y = (a * g - c * e) / (a * f - b * e);
    let radius = ((center_x - xt).powi(2) + (center_y - yt).powi(2)).sqrt();

    // Sign of the turn from consecutive motion vectors.
    let cross = (xt1 - xt2) * (yt - yt1) - (yt1 - yt2) * (xt - xt1);
    let turn = if cross > 0.0 {
        TurnDirection::Left
    } else {
        TurnDirection::Right
    };
    Ok(SteeringCircle::Circle {
        center_x,
        center_y,
        radius,
        turn,
    })
}
