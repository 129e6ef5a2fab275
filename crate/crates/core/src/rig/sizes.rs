use serde::{Deserialize, Serialize};

use super::circle::{SteeringCircle, TurnDirection};
use crate::error::{Error, Result};

/// Exponent applied to the radius ratio when scaling unit widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Power {
    Linear,
    #[default]
    Quadratic,
    Cubic,
}

impl Power {
    pub fn exponent(self) -> i32 {
        match self {
            Power::Linear => 1,
            Power::Quadratic => 2,
            Power::Cubic => 3,
        }
    }
}

/// Per-side unit widths `(p_left, p_right)`.
///
/// The base width `p` belongs to the steering radius `r`; the outer side
/// scales by `((r + w/2) / r)^k`, the inner side by `((r - w/2) / r)^k`.
/// Turning right puts the left side on the outside.
pub fn adjust_sizes(
    p: f64,
    circle: &SteeringCircle,
    w_ego: f64,
    power: Power,
) -> Result<(f64, f64)> {
    let SteeringCircle::Circle {
        radius: r, turn, ..
    } = *circle
    else {
        return Ok((p, p));
    };
    if !(r > w_ego / 2.0) {
        return Err(Error::KinematicInfeasible(format!(
            "steering radius {r} m does not exceed half the ego width ({} m)",
            w_ego / 2.0
        )));
    }
    let k = power.exponent();
    let outer = p * ((r + w_ego / 2.0) / r).powi(k);
    let inner = p * ((r - w_ego / 2.0) / r).powi(k);
    Ok(match turn {
        TurnDirection::Right => (outer, inner),
        TurnDirection::Left => (inner, outer),
    })
}
