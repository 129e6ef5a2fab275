use serde::{Deserialize, Serialize};

use super::ring::PanoramicRig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One flow unit's ring interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpan {
    pub side: Side,
    /// Position in the side sequence, counted outward from the start.
    pub index: usize,
    /// First ring column, in `[0, perimeter)`.
    pub start_col: usize,
    pub width: usize,
}

/// Ego-guided partition of the ring into flow units.
///
/// Right-side units run clockwise (increasing ring column) from the start
/// column, left-side units run counter-clockwise. The column containing the
/// start coordinate belongs to the right side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLayout {
    pub perimeter: usize,
    pub start_s: f64,
    pub start_col: usize,
    pub p_left: f64,
    pub p_right: f64,
    /// Canonical unit width of this level; every unit is resampled to it.
    pub base_p: usize,
    pub level: usize,
    /// Column offsets from `start_col`, clockwise; `right_bounds[0] == 0`
    /// and the last entry is the side's extent.
    pub right_bounds: Vec<usize>,
    /// Column offsets from `start_col`, counter-clockwise.
    pub left_bounds: Vec<usize>,
}

fn side_bounds(extent: usize, p: f64) -> Result<Vec<usize>> {
    // a unit never gets narrower than one column
    let p = p.max(1.0);
    let n = (extent as f64 / p).floor() as usize;
    if n == 0 {
        return Err(Error::config(format!(
            "unit width {p} exceeds the side extent of {extent} columns; side would be empty"
        )));
    }
    let mut b: Vec<usize> = (0..n).map(|k| (k as f64 * p).round() as usize).collect();
    b.push(extent);
    Ok(b)
}

impl PartitionLayout {
    pub fn right_count(&self) -> usize {
        self.right_bounds.len() - 1
    }

    pub fn left_count(&self) -> usize {
        self.left_bounds.len() - 1
    }

    pub fn unit_count(&self) -> usize {
        self.right_count() + self.left_count()
    }

    pub fn count(&self, side: Side) -> usize {
        match side {
            Side::Left => self.left_count(),
            Side::Right => self.right_count(),
        }
    }

    pub fn span(&self, side: Side, index: usize) -> UnitSpan {
        let p = self.perimeter;
        match side {
            Side::Right => {
                let (a, b) = (self.right_bounds[index], self.right_bounds[index + 1]);
                UnitSpan {
                    side,
                    index,
                    start_col: (self.start_col + a) % p,
                    width: b - a,
                }
            }
            Side::Left => {
                let (a, b) = (self.left_bounds[index], self.left_bounds[index + 1]);
                UnitSpan {
                    side,
                    index,
                    start_col: (self.start_col + p - b) % p,
                    width: b - a,
                }
            }
        }
    }

    /// All units in ring order: right side outward, then the left side
    /// from the rear back toward the start.
    pub fn ring_order(&self) -> Vec<UnitSpan> {
        let mut out: Vec<UnitSpan> = (0..self.right_count())
            .map(|i| self.span(Side::Right, i))
            .collect();
        out.extend(
            (0..self.left_count())
                .rev()
                .map(|i| self.span(Side::Left, i)),
        );
        out
    }

    /// Position of a unit in [`ring_order`](Self::ring_order).
    pub fn ring_index(&self, side: Side, index: usize) -> usize {
        match side {
            Side::Right => index,
            Side::Left => self.right_count() + self.left_count() - 1 - index,
        }
    }

    /// Unit boundaries unrolled from `start_col`: strictly increasing, from
    /// `start_col` to `start_col + perimeter`.
    pub fn ring_boundaries(&self) -> Vec<usize> {
        let right_extent = *self.right_bounds.last().unwrap();
        let left_extent = *self.left_bounds.last().unwrap();
        let mut out: Vec<usize> = self
            .right_bounds
            .iter()
            .map(|b| self.start_col + b)
            .collect();
        for &b in self.left_bounds.iter().rev().skip(1) {
            out.push(self.start_col + right_extent + left_extent - b);
        }
        out
    }

    /// Unit containing ring coordinate `s`.
    pub fn locate(&self, s: f64) -> Result<UnitSpan> {
        if !(0.0..self.perimeter as f64).contains(&s) {
            return Err(Error::invalid(format!(
                "ring position {s} outside [0, {})",
                self.perimeter
            )));
        }
        let col = s.floor() as usize;
        let rel = (col + self.perimeter - self.start_col) % self.perimeter;
        let bounds = self.ring_boundaries();
        let target = self.start_col + rel;
        // last boundary <= target
        let k = bounds.partition_point(|&b| b <= target) - 1;
        Ok(self.ring_order()[k])
    }
}

/// Lay units outward from `s` on both sides until each side covers half the
/// ring. Boundaries are rounded to whole columns and the last unit on each
/// side absorbs the remainder. Widths below one column are placed as one
/// column; `p_left` and `p_right` keep the requested values.
pub fn build_layout(
    rig: &PanoramicRig,
    s: f64,
    p_left: f64,
    p_right: f64,
    base_p: usize,
    level: usize,
) -> Result<PartitionLayout> {
    let perimeter = rig.perimeter();
    if !(p_left > 0.0 && p_right > 0.0 && p_left.is_finite() && p_right.is_finite()) {
        return Err(Error::config(format!(
            "unit widths must be positive, got left {p_left}, right {p_right}"
        )));
    }
    if base_p == 0 {
        return Err(Error::config("canonical unit width must be positive"));
    }
    if !s.is_finite() {
        return Err(Error::invalid("non-finite partition start"));
    }
    let s = s.rem_euclid(perimeter as f64);
    let start_col = (s.floor() as usize) % perimeter;
    let right_extent = perimeter.div_ceil(2);
    let left_extent = perimeter - right_extent;
    Ok(PartitionLayout {
        perimeter,
        start_s: s,
        start_col,
        p_left,
        p_right,
        base_p,
        level,
        right_bounds: side_bounds(right_extent, p_right)?,
        left_bounds: side_bounds(left_extent, p_left)?,
    })
}
