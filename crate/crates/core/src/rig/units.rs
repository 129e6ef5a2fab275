use super::layout::{PartitionLayout, Side, UnitSpan};
use super::ring::PanoramicRig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Two side-ordered unit sequences, each running from the partition start
/// outward. Generic so the same container carries plain tensors and tape
/// handles.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowUnits<T> {
    pub left: Vec<T>,
    pub right: Vec<T>,
}

/// Flow units as tensors of shape `[H, P, C]`.
pub type FlowUnitSet = FlowUnits<Tensor>;
/// Flow units recorded on a tape.
pub type UnitVars = FlowUnits<Var>;

impl<T> FlowUnits<T> {
    pub fn new(left: Vec<T>, right: Vec<T>) -> Self {
        FlowUnits { left, right }
    }

    pub fn side(&self, side: Side) -> &[T] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty() && self.right.is_empty()
    }

    /// Ring order: right side outward, then left side from the rear inward.
    pub fn ring_order(&self) -> Vec<&T> {
        self.right.iter().chain(self.left.iter().rev()).collect()
    }

    /// Inverse of [`ring_order`](Self::ring_order) given the right-side count.
    pub fn from_ring_order(mut ring: Vec<T>, right_count: usize) -> Self {
        let mut left = ring.split_off(right_count);
        left.reverse();
        FlowUnits { left, right: ring }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FlowUnits<U> {
        FlowUnits {
            left: self.left.iter().map(&mut f).collect(),
            right: self.right.iter().map(&mut f).collect(),
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<FlowUnits<U>> {
        Ok(FlowUnits {
            left: self.left.iter().map(&mut f).collect::<Result<_>>()?,
            right: self.right.iter().map(&mut f).collect::<Result<_>>()?,
        })
    }
}

impl FlowUnitSet {
    /// Shape shared by every unit, or an error if units disagree.
    pub fn unit_shape(&self) -> Result<Vec<usize>> {
        let first = self
            .right
            .first()
            .or(self.left.first())
            .ok_or_else(|| Error::invalid("empty flow unit set"))?;
        let shape = first.shape().to_vec();
        if self
            .left
            .iter()
            .chain(&self.right)
            .any(|t| t.shape() != shape.as_slice())
        {
            return Err(Error::dim("flow units of mixed shapes"));
        }
        Ok(shape)
    }

    pub fn same_layout(&self, other: &FlowUnitSet) -> bool {
        self.left.len() == other.left.len()
            && self.right.len() == other.right.len()
            && self.unit_shape().ok() == other.unit_shape().ok()
    }

    pub fn record(&self, g: &mut Graph, tracked: bool) -> UnitVars {
        self.map(|t| {
            if tracked {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }
}

impl UnitVars {
    pub fn values(&self, g: &Graph) -> FlowUnitSet {
        self.map(|&v| g.value(v).clone())
    }
}

fn slice_unit(f_img: &Tensor, rig: &PanoramicRig, span: &UnitSpan, p: usize) -> Tensor {
    let (h, w, c) = (rig.height, rig.width, rig.channels);
    let mut data = Vec::with_capacity(h * p * c);
    let src = f_img.data();
    for row in 0..h {
        for i in 0..p {
            // nearest column of the span for output column i
            let off = ((i as f64 + 0.5) * span.width as f64 / p as f64).floor() as usize;
            let (cam, col) = rig.camera_column(span.start_col + off.min(span.width - 1));
            let base = ((cam * h + row) * w + col) * c;
            data.extend_from_slice(&src[base..base + c]);
        }
    }
    Tensor::new(&[h, p, c], data).expect("unit shape")
}

/// Slice `[N, H, W, C]` ring features into flow units, resampling each unit
/// to the layout's canonical width by nearest-column pick.
pub fn partition_features(
    f_img: &Tensor,
    rig: &PanoramicRig,
    layout: &PartitionLayout,
) -> Result<FlowUnitSet> {
    let expect = [rig.num_cameras, rig.height, rig.width, rig.channels];
    if f_img.shape() != expect {
        return Err(Error::dim(format!(
            "features {:?} do not match rig {:?}",
            f_img.shape(),
            expect
        )));
    }
    if layout.perimeter != rig.perimeter() {
        return Err(Error::dim(format!(
            "layout built for a ring of {} columns, rig has {}",
            layout.perimeter,
            rig.perimeter()
        )));
    }
    let p = layout.base_p;
    let side = |s: Side| -> Vec<Tensor> {
        (0..layout.count(s))
            .map(|i| slice_unit(f_img, rig, &layout.span(s, i), p))
            .collect()
    };
    Ok(FlowUnits {
        left: side(Side::Left),
        right: side(Side::Right),
    })
}
