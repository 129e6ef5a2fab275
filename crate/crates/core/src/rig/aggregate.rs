use rand::Rng;

use super::units::{FlowUnitSet, FlowUnits, UnitVars};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::nn::{AttentionBlock, Linear};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, Var};

/// Self-attention across the width tokens of a `[H, W_in, C]` map, applied
/// row by row, followed by a linear map of the width axis down to `W_out`.
#[derive(Debug, Clone)]
pub struct WidthMixer {
    pub attn: AttentionBlock,
    pub reduce: Linear,
    pub in_width: usize,
    pub out_width: usize,
}

impl WidthMixer {
    pub fn new(
        name: &str,
        channels: usize,
        in_width: usize,
        out_width: usize,
        residual: bool,
    ) -> Self {
        WidthMixer {
            attn: AttentionBlock::new(&format!("{name}.attn"), channels, residual),
            reduce: Linear::new(format!("{name}.reduce"), in_width, out_width),
            in_width,
            out_width,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.attn.init(ps, rng)?;
        self.reduce.init(ps, rng)
    }

    /// `x`: `[H, W_in, C]` -> `[H, W_out, C]`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.in_width {
            return Err(Error::dim(format!(
                "width mixer expects [H, {}, C], got {:?}",
                self.in_width, s
            )));
        }
        let mixed = self.attn.forward(g, p, x, x)?;
        let cols = g.transpose(mixed)?;
        let reduced = self.reduce.forward(g, p, cols)?;
        g.transpose(reduced)
    }
}

/// Concatenate `[H, P_i, C]` maps along the width axis.
pub fn concat_width(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let first = g.shape(parts[0]).to_vec();
    if first.len() != 3 {
        return Err(Error::dim(format!("expected [H, P, C], got {:?}", first)));
    }
    let (h, c) = (first[0], first[2]);
    let mut flat = Vec::with_capacity(parts.len());
    let mut width = 0;
    for &u in parts {
        let s = g.shape(u).to_vec();
        if s.len() != 3 || s[0] != h || s[2] != c {
            return Err(Error::dim(format!(
                "cannot concat {:?} with {:?}",
                s, first
            )));
        }
        width += s[1];
        flat.push(g.reshape(u, &[h, s[1] * c])?);
    }
    let cat = g.concat_cols(&flat)?;
    g.reshape(cat, &[h, width, c])
}

/// Local aggregation: every unit is widened with its `range - 1` nearest
/// neighbours on the closed ring, mixed by self-attention along width, and
/// reduced back to its own width.
#[derive(Debug, Clone)]
pub struct LocalAggregation {
    pub range: usize,
    pub mixer: WidthMixer,
}

pub const DEFAULT_AGGREGATION_RANGE: usize = 3;

impl LocalAggregation {
    pub fn new(
        name: &str,
        range: usize,
        unit_width: usize,
        channels: usize,
        residual: bool,
    ) -> Result<Self> {
        if range % 2 == 0 {
            return Err(Error::config(format!(
                "aggregation range must be odd, got {range}"
            )));
        }
        Ok(LocalAggregation {
            range,
            mixer: WidthMixer::new(name, channels, range * unit_width, unit_width, residual),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.mixer.init(ps, rng)
    }

    /// Identity projections and an identity width map (only meaningful for
    /// `range == 1`).
    pub fn set_identity(&self, ps: &mut ParamSet) {
        self.mixer.attn.set_identity(ps);
        let r = &self.mixer.reduce;
        let mut w = Tensor::zeros(&[r.fan_in, r.fan_out]);
        for i in 0..r.fan_in.min(r.fan_out) {
            w.data_mut()[i * r.fan_out + i] = 1.0;
        }
        ps.set(r.weight_name(), w);
        ps.set(r.bias_name(), Tensor::zeros(&[r.fan_out]));
    }

    fn aggregate_one(&self, g: &mut Graph, p: &BoundParams, ring: &[Var], k: usize) -> Result<Var> {
        let n = ring.len();
        let reach = self.range / 2;
        let parts: Vec<Var> = (0..self.range)
            .map(|j| ring[(k + n * (reach + 1) + j - reach) % n])
            .collect();
        let x = concat_width(g, &parts)?;
        self.mixer.forward(g, p, x)
    }

    /// Aggregate every unit on one tape.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, units: &UnitVars) -> Result<UnitVars> {
        let ring: Vec<Var> = units.ring_order().into_iter().copied().collect();
        let out = (0..ring.len())
            .map(|k| self.aggregate_one(g, p, &ring, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowUnits::from_ring_order(out, units.right.len()))
    }

    /// Gradient-free evaluation with one small tape per unit, fanned out
    /// over `exec`.
    pub fn apply(&self, params: &ParamSet, units: &FlowUnitSet, exec: Exec) -> Result<FlowUnitSet> {
        let ring: Vec<&Tensor> = units.ring_order();
        let n = ring.len();
        let reach = self.range / 2;
        let out = exec.try_map_range(n, |k| {
            let mut g = Graph::new();
            let p = params.bind_frozen(&mut g);
            let parts: Vec<Var> = (0..self.range)
                .map(|j| g.constant(ring[(k + n * (reach + 1) + j - reach) % n].clone()))
                .collect();
            let x = concat_width(&mut g, &parts)?;
            let y = self.mixer.forward(&mut g, &p, x)?;
            Ok(g.value(y).clone())
        })?;
        Ok(FlowUnits::from_ring_order(out, units.right.len()))
    }
}
