use rand::Rng;

use super::{pool_unit, query_rows};
use crate::error::{Error, Result};
use crate::rig::{FlowUnits, UnitVars};
use crate::tensor::nn::{AttentionBlock, GruCell};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, Var};

/// Spatial flow: each side is walked outward from the partition start, the
/// GRU carrying the motion message from unit to unit.
#[derive(Debug, Clone)]
pub struct SpatialFlow {
    pub gru: GruCell,
    pub xattn: AttentionBlock,
    /// Queries per side (`NK / 2` at the active level).
    pub per_side: usize,
    pub channels: usize,
    pub fused_state: bool,
}

impl SpatialFlow {
    pub const QUERIES: &'static str = "spat.queries";

    pub fn new(
        channels: usize,
        per_side: usize,
        residual: bool,
        fused_state: bool,
    ) -> Result<Self> {
        if per_side == 0 {
            return Err(Error::config(
                "spatial flow needs at least one query per side",
            ));
        }
        Ok(SpatialFlow {
            gru: GruCell::new("spat.gru", channels),
            xattn: AttentionBlock::new("spat.xattn", channels, residual),
            per_side,
            channels,
            fused_state,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.gru.init(ps, rng)?;
        self.xattn.init(ps, rng)?;
        let bound = 1.0 / (self.channels as f64).sqrt();
        ps.insert(
            Self::QUERIES,
            Tensor::uniform(&[2, self.per_side, self.channels], bound, rng),
        )
    }

    /// `[2 * per_side, C]` view of the queries: left rows first, then right.
    fn queries(&self, g: &mut Graph, p: &BoundParams) -> Result<Var> {
        let q = p.get(Self::QUERIES)?;
        let expect = [2, self.per_side, self.channels];
        if g.shape(q) != expect {
            return Err(Error::dim(format!(
                "spatial queries {:?}, expected {:?}",
                g.shape(q),
                expect
            )));
        }
        g.reshape(q, &[2 * self.per_side, self.channels])
    }

    /// One side: returns the updated query `[C]` and the predicted unit.
    fn step_side(&self, g: &mut Graph, p: &BoundParams, q: Var, f_prev: Var) -> Result<(Var, Var)> {
        let shape = g.shape(f_prev).to_vec();
        if shape.len() != 3 || shape[2] != self.channels || g.shape(q) != [self.channels] {
            return Err(Error::dim(format!(
                "spatial step: query {:?}, unit {:?}, channels {}",
                g.shape(q),
                shape,
                self.channels
            )));
        }
        let pooled = pool_unit(g, f_prev)?;
        let h = self.gru.forward(g, p, pooled, q)?;
        let tokens = shape[0] * shape[1];
        let f_hat = if self.fused_state {
            let zero = g.constant(Tensor::zeros(&[tokens, self.channels]));
            g.add_row(zero, h)?
        } else {
            let query = g.reshape(f_prev, &[tokens, self.channels])?;
            let kv = g.reshape(h, &[1, self.channels])?;
            self.xattn.forward(g, p, query, kv)?
        };
        Ok((h, g.reshape(f_hat, &shape)?))
    }
}

/// One auto-regressive step on both sides. `q_j` is `[2, C]` (left row,
/// right row); `f_prev` holds the left and right predecessor units.
pub fn spatial_flow_step(
    g: &mut Graph,
    p: &BoundParams,
    flow: &SpatialFlow,
    q_j: Var,
    f_prev: [Var; 2],
) -> Result<(Var, [Var; 2])> {
    if g.shape(q_j) != [2, flow.channels] {
        return Err(Error::dim(format!(
            "spatial step query {:?}, expected [2, {}]",
            g.shape(q_j),
            flow.channels
        )));
    }
    let ql = g.slice_rows(q_j, 0, 1)?;
    let ql = g.reshape(ql, &[flow.channels])?;
    let qr = g.slice_rows(q_j, 1, 1)?;
    let qr = g.reshape(qr, &[flow.channels])?;
    let (hl, fl) = flow.step_side(g, p, ql, f_prev[0])?;
    let (hr, fr) = flow.step_side(g, p, qr, f_prev[1])?;
    let hl = g.reshape(hl, &[1, flow.channels])?;
    let hr = g.reshape(hr, &[1, flow.channels])?;
    Ok((g.concat_rows(&[hl, hr])?, [fl, fr]))
}

/// Predict every unit of both sides from its observed predecessor. The
/// first unit of each side is predicted from `substitute` (left, right):
/// the previous frame's first units, or zeros on the first frame.
pub fn spatial_flow_predict(
    g: &mut Graph,
    p: &BoundParams,
    flow: &SpatialFlow,
    units: &UnitVars,
    substitute: [Var; 2],
) -> Result<UnitVars> {
    let queries = flow.queries(g, p)?;
    let mut sides = Vec::with_capacity(2);
    for (s, (observed, sub)) in [(&units.left, substitute[0]), (&units.right, substitute[1])]
        .into_iter()
        .enumerate()
    {
        let Some(first) = observed.first() else {
            sides.push(Vec::new());
            continue;
        };
        if g.shape(sub) != g.shape(*first) {
            return Err(Error::dim(format!(
                "substitute unit {:?} vs observed {:?}",
                g.shape(sub),
                g.shape(*first)
            )));
        }
        let q = query_rows(g, queries, s * flow.per_side, flow.per_side, observed.len())?;
        let mut out = Vec::with_capacity(observed.len());
        for j in 0..observed.len() {
            let prev = if j == 0 { sub } else { observed[j - 1] };
            let qj = g.slice_rows(q, j, 1)?;
            let qj = g.reshape(qj, &[flow.channels])?;
            let (_, f_hat) = flow.step_side(g, p, qj, prev)?;
            out.push(f_hat);
        }
        sides.push(out);
    }
    let right = sides.pop().unwrap();
    let left = sides.pop().unwrap();
    Ok(FlowUnits::new(left, right))
}
