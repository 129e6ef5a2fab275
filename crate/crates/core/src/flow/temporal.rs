use rand::Rng;

use super::{pool_unit, query_rows};
use crate::error::{Error, Result};
use crate::rig::{FlowUnits, UnitVars};
use crate::tensor::nn::{AttentionBlock, GruCell};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, Var};

/// Temporal flow: one query block per frame of the horizon; the GRU takes
/// each unit of the previous frame as its temporal prior.
#[derive(Debug, Clone)]
pub struct TemporalFlow {
    pub gru: GruCell,
    pub xattn: AttentionBlock,
    pub horizon: usize,
    /// Queries per frame (`NK` at the active level).
    pub units: usize,
    pub channels: usize,
    pub fused_state: bool,
}

impl TemporalFlow {
    pub fn new(
        channels: usize,
        units: usize,
        horizon: usize,
        residual: bool,
        fused_state: bool,
    ) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::config(format!(
                "temporal horizon must be at least 2, got {horizon}"
            )));
        }
        if units == 0 {
            return Err(Error::config(
                "temporal flow needs at least one query per frame",
            ));
        }
        Ok(TemporalFlow {
            gru: GruCell::new("tem.gru", channels),
            xattn: AttentionBlock::new("tem.xattn", channels, residual),
            horizon,
            units,
            channels,
            fused_state,
        })
    }

    /// Parameter name of the query block for frame `t` (1-based).
    pub fn query_name(t: usize) -> String {
        format!("tem.queries.{t}")
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.gru.init(ps, rng)?;
        self.xattn.init(ps, rng)?;
        let bound = 1.0 / (self.channels as f64).sqrt();
        for t in 1..=self.horizon {
            ps.insert(
                Self::query_name(t),
                Tensor::uniform(&[self.units, self.channels], bound, rng),
            )?;
        }
        Ok(())
    }

    /// Predict frame `t` (1-based, `t >= 2`) from the observed frame `t - 1`.
    fn step(&self, g: &mut Graph, p: &BoundParams, t: usize, prev: &UnitVars) -> Result<UnitVars> {
        let ring: Vec<Var> = prev.ring_order().into_iter().copied().collect();
        let Some(&first) = ring.first() else {
            return Err(Error::invalid("temporal step on an empty frame"));
        };
        let shape = g.shape(first).to_vec();
        if shape.len() != 3
            || shape[2] != self.channels
            || ring.iter().any(|&u| g.shape(u) != shape.as_slice())
        {
            return Err(Error::dim(format!(
                "temporal step: units {:?} with {} channels",
                shape, self.channels
            )));
        }
        let count = ring.len();
        let pooled = ring
            .iter()
            .map(|&u| {
                let v = pool_unit(g, u)?;
                g.reshape(v, &[1, self.channels])
            })
            .collect::<Result<Vec<_>>>()?;
        let pooled = g.concat_rows(&pooled)?;
        let q = p.get(&Self::query_name(t))?;
        if g.shape(q) != [self.units, self.channels] {
            return Err(Error::dim(format!(
                "temporal queries {:?} at t={t}",
                g.shape(q)
            )));
        }
        let q = query_rows(g, q, 0, self.units, count)?;
        let q_hat = self.gru.forward(g, p, pooled, q)?;
        let tokens = shape[0] * shape[1];
        let out: Vec<Var> = if self.fused_state {
            let zero = g.constant(Tensor::zeros(&[tokens, self.channels]));
            (0..count)
                .map(|k| {
                    let h = g.slice_rows(q_hat, k, 1)?;
                    let h = g.reshape(h, &[self.channels])?;
                    let f = g.add_row(zero, h)?;
                    g.reshape(f, &shape)
                })
                .collect::<Result<_>>()?
        } else {
            // every unit's tokens attend over the full set of updated queries
            let flat = ring
                .iter()
                .map(|&u| g.reshape(u, &[tokens, self.channels]))
                .collect::<Result<Vec<_>>>()?;
            let query = g.concat_rows(&flat)?;
            let y = self.xattn.forward(g, p, query, q_hat)?;
            (0..count)
                .map(|k| {
                    let part = g.slice_rows(y, k * tokens, tokens)?;
                    g.reshape(part, &shape)
                })
                .collect::<Result<_>>()?
        };
        Ok(FlowUnits::from_ring_order(out, prev.right.len()))
    }
}

/// Predictions `F_hat^t` for `t = 2..=seq.len()`; the last entry is the one
/// handed to downstream tasks.
pub fn temporal_flow_predict(
    g: &mut Graph,
    p: &BoundParams,
    flow: &TemporalFlow,
    seq: &[UnitVars],
) -> Result<Vec<UnitVars>> {
    if seq.len() < 2 {
        return Err(Error::config(format!(
            "temporal prediction needs T >= 2 frames, got {}",
            seq.len()
        )));
    }
    if seq.len() > flow.horizon {
        return Err(Error::config(format!(
            "{} frames exceed the configured horizon {}",
            seq.len(),
            flow.horizon
        )));
    }
    (2..=seq.len())
        .map(|t| flow.step(g, p, t, &seq[t - 2]))
        .collect()
}
