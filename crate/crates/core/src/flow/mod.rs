//! Spatial and temporal scene-flow prediction with latent-state KL losses,
//! plus fusion of the two predicted feature streams.
//!
//! The GRU carries the transition state; the observation feature is
//! reconstructed from it by cross-attention. `fused_state` switches to the
//! variant where the transition state itself is taken as the prediction.

mod model;
mod spatial;
mod state;
mod temporal;
pub mod train;

pub use model::{fuse_flow, FlowConfig, FlowDims, FlowModel, FlowOutputs, Losses};
pub use spatial::{spatial_flow_predict, spatial_flow_step, SpatialFlow};
pub use state::{spatial_loss, temporal_loss, LatentGaussian, StateHead, StateMlps};
pub use temporal::{temporal_flow_predict, TemporalFlow};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Mean over the `H x P` positions of a `[H, P, C]` unit.
pub fn pool_unit(g: &mut Graph, unit: Var) -> Result<Var> {
    if g.shape(unit).len() != 3 {
        return Err(Error::dim(format!(
            "pool_unit expects [H, P, C], got {:?}",
            g.shape(unit)
        )));
    }
    Ok(g.mean_rows(unit))
}

/// First `count` rows of a `[rows, C]` query block; indices past the end
/// reuse the last row.
pub(crate) fn query_rows(
    g: &mut Graph,
    q: Var,
    offset: usize,
    rows: usize,
    count: usize,
) -> Result<Var> {
    if count <= rows {
        return g.slice_rows(q, offset, count);
    }
    let head = g.slice_rows(q, offset, rows)?;
    let last = g.slice_rows(q, offset + rows - 1, 1)?;
    let mut parts = vec![head];
    parts.extend(std::iter::repeat(last).take(count - rows));
    g.concat_rows(&parts)
}
