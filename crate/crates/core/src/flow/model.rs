use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spatial::{spatial_flow_predict, SpatialFlow};
use super::state::{spatial_loss, temporal_loss, StateMlps};
use super::temporal::{temporal_flow_predict, TemporalFlow};
use crate::error::{Error, Result};
use crate::rig::{concat_width, FlowUnitSet, FlowUnits, LocalAggregation, UnitVars, WidthMixer};
use crate::tensor::{BoundParams, Graph, ParamSet, Tensor, Var};

/// Flow-model hyperparameters that do not follow from the rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Frames per training window (`T`).
    pub horizon: usize,
    /// Latent state channels; `None` means `C / 2`.
    pub latent_channels: Option<usize>,
    /// Odd neighbourhood size for local aggregation; 0 disables it.
    pub aggregation_range: usize,
    /// Residual connection on every cross-attention.
    pub residual: bool,
    /// Take the GRU state itself as the predicted feature.
    pub fused_state: bool,
    /// One state head for both loss branches.
    pub share_heads: bool,
    /// Fraction of the KL gradient spent on the predicted branch; the rest
    /// trains the GT head. 1 freezes the GT head.
    pub kl_balance: f64,
    pub lambda_spat: f64,
    pub lambda_tem: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            horizon: 4,
            latent_channels: None,
            aggregation_range: 3,
            residual: false,
            fused_state: false,
            share_heads: false,
            kl_balance: 0.8,
            lambda_spat: 1.0,
            lambda_tem: 1.0,
        }
    }
}

/// Sizes fixed by the rig and the partition level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDims {
    pub channels: usize,
    pub height: usize,
    pub unit_width: usize,
    /// Units per frame (`NK`).
    pub units: usize,
}

impl FlowDims {
    /// Dimensions of a unit set whose units share one shape.
    pub fn of(units: &FlowUnitSet) -> Result<Self> {
        let s = units.unit_shape()?;
        Ok(FlowDims {
            channels: s[2],
            height: s[0],
            unit_width: s[1],
            units: units.len(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub config: FlowConfig,
    pub dims: FlowDims,
    pub aggregation: Option<LocalAggregation>,
    pub spatial: SpatialFlow,
    pub temporal: TemporalFlow,
    pub heads: StateMlps,
    pub fuse: WidthMixer,
}

/// Scalar loss values of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub spat: f64,
    pub tem: f64,
    pub total: f64,
}

/// Tape handles produced by [`FlowModel::forward`].
#[derive(Debug, Clone)]
pub struct FlowOutputs {
    /// Observed units after local aggregation, per frame.
    pub observed: Vec<UnitVars>,
    pub spatial: Vec<UnitVars>,
    /// Temporal predictions for frames `2..=T`.
    pub temporal: Vec<UnitVars>,
    pub l_spat: Var,
    pub l_tem: Var,
    pub total: Var,
}

impl FlowOutputs {
    pub fn losses(&self, g: &Graph) -> Losses {
        let v = |x: Var| g.value(x).data()[0];
        Losses {
            spat: v(self.l_spat),
            tem: v(self.l_tem),
            total: v(self.total),
        }
    }
}

/// Per-unit fusion: concatenate along width, self-attend, map back to `P`.
pub fn fuse_flow(
    g: &mut Graph,
    p: &BoundParams,
    mixer: &WidthMixer,
    spat: &UnitVars,
    tem: &UnitVars,
) -> Result<UnitVars> {
    if spat.left.len() != tem.left.len() || spat.right.len() != tem.right.len() {
        return Err(Error::dim("fusion needs matching unit layouts"));
    }
    let fuse_side = |g: &mut Graph, a: &[Var], b: &[Var]| -> Result<Vec<Var>> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                if g.shape(x) != g.shape(y) {
                    return Err(Error::dim(format!(
                        "fusion {:?} vs {:?}",
                        g.shape(x),
                        g.shape(y)
                    )));
                }
                let cat = concat_width(g, &[x, y])?;
                mixer.forward(g, p, cat)
            })
            .collect()
    };
    let left = fuse_side(g, &spat.left, &tem.left)?;
    let right = fuse_side(g, &spat.right, &tem.right)?;
    Ok(FlowUnits::new(left, right))
}

impl FlowModel {
    pub fn new(config: FlowConfig, dims: FlowDims) -> Result<Self> {
        let FlowDims {
            channels,
            height,
            unit_width,
            units,
        } = dims;
        if channels == 0 || height == 0 || unit_width == 0 || units == 0 {
            return Err(Error::config(format!(
                "flow dimensions must be positive: {dims:?}"
            )));
        }
        let latent = config.latent_channels.unwrap_or((channels / 2).max(1));
        let aggregation = match config.aggregation_range {
            0 => None,
            r => Some(LocalAggregation::new(
                "agg",
                r,
                unit_width,
                channels,
                config.residual,
            )?),
        };
        Ok(FlowModel {
            spatial: SpatialFlow::new(
                channels,
                units.div_ceil(2),
                config.residual,
                config.fused_state,
            )?,
            temporal: TemporalFlow::new(
                channels,
                units,
                config.horizon,
                config.residual,
                config.fused_state,
            )?,
            heads: StateMlps::new(
                "state",
                channels,
                latent,
                config.share_heads,
                config.kl_balance,
            )?,
            fuse: WidthMixer::new(
                "fuse",
                channels,
                2 * unit_width,
                unit_width,
                config.residual,
            ),
            aggregation,
            config,
            dims,
        })
    }

    /// Fresh parameters drawn from a seeded generator.
    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        if let Some(a) = &self.aggregation {
            a.init(&mut ps, &mut rng)?;
        }
        self.spatial.init(&mut ps, &mut rng)?;
        self.temporal.init(&mut ps, &mut rng)?;
        self.heads.init(&mut ps, &mut rng)?;
        self.fuse.init(&mut ps, &mut rng)?;
        Ok(ps)
    }

    /// Fusion of the last spatial and temporal predictions, the feature
    /// handed to downstream tasks.
    pub fn fuse(&self, g: &mut Graph, p: &BoundParams, out: &FlowOutputs) -> Result<UnitVars> {
        fuse_flow(
            g,
            p,
            &self.fuse,
            out.spatial.last().unwrap(),
            out.temporal.last().unwrap(),
        )
    }

    /// Full forward pass over a window of `2..=T` frames.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        frames: &[UnitVars],
    ) -> Result<FlowOutputs> {
        if frames.len() < 2 {
            return Err(Error::config(format!(
                "a training window needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let observed = frames
            .iter()
            .map(|f| match &self.aggregation {
                Some(a) => a.forward(g, p, f),
                None => Ok(f.clone()),
            })
            .collect::<Result<Vec<_>>>()?;

        let d = self.dims;
        let zero = g.constant(Tensor::zeros(&[d.height, d.unit_width, d.channels]));
        let mut spatial = Vec::with_capacity(observed.len());
        let mut l_spat: Option<Var> = None;
        for (t, f) in observed.iter().enumerate() {
            let sub = if t == 0 {
                [zero, zero]
            } else {
                let prev = &observed[t - 1];
                [
                    prev.left.first().copied().unwrap_or(zero),
                    prev.right.first().copied().unwrap_or(zero),
                ]
            };
            let pred = spatial_flow_predict(g, p, &self.spatial, f, sub)?;
            let l = spatial_loss(g, p, &self.heads, &pred, f)?;
            l_spat = Some(match l_spat {
                None => l,
                Some(a) => g.add(a, l)?,
            });
            spatial.push(pred);
        }
        let l_spat = g.scale(l_spat.unwrap(), 1.0 / observed.len() as f64);

        let temporal = temporal_flow_predict(g, p, &self.temporal, &observed)?;
        let l_tem = temporal_loss(g, p, &self.heads, &temporal, &observed[1..])?;

        let ws = g.scale(l_spat, self.config.lambda_spat);
        let wt = g.scale(l_tem, self.config.lambda_tem);
        let total = g.add(ws, wt)?;
        Ok(FlowOutputs {
            observed,
            spatial,
            temporal,
            l_spat,
            l_tem,
            total,
        })
    }
}
