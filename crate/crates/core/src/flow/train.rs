//! Full-model training on windows of flow units. Every sample in a batch
//! gets its own tape; gradients are averaged in sample order, so the
//! sequential and parallel strategies produce identical parameters.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{FlowModel, Losses};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rig::{FlowUnitSet, UnitVars};
use crate::tensor::{Adam, Graph, Optimizer, ParamSet, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Samples per step; 0 or anything above the sample count uses all.
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 3e-3,
            optimizer: OptimizerKind::Adam,
            batch: 2,
            seed: 42,
        }
    }
}

/// Loss before the update of `step` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub losses: Losses,
}

/// Every run of `len` consecutive frames.
pub fn sliding_windows(frames: &[FlowUnitSet], len: usize) -> Vec<Vec<FlowUnitSet>> {
    if len == 0 || frames.len() < len {
        return Vec::new();
    }
    frames.windows(len).map(|w| w.to_vec()).collect()
}

/// Losses and parameter gradients for one window.
pub fn loss_and_grads(
    model: &FlowModel,
    params: &ParamSet,
    window: &[FlowUnitSet],
) -> Result<(Losses, ParamSet)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let frames: Vec<UnitVars> = window.iter().map(|f| f.record(&mut g, false)).collect();
    let out = model.forward(&mut g, &p, &frames)?;
    let losses = out.losses(&g);
    if !losses.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", losses.total)));
    }
    let grads = g.backward(out.total)?;
    Ok((losses, p.grads(&grads)))
}

/// Mean losses over `windows` without building gradients.
pub fn evaluate(
    model: &FlowModel,
    params: &ParamSet,
    windows: &[Vec<FlowUnitSet>],
    exec: Exec,
) -> Result<Losses> {
    let per = exec.try_map(windows, |w| {
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let frames: Vec<UnitVars> = w.iter().map(|f| f.record(&mut g, false)).collect();
        Ok::<_, Error>(model.forward(&mut g, &p, &frames)?.losses(&g))
    })?;
    Ok(mean_losses(&per))
}

fn mean_losses(ls: &[Losses]) -> Losses {
    let n = ls.len().max(1) as f64;
    let mut m = Losses::default();
    for l in ls {
        m.spat += l.spat;
        m.tem += l.tem;
        m.total += l.total;
    }
    Losses {
        spat: m.spat / n,
        tem: m.tem / n,
        total: m.total / n,
    }
}

/// Optimise `params` in place; returns one record per step.
pub fn train(
    model: &FlowModel,
    params: &mut ParamSet,
    windows: &[Vec<FlowUnitSet>],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<Vec<StepRecord>> {
    if windows.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    if !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
        return Err(Error::config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    let mut opt: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.lr)),
        OptimizerKind::Sgd => Box::new(Sgd { lr: cfg.lr }),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = if cfg.batch == 0 {
        windows.len()
    } else {
        cfg.batch.min(windows.len())
    };
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picked: Vec<&Vec<FlowUnitSet>> = if batch == windows.len() {
            windows.iter().collect()
        } else {
            let mut idx = sample(&mut rng, windows.len(), batch).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &windows[i]).collect()
        };
        let results = exec
            .try_map(&picked, |w| loss_and_grads(model, params, w))
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                e => e,
            })?;
        let (losses, grads): (Vec<Losses>, Vec<ParamSet>) = results.into_iter().unzip();
        let mut g = ParamSet::sum_all(&grads)?;
        g.scale(1.0 / grads.len() as f64);
        history.push(StepRecord {
            step,
            losses: mean_losses(&losses),
        });
        opt.step(params, &g)?;
        if !params.all_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at step {step}"
            )));
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, FlowDims};
    use crate::rig::FlowUnits;
    use crate::tensor::Tensor;

    fn dims() -> FlowDims {
        FlowDims {
            channels: 4,
            height: 2,
            unit_width: 2,
            units: 4,
        }
    }

    fn static_windows(seed: u64) -> Vec<Vec<FlowUnitSet>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FlowUnits::new(
            (0..2)
                .map(|_| Tensor::uniform(&[2, 2, 4], 1.0, &mut rng))
                .collect(),
            (0..2)
                .map(|_| Tensor::uniform(&[2, 2, 4], 1.0, &mut rng))
                .collect(),
        );
        vec![vec![f.clone(), f.clone(), f]]
    }

    #[test]
    fn static_scene_loss_drops_below_a_tenth() {
        let model = FlowModel::new(
            FlowConfig {
                horizon: 3,
                ..FlowConfig::default()
            },
            dims(),
        )
        .unwrap();
        let mut ps = model.init(11).unwrap();
        let cfg = TrainConfig {
            steps: 500,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let h = train(&model, &mut ps, &static_windows(12), &cfg, Exec::Sequential).unwrap();
        assert_eq!(h.len(), 500);
        let after = evaluate(&model, &ps, &static_windows(12), Exec::Sequential).unwrap();
        assert!(
            after.tem < 0.1 * h[0].losses.tem,
            "{} -> {}",
            h[0].losses.tem,
            after.tem
        );
    }

    #[test]
    fn sequential_and_parallel_training_agree_bitwise() {
        let model = FlowModel::new(
            FlowConfig {
                horizon: 3,
                ..FlowConfig::default()
            },
            dims(),
        )
        .unwrap();
        let mut windows = static_windows(1);
        windows.extend(static_windows(2));
        windows.extend(static_windows(3));
        let cfg = TrainConfig {
            steps: 5,
            batch: 2,
            ..TrainConfig::default()
        };
        let mut a = model.init(5).unwrap();
        let mut b = a.clone();
        let ha = train(&model, &mut a, &windows, &cfg, Exec::Sequential).unwrap();
        let hb = train(&model, &mut b, &windows, &cfg, Exec::Parallel).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn bad_learning_rate_rejected() {
        let model = FlowModel::new(FlowConfig::default(), dims()).unwrap();
        let mut ps = model.init(1).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &mut ps, &static_windows(1), &cfg, Exec::Sequential),
            Err(Error::Config(_))
        ));
    }
}
