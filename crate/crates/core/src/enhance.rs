//! Task-aware enhancement: object queries read the flow units that cover
//! their sampling points, region features are concatenated with their
//! unit and mixed back down. A small localisation task measures whether
//! the object-level path carries information the embedding lacks.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::pool_unit;
use crate::rig::{build_layout, FlowUnitSet, FlowUnits, PartitionLayout, RigConfig, UnitVars};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::nn::{Activation, AttentionBlock, Linear, Mlp};
use crate::tensor::{Adam, BoundParams, Graph, Optimizer, ParamSet, Tensor, Var};

/// Object query: an embedding plus the ring coordinates its box projects to.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectQuery {
    pub embedding: Tensor,
    pub points: Vec<f64>,
}

impl ObjectQuery {
    pub fn new(embedding: Tensor, points: Vec<f64>) -> Result<Self> {
        if embedding.rank() != 1 {
            return Err(Error::dim(format!(
                "query embedding must be a vector, got {:?}",
                embedding.shape()
            )));
        }
        if points.is_empty() {
            return Err(Error::invalid("object query without sampling points"));
        }
        Ok(ObjectQuery { embedding, points })
    }
}

/// Feature map attached to one flow unit (ring index).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature {
    pub unit: usize,
    pub feature: Tensor,
}

/// Ring indices of the units containing `points`, sorted and deduplicated.
pub fn covering_units(points: &[f64], layout: &PartitionLayout) -> Result<Vec<usize>> {
    let mut set = BTreeSet::new();
    for &s in points {
        let span = layout.locate(s)?;
        set.insert(layout.ring_index(span.side, span.index));
    }
    Ok(set.into_iter().collect())
}

fn ring_units(units: &UnitVars, layout: &PartitionLayout) -> Result<Vec<Var>> {
    if units.left.len() != layout.left_count() || units.right.len() != layout.right_count() {
        return Err(Error::dim(format!(
            "{}+{} units do not match a layout of {}+{}",
            units.left.len(),
            units.right.len(),
            layout.left_count(),
            layout.right_count()
        )));
    }
    Ok(units.ring_order().into_iter().copied().collect())
}

/// Cross-attention from the query embedding to its pooled covering units,
/// added back onto the embedding.
#[derive(Debug, Clone)]
pub struct ObjectEnhancer {
    pub attn: AttentionBlock,
    pub channels: usize,
}

impl ObjectEnhancer {
    pub fn new(name: &str, channels: usize) -> Self {
        ObjectEnhancer {
            attn: AttentionBlock::new(name, channels, true),
            channels,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.attn.init(ps, rng)
    }

    /// Zero the value projection, which turns the block into the identity.
    pub fn zero_value(&self, ps: &mut ParamSet) {
        let v = &self.attn.v;
        ps.set(v.weight_name(), Tensor::zeros(&[v.fan_in, v.fan_out]));
        ps.set(v.bias_name(), Tensor::zeros(&[v.fan_out]));
    }

    /// `embedding` is `[C]`, each covering unit `[H, P, C]`; returns `[C]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        embedding: Var,
        covering: &[Var],
    ) -> Result<Var> {
        if covering.is_empty() {
            return Err(Error::invalid("object query covers no flow unit"));
        }
        let c = self.channels;
        if g.shape(embedding) != [c] {
            return Err(Error::dim(format!(
                "embedding {:?}, expected [{c}]",
                g.shape(embedding)
            )));
        }
        let tokens = covering
            .iter()
            .map(|&u| {
                let t = pool_unit(g, u)?;
                g.reshape(t, &[1, c])
            })
            .collect::<Result<Vec<_>>>()?;
        let kv = g.concat_rows(&tokens)?;
        let q = g.reshape(embedding, &[1, c])?;
        let out = self.attn.forward(g, p, q, kv)?;
        g.reshape(out, &[c])
    }

    /// Value-level enhancement of one query against a fused unit set.
    pub fn enhance(
        &self,
        params: &ParamSet,
        q: &ObjectQuery,
        fused: &FlowUnitSet,
        layout: &PartitionLayout,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let units = fused.record(&mut g, false);
        let out = object_enhance(&mut g, &p, self, q, &units, layout)?;
        Ok(g.value(out).clone())
    }

    /// [`enhance`](Self::enhance) for many queries sharing one unit set.
    pub fn enhance_all(
        &self,
        params: &ParamSet,
        queries: &[ObjectQuery],
        fused: &FlowUnitSet,
        layout: &PartitionLayout,
        exec: Exec,
    ) -> Result<Vec<Tensor>> {
        exec.try_map(queries, |q| self.enhance(params, q, fused, layout))
    }
}

/// Enhance `q` using only the units of `fused` that cover its points.
pub fn object_enhance(
    g: &mut Graph,
    p: &BoundParams,
    enh: &ObjectEnhancer,
    q: &ObjectQuery,
    fused: &UnitVars,
    layout: &PartitionLayout,
) -> Result<Var> {
    let ring = ring_units(fused, layout)?;
    let idx = covering_units(&q.points, layout)?;
    let covering: Vec<Var> = idx.iter().map(|&i| ring[i]).collect();
    let emb = g.constant(q.embedding.clone());
    enh.forward(g, p, emb, &covering)
}

/// Channel concat of a region feature with its flow unit, mixed back down
/// to `C` channels by a per-position linear map.
#[derive(Debug, Clone)]
pub struct RegionEnhancer {
    pub mix: Linear,
    pub channels: usize,
}

impl RegionEnhancer {
    pub fn new(name: &str, channels: usize) -> Self {
        RegionEnhancer {
            mix: Linear::new(format!("{name}.mix"), 2 * channels, channels),
            channels,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, ps: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.mix.init(ps, rng)
    }

    /// Set the mixing map to `[I | 0]`: the region feature passes through.
    pub fn set_passthrough(&self, ps: &mut ParamSet) {
        let c = self.channels;
        let mut w = Tensor::zeros(&[2 * c, c]);
        for i in 0..c {
            w.data_mut()[i * c + i] = 1.0;
        }
        ps.set(self.mix.weight_name(), w);
        ps.set(self.mix.bias_name(), Tensor::zeros(&[c]));
    }

    /// Both inputs `[H, P, C]`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, region: Var, unit: Var) -> Result<Var> {
        let shape = g.shape(region).to_vec();
        if shape.len() != 3 || g.shape(unit) != shape.as_slice() || shape[2] != self.channels {
            return Err(Error::dim(format!(
                "region {:?} and unit {:?} must share shape [H, P, {}]",
                shape,
                g.shape(unit),
                self.channels
            )));
        }
        let n = shape[0] * shape[1];
        let r = g.reshape(region, &[n, self.channels])?;
        let u = g.reshape(unit, &[n, self.channels])?;
        let cat = g.concat_cols(&[r, u])?;
        let y = self.mix.forward(g, p, cat)?;
        g.reshape(y, &shape)
    }

    pub fn enhance(
        &self,
        params: &ParamSet,
        r: &RegionFeature,
        fused: &FlowUnitSet,
    ) -> Result<RegionFeature> {
        let ring = fused.ring_order();
        let unit = ring.get(r.unit).ok_or_else(|| {
            Error::invalid(format!(
                "region unit {} outside {} units",
                r.unit,
                ring.len()
            ))
        })?;
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let (a, b) = (g.constant(r.feature.clone()), g.constant((*unit).clone()));
        let out = self.forward(&mut g, &p, a, b)?;
        Ok(RegionFeature {
            unit: r.unit,
            feature: g.value(out).clone(),
        })
    }
}

/// Which source carries an object's position in the toy dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Position code lives in the flow units only.
    FlowOnly,
    /// Position code lives in the embedding only.
    Separable,
    /// No position code anywhere.
    ZeroInformation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub kind: ToyKind,
    pub rig: RigConfig,
    pub level: usize,
    pub frames: usize,
    pub objects_per_frame: usize,
    /// Object width in ring columns; one sampling point per column.
    pub object_width: usize,
    pub code_scale: f64,
    /// Noise on flow-unit features.
    pub noise: f64,
    /// Noise on embeddings that carry the position code.
    pub embedding_noise: f64,
    /// Trailing frames held out for evaluation.
    pub eval_frames: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            kind: ToyKind::FlowOnly,
            rig: crate::synth::SynthScenario::sanity_fixture(0).rig,
            level: 0,
            frames: 60,
            objects_per_frame: 4,
            object_width: 2,
            code_scale: 1.0,
            noise: 0.5,
            embedding_noise: 0.05,
            eval_frames: 12,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyObject {
    pub object_id: usize,
    pub ring_position: f64,
    pub frame: usize,
    pub embedding: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub config: ToyConfig,
    pub layout: PartitionLayout,
    pub frames: Vec<FlowUnitSet>,
    pub objects: Vec<ToyObject>,
}

pub const MIN_TOY_OBJECTS: usize = 50;

fn gaussian(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data).expect("gaussian shape")
}

impl ToyDataset {
    pub fn generate(config: &ToyConfig) -> Result<Self> {
        let cfg = config;
        let total = cfg.frames * cfg.objects_per_frame;
        if total < MIN_TOY_OBJECTS {
            return Err(Error::config(format!(
                "toy dataset needs at least {MIN_TOY_OBJECTS} objects, got {total}"
            )));
        }
        if cfg.eval_frames == 0 || cfg.eval_frames >= cfg.frames {
            return Err(Error::config(format!(
                "eval_frames must lie in 1..{}, got {}",
                cfg.frames, cfg.eval_frames
            )));
        }
        if cfg.object_width == 0
            || !(cfg.noise >= 0.0)
            || !(cfg.embedding_noise >= 0.0)
            || !(cfg.code_scale >= 0.0)
        {
            return Err(Error::config(
                "object width must be positive, noise and code scale nonnegative",
            ));
        }
        cfg.rig.validate()?;
        let rig = cfg.rig.rig()?;
        let p = cfg.rig.level_size(cfg.level)?;
        // straight ahead: the front camera's centre column
        let start = rig.width as f64 / 2.0;
        let layout = build_layout(&rig, start, p as f64, p as f64, p, cfg.level)?;
        let (h, c, nk) = (rig.height, rig.channels, layout.unit_count());

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let codes: Vec<Tensor> = (0..nk)
            .map(|_| gaussian(&[c], cfg.code_scale, &mut rng))
            .collect();
        let in_units = cfg.kind == ToyKind::FlowOnly;
        let in_embedding = cfg.kind == ToyKind::Separable;

        let mut frames = Vec::with_capacity(cfg.frames);
        for _ in 0..cfg.frames {
            let ring: Vec<Tensor> = (0..nk)
                .map(|k| {
                    let mut u = gaussian(&[h, p, c], cfg.noise, &mut rng);
                    if in_units {
                        for (i, x) in u.data_mut().iter_mut().enumerate() {
                            *x += codes[k].data()[i % c];
                        }
                    }
                    u
                })
                .collect();
            frames.push(FlowUnits::from_ring_order(ring, layout.right_count()));
        }

        let perim = layout.perimeter as f64;
        let mut objects = Vec::with_capacity(total);
        for frame in 0..cfg.frames {
            for _ in 0..cfg.objects_per_frame {
                let ring_position = rng.gen_range(0.0..perim);
                // uninformative embeddings stay at unit scale so the
                // baseline still has something to fit
                let std = if in_embedding {
                    cfg.embedding_noise
                } else {
                    1.0
                };
                let mut embedding = gaussian(&[c], std, &mut rng);
                if in_embedding {
                    let k = label(&layout, ring_position)?;
                    for (e, x) in embedding.data_mut().iter_mut().zip(codes[k].data()) {
                        *e += x;
                    }
                }
                objects.push(ToyObject {
                    object_id: objects.len(),
                    ring_position,
                    frame,
                    embedding,
                });
            }
        }
        Ok(ToyDataset {
            config: cfg.clone(),
            layout,
            frames,
            objects,
        })
    }

    pub fn points(&self, o: &ToyObject) -> Vec<f64> {
        let perim = self.layout.perimeter as f64;
        (0..self.config.object_width)
            .map(|i| (o.ring_position + i as f64).rem_euclid(perim))
            .collect()
    }

    pub fn query(&self, o: &ToyObject) -> Result<ObjectQuery> {
        ObjectQuery::new(o.embedding.clone(), self.points(o))
    }

    /// Ring index of the unit holding the object's first column.
    pub fn label(&self, o: &ToyObject) -> Result<usize> {
        label(&self.layout, o.ring_position)
    }

    pub fn classes(&self) -> usize {
        self.layout.unit_count()
    }

    pub fn is_eval(&self, o: &ToyObject) -> bool {
        o.frame >= self.config.frames - self.config.eval_frames
    }
}

fn label(layout: &PartitionLayout, s: f64) -> Result<usize> {
    let span = layout.locate(s)?;
    Ok(layout.ring_index(span.side, span.index))
}

pub const TOY_INDEX_FILE: &str = "toy.jsonl";
pub const TOY_META_FILE: &str = "toy.json";

/// One line of the toy index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRecord {
    pub object_id: usize,
    pub ring_position: f64,
    pub embedding_file: String,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ToyMeta {
    config: ToyConfig,
    layout: PartitionLayout,
    frame_files: Vec<String>,
}

/// Frames go to `frames/frame_XXX.flt` as ring-ordered `[NK, H, P, C]`
/// stacks, embeddings to `embeddings/obj_XXXXX.flt`.
pub fn write_toy_dataset(ds: &ToyDataset, dir: &Path) -> Result<()> {
    for sub in ["frames", "embeddings"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut frame_files = Vec::with_capacity(ds.frames.len());
    for (t, f) in ds.frames.iter().enumerate() {
        let name = format!("frames/frame_{t:03}.flt");
        let ring = f.ring_order();
        let shape = f.unit_shape()?;
        let data: Vec<f64> = ring.iter().flat_map(|u| u.data().iter().copied()).collect();
        let mut full = vec![ring.len()];
        full.extend(shape);
        write_tensor(&dir.join(&name), &Tensor::new(&full, data)?)?;
        frame_files.push(name);
    }
    let mut lines = String::new();
    for o in &ds.objects {
        let name = format!("embeddings/obj_{:05}.flt", o.object_id);
        write_tensor(&dir.join(&name), &o.embedding)?;
        let rec = ToyRecord {
            object_id: o.object_id,
            ring_position: o.ring_position,
            embedding_file: name,
            frame: o.frame,
        };
        lines.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        lines.push('\n');
    }
    let idx = dir.join(TOY_INDEX_FILE);
    std::fs::write(&idx, lines).map_err(|e| Error::io(&idx, e))?;
    let meta = ToyMeta {
        config: ds.config.clone(),
        layout: ds.layout.clone(),
        frame_files,
    };
    let mp = dir.join(TOY_META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

pub fn read_toy_dataset(dir: &Path) -> Result<ToyDataset> {
    let mp = dir.join(TOY_META_FILE);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: ToyMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
    let mut frames = Vec::with_capacity(meta.frame_files.len());
    for name in &meta.frame_files {
        let path = dir.join(name);
        let t = read_tensor(&path)?;
        let s = t.shape().to_vec();
        if s.len() != 4 || s[0] != meta.layout.unit_count() {
            return Err(Error::format(&path, format!("unit stack of shape {s:?}")));
        }
        let n: usize = s[1..].iter().product();
        let ring = t
            .data()
            .chunks(n)
            .map(|d| Tensor::new(&s[1..], d.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        frames.push(FlowUnits::from_ring_order(ring, meta.layout.right_count()));
    }
    let idx = dir.join(TOY_INDEX_FILE);
    let text = std::fs::read_to_string(&idx).map_err(|e| Error::io(&idx, e))?;
    let mut objects = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: ToyRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(&idx, format!("line {}: {e}", i + 1)))?;
        if rec.frame >= frames.len() {
            return Err(Error::format(
                &idx,
                format!("line {}: frame {} of {}", i + 1, rec.frame, frames.len()),
            ));
        }
        objects.push(ToyObject {
            object_id: rec.object_id,
            ring_position: rec.ring_position,
            frame: rec.frame,
            embedding: read_tensor(&dir.join(&rec.embedding_file))?,
        });
    }
    Ok(ToyDataset {
        config: meta.config,
        layout: meta.layout,
        frames,
        objects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            epochs: 200,
            lr: 1e-2,
            hidden: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub baseline_accuracy: f64,
    pub enhanced_accuracy: f64,
    pub chance: f64,
    pub train_objects: usize,
    pub eval_objects: usize,
}

struct Localizer {
    enhancer: Option<ObjectEnhancer>,
    head: Mlp,
}

impl Localizer {
    fn logits(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        ds: &ToyDataset,
        objs: &[&ToyObject],
    ) -> Result<Var> {
        let c = ds.config.rig.channels;
        let rows = match &self.enhancer {
            None => {
                let data: Vec<f64> = objs
                    .iter()
                    .flat_map(|o| o.embedding.data().iter().copied())
                    .collect();
                g.constant(Tensor::new(&[objs.len(), c], data)?)
            }
            Some(enh) => {
                let recorded: Vec<UnitVars> =
                    ds.frames.iter().map(|f| f.record(g, false)).collect();
                let rows = objs
                    .iter()
                    .map(|o| {
                        let e = object_enhance(
                            g,
                            p,
                            enh,
                            &ds.query(o)?,
                            &recorded[o.frame],
                            &ds.layout,
                        )?;
                        g.reshape(e, &[1, c])
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.concat_rows(&rows)?
            }
        };
        self.head.forward(g, p, rows)
    }
}

fn fit_and_score(
    ds: &ToyDataset,
    enhanced: bool,
    train: &[&ToyObject],
    eval: &[&ToyObject],
    cfg: &ToyTrainConfig,
) -> Result<f64> {
    let (c, k) = (ds.config.rig.channels, ds.classes());
    let model = Localizer {
        enhancer: enhanced.then(|| ObjectEnhancer::new("enh.obj", c)),
        head: Mlp::new("loc", &[c, cfg.hidden, k], Activation::Tanh)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParamSet::new();
    // same head initialisation for both variants
    model.head.init(&mut ps, &mut rng)?;
    if let Some(e) = &model.enhancer {
        e.init(&mut ps, &mut rng)?;
    }
    let onehot = |objs: &[&ToyObject]| -> Result<Tensor> {
        let mut y = Tensor::zeros(&[objs.len(), k]);
        for (i, o) in objs.iter().enumerate() {
            y.data_mut()[i * k + ds.label(o)?] = 1.0;
        }
        Ok(y)
    };
    let y_train = onehot(train)?;
    let mut opt = Adam::new(cfg.lr);
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let logits = model.logits(&mut g, &p, ds, train)?;
        let lp = g.log_softmax_rows(logits);
        let y = g.constant(y_train.clone());
        let picked = g.mul(lp, y)?;
        let s = g.sum(picked);
        let loss = g.scale(s, -1.0 / train.len() as f64);
        if !g.value(loss).all_finite() {
            return Err(Error::Numeric("toy localisation loss is not finite".into()));
        }
        let grads = g.backward(loss)?;
        opt.step(&mut ps, &p.grads(&grads))?;
    }
    let mut g = Graph::new();
    let p = ps.bind_frozen(&mut g);
    let logits = model.logits(&mut g, &p, ds, eval)?;
    let v = g.value(logits);
    let mut correct = 0usize;
    for (row, o) in v.data().chunks(k).zip(eval) {
        let arg = row
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, &x)| if x > b.1 { (i, x) } else { b },
            )
            .0;
        correct += usize::from(arg == ds.label(o)?);
    }
    Ok(correct as f64 / eval.len().max(1) as f64)
}

/// Train a baseline and a flow-enhanced localiser with the same seed and
/// epochs on the training frames; report accuracy on the held-out frames.
pub fn toy_localization(ds: &ToyDataset, cfg: &ToyTrainConfig, exec: Exec) -> Result<ToyReport> {
    if ds.objects.len() < MIN_TOY_OBJECTS {
        return Err(Error::config(format!(
            "toy dataset needs at least {MIN_TOY_OBJECTS} objects, got {}",
            ds.objects.len()
        )));
    }
    if !(cfg.lr > 0.0) || cfg.epochs == 0 || cfg.hidden == 0 {
        return Err(Error::config(
            "toy training needs positive lr, epochs and width",
        ));
    }
    let (eval, train): (Vec<&ToyObject>, Vec<&ToyObject>) =
        ds.objects.iter().partition(|o| ds.is_eval(o));
    if eval.is_empty() || train.is_empty() {
        return Err(Error::config(
            "toy split leaves no training or evaluation objects",
        ));
    }
    let acc = exec.try_map(&[false, true], |&enh| {
        fit_and_score(ds, enh, &train, &eval, cfg)
    })?;
    Ok(ToyReport {
        baseline_accuracy: acc[0],
        enhanced_accuracy: acc[1],
        chance: 1.0 / ds.classes() as f64,
        train_objects: train.len(),
        eval_objects: eval.len(),
    })
}
