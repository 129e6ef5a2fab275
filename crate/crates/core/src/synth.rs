//! Seeded synthetic world: a textured ring that slides past a moving ego,
//! with exactly known per-side column shifts, plus a trajectory log from a
//! deliberately lagging planner.
//!
//! The ring is split at the centre column of the front camera. Each frame
//! rotates the right half towards increasing columns and the left half
//! towards decreasing columns, so content leaving the rear re-enters at the
//! front and nothing is created or destroyed.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{Clip, Command, PlanFrame, TrajectoryLog};
use crate::rig::{
    adjust_sizes, partition_features, partition_frame, EgoPose, FlowUnitSet, FramePartition,
    PanoramicRig, Power, RigConfig, SteeringCircle, TurnDirection, FRONT_AXIS,
};
use crate::tensor::io::{decode, encode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EgoPath {
    Straight {
        #[serde(default = "default_speed")]
        speed: f64,
    },
    Arc {
        r: f64,
        direction: TurnDirection,
        #[serde(default = "default_speed")]
        speed: f64,
    },
}

fn default_speed() -> f64 {
    8.0
}

impl EgoPath {
    pub fn speed(&self) -> f64 {
        match *self {
            EgoPath::Straight { speed } | EgoPath::Arc { speed, .. } => speed,
        }
    }

    /// Steering circle centred on the start of the path.
    pub fn circle(&self) -> SteeringCircle {
        match *self {
            EgoPath::Straight { .. } => SteeringCircle::Straight,
            EgoPath::Arc { r, direction, .. } => SteeringCircle::Circle {
                center_x: 0.0,
                center_y: if direction == TurnDirection::Left {
                    r
                } else {
                    -r
                },
                radius: r,
                turn: direction,
            },
        }
    }

    /// World position and heading at time `tau` seconds (ego at the origin
    /// facing +x at `tau = 0`).
    pub fn pose_at(&self, tau: f64) -> (f64, f64, f64) {
        match *self {
            EgoPath::Straight { speed } => (speed * tau, 0.0, 0.0),
            EgoPath::Arc {
                r,
                direction,
                speed,
            } => {
                let sign = if direction == TurnDirection::Left {
                    1.0
                } else {
                    -1.0
                };
                let th = speed * tau / r;
                (r * th.sin(), sign * r * (1.0 - th.cos()), sign * th)
            }
        }
    }

    pub fn command(&self) -> Command {
        match *self {
            EgoPath::Straight { .. } => Command::GoStraight,
            EgoPath::Arc {
                direction: TurnDirection::Left,
                ..
            } => Command::TurnLeft,
            EgoPath::Arc { .. } => Command::TurnRight,
        }
    }
}

/// An object painted into the texture at frame 1 and carried with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedObject {
    /// Ring column of the object's left edge at frame 1.
    pub ring_position: f64,
    #[serde(default = "default_object_width")]
    pub width: usize,
    /// Seed of the `C`-channel signature pattern.
    pub signature_seed: u64,
}

fn default_object_width() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub path: EgoPath,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub rig: RigConfig,
    /// Seconds between frames.
    pub dt: f64,
    /// Ring columns per meter travelled.
    pub pixels_per_meter: f64,
    /// Highest harmonic (cycles per ring) in the texture.
    pub texture_frequency: usize,
    pub objects: Vec<PlantedObject>,
    pub w_ego: f64,
    pub power: Power,
    /// Frames the synthetic planner needs to commit to the true plan.
    pub planner_lag: usize,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            path: EgoPath::Arc {
                r: 10.0,
                direction: TurnDirection::Right,
                speed: default_speed(),
            },
            horizon: 8,
            seed: 42,
            rig: RigConfig::default(),
            dt: 0.5,
            pixels_per_meter: 2.0,
            texture_frequency: 24,
            objects: vec![
                PlantedObject {
                    ring_position: 40.0,
                    width: 2,
                    signature_seed: 1,
                },
                PlantedObject {
                    ring_position: 150.0,
                    width: 2,
                    signature_seed: 2,
                },
                PlantedObject {
                    ring_position: 300.0,
                    width: 2,
                    signature_seed: 3,
                },
            ],
            w_ego: 2.0,
            power: Power::Quadratic,
            planner_lag: 3,
        }
    }
}

impl SynthScenario {
    /// Straight run on a compact rig whose per-frame shift equals the
    /// coarsest unit width.
    pub fn sanity_fixture(seed: u64) -> Self {
        let base = SynthScenario {
            rig: RigConfig {
                num_cameras: 6,
                width: 32,
                height: 4,
                channels: 8,
                levels: vec![8, 4, 2, 1],
            },
            texture_frequency: 12,
            objects: vec![
                PlantedObject {
                    ring_position: 40.0,
                    width: 2,
                    signature_seed: 1,
                },
                PlantedObject {
                    ring_position: 130.0,
                    width: 2,
                    signature_seed: 2,
                },
            ],
            ..SynthScenario::default()
        };
        let p = base.rig.levels[0] as f64;
        SynthScenario {
            path: EgoPath::Straight {
                speed: p / (base.dt * base.pixels_per_meter),
            },
            seed,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rig = self.rig.rig()?;
        self.rig.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("scenario needs at least one frame"));
        }
        if !(self.dt > 0.0) || !(self.pixels_per_meter > 0.0) || !(self.w_ego > 0.0) {
            return Err(Error::config(
                "dt, pixels_per_meter and w_ego must be positive",
            ));
        }
        if !(self.path.speed() >= 0.0) || !self.path.speed().is_finite() {
            return Err(Error::config("speed must be finite and nonnegative"));
        }
        if let EgoPath::Arc { r, .. } = self.path {
            if !(r > self.w_ego / 2.0) {
                return Err(Error::KinematicInfeasible(format!(
                    "arc radius {r} m does not exceed half the ego width ({} m)",
                    self.w_ego / 2.0
                )));
            }
        }
        let perim = rig.perimeter() as f64;
        for o in &self.objects {
            if !(0.0..perim).contains(&o.ring_position) || o.width == 0 {
                return Err(Error::config(format!(
                    "object at {} (width {}) outside the ring [0, {perim})",
                    o.ring_position, o.width
                )));
            }
        }
        Ok(())
    }

    /// Real per-frame shift in columns `(left, right)`.
    pub fn side_shifts(&self) -> Result<(f64, f64)> {
        let base = self.path.speed() * self.dt * self.pixels_per_meter;
        let (l, r) = adjust_sizes(1.0, &self.path.circle(), self.w_ego, self.power)?;
        Ok((base * l, base * r))
    }
}

/// Position of a planted object at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: usize,
    /// Ring coordinate of the object's centre.
    pub ring_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// 1-based frame number.
    pub frame: usize,
    /// `[N, H, W, C]` ring features.
    pub f_img: Tensor,
    pub pose: EgoPose,
    /// Real column shift since the previous frame, per side.
    pub shift_left: f64,
    pub shift_right: f64,
    /// Integer shift actually applied to the texture.
    pub shift_cols_left: i64,
    pub shift_cols_right: i64,
    pub objects: Vec<ObjectState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: SynthScenario,
    /// The two poses before frame 1, oldest first.
    pub history: Vec<EgoPose>,
    pub frames: Vec<FrameRecord>,
    pub log: TrajectoryLog,
}

/// Ring texture as `[column][row][channel]`, flattened.
struct Ring {
    cols: usize,
    stride: usize,
    data: Vec<f64>,
}

impl Ring {
    fn column(&self, c: usize) -> &[f64] {
        &self.data[c * self.stride..(c + 1) * self.stride]
    }

    fn to_image(&self, rig: &PanoramicRig) -> Tensor {
        let (h, w, ch) = (rig.height, rig.width, rig.channels);
        let mut out = vec![0.0; rig.num_cameras * h * w * ch];
        for col in 0..self.cols {
            let (cam, ci) = rig.camera_column(col);
            let src = self.column(col);
            for row in 0..h {
                let dst = ((cam * h + row) * w + ci) * ch;
                out[dst..dst + ch].copy_from_slice(&src[row * ch..(row + 1) * ch]);
            }
        }
        Tensor::new(&[rig.num_cameras, h, w, ch], out).expect("image shape")
    }
}

/// The two halves of the ring as column lists, each ordered outward from
/// the split column.
fn halves(cols: usize, split: usize) -> (Vec<usize>, Vec<usize>) {
    let right_len = cols.div_ceil(2);
    let right = (0..right_len).map(|k| (split + k) % cols).collect();
    let left = (0..cols - right_len)
        .map(|k| (split + cols - 1 - k) % cols)
        .collect();
    (left, right)
}

fn rotate(ring: &mut Ring, half: &[usize], shift: i64) {
    let n = half.len() as i64;
    if n == 0 || shift.rem_euclid(n) == 0 {
        return;
    }
    let old: Vec<Vec<f64>> = half.iter().map(|&c| ring.column(c).to_vec()).collect();
    for (k, &c) in half.iter().enumerate() {
        let src = (k as i64 - shift).rem_euclid(n) as usize;
        ring.data[c * ring.stride..(c + 1) * ring.stride].copy_from_slice(&old[src]);
    }
}

fn texture(rig: &PanoramicRig, freq: usize, rng: &mut ChaCha8Rng) -> Ring {
    let cols = rig.perimeter();
    let stride = rig.height * rig.channels;
    let mut data = vec![0.0; cols * stride];
    let k_max = freq.max(1);
    // unit variance: amplitudes normalised over the harmonics
    let amp = (2.0 / k_max as f64).sqrt();
    for j in 0..stride {
        let phases: Vec<f64> = (0..k_max).map(|_| rng.gen_range(0.0..TAU)).collect();
        for (c, chunk) in data.chunks_mut(stride).enumerate() {
            let x = TAU * c as f64 / cols as f64;
            chunk[j] = phases
                .iter()
                .enumerate()
                .map(|(k, ph)| ((k + 1) as f64 * x + ph).sin())
                .sum::<f64>()
                * amp;
        }
    }
    Ring { cols, stride, data }
}

fn signature(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b1e_c7);
    Tensor::randn(&[len], 2.0, &mut rng).into_data()
}

fn pose_for(path: &EgoPath, dt: f64, t: i64) -> EgoPose {
    let (x, y, yaw) = path.pose_at((t - 1) as f64 * dt);
    EgoPose::new(x, y, t).with_yaw(yaw)
}

/// Point `h` seconds ahead of frame `t`, in that frame's ego coordinates
/// (`x` forward, `y` left).
fn future_in_ego(path: &EgoPath, dt: f64, t: i64, h: f64) -> [f64; 2] {
    let now = (t - 1) as f64 * dt;
    let (x0, y0, yaw) = path.pose_at(now);
    let (x1, y1, _) = path.pose_at(now + h);
    let (s, c) = yaw.sin_cos();
    let (dx, dy) = (x1 - x0, y1 - y0);
    [c * dx + s * dy, -s * dx + c * dy]
}

fn planner_log(sc: &SynthScenario) -> TrajectoryLog {
    let v = sc.path.speed();
    let frames = (1..=sc.horizon as i64)
        .map(|t| {
            let alpha = if sc.planner_lag == 0 {
                1.0
            } else {
                ((t - 1) as f64 / sc.planner_lag as f64).min(1.0)
            };
            let plan = |h: f64| {
                let gt = future_in_ego(&sc.path, sc.dt, t, h);
                let straight = [v * h, 0.0];
                let pred = [
                    alpha * gt[0] + (1.0 - alpha) * straight[0],
                    alpha * gt[1] + (1.0 - alpha) * straight[1],
                ];
                (pred, gt)
            };
            let (p1, g1) = plan(1.0);
            let (p2, g2) = plan(2.0);
            let (p3, g3) = plan(3.0);
            PlanFrame {
                pred_3s: p3,
                gt_3s: Some(g3),
                lateral_3s: Some(-p3[1]),
                pred_1s: Some(p1),
                gt_1s: Some(g1),
                pred_2s: Some(p2),
                gt_2s: Some(g2),
            }
        })
        .collect();
    TrajectoryLog {
        clips: vec![Clip {
            id: Some(format!("synth-{}", sc.seed)),
            command: sc.path.command(),
            frames,
        }],
    }
}

/// Generate all frames of a scenario.
pub fn generate_sequence(sc: &SynthScenario) -> Result<Dataset> {
    sc.validate()?;
    let rig = sc.rig.rig()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut ring = texture(&rig, sc.texture_frequency, &mut rng);
    let split = rig.width / 2;
    let (left, right) = halves(ring.cols, split);

    // objects: painted once, tracked by their position within a half
    let mut tracked = Vec::with_capacity(sc.objects.len());
    for (id, o) in sc.objects.iter().enumerate() {
        let sig = signature(o.signature_seed, ring.stride);
        let start = o.ring_position.floor() as usize;
        for k in 0..o.width {
            let c = (start + k) % ring.cols;
            ring.data[c * ring.stride..(c + 1) * ring.stride].copy_from_slice(&sig);
        }
        let centre = (start + o.width / 2) % ring.cols;
        let (side_right, idx) = match right.iter().position(|&c| c == centre) {
            Some(i) => (true, i),
            None => (
                false,
                left.iter()
                    .position(|&c| c == centre)
                    .expect("column in a half"),
            ),
        };
        tracked.push((id, side_right, idx));
    }

    let (sl, sr) = sc.side_shifts()?;
    let mut frames = Vec::with_capacity(sc.horizon);
    for t in 1..=sc.horizon as i64 {
        let (cl, cr) = if t == 1 {
            (0, 0)
        } else {
            let step =
                |s: f64| ((t - 1) as f64 * s).round() as i64 - ((t - 2) as f64 * s).round() as i64;
            (step(sl), step(sr))
        };
        rotate(&mut ring, &left, cl);
        rotate(&mut ring, &right, cr);
        let objects = tracked
            .iter_mut()
            .map(|(id, on_right, idx)| {
                let (half, shift) = if *on_right { (&right, cr) } else { (&left, cl) };
                *idx = (*idx as i64 + shift).rem_euclid(half.len() as i64) as usize;
                ObjectState {
                    id: *id,
                    ring_position: half[*idx] as f64 + 0.5,
                }
            })
            .collect();
        frames.push(FrameRecord {
            frame: t as usize,
            f_img: ring.to_image(&rig),
            pose: pose_for(&sc.path, sc.dt, t),
            shift_left: if t == 1 { 0.0 } else { sl },
            shift_right: if t == 1 { 0.0 } else { sr },
            shift_cols_left: cl,
            shift_cols_right: cr,
            objects,
        });
    }
    Ok(Dataset {
        scenario: sc.clone(),
        history: vec![pose_for(&sc.path, sc.dt, -1), pose_for(&sc.path, sc.dt, 0)],
        frames,
        log: planner_log(sc),
    })
}

impl Dataset {
    /// Partition of every frame at `level`, each from its last three poses.
    pub fn partitions(&self, level: usize) -> Result<Vec<FramePartition>> {
        let sc = &self.scenario;
        let rig = sc.rig.rig()?;
        let p = sc.rig.level_size(level)?;
        let mut poses = self.history.clone();
        let mut dir = FRONT_AXIS;
        let mut out = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            poses.push(f.pose);
            let part = partition_frame(&rig, &poses, p, level, sc.w_ego, sc.power, dir)?;
            dir = part.direction;
            out.push(part);
        }
        Ok(out)
    }

    /// Flow units of every frame at `level`.
    pub fn flow_units(&self, level: usize) -> Result<Vec<FlowUnitSet>> {
        let rig = self.scenario.rig.rig()?;
        self.partitions(level)?
            .iter()
            .zip(&self.frames)
            .map(|(part, f)| partition_features(&f.f_img, &rig, &part.layout))
            .collect()
    }
}

pub const INDEX_FILE: &str = "index.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameEntry {
    frame: usize,
    file: String,
    pose: EgoPose,
    shift_left: f64,
    shift_right: f64,
    shift_cols_left: i64,
    shift_cols_right: i64,
    objects: Vec<ObjectState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    scenario: SynthScenario,
    history: Vec<EgoPose>,
    frames: Vec<FrameEntry>,
    log: String,
}

/// SHA-256 of every dataset file, plus one digest over the sorted list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub digest: String,
}

impl Manifest {
    pub fn from_files(files: BTreeMap<String, String>) -> Self {
        let mut h = Sha256::new();
        for (name, sum) in &files {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(sum.as_bytes());
            h.update([b'\n']);
        }
        Manifest {
            files,
            digest: hex(&h.finalize()),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn write_file(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    files: &mut BTreeMap<String, String>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Write frames as tensor files plus a JSON index, a trajectory log and a
/// manifest of content hashes.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    let mut entries = Vec::with_capacity(ds.frames.len());
    for f in &ds.frames {
        let name = format!("frame_{:03}.flt", f.frame);
        write_file(dir, &name, &encode(&f.f_img), &mut files)?;
        entries.push(FrameEntry {
            frame: f.frame,
            file: name,
            pose: f.pose,
            shift_left: f.shift_left,
            shift_right: f.shift_right,
            shift_cols_left: f.shift_cols_left,
            shift_cols_right: f.shift_cols_right,
            objects: f.objects.clone(),
        });
    }
    write_file(dir, LOG_FILE, ds.log.to_jsonl().as_bytes(), &mut files)?;
    let index = Index {
        scenario: ds.scenario.clone(),
        history: ds.history.clone(),
        frames: entries,
        log: LOG_FILE.to_string(),
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::json("dataset index", e))?;
    write_file(dir, INDEX_FILE, json.as_bytes(), &mut files)?;
    let manifest = Manifest::from_files(files);
    let mj = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, mj).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let ipath = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let index: Index = serde_json::from_str(&text)
        .map_err(|e| Error::format(&ipath, format!("bad index: {e}")))?;
    let rig = index.scenario.rig.rig()?;
    let expect = [rig.num_cameras, rig.height, rig.width, rig.channels];
    let mut frames = Vec::with_capacity(index.frames.len());
    for e in index.frames {
        let path = dir.join(&e.file);
        let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let f_img = decode(&bytes, &path)?;
        if f_img.shape() != expect {
            return Err(Error::format(
                &path,
                format!("shape {:?}, rig expects {:?}", f_img.shape(), expect),
            ));
        }
        frames.push(FrameRecord {
            frame: e.frame,
            f_img,
            pose: e.pose,
            shift_left: e.shift_left,
            shift_right: e.shift_right,
            shift_cols_left: e.shift_cols_left,
            shift_cols_right: e.shift_cols_right,
            objects: e.objects,
        });
    }
    let log = TrajectoryLog::read(&dir.join(&index.log))?;
    Ok(Dataset {
        scenario: index.scenario,
        history: index.history,
        frames,
        log,
    })
}
