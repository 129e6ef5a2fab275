//! Fast invariant checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use egoflow::flow::{FlowConfig, FlowDims, FlowModel};
use egoflow::metrics::{fcp_clip, Clip, Command, PlanFrame};
use egoflow::rig::{
    adjust_sizes, build_layout, fit_steering_circle, EgoPose, PanoramicRig, Power, SteeringCircle,
    TurnDirection,
};
use egoflow::synth::{generate_sequence, read_dataset, write_dataset, SynthScenario};
use egoflow::tensor::nn::{attention, kl_diag_gaussian_value, GruCell};
use egoflow::tensor::{finite_diff_grad, ParamSet, Tensor};
use egoflow::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckResult {
    match f() {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn circle_fit() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (cx, cy, r) = (
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(2.0..40.0),
        );
        let mut a: Vec<f64> = (0..3)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        a.sort_by(f64::total_cmp);
        if a[2] - a[0] < 0.3 || a[1] - a[0] < 0.1 || a[2] - a[1] < 0.1 {
            continue;
        }
        let p: Vec<EgoPose> = a
            .iter()
            .enumerate()
            .map(|(t, th)| EgoPose::new(cx + r * th.cos(), cy + r * th.sin(), t as i64))
            .collect();
        match fit_steering_circle(&p[0], &p[1], &p[2]).map_err(|e| e.to_string())? {
            SteeringCircle::Circle {
                center_x,
                center_y,
                radius,
                ..
            } => {
                for (got, want) in [(center_x, cx), (center_y, cy), (radius, r)] {
                    worst = worst.max((got - want).abs() / want.abs().max(1.0));
                }
            }
            SteeringCircle::Straight => {
                return Err("non-collinear points fitted as straight".into())
            }
        }
    }
    let line: Vec<EgoPose> = (0..3)
        .map(|t| EgoPose::new(t as f64, 2.0 * t as f64, t))
        .collect();
    let straight = fit_steering_circle(&line[0], &line[1], &line[2]).map_err(|e| e.to_string())?;
    ensure(straight == SteeringCircle::Straight, || {
        "collinear points fitted as a circle".into()
    })?;
    ensure(worst < 1e-9, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn size_anchor() -> Result<String, String> {
    let circle = SteeringCircle::Circle {
        center_x: 0.0,
        center_y: -10.0,
        radius: 10.0,
        turn: TurnDirection::Right,
    };
    let (l, r) = adjust_sizes(8.0, &circle, 2.0, Power::Quadratic).map_err(|e| e.to_string())?;
    ensure((l - 9.68).abs() < 1e-12 && (r - 6.48).abs() < 1e-12, || {
        format!("got ({l}, {r})")
    })?;
    Ok(format!("({l}, {r})"))
}

fn tiling() -> Result<String, String> {
    let rig = PanoramicRig::new(6, 32, 2, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s = rng.gen_range(0.0..rig.perimeter() as f64);
        let (pl, pr) = (rng.gen_range(1.5..20.0), rng.gen_range(1.5..20.0));
        let l = build_layout(&rig, s, pl, pr, 8, 0).map_err(|e| e.to_string())?;
        let b = l.ring_boundaries();
        ensure(b.windows(2).all(|w| w[0] < w[1]), || {
            format!("non-increasing boundaries at s={s}")
        })?;
        ensure(b[b.len() - 1] - b[0] == rig.perimeter(), || {
            format!("coverage gap at s={s}")
        })?;
    }
    Ok("100 layouts tile the ring".into())
}

fn gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gru = GruCell::new("gru", 3);
    let mut ps = ParamSet::new();
    gru.init(&mut ps, &mut rng).map_err(|e| e.to_string())?;
    let inputs = [
        Tensor::uniform(&[2, 3], 1.0, &mut rng),
        Tensor::uniform(&[2, 3], 1.0, &mut rng),
    ];
    let r1 = finite_diff_grad(
        |g, v| {
            let p = ps.bind_frozen(g);
            let h = gru.forward(g, &p, v[0], v[1])?;
            let s = g.square(h);
            Ok(g.sum(s))
        },
        &inputs,
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    let qkv: Vec<Tensor> = (0..3)
        .map(|_| Tensor::uniform(&[3, 4], 1.0, &mut rng))
        .collect();
    let r2 = finite_diff_grad(
        |g, v| {
            let a = attention(g, v[0], v[1], v[2])?;
            let t = g.tanh(a);
            Ok(g.sum(t))
        },
        &qkv,
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    let worst = r1.max_rel_err.max(r2.max_rel_err);
    ensure(worst < 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("gru and attention max relative error {worst:.1e}"))
}

fn kl() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let m1 = Tensor::uniform(&[4], 2.0, &mut rng);
        let m2 = Tensor::uniform(&[4], 2.0, &mut rng);
        let s1 = Tensor::uniform(&[4], 0.9, &mut rng).map(|x| x + 1.0);
        let s2 = Tensor::uniform(&[4], 0.9, &mut rng).map(|x| x + 1.0);
        let v = kl_diag_gaussian_value(&m1, &s1, &m2, &s2).map_err(|e| e.to_string())?;
        ensure(v >= 0.0, || format!("negative KL {v}"))?;
        let z = kl_diag_gaussian_value(&m1, &s1, &m1, &s1).map_err(|e| e.to_string())?;
        ensure(z == 0.0, || format!("KL of identical inputs {z}"))?;
    }
    Ok("nonnegative on 200 pairs, zero on identity".into())
}

fn fcp_scan() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let n = rng.gen_range(1..10);
        let frames: Vec<PlanFrame> = (0..n)
            .map(|_| PlanFrame {
                gt_3s: Some([0.0, 0.0]),
                ..PlanFrame::new([rng.gen_range(0.0..1.0), 0.0])
            })
            .collect();
        let first = frames.iter().position(|f| f.pred_3s[0] < 0.5).unwrap_or(n);
        let clip = Clip {
            id: None,
            command: Command::GoStraight,
            frames,
        };
        let got = fcp_clip(&clip, i, 0.5).map_err(|e| e.to_string())?;
        ensure(got == first, || {
            format!("clip {i}: product form {got}, scan {first}")
        })?;
    }
    Ok("product form matches the first-correct scan on 200 clips".into())
}

fn dataset_round_trip() -> Result<String, String> {
    let sc = SynthScenario {
        horizon: 3,
        ..SynthScenario::sanity_fixture(6)
    };
    let ds = generate_sequence(&sc).map_err(|e| e.to_string())?;
    let dir = std::env::temp_dir().join(format!("egoflow-selfcheck-{}", std::process::id()));
    let out = (|| {
        let m1 = write_dataset(&ds, &dir)?;
        let back = read_dataset(&dir)?;
        let m2 = write_dataset(&generate_sequence(&sc)?, &dir)?;
        Ok::<_, egoflow::Error>((m1, m2, back))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    let (m1, m2, back) = out.map_err(|e| e.to_string())?;
    ensure(back == ds, || "read(write(x)) differs from x".into())?;
    ensure(m1 == m2, || "same seed gave different manifests".into())?;
    Ok(format!("digest {}", m1.digest))
}

fn model_determinism(exec: Exec) -> Result<String, String> {
    let ds = generate_sequence(&SynthScenario {
        horizon: 3,
        ..SynthScenario::sanity_fixture(7)
    })
    .map_err(|e| e.to_string())?;
    let units = ds.flow_units(0).map_err(|e| e.to_string())?;
    let cfg = FlowConfig {
        horizon: 3,
        ..FlowConfig::default()
    };
    let model = FlowModel::new(cfg, FlowDims::of(&units[0]).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let ps = model.init(7).map_err(|e| e.to_string())?;
    let windows = vec![units];
    let a = egoflow::flow::train::evaluate(&model, &ps, &windows, Exec::Sequential)
        .map_err(|e| e.to_string())?;
    let b =
        egoflow::flow::train::evaluate(&model, &ps, &windows, exec).map_err(|e| e.to_string())?;
    ensure(a == b && a.total.is_finite(), || format!("{a:?} vs {b:?}"))?;
    Ok(format!("total loss {:.6} on both strategies", a.total))
}

pub fn run_all(exec: Exec) -> Vec<CheckResult> {
    vec![
        check("circle_fit", circle_fit),
        check("partition_size_anchor", size_anchor),
        check("tiling", tiling),
        check("gradients", gradients),
        check("kl", kl),
        check("fcp_scan", fcp_scan),
        check("dataset_round_trip", dataset_round_trip),
        check("model_determinism", || model_determinism(exec)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all(Exec::Parallel) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
