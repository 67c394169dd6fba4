//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//!     cargo test -p stvg-cli --test acceptance

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use stvg_core::fusion::{fuse, fuse_reverse, FusionError, GapPolicy};
use stvg_core::geometry::BBox;
use stvg_core::harness::oracle::{oracle_select_moment, oracle_tiou, oracle_viou};
use stvg_core::harness::synth::{synth_dataset, SynthParams};
use stvg_core::linking::{link_detections, link_videos, Detection, LinkParams};
use stvg_core::losses::{
    box_losses, contrastive_losses, giou_loss_term, guided_attention_loss, kl_temporal_loss, mmn_iou_loss,
    AttentionRow, SimilarityMatrix,
};
use stvg_core::metrics::{evaluate_dataset, tiou, viou, EvalConfig};
use stvg_core::moments::{
    candidate_count, decode_start_end, enumerate_candidates, moment_iou_targets, select_moment, ContrastiveNorm,
    MomentMap, TemporalDistributions,
};
use stvg_core::tubes::{ClipSpan, Segment, Tube};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    }};
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: "AC1",
            name: "fusion keeps the temporal extent",
            budget: Duration::from_secs(5),
            run: ac1,
        },
        Criterion {
            id: "AC2",
            name: "metrics match frame-enumeration oracles",
            budget: Duration::from_secs(10),
            run: ac2,
        },
        Criterion {
            id: "AC3",
            name: "fusion beats both sources on synthetic data",
            budget: Duration::from_secs(30),
            run: ac3,
        },
        Criterion {
            id: "AC4",
            name: "loss zero points and ranges",
            budget: Duration::from_secs(5),
            run: ac4,
        },
        Criterion {
            id: "AC5",
            name: "hand-derived scalar values",
            budget: Duration::from_secs(5),
            run: ac5,
        },
        Criterion {
            id: "AC6",
            name: "moment map candidates, selection and targets",
            budget: Duration::from_secs(30),
            run: ac6,
        },
        Criterion {
            id: "AC7",
            name: "linking recovers disjoint tracks deterministically",
            budget: Duration::from_secs(60),
            run: ac7,
        },
        Criterion {
            id: "AC8",
            name: "end-to-end CLI and manifests",
            budget: Duration::from_secs(120),
            run: ac8,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t0.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over budget of {:?}", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {} [{:.2}s] {}", c.id, c.name, elapsed.as_secs_f64(), detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..100.0);
    let y = rng.random_range(0.0..100.0);
    BBox::new(x, y, x + rng.random_range(1.0..50.0), y + rng.random_range(1.0..50.0))
}

fn random_segment(rng: &mut ChaCha8Rng) -> Segment {
    let s = rng.random_range(0..80);
    Segment::new(s, s + rng.random_range(0..40)).unwrap()
}

/// A full tube drifting around one base box.
fn random_tube(rng: &mut ChaCha8Rng, seg: Segment) -> Tube {
    let base = random_box(rng);
    let boxes: Vec<BBox> = seg
        .frames()
        .map(|_| base.translate(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)))
        .collect();
    Tube::from_boxes("v", seg.start(), boxes).unwrap()
}

fn ac1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    let mut refused = 0;
    for _ in 0..1000 {
        let t_seg = random_segment(&mut rng);
        let t = random_tube(&mut rng, t_seg);
        // half the spatial sources cover the temporal one, so fail succeeds sometimes
        let s_seg = if rng.random_bool(0.5) {
            Segment::new(t.segment.start().saturating_sub(3), t.segment.end() + 3).unwrap()
        } else {
            random_segment(&mut rng)
        };
        let s = random_tube(&mut rng, s_seg);
        let g = random_segment(&mut rng);
        let expected = tiou(&t.segment, &g).to_bits();
        for policy in GapPolicy::ALL {
            match fuse(&t, &s, policy) {
                Ok(f) => {
                    ensure!(tiou(&f.segment, &g).to_bits() == expected, "{policy}: tIoU changed");
                    checked += 1;
                }
                Err(e) => {
                    ensure!(policy == GapPolicy::Fail, "{policy} refused: {e}");
                    refused += 1;
                }
            }
        }
    }
    Ok(format!(
        "{checked} fused tubes bit-identical; fail policy refused {refused} gapped inputs"
    ))
}

fn ac2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let p_seg = random_segment(&mut rng);
        // keep most pairs overlapping
        let g_seg = if rng.random_bool(0.8) {
            let s = p_seg.start() + rng.random_range(0..=p_seg.end() - p_seg.start());
            Segment::new(s, s + rng.random_range(0..40)).unwrap()
        } else {
            random_segment(&mut rng)
        };
        let p = random_tube(&mut rng, p_seg);
        let mut g = random_tube(&mut rng, g_seg);
        if rng.random_bool(0.5) {
            // identical boxes where they overlap, so vIoU approaches tIoU
            for (f, b) in g.boxes.iter_mut() {
                if let Some(pb) = p.boxes.get(f) {
                    *b = *pb;
                }
            }
        }
        let v = viou(&p, &g).map_err(|e| e.to_string())?;
        let t = tiou(&p.segment, &g.segment);
        let dv = (v - oracle_viou(&p, &g)).abs();
        let dt = (t - oracle_tiou(&p.segment, &g.segment)).abs();
        worst = worst.max(dv).max(dt);
        ensure!(
            dv <= 1e-12 && dt <= 1e-12,
            "pair {k}: vIoU off by {dv:e}, tIoU off by {dt:e}"
        );
        ensure!(v <= t, "pair {k}: vIoU {v} > tIoU {t}");
    }
    Ok(format!("1000 pairs, max deviation {worst:.1e}"))
}

fn mean_viou(preds: &[Tube], gts: &[Tube]) -> Result<f64, String> {
    evaluate_dataset(preds, gts, &EvalConfig::default())
        .map(|r| r.mean_viou)
        .map_err(|e| e.to_string())
}

fn ac3() -> Outcome {
    let p = SynthParams::default();
    ensure!(p.n_videos >= 200, "profile has only {} videos", p.n_videos);
    let d = synth_dataset(2024, &p).map_err(|e| e.to_string())?;
    let a = mean_viou(&d.model_a, &d.gts)?;
    let b = mean_viou(&d.model_b, &d.gts)?;
    type FuseFn = fn(&Tube, &Tube, GapPolicy) -> Result<Tube, FusionError>;
    let pair = |t: &[Tube], s: &[Tube], f: FuseFn| -> Result<Vec<Tube>, String> {
        t.iter()
            .zip(s)
            .map(|(t, s)| f(t, s, GapPolicy::default()).map_err(|e| e.to_string()))
            .collect()
    };
    let fused = mean_viou(&pair(&d.model_a, &d.model_b, fuse)?, &d.gts)?;
    let reverse = mean_viou(&pair(&d.model_b, &d.model_a, fuse_reverse)?, &d.gts)?;
    let summary = format!(
        "A {a:.3}, B {b:.3}, fuse(A,B) {fused:.3}, fuse_reverse(B,A) {reverse:.3} over {} videos",
        p.n_videos
    );
    ensure!(fused > a && fused > b, "{summary}");
    ensure!(reverse < a.max(b), "{summary}");
    Ok(summary)
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 1e-9;

    let boxes: Vec<BBox> = (0..50).map(|_| random_box(&mut rng)).collect();
    let (l1, giou) = box_losses(&boxes, &boxes).map_err(|e| e.to_string())?;
    ensure!(
        l1.abs() <= tol && giou.abs() <= tol,
        "box losses at pred = gt: {l1}, {giou}"
    );

    let dist = TemporalDistributions::new(vec![0.1, 0.6, 0.3], vec![0.0, 0.2, 0.8]).map_err(|e| e.to_string())?;
    let kl = kl_temporal_loss(&dist, &dist).map_err(|e| e.to_string())?;
    ensure!(kl.abs() <= tol, "KL at pred = target: {kl}");

    let row = AttentionRow {
        values: vec![0.0, 0.0, 0.4, 0.6, 0.0],
        start: 3,
        end: 4,
    };
    let att = guided_attention_loss(&row).map_err(|e| e.to_string())?;
    ensure!(att.abs() <= tol, "attention without leaks: {att}");

    for y in [0.0, 1.0] {
        let l = mmn_iou_loss(&[y], &[y]).map_err(|e| e.to_string())?;
        ensure!(l.abs() <= tol, "iou loss at p = y = {y}: {l}");
    }
    let ys = [0.0, 1.0, 1.0, 0.0];
    let l = mmn_iou_loss(&ys, &ys).map_err(|e| e.to_string())?;
    ensure!(l.abs() <= tol, "iou loss on a binary target vector: {l}");

    let mut max_giou: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let g = giou_loss_term(&a, &b).map_err(|e| e.to_string())?;
        ensure!((0.0..2.0).contains(&g), "giou loss {g} outside [0, 2) for {a:?} {b:?}");
        max_giou = max_giou.max(g);
    }

    let s = SimilarityMatrix::new(vec![vec![20.0, 0.0], vec![0.0, 20.0]]).map_err(|e| e.to_string())?;
    let (video, sentence) = contrastive_losses(&s);
    ensure!(
        video < 1e-8 && sentence < 1e-8,
        "contrastive at diagonal +20: {video:e}, {sentence:e}"
    );

    Ok(format!(
        "all zero points within {tol:e}; max GIoU loss {max_giou:.4}; contrastive {video:.1e}"
    ))
}

fn ac5() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let g =
        giou_loss_term(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 1.0, 3.0, 3.0)).map_err(|e| e.to_string())?;
    ensure!((g - 68.0 / 63.0).abs() <= 1e-12, "giou loss {g} != 68/63");

    let bce = mmn_iou_loss(&[0.5], &[1.0]).map_err(|e| e.to_string())?;
    ensure!((bce - ln2).abs() <= 1e-12, "iou loss {bce} != ln 2");

    let s = SimilarityMatrix::new(vec![vec![0.0; 2]; 2]).map_err(|e| e.to_string())?;
    let (video, sentence) = contrastive_losses(&s);
    ensure!(
        (video - 2.0 * ln2).abs() <= 1e-12 && (sentence - 2.0 * ln2).abs() <= 1e-12,
        "contrastive all-zero: {video}, {sentence}"
    );

    let leak = AttentionRow {
        values: vec![0.5, 1.0, 0.0],
        start: 2,
        end: 2,
    };
    let att = guided_attention_loss(&leak).map_err(|e| e.to_string())?;
    ensure!((att - ln2).abs() <= 1e-12, "single leak {att} != ln 2");

    let d = TemporalDistributions::new(vec![0.1, 0.7, 0.2], vec![0.6, 0.1, 0.3]).map_err(|e| e.to_string())?;
    let span = decode_start_end(&d).span;
    ensure!(span == ClipSpan::new(1, 2), "decoded {span:?}");
    Ok("5 values exact to 1e-12".into())
}

fn ac6() -> Outcome {
    for n in 1..64 {
        let c = enumerate_candidates(n).map_err(|e| e.to_string())?;
        ensure!(
            c.len() == n * (n + 1) / 2 && candidate_count(n) == c.len(),
            "n = {n}: {} candidates",
            c.len()
        );
    }
    ensure!(candidate_count(16) == 136, "16 clips give {}", candidate_count(16));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..200 {
        let n = rng.random_range(1..=24);
        let c = candidate_count(n);
        // coarse values force ties, which exercises the tie rules
        let iou: Vec<f64> = (0..c).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
        let con: Vec<f64> = (0..c).map(|_| f64::from(rng.random_range(-3..4i8))).collect();
        let map = MomentMap::new(n, iou, con).map_err(|e| e.to_string())?;
        for norm in [ContrastiveNorm::Sigmoid, ContrastiveNorm::Raw] {
            let got = select_moment(&map, norm).map_err(|e| e.to_string())?;
            let want = oracle_select_moment(&map, norm).ok_or("oracle found nothing")?;
            ensure!(
                got.0 == want.0 && (got.1 - want.1).abs() <= 1e-12,
                "map {k} ({norm:?}): {got:?} vs oracle {want:?}"
            );
        }
    }

    for n in 1..=24 {
        let spans = enumerate_candidates(n).map_err(|e| e.to_string())?;
        for gt in &spans {
            let targets = moment_iou_targets(n, *gt).map_err(|e| e.to_string())?;
            let peaks: Vec<&ClipSpan> = spans
                .iter()
                .zip(&targets)
                .filter(|(_, y)| **y == 1.0)
                .map(|(s, _)| s)
                .collect();
            ensure!(peaks == vec![gt], "n = {n}, gt {gt:?}: peaks at {peaks:?}");
        }
    }
    Ok("counts for n in 1..64, 200 random maps x 2 norms, unique peaks for every gt span up to n = 24".into())
}

fn boxes_of(t: &Tube) -> Vec<BBox> {
    t.boxes.values().copied().collect()
}

fn ac7() -> Outcome {
    let params = LinkParams::default();
    let p = SynthParams {
        n_videos: 4,
        ..SynthParams::noiseless()
    };
    let mut videos = 0;
    for seed in 0..50 {
        let d = synth_dataset(seed, &p).map_err(|e| e.to_string())?;
        for (id, dets) in &d.detections {
            // the synthesizer emits target then distractor on every frame
            let track_a: Vec<BBox> = dets.iter().step_by(2).map(|d| d.bbox).collect();
            let track_b: Vec<BBox> = dets.iter().skip(1).step_by(2).map(|d| d.bbox).collect();
            let tubes = link_detections(id, dets, &params).map_err(|e| e.to_string())?;
            ensure!(tubes.len() == 2, "seed {seed} {id}: {} tubes", tubes.len());
            let got = [boxes_of(&tubes[0].tube), boxes_of(&tubes[1].tube)];
            let exact = (got[0] == track_a && got[1] == track_b) || (got[0] == track_b && got[1] == track_a);
            ensure!(exact, "seed {seed} {id}: tubes differ from the input tracks");
            videos += 1;
        }

        let again = link_videos(&d.detections, &params);
        for ((id, dets), par) in d.detections.iter().zip(again) {
            let seq = link_detections(id, dets, &params).map_err(|e| e.to_string())?;
            ensure!(
                par.map_err(|e| e.to_string())? == seq,
                "seed {seed} {id}: parallel and sequential differ"
            );
        }
    }

    // shuffled score ties across repeated runs
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dets: Vec<Detection> = (0..400)
        .map(|_| {
            let f = rng.random_range(0..40);
            let x = f64::from(rng.random_range(0..6u8)) * 10.0;
            Detection::new(
                f,
                BBox::new(x, 0.0, x + 25.0, 30.0),
                f64::from(rng.random_range(0..3u8)) / 2.0,
            )
        })
        .collect();
    let first = link_detections("v", &dets, &params).map_err(|e| e.to_string())?;
    for _ in 0..10 {
        ensure!(
            link_detections("v", &dets, &params).map_err(|e| e.to_string())? == first,
            "repeat run differs"
        );
    }
    Ok(format!(
        "{videos} videos over 50 seeds recovered box-for-box; repeat and parallel runs identical"
    ))
}

fn stvg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stvg"))
        .args(args)
        .env_remove("STVG_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "stvg {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Structural equality with numbers compared to `tol`.
fn close(a: &Value, b: &Value, tol: f64, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            ensure!((x - y).abs() <= tol, "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            ensure!(x.len() == y.len(), "{path}: length {} vs {}", x.len(), y.len());
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                close(p, q, tol, &format!("{path}[{i}]"))?;
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            ensure!(x.keys().eq(y.keys()), "{path}: keys differ");
            for (k, p) in x {
                close(p, &y[k], tol, &format!("{path}.{k}"))?;
            }
        }
        _ => ensure!(a == b, "{path}: {a} vs {b}"),
    }
    Ok(())
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/e2e")
        .join(name)
}

fn ac8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let data = d.join("data");
    stvg(&[
        "synth",
        "--seed",
        "7",
        "--params",
        &s(&fixture("synth.toml")),
        "--out",
        &s(&data),
    ])?;
    let fused = d.join("fused.jsonl");
    stvg(&[
        "fuse",
        "--temporal",
        &s(&data.join("model_a.jsonl")),
        "--spatial",
        &s(&data.join("model_b.jsonl")),
        "--policy",
        "nearest",
        "-o",
        &s(&fused),
    ])?;
    let report = d.join("report.json");
    stvg(&[
        "eval",
        "--gt",
        &s(&data.join("gt.jsonl")),
        "--pred",
        &s(&fused),
        "--thresholds",
        "0.3,0.5",
        "--report",
        &s(&report),
    ])?;
    let read = |p: &Path| -> Result<Value, String> {
        serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    close(
        &read(&report)?,
        &read(&fixture("reference_report.json"))?,
        1e-9,
        "report",
    )?;

    let releases: [(&str, &[(&str, u64)]); 2] = [
        ("2.1", &[("train", 10131), ("val", 3482), ("test", 2913)]),
        ("1.0", &[("train", 4500), ("test", 1160)]),
    ];
    for (version, splits) in releases {
        let split_dir = d.join(format!("splits-{version}"));
        let split_arg: Vec<String> = splits.iter().map(|(k, n)| format!("{k}={n}")).collect();
        stvg(&[
            "synth",
            "--seed",
            "1",
            "--frames",
            "2",
            "--splits",
            &split_arg.join(","),
            "--out",
            &s(&split_dir),
        ])?;
        stvg(&["validate", "--manifest", version, "--data", &s(&split_dir)])?;
        // one record short must be rejected
        let counts: BTreeMap<&str, u64> = splits.iter().copied().collect();
        let test = split_dir.join("test.jsonl");
        let text = std::fs::read_to_string(&test).map_err(|e| e.to_string())?;
        let trimmed: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        std::fs::write(&test, trimmed).map_err(|e| e.to_string())?;
        ensure!(
            stvg(&["validate", "--manifest", version, "--data", &s(&split_dir)]).is_err(),
            "v{version} accepted {} test records",
            counts["test"] - 1
        );
    }
    Ok("report matches reference to 1e-9; v2.1 and v1.0 manifests accept matching counts, reject a short split".into())
}
