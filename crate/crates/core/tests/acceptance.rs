//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use egotime_core::annotation::{cohens_kappa, ActivityLabel, Axis, ContextLabel, Label, LabelStore};
use egotime_core::audits::{conditional_rates, integrity_check, label_distribution, within_window_burden};
use egotime_core::corpus::{build_sampling_plan, make_windows, Frame, MemorySource, VideoSource};
use egotime_core::features::{
    extract_window, farneback_flow, FlowParams, FrameEncoder, HashEncoder, Pooling, RepresentationSpec,
};
use egotime_core::models::{loss_and_grad, video_level_split, SoftmaxClassifier, TrainConfig};
use egotime_core::rng::SeededRng;
use egotime_core::synthetic::{generate_corpus, SyntheticSpec};
use egotime_core::timeline::{
    evaluate, generate_timeline, preset_run, run_experiment_grid, timeline_to_string, GridInput, Pathway,
    TimelineHeader,
};

type Outcome = Result<String, String>;
/// Label, count and percent of one class.
type ExpectedShare = (&'static str, u64, f64);
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Independent half-up percent at `dec` decimals from integer counts.
fn percent_oracle(count: u64, total: u64, dec: u32) -> f64 {
    let scale = 10u64.pow(dec) * 100;
    let units = (2 * count * scale + total) / (2 * total);
    units as f64 / 10f64.powi(dec as i32)
}

fn criterion_1() -> Outcome {
    let (store, _) = common::audit_fixture();
    let pass = store.pass(1);
    let expected: [(Axis, &[ExpectedShare]); 2] = [
        (
            Axis::Context,
            &[("OUTDOOR", 207, 48.36), ("LOW_VIS", 82, 19.16), ("PATROL_VEHICLE", 71, 16.59), ("INDOOR", 68, 15.89)],
        ),
        (
            Axis::Activity,
            &[("ROUTINE", 346, 80.84), ("HIGH_ACTIVITY", 53, 12.38), ("FOOT_PURSUIT", 24, 5.61), ("UNKNOWN", 5, 1.17)],
        ),
    ];
    let mut shown = Vec::new();
    for (axis, rows) in expected {
        let d = label_distribution(&pass, axis).map_err(|e| e.to_string())?;
        for &(label, count, pct) in rows {
            let share = d.share(label).ok_or(format!("{label} missing"))?;
            ensure(share.count == count, || format!("{label}: count {} != {count}", share.count))?;
            ensure(share.percent == pct, || format!("{label}: {} != {pct}", share.percent))?;
            ensure(percent_oracle(count, d.total, 2) == pct, || format!("{label}: oracle disagrees"))?;
            shown.push(format!("{pct:.2}"));
        }
    }
    Ok(shown.join("/"))
}

fn criterion_2() -> Outcome {
    let (store, inventory) = common::audit_fixture();
    let rows: Vec<_> = store.iter().map(|a| a.to_raw()).collect();
    let integrity = integrity_check(&rows, &inventory);
    ensure(integrity.passed && integrity.unique_keys == 428, || format!("integrity {integrity:?}"))?;
    let b = within_window_burden(&store.pass(1));
    ensure((b.total, b.activity_only, b.context_only, b.both) == (61, 36, 17, 8), || format!("{b:?}"))?;
    let got = [b.percent_flagged, b.percent_activity_only, b.percent_context_only, b.percent_both];
    let want = [14.3, 59.0, 27.9, 13.1];
    for (g, w) in got.iter().zip(want) {
        ensure(*g == Some(w), || format!("burden {got:?} != {want:?}"))?;
    }
    ensure(percent_oracle(61, 428, 1) == 14.3 && percent_oracle(36, 61, 1) == 59.0, || "oracle".into())?;
    Ok("14.3% / 59.0% / 27.9% / 13.1%".into())
}

fn criterion_3() -> Outcome {
    let (store, _) = common::audit_fixture();
    let rates = conditional_rates(&store.pass(1));
    let row: Vec<f64> =
        [ActivityLabel::Routine, ActivityLabel::HighActivity, ActivityLabel::FootPursuit, ActivityLabel::Unknown]
            .iter()
            .map(|&a| (rates.rate(ContextLabel::PatrolVehicle, a) * 1000.0 + 0.5).floor() / 1000.0)
            .collect();
    ensure(row == [0.958, 0.042, 0.0, 0.0], || format!("row {row:?}"))?;
    // brute-force count over the fixture
    let pv: Vec<_> = store.pass(1).into_iter().filter(|a| a.context == ContextLabel::PatrolVehicle).collect();
    let routine = pv.iter().filter(|a| a.activity == ActivityLabel::Routine).count();
    ensure(pv.len() == 71 && routine == 68, || "fixture counts".into())?;
    Ok(format!("{row:?}"))
}

fn kappa_oracle(a: &[usize], b: &[usize], c: usize) -> f64 {
    let n = a.len() as f64;
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pe: f64 = (0..c)
        .map(|k| {
            (a.iter().filter(|&&x| x == k).count() as f64 / n) * (b.iter().filter(|&&x| x == k).count() as f64 / n)
        })
        .sum();
    (po - pe) / (1.0 - pe)
}

fn criterion_4() -> Outcome {
    let same = [0, 1, 2, 1, 0, 3];
    let k1 = cohens_kappa(&same, &same, 4).map_err(|e| e.to_string())?;
    ensure(k1 == 1.0, || format!("identical κ {k1}"))?;
    let (a, b) = ([0, 0, 1, 1], [0, 1, 1, 1]);
    let k2 = cohens_kappa(&a, &b, 2).map_err(|e| e.to_string())?;
    ensure((k2 - 0.5).abs() <= 1e-9 && (kappa_oracle(&a, &b, 2) - 0.5).abs() <= 1e-9, || format!("κ {k2}"))?;
    let k3 = cohens_kappa(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).map_err(|e| e.to_string())?;
    ensure(k3.abs() <= 1e-9, || format!("κ {k3}"))?;
    Ok(format!("κ = {k1}, {k2:.9}, {k3:.9}"))
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    let instances = 25;
    for _ in 0..instances {
        let c = 2 + rng.below(3) as usize;
        let d = 1 + rng.below(10) as usize;
        let n = 3 + rng.below(10) as usize;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| 4.0 * rng.unit_f64() - 2.0).collect()).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + rng.unit_f64()).collect();
        let lambda = rng.unit_f64() * 0.1;
        let theta: Vec<f64> = (0..c * (d + 1)).map(|_| rng.unit_f64() - 0.5).collect();
        let (_, grad) = loss_and_grad(&theta, &x, &y, &w, c, lambda);
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut p = theta.clone();
            p[i] += h;
            let up = loss_and_grad(&p, &x, &y, &w, c, lambda).0;
            p[i] -= 2.0 * h;
            let down = loss_and_grad(&p, &x, &y, &w, c, lambda).0;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{instances} instances, max relative error {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let params = FlowParams::preset("F4").ok_or("F4 preset")?;
    let a = common::texture(320, 180, 0.0, 0.0, 17);
    let b = common::texture(320, 180, 3.0, 0.0, 17);
    let (u, v) = farneback_flow(&a, &b, &params).map_err(|e| e.to_string())?.mean_flow();
    ensure((u - 3.0).abs() <= 0.6 && v.abs() <= 0.6, || format!("mean flow ({u:.3}, {v:.3})"))?;
    let still = farneback_flow(&a, &a, &params).map_err(|e| e.to_string())?;
    let mag = still.magnitudes().sum::<f64>() / still.u.len() as f64;
    ensure(mag < 0.05, || format!("identical frames |u| {mag}"))?;
    Ok(format!("shift (3,0) -> ({u:.3}, {v:.3}); identical |u| = {mag:.4}"))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec { n_videos: 16, windows_per_video: 8, seed: 11, ..SyntheticSpec::default() };
    let corpus = generate_corpus(dir.path(), &spec).map_err(|e| e.to_string())?;
    let videos = common::load_videos(&corpus);
    let mut store = LabelStore::new();
    for a in corpus.annotations(1) {
        store.insert(a);
    }
    let mut encoders: BTreeMap<String, Arc<dyn FrameEncoder>> = BTreeMap::new();
    encoders.insert("ViT-B/32".into(), Arc::new(HashEncoder::new("ViT-B/32", 512).map_err(|e| e.to_string())?));
    let input = GridInput { videos: &videos, labels: &store, pass_id: 1, encoders: &encoders };
    let grid: Vec<_> = ["E1", "F1"]
        .iter()
        .map(|id| {
            let mut run = preset_run(id).unwrap();
            run.test_fraction = 0.25;
            run.split_seed = 5;
            run
        })
        .collect();
    let runs = run_experiment_grid(&grid, &input).map_err(|e| e.to_string())?;
    ensure(runs[0].split == runs[1].split, || "runs used different splits".into())?;
    let (ctx, act) = (&runs[0].report, &runs[1].report);
    ensure(ctx.per_class.len() == 4 && act.per_class.len() == 4, || "label spaces".into())?;
    ensure(ctx.accuracy >= 0.95 && act.accuracy >= 0.95, || {
        format!("context accuracy {:.4}, activity accuracy {:.4}", ctx.accuracy, act.accuracy)
    })?;
    Ok(format!(
        "{} test videos / {} windows: context acc {:.4} (macro-F1 {:.4}), activity acc {:.4} (macro-F1 {:.4})",
        runs[0].split.test_video_ids.len(),
        ctx.n_test,
        ctx.accuracy,
        ctx.macro_f1,
        act.accuracy,
        act.macro_f1
    ))
}

/// Small models trained on a 233.43 s fixture with alternating scenes.
struct AlgorithmFixture {
    source: MemorySource,
    encoder: HashEncoder,
    context: SoftmaxClassifier,
    activity: SoftmaxClassifier,
}

fn algorithm_fixture() -> Result<AlgorithmFixture, String> {
    let fps = 1.0;
    let n = 233;
    let frames: Vec<Option<Frame>> = (0..n)
        .map(|i| {
            let window = i / 10;
            let base: u8 = [40, 120, 200][window % 3];
            let shift = if window % 2 == 0 { 0 } else { i % 10 };
            let data = (0..32 * 18).map(|p| base.wrapping_add((((p % 32 + shift) * 7) % 23) as u8)).collect();
            Some(Frame::gray(32, 18, data).unwrap())
        })
        .collect();
    let source = MemorySource::new("fixture", fps, frames).with_duration(233.43);
    let windows = make_windows(source.record(), 10.0).map_err(|e| e.to_string())?;
    let encoder = HashEncoder::new("ViT-B/32", 32).map_err(|e| e.to_string())?;
    let ctx_spec = RepresentationSpec::Clip { encoder_id: "ViT-B/32".into(), k: 5, pooling: Pooling::Mean };
    let act_spec = RepresentationSpec::Flow {
        k: 5,
        flow: FlowParams { resize_w: 32, resize_h: 18, ..FlowParams::preset("F1").unwrap() },
    };
    let mut xc = Vec::new();
    let mut xa = Vec::new();
    let mut yc = Vec::new();
    let mut ya = Vec::new();
    for w in &windows {
        let i = w.index as usize;
        xc.push(extract_window(&ctx_spec, w, &source, Some(&encoder)).map_err(|e| e.to_string())?);
        yc.push(["PATROL_VEHICLE", "INDOOR", "OUTDOOR"][i % 3].to_string());
        xa.push(extract_window(&act_spec, w, &source, None).map_err(|e| e.to_string())?);
        ya.push(if i.is_multiple_of(2) { "ROUTINE" } else { "FOOT_PURSUIT" }.to_string());
    }
    // weak regularization keeps some predictions below a high threshold
    let cfg = TrainConfig { l2_lambda: 0.5, ..TrainConfig::default() };
    let context = SoftmaxClassifier::train(Axis::Context, &xc, &yc, &cfg)
        .map_err(|e| e.to_string())?
        .with_representation(ctx_spec, None);
    let activity = SoftmaxClassifier::train(Axis::Activity, &xa, &ya, &cfg)
        .map_err(|e| e.to_string())?
        .with_representation(act_spec, None);
    Ok(AlgorithmFixture { source, encoder, context, activity })
}

fn criterion_8() -> Outcome {
    let fx = algorithm_fixture()?;
    let run = |tc: f64, ta: f64| {
        generate_timeline(
            &fx.source,
            Pathway { model: &fx.context, encoder: Some(&fx.encoder), tau: tc },
            Pathway { model: &fx.activity, encoder: None, tau: ta },
            10.0,
        )
        .map_err(|e| e.to_string())
    };
    let base = run(0.0, 0.0)?;
    ensure(base.len() == 23, || format!("{} records", base.len()))?;
    ensure(base[0].context_transition && base[0].activity_transition, || "record 0 flags".into())?;
    ensure((base[22].start_time, base[22].end_time) == (220.0, 230.0), || "last window bounds".into())?;
    for (i, pair) in base.windows(2).enumerate() {
        ensure(pair[1].context_transition == (pair[0].context != pair[1].context), || {
            format!("context flag at {}", i + 1)
        })?;
        ensure(pair[1].activity_transition == (pair[0].activity != pair[1].activity), || {
            format!("activity flag at {}", i + 1)
        })?;
    }
    let windows = make_windows(fx.source.record(), 10.0).map_err(|e| e.to_string())?;
    for (w, r) in windows.iter().zip(&base) {
        let spec = fx.context.representation.as_ref().unwrap();
        let x = fx.context.prepare(&extract_window(spec, w, &fx.source, Some(&fx.encoder)).unwrap()).unwrap();
        let probs = fx.context.predict_prob(&x).unwrap();
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        ensure(fx.context.class_order[best] == r.context.as_str(), || format!("τ=0 label differs at {}", w.key))?;
    }
    let mut counts = Vec::new();
    for tau in [0.0, 0.4, 0.6, 0.8, 0.9, 0.99, 1.0] {
        let t = run(tau, tau)?;
        let fallback = t.iter().filter(|r| r.context == ContextLabel::LowVis).count()
            + t.iter().filter(|r| r.activity == ActivityLabel::Unknown).count();
        // paths are independent: the context threshold never alters activity
        let only_ctx = run(tau, 0.0)?;
        ensure(
            only_ctx.iter().zip(&base).all(|(a, b)| a.activity == b.activity && a.activity_score == b.activity_score),
            || format!("context threshold {tau} changed activity fields"),
        )?;
        counts.push(fallback);
    }
    ensure(counts.windows(2).all(|p| p[0] <= p[1]), || format!("fallback counts {counts:?}"))?;
    ensure(counts[0] == 0 && counts.last() > counts.first(), || format!("fallback counts {counts:?}"))?;
    Ok(format!("23 records; fallback counts over rising τ {counts:?}"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec { n_videos: 4, windows_per_video: 3, width: 48, height: 27, ..SyntheticSpec::default() };
    let corpus = generate_corpus(dir.path(), &spec).map_err(|e| e.to_string())?;
    let videos = common::load_videos(&corpus);

    let plan = |seed| serde_json::to_vec(&build_sampling_plan(&videos[0].windows, 2, 1, seed)).unwrap();
    ensure(plan(42) == plan(42), || "sampling plans differ".into())?;
    let ids: Vec<String> = corpus.videos.iter().map(|v| v.video_id.clone()).collect();
    let split = |seed| serde_json::to_vec(&video_level_split(&ids, 0.25, seed).unwrap()).unwrap();
    ensure(split(3) == split(3), || "splits differ".into())?;

    let mut store = LabelStore::new();
    for a in corpus.annotations(1) {
        store.insert(a);
    }
    let mut encoders: BTreeMap<String, Arc<dyn FrameEncoder>> = BTreeMap::new();
    encoders.insert("ViT-B/32".into(), Arc::new(HashEncoder::new("ViT-B/32", 64).unwrap()));
    let input = GridInput { videos: &videos, labels: &store, pass_id: 1, encoders: &encoders };
    let grid: Vec<_> = ["E2", "A3"].iter().map(|id| preset_run(id).unwrap()).collect();
    let train = || -> Result<Vec<(Vec<u8>, SoftmaxClassifier)>, String> {
        let runs = run_experiment_grid(&grid, &input).map_err(|e| e.to_string())?;
        Ok(runs.into_iter().map(|r| (serde_json::to_vec(&r.model).unwrap(), r.model)).collect())
    };
    let (first, second) = (train()?, train()?);
    ensure(first.iter().zip(&second).all(|(a, b)| a.0 == b.0), || "trained weights differ".into())?;

    let enc = encoders["ViT-B/32"].clone();
    let timeline = |models: &[(Vec<u8>, SoftmaxClassifier)]| -> Result<String, String> {
        let (ctx, act) = (&models[0].1, &models[1].1);
        let source: &dyn VideoSource = videos[1].source.as_ref();
        let recs = generate_timeline(
            source,
            Pathway { model: ctx, encoder: Some(enc.as_ref()), tau: 0.3 },
            Pathway { model: act, encoder: Some(enc.as_ref()), tau: 0.3 },
            10.0,
        )
        .map_err(|e| e.to_string())?;
        let header =
            TimelineHeader::new(&source.record().video_id, 10.0, "E2+A3", ctx, act).map_err(|e| e.to_string())?;
        timeline_to_string(&header, &recs).map_err(|e| e.to_string())
    };
    let (t1, t2) = (timeline(&first)?, timeline(&second)?);
    ensure(t1 == t2, || "timelines differ".into())?;
    Ok(format!(
        "plans, splits, {} models and a {}-line timeline reproduced byte for byte",
        first.len(),
        t1.lines().count()
    ))
}

fn criterion_10() -> Outcome {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let space = s(&["ROUTINE", "HIGH_ACTIVITY", "FOOT_PURSUIT", "UNKNOWN"]);
    let r = evaluate(
        &s(&["ROUTINE", "ROUTINE", "ROUTINE", "HIGH_ACTIVITY"]),
        &s(&["ROUTINE", "ROUTINE", "HIGH_ACTIVITY", "HIGH_ACTIVITY"]),
        &space,
    )
    .map_err(|e| e.to_string())?;
    ensure(r.accuracy == 0.75, || format!("accuracy {}", r.accuracy))?;
    ensure((r.macro_f1 - 0.3667).abs() <= 1e-4, || format!("macro-F1 {}", r.macro_f1))?;
    ensure(r.per_class[2].f1 == 0.0 && r.per_class[3].f1 == 0.0, || "absent classes must score 0".into())?;
    Ok(format!("accuracy {:.2}, macro-F1 {:.4}", r.accuracy, r.macro_f1))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("label distribution percents", criterion_1, Duration::from_secs(1)),
        ("within-window transition burden", criterion_2, Duration::from_secs(1)),
        ("conditional activity rates", criterion_3, Duration::from_secs(1)),
        ("Cohen's kappa oracles", criterion_4, Duration::from_secs(1)),
        ("softmax gradient check", criterion_5, Duration::from_secs(10)),
        ("optical flow translation", criterion_6, Duration::from_secs(30)),
        ("end-to-end synthetic corpus", criterion_7, Duration::from_secs(300)),
        ("timeline generator conformance", criterion_8, Duration::from_secs(60)),
        ("determinism", criterion_9, Duration::from_secs(120)),
        ("macro-F1 convention", criterion_10, Duration::from_secs(1)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}: {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {label} ({elapsed:.2?}) {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {label} ({elapsed:.2?}) {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
