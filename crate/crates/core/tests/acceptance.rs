//! End-to-end acceptance run: one `PASS`/`FAIL` line per criterion.
//!
//! The exit status is non-zero on any failure only when
//! `ACCEPTANCE_STRICT=1`; otherwise the lines are the report.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use softcam::io::{self, Provenance};
use softcam::metrics::{
    activation_precision, activation_sensitivity, audc, deletion_curve, random_patch_baseline, random_patch_order,
    topk_localization_precision, PatchGrid,
};
use softcam::model::{BackboneConfig, BlockConfig, HeadKind, HeadPreset, InputShape, ModelBundle, ModelConfig};
use softcam::saliency::{cam, explain, softcam_evidence, ExplainOptions, MethodId};
use softcam::synth::{generate_dataset, Dataset, Sample, SynthConfig};
use softcam::trainer::{evaluate, sweep_lambda_models, train, L2Mode, TrainConfig};
use softcam::Tensor;

/// Training epochs for the synthetic-task models.
const EPOCHS: usize = 5;
/// Candidate ℓ1 strengths for the sparse model; the sweep rule picks one.
const SPARSE_GRID: [(f64, f64); 4] = [(0.0, 0.0), (1e-5, 0.0), (3e-5, 0.0), (1e-4, 0.0)];
const RIDGE_LAMBDA2: f64 = 1e-3;
const K: usize = 10;
const PATCH: usize = 8;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn report(out: &mut Vec<Outcome>, id: &'static str, started: Instant, pass: bool, detail: String) {
    let o = Outcome {
        id,
        pass,
        detail,
        elapsed: started.elapsed(),
    };
    println!(
        "{} {} ({:.1}s): {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    out.push(o);
}

fn random_single_fc_config(r: &mut impl Rng, seed: u64) -> ModelConfig {
    let size = [8, 12, 16][r.random_range(0..3)];
    let blocks = (0..r.random_range(1..=2)).map(|_| BlockConfig::new(r.random_range(2..=8))).collect();
    let backbone = BackboneConfig {
        input: InputShape {
            channels: r.random_range(1..=3),
            height: size,
            width: size,
        },
        blocks,
        seed,
    };
    ModelConfig::new(backbone, r.random_range(2..=5), HeadKind::BlackBox, HeadPreset::ResnetStyle)
}

fn a1(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut r = rng(2024);
    let (mut logit_gap, mut cam_gap) = (0.0f32, 0.0f32);
    for m in 0..50u64 {
        let bb = ModelBundle::init(random_single_fc_config(&mut r, m)).unwrap();
        let sc = bb.to_softcam().unwrap();
        let [c, h, w] = bb.input_shape();
        for _ in 0..10 {
            let x = random_tensor(&[c, h, w], &mut r);
            let (a, b) = (bb.predict(&x).unwrap(), sc.predict(&x).unwrap());
            for (u, v) in a.logits.data().iter().zip(b.logits.data()) {
                logit_gap = logit_gap.max((u - v).abs());
            }
            for class in 0..bb.classes() {
                let cm = cam(&bb, &x, class).unwrap();
                let ev = softcam_evidence(&sc, &x, class).unwrap();
                for (u, v) in cm.values().data().iter().zip(ev.values().data()) {
                    cam_gap = cam_gap.max((u - v).abs());
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = logit_gap <= 1e-5 && cam_gap <= 1e-5 && elapsed < Duration::from_secs(10);
    report(out, "A1", t, pass, format!("max logit gap {logit_gap:.2e}, max CAM-evidence gap {cam_gap:.2e} over 50 models x 10 inputs"));
}

fn a2(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut worst = ("", 0.0f64);
    for seed in 0..20 {
        for (name, err) in primitive_errors(seed) {
            if err > worst.1 {
                worst = (name, err);
            }
        }
    }
    let mut ig_worst = 0.0f64;
    for seed in 0..10u64 {
        let model = ModelBundle::init(small_model_config(HeadKind::BlackBox, HeadPreset::ResnetStyle, 2, seed)).unwrap();
        let x = random_tensor(&[2, 8, 8], &mut rng(100 + seed));
        let baseline = Tensor::zeros(x.shape());
        let attr = softcam::saliency::integrated_gradients_attributions(&model, &x, &baseline, 0, 128).unwrap();
        let fx = model.predict(&x).unwrap().logits.data()[0] as f64;
        let f0 = model.predict(&baseline).unwrap().logits.data()[0] as f64;
        let total: f64 = attr.data().iter().map(|&v| v as f64).sum();
        ig_worst = ig_worst.max((total - (fx - f0)).abs() / (fx - f0).abs());
    }
    let pass = worst.1 <= FD_TOL && ig_worst <= 0.01 && t.elapsed() < Duration::from_secs(60);
    report(
        out,
        "A2",
        t,
        pass,
        format!("worst finite-difference error {:.2e} ({}) over 20 seeds, IG completeness error {ig_worst:.2e} at m=128", worst.1, worst.0),
    );
}

fn a7(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut r = rng(77);
    let mut mismatches = 0;
    let fixtures = 1200;
    for i in 0..fixtures {
        let map = lattice_map(4, 4, &mut r);
        let mask = random_mask(4, 4, 0.3, &mut r);
        let p = 1 + i % 3;
        let k = 1 + r.random_range(0..6);
        let ok = activation_precision(&map, &mask).unwrap().value == brute_ap(&map, &mask)
            && activation_sensitivity(&map, &mask).unwrap() == brute_as(&map, &mask)
            && topk_localization_precision(&map, &mask, k, p).unwrap().precision == brute_topk(&map, &mask, k, p);
        let c0 = r.random_range(0.05..1.0);
        let conf: Vec<f64> = (0..1 + i % 16).map(|_| r.random_range(0.0..1.0)).collect();
        let mut points = vec![(0, c0)];
        points.extend(conf.iter().enumerate().map(|(t, &c)| (t + 1, c)));
        let curve = softcam::metrics::DeletionCurve { class: 0, c0, points };
        if !ok || audc(&curve) != brute_audc(c0, &conf) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0 && t.elapsed() < Duration::from_secs(10);
    report(out, "A7", t, pass, format!("{mismatches} mismatches over {fixtures} exhaustive 4x4 fixtures (AP, AS, top-k, AUDC)"));
}

fn a8(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut problems = Vec::new();
    let mut r = rng(88);
    for rank in 0..4 {
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..5)).collect();
        let x = random_tensor(&shape, &mut r);
        let bytes = io::encode_tensor(&x);
        let back = io::decode_tensor(&bytes).unwrap();
        if back.shape() != x.shape() || back.data().iter().zip(x.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            problems.push(format!("tensor rank {rank} round trip"));
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    let pipeline = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let dir = tmp.path().join(tag);
        let cfg = SynthConfig {
            size: 32,
            samples: 80,
            radius: [2.0, 4.0],
            seed: 8,
            ..SynthConfig::binary()
        };
        let ds = generate_dataset(&cfg).unwrap();
        io::save_dataset(dir.join("data"), &ds, &cfg).unwrap();
        let (ds, _) = io::load_dataset(dir.join("data")).unwrap();
        let backbone = BackboneConfig {
            input: InputShape {
                channels: 1,
                height: 32,
                width: 32,
            },
            blocks: vec![BlockConfig::new(4), BlockConfig::new(8)],
            seed: 3,
        };
        let mc = ModelConfig::new(backbone, 2, HeadKind::SoftCam, HeadPreset::ResnetStyle);
        let tc = TrainConfig {
            epochs: 1,
            lambda1: 1e-4,
            seed: 4,
            ..TrainConfig::default()
        };
        let trained = train(ModelBundle::init(mc).unwrap(), &ds, &tc).unwrap();
        let ckpt = io::encode_checkpoint(&trained.model, &Provenance::default()).unwrap();
        let (reloaded, _) = io::decode_checkpoint(&ckpt).unwrap();
        let map = explain(&reloaded, &ds.test[0].image, 1, MethodId::SoftCamEvidence, &ExplainOptions::default()).unwrap();
        let mut files = vec![
            ("manifest.csv".to_string(), std::fs::read(dir.join("data/manifest.csv")).unwrap()),
            ("image.sct".to_string(), std::fs::read(dir.join("data/images/00000.sct")).unwrap()),
            ("model.scm".to_string(), ckpt),
            ("epochs.csv".to_string(), io::epoch_log_csv(&trained.log).into_bytes()),
            ("map.sct".to_string(), io::encode_tensor(map.values())),
        ];
        let reencoded = io::encode_checkpoint(&reloaded, &Provenance::default()).unwrap();
        files.push(("model-reencoded.scm".into(), reencoded));
        files
    };
    let (a, b) = (pipeline("a"), pipeline("b"));
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            problems.push(format!("{name} differs between runs"));
        }
    }
    if a[2].1 != a[5].1 {
        problems.push("checkpoint does not round-trip bit-exactly".into());
    }
    let detail = if problems.is_empty() {
        format!("{} artifacts byte-identical across two runs; tensor and checkpoint round trips bit-exact", a.len())
    } else {
        problems.join("; ")
    };
    report(out, "A8", t, problems.is_empty(), detail);
}

fn acceptance_dataset() -> Dataset {
    let n = 2750.0;
    let cfg = SynthConfig {
        samples: 2750,
        split: [2000.0 / n, 300.0 / n, 450.0 / n],
        ..SynthConfig::binary()
    };
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (2000, 300, 450));
    ds
}

fn model_config(head: HeadKind) -> ModelConfig {
    ModelConfig::new(BackboneConfig::default(), 2, head, HeadPreset::ResnetStyle)
}

fn base_train() -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        ..TrainConfig::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn label_map(model: &ModelBundle, sample: &Sample, method: MethodId) -> Tensor {
    let [_, h, w] = model.input_shape();
    explain(model, &sample.image, sample.label, method, &ExplainOptions::default())
        .unwrap()
        .at_resolution(h, w)
        .unwrap()
}

fn disease(ds: &Dataset) -> Vec<&Sample> {
    ds.test.iter().filter(|s| s.label == 1 && !s.mask.is_empty()).collect()
}

fn main() {
    let mut out = Vec::new();
    a1(&mut out);
    a2(&mut out);
    a7(&mut out);
    a8(&mut out);

    let t3 = Instant::now();
    let ds = acceptance_dataset();
    let blackbox = train(ModelBundle::init(model_config(HeadKind::BlackBox)).unwrap(), &ds, &base_train()).unwrap().model;
    let (table, mut models) = sweep_lambda_models(&model_config(HeadKind::SoftCam), &base_train(), &SPARSE_GRID, &ds).unwrap();
    let dense_idx = SPARSE_GRID.iter().position(|&g| g == (0.0, 0.0)).unwrap();
    let dense = models[dense_idx].clone().expect("dense run diverged");
    let sparse_row = table.rows[table.selected].clone();
    let sparse = models[table.selected].take().expect("selected run diverged");
    let train_time = t3.elapsed();
    for row in &table.rows {
        println!(
            "info: sweep λ1={:e} val_acc={:.4} val_auc={:?} sparsity={:?}{}",
            row.lambda1,
            row.val_acc,
            row.val_auc,
            row.sparsity,
            if row.index == table.selected { " (selected)" } else { "" }
        );
    }
    let acc = |m: &ModelBundle| evaluate(m, &ds.test).unwrap().accuracy;
    let accs = [acc(&blackbox), acc(&dense), acc(&sparse)];
    let spread = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = accs.iter().all(|&a| a >= 0.95) && spread <= 0.02 + 1e-12 && train_time <= Duration::from_secs(600);
    report(
        &mut out,
        "A3",
        t3,
        pass,
        format!(
            "test accuracy black-box {:.4}, dense {:.4}, sparse (λ1={:e}) {:.4}; spread {spread:.4}; training {:.0}s",
            accs[0],
            accs[1],
            sparse_row.lambda1,
            accs[2],
            train_time.as_secs_f64()
        ),
    );

    // faithfulness: disease samples every compared model classifies correctly
    let t4 = Instant::now();
    let correct: Vec<&Sample> = disease(&ds)
        .into_iter()
        .filter(|s| {
            sparse.predict(&s.image).unwrap().predicted_class() == s.label
                && blackbox.predict(&s.image).unwrap().predicted_class() == s.label
        })
        .collect();
    let (mut sc, mut rnd, mut gc) = (Vec::new(), Vec::new(), Vec::new());
    for s in &correct {
        let m = label_map(&sparse, s, MethodId::SoftCamEvidence);
        sc.push(audc(&deletion_curve(&sparse, &s.image, s.label, &m, K, PATCH, 0.0).unwrap()));
        rnd.push(audc(&random_patch_baseline(&sparse, &s.image, s.label, K, PATCH, 0.0, s.id as u64).unwrap()));
        let g = label_map(&blackbox, s, MethodId::GradCam);
        gc.push(audc(&deletion_curve(&blackbox, &s.image, s.label, &g, K, PATCH, 0.0).unwrap()));
    }
    let (sc, rnd, gc) = (mean(&sc), mean(&rnd), mean(&gc));
    let pass = correct.len() >= 100 && rnd - sc >= 0.1 && sc <= gc + 0.02 && t4.elapsed() <= Duration::from_secs(300);
    report(
        &mut out,
        "A4",
        t4,
        pass,
        format!("mean AUDC sparse SoftCAM {sc:.3}, random patches {rnd:.3}, black-box GradCAM {gc:.3} over {} correctly classified disease samples", correct.len()),
    );

    let t5 = Instant::now();
    let samples = disease(&ds);
    let grid = PatchGrid::new(64, 64, PATCH).unwrap();
    let (mut ts, mut td, mut tr) = (Vec::new(), Vec::new(), Vec::new());
    for s in &samples {
        ts.push(topk_localization_precision(&label_map(&sparse, s, MethodId::SoftCamEvidence), &s.mask, K, PATCH).unwrap().precision);
        td.push(topk_localization_precision(&label_map(&dense, s, MethodId::SoftCamEvidence), &s.mask, K, PATCH).unwrap().precision);
        let order = grid.order_map(&random_patch_order(grid.len(), s.id as u64)).unwrap();
        tr.push(topk_localization_precision(&order, &s.mask, K, PATCH).unwrap().precision);
    }
    let (ts, td, tr) = (mean(&ts), mean(&td), mean(&tr));
    let pass = ts >= td && td >= 0.5 && ts - tr >= 0.3 && t5.elapsed() <= Duration::from_secs(120);
    report(
        &mut out,
        "A5",
        t5,
        pass,
        format!("top-{K} precision (p={PATCH}) sparse {ts:.3}, dense {td:.3}, random ranking {tr:.3} over {} disease samples", samples.len()),
    );

    let t6 = Instant::now();
    let ridge_cfg = TrainConfig {
        lambda2: RIDGE_LAMBDA2,
        l2_mode: L2Mode::Norm,
        ..base_train()
    };
    let ridge = train(ModelBundle::init(model_config(HeadKind::SoftCam)).unwrap(), &ds, &ridge_cfg).unwrap().model;
    let ridge_acc = acc(&ridge);
    let ap_as = |m: &ModelBundle| {
        let (mut ap, mut as_) = (Vec::new(), Vec::new());
        for s in &samples {
            let map = label_map(m, s, MethodId::SoftCamEvidence);
            ap.push(activation_precision(&map, &s.mask).unwrap().value);
            as_.push(activation_sensitivity(&map, &s.mask).unwrap());
        }
        (mean(&ap), mean(&as_))
    };
    let (ap_s, as_s) = ap_as(&sparse);
    let (ap_r, as_r) = ap_as(&ridge);
    let (ap_d, as_d) = ap_as(&dense);
    let between = |d: f64, a: f64, b: f64| d >= a.min(b) && d <= a.max(b);
    let matched = (ridge_acc - accs[2]).abs() <= 0.02 + 1e-12;
    let pass = matched
        && ap_s > ap_r
        && as_r > as_s
        && (between(ap_d, ap_s, ap_r) || between(as_d, as_s, as_r))
        && t6.elapsed() <= Duration::from_secs(720);
    report(
        &mut out,
        "A6",
        t6,
        pass,
        format!(
            "AP/AS sparse {ap_s:.3}/{as_s:.3}, ridge (λ2={RIDGE_LAMBDA2:e}) {ap_r:.3}/{as_r:.3}, dense {ap_d:.3}/{as_d:.3}; test accuracy ridge {ridge_acc:.4} vs sparse {:.4}",
            accs[2]
        ),
    );

    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", out.len());
    if passed != out.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
