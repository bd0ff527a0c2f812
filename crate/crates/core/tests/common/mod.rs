//! Independent oracles shared by the integration tests and the acceptance
//! harness: finite-difference gradient checks and brute-force metric
//! evaluations written directly from the metric definitions.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softcam::metrics::AnnotationMask;
use softcam::model::{BackboneConfig, BlockConfig, HeadKind, HeadPreset, InputShape, ModelConfig};
use softcam::{NodeId, Tape, Tensor};

pub const FD_EPS: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Builds the operation under test from leaves holding `inputs`.
pub type Build<'a> = dyn Fn(&mut Tape, &[NodeId]) -> softcam::Result<NodeId> + 'a;

/// Whether element `elem` of input `which` sits too close to a
/// non-differentiable point for a central difference to be meaningful.
pub type Kink<'a> = dyn Fn(&[Tensor], usize, usize) -> bool + 'a;

pub fn no_kinks(_: &[Tensor], _: usize, _: usize) -> bool {
    false
}

/// Scalar objective `Σ r ⊙ op(inputs)` with a fixed random projection `r`.
fn objective(inputs: &[Tensor], build: &Build<'_>, projection: Option<&Tensor>) -> (f64, Tape, Vec<NodeId>, NodeId) {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves).expect("operation builds");
    let out_value = tape.value(out).unwrap().clone();
    let value = match projection {
        Some(r) => out_value.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum(),
        None => out_value.data().iter().map(|&a| a as f64).sum(),
    };
    let root = if out_value.rank() == 0 {
        out
    } else {
        let r = tape.leaf(projection.cloned().unwrap_or_else(|| Tensor::ones(out_value.shape())));
        let prod = tape.mul(out, r).unwrap();
        tape.sum(prod).unwrap()
    };
    (value, tape, leaves, root)
}

/// Largest relative error `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)` over
/// the inputs, with kink-adjacent elements removed from both vectors.
pub fn gradient_error(inputs: &[Tensor], build: &Build<'_>, kink: &Kink<'_>, seed: u64) -> f64 {
    let mut probe = Tape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
    let out = build(&mut probe, &leaves).unwrap();
    let out_shape = probe.value(out).unwrap().shape().to_vec();
    let projection = if out_shape.is_empty() {
        None
    } else {
        let mut r = rng(seed ^ 0x5eed);
        Some(Tensor::from_fn(out_shape, |_| r.random_range(0.5f32..1.5)))
    };
    let (_, tape, leaves, root) = objective(inputs, build, projection.as_ref());
    let grads = tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(leaves[which]).unwrap();
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for elem in 0..input.numel() {
            if kink(inputs, which, elem) {
                continue;
            }
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= FD_EPS;
            let fp = objective(&plus, build, projection.as_ref()).0;
            let fm = objective(&minus, build, projection.as_ref()).0;
            let numeric = (fp - fm) / (2.0 * FD_EPS as f64);
            let a = analytic.data()[elem] as f64;
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale > 1e-6 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

/// Small random model for saliency and gradient experiments.
pub fn small_model_config(head: HeadKind, preset: HeadPreset, classes: usize, seed: u64) -> ModelConfig {
    let backbone = BackboneConfig {
        input: InputShape {
            channels: 2,
            height: 8,
            width: 8,
        },
        blocks: vec![BlockConfig::new(4), BlockConfig::new(6)],
        seed,
    };
    ModelConfig::new(backbone, classes, head, preset)
}

pub fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> AnnotationMask {
    loop {
        let data: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
        if data.iter().any(|&b| b) {
            return AnnotationMask::new(h, w, data).unwrap();
        }
    }
}

/// Map values on a 1/8 lattice in [-1, 1], so that every partial sum is
/// exact and ties are common.
pub fn lattice_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn([h, w], |_| rng.random_range(-8i32..=8) as f32 / 8.0)
}

fn s_plus(map: &Tensor) -> Vec<Vec<f64>> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            max = max.max(map.data()[y * w + x] as f64);
        }
    }
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let v = (map.data()[y * w + x] as f64).max(0.0);
                    if max > 0.0 {
                        v / max
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn brute_ap(map: &Tensor, mask: &AnnotationMask) -> f64 {
    let s = s_plus(map);
    let (mut inside, mut total) = (0.0, 0.0);
    for (y, row) in s.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            total += v;
            if mask.get(y, x) {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

pub fn brute_as(map: &Tensor, mask: &AnnotationMask) -> f64 {
    let s = s_plus(map);
    let (mut inside, mut count) = (0.0, 0usize);
    for (y, row) in s.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            if mask.get(y, x) {
                inside += v;
                count += 1;
            }
        }
    }
    inside / count as f64
}

/// Patches as `(y0, x0, y1, x1)` in row-major order.
pub fn brute_patches(h: usize, w: usize, p: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 < h {
        let mut x0 = 0;
        while x0 < w {
            out.push((y0, x0, (y0 + p).min(h), (x0 + p).min(w)));
            x0 += p;
        }
        y0 += p;
    }
    out
}

fn patch_mean(map: &Tensor, (y0, x0, y1, x1): (usize, usize, usize, usize)) -> f64 {
    let w = map.shape()[1];
    let mut s = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            s += map.data()[y * w + x] as f64;
        }
    }
    s / ((y1 - y0) * (x1 - x0)) as f64
}

/// Ranking by repeated selection of the highest remaining mean, earliest
/// patch first among equals.
pub fn brute_rank(map: &Tensor, p: usize) -> Vec<usize> {
    let patches = brute_patches(map.shape()[0], map.shape()[1], p);
    let means: Vec<f64> = patches.iter().map(|&q| patch_mean(map, q)).collect();
    let mut taken = vec![false; patches.len()];
    let mut order = Vec::new();
    for _ in 0..patches.len() {
        let mut best: Option<usize> = None;
        for i in 0..patches.len() {
            if !taken[i] && best.is_none_or(|b| means[i] > means[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        order.push(b);
    }
    order
}

pub fn brute_topk(map: &Tensor, mask: &AnnotationMask, k: usize, p: usize) -> f64 {
    let patches = brute_patches(map.shape()[0], map.shape()[1], p);
    let k = k.min(patches.len());
    let order = brute_rank(map, p);
    let mut hits = 0;
    for &i in &order[..k] {
        let q = patches[i];
        let touches = (q.0..q.2).any(|y| (q.1..q.3).any(|x| mask.get(y, x)));
        if patch_mean(map, q) > 0.0 && touches {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

pub fn brute_audc(c0: f64, confidences: &[f64]) -> f64 {
    let mut s = 0.0;
    for &c in confidences {
        s += c / c0;
    }
    s / confidences.len() as f64
}

fn near_zero(inputs: &[Tensor], which: usize, elem: usize) -> bool {
    inputs[which].data()[elem].abs() < 2.0 * FD_EPS
}

/// Whether perturbing `x[elem]` by ±ε can change which cell wins its 2×2
/// pooling window.
fn maxpool_kink(x: &Tensor, elem: usize) -> bool {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let plane = elem / (h * w);
    let (y, xx) = ((elem % (h * w)) / w, elem % w);
    let (y0, x0) = (y / 2 * 2, xx / 2 * 2);
    if y0 + 1 >= h || x0 + 1 >= w {
        return false;
    }
    let mut vals: Vec<f32> = Vec::new();
    for dy in 0..2 {
        for dx in 0..2 {
            vals.push(x.data()[plane * h * w + (y0 + dy) * w + x0 + dx]);
        }
    }
    vals.sort_by(|a, b| b.total_cmp(a));
    vals[0] - vals[1] < 4.0 * FD_EPS
}

/// Gradient error of every differentiable tape primitive for one seed.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let stride = 1 + (seed as usize % 2);
    let padding = seed as usize % 2;
    let x = random_tensor(&[2, 5, 6], &mut r);
    let k = random_tensor(&[3, 2, 3, 3], &mut r);
    let b = random_tensor(&[3], &mut r);
    let conv = move |t: &mut Tape, n: &[NodeId]| t.conv2d(n[0], n[1], n[2], stride, padding);
    out.push(("conv2d", gradient_error(&[x, k, b], &conv, &no_kinks, seed)));

    let x = random_tensor(&[3, 4, 4], &mut r);
    out.push(("relu", gradient_error(&[x], &|t, n| t.relu(n[0]), &near_zero, seed)));

    let x = random_tensor(&[2, 4, 6], &mut r);
    let kink = |i: &[Tensor], _: usize, e: usize| maxpool_kink(&i[0], e);
    out.push(("maxpool2", gradient_error(&[x], &|t, n| t.maxpool2(n[0]), &kink, seed)));

    let x = random_tensor(&[3, 3, 5], &mut r);
    out.push(("global_avg_pool", gradient_error(&[x], &|t, n| t.global_avg_pool(n[0]), &no_kinks, seed)));

    let x = random_tensor(&[5], &mut r);
    let w = random_tensor(&[4, 5], &mut r);
    let b = random_tensor(&[4], &mut r);
    let lin = |t: &mut Tape, n: &[NodeId]| t.linear(n[0], n[1], n[2]);
    out.push(("linear", gradient_error(&[x, w, b], &lin, &no_kinks, seed)));

    let x = random_tensor(&[5], &mut r).scale(2.0);
    out.push(("softmax", gradient_error(&[x], &|t, n| t.softmax(n[0]), &no_kinks, seed)));

    let x = random_tensor(&[4], &mut r);
    let label = seed as usize % 4;
    let ce = move |t: &mut Tape, n: &[NodeId]| {
        let p = t.softmax(n[0])?;
        t.cross_entropy(p, label)
    };
    out.push(("cross_entropy", gradient_error(&[x], &ce, &no_kinks, seed)));

    let a = random_tensor(&[2, 3], &mut r);
    let b = random_tensor(&[2, 3], &mut r);
    out.push(("add", gradient_error(&[a.clone(), b.clone()], &|t, n| t.add(n[0], n[1]), &no_kinks, seed)));
    out.push(("mul", gradient_error(&[a.clone(), b], &|t, n| t.mul(n[0], n[1]), &no_kinks, seed)));
    out.push(("scale", gradient_error(&[a.clone()], &|t, n| t.scale(n[0], -1.7), &no_kinks, seed)));
    out.push(("sum", gradient_error(&[a.clone()], &|t, n| t.sum(n[0]), &no_kinks, seed)));
    out.push(("abs_sum", gradient_error(&[a.clone()], &|t, n| t.abs_sum(n[0]), &near_zero, seed)));
    out.push(("sum_squares", gradient_error(&[a.clone()], &|t, n| t.sum_squares(n[0]), &no_kinks, seed)));
    out.push(("l2_norm", gradient_error(&[a.clone()], &|t, n| t.l2_norm(n[0]), &no_kinks, seed)));
    let idx = seed as usize % 3;
    let v = random_tensor(&[3], &mut r);
    out.push(("select", gradient_error(&[v], &move |t, n| t.select(n[0], idx), &no_kinks, seed)));
    out
}
