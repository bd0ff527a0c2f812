//! Quantitative explanation metrics: top-k localisation precision,
//! activation precision and sensitivity, activation consistency, and
//! patch-deletion faithfulness (AUDC).
//!
//! Localisation and deletion metrics take saliency maps already resized to
//! the input resolution, as `[H, W]` tensors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::tensor::Tensor;

/// Binary ground-truth annotation at input resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
    count: usize,
}

impl AnnotationMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!("{} values for a {height}x{width} mask", data.len()),
            ));
        }
        let count = data.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            data,
            count,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width]).expect("consistent extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Number of positive pixels.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Half-open pixel rectangle `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Patch {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Non-overlapping `p×p` tiling of an `H×W` grid in row-major order; the
/// last row and column of patches are cropped when `p` does not divide the
/// extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub patches: Vec<Patch>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument("patch size and extents must be positive".into()));
        }
        let mut patches = Vec::new();
        for y0 in (0..height).step_by(patch) {
            for x0 in (0..width).step_by(patch) {
                patches.push(Patch {
                    y0,
                    x0,
                    y1: (y0 + patch).min(height),
                    x1: (x0 + patch).min(width),
                });
            }
        }
        Ok(Self {
            height,
            width,
            patch,
            patches,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    fn check_map(&self, map: &Tensor) -> Result<()> {
        if map.shape() != [self.height, self.width] {
            return Err(Error::shape(
                "patch grid",
                format!("map {:?} does not match {}x{} grid", map.shape(), self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Mean map value inside each patch.
    pub fn means(&self, map: &Tensor) -> Result<Vec<f64>> {
        self.check_map(map)?;
        let data = map.data();
        Ok(self
            .patches
            .iter()
            .map(|p| {
                let mut sum = 0.0f64;
                for y in p.y0..p.y1 {
                    sum += data[y * self.width + p.x0..y * self.width + p.x1]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>();
                }
                sum / p.area() as f64
            })
            .collect())
    }

    /// Patch indices by descending mean, ties broken by patch index.
    pub fn rank(&self, map: &Tensor) -> Result<Vec<usize>> {
        let means = self.means(map)?;
        let mut order: Vec<usize> = (0..means.len()).collect();
        order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
        Ok(order)
    }

    /// A map whose [`rank`](Self::rank) is exactly `order`: the patch at
    /// position `i` of `order` is filled with `len - i`.
    pub fn order_map(&self, order: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("order must be a permutation of the patch indices".into()));
        }
        let mut map = Tensor::zeros([self.height, self.width]);
        let data = map.data_mut();
        for (pos, &idx) in order.iter().enumerate() {
            let p = self.patches[idx];
            for y in p.y0..p.y1 {
                data[y * self.width + p.x0..y * self.width + p.x1].fill((order.len() - pos) as f32);
            }
        }
        Ok(map)
    }

    pub fn touches_mask(&self, index: usize, mask: &AnnotationMask) -> bool {
        let p = self.patches[index];
        (p.y0..p.y1).any(|y| (p.x0..p.x1).any(|x| mask.get(y, x)))
    }
}

fn check_mask(map: &Tensor, mask: &AnnotationMask) -> Result<()> {
    if map.shape() != [mask.height(), mask.width()] {
        return Err(Error::shape(
            "metric",
            format!(
                "map {:?} does not match {}x{} mask",
                map.shape(),
                mask.height(),
                mask.width()
            ),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkPrecision {
    /// Hits divided by k.
    pub precision: f64,
    /// Hits divided by the number of positively activated top-k patches
    /// (0 when there are none).
    pub precision_alt: f64,
    pub hits: usize,
    pub positive: usize,
    pub k: usize,
}

/// Fraction of the `k` highest-mean patches that are positively activated
/// and contain at least one mask pixel. `k` is capped at the patch count.
pub fn topk_localization_precision(
    map: &Tensor,
    mask: &AnnotationMask,
    k: usize,
    patch: usize,
) -> Result<TopkPrecision> {
    check_mask(map, mask)?;
    if mask.is_empty() {
        return Err(Error::InvalidArgument("top-k precision is undefined for an empty mask".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let grid = PatchGrid::new(mask.height(), mask.width(), patch)?;
    let means = grid.means(map)?;
    let order = grid.rank(map)?;
    let k = k.min(grid.len());
    let mut hits = 0;
    let mut positive = 0;
    for &idx in &order[..k] {
        if means[idx] > 0.0 {
            positive += 1;
            if grid.touches_mask(idx, mask) {
                hits += 1;
            }
        }
    }
    Ok(TopkPrecision {
        precision: hits as f64 / k as f64,
        precision_alt: if positive > 0 { hits as f64 / positive as f64 } else { 0.0 },
        hits,
        positive,
        k,
    })
}

/// `max(map, 0)` divided by its maximum; an all-non-positive map stays zero.
pub fn normalized_positive(map: &Tensor) -> Vec<f64> {
    let pos: Vec<f64> = map.data().iter().map(|&v| (v as f64).max(0.0)).collect();
    let max = pos.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        pos.into_iter().map(|v| v / max).collect()
    } else {
        pos
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationPrecision {
    pub value: f64,
    /// True when the map has no positive mass; `value` is then 0.
    pub degenerate: bool,
}

/// Share of the normalised positive saliency mass that falls inside the mask.
pub fn activation_precision(map: &Tensor, mask: &AnnotationMask) -> Result<ActivationPrecision> {
    check_mask(map, mask)?;
    let s = normalized_positive(map);
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return Ok(ActivationPrecision {
            value: 0.0,
            degenerate: true,
        });
    }
    let inside: f64 = s.iter().zip(mask.data()).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    Ok(ActivationPrecision {
        value: inside / total,
        degenerate: false,
    })
}

/// Mean normalised positive saliency over the mask pixels.
pub fn activation_sensitivity(map: &Tensor, mask: &AnnotationMask) -> Result<f64> {
    check_mask(map, mask)?;
    if mask.is_empty() {
        return Err(Error::InvalidArgument(
            "activation sensitivity is undefined for an empty mask".into(),
        ));
    }
    let s = normalized_positive(map);
    let inside: f64 = s.iter().zip(mask.data()).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    Ok(inside / mask.count() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Share of positive cells in disease-class maps of disease samples.
    pub positive: Option<MeanStd>,
    /// Share of negative cells in disease-class maps of healthy samples.
    pub negative: Option<MeanStd>,
}

/// Sign agreement of signed evidence maps with the labels. Each entry is a
/// disease-class evidence map and whether its sample is diseased. Zero cells
/// count towards the denominator only.
pub fn activation_consistency(entries: &[(&Tensor, bool)]) -> Result<ConsistencyReport> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("activation consistency needs at least one map".into()));
    }
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (map, disease) in entries {
        let n = map.numel() as f64;
        if *disease {
            positive.push(map.data().iter().filter(|&&v| v > 0.0).count() as f64 / n);
        } else {
            negative.push(map.data().iter().filter(|&&v| v < 0.0).count() as f64 / n);
        }
    }
    Ok(ConsistencyReport {
        positive: mean_std(&positive),
        negative: mean_std(&negative),
    })
}

/// Predicted-class confidence as patches are cumulatively occluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub class: usize,
    /// Confidence before any occlusion.
    pub c0: f64,
    /// `(patches removed, confidence)` for `t = 0..=k`.
    pub points: Vec<(usize, f64)>,
}

impl DeletionCurve {
    pub fn k(&self) -> usize {
        self.points.len() - 1
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.points.iter().map(|&(_, c)| c / self.c0).collect()
    }
}

/// Mean normalised confidence over `t = 1..=k`.
pub fn audc(curve: &DeletionCurve) -> f64 {
    let norm = curve.normalized();
    if norm.len() < 2 {
        return 1.0;
    }
    norm[1..].iter().sum::<f64>() / (norm.len() - 1) as f64
}

/// Deletion curve for an explicit patch order.
pub fn deletion_curve_for_order(
    model: &ModelBundle,
    image: &Tensor,
    label: usize,
    grid: &PatchGrid,
    order: &[usize],
    k: usize,
    fill: f32,
) -> Result<DeletionCurve> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] != grid.height || shape[2] != grid.width {
        return Err(Error::shape(
            "deletion",
            format!("image {shape:?} does not match {}x{} grid", grid.height, grid.width),
        ));
    }
    let first = model.predict(image)?;
    let predicted = first.predicted_class();
    if predicted != label {
        return Err(Error::Misclassified { predicted, label });
    }
    let c0 = first.probs.data()[predicted] as f64;
    let mut points = vec![(0, c0)];
    let mut occluded = image.clone();
    let (channels, w) = (shape[0], shape[2]);
    for (t, &idx) in order.iter().take(k.min(grid.len())).enumerate() {
        let p = grid.patches[idx];
        let data = occluded.data_mut();
        for c in 0..channels {
            for y in p.y0..p.y1 {
                let row = (c * grid.height + y) * w;
                data[row + p.x0..row + p.x1].fill(fill);
            }
        }
        let conf = model.predict(&occluded)?.probs.data()[predicted] as f64;
        points.push((t + 1, conf));
    }
    Ok(DeletionCurve {
        class: predicted,
        c0,
        points,
    })
}

/// Occludes the `k` highest-ranked patches of `map` one at a time with
/// `fill`, re-running the model after each step. Fails with
/// [`Error::Misclassified`] when the model does not predict `label`.
pub fn deletion_curve(
    model: &ModelBundle,
    image: &Tensor,
    label: usize,
    map: &Tensor,
    k: usize,
    patch: usize,
    fill: f32,
) -> Result<DeletionCurve> {
    let grid = PatchGrid::new(map.shape().first().copied().unwrap_or(0), map.shape().get(1).copied().unwrap_or(0), patch)?;
    let order = grid.rank(map)?;
    deletion_curve_for_order(model, image, label, &grid, &order, k, fill)
}

/// Seeded uniformly random patch order.
pub fn random_patch_order(patches: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..patches).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Deletion curve with a seeded uniformly random patch order, the control
/// for faithfulness comparisons.
#[allow(clippy::too_many_arguments)]
pub fn random_patch_baseline(
    model: &ModelBundle,
    image: &Tensor,
    label: usize,
    k: usize,
    patch: usize,
    fill: f32,
    seed: u64,
) -> Result<DeletionCurve> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::shape("deletion", format!("image must be [C, H, W], got {shape:?}")));
    }
    let grid = PatchGrid::new(shape[1], shape[2], patch)?;
    let order = random_patch_order(grid.len(), seed);
    deletion_curve_for_order(model, image, label, &grid, &order, k, fill)
}

/// Per-sample metric values for one explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub method: String,
    pub class: usize,
    pub topk_prec: Option<f64>,
    pub topk_prec_alt: Option<f64>,
    pub ap: Option<f64>,
    #[serde(rename = "as")]
    pub as_: Option<f64>,
    pub audc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub samples: usize,
    pub topk_prec: Option<MeanStd>,
    pub topk_prec_alt: Option<MeanStd>,
    pub ap: Option<MeanStd>,
    #[serde(rename = "as")]
    pub as_: Option<MeanStd>,
    pub audc: Option<MeanStd>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub records: Vec<MetricRecord>,
    pub aggregates: BTreeMap<String, MethodAggregate>,
}

impl MetricReport {
    pub fn new(model: impl Into<String>, records: Vec<MetricRecord>) -> Self {
        let mut grouped: BTreeMap<String, Vec<&MetricRecord>> = BTreeMap::new();
        for r in &records {
            grouped.entry(r.method.clone()).or_default().push(r);
        }
        let aggregates = grouped
            .into_iter()
            .map(|(method, rs)| {
                let collect = |f: fn(&MetricRecord) -> Option<f64>| {
                    mean_std(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
                };
                let agg = MethodAggregate {
                    samples: rs.len(),
                    topk_prec: collect(|r| r.topk_prec),
                    topk_prec_alt: collect(|r| r.topk_prec_alt),
                    ap: collect(|r| r.ap),
                    as_: collect(|r| r.as_),
                    audc: collect(|r| r.audc),
                };
                (method, agg)
            })
            .collect();
        Self {
            model: model.into(),
            records,
            aggregates,
        }
    }
}
