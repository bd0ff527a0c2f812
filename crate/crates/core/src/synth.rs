//! Seeded synthetic lesion images with ground-truth masks.
//!
//! A sample is a smooth Gaussian-noise background plus zero or more bright
//! radial blobs. Each blob adds `intensity · 2^-(d/r)²` at distance `d` from
//! its centre, so its contribution falls to half the peak exactly at radius
//! `r`; the mask is the union of the pixels where some blob exceeds half its
//! peak. Class `c` draws its lesion count from `lesion_counts[c]`, which
//! makes class 0 healthy and, in the graded scheme, higher grades carry
//! strictly more lesions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::AnnotationMask;
use crate::tensor::Tensor;

const LABEL_STREAM: u64 = u64::MAX;
const SPLIT_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassScheme {
    /// Healthy (0) versus disease (1).
    Binary,
    /// Grades `0..grades` ordered by lesion count.
    Graded { grades: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub size: usize,
    pub samples: usize,
    pub scheme: ClassScheme,
    /// Inclusive `[min, max]` lesion count per class.
    pub lesion_counts: Vec<[usize; 2]>,
    /// Inclusive `[min, max]` lesion radius in pixels.
    pub radius: [f64; 2],
    /// Peak intensity added by one lesion.
    pub intensity: f64,
    /// Standard deviation of the Gaussian blur applied to the background noise.
    pub texture_scale: f64,
    /// Standard deviation of the background after blurring.
    pub noise_std: f64,
    /// Fraction of samples per class.
    pub class_balance: Vec<f64>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::binary()
    }
}

impl SynthConfig {
    pub fn binary() -> Self {
        Self {
            size: 64,
            samples: 2750,
            scheme: ClassScheme::Binary,
            lesion_counts: vec![[0, 0], [2, 3]],
            radius: [3.0, 6.0],
            intensity: 1.0,
            texture_scale: 1.5,
            noise_std: 0.25,
            class_balance: vec![0.73, 0.27],
            split: [0.75, 0.10, 0.15],
            seed: 0,
        }
    }

    pub fn graded(grades: usize) -> Self {
        let lesion_counts = (0..grades)
            .map(|g| if g == 0 { [0, 0] } else { [2 * g - 1, 2 * g] })
            .collect();
        let mut class_balance = vec![0.0; grades];
        if grades > 0 {
            class_balance[0] = 0.4;
            for b in class_balance.iter_mut().skip(1) {
                *b = 0.6 / (grades - 1).max(1) as f64;
            }
        }
        Self {
            scheme: ClassScheme::Graded { grades },
            lesion_counts,
            class_balance,
            ..Self::binary()
        }
    }

    pub fn classes(&self) -> usize {
        match self.scheme {
            ClassScheme::Binary => 2,
            ClassScheme::Graded { grades } => grades,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.classes();
        if classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.size < 2 || self.samples == 0 {
            return Err(Error::Config("size must be at least 2 and samples positive".into()));
        }
        let split_total: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (split_total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must lie in [0, 1] and sum to 1",
                self.split
            )));
        }
        if self.class_balance.len() != classes || self.lesion_counts.len() != classes {
            return Err(Error::Config(format!(
                "class_balance and lesion_counts need {classes} entries"
            )));
        }
        let balance_total: f64 = self.class_balance.iter().sum();
        if self.class_balance.iter().any(|&f| f < 0.0) || (balance_total - 1.0).abs() > 1e-9 {
            return Err(Error::Config("class_balance must be non-negative and sum to 1".into()));
        }
        if self.lesion_counts[0] != [0, 0] {
            return Err(Error::Config("class 0 is healthy and carries no lesions".into()));
        }
        for (c, w) in self.lesion_counts.windows(2).enumerate() {
            if w[1][0] > w[1][1] {
                return Err(Error::Config(format!("lesion count range of class {} is empty", c + 1)));
            }
            if w[1][0] <= w[0][1] {
                return Err(Error::Config(format!(
                    "lesion counts must strictly increase across classes (class {} overlaps class {c})",
                    c + 1
                )));
            }
        }
        let [r_min, r_max] = self.radius;
        if !(r_min >= 1.0 && r_max >= r_min) {
            return Err(Error::Config(format!("radius range {:?} needs 1 <= min <= max", self.radius)));
        }
        if 2.0 * r_max > (self.size - 1) as f64 {
            return Err(Error::Config(format!(
                "lesion radius {r_max} does not fit in a {0}x{0} image",
                self.size
            )));
        }
        if !(self.intensity > 0.0 && self.noise_std >= 0.0 && self.texture_scale >= 0.0) {
            return Err(Error::Config("intensity must be positive, noise and texture non-negative".into()));
        }
        Ok(())
    }

    /// `(train, val, test)` sample counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.samples as f64;
        let train = (n * self.split[0]).round() as usize;
        let val = ((n * self.split[1]).round() as usize).min(self.samples - train);
        (train, val, self.samples - train - val)
    }

    fn class_counts(&self) -> Vec<usize> {
        let n = self.samples as f64;
        let exact: Vec<f64> = self.class_balance.iter().map(|f| f * n).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut remaining = self.samples - counts.iter().sum::<usize>();
        for &c in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            counts[c] += 1;
            remaining -= 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// `[1, H, W]`
    pub image: Tensor,
    pub label: usize,
    pub mask: AnnotationMask,
}

/// Per-pixel affine normalisation fitted on the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub normalization: Normalization,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.train
            .first()
            .or(self.val.first())
            .or(self.test.first())
            .map(|s| s.image.shape())
    }
}

/// One sample before normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub image: Tensor,
    pub mask: AnnotationMask,
    pub lesions: usize,
}

/// Renders sample `index` of class `label` from its own RNG stream.
pub fn generate_sample(config: &SynthConfig, index: usize, label: usize) -> Result<RawSample> {
    config.validate()?;
    if label >= config.classes() {
        return Err(Error::InvalidArgument(format!("label {label} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let size = config.size;

    let mut pixels = background(size, config.texture_scale, config.noise_std, &mut rng);
    let mut mask = vec![false; size * size];

    let [lo, hi] = config.lesion_counts[label];
    let lesions = rng.random_range(lo..=hi);
    let peak = config.intensity as f32;
    for _ in 0..lesions {
        let r = rng.random_range(config.radius[0]..=config.radius[1]);
        let cy = rng.random_range(r..=(size - 1) as f64 - r);
        let cx = rng.random_range(r..=(size - 1) as f64 - r);
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let contribution = peak * (-(dy * dy + dx * dx) / (r * r)).exp2() as f32;
                pixels[y * size + x] += contribution;
                if contribution > peak / 2.0 {
                    mask[y * size + x] = true;
                }
            }
        }
    }
    Ok(RawSample {
        image: Tensor::new([1, size, size], pixels)?,
        mask: AnnotationMask::new(size, size, mask)?,
        lesions,
    })
}

fn background(size: usize, sigma: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let blurred = gaussian_blur(&noise, size, sigma);
    let n = blurred.len() as f64;
    let mean = blurred.iter().sum::<f64>() / n;
    let var = blurred.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { std / var.sqrt() } else { 0.0 };
    blurred.iter().map(|v| ((v - mean) * scale) as f32).collect()
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(src: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * src[y * size + clamp(x as isize + t as isize - radius)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = taps
                .iter()
                .enumerate()
                .map(|(t, w)| w * tmp[clamp(y as isize + t as isize - radius) * size + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

/// Labels per sample index: exact class counts, shuffled by the seed.
pub fn assign_labels(config: &SynthConfig) -> Vec<usize> {
    let mut labels: Vec<usize> = config
        .class_counts()
        .into_iter()
        .enumerate()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(LABEL_STREAM);
    labels.shuffle(&mut rng);
    labels
}

/// Sample indices per split; the three lists are disjoint and cover `0..samples`.
pub fn assign_splits(config: &SynthConfig) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..config.samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let (train, val, _) = config.split_counts();
    let mut splits = [
        order[..train].to_vec(),
        order[train..train + val].to_vec(),
        order[train + val..].to_vec(),
    ];
    for s in &mut splits {
        s.sort_unstable();
    }
    splits
}

pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let labels = assign_labels(config);
    let raw: Vec<RawSample> = (0..config.samples)
        .into_par_iter()
        .map(|i| generate_sample(config, i, labels[i]))
        .collect::<Result<_>>()?;
    let [train_idx, val_idx, test_idx] = assign_splits(config);

    let fit_on: &[usize] = if train_idx.is_empty() { &val_idx } else { &train_idx };
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for &i in fit_on {
        for &v in raw[i].image.data() {
            sum += v as f64;
            sum_sq += (v as f64) * (v as f64);
            count += 1;
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    let var = if count > 0 { (sum_sq / count as f64 - mean * mean).max(0.0) } else { 1.0 };
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let normalization = Normalization {
        mean: mean as f32,
        std: std as f32,
    };

    let build = |indices: &[usize]| -> Vec<Sample> {
        indices
            .iter()
            .map(|&i| Sample {
                id: i,
                image: raw[i].image.map(|v| (v - normalization.mean) / normalization.std),
                label: labels[i],
                mask: raw[i].mask.clone(),
            })
            .collect()
    };
    Ok(Dataset {
        classes: config.classes(),
        normalization,
        train: build(&train_idx),
        val: build(&val_idx),
        test: build(&test_idx),
    })
}

/// Independent horizontal and vertical flips, each with probability 1/2,
/// applied identically to image and mask.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizontal = rng.random_bool(0.5);
    let vertical = rng.random_bool(0.5);
    let mut out = sample.clone();
    if horizontal {
        out = flip_horizontal(&out);
    }
    if vertical {
        out = flip_vertical(&out);
    }
    out
}

pub fn flip_horizontal(sample: &Sample) -> Sample {
    flip(sample, |y, x, _h, w| (y, w - 1 - x))
}

pub fn flip_vertical(sample: &Sample) -> Sample {
    flip(sample, |y, x, h, _w| (h - 1 - y, x))
}

fn flip(sample: &Sample, map: impl Fn(usize, usize, usize, usize) -> (usize, usize)) -> Sample {
    let shape = sample.image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let src = sample.image.data();
    let mut pixels = vec![0.0f32; src.len()];
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map(y, x, h, w);
            for ch in 0..c {
                pixels[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
            mask[y * w + x] = sample.mask.get(sy, sx);
        }
    }
    Sample {
        id: sample.id,
        image: Tensor::new(shape.to_vec(), pixels).expect("same shape"),
        label: sample.label,
        mask: AnnotationMask::new(h, w, mask).expect("same extents"),
    }
}
