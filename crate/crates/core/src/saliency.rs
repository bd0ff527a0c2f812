//! Saliency maps: five post-hoc baselines and the built-in class-evidence
//! maps of SoftCAM models.
//!
//! Gradient-based methods differentiate the pre-softmax logit of the target
//! class.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Head, HeadKind, ModelBundle, Prediction};
use crate::ops;
use crate::tape::{ReluMode, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Cam,
    GradCam,
    ScoreCam,
    LayerCam,
    GuidedBackprop,
    IntegratedGradients,
    SoftCamEvidence,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Cam,
        MethodId::GradCam,
        MethodId::ScoreCam,
        MethodId::LayerCam,
        MethodId::GuidedBackprop,
        MethodId::IntegratedGradients,
        MethodId::SoftCamEvidence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Cam => "cam",
            MethodId::GradCam => "gradcam",
            MethodId::ScoreCam => "scorecam",
            MethodId::LayerCam => "layercam",
            MethodId::GuidedBackprop => "guided-bp",
            MethodId::IntegratedGradients => "ig",
            MethodId::SoftCamEvidence => "softcam",
        }
    }

    /// Native resolution of the method's maps.
    pub fn resolution(self) -> Resolution {
        match self {
            MethodId::GuidedBackprop | MethodId::IntegratedGradients => Resolution::Input,
            _ => Resolution::Feature,
        }
    }

    /// Whether maps can take negative values.
    pub fn is_signed(self) -> bool {
        !matches!(self, MethodId::GradCam | MethodId::ScoreCam | MethodId::LayerCam)
    }

    /// Whether the method applies to models with this head.
    pub fn supports(self, model: &ModelBundle) -> bool {
        match self {
            MethodId::Cam => matches!(model.head(), Head::BlackBox(h) if h.layers.len() == 1),
            MethodId::SoftCamEvidence => model.head_kind() == HeadKind::SoftCam,
            _ => true,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MethodId::ALL.iter().map(|m| m.as_str()).collect();
                Error::InvalidArgument(format!("unknown method {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    /// Backbone feature grid `N×M`.
    Feature,
    /// Input image grid `H×W`.
    Input,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub method: MethodId,
    pub class: usize,
    pub resolution: Resolution,
    values: Tensor,
}

impl SaliencyMap {
    pub fn new(method: MethodId, class: usize, resolution: Resolution, values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::shape("saliency", format!("map must be 2-D, got {:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(Error::InvalidArgument(format!("{method} map has non-finite values")));
        }
        Ok(Self {
            method,
            class,
            resolution,
            values,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    /// Values at `(height, width)`, bilinearly upsampled from the feature
    /// grid when needed.
    pub fn at_resolution(&self, height: usize, width: usize) -> Result<Tensor> {
        if self.values.shape() == [height, width] {
            return Ok(self.values.clone());
        }
        ops::upsample_bilinear(&self.values, (height, width))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    /// Channels scored by ScoreCAM; `None` uses all of them.
    pub scorecam_channels: Option<usize>,
    /// Riemann steps for integrated gradients.
    pub ig_steps: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            scorecam_channels: Some(32),
            ig_steps: 32,
        }
    }
}

fn check_class(model: &ModelBundle, class: usize) -> Result<()> {
    if class >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for a {}-class model",
            model.classes()
        )));
    }
    Ok(())
}

fn feature_map(method: MethodId, class: usize, values: Vec<f32>, n: usize, m: usize) -> Result<SaliencyMap> {
    SaliencyMap::new(method, class, Resolution::Feature, Tensor::new([n, m], values)?)
}

/// `Σ_k w_k^c A_k` with `w^c` the class row of a single fully connected
/// layer; the bias is not included.
pub fn cam(model: &ModelBundle, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let w = match model.head() {
        Head::BlackBox(h) if h.layers.len() == 1 => &h.layers[0].weight,
        _ => return Err(Error::Unsupported("CAM requires single-FC head".into())),
    };
    let features = model.forward_features(image)?;
    let [d, n, m] = model.feature_shape();
    let row = &w.data()[class * d..(class + 1) * d];
    let mut out = vec![0.0f32; n * m];
    for (k, &wk) in row.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(&features.data()[k * n * m..(k + 1) * n * m]) {
            *o += wk * a;
        }
    }
    feature_map(MethodId::Cam, class, out, n, m)
}

/// Features and `∂ logit_c / ∂ features`.
fn feature_gradients(model: &ModelBundle, image: &Tensor, class: usize) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let trace = model.trace(&mut tape, image)?;
    let target = tape.select(trace.logits, class)?;
    let grads = model.backward(&tape, target)?;
    Ok((tape.value(trace.features)?.clone(), grads.wrt(trace.features)?))
}

/// `ReLU(Σ_k w_k A_k)` with `w_k` the spatial mean of the logit gradient.
pub fn gradcam(model: &ModelBundle, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let (a, g) = feature_gradients(model, image, class)?;
    let [d, n, m] = model.feature_shape();
    let hw = n * m;
    let mut out = vec![0.0f32; hw];
    for k in 0..d {
        let gk = &g.data()[k * hw..(k + 1) * hw];
        let wk = gk.iter().sum::<f32>() / hw as f32;
        for (o, &ak) in out.iter_mut().zip(&a.data()[k * hw..(k + 1) * hw]) {
            *o += wk * ak;
        }
    }
    feature_map(MethodId::GradCam, class, out.into_iter().map(|v| v.max(0.0)).collect(), n, m)
}

/// `Σ_k ReLU(∂y^c/∂A_k) ⊙ A_k` at the last feature map.
pub fn layercam(model: &ModelBundle, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let (a, g) = feature_gradients(model, image, class)?;
    let [d, n, m] = model.feature_shape();
    let hw = n * m;
    let mut out = vec![0.0f32; hw];
    for k in 0..d {
        let span = k * hw..(k + 1) * hw;
        for ((o, &gk), &ak) in out.iter_mut().zip(&g.data()[span.clone()]).zip(&a.data()[span]) {
            *o += gk.max(0.0) * ak;
        }
    }
    // Features are post-ReLU in standard backbones; the clamp keeps the
    // output non-negative for backbones without a final ReLU.
    feature_map(MethodId::LayerCam, class, out.into_iter().map(|v| v.max(0.0)).collect(), n, m)
}

/// Channel indices by descending `Σ A_k²`, ties by index.
pub fn channels_by_energy(features: &Tensor) -> Vec<usize> {
    let d = features.shape()[0];
    let hw = features.numel() / d;
    let energy: Vec<f64> = (0..d)
        .map(|k| features.data()[k * hw..(k + 1) * hw].iter().map(|&v| (v as f64) * (v as f64)).sum())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    order
}

/// Upsampled activation min-max normalised to `[0, 1]`; constant maps give
/// an all-zero mask.
pub fn scorecam_mask(channel: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let up = ops::upsample_bilinear(channel, (height, width))?;
    let (lo, hi) = (up.min(), up.max());
    if hi > lo {
        Ok(up.map(|v| (v - lo) / (hi - lo)))
    } else {
        Ok(Tensor::zeros([height, width]))
    }
}

/// Gradient-free CAM: each selected channel masks the input, the masked
/// input's class logit scores the channel, and softmax-normalised scores
/// weight the channels.
pub fn scorecam(model: &ModelBundle, image: &Tensor, class: usize, top_channels: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let [d, n, m] = model.feature_shape();
    if top_channels == 0 || top_channels > d {
        return Err(Error::InvalidArgument(format!(
            "top_channels must lie in 1..={d}, got {top_channels}"
        )));
    }
    let features = model.forward_features(image)?;
    let selected: Vec<usize> = channels_by_energy(&features).into_iter().take(top_channels).collect();
    let [c_in, h, w] = model.input_shape();
    let hw = n * m;
    let logits: Vec<f32> = selected
        .par_iter()
        .map(|&k| {
            let channel = Tensor::new([n, m], features.data()[k * hw..(k + 1) * hw].to_vec())?;
            let mask = scorecam_mask(&channel, h, w)?;
            let masked = Tensor::from_fn([c_in, h, w], |i| image.data()[i] * mask.data()[i % (h * w)]);
            Ok(model.predict(&masked)?.logits.data()[class])
        })
        .collect::<Result<_>>()?;
    let weights = ops::softmax(&Tensor::new([logits.len()], logits)?)?;
    let mut out = vec![0.0f32; hw];
    for (&k, &wk) in selected.iter().zip(weights.data()) {
        for (o, &a) in out.iter_mut().zip(&features.data()[k * hw..(k + 1) * hw]) {
            *o += wk * a;
        }
    }
    feature_map(MethodId::ScoreCam, class, out.into_iter().map(|v| v.max(0.0)).collect(), n, m)
}

/// `∂ logit_c / ∂ input` under the given ReLU mode.
fn input_gradient(model: &ModelBundle, image: &Tensor, class: usize, mode: ReluMode) -> Result<Tensor> {
    let mut tape = Tape::with_relu_mode(mode);
    let trace = model.trace(&mut tape, image)?;
    let target = tape.select(trace.logits, class)?;
    model.backward(&tape, target)?.wrt(trace.input)
}

fn channel_sum(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let hw = h * w;
    let mut out = vec![0.0f32; hw];
    for k in 0..c {
        for (o, &v) in out.iter_mut().zip(&t.data()[k * hw..(k + 1) * hw]) {
            *o += v;
        }
    }
    Tensor::new([h, w], out)
}

/// Input gradient with guided ReLUs, summed over input channels.
pub fn guided_backprop(model: &ModelBundle, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    check_class(model, class)?;
    let g = input_gradient(model, image, class, ReluMode::Guided)?;
    SaliencyMap::new(MethodId::GuidedBackprop, class, Resolution::Input, channel_sum(&g)?)
}

/// Per-element integrated gradients `(x − x₀) ⊙ (1/m) Σ_{t=1..m} ∇f(x₀ + t/m·(x − x₀))`.
pub fn integrated_gradients_attributions(
    model: &ModelBundle,
    image: &Tensor,
    baseline: &Tensor,
    class: usize,
    steps: usize,
) -> Result<Tensor> {
    check_class(model, class)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    image.expect_same_shape("integrated gradients", baseline)?;
    let grads: Vec<Tensor> = (1..=steps)
        .into_par_iter()
        .map(|t| {
            let alpha = t as f32 / steps as f32;
            let point = Tensor::from_fn(image.shape(), |i| {
                baseline.data()[i] + alpha * (image.data()[i] - baseline.data()[i])
            });
            input_gradient(model, &point, class, ReluMode::Standard)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0f64; image.numel()];
    for g in &grads {
        for (acc, &v) in total.iter_mut().zip(g.data()) {
            *acc += v as f64;
        }
    }
    let inv = 1.0 / steps as f64;
    Tensor::new(
        image.shape(),
        total
            .iter()
            .enumerate()
            .map(|(i, &g)| ((image.data()[i] - baseline.data()[i]) as f64 * g * inv) as f32)
            .collect(),
    )
}

/// Integrated gradients from the zero image, summed over input channels.
pub fn integrated_gradients(model: &ModelBundle, image: &Tensor, class: usize, steps: usize) -> Result<SaliencyMap> {
    let baseline = Tensor::zeros(image.shape());
    let attr = integrated_gradients_attributions(model, image, &baseline, class, steps)?;
    SaliencyMap::new(MethodId::IntegratedGradients, class, Resolution::Input, channel_sum(&attr)?)
}

/// Evidence channel `class` of a prediction already made by a SoftCAM
/// model; costs no model passes.
pub fn evidence_from_prediction(prediction: &Prediction, class: usize) -> Result<SaliencyMap> {
    let ev = prediction
        .evidence
        .as_ref()
        .ok_or_else(|| Error::Unsupported("prediction carries no class-evidence maps".into()))?;
    if class >= ev.shape()[0] {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} evidence maps",
            ev.shape()[0]
        )));
    }
    SaliencyMap::new(MethodId::SoftCamEvidence, class, Resolution::Feature, ev.channel(class)?)
}

/// The class-evidence map of a SoftCAM model: one forward pass, which also
/// yields the prediction.
pub fn softcam_evidence(model: &ModelBundle, image: &Tensor, class: usize) -> Result<SaliencyMap> {
    if model.head_kind() != HeadKind::SoftCam {
        return Err(Error::Unsupported("SoftCAM evidence requires a class-evidence head".into()));
    }
    check_class(model, class)?;
    evidence_from_prediction(&model.predict(image)?, class)
}

pub fn explain(
    model: &ModelBundle,
    image: &Tensor,
    class: usize,
    method: MethodId,
    options: &ExplainOptions,
) -> Result<SaliencyMap> {
    match method {
        MethodId::Cam => cam(model, image, class),
        MethodId::GradCam => gradcam(model, image, class),
        MethodId::LayerCam => layercam(model, image, class),
        MethodId::ScoreCam => {
            let d = model.feature_shape()[0];
            scorecam(model, image, class, options.scorecam_channels.unwrap_or(d).min(d))
        }
        MethodId::GuidedBackprop => guided_backprop(model, image, class),
        MethodId::IntegratedGradients => integrated_gradients(model, image, class, options.ig_steps),
        MethodId::SoftCamEvidence => softcam_evidence(model, image, class),
    }
}
