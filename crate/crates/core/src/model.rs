//! Small CNN backbones with either a black-box head (global average pooling
//! followed by fully connected layers) or a class-evidence head made of 1×1
//! convolutions whose spatial mean is the logit vector.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub padding: usize,
    #[serde(default = "yes")]
    pub pool: bool,
    #[serde(default = "yes")]
    pub relu: bool,
}

fn default_kernel() -> usize {
    3
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl BlockConfig {
    pub fn new(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: true,
            relu: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input: InputShape,
    pub blocks: Vec<BlockConfig>,
    pub seed: u64,
}

impl Default for BackboneConfig {
    /// 1×64×64 input and blocks of 16/32/64/128 channels, the last one
    /// unpooled: 128×8×8 features, so one evidence cell covers an 8×8 patch.
    fn default() -> Self {
        let mut blocks: Vec<BlockConfig> = [16, 32, 64, 128].into_iter().map(BlockConfig::new).collect();
        blocks[3].pool = false;
        Self {
            input: InputShape {
                channels: 1,
                height: 64,
                width: 64,
            },
            blocks,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    /// `(D, N, M)` of the final feature map.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let InputShape {
            channels,
            mut height,
            mut width,
        } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        let mut depth = channels;
        for (i, block) in self.blocks.iter().enumerate() {
            if block.out_channels == 0 || block.kernel == 0 || block.stride == 0 {
                return Err(Error::Config(format!("block {i}: extents must be positive")));
            }
            if block.kernel > height + 2 * block.padding || block.kernel > width + 2 * block.padding {
                return Err(Error::Config(format!(
                    "block {i}: kernel {} larger than padded {height}x{width} input",
                    block.kernel
                )));
            }
            height = (height + 2 * block.padding - block.kernel) / block.stride + 1;
            width = (width + 2 * block.padding - block.kernel) / block.stride + 1;
            if block.pool {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(Error::Config(format!(
                        "block {i}: cannot 2x2-pool an odd {height}x{width} map"
                    )));
                }
                height /= 2;
                width /= 2;
            }
            depth = block.out_channels;
        }
        if height < 2 || width < 2 {
            return Err(Error::Config(format!(
                "feature map {height}x{width} is not spatial (need at least 2x2)"
            )));
        }
        Ok((depth, height, width))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    BlackBox,
    SoftCam,
}

/// Classifier stack layouts: one layer, or `D→64→64→C` with ReLUs between.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadPreset {
    #[default]
    ResnetStyle,
    VggStyle,
}

impl HeadPreset {
    fn hidden_widths(self) -> &'static [usize] {
        match self {
            HeadPreset::ResnetStyle => &[],
            HeadPreset::VggStyle => &[64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub classes: usize,
    pub head: HeadKind,
    #[serde(default)]
    pub preset: HeadPreset,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, classes: usize, head: HeadKind, preset: HeadPreset) -> Self {
        Self {
            backbone,
            classes,
            head,
            preset,
        }
    }

    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        self.backbone.feature_shape()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `(in, out)` widths of each classifier layer.
    pub fn head_widths(&self) -> Result<Vec<(usize, usize)>> {
        let (depth, _, _) = self.validate()?;
        let mut widths = Vec::new();
        let mut fan_in = depth;
        for &w in self.preset.hidden_widths() {
            widths.push((fan_in, w));
            fan_in = w;
        }
        widths.push((fan_in, self.classes));
        Ok(widths)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[C_out, C_in, k, k]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub pool: bool,
    pub relu: bool,
}

/// Fully connected layer, weight `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Global average pooling followed by FC layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackBoxHead {
    pub layers: Vec<DenseLayer>,
}

/// 1×1 convolutions with ReLU between them; the last layer emits one signed
/// evidence map per class.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftCamHead {
    /// Weights are `[out, in, 1, 1]`.
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    BlackBox(BlackBoxHead),
    SoftCam(SoftCamHead),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::BlackBox(_) => HeadKind::BlackBox,
            Head::SoftCam(_) => HeadKind::SoftCam,
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        match self {
            Head::BlackBox(h) => &h.layers,
            Head::SoftCam(h) => &h.layers,
        }
    }

    fn layers_mut(&mut self) -> &mut [DenseLayer] {
        match self {
            Head::BlackBox(h) => &mut h.layers,
            Head::SoftCam(h) => &mut h.layers,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }
}

/// Rewrites every FC layer as a 1×1 convolution with the same weights and
/// bias. With a single layer the resulting model's logits equal the
/// black-box logits, since averaging commutes with a linear map.
pub fn convert_head(blackbox: &BlackBoxHead) -> SoftCamHead {
    let layers = blackbox
        .layers
        .iter()
        .map(|l| {
            let (out, inp) = (l.weight.shape()[0], l.weight.shape()[1]);
            DenseLayer {
                weight: l.weight.clone().reshape([out, inp, 1, 1]).expect("same element count"),
                bias: l.bias.clone(),
            }
        })
        .collect();
    SoftCamHead { layers }
}

/// Count of forward and backward passes run through a model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward: u64,
    pub backward: u64,
}

#[derive(Debug, Default)]
struct PassCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

/// Output of a forward pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub features: Tensor,
    /// `[C, N, M]`, present for class-evidence heads only.
    pub evidence: Option<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        self.probs.argmax()
    }
}

/// Node handles for one forward pass recorded on a tape.
#[derive(Clone, Debug)]
pub struct Trace {
    pub input: NodeId,
    /// Parameter leaves, in [`ModelBundle::parameters`] order.
    pub params: Vec<NodeId>,
    pub features: NodeId,
    pub evidence: Option<NodeId>,
    pub logits: NodeId,
    pub probs: NodeId,
}

#[derive(Debug)]
pub struct ModelBundle {
    config: ModelConfig,
    backbone: Vec<ConvLayer>,
    head: Head,
    passes: PassCounter,
}

impl Clone for ModelBundle {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            head: self.head.clone(),
            passes: PassCounter::default(),
        }
    }
}

impl PartialEq for ModelBundle {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.backbone == other.backbone && self.head == other.head
    }
}

impl ModelBundle {
    /// Kaiming-uniform fan-in initialisation with zero biases, fully
    /// determined by `config.backbone.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.backbone.seed);
        let mut in_ch = config.backbone.input.channels;
        let mut backbone = Vec::with_capacity(config.backbone.blocks.len());
        for block in &config.backbone.blocks {
            let fan_in = in_ch * block.kernel * block.kernel;
            let bound = (6.0 / fan_in as f32).sqrt();
            backbone.push(ConvLayer {
                weight: Tensor::uniform(
                    [block.out_channels, in_ch, block.kernel, block.kernel],
                    -bound,
                    bound,
                    &mut rng,
                ),
                bias: Tensor::zeros([block.out_channels]),
                stride: block.stride,
                padding: block.padding,
                pool: block.pool,
                relu: block.relu,
            });
            in_ch = block.out_channels;
        }
        let layers: Vec<DenseLayer> = config
            .head_widths()?
            .into_iter()
            .map(|(fan_in, out)| {
                let bound = (6.0 / fan_in as f32).sqrt();
                DenseLayer {
                    weight: Tensor::uniform([out, fan_in], -bound, bound, &mut rng),
                    bias: Tensor::zeros([out]),
                }
            })
            .collect();
        let blackbox = BlackBoxHead { layers };
        let head = match config.head {
            HeadKind::BlackBox => Head::BlackBox(blackbox),
            HeadKind::SoftCam => Head::SoftCam(convert_head(&blackbox)),
        };
        Ok(Self {
            config,
            backbone,
            head,
            passes: PassCounter::default(),
        })
    }

    /// Assembles a model from explicit weights, checking them against `config`.
    pub fn from_parts(config: ModelConfig, backbone: Vec<ConvLayer>, head: Head) -> Result<Self> {
        let template = Self::init(config.clone())?;
        if head.kind() != config.head {
            return Err(Error::Config(format!(
                "head kind {:?} does not match config {:?}",
                head.kind(),
                config.head
            )));
        }
        let model = Self {
            config,
            backbone,
            head,
            passes: PassCounter::default(),
        };
        let expected = template.parameters();
        let got = model.parameters();
        if expected.len() != got.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                got.len()
            )));
        }
        for ((name, want), (_, have)) in expected.iter().zip(&got) {
            if want.shape() != have.shape() {
                return Err(Error::shape(
                    "model",
                    format!("{name}: expected {:?}, got {:?}", want.shape(), have.shape()),
                ));
            }
        }
        for (layer, block) in model.backbone.iter().zip(&model.config.backbone.blocks) {
            if layer.stride != block.stride
                || layer.padding != block.padding
                || layer.pool != block.pool
                || layer.relu != block.relu
            {
                return Err(Error::Config("backbone layer does not match block config".into()));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn config_digest(&self) -> String {
        self.config.digest()
    }

    pub fn seed(&self) -> u64 {
        self.config.backbone.seed
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind()
    }

    pub fn backbone(&self) -> &[ConvLayer] {
        &self.backbone
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let i = self.config.backbone.input;
        [i.channels, i.height, i.width]
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        let (d, n, m) = self.config.backbone.feature_shape().expect("validated at construction");
        [d, n, m]
    }

    /// Named parameter tensors in canonical order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}.weight"), &l.weight));
            out.push((format!("backbone.{i}.bias"), &l.bias));
        }
        for (i, l) in self.head.layers().iter().enumerate() {
            out.push((format!("head.{i}.weight"), &l.weight));
            out.push((format!("head.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.backbone {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in self.head.layers_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces the black-box head with its 1×1-convolution equivalent.
    pub fn to_softcam(&self) -> Result<ModelBundle> {
        let Head::BlackBox(bb) = &self.head else {
            return Err(Error::Unsupported("model already has a class-evidence head".into()));
        };
        let mut config = self.config.clone();
        config.head = HeadKind::SoftCam;
        Ok(ModelBundle {
            config,
            backbone: self.backbone.clone(),
            head: Head::SoftCam(convert_head(bb)),
            passes: PassCounter::default(),
        })
    }

    pub fn passes(&self) -> PassCounts {
        PassCounts {
            forward: self.passes.forward.load(Ordering::Relaxed),
            backward: self.passes.backward.load(Ordering::Relaxed),
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let expected = self.input_shape();
        if image.shape() != expected {
            return Err(Error::shape(
                "model",
                format!("image shape {:?} does not match configured input {:?}", image.shape(), expected),
            ));
        }
        Ok(())
    }

    /// Backbone output `Z` of shape `[D, N, M]`.
    pub fn forward_features(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut x = image.clone();
        for layer in &self.backbone {
            x = ops::conv2d(&x, &layer.weight, &layer.bias, layer.stride, layer.padding)?;
            if layer.relu {
                x = ops::relu(&x);
            }
            if layer.pool {
                x = ops::maxpool2(&x)?;
            }
        }
        Ok(x)
    }

    /// Tape-free forward pass through either head.
    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        self.passes.forward.fetch_add(1, Ordering::Relaxed);
        let features = self.forward_features(image)?;
        let (evidence, logits) = match &self.head {
            Head::BlackBox(h) => {
                let mut v = ops::global_avg_pool(&features)?;
                for (i, l) in h.layers.iter().enumerate() {
                    if i > 0 {
                        v = ops::relu(&v);
                    }
                    v = ops::linear(&v, &l.weight, &l.bias)?;
                }
                (None, v)
            }
            Head::SoftCam(h) => {
                let mut a = features.clone();
                for (i, l) in h.layers.iter().enumerate() {
                    if i > 0 {
                        a = ops::relu(&a);
                    }
                    a = ops::conv2d(&a, &l.weight, &l.bias, 1, 0)?;
                }
                let logits = ops::global_avg_pool(&a)?;
                (Some(a), logits)
            }
        };
        let probs = ops::softmax(&logits)?;
        Ok(Prediction {
            features,
            evidence,
            logits,
            probs,
        })
    }

    /// `(logits, probs)` of a black-box model: `softmax(FC(GAP(Z)))`.
    pub fn blackbox_forward(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        if self.head_kind() != HeadKind::BlackBox {
            return Err(Error::Unsupported("blackbox_forward requires a black-box head".into()));
        }
        let p = self.predict(image)?;
        Ok((p.logits, p.probs))
    }

    /// `(evidence, logits, probs)` of a class-evidence model, with
    /// `logits[c]` the spatial mean of `evidence[c]`.
    pub fn softcam_forward(&self, image: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if self.head_kind() != HeadKind::SoftCam {
            return Err(Error::Unsupported("softcam_forward requires a class-evidence head".into()));
        }
        let p = self.predict(image)?;
        Ok((p.evidence.expect("evidence head"), p.logits, p.probs))
    }

    /// Records a forward pass on `tape` with parameters as leaves.
    pub fn trace(&self, tape: &mut Tape, image: &Tensor) -> Result<Trace> {
        self.check_image(image)?;
        self.passes.forward.fetch_add(1, Ordering::Relaxed);
        let input = tape.leaf(image.clone());
        let mut params = Vec::new();
        let mut x = input;
        for layer in &self.backbone {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            params.extend([w, b]);
            x = tape.conv2d(x, w, b, layer.stride, layer.padding)?;
            if layer.relu {
                x = tape.relu(x)?;
            }
            if layer.pool {
                x = tape.maxpool2(x)?;
            }
        }
        let features = x;
        let (evidence, logits) = match &self.head {
            Head::BlackBox(h) => {
                let mut v = tape.global_avg_pool(features)?;
                for (i, l) in h.layers.iter().enumerate() {
                    if i > 0 {
                        v = tape.relu(v)?;
                    }
                    let w = tape.leaf(l.weight.clone());
                    let b = tape.leaf(l.bias.clone());
                    params.extend([w, b]);
                    v = tape.linear(v, w, b)?;
                }
                (None, v)
            }
            Head::SoftCam(h) => {
                let mut a = features;
                for (i, l) in h.layers.iter().enumerate() {
                    if i > 0 {
                        a = tape.relu(a)?;
                    }
                    let w = tape.leaf(l.weight.clone());
                    let b = tape.leaf(l.bias.clone());
                    params.extend([w, b]);
                    a = tape.conv2d(a, w, b, 1, 0)?;
                }
                (Some(a), tape.global_avg_pool(a)?)
            }
        };
        let probs = tape.softmax(logits)?;
        Ok(Trace {
            input,
            params,
            features,
            evidence,
            logits,
            probs,
        })
    }

    /// Backward sweep over a tape produced by [`ModelBundle::trace`], counted
    /// as one backward pass of this model.
    pub fn backward(&self, tape: &Tape, output: NodeId) -> Result<Gradients> {
        self.passes.backward.fetch_add(1, Ordering::Relaxed);
        tape.backward(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(head: HeadKind, preset: HeadPreset, classes: usize, seed: u64) -> ModelConfig {
        let backbone = BackboneConfig {
            input: InputShape {
                channels: 1,
                height: 8,
                width: 8,
            },
            blocks: vec![BlockConfig::new(4), BlockConfig::new(6)],
            seed,
        };
        ModelConfig::new(backbone, classes, head, preset)
    }

    #[test]
    fn default_backbone_yields_128x8x8() {
        let cfg = ModelConfig::new(BackboneConfig::default(), 2, HeadKind::BlackBox, HeadPreset::ResnetStyle);
        let model = ModelBundle::init(cfg).unwrap();
        let z = model.forward_features(&Tensor::zeros([1, 64, 64])).unwrap();
        assert_eq!(z.shape(), &[128, 8, 8]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_spatial_feature_map() {
        let mut backbone = BackboneConfig::default();
        // 8x8 -> 4x4 -> 2x2 -> 1x1
        for _ in 0..3 {
            backbone.blocks.push(BlockConfig::new(8));
        }
        let cfg = ModelConfig::new(backbone, 2, HeadKind::SoftCam, HeadPreset::ResnetStyle);
        assert!(matches!(ModelBundle::init(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_wrong_image_shape() {
        let model = ModelBundle::init(small_config(HeadKind::SoftCam, HeadPreset::ResnetStyle, 2, 0)).unwrap();
        assert!(model.predict(&Tensor::zeros([1, 8, 6])).is_err());
        assert!(model.blackbox_forward(&Tensor::zeros([1, 8, 8])).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelBundle::init(small_config(HeadKind::BlackBox, HeadPreset::VggStyle, 3, 5)).unwrap();
        let b = ModelBundle::init(small_config(HeadKind::BlackBox, HeadPreset::VggStyle, 3, 5)).unwrap();
        let c = ModelBundle::init(small_config(HeadKind::BlackBox, HeadPreset::VggStyle, 3, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.parameters() {
            let fan_in = if t.rank() >= 2 { t.numel() / t.shape()[0] } else { 0 };
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                let bound = (6.0 / fan_in as f32).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn conversion_preserves_parameters() {
        for preset in [HeadPreset::ResnetStyle, HeadPreset::VggStyle] {
            let bb = ModelBundle::init(small_config(HeadKind::BlackBox, preset, 4, 1)).unwrap();
            let sc = bb.to_softcam().unwrap();
            assert_eq!(bb.parameter_count(), sc.parameter_count());
            assert_eq!(bb.head().parameter_count(), sc.head().parameter_count());
            for ((_, a), (_, b)) in bb.parameters().iter().zip(sc.parameters()) {
                assert_eq!(a.data(), b.data());
            }
            assert_eq!(sc.head().layers().len(), preset.hidden_widths().len() + 1);
        }
    }

    #[test]
    fn softcam_head_initialises_like_converted_head() {
        let bb = ModelBundle::init(small_config(HeadKind::BlackBox, HeadPreset::ResnetStyle, 2, 9)).unwrap();
        let sc = ModelBundle::init(small_config(HeadKind::SoftCam, HeadPreset::ResnetStyle, 2, 9)).unwrap();
        assert_eq!(bb.to_softcam().unwrap(), sc);
    }

    #[test]
    fn tape_and_direct_forward_agree_bitwise() {
        let model = ModelBundle::init(small_config(HeadKind::SoftCam, HeadPreset::VggStyle, 5, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::uniform([1, 8, 8], -1.0, 1.0, &mut rng);
        let direct = model.predict(&img).unwrap();
        let mut tape = Tape::new();
        let trace = model.trace(&mut tape, &img).unwrap();
        assert_eq!(tape.value(trace.logits).unwrap(), &direct.logits);
        assert_eq!(tape.value(trace.evidence.unwrap()).unwrap(), direct.evidence.as_ref().unwrap());
        assert_eq!(tape.value(trace.features).unwrap().shape(), &[6, 2, 2]);
        assert_eq!(direct.evidence.unwrap().shape(), &[5, 2, 2]);
    }

    #[test]
    fn pass_counter_tracks_forward_and_backward() {
        let model = ModelBundle::init(small_config(HeadKind::SoftCam, HeadPreset::ResnetStyle, 2, 2)).unwrap();
        let img = Tensor::ones([1, 8, 8]);
        model.predict(&img).unwrap();
        let mut tape = Tape::new();
        let trace = model.trace(&mut tape, &img).unwrap();
        let s = tape.select(trace.logits, 0).unwrap();
        model.backward(&tape, s).unwrap();
        assert_eq!(model.passes(), PassCounts { forward: 2, backward: 1 });
        assert_eq!(model.clone().passes(), PassCounts::default());
    }
}
