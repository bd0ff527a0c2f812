//! Validated, tape-free tensor operations.
//!
//! Images and feature maps are single samples laid out `[C, H, W]`.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

pub(crate) fn conv_geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    const OP: &str = "conv2d";
    input.expect_rank(OP, "input", 3)?;
    kernel.expect_rank(OP, "kernel", 4)?;
    bias.expect_rank(OP, "bias", 1)?;
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, kci, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kci != ci {
        return Err(Error::shape(
            OP,
            format!("kernel in_channels {kci} does not match input channels {ci}"),
        ));
    }
    if bias.shape()[0] != co {
        return Err(Error::shape(
            OP,
            format!("bias length {} does not match out_channels {co}", bias.shape()[0]),
        ));
    }
    if stride == 0 {
        return Err(Error::shape(OP, "stride must be positive"));
    }
    if kh > h + 2 * padding {
        return Err(Error::shape(
            OP,
            format!("kernel height {kh} exceeds padded input height {}", h + 2 * padding),
        ));
    }
    if kw > w + 2 * padding {
        return Err(Error::shape(
            OP,
            format!("kernel width {kw} exceeds padded input width {}", w + 2 * padding),
        ));
    }
    Ok(ConvGeometry {
        in_channels: ci,
        height: h,
        width: w,
        out_channels: co,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
    })
}

/// Cross-correlation of a `[C_in, H, W]` input with a `[C_out, C_in, kH, kW]` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geo = conv_geometry(input, kernel, bias, stride, padding)?;
    let data = kernels::conv2d_forward(&geo, input.data(), kernel.data(), bias.data());
    Tensor::new([geo.out_channels, geo.out_h(), geo.out_w()], data)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub(crate) fn pool_extents(input: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank("maxpool2", "input", 3)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 {
        return Err(Error::shape("maxpool2", format!("height {h} is odd")));
    }
    if w % 2 != 0 {
        return Err(Error::shape("maxpool2", format!("width {w} is odd")));
    }
    Ok((c, h, w))
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = pool_extents(input)?;
    let (data, _) = kernels::maxpool2_forward(c, h, w, input.data());
    Tensor::new([c, h / 2, w / 2], data)
}

/// Per-channel spatial mean of a `[C, H, W]` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    input.expect_rank("global_avg_pool", "input", 3)?;
    let c = input.shape()[0];
    let plane = input.shape()[1] * input.shape()[2];
    Tensor::new([c], kernels::global_avg_pool(c, plane, input.data()))
}

pub(crate) fn check_linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<()> {
    const OP: &str = "linear";
    input.expect_rank(OP, "input", 1)?;
    weight.expect_rank(OP, "weight", 2)?;
    bias.expect_rank(OP, "bias", 1)?;
    if weight.shape()[1] != input.shape()[0] {
        return Err(Error::shape(
            OP,
            format!(
                "weight in_features {} does not match input length {}",
                weight.shape()[1],
                input.shape()[0]
            ),
        ));
    }
    if bias.shape()[0] != weight.shape()[0] {
        return Err(Error::shape(
            OP,
            format!(
                "bias length {} does not match out_features {}",
                bias.shape()[0],
                weight.shape()[0]
            ),
        ));
    }
    Ok(())
}

/// Affine map `W·x + b` with `W` of shape `[out, in]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_linear(input, weight, bias)?;
    Tensor::new(
        [weight.shape()[0]],
        kernels::linear_forward(input.data(), weight.data(), bias.data()),
    )
}

/// Max-shifted softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank("softmax", "logits", 1)?;
    Tensor::new(logits.shape().to_vec(), kernels::softmax(logits.data()))
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f32> {
    probs.expect_rank("cross_entropy", "probs", 1)?;
    let classes = probs.shape()[0];
    if label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(-probs.data()[label].max(kernels::PROB_FLOOR).ln())
}

/// Align-corners-false bilinear resize of every channel of a `[C, h, w]`
/// tensor (or a single `[h, w]` plane) to `target`.
pub fn upsample_bilinear(input: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => {
            return Err(Error::shape(
                "upsample_bilinear",
                format!("expected [C, h, w] or [h, w], got {:?}", input.shape()),
            ))
        }
    };
    let (th, tw) = target;
    if th < h || tw < w {
        return Err(Error::shape(
            "upsample_bilinear",
            format!("target {th}x{tw} is smaller than source {h}x{w}"),
        ));
    }
    let data = kernels::upsample_bilinear(c, (h, w), (th, tw), input.data());
    if input.rank() == 2 {
        Tensor::new([th, tw], data)
    } else {
        Tensor::new([c, th, tw], data)
    }
}
