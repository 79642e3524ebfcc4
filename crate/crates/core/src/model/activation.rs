//! Final-layer activation maps.

use crate::error::{Result, TensorError};
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

use super::Model;

/// Channel mean of a `[1, C, h, w]` feature map, min-max normalized to [0, 1]
/// and bilinearly upsampled to `[out_h, out_w]`. A constant map yields zeros.
pub fn heatmap_from_features(features: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (n, c, h, w) = features.dims4("activation_map")?;
    if n != 1 {
        return Err(TensorError::DimMismatch { op: "activation_map", dim: "batch", expected: 1, actual: n });
    }
    let hw = h * w;
    let mut mean = vec![0.0; hw];
    for plane in features.data().chunks_exact(hw) {
        mean.iter_mut().zip(plane).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let (lo, hi) = mean.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        mean.iter_mut().for_each(|m| *m = (*m - lo) / range);
    } else {
        mean.fill(0.0);
    }
    let up = resize_bilinear(&mean, 1, h, w, out_h, out_w);
    Tensor::new(vec![out_h, out_w], up.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Eval-mode heatmap of the last feature map for one `[1, 3, H, W]` image.
pub fn activation_map(model: &Model, image: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = image.dims4("activation_map")?;
    let out = model.predict(image)?;
    Ok(heatmap_from_features(&out.features, h, w)?)
}
