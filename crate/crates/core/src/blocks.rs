//! Composite blocks: MBConv with squeeze-and-excitation, the MobileNet-V2
//! inverted residual, and the dense refinement unit.

use crate::autodiff::{BnParams, Exec};
use crate::error::TensorError;
use crate::init::Initializer;
use crate::ops::Conv2dOptions;
use crate::params::ParamId;

/// Convolution (no bias) followed by batch norm.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub weight: ParamId,
    pub bn: BnParams,
    pub opts: Conv2dOptions,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Initializer<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self, TensorError> {
        Ok(ConvBn {
            weight: init.conv(&format!("{name}.conv"), cout, cin / groups, kernel, kernel, groups)?,
            bn: init.batch_norm(&format!("{name}.bn"), cout)?,
            opts: Conv2dOptions {
                stride,
                groups,
                ..Default::default()
            },
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let y = ex.conv2d(x, self.weight, None, self.opts)?;
        ex.batch_norm(&y, &self.bn)
    }

    pub fn forward_swish<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let y = self.forward(ex, x)?;
        ex.swish(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub se_ratio: Option<f64>,
}

impl MbConvConfig {
    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expanded_channels(&self) -> usize {
        self.in_channels * self.expansion
    }

    /// Squeeze width, taken from the block's input channels.
    pub fn se_channels(&self) -> Option<usize> {
        self.se_ratio
            .map(|r| ((self.in_channels as f64 * r).ceil() as usize).max(1))
    }
}

#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: (ParamId, ParamId),
    pub expand: (ParamId, ParamId),
}

impl SqueezeExcite {
    /// Gate in (0, 1) per `[N, C]`.
    pub fn gate<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let pooled = ex.global_avg_pool(x)?;
        let s = ex.linear(&pooled, self.reduce.0, Some(self.reduce.1))?;
        let s = ex.swish(&s)?;
        let s = ex.linear(&s, self.expand.0, Some(self.expand.1))?;
        ex.sigmoid(&s)
    }
}

/// Mobile inverted bottleneck: expand, depthwise, optional SE, linear projection,
/// and an identity skip when stride is 1 and channel counts match.
#[derive(Debug, Clone)]
pub struct MbConv {
    pub cfg: MbConvConfig,
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBn,
}

impl MbConv {
    pub fn new(init: &mut Initializer<'_>, name: &str, cfg: MbConvConfig) -> Result<Self, TensorError> {
        if cfg.expansion == 0 || cfg.kernel % 2 == 0 || cfg.stride == 0 {
            return Err(TensorError::invalid("mbconv", format!("bad config {cfg:?}")));
        }
        let hidden = cfg.expanded_channels();
        let expand = if cfg.expansion != 1 {
            Some(ConvBn::new(init, &format!("{name}.expand"), cfg.in_channels, hidden, 1, 1, 1)?)
        } else {
            None
        };
        let depthwise = ConvBn::new(init, &format!("{name}.depthwise"), hidden, hidden, cfg.kernel, cfg.stride, hidden)?;
        let se = match cfg.se_channels() {
            Some(squeeze) => Some(SqueezeExcite {
                reduce: init.linear(&format!("{name}.se.reduce"), squeeze, hidden)?,
                expand: init.linear(&format!("{name}.se.expand"), hidden, squeeze)?,
            }),
            None => None,
        };
        let project = ConvBn::new(init, &format!("{name}.project"), hidden, cfg.out_channels, 1, 1, 1)?;
        Ok(MbConv {
            cfg,
            expand,
            depthwise,
            se,
            project,
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let c = ex.shape_of(x).get(1).copied().unwrap_or(0);
        if c != self.cfg.in_channels {
            return Err(TensorError::DimMismatch {
                op: "mbconv",
                dim: "input channels",
                expected: self.cfg.in_channels,
                actual: c,
            });
        }
        let mut h = match &self.expand {
            Some(e) => {
                let expanded = e.forward_swish(ex, x)?;
                self.depthwise.forward_swish(ex, &expanded)?
            }
            None => self.depthwise.forward_swish(ex, x)?,
        };
        if let Some(se) = &self.se {
            let gate = se.gate(ex, &h)?;
            h = ex.scale_channels(&h, &gate)?;
        }
        let out = self.project.forward(ex, &h)?;
        if self.cfg.has_skip() {
            ex.add(&out, x)
        } else {
            Ok(out)
        }
    }
}

/// MobileNet-V2 inverted residual: an MBConv without the SE stage.
#[derive(Debug, Clone)]
pub struct InvertedResidual(pub MbConv);

impl InvertedResidual {
    pub fn new(init: &mut Initializer<'_>, name: &str, cfg: MbConvConfig) -> Result<Self, TensorError> {
        let cfg = MbConvConfig { se_ratio: None, ..cfg };
        Ok(InvertedResidual(MbConv::new(init, name, cfg)?))
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        self.0.forward(ex, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinementConfig {
    pub growth_rate: usize,
    pub bottleneck_factor: usize,
    pub num_units: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            growth_rate: 32,
            bottleneck_factor: 4,
            num_units: 16,
        }
    }
}

impl RefinementConfig {
    pub fn output_channels(&self, input: usize) -> usize {
        input + self.num_units * self.growth_rate
    }
}

/// Dense refinement unit: BN, swish, 1x1 conv to `bottleneck * k`, BN, swish,
/// 3x3 conv to `k`; the result is appended to the input along channels.
#[derive(Debug, Clone)]
pub struct RefinementUnit {
    pub in_channels: usize,
    pub growth_rate: usize,
    pub norm1: BnParams,
    pub conv1: ParamId,
    pub norm2: BnParams,
    pub conv2: ParamId,
}

impl RefinementUnit {
    pub fn new(init: &mut Initializer<'_>, name: &str, in_channels: usize, cfg: &RefinementConfig) -> Result<Self, TensorError> {
        if cfg.growth_rate == 0 || cfg.bottleneck_factor == 0 {
            return Err(TensorError::invalid("refinement_unit", "growth rate and bottleneck factor must be >= 1"));
        }
        let inner = cfg.bottleneck_factor * cfg.growth_rate;
        Ok(RefinementUnit {
            in_channels,
            growth_rate: cfg.growth_rate,
            norm1: init.batch_norm(&format!("{name}.norm1"), in_channels)?,
            conv1: init.conv(&format!("{name}.conv1"), inner, in_channels, 1, 1, 1)?,
            norm2: init.batch_norm(&format!("{name}.norm2"), inner)?,
            conv2: init.conv(&format!("{name}.conv2"), cfg.growth_rate, inner, 3, 3, 1)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.growth_rate
    }

    /// The new `k` feature maps, before concatenation.
    pub fn features<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let h = ex.batch_norm(x, &self.norm1)?;
        let h = ex.swish(&h)?;
        let h = ex.conv2d(&h, self.conv1, None, Conv2dOptions::default())?;
        let h = ex.batch_norm(&h, &self.norm2)?;
        let h = ex.swish(&h)?;
        ex.conv2d(&h, self.conv2, None, Conv2dOptions::default())
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        let f = self.features(ex, x)?;
        ex.concat_channels(&[x, &f])
    }
}
