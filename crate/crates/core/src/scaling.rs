//! Compound width/depth scaling and the embedded base backbone tables.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub width: f64,
    pub depth: f64,
    pub depth_divisor: usize,
    pub min_depth: usize,
}

impl ScalingParams {
    /// Divisor 8 with the minimum depth tied to it.
    pub fn new(width: f64, depth: f64) -> Self {
        ScalingParams {
            width,
            depth,
            depth_divisor: 8,
            min_depth: 8,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.depth > 0.0) {
            return Err(Error::Config(format!(
                "scaling coefficients must be positive (width {}, depth {})",
                self.width, self.depth
            )));
        }
        if self.depth_divisor == 0 || self.min_depth == 0 {
            return Err(Error::Config("depth divisor and minimum depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Named compound-scaling presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfficientNetVariant {
    B0,
    B4,
    /// Coefficients taken from the reference EfficientNet family, not from this
    /// project's own experiments.
    B5,
}

impl EfficientNetVariant {
    pub fn params(self) -> ScalingParams {
        match self {
            EfficientNetVariant::B0 => ScalingParams::new(1.0, 1.0),
            EfficientNetVariant::B4 => ScalingParams::new(1.4, 1.8),
            EfficientNetVariant::B5 => ScalingParams::new(1.6, 2.2),
        }
    }
}

/// Width scaling rounded to a multiple of the depth divisor, never dropping
/// more than 10% below the exact scaled value.
pub fn round_filters(filters: usize, p: &ScalingParams) -> usize {
    let scaled = p.width * filters as f64;
    let div = p.depth_divisor as f64;
    let rounded = ((scaled + div / 2.0) / div).floor() as usize * p.depth_divisor;
    let mut out = rounded.max(p.min_depth);
    if (out as f64) < 0.9 * scaled {
        out += p.depth_divisor;
    }
    out
}

/// `ceil(depth * repeats)`.
pub fn round_repeats(repeats: usize, depth: f64) -> usize {
    (depth * repeats as f64).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// MBConv without an expansion conv (expansion ratio 1), with SE.
    MbConv1,
    /// MBConv with expansion ratio 6, with SE.
    MbConv6,
    /// MobileNet-V2 inverted residual (no SE) with the given expansion.
    InvertedResidual { expansion: usize },
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::MbConv1 => 1,
            BlockKind::MbConv6 => 6,
            BlockKind::InvertedResidual { expansion } => expansion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub kind: BlockKind,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    pub repeats: usize,
    pub se_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneName {
    EfficientNet,
    MobileNetV2,
}

impl BackboneName {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::EfficientNet => "efficientnet",
            BackboneName::MobileNetV2 => "mobilenet_v2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "efficientnet" => Ok(BackboneName::EfficientNet),
            "mobilenet_v2" | "mobilenet-v2" => Ok(BackboneName::MobileNetV2),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }

    pub fn base_table(self) -> BackboneTable {
        match self {
            BackboneName::EfficientNet => BackboneTable::efficientnet_b0(),
            BackboneName::MobileNetV2 => BackboneTable::mobilenet_v2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneTable {
    pub name: BackboneName,
    pub stem_filters: usize,
    pub stages: Vec<StageConfig>,
    pub head_filters: usize,
}

impl BackboneTable {
    pub fn efficientnet_b0() -> Self {
        let st = |kind, kernel, stride, filters, repeats| StageConfig {
            kind,
            kernel,
            stride,
            filters,
            repeats,
            se_ratio: Some(0.25),
        };
        use BlockKind::{MbConv1, MbConv6};
        BackboneTable {
            name: BackboneName::EfficientNet,
            stem_filters: 32,
            stages: vec![
                st(MbConv1, 3, 1, 16, 1),
                st(MbConv6, 3, 2, 24, 2),
                st(MbConv6, 5, 2, 40, 2),
                st(MbConv6, 3, 2, 80, 3),
                st(MbConv6, 5, 1, 112, 3),
                st(MbConv6, 5, 2, 192, 4),
                st(MbConv6, 3, 1, 320, 1),
            ],
            head_filters: 1280,
        }
    }

    pub fn mobilenet_v2() -> Self {
        let st = |expansion, filters, repeats, stride| StageConfig {
            kind: BlockKind::InvertedResidual { expansion },
            kernel: 3,
            stride,
            filters,
            repeats,
            se_ratio: None,
        };
        BackboneTable {
            name: BackboneName::MobileNetV2,
            stem_filters: 32,
            stages: vec![
                st(1, 16, 1, 1),
                st(6, 24, 2, 2),
                st(6, 32, 3, 2),
                st(6, 64, 4, 2),
                st(6, 96, 3, 1),
                st(6, 160, 3, 2),
                st(6, 320, 1, 1),
            ],
            head_filters: 1280,
        }
    }

    pub fn total_stride(&self) -> usize {
        // The stem conv contributes a factor of two.
        2 * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel % 2 == 0 || !(1..=2).contains(&s.stride) || s.repeats == 0 || s.filters == 0 {
                return Err(Error::Config(format!("stage {i} is malformed: {s:?}")));
            }
        }
        if self.total_stride() != 32 {
            return Err(Error::Config(format!("total stride is {}, expected 32", self.total_stride())));
        }
        Ok(())
    }

    /// Applies width scaling to every filter count and depth scaling to every
    /// repeat count. The receiver is left untouched.
    pub fn scaled(&self, p: &ScalingParams) -> BackboneTable {
        BackboneTable {
            name: self.name,
            stem_filters: round_filters(self.stem_filters, p),
            stages: self
                .stages
                .iter()
                .map(|s| StageConfig {
                    filters: round_filters(s.filters, p),
                    repeats: round_repeats(s.repeats, p.depth),
                    ..*s
                })
                .collect(),
            head_filters: round_filters(self.head_filters, p),
        }
    }
}

/// `scaled_backbone` as a free function.
pub fn scaled_backbone(table: &BackboneTable, p: &ScalingParams) -> BackboneTable {
    table.scaled(p)
}

/// One stage per line, for audit.
impl fmt::Display for BackboneTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backbone {}", self.name.as_str())?;
        writeln!(f, "stem filters={}", self.stem_filters)?;
        for (i, s) in self.stages.iter().enumerate() {
            let kind = match s.kind {
                BlockKind::MbConv1 => "mbconv1".to_string(),
                BlockKind::MbConv6 => "mbconv6".to_string(),
                BlockKind::InvertedResidual { expansion } => format!("inverted_residual(t={expansion})"),
            };
            let se = s.se_ratio.map_or("none".to_string(), |r| format!("{r}"));
            writeln!(
                f,
                "stage {} kind={kind} kernel={} stride={} filters={} repeats={} se={se}",
                i + 1,
                s.kernel,
                s.stride,
                s.filters,
                s.repeats
            )?;
        }
        write!(f, "head filters={}", self.head_filters)
    }
}
