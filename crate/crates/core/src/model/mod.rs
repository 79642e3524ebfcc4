//! Network assembly: backbone, refinement stack and hierarchical heads.

mod accounting;
mod activation;
pub(crate) mod checkpoint;

pub use accounting::{count_macs, count_params, layer_table, write_layer_csv, LayerRow, MacReport, ParamReport};
pub use activation::{activation_map, heatmap_from_features};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, read_tensors, save_checkpoint, write_tensors, NamedTensor, FORMAT_VERSION, MAGIC};

use crate::autodiff::{BnParams, Exec, Infer};
use crate::blocks::{ConvBn, InvertedResidual, MbConv, MbConvConfig, RefinementConfig, RefinementUnit};
use crate::config::KeyValues;
use crate::error::{Error, Result, TensorError};
use crate::init::Initializer;
use crate::params::{ParamId, ParamStore};
use crate::scaling::{BackboneName, BackboneTable, BlockKind, EfficientNetVariant, ScalingParams};
use crate::tensor::{PrecisionMode, Tensor};

/// Declarative description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub backbone: BackboneName,
    pub scaling: ScalingParams,
    pub refinement: RefinementConfig,
    /// Class count per head, coarse to fine.
    pub heads: Vec<usize>,
    pub input_size: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::ypose()
    }
}

impl ModelSpec {
    /// B4 backbone, 16 refinement units, heads 6/20/82.
    pub fn ypose() -> Self {
        ModelSpec {
            backbone: BackboneName::EfficientNet,
            scaling: EfficientNetVariant::B4.params(),
            refinement: RefinementConfig::default(),
            heads: vec![6, 20, 82],
            input_size: 224,
            dropout_rate: 0.4,
        }
    }

    /// MobileNet-V2 backbone with the same refinement stack and heads.
    pub fn ypose_lite() -> Self {
        ModelSpec {
            backbone: BackboneName::MobileNetV2,
            scaling: ScalingParams::identity(),
            ..Self::ypose()
        }
    }

    /// Bare EfficientNet baseline with a single 82-way head.
    pub fn efficientnet(variant: EfficientNetVariant) -> Self {
        ModelSpec {
            backbone: BackboneName::EfficientNet,
            scaling: variant.params(),
            refinement: RefinementConfig { num_units: 0, ..Default::default() },
            heads: vec![82],
            input_size: 224,
            dropout_rate: 0.4,
        }
    }

    pub fn mobilenet_v2() -> Self {
        ModelSpec {
            backbone: BackboneName::MobileNetV2,
            scaling: ScalingParams::identity(),
            ..Self::efficientnet(EfficientNetVariant::B0)
        }
    }

    /// Narrow, shallow network for desk-scale runs on the toy corpus.
    pub fn toy() -> Self {
        ModelSpec {
            backbone: BackboneName::EfficientNet,
            scaling: ScalingParams::new(0.25, 0.25),
            refinement: RefinementConfig { growth_rate: 8, bottleneck_factor: 4, num_units: 2 },
            heads: vec![2, 4, 8],
            input_size: 32,
            dropout_rate: 0.4,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "ypose" => Self::ypose(),
            "ypose-lite" | "ypose_lite" => Self::ypose_lite(),
            "b0" => Self::efficientnet(EfficientNetVariant::B0),
            "b4" => Self::efficientnet(EfficientNetVariant::B4),
            "b5" => Self::efficientnet(EfficientNetVariant::B5),
            "mobilenet-v2" | "mobilenet_v2" => Self::mobilenet_v2(),
            "toy" => Self::toy(),
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scaling.validate()?;
        if self.heads.is_empty() || self.heads.contains(&0) {
            return Err(Error::Config(format!("heads must be a non-empty list of positive class counts, got {:?}", self.heads)));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!("input size {} is not a positive multiple of 32", self.input_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.refinement.growth_rate == 0 || self.refinement.bottleneck_factor == 0 {
            return Err(Error::Config("growth rate and bottleneck factor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn table(&self) -> BackboneTable {
        self.backbone.base_table().scaled(&self.scaling)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("backbone", self.backbone.as_str());
        kv.set("width", self.scaling.width);
        kv.set("depth", self.scaling.depth);
        kv.set("depth_divisor", self.scaling.depth_divisor);
        kv.set("min_depth", self.scaling.min_depth);
        kv.set("refinement_units", self.refinement.num_units);
        kv.set("growth_rate", self.refinement.growth_rate);
        kv.set("bottleneck_factor", self.refinement.bottleneck_factor);
        kv.set("heads", self.heads.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        kv.set("input_size", self.input_size);
        kv.set("dropout", self.dropout_rate);
        kv
    }

    /// Reads spec keys from `kv`, starting from `base` for any key not present.
    pub fn from_key_values(kv: &KeyValues, base: &ModelSpec) -> Result<Self> {
        let mut s = base.clone();
        if let Some(b) = kv.get_str("backbone") {
            s.backbone = BackboneName::parse(b)?;
        }
        if let Some(v) = kv.get("width")? {
            s.scaling.width = v;
        }
        if let Some(v) = kv.get("depth")? {
            s.scaling.depth = v;
        }
        if let Some(v) = kv.get("depth_divisor")? {
            s.scaling.depth_divisor = v;
        }
        if let Some(v) = kv.get("min_depth")? {
            s.scaling.min_depth = v;
        }
        if let Some(v) = kv.get("refinement_units")? {
            s.refinement.num_units = v;
        }
        if let Some(v) = kv.get("growth_rate")? {
            s.refinement.growth_rate = v;
        }
        if let Some(v) = kv.get("bottleneck_factor")? {
            s.refinement.bottleneck_factor = v;
        }
        if let Some(v) = kv.get_list("heads")? {
            s.heads = v;
        }
        if let Some(v) = kv.get("input_size")? {
            s.input_size = v;
        }
        if let Some(v) = kv.get("dropout")? {
            s.dropout_rate = v;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().to_text()
    }

    /// FNV-1a over the canonical text form.
    pub fn hash(&self) -> u64 {
        self.to_text()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

#[derive(Debug, Clone)]
pub enum BackboneBlock {
    MbConv(MbConv),
    InvertedResidual(InvertedResidual),
}

impl BackboneBlock {
    fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value, TensorError> {
        match self {
            BackboneBlock::MbConv(b) => b.forward(ex, x),
            BackboneBlock::InvertedResidual(b) => b.forward(ex, x),
        }
    }

    pub fn config(&self) -> &MbConvConfig {
        match self {
            BackboneBlock::MbConv(b) => &b.cfg,
            BackboneBlock::InvertedResidual(b) => &b.0.cfg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMetadata {
    pub spec_hash: u64,
    pub seed: u64,
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<V> {
    /// Final feature map fed to global pooling.
    pub features: V,
    /// One probability matrix `[N, classes]` per head.
    pub probs: Vec<V>,
}

/// A built network: the layer structure plus its named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    stem: ConvBn,
    blocks: Vec<BackboneBlock>,
    head: ConvBn,
    refinement: Vec<RefinementUnit>,
    /// Closing norm of the refinement stack; present only when it has units.
    refinement_norm: Option<BnParams>,
    classifiers: Vec<(ParamId, ParamId)>,
    metadata: ModelMetadata,
}

impl Model {
    /// Builds and initializes the network described by `spec`; `seed` fixes every weight.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let table = spec.table();
        table.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(&mut params, seed);

        let stem = ConvBn::new(&mut init, "stem", 3, table.stem_filters, 3, 2, 1)?;
        let mut blocks = Vec::new();
        let mut channels = table.stem_filters;
        for (si, stage) in table.stages.iter().enumerate() {
            for r in 0..stage.repeats {
                let cfg = MbConvConfig {
                    in_channels: channels,
                    out_channels: stage.filters,
                    expansion: stage.kind.expansion(),
                    kernel: stage.kernel,
                    stride: if r == 0 { stage.stride } else { 1 },
                    se_ratio: stage.se_ratio,
                };
                let name = format!("blocks.{si}.{r}");
                let block = match stage.kind {
                    BlockKind::MbConv1 | BlockKind::MbConv6 => BackboneBlock::MbConv(MbConv::new(&mut init, &name, cfg)?),
                    BlockKind::InvertedResidual { .. } => {
                        BackboneBlock::InvertedResidual(InvertedResidual::new(&mut init, &name, cfg)?)
                    }
                };
                blocks.push(block);
                channels = stage.filters;
            }
        }
        let head = ConvBn::new(&mut init, "head", channels, table.head_filters, 1, 1, 1)?;
        channels = table.head_filters;

        let mut refinement = Vec::with_capacity(spec.refinement.num_units);
        for u in 0..spec.refinement.num_units {
            let unit = RefinementUnit::new(&mut init, &format!("refine.{u}"), channels, &spec.refinement)?;
            channels = unit.out_channels();
            refinement.push(unit);
        }
        let refinement_norm = if refinement.is_empty() {
            None
        } else {
            Some(init.batch_norm("refine.norm", channels)?)
        };
        let classifiers = spec
            .heads
            .iter()
            .enumerate()
            .map(|(i, &classes)| init.linear(&format!("classifier.{i}"), classes, channels))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Model {
            spec: spec.clone(),
            params,
            stem,
            blocks,
            head,
            refinement,
            refinement_norm,
            classifiers,
            metadata: ModelMetadata { spec_hash: spec.hash(), seed },
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn blocks(&self) -> &[BackboneBlock] {
        &self.blocks
    }

    pub fn refinement_units(&self) -> &[RefinementUnit] {
        &self.refinement
    }

    /// Channels of the final feature map.
    pub fn feature_channels(&self) -> usize {
        self.spec.refinement.output_channels(self.spec.table().head_filters)
    }

    /// Backbone, refinement stack, pooling, dropout and the softmax heads.
    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::Value) -> Result<ForwardOutput<E::Value>, TensorError> {
        let shape = ex.shape_of(x);
        if shape.len() != 4 {
            return Err(TensorError::Rank { op: "model", expected: 4, shape: shape.to_vec() });
        }
        if shape[1] != 3 {
            return Err(TensorError::DimMismatch { op: "model", dim: "input channels", expected: 3, actual: shape[1] });
        }
        let mut h = self.stem.forward_swish(ex, x)?;
        for b in &self.blocks {
            h = b.forward(ex, &h)?;
        }
        h = self.head.forward_swish(ex, &h)?;
        for unit in &self.refinement {
            h = unit.forward(ex, &h)?;
        }
        if let Some(bn) = &self.refinement_norm {
            let n = ex.batch_norm(&h, bn)?;
            h = ex.swish(&n)?;
        }
        let pooled = ex.global_avg_pool(&h)?;
        let pooled = ex.dropout(&pooled, self.spec.dropout_rate)?;
        let mut probs = Vec::with_capacity(self.classifiers.len());
        for &(w, b) in &self.classifiers {
            let logits = ex.linear(&pooled, w, Some(b))?;
            probs.push(ex.softmax(&logits)?);
        }
        Ok(ForwardOutput { features: h, probs })
    }

    /// Eval-mode forward on `[N, 3, H, W]` input, rounded to single precision
    /// first so results match a tape evaluation of the same batch.
    pub fn predict(&self, images: &Tensor) -> Result<ForwardOutput<Tensor>> {
        let mut x = images.clone();
        PrecisionMode::Single.round_slice(x.data_mut());
        let mut ex = Infer::new(&self.params, PrecisionMode::Single);
        Ok(self.forward(&mut ex, &x)?)
    }
}
