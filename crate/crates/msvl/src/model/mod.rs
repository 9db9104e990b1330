//! The multi-view classifier and its baselines.
//!
//! Three architectures share one parameter container:
//!
//! * `rgb_baseline` — residual encoder straight on the 3-channel image.
//! * `single_band` — the same encoder on one spectral view.
//! * `gnn_msvl` — one encoder shared across all 24 views, a channel-gating
//!   attention module per view, a four-head graph attention layer over the
//!   cross-spectral topology, and a mean-readout classifier.
//!
//! Weights persist in a binary container (`MSVLW001` magic, JSON header,
//! little-endian f64 payload with a SHA-256 checksum) that round-trips
//! bitwise.

mod blocks;
mod train;

pub use train::{train, validation_auroc, EpochStats, LabeledSample, SampleInput, TrainConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::nn::{he_uniform, xavier_uniform, Graph, NodeId, Tensor};
use crate::recon::{extract_view, BandImage, LinearRgbImage};
use crate::spectral::{SpectralCube, BAND_COUNT};
use crate::util::{rng_from_seed, sha256_hex};

use blocks::{
    attention_forward, classifier_logits, encoder_forward, gat_forward, BoundAttention,
    BoundClassifier, BoundEncoder, BoundGatHead, BoundStage,
};

/// Negative slope of the graph-attention rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Attention heads in the graph layer.
pub const GAT_HEADS: usize = 4;
/// Reduction ratio of the channel-gating attention module.
pub const ATTENTION_REDUCTION: usize = 4;

const WEIGHTS_MAGIC: &[u8; 8] = b"MSVLW001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    RgbBaseline,
    SingleBand,
    GnnMsvl,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::RgbBaseline => write!(f, "rgb_baseline"),
            Arch::SingleBand => write!(f, "single_band"),
            Arch::GnnMsvl => write!(f, "gnn_msvl"),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb_baseline" => Ok(Arch::RgbBaseline),
            "single_band" => Ok(Arch::SingleBand),
            "gnn_msvl" => Ok(Arch::GnnMsvl),
            other => Err(Error::InvalidInput(format!(
                "unknown arch {other:?} (expected rgb_baseline, single_band, or gnn_msvl)"
            ))),
        }
    }
}

/// Shape of the toy grouped-convolution residual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub cardinality: usize,
    /// Output feature dimension D.
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 1,
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stage_channels: vec![16, 32],
            stage_strides: vec![1, 2],
            cardinality: 4,
            feature_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidInput("encoder feature_dim must be positive".into()));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::InvalidInput("encoder needs at least one residual stage".into()));
        }
        if self.stage_channels.len() != self.stage_strides.len() {
            return Err(Error::InvalidInput(format!(
                "encoder has {} stage channel counts but {} strides",
                self.stage_channels.len(),
                self.stage_strides.len()
            )));
        }
        if self.cardinality == 0 {
            return Err(Error::InvalidInput("encoder cardinality must be positive".into()));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c % self.cardinality != 0 {
                return Err(Error::InvalidInput(format!(
                    "stage {i} channels {c} not divisible by cardinality {}",
                    self.cardinality
                )));
            }
        }
        if self.in_channels == 0
            || self.stem_channels == 0
            || self.stem_kernel == 0
            || self.stem_stride == 0
            || self.stage_strides.iter().any(|&s| s == 0)
        {
            return Err(Error::InvalidInput("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Dimensions of the full model around the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Concatenated output width D' of the graph attention layer; split
    /// evenly across the four heads.
    pub gat_output_dim: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { encoder: EncoderConfig::default(), gat_output_dim: 64, classifier_hidden: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.gat_output_dim == 0 || self.gat_output_dim % GAT_HEADS != 0 {
            return Err(Error::InvalidInput(format!(
                "gat_output_dim {} must be a positive multiple of {GAT_HEADS}",
                self.gat_output_dim
            )));
        }
        if self.classifier_hidden == 0 {
            return Err(Error::InvalidInput("classifier_hidden must be positive".into()));
        }
        Ok(())
    }
}

// -- slot layout -------------------------------------------------------------

#[derive(Debug, Clone)]
struct StageSlots {
    reduce_w: usize,
    reduce_b: usize,
    group_w: usize,
    group_b: usize,
    expand_w: usize,
    expand_b: usize,
    shortcut: Option<(usize, usize)>,
    stride: usize,
}

#[derive(Debug, Clone)]
struct EncoderSlots {
    stem_w: usize,
    stem_b: usize,
    stages: Vec<StageSlots>,
    proj_w: usize,
    proj_b: usize,
}

#[derive(Debug, Clone)]
struct AttentionSlots {
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone)]
struct GatHeadSlots {
    w: usize,
    a_src: usize,
    a_dst: usize,
}

#[derive(Debug, Clone)]
struct ClassifierSlots {
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

/// Tensor indices are derived from (arch, config), so equality of params is
/// decided by the tensors and metadata alone.
#[derive(Debug, Clone)]
struct Slots {
    encoder: EncoderSlots,
    attention: Option<AttentionSlots>,
    gat: Option<Vec<GatHeadSlots>>,
    classifier: ClassifierSlots,
}

/// Incrementally allocates named tensors in a fixed order.
struct Allocator {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Allocator {
    fn new() -> Self {
        Allocator { names: Vec::new(), tensors: Vec::new() }
    }

    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }
}

/// One input to the model, matching its architecture.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Cube(&'a SpectralCube),
    Band(&'a BandImage),
    Rgb(&'a LinearRgbImage),
}

/// All weights of one model instance plus the configuration needed to
/// rebuild its structure.
#[derive(Debug, Clone)]
pub struct ModelParams {
    arch: Arch,
    config: ModelConfig,
    band_index: Option<usize>,
    topology: Option<GraphTopology>,
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    slots: Slots,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.config == other.config
            && self.band_index == other.band_index
            && self.topology == other.topology
            && self.seed == other.seed
            && self.names == other.names
            && self.tensors == other.tensors
    }
}

impl ModelParams {
    /// Seeded initialization: He-uniform into rectifiers, Xavier-uniform for
    /// the linear projection, gating output, and attention vectors.
    pub fn init(
        arch: Arch,
        config: ModelConfig,
        topology: Option<GraphTopology>,
        band_index: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let expected_in = match arch {
            Arch::RgbBaseline => 3,
            Arch::SingleBand | Arch::GnnMsvl => 1,
        };
        if config.encoder.in_channels != expected_in {
            return Err(Error::InvalidInput(format!(
                "arch {arch} expects {expected_in} input channel(s), encoder declares {}",
                config.encoder.in_channels
            )));
        }
        match arch {
            Arch::SingleBand => {
                let band = band_index.ok_or_else(|| {
                    Error::InvalidInput("single_band arch needs a band index".into())
                })?;
                if band >= BAND_COUNT {
                    return Err(Error::InvalidInput(format!(
                        "band index {band} out of range 0..{BAND_COUNT}"
                    )));
                }
            }
            Arch::GnnMsvl => {
                let topo = topology.as_ref().ok_or_else(|| {
                    Error::InvalidInput("gnn_msvl arch needs a graph topology".into())
                })?;
                if topo.node_count() != BAND_COUNT {
                    return Err(Error::InvalidInput(format!(
                        "topology has {} nodes, the spectral graph needs {BAND_COUNT}",
                        topo.node_count()
                    )));
                }
            }
            Arch::RgbBaseline => {}
        }

        let mut rng = rng_from_seed(seed);
        let mut alloc = Allocator::new();
        let enc = &config.encoder;

        let stem_fan_in = enc.in_channels * enc.stem_kernel * enc.stem_kernel;
        let stem_w = alloc.push(
            "encoder.stem.w".into(),
            he_uniform(
                &[enc.stem_channels, enc.in_channels, enc.stem_kernel, enc.stem_kernel],
                stem_fan_in,
                &mut rng,
            ),
        );
        let stem_b = alloc.push("encoder.stem.b".into(), Tensor::zeros(&[enc.stem_channels]));

        let mut stages = Vec::new();
        let mut prev_channels = enc.stem_channels;
        for (i, (&channels, &stride)) in
            enc.stage_channels.iter().zip(&enc.stage_strides).enumerate()
        {
            let group_in = channels / enc.cardinality;
            let reduce_w = alloc.push(
                format!("encoder.stage{i}.reduce.w"),
                he_uniform(&[channels, prev_channels, 1, 1], prev_channels, &mut rng),
            );
            let reduce_b =
                alloc.push(format!("encoder.stage{i}.reduce.b"), Tensor::zeros(&[channels]));
            let group_w = alloc.push(
                format!("encoder.stage{i}.group.w"),
                he_uniform(&[channels, group_in, 3, 3], group_in * 9, &mut rng),
            );
            let group_b =
                alloc.push(format!("encoder.stage{i}.group.b"), Tensor::zeros(&[channels]));
            let expand_w = alloc.push(
                format!("encoder.stage{i}.expand.w"),
                he_uniform(&[channels, channels, 1, 1], channels, &mut rng),
            );
            let expand_b =
                alloc.push(format!("encoder.stage{i}.expand.b"), Tensor::zeros(&[channels]));
            let shortcut = if stride != 1 || prev_channels != channels {
                let w = alloc.push(
                    format!("encoder.stage{i}.shortcut.w"),
                    he_uniform(&[channels, prev_channels, 1, 1], prev_channels, &mut rng),
                );
                let b = alloc
                    .push(format!("encoder.stage{i}.shortcut.b"), Tensor::zeros(&[channels]));
                Some((w, b))
            } else {
                None
            };
            stages.push(StageSlots {
                reduce_w,
                reduce_b,
                group_w,
                group_b,
                expand_w,
                expand_b,
                shortcut,
                stride,
            });
            prev_channels = channels;
        }

        let proj_w = alloc.push(
            "encoder.proj.w".into(),
            xavier_uniform(
                &[prev_channels, enc.feature_dim],
                prev_channels,
                enc.feature_dim,
                &mut rng,
            ),
        );
        let proj_b = alloc.push("encoder.proj.b".into(), Tensor::zeros(&[enc.feature_dim]));
        let encoder_slots = EncoderSlots { stem_w, stem_b, stages, proj_w, proj_b };

        let (attention, gat) = if arch == Arch::GnnMsvl {
            let d = enc.feature_dim;
            let hidden = (d / ATTENTION_REDUCTION).max(1);
            let fc1_w =
                alloc.push("attention.fc1.w".into(), he_uniform(&[d, hidden], d, &mut rng));
            let fc1_b = alloc.push("attention.fc1.b".into(), Tensor::zeros(&[hidden]));
            let fc2_w = alloc.push(
                "attention.fc2.w".into(),
                xavier_uniform(&[hidden, d], hidden, d, &mut rng),
            );
            let fc2_b = alloc.push("attention.fc2.b".into(), Tensor::zeros(&[d]));
            let attention = AttentionSlots { fc1_w, fc1_b, fc2_w, fc2_b };

            let head_dim = config.gat_output_dim / GAT_HEADS;
            let mut heads = Vec::with_capacity(GAT_HEADS);
            for h in 0..GAT_HEADS {
                let w = alloc.push(
                    format!("gat.head{h}.w"),
                    xavier_uniform(&[d, head_dim], d, head_dim, &mut rng),
                );
                let a_src = alloc.push(
                    format!("gat.head{h}.a_src"),
                    xavier_uniform(&[head_dim], head_dim, 1, &mut rng),
                );
                let a_dst = alloc.push(
                    format!("gat.head{h}.a_dst"),
                    xavier_uniform(&[head_dim], head_dim, 1, &mut rng),
                );
                heads.push(GatHeadSlots { w, a_src, a_dst });
            }
            (Some(attention), Some(heads))
        } else {
            (None, None)
        };

        let classifier_in = match arch {
            Arch::GnnMsvl => config.gat_output_dim,
            _ => enc.feature_dim,
        };
        let fc1_w = alloc.push(
            "classifier.fc1.w".into(),
            he_uniform(&[classifier_in, config.classifier_hidden], classifier_in, &mut rng),
        );
        let fc1_b =
            alloc.push("classifier.fc1.b".into(), Tensor::zeros(&[config.classifier_hidden]));
        let fc2_w = alloc.push(
            "classifier.fc2.w".into(),
            xavier_uniform(&[config.classifier_hidden, 2], config.classifier_hidden, 2, &mut rng),
        );
        let fc2_b = alloc.push("classifier.fc2.b".into(), Tensor::zeros(&[2]));
        let classifier = ClassifierSlots { fc1_w, fc1_b, fc2_w, fc2_b };

        Ok(ModelParams {
            arch,
            config,
            band_index: if arch == Arch::SingleBand { band_index } else { None },
            topology: if arch == Arch::GnnMsvl { topology } else { None },
            seed,
            names: alloc.names,
            tensors: alloc.tensors,
            slots: Slots { encoder: encoder_slots, attention, gat, classifier },
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn band_index(&self) -> Option<usize> {
        self.band_index
    }

    pub fn topology(&self) -> Option<&GraphTopology> {
        self.topology.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Tensor names paired with shapes, in storage order.
    pub fn tensor_manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Every weight concatenated in storage order, for gradient probes and
    /// external inspection.
    pub fn flatten_weights(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every weight from a flat vector in storage order.
    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors.iter().map(Tensor::len).sum();
        if flat.len() != total {
            return Err(Error::InvalidInput(format!(
                "flat weight vector has {} values, model holds {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for tensor in &mut self.tensors {
            let len = tensor.len();
            tensor.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    // -- forward passes ------------------------------------------------------

    fn bind(&self, g: &mut Graph) -> Result<Vec<NodeId>> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    fn bound_encoder(&self, ids: &[NodeId]) -> BoundEncoder {
        let enc = &self.slots.encoder;
        BoundEncoder {
            stem_w: ids[enc.stem_w],
            stem_b: ids[enc.stem_b],
            stem_stride: self.config.encoder.stem_stride,
            stem_pad: self.config.encoder.stem_kernel / 2,
            stages: enc
                .stages
                .iter()
                .map(|s| BoundStage {
                    reduce_w: ids[s.reduce_w],
                    reduce_b: ids[s.reduce_b],
                    group_w: ids[s.group_w],
                    group_b: ids[s.group_b],
                    expand_w: ids[s.expand_w],
                    expand_b: ids[s.expand_b],
                    shortcut: s.shortcut.map(|(w, b)| (ids[w], ids[b])),
                    stride: s.stride,
                    groups: self.config.encoder.cardinality,
                })
                .collect(),
            proj_w: ids[enc.proj_w],
            proj_b: ids[enc.proj_b],
        }
    }

    fn bound_attention(&self, ids: &[NodeId]) -> Option<BoundAttention> {
        self.slots.attention.as_ref().map(|a| BoundAttention {
            fc1_w: ids[a.fc1_w],
            fc1_b: ids[a.fc1_b],
            fc2_w: ids[a.fc2_w],
            fc2_b: ids[a.fc2_b],
        })
    }

    fn bound_gat(&self, ids: &[NodeId]) -> Option<Vec<BoundGatHead>> {
        self.slots.gat.as_ref().map(|heads| {
            heads
                .iter()
                .map(|h| BoundGatHead { w: ids[h.w], a_src: ids[h.a_src], a_dst: ids[h.a_dst] })
                .collect()
        })
    }

    fn bound_classifier(&self, ids: &[NodeId]) -> BoundClassifier {
        let c = &self.slots.classifier;
        BoundClassifier {
            fc1_w: ids[c.fc1_w],
            fc1_b: ids[c.fc1_b],
            fc2_w: ids[c.fc2_w],
            fc2_b: ids[c.fc2_b],
        }
    }

    /// Builds the logits node for one input on the given tape. Returns the
    /// logits node plus the bound parameter ids (aligned with storage order)
    /// for gradient extraction; training and verification both drive this.
    pub fn build_logits(
        &self,
        g: &mut Graph,
        input: ModelInput<'_>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let ids = self.bind(g)?;
        let encoder = self.bound_encoder(&ids);
        let classifier = self.bound_classifier(&ids);
        let logits = match (self.arch, input) {
            (Arch::RgbBaseline, ModelInput::Rgb(img)) => {
                let x = g.leaf(rgb_to_tensor(img))?;
                let feature = encoder_forward(g, &encoder, &self.config.encoder, x)?;
                classifier_logits(g, &classifier, &[feature])?
            }
            (Arch::SingleBand, ModelInput::Band(band)) => {
                let x = g.leaf(band_to_tensor(band))?;
                let feature = encoder_forward(g, &encoder, &self.config.encoder, x)?;
                classifier_logits(g, &classifier, &[feature])?
            }
            (Arch::SingleBand, ModelInput::Cube(cube)) => {
                let band = self.band_index.expect("single_band params carry a band index");
                let view = extract_view(cube, band)?;
                let x = g.leaf(band_to_tensor(&view))?;
                let feature = encoder_forward(g, &encoder, &self.config.encoder, x)?;
                classifier_logits(g, &classifier, &[feature])?
            }
            (Arch::GnnMsvl, ModelInput::Cube(cube)) => {
                let attention = self.bound_attention(&ids).expect("gnn params carry attention");
                let heads = self.bound_gat(&ids).expect("gnn params carry gat heads");
                let topology = self.topology.as_ref().expect("gnn params carry a topology");
                let mut gated = Vec::with_capacity(BAND_COUNT);
                for k in 0..BAND_COUNT {
                    let x = g.leaf(cube_view_tensor(cube, k))?;
                    let feature = encoder_forward(g, &encoder, &self.config.encoder, x)?;
                    gated.push(attention_forward(g, &attention, feature)?);
                }
                let layer2 = gat_forward(g, &heads, &gated, topology)?;
                classifier_logits(g, &classifier, &layer2)?
            }
            (arch, input) => {
                return Err(Error::InvalidInput(format!(
                    "arch {arch} cannot score a {} input",
                    input_kind(input)
                )))
            }
        };
        Ok((logits, ids))
    }

    /// Scores one input: softmax probability of the positive class.
    pub fn predict(&self, input: ModelInput<'_>) -> Result<f64> {
        let mut g = Graph::new();
        let (logits, _) = self.build_logits(&mut g, input)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).data()[1])
    }

    /// Runs the shared encoder over all 24 views of a cube.
    pub fn encode_views(&self, cube: &SpectralCube) -> Result<Vec<Vec<f64>>> {
        if self.config.encoder.in_channels != 1 {
            return Err(Error::InvalidInput(
                "encode_views needs a single-channel encoder".into(),
            ));
        }
        let mut g = Graph::new();
        let ids = self.bind(&mut g)?;
        let encoder = self.bound_encoder(&ids);
        let mut features = Vec::with_capacity(BAND_COUNT);
        for k in 0..BAND_COUNT {
            let x = g.leaf(cube_view_tensor(cube, k))?;
            let f = encoder_forward(&mut g, &encoder, &self.config.encoder, x)?;
            features.push(g.value(f).data().to_vec());
        }
        Ok(features)
    }

    /// Applies the channel-gating attention module to one feature vector.
    pub fn attention_module(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if self.slots.attention.is_none() {
            return Err(Error::InvalidInput(format!(
                "arch {} has no attention module",
                self.arch
            )));
        }
        let mut g = Graph::new();
        let ids = self.bind(&mut g)?;
        let attention = self.bound_attention(&ids).expect("attention slots checked above");
        let f = g.leaf(Tensor::vector(feature.to_vec()))?;
        let out = attention_forward(&mut g, &attention, f)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Runs the graph attention layer over explicit node features.
    pub fn gat_conv(&self, node_features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let topology = self
            .topology
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("arch {} has no graph layer", self.arch)))?;
        if node_features.len() != topology.node_count() {
            return Err(Error::InvalidInput(format!(
                "got {} node features for a {}-node topology",
                node_features.len(),
                topology.node_count()
            )));
        }
        let mut g = Graph::new();
        let ids = self.bind(&mut g)?;
        let heads = self.bound_gat(&ids).expect("gnn params carry gat heads");
        let features: Vec<NodeId> = node_features
            .iter()
            .map(|f| g.leaf(Tensor::vector(f.clone())))
            .collect::<Result<_>>()?;
        let outputs = gat_forward(&mut g, &heads, &features, topology)?;
        Ok(outputs.into_iter().map(|id| g.value(id).data().to_vec()).collect())
    }

    /// Classifies explicit layer-2 node features: mean readout -> classifier
    /// -> softmax probability of the positive class.
    pub fn classify(&self, node_features: &[Vec<f64>]) -> Result<f64> {
        if node_features.is_empty() {
            return Err(Error::InvalidInput("classify needs node features".into()));
        }
        let mut g = Graph::new();
        let ids = self.bind(&mut g)?;
        let classifier = self.bound_classifier(&ids);
        let features: Vec<NodeId> = node_features
            .iter()
            .map(|f| g.leaf(Tensor::vector(f.clone())))
            .collect::<Result<_>>()?;
        let logits = classifier_logits(&mut g, &classifier, &features)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).data()[1])
    }

    // -- persistence ---------------------------------------------------------

    pub fn save<W: Write>(&self, mut dest: W) -> Result<()> {
        let mut payload = Vec::new();
        for t in &self.tensors {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = WeightsHeader {
            version: 1,
            arch: self.arch,
            seed: self.seed,
            band_index: self.band_index,
            topology: match &self.topology {
                Some(t) => Some(
                    serde_json::from_str(&t.to_json_string()?)
                        .map_err(|e| Error::Format(format!("topology header failed: {e}")))?,
                ),
                None => None,
            },
            config: self.config.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| TensorDecl { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            checksum: sha256_hex(&payload),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Format(format!("weights header failed: {e}")))?;
        let io_err = |e| Error::Format(format!("weights write failed: {e}"));
        dest.write_all(WEIGHTS_MAGIC).map_err(io_err)?;
        dest.write_all(&(header_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
        dest.write_all(&header_bytes).map_err(io_err)?;
        dest.write_all(&payload).map_err(io_err)?;
        Ok(())
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        self.save(&mut writer)?;
        writer.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        source
            .read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("weights file too short for magic: {e}")))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!(
                "bad weights magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(WEIGHTS_MAGIC)
            )));
        }
        let mut len_bytes = [0u8; 4];
        source
            .read_exact(&mut len_bytes)
            .map_err(|e| Error::Format(format!("weights header length unreadable: {e}")))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        if header_len > 1 << 24 {
            return Err(Error::Format(format!("implausible weights header length {header_len}")));
        }
        let mut header_bytes = vec![0u8; header_len];
        source
            .read_exact(&mut header_bytes)
            .map_err(|e| Error::Format(format!("weights header truncated: {e}")))?;
        let header: WeightsHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Format(format!("weights header is not valid JSON: {e}")))?;
        if header.version != 1 {
            return Err(Error::Format(format!(
                "unsupported weights version {}",
                header.version
            )));
        }

        let topology = match &header.topology {
            Some(value) => Some(GraphTopology::from_json_str(&value.to_string())?),
            None => None,
        };

        // Rebuild the structural skeleton from the header config, then
        // overwrite every tensor from the payload.
        let mut params = ModelParams::init(
            header.arch,
            header.config.clone(),
            topology,
            header.band_index,
            header.seed,
        )?;

        if header.tensors.len() != params.tensors.len() {
            return Err(Error::Format(format!(
                "weights file declares {} tensors, structure implies {}",
                header.tensors.len(),
                params.tensors.len()
            )));
        }
        for (decl, (name, tensor)) in
            header.tensors.iter().zip(params.names.iter().zip(&params.tensors))
        {
            if &decl.name != name || decl.shape != tensor.shape() {
                return Err(Error::Format(format!(
                    "weights tensor {:?} {:?} does not match expected {:?} {:?}",
                    decl.name,
                    decl.shape,
                    name,
                    tensor.shape()
                )));
            }
        }

        let total: usize = params.tensors.iter().map(Tensor::len).sum();
        let mut payload = vec![0u8; total * 8];
        source
            .read_exact(&mut payload)
            .map_err(|e| Error::Corruption(format!("weights payload truncated: {e}")))?;
        let mut trailing = Vec::new();
        source
            .read_to_end(&mut trailing)
            .map_err(|e| Error::Format(format!("weights read failed: {e}")))?;
        if !trailing.is_empty() {
            return Err(Error::Corruption(format!(
                "weights payload has {} unexpected trailing bytes",
                trailing.len()
            )));
        }
        if sha256_hex(&payload) != header.checksum {
            return Err(Error::Corruption("weights payload checksum mismatch".into()));
        }

        let mut offset = 0;
        for tensor in &mut params.tensors {
            for v in tensor.data_mut() {
                let bytes: [u8; 8] = payload[offset..offset + 8].try_into().unwrap();
                *v = f64::from_le_bytes(bytes);
                offset += 8;
            }
            if !tensor.is_finite() {
                return Err(Error::Corruption("weights payload holds non-finite values".into()));
            }
        }
        Ok(params)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(BufReader::new(file))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorDecl {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    version: u32,
    arch: Arch,
    seed: u64,
    band_index: Option<usize>,
    topology: Option<serde_json::Value>,
    config: ModelConfig,
    tensors: Vec<TensorDecl>,
    checksum: String,
}

fn input_kind(input: ModelInput<'_>) -> &'static str {
    match input {
        ModelInput::Cube(_) => "spectral cube",
        ModelInput::Band(_) => "band image",
        ModelInput::Rgb(_) => "rgb image",
    }
}

/// One cube band as a `[1, H, W]` tensor.
fn cube_view_tensor(cube: &SpectralCube, band: usize) -> Tensor {
    let plane = cube.band(band).expect("band index validated by caller");
    let data: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    Tensor::new(vec![1, cube.height(), cube.width()], data).expect("plane length matches dims")
}

fn band_to_tensor(band: &BandImage) -> Tensor {
    let data: Vec<f64> = band.data().iter().map(|&v| v as f64).collect();
    Tensor::new(vec![1, band.height(), band.width()], data).expect("band length matches dims")
}

/// Interleaved RGB rows to a channel-major `[3, H, W]` tensor.
fn rgb_to_tensor(img: &LinearRgbImage) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let px = img.pixel(x, y);
            for c in 0..3 {
                data[c * w * h + y * w + x] = px[c];
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("length matches dimensions")
}
