//! Multi-scale parallel-convolution feature extractor, and a VGG-style
//! baseline extractor used for parameter comparisons.
//!
//! Extractor pipeline: Conv(1->c1, 3x3) -> ReLU -> Conv(c1->c2, 3x3) -> ReLU
//! -> three parallel Conv(c2->p, k_i x 3) -> ReLU -> channel concat (3p) ->
//! 1-D max-pool over features -> 1-D max-pool over time -> per-frame flatten
//! -> linear to projection_dim -> ReLU.

use crate::frontend::FeatureMatrix;
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{EncoderActivation, ExtractorConfig, ModelError, StreamTag};

fn feature_input(g: &mut Graph, feat: &FeatureMatrix) -> NodeId {
    let (t, d) = (feat.n_frames(), feat.dim());
    let data = feat.tensor().as_slice().to_vec();
    g.input(Tensor::from_vec(&[1, t, d], data))
}

/// Forward one stream through its extractor; `prefix` selects the parameter
/// instance (the two streams are unshared).
pub fn extractor_forward(
    g: &mut Graph,
    cfg: &ExtractorConfig,
    prefix: &str,
    feat: &FeatureMatrix,
    tag: StreamTag,
) -> Result<EncoderActivation, ModelError> {
    cfg.validate()?;
    if feat.dim() != cfg.input_dim {
        return Err(ModelError::Config(format!(
            "{prefix}: feature dim {} does not match configured input dim {}",
            feat.dim(),
            cfg.input_dim
        )));
    }
    let x = feature_input(g, feat);
    let node = extractor_body(g, cfg, prefix, x);
    Ok(EncoderActivation { node, tag })
}

fn conv_relu(g: &mut Graph, prefix: &str, x: NodeId) -> NodeId {
    let w = g.param(&format!("{prefix}.w"));
    let b = g.param(&format!("{prefix}.b"));
    let c = g.conv2d(x, w, b);
    g.relu(c)
}

fn extractor_body(g: &mut Graph, cfg: &ExtractorConfig, prefix: &str, x: NodeId) -> NodeId {
    let c1 = conv_relu(g, &format!("{prefix}.conv1"), x);
    let c2 = conv_relu(g, &format!("{prefix}.conv2"), c1);
    let branches: Vec<NodeId> = (0..3)
        .map(|i| conv_relu(g, &format!("{prefix}.par{i}"), c2))
        .collect();
    let cat = g.concat_channels(&branches);
    let pf = g.maxpool_feat(cat, cfg.pool_feature_size);
    let pt = g.maxpool_time(pf, cfg.pool_time_size);
    let flat = g.flatten_channels(pt);
    let w = g.param(&format!("{prefix}.proj.w"));
    let b = g.param(&format!("{prefix}.proj.b"));
    let proj = g.matmul(flat, w);
    let proj = g.add_row_broadcast(proj, b);
    g.relu(proj)
}

/// VGG-style comparison baseline: two blocks of (Conv3x3, Conv3x3, 2x2
/// max-pool) with channels 1 -> 64 -> 128, then flatten and a linear to the
/// projection dim. Time length shrinks by 4.
#[derive(Clone, Debug, PartialEq)]
pub struct VggConfig {
    pub input_dim: usize,
    pub block1_channels: usize,
    pub block2_channels: usize,
    pub projection_dim: usize,
}

impl VggConfig {
    pub fn desk(input_dim: usize, projection_dim: usize) -> Self {
        VggConfig {
            input_dim,
            block1_channels: 64,
            block2_channels: 128,
            projection_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim % 4 != 0 {
            return Err(ModelError::Config(format!(
                "feature dim {} not divisible by the two 2x2 pools (no implicit padding)",
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn flat_dim(&self) -> usize {
        self.block2_channels * (self.input_dim / 4)
    }
}

pub fn build_vgg_params(cfg: &VggConfig, seed: u64) -> ParamStore {
    let mut rng = Rng::seed(seed);
    let mut store = ParamStore::new();
    super::insert_conv(&mut store, "vgg.c1", cfg.block1_channels, 1, 3, 3, &mut rng);
    super::insert_conv(
        &mut store,
        "vgg.c2",
        cfg.block1_channels,
        cfg.block1_channels,
        3,
        3,
        &mut rng,
    );
    super::insert_conv(
        &mut store,
        "vgg.c3",
        cfg.block2_channels,
        cfg.block1_channels,
        3,
        3,
        &mut rng,
    );
    super::insert_conv(
        &mut store,
        "vgg.c4",
        cfg.block2_channels,
        cfg.block2_channels,
        3,
        3,
        &mut rng,
    );
    super::insert_linear(&mut store, "vgg.proj", cfg.flat_dim(), cfg.projection_dim, &mut rng);
    store
}

pub fn vgg_forward(
    g: &mut Graph,
    cfg: &VggConfig,
    feat: &FeatureMatrix,
) -> Result<NodeId, ModelError> {
    cfg.validate()?;
    if feat.dim() != cfg.input_dim {
        return Err(ModelError::Config(format!(
            "vgg: feature dim {} does not match configured input dim {}",
            feat.dim(),
            cfg.input_dim
        )));
    }
    let x = feature_input(g, feat);
    let c1 = conv_relu(g, "vgg.c1", x);
    let c2 = conv_relu(g, "vgg.c2", c1);
    let p1f = g.maxpool_feat(c2, 2);
    let p1 = g.maxpool_time(p1f, 2);
    let c3 = conv_relu(g, "vgg.c3", p1);
    let c4 = conv_relu(g, "vgg.c4", c3);
    let p2f = g.maxpool_feat(c4, 2);
    let p2 = g.maxpool_time(p2f, 2);
    let flat = g.flatten_channels(p2);
    let w = g.param("vgg.proj.w");
    let b = g.param("vgg.proj.b");
    let proj = g.matmul(flat, w);
    let proj = g.add_row_broadcast(proj, b);
    Ok(g.relu(proj))
}
