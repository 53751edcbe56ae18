//! Acoustic model: two multi-scale convolutional extractors (one per feature
//! stream), convex stream fusion with a fixed or trainable mixing scalar, a
//! 4-layer bidirectional LiGRU encoder with a two-layer projection head, an
//! attention decoder, and a CTC output head.
//!
//! Token id space, shared everywhere: 0 = CTC blank (doubles as the decoder
//! start symbol and is masked out of decoder predictions), 1..=V = characters,
//! V+1 = end-of-sentence. The CTC head emits V+1 classes (blank + chars); the
//! decoder emits V+2 with index 0 forced to -inf.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod extractor;

use thiserror::Error;

use crate::frontend::{FeatureKind, FeatureMatrix};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("fusion shape mismatch: {a:?} vs {b:?}")]
    FusionShape { a: Vec<usize>, b: Vec<usize> },
    #[error("unknown parameter filter {0:?}")]
    UnknownFilter(String),
    #[error("token id {token} out of range (decoder classes {classes})")]
    TokenOutOfVocab { token: usize, classes: usize },
    #[error("checkpoint {path}: {problem}")]
    Checkpoint { path: String, problem: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Configuration of one multi-scale parallel-convolution extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Time-axis extents of the three parallel kernels; frequency extent is 3.
    pub parallel_kernel_sizes: [usize; 3],
    pub parallel_channels_each: usize,
    pub pool_feature_size: usize,
    pub pool_time_size: usize,
    pub projection_dim: usize,
}

impl ExtractorConfig {
    pub fn desk(input_dim: usize) -> Self {
        ExtractorConfig {
            input_dim,
            conv1_channels: 16,
            conv2_channels: 16,
            parallel_kernel_sizes: [3, 5, 7],
            parallel_channels_each: 8,
            // 201 = 3 * 67, so the spectrogram stream pools by 3.
            pool_feature_size: if input_dim % 2 == 0 { 2 } else { 3 },
            pool_time_size: 2,
            projection_dim: 1024,
        }
    }

    /// Tiny instance for gradient checks and oracle decoding.
    pub fn micro(input_dim: usize, projection_dim: usize) -> Self {
        ExtractorConfig {
            input_dim,
            conv1_channels: 2,
            conv2_channels: 2,
            parallel_kernel_sizes: [1, 3, 5],
            parallel_channels_each: 2,
            pool_feature_size: if input_dim % 2 == 0 { 2 } else { 1 },
            pool_time_size: 1,
            projection_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let k = &self.parallel_kernel_sizes;
        if !(k[0] < k[1] && k[1] < k[2]) || k.iter().any(|v| v % 2 == 0) {
            return Err(ModelError::Config(format!(
                "parallel kernel sizes must be odd and strictly increasing, got {k:?}"
            )));
        }
        if self.input_dim % self.pool_feature_size != 0 {
            return Err(ModelError::Config(format!(
                "feature dim {} not divisible by pool_feature_size {} (no implicit padding)",
                self.input_dim, self.pool_feature_size
            )));
        }
        if self.pool_time_size == 0 || self.projection_dim == 0 {
            return Err(ModelError::Config("zero-sized pooling or projection".into()));
        }
        Ok(())
    }

    /// Per-frame flattened width after concatenation and feature pooling.
    pub fn flat_dim(&self) -> usize {
        3 * self.parallel_channels_each * (self.input_dim / self.pool_feature_size)
    }

    pub fn out_frames(&self, t: usize) -> usize {
        t / self.pool_time_size
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FusionMode {
    /// Fixed mixing scalar in \[0, 1].
    Fixed(f64),
    /// beta = sigmoid(raw), raw initialized to 0 so beta starts at exactly 0.5.
    Trainable,
}

/// Attention scoring variants. Further variants (e.g. one that conditions
/// the location features on a recurrent state) would slot in here alongside
/// their parameters in `build_params`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    Content,
    Location,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of character tokens (excluding blank and eos).
    pub vocab_chars: usize,
    pub extractor_fbank: ExtractorConfig,
    pub extractor_spect: ExtractorConfig,
    pub fusion: FusionMode,
    pub ligru_layers: usize,
    /// Hidden size per direction.
    pub ligru_hidden: usize,
    pub enc_linear_hidden: usize,
    pub enc_dim: usize,
    pub attention: AttentionVariant,
    pub attn_dim: usize,
    pub embed_dim: usize,
    pub dec_hidden: usize,
    pub loc_filters: usize,
    pub loc_kernel: usize,
}

impl ModelConfig {
    pub fn desk(vocab_chars: usize) -> Self {
        ModelConfig {
            vocab_chars,
            extractor_fbank: ExtractorConfig::desk(FeatureKind::Fbank80.dim()),
            extractor_spect: ExtractorConfig::desk(FeatureKind::Spectrogram201.dim()),
            fusion: FusionMode::Trainable,
            ligru_layers: 4,
            ligru_hidden: 128,
            enc_linear_hidden: 256,
            enc_dim: 160,
            attention: AttentionVariant::Location,
            attn_dim: 64,
            embed_dim: 32,
            dec_hidden: 128,
            loc_filters: 8,
            loc_kernel: 11,
        }
    }

    /// Small enough for exhaustive oracles and end-to-end gradient checks.
    pub fn micro(vocab_chars: usize) -> Self {
        ModelConfig {
            vocab_chars,
            extractor_fbank: ExtractorConfig::micro(8, 6),
            extractor_spect: ExtractorConfig::micro(9, 6),
            fusion: FusionMode::Trainable,
            ligru_layers: 1,
            ligru_hidden: 4,
            enc_linear_hidden: 5,
            enc_dim: 4,
            attention: AttentionVariant::Location,
            attn_dim: 3,
            embed_dim: 3,
            dec_hidden: 4,
            loc_filters: 2,
            loc_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.extractor_fbank.validate()?;
        self.extractor_spect.validate()?;
        if self.extractor_fbank.pool_time_size != self.extractor_spect.pool_time_size {
            return Err(ModelError::Config(
                "stream pool_time_size mismatch breaks fusion length agreement".into(),
            ));
        }
        if self.extractor_fbank.projection_dim != self.extractor_spect.projection_dim {
            return Err(ModelError::Config(
                "stream projection dims must match for fusion".into(),
            ));
        }
        if let FusionMode::Fixed(b) = self.fusion {
            if !(0.0..=1.0).contains(&b) {
                return Err(ModelError::Config(format!("fixed beta {b} outside [0,1]")));
            }
        }
        if self.vocab_chars == 0 {
            return Err(ModelError::Config("empty vocabulary".into()));
        }
        if self.loc_kernel % 2 == 0 {
            return Err(ModelError::Config("location conv kernel must be odd".into()));
        }
        if self.ligru_layers == 0 {
            return Err(ModelError::Config("need at least one encoder layer".into()));
        }
        Ok(())
    }

    pub const BLANK: usize = 0;

    pub fn eos(&self) -> usize {
        self.vocab_chars + 1
    }

    /// Width of the CTC head output (blank + characters).
    pub fn ctc_classes(&self) -> usize {
        self.vocab_chars + 1
    }

    /// Width of the decoder output (masked blank slot + characters + eos).
    pub fn dec_classes(&self) -> usize {
        self.vocab_chars + 2
    }

    /// FNV-1a digest of the shape-relevant configuration; stored in
    /// checkpoints so decode can refuse mismatched models.
    pub fn digest(&self) -> u64 {
        let canon = format!("{self:?}");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

fn insert_xavier(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) {
    store.insert(name, Tensor::xavier(shape, fan_in, fan_out, rng));
}

fn insert_conv(
    store: &mut ParamStore,
    prefix: &str,
    out_ch: usize,
    in_ch: usize,
    kt: usize,
    kf: usize,
    rng: &mut Rng,
) {
    let fan_in = in_ch * kt * kf;
    let fan_out = out_ch * kt * kf;
    insert_xavier(
        store,
        &format!("{prefix}.w"),
        &[out_ch, in_ch, kt, kf],
        fan_in,
        fan_out,
        rng,
    );
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_ch]));
}

fn insert_linear(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut Rng) {
    insert_xavier(store, &format!("{prefix}.w"), &[d_in, d_out], d_in, d_out, rng);
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[d_out]));
}

fn insert_extractor(store: &mut ParamStore, prefix: &str, cfg: &ExtractorConfig, rng: &mut Rng) {
    insert_conv(store, &format!("{prefix}.conv1"), cfg.conv1_channels, 1, 3, 3, rng);
    insert_conv(
        store,
        &format!("{prefix}.conv2"),
        cfg.conv2_channels,
        cfg.conv1_channels,
        3,
        3,
        rng,
    );
    for (i, &k) in cfg.parallel_kernel_sizes.iter().enumerate() {
        insert_conv(
            store,
            &format!("{prefix}.par{i}"),
            cfg.parallel_channels_each,
            cfg.conv2_channels,
            k,
            3,
            rng,
        );
    }
    insert_linear(
        store,
        &format!("{prefix}.proj"),
        cfg.flat_dim(),
        cfg.projection_dim,
        rng,
    );
}

/// Build a freshly initialized parameter store for the configuration.
/// Registration order is fixed and is part of the checkpoint layout.
pub fn build_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = Rng::seed(seed);
    let mut store = ParamStore::new();

    insert_extractor(&mut store, "ext_f", &cfg.extractor_fbank, &mut rng);
    insert_extractor(&mut store, "ext_s", &cfg.extractor_spect, &mut rng);

    if cfg.fusion == FusionMode::Trainable {
        store.insert("fusion.beta_raw", Tensor::scalar(0.0));
    }

    let h = cfg.ligru_hidden;
    for layer in 0..cfg.ligru_layers {
        let d_in = if layer == 0 {
            cfg.extractor_fbank.projection_dim
        } else {
            2 * h
        };
        for dir in ["fwd", "bwd"] {
            let p = format!("enc.l{layer}.{dir}");
            insert_xavier(&mut store, &format!("{p}.w_z"), &[d_in, h], d_in, h, &mut rng);
            insert_xavier(&mut store, &format!("{p}.w_h"), &[d_in, h], d_in, h, &mut rng);
            insert_xavier(&mut store, &format!("{p}.u_z"), &[h, h], h, h, &mut rng);
            insert_xavier(&mut store, &format!("{p}.u_h"), &[h, h], h, h, &mut rng);
            store.insert(&format!("{p}.ln_z.g"), Tensor::filled(&[h], 1.0));
            store.insert(&format!("{p}.ln_z.b"), Tensor::zeros(&[h]));
            store.insert(&format!("{p}.ln_h.g"), Tensor::filled(&[h], 1.0));
            store.insert(&format!("{p}.ln_h.b"), Tensor::zeros(&[h]));
        }
    }
    insert_linear(&mut store, "enc.lin1", 2 * h, cfg.enc_linear_hidden, &mut rng);
    insert_linear(&mut store, "enc.lin2", cfg.enc_linear_hidden, cfg.enc_dim, &mut rng);

    let classes = cfg.dec_classes();
    insert_xavier(
        &mut store,
        "dec.embed",
        &[classes, cfg.embed_dim],
        classes,
        cfg.embed_dim,
        &mut rng,
    );
    let x_dim = cfg.embed_dim + cfg.enc_dim;
    for gate in ["r", "z", "n"] {
        insert_xavier(
            &mut store,
            &format!("dec.gru.w_{gate}"),
            &[x_dim, cfg.dec_hidden],
            x_dim,
            cfg.dec_hidden,
            &mut rng,
        );
        insert_xavier(
            &mut store,
            &format!("dec.gru.u_{gate}"),
            &[cfg.dec_hidden, cfg.dec_hidden],
            cfg.dec_hidden,
            cfg.dec_hidden,
            &mut rng,
        );
        store.insert(&format!("dec.gru.b_{gate}"), Tensor::zeros(&[cfg.dec_hidden]));
    }
    insert_xavier(
        &mut store,
        "dec.att.w_s",
        &[cfg.dec_hidden, cfg.attn_dim],
        cfg.dec_hidden,
        cfg.attn_dim,
        &mut rng,
    );
    insert_xavier(
        &mut store,
        "dec.att.v_h",
        &[cfg.enc_dim, cfg.attn_dim],
        cfg.enc_dim,
        cfg.attn_dim,
        &mut rng,
    );
    insert_xavier(&mut store, "dec.att.w", &[cfg.attn_dim], cfg.attn_dim, 1, &mut rng);
    if cfg.attention == AttentionVariant::Location {
        insert_xavier(
            &mut store,
            "dec.att.loc.conv",
            &[cfg.loc_filters, cfg.loc_kernel],
            cfg.loc_kernel,
            cfg.loc_filters,
            &mut rng,
        );
        insert_xavier(
            &mut store,
            "dec.att.loc.u",
            &[cfg.loc_filters, cfg.attn_dim],
            cfg.loc_filters,
            cfg.attn_dim,
            &mut rng,
        );
    }
    insert_linear(&mut store, "dec.out", cfg.dec_hidden, classes, &mut rng);

    insert_linear(&mut store, "ctc", cfg.enc_dim, cfg.ctc_classes(), &mut rng);

    store
}

/// Exact scalar parameter count for a named module subset.
pub fn count_parameters(store: &ParamStore, filter: &str) -> Result<usize, ModelError> {
    let prefix = match filter {
        "all" => "",
        "extractor-fbank" => "ext_f.",
        "extractor-spect" => "ext_s.",
        "fusion" => "fusion.",
        "encoder" => "enc.",
        "decoder" => "dec.",
        "ctc" => "ctc.",
        "vgg" => "vgg.",
        other => return Err(ModelError::UnknownFilter(other.to_string())),
    };
    Ok(store.count_scalars(|name| name.starts_with(prefix)))
}

/// Which stage of the encoder an activation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamTag {
    FbankBranch,
    SpectrogramBranch,
    Fused,
    Encoded,
}

/// A graph activation tagged with its pipeline stage.
#[derive(Clone, Copy, Debug)]
pub struct EncoderActivation {
    pub node: NodeId,
    pub tag: StreamTag,
}

/// Node computing the current fusion scalar.
pub fn beta_node(g: &mut Graph, cfg: &ModelConfig) -> NodeId {
    match cfg.fusion {
        FusionMode::Fixed(b) => g.scalar(b),
        FusionMode::Trainable => {
            let raw = g.param("fusion.beta_raw");
            g.sigmoid(raw)
        }
    }
}

/// Current beta as a plain number.
pub fn beta_value(store: &ParamStore, cfg: &ModelConfig) -> f64 {
    match cfg.fusion {
        FusionMode::Fixed(b) => b,
        FusionMode::Trainable => {
            let raw = store.expect("fusion.beta_raw").item();
            1.0 / (1.0 + (-raw).exp())
        }
    }
}

/// f = (1 - beta) * f1 + beta * f2 over same-shape stream outputs.
pub fn fuse(
    g: &mut Graph,
    f1: EncoderActivation,
    f2: EncoderActivation,
    beta: NodeId,
) -> Result<EncoderActivation, ModelError> {
    let (a, b) = (
        g.value(f1.node).shape().to_vec(),
        g.value(f2.node).shape().to_vec(),
    );
    if a != b {
        return Err(ModelError::FusionShape { a, b });
    }
    let node = g.convex_mix(f1.node, f2.node, beta);
    Ok(EncoderActivation {
        node,
        tag: StreamTag::Fused,
    })
}

/// Linear projection + per-frame log-softmax over blank + characters.
pub fn ctc_head(g: &mut Graph, h_enc: EncoderActivation) -> NodeId {
    assert_eq!(h_enc.tag, StreamTag::Encoded, "ctc head wants encoded input");
    let w = g.param("ctc.w");
    let b = g.param("ctc.b");
    let logits = g.matmul(h_enc.node, w);
    let logits = g.add_row_broadcast(logits, b);
    g.log_softmax_rows(logits)
}

/// Everything decode and training need from the shared encoder.
pub struct EncoderOutputs {
    pub h_enc: EncoderActivation,
    pub ctc_log_probs: NodeId,
    pub beta: NodeId,
}

/// Run both extractor streams, fuse, encode, and apply the CTC head.
pub fn encoder_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    fbank: &FeatureMatrix,
    spect: &FeatureMatrix,
) -> Result<EncoderOutputs, ModelError> {
    assert_eq!(fbank.kind, FeatureKind::Fbank80);
    assert_eq!(spect.kind, FeatureKind::Spectrogram201);
    if fbank.n_frames() != spect.n_frames() {
        return Err(ModelError::Config(format!(
            "stream frame counts differ: {} vs {}",
            fbank.n_frames(),
            spect.n_frames()
        )));
    }
    if fbank.n_frames() < cfg.extractor_fbank.pool_time_size {
        return Err(ModelError::Config(format!(
            "utterance too short: {} frames < pool_time_size {}",
            fbank.n_frames(),
            cfg.extractor_fbank.pool_time_size
        )));
    }
    let f1 = extractor::extractor_forward(g, &cfg.extractor_fbank, "ext_f", fbank, StreamTag::FbankBranch)?;
    let f2 = extractor::extractor_forward(
        g,
        &cfg.extractor_spect,
        "ext_s",
        spect,
        StreamTag::SpectrogramBranch,
    )?;
    // Equal frame shift and pool_time_size make the lengths agree by
    // construction; this assertion guards config drift.
    assert_eq!(
        g.value(f1.node).shape()[0],
        g.value(f2.node).shape()[0],
        "stream time lengths diverged"
    );
    let beta = beta_node(g, cfg);
    let fused = fuse(g, f1, f2, beta)?;
    let h_enc = encoder::encode(g, cfg, fused);
    let ctc_log_probs = ctc_head(g, h_enc);
    Ok(EncoderOutputs {
        h_enc,
        ctc_log_probs,
        beta,
    })
}
