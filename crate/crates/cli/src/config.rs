//! Flat key = value run configuration.
//!
//! The format is a plain text file, one `key = value` per line, `#` comments.
//! Unknown keys are hard errors so presets cannot silently drift. The full
//! key list is documented in the README; `RunConfig::serialize` emits every
//! key in canonical order, and parse(serialize(c)) == c.

use std::path::PathBuf;

use asr_core::frontend::augment::{AugmentPolicy, NoiseKind, NoisePolicy, SpecAugmentPolicy};
use asr_core::frontend::{FrontendConfig, WindowKind};
use asr_core::model::{AttentionVariant, FusionMode, ExtractorConfig, ModelConfig};
use asr_core::optim::AdamConfig;
use asr_core::pipeline::TrainOptions;
use asr_core::search::BeamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Micro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentSelector {
    None,
    SpecAugment,
    Speed,
    Noise,
    SpeedNoise,
    SpecAugmentNoise,
    SpecAugmentSpeed,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatKind {
    Both,
    Fbank,
    Spectrogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub attention: AttentionVariant,
    pub beta_mode: String, // "trainable" | "fixed"
    pub beta_fixed: f64,
    pub lambda: f64,
    pub seed: u64,
    pub determinism: bool,

    pub train_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    pub label_smoothing: f64,

    pub augment: AugmentSelector,
    pub speed_factors: Vec<f64>,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub noise_kind: NoiseKind,
    pub spec_freq_masks: usize,
    pub spec_freq_width: usize,
    pub spec_time_masks: usize,
    pub spec_time_width: usize,

    pub lm_out: Option<PathBuf>,
    pub lm_order: usize,
    pub lm_k: f64,

    pub checkpoint: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub beam_width: usize,
    pub lm: Option<PathBuf>,
    pub lm_weight: f64,
    pub max_output_length: usize,
    pub length_penalty: f64,
    pub coverage_weight: f64,
    pub decode_out: Option<PathBuf>,

    pub feat_kind: FeatKind,
    pub feat_out_dir: Option<PathBuf>,

    pub synth_n_utts: usize,
    pub synth_alphabet: usize,
    pub synth_out_dir: Option<PathBuf>,

    pub window: WindowKind,
    pub pre_emphasis: f64,
    pub mean_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::Desk,
            attention: AttentionVariant::Location,
            beta_mode: "trainable".into(),
            beta_fixed: 0.3,
            lambda: 0.3,
            seed: 42,
            determinism: true,
            train_manifest: None,
            out_dir: PathBuf::from("out"),
            learning_rate: 1e-3,
            batch_size: 4,
            max_steps: 1000,
            grad_clip: 5.0,
            checkpoint_every: 0,
            label_smoothing: 0.0,
            augment: AugmentSelector::None,
            speed_factors: vec![0.9, 1.0, 1.1],
            snr_db_min: 5.0,
            snr_db_max: 15.0,
            noise_kind: NoiseKind::White,
            spec_freq_masks: 2,
            spec_freq_width: 15,
            spec_time_masks: 2,
            spec_time_width: 20,
            lm_out: None,
            lm_order: 3,
            lm_k: 0.1,
            checkpoint: None,
            test_manifest: None,
            vocab: None,
            beam_width: 16,
            lm: None,
            lm_weight: 0.5,
            max_output_length: 200,
            length_penalty: 0.0,
            coverage_weight: 0.0,
            decode_out: None,
            feat_kind: FeatKind::Both,
            feat_out_dir: None,
            synth_n_utts: 50,
            synth_alphabet: 8,
            synth_out_dir: None,
            window: WindowKind::Hamming,
            pre_emphasis: 0.0,
            mean_normalize: false,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true/false, got {v:?}")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value", i + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("config {}: {e}", path.display()))?;
        RunConfig::parse(&text)
    }

    /// Set one key; used by both the parser and flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| -> Result<f64, String> {
            v.parse().map_err(|_| format!("bad number {v:?}"))
        };
        let int = |v: &str| -> Result<usize, String> {
            v.parse().map_err(|_| format!("bad integer {v:?}"))
        };
        match key {
            "preset" => {
                self.preset = match value {
                    "desk" => Preset::Desk,
                    "micro" => Preset::Micro,
                    _ => return Err(format!("unknown preset {value:?} (desk, micro)")),
                }
            }
            "attention" => {
                self.attention = match value {
                    "content" => AttentionVariant::Content,
                    "location" => AttentionVariant::Location,
                    _ => return Err(format!("unknown attention {value:?} (content, location)")),
                }
            }
            "beta_mode" => {
                if value != "trainable" && value != "fixed" {
                    return Err(format!("unknown beta_mode {value:?} (trainable, fixed)"));
                }
                self.beta_mode = value.into();
            }
            "beta_fixed" => self.beta_fixed = num(value)?,
            "lambda" => self.lambda = num(value)?,
            "seed" => self.seed = value.parse().map_err(|_| format!("bad seed {value:?}"))?,
            "determinism" => self.determinism = parse_bool(value)?,
            "train_manifest" => self.train_manifest = Some(value.into()),
            "out_dir" => self.out_dir = value.into(),
            "learning_rate" => self.learning_rate = num(value)?,
            "batch_size" => self.batch_size = int(value)?,
            "max_steps" => self.max_steps = int(value)?,
            "grad_clip" => self.grad_clip = num(value)?,
            "checkpoint_every" => self.checkpoint_every = int(value)?,
            "augment" => {
                self.augment = match value {
                    "none" => AugmentSelector::None,
                    "specaugment" => AugmentSelector::SpecAugment,
                    "speed" => AugmentSelector::Speed,
                    "noise" => AugmentSelector::Noise,
                    "speed-noise" => AugmentSelector::SpeedNoise,
                    "specaugment-noise" => AugmentSelector::SpecAugmentNoise,
                    "specaugment-speed" => AugmentSelector::SpecAugmentSpeed,
                    "all" => AugmentSelector::All,
                    _ => return Err(format!("unknown augment {value:?}")),
                }
            }
            "speed_factors" => {
                let parsed: Result<Vec<f64>, _> =
                    value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                self.speed_factors = parsed.map_err(|_| format!("bad speed_factors {value:?}"))?;
            }
            "snr_db_min" => self.snr_db_min = num(value)?,
            "snr_db_max" => self.snr_db_max = num(value)?,
            "noise_kind" => {
                self.noise_kind = match value {
                    "white" => NoiseKind::White,
                    "pink" => NoiseKind::Pink,
                    _ => return Err(format!("unknown noise_kind {value:?} (white, pink)")),
                }
            }
            "spec_freq_masks" => self.spec_freq_masks = int(value)?,
            "spec_freq_width" => self.spec_freq_width = int(value)?,
            "spec_time_masks" => self.spec_time_masks = int(value)?,
            "spec_time_width" => self.spec_time_width = int(value)?,
            "lm_out" => self.lm_out = Some(value.into()),
            "lm_order" => self.lm_order = int(value)?,
            "lm_k" => self.lm_k = num(value)?,
            "checkpoint" => self.checkpoint = Some(value.into()),
            "test_manifest" => self.test_manifest = Some(value.into()),
            "vocab" => self.vocab = Some(value.into()),
            "beam_width" => self.beam_width = int(value)?,
            "lm" => self.lm = Some(value.into()),
            "lm_weight" => self.lm_weight = num(value)?,
            "max_output_length" => self.max_output_length = int(value)?,
            "length_penalty" => self.length_penalty = num(value)?,
            "coverage_weight" => self.coverage_weight = num(value)?,
            "label_smoothing" => self.label_smoothing = num(value)?,
            "decode_out" => self.decode_out = Some(value.into()),
            "feat_kind" => {
                self.feat_kind = match value {
                    "both" => FeatKind::Both,
                    "fbank" => FeatKind::Fbank,
                    "spectrogram" => FeatKind::Spectrogram,
                    _ => return Err(format!("unknown feat_kind {value:?}")),
                }
            }
            "feat_out_dir" => self.feat_out_dir = Some(value.into()),
            "synth_n_utts" => self.synth_n_utts = int(value)?,
            "synth_alphabet" => self.synth_alphabet = int(value)?,
            "synth_out_dir" => self.synth_out_dir = Some(value.into()),
            "window" => {
                self.window = match value {
                    "hamming" => WindowKind::Hamming,
                    "rectangular" => WindowKind::Rectangular,
                    _ => return Err(format!("unknown window {value:?}")),
                }
            }
            "pre_emphasis" => self.pre_emphasis = num(value)?,
            "mean_normalize" => self.mean_normalize = parse_bool(value)?,
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.beta_mode == "fixed" && !(0.0..=1.0).contains(&self.beta_fixed) {
            return Err(format!("beta_fixed {} outside [0, 1]", self.beta_fixed));
        }
        if self.beam_width < 1 {
            return Err("beam_width must be >= 1".into());
        }
        if self.batch_size < 1 {
            return Err("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(format!(
                "label_smoothing {} outside [0, 1)",
                self.label_smoothing
            ));
        }
        Ok(())
    }

    /// Canonical serialization: every key, fixed order.
    pub fn serialize(&self) -> String {
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Micro => "micro",
        };
        let attention = match self.attention {
            AttentionVariant::Content => "content",
            AttentionVariant::Location => "location",
        };
        let augment = match self.augment {
            AugmentSelector::None => "none",
            AugmentSelector::SpecAugment => "specaugment",
            AugmentSelector::Speed => "speed",
            AugmentSelector::Noise => "noise",
            AugmentSelector::SpeedNoise => "speed-noise",
            AugmentSelector::SpecAugmentNoise => "specaugment-noise",
            AugmentSelector::SpecAugmentSpeed => "specaugment-speed",
            AugmentSelector::All => "all",
        };
        let noise_kind = match self.noise_kind {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
        };
        let feat_kind = match self.feat_kind {
            FeatKind::Both => "both",
            FeatKind::Fbank => "fbank",
            FeatKind::Spectrogram => "spectrogram",
        };
        let window = match self.window {
            WindowKind::Hamming => "hamming",
            WindowKind::Rectangular => "rectangular",
        };
        let speed = self
            .speed_factors
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("preset", preset.into());
        kv("attention", attention.into());
        kv("beta_mode", self.beta_mode.clone());
        kv("beta_fixed", self.beta_fixed.to_string());
        kv("lambda", self.lambda.to_string());
        kv("seed", self.seed.to_string());
        kv("determinism", self.determinism.to_string());
        if let Some(p) = &self.train_manifest {
            kv("train_manifest", p.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("augment", augment.into());
        kv("speed_factors", speed);
        kv("snr_db_min", self.snr_db_min.to_string());
        kv("snr_db_max", self.snr_db_max.to_string());
        kv("noise_kind", noise_kind.into());
        kv("spec_freq_masks", self.spec_freq_masks.to_string());
        kv("spec_freq_width", self.spec_freq_width.to_string());
        kv("spec_time_masks", self.spec_time_masks.to_string());
        kv("spec_time_width", self.spec_time_width.to_string());
        if let Some(p) = &self.lm_out {
            kv("lm_out", p.display().to_string());
        }
        kv("lm_order", self.lm_order.to_string());
        kv("lm_k", self.lm_k.to_string());
        if let Some(p) = &self.checkpoint {
            kv("checkpoint", p.display().to_string());
        }
        if let Some(p) = &self.test_manifest {
            kv("test_manifest", p.display().to_string());
        }
        if let Some(p) = &self.vocab {
            kv("vocab", p.display().to_string());
        }
        kv("beam_width", self.beam_width.to_string());
        if let Some(p) = &self.lm {
            kv("lm", p.display().to_string());
        }
        kv("lm_weight", self.lm_weight.to_string());
        kv("max_output_length", self.max_output_length.to_string());
        kv("length_penalty", self.length_penalty.to_string());
        kv("coverage_weight", self.coverage_weight.to_string());
        kv("label_smoothing", self.label_smoothing.to_string());
        if let Some(p) = &self.decode_out {
            kv("decode_out", p.display().to_string());
        }
        kv("feat_kind", feat_kind.into());
        if let Some(p) = &self.feat_out_dir {
            kv("feat_out_dir", p.display().to_string());
        }
        kv("synth_n_utts", self.synth_n_utts.to_string());
        kv("synth_alphabet", self.synth_alphabet.to_string());
        if let Some(p) = &self.synth_out_dir {
            kv("synth_out_dir", p.display().to_string());
        }
        kv("window", window.into());
        kv("pre_emphasis", self.pre_emphasis.to_string());
        kv("mean_normalize", self.mean_normalize.to_string());
        out
    }

    pub fn fusion_mode(&self) -> FusionMode {
        if self.beta_mode == "fixed" {
            FusionMode::Fixed(self.beta_fixed)
        } else {
            FusionMode::Trainable
        }
    }

    pub fn model_config(&self, vocab_chars: usize) -> ModelConfig {
        let mut cfg = match self.preset {
            Preset::Desk => ModelConfig::desk(vocab_chars),
            Preset::Micro => {
                let mut cfg = ModelConfig::micro(vocab_chars);
                cfg.extractor_fbank = ExtractorConfig::micro(80, 16);
                cfg.extractor_spect = ExtractorConfig::micro(201, 16);
                cfg.extractor_fbank.pool_time_size = 2;
                cfg.extractor_spect.pool_time_size = 2;
                cfg.ligru_hidden = 8;
                cfg.enc_linear_hidden = 12;
                cfg.enc_dim = 8;
                cfg
            }
        };
        cfg.attention = self.attention;
        cfg.fusion = self.fusion_mode();
        cfg
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        FrontendConfig {
            window: self.window,
            pre_emphasis: (self.pre_emphasis != 0.0).then_some(self.pre_emphasis),
            mean_normalize: self.mean_normalize,
        }
    }

    pub fn augment_policy(&self) -> Option<AugmentPolicy> {
        use AugmentSelector as A;
        let specaugment = matches!(self.augment, A::SpecAugment | A::SpecAugmentNoise | A::SpecAugmentSpeed | A::All);
        let speed = matches!(self.augment, A::Speed | A::SpeedNoise | A::SpecAugmentSpeed | A::All);
        let noise = matches!(self.augment, A::Noise | A::SpeedNoise | A::SpecAugmentNoise | A::All);
        if !(specaugment || speed || noise) {
            return None;
        }
        Some(AugmentPolicy {
            specaugment: specaugment.then_some(SpecAugmentPolicy {
                n_freq_masks: self.spec_freq_masks,
                max_freq_width: self.spec_freq_width,
                n_time_masks: self.spec_time_masks,
                max_time_width: self.spec_time_width,
            }),
            speed_factors: if speed { self.speed_factors.clone() } else { Vec::new() },
            noise: noise.then_some(NoisePolicy {
                snr_db_min: self.snr_db_min,
                snr_db_max: self.snr_db_max,
                kind: self.noise_kind,
            }),
            rng_seed: self.seed,
        })
    }

    pub fn train_options(&self, workers: usize) -> TrainOptions {
        TrainOptions {
            lambda: self.lambda,
            label_smoothing: self.label_smoothing,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                grad_clip: self.grad_clip,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            workers,
            augment: self.augment_policy(),
            frontend: self.frontend_config(),
            out_dir: self.out_dir.clone(),
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            width: self.beam_width,
            lambda: self.lambda,
            lm_weight: self.lm_weight,
            max_output_length: self.max_output_length,
            length_penalty: self.length_penalty,
            coverage_weight: self.coverage_weight,
        }
    }
}
