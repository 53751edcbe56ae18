//! End-to-end plumbing: utterance preparation (augmentation + features),
//! batched hybrid-loss training, and checkpoint-driven decoding.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::audio::{read_wav, AudioBuffer};
use crate::corpus::{tokenize, CorpusManifest, CorpusError, ManifestRecord, Vocabulary};
use crate::frontend::augment::{generate_noise, mix_noise, spec_augment, speed_perturb, AugmentPolicy};
use crate::frontend::{compute_fbank, compute_spectrogram, FeatureMatrix, FrontendConfig, FrontendError};
use crate::graph::Graph;
use crate::model::checkpoint::save_checkpoint;
use crate::model::decoder::teacher_forced_log_probs;
use crate::model::{beta_value, encoder_graph, ModelConfig, ModelError};
use crate::objectives::{attention_loss_smoothed, ctc_loss, hybrid_loss, ObjectiveError};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Gradients, ParamStore};
use crate::rng::Rng;
use crate::search::{greedy_ctc_decode, joint_beam_search, BeamConfig, CharNgramLm, DecodeOutput, SearchError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("non-finite loss on utterance {utt_id} at step {step}: ctc {ctc}, att {att}")]
    NonFinite {
        utt_id: String,
        step: usize,
        ctc: f64,
        att: f64,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// Both feature streams for one utterance.
pub fn features_for_audio(
    audio: &AudioBuffer,
    frontend: &FrontendConfig,
) -> Result<(FeatureMatrix, FeatureMatrix), FrontendError> {
    let fbank = compute_fbank(audio, frontend)?;
    let spect = compute_spectrogram(audio, frontend)?;
    Ok((fbank, spect))
}

/// A training utterance after augmentation and feature extraction.
pub struct PreparedUtterance {
    pub utt_id: String,
    pub fbank: FeatureMatrix,
    pub spect: FeatureMatrix,
    pub tokens: Vec<usize>,
}

/// Apply the policy (speed, then noise, then features, then SpecAugment) with
/// a stream derived from (policy seed, step, utterance index).
pub fn prepare_utterance(
    manifest: &CorpusManifest,
    record: &ManifestRecord,
    utt_index: usize,
    vocab: &Vocabulary,
    frontend: &FrontendConfig,
    augment: Option<(&AugmentPolicy, usize)>,
    audio_cache: Option<&AudioBuffer>,
) -> Result<PreparedUtterance, PipelineError> {
    let tokens = tokenize(&record.text, vocab)?.ids;
    let owned;
    let audio: &AudioBuffer = match audio_cache {
        Some(a) => a,
        None => {
            owned = read_wav(&manifest.audio_path(record))?;
            &owned
        }
    };
    let (fbank, spect) = match augment {
        None => features_for_audio(audio, frontend)?,
        Some((policy, step)) => {
            let mut rng = Rng::seed(policy.rng_seed)
                .derive(step as u64)
                .derive(utt_index as u64);
            let mut audio = audio.clone();
            if !policy.speed_factors.is_empty() {
                let f = policy.speed_factors[rng.below(policy.speed_factors.len())];
                audio = speed_perturb(&audio, f)?;
            }
            if let Some(noise_policy) = &policy.noise {
                let noise = generate_noise(noise_policy.kind, audio.len(), &mut rng);
                let snr = rng.uniform_in(noise_policy.snr_db_min, noise_policy.snr_db_max);
                audio = mix_noise(&audio, &noise, snr, &mut rng)?;
            }
            let (mut fbank, mut spect) = features_for_audio(&audio, frontend)?;
            if let Some(sa) = &policy.specaugment {
                fbank = spec_augment(&fbank, sa, &mut rng)?;
                spect = spec_augment(&spect, sa, &mut rng)?;
            }
            (fbank, spect)
        }
    };
    Ok(PreparedUtterance {
        utt_id: record.utt_id(),
        fbank,
        spect,
        tokens,
    })
}

/// Per-utterance losses; `ctc` is +inf when the target cannot align, in which
/// case `grads` is None and the utterance should be skipped.
pub struct UtteranceLoss {
    pub ctc: f64,
    pub att: f64,
    pub hybrid: f64,
    pub grads: Option<Gradients>,
}

/// Build the hybrid-loss graph for one utterance and run the backward pass.
pub fn utterance_loss_and_grads(
    cfg: &ModelConfig,
    store: &ParamStore,
    utt: &PreparedUtterance,
    lambda: f64,
    label_smoothing: f64,
    want_grads: bool,
) -> Result<UtteranceLoss, PipelineError> {
    let mut g = Graph::new(store);
    let outs = encoder_graph(&mut g, cfg, &utt.fbank, &utt.spect)?;
    let ctc = ctc_loss(&mut g, outs.ctc_log_probs, &utt.tokens)?;
    let lps = teacher_forced_log_probs(&mut g, cfg, outs.h_enc.node, &utt.tokens)?;
    let mut target_with_eos = utt.tokens.clone();
    target_with_eos.push(cfg.eos());
    let att = attention_loss_smoothed(&mut g, &lps, &target_with_eos, label_smoothing)?;
    let hybrid = hybrid_loss(&mut g, ctc.node, att, lambda)?;
    let att_value = g.value(att).item();
    let hybrid_value = if ctc.is_alignable() {
        lambda * ctc.value + (1.0 - lambda) * att_value
    } else {
        f64::INFINITY
    };
    let grads = (want_grads && ctc.is_alignable()).then(|| g.backward(hybrid));
    Ok(UtteranceLoss {
        ctc: ctc.value,
        att: att_value,
        hybrid: hybrid_value,
        grads,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_ctc: f64,
    pub loss_att: f64,
    pub loss_hybrid: f64,
    pub beta: f64,
    pub skipped_utts: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub lambda: f64,
    pub label_smoothing: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub workers: usize,
    pub augment: Option<AugmentPolicy>,
    pub frontend: FrontendConfig,
    pub out_dir: PathBuf,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda: 0.3,
            label_smoothing: 0.0,
            adam: AdamConfig::default(),
            batch_size: 4,
            max_steps: 1000,
            seed: 42,
            checkpoint_every: 0,
            workers: 1,
            augment: None,
            frontend: FrontendConfig::default(),
            out_dir: PathBuf::from("."),
        }
    }
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint.hcam")
}

/// Train from a fresh initialization; returns the final parameters. Metrics
/// are reported through the callback once per step. Deterministic given the
/// seed: utterance order, augmentation, and the by-index gradient reduction
/// are all derived from it, independent of worker count.
pub fn train(
    cfg: &ModelConfig,
    manifest: &CorpusManifest,
    vocab: &Vocabulary,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<ParamStore, PipelineError> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut store = crate::model::build_params(cfg, opts.seed);
    let mut adam = Adam::new(opts.adam, &store);
    let digest = cfg.digest();
    std::fs::create_dir_all(&opts.out_dir).map_err(|source| CorpusError::Io {
        path: opts.out_dir.display().to_string(),
        source,
    })?;

    // With augmentation off, features are a pure function of the audio and
    // can be prepared once. With augmentation on we cache the raw audio and
    // re-extract per step.
    let audio: Vec<AudioBuffer> = manifest
        .records
        .iter()
        .map(|r| read_wav(&manifest.audio_path(r)))
        .collect::<Result<_, _>>()?;
    let cached: Option<Vec<PreparedUtterance>> = if opts.augment.is_none() {
        Some(
            manifest
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    prepare_utterance(
                        manifest,
                        r,
                        i,
                        vocab,
                        &opts.frontend,
                        None,
                        Some(&audio[i]),
                    )
                })
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };

    let n = manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = Rng::seed(opts.seed ^ 0x5eed);
    let mut cursor = n; // force a shuffle on first use

    for step in 1..=opts.max_steps {
        // Draw the batch from a seeded shuffled order, reshuffling per epoch.
        let mut batch = Vec::with_capacity(opts.batch_size);
        for _ in 0..opts.batch_size {
            if cursor >= n {
                for i in (1..n).rev() {
                    let j = order_rng.below(i + 1);
                    order.swap(i, j);
                }
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let results = run_batch(cfg, &store, manifest, vocab, opts, &audio, &cached, &batch, step)?;

        let mut total = Gradients::empty(store.len());
        let mut sums = (0.0, 0.0, 0.0);
        let mut contributing = 0usize;
        let mut skipped = 0usize;
        for (utt_index, loss) in batch.iter().zip(&results) {
            let unalignable = loss.ctc == f64::INFINITY && loss.att.is_finite();
            match (&loss.grads, loss.hybrid.is_finite()) {
                (Some(g), true) => {
                    total.merge(g);
                    sums.0 += loss.ctc;
                    sums.1 += loss.att;
                    sums.2 += loss.hybrid;
                    contributing += 1;
                }
                (None, _) if unalignable => {
                    skipped += 1; // target cannot align; dropped with a count
                }
                _ => {
                    return Err(PipelineError::NonFinite {
                        utt_id: manifest.records[*utt_index].utt_id(),
                        step,
                        ctc: loss.ctc,
                        att: loss.att,
                    });
                }
            }
        }
        if contributing > 0 {
            total.scale(1.0 / contributing as f64);
            adam.step(&mut store, &total);
        }
        let denom = contributing.max(1) as f64;
        let metrics = StepMetrics {
            step,
            loss_ctc: sums.0 / denom,
            loss_att: sums.1 / denom,
            loss_hybrid: sums.2 / denom,
            beta: beta_value(&store, cfg),
            skipped_utts: skipped,
        };
        on_step(&metrics);
        if opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 {
            let path = opts.out_dir.join(format!("checkpoint_step{step:06}.hcam"));
            save_checkpoint(&path, &store, digest)?;
        }
    }
    save_checkpoint(&final_checkpoint_path(&opts.out_dir), &store, digest)?;
    Ok(store)
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    cfg: &ModelConfig,
    store: &ParamStore,
    manifest: &CorpusManifest,
    vocab: &Vocabulary,
    opts: &TrainOptions,
    audio: &[AudioBuffer],
    cached: &Option<Vec<PreparedUtterance>>,
    batch: &[usize],
    step: usize,
) -> Result<Vec<UtteranceLoss>, PipelineError> {
    let one = |&utt_index: &usize| -> Result<UtteranceLoss, PipelineError> {
        match cached {
            Some(cache) => utterance_loss_and_grads(
                cfg,
                store,
                &cache[utt_index],
                opts.lambda,
                opts.label_smoothing,
                true,
            ),
            None => {
                let utt = prepare_utterance(
                    manifest,
                    &manifest.records[utt_index],
                    utt_index,
                    vocab,
                    &opts.frontend,
                    opts.augment.as_ref().map(|p| (p, step)),
                    Some(&audio[utt_index]),
                )?;
                utterance_loss_and_grads(cfg, store, &utt, opts.lambda, opts.label_smoothing, true)
            }
        }
    };
    let workers = opts.workers.max(1).min(batch.len().max(1));
    if workers <= 1 {
        return batch.iter().map(one).collect();
    }
    // Results are collected per index; reduction order stays fixed upstream.
    let mut results: Vec<Option<Result<UtteranceLoss, PipelineError>>> =
        (0..batch.len()).map(|_| None).collect();
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, slots) in results.chunks_mut(chunk).enumerate() {
            let batch_slice = &batch[w * chunk..(w * chunk + slots.len())];
            handles.push(scope.spawn(move || {
                for (slot, idx) in slots.iter_mut().zip(batch_slice) {
                    *slot = Some(one(idx));
                }
            }));
        }
        for h in handles {
            h.join().expect("worker panicked");
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all batch slots filled"))
        .collect()
}

/// A loaded model ready to transcribe.
pub struct Recognizer {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub frontend: FrontendConfig,
}

impl Recognizer {
    pub fn new(cfg: ModelConfig, store: ParamStore) -> Self {
        Recognizer {
            cfg,
            store,
            frontend: FrontendConfig::default(),
        }
    }

    /// Forward the encoder; returns (h_enc, ctc log-probs) as plain tensors.
    pub fn encode(
        &self,
        fbank: &FeatureMatrix,
        spect: &FeatureMatrix,
    ) -> Result<(Tensor, Tensor), PipelineError> {
        let mut g = Graph::new(&self.store);
        let outs = encoder_graph(&mut g, &self.cfg, fbank, spect)?;
        Ok((
            g.value(outs.h_enc.node).clone(),
            g.value(outs.ctc_log_probs).clone(),
        ))
    }

    pub fn decode_audio(
        &self,
        audio: &AudioBuffer,
        lm: Option<&CharNgramLm>,
        beam: &BeamConfig,
    ) -> Result<DecodeOutput, PipelineError> {
        let (fbank, spect) = features_for_audio(audio, &self.frontend)?;
        let (h_enc, ctc_lp) = self.encode(&fbank, &spect)?;
        Ok(joint_beam_search(
            &self.cfg, &self.store, &h_enc, &ctc_lp, lm, beam,
        )?)
    }

    /// Frame-argmax CTC transcription.
    pub fn greedy_audio(&self, audio: &AudioBuffer) -> Result<Vec<usize>, PipelineError> {
        let (fbank, spect) = features_for_audio(audio, &self.frontend)?;
        let (_, ctc_lp) = self.encode(&fbank, &spect)?;
        Ok(greedy_ctc_decode(&ctc_lp))
    }
}
