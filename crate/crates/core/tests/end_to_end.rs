//! Cross-module integration at micro scale: synthesize, train a few steps,
//! checkpoint round-trip, decode, and score.

use asr_core::corpus::score::score;
use asr_core::corpus::synth::synth_corpus;
use asr_core::corpus::{detokenize, tokenize, Vocabulary};
use asr_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use asr_core::model::{ExtractorConfig, ModelConfig};
use asr_core::pipeline::{train, Recognizer, TrainOptions};
use asr_core::search::{train_char_lm, BeamConfig};

fn micro_cfg(vocab: usize) -> ModelConfig {
    let mut cfg = ModelConfig::micro(vocab);
    cfg.extractor_fbank = ExtractorConfig::micro(80, 8);
    cfg.extractor_spect = ExtractorConfig::micro(201, 8);
    cfg.extractor_fbank.pool_time_size = 2;
    cfg.extractor_spect.pool_time_size = 2;
    cfg
}

#[test]
fn synth_train_decode_score_loop() {
    let dir = std::env::temp_dir().join("asr_e2e_micro");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    let manifest = synth_corpus(6, 3, 21, &dir).unwrap();
    let vocab = Vocabulary::from_texts(manifest.records.iter().map(|r| r.text.as_str()));
    let cfg = micro_cfg(vocab.size());
    let opts = TrainOptions {
        max_steps: 5,
        batch_size: 3,
        workers: 2,
        out_dir: dir.join("run"),
        ..TrainOptions::default()
    };
    let store = train(&cfg, &manifest, &vocab, &opts, |m| {
        assert!(m.loss_hybrid.is_finite());
    })
    .unwrap();

    // Checkpoint round trip preserves every bit.
    let ckpt = dir.join("run/checkpoint.hcam");
    let (loaded, digest) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(digest, cfg.digest());
    for slot in 0..store.len() {
        assert_eq!(loaded.tensor(slot), store.tensor(slot));
    }
    let resaved = dir.join("resaved.hcam");
    save_checkpoint(&resaved, &loaded, digest).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&resaved).unwrap());

    // Decode every utterance with and without an LM; score the outputs.
    let corpus_ids: Vec<Vec<usize>> = manifest
        .records
        .iter()
        .map(|r| tokenize(&r.text, &vocab).unwrap().ids)
        .collect();
    let lm = train_char_lm(&corpus_ids, vocab.alphabet(), 2, 0.1).unwrap();
    let recognizer = Recognizer::new(cfg, loaded);
    let beam = BeamConfig {
        width: 4,
        max_output_length: 12,
        ..BeamConfig::default()
    };
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for record in &manifest.records {
        let audio = asr_core::audio::read_wav(&manifest.audio_path(record)).unwrap();
        let out = recognizer.decode_audio(&audio, Some(&lm), &beam).unwrap();
        assert!(out.complete);
        let best = out.best();
        let re = best.recombine(beam.lambda, beam.lm_weight);
        assert!(best.score_joint == re || (best.score_joint - re).abs() < 1e-12);
        hyps.push(detokenize(&best.tokens, &vocab));
        refs.push(record.text.clone());
    }
    // Five steps of training cannot promise accuracy; the report just has to
    // be well-formed and finite.
    let report = score(&hyps, &refs).unwrap();
    assert!(report.cer.is_finite());
    assert_eq!(report.per_utt.len(), 6);
}
