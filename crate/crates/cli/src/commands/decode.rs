use std::io::Write;
use std::path::PathBuf;

use asr_core::audio::read_wav;
use asr_core::corpus::{detokenize, load_manifest};
use asr_core::model::checkpoint::load_checkpoint;
use asr_core::pipeline::Recognizer;
use asr_core::search::read_lm;
use serde::Serialize;

use crate::args::{num_workers, Args};
use crate::commands::{data_err, load_config};
use crate::CliError;

#[derive(Serialize)]
struct DecodeRecord {
    utt: String,
    hyp: String,
    score_joint: f64,
    score_ctc: f64,
    score_att: f64,
    score_lm: f64,
}

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(
        argv,
        &[
            "config",
            "checkpoint",
            "manifest",
            "beam-width",
            "ctc-weight",
            "lm",
            "lm-weight",
            "out",
            "vocab",
        ],
        &["force"],
    )?;
    let mut cfg = load_config(&args)?;
    if let Some(v) = args.get("beam-width") {
        cfg.set("beam_width", v)?;
    }
    if let Some(v) = args.get("ctc-weight") {
        cfg.set("lambda", v)?;
    }
    if let Some(v) = args.get("lm") {
        cfg.set("lm", v)?;
    }
    if let Some(v) = args.get("lm-weight") {
        cfg.set("lm_weight", v)?;
    }
    if let Some(v) = args.get("out") {
        cfg.set("decode_out", v)?;
    }
    if let Some(v) = args.get("vocab") {
        cfg.set("vocab", v)?;
    }
    let checkpoint_path: PathBuf = match args.get("checkpoint") {
        Some(p) => p.into(),
        None => cfg
            .checkpoint
            .clone()
            .ok_or_else(|| CliError::Usage("decode needs --checkpoint or checkpoint".into()))?,
    };
    let manifest_path: PathBuf = match args.get("manifest") {
        Some(p) => p.into(),
        None => cfg
            .test_manifest
            .clone()
            .ok_or_else(|| CliError::Usage("decode needs --manifest or test_manifest".into()))?,
    };

    let vocab_path = cfg.vocab.clone().unwrap_or_else(|| {
        checkpoint_path
            .parent()
            .unwrap_or_else(|| std::path::Path::new("."))
            .join("vocab.json")
    });
    let vocab = super::train::read_vocab(&vocab_path)?;
    let model_cfg = cfg.model_config(vocab.size());
    model_cfg.validate().map_err(data_err)?;

    let (store, digest) = load_checkpoint(&checkpoint_path).map_err(data_err)?;
    if digest != model_cfg.digest() {
        if args.has("force") {
            eprintln!(
                "warning: checkpoint digest {digest:016x} does not match configured model \
                 {:016x}; proceeding under --force",
                model_cfg.digest()
            );
        } else {
            return Err(CliError::Data(format!(
                "checkpoint digest {digest:016x} does not match configured model {:016x} \
                 (rerun with --force to override)",
                model_cfg.digest()
            )));
        }
    }

    let (manifest, warnings) = load_manifest(&manifest_path).map_err(data_err)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    manifest.verify_audio(false).map_err(data_err)?;

    let lm = match &cfg.lm {
        Some(path) => Some(read_lm(path).map_err(data_err)?),
        None => None,
    };
    let beam = cfg.beam_config();
    let mut recognizer = Recognizer::new(model_cfg, store);
    recognizer.frontend = cfg.frontend_config();

    // Parallel across utterances, output in manifest order.
    let workers = num_workers().min(manifest.len().max(1));
    let mut lines: Vec<Option<Result<String, CliError>>> =
        (0..manifest.len()).map(|_| None).collect();
    let decode_one = |record: &asr_core::corpus::ManifestRecord| -> Result<String, CliError> {
        let audio = read_wav(&manifest.audio_path(record)).map_err(data_err)?;
        let out = recognizer
            .decode_audio(&audio, lm.as_ref(), &beam)
            .map_err(data_err)?;
        let best = out.best();
        if !out.complete {
            eprintln!(
                "warning: {} exhausted the beam without a completed hypothesis",
                record.utt_id()
            );
        }
        let record = DecodeRecord {
            utt: record.utt_id(),
            hyp: detokenize(&best.tokens, &vocab),
            score_joint: best.score_joint,
            score_ctc: best.score_ctc,
            score_att: best.score_att,
            score_lm: best.score_lm,
        };
        Ok(serde_json::to_string(&record).expect("decode record serializes"))
    };
    if workers <= 1 {
        for (slot, record) in lines.iter_mut().zip(&manifest.records) {
            *slot = Some(decode_one(record));
        }
    } else {
        let chunk = manifest.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (w, slots) in lines.chunks_mut(chunk).enumerate() {
                let records = &manifest.records[w * chunk..w * chunk + slots.len()];
                let decode_one = &decode_one;
                scope.spawn(move || {
                    for (slot, record) in slots.iter_mut().zip(records) {
                        *slot = Some(decode_one(record));
                    }
                });
            }
        });
    }

    let mut out: Box<dyn Write> = match &cfg.decode_out {
        Some(path) => Box::new(std::fs::File::create(path).map_err(data_err)?),
        None => Box::new(std::io::stdout()),
    };
    for line in lines {
        let line = line.expect("all utterances decoded")?;
        writeln!(out, "{line}").map_err(data_err)?;
    }
    Ok(())
}
