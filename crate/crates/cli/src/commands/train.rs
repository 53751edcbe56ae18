use std::io::Write;
use std::path::{Path, PathBuf};

use asr_core::corpus::{load_manifest, tokenize, Vocabulary};
use asr_core::pipeline::{train, PipelineError};
use asr_core::search::{train_char_lm, write_lm};

use crate::args::{num_workers, Args};
use crate::commands::{data_err, load_config};
use crate::CliError;

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), CliError> {
    let chars: Vec<String> = vocab.alphabet().iter().map(|c| c.to_string()).collect();
    let json = serde_json::to_string(&chars).expect("vocab serializes");
    std::fs::write(path, json).map_err(data_err)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("vocab {}: {e}", path.display())))?;
    let chars: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("vocab {}: {e}", path.display())))?;
    let chars: Vec<char> = chars
        .iter()
        .map(|s| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(CliError::Data(format!(
                    "vocab {}: entry {s:?} is not a single character",
                    path.display()
                ))),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(Vocabulary::from_chars(&chars))
}

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(
        argv,
        &["config", "manifest", "out-dir", "max-steps", "seed", "lm-out"],
        &[],
    )?;
    let mut cfg = load_config(&args)?;
    if let Some(v) = args.get("out-dir") {
        cfg.set("out_dir", v)?;
    }
    if let Some(v) = args.get("max-steps") {
        cfg.set("max_steps", v)?;
    }
    if let Some(v) = args.get("seed") {
        cfg.set("seed", v)?;
    }
    if let Some(v) = args.get("lm-out") {
        cfg.set("lm_out", v)?;
    }
    let manifest_path: PathBuf = match args.get("manifest") {
        Some(p) => p.into(),
        None => cfg
            .train_manifest
            .clone()
            .ok_or_else(|| CliError::Usage("train needs --manifest or train_manifest".into()))?,
    };

    let (manifest, warnings) = load_manifest(&manifest_path).map_err(data_err)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if manifest.is_empty() {
        return Err(CliError::Data("training manifest is empty".into()));
    }
    manifest.verify_audio(false).map_err(data_err)?;

    let vocab = Vocabulary::from_texts(manifest.records.iter().map(|r| r.text.as_str()));
    let model_cfg = cfg.model_config(vocab.size());
    model_cfg.validate().map_err(data_err)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(data_err)?;
    write_vocab(&cfg.out_dir.join("vocab.json"), &vocab)?;
    std::fs::write(cfg.out_dir.join("run.cfg"), cfg.serialize()).map_err(data_err)?;

    let workers = num_workers();
    let opts = cfg.train_options(workers);
    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let mut metrics_file = std::fs::File::create(&metrics_path).map_err(data_err)?;
    let log_every = ((opts.max_steps / 20).max(1)).min(50);
    let result = train(&model_cfg, &manifest, &vocab, &opts, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        let _ = writeln!(metrics_file, "{line}");
        if m.step % log_every == 0 || m.step == opts.max_steps {
            println!(
                "step {}/{} loss_hybrid {:.4} loss_ctc {:.4} loss_att {:.4} beta {:.4}{}",
                m.step,
                opts.max_steps,
                m.loss_hybrid,
                m.loss_ctc,
                m.loss_att,
                m.beta,
                if m.skipped_utts > 0 {
                    format!(" (skipped {})", m.skipped_utts)
                } else {
                    String::new()
                }
            );
        }
    });
    match result {
        Ok(_) => {}
        Err(e @ PipelineError::NonFinite { .. }) => {
            return Err(CliError::Data(format!("aborting: {e}")));
        }
        Err(e) => return Err(data_err(e)),
    }

    if let Some(lm_out) = &cfg.lm_out {
        let corpus: Vec<Vec<usize>> = manifest
            .records
            .iter()
            .map(|r| tokenize(&r.text, &vocab).map(|t| t.ids))
            .collect::<Result<_, _>>()
            .map_err(data_err)?;
        let lm = train_char_lm(&corpus, vocab.alphabet(), cfg.lm_order, cfg.lm_k)
            .map_err(data_err)?;
        write_lm(lm_out, &lm).map_err(data_err)?;
        println!("wrote character LM to {}", lm_out.display());
    }

    println!(
        "training complete: checkpoint {}, metrics {}",
        asr_core::pipeline::final_checkpoint_path(&cfg.out_dir).display(),
        metrics_path.display()
    );
    Ok(())
}
