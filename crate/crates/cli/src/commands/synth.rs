use std::path::PathBuf;

use asr_core::corpus::synth::synth_corpus;

use crate::args::Args;
use crate::commands::{data_err, load_config};
use crate::CliError;

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(
        argv,
        &["config", "out-dir", "n-utts", "alphabet-size", "seed"],
        &[],
    )?;
    let mut cfg = load_config(&args)?;
    if let Some(v) = args.get("n-utts") {
        cfg.set("synth_n_utts", v)?;
    }
    if let Some(v) = args.get("alphabet-size") {
        cfg.set("synth_alphabet", v)?;
    }
    if let Some(v) = args.get("seed") {
        cfg.set("seed", v)?;
    }
    let out_dir: PathBuf = match args.get("out-dir") {
        Some(p) => p.into(),
        None => cfg
            .synth_out_dir
            .clone()
            .ok_or_else(|| CliError::Usage("synth needs --out-dir or synth_out_dir".into()))?,
    };
    let manifest = synth_corpus(cfg.synth_n_utts, cfg.synth_alphabet, cfg.seed, &out_dir)
        .map_err(data_err)?;
    println!(
        "wrote {} utterances to {} (manifest.jsonl, wavs/)",
        manifest.len(),
        out_dir.display()
    );
    Ok(())
}
