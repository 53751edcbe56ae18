use std::path::PathBuf;

use asr_core::audio::read_wav;
use asr_core::corpus::load_manifest;
use asr_core::frontend::{compute_fbank, compute_spectrogram, write_ftmx};

use crate::args::Args;
use crate::commands::{data_err, load_config};
use crate::config::FeatKind;
use crate::CliError;

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(argv, &["config", "manifest", "out-dir", "kind"], &[])?;
    let mut cfg = load_config(&args)?;
    if let Some(v) = args.get("kind") {
        cfg.set("feat_kind", v)?;
    }
    let manifest_path: PathBuf = match args.get("manifest") {
        Some(p) => p.into(),
        None => cfg
            .test_manifest
            .clone()
            .ok_or_else(|| CliError::Usage("featurize needs --manifest or test_manifest".into()))?,
    };
    let out_dir: PathBuf = match args.get("out-dir") {
        Some(p) => p.into(),
        None => cfg
            .feat_out_dir
            .clone()
            .ok_or_else(|| CliError::Usage("featurize needs --out-dir or feat_out_dir".into()))?,
    };
    std::fs::create_dir_all(&out_dir).map_err(data_err)?;
    let (manifest, warnings) = load_manifest(&manifest_path).map_err(data_err)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    manifest.verify_audio(false).map_err(data_err)?;
    let frontend = cfg.frontend_config();
    let mut written = 0usize;
    for record in &manifest.records {
        let audio = read_wav(&manifest.audio_path(record)).map_err(data_err)?;
        let stem = record.utt_id().replace('/', "_");
        if matches!(cfg.feat_kind, FeatKind::Both | FeatKind::Fbank) {
            let feat = compute_fbank(&audio, &frontend).map_err(data_err)?;
            write_ftmx(&out_dir.join(format!("{stem}.fbank.ftmx")), &feat).map_err(data_err)?;
            written += 1;
        }
        if matches!(cfg.feat_kind, FeatKind::Both | FeatKind::Spectrogram) {
            let feat = compute_spectrogram(&audio, &frontend).map_err(data_err)?;
            write_ftmx(&out_dir.join(format!("{stem}.spec.ftmx")), &feat).map_err(data_err)?;
            written += 1;
        }
    }
    println!(
        "wrote {written} feature files for {} utterances to {}",
        manifest.len(),
        out_dir.display()
    );
    Ok(())
}
