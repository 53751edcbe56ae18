use std::collections::BTreeMap;
use std::path::Path;

use asr_core::corpus::load_manifest;
use asr_core::corpus::score::score;

use crate::args::Args;
use crate::commands::data_err;
use crate::CliError;

fn read_lines(path: &str) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Hypotheses from decode JSONL, keyed by utterance id.
fn read_hyps_jsonl(path: &str) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{path} line {}: {e}", i + 1)))?;
        let utt = v["utt"]
            .as_str()
            .ok_or_else(|| CliError::Data(format!("{path} line {}: missing utt", i + 1)))?;
        let hyp = v["hyp"]
            .as_str()
            .ok_or_else(|| CliError::Data(format!("{path} line {}: missing hyp", i + 1)))?;
        out.insert(utt.to_string(), hyp.to_string());
    }
    Ok(out)
}

pub fn run(argv: &[String]) -> Result<(), CliError> {
    let args = Args::parse(
        argv,
        &["config", "refs", "hyps", "refs-manifest", "hyps-jsonl", "json"],
        &[],
    )?;
    let (hyps, refs) = match (args.get("refs"), args.get("hyps")) {
        (Some(refs_path), Some(hyps_path)) => {
            let refs = read_lines(refs_path)?;
            let hyps = read_lines(hyps_path)?;
            (hyps, refs)
        }
        _ => match (args.get("refs-manifest"), args.get("hyps-jsonl")) {
            (Some(manifest_path), Some(jsonl_path)) => {
                let (manifest, _) = load_manifest(Path::new(manifest_path)).map_err(data_err)?;
                let by_id = read_hyps_jsonl(jsonl_path)?;
                let mut refs = Vec::with_capacity(manifest.len());
                let mut hyps = Vec::with_capacity(manifest.len());
                for r in &manifest.records {
                    let id = r.utt_id();
                    let hyp = by_id.get(&id).ok_or_else(|| {
                        CliError::Data(format!("no hypothesis for utterance {id:?}"))
                    })?;
                    refs.push(r.text.clone());
                    hyps.push(hyp.clone());
                }
                (hyps, refs)
            }
            _ => {
                return Err(CliError::Usage(
                    "score needs --refs/--hyps or --refs-manifest/--hyps-jsonl".into(),
                ))
            }
        },
    };
    let report = score(&hyps, &refs).map_err(data_err)?;
    println!("{:>4}  {:>7}  {:>7}  reference | hypothesis", "utt", "cer%", "wer%");
    for u in &report.per_utt {
        let cer = if u.ref_chars == 0 {
            0.0
        } else {
            100.0 * u.char_edits.total() as f64 / u.ref_chars as f64
        };
        let wer = if u.ref_words == 0 {
            0.0
        } else {
            100.0 * u.word_edits.total() as f64 / u.ref_words as f64
        };
        println!("{:>4}  {:>7.2}  {:>7.2}  {} | {}", u.index, cer, wer, u.reference, u.hypothesis);
    }
    println!(
        "CER {:.2}%  ({} sub, {} del, {} ins over {} reference chars)",
        100.0 * report.cer,
        report.char_edits.substitutions,
        report.char_edits.deletions,
        report.char_edits.insertions,
        report.ref_chars
    );
    println!(
        "WER {:.2}%  ({} sub, {} del, {} ins over {} reference words)",
        100.0 * report.wer,
        report.word_edits.substitutions,
        report.word_edits.deletions,
        report.word_edits.insertions,
        report.ref_words
    );
    if let Some(json_path) = args.get("json") {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(json_path, json).map_err(data_err)?;
    }
    Ok(())
}
