//! Corpus handling: JSON-lines manifests, character vocabulary and
//! tokenization, synthetic corpus generation, and CER/WER scoring.
//!
//! Text normalization is lowercasing plus collapsing whitespace runs to a
//! single space. Turkish dotted/dotless i is handled by an explicit casefold
//! ('I' -> dotless i, dotted-capital I -> 'i') because the standard Unicode
//! lowercasing of "I" would corrupt Turkish text.

pub mod score;
pub mod synth;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    ParseLine { line: usize, msg: String },
    #[error("missing audio files: {}", paths.join(", "))]
    MissingAudio { paths: Vec<String> },
    #[error("out-of-vocabulary characters: {}", describe_oov(positions))]
    Oov { positions: Vec<(usize, char)> },
    #[error("have {refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("synthesis: {0}")]
    Synth(String),
}

fn describe_oov(positions: &[(usize, char)]) -> String {
    positions
        .iter()
        .map(|(i, c)| format!("{c:?} at position {i}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Lowercase (Turkish-aware) and collapse whitespace runs.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !out.is_empty() {
                pending_space = true;
            }
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        match c {
            'I' => out.push('\u{131}'), // dotless i
            '\u{130}' => out.push('i'), // dotted capital I
            _ => out.extend(c.to_lowercase()),
        }
    }
    out
}

/// Character inventory with reserved ids: blank = 0, eos = last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: &[char]) -> Self {
        let mut sorted: Vec<char> = chars.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let index = sorted.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        Vocabulary {
            chars: sorted,
            index,
        }
    }

    /// Collect the alphabet from normalized transcripts.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut chars: Vec<char> = texts
            .into_iter()
            .flat_map(|t| normalize_text(t).chars().collect::<Vec<_>>())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_chars(&chars)
    }

    pub fn size(&self) -> usize {
        self.chars.len()
    }

    pub const BLANK: usize = 0;

    pub fn eos(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        (id >= 1 && id <= self.chars.len()).then(|| self.chars[id - 1])
    }

    pub fn alphabet(&self) -> &[char] {
        &self.chars
    }
}

/// A tokenized transcript: character ids (no blank, no eos) plus the
/// normalized text they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub text: String,
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence, CorpusError> {
    let normalized = normalize_text(text);
    let mut ids = Vec::with_capacity(normalized.chars().count());
    let mut oov = Vec::new();
    for (i, c) in normalized.chars().enumerate() {
        match vocab.id_of(c) {
            Some(id) => ids.push(id),
            None => oov.push((i, c)),
        }
    }
    if !oov.is_empty() {
        return Err(CorpusError::Oov { positions: oov });
    }
    Ok(TokenSequence {
        ids,
        text: normalized,
    })
}

pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    ids.iter().filter_map(|&id| vocab.char_of(id)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub audio: String,
    pub text: String,
    pub duration_s: f64,
}

impl ManifestRecord {
    /// Utterance id: the audio path with its extension stripped.
    pub fn utt_id(&self) -> String {
        match self.audio.rsplit_once('.') {
            Some((stem, _)) => stem.to_string(),
            None => self.audio.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory audio paths are relative to (the manifest's parent).
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn audio_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.audio)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Check referenced audio exists. With `fail_fast`, stops at the first
    /// missing file; otherwise the error collects all of them.
    pub fn verify_audio(&self, fail_fast: bool) -> Result<(), CorpusError> {
        let mut missing = Vec::new();
        for r in &self.records {
            if !self.audio_path(r).is_file() {
                missing.push(r.audio.clone());
                if fail_fast {
                    break;
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CorpusError::MissingAudio { paths: missing })
        }
    }
}

/// Load and validate a JSON-lines manifest. Returns the manifest plus
/// warnings (e.g. an empty file) that callers may surface.
pub fn load_manifest(path: &Path) -> Result<(CorpusManifest, Vec<String>), CorpusError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::ParseLine {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if record.text.trim().is_empty() {
            return Err(CorpusError::ParseLine {
                line: i + 1,
                msg: "empty transcript".into(),
            });
        }
        if !(record.duration_s > 0.0) {
            return Err(CorpusError::ParseLine {
                line: i + 1,
                msg: format!("non-positive duration {}", record.duration_s),
            });
        }
        if !seen.insert(record.audio.clone()) {
            return Err(CorpusError::ParseLine {
                line: i + 1,
                msg: format!("duplicate audio path {:?}", record.audio),
            });
        }
        records.push(record);
    }
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push(format!("manifest {display} is empty"));
    }
    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((CorpusManifest { records, root }, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_round_trip() {
        let vocab = Vocabulary::from_chars(&['a', 'b']);
        let toks = tokenize("aba", &vocab).unwrap();
        assert_eq!(toks.ids, vec![1, 2, 1]);
        assert_eq!(detokenize(&toks.ids, &vocab), "aba");
    }

    #[test]
    fn empty_string_tokenizes_empty() {
        let vocab = Vocabulary::from_chars(&['a']);
        let toks = tokenize("", &vocab).unwrap();
        assert!(toks.ids.is_empty());
    }

    #[test]
    fn oov_reports_position() {
        let vocab = Vocabulary::from_chars(&['a', 'b']);
        match tokenize("abc", &vocab) {
            Err(CorpusError::Oov { positions }) => {
                assert_eq!(positions, vec![(2, 'c')]);
            }
            other => panic!("expected oov, got {other:?}"),
        }
    }

    #[test]
    fn turkish_casefold() {
        assert_eq!(normalize_text("I"), "\u{131}");
        assert_eq!(normalize_text("\u{130}"), "i");
        assert_eq!(normalize_text("KAPI"), "kap\u{131}");
    }

    #[test]
    fn whitespace_collapses() {
        assert_eq!(normalize_text("  a\t b\n\nc  "), "a b c");
    }

    #[test]
    fn vocabulary_reserves_blank_and_eos() {
        let vocab = Vocabulary::from_texts(["b a", "ab"]);
        // sorted: ' ', 'a', 'b'
        assert_eq!(vocab.size(), 3);
        assert_eq!(vocab.id_of(' '), Some(1));
        assert_eq!(vocab.id_of('a'), Some(2));
        assert_eq!(vocab.eos(), 4);
        assert_eq!(vocab.char_of(0), None);
        assert_eq!(vocab.char_of(4), None);
    }

    fn write_lines(name: &str, lines: &[&str]) -> PathBuf {
        let dir = std::env::temp_dir().join("asr_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn empty_manifest_warns() {
        let path = write_lines("empty.jsonl", &[]);
        let (manifest, warnings) = load_manifest(&path).unwrap();
        assert!(manifest.is_empty());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn missing_text_field_names_line() {
        let path = write_lines(
            "bad.jsonl",
            &[
                r#"{"audio": "a.wav", "text": "hi", "duration_s": 1.0}"#,
                r#"{"audio": "b.wav", "duration_s": 1.0}"#,
            ],
        );
        match load_manifest(&path) {
            Err(CorpusError::ParseLine { line: 2, .. }) => {}
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn three_rows_preserve_order() {
        let path = write_lines(
            "three.jsonl",
            &[
                r#"{"audio": "wavs/u1.wav", "text": "one", "duration_s": 1.0}"#,
                r#"{"audio": "wavs/u2.wav", "text": "two", "duration_s": 0.5}"#,
                r#"{"audio": "wavs/u3.wav", "text": "three", "duration_s": 2.0}"#,
            ],
        );
        let (manifest, warnings) = load_manifest(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(manifest.len(), 3);
        assert_eq!(manifest.records[1].text, "two");
        assert_eq!(manifest.records[2].utt_id(), "wavs/u3");
    }

    #[test]
    fn duplicate_paths_rejected() {
        let path = write_lines(
            "dup.jsonl",
            &[
                r#"{"audio": "a.wav", "text": "x", "duration_s": 1.0}"#,
                r#"{"audio": "a.wav", "text": "y", "duration_s": 1.0}"#,
            ],
        );
        assert!(matches!(
            load_manifest(&path),
            Err(CorpusError::ParseLine { line: 2, .. })
        ));
    }

    #[test]
    fn missing_audio_collected() {
        let path = write_lines(
            "noaudio.jsonl",
            &[
                r#"{"audio": "gone1.wav", "text": "x", "duration_s": 1.0}"#,
                r#"{"audio": "gone2.wav", "text": "y", "duration_s": 1.0}"#,
            ],
        );
        let (manifest, _) = load_manifest(&path).unwrap();
        match manifest.verify_audio(false) {
            Err(CorpusError::MissingAudio { paths }) => assert_eq!(paths.len(), 2),
            other => panic!("expected missing audio, got {other:?}"),
        }
        match manifest.verify_audio(true) {
            Err(CorpusError::MissingAudio { paths }) => assert_eq!(paths.len(), 1),
            other => panic!("expected missing audio, got {other:?}"),
        }
    }
}
