//! CER/WER scoring via unit-cost Levenshtein alignment.
//!
//! Among all minimal edit scripts the substitution count is canonicalized to
//! its minimum; deletions and insertions then follow from the length
//! difference. That makes the (S, D, I) decomposition symmetric under
//! swapping reference and hypothesis (S fixed, D and I exchanged).

use serde::Serialize;

use super::{normalize_text, CorpusError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
    }
}

/// Minimal edit decomposition turning `reference` into `hypothesis`.
pub fn edit_counts<T: Eq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (rl, hl) = (reference.len(), hypothesis.len());
    // Per cell: (min edits, min substitutions at that edit count).
    let mut prev: Vec<(usize, usize)> = (0..=hl).map(|j| (j, 0)).collect();
    let mut curr = vec![(0usize, 0usize); hl + 1];
    for i in 1..=rl {
        curr[0] = (i, 0);
        for j in 1..=hl {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = {
                let (e, s) = prev[j - 1];
                if same {
                    (e, s)
                } else {
                    (e + 1, s + 1)
                }
            };
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (curr[j - 1].0 + 1, curr[j - 1].1);
            curr[j] = [diag, del, ins].into_iter().min().unwrap();
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let (edits, subs) = prev[hl];
    // D - I equals the length difference; D + I = edits - subs.
    let remaining = edits - subs;
    let (deletions, insertions) = if rl >= hl {
        let diff = rl - hl;
        ((remaining + diff) / 2, (remaining - diff) / 2)
    } else {
        let diff = hl - rl;
        ((remaining - diff) / 2, (remaining + diff) / 2)
    };
    EditCounts {
        substitutions: subs,
        deletions,
        insertions,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UttScore {
    pub index: usize,
    pub reference: String,
    pub hypothesis: String,
    pub char_edits: EditCounts,
    pub word_edits: EditCounts,
    pub ref_chars: usize,
    pub ref_words: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub cer: f64,
    pub wer: f64,
    pub char_edits: EditCounts,
    pub word_edits: EditCounts,
    pub ref_chars: usize,
    pub ref_words: usize,
    pub per_utt: Vec<UttScore>,
}

fn rate(edits: usize, reference: usize) -> f64 {
    if reference == 0 {
        if edits == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        edits as f64 / reference as f64
    }
}

/// Corpus-level scoring: edits and reference lengths are pooled over all
/// utterances, so the totals are invariant to utterance order.
pub fn score(hyps: &[String], refs: &[String]) -> Result<EvalReport, CorpusError> {
    if hyps.len() != refs.len() {
        return Err(CorpusError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let mut char_total = EditCounts::default();
    let mut word_total = EditCounts::default();
    let mut ref_chars = 0;
    let mut ref_words = 0;
    let mut per_utt = Vec::with_capacity(refs.len());
    for (i, (hyp, reference)) in hyps.iter().zip(refs).enumerate() {
        let h = normalize_text(hyp);
        let r = normalize_text(reference);
        let h_chars: Vec<char> = h.chars().collect();
        let r_chars: Vec<char> = r.chars().collect();
        let char_edits = edit_counts(&r_chars, &h_chars);
        let h_words: Vec<&str> = h.split_whitespace().collect();
        let r_words: Vec<&str> = r.split_whitespace().collect();
        let word_edits = edit_counts(&r_words, &h_words);
        char_total.add(&char_edits);
        word_total.add(&word_edits);
        ref_chars += r_chars.len();
        let n_ref_words = r_words.len();
        ref_words += n_ref_words;
        drop(r_words);
        drop(h_words);
        per_utt.push(UttScore {
            index: i,
            reference: r,
            hypothesis: h,
            char_edits,
            word_edits,
            ref_chars: r_chars.len(),
            ref_words: n_ref_words,
        });
    }
    Ok(EvalReport {
        cer: rate(char_total.total(), ref_chars),
        wer: rate(word_total.total(), ref_words),
        char_edits: char_total,
        word_edits: word_total,
        ref_chars,
        ref_words,
        per_utt,
    })
}
