//! Character n-gram language model with add-k smoothing, for shallow fusion.
//!
//! Contexts are the previous order-1 token ids, left-padded with 0 at the
//! start of an utterance. Conditionals cover the characters plus eos:
//! P(c | ctx) = (count + k) / (total + k * (V + 1)). A context never seen in
//! training backs off to the uniform 1 / (V + 1); a token outside the LM
//! alphabet scores the leftover k-mass share rather than raising.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::SearchError;

const PAD: u16 = 0;

#[derive(Clone, Debug)]
struct ContextRow {
    /// log P per token id (index 0 unused, 1..=V chars, V+1 eos).
    log_probs: Vec<f64>,
    /// log of the unseen-token share k / (total + k (V+1)).
    log_unk: f64,
}

#[derive(Clone, Debug)]
pub struct CharNgramLm {
    pub order: usize,
    pub k: f64,
    /// Characters in token-id order: alphabet\[i] has id i+1.
    pub alphabet: Vec<char>,
    table: BTreeMap<Vec<u16>, ContextRow>,
}

impl CharNgramLm {
    pub fn n_chars(&self) -> usize {
        self.alphabet.len()
    }

    pub fn eos(&self) -> usize {
        self.alphabet.len() + 1
    }

    fn context_of(&self, prefix: &[usize]) -> Vec<u16> {
        let n = self.order - 1;
        let mut ctx = vec![PAD; n];
        for (slot, &tok) in ctx
            .iter_mut()
            .rev()
            .zip(prefix.iter().rev())
        {
            *slot = tok as u16;
        }
        ctx
    }

    /// log P(next | last order-1 tokens of prefix).
    pub fn score(&self, prefix: &[usize], next: usize) -> f64 {
        let v = self.n_chars();
        let uniform = -( (v + 1) as f64 ).ln();
        let ctx = self.context_of(prefix);
        match self.table.get(&ctx) {
            None => uniform,
            Some(row) => {
                if next >= 1 && next <= v + 1 {
                    row.log_probs[next]
                } else {
                    row.log_unk
                }
            }
        }
    }
}

/// Estimate an LM from tokenized transcripts (character ids, no eos).
pub fn train_char_lm(
    corpus: &[Vec<usize>],
    alphabet: &[char],
    order: usize,
    k: f64,
) -> Result<CharNgramLm, SearchError> {
    if order < 1 {
        return Err(SearchError::Config("lm order must be >= 1".into()));
    }
    if corpus.is_empty() {
        return Err(SearchError::Config("lm corpus is empty".into()));
    }
    if !(k > 0.0) {
        return Err(SearchError::Config("add-k smoothing needs k > 0".into()));
    }
    let v = alphabet.len();
    let eos = (v + 1) as u16;
    let mut counts: BTreeMap<Vec<u16>, BTreeMap<u16, u64>> = BTreeMap::new();
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&t| t == 0 || t > v) {
            return Err(SearchError::Config(format!(
                "lm corpus token id {bad} outside alphabet of {v}"
            )));
        }
        let mut ctx = vec![PAD; order - 1];
        for &tok in seq {
            let tok = tok as u16;
            *counts.entry(ctx.clone()).or_default().entry(tok).or_insert(0) += 1;
            if order > 1 {
                ctx.rotate_left(1);
                ctx[order - 2] = tok;
            }
        }
        *counts.entry(ctx.clone()).or_default().entry(eos).or_insert(0) += 1;
    }
    let mut table = BTreeMap::new();
    for (ctx, by_tok) in counts {
        let total: u64 = by_tok.values().sum();
        let denom = total as f64 + k * (v + 1) as f64;
        let mut log_probs = vec![f64::NEG_INFINITY; v + 2];
        for tok in 1..=v + 1 {
            let c = by_tok.get(&(tok as u16)).copied().unwrap_or(0);
            log_probs[tok] = ((c as f64 + k) / denom).ln();
        }
        table.insert(
            ctx,
            ContextRow {
                log_probs,
                log_unk: (k / denom).ln(),
            },
        );
    }
    Ok(CharNgramLm {
        order,
        k,
        alphabet: alphabet.to_vec(),
        table,
    })
}

fn ctx_display(ctx: &[u16], alphabet: &[char]) -> String {
    let mut out = String::new();
    for &t in ctx {
        if t == PAD {
            out.push_str("<s>");
        } else {
            out.push(alphabet[t as usize - 1]);
        }
    }
    out
}

fn tok_display(tok: usize, alphabet: &[char]) -> String {
    if tok == alphabet.len() + 1 {
        "</s>".to_string()
    } else {
        alphabet[tok - 1].to_string()
    }
}

/// Text format: header lines (order, k, alphabet), then one row per
/// (context, token): `context<TAB>token<TAB>logprob`.
pub fn write_lm(path: &Path, lm: &CharNgramLm) -> Result<(), SearchError> {
    if lm.alphabet.iter().any(|&c| "<>\t\n".contains(c)) {
        return Err(SearchError::Config(
            "lm alphabet may not contain '<', '>', tab, or newline".into(),
        ));
    }
    let mut out = String::new();
    out.push_str(&format!("order\t{}\n", lm.order));
    out.push_str(&format!("k\t{}\n", lm.k));
    out.push_str(&format!(
        "alphabet\t{}\n",
        lm.alphabet.iter().collect::<String>()
    ));
    for (ctx, row) in &lm.table {
        let ctx_s = ctx_display(ctx, &lm.alphabet);
        for tok in 1..=lm.alphabet.len() + 1 {
            out.push_str(&format!(
                "{ctx_s}\t{}\t{:.17e}\n",
                tok_display(tok, &lm.alphabet),
                row.log_probs[tok]
            ));
        }
        out.push_str(&format!("{ctx_s}\t<unk>\t{:.17e}\n", row.log_unk));
    }
    let mut f = std::fs::File::create(path).map_err(|e| SearchError::Lm(e.to_string()))?;
    f.write_all(out.as_bytes())
        .map_err(|e| SearchError::Lm(e.to_string()))?;
    Ok(())
}

pub fn read_lm(path: &Path) -> Result<CharNgramLm, SearchError> {
    let file = std::fs::File::open(path).map_err(|e| SearchError::Lm(e.to_string()))?;
    let reader = std::io::BufReader::new(file);
    let mut order = None;
    let mut k = None;
    let mut alphabet: Option<Vec<char>> = None;
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SearchError::Lm(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| SearchError::Lm(format!("line {}: {m}", i + 1));
        match (parts.as_slice(), i) {
            (["order", v], _) => order = Some(v.parse().map_err(|_| bad("bad order"))?),
            (["k", v], _) => k = Some(v.parse().map_err(|_| bad("bad k"))?),
            (["alphabet", v], _) => alphabet = Some(v.chars().collect()),
            ([ctx, tok, lp], _) => {
                rows.push((
                    ctx.to_string(),
                    tok.to_string(),
                    lp.parse().map_err(|_| bad("bad logprob"))?,
                ))
            }
            _ => return Err(bad("unparseable line")),
        }
    }
    let order: usize = order.ok_or_else(|| SearchError::Lm("missing order header".into()))?;
    let k: f64 = k.ok_or_else(|| SearchError::Lm("missing k header".into()))?;
    let alphabet = alphabet.ok_or_else(|| SearchError::Lm("missing alphabet header".into()))?;
    let v = alphabet.len();
    let id_of = |s: &str| -> Result<usize, SearchError> {
        if s == "</s>" {
            return Ok(v + 1);
        }
        let c: Vec<char> = s.chars().collect();
        if c.len() != 1 {
            return Err(SearchError::Lm(format!("bad token {s:?}")));
        }
        alphabet
            .iter()
            .position(|&a| a == c[0])
            .map(|i| i + 1)
            .ok_or_else(|| SearchError::Lm(format!("token {s:?} outside alphabet")))
    };
    let parse_ctx = |s: &str| -> Result<Vec<u16>, SearchError> {
        let mut ctx = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("<s>") {
                ctx.push(PAD);
                rest = r;
            } else {
                let c = rest.chars().next().unwrap();
                let id = alphabet
                    .iter()
                    .position(|&a| a == c)
                    .ok_or_else(|| SearchError::Lm(format!("context char {c:?} outside alphabet")))?;
                ctx.push((id + 1) as u16);
                rest = &rest[c.len_utf8()..];
            }
        }
        if ctx.len() != order - 1 {
            return Err(SearchError::Lm(format!(
                "context {s:?} has {} tokens, order {order} needs {}",
                ctx.len(),
                order - 1
            )));
        }
        Ok(ctx)
    };
    let mut table: BTreeMap<Vec<u16>, ContextRow> = BTreeMap::new();
    for (ctx_s, tok_s, lp) in rows {
        let ctx = parse_ctx(&ctx_s)?;
        let row = table.entry(ctx).or_insert_with(|| ContextRow {
            log_probs: vec![f64::NEG_INFINITY; v + 2],
            log_unk: f64::NEG_INFINITY,
        });
        if tok_s == "<unk>" {
            row.log_unk = lp;
        } else {
            row.log_probs[id_of(&tok_s)?] = lp;
        }
    }
    for (ctx, row) in &table {
        let total: f64 = row.log_probs[1..].iter().map(|lp| lp.exp()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SearchError::Lm(format!(
                "context {:?} normalizes to {total}, expected 1",
                ctx_display(ctx, &alphabet)
            )));
        }
    }
    Ok(CharNgramLm {
        order,
        k,
        alphabet,
        table,
    })
}
