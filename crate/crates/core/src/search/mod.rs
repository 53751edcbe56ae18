//! One-pass joint CTC/attention beam search with optional character n-gram
//! LM shallow fusion.
//!
//! The beam is output-synchronous: at step s every live hypothesis holds s
//! characters. Each step expands every live hypothesis over the full
//! character vocabulary (scored by the attention decoder, the CTC prefix
//! probability, and the LM) and additionally scores its eos extension, which
//! moves the hypothesis to the completed pool with the CTC score replaced by
//! the complete-sequence probability. Ranking uses
//! lambda * ctc + (1 - lambda) * att + gamma * lm with lexicographic
//! tie-breaking on token ids, so oracle comparisons are exact.

mod lm;
mod prefix;

pub use lm::{read_lm, train_char_lm, write_lm, CharNgramLm};
pub use prefix::{CtcPrefixScorer, CtcPrefixState};

use thiserror::Error;

use crate::model::decoder::{AttentionContext, AttentionState};
use crate::model::{ModelConfig, ModelError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("blank is never emitted by search")]
    BlankExpansion,
    #[error("search configuration: {0}")]
    Config(String),
    #[error("language model: {0}")]
    Lm(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug)]
pub struct BeamConfig {
    pub width: usize,
    /// CTC weight lambda in the joint score.
    pub lambda: f64,
    /// LM weight gamma; only meaningful when an LM is supplied.
    pub lm_weight: f64,
    pub max_output_length: usize,
    /// Per-token bonus added to a completed hypothesis; 0 disables.
    pub length_penalty: f64,
    /// Weight of the coverage term sum_t ln(min(1, attention mass on t))
    /// added at completion; 0 disables.
    pub coverage_weight: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 16,
            lambda: 0.3,
            lm_weight: 0.5,
            max_output_length: 200,
            length_penalty: 0.0,
            coverage_weight: 0.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.width < 1 {
            return Err(SearchError::Config("beam width must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SearchError::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.lm_weight < 0.0 {
            return Err(SearchError::Config("lm weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// A (partial or complete) decoding hypothesis with per-source scores.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score_ctc: f64,
    pub score_att: f64,
    pub score_lm: f64,
    pub score_joint: f64,
    pub complete: bool,
}

/// lambda * ctc + (1 - lambda) * att + gamma * lm, skipping zero-weighted
/// terms so a -inf score under a zero weight cannot poison the sum
/// (0 * -inf is NaN in IEEE arithmetic).
pub fn combine_scores(lambda: f64, ctc: f64, att: f64, gamma: f64, lm: f64) -> f64 {
    let mut total = 0.0;
    if lambda != 0.0 {
        total += lambda * ctc;
    }
    if lambda != 1.0 {
        total += (1.0 - lambda) * att;
    }
    if gamma != 0.0 {
        total += gamma * lm;
    }
    total
}

impl Hypothesis {
    /// The joint score recomputed from its parts.
    pub fn recombine(&self, lambda: f64, gamma: f64) -> f64 {
        combine_scores(lambda, self.score_ctc, self.score_att, gamma, self.score_lm)
    }
}

#[derive(Clone)]
struct LiveHyp {
    tokens: Vec<usize>,
    score_ctc: f64,
    score_att: f64,
    score_lm: f64,
    score_joint: f64,
    att_state: AttentionState,
    prefix_state: CtcPrefixState,
    /// Attention mass accumulated per encoder frame (for the coverage hook).
    cum_attention: Vec<f64>,
}

fn completion_bonus(beam: &BeamConfig, n_tokens: usize, cum_attention: &[f64]) -> f64 {
    let mut bonus = beam.length_penalty * n_tokens as f64;
    if beam.coverage_weight != 0.0 {
        let cov: f64 = cum_attention
            .iter()
            .map(|&c| c.min(1.0).max(1e-10).ln())
            .sum();
        bonus += beam.coverage_weight * cov;
    }
    bonus
}

/// Ranked complete hypotheses; `complete` is false only when the search
/// exhausted without pooling anything and the best live hypothesis is
/// returned instead.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    pub hyps: Vec<Hypothesis>,
    pub complete: bool,
}

impl DecodeOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.hyps[0]
    }
}


pub fn joint_beam_search(
    cfg: &ModelConfig,
    store: &ParamStore,
    h_enc: &Tensor,
    ctc_log_probs: &Tensor,
    lm: Option<&CharNgramLm>,
    beam: &BeamConfig,
) -> Result<DecodeOutput, SearchError> {
    beam.validate()?;
    if let Some(lm) = lm {
        if lm.n_chars() != cfg.vocab_chars {
            return Err(SearchError::Lm(format!(
                "lm alphabet has {} chars, model vocabulary {}",
                lm.n_chars(),
                cfg.vocab_chars
            )));
        }
    }
    let gamma = if lm.is_some() { beam.lm_weight } else { 0.0 };
    let att = AttentionContext::new(cfg, store, h_enc.clone());
    let scorer = CtcPrefixScorer::new(ctc_log_probs);
    let eos = cfg.eos();

    let t_frames = h_enc.shape()[0];
    let mut live = vec![LiveHyp {
        tokens: Vec::new(),
        score_ctc: 0.0,
        score_att: 0.0,
        score_lm: 0.0,
        score_joint: 0.0,
        att_state: att.initial_state(),
        prefix_state: scorer.initial_state(),
        cum_attention: vec![0.0; t_frames],
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for step in 0..=beam.max_output_length {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<LiveHyp> = Vec::new();
        for hyp in &live {
            let prev = *hyp.tokens.last().unwrap_or(&ModelConfig::BLANK);
            let (att_state, log_probs) = att.step(&hyp.att_state, prev)?;
            let mut cum_attention = hyp.cum_attention.clone();
            for (c, w) in cum_attention.iter_mut().zip(&att_state.weights) {
                *c += w;
            }

            // eos: the hypothesis completes; its CTC part becomes the
            // complete-sequence probability.
            let eos_att = hyp.score_att + log_probs[eos];
            let eos_ctc = scorer.complete_score(&hyp.prefix_state);
            let eos_lm = hyp.score_lm
                + lm.map_or(0.0, |m| m.score(&hyp.tokens, m.eos()));
            let eos_joint = combine_scores(beam.lambda, eos_ctc, eos_att, gamma, eos_lm)
                + completion_bonus(beam, hyp.tokens.len(), &cum_attention);
            pool.push(Hypothesis {
                tokens: hyp.tokens.clone(),
                score_ctc: eos_ctc,
                score_att: eos_att,
                score_lm: eos_lm,
                score_joint: eos_joint,
                complete: true,
            });

            if step == beam.max_output_length {
                continue;
            }
            for c in 1..=cfg.vocab_chars {
                let (prefix_state, score_ctc) = scorer.extend(&hyp.prefix_state, c)?;
                let score_att = hyp.score_att + log_probs[c];
                let score_lm = hyp.score_lm + lm.map_or(0.0, |m| m.score(&hyp.tokens, c));
                let score_joint = combine_scores(beam.lambda, score_ctc, score_att, gamma, score_lm);
                let mut tokens = hyp.tokens.clone();
                tokens.push(c);
                candidates.push(LiveHyp {
                    tokens,
                    score_ctc,
                    score_att,
                    score_lm,
                    score_joint,
                    att_state: att_state.clone(),
                    prefix_state,
                    cum_attention: cum_attention.clone(),
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score_joint
                .total_cmp(&a.score_joint)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(beam.width);
        live = candidates;
    }

    if pool.is_empty() {
        // Exhausted without a completion: surface the best incomplete
        // hypothesis, flagged.
        let hyps = live
            .into_iter()
            .map(|h| Hypothesis {
                tokens: h.tokens,
                score_ctc: h.score_ctc,
                score_att: h.score_att,
                score_lm: h.score_lm,
                score_joint: h.score_joint,
                complete: false,
            })
            .collect::<Vec<_>>();
        if hyps.is_empty() {
            return Err(SearchError::Config("beam produced no hypotheses".into()));
        }
        return Ok(DecodeOutput {
            hyps,
            complete: false,
        });
    }
    pool.sort_by(|a, b| {
        b.score_joint
            .total_cmp(&a.score_joint)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(DecodeOutput {
        hyps: pool,
        complete: true,
    })
}

/// Frame-wise argmax followed by CTC collapse (merge repeats, drop blanks).
pub fn greedy_ctc_decode(ctc_log_probs: &Tensor) -> Vec<usize> {
    let (t_len, k) = (ctc_log_probs.shape()[0], ctc_log_probs.shape()[1]);
    let mut out = Vec::new();
    let mut prev = 0usize;
    for t in 0..t_len {
        let row = ctc_log_probs.row(t);
        let mut best = 0usize;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best != 0 && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}
