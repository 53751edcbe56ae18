//! Incremental CTC prefix probability.
//!
//! For a prefix h, alpha_CTC(h) = log P(the CTC output begins with h). The
//! recursion keeps, per time index, the log probability that the emitted
//! prefix is exactly h with the path ending in a non-blank (the last symbol
//! of h) or in a blank. Extending by one character costs O(T).

use crate::tensor::{log_add_exp, Tensor};

use super::SearchError;

#[derive(Clone, Debug)]
pub struct CtcPrefixState {
    /// log P(prefix emitted, path ends at t in the prefix's last character)
    r_nonblank: Vec<f64>,
    /// log P(prefix emitted, path ends at t in blank)
    r_blank: Vec<f64>,
    last: Option<usize>,
}

pub struct CtcPrefixScorer<'a> {
    log_probs: &'a Tensor,
    t_len: usize,
    classes: usize,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_probs: &'a Tensor) -> Self {
        assert_eq!(log_probs.rank(), 2);
        CtcPrefixScorer {
            log_probs,
            t_len: log_probs.shape()[0],
            classes: log_probs.shape()[1],
        }
    }

    /// State of the empty prefix: blank-only paths.
    pub fn initial_state(&self) -> CtcPrefixState {
        let mut r_blank = Vec::with_capacity(self.t_len);
        let mut acc = 0.0;
        for t in 0..self.t_len {
            acc += self.log_probs.at2(t, 0);
            r_blank.push(acc);
        }
        CtcPrefixState {
            r_nonblank: vec![f64::NEG_INFINITY; self.t_len],
            r_blank,
            last: None,
        }
    }

    /// Extend `state`'s prefix with a character; returns the new state and
    /// the total prefix log probability alpha_CTC(prefix . next).
    pub fn extend(
        &self,
        state: &CtcPrefixState,
        next: usize,
    ) -> Result<(CtcPrefixState, f64), SearchError> {
        if next == 0 {
            return Err(SearchError::BlankExpansion);
        }
        if next >= self.classes {
            return Err(SearchError::Config(format!(
                "token {next} outside CTC classes {}",
                self.classes
            )));
        }
        let ninf = f64::NEG_INFINITY;
        let mut r_nonblank = vec![ninf; self.t_len];
        let mut r_blank = vec![ninf; self.t_len];
        // phi_t: probability the previous prefix ends just before t in a way
        // that allows `next` to start at t.
        let mut prefix_log_prob = ninf;
        for t in 0..self.t_len {
            let phi = if t == 0 {
                if state.last.is_none() {
                    0.0
                } else {
                    ninf
                }
            } else {
                let mut p = state.r_blank[t - 1];
                if state.last != Some(next) {
                    p = log_add_exp(p, state.r_nonblank[t - 1]);
                }
                p
            };
            let emit = self.log_probs.at2(t, next);
            let stay = if t == 0 { ninf } else { r_nonblank[t - 1] };
            r_nonblank[t] = log_add_exp(stay, phi) + emit;
            let from = if t == 0 {
                ninf
            } else {
                log_add_exp(r_blank[t - 1], r_nonblank[t - 1])
            };
            r_blank[t] = from + self.log_probs.at2(t, 0);
            prefix_log_prob = log_add_exp(prefix_log_prob, phi + emit);
            debug_assert!(log_add_exp(r_blank[t], r_nonblank[t]) <= 1e-9);
        }
        Ok((
            CtcPrefixState {
                r_nonblank,
                r_blank,
                last: Some(next),
            },
            prefix_log_prob,
        ))
    }

    /// log P(the CTC output is exactly this prefix): the termination score a
    /// hypothesis takes when it emits eos.
    pub fn complete_score(&self, state: &CtcPrefixState) -> f64 {
        let t = self.t_len - 1;
        if state.last.is_none() {
            state.r_blank[t]
        } else {
            log_add_exp(state.r_nonblank[t], state.r_blank[t])
        }
    }
}
