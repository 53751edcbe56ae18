//! Training objectives: CTC loss, attention loss, and their convex hybrid.
//!
//! The CTC value is -log of the total probability over all frame alignments
//! that collapse (merge repeats, drop blanks) to the target. It is computed by
//! the standard forward dynamic program over the blank-interleaved label
//! sequence in log space; the gradient with respect to the log-probability
//! matrix comes from the forward-backward posteriors.

use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::tensor::{log_add_exp, Tensor};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("bad target: {0}")]
    BadTarget(String),
    #[error("decoder produced {steps} steps for {targets} targets")]
    LengthMismatch { steps: usize, targets: usize },
    #[error("lambda {0} outside [0, 1]")]
    BadLambda(f64),
}

/// A scalar loss node plus its plain value; `value` is +inf when the target
/// cannot be aligned (the gradient is then zero and callers should skip the
/// utterance).
#[derive(Clone, Copy, Debug)]
pub struct CtcLossResult {
    pub node: NodeId,
    pub value: f64,
}

impl CtcLossResult {
    pub fn is_alignable(&self) -> bool {
        self.value.is_finite()
    }
}

/// Loss value and gradient w.r.t. the log-prob matrix, as plain tensors.
/// Exposed so the graph node and tests share one implementation.
pub fn ctc_forward_backward(log_probs: &Tensor, target: &[usize]) -> (f64, Tensor) {
    let (t_len, k) = (log_probs.shape()[0], log_probs.shape()[1]);
    let l = target.len();
    let s_len = 2 * l + 1;
    let lab = |s: usize| -> usize {
        if s % 2 == 0 {
            0
        } else {
            target[(s - 1) / 2]
        }
    };
    let ninf = f64::NEG_INFINITY;

    // Forward.
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = log_probs.at2(0, 0);
    if s_len > 1 {
        alpha[1] = log_probs.at2(0, lab(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut best = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                best = log_add_exp(best, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && lab(s) != 0 && lab(s) != lab(s - 2) {
                best = log_add_exp(best, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if best == ninf {
                ninf
            } else {
                best + log_probs.at2(t, lab(s))
            };
        }
    }
    let mut log_p = alpha[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        log_p = log_add_exp(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
    }
    if log_p == ninf {
        return (f64::INFINITY, Tensor::zeros(&[t_len, k]));
    }

    // Backward (suffix probabilities, emissions from t+1 on).
    let mut beta = vec![ninf; t_len * s_len];
    beta[(t_len - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1) * s_len + s] + log_probs.at2(t + 1, lab(s));
            if s + 1 < s_len {
                acc = log_add_exp(
                    acc,
                    beta[(t + 1) * s_len + s + 1] + log_probs.at2(t + 1, lab(s + 1)),
                );
            }
            if s + 2 < s_len && lab(s + 2) != 0 && lab(s + 2) != lab(s) {
                acc = log_add_exp(
                    acc,
                    beta[(t + 1) * s_len + s + 2] + log_probs.at2(t + 1, lab(s + 2)),
                );
            }
            beta[t * s_len + s] = acc;
        }
    }

    // Gradient: d(-logP)/dL[t][c] = -sum_{s: lab(s)=c} exp(alpha+beta-logP).
    let mut grad = Tensor::zeros(&[t_len, k]);
    for t in 0..t_len {
        let grow = grad.row_mut(t);
        for s in 0..s_len {
            let joint = alpha[t * s_len + s] + beta[t * s_len + s];
            if joint == ninf {
                continue;
            }
            grow[lab(s)] -= (joint - log_p).exp();
        }
    }
    (-log_p, grad)
}

/// Attach a CTC loss node for `target` over the per-frame log-prob node.
/// Targets are character ids in [1, classes); blank (0) may not appear.
pub fn ctc_loss(
    g: &mut Graph,
    log_probs: NodeId,
    target: &[usize],
) -> Result<CtcLossResult, ObjectiveError> {
    let classes = g.value(log_probs).shape()[1];
    if let Some(&bad) = target.iter().find(|&&c| c == 0 || c >= classes) {
        return Err(ObjectiveError::BadTarget(format!(
            "token id {bad} outside [1, {classes})"
        )));
    }
    let (value, grad) = ctc_forward_backward(g.value(log_probs), target);
    let node = if value.is_finite() {
        g.loss_with_grad(log_probs, value, grad)
    } else {
        // Unalignable: keep the graph finite so sibling losses still train;
        // callers check `value` and skip the utterance.
        g.loss_with_grad(log_probs, 0.0, grad)
    };
    Ok(CtcLossResult { node, value })
}

/// Teacher-forced negative log-likelihood: one log-prob node per step, the
/// final step being the eos prediction.
pub fn attention_loss(
    g: &mut Graph,
    step_log_probs: &[NodeId],
    target_with_eos: &[usize],
) -> Result<NodeId, ObjectiveError> {
    if step_log_probs.len() != target_with_eos.len() {
        return Err(ObjectiveError::LengthMismatch {
            steps: step_log_probs.len(),
            targets: target_with_eos.len(),
        });
    }
    let mut picks = Vec::with_capacity(target_with_eos.len());
    for (&node, &tok) in step_log_probs.iter().zip(target_with_eos) {
        let classes = g.value(node).len();
        if tok >= classes {
            return Err(ObjectiveError::BadTarget(format!(
                "token id {tok} outside decoder classes {classes}"
            )));
        }
        picks.push(g.pick(node, tok));
    }
    let total = g.add_n(&picks);
    Ok(g.scale(total, -1.0))
}

/// Label-smoothed variant: each step mixes the target log-probability with
/// the mean over the live classes (index 0 stays masked). `alpha = 0`
/// recovers the plain loss.
pub fn attention_loss_smoothed(
    g: &mut Graph,
    step_log_probs: &[NodeId],
    target_with_eos: &[usize],
    alpha: f64,
) -> Result<NodeId, ObjectiveError> {
    if alpha == 0.0 {
        return attention_loss(g, step_log_probs, target_with_eos);
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(ObjectiveError::BadTarget(format!(
            "label smoothing {alpha} outside [0, 1)"
        )));
    }
    if step_log_probs.len() != target_with_eos.len() {
        return Err(ObjectiveError::LengthMismatch {
            steps: step_log_probs.len(),
            targets: target_with_eos.len(),
        });
    }
    let mut terms = Vec::new();
    for (&node, &tok) in step_log_probs.iter().zip(target_with_eos) {
        let classes = g.value(node).len();
        if tok >= classes {
            return Err(ObjectiveError::BadTarget(format!(
                "token id {tok} outside decoder classes {classes}"
            )));
        }
        let target_term = g.pick(node, tok);
        terms.push(g.scale(target_term, 1.0 - alpha));
        let live: Vec<NodeId> = (1..classes).map(|k| g.pick(node, k)).collect();
        let mean = g.add_n(&live);
        terms.push(g.scale(mean, alpha / (classes - 1) as f64));
    }
    let total = g.add_n(&terms);
    Ok(g.scale(total, -1.0))
}

/// loss = lambda * ctc + (1 - lambda) * attention.
pub fn hybrid_loss(
    g: &mut Graph,
    ctc: NodeId,
    att: NodeId,
    lambda: f64,
) -> Result<NodeId, ObjectiveError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ObjectiveError::BadLambda(lambda));
    }
    let c = g.scale(ctc, lambda);
    let a = g.scale(att, 1.0 - lambda);
    Ok(g.add(c, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::rng::Rng;

    fn uniform_log_probs(t: usize, k: usize) -> Tensor {
        Tensor::filled(&[t, k], (1.0 / k as f64).ln())
    }

    #[test]
    fn single_frame_uniform_three_way() {
        // vocab {blank, a, b}: only alignment for "a" is the single frame.
        let (loss, _) = ctc_forward_backward(&uniform_log_probs(1, 3), &[1]);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform_binary() {
        // Paths (a,a), (a,-), (-,a) of 4 total: P = 0.75.
        let (loss, _) = ctc_forward_backward(&uniform_log_probs(2, 2), &[1]);
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeat_needs_intervening_blank() {
        let (loss, grad) = ctc_forward_backward(&uniform_log_probs(2, 2), &[1, 1]);
        assert!(loss.is_infinite());
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_target_takes_all_blank_path() {
        let (loss, _) = ctc_forward_backward(&uniform_log_probs(2, 2), &[]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::seed(41);
        for case in 0..20 {
            let t = 2 + rng.below(4);
            let k = 2 + rng.below(3);
            let target_len = rng.below(3).min(t);
            let target: Vec<usize> = (0..target_len).map(|_| 1 + rng.below(k - 1)).collect();
            let mut store = ParamStore::new();
            let data: Vec<f64> = (0..t * k).map(|_| rng.uniform_in(-2.0, 0.0)).collect();
            store.insert("L", Tensor::from_vec(&[t, k], data));

            let loss_of = |store: &ParamStore| {
                let (v, _) = ctc_forward_backward(store.expect("L"), &target);
                v
            };
            if !loss_of(&store).is_finite() {
                continue;
            }
            let (_, grad) = ctc_forward_backward(store.expect("L"), &target);
            let eps = 1e-6;
            for i in 0..t * k {
                let orig = store.tensor(0).as_slice()[i];
                store.tensor_mut(0).as_mut_slice()[i] = orig + eps;
                let up = loss_of(&store);
                store.tensor_mut(0).as_mut_slice()[i] = orig - eps;
                let down = loss_of(&store);
                store.tensor_mut(0).as_mut_slice()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = grad.as_slice()[i];
                let denom = a.abs().max(numeric.abs()).max(1e-12);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "case {case} [{i}]: {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn loss_is_permutation_covariant() {
        let mut rng = Rng::seed(43);
        let (t, k) = (5, 4);
        let data: Vec<f64> = (0..t * k).map(|_| rng.uniform_in(-2.0, 0.0)).collect();
        let log_probs = Tensor::from_vec(&[t, k], data);
        let target = vec![1usize, 3, 2];
        let (loss, _) = ctc_forward_backward(&log_probs, &target);

        // Relabel characters by the cycle 1->2->3->1 (blank fixed).
        let perm = [0usize, 2, 3, 1];
        let mut permuted = Tensor::zeros(&[t, k]);
        for ti in 0..t {
            for c in 0..k {
                let v = log_probs.at2(ti, c);
                permuted.set2(ti, perm[c], v);
            }
        }
        let new_target: Vec<usize> = target.iter().map(|&c| perm[c]).collect();
        let (loss2, _) = ctc_forward_backward(&permuted, &new_target);
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn ctc_node_backpropagates_through_graph() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(44);
        let data: Vec<f64> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        store.insert("logits", Tensor::from_vec(&[4, 2], data));
        let mut g = Graph::new(&store);
        let logits = g.param("logits");
        let log_probs = g.log_softmax_rows(logits);
        let loss = ctc_loss(&mut g, log_probs, &[1, 1]).unwrap();
        assert!(loss.is_alignable());
        let grads = g.backward(loss.node);
        assert!(grads.get(0).is_some());
        // Finite-difference through the log-softmax too.
        let eps = 1e-6;
        let analytic = grads.get(0).unwrap().clone();
        for i in 0..8 {
            let orig = store.tensor(0).as_slice()[i];
            let eval = |store: &ParamStore| {
                let mut g = Graph::new(store);
                let logits = g.param("logits");
                let log_probs = g.log_softmax_rows(logits);
                ctc_loss(&mut g, log_probs, &[1, 1]).unwrap().value
            };
            store.tensor_mut(0).as_mut_slice()[i] = orig + eps;
            let up = eval(&store);
            store.tensor_mut(0).as_mut_slice()[i] = orig - eps;
            let down = eval(&store);
            store.tensor_mut(0).as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.as_slice()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            assert!((a - numeric).abs() / denom < 1e-5, "[{i}]: {a} vs {numeric}");
        }
    }

    #[test]
    fn blank_in_target_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let lp = g.input(uniform_log_probs(3, 3));
        assert!(matches!(
            ctc_loss(&mut g, lp, &[1, 0]),
            Err(ObjectiveError::BadTarget(_))
        ));
    }

    #[test]
    fn attention_loss_one_hot_is_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let steps: Vec<NodeId> = (0..3)
            .map(|_| {
                let mut v = vec![-1e30; 4];
                v[2] = 0.0;
                g.input(Tensor::from_vec(&[4], v))
            })
            .collect();
        let loss = attention_loss(&mut g, &steps, &[2, 2, 2]).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn attention_loss_uniform_four_symbols() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let lp = (0.25f64).ln();
        let steps: Vec<NodeId> = (0..4)
            .map(|_| {
                g.input(Tensor::from_vec(
                    &[5],
                    vec![f64::NEG_INFINITY, lp, lp, lp, lp],
                ))
            })
            .collect();
        // Targets: three characters plus eos, all uniform over 4 live symbols.
        let loss = attention_loss(&mut g, &steps, &[1, 2, 3, 4]).unwrap();
        assert!((g.value(loss).item() - 4.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_two_step_product() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s1 = g.input(Tensor::from_vec(&[2], vec![0.5f64.ln(), 0.5f64.ln()]));
        let s2 = g.input(Tensor::from_vec(&[2], vec![0.75f64.ln(), 0.25f64.ln()]));
        let loss = attention_loss(&mut g, &[s1, s2], &[0, 1]).unwrap();
        assert!((g.value(loss).item() + 0.125f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_length_mismatch() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s1 = g.input(Tensor::from_vec(&[2], vec![0.0, 0.0]));
        assert!(matches!(
            attention_loss(&mut g, &[s1], &[0, 1]),
            Err(ObjectiveError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn attention_probability_never_exceeds_one() {
        let mut rng = Rng::seed(45);
        let store = ParamStore::new();
        for _ in 0..50 {
            let mut g = Graph::new(&store);
            let n_steps = 1 + rng.below(5);
            let k = 2 + rng.below(4);
            let mut product = 1.0;
            let mut nodes = Vec::new();
            let mut targets = Vec::new();
            for _ in 0..n_steps {
                let logits: Vec<f64> = (0..k).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
                let z = crate::tensor::log_sum_exp(&logits);
                let lp: Vec<f64> = logits.iter().map(|v| v - z).collect();
                let tok = rng.below(k);
                product *= lp[tok].exp();
                targets.push(tok);
                nodes.push(g.input(Tensor::from_vec(&[k], lp)));
            }
            let loss = attention_loss(&mut g, &nodes, &targets).unwrap();
            let v = g.value(loss).item();
            assert!((-v).exp() <= 1.0 + 1e-12);
            assert!(((-v).exp() - product).abs() < 1e-12);
        }
    }

    #[test]
    fn label_smoothing_zero_matches_plain_and_positive_differs() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let lp: Vec<f64> = {
            let logits = [f64::NEG_INFINITY, 0.3, -0.2, 1.1];
            let z = crate::tensor::log_sum_exp(&logits);
            logits.iter().map(|v| v - z).collect()
        };
        let steps: Vec<NodeId> = (0..2)
            .map(|_| g.input(Tensor::from_vec(&[4], lp.clone())))
            .collect();
        let plain = attention_loss(&mut g, &steps, &[1, 3]).unwrap();
        let zero = attention_loss_smoothed(&mut g, &steps, &[1, 3], 0.0).unwrap();
        assert_eq!(g.value(plain).item(), g.value(zero).item());
        let smoothed = attention_loss_smoothed(&mut g, &steps, &[1, 3], 0.1).unwrap();
        assert_ne!(g.value(plain).item(), g.value(smoothed).item());
        // Hand-computed: -(0.9 * lp[tok] + 0.1/3 * (lp[1]+lp[2]+lp[3])) per step.
        let mean: f64 = lp[1..].iter().sum::<f64>() / 3.0;
        let want = -(0.9 * lp[1] + 0.1 * mean) - (0.9 * lp[3] + 0.1 * mean);
        assert!((g.value(smoothed).item() - want).abs() < 1e-12);
    }

    #[test]
    fn hybrid_loss_arithmetic_and_endpoints() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let ctc = g.scalar(1.0);
        let att = g.scalar(2.0);
        let h = hybrid_loss(&mut g, ctc, att, 0.3).unwrap();
        assert!((g.value(h).item() - 1.7).abs() < 1e-12);
        let h1 = hybrid_loss(&mut g, ctc, att, 1.0).unwrap();
        assert_eq!(g.value(h1).item(), 1.0);
        let h0 = hybrid_loss(&mut g, ctc, att, 0.0).unwrap();
        assert_eq!(g.value(h0).item(), 2.0);
        assert!(hybrid_loss(&mut g, ctc, att, 1.5).is_err());
    }

    #[test]
    fn hybrid_loss_linear_in_each_argument() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let lambda = 0.3;
        let evals: Vec<f64> = [(1.0, 2.0), (3.0, 2.0), (2.0, 2.0)]
            .iter()
            .map(|&(c, a)| {
                let cn = g.scalar(c);
                let an = g.scalar(a);
                let h = hybrid_loss(&mut g, cn, an, lambda).unwrap();
                g.value(h).item()
            })
            .collect();
        // f(1,2) + f(3,2) == 2 f(2,2) by linearity in the first argument.
        assert!((evals[0] + evals[1] - 2.0 * evals[2]).abs() < 1e-12);
    }
}
