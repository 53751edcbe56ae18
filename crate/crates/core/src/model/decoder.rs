//! Attention decoder.
//!
//! Score for frame t: e_t = w . tanh(W s + V h_t) in the content variant;
//! the location variant adds U . (conv1d over the previous attention
//! weights)_t inside the tanh. New weights are softmax(e); the context is the
//! attention-weighted sum of encoder frames; a GRU cell consumes
//! [embed(prev_token); context]; logits come from a linear layer over the new
//! hidden state with the blank slot masked to -inf.
//!
//! Two implementations share the same parameters and must agree bitwise: a
//! graph version used for teacher-forced training, and a plain-tensor version
//! used by beam search where per-hypothesis states branch.

use crate::graph::{Graph, NodeId};
use crate::kernels;
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::{AttentionVariant, ModelConfig, ModelError};

/// Per-hypothesis decoder state.
#[derive(Clone, Debug)]
pub struct AttentionState {
    pub hidden: Vec<f64>,
    /// Attention weights from the previous step; a simplex over frames.
    pub weights: Vec<f64>,
}

/// Per-utterance decoding context: encoder output plus precomputed V.h_t.
pub struct AttentionContext<'a> {
    cfg: &'a ModelConfig,
    store: &'a ParamStore,
    h_enc: Tensor,
    /// \[T, attn_dim] = h_enc . v_h
    hv: Tensor,
}

impl<'a> AttentionContext<'a> {
    pub fn new(cfg: &'a ModelConfig, store: &'a ParamStore, h_enc: Tensor) -> Self {
        assert_eq!(h_enc.rank(), 2);
        assert_eq!(h_enc.shape()[1], cfg.enc_dim);
        let hv = kernels::matmul(&h_enc, store.expect("dec.att.v_h"));
        AttentionContext {
            cfg,
            store,
            h_enc,
            hv,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.h_enc.shape()[0]
    }

    pub fn initial_state(&self) -> AttentionState {
        let t = self.n_frames();
        AttentionState {
            hidden: vec![0.0; self.cfg.dec_hidden],
            weights: vec![1.0 / t as f64; t],
        }
    }

    /// One decoder step. Returns the new state and log-probabilities over the
    /// decoder classes (index 0 is -inf).
    pub fn step(
        &self,
        state: &AttentionState,
        prev_token: usize,
    ) -> Result<(AttentionState, Vec<f64>), ModelError> {
        let cfg = self.cfg;
        if prev_token >= cfg.dec_classes() {
            return Err(ModelError::TokenOutOfVocab {
                token: prev_token,
                classes: cfg.dec_classes(),
            });
        }
        let t_len = self.n_frames();
        let store = self.store;

        // Attention scores.
        let q = kernels::vec_mat(&state.hidden, store.expect("dec.att.w_s"));
        let loc = match cfg.attention {
            AttentionVariant::Content => None,
            AttentionVariant::Location => {
                let conv = kernels::conv1d_vec_same(&state.weights, store.expect("dec.att.loc.conv"));
                Some(kernels::matmul(&conv, store.expect("dec.att.loc.u")))
            }
        };
        let w_score = store.expect("dec.att.w");
        let mut scores = vec![0.0; t_len];
        for t in 0..t_len {
            let hv_row = self.hv.row(t);
            let mut dot = 0.0;
            for j in 0..cfg.attn_dim {
                let mut pre = q[j] + hv_row[j];
                if let Some(loc) = &loc {
                    pre += loc.at2(t, j);
                }
                dot += w_score.as_slice()[j] * pre.tanh();
            }
            scores[t] = dot;
        }
        let weights = kernels::softmax_vec(&scores);
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        // Context vector.
        let mut context = vec![0.0; cfg.enc_dim];
        for t in 0..t_len {
            let w = weights[t];
            if w == 0.0 {
                continue;
            }
            for (c, h) in context.iter_mut().zip(self.h_enc.row(t)) {
                *c += w * h;
            }
        }

        // GRU cell over [embedding; context].
        let embed = store.expect("dec.embed").row(prev_token);
        let mut x = Vec::with_capacity(cfg.embed_dim + cfg.enc_dim);
        x.extend_from_slice(embed);
        x.extend_from_slice(&context);
        let hidden = gru_cell(store, &x, &state.hidden);

        // Output projection with the blank slot masked.
        let mut logits = kernels::vec_mat(&hidden, store.expect("dec.out.w"));
        kernels::add_in_place(&mut logits, store.expect("dec.out.b").as_slice());
        logits[0] = f64::NEG_INFINITY;
        let log_probs = kernels::log_softmax_vec(&logits);

        Ok((AttentionState { hidden, weights }, log_probs))
    }
}

fn gru_cell(store: &ParamStore, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut r = kernels::vec_mat(x, store.expect("dec.gru.w_r"));
    kernels::add_in_place(&mut r, &kernels::vec_mat(h, store.expect("dec.gru.u_r")));
    kernels::add_in_place(&mut r, store.expect("dec.gru.b_r").as_slice());
    let r: Vec<f64> = r.iter().map(|&v| kernels::sigmoid(v)).collect();

    let mut z = kernels::vec_mat(x, store.expect("dec.gru.w_z"));
    kernels::add_in_place(&mut z, &kernels::vec_mat(h, store.expect("dec.gru.u_z")));
    kernels::add_in_place(&mut z, store.expect("dec.gru.b_z").as_slice());
    let z: Vec<f64> = z.iter().map(|&v| kernels::sigmoid(v)).collect();

    let mut n = kernels::vec_mat(x, store.expect("dec.gru.w_n"));
    let un = kernels::vec_mat(h, store.expect("dec.gru.u_n"));
    for (ni, (ri, ui)) in n.iter_mut().zip(r.iter().zip(&un)) {
        *ni += ri * ui;
    }
    kernels::add_in_place(&mut n, store.expect("dec.gru.b_n").as_slice());
    let n: Vec<f64> = n.iter().map(|&v| v.tanh()).collect();

    // h' = (1-z)*n + z*h, in the same associativity as the graph build
    // (n + z*(h-n)) so the two paths agree bitwise.
    n.iter()
        .zip(z.iter().zip(h))
        .map(|(ni, (zi, hi))| ni + zi * (hi - ni))
        .collect()
}

/// Graph-side decoder state (node handles instead of tensors).
#[derive(Clone, Copy)]
pub struct GraphAttentionState {
    pub hidden: NodeId,
    pub weights: NodeId,
}

/// Graph-side per-utterance context.
pub struct GraphAttentionContext {
    h_enc: NodeId,
    hv: NodeId,
    t_len: usize,
}

impl GraphAttentionContext {
    pub fn new(g: &mut Graph, h_enc: NodeId) -> Self {
        let v_h = g.param("dec.att.v_h");
        let hv = g.matmul(h_enc, v_h);
        let t_len = g.value(h_enc).shape()[0];
        GraphAttentionContext { h_enc, hv, t_len }
    }

    pub fn initial_state(&self, g: &mut Graph, cfg: &ModelConfig) -> GraphAttentionState {
        let hidden = g.input(Tensor::zeros(&[cfg.dec_hidden]));
        let weights = g.input(Tensor::filled(&[self.t_len], 1.0 / self.t_len as f64));
        GraphAttentionState { hidden, weights }
    }

    /// One teacher-forced decoder step on the tape; returns the new state and
    /// the log-probability node.
    pub fn step(
        &self,
        g: &mut Graph,
        cfg: &ModelConfig,
        state: GraphAttentionState,
        prev_token: usize,
    ) -> Result<(GraphAttentionState, NodeId), ModelError> {
        if prev_token >= cfg.dec_classes() {
            return Err(ModelError::TokenOutOfVocab {
                token: prev_token,
                classes: cfg.dec_classes(),
            });
        }
        let w_s = g.param("dec.att.w_s");
        let q = g.vec_mat(state.hidden, w_s);
        let mut pre = g.add_row_broadcast(self.hv, q);
        if cfg.attention == AttentionVariant::Location {
            let conv_w = g.param("dec.att.loc.conv");
            let conv = g.conv1d_vec(state.weights, conv_w);
            let loc_u = g.param("dec.att.loc.u");
            let loc = g.matmul(conv, loc_u);
            pre = g.add(pre, loc);
        }
        let th = g.tanh(pre);
        let w_score = g.param("dec.att.w");
        let scores = g.mat_vec(th, w_score);
        let weights = g.softmax_vec(scores);
        let context = g.weighted_sum_rows(weights, self.h_enc);

        let embed_table = g.param("dec.embed");
        let emb = g.embed_row(embed_table, prev_token);
        let x = g.concat_vec(emb, context);

        let hidden = graph_gru_cell(g, x, state.hidden);

        let out_w = g.param("dec.out.w");
        let out_b = g.param("dec.out.b");
        let logits = g.vec_mat(hidden, out_w);
        let logits = g.add(logits, out_b);
        let masked = g.mask_first(logits);
        let log_probs = g.log_softmax_vec(masked);

        Ok((GraphAttentionState { hidden, weights }, log_probs))
    }
}

fn graph_gru_cell(g: &mut Graph, x: NodeId, h: NodeId) -> NodeId {
    let gate = |g: &mut Graph, name: &str, x: NodeId, h: NodeId| -> NodeId {
        let w = g.param(&format!("dec.gru.w_{name}"));
        let u = g.param(&format!("dec.gru.u_{name}"));
        let b = g.param(&format!("dec.gru.b_{name}"));
        let xm = g.vec_mat(x, w);
        let hm = g.vec_mat(h, u);
        let s = g.add(xm, hm);
        g.add(s, b)
    };
    let r_pre = gate(g, "r", x, h);
    let r = g.sigmoid(r_pre);
    let z_pre = gate(g, "z", x, h);
    let z = g.sigmoid(z_pre);

    let w_n = g.param("dec.gru.w_n");
    let u_n = g.param("dec.gru.u_n");
    let b_n = g.param("dec.gru.b_n");
    let xn = g.vec_mat(x, w_n);
    let hn = g.vec_mat(h, u_n);
    let rhn = g.elem_mul(r, hn);
    let n_sum = g.add(xn, rhn);
    let n_pre = g.add(n_sum, b_n);
    let n = g.tanh(n_pre);

    // h' = (1-z)*n + z*h = n + z*(h - n)
    let diff = g.sub(h, n);
    let gated = g.elem_mul(z, diff);
    g.add(n, gated)
}

/// Teacher-forced decoder pass: per-step log-prob nodes for the target
/// sequence plus the trailing eos step.
pub fn teacher_forced_log_probs(
    g: &mut Graph,
    cfg: &ModelConfig,
    h_enc: NodeId,
    target: &[usize],
) -> Result<Vec<NodeId>, ModelError> {
    let ctx = GraphAttentionContext::new(g, h_enc);
    let mut state = ctx.initial_state(g, cfg);
    let mut out = Vec::with_capacity(target.len() + 1);
    for u in 0..=target.len() {
        let prev = if u == 0 { ModelConfig::BLANK } else { target[u - 1] };
        let (next, log_probs) = ctx.step(g, cfg, state, prev)?;
        state = next;
        out.push(log_probs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_params, ModelConfig};
    use crate::rng::Rng;

    fn rand_h_enc(cfg: &ModelConfig, t: usize, seed: u64) -> Tensor {
        let mut rng = Rng::seed(seed);
        let data = (0..t * cfg.enc_dim)
            .map(|_| rng.uniform_in(-1.0, 1.0))
            .collect();
        Tensor::from_vec(&[t, cfg.enc_dim], data)
    }

    #[test]
    fn single_frame_attention_is_one() {
        for variant in [AttentionVariant::Content, AttentionVariant::Location] {
            let mut cfg = ModelConfig::micro(3);
            cfg.attention = variant;
            let store = build_params(&cfg, 21);
            let ctx = AttentionContext::new(&cfg, &store, rand_h_enc(&cfg, 1, 5));
            let (state, _) = ctx.step(&ctx.initial_state(), 0).unwrap();
            assert_eq!(state.weights, vec![1.0]);
        }
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        // Zero score weights make every frame score 0.
        let cfg = ModelConfig::micro(3);
        let mut store = build_params(&cfg, 22);
        let slot = store.slot("dec.att.w").unwrap();
        store.tensor_mut(slot).scale_assign(0.0);
        let ctx = AttentionContext::new(&cfg, &store, rand_h_enc(&cfg, 5, 6));
        let (state, _) = ctx.step(&ctx.initial_state(), 1).unwrap();
        for w in &state.weights {
            assert!((w - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_location_kernel_matches_content_variant() {
        let mut cfg_loc = ModelConfig::micro(3);
        cfg_loc.attention = AttentionVariant::Location;
        let mut store = build_params(&cfg_loc, 23);
        let slot = store.slot("dec.att.loc.conv").unwrap();
        store.tensor_mut(slot).scale_assign(0.0);

        let h_enc = rand_h_enc(&cfg_loc, 6, 7);
        let ctx_loc = AttentionContext::new(&cfg_loc, &store, h_enc.clone());
        let (s_loc, lp_loc) = ctx_loc.step(&ctx_loc.initial_state(), 2).unwrap();

        let mut cfg_con = cfg_loc.clone();
        cfg_con.attention = AttentionVariant::Content;
        let ctx_con = AttentionContext::new(&cfg_con, &store, h_enc);
        let (s_con, lp_con) = ctx_con.step(&ctx_con.initial_state(), 2).unwrap();

        assert_eq!(s_loc.weights, s_con.weights);
        assert_eq!(lp_loc, lp_con);
    }

    #[test]
    fn out_of_vocab_token_rejected() {
        let cfg = ModelConfig::micro(3);
        let store = build_params(&cfg, 24);
        let ctx = AttentionContext::new(&cfg, &store, rand_h_enc(&cfg, 4, 8));
        assert!(matches!(
            ctx.step(&ctx.initial_state(), cfg.dec_classes()),
            Err(ModelError::TokenOutOfVocab { .. })
        ));
    }

    #[test]
    fn weights_stay_simplex_over_steps() {
        let cfg = ModelConfig::micro(4);
        let store = build_params(&cfg, 25);
        let ctx = AttentionContext::new(&cfg, &store, rand_h_enc(&cfg, 9, 9));
        let mut state = ctx.initial_state();
        for token in [0usize, 1, 2, 3, 4, 1, 2] {
            let (next, log_probs) = ctx.step(&state, token).unwrap();
            let sum: f64 = next.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(next.weights.iter().all(|&w| w >= 0.0));
            assert_eq!(log_probs[0], f64::NEG_INFINITY);
            let total: f64 = log_probs.iter().map(|lp| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            state = next;
        }
    }

    #[test]
    fn graph_and_kernel_steps_agree_bitwise() {
        for variant in [AttentionVariant::Content, AttentionVariant::Location] {
            let mut cfg = ModelConfig::micro(3);
            cfg.attention = variant;
            let store = build_params(&cfg, 26);
            let h_enc = rand_h_enc(&cfg, 5, 10);
            let tokens = [1usize, 3, 2];

            // Kernel path.
            let ctx = AttentionContext::new(&cfg, &store, h_enc.clone());
            let mut state = ctx.initial_state();
            let mut kernel_lps = Vec::new();
            let mut prev = ModelConfig::BLANK;
            for &tok in &tokens {
                let (next, lp) = ctx.step(&state, prev).unwrap();
                kernel_lps.push(lp);
                state = next;
                prev = tok;
            }

            // Graph path.
            let mut g = Graph::new(&store);
            let h_node = g.input(h_enc.clone());
            let gctx = GraphAttentionContext::new(&mut g, h_node);
            let mut gstate = gctx.initial_state(&mut g, &cfg);
            let mut prev = ModelConfig::BLANK;
            for (i, &tok) in tokens.iter().enumerate() {
                let (next, lp_node) = gctx.step(&mut g, &cfg, gstate, prev).unwrap();
                assert_eq!(
                    g.value(lp_node).as_slice(),
                    kernel_lps[i].as_slice(),
                    "variant {variant:?} step {i}"
                );
                gstate = next;
                prev = tok;
            }
        }
    }
}
