//! Bidirectional LiGRU encoder stack with a two-layer projection head.
//!
//! Per direction, per step:
//!   z_t = sigmoid(LN(W_z x_t) + U_z h_{t-1})
//!   c_t = relu(LN(W_h x_t) + U_h h_{t-1})
//!   h_t = z_t * h_{t-1} + (1 - z_t) * c_t
//!
//! Input projections (and their layer norms) are computed for the whole
//! sequence at once; only the recurrent part unrolls per step.

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

use super::{EncoderActivation, ModelConfig, StreamTag};

fn ligru_direction(g: &mut Graph, prefix: &str, x: NodeId, hidden: usize) -> NodeId {
    let t_len = g.value(x).shape()[0];
    let w_z = g.param(&format!("{prefix}.w_z"));
    let w_h = g.param(&format!("{prefix}.w_h"));
    let u_z = g.param(&format!("{prefix}.u_z"));
    let u_h = g.param(&format!("{prefix}.u_h"));
    let ln_z_g = g.param(&format!("{prefix}.ln_z.g"));
    let ln_z_b = g.param(&format!("{prefix}.ln_z.b"));
    let ln_h_g = g.param(&format!("{prefix}.ln_h.g"));
    let ln_h_b = g.param(&format!("{prefix}.ln_h.b"));

    let zx = g.matmul(x, w_z);
    let z_pre = g.layer_norm_rows(zx, ln_z_g, ln_z_b);
    let hx = g.matmul(x, w_h);
    let h_pre = g.layer_norm_rows(hx, ln_h_g, ln_h_b);

    let mut h = g.input(Tensor::zeros(&[hidden]));
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let z_in = g.row(z_pre, t);
        let z_rec = g.vec_mat(h, u_z);
        let z_sum = g.add(z_in, z_rec);
        let z = g.sigmoid(z_sum);

        let c_in = g.row(h_pre, t);
        let c_rec = g.vec_mat(h, u_h);
        let c_sum = g.add(c_in, c_rec);
        let cand = g.relu(c_sum);

        // h = z*h_prev + (1-z)*cand == cand + z*(h_prev - cand)
        let diff = g.sub(h, cand);
        let gated = g.elem_mul(z, diff);
        h = g.add(cand, gated);
        rows.push(h);
    }
    g.stack_rows(&rows)
}

/// Encode a fused stream: stacked bidirectional LiGRU layers, then two linear
/// layers with a ReLU between. Time length is preserved.
pub fn encode(g: &mut Graph, cfg: &ModelConfig, fused: EncoderActivation) -> EncoderActivation {
    assert_eq!(fused.tag, StreamTag::Fused, "encoder wants the fused stream");
    let mut x = fused.node;
    for layer in 0..cfg.ligru_layers {
        let fwd = ligru_direction(g, &format!("enc.l{layer}.fwd"), x, cfg.ligru_hidden);
        let rev_in = g.reverse_time(x);
        let bwd_rev = ligru_direction(g, &format!("enc.l{layer}.bwd"), rev_in, cfg.ligru_hidden);
        let bwd = g.reverse_time(bwd_rev);
        x = g.concat_cols(fwd, bwd);
    }
    let w1 = g.param("enc.lin1.w");
    let b1 = g.param("enc.lin1.b");
    let l1 = g.matmul(x, w1);
    let l1 = g.add_row_broadcast(l1, b1);
    let l1 = g.relu(l1);
    let w2 = g.param("enc.lin2.w");
    let b2 = g.param("enc.lin2.b");
    let l2 = g.matmul(l1, w2);
    let node = g.add_row_broadcast(l2, b2);
    EncoderActivation {
        node,
        tag: StreamTag::Encoded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_params, ModelConfig};
    use crate::params::ParamStore;
    use crate::rng::Rng;

    fn fused_input(g: &mut Graph, t: usize, d: usize, data: Vec<f64>) -> EncoderActivation {
        let node = g.input(Tensor::from_vec(&[t, d], data));
        EncoderActivation {
            node,
            tag: StreamTag::Fused,
        }
    }

    #[test]
    fn zero_input_zero_recurrence_gives_zero_output() {
        // With zero input, LN bias zero, and zero-ish recurrent path the
        // update gate sits at 0.5 and the candidate at 0, so h stays 0.
        let cfg = ModelConfig::micro(3);
        let mut store = build_params(&cfg, 3);
        for slot in 0..store.len() {
            let name = store.name(slot).to_string();
            if name.starts_with("enc.") && !name.contains(".ln_") {
                store.tensor_mut(slot).scale_assign(0.0);
            }
        }
        let mut g = Graph::new(&store);
        let d = cfg.extractor_fbank.projection_dim;
        let fused = fused_input(&mut g, 5, d, vec![0.0; 5 * d]);
        let out = encode(&mut g, &cfg, fused);
        assert!(g.value(out.node).as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(out.node).shape(), &[5, cfg.enc_dim]);
    }

    #[test]
    fn single_frame_shape() {
        let cfg = ModelConfig::micro(3);
        let store = build_params(&cfg, 4);
        let mut g = Graph::new(&store);
        let d = cfg.extractor_fbank.projection_dim;
        let fused = fused_input(&mut g, 1, d, vec![0.3; d]);
        let out = encode(&mut g, &cfg, fused);
        assert_eq!(g.value(out.node).shape(), &[1, cfg.enc_dim]);
    }

    #[test]
    fn desk_shapes_and_finiteness() {
        let cfg = ModelConfig::desk(8);
        let store = build_params(&cfg, 5);
        let mut rng = Rng::seed(6);
        let mut g = Graph::new(&store);
        let data = (0..49 * 1024).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let fused = fused_input(&mut g, 49, 1024, data);
        let out = encode(&mut g, &cfg, fused);
        let v = g.value(out.node);
        assert_eq!(v.shape(), &[49, 160]);
        assert!(v.all_finite());
    }

    #[test]
    fn time_length_preserved_under_depth() {
        let mut cfg = ModelConfig::micro(3);
        cfg.ligru_layers = 3;
        let store = build_params(&cfg, 8);
        let mut g = Graph::new(&store);
        let d = cfg.extractor_fbank.projection_dim;
        let fused = fused_input(&mut g, 7, d, vec![0.1; 7 * d]);
        let out = encode(&mut g, &cfg, fused);
        assert_eq!(g.value(out.node).shape()[0], 7);
    }

    #[test]
    fn forward_bitwise_deterministic() {
        let cfg = ModelConfig::micro(2);
        let store: ParamStore = build_params(&cfg, 11);
        let d = cfg.extractor_fbank.projection_dim;
        let mut rng = Rng::seed(12);
        let data: Vec<f64> = (0..6 * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let run = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let fused = {
                let node = g.input(Tensor::from_vec(&[6, d], data.clone()));
                EncoderActivation {
                    node,
                    tag: StreamTag::Fused,
                }
            };
            let out = encode(&mut g, &cfg, fused);
            g.value(out.node).as_slice().to_vec()
        };
        assert_eq!(run(&store), run(&store));
    }
}
