//! Shared numeric kernels.
//!
//! The autodiff graph and the (gradient-free) beam-search decoder both call
//! into these so the two paths cannot drift apart numerically.

use crate::tensor::{log_sum_exp, Tensor};

/// Block size over the shared dimension; keeps the streamed tile of the
/// right-hand matrix cache-resident instead of re-reading it per output row.
const MM_BLOCK: usize = 128;

/// C = A · B for A: \[m,k], B: \[k,n].
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let od = out.as_mut_slice();
    let mut lb = 0;
    while lb < k {
        let le = (lb + MM_BLOCK).min(k);
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            let orow = &mut od[i * n..(i + 1) * n];
            for l in lb..le {
                let av = arow[l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[l * n..(l + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        lb = le;
    }
    out
}

/// C = A · Bᵀ for A: \[m,n], B: \[k,n] -> \[m,k]; B is transposed once so the
/// multiply runs through the blocked row-major path.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(a.shape()[1], n);
    let mut bt = Tensor::zeros(&[n, k]);
    let bd = b.as_slice();
    let btd = bt.as_mut_slice();
    for l in 0..k {
        for j in 0..n {
            btd[j * k + l] = bd[l * n + j];
        }
    }
    matmul(a, &bt)
}

/// C = Aᵀ · B for A: \[m,k], B: \[m,n] -> \[k,n]; rows of A are accumulated in
/// blocks so C is not re-streamed per input row.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (m2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(m, m2);
    let mut out = Tensor::zeros(&[k, n]);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let od = out.as_mut_slice();
    let mut ib = 0;
    while ib < m {
        let ie = (ib + MM_BLOCK).min(m);
        for l in 0..k {
            let orow = &mut od[l * n..(l + 1) * n];
            for i in ib..ie {
                let av = ad[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        ib = ie;
    }
    out
}

/// out = v · M for v: \[k], M: \[k,n].
pub(crate) fn vec_mat(v: &[f64], m: &Tensor) -> Vec<f64> {
    let (k, n) = (m.shape()[0], m.shape()[1]);
    assert_eq!(v.len(), k);
    let md = m.as_slice();
    let mut out = vec![0.0; n];
    for (l, &vl) in v.iter().enumerate() {
        if vl == 0.0 {
            continue;
        }
        let mrow = &md[l * n..(l + 1) * n];
        for j in 0..n {
            out[j] += vl * mrow[j];
        }
    }
    out
}

pub(crate) fn add_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 2-D convolution with "same" zero padding, stride 1.
/// x: \[ci, t, d], w: \[co, ci, kt, kf] (kt, kf odd), b: \[co] -> \[co, t, d].
/// The kf == 3 case (every extractor in this crate) fuses the three
/// frequency taps into one pass per row.
pub(crate) fn conv2d_same(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (ci, t_len, d_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, ci2, kt, kf) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(ci, ci2, "conv2d channel mismatch");
    assert!(kt % 2 == 1 && kf % 2 == 1, "conv2d kernels must be odd");
    let (pt, pf) = (kt / 2, kf / 2);
    let mut out = Tensor::zeros(&[co, t_len, d_len]);
    let (xd, wd, bd) = (x.as_slice(), w.as_slice(), b.as_slice());
    let od = out.as_mut_slice();
    for oc in 0..co {
        let plane = &mut od[oc * t_len * d_len..(oc + 1) * t_len * d_len];
        plane.fill(bd[oc]);
        for ic in 0..ci {
            let xplane = &xd[ic * t_len * d_len..(ic + 1) * t_len * d_len];
            for dt in 0..kt {
                let t_lo = pt.saturating_sub(dt);
                let t_hi = (t_len + pt).saturating_sub(dt).min(t_len);
                if kf == 3 && d_len >= 2 {
                    let base = ((oc * ci + ic) * kt + dt) * 3;
                    let (w0, w1, w2) = (wd[base], wd[base + 1], wd[base + 2]);
                    for t in t_lo..t_hi {
                        let src = &xplane[(t + dt - pt) * d_len..(t + dt - pt + 1) * d_len];
                        let dst = &mut plane[t * d_len..(t + 1) * d_len];
                        dst[0] += w1 * src[0] + w2 * src[1];
                        for d in 1..d_len - 1 {
                            dst[d] += w0 * src[d - 1] + w1 * src[d] + w2 * src[d + 1];
                        }
                        dst[d_len - 1] += w0 * src[d_len - 2] + w1 * src[d_len - 1];
                    }
                    continue;
                }
                for df in 0..kf {
                    let wv = wd[((oc * ci + ic) * kt + dt) * kf + df];
                    if wv == 0.0 {
                        continue;
                    }
                    let d_lo = pf.saturating_sub(df);
                    let d_hi = (d_len + pf).saturating_sub(df).min(d_len);
                    if d_lo >= d_hi {
                        continue;
                    }
                    for t in t_lo..t_hi {
                        let src = &xplane[(t + dt - pt) * d_len..(t + dt - pt + 1) * d_len];
                        let dst = &mut plane[t * d_len..(t + 1) * d_len];
                        for d in d_lo..d_hi {
                            dst[d] += wv * src[d + df - pf];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 1-D convolution of a vector with "same" zero padding.
/// x: \[t], w: \[f, kw] (kw odd) -> \[t, f].
pub(crate) fn conv1d_vec_same(x: &[f64], w: &Tensor) -> Tensor {
    let t_len = x.len();
    let (nf, kw) = (w.shape()[0], w.shape()[1]);
    assert!(kw % 2 == 1, "conv1d kernel must be odd");
    let pad = kw / 2;
    let mut out = Tensor::zeros(&[t_len, nf]);
    let wd = w.as_slice();
    let od = out.as_mut_slice();
    for t in 0..t_len {
        for f in 0..nf {
            let mut acc = 0.0;
            for j in 0..kw {
                let src = t + j;
                if src >= pad && src - pad < t_len {
                    acc += wd[f * kw + j] * x[src - pad];
                }
            }
            od[t * nf + f] = acc;
        }
    }
    out
}

pub(crate) fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(x);
    x.iter().map(|&v| (v - z).exp()).collect()
}

pub(crate) fn log_softmax_vec(x: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(x);
    x.iter().map(|&v| v - z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // 1x1 kernel of weight 2, bias 1.
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]);
        let b = Tensor::from_vec(&[1], vec![1.0]);
        let y = conv2d_same(&x, &w, &b);
        assert_eq!(y.as_slice(), &[3.0, 5.0, 7.0, 9.0, 11.0, 13.0]);
    }

    #[test]
    fn conv2d_sums_window() {
        // 3x3 all-ones kernel over a single-channel 3x3 input counts the
        // in-bounds neighbourhood.
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_same(&x, &w, &b);
        assert_eq!(y.at3(0, 1, 1), 9.0);
        assert_eq!(y.at3(0, 0, 0), 4.0);
        assert_eq!(y.at3(0, 0, 1), 6.0);
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax_vec(&[0.0, 1.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv1d_same_shape() {
        let x = vec![1.0, 0.0, 0.0, 0.0];
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 0.5, 0.5, 0.5]);
        let y = conv1d_vec_same(&x, &w);
        assert_eq!(y.shape(), &[4, 2]);
        // At t=0 the window sees [pad, x0, x1] = [0, 1, 0].
        assert_eq!(y.at2(0, 0), 2.0);
        assert_eq!(y.at2(1, 0), 1.0);
        assert_eq!(y.at2(2, 0), 0.0);
    }
}
