//! Forward/backward internals of the surrogate network.
//!
//! Everything operates on flat `f64` slices addressed through the parameter
//! [`Layout`]. The forward pass records every intermediate needed for an
//! exact reverse-mode sweep; no autodiff framework is involved.

use super::Layout;

const LN_EPS: f64 = 1e-5;

/// y (n x out) = x (n x in) . w (in x out) + b
fn linear(x: &[f64], n: usize, w: &[f64], b: &[f64], din: usize, dout: usize, y: &mut [f64]) {
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        let yr = &mut y[r * dout..(r + 1) * dout];
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * dout..(i + 1) * dout];
            for (j, &wij) in wrow.iter().enumerate() {
                yr[j] += xi * wij;
            }
        }
    }
}

/// Accumulate gradients for `y = x.w + b`: returns dx, adds dw/db in place.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    dy: &[f64],
    x: &[f64],
    n: usize,
    w: &[f64],
    din: usize,
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..n {
        let dyr = &dy[r * dout..(r + 1) * dout];
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for (j, &g) in dyr.iter().enumerate() {
            db[j] += g;
        }
        for i in 0..din {
            let wrow = &w[i * dout..(i + 1) * dout];
            let dwrow = &mut dw[i * dout..(i + 1) * dout];
            let xi = xr[i];
            let mut acc = 0.0;
            for j in 0..dout {
                acc += dyr[j] * wrow[j];
                dwrow[j] += dyr[j] * xi;
            }
            dxr[i] += acc;
        }
    }
}

/// Row-wise layer norm; records the normalized rows and 1/sigma per row.
#[allow(clippy::too_many_arguments)]
fn layer_norm(
    x: &[f64],
    n: usize,
    e: usize,
    gamma: &[f64],
    beta: &[f64],
    xhat: &mut [f64],
    inv_sigma: &mut [f64],
    y: &mut [f64],
) {
    for r in 0..n {
        let xr = &x[r * e..(r + 1) * e];
        let mean = xr.iter().sum::<f64>() / e as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma[r] = inv;
        for j in 0..e {
            let h = (xr[j] - mean) * inv;
            xhat[r * e + j] = h;
            y[r * e + j] = gamma[j] * h + beta[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_sigma: &[f64],
    n: usize,
    e: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..n {
        let dyr = &dy[r * e..(r + 1) * e];
        let hr = &xhat[r * e..(r + 1) * e];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for j in 0..e {
            dgamma[j] += dyr[j] * hr[j];
            dbeta[j] += dyr[j];
            let dh = dyr[j] * gamma[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
        }
        mean_dh /= e as f64;
        mean_dh_h /= e as f64;
        for j in 0..e {
            let dh = dyr[j] * gamma[j];
            dx[r * e + j] += inv_sigma[r] * (dh - mean_dh - hr[j] * mean_dh_h);
        }
    }
}

/// Row-wise softmax.
fn softmax_rows(x: &mut [f64], n: usize, m: usize) {
    for r in 0..n {
        let row = &mut x[r * m..(r + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// dlogits from dprobs for one softmax row held in `p`.
fn softmax_backward_row(dp: &[f64], p: &[f64], dlogits: &mut [f64]) {
    let dot: f64 = dp.iter().zip(p).map(|(&a, &b)| a * b).sum();
    for j in 0..p.len() {
        dlogits[j] += p[j] * (dp[j] - dot);
    }
}

struct AttnCache {
    ln1_xhat: Vec<f64>,
    ln1_inv: Vec<f64>,
    ln1_out: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx_rows: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_inv: Vec<f64>,
    ln2_out: Vec<f64>,
    ff_hidden_pre: Vec<f64>,
    ff_hidden: Vec<f64>,
}

pub(super) struct Cache {
    layers: Vec<AttnCache>,
    z: Vec<f64>,
    head_hidden_pre: Vec<Vec<f64>>,
    head_hidden: Vec<Vec<f64>>,
    head_out: Vec<f64>,
    mix_pre: Vec<Vec<f64>>,
    mix_act: Vec<Vec<f64>>,
    weights: Vec<f64>,
    pub raw: f64,
    pub out: f64,
}

impl Cache {
    pub(super) fn weights_slice(&self) -> &[f64] {
        &self.weights
    }
}

pub(super) fn forward_cached(
    layout: &Layout,
    params: &[f64],
    indices: &[usize],
    context: &[f64],
) -> Cache {
    let (k, e) = (layout.k, layout.e);
    let scale = 1.0 / (e as f64).sqrt();

    let mut x = vec![0.0; k * e];
    for (r, &idx) in indices.iter().enumerate() {
        let off = layout.embed_off[r] + idx * e;
        x[r * e..(r + 1) * e].copy_from_slice(&params[off..off + e]);
    }

    let mut layers = Vec::with_capacity(layout.l);
    for lo in &layout.layers {
        let mut ln1_xhat = vec![0.0; k * e];
        let mut ln1_inv = vec![0.0; k];
        let mut ln1_out = vec![0.0; k * e];
        layer_norm(
            &x,
            k,
            e,
            &params[lo.ln1_gamma..lo.ln1_gamma + e],
            &params[lo.ln1_beta..lo.ln1_beta + e],
            &mut ln1_xhat,
            &mut ln1_inv,
            &mut ln1_out,
        );
        let mut q = vec![0.0; k * e];
        let mut kk = vec![0.0; k * e];
        let mut v = vec![0.0; k * e];
        linear(&ln1_out, k, &params[lo.wq..lo.wq + e * e], &params[lo.bq..lo.bq + e], e, e, &mut q);
        linear(&ln1_out, k, &params[lo.wk..lo.wk + e * e], &params[lo.bk..lo.bk + e], e, e, &mut kk);
        linear(&ln1_out, k, &params[lo.wv..lo.wv + e * e], &params[lo.bv..lo.bv + e], e, e, &mut v);

        let mut probs = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for t in 0..e {
                    s += q[i * e + t] * kk[j * e + t];
                }
                probs[i * k + j] = s * scale;
            }
        }
        softmax_rows(&mut probs, k, k);

        let mut ctx_rows = vec![0.0; k * e];
        for i in 0..k {
            for j in 0..k {
                let p = probs[i * k + j];
                if p == 0.0 {
                    continue;
                }
                for t in 0..e {
                    ctx_rows[i * e + t] += p * v[j * e + t];
                }
            }
        }
        let mut attn_out = vec![0.0; k * e];
        linear(
            &ctx_rows,
            k,
            &params[lo.wo..lo.wo + e * e],
            &params[lo.bo..lo.bo + e],
            e,
            e,
            &mut attn_out,
        );
        let mut x_mid = x.clone();
        for i in 0..k * e {
            x_mid[i] += attn_out[i];
        }

        let mut ln2_xhat = vec![0.0; k * e];
        let mut ln2_inv = vec![0.0; k];
        let mut ln2_out = vec![0.0; k * e];
        layer_norm(
            &x_mid,
            k,
            e,
            &params[lo.ln2_gamma..lo.ln2_gamma + e],
            &params[lo.ln2_beta..lo.ln2_beta + e],
            &mut ln2_xhat,
            &mut ln2_inv,
            &mut ln2_out,
        );
        let h = layout.ff_hidden;
        let mut ff_hidden_pre = vec![0.0; k * h];
        linear(
            &ln2_out,
            k,
            &params[lo.w1..lo.w1 + e * h],
            &params[lo.b1..lo.b1 + h],
            e,
            h,
            &mut ff_hidden_pre,
        );
        let ff_hidden: Vec<f64> = ff_hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        let mut ff_out = vec![0.0; k * e];
        linear(
            &ff_hidden,
            k,
            &params[lo.w2..lo.w2 + h * e],
            &params[lo.b2..lo.b2 + e],
            h,
            e,
            &mut ff_out,
        );
        let mut x_out = x_mid.clone();
        for i in 0..k * e {
            x_out[i] += ff_out[i];
        }

        layers.push(AttnCache {
            ln1_xhat,
            ln1_inv,
            ln1_out,
            q,
            k: kk,
            v,
            probs,
            ctx_rows,
            ln2_xhat,
            ln2_inv,
            ln2_out,
            ff_hidden_pre,
            ff_hidden,
        });
        x = x_out;
    }

    let mut z = x;
    z.extend_from_slice(context);
    debug_assert_eq!(z.len(), layout.flat_dim);

    let hh = layout.head_hidden;
    let mut head_hidden_pre = Vec::with_capacity(layout.m);
    let mut head_hidden = Vec::with_capacity(layout.m);
    let mut head_out = Vec::with_capacity(layout.m);
    for ho in &layout.heads {
        let mut pre = vec![0.0; hh];
        linear(
            &z,
            1,
            &params[ho.w1..ho.w1 + layout.flat_dim * hh],
            &params[ho.b1..ho.b1 + hh],
            layout.flat_dim,
            hh,
            &mut pre,
        );
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut out = params[ho.b2];
        for t in 0..hh {
            out += act[t] * params[ho.w2 + t];
        }
        head_hidden_pre.push(pre);
        head_hidden.push(act);
        head_out.push(out);
    }

    let mut mix_pre = Vec::new();
    let mut mix_act = Vec::new();
    let mut cur = z.clone();
    for (li, ml) in layout.mix.iter().enumerate() {
        let mut pre = vec![0.0; ml.dout];
        linear(
            &cur,
            1,
            &params[ml.w..ml.w + ml.din * ml.dout],
            &params[ml.b..ml.b + ml.dout],
            ml.din,
            ml.dout,
            &mut pre,
        );
        let last = li + 1 == layout.mix.len();
        let act: Vec<f64> = if last {
            pre.clone()
        } else {
            pre.iter().map(|&v| v.max(0.0)).collect()
        };
        mix_pre.push(pre);
        mix_act.push(act.clone());
        cur = act;
    }
    let mut weights = cur;
    softmax_rows(&mut weights, 1, layout.m);

    let raw: f64 = weights.iter().zip(&head_out).map(|(&w, &f)| w * f).sum();
    let out = raw.clamp(-layout.clip_bound, layout.clip_bound);

    Cache {
        layers,
        z,
        head_hidden_pre,
        head_hidden,
        head_out,
        mix_pre,
        mix_act,
        weights,
        raw,
        out,
    }
}

/// Accumulate `d(out)/d(params) * upstream` into `grad`.
///
/// Clipping contributes a pass-through sub-gradient inside the band and zero
/// outside.
pub(super) fn backward(
    layout: &Layout,
    params: &[f64],
    indices: &[usize],
    cache: &Cache,
    upstream: f64,
    grad: &mut [f64],
) {
    if cache.raw.abs() > layout.clip_bound {
        return;
    }
    let g = upstream;
    if g == 0.0 {
        return;
    }
    let (k, e) = (layout.k, layout.e);
    let hh = layout.head_hidden;
    let fd = layout.flat_dim;

    // raw = sum_m w_m f_m
    let dhead: Vec<f64> = cache.weights.iter().map(|&w| g * w).collect();
    let dweights: Vec<f64> = cache.head_out.iter().map(|&f| g * f).collect();

    let mut dz = vec![0.0; fd];

    // mixing softmax + MLP
    let mut dlogits = vec![0.0; layout.m];
    softmax_backward_row(&dweights, &cache.weights, &mut dlogits);
    let mut dcur = dlogits;
    for (li, ml) in layout.mix.iter().enumerate().rev() {
        let last = li + 1 == layout.mix.len();
        let mut dpre = dcur.clone();
        if !last {
            for (t, v) in dpre.iter_mut().enumerate() {
                if cache.mix_pre[li][t] <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        let input: &[f64] = if li == 0 { &cache.z } else { &cache.mix_act[li - 1] };
        let mut dinput = vec![0.0; ml.din];
        let mut dw = vec![0.0; ml.din * ml.dout];
        let mut db = vec![0.0; ml.dout];
        linear_backward(
            &dpre,
            input,
            1,
            &params[ml.w..ml.w + ml.din * ml.dout],
            ml.din,
            ml.dout,
            &mut dw,
            &mut db,
            &mut dinput,
        );
        for (i, v) in dw.into_iter().enumerate() {
            grad[ml.w + i] += v;
        }
        for (i, v) in db.into_iter().enumerate() {
            grad[ml.b + i] += v;
        }
        if li == 0 {
            for t in 0..fd {
                dz[t] += dinput[t];
            }
        } else {
            dcur = dinput;
        }
    }

    // heads
    for (m, ho) in layout.heads.iter().enumerate() {
        let gm = dhead[m];
        if gm == 0.0 {
            continue;
        }
        grad[ho.b2] += gm;
        let mut dact = vec![0.0; hh];
        for (t, d) in dact.iter_mut().enumerate() {
            grad[ho.w2 + t] += gm * cache.head_hidden[m][t];
            *d = if cache.head_hidden_pre[m][t] <= 0.0 {
                0.0
            } else {
                gm * params[ho.w2 + t]
            };
        }
        for (j, &v) in dact.iter().enumerate() {
            grad[ho.b1 + j] += v;
        }
        for i in 0..fd {
            let zi = cache.z[i];
            let wrow = &params[ho.w1 + i * hh..ho.w1 + (i + 1) * hh];
            let dwrow = &mut grad[ho.w1 + i * hh..ho.w1 + (i + 1) * hh];
            let mut acc = 0.0;
            for t in 0..hh {
                acc += dact[t] * wrow[t];
                dwrow[t] += dact[t] * zi;
            }
            dz[i] += acc;
        }
    }

    // back into the attention stack
    let mut dx = dz[..k * e].to_vec();
    let scale = 1.0 / (e as f64).sqrt();
    for (li, lo) in layout.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let h = layout.ff_hidden;

        // x_out = x_mid + ff_out
        let dff_out = dx.clone();
        let mut dff_hidden = vec![0.0; k * h];
        {
            let mut db2 = vec![0.0; e];
            let mut dw2 = vec![0.0; h * e];
            linear_backward(
                &dff_out,
                &lc.ff_hidden,
                k,
                &params[lo.w2..lo.w2 + h * e],
                h,
                e,
                &mut dw2,
                &mut db2,
                &mut dff_hidden,
            );
            for (i, v) in dw2.into_iter().enumerate() {
                grad[lo.w2 + i] += v;
            }
            for (i, v) in db2.into_iter().enumerate() {
                grad[lo.b2 + i] += v;
            }
        }
        for (t, d) in dff_hidden.iter_mut().enumerate().take(k * h) {
            if lc.ff_hidden_pre[t] <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dln2_out = vec![0.0; k * e];
        {
            let mut db1 = vec![0.0; h];
            let mut dw1 = vec![0.0; e * h];
            linear_backward(
                &dff_hidden,
                &lc.ln2_out,
                k,
                &params[lo.w1..lo.w1 + e * h],
                e,
                h,
                &mut dw1,
                &mut db1,
                &mut dln2_out,
            );
            for (i, v) in dw1.into_iter().enumerate() {
                grad[lo.w1 + i] += v;
            }
            for (i, v) in db1.into_iter().enumerate() {
                grad[lo.b1 + i] += v;
            }
        }
        let mut dx_mid = dx; // residual path
        {
            let mut dgamma = vec![0.0; e];
            let mut dbeta = vec![0.0; e];
            layer_norm_backward(
                &dln2_out,
                &lc.ln2_xhat,
                &lc.ln2_inv,
                k,
                e,
                &params[lo.ln2_gamma..lo.ln2_gamma + e],
                &mut dgamma,
                &mut dbeta,
                &mut dx_mid,
            );
            for (i, v) in dgamma.into_iter().enumerate() {
                grad[lo.ln2_gamma + i] += v;
            }
            for (i, v) in dbeta.into_iter().enumerate() {
                grad[lo.ln2_beta + i] += v;
            }
        }

        // x_mid = x_in + attn_out
        let dattn_out = dx_mid.clone();
        let mut dctx = vec![0.0; k * e];
        {
            let mut dbo = vec![0.0; e];
            let mut dwo = vec![0.0; e * e];
            linear_backward(
                &dattn_out,
                &lc.ctx_rows,
                k,
                &params[lo.wo..lo.wo + e * e],
                e,
                e,
                &mut dwo,
                &mut dbo,
                &mut dctx,
            );
            for (i, v) in dwo.into_iter().enumerate() {
                grad[lo.wo + i] += v;
            }
            for (i, v) in dbo.into_iter().enumerate() {
                grad[lo.bo + i] += v;
            }
        }

        // ctx = probs . V
        let mut dprobs = vec![0.0; k * k];
        let mut dv = vec![0.0; k * e];
        for i in 0..k {
            for j in 0..k {
                let mut s = 0.0;
                for t in 0..e {
                    s += dctx[i * e + t] * lc.v[j * e + t];
                    dv[j * e + t] += lc.probs[i * k + j] * dctx[i * e + t];
                }
                dprobs[i * k + j] = s;
            }
        }
        let mut dscores = vec![0.0; k * k];
        for i in 0..k {
            softmax_backward_row(
                &dprobs[i * k..(i + 1) * k],
                &lc.probs[i * k..(i + 1) * k],
                &mut dscores[i * k..(i + 1) * k],
            );
        }
        // scores_ij = scale * q_i . k_j
        let mut dq = vec![0.0; k * e];
        let mut dk = vec![0.0; k * e];
        for i in 0..k {
            for j in 0..k {
                let ds = dscores[i * k + j] * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..e {
                    dq[i * e + t] += ds * lc.k[j * e + t];
                    dk[j * e + t] += ds * lc.q[i * e + t];
                }
            }
        }

        let mut dln1_out = vec![0.0; k * e];
        for (dmat, w_off, b_off) in
            [(&dq, lo.wq, lo.bq), (&dk, lo.wk, lo.bk), (&dv, lo.wv, lo.bv)]
        {
            let mut db = vec![0.0; e];
            let mut dw = vec![0.0; e * e];
            linear_backward(
                dmat,
                &lc.ln1_out,
                k,
                &params[w_off..w_off + e * e],
                e,
                e,
                &mut dw,
                &mut db,
                &mut dln1_out,
            );
            for (i, v) in dw.into_iter().enumerate() {
                grad[w_off + i] += v;
            }
            for (i, v) in db.into_iter().enumerate() {
                grad[b_off + i] += v;
            }
        }

        let mut dx_in = dx_mid; // residual path
        {
            let mut dgamma = vec![0.0; e];
            let mut dbeta = vec![0.0; e];
            layer_norm_backward(
                &dln1_out,
                &lc.ln1_xhat,
                &lc.ln1_inv,
                k,
                e,
                &params[lo.ln1_gamma..lo.ln1_gamma + e],
                &mut dgamma,
                &mut dbeta,
                &mut dx_in,
            );
            for (i, v) in dgamma.into_iter().enumerate() {
                grad[lo.ln1_gamma + i] += v;
            }
            for (i, v) in dbeta.into_iter().enumerate() {
                grad[lo.ln1_beta + i] += v;
            }
        }
        dx = dx_in;
    }

    // embeddings
    for (r, &idx) in indices.iter().enumerate() {
        let off = layout.embed_off[r] + idx * e;
        for t in 0..e {
            grad[off + t] += dx[r * e + t];
        }
    }
}
