//! Transformer forward pass, structural heads, and explicit reverse-mode
//! gradients.
//!
//! Conditioning enters additively: h0 = c + Wx·[x; γ(x)] + t_vec, with the
//! Fourier timestep embedding also driving a per-block scale/shift
//! modulation of both layer norms. The residual-stream state after block
//! ℓ_s feeds the fracture and adjacency heads.

use ndarray::{s, Array1, Array2, Axis};

use crate::cond::{fourier_encode_scalar, ConditionSet};
use crate::error::{Error, Result};
use crate::flow::linalg::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, softmax_rows, Linear, LnCache,
};
use crate::flow::{BlockParams, ModelParams};

/// Per-block forward cache.
struct BlockCache {
    ln1: LnCache,
    ln1_out: Array2<f64>,
    scale1: Array1<f64>,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax probabilities per head.
    probs: Vec<Array2<f64>>,
    attn_concat: Array2<f64>,
    ln2: LnCache,
    ln2_out: Array2<f64>,
    scale2: Array1<f64>,
    n2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

struct Cache {
    x_feats: Array2<f64>,
    t_feats: Array1<f64>,
    t_vec: Array1<f64>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
    hf: Array2<f64>,
}

/// Forward results. `hidden` is the residual-stream state after block ℓ_s.
pub struct Forward {
    pub v_hat: Array2<f64>,
    pub hidden: Array2<f64>,
    cache: Cache,
}

/// Velocity field evaluation.
pub fn forward(params: &ModelParams, x_t: &Array2<f64>, t: f64, cond: &ConditionSet) -> Result<Forward> {
    let cfg = &params.config;
    let m = cond.total();
    if x_t.dim() != (m, 3) {
        return Err(Error::invalid(format!(
            "state shape {:?} for {m} tokens",
            x_t.dim()
        )));
    }
    if cond.width() != cfg.width {
        return Err(Error::invalid(format!(
            "condition width {} vs model width {}",
            cond.width(),
            cfg.width
        )));
    }
    if !x_t.iter().all(|v| v.is_finite()) || !t.is_finite() {
        return Err(Error::Numeric("non-finite state or timestep".into()));
    }

    // x encoding: [x; γ(x)] per token.
    let mut x_feats = Array2::zeros((m, cfg.x_dim()));
    for r in 0..m {
        x_feats[(r, 0)] = x_t[(r, 0)];
        x_feats[(r, 1)] = x_t[(r, 1)];
        x_feats[(r, 2)] = x_t[(r, 2)];
        let v = nalgebra::Vector3::new(x_t[(r, 0)], x_t[(r, 1)], x_t[(r, 2)]);
        for (c, val) in crate::cond::fourier_encode(&v, cfg.bands).into_iter().enumerate() {
            x_feats[(r, 3 + c)] = val;
        }
    }
    let t_feats = Array1::from_vec(fourier_encode_scalar(t, cfg.t_bands));
    let t_vec = params.t_proj.w.dot(&t_feats) + &params.t_proj.b;

    let mut h = cond.tokens.clone() + params.x_proj.forward(x_feats.view());
    for mut row in h.rows_mut() {
        row += &t_vec;
    }

    let mut blocks = Vec::with_capacity(cfg.blocks);
    let mut hidden = None;
    for (bi, block) in params.blocks.iter().enumerate() {
        let (out, cache) = block_forward(block, &h, &t_vec, cfg.heads);
        h = out;
        blocks.push(cache);
        if bi + 1 == cfg.attach_layer {
            hidden = Some(h.clone());
        }
    }
    let hidden = hidden.expect("attach layer validated against block count");

    let (hf, final_ln) = layer_norm(
        h.view(),
        params.final_ln_gain.view(),
        params.final_ln_bias.view(),
    );
    let v_hat = params.out_head.forward(hf.view());
    if !v_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite velocity output".into()));
    }

    Ok(Forward {
        v_hat,
        hidden,
        cache: Cache {
            x_feats,
            t_feats,
            t_vec,
            blocks,
            final_ln,
            hf,
        },
    })
}

fn modulation(linear: &Linear, t_vec: &Array1<f64>, d: usize) -> (Array1<f64>, Array1<f64>) {
    let m = linear.w.dot(t_vec) + &linear.b;
    (m.slice(s![..d]).to_owned(), m.slice(s![d..]).to_owned())
}

fn block_forward(
    block: &BlockParams,
    h_in: &Array2<f64>,
    t_vec: &Array1<f64>,
    heads: usize,
) -> (Array2<f64>, BlockCache) {
    let (m, d) = h_in.dim();
    let dh = d / heads;

    let (ln1_out, ln1) = layer_norm(h_in.view(), block.ln1_gain.view(), block.ln1_bias.view());
    let (scale1, shift1) = modulation(&block.mod1, t_vec, d);
    let mut n1 = ln1_out.clone();
    for mut row in n1.rows_mut() {
        for c in 0..d {
            row[c] = row[c] * (1.0 + scale1[c]) + shift1[c];
        }
    }

    let q = block.wq.forward(n1.view());
    let k = block.wk.forward(n1.view());
    let v = block.wv.forward(n1.view());

    let mut attn_concat = Array2::zeros((m, d));
    let mut probs = Vec::with_capacity(heads);
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for hidx in 0..heads {
        let cols = s![.., hidx * dh..(hidx + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = matmul(qh, kh.t());
        scores *= inv_sqrt;
        softmax_rows(&mut scores);
        let oh = matmul(scores.view(), vh);
        attn_concat.slice_mut(cols).assign(&oh);
        probs.push(scores);
    }
    let o = block.wo.forward(attn_concat.view());
    let h_mid = h_in + &o;

    let (ln2_out, ln2) = layer_norm(h_mid.view(), block.ln2_gain.view(), block.ln2_bias.view());
    let (scale2, shift2) = modulation(&block.mod2, t_vec, d);
    let mut n2 = ln2_out.clone();
    for mut row in n2.rows_mut() {
        for c in 0..d {
            row[c] = row[c] * (1.0 + scale2[c]) + shift2[c];
        }
    }
    let ff_pre = block.ff1.forward(n2.view());
    let ff_act = ff_pre.mapv(gelu);
    let ff_out = block.ff2.forward(ff_act.view());
    let h_out = &h_mid + &ff_out;

    (
        h_out,
        BlockCache {
            ln1,
            ln1_out,
            scale1,
            n1,
            q,
            k,
            v,
            probs,
            attn_concat,
            ln2,
            ln2_out,
            scale2,
            n2,
            ff_pre,
            ff_act,
        },
    )
}

/// Structural head outputs plus what their backward pass needs.
pub struct HeadOutputs {
    /// Per-token fracture logits (empty when the head is disabled).
    pub f_logits: Array1<f64>,
    /// Symmetric pair logits with a zero diagonal (0×0 when disabled).
    pub a_logits: Array2<f64>,
    frac_pre: Array2<f64>,
    frac_act: Array2<f64>,
    /// (i, j, input, pre, act) per ordered pair.
    pairs: Vec<PairCache>,
    budgets: Vec<usize>,
}

struct PairCache {
    i: usize,
    j: usize,
    input: Array1<f64>,
    pre: Array1<f64>,
    act: Array1<f64>,
}

/// Token-level fracture logits and symmetrized pair scores from mean-pooled
/// fragment features of `hidden`.
pub fn structural_heads(
    params: &ModelParams,
    hidden: &Array2<f64>,
    fragment_map: &[usize],
) -> Result<HeadOutputs> {
    let cfg = &params.config;
    let m = hidden.nrows();
    if fragment_map.len() != m {
        return Err(Error::invalid("fragment map length disagrees with tokens"));
    }
    let k = fragment_map.iter().copied().max().map(|x| x + 1).unwrap_or(0);
    let mut budgets = vec![0usize; k];
    for &f in fragment_map {
        budgets[f] += 1;
    }
    if budgets.iter().any(|&b| b == 0) {
        return Err(Error::invalid("fragment with no tokens"));
    }

    let (f_logits, frac_pre, frac_act) = if cfg.fracture_head {
        let pre = params.frac1.forward(hidden.view());
        let act = pre.mapv(gelu);
        let logits = params.frac2.forward(act.view());
        (logits.column(0).to_owned(), pre, act)
    } else {
        (Array1::zeros(0), Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    };

    let mut pooled = Array2::zeros((k, cfg.width));
    for (t, &f) in fragment_map.iter().enumerate() {
        let mut row = pooled.row_mut(f);
        row += &hidden.row(t);
    }
    for (f, &b) in budgets.iter().enumerate() {
        let mut row = pooled.row_mut(f);
        row /= b as f64;
    }

    let mut a_logits = Array2::zeros(if cfg.adjacency_head { (k, k) } else { (0, 0) });
    let mut pairs = Vec::new();
    if cfg.adjacency_head {
        let mut directed = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let mut input = Array1::zeros(2 * cfg.width);
                input.slice_mut(s![..cfg.width]).assign(&pooled.row(i));
                input.slice_mut(s![cfg.width..]).assign(&pooled.row(j));
                let pre = params.adj1.w.dot(&input) + &params.adj1.b;
                let act = pre.mapv(gelu);
                let score = params.adj2.w.row(0).dot(&act) + params.adj2.b[0];
                directed[(i, j)] = score;
                pairs.push(PairCache { i, j, input, pre, act });
            }
        }
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a_logits[(i, j)] = 0.5 * (directed[(i, j)] + directed[(j, i)]);
                }
            }
        }
    }

    Ok(HeadOutputs {
        f_logits,
        a_logits,
        frac_pre,
        frac_act,
        pairs,
        budgets,
    })
}

/// Reverse-mode gradients of a scalar loss with respect to every parameter.
///
/// `dv_hat` is d(loss)/d(v_hat); `df_logits` and `da_logits` are the loss
/// gradients on the head outputs (pass empty arrays when a head is disabled
/// or detached). Returns a parameter-shaped gradient record.
pub fn backward(
    params: &ModelParams,
    cond: &ConditionSet,
    fwd: &Forward,
    heads: Option<&HeadOutputs>,
    dv_hat: &Array2<f64>,
    df_logits: &Array1<f64>,
    da_logits: &Array2<f64>,
) -> Result<ModelParams> {
    let cfg = &params.config;
    let m = cond.total();
    let d = cfg.width;
    let mut grad = params.zeros_like();

    // Velocity head and final norm.
    let dhf = params
        .out_head
        .backward(fwd.cache.hf.view(), dv_hat.view(), &mut grad.out_head);
    let mut dh = layer_norm_backward(
        dhf.view(),
        &fwd.cache.final_ln,
        params.final_ln_gain.view(),
        &mut grad.final_ln_gain,
        &mut grad.final_ln_bias,
    );

    // Structural heads feed the residual stream at the attach layer.
    let mut dhidden = Array2::zeros((m, d));
    if let Some(heads) = heads {
        dhidden = head_backward(params, cond, heads, &fwd.hidden, df_logits, da_logits, &mut grad)?;
    }

    let mut dt_vec = Array1::zeros(d);
    for bi in (0..cfg.blocks).rev() {
        if bi + 1 == cfg.attach_layer {
            dh += &dhidden;
        }
        dh = block_backward(
            &params.blocks[bi],
            &fwd.cache.blocks[bi],
            &fwd.cache.t_vec,
            dh,
            cfg.heads,
            &mut grad.blocks[bi],
            &mut dt_vec,
        );
    }

    // h0 = cond.tokens + x_proj([x; γ(x)]) + t_vec.
    let dh0 = dh;
    grad.x_proj.w += &matmul(dh0.t(), fwd.cache.x_feats.view());
    grad.x_proj.b += &dh0.sum_axis(Axis(0));
    dt_vec += &dh0.sum_axis(Axis(0));

    // t_vec = t_proj · t_feats + bias.
    for r in 0..d {
        for c in 0..fwd.cache.t_feats.len() {
            grad.t_proj.w[(r, c)] += dt_vec[r] * fwd.cache.t_feats[c];
        }
        grad.t_proj.b[r] += dt_vec[r];
    }

    // Condition tokens: c = features · projᵀ + e_part (+ anchor embedding).
    grad.proj += &matmul(dh0.t(), cond.features.view());
    for t in 0..m {
        let mut row = grad.part_embed.row_mut(cond.part_rows[t]);
        row += &dh0.row(t);
        if cond.anchor_mask[t] {
            grad.anchor_embed += &dh0.row(t);
        }
    }

    if let Some(name) = grad.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite gradient in {name}")));
    }
    Ok(grad)
}

fn head_backward(
    params: &ModelParams,
    cond: &ConditionSet,
    heads: &HeadOutputs,
    hidden: &Array2<f64>,
    df_logits: &Array1<f64>,
    da_logits: &Array2<f64>,
    grad: &mut ModelParams,
) -> Result<Array2<f64>> {
    let cfg = &params.config;
    let m = cond.total();
    let d = cfg.width;
    let mut dhidden = Array2::zeros((m, d));

    if cfg.fracture_head && df_logits.len() == m {
        // logits = frac2(gelu(frac1(hidden))).
        let dlogits = df_logits.view().insert_axis(Axis(1));
        let dact = params
            .frac2
            .backward(heads.frac_act.view(), dlogits, &mut grad.frac2);
        let dpre = &dact * &heads.frac_pre.mapv(gelu_grad);
        dhidden += &params.frac1.backward(hidden.view(), dpre.view(), &mut grad.frac1);
    } else if df_logits.len() != 0 && df_logits.len() != m {
        return Err(Error::invalid("fracture gradient length mismatch"));
    }

    if cfg.adjacency_head && da_logits.nrows() == heads.budgets.len() {
        let k = heads.budgets.len();
        let mut dpooled = Array2::zeros((k, d));
        for pair in &heads.pairs {
            // The symmetric logit splits its gradient evenly over both
            // directed scores (da_logits is symmetric with a zero diagonal).
            let dscore = 0.5 * da_logits[(pair.i, pair.j)];
            if dscore == 0.0 {
                continue;
            }
            // score = adj2 · gelu(adj1 · input + b1) + b2.
            let dact = params.adj2.w.row(0).mapv(|w| w * dscore);
            for (h, &a) in pair.act.iter().enumerate() {
                grad.adj2.w[(0, h)] += dscore * a;
            }
            grad.adj2.b[0] += dscore;
            let dpre: Array1<f64> = dact
                .iter()
                .zip(pair.pre.iter())
                .map(|(da, &p)| da * gelu_grad(p))
                .collect();
            for h in 0..dpre.len() {
                for c in 0..2 * d {
                    grad.adj1.w[(h, c)] += dpre[h] * pair.input[c];
                }
                grad.adj1.b[h] += dpre[h];
            }
            let dinput = params.adj1.w.t().dot(&dpre);
            let mut row_i = dpooled.row_mut(pair.i);
            row_i += &dinput.slice(s![..d]);
            let mut row_j = dpooled.row_mut(pair.j);
            row_j += &dinput.slice(s![d..]);
        }
        for (t, &f) in cond.fragment_map.iter().enumerate() {
            let scale = 1.0 / heads.budgets[f] as f64;
            let mut row = dhidden.row_mut(t);
            for c in 0..d {
                row[c] += dpooled[(f, c)] * scale;
            }
        }
    } else if da_logits.nrows() != 0 && da_logits.nrows() != heads.budgets.len() {
        return Err(Error::invalid("adjacency gradient size mismatch"));
    }

    Ok(dhidden)
}

fn block_backward(
    block: &BlockParams,
    cache: &BlockCache,
    t_vec: &Array1<f64>,
    dh_out: Array2<f64>,
    heads: usize,
    grad: &mut BlockParams,
    dt_vec: &mut Array1<f64>,
) -> Array2<f64> {
    let (m, d) = dh_out.dim();
    let dh_count = d / heads;
    let inv_sqrt = 1.0 / (dh_count as f64).sqrt();

    // Feed-forward branch: h_out = h_mid + ff2(gelu(ff1(n2))).
    let dff_out = &dh_out;
    let dff_act = block
        .ff2
        .backward(cache.ff_act.view(), dff_out.view(), &mut grad.ff2);
    let dff_pre = &dff_act * &cache.ff_pre.mapv(gelu_grad);
    let dn2 = block
        .ff1
        .backward(cache.n2.view(), dff_pre.view(), &mut grad.ff1);

    // n2 = ln2_out · (1 + scale2) + shift2.
    let mut dln2_out = dn2.clone();
    let mut dscale2 = Array1::zeros(d);
    let mut dshift2 = Array1::zeros(d);
    for r in 0..m {
        for c in 0..d {
            dscale2[c] += dn2[(r, c)] * cache.ln2_out[(r, c)];
            dshift2[c] += dn2[(r, c)];
            dln2_out[(r, c)] = dn2[(r, c)] * (1.0 + cache.scale2[c]);
        }
    }
    modulation_backward(&block.mod2, t_vec, &dscale2, &dshift2, &mut grad.mod2, dt_vec);

    let mut dh_mid = dh_out.clone();
    dh_mid += &layer_norm_backward(
        dln2_out.view(),
        &cache.ln2,
        block.ln2_gain.view(),
        &mut grad.ln2_gain,
        &mut grad.ln2_bias,
    );

    // Attention branch: h_mid = h_in + wo(attn).
    let dattn_concat = block
        .wo
        .backward(cache.attn_concat.view(), dh_mid.view(), &mut grad.wo);
    let mut dq = Array2::zeros((m, d));
    let mut dk = Array2::zeros((m, d));
    let mut dv = Array2::zeros((m, d));
    for hidx in 0..heads {
        let cols = s![.., hidx * dh_count..(hidx + 1) * dh_count];
        let doh = dattn_concat.slice(cols);
        let probs = &cache.probs[hidx];
        let vh = cache.v.slice(cols);
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);

        let dprobs = matmul(doh, vh.t());
        let dvh = matmul(probs.t(), doh);
        // Softmax backward per row.
        let mut dscores = dprobs;
        for r in 0..m {
            let dot = dscores
                .row(r)
                .iter()
                .zip(probs.row(r))
                .map(|(a, b)| a * b)
                .sum::<f64>();
            for c in 0..m {
                dscores[(r, c)] = probs[(r, c)] * (dscores[(r, c)] - dot);
            }
        }
        dscores *= inv_sqrt;
        let dqh = matmul(dscores.view(), kh);
        let dkh = matmul(dscores.t(), qh);
        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }

    let mut dn1 = block.wq.backward(cache.n1.view(), dq.view(), &mut grad.wq);
    dn1 += &block.wk.backward(cache.n1.view(), dk.view(), &mut grad.wk);
    dn1 += &block.wv.backward(cache.n1.view(), dv.view(), &mut grad.wv);

    let mut dln1_out = dn1.clone();
    let mut dscale1 = Array1::zeros(d);
    let mut dshift1 = Array1::zeros(d);
    for r in 0..m {
        for c in 0..d {
            dscale1[c] += dn1[(r, c)] * cache.ln1_out[(r, c)];
            dshift1[c] += dn1[(r, c)];
            dln1_out[(r, c)] = dn1[(r, c)] * (1.0 + cache.scale1[c]);
        }
    }
    modulation_backward(&block.mod1, t_vec, &dscale1, &dshift1, &mut grad.mod1, dt_vec);

    let mut dh_in = layer_norm_backward(
        dln1_out.view(),
        &cache.ln1,
        block.ln1_gain.view(),
        &mut grad.ln1_gain,
        &mut grad.ln1_bias,
    );
    dh_in += &dh_mid;
    dh_in
}

fn modulation_backward(
    linear: &Linear,
    t_vec: &Array1<f64>,
    dscale: &Array1<f64>,
    dshift: &Array1<f64>,
    grad: &mut Linear,
    dt_vec: &mut Array1<f64>,
) {
    let d = dscale.len();
    for (half, dpart) in [(0, dscale), (1, dshift)] {
        for r in 0..d {
            let row = half * d + r;
            for c in 0..t_vec.len() {
                grad.w[(row, c)] += dpart[r] * t_vec[c];
                dt_vec[c] += linear.w[(row, c)] * dpart[r];
            }
            grad.b[row] += dpart[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cond::{build_conditions, compute_features, part_permutation, sample_queries};
    use crate::data::{fracture_object_with, GenConfig, Shape};
    use crate::flow::{ModelConfig, ModelParams};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn setup() -> (crate::data::AssemblySample, ModelParams, ConditionSet) {
        let gen = GenConfig {
            points_per_object: 600,
            min_fragment_points: 48,
            ..GenConfig::default()
        };
        let sample = fracture_object_with(Shape::Cube, 3, 8, &gen).unwrap();
        let config = ModelConfig {
            width: 16,
            blocks: 2,
            heads: 2,
            attach_layer: 2,
            head_hidden: 8,
            neighbors: 8,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 12).unwrap();
        let qs = sample_queries(&sample, 48, 5).unwrap();
        let feats = compute_features(&sample, &qs, config.bands, config.neighbors).unwrap();
        let perm = part_permutation(config.part_table, sample.k(), 2).unwrap();
        let cond = build_conditions(
            &qs,
            &feats,
            params.proj.view(),
            params.part_embed.view(),
            params.anchor_embed.view(),
            &perm,
        )
        .unwrap();
        (sample, params, cond)
    }

    #[test]
    fn zeroed_params_produce_zero_velocity() {
        let (_, params, cond) = setup();
        let mut zeroed = params.zeros_like();
        // Restore the layer-norm gains; everything else stays zero.
        for b in &mut zeroed.blocks {
            b.ln1_gain.fill(1.0);
            b.ln2_gain.fill(1.0);
        }
        zeroed.final_ln_gain.fill(1.0);
        // Conditions must also come from the zeroed projection.
        let zero_tokens = Array2::zeros(cond.tokens.dim());
        let mut zero_cond = cond.clone();
        zero_cond.tokens = zero_tokens;
        let x = Array2::from_elem((cond.total(), 3), 0.37);
        let fwd = forward(&zeroed, &x, 0.5, &zero_cond).unwrap();
        assert!(fwd.v_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_fragment_blocks_permutes_outputs() {
        // Swap two fragments' token blocks (tokens, conditioning, state)
        // and the velocity field must swap the same way.
        let (_, params, cond) = setup();
        let m = cond.total();
        let mut rng = crate::seed::rng_from(3);
        let x = Array2::from_shape_fn((m, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let base = forward(&params, &x, 0.4, &cond).unwrap();

        // Build the permutation swapping fragment 0 and 1 blocks.
        let f0: Vec<usize> = (0..m).filter(|&t| cond.fragment_map[t] == 0).collect();
        let f1: Vec<usize> = (0..m).filter(|&t| cond.fragment_map[t] == 1).collect();
        let rest: Vec<usize> = (0..m).filter(|&t| cond.fragment_map[t] > 1).collect();
        let perm: Vec<usize> = f1.iter().chain(&f0).chain(&rest).copied().collect();

        let mut cond_p = cond.clone();
        let mut x_p = Array2::zeros((m, 3));
        let mut tokens_p = Array2::zeros(cond.tokens.dim());
        let mut feats_p = Array2::zeros(cond.features.dim());
        for (new_row, &old_row) in perm.iter().enumerate() {
            x_p.row_mut(new_row).assign(&x.row(old_row));
            tokens_p.row_mut(new_row).assign(&cond.tokens.row(old_row));
            feats_p.row_mut(new_row).assign(&cond.features.row(old_row));
            cond_p.fragment_map[new_row] = cond.fragment_map[old_row];
            cond_p.part_rows[new_row] = cond.part_rows[old_row];
            cond_p.anchor_mask[new_row] = cond.anchor_mask[old_row];
        }
        cond_p.tokens = tokens_p;
        cond_p.features = feats_p;

        let swapped = forward(&params, &x_p, 0.4, &cond_p).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..3 {
                let a = base.v_hat[(old_row, c)];
                let b = swapped.v_hat[(new_row, c)];
                assert!((a - b).abs() < 1e-9, "row {old_row}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_finite_on_wide_noise() {
        let (_, params, cond) = setup();
        let mut rng = crate::seed::rng_from(4);
        let x = Array2::from_shape_fn((cond.total(), 3), |_| {
            rng.sample::<f64, _>(StandardNormal) * 3.0
        });
        let fwd = forward(&params, &x, 1.0, &cond).unwrap();
        assert!(fwd.v_hat.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_rejects_non_finite_state()
    {
        let (_, params, cond) = setup();
        let mut x = Array2::zeros((cond.total(), 3));
        x[(0, 0)] = f64::NAN;
        assert!(matches!(
            forward(&params, &x, 0.5, &cond),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn adjacency_logits_are_symmetric_with_equal_features() {
        let (_, params, cond) = setup();
        let m = cond.total();
        let d = params.config.width;
        // Identical hidden rows force equal pooled features and hence equal
        // pair logits everywhere off the diagonal.
        let hidden = Array2::from_elem((m, d), 0.25);
        let heads = structural_heads(&params, &hidden, &cond.fragment_map).unwrap();
        let k = cond.fragment_map.iter().max().unwrap() + 1;
        let first = heads.a_logits[(0, 1)];
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    assert_eq!(heads.a_logits[(i, j)], 0.0);
                } else {
                    assert!((heads.a_logits[(i, j)] - first).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjacency_matrix_equals_its_transpose() {
        let (_, params, cond) = setup();
        let m = cond.total();
        let mut rng = crate::seed::rng_from(8);
        let hidden = Array2::from_shape_fn((m, params.config.width), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let heads = structural_heads(&params, &hidden, &cond.fragment_map).unwrap();
        let k = heads.a_logits.nrows();
        assert!(k >= 2);
        for i in 0..k {
            for j in 0..k {
                assert_eq!(heads.a_logits[(i, j)], heads.a_logits[(j, i)]);
            }
        }
    }

    #[test]
    fn two_fragments_score_exactly_one_pair() {
        let gen = GenConfig {
            points_per_object: 600,
            min_fragment_points: 48,
            ..GenConfig::default()
        };
        let sample = fracture_object_with(Shape::Sphere, 2, 4, &gen).unwrap();
        let config = ModelConfig {
            width: 16,
            blocks: 1,
            heads: 2,
            attach_layer: 1,
            head_hidden: 8,
            neighbors: 8,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 1).unwrap();
        let qs = sample_queries(&sample, 32, 1).unwrap();
        let hidden = Array2::from_elem((32, 16), 0.1);
        let heads = structural_heads(&params, &hidden, &qs.fragment_map).unwrap();
        assert_eq!(heads.a_logits.dim(), (2, 2));
        // One unordered pair, two mirrored logits, zero diagonal.
        assert_eq!(heads.a_logits[(0, 0)], 0.0);
        assert_eq!(heads.a_logits[(1, 1)], 0.0);
        assert_eq!(heads.a_logits[(0, 1)], heads.a_logits[(1, 0)]);
    }
}
