//! Actor forward pass with cached activations, and the exact reverse pass
//! for `grad log pi(action | state)`.
//!
//! Sequences are stored row-major: row `i` of every `N x d_h` matrix belongs
//! to sequence position `i`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};

use super::params::{EncoderLayerParams, PolicyParameters};
use super::{ActionProbs, NetConfig};
use crate::env::{MoveAction, PlacementState};
use crate::error::{Error, Result};
use crate::spatial::ProblemInstance;

/// Variance floor inside the sequence normalization.
pub const NORM_EPS: f64 = 1e-10;

/// `N x 2` coordinates in sequence order.
pub fn sequence_coordinates(state: &PlacementState, instance: &ProblemInstance) -> Array2<f64> {
    let locs = instance.locations();
    Array2::from_shape_fn((state.len(), 2), |(i, c)| {
        let p = &locs[state.order()[i]];
        if c == 0 {
            p.x
        } else {
            p.y
        }
    })
}

/// Linear embedding of each position's coordinates.
pub fn node_feature_embedding(
    state: &PlacementState,
    instance: &ProblemInstance,
    params: &PolicyParameters,
) -> Array2<f64> {
    sequence_coordinates(state, instance).dot(&params.embed_w) + &params.embed_b
}

/// Sinusoidal position table: `sin(i / 10000^(floor(d/2)/d_h))` in even
/// columns, `cos` of the same angle in odd columns.
pub fn position_feature_embedding(seq_len: usize, d_h: usize) -> Array2<f64> {
    Array2::from_shape_fn((seq_len, d_h), |(i, d)| {
        let angle = i as f64 / 10000f64.powf((d / 2) as f64 / d_h as f64);
        if d % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

thread_local! {
    static POSITION_TABLES: RefCell<HashMap<(usize, usize), Rc<Array2<f64>>>> = RefCell::new(HashMap::new());
}

fn cached_positions(seq_len: usize, d_h: usize) -> Rc<Array2<f64>> {
    POSITION_TABLES.with(|t| {
        t.borrow_mut()
            .entry((seq_len, d_h))
            .or_insert_with(|| Rc::new(position_feature_embedding(seq_len, d_h)))
            .clone()
    })
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Row `i` holds position `i`'s weights over all positions.
    weights: Array2<f64>,
}

fn attention_forward(h: &Array2<f64>, layer: &EncoderLayerParams) -> (Array2<f64>, AttentionCache) {
    let scale = 1.0 / (h.ncols() as f64).sqrt();
    let q = h.dot(&layer.w_q);
    let k = h.dot(&layer.w_k);
    let v = h.dot(&layer.w_v);
    let mut weights = q.dot(&k.t());
    weights *= scale;
    softmax_rows(&mut weights);
    let out = weights.dot(&v);
    (out, AttentionCache { q, k, v, weights })
}

/// Single-head scaled dot-product self-attention over the sequence.
pub fn self_attention(h: &Array2<f64>, layer: &EncoderLayerParams) -> Array2<f64> {
    attention_forward(h, layer).0
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Per-feature normalization over the sequence axis with learned scale and
/// shift.
fn norm_forward(u: Array2<f64>, scale: &Array2<f64>, shift: &Array2<f64>) -> (Array2<f64>, NormCache) {
    let mean = u.mean_axis(Axis(0)).expect("non-empty sequence");
    let mut xhat = u;
    xhat -= &mean;
    let var = xhat.map_axis(Axis(0), |c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64);
    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
    xhat *= &inv_std;
    let out = &xhat * scale + shift;
    (out, NormCache { xhat, inv_std })
}

/// Sequence normalization with unit scale and zero shift.
pub fn normalize(u: &Array2<f64>) -> Array2<f64> {
    let d = u.ncols();
    norm_forward(u.clone(), &Array2::ones((1, d)), &Array2::zeros((1, d))).0
}

fn norm_backward(
    dout: &Array2<f64>,
    cache: &NormCache,
    scale: &Array2<f64>,
    dscale: &mut Array2<f64>,
    dshift: &mut Array2<f64>,
) -> Array2<f64> {
    *dshift += &dout.sum_axis(Axis(0));
    let dx_xhat = dout * &cache.xhat;
    *dscale += &dx_xhat.sum_axis(Axis(0));
    let dxhat = dout * scale;
    let mean_d = dxhat.mean_axis(Axis(0)).expect("non-empty");
    let mean_dx = (&dxhat * &cache.xhat).mean_axis(Axis(0)).expect("non-empty");
    let mut du = dxhat;
    du -= &mean_d;
    du -= &(&cache.xhat * &mean_dx);
    du *= &cache.inv_std;
    du
}

struct LayerCache {
    input: Array2<f64>,
    attention: AttentionCache,
    norm1: NormCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    norm2: NormCache,
}

fn layer_forward(h: Array2<f64>, layer: &EncoderLayerParams) -> (Array2<f64>, LayerCache) {
    let (att, attention) = attention_forward(&h, layer);
    let (h1, norm1) = norm_forward(&h + &att, &layer.bn1_scale, &layer.bn1_shift);
    let ff_pre = h1.dot(&layer.ff_w1) + &layer.ff_b1;
    let ff_act = ff_pre.mapv(|v| v.max(0.0));
    let mut u2 = ff_act.dot(&layer.ff_w2) + &layer.ff_b2;
    u2 += &h1;
    let (out, norm2) = norm_forward(u2, &layer.bn2_scale, &layer.bn2_shift);
    let cache = LayerCache {
        input: h,
        attention,
        norm1,
        h1,
        ff_pre,
        ff_act,
        norm2,
    };
    (out, cache)
}

fn layer_backward(
    dout: &Array2<f64>,
    cache: &LayerCache,
    layer: &EncoderLayerParams,
    grad: &mut EncoderLayerParams,
) -> Array2<f64> {
    let du2 = norm_backward(
        dout,
        &cache.norm2,
        &layer.bn2_scale,
        &mut grad.bn2_scale,
        &mut grad.bn2_shift,
    );

    general_mat_mul(1.0, &cache.ff_act.t(), &du2, 1.0, &mut grad.ff_w2);
    grad.ff_b2 += &du2.sum_axis(Axis(0));
    let mut dpre = du2.dot(&layer.ff_w2.t());
    Zip::from(&mut dpre).and(&cache.ff_pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    general_mat_mul(1.0, &cache.h1.t(), &dpre, 1.0, &mut grad.ff_w1);
    grad.ff_b1 += &dpre.sum_axis(Axis(0));
    let mut dh1 = du2;
    general_mat_mul(1.0, &dpre, &layer.ff_w1.t(), 1.0, &mut dh1);

    let du1 = norm_backward(
        &dh1,
        &cache.norm1,
        &layer.bn1_scale,
        &mut grad.bn1_scale,
        &mut grad.bn1_shift,
    );

    let att = &cache.attention;
    let scale = 1.0 / (dout.ncols() as f64).sqrt();
    let dweights = du1.dot(&att.v.t());
    let dv = att.weights.t().dot(&du1);
    // softmax rows: ds = w * (dw - <dw, w>)
    let mut ds = &att.weights * &dweights;
    let row_dot = ds.sum_axis(Axis(1));
    Zip::from(ds.rows_mut())
        .and(att.weights.rows())
        .and(&row_dot)
        .for_each(|mut d, w, &c| d.scaled_add(-c, &w));
    ds *= scale;
    let dq = ds.dot(&att.k);
    let dk = ds.t().dot(&att.q);

    let x = &cache.input;
    general_mat_mul(1.0, &x.t(), &dq, 1.0, &mut grad.w_q);
    general_mat_mul(1.0, &x.t(), &dk, 1.0, &mut grad.w_k);
    general_mat_mul(1.0, &x.t(), &dv, 1.0, &mut grad.w_v);
    let mut dx = du1;
    general_mat_mul(1.0, &dq, &layer.w_q.t(), 1.0, &mut dx);
    general_mat_mul(1.0, &dk, &layer.w_k.t(), 1.0, &mut dx);
    general_mat_mul(1.0, &dv, &layer.w_v.t(), 1.0, &mut dx);
    dx
}

pub struct EncoderPass {
    coords: Array2<f64>,
    layers: Vec<LayerCache>,
    output: Array2<f64>,
}

impl EncoderPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Smallest `|pre-activation|` over every feed-forward ReLU. Finite
    /// differences with a step that moves a pre-activation further than this
    /// straddle a kink.
    pub fn relu_margin(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.ff_pre.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_finite(m: &Array2<f64>, stage: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Runtime(format!("non-finite activation in {}", stage())))
    }
}

/// Encoder forward pass keeping the activations for [`accumulate_encoder_grad`].
pub fn encode_pass(
    state: &PlacementState,
    instance: &ProblemInstance,
    params: &PolicyParameters,
    config: &NetConfig,
) -> Result<EncoderPass> {
    assert_eq!(params.layers.len(), config.layers, "parameters do not match config");
    let coords = sequence_coordinates(state, instance);
    let mut h = coords.dot(&params.embed_w) + &params.embed_b;
    h += &*cached_positions(state.len(), config.d_h);
    check_finite(&h, || "input embedding".into())?;
    let mut layers = Vec::with_capacity(config.layers);
    for (i, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(h, layer);
        check_finite(&out, || format!("encoder layer {}", i + 1))?;
        layers.push(cache);
        h = out;
    }
    Ok(EncoderPass {
        coords,
        layers,
        output: h,
    })
}

/// Final encoder embeddings, `N x d_h`.
pub fn encode(
    state: &PlacementState,
    instance: &ProblemInstance,
    params: &PolicyParameters,
    config: &NetConfig,
) -> Result<Array2<f64>> {
    Ok(encode_pass(state, instance, params, config)?.output)
}

pub struct DecoderPass {
    pooled: Array2<f64>,
    argmax: Vec<usize>,
    hc: Array2<f64>,
    qc: Array2<f64>,
    kc: Array2<f64>,
    tanh_m: Array2<f64>,
    n_placed: usize,
    log_norm: f64,
    probs: ActionProbs,
}

/// Scale applied to the decoder's key-query products.
pub(crate) fn compat_scale(d_h: usize) -> f64 {
    1.0 / (d_h as f64).sqrt()
}

fn decode_pass(h: &Array2<f64>, params: &PolicyParameters, config: &NetConfig, n_placed: usize) -> Result<DecoderPass> {
    let len = h.nrows();
    let d = h.ncols();
    let mut argmax = vec![0usize; d];
    let mut pooled = Array2::from_elem((1, d), f64::NEG_INFINITY);
    for (i, row) in h.rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > pooled[[0, j]] {
                pooled[[0, j]] = v;
                argmax[j] = i;
            }
        }
    }
    let mut hc = h.dot(&params.node_w);
    hc += &pooled.dot(&params.pool_w);
    let qc = hc.dot(&params.dec_q);
    let kc = hc.dot(&params.dec_k);
    // m[a, b] = k_a . q_b
    let mut tanh_m = kc.dot(&qc.t());
    let scale = compat_scale(d);
    tanh_m.mapv_inplace(|v| (v * scale).tanh());
    check_finite(&tanh_m, || "decoder compatibility".into())?;

    let variant = config.variant;
    let mut max_logit = f64::NEG_INFINITY;
    for a in 0..len {
        for b in 0..len {
            if variant.allows(a, b, n_placed) {
                max_logit = max_logit.max(config.clip * tanh_m[[a, b]]);
            }
        }
    }
    if max_logit == f64::NEG_INFINITY {
        return Err(Error::Domain("every action is masked".into()));
    }
    let mut probs = vec![0.0; len * len];
    let mut total = 0.0;
    for a in 0..len {
        for b in 0..len {
            if variant.allows(a, b, n_placed) {
                let e = (config.clip * tanh_m[[a, b]] - max_logit).exp();
                probs[a * len + b] = e;
                total += e;
            }
        }
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(DecoderPass {
        pooled,
        argmax,
        hc,
        qc,
        kc,
        tanh_m,
        n_placed,
        log_norm: max_logit + total.ln(),
        probs: ActionProbs::new_unchecked(len, probs),
    })
}

/// Probability matrix over ordered position pairs from encoder output.
/// `n_placed` is the number of leading sensor positions, used by the
/// mask-swap variant.
pub fn decode_action_probs(
    h: &Array2<f64>,
    params: &PolicyParameters,
    config: &NetConfig,
    n_placed: usize,
) -> Result<ActionProbs> {
    Ok(decode_pass(h, params, config, n_placed)?.probs)
}

/// Full actor pass with everything the reverse pass needs.
pub struct ForwardPass {
    encoder: EncoderPass,
    decoder: DecoderPass,
}

impl ForwardPass {
    pub fn probs(&self) -> &ActionProbs {
        &self.decoder.probs
    }

    pub fn encoder(&self) -> &EncoderPass {
        &self.encoder
    }

    /// Pre-softmax score of an allowed pair, `C tanh(m[a, b])`.
    pub fn logit(&self, clip: f64, action: MoveAction) -> f64 {
        clip * self.decoder.tanh_m[[action.a, action.b]]
    }

    pub fn log_prob(&self, clip: f64, action: MoveAction) -> f64 {
        self.logit(clip, action) - self.decoder.log_norm
    }
}

pub fn forward(
    state: &PlacementState,
    instance: &ProblemInstance,
    params: &PolicyParameters,
    config: &NetConfig,
) -> Result<ForwardPass> {
    let encoder = encode_pass(state, instance, params, config)?;
    let decoder = decode_pass(&encoder.output, params, config, state.n())?;
    Ok(ForwardPass { encoder, decoder })
}

/// `grad += coeff * d log pi(action) / d params`.
pub fn accumulate_log_prob_grad(
    pass: &ForwardPass,
    action: MoveAction,
    coeff: f64,
    params: &PolicyParameters,
    config: &NetConfig,
    grad: &mut PolicyParameters,
) {
    if coeff == 0.0 {
        return;
    }
    let dec = &pass.decoder;
    let enc = &pass.encoder;
    let len = dec.probs.len();
    let d = config.d_h;

    // d log p(a*) / d logit(a, b) = [ (a, b) = a* ] - p(a, b), zero where masked
    let mut dm = Array2::<f64>::zeros((len, len));
    for a in 0..len {
        for b in 0..len {
            if !config.variant.allows(a, b, dec.n_placed) {
                continue;
            }
            let hit = if a == action.a && b == action.b { 1.0 } else { 0.0 };
            let dlogit = coeff * (hit - dec.probs.get(a, b));
            let t = dec.tanh_m[[a, b]];
            dm[[a, b]] = dlogit * config.clip * (1.0 - t * t);
        }
    }
    dm *= compat_scale(d);
    let dkc = dm.dot(&dec.qc);
    let dqc = dm.t().dot(&dec.kc);
    general_mat_mul(1.0, &dec.hc.t(), &dqc, 1.0, &mut grad.dec_q);
    general_mat_mul(1.0, &dec.hc.t(), &dkc, 1.0, &mut grad.dec_k);
    let mut dhc = dqc.dot(&params.dec_q.t());
    general_mat_mul(1.0, &dkc, &params.dec_k.t(), 1.0, &mut dhc);

    general_mat_mul(1.0, &enc.output.t(), &dhc, 1.0, &mut grad.node_w);
    let mut dh = dhc.dot(&params.node_w.t());
    let dpool_row = dhc.sum_axis(Axis(0)).insert_axis(Axis(0));
    general_mat_mul(1.0, &dec.pooled.t(), &dpool_row, 1.0, &mut grad.pool_w);
    let dpooled = dpool_row.dot(&params.pool_w.t());
    for (j, &i) in dec.argmax.iter().enumerate() {
        dh[[i, j]] += dpooled[[0, j]];
    }

    accumulate_encoder_grad(enc, dh, params, grad);
}

/// `grad += sum_ij dout[i, j] * d H'[i, j] / d params` over the encoder
/// parameters; decoder entries of `grad` are left untouched.
pub fn accumulate_encoder_grad(
    enc: &EncoderPass,
    dout: Array2<f64>,
    params: &PolicyParameters,
    grad: &mut PolicyParameters,
) {
    assert_eq!(dout.dim(), enc.output.dim(), "output gradient shape");
    let mut dh = dout;
    for ((cache, layer), lgrad) in enc.layers.iter().zip(&params.layers).zip(&mut grad.layers).rev() {
        dh = layer_backward(&dh, cache, layer, lgrad);
    }
    general_mat_mul(1.0, &enc.coords.t(), &dh, 1.0, &mut grad.embed_w);
    grad.embed_b += &dh.sum_axis(Axis(0));
}
