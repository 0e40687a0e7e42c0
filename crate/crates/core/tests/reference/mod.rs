//! Naive reference implementations used as test oracles.
//!
//! Everything here is written with plain `Vec`s and explicit loops straight
//! from the model definitions, sharing no code with the library beyond
//! reading parameter values.

#![allow(dead_code, clippy::needless_range_loop)]

use placeopt_core::policy::{NetConfig, PolicyParameters, Variant};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[[i, j]]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Adds a single row to every row of `a`.
pub fn add_row(a: &Mat, row: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(&row[0]).map(|(x, y)| x + y).collect())
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// IDW with `w = 1/d`; a query closer than 1e-9 to a sensor takes its value.
pub fn idw(sensors: &[(f64, f64, f64)], qx: f64, qy: f64) -> f64 {
    for &(x, y, z) in sensors {
        if ((x - qx).powi(2) + (y - qy).powi(2)).sqrt() < 1e-9 {
            return z;
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y, z) in sensors {
        let d = ((x - qx).powi(2) + (y - qy).powi(2)).sqrt();
        num += z / d;
        den += 1.0 / d;
    }
    num / den
}

pub fn mae(truth: &[f64], pred: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..truth.len() {
        s += (truth[i] - pred[i]).abs();
    }
    s / truth.len() as f64
}

/// Score of a placement given raw pool data: `pool[i] = (x, y, z)`,
/// `eval[j] = (x, y, z)`.
pub fn score(pool: &[(f64, f64, f64)], eval: &[(f64, f64, f64)], placed: &[usize]) -> f64 {
    let sensors: Vec<(f64, f64, f64)> = placed.iter().map(|&i| pool[i]).collect();
    let truth: Vec<f64> = eval.iter().map(|e| e.2).collect();
    let pred: Vec<f64> = eval.iter().map(|e| idw(&sensors, e.0, e.1)).collect();
    mae(&truth, &pred)
}

/// Bootstrapped discounted return from every step of a segment, by direct
/// summation: `R_i = sum_{j >= i} g^(j-i) r_j + g^(len-i) V`.
pub fn n_step_targets(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let len = rewards.len();
    (0..len)
        .map(|i| {
            let mut r = 0.0;
            for j in i..len {
                r += gamma.powi((j - i) as i32) * rewards[j];
            }
            r + gamma.powi((len - i) as i32) * bootstrap
        })
        .collect()
}

fn softmax_rows(s: &Mat) -> Mat {
    s.iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let t: f64 = e.iter().sum();
            e.iter().map(|v| v / t).collect()
        })
        .collect()
}

pub fn attention(h: &Mat, wq: &Mat, wk: &Mat, wv: &Mat) -> Mat {
    let q = matmul(h, wq);
    let k = matmul(h, wk);
    let v = matmul(h, wv);
    let d = wq[0].len() as f64;
    let mut s = matmul(&q, &transpose(&k));
    for row in &mut s {
        for x in row.iter_mut() {
            *x /= d.sqrt();
        }
    }
    matmul(&softmax_rows(&s), &v)
}

/// Per-column standardization over the sequence, then an affine map.
pub fn norm(u: &Mat, scale: &Mat, shift: &Mat) -> Mat {
    let n = u.len() as f64;
    let cols = u[0].len();
    let mut out = u.clone();
    for j in 0..cols {
        let mean = u.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = u.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        for i in 0..u.len() {
            out[i][j] = (u[i][j] - mean) / (var + 1e-10).sqrt() * scale[0][j] + shift[0][j];
        }
    }
    out
}

pub fn positions(len: usize, d_h: usize) -> Mat {
    (0..len)
        .map(|i| {
            (0..d_h)
                .map(|d| {
                    let angle = i as f64 / 10000f64.powf((d / 2) as f64 / d_h as f64);
                    if d % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

/// Encoder output for coordinates given in sequence order.
pub fn encode(coords: &[(f64, f64)], p: &PolicyParameters) -> Mat {
    let d_h = p.embed_w.ncols();
    let c: Mat = coords.iter().map(|&(x, y)| vec![x, y]).collect();
    let mut h = add(
        &add_row(&matmul(&c, &to_mat(&p.embed_w)), &to_mat(&p.embed_b)),
        &positions(coords.len(), d_h),
    );
    for l in &p.layers {
        let att = attention(&h, &to_mat(&l.w_q), &to_mat(&l.w_k), &to_mat(&l.w_v));
        let h1 = norm(&add(&h, &att), &to_mat(&l.bn1_scale), &to_mat(&l.bn1_shift));
        let mut hidden = add_row(&matmul(&h1, &to_mat(&l.ff_w1)), &to_mat(&l.ff_b1));
        for row in &mut hidden {
            for x in row.iter_mut() {
                *x = x.max(0.0);
            }
        }
        let ff = add_row(&matmul(&hidden, &to_mat(&l.ff_w2)), &to_mat(&l.ff_b2));
        h = norm(&add(&ff, &h1), &to_mat(&l.bn2_scale), &to_mat(&l.bn2_shift));
    }
    h
}

/// Whether ordered position pair `(a, b)` is a legal move.
pub fn allowed(variant: Variant, a: usize, b: usize, n_placed: usize) -> bool {
    if a == b {
        return false;
    }
    match variant {
        Variant::Swap => true,
        Variant::MaskSwap => (a < n_placed) != (b < n_placed),
    }
}

/// Action probability matrix `PR[a][b]` from encoder output.
pub fn decode(h: &Mat, p: &PolicyParameters, config: &NetConfig, n_placed: usize) -> Mat {
    let len = h.len();
    let d = h[0].len();
    let pooled: Mat = vec![(0..d)
        .map(|j| h.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect()];
    let pool_term = matmul(&pooled, &to_mat(&p.pool_w));
    let hc = add_row(&matmul(h, &to_mat(&p.node_w)), &pool_term);
    let q = matmul(&hc, &to_mat(&p.dec_q));
    let k = matmul(&hc, &to_mat(&p.dec_k));
    let mut logits = vec![vec![f64::NEG_INFINITY; len]; len];
    for a in 0..len {
        for b in 0..len {
            if allowed(config.variant, a, b, n_placed) {
                let dot: f64 = (0..d).map(|t| k[a][t] * q[b][t]).sum();
                logits[a][b] = config.clip * (dot / (d as f64).sqrt()).tanh();
            }
        }
    }
    let mx = logits.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut pr = vec![vec![0.0; len]; len];
    for a in 0..len {
        for b in 0..len {
            if logits[a][b] > f64::NEG_INFINITY {
                pr[a][b] = (logits[a][b] - mx).exp();
                total += pr[a][b];
            }
        }
    }
    for row in &mut pr {
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    pr
}

/// Full policy: coordinates in sequence order to `PR`.
pub fn action_probs(coords: &[(f64, f64)], p: &PolicyParameters, config: &NetConfig, n_placed: usize) -> Mat {
    decode(&encode(coords, p), p, config, n_placed)
}
