//! Named parameter arrays for the actor and the critic.
//!
//! Every array is an `Array2<f64>`; biases and normalization vectors are
//! stored as `1 x width` rows so they broadcast over the sequence.

use ndarray::Array2;
use rand::Rng;

use super::NetConfig;
use crate::seed;

/// Uniform operations over a fixed, ordered list of named arrays. Gradients
/// share the type of the parameters they belong to.
pub trait ParamTensors: Clone {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// `self += k * other`.
    fn add_scaled(&mut self, other: &Self, k: f64) {
        let src = other.tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.scaled_add(k, s);
        }
    }

    fn scale(&mut self, k: f64) {
        self.tensors_mut().into_iter().for_each(|t| *t *= k);
    }

    fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first array holding a non-finite value.
    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for t in self.tensors_mut() {
            t.iter_mut()
                .for_each(|v| *v = *it.next().expect("flat vector too short"));
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

/// One self-attention block with its feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array2<f64>,
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array2<f64>,
    /// Normalization after the attention residual.
    pub bn1_scale: Array2<f64>,
    pub bn1_shift: Array2<f64>,
    /// Normalization after the feed-forward residual.
    pub bn2_scale: Array2<f64>,
    pub bn2_shift: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    /// Node feature embedding, `2 x d_h`.
    pub embed_w: Array2<f64>,
    pub embed_b: Array2<f64>,
    pub layers: Vec<EncoderLayerParams>,
    /// Linear map of the max-pooled embedding.
    pub pool_w: Array2<f64>,
    /// Per-location linear map.
    pub node_w: Array2<f64>,
    pub dec_q: Array2<f64>,
    pub dec_k: Array2<f64>,
}

impl PolicyParameters {
    /// Uniform `[-1/sqrt(d_h), 1/sqrt(d_h)]` weights and biases; normalization
    /// scales start at one and shifts at zero.
    pub fn init(config: &NetConfig, rng_seed: u64) -> Self {
        let d = config.d_h;
        let f = config.d_ff;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = seed::rng(rng_seed);
        let r = &mut rng;
        let embed_w = uniform(r, 2, d, bound);
        let embed_b = uniform(r, 1, d, bound);
        let layers = (0..config.layers)
            .map(|_| EncoderLayerParams {
                w_q: uniform(r, d, d, bound),
                w_k: uniform(r, d, d, bound),
                w_v: uniform(r, d, d, bound),
                ff_w1: uniform(r, d, f, bound),
                ff_b1: uniform(r, 1, f, bound),
                ff_w2: uniform(r, f, d, bound),
                ff_b2: uniform(r, 1, d, bound),
                bn1_scale: Array2::ones((1, d)),
                bn1_shift: Array2::zeros((1, d)),
                bn2_scale: Array2::ones((1, d)),
                bn2_shift: Array2::zeros((1, d)),
            })
            .collect();
        Self {
            embed_w,
            embed_b,
            layers,
            pool_w: uniform(r, d, d, bound),
            node_w: uniform(r, d, d, bound),
            dec_q: uniform(r, d, d, bound),
            dec_k: uniform(r, d, d, bound),
        }
    }

    pub fn zero_decoder(&mut self) {
        for t in [&mut self.pool_w, &mut self.node_w, &mut self.dec_q, &mut self.dec_k] {
            t.fill(0.0);
        }
    }

    /// Expected `(name, shape)` list for a configuration.
    pub fn expected_shapes(config: &NetConfig) -> Vec<(String, (usize, usize))> {
        Self::init(config, 0)
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.dim()))
            .collect()
    }
}

impl ParamTensors for PolicyParameters {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("embed.w".to_string(), &self.embed_w),
            ("embed.b".to_string(), &self.embed_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layer{i}.w_q"), &l.w_q),
                (format!("layer{i}.w_k"), &l.w_k),
                (format!("layer{i}.w_v"), &l.w_v),
                (format!("layer{i}.ff_w1"), &l.ff_w1),
                (format!("layer{i}.ff_b1"), &l.ff_b1),
                (format!("layer{i}.ff_w2"), &l.ff_w2),
                (format!("layer{i}.ff_b2"), &l.ff_b2),
                (format!("layer{i}.bn1_scale"), &l.bn1_scale),
                (format!("layer{i}.bn1_shift"), &l.bn1_shift),
                (format!("layer{i}.bn2_scale"), &l.bn2_scale),
                (format!("layer{i}.bn2_shift"), &l.bn2_shift),
            ]);
        }
        out.extend([
            ("decoder.pool_w".to_string(), &self.pool_w),
            ("decoder.node_w".to_string(), &self.node_w),
            ("decoder.w_q".to_string(), &self.dec_q),
            ("decoder.w_k".to_string(), &self.dec_k),
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b];
        for l in &mut self.layers {
            out.extend([
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.ff_w1,
                &mut l.ff_b1,
                &mut l.ff_w2,
                &mut l.ff_b2,
                &mut l.bn1_scale,
                &mut l.bn1_shift,
                &mut l.bn2_scale,
                &mut l.bn2_shift,
            ]);
        }
        out.extend([&mut self.pool_w, &mut self.node_w, &mut self.dec_q, &mut self.dec_k]);
        out
    }
}

/// Critic: per-location coordinate embedding, mean pooling, then a two-layer
/// head down to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParameters {
    pub embed_w: Array2<f64>,
    pub embed_b: Array2<f64>,
    pub hidden_w: Array2<f64>,
    pub hidden_b: Array2<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array2<f64>,
}

impl CriticParameters {
    pub fn init(config: &NetConfig, rng_seed: u64) -> Self {
        let d = config.d_h;
        let f = config.d_ff;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = seed::rng(rng_seed);
        let r = &mut rng;
        Self {
            embed_w: uniform(r, 2, d, bound),
            embed_b: uniform(r, 1, d, bound),
            hidden_w: uniform(r, d, f, bound),
            hidden_b: uniform(r, 1, f, bound),
            out_w: uniform(r, f, 1, bound),
            out_b: uniform(r, 1, 1, bound),
        }
    }

    pub fn expected_shapes(config: &NetConfig) -> Vec<(String, (usize, usize))> {
        Self::init(config, 0)
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.dim()))
            .collect()
    }
}

impl ParamTensors for CriticParameters {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        vec![
            ("critic.embed_w".to_string(), &self.embed_w),
            ("critic.embed_b".to_string(), &self.embed_b),
            ("critic.hidden_w".to_string(), &self.hidden_w),
            ("critic.hidden_b".to_string(), &self.hidden_b),
            ("critic.out_w".to_string(), &self.out_w),
            ("critic.out_b".to_string(), &self.out_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }
}
