//! Small trainable transformer encoder with span mean-pooling.
//!
//! Each sequence is embedded as `token + position + segment`, passed through
//! pre-norm blocks
//!
//! ```text
//! x = x + dropout(attn(ln1(x)))
//! x = x + dropout(ffn(ln2(x)))      ffn(a) = gelu(a·W_in + b_in)·W_out + b_out
//! ```
//!
//! and the head, relation and tail vectors are the means of the block outputs
//! over their token spans. Only the first `attention_len` positions are
//! processed, which is equivalent to masking padding out of attention: pads
//! never influence real tokens and are never pooled.
//!
//! Gradients are computed by hand. [`Encoder::forward_taped`] records the
//! activations (and dropout masks) that [`Encoder::backward`] consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, Tensor};
use crate::text::EncodedTriple;

/// Segment ids: special/pad, head, relation, tail.
pub const NUM_SEGMENTS: usize = 4;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden size, which is also the embedding dimension.
    pub k: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_len: crate::text::DEFAULT_MAX_LEN,
            vocab_size: 0,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::argument(format!("encoder {name} must be positive")));
        }
        if self.k % self.n_heads != 0 {
            return Err(Error::argument(format!(
                "hidden size {} is not divisible by {} heads",
                self.k, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::argument(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.k / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_scale: Tensor,
    pub ln1_offset: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_offset: Tensor,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

const LAYER_TENSORS: [&str; 16] = [
    "ln1_scale",
    "ln1_offset",
    "wq",
    "bq",
    "wk",
    "bk",
    "wv",
    "bv",
    "wo",
    "bo",
    "ln2_scale",
    "ln2_offset",
    "w_in",
    "b_in",
    "w_out",
    "b_out",
];

impl LayerParams {
    fn zeros(k: usize, ffn: usize) -> Self {
        LayerParams {
            ln1_scale: Tensor::zeros(&[k]),
            ln1_offset: Tensor::zeros(&[k]),
            wq: Tensor::zeros(&[k, k]),
            bq: Tensor::zeros(&[k]),
            wk: Tensor::zeros(&[k, k]),
            bk: Tensor::zeros(&[k]),
            wv: Tensor::zeros(&[k, k]),
            bv: Tensor::zeros(&[k]),
            wo: Tensor::zeros(&[k, k]),
            bo: Tensor::zeros(&[k]),
            ln2_scale: Tensor::zeros(&[k]),
            ln2_offset: Tensor::zeros(&[k]),
            w_in: Tensor::zeros(&[k, ffn]),
            b_in: Tensor::zeros(&[ffn]),
            w_out: Tensor::zeros(&[ffn, k]),
            b_out: Tensor::zeros(&[k]),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.ln1_scale,
            &self.ln1_offset,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_scale,
            &self.ln2_offset,
            &self.w_in,
            &self.b_in,
            &self.w_out,
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_scale,
            &mut self.ln1_offset,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_scale,
            &mut self.ln2_offset,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

/// All encoder weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embeddings: Tensor,
    pub position_embeddings: Tensor,
    pub segment_embeddings: Tensor,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        EncoderParams {
            token_embeddings: Tensor::zeros(&[cfg.vocab_size, cfg.k]),
            position_embeddings: Tensor::zeros(&[cfg.max_len, cfg.k]),
            segment_embeddings: Tensor::zeros(&[NUM_SEGMENTS, cfg.k]),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams::zeros(cfg.k, cfg.ffn_dim))
                .collect(),
        }
    }

    /// Seeded init: weights and embeddings from N(0, 0.02²) truncated at ±2σ,
    /// biases and layer-norm offsets zero, layer-norm scales one.
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for (name, t) in params.named_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.contains("scale") {
                t.data.fill(1.0);
            } else if is_weight(&name) {
                for v in &mut t.data {
                    *v = loop {
                        let s: f64 = normal.sample(&mut rng);
                        if s.abs() <= 2.0 * INIT_STD {
                            break s;
                        }
                    };
                }
            }
        }
        Ok(params)
    }

    /// `(name, tensor)` in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
            ("segment_embeddings".to_string(), &self.segment_embeddings),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (leaf, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("layers.{l}.{leaf}"), t));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            ("position_embeddings".to_string(), &mut self.position_embeddings),
            ("segment_embeddings".to_string(), &mut self.segment_embeddings),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (leaf, t) in LAYER_TENSORS.iter().zip(layer.tensors_mut()) {
                out.push((format!("layers.{l}.{leaf}"), t));
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (_, t) in self.named_mut() {
            t.data.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// Shapes must match the config exactly.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        if self.layers.len() != expected.layers.len() {
            return Err(Error::contract(format!(
                "expected {} layers, found {}",
                expected.layers.len(),
                self.layers.len()
            )));
        }
        for ((name, a), (_, b)) in self.named().into_iter().zip(expected.named()) {
            if a.shape != b.shape {
                return Err(Error::contract(format!(
                    "{name}: shape {:?} does not match config {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}

/// Matrices (including embeddings) as opposed to biases and layer-norm vectors.
pub fn is_weight(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.ends_with("embeddings") || leaf.starts_with('w')
}

/// Pooled head, relation and tail vectors of one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTriple {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub t: Vec<f64>,
}

impl EmbeddingTriple {
    pub fn zeros(k: usize) -> Self {
        EmbeddingTriple {
            h: vec![0.0; k],
            r: vec![0.0; k],
            t: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn parts(&self) -> [&[f64]; 3] {
        [&self.h, &self.r, &self.t]
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub fn add_assign(&mut self, other: &EmbeddingTriple) {
        for (a, b) in [
            (&mut self.h, &other.h),
            (&mut self.r, &other.r),
            (&mut self.t, &other.t),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Dropout switch for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from `seed`; example `i` of a batch uses stream `i`.
    Train { seed: u64 },
}

/// Dropout for a single sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dropout {
    Off,
    On { seed: u64, stream: u64 },
}

impl Mode {
    pub fn for_example(self, i: usize) -> Dropout {
        match self {
            Mode::Eval => Dropout::Off,
            Mode::Train { seed } => Dropout::On {
                seed,
                stream: i as u64,
            },
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    ln1_hat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, `[head][i][j]`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    ln2_hat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    b: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    ffn_mask: Option<Vec<f64>>,
}

/// Activations of one sequence, consumed by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    ids: Vec<u32>,
    segments: Vec<usize>,
    spans: [std::ops::Range<usize>; 3],
    emb_mask: Option<Vec<f64>>,
    layers: Vec<LayerTape>,
    output: Vec<f64>,
}

impl Tape {
    /// Final hidden states, `attention_len × k`, row-major.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: EncoderParams,
}

struct MaskRng {
    rng: Option<ChaCha8Rng>,
    keep: f64,
}

impl MaskRng {
    fn new(d: Dropout, rate: f64) -> Self {
        let rng = match d {
            Dropout::On { seed, stream } if rate > 0.0 => {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(stream);
                Some(r)
            }
            _ => None,
        };
        MaskRng {
            rng,
            keep: 1.0 - rate,
        }
    }

    fn apply(&mut self, x: &mut [f64]) -> Option<Vec<f64>> {
        let rng = self.rng.as_mut()?;
        let scale = 1.0 / self.keep;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.keep { scale } else { 0.0 })
            .collect();
        x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Some(mask)
    }
}

fn apply_mask(dx: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        dx.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let params = EncoderParams::init(&config)?;
        Ok(Encoder { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Encoder { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams {
        &mut self.params
    }

    pub fn hidden_size(&self) -> usize {
        self.config.k
    }

    fn check_sequence(&self, seq: &EncodedTriple) -> Result<()> {
        let n = seq.attention_len;
        if n > seq.token_ids.len() || n > self.config.max_len {
            return Err(Error::contract(format!(
                "attention_len {n} exceeds sequence length {} or max_len {}",
                seq.token_ids.len(),
                self.config.max_len
            )));
        }
        for span in seq.spans() {
            if span.is_empty() || span.end > n {
                return Err(Error::contract(format!(
                    "span {span:?} is empty or outside the {n} attended positions"
                )));
            }
        }
        if let Some(&id) = seq.token_ids[..n]
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::contract(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Pooled `(h, r, t)` for each sequence.
    pub fn forward(&self, batch: &[EncodedTriple], mode: Mode) -> Result<Vec<EmbeddingTriple>> {
        batch
            .par_iter()
            .enumerate()
            .map(|(i, seq)| self.encode(seq, mode.for_example(i)).map(|(e, _)| e))
            .collect()
    }

    /// Like [`Encoder::forward`], also returning the tapes for backprop.
    pub fn forward_taped(
        &self,
        batch: &[EncodedTriple],
        mode: Mode,
    ) -> Result<(Vec<EmbeddingTriple>, Vec<Tape>)> {
        let pairs: Vec<(EmbeddingTriple, Tape)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, seq)| self.encode(seq, mode.for_example(i)))
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    }

    /// Forward pass for one sequence.
    pub fn encode(&self, seq: &EncodedTriple, dropout: Dropout) -> Result<(EmbeddingTriple, Tape)> {
        self.check_sequence(seq)?;
        let cfg = &self.config;
        let p = &self.params;
        let (n, k) = (seq.attention_len, cfg.k);
        let ids = seq.token_ids[..n].to_vec();
        let segments = seq.segment_ids()[..n].to_vec();
        let mut masks = MaskRng::new(dropout, cfg.dropout_rate);

        let mut x = vec![0.0; n * k];
        for i in 0..n {
            let row = &mut x[i * k..(i + 1) * k];
            let tok = p.token_embeddings.row(ids[i] as usize);
            let pos = p.position_embeddings.row(i);
            let seg = p.segment_embeddings.row(segments[i]);
            for j in 0..k {
                row[j] = tok[j] + pos[j] + seg[j];
            }
        }
        let emb_mask = masks.apply(&mut x);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lp in &p.layers {
            let (tape, out) = self.layer_forward(lp, x, n, &mut masks);
            layers.push(tape);
            x = out;
        }

        let spans = [
            seq.head_span.clone(),
            seq.rel_span.clone(),
            seq.tail_span.clone(),
        ];
        let pool = |span: &std::ops::Range<usize>| {
            let mut v = vec![0.0; k];
            for i in span.clone() {
                v.iter_mut()
                    .zip(&x[i * k..(i + 1) * k])
                    .for_each(|(a, b)| *a += b);
            }
            let c = span.len() as f64;
            v.iter_mut().for_each(|a| *a /= c);
            v
        };
        let emb = EmbeddingTriple {
            h: pool(&spans[0]),
            r: pool(&spans[1]),
            t: pool(&spans[2]),
        };
        Ok((
            emb,
            Tape {
                ids,
                segments,
                spans,
                emb_mask,
                layers,
                output: x,
            },
        ))
    }

    fn layer_forward(
        &self,
        lp: &LayerParams,
        x_in: Vec<f64>,
        n: usize,
        masks: &mut MaskRng,
    ) -> (LayerTape, Vec<f64>) {
        let k = self.config.k;
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();

        let (a, ln1_hat, ln1_rstd) = layer_norm(&x_in, n, &lp.ln1_scale, &lp.ln1_offset);
        let q = linear(&a, n, &lp.wq, &lp.bq);
        let kk = linear(&a, n, &lp.wk, &lp.bk);
        let v = linear(&a, n, &lp.wv, &lp.bv);

        let mut probs = vec![0.0; heads * n * n];
        let mut ctx = vec![0.0; n * k];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * k + off..i * k + off + hd];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &kk[j * k + off..j * k + off + hd];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                row.iter_mut().for_each(|s| *s /= z);
                let ci = &mut ctx[i * k + off..i * k + off + hd];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[j * k + off..j * k + off + hd];
                    ci.iter_mut().zip(vj).for_each(|(c, vv)| *c += pij * vv);
                }
            }
        }
        let mut attn_out = linear(&ctx, n, &lp.wo, &lp.bo);
        let attn_mask = masks.apply(&mut attn_out);
        let x_mid: Vec<f64> = x_in.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

        let (b, ln2_hat, ln2_rstd) = layer_norm(&x_mid, n, &lp.ln2_scale, &lp.ln2_offset);
        let pre_act = linear(&b, n, &lp.w_in, &lp.b_in);
        let act: Vec<f64> = pre_act.iter().map(|&z| gelu(z)).collect();
        let mut ffn_out = linear(&act, n, &lp.w_out, &lp.b_out);
        let ffn_mask = masks.apply(&mut ffn_out);
        let out: Vec<f64> = x_mid.iter().zip(&ffn_out).map(|(a, b)| a + b).collect();

        (
            LayerTape {
                ln1_hat,
                ln1_rstd,
                a,
                q,
                k: kk,
                v,
                probs,
                ctx,
                attn_mask,
                ln2_hat,
                ln2_rstd,
                b,
                pre_act,
                act,
                ffn_mask,
            },
            out,
        )
    }

    /// Gradients of `Σᵢ ⟨upstreamᵢ, outputᵢ⟩` with respect to every parameter.
    pub fn backward(&self, tapes: &[Tape], upstream: &[EmbeddingTriple]) -> Result<EncoderParams> {
        if tapes.len() != upstream.len() {
            return Err(Error::contract(format!(
                "{} tapes but {} upstream gradients",
                tapes.len(),
                upstream.len()
            )));
        }
        let mut grads = EncoderParams::zeros(&self.config);
        for (tape, up) in tapes.iter().zip(upstream) {
            self.backward_into(tape, up, &mut grads)?;
        }
        Ok(grads)
    }

    /// Re-runs the forward pass with the same mode (so dropout masks replay)
    /// and backpropagates `upstream`.
    pub fn backward_replay(
        &self,
        batch: &[EncodedTriple],
        mode: Mode,
        upstream: &[EmbeddingTriple],
    ) -> Result<EncoderParams> {
        let (_, tapes) = self.forward_taped(batch, mode)?;
        self.backward(&tapes, upstream)
    }

    /// Accumulates one sequence's parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        upstream: &EmbeddingTriple,
        grads: &mut EncoderParams,
    ) -> Result<()> {
        let k = self.config.k;
        for part in upstream.parts() {
            if part.len() != k {
                return Err(Error::contract(format!(
                    "upstream gradient has length {}, expected {k}",
                    part.len()
                )));
            }
        }
        grads.check_shapes(&self.config)?;
        let n = tape.ids.len();

        let mut dx = vec![0.0; n * k];
        for (span, g) in tape.spans.iter().zip(upstream.parts()) {
            let c = span.len() as f64;
            for i in span.clone() {
                dx[i * k..(i + 1) * k]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, gv)| *d += gv / c);
            }
        }

        for (l, lt) in tape.layers.iter().enumerate().rev() {
            dx = self.layer_backward(&self.params.layers[l], lt, dx, n, &mut grads.layers[l]);
        }

        apply_mask(&mut dx, &tape.emb_mask);
        for i in 0..n {
            let g = &dx[i * k..(i + 1) * k];
            for (dst, src) in [
                (grads.token_embeddings.row_mut(tape.ids[i] as usize), g),
                (grads.position_embeddings.row_mut(i), g),
                (grads.segment_embeddings.row_mut(tape.segments[i]), g),
            ] {
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    fn layer_backward(
        &self,
        lp: &LayerParams,
        t: &LayerTape,
        d_out: Vec<f64>,
        n: usize,
        g: &mut LayerParams,
    ) -> Vec<f64> {
        let k = self.config.k;
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();

        // Feed-forward branch.
        let mut d_ffn = d_out.clone();
        apply_mask(&mut d_ffn, &t.ffn_mask);
        let mut d_act = linear_backward(&t.act, &d_ffn, n, &lp.w_out, &mut g.w_out, &mut g.b_out);
        d_act
            .iter_mut()
            .zip(&t.pre_act)
            .for_each(|(d, &z)| *d *= gelu_grad(z));
        let d_b = linear_backward(&t.b, &d_act, n, &lp.w_in, &mut g.w_in, &mut g.b_in);
        let d_ln2 = layer_norm_backward(
            &d_b,
            &t.ln2_hat,
            &t.ln2_rstd,
            &lp.ln2_scale,
            &mut g.ln2_scale,
            &mut g.ln2_offset,
        );
        let d_mid: Vec<f64> = d_out.iter().zip(&d_ln2).map(|(a, b)| a + b).collect();

        // Attention branch.
        let mut d_attn = d_mid.clone();
        apply_mask(&mut d_attn, &t.attn_mask);
        let d_ctx = linear_backward(&t.ctx, &d_attn, n, &lp.wo, &mut g.wo, &mut g.bo);
        let mut dq = vec![0.0; n * k];
        let mut dk = vec![0.0; n * k];
        let mut dv = vec![0.0; n * k];
        let mut dp = vec![0.0; n];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let p = &t.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &d_ctx[i * k + off..i * k + off + hd];
                let mut dot = 0.0;
                for j in 0..n {
                    let vj = &t.v[j * k + off..j * k + off + hd];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    dv[j * k + off..j * k + off + hd]
                        .iter_mut()
                        .zip(dci)
                        .for_each(|(d, c)| *d += p[j] * c);
                }
                for j in 0..n {
                    let ds = p[j] * (dp[j] - dot) * inv_sqrt;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..hd {
                        dq[i * k + off + c] += ds * t.k[j * k + off + c];
                        dk[j * k + off + c] += ds * t.q[i * k + off + c];
                    }
                }
            }
        }
        let mut d_a = linear_backward(&t.a, &dq, n, &lp.wq, &mut g.wq, &mut g.bq);
        for (dy, w, gw, gb) in [
            (&dk, &lp.wk, &mut g.wk, &mut g.bk),
            (&dv, &lp.wv, &mut g.wv, &mut g.bv),
        ] {
            let part = linear_backward(&t.a, dy, n, w, gw, gb);
            d_a.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
        }
        let d_ln1 = layer_norm_backward(
            &d_a,
            &t.ln1_hat,
            &t.ln1_rstd,
            &lp.ln1_scale,
            &mut g.ln1_scale,
            &mut g.ln1_offset,
        );
        d_mid.iter().zip(&d_ln1).map(|(a, b)| a + b).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::encode_segments;

    fn cfg(layers: usize) -> EncoderConfig {
        EncoderConfig {
            k: 8,
            n_layers: layers,
            n_heads: 2,
            ffn_dim: 16,
            max_len: 16,
            vocab_size: 20,
            dropout_rate: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn init_is_deterministic_and_truncated() {
        let a = EncoderParams::init(&cfg(2)).unwrap();
        let b = EncoderParams::init(&cfg(2)).unwrap();
        assert_eq!(a, b);
        for (name, t) in a.named() {
            if name.ends_with("scale") {
                assert!(t.data.iter().all(|&x| x == 1.0), "{name}");
            } else if is_weight(&name) {
                assert!(t.data.iter().all(|x| x.abs() <= 0.04), "{name}");
                assert!(t.data.iter().any(|&x| x != 0.0), "{name}");
            } else {
                assert!(t.data.iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(1);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = cfg(1);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(1);
        c.vocab_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_layers_pool_the_embedding_sum() {
        let enc = Encoder::new(cfg(0)).unwrap();
        let seq = encode_segments(&[5], &[6], &[7, 8], 16).unwrap();
        let (e, _) = enc.encode(&seq, Dropout::Off).unwrap();
        let p = enc.params();
        let v: Vec<f64> = (0..8)
            .map(|j| {
                p.token_embeddings.row(5)[j] + p.position_embeddings.row(1)[j] + p.segment_embeddings.row(1)[j]
            })
            .collect();
        assert_eq!(e.h, v);
    }

    #[test]
    fn span_outside_sequence_is_rejected() {
        let enc = Encoder::new(cfg(1)).unwrap();
        let mut seq = encode_segments(&[5], &[6], &[7], 16).unwrap();
        seq.tail_span = 5..9;
        assert!(matches!(enc.encode(&seq, Dropout::Off), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut c = cfg(2);
        c.dropout_rate = 0.2;
        let enc = Encoder::new(c).unwrap();
        let seq = encode_segments(&[5, 9], &[6], &[7, 8], 16).unwrap();
        let g = enc
            .backward_replay(&[seq], Mode::Train { seed: 1 }, &[EmbeddingTriple::zeros(8)])
            .unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn upstream_shape_mismatch() {
        let enc = Encoder::new(cfg(1)).unwrap();
        let seq = encode_segments(&[5], &[6], &[7], 16).unwrap();
        let (_, tapes) = enc.forward_taped(&[seq], Mode::Eval).unwrap();
        assert!(enc.backward(&tapes, &[EmbeddingTriple::zeros(4)]).is_err());
        assert!(enc.backward(&tapes, &[]).is_err());
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut c = cfg(2);
        c.dropout_rate = 0.5;
        let enc = Encoder::new(c).unwrap();
        let seq = encode_segments(&[5, 9], &[6], &[7, 8], 16).unwrap();
        let a = enc.forward(std::slice::from_ref(&seq), Mode::Eval).unwrap();
        let b = enc.forward(std::slice::from_ref(&seq), Mode::Eval).unwrap();
        assert_eq!(a, b);
        let t1 = enc.forward(std::slice::from_ref(&seq), Mode::Train { seed: 4 }).unwrap();
        let t2 = enc.forward(std::slice::from_ref(&seq), Mode::Train { seed: 4 }).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(a, t1);
    }
}
