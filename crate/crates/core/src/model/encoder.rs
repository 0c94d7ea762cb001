//! A small pre-norm transformer encoder with tied MLM and classification heads.
//!
//! Parameters live in one flat buffer described by a named layout, which keeps
//! optimizer state, gradient accumulation and serialization trivial.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, c, Scalar};
use super::ModelError;
use crate::util::derived_rng;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            max_sequence_length: 128,
            hidden_dim: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 64,
            dropout: 0.1,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ffn_dim == 0
        {
            return bad("dimensions must be positive");
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad("hidden_dim must be divisible by n_heads");
        }
        if self.max_sequence_length < 8 {
            return bad("max_sequence_length must be at least 8");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.init_std <= 0.0 {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

/// How the classification head summarizes the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Hidden state of the leading `[CLS]` token.
    Cls,
    /// Mean of all hidden states.
    Mean,
}

/// Which output heads a model carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub mlm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<usize>,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
}

fn default_pooling() -> Pooling {
    Pooling::Cls
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            mlm: true,
            classifier: None,
            pooling: Pooling::Cls,
        }
    }
}

/// Name, shape and offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    mlm_b: Option<usize>,
    cls_w: Option<usize>,
    cls_b: Option<usize>,
}

/// Parameter layout derived from the config and heads.
pub fn param_layout(cfg: &EncoderConfig, heads: &HeadConfig) -> Vec<ParamEntry> {
    let (v, d, f, l) = (cfg.vocab_size, cfg.hidden_dim, cfg.ffn_dim, cfg.max_sequence_length);
    let mut entries = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let e = ParamEntry { name, shape, offset };
        offset += e.len();
        entries.push(e);
    };
    push("embeddings.token".into(), vec![v, d]);
    push("embeddings.position".into(), vec![l, d]);
    for i in 0..cfg.n_layers {
        let p = format!("layer{i}");
        push(format!("{p}.ln1.gamma"), vec![d]);
        push(format!("{p}.ln1.beta"), vec![d]);
        for m in ["query", "key", "value", "output"] {
            push(format!("{p}.attention.{m}.weight"), vec![d, d]);
            push(format!("{p}.attention.{m}.bias"), vec![d]);
        }
        push(format!("{p}.ln2.gamma"), vec![d]);
        push(format!("{p}.ln2.beta"), vec![d]);
        push(format!("{p}.ffn.in.weight"), vec![d, f]);
        push(format!("{p}.ffn.in.bias"), vec![f]);
        push(format!("{p}.ffn.out.weight"), vec![f, d]);
        push(format!("{p}.ffn.out.bias"), vec![d]);
    }
    push("final_ln.gamma".into(), vec![d]);
    push("final_ln.beta".into(), vec![d]);
    if heads.mlm {
        push("mlm.bias".into(), vec![v]);
    }
    if let Some(k) = heads.classifier {
        push("classifier.weight".into(), vec![d, k]);
        push("classifier.bias".into(), vec![k]);
    }
    entries
}

fn resolve_offsets(cfg: &EncoderConfig, layout: &[ParamEntry]) -> Offsets {
    let find = |name: &str| layout.iter().find(|e| e.name == name).map(|e| e.offset);
    let req = |name: &str| find(name).expect("parameter in layout");
    let layers = (0..cfg.n_layers)
        .map(|i| {
            let p = |s: &str| req(&format!("layer{i}.{s}"));
            LayerOffsets {
                ln1_g: p("ln1.gamma"),
                ln1_b: p("ln1.beta"),
                wq: p("attention.query.weight"),
                bq: p("attention.query.bias"),
                wk: p("attention.key.weight"),
                bk: p("attention.key.bias"),
                wv: p("attention.value.weight"),
                bv: p("attention.value.bias"),
                wo: p("attention.output.weight"),
                bo: p("attention.output.bias"),
                ln2_g: p("ln2.gamma"),
                ln2_b: p("ln2.beta"),
                w1: p("ffn.in.weight"),
                b1: p("ffn.in.bias"),
                w2: p("ffn.out.weight"),
                b2: p("ffn.out.bias"),
            }
        })
        .collect();
    Offsets {
        tok: req("embeddings.token"),
        pos: req("embeddings.position"),
        layers,
        lnf_g: req("final_ln.gamma"),
        lnf_b: req("final_ln.beta"),
        mlm_b: find("mlm.bias"),
        cls_w: find("classifier.weight"),
        cls_b: find("classifier.bias"),
    }
}

/// Encoder weights plus heads.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: EncoderConfig,
    heads: HeadConfig,
    layout: Vec<ParamEntry>,
    offs: Offsets,
    pub params: Vec<T>,
}

impl<T: PartialEq> PartialEq for Encoder<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.heads == other.heads && self.params == other.params
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    ln1_out: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads × L × L attention probabilities.
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    ln2_out: Vec<T>,
    ffn_pre: Vec<T>,
    ffn_act: Vec<T>,
    ffn_drop: Option<Vec<T>>,
}

/// Activations retained from a forward pass.
pub struct Forward<T> {
    pub ids: Vec<u32>,
    /// Final hidden states, L × hidden_dim.
    pub hidden: Vec<T>,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
}

impl<T> Forward<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn dropout_mask<T: Scalar, R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = c::<T>(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

impl<T: Scalar> Encoder<T> {
    /// Randomly initialized model (normal weights, unit LayerNorm gains, zero biases).
    pub fn new(config: EncoderConfig, heads: HeadConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if heads.classifier == Some(0) {
            return Err(ModelError::InvalidConfig("classifier needs at least one class".into()));
        }
        let layout = param_layout(&config, &heads);
        let total = layout.last().map_or(0, |e| e.offset + e.len());
        let mut params = vec![T::zero(); total];
        let mut rng = derived_rng(config.seed, "encoder-init");
        let normal = Normal::new(0.0, config.init_std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        for e in &layout {
            init_entry(e, &mut params, &normal, &mut rng);
        }
        let offs = resolve_offsets(&config, &layout);
        Ok(Self {
            config,
            heads,
            layout,
            offs,
            params,
        })
    }

    /// Rebuild from a layout-ordered flat buffer.
    pub fn from_params(config: EncoderConfig, heads: HeadConfig, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = param_layout(&config, &heads);
        let total = layout.last().map_or(0, |e| e.offset + e.len());
        if params.len() != total {
            return Err(ModelError::Checkpoint(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        let offs = resolve_offsets(&config, &layout);
        Ok(Self {
            config,
            heads,
            layout,
            offs,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.range()])
    }

    /// Same weights with a different head set; shared tensors are copied,
    /// new tensors are initialized from `seed`.
    pub fn with_heads(&self, heads: HeadConfig, seed: u64) -> Result<Self, ModelError> {
        let mut cfg = self.config.clone();
        cfg.seed = seed;
        let mut fresh = Encoder::<T>::new(cfg, heads)?;
        fresh.config.seed = self.config.seed;
        for e in fresh.layout.clone() {
            if let Some(old) = self.layout.iter().find(|o| o.name == e.name && o.shape == e.shape) {
                fresh.params[e.range()].copy_from_slice(&self.params[old.range()]);
            }
        }
        Ok(fresh)
    }

    /// Convert to another float type (e.g. f64 for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            heads: self.heads.clone(),
            layout: self.layout.clone(),
            offs: self.offs.clone(),
            params: self
                .params
                .iter()
                .map(|&p| U::from_f64(p.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero))
                .collect(),
        }
    }

    fn slice(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    /// Run the encoder over a full input sequence (including `[CLS]`/`[SEP]`).
    ///
    /// Dropout is applied only when an RNG is supplied.
    pub fn forward<R: Rng>(&self, ids: &[u32], mut rng: Option<&mut R>) -> Result<Forward<T>, ModelError> {
        let cfg = &self.config;
        let (d, f, h) = (cfg.hidden_dim, cfg.ffn_dim, cfg.n_heads);
        let dh = cfg.head_dim();
        let l = ids.len();
        if l == 0 {
            return Err(ModelError::InvalidInput("empty sequence".into()));
        }
        if l > cfg.max_sequence_length {
            return Err(ModelError::SequenceTooLong {
                len: l,
                max: cfg.max_sequence_length,
            });
        }
        let p_drop = if rng.is_some() { cfg.dropout } else { 0.0 };

        let mut x = vec![T::zero(); l * d];
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(ModelError::InvalidInput(format!("token id {id} out of range")));
            }
            let te = self.slice(self.offs.tok + id as usize * d, d);
            let pe = self.slice(self.offs.pos + i * d, d);
            for j in 0..d {
                x[i * d + j] = te[j] + pe[j];
            }
        }
        let emb_drop = match (&mut rng, p_drop > 0.0) {
            (Some(r), true) => {
                let m = dropout_mask::<T, R>(l * d, p_drop, r);
                for (v, &s) in x.iter_mut().zip(&m) {
                    *v = *v * s;
                }
                Some(m)
            }
            _ => None,
        };

        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.offs.layers {
            let x_in = x.clone();
            let (ln1_out, ln1_xhat, ln1_rstd) = ops::layer_norm(&x, self.slice(lo.ln1_g, d), self.slice(lo.ln1_b, d));
            let project = |w: usize, b: usize| {
                let mut out = vec![T::zero(); l * d];
                ops::matmul_acc(&ln1_out, self.slice(w, d * d), &mut out, l, d, d);
                ops::add_bias(&mut out, self.slice(b, d));
                out
            };
            let q = project(lo.wq, lo.bq);
            let k = project(lo.wk, lo.bk);
            let v = project(lo.wv, lo.bv);

            let mut probs = vec![T::zero(); h * l * l];
            let mut ctx = vec![T::zero(); l * d];
            for head in 0..h {
                let off = head * dh;
                for i in 0..l {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let row = &mut probs[(head * l + i) * l..(head * l + i + 1) * l];
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = ops::dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                    }
                    ops::softmax_inplace(row);
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v[j * d + off..j * d + off + dh];
                        for (cv, &vv) in ci.iter_mut().zip(vj) {
                            *cv = *cv + p * vv;
                        }
                    }
                }
            }
            let mut attn = vec![T::zero(); l * d];
            ops::matmul_acc(&ctx, self.slice(lo.wo, d * d), &mut attn, l, d, d);
            ops::add_bias(&mut attn, self.slice(lo.bo, d));
            let attn_drop = match (&mut rng, p_drop > 0.0) {
                (Some(r), true) => {
                    let m = dropout_mask::<T, R>(l * d, p_drop, r);
                    for (a, &s) in attn.iter_mut().zip(&m) {
                        *a = *a * s;
                    }
                    Some(m)
                }
                _ => None,
            };
            for (xv, &a) in x.iter_mut().zip(&attn) {
                *xv = *xv + a;
            }

            let (ln2_out, ln2_xhat, ln2_rstd) = ops::layer_norm(&x, self.slice(lo.ln2_g, d), self.slice(lo.ln2_b, d));
            let mut ffn_pre = vec![T::zero(); l * f];
            ops::matmul_acc(&ln2_out, self.slice(lo.w1, d * f), &mut ffn_pre, l, d, f);
            ops::add_bias(&mut ffn_pre, self.slice(lo.b1, f));
            let ffn_act: Vec<T> = ffn_pre.iter().map(|&u| ops::gelu(u)).collect();
            let mut ffn_out = vec![T::zero(); l * d];
            ops::matmul_acc(&ffn_act, self.slice(lo.w2, f * d), &mut ffn_out, l, f, d);
            ops::add_bias(&mut ffn_out, self.slice(lo.b2, d));
            let ffn_drop = match (&mut rng, p_drop > 0.0) {
                (Some(r), true) => {
                    let m = dropout_mask::<T, R>(l * d, p_drop, r);
                    for (a, &s) in ffn_out.iter_mut().zip(&m) {
                        *a = *a * s;
                    }
                    Some(m)
                }
                _ => None,
            };
            for (xv, &a) in x.iter_mut().zip(&ffn_out) {
                *xv = *xv + a;
            }
            layers.push(LayerCache {
                x_in,
                ln1_xhat,
                ln1_rstd,
                ln1_out,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln2_xhat,
                ln2_rstd,
                ln2_out,
                ffn_pre,
                ffn_act,
                ffn_drop,
            });
        }
        let (hidden, lnf_xhat, lnf_rstd) =
            ops::layer_norm(&x, self.slice(self.offs.lnf_g, d), self.slice(self.offs.lnf_b, d));
        Ok(Forward {
            ids: ids.to_vec(),
            hidden,
            emb_drop,
            layers,
            lnf_xhat,
            lnf_rstd,
        })
    }

    /// Backpropagate `d_hidden` (L × hidden_dim) through the encoder, accumulating into `grads`.
    pub fn backward(&self, fwd: &Forward<T>, d_hidden: &[T], grads: &mut [T]) {
        let cfg = &self.config;
        let (d, f, h) = (cfg.hidden_dim, cfg.ffn_dim, cfg.n_heads);
        let dh = cfg.head_dim();
        let l = fwd.ids.len();
        let scale = c::<T>(1.0 / (dh as f64).sqrt());

        let (g_lnf_g, g_lnf_b) = split_two(grads, self.offs.lnf_g, self.offs.lnf_b, d);
        let mut dx = ops::layer_norm_backward(
            d_hidden,
            &fwd.lnf_xhat,
            &fwd.lnf_rstd,
            self.slice(self.offs.lnf_g, d),
            g_lnf_g,
            g_lnf_b,
        );

        for (lo, cache) in self.offs.layers.iter().zip(&fwd.layers).rev() {
            // FFN sublayer: x_out = x_mid + drop(W2 gelu(W1 ln2(x_mid)))
            let mut d_ffn_out = dx.clone();
            if let Some(m) = &cache.ffn_drop {
                for (g, &s) in d_ffn_out.iter_mut().zip(m) {
                    *g = *g * s;
                }
            }
            ops::sum_rows_acc(&d_ffn_out, &mut grads[lo.b2..lo.b2 + d]);
            ops::matmul_at_acc(&cache.ffn_act, &d_ffn_out, &mut grads[lo.w2..lo.w2 + f * d], l, f, d);
            let mut d_act = vec![T::zero(); l * f];
            ops::matmul_bt_acc(&d_ffn_out, self.slice(lo.w2, f * d), &mut d_act, l, f, d);
            for (g, &u) in d_act.iter_mut().zip(&cache.ffn_pre) {
                *g = *g * ops::gelu_grad(u);
            }
            ops::sum_rows_acc(&d_act, &mut grads[lo.b1..lo.b1 + f]);
            ops::matmul_at_acc(&cache.ln2_out, &d_act, &mut grads[lo.w1..lo.w1 + d * f], l, d, f);
            let mut d_ln2 = vec![T::zero(); l * d];
            ops::matmul_bt_acc(&d_act, self.slice(lo.w1, d * f), &mut d_ln2, l, d, f);
            let (g2g, g2b) = split_two(grads, lo.ln2_g, lo.ln2_b, d);
            let d_mid = ops::layer_norm_backward(
                &d_ln2,
                &cache.ln2_xhat,
                &cache.ln2_rstd,
                self.slice(lo.ln2_g, d),
                g2g,
                g2b,
            );
            for (a, b) in dx.iter_mut().zip(&d_mid) {
                *a = *a + *b;
            }

            // Attention sublayer: x_mid = x_in + drop(Wo attn(ln1(x_in)))
            let mut d_attn = dx.clone();
            if let Some(m) = &cache.attn_drop {
                for (g, &s) in d_attn.iter_mut().zip(m) {
                    *g = *g * s;
                }
            }
            ops::sum_rows_acc(&d_attn, &mut grads[lo.bo..lo.bo + d]);
            ops::matmul_at_acc(&cache.ctx, &d_attn, &mut grads[lo.wo..lo.wo + d * d], l, d, d);
            let mut d_ctx = vec![T::zero(); l * d];
            ops::matmul_bt_acc(&d_attn, self.slice(lo.wo, d * d), &mut d_ctx, l, d, d);

            let mut dq = vec![T::zero(); l * d];
            let mut dk = vec![T::zero(); l * d];
            let mut dv = vec![T::zero(); l * d];
            let mut dscores = vec![T::zero(); l];
            for head in 0..h {
                let off = head * dh;
                for i in 0..l {
                    let p = &cache.probs[(head * l + i) * l..(head * l + i + 1) * l];
                    let dci = &d_ctx[i * d + off..i * d + off + dh];
                    let mut weighted = T::zero();
                    for j in 0..l {
                        let vj = &cache.v[j * d + off..j * d + off + dh];
                        let dp = ops::dot(dci, vj);
                        dscores[j] = dp;
                        weighted = weighted + p[j] * dp;
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (g, &dc) in dvj.iter_mut().zip(dci) {
                            *g = *g + p[j] * dc;
                        }
                    }
                    for j in 0..l {
                        let ds = p[j] * (dscores[j] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = &cache.k[j * d + off..j * d + off + dh];
                        let qi = &cache.q[i * d + off..i * d + off + dh];
                        {
                            let dqi = &mut dq[i * d + off..i * d + off + dh];
                            for (g, &kv) in dqi.iter_mut().zip(kj) {
                                *g = *g + ds * kv;
                            }
                        }
                        let dkj = &mut dk[j * d + off..j * d + off + dh];
                        for (g, &qv) in dkj.iter_mut().zip(qi) {
                            *g = *g + ds * qv;
                        }
                    }
                }
            }
            let mut d_ln1 = vec![T::zero(); l * d];
            for (dproj, w, b) in [(&dq, lo.wq, lo.bq), (&dk, lo.wk, lo.bk), (&dv, lo.wv, lo.bv)] {
                ops::sum_rows_acc(dproj, &mut grads[b..b + d]);
                ops::matmul_at_acc(&cache.ln1_out, dproj, &mut grads[w..w + d * d], l, d, d);
                ops::matmul_bt_acc(dproj, self.slice(w, d * d), &mut d_ln1, l, d, d);
            }
            let (g1g, g1b) = split_two(grads, lo.ln1_g, lo.ln1_b, d);
            let d_in = ops::layer_norm_backward(
                &d_ln1,
                &cache.ln1_xhat,
                &cache.ln1_rstd,
                self.slice(lo.ln1_g, d),
                g1g,
                g1b,
            );
            for (a, b) in dx.iter_mut().zip(&d_in) {
                *a = *a + *b;
            }
            debug_assert_eq!(cache.x_in.len(), dx.len());
        }

        if let Some(m) = &fwd.emb_drop {
            for (g, &s) in dx.iter_mut().zip(m) {
                *g = *g * s;
            }
        }
        for (i, &id) in fwd.ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let t = self.offs.tok + id as usize * d;
            for (g, &v) in grads[t..t + d].iter_mut().zip(row) {
                *g = *g + v;
            }
            let p = self.offs.pos + i * d;
            for (g, &v) in grads[p..p + d].iter_mut().zip(row) {
                *g = *g + v;
            }
        }
    }

    /// MLM logits (tied to the token embeddings) at one hidden row, for the given token ids.
    pub fn mlm_logits_subset(&self, row: &[T], tokens: &[u32]) -> Result<Vec<T>, ModelError> {
        let b = self.offs.mlm_b.ok_or(ModelError::HeadMissing("mlm"))?;
        let d = self.config.hidden_dim;
        Ok(tokens
            .iter()
            .map(|&t| ops::dot(row, self.slice(self.offs.tok + t as usize * d, d)) + self.params[b + t as usize])
            .collect())
    }

    /// MLM logits over the whole vocabulary at one hidden row.
    pub fn mlm_logits(&self, row: &[T]) -> Result<Vec<T>, ModelError> {
        let b = self.offs.mlm_b.ok_or(ModelError::HeadMissing("mlm"))?;
        let d = self.config.hidden_dim;
        let emb = self.slice(self.offs.tok, self.config.vocab_size * d);
        Ok(emb
            .chunks(d)
            .zip(&self.params[b..b + self.config.vocab_size])
            .map(|(e, &bias)| ops::dot(row, e) + bias)
            .collect())
    }

    /// Backward of [`Self::mlm_logits_subset`]: accumulates weight grads and `d_row`.
    pub fn mlm_backward_subset(&self, row: &[T], tokens: &[u32], d_logits: &[T], grads: &mut [T], d_row: &mut [T]) {
        let b = self.offs.mlm_b.expect("mlm head");
        let d = self.config.hidden_dim;
        for (&t, &g) in tokens.iter().zip(d_logits) {
            if g == T::zero() {
                continue;
            }
            let e = self.offs.tok + t as usize * d;
            grads[b + t as usize] = grads[b + t as usize] + g;
            for j in 0..d {
                grads[e + j] = grads[e + j] + g * row[j];
                d_row[j] = d_row[j] + g * self.params[e + j];
            }
        }
    }

    /// Backward of [`Self::mlm_logits`] over the full vocabulary.
    pub fn mlm_backward(&self, row: &[T], d_logits: &[T], grads: &mut [T], d_row: &mut [T]) {
        let b = self.offs.mlm_b.expect("mlm head");
        let d = self.config.hidden_dim;
        for (t, &g) in d_logits.iter().enumerate() {
            let e = self.offs.tok + t * d;
            grads[b + t] = grads[b + t] + g;
            for j in 0..d {
                grads[e + j] = grads[e + j] + g * row[j];
                d_row[j] = d_row[j] + g * self.params[e + j];
            }
        }
    }

    fn pooled(&self, hidden: &[T]) -> Vec<T> {
        let d = self.config.hidden_dim;
        match self.heads.pooling {
            Pooling::Cls => hidden[..d].to_vec(),
            Pooling::Mean => {
                let l = hidden.len() / d;
                let inv = c::<T>(1.0 / l as f64);
                let mut out = vec![T::zero(); d];
                ops::sum_rows_acc(hidden, &mut out);
                out.iter_mut().for_each(|v| *v = *v * inv);
                out
            }
        }
    }

    /// Classification logits from the final hidden states.
    pub fn classifier_logits(&self, hidden: &[T]) -> Result<Vec<T>, ModelError> {
        let (w, b, k) = match (self.offs.cls_w, self.offs.cls_b, self.heads.classifier) {
            (Some(w), Some(b), Some(k)) => (w, b, k),
            _ => return Err(ModelError::HeadMissing("classifier")),
        };
        let d = self.config.hidden_dim;
        let pooled = self.pooled(hidden);
        let mut out = self.params[b..b + k].to_vec();
        ops::matmul_acc(&pooled, self.slice(w, d * k), &mut out, 1, d, k);
        Ok(out)
    }

    /// Backward of [`Self::classifier_logits`]; accumulates into `d_hidden`.
    pub fn classifier_backward(&self, hidden: &[T], d_logits: &[T], grads: &mut [T], d_hidden: &mut [T]) {
        let (w, b, k) = (
            self.offs.cls_w.expect("classifier head"),
            self.offs.cls_b.expect("classifier head"),
            self.heads.classifier.expect("classifier head"),
        );
        let d = self.config.hidden_dim;
        let pooled = self.pooled(hidden);
        for (g, &dl) in grads[b..b + k].iter_mut().zip(d_logits) {
            *g = *g + dl;
        }
        ops::matmul_at_acc(&pooled, d_logits, &mut grads[w..w + d * k], 1, d, k);
        let mut d_pooled = vec![T::zero(); d];
        ops::matmul_bt_acc(d_logits, self.slice(w, d * k), &mut d_pooled, 1, d, k);
        match self.heads.pooling {
            Pooling::Cls => {
                for (g, &v) in d_hidden[..d].iter_mut().zip(&d_pooled) {
                    *g = *g + v;
                }
            }
            Pooling::Mean => {
                let l = hidden.len() / d;
                let inv = c::<T>(1.0 / l as f64);
                for row in d_hidden.chunks_mut(d) {
                    for (g, &v) in row.iter_mut().zip(&d_pooled) {
                        *g = *g + v * inv;
                    }
                }
            }
        }
    }
}

fn split_two<T>(grads: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

fn init_entry<T: Scalar, R: Rng>(e: &ParamEntry, params: &mut [T], normal: &Normal<f64>, rng: &mut R) {
    let range = e.range();
    if e.name.ends_with(".gamma") {
        params[range].iter_mut().for_each(|p| *p = T::one());
    } else if e.name.ends_with(".bias") || e.name.ends_with(".beta") {
        // zero
    } else {
        for p in &mut params[range] {
            *p = c(normal.sample(rng));
        }
    }
}
