use crate::numcore::{
    linear, multi_head_attention, AttentionNodes, Graph, NodeId, NumError, Result, Tensor,
};
use crate::rng::Rng;

use super::config::ModelConfig;
use super::mask::MaskPlan;
use super::signal::{patchify, sincos_positions};

/// Layer-norm epsilon used by every block.
pub const LN_EPS: f64 = 1e-6;

/// Parameter skeleton, generic over the handle type so the same shape
/// describes both owned tensors (`MaeParams<Tensor>`) and their graph
/// bindings (`MaeParams<NodeId>`). Traversal order is the canonical
/// parameter order used by checkpoints and optimizer state.
#[derive(Debug, Clone)]
pub struct MaeParams<P> {
    pub patch_proj: LinearParams<P>,
    pub cls_token: P,
    pub enc_blocks: Vec<BlockParams<P>>,
    pub enc_norm: NormParams<P>,
    pub enc_to_dec: LinearParams<P>,
    pub mask_token: P,
    pub dec_blocks: Vec<BlockParams<P>>,
    pub dec_norm: NormParams<P>,
    pub pred_head: LinearParams<P>,
}

#[derive(Debug, Clone)]
pub struct LinearParams<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone)]
pub struct NormParams<P> {
    pub gamma: P,
    pub beta: P,
}

#[derive(Debug, Clone)]
pub struct AttnParams<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
    pub bq: Option<P>,
    pub bk: Option<P>,
    pub bv: Option<P>,
    pub bo: P,
}

#[derive(Debug, Clone)]
pub struct BlockParams<P> {
    pub norm1: NormParams<P>,
    pub attn: AttnParams<P>,
    pub norm2: NormParams<P>,
    pub mlp_fc1: LinearParams<P>,
    pub mlp_fc2: LinearParams<P>,
}

impl<P> MaeParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> MaeParams<Q> {
        MaeParams {
            patch_proj: self.patch_proj.map(f),
            cls_token: f(&self.cls_token),
            enc_blocks: self.enc_blocks.iter().map(|b| b.map(f)).collect(),
            enc_norm: self.enc_norm.map(f),
            enc_to_dec: self.enc_to_dec.map(f),
            mask_token: f(&self.mask_token),
            dec_blocks: self.dec_blocks.iter().map(|b| b.map(f)).collect(),
            dec_norm: self.dec_norm.map(f),
            pred_head: self.pred_head.map(f),
        }
    }

    /// Visits every parameter with its canonical name, in canonical order.
    pub fn for_each_named(&self, f: &mut impl FnMut(&str, &P)) {
        self.patch_proj.visit("patch_proj", f);
        f("cls_token", &self.cls_token);
        for (i, b) in self.enc_blocks.iter().enumerate() {
            b.visit(&format!("enc.{i}"), f);
        }
        self.enc_norm.visit("enc_norm", f);
        self.enc_to_dec.visit("enc_to_dec", f);
        f("mask_token", &self.mask_token);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.visit(&format!("dec.{i}"), f);
        }
        self.dec_norm.visit("dec_norm", f);
        self.pred_head.visit("pred_head", f);
    }

    pub fn for_each_named_mut(&mut self, f: &mut impl FnMut(&str, &mut P)) {
        self.patch_proj.visit_mut("patch_proj", f);
        f("cls_token", &mut self.cls_token);
        for (i, b) in self.enc_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("enc.{i}"), f);
        }
        self.enc_norm.visit_mut("enc_norm", f);
        self.enc_to_dec.visit_mut("enc_to_dec", f);
        f("mask_token", &mut self.mask_token);
        for (i, b) in self.dec_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("dec.{i}"), f);
        }
        self.dec_norm.visit_mut("dec_norm", f);
        self.pred_head.visit_mut("pred_head", f);
    }
}

impl<P> LinearParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LinearParams<Q> {
        LinearParams { weight: f(&self.weight), bias: f(&self.bias) }
    }
    fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> NormParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormParams<Q> {
        NormParams { gamma: f(&self.gamma), beta: f(&self.beta) }
    }
    fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

impl<P> AttnParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttnParams<Q> {
        // Visit order must match `visit` so positional bindings line up.
        let wq = f(&self.wq);
        let bq = self.bq.as_ref().map(&mut *f);
        let wk = f(&self.wk);
        let bk = self.bk.as_ref().map(&mut *f);
        let wv = f(&self.wv);
        let bv = self.bv.as_ref().map(&mut *f);
        let wo = f(&self.wo);
        let bo = f(&self.bo);
        AttnParams { wq, wk, wv, wo, bq, bk, bv, bo }
    }
    fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        f(&format!("{prefix}.wq"), &self.wq);
        if let Some(b) = &self.bq {
            f(&format!("{prefix}.bq"), b);
        }
        f(&format!("{prefix}.wk"), &self.wk);
        if let Some(b) = &self.bk {
            f(&format!("{prefix}.bk"), b);
        }
        f(&format!("{prefix}.wv"), &self.wv);
        if let Some(b) = &self.bv {
            f(&format!("{prefix}.bv"), b);
        }
        f(&format!("{prefix}.wo"), &self.wo);
        f(&format!("{prefix}.bo"), &self.bo);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.wq"), &mut self.wq);
        if let Some(b) = &mut self.bq {
            f(&format!("{prefix}.bq"), b);
        }
        f(&format!("{prefix}.wk"), &mut self.wk);
        if let Some(b) = &mut self.bk {
            f(&format!("{prefix}.bk"), b);
        }
        f(&format!("{prefix}.wv"), &mut self.wv);
        if let Some(b) = &mut self.bv {
            f(&format!("{prefix}.bv"), b);
        }
        f(&format!("{prefix}.wo"), &mut self.wo);
        f(&format!("{prefix}.bo"), &mut self.bo);
    }
}

impl<P> BlockParams<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BlockParams<Q> {
        BlockParams {
            norm1: self.norm1.map(f),
            attn: self.attn.map(f),
            norm2: self.norm2.map(f),
            mlp_fc1: self.mlp_fc1.map(f),
            mlp_fc2: self.mlp_fc2.map(f),
        }
    }
    fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &P)) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.mlp_fc1.visit(&format!("{prefix}.mlp_fc1"), f);
        self.mlp_fc2.visit(&format!("{prefix}.mlp_fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.mlp_fc1.visit_mut(&format!("{prefix}.mlp_fc1"), f);
        self.mlp_fc2.visit_mut(&format!("{prefix}.mlp_fc2"), f);
    }
}

/// One per-channel masked autoencoder: learned parameters plus the fixed
/// sine-cosine position tables for encoder and decoder.
#[derive(Debug, Clone)]
pub struct Mae1dModel {
    pub config: ModelConfig,
    pub params: MaeParams<Tensor>,
    enc_pos: Tensor,
    dec_pos: Tensor,
}

impl Mae1dModel {
    /// Deterministic initialization: linear layers uniform in
    /// `±1/sqrt(fan_in)` (weights and biases), layer norms at identity,
    /// class and mask tokens from a zero-mean normal with std 0.02.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let num_patches = config.num_patches();

        let lin = |fan_in: usize, fan_out: usize, rng: &mut Rng| -> LinearParams<Tensor> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::new(
                vec![fan_in, fan_out],
                (0..fan_in * fan_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
            )
            .expect("finite init")
            .with_grad();
            let bias = Tensor::new(
                vec![1, fan_out],
                (0..fan_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
            )
            .expect("finite init")
            .with_grad();
            LinearParams { weight, bias }
        };
        let norm = |dim: usize| NormParams {
            gamma: Tensor::new(vec![1, dim], vec![1.0; dim]).expect("ones").with_grad(),
            beta: Tensor::zeros(vec![1, dim]).with_grad(),
        };
        let token = |dim: usize, rng: &mut Rng| {
            Tensor::new(vec![1, dim], (0..dim).map(|_| 0.02 * rng.normal()).collect())
                .expect("finite init")
                .with_grad()
        };
        let block = |dim: usize, mlp_ratio: usize, qkv_bias: bool, rng: &mut Rng| {
            let maybe_bias = |present: bool, fan_in: usize, rng: &mut Rng| {
                if present {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Some(
                        Tensor::new(
                            vec![1, dim],
                            (0..dim).map(|_| rng.uniform_in(-bound, bound)).collect(),
                        )
                        .expect("finite init")
                        .with_grad(),
                    )
                } else {
                    None
                }
            };
            let square = |rng: &mut Rng| {
                let bound = 1.0 / (dim as f64).sqrt();
                Tensor::new(
                    vec![dim, dim],
                    (0..dim * dim).map(|_| rng.uniform_in(-bound, bound)).collect(),
                )
                .expect("finite init")
                .with_grad()
            };
            BlockParams {
                norm1: norm(dim),
                attn: AttnParams {
                    wq: square(rng),
                    bq: maybe_bias(qkv_bias, dim, rng),
                    wk: square(rng),
                    bk: maybe_bias(qkv_bias, dim, rng),
                    wv: square(rng),
                    bv: maybe_bias(qkv_bias, dim, rng),
                    wo: square(rng),
                    bo: maybe_bias(true, dim, rng).expect("bo always present"),
                },
                norm2: norm(dim),
                mlp_fc1: lin(dim, dim * mlp_ratio, rng),
                mlp_fc2: lin(dim * mlp_ratio, dim, rng),
            }
        };

        let params = MaeParams {
            patch_proj: lin(config.patch_len, config.enc_dim, &mut rng),
            cls_token: token(config.enc_dim, &mut rng),
            enc_blocks: (0..config.enc_depth)
                .map(|_| block(config.enc_dim, config.mlp_ratio, config.qkv_bias, &mut rng))
                .collect(),
            enc_norm: norm(config.enc_dim),
            enc_to_dec: lin(config.enc_dim, config.dec_dim, &mut rng),
            mask_token: token(config.dec_dim, &mut rng),
            dec_blocks: (0..config.dec_depth)
                .map(|_| block(config.dec_dim, config.mlp_ratio, config.qkv_bias, &mut rng))
                .collect(),
            dec_norm: norm(config.dec_dim),
            pred_head: lin(config.dec_dim, config.patch_len, &mut rng),
        };

        Ok(Mae1dModel {
            config: config.clone(),
            params,
            enc_pos: sincos_positions(num_patches, config.enc_dim)?,
            dec_pos: sincos_positions(num_patches, config.dec_dim)?,
        })
    }

    /// Closed-form learned-parameter count for a configuration.
    pub fn count_params(config: &ModelConfig) -> usize {
        let block = |d: usize, r: usize, qkv_bias: bool| {
            let norms = 4 * d;
            let attn = 4 * d * d + d + if qkv_bias { 3 * d } else { 0 };
            let mlp = d * (r * d) + r * d + (r * d) * d + d;
            norms + attn + mlp
        };
        let e = config.enc_dim;
        let d = config.dec_dim;
        let p = config.patch_len;
        (p * e + e)                                                    // patch projection
            + e                                                        // class token
            + config.enc_depth * block(e, config.mlp_ratio, config.qkv_bias)
            + 2 * e                                                    // final encoder norm
            + (e * d + d)                                              // encoder-to-decoder projection
            + d                                                        // mask token
            + config.dec_depth * block(d, config.mlp_ratio, config.qkv_bias)
            + 2 * d                                                    // final decoder norm
            + (d * p + p)                                              // prediction head
    }

    /// Actual parameter count, summed over the live tensors.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.params.for_each_named(&mut |_, t| total += t.numel());
        total
    }

    /// Parameters in canonical order as `(name, tensor)` pairs.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.params.for_each_named(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn enc_pos(&self) -> &Tensor {
        &self.enc_pos
    }

    pub fn dec_pos(&self) -> &Tensor {
        &self.dec_pos
    }

    /// Class-token embedding of a signal through a throwaway graph.
    /// With `plan = None` every patch is visible (inference mode).
    pub fn embed_cls(&self, signal: &[f64], plan: Option<MaskPlan>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = bind(&mut g, self, false);
        let enc = encode(&mut g, &bound, signal, plan)?;
        let cls = g.gather_rows(enc.tokens, &[0])?;
        Ok(g.value(cls).to_vec())
    }

    /// Full encode-decode reconstruction of a signal, flattened back to
    /// sample order.
    pub fn reconstruct(&self, signal: &[f64], plan: Option<MaskPlan>) -> Result<Vec<f64>> {
        cross_reconstruct(self, self, signal, plan)
    }
}

/// Reconstructs `signal` by encoding it with `encoder_model` and decoding
/// with `decoder_model`'s decoder (the two may be the same model).
pub fn cross_reconstruct(
    encoder_model: &Mae1dModel,
    decoder_model: &Mae1dModel,
    signal: &[f64],
    plan: Option<MaskPlan>,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let enc_bound = bind(&mut g, encoder_model, false);
    let enc = encode(&mut g, &enc_bound, signal, plan)?;
    let dec_bound = if std::ptr::eq(encoder_model, decoder_model) {
        enc_bound
    } else {
        bind(&mut g, decoder_model, false)
    };
    let pred = cross_decode(&mut g, &dec_bound, &enc)?;
    Ok(g.value(pred).to_vec())
}

/// A model's parameters and position tables inserted into a graph.
pub struct BoundModel<'m> {
    pub model: &'m Mae1dModel,
    pub params: MaeParams<NodeId>,
    pub enc_pos: NodeId,
    pub dec_pos: NodeId,
}

/// Inserts every parameter of `model` into the graph, as trainable leaves
/// when `trainable` (gradients will accumulate there) or constants otherwise.
pub fn bind<'m>(g: &mut Graph, model: &'m Mae1dModel, trainable: bool) -> BoundModel<'m> {
    let params = model
        .params
        .map(&mut |t| if trainable { g.param(t) } else { g.constant(t) });
    BoundModel {
        model,
        params,
        enc_pos: g.constant(&model.enc_pos),
        dec_pos: g.constant(&model.dec_pos),
    }
}

/// Builds a binding around node ids that were already inserted into the
/// graph, in canonical parameter order. `model` supplies the architecture
/// and position tables; its tensor values are ignored. Used by gradient
/// checks that perturb parameters externally.
pub fn bind_from_ids<'m>(g: &mut Graph, model: &'m Mae1dModel, ids: &[NodeId]) -> BoundModel<'m> {
    let mut slot = 0;
    let params = model.params.map(&mut |_| {
        let id = ids[slot];
        slot += 1;
        id
    });
    debug_assert_eq!(slot, ids.len());
    BoundModel {
        model,
        params,
        enc_pos: g.constant(&model.enc_pos),
        dec_pos: g.constant(&model.dec_pos),
    }
}

impl BoundModel<'_> {
    /// Trainable leaf ids in canonical parameter order, for gradient harvest.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        self.params.for_each_named(&mut |_, &id| ids.push(id));
        ids
    }
}

/// Encoder output: token matrix `[1 + n_visible, enc_dim]` with the class
/// token at row 0, plus the mask plan that produced it.
pub struct EncoderOutput {
    pub tokens: NodeId,
    pub plan: MaskPlan,
    pub enc_dim: usize,
    pub num_patches: usize,
    pub patch_len: usize,
}

fn transformer_block(
    g: &mut Graph,
    tokens: NodeId,
    block: &BlockParams<NodeId>,
    heads: usize,
) -> Result<NodeId> {
    let normed = g.layer_norm(tokens, block.norm1.gamma, block.norm1.beta, LN_EPS)?;
    let attn = AttentionNodes {
        wq: block.attn.wq,
        wk: block.attn.wk,
        wv: block.attn.wv,
        wo: block.attn.wo,
        bq: block.attn.bq,
        bk: block.attn.bk,
        bv: block.attn.bv,
        bo: block.attn.bo,
    };
    let attended = multi_head_attention(g, normed, &attn, heads)?;
    let tokens = g.add(tokens, attended)?;
    let normed = g.layer_norm(tokens, block.norm2.gamma, block.norm2.beta, LN_EPS)?;
    let hidden = linear(g, normed, block.mlp_fc1.weight, Some(block.mlp_fc1.bias))?;
    let hidden = g.gelu(hidden)?;
    let mlp_out = linear(g, hidden, block.mlp_fc2.weight, Some(block.mlp_fc2.bias))?;
    g.add(tokens, mlp_out)
}

/// Runs the encoder: patchify, project, add positions, drop masked patches,
/// prepend the class token, run the encoder blocks, final layer norm.
/// With no plan every patch is visible.
pub fn encode(
    g: &mut Graph,
    bound: &BoundModel,
    signal: &[f64],
    plan: Option<MaskPlan>,
) -> Result<EncoderOutput> {
    let config = &bound.model.config;
    if signal.len() != config.signal_len {
        return Err(NumError::ShapeMismatch {
            op: "encode",
            detail: format!("signal has {} samples, model expects {}", signal.len(), config.signal_len),
        });
    }
    let num_patches = config.num_patches();
    let plan = plan.unwrap_or_else(|| MaskPlan::full_visible(num_patches));
    if plan.len() != num_patches {
        return Err(NumError::ShapeMismatch {
            op: "encode",
            detail: format!("mask plan covers {} patches, model has {num_patches}", plan.len()),
        });
    }

    let patches = patchify(signal, config.patch_len)?;
    let patches = g.constant(&patches);
    let projected = linear(g, patches, bound.params.patch_proj.weight, Some(bound.params.patch_proj.bias))?;
    let positioned = g.add(projected, bound.enc_pos)?;
    let visible = g.gather_rows(positioned, plan.visible_idx())?;
    let mut tokens = g.concat_rows(&[bound.params.cls_token, visible])?;
    for block in &bound.params.enc_blocks {
        tokens = transformer_block(g, tokens, block, config.enc_heads)?;
    }
    let tokens = g.layer_norm(tokens, bound.params.enc_norm.gamma, bound.params.enc_norm.beta, LN_EPS)?;
    Ok(EncoderOutput {
        tokens,
        plan,
        enc_dim: config.enc_dim,
        num_patches,
        patch_len: config.patch_len,
    })
}

/// Runs the decoder on an encoder output: project tokens to the decoder
/// width, insert the learned mask token at masked slots, restore temporal
/// order, add decoder positions, run the decoder blocks, and predict
/// `patch_len` samples per patch. The class-token row is carried through the
/// blocks and dropped from the prediction.
pub fn decode(g: &mut Graph, bound: &BoundModel, enc: &EncoderOutput) -> Result<NodeId> {
    cross_decode(g, bound, enc)
}

/// [`decode`] with an explicitly foreign encoder output: decoder of model
/// `j` applied to the encoding produced by model `i`. The geometries must
/// agree (guaranteed when all channel models share one configuration).
pub fn cross_decode(g: &mut Graph, decoder: &BoundModel, enc: &EncoderOutput) -> Result<NodeId> {
    let config = &decoder.model.config;
    if enc.enc_dim != config.enc_dim
        || enc.num_patches != config.num_patches()
        || enc.patch_len != config.patch_len
    {
        return Err(NumError::ShapeMismatch {
            op: "cross_decode",
            detail: format!(
                "encoder output (dim {}, {} patches of {}) incompatible with decoder config (dim {}, {} patches of {})",
                enc.enc_dim,
                enc.num_patches,
                enc.patch_len,
                config.enc_dim,
                config.num_patches(),
                config.patch_len
            ),
        });
    }
    let n_visible = enc.plan.n_visible();
    let n_masked = enc.plan.n_masked();

    let projected = linear(g, enc.tokens, decoder.params.enc_to_dec.weight, Some(decoder.params.enc_to_dec.bias))?;
    let cls = g.gather_rows(projected, &[0])?;
    let visible_rows: Vec<usize> = (1..=n_visible).collect();
    let visible = g.gather_rows(projected, &visible_rows)?;
    // Visible tokens followed by mask tokens is exactly the plan's shuffled
    // order; gathering with restore_perm puts patches back in temporal order.
    let shuffled = if n_masked > 0 {
        let masks = g.repeat_row(decoder.params.mask_token, n_masked)?;
        g.concat_rows(&[visible, masks])?
    } else {
        visible
    };
    let restored = g.gather_rows(shuffled, enc.plan.restore_perm())?;
    let positioned = g.add(restored, decoder.dec_pos)?;
    let mut tokens = g.concat_rows(&[cls, positioned])?;
    for block in &decoder.params.dec_blocks {
        tokens = transformer_block(g, tokens, block, config.dec_heads)?;
    }
    let tokens = g.layer_norm(tokens, decoder.params.dec_norm.gamma, decoder.params.dec_norm.beta, LN_EPS)?;
    let pred = linear(g, tokens, decoder.params.pred_head.weight, Some(decoder.params.pred_head.bias))?;
    let patch_rows: Vec<usize> = (1..=enc.num_patches).collect();
    g.gather_rows(pred, &patch_rows)
}
