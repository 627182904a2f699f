//! Triple-path transformer mask estimation network.
//!
//! The TF-encoded PWD mixture (Q × F × T) is layer normalized per PWD
//! channel, projected, chopped into 50%-overlap chunks and processed by R
//! repeats of inter-channel / intra-chunk / inter-chunk transformer blocks.
//! A PReLU, an affine projection to J·F features, overlap-add de-chunking,
//! a tanh·sigmoid output gate and a final ReLU-gated linear produce one
//! nonnegative mask per source and PWD channel.

mod transformer;

pub use transformer::{
    init_transformer_layer, layer_param_count, positional_encoding, transformer_layer, Dropout, LN_EPS,
};

use rand::Rng;

use crate::autodiff::{chunk_count, NodeId, ParamRegistry, Tape, Tensor};
use crate::error::{Error, Result};

/// Axis a transformer block attends over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BlockAxis {
    InterChannel,
    IntraChunk,
    InterChunk,
}

impl BlockAxis {
    fn name(self) -> &'static str {
        match self {
            BlockAxis::InterChannel => "interchannel",
            BlockAxis::IntraChunk => "intrachunk",
            BlockAxis::InterChunk => "interchunk",
        }
    }
}

/// Position of the inter-channel block within each repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BlockOrder {
    IChanFirst,
    IChanLast,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MasknetConfig {
    /// Feature dimension F.
    pub features: usize,
    /// Chunk length C in frames (even; 50% overlap).
    pub chunk: usize,
    /// Repeats R of the block sequence.
    pub repeats: usize,
    /// Transformer layers N_L per block.
    pub layers_per_block: usize,
    /// Positional feed-forward dimension N_FF.
    pub ff_dim: usize,
    pub heads: usize,
    /// Number of sources J.
    pub sources: usize,
    /// Number of PWD channels Q.
    pub channels: usize,
    pub block_order: BlockOrder,
    /// When false the inter-channel block is dropped entirely (the
    /// single-channel SepFormer used by the Omni/PWD baselines).
    pub interchannel: bool,
    /// Train-time dropout probability inside transformer layers.
    pub dropout: f64,
}

impl MasknetConfig {
    /// Paper-scale dimensions (Table-2 style) for a given (N_L, R) split.
    pub fn paper(layers_per_block: usize, repeats: usize) -> Self {
        MasknetConfig {
            features: 256,
            chunk: 250,
            repeats,
            layers_per_block,
            ff_dim: 1024,
            heads: 8,
            sources: 2,
            channels: 4,
            block_order: BlockOrder::IChanFirst,
            interchannel: true,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk == 0 || self.chunk % 2 != 0 {
            return Err(Error::Config(format!("chunk length {} must be even", self.chunk)));
        }
        if self.features == 0 || self.heads == 0 || self.features % self.heads != 0 {
            return Err(Error::Config(format!(
                "features {} must be divisible by heads {}",
                self.features, self.heads
            )));
        }
        if self.sources == 0 || self.channels == 0 || self.repeats == 0 || self.layers_per_block == 0 {
            return Err(Error::Config("masknet dims must be positive".into()));
        }
        Ok(())
    }

    /// Block sequence of one repeat.
    pub fn paths(&self) -> Vec<BlockAxis> {
        if !self.interchannel {
            return vec![BlockAxis::IntraChunk, BlockAxis::InterChunk];
        }
        match self.block_order {
            BlockOrder::IChanFirst => vec![BlockAxis::InterChannel, BlockAxis::IntraChunk, BlockAxis::InterChunk],
            BlockOrder::IChanLast => vec![BlockAxis::IntraChunk, BlockAxis::InterChunk, BlockAxis::InterChannel],
        }
    }

    /// Trainable parameter count of the masknet alone.
    pub fn param_count(&self) -> usize {
        let f = self.features;
        let layers = self.paths().len() * self.repeats * self.layers_per_block;
        let transformer = layers * layer_param_count(f, self.ff_dim);
        let input = 2 * f + f * f; // norm + projection
        let mask_proj = f * self.sources * f + self.sources * f;
        let gates = 2 * (f * f + f);
        let out = f * f;
        transformer + input + mask_proj + gates + out + 1 // + PReLU slope
    }
}

/// Register all masknet parameters under `prefix.`.
pub fn init_masknet<R: Rng>(cfg: &MasknetConfig, prefix: &str, registry: &mut ParamRegistry, rng: &mut R) {
    let f = cfg.features;
    let bound = 1.0 / (f as f64).sqrt();
    registry.insert(format!("{prefix}.input_norm.gamma"), Tensor::full(vec![f], 1.0).trainable());
    registry.insert(format!("{prefix}.input_norm.beta"), Tensor::zeros(vec![f]).trainable());
    registry.insert(
        format!("{prefix}.input_proj.weight"),
        Tensor::uniform(vec![f, f], bound, rng).trainable(),
    );
    for r in 0..cfg.repeats {
        for axis in cfg.paths() {
            for l in 0..cfg.layers_per_block {
                let lp = format!("{prefix}.repeat{r}.{}.layer{l}", axis.name());
                init_transformer_layer(&lp, f, cfg.ff_dim, registry, rng);
            }
        }
    }
    registry.insert(format!("{prefix}.prelu.slope"), Tensor::new(vec![1], vec![0.25]).trainable());
    registry.insert(
        format!("{prefix}.mask_proj.weight"),
        Tensor::uniform(vec![f, cfg.sources * f], bound, rng).trainable(),
    );
    registry.insert(format!("{prefix}.mask_proj.bias"), Tensor::zeros(vec![cfg.sources * f]).trainable());
    for gate in ["gate_tanh", "gate_sigmoid"] {
        registry.insert(
            format!("{prefix}.{gate}.weight"),
            Tensor::uniform(vec![f, f], bound, rng).trainable(),
        );
        registry.insert(format!("{prefix}.{gate}.bias"), Tensor::zeros(vec![f]).trainable());
    }
    registry.insert(
        format!("{prefix}.output_proj.weight"),
        Tensor::uniform(vec![f, f], bound, rng).trainable(),
    );
}

/// One transformer block: permute the chunked tensor (Q, F, C, N_C) to
/// (batch, sequence, feature) for the given axis, add positional encoding,
/// run N_L layers, permute back.
pub fn transformer_block(
    tape: &mut Tape,
    x: NodeId,
    axis: BlockAxis,
    prefix: &str,
    registry: &ParamRegistry,
    cfg: &MasknetConfig,
    dropout: &mut Option<Dropout>,
) -> Result<NodeId> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "transformer_block",
            detail: format!("expected (Q, F, C, N_C), got {s:?}"),
        });
    }
    let (q, f, c, nc) = (s[0], s[1], s[2], s[3]);
    let (perm_in, batch, seq, perm_out) = match axis {
        BlockAxis::InterChannel => (vec![2, 3, 0, 1], c * nc, q, vec![2, 3, 0, 1]),
        BlockAxis::IntraChunk => (vec![0, 3, 2, 1], q * nc, c, vec![0, 3, 2, 1]),
        BlockAxis::InterChunk => (vec![0, 2, 3, 1], q * c, nc, vec![0, 3, 1, 2]),
    };
    let p = tape.permute(x, &perm_in)?;
    let mid_shape = tape.shape(p).to_vec();
    let mut y = tape.reshape(p, vec![batch, seq, f])?;
    y = tape.add_const(y, positional_encoding(seq, f))?;
    for l in 0..cfg.layers_per_block {
        let lp = format!("{prefix}.layer{l}");
        y = transformer_layer(tape, y, &lp, registry, cfg.heads, dropout)?;
    }
    let back = tape.reshape(y, mid_shape)?;
    tape.permute(back, &perm_out)
}

/// Full mask estimation: (Q, F, T) features in, (J, Q, F, T) nonnegative
/// masks out.
pub fn masknet_forward(
    tape: &mut Tape,
    features: NodeId,
    prefix: &str,
    registry: &ParamRegistry,
    cfg: &MasknetConfig,
    dropout: &mut Option<Dropout>,
) -> Result<NodeId> {
    cfg.validate()?;
    let s = tape.shape(features).to_vec();
    if s.len() != 3 || s[0] != cfg.channels || s[1] != cfg.features {
        return Err(Error::ShapeMismatch {
            op: "masknet_forward",
            detail: format!("expected ({}, {}, T), got {s:?}", cfg.channels, cfg.features),
        });
    }
    let (q, f, t) = (s[0], s[1], s[2]);
    let (j, c) = (cfg.sources, cfg.chunk);
    let hop = c / 2;

    // Per-channel layer norm over the feature axis, then a linear layer.
    let x = tape.permute(features, &[0, 2, 1])?; // (Q, T, F)
    let gamma = tape.param(&format!("{prefix}.input_norm.gamma"), registry)?;
    let beta = tape.param(&format!("{prefix}.input_norm.beta"), registry)?;
    let x = tape.layer_norm(x, gamma, beta, LN_EPS)?;
    let wproj = tape.param(&format!("{prefix}.input_proj.weight"), registry)?;
    let x = tape.linear(x, wproj, None)?;
    let x = tape.permute(x, &[0, 2, 1])?; // (Q, F, T)

    // Chunk and run the triple-path repeats.
    let mut chunked = tape.chunk(x, c, hop)?; // (Q, F, C, N_C)
    for r in 0..cfg.repeats {
        for axis in cfg.paths() {
            let bp = format!("{prefix}.repeat{r}.{}", axis.name());
            chunked = transformer_block(tape, chunked, axis, &bp, registry, cfg, dropout)?;
        }
    }

    // PReLU, then the affine projection to J·F mask features.
    let slope = tape.param(&format!("{prefix}.prelu.slope"), registry)?;
    let y = tape.prelu(chunked, slope)?;
    let y = tape.permute(y, &[0, 2, 3, 1])?; // (Q, C, N_C, F)
    let wm = tape.param(&format!("{prefix}.mask_proj.weight"), registry)?;
    let bm = tape.param(&format!("{prefix}.mask_proj.bias"), registry)?;
    let y = tape.linear(y, wm, Some(bm))?; // (Q, C, N_C, J·F)
    let nc = chunk_count(t, c, hop);
    let y = tape.reshape(y, vec![q, c, nc, j, f])?;
    let y = tape.permute(y, &[3, 0, 4, 1, 2])?; // (J, Q, F, C, N_C)

    // De-chunk by compensated overlap-add back to T frames.
    let y = tape.overlap_add(y, hop, t)?; // (J, Q, F, T)

    // Output gate and the final mask projection, along the feature axis.
    let y = tape.permute(y, &[0, 1, 3, 2])?; // (J, Q, T, F)
    let wt = tape.param(&format!("{prefix}.gate_tanh.weight"), registry)?;
    let bt = tape.param(&format!("{prefix}.gate_tanh.bias"), registry)?;
    let ws = tape.param(&format!("{prefix}.gate_sigmoid.weight"), registry)?;
    let bs = tape.param(&format!("{prefix}.gate_sigmoid.bias"), registry)?;
    let th = tape.linear(y, wt, Some(bt))?;
    let th = tape.tanh(th);
    let sg = tape.linear(y, ws, Some(bs))?;
    let sg = tape.sigmoid(sg);
    let gated = tape.mul(th, sg)?;
    let wout = tape.param(&format!("{prefix}.output_proj.weight"), registry)?;
    let out = tape.linear(gated, wout, None)?;
    let out = tape.relu(out);
    tape.permute(out, &[0, 1, 3, 2]) // (J, Q, F, T)
}

/// Single transformer layer resolving mask permutations across PWD
/// channels: the time axis is chopped into non-overlapping blocks of
/// `features` samples which act as the feature dimension, with J·Q as the
/// sequence.
pub fn post_transformer(
    tape: &mut Tape,
    x: NodeId,
    prefix: &str,
    registry: &ParamRegistry,
    cfg: &MasknetConfig,
    dropout: &mut Option<Dropout>,
) -> Result<NodeId> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "post_transformer",
            detail: format!("expected (J, Q, N), got {s:?}"),
        });
    }
    let (j, q, n) = (s[0], s[1], s[2]);
    let f = cfg.features;
    // Non-overlapping blocks of length F; the tail is zero padded and
    // trimmed again after the inverse.
    let blocks = tape.chunk(x, f, f)?; // (J, Q, F, N_P)
    let np = *tape.shape(blocks).last().unwrap();
    let p = tape.permute(blocks, &[3, 0, 1, 2])?; // (N_P, J, Q, F)
    let y = tape.reshape(p, vec![np, j * q, f])?;
    let y = tape.add_const(y, positional_encoding(j * q, f))?;
    let y = transformer_layer(tape, y, &format!("{prefix}.layer0"), registry, cfg.heads, dropout)?;
    let y = tape.reshape(y, vec![np, j, q, f])?;
    let y = tape.permute(y, &[1, 2, 3, 0])?; // (J, Q, F, N_P)
    tape.overlap_add(y, f, n)
}
