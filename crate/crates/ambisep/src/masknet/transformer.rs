//! Pre-layer-norm transformer layers with sinusoidal positional encoding.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{multihead_attention, MhaParams, NodeId, ParamRegistry, Tape, Tensor};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// Optional train-time dropout (p = 0 disables; the masknet default).
pub struct Dropout {
    pub p: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, Arc::new(mask))
    }
}

fn maybe_dropout(tape: &mut Tape, x: NodeId, dropout: &mut Option<Dropout>) -> Result<NodeId> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// Classic sinusoidal table, shape (seq, feat) flattened row-major.
pub fn positional_encoding(seq: usize, feat: usize) -> Arc<Vec<f64>> {
    let mut pe = vec![0.0; seq * feat];
    for s in 0..seq {
        for i in 0..feat.div_ceil(2) {
            let omega = 1.0 / 10000f64.powf(2.0 * i as f64 / feat as f64);
            let angle = s as f64 * omega;
            pe[s * feat + 2 * i] = angle.sin();
            if 2 * i + 1 < feat {
                pe[s * feat + 2 * i + 1] = angle.cos();
            }
        }
    }
    Arc::new(pe)
}

/// Trainable-parameter count of one layer: attention 4F²+4F,
/// feed-forward 2F·N_FF+N_FF+F, two layer norms 4F.
pub fn layer_param_count(features: usize, ff_dim: usize) -> usize {
    4 * features * features + 4 * features + 2 * features * ff_dim + ff_dim + features + 4 * features
}

/// Register one layer's parameters under `prefix.`.
pub fn init_transformer_layer<R: Rng>(
    prefix: &str,
    features: usize,
    ff_dim: usize,
    registry: &mut ParamRegistry,
    rng: &mut R,
) {
    let bound = 1.0 / (features as f64).sqrt();
    for name in ["wq", "wk", "wv", "wo"] {
        registry.insert(
            format!("{prefix}.attn.{name}"),
            Tensor::uniform(vec![features, features], bound, rng).trainable(),
        );
        registry.insert(
            format!("{prefix}.attn.b{}", &name[1..]),
            Tensor::zeros(vec![features]).trainable(),
        );
    }
    for norm in ["norm1", "norm2"] {
        registry.insert(format!("{prefix}.{norm}.gamma"), Tensor::full(vec![features], 1.0).trainable());
        registry.insert(format!("{prefix}.{norm}.beta"), Tensor::zeros(vec![features]).trainable());
    }
    registry.insert(
        format!("{prefix}.ff.w1"),
        Tensor::uniform(vec![features, ff_dim], bound, rng).trainable(),
    );
    registry.insert(format!("{prefix}.ff.b1"), Tensor::zeros(vec![ff_dim]).trainable());
    registry.insert(
        format!("{prefix}.ff.w2"),
        Tensor::uniform(vec![ff_dim, features], 1.0 / (ff_dim as f64).sqrt(), rng).trainable(),
    );
    registry.insert(format!("{prefix}.ff.b2"), Tensor::zeros(vec![features]).trainable());
}

/// One pre-norm layer on (batch, seq, feature):
/// h = x + MHA(LN1(x)); out = h + FF(LN2(h)).
pub fn transformer_layer(
    tape: &mut Tape,
    x: NodeId,
    prefix: &str,
    registry: &ParamRegistry,
    heads: usize,
    dropout: &mut Option<Dropout>,
) -> Result<NodeId> {
    let g1 = tape.param(&format!("{prefix}.norm1.gamma"), registry)?;
    let b1 = tape.param(&format!("{prefix}.norm1.beta"), registry)?;
    let normed = tape.layer_norm(x, g1, b1, LN_EPS)?;
    let mha = MhaParams {
        wq: tape.param(&format!("{prefix}.attn.wq"), registry)?,
        bq: tape.param(&format!("{prefix}.attn.bq"), registry)?,
        wk: tape.param(&format!("{prefix}.attn.wk"), registry)?,
        bk: tape.param(&format!("{prefix}.attn.bk"), registry)?,
        wv: tape.param(&format!("{prefix}.attn.wv"), registry)?,
        bv: tape.param(&format!("{prefix}.attn.bv"), registry)?,
        wo: tape.param(&format!("{prefix}.attn.wo"), registry)?,
        bo: tape.param(&format!("{prefix}.attn.bo"), registry)?,
    };
    let attn = multihead_attention(tape, normed, heads, &mha)?;
    let attn = maybe_dropout(tape, attn, dropout)?;
    let h = tape.add(x, attn)?;

    let g2 = tape.param(&format!("{prefix}.norm2.gamma"), registry)?;
    let b2 = tape.param(&format!("{prefix}.norm2.beta"), registry)?;
    let normed2 = tape.layer_norm(h, g2, b2, LN_EPS)?;
    let w1 = tape.param(&format!("{prefix}.ff.w1"), registry)?;
    let bf1 = tape.param(&format!("{prefix}.ff.b1"), registry)?;
    let w2 = tape.param(&format!("{prefix}.ff.w2"), registry)?;
    let bf2 = tape.param(&format!("{prefix}.ff.b2"), registry)?;
    let ff1 = tape.linear(normed2, w1, Some(bf1))?;
    let ff1 = tape.relu(ff1);
    let ff2 = tape.linear(ff1, w2, Some(bf2))?;
    let ff2 = maybe_dropout(tape, ff2, dropout)?;
    tape.add(h, ff2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn paper_layer_param_count() {
        assert_eq!(layer_param_count(256, 1024), 789_760);
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_transformer_layer("l", 256, 1024, &mut reg, &mut rng);
        assert_eq!(reg.total_count(), 789_760);
    }

    #[test]
    fn zeroed_residual_branches_are_identity() {
        // With all weights and norms' gains at zero the layer reduces to the
        // residual path alone.
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_transformer_layer("l", 8, 16, &mut reg, &mut rng);
        for name in ["l.attn.wo", "l.ff.w2"] {
            let t = reg.get_mut(name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 8).map(|i| (i as f64 * 0.05).sin()).collect();
        let x = tape.input(vec![2, 3, 8], data.clone());
        let y = transformer_layer(&mut tape, x, "l", &reg, 2, &mut None).unwrap();
        for (a, b) in tape.value(y).iter().zip(&data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn positional_encoding_reference_values() {
        let pe = positional_encoding(4, 6);
        assert_eq!(pe[0], 0.0); // sin(0)
        assert_eq!(pe[1], 1.0); // cos(0)
        let omega = 1.0 / 10000f64.powf(2.0 / 6.0);
        assert!((pe[6 + 2] - omega.sin()).abs() < 1e-15); // s=1, i=1
    }

    #[test]
    fn dropout_zero_is_identity_and_positive_p_masks() {
        let mut tape = Tape::new();
        let x = tape.input(vec![64], vec![1.0; 64]);
        let mut off = Some(Dropout { p: 0.0, rng: ChaCha8Rng::seed_from_u64(1) });
        let y = maybe_dropout(&mut tape, x, &mut off).unwrap();
        assert_eq!(y, x);
        let mut on = Some(Dropout { p: 0.5, rng: ChaCha8Rng::seed_from_u64(1) });
        let z = maybe_dropout(&mut tape, x, &mut on).unwrap();
        let zeros = tape.value(z).iter().filter(|v| **v == 0.0).count();
        assert!(zeros > 10 && zeros < 54);
        // Survivors are rescaled by 1/keep.
        assert!(tape.value(z).iter().all(|v| *v == 0.0 || (*v - 2.0).abs() < 1e-15));
    }
}
