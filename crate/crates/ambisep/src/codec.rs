//! Learned time-feature encoder/decoder shared across all PWD channels.
//!
//! The encoder is a strided 1-D convolution with F filters of length W and
//! stride H followed by a ReLU; the decoder is the matching transposed
//! convolution. Neither has bias terms.

use rand::Rng;

use crate::autodiff::{kernels, NodeId, ParamRegistry, Tape, Tensor};
use crate::error::{Error, Result};

pub const ENCODER_PARAM: &str = "codec.encoder.weight";
pub const DECODER_PARAM: &str = "codec.decoder.weight";

/// Filterbank geometry (F, W, H).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodecConfig {
    /// Number of filters F.
    pub filters: usize,
    /// Filter length W in samples.
    pub kernel: usize,
    /// Stride H in samples.
    pub stride: usize,
}

impl CodecConfig {
    /// Paper-scale defaults: 256 filters of 32 samples, stride 16.
    pub fn paper() -> Self {
        CodecConfig { filters: 256, kernel: 32, stride: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!("codec dims must be positive: {self:?}")));
        }
        if self.stride > self.kernel {
            return Err(Error::Config(format!(
                "codec stride {} exceeds kernel {}",
                self.stride, self.kernel
            )));
        }
        Ok(())
    }

    /// Frame count T = (N − W)/H + 1 for a length-N signal.
    pub fn frames(&self, n: usize) -> Result<usize> {
        if n < self.kernel {
            return Err(Error::ShapeMismatch {
                op: "tf_encode",
                detail: format!("signal length {n} < kernel {}", self.kernel),
            });
        }
        Ok((n - self.kernel) / self.stride + 1)
    }

    /// Trainable parameter count: F·W for each of encoder and decoder.
    pub fn param_count(&self) -> usize {
        2 * self.filters * self.kernel
    }
}

/// Create the two filterbanks, uniform in ±1/√W.
pub fn init_codec<R: Rng>(cfg: &CodecConfig, registry: &mut ParamRegistry, rng: &mut R) {
    let bound = 1.0 / (cfg.kernel as f64).sqrt();
    let shape = vec![cfg.filters, cfg.kernel];
    registry.insert(ENCODER_PARAM, Tensor::uniform(shape.clone(), bound, rng).trainable());
    registry.insert(DECODER_PARAM, Tensor::uniform(shape, bound, rng).trainable());
}

/// E{x}: per-channel conv1d with the shared filterbank, then ReLU.
/// x: (channels, N) -> (channels, F, T).
pub fn tf_encode(tape: &mut Tape, x: NodeId, registry: &ParamRegistry, cfg: &CodecConfig) -> Result<NodeId> {
    let w = tape.param(ENCODER_PARAM, registry)?;
    let conv = tape.conv1d(x, w, cfg.stride)?;
    Ok(tape.relu(conv))
}

/// D{m}: per-channel transposed convolution back to `n_out` samples.
/// m: (channels, F, T) -> (channels, n_out).
pub fn tf_decode(tape: &mut Tape, m: NodeId, registry: &ParamRegistry, cfg: &CodecConfig, n_out: usize) -> Result<NodeId> {
    let w = tape.param(DECODER_PARAM, registry)?;
    tape.conv1d_transpose(m, w, cfg.stride, n_out)
}

/// Tape-free encoder evaluation, used where the features must stay outside
/// the gradient graph (oracle mask computation).
pub fn plain_encode(x: &[f64], channels: usize, registry: &ParamRegistry, cfg: &CodecConfig) -> Result<Vec<f64>> {
    let n = x.len() / channels;
    let t = cfg.frames(n)?;
    let w = registry
        .get(ENCODER_PARAM)
        .ok_or_else(|| Error::Config("codec not initialized".into()))?;
    let mut out = vec![0.0; channels * cfg.filters * t];
    kernels::conv1d(x, w.data(), &mut out, channels, n, cfg.filters, cfg.kernel, cfg.stride);
    for v in out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &CodecConfig) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_codec(cfg, &mut reg, &mut rng);
        reg
    }

    #[test]
    fn paper_param_count_is_16384() {
        assert_eq!(CodecConfig::paper().param_count(), 16384);
        assert_eq!(CodecConfig { filters: 4, kernel: 2, stride: 1 }.param_count(), 16);
        let reg = setup(&CodecConfig::paper());
        assert_eq!(reg.total_count(), 16384);
        assert_eq!(reg.count_with_prefix("codec.encoder"), 8192);
    }

    #[test]
    fn frame_count_formula() {
        let cfg = CodecConfig { filters: 8, kernel: 32, stride: 16 };
        assert_eq!(cfg.frames(160).unwrap(), 9);
        assert!(cfg.frames(16).is_err());
    }

    #[test]
    fn zero_signal_encodes_to_zero() {
        let cfg = CodecConfig { filters: 8, kernel: 16, stride: 8 };
        let reg = setup(&cfg);
        let mut tape = Tape::new();
        let x = tape.input(vec![4, 64], vec![0.0; 4 * 64]);
        let e = tf_encode(&mut tape, x, &reg, &cfg).unwrap();
        assert_eq!(tape.shape(e), &[4, 8, 7]);
        assert!(tape.value(e).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encoding_is_nonnegative() {
        let cfg = CodecConfig { filters: 8, kernel: 16, stride: 8 };
        let reg = setup(&cfg);
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..4 * 64).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = tape.input(vec![4, 64], data);
        let e = tf_encode(&mut tape, x, &reg, &cfg).unwrap();
        assert!(tape.value(e).iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn channel_permutation_commutes_with_codec() {
        // Shared weights: permuting input channels permutes the output.
        let cfg = CodecConfig { filters: 6, kernel: 8, stride: 4 };
        let reg = setup(&cfg);
        let a: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).cos()).collect();
        let b: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).sin()).collect();

        let mut t1 = Tape::new();
        let x1 = t1.input(vec![2, 32], [a.clone(), b.clone()].concat());
        let e1 = tf_encode(&mut t1, x1, &reg, &cfg).unwrap();
        let d1 = tf_decode(&mut t1, e1, &reg, &cfg, 32).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.input(vec![2, 32], [b, a].concat());
        let e2 = tf_encode(&mut t2, x2, &reg, &cfg).unwrap();
        let d2 = tf_decode(&mut t2, e2, &reg, &cfg, 32).unwrap();

        let per_ch = 6 * 7;
        assert_eq!(tape_slice(&t1, e1, 0, per_ch), tape_slice(&t2, e2, per_ch, per_ch));
        assert_eq!(tape_slice(&t1, d1, 0, 32), tape_slice(&t2, d2, 32, 32));
    }

    fn tape_slice(tape: &Tape, id: NodeId, start: usize, len: usize) -> Vec<f64> {
        tape.value(id)[start..start + len].to_vec()
    }

    #[test]
    fn decode_of_one_hot_is_shifted_filter() {
        let cfg = CodecConfig { filters: 3, kernel: 6, stride: 4 };
        let reg = setup(&cfg);
        let mut tape = Tape::new();
        let mut feat = vec![0.0; 3 * 4];
        feat[1 * 4 + 2] = 1.0; // filter 1, frame 2
        let m = tape.input(vec![1, 3, 4], feat);
        let d = tf_decode(&mut tape, m, &reg, &cfg, 18).unwrap();
        let w = reg.get(DECODER_PARAM).unwrap();
        let out = tape.value(d);
        for i in 0..18 {
            let want = if (8..14).contains(&i) { w.data()[6 + (i - 8)] } else { 0.0 };
            assert!((out[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn plain_encode_matches_tape_encode() {
        let cfg = CodecConfig { filters: 8, kernel: 16, stride: 8 };
        let reg = setup(&cfg);
        let data: Vec<f64> = (0..2 * 48).map(|i| (i as f64 * 0.17).sin()).collect();
        let mut tape = Tape::new();
        let x = tape.input(vec![2, 48], data.clone());
        let e = tf_encode(&mut tape, x, &reg, &cfg).unwrap();
        let plain = plain_encode(&data, 2, &reg, &cfg).unwrap();
        assert_eq!(tape.value(e), plain.as_slice());
    }
}
