//! Reverberant mixture construction and per-epoch source–RIR remixing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ambisonics::AmbisonicSignal;
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};

use super::AmbisonicRir;

/// Mixtures are capped at this many seconds.
pub const MAX_MIXTURE_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Default)]
pub struct MixtureMeta {
    pub source_ids: Vec<String>,
    pub room_id: String,
    pub seed: u64,
}

/// One reverberant example: the mixture and the per-source Ambisonic images
/// it is the exact sum of.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub mixture: AmbisonicSignal,
    pub targets: Vec<AmbisonicSignal>,
    pub meta: MixtureMeta,
}

/// Convolve each mono source with its Ambisonic RIR and mix such that the
/// omni-channel power ratios match the dry source power ratios (first
/// source's gain fixed to 1). All signals are trimmed to the shortest
/// convolved length, capped at [`MAX_MIXTURE_SECONDS`].
pub fn make_mixture(speech: &[Vec<f64>], rirs: &[AmbisonicRir]) -> Result<MixtureExample> {
    if speech.len() < 2 || speech.len() != rirs.len() {
        return Err(Error::Config(format!(
            "need J >= 2 sources with one RIR each, got {} speech / {} RIRs",
            speech.len(),
            rirs.len()
        )));
    }
    let fs = rirs[0].sample_rate;
    if rirs.iter().any(|r| r.sample_rate != fs) {
        return Err(Error::Config("RIR sample rates differ".into()));
    }
    let channels = rirs[0].channels();
    if rirs.iter().any(|r| r.channels() != channels) {
        return Err(Error::Config("RIR channel counts differ".into()));
    }

    let speech_powers: Vec<f64> = speech
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>())
        .collect();
    for (j, p) in speech_powers.iter().enumerate() {
        if *p <= 0.0 {
            return Err(Error::ZeroPower(format!("source {j} is silent")));
        }
    }

    // Reverberant images, then common trim length.
    let mut images: Vec<AmbisonicSignal> = Vec::with_capacity(speech.len());
    let mut min_len = usize::MAX;
    for (s, rir) in speech.iter().zip(rirs) {
        let conv_len = s.len() + rir.len() - 1;
        min_len = min_len.min(conv_len);
        let mut img = AmbisonicSignal::zeros(channels, conv_len, fs);
        for ch in 0..channels {
            let c = fft_convolve(s, rir.channel(ch));
            img.channel_mut(ch).copy_from_slice(&c);
        }
        images.push(img);
    }
    let cap = (MAX_MIXTURE_SECONDS * fs as f64).round() as usize;
    let len = min_len.min(cap);

    let trimmed: Vec<AmbisonicSignal> = images
        .iter()
        .map(|img| {
            let mut t = AmbisonicSignal::zeros(channels, len, fs);
            for ch in 0..channels {
                t.channel_mut(ch).copy_from_slice(&img.channel(ch)[..len]);
            }
            t
        })
        .collect();

    // Gains restoring the dry power ratios on the omni channel.
    let omni_powers: Vec<f64> = trimmed
        .iter()
        .map(|t| t.channel(0).iter().map(|v| v * v).sum::<f64>())
        .collect();
    for (j, p) in omni_powers.iter().enumerate() {
        if *p <= 0.0 {
            return Err(Error::ZeroPower(format!("image {j} has a silent omni channel")));
        }
    }
    let mut targets = Vec::with_capacity(trimmed.len());
    for (j, img) in trimmed.into_iter().enumerate() {
        let gain = if j == 0 {
            1.0
        } else {
            ((speech_powers[j] / speech_powers[0]) * (omni_powers[0] / omni_powers[j])).sqrt()
        };
        let mut t = img;
        for v in t.data_mut() {
            *v *= gain;
        }
        targets.push(t);
    }

    let mut mixture = AmbisonicSignal::zeros(channels, len, fs);
    for t in &targets {
        for (m, v) in mixture.data_mut().iter_mut().zip(t.data()) {
            *m += v;
        }
    }

    Ok(MixtureExample { mixture, targets, meta: MixtureMeta::default() })
}

/// Association of one source pair with a room and two of its RIRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RirAssociation {
    pub room: usize,
    pub rir_a: usize,
    pub rir_b: usize,
}

/// Deterministic per-epoch source–RIR association: for each source pair,
/// pick one room and two distinct RIRs from it.
pub fn epoch_remix(
    pairing_seed: u64,
    epoch_index: usize,
    n_pairs: usize,
    rirs_per_room: &[usize],
) -> Vec<RirAssociation> {
    assert!(!rirs_per_room.is_empty(), "empty RIR pool");
    let mut rng = ChaCha8Rng::seed_from_u64(pairing_seed);
    rng.set_stream(epoch_index as u64 + 1);
    (0..n_pairs)
        .map(|_| {
            let room = rng.gen_range(0..rirs_per_room.len());
            let count = rirs_per_room[room];
            assert!(count >= 2, "room {room} has fewer than 2 RIRs");
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(&mut rng);
            RirAssociation { room, rir_a: idx[0], rir_b: idx[1] }
        })
        .collect()
}
