//! Self-contained synthetic speech: filtered noise bursts with a distinct
//! spectral envelope per "speaker", used by tests and toy datasets in place
//! of a real corpus.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Spectral identity of one synthetic speaker.
#[derive(Debug, Clone)]
pub struct SpeakerProfile {
    /// (center Hz, resonance Q) of each formant-like band.
    pub bands: Vec<(f64, f64)>,
    /// Mean syllable rate in Hz.
    pub syllable_rate: f64,
    /// Linear gain of the broadband noise floor under the bands.
    pub floor_gain: f64,
}

/// Built-in speaker classes; `class` wraps around.
pub fn speaker_profile(class: usize) -> SpeakerProfile {
    match class % 2 {
        0 => SpeakerProfile {
            bands: vec![(320.0, 7.0), (850.0, 9.0), (1650.0, 10.0)],
            syllable_rate: 3.6,
            floor_gain: 0.06,
        },
        _ => SpeakerProfile {
            bands: vec![(560.0, 7.0), (1350.0, 9.0), (2700.0, 10.0)],
            syllable_rate: 4.4,
            floor_gain: 0.06,
        },
    }
}

struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    /// Constant-skirt bandpass.
    fn bandpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        // Transposed direct form II.
        let y = self.b0 * x + self.z1;
        self.z1 = self.b1 * x - self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Generate `len` samples of synthetic babble, deterministic per seed.
/// The output is RMS-normalized to 0.1.
pub fn synth_speech(profile: &SpeakerProfile, len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyquist = fs / 2.0;
    let mut filters: Vec<Biquad> = profile
        .bands
        .iter()
        .filter(|(f0, _)| *f0 < 0.45 * fs)
        .map(|(f0, q)| Biquad::bandpass((*f0).min(0.9 * nyquist), *q, fs))
        .collect();

    // Syllable envelope: piecewise bursts with raised-cosine edges.
    let mut env = vec![0.0; len];
    let ramp = (0.03 * fs) as usize;
    let mut pos = 0usize;
    while pos < len {
        let syl_len = (fs / profile.syllable_rate * rng.gen_range(0.6..1.4)) as usize;
        let burst = (syl_len as f64 * rng.gen_range(0.55..0.85)) as usize;
        let amp = rng.gen_range(0.4..1.0);
        for i in 0..burst.min(len - pos) {
            let a = if i < ramp {
                0.5 * (1.0 - (std::f64::consts::PI * (ramp - i) as f64 / ramp as f64).cos())
            } else if burst - i < ramp {
                0.5 * (1.0 - (std::f64::consts::PI * (burst - i) as f64 / ramp as f64).cos())
            } else {
                1.0
            };
            env[pos + i] = amp * a;
        }
        pos += syl_len.max(1);
    }

    let mut out = vec![0.0; len];
    for n in 0..len {
        let excitation: f64 = rng.gen_range(-1.0..1.0);
        let mut v = profile.floor_gain * excitation;
        for f in filters.iter_mut() {
            v += f.process(excitation);
        }
        out[n] = v * env[n];
    }

    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = 0.1 / rms;
        for v in out.iter_mut() {
            *v *= g;
        }
    }
    out
}
