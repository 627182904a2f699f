//! Shoebox image-source simulation of Ambisonic room impulse responses and
//! reverberant multi-speaker mixture construction.

mod babble;
mod ism;
mod mixture;

pub use babble::{speaker_profile, synth_speech, SpeakerProfile};
pub use ism::{enumerate_images, simulate_rir, ImageSource};
pub use mixture::{epoch_remix, make_mixture, MixtureExample, MixtureMeta, RirAssociation};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ambisonics::AmbisonicSignal;
use crate::error::{Error, Result};

/// A simulated room impulse response in the Ambisonic domain
/// (length round(t60/2 · fs) samples).
pub type AmbisonicRir = AmbisonicSignal;

/// Shoebox room plus the measurement setup inside it.
#[derive(Debug, Clone)]
pub struct RoomSpec {
    /// (Lx, Ly, Lz) in meters.
    pub dims: [f64; 3],
    /// Reverberation time in seconds.
    pub t60: f64,
    /// Array center in meters.
    pub array_pos: [f64; 3],
    pub sample_rate: u32,
    /// Meters per second.
    pub speed_of_sound: f64,
    /// Maximum total reflection count of a contributing image.
    pub max_image_order: usize,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t60 <= 0.0 || !self.t60.is_finite() {
            return Err(Error::Geometry(format!("t60 must be positive, got {}", self.t60)));
        }
        if self.dims.iter().any(|d| *d <= 0.0) {
            return Err(Error::Geometry(format!("room dims must be positive, got {:?}", self.dims)));
        }
        for axis in 0..3 {
            if self.array_pos[axis] <= 0.0 || self.array_pos[axis] >= self.dims[axis] {
                return Err(Error::Geometry(format!(
                    "array position {:?} outside room {:?}",
                    self.array_pos, self.dims
                )));
            }
        }
        Ok(())
    }

    /// RIR length in samples: round(t60/2 · fs).
    pub fn rir_len(&self) -> usize {
        (self.t60 / 2.0 * self.sample_rate as f64).round() as usize
    }

    /// Uniform frequency-independent wall reflection coefficient from t60
    /// by Eyring's formula.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        let [lx, ly, lz] = self.dims;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        let alpha = 1.0 - (-0.161 * volume / (surface * self.t60)).exp();
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Geometry(format!(
                "t60 {} yields absorption {alpha} outside (0, 1)",
                self.t60
            )));
        }
        let beta = (1.0 - alpha).sqrt();
        if beta >= 1.0 {
            return Err(Error::Geometry(format!("t60 {} implies reflection {beta} >= 1", self.t60)));
        }
        Ok(beta)
    }
}

/// A source position inside the room.
#[derive(Debug, Clone, Copy)]
pub struct SourcePlacement {
    pub position: [f64; 3],
}

/// Geometry ranges used by the dataset sampler.
const ROOM_XY: (f64, f64) = (5.0, 10.0);
const ROOM_Z: (f64, f64) = (3.0, 4.0);
const T60_RANGE: (f64, f64) = (0.2, 0.5);
const ARRAY_WALL_MARGIN: f64 = 1.0;
const SOURCE_WALL_MARGIN: f64 = 0.5;
const SOURCE_DIST: (f64, f64) = (0.5, 1.5);

/// Draw a random room and `n_sources` source placements satisfying every
/// geometric constraint, deterministically per seed.
pub fn sample_room_and_sources(seed: u64, n_sources: usize, sample_rate: u32) -> (RoomSpec, Vec<SourcePlacement>) {
    sample_room_and_sources_in(seed, n_sources, sample_rate, T60_RANGE)
}

/// As [`sample_room_and_sources`] but with a caller-chosen t60 range.
pub fn sample_room_and_sources_in(
    seed: u64,
    n_sources: usize,
    sample_rate: u32,
    t60_range: (f64, f64),
) -> (RoomSpec, Vec<SourcePlacement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        rng.gen_range(ROOM_XY.0..=ROOM_XY.1),
        rng.gen_range(ROOM_XY.0..=ROOM_XY.1),
        rng.gen_range(ROOM_Z.0..=ROOM_Z.1),
    ];
    let t60 = if t60_range.0 == t60_range.1 {
        t60_range.0
    } else {
        rng.gen_range(t60_range.0..=t60_range.1)
    };
    let array_pos = [
        rng.gen_range(ARRAY_WALL_MARGIN..=dims[0] - ARRAY_WALL_MARGIN),
        rng.gen_range(ARRAY_WALL_MARGIN..=dims[1] - ARRAY_WALL_MARGIN),
        rng.gen_range(ARRAY_WALL_MARGIN..=dims[2] - ARRAY_WALL_MARGIN),
    ];
    let room = RoomSpec {
        dims,
        t60,
        array_pos,
        sample_rate,
        speed_of_sound: 343.0,
        max_image_order: 30,
    };

    let mut sources = Vec::with_capacity(n_sources);
    while sources.len() < n_sources {
        // Rejection sample a point in the distance shell around the array.
        let dir = random_unit_vector(&mut rng);
        let dist = rng.gen_range(SOURCE_DIST.0..=SOURCE_DIST.1);
        let pos = [
            array_pos[0] + dist * dir[0],
            array_pos[1] + dist * dir[1],
            array_pos[2] + dist * dir[2],
        ];
        let inside = (0..3).all(|i| pos[i] >= SOURCE_WALL_MARGIN && pos[i] <= dims[i] - SOURCE_WALL_MARGIN);
        if inside {
            sources.push(SourcePlacement { position: pos });
        }
    }
    (room, sources)
}

fn random_unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        if norm2 > 1e-6 && norm2 <= 1.0 {
            let n = norm2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>().sqrt()
    }

    #[test]
    fn sampled_geometry_respects_constraints() {
        for seed in 0..40 {
            let (room, sources) = sample_room_and_sources(seed, 2, 16000);
            assert!(room.dims[0] >= 5.0 && room.dims[0] <= 10.0);
            assert!(room.dims[1] >= 5.0 && room.dims[1] <= 10.0);
            assert!(room.dims[2] >= 3.0 && room.dims[2] <= 4.0);
            assert!(room.t60 >= 0.2 && room.t60 <= 0.5);
            for axis in 0..3 {
                assert!(room.array_pos[axis] >= 1.0 - 1e-12);
                assert!(room.array_pos[axis] <= room.dims[axis] - 1.0 + 1e-12);
            }
            for s in &sources {
                let d = dist(s.position, room.array_pos);
                assert!((0.5..=1.5).contains(&d), "distance {d}");
                for axis in 0..3 {
                    assert!(s.position[axis] >= 0.5 && s.position[axis] <= room.dims[axis] - 0.5);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (r1, s1) = sample_room_and_sources(42, 2, 16000);
        let (r2, s2) = sample_room_and_sources(42, 2, 16000);
        assert_eq!(r1.dims, r2.dims);
        assert_eq!(r1.t60, r2.t60);
        assert_eq!(r1.array_pos, r2.array_pos);
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn rir_len_follows_t60() {
        let room = RoomSpec {
            dims: [6.0, 5.0, 3.0],
            t60: 0.3,
            array_pos: [3.0, 2.5, 1.5],
            sample_rate: 16000,
            speed_of_sound: 343.0,
            max_image_order: 10,
        };
        assert_eq!(room.rir_len(), 2400);
    }

    #[test]
    fn eyring_reflection_in_unit_interval() {
        for &t60 in &[0.2, 0.35, 0.5] {
            let room = RoomSpec {
                dims: [6.0, 5.0, 3.0],
                t60,
                array_pos: [3.0, 2.5, 1.5],
                sample_rate: 16000,
                speed_of_sound: 343.0,
                max_image_order: 10,
            };
            let beta = room.reflection_coefficient().unwrap();
            assert!(beta > 0.0 && beta < 1.0, "beta {beta}");
        }
    }

    #[test]
    fn invalid_geometry_detected() {
        let room = RoomSpec {
            dims: [6.0, 5.0, 3.0],
            t60: 0.3,
            array_pos: [7.0, 2.5, 1.5],
            sample_rate: 16000,
            speed_of_sound: 343.0,
            max_image_order: 10,
        };
        assert!(room.validate().is_err());
    }
}
