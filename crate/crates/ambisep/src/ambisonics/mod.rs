//! Ambisonic signal types, real spherical harmonics and the plane-wave
//! domain transform pair.

pub mod sh;

mod pwd;

pub use pwd::{build_pwd_matrix, default_grid, pwd_decode, pwd_encode, PwdMatrix};

use crate::error::{Error, Result};
use std::f64::consts::{FRAC_PI_2, TAU};

/// A direction on the sphere: azimuth in [0, 2π), elevation in [−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&elevation) || !elevation.is_finite() || !azimuth.is_finite() {
            return Err(Error::Config(format!(
                "direction out of range: azimuth {azimuth}, elevation {elevation}"
            )));
        }
        Ok(Direction { azimuth: azimuth.rem_euclid(TAU), elevation })
    }

    /// Direction of the (x, y, z) vector as seen from the origin.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm == 0.0 {
            return Err(Error::Config("zero vector has no direction".into()));
        }
        Direction::new(v[1].atan2(v[0]), (v[2] / norm).asin())
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ca * ce, sa * ce, se]
    }
}

/// Multichannel time signal in ACN channel order with SN3D normalization
/// (the AmbiX convention). Channel count is (L+1)² for order L.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbisonicSignal {
    channels: usize,
    len: usize,
    data: Vec<f64>,
    pub sample_rate: u32,
}

/// Q-channel plane-wave-domain time signal produced by a [`PwdMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct PwdSignal {
    channels: usize,
    len: usize,
    data: Vec<f64>,
    pub sample_rate: u32,
}

macro_rules! signal_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
                $ty { channels, len, data: vec![0.0; channels * len], sample_rate }
            }

            /// Channel-major flat data: `data[ch·len + n]`.
            pub fn from_data(channels: usize, len: usize, data: Vec<f64>, sample_rate: u32) -> Self {
                assert_eq!(data.len(), channels * len, "flat data does not match channels × len");
                $ty { channels, len, data, sample_rate }
            }

            pub fn channels(&self) -> usize {
                self.channels
            }

            pub fn len(&self) -> usize {
                self.len
            }

            pub fn is_empty(&self) -> bool {
                self.len == 0
            }

            pub fn channel(&self, ch: usize) -> &[f64] {
                &self.data[ch * self.len..(ch + 1) * self.len]
            }

            pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
                &mut self.data[ch * self.len..(ch + 1) * self.len]
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn is_finite(&self) -> bool {
                self.data.iter().all(|v| v.is_finite())
            }
        }
    };
}

signal_impl!(AmbisonicSignal);
signal_impl!(PwdSignal);

impl AmbisonicSignal {
    /// Ambisonic order L for the channel count; errors when the channel
    /// count is not a perfect square.
    pub fn order(&self) -> Result<u32> {
        let root = (self.channels as f64).sqrt().round() as u32;
        if root == 0 || (root * root) as usize != self.channels {
            return Err(Error::Config(format!(
                "channel count {} is not (L+1)² for any order",
                self.channels
            )));
        }
        Ok(root - 1)
    }
}
