//! Real spherical harmonics, SN3D normalization, no Condon-Shortley phase.

use super::Direction;
use crate::error::{Error, Result};

/// Associated Legendre P_l^m(x) without the Condon-Shortley phase,
/// via the standard stable recurrences.
fn assoc_legendre(l: u32, m: u32, x: f64) -> f64 {
    debug_assert!(m <= l);
    let somx2 = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    for ll in (m + 2)..=l {
        let pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pmmp1
}

fn factorial(n: u32) -> f64 {
    (2..=n).map(|i| i as f64).product()
}

/// SN3D-normalized real spherical harmonic of degree `l` and mode `m`.
///
/// Follows the AmbiX convention: Y₀₀ = 1, Y₁₋₁ = sin(az)·cos(el),
/// Y₁₀ = sin(el), Y₁₁ = cos(az)·cos(el).
pub fn real_sh(l: u32, m: i32, dir: Direction) -> Result<f64> {
    if m.unsigned_abs() > l {
        return Err(Error::InvalidShIndex { l: l as i64, m: m as i64 });
    }
    let am = m.unsigned_abs();
    let delta = if m == 0 { 1.0 } else { 2.0 };
    let norm = (delta * factorial(l - am) / factorial(l + am)).sqrt();
    let p = assoc_legendre(l, am, dir.elevation.sin());
    let trig = if m >= 0 {
        (am as f64 * dir.azimuth).cos()
    } else {
        (am as f64 * dir.azimuth).sin()
    };
    Ok(norm * p * trig)
}

/// Ambisonic Channel Number for (l, m): l² + l + m.
pub fn acn_index(l: u32, m: i32) -> usize {
    (l as i64 * l as i64 + l as i64 + m as i64) as usize
}

/// Inverse of [`acn_index`].
pub fn acn_to_lm(acn: usize) -> (u32, i32) {
    let l = (acn as f64).sqrt().floor() as u32;
    let m = acn as i64 - (l as i64 * l as i64 + l as i64);
    (l, m as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn dir(az: f64, el: f64) -> Direction {
        Direction::new(az, el).unwrap()
    }

    #[test]
    fn zeroth_order_is_one_everywhere() {
        for &(az, el) in &[(0.0, 0.0), (1.0, 0.7), (4.0, -1.2)] {
            assert!((real_sh(0, 0, dir(az, el)).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn first_order_matches_ambix_table() {
        // Y₁₀ = sin(el)
        assert!((real_sh(1, 0, dir(0.3, FRAC_PI_2)).unwrap() - 1.0).abs() < 1e-15);
        // Y₁₁ = cos(az)·cos(el)
        assert!((real_sh(1, 1, dir(0.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        // Y₁₋₁ = sin(az)·cos(el)
        let v = real_sh(1, -1, dir(PI / 6.0, 0.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn second_order_reference_values() {
        // Y₂₀ = (3·sin²el − 1)/2
        let el = 0.4f64;
        let want = (3.0 * el.sin() * el.sin() - 1.0) / 2.0;
        assert!((real_sh(2, 0, dir(1.1, el)).unwrap() - want).abs() < 1e-14);
        // Y₂₂ at (0, 0) = √3/2
        let v = real_sh(2, 2, dir(0.0, 0.0)).unwrap();
        assert!((v - 3f64.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_mode_rejected() {
        assert!(real_sh(1, 2, dir(0.0, 0.0)).is_err());
    }

    #[test]
    fn acn_roundtrip() {
        for acn in 0..25 {
            let (l, m) = acn_to_lm(acn);
            assert_eq!(acn_index(l, m), acn);
        }
        assert_eq!(acn_index(1, -1), 1);
        assert_eq!(acn_index(1, 0), 2);
        assert_eq!(acn_index(1, 1), 3);
    }
}
