//! Plane-wave-domain encoding matrix and its pseudo-inverse decoder.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;

use super::sh::{acn_to_lm, real_sh};
use super::{AmbisonicSignal, Direction, PwdSignal};
use crate::autodiff::kernels;
use crate::error::{Error, Result};

/// Encoding matrix Y (Q × (L+1)²) of maximum-directivity beamforming
/// weights √(2l+1)·Y_lm(Ω_q), together with its pseudo-inverse decoder.
#[derive(Debug, Clone)]
pub struct PwdMatrix {
    order: u32,
    directions: Vec<Direction>,
    /// Row-major Q × (L+1)², columns in ACN order.
    y: Vec<f64>,
    /// Row-major (L+1)² × Q.
    ydag: Vec<f64>,
    cond: f64,
}

impl PwdMatrix {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn num_sh_channels(&self) -> usize {
        ((self.order + 1) * (self.order + 1)) as usize
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn encoder(&self) -> &[f64] {
        &self.y
    }

    pub fn decoder(&self) -> &[f64] {
        &self.ydag
    }

    /// 2-norm condition number of Y.
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// Human-readable dump: Y and Y† one row per line, full double precision.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ch = self.num_sh_channels();
        let q = self.num_directions();
        writeln!(w, "# pwd matrix, order {}, {} directions, cond {:.6e}", self.order, q, self.cond)?;
        writeln!(w, "# directions (azimuth elevation)")?;
        for d in &self.directions {
            writeln!(w, "{:.17e} {:.17e}", d.azimuth, d.elevation)?;
        }
        writeln!(w, "# Y ({q} x {ch})")?;
        for row in self.y.chunks(ch) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "# Ydag ({ch} x {q})")?;
        for row in self.ydag.chunks(q) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Near-uniform default direction grid with Q = (L+1)² points.
///
/// Order 0 is a single direction, order 1 the vertices of a regular
/// tetrahedron (exact quadrature), higher orders a Fibonacci spiral whose
/// conditioning is checked when the matrix is built.
pub fn default_grid(order: u32) -> Vec<Direction> {
    match order {
        0 => vec![Direction::new(0.0, 0.0).expect("valid")],
        1 => {
            let verts: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
            verts.iter().map(|v| Direction::from_vector(*v).expect("valid")).collect()
        }
        l => {
            let q = ((l + 1) * (l + 1)) as usize;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..q)
                .map(|i| {
                    let z = 1.0 - (2 * i + 1) as f64 / q as f64;
                    let az = golden * i as f64;
                    Direction::new(az, z.asin()).expect("valid")
                })
                .collect()
        }
    }
}

/// Assemble Y for the given directions and compute its pseudo-inverse via
/// SVD (normal equations are avoided for conditioning).
pub fn build_pwd_matrix(order: u32, directions: &[Direction]) -> Result<PwdMatrix> {
    let ch = ((order + 1) * (order + 1)) as usize;
    if directions.len() != ch {
        return Err(Error::Config(format!(
            "order {order} needs {ch} directions, got {}",
            directions.len()
        )));
    }
    let q = directions.len();
    let mut y = vec![0.0; q * ch];
    for (qi, dir) in directions.iter().enumerate() {
        for acn in 0..ch {
            let (l, m) = acn_to_lm(acn);
            y[qi * ch + acn] = ((2 * l + 1) as f64).sqrt() * real_sh(l, m, *dir)?;
        }
    }

    let m = DMatrix::from_row_slice(q, ch, &y);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = smax / smin;
    if !cond.is_finite() || smin <= smax * 1e-12 {
        return Err(Error::RankDeficientGrid { cond });
    }
    let pinv = svd
        .pseudo_inverse(smax * 1e-13)
        .map_err(|_| Error::RankDeficientGrid { cond })?;
    let mut ydag = vec![0.0; ch * q];
    for r in 0..ch {
        for c in 0..q {
            ydag[r * q + c] = pinv[(r, c)];
        }
    }
    Ok(PwdMatrix { order, directions: directions.to_vec(), y, ydag, cond })
}

/// x_pwd = Y · x_amb, applied per sample.
pub fn pwd_encode(x: &AmbisonicSignal, m: &PwdMatrix) -> Result<PwdSignal> {
    if x.channels() != m.num_sh_channels() {
        return Err(Error::ShapeMismatch {
            op: "pwd_encode",
            detail: format!("{} channels vs matrix {}", x.channels(), m.num_sh_channels()),
        });
    }
    let (q, ch, n) = (m.num_directions(), m.num_sh_channels(), x.len());
    let mut out = vec![0.0; q * n];
    kernels::matmul_nn(&m.y, x.data(), &mut out, q, ch, n);
    Ok(PwdSignal::from_data(q, n, out, x.sample_rate))
}

/// x_amb = Y† · x_pwd, applied per sample.
pub fn pwd_decode(p: &PwdSignal, m: &PwdMatrix) -> Result<AmbisonicSignal> {
    if p.channels() != m.num_directions() {
        return Err(Error::ShapeMismatch {
            op: "pwd_decode",
            detail: format!("{} channels vs matrix {}", p.channels(), m.num_directions()),
        });
    }
    let (q, ch, n) = (m.num_directions(), m.num_sh_channels(), p.len());
    let mut out = vec![0.0; ch * n];
    kernels::matmul_nn(&m.ydag, p.data(), &mut out, ch, q, n);
    Ok(AmbisonicSignal::from_data(ch, n, out, p.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_l2_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn order_zero_matrix_is_identity() {
        let m = build_pwd_matrix(0, &default_grid(0)).unwrap();
        assert_eq!(m.encoder(), &[1.0]);
        assert!((m.decoder()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn front_direction_row_at_order_one() {
        let dirs = [
            Direction::new(0.0, 0.0).unwrap(),
            Direction::new(2.0, 0.3).unwrap(),
            Direction::new(4.0, -0.3).unwrap(),
            Direction::new(1.0, 1.0).unwrap(),
        ];
        let m = build_pwd_matrix(1, &dirs).unwrap();
        let row = &m.encoder()[..4];
        let want = [1.0, 0.0, 0.0, 3f64.sqrt()];
        for (a, b) in row.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{row:?}");
        }
    }

    #[test]
    fn tetrahedral_grid_is_exact_quadrature() {
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        assert!(m.cond() < 1.0 + 1e-9);
        // Ydag · Y = I within 1e-12
        let mut prod = vec![0.0; 16];
        kernels::matmul_nn(m.decoder(), m.encoder(), &mut prod, 4, 4, 4);
        for r in 0..4 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((prod[r * 4 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_grids_are_well_conditioned() {
        for order in 2..=4 {
            let m = build_pwd_matrix(order, &default_grid(order)).unwrap();
            assert!(m.cond() < 10.0, "order {order}: cond {}", m.cond());
        }
    }

    #[test]
    fn omni_impulse_maps_to_unit_impulses() {
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        let mut x = AmbisonicSignal::zeros(4, 8, 16000);
        x.channel_mut(0)[3] = 1.0;
        let p = pwd_encode(&x, &m).unwrap();
        for q in 0..4 {
            assert!((p.channel(q)[3] - 1.0).abs() < 1e-13);
            assert!(p.channel(q).iter().enumerate().all(|(i, v)| i == 3 || v.abs() < 1e-13));
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        let data: Vec<f64> = (0..4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = AmbisonicSignal::from_data(4, 64, data.clone(), 16000);
        let back = pwd_decode(&pwd_encode(&x, &m).unwrap(), &m).unwrap();
        assert!(rel_l2_err(back.data(), &data) < 1e-10);
    }

    #[test]
    fn encode_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        let xa: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xb: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let pa = pwd_encode(&AmbisonicSignal::from_data(4, 16, xa, 16000), &m).unwrap();
        let pb = pwd_encode(&AmbisonicSignal::from_data(4, 16, xb, 16000), &m).unwrap();
        let pc = pwd_encode(&AmbisonicSignal::from_data(4, 16, combo, 16000), &m).unwrap();
        for i in 0..pc.data().len() {
            let want = 2.5 * pa.data()[i] - 0.75 * pb.data()[i];
            assert!((pc.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_peaks_at_its_own_channel() {
        // Encoding a plane wave from grid direction q maximizes PWD channel q.
        let dirs = default_grid(1);
        let m = build_pwd_matrix(1, &dirs).unwrap();
        for (q, dir) in dirs.iter().enumerate() {
            let mut x = AmbisonicSignal::zeros(4, 1, 16000);
            for acn in 0..4 {
                let (l, mm) = acn_to_lm(acn);
                x.channel_mut(acn)[0] = real_sh(l, mm, *dir).unwrap();
            }
            let p = pwd_encode(&x, &m).unwrap();
            let vals: Vec<f64> = (0..4).map(|i| p.channel(i)[0]).collect();
            let argmax = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, q, "{vals:?}");
        }
    }

    #[test]
    fn zero_signal_stays_zero() {
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        let x = AmbisonicSignal::zeros(4, 32, 16000);
        let p = pwd_encode(&x, &m).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_grid_rejected() {
        // All four directions identical: rank 1.
        let d = Direction::new(0.5, 0.1).unwrap();
        let dirs = [d, d, d, d];
        assert!(matches!(
            build_pwd_matrix(1, &dirs),
            Err(Error::RankDeficientGrid { .. })
        ));
    }

    #[test]
    fn text_dump_roundtrips_precision() {
        let m = build_pwd_matrix(1, &default_grid(1)).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // First Y row should parse back to the exact stored values.
        let row_line = text.lines().nth(7).unwrap();
        let parsed: Vec<f64> = row_line.split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(&parsed[..], &m.encoder()[..4]);
    }
}
