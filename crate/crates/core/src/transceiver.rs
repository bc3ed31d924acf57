//! Frame formation, the per-ORE multi-antenna channel, and calibrated noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{CMat, Matrix, C64, ZERO};
use crate::scma::Codebook;

/// Symbol indices of one packet, `N_T × N_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    symbols: Matrix<usize>,
    packet: usize,
}

impl Frame {
    pub fn new(symbols: Matrix<usize>, packet: usize, cb: &Codebook) -> Result<Self> {
        if symbols.cols() != cb.user_count() {
            return Err(Error::Dimension(format!(
                "frame has {} users, codebook {}",
                symbols.cols(),
                cb.user_count()
            )));
        }
        if let Some(&m) = symbols.as_slice().iter().find(|&&m| m >= cb.codeword_count()) {
            return Err(Error::Index(format!(
                "symbol {m} of {}",
                cb.codeword_count()
            )));
        }
        Ok(Frame { symbols, packet })
    }

    /// Uniform random symbols; pilots and data share this constructor.
    pub fn random(slots: usize, cb: &Codebook, packet: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = cb.codeword_count();
        let symbols = Matrix::from_fn(slots, cb.user_count(), |_, _| rng.random_range(0..m));
        Frame { symbols, packet }
    }

    pub fn symbols(&self) -> &Matrix<usize> {
        &self.symbols
    }

    pub fn packet(&self) -> usize {
        self.packet
    }

    pub fn slots(&self) -> usize {
        self.symbols.rows()
    }

    pub fn user_count(&self) -> usize {
        self.symbols.cols()
    }

    /// Symbols of slot `t`, one per user.
    pub fn slot(&self, t: usize) -> &[usize] {
        self.symbols.row(t)
    }
}

/// Received samples `y[t, r, n_R]`, stored slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    y: Vec<C64>,
    slots: usize,
    ores: usize,
    antennas: usize,
    sigma2: f64,
}

impl ReceivedFrame {
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn ore_count(&self) -> usize {
        self.ores
    }

    pub fn antenna_count(&self) -> usize {
        self.antennas
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[inline]
    pub fn get(&self, t: usize, r: usize, a: usize) -> C64 {
        self.y[(t * self.ores + r) * self.antennas + a]
    }

    /// The `R × N_R` block of slot `t`, row-major by ORE.
    pub fn slot(&self, t: usize) -> &[C64] {
        let w = self.ores * self.antennas;
        &self.y[t * w..(t + 1) * w]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.y
    }
}

/// Noise variance per complex sample for a given `E_b/N_0`.
///
/// `E_b` is the average codeword energy (over users and symbols) divided by
/// the `log2 M` bits each codeword carries, so the unit-energy bundled book
/// gives `σ² = 1/2` at 0 dB.
pub fn noise_sigma(ebn0_db: f64, cb: &Codebook) -> f64 {
    let eb = cb.average_energy() / f64::from(cb.bits_per_symbol());
    eb / 10f64.powf(ebn0_db / 10.0)
}

/// Noiseless superposition `Σ_u H_r(u, n_R) · C_u(m_u, r)` for one slot.
pub fn superpose(symbols: &[usize], channels: &[CMat], cb: &Codebook, out: &mut [C64]) {
    let nr = channels[0].cols();
    out.iter_mut().for_each(|v| *v = ZERO);
    for (u, &m) in symbols.iter().enumerate() {
        for &r in cb.support(u) {
            let c = cb.entry(u, m, r);
            let h = channels[r].row(u);
            for (o, &g) in out[r * nr..(r + 1) * nr].iter_mut().zip(h) {
                *o += g * c;
            }
        }
    }
}

pub(crate) fn check_channels(channels: &[CMat], cb: &Codebook) -> Result<usize> {
    if channels.len() != cb.ore_count() {
        return Err(Error::Dimension(format!(
            "{} channel matrices for {} OREs",
            channels.len(),
            cb.ore_count()
        )));
    }
    let nr = channels[0].cols();
    if let Some(h) = channels.iter().find(|h| h.shape() != (cb.user_count(), nr)) {
        return Err(Error::Dimension(format!(
            "channel {:?}, expected ({}, {nr})",
            h.shape(),
            cb.user_count()
        )));
    }
    Ok(nr)
}

/// Passes `frame` through the per-ORE channels (`N_u × N_R` each) and adds
/// circularly-symmetric complex Gaussian noise with `E|w|² = σ²`.
pub fn transmit(
    frame: &Frame,
    channels: &[CMat],
    cb: &Codebook,
    sigma2: f64,
    seed: u64,
) -> Result<ReceivedFrame> {
    let nr = check_channels(channels, cb)?;
    if frame.user_count() != cb.user_count() {
        return Err(Error::Dimension(format!(
            "frame has {} users, codebook {}",
            frame.user_count(),
            cb.user_count()
        )));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Parameter(format!("noise variance {sigma2}")));
    }
    let r = cb.ore_count();
    let w = r * nr;
    let mut y = vec![ZERO; frame.slots() * w];
    for (t, block) in y.chunks_mut(w).enumerate() {
        superpose(frame.slot(t), channels, cb, block);
    }
    if sigma2 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (sigma2 / 2.0).sqrt();
        for v in &mut y {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += C64::new(s * re, s * im);
        }
    }
    Ok(ReceivedFrame {
        y,
        slots: frame.slots(),
        ores: r,
        antennas: nr,
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channels(cb: &Codebook, nr: usize) -> Vec<CMat> {
        (0..cb.ore_count())
            .map(|r| {
                CMat::from_fn(cb.user_count(), nr, |u, a| {
                    C64::from_polar(1.0 + 0.1 * u as f64, 0.3 * (r + a + u) as f64)
                })
            })
            .collect()
    }

    #[test]
    fn noise_calibration() {
        let cb = Codebook::bundled();
        assert!((noise_sigma(0.0, &cb) - 0.5).abs() < 1e-12);
        assert!((noise_sigma(0.0, &cb) / noise_sigma(10.0, &cb) - 10.0).abs() < 1e-9);
        assert!(noise_sigma(300.0, &cb) < 1e-30);
    }

    #[test]
    fn single_user_full_support_is_scaled_codeword() {
        let b = CMat::from_fn(3, 2, |r, m| C64::new(1.0 + r as f64, m as f64 - 0.5));
        let cb = Codebook::new(vec![b], 3, crate::scma::Regularity::Strict).unwrap();
        let h = channels(&cb, 2);
        let mut s = Matrix::zeros(4, 1);
        s[(2, 0)] = 1;
        let f = Frame::new(s, 0, &cb).unwrap();
        let y = transmit(&f, &h, &cb, 0.0, 1).unwrap();
        for r in 0..3 {
            for a in 0..2 {
                assert_eq!(y.get(2, r, a), h[r][(0, a)] * cb.entry(0, 1, r));
                assert_eq!(y.get(0, r, a), h[r][(0, a)] * cb.entry(0, 0, r));
            }
        }
    }

    #[test]
    fn superposition_and_sparsity() {
        let cb = Codebook::bundled();
        let h = channels(&cb, 3);
        let f = Frame::random(16, &cb, 0, 5);
        let all = transmit(&f, &h, &cb, 0.0, 0).unwrap();
        let mut sum = vec![ZERO; all.as_slice().len()];
        for u in 0..6 {
            // Zero out every other user's channel.
            let solo: Vec<CMat> = h
                .iter()
                .map(|m| CMat::from_fn(6, 3, |v, a| if v == u { m[(v, a)] } else { ZERO }))
                .collect();
            let y = transmit(&f, &solo, &cb, 0.0, 0).unwrap();
            for r in 0..4 {
                if !cb.support(u).contains(&r) {
                    assert!((0..16).all(|t| (0..3).all(|a| y.get(t, r, a) == ZERO)));
                }
            }
            for (s, v) in sum.iter_mut().zip(y.as_slice()) {
                *s += v;
            }
        }
        for (s, v) in sum.iter().zip(all.as_slice()) {
            assert!((s - v).norm() < 1e-12);
        }
    }

    #[test]
    fn empirical_noise_variance() {
        let cb = Codebook::bundled();
        let h: Vec<CMat> = (0..4).map(|_| CMat::zeros(6, 1)).collect();
        let f = Frame::random(100_000 / 4, &cb, 0, 1);
        let y = transmit(&f, &h, &cb, 0.37, 11).unwrap();
        let p: f64 = y.as_slice().iter().map(|v| v.norm_sqr()).sum::<f64>() / y.as_slice().len() as f64;
        assert!((p / 0.37 - 1.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cb = Codebook::bundled();
        let mut s = Matrix::zeros(2, 6);
        s[(0, 0)] = 4;
        assert!(Frame::new(s, 0, &cb).is_err());
        assert!(Frame::new(Matrix::zeros(2, 5), 0, &cb).is_err());
        let f = Frame::random(2, &cb, 0, 0);
        assert!(transmit(&f, &channels(&cb, 2)[..3], &cb, 0.1, 0).is_err());
    }
}
