//! Error metrics, the compressed-sensing accuracy bound, a Monte Carlo
//! union bound on symbol error, and the users-vs-accuracy operating point.

use num_complex::Complex64 as C64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scma::Codebook;

/// Mean squared error `‖a − b‖² / len`.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("mse of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Dimension("mse of empty vectors".into()));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// Parameters of the sensing-accuracy bound
/// `c·R_p·(N_u·N_R·n_f / ln N_s)^(1/2 − 1/p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub c: f64,
    /// `ℓ_p` radius of the scene.
    pub radius: f64,
    pub p: f64,
    pub users: usize,
    pub antennas: usize,
    pub window: usize,
    pub voxels: usize,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 2.0) {
            return Err(Error::Parameter(format!("p = {} outside (0, 2)", self.p)));
        }
        if !(self.c > 0.0 && self.radius > 0.0) {
            return Err(Error::Parameter("c and radius must be positive".into()));
        }
        if self.users == 0 || self.antennas == 0 || self.window == 0 {
            return Err(Error::Parameter("counts must be at least 1".into()));
        }
        if self.voxels < 2 {
            return Err(Error::Parameter("need at least 2 voxels".into()));
        }
        Ok(())
    }
}

pub fn cs_bound(bp: &BoundParams) -> Result<f64> {
    bp.validate()?;
    let rows = (bp.users * bp.antennas * bp.window) as f64;
    Ok(bound_for_rows(bp.c, bp.radius, bp.p, rows, bp.voxels as f64))
}

/// The bound as a function of a real-valued row count.
pub fn bound_for_rows(c: f64, radius: f64, p: f64, rows: f64, voxels: f64) -> f64 {
    c * radius * (rows / voxels.ln()).powf(0.5 - 1.0 / p)
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// One Monte Carlo channel draw: true and estimated per-ORE `N_u × N_R`
/// channels.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub truth: Vec<CMat>,
    pub estimate: Vec<CMat>,
}

/// Normaliser of the union sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// `M^{N_u}` joint symbol vectors.
    #[default]
    JointVectors,
    /// `(N_u·M)^{N_u}`.
    UserCodewords,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnionBoundConfig {
    pub samples: usize,
    /// Ordered pairs evaluated before switching to uniform subsampling.
    pub max_pairs: usize,
    pub normalizer: Normalizer,
    pub seed: u64,
}

impl Default for UnionBoundConfig {
    fn default() -> Self {
        UnionBoundConfig {
            samples: 1000,
            max_pairs: 1_000_000,
            normalizer: Normalizer::JointVectors,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnionBound {
    pub value: f64,
    /// Estimated channel-error interference variance.
    pub interference: f64,
    pub pairs_evaluated: usize,
    pub subsampled: bool,
}

/// Superposed received block `Σ_u h_u c_u` for joint index `a` (first user
/// most significant), flattened ORE-major.
fn superposed(cb: &Codebook, h: &[CMat], joint: u64, out: &mut [C64]) {
    let (nu, m) = (cb.user_count(), cb.codeword_count() as u64);
    let nr = h[0].cols();
    out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    let mut rest = joint;
    for u in (0..nu).rev() {
        let sym = (rest % m) as usize;
        rest /= m;
        for (r, hr) in h.iter().enumerate() {
            let c = cb.entry(u, sym, r);
            if c == C64::new(0.0, 0.0) {
                continue;
            }
            let row = hr.row(u);
            for a in 0..nr {
                out[r * nr + a] += row[a] * c;
            }
        }
    }
}

/// Union bound on the per-slot error probability,
/// `(1/C)·Σ_a Σ_{b≠a} E_Ĥ Q(√(‖Ĥ(s_a − s_b)‖² / (2(σ² + D))))`,
/// with `D` the empirical variance of `(H − Ĥ)·s`. `sampler(i)` returns the
/// `i`-th channel draw.
pub fn ser_union_bound<F>(cb: &Codebook, sampler: F, sigma2: f64, cfg: &UnionBoundConfig) -> Result<UnionBound>
where
    F: Fn(usize) -> Result<ChannelDraw> + Sync,
{
    if cfg.samples < 100 {
        return Err(Error::Parameter(format!("{} channel samples; at least 100 required", cfg.samples)));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Parameter(format!("noise variance {sigma2}")));
    }
    let (nu, m, r) = (cb.user_count(), cb.codeword_count(), cb.ore_count());
    let bits = (nu as u32) * cb.bits_per_symbol();
    if bits > 62 {
        return Err(Error::EnumerationTooLarge { bits, limit: 62 });
    }
    let vectors = 1u64 << bits;
    let draws: Vec<ChannelDraw> = (0..cfg.samples).into_par_iter().map(&sampler).collect::<Result<_>>()?;
    for d in &draws {
        if d.truth.len() != r || d.estimate.len() != r {
            return Err(Error::Dimension(format!("channel draw needs {r} per-ORE matrices")));
        }
        for h in d.truth.iter().chain(&d.estimate) {
            if h.rows() != nu || h.cols() != d.truth[0].cols() {
                return Err(Error::Dimension(format!("channel shape {:?}", h.shape())));
            }
        }
    }
    let nr = draws[0].truth[0].cols();
    let len = r * nr;

    // Interference variance from the channel error on random transmitted vectors.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = 0.0;
    let (mut yt, mut ye) = (vec![C64::new(0.0, 0.0); len], vec![C64::new(0.0, 0.0); len]);
    for d in &draws {
        let a = rand::Rng::random_range(&mut rng, 0..vectors);
        superposed(cb, &d.truth, a, &mut yt);
        superposed(cb, &d.estimate, a, &mut ye);
        acc += yt.iter().zip(&ye).map(|(t, e)| (t - e).norm_sqr()).sum::<f64>() / len as f64;
    }
    let interference = acc / draws.len() as f64;
    let denom = 2.0 * (sigma2 + interference);

    let total_pairs = vectors.checked_mul(vectors - 1).ok_or(Error::EnumerationTooLarge { bits: 2 * bits, limit: 64 })?;
    let subsampled = total_pairs > cfg.max_pairs as u64;
    let pairs: Vec<(u64, u64)> = if subsampled {
        if total_pairs > usize::MAX as u64 {
            return Err(Error::EnumerationTooLarge { bits: 2 * bits, limit: usize::BITS });
        }
        index::sample(&mut rng, total_pairs as usize, cfg.max_pairs)
            .into_iter()
            .map(|i| {
                let i = i as u64;
                let a = i / (vectors - 1);
                let mut b = i % (vectors - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            })
            .collect()
    } else {
        (0..vectors)
            .flat_map(|a| (0..vectors).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect()
    };

    let pep_sum: f64 = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (mut sa, mut sb) = (vec![C64::new(0.0, 0.0); len], vec![C64::new(0.0, 0.0); len]);
            let mut p = 0.0;
            for d in &draws {
                superposed(cb, &d.estimate, a, &mut sa);
                superposed(cb, &d.estimate, b, &mut sb);
                let dist: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).norm_sqr()).sum();
                p += if dist == 0.0 {
                    0.5
                } else if denom == 0.0 {
                    0.0
                } else {
                    q_function((dist / denom).sqrt())
                };
            }
            p / draws.len() as f64
        })
        .sum();
    let scaled_sum = pep_sum * total_pairs as f64 / pairs.len() as f64;
    let norm = match cfg.normalizer {
        Normalizer::JointVectors => vectors as f64,
        Normalizer::UserCodewords => ((nu * m) as f64).powi(nu as i32),
    };
    Ok(UnionBound {
        value: scaled_sum / norm,
        interference,
        pairs_evaluated: pairs.len(),
        subsampled,
    })
}

/// One point of a user-count sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub users: usize,
    pub mse: f64,
    pub ser: f64,
}

/// `argmin a1·MSE + a2·SER`; ties go to the smallest user count.
pub fn operating_point(sweep: &[SweepPoint], a1: f64, a2: f64) -> Result<usize> {
    if sweep.is_empty() {
        return Err(Error::Parameter("empty sweep".into()));
    }
    if !(a1 >= 0.0 && a2 >= 0.0) {
        return Err(Error::Parameter(format!("weights ({a1}, {a2}) must be non-negative")));
    }
    let cost = |p: &SweepPoint| a1 * p.mse + a2 * p.ser;
    let mut best = sweep[0];
    for p in &sweep[1..] {
        let (c, cb) = (cost(p), cost(&best));
        if c < cb || (c == cb && p.users < best.users) {
            best = *p;
        }
    }
    Ok(best.users)
}

/// Divides MSE and SER by their largest values over the sweep so equal
/// weights compare like with like.
pub fn normalized(sweep: &[SweepPoint]) -> Vec<SweepPoint> {
    let mmax = sweep.iter().map(|p| p.mse).fold(0.0, f64::max);
    let smax = sweep.iter().map(|p| p.ser).fold(0.0, f64::max);
    let div = |v: f64, d: f64| if d > 0.0 { v / d } else { v };
    sweep
        .iter()
        .map(|p| SweepPoint {
            users: p.users,
            mse: div(p.mse, mmax),
            ser: div(p.ser, smax),
        })
        .collect()
}
