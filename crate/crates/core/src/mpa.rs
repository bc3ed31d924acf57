//! SCMA multi-user detection: iterative message passing on the factor graph
//! and an exhaustive maximum-likelihood reference.
//!
//! The per-ORE likelihood of a candidate combination is
//! `exp(−|y − Σ h·c|² / (2σ²))`, evaluated after subtracting the smallest
//! residual of the ORE so the best candidate always has likelihood one.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{CMat, Matrix, C64};
use crate::scma::{factor_graph, Codebook, FactorGraph};
use crate::transceiver::{check_channels, ReceivedFrame};

/// Guards `2σ²` when the noise variance is zero.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// Largest `N_u · log2 M` the exhaustive detector accepts.
pub const ML_MAX_BITS: u32 = 24;

/// How per-antenna observations are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combining {
    /// One message-passing run per antenna; final log-beliefs are summed.
    #[default]
    PerAntenna,
    /// One run per slot with likelihoods multiplied across antennas inside
    /// each function node.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpaConfig {
    /// K_it, the maximum number of message-passing rounds.
    pub iterations: usize,
    pub combining: Combining,
    /// Stop early once no VN message moves by more than this.
    pub tolerance: f64,
}

impl Default for MpaConfig {
    fn default() -> Self {
        MpaConfig {
            iterations: 10,
            combining: Combining::PerAntenna,
            tolerance: 1e-6,
        }
    }
}

/// Hard decisions plus per-user symbol posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub symbols: Vec<usize>,
    pub posteriors: Vec<Vec<f64>>,
}

/// VN→FN and FN→VN messages of one decoder run.
///
/// `v2f[u][k]` is the message from user `u` to its `k`-th ORE;
/// `f2v[r][j]` is the message from ORE `r` to its `j`-th user.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageTable {
    pub v2f: Vec<Vec<Vec<f64>>>,
    pub f2v: Vec<Vec<Vec<f64>>>,
    pub rounds: usize,
}

impl MessageTable {
    /// All messages equal to `1/M`.
    pub fn uniform(graph: &FactorGraph, m: usize) -> Self {
        let p = 1.0 / m as f64;
        MessageTable {
            v2f: graph
                .user_ores
                .iter()
                .map(|o| vec![vec![p; m]; o.len()])
                .collect(),
            f2v: graph
                .ore_users
                .iter()
                .map(|l| vec![vec![p; m]; l.len()])
                .collect(),
            rounds: 0,
        }
    }
}

/// Max-rescaled likelihood table of one function node.
///
/// Entry `c` encodes the symbols of `Λ_r` with the first user most
/// significant. `antennas` selects which columns of the channel contribute.
pub fn fn_likelihoods(
    y_slot: &[C64],
    channels: &[CMat],
    cb: &Codebook,
    users: &[usize],
    ore: usize,
    antennas: std::ops::Range<usize>,
    sigma2: f64,
) -> Vec<f64> {
    let m = cb.codeword_count();
    let nr = channels[0].cols();
    let h = &channels[ore];
    let na = antennas.len();
    // Residuals per antenna, expanded one user at a time.
    let mut res: Vec<C64> = antennas.clone().map(|a| y_slot[ore * nr + a]).collect();
    for &u in users {
        let mut next = Vec::with_capacity(res.len() * m);
        for block in res.chunks(na) {
            for sym in 0..m {
                let c = cb.entry(u, sym, ore);
                next.extend(block.iter().zip(antennas.clone()).map(|(e, a)| e - h[(u, a)] * c));
            }
        }
        res = next;
    }
    let dist: Vec<f64> = res
        .chunks(na)
        .map(|b| b.iter().map(|e| e.norm_sqr()).sum())
        .collect();
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let denom = (2.0 * sigma2).max(LIKELIHOOD_FLOOR);
    dist.iter().map(|d| (-(d - min) / denom).exp()).collect()
}

/// Decoder bound to one factor graph; buffers are reused between slots.
struct Mpa<'a> {
    cb: &'a Codebook,
    graph: &'a FactorGraph,
    /// For `(r, j)`: position of ORE `r` within `Ω_{Λ_r[j]}`.
    ore_pos: Vec<Vec<usize>>,
    /// For `(u, k)`: position of user `u` within `Λ_{Ω_u[k]}`.
    user_pos: Vec<Vec<usize>>,
    cfg: &'a MpaConfig,
}

impl<'a> Mpa<'a> {
    fn new(cb: &'a Codebook, graph: &'a FactorGraph, cfg: &'a MpaConfig) -> Self {
        let ore_pos = graph
            .ore_users
            .iter()
            .enumerate()
            .map(|(r, l)| {
                l.iter()
                    .map(|&u| graph.user_ores[u].iter().position(|&x| x == r).unwrap())
                    .collect()
            })
            .collect();
        let user_pos = graph
            .user_ores
            .iter()
            .enumerate()
            .map(|(u, o)| o.iter().map(|&r| graph.slot(r, u).unwrap()).collect())
            .collect();
        Mpa {
            cb,
            graph,
            ore_pos,
            user_pos,
            cfg,
        }
    }

    /// Runs message passing on precomputed FN likelihoods and returns the
    /// per-user log-beliefs with the final message table.
    fn run(&self, lik: &[Vec<f64>]) -> (Vec<Vec<f64>>, MessageTable) {
        let m = self.cb.codeword_count();
        let mut t = MessageTable::uniform(self.graph, m);
        for _ in 0..self.cfg.iterations.max(1) {
            for (r, users) in self.graph.ore_users.iter().enumerate() {
                let incoming: Vec<&[f64]> = users
                    .iter()
                    .zip(&self.ore_pos[r])
                    .map(|(&u, &k)| t.v2f[u][k].as_slice())
                    .collect();
                fn_update(&lik[r], &incoming, m, &mut t.f2v[r]);
            }
            let mut delta = 0.0f64;
            for (u, ores) in self.graph.user_ores.iter().enumerate() {
                for k in 0..ores.len() {
                    let mut msg = vec![1.0; m];
                    for (k2, (&r, &j)) in ores.iter().zip(&self.user_pos[u]).enumerate() {
                        if k2 != k {
                            for (p, q) in msg.iter_mut().zip(&t.f2v[r][j]) {
                                *p *= q;
                            }
                        }
                    }
                    normalize(&mut msg);
                    for (old, new) in t.v2f[u][k].iter().zip(&msg) {
                        delta = delta.max((old - new).abs());
                    }
                    t.v2f[u][k] = msg;
                }
            }
            t.rounds += 1;
            if delta <= self.cfg.tolerance {
                break;
            }
        }
        let beliefs = self
            .graph
            .user_ores
            .iter()
            .enumerate()
            .map(|(u, ores)| {
                (0..m)
                    .map(|sym| {
                        ores.iter()
                            .zip(&self.user_pos[u])
                            .map(|(&r, &j)| t.f2v[r][j][sym].ln())
                            .sum()
                    })
                    .collect()
            })
            .collect();
        (beliefs, t)
    }
}

/// Messages from one function node to each of its users.
///
/// `out[j][m] = Σ_c lik[c] · Π_{i≠j} incoming[i][c_i]` over combinations
/// `c` with `c_j = m`, then normalised and floored away from zero.
pub fn fn_update(lik: &[f64], incoming: &[&[f64]], m: usize, out: &mut [Vec<f64>]) {
    let d = incoming.len();
    for o in out.iter_mut() {
        o.iter_mut().for_each(|v| *v = 0.0);
    }
    if d == 0 {
        return;
    }
    // The last user varies fastest, so each run of `m` consecutive entries
    // shares the first `d − 1` digits. Those are walked by an odometer with
    // prefix/suffix products; the last digit is summed out in the inner loop.
    let outer = d - 1;
    let last = incoming[outer];
    let mut digits = vec![0usize; outer];
    let mut prefix = vec![1.0; outer + 1];
    let mut suffix = vec![1.0; outer + 1];
    for block in lik.chunks_exact(m) {
        for i in 0..outer {
            prefix[i + 1] = prefix[i] * incoming[i][digits[i]];
        }
        for i in (0..outer).rev() {
            suffix[i] = suffix[i + 1] * incoming[i][digits[i]];
        }
        let head = prefix[outer];
        let mut tail = 0.0;
        for (s, &l) in block.iter().enumerate() {
            tail += l * last[s];
            out[outer][s] += l * head;
        }
        if tail > 0.0 {
            for j in 0..outer {
                out[j][digits[j]] += tail * prefix[j] * suffix[j + 1];
            }
        }
        for i in (0..outer).rev() {
            digits[i] += 1;
            if digits[i] < m {
                break;
            }
            digits[i] = 0;
        }
    }
    for o in out.iter_mut() {
        normalize(o);
        for v in o.iter_mut() {
            *v = v.max(LIKELIHOOD_FLOOR);
        }
    }
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 && s.is_finite() {
        p.iter_mut().for_each(|v| *v /= s);
    } else {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|v| *v = u);
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(logp: &[f64]) -> Vec<f64> {
    let mx = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logp.iter().map(|l| (l - mx).exp()).collect();
    normalize(&mut p);
    p
}

fn check_slot(y_slot: &[C64], channels: &[CMat], cb: &Codebook) -> Result<usize> {
    let nr = check_channels(channels, cb)?;
    if y_slot.len() != cb.ore_count() * nr {
        return Err(Error::Dimension(format!(
            "slot has {} samples, expected {}",
            y_slot.len(),
            cb.ore_count() * nr
        )));
    }
    Ok(nr)
}

/// Decodes one slot (`R × N_R` samples) by message passing.
pub fn mpa_decode(
    y_slot: &[C64],
    channels: &[CMat],
    cb: &Codebook,
    graph: &FactorGraph,
    sigma2: f64,
    cfg: &MpaConfig,
) -> Result<Decoded> {
    let nr = check_slot(y_slot, channels, cb)?;
    let mpa = Mpa::new(cb, graph, cfg);
    Ok(decode_with(&mpa, y_slot, channels, nr, sigma2))
}

fn decode_with(mpa: &Mpa, y_slot: &[C64], channels: &[CMat], nr: usize, sigma2: f64) -> Decoded {
    let cb = mpa.cb;
    let m = cb.codeword_count();
    let groups: Vec<std::ops::Range<usize>> = match mpa.cfg.combining {
        Combining::PerAntenna => (0..nr).map(|a| a..a + 1).collect(),
        Combining::Joint => vec![0..nr],
    };
    let mut total = vec![vec![0.0; m]; cb.user_count()];
    for ants in groups {
        let lik: Vec<Vec<f64>> = mpa
            .graph
            .ore_users
            .iter()
            .enumerate()
            .map(|(r, users)| fn_likelihoods(y_slot, channels, cb, users, r, ants.clone(), sigma2))
            .collect();
        let (beliefs, _) = mpa.run(&lik);
        for (acc, b) in total.iter_mut().zip(&beliefs) {
            for (a, v) in acc.iter_mut().zip(b) {
                *a += v;
            }
        }
    }
    Decoded {
        symbols: total.iter().map(|b| argmax(b)).collect(),
        posteriors: total.iter().map(|b| softmax(b)).collect(),
    }
}

/// Message table after decoding one slot on a single antenna.
pub fn mpa_messages(
    y_slot: &[C64],
    channels: &[CMat],
    cb: &Codebook,
    antenna: usize,
    sigma2: f64,
    cfg: &MpaConfig,
) -> Result<MessageTable> {
    check_slot(y_slot, channels, cb)?;
    let graph = factor_graph(cb);
    let mpa = Mpa::new(cb, &graph, cfg);
    let lik: Vec<Vec<f64>> = graph
        .ore_users
        .iter()
        .enumerate()
        .map(|(r, users)| fn_likelihoods(y_slot, channels, cb, users, r, antenna..antenna + 1, sigma2))
        .collect();
    Ok(mpa.run(&lik).1)
}

/// Decodes every slot of a received frame. Returns `N_T × N_u` indices.
pub fn decode_frame(
    rx: &ReceivedFrame,
    channels: &[CMat],
    cb: &Codebook,
    sigma2: f64,
    cfg: &MpaConfig,
) -> Result<Matrix<usize>> {
    let nr = check_channels(channels, cb)?;
    if rx.ore_count() != cb.ore_count() || rx.antenna_count() != nr {
        return Err(Error::Dimension(format!(
            "frame is {}x{} per slot, channels are {}x{nr}",
            rx.ore_count(),
            rx.antenna_count(),
            cb.ore_count()
        )));
    }
    let graph = factor_graph(cb);
    let mpa = Mpa::new(cb, &graph, cfg);
    let rows: Vec<Vec<usize>> = (0..rx.slots())
        .into_par_iter()
        .map(|t| decode_with(&mpa, rx.slot(t), channels, nr, sigma2).symbols)
        .collect();
    let nu = cb.user_count();
    Ok(Matrix::from_fn(rx.slots(), nu, |t, u| rows[t][u]))
}

/// Exhaustive joint detector over all `M^{N_u}` combinations.
///
/// The residual separates over OREs, so each ORE's term is tabulated over
/// its own users first. Ties go to the smallest joint index (user 0 most
/// significant).
pub fn ml_decode(y_slot: &[C64], channels: &[CMat], cb: &Codebook) -> Result<Vec<usize>> {
    let nr = check_slot(y_slot, channels, cb)?;
    let bits = cb.user_count() as u32 * cb.bits_per_symbol();
    if bits > ML_MAX_BITS {
        return Err(Error::EnumerationTooLarge {
            bits,
            limit: ML_MAX_BITS,
        });
    }
    let graph = factor_graph(cb);
    let m = cb.codeword_count();
    let nu = cb.user_count();
    let tables: Vec<Vec<f64>> = graph
        .ore_users
        .iter()
        .enumerate()
        .map(|(r, users)| {
            let mut res: Vec<C64> = (0..nr).map(|a| y_slot[r * nr + a]).collect();
            for &u in users {
                let mut next = Vec::with_capacity(res.len() * m);
                for block in res.chunks(nr) {
                    for sym in 0..m {
                        let c = cb.entry(u, sym, r);
                        next.extend(block.iter().enumerate().map(|(a, e)| e - channels[r][(u, a)] * c));
                    }
                }
                res = next;
            }
            res.chunks(nr).map(|b| b.iter().map(|e| e.norm_sqr()).sum()).collect()
        })
        .collect();
    let total = m.pow(nu as u32);
    let mut digits = vec![0usize; nu];
    let mut best = (f64::INFINITY, 0usize);
    for joint in 0..total {
        let mut cost = 0.0;
        for (r, users) in graph.ore_users.iter().enumerate() {
            let idx = users.iter().fold(0, |acc, &u| acc * m + digits[u]);
            cost += tables[r][idx];
        }
        if cost < best.0 {
            best = (cost, joint);
        }
        for i in (0..nu).rev() {
            digits[i] += 1;
            if digits[i] < m {
                break;
            }
            digits[i] = 0;
        }
    }
    let mut out = vec![0; nu];
    let mut j = best.1;
    for u in (0..nu).rev() {
        out[u] = j % m;
        j /= m;
    }
    Ok(out)
}

/// Fraction of differing symbol positions.
pub fn ser(decoded: &Matrix<usize>, truth: &Matrix<usize>) -> Result<f64> {
    if decoded.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "decoded {:?} vs truth {:?}",
            decoded.shape(),
            truth.shape()
        )));
    }
    let n = decoded.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let wrong = decoded
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / n as f64)
}
