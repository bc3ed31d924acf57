//! Channel estimation from decoded symbols, isolation of the scattered
//! channel, and windowed GAMP imaging with momentum blending.

use std::collections::VecDeque;

use crate::channel::{known_channel, measurement_from_operator, scatter_operator, stack_measurements, IrsPattern, LinkSet};
use crate::error::{Error, Result};
use crate::gamp::{gamp_solve_from, lift_complex, GampConfig, GampOutput, PriorParams};
use crate::linalg::{cholesky_solve, CMat, Matrix, C64, ZERO};
use crate::scene::ScattererField;
use crate::scma::{factor_graph, Codebook, FactorGraph};
use crate::transceiver::ReceivedFrame;

/// Relative pivot below which the symbol Gram matrix counts as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Least-squares channel estimate of one packet.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    /// Per ORE, `N_u × N_R`; rows of users not on the ORE are zero.
    pub channels: Vec<CMat>,
    /// Per ORE: false when the symbol matrix was too degenerate to trust.
    pub usable: Vec<bool>,
    /// Mean error variance of the estimated coefficients, `σ²·diag((SᴴS+τI)⁻¹)`
    /// averaged over usable OREs and users.
    pub error_var: f64,
}

/// Per ORE and antenna, solves `min ‖y_r − S_r h‖²` over the packet's
/// `N_T` slots, where `S_r` holds the codeword entries of the users on
/// ORE `r`. Ill-conditioned systems get a ridge `τ = 1e-6·tr(SᴴS)/d_f` and are flagged.
pub fn estimate_channel(rx: &ReceivedFrame, symbols: &Matrix<usize>, cb: &Codebook) -> Result<ChannelEstimate> {
    if symbols.rows() != rx.slots() || symbols.cols() != cb.user_count() {
        return Err(Error::Dimension(format!(
            "symbols {:?} for a {}-slot frame with {} users",
            symbols.shape(),
            rx.slots(),
            cb.user_count()
        )));
    }
    if rx.ore_count() != cb.ore_count() {
        return Err(Error::Dimension(format!(
            "frame has {} OREs, codebook {}",
            rx.ore_count(),
            cb.ore_count()
        )));
    }
    let graph = factor_graph(cb);
    let (nt, nr, nu) = (rx.slots(), rx.antenna_count(), cb.user_count());
    let mut channels = Vec::with_capacity(cb.ore_count());
    let mut usable = Vec::with_capacity(cb.ore_count());
    let mut var_sum = 0.0;
    let mut var_count = 0usize;
    for (r, users) in graph.ore_users.iter().enumerate() {
        let d = users.len();
        let s = CMat::from_fn(nt, d, |t, j| cb.entry(users[j], symbols[(t, users[j])], r));
        let mut gram = vec![ZERO; d * d];
        for t in 0..nt {
            let row = s.row(t);
            for a in 0..d {
                for b in 0..d {
                    gram[a * d + b] += row[a].conj() * row[b];
                }
            }
        }
        let trace: f64 = (0..d).map(|a| gram[a * d + a].re).sum();
        let ok = nt >= d && trace > 0.0 && min_pivot(&gram, d) > SINGULAR_PIVOT * trace / d as f64;
        let tau = if ok { 0.0 } else { 1e-6 * trace / d as f64 };
        for a in 0..d {
            gram[a * d + a] += C64::new(tau, 0.0);
        }
        let mut h = CMat::zeros(nu, nr);
        let mut solved = ok;
        for ant in 0..nr {
            let mut rhs: Vec<C64> = (0..d)
                .map(|j| (0..nt).map(|t| s[(t, j)].conj() * rx.get(t, r, ant)).sum())
                .collect();
            let mut g = gram.clone();
            if cholesky_solve(&mut g, &mut rhs, d).is_none() {
                solved = false;
                break;
            }
            for (j, &u) in users.iter().enumerate() {
                h[(u, ant)] = rhs[j];
            }
        }
        if solved {
            for j in 0..d {
                let mut e = vec![ZERO; d];
                e[j] = C64::new(1.0, 0.0);
                let mut g = gram.clone();
                if cholesky_solve(&mut g, &mut e, d).is_some() {
                    var_sum += rx.sigma2() * e[j].re;
                    var_count += 1;
                }
            }
        }
        channels.push(h);
        usable.push(solved);
    }
    Ok(ChannelEstimate {
        channels,
        usable,
        error_var: if var_count > 0 { var_sum / var_count as f64 } else { 0.0 },
    })
}

/// Smallest squared Cholesky pivot of a Hermitian matrix (0 if indefinite).
fn min_pivot(gram: &[C64], d: usize) -> f64 {
    let mut a = gram.to_vec();
    let mut min = f64::INFINITY;
    for j in 0..d {
        let mut p = a[j * d + j].re;
        for k in 0..j {
            p -= a[j * d + k].norm_sqr();
        }
        if !(p > 0.0) {
            return 0.0;
        }
        min = min.min(p);
        let p = p.sqrt();
        a[j * d + j] = C64::new(p, 0.0);
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k].conj();
            }
            a[i * d + j] = s / p;
        }
    }
    min
}

/// Removes the known LOS and IRS paths: `Ĥ − H_los − H_irs1·Θ·H_s1`.
pub fn scatter_component(estimate: &CMat, links: &LinkSet, irs: &IrsPattern) -> Result<CMat> {
    estimate.sub(&known_channel(links, irs)?)
}

/// Which (ORE, user) blocks contribute imaging rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OreSelection {
    /// Every user on its first ORE: `N_u·N_R` rows per packet.
    #[default]
    PerUser,
    /// The users of one ORE.
    Single(usize),
    /// Every user on every ORE it occupies.
    All,
}

impl OreSelection {
    /// `(ore, user)` pairs in ORE-major order.
    pub fn pairs(&self, graph: &FactorGraph) -> Result<Vec<(usize, usize)>> {
        let count = graph.ore_users.len();
        let mut pairs: Vec<(usize, usize)> = match *self {
            OreSelection::PerUser => graph
                .user_ores
                .iter()
                .enumerate()
                .filter_map(|(u, o)| o.first().map(|&r| (r, u)))
                .collect(),
            OreSelection::Single(r) if r < count => graph.ore_users[r].iter().map(|&u| (r, u)).collect(),
            OreSelection::Single(r) => return Err(Error::Index(format!("ORE {r} of {count}"))),
            OreSelection::All => graph
                .ore_users
                .iter()
                .enumerate()
                .flat_map(|(r, us)| us.iter().map(move |&u| (r, u)))
                .collect(),
        };
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// One packet's contribution to the imaging system.
#[derive(Debug, Clone)]
pub struct Observation {
    pub packet: usize,
    pub irs: IrsPattern,
    rx: ReceivedFrame,
    symbols: Matrix<usize>,
    ores: Vec<usize>,
    /// Measurement blocks `A(u)` in (ORE, user) order.
    mats: Vec<(usize, usize, CMat)>,
    rows: Vec<Vec<C64>>,
    keep: Vec<bool>,
    error_var: f64,
}

impl Observation {
    /// Estimates channels from `symbols` and forms the scatter rows and
    /// measurement matrices for the selected OREs.
    pub fn new(
        rx: ReceivedFrame,
        symbols: Matrix<usize>,
        irs: IrsPattern,
        links: &[LinkSet],
        cb: &Codebook,
        selection: OreSelection,
    ) -> Result<Self> {
        if links.len() != cb.ore_count() {
            return Err(Error::Dimension(format!(
                "{} link sets for {} OREs",
                links.len(),
                cb.ore_count()
            )));
        }
        let graph = factor_graph(cb);
        let pairs = selection.pairs(&graph)?;
        let mut ores: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        ores.dedup();
        let mut mats = Vec::new();
        for &r in &ores {
            let op = scatter_operator(&links[r], &irs)?;
            for &(_, u) in pairs.iter().filter(|p| p.0 == r) {
                mats.push((r, u, measurement_from_operator(&links[r], &op, u)?));
            }
        }
        let mut obs = Observation {
            packet: irs.packet(),
            irs,
            rx,
            symbols,
            ores,
            mats,
            rows: Vec::new(),
            keep: Vec::new(),
            error_var: 0.0,
        };
        obs.refresh(links, cb)?;
        Ok(obs)
    }

    /// Replaces the symbols used for channel estimation.
    pub fn revise(&mut self, symbols: Matrix<usize>, links: &[LinkSet], cb: &Codebook) -> Result<()> {
        self.symbols = symbols;
        self.refresh(links, cb)
    }

    fn refresh(&mut self, links: &[LinkSet], cb: &Codebook) -> Result<()> {
        let est = estimate_channel(&self.rx, &self.symbols, cb)?;
        let mut scatter = Vec::with_capacity(self.ores.len());
        for &r in &self.ores {
            scatter.push((r, scatter_component(&est.channels[r], &links[r], &self.irs)?));
        }
        self.rows = self
            .mats
            .iter()
            .map(|(r, u, _)| {
                let s = &scatter.iter().find(|(q, _)| q == r).unwrap().1;
                s.row(*u).to_vec()
            })
            .collect();
        self.keep = self.mats.iter().map(|(r, _, _)| est.usable[*r]).collect();
        self.error_var = est.error_var;
        Ok(())
    }

    pub fn rx(&self) -> &ReceivedFrame {
        &self.rx
    }

    pub fn symbols(&self) -> &Matrix<usize> {
        &self.symbols
    }

    pub fn error_var(&self) -> f64 {
        self.error_var
    }

    /// Scatter rows and measurement matrices that passed the estimation check.
    pub fn blocks(&self) -> impl Iterator<Item = (&Vec<C64>, &CMat)> {
        self.rows
            .iter()
            .zip(&self.mats)
            .zip(&self.keep)
            .filter(|(_, k)| **k)
            .map(|((row, (_, _, a)), _)| (row, a))
    }
}

/// Sliding window of the last `n_f` observations plus momentum state.
#[derive(Debug, Clone)]
pub struct SenseWindow {
    capacity: usize,
    entries: VecDeque<Observation>,
    /// Momentum coefficient in `[0, 1)`.
    pub mu: f64,
    /// Previous estimate, blended in with weight `mu`.
    pub previous: Option<ScattererField>,
}

impl SenseWindow {
    pub fn new(capacity: usize, mu: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Parameter("window length must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::Parameter(format!("momentum {mu} outside [0, 1)")));
        }
        Ok(SenseWindow {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            mu,
            previous: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an observation, evicting the oldest when full.
    pub fn push(&mut self, obs: Observation) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(obs);
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.entries.iter()
    }

    pub fn get_mut(&mut self, packet: usize) -> Option<&mut Observation> {
        self.entries.iter_mut().find(|o| o.packet == packet)
    }

    /// Stacked complex system over the whole window.
    pub fn stacked(&self) -> Result<(Vec<C64>, CMat, f64)> {
        let mut rows = Vec::new();
        let mut mats = Vec::new();
        let mut var = 0.0;
        for o in &self.entries {
            var += o.error_var;
            for (r, a) in o.blocks() {
                rows.push(r.clone());
                mats.push(a.clone());
            }
        }
        if mats.is_empty() {
            return Err(Error::Parameter("sensing window holds no usable measurements".into()));
        }
        let (h, a) = stack_measurements(&rows, &mats)?;
        Ok((h, a, var / self.entries.len() as f64))
    }
}

/// Slack on the noise-energy residual target.
pub const DISCREPANCY: f64 = 1.2;

/// Result of one sensing step.
#[derive(Debug, Clone)]
pub struct SenseOutput {
    /// Blended, clamped estimate.
    pub x: ScattererField,
    /// Raw GAMP output before blending.
    pub gamp: GampOutput,
}

/// Stacks the window, solves it with GAMP and blends with the previous
/// estimate: `clamp((1−μ)·x_gamp + μ·x_prev)`.
///
/// The per-component noise variance handed to GAMP is half the mean
/// channel-estimation error variance (real and imaginary parts are split).
/// When `tolerance` in `cfg` is not positive, the residual target is set to
/// `DISCREPANCY` times the expected noise energy of the stacked system.
pub fn sense(window: &SenseWindow, prior: &PriorParams, cfg: &GampConfig, warm: Option<&[f64]>) -> Result<SenseOutput> {
    if window.is_empty() {
        return Err(Error::Parameter("empty sensing window".into()));
    }
    let (h, a, var) = window.stacked()?;
    let (phi, y) = lift_complex(&a, &h)?;
    let sigma_w = 0.5 * var;
    let q = prior.with_noise(sigma_w);
    let mut cfg = cfg.clone();
    if cfg.tolerance <= 0.0 {
        cfg.tolerance = (DISCREPANCY * y.len() as f64 * sigma_w).max(1e-24);
    }
    let out = gamp_solve_from(&phi, &y, &q, &cfg, warm)?;
    let x = blend(out.x(), window.previous.as_ref().map(|p| p.values()), window.mu);
    Ok(SenseOutput { x, gamp: out })
}

/// `clamp((1−μ)·fresh + μ·prev)`; without `prev` the fresh estimate is
/// clamped as is.
pub fn blend(fresh: &[f64], prev: Option<&[f64]>, mu: f64) -> ScattererField {
    let values = match prev {
        Some(p) if mu > 0.0 => fresh.iter().zip(p).map(|(a, b)| (1.0 - mu) * a + mu * b).collect(),
        _ => fresh.to_vec(),
    };
    ScattererField::clamped(values)
}
